use spatialfdr_core::ncut::{build_weight_graph, soft_ncut_loss, NcutParams, SparseWeightGraph};
use spatialfdr_core::rng::Stream;
use spatialfdr_core::tensor::check::rel_err;
use spatialfdr_core::tensor::{Tape, Tensor};
use spatialfdr_core::volume::{pad_to, z_to_pvalue};
use spatialfdr_core::wnet::{parameter_count, Mode, WnetConfig, WnetModel};
use spatialfdr_core::Volume3D;

fn micro_config() -> WnetConfig {
    WnetConfig {
        channels: [2, 3, 4],
        padded_dims: [8; 3],
        seed: 11,
        ..WnetConfig::default()
    }
}

fn noise(dims: [usize; 3], seed: u64) -> Volume3D {
    let mut s = Stream::new(seed);
    let n = dims.iter().product();
    Volume3D::new(dims, (0..n).map(|_| s.normal()).collect()).unwrap()
}

/// Soft Ncut of the first net plus reconstruction error of both, with the
/// dropout stream reset so every evaluation sees the same mask.
fn composite(model: &mut WnetModel, rng: &Stream, input: &Tensor, target: &[f64], g: &SparseWeightGraph) -> (Tape, spatialfdr_core::tensor::Var) {
    model.set_dropout_stream(rng.clone());
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let (prob, recon) = model.forward_w(&mut tape, x, Mode::Train).unwrap();
    let a = soft_ncut_loss(&mut tape, prob, g).unwrap();
    let b = tape.mse_masked(recon, target, None).unwrap();
    let loss = tape.add(a, b).unwrap();
    (tape, loss)
}

#[test]
fn micro_wnet_gradients_match_finite_differences() {
    let x = noise([8; 3], 21);
    let p = z_to_pvalue(&x).unwrap();
    let g = build_weight_graph(&x, NcutParams::default()).unwrap();
    let mut model = WnetModel::new(micro_config()).unwrap();
    let (input, _) = model.input_tensor(&x).unwrap();
    let rng = model.dropout_stream();

    let (tape, loss) = composite(&mut model, &rng, &input, p.data(), &g);
    let pattern = tape.kink_pattern();
    model.params_mut().zero_all_grads();
    tape.backward_into(loss, model.params_mut()).unwrap();
    let analytic = model.params().clone();

    // Entries whose ±h perturbation flips a ReLU or max-pool branch straddle
    // a kink; central differences are meaningless there and they are skipped.
    let h = 1e-5;
    let mut worst = (0.0, String::new(), 0.0, 0.0);
    let (mut checked, mut straddling) = (0, 0);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        if !model.params().get(id).trainable {
            continue;
        }
        for j in 0..model.params().get(id).value.len() {
            let orig = model.params().get(id).value.data()[j];
            let mut at = |delta: f64| {
                model.params_mut().get_mut(id).value.data_mut()[j] = orig + delta;
                let (t, l) = composite(&mut model, &rng, &input, p.data(), &g);
                (t.value(l).data()[0], t.kink_pattern() == pattern)
            };
            let (up, smooth_up) = at(h);
            let (down, smooth_down) = at(-h);
            model.params_mut().get_mut(id).value.data_mut()[j] = orig;
            if !(smooth_up && smooth_down) {
                straddling += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).grad.data()[j];
            let e = rel_err(a, numeric, 1e-6);
            checked += 1;
            if e > worst.0 {
                worst = (e, format!("{}[{j}]", analytic.get(id).name), a, numeric);
            }
        }
    }
    let total = parameter_count([2, 3, 4]);
    assert_eq!(checked + straddling, total);
    eprintln!("{checked} entries checked, {straddling} straddle a kink");
    assert!(checked * 10 >= total * 9, "only {checked} of {total} entries away from kinks");
    assert!(worst.0 <= 1e-4, "worst relative error {worst:?} over {checked} entries");
}

#[test]
fn step_a_leaves_second_net_untouched() {
    let x = noise([8; 3], 31);
    let p = z_to_pvalue(&x).unwrap();
    let g = build_weight_graph(&x, NcutParams::default()).unwrap();
    let mut model = WnetModel::new(micro_config()).unwrap();
    let (input, _) = model.input_tensor(&x).unwrap();

    let before: Vec<Vec<f64>> = model.u2_params().iter().map(|&id| model.params().get(id).value.data().to_vec()).collect();
    let mut tape = Tape::new();
    let xv = tape.constant(input);
    let prob = model.forward_u1(&mut tape, xv, Mode::Train).unwrap();
    let loss = soft_ncut_loss(&mut tape, prob, &g).unwrap();
    tape.backward_into(loss, model.params_mut()).unwrap();
    let theta1 = model.u1_params().to_vec();
    model.params_mut().sgd_step(&theta1, &Default::default());
    for (k, &id) in model.u2_params().iter().enumerate() {
        let now = model.params().get(id);
        assert_eq!(now.value.data(), &before[k][..], "{} moved", now.name);
        assert!(now.grad.data().iter().all(|&v| v == 0.0));
    }
    let _ = p;
}

#[test]
fn parameter_count_matches_hand_count() {
    // channels (2,4,8), one input channel, per U-net:
    let down_top = (27 * 2 + 2 + 4) + (27 * 4 + 2 + 4); // 60 + 114
    let down_mid = (27 * 2 + 2 * 4 + 4 + 8) + (27 * 4 + 16 + 4 + 8); // 74 + 136
    let bottom = (27 * 4 + 32 + 8 + 16) + (27 * 8 + 64 + 8 + 16); // 164 + 304
    let up_to_mid = 8 * 8 * 4 + 4; // 260
    let up_mid = (27 * 8 + 32 + 4 + 8) + (27 * 4 + 16 + 4 + 8); // 260 + 136
    let up_to_top = 8 * 4 * 2 + 2; // 66
    let up_top = (27 * 4 * 2 + 2 + 4) + (27 * 2 * 2 + 2 + 4); // 222 + 114
    let head = 2 + 1;
    let one = down_top + down_mid + bottom + up_to_mid + up_mid + up_to_top + up_top + head;
    assert_eq!(one, 1913);
    assert_eq!(parameter_count([2, 4, 8]), 2 * one);
    let cfg = WnetConfig {
        channels: [2, 4, 8],
        padded_dims: [8; 3],
        ..WnetConfig::default()
    };
    assert_eq!(WnetModel::new(cfg).unwrap().parameter_count(), 2 * one);
    let desk = WnetModel::new(WnetConfig::default()).unwrap();
    assert_eq!(desk.parameter_count(), parameter_count([8, 16, 32]));
    assert_eq!(desk.conv_pair_count(), 10);
}

#[test]
fn different_seeds_give_different_maps() {
    let x = noise([8; 3], 41);
    let mut maps = Vec::new();
    for seed in [1, 2] {
        let mut model = WnetModel::new(WnetConfig { seed, ..micro_config() }).unwrap();
        let (input, _) = model.input_tensor(&x).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(input);
        let prob = model.forward_u1(&mut tape, xv, Mode::Train).unwrap();
        maps.push(tape.value(prob).data().to_vec());
    }
    let diff: f64 = maps[0].iter().zip(&maps[1]).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(diff.sqrt() > 1e-3);
}

#[test]
fn prediction_ignores_padding_fill() {
    let x = noise([6, 6, 6], 51);
    let p = z_to_pvalue(&x).unwrap();
    let cfg = WnetConfig {
        max_epochs: 2,
        ..micro_config()
    };
    let mut results = Vec::new();
    for fill in [0.0, 5.0] {
        let mut model = WnetModel::new(cfg.clone()).unwrap();
        let padded = pad_to(&x, [8; 3], fill).unwrap();
        let g = build_weight_graph(&padded, NcutParams::default()).unwrap();
        model.train(&x, &p, &g).unwrap();
        results.push(model.predict_prob(&x).unwrap());
    }
    assert_eq!(results[0], results[1]);
}
