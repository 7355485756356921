use super::check::check_gradients;
use super::*;
use crate::rng::Stream;

fn random(shape: &[usize], rng: &mut Stream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Flat index of `(b, c, x, y, z)` in a 5D tensor of `shape`.
fn idx5(shape: &[usize], b: usize, c: usize, x: usize, y: usize, z: usize) -> usize {
    (((b * shape[1] + c) * shape[4] + z) * shape[3] + y) * shape[2] + x
}

/// Nested-loop cross-correlation oracle.
fn conv_oracle(x: &Tensor, w: &Tensor, bias: Option<&[f64]>, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let xs = x.shape();
    let ws = w.shape();
    let (co, ci, k) = (ws[0], ws[1], ws[2]);
    let od: Vec<usize> = (2..5).map(|a| xs[a] + 2 * pad - k + 1).collect();
    let oshape = vec![xs[0], co, od[0], od[1], od[2]];
    let mut out = vec![0.0; oshape.iter().product()];
    for b in 0..xs[0] {
        for o in 0..co {
            for oz in 0..od[2] {
                for oy in 0..od[1] {
                    for ox in 0..od[0] {
                        let mut acc = bias.map_or(0.0, |bb| bb[o]);
                        for c in 0..ci {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let ix = ox as isize + kx as isize - pad as isize;
                                        let iy = oy as isize + ky as isize - pad as isize;
                                        let iz = oz as isize + kz as isize - pad as isize;
                                        if ix < 0 || iy < 0 || iz < 0 {
                                            continue;
                                        }
                                        let (ix, iy, iz) = (ix as usize, iy as usize, iz as usize);
                                        if ix >= xs[2] || iy >= xs[3] || iz >= xs[4] {
                                            continue;
                                        }
                                        let wv = w.data()[(((o * ci + c) * k + kz) * k + ky) * k + kx];
                                        acc += wv * x.data()[idx5(xs, b, c, ix, iy, iz)];
                                    }
                                }
                            }
                        }
                        out[idx5(&oshape, b, o, ox, oy, oz)] = acc;
                    }
                }
            }
        }
    }
    (oshape, out)
}

fn conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, pad: usize) -> Tensor {
    let mut t = Tape::new();
    let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
    let bv = b.map(|b| t.constant(b.clone()));
    let y = t.conv3d(xv, wv, bv, pad).unwrap();
    t.value(y).clone()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "element {i}: {x} vs {y}");
    }
}

#[test]
fn conv_all_ones_valid() {
    let x = Tensor::full(&[1, 1, 3, 3, 3], 1.0);
    let w = Tensor::full(&[1, 1, 3, 3, 3], 1.0);
    let y = conv(&x, &w, None, 0);
    assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
    assert_eq!(y.data(), &[27.0]);
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut rng = Stream::new(1);
    for (pad, shape) in [(1, [2, 3, 4, 5, 3]), (0, [1, 2, 5, 4, 6]), (1, [1, 1, 2, 2, 2])] {
        let x = random(&shape, &mut rng);
        let w = random(&[4, shape[1], 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let y = conv(&x, &w, Some(&b), pad);
        let (oshape, want) = conv_oracle(&x, &w, Some(b.data()), pad);
        assert_eq!(y.shape(), &oshape[..]);
        assert_close(y.data(), &want, 1e-12);
    }
}

#[test]
fn conv_delta_kernel_is_identity() {
    let mut rng = Stream::new(2);
    let x = random(&[1, 1, 4, 5, 6], &mut rng);
    let mut w = Tensor::zeros(&[1, 1, 3, 3, 3]);
    w.data_mut()[13] = 1.0;
    assert_eq!(conv(&x, &w, None, 1).data(), x.data());
}

#[test]
fn conv_output_shape() {
    let x = Tensor::zeros(&[1, 1, 32, 32, 32]);
    let w = Tensor::zeros(&[64, 1, 3, 3, 3]);
    assert_eq!(conv(&x, &w, None, 1).shape(), &[1, 64, 32, 32, 32]);
    let mut t = Tape::new();
    let (xv, wv) = (t.constant(x), t.constant(Tensor::zeros(&[64, 2, 3, 3, 3])));
    assert!(matches!(t.conv3d(xv, wv, None, 1), Err(crate::Error::Shape(_))));
}

#[test]
fn conv_is_linear_in_input() {
    let mut rng = Stream::new(3);
    let x = random(&[1, 2, 4, 4, 4], &mut rng);
    let y = random(&[1, 2, 4, 4, 4], &mut rng);
    let w = random(&[3, 2, 3, 3, 3], &mut rng);
    let (a, b) = (0.7, -1.3);
    let comb = Tensor::new(
        x.shape().to_vec(),
        x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
    )
    .unwrap();
    let lhs = conv(&comb, &w, None, 1);
    let (fx, fy) = (conv(&x, &w, None, 1), conv(&y, &w, None, 1));
    let rhs: Vec<f64> = fx.data().iter().zip(fy.data()).map(|(p, q)| a * p + b * q).collect();
    assert_close(lhs.data(), &rhs, 1e-12);
}

#[test]
fn separable_single_channel_equals_scaled_conv() {
    let mut rng = Stream::new(4);
    let x = random(&[1, 1, 4, 4, 4], &mut rng);
    let dw = random(&[1, 1, 3, 3, 3], &mut rng);
    let pw = Tensor::new(vec![1, 1, 1, 1, 1], vec![-0.6]).unwrap();
    let bias = Tensor::new(vec![1], vec![0.25]).unwrap();
    let mut t = Tape::new();
    let (xv, dv, pv, bv) = (
        t.constant(x.clone()),
        t.constant(dw.clone()),
        t.constant(pw),
        t.constant(bias.clone()),
    );
    let y = t.depthwise_separable_conv3d(xv, dv, pv, bv).unwrap();
    let product = Tensor::new(dw.shape().to_vec(), dw.data().iter().map(|v| -0.6 * v).collect()).unwrap();
    let want = conv(&x, &product, Some(&bias), 1);
    assert_close(t.value(y).data(), want.data(), 1e-12);
}

#[test]
fn separable_identity() {
    let mut rng = Stream::new(5);
    let x = random(&[1, 3, 4, 4, 4], &mut rng);
    let mut dw = Tensor::zeros(&[3, 1, 3, 3, 3]);
    for c in 0..3 {
        dw.data_mut()[c * 27 + 13] = 1.0;
    }
    let mut pw = Tensor::zeros(&[3, 3, 1, 1, 1]);
    for c in 0..3 {
        pw.data_mut()[c * 3 + c] = 1.0;
    }
    let mut t = Tape::new();
    let (xv, dv, pv, bv) = (
        t.constant(x.clone()),
        t.constant(dw),
        t.constant(pw),
        t.constant(Tensor::zeros(&[3])),
    );
    let y = t.depthwise_separable_conv3d(xv, dv, pv, bv).unwrap();
    assert_eq!(t.value(y).data(), x.data());
}

#[test]
fn separable_parameter_count() {
    let (cin, cout) = (64usize, 128usize);
    let separable = Tensor::zeros(&[cin, 1, 3, 3, 3]).len() + Tensor::zeros(&[cout, cin, 1, 1, 1]).len() + cout;
    let dense = Tensor::zeros(&[cout, cin, 3, 3, 3]).len() + cout;
    // 64·27 + 128·64 + 128
    assert_eq!(separable, 10_048);
    assert_eq!(dense, 221_312);
}

#[test]
fn maxpool_examples() {
    let x = Tensor::new(vec![1, 1, 2, 2, 2], vec![3.0, 7.0, 1.0, 0.0, -2.0, 5.0, 6.0, 4.0]).unwrap();
    let mut t = Tape::new();
    let xv = t.leaf(x);
    let y = t.maxpool3d(xv).unwrap();
    assert_eq!(t.value(y).data(), &[7.0]);
    assert_eq!(t.pool_indices(y).unwrap(), &[1]);

    let mut t = Tape::new();
    let xv = t.leaf(Tensor::full(&[1, 1, 4, 2, 2], 1.5));
    let y = t.maxpool3d(xv).unwrap();
    assert_eq!(t.value(y).data(), &[1.5, 1.5]);
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    let gx = g.wrt(xv).unwrap();
    // first element of each window: (0,0,0) and (2,0,0)
    let mut want = vec![0.0; 16];
    want[0] = 1.0;
    want[2] = 1.0;
    assert_eq!(gx, &want[..]);

    let mut t = Tape::new();
    let xv = t.constant(Tensor::zeros(&[1, 1, 32, 32, 32]));
    let y = t.maxpool3d(xv).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 1, 16, 16, 16]);
    let odd = t.constant(Tensor::zeros(&[1, 1, 3, 2, 2]));
    assert!(t.maxpool3d(odd).is_err());
}

#[test]
fn transposed_single_site() {
    let mut rng = Stream::new(6);
    let w = random(&[1, 1, 2, 2, 2], &mut rng);
    let mut t = Tape::new();
    let xv = t.constant(Tensor::new(vec![1, 1, 1, 1, 1], vec![2.5]).unwrap());
    let wv = t.constant(w.clone());
    let y = t.conv_transpose3d(xv, wv, None).unwrap();
    let want: Vec<f64> = w.data().iter().map(|k| 2.5 * k).collect();
    assert_eq!(t.value(y).shape(), &[1, 1, 2, 2, 2]);
    assert_close(t.value(y).data(), &want, 1e-15);
}

/// Kernel-2 stride-2 convolution `[cout_big → cin_small]` that is the adjoint
/// of a transposed convolution with weight `[cin, cout, 2, 2, 2]`.
fn strided_conv_oracle(z: &Tensor, w: &Tensor) -> Tensor {
    let zs = z.shape();
    let (cin, cout) = (w.shape()[0], w.shape()[1]);
    let od = [zs[2] / 2, zs[3] / 2, zs[4] / 2];
    let oshape = vec![zs[0], cin, od[0], od[1], od[2]];
    let mut out = vec![0.0; oshape.iter().product()];
    for b in 0..zs[0] {
        for ci in 0..cin {
            for x in 0..od[0] {
                for y in 0..od[1] {
                    for zz in 0..od[2] {
                        let mut acc = 0.0;
                        for co in 0..cout {
                            for c in 0..2 {
                                for bb in 0..2 {
                                    for a in 0..2 {
                                        let wv = w.data()[(ci * cout + co) * 8 + a + 2 * bb + 4 * c];
                                        acc += wv * z.data()[idx5(zs, b, co, 2 * x + a, 2 * y + bb, 2 * zz + c)];
                                    }
                                }
                            }
                        }
                        out[idx5(&oshape, b, ci, x, y, zz)] = acc;
                    }
                }
            }
        }
    }
    Tensor::new(oshape, out).unwrap()
}

#[test]
fn transposed_is_adjoint_of_strided_conv() {
    let mut rng = Stream::new(7);
    for _ in 0..5 {
        let x = random(&[1, 3, 2, 3, 2], &mut rng);
        let w = random(&[3, 2, 2, 2, 2], &mut rng);
        let y = random(&[1, 2, 4, 6, 4], &mut rng);
        let mut t = Tape::new();
        let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
        let up = t.conv_transpose3d(xv, wv, None).unwrap();
        let lhs: f64 = t.value(up).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let down = strided_conv_oracle(&y, &w);
        let rhs: f64 = down.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn transposed_shape() {
    let mut t = Tape::new();
    let xv = t.constant(Tensor::zeros(&[1, 256, 8, 8, 8]));
    let wv = t.constant(Tensor::zeros(&[256, 128, 2, 2, 2]));
    let bv = t.constant(Tensor::zeros(&[128]));
    let y = t.conv_transpose3d(xv, wv, Some(bv)).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 128, 16, 16, 16]);
}

#[test]
fn relu_and_sigmoid() {
    let mut t = Tape::new();
    let xv = t.leaf(Tensor::new(vec![3], vec![-1.0, 2.0, 0.0]).unwrap());
    let r = t.relu(xv);
    assert_eq!(t.value(r).data(), &[0.0, 2.0, 0.0]);
    let s = t.sum(r);
    assert_eq!(t.backward(s).unwrap().wrt(xv).unwrap(), &[0.0, 1.0, 0.0]);

    let mut t = Tape::new();
    let xv = t.leaf(Tensor::scalar(0.0));
    let s = t.sigmoid(xv);
    assert_eq!(t.value(s).data(), &[0.5]);
    assert_eq!(t.backward(s).unwrap().wrt(xv).unwrap(), &[0.25]);
}

fn channel_moments(t: &Tensor) -> Vec<(f64, f64)> {
    let (b, c, d) = t.dims5().unwrap();
    let vol = d[0] * d[1] * d[2];
    (0..c)
        .map(|ch| {
            let vals: Vec<f64> = (0..b).flat_map(|bb| t.data()[(bb * c + ch) * vol..][..vol].to_vec()).collect();
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            (m, vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
        })
        .collect()
}

#[test]
fn batchnorm_standardizes() {
    let mut rng = Stream::new(8);
    let mut x = random(&[2, 3, 4, 4, 4], &mut rng);
    for v in x.data_mut() {
        *v = 300.0 * *v + 7.0;
    }
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let g = t.constant(Tensor::full(&[3], 1.0));
    let b = t.constant(Tensor::zeros(&[3]));
    let (y, stats) = t.batch_norm_train(xv, g, b, 1e-5).unwrap();
    for (m, v) in channel_moments(t.value(y)) {
        assert!(m.abs() < 1e-8);
        assert!((v - 1.0).abs() < 1e-8);
    }
    // Unit-variance input: the output variance is v/(v + ε) exactly.
    let x = random(&[1, 2, 4, 4, 4], &mut rng);
    let xv = t.constant(x);
    let g2 = t.constant(Tensor::full(&[2], 1.0));
    let b2 = t.constant(Tensor::zeros(&[2]));
    let (y, stats2) = t.batch_norm_train(xv, g2, b2, 1e-5).unwrap();
    for ((m, v), bv) in channel_moments(t.value(y)).into_iter().zip(&stats2.var) {
        assert!(m.abs() < 1e-12);
        assert!((v - bv / (bv + 1e-5)).abs() < 1e-12);
    }
    assert_eq!(stats.count, 128);
}

#[test]
fn batchnorm_on_standardized_input_is_near_identity() {
    let mut rng = Stream::new(9);
    let x = random(&[1, 2, 4, 4, 4], &mut rng);
    let mut t = Tape::new();
    let xv = t.constant(x);
    let (g, b) = (t.constant(Tensor::full(&[2], 1.0)), t.constant(Tensor::zeros(&[2])));
    let (y, _) = t.batch_norm_train(xv, g, b, 1e-5).unwrap();
    let yv = t.constant(t.value(y).clone());
    let (y2, _) = t.batch_norm_train(yv, g, b, 1e-5).unwrap();
    assert_close(t.value(y2).data(), t.value(y).data(), 1e-4);
}

#[test]
fn batchnorm_eval_uses_given_stats() {
    let mut t = Tape::new();
    let xv = t.constant(Tensor::new(vec![1, 1, 1, 1, 2], vec![1.0, 3.0]).unwrap());
    let (g, b) = (t.constant(Tensor::full(&[1], 2.0)), t.constant(Tensor::full(&[1], 0.5)));
    let y = t.batch_norm_eval(xv, g, b, &[1.0], &[4.0], 0.0).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, 2.5]);
}

#[test]
fn dropout_modes() {
    let mut rng = Stream::new(10);
    let mut t = Tape::new();
    let xv = t.constant(Tensor::full(&[1, 1, 2, 2, 2], 3.0));
    assert_eq!(t.dropout(xv, 0.5, false, &mut rng), xv);
    assert_eq!(t.dropout(xv, 0.0, true, &mut rng), xv);
    let y = t.dropout(xv, 0.5, true, &mut rng);
    assert!(t.value(y).data().iter().all(|&v| v == 0.0 || v == 6.0));
}

#[test]
fn dropout_preserves_expectation() {
    let mut rng = Stream::new(11);
    let mut t = Tape::new();
    let xv = t.constant(Tensor::full(&[10_000], 2.0));
    let y = t.dropout(xv, 0.5, true, &mut rng);
    let mean = t.value(y).data().iter().sum::<f64>() / 10_000.0;
    assert!((mean - 2.0).abs() < 0.04, "{mean}");
}

#[test]
fn concat_and_split() {
    let mut rng = Stream::new(12);
    let a = random(&[1, 2, 2, 2, 2], &mut rng);
    let b = random(&[1, 3, 2, 2, 2], &mut rng);
    let mut t = Tape::new();
    let (av, bv) = (t.leaf(a.clone()), t.leaf(b.clone()));
    let c = t.concat_channels(av, bv).unwrap();
    assert_eq!(t.value(c).shape(), &[1, 5, 2, 2, 2]);
    assert_eq!(&t.value(c).data()[..16], a.data());
    assert_eq!(&t.value(c).data()[16..], b.data());
    let big = t.constant(Tensor::zeros(&[1, 64, 2, 2, 2]));
    let cc = t.concat_channels(big, big).unwrap();
    assert_eq!(t.value(cc).shape(), &[1, 128, 2, 2, 2]);
    let bad = t.constant(Tensor::zeros(&[1, 1, 2, 2, 4]));
    assert!(t.concat_channels(av, bad).is_err());
}

#[test]
fn mse_examples() {
    let mut rng = Stream::new(13);
    let p = random(&[1, 1, 3, 3, 3], &mut rng);
    let mut t = Tape::new();
    let pv = t.leaf(p.clone());
    let same = t.mse_masked(pv, p.data(), None).unwrap();
    assert_eq!(t.value(same).data(), &[0.0]);
    let shifted: Vec<f64> = p.data().iter().map(|v| v - 0.3).collect();
    let l = t.mse_masked(pv, &shifted, None).unwrap();
    assert!((t.value(l).data()[0] - 0.09).abs() < 1e-15);

    let target: Vec<f64> = (0..27).map(|_| rng.uniform()).collect();
    let mask: Vec<bool> = (0..27).map(|i| i % 3 != 1).collect();
    let l = t.mse_masked(pv, &target, Some(&mask)).unwrap();
    let (mut sum, mut n) = (0.0, 0);
    for i in 0..27 {
        if mask[i] {
            sum += (p.data()[i] - target[i]).powi(2);
            n += 1;
        }
    }
    assert!((t.value(l).data()[0] - sum / n as f64).abs() < 1e-15);
    let g = t.backward(l).unwrap();
    assert_eq!(g.wrt(pv).unwrap()[1], 0.0);
    assert!(t.mse_masked(pv, &target, Some(&[false; 27])).is_err());
}

#[test]
fn backward_basics() {
    let mut rng = Stream::new(14);
    let x = random(&[2, 3], &mut rng);
    let mut t = Tape::new();
    let xv = t.leaf(x.clone());
    let s = t.sum(xv);
    assert_eq!(t.backward(s).unwrap().wrt(xv).unwrap(), &[1.0; 6]);
    let sq = t.mul(xv, xv).unwrap();
    let s2 = t.sum(sq);
    let g = t.backward(s2).unwrap();
    let want: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(g.wrt(xv).unwrap(), &want[..]);
    assert!(matches!(t.backward(sq), Err(crate::Error::Shape(_))));
}

#[test]
fn param_gradients_accumulate_until_zeroed() {
    let mut rng = Stream::new(15);
    let mut store = ParamStore::new();
    let w = store.add("w", random(&[1, 1, 3, 3, 3], &mut rng), true);
    let frozen = store.add("frozen", Tensor::full(&[1], 0.5), false);
    let x = random(&[1, 1, 4, 4, 4], &mut rng);
    let mut t = Tape::new();
    let xv = t.constant(x);
    let wv = t.param(&store, w);
    let bv = t.param(&store, frozen);
    let y = t.conv3d(xv, wv, Some(bv), 1).unwrap();
    let y2 = t.mul(y, y).unwrap();
    let loss = t.sum(y2);
    t.backward_into(loss, &mut store).unwrap();
    let once = store.get(w).grad.data().to_vec();
    assert!(once.iter().any(|&g| g != 0.0));
    t.backward_into(loss, &mut store).unwrap();
    let twice = store.get(w).grad.data();
    for (a, b) in once.iter().zip(twice) {
        assert_eq!(2.0 * a, *b);
    }
    assert_eq!(store.get(frozen).grad.data(), &[0.0]);
    store.zero_grads(&[w]);
    assert!(store.get(w).grad.data().iter().all(|&g| g == 0.0));
}

#[test]
fn sgd_update_rule() {
    let step = |wd: f64| {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::scalar(1.0), true);
        store.get_mut(id).grad.data_mut()[0] = 0.5;
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: wd,
        };
        store.sgd_step(&[id], &cfg);
        store.get(id).value.data()[0]
    };
    assert!((step(0.0) - 0.95).abs() < 1e-15);
    assert!((step(1e-5) - 0.949999).abs() < 1e-15);

    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::scalar(0.0), true);
    let cfg = OptimizerConfig {
        learning_rate: 0.1,
        momentum: 0.9,
        weight_decay: 0.0,
    };
    store.get_mut(id).grad.data_mut()[0] = 1.0;
    store.sgd_step(&[id], &cfg);
    assert_eq!(store.get(id).velocity.data()[0], 1.0);
    assert!((store.get(id).value.data()[0] + 0.1).abs() < 1e-15);
    store.sgd_step(&[id], &cfg);
    assert!((store.get(id).velocity.data()[0] - 1.9).abs() < 1e-15);
    assert!((store.get(id).value.data()[0] + 0.29).abs() < 1e-15);
}

#[test]
fn optimizer_config_validation() {
    assert!(OptimizerConfig::default().validate().is_ok());
    let bad = OptimizerConfig {
        momentum: 1.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn kaiming_statistics() {
    let fan_in = 54;
    let t = kaiming_init(&[100_000], fan_in, &mut Stream::new(16));
    let n = t.len() as f64;
    let m = t.data().iter().sum::<f64>() / n;
    let v = t.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let want = 2.0 / fan_in as f64;
    assert!((v - want).abs() / want < 0.05);
    assert_eq!(
        kaiming_init(&[10], 3, &mut Stream::new(1)),
        kaiming_init(&[10], 3, &mut Stream::new(1))
    );
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Stream::new(17);
    let mut store = ParamStore::new();
    store.add("a.weight", random(&[2, 1, 3, 3, 3], &mut rng), true);
    store.add("a.bias", random(&[2], &mut rng), true);
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&store, &path).unwrap();
    let mut other = store.clone();
    for (_, p) in other.clone().iter() {
        let _ = p;
    }
    for id in other.ids().collect::<Vec<_>>() {
        other.get_mut(id).value.data_mut().fill(0.0);
    }
    load_checkpoint(&mut other, &path).unwrap();
    for ((_, a), (_, b)) in store.iter().zip(other.iter()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    let mut wrong = ParamStore::new();
    wrong.add("x", Tensor::zeros(&[2]), true);
    wrong.add("y", Tensor::zeros(&[2]), true);
    assert!(load_checkpoint(&mut wrong, &path).is_err());
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = Stream::new(18);
        let x = random(&[1, 2, 6, 6, 6], &mut rng);
        let w = random(&[3, 2, 3, 3, 3], &mut rng);
        let mut t = Tape::new();
        let (xv, wv) = (t.constant(x), t.constant(w));
        let y = t.conv3d(xv, wv, None, 1).unwrap();
        let y = t.dropout(y, 0.5, true, &mut rng);
        t.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

// Finite-difference checks on a few instances per op; the acceptance suite
// runs the full sweep.

#[test]
fn gradcheck_conv_and_up() {
    let mut rng = Stream::new(19);
    for pad in [0, 1] {
        let x = random(&[1, 2, 3, 4, 3], &mut rng);
        let w = random(&[2, 2, 3, 3, 3], &mut rng);
        let b = random(&[2], &mut rng);
        let r = random(&[1, 2, 3 - 2 + 2 * pad, 4 - 2 + 2 * pad, 3 - 2 + 2 * pad], &mut rng);
        let rep = check_gradients(&[x, w, b], 1e-4, 1e-8, |t, v| {
            let y = t.conv3d(v[0], v[1], Some(v[2]), pad)?;
            let rv = t.constant(r.clone());
            let p = t.mul(y, rv)?;
            Ok(t.sum(p))
        })
        .unwrap();
        assert!(rep.max_rel_err < 1e-5, "{rep:?}");
    }
    let x = random(&[1, 2, 2, 1, 2], &mut rng);
    let w = random(&[2, 3, 2, 2, 2], &mut rng);
    let b = random(&[3], &mut rng);
    let r = random(&[1, 3, 4, 2, 4], &mut rng);
    let rep = check_gradients(&[x, w, b], 1e-4, 1e-8, |t, v| {
        let y = t.conv_transpose3d(v[0], v[1], Some(v[2]))?;
        let rv = t.constant(r.clone());
        let p = t.mul(y, rv)?;
        Ok(t.sum(p))
    })
    .unwrap();
    assert!(rep.max_rel_err < 1e-5, "{rep:?}");
}

#[test]
fn gradcheck_batchnorm() {
    let mut rng = Stream::new(20);
    let x = random(&[2, 3, 4, 4, 4], &mut rng);
    let g = random(&[3], &mut rng);
    let b = random(&[3], &mut rng);
    let r = random(&[2, 3, 4, 4, 4], &mut rng);
    let rep = check_gradients(&[x, g, b], 1e-4, 1e-8, |t, v| {
        let (y, _) = t.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
        let rv = t.constant(r.clone());
        let p = t.mul(y, rv)?;
        Ok(t.sum(p))
    })
    .unwrap();
    assert!(rep.max_rel_err < 1e-5, "{rep:?}");
}

#[test]
fn kink_pattern_tracks_relu_signs_and_argmax() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![1, 1, 2, 2, 2], vec![-1.0, 2.0, 0.0, 3.0, -4.0, 5.0, 6.0, -7.0]).unwrap());
    let r = t.relu(x);
    t.maxpool3d(r).unwrap();
    assert_eq!(t.kink_pattern(), vec![0, 1, 0, 1, 0, 1, 1, 0, 6]);
}
