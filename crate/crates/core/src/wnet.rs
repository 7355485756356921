//! Two cascaded three-level U-nets trained by alternating a soft
//! normalized-cut objective (first net) and p-value reconstruction (both).
//!
//! Layout of one U-net with channels `(c1, c2, c3)`:
//!
//! ```text
//! top    conv pair (regular)     c_in -> c1 ----------------------- skip ---+
//!        maxpool                                                          |
//! mid    conv pair (separable)   c1 -> c2 ---------- skip ---+             |
//!        dropout, maxpool                                   |             |
//! bottom conv pair (separable)   c2 -> c3                   |             |
//!        transposed conv         c3 -> c2, concat <---------+             |
//! mid    conv pair (separable)   2·c2 -> c2                               |
//!        transposed conv         c2 -> c1, concat <-----------------------+
//! top    conv pair (regular)     2·c1 -> c1
//! head   1×1×1 conv c1 -> 1, sigmoid
//! ```
//!
//! Every 3×3×3 convolution is followed by ReLU then batch normalization.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ncut::{soft_ncut_loss, NcutParams, SparseWeightGraph};
use crate::rng::Stream;
use crate::tensor::{
    kaiming_init, load_checkpoint, save_checkpoint, OptimizerConfig, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::volume::{crop_to, pad_to, Volume3D};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub patience: usize,
    /// An epoch improves a loss when it beats the best so far by this
    /// fraction of the best.
    pub min_rel_improvement: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 3,
            min_rel_improvement: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WnetConfig {
    /// Resolution levels per U-net. Only 3 is supported.
    pub levels: usize,
    /// Feature channels at the top, middle and bottom level.
    pub channels: [usize; 3],
    pub dropout_rate: f64,
    pub padded_dims: [usize; 3],
    pub max_epochs: usize,
    pub early_stop: EarlyStop,
    pub optimizer: OptimizerConfig,
    pub ncut: NcutParams,
    pub seed: u64,
}

impl Default for WnetConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            channels: Self::DESK_CHANNELS,
            dropout_rate: 0.5,
            padded_dims: [32; 3],
            max_epochs: 25,
            early_stop: EarlyStop::default(),
            optimizer: OptimizerConfig::default(),
            ncut: NcutParams::default(),
            seed: 0,
        }
    }
}

impl WnetConfig {
    pub const DESK_CHANNELS: [usize; 3] = [8, 16, 32];
    pub const FULL_SCALE_CHANNELS: [usize; 3] = [64, 128, 256];

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.levels != 3 {
            return bad(format!("only 3 levels are supported, got {}", self.levels));
        }
        let [c1, c2, c3] = self.channels;
        if c1 == 0 || c1 >= c2 || c2 >= c3 {
            return bad(format!("channels must be positive and strictly increasing, got {:?}", self.channels));
        }
        if self.padded_dims.iter().any(|&d| d == 0 || d % 4 != 0) {
            return bad(format!("padded dims must be positive multiples of 4, got {:?}", self.padded_dims));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.early_stop.patience == 0 || !(self.early_stop.min_rel_improvement >= 0.0) {
            return bad("early stop needs patience ≥ 1 and a non-negative tolerance".into());
        }
        self.optimizer.validate()
    }
}

/// Smallest padded grid for a volume of `dims`: each axis rounded up to a
/// multiple of 4 (30 → 32).
pub fn padded_dims_for(dims: [usize; 3]) -> [usize; 3] {
    dims.map(|d| d.max(1).div_ceil(4) * 4)
}

/// Closed-form trainable parameter count of the whole W-net.
///
/// Counting each convolution together with its batch normalization (γ, β):
/// `conv(a,b) = 27ab + 3b` for a regular convolution, `sep(a,b) = 27a + ab + 3b`
/// for a depthwise-separable one, and `up(a,b) = 8ab + b` for a transposed
/// convolution. One U-net with a single input channel has
///
/// ```text
/// conv(1,c1) + conv(c1,c1) + sep(c1,c2) + sep(c2,c2) + sep(c2,c3) + sep(c3,c3)
///   + up(c3,c2) + sep(2c2,c2) + sep(c2,c2) + up(c2,c1) + conv(2c1,c1) + conv(c1,c1)
///   + c1 + 1
/// ```
///
/// and the W-net has twice that.
pub fn parameter_count(channels: [usize; 3]) -> usize {
    let [c1, c2, c3] = channels;
    let conv = |a: usize, b: usize| 27 * a * b + b + 2 * b;
    let sep = |a: usize, b: usize| 27 * a + a * b + b + 2 * b;
    let up = |a: usize, b: usize| 8 * a * b + b;
    let unet = conv(1, c1)
        + conv(c1, c1)
        + sep(c1, c2)
        + sep(c2, c2)
        + sep(c2, c3)
        + sep(c3, c3)
        + up(c3, c2)
        + sep(2 * c2, c2)
        + sep(c2, c2)
        + up(c2, c1)
        + conv(2 * c1, c1)
        + conv(c1, c1)
        + c1
        + 1;
    2 * unet
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
enum ConvKind {
    Regular { weight: ParamId, bias: ParamId },
    Separable { depthwise: ParamId, pointwise: ParamId, bias: ParamId },
}

/// One 3×3×3 convolution followed by ReLU and batch normalization.
#[derive(Debug, Clone, Copy)]
struct ConvUnit {
    conv: ConvKind,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct ConvPair([ConvUnit; 2]);

#[derive(Debug, Clone, Copy)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct UNet {
    down_top: ConvPair,
    down_mid: ConvPair,
    bottom: ConvPair,
    up_to_mid: Linear,
    up_mid: ConvPair,
    up_to_top: Linear,
    up_top: ConvPair,
    head: Linear,
    trainable: Vec<ParamId>,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut Stream,
    prefix: String,
    trainable: Vec<ParamId>,
}

impl Builder<'_> {
    fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let id = self.store.add(
            format!("{}.{name}", self.prefix),
            kaiming_init(shape, fan_in, self.rng),
            true,
        );
        self.trainable.push(id);
        id
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f64, trainable: bool) -> ParamId {
        let id = self.store.add(format!("{}.{name}", self.prefix), Tensor::full(shape, value), trainable);
        if trainable {
            self.trainable.push(id);
        }
        id
    }

    fn unit(&mut self, name: &str, cin: usize, cout: usize, separable: bool) -> ConvUnit {
        let conv = if separable {
            ConvKind::Separable {
                depthwise: self.weight(&format!("{name}.depthwise"), &[cin, 1, 3, 3, 3], 27),
                pointwise: self.weight(&format!("{name}.pointwise"), &[cout, cin, 1, 1, 1], cin),
                bias: self.constant(&format!("{name}.bias"), &[cout], 0.0, true),
            }
        } else {
            ConvKind::Regular {
                weight: self.weight(&format!("{name}.weight"), &[cout, cin, 3, 3, 3], cin * 27),
                bias: self.constant(&format!("{name}.bias"), &[cout], 0.0, true),
            }
        };
        ConvUnit {
            conv,
            gamma: self.constant(&format!("{name}.bn.gamma"), &[cout], 1.0, true),
            beta: self.constant(&format!("{name}.bn.beta"), &[cout], 0.0, true),
            running_mean: self.constant(&format!("{name}.bn.running_mean"), &[cout], 0.0, false),
            running_var: self.constant(&format!("{name}.bn.running_var"), &[cout], 1.0, false),
        }
    }

    fn pair(&mut self, name: &str, cin: usize, cout: usize, separable: bool) -> ConvPair {
        ConvPair([
            self.unit(&format!("{name}.0"), cin, cout, separable),
            self.unit(&format!("{name}.1"), cout, cout, separable),
        ])
    }

    fn up(&mut self, name: &str, cin: usize, cout: usize) -> Linear {
        Linear {
            weight: self.weight(&format!("{name}.weight"), &[cin, cout, 2, 2, 2], cin),
            bias: self.constant(&format!("{name}.bias"), &[cout], 0.0, true),
        }
    }

    fn unet(mut self, channels: [usize; 3]) -> UNet {
        let [c1, c2, c3] = channels;
        let down_top = self.pair("down_top", 1, c1, false);
        let down_mid = self.pair("down_mid", c1, c2, true);
        let bottom = self.pair("bottom", c2, c3, true);
        let up_to_mid = self.up("up_to_mid", c3, c2);
        let up_mid = self.pair("up_mid", 2 * c2, c2, true);
        let up_to_top = self.up("up_to_top", c2, c1);
        let up_top = self.pair("up_top", 2 * c1, c1, false);
        let head = Linear {
            weight: self.weight("head.weight", &[1, c1, 1, 1, 1], c1),
            bias: self.constant("head.bias", &[1], 0.0, true),
        };
        UNet {
            down_top,
            down_mid,
            bottom,
            up_to_mid,
            up_mid,
            up_to_top,
            up_top,
            head,
            trainable: self.trainable,
        }
    }
}

/// Per-forward state: dropout randomness and whether batch statistics are
/// folded into the running estimates.
struct Pass<'a> {
    mode: Mode,
    rng: Option<&'a mut Stream>,
    updates: Vec<(ConvUnit, Vec<f64>, Vec<f64>)>,
}

/// Loss values of one training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub ncut: f64,
    pub recon: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLoss>,
    pub stopped_early: bool,
}

impl TrainingLog {
    /// CSV with header `epoch,ncut_loss,recon_loss,wall_ms`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,ncut_loss,recon_loss,wall_ms")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{},{:.3}", e.epoch, e.ncut, e.recon, e.wall_ms)?;
        }
        Ok(())
    }
}

/// The W-net: parameters of both U-nets, their batch-norm running
/// statistics, and the dropout stream.
#[derive(Debug, Clone)]
pub struct WnetModel {
    config: WnetConfig,
    store: ParamStore,
    u1: UNet,
    u2: UNet,
    dropout_rng: Stream,
    train_steps: usize,
}

impl WnetModel {
    /// Build both U-nets with Kaiming-initialized weights drawn from
    /// `config.seed`.
    pub fn new(config: WnetConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Stream::child(config.seed, 0);
        let mut store = ParamStore::new();
        let u1 = Builder {
            store: &mut store,
            rng: &mut init,
            prefix: "u1".into(),
            trainable: Vec::new(),
        }
        .unet(config.channels);
        let u2 = Builder {
            store: &mut store,
            rng: &mut init,
            prefix: "u2".into(),
            trainable: Vec::new(),
        }
        .unet(config.channels);
        Ok(Self {
            dropout_rng: Stream::child(config.seed, 1),
            config,
            store,
            u1,
            u2,
            train_steps: 0,
        })
    }

    pub fn config(&self) -> &WnetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Trainable parameters θ1 of the segmenting net.
    pub fn u1_params(&self) -> &[ParamId] {
        &self.u1.trainable
    }

    /// Trainable parameters θ2 of the reconstructing net.
    pub fn u2_params(&self) -> &[ParamId] {
        &self.u2.trainable
    }

    pub fn parameter_count(&self) -> usize {
        self.store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.value.len())
            .sum()
    }

    /// Number of two-convolution blocks across both nets.
    pub fn conv_pair_count(&self) -> usize {
        2 * 5
    }

    /// Number of training-mode forward passes so far.
    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    /// Clone of the dropout stream, for reproducing a training pass.
    pub fn dropout_stream(&self) -> Stream {
        self.dropout_rng.clone()
    }

    pub fn set_dropout_stream(&mut self, rng: Stream) {
        self.dropout_rng = rng;
    }

    fn unit_forward(&self, tape: &mut Tape, x: Var, u: &ConvUnit, pass: &mut Pass) -> Result<Var> {
        let s = &self.store;
        let h = match u.conv {
            ConvKind::Regular { weight, bias } => {
                let (w, b) = (tape.param(s, weight), tape.param(s, bias));
                tape.conv3d(x, w, Some(b), 1)?
            }
            ConvKind::Separable {
                depthwise,
                pointwise,
                bias,
            } => {
                let (dw, pw, b) = (tape.param(s, depthwise), tape.param(s, pointwise), tape.param(s, bias));
                tape.depthwise_separable_conv3d(x, dw, pw, b)?
            }
        };
        let h = tape.relu(h);
        let (gamma, beta) = (tape.param(s, u.gamma), tape.param(s, u.beta));
        match pass.mode {
            Mode::Train => {
                let (out, stats) = tape.batch_norm_train(h, gamma, beta, BN_EPS)?;
                let n = stats.count as f64;
                let unbiased = stats.var.iter().map(|v| v * n / (n - 1.0).max(1.0)).collect();
                pass.updates.push((*u, stats.mean, unbiased));
                Ok(out)
            }
            Mode::Eval => {
                if self.train_steps == 0 {
                    return Err(Error::UninitializedStats);
                }
                let mean = s.get(u.running_mean).value.data().to_vec();
                let var = s.get(u.running_var).value.data().to_vec();
                tape.batch_norm_eval(h, gamma, beta, &mean, &var, BN_EPS)
            }
        }
    }

    fn pair_forward(&self, tape: &mut Tape, x: Var, p: &ConvPair, pass: &mut Pass) -> Result<Var> {
        let h = self.unit_forward(tape, x, &p.0[0], pass)?;
        self.unit_forward(tape, h, &p.0[1], pass)
    }

    fn unet_forward(&self, tape: &mut Tape, net: &UNet, x: Var, pass: &mut Pass) -> Result<Var> {
        let s = &self.store;
        let top = self.pair_forward(tape, x, &net.down_top, pass)?;
        let h = tape.maxpool3d(top)?;
        let mid = self.pair_forward(tape, h, &net.down_mid, pass)?;
        let h = match pass.rng.as_deref_mut() {
            Some(rng) => tape.dropout(mid, self.config.dropout_rate, pass.mode == Mode::Train, rng),
            None => mid,
        };
        let h = tape.maxpool3d(h)?;
        let h = self.pair_forward(tape, h, &net.bottom, pass)?;
        let (w, b) = (tape.param(s, net.up_to_mid.weight), tape.param(s, net.up_to_mid.bias));
        let h = tape.conv_transpose3d(h, w, Some(b))?;
        let h = tape.concat_channels(mid, h)?;
        let h = self.pair_forward(tape, h, &net.up_mid, pass)?;
        let (w, b) = (tape.param(s, net.up_to_top.weight), tape.param(s, net.up_to_top.bias));
        let h = tape.conv_transpose3d(h, w, Some(b))?;
        let h = tape.concat_channels(top, h)?;
        let h = self.pair_forward(tape, h, &net.up_top, pass)?;
        let (w, b) = (tape.param(s, net.head.weight), tape.param(s, net.head.bias));
        let h = tape.conv3d(h, w, Some(b), 0)?;
        Ok(tape.sigmoid(h))
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let [nx, ny, nz] = self.config.padded_dims;
        let want = [1, 1, nx, ny, nz];
        if tape.value(x).shape() != want {
            return Err(Error::Shape(format!(
                "W-net input must have shape {want:?}, got {:?}",
                tape.value(x).shape()
            )));
        }
        Ok(())
    }

    fn run(&mut self, tape: &mut Tape, x: Var, mode: Mode, both: bool) -> Result<(Var, Option<Var>)> {
        self.check_input(tape, x)?;
        let mut rng = self.dropout_rng.clone();
        let mut pass = Pass {
            mode,
            rng: Some(&mut rng),
            updates: Vec::new(),
        };
        let prob = self.unet_forward(tape, &self.u1.clone(), x, &mut pass)?;
        let recon = if both {
            Some(self.unet_forward(tape, &self.u2.clone(), prob, &mut pass)?)
        } else {
            None
        };
        let updates = std::mem::take(&mut pass.updates);
        drop(pass);
        if mode == Mode::Train {
            self.dropout_rng = rng;
            self.apply_running_stats(updates);
            self.train_steps += 1;
        }
        Ok((prob, recon))
    }

    fn apply_running_stats(&mut self, updates: Vec<(ConvUnit, Vec<f64>, Vec<f64>)>) {
        for (u, mean, var) in updates {
            for (id, batch) in [(u.running_mean, mean), (u.running_var, var)] {
                let running = self.store.get_mut(id).value.data_mut();
                for (r, b) in running.iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
    }

    /// Class-0 probability map from the first net. `x` has shape
    /// `(1, 1, padded_dims)`.
    pub fn forward_u1(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        Ok(self.run(tape, x, mode, false)?.0)
    }

    /// Both nets: returns `(probability, reconstructed p-values)`.
    pub fn forward_w(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<(Var, Var)> {
        let (prob, recon) = self.run(tape, x, mode, true)?;
        Ok((prob, recon.expect("both nets ran")))
    }

    /// Second net alone on a probability map of shape `(1, 1, padded_dims)`.
    pub fn forward_u2(&mut self, tape: &mut Tape, prob: Var, mode: Mode) -> Result<Var> {
        self.check_input(tape, prob)?;
        let mut rng = self.dropout_rng.clone();
        let mut pass = Pass {
            mode,
            rng: Some(&mut rng),
            updates: Vec::new(),
        };
        let out = self.unet_forward(tape, &self.u2.clone(), prob, &mut pass)?;
        let updates = std::mem::take(&mut pass.updates);
        if mode == Mode::Train {
            self.dropout_rng = rng;
            self.apply_running_stats(updates);
            self.train_steps += 1;
        }
        Ok(out)
    }

    /// Network input for `x`: padded to `padded_dims` with every voxel
    /// outside the mask set to 0.
    pub fn input_tensor(&self, x: &Volume3D) -> Result<(Tensor, Volume3D)> {
        let padded = pad_to(x, self.config.padded_dims, 0.0)?;
        let data = (0..padded.len())
            .map(|i| if padded.is_active(i) { padded.data()[i] } else { 0.0 })
            .collect();
        let [nx, ny, nz] = self.config.padded_dims;
        Ok((Tensor::new(vec![1, 1, nx, ny, nz], data)?, padded))
    }

    /// Alternate, once per epoch, a soft-Ncut step on the first net and a
    /// reconstruction step on both. `graph` must be built on the statistic
    /// volume padded to `padded_dims`.
    pub fn train(&mut self, x: &Volume3D, p: &Volume3D, graph: &SparseWeightGraph) -> Result<TrainingLog> {
        if !x.same_layout(p) {
            return Err(Error::Shape("statistic and p-value volumes differ in layout".into()));
        }
        if graph.dims() != self.config.padded_dims {
            return Err(Error::Shape(format!(
                "graph dims {:?} differ from padded dims {:?}",
                graph.dims(),
                self.config.padded_dims
            )));
        }
        let (input, padded) = self.input_tensor(x)?;
        let target = pad_to(p, self.config.padded_dims, 1.0)?;
        let mask = padded.mask().expect("padding adds a mask").to_vec();
        let theta1 = self.u1.trainable.clone();
        let all: Vec<ParamId> = self.u1.trainable.iter().chain(&self.u2.trainable).copied().collect();
        let opt = self.config.optimizer;
        let rule = self.config.early_stop;

        let mut log = TrainingLog::default();
        let (mut best_ncut, mut best_recon) = (f64::INFINITY, f64::INFINITY);
        let mut stalled = 0;
        for epoch in 1..=self.config.max_epochs {
            let start = Instant::now();

            let mut tape = Tape::new();
            let xv = tape.constant(input.clone());
            let prob = self.forward_u1(&mut tape, xv, Mode::Train)?;
            let loss = soft_ncut_loss(&mut tape, prob, graph)?;
            let ncut = tape.value(loss).data()[0];
            if !ncut.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    stage: "soft-ncut",
                    loss: ncut,
                });
            }
            self.store.zero_all_grads();
            tape.backward_into(loss, &mut self.store)?;
            self.store.sgd_step(&theta1, &opt);

            let mut tape = Tape::new();
            let xv = tape.constant(input.clone());
            let (_, recon) = self.forward_w(&mut tape, xv, Mode::Train)?;
            let loss = tape.mse_masked(recon, target.data(), Some(&mask))?;
            let recon_loss = tape.value(loss).data()[0];
            if !recon_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    stage: "reconstruction",
                    loss: recon_loss,
                });
            }
            self.store.zero_all_grads();
            tape.backward_into(loss, &mut self.store)?;
            self.store.sgd_step(&all, &opt);
            self.store.zero_all_grads();

            log.epochs.push(EpochLoss {
                epoch,
                ncut,
                recon: recon_loss,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            let improves = |loss: f64, best: f64| best - loss > rule.min_rel_improvement * best.abs();
            let improved = improves(ncut, best_ncut) | improves(recon_loss, best_recon);
            best_ncut = best_ncut.min(ncut);
            best_recon = best_recon.min(recon_loss);
            stalled = if improved { 0 } else { stalled + 1 };
            if stalled >= rule.patience {
                log.stopped_early = epoch < self.config.max_epochs;
                break;
            }
        }
        Ok(log)
    }

    /// Class-0 probability map for `x` with dropout off and batch
    /// normalization on running statistics, cropped back to `x`'s dims.
    pub fn predict_prob(&self, x: &Volume3D) -> Result<Volume3D> {
        if self.train_steps == 0 {
            return Err(Error::Untrained);
        }
        let (input, _) = self.input_tensor(x)?;
        let mut tape = Tape::new();
        let xv = tape.constant(input);
        let mut pass = Pass {
            mode: Mode::Eval,
            rng: None,
            updates: Vec::new(),
        };
        let prob = self.unet_forward(&mut tape, &self.u1, xv, &mut pass)?;
        let padded = Volume3D::new(self.config.padded_dims, tape.value(prob).data().to_vec())?;
        crop_to(&padded, x)
    }

    /// Parameters and running statistics as a checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.store, path)
    }

    /// Load a checkpoint written by [`WnetModel::save`] for the same
    /// configuration. The loaded model counts as trained.
    pub fn load(config: WnetConfig, path: &Path) -> Result<Self> {
        let mut model = Self::new(config)?;
        load_checkpoint(&mut model.store, path)?;
        model.train_steps = 1;
        Ok(model)
    }
}
