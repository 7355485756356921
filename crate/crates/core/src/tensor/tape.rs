use super::kernels::{self, ConvGeom, UpGeom};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A differentiable operation defined outside the tape, with a hand-written
/// gradient.
pub trait CustomOp: Send + Sync {
    /// Gradient with respect to each input, given the gradient of the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>>;
}

/// Per-channel statistics of one training-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Elements per channel.
    pub count: usize,
}

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Depthwise {
        input: Var,
        weight: Var,
        geom: ConvGeom,
    },
    Up {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: UpGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        batch: usize,
        channels: usize,
        vol: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Dropout {
        input: Var,
        scale: Vec<f64>,
    },
    Concat {
        a: Var,
        b: Var,
        batch: usize,
        a_block: usize,
        b_block: usize,
    },
    MaskedMse {
        pred: Var,
        target: Vec<f64>,
        active: Vec<usize>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant leaf; no gradient is propagated into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Read a parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(format!("add {:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(format!("mul {:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(a);
        self.push(t, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| logistic(v)).collect();
        let t = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(a);
        self.push(t, Op::Sigmoid(a), ng)
    }

    /// Stride-1 convolution with a cubic kernel, weight `[cout, cin, k, k, k]`,
    /// zero padding `padding` on every side.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Option<Var>, padding: usize) -> Result<Var> {
        let (batch, cin, in_dims) = self.value(input).dims5()?;
        let (cout, wcin, k) = match self.value(weight).shape()[..] {
            [co, ci, a, b, c] if a == b && b == c => (co, ci, a),
            ref s => return Err(shape_err(format!("conv weight must be [cout, cin, k, k, k], got {s:?}"))),
        };
        if wcin != cin {
            return Err(shape_err(format!("conv weight expects {wcin} input channels, input has {cin}")));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [cout] {
                return Err(shape_err(format!("conv bias must be [{cout}], got {:?}", self.value(b).shape())));
            }
        }
        let mut out_dims = [0; 3];
        for a in 0..3 {
            let padded = in_dims[a] + 2 * padding;
            if padded < k {
                return Err(shape_err(format!("kernel {k} larger than padded input {padded}")));
            }
            out_dims[a] = padded - k + 1;
        }
        let geom = ConvGeom {
            batch,
            cin,
            cout,
            k,
            pad: padding,
            in_dims,
            out_dims,
        };
        let out = kernels::conv_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let t = Tensor::new(vec![batch, cout, out_dims[0], out_dims[1], out_dims[2]], out)?;
        let ng = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(t, Op::Conv { input, weight, bias, geom }, ng))
    }

    /// Per-channel convolution, weight `[c, 1, k, k, k]`, no bias.
    pub fn depthwise_conv3d(&mut self, input: Var, weight: Var, padding: usize) -> Result<Var> {
        let (batch, c, in_dims) = self.value(input).dims5()?;
        let k = match self.value(weight).shape()[..] {
            [wc, 1, a, b, cc] if wc == c && a == b && b == cc => a,
            ref s => {
                return Err(shape_err(format!("depthwise weight must be [{c}, 1, k, k, k], got {s:?}")))
            }
        };
        let mut out_dims = [0; 3];
        for a in 0..3 {
            let padded = in_dims[a] + 2 * padding;
            if padded < k {
                return Err(shape_err(format!("kernel {k} larger than padded input {padded}")));
            }
            out_dims[a] = padded - k + 1;
        }
        let geom = ConvGeom {
            batch,
            cin: c,
            cout: c,
            k,
            pad: padding,
            in_dims,
            out_dims,
        };
        let out = kernels::depthwise_forward(&geom, self.value(input).data(), self.value(weight).data());
        let t = Tensor::new(vec![batch, c, out_dims[0], out_dims[1], out_dims[2]], out)?;
        let ng = self.needs(input) || self.needs(weight);
        Ok(self.push(t, Op::Depthwise { input, weight, geom }, ng))
    }

    /// Depthwise 3×3×3 convolution (padding 1) followed by a 1×1×1 pointwise
    /// convolution `[cout, cin, 1, 1, 1]` with bias.
    pub fn depthwise_separable_conv3d(
        &mut self,
        input: Var,
        depthwise: Var,
        pointwise: Var,
        bias: Var,
    ) -> Result<Var> {
        let h = self.depthwise_conv3d(input, depthwise, 1)?;
        self.conv3d(h, pointwise, Some(bias), 0)
    }

    /// Kernel-2 stride-2 transposed convolution, weight `[cin, cout, 2, 2, 2]`.
    pub fn conv_transpose3d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (batch, cin, in_dims) = self.value(input).dims5()?;
        let cout = match self.value(weight).shape()[..] {
            [ci, co, 2, 2, 2] if ci == cin => co,
            ref s => {
                return Err(shape_err(format!(
                    "transposed conv weight must be [{cin}, cout, 2, 2, 2], got {s:?}"
                )))
            }
        };
        if let Some(b) = bias {
            if self.value(b).shape() != [cout] {
                return Err(shape_err(format!("bias must be [{cout}], got {:?}", self.value(b).shape())));
            }
        }
        let geom = UpGeom {
            batch,
            cin,
            cout,
            in_dims,
        };
        let out = kernels::up_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let od = geom.out_dims();
        let t = Tensor::new(vec![batch, cout, od[0], od[1], od[2]], out)?;
        let ng = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(t, Op::Up { input, weight, bias, geom }, ng))
    }

    /// 2×2×2 max pooling, stride 2.
    pub fn maxpool3d(&mut self, input: Var) -> Result<Var> {
        let (batch, c, d) = self.value(input).dims5()?;
        if d.iter().any(|&n| n % 2 != 0) {
            return Err(shape_err(format!("max pooling needs even spatial dims, got {d:?}")));
        }
        let (out, argmax) = kernels::maxpool_forward(self.value(input).data(), batch * c, d);
        let t = Tensor::new(vec![batch, c, d[0] / 2, d[1] / 2, d[2] / 2], out)?;
        let ng = self.needs(input);
        Ok(self.push(t, Op::MaxPool { input, argmax }, ng))
    }

    /// Flat input indices selected by a max-pooling node.
    pub fn pool_indices(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxPool { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    fn bn_shapes(&self, input: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (batch, c, d) = self.value(input).dims5()?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(shape_err(format!(
                    "batch norm affine parameter must be [{c}], got {:?}",
                    self.value(p).shape()
                )));
            }
        }
        Ok((batch, c, kernels::volume(d)))
    }

    fn bn_apply(&mut self, input: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: Vec<f64>, train: bool) -> Result<Var> {
        let (batch, channels, vol) = self.bn_shapes(input, gamma, beta)?;
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * vol;
                for i in off..off + vol {
                    let h = (x[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        let t = Tensor::new(self.value(input).shape().to_vec(), out)?;
        let ng = self.needs(input) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            t,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                batch,
                channels,
                vol,
                xhat,
                inv_std,
                train,
            },
            ng,
        ))
    }

    /// Branch taken at every non-smooth point of the recorded graph: the
    /// sign of each ReLU input and each max-pool argmax. Two tapes with equal
    /// patterns lie on the same smooth piece of the function.
    pub fn kink_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => out.extend(self.value(*a).data().iter().map(|&x| usize::from(x > 0.0))),
                Op::MaxPool { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    /// Training-mode batch normalization over `(batch, x, y, z)` per channel.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (batch, channels, vol) = self.bn_shapes(input, gamma, beta)?;
        let x = self.value(input).data();
        let n = (batch * vol) as f64;
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for c in 0..channels {
            let blocks = (0..batch).map(|b| &x[(b * channels + c) * vol..][..vol]);
            let m = blocks.clone().flatten().sum::<f64>() / n;
            let v = blocks.flatten().map(|&xi| (xi - m) * (xi - m)).sum::<f64>() / n;
            mean[c] = m;
            var[c] = v;
        }
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self.bn_apply(input, gamma, beta, &mean, inv_std, true)?;
        Ok((
            out,
            BatchStats {
                mean,
                var,
                count: batch * vol,
            },
        ))
    }

    /// Evaluation-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_apply(input, gamma, beta, mean, inv_std, false)
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1 − rate)`.
    /// Evaluation mode and `rate == 0` return `input` unchanged.
    pub fn dropout(&mut self, input: Var, rate: f64, train: bool, rng: &mut Stream) -> Var {
        if !train || rate <= 0.0 {
            return input;
        }
        let keep = 1.0 / (1.0 - rate);
        let x = self.value(input);
        let scale: Vec<f64> = (0..x.len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let t = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(input);
        self.push(t, Op::Dropout { input, scale }, ng)
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, da) = self.value(a).dims5()?;
        let (bb, cb, db) = self.value(b).dims5()?;
        if ba != bb || da != db {
            return Err(shape_err(format!(
                "concat needs equal batch and spatial dims: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let vol = kernels::volume(da);
        let (a_block, b_block) = (ca * vol, cb * vol);
        let mut out = Vec::with_capacity(ba * (a_block + b_block));
        for i in 0..ba {
            out.extend_from_slice(&self.value(a).data()[i * a_block..][..a_block]);
            out.extend_from_slice(&self.value(b).data()[i * b_block..][..b_block]);
        }
        let t = Tensor::new(vec![ba, ca + cb, da[0], da[1], da[2]], out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            t,
            Op::Concat {
                a,
                b,
                batch: ba,
                a_block,
                b_block,
            },
            ng,
        ))
    }

    /// Mean squared error over the positions where `mask` is true (all
    /// positions without a mask).
    pub fn mse_masked(&mut self, pred: Var, target: &[f64], mask: Option<&[bool]>) -> Result<Var> {
        let p = self.value(pred);
        if target.len() != p.len() || mask.is_some_and(|m| m.len() != p.len()) {
            return Err(shape_err(format!(
                "mse: prediction has {} elements, target {}",
                p.len(),
                target.len()
            )));
        }
        let active: Vec<usize> = (0..p.len()).filter(|&i| mask.is_none_or(|m| m[i])).collect();
        if active.is_empty() {
            return Err(Error::EmptyMask);
        }
        let loss = active
            .iter()
            .map(|&i| (p.data()[i] - target[i]).powi(2))
            .sum::<f64>()
            / active.len() as f64;
        let ng = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedMse {
                pred,
                target: target.to_vec(),
                active,
            },
            ng,
        ))
    }

    /// Record a node computed outside the tape.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let ng = inputs.iter().any(|&v| self.needs(v));
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            ng,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                for (v, gv) in self.node_backward(i, &g) {
                    if self.needs(v) {
                        accumulate(&mut grads[v.0], gv);
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// [`Tape::backward`], then add the gradient of every trainable
    /// parameter read onto this tape into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.wrt(Var(i))) {
                store.accumulate_grad(*id, g);
            }
        }
        Ok(grads)
    }

    fn node_backward(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.value(v).data();
        match &node.op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let ga = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                let gb = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).len()])],
            Op::Relu(a) => {
                let ga = g
                    .iter()
                    .zip(val(*a))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*a, ga)]
            }
            Op::Sigmoid(a) => {
                let ga = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                vec![(*a, ga)]
            }
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            } => {
                let mut out = Vec::new();
                if self.needs(*input) {
                    out.push((*input, kernels::conv_backward_input(geom, g, val(*weight))));
                }
                if self.needs(*weight) {
                    out.push((*weight, kernels::conv_backward_weight(geom, g, val(*input))));
                }
                if let Some(b) = bias {
                    let vol = kernels::volume(geom.out_dims);
                    out.push((*b, kernels::channel_sums(g, geom.batch, geom.cout, vol)));
                }
                out
            }
            Op::Depthwise {
                input,
                weight,
                geom,
            } => {
                let mut out = Vec::new();
                if self.needs(*input) {
                    out.push((*input, kernels::depthwise_backward_input(geom, g, val(*weight))));
                }
                if self.needs(*weight) {
                    out.push((*weight, kernels::depthwise_backward_weight(geom, g, val(*input))));
                }
                out
            }
            Op::Up {
                input,
                weight,
                bias,
                geom,
            } => {
                let mut out = Vec::new();
                if self.needs(*input) {
                    out.push((*input, kernels::up_backward_input(geom, g, val(*weight))));
                }
                if self.needs(*weight) {
                    out.push((*weight, kernels::up_backward_weight(geom, g, val(*input))));
                }
                if let Some(b) = bias {
                    let vol = kernels::volume(geom.out_dims());
                    out.push((*b, kernels::channel_sums(g, geom.batch, geom.cout, vol)));
                }
                out
            }
            Op::MaxPool { input, argmax } => {
                let mut gi = vec![0.0; self.value(*input).len()];
                for (go, &j) in g.iter().zip(argmax) {
                    gi[j] += go;
                }
                vec![(*input, gi)]
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                batch,
                channels,
                vol,
                xhat,
                inv_std,
                train,
            } => {
                let gam = val(*gamma);
                let n = (batch * vol) as f64;
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; *channels];
                let mut gb = vec![0.0; *channels];
                for c in 0..*channels {
                    let idx = || (0..*batch).flat_map(move |b| (b * channels + c) * vol..(b * channels + c + 1) * vol);
                    let (mut sg, mut sgx) = (0.0, 0.0);
                    for i in idx() {
                        sg += g[i];
                        sgx += g[i] * xhat[i];
                    }
                    gb[c] = sg;
                    gg[c] = sgx;
                    let scale = gam[c] * inv_std[c];
                    if *train {
                        for i in idx() {
                            gx[i] = scale * (g[i] - sg / n - xhat[i] * sgx / n);
                        }
                    } else {
                        for i in idx() {
                            gx[i] = scale * g[i];
                        }
                    }
                }
                vec![(*input, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::Dropout { input, scale } => {
                vec![(*input, g.iter().zip(scale).map(|(g, s)| g * s).collect())]
            }
            Op::Concat {
                a,
                b,
                batch,
                a_block,
                b_block,
            } => {
                let mut ga = Vec::with_capacity(batch * a_block);
                let mut gb = Vec::with_capacity(batch * b_block);
                for i in 0..*batch {
                    let base = i * (a_block + b_block);
                    ga.extend_from_slice(&g[base..base + a_block]);
                    gb.extend_from_slice(&g[base + a_block..base + a_block + b_block]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::MaskedMse {
                pred,
                target,
                active,
            } => {
                let p = val(*pred);
                let mut gp = vec![0.0; p.len()];
                let scale = 2.0 * g[0] / active.len() as f64;
                for &i in active {
                    gp[i] = scale * (p[i] - target[i]);
                }
                vec![(*pred, gp)]
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                inputs
                    .iter()
                    .copied()
                    .zip(op.backward(&ins, &node.value, g))
                    .collect()
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
