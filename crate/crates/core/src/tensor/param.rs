use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

/// A trainable (or frozen) leaf tensor with its gradient accumulator and
/// momentum buffer.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            velocity: Tensor::zeros(&shape),
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of trainable scalar values.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let p = &mut self.params[id.0];
        if !p.trainable {
            return;
        }
        for (a, b) in p.grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grads(&mut self, ids: &[ParamId]) {
        for &id in ids {
            self.params[id.0].grad.data_mut().fill(0.0);
        }
    }

    pub fn zero_all_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// One SGD step with momentum and L2 weight decay on `ids`:
    /// `g ← grad + wd·θ; v ← μ·v + g; θ ← θ − lr·v`.
    pub fn sgd_step(&mut self, ids: &[ParamId], cfg: &OptimizerConfig) {
        for &id in ids {
            let p = &mut self.params[id.0];
            if !p.trainable {
                continue;
            }
            let value = p.value.data_mut();
            let grad = p.grad.data();
            let vel = p.velocity.data_mut();
            for i in 0..value.len() {
                let g = grad[i] + cfg.weight_decay * value[i];
                vel[i] = cfg.momentum * vel[i] + g;
                value[i] -= cfg.learning_rate * vel[i];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Entries i.i.d. `N(0, 2 / fan_in)`.
pub fn kaiming_init(shape: &[usize], fan_in: usize, rng: &mut Stream) -> Tensor {
    let sd = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| sd * rng.normal()).collect()).expect("length matches")
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Write every parameter value as raw little-endian `f64` to `path`, with a
/// tab-separated `name  shape  byte_offset` manifest in `<path>.manifest`.
pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let mut payload = Vec::new();
    let mut manifest = String::new();
    for p in &store.params {
        let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        writeln!(manifest, "{}\t{}\t{}", p.name, shape.join(","), payload.len()).unwrap();
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, &payload).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

/// Overwrite the values in `store` from a checkpoint. Names and shapes must
/// match one to one.
pub fn load_checkpoint(store: &mut ParamStore, path: &Path) -> Result<()> {
    let mpath = manifest_path(path);
    let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::Metadata {
        path: mpath.clone(),
        reason,
    };
    let lines: Vec<&str> = manifest.lines().filter(|l| !l.is_empty()).collect();
    if lines.len() != store.params.len() {
        return Err(corrupt(format!(
            "{} entries for {} parameters",
            lines.len(),
            store.params.len()
        )));
    }
    for (line, p) in lines.iter().zip(&mut store.params) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, shape, offset] = fields[..] else {
            return Err(corrupt(format!("malformed line {line:?}")));
        };
        if name != p.name {
            return Err(corrupt(format!("expected parameter {}, found {name}", p.name)));
        }
        let shape: Vec<usize> = shape
            .split(',')
            .map(|d| d.parse().map_err(|_| corrupt(format!("bad shape in {line:?}"))))
            .collect::<Result<_>>()?;
        if shape != p.value.shape() {
            return Err(corrupt(format!("shape mismatch for {name}")));
        }
        let offset: usize = offset
            .parse()
            .map_err(|_| corrupt(format!("bad offset in {line:?}")))?;
        let end = offset + 8 * p.value.len();
        if end > payload.len() {
            return Err(Error::LengthMismatch {
                expected: end / 8,
                found: payload.len() / 8,
            });
        }
        for (dst, chunk) in p.value.data_mut().iter_mut().zip(payload[offset..end].chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(())
}
