//! Voxel affinity graph and the two-class soft normalized-cut loss.
//!
//! For class-0 probabilities `P` and class vectors `q⁰ = P`, `q¹ = 1 − P`:
//!
//! ```text
//! loss = 2 − Σ_k N_k / (D_k + ε),   N_k = Σ_ij w_ij q_i q_j,   D_k = Σ_i d_i q_i
//! ```
//!
//! with `d_i = Σ_j w_ij`. Only voxels of interest take part: padding never
//! enters the graph.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tape, Tensor, Var};
use crate::volume::Volume3D;

/// Denominator guard; an empty class contributes 0 to the loss.
pub const NCUT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NcutParams {
    /// Intensity bandwidth σx; the kernel uses σx².
    pub sigma_x: f64,
    /// Spatial bandwidth σℓ; the kernel uses σℓ².
    pub sigma_l: f64,
    /// Chebyshev neighborhood radius.
    pub radius: usize,
}

impl Default for NcutParams {
    fn default() -> Self {
        Self {
            sigma_x: 11.0,
            sigma_l: 3.0,
            radius: 3,
        }
    }
}

impl NcutParams {
    /// `exp(−Δx²/σx² − ‖Δℓ‖²/σℓ²)` for a pair within the radius.
    pub fn weight(&self, dx: f64, dist_sq: f64) -> f64 {
        (-(dx * dx) / (self.sigma_x * self.sigma_x) - dist_sq / (self.sigma_l * self.sigma_l)).exp()
    }
}

/// Symmetric sparse affinities between voxels of interest, in CSR form over
/// local voxel numbers (`0..voxel_count`, ascending linear index).
#[derive(Debug, Clone)]
pub struct SparseWeightGraph {
    dims: [usize; 3],
    params: NcutParams,
    voxels: Vec<usize>,
    row_start: Vec<usize>,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
    degree: Vec<f64>,
}

/// Build the affinity graph of the active voxels of `x`.
pub fn build_weight_graph(x: &Volume3D, params: NcutParams) -> Result<SparseWeightGraph> {
    if !(params.sigma_x > 0.0 && params.sigma_l > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bandwidths must be positive, got σx={} σℓ={}",
            params.sigma_x, params.sigma_l
        )));
    }
    let voxels = x.active_indices();
    if voxels.is_empty() {
        return Err(Error::EmptyMask);
    }
    if voxels.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument("too many voxels".into()));
    }
    for &i in &voxels {
        if !x.data()[i].is_finite() {
            return Err(Error::NonFinite(i));
        }
    }
    let mut local = vec![u32::MAX; x.len()];
    for (n, &i) in voxels.iter().enumerate() {
        local[i] = n as u32;
    }
    let dims = x.dims();
    let r = params.radius as isize;
    let rows: Vec<Vec<(u32, f64)>> = voxels
        .par_iter()
        .map(|&i| {
            let [cx, cy, cz] = x.coords(i);
            let xi = x.data()[i];
            let mut row = Vec::new();
            for dz in -r..=r {
                let z = cz as isize + dz;
                if z < 0 || z >= dims[2] as isize {
                    continue;
                }
                for dy in -r..=r {
                    let y = cy as isize + dy;
                    if y < 0 || y >= dims[1] as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let xx = cx as isize + dx;
                        if xx < 0 || xx >= dims[0] as isize {
                            continue;
                        }
                        let j = x.linear(xx as usize, y as usize, z as usize);
                        if local[j] == u32::MAX {
                            continue;
                        }
                        let dist_sq = (dx * dx + dy * dy + dz * dz) as f64;
                        row.push((local[j], params.weight(xi - x.data()[j], dist_sq)));
                    }
                }
            }
            row
        })
        .collect();

    let mut row_start = Vec::with_capacity(voxels.len() + 1);
    let total: usize = rows.iter().map(Vec::len).sum();
    let mut neighbors = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut degree = Vec::with_capacity(voxels.len());
    row_start.push(0);
    for row in rows {
        degree.push(row.iter().map(|&(_, w)| w).sum());
        for (j, w) in row {
            neighbors.push(j);
            weights.push(w);
        }
        row_start.push(neighbors.len());
    }
    Ok(SparseWeightGraph {
        dims,
        params,
        voxels,
        row_start,
        neighbors,
        weights,
        degree,
    })
}

impl SparseWeightGraph {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn params(&self) -> NcutParams {
        self.params
    }

    /// Linear indices (in the source volume) of the graph's voxels.
    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    /// `(neighbor, weight)` pairs of local voxel `i`, self pair included.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_start[i]..self.row_start[i + 1];
        self.neighbors[span.clone()]
            .iter()
            .zip(&self.weights[span])
            .map(|(&j, &w)| (j as usize, w))
    }

    /// Weight of the pair of local voxels `(i, j)`, 0 when not stored.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(k, _)| k == j).map_or(0.0, |(_, w)| w)
    }

    /// `W q` over local voxel numbers.
    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        (0..self.voxels.len())
            .into_par_iter()
            .map(|i| self.row(i).map(|(j, w)| w * q[j]).sum())
            .collect()
    }

    /// Collect the graph's voxels out of a full-volume array.
    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.voxels.iter().map(|&i| full[i]).collect()
    }

    /// Histogram of node degrees as `bin_lo,bin_hi,count` CSV lines.
    pub fn write_degree_histogram(&self, mut out: impl Write, bins: usize) -> std::io::Result<()> {
        let bins = bins.max(1);
        let lo = self.degree.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.degree.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
        let mut counts = vec![0usize; bins];
        for &d in &self.degree {
            counts[(((d - lo) / width) as usize).min(bins - 1)] += 1;
        }
        writeln!(out, "bin_lo,bin_hi,count")?;
        for (b, c) in counts.iter().enumerate() {
            writeln!(out, "{},{},{}", lo + b as f64 * width, lo + (b + 1) as f64 * width, c)?;
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to the local probabilities.
struct NcutEval {
    loss: f64,
    grad: Vec<f64>,
}

fn evaluate(p: &[f64], g: &SparseWeightGraph) -> NcutEval {
    let d = &g.degree;
    let q1: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
    // Both classes go through identical arithmetic and the two ratios are
    // added before subtracting, so loss(P) == loss(1 − P) bit for bit.
    let (wp, wq1) = (g.apply(p), g.apply(&q1));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (n0, d0) = (dot(p, &wp), dot(d, p));
    let (n1, d1) = (dot(&q1, &wq1), dot(d, &q1));
    let (den0, den1) = (d0 + NCUT_EPS, d1 + NCUT_EPS);
    let loss = 2.0 - (n0 / den0 + n1 / den1);
    let grad = (0..p.len())
        .map(|i| {
            let t0 = (2.0 * wp[i] * den0 - n0 * d[i]) / (den0 * den0);
            let t1 = (2.0 * wq1[i] * den1 - n1 * d[i]) / (den1 * den1);
            // q¹ = 1 − P flips the sign of the class-1 term.
            -(t0 - t1)
        })
        .collect();
    NcutEval { loss, grad }
}

/// Soft Ncut loss of local class-0 probabilities (no tape).
pub fn soft_ncut_value(p: &[f64], g: &SparseWeightGraph) -> f64 {
    evaluate(p, g).loss
}

struct NcutNode {
    voxels: Vec<usize>,
    grad: Vec<f64>,
}

impl CustomOp for NcutNode {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>> {
        let mut g = vec![0.0; inputs[0].len()];
        for (&i, &gi) in self.voxels.iter().zip(&self.grad) {
            g[i] = grad_out[0] * gi;
        }
        vec![g]
    }
}

/// Record the soft Ncut loss of `prob` (a full-volume class-0 probability
/// map laid out like the graph's source volume) on the tape.
pub fn soft_ncut_loss(tape: &mut Tape, prob: Var, g: &SparseWeightGraph) -> Result<Var> {
    let full = tape.value(prob);
    let expected: usize = g.dims.iter().product();
    if full.len() != expected {
        return Err(Error::Shape(format!(
            "probability map has {} elements, graph volume has {expected}",
            full.len()
        )));
    }
    let p = g.gather(full.data());
    for (&i, &v) in g.voxels.iter().zip(&p) {
        if !(-1e-9..=1.0 + 1e-9).contains(&v) {
            return Err(Error::OutOfRange {
                kind: "probability",
                index: i,
                value: v,
            });
        }
    }
    let eval = evaluate(&p, g);
    let node = NcutNode {
        voxels: g.voxels.clone(),
        grad: eval.grad,
    };
    Ok(tape.custom(&[prob], Tensor::scalar(eval.loss), Box::new(node)))
}
