//! Classic FDR procedures for independent tests: Benjamini–Hochberg, Storey
//! q-values, and Efron-style local fdr with a Lindsey-method marginal density.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lis::prefix_mean_select;
use crate::normal;
use crate::outcome::TestOutcome;
use crate::volume::Volume3D;

/// Storey tuning parameter.
pub const STOREY_LAMBDA: f64 = 0.5;
const LINDSEY_BINS: usize = 120;
const LINDSEY_DEGREE: usize = 7;
const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
/// Minimum number of active voxels for local fdr.
pub const LOCAL_FDR_MIN_VOXELS: usize = 200;

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Active `(value, index)` pairs sorted ascending by value then index.
pub(crate) fn sorted_active(v: &Volume3D) -> Result<Vec<(f64, usize)>> {
    let mut pairs: Vec<(f64, usize)> = v.active_indices().into_iter().map(|i| (v.data()[i], i)).collect();
    if pairs.is_empty() {
        return Err(Error::EmptyMask);
    }
    if let Some(&(_, i)) = pairs.iter().find(|(x, _)| x.is_nan()) {
        return Err(Error::NonFinite(i));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(pairs)
}

/// Benjamini–Hochberg step-up.
pub fn bh(p: &Volume3D, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let sorted = sorted_active(p)?;
    let m = sorted.len() as f64;
    let k = sorted
        .iter()
        .enumerate()
        .rev()
        .find(|(j, (pv, _))| *pv <= (j + 1) as f64 * alpha / m)
        .map_or(0, |(j, _)| j + 1);
    let rejected: Vec<usize> = sorted[..k].iter().map(|&(_, i)| i).collect();
    Ok(TestOutcome::from_rejected(p, &rejected, alpha, "bh", None))
}

/// `min(1, max(#{p > λ} / ((1 − λ) m), 1/m))`.
pub fn storey_pi0(pvalues: &[f64], lambda: f64) -> f64 {
    let m = pvalues.len() as f64;
    let above = pvalues.iter().filter(|&&p| p > lambda).count() as f64;
    (above / ((1.0 - lambda) * m)).max(1.0 / m).min(1.0)
}

/// Storey q-values of the active voxels, returned as a full volume (1 on
/// inactive voxels), together with π̂0.
pub fn qvalues(p: &Volume3D) -> Result<(Volume3D, f64)> {
    let sorted = sorted_active(p)?;
    let m = sorted.len();
    let pvals: Vec<f64> = sorted.iter().map(|&(v, _)| v).collect();
    let pi0 = storey_pi0(&pvals, STOREY_LAMBDA);
    let mut q = vec![1.0; p.len()];
    let mut running = f64::INFINITY;
    for (j, &(pv, i)) in sorted.iter().enumerate().rev() {
        let raw = pi0 * m as f64 * pv / (j + 1) as f64;
        running = running.min(raw).min(1.0);
        q[i] = running;
    }
    Ok((p.with_data(q)?, pi0))
}

/// Active voxels with q-value `≤ level`.
pub(crate) fn qvalue_set(q: &Volume3D, level: f64) -> Vec<usize> {
    q.active_indices().into_iter().filter(|&i| q.data()[i] <= level).collect()
}

/// Storey q-value procedure: reject every voxel with `q ≤ α`.
pub fn qvalue(p: &Volume3D, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let (q, _) = qvalues(p)?;
    let rejected = qvalue_set(&q, alpha);
    Ok(TestOutcome::from_rejected(p, &rejected, alpha, "qvalue", Some(q)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityMethod {
    Lindsey,
    /// Gaussian kernel density, used when the Poisson regression fails.
    Kernel,
}

/// Lindsey-method density: Poisson regression of histogram counts on a
/// polynomial in the (rescaled) bin centre.
#[derive(Debug, Clone)]
pub struct LindseyFit {
    coeffs: Vec<f64>,
    lo: f64,
    hi: f64,
    n: usize,
    pub iterations: usize,
}

impl LindseyFit {
    fn basis(&self, z: f64) -> Vec<f64> {
        polynomial_row(rescale(z, self.lo, self.hi))
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / LINDSEY_BINS as f64
    }

    /// Fitted marginal density at `z`.
    pub fn density(&self, z: f64) -> f64 {
        let eta: f64 = self.basis(z).iter().zip(&self.coeffs).map(|(x, b)| x * b).sum();
        eta.exp() / (self.n as f64 * self.bin_width())
    }
}

fn rescale(z: f64, lo: f64, hi: f64) -> f64 {
    (2.0 * z - lo - hi) / (hi - lo)
}

fn polynomial_row(t: f64) -> Vec<f64> {
    let mut row = Vec::with_capacity(LINDSEY_DEGREE + 1);
    let mut v = 1.0;
    for _ in 0..=LINDSEY_DEGREE {
        row.push(v);
        v *= t;
    }
    row
}

/// Fit Lindsey's method to `z` by IRLS. Returns `None` when the iteration
/// does not converge.
pub fn lindsey_fit(z: &[f64]) -> Result<Option<LindseyFit>> {
    let (min, max) = z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(max > min) {
        return Err(Error::Degenerate("local fdr needs non-constant z".into()));
    }
    let (lo, hi) = (min - 0.1, max + 0.1);
    let width = (hi - lo) / LINDSEY_BINS as f64;
    let mut counts = vec![0.0; LINDSEY_BINS];
    for &v in z {
        counts[(((v - lo) / width) as usize).min(LINDSEY_BINS - 1)] += 1.0;
    }
    let p = LINDSEY_DEGREE + 1;
    let x = DMatrix::from_fn(LINDSEY_BINS, p, |b, k| {
        let centre = lo + (b as f64 + 0.5) * width;
        rescale(centre, lo, hi).powi(k as i32)
    });
    let y = DVector::from_vec(counts);

    let deviance = |mu: &DVector<f64>| -> f64 {
        2.0 * y
            .iter()
            .zip(mu.iter())
            .map(|(&yi, &mi)| if yi > 0.0 { yi * (yi / mi).ln() - (yi - mi) } else { mi })
            .sum::<f64>()
    };
    let mut eta = y.map(|v| (v + 1.0).ln());
    let mut mu = eta.map(f64::exp);
    let mut dev = deviance(&mu);
    for iter in 1..=IRLS_MAX_ITER {
        let work = DVector::from_fn(LINDSEY_BINS, |b, _| eta[b] + (y[b] - mu[b]) / mu[b]);
        let xtw = DMatrix::from_fn(p, LINDSEY_BINS, |k, b| x[(b, k)] * mu[b]);
        let Some(chol) = (&xtw * &x).cholesky() else {
            return Ok(None);
        };
        let beta = chol.solve(&(&xtw * &work));
        eta = &x * &beta;
        mu = eta.map(f64::exp);
        if mu.iter().any(|m| !m.is_finite()) {
            return Ok(None);
        }
        let new_dev = deviance(&mu);
        if (new_dev - dev).abs() <= IRLS_TOL * (new_dev.abs() + 0.1) {
            return Ok(Some(LindseyFit {
                coeffs: beta.iter().copied().collect(),
                lo,
                hi,
                n: z.len(),
                iterations: iter,
            }));
        }
        dev = new_dev;
    }
    Ok(None)
}

/// Gaussian kernel density at each point of `z`, bandwidth
/// `1.06 σ̂ m^(−1/5)`.
pub fn kernel_density(z: &[f64]) -> Vec<f64> {
    let m = z.len() as f64;
    let mean = z.iter().sum::<f64>() / m;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let h = 1.06 * sd * m.powf(-0.2);
    z.iter()
        .map(|&a| z.iter().map(|&b| normal::pdf((a - b) / h)).sum::<f64>() / (m * h))
        .collect()
}

/// Two-group fit on the active voxels, in ascending linear-index order.
#[derive(Debug, Clone)]
pub struct TwoGroupFit {
    pub pi0: f64,
    /// Marginal density f̂ at each active voxel.
    pub f_hat: Vec<f64>,
    /// Theoretical null N(0, 1) density at each active voxel.
    pub f0: Vec<f64>,
    pub method: DensityMethod,
    pub lindsey: Option<LindseyFit>,
}

impl TwoGroupFit {
    /// `min(1, π̂0 f0 / f̂)` per active voxel.
    pub fn local_fdr(&self) -> Vec<f64> {
        self.f0
            .iter()
            .zip(&self.f_hat)
            .map(|(f0, f)| (self.pi0 * f0 / f).min(1.0))
            .collect()
    }
}

pub fn fit_two_group(z: &Volume3D) -> Result<TwoGroupFit> {
    let active = z.active_indices();
    if active.len() < LOCAL_FDR_MIN_VOXELS {
        return Err(Error::InvalidArgument(format!(
            "local fdr needs at least {LOCAL_FDR_MIN_VOXELS} voxels, got {}",
            active.len()
        )));
    }
    let values: Vec<f64> = active.iter().map(|&i| z.data()[i]).collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(active[pos]));
    }
    let pvals: Vec<f64> = values.iter().map(|&v| normal::two_sided_p(v)).collect();
    let pi0 = storey_pi0(&pvals, STOREY_LAMBDA);
    let f0 = values.iter().map(|&v| normal::pdf(v)).collect();
    let (f_hat, method, lindsey) = match lindsey_fit(&values)? {
        Some(fit) => (
            values.iter().map(|&v| fit.density(v)).collect(),
            DensityMethod::Lindsey,
            Some(fit),
        ),
        None => (kernel_density(&values), DensityMethod::Kernel, None),
    };
    Ok(TwoGroupFit {
        pi0,
        f_hat,
        f0,
        method,
        lindsey,
    })
}

/// Local fdr procedure: the ascending prefix-mean rule applied to
/// `min(1, π̂0 φ(z)/f̂(z))`.
pub fn local_fdr(z: &Volume3D, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let active = z.active_indices();
    let fit = fit_two_group(z)?;
    let fdr = fit.local_fdr();
    let mut scores = vec![1.0; z.len()];
    for (&i, &f) in active.iter().zip(&fdr) {
        scores[i] = f;
    }
    let scores = z.with_data(scores)?;
    let rejected = prefix_mean_select(&scores, alpha)?;
    Ok(TestOutcome::from_rejected(z, &rejected, alpha, "localfdr", Some(scores)))
}
