//! Gaussian-mixture simulations, confusion metrics and the replication
//! harness.
//!
//! Seeding: for a setting seed `s`, the label cube of the blob design is
//! drawn from `Stream::child(s, 0)` and replication `r` uses
//! `rep_seed = split_seed(s, r + 1)`. Within a replication, iid labels come
//! from `Stream::child(rep_seed, 0)`, the statistic at voxel `i` from
//! `Stream::child(split_seed(rep_seed, 1), i)`, and the W-net seed is
//! `split_seed(rep_seed, 2)`.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{bh, local_fdr, qvalue};
use crate::error::{Error, Result};
use crate::lis::{deepfdr_pipeline, lis_threshold, LisMap};
use crate::normal;
use crate::outcome::TestOutcome;
use crate::rng::{split_seed, Stream};
use crate::volume::{z_to_pvalue, Volume3D};
use crate::wnet::WnetConfig;

/// How the ground-truth labels are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelDesign {
    /// Union of random ellipsoids, fixed across replications.
    #[default]
    Blobs,
    /// Independent Bernoulli(p1) labels, redrawn every replication.
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSetting {
    pub id: String,
    pub dims: [usize; 3],
    pub target_p1: f64,
    pub mu1: f64,
    pub sigma1sq: f64,
    pub seed: u64,
    pub replications: usize,
    pub design: LabelDesign,
}

impl Default for SimSetting {
    fn default() -> Self {
        Self {
            id: "s0".into(),
            dims: [30; 3],
            target_p1: 0.2,
            mu1: -2.0,
            sigma1sq: 1.0,
            seed: 0,
            replications: 50,
            design: LabelDesign::Blobs,
        }
    }
}

impl SimSetting {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.dims.contains(&0) {
            return bad(format!("dims must be positive, got {:?}", self.dims));
        }
        if !(self.target_p1 > 0.01 && self.target_p1 < 0.9) {
            return bad(format!("p1 must lie in (0.01, 0.9), got {}", self.target_p1));
        }
        if !self.mu1.is_finite() || !(self.sigma1sq > 0.0 && self.sigma1sq.is_finite()) {
            return bad(format!("need finite mu1 and positive sigma1sq, got {} and {}", self.mu1, self.sigma1sq));
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        Ok(())
    }

    /// Seed of replication `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        split_seed(self.seed, rep as u64 + 1)
    }

    /// Truth for replication `rep`.
    pub fn labels(&self, rep: usize) -> Result<Volume3D> {
        match self.design {
            LabelDesign::Blobs => generate_labels_blobs(self.dims, self.target_p1, &mut Stream::child(self.seed, 0)),
            LabelDesign::Iid => Ok(generate_labels_iid(
                self.dims,
                self.target_p1,
                &mut Stream::child(self.rep_seed(rep), 0),
            )),
        }
    }

    /// `(h, x, p)` of replication `rep`.
    pub fn replicate(&self, rep: usize) -> Result<(Volume3D, Volume3D, Volume3D)> {
        let h = self.labels(rep)?;
        let (x, p) = sample_statistics(&h, self.mu1, self.sigma1sq, split_seed(self.rep_seed(rep), 1))?;
        Ok((h, x, p))
    }
}

/// Ellipsoid blobs covering `target_p1 ± 0.01` of the grid. The last
/// ellipsoid is trimmed, keeping its voxels nearest the centre, when adding
/// it whole would overshoot the band.
pub fn generate_labels_blobs(dims: [usize; 3], target_p1: f64, rng: &mut Stream) -> Result<Volume3D> {
    if !(target_p1 > 0.01 && target_p1 < 0.9) {
        return Err(Error::InvalidArgument(format!("p1 must lie in (0.01, 0.9), got {target_p1}")));
    }
    let m: usize = dims.iter().product();
    let lo = ((target_p1 - 0.01) * m as f64).ceil() as usize;
    let hi = ((target_p1 + 0.01) * m as f64).floor() as usize;
    let goal = (target_p1 * m as f64).round() as usize;
    let mut labels = vec![0.0; m];
    let mut count = 0;
    while count < lo {
        let centre: [f64; 3] = std::array::from_fn(|a| rng.uniform() * dims[a] as f64);
        let semi: [f64; 3] = std::array::from_fn(|_| rng.uniform_in(2.0, 6.0));
        let mut fresh: Vec<(f64, usize)> = Vec::new();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let r2: f64 = [x, y, z]
                        .iter()
                        .enumerate()
                        .map(|(a, &c)| ((c as f64 + 0.5 - centre[a]) / semi[a]).powi(2))
                        .sum();
                    let i = x + dims[0] * (y + dims[1] * z);
                    if r2 <= 1.0 && labels[i] == 0.0 {
                        fresh.push((r2, i));
                    }
                }
            }
        }
        if count + fresh.len() > hi {
            fresh.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            fresh.truncate(goal - count);
        }
        count += fresh.len();
        for (_, i) in fresh {
            labels[i] = 1.0;
        }
    }
    Volume3D::new(dims, labels)
}

/// Independent Bernoulli(`p1`) labels in linear order.
pub fn generate_labels_iid(dims: [usize; 3], p1: f64, rng: &mut Stream) -> Volume3D {
    let m = dims.iter().product();
    let data = (0..m).map(|_| if rng.uniform() < p1 { 1.0 } else { 0.0 }).collect();
    Volume3D::new(dims, data).expect("length matches")
}

/// Draw `x_i ~ N(0,1)` for nulls and `½N(μ1,σ1²) + ½N(2,1)` for signals,
/// voxel `i` using its own stream `Stream::child(seed, i)`.
pub fn sample_statistics(h: &Volume3D, mu1: f64, sigma1sq: f64, seed: u64) -> Result<(Volume3D, Volume3D)> {
    let sd1 = sigma1sq.sqrt();
    let mut x = Vec::with_capacity(h.len());
    for (i, &label) in h.data().iter().enumerate() {
        let mut s = Stream::child(seed, i as u64);
        let v = if !h.is_active(i) {
            0.0
        } else if label == 0.0 {
            s.normal()
        } else if label == 1.0 {
            if s.uniform() < 0.5 {
                s.normal_with(mu1, sd1)
            } else {
                s.normal_with(2.0, 1.0)
            }
        } else {
            return Err(Error::OutOfRange {
                kind: "label",
                index: i,
                value: label,
            });
        };
        x.push(v);
    }
    let x = h.with_data(x)?;
    let p = z_to_pvalue(&x)?;
    Ok((x, p))
}

/// Signal density `½φ((x−μ1)/σ1)/σ1 + ½φ(x−2)`.
pub fn signal_density(x: f64, mu1: f64, sigma1sq: f64) -> f64 {
    0.5 * normal::pdf_with(x, mu1, sigma1sq) + 0.5 * normal::pdf_with(x, 2.0, 1.0)
}

/// Exact posterior null probability under the iid two-group model.
pub fn oracle_lis_iid(x: &Volume3D, pi0: f64, mu1: f64, sigma1sq: f64) -> Result<LisMap> {
    if !(pi0 > 0.0 && pi0 < 1.0) {
        return Err(Error::InvalidArgument(format!("pi0 must lie in (0, 1), got {pi0}")));
    }
    // In log space so that far-tail statistics do not underflow to 0/0.
    let log_pdf = |v: f64, mean: f64, var: f64| -0.5 * (std::f64::consts::TAU * var).ln() - (v - mean).powi(2) / (2.0 * var);
    let lis = x.map_values(|v| {
        let null = pi0.ln() + log_pdf(v, 0.0, 1.0);
        let (a, b) = (log_pdf(v, mu1, sigma1sq), log_pdf(v, 2.0, 1.0));
        let alt = (1.0 - pi0).ln() + 0.5f64.ln() + a.max(b) + (-(a - b).abs()).exp().ln_1p();
        1.0 / (1.0 + (alt - null).exp())
    });
    LisMap::new(lis)
}

/// Confusion counts of one outcome against the truth (1 = signal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub n00: usize,
    pub n10: usize,
    pub n01: usize,
    pub n11: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRecord {
    #[serde(flatten)]
    pub confusion: Confusion,
    /// Non-rejections.
    pub a: usize,
    /// Rejections.
    pub r: usize,
    pub m0: usize,
    pub m1: usize,
    pub fdp: f64,
    pub fnp: f64,
    pub tp: usize,
}

pub fn compute_metrics(outcome: &TestOutcome, truth: &Volume3D) -> Result<MetricsRecord> {
    if !outcome.rejections.same_layout(truth) {
        return Err(Error::Shape("outcome and truth differ in layout".into()));
    }
    let mut c = Confusion {
        n00: 0,
        n10: 0,
        n01: 0,
        n11: 0,
    };
    for i in truth.active_indices() {
        let signal = match truth.data()[i] {
            0.0 => false,
            1.0 => true,
            value => {
                return Err(Error::OutOfRange {
                    kind: "label",
                    index: i,
                    value,
                })
            }
        };
        match (signal, outcome.is_rejected(i)) {
            (false, false) => c.n00 += 1,
            (false, true) => c.n10 += 1,
            (true, false) => c.n01 += 1,
            (true, true) => c.n11 += 1,
        }
    }
    let r = c.n10 + c.n11;
    let a = c.n00 + c.n01;
    Ok(MetricsRecord {
        confusion: c,
        a,
        r,
        m0: c.n00 + c.n10,
        m1: c.n01 + c.n11,
        fdp: c.n10 as f64 / r.max(1) as f64,
        fnp: c.n01 as f64 / a.max(1) as f64,
        tp: c.n11,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bh,
    Qvalue,
    Localfdr,
    Deepfdr,
    OracleLis,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bh => "bh",
            Method::Qvalue => "qvalue",
            Method::Localfdr => "localfdr",
            Method::Deepfdr => "deepfdr",
            Method::OracleLis => "oracle-lis",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bh" => Method::Bh,
            "qvalue" => Method::Qvalue,
            "localfdr" => Method::Localfdr,
            "deepfdr" => Method::Deepfdr,
            "oracle-lis" => Method::OracleLis,
            _ => return Err(Error::InvalidArgument(format!("unknown method `{s}`"))),
        })
    }
}

/// Apply `method` to one replication's data.
pub fn run_method(
    method: Method,
    setting: &SimSetting,
    x: &Volume3D,
    p: &Volume3D,
    alpha: f64,
    wnet: &WnetConfig,
) -> Result<TestOutcome> {
    match method {
        Method::Bh => bh(p, alpha),
        Method::Qvalue => qvalue(p, alpha),
        Method::Localfdr => local_fdr(x, alpha),
        Method::Deepfdr => Ok(deepfdr_pipeline(x, p, alpha, wnet)?.outcome),
        Method::OracleLis => {
            let lis = oracle_lis_iid(x, 1.0 - setting.target_p1, setting.mu1, setting.sigma1sq)?;
            let mut out = lis_threshold(&lis, alpha)?;
            out.method = Method::OracleLis.as_str().into();
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub alpha: f64,
    pub workers: usize,
    pub wnet: WnetConfig,
    /// Record wall times; otherwise `runtime_ms` is 0 so CSVs are
    /// byte-reproducible.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            workers: 1,
            wnet: WnetConfig::default(),
            timing: false,
        }
    }
}

/// One (replication, method) result.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRow {
    pub setting_id: String,
    pub mu1: f64,
    pub sigma1sq: f64,
    pub p1: f64,
    pub method: Method,
    pub rep: usize,
    pub seed: u64,
    /// `Err` holds the failure message.
    pub metrics: std::result::Result<MetricsRecord, String>,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub setting_id: String,
    pub method: Method,
    pub fdr: f64,
    pub fnr: f64,
    pub atp: f64,
    pub mean_runtime_ms: f64,
    pub sd_runtime_ms: f64,
    /// Replications that completed.
    pub completed: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicationReport {
    pub rows: Vec<ReplicationRow>,
    pub aggregates: Vec<Aggregate>,
}

pub const ROWS_HEADER: &str = "setting_id,mu1,sigma1sq,p1,method,rep,seed,FDP,FNP,TP,R,runtime_ms";
pub const AGGREGATE_HEADER: &str = "setting_id,method,FDR,FNR,ATP,mean_runtime_ms,sd_runtime_ms";

impl ReplicationReport {
    /// Per-row CSV; failed rows leave the metric fields empty.
    pub fn rows_csv(&self) -> String {
        let mut out = format!("{ROWS_HEADER}\n");
        for r in &self.rows {
            let metrics = match &r.metrics {
                Ok(m) => format!("{},{},{},{}", m.fdp, m.fnp, m.tp, m.r),
                Err(_) => ",,,".into(),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.setting_id,
                r.mu1,
                r.sigma1sq,
                r.p1,
                r.method.as_str(),
                r.rep,
                r.seed,
                metrics,
                r.runtime_ms
            )
            .unwrap();
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = format!("{AGGREGATE_HEADER}\n");
        for a in &self.aggregates {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                a.setting_id,
                a.method.as_str(),
                a.fdr,
                a.fnr,
                a.atp,
                a.mean_runtime_ms,
                a.sd_runtime_ms
            )
            .unwrap();
        }
        out
    }

    pub fn aggregate(&self, setting_id: &str, method: Method) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.setting_id == setting_id && a.method == method)
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn run_one(setting: &SimSetting, rep: usize, methods: &[Method], opts: &RunOptions) -> Vec<ReplicationRow> {
    let seed = setting.rep_seed(rep);
    let row = |method, metrics, runtime_ms| ReplicationRow {
        setting_id: setting.id.clone(),
        mu1: setting.mu1,
        sigma1sq: setting.sigma1sq,
        p1: setting.target_p1,
        method,
        rep,
        seed,
        metrics,
        runtime_ms,
    };
    let (h, x, p) = match setting.replicate(rep) {
        Ok(d) => d,
        Err(e) => return methods.iter().map(|&m| row(m, Err(e.to_string()), 0.0)).collect(),
    };
    let wnet = WnetConfig {
        seed: split_seed(seed, 2),
        ..opts.wnet.clone()
    };
    methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let result = run_method(method, setting, &x, &p, opts.alpha, &wnet).and_then(|o| compute_metrics(&o, &h));
            let ms = if opts.timing {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            row(method, result.map_err(|e| e.to_string()), ms)
        })
        .collect()
}

/// Run every method on every replication of every setting. Rows are ordered
/// by setting, replication, then method, whatever the worker count.
pub fn run_replications(settings: &[SimSetting], methods: &[Method], opts: &RunOptions) -> Result<ReplicationReport> {
    use rayon::prelude::*;

    crate::baselines::check_alpha(opts.alpha)?;
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods given".into()));
    }
    for s in settings {
        s.validate()?;
    }
    opts.wnet.validate()?;
    let jobs: Vec<(&SimSetting, usize)> = settings
        .iter()
        .flat_map(|s| (0..s.replications).map(move |r| (s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let rows: Vec<ReplicationRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, r)| run_one(s, r, methods, opts))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });

    let mut aggregates = Vec::new();
    for s in settings {
        for &method in methods {
            let done: Vec<&ReplicationRow> = rows
                .iter()
                .filter(|r| r.setting_id == s.id && r.method == method && r.metrics.is_ok())
                .collect();
            let metric = |f: fn(&MetricsRecord) -> f64| -> Vec<f64> {
                done.iter().map(|r| f(r.metrics.as_ref().unwrap())).collect()
            };
            let times: Vec<f64> = done.iter().map(|r| r.runtime_ms).collect();
            let (mean_runtime_ms, sd_runtime_ms) = mean_sd(&times);
            aggregates.push(Aggregate {
                setting_id: s.id.clone(),
                method,
                fdr: mean_sd(&metric(|m| m.fdp)).0,
                fnr: mean_sd(&metric(|m| m.fnp)).0,
                atp: mean_sd(&metric(|m| m.tp as f64)).0,
                mean_runtime_ms,
                sd_runtime_ms,
                completed: done.len(),
            });
        }
    }
    Ok(ReplicationReport { rows, aggregates })
}
