//! LIS thresholding, Dice overlap and class-label flipping.

use std::collections::HashSet;

use crate::baselines::{check_alpha, qvalue_set, qvalues, sorted_active};
use crate::error::{Error, Result};
use crate::ncut::build_weight_graph;
use crate::outcome::{OutcomeSummary, TestOutcome};
use crate::volume::{pad_to, Volume3D, VolumeKind};
use crate::wnet::{TrainingLog, WnetConfig, WnetModel};

/// Estimated local index of significance per voxel, in [0, 1] on the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LisMap(Volume3D);

impl LisMap {
    pub fn new(values: Volume3D) -> Result<Self> {
        values.validate(VolumeKind::Probability)?;
        Ok(Self(values))
    }

    pub fn volume(&self) -> &Volume3D {
        &self.0
    }

    pub fn into_volume(self) -> Volume3D {
        self.0
    }

    /// `1 − LIS` on every voxel.
    pub fn complement(&self) -> Self {
        Self(self.0.map_values(|v| 1.0 - v))
    }
}

/// Largest `k` such that the mean of the first `k` sorted values is `≤ alpha`.
pub(crate) fn prefix_mean_cutoff(sorted: &[(f64, usize)], alpha: f64) -> usize {
    let mut sum = 0.0;
    let mut k = 0;
    for (j, &(v, _)) in sorted.iter().enumerate() {
        sum += v;
        if sum <= alpha * (j + 1) as f64 {
            k = j + 1;
        }
    }
    k
}

/// Indices selected by the ascending prefix-mean rule on the active voxels.
pub(crate) fn prefix_mean_select(scores: &Volume3D, alpha: f64) -> Result<Vec<usize>> {
    let sorted = sorted_active(scores)?;
    let k = prefix_mean_cutoff(&sorted, alpha);
    Ok(sorted[..k].iter().map(|&(_, i)| i).collect())
}

/// Reject the `k` smallest LIS values, `k` the longest prefix whose mean is
/// at most `alpha`. Ties are ordered by linear index.
pub fn lis_threshold(lis: &LisMap, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let rejected = prefix_mean_select(lis.volume(), alpha)?;
    Ok(TestOutcome::from_rejected(
        lis.volume(),
        &rejected,
        alpha,
        "deepfdr",
        Some(lis.volume().clone()),
    ))
}

/// `2|A∩B| / (|A|+|B|)`; two empty sets give 1.
pub fn dice(a: &[usize], b: &[usize]) -> f64 {
    let a: HashSet<usize> = a.iter().copied().collect();
    let b: HashSet<usize> = b.iter().copied().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64
}

/// Where the reference discovery set for flipping came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceSet {
    /// Voxels with q-value at most `level`.
    QValue { level: f64 },
    /// Voxels with p-value strictly below `level`.
    PValue { level: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlipDecision {
    pub lis: LisMap,
    pub flipped: bool,
    pub reference: ReferenceSet,
    pub reference_size: usize,
    pub dice_keep: f64,
    pub dice_flip: f64,
}

impl FlipDecision {
    pub fn alpha_q_used(&self) -> Option<f64> {
        match self.reference {
            ReferenceSet::QValue { level } => Some(level),
            ReferenceSet::PValue { .. } => None,
        }
    }
}

/// Smallest acceptable reference set: `max(10, ⌈0.001 m⌉)`.
pub fn min_reference_size(m: usize) -> usize {
    10.max((m as f64 * 0.001).ceil() as usize)
}

const Q_LADDER: [f64; 6] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0];
const P_LADDER: [f64; 4] = [1.0, 0.5, 0.2, 0.1];

/// Reference discovery set used to orient the segmentation classes.
pub fn reference_set(p: &Volume3D, alpha: f64) -> Result<(ReferenceSet, Vec<usize>)> {
    check_alpha(alpha)?;
    let m = p.active_count();
    let need = min_reference_size(m);
    let (q, _) = qvalues(p)?;
    // Levels at or above 1 would select every voxel and are skipped.
    for level in Q_LADDER.iter().map(|f| f * alpha).filter(|&l| l < 1.0) {
        let set = qvalue_set(&q, level);
        if set.len() >= need {
            return Ok((ReferenceSet::QValue { level }, set));
        }
    }
    let below = |level: f64| -> Vec<usize> {
        p.active_indices().into_iter().filter(|&i| p.data()[i] < level).collect()
    };
    for level in P_LADDER.iter().map(|f| f * alpha) {
        let set = below(level);
        if set.len() >= need {
            return Ok((ReferenceSet::PValue { level }, set));
        }
    }
    Ok((ReferenceSet::PValue { level: alpha }, below(alpha)))
}

/// Orient the class-0 probability map so that its discoveries agree best
/// with the reference set; ties keep the map unchanged.
pub fn flip_labels(prob: &Volume3D, p: &Volume3D, alpha: f64) -> Result<FlipDecision> {
    if !prob.same_layout(p) {
        return Err(Error::Shape("probability and p-value volumes differ in layout".into()));
    }
    let keep = LisMap::new(prob.clone())?;
    let flip = keep.complement();
    let (reference, set) = reference_set(p, alpha)?;
    let dice_keep = dice(&prefix_mean_select(keep.volume(), alpha)?, &set);
    let dice_flip = dice(&prefix_mean_select(flip.volume(), alpha)?, &set);
    let flipped = dice_keep < dice_flip;
    Ok(FlipDecision {
        lis: if flipped { flip } else { keep },
        flipped,
        reference,
        reference_size: set.len(),
        dice_keep,
        dice_flip,
    })
}

/// Everything the end-to-end pipeline produces.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    /// Rejections, with the estimated LIS map as scores.
    pub outcome: TestOutcome,
    pub flip: FlipDecision,
    pub log: TrainingLog,
    pub model: WnetModel,
}

impl PipelineResult {
    pub fn summary(&self) -> OutcomeSummary {
        OutcomeSummary {
            flip_applied: Some(self.flip.flipped),
            alpha_q_used: self.flip.alpha_q_used(),
            ..self.outcome.summary()
        }
    }
}

/// Pad, build the affinity graph, train the W-net, predict, orient the
/// classes, and threshold. Errors carry the name of the failing stage.
pub fn deepfdr_pipeline(x: &Volume3D, p: &Volume3D, alpha: f64, cfg: &WnetConfig) -> Result<PipelineResult> {
    check_alpha(alpha)?;
    if !x.same_layout(p) {
        return Err(Error::Shape("statistic and p-value volumes differ in layout".into()).at_stage("input"));
    }
    p.validate(VolumeKind::Pvalue).map_err(|e| e.at_stage("input"))?;
    let padded = pad_to(x, cfg.padded_dims, 0.0).map_err(|e| e.at_stage("pad"))?;
    let graph = build_weight_graph(&padded, cfg.ncut).map_err(|e| e.at_stage("graph"))?;
    let mut model = WnetModel::new(cfg.clone()).map_err(|e| e.at_stage("build"))?;
    let log = model.train(x, p, &graph).map_err(|e| e.at_stage("train"))?;
    drop(graph);
    let prob = model.predict_prob(x).map_err(|e| e.at_stage("predict"))?;
    let flip = flip_labels(&prob, p, alpha).map_err(|e| e.at_stage("flip"))?;
    let outcome = lis_threshold(&flip.lis, alpha).map_err(|e| e.at_stage("threshold"))?;
    Ok(PipelineResult {
        outcome,
        flip,
        log,
        model,
    })
}
