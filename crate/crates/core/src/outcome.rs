use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{save_volume, Volume3D, VolumeKind};

/// Result of one multiple-testing procedure on one volume.
#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    /// 1 where the null was rejected; mask copied from the input.
    pub rejections: Volume3D,
    pub k: usize,
    pub alpha: f64,
    pub method: String,
    /// Per-voxel decision scores (LIS, q-values, local fdr), when the method
    /// produces them.
    pub scores: Option<Volume3D>,
}

impl TestOutcome {
    /// Build an outcome over the layout of `template` rejecting the voxels in
    /// `rejected` (linear indices, all active).
    pub fn from_rejected(
        template: &Volume3D,
        rejected: &[usize],
        alpha: f64,
        method: impl Into<String>,
        scores: Option<Volume3D>,
    ) -> Self {
        let mut data = vec![0.0; template.len()];
        for &i in rejected {
            debug_assert!(template.is_active(i));
            data[i] = 1.0;
        }
        Self {
            rejections: template.with_data(data).expect("same length"),
            k: rejected.len(),
            alpha,
            method: method.into(),
            scores,
        }
    }

    pub fn is_rejected(&self, index: usize) -> bool {
        self.rejections.data()[index] == 1.0
    }

    /// Linear indices of the rejected voxels, ascending.
    pub fn rejected_indices(&self) -> Vec<usize> {
        (0..self.rejections.len()).filter(|&i| self.is_rejected(i)).collect()
    }

    pub fn summary(&self) -> OutcomeSummary {
        OutcomeSummary {
            method: self.method.clone(),
            alpha: self.alpha,
            k: self.k,
            m: self.rejections.active_count(),
            flip_applied: None,
            alpha_q_used: None,
        }
    }

    /// Write `<prefix>.vol` (rejections), `<prefix>_scores.vol` when scores
    /// exist, and `<prefix>.json` holding `summary`.
    pub fn save(&self, prefix: &Path, summary: &OutcomeSummary) -> Result<()> {
        save_volume(&self.rejections, prefix, VolumeKind::Rejection)?;
        if let Some(scores) = &self.scores {
            let mut name = prefix.as_os_str().to_owned();
            name.push("_scores");
            save_volume(scores, Path::new(&name), scores_kind(scores))?;
        }
        let mut json = prefix.as_os_str().to_owned();
        json.push(".json");
        let text = serde_json::to_string_pretty(summary).expect("summary serializes");
        fs::write(&json, text).map_err(|e| Error::io(Path::new(&json), e))
    }
}

fn scores_kind(scores: &Volume3D) -> VolumeKind {
    if scores.validate(VolumeKind::Probability).is_ok() {
        VolumeKind::Probability
    } else {
        VolumeKind::Statistic
    }
}

/// JSON summary written next to a rejection volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub method: String,
    pub alpha: f64,
    pub k: usize,
    pub m: usize,
    pub flip_applied: Option<bool>,
    pub alpha_q_used: Option<f64>,
}
