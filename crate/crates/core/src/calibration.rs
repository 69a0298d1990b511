//! Confidence calibration and the feedback loop that rebuilds it from
//! consensus outcomes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BoundingBox, DetectionId, HazardClass};
use crate::scalar::Scalar;

pub const CALIBRATION_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalibrationError {
    #[error("need at least {needed} resolved records, have {have}")]
    InsufficientData { needed: usize, have: usize },
}

/// Monotone piecewise-linear map from raw score to calibrated probability.
/// Flat beyond the outermost knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CalibrationTable<T = f64> {
    knots: Vec<(T, T)>,
}

impl<T: Scalar> Default for CalibrationTable<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> CalibrationTable<T> {
    pub fn identity() -> Self {
        CalibrationTable {
            knots: vec![(T::zero(), T::zero()), (T::one(), T::one())],
        }
    }

    pub fn knots(&self) -> &[(T, T)] {
        &self.knots
    }

    pub fn calibrated(&self, raw: T) -> T {
        let x = raw.clamp_to(T::zero(), T::one());
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if x <= first.0 {
            return first.1;
        }
        if x >= last.0 {
            return last.1;
        }
        let i = self.knots.partition_point(|k| k.0 <= x);
        let (x0, y0) = self.knots[i - 1];
        let (x1, y1) = self.knots[i];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Reliability table from (confidence, confirmed) pairs over 10
    /// equal-width bins, made monotone by pooling adjacent violators.
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = (T, bool)>) -> Self {
        let mut count = [0usize; CALIBRATION_BINS];
        let mut hits = [0usize; CALIBRATION_BINS];
        for (conf, confirmed) in outcomes {
            let c = conf.clamp_to(T::zero(), T::one());
            let b = (c * T::from_count(CALIBRATION_BINS))
                .floor()
                .to_usize()
                .unwrap_or(0)
                .min(CALIBRATION_BINS - 1);
            count[b] += 1;
            hits[b] += confirmed as usize;
        }
        // (center, accuracy, weight) blocks for pool-adjacent-violators
        let mut blocks: Vec<(Vec<T>, T, T)> = Vec::new();
        for b in 0..CALIBRATION_BINS {
            if count[b] == 0 {
                continue;
            }
            let center = (T::from_count(b) + T::lit(0.5)) / T::from_count(CALIBRATION_BINS);
            let w = T::from_count(count[b]);
            blocks.push((vec![center], T::from_count(hits[b]) / w, w));
            while blocks.len() >= 2 {
                let n = blocks.len();
                if blocks[n - 2].1 <= blocks[n - 1].1 {
                    break;
                }
                let (xs, v, w) = blocks.pop().expect("len >= 2");
                let prev = blocks.last_mut().expect("len >= 1");
                prev.1 = (prev.1 * prev.2 + v * w) / (prev.2 + w);
                prev.2 = prev.2 + w;
                prev.0.extend(xs);
            }
        }
        if blocks.is_empty() {
            return Self::identity();
        }
        let knots = blocks
            .into_iter()
            .flat_map(|(xs, v, _)| xs.into_iter().map(move |x| (x, v)))
            .collect();
        CalibrationTable { knots }
    }
}

/// `1 - calibrated probability`; non-increasing in `raw`.
pub fn calibrate_uncertainty<T: Scalar>(raw: T, table: &CalibrationTable<T>) -> T {
    (T::one() - table.calibrated(raw)).clamp_to(T::zero(), T::one())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusTruth {
    Confirmed,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedLabel {
    pub class: HazardClass,
    pub confidence: f64,
}

/// One resolved detection, appended once when consensus settles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub detection_id: DetectionId,
    pub predicted: PredictedLabel,
    pub consensus_truth: ConsensusTruth,
    pub geometry_correction: Option<BoundingBox>,
    #[serde(default)]
    pub class_correction: Option<HazardClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recalibration {
    pub table: CalibrationTable,
    pub threshold: f64,
    pub f1: f64,
    pub n_records: usize,
}

/// Candidate thresholds 0.05, 0.10, ..., 0.95.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (1..20).map(|i| i as f64 / 20.0)
}

pub fn f1_at(records: &[FeedbackRecord], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for r in records {
        let predicted = r.predicted.confidence >= threshold;
        let real = r.consensus_truth == ConsensusTruth::Confirmed;
        match (predicted, real) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let den = 2 * tp + fp + fneg;
    if den == 0 {
        0.0
    } else {
        2.0 * tp as f64 / den as f64
    }
}

/// Rebuilds the reliability table and picks the F1-maximising confidence
/// threshold (lowest wins ties).
pub fn recalibrate(
    records: &[FeedbackRecord],
    min_records: usize,
) -> Result<Recalibration, CalibrationError> {
    if records.len() < min_records {
        return Err(CalibrationError::InsufficientData {
            needed: min_records,
            have: records.len(),
        });
    }
    let table = CalibrationTable::from_outcomes(records.iter().map(|r| {
        (
            r.predicted.confidence,
            r.consensus_truth == ConsensusTruth::Confirmed,
        )
    }));
    let (threshold, f1) = threshold_grid()
        .map(|t| (t, f1_at(records, t)))
        .fold((0.05, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
    Ok(Recalibration {
        table,
        threshold,
        f1,
        n_records: records.len(),
    })
}
