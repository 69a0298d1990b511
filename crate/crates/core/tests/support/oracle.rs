//! Brute-force reference implementations used as test oracles.

use std::collections::{BTreeMap, BTreeSet};

use hazardpipe_core::domain::HazardClass;
use hazardpipe_core::metrics::{GroundTruth, PredictionsByImage};

pub struct OracleMetrics {
    pub box_precision: f64,
    pub recall: f64,
    pub map_50: f64,
    pub map_50_95: f64,
    pub ap: BTreeMap<HazardClass, [f64; 10]>,
}

fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = a[2].min(b[2]) - a[0].max(b[0]);
    let ih = a[3].min(b[3]) - a[1].max(b[1]);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

/// Precision at rank k is TP(k)/k; AP sums, over every true positive, the
/// best precision at that rank or later, divided by the number of truths.
fn all_points_ap(flags: &[bool], n_truth: usize) -> f64 {
    if n_truth == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let prec: Vec<f64> = (0..flags.len())
        .map(|k| flags[..=k].iter().filter(|f| **f).count() as f64 / (k + 1) as f64)
        .collect();
    let mut ap = 0.0;
    for k in 0..flags.len() {
        if flags[k] {
            let best = prec[k..].iter().copied().fold(0.0, f64::max);
            ap += best / n_truth as f64;
        }
    }
    ap
}

/// Requires globally distinct prediction scores.
pub fn evaluate(preds: &PredictionsByImage, truth: &GroundTruth) -> OracleMetrics {
    let images: BTreeSet<&String> = preds.keys().chain(truth.keys()).collect();
    let classes: BTreeSet<HazardClass> = preds
        .values()
        .flatten()
        .map(|p| p.class)
        .chain(truth.values().flatten().map(|t| t.class))
        .collect();
    let mut ap = BTreeMap::new();
    let mut tp50 = 0usize;
    for &class in &classes {
        let n_truth = truth.values().flatten().filter(|t| t.class == class).count();
        let mut aps = [0.0; 10];
        for (ti, slot) in aps.iter_mut().enumerate() {
            let thr = (50 + 5 * ti) as f64 / 100.0;
            // (score, tp) for every prediction of this class
            let mut scored: Vec<(f64, bool)> = Vec::new();
            for img in &images {
                let ps: Vec<_> = preds
                    .get(*img)
                    .map(|v| v.iter().filter(|p| p.class == class).collect())
                    .unwrap_or_default();
                let ts: Vec<_> = truth
                    .get(*img)
                    .map(|v| v.iter().filter(|t| t.class == class).collect())
                    .unwrap_or_default();
                let mut order: Vec<usize> = (0..ps.len()).collect();
                order.sort_by(|&a, &b| ps[b].score.partial_cmp(&ps[a].score).unwrap());
                let mut used = vec![false; ts.len()];
                for i in order {
                    let mut best: Option<(usize, f64)> = None;
                    for (j, t) in ts.iter().enumerate() {
                        if used[j] {
                            continue;
                        }
                        let v = iou(ps[i].bbox.to_array(), t.bbox.to_array());
                        if v >= thr && best.is_none_or(|(_, b)| v > b) {
                            best = Some((j, v));
                        }
                    }
                    if let Some((j, _)) = best {
                        used[j] = true;
                    }
                    scored.push((ps[i].score, best.is_some()));
                }
            }
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let flags: Vec<bool> = scored.iter().map(|s| s.1).collect();
            if ti == 0 {
                tp50 += flags.iter().filter(|f| **f).count();
            }
            *slot = all_points_ap(&flags, n_truth);
        }
        ap.insert(class, aps);
    }
    let n_pred: usize = preds.values().map(Vec::len).sum();
    let n_truth: usize = truth.values().map(Vec::len).sum();
    let frac = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let mean = |f: &dyn Fn(&[f64; 10]) -> f64| {
        if ap.is_empty() {
            1.0
        } else {
            ap.values().map(f).sum::<f64>() / ap.len() as f64
        }
    };
    OracleMetrics {
        box_precision: frac(tp50, n_pred),
        recall: frac(tp50, n_truth),
        map_50: mean(&|a| a[0]),
        map_50_95: mean(&|a| a.iter().sum::<f64>() / 10.0),
        ap,
    }
}

/// Outcome of a quorum of three by enumeration of all 2^3 vote patterns:
/// `(P(confirmed), P(rejected), P(escalated))` when the hazard is real,
/// each validator affirms with probability `p[i]` and carries weight `w[i]`.
pub fn three_vote_outcomes(p: [f64; 3], w: [f64; 3], tau_hi: f64, tau_lo: f64) -> (f64, f64, f64) {
    let (mut c, mut r, mut e) = (0.0, 0.0, 0.0);
    for pattern in 0..8u32 {
        let mut prob = 1.0;
        let (mut yes, mut all) = (0.0, 0.0);
        for i in 0..3 {
            let affirm = pattern >> i & 1 == 1;
            prob *= if affirm { p[i] } else { 1.0 - p[i] };
            all += w[i];
            if affirm {
                yes += w[i];
            }
        }
        let score = yes / all;
        if score >= tau_hi {
            c += prob;
        } else if score <= tau_lo {
            r += prob;
        } else {
            e += prob;
        }
    }
    (c, r, e)
}

/// Expected agreement for equally weighted validators of accuracy `p`:
/// the status must equal the truth, and escalations count against.
pub fn three_vote_agreement(p: f64, tau_hi: f64, tau_lo: f64) -> f64 {
    three_vote_outcomes([p; 3], [1.0; 3], tau_hi, tau_lo).0
}
