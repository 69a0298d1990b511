//! Detection evaluation: IoU, greedy class-aware matching, all-points
//! interpolated average precision and dataset-level precision/recall/mAP.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BoundingBox, HazardClass};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("dataset contains no images")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Prediction<T = f64> {
    #[serde(rename = "box")]
    pub bbox: BoundingBox<T>,
    pub class: HazardClass,
    pub score: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Truth<T = f64> {
    #[serde(rename = "box")]
    pub bbox: BoundingBox<T>,
    pub class: HazardClass,
}

/// Image id -> ground-truth boxes.
pub type GroundTruth<T = f64> = BTreeMap<String, Vec<Truth<T>>>;
/// Image id -> predicted boxes.
pub type PredictionsByImage<T = f64> = BTreeMap<String, Vec<Prediction<T>>>;

/// Intersection over union; 0 for disjoint boxes.
pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp_to(T::zero(), T::one())
}

fn cmp_coords<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> Ordering {
    a.to_array()
        .iter()
        .zip(b.to_array().iter())
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Prediction indices by descending score, ties by box coordinates.
pub fn rank_order<T: Scalar>(preds: &[Prediction<T>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&i, &j| {
        preds[j]
            .score
            .partial_cmp(&preds[i].score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| cmp_coords(&preds[i].bbox, &preds[j].bbox))
            .then(i.cmp(&j))
    });
    idx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOutcome<T> {
    pub pred: usize,
    pub truth: Option<usize>,
    pub iou: T,
}

/// Greedy one-to-one matching in confidence order. Each prediction takes the
/// highest-IoU unmatched truth of the same class with IoU >= `threshold`.
/// Outcomes are returned in rank order.
pub fn match_detections<T: Scalar>(
    preds: &[Prediction<T>],
    truths: &[Truth<T>],
    threshold: T,
) -> Vec<MatchOutcome<T>> {
    let mut taken = vec![false; truths.len()];
    rank_order(preds)
        .into_iter()
        .map(|p| {
            let mut best: Option<(usize, T)> = None;
            for (t, truth) in truths.iter().enumerate() {
                if taken[t] || truth.class != preds[p].class {
                    continue;
                }
                let v = iou(&preds[p].bbox, &truth.bbox);
                if v >= threshold && best.map_or(true, |(_, b)| v > b) {
                    best = Some((t, v));
                }
            }
            if let Some((t, _)) = best {
                taken[t] = true;
            }
            MatchOutcome {
                pred: p,
                truth: best.map(|(t, _)| t),
                iou: best.map_or(T::zero(), |(_, v)| v),
            }
        })
        .collect()
}

/// All-points interpolated AP from ranked true-positive flags.
///
/// Precision at each recall level is the maximum precision at any rank with
/// recall at least that high. AP is 1 when there are no truths and no
/// predictions, and 0 when there are predictions but no truths.
pub fn ap_from_ranked<T: Scalar>(tp_flags: &[bool], n_truth: usize) -> T {
    if n_truth == 0 {
        return if tp_flags.is_empty() { T::one() } else { T::zero() };
    }
    let n = T::from_count(n_truth);
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, &hit) in tp_flags.iter().enumerate() {
        tp += hit as usize;
        precision.push(T::from_count(tp) / T::from_count(k + 1));
        recall.push(T::from_count(tp) / n);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = T::zero();
    let mut prev_recall = T::zero();
    for k in 0..tp_flags.len() {
        if tp_flags[k] {
            ap = ap + (recall[k] - prev_recall) * precision[k];
            prev_recall = recall[k];
        }
    }
    ap
}

/// AP for one image's predictions against its truths.
pub fn average_precision<T: Scalar>(
    preds: &[Prediction<T>],
    truths: &[Truth<T>],
    threshold: T,
) -> T {
    let flags: Vec<bool> = match_detections(preds, truths, threshold)
        .iter()
        .map(|m| m.truth.is_some())
        .collect();
    ap_from_ranked(&flags, truths.len())
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds<T: Scalar>() -> [T; 10] {
    std::array::from_fn(|i| T::lit((50 + 5 * i) as f64 / 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClassMetrics<T = f64> {
    pub class: HazardClass,
    pub n_truth: usize,
    pub n_pred: usize,
    pub true_positives: usize,
    pub precision: T,
    pub recall: T,
    pub ap_50: T,
    pub ap_50_95: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MetricsReport<T = f64> {
    pub box_precision: T,
    pub recall: T,
    pub map_50: T,
    pub map_50_95: T,
    pub per_class: Vec<ClassMetrics<T>>,
    pub mean_latency_s: T,
    pub n_images: usize,
    pub n_sites_found: usize,
}

impl<T: Scalar> MetricsReport<T> {
    pub fn with_latency(mut self, mean_latency_s: T) -> Self {
        self.mean_latency_s = mean_latency_s;
        self
    }

    pub fn with_sites(mut self, n_sites_found: usize) -> Self {
        self.n_sites_found = n_sites_found;
        self
    }
}

struct Ranked<'a, T> {
    score: T,
    image: &'a str,
    bbox: BoundingBox<T>,
    tp: bool,
}

fn ratio<T: Scalar>(num: usize, den: usize) -> T {
    if den == 0 {
        T::one()
    } else {
        T::from_count(num) / T::from_count(den)
    }
}

/// Dataset-level metrics. Precision and recall are counted at IoU 0.5;
/// mAP averages over every class present in truths or predictions.
///
/// Precision is 1 when there are no predictions and recall is 1 when there
/// are no truths.
pub fn evaluate<T: Scalar>(
    preds: &PredictionsByImage<T>,
    truth: &GroundTruth<T>,
) -> Result<MetricsReport<T>, MetricsError> {
    let images: BTreeSet<&str> = preds
        .keys()
        .chain(truth.keys())
        .map(String::as_str)
        .collect();
    if images.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let empty_p: Vec<Prediction<T>> = Vec::new();
    let empty_t: Vec<Truth<T>> = Vec::new();
    let thresholds = coco_thresholds::<T>();

    let mut classes: BTreeSet<HazardClass> = BTreeSet::new();
    let mut n_truth: BTreeMap<HazardClass, usize> = BTreeMap::new();
    let mut n_pred: BTreeMap<HazardClass, usize> = BTreeMap::new();
    // per threshold, per class: ranked outcomes
    let mut ranked: Vec<BTreeMap<HazardClass, Vec<Ranked<'_, T>>>> =
        (0..thresholds.len()).map(|_| BTreeMap::new()).collect();

    for &img in &images {
        let p = preds.get(img).unwrap_or(&empty_p);
        let t = truth.get(img).unwrap_or(&empty_t);
        for x in t {
            classes.insert(x.class);
            *n_truth.entry(x.class).or_default() += 1;
        }
        for x in p {
            classes.insert(x.class);
            *n_pred.entry(x.class).or_default() += 1;
        }
        for (ti, &thr) in thresholds.iter().enumerate() {
            for m in match_detections(p, t, thr) {
                let pred = &p[m.pred];
                ranked[ti].entry(pred.class).or_default().push(Ranked {
                    score: pred.score,
                    image: img,
                    bbox: pred.bbox,
                    tp: m.truth.is_some(),
                });
            }
        }
    }

    let mut per_class = Vec::with_capacity(classes.len());
    for &class in &classes {
        let nt = n_truth.get(&class).copied().unwrap_or(0);
        let np = n_pred.get(&class).copied().unwrap_or(0);
        let mut aps = [T::zero(); 10];
        let mut tp_50 = 0;
        for (ti, per_thr) in ranked.iter_mut().enumerate() {
            let list = per_thr.entry(class).or_default();
            list.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| a.image.cmp(b.image))
                    .then_with(|| cmp_coords(&a.bbox, &b.bbox))
            });
            let flags: Vec<bool> = list.iter().map(|r| r.tp).collect();
            if ti == 0 {
                tp_50 = flags.iter().filter(|&&f| f).count();
            }
            aps[ti] = ap_from_ranked(&flags, nt);
        }
        per_class.push(ClassMetrics {
            class,
            n_truth: nt,
            n_pred: np,
            true_positives: tp_50,
            precision: ratio(tp_50, np),
            recall: ratio(tp_50, nt),
            ap_50: aps[0],
            ap_50_95: aps.iter().copied().sum::<T>() / T::from_count(aps.len()),
        });
    }

    let tp: usize = per_class.iter().map(|c| c.true_positives).sum();
    let total_pred: usize = n_pred.values().sum();
    let total_truth: usize = n_truth.values().sum();
    let mean = |f: fn(&ClassMetrics<T>) -> T| -> T {
        if per_class.is_empty() {
            T::one()
        } else {
            per_class.iter().map(f).sum::<T>() / T::from_count(per_class.len())
        }
    };
    Ok(MetricsReport {
        box_precision: ratio(tp, total_pred),
        recall: ratio(tp, total_truth),
        map_50: mean(|c| c.ap_50),
        map_50_95: mean(|c| c.ap_50_95),
        per_class,
        mean_latency_s: T::zero(),
        n_images: images.len(),
        n_sites_found: 0,
    })
}
