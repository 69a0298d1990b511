use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{matches_color, random_box, ScenarioConfig, SimError, SimImage, IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::detector::{Capabilities, DetectorBackend, DetectorError, FeatureStack, ImageInput, RawDetection};
use crate::domain::{BlobId, BoundingBox, HazardClass};
use crate::metrics::Prediction;

/// Detector error model. Rates are realized as exact quotas over the
/// scenario (rounded), so small datasets still hit their targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorModel {
    /// Share of truth boxes never reported.
    pub miss_rate: f64,
    /// Spurious detections per image.
    pub false_positive_rate: f64,
    /// Standard deviation of box edge noise, capped at 8% of the box side.
    pub localization_jitter_px: f64,
    /// Row = true class, column = reported class, in `HazardClass::ALL` order.
    pub confusion_matrix: Vec<Vec<f64>>,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self::perfect()
    }
}

fn confusion(rate: f64) -> Vec<Vec<f64>> {
    let k = HazardClass::ALL.len();
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { 1.0 - rate } else { rate / (k - 1) as f64 })
                .collect()
        })
        .collect()
}

impl ErrorModel {
    pub fn perfect() -> Self {
        ErrorModel {
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            localization_jitter_px: 0.0,
            confusion_matrix: confusion(0.0),
        }
    }

    /// Solves for miss and false-positive rates giving `precision` and
    /// `recall` at IoU 0.5 when a `confusion_rate` share of kept boxes
    /// carries the wrong class.
    ///
    /// kept = r / (1 - c), spurious per truth = r / p - kept.
    pub fn calibrated(precision: f64, recall: f64, confusion_rate: f64, mean_truths_per_image: f64) -> Self {
        let kept = recall / (1.0 - confusion_rate);
        let spurious_per_truth = recall / precision - kept;
        ErrorModel {
            miss_rate: 1.0 - kept,
            false_positive_rate: spurious_per_truth * mean_truths_per_image,
            localization_jitter_px: 4.0,
            confusion_matrix: confusion(confusion_rate),
        }
    }

    pub fn mean_confusion(&self) -> f64 {
        let k = self.confusion_matrix.len().max(1);
        (0..self.confusion_matrix.len())
            .map(|i| 1.0 - self.confusion_matrix[i][i])
            .sum::<f64>()
            / k as f64
    }

    /// Expected (precision, recall) at IoU 0.5.
    pub fn expected(&self, mean_truths_per_image: f64) -> (f64, f64) {
        let kept = 1.0 - self.miss_rate;
        let hits = kept * (1.0 - self.mean_confusion());
        let spurious = self.false_positive_rate / mean_truths_per_image;
        let p = if kept + spurious == 0.0 { 1.0 } else { hits / (kept + spurious) };
        (p, hits)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InfeasibleConfig(m.into()));
        if !(0.0..=1.0).contains(&self.miss_rate) || !(0.0..=1.0).contains(&self.false_positive_rate) {
            return bad("error model rates outside [0, 1]");
        }
        if !(self.localization_jitter_px >= 0.0) {
            return bad("negative localization jitter");
        }
        let k = HazardClass::ALL.len();
        if self.confusion_matrix.len() != k || self.confusion_matrix.iter().any(|r| r.len() != k) {
            return bad("confusion matrix must be 5 x 5");
        }
        for row in &self.confusion_matrix {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("confusion matrix rows must be distributions");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Outcome {
    /// Correct class over a truth box.
    Hit { truth: usize },
    /// Wrong class over a truth box.
    Confused { truth: usize, true_class: HazardClass },
    /// Nothing there.
    Spurious,
}

/// Pixels that make a planned detection visible: `base` pixels inside
/// `region` match the object color in the unmasked image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub region: BoundingBox,
    pub class: HazardClass,
    pub base: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedDetection {
    pub bbox: BoundingBox,
    pub class: HazardClass,
    pub score: f64,
    pub outcome: Outcome,
    pub support: Option<Support>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImagePlan {
    pub detections: Vec<PlannedDetection>,
}

impl ImagePlan {
    pub fn predictions(&self) -> Vec<Prediction> {
        self.detections
            .iter()
            .map(|d| Prediction {
                bbox: d.bbox,
                class: d.class,
                score: d.score,
            })
            .collect()
    }
}

/// What the mock detector reports per image, keyed by stored blob id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MockPlans(Arc<BTreeMap<BlobId, ImagePlan>>);

fn count_matching(img: &image::RgbImage, region: &BoundingBox, class: HazardClass) -> u32 {
    let [x0, y0, x1, y1] = region.to_array();
    let mut n = 0;
    for y in (y0 as u32)..(y1.ceil() as u32).min(img.height()) {
        for x in (x0 as u32)..(x1.ceil() as u32).min(img.width()) {
            n += matches_color(img.get_pixel(x, y), class) as u32;
        }
    }
    n
}

fn jitter(b: &BoundingBox, sd: f64, rng: &mut impl Rng) -> BoundingBox {
    if sd == 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, sd).expect("finite sd");
    let cap_x = 0.08 * b.width();
    let cap_y = 0.08 * b.height();
    let mut e = |cap: f64| n.sample(rng).clamp(-cap, cap);
    let x0 = (b.x_min() + e(cap_x)).max(0.0);
    let y0 = (b.y_min() + e(cap_y)).max(0.0);
    let x1 = (b.x_max() + e(cap_x)).min(IMAGE_WIDTH as f64);
    let y1 = (b.y_max() + e(cap_y)).min(IMAGE_HEIGHT as f64);
    BoundingBox::new(x0, y0, x1, y1).expect("jitter below 8% keeps the box non-empty")
}

impl MockPlans {
    pub fn new(plans: BTreeMap<BlobId, ImagePlan>) -> Self {
        MockPlans(Arc::new(plans))
    }

    pub fn get(&self, blob: &BlobId) -> Option<&ImagePlan> {
        self.0.get(blob)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Draws the detector's behaviour for every image in one pass.
    pub fn plan(images: &[SimImage], cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<Self, SimError> {
        let em = &cfg.detector_error_model;
        em.validate()?;
        let thr = cfg.score_floor;
        let all: Vec<(usize, usize)> = images
            .iter()
            .enumerate()
            .flat_map(|(i, img)| (0..img.truths.len()).map(move |t| (i, t)))
            .collect();
        let n_miss = (em.miss_rate * all.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.shuffle(rng);
        let mut kept: Vec<(usize, usize)> = order[n_miss.min(all.len())..].iter().map(|&k| all[k]).collect();
        kept.sort_unstable();

        // per-class confusion quotas
        let mut reported: BTreeMap<(usize, usize), HazardClass> = BTreeMap::new();
        for (ci, &c) in HazardClass::ALL.iter().enumerate() {
            let mut of_class: Vec<(usize, usize)> = kept
                .iter()
                .copied()
                .filter(|&(i, t)| images[i].truths[t].class == c)
                .collect();
            let row = &em.confusion_matrix[ci];
            let n_conf = (of_class.len() as f64 * (1.0 - row[ci])).round() as usize;
            of_class.shuffle(rng);
            let others: Vec<(usize, f64)> = (0..row.len()).filter(|&j| j != ci).map(|j| (j, row[j])).collect();
            let total: f64 = others.iter().map(|o| o.1).sum();
            for (k, key) in of_class.into_iter().enumerate() {
                let class = if k < n_conf {
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = others[others.len() - 1].0;
                    for &(j, w) in &others {
                        if u < w {
                            pick = j;
                            break;
                        }
                        u -= w;
                    }
                    if total == 0.0 {
                        pick = others[rng.random_range(0..others.len())].0;
                    }
                    HazardClass::ALL[pick]
                } else {
                    c
                };
                reported.insert(key, class);
            }
        }

        let n_spurious = (em.false_positive_rate * images.len() as f64).round() as usize;
        let mut spurious_at: Vec<usize> = (0..n_spurious).map(|_| rng.random_range(0..images.len())).collect();
        spurious_at.sort_unstable();

        let mut plans = BTreeMap::new();
        for (i, img) in images.iter().enumerate() {
            let pixels = image::load_from_memory(&img.bytes)
                .expect("scenario images decode")
                .to_rgb8();
            let mut dets = Vec::new();
            for (t, truth) in img.truths.iter().enumerate() {
                let Some(&class) = reported.get(&(i, t)) else { continue };
                let outcome = if class == truth.class {
                    Outcome::Hit { truth: t }
                } else {
                    Outcome::Confused {
                        truth: t,
                        true_class: truth.class,
                    }
                };
                dets.push(PlannedDetection {
                    bbox: jitter(&truth.bbox, em.localization_jitter_px, rng),
                    class,
                    score: thr + (1.0 - thr) * rng.random::<f64>().sqrt(),
                    outcome,
                    support: Some(Support {
                        region: truth.bbox,
                        class: truth.class,
                        base: count_matching(&pixels, &truth.bbox, truth.class).max(1),
                    }),
                });
            }
            let mut avoid: Vec<BoundingBox> = img.truths.iter().map(|t| t.bbox).collect();
            for _ in spurious_at.iter().filter(|&&s| s == i) {
                let Some(b) = random_box(rng, &avoid, 2.0) else { continue };
                avoid.push(b);
                dets.push(PlannedDetection {
                    bbox: b,
                    class: HazardClass::ALL[rng.random_range(0..HazardClass::ALL.len())],
                    score: thr + (1.0 - thr) * rng.random::<f64>().powi(2),
                    outcome: Outcome::Spurious,
                    support: None,
                });
            }
            plans.insert(img.blob.clone(), ImagePlan { detections: dets });
        }
        Ok(MockPlans::new(plans))
    }
}

/// Grid stride of synthetic activations in pixels.
pub const FEATURE_STRIDE: u32 = 16;

/// Synthetic detector serving [`MockPlans`]. Masked images (LIME) score each
/// planned object by the share of its colored pixels still visible.
#[derive(Debug, Clone)]
pub struct MockDetector {
    plans: MockPlans,
}

impl MockDetector {
    pub fn new(plans: MockPlans) -> Self {
        MockDetector { plans }
    }

    /// One class channel per hazard class plus a flat background channel,
    /// with a Gaussian bump of height `score` over every planned box.
    pub fn features(plan: &ImagePlan, width: u32, height: u32) -> FeatureStack {
        let gw = width.div_ceil(FEATURE_STRIDE).max(1) as usize;
        let gh = height.div_ceil(FEATURE_STRIDE).max(1) as usize;
        let k = HazardClass::ALL.len();
        let s = FEATURE_STRIDE as f64;
        let mut channels = vec![vec![0.0; gw * gh]; k + 1];
        channels[k].iter_mut().for_each(|v| *v = 0.2);
        for d in &plan.detections {
            let [x0, y0, x1, y1] = d.bbox.to_array();
            let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            let (sx, sy) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
            let ch = &mut channels[d.class.id() as usize];
            for r in 0..gh {
                for c in 0..gw {
                    let dx = ((c as f64 + 0.5) * s - cx) / sx;
                    let dy = ((r as f64 + 0.5) * s - cy) / sy;
                    ch[r * gw + c] += d.score * (-(dx * dx + dy * dy) / 2.0).exp();
                }
            }
        }
        let weights = HazardClass::ALL
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut w: Vec<f64> = (0..k).map(|j| if i == j { 1.0 } else { -0.2 }).collect();
                w.push(0.1);
                (c, w)
            })
            .collect();
        FeatureStack::new(gh, gw, channels, weights).expect("synthetic activations are valid")
    }
}

impl DetectorBackend for MockDetector {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_image_edge: 4096,
            classes: HazardClass::ALL.to_vec(),
            activations: true,
        }
    }

    fn detect(&mut self, image: &ImageInput<'_>) -> Result<Vec<RawDetection>, DetectorError> {
        let Some(plan) = self.plans.get(image.image_ref) else {
            return Ok(Vec::new());
        };
        Ok(plan
            .detections
            .iter()
            .map(|d| {
                let visible = match (image.pixels, d.support) {
                    (Some(px), Some(s)) => (count_matching(px, &s.region, s.class) as f64 / s.base as f64).min(1.0),
                    _ => 1.0,
                };
                RawDetection {
                    bbox: d.bbox,
                    class: d.class,
                    score: d.score * visible,
                }
            })
            .collect())
    }

    fn activations(&mut self, image: &ImageInput<'_>) -> Result<Option<FeatureStack>, DetectorError> {
        Ok(self
            .plans
            .get(image.image_ref)
            .map(|p| Self::features(p, image.width, image.height)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Region;
    use crate::metrics::evaluate;
    use crate::sim::{generate_scenario, planned_predictions};

    #[test]
    fn calibration_solution() {
        let em = ErrorModel::calibrated(0.854, 0.597, 0.05, 2.0);
        assert!((em.miss_rate - 0.371579).abs() < 1e-6);
        assert!((em.false_positive_rate - 0.141284).abs() < 1e-6);
        let (p, r) = em.expected(2.0);
        assert!((p - 0.854).abs() < 1e-12);
        assert!((r - 0.597).abs() < 1e-12);
    }

    #[test]
    fn perfect_detector_reproduces_truth() {
        let cfg = ScenarioConfig {
            detector_error_model: ErrorModel::perfect(),
            ..ScenarioConfig::smoke()
        };
        let s = generate_scenario(&cfg, &Region::mallorca()).unwrap();
        let m = evaluate(&planned_predictions(&s), &s.ground_truth()).unwrap();
        assert_eq!(m.box_precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.map_50, 1.0);
        assert_eq!(m.map_50_95, 1.0);
    }

    #[test]
    fn full_miss_reports_nothing() {
        let cfg = ScenarioConfig {
            detector_error_model: ErrorModel {
                miss_rate: 1.0,
                ..ErrorModel::perfect()
            },
            ..ScenarioConfig::smoke()
        };
        let s = generate_scenario(&cfg, &Region::mallorca()).unwrap();
        assert!(planned_predictions(&s).values().all(|p| p.is_empty()));
    }

    #[test]
    fn masking_the_object_removes_its_score() {
        let cfg = ScenarioConfig {
            detector_error_model: ErrorModel::perfect(),
            ..ScenarioConfig::smoke()
        };
        let s = generate_scenario(&cfg, &Region::mallorca()).unwrap();
        let img = &s.images[0];
        let mut det = MockDetector::new(s.plans.clone());
        let input = ImageInput {
            image_ref: &img.blob,
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
            pixels: None,
        };
        let full = det.detect(&input).unwrap();
        let mut px = image::load_from_memory(&img.bytes).unwrap().to_rgb8();
        let same = det.detect(&ImageInput { pixels: Some(&px), ..input }).unwrap();
        assert_eq!(full, same);
        let b = img.truths[0].bbox;
        for y in b.y_min() as u32..b.y_max() as u32 {
            for x in b.x_min() as u32..b.x_max() as u32 {
                px.put_pixel(x, y, image::Rgb([140, 140, 140]));
            }
        }
        let masked = det.detect(&ImageInput { pixels: Some(&px), ..input }).unwrap();
        assert_eq!(masked[0].score, 0.0);
    }
}
