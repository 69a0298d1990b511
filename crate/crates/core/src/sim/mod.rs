//! Synthetic scenarios (geotagged images with planted truth, hotspot sites
//! and validator populations) and an end-to-end driver over the pipeline.

mod mock;
mod run;

pub use mock::{ErrorModel, MockDetector, MockPlans, Outcome, PlannedDetection, ImagePlan};
pub use run::{
    run_ensemble, run_scenario, site_recovery, EnsembleReport, FoldRow, SimReport, SiteRecovery, CSV_HEADER,
};

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blob::blob_id;
use crate::domain::{BlobId, BoundingBox, GeoPoint, HazardClass, Timestamp, ValidatorId};
use crate::fixtures::encode_jpeg;
use crate::geo::{haversine, Region, EARTH_RADIUS_M};
use crate::ingest::{anonymize, with_exif, ExifBuilder};
use crate::metrics::Truth;

pub const IMAGE_WIDTH: u32 = 256;
pub const IMAGE_HEIGHT: u32 = 192;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("infeasible scenario: {0}")]
    InfeasibleConfig(String),
    #[error(transparent)]
    Pipeline(#[from] crate::orchestrator::PipelineError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidatorPopulation {
    pub n: usize,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub n_experts: usize,
}

impl Default for ValidatorPopulation {
    fn default() -> Self {
        ValidatorPopulation {
            n: 252,
            accuracy_mean: 0.965,
            accuracy_sd: 0.05,
            n_experts: 5,
        }
    }
}

/// Simulated human and submission timing, in hours unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    pub submission_window_days: f64,
    /// Mean of the exponential delay before each crowd vote.
    pub vote_delay_mean_h: f64,
    pub expert_delay_min_h: f64,
    pub expert_delay_max_h: f64,
    pub editor_delay_min_h: f64,
    pub editor_delay_max_h: f64,
    /// Simulation start (RFC 3339).
    pub start: String,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            submission_window_days: 30.0,
            vote_delay_mean_h: 0.55,
            expert_delay_min_h: 1.5,
            expert_delay_max_h: 2.5,
            editor_delay_min_h: 4.0,
            editor_delay_max_h: 5.0,
            start: "2024-06-01T00:00:00Z".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_images: usize,
    pub n_sites: usize,
    /// Planted clusters get at least this many member images.
    pub min_reports: usize,
    /// Share of images placed inside planted clusters.
    pub site_fraction: f64,
    /// Standard deviation of member positions around a cluster center.
    pub site_spread_m: f64,
    pub min_site_separation_m: f64,
    pub min_truths_per_image: usize,
    pub max_truths_per_image: usize,
    /// Lower end of planned detection scores.
    pub score_floor: f64,
    pub detector_error_model: ErrorModel,
    pub validator_population: ValidatorPopulation,
    pub timing: Timing,
    /// Seeds run by the ensemble, starting at `seed`.
    pub n_seeds: usize,
    pub n_folds: usize,
    pub recovery_radius_m: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 42,
            n_images: 1000,
            n_sites: 50,
            min_reports: 5,
            site_fraction: 0.6,
            site_spread_m: 80.0,
            min_site_separation_m: 2000.0,
            min_truths_per_image: 1,
            max_truths_per_image: 3,
            score_floor: 0.5,
            detector_error_model: ErrorModel::calibrated(0.854, 0.597, 0.05, 2.0),
            validator_population: ValidatorPopulation::default(),
            timing: Timing::default(),
            n_seeds: 5,
            n_folds: 5,
            recovery_radius_m: 300.0,
        }
    }
}

impl ScenarioConfig {
    /// 50-image configuration for quick runs.
    pub fn smoke() -> Self {
        ScenarioConfig {
            n_images: 50,
            n_sites: 5,
            ..Self::default()
        }
    }

    pub fn mean_truths_per_image(&self) -> f64 {
        (self.min_truths_per_image + self.max_truths_per_image) as f64 / 2.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InfeasibleConfig(m.into()));
        if self.n_images == 0 {
            return bad("n_images must be positive");
        }
        if self.n_sites * self.min_reports > self.n_images {
            return bad("n_sites * min_reports exceeds n_images");
        }
        if !(0.0..=1.0).contains(&self.site_fraction) {
            return bad("site_fraction outside [0, 1]");
        }
        if self.min_truths_per_image == 0 || self.min_truths_per_image > self.max_truths_per_image {
            return bad("truths per image range is empty");
        }
        if self.max_truths_per_image > 4 {
            return bad("at most 4 truths fit in a synthetic image");
        }
        if !(0.0..1.0).contains(&self.score_floor) {
            return bad("score_floor outside [0, 1)");
        }
        let p = &self.validator_population;
        if p.n < 4 {
            return bad("validator population smaller than quorum plus submitter");
        }
        if !(0.0..=1.0).contains(&p.accuracy_mean) || p.accuracy_sd < 0.0 {
            return bad("validator accuracy distribution out of range");
        }
        if self.n_folds < 2 || self.n_folds > self.n_images {
            return bad("n_folds must lie in [2, n_images]");
        }
        self.detector_error_model.validate()?;
        let t = &self.timing;
        if Timestamp::parse(&t.start).is_err() {
            return bad("timing.start is not RFC 3339");
        }
        if t.vote_delay_mean_h <= 0.0
            || t.expert_delay_min_h > t.expert_delay_max_h
            || t.editor_delay_min_h > t.editor_delay_max_h
            || t.submission_window_days < 0.0
        {
            return bad("timing parameters out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSite {
    pub index: usize,
    pub center: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimValidator {
    pub id: ValidatorId,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimImage {
    pub id: String,
    /// Geotagged JPEG as a citizen would upload it.
    pub bytes: Vec<u8>,
    /// Blob id the pipeline will assign after anonymization.
    pub blob: BlobId,
    pub geo: GeoPoint,
    pub site: Option<usize>,
    pub truths: Vec<Truth>,
    pub submitter: String,
    /// Seconds after the simulation start.
    pub submit_offset_s: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub images: Vec<SimImage>,
    pub sites: Vec<PlantedSite>,
    pub validators: Vec<SimValidator>,
    pub experts: Vec<ValidatorId>,
    pub plans: MockPlans,
}

impl Scenario {
    pub fn ground_truth(&self) -> crate::metrics::GroundTruth {
        self.images.iter().map(|i| (i.id.clone(), i.truths.clone())).collect()
    }
}

/// Fill color of each class in synthetic images.
pub fn class_color(c: HazardClass) -> Rgb<u8> {
    Rgb(match c {
        HazardClass::PlasticFoil => [40, 90, 220],
        HazardClass::RubberWaste => [25, 25, 25],
        HazardClass::MetalCan => [200, 30, 30],
        HazardClass::MixedWaste => [240, 140, 20],
        HazardClass::Other => [40, 170, 60],
    })
}

/// Pixel matches the class color (L1 distance below 120).
pub fn matches_color(p: &Rgb<u8>, c: HazardClass) -> bool {
    let q = class_color(c);
    let d: i32 = (0..3).map(|i| (p[i] as i32 - q[i] as i32).abs()).sum();
    d < 120
}

/// Gray block texture with one filled ellipse per truth.
pub fn render_image(truths: &[Truth], rng: &mut impl Rng) -> RgbImage {
    const BLOCK: u32 = 16;
    let bw = IMAGE_WIDTH.div_ceil(BLOCK);
    let bh = IMAGE_HEIGHT.div_ceil(BLOCK);
    let blocks: Vec<u8> = (0..bw * bh).map(|_| rng.random_range(100..=180)).collect();
    let mut img = RgbImage::from_fn(IMAGE_WIDTH, IMAGE_HEIGHT, |x, y| {
        let v = blocks[((y / BLOCK) * bw + x / BLOCK) as usize];
        Rgb([v, v, v])
    });
    for t in truths {
        let [x0, y0, x1, y1] = t.bbox.to_array();
        let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let (rx, ry) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
        let color = class_color(t.class);
        for y in y0 as u32..(y1.ceil() as u32).min(IMAGE_HEIGHT) {
            for x in x0 as u32..(x1.ceil() as u32).min(IMAGE_WIDTH) {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    img
}

fn random_box(rng: &mut impl Rng, avoid: &[BoundingBox], margin: f64) -> Option<BoundingBox> {
    for _ in 0..200 {
        let w = rng.random_range(24..=64) as f64;
        let h = rng.random_range(24..=64) as f64;
        let x = rng.random_range(0.0..IMAGE_WIDTH as f64 - w).floor();
        let y = rng.random_range(0.0..IMAGE_HEIGHT as f64 - h).floor();
        let b = BoundingBox::new(x, y, x + w, y + h).expect("positive extent");
        let clear = avoid.iter().all(|a| {
            b.x_max() + margin <= a.x_min()
                || a.x_max() + margin <= b.x_min()
                || b.y_max() + margin <= a.y_min()
                || a.y_max() + margin <= b.y_min()
        });
        if clear {
            return Some(b);
        }
    }
    None
}

/// Point at `east_m`, `north_m` from `origin`.
pub fn offset(origin: &GeoPoint, east_m: f64, north_m: f64) -> GeoPoint {
    let m_per_deg = EARTH_RADIUS_M.to_radians();
    let dlat = north_m / m_per_deg;
    let dlon = east_m / (m_per_deg * origin.lat().to_radians().cos());
    GeoPoint::new(origin.lat() + dlat, origin.lon() + dlon).expect("small offset stays valid")
}

fn uniform_point(rng: &mut impl Rng, r: &Region) -> GeoPoint {
    GeoPoint::new(
        rng.random_range(r.lat_min..r.lat_max),
        rng.random_range(r.lon_min..r.lon_max),
    )
    .expect("region lies within valid coordinates")
}

fn shrink(r: &Region, by_deg: f64) -> Region {
    Region {
        lat_min: r.lat_min + by_deg,
        lat_max: r.lat_max - by_deg,
        lon_min: r.lon_min + by_deg,
        lon_max: r.lon_max - by_deg,
    }
}

/// Builds a deterministic scenario inside `region`.
pub fn generate_scenario(cfg: &ScenarioConfig, region: &Region) -> Result<Scenario, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let inner = shrink(region, 0.02);
    let mut sites: Vec<PlantedSite> = Vec::new();
    let mut attempts = 0;
    while sites.len() < cfg.n_sites {
        attempts += 1;
        if attempts > 100_000 {
            return Err(SimError::InfeasibleConfig("cannot separate planted sites".into()));
        }
        let c = uniform_point(&mut rng, &inner);
        if sites
            .iter()
            .all(|s| haversine(&s.center, &c) >= cfg.min_site_separation_m)
        {
            sites.push(PlantedSite {
                index: sites.len(),
                center: c,
            });
        }
    }

    // site membership: min_reports each, remaining members spread evenly
    let n_members = ((cfg.site_fraction * cfg.n_images as f64).round() as usize)
        .max(cfg.n_sites * cfg.min_reports)
        .min(cfg.n_images);
    let mut membership: Vec<Option<usize>> = Vec::with_capacity(cfg.n_images);
    if cfg.n_sites > 0 {
        for i in 0..n_members {
            membership.push(Some(i % cfg.n_sites));
        }
    }
    membership.resize(cfg.n_images, None);
    membership.shuffle(&mut rng);

    // balanced truth counts, so the dataset total is fixed by the config
    let span = cfg.max_truths_per_image - cfg.min_truths_per_image + 1;
    let mut truth_counts: Vec<usize> = (0..cfg.n_images)
        .map(|i| cfg.min_truths_per_image + i % span)
        .collect();
    truth_counts.shuffle(&mut rng);

    let pop = &cfg.validator_population;
    let acc = Normal::new(pop.accuracy_mean, pop.accuracy_sd.max(1e-12)).expect("finite sd");
    let validators: Vec<SimValidator> = (0..pop.n)
        .map(|i| SimValidator {
            id: ValidatorId::new(format!("val-{i:03}")),
            accuracy: if pop.accuracy_sd == 0.0 {
                pop.accuracy_mean
            } else {
                acc.sample(&mut rng).clamp(0.0, 1.0)
            },
        })
        .collect();
    let experts: Vec<ValidatorId> = (0..pop.n_experts)
        .map(|i| ValidatorId::new(format!("exp-{i:02}")))
        .collect();

    let window_s = cfg.timing.submission_window_days * 86_400.0;
    let mut images = Vec::with_capacity(cfg.n_images);
    for (i, (site, n_truths)) in membership.into_iter().zip(truth_counts).enumerate() {
        let geo = match site {
            Some(s) => {
                let n = Normal::new(0.0, cfg.site_spread_m).expect("finite spread");
                offset(&sites[s].center, n.sample(&mut rng), n.sample(&mut rng))
            }
            None => uniform_point(&mut rng, &inner),
        };
        let mut boxes: Vec<BoundingBox> = Vec::new();
        let mut truths = Vec::new();
        for _ in 0..n_truths {
            let b = random_box(&mut rng, &boxes, 4.0)
                .ok_or_else(|| SimError::InfeasibleConfig("cannot place truth boxes".into()))?;
            boxes.push(b);
            truths.push(Truth {
                bbox: b,
                class: HazardClass::ALL[rng.random_range(0..HazardClass::ALL.len())],
            });
        }
        let img = render_image(&truths, &mut rng);
        let jpeg = encode_jpeg(&img, 90);
        let bytes = with_exif(&jpeg, &ExifBuilder::new().gps(geo.lat(), geo.lon()).make("SimCam"))
            .expect("encoder output is a valid JPEG");
        let blob = blob_id(&anonymize(&bytes).expect("encoder output is a valid JPEG"));
        // a quarter of uploads come from validators, exercising self-exclusion
        let submitter = if rng.random_bool(0.25) {
            validators[rng.random_range(0..validators.len())].id.to_string()
        } else {
            format!("citizen-{:04}", rng.random_range(0..cfg.n_images.max(1)))
        };
        images.push(SimImage {
            id: format!("img-{i:05}"),
            bytes,
            blob,
            geo,
            site,
            truths,
            submitter,
            submit_offset_s: rng.random_range(0.0..=window_s),
        });
    }
    let plans = MockPlans::plan(&images, cfg, &mut rng)?;
    Ok(Scenario {
        config: cfg.clone(),
        images,
        sites,
        validators,
        experts,
        plans,
    })
}

/// Detections grouped by image, handy for metrics against the scenario truth.
pub fn planned_predictions(s: &Scenario) -> crate::metrics::PredictionsByImage {
    let mut out = BTreeMap::new();
    for img in &s.images {
        let preds = s
            .plans
            .get(&img.blob)
            .map(|p| p.predictions())
            .unwrap_or_default();
        out.insert(img.id.clone(), preds);
    }
    out
}
