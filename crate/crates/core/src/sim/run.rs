use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{generate_scenario, MockDetector, Outcome, Scenario, SimError};
use crate::blob::MemoryBlobStore;
use crate::calibration::ConsensusTruth;
use crate::clock::{Clock, ManualClock};
use crate::config::Config;
use crate::consensus::{agreement_rate, ConsensusStatus, Verdict};
use crate::detector::DetectorBackend;
use crate::domain::{DetectionId, GeoPoint, PipelineStage, Report, ReportId, Timestamp, ValidatorId};
use crate::geo::{haversine, HotspotSite};
use crate::ingest::{IngestOutcome, RawSubmission};
use crate::metrics::{evaluate, MetricsReport, Prediction, PredictionsByImage};
use crate::orchestrator::{LatencyStats, Pipeline, PipelineError, PipelineParts, Telemetry};
use crate::report::ReviewState;
use crate::store::MemoryStore;

pub const CSV_HEADER: &str = "seed,fold,n_images,box_precision,recall,map_50,map_50_95,agreement,\
latency_reduction,end_to_end_h,n_validators,sites_found,sites_recovered,n_planted";

/// One CSV row. Fold rows leave the site columns empty; the `ci95` row
/// holds half-widths of the fold metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: String,
    pub n_images: usize,
    pub box_precision: f64,
    pub recall: f64,
    pub map_50: f64,
    pub map_50_95: f64,
    pub agreement: Option<f64>,
    pub latency_reduction: Option<f64>,
    pub end_to_end_h: Option<f64>,
    pub sites_found: Option<usize>,
    pub sites_recovered: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecovery {
    pub planted: usize,
    pub found: usize,
    pub recovered: usize,
    /// (planted index, site id, distance in m) for every recovered site.
    pub matches: Vec<(usize, String, f64)>,
}

/// Greedy nearest matching of extracted sites to planted centers within
/// `radius_m`; each site recovers at most one center.
pub fn site_recovery(planted: &[GeoPoint], sites: &[HotspotSite], radius_m: f64) -> SiteRecovery {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in planted.iter().enumerate() {
        for (j, s) in sites.iter().enumerate() {
            let d = haversine(p, &s.centroid);
            if d <= radius_m {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let (mut used_p, mut used_s) = (HashSet::new(), HashSet::new());
    let mut matches = Vec::new();
    for (d, i, j) in pairs {
        if used_p.contains(&i) || used_s.contains(&j) {
            continue;
        }
        used_p.insert(i);
        used_s.insert(j);
        matches.push((i, sites[j].id.clone(), d));
    }
    matches.sort_by_key(|m| m.0);
    SiteRecovery {
        planted: planted.len(),
        found: sites.len(),
        recovered: matches.len(),
        matches,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub n_validators: usize,
    pub folds: Vec<FoldRow>,
    pub aggregate: FoldRow,
    pub ci95: FoldRow,
    pub metrics: MetricsReport,
    pub agreement: Option<f64>,
    pub agreement_samples: usize,
    pub latency: Option<LatencyStats>,
    pub sites: SiteRecovery,
    pub telemetry: Telemetry,
    pub self_votes_blocked: usize,
    pub escalations: usize,
    pub ingest_rejections: usize,
    /// Wall-clock figures; left out of the CSV so it stays reproducible.
    pub overhead_ms_per_image: f64,
    pub runtime_s: f64,
    #[serde(skip)]
    pub geojson: Value,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_f(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl SimReport {
    fn row(&self, r: &FoldRow) -> String {
        let site_cols = r.sites_found.is_some();
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{},{}",
            self.seed,
            r.fold,
            r.n_images,
            r.box_precision,
            r.recall,
            r.map_50,
            r.map_50_95,
            opt_f(r.agreement),
            opt_f(r.latency_reduction),
            opt_f(r.end_to_end_h),
            self.n_validators,
            opt(r.sites_found),
            opt(r.sites_recovered),
            if site_cols { self.sites.planted.to_string() } else { String::new() },
        )
    }

    /// Rows without the header: folds, `all`, `ci95`.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in self.folds.iter().chain([&self.aggregate, &self.ci95]) {
            writeln!(out, "{}", self.row(r)).expect("writing to a String");
        }
        out
    }

    pub fn csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }

    pub fn summary_json(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleReport {
    pub seeds: Vec<u64>,
    pub box_precision: f64,
    pub recall: f64,
    pub map_50: f64,
    pub map_50_95: f64,
    pub agreement: f64,
    pub latency_reduction: f64,
    pub sites_recovered_mean: f64,
    pub sites_recovered_min: usize,
    pub n_planted: usize,
    pub overhead_ms_per_image: f64,
    pub runtime_s: f64,
    pub runs: Vec<SimReport>,
}

impl EnsembleReport {
    pub fn csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.runs {
            out.push_str(&r.csv_rows());
        }
        writeln!(
            out,
            ",ensemble_mean,{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},,{},,{:.1},{}",
            self.runs.iter().map(|r| r.aggregate.n_images).sum::<usize>(),
            self.box_precision,
            self.recall,
            self.map_50,
            self.map_50_95,
            self.agreement,
            self.latency_reduction,
            self.runs.first().map(|r| r.n_validators).unwrap_or(0),
            self.sites_recovered_mean,
            self.n_planted,
        )
        .expect("writing to a String");
        out
    }

    pub fn summary_json(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Runs `cfg.simulation.n_seeds` scenarios with consecutive seeds.
pub fn run_ensemble(cfg: &Config) -> Result<EnsembleReport, SimError> {
    let started = Instant::now();
    let base = cfg.simulation.seed;
    let mut runs = Vec::new();
    for k in 0..cfg.simulation.n_seeds.max(1) as u64 {
        let mut c = cfg.clone();
        c.simulation.seed = base + k;
        runs.push(run_scenario(&c)?);
    }
    let agg = |f: fn(&SimReport) -> Option<f64>| mean(runs.iter().filter_map(f));
    Ok(EnsembleReport {
        seeds: runs.iter().map(|r| r.seed).collect(),
        box_precision: agg(|r| Some(r.aggregate.box_precision)),
        recall: agg(|r| Some(r.aggregate.recall)),
        map_50: agg(|r| Some(r.aggregate.map_50)),
        map_50_95: agg(|r| Some(r.aggregate.map_50_95)),
        agreement: agg(|r| r.agreement),
        latency_reduction: agg(|r| r.aggregate.latency_reduction),
        sites_recovered_mean: agg(|r| Some(r.sites.recovered as f64)),
        sites_recovered_min: runs.iter().map(|r| r.sites.recovered).min().unwrap_or(0),
        n_planted: cfg.simulation.n_sites,
        overhead_ms_per_image: agg(|r| Some(r.overhead_ms_per_image)),
        runtime_s: started.elapsed().as_secs_f64(),
        runs,
    })
}

#[derive(Debug, Clone)]
enum Event {
    Submit(usize),
    Vote {
        det: DetectionId,
        validator: ValidatorId,
        verdict: Verdict,
    },
    Expert {
        det: DetectionId,
        expert: ValidatorId,
    },
    Editor(ReportId),
}

struct DetInfo {
    image: usize,
    truth: ConsensusTruth,
    correct: Verdict,
    recorded: bool,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    pipeline: Pipeline,
    clock: Arc<ManualClock>,
    start: Timestamp,
    rng: ChaCha8Rng,
    queue: BTreeMap<(i64, u64), Event>,
    seq: u64,
    quorum: usize,
    dets: HashMap<DetectionId, DetInfo>,
    report_image: HashMap<ReportId, usize>,
    image_report: Vec<Option<ReportId>>,
    editor_scheduled: HashSet<ReportId>,
    pairs: Vec<(usize, ConsensusStatus, ConsensusTruth)>,
    self_votes_blocked: usize,
    escalations: usize,
    ingest_rejections: usize,
}

fn wrong(v: &Verdict) -> Verdict {
    if v.affirms() {
        Verdict::Reject
    } else {
        Verdict::Confirm
    }
}

impl Sim<'_> {
    fn schedule(&mut self, at: Timestamp, e: Event) {
        self.seq += 1;
        self.queue.insert((at.millis(), self.seq), e);
    }

    fn hours(&mut self, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            self.rng.random_range(lo..hi) * 3600.0
        } else {
            lo * 3600.0
        }
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn schedule_expert(&mut self, det: &DetectionId) {
        let t = &self.scenario.config.timing;
        let delay = self.hours(t.expert_delay_min_h, t.expert_delay_max_h);
        let experts = &self.scenario.experts;
        if experts.is_empty() {
            return;
        }
        let expert = experts[self.rng.random_range(0..experts.len())].clone();
        self.escalations += 1;
        let at = self.now().plus_secs_f64(delay);
        self.schedule(
            at,
            Event::Expert {
                det: det.clone(),
                expert,
            },
        );
    }

    fn check_report(&mut self, rid: &ReportId) {
        let Some(r) = self.pipeline.report(rid) else { return };
        if r.stage == PipelineStage::Reported && self.editor_scheduled.insert(rid.clone()) {
            let t = &self.scenario.config.timing;
            let delay = self.hours(t.editor_delay_min_h, t.editor_delay_max_h);
            let at = self.now().plus_secs_f64(delay);
            self.schedule(at, Event::Editor(rid.clone()));
        }
    }

    fn submit(&mut self, i: usize) -> Result<(), SimError> {
        let img = &self.scenario.images[i];
        let raw = RawSubmission {
            image_bytes: img.bytes.clone(),
            declared_geo: None,
            device_time: None,
            submitter_token: img.submitter.clone(),
        };
        let rid = match self.pipeline.process(&raw)? {
            IngestOutcome::Accepted { report_id } => report_id,
            _ => {
                self.ingest_rejections += 1;
                return Ok(());
            }
        };
        self.report_image.insert(rid.clone(), i);
        self.image_report[i] = Some(rid.clone());
        let report = self.pipeline.report(&rid).expect("accepted report exists");
        let plan = self.scenario.plans.get(&img.blob);
        let submitter_is_validator = self.scenario.validators.iter().any(|v| v.id.as_str() == img.submitter);
        for d in &report.detections {
            let planned = plan.and_then(|p| p.detections.iter().find(|pd| pd.bbox == d.bbox && pd.class == d.class));
            let (truth, correct) = match planned.map(|p| p.outcome) {
                Some(Outcome::Hit { .. }) => (ConsensusTruth::Confirmed, Verdict::Confirm),
                Some(Outcome::Confused { true_class, .. }) => (
                    ConsensusTruth::Confirmed,
                    Verdict::Adjust {
                        bbox: None,
                        class: Some(true_class),
                    },
                ),
                Some(Outcome::Spurious) | None => (ConsensusTruth::Rejected, Verdict::Reject),
            };
            let status = self
                .pipeline
                .detection_record(&d.id)
                .map(|r| r.consensus.status)
                .unwrap_or(ConsensusStatus::Pending);
            self.dets.insert(
                d.id.clone(),
                DetInfo {
                    image: i,
                    truth,
                    correct: correct.clone(),
                    recorded: false,
                },
            );
            match status {
                ConsensusStatus::Pending => {
                    if submitter_is_validator {
                        let me = ValidatorId::new(img.submitter.clone());
                        if let Err(PipelineError::SelfValidation) =
                            self.pipeline.vote(&me, &d.id, Verdict::Confirm)
                        {
                            self.self_votes_blocked += 1;
                        }
                    }
                    let pool: Vec<&super::SimValidator> = self
                        .scenario
                        .validators
                        .iter()
                        .filter(|v| v.id.as_str() != img.submitter)
                        .collect();
                    let chosen: Vec<(ValidatorId, f64)> = pool
                        .choose_multiple(&mut self.rng, self.quorum)
                        .map(|v| (v.id.clone(), v.accuracy))
                        .collect();
                    let exp = Exp::new(1.0 / (self.scenario.config.timing.vote_delay_mean_h * 3600.0))
                        .expect("positive vote delay");
                    for (validator, acc) in chosen {
                        let verdict = if self.rng.random_bool(acc) {
                            correct.clone()
                        } else {
                            wrong(&correct)
                        };
                        let at = self.now().plus_secs_f64(exp.sample(&mut self.rng));
                        self.schedule(
                            at,
                            Event::Vote {
                                det: d.id.clone(),
                                validator,
                                verdict,
                            },
                        );
                    }
                }
                ConsensusStatus::Escalated => self.schedule_expert(&d.id),
                _ => {}
            }
        }
        self.check_report(&rid);
        Ok(())
    }

    fn vote(&mut self, det: DetectionId, validator: ValidatorId, verdict: Verdict) -> Result<(), SimError> {
        let state = match self.pipeline.vote(&validator, &det, verdict) {
            Ok(s) => s,
            Err(PipelineError::AlreadyResolved(_)) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let info = self.dets.get_mut(&det).expect("scheduled detection is known");
        let truth = info.truth;
        if state.n_votes >= self.quorum && !info.recorded {
            info.recorded = true;
            self.pairs.push((info.image, state.status, truth));
        }
        match state.status {
            ConsensusStatus::Confirmed | ConsensusStatus::Rejected => self.pipeline.apply_truth(&det, truth)?,
            ConsensusStatus::Escalated => self.schedule_expert(&det),
            ConsensusStatus::Pending => {}
        }
        let rid = self.report_of(&det);
        self.check_report(&rid);
        Ok(())
    }

    fn report_of(&self, det: &DetectionId) -> ReportId {
        let image = self.dets[det].image;
        self.image_report[image].clone().expect("detection belongs to an accepted report")
    }

    fn expert(&mut self, det: DetectionId, expert: ValidatorId) -> Result<(), SimError> {
        let verdict = self.dets[&det].correct.clone();
        match self.pipeline.expert_decide(&expert, &det, verdict) {
            Ok(_) | Err(PipelineError::AlreadyResolved(_)) => {}
            Err(e) => return Err(e.into()),
        }
        let rid = self.report_of(&det);
        self.check_report(&rid);
        Ok(())
    }

    fn editor(&mut self, rid: ReportId) -> Result<(), SimError> {
        for d in self.pipeline.drafts_for(&rid) {
            if d.review_state == ReviewState::Draft {
                self.pipeline.approve_draft(&d.id)?;
                self.pipeline.publish_draft(&d.id)?;
            }
        }
        Ok(())
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(((ms, _), event)) = self.queue.pop_first() {
            self.clock.set(Timestamp::from_millis(ms));
            match event {
                Event::Submit(i) => self.submit(i)?,
                Event::Vote {
                    det,
                    validator,
                    verdict,
                } => self.vote(det, validator, verdict)?,
                Event::Expert { det, expert } => self.expert(det, expert)?,
                Event::Editor(rid) => self.editor(rid)?,
            }
        }
        Ok(())
    }
}

fn predictions_of(report: &Report) -> Vec<Prediction> {
    report
        .detections
        .iter()
        .map(|d| Prediction {
            bbox: d.bbox,
            class: d.class,
            score: d.confidence,
        })
        .collect()
}

fn end_to_end_s(r: &Report) -> Option<f64> {
    r.entered(PipelineStage::Published)
        .map(|t| t.secs_since(r.submitted_at()))
}

fn t_quantile(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Full end-to-end run of `cfg.simulation` through a fresh in-memory
/// pipeline on a simulated clock.
pub fn run_scenario(cfg: &Config) -> Result<SimReport, SimError> {
    let started = Instant::now();
    let sc = &cfg.simulation;
    let scenario = generate_scenario(sc, &cfg.geo.region)?;
    let start = Timestamp::parse(&sc.timing.start).expect("validated start");
    let clock = Arc::new(ManualClock::new(start));
    let detectors: Vec<Box<dyn DetectorBackend>> = (0..cfg.detector.pool_size.max(1))
        .map(|_| Box::new(MockDetector::new(scenario.plans.clone())) as Box<dyn DetectorBackend>)
        .collect();
    let pipeline = Pipeline::open(PipelineParts {
        config: cfg.clone(),
        store: Arc::new(MemoryStore::new()),
        blobs: Arc::new(MemoryBlobStore::new()),
        detectors,
        clock: clock.clone(),
        narrative: None,
    })?;
    for v in &scenario.validators {
        pipeline.register_validator(&v.id, false)?;
    }
    for e in &scenario.experts {
        pipeline.register_validator(e, true)?;
    }
    let mut sim = Sim {
        scenario: &scenario,
        pipeline,
        clock,
        start,
        rng: ChaCha8Rng::seed_from_u64(sc.seed ^ 0x9e37_79b9_7f4a_7c15),
        queue: BTreeMap::new(),
        seq: 0,
        quorum: cfg.validation.quorum,
        dets: HashMap::new(),
        report_image: HashMap::new(),
        image_report: vec![None; scenario.images.len()],
        editor_scheduled: HashSet::new(),
        pairs: Vec::new(),
        self_votes_blocked: 0,
        escalations: 0,
        ingest_rejections: 0,
    };
    for (i, img) in scenario.images.iter().enumerate() {
        let at = sim.start.plus_secs_f64(img.submit_offset_s);
        sim.schedule(at, Event::Submit(i));
    }
    sim.run()?;

    let reports: Vec<Option<Report>> = sim
        .image_report
        .iter()
        .map(|r| r.as_ref().and_then(|id| sim.pipeline.report(id)))
        .collect();
    let truth = scenario.ground_truth();
    let baseline_s = cfg.pipeline.baseline_manual_latency_h * 3600.0;

    let fold_row = |name: String, members: &[usize]| -> Result<FoldRow, SimError> {
        let mut preds = PredictionsByImage::new();
        let mut gt = crate::metrics::GroundTruth::new();
        for &i in members {
            let img = &scenario.images[i];
            preds.insert(img.id.clone(), reports[i].as_ref().map(predictions_of).unwrap_or_default());
            gt.insert(img.id.clone(), truth[&img.id].clone());
        }
        let m = evaluate(&preds, &gt)?;
        let in_fold: HashSet<usize> = members.iter().copied().collect();
        let pairs: Vec<(ConsensusStatus, ConsensusTruth)> = sim
            .pairs
            .iter()
            .filter(|p| in_fold.contains(&p.0))
            .map(|p| (p.1, p.2))
            .collect();
        let e2e: Vec<f64> = members
            .iter()
            .filter_map(|&i| reports[i].as_ref().and_then(end_to_end_s))
            .collect();
        let e2e_mean = (!e2e.is_empty()).then(|| mean(e2e));
        Ok(FoldRow {
            fold: name,
            n_images: members.len(),
            box_precision: m.box_precision,
            recall: m.recall,
            map_50: m.map_50,
            map_50_95: m.map_50_95,
            agreement: agreement_rate(&pairs).ok(),
            latency_reduction: e2e_mean.map(|e| 1.0 - e / baseline_s),
            end_to_end_h: e2e_mean.map(|e| e / 3600.0),
            sites_found: None,
            sites_recovered: None,
        })
    };

    let mut order: Vec<usize> = (0..scenario.images.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sc.seed.wrapping_add(1)));
    let k = sc.n_folds;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mut members: Vec<usize> = order.iter().copied().skip(f).step_by(k).collect();
        members.sort_unstable();
        folds.push(fold_row(format!("{}", f + 1), &members)?);
    }
    let all: Vec<usize> = (0..scenario.images.len()).collect();
    let mut aggregate = fold_row("all".into(), &all)?;

    let tq = t_quantile(k - 1);
    let half = |xs: Vec<f64>| -> Option<f64> {
        if xs.len() < 2 {
            return None;
        }
        let m = mean(xs.iter().copied());
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        Some(tq * sd / (xs.len() as f64).sqrt())
    };
    let ci95 = FoldRow {
        fold: "ci95".into(),
        n_images: k,
        box_precision: half(folds.iter().map(|f| f.box_precision).collect()).unwrap_or(0.0),
        recall: half(folds.iter().map(|f| f.recall).collect()).unwrap_or(0.0),
        map_50: half(folds.iter().map(|f| f.map_50).collect()).unwrap_or(0.0),
        map_50_95: half(folds.iter().map(|f| f.map_50_95).collect()).unwrap_or(0.0),
        agreement: half(folds.iter().filter_map(|f| f.agreement).collect()),
        latency_reduction: half(folds.iter().filter_map(|f| f.latency_reduction).collect()),
        end_to_end_h: half(folds.iter().filter_map(|f| f.end_to_end_h).collect()),
        sites_found: None,
        sites_recovered: None,
    };

    let sites = sim.pipeline.sites()?;
    let planted: Vec<_> = scenario.sites.iter().map(|s| s.center).collect();
    let recovery = site_recovery(&planted, &sites, sc.recovery_radius_m);
    aggregate.sites_found = Some(recovery.found);
    aggregate.sites_recovered = Some(recovery.recovered);

    let mut geojson = sim.pipeline.heatmap(None, None)?;
    if let Some(features) = geojson["features"].as_array_mut() {
        for s in &scenario.sites {
            features.push(json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [s.center.lon(), s.center.lat()] },
                "properties": {
                    "planted": s.index,
                    "recovered": recovery.matches.iter().any(|m| m.0 == s.index),
                },
            }));
        }
    }

    let telemetry = sim.pipeline.telemetry();
    let mut preds = PredictionsByImage::new();
    for (i, img) in scenario.images.iter().enumerate() {
        preds.insert(img.id.clone(), reports[i].as_ref().map(predictions_of).unwrap_or_default());
    }
    let metrics = evaluate(&preds, &truth)?
        .with_latency(telemetry.mean_overhead_ms / 1000.0 + telemetry.mean_detector_ms / 1000.0)
        .with_sites(recovery.found);
    let agreement_pairs: Vec<_> = sim.pairs.iter().map(|p| (p.1, p.2)).collect();
    Ok(SimReport {
        seed: sc.seed,
        n_validators: scenario.validators.len(),
        folds,
        ci95,
        metrics,
        agreement: agreement_rate(&agreement_pairs).ok(),
        agreement_samples: agreement_pairs.len(),
        latency: sim.pipeline.latency_stats(None).ok(),
        sites: recovery,
        overhead_ms_per_image: telemetry.mean_overhead_ms,
        telemetry,
        self_votes_blocked: sim.self_votes_blocked,
        escalations: sim.escalations,
        ingest_rejections: sim.ingest_rejections,
        runtime_s: started.elapsed().as_secs_f64(),
        geojson,
        aggregate,
    })
}
