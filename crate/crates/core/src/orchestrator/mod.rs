//! Per-report state machine and the routing of work between ingestion,
//! detection, explainability, consensus, geo analytics and reporting.

mod lifecycle;

pub use lifecycle::{
    apply_event, initial_transition, latency_stats, replay, LatencyError, LatencyStats, PipelineEvent,
    ReplayError, StageTransition, TransitionCause, TransitionError,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use image::RgbImage;
use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blob::BlobStore;
use crate::calibration::{
    calibrate_uncertainty, recalibrate, CalibrationTable, ConsensusTruth, FeedbackRecord, PredictedLabel,
    Recalibration,
};
use crate::clock::Clock;
use crate::config::Config;
use crate::consensus::{
    decide, effective_votes, expert_resolve, prioritize, update_credibility, ConsensusError, ConsensusParams,
    ConsensusState, ConsensusStatus, TaskAssignment, TaskCandidate, ValidatorProfile, Verdict, Vote,
};
use crate::detector::{DetectorBackend, DetectorError, FeatureStack, ImageInput, RawDetection};
use crate::domain::{
    BlobId, BoundingBox, Detection, DetectionId, DraftId, GeoPoint, HazardClass, JobId, PipelineStage, Report,
    ReportId, Timestamp, ValidatorId,
};
use crate::explain::{
    cam, lime_explain, overlay, ExplainError, ExplainJob, JobListener, JobQueue, LimeConfig, LimeExplanation,
    LimeRunner,
};
use crate::fixtures::encode_png;
use crate::geo::{bin, export_geojson, extract_sites, smooth, GeoError, GridSpec, HotspotSite, Region};
use crate::ingest::{hamming, hash_submitter, prepare, IngestOutcome, RawSubmission};
use crate::metrics::{evaluate, iou, GroundTruth, MetricsReport, Prediction, PredictionsByImage, Truth};
use crate::report::{generate_report, DraftReport, Evidence, NarrativeBackend, ReportContext, ReportError, ReviewState};
use crate::store::{Log, Persistence, PersistenceExt, StoreError, Table};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown report {0}")]
    UnknownReport(ReportId),
    #[error("unknown detection {0}")]
    UnknownDetection(DetectionId),
    #[error("unknown draft {0}")]
    UnknownDraft(DraftId),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("validators may not vote on their own submissions")]
    SelfValidation,
    #[error("detection {0} is no longer open for votes")]
    AlreadyResolved(DetectionId),
    #[error("{0} is not an expert")]
    NotExpert(ValidatorId),
    #[error("report {report} is in stage {stage}")]
    WrongStage { report: ReportId, stage: PipelineStage },
    #[error("report {0} has no confirmed detection")]
    NoConfirmedDetection(ReportId),
    #[error("no detector backend configured")]
    NoDetector,
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("blob store: {0}")]
    Blob(#[from] std::io::Error),
    #[error("image decode: {0}")]
    Image(String),
}

/// Everything a [`Pipeline`] needs from its environment.
pub struct PipelineParts {
    pub config: Config,
    pub store: Arc<dyn Persistence>,
    pub blobs: Arc<dyn BlobStore>,
    pub detectors: Vec<Box<dyn DetectorBackend>>,
    pub clock: Arc<dyn Clock>,
    pub narrative: Option<Arc<dyn NarrativeBackend>>,
}

/// Checkout pool of single-caller detector backends.
struct DetectorPool {
    idle: Mutex<Vec<Box<dyn DetectorBackend>>>,
    ready: Condvar,
    size: usize,
}

impl DetectorPool {
    fn new(backends: Vec<Box<dyn DetectorBackend>>) -> Self {
        DetectorPool {
            size: backends.len(),
            idle: Mutex::new(backends),
            ready: Condvar::new(),
        }
    }

    fn with<R>(&self, f: impl FnOnce(&mut dyn DetectorBackend) -> R) -> Result<R, PipelineError> {
        if self.size == 0 {
            return Err(PipelineError::NoDetector);
        }
        let mut backend = {
            let mut idle = self.idle.lock();
            loop {
                if let Some(b) = idle.pop() {
                    break b;
                }
                self.ready.wait(&mut idle);
            }
        };
        let out = f(backend.as_mut());
        self.idle.lock().push(backend);
        self.ready.notify_one();
        Ok(out)
    }
}

/// Consensus bookkeeping for one detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub report_id: ReportId,
    pub consensus: ConsensusState,
    pub votes: Vec<Vote>,
    /// Credibility of the voters has been settled against a known truth.
    pub truth_applied: bool,
}

struct Slot {
    report: Report,
    dets: BTreeMap<DetectionId, DetectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CalibrationState {
    table: CalibrationTable,
    threshold: f64,
    last: Option<Recalibration>,
}

#[derive(Debug, Default)]
struct Counters {
    submitted: AtomicU64,
    accepted: AtomicU64,
    duplicates: AtomicU64,
    rejected_at_ingest: AtomicU64,
    detections: AtomicU64,
    votes: AtomicU64,
    expert_decisions: AtomicU64,
    drafts: AtomicU64,
    published: AtomicU64,
    overhead_ns: AtomicU64,
    detector_ns: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub reports_submitted: u64,
    pub reports_accepted: u64,
    pub duplicates: u64,
    pub rejected_at_ingest: u64,
    pub detections: u64,
    pub votes: u64,
    pub expert_decisions: u64,
    pub drafts: u64,
    pub drafts_published: u64,
    /// Orchestration time per accepted image, excluding detector calls.
    pub mean_overhead_ms: f64,
    pub mean_detector_ms: f64,
    pub confidence_threshold: f64,
    pub feedback_records: usize,
}

/// Body of `GET /metrics`: metrics against consensus truth, latency and
/// counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    #[serde(flatten)]
    pub metrics: Option<MetricsReport>,
    #[serde(rename = "latency_stats")]
    pub latency: Option<LatencyStats>,
    pub telemetry: Telemetry,
}

struct Inner {
    cfg: Config,
    params: ConsensusParams,
    grid: GridSpec,
    store: Arc<dyn Persistence>,
    blobs: Arc<dyn BlobStore>,
    clock: Arc<dyn Clock>,
    narrative: Option<Arc<dyn NarrativeBackend>>,
    detectors: DetectorPool,
    reports: RwLock<BTreeMap<ReportId, Arc<Mutex<Slot>>>>,
    det_index: RwLock<HashMap<DetectionId, ReportId>>,
    pending: RwLock<BTreeSet<DetectionId>>,
    escalated: RwLock<BTreeSet<DetectionId>>,
    profiles: RwLock<BTreeMap<ValidatorId, ValidatorProfile>>,
    dedup: Mutex<Vec<(u64, ReportId)>>,
    density: RwLock<BTreeMap<crate::geo::CellId, u64>>,
    validated: RwLock<BTreeMap<ReportId, (GeoPoint, u32)>>,
    drafts: RwLock<BTreeMap<DraftId, DraftReport>>,
    site_drafts: Mutex<BTreeMap<String, DraftId>>,
    calib: RwLock<CalibrationState>,
    feedback: Mutex<Vec<FeedbackRecord>>,
    next_report: AtomicU64,
    next_draft: AtomicU64,
    counters: Counters,
}

pub struct Pipeline {
    inner: Arc<Inner>,
    jobs: JobQueue,
}

fn elapsed_ns(t: Instant) -> u64 {
    t.elapsed().as_nanos() as u64
}

impl Pipeline {
    /// Builds the pipeline and restores any state held by `parts.store`.
    pub fn open(parts: PipelineParts) -> Result<Self, PipelineError> {
        let cfg = parts.config;
        let grid = GridSpec::new(cfg.geo.region, cfg.geo.resolution_m)?;
        let inner = Arc::new(Inner {
            params: ConsensusParams::from(&cfg.validation),
            grid,
            store: parts.store,
            blobs: parts.blobs,
            clock: parts.clock,
            narrative: parts.narrative,
            detectors: DetectorPool::new(parts.detectors),
            reports: RwLock::new(BTreeMap::new()),
            det_index: RwLock::new(HashMap::new()),
            pending: RwLock::new(BTreeSet::new()),
            escalated: RwLock::new(BTreeSet::new()),
            profiles: RwLock::new(BTreeMap::new()),
            dedup: Mutex::new(Vec::new()),
            density: RwLock::new(BTreeMap::new()),
            validated: RwLock::new(BTreeMap::new()),
            drafts: RwLock::new(BTreeMap::new()),
            site_drafts: Mutex::new(BTreeMap::new()),
            calib: RwLock::new(CalibrationState {
                table: CalibrationTable::identity(),
                threshold: cfg.detector.confidence_threshold,
                last: None,
            }),
            feedback: Mutex::new(Vec::new()),
            next_report: AtomicU64::new(0),
            next_draft: AtomicU64::new(0),
            counters: Counters::default(),
            cfg,
        });
        inner.restore()?;
        let jobs_store = Arc::clone(&inner.store);
        let listener: JobListener = Arc::new(move |job: &ExplainJob| {
            let _ = jobs_store.put_as(Table::Jobs, job.id.as_str(), job);
        });
        let restored: Vec<ExplainJob> = inner.store.scan_as(Table::Jobs)?;
        let jobs = JobQueue::restore(
            Arc::new(LimeWorker {
                inner: Arc::clone(&inner),
            }),
            Arc::clone(&inner.clock),
            inner.cfg.explain.workers,
            Some(listener),
            restored,
        );
        Ok(Pipeline { inner, jobs })
    }

    pub fn config(&self) -> &Config {
        &self.inner.cfg
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    pub fn blobs(&self) -> &Arc<dyn BlobStore> {
        &self.inner.blobs
    }

    /// Ingestion: validate, anonymize, deduplicate, persist at `Submitted`.
    pub fn submit(&self, raw: &RawSubmission) -> Result<IngestOutcome, PipelineError> {
        let started = Instant::now();
        let out = self.inner.submit(raw);
        self.inner.counters.overhead_ns.fetch_add(elapsed_ns(started), Ordering::Relaxed);
        out
    }

    /// Runs the detector and CAM fast path, then opens validation.
    pub fn detect(&self, id: &ReportId) -> Result<Report, PipelineError> {
        let started = Instant::now();
        let before = self.inner.counters.detector_ns.load(Ordering::Relaxed);
        let out = self.inner.detect(id);
        let det = self.inner.counters.detector_ns.load(Ordering::Relaxed) - before;
        self.inner
            .counters
            .overhead_ns
            .fetch_add(elapsed_ns(started).saturating_sub(det), Ordering::Relaxed);
        out
    }

    /// `submit` followed by `detect` for accepted submissions.
    pub fn process(&self, raw: &RawSubmission) -> Result<IngestOutcome, PipelineError> {
        let out = self.submit(raw)?;
        if let IngestOutcome::Accepted { report_id } = &out {
            self.detect(report_id)?;
        }
        Ok(out)
    }

    pub fn report(&self, id: &ReportId) -> Option<Report> {
        let slot = self.inner.reports.read().get(id).cloned()?;
        let r = slot.lock().report.clone();
        Some(r)
    }

    /// Reports accepted but not yet run through the detector.
    pub fn awaiting_detection(&self) -> Vec<ReportId> {
        self.reports()
            .into_iter()
            .filter(|r| r.stage == PipelineStage::Submitted)
            .map(|r| r.id)
            .collect()
    }

    pub fn reports(&self) -> Vec<Report> {
        let slots: Vec<_> = self.inner.reports.read().values().cloned().collect();
        slots.into_iter().map(|s| s.lock().report.clone()).collect()
    }

    pub fn detection_record(&self, id: &DetectionId) -> Option<DetectionRecord> {
        let slot = self.inner.slot_of(id).ok()?;
        let rec = slot.lock().dets.get(id).cloned();
        rec
    }

    pub fn register_validator(&self, id: &ValidatorId, expert: bool) -> Result<ValidatorProfile, PipelineError> {
        self.inner.ensure_profile(id, expert)
    }

    pub fn profile(&self, id: &ValidatorId) -> Option<ValidatorProfile> {
        self.inner.profiles.read().get(id).cloned()
    }

    pub fn profiles(&self) -> Vec<ValidatorProfile> {
        self.inner.profiles.read().values().cloned().collect()
    }

    /// Prioritized open detections for `validator`; experts also see escalations.
    pub fn queue(&self, validator: &ValidatorId, limit: usize) -> Vec<TaskAssignment> {
        self.inner.queue(validator, limit)
    }

    pub fn vote(
        &self,
        validator: &ValidatorId,
        detection: &DetectionId,
        verdict: Verdict,
    ) -> Result<ConsensusState, PipelineError> {
        let started = Instant::now();
        let out = self.inner.vote(validator, detection, verdict);
        self.inner.counters.overhead_ns.fetch_add(elapsed_ns(started), Ordering::Relaxed);
        out
    }

    pub fn expert_decide(
        &self,
        expert: &ValidatorId,
        detection: &DetectionId,
        verdict: Verdict,
    ) -> Result<ConsensusState, PipelineError> {
        let started = Instant::now();
        let out = self.inner.expert_decide(expert, detection, verdict);
        self.inner.counters.overhead_ns.fetch_add(elapsed_ns(started), Ordering::Relaxed);
        out
    }

    /// Settles voter credibility for a resolved detection against `truth`
    /// (an expert decision or externally known ground truth). Idempotent.
    pub fn apply_truth(&self, detection: &DetectionId, truth: ConsensusTruth) -> Result<(), PipelineError> {
        let started = Instant::now();
        let slot = self.inner.slot_of(detection)?;
        let mut s = slot.lock();
        let out = self.inner.apply_truth(&mut s, detection, truth);
        drop(s);
        self.inner.counters.overhead_ns.fetch_add(elapsed_ns(started), Ordering::Relaxed);
        out
    }

    /// Low-level stage change; normal operation drives these internally.
    pub fn advance(&self, report: &ReportId, event: PipelineEvent) -> Result<StageTransition, PipelineError> {
        let slot = self.inner.slot(report)?;
        let mut s = slot.lock();
        self.inner.advance(&mut s, event)
    }

    pub fn transitions(&self) -> Result<Vec<StageTransition>, PipelineError> {
        Ok(self.inner.store.read_log_as(Log::Transitions)?)
    }

    pub fn feedback(&self) -> Vec<FeedbackRecord> {
        self.inner.feedback.lock().clone()
    }

    pub fn calibration(&self) -> (CalibrationTable, f64, Option<Recalibration>) {
        let c = self.inner.calib.read();
        (c.table.clone(), c.threshold, c.last.clone())
    }

    pub fn submit_lime(&self, detection: &DetectionId) -> Result<JobId, PipelineError> {
        Ok(self.jobs.submit(detection)?)
    }

    pub fn job(&self, id: &JobId) -> Option<ExplainJob> {
        self.jobs.poll(id)
    }

    pub fn wait_job(&self, id: &JobId, timeout: Duration) -> Option<ExplainJob> {
        self.jobs.wait(id, timeout)
    }

    /// Runs LIME for a detection on the calling thread.
    pub fn explain_now(&self, detection: &DetectionId) -> Result<LimeExplanation, PipelineError> {
        self.inner.run_lime(detection)
    }

    pub fn draft(&self, id: &DraftId) -> Option<DraftReport> {
        self.inner.drafts.read().get(id).cloned()
    }

    pub fn drafts(&self) -> Vec<DraftReport> {
        self.inner.drafts.read().values().cloned().collect()
    }

    /// Drafts that cite `report`.
    pub fn drafts_for(&self, report: &ReportId) -> Vec<DraftReport> {
        self.inner
            .drafts
            .read()
            .values()
            .filter(|d| d.report_ids.contains(report))
            .cloned()
            .collect()
    }

    pub fn approve_draft(&self, id: &DraftId) -> Result<DraftReport, PipelineError> {
        let started = Instant::now();
        let out = self.inner.review(id, false);
        self.inner.counters.overhead_ns.fetch_add(elapsed_ns(started), Ordering::Relaxed);
        out
    }

    /// Publishes an approved draft and moves its reports to `Published`.
    pub fn publish_draft(&self, id: &DraftId) -> Result<DraftReport, PipelineError> {
        let started = Instant::now();
        let out = self.inner.review(id, true);
        self.inner.counters.overhead_ns.fetch_add(elapsed_ns(started), Ordering::Relaxed);
        out
    }

    /// Site-level draft over every validated report inside the site. One
    /// open draft per site.
    pub fn generate_site_report(&self, site_id: &str) -> Result<DraftReport, PipelineError> {
        self.inner.site_report(site_id)
    }

    pub fn sites(&self) -> Result<Vec<HotspotSite>, PipelineError> {
        self.inner.sites(self.inner.cfg.geo.region, self.inner.cfg.geo.resolution_m)
    }

    /// GeoJSON of smoothed cells and hotspot sites built from validated
    /// detections inside `region`.
    pub fn heatmap(&self, region: Option<Region>, resolution_m: Option<f64>) -> Result<serde_json::Value, PipelineError> {
        let region = region.unwrap_or(self.inner.cfg.geo.region);
        let res = resolution_m.unwrap_or(self.inner.cfg.geo.resolution_m);
        let grid = self.inner.smoothed(region, res)?;
        let sites = extract_sites(&grid, self.inner.cfg.geo.site_threshold, self.inner.clock.now());
        Ok(export_geojson(&grid.cells, &sites))
    }

    pub fn latency_stats(&self, window: Option<(Timestamp, Timestamp)>) -> Result<LatencyStats, LatencyError> {
        let reports = self.reports();
        latency_stats(
            &reports,
            window,
            self.inner.cfg.pipeline.baseline_manual_latency_h * 3600.0,
        )
    }

    pub fn telemetry(&self) -> Telemetry {
        let c = &self.inner.counters;
        let accepted = c.accepted.load(Ordering::Relaxed);
        let per = |ns: u64| if accepted == 0 { 0.0 } else { ns as f64 / accepted as f64 / 1e6 };
        Telemetry {
            reports_submitted: c.submitted.load(Ordering::Relaxed),
            reports_accepted: accepted,
            duplicates: c.duplicates.load(Ordering::Relaxed),
            rejected_at_ingest: c.rejected_at_ingest.load(Ordering::Relaxed),
            detections: c.detections.load(Ordering::Relaxed),
            votes: c.votes.load(Ordering::Relaxed),
            expert_decisions: c.expert_decisions.load(Ordering::Relaxed),
            drafts: c.drafts.load(Ordering::Relaxed),
            drafts_published: c.published.load(Ordering::Relaxed),
            mean_overhead_ms: per(c.overhead_ns.load(Ordering::Relaxed)),
            mean_detector_ms: per(c.detector_ns.load(Ordering::Relaxed)),
            confidence_threshold: self.inner.calib.read().threshold,
            feedback_records: self.inner.feedback.lock().len(),
        }
    }

    /// Detector predictions and consensus-derived truths for every report
    /// whose detections are all resolved.
    pub fn consensus_dataset(&self) -> (PredictionsByImage, GroundTruth) {
        let mut preds = PredictionsByImage::new();
        let mut truth = GroundTruth::new();
        let slots: Vec<_> = self.inner.reports.read().values().cloned().collect();
        for slot in slots {
            let s = slot.lock();
            if s.report.stage == PipelineStage::Submitted
                || s.dets.values().any(|d| !d.consensus.status.is_final())
            {
                continue;
            }
            let key = s.report.id.to_string();
            let p = preds.entry(key.clone()).or_default();
            let t = truth.entry(key).or_default();
            for d in &s.report.detections {
                p.push(Prediction {
                    bbox: d.bbox,
                    class: d.class,
                    score: d.confidence,
                });
                let rec = &s.dets[&d.id];
                if rec.consensus.status == ConsensusStatus::Confirmed {
                    let (bbox, class) = corrected(d, rec);
                    t.push(Truth { bbox, class });
                }
            }
        }
        (preds, truth)
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let (preds, truth) = self.consensus_dataset();
        let telemetry = self.telemetry();
        let n_sites = self.sites().map(|s| s.len()).unwrap_or(0);
        let metrics = evaluate(&preds, &truth).ok().map(|m| {
            m.with_latency((telemetry.mean_overhead_ms + telemetry.mean_detector_ms) / 1000.0)
                .with_sites(n_sites)
        });
        MetricsSnapshot {
            metrics,
            latency: self.latency_stats(None).ok(),
            telemetry,
        }
    }
}

/// Box and class after the latest adjusting vote or expert decision.
fn corrected(d: &Detection, rec: &DetectionRecord) -> (BoundingBox, HazardClass) {
    let mut bbox = d.bbox;
    let mut class = d.class;
    let adjustments = effective_votes(&rec.votes)
        .into_iter()
        .map(|v| &v.verdict)
        .chain(rec.consensus.expert_decision.as_ref());
    for v in adjustments {
        if let Verdict::Adjust { bbox: b, class: c } = v {
            if let Some(b) = b {
                bbox = *b;
            }
            if let Some(c) = c {
                class = *c;
            }
        }
    }
    (bbox, class)
}

/// Box-indicator activations used when a backend exposes none.
pub fn box_prior_features(dets: &[RawDetection], width: u32, height: u32, stride: u32) -> Option<FeatureStack> {
    let classes: Vec<HazardClass> = dets
        .iter()
        .map(|d| d.class)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.is_empty() {
        return None;
    }
    let gw = width.div_ceil(stride).max(1) as usize;
    let gh = height.div_ceil(stride).max(1) as usize;
    let s = stride as f64;
    let mut channels = vec![vec![0.0; gw * gh]; classes.len()];
    for d in dets {
        let k = classes.iter().position(|c| *c == d.class).expect("class collected above");
        let [x0, y0, x1, y1] = d.bbox.to_array();
        for r in 0..gh {
            for c in 0..gw {
                let (cx, cy) = ((c as f64 + 0.5) * s, (r as f64 + 0.5) * s);
                if cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1 {
                    channels[k][r * gw + c] += d.score;
                }
            }
        }
    }
    let weights = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, (0..classes.len()).map(|j| if i == j { 1.0 } else { 0.0 }).collect()))
        .collect();
    FeatureStack::new(gh, gw, channels, weights).ok()
}

fn decode(bytes: &[u8]) -> Result<RgbImage, PipelineError> {
    Ok(image::load_from_memory(bytes)
        .map_err(|e| PipelineError::Image(e.to_string()))?
        .to_rgb8())
}

fn numeric_suffix(id: &str, prefix: &str) -> u64 {
    id.strip_prefix(prefix).and_then(|n| n.parse().ok()).unwrap_or(0)
}

impl Inner {
    fn restore(&self) -> Result<(), PipelineError> {
        let reports: Vec<Report> = self.store.scan_as(Table::Reports)?;
        let mut recs: BTreeMap<ReportId, BTreeMap<DetectionId, DetectionRecord>> = BTreeMap::new();
        for (k, v) in self.store.scan(Table::Consensus)? {
            let rec: DetectionRecord = serde_json::from_value(v).map_err(StoreError::from)?;
            recs.entry(rec.report_id.clone()).or_default().insert(DetectionId::new(k), rec);
        }
        for r in reports {
            let dets = recs.remove(&r.id).unwrap_or_default();
            self.next_report
                .fetch_max(numeric_suffix(r.id.as_str(), "rep-"), Ordering::Relaxed);
            if let Some(cell) = self.grid.locate(&r.geo) {
                *self.density.write().entry(cell).or_default() += 1;
            }
            for (id, rec) in &dets {
                self.det_index.write().insert(id.clone(), r.id.clone());
                match rec.consensus.status {
                    ConsensusStatus::Pending => {
                        self.pending.write().insert(id.clone());
                    }
                    ConsensusStatus::Escalated => {
                        self.escalated.write().insert(id.clone());
                    }
                    _ => {}
                }
            }
            if matches!(
                r.stage,
                PipelineStage::Validated | PipelineStage::Reported | PipelineStage::Published
            ) {
                let n = dets
                    .values()
                    .filter(|d| d.consensus.status == ConsensusStatus::Confirmed)
                    .count() as u32;
                self.validated.write().insert(r.id.clone(), (r.geo, n));
            }
            self.reports
                .write()
                .insert(r.id.clone(), Arc::new(Mutex::new(Slot { report: r, dets })));
        }
        for p in self.store.scan_as::<ValidatorProfile>(Table::Profiles)? {
            self.profiles.write().insert(p.id.clone(), p);
        }
        for (k, v) in self.store.scan(Table::Dedup)? {
            let key: u64 = serde_json::from_value(v).map_err(StoreError::from)?;
            self.dedup.lock().push((key, ReportId::new(k)));
        }
        for d in self.store.scan_as::<DraftReport>(Table::Drafts)? {
            self.next_draft
                .fetch_max(numeric_suffix(d.id.as_str(), "draft-"), Ordering::Relaxed);
            if let Some(site) = &d.site {
                if d.review_state == ReviewState::Draft && d.report_ids.len() > 1 {
                    self.site_drafts.lock().insert(site.id.clone(), d.id.clone());
                }
            }
            self.drafts.write().insert(d.id.clone(), d);
        }
        *self.feedback.lock() = self.store.read_log_as(Log::Feedback)?;
        if let Some(c) = self.store.get_as::<CalibrationState>(Table::Meta, "calibration")? {
            *self.calib.write() = c;
        }
        Ok(())
    }

    fn slot(&self, id: &ReportId) -> Result<Arc<Mutex<Slot>>, PipelineError> {
        self.reports
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| PipelineError::UnknownReport(id.clone()))
    }

    fn slot_of(&self, det: &DetectionId) -> Result<Arc<Mutex<Slot>>, PipelineError> {
        let rid = self
            .det_index
            .read()
            .get(det)
            .cloned()
            .ok_or_else(|| PipelineError::UnknownDetection(det.clone()))?;
        self.slot(&rid)
    }

    fn persist(&self, s: &Slot) -> Result<(), PipelineError> {
        self.store.put_as(Table::Reports, s.report.id.as_str(), &s.report)?;
        Ok(())
    }

    fn persist_det(&self, id: &DetectionId, rec: &DetectionRecord) -> Result<(), PipelineError> {
        self.store.put_as(Table::Consensus, id.as_str(), rec)?;
        Ok(())
    }

    fn advance(&self, s: &mut Slot, event: PipelineEvent) -> Result<StageTransition, PipelineError> {
        if event == PipelineEvent::Drafted
            && !s.dets.values().any(|d| d.consensus.status == ConsensusStatus::Confirmed)
        {
            return Err(PipelineError::NoConfirmedDetection(s.report.id.clone()));
        }
        if event == PipelineEvent::ValidationOpened && s.report.detections.iter().any(|d| d.cam_ref.is_none()) {
            return Err(PipelineError::WrongStage {
                report: s.report.id.clone(),
                stage: s.report.stage,
            });
        }
        let t = apply_event(&mut s.report, event, self.clock.now())?;
        self.store.append_as(Log::Transitions, &t)?;
        self.persist(s)?;
        Ok(t)
    }

    fn ensure_profile(&self, id: &ValidatorId, expert: bool) -> Result<ValidatorProfile, PipelineError> {
        let mut profiles = self.profiles.write();
        if let Some(p) = profiles.get_mut(id) {
            if expert && !p.expert {
                *p = ValidatorProfile {
                    votes_cast: p.votes_cast,
                    ..ValidatorProfile::expert(id.clone())
                };
                self.store.put_as(Table::Profiles, id.as_str(), &*p)?;
            }
            return Ok(p.clone());
        }
        let p = if expert {
            ValidatorProfile::expert(id.clone())
        } else {
            ValidatorProfile::new(id.clone(), self.cfg.validation.credibility_initial)
        };
        self.store.put_as(Table::Profiles, id.as_str(), &p)?;
        profiles.insert(id.clone(), p.clone());
        Ok(p)
    }

    fn submit(&self, raw: &RawSubmission) -> Result<IngestOutcome, PipelineError> {
        self.counters.submitted.fetch_add(1, Ordering::Relaxed);
        let prepared = match prepare(raw, &self.cfg.ingest, &self.cfg.server.salt) {
            Ok(p) => p,
            Err(reason) => {
                self.counters.rejected_at_ingest.fetch_add(1, Ordering::Relaxed);
                return Ok(IngestOutcome::Rejected { reason });
            }
        };
        let mut dedup = self.dedup.lock();
        if let Some((_, existing)) = dedup
            .iter()
            .find(|(k, _)| hamming(*k, prepared.dedup_key) <= self.cfg.ingest.dedup_threshold)
        {
            self.counters.duplicates.fetch_add(1, Ordering::Relaxed);
            return Ok(IngestOutcome::Duplicate {
                existing: existing.clone(),
            });
        }
        let n = self.next_report.fetch_add(1, Ordering::Relaxed) + 1;
        let id = ReportId::new(format!("rep-{n:08}"));
        let image_ref = self.blobs.put(&prepared.anonymized)?;
        let now = self.clock.now();
        let mut report = Report::new(
            id.clone(),
            prepared.submitter,
            prepared.geo,
            prepared.captured_at.unwrap_or(now),
            image_ref,
            now,
        );
        report.quality_flags = prepared.quality_flags;
        self.store.put_as(Table::Reports, id.as_str(), &report)?;
        self.store.append_as(Log::Transitions, &initial_transition(&report))?;
        self.store.put_as(Table::Dedup, id.as_str(), &prepared.dedup_key)?;
        dedup.push((prepared.dedup_key, id.clone()));
        drop(dedup);
        if let Some(cell) = self.grid.locate(&report.geo) {
            *self.density.write().entry(cell).or_default() += 1;
        }
        self.reports.write().insert(
            id.clone(),
            Arc::new(Mutex::new(Slot {
                report,
                dets: BTreeMap::new(),
            })),
        );
        self.counters.accepted.fetch_add(1, Ordering::Relaxed);
        Ok(IngestOutcome::Accepted { report_id: id })
    }

    fn detect(&self, id: &ReportId) -> Result<Report, PipelineError> {
        let slot = self.slot(id)?;
        let mut s = slot.lock();
        if s.report.stage != PipelineStage::Submitted {
            return Err(PipelineError::WrongStage {
                report: id.clone(),
                stage: s.report.stage,
            });
        }
        let bytes = self
            .blobs
            .get(&s.report.image_ref)?
            .ok_or_else(|| ExplainError::MissingBlob(s.report.image_ref.clone()))?;
        let base = decode(&bytes)?;
        let (w, h) = base.dimensions();
        let input = ImageInput {
            image_ref: &s.report.image_ref,
            width: w,
            height: h,
            pixels: None,
        };
        let t = Instant::now();
        let (raw, features) = self.detectors.with(|d| -> Result<_, DetectorError> {
            let raw = d.detect(&input)?;
            let features = if d.capabilities().activations {
                d.activations(&input)?
            } else {
                None
            };
            Ok((raw, features))
        })??;
        self.counters.detector_ns.fetch_add(elapsed_ns(t), Ordering::Relaxed);

        let (table, threshold) = {
            let c = self.calib.read();
            (c.table.clone(), c.threshold)
        };
        let kept: Vec<RawDetection> = raw
            .into_iter()
            .filter(|d| d.score >= threshold && d.bbox.within(w as f64, h as f64))
            .collect();
        let features = features.or_else(|| box_prior_features(&kept, w, h, 16));
        let mut cam_refs: BTreeMap<HazardClass, BlobId> = BTreeMap::new();
        for class in kept.iter().map(|d| d.class).collect::<BTreeSet<_>>() {
            let fs = match features.as_ref().filter(|f| f.weights(class).is_some()) {
                Some(f) => f.clone(),
                None => box_prior_features(&kept, w, h, 16).expect("kept is non-empty"),
            };
            let heat = cam(&fs, class, w, h)?;
            let png = encode_png(&overlay(&base, &heat, self.cfg.explain.overlay_alpha)?);
            cam_refs.insert(class, self.blobs.put(&png)?);
        }
        s.report.detections = kept
            .iter()
            .enumerate()
            .map(|(i, d)| Detection {
                id: DetectionId::new(format!("{id}-d{i}")),
                bbox: d.bbox,
                class: d.class,
                confidence: d.score,
                uncertainty: calibrate_uncertainty(d.score, &table),
                cam_ref: cam_refs.get(&d.class).cloned(),
                lime_ref: None,
            })
            .collect();
        self.counters
            .detections
            .fetch_add(kept.len() as u64, Ordering::Relaxed);
        self.advance(&mut s, PipelineEvent::DetectionComplete)?;
        let dets = s.report.detections.clone();
        for d in &dets {
            let mut consensus = ConsensusState::new(d.id.clone());
            if d.uncertainty > self.params.uncertainty_escalation {
                consensus.status = ConsensusStatus::Escalated;
                self.escalated.write().insert(d.id.clone());
            } else {
                self.pending.write().insert(d.id.clone());
            }
            let rec = DetectionRecord {
                report_id: id.clone(),
                consensus,
                votes: Vec::new(),
                truth_applied: false,
            };
            self.persist_det(&d.id, &rec)?;
            self.det_index.write().insert(d.id.clone(), id.clone());
            s.dets.insert(d.id.clone(), rec);
        }
        self.advance(&mut s, PipelineEvent::ValidationOpened)?;
        self.settle_report(&mut s)?;
        Ok(s.report.clone())
    }

    fn queue(&self, validator: &ValidatorId, limit: usize) -> Vec<TaskAssignment> {
        let me = hash_submitter(validator.as_str(), &self.cfg.server.salt);
        let expert = self.profiles.read().get(validator).is_some_and(|p| p.expert);
        let mut ids: Vec<DetectionId> = self.pending.read().iter().cloned().collect();
        if expert {
            ids.extend(self.escalated.read().iter().cloned());
        }
        let density = self.density.read().clone();
        let mut candidates = Vec::new();
        for id in ids {
            let Ok(slot) = self.slot_of(&id) else { continue };
            let s = slot.lock();
            if s.report.submitter == me {
                continue;
            }
            let Some(rec) = s.dets.get(&id) else { continue };
            if rec.votes.iter().any(|v| &v.validator_id == validator) {
                continue;
            }
            let Some(det) = s.report.detection(&id) else { continue };
            candidates.push(TaskCandidate {
                detection_id: id.clone(),
                uncertainty: det.uncertainty,
                cell: self.grid.locate(&s.report.geo),
            });
        }
        let mut out = prioritize(&candidates, &density, self.params.beta);
        out.truncate(limit);
        for a in &mut out {
            a.offered_to = vec![validator.clone()];
        }
        out
    }

    fn check_not_submitter(&self, s: &Slot, validator: &ValidatorId) -> Result<(), PipelineError> {
        if s.report.submitter == hash_submitter(validator.as_str(), &self.cfg.server.salt) {
            return Err(PipelineError::SelfValidation);
        }
        Ok(())
    }

    fn voter_profiles(&self, votes: &[Vote]) -> BTreeMap<ValidatorId, ValidatorProfile> {
        let profiles = self.profiles.read();
        votes
            .iter()
            .filter_map(|v| profiles.get(&v.validator_id).map(|p| (v.validator_id.clone(), p.clone())))
            .collect()
    }

    fn vote(
        &self,
        validator: &ValidatorId,
        detection: &DetectionId,
        verdict: Verdict,
    ) -> Result<ConsensusState, PipelineError> {
        let slot = self.slot_of(detection)?;
        let mut s = slot.lock();
        self.check_not_submitter(&s, validator)?;
        let uncertainty = s
            .report
            .detection(detection)
            .map(|d| d.uncertainty)
            .ok_or_else(|| PipelineError::UnknownDetection(detection.clone()))?;
        if s.dets[detection].consensus.status != ConsensusStatus::Pending {
            return Err(PipelineError::AlreadyResolved(detection.clone()));
        }
        self.ensure_profile(validator, false)?;
        let now = self.clock.now();
        let rec = s.dets.get_mut(detection).expect("checked above");
        rec.votes.retain(|v| &v.validator_id != validator);
        rec.votes.push(Vote {
            validator_id: validator.clone(),
            detection_id: detection.clone(),
            verdict,
            cast_at: now,
        });
        let profiles = self.voter_profiles(&rec.votes);
        rec.consensus = decide(&rec.consensus, &rec.votes, &profiles, uncertainty, &self.params)?;
        let status = rec.consensus.status;
        let rec = rec.clone();
        self.persist_det(detection, &rec)?;
        self.counters.votes.fetch_add(1, Ordering::Relaxed);
        if status != ConsensusStatus::Pending {
            self.pending.write().remove(detection);
            if status == ConsensusStatus::Escalated {
                self.escalated.write().insert(detection.clone());
            } else {
                self.record_feedback(&s, detection)?;
            }
            self.settle_report(&mut s)?;
        }
        Ok(rec.consensus)
    }

    fn expert_decide(
        &self,
        expert: &ValidatorId,
        detection: &DetectionId,
        verdict: Verdict,
    ) -> Result<ConsensusState, PipelineError> {
        if !self.profiles.read().get(expert).is_some_and(|p| p.expert) {
            return Err(PipelineError::NotExpert(expert.clone()));
        }
        let slot = self.slot_of(detection)?;
        let mut s = slot.lock();
        self.check_not_submitter(&s, expert)?;
        let rec = s.dets.get_mut(detection).expect("indexed detection has a record");
        if rec.consensus.status != ConsensusStatus::Escalated {
            return Err(PipelineError::AlreadyResolved(detection.clone()));
        }
        let truth = if verdict.affirms() {
            ConsensusTruth::Confirmed
        } else {
            ConsensusTruth::Rejected
        };
        rec.consensus = expert_resolve(&rec.consensus, verdict)?;
        let out = rec.consensus.clone();
        let rec = rec.clone();
        self.persist_det(detection, &rec)?;
        self.escalated.write().remove(detection);
        self.counters.expert_decisions.fetch_add(1, Ordering::Relaxed);
        self.record_feedback(&s, detection)?;
        self.apply_truth(&mut s, detection, truth)?;
        self.settle_report(&mut s)?;
        Ok(out)
    }

    fn apply_truth(&self, s: &mut Slot, detection: &DetectionId, truth: ConsensusTruth) -> Result<(), PipelineError> {
        let rec = s
            .dets
            .get_mut(detection)
            .ok_or_else(|| PipelineError::UnknownDetection(detection.clone()))?;
        if rec.truth_applied {
            return Ok(());
        }
        rec.truth_applied = true;
        let eta = self.cfg.validation.eta;
        let floor = self.cfg.validation.credibility_floor;
        {
            let mut profiles = self.profiles.write();
            for v in effective_votes(&rec.votes) {
                if let Some(p) = profiles.get_mut(&v.validator_id) {
                    *p = update_credibility(p, &v.verdict, truth, eta, floor);
                    self.store.put_as(Table::Profiles, p.id.as_str(), &*p)?;
                }
            }
        }
        let rec = rec.clone();
        self.persist_det(detection, &rec)
    }

    fn record_feedback(&self, s: &Slot, detection: &DetectionId) -> Result<(), PipelineError> {
        let rec = &s.dets[detection];
        let Some(truth) = rec.consensus.status.truth() else {
            return Ok(());
        };
        let d = s.report.detection(detection).expect("record has a detection");
        let (bbox, class) = corrected(d, rec);
        let fb = FeedbackRecord {
            detection_id: detection.clone(),
            predicted: PredictedLabel {
                class: d.class,
                confidence: d.confidence,
            },
            consensus_truth: truth,
            geometry_correction: (bbox != d.bbox).then_some(bbox),
            class_correction: (class != d.class).then_some(class),
        };
        self.store.append_as(Log::Feedback, &fb)?;
        let mut feedback = self.feedback.lock();
        feedback.push(fb);
        let n = feedback.len();
        let every = self.cfg.pipeline.recalibrate_every.max(1);
        if n % every == 0 && n >= self.cfg.pipeline.min_feedback {
            if let Ok(r) = recalibrate(&feedback, self.cfg.pipeline.min_feedback) {
                let mut c = self.calib.write();
                c.table = r.table.clone();
                if self.cfg.detector.adopt_recalibrated_threshold {
                    c.threshold = r.threshold;
                }
                c.last = Some(r);
                self.store.put_as(Table::Meta, "calibration", &*c)?;
            }
        }
        Ok(())
    }

    /// Moves the report once its detections allow it.
    fn settle_report(&self, s: &mut Slot) -> Result<(), PipelineError> {
        let statuses: Vec<ConsensusStatus> = s.dets.values().map(|d| d.consensus.status).collect();
        if statuses.contains(&ConsensusStatus::Pending) {
            return Ok(());
        }
        let all_final = statuses.iter().all(|st| st.is_final());
        let any_confirmed = statuses.contains(&ConsensusStatus::Confirmed);
        let event = match (s.report.stage, all_final, any_confirmed) {
            (PipelineStage::InValidation, true, true) => PipelineEvent::ConsensusConfirmed,
            (PipelineStage::InValidation, true, false) => PipelineEvent::ConsensusRejected,
            (PipelineStage::InValidation, false, _) => PipelineEvent::ConsensusAmbiguous,
            (PipelineStage::Escalated, true, true) => PipelineEvent::ExpertConfirm,
            (PipelineStage::Escalated, true, false) => PipelineEvent::ExpertReject,
            _ => return Ok(()),
        };
        self.advance(s, event)?;
        if s.report.stage == PipelineStage::Validated {
            self.on_validated(s)?;
        }
        Ok(())
    }

    fn evidence(s: &Slot) -> Evidence {
        Evidence {
            report_id: s.report.id.clone(),
            geo: s.report.geo,
            confirmed: s
                .report
                .detections
                .iter()
                .filter(|d| s.dets[&d.id].consensus.status == ConsensusStatus::Confirmed)
                .map(|d| corrected(d, &s.dets[&d.id]).1)
                .collect(),
        }
    }

    fn on_validated(&self, s: &mut Slot) -> Result<(), PipelineError> {
        let ev = Self::evidence(s);
        self.validated
            .write()
            .insert(s.report.id.clone(), (s.report.geo, ev.confirmed.len() as u32));
        let cell = self.grid.locate(&s.report.geo);
        let site = match cell {
            Some(cell) => self
                .sites(self.cfg.geo.region, self.cfg.geo.resolution_m)?
                .into_iter()
                .find(|site| site.member_cells.iter().any(|c| c.cell_id == cell)),
            None => None,
        };
        let draft = self.new_draft(&[ev], site.as_ref())?;
        self.advance(s, PipelineEvent::Drafted)?;
        drop(draft);
        Ok(())
    }

    fn new_draft(&self, evidence: &[Evidence], site: Option<&HotspotSite>) -> Result<DraftReport, PipelineError> {
        let n = self.next_draft.fetch_add(1, Ordering::Relaxed) + 1;
        let ctx = ReportContext {
            config: &self.cfg.report,
            backend: self.narrative.clone(),
        };
        let draft = generate_report(
            DraftId::new(format!("draft-{n:08}")),
            evidence,
            site,
            &ctx,
            self.clock.now(),
        )?;
        self.store.put_as(Table::Drafts, draft.id.as_str(), &draft)?;
        self.drafts.write().insert(draft.id.clone(), draft.clone());
        self.counters.drafts.fetch_add(1, Ordering::Relaxed);
        Ok(draft)
    }

    fn review(&self, id: &DraftId, publish: bool) -> Result<DraftReport, PipelineError> {
        let draft = {
            let mut drafts = self.drafts.write();
            let d = drafts
                .get_mut(id)
                .ok_or_else(|| PipelineError::UnknownDraft(id.clone()))?;
            if publish {
                d.publish()?;
            } else {
                d.approve()?;
            }
            self.store.put_as(Table::Drafts, id.as_str(), &*d)?;
            d.clone()
        };
        if publish {
            self.counters.published.fetch_add(1, Ordering::Relaxed);
            if let Some(site) = &draft.site {
                let mut sd = self.site_drafts.lock();
                if sd.get(&site.id) == Some(id) {
                    sd.remove(&site.id);
                }
            }
            for rid in &draft.report_ids {
                let slot = self.slot(rid)?;
                let mut s = slot.lock();
                if s.report.stage == PipelineStage::Reported {
                    self.advance(&mut s, PipelineEvent::Published)?;
                }
            }
        }
        Ok(draft)
    }

    fn smoothed(&self, region: Region, resolution_m: f64) -> Result<crate::geo::BinnedGrid, PipelineError> {
        let points: Vec<GeoPoint> = self
            .validated
            .read()
            .values()
            .flat_map(|(p, n)| std::iter::repeat_n(*p, *n as usize))
            .collect();
        let grid = bin(&points, region, resolution_m)?;
        Ok(smooth(&grid, self.cfg.geo.kernel_radius))
    }

    fn sites(&self, region: Region, resolution_m: f64) -> Result<Vec<HotspotSite>, PipelineError> {
        let grid = self.smoothed(region, resolution_m)?;
        Ok(extract_sites(&grid, self.cfg.geo.site_threshold, self.clock.now()))
    }

    fn site_report(&self, site_id: &str) -> Result<DraftReport, PipelineError> {
        let mut open = self.site_drafts.lock();
        if let Some(id) = open.get(site_id) {
            if let Some(d) = self.drafts.read().get(id) {
                return Ok(d.clone());
            }
        }
        let site = self
            .sites(self.cfg.geo.region, self.cfg.geo.resolution_m)?
            .into_iter()
            .find(|s| s.id == site_id)
            .ok_or_else(|| PipelineError::Report(ReportError::NoConfirmedEvidence))?;
        let cells: BTreeSet<_> = site.member_cells.iter().map(|c| c.cell_id).collect();
        let members: Vec<ReportId> = self
            .validated
            .read()
            .iter()
            .filter(|(_, (p, _))| self.grid.locate(p).is_some_and(|c| cells.contains(&c)))
            .map(|(id, _)| id.clone())
            .collect();
        let mut evidence = Vec::new();
        for rid in members {
            let slot = self.slot(&rid)?;
            let s = slot.lock();
            evidence.push(Self::evidence(&s));
        }
        let draft = self.new_draft(&evidence, Some(&site))?;
        open.insert(site_id.to_owned(), draft.id.clone());
        Ok(draft)
    }

    fn run_lime(&self, detection: &DetectionId) -> Result<LimeExplanation, PipelineError> {
        let slot = self.slot_of(detection)?;
        let (image_ref, target) = {
            let s = slot.lock();
            let d = s
                .report
                .detection(detection)
                .ok_or_else(|| PipelineError::UnknownDetection(detection.clone()))?;
            (s.report.image_ref.clone(), (d.bbox, d.class))
        };
        let bytes = self
            .blobs
            .get(&image_ref)?
            .ok_or_else(|| ExplainError::MissingBlob(image_ref.clone()))?;
        let img = decode(&bytes)?;
        let cfg = LimeConfig::from(&self.cfg.explain);
        let explanation = self.detectors.with(|backend| {
            let predict = |masked: &RgbImage| -> Result<f64, DetectorError> {
                let input = ImageInput {
                    image_ref: &image_ref,
                    width: masked.width(),
                    height: masked.height(),
                    pixels: Some(masked),
                };
                Ok(backend
                    .detect(&input)?
                    .iter()
                    .filter(|d| d.class == target.1 && iou(&d.bbox, &target.0) >= 0.5)
                    .map(|d| d.score)
                    .fold(0.0, f64::max))
            };
            lime_explain(predict, &img, &target.0, &cfg)
        })??;
        let blob = self
            .blobs
            .put(&serde_json::to_vec(&explanation).expect("explanation serializes"))?;
        let mut s = slot.lock();
        if let Some(d) = s.report.detections.iter_mut().find(|d| &d.id == detection) {
            d.lime_ref = Some(blob);
        }
        self.persist(&s)?;
        Ok(explanation)
    }
}

struct LimeWorker {
    inner: Arc<Inner>,
}

impl LimeRunner for LimeWorker {
    fn has_detection(&self, id: &DetectionId) -> bool {
        self.inner.det_index.read().contains_key(id)
    }

    fn run(&self, id: &DetectionId) -> Result<LimeExplanation, String> {
        self.inner.run_lime(id).map_err(|e| e.to_string())
    }
}
