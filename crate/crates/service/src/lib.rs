//! HTTP service and wiring for the hazard report pipeline.

pub mod api;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use hazardpipe_core::blob::{BlobStore, FsBlobStore};
use hazardpipe_core::clock::SystemClock;
use hazardpipe_core::detector::{Capabilities, DetectorBackend, ExternalProcessDetector};
use hazardpipe_core::domain::{HazardClass, ValidatorId};
use hazardpipe_core::report::{NarrativeBackend, NarrativeError, ReportFacts};
use hazardpipe_core::sim::{generate_scenario, MockDetector, Scenario};
use hazardpipe_core::store::FileStore;
use hazardpipe_core::{Config, Pipeline, PipelineParts};

pub use api::{router, AppState};

/// Narrative backend over HTTP: the facts document is POSTed as JSON with
/// `tone` and `language` query parameters; the body of the answer is the
/// narrative as plain text.
pub struct HttpNarrative {
    url: String,
    agent: ureq::Agent,
}

impl HttpNarrative {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpNarrative { url: url.into(), agent }
    }
}

impl NarrativeBackend for HttpNarrative {
    fn generate(&self, facts: &ReportFacts, tone: &str, language: &str) -> Result<String, NarrativeError> {
        let failed = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => NarrativeError::Timeout,
            e => NarrativeError::Failed(e.to_string()),
        };
        let text = self
            .agent
            .post(&self.url)
            .query("tone", tone)
            .query("language", language)
            .send_json(facts)
            .map_err(failed)?
            .body_mut()
            .read_to_string()
            .map_err(failed)?;
        if text.trim().is_empty() {
            return Err(NarrativeError::Failed("empty narrative".into()));
        }
        Ok(text)
    }
}

/// The synthetic scenario the mock detector and `--demo` share.
pub fn demo_scenario(cfg: &Config) -> anyhow::Result<Scenario> {
    Ok(generate_scenario(&cfg.simulation, &cfg.geo.region)?)
}

/// External detector processes when `detector.command` is set, otherwise
/// mock detectors replaying `scenario`.
pub fn build_detectors(
    cfg: &Config,
    blobs: &Arc<dyn BlobStore>,
    scenario: Option<&Scenario>,
) -> anyhow::Result<Vec<Box<dyn DetectorBackend>>> {
    let n = cfg.detector.pool_size.max(1);
    let mut out: Vec<Box<dyn DetectorBackend>> = Vec::with_capacity(n);
    if !cfg.detector.command.is_empty() {
        let caps = Capabilities {
            max_image_edge: 4096,
            classes: HazardClass::ALL.to_vec(),
            activations: false,
        };
        for _ in 0..n {
            let d = ExternalProcessDetector::spawn(&cfg.detector.command, caps.clone())?
                .with_blob_store(Arc::clone(blobs));
            out.push(Box::new(d));
        }
    } else if let Some(s) = scenario {
        for _ in 0..n {
            out.push(Box::new(MockDetector::new(s.plans.clone())));
        }
    }
    Ok(out)
}

/// Opens a pipeline persisted under `data_dir`.
pub fn open_pipeline(
    cfg: Config,
    data_dir: &Path,
    detectors: Vec<Box<dyn DetectorBackend>>,
    blobs: Arc<dyn BlobStore>,
) -> anyhow::Result<Pipeline> {
    let store = Arc::new(FileStore::open(data_dir.join("state"))?);
    let narrative: Option<Arc<dyn NarrativeBackend>> = if cfg.report.backend_url.is_empty() {
        None
    } else {
        Some(Arc::new(HttpNarrative::new(
            cfg.report.backend_url.clone(),
            Duration::from_secs_f64(cfg.report.backend_timeout_s),
        )))
    };
    let experts = cfg.server.experts.clone();
    let pipeline = Pipeline::open(PipelineParts {
        config: cfg,
        store,
        blobs,
        detectors,
        clock: Arc::new(SystemClock),
        narrative,
    })?;
    for e in experts {
        pipeline.register_validator(&ValidatorId::new(e), true)?;
    }
    Ok(pipeline)
}

pub fn open_blobs(data_dir: &Path) -> anyhow::Result<Arc<dyn BlobStore>> {
    Ok(Arc::new(FsBlobStore::open(data_dir.join("blobs"))?))
}
