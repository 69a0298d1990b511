//! Draft reports: facts, severity, the deterministic template and the
//! pluggable narrative backend.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ReportConfig;
use crate::domain::{DraftId, GeoPoint, HazardClass, ReportId, Timestamp};
use crate::geo::{haversine, HotspotSite};

pub type HazardSummary = BTreeMap<HazardClass, u32>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("hazard summary is empty")]
    EmptySummary,
    #[error("no confirmed evidence")]
    NoConfirmedEvidence,
    #[error("cannot move draft from {from:?} to {to:?}")]
    IllegalReview { from: ReviewState, to: ReviewState },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewState {
    Draft,
    HumanApproved,
    Published,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeverityThresholds {
    pub high: u32,
    pub medium: u32,
}

impl Default for SeverityThresholds {
    fn default() -> Self {
        SeverityThresholds { high: 10, medium: 3 }
    }
}

impl From<&ReportConfig> for SeverityThresholds {
    fn from(c: &ReportConfig) -> Self {
        SeverityThresholds {
            high: c.severity_high,
            medium: c.severity_medium,
        }
    }
}

pub fn severity(
    summary: &HazardSummary,
    site: Option<&HotspotSite>,
    th: SeverityThresholds,
) -> Result<Severity, ReportError> {
    let total: u32 = summary.values().sum();
    if total == 0 {
        return Err(ReportError::EmptySummary);
    }
    let site_high = site.is_some_and(|s| s.total_count >= th.high as u64);
    if site_high || summary.values().any(|c| *c >= th.high) {
        Ok(Severity::High)
    } else if total >= th.medium {
        Ok(Severity::Medium)
    } else {
        Ok(Severity::Low)
    }
}

const GAZETTEER: [(&str, f64, f64); 12] = [
    ("Palma", 39.5696, 2.6502),
    ("Alcúdia", 39.8532, 3.1217),
    ("Manacor", 39.5696, 3.2096),
    ("Inca", 39.7210, 2.9110),
    ("Sóller", 39.7667, 2.7152),
    ("Pollença", 39.8770, 3.0163),
    ("Llucmajor", 39.4903, 2.8906),
    ("Felanitx", 39.4696, 3.1483),
    ("Andratx", 39.5757, 2.4200),
    ("Santanyí", 39.3544, 3.1283),
    ("Artà", 39.6936, 3.3500),
    ("sa Pobla", 39.7697, 3.0236),
];

/// Nearest named place within 25 km.
pub fn gazetteer_name(p: &GeoPoint) -> Option<&'static str> {
    GAZETTEER
        .iter()
        .map(|(name, lat, lon)| {
            let q = GeoPoint::new(*lat, *lon).expect("gazetteer coordinates are valid");
            (*name, haversine(p, &q))
        })
        .filter(|(_, d)| *d <= 25_000.0)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, _)| n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteFacts {
    pub id: String,
    pub n_cells: usize,
    pub total_count: u64,
}

/// Canonical facts document handed to narrative backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFacts {
    pub report_ids: Vec<ReportId>,
    pub location: GeoPoint,
    pub place_name: Option<String>,
    pub site: Option<SiteFacts>,
    pub hazard_summary: HazardSummary,
    pub n_confirmed: u32,
    pub severity: Severity,
    pub language: String,
    pub tone: String,
}

fn plural(n: u64, one: &str, many: &str) -> String {
    format!("{n} {}", if n == 1 { one } else { many })
}

/// Deterministic narrative: headline, location, one sentence per class,
/// validation status and a severity-keyed closing line.
pub fn render_template(f: &ReportFacts) -> String {
    let mut s = String::new();
    let sev = match f.severity {
        Severity::Low => "Low",
        Severity::Medium => "Medium",
        Severity::High => "High",
    };
    let place = f.place_name.as_deref().unwrap_or("an unnamed locality");
    let _ = writeln!(s, "{sev} severity waste hazard report near {place}.");
    let _ = write!(
        s,
        "Location: {:.5}, {:.5} (near {place})",
        f.location.lat(),
        f.location.lon()
    );
    match &f.site {
        Some(site) => {
            let _ = writeln!(
                s,
                ", hotspot site {} spanning {} with {} in total.",
                site.id,
                plural(site.n_cells as u64, "grid cell", "grid cells"),
                plural(site.total_count, "validated detection", "validated detections")
            );
        }
        None => s.push_str(".\n"),
    }
    for (class, n) in &f.hazard_summary {
        let _ = writeln!(
            s,
            "Hazard type {}: {}.",
            class.display_name(),
            plural(*n as u64, "confirmed detection", "confirmed detections")
        );
    }
    let _ = writeln!(
        s,
        "Validation: {} confirmed by community consensus across {}.",
        plural(f.n_confirmed as u64, "detection", "detections"),
        plural(f.report_ids.len() as u64, "citizen report", "citizen reports")
    );
    s.push_str(match f.severity {
        Severity::High => "Immediate clean-up action is recommended.\n",
        Severity::Medium => "A scheduled inspection is recommended.\n",
        Severity::Low => "Continued monitoring is recommended.\n",
    });
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NarrativeError {
    #[error("narrative backend failed: {0}")]
    Failed(String),
    #[error("narrative backend timed out")]
    Timeout,
}

/// External text generator (language model client or recorded stub).
pub trait NarrativeBackend: Send + Sync {
    fn generate(&self, facts: &ReportFacts, tone: &str, language: &str) -> Result<String, NarrativeError>;
}

/// Test double returning a fixed response, an error, or sleeping first.
#[derive(Debug, Clone)]
pub struct RecordedBackend {
    pub response: Result<String, String>,
    pub delay: Duration,
}

impl RecordedBackend {
    pub fn ok(text: impl Into<String>) -> Self {
        RecordedBackend {
            response: Ok(text.into()),
            delay: Duration::ZERO,
        }
    }

    pub fn failing(reason: impl Into<String>) -> Self {
        RecordedBackend {
            response: Err(reason.into()),
            delay: Duration::ZERO,
        }
    }
}

impl NarrativeBackend for RecordedBackend {
    fn generate(&self, _facts: &ReportFacts, _tone: &str, _language: &str) -> Result<String, NarrativeError> {
        std::thread::sleep(self.delay);
        self.response.clone().map_err(NarrativeError::Failed)
    }
}

/// Runs `backend` on a helper thread and gives up after `timeout`.
pub fn narrate_with_timeout(
    backend: Arc<dyn NarrativeBackend>,
    facts: &ReportFacts,
    timeout: Duration,
) -> Result<String, NarrativeError> {
    let (tx, rx) = mpsc::channel();
    let facts = facts.clone();
    std::thread::spawn(move || {
        let out = backend.generate(&facts, &facts.tone, &facts.language);
        let _ = tx.send(out);
    });
    match rx.recv_timeout(timeout) {
        Ok(Ok(text)) if !text.trim().is_empty() => Ok(text),
        Ok(Ok(_)) => Err(NarrativeError::Failed("empty narrative".into())),
        Ok(Err(e)) => Err(e),
        Err(_) => Err(NarrativeError::Timeout),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftReport {
    pub id: DraftId,
    pub report_ids: Vec<ReportId>,
    pub site: Option<HotspotSite>,
    pub hazard_summary: HazardSummary,
    pub severity: Severity,
    pub narrative: String,
    pub generated_at: Timestamp,
    pub review_state: ReviewState,
    /// Narrative came from the template because the backend failed.
    pub degraded: bool,
    pub facts: ReportFacts,
}

impl DraftReport {
    pub fn approve(&mut self) -> Result<(), ReportError> {
        self.step(ReviewState::Draft, ReviewState::HumanApproved)
    }

    pub fn publish(&mut self) -> Result<(), ReportError> {
        self.step(ReviewState::HumanApproved, ReviewState::Published)
    }

    fn step(&mut self, from: ReviewState, to: ReviewState) -> Result<(), ReportError> {
        if self.review_state != from {
            return Err(ReportError::IllegalReview {
                from: self.review_state,
                to,
            });
        }
        self.review_state = to;
        Ok(())
    }
}

/// One report's contribution: position and consensus-confirmed classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub report_id: ReportId,
    pub geo: GeoPoint,
    pub confirmed: Vec<HazardClass>,
}

pub struct ReportContext<'a> {
    pub config: &'a ReportConfig,
    pub backend: Option<Arc<dyn NarrativeBackend>>,
}

pub fn assemble_facts(
    evidence: &[Evidence],
    site: Option<&HotspotSite>,
    config: &ReportConfig,
) -> Result<ReportFacts, ReportError> {
    let used: Vec<&Evidence> = evidence.iter().filter(|e| !e.confirmed.is_empty()).collect();
    if used.is_empty() {
        return Err(ReportError::NoConfirmedEvidence);
    }
    let mut summary = HazardSummary::new();
    for c in used.iter().flat_map(|e| &e.confirmed) {
        *summary.entry(*c).or_default() += 1;
    }
    let location = match site {
        Some(s) => s.centroid,
        None => {
            let n = used.len() as f64;
            let lat = used.iter().map(|e| e.geo.lat()).sum::<f64>() / n;
            let lon = used.iter().map(|e| e.geo.lon()).sum::<f64>() / n;
            GeoPoint::new(lat, lon).expect("mean of valid points is valid")
        }
    };
    let mut report_ids: Vec<ReportId> = used.iter().map(|e| e.report_id.clone()).collect();
    report_ids.sort();
    report_ids.dedup();
    Ok(ReportFacts {
        report_ids,
        place_name: gazetteer_name(&location).map(str::to_owned),
        location,
        site: site.map(|s| SiteFacts {
            id: s.id.clone(),
            n_cells: s.member_cells.len(),
            total_count: s.total_count,
        }),
        n_confirmed: summary.values().sum(),
        severity: severity(&summary, site, config.into())?,
        hazard_summary: summary,
        language: config.language.clone(),
        tone: config.tone.clone(),
    })
}

/// Builds a draft from consensus-confirmed evidence. Backend failures and
/// timeouts fall back to [`render_template`].
pub fn generate_report(
    id: DraftId,
    evidence: &[Evidence],
    site: Option<&HotspotSite>,
    ctx: &ReportContext<'_>,
    now: Timestamp,
) -> Result<DraftReport, ReportError> {
    let facts = assemble_facts(evidence, site, ctx.config)?;
    let (narrative, degraded) = match &ctx.backend {
        None => (render_template(&facts), false),
        Some(b) => match narrate_with_timeout(
            Arc::clone(b),
            &facts,
            Duration::from_secs_f64(ctx.config.backend_timeout_s),
        ) {
            Ok(text) => (text, false),
            Err(_) => (render_template(&facts), true),
        },
    };
    Ok(DraftReport {
        id,
        report_ids: facts.report_ids.clone(),
        site: site.cloned(),
        hazard_summary: facts.hazard_summary.clone(),
        severity: facts.severity,
        narrative,
        generated_at: now,
        review_state: ReviewState::Draft,
        degraded,
        facts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_geopoint;

    fn sum(items: &[(HazardClass, u32)]) -> HazardSummary {
        items.iter().copied().collect()
    }

    fn evidence() -> Vec<Evidence> {
        vec![Evidence {
            report_id: ReportId::new("rep-00000001"),
            geo: make_geopoint(39.5700, 2.6500).unwrap(),
            confirmed: vec![HazardClass::PlasticFoil],
        }]
    }

    #[test]
    fn severity_examples() {
        let th = SeverityThresholds::default();
        assert_eq!(severity(&sum(&[(HazardClass::PlasticFoil, 1)]), None, th), Ok(Severity::Low));
        assert_eq!(
            severity(&sum(&[(HazardClass::PlasticFoil, 2), (HazardClass::MetalCan, 1)]), None, th),
            Ok(Severity::Medium)
        );
        assert_eq!(severity(&sum(&[(HazardClass::Other, 10)]), None, th), Ok(Severity::High));
        assert_eq!(severity(&HazardSummary::new(), None, th), Err(ReportError::EmptySummary));
    }

    #[test]
    fn template_names_class_and_place() {
        let cfg = ReportConfig::default();
        let facts = assemble_facts(&evidence(), None, &cfg).unwrap();
        let text = render_template(&facts);
        assert!(text.contains("plastic foil"));
        assert!(text.contains("Palma"));
        assert_eq!(text, render_template(&facts));
    }

    #[test]
    fn no_confirmed_evidence() {
        let mut ev = evidence();
        ev[0].confirmed.clear();
        let ctx = ReportContext {
            config: &ReportConfig::default(),
            backend: None,
        };
        assert_eq!(
            generate_report(DraftId::new("x"), &ev, None, &ctx, Timestamp::from_millis(0)).unwrap_err(),
            ReportError::NoConfirmedEvidence
        );
    }

    #[test]
    fn backend_paths() {
        let cfg = ReportConfig {
            backend_timeout_s: 0.2,
            ..ReportConfig::default()
        };
        let run = |b: Option<Arc<dyn NarrativeBackend>>| {
            let ctx = ReportContext { config: &cfg, backend: b };
            generate_report(DraftId::new("x"), &evidence(), None, &ctx, Timestamp::from_millis(0)).unwrap()
        };
        let template = render_template(&assemble_facts(&evidence(), None, &cfg).unwrap());
        let plain = run(None);
        assert_eq!(plain.narrative, template);
        assert!(!plain.degraded);
        assert_eq!(plain.review_state, ReviewState::Draft);
        let ok = run(Some(Arc::new(RecordedBackend::ok("A plastic foil dump near Palma."))));
        assert_eq!(ok.narrative, "A plastic foil dump near Palma.");
        let failed = run(Some(Arc::new(RecordedBackend::failing("rate limited"))));
        assert!(failed.degraded);
        assert_eq!(failed.narrative, template);
        let slow = RecordedBackend {
            response: Ok("late".into()),
            delay: Duration::from_secs(2),
        };
        let timed_out = run(Some(Arc::new(slow)));
        assert!(timed_out.degraded);
        assert_eq!(timed_out.narrative, template);
    }

    #[test]
    fn review_gate() {
        let ctx = ReportContext {
            config: &ReportConfig::default(),
            backend: None,
        };
        let mut d = generate_report(DraftId::new("x"), &evidence(), None, &ctx, Timestamp::from_millis(0)).unwrap();
        assert!(d.publish().is_err());
        d.approve().unwrap();
        assert!(d.approve().is_err());
        d.publish().unwrap();
        assert_eq!(d.review_state, ReviewState::Published);
    }
}
