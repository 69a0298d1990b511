use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{PipelineStage, Report, ReportId, StageEntry, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionCause {
    Ingest,
    Detection,
    Consensus,
    Expert,
    Editor,
    Publish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineEvent {
    DetectionComplete,
    ValidationOpened,
    ConsensusConfirmed,
    ConsensusRejected,
    ConsensusAmbiguous,
    ExpertConfirm,
    ExpertReject,
    Drafted,
    Published,
}

impl PipelineEvent {
    pub const ALL: [PipelineEvent; 9] = [
        PipelineEvent::DetectionComplete,
        PipelineEvent::ValidationOpened,
        PipelineEvent::ConsensusConfirmed,
        PipelineEvent::ConsensusRejected,
        PipelineEvent::ConsensusAmbiguous,
        PipelineEvent::ExpertConfirm,
        PipelineEvent::ExpertReject,
        PipelineEvent::Drafted,
        PipelineEvent::Published,
    ];

    pub fn cause(self) -> TransitionCause {
        use PipelineEvent::*;
        match self {
            DetectionComplete | ValidationOpened => TransitionCause::Detection,
            ConsensusConfirmed | ConsensusRejected | ConsensusAmbiguous => TransitionCause::Consensus,
            ExpertConfirm | ExpertReject => TransitionCause::Expert,
            Drafted => TransitionCause::Editor,
            Published => TransitionCause::Publish,
        }
    }

    /// Stage reached by applying this event in `from`, if legal.
    pub fn target(self, from: PipelineStage) -> Option<PipelineStage> {
        use PipelineEvent as E;
        use PipelineStage as S;
        let to = match (from, self) {
            (S::Submitted, E::DetectionComplete) => S::Detected,
            (S::Detected, E::ValidationOpened) => S::InValidation,
            (S::InValidation, E::ConsensusConfirmed) => S::Validated,
            (S::InValidation, E::ConsensusRejected) => S::Rejected,
            (S::InValidation, E::ConsensusAmbiguous) => S::Escalated,
            (S::Escalated, E::ExpertConfirm) => S::Validated,
            (S::Escalated, E::ExpertReject) => S::Rejected,
            (S::Validated, E::Drafted) => S::Reported,
            (S::Reported, E::Published) => S::Published,
            _ => return None,
        };
        debug_assert!(from.can_transition_to(to));
        Some(to)
    }
}

/// One entry of the append-only transition log. `from` is `None` for the
/// initial `Submitted` entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTransition {
    pub report_id: ReportId,
    pub from: Option<PipelineStage>,
    pub to: PipelineStage,
    pub at: Timestamp,
    pub cause: TransitionCause,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("illegal transition: {event:?} in stage {from}")]
    IllegalTransition { from: PipelineStage, event: PipelineEvent },
}

pub fn initial_transition(report: &Report) -> StageTransition {
    StageTransition {
        report_id: report.id.clone(),
        from: None,
        to: PipelineStage::Submitted,
        at: report.submitted_at(),
        cause: TransitionCause::Ingest,
    }
}

/// Applies `event` to the report, keeping history strictly increasing
/// (a timestamp not after the previous entry is moved 1 ms past it).
pub fn apply_event(report: &mut Report, event: PipelineEvent, now: Timestamp) -> Result<StageTransition, TransitionError> {
    let from = report.stage;
    let to = event
        .target(from)
        .ok_or(TransitionError::IllegalTransition { from, event })?;
    let last = report.stage_history.last().map(|e| e.at).unwrap_or(now);
    let at = if now > last { now } else { last.plus_millis(1) };
    report.stage = to;
    report.stage_history.push(StageEntry { stage: to, at });
    Ok(StageTransition {
        report_id: report.id.clone(),
        from: Some(from),
        to,
        at,
        cause: event.cause(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("log entry {index} for {report} does not continue from its current stage")]
    Broken { index: usize, report: ReportId },
}

/// Rebuilds every report's stage history from the transition log,
/// checking each entry against the transition graph.
pub fn replay(log: &[StageTransition]) -> Result<BTreeMap<ReportId, Vec<StageEntry>>, ReplayError> {
    let mut out: BTreeMap<ReportId, Vec<StageEntry>> = BTreeMap::new();
    for (index, t) in log.iter().enumerate() {
        let broken = || ReplayError::Broken {
            index,
            report: t.report_id.clone(),
        };
        let hist = out.entry(t.report_id.clone()).or_default();
        match (t.from, hist.last()) {
            (None, None) if t.to == PipelineStage::Submitted => {}
            (Some(from), Some(last)) if last.stage == from && from.can_transition_to(t.to) && t.at > last.at => {}
            _ => return Err(broken()),
        }
        hist.push(StageEntry { stage: t.to, at: t.at });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Mean seconds spent in each stage by completed reports.
    pub per_stage_mean_s: BTreeMap<PipelineStage, f64>,
    /// Submission to validation queue (no human wait).
    pub automated_mean_s: f64,
    pub end_to_end_mean_s: f64,
    pub baseline_s: f64,
    pub reduction_vs_baseline: f64,
    pub n_completed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatencyError {
    #[error("no completed report in window")]
    EmptyWindow,
}

/// Latency over reports published inside `window` (inclusive).
pub fn latency_stats<'a>(
    reports: impl IntoIterator<Item = &'a Report>,
    window: Option<(Timestamp, Timestamp)>,
    baseline_s: f64,
) -> Result<LatencyStats, LatencyError> {
    let mut stage_sum: BTreeMap<PipelineStage, (f64, usize)> = BTreeMap::new();
    let (mut e2e, mut auto, mut n) = (0.0, 0.0, 0usize);
    for r in reports {
        let Some(done) = r.entered(PipelineStage::Published) else {
            continue;
        };
        if window.is_some_and(|(lo, hi)| done < lo || done > hi) {
            continue;
        }
        n += 1;
        e2e += done.secs_since(r.submitted_at());
        if let Some(t) = r.entered(PipelineStage::InValidation) {
            auto += t.secs_since(r.submitted_at());
        }
        for w in r.stage_history.windows(2) {
            let e = stage_sum.entry(w[0].stage).or_default();
            e.0 += w[1].at.secs_since(w[0].at);
            e.1 += 1;
        }
    }
    if n == 0 {
        return Err(LatencyError::EmptyWindow);
    }
    let end_to_end_mean_s = e2e / n as f64;
    Ok(LatencyStats {
        per_stage_mean_s: stage_sum.into_iter().map(|(s, (t, k))| (s, t / k as f64)).collect(),
        automated_mean_s: auto / n as f64,
        end_to_end_mean_s,
        baseline_s,
        reduction_vs_baseline: 1.0 - end_to_end_mean_s / baseline_s,
        n_completed: n,
    })
}
