//! Credibility-weighted voting, quorum decisions, expert escalation and
//! task prioritization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::ConsensusTruth;
use crate::config::ValidationConfig;
use crate::domain::{BoundingBox, DetectionId, HazardClass, Timestamp, ValidatorId};
use crate::geo::CellId;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("no votes")]
    NoVotes,
    #[error("empty sample")]
    EmptySample,
    #[error("unknown validator {0}")]
    UnknownValidator(ValidatorId),
    #[error("detection {0} is not escalated")]
    NotEscalated(DetectionId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ValidatorProfile<T = f64> {
    pub id: ValidatorId,
    pub credibility: T,
    pub votes_cast: u32,
    pub expert: bool,
}

impl<T: Scalar> ValidatorProfile<T> {
    pub fn new(id: ValidatorId, initial: T) -> Self {
        ValidatorProfile {
            id,
            credibility: initial,
            votes_cast: 0,
            expert: false,
        }
    }

    pub fn expert(id: ValidatorId) -> Self {
        ValidatorProfile {
            id,
            credibility: T::one(),
            votes_cast: 0,
            expert: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirm,
    Reject,
    /// Hazard present with corrected geometry and/or class.
    Adjust {
        #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
        bbox: Option<BoundingBox>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class: Option<HazardClass>,
    },
}

impl Verdict {
    pub fn affirms(&self) -> bool {
        !matches!(self, Verdict::Reject)
    }

    pub fn matches(&self, truth: ConsensusTruth) -> bool {
        self.affirms() == (truth == ConsensusTruth::Confirmed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub validator_id: ValidatorId,
    pub detection_id: DetectionId,
    pub verdict: Verdict,
    pub cast_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusStatus {
    Pending,
    Confirmed,
    Rejected,
    Escalated,
}

impl ConsensusStatus {
    pub fn is_final(self) -> bool {
        matches!(self, ConsensusStatus::Confirmed | ConsensusStatus::Rejected)
    }

    pub fn truth(self) -> Option<ConsensusTruth> {
        match self {
            ConsensusStatus::Confirmed => Some(ConsensusTruth::Confirmed),
            ConsensusStatus::Rejected => Some(ConsensusTruth::Rejected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConsensusState<T = f64> {
    pub detection_id: DetectionId,
    pub score: T,
    pub n_votes: usize,
    pub status: ConsensusStatus,
    pub expert_decision: Option<Verdict>,
}

impl<T: Scalar> ConsensusState<T> {
    pub fn new(detection_id: DetectionId) -> Self {
        ConsensusState {
            detection_id,
            score: T::zero(),
            n_votes: 0,
            status: ConsensusStatus::Pending,
            expert_decision: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusParams<T = f64> {
    pub quorum: usize,
    pub tau_hi: T,
    pub tau_lo: T,
    pub uncertainty_escalation: T,
    pub eta: T,
    pub credibility_floor: T,
    pub beta: T,
}

impl<T: Scalar> From<&ValidationConfig> for ConsensusParams<T> {
    fn from(c: &ValidationConfig) -> Self {
        ConsensusParams {
            quorum: c.quorum,
            tau_hi: T::lit(c.tau_hi),
            tau_lo: T::lit(c.tau_lo),
            uncertainty_escalation: T::lit(c.uncertainty_escalation),
            eta: T::lit(c.eta),
            credibility_floor: T::lit(c.credibility_floor),
            beta: T::lit(c.beta),
        }
    }
}

impl<T: Scalar> Default for ConsensusParams<T> {
    fn default() -> Self {
        Self::from(&ValidationConfig::default())
    }
}

/// Latest vote per validator (by `cast_at`, later position wins ties),
/// ordered by validator id.
pub fn effective_votes(votes: &[Vote]) -> Vec<&Vote> {
    let mut latest: BTreeMap<&ValidatorId, &Vote> = BTreeMap::new();
    for v in votes {
        match latest.get(&v.validator_id) {
            Some(prev) if prev.cast_at > v.cast_at => {}
            _ => {
                latest.insert(&v.validator_id, v);
            }
        }
    }
    latest.into_values().collect()
}

/// Credibility share of votes that affirm the hazard.
pub fn consensus_score<T: Scalar>(
    votes: &[Vote],
    profiles: &BTreeMap<ValidatorId, ValidatorProfile<T>>,
) -> Result<T, ConsensusError> {
    let eff = effective_votes(votes);
    if eff.is_empty() {
        return Err(ConsensusError::NoVotes);
    }
    let (mut yes, mut all) = (T::zero(), T::zero());
    for v in eff {
        let c = profiles
            .get(&v.validator_id)
            .ok_or_else(|| ConsensusError::UnknownValidator(v.validator_id.clone()))?
            .credibility;
        all = all + c;
        if v.verdict.affirms() {
            yes = yes + c;
        }
    }
    Ok(if all > T::zero() { yes / all } else { T::zero() })
}

/// Applies quorum and thresholds. Escalated states change only through
/// [`expert_resolve`].
pub fn decide<T: Scalar>(
    state: &ConsensusState<T>,
    votes: &[Vote],
    profiles: &BTreeMap<ValidatorId, ValidatorProfile<T>>,
    uncertainty: T,
    params: &ConsensusParams<T>,
) -> Result<ConsensusState<T>, ConsensusError> {
    let mut next = state.clone();
    if let Some(d) = &state.expert_decision {
        next.status = if d.affirms() {
            ConsensusStatus::Confirmed
        } else {
            ConsensusStatus::Rejected
        };
        return Ok(next);
    }
    next.n_votes = effective_votes(votes).len();
    next.score = if next.n_votes == 0 {
        T::zero()
    } else {
        consensus_score(votes, profiles)?
    };
    next.status = if state.status == ConsensusStatus::Escalated || uncertainty > params.uncertainty_escalation {
        ConsensusStatus::Escalated
    } else if next.n_votes < params.quorum {
        ConsensusStatus::Pending
    } else if next.score >= params.tau_hi {
        ConsensusStatus::Confirmed
    } else if next.score <= params.tau_lo {
        ConsensusStatus::Rejected
    } else {
        ConsensusStatus::Escalated
    };
    Ok(next)
}

pub fn expert_resolve<T: Scalar>(state: &ConsensusState<T>, verdict: Verdict) -> Result<ConsensusState<T>, ConsensusError> {
    if state.status != ConsensusStatus::Escalated {
        return Err(ConsensusError::NotEscalated(state.detection_id.clone()));
    }
    let mut next = state.clone();
    next.status = if verdict.affirms() {
        ConsensusStatus::Confirmed
    } else {
        ConsensusStatus::Rejected
    };
    next.expert_decision = Some(verdict);
    Ok(next)
}

/// Moves credibility by `eta` toward agreement with `truth`, clamped to
/// `[floor, 1]`. Experts stay at 1.
pub fn update_credibility<T: Scalar>(
    profile: &ValidatorProfile<T>,
    verdict: &Verdict,
    truth: ConsensusTruth,
    eta: T,
    floor: T,
) -> ValidatorProfile<T> {
    let mut p = profile.clone();
    p.votes_cast += 1;
    if p.expert {
        p.credibility = T::one();
        return p;
    }
    let step = if verdict.matches(truth) { eta } else { -eta };
    p.credibility = (p.credibility + step).clamp_to(floor, T::one());
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TaskCandidate<T = f64> {
    pub detection_id: DetectionId,
    pub uncertainty: T,
    pub cell: Option<CellId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TaskAssignment<T = f64> {
    pub detection_id: DetectionId,
    pub priority: T,
    pub offered_to: Vec<ValidatorId>,
}

/// `uncertainty + beta / (1 + density)`, descending, ties by detection id.
pub fn prioritize<T: Scalar>(
    candidates: &[TaskCandidate<T>],
    density: &BTreeMap<CellId, u64>,
    beta: T,
) -> Vec<TaskAssignment<T>> {
    let mut out: Vec<TaskAssignment<T>> = candidates
        .iter()
        .map(|c| {
            let d = c.cell.and_then(|cell| density.get(&cell)).copied().unwrap_or(0);
            TaskAssignment {
                detection_id: c.detection_id.clone(),
                priority: c.uncertainty + beta / (T::one() + T::lit(d as f64)),
                offered_to: Vec::new(),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.priority
            .partial_cmp(&a.priority)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.detection_id.cmp(&b.detection_id))
    });
    out
}

/// Fraction of decisions whose status equals the expert label. Pending and
/// escalated decisions count as disagreement.
pub fn agreement_rate(pairs: &[(ConsensusStatus, ConsensusTruth)]) -> Result<f64, ConsensusError> {
    if pairs.is_empty() {
        return Err(ConsensusError::EmptySample);
    }
    let hits = pairs.iter().filter(|(s, t)| s.truth() == Some(*t)).count();
    Ok(hits as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn vote(who: &str, verdict: Verdict, t: i64) -> Vote {
        Vote {
            validator_id: ValidatorId::new(who),
            detection_id: DetectionId::new("d"),
            verdict,
            cast_at: Timestamp::from_millis(t),
        }
    }

    fn profiles(list: &[(&str, f64)]) -> BTreeMap<ValidatorId, ValidatorProfile> {
        list.iter()
            .map(|(id, c)| (ValidatorId::new(*id), ValidatorProfile::new(ValidatorId::new(*id), *c)))
            .collect()
    }

    #[test]
    fn score_examples() {
        let p = profiles(&[("a", 0.5), ("b", 0.5), ("c", 0.5)]);
        let three = [vote("a", Verdict::Confirm, 1), vote("b", Verdict::Confirm, 2), vote("c", Verdict::Confirm, 3)];
        assert_eq!(consensus_score(&three, &p).unwrap(), 1.0);
        let p = profiles(&[("a", 0.9), ("b", 0.3)]);
        let mixed = [vote("a", Verdict::Confirm, 1), vote("b", Verdict::Reject, 2)];
        assert_abs_diff_eq!(consensus_score(&mixed, &p).unwrap(), 0.75, epsilon = 1e-12);
        assert_eq!(consensus_score(&[vote("b", Verdict::Reject, 1)], &p).unwrap(), 0.0);
        assert_eq!(consensus_score::<f64>(&[], &p), Err(ConsensusError::NoVotes));
    }

    #[test]
    fn adjust_counts_as_confirm() {
        let p = profiles(&[("a", 0.5), ("b", 0.5)]);
        let v = [
            vote("a", Verdict::Adjust { bbox: None, class: Some(HazardClass::MetalCan) }, 1),
            vote("b", Verdict::Confirm, 2),
        ];
        assert_eq!(consensus_score(&v, &p).unwrap(), 1.0);
    }

    #[test]
    fn decide_examples() {
        let params = ConsensusParams::default();
        let p = profiles(&[("a", 0.5), ("b", 0.5), ("c", 0.5), ("d", 0.5)]);
        let s0 = ConsensusState::new(DetectionId::new("d"));
        let two = [vote("a", Verdict::Confirm, 1), vote("b", Verdict::Confirm, 2)];
        assert_eq!(decide(&s0, &two, &p, 0.1, &params).unwrap().status, ConsensusStatus::Pending);

        let p2 = profiles(&[("a", 0.9), ("b", 0.3)]);
        let q2 = ConsensusParams { quorum: 2, ..params };
        let mixed = [vote("a", Verdict::Confirm, 1), vote("b", Verdict::Reject, 2)];
        let s = decide(&s0, &mixed, &p2, 0.1, &q2).unwrap();
        assert_eq!(s.status, ConsensusStatus::Confirmed);
        assert_abs_diff_eq!(s.score, 0.75, epsilon = 1e-12);

        let half = [
            vote("a", Verdict::Confirm, 1),
            vote("b", Verdict::Confirm, 2),
            vote("c", Verdict::Reject, 3),
            vote("d", Verdict::Reject, 4),
        ];
        assert_eq!(decide(&s0, &half, &p, 0.1, &params).unwrap().status, ConsensusStatus::Escalated);
        assert_eq!(decide(&s0, &[], &p, 0.9, &params).unwrap().status, ConsensusStatus::Escalated);
    }

    #[test]
    fn revote_replaces() {
        let p = profiles(&[("a", 0.5), ("b", 0.5)]);
        let v = [vote("a", Verdict::Reject, 1), vote("b", Verdict::Confirm, 2), vote("a", Verdict::Confirm, 3)];
        assert_eq!(effective_votes(&v).len(), 2);
        assert_eq!(consensus_score(&v, &p).unwrap(), 1.0);
    }

    #[test]
    fn expert_resolution() {
        let s = ConsensusState::<f64> {
            status: ConsensusStatus::Escalated,
            ..ConsensusState::new(DetectionId::new("d"))
        };
        let r = expert_resolve(&s, Verdict::Reject).unwrap();
        assert_eq!(r.status, ConsensusStatus::Rejected);
        assert!(expert_resolve(&r, Verdict::Confirm).is_err());
        let p = profiles(&[("a", 0.5)]);
        let again = decide(&r, &[vote("a", Verdict::Confirm, 9)], &p, 0.0, &ConsensusParams::default()).unwrap();
        assert_eq!(again.status, ConsensusStatus::Rejected);
    }

    #[test]
    fn credibility_examples() {
        let up = |c: f64, ok: bool| {
            let p = ValidatorProfile::new(ValidatorId::new("v"), c);
            let v = if ok { Verdict::Confirm } else { Verdict::Reject };
            update_credibility(&p, &v, ConsensusTruth::Confirmed, 0.05, 0.1).credibility
        };
        assert_abs_diff_eq!(up(0.5, true), 0.55, epsilon = 1e-12);
        assert_abs_diff_eq!(up(0.12, false), 0.1, epsilon = 1e-12);
        let mut p = ValidatorProfile::new(ValidatorId::new("v"), 0.5);
        for _ in 0..20 {
            p = update_credibility(&p, &Verdict::Confirm, ConsensusTruth::Confirmed, 0.05, 0.1);
        }
        assert_abs_diff_eq!(p.credibility, 1.0, epsilon = 1e-12);
        assert_eq!(p.votes_cast, 20);
        let e = ValidatorProfile::<f64>::expert(ValidatorId::new("x"));
        let e2 = update_credibility(&e, &Verdict::Reject, ConsensusTruth::Confirmed, 0.05, 0.1);
        assert_eq!(e2.credibility, 1.0);
    }

    #[test]
    fn prioritize_examples() {
        let c = |id: &str, u: f64, cell: (u32, u32)| TaskCandidate {
            detection_id: DetectionId::new(id),
            uncertainty: u,
            cell: Some(CellId { row: cell.0, col: cell.1 }),
        };
        let density = BTreeMap::from([(CellId { row: 1, col: 1 }, 99u64)]);
        let out = prioritize(&[c("urban", 0.5, (1, 1)), c("rural", 0.5, (0, 0))], &density, 1.0);
        assert_eq!(out[0].detection_id.as_str(), "rural");
        let out = prioritize(&[c("urban", 0.9, (1, 1)), c("rural", 0.1, (0, 0))], &density, 1.0);
        assert_eq!(out[0].detection_id.as_str(), "rural");
        assert_abs_diff_eq!(out[0].priority, 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1].priority, 0.91, epsilon = 1e-12);
        let out = prioritize(&[c("b", 0.2, (0, 0)), c("a", 0.2, (0, 0)), c("c", 0.7, (0, 0))], &BTreeMap::new(), 1.0);
        let ids: Vec<_> = out.iter().map(|a| a.detection_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn agreement_examples() {
        use ConsensusStatus::*;
        use ConsensusTruth as T;
        assert_eq!(agreement_rate(&[(Confirmed, T::Confirmed), (Rejected, T::Rejected)]).unwrap(), 1.0);
        let mut pairs = vec![(Confirmed, T::Confirmed); 7];
        pairs.extend(vec![(Rejected, T::Confirmed); 3]);
        assert_abs_diff_eq!(agreement_rate(&pairs).unwrap(), 0.7);
        assert_eq!(agreement_rate(&[]), Err(ConsensusError::EmptySample));
    }

    #[test]
    fn verdict_wire_format() {
        assert_eq!(serde_json::to_string(&Verdict::Confirm).unwrap(), r#""confirm""#);
        let v: Verdict = serde_json::from_str(r#"{"adjust":{"box":[1,2,3,4],"class":"metal_can"}}"#).unwrap();
        assert!(matches!(v, Verdict::Adjust { bbox: Some(_), class: Some(HazardClass::MetalCan) }));
    }
}
