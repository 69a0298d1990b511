mod support;

use std::collections::BTreeMap;

use hazardpipe_core::calibration::ConsensusTruth;
use hazardpipe_core::consensus::{
    consensus_score, decide, update_credibility, ConsensusParams, ConsensusState, ConsensusStatus, ValidatorProfile,
    Verdict, Vote,
};
use hazardpipe_core::domain::{DetectionId, Timestamp, ValidatorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracle::three_vote_outcomes;

type Profiles = BTreeMap<ValidatorId, ValidatorProfile>;

fn det() -> DetectionId {
    DetectionId::new("rep-00000001-d0")
}

fn vote(i: usize, affirm: bool, t: i64) -> Vote {
    Vote {
        validator_id: ValidatorId::new(format!("v{i:03}")),
        detection_id: det(),
        verdict: if affirm { Verdict::Confirm } else { Verdict::Reject },
        cast_at: Timestamp::from_millis(t),
    }
}

fn profiles(creds: &[f64]) -> Profiles {
    creds
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let id = ValidatorId::new(format!("v{i:03}"));
            (id.clone(), ValidatorProfile::new(id, *c))
        })
        .collect()
}

/// Random panel: credibilities, and a vote sequence in which validators
/// may change their mind.
fn random_panel(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Vote>) {
    let n = rng.random_range(1..=8);
    let creds: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..=1.0)).collect();
    let len = rng.random_range(1..=12);
    let votes = (0..len)
        .map(|t| vote(rng.random_range(0..n), rng.random_bool(0.6), t as i64))
        .collect();
    (creds, votes)
}

fn rank(s: ConsensusStatus) -> u8 {
    match s {
        ConsensusStatus::Rejected => 0,
        ConsensusStatus::Pending | ConsensusStatus::Escalated => 1,
        ConsensusStatus::Confirmed => 2,
    }
}

#[test]
fn score_is_invariant_under_credibility_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let (creds, votes) = random_panel(&mut rng);
        let c = rng.random_range(0.05..20.0);
        let scaled: Vec<f64> = creds.iter().map(|x| x * c).collect();
        let a = consensus_score(&votes, &profiles(&creds)).unwrap();
        let b = consensus_score(&votes, &profiles(&scaled)).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn decide_is_monotone_in_added_votes() {
    let params = ConsensusParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let (mut creds, votes) = random_panel(&mut rng);
        let before = decide(&ConsensusState::new(det()), &votes, &profiles(&creds), 0.1, &params).unwrap();
        let affirm = rng.random_bool(0.5);
        let newcomer = creds.len();
        creds.push(rng.random_range(0.1..=1.0));
        let mut more = votes.clone();
        more.push(vote(newcomer, affirm, 1_000));
        let after = decide(&ConsensusState::new(det()), &more, &profiles(&creds), 0.1, &params).unwrap();
        if affirm {
            assert!(after.score >= before.score - 1e-12);
        } else {
            assert!(after.score <= before.score + 1e-12);
        }
        if before.n_votes >= params.quorum {
            if affirm {
                assert!(rank(after.status) >= rank(before.status), "{before:?} -> {after:?}");
            } else {
                assert!(rank(after.status) <= rank(before.status), "{before:?} -> {after:?}");
            }
        }
        if before.status == ConsensusStatus::Escalated {
            let sticky = decide(&before, &more, &profiles(&creds), 0.1, &params).unwrap();
            assert_eq!(sticky.status, ConsensusStatus::Escalated);
        }
    }
}

#[test]
fn credibility_stays_clamped() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let floor = 0.1;
    for _ in 0..10_000 {
        let expert = rng.random_bool(0.1);
        let id = ValidatorId::new("v");
        let mut p = if expert {
            ValidatorProfile::expert(id)
        } else {
            ValidatorProfile::new(id, rng.random_range(floor..=1.0))
        };
        let eta = rng.random_range(0.0..0.5);
        for _ in 0..rng.random_range(1..50) {
            let verdict = if rng.random_bool(0.5) { Verdict::Confirm } else { Verdict::Reject };
            let truth = if rng.random_bool(0.5) {
                ConsensusTruth::Confirmed
            } else {
                ConsensusTruth::Rejected
            };
            p = update_credibility(&p, &verdict, truth, eta, floor);
            assert!(p.credibility >= floor && p.credibility <= 1.0, "{}", p.credibility);
            if expert {
                assert_eq!(p.credibility, 1.0);
            }
        }
    }
}

/// Sums pattern probabilities by the status `decide` assigns.
fn enumerate_with_decide(p: [f64; 3], w: [f64; 3], params: &ConsensusParams) -> (f64, f64, f64) {
    let (mut c, mut r, mut e) = (0.0, 0.0, 0.0);
    let profs = profiles(&w);
    for pattern in 0..8u32 {
        let mut prob = 1.0;
        let votes: Vec<Vote> = (0..3)
            .map(|i| {
                let affirm = pattern >> i & 1 == 1;
                prob *= if affirm { p[i] } else { 1.0 - p[i] };
                vote(i, affirm, i as i64)
            })
            .collect();
        match decide(&ConsensusState::new(det()), &votes, &profs, 0.0, params).unwrap().status {
            ConsensusStatus::Confirmed => c += prob,
            ConsensusStatus::Rejected => r += prob,
            ConsensusStatus::Escalated => e += prob,
            ConsensusStatus::Pending => panic!("quorum of three is never pending"),
        }
    }
    (c, r, e)
}

#[test]
fn three_vote_enumeration_matches_decide() {
    let params = ConsensusParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cases = vec![([0.5; 3], [0.5; 3]), ([0.93; 3], [0.5; 3]), ([1.0; 3], [0.5; 3])];
    for _ in 0..500 {
        let p = [rng.random(), rng.random(), rng.random()];
        let w = [rng.random_range(0.1..=1.0), rng.random_range(0.1..=1.0), rng.random_range(0.1..=1.0)];
        cases.push((p, w));
    }
    for (p, w) in cases {
        let want = three_vote_outcomes(p, w, params.tau_hi, params.tau_lo);
        let got = enumerate_with_decide(p, w, &params);
        assert_eq!(got, want, "p {p:?} w {w:?}");
    }
    let (c, _, e) = three_vote_outcomes([0.5; 3], [0.5; 3], 0.7, 0.3);
    assert_eq!(c, 0.125);
    assert_eq!(e, 0.75);
}

#[test]
fn simulated_panels_match_enumeration() {
    let params = ConsensusParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for acc in [0.5, 0.8, 0.93] {
        let n = 100_000;
        let profs = profiles(&[0.5; 3]);
        let mut confirmed = 0;
        for _ in 0..n {
            let votes: Vec<Vote> = (0..3).map(|i| vote(i, rng.random_bool(acc), i as i64)).collect();
            if decide(&ConsensusState::new(det()), &votes, &profs, 0.0, &params).unwrap().status
                == ConsensusStatus::Confirmed
            {
                confirmed += 1;
            }
        }
        let want = three_vote_outcomes([acc; 3], [0.5; 3], params.tau_hi, params.tau_lo).0;
        let sd = (want * (1.0 - want) / n as f64).sqrt();
        let got = confirmed as f64 / n as f64;
        assert!((got - want).abs() < 4.0 * sd, "accuracy {acc}: {got} vs {want}");
    }
}
