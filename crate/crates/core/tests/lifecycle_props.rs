use std::collections::BTreeMap;

use hazardpipe_core::domain::{make_geopoint, BlobId, PipelineStage, Report, ReportId, SubmitterId, Timestamp};
use hazardpipe_core::orchestrator::{apply_event, initial_transition, replay, PipelineEvent, StageTransition, TransitionError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(i: usize, t0: i64) -> Report {
    Report::new(
        ReportId::new(format!("rep-{i:08}")),
        SubmitterId::new("s"),
        make_geopoint(39.6, 2.9).unwrap(),
        Timestamp::from_millis(t0),
        BlobId::new("b"),
        Timestamp::from_millis(t0),
    )
}

/// Interleaves random events over a handful of reports. The clock jitters
/// backwards as well as forwards.
fn fuzz_run(seed: u64) -> (Vec<Report>, Vec<StageTransition>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let mut reports: Vec<Report> = (0..n).map(|i| report(i, rng.random_range(0..1_000))).collect();
    let mut log: Vec<StageTransition> = reports.iter().map(initial_transition).collect();
    let mut now = 1_000i64;
    for _ in 0..rng.random_range(1..40) {
        now += rng.random_range(-50..500);
        let r = &mut reports[rng.random_range(0..n)];
        let event = PipelineEvent::ALL[rng.random_range(0..PipelineEvent::ALL.len())];
        let before = r.clone();
        match apply_event(r, event, Timestamp::from_millis(now)) {
            Ok(t) => {
                assert_eq!(t.from, Some(before.stage));
                assert!(before.stage.can_transition_to(t.to));
                assert_eq!(event.target(before.stage), Some(t.to));
                log.push(t);
            }
            Err(TransitionError::IllegalTransition { from, event: e }) => {
                assert_eq!((from, e), (before.stage, event));
                assert!(event.target(before.stage).is_none());
                assert_eq!(*r, before, "rejected event must leave the report untouched");
            }
        }
        assert!(r.history_consistent());
        assert!(r.stage_history.windows(2).all(|w| w[0].stage.can_transition_to(w[1].stage)));
        assert_eq!(r.stage_history[0].stage, PipelineStage::Submitted);
    }
    (reports, log)
}

#[test]
fn fuzzed_sequences_keep_legal_histories_and_replay_exactly() {
    for seed in 0..10_000 {
        let (reports, log) = fuzz_run(seed);
        let bytes = serde_json::to_vec(&log).unwrap();
        let reread: Vec<StageTransition> = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(serde_json::to_vec(&reread).unwrap(), bytes);
        let rebuilt = replay(&reread).unwrap();
        assert_eq!(rebuilt.len(), reports.len());
        for r in &reports {
            let hist = &rebuilt[&r.id];
            assert_eq!(hist, &r.stage_history, "seed {seed}");
            assert_eq!(
                serde_json::to_vec(hist).unwrap(),
                serde_json::to_vec(&r.stage_history).unwrap()
            );
        }
        let again = replay(&reread).unwrap();
        assert_eq!(again, rebuilt);
    }
}

#[test]
fn replay_refuses_edges_outside_the_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    for seed in 0..2_000 {
        let (_, log) = fuzz_run(seed);
        let moves: Vec<usize> = (0..log.len()).filter(|&i| log[i].from.is_some()).collect();
        if moves.is_empty() {
            continue;
        }
        let i = moves[rng.random_range(0..moves.len())];
        let mut bad = log.clone();
        let from = bad[i].from.unwrap();
        let illegal: Vec<PipelineStage> = PipelineStage::ALL
            .into_iter()
            .filter(|s| !from.can_transition_to(*s))
            .collect();
        bad[i].to = illegal[rng.random_range(0..illegal.len())];
        assert!(replay(&bad).is_err(), "seed {seed}");
        checked += 1;
    }
    assert!(checked > 1_000);
}

#[test]
fn terminal_stages_accept_nothing() {
    let mut by_stage: BTreeMap<PipelineStage, usize> = BTreeMap::new();
    for from in PipelineStage::ALL {
        let legal = PipelineEvent::ALL.iter().filter(|e| e.target(from).is_some()).count();
        by_stage.insert(from, legal);
    }
    assert_eq!(by_stage[&PipelineStage::Rejected], 0);
    assert_eq!(by_stage[&PipelineStage::Published], 0);
    assert_eq!(by_stage[&PipelineStage::InValidation], 3);
}
