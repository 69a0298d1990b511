//! Asynchronous LIME jobs on a bounded worker pool.

use std::collections::{BTreeMap, HashMap};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use super::{ExplainError, LimeExplanation};
use crate::clock::Clock;
use crate::domain::{DetectionId, JobId, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed { reason: String },
}

impl JobState {
    pub fn is_finished(&self) -> bool {
        matches!(self, JobState::Done | JobState::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainJob {
    pub id: JobId,
    pub detection_id: DetectionId,
    #[serde(flatten)]
    pub state: JobState,
    pub result: Option<LimeExplanation>,
    pub submitted_at: Timestamp,
    pub finished_at: Option<Timestamp>,
}

/// Work performed by the pool.
pub trait LimeRunner: Send + Sync {
    fn has_detection(&self, id: &DetectionId) -> bool;
    fn run(&self, id: &DetectionId) -> Result<LimeExplanation, String>;
}

/// Called with every job state change, in order, while the table lock is held.
pub type JobListener = Arc<dyn Fn(&ExplainJob) + Send + Sync>;

#[derive(Default)]
struct JobTable {
    jobs: BTreeMap<JobId, ExplainJob>,
    by_detection: HashMap<DetectionId, JobId>,
    next: u64,
}

struct Shared {
    table: Mutex<JobTable>,
    changed: Condvar,
    runner: Arc<dyn LimeRunner>,
    clock: Arc<dyn Clock>,
    listener: Option<JobListener>,
}

impl Shared {
    fn update(&self, id: &JobId, f: impl FnOnce(&mut ExplainJob)) {
        let mut t = self.table.lock();
        let t = &mut *t;
        if let Some(job) = t.jobs.get_mut(id) {
            f(job);
            if let Some(l) = &self.listener {
                l(job);
            }
            if matches!(job.state, JobState::Failed { .. }) && t.by_detection.get(&job.detection_id) == Some(id) {
                t.by_detection.remove(&job.detection_id);
            }
        }
        self.changed.notify_all();
    }
}

pub struct JobQueue {
    shared: Arc<Shared>,
    tx: Mutex<Option<Sender<JobId>>>,
    workers: Vec<JoinHandle<()>>,
}

impl JobQueue {
    pub fn start(
        runner: Arc<dyn LimeRunner>,
        clock: Arc<dyn Clock>,
        workers: usize,
        listener: Option<JobListener>,
    ) -> Self {
        Self::restore(runner, clock, workers, listener, Vec::new())
    }

    /// Starts the pool over previously persisted jobs; unfinished ones are
    /// queued again.
    pub fn restore(
        runner: Arc<dyn LimeRunner>,
        clock: Arc<dyn Clock>,
        workers: usize,
        listener: Option<JobListener>,
        jobs: Vec<ExplainJob>,
    ) -> Self {
        let (tx, rx) = channel::<JobId>();
        let mut table = JobTable::default();
        let mut pending = Vec::new();
        for mut job in jobs {
            if let Some(n) = job.id.as_str().strip_prefix("job-").and_then(|n| n.parse::<u64>().ok()) {
                table.next = table.next.max(n);
            }
            if !job.state.is_finished() {
                job.state = JobState::Queued;
                pending.push(job.id.clone());
            }
            if !matches!(job.state, JobState::Failed { .. }) {
                table.by_detection.insert(job.detection_id.clone(), job.id.clone());
            }
            table.jobs.insert(job.id.clone(), job);
        }
        let shared = Arc::new(Shared {
            table: Mutex::new(table),
            changed: Condvar::new(),
            runner,
            clock,
            listener,
        });
        let rx = Arc::new(Mutex::new(rx));
        let workers = (0..workers.max(1))
            .map(|i| {
                let shared = Arc::clone(&shared);
                let rx = Arc::clone(&rx);
                std::thread::Builder::new()
                    .name(format!("lime-{i}"))
                    .spawn(move || worker_loop(&shared, &rx))
                    .expect("spawn LIME worker")
            })
            .collect();
        for id in pending {
            let _ = tx.send(id);
        }
        JobQueue {
            shared,
            tx: Mutex::new(Some(tx)),
            workers,
        }
    }

    /// Returns the existing non-failed job for the detection or queues a new one.
    pub fn submit(&self, detection_id: &DetectionId) -> Result<JobId, ExplainError> {
        if !self.shared.runner.has_detection(detection_id) {
            return Err(ExplainError::UnknownDetection(detection_id.clone()));
        }
        let mut t = self.shared.table.lock();
        if let Some(id) = t.by_detection.get(detection_id) {
            return Ok(id.clone());
        }
        t.next += 1;
        let id = JobId::new(format!("job-{:06}", t.next));
        let job = ExplainJob {
            id: id.clone(),
            detection_id: detection_id.clone(),
            state: JobState::Queued,
            result: None,
            submitted_at: self.shared.clock.now(),
            finished_at: None,
        };
        if let Some(l) = &self.shared.listener {
            l(&job);
        }
        t.by_detection.insert(detection_id.clone(), id.clone());
        t.jobs.insert(id.clone(), job);
        drop(t);
        if let Some(tx) = self.tx.lock().as_ref() {
            tx.send(id.clone()).map_err(|_| ExplainError::PoolClosed)?;
        }
        Ok(id)
    }

    pub fn poll(&self, id: &JobId) -> Option<ExplainJob> {
        self.shared.table.lock().jobs.get(id).cloned()
    }

    pub fn jobs(&self) -> Vec<ExplainJob> {
        self.shared.table.lock().jobs.values().cloned().collect()
    }

    /// Blocks until the job finishes or `timeout` elapses.
    pub fn wait(&self, id: &JobId, timeout: Duration) -> Option<ExplainJob> {
        let deadline = Instant::now() + timeout;
        let mut t = self.shared.table.lock();
        loop {
            let job = t.jobs.get(id)?;
            if job.state.is_finished() {
                return Some(job.clone());
            }
            if self.shared.changed.wait_until(&mut t, deadline).timed_out() {
                return t.jobs.get(id).cloned();
            }
        }
    }
}

impl Drop for JobQueue {
    fn drop(&mut self) {
        self.tx.lock().take();
        let me = std::thread::current().id();
        for h in self.workers.drain(..) {
            if h.thread().id() != me {
                let _ = h.join();
            }
        }
    }
}

fn worker_loop(shared: &Shared, rx: &Mutex<Receiver<JobId>>) {
    loop {
        let next = rx.lock().recv();
        let Ok(id) = next else { return };
        let Some(det) = ({
            let t = shared.table.lock();
            t.jobs
                .get(&id)
                .filter(|j| j.state == JobState::Queued)
                .map(|j| j.detection_id.clone())
        }) else {
            continue;
        };
        shared.update(&id, |j| j.state = JobState::Running);
        let outcome = shared.runner.run(&det);
        let now = shared.clock.now();
        shared.update(&id, |j| {
            j.finished_at = Some(now);
            match outcome {
                Ok(res) => {
                    j.state = JobState::Done;
                    j.result = Some(res);
                }
                Err(reason) => j.state = JobState::Failed { reason },
            }
        });
    }
}
