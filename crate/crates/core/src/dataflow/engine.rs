use std::panic::{self, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use serde::{Deserialize, Serialize};

use super::metrics::{TaskMetrics, TaskRecord};
use super::{Data, EngineError, PDataset, Partition};

/// Worker pool sizing and the seed used by seeded transformations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub worker_count: usize,
    pub seed: u64,
}

impl EngineConfig {
    pub fn new(worker_count: usize, seed: u64) -> Self {
        Self { worker_count, seed }
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { worker_count: 1, seed: 0 }
    }
}

/// Execution context handed to lineage nodes while a job runs.
pub(crate) struct Exec<'a> {
    pool: &'a ThreadPool,
    records: &'a Mutex<Vec<TaskRecord>>,
    pub(crate) seed: u64,
}

impl Exec<'_> {
    /// Runs one task per input on the pool. Outputs keep input order; the
    /// first failing partition (by index) is reported.
    pub(crate) fn run_tasks<I, O, F>(
        &self,
        stage: &str,
        inputs: Vec<I>,
        f: F,
    ) -> Result<Vec<O>, EngineError>
    where
        I: Send,
        O: Send,
        F: Fn(usize, I) -> Result<O, String> + Send + Sync,
    {
        let outcomes: Vec<(Result<O, EngineError>, TaskRecord)> = self.pool.install(|| {
            inputs
                .into_par_iter()
                .enumerate()
                .map(|(partition, input)| {
                    let worker = rayon::current_thread_index().unwrap_or(0);
                    let start = Instant::now();
                    let out = panic::catch_unwind(AssertUnwindSafe(|| f(partition, input)));
                    let duration_ms = start.elapsed().as_secs_f64() * 1e3;
                    let record = TaskRecord {
                        stage: stage.to_string(),
                        worker,
                        partition,
                        duration_ms,
                    };
                    let result = match out {
                        Ok(Ok(o)) => Ok(o),
                        Ok(Err(message)) => Err(EngineError::Task {
                            stage: stage.to_string(),
                            partition,
                            message,
                        }),
                        Err(payload) => Err(EngineError::WorkerPanic {
                            stage: stage.to_string(),
                            partition,
                            message: panic_message(payload.as_ref()),
                        }),
                    };
                    (result, record)
                })
                .collect()
        });

        let mut outputs = Vec::with_capacity(outcomes.len());
        let mut first_err = None;
        let mut records = self.records.lock().expect("metrics lock poisoned");
        for (result, record) in outcomes {
            match result {
                Ok(o) => {
                    records.push(record);
                    outputs.push(o);
                }
                Err(e) => {
                    if first_err.is_none() {
                        first_err = Some(e);
                    }
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(outputs),
        }
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".to_string()
    }
}

/// Owns the worker pool and accumulates task metrics across jobs.
pub struct Engine {
    config: EngineConfig,
    pool: ThreadPool,
    records: Mutex<Vec<TaskRecord>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("config", &self.config).finish()
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        if config.worker_count == 0 {
            return Err(EngineError::InvalidArgument(
                "worker_count must be at least 1".into(),
            ));
        }
        let pool = ThreadPoolBuilder::new()
            .num_threads(config.worker_count)
            .thread_name(|i| format!("scads-worker-{i}"))
            .build()
            .map_err(|e| EngineError::Pool(e.to_string()))?;
        Ok(Self {
            config,
            pool,
            records: Mutex::new(Vec::new()),
        })
    }

    pub fn with_workers(worker_count: usize) -> Result<Self, EngineError> {
        Self::new(EngineConfig::new(worker_count, 0))
    }

    pub fn config(&self) -> EngineConfig {
        self.config
    }

    pub fn worker_count(&self) -> usize {
        self.config.worker_count
    }

    fn exec(&self) -> Exec<'_> {
        Exec {
            pool: &self.pool,
            records: &self.records,
            seed: self.config.seed,
        }
    }

    /// Materializes every partition of `ds`.
    pub fn collect_partitions<T: Data>(
        &self,
        ds: &PDataset<T>,
    ) -> Result<Vec<Partition<T>>, EngineError> {
        let parts = ds.node.compute(&self.exec())?;
        Ok(parts
            .into_iter()
            .enumerate()
            .map(|(index, elements)| Partition { index, elements })
            .collect())
    }

    pub(crate) fn compute_raw<T: Data>(&self, ds: &PDataset<T>) -> Result<Vec<Vec<T>>, EngineError> {
        ds.node.compute(&self.exec())
    }

    /// Materializes `ds` as one list in partition order.
    pub fn collect<T: Data>(&self, ds: &PDataset<T>) -> Result<Vec<T>, EngineError> {
        Ok(self.compute_raw(ds)?.into_iter().flatten().collect())
    }

    pub fn count<T: Data>(&self, ds: &PDataset<T>) -> Result<usize, EngineError> {
        Ok(self.compute_raw(ds)?.iter().map(Vec::len).sum())
    }

    /// Runs `ds` as one job and returns the elements with that job's task
    /// metrics. The engine's cumulative metrics also receive the tasks.
    pub fn run<T: Data>(&self, ds: &PDataset<T>) -> Result<(Vec<T>, TaskMetrics), EngineError> {
        let before = self.records.lock().expect("metrics lock poisoned").len();
        let out = self.collect(ds)?;
        let records = self.records.lock().expect("metrics lock poisoned")[before..].to_vec();
        Ok((out, TaskMetrics::from_records(records)))
    }

    /// Runs an ad hoc stage of independent tasks on the pool, recording each
    /// task under `stage`. Used by iterative algorithms whose per-iteration
    /// work is a parallel pass over already-materialized partitions.
    pub fn run_stage<I, O, F>(&self, stage: &str, inputs: Vec<I>, f: F) -> Result<Vec<O>, EngineError>
    where
        I: Send,
        O: Send,
        F: Fn(usize, I) -> Result<O, String> + Send + Sync,
    {
        self.exec().run_tasks(stage, inputs, f)
    }

    /// Snapshot of every task recorded since creation or the last reset.
    pub fn metrics(&self) -> TaskMetrics {
        TaskMetrics::from_records(self.records.lock().expect("metrics lock poisoned").clone())
    }

    /// Number of tasks recorded so far; pass to [`Engine::metrics_since`].
    pub fn metrics_mark(&self) -> usize {
        self.records.lock().expect("metrics lock poisoned").len()
    }

    /// Tasks recorded after `mark`.
    pub fn metrics_since(&self, mark: usize) -> TaskMetrics {
        let records = self.records.lock().expect("metrics lock poisoned");
        TaskMetrics::from_records(records.get(mark..).unwrap_or_default().to_vec())
    }

    pub fn reset_metrics(&self) {
        self.records.lock().expect("metrics lock poisoned").clear();
    }
}

/// One-shot convenience: build an engine for `config` and run `ds`.
pub fn run<T: Data>(ds: &PDataset<T>, config: EngineConfig) -> Result<(Vec<T>, TaskMetrics), EngineError> {
    Engine::new(config)?.run(ds)
}
