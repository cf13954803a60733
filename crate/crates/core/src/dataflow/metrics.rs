use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};

/// Wall-clock duration of a single partition-task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub stage: String,
    pub worker: usize,
    pub partition: usize,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub tasks: usize,
    pub total_ms: f64,
    pub mean_ms: f64,
}

/// Per-task durations for one or more jobs, in execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskMetrics {
    records: Vec<TaskRecord>,
}

impl TaskMetrics {
    pub fn from_records(records: Vec<TaskRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[TaskRecord] {
        &self.records
    }

    pub fn task_count(&self) -> usize {
        self.records.len()
    }

    pub fn total_ms(&self) -> f64 {
        self.records.iter().map(|r| r.duration_ms).sum()
    }

    /// Sum of durations over task count; `None` when nothing ran.
    pub fn average_task_ms(&self) -> Option<f64> {
        if self.records.is_empty() {
            None
        } else {
            Some(self.total_ms() / self.records.len() as f64)
        }
    }

    pub fn extend(&mut self, other: &TaskMetrics) {
        self.records.extend_from_slice(&other.records);
    }

    /// Per-stage breakdown, ordered by stage label.
    pub fn per_stage(&self) -> Vec<StageSummary> {
        let mut by_stage: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
        for r in &self.records {
            let e = by_stage.entry(r.stage.as_str()).or_default();
            e.0 += 1;
            e.1 += r.duration_ms;
        }
        by_stage
            .into_iter()
            .map(|(stage, (tasks, total_ms))| StageSummary {
                stage: stage.to_string(),
                tasks,
                total_ms,
                mean_ms: total_ms / tasks as f64,
            })
            .collect()
    }

    /// Task count per worker id.
    pub fn tasks_per_worker(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.worker).or_insert(0) += 1;
        }
        out
    }

    /// CSV with header `stage,worker,partition,duration_ms`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self, csv::Error> {
        let mut r = csv::Reader::from_reader(reader);
        let records = r.deserialize().collect::<Result<Vec<TaskRecord>, _>>()?;
        Ok(Self { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(stage: &str, worker: usize, partition: usize, ms: f64) -> TaskRecord {
        TaskRecord {
            stage: stage.into(),
            worker,
            partition,
            duration_ms: ms,
        }
    }

    #[test]
    fn average_is_sum_over_count() {
        let m = TaskMetrics::from_records(vec![rec("a", 0, 0, 1.0), rec("a", 1, 1, 3.0), rec("b", 0, 0, 8.0)]);
        assert_eq!(m.task_count(), 3);
        assert_eq!(m.average_task_ms(), Some(4.0));
        let stages = m.per_stage();
        assert_eq!(stages.len(), 2);
        assert_eq!(stages[0].tasks, 2);
        assert_eq!(stages[0].mean_ms, 2.0);
        assert_eq!(TaskMetrics::default().average_task_ms(), None);
    }

    #[test]
    fn csv_header_and_reparse() {
        let m = TaskMetrics::from_records(vec![rec("1:map", 0, 0, 0.25), rec("2:distinct", 3, 7, 1.5)]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("stage,worker,partition,duration_ms\n"));
        assert_eq!(TaskMetrics::read_csv(buf.as_slice()).unwrap(), m);
    }
}
