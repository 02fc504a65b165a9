use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalRecord};
use crate::storage::{atomic_write, write_json_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Non-compliant outputs leave the denominator.
    Corrected,
    /// Non-compliant outputs count as wrong.
    Precorrection,
}

impl FromStr for ScoringMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "corrected" => Ok(Self::Corrected),
            "precorrection" => Ok(Self::Precorrection),
            other => Err(format!("unknown scoring mode {other:?}")),
        }
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Corrected => "corrected",
            Self::Precorrection => "precorrection",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// Percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: ScoringMode,
    pub per_task_mean: BTreeMap<String, f64>,
    pub noncompliance_rate: BTreeMap<String, f64>,
    pub arithmetic_mean_across_tasks: f64,
    pub harmonic_mean_across_tasks: f64,
}

/// Arithmetic mean of `values` and the harmonic mean of `values + 1`.
/// The shifted harmonic mean is reported as is, without subtracting 1.
pub fn cross_task_means(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let arithmetic = values.iter().sum::<f64>() / n;
    let harmonic = n / values.iter().map(|v| 1.0 / (v + 1.0)).sum::<f64>();
    (arithmetic, harmonic)
}

/// Accuracy of one trial in `[0, 1]`.
pub fn trial_accuracy(correct: usize, noncompliant: usize, total: usize, mode: ScoringMode) -> f64 {
    let denominator = match mode {
        ScoringMode::Corrected => total - noncompliant,
        ScoringMode::Precorrection => total,
    };
    if denominator == 0 {
        0.0
    } else {
        correct as f64 / denominator as f64
    }
}

#[derive(Default)]
struct Counts {
    correct: usize,
    noncompliant: usize,
    total: usize,
}

impl Counts {
    fn add(&mut self, r: &EvalRecord) {
        self.total += 1;
        if !r.outcome.is_compliant() {
            self.noncompliant += 1;
        } else if r.correct {
            self.correct += 1;
        }
    }
}

/// Per-trial accuracies of one task, keyed by trial identity.
pub(crate) fn per_trial_accuracy<'a>(records: impl IntoIterator<Item = &'a EvalRecord>, mode: ScoringMode) -> Vec<f64> {
    let mut trials: BTreeMap<(u64, Option<&str>, u32), Counts> = BTreeMap::new();
    for r in records {
        trials
            .entry((r.temperature.to_bits(), r.template_tag.as_deref(), r.trial_index))
            .or_default()
            .add(r);
    }
    trials
        .values()
        .map(|c| trial_accuracy(c.correct, c.noncompliant, c.total, mode))
        .collect()
}

/// Per-task mean of per-trial accuracy, plus the cross-task means.
pub fn aggregate(records: &[EvalRecord], mode: ScoringMode) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut by_task: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_task.entry(r.task_name.as_str()).or_default().push(r);
    }
    let mut per_task_mean = BTreeMap::new();
    let mut noncompliance_rate = BTreeMap::new();
    for (task, recs) in &by_task {
        let trials = per_trial_accuracy(recs.iter().copied(), mode);
        let mean = 100.0 * trials.iter().sum::<f64>() / trials.len() as f64;
        let noncompliant = recs.iter().filter(|r| !r.outcome.is_compliant()).count();
        per_task_mean.insert(task.to_string(), mean);
        noncompliance_rate.insert(task.to_string(), 100.0 * noncompliant as f64 / recs.len() as f64);
    }
    let values: Vec<f64> = per_task_mean.values().copied().collect();
    let (arithmetic, harmonic) = cross_task_means(&values);
    Ok(MetricsReport {
        mode,
        per_task_mean,
        noncompliance_rate,
        arithmetic_mean_across_tasks: arithmetic,
        harmonic_mean_across_tasks: harmonic,
    })
}

pub const CSV_ARITHMETIC_ROW: &str = "arithmetic_mean_across_tasks";
pub const CSV_HARMONIC_ROW: &str = "harmonic_mean_across_tasks";

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["task", "mean", "noncompliance_rate"])
            .expect("in-memory write");
        for (task, mean) in &self.per_task_mean {
            let rate = self.noncompliance_rate.get(task).copied().unwrap_or(0.0);
            w.write_record([task.clone(), mean.to_string(), rate.to_string()])
                .expect("in-memory write");
        }
        w.write_record([CSV_ARITHMETIC_ROW, &self.arithmetic_mean_across_tasks.to_string(), ""])
            .expect("in-memory write");
        w.write_record([CSV_HARMONIC_ROW, &self.harmonic_mean_across_tasks.to_string(), ""])
            .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn load_json(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| EvalError::ReportParse(e.to_string()))
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json() + "\n",
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat, path: &Path) -> Result<(), EvalError> {
    match format {
        ReportFormat::Json => write_json_atomic(path, report)?,
        ReportFormat::Csv => atomic_write(path, report.to_csv().as_bytes())?,
    }
    Ok(())
}
