//! Per-task temperature sweeps, optimum selection and one-way ANOVA across
//! temperature settings.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::evalharness::{per_trial_accuracy, run_trials_on, EvalError, EvalRecord, EvalTask, RunOptions, ScoringMode};
use crate::provider::Provider;
use crate::specfun::f_survival;
use crate::storage::atomic_write;

#[derive(Debug, Error)]
pub enum TempOptError {
    #[error("sweep plan is invalid: {0}")]
    InvalidPlan(String),
    #[error("one-way ANOVA needs at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {group} has {size} observations, need at least 2")]
    SmallGroup { group: usize, size: usize },
    #[error("observation in group {0} is not finite")]
    NonFinite(usize),
    #[error("accuracy matrix is empty")]
    EmptyMatrix,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("plan parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepPlan {
    pub temperatures: Vec<f64>,
    pub sample_size: usize,
    pub trials: u32,
    pub sampling_seed: u64,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            temperatures: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.3],
            sample_size: 40,
            trials: 10,
            sampling_seed: 0,
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<(), TempOptError> {
        if self.temperatures.is_empty() {
            return Err(TempOptError::InvalidPlan("no temperatures".into()));
        }
        let mut seen = HashSet::new();
        for &t in &self.temperatures {
            if !t.is_finite() || t < 0.0 {
                return Err(TempOptError::InvalidPlan(format!(
                    "temperature {t} must be finite and non-negative"
                )));
            }
            if !seen.insert(t.to_bits()) {
                return Err(TempOptError::InvalidPlan(format!("temperature {t} listed twice")));
            }
        }
        if self.sample_size == 0 {
            return Err(TempOptError::InvalidPlan("sample_size must be positive".into()));
        }
        if self.trials == 0 {
            return Err(TempOptError::InvalidPlan("trials must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TempOptError> {
        let plan: Self = serde_json::from_str(text).map_err(|e| TempOptError::Parse(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Sorted indices of a uniform sample without replacement. Returns every index
/// when `n` covers the whole task.
pub fn sample_indices(problem_count: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= problem_count {
        return (0..problem_count).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, problem_count, n).into_vec();
    picked.sort_unstable();
    picked
}

/// The task restricted to a seeded sample of its problems.
pub fn sample_problems(task: &EvalTask, n: usize, seed: u64) -> EvalTask {
    let idx = sample_indices(task.problems.len(), n, seed);
    EvalTask {
        name: task.name.clone(),
        description: task.description.clone(),
        problems: idx.into_iter().map(|i| task.problems[i].clone()).collect(),
    }
}

/// Per-trial accuracy percentages observed at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRow {
    pub temperature: f64,
    pub accuracies: Vec<f64>,
}

impl TemperatureRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

/// Runs the sampled problems at every planned temperature. Rows follow the
/// plan's temperature order. Problem indices in the journal refer to the full
/// task, so the journal stays valid for resumption.
pub fn sweep(
    task: &EvalTask,
    template_text: &str,
    provider: &dyn Provider,
    plan: &SweepPlan,
    base: &RunOptions,
    journal: Option<&Path>,
) -> Result<Vec<TemperatureRow>, TempOptError> {
    plan.validate()?;
    let indices = sample_indices(task.problems.len(), plan.sample_size, plan.sampling_seed);
    let mut rows = Vec::with_capacity(plan.temperatures.len());
    for &temperature in &plan.temperatures {
        let opts = RunOptions {
            temperature,
            trials: plan.trials,
            ..base.clone()
        };
        let records = run_trials_on(task, &indices, template_text, provider, &opts, journal)?;
        rows.push(TemperatureRow {
            temperature,
            accuracies: per_trial_accuracy(&records, ScoringMode::Corrected)
                .into_iter()
                .map(|a| 100.0 * a)
                .collect(),
        });
    }
    Ok(rows)
}

/// Temperature with the highest mean accuracy; ties go to the lowest temperature.
pub fn pick_optimal(matrix: &[TemperatureRow]) -> Result<(f64, f64), TempOptError> {
    if matrix.is_empty() || matrix.iter().any(|r| r.accuracies.is_empty()) {
        return Err(TempOptError::EmptyMatrix);
    }
    let mut best: Option<(f64, f64)> = None;
    for row in matrix {
        let m = row.mean();
        best = match best {
            None => Some((row.temperature, m)),
            Some((t, bm)) if m > bm || (m == bm && row.temperature < t) => Some((row.temperature, m)),
            keep => keep,
        };
    }
    Ok(best.expect("non-empty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    #[serde(serialize_with = "ser_f64_inf", deserialize_with = "de_f64_inf")]
    pub f_statistic: f64,
    pub p_value: f64,
    pub df_between: usize,
    pub df_within: usize,
}

fn ser_f64_inf<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_f64_inf<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(f) => Ok(f),
        Num::S(s) if s == "inf" => Ok(f64::INFINITY),
        Num::S(s) => Err(serde::de::Error::custom(format!(
            "expected a number or \"inf\", got {s:?}"
        ))),
    }
}

/// Classical one-way ANOVA. Groups may differ in size.
///
/// Zero within-group variance yields `F = inf` with `p = f64::EPSILON` when
/// the group means differ, and `F = 0`, `p = 1` when they do not.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult, TempOptError> {
    if groups.len() < 2 {
        return Err(TempOptError::TooFewGroups(groups.len()));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(TempOptError::SmallGroup {
                group: i,
                size: g.len(),
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(TempOptError::NonFinite(i));
        }
    }
    let total: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / total as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (mean - grand).powi(2);
        ss_within += g.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    }
    let df_between = groups.len() - 1;
    let df_within = total - groups.len();
    let ms_between = ss_between / df_between as f64;
    let ms_within = ss_within / df_within as f64;
    // relative guard so rounding noise in constant groups reads as zero
    let scale = groups.iter().flatten().map(|x| x * x).sum::<f64>().max(1.0);
    let zero = |v: f64| v <= scale * 1e-24;
    let (f_statistic, p_value) = match (zero(ms_within), zero(ms_between)) {
        (true, true) => (0.0, 1.0),
        (true, false) => (f64::INFINITY, f64::EPSILON),
        _ => {
            let f = ms_between / ms_within;
            let p = f_survival(f, df_between as f64, df_within as f64).clamp(f64::EPSILON, 1.0);
            (f, p)
        }
    };
    Ok(AnovaResult {
        f_statistic,
        p_value,
        df_between,
        df_within,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTemperatureSummary {
    pub task: String,
    pub optimal_temperature: f64,
    pub optimal_mean: f64,
    /// Missing when fewer than two temperatures have two or more trials.
    pub anova: Option<AnovaResult>,
    pub means: Vec<(f64, f64)>,
}

/// Builds the accuracy matrix for every task found in sweep records.
/// Trials of different template tags at one temperature are pooled.
pub fn matrices_from_records(records: &[EvalRecord]) -> BTreeMap<String, Vec<TemperatureRow>> {
    let mut grouped: BTreeMap<&str, BTreeMap<u64, Vec<&EvalRecord>>> = BTreeMap::new();
    for r in records {
        grouped
            .entry(&r.task_name)
            .or_default()
            .entry(r.temperature.to_bits())
            .or_default()
            .push(r);
    }
    grouped
        .into_iter()
        .map(|(task, temps)| {
            let mut rows: Vec<TemperatureRow> = temps
                .into_iter()
                .map(|(bits, recs)| TemperatureRow {
                    temperature: f64::from_bits(bits),
                    accuracies: per_trial_accuracy(recs, ScoringMode::Corrected)
                        .into_iter()
                        .map(|a| 100.0 * a)
                        .collect(),
                })
                .collect();
            rows.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));
            (task.to_string(), rows)
        })
        .collect()
}

pub fn summarize(task: &str, matrix: &[TemperatureRow]) -> Result<TaskTemperatureSummary, TempOptError> {
    let (optimal_temperature, optimal_mean) = pick_optimal(matrix)?;
    let groups: Vec<Vec<f64>> = matrix.iter().map(|r| r.accuracies.clone()).collect();
    let anova = match one_way_anova(&groups) {
        Ok(a) => Some(a),
        Err(e) => {
            log::warn!("{task}: ANOVA skipped: {e}");
            None
        }
    };
    Ok(TaskTemperatureSummary {
        task: task.to_string(),
        optimal_temperature,
        optimal_mean,
        anova,
        means: matrix.iter().map(|r| (r.temperature, r.mean())).collect(),
    })
}

pub fn temperature_report(records: &[EvalRecord]) -> Result<Vec<TaskTemperatureSummary>, TempOptError> {
    matrices_from_records(records)
        .iter()
        .map(|(task, m)| summarize(task, m))
        .collect()
}

fn fmt_stat(v: Option<f64>) -> String {
    match v {
        Some(f) if f.is_infinite() => "inf".into(),
        Some(f) => f.to_string(),
        None => String::new(),
    }
}

pub fn report_csv(rows: &[TaskTemperatureSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "optimal_temperature", "optimal_mean", "F", "p"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.task.clone(),
            r.optimal_temperature.to_string(),
            r.optimal_mean.to_string(),
            fmt_stat(r.anova.map(|a| a.f_statistic)),
            fmt_stat(r.anova.map(|a| a.p_value)),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

pub fn write_report_csv(rows: &[TaskTemperatureSummary], path: &Path) -> Result<(), EvalError> {
    atomic_write(path, report_csv(rows).as_bytes())?;
    Ok(())
}
