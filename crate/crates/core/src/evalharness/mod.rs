//! Benchmark evaluation: task ingestion, trial execution with a resumable
//! journal, answer extraction and judging, and score aggregation.

mod extract;
mod ingest;
mod metrics;

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_answer, judge, ExtractionOutcome, NonComplianceReason, ANSWER_PREFIXES};
pub use ingest::{ingest_task_dir, EvalTask, Problem};
pub(crate) use metrics::per_trial_accuracy;
pub use metrics::{
    aggregate, cross_task_means, emit_report, trial_accuracy, MetricsReport, ReportFormat, ScoringMode,
    CSV_ARITHMETIC_ROW, CSV_HARMONIC_ROW,
};

use crate::promptgen::{check_placeholders, instantiate_template};
use crate::prompts::FINAL_ANSWER_FORMAT;
use crate::provider::{tags, ChatRequest, Provider, ProviderError, DEFAULT_MAX_OUTPUT_TOKENS};
use crate::storage::{Journal, StorageError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} is not a directory")]
    NotADirectory(String),
    #[error("no README found in {0}")]
    MissingReadme(String),
    #[error("no problems found in {0}")]
    MissingProblems(String),
    #[error("{path}:{line}: {message}")]
    ProblemsParse { path: String, line: usize, message: String },
    #[error("problem {index} has an empty input")]
    EmptyInput { index: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("template is invalid: {0}")]
    InvalidTemplate(String),
    #[error("trials must be at least 1")]
    ZeroTrials,
    #[error("problem index {index} out of range for {len} problems")]
    ProblemIndex { index: usize, len: usize },
    #[error("no records to aggregate")]
    NoRecords,
    #[error("report parse error: {0}")]
    ReportParse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_name: String,
    pub problem_index: usize,
    pub trial_index: u32,
    pub temperature: f64,
    /// Distinguishes runs of different templates sharing one journal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_tag: Option<String>,
    pub raw_output: String,
    pub outcome: ExtractionOutcome,
    pub correct: bool,
}

type RecordKey = (String, u64, Option<String>, usize, u32);

impl EvalRecord {
    fn key(&self) -> RecordKey {
        (
            self.task_name.clone(),
            self.temperature.to_bits(),
            self.template_tag.clone(),
            self.problem_index,
            self.trial_index,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub model: String,
    pub temperature: f64,
    pub trials: u32,
    pub seed: u64,
    pub max_output_tokens: u32,
    pub template_tag: Option<String>,
    /// Answer-format text inserted at the format placeholder.
    pub answer_format: String,
    /// Calls issued between journal flushes.
    pub chunk_size: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            model: "gemini-2.0-flash".into(),
            temperature: 0.0,
            trials: 10,
            seed: 0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            template_tag: None,
            answer_format: FINAL_ANSWER_FORMAT.to_string(),
            chunk_size: 64,
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed sent with the request for one (problem, trial) cell.
pub fn cell_seed(seed: u64, problem_index: usize, trial_index: u32) -> u64 {
    mix(mix(seed ^ mix(problem_index as u64)) ^ u64::from(trial_index))
}

fn evaluate_one(
    task: &EvalTask,
    prompt: &str,
    problem_index: usize,
    trial_index: u32,
    provider: &dyn Provider,
    opts: &RunOptions,
) -> Result<EvalRecord, EvalError> {
    let tag = format!("{}:{}:{problem_index}:{trial_index}", tags::EVAL, task.name);
    let request = ChatRequest::new(&opts.model, prompt, opts.temperature)
        .with_tag(tag)
        .with_max_output_tokens(opts.max_output_tokens)
        .with_seed(cell_seed(opts.seed, problem_index, trial_index));
    let (raw_output, outcome) = match provider.complete(&request) {
        Ok(reply) => {
            let outcome = extract_answer(&reply.text, reply.truncated);
            (reply.text, outcome)
        }
        Err(e @ (ProviderError::Authentication(_) | ProviderError::InvalidRequest(_))) => return Err(e.into()),
        Err(e) => {
            log::warn!("{} problem {problem_index} trial {trial_index}: {e}", task.name);
            (
                String::new(),
                ExtractionOutcome::NonCompliant {
                    reason: NonComplianceReason::ProviderError,
                },
            )
        }
    };
    let correct = outcome
        .answer()
        .is_some_and(|a| judge(a, &task.problems[problem_index].target));
    Ok(EvalRecord {
        task_name: task.name.clone(),
        problem_index,
        trial_index,
        temperature: opts.temperature,
        template_tag: opts.template_tag.clone(),
        raw_output,
        outcome,
        correct,
    })
}

/// Runs every problem of `task` for `opts.trials` trials.
pub fn run_trials(
    task: &EvalTask,
    template_text: &str,
    provider: &dyn Provider,
    opts: &RunOptions,
    journal: Option<&Path>,
) -> Result<Vec<EvalRecord>, EvalError> {
    let indices: Vec<usize> = (0..task.problems.len()).collect();
    run_trials_on(task, &indices, template_text, provider, opts, journal)
}

/// Runs the selected problems in (problem, trial) order.
///
/// With a journal, records already present for the same task, temperature and
/// template tag are reused and new ones are appended chunk by chunk, so an
/// interrupted run resumes where it stopped. Returned records follow
/// `problem_indices` order.
pub fn run_trials_on(
    task: &EvalTask,
    problem_indices: &[usize],
    template_text: &str,
    provider: &dyn Provider,
    opts: &RunOptions,
    journal: Option<&Path>,
) -> Result<Vec<EvalRecord>, EvalError> {
    if opts.trials == 0 {
        return Err(EvalError::ZeroTrials);
    }
    check_placeholders(template_text).map_err(EvalError::InvalidTemplate)?;
    if let Some(&index) = problem_indices.iter().find(|&&i| i >= task.problems.len()) {
        return Err(EvalError::ProblemIndex {
            index,
            len: task.problems.len(),
        });
    }
    let (existing, mut writer) = match journal {
        Some(path) => {
            let (records, j) = Journal::open::<EvalRecord>(path)?;
            (records, Some(j))
        }
        None => (Vec::new(), None),
    };
    let done: HashSet<RecordKey> = existing.iter().map(EvalRecord::key).collect();
    let cells: Vec<(usize, u32)> = problem_indices
        .iter()
        .flat_map(|&p| (0..opts.trials).map(move |t| (p, t)))
        .collect();
    let wanted_key = |p: usize, t: u32| {
        (
            task.name.clone(),
            opts.temperature.to_bits(),
            opts.template_tag.clone(),
            p,
            t,
        )
    };
    let pending: Vec<(usize, u32)> = cells
        .iter()
        .copied()
        .filter(|&(p, t)| !done.contains(&wanted_key(p, t)))
        .collect();
    if pending.len() < cells.len() {
        log::info!(
            "{}: {} of {} cells already journaled",
            task.name,
            cells.len() - pending.len(),
            cells.len()
        );
    }
    let prompts: Vec<String> = task
        .problems
        .iter()
        .map(|p| instantiate_template(template_text, &p.input, &opts.answer_format))
        .collect();
    let mut fresh = Vec::with_capacity(pending.len());
    for chunk in pending.chunks(opts.chunk_size.max(1)) {
        let records = chunk
            .par_iter()
            .map(|&(p, t)| evaluate_one(task, &prompts[p], p, t, provider, opts))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(j) = writer.as_mut() {
            j.append(&records)?;
        }
        fresh.extend(records);
    }
    let mut all: std::collections::HashMap<RecordKey, EvalRecord> =
        existing.into_iter().map(|r| (r.key(), r)).collect();
    all.extend(fresh.into_iter().map(|r| (r.key(), r)));
    Ok(cells
        .iter()
        .map(|&(p, t)| all.remove(&wanted_key(p, t)).expect("every cell evaluated"))
        .collect())
}
