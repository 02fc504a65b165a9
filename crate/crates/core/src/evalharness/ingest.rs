use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub input: String,
    #[serde(deserialize_with = "string_or_scalar")]
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTask {
    pub name: String,
    pub description: String,
    pub problems: Vec<Problem>,
}

fn string_or_scalar<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    use serde_json::Value;
    match Value::deserialize(d)? {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(serde::de::Error::custom(format!(
            "target must be a string, got {other}"
        ))),
    }
}

#[derive(Deserialize)]
struct ExamplesFile {
    examples: Vec<Problem>,
}

const README_NAMES: [&str; 5] = ["README.md", "README", "README.txt", "readme.md", "Readme.md"];
const PROBLEM_FILES: [&str; 3] = ["task.json", "problems.jsonl", "examples.jsonl"];

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn find_problems_file(dir: &Path) -> Result<PathBuf, EvalError> {
    for name in PROBLEM_FILES {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    let mut candidates: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "jsonl")))
        .collect();
    candidates.sort();
    candidates
        .into_iter()
        .next()
        .ok_or_else(|| EvalError::MissingProblems(dir.display().to_string()))
}

fn parse_problems(path: &Path, text: &str) -> Result<Vec<Problem>, EvalError> {
    let bad = |line: usize, e: serde_json::Error| EvalError::ProblemsParse {
        path: path.display().to_string(),
        line,
        message: e.to_string(),
    };
    if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i + 1, e)))
            .collect()
    } else {
        let file: ExamplesFile = serde_json::from_str(text).map_err(|e| bad(e.line(), e))?;
        Ok(file.examples)
    }
}

/// Loads a task directory holding a README and a problems file, either a
/// JSON document with an `examples` array or JSONL records of `{input, target}`.
/// The directory name becomes the task name.
pub fn ingest_task_dir(dir: &Path) -> Result<EvalTask, EvalError> {
    if !dir.is_dir() {
        return Err(EvalError::NotADirectory(dir.display().to_string()));
    }
    let readme = README_NAMES
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| EvalError::MissingReadme(dir.display().to_string()))?;
    let description = fs::read_to_string(&readme).map_err(io(&readme))?.trim().to_string();
    let problems_path = find_problems_file(dir)?;
    let text = fs::read_to_string(&problems_path).map_err(io(&problems_path))?;
    let problems = parse_problems(&problems_path, &text)?;
    if problems.is_empty() {
        return Err(EvalError::MissingProblems(dir.display().to_string()));
    }
    if let Some(i) = problems.iter().position(|p| p.input.trim().is_empty()) {
        return Err(EvalError::EmptyInput { index: i });
    }
    let name = dir
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| dir.display().to_string());
    Ok(EvalTask {
        name,
        description,
        problems,
    })
}
