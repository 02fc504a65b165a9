use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonComplianceReason {
    Truncated,
    NoPrefix,
    /// The provider failed even after retries.
    ProviderError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExtractionOutcome {
    Compliant { answer: String },
    NonCompliant { reason: NonComplianceReason },
}

impl ExtractionOutcome {
    pub fn is_compliant(&self) -> bool {
        matches!(self, Self::Compliant { .. })
    }

    pub fn answer(&self) -> Option<&str> {
        match self {
            Self::Compliant { answer } => Some(answer),
            Self::NonCompliant { .. } => None,
        }
    }
}

/// Answer prefixes, in the order they are listed in the fixture.
pub static ANSWER_PREFIXES: LazyLock<Vec<String>> = LazyLock::new(|| {
    serde_json::from_str(include_str!("../../fixtures/extraction_prefixes.json")).expect("prefix fixture parses")
});

/// Takes the text after the prefix occurrence that starts latest in the output.
/// When two prefixes start at the same offset the longer one wins.
pub fn extract_answer(raw_output: &str, truncated: bool) -> ExtractionOutcome {
    if truncated {
        return ExtractionOutcome::NonCompliant {
            reason: NonComplianceReason::Truncated,
        };
    }
    let best = ANSWER_PREFIXES
        .iter()
        .filter_map(|p| raw_output.rfind(p.as_str()).map(|i| (i, p.len())))
        .max();
    match best {
        Some((start, len)) => ExtractionOutcome::Compliant {
            answer: clean(&raw_output[start + len..]).to_string(),
        },
        None => ExtractionOutcome::NonCompliant {
            reason: NonComplianceReason::NoPrefix,
        },
    }
}

fn clean(s: &str) -> &str {
    s.trim().trim_end_matches('.').trim_end()
}

fn strip_latex(s: &str) -> &str {
    let mut s = s;
    if s.len() >= 2 && s.starts_with('$') && s.ends_with('$') {
        s = &s[1..s.len() - 1];
    }
    for marker in ["boxed{", "text{", "texttt{"] {
        if s.ends_with('}') {
            if let Some(i) = s.find(marker) {
                s = &s[i + marker.len()..s.len() - 1];
            }
        }
    }
    s
}

fn normalize_answer(answer: &str) -> String {
    let s = strip_latex(clean(answer))
        .to_lowercase()
        .replace(", ", ",")
        .replace("**", "");
    let first = s.lines().next().unwrap_or("").trim();
    first.strip_suffix('.').unwrap_or(first).to_string()
}

fn normalize_target(target: &str) -> String {
    target.trim().to_lowercase().replace(", ", ",")
}

fn mc_letter(s: &str) -> Option<&str> {
    let inner = s.strip_prefix('(')?.strip_suffix(')')?;
    (inner.chars().count() == 1).then_some(inner)
}

/// Compares an extracted answer with a target.
///
/// Both sides are lowercased and trimmed; the answer additionally loses LaTeX
/// wrappers, bold markers, trailing periods and everything after its first
/// line. Multiple-choice letters match with or without parentheses, numbers
/// compare by value, and quote, bracket and question-mark differences are
/// tolerated.
pub fn judge(answer: &str, target: &str) -> bool {
    let p = normalize_answer(answer);
    let r = normalize_target(target);
    if p == r {
        return true;
    }
    if let Some(letter) = mc_letter(&p) {
        return letter == r;
    }
    if let Some(letter) = mc_letter(&r) {
        return letter == p;
    }
    if let (Ok(a), Ok(b)) = (p.parse::<f64>(), r.parse::<f64>()) {
        if a == b {
            return true;
        }
    }
    if p.replace('\'', "") == r.replace('\'', "") {
        return true;
    }
    if format!("[{r}]") == p || format!("[{p}]") == r {
        return true;
    }
    p.strip_suffix('?').is_some_and(|q| q == r)
}
