//! Prompt generation: match a task description to a knowledge-base cluster and
//! have the chat model write a template from that cluster's techniques.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, PromptingTechnique};
use crate::kbforge::{embed_normalized, KnowledgeBase, TaskCluster};
use crate::prompts;
use crate::provider::{tags, ChatRequest, Provider, ProviderError, DEFAULT_MAX_OUTPUT_TOKENS};
use crate::reply::strip_code_fence;
use crate::vectors::{cosine_similarity, VectorError};

pub const INPUT_PLACEHOLDER: &str = "{$INPUT}";
pub const FORMAT_PLACEHOLDER: &str = "{$FINAL_ANSWER_FORMAT}";

#[derive(Debug, Error)]
pub enum PromptGenError {
    #[error("knowledge base has no clusters")]
    EmptyKb,
    #[error("task description is empty")]
    EmptyDescription,
    #[error("no techniques to generate from")]
    NoTechniques,
    #[error("cluster {0:?} has no technique selection")]
    MissingSelection(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error("template rejected after {attempts} attempts: {reason}")]
    InvalidTemplate { attempts: u32, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetadata {
    pub model: String,
    pub temperature: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTemplate {
    pub template_text: String,
    pub source_cluster_id: String,
    pub similarity: f64,
    pub technique_ids: Vec<String>,
    pub generation_metadata: GenerationMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub chat_model: String,
    pub embedding_model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Extra attempts after a rejected template.
    pub retry_cap: u32,
    /// Fixed timestamp for reproducible output; the current time when unset.
    pub timestamp: Option<u64>,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            chat_model: "gemini-2.5-pro".into(),
            embedding_model: "gemini-embedding-exp-03-07".into(),
            temperature: 1.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            retry_cap: 3,
            timestamp: None,
        }
    }
}

/// Embeds the description and returns the most similar cluster.
/// Ties go to the cluster listed first.
pub fn match_cluster<'kb>(
    user_description: &str,
    kb: &'kb KnowledgeBase,
    provider: &dyn Provider,
    embedding_model: &str,
) -> Result<(&'kb TaskCluster, f64), PromptGenError> {
    if kb.clusters.is_empty() {
        return Err(PromptGenError::EmptyKb);
    }
    if user_description.trim().is_empty() {
        return Err(PromptGenError::EmptyDescription);
    }
    let query = embed_normalized(vec![user_description.to_string()], provider, embedding_model, 1)
        .map_err(|e| PromptGenError::Embedding(e.to_string()))?
        .pop()
        .expect("one vector");
    let mut best: Option<(&TaskCluster, f64)> = None;
    for c in &kb.clusters {
        let s = cosine_similarity(&query, &c.description_vector)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    Ok(best.expect("non-empty"))
}

/// Resolves the cluster's selected technique ids, keeping their order.
pub fn select_techniques(cluster_id: &str, kb: &KnowledgeBase) -> Result<Vec<PromptingTechnique>, PromptGenError> {
    let selection = kb
        .selection(cluster_id)
        .ok_or_else(|| PromptGenError::MissingSelection(cluster_id.to_string()))?;
    let catalog = kb.catalog()?;
    selection
        .technique_ids
        .iter()
        .map(|id| {
            catalog
                .get(id)
                .cloned()
                .ok_or_else(|| CatalogError::UnknownTechnique(id.clone()).into())
        })
        .collect()
}

/// Checks the exactly-once rule for both placeholders.
pub fn check_placeholders(text: &str) -> Result<(), String> {
    let mut problems = Vec::new();
    for p in [INPUT_PLACEHOLDER, FORMAT_PLACEHOLDER] {
        match text.matches(p).count() {
            1 => {}
            0 => problems.push(format!("the placeholder {p} is missing")),
            n => problems.push(format!(
                "the placeholder {p} appears {n} times but must appear exactly once"
            )),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems.join("; "))
    }
}

fn technique_guidance(techniques: &[PromptingTechnique]) -> String {
    techniques
        .iter()
        .map(|t| {
            format!(
                "- {} ({})\n  Description: {}\n  Application cases: {}",
                t.name, t.category, t.description, t.application_cases
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Asks the chat model for a template built from `techniques`.
///
/// `source_cluster_id` and `similarity` are left for the caller to fill.
pub fn generate_template(
    user_description: &str,
    techniques: &[PromptingTechnique],
    provider: &dyn Provider,
    opts: &GenerationOptions,
) -> Result<GeneratedTemplate, PromptGenError> {
    if techniques.is_empty() {
        return Err(PromptGenError::NoTechniques);
    }
    if user_description.trim().is_empty() {
        return Err(PromptGenError::EmptyDescription);
    }
    let base = prompts::GENERATE_TEMPLATE.render(&[
        ("task_description", user_description.trim()),
        ("techniques", &technique_guidance(techniques)),
    ]);
    let attempts = opts.retry_cap + 1;
    let mut reason = String::new();
    for attempt in 0..attempts {
        let prompt = if attempt == 0 {
            base.clone()
        } else {
            format!("{base}\n\nYour previous template was rejected: {reason}.\nWrite the template again.")
        };
        let request = ChatRequest::new(&opts.chat_model, prompt, opts.temperature)
            .with_tag(format!("{}:{attempt}", tags::GENERATE_TEMPLATE))
            .with_max_output_tokens(opts.max_output_tokens);
        let reply = provider.complete(&request)?;
        let text = strip_code_fence(&reply.text).trim().to_string();
        let verdict = if reply.truncated {
            Err("the reply was cut off by the output limit".to_string())
        } else {
            check_placeholders(&text)
        };
        match verdict {
            Ok(()) => {
                return Ok(GeneratedTemplate {
                    template_text: text,
                    source_cluster_id: String::new(),
                    similarity: 0.0,
                    technique_ids: techniques.iter().map(|t| t.id.clone()).collect(),
                    generation_metadata: GenerationMetadata {
                        model: opts.chat_model.clone(),
                        temperature: opts.temperature,
                        timestamp: opts.timestamp.unwrap_or_else(now_unix),
                        instruction: prompts::GENERATE_TEMPLATE.id(),
                    },
                })
            }
            Err(why) => {
                log::debug!("template attempt {attempt} rejected: {why}");
                reason = why;
            }
        }
    }
    Err(PromptGenError::InvalidTemplate { attempts, reason })
}

/// Full generation phase: match, select, generate.
pub fn generate_for_task(
    user_description: &str,
    kb: &KnowledgeBase,
    provider: &dyn Provider,
    opts: &GenerationOptions,
) -> Result<GeneratedTemplate, PromptGenError> {
    let (cluster, similarity) = match_cluster(user_description, kb, provider, &opts.embedding_model)?;
    let techniques = select_techniques(&cluster.cluster_id, kb)?;
    let mut template = generate_template(user_description, &techniques, provider, opts)?;
    template.source_cluster_id = cluster.cluster_id.clone();
    template.similarity = similarity;
    Ok(template)
}

/// Substitutes both placeholders in one left-to-right pass; inserted text is
/// never scanned again.
pub fn instantiate_template(template_text: &str, problem_text: &str, answer_format_text: &str) -> String {
    let mut out = String::with_capacity(template_text.len() + problem_text.len() + answer_format_text.len());
    let mut rest = template_text;
    loop {
        let next = [
            (rest.find(INPUT_PLACEHOLDER), INPUT_PLACEHOLDER, problem_text),
            (rest.find(FORMAT_PLACEHOLDER), FORMAT_PLACEHOLDER, answer_format_text),
        ]
        .into_iter()
        .filter_map(|(pos, p, v)| pos.map(|i| (i, p, v)))
        .min_by_key(|(i, _, _)| *i);
        match next {
            Some((i, placeholder, value)) => {
                out.push_str(&rest[..i]);
                out.push_str(value);
                rest = &rest[i + placeholder.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}
