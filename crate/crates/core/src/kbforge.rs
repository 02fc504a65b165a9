//! Knowledge-base construction: embed tasks, cluster them, label the clusters,
//! map each cluster to prompting techniques and persist the result.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{validate_selection, Catalog, CatalogError, PromptingTechnique, TechniqueSelection};
use crate::clustering::{select_k_with_config, ClusteringError, ClusteringResult, KMeansConfig};
use crate::prompts;
use crate::provider::{tags, ChatRequest, EmbeddingRequest, Provider, ProviderError, DEFAULT_MAX_OUTPUT_TOKENS};
use crate::reply::extract_json_object;
use crate::storage::{write_json_atomic, StorageError};
use crate::vectors::{l2_normalize, EmbeddingVector, VectorError};

pub const KB_SCHEMA_VERSION: u32 = 1;
pub const MIN_TASKS: usize = 4;
pub const MIN_CLUSTERS: usize = 3;
const MAX_SLUG_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("need at least {MIN_TASKS} tasks to cluster, got {0}")]
    TooFewTasks(usize),
    #[error("duplicate task name {0:?}")]
    DuplicateTask(String),
    #[error("task {0:?} has an empty name or description")]
    EmptyTask(String),
    #[error("tasks file line {line}: {message}")]
    TaskParse { line: usize, message: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("cluster {cluster} label rejected after {attempts} attempts: {reason}")]
    LabelRejected {
        cluster: usize,
        attempts: u32,
        reason: String,
    },
    #[error("cluster {cluster_id:?} technique reply unparseable after {attempts} attempts: {reason}")]
    MappingUnparseable {
        cluster_id: String,
        attempts: u32,
        reason: String,
    },
    #[error("cluster {0:?} not found in knowledge base")]
    UnknownCluster(String),
    #[error("knowledge base parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("knowledge base is invalid: {}", join_violations(.0))]
    Invalid(Vec<KbViolation>),
}

fn join_violations(v: &[KbViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub description: String,
}

impl Task {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
        }
    }

    /// Text sent to the embedding model.
    pub fn embedding_text(&self) -> String {
        format!("{}: {}", self.name, self.description)
    }
}

pub fn check_tasks(tasks: &[Task]) -> Result<(), KbError> {
    let mut seen = HashSet::new();
    for t in tasks {
        if t.name.trim().is_empty() || t.description.trim().is_empty() {
            return Err(KbError::EmptyTask(t.name.clone()));
        }
        if !seen.insert(t.name.as_str()) {
            return Err(KbError::DuplicateTask(t.name.clone()));
        }
    }
    Ok(())
}

/// Reads a JSONL file of `{name, description}` objects.
pub fn load_tasks(path: &Path) -> Result<Vec<Task>, KbError> {
    let text = std::fs::read_to_string(path).map_err(|source| StorageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: Task = serde_json::from_str(line).map_err(|e| KbError::TaskParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        tasks.push(task);
    }
    check_tasks(&tasks)?;
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCluster {
    pub cluster_id: String,
    pub cluster_description: String,
    pub member_task_names: Vec<String>,
    pub description_vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabel {
    pub cluster_id: String,
    pub cluster_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogRef {
    pub sha256: String,
    pub technique_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub embedding_model: String,
    pub chat_model: String,
    pub clustering_seed: u64,
    pub k: usize,
    pub silhouette: f64,
    pub kmeans: KMeansConfig,
    pub candidate_scores: Vec<crate::clustering::CandidateScore>,
    /// Task name to cluster index.
    pub assignments: BTreeMap<String, usize>,
    /// Clusters whose selection came from the deterministic fallback.
    pub fallback_clusters: Vec<String>,
    /// Instruction fixture ids used for labeling and mapping.
    pub instructions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub schema_version: u32,
    pub catalog_ref: CatalogRef,
    /// Snapshot of the catalog the selections refer to.
    pub catalog: Vec<PromptingTechnique>,
    pub clusters: Vec<TaskCluster>,
    /// Keyed by cluster id.
    pub selections: BTreeMap<String, TechniqueSelection>,
    pub provenance: Provenance,
}

impl KnowledgeBase {
    pub fn load(path: &Path) -> Result<Self, KbError> {
        let text = std::fs::read_to_string(path).map_err(|source| StorageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        write_json_atomic(path, self)?;
        Ok(())
    }

    pub fn catalog(&self) -> Result<Catalog, CatalogError> {
        Catalog::from_techniques(self.catalog.clone())
    }

    pub fn cluster(&self, cluster_id: &str) -> Option<&TaskCluster> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }

    pub fn selection(&self, cluster_id: &str) -> Option<&TechniqueSelection> {
        self.selections.get(cluster_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum KbViolation {
    SchemaVersion(u32),
    Catalog(String),
    CatalogHashMismatch,
    NoClusters,
    KMismatch {
        k: usize,
        clusters: usize,
    },
    EmptyClusterId(usize),
    DuplicateClusterId(String),
    EmptyDescription(String),
    NoMembers(String),
    DimensionMismatch {
        cluster_id: String,
        dim: usize,
        expected: usize,
    },
    MissingSelection(String),
    OrphanSelection(String),
    SelectionKeyMismatch {
        key: String,
        cluster_id: String,
    },
    UnknownTechnique {
        cluster_id: String,
        technique_id: String,
    },
    Constraint {
        cluster_id: String,
        message: String,
    },
}

impl fmt::Display for KbViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SchemaVersion(v) => write!(f, "unsupported schema version {v}"),
            Self::Catalog(m) => write!(f, "embedded catalog invalid: {m}"),
            Self::CatalogHashMismatch => write!(f, "catalog hash does not match embedded catalog"),
            Self::NoClusters => write!(f, "knowledge base has no clusters"),
            Self::KMismatch { k, clusters } => {
                write!(f, "provenance K = {k} but {clusters} clusters present")
            }
            Self::EmptyClusterId(i) => write!(f, "cluster {i} has an empty id"),
            Self::DuplicateClusterId(id) => write!(f, "cluster id {id:?} appears more than once"),
            Self::EmptyDescription(id) => write!(f, "cluster {id:?} has an empty description"),
            Self::NoMembers(id) => write!(f, "cluster {id:?} has no member tasks"),
            Self::DimensionMismatch {
                cluster_id,
                dim,
                expected,
            } => write!(f, "cluster {cluster_id:?} vector has dim {dim}, expected {expected}"),
            Self::MissingSelection(id) => write!(f, "cluster {id:?} has no technique selection"),
            Self::OrphanSelection(id) => write!(f, "selection for unknown cluster {id:?}"),
            Self::SelectionKeyMismatch { key, cluster_id } => {
                write!(f, "selection stored under {key:?} names cluster {cluster_id:?}")
            }
            Self::UnknownTechnique {
                cluster_id,
                technique_id,
            } => write!(f, "cluster {cluster_id:?} selects unknown technique {technique_id:?}"),
            Self::Constraint { cluster_id, message } => write!(f, "cluster {cluster_id:?}: {message}"),
        }
    }
}

/// Standalone structural check of a knowledge base. Empty means valid.
pub fn validate_kb(kb: &KnowledgeBase) -> Vec<KbViolation> {
    let mut out = Vec::new();
    if kb.schema_version != KB_SCHEMA_VERSION {
        out.push(KbViolation::SchemaVersion(kb.schema_version));
    }
    let catalog = match kb.catalog() {
        Ok(c) => {
            if c.content_hash() != kb.catalog_ref.sha256 || c.len() != kb.catalog_ref.technique_count {
                out.push(KbViolation::CatalogHashMismatch);
            }
            Some(c)
        }
        Err(e) => {
            out.push(KbViolation::Catalog(e.to_string()));
            None
        }
    };
    if kb.clusters.is_empty() {
        out.push(KbViolation::NoClusters);
    }
    if kb.provenance.k != kb.clusters.len() {
        out.push(KbViolation::KMismatch {
            k: kb.provenance.k,
            clusters: kb.clusters.len(),
        });
    }
    let expected_dim = kb.clusters.first().map(|c| c.description_vector.dim());
    let mut ids = HashSet::new();
    for (i, c) in kb.clusters.iter().enumerate() {
        if c.cluster_id.trim().is_empty() {
            out.push(KbViolation::EmptyClusterId(i));
        } else if !ids.insert(c.cluster_id.as_str()) {
            out.push(KbViolation::DuplicateClusterId(c.cluster_id.clone()));
        }
        if c.cluster_description.trim().is_empty() {
            out.push(KbViolation::EmptyDescription(c.cluster_id.clone()));
        }
        if c.member_task_names.is_empty() {
            out.push(KbViolation::NoMembers(c.cluster_id.clone()));
        }
        if let Some(expected) = expected_dim {
            if c.description_vector.dim() != expected {
                out.push(KbViolation::DimensionMismatch {
                    cluster_id: c.cluster_id.clone(),
                    dim: c.description_vector.dim(),
                    expected,
                });
            }
        }
    }
    for (key, s) in &kb.selections {
        if !ids.contains(key.as_str()) {
            out.push(KbViolation::OrphanSelection(key.clone()));
        }
        if *key != s.cluster_id {
            out.push(KbViolation::SelectionKeyMismatch {
                key: key.clone(),
                cluster_id: s.cluster_id.clone(),
            });
        }
        let Some(catalog) = &catalog else { continue };
        match validate_selection(s, catalog) {
            Ok(violations) => out.extend(violations.into_iter().map(|v| KbViolation::Constraint {
                cluster_id: s.cluster_id.clone(),
                message: v.to_string(),
            })),
            Err(CatalogError::UnknownTechnique(t)) => out.push(KbViolation::UnknownTechnique {
                cluster_id: s.cluster_id.clone(),
                technique_id: t,
            }),
            Err(e) => out.push(KbViolation::Catalog(e.to_string())),
        }
    }
    for c in &kb.clusters {
        if !kb.selections.contains_key(&c.cluster_id) {
            out.push(KbViolation::MissingSelection(c.cluster_id.clone()));
        }
    }
    out
}

/// Settings shared by the construction stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbOptions {
    pub chat_model: String,
    pub embedding_model: String,
    pub seed: u64,
    /// Extra attempts after a rejected structured reply.
    pub retry_cap: u32,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub kmeans: KMeansConfig,
    pub embed_batch_size: usize,
}

impl Default for KbOptions {
    fn default() -> Self {
        Self {
            chat_model: "gemini-2.5-pro".into(),
            embedding_model: "gemini-embedding-exp-03-07".into(),
            seed: 0,
            retry_cap: 3,
            temperature: 1.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            kmeans: KMeansConfig::default(),
            embed_batch_size: 100,
        }
    }
}

/// Embeds `texts` in batches and L2-normalizes every vector.
pub fn embed_normalized(
    texts: Vec<String>,
    provider: &dyn Provider,
    model: &str,
    batch: usize,
) -> Result<Vec<EmbeddingVector>, KbError> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch.max(1)) {
        let request = EmbeddingRequest::new(model, chunk.to_vec());
        let response = provider.embed(&request)?.check(&request)?;
        for v in response.vectors {
            out.push(l2_normalize(&v)?);
        }
    }
    if let Some(first) = out.first() {
        if let Some(bad) = out.iter().find(|v| v.dim() != first.dim()) {
            return Err(ProviderError::Malformed(format!(
                "embedding dimension changed across batches: {} vs {}",
                first.dim(),
                bad.dim()
            ))
            .into());
        }
    }
    Ok(out)
}

pub fn vectorize_tasks(
    tasks: &[Task],
    provider: &dyn Provider,
    opts: &KbOptions,
) -> Result<Vec<EmbeddingVector>, KbError> {
    let texts = tasks.iter().map(Task::embedding_text).collect();
    embed_normalized(texts, provider, &opts.embedding_model, opts.embed_batch_size)
}

/// Silhouette-selected clustering over K = 3 ..= N-1.
pub fn derive_clusters(
    vectors: &[EmbeddingVector],
    seed: u64,
    kmeans: KMeansConfig,
) -> Result<ClusteringResult, KbError> {
    if vectors.len() < MIN_TASKS {
        return Err(KbError::TooFewTasks(vectors.len()));
    }
    Ok(select_k_with_config(
        vectors,
        MIN_CLUSTERS,
        vectors.len() - 1,
        seed,
        kmeans,
    )?)
}

pub fn is_valid_slug(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= MAX_SLUG_LEN
        && s.split(['_', '-'])
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()))
}

fn parse_label(text: &str) -> Result<ClusterLabel, String> {
    let obj = extract_json_object(text).ok_or("reply did not contain a JSON object")?;
    let field = |k: &str| obj.get(k).and_then(|v| v.as_str()).map(str::trim);
    let id = field("cluster_id")
        .ok_or("missing string field cluster_id")?
        .to_ascii_lowercase();
    let description = field("cluster_description").ok_or("missing string field cluster_description")?;
    if !is_valid_slug(&id) {
        return Err(format!(
            "cluster_id {id:?} must be lowercase letters and digits joined by '_' or '-', at most {MAX_SLUG_LEN} characters"
        ));
    }
    if description.is_empty() {
        return Err("cluster_description is empty".into());
    }
    Ok(ClusterLabel {
        cluster_id: id,
        cluster_description: description.to_string(),
    })
}

fn retry_suffix(reason: &str) -> String {
    format!("\n\nYour previous reply was rejected: {reason}\nReply again following the instructions exactly.")
}

/// Asks the chat model to name and describe one cluster.
pub fn label_cluster(
    cluster_index: usize,
    members: &[Task],
    provider: &dyn Provider,
    opts: &KbOptions,
) -> Result<ClusterLabel, KbError> {
    let listing = members
        .iter()
        .map(|t| format!("- name: {}\n  description: {}", t.name, t.description))
        .collect::<Vec<_>>()
        .join("\n");
    let base = prompts::LABEL_CLUSTER.render(&[("tasks", &listing)]);
    let attempts = opts.retry_cap + 1;
    let mut reason = String::new();
    for attempt in 0..attempts {
        let prompt = if attempt == 0 {
            base.clone()
        } else {
            format!("{base}{}", retry_suffix(&reason))
        };
        let request = ChatRequest::new(&opts.chat_model, prompt, opts.temperature)
            .with_tag(format!("{}:{cluster_index}:{attempt}", tags::LABEL_CLUSTER))
            .with_max_output_tokens(opts.max_output_tokens);
        let reply = provider.complete(&request)?;
        match parse_label(&reply.text) {
            Ok(label) => return Ok(label),
            Err(why) => {
                log::debug!("cluster {cluster_index} label attempt {attempt} rejected: {why}");
                reason = why;
            }
        }
    }
    Err(KbError::LabelRejected {
        cluster: cluster_index,
        attempts,
        reason,
    })
}

/// Makes cluster ids unique by suffixing `-2`, `-3`, ... in cluster order.
pub fn dedupe_cluster_ids(labels: &mut [ClusterLabel]) {
    let mut seen: HashSet<String> = HashSet::new();
    for label in labels.iter_mut() {
        if seen.contains(&label.cluster_id) {
            let mut n = 2;
            while seen.contains(&format!("{}-{n}", label.cluster_id)) {
                n += 1;
            }
            label.cluster_id = format!("{}-{n}", label.cluster_id);
        }
        seen.insert(label.cluster_id.clone());
    }
}

pub fn embed_clusters(
    labels: &[ClusterLabel],
    members: &[Vec<String>],
    provider: &dyn Provider,
    opts: &KbOptions,
) -> Result<Vec<TaskCluster>, KbError> {
    let texts = labels.iter().map(|l| l.cluster_description.clone()).collect();
    let vectors = embed_normalized(texts, provider, &opts.embedding_model, opts.embed_batch_size)?;
    Ok(labels
        .iter()
        .zip(members)
        .zip(vectors)
        .map(|((l, m), v)| TaskCluster {
            cluster_id: l.cluster_id.clone(),
            cluster_description: l.cluster_description.clone(),
            member_task_names: m.clone(),
            description_vector: v,
        })
        .collect())
}

/// Catalog listing in the line format the mapping instruction uses.
pub fn catalog_listing(catalog: &Catalog) -> String {
    catalog
        .techniques()
        .iter()
        .map(|t| {
            format!(
                "- id: {} | name: {} | category: {} | description: {} | application cases: {}",
                t.id, t.name, t.category, t.description, t.application_cases
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn parse_selection(text: &str) -> Result<Vec<String>, String> {
    let obj = extract_json_object(text).ok_or("reply did not contain a JSON object")?;
    let ids = obj
        .get("technique_ids")
        .and_then(|v| v.as_array())
        .ok_or("missing array field technique_ids")?;
    ids.iter()
        .map(|v| {
            v.as_str()
                .map(|s| s.trim().to_string())
                .ok_or_else(|| "technique_ids must contain only strings".to_string())
        })
        .collect()
}

/// Outcome of technique mapping for one cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingOutcome {
    pub selection: TechniqueSelection,
    pub attempts: u32,
}

/// Asks the chat model for a category-valid technique selection.
///
/// Rejected replies are retried with the violations appended. Once the retry
/// cap is spent the catalog's fallback selection is used and flagged, unless
/// the last reply could not be parsed at all.
pub fn map_techniques(
    cluster: &TaskCluster,
    catalog: &Catalog,
    provider: &dyn Provider,
    opts: &KbOptions,
) -> Result<MappingOutcome, KbError> {
    let listing = catalog_listing(catalog);
    let base = prompts::MAP_TECHNIQUES.render(&[
        ("cluster_id", &cluster.cluster_id),
        ("cluster_description", &cluster.cluster_description),
        ("catalog", &listing),
        ("role_id", &catalog.role_technique().id),
    ]);
    let attempts = opts.retry_cap + 1;
    let mut feedback = String::new();
    let mut parse_failure = None;
    for attempt in 0..attempts {
        let prompt = if attempt == 0 {
            base.clone()
        } else {
            format!("{base}{feedback}")
        };
        let request = ChatRequest::new(&opts.chat_model, prompt, opts.temperature)
            .with_tag(format!("{}:{}:{attempt}", tags::MAP_TECHNIQUES, cluster.cluster_id))
            .with_max_output_tokens(opts.max_output_tokens);
        let reply = provider.complete(&request)?;
        let problems: Vec<String> = match parse_selection(&reply.text) {
            Err(why) => {
                parse_failure = Some(why.clone());
                vec![why]
            }
            Ok(ids) => {
                parse_failure = None;
                let selection = TechniqueSelection {
                    cluster_id: cluster.cluster_id.clone(),
                    technique_ids: ids,
                    fallback: false,
                };
                let unknown: Vec<String> = selection
                    .technique_ids
                    .iter()
                    .filter(|id| catalog.get(id).is_none())
                    .map(|id| format!("unknown technique id {id:?}"))
                    .collect();
                if !unknown.is_empty() {
                    unknown
                } else {
                    let violations = validate_selection(&selection, catalog)?;
                    if violations.is_empty() {
                        return Ok(MappingOutcome {
                            selection,
                            attempts: attempt + 1,
                        });
                    }
                    violations.iter().map(ToString::to_string).collect()
                }
            }
        };
        feedback = format!(
            "\n\nYour previous reply was rejected because it violated these rules:\n{}\nReply again with a corrected JSON object.",
            problems.iter().map(|p| format!("- {p}")).collect::<Vec<_>>().join("\n")
        );
        log::debug!(
            "cluster {} mapping attempt {attempt} rejected: {problems:?}",
            cluster.cluster_id
        );
    }
    if let Some(reason) = parse_failure {
        return Err(KbError::MappingUnparseable {
            cluster_id: cluster.cluster_id.clone(),
            attempts,
            reason,
        });
    }
    log::warn!(
        "cluster {}: no valid selection after {attempts} attempts, using fallback",
        cluster.cluster_id
    );
    Ok(MappingOutcome {
        selection: TechniqueSelection {
            cluster_id: cluster.cluster_id.clone(),
            technique_ids: catalog.fallback_selection(),
            fallback: true,
        },
        attempts,
    })
}

/// Intermediate state persisted between stages so an aborted build can resume.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Checkpoint {
    fingerprint: String,
    #[serde(default)]
    task_vectors: Option<Vec<EmbeddingVector>>,
    #[serde(default)]
    clustering: Option<ClusteringResult>,
    #[serde(default)]
    labels: Vec<Option<ClusterLabel>>,
    #[serde(default)]
    clusters: Option<Vec<TaskCluster>>,
    #[serde(default)]
    selections: Vec<Option<TechniqueSelection>>,
}

fn fingerprint(tasks: &[Task], catalog: &Catalog, opts: &KbOptions) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(tasks).expect("tasks serialize"));
    h.update(catalog.content_hash());
    h.update(serde_json::to_vec(opts).expect("options serialize"));
    h.update(prompts::LABEL_CLUSTER.id());
    h.update(prompts::MAP_TECHNIQUES.id());
    hex::encode(h.finalize())
}

fn load_checkpoint(path: Option<&Path>, fp: &str) -> Checkpoint {
    let fresh = Checkpoint {
        fingerprint: fp.to_string(),
        ..Default::default()
    };
    let Some(path) = path.filter(|p| p.exists()) else {
        return fresh;
    };
    match std::fs::read_to_string(path)
        .ok()
        .and_then(|t| serde_json::from_str::<Checkpoint>(&t).ok())
    {
        Some(cp) if cp.fingerprint == fp => {
            log::info!("resuming knowledge-base build from {}", path.display());
            cp
        }
        _ => {
            log::warn!("ignoring stale or unreadable checkpoint {}", path.display());
            fresh
        }
    }
}

fn save_checkpoint(path: Option<&Path>, cp: &Checkpoint) -> Result<(), KbError> {
    if let Some(path) = path {
        write_json_atomic(path, cp)?;
    }
    Ok(())
}

/// Runs the full construction pipeline.
///
/// With `checkpoint` set, progress is saved after every stage and an existing
/// checkpoint for the same inputs is resumed; it is removed on success.
pub fn build_kb(
    tasks: &[Task],
    catalog: &Catalog,
    provider: &dyn Provider,
    opts: &KbOptions,
    checkpoint: Option<&Path>,
) -> Result<KnowledgeBase, KbError> {
    check_tasks(tasks)?;
    if tasks.len() < MIN_TASKS {
        return Err(KbError::TooFewTasks(tasks.len()));
    }
    let fp = fingerprint(tasks, catalog, opts);
    let mut cp = load_checkpoint(checkpoint, &fp);

    let vectors = match &cp.task_vectors {
        Some(v) => v.clone(),
        None => {
            let v = vectorize_tasks(tasks, provider, opts)?;
            cp.task_vectors = Some(v.clone());
            save_checkpoint(checkpoint, &cp)?;
            v
        }
    };

    let clustering = match &cp.clustering {
        Some(c) => c.clone(),
        None => {
            let c = derive_clusters(&vectors, opts.seed, opts.kmeans)?;
            cp.clustering = Some(c.clone());
            cp.labels = vec![None; c.k];
            cp.selections = vec![None; c.k];
            save_checkpoint(checkpoint, &cp)?;
            c
        }
    };
    let member_indices = clustering.members();
    let member_names: Vec<Vec<String>> = member_indices
        .iter()
        .map(|m| m.iter().map(|&i| tasks[i].name.clone()).collect())
        .collect();

    let clusters = match &cp.clusters {
        Some(c) => c.clone(),
        None => {
            let pending: Vec<usize> = (0..clustering.k).filter(|&i| cp.labels[i].is_none()).collect();
            let results: Vec<(usize, Result<ClusterLabel, KbError>)> = pending
                .par_iter()
                .map(|&i| {
                    let members: Vec<Task> = member_indices[i].iter().map(|&t| tasks[t].clone()).collect();
                    (i, label_cluster(i, &members, provider, opts))
                })
                .collect();
            let mut first_err = None;
            for (i, r) in results {
                match r {
                    Ok(label) => cp.labels[i] = Some(label),
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            save_checkpoint(checkpoint, &cp)?;
            if let Some(e) = first_err {
                return Err(e);
            }
            let mut labels: Vec<ClusterLabel> = cp.labels.iter().map(|l| l.clone().expect("all labeled")).collect();
            dedupe_cluster_ids(&mut labels);
            let clusters = embed_clusters(&labels, &member_names, provider, opts)?;
            cp.clusters = Some(clusters.clone());
            save_checkpoint(checkpoint, &cp)?;
            clusters
        }
    };

    let pending: Vec<usize> = (0..clusters.len()).filter(|&i| cp.selections[i].is_none()).collect();
    let results: Vec<(usize, Result<MappingOutcome, KbError>)> = pending
        .par_iter()
        .map(|&i| (i, map_techniques(&clusters[i], catalog, provider, opts)))
        .collect();
    let mut first_err = None;
    for (i, r) in results {
        match r {
            Ok(outcome) => cp.selections[i] = Some(outcome.selection),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    save_checkpoint(checkpoint, &cp)?;
    if let Some(e) = first_err {
        return Err(e);
    }
    let selections: BTreeMap<String, TechniqueSelection> = cp
        .selections
        .iter()
        .map(|s| {
            let s = s.clone().expect("all mapped");
            (s.cluster_id.clone(), s)
        })
        .collect();

    let assignments = tasks
        .iter()
        .zip(&clustering.assignments)
        .map(|(t, &c)| (t.name.clone(), c))
        .collect();
    let kb = KnowledgeBase {
        schema_version: KB_SCHEMA_VERSION,
        catalog_ref: CatalogRef {
            sha256: catalog.content_hash(),
            technique_count: catalog.len(),
        },
        catalog: catalog.techniques().to_vec(),
        provenance: Provenance {
            embedding_model: opts.embedding_model.clone(),
            chat_model: opts.chat_model.clone(),
            clustering_seed: opts.seed,
            k: clustering.k,
            silhouette: clustering.silhouette,
            kmeans: opts.kmeans,
            candidate_scores: clustering.candidate_scores.clone(),
            assignments,
            fallback_clusters: selections
                .values()
                .filter(|s| s.fallback)
                .map(|s| s.cluster_id.clone())
                .collect(),
            instructions: vec![prompts::LABEL_CLUSTER.id(), prompts::MAP_TECHNIQUES.id()],
        },
        clusters,
        selections,
    };
    let violations = validate_kb(&kb);
    if !violations.is_empty() {
        return Err(KbError::Invalid(violations));
    }
    if let Some(path) = checkpoint {
        let _ = std::fs::remove_file(path);
    }
    Ok(kb)
}
