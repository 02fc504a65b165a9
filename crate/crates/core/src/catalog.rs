//! Prompting-technique catalog and the category rules a per-cluster selection must obey.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const DEFAULT_CATALOG: &str = include_str!("../fixtures/catalog.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TechniqueCategory {
    RoleAssignment,
    EmotionalStimulus,
    Reasoning,
    Others,
}

impl TechniqueCategory {
    pub const ALL: [TechniqueCategory; 4] = [
        TechniqueCategory::RoleAssignment,
        TechniqueCategory::EmotionalStimulus,
        TechniqueCategory::Reasoning,
        TechniqueCategory::Others,
    ];
}

impl fmt::Display for TechniqueCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::RoleAssignment => "RoleAssignment",
            Self::EmotionalStimulus => "EmotionalStimulus",
            Self::Reasoning => "Reasoning",
            Self::Others => "Others",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptingTechnique {
    pub id: String,
    pub name: String,
    pub category: TechniqueCategory,
    pub description: String,
    #[serde(default)]
    pub application_cases: String,
    /// Marks application-case text that was written for this catalog rather than sourced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub application_cases_origin: Option<String>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("catalog I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog is empty")]
    Empty,
    #[error("duplicate technique id {0:?}")]
    DuplicateId(String),
    #[error("technique {0:?} has an empty description")]
    EmptyDescription(String),
    #[error("technique id {0:?} is empty")]
    EmptyId(String),
    #[error("catalog needs exactly one RoleAssignment technique, found {0}")]
    RoleAssignmentCount(usize),
    #[error("catalog has no {0} technique")]
    MissingCategory(TechniqueCategory),
    #[error("unknown technique id {0:?}")]
    UnknownTechnique(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    techniques: Vec<PromptingTechnique>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn from_techniques(techniques: Vec<PromptingTechnique>) -> Result<Self, CatalogError> {
        if techniques.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut index = HashMap::new();
        for (i, t) in techniques.iter().enumerate() {
            if t.id.trim().is_empty() {
                return Err(CatalogError::EmptyId(t.name.clone()));
            }
            if t.description.trim().is_empty() {
                return Err(CatalogError::EmptyDescription(t.id.clone()));
            }
            if index.insert(t.id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateId(t.id.clone()));
            }
        }
        let roles = techniques
            .iter()
            .filter(|t| t.category == TechniqueCategory::RoleAssignment)
            .count();
        if roles != 1 {
            return Err(CatalogError::RoleAssignmentCount(roles));
        }
        for category in [TechniqueCategory::EmotionalStimulus, TechniqueCategory::Reasoning] {
            if !techniques.iter().any(|t| t.category == category) {
                return Err(CatalogError::MissingCategory(category));
            }
        }
        Ok(Self { techniques, index })
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let techniques: Vec<PromptingTechnique> = serde_json::from_str(text)?;
        Self::from_techniques(techniques)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The shipped fifteen-technique catalog.
    pub fn default_catalog() -> Self {
        Self::from_json(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }

    pub fn techniques(&self) -> &[PromptingTechnique] {
        &self.techniques
    }

    pub fn get(&self, id: &str) -> Option<&PromptingTechnique> {
        self.index.get(id).map(|&i| &self.techniques[i])
    }

    pub fn len(&self) -> usize {
        self.techniques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.techniques.is_empty()
    }

    pub fn by_category(&self, category: TechniqueCategory) -> impl Iterator<Item = &PromptingTechnique> {
        self.techniques.iter().filter(move |t| t.category == category)
    }

    /// The sole RoleAssignment technique.
    pub fn role_technique(&self) -> &PromptingTechnique {
        self.by_category(TechniqueCategory::RoleAssignment)
            .next()
            .expect("validated at construction")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.techniques).expect("catalog serializes")
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn content_hash(&self) -> String {
        let compact = serde_json::to_vec(&self.techniques).expect("catalog serializes");
        hex::encode(Sha256::digest(&compact))
    }

    /// Role technique, lexicographically-first EmotionalStimulus and Reasoning ids, no Others.
    pub fn fallback_selection(&self) -> Vec<String> {
        let first = |c| {
            self.by_category(c)
                .map(|t| t.id.clone())
                .min()
                .expect("validated at construction")
        };
        vec![
            self.role_technique().id.clone(),
            first(TechniqueCategory::EmotionalStimulus),
            first(TechniqueCategory::Reasoning),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueSelection {
    pub cluster_id: String,
    pub technique_ids: Vec<String>,
    /// Set when the deterministic fallback replaced the model's choice.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionViolation {
    MissingRoleAssignment,
    EmotionalStimulusCount(usize),
    ReasoningCount(usize),
    TooManyOthers(usize),
    SizeOutOfRange(usize),
    DuplicateTechnique(String),
}

impl fmt::Display for SelectionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingRoleAssignment => {
                write!(f, "the RoleAssignment technique must always be included")
            }
            Self::EmotionalStimulusCount(n) => {
                write!(f, "exactly one EmotionalStimulus technique is required, found {n}")
            }
            Self::ReasoningCount(n) => {
                write!(f, "exactly one Reasoning technique is required, found {n}")
            }
            Self::TooManyOthers(n) => {
                write!(f, "at most one Others technique is allowed, found {n}")
            }
            Self::SizeOutOfRange(n) => {
                write!(f, "a selection must contain 3 or 4 techniques, found {n}")
            }
            Self::DuplicateTechnique(id) => write!(f, "technique {id:?} is listed more than once"),
        }
    }
}

/// Checks every category rule; returns all violations found.
///
/// Fails outright only when an id does not resolve in the catalog.
pub fn validate_selection(
    selection: &TechniqueSelection,
    catalog: &Catalog,
) -> Result<Vec<SelectionViolation>, CatalogError> {
    let mut counts: HashMap<TechniqueCategory, usize> = HashMap::new();
    let mut seen = HashSet::new();
    let mut violations = Vec::new();
    for id in &selection.technique_ids {
        let t = catalog
            .get(id)
            .ok_or_else(|| CatalogError::UnknownTechnique(id.clone()))?;
        if !seen.insert(id.as_str()) {
            violations.push(SelectionViolation::DuplicateTechnique(id.clone()));
            continue;
        }
        *counts.entry(t.category).or_default() += 1;
    }
    let count = |c| counts.get(&c).copied().unwrap_or(0);
    if !seen.contains(catalog.role_technique().id.as_str()) {
        violations.push(SelectionViolation::MissingRoleAssignment);
    }
    if count(TechniqueCategory::EmotionalStimulus) != 1 {
        violations.push(SelectionViolation::EmotionalStimulusCount(count(
            TechniqueCategory::EmotionalStimulus,
        )));
    }
    if count(TechniqueCategory::Reasoning) != 1 {
        violations.push(SelectionViolation::ReasoningCount(count(TechniqueCategory::Reasoning)));
    }
    if count(TechniqueCategory::Others) > 1 {
        violations.push(SelectionViolation::TooManyOthers(count(TechniqueCategory::Others)));
    }
    let size = selection.technique_ids.len();
    if !(3..=4).contains(&size) {
        violations.push(SelectionViolation::SizeOutOfRange(size));
    }
    Ok(violations)
}
