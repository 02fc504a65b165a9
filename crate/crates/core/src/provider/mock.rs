use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{tags, ChatRequest, ChatResponse, EmbeddingRequest, EmbeddingResponse, Provider, ProviderError};
use crate::vectors::EmbeddingVector;

pub const DEFAULT_MOCK_DIM: usize = 16;

/// Programmatic chat hook; `None` defers to rules and the built-in fallback.
pub type MockResponder = Arc<dyn Fn(&ChatRequest) -> Option<Result<String, ProviderError>> + Send + Sync>;

/// Pattern-matched canned reply.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatRule {
    /// Substring the prompt must contain; empty matches every prompt.
    #[serde(default)]
    pub pattern: String,
    /// Prefix the request tag must start with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub response: String,
    /// Prepend this many filler tokens, e.g. to trip the output cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emit_tokens: Option<usize>,
}

impl ChatRule {
    pub fn new(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            response: response.into(),
            ..Default::default()
        }
    }

    fn matches(&self, req: &ChatRequest) -> bool {
        req.prompt_text.contains(&self.pattern)
            && self.tag.as_deref().is_none_or(|t| req.request_tag.starts_with(t))
            && self.temperature.is_none_or(|t| (t - req.temperature).abs() < 1e-9)
    }

    fn render(&self) -> String {
        match self.emit_tokens {
            Some(n) => {
                let mut s = "step ".repeat(n);
                s.push_str(&self.response);
                s
            }
            None => self.response.clone(),
        }
    }
}

/// On-disk mock configuration: staged embeddings and chat rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub chat_rules: Vec<ChatRule>,
}

impl MockFixture {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidRequest(format!("mock fixture {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::InvalidRequest(format!("mock fixture {}: {e}", path.display())))
    }
}

/// Deterministic offline provider.
///
/// Chat replies come from, in order: the responder hook, the first matching
/// rule, then a tag-aware fallback that imitates a cooperative model. Embeddings
/// come from the staged map, else a unit vector derived from a hash of the text.
#[derive(Clone)]
pub struct MockProvider {
    seed: u64,
    dim: usize,
    rules: Vec<ChatRule>,
    responder: Option<MockResponder>,
    embeddings: HashMap<String, EmbeddingVector>,
}

impl std::fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockProvider")
            .field("seed", &self.seed)
            .field("dim", &self.dim)
            .field("rules", &self.rules.len())
            .field("embeddings", &self.embeddings.len())
            .finish()
    }
}

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: DEFAULT_MOCK_DIM,
            rules: Vec::new(),
            responder: None,
            embeddings: HashMap::new(),
        }
    }

    pub fn from_fixture(fixture: MockFixture, seed: u64) -> Result<Self, ProviderError> {
        let mut mock = Self::new(seed);
        let staged_dim = fixture.embeddings.values().next().map(Vec::len);
        mock.dim = fixture.dim.or(staged_dim).unwrap_or(DEFAULT_MOCK_DIM);
        for (text, values) in fixture.embeddings {
            if values.len() != mock.dim {
                return Err(ProviderError::InvalidRequest(format!(
                    "staged embedding for {text:?} has dim {}, expected {}",
                    values.len(),
                    mock.dim
                )));
            }
            let v = EmbeddingVector::new(values)
                .map_err(|e| ProviderError::InvalidRequest(format!("staged embedding for {text:?}: {e}")))?;
            mock.embeddings.insert(text, v);
        }
        mock.rules = fixture.chat_rules;
        Ok(mock)
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim.max(1);
        self
    }

    pub fn with_rule(mut self, rule: ChatRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_responder(mut self, responder: MockResponder) -> Self {
        self.responder = Some(responder);
        self
    }

    pub fn with_embedding(mut self, text: impl Into<String>, vector: EmbeddingVector) -> Self {
        self.dim = vector.dim();
        self.embeddings.insert(text.into(), vector);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn hash(&self, parts: &[&[u8]]) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    fn request_hash(&self, req: &ChatRequest) -> u64 {
        let seed = req.seed.map(u64::to_le_bytes).unwrap_or_default();
        self.hash(&[
            req.model_name.as_bytes(),
            req.prompt_text.as_bytes(),
            &req.temperature.to_bits().to_le_bytes(),
            req.request_tag.as_bytes(),
            &seed,
        ])
    }

    fn hash_vector(&self, text: &str) -> EmbeddingVector {
        let mut rng = ChaCha8Rng::seed_from_u64(self.hash(&[b"embed", text.as_bytes()]));
        loop {
            let values: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                let unit = values.into_iter().map(|x| x / norm).collect();
                return EmbeddingVector::new(unit).expect("finite");
            }
        }
    }

    fn fallback(&self, req: &ChatRequest) -> String {
        let h = self.request_hash(req);
        let tag = req.request_tag.as_str();
        if tag.starts_with(tags::LABEL_CLUSTER) {
            format!(
                "{{\"cluster_id\": \"cluster_{:06x}\", \"cluster_description\": \"Tasks that share a common reasoning structure and call for careful, stepwise problem solving (variant {:06x}).\"}}",
                h & 0xff_ffff,
                (h >> 24) & 0xff_ffff
            )
        } else if tag.starts_with(tags::MAP_TECHNIQUES) {
            fallback_selection(&req.prompt_text, h)
        } else if tag.starts_with(tags::GENERATE_TEMPLATE) {
            format!(
                "<role>\nYou are a meticulous domain expert (variant {:06x}).\n</role>\n\n<task>\nSolve the following problem.\n\n{{$INPUT}}\n\nWork through it step by step and check each intermediate result.\n</task>\n\n<final_answer_format>\n{{$FINAL_ANSWER_FORMAT}}\n</final_answer_format>\n",
                h & 0xff_ffff
            )
        } else {
            const CHOICES: [&str; 10] = ["(a)", "(b)", "(c)", "(d)", "yes", "no", "0", "1", "2", "3"];
            let choice = CHOICES[(h % CHOICES.len() as u64) as usize];
            if (h >> 32) % 10 == 0 {
                format!("Working through the problem.\nANSWER: {choice}")
            } else {
                format!("Working through the problem.\nThe answer is: {choice}")
            }
        }
    }
}

/// Picks a category-valid selection from catalog lines of the form
/// `- id: <id> | ... | category: <Category> | ...`.
fn fallback_selection(prompt: &str, h: u64) -> String {
    let mut by_cat: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for line in prompt.lines() {
        let Some(rest) = line.trim().strip_prefix("- id: ") else {
            continue;
        };
        let mut fields = rest.split(" | ");
        let id = fields.next().unwrap_or("").trim();
        let cat = fields
            .find_map(|f| f.trim().strip_prefix("category: "))
            .unwrap_or("")
            .trim();
        by_cat.entry(cat).or_default().push(id);
    }
    let pick = |cat: &str, salt: u32| -> Option<&str> {
        let ids = by_cat.get(cat)?;
        Some(ids[((h >> salt) % ids.len() as u64) as usize])
    };
    let mut ids: Vec<&str> = Vec::new();
    ids.extend(pick("RoleAssignment", 0));
    ids.extend(pick("EmotionalStimulus", 8));
    ids.extend(pick("Reasoning", 16));
    if (h >> 24) % 2 == 0 {
        ids.extend(pick("Others", 32));
    }
    serde_json::json!({ "technique_ids": ids }).to_string()
}

impl Provider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let text = match self.responder.as_ref().and_then(|r| r(request)) {
            Some(reply) => reply?,
            None => match self.rules.iter().find(|r| r.matches(request)) {
                Some(rule) => rule.render(),
                None => self.fallback(request),
            },
        };
        let cap = request.max_output_tokens as usize;
        let token_count = text.split_whitespace().count();
        let (text, truncated) = if token_count > cap {
            (text.split_whitespace().take(cap).collect::<Vec<_>>().join(" "), true)
        } else {
            (text, false)
        };
        Ok(ChatResponse {
            text,
            truncated,
            latency: Duration::ZERO,
        })
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, ProviderError> {
        let vectors = request
            .texts
            .iter()
            .map(|t| self.embeddings.get(t).cloned().unwrap_or_else(|| self.hash_vector(t)))
            .collect();
        EmbeddingResponse { vectors }.check(request)
    }
}
