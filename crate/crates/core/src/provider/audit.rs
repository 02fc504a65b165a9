use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::Serialize;

use super::{ChatRequest, ChatResponse, EmbeddingRequest, EmbeddingResponse, Provider, ProviderError};

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum AuditEntry<'a> {
    Chat {
        request: &'a ChatRequest,
        #[serde(skip_serializing_if = "Option::is_none")]
        text: Option<&'a str>,
        #[serde(skip_serializing_if = "Option::is_none")]
        truncated: Option<bool>,
        #[serde(skip_serializing_if = "Option::is_none")]
        latency_ms: Option<u128>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Embed {
        model_name: &'a str,
        texts: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

/// Appends every request and its outcome to a JSONL audit log.
pub struct AuditedProvider<P> {
    inner: P,
    log: Mutex<BufWriter<File>>,
}

impl<P: Provider> AuditedProvider<P> {
    pub fn new(inner: P, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            log: Mutex::new(BufWriter::new(file)),
        })
    }

    fn write(&self, entry: &AuditEntry<'_>) {
        let mut log = self.log.lock().expect("audit log poisoned");
        let line = serde_json::to_string(entry).expect("audit entry serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log::warn!("audit log write failed: {e}");
        }
    }
}

impl<P: Provider> Provider for AuditedProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let result = self.inner.complete(request);
        let entry = match &result {
            Ok(r) => AuditEntry::Chat {
                request,
                text: Some(&r.text),
                truncated: Some(r.truncated),
                latency_ms: Some(r.latency.as_millis()),
                error: None,
            },
            Err(e) => AuditEntry::Chat {
                request,
                text: None,
                truncated: None,
                latency_ms: None,
                error: Some(e.to_string()),
            },
        };
        self.write(&entry);
        result
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, ProviderError> {
        let result = self.inner.embed(request);
        let (dim, error) = match &result {
            Ok(r) => (r.vectors.first().map(|v| v.dim()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.write(&AuditEntry::Embed {
            model_name: &request.model_name,
            texts: request.texts.len(),
            dim,
            error,
        });
        result
    }
}
