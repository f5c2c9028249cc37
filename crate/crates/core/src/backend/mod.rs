//! Wire messages and the two backend capabilities the engine needs: filling
//! one mask, and embedding tokens.
//!
//! Backends are reached either in-process (the deterministic mocks) or over
//! HTTP ([`HttpBackend`]); [`BackendServer`] exposes any in-process backend
//! over the same protocol.

mod http;
mod mock;
mod server;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use crate::error::BackendError;
pub use http::{HttpBackend, RetryPolicy, BACKEND_URL_ENV};
pub use mock::{
    fnv1a, mock_infill, parse_prompt, trigram_vector, Lexicon, MockEmbedder, MockInfill,
    MockInfillSpec, ParsedPrompt, JUNK_SUFFIX, MOCK_EMBED_DIM,
};
pub use server::BackendServer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    #[serde(default)]
    pub decode_params: BTreeMap<String, f64>,
}

impl GenerationRequest {
    /// Greedy decoding (`temperature = 0`) with seed 0.
    pub fn greedy(prompt: impl Into<String>, max_new_tokens: u32) -> Self {
        let mut decode_params = BTreeMap::new();
        decode_params.insert("temperature".to_string(), 0.0);
        decode_params.insert("seed".to_string(), 0.0);
        GenerationRequest {
            prompt: prompt.into(),
            max_new_tokens,
            decode_params,
        }
    }

    pub fn validate(&self, mask_token: &str) -> Result<(), BackendError> {
        if self.max_new_tokens == 0 {
            return Err(BackendError::Protocol("max_new_tokens must be >= 1".into()));
        }
        let masks = self.prompt.matches(mask_token).count();
        if masks != 1 {
            return Err(BackendError::Protocol(format!(
                "prompt must contain exactly one mask token {mask_token:?}, found {masks}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub infill: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub texts: Vec<String>,
}

impl EmbeddingRequest {
    pub fn new<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        EmbeddingRequest {
            texts: texts.into_iter().map(Into::into).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.texts.is_empty() {
            return Err(BackendError::Protocol("texts must be non-empty".into()));
        }
        Ok(())
    }
}

/// Contextual token vectors for one input text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddings {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub embeddings: Vec<TokenEmbeddings>,
}

impl EmbeddingResponse {
    /// Checks shape against the request that produced it.
    pub fn validate(&self, expected_texts: usize) -> Result<(), BackendError> {
        if self.embeddings.len() != expected_texts {
            return Err(BackendError::Protocol(format!(
                "expected {expected_texts} embedding lists, got {}",
                self.embeddings.len()
            )));
        }
        let mut dim = None;
        for e in &self.embeddings {
            if e.tokens.len() != e.vectors.len() {
                return Err(BackendError::Protocol(format!(
                    "{} tokens but {} vectors",
                    e.tokens.len(),
                    e.vectors.len()
                )));
            }
            for v in &e.vectors {
                if v.is_empty() || *dim.get_or_insert(v.len()) != v.len() {
                    return Err(BackendError::Protocol("inconsistent vector dimension".into()));
                }
            }
        }
        Ok(())
    }
}

/// A model that fills exactly one mask.
pub trait InfillBackend: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError>;

    fn name(&self) -> String {
        "infill".to_string()
    }
}

/// A model that returns per-token contextual vectors.
pub trait Embedder: Send + Sync {
    fn embed(&self, req: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError>;

    fn name(&self) -> String {
        "embed".to_string()
    }
}

impl<T: InfillBackend + ?Sized> InfillBackend for Arc<T> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(req)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl<T: InfillBackend + ?Sized> InfillBackend for &T {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(req)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn embed(&self, req: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError> {
        (**self).embed(req)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn embed(&self, req: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError> {
        (**self).embed(req)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}
