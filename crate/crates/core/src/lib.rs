//! Sequential autoregressive prompting for mask-infill language models.
//!
//! The crate turns a model that can only fill one short masked span into a
//! long-form generator ([`sap`]), and builds the unsupervised translation
//! bootstrap on top of it ([`bootstrap`], [`ensemble`]). Backends are
//! abstract ([`backend`]); deterministic mocks make every pipeline testable
//! without a neural model.
//!
//! ```
//! use sap_core::backend::MockInfill;
//! use sap_core::toy::ToyWorld;
//! use sap_core::{sap_generate, SapConfig, TaskSpec};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let w = ToyWorld::new();
//! let backend = MockInfill::new(w.mock_spec(2))?;
//! let task = TaskSpec::translation(&w.spanish, &w.english, vec![])?;
//! let out = sap_generate(&task, "el perro azul", &backend, &SapConfig::default())?;
//! assert_eq!(out.text, "the dog blue");
//! assert_eq!(out.state.calls, 4);
//! # Ok(())
//! # }
//! ```

pub mod backend;
pub mod bootstrap;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod sap;
pub mod scoring;
pub mod toy;

pub use error::{BackendError, Error, Result};
pub use prompt::{reverse_example, Example, LangTag, PromptTemplate, TaskKind, TaskSpec};
pub use sap::{sap_generate, strip_repetition, ConcatMode, FinishReason, SapConfig, SapOutput};
pub use backend::{
    Embedder, EmbeddingRequest, EmbeddingResponse, GenerationRequest, GenerationResponse,
    InfillBackend,
};
pub use bootstrap::{
    build_fewshot_task, run_bootstrap, BootstrapCheckpoint, BootstrapConfig, CorpusSet,
    ScoredExample, Strategy,
};
pub use ensemble::{build_ensemble, translate_ensemble, EnsembleOutcome, Grouping, PromptEnsemble};
pub use metrics::{corpus_bleu, qa_em_f1, rouge_l, BleuConfig, MetricReport};
pub use pipeline::{Manifest, RunConfig};
pub use scoring::{pivot_score, similarity, Scorer, SimilarityScore};
