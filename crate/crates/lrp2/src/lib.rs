//! Cross-lingual representation projection for factual knowledge probing.
//!
//! This crate measures how much factual knowledge a multilingual
//! transformer can move from a high-resource pivot language to other
//! languages, and implements the parameter-free projection pair that does
//! the moving:
//!
//! - [`engine`] — a minimal deterministic transformer (masked or causal)
//!   whose forward pass exposes every layer's residual stream and accepts
//!   [`engine::Hook`]s between layers.
//! - [`langvec`] — per-language, per-layer mean representation vectors.
//! - [`intervention`] — the LIRP/LSRP hook pair: shift a layer's hidden
//!   states into the pivot language's representation space, then shift a
//!   later layer's back.
//! - [`probing`] — typed cloze querying with masked and causal scoring
//!   protocols.
//! - [`metrics`] — retrieval accuracy, pivot-centric transferability, and
//!   grouped aggregation.
//! - [`sweep`] — exhaustive evaluation of admissible layer pairs.
//! - [`geometry`] — layer-wise cosine similarity between two languages'
//!   sentence representations.
//! - [`neurons`] — integrated-gradient knowledge-neuron attribution and
//!   cross-lingual overlap analysis.
//! - [`trainer`] — a deterministic toy trainer plus a synthetic bilingual
//!   fact-world generator, so the full pipeline has real signal at desk
//!   scale.
//! - [`data_io`] — loaders and report writers for every external format.
//!
//! The `lrp2` binary in the companion CLI crate drives the same modules
//! end-to-end; the `book/` directory walks through the concepts with
//! runnable snippets (mirrored below as doc-tests).

pub mod data_io;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod intervention;
pub mod langvec;
pub mod metrics;
pub mod neurons;
pub mod probing;
pub mod provenance;
pub mod sweep;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};

/// Bound the worker threads used for probing, sweeps, and attribution.
///
/// Call once, before any parallel work; later calls have no effect.
/// Results are collected in input order, so outputs do not depend on the
/// worker count.
pub fn configure_worker_threads(num_threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(num_threads.max(1)).build_global();
}

// Keep the book's code snippets compiling: every chapter is a doc-test.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(dead_code)]
            struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Engine, "../../../book/src/engine.md");
    chapter!(LanguageVectors, "../../../book/src/language-vectors.md");
    chapter!(Projections, "../../../book/src/projections.md");
    chapter!(Probing, "../../../book/src/probing.md");
    chapter!(Metrics, "../../../book/src/metrics.md");
    chapter!(Sweeps, "../../../book/src/sweeps.md");
    chapter!(Geometry, "../../../book/src/geometry.md");
    chapter!(Neurons, "../../../book/src/neurons.md");
    chapter!(ToyWorlds, "../../../book/src/toy-worlds.md");
    chapter!(FileFormats, "../../../book/src/file-formats.md");
}
