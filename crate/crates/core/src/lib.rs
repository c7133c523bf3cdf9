//! Hierarchical retrieval-augmented question answering.
//!
//! Documents are indexed as four-level trees ([`doctree`]) whose internal
//! node vectors are token-weighted means of their children ([`embedder`]).
//! Questions are expanded into several queries, searched densely
//! ([`vectorstore`]) and optionally lexically ([`sparse`]), merged and
//! deduplicated ([`retriever`]), answered with abstention-aware retries
//! ([`answerer`]), aggregated across runs ([`ensembler`]) and scored
//! ([`evalkit`]). [`pipeline`] wires the stages together for batch use.

pub mod answerer;
pub mod doctree;
pub mod embedder;
pub mod ensembler;
pub mod evalkit;
pub mod pipeline;
pub mod remote;
pub mod retriever;
pub mod sparse;
pub mod vectorstore;
