//! Agent-driven virtual news propagation and early fake-news detection.
//!
//! The crate has two halves that meet in the middle:
//!
//! * a **simulation** side — persona extraction from real comments,
//!   diffuser/verifier agents with layered memories, and a stepwise
//!   propagation engine that emits cascade graphs for news items that have
//!   no observed diffusion yet ([`corpus`], [`embed`], [`persona`],
//!   [`agent`], [`backend`], [`sim`], [`metrics`]);
//! * a **detection** side — a hierarchical-attention content encoder and a
//!   graph-attention cascade encoder fused through Gaussian latent
//!   posteriors with reconstruction and symmetric-KL regularizers, plus a
//!   confidence router that only simulates the hard items ([`tensor`],
//!   [`detector`]).
//!
//! Every run is deterministic given its seed: the bundled mock decision
//! backend needs no network, and the remote chat-completion backend is a
//! drop-in replacement behind the same trait.
//!
//! See the `examples/` directory for one runnable walkthrough per
//! capability, or the `earlycast` binary for the same pipelines as
//! subcommands.

pub mod agent;
pub mod backend;
pub mod cli;
pub mod corpus;
pub mod detector;
pub mod embed;
pub mod metrics;
pub mod persona;
pub mod sim;
pub mod synth;
pub mod tensor;

pub use corpus::{ActionEvent, ActionKind, CascadeGraph, Comment, Corpus, NewsItem, Stance, UserRecord};
pub use embed::{cosine, Embedding, EmbeddingProvider, HashEmbedder, VectorIndex};
