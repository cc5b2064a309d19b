//! Template-free retrosynthesis prediction on molecular graphs.
//!
//! Given a product molecule, the engine scores every bonded atom pair
//! for reactivity, disconnects the highest-scoring pairs to obtain
//! synthons, and grows each synthon into a full reactant with a
//! latent-conditioned sequence of graph edits decoded by beam search.
//! Both learned modules share the same relational graph-convolution
//! encoder architecture and train on atom-mapped reaction data.
//!
//! The crate is organized bottom-up:
//!
//! - [`numcore`]: dense tensors, recorded-tape gradients, Adam.
//! - [`molgraph`]: molecule graphs, SMILES subset parsing, canonical
//!   serialization, valence rules, graph surgery.
//! - [`rgcn`]: the shared relational graph-convolution encoder.
//! - [`center`]: reaction-center scoring, training, synthon splitting.
//! - [`translate`]: variational synthon-to-reactant translation and
//!   beam-search generation.
//! - [`pipeline`]: dataset ingestion, end-to-end prediction, top-k
//!   evaluation, configuration, and checkpointing.

pub mod center;
pub mod molgraph;
pub mod numcore;
pub mod pipeline;
pub mod rgcn;
pub mod translate;
