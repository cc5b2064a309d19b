//! End-to-end orchestration: ingestion, training entry points,
//! prediction, evaluation, configuration, and checkpoints.

mod checkpoint;
mod config;
mod dataset;
mod evaluate;
mod predict;

pub use checkpoint::{
    describe, load as load_checkpoint, load_bytes as load_checkpoint_bytes, save as save_checkpoint,
    save_bytes as save_checkpoint_bytes, Checkpoint, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{ConfigError, RunConfig};
pub use dataset::{
    ingest, ingest_str, parse_reaction_line, Dataset, IngestError, IngestReport, LineError, Split,
    Vocab,
};
pub use evaluate::{
    evaluate_center_topk, evaluate_topk, evaluate_translation_topk, ground_truth_key,
    AccuracyTable,
};
pub use predict::{prediction_records, Prediction, PredictionEntry, Predictor};

use crate::center::{CenterError, CenterTrainOptions};
use crate::translate::{TranslateError, TranslateTrainOptions};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("checkpoint does not contain the {0} module; train it first")]
    MissingModule(&'static str),
    #[error(transparent)]
    Center(#[from] CenterError),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Graph(#[from] crate::molgraph::GraphError),
    #[error(transparent)]
    Feature(#[from] crate::molgraph::FeatureError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl RunConfig {
    /// Center-module training options implied by this configuration.
    pub fn center_options(&self) -> CenterTrainOptions {
        CenterTrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            embed_dim: self.embed_dim,
            layers: self.layers,
            class_conditioning: self.class_conditioning,
            class_embed_dim: self.class_embed_dim,
            threshold: self.threshold,
            metric_ks: vec![1, 2, 3, 5],
        }
    }

    /// Translation-module training options implied by this
    /// configuration.
    pub fn translate_options(&self) -> TranslateTrainOptions {
        TranslateTrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            embed_dim: self.embed_dim,
            layers: self.layers,
            latent_dim: self.latent_dim,
            mc_traces: self.mc_traces,
            class_conditioning: self.class_conditioning,
            class_embed_dim: self.class_embed_dim,
        }
    }
}
