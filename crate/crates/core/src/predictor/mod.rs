//! Ranking GCN predictor.
//!
//! Architectures are encoded as a normalized propagation matrix plus a node
//! feature matrix (one-hot layer type ‖ normalized vertex shape). Three GCN
//! layers `H <- relu(Â H W)` produce node embeddings that are mean-pooled
//! into a graph embedding; a pairwise head turns two embeddings into the
//! probability that the first architecture is the better one.

pub mod checkpoint;
pub mod encode;
pub mod model;
pub mod train;

use thiserror::Error;

pub use encode::{encode, encode_with, AdjacencyNorm, EncodedGraph, EncoderConfig, FEATURES};
pub use model::{
    embed_batch, loss_and_grad, objective, probabilities, ranking_loss, HeadKind, Hyper,
    ModelConfig, PairLabel, Params, PredictorModel, RankTarget, Readout, PROB_CLAMP,
};
pub use train::{adagrad_step, train, TrainConfig, TrainLog};

use crate::shapes::ShapeError;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("architecture with {nodes} nodes exceeds the encoder capacity")]
    Capacity { nodes: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PredictorError>;
