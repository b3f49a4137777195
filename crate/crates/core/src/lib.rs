//! Attention enhanced graph convolutional LSTM (AGC-LSTM) for skeleton-based
//! action recognition.

pub mod cell;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod graph_conv;
pub mod model;
pub mod reference;
pub mod numerics;
pub mod train;

pub use cell::{AgcLstmCellParams, AgcLstmState, CellKind, CellShape};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{StreamKind, TrainConfig};
pub use data::{Dataset, SkeletonSequence, SyntheticActionSpec};
pub use error::{Error, Result};
pub use graph::{AdjacencyStack, Layout, PartMap, SkeletonGraph};
pub use graph_conv::{graph_conv, GraphConvWeights};
pub use model::{AgcLstmNetwork, ForwardOutput, LossTerms, LossWeights, NetworkConfig, Prediction, Stream, Variant};
pub use numerics::{GradBuffer, ParamStore, Tape, Tensor, Var};
pub use train::{EpochMetrics, Evaluation, TrainOptions};
