//! Visually-aware one-class collaborative filtering with sparse hierarchical
//! embeddings.
//!
//! Items carry a dense visual feature vector and a leaf on a category tree.
//! The `K' x F` projection that maps features into the visual preference space
//! is split into row segments, one per tree layer, and every node on a layer
//! owns its own copy of that layer's segment. An item's projection is the
//! stack of the segments found along its root-to-leaf path.
//!
//! The crate is `no_std` (it needs `alloc`) and has no IO. File formats,
//! checkpoints and the command-line driver live in the `hvbpr` crate.
//!
//! Modules:
//!   - [`hierarchy`]: category tree, allocation schemes, layer assignment
//!   - [`embedding`]: segment parameter blocks, projection and its gradient
//!   - [`model`]: the preference predictor and baseline configurations
//!   - [`training`]: pairwise-ranking SGD with uniform triple sampling
//!   - [`evaluation`]: leave-one-out split and warm/cold AUC
//!   - [`synthdata`]: synthetic corpora with planted hierarchical structure
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod hierarchy;
mod ids;
pub mod model;
mod numeric;
pub mod synthdata;
pub mod training;

pub use embedding::{FeatureStore, SegmentGrad, SegmentStore};
pub use error::{Error, Result};
pub use evaluation::{AucResult, ColdItemSet, EvalReport, EvalSplit, Scorer, Setting, Target};
pub use hierarchy::{AllocationScheme, CategoryHierarchy, LayerAssignment};
pub use ids::{BlockId, ItemId, NodeId, UserId};
pub use model::{FrozenItems, FrozenScorer, Model, ModelConfig, ModelKind, ModelParams};
pub use numeric::{log_sigmoid, sigmoid};
pub use training::{EpochMetrics, RegConfig, TrainConfig, TrainingCorpus, TripleSampler};
