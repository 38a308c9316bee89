//! File formats, checkpoints, experiment runs and the command-line driver
//! around [`hvbpr_core`].
//!
//! Input files:
//!   - feedback: `user<TAB>item`, extra columns ignored, duplicates collapse
//!   - hierarchy: `child<TAB>parent`, one root
//!   - item leaves: `item<TAB>leaf`
//!   - features: binary `HVBPRFT1` with a `.ids` sidecar, or CSV
//!
//! External ids are densified in sorted order and stored in every
//! checkpoint, so outputs always speak in the caller's ids.

pub mod bench;
pub mod checkpoint;
pub mod cli;
mod error;
pub mod experiment;
pub mod features;
pub mod idmap;
pub mod ingest;
pub mod synth;

pub use checkpoint::{Checkpoint, Seeds};
pub use error::{Error, Result};
pub use experiment::{read_manifests, run_experiment, ExperimentManifest, RunReport};
pub use idmap::IdMap;
pub use ingest::{load_corpus, Corpus, FeatureNorm, IngestReport, InputPaths, Policy};
