//! Versioned model checkpoints.
//!
//! A checkpoint is the 8-byte magic `HVBPRCK1`, a little-endian `u32`
//! format version, then a bincode-encoded [`Checkpoint`]. It carries the id
//! maps, the full model (configuration, tree, every parameter block) and
//! the frozen item projections, so evaluation and ranking need no feature
//! file.

use std::path::Path;

use hvbpr_core::{FrozenItems, Model, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idmap::IdMap;
use crate::ingest::{FeatureNorm, Policy};

pub const MAGIC: &[u8; 8] = b"HVBPRCK1";
pub const VERSION: u32 = 1;

/// Every source of randomness in a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub init: u64,
    pub sampling: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Seeds { split: seed, init: seed, sampling: seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub users: IdMap,
    pub items: IdMap,
    pub nodes: IdMap,
    pub model: Model,
    pub frozen: FrozenItems,
    pub seeds: Seeds,
    pub train: TrainConfig,
    pub policy: Policy,
    pub feature_norm: FeatureNorm,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 << 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        bincode::serialize_into(&mut out, self).expect("in-memory serialization");
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::format(path, "not a model checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(path, format!("checkpoint version {version}, expected {VERSION}")));
        }
        let ck: Checkpoint =
            bincode::deserialize(&bytes[12..]).map_err(|e| Error::format(path, format!("corrupt checkpoint: {e}")))?;
        let m = &ck.model;
        if ck.users.len() != m.user_count()
            || ck.items.len() != m.item_count()
            || ck.nodes.len() != m.hierarchy().node_count()
            || !ck.frozen.matches(m)
        {
            return Err(Error::format(path, "id maps do not match the model"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
