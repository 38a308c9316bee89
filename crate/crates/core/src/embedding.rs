//! Segment parameter blocks and the item projection `theta_i = E_leaf(i) f_i`.
//!
//! The stacked `K' x F` leaf matrix is never built on the hot path: each
//! block on the item's path produces its own rows of `theta_i` directly.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::LayerAssignment;
use crate::ids::{BlockId, ItemId};
use crate::numeric::dot_f32;

/// Dense row-major parameter blocks, one per [`crate::hierarchy::SegmentBlock`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SegmentStore {
    feature_dim: usize,
    rows: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl SegmentStore {
    pub fn zeros(assignment: &LayerAssignment, feature_dim: usize) -> Self {
        let rows: Vec<usize> = assignment.blocks().iter().map(|b| b.rows.len()).collect();
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut off = 0;
        offsets.push(0);
        for r in &rows {
            off += r * feature_dim;
            offsets.push(off);
        }
        SegmentStore { feature_dim, rows, offsets, data: vec![0.0; off] }
    }

    /// Fills every entry i.i.d. uniform in `[-bound, bound]`, block by block.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R, bound: f64) {
        if bound == 0.0 {
            self.data.iter_mut().for_each(|x| *x = 0.0);
            return;
        }
        for x in &mut self.data {
            *x = rng.random_range(-bound..=bound);
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn block_count(&self) -> usize {
        self.rows.len()
    }

    pub fn block_rows(&self, block: BlockId) -> usize {
        self.rows[block.index()]
    }

    /// Where `block` lives in [`as_slice`](Self::as_slice).
    pub fn block_range(&self, block: BlockId) -> Range<usize> {
        self.offsets[block.index()]..self.offsets[block.index() + 1]
    }

    pub fn block(&self, block: BlockId) -> &[f64] {
        &self.data[self.block_range(block)]
    }

    pub fn block_mut(&mut self, block: BlockId) -> &mut [f64] {
        &mut self.data[self.offsets[block.index()]..self.offsets[block.index() + 1]]
    }

    /// Row `row` (local to the block) of `block`.
    #[inline]
    pub fn row(&self, block: BlockId, row: usize) -> &[f64] {
        let start = self.offsets[block.index()] + row * self.feature_dim;
        &self.data[start..start + self.feature_dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// True when the block layout matches `assignment` at `feature_dim`.
    pub fn matches(&self, assignment: &LayerAssignment, feature_dim: usize) -> bool {
        self.feature_dim == feature_dim
            && self.rows.len() == assignment.blocks().len()
            && self.rows.iter().zip(assignment.blocks()).all(|(&r, b)| r == b.rows.len())
            && self.offsets.last() == Some(&self.data.len())
            && self.data.len() == assignment.parameter_count(feature_dim)
    }

    /// `p <- p + lr * (g - reg * p)` on every block touched in `grad`.
    pub fn apply(&mut self, grad: &SegmentGrad, lr: f64, reg: f64) {
        for &b in &grad.touched {
            let g = grad.block(b);
            for (p, &g) in self.block_mut(b).iter_mut().zip(g) {
                *p += lr * (g - reg * *p);
            }
        }
    }

    /// The stacked `K' x F` matrix used for `item` (row-major). For inspection
    /// and tests; the projection never materializes it.
    pub fn stacked_matrix(&self, assignment: &LayerAssignment, item: ItemId) -> Result<Vec<f64>> {
        let f = self.feature_dim;
        let mut m = vec![0.0; assignment.visual_dim() * f];
        for &b in assignment.path_segments(item)? {
            let rows = assignment.block(b).rows.clone();
            m[rows.start * f..rows.end * f].copy_from_slice(self.block(b));
        }
        Ok(m)
    }
}

/// Sparse gradient accumulator with the same layout as a [`SegmentStore`].
///
/// Only touched blocks are cleared, so a reset costs `O(K' F)` per triple.
#[derive(Clone, Debug)]
pub struct SegmentGrad {
    feature_dim: usize,
    offsets: Vec<usize>,
    data: Vec<f64>,
    touched: Vec<BlockId>,
    is_touched: Vec<bool>,
}

impl SegmentGrad {
    pub fn new(store: &SegmentStore) -> Self {
        SegmentGrad {
            feature_dim: store.feature_dim,
            offsets: store.offsets.clone(),
            data: vec![0.0; store.data.len()],
            touched: Vec::new(),
            is_touched: vec![false; store.block_count()],
        }
    }

    pub fn clear(&mut self) {
        for &b in &self.touched {
            let (s, e) = (self.offsets[b.index()], self.offsets[b.index() + 1]);
            self.data[s..e].iter_mut().for_each(|x| *x = 0.0);
            self.is_touched[b.index()] = false;
        }
        self.touched.clear();
    }

    /// Touched blocks in first-touch order.
    pub fn touched(&self) -> &[BlockId] {
        &self.touched
    }

    pub fn block(&self, block: BlockId) -> &[f64] {
        &self.data[self.offsets[block.index()]..self.offsets[block.index() + 1]]
    }

    fn touch(&mut self, block: BlockId) -> &mut [f64] {
        if !self.is_touched[block.index()] {
            self.is_touched[block.index()] = true;
            self.touched.push(block);
        }
        &mut self.data[self.offsets[block.index()]..self.offsets[block.index() + 1]]
    }
}

/// Per-item visual feature vectors, stored as `f32` and promoted on read.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FeatureStore {
    dim: usize,
    item_count: usize,
    data: Vec<f32>,
}

impl FeatureStore {
    /// `data` holds `item_count` rows of length `dim`, item-major.
    pub fn new(dim: usize, item_count: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != dim * item_count {
            return Err(Error::DimensionMismatch { expected: dim * item_count, found: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("feature vectors must be finite"));
        }
        Ok(FeatureStore { dim, item_count, data })
    }

    pub fn from_rows<I, R>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f32]>,
    {
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.len() });
            }
            data.extend_from_slice(r);
            n += 1;
        }
        Self::new(dim, n, data)
    }

    /// `F`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn get(&self, item: ItemId) -> Result<&[f32]> {
        if item.index() >= self.item_count {
            return Err(Error::MissingFeature(item));
        }
        Ok(self.get_unchecked(item))
    }

    #[inline]
    pub(crate) fn get_unchecked(&self, item: ItemId) -> &[f32] {
        &self.data[item.index() * self.dim..(item.index() + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Scales every non-zero vector to unit Euclidean norm.
    pub fn l2_normalize(&mut self) {
        if self.dim == 0 {
            return;
        }
        for row in self.data.chunks_mut(self.dim) {
            let norm = libm::sqrt(row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>());
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x = (f64::from(*x) / norm) as f32);
            }
        }
    }
}

fn check_item(assignment: &LayerAssignment, features: &FeatureStore, item: ItemId) -> Result<()> {
    if item.index() >= assignment.item_count() {
        return Err(Error::UnknownItem(item));
    }
    if item.index() >= features.item_count() {
        return Err(Error::MissingFeature(item));
    }
    Ok(())
}

/// Writes `theta_i` (length `K'`) into `out`.
pub fn project(
    assignment: &LayerAssignment,
    segments: &SegmentStore,
    features: &FeatureStore,
    item: ItemId,
    out: &mut [f64],
) -> Result<()> {
    check_item(assignment, features, item)?;
    if out.len() != assignment.visual_dim() {
        return Err(Error::DimensionMismatch { expected: assignment.visual_dim(), found: out.len() });
    }
    project_unchecked(assignment, segments, features, item, out);
    Ok(())
}

#[inline]
pub(crate) fn project_unchecked(
    assignment: &LayerAssignment,
    segments: &SegmentStore,
    features: &FeatureStore,
    item: ItemId,
    out: &mut [f64],
) {
    let f = features.get_unchecked(item);
    for &b in assignment.path_unchecked(item) {
        let rows = assignment.block(b).rows.clone();
        for (local, d) in rows.enumerate() {
            out[d] = dot_f32(segments.row(b, local), f);
        }
    }
}

/// `theta_i[d]`: one row of the item's stacked matrix dotted with `f_i`.
pub fn dimension_score(
    assignment: &LayerAssignment,
    segments: &SegmentStore,
    features: &FeatureStore,
    item: ItemId,
    dim: usize,
) -> Result<f64> {
    let visual_dim = assignment.visual_dim();
    if dim >= visual_dim {
        return Err(Error::DimensionOutOfRange { dim, visual_dim });
    }
    check_item(assignment, features, item)?;
    let f = features.get_unchecked(item);
    let block = assignment
        .path_unchecked(item)
        .iter()
        .copied()
        .find(|&b| assignment.block(b).rows.contains(&dim))
        .expect("layer rows partition [0, K')");
    let local = dim - assignment.block(block).rows.start;
    Ok(dot_f32(segments.row(block, local), f))
}

/// Adds `scale * upstream[d] * f_i` to row `d` of every block on `item`'s
/// path. `upstream` is the derivative of the objective w.r.t. `theta_i`.
pub fn accumulate_gradient(
    assignment: &LayerAssignment,
    features: &FeatureStore,
    item: ItemId,
    upstream: &[f64],
    scale: f64,
    grad: &mut SegmentGrad,
) -> Result<()> {
    check_item(assignment, features, item)?;
    if upstream.len() != assignment.visual_dim() {
        return Err(Error::DimensionMismatch { expected: assignment.visual_dim(), found: upstream.len() });
    }
    accumulate_unchecked(assignment, features, item, upstream, scale, grad);
    Ok(())
}

#[inline]
pub(crate) fn accumulate_unchecked(
    assignment: &LayerAssignment,
    features: &FeatureStore,
    item: ItemId,
    upstream: &[f64],
    scale: f64,
    grad: &mut SegmentGrad,
) {
    let f = features.get_unchecked(item);
    let fd = grad.feature_dim;
    for &b in assignment.path_unchecked(item) {
        let rows = assignment.block(b).rows.clone();
        let g = grad.touch(b);
        for (local, d) in rows.enumerate() {
            let coef = scale * upstream[d];
            if coef == 0.0 {
                continue;
            }
            for (gx, &fx) in g[local * fd..(local + 1) * fd].iter_mut().zip(f) {
                *gx += coef * f64::from(fx);
            }
        }
    }
}
