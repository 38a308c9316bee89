//! Category tree, allocation schemes and the mapping of visual rows onto tree
//! layers.
//!
//! Layers are numbered from the root: the root is layer 1, its children are
//! layer 2, and so on. An [`AllocationScheme`] lists how many visual rows each
//! layer owns, top-down. Every node on a layer with a non-zero row count owns
//! an independent segment block; an item's projection uses the blocks of its
//! ancestors on each such layer.

use alloc::collections::VecDeque;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{BlockId, ItemId, NodeId};

/// A validated rooted category tree with items attached to its leaves.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(Serialize, Deserialize),
    serde(try_from = "HierarchyParts", into = "HierarchyParts")
)]
pub struct CategoryHierarchy {
    parent: Vec<Option<NodeId>>,
    depth: Vec<u32>,
    child_count: Vec<u32>,
    root: NodeId,
    leaf_of_item: Vec<NodeId>,
    layers: Vec<Vec<NodeId>>,
    height: usize,
    effective_height: usize,
}

/// Serialized form of a hierarchy; re-validated on load.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct HierarchyParts {
    pub node_count: usize,
    pub edges: Vec<(NodeId, NodeId)>,
    pub item_leaves: Vec<NodeId>,
}

impl TryFrom<HierarchyParts> for CategoryHierarchy {
    type Error = Error;

    fn try_from(parts: HierarchyParts) -> Result<Self> {
        CategoryHierarchy::build(parts.node_count, &parts.edges, &parts.item_leaves)
    }
}

impl From<CategoryHierarchy> for HierarchyParts {
    fn from(h: CategoryHierarchy) -> Self {
        HierarchyParts { node_count: h.node_count(), edges: h.edges(), item_leaves: h.leaf_of_item }
    }
}

impl CategoryHierarchy {
    /// Builds and validates a tree from `(child, parent)` edges over nodes
    /// `0..node_count`. `item_leaves[i]` is the leaf node of item `i`.
    pub fn build(node_count: usize, edges: &[(NodeId, NodeId)], item_leaves: &[NodeId]) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::EmptyHierarchy);
        }
        let mut parent: Vec<Option<NodeId>> = vec![None; node_count];
        let mut children: Vec<Vec<NodeId>> = vec![Vec::new(); node_count];
        for &(child, par) in edges {
            for n in [child, par] {
                if n.index() >= node_count {
                    return Err(Error::UnknownNode(n));
                }
            }
            if child == par {
                return Err(Error::CycleDetected(child));
            }
            match parent[child.index()] {
                Some(existing) if existing == par => continue,
                Some(_) => return Err(Error::MultipleParents(child)),
                None => {}
            }
            parent[child.index()] = Some(par);
            children[par.index()].push(child);
        }

        let mut roots = parent.iter().enumerate().filter(|(_, p)| p.is_none()).map(|(i, _)| NodeId::from_index(i));
        let root = match (roots.next(), roots.next()) {
            (Some(r), None) => r,
            (Some(a), Some(b)) => return Err(Error::MultipleRoots(a, b)),
            // every node has a parent: there must be a cycle
            (None, _) => return Err(Error::CycleDetected(NodeId(0))),
        };

        let mut depth = vec![0u32; node_count];
        depth[root.index()] = 1;
        let mut queue = VecDeque::from([root]);
        while let Some(n) = queue.pop_front() {
            for &c in &children[n.index()] {
                depth[c.index()] = depth[n.index()] + 1;
                queue.push_back(c);
            }
        }
        // nodes not reached from the root hang off a cycle
        if let Some(i) = depth.iter().position(|&d| d == 0) {
            return Err(Error::CycleDetected(NodeId::from_index(i)));
        }

        let child_count: Vec<u32> = children.iter().map(|c| c.len() as u32).collect();
        for (i, &leaf) in item_leaves.iter().enumerate() {
            let item = ItemId::from_index(i);
            if leaf.index() >= node_count {
                return Err(Error::DanglingItemLeaf { item, node: leaf });
            }
            if child_count[leaf.index()] > 0 {
                return Err(Error::ItemOnInternalNode { item, node: leaf });
            }
        }

        let height = *depth.iter().max().expect("non-empty") as usize;
        let effective_height = if item_leaves.is_empty() {
            (0..node_count).filter(|&i| child_count[i] == 0).map(|i| depth[i]).min().expect("a finite tree has a leaf")
                as usize
        } else {
            item_leaves.iter().map(|n| depth[n.index()]).min().expect("non-empty") as usize
        };

        let mut layers = vec![Vec::new(); height];
        for (i, &d) in depth.iter().enumerate() {
            layers[d as usize - 1].push(NodeId::from_index(i));
        }

        Ok(CategoryHierarchy {
            parent,
            depth,
            child_count,
            root,
            leaf_of_item: item_leaves.to_vec(),
            layers,
            height,
            effective_height,
        })
    }

    /// A one-node tree with every item on the root.
    pub fn single_root(item_count: usize) -> Self {
        Self::build(1, &[], &vec![NodeId(0); item_count]).expect("single node tree is valid")
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn item_count(&self) -> usize {
        self.leaf_of_item.len()
    }

    /// Number of layers, counting the root layer as 1.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Depth of the shallowest item leaf; the deepest layer that may carry rows.
    pub fn effective_height(&self) -> usize {
        self.effective_height
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parent.get(node.index()).copied().flatten()
    }

    /// Layer of `node` (root = 1).
    pub fn depth(&self, node: NodeId) -> usize {
        self.depth[node.index()] as usize
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        self.child_count[node.index()] == 0
    }

    pub fn leaf_of(&self, item: ItemId) -> Result<NodeId> {
        self.leaf_of_item.get(item.index()).copied().ok_or(Error::UnknownItem(item))
    }

    pub fn item_leaves(&self) -> &[NodeId] {
        &self.leaf_of_item
    }

    /// Nodes on `layer` (1-based), in ascending id order.
    pub fn nodes_at_layer(&self, layer: usize) -> &[NodeId] {
        layer.checked_sub(1).and_then(|l| self.layers.get(l)).map_or(&[], Vec::as_slice)
    }

    /// The ancestor of `node` on `layer`, or `None` if `node` is shallower.
    pub fn ancestor_at_layer(&self, node: NodeId, layer: usize) -> Option<NodeId> {
        let mut d = self.depth(node);
        if layer == 0 || layer > d {
            return None;
        }
        let mut n = node;
        while d > layer {
            n = self.parent[n.index()]?;
            d -= 1;
        }
        Some(n)
    }

    /// Root-to-`node` path.
    pub fn path_to(&self, node: NodeId) -> Vec<NodeId> {
        let mut path = Vec::with_capacity(self.depth(node));
        let mut n = Some(node);
        while let Some(cur) = n {
            path.push(cur);
            n = self.parent(cur);
        }
        path.reverse();
        path
    }

    /// `(child, parent)` edges in child-id order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.parent.iter().enumerate().filter_map(|(i, p)| p.map(|p| (NodeId::from_index(i), p))).collect()
    }

    /// Leaves in ascending id order.
    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count()).map(NodeId::from_index).filter(|&n| self.is_leaf(n))
    }
}

/// Split of the visual rows across tree layers, written top-down.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(transparent))]
pub struct AllocationScheme {
    per_layer: Vec<usize>,
}

impl AllocationScheme {
    pub fn new(per_layer: Vec<usize>) -> Self {
        AllocationScheme { per_layer }
    }

    /// Everything on the root layer.
    pub fn single(rows: usize) -> Self {
        if rows == 0 {
            Self::default()
        } else {
            Self::new(vec![rows])
        }
    }

    pub fn per_layer(&self) -> &[usize] {
        &self.per_layer
    }

    pub fn len(&self) -> usize {
        self.per_layer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_layer.is_empty()
    }

    pub fn total(&self) -> usize {
        self.per_layer.iter().sum()
    }

    /// True when every row sits on the root layer (trailing zeros allowed).
    pub fn is_root_only(&self) -> bool {
        self.per_layer.iter().skip(1).all(|&r| r == 0)
    }

    /// The scheme with trailing zero layers removed.
    pub fn trimmed(&self) -> Self {
        let keep = self.per_layer.iter().rposition(|&r| r > 0).map_or(0, |p| p + 1);
        Self::new(self.per_layer[..keep].to_vec())
    }
}

impl FromStr for AllocationScheme {
    type Err = Error;

    /// Parses `"5:3:2"`. An empty string is the empty scheme.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Self::default());
        }
        s.split(':')
            .map(|p| p.trim().parse::<usize>())
            .collect::<core::result::Result<Vec<_>, _>>()
            .map(Self::new)
            .map_err(|_| Error::InvalidScheme(s.to_string()))
    }
}

impl fmt::Display for AllocationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.per_layer.iter().enumerate() {
            if i > 0 {
                f.write_str(":")?;
            }
            write!(f, "{r}")?;
        }
        Ok(())
    }
}

/// One node's copy of one layer's segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentBlock {
    /// 1-based layer.
    pub layer: usize,
    pub node: NodeId,
    /// Visual dimensions produced by this block.
    pub rows: Range<usize>,
}

/// Row ranges per layer plus the segment blocks instantiated on each node.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerAssignment {
    scheme: AllocationScheme,
    layer_rows: Vec<Range<usize>>,
    active_layers: Vec<usize>,
    blocks: Vec<SegmentBlock>,
    block_of_node: Vec<Option<BlockId>>,
    item_paths: Vec<BlockId>,
    item_count: usize,
}

impl LayerAssignment {
    /// Maps `scheme` onto the layers of `hierarchy`. Layers deeper than the
    /// scheme, and layers with a zero count, get no blocks.
    pub fn new(hierarchy: &CategoryHierarchy, scheme: &AllocationScheme) -> Result<Self> {
        if scheme.len() > hierarchy.effective_height() {
            return Err(Error::SchemeTooDeep {
                scheme_len: scheme.len(),
                effective_height: hierarchy.effective_height(),
            });
        }
        let mut layer_rows = Vec::with_capacity(scheme.len());
        let mut start = 0;
        for &r in scheme.per_layer() {
            layer_rows.push(start..start + r);
            start += r;
        }
        let active_layers: Vec<usize> = (0..scheme.len()).filter(|&l| scheme.per_layer()[l] > 0).collect();

        let mut blocks = Vec::new();
        let mut block_of_node = vec![None; hierarchy.node_count()];
        for &l in &active_layers {
            for &node in hierarchy.nodes_at_layer(l + 1) {
                block_of_node[node.index()] = Some(BlockId::from_index(blocks.len()));
                blocks.push(SegmentBlock { layer: l + 1, node, rows: layer_rows[l].clone() });
            }
        }

        let mut item_paths = Vec::with_capacity(hierarchy.item_count() * active_layers.len());
        for &leaf in hierarchy.item_leaves() {
            for &l in &active_layers {
                let anc =
                    hierarchy.ancestor_at_layer(leaf, l + 1).expect("item leaves are at least as deep as the scheme");
                item_paths.push(block_of_node[anc.index()].expect("active layer nodes own blocks"));
            }
        }

        Ok(LayerAssignment {
            scheme: scheme.clone(),
            layer_rows,
            active_layers,
            blocks,
            block_of_node,
            item_paths,
            item_count: hierarchy.item_count(),
        })
    }

    pub fn scheme(&self) -> &AllocationScheme {
        &self.scheme
    }

    /// `K'`.
    pub fn visual_dim(&self) -> usize {
        self.scheme.total()
    }

    /// Row range of 1-based `layer`; empty for layers outside the scheme.
    pub fn layer_rows(&self, layer: usize) -> Range<usize> {
        layer.checked_sub(1).and_then(|l| self.layer_rows.get(l)).cloned().unwrap_or(0..0)
    }

    /// Number of layers that own at least one row.
    pub fn active_layer_count(&self) -> usize {
        self.active_layers.len()
    }

    pub fn blocks(&self) -> &[SegmentBlock] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &SegmentBlock {
        &self.blocks[id.index()]
    }

    pub fn block_of_node(&self, node: NodeId) -> Option<BlockId> {
        self.block_of_node.get(node.index()).copied().flatten()
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    /// Segment blocks along `item`'s root-to-leaf path, one per active layer.
    pub fn path_segments(&self, item: ItemId) -> Result<&[BlockId]> {
        if item.index() >= self.item_count {
            return Err(Error::UnknownItem(item));
        }
        Ok(self.path_unchecked(item))
    }

    #[inline]
    pub(crate) fn path_unchecked(&self, item: ItemId) -> &[BlockId] {
        let k = self.active_layers.len();
        &self.item_paths[item.index() * k..(item.index() + 1) * k]
    }

    /// Number of embedding parameters for feature dimension `feature_dim`.
    pub fn parameter_count(&self, feature_dim: usize) -> usize {
        self.blocks.iter().map(|b| b.rows.len() * feature_dim).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    /// root(0) -> {Clothing 1, Shoes 2, Intimates 3};
    /// Clothing -> {Skirts 4, Jeans 5}; Shoes -> {Boots 6}; Intimates -> {Bras 7}
    fn figure_one() -> CategoryHierarchy {
        let edges = [(n(1), n(0)), (n(2), n(0)), (n(3), n(0)), (n(4), n(1)), (n(5), n(1)), (n(6), n(2)), (n(7), n(3))];
        let items = [n(4), n(4), n(5), n(6), n(7)];
        CategoryHierarchy::build(8, &edges, &items).unwrap()
    }

    #[test]
    fn single_root_tree() {
        let h = CategoryHierarchy::single_root(3);
        assert_eq!(h.height(), 1);
        assert_eq!(h.effective_height(), 1);
        assert_eq!(h.leaf_of(ItemId(2)).unwrap(), n(0));
    }

    #[test]
    fn figure_one_has_three_layers() {
        let h = figure_one();
        assert_eq!(h.height(), 3);
        assert_eq!(h.effective_height(), 3);
        assert_eq!(h.root(), n(0));
        assert_eq!(h.nodes_at_layer(2), &[n(1), n(2), n(3)]);
        assert_eq!(h.path_to(n(4)), vec![n(0), n(1), n(4)]);
    }

    #[test]
    fn imbalanced_effective_height_is_shortest_item_path() {
        // 0 -> 1 (leaf, depth 2); 0 -> 2 -> 3 -> 4 (leaf, depth 4)
        let edges = [(n(1), n(0)), (n(2), n(0)), (n(3), n(2)), (n(4), n(3))];
        let h = CategoryHierarchy::build(5, &edges, &[n(1), n(4)]).unwrap();
        assert_eq!(h.height(), 4);
        assert_eq!(h.effective_height(), 2);
        // items only on the deep branch: the shallow leaf does not count
        let h = CategoryHierarchy::build(5, &edges, &[n(4)]).unwrap();
        assert_eq!(h.effective_height(), 4);
    }

    #[test]
    fn structural_errors_name_offenders() {
        let cyc = CategoryHierarchy::build(3, &[(n(1), n(2)), (n(2), n(1))], &[]);
        assert_eq!(cyc, Err(Error::CycleDetected(n(1))));
        let two = CategoryHierarchy::build(3, &[(n(1), n(0))], &[]);
        assert_eq!(two, Err(Error::MultipleRoots(n(0), n(2))));
        let dangling = CategoryHierarchy::build(2, &[(n(1), n(0))], &[n(1), n(9)]);
        assert_eq!(dangling, Err(Error::DanglingItemLeaf { item: ItemId(1), node: n(9) }));
        let internal = CategoryHierarchy::build(2, &[(n(1), n(0))], &[n(0)]);
        assert_eq!(internal, Err(Error::ItemOnInternalNode { item: ItemId(0), node: n(0) }));
        let multi = CategoryHierarchy::build(3, &[(n(2), n(0)), (n(2), n(1)), (n(1), n(0))], &[]);
        assert_eq!(multi, Err(Error::MultipleParents(n(2))));
        assert_eq!(CategoryHierarchy::build(0, &[], &[]), Err(Error::EmptyHierarchy));
        let self_loop = CategoryHierarchy::build(2, &[(n(1), n(1))], &[]);
        assert_eq!(self_loop, Err(Error::CycleDetected(n(1))));
    }

    #[test]
    fn duplicate_edges_are_tolerated() {
        let h = CategoryHierarchy::build(2, &[(n(1), n(0)), (n(1), n(0))], &[n(1)]).unwrap();
        assert_eq!(h.edges(), vec![(n(1), n(0))]);
    }

    #[test]
    fn scheme_parse_and_display() {
        let s: AllocationScheme = "5:3:2".parse().unwrap();
        assert_eq!(s.per_layer(), &[5, 3, 2]);
        assert_eq!(s.total(), 10);
        assert_eq!(s.to_string(), "5:3:2");
        assert!("5:x".parse::<AllocationScheme>().is_err());
        assert!("".parse::<AllocationScheme>().unwrap().is_empty());
        let t: AllocationScheme = "10:0:0".parse().unwrap();
        assert!(t.is_root_only());
        assert_eq!(t.trimmed().per_layer(), &[10]);
    }

    #[test]
    fn figure_one_four_two_one_split() {
        let h = figure_one();
        let a = LayerAssignment::new(&h, &"4:2:1".parse().unwrap()).unwrap();
        assert_eq!(a.layer_rows(1), 0..4);
        assert_eq!(a.layer_rows(2), 4..6);
        assert_eq!(a.layer_rows(3), 6..7);
        // 1 root + 3 mid + 4 leaves
        assert_eq!(a.blocks().len(), 8);

        let skirt = a.path_segments(ItemId(0)).unwrap();
        let nodes: Vec<_> = skirt.iter().map(|&b| a.block(b).node).collect();
        assert_eq!(nodes, vec![n(0), n(1), n(4)]);
        // two skirts share everything
        assert_eq!(a.path_segments(ItemId(1)).unwrap(), skirt);
        // jeans share root and Clothing but not the leaf block
        let jeans = a.path_segments(ItemId(2)).unwrap();
        assert_eq!(&jeans[..2], &skirt[..2]);
        assert_ne!(jeans[2], skirt[2]);
        assert_eq!(a.path_segments(ItemId(9)), Err(Error::UnknownItem(ItemId(9))));
    }

    #[test]
    fn all_root_split_has_one_block() {
        let h = figure_one();
        let a = LayerAssignment::new(&h, &"7:0:0".parse().unwrap()).unwrap();
        assert_eq!(a.blocks().len(), 1);
        for i in 0..h.item_count() {
            assert_eq!(a.path_segments(ItemId::from_index(i)).unwrap(), &[BlockId(0)]);
        }
    }

    #[test]
    fn two_two_split_on_nine_leaves() {
        let mut edges = Vec::new();
        for m in 1..=3u32 {
            edges.push((n(m), n(0)));
            for k in 0..3u32 {
                edges.push((n(4 + (m - 1) * 3 + k), n(m)));
            }
        }
        let items: Vec<_> = (4..13).map(n).collect();
        let h = CategoryHierarchy::build(13, &edges, &items).unwrap();
        let a = LayerAssignment::new(&h, &"2:2".parse().unwrap()).unwrap();
        assert_eq!(a.blocks().len(), 4);
        assert_eq!(a.layer_rows(1), 0..2);
        assert_eq!(a.layer_rows(2), 2..4);
        assert_eq!(a.parameter_count(5), 5 * (2 + 2 * 3));
    }

    #[test]
    fn scheme_deeper_than_effective_height_is_rejected() {
        let edges = [(n(1), n(0)), (n(2), n(0)), (n(3), n(2)), (n(4), n(3))];
        let h = CategoryHierarchy::build(5, &edges, &[n(1), n(4)]).unwrap();
        let err = LayerAssignment::new(&h, &"1:1:1".parse().unwrap()).unwrap_err();
        assert_eq!(err, Error::SchemeTooDeep { scheme_len: 3, effective_height: 2 });
        let a = LayerAssignment::new(&h, &"2:1".parse().unwrap()).unwrap();
        // deep item uses its depth-2 ancestor's block
        let deep = a.path_segments(ItemId(1)).unwrap();
        assert_eq!(a.block(deep[1]).node, n(2));
        assert_eq!(a.block(deep[1]).layer, 2);
    }

    #[test]
    fn empty_scheme_yields_empty_paths() {
        let h = figure_one();
        let a = LayerAssignment::new(&h, &AllocationScheme::default()).unwrap();
        assert_eq!(a.visual_dim(), 0);
        assert!(a.path_segments(ItemId(0)).unwrap().is_empty());
    }
}
