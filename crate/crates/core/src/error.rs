use crate::ids::{ItemId, NodeId, UserId};

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("category tree has a cycle through node {0}")]
    CycleDetected(NodeId),
    #[error("category tree has more than one root: {0} and {1}")]
    MultipleRoots(NodeId, NodeId),
    #[error("node {0} has more than one parent")]
    MultipleParents(NodeId),
    #[error("edge references node {0} outside the declared node range")]
    UnknownNode(NodeId),
    #[error("item {item} references leaf node {node} which is not in the tree")]
    DanglingItemLeaf { item: ItemId, node: NodeId },
    #[error("item {item} is attached to internal node {node}; items must sit on leaves")]
    ItemOnInternalNode { item: ItemId, node: NodeId },
    #[error("category tree has no nodes")]
    EmptyHierarchy,

    #[error("allocation scheme has {scheme_len} layers but the effective tree height is {effective_height}")]
    SchemeTooDeep { scheme_len: usize, effective_height: usize },
    #[error("allocation scheme allocates {scheme_total} rows but the model has {visual_dim} visual dimensions")]
    SchemeMismatch { scheme_total: usize, visual_dim: usize },
    #[error("invalid allocation scheme {0:?}")]
    InvalidScheme(alloc::string::String),
    #[error("scheme not valid for this baseline: {0}")]
    InvalidSchemeForBaseline(&'static str),

    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("no feature vector for item {0}")]
    MissingFeature(ItemId),
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("visual dimension {dim} out of range (model has {visual_dim})")]
    DimensionOutOfRange { dim: usize, visual_dim: usize },
    #[error("positive and negative item of a pair must differ (got {0} twice)")]
    SameItem(ItemId),

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("corpus has no training feedback")]
    EmptyCorpus,
    #[error("user {0} has no sampleable non-positive item")]
    ExhaustedRejection(UserId),
    #[error("non-finite value produced while updating {group} for triple ({user}, {pos}, {neg})")]
    NonFiniteUpdate { group: &'static str, user: UserId, pos: ItemId, neg: ItemId },
    #[error("no users can be evaluated in this setting")]
    NoEvaluableUsers,
    #[error("invalid synthetic corpus shape: {0}")]
    InvalidShape(&'static str),
}
