use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("item `{0}` has no feature vector or no category")]
    OrphanItem(String),

    #[error("item `{item}` refers to unknown category node `{node}`")]
    DanglingLeaf { item: String, node: String },

    #[error("{path}: expected {expected} feature dimensions, found {found}")]
    DimensionMismatch { path: PathBuf, expected: usize, found: usize },

    #[error("no feedback left to train on")]
    EmptyCorpus,

    #[error("unknown {kind} `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Model {
        context: String,
        #[source]
        source: hvbpr_core::Error,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("manifest `{name}`: {source}")]
    Manifest { name: String, source: Box<Error> },
}

impl Error {
    /// Stable machine-readable name for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse_error",
            Error::OrphanItem(_) => "orphan_item",
            Error::DanglingLeaf { .. } => "dangling_leaf",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyCorpus => "empty_corpus",
            Error::UnknownId { .. } => "unknown_id",
            Error::Format { .. } => "format_error",
            Error::Io { .. } => "io_error",
            Error::Model { source, .. } => core_kind(source),
            Error::Invalid(_) => "invalid_argument",
            Error::Manifest { source, .. } => source.kind(),
        }
    }

    pub(crate) fn is_no_evaluable_users(&self) -> bool {
        matches!(self, Error::Model { source: hvbpr_core::Error::NoEvaluableUsers, .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }
}

fn core_kind(e: &hvbpr_core::Error) -> &'static str {
    use hvbpr_core::Error as E;
    match e {
        E::CycleDetected(_) => "cycle_detected",
        E::MultipleRoots(..) => "multiple_roots",
        E::MultipleParents(_) => "multiple_parents",
        E::UnknownNode(_) => "unknown_node",
        E::DanglingItemLeaf { .. } => "dangling_leaf",
        E::ItemOnInternalNode { .. } => "item_on_internal_node",
        E::EmptyHierarchy => "empty_hierarchy",
        E::SchemeTooDeep { .. } => "scheme_too_deep",
        E::SchemeMismatch { .. } => "scheme_mismatch",
        E::InvalidScheme(_) => "invalid_scheme",
        E::InvalidSchemeForBaseline(_) => "invalid_scheme_for_baseline",
        E::UnknownUser(_) => "unknown_user",
        E::UnknownItem(_) => "unknown_item",
        E::MissingFeature(_) => "missing_feature",
        E::DimensionMismatch { .. } => "dimension_mismatch",
        E::DimensionOutOfRange { .. } => "dimension_out_of_range",
        E::SameItem(_) => "same_item",
        E::InvalidConfig(_) => "invalid_config",
        E::EmptyCorpus => "empty_corpus",
        E::ExhaustedRejection(_) => "exhausted_rejection",
        E::NonFiniteUpdate { .. } => "non_finite_update",
        E::NoEvaluableUsers => "no_evaluable_users",
        E::InvalidShape(_) => "invalid_shape",
    }
}

/// Attaches context to core errors.
pub(crate) trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for hvbpr_core::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Model { context: what(), source })
    }
}
