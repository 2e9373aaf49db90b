use thiserror::Error;

/// Errors raised by corpus loading, inference, calibration, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },

    /// A corpus file violated its format or a structural invariant.
    #[error("{file}:{line}: {rule}")]
    Corpus { file: String, line: u64, rule: String },

    /// An argument was outside the domain of an operation.
    #[error("{0}")]
    Domain(String),

    /// The reference assignment does not cover or match a conversation.
    #[error("conversation {conv_id}: {rule}")]
    Reference { conv_id: String, rule: String },

    /// Required cross-conversation scores are absent from the matrix.
    #[error(
        "{count} required score(s) missing (e.g. {sample}); \
         pass the zero-fill override to treat them as 0"
    )]
    MissingScores { count: usize, sample: String },

    /// A clique is too large to enumerate.
    #[error(
        "clique {clique_id} has {m_s} conversations (2^{m_s} configurations) \
         which exceeds the complexity cap of {cap}"
    )]
    ComplexityCap {
        clique_id: String,
        m_s: usize,
        cap: usize,
    },

    /// A trial set is missing one of its two classes.
    #[error("no {class} trials present")]
    EmptyClass { class: &'static str },

    /// All trial scores are identical; the affine fit is unidentifiable.
    #[error("degenerate trials: all scores identical")]
    DegenerateTrials,

    /// A refit group selected no cliques.
    #[error("no resolvable cliques in the selected group")]
    EmptyGroup,
}

pub type Result<T> = std::result::Result<T, Error>;
