//! Embedding to perceptual hash: PCA whitening, sign binarization and
//! plaintext Hamming operations.

mod formats;
mod hash;
mod synthetic;
mod whitening;

pub use formats::{
    model_from_bytes, model_to_bytes, read_model, write_model, EmbeddingFile, EMBEDDING_MAGIC,
    FORMAT_VERSION, MODEL_MAGIC,
};
pub use hash::{
    deserialize_hash, hamming_distance, match_score, serialize_hash, PerceptualHash, HASH_BITS,
};
pub use synthetic::SyntheticEmbeddings;
pub use whitening::{
    apply_whitening, binarize, fit_whitening, hash_embedding, Embedding, WhiteningModel,
    MIN_EIGENVALUE, RIDGE_FACTOR,
};

/// Default embedding width produced by the feature extractor.
pub const EMBEDDING_DIM: usize = 768;

#[derive(Debug, thiserror::Error)]
pub enum HashError {
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("degenerate covariance: rank {rank} < {needed}")]
    DegenerateCovariance { rank: usize, needed: usize },
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("padding bits in final byte are not zero")]
    NonZeroPadding,
    #[error("invalid hex: {0}")]
    InvalidHex(String),
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
