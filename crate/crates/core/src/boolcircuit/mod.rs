//! Boolean circuits for private Hamming matching, written once against the
//! [`BitBackend`] gate interface.

mod backend;
mod circuits;

pub use backend::{BackendId, BitBackend, ClearBackend, ClearBit, GateCounts, Metered};
pub use circuits::{
    leq_const_threshold, match_circuit, or_tree, or_tree_depth, popcount_layers, popcount_tree,
    sum_tree, xor_array, MAX_UINT_WIDTH,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CircuitError {
    #[error("length mismatch: {left} vs {right} bits")]
    LengthMismatch { left: usize, right: usize },
    #[error("operands come from different backend instances")]
    BackendMismatch,
    #[error("empty bit vector")]
    EmptyVector,
    #[error("empty input")]
    EmptyInput,
    #[error("width {width} exceeds the supported maximum of {max} bits")]
    WidthOverflow { width: usize, max: usize },
}

/// A vector of individually encrypted bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncBitVector<T> {
    backend: BackendId,
    bits: Vec<T>,
}

impl<T> EncBitVector<T> {
    pub fn new(backend: BackendId, bits: Vec<T>) -> Self {
        Self { backend, bits }
    }

    pub fn backend(&self) -> BackendId {
        self.backend
    }

    pub fn bits(&self) -> &[T] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<T> {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// An encrypted unsigned integer, little-endian bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncUInt<T> {
    backend: BackendId,
    bits: Vec<T>,
}

impl<T> EncUInt<T> {
    pub fn new(backend: BackendId, bits: Vec<T>) -> Self {
        Self { backend, bits }
    }

    pub fn backend(&self) -> BackendId {
        self.backend
    }

    pub fn bits(&self) -> &[T] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<T> {
        self.bits
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }
}

/// Bits needed to represent every value in `0..=max`.
pub fn width_for(max: u64) -> usize {
    (64 - max.leading_zeros()) as usize
}
