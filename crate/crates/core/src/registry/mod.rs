//! Persistent store of signed, encrypted hash entries.
//!
//! Producers register an ed25519 verification key, then submit entries whose
//! signature covers the key digest, the ciphertext, the producer id and the
//! timestamp. The store keeps one append-only log file next to a sidecar
//! offset index.

mod codec;
mod entry;
mod store;

pub use entry::{
    signing_message, EntryId, ProducerIdentity, ProducerKey, RegistryEntry, VerificationReport,
};
pub use store::{RegistryStats, RegistryStore};

use crate::mpfhe::MpfheError;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("signature does not verify")]
    BadSignature,
    #[error("entry is encrypted under a different key")]
    KeyMismatch,
    #[error("duplicate entry id {0}")]
    DuplicateId(EntryId),
    #[error("entry {0} not found")]
    NotFound(EntryId),
    #[error("unknown producer {0:?}")]
    UnknownProducer(String),
    #[error("producer {0:?} is already registered with a different key")]
    ProducerConflict(String),
    #[error("integrity error at byte {offset}: {reason}")]
    IntegrityError { offset: u64, reason: String },
    #[error("malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Mpfhe(#[from] MpfheError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
