//! Private content-provenance registry.
//!
//! Images enter as feature embeddings, become 96-bit perceptual hashes, are
//! encrypted bit by bit under a threshold key shared by several parties, and
//! are matched against queries with a gate-level Hamming-distance circuit.

pub mod bench;
pub mod boolcircuit;
pub mod cli;
pub mod hashcore;
pub mod mpfhe;
pub mod registry;
pub mod service;
pub mod stattest;
