use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cipher::{Ciphertext, EncryptedHash, SimEvaluator};
use super::MpfheError;
use crate::boolcircuit::{
    leq_const_threshold, or_tree, popcount_tree, sum_tree, xor_array, BitBackend, EncBitVector,
    EncUInt, GateCounts, Metered,
};

/// What the query reveals after decryption.
///
/// `Or` releases one membership bit. `Count` releases how many entries are
/// close, which leaks strictly more about the registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Or,
    Count,
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Self::Or => "or",
            Self::Count => "count",
        })
    }
}

impl FromStr for QueryMode {
    type Err = MpfheError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "or" => Ok(Self::Or),
            "count" => Ok(Self::Count),
            other => Err(MpfheError::Malformed(format!(
                "unknown query mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncResult<T> {
    Membership(T),
    Count(EncUInt<T>),
}

impl<T> EncResult<T> {
    pub fn bits(&self) -> &[T] {
        match self {
            Self::Membership(b) => std::slice::from_ref(b),
            Self::Count(c) => c.bits(),
        }
    }
}

/// Gates spent in each phase of one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseGates {
    pub xor: GateCounts,
    pub popcount: GateCounts,
    pub threshold: GateCounts,
}

impl PhaseGates {
    pub fn total(&self) -> GateCounts {
        self.xor + self.popcount + self.threshold
    }
}

/// Cumulative wall-clock milliseconds: XOR, through Hamming distance, through
/// the final reduction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub xor_ms: f64,
    pub hd_ms: f64,
    pub full_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryTelemetry {
    pub entries: usize,
    pub gates: PhaseGates,
    pub timing: PhaseTiming,
}

/// Runs the matching circuit of `query` against every entry, then reduces.
///
/// Entries are processed in parallel on the current rayon pool. Phases run
/// to completion one after another so their costs can be reported apart.
pub fn evaluate_circuit<B: BitBackend>(
    backend: &B,
    db: &[EncBitVector<B::Bit>],
    query: &EncBitVector<B::Bit>,
    threshold: &EncUInt<B::Bit>,
    mode: QueryMode,
) -> Result<(EncResult<B::Bit>, QueryTelemetry), MpfheError> {
    if db.is_empty() {
        return Err(MpfheError::EmptyDatabase);
    }
    let start = Instant::now();

    let xor_meter = Metered::new(backend);
    let diffs = db
        .par_iter()
        .map(|entry| xor_array(&xor_meter, query, entry))
        .collect::<Result<Vec<_>, _>>()?;
    let xor_done = start.elapsed();

    let pop_meter = Metered::new(backend);
    let distances = diffs
        .par_iter()
        .map(|d| popcount_tree(&pop_meter, d))
        .collect::<Result<Vec<_>, _>>()?;
    let hd_done = start.elapsed();

    let cmp_meter = Metered::new(backend);
    let matches = distances
        .par_iter()
        .map(|d| leq_const_threshold(&cmp_meter, d, threshold))
        .collect::<Result<Vec<_>, _>>()?;
    let result = match mode {
        QueryMode::Or => EncResult::Membership(or_tree(&cmp_meter, &matches)?),
        QueryMode::Count => EncResult::Count(sum_tree(&cmp_meter, &matches)?),
    };
    let full_done = start.elapsed();

    let telemetry = QueryTelemetry {
        entries: db.len(),
        gates: PhaseGates {
            xor: xor_meter.counts(),
            popcount: pop_meter.counts(),
            threshold: cmp_meter.counts(),
        },
        timing: PhaseTiming {
            xor_ms: xor_done.as_secs_f64() * 1e3,
            hd_ms: hd_done.as_secs_f64() * 1e3,
            full_ms: full_done.as_secs_f64() * 1e3,
        },
    };
    Ok((result, telemetry))
}

impl SimEvaluator {
    /// Wire-level query: imports ciphertexts, evaluates, re-masks the result.
    pub fn evaluate_query<R: Rng + ?Sized>(
        &self,
        db: &[EncryptedHash],
        query: &EncryptedHash,
        threshold: &Ciphertext,
        mode: QueryMode,
        rng: &mut R,
    ) -> Result<(Ciphertext, QueryTelemetry), MpfheError> {
        if db.is_empty() {
            return Err(MpfheError::EmptyDatabase);
        }
        let entries = db
            .par_iter()
            .map(|e| self.import_vector(e.ciphertext()))
            .collect::<Result<Vec<_>, _>>()?;
        let q = self.import_vector(query.ciphertext())?;
        let t = self.import_uint(threshold)?;
        let (result, telemetry) = evaluate_circuit(self.backend(), &entries, &q, &t, mode)?;
        Ok((self.export_bits(result.bits(), rng), telemetry))
    }
}
