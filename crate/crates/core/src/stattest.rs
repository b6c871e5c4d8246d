//! Exact binomial statistics for the bit-match test.
//!
//! Under the null model the bits of two unrelated hashes agree independently
//! with probability 1/2, so the match score is `Binomial(k, 1/2)`. That model
//! assumes independent bits; real feature extractors may violate it and no
//! correction is applied here.

use std::fmt;
use std::io::Write;

use num_bigint::BigUint;
use num_traits::{Float, One, ToPrimitive, Zero};

use crate::hashcore::{HashError, PerceptualHash};

#[derive(Debug, thiserror::Error)]
pub enum StatError {
    #[error("threshold {tau} out of range for k = {k}")]
    OutOfRange { tau: u32, k: u32 },
    #[error("target false-positive rate must be in (0, 1], got {0}")]
    InvalidTarget(f64),
    #[error("target {target} is below 2^-{k}, the smallest achievable rate")]
    Unachievable { target: f64, k: u32 },
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Minimum number of matching bits `tau` out of `k`.
///
/// The equivalent distance form is `t = k - tau`: a pair matches when its
/// Hamming distance is at most `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatchThreshold {
    tau: u32,
    k: u32,
}

impl MatchThreshold {
    pub fn new(tau: u32, k: u32) -> Result<Self, StatError> {
        if tau > k {
            return Err(StatError::OutOfRange { tau, k });
        }
        Ok(Self { tau, k })
    }

    pub fn from_distance(t: u32, k: u32) -> Result<Self, StatError> {
        if t > k {
            return Err(StatError::OutOfRange { tau: t, k });
        }
        Ok(Self { tau: k - t, k })
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// Maximum Hamming distance still counted as a match.
    pub fn distance(&self) -> u32 {
        self.k - self.tau
    }

    pub fn is_match(&self, a: &PerceptualHash, b: &PerceptualHash) -> Result<bool, StatError> {
        Ok(a.match_score(b)? >= self.tau)
    }
}

/// A probability `numerator / 2^k` held exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactProbability {
    numerator: BigUint,
    k: u32,
}

impl ExactProbability {
    pub fn numerator(&self) -> &BigUint {
        &self.numerator
    }

    pub fn denominator(&self) -> BigUint {
        BigUint::one() << self.k
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn to_f64(&self) -> f64 {
        if self.numerator.is_zero() {
            return 0.0;
        }
        let shift = self.numerator.bits().saturating_sub(64);
        let mantissa = (&self.numerator >> shift).to_u64().unwrap() as f64;
        let exp = shift as i64 - self.k as i64;
        mantissa * 2f64.powi(exp.clamp(i32::MIN as i64, i32::MAX as i64) as i32)
    }

    /// Exact comparison `self <= target`.
    pub fn le_f64(&self, target: f64) -> bool {
        if target.is_nan() || target < 0.0 {
            return false;
        }
        if target.is_infinite() {
            return true;
        }
        let (mantissa, exp, _) = target.integer_decode();
        let mantissa = BigUint::from(mantissa);
        let shift = exp as i64 + self.k as i64;
        if shift >= 0 {
            self.numerator <= mantissa << shift as u64
        } else {
            (&self.numerator << (-shift) as u64) <= mantissa
        }
    }
}

impl fmt::Display for ExactProbability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^{}", self.numerator, self.k)
    }
}

/// Upper tails `P(X >= tau)` for `tau = 0..=k`, `X ~ Binomial(k, 1/2)`.
pub fn fpr_table(k: u32) -> Vec<ExactProbability> {
    let mut coeffs = Vec::with_capacity(k as usize + 1);
    let mut c = BigUint::one();
    for i in 0..=k {
        coeffs.push(c.clone());
        c = c * (k - i) / (i + 1);
    }
    let mut tails = vec![BigUint::zero(); k as usize + 1];
    let mut acc = BigUint::zero();
    for i in (0..=k as usize).rev() {
        acc += &coeffs[i];
        tails[i] = acc.clone();
    }
    tails
        .into_iter()
        .map(|numerator| ExactProbability { numerator, k })
        .collect()
}

/// Probability that an unrelated pair matches at least `tau` of `k` bits.
pub fn fpr(tau: u32, k: u32) -> Result<ExactProbability, StatError> {
    if tau > k {
        return Err(StatError::OutOfRange { tau, k });
    }
    let mut c = BigUint::one();
    let mut sum = BigUint::zero();
    for i in 0..=k {
        if i >= tau {
            sum += &c;
        }
        c = c * (k - i) / (i + 1);
    }
    Ok(ExactProbability { numerator: sum, k })
}

/// Smallest `tau` whose false-positive rate does not exceed `target`.
pub fn threshold_for_fpr(target: f64, k: u32) -> Result<MatchThreshold, StatError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(StatError::InvalidTarget(target));
    }
    fpr_table(k)
        .iter()
        .position(|p| p.le_f64(target))
        .map(|tau| MatchThreshold { tau: tau as u32, k })
        .ok_or(StatError::Unachievable { target, k })
}

type HashPair = (PerceptualHash, PerceptualHash);

fn match_scores(pairs: &[HashPair]) -> Result<Vec<u32>, StatError> {
    if pairs.is_empty() {
        return Err(StatError::EmptyInput);
    }
    pairs
        .iter()
        .map(|(a, b)| a.match_score(b).map_err(StatError::from))
        .collect()
}

/// Fraction of pairs whose match score is at least `tau`.
pub fn tpr_empirical(pairs: &[HashPair], tau: u32) -> Result<f64, StatError> {
    let scores = match_scores(pairs)?;
    let hits = scores.iter().filter(|&&s| s >= tau).count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Mean fraction of agreeing bits.
pub fn bit_accuracy(pairs: &[HashPair]) -> Result<f64, StatError> {
    let scores = match_scores(pairs)?;
    let total: f64 = pairs
        .iter()
        .zip(&scores)
        .map(|((a, _), &s)| s as f64 / a.len() as f64)
        .sum();
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocPoint {
    pub tau: u32,
    pub tpr: f64,
    pub fpr: ExactProbability,
}

/// One point per threshold `tau = 0..=k`.
pub fn roc_curve(pairs: &[HashPair], k: u32) -> Result<Vec<RocPoint>, StatError> {
    let scores = match_scores(pairs)?;
    if let Some((a, _)) = pairs.iter().find(|(a, _)| a.len() != k as usize) {
        return Err(HashError::LengthMismatch {
            expected: k as usize,
            actual: a.len(),
        }
        .into());
    }
    // histogram then suffix sums
    let mut hist = vec![0usize; k as usize + 2];
    for &s in &scores {
        hist[s as usize] += 1;
    }
    for i in (0..=k as usize).rev() {
        hist[i] += hist[i + 1];
    }
    let n = scores.len() as f64;
    Ok(fpr_table(k)
        .into_iter()
        .enumerate()
        .map(|(tau, fpr)| RocPoint {
            tau: tau as u32,
            tpr: hist[tau] as f64 / n,
            fpr,
        })
        .collect())
}

/// `%.6g`-style rendering.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_owned()
        } else {
            s
        }
    };
    if (-5..6).contains(&exp) {
        trim(format!("{:.*}", (5 - exp) as usize, v))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa.to_owned()), sign, exp.abs())
    }
}

/// Writes `tau,tpr,fpr,fpr_exact` rows.
pub fn write_roc_csv<W: Write>(points: &[RocPoint], out: W) -> Result<(), StatError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "tpr", "fpr", "fpr_exact"])?;
    for p in points {
        w.write_record([
            p.tau.to_string(),
            p.tpr.to_string(),
            format_sig6(p.fpr.to_f64()),
            p.fpr.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
