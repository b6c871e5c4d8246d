use std::ops::{Add, AddAssign, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{EncBitVector, EncUInt};

/// Identifies one backend instance; vectors remember where their bits came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendId(pub u64);

impl BackendId {
    pub fn fresh() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        Self(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

/// Gate evaluator over opaque encrypted bits.
///
/// Implementations must be usable from many threads at once, and gate results
/// may not depend on evaluation order.
pub trait BitBackend: Sync {
    type Bit: Clone + Send + Sync;

    fn id(&self) -> BackendId;
    /// A trivial (noiseless, public) encryption of `value`.
    fn constant(&self, value: bool) -> Self::Bit;
    fn xor(&self, a: &Self::Bit, b: &Self::Bit) -> Self::Bit;
    fn and(&self, a: &Self::Bit, b: &Self::Bit) -> Self::Bit;
    fn or(&self, a: &Self::Bit, b: &Self::Bit) -> Self::Bit;
    fn not(&self, a: &Self::Bit) -> Self::Bit;

    /// Whether circuits should fan independent gates out to the rayon pool.
    /// Worth it when a single gate costs milliseconds, not for cleartext bits.
    fn parallel_gates(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateCounts {
    pub xor: u64,
    pub and: u64,
    pub or: u64,
    pub not: u64,
}

impl GateCounts {
    pub fn total(&self) -> u64 {
        self.xor + self.and + self.or + self.not
    }
}

impl Add for GateCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            xor: self.xor + o.xor,
            and: self.and + o.and,
            or: self.or + o.or,
            not: self.not + o.not,
        }
    }
}

impl AddAssign for GateCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for GateCounts {
    type Output = Self;

    fn sub(self, o: Self) -> Self {
        Self {
            xor: self.xor - o.xor,
            and: self.and - o.and,
            or: self.or - o.or,
            not: self.not - o.not,
        }
    }
}

/// Counts gates flowing through a borrowed backend.
///
/// Each evaluation gets its own `Metered`, so concurrent evaluations do not
/// mix their telemetry.
pub struct Metered<'a, B: BitBackend> {
    inner: &'a B,
    xor: AtomicU64,
    and: AtomicU64,
    or: AtomicU64,
    not: AtomicU64,
}

impl<'a, B: BitBackend> Metered<'a, B> {
    pub fn new(inner: &'a B) -> Self {
        Self {
            inner,
            xor: AtomicU64::new(0),
            and: AtomicU64::new(0),
            or: AtomicU64::new(0),
            not: AtomicU64::new(0),
        }
    }

    pub fn counts(&self) -> GateCounts {
        GateCounts {
            xor: self.xor.load(Ordering::Relaxed),
            and: self.and.load(Ordering::Relaxed),
            or: self.or.load(Ordering::Relaxed),
            not: self.not.load(Ordering::Relaxed),
        }
    }
}

impl<B: BitBackend> BitBackend for Metered<'_, B> {
    type Bit = B::Bit;

    fn id(&self) -> BackendId {
        self.inner.id()
    }

    fn constant(&self, value: bool) -> Self::Bit {
        self.inner.constant(value)
    }

    fn xor(&self, a: &Self::Bit, b: &Self::Bit) -> Self::Bit {
        self.xor.fetch_add(1, Ordering::Relaxed);
        self.inner.xor(a, b)
    }

    fn and(&self, a: &Self::Bit, b: &Self::Bit) -> Self::Bit {
        self.and.fetch_add(1, Ordering::Relaxed);
        self.inner.and(a, b)
    }

    fn or(&self, a: &Self::Bit, b: &Self::Bit) -> Self::Bit {
        self.or.fetch_add(1, Ordering::Relaxed);
        self.inner.or(a, b)
    }

    fn not(&self, a: &Self::Bit) -> Self::Bit {
        self.not.fetch_add(1, Ordering::Relaxed);
        self.inner.not(a)
    }

    fn parallel_gates(&self) -> bool {
        self.inner.parallel_gates()
    }
}

/// Cleartext simulation bit. The value is only reachable through
/// [`ClearBackend::decrypt`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClearBit(bool);

/// Cleartext-simulation backend: gates are plain boolean operations.
///
/// Offers no confidentiality; it exists so every circuit can be checked
/// bit-exactly against its plaintext function.
#[derive(Debug)]
pub struct ClearBackend {
    id: BackendId,
    parallel: bool,
}

impl Default for ClearBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl ClearBackend {
    pub fn new() -> Self {
        Self {
            id: BackendId::fresh(),
            parallel: false,
        }
    }

    /// Same backend, but circuits dispatch independent gates through rayon.
    pub fn with_parallel_gates() -> Self {
        Self {
            id: BackendId::fresh(),
            parallel: true,
        }
    }

    pub fn encrypt(&self, value: bool) -> ClearBit {
        ClearBit(value)
    }

    pub fn decrypt(&self, bit: &ClearBit) -> bool {
        bit.0
    }

    pub fn encrypt_bits<I: IntoIterator<Item = bool>>(&self, bits: I) -> EncBitVector<ClearBit> {
        EncBitVector::new(self.id, bits.into_iter().map(ClearBit).collect())
    }

    pub fn decrypt_bits(&self, v: &EncBitVector<ClearBit>) -> Vec<bool> {
        v.bits().iter().map(|b| b.0).collect()
    }

    /// Little-endian encryption of `value` in `width` bits.
    pub fn encrypt_uint(&self, value: u64, width: usize) -> EncUInt<ClearBit> {
        EncUInt::new(
            self.id,
            (0..width)
                .map(|i| ClearBit(i < 64 && (value >> i) & 1 == 1))
                .collect(),
        )
    }

    pub fn decrypt_uint(&self, v: &EncUInt<ClearBit>) -> u64 {
        v.bits()
            .iter()
            .enumerate()
            .fold(0, |acc, (i, b)| acc | ((b.0 as u64) << i))
    }
}

impl BitBackend for ClearBackend {
    type Bit = ClearBit;

    fn id(&self) -> BackendId {
        self.id
    }

    fn constant(&self, value: bool) -> ClearBit {
        ClearBit(value)
    }

    fn xor(&self, a: &ClearBit, b: &ClearBit) -> ClearBit {
        ClearBit(a.0 ^ b.0)
    }

    fn and(&self, a: &ClearBit, b: &ClearBit) -> ClearBit {
        ClearBit(a.0 & b.0)
    }

    fn or(&self, a: &ClearBit, b: &ClearBit) -> ClearBit {
        ClearBit(a.0 | b.0)
    }

    fn not(&self, a: &ClearBit) -> ClearBit {
        ClearBit(!a.0)
    }

    fn parallel_gates(&self) -> bool {
        self.parallel
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clear_backend_laws() {
        let b = ClearBackend::new();
        for x in [false, true] {
            for y in [false, true] {
                let (ex, ey) = (b.encrypt(x), b.encrypt(y));
                assert_eq!(b.decrypt(&b.xor(&ex, &ey)), b.decrypt(&b.xor(&ey, &ex)));
                assert_eq!(b.decrypt(&b.and(&ex, &ey)), b.decrypt(&b.and(&ey, &ex)));
                // De Morgan
                let lhs = b.not(&b.and(&ex, &ey));
                let rhs = b.or(&b.not(&ex), &b.not(&ey));
                assert_eq!(b.decrypt(&lhs), b.decrypt(&rhs));
                assert_eq!(b.decrypt(&b.xor(&ex, &ey)), x ^ y);
            }
        }
    }

    #[test]
    fn metered_counts_each_gate_kind() {
        let b = ClearBackend::new();
        let m = Metered::new(&b);
        let one = m.constant(true);
        let x = m.xor(&one, &one);
        let y = m.and(&x, &one);
        let _ = m.or(&x, &y);
        let _ = m.not(&y);
        let _ = m.xor(&x, &y);
        assert_eq!(
            m.counts(),
            GateCounts {
                xor: 2,
                and: 1,
                or: 1,
                not: 1
            }
        );
        assert_eq!(m.counts().total(), 5);
        assert_eq!(m.id(), b.id());
    }

    #[test]
    fn uint_round_trip() {
        let b = ClearBackend::new();
        for v in 0..128 {
            assert_eq!(b.decrypt_uint(&b.encrypt_uint(v, 7)), v);
        }
    }
}
