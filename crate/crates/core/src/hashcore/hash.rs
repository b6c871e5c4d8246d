use std::fmt;

use super::HashError;

/// Number of bits in the production perceptual hash.
pub const HASH_BITS: usize = 96;

/// A fixed-length binary hash.
///
/// Bits are packed MSB-first: bit `i` lives in byte `i / 8` at position
/// `7 - i % 8`. Padding bits in the last byte are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PerceptualHash {
    len: usize,
    bytes: Vec<u8>,
}

impl PerceptualHash {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            bytes: vec![0; len.div_ceil(8)],
        }
    }

    pub fn ones(len: usize) -> Self {
        Self::from_bits((0..len).map(|_| true))
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut bytes = Vec::new();
        let mut len = 0;
        for bit in bits {
            if len % 8 == 0 {
                bytes.push(0);
            }
            if bit {
                bytes[len / 8] |= 0x80 >> (len % 8);
            }
            len += 1;
        }
        Self { len, bytes }
    }

    /// Draws a uniformly random hash.
    pub fn random<R: rand::Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self::from_bits((0..len).map(|_| rng.gen::<bool>()))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(
            i < self.len,
            "bit index {i} out of range for {}-bit hash",
            self.len
        );
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.bit(i))
    }

    pub fn set_bit(&mut self, i: usize, value: bool) {
        assert!(
            i < self.len,
            "bit index {i} out of range for {}-bit hash",
            self.len
        );
        let mask = 0x80 >> (i % 8);
        if value {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn complement(&self) -> Self {
        Self::from_bits(self.bits().map(|b| !b))
    }

    pub fn count_ones(&self) -> u32 {
        self.bytes.iter().map(|b| b.count_ones()).sum()
    }

    /// Packed representation, `ceil(len / 8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bytes.clone()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self, HashError> {
        let expected = len.div_ceil(8);
        if bytes.len() != expected {
            return Err(HashError::LengthMismatch {
                expected,
                actual: bytes.len(),
            });
        }
        if !len.is_multiple_of(8) {
            let pad_mask = 0xffu8 >> (len % 8);
            if bytes[expected - 1] & pad_mask != 0 {
                return Err(HashError::NonZeroPadding);
            }
        }
        Ok(Self {
            len,
            bytes: bytes.to_vec(),
        })
    }

    /// Lowercase hex of the packed bytes.
    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    pub fn from_hex(s: &str, len: usize) -> Result<Self, HashError> {
        let bytes = hex::decode(s.trim()).map_err(|e| HashError::InvalidHex(e.to_string()))?;
        Self::from_bytes(&bytes, len)
    }

    pub fn hamming_distance(&self, other: &Self) -> Result<u32, HashError> {
        if self.len != other.len {
            return Err(HashError::LengthMismatch {
                expected: self.len,
                actual: other.len,
            });
        }
        Ok(self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum())
    }

    /// Number of agreeing bits, `len - hamming_distance`.
    pub fn match_score(&self, other: &Self) -> Result<u32, HashError> {
        Ok(self.len as u32 - self.hamming_distance(other)?)
    }
}

impl fmt::Debug for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PerceptualHash({}b, {})", self.len, self.to_hex())
    }
}

pub fn hamming_distance(a: &PerceptualHash, b: &PerceptualHash) -> Result<u32, HashError> {
    a.hamming_distance(b)
}

pub fn match_score(a: &PerceptualHash, b: &PerceptualHash) -> Result<u32, HashError> {
    a.match_score(b)
}

pub fn serialize_hash(h: &PerceptualHash) -> Vec<u8> {
    h.to_bytes()
}

pub fn deserialize_hash(bytes: &[u8], len: usize) -> Result<PerceptualHash, HashError> {
    PerceptualHash::from_bytes(bytes, len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h4(bits: [u8; 4]) -> PerceptualHash {
        PerceptualHash::from_bits(bits.iter().map(|&b| b == 1))
    }

    #[test]
    fn hamming_examples() {
        let a = PerceptualHash::random(96, &mut rand::thread_rng());
        assert_eq!(a.hamming_distance(&a).unwrap(), 0);
        assert_eq!(a.hamming_distance(&a.complement()).unwrap(), 96);
        // 1010 vs 0110 differ in positions 0 and 1
        let (x, y) = (h4([1, 0, 1, 0]), h4([0, 1, 1, 0]));
        assert_eq!(x.hamming_distance(&y).unwrap(), 2);
        assert_eq!(x.match_score(&y).unwrap(), 2);
        assert_eq!(a.match_score(&a).unwrap(), 96);
        assert_eq!(a.match_score(&a.complement()).unwrap(), 0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = PerceptualHash::zeros(96);
        let b = PerceptualHash::zeros(95);
        assert!(matches!(
            a.hamming_distance(&b),
            Err(HashError::LengthMismatch { .. })
        ));
        assert!(matches!(
            deserialize_hash(&[0u8; 11], 96),
            Err(HashError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn serialization_layout() {
        assert_eq!(serialize_hash(&PerceptualHash::ones(96)), vec![0xff; 12]);
        let h = PerceptualHash::from_bits([true, false, false, false, false, false, false, true]);
        assert_eq!(serialize_hash(&h), vec![0x81]);
        assert_eq!(
            PerceptualHash::ones(96).to_hex(),
            "ffffffffffffffffffffffff"
        );
    }

    #[test]
    fn padding_bits_must_be_zero() {
        assert!(matches!(
            PerceptualHash::from_bytes(&[0b1010_0001], 4),
            Err(HashError::NonZeroPadding)
        ));
        let h = PerceptualHash::from_bytes(&[0b1010_0000], 4).unwrap();
        assert_eq!(h, h4([1, 0, 1, 0]));
    }

    #[test]
    fn round_trip_1000_random_hashes() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let h = PerceptualHash::random(96, &mut rng);
            assert_eq!(deserialize_hash(&serialize_hash(&h), 96).unwrap(), h);
            assert_eq!(PerceptualHash::from_hex(&h.to_hex(), 96).unwrap(), h);
        }
    }

    fn arb_hash(len: usize) -> impl Strategy<Value = PerceptualHash> {
        proptest::collection::vec(any::<bool>(), len).prop_map(PerceptualHash::from_bits)
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(a in arb_hash(96), b in arb_hash(96), c in arb_hash(96)) {
            let ab = a.hamming_distance(&b).unwrap();
            prop_assert_eq!(ab, b.hamming_distance(&a).unwrap());
            prop_assert_eq!(ab == 0, a == b);
            let ac = a.hamming_distance(&c).unwrap();
            let cb = c.hamming_distance(&b).unwrap();
            prop_assert!(ab <= ac + cb);
        }

        #[test]
        fn round_trip_any_length(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let h = PerceptualHash::from_bits(bits.clone());
            let back = deserialize_hash(&serialize_hash(&h), bits.len()).unwrap();
            prop_assert_eq!(back.bits().collect::<Vec<_>>(), bits);
        }
    }
}
