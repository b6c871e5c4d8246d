use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::keys::{KeyDigest, PublicKey, SecretShare};
use super::{field, MpfheError};
use crate::boolcircuit::{ClearBackend, ClearBit, EncBitVector, EncUInt};
use crate::hashcore::{PerceptualHash, HASH_BITS};

const BIT_RECORD_LEN: usize = 9;

/// One encrypted bit on the wire: a fresh nonce and the bit masked by a pad
/// only the share quorum can reconstruct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireBit {
    pub nonce: u64,
    pub masked: bool,
}

fn pad(secret: u64, nonce: u64) -> bool {
    field::mul(secret, field::nonce_point(nonce)) & 1 == 1
}

/// Serialized per-bit ciphertexts under one key.
///
/// Layout: key digest (32 bytes), bit count (u32 LE), then per bit a nonce
/// (u64 LE) and the masked bit (u8).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    key_digest: KeyDigest,
    bits: Vec<WireBit>,
}

impl Ciphertext {
    pub fn key_digest(&self) -> KeyDigest {
        self.key_digest
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn wire_bits(&self) -> &[WireBit] {
        &self.bits
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(36 + self.bits.len() * BIT_RECORD_LEN);
        out.extend_from_slice(&self.key_digest.0);
        out.extend_from_slice(&(self.bits.len() as u32).to_le_bytes());
        for b in &self.bits {
            out.extend_from_slice(&b.nonce.to_le_bytes());
            out.push(b.masked as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MpfheError> {
        if bytes.len() < 36 {
            return Err(MpfheError::Malformed(
                "ciphertext shorter than its header".into(),
            ));
        }
        let key_digest = KeyDigest(bytes[..32].try_into().unwrap());
        let count = u32::from_le_bytes(bytes[32..36].try_into().unwrap()) as usize;
        let body = &bytes[36..];
        if body.len() != count * BIT_RECORD_LEN {
            return Err(MpfheError::Malformed(format!(
                "ciphertext declares {count} bits but carries {} bytes",
                body.len()
            )));
        }
        let bits = body
            .chunks_exact(BIT_RECORD_LEN)
            .map(|rec| {
                let masked = match rec[8] {
                    0 => false,
                    1 => true,
                    v => return Err(MpfheError::Malformed(format!("bit record flag {v}"))),
                };
                Ok(WireBit {
                    nonce: u64::from_le_bytes(rec[..8].try_into().unwrap()),
                    masked,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { key_digest, bits })
    }

    /// SHA-256 of the serialized form; decryption shares bind to it.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

/// Transforms serialized ciphertexts for transport. Real compression is
/// backend-specific; the default is the identity.
pub trait CompressionHook {
    fn compress(&self, bytes: &[u8]) -> Vec<u8>;
    fn decompress(&self, bytes: &[u8]) -> Result<Vec<u8>, MpfheError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityCompression;

impl CompressionHook for IdentityCompression {
    fn compress(&self, bytes: &[u8]) -> Vec<u8> {
        bytes.to_vec()
    }

    fn decompress(&self, bytes: &[u8]) -> Result<Vec<u8>, MpfheError> {
        Ok(bytes.to_vec())
    }
}

/// A 96-bit perceptual hash encrypted bit by bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedHash(Ciphertext);

impl EncryptedHash {
    pub fn from_ciphertext(ct: Ciphertext) -> Result<Self, MpfheError> {
        if ct.len() != HASH_BITS {
            return Err(MpfheError::LengthMismatch {
                expected: HASH_BITS,
                actual: ct.len(),
            });
        }
        Ok(Self(ct))
    }

    pub fn ciphertext(&self) -> &Ciphertext {
        &self.0
    }

    pub fn key_digest(&self) -> KeyDigest {
        self.0.key_digest
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MpfheError> {
        Self::from_ciphertext(Ciphertext::from_bytes(bytes)?)
    }

    pub fn compressed<C: CompressionHook>(&self, codec: &C) -> Vec<u8> {
        codec.compress(&self.to_bytes())
    }

    pub fn from_compressed<C: CompressionHook>(
        codec: &C,
        bytes: &[u8],
    ) -> Result<Self, MpfheError> {
        Self::from_bytes(&codec.decompress(bytes)?)
    }
}

fn encrypt_bits<R, I>(key: &PublicKey, bits: I, rng: &mut R) -> Ciphertext
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = bool>,
{
    let bits = bits
        .into_iter()
        .map(|b| {
            let nonce = rng.gen();
            WireBit {
                nonce,
                masked: b ^ pad(key.eval_key, nonce),
            }
        })
        .collect();
    Ciphertext {
        key_digest: key.digest,
        bits,
    }
}

/// Encrypts each bit of `h` individually under the aggregated key.
pub fn encrypt_hash<R: Rng + ?Sized>(
    key: &PublicKey,
    h: &PerceptualHash,
    rng: &mut R,
) -> Result<EncryptedHash, MpfheError> {
    key.validate()?;
    if h.len() != HASH_BITS {
        return Err(MpfheError::LengthMismatch {
            expected: HASH_BITS,
            actual: h.len(),
        });
    }
    EncryptedHash::from_ciphertext(encrypt_bits(key, h.bits(), rng))
}

/// Little-endian per-bit encryption of `t` in `width` bits.
pub fn encrypt_threshold<R: Rng + ?Sized>(
    key: &PublicKey,
    t: u64,
    width: usize,
    rng: &mut R,
) -> Result<Ciphertext, MpfheError> {
    key.validate()?;
    if width == 0 || width > 64 || (width < 64 && t >> width != 0) {
        return Err(MpfheError::WidthOverflow { value: t, width });
    }
    Ok(encrypt_bits(
        key,
        (0..width).map(|i| (t >> i) & 1 == 1),
        rng,
    ))
}

/// Gate-evaluation side of the simulation backend: moves ciphertexts between
/// their masked wire form and [`ClearBackend`] bits.
#[derive(Debug)]
pub struct SimEvaluator {
    key: PublicKey,
    backend: ClearBackend,
}

impl SimEvaluator {
    pub fn new(key: PublicKey) -> Result<Self, MpfheError> {
        key.validate()?;
        Ok(Self {
            key,
            backend: ClearBackend::new(),
        })
    }

    pub fn key(&self) -> &PublicKey {
        &self.key
    }

    pub fn backend(&self) -> &ClearBackend {
        &self.backend
    }

    fn unmask(&self, ct: &Ciphertext) -> Result<Vec<bool>, MpfheError> {
        if ct.key_digest != self.key.digest {
            return Err(MpfheError::KeyMismatch);
        }
        Ok(ct
            .bits
            .iter()
            .map(|b| b.masked ^ pad(self.key.eval_key, b.nonce))
            .collect())
    }

    pub fn import_vector(&self, ct: &Ciphertext) -> Result<EncBitVector<ClearBit>, MpfheError> {
        Ok(self.backend.encrypt_bits(self.unmask(ct)?))
    }

    pub fn import_uint(&self, ct: &Ciphertext) -> Result<EncUInt<ClearBit>, MpfheError> {
        let bits = self.unmask(ct)?;
        let v = self.backend.encrypt_bits(bits).into_bits();
        Ok(EncUInt::new(
            crate::boolcircuit::BitBackend::id(&self.backend),
            v,
        ))
    }

    /// Re-masks evaluated bits with fresh nonces.
    pub fn export_bits<R: Rng + ?Sized>(&self, bits: &[ClearBit], rng: &mut R) -> Ciphertext {
        let plain: Vec<bool> = bits.iter().map(|b| self.backend.decrypt(b)).collect();
        encrypt_bits(&self.key, plain, rng)
    }
}

/// A party's contribution towards decrypting one ciphertext.
///
/// Layout: party index (u32 LE), target ciphertext digest (32 bytes), word
/// count (u32 LE), then one u64 LE per encrypted bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecryptionShare {
    pub party: u32,
    pub ct_digest: [u8; 32],
    payload: Vec<u64>,
}

impl DecryptionShare {
    /// Number of bits this share can unmask.
    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * self.payload.len());
        out.extend_from_slice(&self.party.to_le_bytes());
        out.extend_from_slice(&self.ct_digest);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        for w in &self.payload {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MpfheError> {
        if bytes.len() < 40 {
            return Err(MpfheError::Malformed(
                "decryption share shorter than its header".into(),
            ));
        }
        let party = u32::from_le_bytes(bytes[..4].try_into().unwrap());
        let ct_digest = bytes[4..36].try_into().unwrap();
        let count = u32::from_le_bytes(bytes[36..40].try_into().unwrap()) as usize;
        let body = &bytes[40..];
        if body.len() != count * 8 {
            return Err(MpfheError::Malformed(
                "decryption share payload length".into(),
            ));
        }
        let payload = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            party,
            ct_digest,
            payload,
        })
    }
}

/// Computes this party's share for `ct`. Reveals nothing without a quorum.
pub fn partial_decrypt(
    share: &SecretShare,
    ct: &Ciphertext,
) -> Result<DecryptionShare, MpfheError> {
    if share.key_digest != ct.key_digest {
        return Err(MpfheError::KeyMismatch);
    }
    Ok(DecryptionShare {
        party: share.party.index,
        ct_digest: ct.digest(),
        payload: ct
            .bits
            .iter()
            .map(|b| field::mul(share.y, field::nonce_point(b.nonce)))
            .collect(),
    })
}

/// Decrypted query output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plaintext(pub Vec<bool>);

impl Plaintext {
    pub fn as_bool(&self) -> Option<bool> {
        match self.0.as_slice() {
            [b] => Some(*b),
            _ => None,
        }
    }

    /// Little-endian integer value.
    pub fn as_uint(&self) -> u64 {
        self.0
            .iter()
            .take(64)
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | ((b as u64) << i))
    }

    pub fn to_hash(&self) -> PerceptualHash {
        PerceptualHash::from_bits(self.0.iter().copied())
    }
}

/// Combines decryption shares from at least `m` distinct parties.
///
/// A repeated party is counted once. Every share must be bound to `ct`.
pub fn combine_shares(
    key: &PublicKey,
    shares: &[DecryptionShare],
    ct: &Ciphertext,
) -> Result<Plaintext, MpfheError> {
    if ct.key_digest != key.digest {
        return Err(MpfheError::KeyMismatch);
    }
    let digest = ct.digest();
    let mut distinct: BTreeMap<u32, &DecryptionShare> = BTreeMap::new();
    for s in shares {
        if s.ct_digest != digest {
            return Err(MpfheError::BindingMismatch);
        }
        if s.party >= key.n {
            return Err(MpfheError::UnknownParty(s.party));
        }
        if s.payload.len() != ct.len() {
            return Err(MpfheError::Malformed(
                "share payload does not match ciphertext length".into(),
            ));
        }
        distinct.entry(s.party).or_insert(s);
    }
    if distinct.len() < key.m as usize {
        return Err(MpfheError::DecryptionIncomplete {
            have: distinct.len(),
            need: key.m as usize,
        });
    }
    let quorum: Vec<&DecryptionShare> = distinct.values().take(key.m as usize).copied().collect();
    let xs: Vec<u64> = quorum.iter().map(|s| s.party as u64 + 1).collect();
    let lambdas = field::lagrange_at_zero(&xs);
    let bits = ct
        .bits
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let combined = quorum.iter().zip(&lambdas).fold(0, |acc, (s, l)| {
                field::add(acc, field::mul(*l, s.payload[i]))
            });
            b.masked ^ (combined & 1 == 1)
        })
        .collect();
    Ok(Plaintext(bits))
}
