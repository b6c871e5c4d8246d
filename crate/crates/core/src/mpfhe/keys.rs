use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{field, MpfheError};

/// Identifier of the simulation backend, part of every key digest.
pub const SIM_BACKEND: &str = "clear-sim/v1";

/// SHA-256 of the public key bytes; binds ciphertexts to a key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyDigest(pub [u8; 32]);

impl KeyDigest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, MpfheError> {
        let bytes =
            hex::decode(s).map_err(|e| MpfheError::Malformed(format!("key digest: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| MpfheError::Malformed("key digest must be 32 bytes".into()))?;
        Ok(Self(arr))
    }
}

impl fmt::Debug for KeyDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyDigest({}..)", &self.to_hex()[..12])
    }
}

impl fmt::Display for KeyDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for KeyDigest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for KeyDigest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyId {
    pub index: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartySet {
    pub n: u32,
    pub m: u32,
    pub parties: Vec<PartyId>,
}

impl PartySet {
    pub fn party(&self, index: u32) -> Option<&PartyId> {
        self.parties.get(index as usize)
    }
}

/// The aggregated public key.
///
/// In the simulation backend the evaluation key is the shared secret itself:
/// encryption and gate evaluation need it, so the simulation offers no
/// confidentiality. Threshold decryption still goes through Shamir shares.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKey {
    pub backend: String,
    pub n: u32,
    pub m: u32,
    pub(crate) eval_key: u64,
    pub digest: KeyDigest,
}

impl PublicKey {
    pub(crate) fn new(n: u32, m: u32, eval_key: u64) -> Self {
        let digest = Self::compute_digest(SIM_BACKEND, n, m, eval_key);
        Self {
            backend: SIM_BACKEND.to_owned(),
            n,
            m,
            eval_key,
            digest,
        }
    }

    fn compute_digest(backend: &str, n: u32, m: u32, eval_key: u64) -> KeyDigest {
        let mut h = Sha256::new();
        h.update((backend.len() as u32).to_le_bytes());
        h.update(backend.as_bytes());
        h.update(n.to_le_bytes());
        h.update(m.to_le_bytes());
        h.update(eval_key.to_le_bytes());
        KeyDigest(h.finalize().into())
    }

    /// Checks backend and digest after loading from untrusted storage.
    pub fn validate(&self) -> Result<(), MpfheError> {
        if self.backend != SIM_BACKEND {
            return Err(MpfheError::KeyMismatch);
        }
        if self.m < 2 || self.m > self.n || self.eval_key >= field::MODULUS {
            return Err(MpfheError::Malformed(
                "public key parameters out of range".into(),
            ));
        }
        if Self::compute_digest(&self.backend, self.n, self.m, self.eval_key) != self.digest {
            return Err(MpfheError::KeyMismatch);
        }
        Ok(())
    }
}

/// One party's Shamir share of the decryption secret.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretShare {
    pub party: PartyId,
    pub key_digest: KeyDigest,
    pub(crate) y: u64,
}

impl SecretShare {
    /// Evaluation point of this share.
    pub fn x(&self) -> u64 {
        self.party.index as u64 + 1
    }
}

impl fmt::Debug for SecretShare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretShare")
            .field("party", &self.party)
            .field("key_digest", &self.key_digest)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyMaterial {
    pub public: PublicKey,
    pub shares: Vec<SecretShare>,
}

/// Dealer-free m-of-n key generation.
///
/// Every party samples its own degree `m - 1` polynomial; the shared secret is
/// the sum of the constant terms and party `i` holds the sum of all
/// polynomials at `x = i + 1`. Deterministic in `seed`.
pub fn setup(n: u32, m: u32, seed: u64) -> Result<(PartySet, KeyMaterial), MpfheError> {
    let names = (0..n).map(|i| format!("party-{i}")).collect::<Vec<_>>();
    setup_named(&names, m, seed)
}

pub fn setup_named(
    names: &[String],
    m: u32,
    seed: u64,
) -> Result<(PartySet, KeyMaterial), MpfheError> {
    let n = names.len() as u32;
    if n < 2 || m < 2 || m > n {
        return Err(MpfheError::InvalidThreshold { n, m });
    }
    let parties: Vec<PartyId> = names
        .iter()
        .enumerate()
        .map(|(i, name)| PartyId {
            index: i as u32,
            name: name.clone(),
        })
        .collect();

    let polys: Vec<Vec<u64>> = (0..n)
        .map(|j| {
            let mut seed_bytes = [0u8; 32];
            seed_bytes[..8].copy_from_slice(&seed.to_le_bytes());
            seed_bytes[8..12].copy_from_slice(&j.to_le_bytes());
            let mut rng = ChaCha20Rng::from_seed(seed_bytes);
            (0..m).map(|_| field::sample(&mut rng)).collect()
        })
        .collect();

    let secret = polys.iter().fold(0, |acc, p| field::add(acc, p[0]));
    let public = PublicKey::new(n, m, secret);
    let shares = parties
        .iter()
        .map(|party| {
            let x = party.index as u64 + 1;
            let y = polys
                .iter()
                .fold(0, |acc, p| field::add(acc, field::eval_poly(p, x)));
            SecretShare {
                party: party.clone(),
                key_digest: public.digest,
                y,
            }
        })
        .collect();

    Ok((PartySet { n, m, parties }, KeyMaterial { public, shares }))
}
