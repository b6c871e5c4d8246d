use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::codec::{Reader, Writer};
use super::RegistryError;
use crate::mpfhe::{EncryptedHash, KeyDigest};

/// 16-byte entry identifier, rendered as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntryId(pub [u8; 16]);

impl EntryId {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        Self(b)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EntryId({})", self.to_hex())
    }
}

impl FromStr for EntryId {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes =
            hex::decode(s).map_err(|e| RegistryError::Malformed(format!("entry id: {e}")))?;
        let arr = bytes
            .try_into()
            .map_err(|_| RegistryError::Malformed("entry id must be 16 bytes".into()))?;
        Ok(Self(arr))
    }
}

impl Serialize for EntryId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for EntryId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// A content-producing organization and the key its entries are signed with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducerIdentity {
    pub producer_id: String,
    #[serde(with = "hex_key")]
    pub verifying_key: [u8; 32],
    #[serde(default)]
    pub display_name: String,
}

impl ProducerIdentity {
    pub fn new(
        producer_id: &str,
        verifying_key: [u8; 32],
        display_name: &str,
    ) -> Result<Self, RegistryError> {
        VerifyingKey::from_bytes(&verifying_key).map_err(|_| {
            RegistryError::Malformed("verification key is not a valid ed25519 point".into())
        })?;
        if producer_id.is_empty() {
            return Err(RegistryError::Malformed("empty producer id".into()));
        }
        Ok(Self {
            producer_id: producer_id.to_owned(),
            verifying_key,
            display_name: display_name.to_owned(),
        })
    }

    fn key(&self) -> Result<VerifyingKey, RegistryError> {
        VerifyingKey::from_bytes(&self.verifying_key).map_err(|_| RegistryError::BadSignature)
    }

    pub(crate) fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(self.producer_id.as_bytes())
            .raw(&self.verifying_key)
            .bytes(self.display_name.as_bytes());
        w.0
    }

    pub(crate) fn decode(buf: &[u8]) -> Result<Self, RegistryError> {
        let mut r = Reader::new(buf);
        let id = r.string()?;
        let vk = r.array::<32>()?;
        let name = r.string()?;
        r.finish()?;
        Self::new(&id, vk, &name)
    }
}

/// A producer's signing key together with its public identity.
#[derive(Clone, Serialize, Deserialize)]
pub struct ProducerKey {
    pub identity: ProducerIdentity,
    #[serde(with = "hex_key")]
    secret_key: [u8; 32],
}

impl ProducerKey {
    pub fn generate<R: RngCore + CryptoRng>(
        producer_id: &str,
        display_name: &str,
        rng: &mut R,
    ) -> Self {
        let sk = SigningKey::generate(rng);
        Self {
            identity: ProducerIdentity {
                producer_id: producer_id.to_owned(),
                verifying_key: sk.verifying_key().to_bytes(),
                display_name: display_name.to_owned(),
            },
            secret_key: sk.to_bytes(),
        }
    }

    pub fn producer_id(&self) -> &str {
        &self.identity.producer_id
    }

    /// Signs `hash` at `created_at`; the entry id is derived from the signature.
    pub fn sign_entry(&self, hash: EncryptedHash, created_at: u64) -> RegistryEntry {
        let msg = signing_message(&hash, &self.identity.producer_id, created_at);
        let sig = SigningKey::from_bytes(&self.secret_key)
            .sign(&msg)
            .to_bytes();
        let digest = Sha256::digest(sig);
        RegistryEntry {
            entry_id: EntryId(digest[..16].try_into().unwrap()),
            encrypted_hash: hash,
            producer: self.identity.producer_id.clone(),
            signature: sig,
            created_at,
            metadata: BTreeMap::new(),
        }
    }
}

impl fmt::Debug for ProducerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProducerKey")
            .field("identity", &self.identity)
            .finish_non_exhaustive()
    }
}

/// Canonical signed bytes: key digest, length-prefixed ciphertext, length-prefixed
/// producer id, timestamp; integers little-endian.
pub fn signing_message(hash: &EncryptedHash, producer: &str, created_at: u64) -> Vec<u8> {
    let mut w = Writer::default();
    w.raw(&hash.key_digest().0)
        .bytes(&hash.to_bytes())
        .bytes(producer.as_bytes())
        .u64(created_at);
    w.0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub entry_id: EntryId,
    pub encrypted_hash: EncryptedHash,
    pub producer: String,
    pub signature: [u8; 64],
    /// Seconds since the Unix epoch, UTC.
    pub created_at: u64,
    pub metadata: BTreeMap<String, String>,
}

impl RegistryEntry {
    pub fn with_metadata(mut self, key: &str, value: &str) -> Self {
        self.metadata.insert(key.to_owned(), value.to_owned());
        self
    }

    pub fn key_digest(&self) -> KeyDigest {
        self.encrypted_hash.key_digest()
    }

    pub fn verify_signature(&self, producer: &ProducerIdentity) -> Result<(), RegistryError> {
        if producer.producer_id != self.producer {
            return Err(RegistryError::BadSignature);
        }
        let msg = signing_message(&self.encrypted_hash, &self.producer, self.created_at);
        producer
            .key()?
            .verify_strict(&msg, &Signature::from_bytes(&self.signature))
            .map_err(|_| RegistryError::BadSignature)
    }

    /// Binary record payload, as stored in the log.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.raw(&self.entry_id.0)
            .u64(self.created_at)
            .bytes(self.producer.as_bytes())
            .bytes(&self.encrypted_hash.to_bytes())
            .raw(&self.signature)
            .u32(self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            w.bytes(k.as_bytes()).bytes(v.as_bytes());
        }
        w.0
    }

    pub fn decode(buf: &[u8]) -> Result<Self, RegistryError> {
        let mut r = Reader::new(buf);
        let entry_id = EntryId(r.array()?);
        let created_at = r.u64()?;
        let producer = r.string()?;
        let encrypted_hash = EncryptedHash::from_bytes(r.bytes()?)?;
        let signature = r.array()?;
        let n = r.u32()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..n {
            let k = r.string()?;
            metadata.insert(k, r.string()?);
        }
        r.finish()?;
        Ok(Self {
            entry_id,
            encrypted_hash,
            producer,
            signature,
            created_at,
            metadata,
        })
    }
}

/// JSON form used by the HTTP API and the export command.
#[derive(Serialize, Deserialize)]
struct EntryJson {
    entry_id: EntryId,
    producer: String,
    created_at: u64,
    ciphertext: String,
    signature: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

impl Serialize for RegistryEntry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        EntryJson {
            entry_id: self.entry_id,
            producer: self.producer.clone(),
            created_at: self.created_at,
            ciphertext: B64.encode(self.encrypted_hash.to_bytes()),
            signature: B64.encode(self.signature),
            metadata: self.metadata.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RegistryEntry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let j = EntryJson::deserialize(d)?;
        let ct = B64.decode(&j.ciphertext).map_err(D::Error::custom)?;
        let sig = B64.decode(&j.signature).map_err(D::Error::custom)?;
        Ok(Self {
            entry_id: j.entry_id,
            encrypted_hash: EncryptedHash::from_bytes(&ct).map_err(D::Error::custom)?,
            producer: j.producer,
            signature: sig
                .try_into()
                .map_err(|_| D::Error::custom("signature must be 64 bytes"))?,
            created_at: j.created_at,
            metadata: j.metadata,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub entry_id: EntryId,
    pub producer: String,
    pub display_name: String,
    pub created_at: u64,
    pub key_digest: KeyDigest,
    pub signature_valid: bool,
    pub key_matches: bool,
    /// Hex of the record checksum as found on disk.
    pub checksum: String,
}

impl VerificationReport {
    pub fn ok(&self) -> bool {
        self.signature_valid && self.key_matches
    }
}

mod hex_key {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(k))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        use serde::de::Error;
        let b = hex::decode(String::deserialize(d)?).map_err(D::Error::custom)?;
        b.try_into()
            .map_err(|_| D::Error::custom("key must be 32 bytes"))
    }
}
