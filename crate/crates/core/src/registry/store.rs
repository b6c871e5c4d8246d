use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::codec::{checksum, frame, CHECKSUM_LEN};
use super::entry::{EntryId, ProducerIdentity, RegistryEntry, VerificationReport};
use super::RegistryError;
use crate::mpfhe::{EncryptedHash, KeyDigest};

const LOG_MAGIC: &[u8; 4] = b"PRLG";
const INDEX_MAGIC: &[u8; 4] = b"PRIX";
const VERSION: u16 = 1;
const HEADER_LEN: u64 = 4 + 2 + 2 + 32;
const INDEX_HEADER_LEN: usize = 8;
const INDEX_RECORD_LEN: usize = 13;

const TAG_PRODUCER: u8 = 1;
const TAG_ENTRY: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct IndexRecord {
    offset: u64,
    len: u32,
    tag: u8,
}

impl IndexRecord {
    fn encode(&self) -> [u8; INDEX_RECORD_LEN] {
        let mut out = [0u8; INDEX_RECORD_LEN];
        out[..8].copy_from_slice(&self.offset.to_le_bytes());
        out[8..12].copy_from_slice(&self.len.to_le_bytes());
        out[12] = self.tag;
        out
    }
}

struct StoredEntry {
    entry: Arc<RegistryEntry>,
    offset: u64,
    checksum: [u8; CHECKSUM_LEN],
}

#[derive(Default)]
struct State {
    entries: Vec<StoredEntry>,
    by_id: HashMap<EntryId, usize>,
    by_producer: HashMap<String, Vec<usize>>,
    producers: BTreeMap<String, ProducerIdentity>,
}

struct Appender {
    log: File,
    index: File,
    end: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryStats {
    pub entries: usize,
    pub producers: usize,
    pub log_bytes: u64,
}

/// Append-only registry backed by `<path>` and the index `<path>.idx`.
///
/// Log layout: magic `PRLG`, u16 version, u16 reserved, 32-byte key digest,
/// then records framed as u32 LE payload length, payload, 8-byte checksum
/// (truncated SHA-256). The first payload byte tags the record kind.
///
/// Inserts are serialized through one appender; readers take a shared lock
/// and always see a prefix of the log.
pub struct RegistryStore {
    path: PathBuf,
    key_digest: KeyDigest,
    appender: Mutex<Appender>,
    state: RwLock<State>,
}

fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

fn integrity(offset: u64, reason: impl Into<String>) -> RegistryError {
    RegistryError::IntegrityError {
        offset,
        reason: reason.into(),
    }
}

impl RegistryStore {
    /// Creates an empty store; fails if `path` exists.
    pub fn create(path: impl AsRef<Path>, key_digest: KeyDigest) -> Result<Self, RegistryError> {
        let path = path.as_ref().to_path_buf();
        let mut log = OpenOptions::new()
            .read(true)
            .append(true)
            .create_new(true)
            .open(&path)?;
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(LOG_MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.extend_from_slice(&0u16.to_le_bytes());
        header.extend_from_slice(&key_digest.0);
        log.write_all(&header)?;
        log.sync_all()?;
        let index = write_index(&index_path(&path), &[])?;
        Ok(Self {
            path,
            key_digest,
            appender: Mutex::new(Appender {
                log,
                index,
                end: HEADER_LEN,
            }),
            state: RwLock::new(State::default()),
        })
    }

    /// Opens an existing store, checking every record checksum and signature.
    ///
    /// A partially written final record (a crash mid-append) is cut off.
    /// The index is rewritten when missing or stale.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref().to_path_buf();
        let mut log = OpenOptions::new().read(true).append(true).open(&path)?;
        let mut bytes = Vec::new();
        log.read_to_end(&mut bytes)?;
        if bytes.len() < HEADER_LEN as usize || &bytes[..4] != LOG_MAGIC {
            return Err(integrity(0, "not a registry log"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(integrity(4, format!("unsupported log version {version}")));
        }
        let key_digest = KeyDigest(bytes[8..40].try_into().unwrap());

        let mut state = State::default();
        let mut records = Vec::new();
        let mut pos = HEADER_LEN as usize;
        while pos < bytes.len() {
            let rest = &bytes[pos..];
            if rest.len() < 4 {
                break;
            }
            let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
            if rest.len() < 4 + len + CHECKSUM_LEN {
                break;
            }
            let payload = &rest[4..4 + len];
            let sum: [u8; CHECKSUM_LEN] = rest[4 + len..4 + len + CHECKSUM_LEN].try_into().unwrap();
            if checksum(payload) != sum {
                return Err(integrity(pos as u64, "record checksum mismatch"));
            }
            let Some((&tag, body)) = payload.split_first() else {
                return Err(integrity(pos as u64, "empty record"));
            };
            let wrap = |e: RegistryError| integrity(pos as u64, e.to_string());
            match tag {
                TAG_PRODUCER => {
                    let p = ProducerIdentity::decode(body).map_err(wrap)?;
                    state.producers.insert(p.producer_id.clone(), p);
                }
                TAG_ENTRY => {
                    let e = RegistryEntry::decode(body).map_err(wrap)?;
                    let producer = state
                        .producers
                        .get(&e.producer)
                        .ok_or_else(|| integrity(pos as u64, "entry precedes its producer"))?;
                    e.verify_signature(producer).map_err(wrap)?;
                    if e.key_digest() != key_digest {
                        return Err(integrity(pos as u64, "entry under a foreign key"));
                    }
                    if state.by_id.contains_key(&e.entry_id) {
                        return Err(integrity(pos as u64, "duplicate entry id"));
                    }
                    state.push(e, pos as u64, sum);
                }
                other => return Err(integrity(pos as u64, format!("unknown record tag {other}"))),
            }
            records.push(IndexRecord {
                offset: pos as u64,
                len: len as u32,
                tag,
            });
            pos += 4 + len + CHECKSUM_LEN;
        }
        if pos < bytes.len() {
            log.set_len(pos as u64)?;
            log.sync_all()?;
        }

        let idx_path = index_path(&path);
        let expected = index_bytes(&records);
        let index = match std::fs::read(&idx_path) {
            Ok(existing) if existing == expected => {
                OpenOptions::new().append(true).open(&idx_path)?
            }
            _ => write_index(&idx_path, &records)?,
        };
        Ok(Self {
            path,
            key_digest,
            appender: Mutex::new(Appender {
                log,
                index,
                end: pos as u64,
            }),
            state: RwLock::new(state),
        })
    }

    /// Opens `path` if it exists, otherwise creates it. An existing store
    /// under another key is a `KeyMismatch`.
    pub fn open_or_create(
        path: impl AsRef<Path>,
        key_digest: KeyDigest,
    ) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        if path.exists() {
            let store = Self::open(path)?;
            if store.key_digest != key_digest {
                return Err(RegistryError::KeyMismatch);
            }
            Ok(store)
        } else {
            Self::create(path, key_digest)
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn index_path(&self) -> PathBuf {
        index_path(&self.path)
    }

    pub fn key_digest(&self) -> KeyDigest {
        self.key_digest
    }

    pub fn len(&self) -> usize {
        self.state.read().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> RegistryStats {
        let end = self.appender.lock().unwrap().end;
        let st = self.state.read().unwrap();
        RegistryStats {
            entries: st.entries.len(),
            producers: st.producers.len(),
            log_bytes: end,
        }
    }

    pub fn producer(&self, id: &str) -> Option<ProducerIdentity> {
        self.state.read().unwrap().producers.get(id).cloned()
    }

    /// Registers a producer key. Re-registering the same identity is a no-op.
    pub fn register_producer(&self, producer: ProducerIdentity) -> Result<(), RegistryError> {
        let mut app = self.appender.lock().unwrap();
        if let Some(existing) = self.producer(&producer.producer_id) {
            if existing == producer {
                return Ok(());
            }
            return Err(RegistryError::ProducerConflict(producer.producer_id));
        }
        let mut payload = vec![TAG_PRODUCER];
        payload.extend(producer.encode());
        app.append(&payload)?;
        self.state
            .write()
            .unwrap()
            .producers
            .insert(producer.producer_id.clone(), producer);
        Ok(())
    }

    /// Verifies and durably appends an entry.
    pub fn insert_entry(&self, entry: RegistryEntry) -> Result<EntryId, RegistryError> {
        let mut app = self.appender.lock().unwrap();
        {
            let st = self.state.read().unwrap();
            let producer = st
                .producers
                .get(&entry.producer)
                .ok_or_else(|| RegistryError::UnknownProducer(entry.producer.clone()))?;
            entry.verify_signature(producer)?;
            if entry.key_digest() != self.key_digest {
                return Err(RegistryError::KeyMismatch);
            }
            if st.by_id.contains_key(&entry.entry_id) {
                return Err(RegistryError::DuplicateId(entry.entry_id));
            }
        }
        let mut payload = vec![TAG_ENTRY];
        payload.extend(entry.encode());
        let offset = app.append(&payload)?;
        let id = entry.entry_id;
        self.state
            .write()
            .unwrap()
            .push(entry, offset, checksum(&payload));
        Ok(id)
    }

    /// Encrypted hashes in insertion order, optionally for one producer.
    pub fn scan_for_query(&self, producer: Option<&str>) -> Vec<EncryptedHash> {
        let st = self.state.read().unwrap();
        match producer {
            None => st
                .entries
                .iter()
                .map(|e| e.entry.encrypted_hash.clone())
                .collect(),
            Some(p) => st
                .by_producer
                .get(p)
                .map(|ix| {
                    ix.iter()
                        .map(|&i| st.entries[i].entry.encrypted_hash.clone())
                        .collect()
                })
                .unwrap_or_default(),
        }
    }

    pub fn get(&self, id: &EntryId) -> Option<Arc<RegistryEntry>> {
        let st = self.state.read().unwrap();
        st.by_id.get(id).map(|&i| st.entries[i].entry.clone())
    }

    /// All entries in insertion order.
    pub fn entries(&self) -> Vec<Arc<RegistryEntry>> {
        self.state
            .read()
            .unwrap()
            .entries
            .iter()
            .map(|e| e.entry.clone())
            .collect()
    }

    /// Re-reads the record from disk and re-checks checksum, signature and key.
    pub fn verify_entry(&self, id: &EntryId) -> Result<VerificationReport, RegistryError> {
        let (offset, sum, producer) = {
            let st = self.state.read().unwrap();
            let &i = st.by_id.get(id).ok_or(RegistryError::NotFound(*id))?;
            let e = &st.entries[i];
            (
                e.offset,
                e.checksum,
                st.producers.get(&e.entry.producer).cloned(),
            )
        };
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(offset))?;
        let mut len = [0u8; 4];
        f.read_exact(&mut len)
            .map_err(|_| integrity(offset, "record truncated"))?;
        let len = u32::from_le_bytes(len) as usize;
        let mut rest = vec![0u8; len + CHECKSUM_LEN];
        f.read_exact(&mut rest)
            .map_err(|_| integrity(offset, "record truncated"))?;
        let (payload, stored) = rest.split_at(len);
        if stored != sum {
            return Err(integrity(
                offset,
                "record checksum changed since it was written",
            ));
        }
        if checksum(payload) != sum {
            return Err(integrity(offset, "record checksum mismatch"));
        }
        if payload.first() != Some(&TAG_ENTRY) {
            return Err(integrity(offset, "record is not an entry"));
        }
        let entry =
            RegistryEntry::decode(&payload[1..]).map_err(|e| integrity(offset, e.to_string()))?;
        if entry.entry_id != *id {
            return Err(integrity(offset, "record holds a different entry"));
        }
        let signature_valid = producer
            .as_ref()
            .is_some_and(|p| entry.verify_signature(p).is_ok());
        Ok(VerificationReport {
            entry_id: *id,
            producer: entry.producer.clone(),
            display_name: producer.map(|p| p.display_name).unwrap_or_default(),
            created_at: entry.created_at,
            key_digest: entry.key_digest(),
            signature_valid,
            key_matches: entry.key_digest() == self.key_digest,
            checksum: hex::encode(sum),
        })
    }

    /// Writes one JSON object per entry, in insertion order.
    pub fn export_ndjson<W: Write>(&self, mut out: W) -> Result<usize, RegistryError> {
        let entries = self.entries();
        for e in &entries {
            serde_json::to_writer(&mut out, e.as_ref())
                .map_err(|e| RegistryError::Malformed(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(entries.len())
    }
}

impl State {
    fn push(&mut self, entry: RegistryEntry, offset: u64, checksum: [u8; CHECKSUM_LEN]) {
        let i = self.entries.len();
        self.by_id.insert(entry.entry_id, i);
        self.by_producer
            .entry(entry.producer.clone())
            .or_default()
            .push(i);
        self.entries.push(StoredEntry {
            entry: Arc::new(entry),
            offset,
            checksum,
        });
    }
}

impl Appender {
    /// Appends one framed record and syncs; returns its offset.
    fn append(&mut self, payload: &[u8]) -> Result<u64, RegistryError> {
        let offset = self.end;
        let framed = frame(payload);
        self.log.write_all(&framed)?;
        self.log.sync_data()?;
        self.end += framed.len() as u64;
        let rec = IndexRecord {
            offset,
            len: payload.len() as u32,
            tag: payload[0],
        };
        self.index.write_all(&rec.encode())?;
        Ok(offset)
    }
}

fn index_bytes(records: &[IndexRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(INDEX_HEADER_LEN + records.len() * INDEX_RECORD_LEN);
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.encode());
    }
    out
}

fn write_index(path: &Path, records: &[IndexRecord]) -> Result<File, RegistryError> {
    let tmp = path.with_extension("idx.tmp");
    std::fs::write(&tmp, index_bytes(records))?;
    std::fs::rename(&tmp, path)?;
    Ok(OpenOptions::new().append(true).open(path)?)
}
