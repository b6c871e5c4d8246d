//! Request handling for insert, query and decryption-share exchange.
//!
//! [`Service`] holds the store, the evaluator and pending results; it knows
//! nothing about HTTP. [`router`] wraps it in axum routes and maps errors to
//! status codes.
//!
//! Plaintext release policy: a query response carries a random claim token.
//! Parties push their decryption shares; once the quorum is reached the
//! request is complete, and the plaintext is returned only to a share
//! submission that also presents the claim token.

mod config;
mod http;

pub use config::{ServiceConfig, DEFAULT_RESULT_TTL_SECS, ENV_PREFIX};
pub use http::{router, serve};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::boolcircuit::GateCounts;
use crate::mpfhe::{
    combine_shares, Ciphertext, DecryptionShare, EncryptedHash, MpfheError, PhaseGates,
    PhaseTiming, PublicKey, QueryMode, SimEvaluator,
};
use crate::registry::{
    EntryId, ProducerIdentity, RegistryEntry, RegistryError, RegistryStats, RegistryStore,
};

/// 16 random bytes naming one query, rendered as hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct RequestId(pub [u8; 16]);

impl RequestId {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        Self(b)
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RequestId({self})")
    }
}

impl FromStr for RequestId {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = hex::decode(s).map_err(|_| ServiceError::bad_request("request id must be hex"))?;
        Ok(Self(b.try_into().map_err(|_| {
            ServiceError::bad_request("request id must be 16 bytes")
        })?))
    }
}

impl Serialize for RequestId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RequestId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(|e: ServiceError| serde::de::Error::custom(e.message))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub request_id: RequestId,
    /// Base64 of the serialized encrypted query hash.
    pub query: String,
    /// Base64 of the serialized encrypted distance threshold.
    pub threshold: String,
    pub mode: QueryMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer: Option<String>,
}

impl QueryRequest {
    pub fn new(
        request_id: RequestId,
        query: &EncryptedHash,
        threshold: &Ciphertext,
        mode: QueryMode,
    ) -> Self {
        Self {
            request_id,
            query: B64.encode(query.to_bytes()),
            threshold: B64.encode(threshold.to_bytes()),
            mode,
            producer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub request_id: RequestId,
    pub mode: QueryMode,
    /// Base64 of the serialized encrypted result.
    pub result: String,
    /// Hex; present it with a share to receive the plaintext.
    pub claim_token: String,
    pub entries: usize,
    pub gates: PhaseGates,
    pub timing: PhaseTiming,
}

impl QueryResponse {
    pub fn result_ciphertext(&self) -> Result<Ciphertext, ServiceError> {
        let bytes = B64
            .decode(&self.result)
            .map_err(|e| ServiceError::bad_request(format!("result: {e}")))?;
        Ciphertext::from_bytes(&bytes).map_err(ServiceError::from)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareExchangeMessage {
    pub request_id: RequestId,
    pub party: u32,
    /// Base64 of the serialized decryption share.
    pub share: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_token: Option<String>,
}

impl ShareExchangeMessage {
    pub fn new(request_id: RequestId, share: &DecryptionShare) -> Self {
        Self {
            request_id,
            party: share.party,
            share: B64.encode(share.to_bytes()),
            claim_token: None,
        }
    }

    pub fn with_claim(mut self, token: &str) -> Self {
        self.claim_token = Some(token.to_owned());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShareState {
    Pending,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    #[serde(rename = "match")]
    pub matched: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareStatus {
    pub status: ShareState,
    pub received: usize,
    pub needed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plaintext: Option<QueryOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertResponse {
    pub entry_id: EntryId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub entries: usize,
    pub key_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceStats {
    pub entries: usize,
    pub producers: usize,
    pub log_bytes: u64,
    pub key_digest: String,
    pub quorum: usize,
    pub workers: usize,
    pub queries: u64,
    pub decryptions: u64,
    pub pending_requests: usize,
    pub gates: GateCounts,
}

/// Error with a machine-readable code and an HTTP-style status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceError {
    #[serde(skip)]
    pub status: u16,
    #[serde(rename = "error")]
    pub code: String,
    pub message: String,
}

impl ServiceError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_owned(),
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, "Malformed", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(500, "Internal", message)
    }
}

impl fmt::Display for ServiceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}): {}", self.code, self.status, self.message)
    }
}

impl std::error::Error for ServiceError {}

impl From<RegistryError> for ServiceError {
    fn from(e: RegistryError) -> Self {
        let msg = e.to_string();
        match e {
            RegistryError::BadSignature => Self::new(403, "BadSignature", msg),
            RegistryError::UnknownProducer(_) => Self::new(403, "UnknownProducer", msg),
            RegistryError::KeyMismatch => Self::new(409, "KeyMismatch", msg),
            RegistryError::DuplicateId(_) => Self::new(409, "DuplicateId", msg),
            RegistryError::ProducerConflict(_) => Self::new(409, "ProducerConflict", msg),
            RegistryError::NotFound(_) => Self::new(404, "NotFound", msg),
            RegistryError::Malformed(_) => Self::new(400, "Malformed", msg),
            RegistryError::Mpfhe(inner) => inner.into(),
            RegistryError::IntegrityError { .. } => Self::new(500, "IntegrityError", msg),
            RegistryError::Io(_) => Self::internal(msg),
        }
    }
}

impl From<MpfheError> for ServiceError {
    fn from(e: MpfheError) -> Self {
        let msg = e.to_string();
        match e {
            MpfheError::EmptyDatabase => Self::new(404, "EmptyDatabase", msg),
            MpfheError::KeyMismatch => Self::new(409, "KeyMismatch", msg),
            MpfheError::BindingMismatch => Self::new(400, "BindingMismatch", msg),
            MpfheError::DecryptionIncomplete { .. } => Self::new(409, "DecryptionIncomplete", msg),
            MpfheError::UnknownParty(_) => Self::new(400, "UnknownParty", msg),
            MpfheError::InvalidThreshold { .. } => Self::new(500, "InvalidThreshold", msg),
            MpfheError::WidthOverflow { .. }
            | MpfheError::LengthMismatch { .. }
            | MpfheError::Malformed(_)
            | MpfheError::Circuit(_) => Self::new(400, "Malformed", msg),
        }
    }
}

struct PendingResult {
    mode: QueryMode,
    result: Ciphertext,
    claim_token: String,
    created: Instant,
    shares: BTreeMap<u32, DecryptionShare>,
    outcome: Option<QueryOutcome>,
}

#[derive(Default)]
struct Counters {
    queries: u64,
    decryptions: u64,
    gates: GateCounts,
}

pub struct Service {
    store: Arc<RegistryStore>,
    evaluator: SimEvaluator,
    quorum: usize,
    pool: rayon::ThreadPool,
    workers: usize,
    ttl: Duration,
    results: Mutex<HashMap<RequestId, PendingResult>>,
    counters: Mutex<Counters>,
    rng: Mutex<ChaCha20Rng>,
}

impl Service {
    /// `quorum` of `None` uses the key's threshold; smaller values are refused.
    pub fn new(
        store: Arc<RegistryStore>,
        key: PublicKey,
        quorum: Option<u32>,
        workers: usize,
        ttl: Duration,
    ) -> Result<Self, ServiceError> {
        if store.key_digest() != key.digest {
            return Err(ServiceError::new(
                409,
                "KeyMismatch",
                "store was created under a different key",
            ));
        }
        let quorum = quorum.unwrap_or(key.m);
        if quorum < key.m || quorum > key.n {
            return Err(ServiceError::bad_request(format!(
                "quorum {quorum} outside [{}, {}]",
                key.m, key.n
            )));
        }
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("prov-eval-{i}"))
            .build()
            .map_err(|e| ServiceError::internal(e.to_string()))?;
        Ok(Self {
            store,
            evaluator: SimEvaluator::new(key)?,
            quorum: quorum as usize,
            pool,
            workers,
            ttl,
            results: Mutex::new(HashMap::new()),
            counters: Mutex::new(Counters::default()),
            rng: Mutex::new(ChaCha20Rng::from_entropy()),
        })
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(&config.public_key_path).map_err(|e| {
            ServiceError::internal(format!("reading {}: {e}", config.public_key_path.display()))
        })?;
        let key: PublicKey = serde_json::from_str(&text)
            .map_err(|e| ServiceError::bad_request(format!("public key: {e}")))?;
        key.validate()?;
        if let Some(d) = &config.key_digest {
            if !d.eq_ignore_ascii_case(&key.digest.to_hex()) {
                return Err(ServiceError::new(
                    409,
                    "KeyMismatch",
                    "configured key digest differs from key file",
                ));
            }
        }
        let store = RegistryStore::open_or_create(&config.store_path, key.digest)?;
        Self::new(
            Arc::new(store),
            key,
            config.quorum,
            config.worker_count(),
            Duration::from_secs(config.result_ttl_secs),
        )
    }

    /// Reseeds the generator used to re-encrypt results.
    pub fn with_seed(self, seed: u64) -> Self {
        *self.rng.lock().unwrap() = ChaCha20Rng::seed_from_u64(seed);
        self
    }

    pub fn store(&self) -> &RegistryStore {
        &self.store
    }

    pub fn public_key(&self) -> &PublicKey {
        self.evaluator.key()
    }

    pub fn register_producer(&self, producer: ProducerIdentity) -> Result<(), ServiceError> {
        Ok(self.store.register_producer(producer)?)
    }

    pub fn insert(&self, entry: RegistryEntry) -> Result<InsertResponse, ServiceError> {
        let entry_id = self.store.insert_entry(entry)?;
        Ok(InsertResponse { entry_id })
    }

    pub fn query(&self, req: &QueryRequest) -> Result<QueryResponse, ServiceError> {
        self.purge_expired();
        let decode = |field: &str, s: &str| {
            B64.decode(s)
                .map_err(|e| ServiceError::bad_request(format!("{field}: {e}")))
        };
        let query = EncryptedHash::from_bytes(&decode("query", &req.query)?)?;
        let threshold = Ciphertext::from_bytes(&decode("threshold", &req.threshold)?)?;
        if query.key_digest() != self.store.key_digest()
            || threshold.key_digest() != self.store.key_digest()
        {
            return Err(MpfheError::KeyMismatch.into());
        }
        if self.results.lock().unwrap().contains_key(&req.request_id) {
            return Err(ServiceError::new(
                409,
                "DuplicateRequest",
                "request id already in use",
            ));
        }
        let db = self.store.scan_for_query(req.producer.as_deref());
        let mut rng = ChaCha20Rng::from_rng(&mut *self.rng.lock().unwrap())
            .map_err(|e| ServiceError::internal(e.to_string()))?;
        let (result, telemetry) = self.pool.install(|| {
            self.evaluator
                .evaluate_query(&db, &query, &threshold, req.mode, &mut rng)
        })?;
        let mut token = [0u8; 16];
        rng.fill_bytes(&mut token);
        let claim_token = hex::encode(token);

        {
            let mut c = self.counters.lock().unwrap();
            c.queries += 1;
            c.gates += telemetry.gates.total();
        }
        let response = QueryResponse {
            request_id: req.request_id,
            mode: req.mode,
            result: B64.encode(result.to_bytes()),
            claim_token: claim_token.clone(),
            entries: telemetry.entries,
            gates: telemetry.gates,
            timing: telemetry.timing,
        };
        let mut results = self.results.lock().unwrap();
        if results.contains_key(&req.request_id) {
            return Err(ServiceError::new(
                409,
                "DuplicateRequest",
                "request id already in use",
            ));
        }
        results.insert(
            req.request_id,
            PendingResult {
                mode: req.mode,
                result,
                claim_token,
                created: Instant::now(),
                shares: BTreeMap::new(),
                outcome: None,
            },
        );
        Ok(response)
    }

    /// Records one party's share. Repeats from the same party are ignored.
    pub fn submit_share(
        &self,
        request_id: RequestId,
        msg: &ShareExchangeMessage,
    ) -> Result<ShareStatus, ServiceError> {
        self.purge_expired();
        if msg.request_id != request_id {
            return Err(ServiceError::new(
                400,
                "BindingMismatch",
                "message names a different request",
            ));
        }
        let bytes = B64
            .decode(&msg.share)
            .map_err(|e| ServiceError::bad_request(format!("share: {e}")))?;
        let share = DecryptionShare::from_bytes(&bytes)?;
        if share.party != msg.party {
            return Err(ServiceError::bad_request(
                "share was produced by a different party",
            ));
        }
        let key = self.evaluator.key();
        if share.party >= key.n {
            return Err(MpfheError::UnknownParty(share.party).into());
        }

        let mut results = self.results.lock().unwrap();
        let pending = results.get_mut(&request_id).ok_or_else(|| {
            ServiceError::new(
                404,
                "UnknownRequest",
                format!("no pending result for {request_id}"),
            )
        })?;
        if share.ct_digest != pending.result.digest() {
            return Err(MpfheError::BindingMismatch.into());
        }
        if share.len() != pending.result.len() {
            return Err(ServiceError::bad_request(
                "share length does not match the result",
            ));
        }
        pending.shares.entry(share.party).or_insert(share);

        if pending.outcome.is_none() && pending.shares.len() >= self.quorum {
            let shares: Vec<_> = pending.shares.values().cloned().collect();
            let plain = combine_shares(key, &shares, &pending.result)?;
            let count = plain.as_uint();
            pending.outcome = Some(match pending.mode {
                QueryMode::Or => QueryOutcome {
                    matched: count == 1,
                    count: None,
                },
                QueryMode::Count => QueryOutcome {
                    matched: count > 0,
                    count: Some(count),
                },
            });
            self.counters.lock().unwrap().decryptions += 1;
        }
        let claimed = msg
            .claim_token
            .as_deref()
            .is_some_and(|t| t.eq_ignore_ascii_case(&pending.claim_token));
        Ok(ShareStatus {
            status: if pending.outcome.is_some() {
                ShareState::Complete
            } else {
                ShareState::Pending
            },
            received: pending.shares.len(),
            needed: self.quorum,
            plaintext: if claimed {
                pending.outcome.clone()
            } else {
                None
            },
        })
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            entries: self.store.len(),
            key_digest: self.store.key_digest().to_hex(),
        }
    }

    pub fn stats(&self) -> ServiceStats {
        self.purge_expired();
        let RegistryStats {
            entries,
            producers,
            log_bytes,
        } = self.store.stats();
        let pending_requests = self.results.lock().unwrap().len();
        let c = self.counters.lock().unwrap();
        ServiceStats {
            entries,
            producers,
            log_bytes,
            key_digest: self.store.key_digest().to_hex(),
            quorum: self.quorum,
            workers: self.workers,
            queries: c.queries,
            decryptions: c.decryptions,
            pending_requests,
            gates: c.gates,
        }
    }

    /// Drops results older than the TTL; returns how many were removed.
    pub fn purge_expired(&self) -> usize {
        let mut results = self.results.lock().unwrap();
        let before = results.len();
        let ttl = self.ttl;
        results.retain(|_, r| r.created.elapsed() < ttl);
        before - results.len()
    }
}
