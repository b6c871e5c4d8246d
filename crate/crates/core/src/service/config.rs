use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ServiceError;

pub const DEFAULT_RESULT_TTL_SECS: u64 = 600;
pub const ENV_PREFIX: &str = "PROV_";

/// Service settings, read from TOML and overridable by `PROV_*` variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub store_path: PathBuf,
    /// JSON public key file written by `keygen`.
    pub public_key_path: PathBuf,
    /// When set, must equal the digest of the loaded public key.
    pub key_digest: Option<String>,
    /// Shares required before plaintext is released; defaults to the key's m.
    pub quorum: Option<u32>,
    /// Evaluation threads; 0 means one per available core.
    pub workers: usize,
    pub result_ttl_secs: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8700".into(),
            store_path: "registry.log".into(),
            public_key_path: "public_key.json".into(),
            key_digest: None,
            quorum: None,
            workers: 0,
            result_ttl_secs: DEFAULT_RESULT_TTL_SECS,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::bad_request(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::internal(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies `PROV_LISTEN`, `PROV_STORE_PATH`, ... from `vars`.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ServiceError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let bad = |k: &str, v: &str| {
            ServiceError::bad_request(format!("{ENV_PREFIX}{k}: cannot parse {v:?}"))
        };
        for (k, v) in vars {
            let Some(key) = k.as_ref().strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let v = v.as_ref();
            match key {
                "LISTEN" => self.listen = v.to_owned(),
                "STORE_PATH" => self.store_path = v.into(),
                "PUBLIC_KEY_PATH" => self.public_key_path = v.into(),
                "KEY_DIGEST" => self.key_digest = Some(v.to_owned()),
                "QUORUM" => self.quorum = Some(v.parse().map_err(|_| bad(key, v))?),
                "WORKERS" => self.workers = v.parse().map_err(|_| bad(key, v))?,
                "RESULT_TTL_SECS" => self.result_ttl_secs = v.parse().map_err(|_| bad(key, v))?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}
