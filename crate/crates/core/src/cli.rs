//! Operator command line: the `provreg` binary is a thin wrapper over [`run`].
//!
//! Every subcommand works on local files; `serve` is the only one that
//! opens a socket. Failures are reported as `{"error": .., "message": ..}`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bench::{run_bench, BenchConfig};
use crate::hashcore::{
    read_model, write_model, EmbeddingFile, PerceptualHash, SyntheticEmbeddings, WhiteningModel,
};
use crate::mpfhe::{
    combine_shares, encrypt_hash, encrypt_threshold, partial_decrypt, setup_named, Ciphertext,
    PhaseGates, PhaseTiming, PublicKey, QueryMode, SecretShare, SimEvaluator, THRESHOLD_WIDTH,
};
use crate::registry::{EntryId, ProducerKey, RegistryStore};
use crate::service::{Service, ServiceConfig};
use crate::stattest::{self, MatchThreshold};

#[derive(Debug, Parser)]
#[command(
    name = "provreg",
    version,
    about = "Private content-provenance registry"
)]
pub struct Cli {
    #[arg(long, value_enum, default_value_t = Format::Text, global = true, env = "PROV_FORMAT")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a PHEM file of synthetic correlated-Gaussian embeddings.
    Synth(SynthArgs),
    /// Fit a whitening model on an embedding file.
    FitPca(FitPcaArgs),
    /// Hash embeddings to `id,hex` rows.
    Hash(HashArgs),
    /// Match threshold for a target false-positive rate, or the rate of a threshold.
    Threshold(ThresholdArgs),
    /// TPR/FPR curve between original and transformed embeddings.
    Roc(RocArgs),
    /// Generate an m-of-n threshold key and one share file per party.
    Keygen(KeygenArgs),
    /// Generate a producer signing key.
    ProducerKeygen(ProducerKeygenArgs),
    /// Encrypt, sign and append hashes to a registry.
    Insert(InsertArgs),
    /// Run an encrypted query against a registry.
    Query(QueryArgs),
    /// Combine party shares to decrypt a query result.
    Decrypt(DecryptArgs),
    /// Re-check one stored entry against the bytes on disk.
    Verify(VerifyArgs),
    /// Dump registry entries as line-delimited JSON.
    Export(ExportArgs),
    /// Time the query circuit phases and count gates.
    Bench(BenchArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = crate::hashcore::EMBEDDING_DIM)]
    pub dim: usize,
    /// Seed of the mixing matrix, shared by files that should come from one distribution.
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    #[arg(long, default_value_t = 0, env = "PROV_SEED")]
    pub seed: u64,
    /// Write ids `synth-<i>`.
    #[arg(long)]
    pub ids: bool,
    /// Instead of fresh samples, add N(0, noise^2) to every value of this file.
    #[arg(long, requires = "noise")]
    pub perturb: Option<PathBuf>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitPcaArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::hashcore::HASH_BITS)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct HashArgs {
    #[arg(long, env = "PROV_MODEL")]
    pub model: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(skip)]
#[command(group(clap::ArgGroup::new("threshold").required(true).multiple(false)))]
pub struct ThresholdArgs {
    #[arg(long, default_value_t = 96)]
    pub k: u32,
    #[arg(long, group = "threshold")]
    pub target_fpr: Option<f64>,
    /// Minimum match score.
    #[arg(long, group = "threshold")]
    pub tau: Option<u32>,
    /// Maximum Hamming distance.
    #[arg(long, group = "threshold")]
    pub t: Option<u32>,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    #[arg(long, env = "PROV_MODEL")]
    pub model: PathBuf,
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub transformed: PathBuf,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KeygenArgs {
    #[arg(long, default_value_t = 2)]
    pub n: u32,
    #[arg(long, default_value_t = 2)]
    pub m: u32,
    #[arg(long, default_value_t = 0, env = "PROV_SEED")]
    pub seed: u64,
    /// Comma-separated party names; defaults to party-0, party-1, ...
    #[arg(long, value_delimiter = ',')]
    pub names: Vec<String>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProducerKeygenArgs {
    #[arg(long)]
    pub id: String,
    #[arg(long, default_value = "")]
    pub name: String,
    #[arg(long, default_value_t = 0, env = "PROV_SEED")]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KeyStoreArgs {
    #[arg(long, env = "PROV_PUBLIC_KEY_PATH", default_value = "public_key.json")]
    pub public_key: PathBuf,
    #[arg(long, env = "PROV_STORE_PATH", default_value = "registry.log")]
    pub store: PathBuf,
}

#[derive(Debug, Args)]
pub struct InsertArgs {
    #[command(flatten)]
    pub paths: KeyStoreArgs,
    #[arg(long)]
    pub producer_key: PathBuf,
    /// CSV of `id,hex` rows as written by `hash`.
    #[arg(long)]
    pub hashes: PathBuf,
    /// Entry timestamp in Unix seconds; defaults to now.
    #[arg(long)]
    pub timestamp: Option<u64>,
    #[arg(long, default_value_t = 0, env = "PROV_SEED")]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub paths: KeyStoreArgs,
    /// Query hash as 24 hex digits.
    #[arg(long)]
    pub hash: String,
    /// Maximum Hamming distance counted as a match.
    #[arg(long, default_value_t = 8, conflicts_with = "target_fpr")]
    pub t: u32,
    #[arg(long)]
    pub target_fpr: Option<f64>,
    #[arg(long, default_value = "or")]
    pub mode: QueryMode,
    #[arg(long)]
    pub producer: Option<String>,
    #[arg(long, default_value_t = 0, env = "PROV_SEED")]
    pub seed: u64,
    #[arg(long, default_value = "query_result.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecryptArgs {
    #[arg(long, env = "PROV_PUBLIC_KEY_PATH", default_value = "public_key.json")]
    pub public_key: PathBuf,
    #[arg(long, default_value = "query_result.json")]
    pub result: PathBuf,
    /// Share files written by `keygen`.
    #[arg(long, num_args = 1.., required = true)]
    pub shares: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, env = "PROV_STORE_PATH", default_value = "registry.log")]
    pub store: PathBuf,
    #[arg(long)]
    pub id: String,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, env = "PROV_STORE_PATH", default_value = "registry.log")]
    pub store: PathBuf,
    /// NDJSON output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    pub entries: usize,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// 0 means one per available core.
    #[arg(long, default_value_t = 0, env = "PROV_WORKERS")]
    pub threads: usize,
    #[arg(long, default_value_t = 8)]
    pub t: u64,
    #[arg(long, default_value = "or")]
    pub mode: QueryMode,
    #[arg(long, default_value_t = 0, env = "PROV_SEED")]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML config; `PROV_*` variables and flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub public_key: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub quorum: Option<u32>,
    #[arg(long)]
    pub result_ttl_secs: Option<u64>,
}

/// Machine-readable failure; printed as JSON on stderr by the binary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CliError {
    #[serde(rename = "error")]
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

/// Variant name of an error enum, read off its Debug form.
fn variant_name<E: std::fmt::Debug>(e: &E) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("Error")
        .to_owned()
}

macro_rules! cli_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::new(&variant_name(&e), e.to_string())
            }
        }
    )*};
}

cli_error_from!(
    crate::hashcore::HashError,
    crate::stattest::StatError,
    crate::mpfhe::MpfheError,
    crate::registry::RegistryError
);

impl From<crate::service::ServiceError> for CliError {
    fn from(e: crate::service::ServiceError) -> Self {
        Self::new(&e.code, e.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("Io", e.to_string())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new("Io", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::new("Malformed", format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).unwrap();
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::new("Io", format!("{}: {e}", path.display())))
}

fn load_public_key(path: &Path) -> Result<PublicKey, CliError> {
    let key: PublicKey = read_json(path)?;
    key.validate()?;
    Ok(key)
}

/// Result of one subcommand, rendered according to `--format`.
struct Output {
    json: Value,
    text: String,
    csv: Option<String>,
}

impl Output {
    fn new(json: Value, text: impl Into<String>) -> Self {
        Self {
            json,
            text: text.into(),
            csv: None,
        }
    }

    fn with_csv(mut self, csv: String) -> Self {
        self.csv = Some(csv);
        self
    }

    fn render(self, format: Format) -> String {
        match format {
            Format::Text => self.text,
            Format::Json => serde_json::to_string_pretty(&self.json).unwrap() + "\n",
            Format::Csv => self.csv.unwrap_or_else(|| flat_csv(&self.json)),
        }
    }
}

/// One header row and one value row from the top-level fields of an object.
fn flat_csv(v: &Value) -> String {
    let Some(obj) = v.as_object() else {
        return format!("{v}\n");
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(obj.keys()).unwrap();
    w.write_record(obj.values().map(|v| match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }))
    .unwrap();
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Runs one parsed command, writing its report to `out`.
pub fn run<W: Write>(cli: Cli, out: &mut W) -> Result<(), CliError> {
    let output = match cli.command {
        Command::Synth(a) => synth(a)?,
        Command::FitPca(a) => fit_pca(a)?,
        Command::Hash(a) => hash(a, cli.format)?,
        Command::Threshold(a) => threshold(a)?,
        Command::Roc(a) => roc(a, cli.format)?,
        Command::Keygen(a) => keygen(a)?,
        Command::ProducerKeygen(a) => producer_keygen(a)?,
        Command::Insert(a) => insert(a)?,
        Command::Query(a) => query(a)?,
        Command::Decrypt(a) => decrypt(a)?,
        Command::Verify(a) => verify(a)?,
        Command::Export(a) => export(a, cli.format)?,
        Command::Bench(a) => bench(a)?,
        Command::Serve(a) => serve(a)?,
    };
    out.write_all(output.render(cli.format).as_bytes())?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<Output, CliError> {
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let file = match &a.perturb {
        None => {
            let gen = SyntheticEmbeddings::new(a.dim, a.model_seed);
            let embeddings = gen.sample(a.count, &mut rng);
            let ids = a
                .ids
                .then(|| (0..a.count).map(|i| format!("synth-{i}")).collect());
            EmbeddingFile::new(a.dim, embeddings, ids)?
        }
        Some(base) => {
            use rand_distr::{Distribution, Normal};
            let base = EmbeddingFile::read(base)?;
            let noise = Normal::new(0.0, a.noise.unwrap_or(0.0))
                .map_err(|e| CliError::new("InvalidArgument", e.to_string()))?;
            let embeddings = base
                .embeddings
                .iter()
                .map(|e| {
                    let v = e
                        .values()
                        .iter()
                        .map(|&x| x + noise.sample(&mut rng) as f32)
                        .collect();
                    crate::hashcore::Embedding::new(v)
                })
                .collect::<Result<Vec<_>, _>>()?;
            EmbeddingFile::new(base.dim, embeddings, base.ids.clone())?
        }
    };
    file.write(&a.out)?;
    let n = file.embeddings.len();
    Ok(Output::new(
        json!({ "path": a.out, "count": n, "dim": file.dim }),
        format!(
            "wrote {n} embeddings of dim {} to {}\n",
            file.dim,
            a.out.display()
        ),
    ))
}

fn fit_pca(a: FitPcaArgs) -> Result<Output, CliError> {
    let file = EmbeddingFile::read(&a.embeddings)?;
    let model = WhiteningModel::fit(&file.embeddings, a.dim)?;
    write_model(&model, &a.out)?;
    let ev = model.eigenvalues();
    let total: f64 = ev.iter().sum();
    let top: Vec<f64> = ev.iter().take(5).copied().collect();
    let text = format!(
        "fitted {} -> {} on {} samples, wrote {}\n\
         component variance: largest {:.6e}, smallest {:.6e}, top-5 share {:.4}\n",
        model.input_dim(),
        model.output_dim(),
        model.sample_count(),
        a.out.display(),
        ev.first().copied().unwrap_or(0.0),
        ev.last().copied().unwrap_or(0.0),
        top.iter().sum::<f64>() / total,
    );
    Ok(Output::new(
        json!({
            "path": a.out,
            "samples": model.sample_count(),
            "input_dim": model.input_dim(),
            "output_dim": model.output_dim(),
            "eigenvalues": ev,
        }),
        text,
    ))
}

fn hash_rows(
    model: &WhiteningModel,
    file: &EmbeddingFile,
) -> Result<Vec<(String, PerceptualHash)>, CliError> {
    let hashes = model.hash_batch(&file.embeddings)?;
    Ok(hashes
        .into_iter()
        .enumerate()
        .map(|(i, h)| (file.id(i), h))
        .collect())
}

fn hash(a: HashArgs, format: Format) -> Result<Output, CliError> {
    let model = read_model(&a.model)?;
    let file = EmbeddingFile::read(&a.embeddings)?;
    let rows = hash_rows(&model, &file)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (id, h) in &rows {
        w.write_record([id.as_str(), &h.to_hex()])
            .map_err(csv_err)?;
    }
    let csv = String::from_utf8(w.into_inner().unwrap()).unwrap();
    let json = Value::Array(
        rows.iter()
            .map(|(id, h)| json!({ "id": id, "hash": h.to_hex() }))
            .collect(),
    );
    match &a.out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            let msg = format!("wrote {} hashes to {}\n", rows.len(), path.display());
            let summary = json!({ "path": path, "count": rows.len() });
            Ok(if format == Format::Csv {
                Output::new(summary, String::new()).with_csv(String::new())
            } else {
                Output::new(summary, msg)
            })
        }
        None => Ok(Output::new(json, csv.clone()).with_csv(csv)),
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::new("Csv", e.to_string())
}

fn threshold(a: ThresholdArgs) -> Result<Output, CliError> {
    let th = match (a.target_fpr, a.tau, a.t) {
        (Some(target), _, _) => stattest::threshold_for_fpr(target, a.k)?,
        (_, Some(tau), _) => MatchThreshold::new(tau, a.k)?,
        (_, _, Some(t)) => MatchThreshold::from_distance(t, a.k)?,
        _ => unreachable!("clap enforces one threshold specification"),
    };
    let p = stattest::fpr(th.tau(), a.k)?;
    let dec = p.to_f64();
    let text = format!(
        "tau = {} (match score >= tau), t = {} (distance <= t), k = {}\nfpr = {}\n    = {}\n",
        th.tau(),
        th.distance(),
        a.k,
        p,
        stattest::format_sig6(dec)
    );
    Ok(Output::new(
        json!({
            "k": a.k,
            "tau": th.tau(),
            "t": th.distance(),
            "fpr_numerator": p.numerator().to_string(),
            "fpr_denominator_log2": a.k,
            "fpr_exact": p.to_string(),
            "fpr": dec,
        }),
        text,
    ))
}

fn roc(a: RocArgs, format: Format) -> Result<Output, CliError> {
    let model = read_model(&a.model)?;
    let orig = hash_rows(&model, &EmbeddingFile::read(&a.original)?)?;
    let trans = hash_rows(&model, &EmbeddingFile::read(&a.transformed)?)?;
    if orig.len() != trans.len() {
        return Err(CliError::new(
            "LengthMismatch",
            format!(
                "{} original vs {} transformed embeddings",
                orig.len(),
                trans.len()
            ),
        ));
    }
    let pairs: Vec<_> = orig
        .into_iter()
        .zip(trans)
        .map(|((_, a), (_, b))| (a, b))
        .collect();
    let k = crate::hashcore::HASH_BITS as u32;
    let points = stattest::roc_curve(&pairs, k)?;
    let acc = stattest::bit_accuracy(&pairs)?;
    let mut buf = Vec::new();
    stattest::write_roc_csv(&points, &mut buf)?;
    let csv = String::from_utf8(buf).unwrap();
    let summary = json!({ "pairs": pairs.len(), "bit_accuracy": acc, "points": points.len() });
    match &a.out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            let text = format!(
                "{} pairs, bit accuracy {:.4}; wrote {} ROC points to {}\n",
                pairs.len(),
                acc,
                points.len(),
                path.display()
            );
            Ok(if format == Format::Csv {
                Output::new(summary, String::new()).with_csv(String::new())
            } else {
                Output::new(summary, text)
            })
        }
        None => Ok(Output::new(summary, csv.clone()).with_csv(csv)),
    }
}

fn keygen(a: KeygenArgs) -> Result<Output, CliError> {
    let names: Vec<String> = if a.names.is_empty() {
        (0..a.n).map(|i| format!("party-{i}")).collect()
    } else {
        if a.names.len() != a.n as usize {
            return Err(CliError::new(
                "InvalidArgument",
                format!("{} names for n = {}", a.names.len(), a.n),
            ));
        }
        a.names.clone()
    };
    let (parties, keys) = setup_named(&names, a.m, a.seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let pk_path = a.out_dir.join("public_key.json");
    write_json(&pk_path, &keys.public)?;
    write_json(&a.out_dir.join("parties.json"), &parties)?;
    let mut share_paths = Vec::new();
    for s in &keys.shares {
        let p = a.out_dir.join(format!("share_{}.json", s.party.index));
        write_json(&p, s)?;
        share_paths.push(p);
    }
    let text = format!(
        "{}-of-{} key {}\npublic key: {}\nshares: {}\n",
        a.m,
        a.n,
        keys.public.digest,
        pk_path.display(),
        share_paths
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(Output::new(
        json!({
            "n": a.n,
            "m": a.m,
            "key_digest": keys.public.digest,
            "public_key": pk_path,
            "shares": share_paths,
        }),
        text,
    ))
}

fn producer_keygen(a: ProducerKeygenArgs) -> Result<Output, CliError> {
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let key = ProducerKey::generate(&a.id, &a.name, &mut rng);
    write_json(&a.out, &key)?;
    let vk = hex::encode(key.identity.verifying_key);
    Ok(Output::new(
        json!({ "producer_id": a.id, "verifying_key": vk, "path": a.out }),
        format!("producer {} key {vk}\nwrote {}\n", a.id, a.out.display()),
    ))
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn read_hash_csv(path: &Path) -> Result<Vec<(String, PerceptualHash)>, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 {
            return Err(CliError::new(
                "Csv",
                format!("expected `id,hex`, got {} fields", rec.len()),
            ));
        }
        rows.push((
            rec[0].to_owned(),
            PerceptualHash::from_hex(&rec[1], crate::hashcore::HASH_BITS)?,
        ));
    }
    Ok(rows)
}

fn insert(a: InsertArgs) -> Result<Output, CliError> {
    let key = load_public_key(&a.paths.public_key)?;
    let producer: ProducerKey = read_json(&a.producer_key)?;
    let store = RegistryStore::open_or_create(&a.paths.store, key.digest)?;
    store.register_producer(producer.identity.clone())?;
    let rows = read_hash_csv(&a.hashes)?;
    let ts = a.timestamp.unwrap_or_else(now_secs);
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let mut ids = Vec::with_capacity(rows.len());
    for (source, h) in rows {
        let ct = encrypt_hash(&key, &h, &mut rng)?;
        let entry = producer
            .sign_entry(ct, ts)
            .with_metadata("source_id", &source);
        ids.push(store.insert_entry(entry)?);
    }
    Ok(Output::new(
        json!({ "inserted": ids.len(), "total": store.len(), "entry_ids": ids }),
        format!(
            "inserted {} entries; registry now holds {}\n",
            ids.len(),
            store.len()
        ),
    ))
}

/// Encrypted query result as written by `query` and read by `decrypt`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryResultFile {
    pub mode: QueryMode,
    pub key_digest: String,
    /// Base64 of the serialized result ciphertext.
    pub result: String,
    pub entries: usize,
    pub t: u32,
    pub gates: PhaseGates,
    pub timing: PhaseTiming,
}

fn query(a: QueryArgs) -> Result<Output, CliError> {
    let key = load_public_key(&a.paths.public_key)?;
    let store = RegistryStore::open(&a.paths.store)?;
    if store.key_digest() != key.digest {
        return Err(CliError::new(
            "KeyMismatch",
            "registry was created under a different key",
        ));
    }
    let q = PerceptualHash::from_hex(&a.hash, crate::hashcore::HASH_BITS)?;
    let t = match a.target_fpr {
        Some(target) => stattest::threshold_for_fpr(target, q.len() as u32)?.distance(),
        None => a.t,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let eq = encrypt_hash(&key, &q, &mut rng)?;
    let et = encrypt_threshold(&key, t as u64, THRESHOLD_WIDTH, &mut rng)?;
    let db = store.scan_for_query(a.producer.as_deref());
    let eval = SimEvaluator::new(key.clone())?;
    let (ct, tel) = eval.evaluate_query(&db, &eq, &et, a.mode, &mut rng)?;
    let file = QueryResultFile {
        mode: a.mode,
        key_digest: key.digest.to_hex(),
        result: B64.encode(ct.to_bytes()),
        entries: tel.entries,
        t,
        gates: tel.gates,
        timing: tel.timing,
    };
    write_json(&a.out, &file)?;
    let text = format!(
        "evaluated {} query over {} entries at t = {} ({} gates, {:.1} ms)\nencrypted result written to {}\n",
        a.mode,
        tel.entries,
        t,
        tel.gates.total().total(),
        tel.timing.full_ms,
        a.out.display()
    );
    Ok(Output::new(serde_json::to_value(&file).unwrap(), text))
}

fn decrypt(a: DecryptArgs) -> Result<Output, CliError> {
    let key = load_public_key(&a.public_key)?;
    let file: QueryResultFile = read_json(&a.result)?;
    let bytes = B64
        .decode(&file.result)
        .map_err(|e| CliError::new("Malformed", format!("result: {e}")))?;
    let ct = Ciphertext::from_bytes(&bytes)?;
    let shares = a
        .shares
        .iter()
        .map(|p| {
            let s: SecretShare = read_json(p)?;
            Ok(partial_decrypt(&s, &ct)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let plain = combine_shares(&key, &shares, &ct)?;
    let value = plain.as_uint();
    Ok(match file.mode {
        QueryMode::Or => Output::new(
            json!({ "match": value == 1 }),
            format!("match: {}\n", value == 1),
        ),
        QueryMode::Count => Output::new(
            json!({ "match": value > 0, "count": value }),
            format!("match: {}\ncount: {value}\n", value > 0),
        ),
    })
}

fn verify(a: VerifyArgs) -> Result<Output, CliError> {
    let store = RegistryStore::open(&a.store)?;
    let id: EntryId = a.id.parse()?;
    let r = store.verify_entry(&id)?;
    let text = format!(
        "entry {}: {}\nproducer {} ({}), created {}\nsignature valid: {}, key matches: {}, checksum {}\n",
        r.entry_id,
        if r.ok() { "ok" } else { "FAILED" },
        r.producer,
        r.display_name,
        r.created_at,
        r.signature_valid,
        r.key_matches,
        r.checksum
    );
    let ok = r.ok();
    let out = Output::new(serde_json::to_value(&r).unwrap(), text);
    if !ok {
        return Err(CliError::new("VerificationFailed", out.json.to_string()));
    }
    Ok(out)
}

fn export(a: ExportArgs, format: Format) -> Result<Output, CliError> {
    let store = RegistryStore::open(&a.store)?;
    let mut buf = Vec::new();
    let n = store.export_ndjson(&mut buf)?;
    let ndjson = String::from_utf8(buf).unwrap();
    match &a.out {
        Some(path) => {
            std::fs::write(path, &ndjson)?;
            let summary = json!({ "exported": n, "path": path });
            let text = format!("exported {n} entries to {}\n", path.display());
            Ok(if format == Format::Csv {
                Output::new(summary, text).with_csv(String::new())
            } else {
                Output::new(summary, text)
            })
        }
        None => {
            let entries: Vec<Value> = ndjson
                .lines()
                .map(|l| serde_json::from_str(l).unwrap())
                .collect();
            Ok(Output::new(Value::Array(entries), ndjson))
        }
    }
}

fn bench(a: BenchArgs) -> Result<Output, CliError> {
    let report = run_bench(&BenchConfig {
        entries: a.entries,
        trials: a.trials,
        threads: a.threads,
        seed: a.seed,
        threshold: a.t,
        mode: a.mode,
    })?;
    let mut json = serde_json::to_value(&report).unwrap();
    json["published"] = serde_json::to_value(crate::bench::PUBLISHED_REFERENCE).unwrap();
    Ok(Output::new(json, report.to_text()).with_csv(report.to_csv()))
}

fn serve(a: ServeArgs) -> Result<Output, CliError> {
    let mut config = match &a.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(std::env::vars())?;
    if let Some(v) = a.listen {
        config.listen = v;
    }
    if let Some(v) = a.store {
        config.store_path = v;
    }
    if let Some(v) = a.public_key {
        config.public_key_path = v;
    }
    if let Some(v) = a.workers {
        config.workers = v;
    }
    if let Some(v) = a.quorum {
        config.quorum = Some(v);
    }
    if let Some(v) = a.result_ttl_secs {
        config.result_ttl_secs = v;
    }
    // fail fast on bad keys or stores before binding
    drop(Service::from_config(&config)?);
    eprintln!("listening on {}", config.listen);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::service::serve(&config))?;
    Ok(Output::new(json!({ "status": "stopped" }), "stopped\n"))
}

/// Parses `args` (including the program name) and runs, for tests and examples.
pub fn run_args<I, T, W>(args: I, out: &mut W) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    W: Write,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::new("Usage", e.to_string()))?;
    run(cli, out)
}
