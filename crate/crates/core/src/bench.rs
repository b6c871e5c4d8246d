//! Per-phase latency and gate counts of one private query.
//!
//! Only the cleartext-simulation backend exists, so latencies measure circuit
//! bookkeeping, not homomorphic gate cost. The published numbers are carried
//! along as labeled reference rows.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::hashcore::PerceptualHash;
use crate::mpfhe::{
    encrypt_hash, encrypt_threshold, evaluate_circuit, setup, EncResult, MpfheError, PhaseGates,
    PhaseTiming, QueryMode, SimEvaluator, THRESHOLD_WIDTH,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub entries: usize,
    pub trials: usize,
    /// Worker threads; 0 means one per available core.
    pub threads: usize,
    pub seed: u64,
    pub threshold: u64,
    pub mode: QueryMode,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            entries: 1000,
            trials: 5,
            threads: 0,
            seed: 0,
            threshold: 8,
            mode: QueryMode::Or,
        }
    }
}

/// A latency row from the published evaluation (real FHEW, 1,000 entries).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub system: &'static str,
    pub cpu: &'static str,
    pub cores: usize,
    pub xor_ms: f64,
    pub hd_ms: f64,
    pub full_ms: f64,
}

pub const PUBLISHED_REFERENCE: [ReferenceRow; 5] = [
    ReferenceRow {
        system: "Laptop",
        cpu: "12th Gen i5",
        cores: 4,
        xor_ms: 200.0,
        hd_ms: 1290.0,
        full_ms: 1300.0,
    },
    ReferenceRow {
        system: "Laptop",
        cpu: "12th Gen i5",
        cores: 8,
        xor_ms: 105.0,
        hd_ms: 747.0,
        full_ms: 773.0,
    },
    ReferenceRow {
        system: "Laptop",
        cpu: "12th Gen i5",
        cores: 16,
        xor_ms: 67.0,
        hd_ms: 467.0,
        full_ms: 472.0,
    },
    ReferenceRow {
        system: "MB Pro",
        cpu: "Apple M4",
        cores: 10,
        xor_ms: 59.0,
        hd_ms: 421.0,
        full_ms: 440.0,
    },
    ReferenceRow {
        system: "Server",
        cpu: "AMD 7B13",
        cores: 56,
        xor_ms: 26.0,
        hd_ms: 134.0,
        full_ms: 137.0,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub backend: String,
    pub config: BenchConfig,
    pub threads: usize,
    /// Gate counts of the first trial.
    pub gates: PhaseGates,
    /// Whether every trial spent exactly the same gates.
    pub gates_stable: bool,
    pub median: PhaseTiming,
    pub mean: PhaseTiming,
    pub trials: Vec<PhaseTiming>,
    /// Decrypted result of the last trial, as a sanity check.
    pub result: u64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn column(trials: &[PhaseTiming], f: impl Fn(&PhaseTiming) -> f64) -> Vec<f64> {
    trials.iter().map(f).collect()
}

/// Builds a random registry and times `trials` queries of its first entry.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport, MpfheError> {
    if config.entries == 0 {
        return Err(MpfheError::EmptyDatabase);
    }
    if config.trials == 0 {
        return Err(MpfheError::Malformed(
            "at least one trial is required".into(),
        ));
    }
    let threads = if config.threads > 0 {
        config.threads
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| MpfheError::Malformed(e.to_string()))?;

    let (_, keys) = setup(2, 2, config.seed)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let plain: Vec<PerceptualHash> = (0..config.entries)
        .map(|_| PerceptualHash::random(96, &mut rng))
        .collect();
    let eval = SimEvaluator::new(keys.public.clone())?;
    let db = plain
        .iter()
        .map(|h| eval.import_vector(encrypt_hash(&keys.public, h, &mut rng)?.ciphertext()))
        .collect::<Result<Vec<_>, _>>()?;
    let query =
        eval.import_vector(encrypt_hash(&keys.public, &plain[0], &mut rng)?.ciphertext())?;
    let threshold = eval.import_uint(&encrypt_threshold(
        &keys.public,
        config.threshold,
        THRESHOLD_WIDTH,
        &mut rng,
    )?)?;

    let mut trials = Vec::with_capacity(config.trials);
    let mut gates: Option<PhaseGates> = None;
    let mut gates_stable = true;
    let mut result = 0;
    for _ in 0..config.trials {
        let (res, tel) = pool
            .install(|| evaluate_circuit(eval.backend(), &db, &query, &threshold, config.mode))?;
        match gates {
            None => gates = Some(tel.gates),
            Some(g) => gates_stable &= g == tel.gates,
        }
        result = match &res {
            EncResult::Membership(b) => eval.backend().decrypt(b) as u64,
            EncResult::Count(c) => eval.backend().decrypt_uint(c),
        };
        trials.push(tel.timing);
    }

    let agg = |f: fn(Vec<f64>) -> f64| PhaseTiming {
        xor_ms: f(column(&trials, |t| t.xor_ms)),
        hd_ms: f(column(&trials, |t| t.hd_ms)),
        full_ms: f(column(&trials, |t| t.full_ms)),
    };
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(BenchReport {
        backend: keys.public.backend.clone(),
        config: *config,
        threads,
        gates: gates.unwrap_or_default(),
        gates_stable,
        median: agg(median),
        mean: agg(mean),
        trials,
        result,
    })
}

impl BenchReport {
    /// Header plus measured median, measured mean and the published rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "source",
            "label",
            "cores",
            "xor_ms",
            "hd_ms",
            "full_ms",
            "xor_phase_gates",
            "popcount_phase_gates",
            "threshold_phase_gates",
            "total_gates",
        ])
        .unwrap();
        let g = &self.gates;
        for (label, t) in [("median", &self.median), ("mean", &self.mean)] {
            w.write_record([
                "measured".to_owned(),
                format!("{} {label}", self.backend),
                self.threads.to_string(),
                format!("{:.3}", t.xor_ms),
                format!("{:.3}", t.hd_ms),
                format!("{:.3}", t.full_ms),
                g.xor.total().to_string(),
                g.popcount.total().to_string(),
                g.threshold.total().to_string(),
                g.total().total().to_string(),
            ])
            .unwrap();
        }
        for r in &PUBLISHED_REFERENCE {
            w.write_record([
                "published".to_owned(),
                format!("{} {}", r.system, r.cpu),
                r.cores.to_string(),
                format!("{:.3}", r.xor_ms),
                format!("{:.3}", r.hd_ms),
                format!("{:.3}", r.full_ms),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn to_text(&self) -> String {
        let g = &self.gates;
        let mut s = format!(
            "backend {} | entries {} | trials {} | threads {}\n",
            self.backend, self.config.entries, self.config.trials, self.threads
        );
        s += &format!(
            "{:<36} {:>10} {:>10} {:>12}\n",
            "", "XOR", "HD", "Full Query"
        );
        for (label, t) in [
            ("measured median", &self.median),
            ("measured mean", &self.mean),
        ] {
            s += &format!(
                "{:<36} {:>8.2}ms {:>8.2}ms {:>10.2}ms\n",
                label, t.xor_ms, t.hd_ms, t.full_ms
            );
        }
        for r in &PUBLISHED_REFERENCE {
            s += &format!(
                "{:<36} {:>8.0}ms {:>8.0}ms {:>10.0}ms\n",
                format!("published {} ({} cores)", r.system, r.cores),
                r.xor_ms,
                r.hd_ms,
                r.full_ms
            );
        }
        s += &format!(
            "gates: xor phase {} | popcount phase {} | threshold+reduce phase {} | total {} (stable: {})\n",
            g.xor.total(),
            g.popcount.total(),
            g.threshold.total(),
            g.total().total(),
            self.gates_stable
        );
        s
    }
}
