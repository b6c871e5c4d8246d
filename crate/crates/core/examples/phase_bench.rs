//! Per-phase latency of the simulated backend next to the latencies the
//! original authors reported for real FHE hardware.

use provreg::bench::{run_bench, BenchConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let entries = std::env::args().nth(1).map_or(Ok(1000), |s| s.parse())?;
    let report = run_bench(&BenchConfig {
        entries,
        trials: 3,
        ..BenchConfig::default()
    })?;
    print!("{}", report.to_text());
    Ok(())
}
