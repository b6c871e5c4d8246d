//! Exact false-positive rates of the Hamming match test and the thresholds
//! that meet common targets.

use provreg::stattest::{fpr, threshold_for_fpr};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = 96;
    println!("{:>4} {:>4} {:>14}  exact", "tau", "t", "fpr");
    for tau in [48, 56, 64, 72, 80, 88, 96] {
        let p = fpr(tau, k)?;
        println!("{tau:>4} {:>4} {:>14.6e}  {p}", k - tau, p.to_f64());
    }
    println!();
    for target in [1e-3, 1e-6, 1e-9, 1e-12] {
        let th = threshold_for_fpr(target, k)?;
        println!(
            "target {target:e}: tau {} (distance <= {}), achieved {:.3e}",
            th.tau(),
            th.distance(),
            fpr(th.tau(), k)?.to_f64()
        );
    }
    Ok(())
}
