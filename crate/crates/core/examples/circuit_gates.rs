//! Gate counts of the matching circuit, per phase and per entry, measured on
//! the plaintext backend.

use provreg::boolcircuit::{
    leq_const_threshold, popcount_layers, popcount_tree, xor_array, ClearBackend, Metered,
};
use provreg::hashcore::{PerceptualHash, HASH_BITS};
use provreg::mpfhe::{evaluate_circuit, QueryMode, THRESHOLD_WIDTH};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let be = ClearBackend::new();
    let a = be.encrypt_bits(PerceptualHash::random(HASH_BITS, &mut rng).bits());
    let b = be.encrypt_bits(PerceptualHash::random(HASH_BITS, &mut rng).bits());
    let t = be.encrypt_uint(8, THRESHOLD_WIDTH);

    let m = Metered::new(&be);
    let d = xor_array(&m, &a, &b)?;
    println!("xor:        {:?}", m.counts());
    let m = Metered::new(&be);
    let c = popcount_tree(&m, &d)?;
    println!(
        "popcount:   {:?}  ({} layers, {}-bit result)",
        m.counts(),
        popcount_layers(HASH_BITS),
        c.width()
    );
    let m = Metered::new(&be);
    leq_const_threshold(&m, &c, &t)?;
    println!("comparator: {:?}", m.counts());

    for n in [10, 100, 1000] {
        let db: Vec<_> = (0..n)
            .map(|_| be.encrypt_bits(PerceptualHash::random(HASH_BITS, &mut rng).bits()))
            .collect();
        for mode in [QueryMode::Or, QueryMode::Count] {
            let (_, tel) = evaluate_circuit(&be, &db, &a, &t, mode)?;
            let g = tel.gates;
            println!(
                "n={n:<5} {mode:<5} xor {:>7}  popcount {:>8}  threshold {:>7}  total {:>8}",
                g.xor.total(),
                g.popcount.total(),
                g.threshold.total(),
                g.total().total()
            );
        }
    }
    Ok(())
}
