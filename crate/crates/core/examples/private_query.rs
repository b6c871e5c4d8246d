//! End to end: encrypt a database of hashes under a 2-of-2 key, run an
//! encrypted OR and COUNT query, and decrypt the result with both shares.

use provreg::hashcore::{PerceptualHash, HASH_BITS};
use provreg::mpfhe::{
    combine_shares, encrypt_hash, encrypt_threshold, partial_decrypt, setup, QueryMode,
    SimEvaluator, THRESHOLD_WIDTH,
};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let (_, keys) = setup(2, 2, 42)?;
    let pk = &keys.public;

    let plain: Vec<PerceptualHash> = (0..1000)
        .map(|_| PerceptualHash::random(HASH_BITS, &mut rng))
        .collect();
    let db = plain
        .iter()
        .map(|h| encrypt_hash(pk, h, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let evaluator = SimEvaluator::new(pk.clone())?;
    let t = encrypt_threshold(pk, 8, THRESHOLD_WIDTH, &mut rng)?;

    // a near copy of a stored hash: five flipped bits
    let mut probe = plain[123].clone();
    for i in [0, 17, 40, 66, 95] {
        probe.set_bit(i, !probe.bit(i));
    }
    let fresh = PerceptualHash::random(HASH_BITS, &mut rng);

    for (label, q, mode) in [
        ("near copy", &probe, QueryMode::Or),
        ("fresh", &fresh, QueryMode::Or),
        ("near copy", &probe, QueryMode::Count),
    ] {
        let eq = encrypt_hash(pk, q, &mut rng)?;
        let (ct, tel) = evaluator.evaluate_query(&db, &eq, &t, mode, &mut rng)?;
        let shares = keys
            .shares
            .iter()
            .map(|s| partial_decrypt(s, &ct))
            .collect::<Result<Vec<_>, _>>()?;
        let pt = combine_shares(pk, &shares, &ct)?;
        let shown = match mode {
            QueryMode::Or => format!("match {}", pt.as_bool().unwrap()),
            QueryMode::Count => format!("count {}", pt.as_uint()),
        };
        println!(
            "{label:>9} {mode:>5}: {shown:<12} {} gates, {:.1} ms",
            tel.gates.total().total(),
            tel.timing.full_ms
        );
    }
    Ok(())
}
