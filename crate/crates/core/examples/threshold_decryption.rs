//! 2-of-3 threshold decryption: any two parties recover the result, one alone
//! cannot, and shares for a different ciphertext are rejected.

use provreg::hashcore::{PerceptualHash, HASH_BITS};
use provreg::mpfhe::{combine_shares, encrypt_hash, partial_decrypt, setup_named, DecryptionShare};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let names = ["registry", "auditor", "publisher"].map(String::from);
    let (parties, keys) = setup_named(&names, 2, 2024)?;
    let pk = &keys.public;
    println!("key {} ({}-of-{})", pk.digest.to_hex(), pk.m, pk.n);

    let h = PerceptualHash::random(HASH_BITS, &mut rng);
    let ct = encrypt_hash(pk, &h, &mut rng)?.ciphertext().clone();
    let shares: Vec<DecryptionShare> = keys
        .shares
        .iter()
        .map(|s| partial_decrypt(s, &ct))
        .collect::<Result<_, _>>()?;

    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let pt = combine_shares(pk, &[shares[a].clone(), shares[b].clone()], &ct)?;
        println!(
            "{} + {}: recovered {}",
            parties.party(a as u32).unwrap().name,
            parties.party(b as u32).unwrap().name,
            pt.to_hash() == h
        );
    }
    match combine_shares(pk, &shares[..1], &ct) {
        Err(e) => println!("one share: {e}"),
        Ok(_) => println!("one share: unexpectedly decrypted"),
    }

    let other = encrypt_hash(pk, &h, &mut rng)?.ciphertext().clone();
    let stray = partial_decrypt(&keys.shares[2], &other)?;
    match combine_shares(pk, &[shares[0].clone(), stray], &ct) {
        Err(e) => println!("share for another ciphertext: {e}"),
        Ok(_) => println!("share for another ciphertext: accepted"),
    }
    Ok(())
}
