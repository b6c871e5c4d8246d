//! Append signed entries to a registry log, reopen it, verify an entry and
//! show what a flipped byte on disk looks like.

use provreg::hashcore::{PerceptualHash, HASH_BITS};
use provreg::mpfhe::{encrypt_hash, setup};
use provreg::registry::{ProducerKey, RegistryStore};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("registry.log");
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
    let (_, keys) = setup(2, 2, 1)?;

    let store = RegistryStore::create(&path, keys.public.digest)?;
    let producer = ProducerKey::generate("newsroom", "Example Newsroom", &mut rng);
    store.register_producer(producer.identity.clone())?;
    for i in 0..50u64 {
        let h = PerceptualHash::random(HASH_BITS, &mut rng);
        let entry = producer
            .sign_entry(encrypt_hash(&keys.public, &h, &mut rng)?, 1_700_000_000 + i)
            .with_metadata("frame", &i.to_string());
        store.insert_entry(entry)?;
    }
    let stats = store.stats();
    println!(
        "{} entries from {} producer(s), {} bytes",
        stats.entries, stats.producers, stats.log_bytes
    );
    let target = store.entries()[7].entry_id;
    drop(store);

    let store = RegistryStore::open(&path)?;
    let report = store.verify_entry(&target)?;
    println!(
        "reopened; entry {target}: signature {} key {}",
        report.signature_valid, report.key_matches
    );

    let mut line = Vec::new();
    store.export_ndjson(&mut line)?;
    println!(
        "first exported line: {}",
        String::from_utf8_lossy(&line).lines().next().unwrap_or("")
    );
    drop(store);

    let mut bytes = std::fs::read(&path)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&path, bytes)?;
    match RegistryStore::open(&path) {
        Err(e) => println!("after flipping byte {mid}: {e}"),
        Ok(_) => println!("after flipping byte {mid}: opened without complaint"),
    }
    Ok(())
}
