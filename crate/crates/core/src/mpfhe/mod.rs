//! Threshold key lifecycle and encrypted query evaluation.
//!
//! Phases: [`setup`] produces an aggregated key plus one Shamir share per
//! party; producers and queriers [`encrypt_hash`] bit by bit; an evaluator
//! runs [`SimEvaluator::evaluate_query`]; any `m` parties turn the result into
//! plaintext with [`partial_decrypt`] and [`combine_shares`].
//!
//! Only the cleartext-simulation backend is implemented. Its wire ciphertexts
//! are masked, and unmasking requires a quorum of shares, but the evaluation
//! key doubles as the secret, so it is a protocol harness and not a secure
//! scheme.

mod cipher;
mod field;
mod keys;
mod query;

pub use cipher::{
    combine_shares, encrypt_hash, encrypt_threshold, partial_decrypt, Ciphertext, CompressionHook,
    DecryptionShare, EncryptedHash, IdentityCompression, Plaintext, SimEvaluator, WireBit,
};
pub use keys::{
    setup, setup_named, KeyDigest, KeyMaterial, PartyId, PartySet, PublicKey, SecretShare,
    SIM_BACKEND,
};
pub use query::{evaluate_circuit, EncResult, PhaseGates, PhaseTiming, QueryMode, QueryTelemetry};

use crate::boolcircuit::CircuitError;

/// Width of an encrypted distance threshold for 96-bit hashes.
pub const THRESHOLD_WIDTH: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MpfheError {
    #[error("invalid threshold: need 2 <= m <= n, got m = {m}, n = {n}")]
    InvalidThreshold { n: u32, m: u32 },
    #[error("ciphertext or share belongs to a different key")]
    KeyMismatch,
    #[error("decryption incomplete: {have} of {need} required shares")]
    DecryptionIncomplete { have: usize, need: usize },
    #[error("decryption share is bound to a different ciphertext")]
    BindingMismatch,
    #[error("unknown party {0}")]
    UnknownParty(u32),
    #[error("value {value} does not fit in {width} bits")]
    WidthOverflow { value: u64, width: usize },
    #[error("length mismatch: expected {expected} bits, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("empty database")]
    EmptyDatabase,
    #[error("malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashcore::PerceptualHash;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn decrypt_all(keys: &KeyMaterial, ct: &Ciphertext) -> Plaintext {
        let shares: Vec<_> = keys
            .shares
            .iter()
            .map(|s| partial_decrypt(s, ct).unwrap())
            .collect();
        combine_shares(&keys.public, &shares, ct).unwrap()
    }

    #[test]
    fn setup_two_of_two() {
        let (parties, keys) = setup(2, 2, 1).unwrap();
        assert_eq!(parties.parties.len(), 2);
        assert_eq!(keys.shares.len(), 2);
        assert_ne!(keys.shares[0].y, keys.shares[1].y);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = PerceptualHash::random(96, &mut rng);
        let ct = encrypt_hash(&keys.public, &h, &mut rng).unwrap();
        let one = partial_decrypt(&keys.shares[0], ct.ciphertext()).unwrap();
        assert_eq!(
            combine_shares(&keys.public, std::slice::from_ref(&one), ct.ciphertext()),
            Err(MpfheError::DecryptionIncomplete { have: 1, need: 2 })
        );
        assert_eq!(decrypt_all(&keys, ct.ciphertext()).to_hash(), h);
    }

    #[test]
    fn setup_is_deterministic_and_validates() {
        assert_eq!(setup(3, 2, 9).unwrap(), setup(3, 2, 9).unwrap());
        assert_ne!(
            setup(3, 2, 9).unwrap().1.public.digest,
            setup(3, 2, 10).unwrap().1.public.digest
        );
        assert_eq!(
            setup(2, 3, 0).unwrap_err(),
            MpfheError::InvalidThreshold { n: 2, m: 3 }
        );
        assert!(setup(1, 1, 0).is_err());
        assert!(setup(3, 1, 0).is_err());
    }

    #[test]
    fn every_share_subset_of_two_of_three() {
        let (_, keys) = setup(3, 2, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = PerceptualHash::random(96, &mut rng);
        let ct = encrypt_hash(&keys.public, &h, &mut rng).unwrap();
        let all: Vec<_> = keys
            .shares
            .iter()
            .map(|s| partial_decrypt(s, ct.ciphertext()).unwrap())
            .collect();
        for mask in 1u32..8 {
            let subset: Vec<_> = (0..3)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| all[i].clone())
                .collect();
            let res = combine_shares(&keys.public, &subset, ct.ciphertext());
            if subset.len() >= 2 {
                assert_eq!(res.unwrap().to_hash(), h, "subset {mask:03b}");
            } else {
                assert!(matches!(res, Err(MpfheError::DecryptionIncomplete { .. })));
            }
        }
    }

    #[test]
    fn encryption_examples() {
        let (_, keys) = setup(2, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zero = PerceptualHash::zeros(96);
        let ct = encrypt_hash(&keys.public, &zero, &mut rng).unwrap();
        assert_eq!(decrypt_all(&keys, ct.ciphertext()).to_hash(), zero);
        for _ in 0..50 {
            let h = PerceptualHash::random(96, &mut rng);
            let ct = encrypt_hash(&keys.public, &h, &mut rng).unwrap();
            assert_eq!(decrypt_all(&keys, ct.ciphertext()).to_hash(), h);
        }
        assert!(matches!(
            encrypt_hash(&keys.public, &PerceptualHash::zeros(95), &mut rng),
            Err(MpfheError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn wire_form_does_not_expose_bits() {
        let (_, keys) = setup(2, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ones = PerceptualHash::ones(96);
        let mut set = 0;
        for _ in 0..100 {
            let ct = encrypt_hash(&keys.public, &ones, &mut rng).unwrap();
            set += ct
                .ciphertext()
                .wire_bits()
                .iter()
                .filter(|b| b.masked)
                .count();
        }
        let frac = set as f64 / 9600.0;
        assert!((frac - 0.5).abs() < 0.03, "masked ones fraction {frac}");
    }

    #[test]
    fn threshold_encryption() {
        let (_, keys) = setup(2, 2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ct = encrypt_threshold(&keys.public, 8, 7, &mut rng).unwrap();
        assert_eq!(ct.len(), 7);
        assert_eq!(decrypt_all(&keys, &ct).as_uint(), 8);
        assert_eq!(
            decrypt_all(
                &keys,
                &encrypt_threshold(&keys.public, 0, 7, &mut rng).unwrap()
            )
            .as_uint(),
            0
        );
        for _ in 0..50 {
            let t = rng.gen_range(0..128);
            assert_eq!(
                decrypt_all(
                    &keys,
                    &encrypt_threshold(&keys.public, t, 7, &mut rng).unwrap()
                )
                .as_uint(),
                t
            );
        }
        assert_eq!(
            encrypt_threshold(&keys.public, 128, 7, &mut rng),
            Err(MpfheError::WidthOverflow {
                value: 128,
                width: 7
            })
        );
    }

    #[test]
    fn share_binding_and_key_checks() {
        let (_, keys) = setup(2, 2, 6).unwrap();
        let (_, other) = setup(2, 2, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = encrypt_hash(
            &keys.public,
            &PerceptualHash::random(96, &mut rng),
            &mut rng,
        )
        .unwrap();
        let b = encrypt_hash(
            &keys.public,
            &PerceptualHash::random(96, &mut rng),
            &mut rng,
        )
        .unwrap();
        let sa = partial_decrypt(&keys.shares[0], a.ciphertext()).unwrap();
        let sb = partial_decrypt(&keys.shares[1], b.ciphertext()).unwrap();
        assert_eq!(
            combine_shares(&keys.public, &[sa.clone(), sb], a.ciphertext()),
            Err(MpfheError::BindingMismatch)
        );
        // duplicate party counted once
        assert_eq!(
            combine_shares(&keys.public, &[sa.clone(), sa], a.ciphertext()),
            Err(MpfheError::DecryptionIncomplete { have: 1, need: 2 })
        );
        assert_eq!(
            partial_decrypt(&other.shares[0], a.ciphertext()),
            Err(MpfheError::KeyMismatch)
        );
        let ev = SimEvaluator::new(other.public.clone()).unwrap();
        assert_eq!(
            ev.import_vector(a.ciphertext()).unwrap_err(),
            MpfheError::KeyMismatch
        );
    }

    #[test]
    fn tampered_public_key_is_rejected() {
        let (_, keys) = setup(2, 2, 8).unwrap();
        let mut pk = keys.public.clone();
        pk.eval_key ^= 1;
        assert_eq!(pk.validate(), Err(MpfheError::KeyMismatch));
        let json = serde_json::to_string(&keys.public).unwrap();
        let back: PublicKey = serde_json::from_str(&json).unwrap();
        assert_eq!(back, keys.public);
        back.validate().unwrap();
    }

    fn query_setup(seed: u64) -> (KeyMaterial, SimEvaluator, ChaCha8Rng) {
        let (_, keys) = setup(2, 2, seed).unwrap();
        let ev = SimEvaluator::new(keys.public.clone()).unwrap();
        (keys, ev, ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn evaluate_query_examples() {
        let (keys, ev, mut rng) = query_setup(10);
        let q = PerceptualHash::random(96, &mut rng);
        let eq = encrypt_hash(&keys.public, &q, &mut rng).unwrap();
        let t8 = encrypt_threshold(&keys.public, 8, THRESHOLD_WIDTH, &mut rng).unwrap();

        let mut db: Vec<_> = (0..20)
            .map(|_| {
                encrypt_hash(
                    &keys.public,
                    &PerceptualHash::random(96, &mut rng),
                    &mut rng,
                )
                .unwrap()
            })
            .collect();
        db.push(eq.clone());
        let (res, tel) = ev
            .evaluate_query(&db, &eq, &t8, QueryMode::Or, &mut rng)
            .unwrap();
        assert_eq!(decrypt_all(&keys, &res).as_bool(), Some(true));
        assert_eq!(tel.entries, 21);
        assert_eq!(tel.gates.xor.xor, 21 * 96);

        let comps: Vec<_> = (0..20)
            .map(|_| encrypt_hash(&keys.public, &q.complement(), &mut rng).unwrap())
            .collect();
        let (res, _) = ev
            .evaluate_query(&comps, &eq, &t8, QueryMode::Or, &mut rng)
            .unwrap();
        assert_eq!(decrypt_all(&keys, &res).as_bool(), Some(false));

        assert_eq!(
            ev.evaluate_query(&[], &eq, &t8, QueryMode::Or, &mut rng)
                .unwrap_err(),
            MpfheError::EmptyDatabase
        );
    }

    #[test]
    fn count_mode_matches_plaintext_scan() {
        let (keys, ev, mut rng) = query_setup(11);
        let q = PerceptualHash::random(96, &mut rng);
        let plain: Vec<PerceptualHash> = (0..1000)
            .map(|i| {
                if i % 97 == 0 {
                    // near-duplicates at distance 0..=12
                    let flips = rng.gen_range(0..=12);
                    let mut h = q.clone();
                    for j in rand::seq::index::sample(&mut rng, 96, flips) {
                        h.set_bit(j, !h.bit(j));
                    }
                    h
                } else {
                    PerceptualHash::random(96, &mut rng)
                }
            })
            .collect();
        let db: Vec<_> = plain
            .iter()
            .map(|h| encrypt_hash(&keys.public, h, &mut rng).unwrap())
            .collect();
        let eq = encrypt_hash(&keys.public, &q, &mut rng).unwrap();
        let t8 = encrypt_threshold(&keys.public, 8, THRESHOLD_WIDTH, &mut rng).unwrap();
        let expected = plain
            .iter()
            .filter(|h| q.hamming_distance(h).unwrap() <= 8)
            .count() as u64;

        let (count, _) = ev
            .evaluate_query(&db, &eq, &t8, QueryMode::Count, &mut rng)
            .unwrap();
        assert_eq!(count.len(), 10);
        assert_eq!(decrypt_all(&keys, &count).as_uint(), expected);
        let (or, _) = ev
            .evaluate_query(&db, &eq, &t8, QueryMode::Or, &mut rng)
            .unwrap();
        assert_eq!(decrypt_all(&keys, &or).as_bool(), Some(expected > 0));
    }

    #[test]
    fn count_mode_exactly_three_close() {
        let (keys, ev, mut rng) = query_setup(12);
        let q = PerceptualHash::random(96, &mut rng);
        let mut plain: Vec<PerceptualHash> = (0..30).map(|_| q.complement()).collect();
        plain[3] = q.clone();
        let mut near = q.clone();
        near.set_bit(5, !near.bit(5));
        plain[17] = near.clone();
        near.set_bit(50, !near.bit(50));
        plain[29] = near;
        let db: Vec<_> = plain
            .iter()
            .map(|h| encrypt_hash(&keys.public, h, &mut rng).unwrap())
            .collect();
        let eq = encrypt_hash(&keys.public, &q, &mut rng).unwrap();
        let t8 = encrypt_threshold(&keys.public, 8, THRESHOLD_WIDTH, &mut rng).unwrap();
        let (count, _) = ev
            .evaluate_query(&db, &eq, &t8, QueryMode::Count, &mut rng)
            .unwrap();
        assert_eq!(decrypt_all(&keys, &count).as_uint(), 3);
    }

    #[test]
    fn mixed_key_database_is_rejected() {
        let (keys, ev, mut rng) = query_setup(13);
        let (_, other) = setup(2, 2, 99).unwrap();
        let h = PerceptualHash::random(96, &mut rng);
        let good = encrypt_hash(&keys.public, &h, &mut rng).unwrap();
        let bad = encrypt_hash(&other.public, &h, &mut rng).unwrap();
        let t = encrypt_threshold(&keys.public, 8, 7, &mut rng).unwrap();
        assert_eq!(
            ev.evaluate_query(&[good.clone(), bad], &good, &t, QueryMode::Or, &mut rng)
                .unwrap_err(),
            MpfheError::KeyMismatch
        );
    }

    #[test]
    fn compression_hook_defaults_to_identity() {
        let (keys, _, mut rng) = query_setup(14);
        let ct = encrypt_hash(
            &keys.public,
            &PerceptualHash::random(96, &mut rng),
            &mut rng,
        )
        .unwrap();
        let blob = ct.compressed(&IdentityCompression);
        assert_eq!(blob, ct.to_bytes());
        assert_eq!(
            EncryptedHash::from_compressed(&IdentityCompression, &blob).unwrap(),
            ct
        );
    }

    #[test]
    fn wire_layouts() {
        let (keys, _, mut rng) = query_setup(15);
        let ct = encrypt_hash(
            &keys.public,
            &PerceptualHash::random(96, &mut rng),
            &mut rng,
        )
        .unwrap();
        let bytes = ct.to_bytes();
        assert_eq!(bytes.len(), 32 + 4 + 96 * 9);
        assert_eq!(&bytes[..32], &keys.public.digest.0);
        assert_eq!(&bytes[32..36], &96u32.to_le_bytes());
        let share = partial_decrypt(&keys.shares[1], ct.ciphertext()).unwrap();
        let sb = share.to_bytes();
        assert_eq!(&sb[..4], &1u32.to_le_bytes());
        assert_eq!(&sb[4..36], &ct.ciphertext().digest());
        assert_eq!(sb.len(), 40 + 96 * 8);
        assert!(EncryptedHash::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[36 + 8] = 7;
        assert!(EncryptedHash::from_bytes(&bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn serialization_round_trips(seed in any::<u64>(), bits in proptest::collection::vec(any::<bool>(), 96)) {
            let (_, keys) = setup(3, 2, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = PerceptualHash::from_bits(bits);
            let ct = encrypt_hash(&keys.public, &h, &mut rng).unwrap();
            let back = EncryptedHash::from_bytes(&ct.to_bytes()).unwrap();
            prop_assert_eq!(&back, &ct);
            let share = partial_decrypt(&keys.shares[2], ct.ciphertext()).unwrap();
            prop_assert_eq!(DecryptionShare::from_bytes(&share.to_bytes()).unwrap(), share);
        }
    }
}
