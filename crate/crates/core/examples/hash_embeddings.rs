//! Fit a whitening model on synthetic embeddings and hash a few of them,
//! along with lightly perturbed copies.

use provreg::hashcore::{Embedding, SyntheticEmbeddings, WhiteningModel, EMBEDDING_DIM, HASH_BITS};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let source = SyntheticEmbeddings::new(EMBEDDING_DIM, 11);
    let train = source.sample(5000, &mut rng);
    let model = WhiteningModel::fit(&train, HASH_BITS)?;
    println!(
        "fitted {} -> {} on {} samples; top eigenvalues {:.3?}",
        model.input_dim(),
        model.output_dim(),
        model.sample_count(),
        &model.eigenvalues()[..4]
    );

    let noise = Normal::new(0.0f32, 0.02)?;
    for (i, e) in source.sample(5, &mut rng).iter().enumerate() {
        let h = model.hash(e)?;
        let noisy = Embedding::new(
            e.values()
                .iter()
                .map(|v| v + noise.sample(&mut rng))
                .collect(),
        )?;
        let hn = model.hash(&noisy)?;
        println!(
            "{i}: {}  perturbed distance {}",
            h.to_hex(),
            h.hamming_distance(&hn)?
        );
    }

    let a = model.hash(&train[0])?;
    let b = model.hash(&train[1])?;
    println!(
        "two unrelated samples: distance {}",
        a.hamming_distance(&b)?
    );
    Ok(())
}
