use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Embedding;

/// Correlated Gaussian embeddings: `x = mean + A z` with `z ~ N(0, I)`.
///
/// `A` is a random Gaussian matrix with decaying column scales, so the
/// covariance has a spread spectrum and strongly correlated coordinates.
#[derive(Debug, Clone)]
pub struct SyntheticEmbeddings {
    mean: Vec<f64>,
    mixing: DMatrix<f64>,
}

impl SyntheticEmbeddings {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = (dim as f64).sqrt();
        let mixing = DMatrix::from_fn(dim, dim, |_, j| {
            let scale = 1.0 / (1.0 + j as f64 / 16.0);
            rng.sample::<f64, _>(StandardNormal) * scale / norm
        });
        let mean = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Self { mean, mixing }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Embedding> {
        let d = self.dim();
        let latent = DMatrix::from_fn(count, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = latent * self.mixing.transpose();
        (0..count)
            .map(|i| {
                let values = (0..d).map(|j| (x[(i, j)] + self.mean[j]) as f32).collect();
                Embedding::new(values).expect("finite by construction")
            })
            .collect()
    }
}
