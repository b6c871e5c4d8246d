use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::{HashError, PerceptualHash};

/// Relative diagonal loading applied to the covariance before decomposition.
pub const RIDGE_FACTOR: f64 = 1e-6;
/// Regularized eigenvalues below this are treated as zero variance.
pub const MIN_EIGENVALUE: f64 = 1e-10;

/// A real-valued feature vector as emitted by the feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self, HashError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HashError::NonFiniteInput);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

/// Mean-centering plus a PCA whitening projection.
///
/// `projection` holds the unscaled orthonormal eigenvector rows; the
/// `1/sqrt(eigenvalue)` scaling is applied in [`WhiteningModel::apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    input_dim: usize,
    output_dim: usize,
    sample_count: u64,
    mean: Vec<f64>,
    projection: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl WhiteningModel {
    /// Fits mean, principal directions and per-direction variances.
    ///
    /// The covariance uses the `n - 1` estimator and is loaded with
    /// `RIDGE_FACTOR * trace / d` on its diagonal. Eigenvectors are ordered by
    /// descending eigenvalue (ties by original index) and each is flipped so its
    /// largest-magnitude entry is positive.
    pub fn fit(embeddings: &[Embedding], output_dim: usize) -> Result<Self, HashError> {
        if output_dim == 0 {
            return Err(HashError::InvalidDimension(
                "output_dim must be positive".into(),
            ));
        }
        let n = embeddings.len();
        if n < output_dim.max(2) {
            return Err(HashError::TooFewSamples {
                needed: output_dim.max(2),
                got: n,
            });
        }
        let d = embeddings[0].dim();
        if let Some(bad) = embeddings.iter().find(|e| e.dim() != d) {
            return Err(HashError::DimensionMismatch {
                expected: d,
                actual: bad.dim(),
            });
        }
        if output_dim > d {
            return Err(HashError::InvalidDimension(format!(
                "output_dim {output_dim} exceeds input dimension {d}"
            )));
        }

        let mean = compensated_mean(embeddings, d);
        let centered = DMatrix::from_fn(n, d, |i, j| embeddings[i].0[j] as f64 - mean[j]);
        let mut cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
        cov = (&cov + cov.transpose()) * 0.5;

        let ridge = RIDGE_FACTOR * cov.trace() / d as f64;
        for i in 0..d {
            cov[(i, i)] += ridge;
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });

        let rank = order
            .iter()
            .filter(|&&i| eig.eigenvalues[i] >= MIN_EIGENVALUE)
            .count();
        if rank < output_dim {
            return Err(HashError::DegenerateCovariance {
                rank,
                needed: output_dim,
            });
        }

        let mut projection = Vec::with_capacity(output_dim * d);
        let mut eigenvalues = Vec::with_capacity(output_dim);
        for &col in order.iter().take(output_dim) {
            let v = eig.eigenvectors.column(col);
            let pivot = (0..d).fold(
                0,
                |best, j| if v[j].abs() > v[best].abs() { j } else { best },
            );
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            projection.extend(v.iter().map(|x| x * sign));
            eigenvalues.push(eig.eigenvalues[col]);
        }

        Ok(Self {
            input_dim: d,
            output_dim,
            sample_count: n as u64,
            mean,
            projection,
            eigenvalues,
        })
    }

    /// Zero mean, identity projection, unit variances.
    pub fn identity(dim: usize) -> Self {
        let mut projection = vec![0.0; dim * dim];
        for i in 0..dim {
            projection[i * dim + i] = 1.0;
        }
        Self {
            input_dim: dim,
            output_dim: dim,
            sample_count: dim as u64,
            mean: vec![0.0; dim],
            projection,
            eigenvalues: vec![1.0; dim],
        }
    }

    pub fn from_parts(
        input_dim: usize,
        output_dim: usize,
        sample_count: u64,
        mean: Vec<f64>,
        projection: Vec<f64>,
        eigenvalues: Vec<f64>,
    ) -> Result<Self, HashError> {
        if output_dim == 0 || output_dim > input_dim {
            return Err(HashError::InvalidDimension(format!(
                "output_dim {output_dim} incompatible with input_dim {input_dim}"
            )));
        }
        if mean.len() != input_dim
            || projection.len() != input_dim * output_dim
            || eigenvalues.len() != output_dim
        {
            return Err(HashError::Format(
                "whitening model component lengths disagree".into(),
            ));
        }
        let all = mean.iter().chain(&projection).chain(&eigenvalues);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(HashError::NonFiniteInput);
        }
        if eigenvalues.iter().any(|&e| e < MIN_EIGENVALUE) {
            return Err(HashError::DegenerateCovariance {
                rank: eigenvalues.iter().filter(|&&e| e >= MIN_EIGENVALUE).count(),
                needed: output_dim,
            });
        }
        Ok(Self {
            input_dim,
            output_dim,
            sample_count,
            mean,
            projection,
            eigenvalues,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `output_dim x input_dim` unscaled basis.
    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn projection_row(&self, r: usize) -> &[f64] {
        &self.projection[r * self.input_dim..(r + 1) * self.input_dim]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn apply(&self, e: &Embedding) -> Result<Vec<f64>, HashError> {
        if e.dim() != self.input_dim {
            return Err(HashError::DimensionMismatch {
                expected: self.input_dim,
                actual: e.dim(),
            });
        }
        let centered: Vec<f64> =
            e.0.iter()
                .zip(&self.mean)
                .map(|(&x, m)| x as f64 - m)
                .collect();
        Ok((0..self.output_dim)
            .map(|r| {
                let dot: f64 = self
                    .projection_row(r)
                    .iter()
                    .zip(&centered)
                    .map(|(p, c)| p * c)
                    .sum();
                dot / self.eigenvalues[r].sqrt()
            })
            .collect())
    }

    pub fn hash(&self, e: &Embedding) -> Result<PerceptualHash, HashError> {
        binarize(&self.apply(e)?)
    }

    /// Hashes a batch in parallel; output order follows input order.
    pub fn hash_batch(&self, embeddings: &[Embedding]) -> Result<Vec<PerceptualHash>, HashError> {
        embeddings.par_iter().map(|e| self.hash(e)).collect()
    }
}

fn compensated_mean(embeddings: &[Embedding], d: usize) -> Vec<f64> {
    // Neumaier summation per coordinate
    let mut sum = vec![0.0f64; d];
    let mut comp = vec![0.0f64; d];
    for e in embeddings {
        for (j, &x) in e.0.iter().enumerate() {
            let x = x as f64;
            let t = sum[j] + x;
            if sum[j].abs() >= x.abs() {
                comp[j] += (sum[j] - t) + x;
            } else {
                comp[j] += (x - t) + sum[j];
            }
            sum[j] = t;
        }
    }
    let n = embeddings.len() as f64;
    sum.iter().zip(&comp).map(|(s, c)| (s + c) / n).collect()
}

pub fn fit_whitening(
    embeddings: &[Embedding],
    output_dim: usize,
) -> Result<WhiteningModel, HashError> {
    WhiteningModel::fit(embeddings, output_dim)
}

pub fn apply_whitening(model: &WhiteningModel, e: &Embedding) -> Result<Vec<f64>, HashError> {
    model.apply(e)
}

/// Sign binarization: `z_i >= 0` maps to 1, so an exact zero becomes 1.
pub fn binarize(z: &[f64]) -> Result<PerceptualHash, HashError> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(HashError::NonFiniteInput);
    }
    Ok(PerceptualHash::from_bits(z.iter().map(|&v| v >= 0.0)))
}

pub fn hash_embedding(model: &WhiteningModel, e: &Embedding) -> Result<PerceptualHash, HashError> {
    model.hash(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    /// Cyclic Jacobi eigenvalue iteration, kept independent of nalgebra.
    fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.len();
        let mut v = vec![vec![0.0; n]; n];
        for (i, row) in v.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for row in a.iter_mut() {
                        let (akp, akq) = (row[p], row[q]);
                        row[p] = c * akp - s * akq;
                        row[q] = s * akp + c * akq;
                    }
                    let (rp, rq) = (a[p].clone(), a[q].clone());
                    for k in 0..n {
                        a[p][k] = c * rp[k] - s * rq[k];
                        a[q][k] = s * rp[k] + c * rq[k];
                    }
                    for row in v.iter_mut() {
                        let (vkp, vkq) = (row[p], row[q]);
                        row[p] = c * vkp - s * vkq;
                        row[q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let vals = (0..n).map(|i| a[i][i]).collect();
        let vecs = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
        (vals, vecs)
    }

    #[test]
    fn scaled_basis_aligns_with_top_variance_directions() {
        let scales = [1.0f32, 3.0, 0.5, 2.0];
        let d = scales.len();
        // 96 samples: +/- c_i e_i cycling through the basis
        let data: Vec<Embedding> = (0..96)
            .map(|s| {
                let i = s % d;
                let sign = if (s / d).is_multiple_of(2) { 1.0 } else { -1.0 };
                let mut v = vec![0.0f32; d];
                v[i] = sign * scales[i];
                emb(&v)
            })
            .collect();
        let model = fit_whitening(&data, 2).unwrap();

        let mean: Vec<f64> = (0..d)
            .map(|j| data.iter().map(|e| e.values()[j] as f64).sum::<f64>() / 96.0)
            .collect();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| {
                        data.iter()
                            .map(|e| {
                                (e.values()[a] as f64 - mean[a]) * (e.values()[b] as f64 - mean[b])
                            })
                            .sum::<f64>()
                            / 95.0
                    })
                    .collect()
            })
            .collect();
        let (vals, vecs) = jacobi_eigen(cov);
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        let ridge = RIDGE_FACTOR * vals.iter().sum::<f64>() / d as f64;
        for (r, &i) in idx.iter().take(2).enumerate() {
            assert!((model.eigenvalues()[r] - (vals[i] + ridge)).abs() < 1e-9);
            let dot: f64 = model
                .projection_row(r)
                .iter()
                .zip(&vecs[i])
                .map(|(a, b)| a * b)
                .sum();
            assert!((dot.abs() - 1.0).abs() < 1e-9, "row {r} misaligned: {dot}");
        }
        // top directions are axes 1 (scale 3) then 3 (scale 2)
        assert!((model.projection_row(0)[1] - 1.0).abs() < 1e-9);
        assert!((model.projection_row(1)[3] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_embeddings_are_degenerate() {
        let data = vec![emb(&[1.0, 2.0, 3.0]); 10];
        assert!(matches!(
            fit_whitening(&data, 2),
            Err(HashError::DegenerateCovariance { .. })
        ));
    }

    #[test]
    fn fit_preconditions() {
        let data = vec![emb(&[1.0, 2.0]), emb(&[0.0, 1.0])];
        assert!(matches!(
            fit_whitening(&data[..1], 1),
            Err(HashError::TooFewSamples { .. })
        ));
        assert!(matches!(
            fit_whitening(&[emb(&[1.0, 2.0]), emb(&[1.0])], 1),
            Err(HashError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            fit_whitening(&data, 3),
            Err(HashError::TooFewSamples { .. })
        ));
        assert!(Embedding::new(vec![1.0, f32::NAN]).is_err());
    }

    #[test]
    fn two_dimensional_hand_example() {
        let data: Vec<Embedding> = [[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]]
            .iter()
            .map(|v| emb(v))
            .collect();
        let model = fit_whitening(&data, 2).unwrap();
        // hand oracle: mean 0, covariance diag(2/3, 8/3) with the n-1 estimator
        let ridge = RIDGE_FACTOR * (10.0 / 3.0) / 2.0;
        assert!((model.eigenvalues()[0] - (8.0 / 3.0 + ridge)).abs() < 1e-12);
        assert!((model.eigenvalues()[1] - (2.0 / 3.0 + ridge)).abs() < 1e-12);
        assert_eq!(model.projection_row(0), &[0.0, 1.0]);
        assert_eq!(model.projection_row(1), &[1.0, 0.0]);

        let z = apply_whitening(&model, &emb(&[0.0, 2.0])).unwrap();
        assert!((z[0] - 2.0 / (8.0f64 / 3.0 + ridge).sqrt()).abs() < 1e-12);
        assert_eq!(z[1], 0.0);

        // whitened training covariance = I up to the ridge
        let w: Vec<Vec<f64>> = data.iter().map(|e| model.apply(e).unwrap()).collect();
        for a in 0..2 {
            for b in 0..2 {
                let c: f64 = w.iter().map(|v| v[a] * v[b]).sum::<f64>() / 3.0;
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((c - expected).abs() < 1e-5, "cov[{a}][{b}] = {c}");
            }
        }
    }

    #[test]
    fn apply_examples() {
        let data: Vec<Embedding> = (0..20)
            .map(|i| emb(&[(i as f32).sin(), (i as f32 * 0.7).cos(), i as f32 * 0.1]))
            .collect();
        let model = fit_whitening(&data, 2).unwrap();
        let mean = emb(&model.mean().iter().map(|&m| m as f32).collect::<Vec<_>>());
        let z = model.apply(&mean).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-6));

        let id = WhiteningModel::identity(4);
        let e = emb(&[0.3, -1.2, 2.5, -0.0]);
        let z = id.apply(&e).unwrap();
        for (a, b) in z.iter().zip(e.values()) {
            assert_eq!(*a, *b as f64);
        }
        assert!(matches!(
            id.apply(&emb(&[1.0])),
            Err(HashError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(
            binarize(&[0.5, 2.0, 1e-9]).unwrap(),
            PerceptualHash::ones(3)
        );
        let z = [0.1, -0.2, 0.0, -5.0];
        assert_eq!(
            binarize(&z).unwrap(),
            PerceptualHash::from_bits([true, false, true, false])
        );
        let v = [0.3, -0.7, 1.1, -2.0, 5.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(binarize(&v).unwrap().complement(), binarize(&neg).unwrap());
        assert!(matches!(
            binarize(&[f64::INFINITY]),
            Err(HashError::NonFiniteInput)
        ));
    }

    #[test]
    fn hash_embedding_examples() {
        let id = WhiteningModel::identity(6);
        assert_eq!(
            hash_embedding(&id, &emb(&[0.0; 6])).unwrap(),
            PerceptualHash::ones(6)
        );
        let alt = emb(&[1.0, -1.0, 2.0, -2.0, 3.0, -3.0]);
        assert_eq!(
            hash_embedding(&id, &alt).unwrap(),
            PerceptualHash::from_bits([true, false, true, false, true, false])
        );
        let data: Vec<Embedding> = (0..30)
            .map(|i| {
                emb(&[
                    (i as f32 * 1.3).sin(),
                    (i as f32 * 0.4).cos(),
                    (i % 7) as f32,
                ])
            })
            .collect();
        let model = fit_whitening(&data, 3).unwrap();
        for e in &data {
            let composed = binarize(&apply_whitening(&model, e).unwrap()).unwrap();
            assert_eq!(hash_embedding(&model, e).unwrap(), composed);
        }
        assert_eq!(
            model.hash_batch(&data).unwrap(),
            data.iter()
                .map(|e| model.hash(e).unwrap())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn fit_is_deterministic() {
        let data: Vec<Embedding> = (0..50)
            .map(|i| {
                emb(&[
                    (i as f32).sin(),
                    (i as f32 * 2.1).cos(),
                    (i as f32 * 0.3).sin(),
                    0.01 * i as f32,
                ])
            })
            .collect();
        assert_eq!(
            fit_whitening(&data, 3).unwrap(),
            fit_whitening(&data, 3).unwrap()
        );
    }
}
