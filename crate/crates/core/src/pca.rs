//! Principal-component codec between scaled 24-hour price days and the
//! low-dimensional space the flow is trained on.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Default code dimension.
pub const DEFAULT_COMPONENTS: usize = 14;

/// Components with less than this share of the total variance are flagged.
const NEAR_ZERO_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaCodec {
    mean: Vec<f64>,
    /// `dim x n_components`, orthonormal columns.
    components: Matrix,
    /// Eigenvalues of the sample covariance (denominator `n - 1`).
    explained_variance: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
    total_variance: f64,
}

impl PcaCodec {
    /// Fits on the rows of `data`.
    pub fn fit(data: &Matrix, n_components: usize) -> Result<Self> {
        let (n, dim) = data.shape();
        if n_components == 0 || n_components > dim {
            return Err(Error::Config(format!(
                "n_components must lie in 1..={dim}, got {n_components}"
            )));
        }
        if n <= n_components {
            return Err(Error::Config(format!(
                "PCA with {n_components} components needs more than {n_components} rows, got {n}"
            )));
        }
        let mut mean = vec![0.0; dim];
        for row in data.row_iter() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for row in data.row_iter() {
            for i in 0..dim {
                let di = row[i] - mean[i];
                for j in i..dim {
                    cov[(i, j)] += di * (row[j] - mean[j]);
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[(i, j)] / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let total_variance = cov.trace();

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut components = Matrix::zeros(dim, n_components);
        let mut explained_variance = Vec::with_capacity(n_components);
        for (c, &k) in order.iter().take(n_components).enumerate() {
            let col = eig.eigenvectors.column(k);
            // largest-magnitude entry positive
            let pivot = (0..dim).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap();
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..dim {
                components.set(i, c, sign * col[i]);
            }
            explained_variance.push(eig.eigenvalues[k].max(0.0));
        }
        let explained_variance_ratio = explained_variance
            .iter()
            .map(|&v| if total_variance > 0.0 { v / total_variance } else { 0.0 })
            .collect();

        let codec = Self {
            mean,
            components,
            explained_variance,
            explained_variance_ratio,
            total_variance,
        };
        let flagged = codec.near_zero_components();
        if !flagged.is_empty() {
            log::warn!("PCA components {flagged:?} carry near-zero variance (rank-deficient data)");
        }
        Ok(codec)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.cols()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn explained_variance_ratio(&self) -> &[f64] {
        &self.explained_variance_ratio
    }

    pub fn cumulative_ratio(&self) -> f64 {
        self.explained_variance_ratio.iter().sum()
    }

    /// Sum of the sample variances of all input dimensions.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Indices of retained components with (numerically) zero variance.
    pub fn near_zero_components(&self) -> Vec<usize> {
        self.explained_variance_ratio
            .iter()
            .enumerate()
            .filter(|(_, &r)| r <= NEAR_ZERO_RATIO)
            .map(|(i, _)| i)
            .collect()
    }

    /// `Uᵀ (x - x̄)`.
    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "encode: input length");
        let mut code = vec![0.0; self.n_components()];
        for (i, (&xi, &mi)) in x.iter().zip(&self.mean).enumerate() {
            let d = xi - mi;
            for (c, &u) in code.iter_mut().zip(self.components.row(i)) {
                *c += u * d;
            }
        }
        code
    }

    /// `x̄ + U x'`.
    pub fn decode(&self, code: &[f64]) -> Vec<f64> {
        assert_eq!(code.len(), self.n_components(), "decode: code length");
        (0..self.dim())
            .map(|i| {
                self.mean[i]
                    + self
                        .components
                        .row(i)
                        .iter()
                        .zip(code)
                        .map(|(u, c)| u * c)
                        .sum::<f64>()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_data(rng: &mut Rng, n: usize, dim: usize) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| rng.sample_standard_normal(dim)).collect();
        Matrix::from_rows(&rows).unwrap()
    }

    fn orthonormality_error(codec: &PcaCodec) -> f64 {
        let u = codec.components();
        let utu = u.transpose().matmul(u).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..utu.rows() {
            for j in 0..utu.cols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((utu.get(i, j) - target).abs());
            }
        }
        worst
    }

    #[test]
    fn exact_subspace_is_fully_explained() {
        let mut rng = Rng::new(1);
        let a: Vec<f64> = rng.sample_standard_normal(24);
        let b: Vec<f64> = rng.sample_standard_normal(24);
        let offset: Vec<f64> = rng.sample_standard_normal(24);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let (s, t) = (rng.standard_normal(), rng.standard_normal());
                (0..24).map(|i| offset[i] + s * a[i] + t * b[i]).collect()
            })
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let codec = PcaCodec::fit(&data, 2).unwrap();
        assert!((codec.cumulative_ratio() - 1.0).abs() < 1e-10);
        for row in &rows {
            let back = codec.decode(&codec.encode(row));
            for (x, y) in row.iter().zip(&back) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn isotropic_noise_ratio_tracks_dimension_share() {
        let mut rng = Rng::new(2);
        let data = random_data(&mut rng, 20_000, 24);
        let codec = PcaCodec::fit(&data, 14).unwrap();
        let ratio = codec.cumulative_ratio();
        // top eigenvalues of a sample covariance are biased upward by about
        // sqrt(24 / n) relative, so allow a few percent above 14/24
        assert!((ratio - 14.0 / 24.0).abs() < 0.03, "ratio {ratio}");
    }

    #[test]
    fn components_are_orthonormal_and_sorted() {
        let mut rng = Rng::new(3);
        let data = random_data(&mut rng, 200, 24);
        let codec = PcaCodec::fit(&data, 14).unwrap();
        assert!(orthonormality_error(&codec) < 1e-10);
        let r = codec.explained_variance_ratio();
        assert!(r.windows(2).all(|w| w[0] >= w[1]));
        for c in 0..14 {
            let col = codec.components().column(c);
            let pivot = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn mean_encodes_to_zero_and_unit_vectors_map_to_axes() {
        let mut rng = Rng::new(4);
        let data = random_data(&mut rng, 100, 24);
        let codec = PcaCodec::fit(&data, 14).unwrap();
        assert!(codec.encode(codec.mean()).iter().all(|v| v.abs() < 1e-12));
        let shifted: Vec<f64> = (0..24).map(|i| codec.mean()[i] + codec.components().get(i, 0)).collect();
        let code = codec.encode(&shifted);
        assert!((code[0] - 1.0).abs() < 1e-12);
        assert!(code[1..].iter().all(|v| v.abs() < 1e-12));
        let zero = codec.decode(&[0.0; 14]);
        assert_eq!(zero, codec.mean());
    }

    #[test]
    fn encode_matches_naive_product() {
        let mut rng = Rng::new(5);
        let data = random_data(&mut rng, 100, 24);
        let codec = PcaCodec::fit(&data, 14).unwrap();
        let x = rng.sample_standard_normal(24);
        let code = codec.encode(&x);
        let u = codec.components();
        for c in 0..14 {
            let mut acc = 0.0;
            for i in 0..24 {
                acc += u.get(i, c) * (x[i] - codec.mean()[i]);
            }
            assert_eq!(acc, code[c]);
        }
    }

    #[test]
    fn rank_deficient_components_are_flagged() {
        let mut rng = Rng::new(6);
        let dir = rng.sample_standard_normal(24);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let s = rng.standard_normal();
                dir.iter().map(|d| s * d).collect()
            })
            .collect();
        let codec = PcaCodec::fit(&Matrix::from_rows(&rows).unwrap(), 3).unwrap();
        assert_eq!(codec.near_zero_components(), vec![1, 2]);
    }

    #[test]
    fn rejects_too_few_rows() {
        let data = Matrix::zeros(14, 24);
        assert!(PcaCodec::fit(&data, 14).is_err());
        assert!(PcaCodec::fit(&Matrix::zeros(30, 24), 25).is_err());
    }
}
