use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, MlpCache, MlpParams, Rng};

/// Affine coupling layer: masked components pass through and, together with
/// the conditioning input, drive the scale and shift of the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    index: usize,
    /// `true` marks a pass-through component.
    mask: Vec<bool>,
    conditioner: MlpParams,
}

/// Alternating parity mask for layer `k`: component `i` passes through when
/// `(i + k)` is odd. A one-dimensional latent transforms its only component
/// in every layer.
pub fn alternating_mask(dim: usize, k: usize) -> Vec<bool> {
    if dim == 1 {
        return vec![false];
    }
    (0..dim).map(|i| (i + k) % 2 == 1).collect()
}

/// Intermediate values of a batched forward pass through one layer.
pub(crate) struct LayerTrace {
    pub input: Matrix,
    pub scale: Matrix,
    pub cache: MlpCache,
}

impl CouplingLayer {
    pub fn new(index: usize, mask: Vec<bool>, conditioner: MlpParams) -> Result<Self> {
        let dim = mask.len();
        if dim == 0 {
            return Err(Error::Config("empty coupling mask".into()));
        }
        if dim > 1 && (mask.iter().all(|&m| m) || mask.iter().all(|&m| !m)) {
            return Err(Error::Config(format!("layer {index}: mask must mix pass-through and transformed components")));
        }
        if dim == 1 && mask[0] {
            return Err(Error::Config(format!("layer {index}: one-dimensional mask must transform")));
        }
        if conditioner.head_width() != dim || conditioner.input_width() < dim {
            return Err(Error::Dimension(format!(
                "layer {index}: conditioner widths {:?} do not fit a {dim}-dimensional mask",
                conditioner.widths()
            )));
        }
        Ok(Self { index, mask, conditioner })
    }

    /// Conditioner with `hidden_depth` hidden layers of `hidden_width` units,
    /// zero-initialised heads.
    pub fn initialised(index: usize, dim: usize, cond_dim: usize, hidden_depth: usize, hidden_width: usize, rng: &mut Rng) -> Result<Self> {
        let widths = conditioner_widths(dim, cond_dim, hidden_depth, hidden_width);
        Self::new(index, alternating_mask(dim, index), MlpParams::new(&widths, rng)?)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn cond_dim(&self) -> usize {
        self.conditioner.input_width() - self.dim()
    }

    pub fn conditioner(&self) -> &MlpParams {
        &self.conditioner
    }

    pub fn conditioner_mut(&mut self) -> &mut MlpParams {
        &mut self.conditioner
    }

    /// `[b ⊙ v, y]` for every row.
    fn conditioner_input(&self, v: &Matrix, y: &Matrix) -> Matrix {
        let dim = self.dim();
        let mut x = Matrix::zeros(v.rows(), dim + y.cols());
        for r in 0..v.rows() {
            let row = x.row_mut(r);
            for (i, (&pass, &vi)) in self.mask.iter().zip(v.row(r)).enumerate() {
                if pass {
                    row[i] = vi;
                }
            }
            row[dim..].copy_from_slice(y.row(r));
        }
        x
    }

    fn check_shapes(&self, v: &Matrix, y: &Matrix) -> Result<()> {
        if v.cols() != self.dim() || y.cols() != self.cond_dim() || v.rows() != y.rows() {
            return Err(Error::Dimension(format!(
                "layer {}: latent {:?} and conditioning {:?}, expected width {} and {}",
                self.index,
                v.shape(),
                y.shape(),
                self.dim(),
                self.cond_dim()
            )));
        }
        Ok(())
    }

    fn numerical(&self, message: &str) -> Error {
        Error::Numerical {
            layer: self.index,
            message: message.to_string(),
        }
    }

    pub(crate) fn forward_traced(&self, v: &Matrix, y: &Matrix, log_det: &mut [f64]) -> Result<(Matrix, LayerTrace)> {
        self.check_shapes(v, y)?;
        let out = self.conditioner.forward(&self.conditioner_input(v, y))?;
        if !out.scale.is_finite() || !out.translate.is_finite() {
            return Err(self.numerical("non-finite scale or translation"));
        }
        let mut z = v.clone();
        for r in 0..v.rows() {
            let s = out.scale.row(r);
            let t = out.translate.row(r);
            let zr = z.row_mut(r);
            for i in 0..self.dim() {
                if !self.mask[i] {
                    zr[i] = zr[i] * s[i].exp() + t[i];
                    log_det[r] += s[i];
                }
            }
        }
        if !z.is_finite() {
            return Err(self.numerical("non-finite output"));
        }
        Ok((
            z,
            LayerTrace {
                input: v.clone(),
                scale: out.scale,
                cache: out.cache,
            },
        ))
    }

    /// Batched forward map; adds each row's log-determinant into `log_det`.
    pub fn forward_batch(&self, v: &Matrix, y: &Matrix, log_det: &mut [f64]) -> Result<Matrix> {
        self.forward_traced(v, y, log_det).map(|(z, _)| z)
    }

    pub fn inverse_batch(&self, z: &Matrix, y: &Matrix) -> Result<Matrix> {
        self.check_shapes(z, y)?;
        if !z.is_finite() {
            return Err(self.numerical("non-finite input to inverse"));
        }
        // masked components are untouched by the layer, so the conditioner
        // sees exactly what it saw in the forward direction
        let out = self.conditioner.forward(&self.conditioner_input(z, y))?;
        let mut v = z.clone();
        for r in 0..z.rows() {
            let s = out.scale.row(r);
            let t = out.translate.row(r);
            let vr = v.row_mut(r);
            for i in 0..self.dim() {
                if !self.mask[i] {
                    vr[i] = (vr[i] - t[i]) * (-s[i]).exp();
                }
            }
        }
        Ok(v)
    }

    pub fn forward(&self, v: &[f64], y: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut log_det = [0.0];
        let z = self.forward_batch(&row_matrix(v), &row_matrix(y), &mut log_det)?;
        Ok((z.into_vec(), log_det[0]))
    }

    pub fn inverse(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inverse_batch(&row_matrix(z), &row_matrix(y))?.into_vec())
    }
}

pub(crate) fn conditioner_widths(dim: usize, cond_dim: usize, hidden_depth: usize, hidden_width: usize) -> Vec<usize> {
    let mut widths = vec![dim + cond_dim];
    widths.extend(std::iter::repeat(hidden_width).take(hidden_depth));
    widths.push(dim);
    widths
}

pub(crate) fn row_matrix(values: &[f64]) -> Matrix {
    Matrix::from_vec(1, values.len(), values.to_vec()).expect("single row")
}
