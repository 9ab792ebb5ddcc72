//! Fully connected conditioner network with a bounded scale head and a
//! linear translate head.
//!
//! Hidden layers use rectifier units. The last weight matrix is fused: its
//! first `head` output columns feed the scale head (`tanh`), the remaining
//! `head` columns are the translate head.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::rng::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    widths: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Gradients with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`MlpParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    widths: Vec<usize>,
    // activations[l] is the input to weight layer l
    activations: Vec<Matrix>,
    scale: Matrix,
}

#[derive(Debug, Clone)]
pub struct MlpOutput {
    pub scale: Matrix,
    pub translate: Matrix,
    pub cache: MlpCache,
}

fn layer_shapes(widths: &[usize]) -> Vec<(usize, usize)> {
    let last = widths.len() - 2;
    (0..widths.len() - 1)
        .map(|l| {
            let out = if l == last { 2 * widths[l + 1] } else { widths[l + 1] };
            (widths[l], out)
        })
        .collect()
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::Config(format!(
            "an MLP needs at least input and output widths, got {widths:?}"
        )));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::Config(format!("zero width in {widths:?}")));
    }
    Ok(())
}

impl MlpParams {
    /// All-zero network.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        validate_widths(widths)?;
        let shapes = layer_shapes(widths);
        Ok(Self {
            widths: widths.to_vec(),
            weights: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            biases: shapes.iter().map(|&(_, c)| vec![0.0; c]).collect(),
        })
    }

    /// Fan-in scaled uniform hidden layers, zero output heads. The untrained
    /// network therefore emits `scale = 0` and `translate = 0` for every input.
    pub fn new(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut params = Self::zeros(widths)?;
        let n = params.weights.len();
        for w in params.weights.iter_mut().take(n - 1) {
            let bound = 1.0 / (w.rows() as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.uniform(-bound, bound);
            }
        }
        Ok(params)
    }

    /// Every weight and bias drawn uniformly from `[-bound, bound]`.
    pub fn random(widths: &[usize], bound: f64, rng: &mut Rng) -> Result<Self> {
        let mut params = Self::zeros(widths)?;
        for slice in params.param_slices_mut() {
            for v in slice.iter_mut() {
                *v = rng.uniform(-bound, bound);
            }
        }
        Ok(params)
    }

    pub fn from_parts(widths: Vec<usize>, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        validate_widths(&widths)?;
        let shapes = layer_shapes(&widths);
        if weights.len() != shapes.len() || biases.len() != shapes.len() {
            return Err(Error::Dimension(format!(
                "{} weight matrices and {} bias vectors for {} layers",
                weights.len(),
                biases.len(),
                shapes.len()
            )));
        }
        for (l, (&(r, c), (w, b))) in shapes.iter().zip(weights.iter().zip(&biases)).enumerate() {
            if w.shape() != (r, c) || b.len() != c {
                return Err(Error::Dimension(format!(
                    "layer {l}: weight {:?} and bias {} do not match expected {r}x{c}",
                    w.shape(),
                    b.len()
                )));
            }
        }
        Ok(Self {
            widths,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    /// Width of each of the two output heads.
    pub fn head_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn n_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Parameter groups in a fixed order: weights then bias for each layer.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn forward(&self, input: &Matrix) -> Result<MlpOutput> {
        if input.cols() != self.input_width() {
            return Err(Error::Dimension(format!(
                "MLP input has {} columns, expected {}",
                input.cols(),
                self.input_width()
            )));
        }
        let n_layers = self.weights.len();
        let mut activations = Vec::with_capacity(n_layers);
        activations.push(input.clone());
        for l in 0..n_layers - 1 {
            let mut h = affine(&activations[l], &self.weights[l], &self.biases[l]);
            for v in h.as_mut_slice() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            activations.push(h);
        }
        let out = affine(&activations[n_layers - 1], &self.weights[n_layers - 1], &self.biases[n_layers - 1]);
        let head = self.head_width();
        let batch = input.rows();
        let mut scale = Matrix::zeros(batch, head);
        let mut translate = Matrix::zeros(batch, head);
        for i in 0..batch {
            let row = out.row(i);
            for (s, &raw) in scale.row_mut(i).iter_mut().zip(&row[..head]) {
                *s = raw.tanh();
            }
            translate.row_mut(i).copy_from_slice(&row[head..]);
        }
        Ok(MlpOutput {
            scale: scale.clone(),
            translate,
            cache: MlpCache {
                widths: self.widths.clone(),
                activations,
                scale,
            },
        })
    }

    /// Reverse-mode pass for upstream gradients on both heads. Returns the
    /// parameter gradients and the gradient with respect to the full input.
    pub fn backward(&self, cache: &MlpCache, scale_grad: &Matrix, translate_grad: &Matrix) -> Result<(MlpGrads, Matrix)> {
        let mut grads = self.zero_grads();
        let input_grad = self.backward_into(cache, scale_grad, translate_grad, self.input_width(), &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`backward`](Self::backward) but accumulates into `grads` and
    /// only materialises the first `input_cols` columns of the input gradient.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        scale_grad: &Matrix,
        translate_grad: &Matrix,
        input_cols: usize,
        grads: &mut MlpGrads,
    ) -> Result<Matrix> {
        if cache.widths != self.widths || cache.activations.len() != self.weights.len() {
            return Err(Error::StaleCache(format!(
                "cache built for widths {:?}, parameters have {:?}",
                cache.widths, self.widths
            )));
        }
        let batch = cache.activations[0].rows();
        let head = self.head_width();
        if scale_grad.shape() != (batch, head) || translate_grad.shape() != (batch, head) {
            return Err(Error::Dimension(format!(
                "upstream gradients {:?} / {:?}, expected {batch}x{head}",
                scale_grad.shape(),
                translate_grad.shape()
            )));
        }
        if input_cols > self.input_width() {
            return Err(Error::Dimension(format!(
                "requested {input_cols} input-gradient columns of {}",
                self.input_width()
            )));
        }

        let mut delta = Matrix::zeros(batch, 2 * head);
        for i in 0..batch {
            let s = cache.scale.row(i);
            let gs = scale_grad.row(i);
            let gt = translate_grad.row(i);
            let d = delta.row_mut(i);
            for j in 0..head {
                d[j] = gs[j] * (1.0 - s[j] * s[j]);
                d[head + j] = gt[j];
            }
        }

        for l in (0..self.weights.len()).rev() {
            let a = &cache.activations[l];
            accumulate_outer(a, &delta, &mut grads.weights[l]);
            for i in 0..batch {
                for (gb, &d) in grads.biases[l].iter_mut().zip(delta.row(i)) {
                    *gb += d;
                }
            }
            let w = &self.weights[l];
            if l == 0 {
                let mut input_grad = Matrix::zeros(batch, input_cols);
                for i in 0..batch {
                    let d = delta.row(i);
                    for (k, g) in input_grad.row_mut(i).iter_mut().enumerate() {
                        *g = dot(w.row(k), d);
                    }
                }
                return Ok(input_grad);
            }
            let mut prev = Matrix::zeros(batch, w.rows());
            for i in 0..batch {
                let d = delta.row(i);
                let act = a.row(i);
                for (k, p) in prev.row_mut(i).iter_mut().enumerate() {
                    // rectifier derivative, read off the post-activation value
                    if act[k] > 0.0 {
                        *p = dot(w.row(k), d);
                    }
                }
            }
            delta = prev;
        }
        unreachable!("loop returns at layer 0")
    }
}

impl MlpGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `input · weights + bias` broadcast over rows.
fn affine(input: &Matrix, weights: &Matrix, bias: &[f64]) -> Matrix {
    let (batch, inner) = input.shape();
    let out_cols = weights.cols();
    let mut out = Matrix::zeros(batch, out_cols);
    for i in 0..batch {
        let out_row = out.row_mut(i);
        out_row.copy_from_slice(bias);
        let in_row = input.row(i);
        for k in 0..inner {
            let a = in_row[k];
            if a == 0.0 {
                continue;
            }
            for (o, &w) in out_row.iter_mut().zip(weights.row(k)) {
                *o += a * w;
            }
        }
    }
    out
}

/// `target += aᵀ · delta`.
fn accumulate_outer(a: &Matrix, delta: &Matrix, target: &mut Matrix) {
    for i in 0..a.rows() {
        let d = delta.row(i);
        for (k, &ak) in a.row(i).iter().enumerate() {
            if ak == 0.0 {
                continue;
            }
            for (t, &dv) in target.row_mut(k).iter_mut().zip(d) {
                *t += ak * dv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_eval(params: &MlpParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = params.weights.len();
        let mut a = x.to_vec();
        for l in 0..n {
            let w = &params.weights[l];
            let mut next = Vec::with_capacity(w.cols());
            for j in 0..w.cols() {
                let mut acc = params.biases[l][j];
                for (k, &ak) in a.iter().enumerate() {
                    acc += ak * w.get(k, j);
                }
                next.push(if l < n - 1 { acc.max(0.0) } else { acc });
            }
            a = next;
        }
        let head = params.head_width();
        (a[..head].iter().map(|v| v.tanh()).collect(), a[head..].to_vec())
    }

    #[test]
    fn zero_network_emits_zero() {
        let params = MlpParams::zeros(&[4, 6, 3]).unwrap();
        let input = Matrix::from_rows(&[[1.0, -2.0, 3.0, 0.5]]).unwrap();
        let out = params.forward(&input).unwrap();
        assert!(out.scale.as_slice().iter().all(|&v| v == 0.0));
        assert!(out.translate.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_translate_head_is_identity() {
        // widths [2, 2]: one fused layer, translate block set to the identity
        let mut w = Matrix::zeros(2, 4);
        w.set(0, 2, 1.0);
        w.set(1, 3, 1.0);
        let params = MlpParams::from_parts(vec![2, 2], vec![w], vec![vec![0.0; 4]]).unwrap();
        let input = Matrix::from_rows(&[[0.3, -7.0], [2.0, 5.5]]).unwrap();
        let out = params.forward(&input).unwrap();
        assert_eq!(out.translate, input);
    }

    #[test]
    fn forward_matches_naive_evaluation() {
        let mut rng = Rng::new(7);
        let params = MlpParams::random(&[3, 5, 2], 0.8, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect()).collect();
        let input = Matrix::from_rows(&rows).unwrap();
        let out = params.forward(&input).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let (s, t) = naive_eval(&params, row);
            for j in 0..2 {
                assert!((out.scale.get(i, j) - s[j]).abs() <= 1e-15);
                assert!((out.translate.get(i, j) - t[j]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn scale_head_is_bounded() {
        let mut rng = Rng::new(3);
        let params = MlpParams::random(&[2, 4, 2], 50.0, &mut rng).unwrap();
        let input = Matrix::from_rows(&[[100.0, -100.0]]).unwrap();
        let out = params.forward(&input).unwrap();
        assert!(out.scale.as_slice().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let params = MlpParams::zeros(&[3, 2]).unwrap();
        let input = Matrix::zeros(1, 4);
        assert!(matches!(params.forward(&input), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(11);
        let params = MlpParams::random(&[3, 4, 4, 2], 0.5, &mut rng).unwrap();
        let input = Matrix::from_rows(&[[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]]).unwrap();
        let out = params.forward(&input).unwrap();
        let zero = Matrix::zeros(2, 2);
        let (grads, input_grad) = params.backward(&out.cache, &zero, &zero).unwrap();
        assert!(grads.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(input_grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_network_matches_closed_form() {
        // widths [1, 1]: s = tanh(w_s x + b_s), t = w_t x + b_t
        let (ws, bs, wt, bt, x) = (0.7, -0.2, 1.3, 0.4, 0.9);
        let w = Matrix::from_vec(1, 2, vec![ws, wt]).unwrap();
        let params = MlpParams::from_parts(vec![1, 1], vec![w], vec![vec![bs, bt]]).unwrap();
        let input = Matrix::from_vec(1, 1, vec![x]).unwrap();
        let out = params.forward(&input).unwrap();
        let (gs, gt) = (1.5, -0.25);
        let (grads, input_grad) = params
            .backward(
                &out.cache,
                &Matrix::from_vec(1, 1, vec![gs]).unwrap(),
                &Matrix::from_vec(1, 1, vec![gt]).unwrap(),
            )
            .unwrap();
        let sech2 = 1.0 - (ws * x + bs).tanh().powi(2);
        let expected_ws = gs * sech2 * x;
        let expected_bs = gs * sech2;
        let expected_wt = gt * x;
        let expected_bt = gt;
        let expected_x = gs * sech2 * ws + gt * wt;
        assert!((grads.weights[0].get(0, 0) - expected_ws).abs() < 1e-12);
        assert!((grads.weights[0].get(0, 1) - expected_wt).abs() < 1e-12);
        assert!((grads.biases[0][0] - expected_bs).abs() < 1e-12);
        assert!((grads.biases[0][1] - expected_bt).abs() < 1e-12);
        assert!((input_grad.get(0, 0) - expected_x).abs() < 1e-12);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = Rng::new(5);
        let a = MlpParams::random(&[2, 3, 1], 0.5, &mut rng).unwrap();
        let b = MlpParams::random(&[2, 4, 1], 0.5, &mut rng).unwrap();
        let out = a.forward(&Matrix::zeros(1, 2)).unwrap();
        let g = Matrix::zeros(1, 1);
        assert!(matches!(b.backward(&out.cache, &g, &g), Err(Error::StaleCache(_))));
    }
}
