use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Bias-corrected Adam moments for a list of parameter groups.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments for groups of the given lengths.
    pub fn new(group_lengths: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: group_lengths.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: group_lengths.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }
}

/// One Adam update over all groups. Gradients are checked for finiteness
/// before anything is written; a non-finite entry reports its group index
/// as the layer.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Dimension(format!(
            "{} parameter groups, {} gradient groups, {} moment groups",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (layer, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[layer].len() {
            return Err(Error::Dimension(format!(
                "group {layer}: {} parameters, {} gradients",
                p.len(),
                g.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { layer });
        }
    }

    state.step_count += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step_count as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = vec![0.5, -1.5, 2.0];
        let mut state = AdamState::new(&[3], AdamConfig::default());
        adam_step(&mut [w.as_mut_slice()], &[&[0.0, 0.0, 0.0]], &mut state).unwrap();
        assert_eq!(w, vec![0.5, -1.5, 2.0]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t = 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let mut w = vec![0.0];
        let config = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[1], config);
        adam_step(&mut [w.as_mut_slice()], &[&[1.0]], &mut state).unwrap();
        let expected = -0.1 / (1.0 + 1e-7);
        assert!((w[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn minimises_square() {
        let mut w = vec![1.0];
        let config = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[1], config);
        for _ in 0..500 {
            let g = [2.0 * w[0]];
            adam_step(&mut [w.as_mut_slice()], &[&g], &mut state).unwrap();
        }
        assert!(w[0].abs() < 1e-3, "w = {}", w[0]);
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut a = vec![0.0; 2];
        let mut b = vec![0.0; 2];
        let mut state = AdamState::new(&[2, 2], AdamConfig::default());
        let err = adam_step(&mut [a.as_mut_slice(), b.as_mut_slice()], &[&[0.0, 0.0], &[1.0, f64::NAN]], &mut state).unwrap_err();
        assert!(matches!(err, Error::Divergence { layer: 1 }));
        assert_eq!(state.step_count, 0);
    }
}
