//! Adam with bias correction over named parameter slices.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments of one parameter slice.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam update of `value` in place. `t` is the 1-based step count.
pub fn adam_step(
    name: &str,
    value: &mut [f64],
    grad: &[f64],
    moments: &mut Moments,
    lr: f64,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    check_len("adam gradient", value.len(), grad.len())?;
    check_len("adam moments", value.len(), moments.len())?;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NanGradient(format!("{name}[{i}] = {}", grad[i])));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..value.len() {
        let g = grad[i];
        let m = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        value[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
    }
    Ok(())
}

/// Renormalizes consecutive groups of four values (quaternions) in place.
pub fn renormalize_quaternions(values: &mut [f64]) {
    for q in values.chunks_exact_mut(4) {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            for v in q.iter_mut() {
                *v /= n;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut p = vec![0.3, -1.2];
        let mut m = Moments::zeros(2);
        adam_step("p", &mut p, &[0.0, 0.0], &mut m, 0.1, 1, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(m, Moments::zeros(2));
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0];
        let mut m = Moments { m: vec![0.5], v: vec![0.25] };
        adam_step("p", &mut p, &[0.0], &mut m, 0.1, 2, &cfg).unwrap();
        assert_eq!(m.m[0], 0.5 * 0.9);
        assert_eq!(m.v[0], 0.25 * 0.999);
    }

    #[test]
    fn constant_gradient_matches_scalar_trace() {
        // With a constant gradient, bias correction makes m̂ = g and v̂ = g²
        // exactly in real arithmetic, so each step moves by lr·g/(|g|+ε).
        let cfg = AdamConfig::default();
        let (g, lr, p0) = (0.37, 1e-2, 0.8);
        let mut p = vec![p0];
        let mut m = Moments::zeros(1);
        for t in 1..=50u64 {
            adam_step("p", &mut p, &[g], &mut m, lr, t, &cfg).unwrap();
            let expected = p0 - t as f64 * lr * g / (g + cfg.eps);
            assert!((p[0] - expected).abs() < 1e-12, "step {t}: {} vs {expected}", p[0]);
        }
    }

    #[test]
    fn nan_gradient_is_an_error() {
        let mut p = vec![0.0, 0.0];
        let mut m = Moments::zeros(2);
        let err = adam_step("cloud.mu", &mut p, &[0.0, f64::NAN], &mut m, 0.1, 1, &AdamConfig::default());
        assert!(matches!(err, Err(Error::NanGradient(s)) if s.starts_with("cloud.mu[1]")));
    }

    #[test]
    fn quaternions_are_unit_after_renormalization() {
        let mut q = vec![1.0, 0.2, -0.3, 0.05, 0.9, 0.9, 0.0, 0.1];
        renormalize_quaternions(&mut q);
        for c in q.chunks(4) {
            let n: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
