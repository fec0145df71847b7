use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{PimrlError, Result};

/// Adam moments for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments with the usual (0.9, 0.999, 1e-8) constants.
    pub fn new(param_lens: &[usize]) -> Self {
        Self::with_betas(param_lens, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(param_lens: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: param_lens.iter().map(|n| vec![0.0; *n]).collect(),
            v: param_lens.iter().map(|n| vec![0.0; *n]).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One bias-corrected Adam update. Nothing is modified when any gradient
    /// entry is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(PimrlError::InvalidArgument(format!(
                "adam: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(PimrlError::InvalidArgument(format!("adam: learning rate {lr}")));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != p.len() {
                return Err(PimrlError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(PimrlError::NonFiniteGradient(format!("#{i}")));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Step decay: `lr0 * gamma^floor(epoch / step_size)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub lr0: f64,
    pub step_size: usize,
    pub gamma: f64,
}

impl LrSchedule {
    pub fn new(lr0: f64) -> Self {
        Self {
            lr0,
            step_size: 200,
            gamma: 0.98,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.gamma.powi((epoch / self.step_size.max(1)) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_magnitude() {
        // m̂ = v̂ = 1 after one step with g = 1, so Δθ = -lr / (1 + ε).
        let mut st = AdamState::new(&[1]);
        let mut p = one(0.0);
        st.step(&mut [&mut p], &[one(1.0)], 1e-3).unwrap();
        assert_eq!(st.t, 1);
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-18);
        // Within 1e-8 relative of the reference value -9.99999995e-4.
        assert!(((p.data()[0] + 9.99999995e-4) / 9.99999995e-4).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut st = AdamState::new(&[1]);
        let mut p = one(0.25);
        for _ in 0..10 {
            st.step(&mut [&mut p], &[one(0.0)], 1e-2).unwrap();
        }
        assert_eq!(p.data()[0], 0.25);
        assert_eq!(st.t, 10);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut st = AdamState::new(&[2]);
            let mut p = Tensor::new(vec![2], vec![0.1, -0.3]).unwrap();
            for k in 0..5 {
                let g = Tensor::new(vec![2], vec![0.5 * k as f64, -1.0]).unwrap();
                st.step(&mut [&mut p], &[g], 1e-3).unwrap();
            }
            (p, st)
        };
        let (p1, s1) = run();
        let (p2, s2) = run();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let lr = 1e-3;
        let mut st = AdamState::new(&[1]);
        let mut p = one(0.0);
        let mut last = 0.0;
        for _ in 0..1000 {
            let before = p.data()[0];
            st.step(&mut [&mut p], &[one(0.7)], lr).unwrap();
            last = (p.data()[0] - before).abs();
        }
        assert_eq!(st.t, 1000);
        assert!(last >= 0.9 * lr && last <= lr, "{last}");
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut st = AdamState::new(&[1]);
        let mut p = one(1.0);
        let err = st.step(&mut [&mut p], &[one(f64::NAN)], 1e-3).unwrap_err();
        assert!(matches!(err, PimrlError::NonFiniteGradient(_)));
        assert_eq!(st.t, 0);
        assert_eq!(p.data()[0], 1.0);
    }

    #[test]
    fn zero_lr_leaves_weights() {
        let mut st = AdamState::new(&[1]);
        let mut p = one(1.5);
        st.step(&mut [&mut p], &[one(3.0)], 0.0).unwrap();
        assert_eq!(p.data()[0], 1.5);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        let mut g = vec![Tensor::new(vec![2], vec![0.3, 0.4]).unwrap()];
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g[0].data(), &[0.3, 0.4]);
    }

    #[test]
    fn step_decay() {
        let s = LrSchedule::new(5e-3);
        assert_eq!(s.lr_at(0), 5e-3);
        assert!((s.lr_at(200) - 4.9e-3).abs() < 1e-15);
        assert!((s.lr_at(399) - 4.9e-3).abs() < 1e-15);
        let s = LrSchedule::new(1e-3);
        assert_eq!(s.lr_at(199), 1e-3);
    }
}
