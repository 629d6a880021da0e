//! ADAM with bias correction, applied to the named parameter set.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First/second moment accumulators, aligned with the parameter order.
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[(String, &Tensor)], lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            v: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// One update over all parameters jointly. `grads` must align with the
    /// parameter order used at construction.
    pub fn update(&mut self, params: &mut [(String, &mut Tensor)], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Config(
                "optimizer state does not match the parameter set".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - math::powi(self.beta1, t);
        let bc2 = 1.0 - math::powi(self.beta2, t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let p = param.1.data_mut();
            for i in 0..p.len() {
                let g = grad.data()[i];
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                p[i] -= self.lr * m_hat / (math::sqrt(v_hat) + self.eps);
            }
        }
        Ok(())
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum();
    let norm = math::sqrt(sq);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // t=1: m_hat/sqrt(v_hat) = g/|g| up to the eps perturbation.
        let mut p = Tensor::from_vec(vec![0.5, -0.25, 3.0]);
        let g = Tensor::from_vec(vec![0.2, -7.0, 1e-3]);
        let before = p.clone();
        let named = vec![("p".to_string(), &p)];
        let mut adam = AdamState::new(&named, 1e-3);
        drop(named);
        let mut named_mut = vec![("p".to_string(), &mut p)];
        adam.update(&mut named_mut, &[g.clone()]).unwrap();
        drop(named_mut);
        for i in 0..3 {
            let delta = p.data()[i] - before.data()[i];
            let want = -1e-3 * g.data()[i].signum();
            assert!(
                (delta - want).abs() < 1e-6,
                "coord {i}: delta {delta}, expected about {want}"
            );
        }
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_lr_is_the_identity() {
        let mut p = Tensor::from_vec(vec![1.0, 2.0]);
        let before = p.clone();
        let named = vec![("p".to_string(), &p)];
        let mut adam = AdamState::new(&named, 0.0);
        drop(named);
        let mut named_mut = vec![("p".to_string(), &mut p)];
        adam.update(&mut named_mut, &[Tensor::from_vec(vec![5.0, -3.0])])
            .unwrap();
        drop(named_mut);
        assert_eq!(p.data(), before.data());
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut grads = vec![Tensor::from_vec(vec![30.0, 40.0])]; // norm 50
        let norm = clip_global_norm(&mut grads, 10.0);
        assert!((norm - 50.0).abs() < 1e-12);
        let new_norm: f64 = grads[0].data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((new_norm - 10.0).abs() < 1e-9);

        let mut small = vec![Tensor::from_vec(vec![0.3, 0.4])];
        clip_global_norm(&mut small, 10.0);
        assert_eq!(small[0].data(), &[0.3, 0.4]);
    }
}
