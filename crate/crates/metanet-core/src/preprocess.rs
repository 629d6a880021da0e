//! Coordinate-wise gradient preprocessing for the fast-weight generators.
//!
//! Raw gradient magnitudes span many orders; each coordinate is expanded
//! into a bounded two-channel code before entering the generators:
//!
//! - `|g| >= e^-p`:  `(ln|g| / p, sign(g))`
//! - otherwise:      `(-1, e^p * g)`
//!
//! Both branches meet at `|g| = e^-p` with the value `(-1, sign(g))`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Scale constant for gradient preprocessing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradPreprocConfig {
    pub p: f64,
}

impl Default for GradPreprocConfig {
    fn default() -> Self {
        GradPreprocConfig { p: 7.0 }
    }
}

impl GradPreprocConfig {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0) {
            return Err(Error::Config(alloc::format!(
                "gradient preprocessing scale must be positive, got {p}"
            )));
        }
        Ok(GradPreprocConfig { p })
    }
}

/// Expand each gradient coordinate into its two-channel code.
///
/// Output shape is the input shape with a trailing extent of 2.
pub fn preprocess_gradient(g: &Tensor, cfg: GradPreprocConfig) -> Result<Tensor> {
    if !g.all_finite() {
        return Err(Error::NonFinite {
            op: "preprocess-gradient",
        });
    }
    let threshold = math::exp(-cfg.p);
    let scale = math::exp(cfg.p);
    let mut out = Vec::with_capacity(g.len() * 2);
    for &v in g.data() {
        if v.abs() >= threshold {
            out.push(math::ln(v.abs()) / cfg.p);
            out.push(if v > 0.0 { 1.0 } else { -1.0 });
        } else {
            out.push(-1.0);
            out.push(scale * v);
        }
    }
    let mut shape = g.shape().to_vec();
    shape.push(2);
    Tensor::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn channels(g: f64, p: f64) -> (f64, f64) {
        let t = preprocess_gradient(
            &Tensor::from_vec(vec![g]),
            GradPreprocConfig::new(p).unwrap(),
        )
        .unwrap();
        (t.data()[0], t.data()[1])
    }

    #[test]
    fn unit_gradient() {
        let (a, b) = channels(1.0, 7.0);
        assert_eq!((a, b), (0.0, 1.0));
    }

    #[test]
    fn zero_gradient_takes_small_branch() {
        let (a, b) = channels(0.0, 7.0);
        assert_eq!((a, b), (-1.0, 0.0));
    }

    #[test]
    fn boundary_value_by_hand() {
        // g = e^-7, p = 7: ln(e^-7)/7 = -1, sign = 1.
        let (a, b) = channels((-7.0f64).exp(), 7.0);
        assert!((a - -1.0).abs() < 1e-12);
        assert_eq!(b, 1.0);
    }

    #[test]
    fn branches_agree_at_threshold() {
        // Continuity: both branches give (-1, sign(g)) at |g| = e^-p.
        let p = 7.0;
        let g = (-p as f64).exp();
        for sign in [1.0, -1.0] {
            let (a, b) = channels(sign * g, p);
            assert!((a - -1.0).abs() < 1e-12);
            assert!((b - sign).abs() < 1e-12);
        }
    }

    #[test]
    fn output_shape_appends_two() {
        let g = Tensor::zeros(&[3, 4]);
        let out = preprocess_gradient(&g, GradPreprocConfig::default()).unwrap();
        assert_eq!(out.shape(), &[3, 4, 2]);
    }

    #[test]
    fn channels_are_bounded() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let cfg = GradPreprocConfig::default();
        let mut max_abs: f64 = 0.0;
        let data: Vec<f64> = (0..1000)
            .map(|_| {
                let v: f64 = rng.random_range(-20.0..20.0f64);
                let v = v.signum() * (10.0f64).powf(rng.random_range(-12.0..2.0));
                max_abs = max_abs.max(v.abs());
                v
            })
            .collect();
        let out = preprocess_gradient(&Tensor::from_vec(data), cfg).unwrap();
        let hi = (max_abs.ln() / cfg.p).max(0.0);
        for pair in out.data().chunks(2) {
            assert!(pair[0] >= -1.0 - 1e-12 && pair[0] <= hi + 1e-12);
            assert!(pair[1].abs() <= 1.0 + 1e-12);
        }
    }
}
