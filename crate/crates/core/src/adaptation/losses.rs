use serde::{Deserialize, Serialize};

use super::networks::Discriminator;
use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::nn::{Float, Graph, Tensor};

/// Trade-off weights of the adaptation objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the target-to-source adversarial term.
    pub alpha: f64,
    /// Weight of the cycle-consistency term.
    pub beta: f64,
    /// Weight of the semantic (mask-space) adversarial term.
    pub lambda_sem: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.5,
            beta: 10.0,
            lambda_sem: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda_sem", self.lambda_sem)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Generator-side loss terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub gan_st: f64,
    pub gan_ts: f64,
    pub cyc: f64,
    pub sem: f64,
}

pub fn total_objective(c: &LossComponents, w: &LossWeights) -> f64 {
    c.gan_st + w.alpha * c.gan_ts + w.beta * c.cyc + w.lambda_sem * c.sem
}

fn mean_sq<T: Float>(v: &[T], target: f64) -> f64 {
    v.iter().map(|&s| (s.as_f64() - target).powi(2)).sum::<f64>() / v.len() as f64
}

/// Least-squares adversarial losses `(d_loss, g_loss)` from raw score maps.
pub fn lsgan_losses<T: Float>(scores_real: &[T], scores_fake: &[T]) -> (f64, f64) {
    let d = 0.5 * (mean_sq(scores_real, 1.0) + mean_sq(scores_fake, 0.0));
    (d, mean_sq(scores_fake, 1.0))
}

/// Mean absolute error of the target cycle plus that of the source cycle.
pub fn cycle_loss<T: Float>(x_t: &Tensor<T>, x_t_cyc: &Tensor<T>, x_s: &Tensor<T>, x_s_cyc: &Tensor<T>) -> Result<f64> {
    let term = |a: &Tensor<T>, b: &Tensor<T>| -> Result<f64> {
        if a.shape() != b.shape() {
            return Err(Error::shape(a.shape(), b.shape()));
        }
        let s: f64 = a.data().iter().zip(b.data()).map(|(&p, &q)| (p - q).abs().as_f64()).sum();
        Ok(s / a.len() as f64)
    };
    Ok(term(x_t, x_t_cyc)? + term(x_s, x_s_cyc)?)
}

/// Mask discriminator losses `(d_m_loss, g_sem_loss)` for a real (source
/// label) map and a fake (predicted) map.
pub fn semantic_losses<T: Float>(
    d_m: &Discriminator<T>,
    real_mask: &Tensor<T>,
    fake_mask: &Tensor<T>,
) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let p = d_m.params.bind(&mut g, false);
    let r = g.constant(real_mask.clone());
    let f = g.constant(fake_mask.clone());
    let sr = d_m.forward(&mut g, &p, r)?;
    let sf = d_m.forward(&mut g, &p, f)?;
    Ok(lsgan_losses(g.value(sr).data(), g.value(sf).data()))
}

/// One-hot `[C, H, W]` encoding with `true_value` on the labeled class and
/// the remainder spread evenly over the other classes.
pub fn smoothed_one_hot<T: Float>(labels: &LabelMap, num_classes: usize, true_value: f64) -> Tensor<T> {
    let n = labels.height * labels.width;
    let off = T::of((1.0 - true_value) / (num_classes - 1) as f64);
    let on = T::of(true_value);
    let mut data = vec![off; num_classes * n];
    for (i, &l) in labels.labels.iter().enumerate() {
        data[l as usize * n + i] = on;
    }
    Tensor::from_vec(&[num_classes, labels.height, labels.width], data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::DiscriminatorConfig;

    #[test]
    fn lsgan_reference_values() {
        assert_eq!(lsgan_losses(&[1.0f64; 4], &[0.0; 4]), (0.0, 1.0));
        assert_eq!(lsgan_losses(&[0.5f64; 4], &[0.5; 4]), (0.25, 0.25));
        assert_eq!(lsgan_losses(&[1.0f64; 4], &[1.0; 4]), (0.5, 0.0));
    }

    #[test]
    fn cycle_reference_values() {
        let x = Tensor::<f64>::full(&[1, 3, 3], 0.2);
        let off = |d: f64| x.map(|v| v + d);
        assert_eq!(cycle_loss(&x, &x, &x, &x).unwrap(), 0.0);
        assert!((cycle_loss(&x, &off(3.0), &x, &x).unwrap() - 3.0).abs() < 1e-12);
        assert!((cycle_loss(&x, &off(-2.0), &x, &off(2.0)).unwrap() - 4.0).abs() < 1e-12);
        assert!(cycle_loss(&x, &Tensor::zeros(&[1, 2, 2]), &x, &x).is_err());
    }

    #[test]
    fn objective_reference_values() {
        let c = LossComponents { gan_st: 1.0, gan_ts: 0.8, cyc: 0.2, sem: 0.4 };
        let w = LossWeights::default();
        assert!((total_objective(&c, &w) - 3.6).abs() < 1e-12);
        let cy = LossWeights { lambda_sem: 0.0, ..w };
        assert!((total_objective(&c, &cy) - 3.4).abs() < 1e-12);
        assert_eq!(total_objective(&LossComponents::default(), &w), 0.0);
        assert!(LossWeights { beta: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn smoothing_keeps_the_simplex() {
        let l = LabelMap::new(1, 3, vec![0, 1, 2]).unwrap();
        let t = smoothed_one_hot::<f64>(&l, 3, 0.9);
        for i in 0..3 {
            let s: f64 = (0..3).map(|c| t.data()[c * 3 + i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert_eq!(t.data()[l.labels[i] as usize * 3 + i], 0.9);
        }
    }

    #[test]
    fn semantic_losses_check_channels() {
        let d = Discriminator::<f64>::build(&DiscriminatorConfig { layers: 3, base_channels: 2, patch_mode: true }, 3, 16, 1).unwrap();
        let m = Tensor::full(&[3, 16, 16], 1.0 / 3.0);
        let (dl, gl) = semantic_losses(&d, &m, &m).unwrap();
        assert!(dl >= 0.0 && gl >= 0.0);
        assert!(semantic_losses(&d, &Tensor::zeros(&[2, 16, 16]), &m).is_err());
    }
}
