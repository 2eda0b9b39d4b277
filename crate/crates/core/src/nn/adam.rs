use ndarray::Zip;

use super::params::ModelParams;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments and step counter, shaped like the parameters they update.
#[derive(Debug, Clone)]
pub struct Adam {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            lr,
        }
    }

    /// One bias-corrected update. Fails without touching anything if a
    /// gradient is non-finite, naming the offending layer.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient of {name}"),
            });
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.lr;
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        let layers = params
            .layers_mut()
            .zip(grads.layers())
            .zip(self.m.layers_mut().zip(self.v.layers_mut()));
        for ((p, g), (m, v)) in layers {
            Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
        Ok(())
    }
}

/// Learning rate for a zero-based epoch: halved every `period` epochs.
pub fn scheduled_lr(lr0: f64, epoch: usize, period: usize) -> f64 {
    let halvings = epoch / period.max(1);
    lr0 * 0.5f64.powi(halvings as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::BlockSubset;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = ModelParams::init(BlockSubset::from_blocks(&[1]).unwrap(), 4);
        let before = p.clone();
        let mut adam = Adam::new(&p, 1e-3);
        for _ in 0..3 {
            adam.step(&mut p, &before.zeros_like()).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn matches_scalar_reference_for_constant_gradient() {
        let mut p = ModelParams::zeros(BlockSubset::from_blocks(&[1]).unwrap());
        let mut g = p.zeros_like();
        *g.flat_value_mut(0).unwrap() = 0.3;
        let mut adam = Adam::new(&p, 0.01);

        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=25 {
            adam.step(&mut p, &g).unwrap();
            m = 0.9 * m + 0.1 * 0.3;
            v = 0.999 * v + 0.001 * 0.09;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            assert!((*p.flat_value_mut(0).unwrap() - x).abs() < 1e-15);
        }
        assert_eq!(*p.flat_value_mut(1).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let mut p = ModelParams::zeros(BlockSubset::ALL);
        let mut g = p.zeros_like();
        g.head_w[2].bias[0] = f64::NAN;
        let mut adam = Adam::new(&p, 0.1);
        let err = adam.step(&mut p, &g).unwrap_err();
        assert!(err.to_string().contains("head_w.3"), "{err}");
        assert!(err.is_numerical());
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn schedule_halves_every_two_epochs() {
        assert_eq!(scheduled_lr(1e-5, 0, 2), 1e-5);
        assert_eq!(scheduled_lr(1e-5, 1, 2), 1e-5);
        assert_eq!(scheduled_lr(1e-5, 2, 2), 5e-6);
        assert_eq!(scheduled_lr(1e-5, 3, 2), 5e-6);
        assert_eq!(scheduled_lr(1e-5, 4, 2), 2.5e-6);
    }
}
