use super::network::{Grads, Params};
use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub final_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            final_rate: 5e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.final_rate > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0;
        if !positive || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("invalid SGD config {self:?}")));
        }
        Ok(())
    }

    /// Linear decay from `learning_rate` at epoch 0 to `final_rate` at the last epoch.
    pub fn rate_at(&self, epoch: usize, total_epochs: usize) -> f64 {
        if total_epochs <= 1 {
            return self.learning_rate;
        }
        let t = (epoch as f64 / (total_epochs - 1) as f64).min(1.0);
        self.learning_rate + (self.final_rate - self.learning_rate) * t
    }
}

/// One momentum step:
/// `v <- momentum * v - lr * (grad + weight_decay * param)`, `param <- param + v`.
///
/// Non-finite gradients abort the step before anything is modified.
pub fn sgd_step<T: Real>(
    params: &mut Params<T>,
    grads: &Grads<T>,
    velocity: &mut Params<T>,
    learning_rate: f64,
    cfg: &SgdConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient, step skipped".into()));
    }
    let lr = T::of(learning_rate);
    let momentum = T::of(cfg.momentum);
    let decay = T::of(cfg.weight_decay);
    for ((p, g), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(velocity.tensors_mut())
    {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Shape("parameter/gradient/velocity shapes differ".into()));
        }
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv - lr * (gv + decay * *pv);
            *pv = *pv + *vv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{NetSpec, Tensor};

    fn scalar_params(v: f64) -> Params<f64> {
        // a 1x1x1 conv has one weight and one bias; only the weight is used here
        let spec = NetSpec {
            in_channels: 1,
            layers: vec![crate::net::Layer::head(1)],
        };
        let mut p = Params::zeros(&spec);
        p.convs[0].weight = Tensor::from_vec(&[1, 1, 1, 1], vec![v]).unwrap();
        p
    }

    fn weight(p: &Params<f64>) -> f64 {
        p.convs[0].weight.data()[0]
    }

    fn cfg(momentum: f64, weight_decay: f64) -> SgdConfig {
        SgdConfig {
            momentum,
            weight_decay,
            ..SgdConfig::default()
        }
    }

    #[test]
    fn vanilla_step() {
        let mut w = scalar_params(1.0);
        let mut v = scalar_params(0.0);
        sgd_step(&mut w, &scalar_params(1.0), &mut v, 0.1, &cfg(0.0, 0.0)).unwrap();
        assert!((weight(&w) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        let mut w = scalar_params(1.0);
        let mut v = scalar_params(0.0);
        let g = scalar_params(1.0);
        sgd_step(&mut w, &g, &mut v, 0.1, &cfg(0.9, 0.0)).unwrap();
        assert!((weight(&v) + 0.1).abs() < 1e-15);
        assert!((weight(&w) - 0.9).abs() < 1e-15);
        sgd_step(&mut w, &g, &mut v, 0.1, &cfg(0.9, 0.0)).unwrap();
        assert!((weight(&v) + 0.19).abs() < 1e-15);
        assert!((weight(&w) - 0.71).abs() < 1e-15);
    }

    #[test]
    fn decay_only_step() {
        let mut w = scalar_params(1.0);
        let mut v = scalar_params(0.0);
        sgd_step(&mut w, &scalar_params(0.0), &mut v, 0.1, &cfg(0.0, 5e-4)).unwrap();
        assert!((weight(&w) - 0.99995).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut w = scalar_params(1.0);
        let mut v = scalar_params(0.0);
        let err = sgd_step(&mut w, &scalar_params(f64::NAN), &mut v, 0.1, &cfg(0.9, 0.0));
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(weight(&w), 1.0);
    }

    #[test]
    fn linear_rate_schedule() {
        let c = SgdConfig::default();
        assert_eq!(c.rate_at(0, 11), 1e-3);
        assert!((c.rate_at(10, 11) - 5e-4).abs() < 1e-18);
        assert!((c.rate_at(5, 11) - 7.5e-4).abs() < 1e-15);
    }
}
