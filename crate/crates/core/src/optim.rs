//! Adam with bias correction, the only update rule used in the pipeline.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Element, ParamTable, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-8
}

impl AdamConfig {
    /// Adversarial training of both BEGAN networks.
    pub const BEGAN: AdamConfig = AdamConfig {
        alpha: 0.0001,
        beta1: 0.5,
        beta2: 0.999,
        epsilon: 1e-8,
    };

    /// Latent code recovery.
    pub const INVERSION: AdamConfig = AdamConfig {
        alpha: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };

    /// Landmark generator training.
    pub const LGEN: AdamConfig = AdamConfig {
        alpha: 0.0003,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid Adam hyperparameters {self:?}"
            )))
        }
    }
}

/// First/second moment tables plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: ParamTable<T>,
    pub v: ParamTable<T>,
    pub t: u64,
}

pub fn adam_init<T: Element>(param_shapes: &[(String, Vec<usize>)]) -> AdamState<T> {
    let zeros: ParamTable<T> = param_shapes
        .iter()
        .map(|(name, shape)| (name.clone(), Tensor::zeros(shape)))
        .collect();
    AdamState {
        m: zeros.clone(),
        v: zeros,
        t: 0,
    }
}

impl<T: Element> AdamState<T> {
    pub fn for_params(params: &ParamTable<T>) -> Self {
        adam_init(&params.shapes())
    }

    /// Applies one update to `params` in place.
    pub fn step(
        &mut self,
        params: &mut ParamTable<T>,
        grads: &ParamTable<T>,
        cfg: &AdamConfig,
    ) -> Result<()> {
        let shapes = params.shapes();
        if grads.shapes() != shapes || self.m.shapes() != shapes || self.v.shapes() != shapes {
            return Err(Error::Shape(
                "parameter, gradient and moment tables must have identical names and shapes".into(),
            ));
        }
        for (name, g) in grads.iter() {
            if !g.all_finite() {
                return Err(Error::NumericInput(format!("gradient of {name}")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let one = T::one();
        let bc1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));
        let alpha = T::from_f64_lossy(cfg.alpha);
        let eps = T::from_f64_lossy(cfg.epsilon);
        for (((_, p), (_, m)), ((_, v), (_, g))) in params
            .iter_mut()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut().zip(grads.iter()))
        {
            let p = p.data_mut();
            let m = m.data_mut();
            let v = v.data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= alpha * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::step`]: returns new parameters and state.
pub fn adam_step<T: Element>(
    params: &ParamTable<T>,
    grads: &ParamTable<T>,
    state: &AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(ParamTable<T>, AdamState<T>)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads, cfg)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_table(v: f64) -> ParamTable<f64> {
        [("w".to_string(), Tensor::scalar(v))].into_iter().collect()
    }

    #[test]
    fn presets_are_exact() {
        assert_eq!(
            (
                AdamConfig::BEGAN.alpha,
                AdamConfig::BEGAN.beta1,
                AdamConfig::BEGAN.beta2
            ),
            (0.0001, 0.5, 0.999)
        );
        assert_eq!(
            (
                AdamConfig::INVERSION.alpha,
                AdamConfig::INVERSION.beta1,
                AdamConfig::INVERSION.beta2
            ),
            (0.1, 0.9, 0.999)
        );
        assert_eq!(
            (
                AdamConfig::LGEN.alpha,
                AdamConfig::LGEN.beta1,
                AdamConfig::LGEN.beta2
            ),
            (0.0003, 0.9, 0.999)
        );
    }

    #[test]
    fn init_mirrors_shapes() {
        let s = adam_init::<f64>(&[("a".into(), vec![3]), ("b".into(), vec![2, 2])]);
        assert_eq!(s.t, 0);
        assert_eq!(s.m.get("a").unwrap().shape(), &[3]);
        assert_eq!(s.v.get("b").unwrap().shape(), &[2, 2]);
        assert!(s.m.get("b").unwrap().data().iter().all(|&x| x == 0.0));
        let empty = adam_init::<f32>(&[]);
        assert!(empty.m.is_empty() && empty.v.is_empty());
        let scalar = adam_init::<f64>(&[("s".into(), vec![1])]);
        assert_eq!(scalar.m.get("s").unwrap().data(), &[0.0]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let p = scalar_table(1.5);
        let s = AdamState::for_params(&p);
        let (p2, s2) = adam_step(&p, &scalar_table(0.0), &s, &AdamConfig::INVERSION).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s2.t, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::INVERSION;
        let p = scalar_table(0.0);
        let (p2, _) = adam_step(&p, &scalar_table(1.0), &AdamState::for_params(&p), &cfg).unwrap();
        let delta = p2.get("w").unwrap().data()[0];
        assert!((delta + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_alpha() {
        let cfg = AdamConfig::LGEN;
        let mut p = scalar_table(0.0);
        let mut s = AdamState::for_params(&p);
        let g = scalar_table(0.37);
        let mut last = 0.0;
        for _ in 0..10_000 {
            let before = p.get("w").unwrap().data()[0];
            s.step(&mut p, &g, &cfg).unwrap();
            last = before - p.get("w").unwrap().data()[0];
        }
        assert!((last - cfg.alpha).abs() / cfg.alpha < 0.01);
        assert_eq!(s.t, 10_000);
    }

    #[test]
    fn rejects_mismatch_and_nan() {
        let p = scalar_table(0.0);
        let s = AdamState::for_params(&p);
        let bad: ParamTable<f64> = [("w".to_string(), Tensor::zeros(&[2]))]
            .into_iter()
            .collect();
        assert!(matches!(
            adam_step(&p, &bad, &s, &AdamConfig::BEGAN),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            adam_step(&p, &scalar_table(f64::NAN), &s, &AdamConfig::BEGAN),
            Err(Error::NumericInput(_))
        ));
    }

    proptest! {
        #[test]
        fn first_step_opposes_gradient(gs in proptest::collection::vec(-10.0f64..10.0, 1..8), scale in 0.01f64..100.0) {
            let n = gs.len();
            let p: ParamTable<f64> = [("w".to_string(), Tensor::zeros(&[n]))].into_iter().collect();
            let g: ParamTable<f64> = [("w".to_string(), Tensor::vector(gs.clone()))].into_iter().collect();
            let gscaled: ParamTable<f64> =
                [("w".to_string(), Tensor::vector(gs.iter().map(|x| x * scale).collect()))].into_iter().collect();
            let s = AdamState::for_params(&p);
            let (a, s1) = adam_step(&p, &g, &s, &AdamConfig::BEGAN).unwrap();
            let (b, _) = adam_step(&p, &gscaled, &s, &AdamConfig::BEGAN).unwrap();
            for ((&gi, &da), &db) in gs.iter().zip(a.get("w").unwrap().data()).zip(b.get("w").unwrap().data()) {
                if gi != 0.0 {
                    prop_assert!(da.signum() == -gi.signum());
                }
                if gi.abs() > 1e-3 {
                    prop_assert!(da.signum() == db.signum());
                    prop_assert!(((da - db) / da).abs() < 0.01);
                }
            }
            prop_assert!(s1.v.get("w").unwrap().data().iter().all(|&v| v >= 0.0));
            let (a2, _) = adam_step(&p, &g, &s, &AdamConfig::BEGAN).unwrap();
            prop_assert_eq!(a, a2);
        }
    }
}
