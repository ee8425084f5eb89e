//! Generator inversion: recover a latent code for a target image by
//! minimizing the pixel error of `G(z)` with Adam, plus image mirroring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::began::LatentVector;
use crate::diffcore::{BackwardMode, Element, NetworkSpec, ParamTable, Tensor};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};

/// Pixel error reduction used by [`inversion_err`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrNorm {
    /// Mean absolute deviation.
    #[default]
    L1Mean,
    /// Mean squared deviation.
    L2Mean,
}

/// Starting point of the latent search.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionInit {
    /// Uniform in [−1, 1]^n_z from the run seed.
    #[default]
    UniformRandom,
    Provided(LatentVector),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub max_steps: usize,
    pub adam: AdamConfig,
    pub init: InversionInit,
    /// Stop as soon as an iterate's error drops below this.
    pub stop_tol: f64,
    /// Clamp z into [−1, 1] after every update.
    pub clamp_latent: bool,
    pub norm: ErrNorm,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            max_steps: 500,
            adam: AdamConfig::INVERSION,
            init: InversionInit::UniformRandom,
            stop_tol: 1e-4,
            clamp_latent: true,
            norm: ErrNorm::L1Mean,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Argument(
                "inversion max_steps must be at least 1".into(),
            ));
        }
        if self.stop_tol.is_nan() || self.stop_tol < 0.0 {
            return Err(Error::Config(format!(
                "stop_tol must be >= 0, got {}",
                self.stop_tol
            )));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    /// Lowest-error iterate.
    pub z_r: LatentVector,
    /// Best error seen up to and including each step; non-increasing, so
    /// the last entry is `err(z_r)`.
    pub err_trace: Vec<f64>,
    /// Error of the iterate evaluated at each step.
    pub raw_trace: Vec<f64>,
    pub steps_run: usize,
}

impl InversionResult {
    pub fn initial_err(&self) -> f64 {
        self.raw_trace[0]
    }

    pub fn final_err(&self) -> f64 {
        *self.err_trace.last().unwrap()
    }
}

/// One exported inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentExport {
    pub image_ref: String,
    pub z: Vec<f64>,
    pub err_final: f64,
    pub steps_run: usize,
}

impl LatentExport {
    pub fn new(image_ref: impl Into<String>, result: &InversionResult) -> Self {
        LatentExport {
            image_ref: image_ref.into(),
            z: result.z_r.values().to_vec(),
            err_final: result.final_err(),
            steps_run: result.steps_run,
        }
    }
}

fn err_and_grad<T: Element>(
    out: &[T],
    target: &[T],
    norm: ErrNorm,
    want_grad: bool,
) -> (f64, Vec<T>) {
    let n = out.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(if want_grad { out.len() } else { 0 });
    for (&o, &t) in out.iter().zip(target) {
        let d = o.as_f64() - t.as_f64();
        let (e, g) = match norm {
            ErrNorm::L1Mean => (
                d.abs(),
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                },
            ),
            ErrNorm::L2Mean => (d * d, 2.0 * d),
        };
        total += e;
        if want_grad {
            grad.push(T::from_f64_lossy(g / n));
        }
    }
    (total / n, grad)
}

fn check_target<T: Element>(x_s: &Tensor<T>, gen: &NetworkSpec<T>) -> Result<()> {
    if x_s.shape() != gen.output_shape() {
        return Err(Error::Shape(format!(
            "target shape {:?} does not match generator output {:?}",
            x_s.shape(),
            gen.output_shape()
        )));
    }
    Ok(())
}

/// Reconstruction error `|x_s − G(z)|` with the chosen reduction.
pub fn inversion_err_with<T: Element>(
    x_s: &Tensor<T>,
    z: &LatentVector,
    gen: &NetworkSpec<T>,
    norm: ErrNorm,
) -> Result<f64> {
    check_target(x_s, gen)?;
    let out = gen.predict(&z.to_tensor())?;
    Ok(err_and_grad(out.data(), x_s.data(), norm, false).0)
}

/// Mean absolute deviation between `x_s` and `G(z)`.
pub fn inversion_err<T: Element>(
    x_s: &Tensor<T>,
    z: &LatentVector,
    gen: &NetworkSpec<T>,
) -> Result<f64> {
    inversion_err_with(x_s, z, gen, ErrNorm::L1Mean)
}

/// Finds `z_r` minimizing the reconstruction error of `x_s` under `gen`.
///
/// Each step evaluates the current iterate, records its error, then takes
/// one Adam step on z (clamped into [−1, 1] when configured). The loop ends
/// after `max_steps` evaluations or once an error falls below `stop_tol`.
pub fn invert<T: Element>(
    x_s: &Tensor<T>,
    gen: &NetworkSpec<T>,
    cfg: &InversionConfig,
    seed: u64,
) -> Result<InversionResult> {
    cfg.validate()?;
    check_target(x_s, gen)?;
    x_s.ensure_finite("inversion target")?;
    let n_z = match gen.input_shape() {
        [n] => *n,
        other => {
            return Err(Error::Shape(format!(
                "generator input must be a vector, got {other:?}"
            )))
        }
    };
    let z0: Vec<T> = match &cfg.init {
        InversionInit::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n_z)
                .map(|_| T::from_f64_lossy(rng.gen_range(-1.0..=1.0)))
                .collect()
        }
        InversionInit::Provided(z) => {
            if z.dim() != n_z {
                return Err(Error::Shape(format!(
                    "initial latent has {} dims, generator expects {n_z}",
                    z.dim()
                )));
            }
            z.to_tensor::<T>().into_data()
        }
    };

    let mut params: ParamTable<T> = [("z".to_string(), Tensor::vector(z0))]
        .into_iter()
        .collect();
    let mut adam = AdamState::for_params(&params);
    let mut best: Option<(f64, Vec<T>)> = None;
    let mut err_trace = Vec::new();
    let mut raw_trace = Vec::new();

    for step in 0..cfg.max_steps {
        let z = params.get("z").unwrap();
        let trace = gen.forward(z)?;
        let (err, dout) = err_and_grad(trace.output_data(), x_s.data(), cfg.norm, true);
        if !err.is_finite() {
            return Err(Error::Numeric {
                step,
                what: "inversion error".into(),
            });
        }
        if best.as_ref().is_none_or(|(b, _)| err < *b) {
            best = Some((err, z.data().to_vec()));
        }
        let best_err = best.as_ref().unwrap().0;
        raw_trace.push(err);
        err_trace.push(best_err);
        if err < cfg.stop_tol || step + 1 == cfg.max_steps {
            break;
        }

        let out_grad = Tensor::new(gen.output_shape().to_vec(), dout)?;
        let grads = gen.backward_with(&trace, &out_grad, BackwardMode::INPUT)?;
        let gz = grads.input.expect("input gradient requested");
        if !gz.all_finite() {
            return Err(Error::Numeric {
                step,
                what: "latent gradient".into(),
            });
        }
        let grad_table: ParamTable<T> = [("z".to_string(), gz)].into_iter().collect();
        adam.step(&mut params, &grad_table, &cfg.adam)?;
        let z = params.get_mut("z").unwrap();
        if cfg.clamp_latent {
            for v in z.data_mut() {
                *v = v.max(-T::one()).min(T::one());
            }
        }
        if !z.all_finite() {
            return Err(Error::Numeric {
                step,
                what: "latent iterate".into(),
            });
        }
    }

    let (_, z_best) = best.expect("at least one step runs");
    let values: Vec<f64> = z_best.iter().map(|v| v.as_f64()).collect();
    let z_r = if cfg.clamp_latent {
        LatentVector::new(values)?
    } else {
        LatentVector::clamped(values)?
    };
    Ok(InversionResult {
        z_r,
        steps_run: err_trace.len(),
        err_trace,
        raw_trace,
    })
}

/// Horizontal flip: reverses the last (width) axis.
pub fn mirror<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let w = *x.shape().last().unwrap();
    let data: Vec<T> = x
        .data()
        .chunks(w)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}
