//! Central finite-difference verification of [`NetworkSpec::backward`].

use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{NetworkSpec, ParamTable};
use super::tensor::Tensor;
use crate::error::Result;

/// Central difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale. On a
/// 32×32×3 output the weighted sum carries ~1e-14 rounding noise, which
/// puts the difference quotient's noise near 1e-9.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Name of the tensor (or `"input"`) holding the worst coordinate.
    pub worst: Option<String>,
    pub coordinates_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Max relative error over every parameter and input coordinate.
pub fn grad_check(net: &NetworkSpec<f64>, x: &Tensor<f64>, seed: u64) -> Result<f64> {
    Ok(grad_check_report(net, x, seed, None)?.max_relative_error)
}

/// Like [`grad_check`], but probes at most `per_tensor` seeded random
/// coordinates of each parameter tensor and of the input.
pub fn grad_check_report(
    net: &NetworkSpec<f64>,
    x: &Tensor<f64>,
    seed: u64,
    per_tensor: Option<usize>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = net.forward(x)?;
    let out = trace.output();
    let weights: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let weight_tensor = Tensor::new(out.shape().to_vec(), weights.clone())?;
    let grads = net.backward(&trace, &weight_tensor)?;

    let scalar = |net: &NetworkSpec<f64>, x: &Tensor<f64>| -> Result<f64> {
        let y = net.predict(x)?;
        Ok(y.data().iter().zip(&weights).map(|(a, b)| a * b).sum())
    };

    let mut report = GradCheckReport::default();
    let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        match per_tensor {
            Some(k) if k < n => {
                let mut v = sample(rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        }
    };

    let mut probe = net.clone();
    let names: Vec<String> = net.params().keys().cloned().collect();
    for name in &names {
        let n = net.params().get(name).unwrap().len();
        let analytic = grads.params.get(name).unwrap();
        for idx in pick(n, &mut rng) {
            let orig = net.params().get(name).unwrap().data()[idx];
            set_coord(probe.params_mut(), name, idx, orig + FD_STEP);
            let plus = scalar(&probe, x)?;
            set_coord(probe.params_mut(), name, idx, orig - FD_STEP);
            let minus = scalar(&probe, x)?;
            set_coord(probe.params_mut(), name, idx, orig);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            record(
                &mut report,
                name,
                relative_error(analytic.data()[idx], numeric),
            );
        }
    }

    let input_grad = grads.input.expect("backward computes input gradient");
    let mut xp = x.clone();
    for idx in pick(x.len(), &mut rng) {
        let orig = x.data()[idx];
        xp.data_mut()[idx] = orig + FD_STEP;
        let plus = scalar(net, &xp)?;
        xp.data_mut()[idx] = orig - FD_STEP;
        let minus = scalar(net, &xp)?;
        xp.data_mut()[idx] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        record(
            &mut report,
            "input",
            relative_error(input_grad.data()[idx], numeric),
        );
    }
    Ok(report)
}

fn set_coord(params: &mut ParamTable<f64>, name: &str, idx: usize, value: f64) {
    params.get_mut(name).unwrap().data_mut()[idx] = value;
}

fn record(report: &mut GradCheckReport, name: &str, err: f64) {
    report.coordinates_checked += 1;
    if err > report.max_relative_error || report.worst.is_none() {
        report.max_relative_error = err;
        report.worst = Some(name.to_string());
    }
}
