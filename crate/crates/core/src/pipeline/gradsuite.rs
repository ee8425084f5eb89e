//! Finite-difference checks over every layer kind and both full networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::began::{build_discriminator, BeganConfig};
use crate::diffcore::{grad_check_report, Init, LayerSpec, NetworkSpec, Tensor};
use crate::error::Result;
use crate::lgen::build_lgen;

/// Largest accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub max_relative_error: f64,
    pub worst: Option<String>,
    pub coordinates: usize,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= GRAD_TOLERANCE
    }
}

/// One small network per layer kind: (name, input shape, layers).
pub fn layer_cases() -> Vec<(&'static str, Vec<usize>, Vec<LayerSpec>)> {
    vec![
        ("conv3x3", vec![2, 6, 6], vec![LayerSpec::conv3x3(2, 3)]),
        ("conv1x1", vec![3, 4, 4], vec![LayerSpec::conv1x1(3, 2)]),
        ("fully_connected", vec![7], vec![LayerSpec::dense(7, 5)]),
        ("elu", vec![2, 4, 4], vec![LayerSpec::Elu]),
        ("relu", vec![2, 4, 4], vec![LayerSpec::Relu]),
        ("sigmoid", vec![2, 4, 4], vec![LayerSpec::Sigmoid]),
        ("avg_pool2x2", vec![2, 4, 6], vec![LayerSpec::AvgPool2x2]),
        (
            "upsample_nn2x",
            vec![2, 3, 3],
            vec![LayerSpec::UpsampleNn2x],
        ),
        (
            "reshape",
            vec![2, 3, 3],
            vec![
                LayerSpec::Reshape { shape: vec![18] },
                LayerSpec::dense(18, 4),
            ],
        ),
    ]
}

fn uniform(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .expect("valid shape")
}

/// Gives every bias a nonzero value so the checks cover them too.
fn randomize_biases(net: &mut NetworkSpec<f64>, rng: &mut ChaCha8Rng) {
    for (name, t) in net.params_mut().iter_mut() {
        if name.ends_with("bias") {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
}

fn check(
    name: &str,
    mut net: NetworkSpec<f64>,
    rng: &mut ChaCha8Rng,
    seed: u64,
    per_tensor: Option<usize>,
) -> Result<SuiteEntry> {
    randomize_biases(&mut net, rng);
    let x = uniform(net.input_shape(), 1.0, rng);
    let r = grad_check_report(&net, &x, seed, per_tensor)?;
    Ok(SuiteEntry {
        name: name.to_string(),
        max_relative_error: r.max_relative_error,
        worst: r.worst,
        coordinates: r.coordinates_checked,
    })
}

/// Runs every case for one seed. Layer cases are checked exhaustively; the
/// desk discriminator and the 64→…→98 landmark network probe
/// `full_per_tensor` coordinates of each tensor.
pub fn gradient_suite(seed: u64, full_per_tensor: usize) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, input, layers) in layer_cases() {
        let net = NetworkSpec::build(name, input, layers, Init::GlorotUniform, &mut rng)?;
        out.push(check(name, net, &mut rng, seed, None)?);
    }
    let disc = build_discriminator::<f64>(&BeganConfig::desk(), Init::GlorotUniform, &mut rng)?;
    out.push(check(
        "began_discriminator",
        disc,
        &mut rng,
        seed,
        Some(full_per_tensor),
    )?);
    let lgen = build_lgen::<f64>(64, 49, Init::GlorotUniform, rng.gen())?;
    out.push(check(
        "lgen_network",
        lgen.net,
        &mut rng,
        seed,
        Some(full_per_tensor),
    )?);
    Ok(out)
}
