//! Landmark generator: a small fully connected network from the latent
//! space to normalized landmark coordinates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::began::LatentVector;
use crate::diffcore::{BackwardMode, DType, Element, Init, LayerSpec, NetworkSpec, Tensor};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};

/// Width of every hidden layer.
pub const HIDDEN_UNITS: usize = 128;
/// Number of hidden layers.
pub const HIDDEN_LAYERS: usize = 3;

/// Ordered 2-D points normalized to [0, 1] by image width and height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkSet {
    points: Vec<(f64, f64)>,
}

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument(
                "landmark set must contain at least one point".into(),
            ));
        }
        if let Some(p) = points
            .iter()
            .find(|(x, y)| !(0.0..=1.0).contains(x) || !(0.0..=1.0).contains(y))
        {
            return Err(Error::Argument(format!("landmark {p:?} outside [0, 1]")));
        }
        Ok(LandmarkSet { points })
    }

    /// From interleaved `x1, y1, x2, y2, …`.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "odd landmark vector length {}",
                values.len()
            )));
        }
        Self::new(values.chunks(2).map(|c| (c[0], c[1])).collect())
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|&(x, y)| [x, y]).collect()
    }

    /// Mean Euclidean distance between corresponding points.
    pub fn mean_distance(&self, other: &LandmarkSet) -> Result<f64> {
        if self.count() != other.count() {
            return Err(Error::Shape(format!(
                "landmark counts differ: {} vs {}",
                self.count(),
                other.count()
            )));
        }
        let total: f64 = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a.0 - b.0).hypot(a.1 - b.1))
            .sum();
        Ok(total / self.count() as f64)
    }
}

/// One supervised example: a recovered latent and its landmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub image_ref: String,
    pub z: LatentVector,
    pub target: LandmarkSet,
}

/// The landmark network plus its interface sizes.
#[derive(Debug, Clone)]
pub struct LGenModel<T = f32> {
    pub net: NetworkSpec<T>,
}

impl<T: Element> PartialEq for LGenModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.net == other.net
    }
}

/// Layer stack `n_z → 128 → 128 → 128 → 2·count`, ReLU hidden units and a
/// sigmoid output.
pub fn lgen_layers(n_z: usize, landmark_count: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut width = n_z;
    for _ in 0..HIDDEN_LAYERS {
        layers.push(LayerSpec::dense(width, HIDDEN_UNITS));
        layers.push(LayerSpec::Relu);
        width = HIDDEN_UNITS;
    }
    layers.push(LayerSpec::dense(width, 2 * landmark_count));
    layers.push(LayerSpec::Sigmoid);
    layers
}

pub fn build_lgen<T: Element>(
    n_z: usize,
    landmark_count: usize,
    init: Init,
    seed: u64,
) -> Result<LGenModel<T>> {
    if n_z == 0 || landmark_count == 0 {
        return Err(Error::Config(
            "n_z and landmark_count must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = NetworkSpec::build(
        "lgen",
        vec![n_z],
        lgen_layers(n_z, landmark_count),
        init,
        &mut rng,
    )?;
    Ok(LGenModel { net })
}

impl<T: Element> LGenModel<T> {
    pub fn from_network(net: NetworkSpec<T>) -> Result<Self> {
        let expected_in = match net.input_shape() {
            [n] => *n,
            s => {
                return Err(Error::Shape(format!(
                    "landmark network input must be a vector, got {s:?}"
                )))
            }
        };
        let out = net.output_shape();
        if out.len() != 1
            || !out[0].is_multiple_of(2)
            || net.layers() != lgen_layers(expected_in, out[0] / 2).as_slice()
        {
            return Err(Error::Config(
                "network does not have the landmark generator layout".into(),
            ));
        }
        Ok(LGenModel { net })
    }

    pub fn n_z(&self) -> usize {
        self.net.input_shape()[0]
    }

    pub fn landmark_count(&self) -> usize {
        self.net.output_shape()[0] / 2
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.n_z()];
        w.extend(self.net.layers().iter().filter_map(|l| match *l {
            LayerSpec::FullyConnected { out_dim, .. } => Some(out_dim),
            _ => None,
        }));
        w
    }
}

/// Mean squared error over a `[B, 2·count]` batch:
/// `Σ_k Σ_i (o_i − t_i)² / (B · 2·count)`.
pub fn lgen_loss<T: Element>(outputs: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
    if outputs.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "outputs {:?} and targets {:?} differ",
            outputs.shape(),
            targets.shape()
        )));
    }
    let s: f64 = outputs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(o, t)| {
            let d = o.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    Ok(s / outputs.len() as f64)
}

pub fn lgen_forward<T: Element>(model: &LGenModel<T>, z: &LatentVector) -> Result<LandmarkSet> {
    if z.dim() != model.n_z() {
        return Err(Error::Shape(format!(
            "latent has {} dims, landmark network expects {}",
            z.dim(),
            model.n_z()
        )));
    }
    let out = model.net.predict(&z.to_tensor())?;
    LandmarkSet::from_flat(&out.to_f64_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LGenConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub precision: DType,
}

impl Default for LGenConfig {
    fn default() -> Self {
        LGenConfig {
            epochs: 1000,
            batch_size: 16,
            adam: AdamConfig::LGEN,
            seed: 0,
            precision: DType::F32,
        }
    }
}

impl LGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("lgen batch_size must be positive".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone)]
pub struct LGenTrainResult<T = f32> {
    pub model: LGenModel<T>,
    /// Mean minibatch loss of each epoch, measured before each update.
    pub loss_trace: Vec<f64>,
}

fn pair_tensors<T: Element>(pairs: &[TrainingPair], idx: &[usize]) -> (Tensor<T>, Tensor<T>) {
    let n_z = pairs[0].z.dim();
    let out = 2 * pairs[0].target.count();
    let mut z = Vec::with_capacity(idx.len() * n_z);
    let mut t = Vec::with_capacity(idx.len() * out);
    for &i in idx {
        z.extend(pairs[i].z.values().iter().map(|&v| T::from_f64_lossy(v)));
        t.extend(pairs[i].target.flat().into_iter().map(T::from_f64_lossy));
    }
    (
        Tensor::new(vec![idx.len(), n_z], z).expect("consistent pair sizes"),
        Tensor::new(vec![idx.len(), out], t).expect("consistent pair sizes"),
    )
}

fn check_pairs<T: Element>(model: &LGenModel<T>, pairs: &[TrainingPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Argument("no training pairs".into()));
    }
    for p in pairs {
        if p.z.dim() != model.n_z() || p.target.count() != model.landmark_count() {
            return Err(Error::Shape(format!(
                "pair {} has n_z {} and {} landmarks, model expects {} and {}",
                p.image_ref,
                p.z.dim(),
                p.target.count(),
                model.n_z(),
                model.landmark_count()
            )));
        }
    }
    Ok(())
}

/// Mean loss of `model` over all pairs.
pub fn lgen_eval<T: Element>(model: &LGenModel<T>, pairs: &[TrainingPair]) -> Result<f64> {
    check_pairs(model, pairs)?;
    let idx: Vec<usize> = (0..pairs.len()).collect();
    let (z, t) = pair_tensors::<T>(pairs, &idx);
    lgen_loss(&model.net.predict(&z)?, &t)
}

/// Trains a freshly Glorot-initialized model seeded from `cfg.seed`.
pub fn lgen_train<T: Element>(
    pairs: &[TrainingPair],
    cfg: &LGenConfig,
) -> Result<LGenTrainResult<T>> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Argument("no training pairs".into()))?;
    let model = build_lgen(
        first.z.dim(),
        first.target.count(),
        Init::GlorotUniform,
        cfg.seed,
    )?;
    lgen_train_from(model, pairs, cfg)
}

/// Minibatch Adam on the mean squared landmark error. Each epoch visits a
/// seeded permutation of all pairs; a short final batch is filled by
/// wrapping around to the start of the permutation.
pub fn lgen_train_from<T: Element>(
    mut model: LGenModel<T>,
    pairs: &[TrainingPair],
    cfg: &LGenConfig,
) -> Result<LGenTrainResult<T>> {
    cfg.validate()?;
    check_pairs(&model, pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = AdamState::for_params(model.net.params());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let b = cfg.batch_size;
    let n_batches = pairs.len().div_ceil(b);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for bi in 0..n_batches {
            let idx: Vec<usize> = (0..b).map(|j| order[(bi * b + j) % order.len()]).collect();
            let (z, t) = pair_tensors::<T>(pairs, &idx);
            let trace = model.net.forward(&z)?;
            let out = trace.output();
            let loss = lgen_loss(&out, &t)?;
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    step: epoch,
                    what: "landmark loss".into(),
                });
            }
            epoch_loss += loss;
            let scale = 2.0 / out.len() as f64;
            let g: Vec<T> = out
                .data()
                .iter()
                .zip(t.data())
                .map(|(&o, &ti)| T::from_f64_lossy(scale * (o.as_f64() - ti.as_f64())))
                .collect();
            let grads = model.net.backward_with(
                &trace,
                &Tensor::new(out.shape().to_vec(), g)?,
                BackwardMode::PARAMS,
            )?;
            adam.step(model.net.params_mut(), &grads.params, &cfg.adam)?;
        }
        loss_trace.push(epoch_loss / n_batches as f64);
    }
    Ok(LGenTrainResult { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check_report;
    use rand::Rng;

    fn pair(z: Vec<f64>, target: Vec<f64>) -> TrainingPair {
        TrainingPair {
            image_ref: String::new(),
            z: LatentVector::new(z).unwrap(),
            target: LandmarkSet::from_flat(&target).unwrap(),
        }
    }

    #[test]
    fn layer_widths() {
        let m = build_lgen::<f32>(64, 49, Init::GlorotUniform, 0).unwrap();
        assert_eq!(m.widths(), vec![64, 128, 128, 128, 98]);
        let acts: Vec<&str> = m
            .net
            .layers()
            .iter()
            .filter(|l| l.activation().is_some())
            .map(|l| l.kind_name())
            .collect();
        assert_eq!(acts, vec!["relu", "relu", "relu", "sigmoid"]);
        let desk = build_lgen::<f32>(16, 5, Init::GlorotUniform, 0).unwrap();
        assert_eq!(desk.widths(), vec![16, 128, 128, 128, 10]);
        assert!(m
            .net
            .params()
            .iter()
            .filter(|(k, _)| k.ends_with("bias"))
            .all(|(_, b)| b.data().iter().all(|&v| v == 0.0)));
        assert!(LGenModel::from_network(m.net.clone()).is_ok());
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = build_lgen::<f64>(4, 3, Init::Zeros, 0).unwrap();
        let lm = lgen_forward(&m, &LatentVector::new(vec![0.9, -0.3, 0.1, 1.0]).unwrap()).unwrap();
        assert_eq!(lm.points(), &[(0.5, 0.5); 3]);
        assert!(matches!(
            lgen_forward(&m, &LatentVector::new(vec![0.0; 3]).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn loss_examples() {
        let o = Tensor::<f64>::full(&[16, 98], 0.6);
        let t = Tensor::<f64>::full(&[16, 98], 0.5);
        assert!((lgen_loss(&o, &t).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(lgen_loss(&t, &t).unwrap(), 0.0);
        let o = Tensor::<f64>::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let t = Tensor::<f64>::zeros(&[1, 2]);
        assert_eq!(lgen_loss(&o, &t).unwrap(), 1.0);
        assert!(matches!(
            lgen_loss(&o, &Tensor::zeros(&[2, 1])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn landmark_range_enforced() {
        assert!(LandmarkSet::new(vec![(0.0, 1.0)]).is_ok());
        assert!(LandmarkSet::new(vec![(1.2, 0.5)]).is_err());
        assert!(LandmarkSet::from_flat(&[0.1, 0.2, 0.3]).is_err());
        let a = LandmarkSet::new(vec![(0.0, 0.0), (0.5, 0.5)]).unwrap();
        let b = LandmarkSet::new(vec![(0.3, 0.4), (0.5, 0.5)]).unwrap();
        assert!((a.mean_distance(&b).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn half_targets_are_a_fixed_point_of_zero_model() {
        let pairs: Vec<TrainingPair> = (0..20)
            .map(|i| pair(vec![i as f64 / 20.0, -0.5], vec![0.5; 4]))
            .collect();
        let m = build_lgen::<f64>(2, 2, Init::Zeros, 0).unwrap();
        let cfg = LGenConfig {
            epochs: 3,
            ..Default::default()
        };
        let r = lgen_train_from(m.clone(), &pairs, &cfg).unwrap();
        assert_eq!(r.loss_trace, vec![0.0; 3]);
        assert_eq!(r.model, m);
    }

    #[test]
    fn empty_and_mismatched_pairs_rejected() {
        assert!(matches!(
            lgen_train::<f32>(&[], &LGenConfig::default()),
            Err(Error::Argument(_))
        ));
        let m = build_lgen::<f32>(2, 1, Init::Zeros, 0).unwrap();
        let bad = vec![pair(vec![0.0; 3], vec![0.5, 0.5])];
        assert!(matches!(
            lgen_train_from(m, &bad, &LGenConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    fn oracle_pairs(n: usize, seed: u64) -> Vec<TrainingPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..6 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let t: Vec<f64> = (0..6)
                    .map(|i| {
                        let s: f64 = (0..3).map(|j| a[i * 3 + j] * z[j]).sum();
                        1.0 / (1.0 + (-s).exp())
                    })
                    .collect();
                pair(z, t)
            })
            .collect()
    }

    #[test]
    fn few_pairs_wrap_into_one_batch_and_training_is_deterministic() {
        let pairs = oracle_pairs(5, 1);
        let cfg = LGenConfig {
            epochs: 40,
            seed: 9,
            ..Default::default()
        };
        let a = lgen_train::<f64>(&pairs, &cfg).unwrap();
        let b = lgen_train::<f64>(&pairs, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.loss_trace.len(), 40);
        assert!(a.loss_trace[39] < a.loss_trace[0]);
    }

    #[test]
    fn training_reduces_loss() {
        let pairs = oracle_pairs(200, 2);
        let cfg = LGenConfig {
            epochs: 60,
            ..Default::default()
        };
        let r = lgen_train::<f32>(&pairs, &cfg).unwrap();
        assert!(
            r.loss_trace[59] < 0.5 * r.loss_trace[0],
            "{:?}",
            r.loss_trace
        );
        let final_mse = lgen_eval(&r.model, &pairs).unwrap();
        assert!(final_mse < r.loss_trace[0]);
    }

    #[test]
    fn full_network_gradient_check() {
        let m = build_lgen::<f64>(64, 49, Init::GlorotUniform, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::vector((0..64).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let report = grad_check_report(&m.net, &x, 5, Some(40)).unwrap();
        assert!(report.max_relative_error <= 1e-5, "{report:?}");
    }
}
