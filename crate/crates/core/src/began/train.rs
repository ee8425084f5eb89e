use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{build_discriminator, build_generator};
use super::config::BeganConfig;
use super::latent::LatentVector;
use crate::diffcore::{BackwardMode, Element, Init, NetworkSpec, ParamTable, Tensor};
use crate::error::{Error, Result};
use crate::optim::AdamState;

/// Mean squared autoencoder residual `mean((v − D(v))²)`.
pub fn reconstruction_loss<T: Element>(v: &Tensor<T>, disc: &NetworkSpec<T>) -> Result<f64> {
    let out = disc.predict(v)?;
    Ok(mean_sq_diff(out.data(), v.data()))
}

fn mean_sq_diff<T: Element>(a: &[T], b: &[T]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    s / a.len() as f64
}

/// `k_{t+1} = clamp(k_t + λ_k (γ·L(x) − L(G(z_G))), 0, 1)`.
pub fn update_k(k: f64, loss_real: f64, loss_fake_g: f64, cfg: &BeganConfig) -> f64 {
    (k + cfg.lambda_k * (cfg.gamma * loss_real - loss_fake_g)).clamp(0.0, 1.0)
}

/// Global convergence measure `L(x) + |γ·L(x) − L(G(z_G))|`.
pub fn convergence_measure(loss_real: f64, loss_fake_g: f64, cfg: &BeganConfig) -> f64 {
    loss_real + (cfg.gamma * loss_real - loss_fake_g).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeganLosses {
    /// L(x)
    pub loss_real: f64,
    /// L(G(z_D))
    pub loss_fake_d: f64,
    /// L(G(z_G))
    pub loss_fake_g: f64,
    /// L(x) − k·L(G(z_D))
    pub loss_d: f64,
    /// L(G(z_G))
    pub loss_g: f64,
}

impl BeganLosses {
    pub fn from_parts(loss_real: f64, loss_fake_d: f64, loss_fake_g: f64, k: f64) -> Self {
        BeganLosses {
            loss_real,
            loss_fake_d,
            loss_fake_g,
            loss_d: loss_real - k * loss_fake_d,
            loss_g: loss_fake_g,
        }
    }
}

/// Per-step diagnostics returned by [`BeganTrainState::train_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub losses: BeganLosses,
    /// k before the update.
    pub k: f64,
    pub convergence: f64,
}

/// Everything that evolves during BEGAN training.
#[derive(Debug, Clone)]
pub struct BeganTrainState<T = f32> {
    pub cfg: BeganConfig,
    pub disc: NetworkSpec<T>,
    pub gen: NetworkSpec<T>,
    pub k: f64,
    pub step: u64,
    pub adam_d: AdamState<T>,
    pub adam_g: AdamState<T>,
    pub rng: ChaCha8Rng,
}

/// Reconstruction loss of one batch with the gradient pieces needed by the
/// BEGAN objectives.
struct Recon<T> {
    loss: f64,
    params: Option<ParamTable<T>>,
    /// dL/dv including the direct `−2e/N` term.
    input: Option<Tensor<T>>,
}

fn recon_grad<T: Element>(
    disc: &NetworkSpec<T>,
    v: &Tensor<T>,
    mode: BackwardMode,
) -> Result<Recon<T>> {
    let trace = disc.forward(v)?;
    let out = trace.output_data();
    let n = out.len();
    let scale = T::from_f64_lossy(2.0 / n as f64);
    let loss = mean_sq_diff(out, v.data());
    let dout: Vec<T> = out
        .iter()
        .zip(v.data())
        .map(|(&o, &x)| scale * (o - x))
        .collect();
    let dout = Tensor::new(v.shape().to_vec(), dout)?;
    let grads = disc.backward_with(&trace, &dout, mode)?;
    let input = grads.input.map(|mut through| {
        for (g, d) in through.data_mut().iter_mut().zip(dout.data()) {
            *g -= *d;
        }
        through
    });
    Ok(Recon {
        loss,
        params: mode.params.then_some(grads.params),
        input,
    })
}

impl<T: Element> BeganTrainState<T> {
    /// Fresh state: Glorot-initialised networks, k₀ = 0, step 0.
    pub fn new(cfg: BeganConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let disc = build_discriminator(&cfg, Init::GlorotUniform, &mut init_rng)?;
        let gen = build_generator(&cfg, Init::GlorotUniform, &mut init_rng)?;
        Self::from_networks(cfg, disc, gen)
    }

    pub fn from_networks(
        cfg: BeganConfig,
        disc: NetworkSpec<T>,
        gen: NetworkSpec<T>,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(BeganTrainState {
            adam_d: AdamState::for_params(disc.params()),
            adam_g: AdamState::for_params(gen.params()),
            cfg,
            disc,
            gen,
            k: 0.0,
            step: 0,
            rng,
        })
    }

    pub fn sample_latent_batch(&mut self, n: usize) -> Tensor<T> {
        sample_latents(&mut self.rng, n, self.cfg.n_z)
    }

    /// Evaluates both objectives at the current parameters.
    pub fn losses(&self, x: &Tensor<T>, z_d: &Tensor<T>, z_g: &Tensor<T>) -> Result<BeganLosses> {
        let image_rank = self.cfg.image_shape().len() + 1;
        for (what, t, rank) in [("real", x, image_rank), ("z_D", z_d, 2), ("z_G", z_g, 2)] {
            if t.shape().len() != rank {
                return Err(Error::Argument(format!(
                    "{what} must be a batch with a leading batch axis, got {:?}",
                    t.shape()
                )));
            }
        }
        let loss_real = reconstruction_loss(x, &self.disc)?;
        let loss_fake_d = reconstruction_loss(&self.gen.predict(z_d)?, &self.disc)?;
        let loss_fake_g = reconstruction_loss(&self.gen.predict(z_g)?, &self.disc)?;
        Ok(BeganLosses::from_parts(
            loss_real,
            loss_fake_d,
            loss_fake_g,
            self.k,
        ))
    }

    /// ∇θ_D [L(x) − k·L(G(z_D))] with G held fixed.
    pub fn discriminator_grads(
        &self,
        x: &Tensor<T>,
        z_d: &Tensor<T>,
    ) -> Result<(ParamTable<T>, f64, f64)> {
        let real = recon_grad(&self.disc, x, BackwardMode::PARAMS)?;
        let fake = self.gen.predict(z_d)?;
        let fake = recon_grad(&self.disc, &fake, BackwardMode::PARAMS)?;
        let mut grads = real.params.unwrap();
        grads.add_scaled(&fake.params.unwrap(), T::from_f64_lossy(-self.k))?;
        Ok((grads, real.loss, fake.loss))
    }

    /// ∇θ_G L(G(z_G)) with D held fixed.
    pub fn generator_grads(&self, z_g: &Tensor<T>) -> Result<(ParamTable<T>, f64)> {
        let trace = self.gen.forward(z_g)?;
        let fake = trace.output();
        let recon = recon_grad(&self.disc, &fake, BackwardMode::INPUT)?;
        let grads = self
            .gen
            .backward_with(&trace, &recon.input.unwrap(), BackwardMode::PARAMS)?;
        Ok((grads.params, recon.loss))
    }

    /// One simultaneous update of θ_D, θ_G and k on a batch of real images
    /// `[B, C, H, W]`. Both gradients are taken at the pre-update parameters.
    pub fn train_step(&mut self, x: &Tensor<T>) -> Result<StepStats> {
        let b = match x.shape() {
            [b, rest @ ..] if rest == self.cfg.image_shape().as_slice() && *b > 0 => *b,
            s => {
                return Err(Error::Shape(format!(
                    "real batch must be [B, {:?}], got {s:?}",
                    self.cfg.image_shape()
                )))
            }
        };
        let z_d = self.sample_latent_batch(b);
        let z_g = self.sample_latent_batch(b);
        let (grads_d, loss_real, loss_fake_d) = self.discriminator_grads(x, &z_d)?;
        let (grads_g, loss_fake_g) = self.generator_grads(&z_g)?;
        let losses = BeganLosses::from_parts(loss_real, loss_fake_d, loss_fake_g, self.k);
        let finite = [loss_real, loss_fake_d, loss_fake_g]
            .iter()
            .all(|v| v.is_finite());
        if !finite
            || !grads_d
                .iter()
                .chain(grads_g.iter())
                .all(|(_, g)| g.all_finite())
        {
            return Err(Error::Diverged {
                step: self.step,
                what: format!("{losses:?}"),
            });
        }
        let adam = self.cfg.adam;
        self.adam_d.step(self.disc.params_mut(), &grads_d, &adam)?;
        self.adam_g.step(self.gen.params_mut(), &grads_g, &adam)?;
        let stats = StepStats {
            step: self.step,
            losses,
            k: self.k,
            convergence: convergence_measure(loss_real, loss_fake_g, &self.cfg),
        };
        self.k = update_k(self.k, loss_real, loss_fake_g, &self.cfg);
        self.step += 1;
        Ok(stats)
    }

    /// Draws a batch of distinct images from `corpus` with the state's RNG.
    pub fn sample_batch(&mut self, corpus: &[Tensor<T>]) -> Result<Tensor<T>> {
        if corpus.is_empty() {
            return Err(Error::Argument("training corpus is empty".into()));
        }
        let b = self.cfg.batch_size;
        let picks: Vec<Tensor<T>> = if b <= corpus.len() {
            sample(&mut self.rng, corpus.len(), b)
                .into_iter()
                .map(|i| corpus[i].clone())
                .collect()
        } else {
            (0..b)
                .map(|_| corpus[self.rng.gen_range(0..corpus.len())].clone())
                .collect()
        };
        Tensor::stack(&picks)
    }

    /// Runs `train_step` until `step == until`, calling `observe` after each.
    pub fn train(
        &mut self,
        corpus: &[Tensor<T>],
        until: u64,
        mut observe: impl FnMut(&StepStats),
    ) -> Result<()> {
        while self.step < until {
            let batch = self.sample_batch(corpus)?;
            let stats = self.train_step(&batch)?;
            observe(&stats);
        }
        Ok(())
    }

    /// `n` generated images and the latents that produced them.
    pub fn sample_faces(&self, n: usize, seed: u64) -> Result<(Vec<Tensor<T>>, Vec<LatentVector>)> {
        sample_faces(&self.gen, n, seed)
    }
}

/// Uniform latents in [−1, 1]^n_z as a `[n, n_z]` tensor, drawn at the
/// tensor's precision.
pub fn sample_latents<T: Element>(rng: &mut impl Rng, n: usize, n_z: usize) -> Tensor<T> {
    let data: Vec<T> = (0..n * n_z)
        .map(|_| T::from_f64_lossy(rng.gen_range(-1.0..=1.0)))
        .collect();
    Tensor::from_parts(vec![n, n_z], data)
}

pub fn sample_faces<T: Element>(
    gen: &NetworkSpec<T>,
    n: usize,
    seed: u64,
) -> Result<(Vec<Tensor<T>>, Vec<LatentVector>)> {
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let n_z = gen.input_shape()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_latents::<T>(&mut rng, n, n_z);
    let images = gen.predict(&z)?.unstack();
    let latents = z
        .unstack()
        .into_iter()
        .map(|row| LatentVector::new(row.to_f64_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((images, latents))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::LayerSpec;

    fn tiny_cfg() -> BeganConfig {
        BeganConfig {
            image_size: 4,
            image_channels: 1,
            base_channels: 2,
            stages: 2,
            convs_per_stage: 1,
            n_z: 3,
            batch_size: 2,
            seed: 11,
            ..BeganConfig::desk()
        }
    }

    fn tiny_batch(seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_latents::<f64>(&mut rng, 2, 16)
            .reshape(&[2, 1, 4, 4])
            .unwrap()
    }

    #[test]
    fn update_k_examples() {
        let cfg = BeganConfig::desk();
        assert_eq!(update_k(0.3, 2.0, 1.0, &cfg), 0.3);
        assert!((update_k(0.0, 1.0, 0.2, &cfg) - 0.0003).abs() < 1e-12);
        assert_eq!(update_k(0.0, 0.2, 1.0, &cfg), 0.0);
        assert_eq!(update_k(0.9999, 100.0, 0.0, &cfg), 1.0);
    }

    #[test]
    fn convergence_examples() {
        let cfg = BeganConfig::desk();
        assert_eq!(convergence_measure(0.0, 0.0, &cfg), 0.0);
        assert_eq!(convergence_measure(2.0, 1.0, &cfg), 2.0);
        assert_eq!(convergence_measure(1.0, 0.0, &cfg), 1.5);
    }

    #[test]
    fn loss_examples() {
        let l = BeganLosses::from_parts(0.8, 0.4, 0.1, 0.5);
        assert!((l.loss_d - 0.6).abs() < 1e-12);
        assert_eq!(BeganLosses::from_parts(0.8, 0.4, 0.1, 0.0).loss_d, 0.8);

        // D(v) = 0 for a zero-weight linear autoencoder
        let zero = NetworkSpec::<f64>::build(
            "z",
            vec![4],
            vec![LayerSpec::dense(4, 4)],
            Init::Zeros,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let ones = Tensor::<f64>::full(&[1, 4], 1.0);
        assert_eq!(reconstruction_loss(&ones, &zero).unwrap(), 1.0);
        let identity = NetworkSpec::<f64>::build(
            "i",
            vec![4],
            vec![],
            Init::Zeros,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(reconstruction_loss(&ones, &identity).unwrap(), 0.0);
        let single = NetworkSpec::<f64>::new(
            "h",
            vec![1],
            vec![LayerSpec::FullyConnected {
                in_dim: 1,
                out_dim: 1,
                has_bias: false,
            }],
            [(
                "h.00.weight".to_string(),
                Tensor::from_f64(vec![1, 1], &[0.5]).unwrap(),
            )]
            .into_iter()
            .collect(),
        )
        .unwrap();
        assert_eq!(
            reconstruction_loss(&Tensor::scalar(0.5), &single).unwrap(),
            0.0625
        );
    }

    #[test]
    fn identity_discriminator_has_zero_losses() {
        let cfg = tiny_cfg();
        let mut state = BeganTrainState::<f64>::new(cfg.clone()).unwrap();
        state.disc = NetworkSpec::build(
            "disc",
            cfg.image_shape(),
            vec![],
            Init::Zeros,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let z = state.sample_latent_batch(2);
        let l = state.losses(&tiny_batch(1), &z, &z).unwrap();
        assert_eq!((l.loss_d, l.loss_g), (0.0, 0.0));
        let unbatched = state.losses(&Tensor::zeros(&[1, 4, 4]), &z, &z);
        assert!(matches!(unbatched, Err(Error::Argument(_))));
        assert!(matches!(Tensor::<f64>::stack(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn discriminator_gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let mut state = BeganTrainState::<f64>::new(cfg).unwrap();
        state.k = 0.37;
        let x = tiny_batch(3);
        let z_d = state.sample_latent_batch(2);
        let (grads, _, _) = state.discriminator_grads(&x, &z_d).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for name in grads.keys().cloned().collect::<Vec<_>>() {
            for idx in 0..grads.get(&name).unwrap().len().min(4) {
                let mut probe = state.clone();
                let eval = |p: &BeganTrainState<f64>| {
                    let l = p.losses(&x, &z_d, &z_d).unwrap();
                    l.loss_real - p.k * l.loss_fake_d
                };
                let orig = state.disc.params().get(&name).unwrap().data()[idx];
                probe.disc.params_mut().get_mut(&name).unwrap().data_mut()[idx] = orig + h;
                let plus = eval(&probe);
                probe.disc.params_mut().get_mut(&name).unwrap().data_mut()[idx] = orig - h;
                let minus = eval(&probe);
                let fd = (plus - minus) / (2.0 * h);
                let an = grads.get(&name).unwrap().data()[idx];
                worst = worst.max(crate::diffcore::relative_error(an, fd));
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn generator_gradient_matches_finite_differences() {
        let state = BeganTrainState::<f64>::new(tiny_cfg()).unwrap();
        let z_g = Tensor::from_f64(vec![2, 3], &[0.1, -0.5, 0.9, -0.2, 0.3, 0.7]).unwrap();
        let (grads, loss) = state.generator_grads(&z_g).unwrap();
        let h = 1e-6;
        let eval = |p: &BeganTrainState<f64>| {
            reconstruction_loss(&p.gen.predict(&z_g).unwrap(), &p.disc).unwrap()
        };
        assert!((eval(&state) - loss).abs() < 1e-15);
        let mut worst: f64 = 0.0;
        for name in grads.keys().cloned().collect::<Vec<_>>() {
            for idx in 0..grads.get(&name).unwrap().len().min(4) {
                let mut probe = state.clone();
                let orig = state.gen.params().get(&name).unwrap().data()[idx];
                probe.gen.params_mut().get_mut(&name).unwrap().data_mut()[idx] = orig + h;
                let plus = eval(&probe);
                probe.gen.params_mut().get_mut(&name).unwrap().data_mut()[idx] = orig - h;
                let minus = eval(&probe);
                let fd = (plus - minus) / (2.0 * h);
                worst = worst.max(crate::diffcore::relative_error(
                    grads.get(&name).unwrap().data()[idx],
                    fd,
                ));
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn gradient_tables_stay_on_their_network() {
        let mut state = BeganTrainState::<f64>::new(tiny_cfg()).unwrap();
        let x = tiny_batch(5);
        let z = state.sample_latent_batch(2);
        let (gd, _, _) = state.discriminator_grads(&x, &z).unwrap();
        let (gg, _) = state.generator_grads(&z).unwrap();
        assert!(gd.keys().eq(state.disc.params().keys()));
        assert!(gg.keys().eq(state.gen.params().keys()));
        assert!(gd.keys().all(|k| state.gen.params().get(k).is_none()));
    }

    #[test]
    fn frozen_controller_and_determinism() {
        let cfg = BeganConfig {
            lambda_k: 0.0,
            ..tiny_cfg()
        };
        let corpus: Vec<Tensor<f32>> = (0..5)
            .map(|s| tiny_batch(s).cast::<f32>().unstack()[0].clone())
            .collect();
        let run = || {
            let mut st = BeganTrainState::<f32>::new(cfg.clone()).unwrap();
            let mut ks = Vec::new();
            st.train(&corpus, 20, |s| ks.push(s.k)).unwrap();
            (st, ks)
        };
        let (a, ks) = run();
        assert!(ks.iter().all(|&k| k == 0.0));
        assert_eq!(a.step, 20);
        let (b, _) = run();
        assert_eq!(a.disc, b.disc);
        assert_eq!(a.gen, b.gen);
        assert_eq!(a.adam_d, b.adam_d);
    }

    #[test]
    fn sample_faces_contract() {
        let state = BeganTrainState::<f32>::new(tiny_cfg()).unwrap();
        let (imgs, zs) = state.sample_faces(0, 1).unwrap();
        assert!(imgs.is_empty() && zs.is_empty());
        let (a, za) = state.sample_faces(5, 9).unwrap();
        let (b, zb) = state.sample_faces(5, 9).unwrap();
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|t| t.shape() == [1, 4, 4]));
        assert_eq!(a, b);
        assert_eq!(za, zb);
    }
}
