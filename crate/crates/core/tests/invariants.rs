use latentmark::began::{update_k, BeganConfig, LatentVector};
use latentmark::diffcore::Init;
use latentmark::diffcore::{LayerSpec, NetworkSpec, ParamTable, Tensor};
use latentmark::inversion::{invert, mirror, InversionConfig, InversionInit};
use latentmark::lgen::{build_lgen, lgen_forward, LandmarkSet};
use latentmark::optim::{adam_init, adam_step, AdamConfig};
use latentmark::pipeline::corpus::{landmark_csv, parse_landmark_csv};
use proptest::prelude::*;
use std::path::Path;

fn controller(gamma: f64, lambda_k: f64) -> BeganConfig {
    BeganConfig {
        gamma,
        lambda_k,
        ..BeganConfig::desk()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn k_stays_in_unit_interval(
        k0 in 0.0f64..=1.0,
        gamma in 0.01f64..=1.0,
        lambda_k in 0.0f64..=1.0,
        losses in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 1..200),
    ) {
        let cfg = controller(gamma, lambda_k);
        let mut k = k0;
        for (real, fake) in losses {
            k = update_k(k, real, fake, &cfg);
            prop_assert!((0.0..=1.0).contains(&k));
        }
    }

    #[test]
    fn k_is_fixed_at_equilibrium(k0 in 0.0f64..=1.0, gamma in 0.01f64..=1.0, real in 0.0f64..10.0) {
        let cfg = controller(gamma, 0.001);
        prop_assert_eq!(update_k(k0, real, gamma * real, &cfg), k0);
    }

    #[test]
    fn persistent_surplus_drives_k_to_one(k0 in 0.0f64..=1.0, surplus in 0.01f64..1.0) {
        let cfg = controller(0.5, 0.001);
        let real = 2.0 * surplus + 1.0;
        let fake = cfg.gamma * real - surplus;
        let mut k = k0;
        let mut prev = k;
        for _ in 0..200_000 {
            k = update_k(k, real, fake, &cfg);
            prop_assert!(k >= prev);
            prev = k;
            if k == 1.0 {
                break;
            }
        }
        prop_assert_eq!(k, 1.0);
        prop_assert_eq!(update_k(k, real, fake, &cfg), 1.0);
    }

    #[test]
    fn landmark_output_is_open_unit_interval(
        seed in any::<u64>(),
        scale in 1.0f64..200.0,
        z in prop::collection::vec(-1.0f64..=1.0, 8),
    ) {
        let mut model = build_lgen::<f64>(8, 5, Init::GlorotUniform, seed).unwrap();
        for (_, t) in model.net.params_mut().iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v * scale + 0.3 * scale);
        }
        let out = lgen_forward(&model, &LatentVector::new(z).unwrap()).unwrap();
        for &(x, y) in out.points() {
            prop_assert!(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0, "({x}, {y})");
        }
    }

    #[test]
    fn inversion_stays_in_latent_box(
        w in prop::collection::vec(-3.0f64..3.0, 6),
        target in prop::collection::vec(-5.0f64..5.0, 3),
        start in prop::collection::vec(-1.0f64..=1.0, 2),
        seed in any::<u64>(),
    ) {
        let params: ParamTable<f64> = [
            ("lin.00.weight".to_string(), Tensor::new(vec![3, 2], w).unwrap()),
            ("lin.00.bias".to_string(), Tensor::vector(vec![0.0; 3])),
        ]
        .into_iter()
        .collect();
        let gen = NetworkSpec::new("lin", vec![2], vec![LayerSpec::dense(2, 3)], params).unwrap();
        let cfg = InversionConfig {
            max_steps: 60,
            init: InversionInit::Provided(LatentVector::new(start).unwrap()),
            ..Default::default()
        };
        let r = invert(&Tensor::vector(target), &gen, &cfg, seed).unwrap();
        prop_assert!(r.z_r.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!(r.err_trace.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn first_adam_step_moves_by_alpha(g in prop::collection::vec(-100.0f64..100.0, 1..20)) {
        let n = g.len();
        let params: ParamTable<f64> = [("w".to_string(), Tensor::vector(vec![0.0; n]))].into_iter().collect();
        let grads: ParamTable<f64> = [("w".to_string(), Tensor::vector(g.clone()))].into_iter().collect();
        let state = adam_init::<f64>(&params.shapes());
        let cfg = AdamConfig::INVERSION;
        let (p, s) = adam_step(&params, &grads, &state, &cfg).unwrap();
        prop_assert_eq!(s.t, 1);
        for (new, gi) in p.get("w").unwrap().data().iter().zip(&g) {
            let expect = -cfg.alpha * gi / (gi.abs() + cfg.epsilon);
            prop_assert!((new - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn landmark_csv_roundtrips(rows in prop::collection::vec(prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 3), 1..10)) {
        let rows: Vec<(String, LandmarkSet)> = rows
            .into_iter()
            .enumerate()
            .map(|(i, p)| (format!("img_{i}.png"), LandmarkSet::new(p).unwrap()))
            .collect();
        let bytes = landmark_csv(&rows, 3).unwrap();
        let back = parse_landmark_csv(Path::new("mem.csv"), &bytes).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for ((na, a), (nb, b)) in rows.iter().zip(&back) {
            prop_assert_eq!(na, nb);
            for (u, v) in a.flat().iter().zip(b.flat()) {
                prop_assert!((u - v).abs() <= 5e-7);
            }
        }
        prop_assert_eq!(landmark_csv(&back, 3).unwrap(), bytes);
    }

    #[test]
    fn mirror_is_an_involution(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let n = c * h * w;
        let data: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 997) as f64) / 997.0).collect();
        let x = Tensor::new(vec![c, h, w], data).unwrap();
        prop_assert_eq!(mirror(&mirror(&x)), x);
    }
}
