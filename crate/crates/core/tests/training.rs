use deepfea_core::fem::{run_simulation, MaterialLEM, SimOptions, SimulationRecord};
use deepfea_core::mesh::{grid_topology, Face, LoadSpec, NormalizationStats};
use deepfea_core::nelo::{
    adam_step, draw_trace, learning_rate, ne_loss, ps_schedule, rollout, sim_loss_and_grads,
    targets, train, AdamState, TrainConfig,
};
use deepfea_core::predict::{NepConfig, NepModel};
use deepfea_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn schedule_matches_power_law_with_floor() {
    let cfg = TrainConfig::default();
    let mut first_zero = None;
    for epoch in 0..1000 {
        let mut expect = 1.0;
        for _ in 0..epoch / 40 {
            expect *= 0.7;
        }
        if expect < 0.01 {
            expect = 0.0;
        }
        let got = ps_schedule(epoch, &cfg);
        assert!(
            (got - expect).abs() <= 1e-15 * expect,
            "epoch {epoch}: {got} vs {expect}"
        );
        if got == 0.0 && first_zero.is_none() {
            first_zero = Some(epoch);
        }
    }
    assert_eq!(first_zero, Some(520));
}

#[test]
fn learning_rate_follows_schedule() {
    let cfg = TrainConfig::default();
    for epoch in [0, 40, 200, 519, 520, 599] {
        let want = cfg.lr_base * (0.1 + 0.9 * ps_schedule(epoch, &cfg));
        assert_eq!(learning_rate(epoch, &cfg), want);
    }
}

#[test]
fn replacement_frequency_is_one_minus_ps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let steps = 101;
    let sims = 200; // 200 × 100 = 2·10^4 draws for t > 0
    for ps in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let mut hits = 0usize;
        for _ in 0..sims {
            let tr = draw_trace(steps, ps, &mut rng);
            assert!(!tr[0]);
            hits += tr.iter().filter(|&&b| b).count();
        }
        let n = (sims * (steps - 1)) as f64;
        let p = 1.0 - ps;
        let sigma = (n * p * (1.0 - p)).sqrt();
        let diff = (hits as f64 - n * p).abs();
        assert!(diff <= 3.0 * sigma, "P_s {ps}: {hits} of {n}");
        if ps == 1.0 {
            assert_eq!(hits, 0);
        }
        if ps == 0.0 {
            assert_eq!(hits as f64, n);
        }
    }
}

fn loop_loss(pn: &[Tensor], gn: &[Tensor], pe: &[Tensor], ge: &[Tensor], zn: f64, ze: f64) -> f64 {
    let mut sn = 0.0;
    let mut count_n = 0usize;
    for t in 0..pn.len() {
        for i in 0..pn[t].len() {
            let d = pn[t].data()[i] - gn[t].data()[i];
            sn += d * d;
            count_n += 1;
        }
    }
    let mut se = 0.0;
    let mut count_e = 0usize;
    for t in 0..pe.len() {
        for i in 0..pe[t].len() {
            let d = pe[t].data()[i] - ge[t].data()[i];
            se += d * d;
            count_e += 1;
        }
    }
    zn * sn / count_n as f64 + ze * se / count_e as f64
}

#[test]
fn ne_loss_matches_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let t = rng.gen_range(1..6);
        let (h, w) = (rng.gen_range(2..7), rng.gen_range(2..7));
        let mut seq = |shape: &[usize]| -> Vec<Tensor> {
            (0..t)
                .map(|_| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)))
                .collect()
        };
        let (pn, gn) = (seq(&[2, h, w]), seq(&[2, h, w]));
        let (pe, ge) = (seq(&[2, h - 1, w - 1]), seq(&[2, h - 1, w - 1]));
        let (zn, ze) = (rng.gen_range(0.1..1e4), rng.gen_range(0.1..1e4));
        let got = ne_loss(&pn, &gn, &pe, &ge, zn, ze).unwrap();
        let want = loop_loss(&pn, &gn, &pe, &ge, zn, ze);
        assert!((got - want).abs() <= 1e-10 * want.abs());
    }
}

#[test]
fn ne_loss_unit_errors_give_zeta() {
    let ones = vec![Tensor::ones(&[2, 3, 3])];
    let zeros = vec![Tensor::zeros(&[2, 3, 3])];
    let e = vec![Tensor::zeros(&[2, 2, 2])];
    assert_eq!(ne_loss(&ones, &zeros, &e, &e, 1e4, 1e4).unwrap(), 1e4);
    assert!(ne_loss(&ones, &[], &e, &e, 1.0, 1.0).is_err());
}

#[test]
fn adam_minimizes_a_quadratic() {
    let target = [3.0, -2.0, 0.5];
    let mut p = Tensor::zeros(&[3]);
    let mut st = AdamState::new(&[&p]);
    for _ in 0..3000 {
        let g = Tensor::from_fn(&[3], |i| 2.0 * (p.data()[i] - target[i]));
        adam_step(&mut [&mut p], &[g], &mut st, 0.01).unwrap();
    }
    for i in 0..3 {
        assert!((p.data()[i] - target[i]).abs() < 1e-3, "{:?}", p.data());
    }
}

#[test]
fn adam_first_step_is_sign_times_lr() {
    let mut p = Tensor::from_fn(&[4], |i| i as f64);
    let mut st = AdamState::new(&[&p]);
    let g = Tensor::from_fn(&[4], |i| [5.0, -0.01, 123.0, -7.0][i]);
    adam_step(&mut [&mut p], &[g], &mut st, 0.1).unwrap();
    let expect = [-0.1, 1.1, 1.9, 3.1];
    for i in 0..4 {
        assert!((p.data()[i] - expect[i]).abs() < 1e-6);
    }
}

fn tiny_data() -> (Vec<SimulationRecord>, NormalizationStats) {
    let topo = grid_topology(&[4, 4], 0.25, Face::Bottom).unwrap();
    let opts = SimOptions {
        steps: 6,
        ..SimOptions::default()
    };
    let sims: Vec<SimulationRecord> = [(0, 0.0), (2, 90.0), (4, 135.0)]
        .iter()
        .map(|&(i, a)| {
            let node = topo.free_boundary_nodes()[i];
            run_simulation(
                &topo,
                &MaterialLEM::default(),
                &LoadSpec::new(node, a, 1e6),
                &opts,
            )
            .unwrap()
        })
        .collect();
    let stats = NormalizationStats::fit(&sims).unwrap();
    (sims, stats)
}

fn tiny_arch() -> NepConfig {
    NepConfig {
        node_dims: vec![4, 4],
        hidden: vec![4],
        kernel: 3,
    }
}

#[test]
fn teacher_forced_trace_matches_gradient_free_rollout() {
    let (sims, stats) = tiny_data();
    let model = NepModel::init(tiny_arch(), 3).unwrap();
    let cfg = TrainConfig::default();
    let tg = targets(&sims[0], &stats).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for ps in [1.0, 0.0] {
        let r = rollout(&sims[0], &model, &stats, ps, &mut rng).unwrap();
        let (loss, _) =
            sim_loss_and_grads(&sims[0], &tg, &model, &stats, &r.replaced, &cfg).unwrap();
        let want = ne_loss(
            &r.node,
            &tg.node,
            &r.element,
            &tg.element,
            cfg.zeta_n,
            cfg.zeta_e,
        )
        .unwrap();
        assert!((loss - want).abs() <= 1e-12 * want);
    }
}

#[test]
fn short_training_reduces_loss_and_is_deterministic() {
    let (sims, stats) = tiny_data();
    let cfg = TrainConfig {
        epochs: 30,
        k: 10,
        batch_size: 2,
        lr_base: 1e-2,
        seed: 5,
        ..TrainConfig::default()
    };
    let (m1, h1) = train(&sims, &stats, tiny_arch(), &cfg, |_| {}).unwrap();
    let (m2, h2) = train(&sims, &stats, tiny_arch(), &cfg, |_| {}).unwrap();
    assert_eq!(m1, m2);
    let losses = |h: &[deepfea_core::nelo::EpochRecord]| {
        h.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(losses(&h1), losses(&h2));
    assert!(
        h1.last().unwrap().loss < 0.5 * h1[0].loss,
        "{} -> {}",
        h1[0].loss,
        h1.last().unwrap().loss
    );
    assert!((h1[25].ps - 0.49).abs() < 1e-15);
    assert!(h1.iter().all(|r| r.draws == 3 * 5));
}

#[test]
fn invalid_training_config_is_rejected() {
    let (sims, stats) = tiny_data();
    for cfg in [
        TrainConfig {
            k: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            gamma: 1.5,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
    ] {
        assert!(train(&sims, &stats, tiny_arch(), &cfg, |_| {}).is_err());
    }
}
