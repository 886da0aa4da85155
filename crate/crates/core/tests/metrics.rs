use deepfea_core::fem::{effective_strain, effective_stress};
use deepfea_core::metrics::{nmae, nrmse, r_squared, resultant_displacement, SimPair};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn r2_loop(gt: &[f64], pred: &[f64]) -> f64 {
    let mut mean = 0.0;
    for y in gt {
        mean += y;
    }
    mean /= gt.len() as f64;
    let (mut res, mut tot) = (0.0, 0.0);
    for i in 0..gt.len() {
        res += (gt[i] - pred[i]) * (gt[i] - pred[i]);
        tot += (gt[i] - mean) * (gt[i] - mean);
    }
    1.0 - res / tot
}

fn range(v: &[f64]) -> f64 {
    let mut lo = v[0];
    let mut hi = v[0];
    for &x in v {
        if x < lo {
            lo = x;
        }
        if x > hi {
            hi = x;
        }
    }
    hi - lo
}

fn nmae_loop(sims: &[SimPair]) -> f64 {
    let mut acc = 0.0;
    for (g, p) in sims {
        let mut s = 0.0;
        for i in 0..g.len() {
            s += (g[i] - p[i]).abs();
        }
        acc += s / g.len() as f64 / range(g);
    }
    100.0 * acc / sims.len() as f64
}

fn nrmse_loop(sims: &[SimPair]) -> f64 {
    let mut acc = 0.0;
    for (g, p) in sims {
        let mut s = 0.0;
        for i in 0..g.len() {
            s += (g[i] - p[i]) * (g[i] - p[i]);
        }
        acc += (s / g.len() as f64).sqrt() / range(g);
    }
    100.0 * acc / sims.len() as f64
}

fn random_sims(rng: &mut impl Rng) -> Vec<SimPair> {
    let count = rng.gen_range(1..6);
    let len = rng.gen_range(2..40);
    (0..count)
        .map(|_| {
            let g: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let p = g.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
            (g, p)
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn metrics_match_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let sims = random_sims(&mut rng);
        let gt: Vec<f64> = sims.iter().flat_map(|s| s.0.clone()).collect();
        let pr: Vec<f64> = sims.iter().flat_map(|s| s.1.clone()).collect();
        assert!(rel(r_squared(&gt, &pr).unwrap(), r2_loop(&gt, &pr)) < 1e-10);
        assert!(rel(nmae(&sims).unwrap(), nmae_loop(&sims)) < 1e-10);
        assert!(rel(nrmse(&sims).unwrap(), nrmse_loop(&sims)) < 1e-10);
    }
}

#[test]
fn undefined_metrics_are_errors() {
    assert!(r_squared(&[3.0; 5], &[1.0; 5]).is_err());
    assert!(r_squared(&[1.0], &[1.0]).is_err());
    assert!(nrmse(&[(vec![2.0; 4], vec![2.0; 4])]).is_err());
    assert!(nmae(&[]).is_err());
    assert!(nmae(&[(vec![1.0, 2.0], vec![1.0])]).is_err());
}

fn von_mises_loop(c: [f64; 6]) -> f64 {
    let mut sum = 0.0;
    for i in 0..3 {
        let d = c[i] - c[(i + 1) % 3];
        sum += d * d;
    }
    for s in &c[3..] {
        sum += 6.0 * s * s;
    }
    (sum / 2.0).sqrt()
}

#[test]
fn effective_values_match_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let c: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1e6..1e6));
        let s = effective_stress(c[0], c[1], c[2], c[3], c[4], c[5]);
        assert!(rel(s, von_mises_loop(c)) < 1e-10);
        let e = effective_strain(c[0], c[1], c[2], c[3], c[4], c[5]);
        assert!(rel(e, 2.0 / 3.0 * von_mises_loop(c)) < 1e-10);
    }
}

#[test]
fn effective_stress_closed_forms() {
    for s in [1.0, 2.5e6, -3.0] {
        assert!((effective_stress(s, 0.0, 0.0, 0.0, 0.0, 0.0) - s.abs()).abs() <= 1e-12 * s.abs());
    }
    for tau in [1.0, 4e5] {
        let want = 3f64.sqrt() * tau;
        assert!((effective_stress(0.0, 0.0, 0.0, tau, 0.0, 0.0) - want).abs() <= 1e-12 * want);
    }
    for p in [1.0, -7e6] {
        assert_eq!(effective_stress(p, p, p, 0.0, 0.0, 0.0), 0.0);
    }
}

#[test]
fn resultant_is_euclidean() {
    let r = resultant_displacement(&[&[3.0, 0.0, 1.0], &[4.0, 0.0, 1.0]]);
    assert_eq!(r[0], 5.0);
    assert_eq!(r[1], 0.0);
    assert!((r[2] - 2f64.sqrt()).abs() < 1e-15);
}

proptest! {
    #[test]
    fn nmae_never_exceeds_nrmse(seed in any::<u64>()) {
        let sims = random_sims(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(nmae(&sims).unwrap() <= nrmse(&sims).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn normalized_errors_and_r2_are_affine_invariant(
        seed in any::<u64>(),
        a in prop_oneof![0.01f64..100.0, -100.0f64..-0.01],
        b in -1e3f64..1e3,
    ) {
        let sims = random_sims(&mut ChaCha8Rng::seed_from_u64(seed));
        let moved: Vec<SimPair> = sims
            .iter()
            .map(|(g, p)| (g.iter().map(|v| a * v + b).collect(), p.iter().map(|v| a * v + b).collect()))
            .collect();
        prop_assert!(rel(nmae(&moved).unwrap(), nmae(&sims).unwrap()) < 1e-8);
        prop_assert!(rel(nrmse(&moved).unwrap(), nrmse(&sims).unwrap()) < 1e-8);
        let flat = |s: &[SimPair], k: usize| -> Vec<f64> {
            s.iter().flat_map(|x| if k == 0 { x.0.clone() } else { x.1.clone() }).collect()
        };
        let r1 = r_squared(&flat(&sims, 0), &flat(&sims, 1)).unwrap();
        let r2 = r_squared(&flat(&moved, 0), &flat(&moved, 1)).unwrap();
        prop_assert!((r1 - r2).abs() < 1e-8);
    }

    #[test]
    fn perfect_prediction_scores_perfectly(seed in any::<u64>()) {
        let sims: Vec<SimPair> = random_sims(&mut ChaCha8Rng::seed_from_u64(seed))
            .into_iter()
            .map(|(g, _)| (g.clone(), g))
            .collect();
        prop_assert_eq!(nmae(&sims).unwrap(), 0.0);
        prop_assert_eq!(nrmse(&sims).unwrap(), 0.0);
        let flat: Vec<f64> = sims.iter().flat_map(|x| x.0.clone()).collect();
        prop_assert_eq!(r_squared(&flat, &flat).unwrap(), 1.0);
    }
}
