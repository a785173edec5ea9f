use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cancer::{diameter, drift, table, CARRYING_CAPACITY, C_MAX};
use super::*;
use crate::data::Split;

fn quiet_config() -> CancerSimConfig {
    CancerSimConfig {
        n_patients: 1,
        noise: false,
        ..CancerSimConfig::default()
    }
}

#[test]
fn zero_spread_gives_table_means() {
    let cfg = CancerSimConfig {
        param_spread: 0.0,
        ..quiet_config()
    };
    let p = sample_patient_params(&mut ChaCha8Rng::seed_from_u64(1), &cfg).unwrap();
    assert_eq!(p.rho, 7e-5);
    assert_eq!(p.alpha_r, 0.0398);
    assert_eq!(p.beta_c, 0.028);
    assert_eq!(p.rho_w, 14e-5);
    assert_eq!(p.alpha_wr, 0.004125);
    assert_eq!(p.beta_wc, 0.001775);
    assert_eq!(p.lambda, 31e-5);
    assert_eq!(p.k, 30.0);
    assert_eq!(p.k_w, p.w0);
}

#[test]
fn radio_ratio_and_positivity() {
    let cfg = CancerSimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..2000 {
        let p = sample_patient_params(&mut rng, &cfg).unwrap();
        assert_eq!(p.beta_r, p.alpha_r / 10.0);
        assert!(p.rho > 0.0 && p.alpha_r > 0.0 && p.beta_c > 0.0);
        assert!((1.0..4.0).contains(&p.alpha_c_dose) && (1.0..4.0).contains(&p.alpha_r_dose));
    }
}

#[test]
fn chemo_kill_mean_recovered() {
    let cfg = CancerSimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10_000;
    let mean = (0..n)
        .map(|_| sample_patient_params(&mut rng, &cfg).unwrap().beta_c)
        .sum::<f64>()
        / n as f64;
    assert!((mean - table::BETA_C.0).abs() < 3.0 * table::BETA_C.1 / 100.0, "{mean}");
}

fn params_with_doses(alpha_c: f64, alpha_r: f64) -> CancerPatientParams {
    let mut p = sample_patient_params(&mut ChaCha8Rng::seed_from_u64(0), &quiet_config()).unwrap();
    p.alpha_c_dose = alpha_c;
    p.alpha_r_dose = alpha_r;
    p
}

#[test]
fn dose_policy_examples() {
    let p = params_with_doses(2.0, 3.0);
    let (c, d) = dose_policy(6.5, 4.0, &p);
    assert_eq!((c, d), (7.0, 1.5));
    let p = params_with_doses(4.0, 4.0);
    let (c, _) = dose_policy(13.0, 8.0, &p);
    let expected = 14.0 / (1.0 + (-16.0f64).exp());
    assert!((c - expected).abs() < 1e-12 && c > 13.99);
}

proptest! {
    #[test]
    fn stronger_confounding_widens_dose_gap(
        high in 6.6f64..13.0,
        low in 0.0f64..6.4,
        g1 in 1.0f64..7.9,
        dg in 0.05f64..1.0,
        alpha in 1.0f64..4.0,
    ) {
        let p = params_with_doses(alpha, alpha);
        let g2 = (g1 + dg).min(8.0);
        let gap = |g: f64| dose_policy(high, g, &p).0 - dose_policy(low, g, &p).0;
        prop_assert!(gap(g2) > gap(g1));
        prop_assert!((dose_policy(high, g2, &p).0 - 7.0).abs() > (dose_policy(high, g1, &p).0 - 7.0).abs());
    }

    #[test]
    fn gompertz_sign(v in 1e-3f64..100.0) {
        let p = params_with_doses(2.0, 2.0);
        let (dv, _) = drift(&p, v, p.w0, 0.0, 0.0);
        let expected = (CARRYING_CAPACITY / v).ln().signum();
        if (v - CARRYING_CAPACITY).abs() > 1e-9 {
            prop_assert_eq!(dv.signum(), expected);
        }
    }
}

#[test]
fn carrying_capacity_is_fixed_point() {
    let cfg = quiet_config();
    let mut p = params_with_doses(2.0, 2.0);
    p.v0 = CARRYING_CAPACITY;
    let traj = simulate_cancer_patient(
        0,
        &p,
        &cfg,
        &DoseRegime::Constant(0.0, 0.0),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!(traj.y.iter().all(|y| y[0] == CARRYING_CAPACITY));
}

/// Classical RK4 on the dose-free volume equation.
fn gompertz_reference(rho: f64, v0: f64, days: f64, h: f64) -> Vec<f64> {
    let f = |v: f64| rho * (CARRYING_CAPACITY / v).ln() * v;
    let steps_per_day = (1.0 / h).round() as usize;
    let mut out = vec![v0];
    let mut v = v0;
    for _ in 0..days as usize {
        for _ in 0..steps_per_day {
            let k1 = f(v);
            let k2 = f(v + 0.5 * h * k1);
            let k3 = f(v + 0.5 * h * k2);
            let k4 = f(v + h * k3);
            v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.push(v);
    }
    out
}

#[test]
fn dose_free_growth_matches_fine_reference() {
    let cfg = quiet_config();
    for unit in 0..20 {
        let mut rng = unit_rng(cfg.seed, unit);
        let mut p = sample_patient_params(&mut rng, &cfg).unwrap();
        p.v0 = 1.0;
        let traj = simulate_cancer_patient(unit, &p, &cfg, &DoseRegime::Constant(0.0, 0.0), &mut rng).unwrap();
        let reference = gompertz_reference(p.rho, 1.0, 360.0, cfg.dt / 10.0);
        let mut worst = 0.0f64;
        for (y, r) in traj.y.iter().zip(&reference) {
            worst = worst.max((y[0] - r).abs() / r);
        }
        assert!(worst < 1e-3, "unit {unit}: rho {} rel err {worst}", p.rho);
        assert!(traj.y.windows(2).all(|w| w[1][0] > w[0][0]));
    }
}

#[test]
fn maximal_chemo_shrinks_small_tumours() {
    let cfg = CancerSimConfig {
        param_spread: 0.0,
        ..quiet_config()
    };
    let mut p = sample_patient_params(&mut ChaCha8Rng::seed_from_u64(0), &cfg).unwrap();
    p.v0 = 1.0;
    let (dv, _) = drift(&p, 1.0, p.w0, C_MAX, 0.0);
    assert!(dv < 0.0);
    let traj = simulate_cancer_patient(
        0,
        &p,
        &cfg,
        &DoseRegime::Constant(C_MAX, 0.0),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!(traj.y[1][0] < 1.0);
}

#[test]
fn diameter_of_sphere() {
    let v = 4.0 / 3.0 * core::f64::consts::PI;
    assert!((diameter(v) - 2.0).abs() < 1e-12);
}

#[test]
fn cancer_dataset_shape_and_determinism() {
    let cfg = CancerSimConfig {
        n_patients: 30,
        n_cycles: 2,
        seed: 7,
        ..CancerSimConfig::default()
    };
    let a = generate_cancer_dataset(&cfg).unwrap();
    let b = generate_cancer_dataset(&cfg).unwrap();
    assert_eq!(a, b);
    a.validate().unwrap();
    assert_eq!(a.split(Split::Train).len(), 10);
    assert_eq!(a.split(Split::Val).len(), 10);
    assert_eq!(a.split(Split::Test).len(), 10);
    assert_eq!(a.units[0].times.len(), 61);
    // Units are independent of dataset size and order.
    let (_, u5) = simulate_cancer_unit(&cfg, 5, &DoseRegime::Policy).unwrap();
    assert_eq!(&u5, a.unit(5).unwrap());
    // Doses only change at cycle boundaries.
    let u = &a.units[3];
    for k in 1..u.len() {
        if (u.times[k] % 30.0) != 0.0 {
            assert_eq!(u.a[k], u.a[k - 1]);
        }
    }
}

#[test]
fn noise_off_keeps_same_patient() {
    let cfg = CancerSimConfig {
        n_cycles: 1,
        ..CancerSimConfig::default()
    };
    let quiet = CancerSimConfig {
        noise: false,
        ..cfg.clone()
    };
    let (p1, _) = simulate_cancer_unit(&cfg, 4, &DoseRegime::Policy).unwrap();
    let (p2, _) = simulate_cancer_unit(&quiet, 4, &DoseRegime::Policy).unwrap();
    assert_eq!((p1.rho, p1.v0, p1.w0), (p2.rho, p2.v0, p2.w0));
}

#[test]
fn config_checks() {
    let cfg = CancerSimConfig {
        gamma: 9.0,
        ..CancerSimConfig::default()
    };
    assert!(cfg.validate().is_err());
    let cfg = CancerSimConfig {
        dt: 0.7,
        ..CancerSimConfig::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn rff_degenerate_and_bounded() {
    let f = RffFunction::from_parts(vec![vec![0.0]], vec![0.0], vec![1.0]).unwrap();
    assert!((f.eval(&[3.7]) - 2f64.sqrt()).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = rff_function(&mut rng, 3, 20, 1.0, Kernel::Matern32).unwrap();
    let bound = g.bound();
    for _ in 0..1000 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-20.0..20.0)).collect();
        assert!(g.eval(&x).abs() <= bound + 1e-12);
    }
    let h1 = rff_function(&mut ChaCha8Rng::seed_from_u64(9), 1, 20, 2.0, Kernel::Rbf).unwrap();
    let h2 = rff_function(&mut ChaCha8Rng::seed_from_u64(9), 1, 20, 2.0, Kernel::Rbf).unwrap();
    for k in 0..50 {
        let x = [k as f64 * 0.37];
        assert_eq!(h1.eval(&x), h2.eval(&x));
    }
}

#[test]
fn bspline_partition_of_unity() {
    // Integer-shifted cardinal cubic B-splines sum to one.
    for k in 0..40 {
        let u = k as f64 * 0.1;
        let total: f64 = (-4..=4).map(|s| cubic_at(u - s as f64)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

fn cubic_at(u: f64) -> f64 {
    semi::cubic_bspline(u)
}

fn semi_config(n: usize) -> SemiSynthConfig {
    SemiSynthConfig {
        n_patients: n,
        seed: 11,
        ..SemiSynthConfig::default()
    }
}

#[test]
fn pure_noise_outcomes() {
    let cfg = SemiSynthConfig {
        alpha_s: 0.0,
        alpha_g: 0.0,
        alpha_phi: 0.0,
        beta: 0.0,
        ..semi_config(685)
    };
    let ds = generate_semi_synthetic(&cfg).unwrap();
    let vals: Vec<f64> = ds.units.iter().flat_map(|u| u.y.iter().flatten().copied()).collect();
    assert!(vals.len() >= 100_000);
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
    assert!((0.0045..=0.0055).contains(&sd), "{sd}");
}

#[test]
fn zero_effect_leaves_outcomes_untreated() {
    let cfg = SemiSynthConfig {
        beta: 0.0,
        ..semi_config(5)
    };
    let ds = generate_semi_synthetic(&cfg).unwrap();
    for u in &ds.units {
        assert_eq!(Some(&u.y), u.latents.as_ref());
    }
}

#[test]
fn unconfounded_treatment_frequency() {
    let cfg = SemiSynthConfig {
        gamma_a: vec![0.0, 0.0],
        gamma_eps: vec![0.0, 0.0],
        ..semi_config(685)
    };
    let ds = generate_semi_synthetic(&cfg).unwrap();
    let draws: Vec<f64> = ds.units.iter().flat_map(|u| u.a.iter().flatten().copied()).collect();
    assert!(draws.len() >= 100_000);
    let freq = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!((freq - 0.1192).abs() < 0.01, "{freq}");
}

#[test]
fn semi_dataset_is_deterministic_and_split() {
    let a = generate_semi_synthetic(&semi_config(9)).unwrap();
    let b = generate_semi_synthetic(&semi_config(9)).unwrap();
    assert_eq!(a, b);
    a.validate().unwrap();
    let mut ids: Vec<u64> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .flat_map(|s| a.split(*s).into_iter().map(|u| u.unit_id))
        .collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..9).collect::<Vec<u64>>());
    assert_eq!(a.units[0].times.len(), 73);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn effects_are_bounded(seed in any::<u64>(), beta in 0.1f64..3.0) {
        let cfg = SemiSynthConfig { beta, seed, ..semi_config(2) };
        let ds = generate_semi_synthetic(&cfg).unwrap();
        let cap = beta * (1..=cfg.w[0] + 1).map(|u| 1.0 / (u * u) as f64).sum::<f64>();
        for u in &ds.units {
            for (y, y0) in u.y.iter().zip(u.latents.as_ref().unwrap()) {
                for (a, b) in y.iter().zip(y0) {
                    let e = a - b;
                    prop_assert!(e >= -1e-12 && e <= cap + 1e-12);
                }
            }
        }
    }
}
