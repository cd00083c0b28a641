use rodlab::chaos::{coupled_initial_conditions, coupled_trial, law_series, limit_process_step, ChaosConfig};
use rodlab::fit::{welch_test, Summary};
use rodlab::noise::NoiseSource;
use rodlab::sde::{self, empirical_moments, step_replica, SdeConfig};
use rodlab::suite::with_threads;
use rodlab::types::{make_shear_kappa, Ensemble, FlowMatrix, ModelParams, ModelTag};
use rodlab::Mat;

fn chaos_params() -> ModelParams<f64> {
    ModelParams::shear(0.5, 0.5, 0.0).unwrap()
}

#[test]
fn limit_process_without_flow_is_ornstein_uhlenbeck() {
    let p = ModelParams::shear(0.0, 0.5, 0.0).unwrap();
    let k = FlowMatrix::zero(2);
    let n = 50_000;
    let h = 1e-3;
    let mut ens = Ensemble::gaussian(&Mat::scaled_identity(2, 0.2), n, ModelTag::MeanFieldA, 3).unwrap();
    let src = NoiseSource::new(3);
    let mut db = vec![0.0; 2 * n];
    for s in 0..3000 {
        src.increments(s, h, 2, &mut db);
        limit_process_step(&mut ens, &p, &k, h, &db).unwrap();
    }
    let (m, _): (Mat<f64>, f64) = empirical_moments(ens.positions(), 2);
    // Var(Y₁²) = 2σ⁴ and Var(Y₁Y₂) = σ⁴ for σ² = 1/2.
    let se_diag = (2.0 * 0.25 / n as f64).sqrt();
    let se_off = (0.25 / n as f64).sqrt();
    assert!((m[(0, 0)] - 0.5).abs() <= 3.0 * se_diag, "{m:?}");
    assert!((m[(1, 1)] - 0.5).abs() <= 3.0 * se_diag, "{m:?}");
    assert!(m[(0, 1)].abs() <= 3.0 * se_off, "{m:?}");
}

#[test]
fn limit_process_keeps_mean_square_length() {
    let p = chaos_params();
    let k = make_shear_kappa(&p).unwrap();
    let n = 100_000;
    let h = 1e-3;
    let mut ens = Ensemble::gaussian(&Mat::scaled_identity(2, 0.5), n, ModelTag::MeanFieldA, 4).unwrap();
    let src = NoiseSource::new(4);
    let mut db = vec![0.0; 2 * n];
    let mut worst = 0.0f64;
    for s in 0..1000 {
        src.increments(s, h, 2, &mut db);
        limit_process_step(&mut ens, &p, &k, h, &db).unwrap();
        if s % 100 == 99 {
            let norms: Vec<f64> = ens.positions().chunks(2).map(|y| y[0] * y[0] + y[1] * y[1]).collect();
            let sm = Summary::of(&norms);
            worst = worst.max((sm.mean - 1.0).abs() / sm.stderr());
        }
    }
    assert!(worst <= 3.0, "{worst} standard errors");
}

#[test]
fn initial_rescaling_error_bound() {
    let replicas = 64;
    let resamples = 1000;
    let src = NoiseSource::new(11);
    let sd = 0.5f64.sqrt();
    let mut lhs = Vec::with_capacity(resamples);
    let mut norms = Vec::new();
    let mut y = vec![0.0; 2 * replicas];
    for r in 0..resamples {
        src.standard(r as u64, 2, &mut y);
        y.iter_mut().for_each(|v| *v *= sd);
        let x = coupled_initial_conditions(&y, 2, 1.0).unwrap();
        lhs.push((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2));
        norms.extend(y.chunks(2).map(|v| v[0] * v[0] + v[1] * v[1]));
    }
    let l = Summary::of(&lhs);
    let bound = Summary::of(&norms).variance / replicas as f64;
    assert!(l.mean <= bound + 3.0 * l.stderr(), "{} vs {bound}", l.mean);
}

#[test]
fn coupling_error_is_exchangeable() {
    let p = chaos_params();
    let k = make_shear_kappa(&p).unwrap();
    let config = ChaosConfig {
        replica_counts: vec![16, 64, 256],
        trials: 300,
        y_oracle_particles: 20_000,
        seed: 99,
        ..ChaosConfig::default()
    };
    let law = law_series(&config, &p, &k).unwrap();
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for trial in 0..config.trials as u64 {
        let (a, b) = coupled_trial(16, trial, &config, &p, &k, &law).unwrap();
        first.push(a);
        second.push(b);
    }
    let w = welch_test(&first, &second).unwrap();
    assert!(w.p_value > 0.05, "p = {}", w.p_value);
}

#[test]
fn rotational_diffusion_relaxes_to_isotropy() {
    let p = ModelParams::shear(0.0, 0.5, 0.0).unwrap();
    let k = make_shear_kappa(&p).unwrap();
    let n = 100_000;
    let mut init: Ensemble<f64> =
        Ensemble::gaussian(&Mat::from_rows([[0.9, 0.0], [0.0, 0.1]]), n, ModelTag::Original, 5).unwrap();
    init.project_each_to_sphere(1.0).unwrap();
    let mut cfg = SdeConfig::new(2e-3, 3.0, n, 5);
    cfg.stride = 500;
    let (series, _) = sde::run(&init, &p, &k, &cfg).unwrap();
    let m: &Mat<f64> = series.m_emp.last().unwrap();
    // cos²φ and cosφ·sinφ both have variance 1/8 under the uniform law.
    let se = (0.125 / n as f64).sqrt();
    assert!((m[(0, 0)] - 0.5).abs() <= 3.0 * se, "{m:?}");
    assert!(m[(0, 1)].abs() <= 3.0 * se, "{m:?}");
    assert!((series.m_emp[0][(0, 0)] - 0.5) > 0.2);
}

#[test]
fn quadrupling_particles_halves_spread() {
    let p = ModelParams::shear(0.6, 0.5, 2.0).unwrap();
    let k = make_shear_kappa(&p).unwrap();
    let m0 = Mat::from_rows([[0.8, 0.1], [0.1, 0.2]]);
    let spread = |n: usize| {
        let runs: Vec<Vec<f64>> = (0..100u64)
            .map(|seed| {
                let mut init = Ensemble::gaussian(&m0, n, ModelTag::MeanFieldA, 1000 + seed).unwrap();
                init.normalize_mean_square(1.0).unwrap();
                let mut cfg = SdeConfig::new(1e-3, 0.5, n, 1000 + seed);
                cfg.stride = 50;
                let (s, _) = sde::run(&init, &p, &k, &cfg).unwrap();
                s.m_emp.iter().flat_map(|m| [m[(0, 0)], m[(0, 1)]]).collect()
            })
            .collect();
        let cols = runs[0].len();
        let mean_var = (0..cols)
            .map(|c| Summary::of(&runs.iter().map(|r| r[c]).collect::<Vec<_>>()).variance)
            .sum::<f64>()
            / cols as f64;
        mean_var.sqrt()
    };
    // With 100 runs per size the variance ratio is F(99, 99) distributed,
    // whose 99.9% band puts the spread ratio inside [1.5, 2.6].
    let ratio = spread(250) / spread(1000);
    assert!((1.5..=2.6).contains(&ratio), "{ratio}");
}

#[test]
fn replica_step_commutes_with_relabelling() {
    let p = ModelParams::shear(0.6, 0.5, 2.0).unwrap();
    let k = make_shear_kappa(&p).unwrap();
    let replicas = 8;
    let mut ens = Ensemble::gaussian(&Mat::scaled_identity(2, 0.5), replicas, ModelTag::Replica, 6).unwrap();
    ens.normalize_mean_square(1.0).unwrap();
    let mut x = ens.positions().to_vec();
    let mut db = vec![0.0; 2 * replicas];
    NoiseSource::new(6).increments(0, 1e-3, 2, &mut db);
    let perm = [3usize, 0, 7, 1, 6, 2, 5, 4];
    let shuffle = |v: &[f64]| perm.iter().flat_map(|&i| [v[2 * i], v[2 * i + 1]]).collect::<Vec<f64>>();
    let mut y = shuffle(&x);
    let db_perm = shuffle(&db);
    step_replica(&mut x, 2, &p, &k, 1e-3, &db).unwrap();
    step_replica(&mut y, 2, &p, &k, 1e-3, &db_perm).unwrap();
    let expected = shuffle(&x);
    for (a, b) in y.iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-14);
    }
}

#[test]
fn moment_series_ignores_thread_count() {
    let p = ModelParams::shear(0.6, 0.5, 2.0).unwrap();
    let k = make_shear_kappa(&p).unwrap();
    let mut init = Ensemble::gaussian(&Mat::scaled_identity(2, 0.5), 9_000, ModelTag::MeanFieldB, 8).unwrap();
    init.normalize_mean_square(1.0).unwrap();
    let cfg = SdeConfig::new(1e-3, 0.3, 9_000, 8);
    let bytes = |threads| {
        with_threads(threads, || sde::run(&init, &p, &k, &cfg).unwrap().0.to_csv().to_bytes().unwrap()).unwrap()
    };
    assert_eq!(bytes(1), bytes(3));
}
