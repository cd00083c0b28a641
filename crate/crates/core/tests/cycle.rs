use rodlab::cycle::{
    annulus, convergence_rate, divergence, find_cycle, find_cycle_with, poincare_return, CycleOptions, CycleReport,
};
use rodlab::gaussian::{lsi_constant, psi_convergence_experiment};
use rodlab::ode::OdeConfig;
use rodlab::types::{conf_from_q, ModelParams, QState};

fn params() -> ModelParams<f64> {
    ModelParams::shear(0.6, 0.5, 2.0).unwrap()
}

fn cycle() -> CycleReport<f64> {
    let p = params();
    find_cycle(&p, &annulus(&p, 0.05, 0.05).unwrap(), &OdeConfig::rk4(1e-3, 1.0)).unwrap()
}

#[test]
fn weak_shape_return_time_is_rotation_period() {
    let p = ModelParams::shear(0.5, 1e-4, 2.0).unwrap();
    let r = (1.0f64 / 8.0).sqrt();
    let (q1, t) = poincare_return(&QState::new(r, 0.0), &p, &OdeConfig::rk4(1e-3, 1.0)).unwrap();
    let expected = std::f64::consts::TAU / 0.5;
    assert!((t - expected).abs() <= 1e-3, "{t} vs {expected}");
    assert!(q1.y.abs() <= 1e-12);
}

#[test]
fn orbit_stays_in_annulus_with_eigenvalue_bounds() {
    let c = cycle();
    assert!(c.r_min >= c.annulus.r1 && c.r_max <= c.annulus.r2);
    let (lo, hi) = c.eig_bounds;
    assert!(lo >= 0.5 - c.annulus.r2 - 1e-12 && hi <= 0.5 + c.annulus.r2 + 1e-12);
    assert!(c.ln_rho < 0.0 && c.ln_rho_tilde < 0.0);
    assert!(((c.ln_rho_tilde - c.ln_rho).exp() - 1.0).abs() <= 0.05);
}

#[test]
fn fixed_point_iteration_is_monotone() {
    let c = cycle();
    let steps: Vec<f64> = c.iterates.windows(2).map(|w| w[1] - w[0]).collect();
    // The contraction is so strong that later steps are at rounding level.
    let ulp = 4.0 * f64::EPSILON * c.x_star;
    let up = steps.iter().all(|s| *s >= -ulp);
    let down = steps.iter().all(|s| *s <= ulp);
    assert!(up || down, "{:?}", c.iterates);
}

#[test]
fn cycle_is_unique_across_starts() {
    let p = params();
    let ann = annulus(&p, 0.05, 0.05).unwrap();
    let cfg = OdeConfig::rk4(1e-3, 1.0);
    let xs: Vec<f64> = (0..5)
        .map(|i| {
            let x0 = ann.r1 + (ann.r2 - ann.r1) * (0.1 + 0.2 * i as f64);
            let opts = CycleOptions {
                x0: Some(x0),
                ..CycleOptions::default()
            };
            find_cycle_with(&p, &ann, &cfg, &opts).unwrap().x_star
        })
        .collect();
    for x in &xs {
        assert!((x - xs[0]).abs() <= 1e-9, "{xs:?}");
    }
}

#[test]
fn divergence_negative_across_the_annulus() {
    let p = params();
    let ann = annulus(&p, 0.05, 0.05).unwrap();
    assert!(ann.dulac_negative(&p));
    for i in 0..=40 {
        let r = ann.r1 + (ann.r2 - ann.r1) * i as f64 / 40.0;
        for j in 0..72 {
            let th = std::f64::consts::TAU * j as f64 / 72.0;
            assert!(divergence(&QState::new(r * th.cos(), r * th.sin()), &p) < 0.0);
        }
    }
}

#[test]
fn orbit_error_decays_at_floquet_rate() {
    let c = cycle();
    let p = params();
    let cfg = OdeConfig::rk4(1e-3, 15.0);
    let rate = |q: QState<f64>| convergence_rate(&conf_from_q(&q).unwrap(), &c, &p, &cfg).unwrap().value();
    let r1 = rate(QState::new(0.3, 0.0));
    let r2 = rate(QState::new(-0.3, 0.2));
    assert!((r1 / c.lambda - 1.0).abs() <= 0.15, "{r1} vs {}", c.lambda);
    assert!((r1 / r2 - 1.0).abs() <= 0.20, "{r1} vs {r2}");
}

#[test]
fn start_on_orbit_is_degenerate() {
    let c = cycle();
    let p = params();
    let m0 = conf_from_q(&QState::new(c.x_star, 0.0)).unwrap();
    let cfg = OdeConfig::rk4(1e-3, 5.0);
    assert!(convergence_rate(&m0, &c, &p, &cfg).unwrap().is_degenerate());
    assert!(psi_convergence_experiment(&m0, &c, &p, &cfg).unwrap().rate.is_degenerate());
}

#[test]
fn log_sobolev_constant_bound() {
    let c = cycle();
    let mu = lsi_constant(&c);
    assert!(mu >= 1.0 / (0.5 + c.annulus.r2));
    assert!(mu >= 1.0889);
}

#[test]
fn entropy_to_periodic_solution_vanishes() {
    let c = cycle();
    let p = params();
    let q0 = QState::new(0.2, -0.25);
    let res = psi_convergence_experiment(&conf_from_q(&q0).unwrap(), &c, &p, &OdeConfig::rk4(1e-3, 15.0)).unwrap();
    let n = res.entropy.len();
    let tail = &res.entropy[n / 2..];
    assert!(tail.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    assert!(*tail.last().unwrap() < 1e-12);
    let nu = res.rate.value();
    assert!((0.5..=2.0).contains(&(nu / (2.0 * c.lambda))), "{nu}");
}
