use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rodlab::closure::{doi_closure_gap, integrate, rhs_matrix, rhs_polar, rhs_xy};
use rodlab::cycle::divergence;
use rodlab::gaussian::{drift_k, fisher_information, prec_rhs, relative_entropy, GaussianState};
use rodlab::ode::OdeConfig;
use rodlab::types::{conf_from_q, make_shear_kappa, Ensemble, FlowMatrix, ModelParams, ModelTag, QState};
use rodlab::Mat;

fn params() -> ModelParams<f64> {
    ModelParams::shear(0.6, 0.5, 2.0).unwrap()
}

fn random_q(rng: &mut StdRng, r_max: f64) -> QState<f64> {
    let r = r_max * rng.random::<f64>().sqrt();
    let th = rng.random_range(0.0..std::f64::consts::TAU);
    QState::new(r * th.cos(), r * th.sin())
}

fn random_spd(rng: &mut StdRng) -> [[f64; 2]; 2] {
    let (l1, l2) = (rng.random_range(0.2..1.5), rng.random_range(0.2..1.5));
    let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (c, s) = (th.cos(), th.sin());
    [
        [l1 * c * c + l2 * s * s, (l1 - l2) * c * s],
        [(l1 - l2) * c * s, l1 * s * s + l2 * c * c],
    ]
}

fn inv2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

#[test]
fn xy_field_matches_matrix_field() {
    let p = params();
    let k = make_shear_kappa(&p).unwrap();
    let mut rng = StdRng::seed_from_u64(1);
    for _ in 0..100 {
        let q = random_q(&mut rng, 0.49);
        let r = rhs_matrix(&q.to_matrix(), &p, &k).unwrap();
        let (dx, dy) = rhs_xy(&q, &p);
        assert!((r[(0, 0)] - dx).abs() < 1e-13 && (r[(0, 1)] - dy).abs() < 1e-13);
    }
}

#[test]
fn polar_field_matches_chain_rule() {
    let p = params();
    let mut rng = StdRng::seed_from_u64(2);
    for _ in 0..100 {
        let r = rng.random_range(0.27..0.42);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let q = QState::new(r * phi.cos(), r * phi.sin());
        let (dx, dy) = rhs_xy(&q, &p);
        let dr = (q.x * dx + q.y * dy) / r;
        let dphi = (q.x * dy - q.y * dx) / (r * r);
        let (phi_dot, r_dot) = rhs_polar(r, phi, &p).unwrap();
        assert!((phi_dot - dphi).abs() <= 1e-12, "{phi_dot} vs {dphi}");
        assert!((r_dot - dr).abs() <= 1e-12, "{r_dot} vs {dr}");
    }
}

#[test]
fn divergence_matches_central_differences() {
    let p = params();
    let mut rng = StdRng::seed_from_u64(3);
    let e = 1e-5;
    for _ in 0..100 {
        let q = random_q(&mut rng, 0.45);
        let fx = |x: f64| rhs_xy(&QState::new(x, q.y), &p).0;
        let fy = |y: f64| rhs_xy(&QState::new(q.x, y), &p).1;
        let fd = (fx(q.x + e) - fx(q.x - e)) / (2.0 * e) + (fy(q.y + e) - fy(q.y - e)) / (2.0 * e);
        assert!((fd - divergence(&q, &p)).abs() <= 1e-6);
    }
}

#[test]
fn closure_gap_on_circle_matches_direct_sum() {
    let n = 10_000;
    let mut pos = Vec::with_capacity(2 * n);
    for i in 0..n {
        let th = std::f64::consts::TAU * (i as f64 + 0.3) / n as f64;
        pos.extend([th.cos(), th.sin()]);
    }
    let ens = Ensemble::new(pos.clone(), 2, ModelTag::Original, 0).unwrap();
    let strain = Mat::from_rows([[0.0, 0.5], [0.5, 0.0]]);

    let mut m = [[0.0; 2]; 2];
    let mut fourth = [[0.0; 2]; 2];
    for x in pos.chunks(2) {
        let mut kxx = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                kxx += strain[(a, b)] * x[a] * x[b];
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                m[a][b] += x[a] * x[b] / n as f64;
                fourth[a][b] += kxx * x[a] * x[b] / n as f64;
            }
        }
    }
    let mut km = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            km += strain[(a, b)] * m[a][b];
        }
    }
    let mut gap2 = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            gap2 += (fourth[a][b] - km * m[a][b]).powi(2);
        }
    }
    let gap = doi_closure_gap(&ens, &strain);
    assert!((gap - gap2.sqrt()).abs() <= 1e-12, "{gap} vs {}", gap2.sqrt());
    assert!(gap > 0.1);
}

#[test]
fn drift_matrix_reproduces_closure_field() {
    let p = params();
    let k = make_shear_kappa(&p).unwrap();
    let mut rng = StdRng::seed_from_u64(4);
    for _ in 0..100 {
        let m = random_q(&mut rng, 0.49).to_matrix();
        let dk = drift_k(&m, &p, &k);
        let km = dk.matrix().matmul(&m);
        let lhs = &(&Mat::scaled_identity(2, 2.0) - &km) - &km.transpose();
        assert!((&lhs - &rhs_matrix(&m, &p, &k).unwrap()).max_abs() <= 1e-12);
    }
}

#[test]
fn precision_field_matches_differenced_inverse() {
    let p = params();
    let k = make_shear_kappa(&p).unwrap();
    let h = 1e-3;
    let traj = integrate(&conf_from_q(&QState::new(0.3, 0.1)).unwrap(), &p, &k, &OdeConfig::rk4(h, 5.0).with_stride(1))
        .unwrap();
    let inv = |m: &Mat<f64>| inv2([[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]);
    let mut worst = 0.0f64;
    for j in (2..traj.states.len() - 2).step_by(50) {
        let s: Vec<_> = (j - 2..=j + 2).map(|i| inv(&traj.states[i])).collect();
        let m = &traj.states[j];
        let pred = prec_rhs(&Mat::from_rows(s[2]), &drift_k(m, &p, &k));
        for r in 0..2 {
            for c in 0..2 {
                let fd = (s[0][r][c] - 8.0 * s[1][r][c] + 8.0 * s[3][r][c] - s[4][r][c]) / (12.0 * h);
                worst = worst.max((fd - pred[(r, c)]).abs());
            }
        }
    }
    assert!(worst <= 1e-6, "{worst}");
}

fn log_density(m: [[f64; 2]; 2], x: f64, y: f64) -> f64 {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let p = inv2(m);
    let q = p[0][0] * x * x + 2.0 * p[0][1] * x * y + p[1][1] * y * y;
    -0.5 * q - (std::f64::consts::TAU * det.sqrt()).ln()
}

/// Composite Simpson rule on a square of half-width `8σ`.
fn simpson_2d(half: f64, n: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
    let hstep = 2.0 * half / n as f64;
    let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
    let mut total = 0.0;
    for i in 0..=n {
        let x = -half + i as f64 * hstep;
        for j in 0..=n {
            total += w(i) * w(j) * f(x, -half + j as f64 * hstep);
        }
    }
    total * hstep * hstep / 9.0
}

#[test]
fn entropy_and_fisher_match_quadrature() {
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..10 {
        let (m1, m2) = (random_spd(&mut rng), random_spd(&mut rng));
        let half = 8.0 * (m1[0][0].max(m1[1][1]) + m1[0][1].abs()).sqrt();
        let (p1, p2) = (inv2(m1), inv2(m2));
        let h_quad = simpson_2d(half, 600, |x, y| {
            let l1 = log_density(m1, x, y);
            l1.exp() * (l1 - log_density(m2, x, y))
        });
        let i_quad = simpson_2d(half, 600, |x, y| {
            let gx = (p1[0][0] - p2[0][0]) * x + (p1[0][1] - p2[0][1]) * y;
            let gy = (p1[1][0] - p2[1][0]) * x + (p1[1][1] - p2[1][1]) * y;
            log_density(m1, x, y).exp() * (gx * gx + gy * gy)
        });
        let g1 = GaussianState::new(Mat::from_rows(m1)).unwrap();
        let g2 = GaussianState::new(Mat::from_rows(m2)).unwrap();
        let h = relative_entropy(&g1, &g2).unwrap();
        let i = fisher_information(&g1, &g2).unwrap();
        assert!((h - h_quad).abs() <= 1e-6, "H {h} vs {h_quad}");
        assert!((i - i_quad).abs() <= 1e-6, "I {i} vs {i_quad}");
    }
}

#[test]
fn general_dimension_closure_keeps_trace() {
    let p = ModelParams::new(0.0, 0.0, 1.0, 1.0, 3).unwrap();
    let mut kappa: Mat<f64> = Mat::zeros(3);
    kappa[(0, 1)] = 0.7;
    kappa[(2, 0)] = -0.2;
    let m = Mat::from_rows([[0.5, 0.1, 0.0], [0.1, 0.3, 0.05], [0.0, 0.05, 0.2]]);
    let r = rhs_matrix(&m, &p, &FlowMatrix::new(kappa)).unwrap();
    assert!(r.trace().abs() < 1e-14);
    assert!(r.asymmetry() < 1e-15);
}
