use proptest::prelude::*;
use rodlab::closure::rhs_matrix;
use rodlab::gaussian::{drift_k, fisher_information, prec_rhs, relative_entropy, GaussianState};
use rodlab::sde::{noise_factor_b, project_tangent};
use rodlab::types::{conf_from_q, make_shear_kappa, polar_from_q, q_from_conf, q_from_polar, ModelParams, PolarQ, QState};
use rodlab::Mat;

fn trace_one_q() -> impl Strategy<Value = QState<f64>> {
    (0.0..0.49f64, 0.0..std::f64::consts::TAU).prop_map(|(r, th)| QState::new(r * th.cos(), r * th.sin()))
}

fn spd() -> impl Strategy<Value = Mat<f64>> {
    (0.1..2.0f64, 0.1..2.0f64, 0.0..std::f64::consts::PI).prop_map(|(l1, l2, th)| {
        let (c, s) = (th.cos(), th.sin());
        Mat::from_rows([
            [l1 * c * c + l2 * s * s, (l1 - l2) * c * s],
            [(l1 - l2) * c * s, l1 * s * s + l2 * c * c],
        ])
    })
}

fn shear() -> ModelParams<f64> {
    ModelParams::shear(0.6, 0.5, 2.0).unwrap()
}

proptest! {
    #[test]
    fn q_round_trip_is_exact(q in trace_one_q()) {
        let m = conf_from_q(&q).unwrap();
        let back = conf_from_q(&q_from_conf(&m).unwrap()).unwrap();
        prop_assert!((back.matrix() - m.matrix()).max_abs() <= 1e-15);
    }

    #[test]
    fn polar_round_trip(r in 1e-3..0.999f64, phi in 0.0..std::f64::consts::TAU) {
        let q = q_from_polar(&PolarQ { r, phi });
        let p = polar_from_q(&q);
        prop_assert!((p.r - r).abs() <= 1e-13);
        let dphi = (p.phi - phi).abs();
        prop_assert!(dphi.min(std::f64::consts::TAU - dphi) <= 1e-13);
        prop_assert!((0.0..std::f64::consts::TAU).contains(&p.phi));
    }

    #[test]
    fn closure_rhs_is_traceless_and_symmetric(q in trace_one_q(), pe in 0.0..3.0f64, n in 0.0..4.0f64) {
        let p = ModelParams::shear(pe, 0.5, n).unwrap();
        let k = make_shear_kappa(&p).unwrap();
        let r = rhs_matrix(&q.to_matrix(), &p, &k).unwrap();
        prop_assert!(r.trace().abs() <= 1e-13);
        prop_assert!(r.asymmetry() <= 1e-14);
    }

    #[test]
    fn tangent_projection_kills_the_axis(x in prop::array::uniform3(-2.0..2.0f64)) {
        prop_assume!(x.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let mut out = [0.0; 3];
        project_tangent(&x, &x, &mut out);
        prop_assert!(out.iter().all(|v| v.abs() <= 1e-14));
    }

    #[test]
    fn precision_rhs_is_symmetric(p in spd(), q in trace_one_q()) {
        let params = shear();
        let k = drift_k(&q.to_matrix(), &params, &make_shear_kappa(&params).unwrap());
        let r = prec_rhs(&p, &k);
        prop_assert!(r.asymmetry() <= 1e-14 * r.max_abs().max(1.0));
    }

    #[test]
    fn entropy_and_fisher_nonnegative_and_lsi(m1 in spd(), m2 in spd()) {
        let (g1, g2) = (GaussianState::new(m1.clone()).unwrap(), GaussianState::new(m2.clone()).unwrap());
        let h = relative_entropy(&g1, &g2).unwrap();
        let i = fisher_information(&g1, &g2).unwrap();
        prop_assert!(h >= -1e-15 && i >= -1e-15);
        let mu = 1.0 / m2.max_eigenvalue_sym();
        prop_assert!(h <= i / (2.0 * mu) + 1e-12);
    }

    #[test]
    fn variant_b_noise_factor(m in spd()) {
        let r = noise_factor_b(&m).unwrap();
        let target = &Mat::identity(2) - &m.scale(1.0 / m.trace());
        prop_assert!((&r.matmul(&r.transpose()) - &target).frob_norm() <= 1e-12);
        prop_assert!(r.asymmetry() <= 1e-15);
    }
}

#[test]
fn shear_decomposes_into_rotation_and_strain() {
    let p = shear();
    let k = make_shear_kappa(&p).unwrap();
    let omega = k.matrix().skew_part();
    let strain = k.matrix().sym_part();
    assert!((omega[(0, 1)] - p.pe / 2.0).abs() < 1e-15);
    assert!(strain.trace().abs() < 1e-15);
    assert!((strain[(0, 1)] - p.pe * p.a / 2.0).abs() < 1e-15);
}
