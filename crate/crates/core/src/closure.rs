//! The closed conformation-tensor ODE in matrix, traceless and polar form.

use crate::error::{Result, RodError};
use crate::io::{fmt_num, CsvTable};
use crate::linalg::Mat;
use crate::ode::{solve, OdeConfig};
use crate::scalar::Scalar;
use crate::types::{ConfTensor, Ensemble, FlowMatrix, ModelParams, PolarQ, QState};

/// Right-hand side of the closed ODE with the trace fixed at `L²`:
///
/// `κM + Mκᵀ − (2/L²)(κ:M)M + 4N(2M² − (2/L²)(M:M)M) + 2Id − (2d/L²)M`.
pub fn rhs_matrix<T: Scalar>(
    m: &Mat<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
) -> Result<Mat<T>> {
    if !(m.trace() > T::zero()) {
        return Err(RodError::Degenerate(format!(
            "closure needs a positive trace (got {})",
            m.trace()
        )));
    }
    Ok(rhs_matrix_unchecked(m, params, kappa.matrix()))
}

pub(crate) fn rhs_matrix_unchecked<T: Scalar>(m: &Mat<T>, params: &ModelParams<T>, k: &Mat<T>) -> Mat<T> {
    let d = m.dim();
    let two = T::lit(2.0);
    let inv_l2 = T::one() / params.length_sq();
    let four_n = T::lit(4.0) * params.n_conc;
    let k_m = k.frob(m);
    let m_m = m.frob(m);
    let km = k.matmul(m);
    let m2 = m.matmul(m);
    let mut out = Mat::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let mkt = (0..d).map(|l| m[(i, l)] * k[(j, l)]).sum::<T>();
            let mij = m[(i, j)];
            let mut v = km[(i, j)] + mkt - two * inv_l2 * k_m * mij
                + four_n * (two * m2[(i, j)] - two * inv_l2 * m_m * mij)
                - two * T::from_usize_lossy(d) * inv_l2 * mij;
            if i == j {
                v += two;
            }
            out[(i, j)] = v;
        }
    }
    out
}

/// Planar shear in traceless coordinates; returns `(dx/dt, dy/dt)`.
pub fn rhs_xy<T: Scalar>(q: &QState<T>, params: &ModelParams<T>) -> (T, T) {
    let (x, y) = (q.x, q.y);
    let (pe, a, n) = (params.pe, params.a, params.n_conc);
    let four = T::lit(4.0);
    let two = T::lit(2.0);
    let g = T::one() - n + four * n * (x * x + y * y);
    (
        -four * x * g + pe * y * (T::one() - two * a * x),
        -four * y * g + pe * (-x + a / two - two * a * y * y),
    )
}

/// Planar shear in polar coordinates; returns `(dφ/dt, dr/dt)`.
pub fn rhs_polar<T: Scalar>(r: T, phi: T, params: &ModelParams<T>) -> Result<(T, T)> {
    if !(r > T::zero()) {
        return Err(RodError::Singularity(format!("polar field undefined at r = {r}")));
    }
    Ok(rhs_polar_unchecked(r, phi, params))
}

#[inline]
fn rhs_polar_unchecked<T: Scalar>(r: T, phi: T, params: &ModelParams<T>) -> (T, T) {
    let (pe, a, n) = (params.pe, params.a, params.n_conc);
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let r2 = four * r * r;
    (
        -pe * (T::one() - a / (two * r) * phi.cos()),
        -four * r * (n * (r2 - T::one()) + T::one()) + a * pe / two * (T::one() - r2) * phi.sin(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<Mat<T>>,
    pub params: ModelParams<T>,
    /// `max_t |tr M(t) − tr M(0)|`.
    pub max_trace_drift: T,
    /// `max_t ‖M(t) − M(t)ᵀ‖_∞`.
    pub max_asymmetry: T,
    pub min_eigenvalue: T,
}

impl<T: Scalar> Trajectory<T> {
    /// Set when some recorded state lost positive semidefiniteness.
    pub fn psd_warning(&self) -> bool {
        self.min_eigenvalue < T::zero()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &Mat<T> {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn to_csv(&self) -> CsvTable {
        let d = self.params.dim;
        let mut header = vec!["t".to_string()];
        for i in 0..d {
            for j in i..d {
                header.push(format!("m{}{}", i + 1, j + 1));
            }
        }
        let mut table = CsvTable::new(header);
        table.comment(params_comment(&self.params));
        for (t, m) in self.times.iter().zip(&self.states) {
            let mut row = vec![fmt_num(t.as_f64())];
            row.extend(m.upper_triangle().iter().map(|v| fmt_num(v.as_f64())));
            table.push(row);
        }
        table
    }
}

pub(crate) fn params_comment<T: Scalar>(p: &ModelParams<T>) -> String {
    format!(
        "params pe={} a={} n_conc={} length={} dim={}",
        fmt_num(p.pe.as_f64()),
        fmt_num(p.a.as_f64()),
        fmt_num(p.n_conc.as_f64()),
        fmt_num(p.length.as_f64()),
        p.dim
    )
}

/// Integrates the matrix ODE from `m0`. No projection back onto the
/// trace/symmetry manifold is applied; drift is measured instead.
pub fn integrate<T: Scalar>(
    m0: &ConfTensor<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    config: &OdeConfig<T>,
) -> Result<Trajectory<T>> {
    params.validate()?;
    let d = m0.dim();
    if kappa.dim() != d || params.dim != d {
        return Err(RodError::UnsupportedDimension {
            expected: params.dim,
            got: d,
        });
    }
    let tr0 = m0.trace();
    let k = kappa.matrix().clone();
    let mut rhs = |_t: T, y: &[T], dy: &mut [T]| {
        let m = Mat::from_row_major(d, y.to_vec());
        dy.copy_from_slice(rhs_matrix_unchecked(&m, params, &k).as_slice());
    };
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        params: *params,
        max_trace_drift: T::zero(),
        max_asymmetry: T::zero(),
        min_eigenvalue: T::infinity(),
    };
    solve(&mut rhs, m0.matrix().as_slice(), config, |t, y| {
        let m = Mat::from_row_major(d, y.to_vec());
        if !(m.trace() > T::zero()) {
            return Err(RodError::IntegrationFailure {
                t: t.as_f64(),
                reason: "trace left the positive half-line".into(),
                last_state: y.iter().map(|v| v.as_f64()).collect(),
            });
        }
        traj.max_trace_drift = traj.max_trace_drift.max((m.trace() - tr0).abs());
        traj.max_asymmetry = traj.max_asymmetry.max(m.asymmetry());
        traj.min_eigenvalue = traj.min_eigenvalue.min(m.min_eigenvalue_sym());
        traj.times.push(t);
        traj.states.push(m);
        Ok(())
    })?;
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq)]
pub struct XyTrajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<QState<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolarTrajectory<T> {
    pub times: Vec<T>,
    /// `φ` is kept continuous (not wrapped) along the path.
    pub states: Vec<PolarQ<T>>,
}

pub fn integrate_xy<T: Scalar>(
    q0: &QState<T>,
    params: &ModelParams<T>,
    config: &OdeConfig<T>,
) -> Result<XyTrajectory<T>> {
    params.validate()?;
    let mut rhs = |_t: T, y: &[T], dy: &mut [T]| {
        let (dx, dyy) = rhs_xy(&QState::new(y[0], y[1]), params);
        dy[0] = dx;
        dy[1] = dyy;
    };
    let mut out = XyTrajectory {
        times: Vec::new(),
        states: Vec::new(),
    };
    solve(&mut rhs, &[q0.x, q0.y], config, |t, y| {
        out.times.push(t);
        out.states.push(QState::new(y[0], y[1]));
        Ok(())
    })?;
    Ok(out)
}

pub fn integrate_polar<T: Scalar>(
    p0: &PolarQ<T>,
    params: &ModelParams<T>,
    config: &OdeConfig<T>,
) -> Result<PolarTrajectory<T>> {
    params.validate()?;
    rhs_polar(p0.r, p0.phi, params)?;
    let mut rhs = |_t: T, y: &[T], dy: &mut [T]| {
        if y[1] > T::zero() {
            let (dphi, dr) = rhs_polar_unchecked(y[1], y[0], params);
            dy[0] = dphi;
            dy[1] = dr;
        } else {
            dy.fill(T::nan());
        }
    };
    let mut out = PolarTrajectory {
        times: Vec::new(),
        states: Vec::new(),
    };
    solve(&mut rhs, &[p0.phi, p0.r], config, |t, y| {
        out.times.push(t);
        out.states.push(PolarQ { r: y[1], phi: y[0] });
        Ok(())
    })?;
    Ok(out)
}

/// `‖Ê((K:X⊗X) X⊗X) − (K:M̂) M̂‖_F` over the ensemble's empirical law.
pub fn doi_closure_gap<T: Scalar>(ensemble: &Ensemble<T>, k: &Mat<T>) -> T {
    let d = ensemble.dim();
    let n = T::from_usize_lossy(ensemble.n());
    let mut fourth = Mat::zeros(d);
    let mut second = Mat::zeros(d);
    for p in ensemble.positions().chunks(d) {
        let xx = Mat::outer(p, p);
        let w = k.frob(&xx);
        fourth += &xx.scale(w);
        second += &xx;
    }
    let m_hat = second.scale(T::one() / n);
    let e4 = fourth.scale(T::one() / n);
    (&e4 - &m_hat.scale(k.frob(&m_hat))).frob_norm()
}

/// Symmetrizes `m` and rescales it to trace `length²`.
pub fn renormalize<T: Scalar>(m: &Mat<T>, length: T) -> Result<Mat<T>> {
    let s = m.sym_part();
    let tr = s.trace();
    if !(tr > T::zero()) {
        return Err(RodError::Degenerate(format!("cannot rescale trace {tr}")));
    }
    Ok(s.scale(length * length / tr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{make_shear_kappa, polar_from_q, q_from_matrix, q_from_polar};

    fn cycle_params() -> ModelParams<f64> {
        ModelParams::<f64>::shear(0.6, 0.5, 2.0).unwrap()
    }

    #[test]
    fn isotropic_state_is_stationary_without_flow() {
        let p = ModelParams::<f64>::shear(0.0, 0.5, 2.0).unwrap();
        let k = make_shear_kappa(&p).unwrap();
        let out = rhs_matrix(&Mat::scaled_identity(2, 0.5), &p, &k).unwrap();
        assert!(out.max_abs() < 1e-16);
    }

    #[test]
    fn hand_evaluated_entry() {
        let p = ModelParams::<f64>::shear(0.0, 0.5, 2.0).unwrap();
        let k = make_shear_kappa(&p).unwrap();
        let m = Mat::from_rows([[0.6, 0.0], [0.0, 0.4]]);
        let out = rhs_matrix(&m, &p, &k).unwrap();
        assert!((out[(0, 0)] - 0.368).abs() < 1e-14);
        let (dx, dy) = rhs_xy(&QState::new(0.1, 0.0), &p);
        assert!((dx - 0.368).abs() < 1e-15 && dy == 0.0);
    }

    #[test]
    fn rhs_rejects_nonpositive_trace() {
        let p = cycle_params();
        let k = make_shear_kappa(&p).unwrap();
        assert!(matches!(
            rhs_matrix(&Mat::zeros(2), &p, &k),
            Err(RodError::Degenerate(_))
        ));
    }

    #[test]
    fn origin_velocity() {
        let p = ModelParams::<f64>::shear(1.0, 0.5, 3.0).unwrap();
        assert_eq!(rhs_xy(&QState::new(0.0, 0.0), &p), (0.0, 0.25));
    }

    #[test]
    fn polar_examples() {
        let p = ModelParams::<f64>::shear(0.0, 0.5, 2.0).unwrap();
        let r = (1.0f64 / 8.0).sqrt();
        for k in 0..8 {
            let (dphi, dr) = rhs_polar(r, k as f64 * 0.7, &p).unwrap();
            assert_eq!(dphi, 0.0);
            assert!(dr.abs() < 1e-15);
        }
        assert!(matches!(rhs_polar(0.0, 1.0, &p), Err(RodError::Singularity(_))));
    }

    #[test]
    fn isotropic_start_stays_put() {
        let p = ModelParams::<f64>::shear(0.0, 0.5, 2.0).unwrap();
        let k = make_shear_kappa(&p).unwrap();
        let traj = integrate(&ConfTensor::isotropic(2, 1.0), &p, &k, &OdeConfig::rk4(1e-2, 5.0)).unwrap();
        assert!(traj.states.iter().all(|m| (m - &Mat::scaled_identity(2, 0.5)).max_abs() < 1e-15));
    }

    #[test]
    fn radial_relaxation_without_flow_is_monotone() {
        let p = ModelParams::<f64>::shear(0.0, 0.5, 2.0).unwrap();
        let k = make_shear_kappa(&p).unwrap();
        let m0 = ConfTensor::new(QState::new(0.2, 0.0).to_matrix(), 1.0).unwrap();
        let traj = integrate(&m0, &p, &k, &OdeConfig::rk4(1e-3, 20.0).with_stride(100)).unwrap();
        let radii: Vec<f64> = traj
            .states
            .iter()
            .map(|m| q_from_matrix(m).unwrap().radius())
            .collect();
        assert!(radii.windows(2).all(|w| w[1] >= w[0]));
        let target = (1.0f64 / 8.0).sqrt();
        assert!((radii.last().unwrap() - target).abs() < 1e-9);
        assert!(!traj.psd_warning());
    }

    #[test]
    fn polar_and_xy_agree_on_a_cycle_start() {
        let p = cycle_params();
        let cfg = OdeConfig::rk4(1e-3, 5.0).with_stride(50);
        let q0 = QState::new(0.3, 0.05);
        let xy = integrate_xy(&q0, &p, &cfg).unwrap();
        let pol = integrate_polar(&polar_from_q(&q0), &p, &cfg).unwrap();
        for (a, b) in xy.states.iter().zip(&pol.states) {
            let b = q_from_polar(b);
            assert!((a.x - b.x).abs() < 1e-10 && (a.y - b.y).abs() < 1e-10);
        }
    }

    #[test]
    fn closure_gap_vanishes_for_point_mass() {
        let e = Ensemble::new(vec![0.6, 0.8, 0.6, 0.8, 0.6, 0.8], 2, crate::types::ModelTag::Original, 0)
            .unwrap();
        assert!(doi_closure_gap(&e, &FlowMatrix::<f64>::strain()) < 1e-16);
        let e = Ensemble::new(vec![0.3, -0.2], 2, crate::types::ModelTag::Original, 0).unwrap();
        assert!(doi_closure_gap(&e, &FlowMatrix::<f64>::omega()) < 1e-16);
    }

    #[test]
    fn renormalize_restores_trace() {
        let m: Mat<f64> = Mat::from_rows([[0.7, 0.11], [0.09, 0.31]]);
        let r = renormalize(&m, 1.0).unwrap();
        assert!((r.trace() - 1.0).abs() < 1e-15);
        assert_eq!(r.asymmetry(), 0.0);
    }

    #[test]
    fn csv_has_params_and_upper_triangle() {
        let p = cycle_params();
        let k = make_shear_kappa(&p).unwrap();
        let traj = integrate(&ConfTensor::isotropic(2, 1.0), &p, &k, &OdeConfig::rk4(0.1, 0.2)).unwrap();
        let s = String::from_utf8(traj.to_csv().to_bytes().unwrap()).unwrap();
        let mut lines = s.lines();
        assert!(lines.next().unwrap().starts_with("# params pe="));
        assert_eq!(lines.next().unwrap(), "t,m11,m12,m22");
        assert_eq!(lines.count(), 3);
    }
}
