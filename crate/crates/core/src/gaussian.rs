//! Gaussian solutions of the linear Fokker–Planck equation.
//!
//! For centered Gaussians `ψ_M` the Fokker–Planck flow, relative entropy
//! and Fisher information all reduce to matrix computations in `M` and
//! `P = M⁻¹`.

use crate::closure::{rhs_matrix_unchecked, Trajectory};
use crate::cycle::{align_to_cycle, fit_decay, CycleReport, RateEstimate};
use crate::error::{Result, RodError};
use crate::io::CsvTable;
use crate::linalg::Mat;
use crate::ode::{solve, OdeConfig};
use crate::scalar::Scalar;
use crate::types::{q_from_conf, ConfTensor, FlowMatrix, ModelParams};

/// Drift coefficient `K` of the linear equation `∂ₜψ = div(Kxψ) + Δψ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftMatrixK<T>(Mat<T>);

impl<T: Scalar> DriftMatrixK<T> {
    pub fn matrix(&self) -> &Mat<T> {
        &self.0
    }
}

/// `K = −κ + (κ:M)Id + 4N(−M + (M:M)Id) + 2Id`.
pub fn drift_k<T: Scalar>(m: &Mat<T>, params: &ModelParams<T>, kappa: &FlowMatrix<T>) -> DriftMatrixK<T> {
    let d = m.dim();
    let k = kappa.matrix();
    let four_n = T::lit(4.0) * params.n_conc;
    let diag = k.frob(m) + four_n * m.frob(m) + T::lit(2.0);
    let mut out = Mat::zeros(d);
    for i in 0..d {
        for j in 0..d {
            out[(i, j)] = -k[(i, j)] - four_n * m[(i, j)];
        }
        out[(i, i)] += diag;
    }
    DriftMatrixK(out)
}

/// `PK + KᵀP − 2P²`, the evolution of the precision matrix.
pub fn prec_rhs<T: Scalar>(p: &Mat<T>, k: &DriftMatrixK<T>) -> Mat<T> {
    let k = k.matrix();
    let pk = p.matmul(k);
    let ktp = pk.transpose();
    let p2 = p.matmul(p);
    let mut out = &pk + &ktp;
    out -= &p2.scale(T::lit(2.0));
    out
}

/// Centered Gaussian with covariance `cov` and precision `prec`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState<T> {
    pub cov: Mat<T>,
    pub prec: Mat<T>,
    chol: Mat<T>,
}

impl<T: Scalar> GaussianState<T> {
    pub fn new(cov: Mat<T>) -> Result<Self> {
        if cov.asymmetry() > T::lit(1e-10) {
            return Err(RodError::Domain("covariance is not symmetric".into()));
        }
        let chol = cov.cholesky()?;
        let prec = cov.inverse()?.sym_part();
        Ok(GaussianState { cov, prec, chol })
    }

    pub fn from_conf(m: &ConfTensor<T>) -> Result<Self> {
        Self::new(m.matrix().clone())
    }

    pub fn from_precision(prec: Mat<T>) -> Result<Self> {
        prec.cholesky()?;
        let cov = prec.inverse()?.sym_part();
        let chol = cov.cholesky()?;
        Ok(GaussianState { cov, prec, chol })
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    /// `√det P / (2π)^{d/2}`.
    pub fn normalization(&self) -> T {
        let d = T::from_usize_lossy(self.dim());
        self.prec.det().sqrt() / T::TAU().powf(d * T::lit(0.5))
    }

    pub fn density(&self, x: &[T]) -> T {
        self.normalization() * (-T::lit(0.5) * self.prec.quad_form(x)).exp()
    }

    /// Lower Cholesky factor of the covariance.
    pub fn chol(&self) -> &Mat<T> {
        &self.chol
    }
}

fn same_dim<T: Scalar>(g1: &GaussianState<T>, g2: &GaussianState<T>) -> Result<()> {
    if g1.dim() != g2.dim() {
        return Err(RodError::UnsupportedDimension {
            expected: g1.dim(),
            got: g2.dim(),
        });
    }
    Ok(())
}

/// `H(ψ₁|ψ₂) = ½[tr(M₂⁻¹M₁) − d + ln(det M₂/det M₁)]`.
///
/// Evaluated as `½ Σ (uᵢ − ln(1 + uᵢ))` with `uᵢ` the eigenvalues of
/// `L⁻¹(M₁ − M₂)L⁻ᵀ`, `M₂ = LLᵀ`, which keeps full relative accuracy when
/// the two covariances are close.
pub fn relative_entropy<T: Scalar>(g1: &GaussianState<T>, g2: &GaussianState<T>) -> Result<T> {
    same_dim(g1, g2)?;
    let l_inv = g2.chol.inverse()?;
    let diff = &g1.cov - &g2.cov;
    let s = l_inv.matmul(&diff).matmul(&l_inv.transpose());
    let eig = s.sym_eigen();
    let mut h = T::zero();
    for &u in &eig.values {
        if !(u > -T::one()) {
            return Err(RodError::Domain("covariance is not positive definite".into()));
        }
        h += u - u.ln_1p();
    }
    Ok((h * T::lit(0.5)).max(T::zero()))
}

/// `I(ψ₁|ψ₂) = tr[(P₂ − P₁) M₁ (P₂ − P₁)]`.
pub fn fisher_information<T: Scalar>(g1: &GaussianState<T>, g2: &GaussianState<T>) -> Result<T> {
    same_dim(g1, g2)?;
    let dp = &g2.prec - &g1.prec;
    Ok(dp.matmul(&g1.cov).matmul(&dp).trace().max(T::zero()))
}

/// Entropy and Fisher information between two Gaussian solutions that share
/// one drift `K(t)`, with the dissipation residual `|dH/dt + I|`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropySeries<T> {
    pub times: Vec<T>,
    pub entropy: Vec<T>,
    pub fisher: Vec<T>,
    /// NaN at the two samples on each end, where the stencil does not fit.
    pub residual: Vec<T>,
}

impl<T: Scalar> EntropySeries<T> {
    pub fn max_residual(&self) -> T {
        self.residual
            .iter()
            .filter(|r| !r.is_nan())
            .fold(T::zero(), |a, &b| a.max(b))
    }

    /// Largest single-step increase of `H` (zero if nonincreasing).
    pub fn max_increase(&self) -> T {
        self.entropy
            .windows(2)
            .fold(T::zero(), |a, w| a.max(w[1] - w[0]))
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(["t", "H", "I", "residual"]);
        for k in 0..self.times.len() {
            table.push_nums(&[
                self.times[k].as_f64(),
                self.entropy[k].as_f64(),
                self.fisher[k].as_f64(),
                self.residual[k].as_f64(),
            ]);
        }
        table
    }
}

/// Fourth-order central difference of a uniformly sampled series; NaN where
/// the five-point stencil does not fit.
pub fn central_derivative<T: Scalar>(values: &[T], dt: T) -> Vec<T> {
    let n = values.len();
    let mut out = vec![T::nan(); n];
    let twelve = T::lit(12.0) * dt;
    let eight = T::lit(8.0);
    for k in 2..n.saturating_sub(2) {
        out[k] = (values[k - 2] - eight * values[k - 1] + eight * values[k + 1] - values[k + 2]) / twelve;
    }
    out
}

/// Evolves `M₁` by the closure ODE and both precisions `P₁ = M₁(0)⁻¹`,
/// `P₂ = M₂(0)⁻¹` by `P' = PK + KᵀP − 2P²` with `K = K(M₁(t))`.
///
/// Needs a fixed-step config; every `stride`-th step is recorded and the
/// derivative of `H` is taken on the recorded grid.
pub fn entropy_dissipation_check<T: Scalar>(
    m0_1: &ConfTensor<T>,
    m0_2: &ConfTensor<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    config: &OdeConfig<T>,
) -> Result<EntropySeries<T>> {
    if config.method != crate::ode::OdeMethod::Rk4 {
        return Err(RodError::InvalidState(
            "entropy dissipation needs a uniform grid (rk4)".into(),
        ));
    }
    let d = m0_1.dim();
    let dd = d * d;
    let p1 = GaussianState::from_conf(m0_1)?.prec;
    let p2 = GaussianState::from_conf(m0_2)?.prec;
    let mut y0 = m0_1.matrix().as_slice().to_vec();
    y0.extend_from_slice(p1.as_slice());
    y0.extend_from_slice(p2.as_slice());
    let kmat = kappa.matrix().clone();
    let mut rhs = |_t: T, y: &[T], dy: &mut [T]| {
        let m = Mat::from_row_major(d, y[..dd].to_vec());
        let k = drift_k(&m, params, kappa);
        dy[..dd].copy_from_slice(rhs_matrix_unchecked(&m, params, &kmat).as_slice());
        let p1 = Mat::from_row_major(d, y[dd..2 * dd].to_vec());
        dy[dd..2 * dd].copy_from_slice(prec_rhs(&p1, &k).as_slice());
        let p2 = Mat::from_row_major(d, y[2 * dd..].to_vec());
        dy[2 * dd..].copy_from_slice(prec_rhs(&p2, &k).as_slice());
    };
    let mut times = Vec::new();
    let mut entropy = Vec::new();
    let mut fisher = Vec::new();
    solve(&mut rhs, &y0, config, |t, y| {
        let lost = |_| RodError::IntegrationFailure {
            t: t.as_f64(),
            reason: "precision matrix lost positive definiteness".into(),
            last_state: y.iter().map(|v| v.as_f64()).collect(),
        };
        let g1 = GaussianState::from_precision(Mat::from_row_major(d, y[dd..2 * dd].to_vec()).sym_part())
            .map_err(lost)?;
        let g2 = GaussianState::from_precision(Mat::from_row_major(d, y[2 * dd..].to_vec()).sym_part())
            .map_err(lost)?;
        times.push(t);
        entropy.push(relative_entropy(&g1, &g2)?);
        fisher.push(fisher_information(&g1, &g2)?);
        Ok(())
    })?;
    let dt = config.t_end / T::from_usize_lossy(config.n_steps()) * T::from_usize_lossy(config.stride);
    let dh = central_derivative(&entropy, dt);
    let residual = dh.iter().zip(&fisher).map(|(&a, &b)| (a + b).abs()).collect();
    Ok(EntropySeries {
        times,
        entropy,
        fisher,
        residual,
    })
}

/// Residuals of the Gaussian-solution identities along a closure
/// trajectory recorded on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityResiduals<T> {
    pub times: Vec<T>,
    /// `‖∂ₜP − (PK + KᵀP − 2P²)‖_F` with `∂ₜP` by finite differences.
    pub precision: Vec<T>,
    /// `|tr(P⁻¹∂ₜP)/2 − tr(K − P)|`.
    pub trace: Vec<T>,
}

impl<T: Scalar> IdentityResiduals<T> {
    pub fn max_precision(&self) -> T {
        self.precision.iter().fold(T::zero(), |a, &b| a.max(b))
    }
    pub fn max_trace(&self) -> T {
        self.trace.iter().fold(T::zero(), |a, &b| a.max(b))
    }
}

pub fn gaussian_identity_residuals<T: Scalar>(
    traj: &Trajectory<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
) -> Result<IdentityResiduals<T>> {
    let n = traj.len();
    if n < 5 {
        return Err(RodError::InvalidState("need at least five samples".into()));
    }
    let dt = traj.times[1] - traj.times[0];
    let precs: Vec<Mat<T>> = traj
        .states
        .iter()
        .map(|m| m.inverse())
        .collect::<Result<_>>()?;
    let d = traj.states[0].dim();
    let mut out = IdentityResiduals {
        times: Vec::new(),
        precision: Vec::new(),
        trace: Vec::new(),
    };
    let twelve = T::lit(12.0) * dt;
    let eight = T::lit(8.0);
    for k in 2..n - 2 {
        let mut dp = Mat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                dp[(i, j)] = (precs[k - 2][(i, j)] - eight * precs[k - 1][(i, j)]
                    + eight * precs[k + 1][(i, j)]
                    - precs[k + 2][(i, j)])
                    / twelve;
            }
        }
        let kk = drift_k(&traj.states[k], params, kappa);
        let expected = prec_rhs(&precs[k], &kk);
        out.times.push(traj.times[k]);
        out.precision.push((&dp - &expected).frob_norm());
        let lhs = traj.states[k].matmul(&dp).trace() * T::lit(0.5);
        let rhs = (kk.matrix() - &precs[k]).trace();
        out.trace.push((lhs - rhs).abs());
    }
    Ok(out)
}

/// `μ = min_t 1/λ_max(M_per(t))` over the sampled orbit.
pub fn lsi_constant<T: Scalar>(cycle: &CycleReport<T>) -> T {
    cycle
        .orbit
        .iter()
        .map(|q| T::one() / q.to_matrix().max_eigenvalue_sym())
        .fold(T::infinity(), T::min)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsiConvergence<T> {
    pub times: Vec<T>,
    pub entropy: Vec<T>,
    pub rate: RateEstimate<T>,
}

impl<T: Scalar> PsiConvergence<T> {
    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(["t", "H"]);
        for (t, h) in self.times.iter().zip(&self.entropy) {
            table.push_nums(&[t.as_f64(), h.as_f64()]);
        }
        table
    }
}

/// Entropy window for the decay fit of `H(ψ_M | ψ_Mper)`.
pub const ENTROPY_FIT_UPPER: f64 = 1e-4;
pub const ENTROPY_FIT_FLOOR: f64 = 1e-16;

/// Relative entropy of the Gaussian solution from `m0` with respect to the
/// periodic Gaussian at the same asymptotic phase, and its decay rate.
pub fn psi_convergence_experiment<T: Scalar>(
    m0: &ConfTensor<T>,
    cycle: &CycleReport<T>,
    params: &ModelParams<T>,
    config: &OdeConfig<T>,
) -> Result<PsiConvergence<T>> {
    let q0 = q_from_conf(m0)?;
    let pair = align_to_cycle(&q0, cycle, params, config.step, config.t_end)?;
    let mut entropy = Vec::with_capacity(pair.times.len());
    for (a, b) in pair.states.iter().zip(&pair.reference) {
        let ga = GaussianState::new(a.to_matrix())?;
        let gb = GaussianState::new(b.to_matrix())?;
        entropy.push(relative_entropy(&ga, &gb)?);
    }
    let rate = fit_decay(
        &pair.times,
        &entropy,
        T::lit(ENTROPY_FIT_UPPER),
        T::lit(ENTROPY_FIT_FLOOR),
    )?;
    Ok(PsiConvergence {
        times: pair.times,
        entropy,
        rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::rhs_matrix;
    use crate::types::{make_shear_kappa, QState};

    fn params() -> ModelParams<f64> {
        ModelParams::shear(0.6, 0.5, 2.0).unwrap()
    }

    #[test]
    fn drift_at_isotropic_state() {
        let p = params();
        let k = make_shear_kappa(&p).unwrap();
        let dk = drift_k(&Mat::scaled_identity(2, 0.5), &p, &k);
        let expected = &k.matrix().scale(-1.0) + &Mat::scaled_identity(2, 2.0);
        assert!((dk.matrix() - &expected).max_abs() < 1e-15);
        let still = ModelParams::shear(0.0, 0.5, 2.0).unwrap();
        let dk = drift_k(&Mat::scaled_identity(2, 0.5), &still, &make_shear_kappa(&still).unwrap());
        assert_eq!(dk.matrix(), &Mat::scaled_identity(2, 2.0));
    }

    #[test]
    fn drift_reproduces_closure_rhs() {
        let p = params();
        let k = make_shear_kappa(&p).unwrap();
        for i in 0..20 {
            let th = i as f64 * 0.37;
            let q = QState::new(0.3 * th.cos(), 0.3 * th.sin());
            let m = q.to_matrix();
            let dk = drift_k(&m, &p, &k);
            let km = dk.matrix().matmul(&m);
            let lhs = &(&Mat::scaled_identity(2, 2.0) - &km) - &km.transpose();
            let rhs = rhs_matrix(&m, &p, &k).unwrap();
            assert!((&lhs - &rhs).max_abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_precision_balance() {
        let p = Mat::from_rows([[2.0, 0.3], [0.3, 1.5]]);
        let k = DriftMatrixK(p.clone());
        assert!(prec_rhs(&p, &k).max_abs() < 1e-14);
        let k = DriftMatrixK(Mat::from_rows([[1.0, 2.0], [-0.5, 0.2]]));
        assert_eq!(prec_rhs(&p, &k).asymmetry(), 0.0);
    }

    #[test]
    fn entropy_and_fisher_vanish_for_equal_states() {
        let g = GaussianState::<f64>::new(Mat::from_rows([[0.7, 0.1], [0.1, 0.3]])).unwrap();
        assert_eq!(relative_entropy(&g, &g).unwrap(), 0.0);
        assert_eq!(fisher_information(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn entropy_matches_determinant_formula() {
        let g1 = GaussianState::<f64>::new(Mat::from_rows([[0.7, 0.1], [0.1, 0.3]])).unwrap();
        let g2 = GaussianState::<f64>::new(Mat::from_rows([[0.5, -0.05], [-0.05, 0.5]])).unwrap();
        let direct = 0.5
            * (g2.prec.matmul(&g1.cov).trace() - 2.0 + (g2.cov.det() / g1.cov.det()).ln());
        assert!((relative_entropy(&g1, &g2).unwrap() - direct).abs() < 1e-14);
        assert!(relative_entropy(&g2, &g1).unwrap() > 0.0);
    }

    #[test]
    fn rejects_non_pd() {
        assert!(matches!(
            GaussianState::<f64>::new(Mat::from_rows([[1.0, 0.0], [0.0, -0.1]])),
            Err(RodError::Domain(_))
        ));
    }

    #[test]
    fn density_normalization() {
        let g = GaussianState::<f64>::new(Mat::from_rows([[0.7, 0.1], [0.1, 0.3]])).unwrap();
        let expected = 1.0 / (2.0 * std::f64::consts::PI * g.cov.det().sqrt());
        assert!((g.normalization() - expected).abs() < 1e-14);
        assert!((&g.cov.matmul(&g.prec) - &Mat::identity(2)).max_abs() < 1e-12);
    }

    #[test]
    fn equal_starts_keep_zero_entropy() {
        let p = params();
        let k = make_shear_kappa(&p).unwrap();
        let m = ConfTensor::new(QState::new(0.2, 0.1).to_matrix(), 1.0).unwrap();
        let s = entropy_dissipation_check(&m, &m, &p, &k, &OdeConfig::rk4(1e-3, 0.5)).unwrap();
        assert!(s.entropy.iter().all(|&h| h < 1e-20));
        assert!(s.fisher.iter().all(|&i| i < 1e-20));
    }

    #[test]
    fn derivative_stencil_is_fourth_order() {
        let dt = 0.01;
        let v: Vec<f64> = (0..100).map(|k| (k as f64 * dt).sin()).collect();
        let d = central_derivative(&v, dt);
        assert!(d[0].is_nan() && d[99].is_nan());
        assert!((d[50] - 0.5f64.cos()).abs() < 1e-9);
    }
}
