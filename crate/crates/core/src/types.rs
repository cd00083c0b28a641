//! Parameters, tensors and particle ensembles shared by every module.

use crate::error::{Result, RodError};
use crate::linalg::Mat;
use crate::noise::{NoiseSource, INIT_STEP};
use crate::scalar::Scalar;

/// Tolerance for construction-time invariant checks.
pub const CONSTRUCTION_TOL: f64 = 1e-10;

/// Dimensionless model parameters.
///
/// `n_conc = 0` is admitted: the replica and limit-process experiments run
/// the linear model without the Maier–Saupe interaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub pe: T,
    pub a: T,
    pub n_conc: T,
    pub length: T,
    pub dim: usize,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(pe: T, a: T, n_conc: T, length: T, dim: usize) -> Result<Self> {
        let p = ModelParams {
            pe,
            a,
            n_conc,
            length,
            dim,
        };
        p.validate()?;
        Ok(p)
    }

    /// Planar shear setting with unit rod length.
    pub fn shear(pe: T, a: T, n_conc: T) -> Result<Self> {
        Self::new(pe, a, n_conc, T::one(), 2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pe >= T::zero()) || !self.pe.is_finite() {
            return Err(RodError::param("pe", "pe ≥ 0", self.pe));
        }
        if !self.a.is_finite() {
            return Err(RodError::param("a", "a finite", self.a));
        }
        if !(self.n_conc >= T::zero()) || !self.n_conc.is_finite() {
            return Err(RodError::param("n_conc", "n_conc ≥ 0", self.n_conc));
        }
        if !(self.length > T::zero()) || !self.length.is_finite() {
            return Err(RodError::param("length", "length > 0", self.length));
        }
        if self.dim < 2 {
            return Err(RodError::param("dim", "dim ≥ 2", self.dim));
        }
        Ok(())
    }

    #[inline]
    pub fn length_sq(&self) -> T {
        self.length * self.length
    }

    #[inline]
    pub fn dim_t(&self) -> T {
        T::from_usize_lossy(self.dim)
    }

    pub fn with_pe(mut self, pe: T) -> Self {
        self.pe = pe;
        self
    }

    pub fn with_n_conc(mut self, n_conc: T) -> Self {
        self.n_conc = n_conc;
        self
    }

    /// Structural conditions for the planar limit cycle: `d = 2`, `|a| < 1`
    /// and `N > 1/(1 − a²)`. The Péclet bound depends on the chosen annulus
    /// and is checked by [`crate::cycle::annulus`].
    pub fn check_cycle_regime(&self) -> Result<()> {
        if self.dim != 2 {
            return Err(RodError::UnsupportedDimension {
                expected: 2,
                got: self.dim,
            });
        }
        if !(self.a.abs() < T::one()) {
            return Err(RodError::Regime(format!("|a| < 1 violated (a = {})", self.a)));
        }
        let n_min = T::one() / (T::one() - self.a * self.a);
        if !(self.n_conc > n_min) {
            return Err(RodError::Regime(format!(
                "N > 1/(1 − a²) = {n_min} violated (N = {})",
                self.n_conc
            )));
        }
        Ok(())
    }
}

/// Velocity gradient `κ` of the ambient flow.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMatrix<T>(Mat<T>);

impl<T: Scalar> FlowMatrix<T> {
    pub fn new(kappa: Mat<T>) -> Self {
        FlowMatrix(kappa)
    }

    pub fn zero(dim: usize) -> Self {
        FlowMatrix(Mat::zeros(dim))
    }

    #[inline]
    pub fn matrix(&self) -> &Mat<T> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Rotation generator `Ω = ½[[0, 1], [−1, 0]]`.
    pub fn omega() -> Mat<T> {
        let h = T::lit(0.5);
        Mat::from_rows([[T::zero(), h], [-h, T::zero()]])
    }

    /// Strain generator `D = ½[[0, 1], [1, 0]]`.
    pub fn strain() -> Mat<T> {
        let h = T::lit(0.5);
        Mat::from_rows([[T::zero(), h], [h, T::zero()]])
    }
}

/// Planar shear `κ = (Pe/2)·[[0, a+1], [a−1, 0]]`.
pub fn make_shear_kappa<T: Scalar>(params: &ModelParams<T>) -> Result<FlowMatrix<T>> {
    if params.dim != 2 {
        return Err(RodError::UnsupportedDimension {
            expected: 2,
            got: params.dim,
        });
    }
    let half_pe = params.pe * T::lit(0.5);
    Ok(FlowMatrix(Mat::from_rows([
        [T::zero(), half_pe * (params.a + T::one())],
        [half_pe * (params.a - T::one()), T::zero()],
    ])))
}

/// Conformation tensor `M = E(X ⊗ X)`: symmetric, PSD, trace `L²`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfTensor<T> {
    m: Mat<T>,
}

impl<T: Scalar> ConfTensor<T> {
    /// Validates symmetry, trace `length²` and positive semidefiniteness to
    /// [`CONSTRUCTION_TOL`].
    pub fn new(m: Mat<T>, length: T) -> Result<Self> {
        let tol = T::lit(CONSTRUCTION_TOL);
        if !m.is_finite() {
            return Err(RodError::InvalidState("non-finite tensor entries".into()));
        }
        if m.asymmetry() > tol {
            return Err(RodError::InvalidState(format!(
                "tensor is not symmetric (asymmetry {:e})",
                m.asymmetry()
            )));
        }
        let l2 = length * length;
        if (m.trace() - l2).abs() > tol * l2.max(T::one()) {
            return Err(RodError::InvalidState(format!(
                "trace {} differs from L² = {}",
                m.trace(),
                l2
            )));
        }
        let min_eig = m.min_eigenvalue_sym();
        if min_eig < -tol {
            return Err(RodError::InvalidState(format!(
                "tensor is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(ConfTensor { m })
    }

    /// Isotropic state `(L²/d)·Id`.
    pub fn isotropic(dim: usize, length: T) -> Self {
        ConfTensor {
            m: Mat::scaled_identity(dim, length * length / T::from_usize_lossy(dim)),
        }
    }

    #[inline]
    pub fn matrix(&self) -> &Mat<T> {
        &self.m
    }

    pub fn into_matrix(self) -> Mat<T> {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn trace(&self) -> T {
        self.m.trace()
    }
}

/// Traceless-part coordinates of a planar unit-trace tensor:
/// `M − Id/2 = [[x, y], [y, −x]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QState<T> {
    pub x: T,
    pub y: T,
}

/// Polar form `x = r cos φ`, `y = r sin φ` with `φ ∈ [0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarQ<T> {
    pub r: T,
    pub phi: T,
}

impl<T: Scalar> QState<T> {
    pub fn new(x: T, y: T) -> Self {
        QState { x, y }
    }

    pub fn radius(&self) -> T {
        self.x.hypot(self.y)
    }

    pub fn traceless_matrix(&self) -> Mat<T> {
        Mat::from_rows([[self.x, self.y], [self.y, -self.x]])
    }

    /// `Id/2 + Q` without validation.
    pub fn to_matrix(&self) -> Mat<T> {
        let h = T::lit(0.5);
        Mat::from_rows([[h + self.x, self.y], [self.y, h - self.x]])
    }
}

/// `(x, y) = (m₁₁ − ½, m₁₂)` for a planar unit-trace tensor.
pub fn q_from_conf<T: Scalar>(m: &ConfTensor<T>) -> Result<QState<T>> {
    q_from_matrix(m.matrix())
}

pub fn q_from_matrix<T: Scalar>(m: &Mat<T>) -> Result<QState<T>> {
    if m.dim() != 2 {
        return Err(RodError::UnsupportedDimension {
            expected: 2,
            got: m.dim(),
        });
    }
    if (m.trace() - T::one()).abs() > T::lit(CONSTRUCTION_TOL) {
        return Err(RodError::InvalidState(format!(
            "traceless coordinates need unit trace (got {})",
            m.trace()
        )));
    }
    Ok(QState {
        x: m[(0, 0)] - T::lit(0.5),
        y: m[(0, 1)],
    })
}

/// Inverse of [`q_from_conf`]; fails outside the PSD disc `r ≤ ½`.
pub fn conf_from_q<T: Scalar>(q: &QState<T>) -> Result<ConfTensor<T>> {
    if q.radius() > T::lit(0.5) + T::lit(CONSTRUCTION_TOL) {
        return Err(RodError::InvalidState(format!(
            "r = {} > 1/2 gives a non-PSD tensor",
            q.radius()
        )));
    }
    Ok(ConfTensor {
        m: q.to_matrix(),
    })
}

/// `r = √(x² + y²)`, `φ = atan2(y, x)` shifted into `[0, 2π)`; `φ = 0` at the origin.
pub fn polar_from_q<T: Scalar>(q: &QState<T>) -> PolarQ<T> {
    let r = q.radius();
    if r == T::zero() {
        return PolarQ {
            r,
            phi: T::zero(),
        };
    }
    let mut phi = q.y.atan2(q.x);
    if phi < T::zero() {
        phi += T::TAU();
    }
    if phi >= T::TAU() {
        phi -= T::TAU();
    }
    PolarQ { r, phi }
}

pub fn q_from_polar<T: Scalar>(p: &PolarQ<T>) -> QState<T> {
    QState {
        x: p.r * p.phi.cos(),
        y: p.r * p.phi.sin(),
    }
}

/// Which stochastic model an ensemble evolves under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelTag {
    /// Rods on the sphere `‖X‖ = L`.
    Original,
    /// Mean-field closure with `R = Id`, `λ = d`.
    MeanFieldA,
    /// Mean-field closure with `R Rᵀ = Id − M/tr M`, `λ = d − 1`.
    MeanFieldB,
    /// `I` replicas projected on `(1/I) Σ ‖Xⁱ‖² = L²`.
    Replica,
}

impl ModelTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelTag::Original => "original",
            ModelTag::MeanFieldA => "meanfield-a",
            ModelTag::MeanFieldB => "meanfield-b",
            ModelTag::Replica => "replica",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            ModelTag::Original => 0,
            ModelTag::MeanFieldA => 1,
            ModelTag::MeanFieldB => 2,
            ModelTag::Replica => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ModelTag::Original,
            1 => ModelTag::MeanFieldA,
            2 => ModelTag::MeanFieldB,
            3 => ModelTag::Replica,
            _ => return None,
        })
    }
}

impl std::str::FromStr for ModelTag {
    type Err = RodError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "original" => ModelTag::Original,
            "meanfield-a" => ModelTag::MeanFieldA,
            "meanfield-b" => ModelTag::MeanFieldB,
            "replica" => ModelTag::Replica,
            other => return Err(RodError::InvalidState(format!("unknown model `{other}`"))),
        })
    }
}

/// Particle positions `Xⁱ ∈ ℝᵈ`, stored flat (`n·d` entries).
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble<T> {
    positions: Vec<T>,
    dim: usize,
    pub model: ModelTag,
    pub seed: u64,
    pub step: u64,
    pub time: T,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new(positions: Vec<T>, dim: usize, model: ModelTag, seed: u64) -> Result<Self> {
        if dim == 0 || positions.is_empty() || positions.len() % dim != 0 {
            return Err(RodError::InvalidState(format!(
                "{} coordinates cannot form particles of dimension {dim}",
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(RodError::InvalidState("non-finite particle position".into()));
        }
        Ok(Ensemble {
            positions,
            dim,
            model,
            seed,
            step: 0,
            time: T::zero(),
        })
    }

    /// Draws `n` centered Gaussian particles with covariance `cov`.
    pub fn gaussian(cov: &Mat<T>, n: usize, model: ModelTag, seed: u64) -> Result<Self> {
        let d = cov.dim();
        let l = cov.cholesky()?;
        let mut xi = vec![T::zero(); n * d];
        NoiseSource::new(seed)
            .derive(0x1A17)
            .standard(INIT_STEP, d, &mut xi);
        let mut positions = vec![T::zero(); n * d];
        for (p, z) in positions.chunks_mut(d).zip(xi.chunks(d)) {
            l.mul_vec_into(z, p);
        }
        Self::new(positions, d, model, seed)
    }

    /// Rescales every particle onto the sphere of radius `length`.
    pub fn project_each_to_sphere(&mut self, length: T) -> Result<()> {
        for p in self.positions.chunks_mut(self.dim) {
            let norm = p.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm == T::zero() {
                return Err(RodError::Degenerate("particle at the origin".into()));
            }
            let s = length / norm;
            p.iter_mut().for_each(|v| *v *= s);
        }
        Ok(())
    }

    /// Rescales all particles by one factor so `(1/n) Σ ‖Xⁱ‖² = length²`.
    pub fn normalize_mean_square(&mut self, length: T) -> Result<()> {
        let msq = self.mean_square_norm();
        if msq <= T::zero() {
            return Err(RodError::Degenerate("all particles at the origin".into()));
        }
        let s = length / msq.sqrt();
        self.positions.iter_mut().for_each(|v| *v *= s);
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.positions.len() / self.dim
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    #[inline]
    pub fn positions_mut(&mut self) -> &mut [T] {
        &mut self.positions
    }

    pub fn particle(&self, i: usize) -> &[T] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean_square_norm(&self) -> T {
        crate::sde::empirical_moments(&self.positions, self.dim).1
    }

    pub fn second_moment(&self) -> Mat<T> {
        crate::sde::empirical_moments(&self.positions, self.dim).0
    }

    /// `max_i |‖Xⁱ‖ − L|`.
    pub fn max_sphere_violation(&self, length: T) -> T {
        self.positions
            .chunks(self.dim)
            .map(|p| (p.iter().map(|&v| v * v).sum::<T>().sqrt() - length).abs())
            .fold(T::zero(), T::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn shear_kappa_examples() {
        let k = make_shear_kappa(&ModelParams::shear(0.0, 0.5, 2.0).unwrap()).unwrap();
        assert_eq!(k.matrix().max_abs(), 0.0);
        let k = make_shear_kappa(&ModelParams::shear(2.0, 0.0, 2.0).unwrap()).unwrap();
        assert_eq!(k.matrix(), &Mat::from_rows([[0.0, 1.0], [-1.0, 0.0]]));
        let k = make_shear_kappa(&ModelParams::shear(1.0, 1.0, 2.0).unwrap()).unwrap();
        assert_eq!(k.matrix(), &Mat::from_rows([[0.0, 1.0], [0.0, 0.0]]));
    }

    #[test]
    fn shear_kappa_rejects_3d() {
        let p = ModelParams::new(1.0, 0.5, 2.0, 1.0, 3).unwrap();
        assert!(matches!(
            make_shear_kappa(&p),
            Err(RodError::UnsupportedDimension { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn shear_kappa_is_rotation_plus_strain() {
        let p = ModelParams::shear(0.8, 0.3, 2.0).unwrap();
        let k = make_shear_kappa(&p).unwrap();
        let expected = &FlowMatrix::<f64>::omega().scale(p.pe)
            + &FlowMatrix::<f64>::strain().scale(p.pe * p.a);
        assert!((k.matrix() - &expected).max_abs() < 1e-16);
        assert!((&k.matrix().skew_part() - &FlowMatrix::<f64>::omega().scale(p.pe)).max_abs() < 1e-16);
        assert_eq!(FlowMatrix::<f64>::strain().trace(), 0.0);
    }

    #[test]
    fn q_examples() {
        let iso = ConfTensor::isotropic(2, 1.0f64);
        assert_eq!(q_from_conf(&iso).unwrap(), QState::new(0.0, 0.0));
        let m = ConfTensor::new(Mat::from_rows([[0.75, 0.1], [0.1, 0.25]]), 1.0).unwrap();
        let q = q_from_conf(&m).unwrap();
        assert!(close(q.x, 0.25, 1e-16) && close(q.y, 0.1, 1e-16));
        let m = ConfTensor::new(Mat::from_rows([[1.0, 0.0], [0.0, 0.0]]), 1.0).unwrap();
        assert_eq!(q_from_conf(&m).unwrap(), QState::new(0.5, 0.0));
    }

    #[test]
    fn q_rejects_non_unit_trace() {
        let m = ConfTensor::new(Mat::from_rows([[1.0, 0.0], [0.0, 1.0]]), 2.0f64.sqrt()).unwrap();
        assert!(matches!(q_from_conf(&m), Err(RodError::InvalidState(_))));
    }

    #[test]
    fn polar_examples() {
        let p = polar_from_q(&QState::new(0.0f64, 0.0));
        assert_eq!((p.r, p.phi), (0.0, 0.0));
        let p = polar_from_q(&QState::new(0.25f64, 0.0));
        assert_eq!((p.r, p.phi), (0.25, 0.0));
        let p = polar_from_q(&QState::new(0.0f64, -0.1));
        assert!(close(p.r, 0.1, 1e-17));
        assert!(close(p.phi, 1.5 * std::f64::consts::PI, 1e-15));
    }

    #[test]
    fn conf_tensor_rejects_bad_input() {
        assert!(ConfTensor::new(Mat::from_rows([[0.5, 0.1], [0.0, 0.5]]), 1.0).is_err());
        assert!(ConfTensor::new(Mat::from_rows([[0.6, 0.0], [0.0, 0.6]]), 1.0).is_err());
        assert!(ConfTensor::new(Mat::from_rows([[1.2, 0.0], [0.0, -0.2]]), 1.0).is_err());
    }

    #[test]
    fn params_constraints() {
        assert!(matches!(
            ModelParams::shear(-1.0, 0.5, 2.0),
            Err(RodError::InvalidParam { name: "pe", .. })
        ));
        assert!(ModelParams::new(1.0, 0.5, 2.0, 0.0, 2).is_err());
        assert!(ModelParams::new(1.0, 0.5, 2.0, 1.0, 1).is_err());
        let err = ModelParams::shear(-1.0, 0.5, 2.0).unwrap_err().to_string();
        assert!(err.contains("pe ≥ 0"), "{err}");
    }

    #[test]
    fn cycle_regime_checks() {
        assert!(ModelParams::shear(0.6, 0.5, 2.0).unwrap().check_cycle_regime().is_ok());
        assert!(matches!(
            ModelParams::shear(0.6, 0.5, 1.2).unwrap().check_cycle_regime(),
            Err(RodError::Regime(_))
        ));
        assert!(ModelParams::shear(0.6, 1.0, 5.0).unwrap().check_cycle_regime().is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let p = ModelParams::<f32>::shear(2.0, 0.0, 2.0).unwrap();
        let k = make_shear_kappa(&p).unwrap();
        assert_eq!(k.matrix()[(0, 1)], 1.0f32);
        let q = polar_from_q(&QState::new(0.0f32, -0.1));
        assert!((q.phi - 1.5 * std::f32::consts::PI).abs() < 1e-6);
    }
}
