//! Coupled simulation of the replica system and its McKean–Vlasov limit.
//!
//! For each replica count `I` and trial, `I` samples `Y₀ⁱ ~ N(0, L²/d·Id)`
//! are rescaled into a replica initial state, and the replica system and
//! `I` copies of the limit process `Y` are driven by the same Brownian
//! increments. The law term of `Y` comes from an auxiliary ensemble that
//! is simulated once and frozen as a per-step time series.

use crate::closure;
use crate::error::{Result, RodError};
use crate::fit::{linear_fit, LinearFit, Summary};
use crate::io::{fmt_num, CsvTable};
use crate::linalg::Mat;
use crate::noise::{NoiseSource, CHUNK_PARTICLES, INIT_STEP};
use crate::ode::{solve, OdeConfig};
use crate::scalar::Scalar;
use crate::sde::{advance_clock, check_noise, empirical_moments, step_replica};
use crate::types::{ConfTensor, Ensemble, FlowMatrix, ModelParams};
use rayon::prelude::*;

const ORACLE_DOMAIN: u64 = 0x0AC1_E5EE_D000_0001;

/// How the law terms `E(Y⊗Y)(t)` of the limit process are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LawSource {
    /// Empirical second moment of an auxiliary particle ensemble.
    Particles,
    /// Second-moment ODE of the limit process, integrated with rk4 on the
    /// simulation grid. `Y` is linear given its law, so this is exact up to
    /// time discretization.
    MomentOde,
}

impl std::str::FromStr for LawSource {
    type Err = RodError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "particles" => Ok(LawSource::Particles),
            "moment-ode" => Ok(LawSource::MomentOde),
            other => Err(RodError::InvalidState(format!("unknown law source `{other}`"))),
        }
    }
}

impl LawSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            LawSource::Particles => "particles",
            LawSource::MomentOde => "moment-ode",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChaosConfig {
    pub replica_counts: Vec<usize>,
    pub trials: usize,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    pub y_oracle_particles: usize,
    /// Keep the Maier–Saupe drift `4N M` in both systems. Off by default:
    /// the experiment then runs with `N = 0` whatever the parameters say.
    pub maier_saupe: bool,
    pub law: LawSource,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        ChaosConfig {
            replica_counts: vec![16, 64, 256, 1024],
            trials: 200,
            horizon: 1.0,
            step: 1e-3,
            seed: 20_240_601,
            y_oracle_particles: 100_000,
            maier_saupe: false,
            law: LawSource::Particles,
        }
    }
}

impl ChaosConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replica_counts.len() < 3 {
            return Err(RodError::Fit(format!(
                "a log-log slope needs at least 3 replica counts (got {})",
                self.replica_counts.len()
            )));
        }
        if self.replica_counts[0] < 1 || self.replica_counts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(RodError::param(
                "replica_counts",
                "strictly increasing, each ≥ 1",
                format!("{:?}", self.replica_counts),
            ));
        }
        if self.trials == 0 {
            return Err(RodError::param("trials", "trials ≥ 1", 0));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(RodError::param("horizon", "horizon > 0", self.horizon));
        }
        if !(self.step > 0.0) || !(self.step <= self.horizon) {
            return Err(RodError::param("step", "0 < step ≤ horizon", self.step));
        }
        if self.law == LawSource::Particles && self.y_oracle_particles < 2 {
            return Err(RodError::param("y_oracle_particles", "y_oracle_particles ≥ 2", self.y_oracle_particles));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.step).round() as usize).max(1)
    }
}

/// Drift matrix of the limit process for a given law `M = E(Y⊗Y)`:
/// `κ + 4N M − ((κ:M + 4N M:M + d)/L²)·Id`.
pub fn limit_drift<T: Scalar>(law: &Mat<T>, params: &ModelParams<T>, kappa: &FlowMatrix<T>) -> Mat<T> {
    let k = kappa.matrix();
    let four_n = T::lit(4.0) * params.n_conc;
    let c = (k.frob(law) + four_n * law.frob(law) + params.dim_t()) / params.length_sq();
    let mut a = if params.n_conc == T::zero() {
        k.clone()
    } else {
        k + &law.scale(four_n)
    };
    for i in 0..a.dim() {
        a[(i, i)] -= c;
    }
    a
}

/// `y ← y + h·A y + √2·Δb` for every particle.
pub fn step_with_drift<T: Scalar>(positions: &mut [T], dim: usize, a: &Mat<T>, h: T, noise: &[T]) {
    let sqrt2 = T::SQRT_2();
    positions
        .par_chunks_mut(dim * CHUNK_PARTICLES)
        .zip(noise.par_chunks(dim * CHUNK_PARTICLES))
        .for_each(|(block, db)| {
            let mut ay = vec![T::zero(); dim];
            for (y, b) in block.chunks_mut(dim).zip(db.chunks(dim)) {
                a.mul_vec_into(y, &mut ay);
                for i in 0..dim {
                    y[i] += h * ay[i] + sqrt2 * b[i];
                }
            }
        });
}

/// Euler step of the limit process with the law replaced by the
/// ensemble's own empirical second moment. `params.n_conc = 0` gives the
/// linear model.
pub fn limit_process_step<T: Scalar>(
    ens: &mut Ensemble<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    h: T,
    noise: &[T],
) -> Result<()> {
    check_noise(ens, noise)?;
    let (m_hat, _) = empirical_moments(ens.positions(), ens.dim());
    let a = limit_drift(&m_hat, params, kappa);
    let d = ens.dim();
    step_with_drift(ens.positions_mut(), d, &a, h, noise);
    advance_clock(ens, h);
    Ok(())
}

/// `Xⁱ = L·Yⁱ·((1/I) Σ ‖Yʲ‖²)^{−1/2}`.
pub fn coupled_initial_conditions<T: Scalar>(y0: &[T], dim: usize, length: T) -> Result<Vec<T>> {
    if dim == 0 || y0.is_empty() || y0.len() % dim != 0 {
        return Err(RodError::InvalidState(format!(
            "{} values cannot form samples of dimension {dim}",
            y0.len()
        )));
    }
    let n = T::from_usize_lossy(y0.len() / dim);
    let msq = y0.iter().map(|&v| v * v).sum::<T>() / n;
    if !(msq > T::zero()) {
        return Err(RodError::Degenerate("all initial samples are zero".into()));
    }
    let s = length / msq.sqrt();
    Ok(y0.iter().map(|&v| v * s).collect())
}

/// Per-step law of the limit process plus a bound on the squared error
/// its approximation adds to the coupling error.
#[derive(Clone, Debug)]
pub struct LawSeries<T> {
    pub moments: Vec<Mat<T>>,
    pub floor: f64,
}

fn initial_covariance<T: Scalar>(params: &ModelParams<T>) -> Mat<T> {
    Mat::scaled_identity(params.dim, params.length_sq() / params.dim_t())
}

/// Law terms at every step `0..=n_steps`.
pub fn law_series<T: Scalar>(
    config: &ChaosConfig,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
) -> Result<LawSeries<T>> {
    let n_steps = config.n_steps();
    let h = T::lit(config.step);
    match config.law {
        LawSource::MomentOde => {
            let m0 = ConfTensor::isotropic(params.dim, params.length);
            let cfg = OdeConfig::rk4(h, h * T::from_usize_lossy(n_steps));
            let mut moments = Vec::with_capacity(n_steps + 1);
            solve(
                &mut |_, y: &[T], out: &mut [T]| {
                    let m = Mat::from_row_major(params.dim, y.to_vec());
                    let r = closure::rhs_matrix_unchecked(&m, params, kappa.matrix());
                    out.copy_from_slice(r.as_slice());
                },
                m0.matrix().as_slice(),
                &cfg,
                |_, y| {
                    moments.push(Mat::from_row_major(params.dim, y.to_vec()));
                    Ok(())
                },
            )?;
            Ok(LawSeries { moments, floor: 0.0 })
        }
        LawSource::Particles => {
            let mut ens = Ensemble::gaussian(
                &initial_covariance(params),
                config.y_oracle_particles,
                crate::types::ModelTag::MeanFieldA,
                config.seed ^ ORACLE_DOMAIN,
            )?;
            let src = NoiseSource::new(config.seed).derive(ORACLE_DOMAIN);
            let mut db = vec![T::zero(); ens.positions().len()];
            let mut moments = Vec::with_capacity(n_steps + 1);
            let mut max_var = 0.0f64;
            for k in 0..=n_steps {
                let (m_hat, _) = empirical_moments(ens.positions(), ens.dim());
                max_var = max_var.max(law_scalar_variance(&ens, &m_hat, params, kappa));
                moments.push(m_hat);
                if k == n_steps {
                    break;
                }
                src.increments(k as u64, h, ens.dim(), &mut db);
                let a = limit_drift(&moments[k], params, kappa);
                let d = ens.dim();
                step_with_drift(ens.positions_mut(), d, &a, h, &db);
                advance_clock(&mut ens, h);
            }
            // Sampling error δc ~ σ/√n in the scalar law coefficient moves Y
            // by about T·δc·‖Y‖/L², and E‖Y‖² = L².
            let n = config.y_oracle_particles as f64;
            let floor = config.horizon.powi(2) * max_var / (params.length_sq().as_f64() * n);
            Ok(LawSeries { moments, floor })
        }
    }
}

/// Sample variance of `Y·κY + 4N Y·MY` over the ensemble.
fn law_scalar_variance<T: Scalar>(
    ens: &Ensemble<T>,
    m_hat: &Mat<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
) -> f64 {
    let mut g = kappa.matrix().clone();
    if params.n_conc != T::zero() {
        g = &g + &m_hat.scale(T::lit(4.0) * params.n_conc);
    }
    let vals: Vec<f64> = ens
        .positions()
        .chunks(ens.dim())
        .map(|y| g.quad_form(y).as_f64())
        .collect();
    Summary::of(&vals).variance
}

/// Sup-in-time squared gaps `‖X¹ − Y¹‖²` and `‖X² − Y²‖²` of one trial.
pub fn coupled_trial<T: Scalar>(
    replicas: usize,
    trial: u64,
    config: &ChaosConfig,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    law: &LawSeries<T>,
) -> Result<(f64, f64)> {
    let d = params.dim;
    let h = T::lit(config.step);
    let src = NoiseSource::new(config.seed)
        .derive(replicas as u64)
        .derive(trial);
    let std_dev = params.length / params.dim_t().sqrt();
    let mut y = vec![T::zero(); replicas * d];
    src.standard(INIT_STEP, d, &mut y);
    y.iter_mut().for_each(|v| *v *= std_dev);
    let mut x = coupled_initial_conditions(&y, d, params.length)?;
    let mut db = vec![T::zero(); replicas * d];
    let watched = replicas.min(2);
    let mut sup = [0.0f64; 2];
    let track = |x: &[T], y: &[T], sup: &mut [f64; 2]| {
        for (j, s) in sup.iter_mut().enumerate().take(watched) {
            let e: f64 = (0..d)
                .map(|c| (x[j * d + c] - y[j * d + c]).as_f64().powi(2))
                .sum();
            *s = s.max(e);
        }
    };
    track(&x, &y, &mut sup);
    for k in 0..config.n_steps() {
        src.increments(k as u64, h, d, &mut db);
        step_replica(&mut x, d, params, kappa, h, &db)?;
        let a = limit_drift(&law.moments[k], params, kappa);
        step_with_drift(&mut y, d, &a, h, &db);
        track(&x, &y, &mut sup);
    }
    if !sup[0].is_finite() || !sup[1].is_finite() {
        return Err(RodError::Numerical(format!(
            "non-finite coupling error for I = {replicas}, trial {trial}"
        )));
    }
    if watched < 2 {
        sup[1] = f64::NAN;
    }
    Ok((sup[0], sup[1]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChaosResult {
    pub replica_counts: Vec<usize>,
    /// `errors[k][trial]`: sup-in-time squared error of component 1.
    pub errors: Vec<Vec<f64>>,
    /// Same for component 2 (`NaN` when `I = 1`).
    pub errors_second: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub oracle_floor: f64,
    /// Replica counts kept in the fit.
    pub fitted_counts: Vec<usize>,
    pub fit: LinearFit,
}

impl ChaosResult {
    pub fn slope(&self) -> f64 {
        self.fit.slope
    }

    pub fn is_monotone_decreasing(&self) -> bool {
        self.mean.windows(2).all(|w| w[1] < w[0])
    }

    pub fn errors_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["I", "trial", "sup_error_sq"]);
        for (k, &i) in self.replica_counts.iter().enumerate() {
            for (trial, &e) in self.errors[k].iter().enumerate() {
                t.push(vec![i.to_string(), trial.to_string(), fmt_num(e)]);
            }
        }
        t
    }

    pub fn summary_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["I", "mean", "stderr"]);
        for (k, &i) in self.replica_counts.iter().enumerate() {
            t.push(vec![i.to_string(), fmt_num(self.mean[k]), fmt_num(self.stderr[k])]);
        }
        t
    }

    pub fn fit_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["slope", "intercept", "r_squared"]);
        t.push_nums(&[self.fit.slope, self.fit.intercept, self.fit.r_squared]);
        t
    }
}

/// Runs every `(I, trial)` pair and fits `ln(mean error)` against `ln I`.
///
/// Counts whose mean lies within two standard errors of the law-approximation
/// floor are left out of the fit.
pub fn run_chaos_experiment<T: Scalar>(
    config: &ChaosConfig,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
) -> Result<ChaosResult> {
    config.validate()?;
    params.validate()?;
    if kappa.dim() != params.dim {
        return Err(RodError::UnsupportedDimension {
            expected: params.dim,
            got: kappa.dim(),
        });
    }
    let params = if config.maier_saupe {
        *params
    } else {
        params.with_n_conc(T::zero())
    };
    let law = law_series(config, &params, kappa)?;

    let mut errors = Vec::with_capacity(config.replica_counts.len());
    let mut errors_second = Vec::with_capacity(config.replica_counts.len());
    for &i in &config.replica_counts {
        let pairs = (0..config.trials as u64)
            .into_par_iter()
            .map(|trial| coupled_trial(i, trial, config, &params, kappa, &law))
            .collect::<Result<Vec<_>>>()?;
        errors.push(pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        errors_second.push(pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    }

    let summaries: Vec<Summary> = errors.iter().map(|e| Summary::of(e)).collect();
    let mean: Vec<f64> = summaries.iter().map(|s| s.mean).collect();
    let stderr: Vec<f64> = summaries.iter().map(Summary::stderr).collect();
    let mut points = Vec::new();
    let mut fitted_counts = Vec::new();
    for (k, &i) in config.replica_counts.iter().enumerate() {
        if mean[k] - law.floor > 2.0 * stderr[k] && mean[k] > 0.0 {
            points.push(((i as f64).ln(), mean[k].ln()));
            fitted_counts.push(i);
        }
    }
    if points.len() < 3 {
        return Err(RodError::Fit(format!(
            "only {} replica counts rise above the law-approximation floor {:e}",
            points.len(),
            law.floor
        )));
    }
    let fit = linear_fit(&points)?;
    Ok(ChaosResult {
        replica_counts: config.replica_counts.clone(),
        errors,
        errors_second,
        mean,
        stderr,
        oracle_floor: law.floor,
        fitted_counts,
        fit,
    })
}
