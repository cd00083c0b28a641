//! Particle integrators for the sphere-constrained, mean-field and replica
//! models.
//!
//! Step functions advance an ensemble in place given explicit Brownian
//! increments, so tests can feed identical paths to different models.
//! Empirical moments use a fixed chunking and a fixed-order pairwise sum,
//! which makes every result independent of the thread count.

use crate::error::{Result, RodError};
use crate::io::{fmt_num, CsvTable};
use crate::linalg::Mat;
use crate::noise::{NoiseSource, CHUNK_PARTICLES};
use crate::scalar::Scalar;
use crate::types::{Ensemble, FlowMatrix, ModelParams, ModelTag};
use rayon::prelude::*;

/// Below this mean-square norm the mean-field drift is undefined.
pub const DEGENERATE_MSQ: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    EulerMaruyamaProject,
    HeunStratonovich,
}

impl std::str::FromStr for Scheme {
    type Err = RodError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler-maruyama-project" => Ok(Scheme::EulerMaruyamaProject),
            "heun-stratonovich" => Ok(Scheme::HeunStratonovich),
            other => Err(RodError::InvalidState(format!("unknown scheme `{other}`"))),
        }
    }
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::EulerMaruyamaProject => "euler-maruyama-project",
            Scheme::HeunStratonovich => "heun-stratonovich",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdeConfig<T> {
    pub step: T,
    pub t_end: T,
    pub n_particles: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Moments are recorded every `stride` steps.
    pub stride: usize,
}

impl<T: Scalar> SdeConfig<T> {
    pub fn new(step: T, t_end: T, n_particles: usize, seed: u64) -> Self {
        SdeConfig {
            step,
            t_end,
            n_particles,
            seed,
            scheme: Scheme::EulerMaruyamaProject,
            stride: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > T::zero()) || !self.step.is_finite() {
            return Err(RodError::param("step", "step > 0", self.step));
        }
        if !(self.t_end > T::zero()) || !self.t_end.is_finite() {
            return Err(RodError::param("t_end", "t_end > 0", self.t_end));
        }
        if self.n_particles == 0 {
            return Err(RodError::param("n_particles", "n_particles ≥ 1", 0));
        }
        if self.stride == 0 {
            return Err(RodError::param("stride", "stride ≥ 1", 0));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_end / self.step).round().to_u64().unwrap_or(0).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentSeries<T> {
    pub times: Vec<T>,
    pub m_emp: Vec<Mat<T>>,
    pub msq_norm: Vec<T>,
    pub n: usize,
    pub seed: u64,
    pub model: ModelTag,
}

impl<T: Scalar> MomentSeries<T> {
    fn new(n: usize, seed: u64, model: ModelTag) -> Self {
        MomentSeries {
            times: Vec::new(),
            m_emp: Vec::new(),
            msq_norm: Vec::new(),
            n,
            seed,
            model,
        }
    }

    fn record(&mut self, ens: &Ensemble<T>) {
        let (m, msq) = empirical_moments(ens.positions(), ens.dim());
        self.times.push(ens.time);
        self.m_emp.push(m);
        self.msq_norm.push(msq);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn to_csv(&self) -> CsvTable {
        let d = self.m_emp.first().map_or(2, Mat::dim);
        let mut header = vec!["t".to_string()];
        for i in 0..d {
            for j in i..d {
                header.push(format!("m{}{}", i + 1, j + 1));
            }
        }
        header.extend(["msq_norm", "n", "seed"].map(String::from));
        let mut table = CsvTable::new(header);
        for k in 0..self.len() {
            let mut row = vec![fmt_num(self.times[k].as_f64())];
            row.extend(self.m_emp[k].upper_triangle().iter().map(|v| fmt_num(v.as_f64())));
            row.push(fmt_num(self.msq_norm[k].as_f64()));
            row.push(self.n.to_string());
            row.push(self.seed.to_string());
            table.push(row);
        }
        table
    }
}

/// Empirical second moment `(1/n) Σ Xⁱ⊗Xⁱ` and mean-square norm.
pub fn empirical_moments<T: Scalar>(positions: &[T], dim: usize) -> (Mat<T>, T) {
    let n = positions.len() / dim;
    let partials: Vec<Vec<T>> = positions
        .par_chunks(dim * CHUNK_PARTICLES)
        .map(|block| {
            let mut acc = vec![T::zero(); dim * dim];
            for p in block.chunks(dim) {
                for i in 0..dim {
                    for j in i..dim {
                        acc[i * dim + j] += p[i] * p[j];
                    }
                }
            }
            acc
        })
        .collect();
    let total = pairwise_sum(&partials, dim * dim);
    let inv_n = T::one() / T::from_usize_lossy(n.max(1));
    let mut m = Mat::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let v = total[i * dim + j] * inv_n;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let msq = m.trace();
    (m, msq)
}

fn pairwise_sum<T: Scalar>(parts: &[Vec<T>], width: usize) -> Vec<T> {
    match parts.len() {
        0 => vec![T::zero(); width],
        1 => parts[0].clone(),
        len => {
            let (a, b) = parts.split_at(len / 2);
            let mut left = pairwise_sum(a, width);
            let right = pairwise_sum(b, width);
            left.iter_mut().zip(&right).for_each(|(l, &r)| *l += r);
            left
        }
    }
}

/// `P(x) = Id − x⊗x/‖x‖²` applied to `v`, written into `out`.
#[inline]
pub fn project_tangent<T: Scalar>(x: &[T], v: &[T], out: &mut [T]) {
    let nx: T = x.iter().map(|&a| a * a).sum();
    let dot: T = x.iter().zip(v).map(|(&a, &b)| a * b).sum();
    let c = dot / nx;
    for i in 0..x.len() {
        out[i] = v[i] - c * x[i];
    }
}

pub(crate) fn check_noise<T: Scalar>(ens: &Ensemble<T>, noise: &[T]) -> Result<()> {
    if noise.len() != ens.positions().len() {
        return Err(RodError::InvalidState(format!(
            "noise holds {} values for {} coordinates",
            noise.len(),
            ens.positions().len()
        )));
    }
    Ok(())
}

pub(crate) fn advance_clock<T: Scalar>(ens: &mut Ensemble<T>, h: T) {
    ens.step += 1;
    ens.time = T::from_u64(ens.step).unwrap_or(T::nan()) * h;
}

/// One projected Euler step on a sphere of radius `radius`:
/// `x ← x + h(P(x)v − λx/‖x‖²) + √2 P(x)Δb`, then rescaled to the sphere.
#[inline]
fn projected_euler<T: Scalar>(x: &mut [T], v: &[T], db: &[T], h: T, lambda: T, radius: T, scratch: &mut [T]) {
    let n = x.len();
    let nx: T = x.iter().map(|&a| a * a).sum();
    let dot_v: T = x.iter().zip(v).map(|(&a, &b)| a * b).sum();
    let dot_b: T = x.iter().zip(db).map(|(&a, &b)| a * b).sum();
    let sqrt2 = T::SQRT_2();
    let cv = dot_v / nx;
    let cb = dot_b / nx;
    let radial = lambda / nx;
    for i in 0..n {
        scratch[i] = x[i] + h * (v[i] - cv * x[i] - radial * x[i]) + sqrt2 * (db[i] - cb * x[i]);
    }
    let norm: T = scratch.iter().map(|&a| a * a).sum::<T>().sqrt();
    let s = radius / norm;
    for i in 0..n {
        x[i] = scratch[i] * s;
    }
}

/// Original model: each rod on the sphere `‖X‖ = L`, driven by
/// `P(X)(κX + 4N M̂X)` with the Itô correction `−(d−1)X/‖X‖²`.
pub fn step_original<T: Scalar>(
    ens: &mut Ensemble<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    h: T,
    noise: &[T],
) -> Result<()> {
    check_noise(ens, noise)?;
    let d = ens.dim();
    let k = drift_matrix_original(ens, params, kappa);
    let lambda = T::from_usize_lossy(d - 1);
    let radius = params.length;
    ens.positions_mut()
        .par_chunks_mut(d * CHUNK_PARTICLES)
        .zip(noise.par_chunks(d * CHUNK_PARTICLES))
        .for_each(|(block, db)| {
            let mut v = vec![T::zero(); d];
            let mut scratch = vec![T::zero(); d];
            for (x, b) in block.chunks_mut(d).zip(db.chunks(d)) {
                k.mul_vec_into(x, &mut v);
                projected_euler(x, &v, b, h, lambda, radius, &mut scratch);
            }
        });
    advance_clock(ens, h);
    Ok(())
}

/// `κ + 4N M̂`, or just `κ` when `N = 0` so no rounding enters.
fn drift_matrix_original<T: Scalar>(ens: &Ensemble<T>, params: &ModelParams<T>, kappa: &FlowMatrix<T>) -> Mat<T> {
    if params.n_conc == T::zero() {
        return kappa.matrix().clone();
    }
    let (m_hat, _) = empirical_moments(ens.positions(), ens.dim());
    kappa.matrix() + &m_hat.scale(T::lit(4.0) * params.n_conc)
}

/// Stratonovich–Heun step of the original model, renormalized afterwards.
pub fn step_original_heun<T: Scalar>(
    ens: &mut Ensemble<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    h: T,
    noise: &[T],
) -> Result<()> {
    check_noise(ens, noise)?;
    let d = ens.dim();
    let k = drift_matrix_original(ens, params, kappa);
    let radius = params.length;
    let half = T::lit(0.5);
    let sqrt2 = T::SQRT_2();
    ens.positions_mut()
        .par_chunks_mut(d * CHUNK_PARTICLES)
        .zip(noise.par_chunks(d * CHUNK_PARTICLES))
        .for_each(|(block, db)| {
            let mut kv = vec![T::zero(); d];
            let mut f0 = vec![T::zero(); d];
            let mut g0 = vec![T::zero(); d];
            let mut pred = vec![T::zero(); d];
            let mut f1 = vec![T::zero(); d];
            let mut g1 = vec![T::zero(); d];
            for (x, b) in block.chunks_mut(d).zip(db.chunks(d)) {
                k.mul_vec_into(x, &mut kv);
                project_tangent(x, &kv, &mut f0);
                project_tangent(x, b, &mut g0);
                for i in 0..d {
                    pred[i] = x[i] + h * f0[i] + sqrt2 * g0[i];
                }
                k.mul_vec_into(&pred, &mut kv);
                project_tangent(&pred, &kv, &mut f1);
                project_tangent(&pred, b, &mut g1);
                for i in 0..d {
                    x[i] += half * h * (f0[i] + f1[i]) + half * sqrt2 * (g0[i] + g1[i]);
                }
                let norm = x.iter().map(|&a| a * a).sum::<T>().sqrt();
                let s = radius / norm;
                x.iter_mut().for_each(|a| *a *= s);
            }
        });
    advance_clock(ens, h);
    Ok(())
}

/// Linear drift `A` of the mean-field models, `dX = AX dt + noise`:
/// `κ + 4N M̂ − ((κ:M̂ + 4N M̂:M̂ + λ)/m̂) Id`.
pub fn meanfield_drift<T: Scalar>(m_hat: &Mat<T>, params: &ModelParams<T>, kappa: &FlowMatrix<T>, lambda: T) -> Result<Mat<T>> {
    let msq = m_hat.trace();
    if !(msq > T::lit(DEGENERATE_MSQ)) {
        return Err(RodError::Degenerate(format!(
            "empirical mean-square norm {msq:e} is too small"
        )));
    }
    let four_n = T::lit(4.0) * params.n_conc;
    let k = kappa.matrix();
    let c = (k.frob(m_hat) + four_n * m_hat.frob(m_hat) + lambda) / msq;
    let mut a = k + &m_hat.scale(four_n);
    for i in 0..a.dim() {
        a[(i, i)] -= c;
    }
    Ok(a)
}

/// Noise factor `R = (Id − M̂/tr M̂)^{1/2}` of variant B.
pub fn noise_factor_b<T: Scalar>(m_hat: &Mat<T>) -> Result<Mat<T>> {
    let d = m_hat.dim();
    let target = &Mat::identity(d) - &m_hat.scale(T::one() / m_hat.trace());
    target.sym_sqrt(T::lit(1e-12))
}

/// Trapezoidal step of `dX = AX dt + √2 R dB` with `A` frozen over the step:
/// `(Id − hA/2) x' = (Id + hA/2) x + √2 R Δb`.
///
/// Explicit Euler would add `h²·AMAᵀ` to the second moment every step, an
/// `O(h)` drift of `E‖X‖²` over a run; the trapezoidal rule keeps the
/// isotropic part of the moment balance exact.
fn linear_step<T: Scalar>(ens: &mut Ensemble<T>, a: &Mat<T>, r: Option<&Mat<T>>, h: T, noise: &[T]) -> Result<()> {
    let d = ens.dim();
    let half_h = h * T::lit(0.5);
    let mut lhs = Mat::identity(d);
    let mut rhs = Mat::identity(d);
    for i in 0..d {
        for j in 0..d {
            lhs[(i, j)] -= half_h * a[(i, j)];
            rhs[(i, j)] += half_h * a[(i, j)];
        }
    }
    let inv = lhs.inverse()?;
    let prop = inv.matmul(&rhs);
    let gain = match r {
        Some(r) => inv.matmul(r).scale(T::SQRT_2()),
        None => inv.scale(T::SQRT_2()),
    };
    ens.positions_mut()
        .par_chunks_mut(d * CHUNK_PARTICLES)
        .zip(noise.par_chunks(d * CHUNK_PARTICLES))
        .for_each(|(block, db)| {
            let mut px = vec![T::zero(); d];
            let mut gb = vec![T::zero(); d];
            for (x, b) in block.chunks_mut(d).zip(db.chunks(d)) {
                prop.mul_vec_into(x, &mut px);
                gain.mul_vec_into(b, &mut gb);
                for i in 0..d {
                    x[i] = px[i] + gb[i];
                }
            }
        });
    Ok(())
}

/// Law at the half step, `M̂ + (h/2)(AM̂ + M̂Aᵀ + 2RRᵀ)`, so the frozen
/// coefficients are second-order accurate in time.
fn half_step_law<T: Scalar>(m_hat: &Mat<T>, a: &Mat<T>, rrt: &Mat<T>, h: T) -> Mat<T> {
    let am = a.matmul(m_hat);
    let mut rate = &am + &am.transpose();
    rate += &rrt.scale(T::lit(2.0));
    (m_hat + &rate.scale(h * T::lit(0.5))).sym_part()
}

/// Variant A: `R = Id`, `λ = d`.
pub fn step_meanfield_a<T: Scalar>(
    ens: &mut Ensemble<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    h: T,
    noise: &[T],
) -> Result<()> {
    check_noise(ens, noise)?;
    let d = ens.dim();
    let lambda = T::from_usize_lossy(d);
    let (m_hat, _) = empirical_moments(ens.positions(), d);
    let a0 = meanfield_drift(&m_hat, params, kappa, lambda)?;
    let mid = half_step_law(&m_hat, &a0, &Mat::identity(d), h);
    let a = meanfield_drift(&mid, params, kappa, lambda)?;
    linear_step(ens, &a, None, h, noise)?;
    advance_clock(ens, h);
    Ok(())
}

/// Variant B: `R Rᵀ = Id − M̂/tr M̂`, `λ = d − 1`.
pub fn step_meanfield_b<T: Scalar>(
    ens: &mut Ensemble<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    h: T,
    noise: &[T],
) -> Result<()> {
    check_noise(ens, noise)?;
    let d = ens.dim();
    let lambda = T::from_usize_lossy(d - 1);
    let (m_hat, _) = empirical_moments(ens.positions(), d);
    let a0 = meanfield_drift(&m_hat, params, kappa, lambda)?;
    let rrt0 = &Mat::identity(d) - &m_hat.scale(T::one() / m_hat.trace());
    let mid = half_step_law(&m_hat, &a0, &rrt0, h);
    let a = meanfield_drift(&mid, params, kappa, lambda)?;
    let r = noise_factor_b(&mid)?;
    linear_step(ens, &a, Some(&r), h, noise)?;
    advance_clock(ens, h);
    Ok(())
}

/// One step of the `I`-replica system stored flat in `big_x` (`I·d`
/// entries). The drift is block-diagonal `κ` (plus `4N M̂` per block when
/// `N > 0`), the projector acts in dimension `dI`, and the state is
/// rescaled to the sphere of radius `√I·L` afterwards.
pub fn step_replica<T: Scalar>(
    big_x: &mut [T],
    dim: usize,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    h: T,
    noise: &[T],
) -> Result<()> {
    let len = big_x.len();
    if dim == 0 || len % dim != 0 || noise.len() != len {
        return Err(RodError::InvalidState(format!(
            "replica state of {len} values with dim {dim} and {} noise values",
            noise.len()
        )));
    }
    let replicas = len / dim;
    let k = if params.n_conc == T::zero() {
        kappa.matrix().clone()
    } else {
        let (m_hat, _) = empirical_moments(big_x, dim);
        kappa.matrix() + &m_hat.scale(T::lit(4.0) * params.n_conc)
    };
    let mut v = vec![T::zero(); len];
    for (x, vi) in big_x.chunks(dim).zip(v.chunks_mut(dim)) {
        k.mul_vec_into(x, vi);
    }
    let lambda = T::from_usize_lossy(len - 1);
    let radius = T::from_usize_lossy(replicas).sqrt() * params.length;
    let mut scratch = vec![T::zero(); len];
    projected_euler(big_x, &v, noise, h, lambda, radius, &mut scratch);
    Ok(())
}

fn step_replica_ensemble<T: Scalar>(
    ens: &mut Ensemble<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    h: T,
    noise: &[T],
) -> Result<()> {
    let d = ens.dim();
    step_replica(ens.positions_mut(), d, params, kappa, h, noise)?;
    advance_clock(ens, h);
    Ok(())
}

/// Applies the model's step once with increments for step index `ens.step`.
pub fn step_model<T: Scalar>(
    ens: &mut Ensemble<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    scheme: Scheme,
    h: T,
    noise: &[T],
) -> Result<()> {
    match (ens.model, scheme) {
        (ModelTag::Original, Scheme::EulerMaruyamaProject) => step_original(ens, params, kappa, h, noise),
        (ModelTag::Original, Scheme::HeunStratonovich) => step_original_heun(ens, params, kappa, h, noise),
        (ModelTag::MeanFieldA, Scheme::EulerMaruyamaProject) => step_meanfield_a(ens, params, kappa, h, noise),
        (ModelTag::MeanFieldB, Scheme::EulerMaruyamaProject) => step_meanfield_b(ens, params, kappa, h, noise),
        (ModelTag::Replica, Scheme::EulerMaruyamaProject) => step_replica_ensemble(ens, params, kappa, h, noise),
        (model, Scheme::HeunStratonovich) => Err(RodError::InvalidState(format!(
            "the Heun scheme is only available for the original model (got {})",
            model.as_str()
        ))),
    }
}

/// Runs the ensemble's model from its current step to `config.t_end`,
/// recording moments at the initial state and every `stride` steps.
///
/// Increments come from `NoiseSource::new(config.seed)` indexed by
/// `(particle, step)`, so a run resumed from a checkpoint continues the
/// same path.
pub fn run<T: Scalar>(
    initial: &Ensemble<T>,
    params: &ModelParams<T>,
    kappa: &FlowMatrix<T>,
    config: &SdeConfig<T>,
) -> Result<(MomentSeries<T>, Ensemble<T>)> {
    config.validate()?;
    params.validate()?;
    let mut ens = initial.clone();
    let mut series = MomentSeries::new(ens.n(), config.seed, ens.model);
    let noise_src = NoiseSource::new(config.seed);
    let mut db = vec![T::zero(); ens.positions().len()];
    let n_steps = config.n_steps();
    series.record(&ens);
    while ens.step < n_steps {
        noise_src.increments(ens.step, config.step, ens.dim(), &mut db);
        step_model(&mut ens, params, kappa, config.scheme, config.step, &db)?;
        if ens.positions().iter().any(|v| !v.is_finite()) {
            return Err(RodError::Numerical(format!(
                "non-finite particle state at step {}",
                ens.step
            )));
        }
        if ens.step % config.stride as u64 == 0 || ens.step == n_steps {
            series.record(&ens);
        }
    }
    Ok((series, ens))
}

/// Checkpoint layout (little-endian):
///
/// | bytes | field |
/// |---|---|
/// | 8 | magic `RODLABCK` |
/// | 4 | format version (`1`) |
/// | 1 | scalar width in bytes (4 or 8) |
/// | 1 | model code |
/// | 2 | reserved, zero |
/// | 4 | dimension `d` |
/// | 8 | particle count `n` |
/// | 8 | seed |
/// | 8 | step counter |
/// | 8 | time as `f64` |
/// | 8·n·d | positions as `f64`, particle-major |
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RODLABCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_HEADER: usize = 8 + 4 + 1 + 1 + 2 + 4 + 8 + 8 + 8 + 8;

pub fn save_checkpoint<T: Scalar>(ens: &Ensemble<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(CHECKPOINT_HEADER + 8 * ens.positions().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(std::mem::size_of::<T>() as u8);
    out.push(ens.model.code());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(ens.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(ens.n() as u64).to_le_bytes());
    out.extend_from_slice(&ens.seed.to_le_bytes());
    out.extend_from_slice(&ens.step.to_le_bytes());
    out.extend_from_slice(&ens.time.as_f64().to_le_bytes());
    for v in ens.positions() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

pub fn load_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Ensemble<T>> {
    let bad = |msg: &str| RodError::Checkpoint(msg.to_string());
    if bytes.len() < CHECKPOINT_HEADER {
        return Err(bad("truncated header"));
    }
    if &bytes[0..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != CHECKPOINT_VERSION {
        return Err(RodError::Checkpoint(format!("unsupported version {version}")));
    }
    if bytes[12] as usize != std::mem::size_of::<T>() {
        return Err(RodError::Checkpoint(format!(
            "checkpoint holds {}-byte scalars, reader expects {}",
            bytes[12],
            std::mem::size_of::<T>()
        )));
    }
    let model = ModelTag::from_code(bytes[13]).ok_or_else(|| bad("unknown model code"))?;
    let dim = u32_at(16) as usize;
    let n = u64_at(20) as usize;
    let seed = u64_at(28);
    let step = u64_at(36);
    let time = f64::from_bits(u64_at(44));
    let expected = n
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(CHECKPOINT_HEADER))
        .ok_or_else(|| bad("size overflow"))?;
    if bytes.len() != expected {
        return Err(RodError::Checkpoint(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let positions = bytes[CHECKPOINT_HEADER..]
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let mut ens = Ensemble::new(positions, dim, model, seed)?;
    ens.step = step;
    ens.time = T::lit(time);
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::make_shear_kappa;

    fn circle_ensemble(n: usize, model: ModelTag) -> Ensemble<f64> {
        let mut pos = Vec::with_capacity(2 * n);
        for i in 0..n {
            let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.3) / n as f64;
            pos.extend([th.cos(), th.sin()]);
        }
        Ensemble::new(pos, 2, model, 1).unwrap()
    }

    #[test]
    fn projector_kills_axis() {
        let src = NoiseSource::new(5);
        let mut x = [0.0; 3];
        let mut out = [0.0; 3];
        for p in 0..100 {
            src.normals(p, 0, &mut x);
            project_tangent(&x, &x, &mut out);
            assert!(out.iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn drift_only_original_step_keeps_rods() {
        let p = ModelParams::shear(0.0, 0.5, 0.0).unwrap();
        let k = FlowMatrix::zero(2);
        let mut e = circle_ensemble(16, ModelTag::Original);
        let before = e.positions().to_vec();
        step_original(&mut e, &p, &k, 1e-3, &vec![0.0; 32]).unwrap();
        for (a, b) in before.iter().zip(e.positions()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn original_step_stays_on_sphere() {
        let p = ModelParams::shear(0.6, 0.5, 2.0).unwrap();
        let k = make_shear_kappa(&p).unwrap();
        let mut e = circle_ensemble(100, ModelTag::Original);
        let src = NoiseSource::new(2);
        let mut db = vec![0.0; 200];
        for s in 0..50 {
            src.increments(s, 1e-2, 2, &mut db);
            step_original(&mut e, &p, &k, 1e-2, &db).unwrap();
            assert!(e.max_sphere_violation(1.0) <= 1e-15);
        }
        assert_eq!(e.step, 50);
    }

    #[test]
    fn noise_factor_b_reconstructs() {
        let m = Mat::from_rows([[0.7, 0.2], [0.2, 0.3]]);
        let r = noise_factor_b(&m).unwrap();
        let rrt = r.matmul(&r.transpose());
        let target = &Mat::identity(2) - &m;
        assert!((&rrt - &target).frob_norm() <= 1e-12);
        let iso = noise_factor_b(&Mat::scaled_identity(2, 0.5)).unwrap();
        assert!((&iso.matmul(&iso) - &Mat::scaled_identity(2, 0.5)).max_abs() < 1e-15);
    }

    #[test]
    fn single_particle_meanfield_decay_without_noise() {
        // With one particle M̂ = X⊗X and m̂ = ‖X‖², so κ = 0, N = 0 gives
        // X' = −(d/‖X‖²) X, i.e. ‖X‖² decreases by 2d per unit time.
        let p = ModelParams::shear(0.0, 0.0, 0.0).unwrap();
        let k = FlowMatrix::zero(2);
        let mut e = Ensemble::new(vec![1.0, 0.0], 2, ModelTag::MeanFieldA, 0).unwrap();
        let h = 1e-4;
        for _ in 0..1000 {
            step_meanfield_a(&mut e, &p, &k, h, &[0.0, 0.0]).unwrap();
        }
        let exact = (1.0f64 - 4.0 * 0.1).sqrt();
        assert!((e.positions()[0] - exact).abs() < 1e-3);
        assert_eq!(e.positions()[1], 0.0);
    }

    #[test]
    fn meanfield_mean_square_has_no_step_bias() {
        // Explicit Euler would raise m̂ by about 4h per unit time here.
        let p = ModelParams::shear(0.0, 0.0, 0.0).unwrap();
        let k = FlowMatrix::zero(2);
        let mut e = Ensemble::gaussian(&Mat::scaled_identity(2, 0.5), 20_000, ModelTag::MeanFieldA, 3).unwrap();
        e.normalize_mean_square(1.0).unwrap();
        let src = NoiseSource::new(3);
        let mut db = vec![0.0; 40_000];
        let h = 1e-2;
        for s in 0..1000 {
            src.increments(s, h, 2, &mut db);
            step_meanfield_a(&mut e, &p, &k, h, &db).unwrap();
        }
        let msq: f64 = e.mean_square_norm();
        assert!((msq - 1.0).abs() < 0.06, "{msq}");
    }

    #[test]
    fn meanfield_rejects_collapsed_ensemble() {
        let p = ModelParams::shear(0.0, 0.0, 0.0).unwrap();
        let mut e = Ensemble::new(vec![0.0, 0.0], 2, ModelTag::MeanFieldA, 0).unwrap();
        let err = step_meanfield_a(&mut e, &p, &FlowMatrix::zero(2), 1e-3, &[0.0, 0.0]);
        assert!(matches!(err, Err(RodError::Degenerate(_))));
    }

    #[test]
    fn heun_rejected_for_meanfield() {
        let p = ModelParams::shear(0.0, 0.0, 0.0).unwrap();
        let mut e = circle_ensemble(4, ModelTag::MeanFieldB);
        let err = step_model(&mut e, &p, &FlowMatrix::zero(2), Scheme::HeunStratonovich, 1e-3, &[0.0; 8]);
        assert!(err.is_err());
    }

    #[test]
    fn moments_independent_of_thread_count() {
        let e = Ensemble::gaussian(&Mat::from_rows([[0.6, 0.1], [0.1, 0.4]]), 3 * CHUNK_PARTICLES + 5, ModelTag::MeanFieldA, 9)
            .unwrap();
        let with = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| empirical_moments(e.positions(), 2))
        };
        assert_eq!(with(1), with(4));
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let p = ModelParams::shear(0.6, 0.5, 2.0).unwrap();
        let k = make_shear_kappa(&p).unwrap();
        let mut e0 = circle_ensemble(64, ModelTag::Original);
        e0.seed = 17;
        let cfg = SdeConfig::new(1e-2, 0.4, 64, 17);
        let (full, end) = run(&e0, &p, &k, &cfg).unwrap();
        let (_, mid) = run(&e0, &p, &k, &SdeConfig { t_end: 0.2, ..cfg }).unwrap();
        let restored: Ensemble<f64> = load_checkpoint(&save_checkpoint(&mid)).unwrap();
        assert_eq!(restored, mid);
        let (tail, end2) = run(&restored, &p, &k, &cfg).unwrap();
        assert_eq!(end2.positions(), end.positions());
        assert_eq!(tail.m_emp.last(), full.m_emp.last());
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let e = circle_ensemble(4, ModelTag::Replica);
        let mut bytes = save_checkpoint(&e);
        assert!(load_checkpoint::<f32>(&bytes).is_err());
        bytes[8] = 9;
        assert!(matches!(load_checkpoint::<f64>(&bytes), Err(RodError::Checkpoint(_))));
        assert!(load_checkpoint::<f64>(&bytes[..20]).is_err());
    }

    #[test]
    fn csv_columns() {
        let p = ModelParams::shear(0.6, 0.5, 2.0).unwrap();
        let k = make_shear_kappa(&p).unwrap();
        let e = circle_ensemble(8, ModelTag::MeanFieldA);
        let (s, _) = run(&e, &p, &k, &SdeConfig::new(1e-2, 0.1, 8, 3)).unwrap();
        let csv = String::from_utf8(s.to_csv().to_bytes().unwrap()).unwrap();
        assert!(csv.starts_with("t,m11,m12,m22,msq_norm,n,seed\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
