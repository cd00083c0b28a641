//! Limit cycle of the planar closure: trapping annulus, Poincaré return map,
//! periodic orbit, Floquet multiplier and convergence rate.
//!
//! Sections are half-lines `{s·(cos θ, sin θ) : s > 0}`. The flow turns
//! clockwise in the annulus, so a trajectory crosses a ray when
//! `g = −x sin θ + y cos θ` goes from positive to non-positive.

use crate::closure::rhs_xy;
use crate::error::{Result, RodError};
use crate::io::{fmt_num, CsvTable};
use crate::ode::OdeConfig;
use crate::scalar::Scalar;
use crate::types::{polar_from_q, q_from_conf, ConfTensor, ModelParams, QState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnulusSpec<T> {
    pub eps1: T,
    pub eps2: T,
    pub r1: T,
    pub r2: T,
    pub pe_max: T,
}

impl<T: Scalar> AnnulusSpec<T> {
    pub fn contains(&self, r: T) -> bool {
        r >= self.r1 && r <= self.r2
    }

    /// Left side of the Dulac smallness condition,
    /// `−8(N−1) + 64N·ε₁ + 6·Pe·|a|·r₂`; negative means the divergence is
    /// negative throughout the annulus.
    pub fn dulac_bound(&self, params: &ModelParams<T>) -> T {
        let n = params.n_conc;
        -T::lit(8.0) * (n - T::one())
            + T::lit(64.0) * n * self.eps1
            + T::lit(6.0) * params.pe * params.a.abs() * self.r2
    }

    pub fn dulac_negative(&self, params: &ModelParams<T>) -> bool {
        self.dulac_bound(params) < T::zero()
    }
}

/// Trapping annulus `r₁ ≤ r ≤ r₂` for slacks `ε₁, ε₂` and its Péclet bound.
pub fn annulus<T: Scalar>(params: &ModelParams<T>, eps1: T, eps2: T) -> Result<AnnulusSpec<T>> {
    params.check_cycle_regime()?;
    let n = params.n_conc;
    let four_n = T::lit(4.0) * n;
    let base = (n - T::one()) / four_n;
    if !(eps1 > T::zero() && eps1 < base) {
        return Err(RodError::InvalidSlack(format!(
            "eps1 = {eps1} must lie in (0, (N−1)/(4N) = {base})"
        )));
    }
    let eps2_max = T::one() / four_n;
    if !(eps2 > T::zero() && eps2 < eps2_max) {
        return Err(RodError::InvalidSlack(format!(
            "eps2 = {eps2} must lie in (0, 1/(4N) = {eps2_max})"
        )));
    }
    let a = params.a;
    let denom = T::one() - T::lit(4.0) * eps1 - a * a;
    if !(denom > T::zero() && n > T::one() / denom) {
        return Err(RodError::Regime(format!(
            "stationary points may enter the annulus: N > 1/(1 − 4ε₁ − a²) fails for ε₁ = {eps1}"
        )));
    }
    let r1 = (base - eps1).sqrt();
    let r2 = (base + eps2).sqrt();
    let inv_n = T::one() / n;
    let four = T::lit(4.0);
    let pe_max = if a == T::zero() {
        T::infinity()
    } else {
        T::lit(16.0) * n * eps1 / a.abs()
            * (r1 / (inv_n + four * eps1)).min(r2 / (inv_n - four * eps2))
    };
    Ok(AnnulusSpec {
        eps1,
        eps2,
        r1,
        r2,
        pe_max,
    })
}

/// Divergence of the planar field: `8(N−1) − 64N(x²+y²) − 6·Pe·a·y`.
pub fn divergence<T: Scalar>(q: &QState<T>, params: &ModelParams<T>) -> T {
    let n = params.n_conc;
    T::lit(8.0) * (n - T::one())
        - T::lit(64.0) * n * (q.x * q.x + q.y * q.y)
        - T::lit(6.0) * params.pe * params.a * q.y
}

/// Absolute tolerance floored at a few ulps of the scalar type.
fn tol<T: Scalar>(v: f64) -> T {
    T::lit(v).max(T::epsilon() * T::lit(64.0))
}

#[inline]
fn field<T: Scalar>(z: [T; 2], p: &ModelParams<T>) -> [T; 2] {
    let (dx, dy) = rhs_xy(&QState::new(z[0], z[1]), p);
    [dx, dy]
}

#[inline]
fn rk4<T: Scalar>(z: [T; 2], h: T, p: &ModelParams<T>) -> [T; 2] {
    let half = h * T::lit(0.5);
    let k1 = field(z, p);
    let k2 = field([z[0] + half * k1[0], z[1] + half * k1[1]], p);
    let k3 = field([z[0] + half * k2[0], z[1] + half * k2[1]], p);
    let k4 = field([z[0] + h * k3[0], z[1] + h * k3[1]], p);
    let s = h / T::lit(6.0);
    let two = T::lit(2.0);
    [
        z[0] + s * (k1[0] + two * (k2[0] + k3[0]) + k4[0]),
        z[1] + s * (k1[1] + two * (k2[1] + k3[1]) + k4[1]),
    ]
}

/// Advances `z` by `t ≥ 0` with steps of at most `h`.
fn flow_for<T: Scalar>(mut z: [T; 2], t: T, h: T, p: &ModelParams<T>) -> [T; 2] {
    let n = (t / h).floor().to_usize().unwrap_or(0);
    for _ in 0..n {
        z = rk4(z, h, p);
    }
    let rest = t - T::from_usize_lossy(n) * h;
    if rest > T::zero() {
        z = rk4(z, rest, p);
    }
    z
}

#[derive(Clone, Copy, Debug)]
struct Ray<T> {
    c: T,
    s: T,
}

impl<T: Scalar> Ray<T> {
    fn at(theta: T) -> Self {
        Ray {
            c: theta.cos(),
            s: theta.sin(),
        }
    }
    #[inline]
    fn g(&self, z: [T; 2]) -> T {
        -z[0] * self.s + z[1] * self.c
    }
    #[inline]
    fn along(&self, z: [T; 2]) -> T {
        z[0] * self.c + z[1] * self.s
    }
    fn point(&self, s: T) -> [T; 2] {
        [s * self.c, s * self.s]
    }
    #[inline]
    fn crossed(&self, before: [T; 2], after: [T; 2]) -> bool {
        self.g(before) > T::zero() && self.g(after) <= T::zero() && self.along(after) > T::zero()
    }
}

/// Locates the crossing inside one rk4 step of size `h` from `z0`.
///
/// A cubic Hermite fit of `g` along the step seeds an Illinois iteration on
/// `τ ↦ g(Φ_τ(z0))`, where `Φ_τ` is a single rk4 step of length `τ`.
fn refine<T: Scalar>(z0: [T; 2], h: T, ray: &Ray<T>, p: &ModelParams<T>) -> ([T; 2], T) {
    let target = tol::<T>(1e-12);
    let z1 = rk4(z0, h, p);
    let (g0, g1) = (ray.g(z0), ray.g(z1));
    if g1.abs() <= target {
        return (z1, h);
    }
    let d0 = ray.g(field(z0, p)) * h;
    let d1 = ray.g(field(z1, p)) * h;
    let hermite = |s: T| {
        let s2 = s * s;
        let s3 = s2 * s;
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        (two * s3 - three * s2 + T::one()) * g0
            + (s3 - two * s2 + s) * d0
            + (-two * s3 + three * s2) * g1
            + (s3 - s2) * d1
    };
    let (mut lo, mut hi) = (T::zero(), T::one());
    for _ in 0..40 {
        let mid = (lo + hi) * T::lit(0.5);
        if hermite(mid) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let guess = (lo + hi) * T::lit(0.5) * h;

    let (mut a, mut ga) = (T::zero(), g0);
    let (mut b, mut gb) = (h, g1);
    let zg = rk4(z0, guess, p);
    let gg = ray.g(zg);
    if gg.abs() <= target {
        return (zg, guess);
    }
    if gg > T::zero() {
        a = guess;
        ga = gg;
    } else {
        b = guess;
        gb = gg;
    }
    let mut side = 0i8;
    let mut best = (zg, guess, gg.abs());
    for _ in 0..100 {
        let tau = (a * gb - b * ga) / (gb - ga);
        let tau = if tau > a && tau < b { tau } else { (a + b) * T::lit(0.5) };
        let z = rk4(z0, tau, p);
        let gt = ray.g(z);
        if gt.abs() < best.2 {
            best = (z, tau, gt.abs());
        }
        if gt.abs() <= target || b - a <= T::epsilon() * h {
            break;
        }
        if gt > T::zero() {
            a = tau;
            ga = gt;
            if side == 1 {
                gb *= T::lit(0.5);
            }
            side = 1;
        } else {
            b = tau;
            gb = gt;
            if side == -1 {
                ga *= T::lit(0.5);
            }
            side = -1;
        }
    }
    (best.0, best.1)
}

/// Flows from `z0` to the next crossing of `ray`; returns the crossing
/// point and elapsed time. With `skip_first`, a crossing inside the first
/// step is ignored so a start point lying on the ray does not count.
fn flow_to_ray<T: Scalar>(
    z0: [T; 2],
    ray: &Ray<T>,
    p: &ModelParams<T>,
    h: T,
    budget: T,
    skip_first: bool,
) -> Result<([T; 2], T)> {
    let mut z = z0;
    let max_steps = (budget / h).ceil().to_usize().unwrap_or(usize::MAX);
    for k in 0..max_steps {
        let next = rk4(z, h, p);
        if !(next[0].is_finite() && next[1].is_finite()) {
            return Err(RodError::IntegrationFailure {
                t: (T::from_usize_lossy(k) * h).as_f64(),
                reason: "non-finite state while seeking the section".into(),
                last_state: vec![z[0].as_f64(), z[1].as_f64()],
            });
        }
        if !(skip_first && k == 0) && ray.crossed(z, next) {
            let (zc, tau) = refine(z, h, ray, p);
            return Ok((zc, T::from_usize_lossy(k) * h + tau));
        }
        z = next;
    }
    Err(RodError::NoReturn {
        budget: budget.as_f64(),
    })
}

fn return_budget<T: Scalar>(p: &ModelParams<T>) -> T {
    T::lit(10.0) * T::TAU() / p.pe
}

/// First return to `S = {y = 0, x > 0}` from `q0 ∈ S`.
pub fn poincare_return<T: Scalar>(
    q0: &QState<T>,
    params: &ModelParams<T>,
    config: &OdeConfig<T>,
) -> Result<(QState<T>, T)> {
    if params.dim != 2 {
        return Err(RodError::UnsupportedDimension {
            expected: 2,
            got: params.dim,
        });
    }
    if !(params.pe > T::zero()) {
        return Err(RodError::Regime("the return map needs Pe > 0".into()));
    }
    if q0.y.abs() > tol::<T>(1e-9) || !(q0.x > T::zero()) {
        return Err(RodError::InvalidState(format!(
            "({}, {}) is not on the section y = 0, x > 0",
            q0.x, q0.y
        )));
    }
    let ray = Ray::at(T::zero());
    let (z, t) = flow_to_ray([q0.x, q0.y], &ray, params, config.step, return_budget(params), true)?;
    Ok((QState::new(z[0], z[1]), t))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleOptions<T> {
    /// Starting abscissa; the annulus midpoint when `None`.
    pub x0: Option<T>,
    pub tol: T,
    pub max_returns: usize,
    /// Number of intermediate rays used for the finite-difference multiplier.
    pub fd_sections: usize,
    /// Finite-difference offset relative to the radial coordinate.
    pub fd_rel_offset: T,
}

impl<T: Scalar> Default for CycleOptions<T> {
    fn default() -> Self {
        CycleOptions {
            x0: None,
            tol: T::lit(1e-11),
            max_returns: 10_000,
            fd_sections: 64,
            fd_rel_offset: T::lit(1e-5),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleReport<T> {
    pub params: ModelParams<T>,
    pub annulus: AnnulusSpec<T>,
    pub x_star: T,
    pub period: T,
    /// `exp(∮ D dt)`; may underflow, see `ln_rho`.
    pub rho: T,
    pub ln_rho: T,
    pub rho_tilde: T,
    pub ln_rho_tilde: T,
    /// `−ln ρ̃ / T`.
    pub lambda: T,
    pub orbit_times: Vec<T>,
    pub orbit: Vec<QState<T>>,
    pub eig_bounds: (T, T),
    pub r_min: T,
    pub r_max: T,
    /// Return-map iterates `x₀, x₁, …` ending at `x*`.
    pub iterates: Vec<T>,
    /// Integration step used to build the orbit.
    pub step: T,
}

impl<T: Scalar> CycleReport<T> {
    /// Periodic state at phase `s` (any real), by integrating from `x*`.
    pub fn state_at_phase(&self, s: T) -> QState<T> {
        let mut tau = s % self.period;
        if tau < T::zero() {
            tau += self.period;
        }
        let z = flow_for([self.x_star, T::zero()], tau, self.step, &self.params);
        QState::new(z[0], z[1])
    }

    pub fn orbit_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(["t", "x", "y", "r", "phi"]);
        for (t, q) in self.orbit_times.iter().zip(&self.orbit) {
            let pq = polar_from_q(q);
            table.push_nums(&[t.as_f64(), q.x.as_f64(), q.y.as_f64(), pq.r.as_f64(), pq.phi.as_f64()]);
        }
        table
    }

    pub fn summary_csv(&self) -> CsvTable {
        let mut table = CsvTable::new([
            "x_star",
            "period",
            "rho",
            "ln_rho",
            "rho_tilde",
            "ln_rho_tilde",
            "lambda",
            "eig_min",
            "eig_max",
            "r1",
            "r2",
            "pe_max",
        ]);
        table.push(
            [
                self.x_star,
                self.period,
                self.rho,
                self.ln_rho,
                self.rho_tilde,
                self.ln_rho_tilde,
                self.lambda,
                self.eig_bounds.0,
                self.eig_bounds.1,
                self.annulus.r1,
                self.annulus.r2,
                self.annulus.pe_max,
            ]
            .iter()
            .map(|v| fmt_num(v.as_f64()))
            .collect(),
        );
        table
    }
}

pub fn find_cycle<T: Scalar>(
    params: &ModelParams<T>,
    annulus: &AnnulusSpec<T>,
    config: &OdeConfig<T>,
) -> Result<CycleReport<T>> {
    find_cycle_with(params, annulus, config, &CycleOptions::default())
}

pub fn find_cycle_with<T: Scalar>(
    params: &ModelParams<T>,
    annulus: &AnnulusSpec<T>,
    config: &OdeConfig<T>,
    opts: &CycleOptions<T>,
) -> Result<CycleReport<T>> {
    params.check_cycle_regime()?;
    config.validate()?;
    if !(params.pe > T::zero() && params.pe < annulus.pe_max) {
        return Err(RodError::Regime(format!(
            "Pe = {} must lie in (0, {})",
            params.pe, annulus.pe_max
        )));
    }
    if opts.fd_sections == 0 {
        return Err(RodError::param("fd_sections", "fd_sections ≥ 1", 0));
    }
    let h = config.step;
    let x0 = opts.x0.unwrap_or((annulus.r1 + annulus.r2) * T::lit(0.5));
    let mut iterates = vec![x0];
    let mut x = x0;
    let mut converged = false;
    let mut gap = T::infinity();
    for _ in 0..opts.max_returns {
        let (q, _) = poincare_return(&QState::new(x, T::zero()), params, config)?;
        gap = (q.x - x).abs();
        x = q.x;
        iterates.push(x);
        if gap <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(RodError::NonConvergence {
            iterations: opts.max_returns,
            last_gap: gap.as_f64(),
        });
    }
    let x_star = x;

    // One period, sampled on the rk4 grid plus the closing crossing.
    let ray0 = Ray::at(T::zero());
    let budget = return_budget(params);
    let max_steps = (budget / h).ceil().to_usize().unwrap_or(usize::MAX);
    let mut z = [x_star, T::zero()];
    let mut orbit_times = vec![T::zero()];
    let mut orbit = vec![QState::new(z[0], z[1])];
    let mut integral = T::zero();
    let mut d_prev = divergence(&orbit[0], params);
    let mut period = None;
    for k in 0..max_steps {
        let next = rk4(z, h, params);
        let t = T::from_usize_lossy(k) * h;
        if k > 0 && ray0.crossed(z, next) {
            let (zc, tau) = refine(z, h, &ray0, params);
            let qc = QState::new(zc[0], zc[1]);
            let dc = divergence(&qc, params);
            integral += T::lit(0.5) * tau * (d_prev + dc);
            orbit_times.push(t + tau);
            orbit.push(qc);
            period = Some(t + tau);
            break;
        }
        let qn = QState::new(next[0], next[1]);
        let dn = divergence(&qn, params);
        integral += T::lit(0.5) * h * (d_prev + dn);
        d_prev = dn;
        z = next;
        orbit_times.push(t + h);
        orbit.push(qn);
    }
    let period = period.ok_or(RodError::NoReturn {
        budget: budget.as_f64(),
    })?;

    let ln_rho_tilde = multiplier_by_sections(x_star, params, h, opts)?;
    let (r_min, r_max) = orbit.iter().fold((T::infinity(), T::zero()), |(lo, hi), q| {
        let r = q.radius();
        (lo.min(r), hi.max(r))
    });
    let half = T::lit(0.5);
    Ok(CycleReport {
        params: *params,
        annulus: *annulus,
        x_star,
        period,
        rho: integral.exp(),
        ln_rho: integral,
        rho_tilde: ln_rho_tilde.exp(),
        ln_rho_tilde,
        lambda: -ln_rho_tilde / period,
        orbit_times,
        orbit,
        eig_bounds: (half - r_max, half + r_max),
        r_min,
        r_max,
        iterates,
        step: h,
    })
}

/// `ln |P'(x*)|` as a sum of log-derivatives of the transition maps between
/// consecutive rays `θ_j = −2πj/m`, each by a symmetric difference.
///
/// The full return map contracts below machine resolution in one turn, so
/// differencing it directly would only measure rounding.
fn multiplier_by_sections<T: Scalar>(
    x_star: T,
    params: &ModelParams<T>,
    h: T,
    opts: &CycleOptions<T>,
) -> Result<T> {
    let m = opts.fd_sections;
    let budget = return_budget(params);
    let rays: Vec<Ray<T>> = (0..=m)
        .map(|j| {
            if j == m {
                Ray::at(T::zero())
            } else {
                Ray::at(-T::TAU() * T::from_usize_lossy(j) / T::from_usize_lossy(m))
            }
        })
        .collect();
    let mut base = [x_star, T::zero()];
    let mut ln_sum = T::zero();
    for j in 0..m {
        let (from, to) = (&rays[j], &rays[j + 1]);
        let s = from.along(base);
        let delta = opts.fd_rel_offset * s;
        // With a single section the target ray is the start ray itself.
        let skip = m == 1;
        let (zp, _) = flow_to_ray(from.point(s + delta), to, params, h, budget, skip)?;
        let (zm, _) = flow_to_ray(from.point(s - delta), to, params, h, budget, skip)?;
        let deriv = (to.along(zp) - to.along(zm)) / (T::lit(2.0) * delta);
        if !(deriv > T::zero()) {
            return Err(RodError::Numerical(format!(
                "transition map derivative {deriv} on section {j} is not positive"
            )));
        }
        ln_sum += deriv.ln();
        let (next, _) = flow_to_ray(from.point(s), to, params, h, budget, skip)?;
        base = next;
    }
    Ok(ln_sum)
}

/// Fitted exponential rate, or a marker that the start already sits on the
/// cycle so no decay can be measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateEstimate<T> {
    Fitted {
        rate: T,
        intercept: T,
        r_squared: T,
        points: usize,
    },
    Degenerate,
}

impl<T: Scalar> RateEstimate<T> {
    /// The rate, with `+∞` standing for the degenerate case.
    pub fn value(&self) -> T {
        match self {
            RateEstimate::Fitted { rate, .. } => *rate,
            RateEstimate::Degenerate => T::infinity(),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, RateEstimate::Degenerate)
    }
}

/// A trajectory and the periodic solution with the same asymptotic phase,
/// both on one time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPair<T> {
    pub times: Vec<T>,
    pub states: Vec<QState<T>>,
    pub reference: Vec<QState<T>>,
}

/// Pairs the trajectory from `q0` with its asymptotic phase on the cycle.
///
/// The trajectory is followed until a section crossing lands on `x*`
/// (within the cycle tolerance); if that crossing happens at `t_k`, the
/// matching periodic solution is `Γ(t − t_k)`. Both are then sampled on the
/// rk4 grid over `[0, horizon]`.
pub fn align_to_cycle<T: Scalar>(
    q0: &QState<T>,
    cycle: &CycleReport<T>,
    params: &ModelParams<T>,
    h: T,
    horizon: T,
) -> Result<AlignedPair<T>> {
    let ray0 = Ray::at(T::zero());
    let budget = T::lit(20.0) * cycle.period;
    let max_steps = (budget / h).ceil().to_usize().unwrap_or(usize::MAX);
    let close = tol::<T>(1e-10);
    let mut z = [q0.x, q0.y];
    let mut t_k = None;
    for k in 0..max_steps {
        let next = rk4(z, h, params);
        if ray0.crossed(z, next) {
            let (zc, tau) = refine(z, h, &ray0, params);
            if (zc[0] - cycle.x_star).abs() <= close {
                t_k = Some(T::from_usize_lossy(k) * h + tau);
                break;
            }
        }
        z = next;
    }
    let t_k = t_k.ok_or_else(|| {
        RodError::Numerical("trajectory did not settle on the cycle's section point".into())
    })?;
    let ref0 = cycle.state_at_phase(-t_k);
    let n = (horizon / h).round().to_usize().unwrap_or(0).max(1);
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut reference = Vec::with_capacity(n + 1);
    let mut a = [q0.x, q0.y];
    let mut b = [ref0.x, ref0.y];
    for k in 0..=n {
        times.push(T::from_usize_lossy(k) * h);
        states.push(QState::new(a[0], a[1]));
        reference.push(QState::new(b[0], b[1]));
        a = rk4(a, h, params);
        b = rk4(b, h, params);
    }
    Ok(AlignedPair {
        times,
        states,
        reference,
    })
}

/// Window of errors used for the log-linear fit of the orbit gap.
pub const RATE_FIT_UPPER: f64 = 1e-2;
pub const RATE_FIT_FLOOR: f64 = 1e-9;

/// Decay rate of `‖M(t) − M_per(t)‖_F` with the periodic solution taken at
/// the trajectory's asymptotic phase.
pub fn convergence_rate<T: Scalar>(
    m0: &ConfTensor<T>,
    cycle: &CycleReport<T>,
    params: &ModelParams<T>,
    config: &OdeConfig<T>,
) -> Result<RateEstimate<T>> {
    let q0 = q_from_conf(m0)?;
    let r0 = q0.radius();
    if !cycle.annulus.contains(r0) {
        return Err(RodError::InvalidState(format!(
            "r(0) = {r0} lies outside [{}, {}]",
            cycle.annulus.r1, cycle.annulus.r2
        )));
    }
    let pair = align_to_cycle(&q0, cycle, params, config.step, config.t_end)?;
    let sqrt2 = T::SQRT_2();
    let errors: Vec<T> = pair
        .states
        .iter()
        .zip(&pair.reference)
        .map(|(a, b)| sqrt2 * (a.x - b.x).hypot(a.y - b.y))
        .collect();
    fit_decay(&pair.times, &errors, T::lit(RATE_FIT_UPPER), T::lit(RATE_FIT_FLOOR))
}

/// Fits `ln v = c − rate·t` over samples with `floor < v < upper`.
///
/// Returns [`RateEstimate::Degenerate`] when the series starts below the
/// floor, and a fit error when the window holds fewer than 8 samples.
pub fn fit_decay<T: Scalar>(times: &[T], values: &[T], upper: T, floor: T) -> Result<RateEstimate<T>> {
    if values.first().is_some_and(|&v| v <= floor) {
        return Ok(RateEstimate::Degenerate);
    }
    let end = values.iter().position(|&v| v <= floor).unwrap_or(values.len());
    let pts: Vec<(f64, f64)> = times[..end]
        .iter()
        .zip(&values[..end])
        .filter(|(_, &v)| v < upper && v > floor)
        .map(|(t, v)| (t.as_f64(), v.as_f64().ln()))
        .collect();
    if pts.len() < 8 {
        return Err(RodError::Fit(format!(
            "only {} samples between {} and {}",
            pts.len(),
            floor,
            upper
        )));
    }
    let fit = crate::fit::linear_fit(&pts)?;
    Ok(RateEstimate::Fitted {
        rate: T::lit(-fit.slope),
        intercept: T::lit(fit.intercept),
        r_squared: T::lit(fit.r_squared),
        points: pts.len(),
    })
}
