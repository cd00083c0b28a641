//! Explicit Runge–Kutta integrators over flat state vectors.

use crate::error::{Result, RodError};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OdeMethod {
    Rk4,
    Rk45,
}

impl std::str::FromStr for OdeMethod {
    type Err = RodError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(OdeMethod::Rk4),
            "rk45" | "rk45-adaptive" => Ok(OdeMethod::Rk45),
            other => Err(RodError::InvalidState(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeConfig<T> {
    /// Fixed step for rk4; initial step for rk45.
    pub step: T,
    pub t_end: T,
    pub method: OdeMethod,
    pub rel_tol: T,
    pub abs_tol: T,
    /// Keep every `stride`-th step in recorded output.
    pub stride: usize,
}

impl<T: Scalar> OdeConfig<T> {
    pub fn rk4(step: T, t_end: T) -> Self {
        OdeConfig {
            step,
            t_end,
            method: OdeMethod::Rk4,
            rel_tol: T::lit(1e-10),
            abs_tol: T::lit(1e-12),
            stride: 1,
        }
    }

    pub fn rk45(t_end: T, rel_tol: T, abs_tol: T) -> Self {
        OdeConfig {
            step: T::lit(1e-3),
            t_end,
            method: OdeMethod::Rk45,
            rel_tol,
            abs_tol,
            stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_t_end(mut self, t_end: T) -> Self {
        self.t_end = t_end;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > T::zero()) || !self.step.is_finite() {
            return Err(RodError::param("step", "step > 0", self.step));
        }
        if !(self.t_end > T::zero()) || !self.t_end.is_finite() {
            return Err(RodError::param("t_end", "t_end > 0", self.t_end));
        }
        if !(self.rel_tol > T::zero()) {
            return Err(RodError::param("rel_tol", "rel_tol > 0", self.rel_tol));
        }
        if !(self.abs_tol > T::zero()) {
            return Err(RodError::param("abs_tol", "abs_tol > 0", self.abs_tol));
        }
        if self.stride == 0 {
            return Err(RodError::param("stride", "stride ≥ 1", self.stride));
        }
        Ok(())
    }

    /// Number of rk4 steps covering `[0, t_end]`.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.step).round().to_usize().unwrap_or(0).max(1)
    }
}

/// Scratch buffers for classical fourth-order Runge–Kutta.
#[derive(Clone, Debug)]
pub struct Rk4<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Scalar> Rk4<T> {
    pub fn new(n: usize) -> Self {
        Rk4 {
            k1: vec![T::zero(); n],
            k2: vec![T::zero(); n],
            k3: vec![T::zero(); n],
            k4: vec![T::zero(); n],
            tmp: vec![T::zero(); n],
        }
    }

    /// Advances `y` in place from `t` to `t + h`.
    pub fn step<F>(&mut self, f: &mut F, t: T, y: &mut [T], h: T)
    where
        F: FnMut(T, &[T], &mut [T]),
    {
        let half = h * T::lit(0.5);
        f(t, y, &mut self.k1);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + half * self.k1[i];
        }
        f(t + half, &self.tmp, &mut self.k2);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + half * self.k2[i];
        }
        f(t + half, &self.tmp, &mut self.k3);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4);
        let sixth = h / T::lit(6.0);
        for i in 0..y.len() {
            y[i] += sixth * (self.k1[i] + T::lit(2.0) * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }

    /// Derivative at the start of the last step.
    pub fn last_slope(&self) -> &[T] {
        &self.k1
    }
}

pub fn rk4_step<T: Scalar, F>(f: &mut F, t: T, y: &mut [T], h: T)
where
    F: FnMut(T, &[T], &mut [T]),
{
    Rk4::new(y.len()).step(f, t, y, h);
}

fn failure<T: Scalar>(t: T, reason: impl Into<String>, y: &[T]) -> RodError {
    RodError::IntegrationFailure {
        t: t.as_f64(),
        reason: reason.into(),
        last_state: y.iter().map(|v| v.as_f64()).collect(),
    }
}

/// Integrates `y' = f(t, y)` over `[0, cfg.t_end]`, calling `observe` at
/// `t = 0`, every `stride` accepted steps, and at `t_end`.
///
/// Rk4 times are computed as `k·h` so long runs carry no summation drift.
pub fn solve<T, F, O>(f: &mut F, y0: &[T], cfg: &OdeConfig<T>, mut observe: O) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(T, &[T], &mut [T]),
    O: FnMut(T, &[T]) -> Result<()>,
{
    cfg.validate()?;
    let mut y = y0.to_vec();
    observe(T::zero(), &y)?;
    match cfg.method {
        OdeMethod::Rk4 => {
            let n = cfg.n_steps();
            let h = cfg.t_end / T::from_usize_lossy(n);
            let mut rk = Rk4::new(y.len());
            for k in 0..n {
                let t = T::from_usize_lossy(k) * h;
                let good = y.clone();
                rk.step(f, t, &mut y, h);
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(failure(t, "non-finite state", &good));
                }
                if (k + 1) % cfg.stride == 0 || k + 1 == n {
                    observe(T::from_usize_lossy(k + 1) * h, &y)?;
                }
            }
        }
        OdeMethod::Rk45 => {
            let mut dp = DormandPrince::new(y.len(), cfg.rel_tol, cfg.abs_tol);
            let mut t = T::zero();
            let mut h = cfg.step.min(cfg.t_end);
            let mut accepted = 0usize;
            while t < cfg.t_end {
                let last = t + h >= cfg.t_end;
                if last {
                    h = cfg.t_end - t;
                }
                let (t_new, h_next) = dp.advance(f, t, &mut y, h)?;
                t = if last { cfg.t_end } else { t_new };
                h = h_next;
                accepted += 1;
                if accepted % cfg.stride == 0 || t >= cfg.t_end {
                    observe(t, &y)?;
                }
            }
        }
    }
    Ok(y)
}

/// Dormand–Prince 5(4) with a standard PI-free step controller.
#[derive(Clone, Debug)]
pub struct DormandPrince<T> {
    k: [Vec<T>; 7],
    tmp: Vec<T>,
    y5: Vec<T>,
    rel_tol: T,
    abs_tol: T,
    pub max_rejections: usize,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

impl<T: Scalar> DormandPrince<T> {
    pub fn new(n: usize, rel_tol: T, abs_tol: T) -> Self {
        DormandPrince {
            k: std::array::from_fn(|_| vec![T::zero(); n]),
            tmp: vec![T::zero(); n],
            y5: vec![T::zero(); n],
            rel_tol,
            abs_tol,
            max_rejections: 50,
        }
    }

    /// Takes one accepted step starting with trial size `h`; returns the
    /// new time and the suggested next step.
    pub fn advance<F>(&mut self, f: &mut F, t: T, y: &mut [T], mut h: T) -> Result<(T, T)>
    where
        F: FnMut(T, &[T], &mut [T]),
    {
        let n = y.len();
        let h_min = T::epsilon() * T::lit(16.0) * t.abs().max(T::one());
        for _ in 0..self.max_rejections {
            if h < h_min {
                return Err(failure(t, "step size underflow", y));
            }
            f(t, y, &mut self.k[0]);
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = T::zero();
                    for j in 0..s {
                        acc += T::lit(A[s][j]) * self.k[j][i];
                    }
                    self.tmp[i] = y[i] + h * acc;
                }
                f(t + T::lit(C[s]) * h, &self.tmp, &mut self.k[s]);
            }
            let mut err_sq = T::zero();
            for i in 0..n {
                let mut hi = T::zero();
                let mut lo = T::zero();
                for s in 0..7 {
                    hi += T::lit(B5[s]) * self.k[s][i];
                    lo += T::lit(B4[s]) * self.k[s][i];
                }
                self.y5[i] = y[i] + h * hi;
                let sc = self.abs_tol + self.rel_tol * y[i].abs().max(self.y5[i].abs());
                let e = h * (hi - lo) / sc;
                err_sq += e * e;
            }
            let err = (err_sq / T::from_usize_lossy(n.max(1))).sqrt();
            if !err.is_finite() {
                h *= T::lit(0.25);
                continue;
            }
            let factor = if err == T::zero() {
                T::lit(5.0)
            } else {
                (T::lit(0.9) * err.powf(T::lit(-0.2))).min(T::lit(5.0)).max(T::lit(0.2))
            };
            if err <= T::one() {
                y.copy_from_slice(&self.y5);
                return Ok((t + h, h * factor));
            }
            h *= factor.min(T::one());
        }
        Err(failure(t, "too many rejected steps", y))
    }
}
