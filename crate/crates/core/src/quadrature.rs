//! Adaptive Gauss–Kronrod quadrature in one and two dimensions.
//!
//! Used as an independent check on closed-form Gaussian functionals.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
/// Gauss weights for the nodes `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate on `[a, b]` and its difference from the
/// embedded 7-point Gauss rule.
pub fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Recursive bisection until each piece's error estimate meets its share
/// of `tol`.
pub fn integrate(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth >= 40 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(f, a, b, tol, 0)
}

/// `∫∫ f(x, y)` over a rectangle by nested adaptive rules.
pub fn integrate_2d(
    f: &mut impl FnMut(f64, f64) -> f64,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    tol: f64,
) -> f64 {
    let inner_tol = tol / (x1 - x0).abs().max(1.0);
    integrate(
        &mut |x| integrate(&mut |y| f(x, y), y0, y1, inner_tol),
        x0,
        x1,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rule_is_exact_for_high_degree_polynomials() {
        let (v, _) = gk15(&mut |x| x.powi(20), -1.0, 1.0);
        assert!((v - 2.0 / 21.0).abs() < 1e-15);
        let (v, _) = gk15(&mut |x| x.powi(13) + 3.0 * x * x, 0.0, 2.0);
        assert!((v - (2f64.powi(14) / 14.0 + 8.0)).abs() < 1e-10);
    }

    #[test]
    fn weights_integrate_constants() {
        let (v, _) = gk15(&mut |_| 1.0, -1.0, 1.0);
        assert!((v - 2.0).abs() < 1e-15);
        let gauss: f64 = 2.0 * (WG[0] + WG[1] + WG[2]) + WG[3];
        assert!((gauss - 2.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_gaussian_integrals() {
        let v = integrate(&mut |x| (-x * x).exp(), -8.0, 8.0, 1e-13);
        assert!((v - PI.sqrt()).abs() < 1e-12);
        let v = integrate_2d(
            &mut |x, y| (-(x * x + y * y) / 2.0).exp() * x * x,
            (-9.0, 9.0),
            (-9.0, 9.0),
            1e-12,
        );
        assert!((v - 2.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let v = integrate(&mut |x: f64| x.abs().sqrt(), -1.0, 1.0, 1e-10);
        assert!((v - 4.0 / 3.0).abs() < 1e-8);
    }
}
