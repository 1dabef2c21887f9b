//! Globally adaptive 15-point Gauss-Kronrod quadrature.

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
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: 1e-15, rel: 1e-12 }
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Integrate `f` over `[a, b]`; returns `(value, error_estimate)`.
pub fn integrate_with_error<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    let mut parts = vec![(a, b, kronrod(&f, a, b))];
    loop {
        let total: f64 = parts.iter().map(|p| p.2 .0).sum();
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        if err <= tol.abs.max(tol.rel * total.abs()) || parts.len() >= MAX_INTERVALS {
            return (total, err);
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .expect("non-empty");
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval exhausted at machine precision.
            return (total, err);
        }
        parts.push((lo, mid, kronrod(&f, lo, mid)));
        parts.push((mid, hi, kronrod(&f, mid, hi)));
    }
}

/// Integrate `f` over `[a, b]` with default tolerances.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    integrate_with_error(f, a, b, Tolerance::default()).0
}

/// Integrate `f` over `[a, inf)` via `x = a + s / (1 - s)`.
pub fn integrate_to_inf<F: Fn(f64) -> f64>(f: F, a: f64) -> f64 {
    let g = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let d = 1.0 - s;
        let v = f(a + s / d) / (d * d);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0)
}

/// Integrate `f` over the whole real line.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F) -> f64 {
    integrate_to_inf(&f, 0.0) + integrate_to_inf(|x| f(-x), 0.0)
}

/// Expectation of `f(G)` for a standard normal `G`.
pub fn normal_expectation<F: Fn(f64) -> f64>(f: F) -> f64 {
    integrate_real_line(|x| f(x) * crate::gauss::pdf(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x, 0.0, 3.0);
        assert!((v - (81.0 / 4.0 - 9.0)).abs() < 1e-13);
    }

    #[test]
    fn normal_moments() {
        assert!((normal_expectation(|_| 1.0) - 1.0).abs() < 1e-12);
        assert!((normal_expectation(|x| x * x) - 1.0).abs() < 1e-12);
        assert!((normal_expectation(|x| x.powi(4)) - 3.0).abs() < 1e-11);
    }

    #[test]
    fn kink_handled() {
        let v = integrate(|x: f64| x.abs(), -1.0, 2.0);
        assert!((v - 2.5).abs() < 1e-10);
    }
}
