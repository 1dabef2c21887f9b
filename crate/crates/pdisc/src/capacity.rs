//! Storage-capacity bounds: the first-moment upper bound and a numerical
//! lower bound from the reweighted second moment.
//!
//! The overlap functional `e(q) = E_q[f(G1) f(G2)]`, with
//! `f(x) = exp(-c x) 1{x >= kappa}` and `corr(G1, G2) = q`, is not evaluated
//! by brute-force bivariate quadrature. Gaussian interpolation gives
//! `e'(q) = E_q[f'(G1) f'(G2)]` with the distributional derivative of `f`,
//! which here is `c^2 e(q) + h(q)` for an explicit `h`. Hence
//!
//! `e(q) - e(0) = e(0) expm1(c^2 q) + exp(c^2 q) int_0^q exp(-c^2 s) h(s) ds`
//!
//! and the increment is computed directly, without subtracting two numbers
//! close to one. This matters because `alpha` multiplies `log e(q)` and is of
//! order `1 / cdf(kappa)`.

use crate::analytics::hinge_sq;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gauss::{cdf, entropy, pdf, sf};
use crate::quad::{self, Tolerance};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_2_PI, LN_2, PI};

/// Default number of `q` grid points on `[-1, 1]`.
pub const Q_GRID: usize = 2001;
/// Default relative tolerance of the `alpha_low` bisection.
pub const ALPHA_TOL: f64 = 1e-6;
/// Strict gap demanded between `Psi(0)` and `Psi(q)` away from the origin.
pub const PSI_GAP: f64 = 1e-9;

/// First-moment bound `-log 2 / log(1 - cdf(kappa))`.
pub fn alpha_up_first_moment(kappa: f64) -> f64 {
    -LN_2 / (-cdf(kappa)).ln_1p()
}

/// Gaussian-comparison bound `(2 / pi) / E[(kappa - G)_+^2]`.
pub fn alpha_up_gordon(kappa: f64) -> f64 {
    FRAC_2_PI / hinge_sq(kappa, 1.0)
}

/// Upper bound on the capacity: first moment for `kappa < 0`, Gaussian
/// comparison for `kappa >= 0`.
pub fn alpha_up(kappa: f64) -> f64 {
    if kappa < 0.0 {
        alpha_up_first_moment(kappa)
    } else {
        alpha_up_gordon(kappa)
    }
}

/// Positive root of `c sf(kappa + c) = pdf(kappa + c)`.
pub fn c_star(kappa: f64) -> Result<f64> {
    if !(kappa < 0.0) {
        return Err(Error::Domain(format!("c_star needs kappa < 0, got {kappa}")));
    }
    let f = |c: f64| c * sf(kappa + c) - pdf(kappa + c);
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `e(q)` on a grid of `q` in `[-1, 1]` for one `kappa < 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OverlapFunctional {
    pub kappa: f64,
    pub c_star: f64,
    /// `e(0) = E[f(G)]^2`.
    pub e0: f64,
    /// Grid points, ascending, containing `0` when the size is odd.
    pub q: Vec<f64>,
    /// `e(q) - e(0)` on the grid.
    pub increment: Vec<f64>,
}

impl OverlapFunctional {
    pub fn new(kappa: f64, q_grid: usize, exec: Execution) -> Result<Self> {
        if q_grid < 3 {
            return Err(Error::InvalidArgument("q_grid must be at least 3".into()));
        }
        let c = c_star(kappa)?;
        let ef = (0.5 * c * c).exp() * sf(kappa + c);
        let q: Vec<f64> = (0..q_grid)
            .map(|k| -1.0 + 2.0 * k as f64 / (q_grid - 1) as f64)
            .collect();
        let mut of = OverlapFunctional { kappa, c_star: c, e0: ef * ef, q, increment: vec![] };
        // Integrals of the smooth part on each cell, then prefix sums out of 0.
        let cells = exec.map(q_grid - 1, |k| of.weighted_h_integral(of.q[k], of.q[k + 1]));
        let zero = of.q.iter().position(|&x| x >= 0.0).expect("grid spans 0");
        let mut h_int = vec![0.0; q_grid];
        h_int[zero] = if of.q[zero] == 0.0 { 0.0 } else { of.weighted_h_integral(0.0, of.q[zero]) };
        for k in zero + 1..q_grid {
            h_int[k] = h_int[k - 1] + cells[k - 1];
        }
        for k in (0..zero).rev() {
            h_int[k] = h_int[k + 1] - cells[k];
        }
        of.increment = of.q.iter().zip(&h_int).map(|(&q, &hi)| of.increment_from(q, hi)).collect();
        Ok(of)
    }

    fn increment_from(&self, q: f64, h_integral: f64) -> f64 {
        let c2 = self.c_star * self.c_star;
        self.e0 * (c2 * q).exp_m1() + (c2 * q).exp() * h_integral
    }

    /// `h(q) sqrt(1 - q^2)`, the inhomogeneous part of `e'` times the
    /// Jacobian of `q = sin u`.
    fn h_scaled(&self, q: f64) -> f64 {
        let (k, c) = (self.kappa, self.c_star);
        let one_plus = 1.0 + q;
        if one_plus <= 0.0 {
            return 0.0;
        }
        let sigma = ((1.0 - q) * one_plus).max(0.0).sqrt();
        let z = k * ((1.0 - q) / one_plus).sqrt();
        let cross = -2.0 * c * pdf(k) * (-c * k * one_plus + 0.5 * c * c * sigma * sigma).exp() * cdf(-c * sigma - z);
        let diag = (-2.0 * c * k - k * k / one_plus).exp() / (2.0 * PI);
        cross * sigma + diag
    }

    /// `int_a^b exp(-c^2 s) h(s) ds`.
    fn weighted_h_integral(&self, a: f64, b: f64) -> f64 {
        let c2 = self.c_star * self.c_star;
        let (ua, ub) = (a.clamp(-1.0, 1.0).asin(), b.clamp(-1.0, 1.0).asin());
        let tol = Tolerance { abs: 1e-300, rel: 1e-13 };
        quad::integrate_with_error(
            |u| {
                let s = u.sin();
                (-c2 * s).exp() * self.h_scaled(s)
            },
            ua,
            ub,
            tol,
        )
        .0
    }

    /// `e(q) - e(0)` at any `q`, integrating from the nearest grid point.
    pub fn increment_at(&self, q: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&q) {
            return Err(Error::Domain(format!("|q| > 1: {q}")));
        }
        let h = 2.0 / (self.q.len() - 1) as f64;
        let k = (((q + 1.0) / h).round() as usize).min(self.q.len() - 1);
        let c2 = self.c_star * self.c_star;
        let qk = self.q[k];
        // Recover the grid point's h-integral, then extend it to q.
        let hk = ((self.increment[k] - self.e0 * (c2 * qk).exp_m1()) * (-c2 * qk).exp()) + self.weighted_h_integral(qk, q);
        Ok(self.increment_from(q, hk))
    }

    pub fn e(&self, q: f64) -> Result<f64> {
        Ok(self.e0 + self.increment_at(q)?)
    }

    /// `e'(q)` in closed form, for `|q| < 1`.
    pub fn e_prime(&self, q: f64) -> Result<f64> {
        if !(q.abs() < 1.0) {
            return Err(Error::Domain(format!("e'(q) needs |q| < 1, got {q}")));
        }
        let sigma = (1.0 - q * q).sqrt();
        Ok(self.c_star.powi(2) * self.e(q)? + self.h_scaled(q) / sigma)
    }

    /// `e''(0)` from central second differences of the increment, steps
    /// `1e-3` and `5e-4`, combined by Richardson extrapolation.
    pub fn e_second_derivative_at_zero(&self) -> Result<f64> {
        let d2 = |h: f64| -> Result<f64> { Ok((self.increment_at(h)? + self.increment_at(-h)?) / (h * h)) };
        let (a, b) = (d2(1e-3)?, d2(5e-4)?);
        Ok((4.0 * b - a) / 3.0)
    }

    /// `Psi(q; alpha) - Psi(0; alpha)` from a known increment.
    fn psi_gap_from(&self, q: f64, increment: f64, alpha: f64) -> f64 {
        alpha * (increment / self.e0).ln_1p() + entropy(0.5 * (1.0 + q)) - LN_2
    }

    /// `Psi(q; alpha) = alpha log e(q) + Ent((1 + q) / 2) + log 2`.
    pub fn psi(&self, q: f64, alpha: f64) -> Result<f64> {
        Ok(alpha * self.e(q)?.ln() + entropy(0.5 * (1.0 + q)) + LN_2)
    }

    /// `Psi(q; alpha) - Psi(0; alpha)` without cancellation.
    pub fn psi_gap(&self, q: f64, alpha: f64) -> Result<f64> {
        Ok(self.psi_gap_from(q, self.increment_at(q)?, alpha))
    }

    /// Largest `Psi(q) - Psi(0)` over `|q| >= 2 / q_grid`, with its location.
    pub fn worst_gap(&self, alpha: f64) -> Result<(f64, f64)> {
        let min_abs = 2.0 / self.q.len() as f64;
        let (mut best_k, mut best) = (usize::MAX, f64::NEG_INFINITY);
        for (k, (&q, &inc)) in self.q.iter().zip(&self.increment).enumerate() {
            if q.abs() < min_abs {
                continue;
            }
            let g = self.psi_gap_from(q, inc, alpha);
            if g > best {
                best = g;
                best_k = k;
            }
        }
        let mut best_q = self.q[best_k];
        // Golden-section refinement over the neighbouring cells.
        let lo = self.q[best_k.saturating_sub(1)];
        let hi = self.q[(best_k + 1).min(self.q.len() - 1)];
        let (mut a, mut b) = (lo, hi);
        if best_q > 0.0 {
            a = a.max(min_abs);
        } else {
            b = b.min(-min_abs);
        }
        if b > a {
            let gr = 0.5 * (5f64.sqrt() - 1.0);
            let f = |q: f64| self.psi_gap(q, alpha);
            let (mut x1, mut x2) = (b - gr * (b - a), a + gr * (b - a));
            let (mut f1, mut f2) = (f(x1)?, f(x2)?);
            for _ in 0..60 {
                if f1 > f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - gr * (b - a);
                    f1 = f(x1)?;
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + gr * (b - a);
                    f2 = f(x2)?;
                }
            }
            let (q, g) = if f1 > f2 { (x1, f1) } else { (x2, f2) };
            if g > best {
                best = g;
                best_q = q;
            }
        }
        Ok((best_q, best))
    }

    /// `Psi''(0; alpha) = alpha e''(0) / e(0) - 1`.
    pub fn psi_second_derivative_at_zero(&self, alpha: f64) -> Result<f64> {
        Ok(alpha * self.e_second_derivative_at_zero()? / self.e0 - 1.0)
    }

    /// Both admissibility conditions of the second-moment argument.
    pub fn admissible(&self, alpha: f64) -> Result<bool> {
        let (_, gap) = self.worst_gap(alpha)?;
        Ok(gap <= -PSI_GAP && self.psi_second_derivative_at_zero(alpha)? < 0.0)
    }
}

/// `e(q)` by one-dimensional quadrature over `G1` with the inner `G2`
/// expectation in closed form. Independent of [`OverlapFunctional`]; used
/// to cross-check it.
pub fn e_of_q_direct(kappa: f64, c: f64, q: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("|q| > 1: {q}")));
    }
    if q == 1.0 {
        return Ok((2.0 * c * c).exp() * cdf(-2.0 * c - kappa));
    }
    if q == -1.0 {
        return Ok(if kappa < 0.0 { cdf(-kappa) - cdf(kappa) } else { 0.0 });
    }
    let s = (1.0 - q * q).sqrt();
    let inner = |x: f64| {
        let z0 = (kappa - q * x) / s;
        (-c * q * x + 0.5 * c * c * s * s).exp() * cdf(-c * s - z0)
    };
    let f = |x: f64| pdf(x) * (-c * x).exp() * inner(x);
    Ok(quad::integrate_to_inf(f, kappa))
}

/// Largest `alpha` at which the second-moment conditions hold.
pub fn alpha_low(kappa: f64, q_grid: usize, alpha_tol: f64, exec: Execution) -> Result<f64> {
    let of = OverlapFunctional::new(kappa, q_grid, exec)?;
    alpha_low_from(&of, alpha_tol)
}

pub fn alpha_low_from(of: &OverlapFunctional, alpha_tol: f64) -> Result<f64> {
    let mut lo = 1e-6;
    if !of.admissible(lo)? {
        return Err(Error::NoConvergence(format!(
            "no admissible alpha above 1e-6 at kappa={}",
            of.kappa
        )));
    }
    let mut hi = alpha_up(of.kappa);
    while of.admissible(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NoConvergence("admissible set unbounded".into()));
        }
    }
    while hi - lo > alpha_tol * lo {
        let mid = (lo * hi).sqrt();
        if of.admissible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsiCheck {
    pub argmax_q: f64,
    pub psi_second_deriv_at_0: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapacityReport {
    pub kappa: f64,
    pub alpha_up: f64,
    /// At `kappa = 0` the first-moment value, recorded next to `alpha_up`.
    pub alpha_up_first_moment: Option<f64>,
    pub alpha_low: Option<f64>,
    pub c_star: Option<f64>,
    pub psi_check: Option<PsiCheck>,
}

pub fn capacity_report(kappa: f64, q_grid: usize, alpha_tol: f64, exec: Execution) -> Result<CapacityReport> {
    let up = alpha_up(kappa);
    if kappa >= 0.0 {
        return Ok(CapacityReport {
            kappa,
            alpha_up: up,
            alpha_up_first_moment: (kappa == 0.0).then(|| alpha_up_first_moment(0.0)),
            alpha_low: None,
            c_star: None,
            psi_check: None,
        });
    }
    let of = OverlapFunctional::new(kappa, q_grid, exec)?;
    let low = alpha_low_from(&of, alpha_tol)?;
    let (argmax_q, _) = of.worst_gap(low)?;
    Ok(CapacityReport {
        kappa,
        alpha_up: up,
        alpha_up_first_moment: None,
        alpha_low: Some(low),
        c_star: Some(of.c_star),
        psi_check: Some(PsiCheck { argmax_q, psi_second_deriv_at_0: of.psi_second_derivative_at_zero(low)? }),
    })
}
