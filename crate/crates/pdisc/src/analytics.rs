//! Gaussian order parameters of the LP stage.
//!
//! Closed forms used throughout (G standard normal, a = kappa / rho):
//!
//! * `E[G^2; |G| < t] = 1 - 2 sf(t) - 2 t pdf(t)`
//! * `E[min(|G|, t)^2] = E[G^2; |G| < t] + 2 t^2 sf(t)`
//! * `E[(|G| - t)_+] = 2 (pdf(t) - t sf(t))`
//! * `E[(kappa - rho G)_+^2] = (rho^2 + kappa^2) cdf(a) + kappa rho pdf(a)`
//!
//! The first follows from integrating `x^2 pdf(x)` by parts; the rest are
//! direct. `validate_closed_forms` checks each against quadrature.

use crate::error::{Error, Result};
use crate::gauss::{cdf, pdf, quantile, sf};
use crate::quad;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_2_PI, PI};

/// `sqrt(2 / pi) = E|G|`.
pub const MEAN_ABS_NORMAL: f64 = 0.797_884_560_802_865_4;

/// Moments of a clipped standard normal that enter the order parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaussianMoment {
    /// `E[min(|G|, t)^2]`
    ClippedSquare,
    /// `E[(|G| - t)_+]`
    Excess,
    /// `E[min(|G| / t, 1)^2]`
    ScaledClippedSquare,
}

/// `E[G^2; |G| < t]`, with a power series where the closed form cancels.
pub fn truncated_second_moment(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t < 0.5 {
        // sqrt(2/pi) * sum_k (-1/2)^k / k! * t^(2k+3) / (2k+3)
        let t2 = t * t;
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..30 {
            let c = term / (2 * k + 3) as f64;
            sum += c;
            if c.abs() < 1e-18 * sum.abs() {
                break;
            }
            term *= -0.5 * t2 / (k + 1) as f64;
        }
        return MEAN_ABS_NORMAL * t2 * t * sum;
    }
    1.0 - 2.0 * sf(t) - 2.0 * t * pdf(t)
}

/// Evaluate one of the clipped-normal moments at `t > 0`.
pub fn gaussian_moment(kind: GaussianMoment, t: f64) -> f64 {
    match kind {
        GaussianMoment::ClippedSquare => truncated_second_moment(t) + 2.0 * t * t * sf(t),
        GaussianMoment::Excess => 2.0 * (pdf(t) - t * sf(t)),
        GaussianMoment::ScaledClippedSquare => {
            if t <= 0.0 {
                1.0
            } else {
                truncated_second_moment(t) / (t * t) + 2.0 * sf(t)
            }
        }
    }
}

/// `E[(kappa - rho G)_+^2]` for `rho >= 0`.
pub fn hinge_sq(kappa: f64, rho: f64) -> f64 {
    if rho <= 0.0 {
        return kappa.max(0.0).powi(2);
    }
    let a = kappa / rho;
    (rho * rho + kappa * kappa) * cdf(a) + kappa * rho * pdf(a)
}

/// The `t` solving `rho^2 = E[min(|G| / t, 1)^2]`; `t(1) = 0`, `t(0) = inf`.
pub fn t_of_rho(rho: f64) -> f64 {
    if rho >= 1.0 {
        return 0.0;
    }
    if rho <= 0.0 {
        return f64::INFINITY;
    }
    let target = rho * rho;
    let h = |t: f64| gaussian_moment(GaussianMoment::ScaledClippedSquare, t);
    let mut hi = 1.0;
    while h(hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The concave profile `phi(rho)`; `phi(0) = 0`, `phi(1) = sqrt(2 / pi)`.
pub fn phi(rho: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    if rho >= 1.0 {
        return MEAN_ABS_NORMAL;
    }
    let t = t_of_rho(rho);
    0.5 * rho * rho * t
        + gaussian_moment(GaussianMoment::ClippedSquare, t) / (2.0 * t)
        + gaussian_moment(GaussianMoment::Excess, t)
}

/// `phi'(rho) = rho t(rho)`; equals 1 at the origin.
pub fn phi_prime(rho: f64) -> f64 {
    if rho <= 0.0 {
        return 1.0;
    }
    rho * t_of_rho(rho)
}

/// Solution of the LP-stage maximin problem at `(alpha, kappa)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderParams {
    pub alpha: f64,
    pub kappa: f64,
    pub rho: f64,
    pub t: f64,
    pub gamma: f64,
    /// Limiting normalised LP objective `sqrt(phi^2 - alpha E[(kappa - rho G)_+^2])`.
    pub objective: f64,
}

impl OrderParams {
    /// Predicted fraction of LP coordinates at `+-1`.
    pub fn tight_fraction(&self) -> f64 {
        2.0 * sf(self.t)
    }

    /// First-order residual `phi(rho) t(rho) - alpha cdf(kappa / rho)`.
    pub fn foc_residual(&self) -> f64 {
        phi(self.rho) * self.t - self.alpha * cdf(self.kappa / self.rho)
    }

    pub fn margin_law(&self) -> MarginLaw {
        MarginLaw { kappa: self.kappa, rho: self.rho }
    }
}

/// `F(rho) = phi(rho)^2 - alpha E[(kappa - rho G)_+^2]`, concave in `rho`.
pub fn gordon_value(alpha: f64, kappa: f64, rho: f64) -> f64 {
    phi(rho).powi(2) - alpha * hinge_sq(kappa, rho)
}

/// Maximise `F` over `rho` in `(0, 1]` and derive `t` and `gamma`.
pub fn solve_order_params(alpha: f64, kappa: f64) -> Result<OrderParams> {
    if !(alpha >= 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha={alpha}, kappa={kappa}")));
    }
    // sign(F') = sign(g) with g decreasing; g(1-) < 0 whenever alpha > 0.
    let g = |rho: f64| phi(rho) * t_of_rho(rho) - alpha * cdf(kappa / rho);
    let (mut lo, mut hi) = (1e-6, 1.0 - 1e-9);
    let rho = if alpha == 0.0 {
        1.0
    } else if g(lo) <= 0.0 {
        lo
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let a = phi(rho);
    let b2 = alpha * hinge_sq(kappa, rho);
    let gap = a * a - b2;
    if !(gap > 0.0) {
        return Err(Error::Infeasible(format!(
            "alpha={alpha} is at or above the LP feasibility threshold for kappa={kappa}"
        )));
    }
    let objective = gap.sqrt();
    Ok(OrderParams {
        alpha,
        kappa,
        rho,
        t: t_of_rho(rho),
        gamma: b2.sqrt() / objective,
        objective,
    })
}

/// `sup_rho phi(rho)^2 / E[(kappa - rho G)_+^2]`: the largest `alpha` at
/// which the LP stage is feasible at margin `kappa`.
pub fn feasibility_threshold(kappa: f64) -> f64 {
    if kappa < 0.0 {
        return f64::INFINITY;
    }
    if kappa == 0.0 {
        return 2.0;
    }
    let ratio = |rho: f64| phi(rho).powi(2) / hinge_sq(kappa, rho);
    let n = 400;
    let (mut best_i, mut best) = (n, ratio(1.0));
    for i in 1..n {
        let r = ratio(i as f64 / n as f64);
        if r > best {
            best = r;
            best_i = i;
        }
    }
    // Golden-section refinement on the bracketing cell.
    let mut a = (best_i as f64 - 1.0) / n as f64;
    let mut b = ((best_i + 1) as f64 / n as f64).min(1.0);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let x1 = b - gr * (b - a);
        let x2 = a + gr * (b - a);
        if ratio(x1.max(1e-12)) > ratio(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    best.max(ratio((0.5 * (a + b)).max(1e-12)))
}

/// Limiting empirical law of normalised LP margins: `max(rho G, kappa)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginLaw {
    pub kappa: f64,
    pub rho: f64,
}

impl MarginLaw {
    /// Probability mass sitting exactly at `kappa`.
    pub fn atom_mass(&self) -> f64 {
        if self.rho <= 0.0 {
            return 1.0;
        }
        cdf(self.kappa / self.rho)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if self.rho <= 0.0 || p <= self.atom_mass() {
            return if self.rho <= 0.0 { self.kappa.max(0.0) } else { self.kappa };
        }
        self.rho * quantile(p)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y < self.kappa {
            0.0
        } else if self.rho <= 0.0 {
            1.0
        } else {
            cdf(y / self.rho)
        }
    }

    /// `E f(Y)` by quadrature over the continuous part plus the atom.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        if self.rho <= 0.0 {
            return f(self.kappa.max(0.0));
        }
        let a = self.kappa / self.rho;
        let atom = cdf(a) * f(self.kappa);
        atom + quad::integrate_to_inf(|g| pdf(g) * f(self.rho * g), a)
    }
}

/// Second-stage inputs implied by the LP order parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Params {
    /// Predicted tight fraction `2 sf(t)`.
    pub r: f64,
    /// Aspect ratio of the residual problem, `alpha / (1 - r)`.
    pub alpha0: f64,
    /// Normalised squared norm on the free coordinates, `(rho^2 - r) / (1 - r)`.
    pub r0: f64,
    pub order: OrderParams,
}

pub fn effective_stage2(alpha: f64, kappa0: f64) -> Result<Stage2Params> {
    let order = solve_order_params(alpha, kappa0)?;
    let r = order.tight_fraction();
    if r >= 1.0 {
        return Err(Error::Degenerate(format!("every coordinate tight at alpha = {alpha}, kappa0 = {kappa0}")));
    }
    Ok(Stage2Params {
        r,
        alpha0: alpha / (1.0 - r),
        r0: (order.rho * order.rho - r) / (1.0 - r),
        order,
    })
}

/// Largest absolute gap between each closed form and direct quadrature on a
/// fixed grid.
pub fn validate_closed_forms() -> f64 {
    let mut worst: f64 = 0.0;
    for &t in &[0.01, 0.05, 0.2, 0.49, 0.51, 1.0, 1.7, 3.0, 6.0] {
        let clip = quad::normal_expectation(|g| g.abs().min(t).powi(2));
        let excess = quad::normal_expectation(|g| (g.abs() - t).max(0.0));
        let scaled = quad::normal_expectation(|g| (g.abs() / t).min(1.0).powi(2));
        worst = worst
            .max((clip - gaussian_moment(GaussianMoment::ClippedSquare, t)).abs())
            .max((excess - gaussian_moment(GaussianMoment::Excess, t)).abs())
            .max((scaled - gaussian_moment(GaussianMoment::ScaledClippedSquare, t)).abs());
    }
    for &kappa in &[-3.0, -0.5, 0.0, 1.0, 3.42] {
        for &rho in &[0.1, 0.6, 1.0] {
            let q = quad::normal_expectation(|g| (kappa - rho * g).max(0.0).powi(2));
            worst = worst.max((q - hinge_sq(kappa, rho)).abs());
        }
    }
    worst
}

/// Limiting normalised LP objective in the unconstrained case, `E|G| = sqrt(2/pi)`.
pub fn unconstrained_objective() -> f64 {
    FRAC_2_PI.sqrt()
}

/// `t(rho) / (1 - rho)` as `rho -> 1`.
pub fn t_slope_at_one() -> f64 {
    3.0 * (PI / 2.0).sqrt()
}
