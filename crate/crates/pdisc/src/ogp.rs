//! First-moment exponent for `m`-tuples of solutions with pairwise overlaps
//! in a window, and the bivariate Gaussian tail bound it rests on.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gauss::{cdf, entropy, ln_cdf, quantile};
use crate::rng::{derive_seed, stream_rng, Stream};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

/// Largest `A` accepted by [`joint_tail_bound`]; the bound is only claimed
/// for sufficiently negative thresholds.
pub const JOINT_TAIL_MAX_A: f64 = -2.0;
/// Draws per Monte-Carlo chunk; each chunk has its own seed.
pub const MC_CHUNK: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OgpQuery {
    pub m: usize,
    pub beta: f64,
    pub eta: f64,
    pub alpha: f64,
    pub kappa: f64,
    /// `log |I| / N`.
    pub iota: f64,
}

impl OgpQuery {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        if !(0.0 < self.eta && self.eta < self.beta && self.beta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < eta < beta < 1, got eta = {}, beta = {}",
                self.eta, self.beta
            )));
        }
        if !(self.iota >= 0.0) || !(self.alpha >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need iota >= 0, alpha >= 0 and finite kappa, got {:?}",
                self
            )));
        }
        Ok(())
    }

    /// Counting part `log 2 + (m - 1) Ent((1 + beta - eta) / 2) + m iota`.
    pub fn entropy_term(&self) -> f64 {
        LN_2 + (self.m as f64 - 1.0) * entropy(0.5 * (1.0 + self.beta - self.eta)) + self.m as f64 * self.iota
    }

    /// `log(1 - m Phi(kappa) + 2 m (m - 1) Phi(kappa) Phi(-|kappa| sqrt((1 - beta) / 2)))`.
    ///
    /// The correction to 1 is formed in log space, so it stays accurate
    /// when `Phi(kappa)` is far below machine epsilon.
    pub fn log_term(&self) -> Result<f64> {
        let m = self.m as f64;
        let pair = cdf(-self.kappa.abs() * (0.5 * (1.0 - self.beta)).sqrt());
        let factor = 1.0 - 2.0 * (m - 1.0) * pair;
        let x = if factor == 0.0 {
            0.0
        } else {
            -factor.signum() * (m.ln() + ln_cdf(self.kappa) + factor.abs().ln()).exp()
        };
        if !(x > -1.0) {
            return Err(Error::Domain(format!(
                "log argument {} is not positive (m = {} too large for kappa = {})",
                1.0 + x,
                self.m,
                self.kappa
            )));
        }
        Ok(x.ln_1p())
    }
}

/// Per-`N` first-moment exponent; negative certifies emptiness to first order.
pub fn ogp_exponent(q: &OgpQuery) -> Result<f64> {
    q.validate()?;
    Ok(q.entropy_term() + q.alpha * q.log_term()?)
}

/// The `alpha` at which the exponent vanishes. The exponent is affine in
/// `alpha`, so the root is exact; `None` if the log term is nonnegative.
pub fn ogp_alpha_root(q: &OgpQuery) -> Result<Option<f64>> {
    q.validate()?;
    let b = q.log_term()?;
    Ok((b < 0.0).then(|| -q.entropy_term() / b))
}

/// Window and tuple size `beta = 1 - 9 L / kappa^2`, `eta = L / kappa^2`,
/// `m = floor(kappa^2)` with `L = log^2 |kappa|`, at `alpha = c1 L / (kappa^2 Phi(kappa))`.
pub fn large_margin_query(kappa: f64, c1: f64) -> Result<OgpQuery> {
    if !(kappa < -1.0) {
        return Err(Error::Domain(format!("large-margin query needs kappa < -1, got {kappa}")));
    }
    let l = kappa.abs().ln().powi(2);
    let k2 = kappa * kappa;
    Ok(OgpQuery {
        m: k2.floor() as usize,
        beta: 1.0 - 9.0 * l / k2,
        eta: l / k2,
        alpha: c1 * l / (k2 * ln_cdf(kappa).exp()),
        kappa,
        iota: 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Scan {
    pub c1: f64,
    pub exponent: f64,
    pub query: OgpQuery,
}

/// Smallest `c1 = 2^j`, `0 <= j <= max_pow`, with a negative exponent in
/// [`large_margin_query`].
pub fn scan_c1(kappa: f64, max_pow: u32) -> Result<C1Scan> {
    for j in 0..=max_pow {
        let c1 = 2f64.powi(j as i32);
        let query = large_margin_query(kappa, c1)?;
        let exponent = ogp_exponent(&query)?;
        if exponent < 0.0 {
            return Ok(C1Scan { c1, exponent, query });
        }
    }
    Err(Error::NoConvergence(format!("no c1 <= 2^{max_pow} gives a negative exponent at kappa = {kappa}")))
}

/// `4 Phi(A) (1 - Phi(|A| sqrt((1 - q) / 2)))`, an upper bound on
/// `P(G <= A, G' <= A)` for unit Gaussians with correlation `q`.
pub fn joint_tail_bound(a: f64, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("correlation q = {q} outside [0, 1]")));
    }
    if !(a <= JOINT_TAIL_MAX_A) {
        return Err(Error::Domain(format!(
            "threshold A = {a} above {JOINT_TAIL_MAX_A}: the bound needs a sufficiently negative threshold"
        )));
    }
    Ok(4.0 * cdf(a) * (1.0 - cdf(a.abs() * (0.5 * (1.0 - q)).sqrt())))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Importance-sampled `P(G <= A, G' <= A)` at correlation `q`: draw `G`
/// from its law conditioned on `G <= A` and average
/// `Phi(A) Phi((A - q G) / sqrt(1 - q^2))`.
pub fn joint_tail_mc(a: f64, q: f64, draws: usize, seed: u64, exec: Execution) -> Result<McEstimate> {
    if !(-1.0..=1.0).contains(&q) || !a.is_finite() || draws < 2 {
        return Err(Error::InvalidArgument(format!("need finite A, |q| <= 1 and draws >= 2, got A = {a}, q = {q}, draws = {draws}")));
    }
    let pa = cdf(a);
    let s = (1.0 - q * q).sqrt();
    let chunks = draws.div_ceil(MC_CHUNK);
    let sums = exec.map(chunks, |c| {
        let len = MC_CHUNK.min(draws - c * MC_CHUNK);
        let mut rng = stream_rng(derive_seed(seed, &[c as u64]), Stream::MonteCarlo);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..len {
            // u in (0, 1] keeps the quantile finite.
            let u = 1.0 - rng.random::<f64>();
            let g = quantile(u * pa).min(a);
            let w = if s == 0.0 {
                if q * g <= a { 1.0 } else { 0.0 }
            } else {
                cdf((a - q * g) / s)
            };
            s1 += w;
            s2 += w * w;
        }
        (s1, s2)
    });
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    let nd = draws as f64;
    let mean = s1 / nd;
    let var = ((s2 / nd - mean * mean) * nd / (nd - 1.0)).max(0.0);
    Ok(McEstimate { estimate: pa * mean, std_error: pa * (var / nd).sqrt(), draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::alpha_up;
    use proptest::prelude::*;

    fn q1(alpha: f64, kappa: f64) -> OgpQuery {
        OgpQuery { m: 1, beta: 0.5, eta: 1e-12, alpha, kappa, iota: 0.0 }
    }

    #[test]
    fn single_tuple_root_is_first_moment_threshold() {
        for kappa in [-3.0, -5.0] {
            let root = ogp_alpha_root(&q1(1.0, kappa)).unwrap().unwrap();
            assert!((root / alpha_up(kappa) - 1.0).abs() < 1e-12, "{root}");
            let e = ogp_exponent(&q1(0.0, kappa)).unwrap();
            assert!((e - LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_density_is_positive() {
        let q = OgpQuery { m: 5, beta: 0.6, eta: 0.1, alpha: 0.0, kappa: -2.0, iota: 0.01 };
        let e = ogp_exponent(&q).unwrap();
        assert!((e - (LN_2 + 4.0 * entropy(0.75) + 0.05)).abs() < 1e-14);
    }

    #[test]
    fn large_margin_scan() {
        let s = scan_c1(-10.0, 10).unwrap();
        assert_eq!(s.query.m, 100);
        assert!(s.exponent < 0.0);
        let prev = large_margin_query(-10.0, s.c1 / 2.0).unwrap();
        assert!(ogp_exponent(&prev).unwrap() >= 0.0);
        assert_eq!(s.c1, 16.0);
    }

    #[test]
    fn log_term_domain() {
        // m Phi(kappa) > 1 with a negligible pair correction.
        let q = OgpQuery { m: 2, beta: 0.02, eta: 0.01, alpha: 1.0, kappa: 3.0, iota: 0.0 };
        assert!(matches!(ogp_exponent(&q), Err(Error::Domain(_))));
    }

    #[test]
    fn joint_tail_bound_edges() {
        let a = -3.0;
        assert!((joint_tail_bound(a, 1.0).unwrap() - 2.0 * cdf(a)).abs() < 1e-18);
        assert!(joint_tail_bound(a, 0.0).unwrap() >= cdf(a).powi(2));
        assert!(matches!(joint_tail_bound(-1.0, 0.5), Err(Error::Domain(_))));
        assert!(matches!(joint_tail_bound(-3.0, 1.5), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mc_independent_and_identical() {
        let e = joint_tail_mc(-3.0, 0.0, 10_000, 1, Execution::Sequential).unwrap();
        assert!((e.estimate / cdf(-3.0).powi(2) - 1.0).abs() < 1e-12);
        let e = joint_tail_mc(-3.0, 1.0, 10_000, 1, Execution::Sequential).unwrap();
        assert!((e.estimate / cdf(-3.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mc_matches_quadrature() {
        // P(G <= A, G' <= A) = E[1{G <= A} Phi((A - qG)/s)] by quadrature on (-inf, A].
        let (a, q) = (-2.5, 0.5);
        let s = (1.0f64 - q * q).sqrt();
        let n = 200_000;
        let lo = a - 12.0;
        let h = (a - lo) / n as f64;
        let f = |g: f64| crate::gauss::pdf(g) * cdf((a - q * g) / s);
        let mut acc = f(lo) + f(a);
        for i in 1..n {
            acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let exact = acc * h / 3.0;
        let e = joint_tail_mc(a, q, 200_000, 9, Execution::Sequential).unwrap();
        assert!((e.estimate - exact).abs() < 4.0 * e.std_error, "{} vs {exact}", e.estimate);
    }

    #[test]
    fn mc_chunks_are_order_independent() {
        let a = joint_tail_mc(-3.0, 0.5, 3 * MC_CHUNK + 17, 4, Execution::Sequential).unwrap();
        let b = joint_tail_mc(-3.0, 0.5, 3 * MC_CHUNK + 17, 4, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn exponent_affine_in_iota(iota in 0.0..0.5f64, m in 1usize..20, kappa in -6.0..-1.0f64) {
            let base = OgpQuery { m, beta: 0.7, eta: 0.2, alpha: 3.0, kappa, iota: 0.0 };
            let q = OgpQuery { iota, ..base };
            if let (Ok(e0), Ok(e1)) = (ogp_exponent(&base), ogp_exponent(&q)) {
                prop_assert!((e1 - e0 - m as f64 * iota).abs() < 1e-9);
            }
        }

        #[test]
        fn exponent_nonincreasing_in_alpha(a1 in 0.0..100.0f64, da in 0.0..100.0f64, m in 1usize..30, kappa in -8.0..-1.0f64) {
            let q = OgpQuery { m, beta: 0.9, eta: 0.1, alpha: a1, kappa, iota: 0.0 };
            if let Ok(b) = q.log_term() {
                if b < 0.0 {
                    let e1 = ogp_exponent(&q).unwrap();
                    let e2 = ogp_exponent(&OgpQuery { alpha: a1 + da, ..q }).unwrap();
                    prop_assert!(e2 <= e1 + 1e-12);
                }
            }
        }

        #[test]
        fn bound_nondecreasing_in_q(a in -8.0..-2.0f64, q1 in 0.0..1.0f64, dq in 0.0..1.0f64) {
            let q2 = (q1 + dq).min(1.0);
            prop_assert!(joint_tail_bound(a, q2).unwrap() >= joint_tail_bound(a, q1).unwrap());
        }
    }
}
