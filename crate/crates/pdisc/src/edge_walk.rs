//! Edge-walk partial colouring with one-sided discrepancy constraints.
//!
//! A walk lives on a problem of `m` rows and `n` coordinates (the caller
//! restricts the instance to its free columns). Each step draws a Gaussian
//! on the subspace orthogonal to every frozen coordinate and every nearly
//! tight row, then moves by `gamma` times that draw.
//!
//! Steps never leave the feasible region: if a step would push a coordinate
//! past `+-1` or a row below its budget `-c_j |X_j|`, the step length is
//! halved (at most [`MAX_HALVINGS`] times) and otherwise skipped. Skipped
//! steps are counted in [`WalkState::stalled_steps`].

use crate::error::{Error, Result};
use crate::gauss;
use crate::model::dot;
use crate::rng::{derive_seed, stream_rng, Stream};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Slack constants of the general partial-colouring lemma.
pub const GENERAL_K1: f64 = 16.0;
pub const GENERAL_K2: f64 = 8.0;
/// Cap on `1/K1 + 1/K2 + 1/K3` for the margin-zero variant.
pub const ZERO_MARGIN_BUDGET: f64 = 0.999;
pub const MAX_HALVINGS: u32 = 20;
/// Relative residual below which an active row is treated as dependent.
const DEPENDENT_ROW_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    /// `T = ceil(16 / (3 gamma^2))`, success at half the coordinates frozen.
    General16_8,
    /// `T = ceil(K1 / gamma^2)`, success at `n / K3` frozen.
    ZeroMargin { k1: f64, k2: f64, k3: f64 },
    /// `T = ceil(T1 / gamma^2)`, success at `min_fraction * n` frozen.
    Ode { t1: f64, min_fraction: f64 },
}

impl Variant {
    pub fn steps(&self, gamma: f64) -> usize {
        let horizon = match *self {
            Variant::General16_8 => 16.0 / 3.0,
            Variant::ZeroMargin { k1, .. } => k1,
            Variant::Ode { t1, .. } => t1,
        };
        (horizon / (gamma * gamma)).ceil() as usize
    }

    /// Fraction of coordinates that must end nearly tight.
    pub fn success_fraction(&self) -> f64 {
        match *self {
            Variant::General16_8 => 0.5,
            Variant::ZeroMargin { k3, .. } => 1.0 / k3,
            Variant::Ode { min_fraction, .. } => min_fraction,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Variant::General16_8 => Ok(()),
            Variant::ZeroMargin { k1, k2, k3 } => {
                if !(k1 > 0.0 && k2 > 0.0 && k3 > 0.0) {
                    return Err(Error::InvalidArgument("K1, K2, K3 must be positive".into()));
                }
                let budget = 1.0 / k1 + 1.0 / k2 + 1.0 / k3;
                if budget > ZERO_MARGIN_BUDGET {
                    return Err(Error::InvalidArgument(format!(
                        "1/K1 + 1/K2 + 1/K3 = {budget} exceeds {ZERO_MARGIN_BUDGET}"
                    )));
                }
                Ok(())
            }
            Variant::Ode { t1, min_fraction } => {
                if !(t1.is_finite() && t1 >= 0.0) || !(0.0..=1.0).contains(&min_fraction) {
                    return Err(Error::InvalidArgument("ODE variant needs finite T1 >= 0 and a fraction".into()));
                }
                Ok(())
            }
        }
    }
}

pub fn max_delta(n: usize) -> f64 {
    0.1 / (n.max(3) as f64).ln()
}

pub fn default_delta(n: usize) -> f64 {
    0.05 / (n.max(3) as f64).ln()
}

pub fn default_gamma(n: usize, delta: f64) -> f64 {
    delta / (n.max(3) as f64).ln().sqrt()
}

pub fn default_retries(n: usize) -> usize {
    (10.0 * (n.max(3) as f64).ln()).ceil() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColoringConfig {
    pub gamma: f64,
    pub delta: f64,
    pub variant: Variant,
    pub retries: usize,
    /// Record a trace point every this many steps; `None` disables tracing.
    pub trace_every: Option<usize>,
}

impl ColoringConfig {
    /// Defaults for a problem of ambient dimension `n`.
    pub fn for_dimension(n: usize, variant: Variant) -> Self {
        let delta = default_delta(n);
        ColoringConfig {
            gamma: default_gamma(n, delta),
            delta,
            variant,
            retries: default_retries(n),
            trace_every: None,
        }
    }

    /// Checks step parameters against ambient dimension `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.delta >= 0.0) || self.delta > max_delta(n) {
            return Err(Error::InvalidArgument(format!(
                "delta {} outside [0, 0.1/ln(max(N,3))] = [0, {}]",
                self.delta,
                max_delta(n)
            )));
        }
        if self.retries == 0 {
            return Err(Error::InvalidArgument("retries must be at least 1".into()));
        }
        self.variant.validate()
    }
}

/// A walk problem: rows `X_j` (row-major, `m x n`), budgets `c_j >= 0`
/// (`+inf` disables a row) and the start point.
#[derive(Clone, Copy, Debug)]
pub struct WalkProblem<'a> {
    pub rows: &'a [f64],
    pub m: usize,
    pub n: usize,
    pub c: &'a [f64],
    pub theta0: &'a [f64],
}

impl<'a> WalkProblem<'a> {
    pub fn new(rows: &'a [f64], m: usize, n: usize, c: &'a [f64], theta0: &'a [f64]) -> Result<Self> {
        if rows.len() != m * n {
            return Err(Error::LengthMismatch { expected: m * n, got: rows.len() });
        }
        if c.len() != m {
            return Err(Error::LengthMismatch { expected: m, got: c.len() });
        }
        if theta0.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: theta0.len() });
        }
        if let Some(j) = c.iter().position(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("slack c[{j}] = {} is negative", c[j])));
        }
        if let Some(i) = theta0.iter().position(|v| !(v.abs() <= 1.0)) {
            return Err(Error::InvalidArgument(format!("theta0[{i}] = {} outside the cube", theta0[i])));
        }
        Ok(WalkProblem { rows, m, n, c, theta0 })
    }

    pub fn row(&self, j: usize) -> &'a [f64] {
        &self.rows[j * self.n..(j + 1) * self.n]
    }
}

/// `(C_var, C_disc)` recomputed from `theta`. Both comparisons are inclusive.
pub fn active_sets(p: &WalkProblem<'_>, theta: &[f64], delta: f64) -> (Vec<usize>, Vec<usize>) {
    let var = (0..p.n).filter(|&i| theta[i].abs() >= 1.0 - delta).collect();
    let disc = (0..p.m)
        .filter(|&j| {
            let row = p.row(j);
            let d: f64 = row.iter().zip(theta.iter().zip(p.theta0)).map(|(x, (a, b))| x * (a - b)).sum();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            d <= (-p.c[j] + delta) * norm
        })
        .collect();
    (var, disc)
}

/// Orthonormal basis of a set of vectors, built by twice-iterated
/// Gram-Schmidt; vectors dependent on earlier ones are dropped.
#[derive(Clone, Debug, Default)]
struct Basis {
    width: usize,
    q: Vec<Vec<f64>>,
}

impl Basis {
    fn new(width: usize) -> Self {
        Basis { width, q: Vec::new() }
    }

    fn push(&mut self, mut v: Vec<f64>) -> bool {
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return false;
        }
        for _ in 0..2 {
            for q in &self.q {
                let d = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= d * qi);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= DEPENDENT_ROW_TOL * norm0 {
            return false;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        self.q.push(v);
        true
    }

    fn rank(&self) -> usize {
        self.q.len()
    }

    fn project_out(&self, g: &mut [f64]) {
        for q in &self.q {
            let d = dot(q, g);
            g.iter_mut().zip(q).for_each(|(x, qi)| *x -= d * qi);
        }
    }
}

/// Standard Gaussian on `{u : u_i = 0 for i in fixed, <u, X_j> = 0 for j in active}`.
///
/// `rows` is row-major with `n` columns. Dependent active rows are dropped;
/// when the subspace is trivial the zero vector is returned.
pub fn project_gaussian<R: Rng>(rows: &[f64], n: usize, active: &[usize], fixed: &[usize], rng: &mut R) -> Vec<f64> {
    let mut is_fixed = vec![false; n];
    fixed.iter().for_each(|&i| is_fixed[i] = true);
    let mut basis = Basis::new(n);
    for &j in active {
        let mut v = rows[j * n..(j + 1) * n].to_vec();
        v.iter_mut().zip(&is_fixed).for_each(|(x, &f)| {
            if f {
                *x = 0.0
            }
        });
        basis.push(v);
    }
    let mut g: Vec<f64> = (0..n).map(|i| if is_fixed[i] { 0.0 } else { rng.sample(StandardNormal) }).collect();
    if basis.rank() >= n - fixed.len().min(n) {
        return vec![0.0; n];
    }
    basis.project_out(&mut g);
    g.iter_mut().zip(&is_fixed).for_each(|(x, &f)| {
        if f {
            *x = 0.0
        }
    });
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub n_var: usize,
    pub n_disc: usize,
    pub norm_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkState {
    pub theta: Vec<f64>,
    pub theta0: Vec<f64>,
    /// Steps executed; below the budget when the walk space became trivial.
    pub step: usize,
    /// Coordinates in the order they froze.
    pub c_var: Vec<usize>,
    /// Rows in the order they became nearly tight.
    pub c_disc: Vec<usize>,
    /// Steps dropped after [`MAX_HALVINGS`] halvings.
    pub stalled_steps: usize,
    /// Total halvings across all steps.
    pub halvings: usize,
    pub trace: Vec<TracePoint>,
}

impl WalkState {
    pub fn norm_sq(&self) -> f64 {
        self.theta.iter().map(|x| x * x).sum()
    }

    pub fn var_fraction(&self) -> f64 {
        if self.theta.is_empty() {
            return 1.0;
        }
        self.c_var.len() as f64 / self.theta.len() as f64
    }
}

/// One walk of `cfg.variant.steps(gamma)` steps.
pub fn edge_walk_run(p: &WalkProblem<'_>, cfg: &ColoringConfig, seed: u64) -> WalkState {
    Walker::new(p, cfg).run(seed)
}

struct Walker<'a, 'b> {
    p: &'b WalkProblem<'a>,
    cfg: &'b ColoringConfig,
    norms: Vec<f64>,
    /// `-c_j |X_j|`; `-inf` for disabled rows.
    floor: Vec<f64>,
}

impl<'a, 'b> Walker<'a, 'b> {
    fn new(p: &'b WalkProblem<'a>, cfg: &'b ColoringConfig) -> Self {
        let norms: Vec<f64> = (0..p.m).map(|j| p.row(j).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let floor = (0..p.m)
            .map(|j| if p.c[j].is_finite() { -p.c[j] * norms[j] } else { f64::NEG_INFINITY })
            .collect();
        Walker { p, cfg, norms, floor }
    }

    fn run(&self, seed: u64) -> WalkState {
        let (p, cfg) = (self.p, self.cfg);
        let (n, m, delta, gamma) = (p.n, p.m, cfg.delta, cfg.gamma);
        let total = cfg.variant.steps(gamma);
        let mut rng = stream_rng(seed, Stream::Walk);
        let mut theta = p.theta0.to_vec();
        // d_j = <theta - theta0, X_j>.
        let mut d = vec![0.0; m];
        let mut frozen = vec![false; n];
        let mut in_disc = vec![false; m];
        let (c_var, c_disc) = active_sets(p, &theta, delta);
        c_var.iter().for_each(|&i| frozen[i] = true);
        c_disc.iter().for_each(|&j| in_disc[j] = true);
        let mut state = WalkState {
            theta: Vec::new(),
            theta0: p.theta0.to_vec(),
            step: 0,
            c_var,
            c_disc,
            stalled_steps: 0,
            halvings: 0,
            trace: Vec::new(),
        };
        let mut basis = self.rebuild(&state.c_disc, &frozen);
        let mut g = vec![0.0; n];
        let mut w = vec![0.0; m];
        let trace_point = |step: usize, th: &[f64], s: &WalkState| TracePoint {
            step,
            n_var: s.c_var.len(),
            n_disc: s.c_disc.len(),
            norm_sq: th.iter().map(|x| x * x).sum(),
        };
        if cfg.trace_every.is_some() {
            let tp = trace_point(0, &theta, &state);
            state.trace.push(tp);
        }
        for step in 1..=total {
            let free = n - state.c_var.len();
            if free <= basis.rank() {
                break;
            }
            for i in 0..n {
                g[i] = if frozen[i] { 0.0 } else { rng.sample(StandardNormal) };
            }
            basis.project_out(&mut g);
            for i in 0..n {
                if frozen[i] {
                    g[i] = 0.0;
                }
            }
            for j in 0..m {
                w[j] = if in_disc[j] || self.floor[j] == f64::NEG_INFINITY {
                    0.0
                } else {
                    dot(p.row(j), &g)
                };
            }
            let mut s = gamma;
            let mut ok = false;
            for _ in 0..=MAX_HALVINGS {
                let cube_ok = (0..n).all(|i| frozen[i] || (theta[i] + s * g[i]).abs() <= 1.0);
                let rows_ok = cube_ok && (0..m).all(|j| in_disc[j] || d[j] + s * w[j] >= self.floor[j]);
                if rows_ok {
                    ok = true;
                    break;
                }
                s *= 0.5;
                state.halvings += 1;
            }
            state.step = step;
            if !ok {
                state.stalled_steps += 1;
            } else {
                for i in 0..n {
                    theta[i] += s * g[i];
                }
                for j in 0..m {
                    d[j] += s * w[j];
                }
                let mut new_var = false;
                for i in 0..n {
                    if !frozen[i] && theta[i].abs() >= 1.0 - delta {
                        frozen[i] = true;
                        state.c_var.push(i);
                        new_var = true;
                    }
                }
                let mut new_rows = Vec::new();
                for j in 0..m {
                    if !in_disc[j] && d[j] <= (-p.c[j] + delta) * self.norms[j] {
                        in_disc[j] = true;
                        state.c_disc.push(j);
                        new_rows.push(j);
                    }
                }
                if new_var {
                    basis = self.rebuild(&state.c_disc, &frozen);
                } else {
                    for j in new_rows {
                        basis.push(self.restricted_row(j, &frozen));
                    }
                }
            }
            if let Some(every) = cfg.trace_every {
                if step % every.max(1) == 0 {
                    let tp = trace_point(step, &theta, &state);
                    state.trace.push(tp);
                }
            }
        }
        if let Some(last) = state.trace.last() {
            if last.step != state.step {
                let tp = trace_point(state.step, &theta, &state);
                state.trace.push(tp);
            }
        }
        state.theta = theta;
        state
    }

    fn restricted_row(&self, j: usize, frozen: &[bool]) -> Vec<f64> {
        self.p.row(j).iter().zip(frozen).map(|(&x, &f)| if f { 0.0 } else { x }).collect()
    }

    fn rebuild(&self, disc: &[usize], frozen: &[bool]) -> Basis {
        let mut b = Basis::new(self.p.n);
        for &j in disc {
            b.push(self.restricted_row(j, frozen));
        }
        debug_assert_eq!(b.width, self.p.n);
        b
    }
}

/// Whether the slack vector meets the variant's precondition for a walk
/// over `n` coordinates; `Err` carries the failed inequality.
pub fn slack_precondition(variant: &Variant, c: &[f64], n: usize) -> std::result::Result<(), String> {
    match *variant {
        Variant::General16_8 => {
            let lhs: f64 = c.iter().map(|&cj| (-cj * cj / GENERAL_K1).exp()).sum();
            let rhs = n as f64 / GENERAL_K2;
            if lhs <= rhs {
                Ok(())
            } else {
                Err(format!("sum exp(-c_j^2/16) = {lhs:.6} > N/8 = {rhs:.6}"))
            }
        }
        Variant::ZeroMargin { k1, k2, .. } => {
            let lhs: f64 = 2.0 * c.iter().map(|&cj| gauss::cdf(-cj / k1.sqrt())).sum::<f64>();
            let rhs = n as f64 / k2;
            if lhs <= rhs {
                Ok(())
            } else {
                Err(format!("2 sum Phi(-c_j/sqrt(K1)) = {lhs:.6} > N/K2 = {rhs:.6}"))
            }
        }
        Variant::Ode { .. } => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coloring {
    pub success: bool,
    /// Attempts made, including the successful one.
    pub attempts: usize,
    /// The successful walk, or the one freezing the most coordinates.
    pub state: WalkState,
}

impl Coloring {
    pub fn theta(&self) -> &[f64] {
        &self.state.theta
    }
}

/// Repeats the walk with seeds `derive_seed(seed, [r])` until the frozen
/// fraction reaches the variant's target or `cfg.retries` attempts ran.
pub fn partial_coloring(p: &WalkProblem<'_>, cfg: &ColoringConfig, seed: u64) -> Result<Coloring> {
    cfg.validate(p.n)?;
    slack_precondition(&cfg.variant, p.c, p.n).map_err(|detail| Error::Schedule { round: 0, detail })?;
    let walker = Walker::new(p, cfg);
    let target = cfg.variant.success_fraction() * p.n as f64;
    let mut best: Option<WalkState> = None;
    for r in 0..cfg.retries {
        let state = walker.run(derive_seed(seed, &[r as u64]));
        if state.c_var.len() as f64 >= target {
            return Ok(Coloring { success: true, attempts: r + 1, state });
        }
        if best.as_ref().is_none_or(|b| state.c_var.len() > b.c_var.len()) {
            best = Some(state);
        }
    }
    Ok(Coloring { success: false, attempts: cfg.retries, state: best.expect("retries >= 1") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_instance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(variant: Variant, gamma: f64) -> ColoringConfig {
        ColoringConfig { gamma, delta: 0.01, variant, retries: 5, trace_every: None }
    }

    #[test]
    fn active_sets_boundaries() {
        let rows = [1.0, 0.0];
        let theta0 = [0.0, 0.0];
        let c = [0.5];
        let p = WalkProblem::new(&rows, 1, 2, &c, &theta0).unwrap();
        assert_eq!(active_sets(&p, &[0.0, 0.0], 0.0), (vec![], vec![]));
        assert_eq!(active_sets(&p, &[0.0, 1.0], 0.0).0, vec![1]);
        // <theta - theta0, X_1> = -0.5 = -c_1 |X_1| exactly.
        assert_eq!(active_sets(&p, &[-0.5, 0.0], 0.0).1, vec![0]);
    }

    #[test]
    fn projection_respects_constraints() {
        let inst = generate_instance(3, 10, 0.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = project_gaussian(inst.data(), 10, &[0, 2], &[3, 7], &mut rng);
        assert_eq!(u[3], 0.0);
        assert_eq!(u[7], 0.0);
        let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        for j in [0, 2] {
            // Orthogonality holds for the row restricted to free coordinates.
            let d: f64 = (0..10).filter(|i| *i != 3 && *i != 7).map(|i| inst.row(j)[i] * u[i]).sum();
            let xn = inst.row(j).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(d.abs() <= 1e-8 * xn * un);
        }
        let all: Vec<usize> = (0..10).collect();
        assert!(project_gaussian(inst.data(), 10, &[], &all, &mut rng).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dependent_rows_dropped() {
        let rows = [1.0, 1.0, 0.0, 2.0, 2.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = project_gaussian(&rows, 3, &[0, 1], &[], &mut rng);
        assert!((u[0] + u[1]).abs() < 1e-12);
        assert!(u[2] != 0.0);
    }

    #[test]
    fn stationary_when_all_frozen() {
        let theta0 = [1.0, -1.0, 1.0];
        let p = WalkProblem::new(&[], 0, 3, &[], &theta0).unwrap();
        let s = edge_walk_run(&p, &cfg(Variant::General16_8, 0.05), 9);
        assert_eq!(s.theta, theta0.to_vec());
        assert_eq!(s.step, 0);
    }

    #[test]
    fn walk_preserves_margins_and_cube() {
        let inst = generate_instance(30, 60, 0.0, 11).unwrap();
        let c = vec![0.3; 30];
        let theta0 = vec![0.0; 60];
        let p = WalkProblem::new(inst.data(), 30, 60, &c, &theta0).unwrap();
        let s = edge_walk_run(&p, &cfg(Variant::General16_8, 0.02), 3);
        assert!(s.theta.iter().all(|x| x.abs() <= 1.0));
        for j in 0..30 {
            let row = inst.row(j);
            let d: f64 = row.iter().zip(&s.theta).map(|(a, b)| a * b).sum();
            let nrm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(d >= -0.3 * nrm - 1e-9);
        }
        let (var, disc) = active_sets(&p, &s.theta, 0.01);
        let mut cv = s.c_var.clone();
        cv.sort();
        let mut cd = s.c_disc.clone();
        cd.sort();
        assert_eq!(var, cv);
        assert_eq!(disc, cd);
    }

    #[test]
    fn precondition_rejects_tight_slack() {
        let inst = generate_instance(50, 20, 0.0, 1).unwrap();
        let c = vec![0.0; 50];
        let theta0 = vec![0.0; 20];
        let p = WalkProblem::new(inst.data(), 50, 20, &c, &theta0).unwrap();
        let e = partial_coloring(&p, &cfg(Variant::General16_8, 0.05), 0).unwrap_err();
        assert!(matches!(e, Error::Schedule { .. }));
    }

    #[test]
    fn config_enforces_delta_cap() {
        let mut c = ColoringConfig::for_dimension(1000, Variant::General16_8);
        assert!(c.validate(1000).is_ok());
        c.delta = 0.2;
        assert!(c.validate(1000).is_err());
        let bad = Variant::ZeroMargin { k1: 2.0, k2: 2.0, k3: 2.0 };
        assert!(ColoringConfig::for_dimension(10, bad).validate(10).is_err());
    }
}
