//! Stage one: maximise `<v, theta>` over `{theta in [-1, 1]^N : X theta >= kappa0 sqrt(N)}`
//! for a Gaussian direction `v` independent of `X`.
//!
//! The solver is a dense bounded-variable dual simplex. Rows become
//! equalities `X theta / sqrt(N) - s = kappa0` with slacks `s >= 0`. The
//! all-slack basis with every `theta_i` at the bound matching `sign(v_i)` is
//! dual feasible, so no phase one is needed; the method ends at a vertex.

use crate::analytics::solve_order_params;
use crate::error::{Error, Result};
use crate::model::{dot, margins, wasserstein2, Instance, MarginVector, W2_GRID};
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Coordinates with `|theta_i| >= 1 - TIGHT_TOL` count as tight.
pub const TIGHT_TOL: f64 = 1e-8;

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
// Pivots smaller than this fraction of the largest row entry are skipped.
const REL_PIVOT_TOL: f64 = 1e-7;
const REFACTOR_EVERY: usize = 64;
// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_LIMIT: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Basic(usize),
    Lower,
    Upper,
}

/// Optimal vertex of a box-constrained LP in equality form.
#[derive(Clone, Debug)]
pub struct BoxLpSolution {
    /// Structural variables.
    pub x: Vec<f64>,
    /// Row multipliers, nonnegative.
    pub duals: Vec<f64>,
    /// Rows whose slack is nonbasic (held at zero).
    pub active_rows: Vec<usize>,
    pub iterations: usize,
}

struct DualSimplex<'a> {
    m: usize,
    n: usize,
    // Structural columns, column-major `n x m`.
    cols: &'a [f64],
    b: &'a [f64],
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    status: Vec<Status>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    x: Vec<f64>,
    d: Vec<f64>,
}

impl<'a> DualSimplex<'a> {
    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.m..(j + 1) * self.m]
    }

    /// `row . a_j` for any column, structural or slack (`-e_r`).
    fn row_dot(&self, row: &[f64], j: usize) -> f64 {
        if j < self.n {
            dot(row, self.col(j))
        } else {
            -row[j - self.n]
        }
    }

    /// `B^-1 a_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        if j < self.n {
            let c = self.col(j);
            (0..m)
                .map(|r| dot(&self.binv[r * m..(r + 1) * m], c))
                .collect()
        } else {
            (0..m).map(|r| -self.binv[r * m + (j - self.n)]).collect()
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        // Assemble B column by column, then invert with partial pivoting.
        let mut a = vec![0.0; m * m];
        for (c, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                for (r, v) in self.col(j).iter().enumerate() {
                    a[r * m + c] = *v;
                }
            } else {
                a[(j - self.n) * m + c] = -1.0;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&r, &s| a[r * m + c].abs().total_cmp(&a[s * m + c].abs()))
                .expect("non-empty");
            let piv = a[p * m + c];
            if piv.abs() < 1e-13 {
                return Err(Error::NoConvergence("singular simplex basis".into()));
            }
            if p != c {
                for k in 0..m {
                    a.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let s = 1.0 / piv;
            for k in 0..m {
                a[c * m + k] *= s;
                inv[c * m + k] *= s;
            }
            for r in 0..m {
                if r == c {
                    continue;
                }
                let f = a[r * m + c];
                if f != 0.0 {
                    for k in 0..m {
                        a[r * m + k] -= f * a[c * m + k];
                        inv[r * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
        self.binv = inv;
        self.recompute_duals();
        // Boxed columns whose reduced cost drifted to the wrong sign move to
        // the bound that restores dual feasibility.
        for j in 0..self.n + m {
            if !(self.upper[j] - self.lower[j]).is_finite() {
                continue;
            }
            match self.status[j] {
                Status::Lower if self.d[j] < -DUAL_TOL => {
                    self.status[j] = Status::Upper;
                    self.x[j] = self.upper[j];
                }
                Status::Upper if self.d[j] > DUAL_TOL => {
                    self.status[j] = Status::Lower;
                    self.x[j] = self.lower[j];
                }
                _ => {}
            }
        }
        self.recompute_primal();
        Ok(())
    }

    fn recompute_primal(&mut self) {
        let m = self.m;
        let mut rhs = self.b.to_vec();
        for j in 0..self.n {
            if !matches!(self.status[j], Status::Basic(_)) && self.x[j] != 0.0 {
                for (r, a) in self.col(j).iter().enumerate() {
                    rhs[r] -= a * self.x[j];
                }
            }
        }
        for r in 0..m {
            let j = self.n + r;
            if !matches!(self.status[j], Status::Basic(_)) {
                rhs[r] += self.x[j];
            }
        }
        for r in 0..m {
            let v = dot(&self.binv[r * m..(r + 1) * m], &rhs);
            self.x[self.basis[r]] = v;
        }
    }

    fn simplex_multipliers(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (r, &j) in self.basis.iter().enumerate() {
            let c = self.cost[j];
            if c != 0.0 {
                for k in 0..m {
                    y[k] += c * self.binv[r * m + k];
                }
            }
        }
        y
    }

    fn recompute_duals(&mut self) {
        let y = self.simplex_multipliers();
        for j in 0..self.n + self.m {
            self.d[j] = match self.status[j] {
                Status::Basic(_) => 0.0,
                _ => self.cost[j] - self.row_dot(&y, j),
            };
        }
    }

    fn violation(&self, j: usize) -> f64 {
        let v = self.x[j];
        if v < self.lower[j] - PRIMAL_TOL {
            self.lower[j] - v
        } else if v > self.upper[j] + PRIMAL_TOL {
            v - self.upper[j]
        } else {
            0.0
        }
    }

    fn run(&mut self, max_iter: usize) -> Result<usize> {
        let m = self.m;
        let total = self.n + m;
        let mut degenerate = 0usize;
        let mut since_refactor = 0usize;
        let mut alpha = vec![0.0; total];
        for iter in 0..max_iter {
            let bland = degenerate >= DEGENERATE_LIMIT;
            // Leaving row: dual steepest edge (infeasibility^2 over the squared
            // norm of the B^-1 row), or smallest index under Bland.
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let j = self.basis[r];
                let mut viol = self.violation(j);
                if viol > 0.0 {
                    let w: f64 = self.binv[r * m..(r + 1) * m].iter().map(|x| x * x).sum();
                    viol = viol * viol / w;
                    let better = match leave {
                        None => true,
                        Some((lr, lv)) => {
                            if bland {
                                j < self.basis[lr]
                            } else {
                                viol > lv
                            }
                        }
                    };
                    if better {
                        leave = Some((r, viol));
                    }
                }
            }
            let Some((p, _)) = leave else {
                if since_refactor > 0 {
                    self.refactor()?;
                    since_refactor = 0;
                    if (0..m).any(|r| self.violation(self.basis[r]) > 0.0) {
                        continue;
                    }
                }
                return Ok(iter);
            };
            let jp = self.basis[p];
            let to_lower = self.x[jp] < self.lower[jp];
            let bound = if to_lower { self.lower[jp] } else { self.upper[jp] };
            let rho: Vec<f64> = self.binv[p * m..(p + 1) * m].to_vec();

            // Bound-flipping dual ratio test. Breakpoints are passed in ratio
            // order; each passed boxed column flips to its other bound, which
            // shrinks the leaving row's infeasibility by |alpha_j| * range_j.
            let mut cands: Vec<(f64, usize)> = Vec::new();
            let mut alpha_max = 0.0f64;
            for j in 0..total {
                alpha[j] = 0.0;
                let st = self.status[j];
                if matches!(st, Status::Basic(_)) {
                    continue;
                }
                let a = self.row_dot(&rho, j);
                alpha[j] = a;
                alpha_max = alpha_max.max(a.abs());
            }
            let piv_tol = PIVOT_TOL.max(REL_PIVOT_TOL * alpha_max);
            for j in 0..total {
                let st = self.status[j];
                if !matches!(st, Status::Basic(_)) && self.eligible(st, alpha[j], to_lower, piv_tol) {
                    cands.push((self.d[j].abs() / alpha[j].abs(), j));
                }
            }
            if cands.is_empty() {
                return Err(Error::LpInfeasible {
                    variable: jp,
                    gap: (self.x[jp] - bound).abs(),
                    certificate: farkas(rho),
                });
            }
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut slope = (self.x[jp] - bound).abs();
            let mut stop = None;
            for (k, &(_, j)) in cands.iter().enumerate() {
                let range = self.upper[j] - self.lower[j];
                let drop = alpha[j].abs() * range;
                if !range.is_finite() || slope - drop <= 0.0 {
                    stop = Some(k);
                    break;
                }
                slope -= drop;
            }
            let Some(k) = stop else {
                return Err(Error::LpInfeasible {
                    variable: jp,
                    gap: slope,
                    certificate: farkas(rho),
                });
            };
            // Among breakpoints tied with the stopping one, take the largest pivot.
            let t_stop = cands[k].0;
            let mut pick = k;
            if !bland {
                for (kk, &(ratio, j)) in cands.iter().enumerate().skip(k + 1) {
                    if ratio > t_stop + DUAL_TOL / alpha[j].abs() {
                        break;
                    }
                    if alpha[j].abs() > alpha[cands[pick].1].abs() {
                        pick = kk;
                    }
                }
            }
            let q = cands[pick].1;
            let aq = alpha[q];

            // Flip the passed boxed columns and move the basic values with them.
            let mut shift = vec![0.0; m];
            let mut flipped = false;
            for &(_, j) in &cands[..k] {
                let (new_st, new_x) = match self.status[j] {
                    Status::Lower => (Status::Upper, self.upper[j]),
                    _ => (Status::Lower, self.lower[j]),
                };
                let dx = new_x - self.x[j];
                self.x[j] = new_x;
                self.status[j] = new_st;
                if j < self.n {
                    for (s, a) in shift.iter_mut().zip(self.col(j)) {
                        *s += a * dx;
                    }
                } else {
                    shift[j - self.n] -= dx;
                }
                flipped = true;
            }
            if flipped {
                for r in 0..m {
                    let v = dot(&self.binv[r * m..(r + 1) * m], &shift);
                    self.x[self.basis[r]] -= v;
                }
            }

            // Dual update; clamp reduced costs that drifted to the wrong sign.
            let step = self.d[q] / aq;
            for j in 0..total {
                if !matches!(self.status[j], Status::Basic(_)) && j != q {
                    self.d[j] -= step * alpha[j];
                }
            }
            self.d[q] = 0.0;
            self.d[jp] = -step;
            degenerate = if step.abs() <= 1e-14 { degenerate + 1 } else { 0 };

            // Primal update.
            let w = self.ftran(q);
            let delta = (self.x[jp] - bound) / w[p];
            for r in 0..m {
                let j = self.basis[r];
                self.x[j] -= w[r] * delta;
            }
            self.x[q] += delta;
            self.x[jp] = bound;
            self.status[jp] = if to_lower { Status::Lower } else { Status::Upper };
            self.status[q] = Status::Basic(p);
            self.basis[p] = q;

            // Product-form update of B^-1.
            let wp = w[p];
            for k in 0..m {
                self.binv[p * m + k] /= wp;
            }
            for r in 0..m {
                if r != p && w[r] != 0.0 {
                    let f = w[r];
                    for k in 0..m {
                        self.binv[r * m + k] -= f * self.binv[p * m + k];
                    }
                }
            }
            since_refactor += 1;
            if since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                since_refactor = 0;
            }
        }
        Err(Error::LpIterationLimit(max_iter))
    }

    fn eligible(&self, st: Status, a: f64, to_lower: bool, tol: f64) -> bool {
        // A nonbasic column may move only away from its bound.
        match (st, to_lower) {
            (Status::Lower, true) => a < -tol,
            (Status::Upper, true) => a > tol,
            (Status::Lower, false) => a > tol,
            (Status::Upper, false) => a < -tol,
            _ => false,
        }
    }
}

/// Maximise `v . x` subject to `A x >= b` and `-1 <= x <= 1`.
///
/// `cols` holds `A` column-major (`n` columns of length `m`).
pub fn solve_box_lp(cols: &[f64], m: usize, n: usize, b: &[f64], v: &[f64]) -> Result<BoxLpSolution> {
    if cols.len() != m * n {
        return Err(Error::LengthMismatch { expected: m * n, got: cols.len() });
    }
    if b.len() != m {
        return Err(Error::LengthMismatch { expected: m, got: b.len() });
    }
    if v.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: v.len() });
    }
    let total = n + m;
    let mut cost = vec![0.0; total];
    let mut lower = vec![0.0; total];
    let mut upper = vec![f64::INFINITY; total];
    let mut status = vec![Status::Lower; total];
    let mut x = vec![0.0; total];
    for j in 0..n {
        cost[j] = -v[j];
        lower[j] = -1.0;
        upper[j] = 1.0;
        if v[j] > 0.0 {
            status[j] = Status::Upper;
            x[j] = 1.0;
        } else {
            x[j] = -1.0;
        }
    }
    let basis: Vec<usize> = (n..total).collect();
    for (r, &j) in basis.iter().enumerate() {
        status[j] = Status::Basic(r);
    }
    let mut s = DualSimplex {
        m,
        n,
        cols,
        b,
        cost,
        lower,
        upper,
        status,
        basis,
        binv: vec![],
        x,
        d: vec![0.0; total],
    };
    s.refactor()?;
    let iterations = s.run(50 * total + 1000)?;
    let duals = s.simplex_multipliers().into_iter().map(|y| y.max(0.0)).collect();
    let active_rows = (0..m).filter(|&r| !matches!(s.status[n + r], Status::Basic(_))).collect();
    s.x.truncate(n);
    for xi in &mut s.x {
        *xi = xi.clamp(-1.0, 1.0);
    }
    Ok(BoxLpSolution { x: s.x, duals, active_rows, iterations })
}

/// Gaussian objective direction drawn from the direction stream.
pub fn direction_vector(n: usize, direction_seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(direction_seed, Stream::Direction);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LpOutput {
    pub theta_hat: Vec<f64>,
    /// Indices with `|theta_i| >= 1 - TIGHT_TOL`, ascending.
    pub tight_set: Vec<usize>,
    pub margin_vector: MarginVector,
    /// `<v, theta_hat>`.
    pub objective: f64,
    /// Dual value `sum_i |(v + X^T lambda / sqrt(N))_i| - kappa0 sum_j lambda_j`.
    pub dual_objective: f64,
    /// Rows whose constraint is held tight by the final basis.
    pub active_rows: Vec<usize>,
    pub kappa0: f64,
    pub direction_seed: u64,
    pub iterations: usize,
}

impl LpOutput {
    pub fn tight_fraction(&self) -> f64 {
        self.tight_set.len() as f64 / self.theta_hat.len() as f64
    }
}

/// Solve the stage-one LP for `inst` at margin `kappa0`.
pub fn solve_lp(inst: &Instance, kappa0: f64, direction_seed: u64) -> Result<LpOutput> {
    let v = direction_vector(inst.n(), direction_seed);
    solve_lp_with_direction(inst, kappa0, &v, direction_seed)
}

/// [`solve_lp`] with an explicit objective direction.
pub fn solve_lp_with_direction(inst: &Instance, kappa0: f64, v: &[f64], direction_seed: u64) -> Result<LpOutput> {
    let (m, n) = (inst.m(), inst.n());
    let scale = 1.0 / (n as f64).sqrt();
    let mut cols = vec![0.0; m * n];
    for (r, row) in inst.rows().enumerate() {
        for (j, &a) in row.iter().enumerate() {
            cols[j * m + r] = a * scale;
        }
    }
    let b = vec![kappa0; m];
    let sol = solve_box_lp(&cols, m, n, &b, v)?;
    let mut w = v.to_vec();
    for (j, wj) in w.iter_mut().enumerate() {
        let c = &cols[j * m..(j + 1) * m];
        *wj += c.iter().zip(&sol.duals).map(|(a, y)| a * y).sum::<f64>();
    }
    let dual_objective = w.iter().map(|x| x.abs()).sum::<f64>() - kappa0 * sol.duals.iter().sum::<f64>();
    let objective = v.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
    let tight_set = (0..n).filter(|&i| sol.x[i].abs() >= 1.0 - TIGHT_TOL).collect();
    let margin_vector = margins(inst, &sol.x)?;
    Ok(LpOutput {
        theta_hat: sol.x,
        tight_set,
        margin_vector,
        objective,
        dual_objective,
        active_rows: sol.active_rows,
        kappa0,
        direction_seed,
        iterations: sol.iterations,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LpDiagnostics {
    pub tight_fraction: f64,
    pub predicted_tight_fraction: f64,
    pub w2_to_margin_law: f64,
    /// `min_i margin_i - kappa0`.
    pub min_margin: f64,
}

/// Compare an LP solution with the limiting predictions at `(alpha, kappa0)`.
pub fn lp_diagnostics(out: &LpOutput, alpha: f64, kappa0: f64) -> Result<LpDiagnostics> {
    let op = solve_order_params(alpha, kappa0)?;
    let law = op.margin_law();
    let w2 = if out.margin_vector.values.is_empty() {
        0.0
    } else {
        wasserstein2(&out.margin_vector.values, |p| law.quantile(p), W2_GRID)?
    };
    Ok(LpDiagnostics {
        tight_fraction: out.tight_fraction(),
        predicted_tight_fraction: op.tight_fraction(),
        w2_to_margin_law: w2,
        min_margin: out.margin_vector.min() - kappa0,
    })
}

/// Sign-normalises a row of `B^{-1}` so the certificate combines margin rows
/// with nonnegative weights.
fn farkas(mut rho: Vec<f64>) -> Vec<f64> {
    if rho.iter().sum::<f64>() < 0.0 {
        rho.iter_mut().for_each(|y| *y = -*y);
    }
    rho
}
