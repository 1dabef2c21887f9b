//! The full solver: LP vertex, rounds of partial colouring on the free
//! coordinates, randomized rounding and verification.
//!
//! Every random choice is seeded: the instance by its own seed, the LP
//! direction by `direction_seed`, round `k` of the walk by
//! `derive_seed(walk_seed, [k])` and the rounding by
//! `derive_seed(walk_seed, [ROUNDING_TAG])`. The trace holds no wall-clock
//! data, so equal seeds give equal traces.

use crate::edge_walk::{
    default_delta, default_gamma, default_retries, partial_coloring, slack_precondition, ColoringConfig, Variant,
    WalkProblem,
};
use crate::error::{Error, Result};
use crate::lp::solve_lp;
use crate::model::{verify_solution, Instance, SolutionReport};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::schedules::{
    geometric_betas, normalized_slack, ode_coloring_params, proportional_round, tail_matched_slack, CLaw,
    MarginZeroTable, ALPHA_005, ALPHA_010,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Tag mixed into `walk_seed` for the rounding stream.
pub const ROUNDING_TAG: u64 = u64::MAX;
/// Largest `M * N` the negative-margin regime will attempt.
pub const NEG_MAX_ENTRIES: f64 = 1e8;
/// Default `c0` in `kappa0 = kappa + c0 / |kappa|`.
pub const NEG_DEFAULT_C0: f64 = 2.0;
/// Default first coefficient of `beta_k = beta0 2^(-k/4)`.
pub const DEFAULT_BETA0: f64 = 0.1;
/// Slack of the ODE success threshold below the predicted `p1`.
pub const ODE_FRACTION_SLACK: f64 = 0.05;
/// Rounds of the `alpha = 0.1` table driven by the ODE variant.
const ODE_ROUNDS: usize = 20;
/// Ledger tolerance on normalised margins.
const LEDGER_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Proportional slack with `kappa0 = kappa + c0 / |kappa|`, for `kappa < 0`.
    Neg,
    /// Margin-zero table for `alpha <= 0.05`.
    Zero005,
    /// ODE-driven table for `alpha <= 0.1`.
    Zero010,
    /// `kappa0 = kappa + 1` with a tail-matched constant slack.
    Pos,
    /// Proportional slack at a caller-chosen `kappa0`.
    Proportional,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Neg => "neg",
            Regime::Zero005 => "zero005",
            Regime::Zero010 => "zero010",
            Regime::Pos => "pos",
            Regime::Proportional => "proportional",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "neg" => Regime::Neg,
            "zero005" => Regime::Zero005,
            "zero010" => Regime::Zero010,
            "pos" => Regime::Pos,
            "proportional" => Regime::Proportional,
            _ => return Err(Error::InvalidArgument(format!("unknown regime {s:?}"))),
        })
    }
}

/// Pipeline options; `None` fields take regime defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub regime: Regime,
    pub kappa0: Option<f64>,
    pub direction_seed: u64,
    pub walk_seed: u64,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub rounds: Option<usize>,
    pub retries: Option<usize>,
    pub c0: Option<f64>,
    pub beta0: Option<f64>,
}

impl PipelineConfig {
    pub fn new(regime: Regime, direction_seed: u64, walk_seed: u64) -> Self {
        PipelineConfig {
            regime,
            kappa0: None,
            direction_seed,
            walk_seed,
            delta: None,
            gamma: None,
            rounds: None,
            retries: None,
            c0: None,
            beta0: None,
        }
    }
}

/// Parameters after defaults are applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub regime: Regime,
    pub kappa: f64,
    pub kappa0: f64,
    pub delta: f64,
    pub gamma: f64,
    pub rounds: usize,
    pub retries: usize,
    pub direction_seed: u64,
    pub walk_seed: u64,
    pub beta0: f64,
}

/// Refuses negative-margin runs with `M * N` above [`NEG_MAX_ENTRIES`].
pub fn neg_desk_check(m: usize, n: usize) -> Result<()> {
    let entries = m as f64 * n as f64;
    if entries > NEG_MAX_ENTRIES {
        return Err(Error::NotDeskFeasible(format!("M*N = {entries:.3e} exceeds {NEG_MAX_ENTRIES:.0e}")));
    }
    Ok(())
}

pub fn resolve(inst: &Instance, kappa: f64, cfg: &PipelineConfig) -> Result<ResolvedConfig> {
    let n = inst.n();
    let kappa0 = match (cfg.kappa0, cfg.regime) {
        (Some(k0), _) => k0,
        (None, Regime::Zero005) => ALPHA_005.kappa0,
        (None, Regime::Zero010) => ALPHA_010.kappa0,
        (None, Regime::Pos) | (None, Regime::Proportional) => kappa + 1.0,
        (None, Regime::Neg) => {
            if kappa >= 0.0 {
                return Err(Error::InvalidArgument(format!("regime neg needs kappa < 0, got {kappa}")));
            }
            kappa + cfg.c0.unwrap_or(NEG_DEFAULT_C0) / kappa.abs()
        }
    };
    if cfg.regime == Regime::Neg {
        neg_desk_check(inst.m(), n)?;
    }
    if !(kappa0 >= kappa) {
        return Err(Error::InvalidArgument(format!("kappa0 = {kappa0} below kappa = {kappa}")));
    }
    let delta = cfg.delta.unwrap_or_else(|| default_delta(n));
    Ok(ResolvedConfig {
        regime: cfg.regime,
        kappa,
        kappa0,
        delta,
        gamma: cfg.gamma.unwrap_or_else(|| default_gamma(n, delta)),
        rounds: cfg.rounds.unwrap_or_else(|| (2.0 * (n.max(2) as f64).ln()).ceil() as usize),
        retries: cfg.retries.unwrap_or_else(|| default_retries(n)),
        direction_seed: cfg.direction_seed,
        walk_seed: cfg.walk_seed,
        beta0: cfg.beta0.unwrap_or(DEFAULT_BETA0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub k: usize,
    /// `N_{k-1}`: free coordinates entering the round.
    pub n_before: usize,
    /// `N_k`.
    pub n_after: usize,
    pub variant: Variant,
    /// Table row used (margin-zero regimes).
    pub table_round: Option<usize>,
    /// Scalar slack before per-row normalisation, when there is one.
    pub c_scalar: Option<f64>,
    /// Free count the schedule predicted for this round, when it predicts one.
    pub predicted_free: Option<f64>,
    pub attempts: usize,
    pub steps: usize,
    pub stalled_steps: usize,
    /// `min_j <theta, X_j> / sqrt(N)` after the round.
    pub min_margin: f64,
    /// `max_j c_j |(X_j)_I| / sqrt(N)` spent this round.
    pub max_budget: f64,
    /// Every row still above `kappa0` minus its cumulative budget.
    pub ledger_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSummary {
    pub iterations: usize,
    pub tight_fraction: f64,
    pub min_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub version: String,
    pub m: usize,
    pub n: usize,
    pub instance_seed: u64,
    pub config: ResolvedConfig,
    pub lp: LpSummary,
    pub rounds: Vec<RoundRecord>,
    /// Free coordinates left before rounding.
    pub n_free_final: usize,
    /// `theta` after the last round, before rounding.
    pub theta_final: Vec<f64>,
    pub chi: Vec<i8>,
    pub report: SolutionReport,
}

impl PipelineTrace {
    pub fn rounds_used(&self) -> usize {
        self.rounds.len()
    }
}

/// `chi_i = sign(theta_i)` with probability `(1 + |theta_i|) / 2`, else the
/// opposite sign; `sign(0) = +1`.
pub fn randomized_round(theta: &[f64], seed: u64) -> Result<Vec<i8>> {
    if let Some(i) = theta.iter().position(|t| !(t.abs() <= 1.0 + 1e-10)) {
        return Err(Error::InvalidArgument(format!("theta[{i}] = {} outside [-1, 1]", theta[i])));
    }
    let mut rng = stream_rng(seed, Stream::Rounding);
    Ok(theta
        .iter()
        .map(|&t| {
            let s: i8 = if t >= 0.0 { 1 } else { -1 };
            let keep = rng.random::<f64>() < 0.5 * (1.0 + t.abs().min(1.0));
            if keep {
                s
            } else {
                -s
            }
        })
        .collect())
}

struct RoundPlan {
    variant: Variant,
    c: Vec<f64>,
    table_round: Option<usize>,
    c_scalar: Option<f64>,
    predicted_free: Option<f64>,
}

pub fn run_pipeline(inst: &Instance, kappa: f64, cfg: &PipelineConfig) -> Result<PipelineTrace> {
    let rc = resolve(inst, kappa, cfg)?;
    let (m, n) = (inst.m(), inst.n());
    let sqrt_n = (n as f64).sqrt();
    let lp = solve_lp(inst, rc.kappa0, rc.direction_seed)?;
    let lp_summary = LpSummary {
        iterations: lp.iterations,
        tight_fraction: lp.tight_fraction(),
        min_margin: lp.margin_vector.min(),
    };
    let mut theta = lp.theta_hat.clone();
    // Unnormalised <theta, X_j>, kept current across rounds.
    let mut dots: Vec<f64> = lp.margin_vector.values.iter().map(|v| v * sqrt_n).collect();
    let lp_dots = dots.clone();
    let mut spent = vec![0.0; m];
    let betas = geometric_betas(rc.beta0, rc.rounds);
    let mut free: Vec<usize> = (0..n).filter(|&i| theta[i].abs() < 1.0 - rc.delta).collect();
    let mut rounds = Vec::new();
    let mut last_table_round = 0usize;

    for k in 1..=rc.rounds {
        if free.is_empty() {
            break;
        }
        let nf = free.len();
        let mut rows = vec![0.0; m * nf];
        for j in 0..m {
            let row = inst.row(j);
            for (c, &i) in free.iter().enumerate() {
                rows[j * nf + c] = row[i];
            }
        }
        let norms: Vec<f64> = (0..m).map(|j| rows[j * nf..(j + 1) * nf].iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let theta0: Vec<f64> = free.iter().map(|&i| theta[i]).collect();
        let plan = plan_round(&rc, k, inst, &rows, &norms, &theta0, &lp_dots, &betas, &mut last_table_round)?;
        slack_precondition(&plan.variant, &plan.c, nf).map_err(|detail| Error::Schedule { round: k, detail })?;
        let ccfg = ColoringConfig {
            gamma: rc.gamma,
            delta: rc.delta,
            variant: plan.variant,
            retries: rc.retries,
            trace_every: None,
        };
        let problem = WalkProblem::new(&rows, m, nf, &plan.c, &theta0)?;
        let coloring = partial_coloring(&problem, &ccfg, derive_seed(rc.walk_seed, &[k as u64])).map_err(|e| match e {
            Error::Schedule { detail, .. } => Error::Schedule { round: k, detail },
            other => other,
        })?;
        if !coloring.success {
            return Err(Error::RetryExhausted { round: k, retries: coloring.attempts });
        }
        let st = &coloring.state;
        for (c, &i) in free.iter().enumerate() {
            theta[i] = st.theta[c];
        }
        let mut max_budget = 0.0f64;
        for j in 0..m {
            let row = &rows[j * nf..(j + 1) * nf];
            let delta_dot: f64 = row.iter().zip(st.theta.iter().zip(&theta0)).map(|(x, (a, b))| x * (a - b)).sum();
            dots[j] += delta_dot;
            if plan.c[j].is_finite() {
                let b = plan.c[j] * norms[j] / sqrt_n;
                spent[j] += b;
                max_budget = max_budget.max(b);
            }
        }
        let min_margin = dots.iter().map(|d| d / sqrt_n).fold(f64::INFINITY, f64::min);
        let ledger_ok = (0..m).all(|j| dots[j] / sqrt_n >= rc.kappa0 - spent[j] - LEDGER_TOL);
        let next: Vec<usize> = free.iter().copied().filter(|&i| theta[i].abs() < 1.0 - rc.delta).collect();
        rounds.push(RoundRecord {
            k,
            n_before: nf,
            n_after: next.len(),
            variant: plan.variant,
            table_round: plan.table_round,
            c_scalar: plan.c_scalar,
            predicted_free: plan.predicted_free,
            attempts: coloring.attempts,
            steps: st.step,
            stalled_steps: st.stalled_steps,
            min_margin: if m == 0 { f64::INFINITY } else { min_margin },
            max_budget,
            ledger_ok,
        });
        free = next;
    }

    let chi = randomized_round(&theta, derive_seed(rc.walk_seed, &[ROUNDING_TAG]))?;
    let chi_f: Vec<f64> = chi.iter().map(|&c| c as f64).collect();
    let report = verify_solution(inst, &chi_f, kappa)?;
    Ok(PipelineTrace {
        version: crate::VERSION.to_string(),
        m,
        n,
        instance_seed: inst.seed(),
        config: rc,
        lp: lp_summary,
        rounds,
        n_free_final: free.len(),
        theta_final: theta,
        chi,
        report,
    })
}

fn zero_margin_variant(t: &MarginZeroTable) -> Variant {
    Variant::ZeroMargin { k1: t.k1, k2: t.k2, k3: t.k3 }
}

/// Next table row for a zero-margin round: past the previous row, at least
/// the row whose predicted free count is still `>= nf`, and bumped until
/// the slack precondition holds at the realised size.
fn table_row(t: &MarginZeroTable, n: usize, nf: usize, rows: &[f64], m: usize, norms: &[f64], after: usize) -> (usize, Vec<f64>) {
    let mut k = after + 1;
    while t.free_fraction(k + 1) * n as f64 >= nf as f64 && k < after + 200 {
        k += 1;
    }
    let variant = zero_margin_variant(t);
    let limit = k + 200;
    loop {
        let c = t.row_slack(k, nf, norms);
        if slack_precondition(&variant, &c, nf).is_ok() || k >= limit {
            debug_assert_eq!(rows.len(), m * nf);
            return (k, c);
        }
        k += 1;
    }
}

#[allow(clippy::too_many_arguments)]
fn plan_round(
    rc: &ResolvedConfig,
    k: usize,
    inst: &Instance,
    rows: &[f64],
    norms: &[f64],
    theta0: &[f64],
    lp_dots: &[f64],
    betas: &[f64],
    last_table_round: &mut usize,
) -> Result<RoundPlan> {
    let (m, n) = (inst.m(), inst.n());
    let nf = theta0.len();
    match rc.regime {
        Regime::Zero005 => {
            let t = &ALPHA_005;
            let (row, c) = table_row(t, n, nf, rows, m, norms, *last_table_round);
            *last_table_round = row;
            Ok(RoundPlan {
                variant: zero_margin_variant(t),
                c,
                table_round: Some(row),
                c_scalar: Some(t.c_scalar(row)),
                predicted_free: Some(t.free_fraction(row) * n as f64),
            })
        }
        Regime::Zero010 => {
            let t = &ALPHA_010;
            let k = (*last_table_round + 1).max(k);
            if k <= ODE_ROUNDS {
                let cs = t.c_scalar(k);
                let c = normalized_slack(cs, nf, norms);
                let alpha_eff = m as f64 / nf as f64;
                let r0 = theta0.iter().map(|x| x * x).sum::<f64>() / nf as f64;
                *last_table_round = k;
                match ode_coloring_params(alpha_eff, &CLaw::Point(cs), r0) {
                    Ok(op) if op.t1 > 0.0 => {
                        return Ok(RoundPlan {
                            variant: Variant::Ode { t1: op.t1, min_fraction: (op.p1 - ODE_FRACTION_SLACK).max(0.0) },
                            c,
                            table_round: Some(k),
                            c_scalar: Some(cs),
                            predicted_free: Some(t.free_fraction(k) * n as f64),
                        })
                    }
                    _ => {
                        // No usable crossing at the realised size: fall back to
                        // the margin-zero lemma from the current table row on.
                        let (row, c) = table_row(t, n, nf, rows, m, norms, k - 1);
                        *last_table_round = row;
                        return Ok(RoundPlan {
                            variant: zero_margin_variant(t),
                            c,
                            table_round: Some(row),
                            c_scalar: Some(t.c_scalar(row)),
                            predicted_free: Some(t.free_fraction(row) * n as f64),
                        });
                    }
                }
            }
            let (row, c) = table_row(t, n, nf, rows, m, norms, (*last_table_round).max(ODE_ROUNDS));
            *last_table_round = row;
            Ok(RoundPlan {
                variant: zero_margin_variant(t),
                c,
                table_round: Some(row),
                c_scalar: Some(t.c_scalar(row)),
                predicted_free: Some(t.free_fraction(row) * n as f64),
            })
        }
        Regime::Pos => {
            let t = &ALPHA_005;
            let cs = tail_matched_slack(nf, m, t.k1, t.k2);
            Ok(RoundPlan {
                variant: zero_margin_variant(t),
                c: vec![cs; m],
                table_round: None,
                c_scalar: Some(cs),
                predicted_free: None,
            })
        }
        Regime::Neg | Regime::Proportional => {
            let beta = betas.get(k - 1).copied().unwrap_or(0.0);
            let c = proportional_round(k, lp_dots, norms, rc.kappa, n, beta, rc.delta)?;
            Ok(RoundPlan { variant: Variant::General16_8, c, table_round: None, c_scalar: None, predicted_free: None })
        }
    }
}
