use pdisc::analytics::{effective_stage2, feasibility_threshold, solve_order_params};
use pdisc::gauss;
use pdisc::schedules::*;
use pdisc::{generate_instance, Error};
use proptest::prelude::*;

#[test]
fn r_sequence_values() {
    let rs = r_sequence(0.05, 3.42, 12).unwrap();
    assert_eq!(rs.r[0], rs.r0);
    assert!(rs.r0 < 0.0502, "{}", rs.r0);
    for k in 0..12 {
        let l = (1.0 / rs.r[k]).ln() + 1.0;
        assert!((rs.r_tilde[k] / rs.r[k] - 9.0 * l * l).abs() <= 1e-12 * l * l);
        assert!((rs.r_hat[k] / rs.r[k] - 11.0 * l).abs() <= 1e-12 * l);
        if k > 0 {
            assert_eq!(rs.r[k], rs.r[k - 1] / 2.0);
        }
        assert!(rs.r[k] > 0.0 && rs.r[k] < 1.0);
    }
    assert!(matches!(r_sequence(0.05, 5.0, 3), Err(Error::Infeasible(_))));
}

fn lp_like(m: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<Vec<usize>>) {
    let inst = generate_instance(m, n, 0.0, seed).unwrap();
    // Sign of each row sum: every margin is large and positive.
    let mut theta = vec![0.0; n];
    for (i, t) in theta.iter_mut().enumerate() {
        let s: f64 = (0..m).map(|j| inst.row(j)[i]).sum();
        *t = s.signum();
    }
    let x: Vec<f64> = (0..m).flat_map(|j| inst.row(j).to_vec()).collect();
    let sets = vec![(0..n).collect(), (0..n / 2).collect(), (0..n / 4).collect()];
    (theta, x, sets)
}

#[test]
fn zero_betas_give_zero_schedule() {
    let (theta, x, sets) = lp_like(3, 400, 1);
    let s = proportional_slack(&theta, &x, 3, &sets, -2.0, -1.0, &[0.0; 3], 0.01).unwrap();
    assert!(s.rounds.iter().flatten().all(|&c| c == 0.0));
}

#[test]
fn budget_identity() {
    let (m, n) = (3, 400);
    let (theta, x, sets) = lp_like(m, n, 2);
    let betas = geometric_betas(0.1, 3);
    let (kappa, delta) = (-2.0, 0.01);
    let s = proportional_slack(&theta, &x, m, &sets, kappa, -1.0, &betas, delta).unwrap();
    let total: f64 = betas.iter().sum();
    for j in 0..m {
        let row = &x[j * n..(j + 1) * n];
        let dot: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
        let num = dot - kappa * (n as f64).sqrt() - rounding_allowance(delta, n, m);
        let spent: f64 = sets
            .iter()
            .zip(&s.rounds)
            .map(|(set, c)| c[j] * set.iter().map(|&i| row[i] * row[i]).sum::<f64>().sqrt())
            .sum();
        assert!((spent - total * num).abs() <= 1e-9 * num.abs(), "{spent} vs {}", total * num);
        assert!(spent <= num);
        assert!(s.rounds.iter().all(|c| c[j] >= 0.0));
    }
}

#[test]
fn negative_numerator_names_the_row() {
    let (m, n) = (3, 400);
    let (mut theta, x, sets) = lp_like(m, n, 3);
    theta.iter_mut().for_each(|t| *t = -*t);
    match proportional_slack(&theta, &x, m, &sets, -2.0, -1.0, &geometric_betas(0.1, 3), 0.01) {
        Err(Error::Schedule { round: 1, detail }) => assert!(detail.contains("row 0"), "{detail}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn proportional_input_contract() {
    let b = geometric_betas(0.1, 60);
    let sum: f64 = b.iter().sum();
    assert!(sum < 1.0 && sum < 0.1 / (2f64.powf(0.25) - 1.0));
    assert!(check_proportional_inputs(-3.0, -2.0, &b, 0.01, 100).is_ok());
    assert!(check_proportional_inputs(-3.0, -2.0, &[0.6, 0.5], 0.01, 100).is_err());
    assert!(check_proportional_inputs(-3.0, -3.5, &b, 0.01, 100).is_err());
    assert!(check_proportional_inputs(-3.0, -2.0, &b, 0.1, 100).is_err());
}

#[test]
fn condition1_fails_above_threshold() {
    let (kappa, kappa0) = (-1.0, 0.5);
    let alpha = 1.01 * feasibility_threshold(kappa0);
    let r = verify_proportional_conditions(alpha, kappa, kappa0, &geometric_betas(0.1, 20), 6, 20).unwrap();
    assert!(!r.ok && r.cond1 < 0.0);
}

/// Largest `C = 2^(j/2)`, `j` in `[-120, 10]`, with every condition satisfied at
/// `alpha = C / (Phi(kappa) kappa^2)`.
fn scan_constant(kappa: f64, c0: f64, k_max: usize) -> Option<f64> {
    let kappa0 = kappa + c0 / kappa.abs();
    let betas = geometric_betas(0.1, k_max);
    let scale = gauss::cdf(kappa) * kappa * kappa;
    (-120..=10).rev().map(|j| 2f64.powf(j as f64 / 2.0)).find(|&c| {
        let alpha = c / scale;
        alpha < feasibility_threshold(kappa0)
            && verify_proportional_conditions(alpha, kappa, kappa0, &betas, default_kp(kappa), k_max)
                .map(|r| r.ok)
                .unwrap_or(false)
    })
}

#[test]
fn kappa_minus_six_admits_a_constant() {
    let kappa = -6.0;
    let k_max = 20;
    let scale = gauss::cdf(kappa) * kappa * kappa;
    for c0 in [2.0, 8.0, 16.0] {
        let c = scan_constant(kappa, c0, k_max).unwrap_or_else(|| panic!("no constant for c0 = {c0}"));
        eprintln!("kappa -6, c0 {c0}: largest admissible C on the grid {c:.3e}");
        let kappa0 = kappa + c0 / kappa.abs();
        let r = verify_proportional_conditions(0.5 * c / scale, kappa, kappa0, &geometric_betas(0.1, k_max), default_kp(kappa), k_max)
            .unwrap();
        assert!(r.ok, "c0 {c0}: worst {}", r.worst);
    }
}

#[test]
fn condition4_reports_failure_sign() {
    let tiny = vec![1e-6; 10];
    let r = verify_proportional_conditions(0.05, -3.0, -2.0, &tiny, 4, 10).unwrap();
    assert!(!r.ok);
    let rs = r_sequence(0.05, -2.0, 10).unwrap();
    for &(k, margin) in r.cond4.iter().filter(|(k, _)| *k <= 4) {
        let expect = 1e-12 * 1.0 / PROP_K1 - 3.0 * rs.r[k - 1];
        assert!(margin < 0.0);
        assert!((margin - expect).abs() <= 1e-9, "{margin} vs {expect}");
    }
}

#[test]
fn ode_degenerate_at_full_norm() {
    assert!(matches!(ode_coloring_params(1.0, &CLaw::Point(2.0), 1.0), Err(Error::Degenerate(_))));
}

#[test]
fn ode_horizon_without_constraints() {
    assert!(matches!(ode_coloring_params(0.0, &CLaw::Point(2.0), 0.3), Err(Error::Horizon(_))));
}

#[test]
fn ode_closed_form_before_crossing() {
    // u differs from 1 - (1 - r0) e^(-t) by at most int_0^t v <= t v(t) while v is small.
    let (alpha, c, r0) = (1.008960, 2.0, 0.332645);
    let s = ode_solve(alpha, &CLaw::Point(c), r0).unwrap();
    for t in [0.05, 0.1, 0.2] {
        let exact = 1.0 - (1.0 - r0) * f64::exp(-t);
        let v = 2.0 * alpha * gauss::cdf(-c / f64::sqrt(t));
        let gap = exact - s.u_at(t);
        assert!(gap >= -1e-9 && gap <= t * v + 1e-9, "t {t}: gap {gap}, bound {}", t * v);
    }
}

#[test]
fn ode_first_round_pair() {
    let op = ode_coloring_params(1.008960, &CLaw::Point(2.0), 0.332645).unwrap();
    eprintln!("computed p0 = {:.6}, p1 = {:.6}; listed p0 = 0.50, p1 = 0.34", op.p0, op.p1);
    assert!(0.0 <= op.t2 && op.t2 <= op.t1);
    assert!((0.0..=1.0).contains(&op.p0) && (0.0..=1.0).contains(&op.p1));
    // Both directions are reported; exactly one holds for each fraction.
    let checks = table_p_checks(&ALPHA_010, 1.008960, 0.332645).unwrap();
    let c1 = checks[0];
    assert_eq!(c1.p1_computed, op.p1);
    assert_eq!(c1.p0_computed, op.p0);
    assert!(c1.p1_table_above ^ c1.p1_table_below);
    assert!(c1.p0_table_above ^ c1.p0_table_below);
    assert_eq!(c1.p1_table_above, 0.34 > op.p1);
    assert_eq!(c1.p0_table_below, 0.50 < op.p0);
}

#[test]
fn ode_sanity_along_the_table() {
    for c in [2.0, 3.0, 4.0] {
        let s = ode_solve(1.008960, &CLaw::Point(c), 0.332645).unwrap();
        assert!(s.u.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        assert!(s.v.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        assert!(s.u.iter().all(|&u| u <= 1.0 + 1e-12));
        let p = s.params;
        assert!(0.0 <= p.t2 && p.t2 <= p.t1);
    }
    let checks = table_p_checks(&ALPHA_010, 1.008960, 0.332645).unwrap();
    assert_eq!(checks.len(), 20);
}

#[test]
fn stage2_values() {
    let s = effective_stage2(0.1, 2.31).unwrap();
    assert!((s.alpha0 - 1.008960).abs() <= 5e-4, "{}", s.alpha0);
    assert!((s.r0 - 0.332645).abs() <= 5e-4, "{}", s.r0);
    assert!(s.order.rho * s.order.rho >= s.r);
    let op = solve_order_params(0.1, 2.31).unwrap();
    assert_eq!(s.r, op.tight_fraction());
}

#[test]
fn margin_zero_table_values() {
    let [a, b] = margin_zero_tables();
    assert_eq!(a.c_scalar(1), 6.440850);
    assert_eq!(a.c_scalar(20), 15.562490);
    assert_eq!(a.c_scalar(25), 31.25);
    assert_eq!(b.kappa0, 2.31);
    let d = a.drift_ledger();
    assert!(d.total < 3.39, "{}", d.total);
    let checks = a.round_checks();
    assert_eq!(checks.len(), 20);
    assert!(checks.iter().all(|c| c.holds), "{checks:?}");
}

#[test]
fn normalised_slack_rule() {
    let s = normalized_slack(2.0, 16, &[2.0, 4.0, 0.0]);
    assert_eq!(s[0], 4.0);
    assert_eq!(s[1], 2.0);
    assert!(s[2].is_infinite());
}

#[test]
fn schedule_json_round_trip() {
    let doc = ALPHA_005.document();
    let back: ScheduleDoc = serde_json::from_str(&serde_json::to_string(&doc).unwrap()).unwrap();
    assert_eq!(doc, back);
    let p = proportional_document(-5.0, &geometric_betas(0.1, 4), 6);
    assert_eq!(p.per_round.len(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn condition2_expectation_monotone(s1 in 0.01f64..5.0, ds in 0.0f64..5.0) {
        let law = solve_order_params(0.5, -1.0).unwrap().margin_law();
        let a = condition2_expectation(&law, -2.0, s1);
        let b = condition2_expectation(&law, -2.0, s1 + ds);
        prop_assert!(b <= a + 1e-12);
    }

    #[test]
    fn r_sequence_halves(r0 in 1e-4f64..0.99, k in 2usize..30) {
        let rs = RSequence::from_r0(r0, k);
        for w in rs.r.windows(2) {
            prop_assert!((w[1] * 2.0 - w[0]).abs() <= 1e-15 * w[0]);
        }
    }
}
