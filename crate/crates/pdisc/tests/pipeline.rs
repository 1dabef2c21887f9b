use pdisc::pipeline::{neg_desk_check, randomized_round, run_pipeline, PipelineConfig, Regime};
use pdisc::schedules::rounding_allowance;
use pdisc::{generate_instance, Error};

fn pos_run(seed: u64) -> (pdisc::Instance, pdisc::pipeline::PipelineTrace) {
    let inst = generate_instance(6, 600, 2.0, seed).unwrap();
    let cfg = PipelineConfig::new(Regime::Pos, seed, seed);
    let trace = run_pipeline(&inst, 2.0, &cfg).unwrap();
    (inst, trace)
}

#[test]
fn rounding_keeps_saturated_signs() {
    let theta: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    for seed in 0..5 {
        let chi = randomized_round(&theta, seed).unwrap();
        assert!(chi.iter().zip(&theta).all(|(&c, &t)| c as f64 == t));
    }
}

#[test]
fn rounding_is_unbiased() {
    for &t in &[0.3, -0.7, 0.0] {
        let chi = randomized_round(&vec![t; 100_000], 11).unwrap();
        let mean = chi.iter().map(|&c| c as f64).sum::<f64>() / 1e5;
        assert!((mean - t).abs() < 0.01, "{t}: {mean}");
    }
    assert!(randomized_round(&[1.0 + 1e-11], 0).is_ok());
    assert!(randomized_round(&[-1.0 - 1e-9], 0).is_err());
}

#[test]
fn rounding_perturbation_is_within_allowance() {
    let (inst, trace) = pos_run(1);
    let (m, n) = (inst.m(), inst.n());
    let allowance = rounding_allowance(trace.config.delta, n, m);
    let trials = 200;
    let mut good = 0;
    for s in 0..trials {
        let chi = randomized_round(&trace.theta_final, 1000 + s).unwrap();
        let ok = (0..m).all(|j| {
            let row = inst.row(j);
            let d: f64 = row.iter().zip(&chi).zip(&trace.theta_final).map(|((x, &c), t)| x * (c as f64 - t)).sum();
            d >= -allowance
        });
        good += ok as usize;
    }
    assert!(good as f64 >= 0.95 * trials as f64, "{good}/{trials}");
}

#[test]
fn trace_invariants() {
    for seed in 0..3 {
        let (inst, trace) = pos_run(seed);
        let mut prev = trace.rounds.first().map_or(0, |r| r.n_before);
        assert!(prev <= inst.n());
        for r in &trace.rounds {
            assert_eq!(r.n_before, prev);
            assert!(r.n_after <= r.n_before);
            assert!(r.ledger_ok, "seed {seed} round {}", r.k);
            prev = r.n_after;
        }
        let delta = trace.config.delta;
        let free = trace.theta_final.iter().filter(|t| t.abs() < 1.0 - delta).count();
        assert_eq!(trace.n_free_final, free);
        assert_eq!(trace.chi.len(), inst.n());
        assert!(trace.rounds_used() <= trace.config.rounds);
    }
}

#[test]
fn identical_seeds_reproduce_the_trace() {
    let (_, a) = pos_run(4);
    let (_, b) = pos_run(4);
    assert_eq!(a, b);
    let inst = generate_instance(6, 600, 2.0, 4).unwrap();
    let c = run_pipeline(&inst, 2.0, &PipelineConfig::new(Regime::Pos, 4, 5)).unwrap();
    assert_ne!(a.chi, c.chi);
}

#[test]
fn general_variant_halves_the_free_set() {
    // A wide kappa0 - kappa gap keeps the proportional slacks large.
    let (kappa, n) = (-20.0, 1000);
    let inst = generate_instance(10, n, kappa, 3).unwrap();
    let mut cfg = PipelineConfig::new(Regime::Proportional, 3, 3);
    cfg.kappa0 = Some(0.0);
    let trace = run_pipeline(&inst, kappa, &cfg).unwrap();
    assert!(trace.report.feasible);
    assert!(!trace.rounds.is_empty());
    for r in &trace.rounds {
        assert!(r.ledger_ok);
        assert!(r.n_after as f64 <= 0.6 * r.n_before as f64, "round {}: {} -> {}", r.k, r.n_before, r.n_after);
    }
}

#[test]
fn neg_regime_fails_loudly_at_desk_scale() {
    // The vertex leaves at most M free coordinates, far too few for the
    // general variant's precondition at this aspect ratio.
    let inst = generate_instance(200, 400, -2.0, 3).unwrap();
    match run_pipeline(&inst, -2.0, &PipelineConfig::new(Regime::Neg, 3, 3)) {
        Err(Error::Schedule { round, .. }) => assert_eq!(round, 1),
        other => panic!("{:?}", other.map(|t| t.report.feasible)),
    }
}

#[test]
fn neg_regime_reports_desk_limit() {
    assert!(neg_desk_check(10_000, 10_000).is_ok());
    assert!(matches!(neg_desk_check(20_001, 5_000), Err(Error::NotDeskFeasible(_))));
}

#[test]
fn infeasible_lp_surfaces() {
    let inst = generate_instance(60, 300, 0.0, 1).unwrap();
    let mut cfg = PipelineConfig::new(Regime::Zero005, 1, 1);
    cfg.kappa0 = Some(3.0);
    assert!(matches!(run_pipeline(&inst, 0.0, &cfg), Err(Error::LpInfeasible { .. })));
}
