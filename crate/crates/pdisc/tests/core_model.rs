use pdisc::gauss;
use pdisc::model::{empirical_quantile, margins, verify_solution, wasserstein2, W2_GRID};
use pdisc::rng::{stream_rng, Stream};
use pdisc::{generate_instance, Error, Instance};
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn generation_is_reproducible() {
    let a = generate_instance(3, 4, 0.0, 7).unwrap();
    let b = generate_instance(3, 4, 0.0, 7).unwrap();
    assert_eq!(a.data().len(), 12);
    assert_eq!(a.data(), b.data());
    assert!(a.data().iter().all(|x| x.is_finite()));
}

#[test]
fn entries_have_unit_moments() {
    let inst = generate_instance(200, 100, 0.0, 1).unwrap();
    let n = inst.data().len() as f64;
    let mean = inst.data().iter().sum::<f64>() / n;
    let var = inst.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 0.05, "{mean}");
    assert!((var - 1.0).abs() < 0.1, "{var}");
}

#[test]
fn zero_rows_rejected() {
    assert!(matches!(generate_instance(0, 5, 0.0, 1), Err(Error::Size(_))));
}

#[test]
fn margins_linear_and_coordinate() {
    let inst = generate_instance(6, 25, 0.0, 3).unwrap();
    assert!(margins(&inst, &[0.0; 25]).unwrap().values.iter().all(|&v| v == 0.0));
    let mut e1 = vec![0.0; 25];
    e1[0] = 5.0;
    let mv = margins(&inst, &e1).unwrap();
    for (j, v) in mv.values.iter().enumerate() {
        assert!((v - inst.row(j)[0]).abs() < 1e-14);
    }
}

#[test]
fn random_sign_margins_are_standard_normal() {
    let (m, n) = (2000, 1000);
    let inst = generate_instance(m, n, 0.0, 11).unwrap();
    let mut rng = stream_rng(5, Stream::MonteCarlo);
    let chi: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let mut v = margins(&inst, &chi).unwrap().values;
    v.sort_by(f64::total_cmp);
    let ks = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
            (f - i as f64 / m as f64).abs().max((f - (i + 1) as f64 / m as f64).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.05, "{ks}");
}

#[test]
fn verify_extremes() {
    let inst = generate_instance(10, 30, 0.0, 2).unwrap();
    let chi = vec![1.0; 30];
    assert!(verify_solution(&inst, &chi, -1e6).unwrap().feasible);
    let mut half = chi.clone();
    half[3] = 0.5;
    assert!(!verify_solution(&inst, &half, -1e6).unwrap().binary);
}

#[test]
fn hand_built_instance() {
    let inst = Instance::from_data(2, 2, 0.0, 0, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
    let mv = margins(&inst, &[1.0, -1.0]).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((mv.values[0] - h).abs() < 1e-15 && (mv.values[1] - h).abs() < 1e-15);
    let rep = verify_solution(&inst, &[1.0, -1.0], 0.0).unwrap();
    assert!(rep.feasible && rep.binary && rep.violated_rows.is_empty());
    let bad = verify_solution(&inst, &[1.0, 1.0], 0.0).unwrap();
    assert!(!bad.feasible && bad.violated_rows == vec![1] && bad.min_margin < 0.0);
}

#[test]
fn wasserstein_cases() {
    let q = |p: f64| gauss::quantile(p);
    // Samples on the quantile grid of the target.
    let mut prev = f64::INFINITY;
    for k in [100, 1000, 10_000] {
        let s: Vec<f64> = (0..k).map(|i| q((i as f64 + 0.5) / k as f64)).collect();
        let d = wasserstein2(&s, q, W2_GRID).unwrap();
        assert!(d < prev, "{d} !< {prev}");
        prev = d;
    }
    assert!(prev < 0.02);
    let d = wasserstein2(&[2.0; 50], |_| -0.5, W2_GRID).unwrap();
    assert!((d - 2.5).abs() < 1e-12);
    let mut rng = stream_rng(3, Stream::MonteCarlo);
    let s: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
    assert!(wasserstein2(&s, q, W2_GRID).unwrap() <= 0.02);
}

#[test]
fn empirical_quantile_is_a_step_function() {
    let s = [1.0, 2.0, 3.0, 4.0];
    let q = empirical_quantile(&s);
    assert_eq!(q(0.1), 1.0);
    assert_eq!(q(0.9), 4.0);
}
