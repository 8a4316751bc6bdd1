use ltrc_sieve::basis::BasisSpec;
use ltrc_sieve::estimator::{fit, maximize, select_knots, FitConfig};
use ltrc_sieve::inference::infer;
use ltrc_sieve::simulation::{simulate_dataset, ErrorLaw, SimScenario};
use ltrc_sieve::{log_likelihood, score, Observation, Theta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

/// Unit-hazard subjects with a zero covariate, so only γ moves.
fn unit_hazard_data(n: usize, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(1.0).unwrap();
    (0..n)
        .map(|_| {
            let t: f64 = rng.random_range(0.0..1.0);
            let y = t + exp.sample(&mut rng);
            let c = t + rng.random_range(0.5..4.0);
            Observation::new(y.min(c), y <= c, Some(t), vec![0.0])
        })
        .collect()
}

/// Coordinate grids refined around the best point: a brute-force maximizer
/// for a concave objective.
fn grid_maximize(f: impl Fn(&[f64]) -> f64, dim: usize, mut center: Vec<f64>) -> Vec<f64> {
    let mut half = 4.0;
    let steps = 10;
    while half > 1e-6 {
        let mut best = (f(&center), center.clone());
        let total = (steps + 1usize).pow(dim as u32);
        for idx in 0..total {
            let mut rem = idx;
            let p: Vec<f64> = (0..dim)
                .map(|k| {
                    let i = rem % (steps + 1);
                    rem /= steps + 1;
                    center[k] - half + 2.0 * half * i as f64 / steps as f64
                })
                .collect();
            let v = f(&p);
            if v > best.0 {
                best = (v, p);
            }
        }
        center = best.1;
        half *= 0.3;
    }
    center
}

#[test]
fn gamma_only_fit_matches_grid_search() {
    let data = unit_hazard_data(40, 3);
    let hi = data.iter().map(|o| o.y).fold(0.0, f64::max);
    let spec = BasisSpec::uniform(0.0, hi + 0.05, 0).unwrap();
    let ll = |g: &[f64]| log_likelihood(&Theta::new(vec![0.0], g.to_vec()), &data, &spec).unwrap();
    let oracle = grid_maximize(ll, 4, vec![0.0; 4]);

    let start = Theta::new(vec![0.0], vec![0.3, -0.2, 0.1, 0.4]);
    let out = maximize(&start, &data, &spec, &FitConfig::default()).unwrap();
    assert!(out.converged);
    assert_eq!(out.theta.beta, vec![0.0]);
    for (a, b) in out.theta.gamma.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-4, "{:?} vs {oracle:?}", out.theta.gamma);
    }
}

#[test]
fn stationary_start_returns_immediately() {
    let data = unit_hazard_data(40, 4);
    let spec = BasisSpec::uniform(0.0, 6.0, 1).unwrap();
    let config = FitConfig::default();
    let first = maximize(&Theta::zeros(1, 5), &data, &spec, &config).unwrap();
    assert!(first.converged);
    let again = maximize(&first.theta, &data, &spec, &config).unwrap();
    assert_eq!(again.iters, 0);
    assert!(again.converged);
    assert_eq!(again.theta, first.theta);
}

#[test]
fn accepted_iterates_strictly_increase() {
    let sc = SimScenario::new(ErrorLaw::Normal, 200, 1, 5);
    let data = simulate_dataset(&sc, &mut sc.rep_rng(0)).data;
    let f = fit(&data, 1, &FitConfig::default()).unwrap();
    let data = f.centered(&data);
    let spec = &f.domain;
    for s in &f.start_trajectories {
        let out = maximize(&s.initial, &data, spec, &FitConfig::default()).unwrap();
        assert_eq!(out.iters + 1, out.path.len());
        assert!(out.path.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(out.loglik, s.loglik);
    }
}

#[test]
fn normal_fixture_converges_near_truth() {
    let sc = SimScenario::new(ErrorLaw::Normal, 200, 1, 11);
    let data = simulate_dataset(&sc, &mut sc.rep_rng(0)).data;
    let f = fit(&data, 1, &FitConfig::default()).unwrap();
    assert!(f.converged);
    assert!(f
        .start_trajectories
        .iter()
        .any(|s| s.converged && s.score_max_norm <= 1e-6));
    for b in &f.theta_hat.beta {
        assert!((b - 1.0).abs() < 0.25, "{:?}", f.theta_hat.beta);
    }
    let recomputed = log_likelihood(&f.theta_hat, &f.centered(&data), &f.domain).unwrap();
    assert_eq!(recomputed, f.loglik);
    let best = f
        .start_trajectories
        .iter()
        .filter(|s| s.converged)
        .map(|s| s.loglik)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(f.loglik, best);
    assert!(f.diagnostics.locally_concave);
}

#[test]
fn fit_is_bit_identical_for_a_seed() {
    let sc = SimScenario::new(ErrorLaw::MixShift, 200, 1, 2);
    let data = simulate_dataset(&sc, &mut sc.rep_rng(0)).data;
    let config = FitConfig::default().with_seed(17);
    let a = fit(&data, 2, &config).unwrap();
    let b = fit(&data, 2, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn complete_data_fit_is_within_three_standard_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<Observation> = (0..400)
        .map(|_| {
            let x = vec![rng.random_range(-3.0..3.0), f64::from(rng.random_bool(0.5))];
            let e: f64 = StandardNormal.sample(&mut rng);
            Observation::new(x[0] + x[1] + e, true, None, x)
        })
        .collect();
    let f = fit(&data, 1, &FitConfig::default()).unwrap();
    assert!(f.converged);
    let inf = infer(&f, &data).unwrap();
    for (j, se) in inf.std_errors().iter().enumerate() {
        assert!(
            (f.theta_hat.beta[j] - 1.0).abs() < 3.0 * se,
            "{j}: {:?} se {se}",
            f.theta_hat.beta
        );
    }
}

#[test]
fn gamma_score_vanishes_at_the_estimate() {
    // The γ-score is Σ_i [Δ_i B_k(ε̂_i) − ∫ B_k e^ĝ], the summed martingale
    // residuals weighted by B_k.
    let sc = SimScenario::new(ErrorLaw::Normal, 400, 1, 21);
    let data = simulate_dataset(&sc, &mut sc.rep_rng(0)).data;
    let f = fit(&data, 1, &FitConfig::default()).unwrap();
    let s = score(&f.theta_hat, &f.centered(&data), &f.domain).unwrap();
    for (i, v) in s.iter().enumerate() {
        if !f.at_floor.contains(&i) {
            assert!(v.abs() <= 1e-6, "component {i}: {v}");
        } else {
            assert!(*v <= 0.0);
        }
    }
}

#[test]
fn cross_validation_is_seed_deterministic() {
    let sc = SimScenario::new(ErrorLaw::Normal, 150, 1, 4);
    let data = simulate_dataset(&sc, &mut sc.rep_rng(0)).data;
    let config = FitConfig::default().with_seed(3);
    let a = select_knots(&data, &[0, 1, 2], 3, &config).unwrap();
    let b = select_knots(&data, &[2, 1, 0], 3, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.scores.len(), 3);
    assert!(a.scores.iter().all(|s| s.mean_heldout.is_some()));
}

fn modal_choice(law: ErrorLaw, seeds: std::ops::Range<usize>) -> Vec<usize> {
    let sc = SimScenario::new(law, 800, 1, 77);
    seeds
        .map(|r| {
            let data = simulate_dataset(&sc, &mut sc.rep_rng(r)).data;
            let config = FitConfig::default().with_seed(r as u64);
            select_knots(&data, &[1, 2, 3, 4], 5, &config)
                .unwrap()
                .chosen
        })
        .collect()
}

fn mode(v: &[usize]) -> usize {
    let mut counts = [0usize; 8];
    for &c in v {
        counts[c] += 1;
    }
    (0..8).rev().max_by_key(|&k| counts[k]).unwrap()
}

#[test]
fn cross_validation_prefers_one_knot_for_normal_errors() {
    let picks = modal_choice(ErrorLaw::Normal, 0..5);
    assert_eq!(mode(&picks), 1, "{picks:?}");
}

#[test]
fn cross_validation_prefers_more_knots_for_wide_mixture() {
    let picks = modal_choice(ErrorLaw::MixWide, 0..5);
    assert!(mode(&picks) >= 3, "{picks:?}");
}
