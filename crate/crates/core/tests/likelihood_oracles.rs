use ltrc_sieve::basis::BasisSpec;
use ltrc_sieve::simulation::ErrorLaw;
use ltrc_sieve::{information, log_likelihood, score, Observation, Theta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Fixture {
    data: Vec<Observation>,
    spec: BasisSpec,
    theta: Theta,
}

/// Random data with a mix of truncated, untruncated, censored and observed
/// subjects. The basis domain extends `margin` beyond the residual range; a
/// negative margin leaves some residuals outside it.
fn fixture_with_margin(seed: u64, margin: f64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(5..30);
    let d = rng.random_range(1..4);
    let n_interior = rng.random_range(0..5);
    let std = Normal::new(0.0, 1.0).unwrap();
    let beta: Vec<f64> = (0..d).map(|_| std.sample(&mut rng)).collect();
    let data: Vec<Observation> = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| std.sample(&mut rng)).collect();
            let y = 2.0 * std.sample(&mut rng);
            let t = rng
                .random_bool(0.6)
                .then(|| y - rng.random_range(0.05..3.0));
            Observation::new(y, rng.random_bool(0.7), t, x)
        })
        .collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for o in &data {
        let fit: f64 = o.x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        for v in [Some(o.y), o.t].into_iter().flatten() {
            lo = lo.min(v - fit);
            hi = hi.max(v - fit);
        }
    }
    let spec = BasisSpec::uniform(lo - margin, hi + margin, n_interior).unwrap();
    let gamma = (0..spec.basis_count())
        .map(|_| 0.5 * std.sample(&mut rng))
        .collect();
    Fixture {
        data,
        spec,
        theta: Theta::new(beta, gamma),
    }
}

fn fixture(seed: u64) -> Fixture {
    fixture_with_margin(seed, 1.0)
}

/// Fixtures 0..25 with a comfortable margin, 25..35 with residuals outside
/// the domain on both sides.
fn all_fixtures() -> impl Iterator<Item = (u64, Fixture)> {
    (0..35).map(|seed| {
        let margin = if seed < 25 { 1.0 } else { -0.4 };
        (seed, fixture_with_margin(seed, margin))
    })
}

fn rel_err(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(1.0)
}

#[test]
fn score_matches_central_differences() {
    let h = 1e-6;
    for (seed, f) in all_fixtures() {
        let d = f.theta.beta.len();
        let an = score(&f.theta, &f.data, &f.spec).unwrap();
        let base = f.theta.to_vec();
        for i in 0..base.len() {
            let mut up = base.clone();
            let mut dn = base.clone();
            up[i] += h;
            dn[i] -= h;
            let lu = log_likelihood(&Theta::from_slice(&up, d), &f.data, &f.spec).unwrap();
            let ld = log_likelihood(&Theta::from_slice(&dn, d), &f.data, &f.spec).unwrap();
            let fd = (lu - ld) / (2.0 * h);
            assert!(
                rel_err(fd, an[i]) < 1e-5,
                "seed {seed} component {i}: {fd} vs {}",
                an[i]
            );
        }
    }
}

#[test]
fn information_matches_differences_of_score() {
    let h = 1e-5;
    for (seed, f) in all_fixtures() {
        let d = f.theta.beta.len();
        let info = information(&f.theta, &f.data, &f.spec).unwrap();
        let base = f.theta.to_vec();
        for j in 0..base.len() {
            let mut up = base.clone();
            let mut dn = base.clone();
            up[j] += h;
            dn[j] -= h;
            let su = score(&Theta::from_slice(&up, d), &f.data, &f.spec).unwrap();
            let sd = score(&Theta::from_slice(&dn, d), &f.data, &f.spec).unwrap();
            for i in 0..base.len() {
                let fd = (su[i] - sd[i]) / (2.0 * h);
                assert!(
                    rel_err(fd, info[(i, j)]) < 1e-4,
                    "seed {seed} entry ({i},{j}): {fd} vs {}",
                    info[(i, j)]
                );
            }
        }
        assert!((&info - info.transpose()).abs().max() < 1e-10);
    }
}

#[test]
fn log_likelihood_matches_riemann_sum() {
    let f = fixture(101);
    let data = &f.data[..5];
    let spec = &f.spec;
    let theta = &f.theta;
    let g = |u: f64| spec.eval_spline(&theta.gamma, u).value;
    let m = 1_000_000;
    let mut oracle = 0.0;
    for o in data {
        let fit: f64 = o.x.iter().zip(&theta.beta).map(|(a, b)| a * b).sum();
        let eps = o.y - fit;
        let tau = o.t.map_or(spec.domain_lo(), |t| t - fit);
        let h = (eps - tau) / m as f64;
        let integral: f64 = (0..m)
            .map(|i| g(tau + (i as f64 + 0.5) * h).exp())
            .sum::<f64>()
            * h;
        if o.delta {
            oracle += g(eps);
        }
        oracle -= integral;
    }
    let got = log_likelihood(theta, data, spec).unwrap();
    assert!((got - oracle).abs() < 1e-7, "{got} vs {oracle}");
}

#[test]
fn density_ratio_form_matches_hazard_form() {
    // Minimum extreme-value errors have log hazard g(s) = s, which the cubic
    // basis reproduces exactly with Greville-abscissa coefficients.
    let law = ErrorLaw::GumbelMin;
    let spec = BasisSpec::uniform(-6.0, 3.0, 3).unwrap();
    let theta = Theta::new(vec![0.7, -0.4], spec.greville());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let x = vec![rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)];
        let fit = 0.7 * x[0] - 0.4 * x[1];
        let eps: f64 = rng.random_range(-4.0..2.0);
        let tau = eps - rng.random_range(0.01..1.5);
        let delta = rng.random_bool(0.5);
        let obs = Observation::new(eps + fit, delta, Some(tau + fit), x);
        let hazard_form = log_likelihood(&theta, &[obs], &spec).unwrap();
        let density_ratio = if delta {
            law.log_pdf(eps)
        } else {
            law.log_sf(eps)
        } - law.log_sf(tau);
        assert!(
            (hazard_form - density_ratio).abs() < 1e-10,
            "{hazard_form} vs {density_ratio}"
        );
    }
}

#[test]
fn untruncated_subjects_reduce_to_right_censored_likelihood() {
    // With no truncation the lower limit is the domain edge; for a hazard
    // that is negligible there, the result equals log f^Δ F̄^{1−Δ}.
    let law = ErrorLaw::GumbelMin;
    let spec = BasisSpec::uniform(-40.0, 3.0, 4).unwrap();
    let theta = Theta::new(vec![1.0], spec.greville());
    for (eps, delta) in [(-1.0, true), (0.5, false), (1.2, true)] {
        let obs = Observation::new(eps + 0.3, delta, None, vec![0.3]);
        let got = log_likelihood(&theta, &[obs], &spec).unwrap();
        let expect = if delta {
            law.log_pdf(eps)
        } else {
            law.log_sf(eps)
        };
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }
}

#[test]
fn later_entry_never_lowers_the_subject_term() {
    let f = fixture(7);
    let spec = &f.spec;
    let mut o = f.data[0].clone();
    let mut prev = f64::NEG_INFINITY;
    for step in 0..20 {
        o.t = Some(o.y - 3.0 + 0.149 * step as f64);
        let v = log_likelihood(&f.theta, std::slice::from_ref(&o), spec).unwrap();
        assert!(v >= prev);
        prev = v;
    }
}

#[test]
fn compensator_stays_positive_for_extreme_hazards() {
    // A hazard that is huge far below the residuals must make the
    // likelihood very small, never large.
    let spec = BasisSpec::uniform(-5.0, 5.0, 3).unwrap();
    let theta = Theta::new(vec![0.0], vec![390.0, 300.0, -50.0, 0.0, 0.0, 0.0, 0.0]);
    let data: Vec<Observation> = (0..50)
        .map(|i| {
            let y = 2.0 + 0.05 * i as f64;
            Observation::new(
                y,
                true,
                Some(y - 0.3 - 0.01 * i as f64),
                vec![0.1 * i as f64],
            )
        })
        .collect();
    let ll = log_likelihood(&theta, &data, &spec).unwrap();
    assert!(ll < 1e3, "{ll}");
}
