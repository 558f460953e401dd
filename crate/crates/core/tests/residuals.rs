use mberglg::fit::{fit_ml, FitConfig};
use mberglg::montecarlo::{generate_dataset, ClusterSizeRule, CovariateLaw, RandomEffectLaw, TrueTheta};
use mberglg::numerics::{ks_distance, normal_cdf};
use mberglg::residuals::{
    envelope_coverage, quantile_residuals, quantile_residuals_at, simulate_envelope, Convention,
};
use mberglg::{Dataset, Theta};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn data(n: usize, law: RandomEffectLaw, truth: &TrueTheta, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_dataset(n, ClusterSizeRule::Fixed(5), CovariateLaw::Uniform01, 0.5, truth, law, &mut rng).unwrap()
}

fn true_theta(t: &TrueTheta) -> Theta {
    Theta::new(vec![t.beta0, t.beta1], t.lambda.powi(-2)).unwrap()
}

#[test]
fn draws_are_uniform_under_the_true_model() {
    // One position per cluster so the 10⁴ draws are independent; draws in
    // the same cluster share the intercept and widen the KS spread.
    for lambda in [0.5, 1.0, 2.0] {
        let truth = TrueTheta { lambda, ..TrueTheta::default() };
        let d = data(10_000, RandomEffectLaw::Glg, &truth, 70);
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let res = quantile_residuals_at(&true_theta(&truth), &d, &mut rng, Convention::DunnSmyth).unwrap();
        assert!(res.records.iter().all(|r| r.u_draw > 0.0 && r.u_draw < 1.0 && r.r_q.is_finite()));
        let third: Vec<_> = res.records.iter().filter(|r| r.within_index == 2).collect();
        assert_eq!(third.len(), 10_000);
        let nu: Vec<f64> = third.iter().map(|r| r.u_draw).collect();
        let r: Vec<f64> = third.iter().map(|r| r.r_q).collect();
        let d_nu = ks_distance(&nu, |u| u.clamp(0.0, 1.0));
        let d_r = ks_distance(&r, normal_cdf);
        assert!(d_nu <= 0.02, "λ={lambda}: KS(ν) {d_nu}");
        assert!(d_r <= 0.02, "λ={lambda}: KS(r) {d_r}");
    }
}

#[test]
fn printed_intervals_are_not_uniform_when_success_is_likely() {
    // P(Y = 1) far from ½ separates the two conventions
    let truth = TrueTheta { beta0: 1.5, ..TrueTheta::default() };
    let d = data(2_000, RandomEffectLaw::Glg, &truth, 72);
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let res = quantile_residuals_at(&true_theta(&truth), &d, &mut rng, Convention::Paper).unwrap();
    let nu: Vec<f64> = res.records.iter().map(|r| r.u_draw).collect();
    assert!(ks_distance(&nu, |u| u.clamp(0.0, 1.0)) > 0.05);
}

#[test]
fn fixed_seed_reproduces_bits() {
    let truth = TrueTheta::default();
    let d = data(100, RandomEffectLaw::Glg, &truth, 74);
    let fit = fit_ml(&d, &FitConfig::default()).unwrap();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(75);
        let r = quantile_residuals(&fit, &d, &mut rng, Convention::DunnSmyth).unwrap();
        let e = simulate_envelope(&fit, &d, 39, 0.95, 76, Convention::DunnSmyth).unwrap();
        (r, e)
    };
    let (r1, e1) = run();
    let (r2, e2) = run();
    assert!(r1.values().iter().zip(r2.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(e1, e2);
}

#[test]
fn envelope_contains_well_specified_fit() {
    let truth = TrueTheta::default();
    let d = data(300, RandomEffectLaw::Glg, &truth, 77);
    let fit = fit_ml(&d, &FitConfig::default()).unwrap();
    assert!(fit.converged);
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let observed = quantile_residuals(&fit, &d, &mut rng, Convention::DunnSmyth).unwrap().sorted_values();
    let bands = simulate_envelope(&fit, &d, 99, 0.95, 79, Convention::DunnSmyth).unwrap();
    assert_eq!(bands.len(), observed.len());
    assert!(bands.iter().all(|b| b.lower <= b.median && b.median <= b.upper));
    let coverage = envelope_coverage(&bands, &observed);
    assert!(coverage >= 0.9, "coverage {coverage}");
}

#[test]
fn misfit_shows_up_in_the_tails() {
    // Strong normal intercept fitted by the GLG model: the bulk stays inside
    // the bands and the departures sit among the extreme order statistics.
    let truth = TrueTheta { lambda: 2.5, beta0: 0.0, ..TrueTheta::default() };
    let d = data(600, RandomEffectLaw::Normal, &truth, 80);
    let fit = fit_ml(&d, &FitConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let observed = quantile_residuals(&fit, &d, &mut rng, Convention::DunnSmyth).unwrap().sorted_values();
    let bands = simulate_envelope(&fit, &d, 99, 0.95, 82, Convention::DunnSmyth).unwrap();
    let n = observed.len();
    let outside: Vec<usize> = bands
        .iter()
        .zip(&observed)
        .filter(|(b, &o)| o < b.lower || o > b.upper)
        .map(|(b, _)| b.index)
        .collect();
    let tail = outside.iter().filter(|&&k| k < n / 10 || k >= n - n / 10).count();
    assert!(!outside.is_empty());
    assert!(tail * 2 >= outside.len());
}

#[test]
fn other_models_are_rejected() {
    let truth = TrueTheta::default();
    let d = data(60, RandomEffectLaw::Glg, &truth, 83);
    let fit = mberglg::fit_model(&d, mberglg::ModelKind::NormalProbit, &FitConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(84);
    assert!(quantile_residuals(&fit, &d, &mut rng, Convention::DunnSmyth).is_err());
    assert!(simulate_envelope(&fit, &d, 19, 0.95, 1, Convention::DunnSmyth).is_err());
}
