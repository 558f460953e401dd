use mberglg::mberglg::{
    enumerate_all_outcomes, joint_log_pmf, marginal_cov, marginal_mean, marginal_var,
    pmf_quadrature_oracle, subset_enumerator, univariate_pmf, Precision,
};
use proptest::prelude::*;

fn phi(v: f64) -> Precision {
    Precision::new(v).unwrap()
}

fn cluster(max_m: usize) -> impl Strategy<Value = (Vec<f64>, f64)> {
    (1..=max_m).prop_flat_map(|m| (prop::collection::vec(0.05f64..5.0, m), 0.05f64..50.0))
}

fn with_outcome(max_m: usize) -> impl Strategy<Value = (Vec<u8>, Vec<f64>, f64)> {
    (1..=max_m).prop_flat_map(|m| {
        (
            prop::collection::vec(0u8..=1, m),
            prop::collection::vec(0.05f64..5.0, m),
            0.05f64..50.0,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn outcomes_sum_to_one((mu, p) in cluster(6)) {
        let total: f64 = (0..1u32 << mu.len())
            .map(|code| {
                let y: Vec<u8> = (0..mu.len()).map(|j| (code >> j & 1) as u8).collect();
                joint_log_pmf(&y, &mu, phi(p)).unwrap().exp()
            })
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "{}", total);
    }

    #[test]
    fn summing_out_a_coordinate_gives_smaller_cluster(
        (mu, p) in (2usize..=6).prop_flat_map(|m| (prop::collection::vec(0.05f64..5.0, m), 0.05f64..50.0)),
        drop_at in 0usize..6,
        code in 0u32..64,
    ) {
        let m = mu.len();
        let drop_at = drop_at % m;
        let rest: Vec<u8> = (0..m - 1).map(|j| (code >> j & 1) as u8).collect();
        let mut rest_mu = mu.clone();
        rest_mu.remove(drop_at);
        let mut sum = 0.0;
        for v in [0u8, 1] {
            let mut y = rest.clone();
            y.insert(drop_at, v);
            sum += joint_log_pmf(&y, &mu, phi(p)).unwrap().exp();
        }
        let smaller = joint_log_pmf(&rest, &rest_mu, phi(p)).unwrap().exp();
        prop_assert!((sum - smaller).abs() < 1e-10, "{} vs {}", sum, smaller);
    }

    #[test]
    fn closed_form_matches_quadrature((y, mu, p) in with_outcome(6)) {
        let closed = joint_log_pmf(&y, &mu, phi(p)).unwrap().exp();
        let oracle = pmf_quadrature_oracle(&y, &mu, phi(p)).unwrap();
        prop_assert!((closed - oracle).abs() < 1e-8, "{} vs {}", closed, oracle);
    }

    #[test]
    fn relabeling_is_harmless((y, mu, p) in with_outcome(6), seed in any::<u64>()) {
        let m = y.len();
        let mut order: Vec<usize> = (0..m).collect();
        let mut s = seed;
        for i in (1..m).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let y2: Vec<u8> = order.iter().map(|&j| y[j]).collect();
        let mu2: Vec<f64> = order.iter().map(|&j| mu[j]).collect();
        let a = joint_log_pmf(&y, &mu, phi(p)).unwrap();
        let b = joint_log_pmf(&y2, &mu2, phi(p)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn single_observation_reduces_to_margin(y in 0u8..=1, mu in 0.05f64..5.0, p in 0.05f64..50.0) {
        let joint = joint_log_pmf(&[y], &[mu], phi(p)).unwrap();
        let margin = univariate_pmf(y, mu, phi(p)).unwrap().ln();
        // a few ulps of the probability itself: ln P near P = 1 carries
        // the absolute rounding of P
        prop_assert!((joint - margin).abs() <= 4.0 * f64::EPSILON * joint.abs().max(1.0));
    }

    #[test]
    fn enumerated_moments_match_closed_forms(
        (mu, p) in (2usize..=3).prop_flat_map(|m| (prop::collection::vec(0.05f64..5.0, m), 0.05f64..50.0)),
    ) {
        let table = enumerate_all_outcomes(&mu, phi(p)).unwrap();
        let m = mu.len();
        let total: f64 = table.iter().map(|(_, q)| q).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        let mean = |j: usize| table.iter().map(|(y, q)| f64::from(y[j]) * q).sum::<f64>();
        for j in 0..m {
            let e = mean(j);
            prop_assert!((e - marginal_mean(mu[j], phi(p)).unwrap()).abs() < 1e-10);
            prop_assert!((e * (1.0 - e) - marginal_var(mu[j], phi(p)).unwrap()).abs() < 1e-10);
            for k in j + 1..m {
                let both = table.iter().map(|(y, q)| f64::from(y[j] * y[k]) * q).sum::<f64>();
                let cov = both - e * mean(k);
                let closed = marginal_cov(mu[j], mu[k], phi(p)).unwrap();
                prop_assert!((cov - closed).abs() < 1e-10, "{} vs {}", cov, closed);
            }
        }
    }

    #[test]
    fn association_is_nonnegative(a in 0.001f64..50.0, b in 0.001f64..50.0, p in 0.001f64..1e6) {
        prop_assert!(marginal_cov(a, b, phi(p)).unwrap() >= 0.0);
    }
}

#[test]
fn high_precision_reference_values() {
    // 50-digit quadrature of the mixing integral
    let cases: [(&[u8], &[f64], f64, f64); 5] = [
        (&[1, 1], &[0.5, 1.0], 2.0, 0.242_086_167_800_453_51),
        (&[1, 0, 1], &[0.3, 1.7, 0.9], 0.7, 0.013_447_420_218_537_451),
        (&[1, 1, 1, 0], &[2.0, 0.2, 1.1, 0.6], 5.0, 0.051_381_822_784_316_13),
        (&[0, 1, 1, 1, 1], &[0.8; 5], 0.25, 0.015_697_214_933_011_239),
        (&[1, 1, 1, 1, 1, 1], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 40.0, 3.285_977_513_528_287e-4),
    ];
    for (y, mu, p, expected) in cases {
        let got = joint_log_pmf(y, mu, phi(p)).unwrap().exp();
        // φ = 40 with six successes cancels 64 terms down to 3e-4
        assert!((got - expected).abs() < 1e-10 * expected, "{y:?}: {got} vs {expected}");
    }
    // four-term signed sum
    let four = 4.0 * (2f64.powi(-2) - 2.5f64.powi(-2) - 3f64.powi(-2) + 3.5f64.powi(-2));
    assert!((four - 0.242_086_167_800_453_51).abs() < 1e-15);

    let cov = marginal_cov(0.5, 2.0, phi(2.0)).unwrap();
    assert!((cov - 0.037_530_864_197_530_864).abs() < 1e-15);
}

#[test]
fn small_examples() {
    assert!((univariate_pmf(0, 1.0, phi(1.0)).unwrap() - 0.5).abs() < 1e-15);
    assert!((univariate_pmf(0, 2.0, phi(3.0)).unwrap() - 0.216).abs() < 1e-15);
    assert!((pmf_quadrature_oracle(&[1], &[1.0], phi(1.0)).unwrap() - 0.5).abs() < 1e-12);
    assert!((marginal_cov(1.0, 1.0, phi(1.0)).unwrap() - 1.0 / 12.0).abs() < 1e-15);
    assert!((marginal_var(1.0, phi(1.0)).unwrap() - 0.25).abs() < 1e-15);

    let mu = [0.4, 1.3, 2.2];
    let p: f64 = 1.7;
    let closed = p * p.ln() - p * (mu.iter().sum::<f64>() + p).ln();
    assert!((joint_log_pmf(&[0, 0, 0], &mu, phi(p)).unwrap() - closed).abs() < 1e-13);
    let oracle = pmf_quadrature_oracle(&[0, 0, 0], &mu, phi(p)).unwrap();
    assert!((oracle - closed.exp()).abs() < 1e-12);

    let hist = subset_enumerator(&[1, 1, 1]).unwrap().fold([0; 4], |mut h, (_, k_plus)| {
        h[k_plus] += 1;
        h
    });
    assert_eq!(hist, [1, 3, 3, 1]);
    assert_eq!(subset_enumerator(&[0, 0]).unwrap().count(), 1);
    assert_eq!(subset_enumerator(&[1, 0]).unwrap().count(), 2);
}

#[test]
fn variance_limits() {
    let mu = 0.693_145_7;
    let p = phi(1e8);
    assert!((marginal_mean(mu, p).unwrap() - 0.5).abs() < 1e-6);
    assert!((marginal_var(mu, p).unwrap() - 0.25).abs() < 1e-6);
    assert!((marginal_var(2f64.ln(), p).unwrap() - 0.25).abs() < 1e-6);
    assert!((univariate_pmf(1, 0.6931, p).unwrap() - (1.0 - (-0.6931f64).exp())).abs() < 1e-7);
    for &m in &[0.1, 1.0, 10.0] {
        assert!(marginal_var(m, phi(1e-6)).unwrap() < 1e-4);
    }
    assert!(marginal_cov(1.0, 1.0, phi(1e10)).unwrap() < 1e-9);
}
