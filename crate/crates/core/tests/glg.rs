use mberglg::glg::{self, GlgParams};
use mberglg::numerics::{ks_distance, PI_SQ_OVER_6};
use mberglg::quadrature::{integrate, QuadratureOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma_lr;

const SHAPES: [f64; 6] = [-2.0, -0.5, 0.0, 0.5, 1.0, 2.0];

fn opts() -> QuadratureOptions {
    QuadratureOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-12,
        max_intervals: 5_000,
    }
}

fn mass(p: &GlgParams, a: f64, b: f64) -> f64 {
    integrate(|x| glg::pdf(x, p).unwrap(), a, b, opts()).unwrap().value
}

/// P(B ≤ b) in closed form: λ(b − μ)/σ = ln(W/k) with W ~ Gamma(k).
fn exact_cdf(b: f64, p: &GlgParams) -> f64 {
    if p.lambda == 0.0 {
        return mberglg::numerics::normal_cdf((b - p.mu) / p.sigma);
    }
    let k = 1.0 / (p.lambda * p.lambda);
    let w = k * (p.lambda * (b - p.mu) / p.sigma).exp();
    let lower = if w.is_finite() { gamma_lr(k, w) } else { 1.0 };
    if p.lambda > 0.0 {
        lower
    } else {
        1.0 - lower
    }
}

#[test]
fn log_pdf_matches_high_precision_values() {
    // 50-digit evaluations of the density formula
    let cases = [
        (0.3, 0.5, -1.278_783_104_731_172_2),
        (-1.0, -2.0, -2.237_526_711_369_348_6),
        (2.5, 3.0, -16.430_660_815_825_929),
        (0.0, 1.0, -1.346_207_279_228_537_4),
    ];
    for (b, lambda, expected) in cases {
        let p = GlgParams::new(0.2, 1.4, lambda).unwrap();
        let got = glg::log_pdf(b, &p).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected.abs().max(1.0), "λ={lambda}: {got}");
    }
}

#[test]
fn density_integrates_to_one_within_twelve_sd() {
    for lambda in [-0.5, 0.0, 0.5, 1.0] {
        let p = GlgParams::new(0.0, 1.0, lambda).unwrap();
        let (m, v) = glg::moments(&p);
        let sd = v.sqrt();
        let total = mass(&p, m - 12.0 * sd, m + 12.0 * sd);
        assert!((total - 1.0).abs() < 1e-6, "λ={lambda}: {total}");
    }
}

#[test]
fn twelve_sd_window_at_shape_two_misses_real_tail_mass() {
    // The exponential tail at |λ| = 2 holds ~1.5e-6 beyond 12 sd, so the
    // window falls short by exactly that amount and no more.
    for lambda in [-2.0, 2.0] {
        let p = GlgParams::new(0.0, 1.0, lambda).unwrap();
        let (m, v) = glg::moments(&p);
        let sd = v.sqrt();
        let (a, b) = (m - 12.0 * sd, m + 12.0 * sd);
        let window = mass(&p, a, b);
        let exact = exact_cdf(b, &p) - exact_cdf(a, &p);
        assert!((window - exact).abs() < 1e-9, "λ={lambda}: {window} vs {exact}");
        assert!(1.0 - exact > 1e-6);
        let wide = mass(&p, m - 40.0 * sd, m + 40.0 * sd);
        assert!((wide - 1.0).abs() < 1e-9, "λ={lambda}: {wide}");
    }
}

#[test]
fn small_shape_is_continuous_with_normal() {
    for &b in &[-2.0, -0.3, 0.0, 0.7, 1.9] {
        let near = glg::pdf(b, &GlgParams::new(0.1, 1.3, 1e-4).unwrap()).unwrap();
        let normal = glg::pdf(b, &GlgParams::new(0.1, 1.3, 0.0).unwrap()).unwrap();
        assert!((near - normal).abs() <= 1e-3);
    }
}

#[test]
fn moment_examples() {
    let (m, v) = glg::moments(&GlgParams::new(0.0, 1.0, 0.0).unwrap());
    assert_eq!((m, v), (0.0, 1.0));
    let euler = 0.577_215_664_901_532_9;
    let (m, v) = glg::moments(&GlgParams::new(0.0, 1.0, 1.0).unwrap());
    assert!((m + euler).abs() < 1e-12);
    assert!((v - PI_SQ_OVER_6).abs() < 1e-12);
    let (m, v) = glg::moments(&GlgParams::new(2.0, 3.0, 1.0).unwrap());
    assert!((m - (2.0 - 3.0 * euler)).abs() < 1e-12);
    assert!((v - 9.0 * PI_SQ_OVER_6).abs() < 1e-11);
}

#[test]
fn sampler_matches_integrated_cdf() {
    let n = 100_000;
    for (i, &lambda) in SHAPES.iter().enumerate() {
        let p = GlgParams::new(0.3, 1.2, lambda).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mut draws: Vec<f64> = (0..n).map(|_| glg::sample(&p, &mut rng)).collect();
        draws.sort_by(f64::total_cmp);

        // CDF by integrating the density between consecutive order statistics
        let (m, v) = glg::moments(&p);
        let start = m - 40.0 * v.sqrt();
        let mut cdf = Vec::with_capacity(n);
        let mut acc = mass(&p, start, draws[0].max(start));
        let mut prev = draws[0];
        for &x in &draws {
            if x > prev {
                acc += mass(&p, prev, x);
                prev = x;
            }
            cdf.push(acc);
        }
        for (&x, &c) in draws.iter().zip(&cdf).step_by(997) {
            assert!((c - exact_cdf(x, &p)).abs() < 1e-8, "λ={lambda} at {x}");
        }

        let nf = n as f64;
        let d = cdf
            .iter()
            .enumerate()
            .map(|(i, &c)| (c - i as f64 / nf).max((i + 1) as f64 / nf - c))
            .fold(0.0, f64::max);
        let closed = ks_distance(&draws, |x| exact_cdf(x, &p));
        assert!((d - closed).abs() < 1e-6);
        assert!(d <= 0.01, "λ={lambda}: KS {d}");
    }
}

#[test]
fn sample_moments_within_four_standard_errors() {
    let n = 100_000;
    for (i, &lambda) in SHAPES.iter().enumerate() {
        let p = GlgParams::new(-0.4, 0.8, lambda).unwrap();
        let (mean, var) = glg::moments(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + i as u64);
        let draws: Vec<f64> = (0..n).map(|_| glg::sample(&p, &mut rng)).collect();
        let nf = n as f64;
        let m1 = draws.iter().sum::<f64>() / nf;
        let centered: Vec<f64> = draws.iter().map(|x| (x - m1).powi(2)).collect();
        let s2 = centered.iter().sum::<f64>() / (nf - 1.0);
        let m4 = draws.iter().map(|x| (x - m1).powi(4)).sum::<f64>() / nf;
        assert!((m1 - mean).abs() < 4.0 * (var / nf).sqrt(), "λ={lambda} mean {m1} vs {mean}");
        let var_se = ((m4 - s2 * s2) / nf).sqrt();
        assert!((s2 - var).abs() < 4.0 * var_se, "λ={lambda} var {s2} vs {var}");
    }
}

#[test]
fn exp_of_random_intercept_has_unit_mean() {
    let p = GlgParams::random_intercept(0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|_| glg::sample(&p, &mut rng).exp()).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    // Gamma(4, rate 4): variance 1/4
    assert!((mean - 1.0).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{mean}");
}
