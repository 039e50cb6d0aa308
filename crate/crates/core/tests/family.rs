use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use logsym_core::stats::integrate;
use logsym_core::Generator;

fn shapes() -> Vec<Generator> {
    vec![
        Generator::Normal,
        Generator::Student { nu: 4.0 },
        Generator::Powerexp { zeta: 0.5 },
        Generator::Powerexp { zeta: -0.5 },
        Generator::Contnormal { weight: 0.1, precision: 0.25 },
    ]
}

fn generator() -> impl Strategy<Value = Generator> {
    prop_oneof![
        Just(Generator::Normal),
        (0.5f64..30.0).prop_map(|nu| Generator::Student { nu }),
        (-0.9f64..1.0).prop_map(|zeta| Generator::Powerexp { zeta }),
        (0.0f64..1.0, 0.05f64..5.0)
            .prop_map(|(weight, precision)| Generator::Contnormal { weight, precision }),
    ]
}

#[test]
fn densities_match_their_cdf() {
    for g in shapes() {
        for &(a, b) in &[(-40.0, 40.0), (-1.0, 2.5), (0.0, 0.3)] {
            let mass = integrate(|z| g.logpdf(z).exp(), a, b, 1e-12);
            assert_abs_diff_eq!(mass, g.cdf(b) - g.cdf(a), epsilon = 1e-8);
        }
    }
}

#[test]
fn densities_integrate_to_one() {
    for g in shapes() {
        let tail = g.cdf(-60.0);
        let mass = integrate(|z| g.logpdf(z).exp(), -60.0, 60.0, 1e-12);
        assert_abs_diff_eq!(mass + 2.0 * tail, 1.0, epsilon = 1e-8);
    }
}

proptest! {
    #[test]
    fn density_is_symmetric(g in generator(), z in -30.0f64..30.0) {
        prop_assert_eq!(g.logpdf(z), g.logpdf(-z));
        prop_assert!((g.cdf(z) + g.cdf(-z) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_is_monotone(g in generator(), z in -20.0f64..20.0, dz in 1e-3f64..5.0) {
        prop_assert!(g.cdf(z) <= g.cdf(z + dz));
        prop_assert!((0.0..=1.0).contains(&g.cdf(z)));
    }

    // d log f / dz = -v(z) z
    #[test]
    fn weight_is_the_score_ratio(g in generator(), z in 0.05f64..8.0) {
        let h = 1e-5 * z.max(1.0);
        let fd = (g.logpdf(z - 2.0 * h) - 8.0 * g.logpdf(z - h) + 8.0 * g.logpdf(z + h)
            - g.logpdf(z + 2.0 * h))
            / (12.0 * h);
        let score = -g.weight_v(z) * z;
        prop_assert!((fd - score).abs() <= 1e-6 * (1.0 + score.abs()), "fd {} score {}", fd, score);
    }

    #[test]
    fn weight_derivative_matches(g in generator(), z in 0.2f64..6.0) {
        let u = z * z;
        let h = 1e-4 * u;
        let v = |u: f64| g.weight_v(u.sqrt());
        let fd = (v(u + h) - v(u - h)) / (2.0 * h);
        let an = g.weight_v_du(z);
        prop_assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "fd {} an {}", fd, an);
    }

    #[test]
    fn draws_are_reproducible(g in generator(), seed in any::<u64>()) {
        prop_assert_eq!(g.sample(16, seed), g.sample(16, seed));
    }
}
