use nphmm::density::{hellinger, lambda_schedule, HellingerMethod, LatentDensity};
use nphmm::metrics::{hausdorff_image_distance, l2_error_up_to_isometry, point_set_hausdorff};
use nphmm::model::{stationary_density, transition_density, KernelParam};
use nphmm::quadrature::rule;
use nphmm::regression::{Constant, Reflected};
use nphmm::rng::SeedPath;
use nphmm::spline::{fit_smoothing_spline, smoothing_objective, SplineFunction, WeightedPoints};
use proptest::prelude::*;

fn k(a: f64) -> KernelParam {
    KernelParam::new(a).unwrap()
}

fn random_spline(values: Vec<(f64, f64)>) -> SplineFunction {
    let n = values.len();
    let knots: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let comps = vec![values.iter().map(|v| v.0).collect(), values.iter().map(|v| v.1).collect()];
    SplineFunction::interpolate(knots, comps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stationary_density_is_invariant(a in 0.05f64..20.0, x_next in 0.0f64..=1.0) {
        let ka = k(a);
        let gl = rule(201);
        let lhs = gl.integrate_split(0.0, 1.0, &[x_next], |x| {
            stationary_density(ka, x).unwrap() * transition_density(ka, x, x_next).unwrap()
        });
        prop_assert!((lhs - stationary_density(ka, x_next).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn transition_rows_integrate_to_one(a in 0.05f64..20.0, x in 0.0f64..=1.0) {
        let ka = k(a);
        let total = rule(201).integrate_split(0.0, 1.0, &[x], |y| transition_density(ka, x, y).unwrap());
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn log_half_mass_matches_quadrature(a in 0.05f64..20.0) {
        let ka = k(a);
        let z = rule(201).integrate(0.0, 1.0, |x| {
            a * (2.0 - (-x / a).exp() - (-(1.0 - x) / a).exp())
        });
        prop_assert!((ka.log_half_mass() - (z / 2.0).ln()).abs() < 1e-9);
    }

    #[test]
    fn smoothing_fit_beats_other_natural_splines(
        pts in prop::collection::vec((0.0f64..=1.0, -2.0f64..2.0, -2.0f64..2.0, 0.1f64..2.0), 4..30),
        log_lambda in -4.0f64..1.0,
        bumps in prop::collection::vec(-0.1f64..0.1, 30),
    ) {
        let lambda = 10f64.powf(log_lambda);
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.1, p.2]).collect();
        let ws: Vec<f64> = pts.iter().map(|p| p.3).collect();
        let wp = WeightedPoints::new(xs, ys, ws).unwrap();
        let fit = match fit_smoothing_spline(&wp, lambda) {
            Ok(f) => f,
            Err(_) => return Ok(()),
        };
        let best = smoothing_objective(&wp, lambda, &fit);
        let knots = fit.knots().to_vec();
        let moved: Vec<Vec<f64>> = (0..2)
            .map(|c| fit.knot_values(c).iter().enumerate().map(|(i, v)| v + bumps[(i + 7 * c) % 30]).collect())
            .collect();
        let other = SplineFunction::interpolate(knots, moved).unwrap();
        prop_assert!(smoothing_objective(&wp, lambda, &other) >= best * (1.0 - 1e-12) - 1e-12);
    }

    #[test]
    fn spline_text_round_trip_is_exact(values in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..12)) {
        let f = random_spline(values);
        let g = SplineFunction::from_text(&f.to_text()).unwrap();
        prop_assert_eq!(f, g);
    }

    #[test]
    fn l2_error_ignores_reflection(values in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..12)) {
        let f = random_spline(values);
        prop_assert!(l2_error_up_to_isometry(&Reflected(f.clone()), &f).total < 1e-9);
        prop_assert!(l2_error_up_to_isometry(&f, &f).total < 1e-9);
    }

    #[test]
    fn gaussian_shift_hellinger_has_closed_form(
        c1 in prop::collection::vec(-1.5f64..1.5, 2),
        c2 in prop::collection::vec(-1.5f64..1.5, 2),
    ) {
        let d2: f64 = c1.iter().zip(&c2).map(|(a, b)| (a - b).powi(2)).sum();
        let exact = (1.0 - (-d2 / 8.0).exp()).sqrt();
        let (f1, f2) = (Constant(c1), Constant(c2));
        let u = LatentDensity::Uniform;
        let h12 = hellinger(&f1, &u, &f2, &u, HellingerMethod::quadrature()).unwrap();
        let h21 = hellinger(&f2, &u, &f1, &u, HellingerMethod::quadrature()).unwrap();
        prop_assert!((h12 - exact).abs() < 1e-6);
        prop_assert!((h12 - h21).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&h12));
    }

    #[test]
    fn hausdorff_is_a_metric_on_point_sets(
        a in prop::collection::vec(-1.0f64..1.0, 2..20),
        b in prop::collection::vec(-1.0f64..1.0, 2..20),
        c in prop::collection::vec(-1.0f64..1.0, 2..20),
    ) {
        let trim = |v: Vec<f64>| { let n = v.len() / 2 * 2; v[..n].to_vec() };
        let (a, b, c) = (trim(a), trim(b), trim(c));
        let ab = point_set_hausdorff(&a, &b, 2);
        prop_assert!((ab - point_set_hausdorff(&b, &a, 2)).abs() < 1e-15);
        prop_assert!(ab <= point_set_hausdorff(&a, &c, 2) + point_set_hausdorff(&c, &b, 2) + 1e-12);
        prop_assert_eq!(point_set_hausdorff(&a, &a, 2), 0.0);
    }

    #[test]
    fn image_distance_is_reflection_invariant(values in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..10)) {
        let f = random_spline(values);
        let (d, step) = hausdorff_image_distance(&f, &Reflected(f.clone()), 1001);
        prop_assert!(d < 1e-12);
        prop_assert!((step - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn seed_paths_are_deterministic(seed in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        let p = SeedPath::new(seed);
        prop_assert_eq!(p.child(i).key(), SeedPath::new(seed).child(i).key());
        prop_assert_eq!(p.child2(i, j), p.child(i).child(j));
        if i != j {
            prop_assert_ne!(p.child(i).key(), p.child(j).key());
        }
    }

    #[test]
    fn lambda_schedule_grows(c in 0.01f64..10.0, n in 2usize..100_000) {
        let l = lambda_schedule(c, n);
        prop_assert!(l > 0.0);
        prop_assert!(lambda_schedule(c, n + 1) > l);
        prop_assert!((lambda_schedule(2.0 * c, n) - 2.0 * l).abs() <= 1e-12 * l);
    }
}
