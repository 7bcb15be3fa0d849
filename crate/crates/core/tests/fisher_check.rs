//! Closed-form Fisher information against Monte Carlo finite differences,
//! and normalization of every built-in density.

use active_estimation::model::{
    make_sensor_network, numeric_fisher, ExperimentModel, ExperimentSuite, FisherTarget,
    FisherVariant, ParameterSpace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 100_000;
const POINTS: usize = 100;

fn network() -> ExperimentSuite {
    make_sensor_network(
        4,
        FisherVariant::Definitional,
        ParameterSpace::new(0.01, 0.99, 197).unwrap(),
    )
    .unwrap()
}

fn mean_variance() -> ExperimentModel {
    ExperimentModel::mean_variance(
        ParameterSpace::new(0.1, 4.0, 197).unwrap(),
        ParameterSpace::new(1.0, 5.0, 101).unwrap(),
    )
    .unwrap()
}

/// A grid point at least two spacings from either end.
fn interior_point<R: Rng>(space: &ParameterSpace, rng: &mut R) -> f64 {
    space.point(rng.random_range(2..space.grid_size() - 2))
}

fn assert_within(analytic: f64, numeric: f64, what: &str) {
    let rel = (numeric - analytic).abs() / analytic;
    assert!(rel <= 0.02, "{what}: analytic {analytic} numeric {numeric} (rel {rel})");
}

#[test]
fn variance_profile_fisher_matches_finite_differences() {
    let suite = network();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..POINTS {
        let model = suite.model(rng.random_range(0..suite.len()));
        let theta = interior_point(model.shared_space(), &mut rng);
        let analytic = model.fisher_shared(theta, None);
        let step = 1e-4;
        let numeric =
            numeric_fisher(model, theta, None, FisherTarget::Shared, step, DRAWS, &mut rng).unwrap();
        assert_within(analytic, numeric, &format!("profile at theta={theta}"));
    }
}

#[test]
fn mean_variance_fisher_matches_finite_differences() {
    let model = mean_variance();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..POINTS {
        let theta = interior_point(model.shared_space(), &mut rng);
        let alpha = interior_point(model.private_space().unwrap(), &mut rng);
        let shared = numeric_fisher(&model, theta, Some(alpha), FisherTarget::Shared, 1e-4, DRAWS, &mut rng)
            .unwrap();
        assert_within(model.fisher_shared(theta, Some(alpha)), shared, "mean");
        let private =
            numeric_fisher(&model, theta, Some(alpha), FisherTarget::Private, 1e-4, DRAWS, &mut rng)
                .unwrap();
        assert_within(model.fisher_private(theta, alpha).unwrap(), private, "variance");
    }
}

#[test]
fn narrative_variant_drops_the_slope_factor() {
    let space = ParameterSpace::new(0.01, 0.99, 197).unwrap();
    let narrative = make_sensor_network(4, FisherVariant::Narrative, space).unwrap();
    let definitional = network();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..POINTS {
        let i = rng.random_range(0..4);
        let theta = interior_point(&space, &mut rng);
        let var = definitional.model(i).profile_variance(theta).unwrap();
        let n = narrative.model(i).fisher_shared(theta, None);
        assert!((n - 1.0 / (2.0 * var * var)).abs() <= 1e-12 * n);
        // the profile is affine, so a difference quotient gives its slope
        let slope = (definitional.model(i).profile_variance(theta + 1e-3).unwrap() - var) / 1e-3;
        let d = definitional.model(i).fisher_shared(theta, None);
        assert!((d - slope * slope * n).abs() <= 1e-8 * n);
    }
}

fn integral_over_y(model: &ExperimentModel, theta: f64, alpha: Option<f64>) -> f64 {
    let (mean, var) = model.moments(theta, alpha);
    let sd = var.sqrt();
    let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let f = |y: f64| model.log_pdf(y, theta, alpha).unwrap().exp();
    let inner: f64 = (1..n).map(|m| f(lo + m as f64 * h)).sum();
    h * (inner + 0.5 * (f(lo) + f(hi)))
}

#[test]
fn densities_integrate_to_one() {
    let suite = network();
    let mv = mean_variance();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..10 {
        let model = suite.model(rng.random_range(0..suite.len()));
        let theta = interior_point(model.shared_space(), &mut rng);
        assert!((integral_over_y(model, theta, None) - 1.0).abs() <= 1e-6);

        let theta = interior_point(mv.shared_space(), &mut rng);
        let alpha = interior_point(mv.private_space().unwrap(), &mut rng);
        assert!((integral_over_y(&mv, theta, Some(alpha)) - 1.0).abs() <= 1e-6);
    }
}
