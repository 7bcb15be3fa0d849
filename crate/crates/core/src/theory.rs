//! Characteristic sample-complexity quantities and the displayed theorem
//! bounds, evaluated at a ground truth.
//!
//! The bounds hold only asymptotically and for unknown constants; the values
//! here are reference curves to print next to empirical averages.

use serde::Serialize;
use thiserror::Error;

use crate::model::{ExperimentSuite, GroundTruth, ModelError};
use crate::optimizer::{self, OptimizerError, SimplexPoint};
use crate::rules::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("ill-posed: {0}")]
    IllPosed(String),
    #[error("quantity needs private parameters")]
    NotJoint,
    #[error("h must lie in [0, 1), got {0}")]
    BadH(f64),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `min_i 1 / (beta * I_i(theta))`. `alphas` is empty for shared-only suites.
pub fn v_beta(
    suite: &ExperimentSuite,
    theta: f64,
    alphas: &[f64],
    beta: f64,
) -> Result<f64, TheoryError> {
    let best = suite
        .models()
        .iter()
        .enumerate()
        .map(|(i, m)| m.fisher_shared(theta, alphas.get(i).copied()))
        .fold(0.0, f64::max);
    if !(best > 0.0) || !(beta > 0.0) {
        return Err(TheoryError::IllPosed(format!(
            "largest FI {best} at theta={theta}, beta={beta}"
        )));
    }
    Ok(1.0 / (beta * best))
}

fn fisher_at_truth(
    suite: &ExperimentSuite,
    truth: &GroundTruth,
) -> Result<(Vec<f64>, Vec<f64>), TheoryError> {
    let mut shared = Vec::new();
    let mut private = Vec::new();
    for (i, m) in suite.models().iter().enumerate() {
        let alpha = truth.alpha(i);
        shared.push(m.fisher_shared(truth.theta, alpha));
        if let Some(a) = alpha {
            private.push(m.fisher_private(truth.theta, a)?);
        }
    }
    Ok((shared, private))
}

/// Optimal value of the cost-aware objective at the ground truth, and its
/// minimizer.
pub fn w_beta(
    suite: &ExperimentSuite,
    truth: &GroundTruth,
    tol: &Tolerances,
) -> Result<(f64, SimplexPoint), TheoryError> {
    if !suite.has_private() || !tol.is_joint() {
        return Err(TheoryError::NotJoint);
    }
    let (shared, private) = fisher_at_truth(suite, truth)?;
    let q = optimizer::minimize(&shared, &private, tol)?;
    let value = optimizer::objective(&q, &shared, &private, tol)?;
    Ok((value, q))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub k: usize,
    pub beta: f64,
    pub v_beta: f64,
    pub w_beta: Option<f64>,
    /// Shared term of the objective at the optimum.
    pub v_shared: Option<f64>,
    /// Private terms of the objective at the optimum.
    pub v_private: Vec<f64>,
    pub v_max: Option<f64>,
    pub v_min: Option<f64>,
    pub beta_max: f64,
    pub beta_min: f64,
    pub q_star: Vec<f64>,
}

pub fn bound_report(
    suite: &ExperimentSuite,
    truth: &GroundTruth,
    tol: &Tolerances,
) -> Result<BoundReport, TheoryError> {
    let v = v_beta(suite, truth.theta, &truth.alphas, tol.beta)?;
    let all_betas = std::iter::once(tol.beta).chain(tol.beta_private.iter().copied());
    let beta_max = all_betas.clone().fold(f64::NEG_INFINITY, f64::max);
    let beta_min = all_betas.fold(f64::INFINITY, f64::min);
    if !(suite.has_private() && tol.is_joint()) {
        let (shared, _) = fisher_at_truth(suite, truth)?;
        let q = optimizer::minimize(&shared, &[], tol)?;
        return Ok(BoundReport {
            k: suite.len(),
            beta: tol.beta,
            v_beta: v,
            w_beta: None,
            v_shared: None,
            v_private: Vec::new(),
            v_max: None,
            v_min: None,
            beta_max,
            beta_min,
            q_star: q.weights().to_vec(),
        });
    }
    let (w, q) = w_beta(suite, truth, tol)?;
    let (shared, private) = fisher_at_truth(suite, truth)?;
    let info: f64 = q.weights().iter().zip(&shared).map(|(q, j)| q * j).sum();
    let v_shared = 1.0 / (tol.beta * info);
    let v_private: Vec<f64> = (0..suite.len())
        .map(|i| 1.0 / (tol.beta_private[i] * q.weights()[i] * private[i]))
        .collect();
    let components = std::iter::once(v_shared).chain(v_private.iter().copied());
    let v_max = components.clone().fold(f64::NEG_INFINITY, f64::max);
    let v_min = components.fold(f64::INFINITY, f64::min);
    Ok(BoundReport {
        k: suite.len(),
        beta: tol.beta,
        v_beta: v,
        w_beta: Some(w),
        v_shared: Some(v_shared),
        v_private,
        v_max: Some(v_max),
        v_min: Some(v_min),
        beta_max,
        beta_min,
        q_star: q.weights().to_vec(),
    })
}

/// Displayed right-hand sides of the converse and achievability theorems.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremBounds {
    pub h: f64,
    pub shared_converse: f64,
    pub shared_achievable: f64,
    pub joint_converse: Option<f64>,
    pub joint_achievable: Option<f64>,
}

pub fn theorem_bounds(report: &BoundReport, h: f64) -> Result<TheoremBounds, TheoryError> {
    if !(0.0..1.0).contains(&h) {
        return Err(TheoryError::BadH(h));
    }
    let v = report.v_beta;
    let beta = report.beta;
    let k = report.k as f64;
    let (joint_converse, joint_achievable) = match (report.w_beta, report.v_max, report.v_min) {
        (Some(w), Some(vmax), Some(vmin)) => (
            Some((w - h) * (1.0 - (k + 1.0) * h) / (k + 1.0)),
            Some(
                w / (k + 1.0)
                    + (vmax - vmin)
                    + (1.0 / report.beta_min + 1.0 / report.beta_max) * h
                    + 2.0,
            ),
        ),
        _ => (None, None),
    };
    Ok(TheoremBounds {
        h,
        shared_converse: (v - h / beta) * (1.0 - h),
        shared_achievable: v + h / beta + 1.0,
        joint_converse,
        joint_achievable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_sensor_network, ExperimentModel, FisherVariant, ParameterSpace};
    use proptest::prelude::*;

    fn network() -> ExperimentSuite {
        make_sensor_network(
            4,
            FisherVariant::Narrative,
            ParameterSpace::new(0.01, 0.99, 197).unwrap(),
        )
        .unwrap()
    }

    fn two_sensor() -> ExperimentSuite {
        let shared = ParameterSpace::new(0.1, 4.0, 197).unwrap();
        ExperimentSuite::new(vec![
            ExperimentModel::mean_variance(shared, ParameterSpace::new(0.1, 0.7, 101).unwrap())
                .unwrap(),
            ExperimentModel::mean_variance(shared, ParameterSpace::new(1.0, 5.0, 101).unwrap())
                .unwrap(),
        ])
        .unwrap()
    }

    fn two_sensor_truth() -> GroundTruth {
        GroundTruth {
            theta: 0.25,
            alphas: vec![0.25, 4.0],
        }
    }

    #[test]
    fn v_beta_network() {
        let v = v_beta(&network(), 0.2, &[], 0.005).unwrap();
        assert!((v - 16.0).abs() < 1e-9);
    }

    #[test]
    fn v_beta_single_experiment() {
        // N(0, 2 theta) has narrative FI 1/(8 theta^2); theta = 0.25 gives 2
        let space = ParameterSpace::new(0.1, 1.0, 11).unwrap();
        let m = ExperimentModel::variance_profile(0.0, 0.0, 2.0, FisherVariant::Narrative, space).unwrap();
        let suite = ExperimentSuite::new(vec![m]).unwrap();
        assert!((v_beta(&suite, 0.25, &[], 0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w_beta_two_sensor_matches_brute_force() {
        let tol = Tolerances::new(0.01, vec![0.1, 0.05], 10).unwrap();
        let (w, q) = w_beta(&two_sensor(), &two_sensor_truth(), &tol).unwrap();
        let js = [4.0, 0.25];
        let jp = [8.0, 0.03125];
        let b = optimizer::brute_force(&js, &jp, &tol, 1e-4).unwrap();
        let wb = optimizer::objective(&b, &js, &jp, &tol).unwrap();
        assert!(w <= wb && (wb - w) / w < 1e-6, "{w} vs {wb}");
        assert!((q.weights()[0] - b.weights()[0]).abs() < 1e-3);

        let (w10, q10) = w_beta(&two_sensor(), &two_sensor_truth(), &tol.scaled(10.0)).unwrap();
        assert!((w10 * 10.0 / w - 1.0).abs() < 1e-6);
        assert!((q10.weights()[0] - q.weights()[0]).abs() < 1e-6);
    }

    #[test]
    fn w_beta_symmetric() {
        let shared = ParameterSpace::new(0.1, 4.0, 21).unwrap();
        let m = ExperimentModel::mean_variance(shared, ParameterSpace::new(0.5, 2.0, 21).unwrap()).unwrap();
        let suite = ExperimentSuite::new(vec![m.clone(), m]).unwrap();
        let truth = GroundTruth { theta: 1.0, alphas: vec![1.0, 1.0] };
        let tol = Tolerances::new(0.1, vec![0.1, 0.1], 10).unwrap();
        let (_, q) = w_beta(&suite, &truth, &tol).unwrap();
        assert!((q.weights()[0] - 0.5).abs() < 1e-9);
        assert!(matches!(
            w_beta(&network(), &GroundTruth::shared_only(0.2), &Tolerances::shared_only(0.1, 1).unwrap()),
            Err(TheoryError::NotJoint)
        ));
    }

    #[test]
    fn theorem_bound_examples() {
        let tol = Tolerances::shared_only(0.005, 10).unwrap();
        let report = bound_report(&network(), &GroundTruth::shared_only(0.2), &tol).unwrap();
        assert_eq!(report.q_star, vec![1.0, 0.0, 0.0, 0.0]);
        let b = theorem_bounds(&report, 0.01).unwrap();
        assert!((b.shared_converse - 13.86).abs() < 1e-9);
        let zero = theorem_bounds(&report, 0.0).unwrap();
        assert!((zero.shared_converse - 16.0).abs() < 1e-12);
        assert!((zero.shared_achievable - 17.0).abs() < 1e-12);
        assert!(zero.joint_converse.is_none());
        assert!(theorem_bounds(&report, 1.0).is_err());
    }

    #[test]
    fn joint_report_components() {
        let tol = Tolerances::new(0.01, vec![0.1, 0.05], 10).unwrap();
        let r = bound_report(&two_sensor(), &two_sensor_truth(), &tol).unwrap();
        let w = r.w_beta.unwrap();
        let sum = r.v_shared.unwrap() + r.v_private.iter().sum::<f64>();
        assert!((sum / w - 1.0).abs() < 1e-12);
        assert!(r.v_min.unwrap() <= r.v_max.unwrap());
        assert_eq!((r.beta_min, r.beta_max), (0.01, 0.1));
        let b = theorem_bounds(&r, 0.0).unwrap();
        assert!((b.joint_converse.unwrap() - w / 3.0).abs() < 1e-9);
        assert!(b.joint_converse.unwrap() <= b.joint_achievable.unwrap());
    }

    #[test]
    fn single_experiment_joint_limit() {
        // with K = 1 the joint bound per unit 1/beta tends to 1/J(theta) as the
        // private tolerance loosens
        let shared = ParameterSpace::new(0.1, 4.0, 21).unwrap();
        let m = ExperimentModel::mean_variance(shared, ParameterSpace::new(0.5, 2.0, 21).unwrap()).unwrap();
        let suite = ExperimentSuite::new(vec![m]).unwrap();
        let truth = GroundTruth { theta: 1.0, alphas: vec![0.5] };
        let beta = 1e-3;
        let tol = Tolerances::new(beta, vec![1e6], 10).unwrap();
        let (w, _) = w_beta(&suite, &truth, &tol).unwrap();
        assert!((w * beta - 0.5).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn v_beta_times_beta_is_constant(theta in 0.01f64..0.99, beta in 1e-4f64..1.0) {
            let suite = network();
            let a = v_beta(&suite, theta, &[], beta).unwrap() * beta;
            let b = v_beta(&suite, theta, &[], 0.01).unwrap() * 0.01;
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }

        #[test]
        fn v_beta_matches_shared_only_optimum(
            js in prop::collection::vec(0.01f64..20.0, 1..6),
            beta in 1e-3f64..1.0,
        ) {
            let tol = Tolerances::shared_only(beta, 1).unwrap();
            let q = optimizer::minimize(&js, &[], &tol).unwrap();
            let value = optimizer::objective(&q, &js, &[], &tol).unwrap();
            let best = js.iter().copied().fold(0.0, f64::max);
            prop_assert!((value - 1.0 / (beta * best)).abs() <= 1e-10 * value);
        }

        #[test]
        fn dropping_private_terms_never_increases(
            theta in 0.2f64..3.0, a1 in 0.1f64..0.7, a2 in 1.0f64..5.0,
            beta in 1e-3f64..0.1, b1 in 0.01f64..1.0, b2 in 0.01f64..1.0,
        ) {
            let suite = two_sensor();
            let truth = GroundTruth { theta, alphas: vec![a1, a2] };
            let tol = Tolerances::new(beta, vec![b1, b2], 1).unwrap();
            let (w, _) = w_beta(&suite, &truth, &tol).unwrap();
            let v = v_beta(&suite, theta, &truth.alphas, beta).unwrap();
            prop_assert!(w >= v * (1.0 - 1e-12));
        }

        #[test]
        fn converse_below_achievable(h in 0.0f64..0.05, beta in 1e-3f64..0.02) {
            let tol = Tolerances::new(beta, vec![0.1, 0.05], 1).unwrap();
            let r = bound_report(&two_sensor(), &two_sensor_truth(), &tol).unwrap();
            let b = theorem_bounds(&r, h).unwrap();
            if b.shared_converse > 0.0 {
                prop_assert!(b.shared_converse <= b.shared_achievable);
            }
            if b.joint_converse.unwrap() > 0.0 {
                prop_assert!(b.joint_converse.unwrap() <= b.joint_achievable.unwrap());
            }
        }
    }
}
