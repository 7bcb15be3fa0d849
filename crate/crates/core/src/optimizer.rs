//! Simplex minimization behind the cost-aware sampling rule.
//!
//! The objective is
//! `(1/beta) / sum_i q_i J_i + sum_i (1/beta_i) / (q_i P_i)`
//! where `J` is the shared and `P` the private Fisher information. It is
//! convex on the simplex and blows up on the boundary whenever private
//! tolerances are present, so the solver stays in the interior.

use thiserror::Error;

use crate::rules::Tolerances;

/// Lower bound on every weight while iterating.
pub const INTERIOR_FLOOR: f64 = 1e-9;
const MAX_ITERATIONS: usize = 10_000;
const GAP_TOLERANCE: f64 = 1e-12;
const STALL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("ill-posed objective: {0}")]
    IllPosed(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no convergence after {iterations} iterations (objective {objective})")]
    NotConverged {
        iterations: usize,
        best: SimplexPoint,
        objective: f64,
    },
    #[error("brute force supports at most 3 experiments, got {0}")]
    Unsupported(usize),
    #[error("resolution must lie in (0, 1], got {0}")]
    Resolution(f64),
}

/// A probability vector over experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    weights: Vec<f64>,
}

impl SimplexPoint {
    /// Normalizes non-negative weights onto the simplex.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, OptimizerError> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(OptimizerError::Dimension(
                "weights must be non-empty, finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(OptimizerError::Dimension("weights sum to zero".into()));
        }
        Ok(Self {
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0 / k as f64; k],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check_inputs(
    j_shared: &[f64],
    j_private: &[f64],
    tol: &Tolerances,
) -> Result<bool, OptimizerError> {
    let k = j_shared.len();
    if k == 0 {
        return Err(OptimizerError::Dimension("no experiments".into()));
    }
    let joint = !tol.beta_private.is_empty();
    if joint && (tol.beta_private.len() != k || j_private.len() != k) {
        return Err(OptimizerError::Dimension(format!(
            "{k} experiments but {} private tolerances and {} private FI values",
            tol.beta_private.len(),
            j_private.len()
        )));
    }
    if j_shared.iter().any(|j| !(j.is_finite() && *j >= 0.0)) {
        return Err(OptimizerError::IllPosed(
            "shared FI values must be finite and non-negative".into(),
        ));
    }
    if j_shared.iter().all(|j| *j == 0.0) {
        return Err(OptimizerError::IllPosed("all shared FI values are zero".into()));
    }
    if joint && j_private.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(OptimizerError::IllPosed(
            "private FI values must be finite and positive".into(),
        ));
    }
    Ok(joint)
}

fn raw_objective(q: &[f64], j_shared: &[f64], j_private: &[f64], tol: &Tolerances) -> f64 {
    let info: f64 = q.iter().zip(j_shared).map(|(q, j)| q * j).sum();
    let mut value = 1.0 / (tol.beta * info);
    for (i, beta_i) in tol.beta_private.iter().enumerate() {
        if q[i] == 0.0 {
            return f64::INFINITY;
        }
        value += 1.0 / (beta_i * q[i] * j_private[i]);
    }
    value
}

fn gradient(q: &[f64], j_shared: &[f64], j_private: &[f64], tol: &Tolerances, out: &mut [f64]) {
    let info: f64 = q.iter().zip(j_shared).map(|(q, j)| q * j).sum();
    let shared_scale = 1.0 / (tol.beta * info * info);
    for i in 0..q.len() {
        out[i] = -j_shared[i] * shared_scale;
        if let Some(beta_i) = tol.beta_private.get(i) {
            out[i] -= 1.0 / (beta_i * q[i] * q[i] * j_private[i]);
        }
    }
}

/// Objective value at `q`; infinite when a private term has zero weight.
pub fn objective(
    q: &SimplexPoint,
    j_shared: &[f64],
    j_private: &[f64],
    tol: &Tolerances,
) -> Result<f64, OptimizerError> {
    check_inputs(j_shared, j_private, tol)?;
    if q.len() != j_shared.len() {
        return Err(OptimizerError::Dimension(format!(
            "point has {} weights for {} experiments",
            q.len(),
            j_shared.len()
        )));
    }
    Ok(raw_objective(&q.weights, j_shared, j_private, tol))
}

/// Minimizer over the simplex.
///
/// Shared-only tolerances give the argmax-FI vertex in closed form (mass split
/// evenly among ties). Otherwise exponentiated-gradient steps with
/// backtracking run until the Frank-Wolfe gap certifies optimality.
pub fn minimize(
    j_shared: &[f64],
    j_private: &[f64],
    tol: &Tolerances,
) -> Result<SimplexPoint, OptimizerError> {
    let joint = check_inputs(j_shared, j_private, tol)?;
    let k = j_shared.len();
    if !joint {
        let best = j_shared.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = j_shared
            .iter()
            .map(|j| if *j == best { 1.0 } else { 0.0 })
            .collect();
        return SimplexPoint::from_weights(weights);
    }
    if k == 1 {
        return Ok(SimplexPoint::uniform(1));
    }

    let mut q = vec![1.0 / k as f64; k];
    let mut value = raw_objective(&q, j_shared, j_private, tol);
    let mut grad = vec![0.0; k];
    let mut trial = vec![0.0; k];
    let mut step = 1.0;
    for _ in 0..MAX_ITERATIONS {
        gradient(&q, j_shared, j_private, tol, &mut grad);
        let mean: f64 = q.iter().zip(&grad).map(|(q, g)| q * g).sum();
        let min = grad.iter().copied().fold(f64::INFINITY, f64::min);
        // convexity: value - optimum <= mean - min
        let gap = mean - min;
        if gap <= GAP_TOLERANCE * value {
            return Ok(SimplexPoint { weights: q });
        }
        let scale = mean.abs();
        let mut accepted = false;
        while step > 1e-300 {
            for i in 0..k {
                trial[i] = q[i] * (-step * (grad[i] - mean) / scale).exp();
            }
            let total: f64 = trial.iter().sum();
            for w in trial.iter_mut() {
                *w = (*w / total).max(INTERIOR_FLOOR);
            }
            let total: f64 = trial.iter().sum();
            for w in trial.iter_mut() {
                *w /= total;
            }
            let candidate = raw_objective(&trial, j_shared, j_private, tol);
            if candidate < value {
                let change = (value - candidate) / value;
                std::mem::swap(&mut q, &mut trial);
                value = candidate;
                step *= 1.5;
                accepted = true;
                if change < STALL_TOLERANCE && gap <= 1e-8 * value {
                    return Ok(SimplexPoint { weights: q });
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no representable descent step left
            return Ok(SimplexPoint { weights: q });
        }
    }
    Err(OptimizerError::NotConverged {
        iterations: MAX_ITERATIONS,
        best: SimplexPoint { weights: q },
        objective: value,
    })
}

/// Exhaustive search over the simplex lattice with spacing `resolution`.
pub fn brute_force(
    j_shared: &[f64],
    j_private: &[f64],
    tol: &Tolerances,
    resolution: f64,
) -> Result<SimplexPoint, OptimizerError> {
    check_inputs(j_shared, j_private, tol)?;
    let k = j_shared.len();
    if k > 3 {
        return Err(OptimizerError::Unsupported(k));
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(OptimizerError::Resolution(resolution));
    }
    let n = (1.0 / resolution).round() as usize;
    let step = 1.0 / n as f64;
    let mut best = (f64::INFINITY, vec![0.0; k]);
    let mut q = vec![0.0; k];
    let mut consider = |q: &[f64]| {
        let v = raw_objective(q, j_shared, j_private, tol);
        if v < best.0 {
            best = (v, q.to_vec());
        }
    };
    match k {
        1 => {
            q[0] = 1.0;
            consider(&q);
        }
        2 => {
            for a in 0..=n {
                q[0] = a as f64 * step;
                q[1] = (n - a) as f64 * step;
                consider(&q);
            }
        }
        _ => {
            for a in 0..=n {
                for b in 0..=(n - a) {
                    q[0] = a as f64 * step;
                    q[1] = b as f64 * step;
                    q[2] = (n - a - b) as f64 * step;
                    consider(&q);
                }
            }
        }
    }
    SimplexPoint::from_weights(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sensor_tol() -> Tolerances {
        Tolerances::new(0.01, vec![0.1, 0.05], 1000).unwrap()
    }

    #[test]
    fn objective_examples() {
        let q = SimplexPoint::uniform(2);
        let v = objective(&q, &[4.0, 0.25], &[8.0, 0.03125], &two_sensor_tol()).unwrap();
        let expected = 100.0 / 2.125 + 10.0 / 4.0 + 20.0 / 0.015625;
        assert!((v - expected).abs() < 1e-9);
        assert!((v - 1329.56).abs() < 0.01);

        let single = Tolerances::shared_only(0.1, 10).unwrap();
        let v = objective(&SimplexPoint::uniform(1), &[2.0], &[], &single).unwrap();
        assert!((v - 5.0).abs() < 1e-12);

        let edge = SimplexPoint::from_weights(vec![1.0, 0.0]).unwrap();
        let v = objective(&edge, &[4.0, 0.25], &[8.0, 0.03125], &two_sensor_tol()).unwrap();
        assert_eq!(v, f64::INFINITY);
    }

    #[test]
    fn ill_posed_inputs() {
        let tol = Tolerances::shared_only(0.1, 10).unwrap();
        assert!(matches!(
            minimize(&[0.0, 0.0], &[], &tol),
            Err(OptimizerError::IllPosed(_))
        ));
        assert!(matches!(
            minimize(&[1.0, 1.0], &[1.0], &two_sensor_tol()),
            Err(OptimizerError::Dimension(_))
        ));
        assert!(matches!(
            brute_force(&[1.0; 4], &[1.0; 4], &Tolerances::new(0.1, vec![0.1; 4], 1).unwrap(), 0.1),
            Err(OptimizerError::Unsupported(4))
        ));
    }

    #[test]
    fn shared_only_vertex() {
        let tol = Tolerances::shared_only(0.005, 10).unwrap();
        let q = minimize(&[12.5, 10.64, 1.315, 0.781], &[], &tol).unwrap();
        assert_eq!(q.weights(), &[1.0, 0.0, 0.0, 0.0]);
        let tie = minimize(&[3.0, 1.0, 3.0], &[], &tol).unwrap();
        assert_eq!(tie.weights(), &[0.5, 0.0, 0.5]);
        let v = objective(&q, &[12.5, 10.64, 1.315, 0.781], &[], &tol).unwrap();
        assert!((v - 16.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_instance() {
        let tol = Tolerances::new(0.1, vec![0.1, 0.1], 10).unwrap();
        let q = minimize(&[1.0, 1.0], &[1.0, 1.0], &tol).unwrap();
        for w in q.weights() {
            assert!((w - 0.5).abs() < 1e-9);
        }
        let b = brute_force(&[1.0, 1.0], &[1.0, 1.0], &tol, 1e-3).unwrap();
        assert!((b.weights()[0] - 0.5).abs() <= 1e-3);
        let one = brute_force(&[2.0], &[1.0], &Tolerances::new(0.1, vec![0.1], 1).unwrap(), 0.1).unwrap();
        assert_eq!(one.weights(), &[1.0]);
    }

    #[test]
    fn two_sensor_instance_matches_brute_force() {
        let tol = two_sensor_tol();
        let js = [4.0, 0.25];
        let jp = [8.0, 0.03125];
        let q = minimize(&js, &jp, &tol).unwrap();
        let b = brute_force(&js, &jp, &tol, 1e-4).unwrap();
        for (a, c) in q.weights().iter().zip(b.weights()) {
            assert!((a - c).abs() <= 1e-3, "{q:?} vs {b:?}");
        }
        let fq = objective(&q, &js, &jp, &tol).unwrap();
        let fb = objective(&b, &js, &jp, &tol).unwrap();
        assert!(fq <= fb * (1.0 + 1e-8));
        assert!(q.weights().iter().all(|w| *w >= INTERIOR_FLOOR));
        assert!((q.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
