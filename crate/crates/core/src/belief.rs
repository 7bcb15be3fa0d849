//! Grid-quadrature posterior over `theta` and the private parameters.
//!
//! Each experiment owns a table of accumulated log-likelihoods over
//! `(theta, alpha_i)`. Since an observation from experiment `i` only touches
//! table `i`, the joint posterior factorizes as
//! `pi(theta) * prod_i [pi_i(alpha_i) * exp(LL_i(theta, alpha_i))]` and the
//! marginal of `theta` needs one log-sum-exp per table row.
//!
//! Log-likelihoods are accumulated in fixed point (2^-32 resolution), so the
//! tables, and everything derived from them, do not depend on the order in
//! which observations arrive.

use rand::Rng;
use thiserror::Error;

use crate::model::{ExperimentSuite, ModelError, ParameterSpace, Prior};

const SCALE: f64 = 4_294_967_296.0;
const INV_SCALE: f64 = 1.0 / SCALE;
/// Accumulator value of a cell with zero likelihood.
const DEAD: i64 = i64::MIN;
/// Terms below `exp(-40)` of the row maximum do not change an f64 sum of a
/// few hundred terms.
const NEGLIGIBLE: f64 = -40.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error("observation {y} from experiment {} leaves no posterior mass (outside the common support)", .experiment + 1)]
    Degenerate { experiment: usize, y: f64 },
    #[error("posterior has no finite mass")]
    Unnormalizable,
    #[error("log-likelihood accumulator overflow in experiment {}", .0 + 1)]
    Overflow(usize),
    #[error("experiment index {index} out of range for {k} experiments")]
    BadExperiment { index: usize, k: usize },
    #[error("suite has no private parameters")]
    NoPrivate,
    #[error("priors do not match the suite: {0}")]
    PriorMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Priors on `theta` and on each private parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub theta: Prior,
    pub alphas: Vec<Prior>,
}

impl Priors {
    pub fn uniform(suite: &ExperimentSuite) -> Self {
        Self {
            theta: Prior::uniform(*suite.shared_space()),
            alphas: suite
                .models()
                .iter()
                .filter_map(|m| m.private_space().copied().map(Prior::uniform))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct LikelihoodTable {
    alpha_grid: Vec<f64>,
    alpha_space: Option<ParameterSpace>,
    alpha_log_prior: Vec<f64>,
    /// `ln prior + ln quadrature weight`; a single zero in shared-only mode.
    alpha_log_base: Vec<f64>,
    width: usize,
    /// Fixed-point log-likelihood sums; `DEAD` marks zero likelihood.
    acc: Vec<i64>,
    /// Largest live accumulator per theta row (`DEAD` if none).
    row_max_acc: Vec<i64>,
    /// `ln int pi_i(a) exp(LL_i(theta_j, a)) da` per theta row.
    row_log_mass: Vec<f64>,
}

impl LikelihoodTable {
    fn ll(&self, cell: usize) -> Option<f64> {
        match self.acc[cell] {
            DEAD => None,
            a => Some(a as f64 * INV_SCALE),
        }
    }
}

/// `exp(d)` for `d` in `[-40, 0]` to within a few ulp, written without
/// branches or libm calls so that row sums vectorize.
#[inline(always)]
fn exp_bounded(d: f64) -> f64 {
    const SHIFTER: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let kf = (d * std::f64::consts::LOG2_E + SHIFTER) - SHIFTER;
    let r = (d - kf * LN2_HI) - kf * LN2_LO;
    // Taylor series to degree 12 on |r| <= ln2 / 2
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    p * f64::from_bits(((kf as i64 + 1023) as u64) << 52)
}

/// Rounds half away from zero; `as` truncates, which avoids a libm call.
#[cfg(test)]
fn quantize(v: f64) -> Option<i64> {
    let q = v * SCALE;
    if q.abs() < 9.0e18 {
        Some((q + 0.5f64.copysign(q)) as i64)
    } else {
        None
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values
        .iter()
        .filter(|v| **v - max > NEGLIGIBLE)
        .map(|v| (v - max).exp())
        .sum();
    max + sum.ln()
}

fn argmax_with_ties<T: Ord + Copy, R: Rng + ?Sized>(
    values: impl Iterator<Item = Option<T>>,
    rng: &mut R,
) -> Option<usize> {
    let mut best: Option<T> = None;
    let mut ties: Vec<usize> = Vec::new();
    for (idx, v) in values.enumerate() {
        let Some(v) = v else { continue };
        match best {
            Some(b) if v < b => {}
            Some(b) if v == b => ties.push(idx),
            _ => {
                best = Some(v);
                ties.clear();
                ties.push(idx);
            }
        }
    }
    match ties.len() {
        0 => None,
        1 => Some(ties[0]),
        n => Some(ties[rng.random_range(0..n)]),
    }
}

/// Posterior means and conditional posterior costs under quadratic loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub theta_mean: f64,
    pub cost_shared: f64,
    /// Conditional on the nearest grid point to `theta_mean`.
    pub alpha_mean: Vec<f64>,
    pub cost_private: Vec<f64>,
}

/// Grid maximum-likelihood estimates. `theta` maximizes the profile
/// likelihood `sum_i max_a LL_i(theta, a)`; each alpha maximizes its table row
/// at that `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlEstimates {
    pub theta: f64,
    pub theta_index: usize,
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub theta_mmse: f64,
    pub theta_ml: f64,
    pub alpha_mmse: Vec<f64>,
    pub alpha_ml: Vec<f64>,
    pub cost_shared: f64,
    pub cost_private: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BeliefState {
    suite: ExperimentSuite,
    theta_space: ParameterSpace,
    theta_grid: Vec<f64>,
    theta_log_prior: Vec<f64>,
    tables: Vec<LikelihoodTable>,
    counts: Vec<usize>,
    t: usize,
    scratch: Vec<f64>,
    spare: Vec<i64>,
    row_buf: Vec<f64>,
    pending_rows: Vec<f64>,
    pending_max: Vec<i64>,
}

impl BeliefState {
    pub fn new(suite: &ExperimentSuite, priors: &Priors) -> Result<Self, BeliefError> {
        let theta_space = *suite.shared_space();
        if *priors.theta.support() != theta_space {
            return Err(BeliefError::PriorMismatch(
                "theta prior support differs from the shared space".into(),
            ));
        }
        let expected_alpha_priors = if suite.has_private() { suite.len() } else { 0 };
        if priors.alphas.len() != expected_alpha_priors {
            return Err(BeliefError::PriorMismatch(format!(
                "expected {expected_alpha_priors} private priors, got {}",
                priors.alphas.len()
            )));
        }
        let n_theta = theta_space.grid_size();
        let mut tables = Vec::with_capacity(suite.len());
        for (i, model) in suite.models().iter().enumerate() {
            let table = match model.private_space() {
                Some(space) => {
                    let prior = &priors.alphas[i];
                    if prior.support() != space {
                        return Err(BeliefError::PriorMismatch(format!(
                            "private prior {} support differs from its space",
                            i + 1
                        )));
                    }
                    let log_prior = prior.log_density();
                    let log_base = log_prior
                        .iter()
                        .zip(space.trapezoid_weights())
                        .map(|(lp, w)| lp + w.ln())
                        .collect::<Vec<_>>();
                    let width = space.grid_size();
                    let row = log_sum_exp(&log_base);
                    LikelihoodTable {
                        alpha_grid: space.points(),
                        alpha_space: Some(*space),
                        alpha_log_prior: log_prior,
                        alpha_log_base: log_base,
                        width,
                        acc: vec![0; n_theta * width],
                        row_max_acc: vec![0; n_theta],
                        row_log_mass: vec![row; n_theta],
                    }
                }
                None => LikelihoodTable {
                    alpha_grid: Vec::new(),
                    alpha_space: None,
                    alpha_log_prior: vec![0.0],
                    alpha_log_base: vec![0.0],
                    width: 1,
                    acc: vec![0; n_theta],
                    row_max_acc: vec![0; n_theta],
                    row_log_mass: vec![0.0; n_theta],
                },
            };
            tables.push(table);
        }
        let max_width = tables.iter().map(|t| t.width).max().unwrap_or(1);
        Ok(Self {
            suite: suite.clone(),
            theta_space,
            theta_grid: theta_space.points(),
            theta_log_prior: priors.theta.log_density(),
            tables,
            counts: vec![0; suite.len()],
            t: 0,
            scratch: vec![0.0; n_theta * max_width],
            spare: Vec::with_capacity(n_theta * max_width),
            row_buf: vec![0.0; max_width],
            pending_rows: vec![0.0; n_theta],
            pending_max: vec![DEAD; n_theta],
        })
    }

    pub fn suite(&self) -> &ExperimentSuite {
        &self.suite
    }

    pub fn theta_space(&self) -> &ParameterSpace {
        &self.theta_space
    }

    pub fn sample_counts(&self) -> &[usize] {
        &self.counts
    }

    /// Total number of observations absorbed.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Absorbs one observation from `experiment`. On error the state is left
    /// unchanged.
    pub fn update(&mut self, experiment: usize, y: f64) -> Result<(), BeliefError> {
        let k = self.suite.len();
        if experiment >= k {
            return Err(BeliefError::BadExperiment {
                index: experiment,
                k,
            });
        }
        let n_theta = self.theta_grid.len();
        let table = &self.tables[experiment];
        let width = table.width;
        let cells = n_theta * width;
        self.suite.model(experiment).fill_log_likelihood(
            y,
            &self.theta_grid,
            &table.alpha_grid,
            &mut self.scratch[..cells],
        )?;

        // new sums go to a spare buffer so that errors leave the table intact
        self.spare.resize(cells, 0);
        let spare = &mut self.spare;
        let vals = &mut self.row_buf[..width];
        for j in 0..n_theta {
            let start = j * width;
            let mut max = f64::NEG_INFINITY;
            let mut max_acc = DEAD;
            let mut overflow = false;
            let row_acc = &table.acc[start..start + width];
            let row_ll = &self.scratch[start..start + width];
            let row_out = &mut spare[start..start + width];
            for kk in 0..width {
                let (old, v) = (row_acc[kk], row_ll[kk]);
                let q = v * SCALE;
                let rounded = (q + 0.5f64.copysign(q)) as i64;
                let (sum, wrapped) = old.overflowing_add(rounded);
                let dead = old == DEAD || v == f64::NEG_INFINITY;
                overflow |= !dead && (!(q.abs() < 9.0e18) || wrapped || sum == DEAD);
                let new = if dead { DEAD } else { sum };
                row_out[kk] = new;
                max_acc = max_acc.max(new);
                let lv = if dead {
                    f64::NEG_INFINITY
                } else {
                    table.alpha_log_base[kk] + new as f64 * INV_SCALE
                };
                vals[kk] = lv;
                max = if lv > max { lv } else { max };
            }
            if overflow {
                return Err(BeliefError::Overflow(experiment));
            }
            self.pending_max[j] = max_acc;
            self.pending_rows[j] = if width == 1 || max == f64::NEG_INFINITY {
                max
            } else {
                let sum: f64 = vals
                    .iter()
                    .map(|v| {
                        let d = v - max;
                        if d > NEGLIGIBLE {
                            exp_bounded(d)
                        } else {
                            0.0
                        }
                    })
                    .sum();
                max + sum.ln()
            };
        }
        let alive = (0..n_theta).any(|j| {
            let mut lp = self.theta_log_prior[j] + self.pending_rows[j];
            for (l, other) in self.tables.iter().enumerate() {
                if l != experiment {
                    lp += other.row_log_mass[j];
                }
            }
            lp > f64::NEG_INFINITY
        });
        if !alive {
            return Err(BeliefError::Degenerate { experiment, y });
        }

        let table = &mut self.tables[experiment];
        std::mem::swap(&mut table.acc, &mut self.spare);
        table.row_log_mass.copy_from_slice(&self.pending_rows);
        table.row_max_acc.copy_from_slice(&self.pending_max);
        self.counts[experiment] += 1;
        self.t += 1;
        Ok(())
    }

    fn log_posterior_theta(&self) -> Vec<f64> {
        let mut lp = self.theta_log_prior.clone();
        for table in &self.tables {
            for (acc, row) in lp.iter_mut().zip(&table.row_log_mass) {
                *acc += row;
            }
        }
        lp
    }

    /// Normalized marginal posterior density of `theta` on its grid.
    pub fn marginal_shared(&self) -> Result<Vec<f64>, BeliefError> {
        let lp = self.log_posterior_theta();
        normalize_log_density(&lp, &self.theta_space)
    }

    /// Posterior density of `alpha_i` given `theta` snapped to the nearest
    /// grid point.
    pub fn conditional_private(
        &self,
        experiment: usize,
        theta_hat: f64,
    ) -> Result<Vec<f64>, BeliefError> {
        let table = self.table(experiment)?;
        let space = table.alpha_space.ok_or(BeliefError::NoPrivate)?;
        let j = self.theta_space.nearest_index(theta_hat);
        let lp: Vec<f64> = (0..table.width)
            .map(|k| match table.ll(j * table.width + k) {
                Some(ll) => table.alpha_log_prior[k] + ll,
                None => f64::NEG_INFINITY,
            })
            .collect();
        normalize_log_density(&lp, &space)
    }

    fn table(&self, experiment: usize) -> Result<&LikelihoodTable, BeliefError> {
        self.tables.get(experiment).ok_or(BeliefError::BadExperiment {
            index: experiment,
            k: self.suite.len(),
        })
    }

    /// MMSE estimates and their conditional posterior costs.
    pub fn posterior_summary(&self) -> Result<PosteriorSummary, BeliefError> {
        let density = self.marginal_shared()?;
        let (theta_mean, cost_shared) = moments(&density, &self.theta_grid, &self.theta_space);
        let mut alpha_mean = Vec::new();
        let mut cost_private = Vec::new();
        if self.suite.has_private() {
            for (i, table) in self.tables.iter().enumerate() {
                let h = self.conditional_private(i, theta_mean)?;
                let space = table.alpha_space.expect("private suite");
                let (m, v) = moments(&h, &table.alpha_grid, &space);
                alpha_mean.push(m);
                cost_private.push(v);
            }
        }
        Ok(PosteriorSummary {
            theta_mean,
            cost_shared,
            alpha_mean,
            cost_private,
        })
    }

    /// Grid ML estimates; exact ties are broken uniformly at random.
    pub fn ml_estimates<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MlEstimates, BeliefError> {
        let n_theta = self.theta_grid.len();
        let scores = (0..n_theta).map(|j| {
            let mut total: i128 = 0;
            for table in &self.tables {
                match table.row_max_acc[j] {
                    DEAD => return None,
                    best => total += best as i128,
                }
            }
            Some(total)
        });
        let j = argmax_with_ties(scores, rng).ok_or(BeliefError::Unnormalizable)?;
        let mut alphas = Vec::new();
        if self.suite.has_private() {
            for table in &self.tables {
                let row = j * table.width..(j + 1) * table.width;
                let values = table.acc[row].iter().map(|a| (*a != DEAD).then_some(*a));
                let k = argmax_with_ties(values, rng).ok_or(BeliefError::Unnormalizable)?;
                alphas.push(table.alpha_grid[k]);
            }
        }
        Ok(MlEstimates {
            theta: self.theta_grid[j],
            theta_index: j,
            alphas,
        })
    }

    pub fn estimates<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Estimates, BeliefError> {
        let summary = self.posterior_summary()?;
        let ml = self.ml_estimates(rng)?;
        Ok(Estimates {
            theta_mmse: summary.theta_mean,
            theta_ml: ml.theta,
            alpha_mmse: summary.alpha_mean,
            alpha_ml: ml.alphas,
            cost_shared: summary.cost_shared,
            cost_private: summary.cost_private,
        })
    }

    /// Posterior over `(theta, alpha_i)` cells for experiment `i`, as
    /// `(theta, alpha, probability)` triples that sum to one. Cells with
    /// relative mass below 1e-16 are dropped.
    pub(crate) fn joint_cells(
        &self,
        experiment: usize,
    ) -> Result<Vec<(f64, Option<f64>, f64)>, BeliefError> {
        let table = self.table(experiment)?;
        let theta_w = self.theta_space.trapezoid_weights();
        let mut lw = Vec::with_capacity(self.theta_grid.len() * table.width);
        for j in 0..self.theta_grid.len() {
            let mut base = self.theta_log_prior[j] + theta_w[j].ln();
            for (l, other) in self.tables.iter().enumerate() {
                if l != experiment {
                    base += other.row_log_mass[j];
                }
            }
            for k in 0..table.width {
                let v = match table.ll(j * table.width + k) {
                    Some(ll) => base + table.alpha_log_base[k] + ll,
                    None => f64::NEG_INFINITY,
                };
                lw.push(v);
            }
        }
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(BeliefError::Unnormalizable);
        }
        let mut cells = Vec::new();
        let mut total = 0.0;
        for (c, v) in lw.iter().enumerate() {
            let w = (v - max).exp();
            if w > 1e-16 {
                let j = c / table.width;
                let alpha = table.alpha_grid.get(c % table.width).copied();
                cells.push((self.theta_grid[j], alpha, w));
                total += w;
            }
        }
        for cell in &mut cells {
            cell.2 /= total;
        }
        Ok(cells)
    }
}

fn normalize_log_density(lp: &[f64], space: &ParameterSpace) -> Result<Vec<f64>, BeliefError> {
    let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(BeliefError::Unnormalizable);
    }
    let mut density: Vec<f64> = lp.iter().map(|v| (v - max).exp()).collect();
    let z = space.integrate(&density);
    if !(z > 0.0) || !z.is_finite() {
        return Err(BeliefError::Unnormalizable);
    }
    for d in &mut density {
        *d /= z;
    }
    Ok(density)
}

/// Mean and variance (two-pass) of a normalized grid density.
fn moments(density: &[f64], grid: &[f64], space: &ParameterSpace) -> (f64, f64) {
    let first: Vec<f64> = density.iter().zip(grid).map(|(p, x)| p * x).collect();
    let mean = space.integrate(&first);
    let second: Vec<f64> = density
        .iter()
        .zip(grid)
        .map(|(p, x)| p * (x - mean) * (x - mean))
        .collect();
    (mean, space.integrate(&second).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        make_sensor_network, CustomFamily, ExperimentModel, FisherVariant, GroundTruth,
    };
    use proptest::prelude::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    /// `y ~ N(theta, 1)`.
    #[derive(Debug)]
    struct UnitGaussian;

    impl CustomFamily for UnitGaussian {
        fn log_pdf(&self, y: f64, theta: f64, _alpha: Option<f64>) -> f64 {
            crate::model::std_normal_log_pdf(y - theta)
        }
        fn sample(&self, theta: f64, _alpha: Option<f64>, rng: &mut dyn RngCore) -> f64 {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            theta + z
        }
        fn fisher_shared(&self, _theta: f64, _alpha: Option<f64>) -> f64 {
            1.0
        }
        fn fisher_private(&self, _theta: f64, _alpha: f64) -> f64 {
            0.0
        }
        fn moments(&self, theta: f64, _alpha: Option<f64>) -> (f64, f64) {
            (theta, 1.0)
        }
    }

    /// Uniform on `[theta - 1, theta + 1]`: bounded support.
    #[derive(Debug)]
    struct Boxcar;

    impl CustomFamily for Boxcar {
        fn log_pdf(&self, y: f64, theta: f64, _alpha: Option<f64>) -> f64 {
            if (y - theta).abs() <= 1.0 {
                (0.5f64).ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        fn sample(&self, theta: f64, _alpha: Option<f64>, rng: &mut dyn RngCore) -> f64 {
            theta + 2.0 * (rng.next_u32() as f64 / u32::MAX as f64) - 1.0
        }
        fn fisher_shared(&self, _theta: f64, _alpha: Option<f64>) -> f64 {
            f64::INFINITY
        }
        fn fisher_private(&self, _theta: f64, _alpha: f64) -> f64 {
            0.0
        }
        fn moments(&self, theta: f64, _alpha: Option<f64>) -> (f64, f64) {
            (theta, 1.0 / 3.0)
        }
    }

    fn unit_space() -> ParameterSpace {
        ParameterSpace::new(0.0, 1.0, 101).unwrap()
    }

    fn toy_suite(family: Arc<dyn CustomFamily>, space: ParameterSpace) -> ExperimentSuite {
        ExperimentSuite::new(vec![ExperimentModel::custom(family, space, None)]).unwrap()
    }

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

    #[test]
    fn bounded_exp_accuracy() {
        for i in 0..=40_000 {
            let d = -(i as f64) * 1e-3;
            let (fast, exact) = (exp_bounded(d), d.exp());
            assert!((fast / exact - 1.0).abs() < 4e-16, "{d}: {fast} vs {exact}");
        }
        assert_eq!(exp_bounded(0.0), 1.0);
    }

    #[test]
    fn quantize_rounds_half_away() {
        assert_eq!(quantize(0.5 / SCALE), Some(1));
        assert_eq!(quantize(-0.5 / SCALE), Some(-1));
        assert_eq!(quantize(0.49 / SCALE), Some(0));
        assert_eq!(quantize(1e10), None);
    }

    #[test]
    fn init_matches_prior() {
        let suite = network();
        let belief = BeliefState::new(&suite, &Priors::uniform(&suite)).unwrap();
        let s = belief.posterior_summary().unwrap();
        assert!((s.theta_mean - 0.5).abs() < 1e-12);
        assert!((s.cost_shared - 0.080033).abs() < 1e-5);
        let density = belief.marginal_shared().unwrap();
        assert!((suite.shared_space().integrate(&density) - 1.0).abs() < 1e-9);
        for d in &density {
            assert!((d - 1.0 / 0.98).abs() < 1e-9);
        }
    }

    #[test]
    fn init_private_prior_cost() {
        let shared = ParameterSpace::new(10.0, 20.0, 197).unwrap();
        let suite = ExperimentSuite::new(vec![ExperimentModel::mean_variance(
            shared,
            ParameterSpace::new(2.0, 8.0, 101).unwrap(),
        )
        .unwrap()])
        .unwrap();
        let belief = BeliefState::new(&suite, &Priors::uniform(&suite)).unwrap();
        let s = belief.posterior_summary().unwrap();
        assert!((s.cost_private[0] / 3.0 - 1.0).abs() < 1e-3);
        let two = two_sensor();
        let belief = BeliefState::new(&two, &Priors::uniform(&two)).unwrap();
        let s = belief.posterior_summary().unwrap();
        assert!((s.cost_private[0] / 0.03 - 1.0).abs() < 1e-3);
        let h = belief.conditional_private(0, 1.3).unwrap();
        assert!((ParameterSpace::new(0.1, 0.7, 101).unwrap().integrate(&h) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_priors_rejected() {
        let suite = two_sensor();
        let mut priors = Priors::uniform(&suite);
        priors.alphas.pop();
        assert!(matches!(
            BeliefState::new(&suite, &priors),
            Err(BeliefError::PriorMismatch(_))
        ));
        let mut priors = Priors::uniform(&suite);
        priors.theta = Prior::uniform(ParameterSpace::new(0.0, 1.0, 197).unwrap());
        assert!(BeliefState::new(&suite, &priors).is_err());
    }

    #[test]
    fn single_observation_mode_and_ml() {
        let space = ParameterSpace::new(-5.0, 5.0, 201).unwrap();
        let suite = toy_suite(Arc::new(UnitGaussian), space);
        let mut belief = BeliefState::new(&suite, &Priors::uniform(&suite)).unwrap();
        belief.update(0, 0.5).unwrap();
        let density = belief.marginal_shared().unwrap();
        let mode = (0..density.len())
            .max_by(|&a, &b| density[a].partial_cmp(&density[b]).unwrap())
            .unwrap();
        assert_eq!(mode, space.nearest_index(0.5));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let est = belief.estimates(&mut rng).unwrap();
        assert!((est.theta_ml - 0.5).abs() < 1e-12);

        // the ML estimate clips to the space
        let mut belief = BeliefState::new(&suite, &Priors::uniform(&suite)).unwrap();
        belief.update(0, 7.3).unwrap();
        assert_eq!(belief.ml_estimates(&mut rng).unwrap().theta, 5.0);
    }

    #[test]
    fn two_updates_commute_exactly() {
        let suite = two_sensor();
        let priors = Priors::uniform(&suite);
        let mut a = BeliefState::new(&suite, &priors).unwrap();
        let mut b = a.clone();
        a.update(1, 0.3).unwrap();
        a.update(1, -1.7).unwrap();
        b.update(1, -1.7).unwrap();
        b.update(1, 0.3).unwrap();
        assert_eq!(a.tables[1].acc, b.tables[1].acc);
        assert_eq!(a.posterior_summary().unwrap(), b.posterior_summary().unwrap());
    }

    #[test]
    fn update_touches_only_its_table() {
        let suite = two_sensor();
        let mut belief = BeliefState::new(&suite, &Priors::uniform(&suite)).unwrap();
        belief.update(0, 0.4).unwrap();
        assert!(belief.tables[1].acc.iter().all(|a| *a == 0));
        assert!(belief.tables[0].acc.iter().any(|a| *a != 0));
        assert_eq!(belief.sample_counts(), &[1, 0]);
        assert_eq!(belief.t(), 1);
        assert!(matches!(
            belief.update(2, 0.0),
            Err(BeliefError::BadExperiment { .. })
        ));
    }

    #[test]
    fn no_data_conditional_is_prior() {
        let suite = two_sensor();
        let mut belief = BeliefState::new(&suite, &Priors::uniform(&suite)).unwrap();
        belief.update(0, 0.4).unwrap();
        let h = belief.conditional_private(1, 0.4).unwrap();
        for d in h {
            assert!((d - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_observation_rejected_and_state_kept() {
        let suite = toy_suite(Arc::new(Boxcar), unit_space());
        let mut belief = BeliefState::new(&suite, &Priors::uniform(&suite)).unwrap();
        belief.update(0, 0.2).unwrap();
        let before = belief.posterior_summary().unwrap();
        let err = belief.update(0, 3.5).unwrap_err();
        assert!(matches!(err, BeliefError::Degenerate { experiment: 0, .. }));
        assert_eq!(belief.t(), 1);
        assert_eq!(belief.posterior_summary().unwrap(), before);
        // partial support removal is fine
        belief.update(0, 1.5).unwrap();
        let density = belief.marginal_shared().unwrap();
        let grid = unit_space().points();
        for (d, x) in density.iter().zip(grid) {
            if x < 0.5 {
                assert_eq!(*d, 0.0);
            }
        }
    }

    #[test]
    fn sensor_one_consistency() {
        let suite = network();
        let priors = Priors::uniform(&suite);
        let truth = GroundTruth::shared_only(0.2);
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut belief = BeliefState::new(&suite, &priors).unwrap();
            for _ in 0..500 {
                let y = suite.model(0).draw_sample(truth.theta, None, &mut rng);
                belief.update(0, y).unwrap();
            }
            let s = belief.posterior_summary().unwrap();
            if (s.theta_mean - 0.2).abs() <= 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}");
    }

    #[test]
    fn private_posterior_consistency() {
        let suite = two_sensor();
        let priors = Priors::uniform(&suite);
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut belief = BeliefState::new(&suite, &priors).unwrap();
            for _ in 0..500 {
                let y = suite.model(0).draw_sample(0.25, Some(0.25), &mut rng);
                belief.update(0, y).unwrap();
            }
            let h = belief.conditional_private(0, 0.25).unwrap();
            let space = ParameterSpace::new(0.1, 0.7, 101).unwrap();
            let weighted: Vec<f64> = h.iter().zip(space.points()).map(|(d, a)| d * a).collect();
            if (space.integrate(&weighted) - 0.25).abs() <= 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}");
    }

    #[test]
    fn no_data_ml_ties_are_uniform() {
        let suite = two_sensor();
        let belief = BeliefState::new(&suite, &Priors::uniform(&suite)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 4000;
        let mut below = 0;
        for _ in 0..n {
            let ml = belief.ml_estimates(&mut rng).unwrap();
            if ml.theta_index < 98 {
                below += 1;
            }
            assert_eq!(ml.alphas.len(), 2);
        }
        let frac = below as f64 / n as f64;
        assert!((frac - 98.0 / 197.0).abs() < 0.03, "{frac}");
    }

    #[test]
    fn cost_is_posterior_variance() {
        let suite = network();
        let mut belief = BeliefState::new(&suite, &Priors::uniform(&suite)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in 0..40 {
            let i = t % 4;
            let y = suite.model(i).draw_sample(0.2, None, &mut rng);
            belief.update(i, y).unwrap();
        }
        let density = belief.marginal_shared().unwrap();
        let space = suite.shared_space();
        let grid = space.points();
        let m1 = space.integrate(&density.iter().zip(&grid).map(|(p, x)| p * x).collect::<Vec<_>>());
        let m2 = space.integrate(&density.iter().zip(&grid).map(|(p, x)| p * x * x).collect::<Vec<_>>());
        let s = belief.posterior_summary().unwrap();
        assert!((s.cost_shared - (m2 - m1 * m1)).abs() < 1e-12);
        assert!((s.theta_mean - m1).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn order_of_updates_is_irrelevant(
            obs in prop::collection::vec((0usize..2, -2.0f64..3.0), 1..25),
            seed in any::<u64>(),
        ) {
            let suite = two_sensor();
            let priors = Priors::uniform(&suite);
            let mut forward = BeliefState::new(&suite, &priors).unwrap();
            for &(i, y) in &obs {
                forward.update(i, y).unwrap();
            }
            let mut shuffled = obs.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for idx in (1..shuffled.len()).rev() {
                let j = rng.random_range(0..=idx);
                shuffled.swap(idx, j);
            }
            let mut backward = BeliefState::new(&suite, &priors).unwrap();
            for &(i, y) in &shuffled {
                backward.update(i, y).unwrap();
            }
            let ea = forward.estimates(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let eb = backward.estimates(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            prop_assert_eq!(ea, eb);
        }

        #[test]
        fn counts_track_updates(obs in prop::collection::vec((0usize..4, -1.5f64..1.5), 0..40)) {
            let suite = network();
            let mut belief = BeliefState::new(&suite, &Priors::uniform(&suite)).unwrap();
            let mut prev = vec![0usize; 4];
            for (n, &(i, y)) in obs.iter().enumerate() {
                belief.update(i, y).unwrap();
                prop_assert_eq!(belief.t(), n + 1);
                for (a, b) in belief.sample_counts().iter().zip(&prev) {
                    prop_assert!(a >= b);
                }
                prev = belief.sample_counts().to_vec();
            }
            prop_assert_eq!(belief.sample_counts().iter().sum::<usize>(), belief.t());
            let density = belief.marginal_shared().unwrap();
            prop_assert!((suite.shared_space().integrate(&density) - 1.0).abs() < 1e-9);
        }
    }
}
