//! Sampling rules (which experiment next) and stopping rules (when to halt).

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, BeliefState, MlEstimates, PosteriorSummary};
use crate::model::{ExperimentSuite, ModelError};
use crate::optimizer::{self, OptimizerError, SimplexPoint};
use crate::quadrature::gauss_hermite;

/// Node count of the predictive quadrature used by the unified-cost rule.
pub const PREDICTIVE_NODES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("invalid tolerances: {0}")]
    Tolerance(String),
    #[error("invalid rule: {0}")]
    Invalid(String),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Cost ceilings for `theta` and each private parameter, plus a sample budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub beta: f64,
    #[serde(default)]
    pub beta_private: Vec<f64>,
    pub t_max: usize,
}

impl Tolerances {
    pub fn new(beta: f64, beta_private: Vec<f64>, t_max: usize) -> Result<Self, RuleError> {
        let tol = Self {
            beta,
            beta_private,
            t_max,
        };
        tol.check()?;
        Ok(tol)
    }

    pub fn shared_only(beta: f64, t_max: usize) -> Result<Self, RuleError> {
        Self::new(beta, Vec::new(), t_max)
    }

    pub fn check(&self) -> Result<(), RuleError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(RuleError::Tolerance(format!("beta must be positive, got {}", self.beta)));
        }
        if let Some(b) = self.beta_private.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(RuleError::Tolerance(format!(
                "private tolerances must be positive, got {b}"
            )));
        }
        if self.t_max == 0 {
            return Err(RuleError::Tolerance("t_max must be at least 1".into()));
        }
        Ok(())
    }

    /// Checks that there is one private tolerance per experiment exactly when
    /// the suite has private parameters.
    pub fn check_for(&self, suite: &ExperimentSuite) -> Result<(), RuleError> {
        self.check()?;
        let expected = if suite.has_private() { suite.len() } else { 0 };
        if self.beta_private.len() != expected {
            return Err(RuleError::Tolerance(format!(
                "expected {expected} private tolerances, got {}",
                self.beta_private.len()
            )));
        }
        Ok(())
    }

    /// Every tolerance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            beta: self.beta * factor,
            beta_private: self.beta_private.iter().map(|b| b * factor).collect(),
            t_max: self.t_max,
        }
    }

    pub fn is_joint(&self) -> bool {
        !self.beta_private.is_empty()
    }
}

/// Which experiment to sample next. Indices are 0-based; the text form
/// (`genie:1`) is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SamplingRule {
    /// Largest shared FI at the ML estimate.
    GreedyFi,
    /// Largest shared plus private FI at the ML estimate.
    GreedyTrace,
    /// Draw from the minimizer of the cost-aware objective at the ML estimate.
    CostAware,
    UniformRandom,
    Genie(usize),
    FixedDistribution(Vec<f64>),
}

impl SamplingRule {
    pub fn check_for(&self, k: usize) -> Result<(), RuleError> {
        match self {
            SamplingRule::Genie(i) if *i >= k => Err(RuleError::Invalid(format!(
                "genie index {} outside 1..={k}",
                i + 1
            ))),
            SamplingRule::FixedDistribution(w) => {
                if w.len() != k {
                    return Err(RuleError::Invalid(format!(
                        "fixed distribution has {} weights for {k} experiments",
                        w.len()
                    )));
                }
                let sum: f64 = w.iter().sum();
                if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(RuleError::Invalid(
                        "fixed distribution must be non-negative and sum to 1".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Whether selection needs the ML estimates.
    pub fn uses_estimates(&self) -> bool {
        matches!(
            self,
            SamplingRule::GreedyFi | SamplingRule::GreedyTrace | SamplingRule::CostAware
        )
    }
}

impl fmt::Display for SamplingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingRule::GreedyFi => f.write_str("greedy_fi"),
            SamplingRule::GreedyTrace => f.write_str("greedy_trace"),
            SamplingRule::CostAware => f.write_str("cost_aware"),
            SamplingRule::UniformRandom => f.write_str("uniform_random"),
            SamplingRule::Genie(i) => write!(f, "genie:{}", i + 1),
            SamplingRule::FixedDistribution(w) => {
                let parts: Vec<String> = w.iter().map(|x| x.to_string()).collect();
                write!(f, "fixed:{}", parts.join("/"))
            }
        }
    }
}

impl FromStr for SamplingRule {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("greedy_fi", None) => Ok(SamplingRule::GreedyFi),
            ("greedy_trace", None) => Ok(SamplingRule::GreedyTrace),
            ("cost_aware", None) => Ok(SamplingRule::CostAware),
            ("uniform_random", None) => Ok(SamplingRule::UniformRandom),
            ("genie", Some(a)) => match a.parse::<usize>() {
                Ok(i) if i >= 1 => Ok(SamplingRule::Genie(i - 1)),
                _ => Err(RuleError::Invalid(format!("genie needs a 1-based index, got '{a}'"))),
            },
            ("fixed", Some(a)) => a
                .split('/')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(SamplingRule::FixedDistribution)
                .map_err(|_| RuleError::Invalid(format!("bad fixed distribution '{a}'"))),
            _ => Err(RuleError::Invalid(format!("unknown sampling rule '{s}'"))),
        }
    }
}

impl TryFrom<String> for SamplingRule {
    type Error = RuleError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SamplingRule> for String {
    fn from(rule: SamplingRule) -> Self {
        rule.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StoppingRule {
    /// Stop once the shared cost is within `beta`.
    SharedThreshold,
    /// Stop once every cost is within its tolerance.
    JointThreshold,
    /// Stop once the expected one-step cost reduction is at most `c`.
    UnifiedCost { c: f64 },
    /// Run until the budget is spent.
    Never,
}

impl StoppingRule {
    pub fn check(&self) -> Result<(), RuleError> {
        match self {
            StoppingRule::UnifiedCost { c } if !(c.is_finite() && *c > 0.0) => Err(
                RuleError::Invalid(format!("unified cost needs c > 0, got {c}")),
            ),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingRule::SharedThreshold => f.write_str("shared_threshold"),
            StoppingRule::JointThreshold => f.write_str("joint_threshold"),
            StoppingRule::UnifiedCost { c } => write!(f, "unified_cost:{c}"),
            StoppingRule::Never => f.write_str("never"),
        }
    }
}

impl FromStr for StoppingRule {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None => match s {
                "shared_threshold" => Ok(StoppingRule::SharedThreshold),
                "joint_threshold" => Ok(StoppingRule::JointThreshold),
                "never" => Ok(StoppingRule::Never),
                _ => Err(RuleError::Invalid(format!("unknown stopping rule '{s}'"))),
            },
            Some(("unified_cost", c)) => {
                let c: f64 = c
                    .parse()
                    .map_err(|_| RuleError::Invalid(format!("bad unified cost '{c}'")))?;
                let rule = StoppingRule::UnifiedCost { c };
                rule.check()?;
                Ok(rule)
            }
            Some(_) => Err(RuleError::Invalid(format!("unknown stopping rule '{s}'"))),
        }
    }
}

impl TryFrom<String> for StoppingRule {
    type Error = RuleError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<StoppingRule> for String {
    fn from(rule: StoppingRule) -> Self {
        rule.to_string()
    }
}

fn argmax_tie_break<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..values.len()).filter(|&i| values[i] == best).collect();
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

fn draw_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize, RuleError> {
    let dist = WeightedIndex::new(weights)
        .map_err(|e| RuleError::Invalid(format!("cannot sample from {weights:?}: {e}")))?;
    Ok(dist.sample(rng))
}

/// Shared and private FI of every experiment at the given estimates.
pub fn fisher_at(
    suite: &ExperimentSuite,
    ml: &MlEstimates,
) -> Result<(Vec<f64>, Vec<f64>), RuleError> {
    let mut shared = Vec::with_capacity(suite.len());
    let mut private = Vec::new();
    for (i, model) in suite.models().iter().enumerate() {
        let alpha = ml.alphas.get(i).copied();
        shared.push(model.fisher_shared(ml.theta, alpha));
        if let Some(a) = alpha {
            private.push(model.fisher_private(ml.theta, a)?);
        }
    }
    Ok((shared, private))
}

/// Sampling distribution of the cost-aware rule. A solver that hits its
/// iteration cap still yields its best iterate.
pub fn cost_aware_distribution(
    suite: &ExperimentSuite,
    ml: &MlEstimates,
    tol: &Tolerances,
) -> Result<SimplexPoint, RuleError> {
    let (shared, private) = fisher_at(suite, ml)?;
    match optimizer::minimize(&shared, &private, tol) {
        Ok(q) => Ok(q),
        Err(OptimizerError::NotConverged { best, .. }) => Ok(best),
        Err(e) => Err(e.into()),
    }
}

/// Selection given precomputed ML estimates.
pub fn select_at<R: Rng + ?Sized>(
    rule: &SamplingRule,
    suite: &ExperimentSuite,
    ml: &MlEstimates,
    tol: &Tolerances,
    rng: &mut R,
) -> Result<usize, RuleError> {
    let k = suite.len();
    match rule {
        SamplingRule::GreedyFi => {
            let (shared, _) = fisher_at(suite, ml)?;
            Ok(argmax_tie_break(&shared, rng))
        }
        SamplingRule::GreedyTrace => {
            let (shared, private) = fisher_at(suite, ml)?;
            let trace: Vec<f64> = if private.is_empty() {
                shared
            } else {
                shared.iter().zip(&private).map(|(a, b)| a + b).collect()
            };
            Ok(argmax_tie_break(&trace, rng))
        }
        SamplingRule::CostAware => {
            let q = cost_aware_distribution(suite, ml, tol)?;
            draw_categorical(q.weights(), rng)
        }
        SamplingRule::UniformRandom => Ok(rng.random_range(0..k)),
        SamplingRule::Genie(i) => {
            rule.check_for(k)?;
            Ok(*i)
        }
        SamplingRule::FixedDistribution(w) => {
            rule.check_for(k)?;
            draw_categorical(w, rng)
        }
    }
}

/// Next experiment under `rule`, using only the data already in `belief`.
pub fn select<R: Rng + ?Sized>(
    rule: &SamplingRule,
    belief: &BeliefState,
    tol: &Tolerances,
    rng: &mut R,
) -> Result<usize, RuleError> {
    if rule.uses_estimates() {
        let ml = belief.ml_estimates(rng)?;
        select_at(rule, belief.suite(), &ml, tol, rng)
    } else {
        let dummy = MlEstimates {
            theta: 0.0,
            theta_index: 0,
            alphas: Vec::new(),
        };
        select_at(rule, belief.suite(), &dummy, tol, rng)
    }
}

/// Objective tracked by the unified-cost rule: the shared cost plus every
/// private cost.
pub fn total_cost(summary: &PosteriorSummary) -> f64 {
    summary.cost_shared + summary.cost_private.iter().sum::<f64>()
}

/// Posterior-predictive expectation of the total cost after one more
/// observation from `experiment`.
///
/// The predictive density is a mixture over the joint posterior cells. It is
/// integrated by Gauss-Hermite quadrature against a Gaussian with the
/// predictive mean and variance, with importance weights `p / phi` normalized
/// to sum to one.
pub fn expected_next_cost(belief: &BeliefState, experiment: usize) -> Result<f64, RuleError> {
    let model = belief.suite().model(experiment);
    let cells = belief.joint_cells(experiment)?;
    let (mut mean, mut second) = (0.0, 0.0);
    for &(theta, alpha, w) in &cells {
        let (m, v) = model.moments(theta, alpha);
        mean += w * m;
        second += w * (v + m * m);
    }
    let var = second - mean * mean;
    if !(var.is_finite() && var > 0.0) {
        return Err(RuleError::Invalid(format!(
            "predictive variance {var} of experiment {} is unusable",
            experiment + 1
        )));
    }
    let (nodes, weights) = gauss_hermite(PREDICTIVE_NODES);
    let spread = (2.0 * var).sqrt();
    let mut total_weight = 0.0;
    let mut accumulated = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let y = mean + spread * x;
        let mut density = 0.0;
        for &(theta, alpha, cw) in &cells {
            density += cw * model.log_pdf(y, theta, alpha)?.exp();
        }
        if density == 0.0 {
            continue;
        }
        let mut next = belief.clone();
        if next.update(experiment, y).is_err() {
            continue;
        }
        let weight = w * (x * x).exp() * spread * density;
        accumulated += weight * total_cost(&next.posterior_summary()?);
        total_weight += weight;
    }
    if !(total_weight > 0.0) {
        return Err(RuleError::Invalid("predictive quadrature has no mass".into()));
    }
    Ok(accumulated / total_weight)
}

/// Whether to stop on the current belief. `next` is the experiment the
/// sampling rule would pick; the unified-cost rule evaluates its lookahead
/// there, or at the most favourable experiment when `next` is `None`.
pub fn should_stop(
    rule: &StoppingRule,
    belief: &BeliefState,
    tol: &Tolerances,
    next: Option<usize>,
) -> Result<bool, RuleError> {
    match rule {
        StoppingRule::Never => Ok(false),
        StoppingRule::SharedThreshold => Ok(belief.posterior_summary()?.cost_shared <= tol.beta),
        StoppingRule::JointThreshold => Ok(joint_satisfied(&belief.posterior_summary()?, tol)),
        StoppingRule::UnifiedCost { c } => {
            let now = total_cost(&belief.posterior_summary()?);
            let after = match next {
                Some(i) => expected_next_cost(belief, i)?,
                None => {
                    let mut best = f64::INFINITY;
                    for i in 0..belief.suite().len() {
                        best = best.min(expected_next_cost(belief, i)?);
                    }
                    best
                }
            };
            Ok(now - after <= *c)
        }
    }
}

/// All cost constraints hold for `summary`.
pub fn joint_satisfied(summary: &PosteriorSummary, tol: &Tolerances) -> bool {
    summary.cost_shared <= tol.beta
        && summary
            .cost_private
            .iter()
            .zip(&tol.beta_private)
            .all(|(c, b)| c <= b)
}
