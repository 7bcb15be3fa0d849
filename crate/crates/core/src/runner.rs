//! Single trials of the sequential procedure, Monte Carlo batches, tolerance
//! sweeps and calibration of the unified-cost baseline.
//!
//! Each trial owns two kinds of random streams derived from its seed: stream 0
//! drives the rules (randomized selection and tie-breaks), and stream `i + 1`
//! produces the observations of experiment `i`. Two rules run with the same
//! seed therefore see the same `n`-th observation from any experiment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::belief::{BeliefError, BeliefState, Estimates, Priors};
use crate::model::{ExperimentSuite, GroundTruth, ModelError};
use crate::rules::{self, RuleError, SamplingRule, StoppingRule, Tolerances};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("audit failed at step {step}: {reason}")]
    Audit { step: usize, reason: String },
}

/// Everything fixed across the trials of one experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub suite: ExperimentSuite,
    pub priors: Priors,
    pub truth: GroundTruth,
    pub tol: Tolerances,
}

impl Scenario {
    pub fn new(
        suite: ExperimentSuite,
        priors: Priors,
        truth: GroundTruth,
        tol: Tolerances,
    ) -> Result<Self, RunnerError> {
        truth.validate(&suite)?;
        tol.check_for(&suite)?;
        // priors are checked against the suite by building a belief once
        BeliefState::new(&suite, &priors)?;
        Ok(Self {
            suite,
            priors,
            truth,
            tol,
        })
    }

    pub fn with_uniform_priors(
        suite: ExperimentSuite,
        truth: GroundTruth,
        tol: Tolerances,
    ) -> Result<Self, RunnerError> {
        let priors = Priors::uniform(&suite);
        Self::new(suite, priors, truth, tol)
    }

    pub fn with_tolerances(&self, tol: Tolerances) -> Self {
        Self {
            tol,
            ..self.clone()
        }
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        let mut tol = self.tol.clone();
        tol.beta = beta;
        self.with_tolerances(tol)
    }
}

/// A named (sampling, stopping) pair. With `calibrate`, a unified-cost
/// stopping rule has its `c` tuned to each swept tolerance before running.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSpec {
    pub label: String,
    pub sampling: SamplingRule,
    pub stopping: StoppingRule,
    pub calibrate: bool,
}

impl RuleSpec {
    pub fn new(sampling: SamplingRule, stopping: StoppingRule) -> Self {
        Self {
            label: sampling.to_string(),
            sampling,
            stopping,
            calibrate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStep {
    /// Number of samples after this step.
    pub t: usize,
    pub experiment: usize,
    pub y: f64,
    pub cost_shared: f64,
    pub cost_private: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    /// False when the budget ran out first.
    pub stopped: bool,
    pub t: usize,
    pub estimates: Estimates,
    pub selection_counts: Vec<usize>,
    pub trajectory: Option<Vec<TrajectoryStep>>,
}

impl TrialResult {
    /// Empirical selection frequencies; all zero when nothing was sampled.
    pub fn selection_freq(&self) -> Vec<f64> {
        let total = self.t.max(1) as f64;
        self.selection_counts
            .iter()
            .map(|c| *c as f64 / total)
            .collect()
    }
}

fn rule_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

fn observation_rngs(seed: u64, k: usize) -> Vec<ChaCha8Rng> {
    (0..k)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            rng
        })
        .collect()
}

fn needs_lookahead(stopping: &StoppingRule) -> bool {
    matches!(stopping, StoppingRule::UnifiedCost { .. })
}

/// Where the next observation comes from.
trait Source {
    fn observe(&mut self, step: usize, experiment: usize) -> Result<f64, RunnerError>;
}

struct Nature<'a> {
    scenario: &'a Scenario,
    rngs: Vec<ChaCha8Rng>,
}

impl Source for Nature<'_> {
    fn observe(&mut self, _step: usize, experiment: usize) -> Result<f64, RunnerError> {
        let truth = &self.scenario.truth;
        Ok(self.scenario.suite.model(experiment).draw_sample(
            truth.theta,
            truth.alpha(experiment),
            &mut self.rngs[experiment],
        ))
    }
}

/// Replays a logged trajectory, insisting that every selection matches.
struct Replay<'a> {
    steps: &'a [TrajectoryStep],
}

impl Source for Replay<'_> {
    fn observe(&mut self, step: usize, experiment: usize) -> Result<f64, RunnerError> {
        let logged = self.steps.get(step).ok_or_else(|| RunnerError::Audit {
            step,
            reason: "replay continues past the logged trajectory".into(),
        })?;
        if logged.experiment != experiment {
            return Err(RunnerError::Audit {
                step,
                reason: format!(
                    "logged experiment {} but the rule re-derives {}",
                    logged.experiment + 1,
                    experiment + 1
                ),
            });
        }
        Ok(logged.y)
    }
}

fn drive(
    scenario: &Scenario,
    sampling: &SamplingRule,
    stopping: &StoppingRule,
    seed: u64,
    log_trajectory: bool,
    source: &mut dyn Source,
) -> Result<TrialResult, RunnerError> {
    let tol = &scenario.tol;
    sampling.check_for(scenario.suite.len())?;
    stopping.check()?;
    let mut rng = rule_rng(seed);
    let mut belief = BeliefState::new(&scenario.suite, &scenario.priors)?;
    let mut trajectory = log_trajectory.then(Vec::new);
    let stopped = loop {
        let lookahead = if needs_lookahead(stopping) {
            Some(rules::select(sampling, &belief, tol, &mut rng)?)
        } else {
            None
        };
        if rules::should_stop(stopping, &belief, tol, lookahead)? {
            break true;
        }
        if belief.t() >= tol.t_max {
            break false;
        }
        let i = match lookahead {
            Some(i) => i,
            None => rules::select(sampling, &belief, tol, &mut rng)?,
        };
        let y = source.observe(belief.t(), i)?;
        belief.update(i, y)?;
        if let Some(log) = trajectory.as_mut() {
            let summary = belief.posterior_summary()?;
            log.push(TrajectoryStep {
                t: belief.t(),
                experiment: i,
                y,
                cost_shared: summary.cost_shared,
                cost_private: summary.cost_private,
            });
        }
    };
    let estimates = belief.estimates(&mut rng)?;
    Ok(TrialResult {
        seed,
        stopped,
        t: belief.t(),
        estimates,
        selection_counts: belief.sample_counts().to_vec(),
        trajectory,
    })
}

/// Runs one trial: check the stopping rule (before any sample too), respect
/// the budget, select using past data only, observe, update.
pub fn run_trial(
    scenario: &Scenario,
    sampling: &SamplingRule,
    stopping: &StoppingRule,
    seed: u64,
    log_trajectory: bool,
) -> Result<TrialResult, RunnerError> {
    let mut nature = Nature {
        scenario,
        rngs: observation_rngs(seed, scenario.suite.len()),
    };
    drive(scenario, sampling, stopping, seed, log_trajectory, &mut nature)
}

/// Re-derives every selection of a logged trial from the logged prefix alone
/// and checks that the replay reproduces the result.
pub fn audit_trajectory(
    scenario: &Scenario,
    sampling: &SamplingRule,
    stopping: &StoppingRule,
    result: &TrialResult,
) -> Result<(), RunnerError> {
    let steps = result.trajectory.as_deref().ok_or_else(|| RunnerError::Audit {
        step: 0,
        reason: "trial has no trajectory".into(),
    })?;
    let mut replay = Replay { steps };
    let replayed = drive(scenario, sampling, stopping, result.seed, true, &mut replay)?;
    if replayed != *result {
        return Err(RunnerError::Audit {
            step: replayed.t,
            reason: "replayed trial differs from the logged one".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub outcome: Result<TrialResult, RunnerError>,
}

/// Trials with seeds `base_seed + j`, run in parallel and returned in seed
/// order. Trial errors are kept, not propagated.
pub fn run_monte_carlo(
    scenario: &Scenario,
    sampling: &SamplingRule,
    stopping: &StoppingRule,
    n_trials: usize,
    base_seed: u64,
    log_trajectory: bool,
) -> Vec<TrialRecord> {
    (0..n_trials as u64)
        .into_par_iter()
        .map(|j| {
            let seed = base_seed.wrapping_add(j);
            TrialRecord {
                seed,
                outcome: run_trial(scenario, sampling, stopping, seed, log_trajectory),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub label: String,
    pub beta: f64,
    /// Mean stopping time over trials that stopped; infinite when none did.
    pub mean_t: f64,
    pub std_t: f64,
    pub stop_rate: f64,
    pub n: usize,
    pub errors: usize,
    /// Mean final costs over trials without errors.
    pub mean_cost_shared: f64,
    pub mean_cost_private: Vec<f64>,
}

pub fn summarize(label: &str, beta: f64, records: &[TrialRecord]) -> MonteCarloSummary {
    let ok: Vec<&TrialResult> = records.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let stopped: Vec<f64> = ok.iter().filter(|r| r.stopped).map(|r| r.t as f64).collect();
    let (mean_t, std_t) = match stopped.len() {
        0 => (f64::INFINITY, f64::NAN),
        1 => (stopped[0], 0.0),
        n => {
            let mean = stopped.iter().sum::<f64>() / n as f64;
            let var = stopped.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (mean, var.sqrt())
        }
    };
    let denom = ok.len().max(1) as f64;
    let k = ok.first().map_or(0, |r| r.estimates.cost_private.len());
    let mean_cost_private = (0..k)
        .map(|i| ok.iter().map(|r| r.estimates.cost_private[i]).sum::<f64>() / denom)
        .collect();
    MonteCarloSummary {
        label: label.to_string(),
        beta,
        mean_t,
        std_t,
        stop_rate: stopped.len() as f64 / records.len().max(1) as f64,
        n: records.len(),
        errors: records.len() - ok.len(),
        mean_cost_shared: ok.iter().map(|r| r.estimates.cost_shared).sum::<f64>() / denom,
        mean_cost_private,
    }
}

/// Outcome of tuning the unified-cost constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub c: f64,
    pub mean_cost_shared: f64,
    pub evaluations: usize,
    /// Whether the pilot mean cost was non-decreasing in `c` over all
    /// evaluated points.
    pub monotone: bool,
}

pub const CALIBRATION_MAX_EVALUATIONS: usize = 40;

/// Finds `c` so that the pilot-mean final shared cost under
/// `unified_cost(c)` falls in `[0.9, 1.0] * beta_target`, by log-scale
/// bisection. The upper end starts at the prior cost (which stops at once),
/// the lower end shrinks by factors of 100 until it undershoots the target.
pub fn calibrate_unified_cost(
    scenario: &Scenario,
    sampling: &SamplingRule,
    beta_target: f64,
    n_pilot: usize,
    base_seed: u64,
) -> Result<Calibration, RunnerError> {
    if !(beta_target > 0.0) || n_pilot == 0 {
        return Err(RunnerError::Calibration(
            "need a positive target and at least one pilot trial".into(),
        ));
    }
    let mut evaluated: Vec<(f64, f64)> = Vec::new();
    let mut evaluate = |c: f64| -> Result<f64, RunnerError> {
        if evaluated.len() >= CALIBRATION_MAX_EVALUATIONS {
            return Err(RunnerError::Calibration(format!(
                "no c within {CALIBRATION_MAX_EVALUATIONS} evaluations"
            )));
        }
        let records = run_monte_carlo(
            scenario,
            sampling,
            &StoppingRule::UnifiedCost { c },
            n_pilot,
            base_seed,
            false,
        );
        if let Some(err) = records.iter().find_map(|r| r.outcome.as_ref().err()) {
            return Err(RunnerError::Calibration(format!("pilot trial failed: {err}")));
        }
        let mean = summarize("pilot", beta_target, &records).mean_cost_shared;
        evaluated.push((c, mean));
        Ok(mean)
    };
    let in_window = |m: f64| m >= 0.9 * beta_target && m <= beta_target;

    let prior = BeliefState::new(&scenario.suite, &scenario.priors)?.posterior_summary()?;
    let mut hi = rules::total_cost(&prior).max(f64::MIN_POSITIVE);
    let f_hi = evaluate(hi)?;
    let mut answer = if f_hi <= beta_target { Some((hi, f_hi)) } else { None };
    let mut lo = hi;
    while answer.is_none() {
        lo *= 1e-2;
        let f_lo = evaluate(lo)?;
        if in_window(f_lo) {
            answer = Some((lo, f_lo));
        } else if f_lo < 0.9 * beta_target {
            break;
        } else {
            hi = lo;
        }
    }
    while answer.is_none() {
        let mid = (lo * hi).sqrt();
        let f_mid = evaluate(mid)?;
        if in_window(f_mid) {
            answer = Some((mid, f_mid));
        } else if f_mid > beta_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (c, mean_cost_shared) = answer.expect("loop exits with an answer");
    evaluated.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = evaluated.windows(2).all(|w| w[0].1 <= w[1].1);
    Ok(Calibration {
        c,
        mean_cost_shared,
        evaluations: evaluated.len(),
        monotone,
    })
}

/// Stopping rule to run for `spec` at the scenario's tolerance, calibrating a
/// unified-cost rule on the evaluation seeds when requested.
pub fn resolve_stopping(
    scenario: &Scenario,
    spec: &RuleSpec,
    n_trials: usize,
    base_seed: u64,
) -> Result<(StoppingRule, Option<Calibration>), RunnerError> {
    match (&spec.stopping, spec.calibrate) {
        (StoppingRule::UnifiedCost { .. }, true) => {
            let cal = calibrate_unified_cost(
                scenario,
                &spec.sampling,
                scenario.tol.beta,
                n_trials,
                base_seed,
            )?;
            Ok((StoppingRule::UnifiedCost { c: cal.c }, Some(cal)))
        }
        (s, _) => Ok((s.clone(), None)),
    }
}

/// One cell of a sweep: the summary plus the raw trials behind it.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub summary: MonteCarloSummary,
    pub records: Vec<TrialRecord>,
    pub calibration: Option<Calibration>,
}

/// Full factorial over rules and tolerances (rule-major). Every cell uses the
/// same seeds, so rules are compared on paired trials. Calibrated unified-cost
/// rules are tuned on those same seeds.
pub fn sweep_beta(
    scenario: &Scenario,
    rule_specs: &[RuleSpec],
    betas: &[f64],
    n_trials: usize,
    base_seed: u64,
) -> Result<Vec<SweepCell>, RunnerError> {
    let mut cells = Vec::with_capacity(rule_specs.len() * betas.len());
    for spec in rule_specs {
        for &beta in betas {
            let cell_scenario = scenario.with_beta(beta);
            cell_scenario.tol.check()?;
            let (stopping, calibration) =
                resolve_stopping(&cell_scenario, spec, n_trials, base_seed)?;
            let records =
                run_monte_carlo(&cell_scenario, &spec.sampling, &stopping, n_trials, base_seed, false);
            cells.push(SweepCell {
                summary: summarize(&spec.label, beta, &records),
                records,
                calibration,
            });
        }
    }
    Ok(cells)
}
