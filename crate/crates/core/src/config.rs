//! JSON run configurations and the assumption checks behind `validate`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::Priors;
use crate::model::{
    make_sensor_network, ExperimentModel, ExperimentSuite, FisherVariant, GroundTruth,
    ParameterSpace, Prior,
};
use crate::quadrature::gauss_hermite;
use crate::rules::{SamplingRule, StoppingRule, Tolerances};
use crate::runner::{RuleSpec, Scenario};

pub const DEFAULT_T_MAX: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}field `{field}`: {message}", line_prefix(*.line))]
    Invalid {
        line: Option<usize>,
        field: String,
        message: String,
    },
}

fn line_prefix(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub lower: f64,
    pub upper: f64,
    pub grid_size: usize,
}

impl SpaceConfig {
    pub fn build(&self) -> Result<ParameterSpace, crate::model::ModelError> {
        ParameterSpace::new(self.lower, self.upper, self.grid_size)
    }
}

/// `y ~ N(mean, intercept + slope * theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    #[serde(default)]
    pub mean: f64,
    pub intercept: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Known mean, variance affine in `theta`.
    GaussianKnownMeanThetaVariance,
    /// Mean `theta`, variance the private parameter.
    GaussianThetaMeanAlphaVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub family: FamilyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_network_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<Vec<ProfileConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher: Option<FisherVariant>,
    pub theta_space: SpaceConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_spaces: Option<Vec<SpaceConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_prior_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_prior_weights: Option<Vec<Vec<f64>>>,
    pub truth: TruthConfig,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_private: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
    pub rules: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopping: Option<StoppingRule>,
    pub n_trials: usize,
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

/// A validated configuration, ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scenario: Scenario,
    pub rules: Vec<RuleSpec>,
    pub n_trials: usize,
    pub base_seed: u64,
    pub betas: Vec<f64>,
    pub h: Vec<f64>,
    pub output: Option<String>,
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Line of the first occurrence of `"field"` in the raw text.
fn locate(text: Option<&str>, field: &str) -> Option<usize> {
    let needle = format!("\"{field}\"");
    text?.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

/// Parses a rule entry: `sampling`, `sampling+stopping`, or the shorthand
/// `unified_cost[:c]`. Unified cost without an explicit `c` is calibrated.
pub fn parse_rule_spec(
    text: &str,
    joint: bool,
    default_stopping: &StoppingRule,
) -> Result<RuleSpec, String> {
    let text = text.trim();
    let (sampling_text, stopping_text) = if text.starts_with("unified_cost") {
        (if joint { "cost_aware" } else { "greedy_fi" }, Some(text))
    } else {
        match text.split_once('+') {
            Some((a, b)) => (a, Some(b)),
            None => (text, None),
        }
    };
    let sampling: SamplingRule = sampling_text.parse().map_err(|e| format!("{e}"))?;
    let (stopping, calibrate) = match stopping_text {
        Some("unified_cost") => (StoppingRule::UnifiedCost { c: 1.0 }, true),
        Some(s) => (s.parse::<StoppingRule>().map_err(|e| format!("{e}"))?, false),
        None => (default_stopping.clone(), false),
    };
    Ok(RuleSpec {
        label: text.to_string(),
        sampling,
        stopping,
        calibrate,
    })
}

impl RunConfig {
    pub fn is_joint(&self) -> bool {
        self.family == FamilyKind::GaussianThetaMeanAlphaVariance
    }

    fn invalid(&self, text: Option<&str>, field: &str, message: impl fmt::Display) -> ConfigError {
        ConfigError::Invalid {
            line: locate(text, field),
            field: field.to_string(),
            message: message.to_string(),
        }
    }

    pub fn build_suite(&self, text: Option<&str>) -> Result<ExperimentSuite, ConfigError> {
        let shared = self
            .theta_space
            .build()
            .map_err(|e| self.invalid(text, "theta_space", e))?;
        match self.family {
            FamilyKind::GaussianKnownMeanThetaVariance => {
                if self.alpha_spaces.is_some() {
                    return Err(self.invalid(text, "alpha_spaces", "family has no private parameters"));
                }
                match (self.sensor_network_k, &self.profiles) {
                    (Some(k), None) => make_sensor_network(
                        k,
                        self.fisher.unwrap_or(FisherVariant::Narrative),
                        shared,
                    )
                    .map_err(|e| self.invalid(text, "sensor_network_k", e)),
                    (None, Some(profiles)) => {
                        let fisher = self.fisher.unwrap_or_default();
                        let models = profiles
                            .iter()
                            .map(|p| {
                                ExperimentModel::variance_profile(p.mean, p.intercept, p.slope, fisher, shared)
                            })
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(|e| self.invalid(text, "profiles", e))?;
                        ExperimentSuite::new(models).map_err(|e| self.invalid(text, "profiles", e))
                    }
                    _ => Err(self.invalid(
                        text,
                        "family",
                        "give exactly one of `sensor_network_k` or `profiles`",
                    )),
                }
            }
            FamilyKind::GaussianThetaMeanAlphaVariance => {
                if self.sensor_network_k.is_some() || self.profiles.is_some() || self.fisher.is_some() {
                    return Err(self.invalid(
                        text,
                        "family",
                        "profile keys do not apply to this family",
                    ));
                }
                let spaces = self
                    .alpha_spaces
                    .as_ref()
                    .ok_or_else(|| self.invalid(text, "alpha_spaces", "missing for this family"))?;
                let models = spaces
                    .iter()
                    .map(|s| {
                        let private = s.build()?;
                        ExperimentModel::mean_variance(shared, private)
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| self.invalid(text, "alpha_spaces", e))?;
                ExperimentSuite::new(models).map_err(|e| self.invalid(text, "alpha_spaces", e))
            }
        }
    }

    fn build_priors(&self, suite: &ExperimentSuite, text: Option<&str>) -> Result<Priors, ConfigError> {
        let mut priors = Priors::uniform(suite);
        if let Some(w) = &self.theta_prior_weights {
            priors.theta = Prior::tabulated(*suite.shared_space(), w.clone())
                .map_err(|e| self.invalid(text, "theta_prior_weights", e))?;
        }
        if let Some(all) = &self.alpha_prior_weights {
            if all.len() != priors.alphas.len() {
                return Err(self.invalid(
                    text,
                    "alpha_prior_weights",
                    format!("expected {} weight lists", priors.alphas.len()),
                ));
            }
            for (i, w) in all.iter().enumerate() {
                let support = *priors.alphas[i].support();
                priors.alphas[i] = Prior::tabulated(support, w.clone())
                    .map_err(|e| self.invalid(text, "alpha_prior_weights", e))?;
            }
        }
        Ok(priors)
    }

    /// Validates every field and assembles the experiment. `text` is the raw
    /// source, used only to attach line numbers to errors.
    pub fn build(&self, text: Option<&str>) -> Result<Experiment, ConfigError> {
        let suite = self.build_suite(text)?;
        let priors = self.build_priors(&suite, text)?;
        let truth = GroundTruth {
            theta: self.truth.theta,
            alphas: self.truth.alphas.clone(),
        };
        truth
            .validate(&suite)
            .map_err(|e| self.invalid(text, "truth", e))?;
        let tol = Tolerances::new(
            self.beta,
            self.beta_private.clone().unwrap_or_default(),
            self.t_max.unwrap_or(DEFAULT_T_MAX),
        )
        .map_err(|e| self.invalid(text, "beta", e))?;
        tol.check_for(&suite)
            .map_err(|e| self.invalid(text, "beta_private", e))?;
        let scenario = Scenario::new(suite, priors, truth, tol)
            .map_err(|e| self.invalid(text, "truth", e))?;

        let default_stopping = match &self.stopping {
            Some(s) => {
                s.check().map_err(|e| self.invalid(text, "stopping", e))?;
                s.clone()
            }
            None if self.is_joint() => StoppingRule::JointThreshold,
            None => StoppingRule::SharedThreshold,
        };
        if self.rules.is_empty() {
            return Err(self.invalid(text, "rules", "at least one rule is required"));
        }
        let rules = self
            .rules
            .iter()
            .map(|r| {
                let spec = parse_rule_spec(r, self.is_joint(), &default_stopping)?;
                spec.sampling
                    .check_for(scenario.suite.len())
                    .map_err(|e| e.to_string())?;
                Ok(spec)
            })
            .collect::<Result<Vec<_>, String>>()
            .map_err(|e| self.invalid(text, "rules", e))?;
        if self.n_trials == 0 {
            return Err(self.invalid(text, "n_trials", "must be at least 1"));
        }
        let betas = self.betas.clone().unwrap_or_else(|| vec![self.beta]);
        if betas.is_empty() || betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(self.invalid(text, "betas", "must be a non-empty list of positive values"));
        }
        let h = self.h.clone().unwrap_or_else(|| vec![0.0]);
        if h.iter().any(|h| !(0.0..1.0).contains(h)) {
            return Err(self.invalid(text, "h", "values must lie in [0, 1)"));
        }
        Ok(Experiment {
            scenario,
            rules,
            n_trials: self.n_trials,
            base_seed: self.base_seed,
            betas,
            h,
            output: self.output.clone(),
        })
    }
}

/// Parses and builds in one step.
pub fn load_experiment(text: &str) -> Result<(RunConfig, Experiment), ConfigError> {
    let cfg = parse_config(text)?;
    let exp = cfg.build(Some(text))?;
    Ok((cfg, exp))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

impl AssumptionCheck {
    fn new(id: &'static str, status: CheckStatus, detail: impl Into<String>) -> Self {
        Self {
            id,
            status,
            detail: detail.into(),
        }
    }
}

fn skipped_after(ids: &[&'static str], reason: &str) -> Vec<AssumptionCheck> {
    ids.iter()
        .map(|id| AssumptionCheck::new(id, CheckStatus::Skipped, reason))
        .collect()
}

/// Parameter grid of each experiment: `(theta, alpha)` pairs.
fn parameter_grid(suite: &ExperimentSuite, i: usize) -> Vec<(f64, Option<f64>)> {
    let thetas = suite.shared_space().points();
    match suite.model(i).private_space() {
        Some(space) => {
            let alphas = space.points();
            thetas
                .iter()
                .flat_map(|t| alphas.iter().map(move |a| (*t, Some(*a))))
                .collect()
        }
        None => thetas.into_iter().map(|t| (t, None)).collect(),
    }
}

/// Numerical checks of the standing assumptions on compactness (A1),
/// integrable log-likelihoods (A2), smoothness (A3), common support (A4),
/// Fisher information (A5) and identifiability (A6). A3 and A6 are settled
/// analytically for the built-in Gaussian families.
pub fn check_assumptions(cfg: &RunConfig) -> Vec<AssumptionCheck> {
    let mut checks = Vec::new();
    let mut spaces = vec![("theta_space".to_string(), cfg.theta_space)];
    if let Some(alpha) = &cfg.alpha_spaces {
        spaces.extend(alpha.iter().enumerate().map(|(i, s)| (format!("alpha_spaces[{}]", i + 1), *s)));
    }
    let bad: Vec<String> = spaces
        .iter()
        .filter_map(|(name, s)| s.build().err().map(|e| format!("{name}: {e}")))
        .collect();
    if bad.is_empty() {
        checks.push(AssumptionCheck::new("A1", CheckStatus::Pass, "all parameter spaces are non-empty compact intervals"));
    } else {
        checks.push(AssumptionCheck::new("A1", CheckStatus::Fail, bad.join("; ")));
        checks.extend(skipped_after(&["A2", "A3", "A4", "A5", "A6"], "requires A1"));
        return checks;
    }

    // variance profiles must stay positive on the whole grid
    let thetas = cfg.theta_space.build().expect("checked").points();
    let profiles: Option<Vec<ProfileConfig>> = match (cfg.family, cfg.sensor_network_k, &cfg.profiles) {
        (FamilyKind::GaussianKnownMeanThetaVariance, None, Some(p)) => Some(p.clone()),
        _ => None,
    };
    if let Some(profiles) = &profiles {
        for (i, p) in profiles.iter().enumerate() {
            if let Some(t) = thetas.iter().find(|t| !(p.intercept + p.slope * **t > 0.0)) {
                checks.push(AssumptionCheck::new(
                    "A2",
                    CheckStatus::Skipped,
                    "requires a valid variance profile",
                ));
                checks.push(AssumptionCheck::new("A3", CheckStatus::Skipped, "requires a valid variance profile"));
                checks.push(AssumptionCheck::new("A4", CheckStatus::Skipped, "requires a valid variance profile"));
                checks.push(AssumptionCheck::new(
                    "A5",
                    CheckStatus::Fail,
                    format!(
                        "experiment {}: variance {} + {}*theta is not positive at theta={t}, so its FI is undefined",
                        i + 1,
                        p.intercept,
                        p.slope
                    ),
                ));
                checks.push(AssumptionCheck::new("A6", CheckStatus::Skipped, "requires a valid variance profile"));
                return checks;
            }
        }
    }
    let suite = match cfg.build_suite(None) {
        Ok(s) => s,
        Err(e) => {
            checks.extend(skipped_after(&["A2", "A3", "A4", "A5", "A6"], &format!("model not buildable: {e}")));
            return checks;
        }
    };

    let (nodes, weights) = gauss_hermite(16);
    let sqrt_pi = std::f64::consts::PI.sqrt();

    // A2: E|log f| under the model's own parameters, by Gauss-Hermite
    let mut a2_fail = None;
    'a2: for i in 0..suite.len() {
        let model = suite.model(i);
        for (theta, alpha) in parameter_grid(&suite, i) {
            let (mean, var) = model.moments(theta, alpha);
            let mut e = 0.0;
            for (x, w) in nodes.iter().zip(&weights) {
                let y = mean + (2.0 * var).sqrt() * x;
                match model.log_pdf(y, theta, alpha) {
                    Ok(v) => e += w / sqrt_pi * v.abs(),
                    Err(err) => {
                        a2_fail = Some(format!("experiment {}: {err}", i + 1));
                        break 'a2;
                    }
                }
            }
            if !e.is_finite() {
                a2_fail = Some(format!(
                    "experiment {}: E|log f| is not finite at theta={theta}, alpha={alpha:?}",
                    i + 1
                ));
                break 'a2;
            }
        }
    }
    checks.push(match a2_fail {
        None => AssumptionCheck::new("A2", CheckStatus::Pass, "E|log f| finite at every grid parameter"),
        Some(d) => AssumptionCheck::new("A2", CheckStatus::Fail, d),
    });

    checks.push(AssumptionCheck::new(
        "A3",
        CheckStatus::Pass,
        "analytic: Gaussian log-densities with positive variance are smooth in both parameters",
    ));

    // A4: probe observations from a few parameter points must have finite
    // density under every grid parameter
    let mut a4_fail = None;
    'a4: for i in 0..suite.len() {
        let model = suite.model(i);
        let grid = parameter_grid(&suite, i);
        let probes_from = [0, grid.len() / 2, grid.len() - 1];
        let mut probes = Vec::new();
        for &idx in &probes_from {
            let (theta, alpha) = grid[idx];
            let (mean, var) = model.moments(theta, alpha);
            probes.extend(nodes.iter().map(|x| mean + (2.0 * var).sqrt() * x));
        }
        for y in probes {
            for &(theta, alpha) in &grid {
                let v = model.log_pdf(y, theta, alpha);
                if !matches!(v, Ok(v) if v.is_finite()) {
                    a4_fail = Some(format!(
                        "experiment {}: y={y} has zero density at theta={theta}, alpha={alpha:?}",
                        i + 1
                    ));
                    break 'a4;
                }
            }
        }
    }
    checks.push(match a4_fail {
        None => AssumptionCheck::new("A4", CheckStatus::Pass, "every probe observation has positive density on the whole grid"),
        Some(d) => AssumptionCheck::new("A4", CheckStatus::Fail, d),
    });

    // A5: FI finite, non-negative, and some experiment informative about theta
    let mut a5_fail = None;
    'a5: for &theta in &thetas {
        let mut best = 0.0f64;
        for i in 0..suite.len() {
            let model = suite.model(i);
            let alphas = model.private_space().map(|s| s.points());
            let alpha_list: Vec<Option<f64>> = match &alphas {
                Some(a) => a.iter().map(|a| Some(*a)).collect(),
                None => vec![None],
            };
            for alpha in alpha_list {
                let shared = model.fisher_shared(theta, alpha);
                if !(shared.is_finite() && shared >= 0.0) {
                    a5_fail = Some(format!("experiment {}: shared FI {shared} at theta={theta}", i + 1));
                    break 'a5;
                }
                best = best.max(shared);
                if let Some(a) = alpha {
                    match model.fisher_private(theta, a) {
                        Ok(p) if p.is_finite() && p > 0.0 => {}
                        other => {
                            a5_fail = Some(format!(
                                "experiment {}: private FI {other:?} at theta={theta}, alpha={a}",
                                i + 1
                            ));
                            break 'a5;
                        }
                    }
                }
            }
        }
        if !(best > 0.0) {
            a5_fail = Some(format!("no experiment carries FI about theta at {theta}"));
            break;
        }
    }
    checks.push(match a5_fail {
        None => AssumptionCheck::new("A5", CheckStatus::Pass, "FI finite and positive on the grid; continuous (analytic)"),
        Some(d) => AssumptionCheck::new("A5", CheckStatus::Fail, d),
    });

    // A6: a Gaussian family identifies theta unless its variance ignores it
    let flat: Vec<usize> = match &profiles {
        Some(p) => p.iter().enumerate().filter(|(_, p)| p.slope == 0.0).map(|(i, _)| i + 1).collect(),
        None => Vec::new(),
    };
    checks.push(if flat.is_empty() {
        AssumptionCheck::new("A6", CheckStatus::Pass, "analytic: distinct parameters give distinct Gaussian laws")
    } else {
        AssumptionCheck::new(
            "A6",
            CheckStatus::Fail,
            format!("experiments {flat:?} have a variance that does not depend on theta"),
        )
    });
    checks
}
