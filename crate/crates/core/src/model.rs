//! Parameter spaces, priors and the observation families of the experiments.
//!
//! Every experiment draws from a density `f_i(y | theta, alpha_i)` where
//! `theta` is shared by all experiments and `alpha_i` is private to experiment
//! `i`. Shared-only suites drop the private parameter entirely.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter space [{lower}, {upper}] with {grid_size} points is invalid: {reason}")]
    InvalidSpace {
        lower: f64,
        upper: f64,
        grid_size: usize,
        reason: &'static str,
    },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("log-density is {value} at y={y}, theta={theta}, alpha={alpha:?}")]
    Evaluation {
        y: f64,
        theta: f64,
        alpha: Option<f64>,
        value: f64,
    },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("finite-difference step {step} at {at} leaves [{lower}, {upper}]")]
    Boundary {
        at: f64,
        step: f64,
        lower: f64,
        upper: f64,
    },
    #[error("experiment has no private parameter")]
    NoPrivateParameter,
    #[error("experiment requires a private parameter")]
    MissingPrivateParameter,
}

/// Compact interval discretized by a uniform grid that includes both endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterSpace {
    lower: f64,
    upper: f64,
    grid_size: usize,
}

impl ParameterSpace {
    pub fn new(lower: f64, upper: f64, grid_size: usize) -> Result<Self, ModelError> {
        let invalid = |reason| ModelError::InvalidSpace {
            lower,
            upper,
            grid_size,
            reason,
        };
        if !lower.is_finite() || !upper.is_finite() {
            return Err(invalid("bounds must be finite"));
        }
        if lower >= upper {
            return Err(invalid("lower bound must be below upper bound"));
        }
        if grid_size < 2 {
            return Err(invalid("grid needs at least two points"));
        }
        Ok(Self {
            lower,
            upper,
            grid_size,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn spacing(&self) -> f64 {
        self.width() / (self.grid_size - 1) as f64
    }

    pub fn point(&self, index: usize) -> f64 {
        if index + 1 == self.grid_size {
            self.upper
        } else {
            self.lower + index as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.grid_size).map(|j| self.point(j)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Index of the grid point closest to `x`; values outside the space snap
    /// to the nearest endpoint.
    pub fn nearest_index(&self, x: f64) -> usize {
        let pos = ((x - self.lower) / self.spacing()).round();
        if pos.is_nan() || pos <= 0.0 {
            0
        } else {
            (pos as usize).min(self.grid_size - 1)
        }
    }

    /// Trapezoid quadrature weights on the grid.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.grid_size];
        w[0] = 0.5 * h;
        w[self.grid_size - 1] = 0.5 * h;
        w
    }

    /// Trapezoid integral of grid values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.grid_size);
        let h = self.spacing();
        let n = values.len();
        let inner: f64 = values[1..n - 1].iter().sum();
        h * (inner + 0.5 * (values[0] + values[n - 1]))
    }
}

/// A prior density tabulated on the grid of its support.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    support: ParameterSpace,
    density: Vec<f64>,
}

impl Prior {
    pub fn uniform(support: ParameterSpace) -> Self {
        let density = vec![1.0 / support.width(); support.grid_size()];
        Self { support, density }
    }

    /// Arbitrary non-negative weights on the grid, rescaled so the trapezoid
    /// integral is one.
    pub fn tabulated(support: ParameterSpace, weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.len() != support.grid_size() {
            return Err(ModelError::InvalidPrior(format!(
                "expected {} weights, got {}",
                support.grid_size(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ModelError::InvalidPrior(
                "weights must be finite and non-negative".into(),
            ));
        }
        let mass = support.integrate(&weights);
        if !(mass > 0.0) {
            return Err(ModelError::InvalidPrior("weights have zero mass".into()));
        }
        let density = weights.into_iter().map(|w| w / mass).collect();
        Ok(Self { support, density })
    }

    pub fn support(&self) -> &ParameterSpace {
        &self.support
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn log_density(&self) -> Vec<f64> {
        self.density.iter().map(|d| d.ln()).collect()
    }

    pub fn mean(&self) -> f64 {
        let points = self.support.points();
        let weighted: Vec<f64> = points
            .iter()
            .zip(&self.density)
            .map(|(x, d)| x * d)
            .collect();
        self.support.integrate(&weighted)
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let points = self.support.points();
        let weighted: Vec<f64> = points
            .iter()
            .zip(&self.density)
            .map(|(x, d)| (x - mean).powi(2) * d)
            .collect();
        self.support.integrate(&weighted)
    }
}

/// Which Fisher information the variance-profile family reports for `theta`.
///
/// `Definitional` is `-E[d^2 log f / d theta^2] = slope^2 / (2 sigma^4)`.
/// `Narrative` omits the chain-rule factor and reports `1 / (2 sigma^4)`, the
/// information about the variance itself; the sensor-network informativeness
/// regimes hold only under this form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherVariant {
    #[default]
    Definitional,
    Narrative,
}

/// User-supplied observation family.
pub trait CustomFamily: Send + Sync + fmt::Debug {
    fn log_pdf(&self, y: f64, theta: f64, alpha: Option<f64>) -> f64;
    fn sample(&self, theta: f64, alpha: Option<f64>, rng: &mut dyn RngCore) -> f64;
    fn fisher_shared(&self, theta: f64, alpha: Option<f64>) -> f64;
    /// Only called for models with a private space.
    fn fisher_private(&self, theta: f64, alpha: f64) -> f64;
    /// Mean and variance of one observation.
    fn moments(&self, theta: f64, alpha: Option<f64>) -> (f64, f64);
}

#[derive(Debug, Clone)]
pub enum Family {
    /// `y ~ N(mean, intercept + slope * theta)`.
    GaussianKnownMeanThetaVariance {
        mean: f64,
        intercept: f64,
        slope: f64,
        fisher: FisherVariant,
    },
    /// `y ~ N(theta, alpha)`.
    GaussianThetaMeanAlphaVariance,
    Custom(Arc<dyn CustomFamily>),
}

#[derive(Debug, Clone)]
pub struct ExperimentModel {
    family: Family,
    shared_space: ParameterSpace,
    private_space: Option<ParameterSpace>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn gaussian_log_pdf(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - (y - mean) * (y - mean) / (2.0 * var)
}

impl ExperimentModel {
    /// Gaussian with fixed mean and affine variance `intercept + slope * theta`,
    /// which must stay positive on the whole shared space.
    pub fn variance_profile(
        mean: f64,
        intercept: f64,
        slope: f64,
        fisher: FisherVariant,
        shared_space: ParameterSpace,
    ) -> Result<Self, ModelError> {
        if !(mean.is_finite() && intercept.is_finite() && slope.is_finite()) {
            return Err(ModelError::Config("profile coefficients must be finite".into()));
        }
        // affine, so positivity at both endpoints covers the interval
        let lo = intercept + slope * shared_space.lower();
        let hi = intercept + slope * shared_space.upper();
        if lo <= 0.0 || hi <= 0.0 {
            return Err(ModelError::Config(format!(
                "variance {intercept} + {slope}*theta is not positive on [{}, {}]",
                shared_space.lower(),
                shared_space.upper()
            )));
        }
        Ok(Self {
            family: Family::GaussianKnownMeanThetaVariance {
                mean,
                intercept,
                slope,
                fisher,
            },
            shared_space,
            private_space: None,
        })
    }

    /// Gaussian with mean `theta` and variance `alpha`.
    pub fn mean_variance(
        shared_space: ParameterSpace,
        private_space: ParameterSpace,
    ) -> Result<Self, ModelError> {
        if private_space.lower() <= 0.0 {
            return Err(ModelError::Config(format!(
                "variance space must be positive, got lower bound {}",
                private_space.lower()
            )));
        }
        Ok(Self {
            family: Family::GaussianThetaMeanAlphaVariance,
            shared_space,
            private_space: Some(private_space),
        })
    }

    pub fn custom(
        family: Arc<dyn CustomFamily>,
        shared_space: ParameterSpace,
        private_space: Option<ParameterSpace>,
    ) -> Self {
        Self {
            family: Family::Custom(family),
            shared_space,
            private_space,
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn shared_space(&self) -> &ParameterSpace {
        &self.shared_space
    }

    pub fn private_space(&self) -> Option<&ParameterSpace> {
        self.private_space.as_ref()
    }

    pub fn has_private(&self) -> bool {
        self.private_space.is_some()
    }

    /// Variance of the variance-profile family at `theta`.
    pub fn profile_variance(&self, theta: f64) -> Option<f64> {
        match self.family {
            Family::GaussianKnownMeanThetaVariance {
                intercept, slope, ..
            } => Some(intercept + slope * theta),
            _ => None,
        }
    }

    fn check_alpha(&self, alpha: Option<f64>) -> Result<(), ModelError> {
        match (self.private_space.is_some(), alpha.is_some()) {
            (true, false) => Err(ModelError::MissingPrivateParameter),
            (false, true) => Err(ModelError::NoPrivateParameter),
            _ => Ok(()),
        }
    }

    fn raw_log_pdf(&self, y: f64, theta: f64, alpha: Option<f64>) -> f64 {
        match &self.family {
            Family::GaussianKnownMeanThetaVariance {
                mean,
                intercept,
                slope,
                ..
            } => {
                let var = intercept + slope * theta;
                if var <= 0.0 {
                    return f64::NAN;
                }
                gaussian_log_pdf(y, *mean, var)
            }
            Family::GaussianThetaMeanAlphaVariance => {
                let var = alpha.unwrap_or(f64::NAN);
                if !(var > 0.0) {
                    return f64::NAN;
                }
                gaussian_log_pdf(y, theta, var)
            }
            Family::Custom(custom) => custom.log_pdf(y, theta, alpha),
        }
    }

    /// `log f(y | theta, alpha)`. Zero density (`-inf`) is allowed; NaN or
    /// `+inf` signal invalid parameters.
    pub fn log_pdf(&self, y: f64, theta: f64, alpha: Option<f64>) -> Result<f64, ModelError> {
        self.check_alpha(alpha)?;
        let value = self.raw_log_pdf(y, theta, alpha);
        if value.is_nan() || value == f64::INFINITY {
            return Err(ModelError::Evaluation {
                y,
                theta,
                alpha,
                value,
            });
        }
        Ok(value)
    }

    /// Fills `out[j * alphas.len() + k]` with `log f(y | thetas[j], alphas[k])`.
    /// Shared-only models take an empty `alphas` and fill one value per theta.
    pub fn fill_log_likelihood(
        &self,
        y: f64,
        thetas: &[f64],
        alphas: &[f64],
        out: &mut [f64],
    ) -> Result<(), ModelError> {
        let width = alphas.len().max(1);
        debug_assert_eq!(out.len(), thetas.len() * width);
        match &self.family {
            Family::GaussianKnownMeanThetaVariance {
                mean,
                intercept,
                slope,
                ..
            } => {
                let r2 = (y - mean) * (y - mean);
                for (slot, &theta) in out.iter_mut().zip(thetas) {
                    let var = intercept + slope * theta;
                    if var <= 0.0 {
                        return Err(ModelError::Evaluation {
                            y,
                            theta,
                            alpha: None,
                            value: f64::NAN,
                        });
                    }
                    *slot = -0.5 * (LN_2PI + var.ln()) - r2 / (2.0 * var);
                }
            }
            Family::GaussianThetaMeanAlphaVariance => {
                let consts: Vec<(f64, f64)> = alphas
                    .iter()
                    .map(|&a| (-0.5 * (LN_2PI + a.ln()), 0.5 / a))
                    .collect();
                for (row, &theta) in out.chunks_exact_mut(width).zip(thetas) {
                    let r2 = (y - theta) * (y - theta);
                    for (slot, &(c, inv)) in row.iter_mut().zip(&consts) {
                        *slot = c - r2 * inv;
                    }
                }
            }
            Family::Custom(_) => {
                for (j, &theta) in thetas.iter().enumerate() {
                    if alphas.is_empty() {
                        out[j] = self.log_pdf(y, theta, None)?;
                    } else {
                        for (k, &alpha) in alphas.iter().enumerate() {
                            out[j * width + k] = self.log_pdf(y, theta, Some(alpha))?;
                        }
                    }
                }
                return Ok(());
            }
        }
        if let Some(pos) = out.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
            let j = pos / width;
            return Err(ModelError::Evaluation {
                y,
                theta: thetas[j],
                alpha: alphas.get(pos % width).copied(),
                value: out[pos],
            });
        }
        Ok(())
    }

    /// One observation at the given parameters.
    pub fn draw_sample<R: Rng + ?Sized>(&self, theta: f64, alpha: Option<f64>, rng: &mut R) -> f64 {
        match &self.family {
            Family::GaussianKnownMeanThetaVariance {
                mean,
                intercept,
                slope,
                ..
            } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + (intercept + slope * theta).sqrt() * z
            }
            Family::GaussianThetaMeanAlphaVariance => {
                let z: f64 = StandardNormal.sample(rng);
                theta + alpha.unwrap_or(f64::NAN).sqrt() * z
            }
            Family::Custom(custom) => {
                let mut adapter = DynRng(rng);
                custom.sample(theta, alpha, &mut adapter)
            }
        }
    }

    /// Fisher information about `theta`, using the family's configured variant.
    pub fn fisher_shared(&self, theta: f64, alpha: Option<f64>) -> f64 {
        let variant = match self.family {
            Family::GaussianKnownMeanThetaVariance { fisher, .. } => fisher,
            _ => FisherVariant::Definitional,
        };
        self.fisher_shared_variant(theta, alpha, variant)
    }

    /// Fisher information about `theta` under an explicit variant. The
    /// variant only matters for the variance-profile family.
    pub fn fisher_shared_variant(
        &self,
        theta: f64,
        alpha: Option<f64>,
        variant: FisherVariant,
    ) -> f64 {
        match &self.family {
            Family::GaussianKnownMeanThetaVariance {
                intercept, slope, ..
            } => {
                let var = intercept + slope * theta;
                let base = 1.0 / (2.0 * var * var);
                match variant {
                    FisherVariant::Definitional => slope * slope * base,
                    FisherVariant::Narrative => base,
                }
            }
            Family::GaussianThetaMeanAlphaVariance => 1.0 / alpha.unwrap_or(f64::NAN),
            Family::Custom(custom) => custom.fisher_shared(theta, alpha),
        }
    }

    /// Fisher information about the private parameter.
    pub fn fisher_private(&self, theta: f64, alpha: f64) -> Result<f64, ModelError> {
        if self.private_space.is_none() {
            return Err(ModelError::NoPrivateParameter);
        }
        Ok(match &self.family {
            Family::GaussianThetaMeanAlphaVariance => 1.0 / (2.0 * alpha * alpha),
            Family::Custom(custom) => custom.fisher_private(theta, alpha),
            Family::GaussianKnownMeanThetaVariance { .. } => unreachable!(),
        })
    }

    /// Mean and variance of one observation.
    pub fn moments(&self, theta: f64, alpha: Option<f64>) -> (f64, f64) {
        match &self.family {
            Family::GaussianKnownMeanThetaVariance {
                mean,
                intercept,
                slope,
                ..
            } => (*mean, intercept + slope * theta),
            Family::GaussianThetaMeanAlphaVariance => (theta, alpha.unwrap_or(f64::NAN)),
            Family::Custom(custom) => custom.moments(theta, alpha),
        }
    }
}

struct DynRng<'a, R: ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Which parameter a numerical Fisher estimate differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FisherTarget {
    Shared,
    Private,
}

/// Monte Carlo estimate of `-E[d^2 log f / d p^2]` with central finite
/// differences of `log_pdf`. The finite-difference score, whose mean is zero
/// under the model, is used as a regression control variate.
pub fn numeric_fisher<R: Rng + ?Sized>(
    model: &ExperimentModel,
    theta: f64,
    alpha: Option<f64>,
    which: FisherTarget,
    step: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64, ModelError> {
    if !(step > 0.0) || draws < 2 {
        return Err(ModelError::Config("step must be positive and draws >= 2".into()));
    }
    let (at, space) = match which {
        FisherTarget::Shared => (theta, *model.shared_space()),
        FisherTarget::Private => {
            let space = *model.private_space().ok_or(ModelError::NoPrivateParameter)?;
            (alpha.ok_or(ModelError::MissingPrivateParameter)?, space)
        }
    };
    if at - step < space.lower() || at + step > space.upper() {
        return Err(ModelError::Boundary {
            at,
            step,
            lower: space.lower(),
            upper: space.upper(),
        });
    }
    let eval = |y: f64, p: f64| match which {
        FisherTarget::Shared => model.log_pdf(y, p, alpha),
        FisherTarget::Private => model.log_pdf(y, theta, Some(p)),
    };
    let mut curvature = Vec::with_capacity(draws);
    let mut score = Vec::with_capacity(draws);
    for _ in 0..draws {
        let y = model.draw_sample(theta, alpha, rng);
        let plus = eval(y, at + step)?;
        let mid = eval(y, at)?;
        let minus = eval(y, at - step)?;
        curvature.push((plus - 2.0 * mid + minus) / (step * step));
        score.push((plus - minus) / (2.0 * step));
    }
    let n = draws as f64;
    let mean_h = curvature.iter().sum::<f64>() / n;
    let mean_s = score.iter().sum::<f64>() / n;
    let (mut cov, mut var) = (0.0, 0.0);
    for (h, s) in curvature.iter().zip(&score) {
        cov += (h - mean_h) * (s - mean_s);
        var += (s - mean_s) * (s - mean_s);
    }
    let coef = if var > 0.0 { cov / var } else { 0.0 };
    Ok(-(mean_h - coef * mean_s))
}

/// The `K` experiments sharing one parameter space for `theta`.
#[derive(Debug, Clone)]
pub struct ExperimentSuite {
    models: Vec<ExperimentModel>,
    shared_space: ParameterSpace,
}

impl ExperimentSuite {
    pub fn new(models: Vec<ExperimentModel>) -> Result<Self, ModelError> {
        let first = models
            .first()
            .ok_or_else(|| ModelError::Config("suite needs at least one experiment".into()))?;
        let shared_space = *first.shared_space();
        if models.iter().any(|m| *m.shared_space() != shared_space) {
            return Err(ModelError::Config(
                "all experiments must share the same theta space".into(),
            ));
        }
        let with_private = models.iter().filter(|m| m.has_private()).count();
        if with_private != 0 && with_private != models.len() {
            return Err(ModelError::Config(
                "either every experiment has a private parameter or none does".into(),
            ));
        }
        Ok(Self {
            models,
            shared_space,
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[ExperimentModel] {
        &self.models
    }

    pub fn model(&self, i: usize) -> &ExperimentModel {
        &self.models[i]
    }

    pub fn shared_space(&self) -> &ParameterSpace {
        &self.shared_space
    }

    pub fn has_private(&self) -> bool {
        self.models[0].has_private()
    }
}

/// Variance-profile sensor network with `k` sensors, where sensor `i` is the
/// most informative (narrative Fisher) for `theta` in `((i-1)/k, i/k)`.
pub fn make_sensor_network(
    k: usize,
    fisher: FisherVariant,
    shared_space: ParameterSpace,
) -> Result<ExperimentSuite, ModelError> {
    if k < 2 || k % 2 != 0 {
        return Err(ModelError::Config(format!(
            "sensor network size must be even and at least 2, got {k}"
        )));
    }
    let kf = k as f64;
    let models = (1..=k)
        .map(|i| {
            let fi = i as f64;
            let (intercept, slope) = if i <= k / 2 {
                (
                    (fi - 1.0).powi(2) / (kf * (kf - fi + 1.0)),
                    (kf - 2.0 * fi + 2.0) / (kf - fi + 1.0),
                )
            } else {
                (fi / kf, (kf - 2.0 * fi) / fi)
            };
            ExperimentModel::variance_profile(0.0, intercept, slope, fisher, shared_space)
        })
        .collect::<Result<Vec<_>, _>>()?;
    ExperimentSuite::new(models)
}

/// Parameters chosen by nature for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta: f64,
    #[serde(default)]
    pub alphas: Vec<f64>,
}

impl GroundTruth {
    pub fn shared_only(theta: f64) -> Self {
        Self {
            theta,
            alphas: Vec::new(),
        }
    }

    pub fn alpha(&self, i: usize) -> Option<f64> {
        self.alphas.get(i).copied()
    }

    pub fn validate(&self, suite: &ExperimentSuite) -> Result<(), ModelError> {
        if !suite.shared_space().contains(self.theta) {
            return Err(ModelError::Config(format!(
                "true theta {} outside [{}, {}]",
                self.theta,
                suite.shared_space().lower(),
                suite.shared_space().upper()
            )));
        }
        if suite.has_private() {
            if self.alphas.len() != suite.len() {
                return Err(ModelError::Config(format!(
                    "expected {} true alphas, got {}",
                    suite.len(),
                    self.alphas.len()
                )));
            }
            for (i, (alpha, model)) in self.alphas.iter().zip(suite.models()).enumerate() {
                let space = model.private_space().expect("private suite");
                if !space.contains(*alpha) {
                    return Err(ModelError::Config(format!(
                        "true alpha {alpha} of experiment {} outside [{}, {}]",
                        i + 1,
                        space.lower(),
                        space.upper()
                    )));
                }
            }
        } else if !self.alphas.is_empty() {
            return Err(ModelError::Config(
                "shared-only suite takes no true alphas".into(),
            ));
        }
        Ok(())
    }
}

/// Standard normal log-density constant `-0.5 * ln(2 pi)`.
pub fn std_normal_log_pdf(x: f64) -> f64 {
    -0.5 * LN_2PI - 0.5 * x * x
}
