//! Executability estimation and prediction.
//!
//! Trial outcomes for a (problem, strategy) pair are Bernoulli samples; the
//! Beta–Binomial posterior mean `(α + Σy)/(α + β + T)` is the executability
//! estimate. Thresholds split scored pairs into positive/negative/ambiguous
//! supervision. A 7-feature logistic predictor generalizes to unscored
//! pairs, fit by full-batch descent with a backtracking line search on the
//! ℓ2-regularized negative log-likelihood, then calibrated by temperature
//! scaling on held-out validation data. Ranking takes the calibrated scores
//! descending with ties broken by ascending id.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Source;
use crate::embedding;
use crate::num;

/// Number of predictor features (bias included).
pub const FEATURE_DIM: usize = 7;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExecError {
    #[error("beta prior parameters must be strictly positive")]
    InvalidPrior,
    #[error("trial outcome {0} is not 0 or 1")]
    InvalidOutcome(u8),
    #[error("thresholds must satisfy 0 <= delta_neg < delta <= 1, got ({delta}, {delta_neg})")]
    InvalidThresholds { delta: f64, delta_neg: f64 },
    #[error("feature construction failed: {0}")]
    InvalidFeature(&'static str),
    #[error("fit requires at least one sample of each class")]
    SingleClassFit,
    #[error("calibration requires both classes in the validation set")]
    SingleClassValidation,
    #[error("fit diverged (separable data with no regularization)")]
    Divergence,
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error("calibration temperature must be positive")]
    InvalidTemperature,
}

/// Beta prior over a strategy's success probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ExecError> {
        if !(alpha > 0.0) || !(beta > 0.0) {
            return Err(ExecError::InvalidPrior);
        }
        Ok(BetaPrior { alpha, beta })
    }

    /// The uniform Beta(1, 1) prior.
    pub fn uniform() -> Self {
        BetaPrior { alpha: 1.0, beta: 1.0 }
    }
}

impl Default for BetaPrior {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Posterior mean executability for one (problem, strategy) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutabilityScore {
    pub problem_id: String,
    pub strategy_id: String,
    pub posterior_mean: f64,
    pub trials_used: usize,
}

/// Posterior mean `(α + Σy)/(α + β + T)` of the Beta–Binomial model. An
/// empty outcome sequence returns the prior mean.
pub fn posterior_mean(outcomes: &[u8], prior: &BetaPrior) -> Result<f64, ExecError> {
    let mut successes = 0u64;
    for &y in outcomes {
        match y {
            0 => {}
            1 => successes += 1,
            other => return Err(ExecError::InvalidOutcome(other)),
        }
    }
    Ok((prior.alpha + successes as f64) / (prior.alpha + prior.beta + outcomes.len() as f64))
}

/// Supervision label from thresholding a posterior mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
    Ambiguous,
}

/// Threshold a score: ≥ δ positive, ≤ δ⁻ negative, ambiguous otherwise
/// (ambiguous pairs sit out of contrastive training).
pub fn label(score: f64, delta: f64, delta_neg: f64) -> Result<Label, ExecError> {
    if !(0.0 <= delta_neg && delta_neg < delta && delta <= 1.0) {
        return Err(ExecError::InvalidThresholds { delta, delta_neg });
    }
    Ok(if score >= delta {
        Label::Positive
    } else if score <= delta_neg {
        Label::Negative
    } else {
        Label::Ambiguous
    })
}

/// The predictor's feature vector φ(x, s): semantic alignment (sentence
/// embedding cosine), structural proximity (graph embedding cosine), three
/// route indicators, a source indicator, and a constant bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub semantic_alignment: f64,
    pub structural_proximity: f64,
    pub route_flags: [f64; 3],
    pub source_flag: f64,
}

impl FeatureVector {
    /// Dense layout: [semantic, structural, A, B, C, source, bias].
    pub fn as_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.semantic_alignment,
            self.structural_proximity,
            self.route_flags[0],
            self.route_flags[1],
            self.route_flags[2],
            self.source_flag,
            1.0,
        ]
    }
}

/// Assemble φ(x, s) from the two embedding spaces and retrieval provenance.
///
/// `x_sentence`/`s_sentence` are 384-dim text embeddings; `h_x`/`h_s` are
/// 128-dim graph embeddings (for an unseen problem, `h_x` is the transferred
/// representation from retrieval). Route flags are multi-hot over (A, B, C).
pub fn build_features(
    x_sentence: &[f64],
    s_sentence: &[f64],
    h_x: &[f64],
    h_s: &[f64],
    route_flags: [bool; 3],
    source: Source,
) -> Result<FeatureVector, ExecError> {
    let semantic = embedding::cosine(x_sentence, s_sentence)
        .map_err(|_| ExecError::InvalidFeature("semantic alignment cosine"))?;
    let structural = embedding::cosine(h_x, h_s)
        .map_err(|_| ExecError::InvalidFeature("structural proximity cosine"))?;
    Ok(FeatureVector {
        semantic_alignment: semantic.clamp(-1.0, 1.0),
        structural_proximity: structural.clamp(-1.0, 1.0),
        route_flags: route_flags.map(|f| if f { 1.0 } else { 0.0 }),
        source_flag: if source == Source::Human { 1.0 } else { 0.0 },
    })
}

/// Fitted predictor weights plus the post-hoc calibration temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorParams {
    pub theta: [f64; FEATURE_DIM],
    pub l2_lambda: f64,
    pub calibration_temperature: f64,
}

impl Default for PredictorParams {
    fn default() -> Self {
        PredictorParams {
            theta: [0.0; FEATURE_DIM],
            l2_lambda: 1e-4,
            calibration_temperature: 1.0,
        }
    }
}

impl PredictorParams {
    pub fn validate(&self) -> Result<(), ExecError> {
        if !(self.calibration_temperature > 0.0) {
            return Err(ExecError::InvalidTemperature);
        }
        Ok(())
    }

    fn logit(&self, phi: &FeatureVector) -> f64 {
        let x = phi.as_array();
        self.theta.iter().zip(x.iter()).map(|(t, v)| t * v).sum()
    }
}

/// Calibrated executability prediction σ(θᵀφ / τ_cal) ∈ (0, 1).
pub fn predict(params: &PredictorParams, phi: &FeatureVector) -> f64 {
    num::sigmoid(params.logit(phi) / params.calibration_temperature)
}

/// Numerically stable ln(1 + eˣ).
fn softplus(x: f64) -> f64 {
    x.max(0.0) + num::ln_1p(num::exp(-num::abs(x)))
}

/// Σ NLL + λ‖θ‖² (bias unpenalized) and its gradient at `theta`.
fn objective_and_grad(
    theta: &[f64; FEATURE_DIM],
    samples: &[([f64; FEATURE_DIM], u8)],
    l2_lambda: f64,
) -> (f64, [f64; FEATURE_DIM]) {
    let mut obj = 0.0;
    let mut grad = [0.0; FEATURE_DIM];
    for (x, y) in samples {
        let z: f64 = theta.iter().zip(x.iter()).map(|(t, v)| t * v).sum();
        obj += if *y == 1 { softplus(-z) } else { softplus(z) };
        let residual = num::sigmoid(z) - f64::from(*y);
        for d in 0..FEATURE_DIM {
            grad[d] += residual * x[d];
        }
    }
    // Ridge on everything but the trailing bias weight.
    for d in 0..FEATURE_DIM - 1 {
        obj += l2_lambda * theta[d] * theta[d];
        grad[d] += 2.0 * l2_lambda * theta[d];
    }
    (obj, grad)
}

/// Stopping/step configuration for `fit`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub lr: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 10_000,
            tol: 1e-6,
            lr: 1.0,
        }
    }
}

/// Result of a predictor fit: weights plus the accepted-step objective
/// trace (monotone non-increasing by construction of the line search).
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: [f64; FEATURE_DIM],
    pub iterations: usize,
    pub objective_curve: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_STEP: f64 = 1e12;
const DIVERGENCE_NLL: f64 = 1e-10;
const DIVERGENCE_NORM: f64 = 1e6;

/// Minimize Σ NLL + λ‖θ‖² by deterministic full-batch gradient descent with
/// a backtracking (Armijo) line search, the trial step doubling after each
/// accepted iteration. Stops when the gradient ∞-norm falls below `tol` or
/// at `max_iters`.
///
/// With λ = 0 and separable data the minimizer does not exist; the descent
/// drives the NLL to numerical zero along an ever-growing θ, which is
/// detected and reported as divergence.
pub fn fit(
    samples: &[(FeatureVector, u8)],
    l2_lambda: f64,
    config: &FitConfig,
) -> Result<FitResult, ExecError> {
    if samples.is_empty() {
        return Err(ExecError::SingleClassFit);
    }
    if !(l2_lambda >= 0.0) {
        return Err(ExecError::InvalidConfig("l2_lambda must be non-negative"));
    }
    if !(config.lr > 0.0) || !(config.tol > 0.0) {
        return Err(ExecError::InvalidConfig("lr and tol must be positive"));
    }
    for (_, y) in samples {
        if *y > 1 {
            return Err(ExecError::InvalidOutcome(*y));
        }
    }

    let dense: Vec<([f64; FEATURE_DIM], u8)> =
        samples.iter().map(|(phi, y)| (phi.as_array(), *y)).collect();

    let mut theta = [0.0; FEATURE_DIM];
    let (mut obj, mut grad) = objective_and_grad(&theta, &dense, l2_lambda);
    let mut curve = alloc::vec![obj];
    let mut step = config.lr;

    for iteration in 0..config.max_iters {
        let grad_inf = grad.iter().fold(0.0f64, |acc, g| acc.max(num::abs(*g)));
        if grad_inf < config.tol {
            return Ok(FitResult {
                theta,
                iterations: iteration,
                objective_curve: curve,
            });
        }

        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
        let mut trial = (step * 2.0).min(MAX_STEP);
        let (next_theta, next_obj) = loop {
            let mut cand = theta;
            for d in 0..FEATURE_DIM {
                cand[d] -= trial * grad[d];
            }
            let (cand_obj, _) = objective_and_grad(&cand, &dense, l2_lambda);
            if cand_obj <= obj - ARMIJO_C1 * trial * grad_sq {
                break (cand, cand_obj);
            }
            trial *= 0.5;
            if trial < 1e-20 {
                // The objective cannot be decreased along the gradient at
                // double precision; treat the current point as converged.
                return Ok(FitResult {
                    theta,
                    iterations: iteration,
                    objective_curve: curve,
                });
            }
        };

        theta = next_theta;
        obj = next_obj;
        step = trial;
        curve.push(obj);

        let norm_inf = theta.iter().fold(0.0f64, |acc, t| acc.max(num::abs(*t)));
        if obj < DIVERGENCE_NLL || norm_inf > DIVERGENCE_NORM {
            return Err(ExecError::Divergence);
        }
        let (_, g) = objective_and_grad(&theta, &dense, l2_lambda);
        grad = g;
    }

    Ok(FitResult {
        theta,
        iterations: config.max_iters,
        objective_curve: curve,
    })
}

/// Validation NLL of σ(z/τ) over precomputed logits.
fn calibration_nll(logits: &[(f64, u8)], temperature: f64) -> f64 {
    logits
        .iter()
        .map(|(z, y)| {
            let zt = z / temperature;
            if *y == 1 {
                softplus(-zt)
            } else {
                softplus(zt)
            }
        })
        .sum()
}

const CAL_LO: f64 = 1e-2;
const CAL_HI: f64 = 1e2;
const CAL_WIDTH: f64 = 1e-4;

/// Temperature scaling on a held-out validation set.
///
/// Golden-section search minimizes the validation NLL of σ(z/τ_cal) over
/// τ_cal ∈ [1e-2, 1e2] to interval width 1e-4. The returned temperature
/// never validates worse than τ_cal = 1 (the search result is discarded if
/// it would). Updates and returns the calibration temperature; a strictly
/// increasing transform, so the ranking of predictions is unchanged.
pub fn calibrate(
    params: &mut PredictorParams,
    validation: &[(FeatureVector, u8)],
) -> Result<f64, ExecError> {
    let positives = validation.iter().filter(|(_, y)| *y == 1).count();
    if positives == 0 || positives == validation.len() {
        return Err(ExecError::SingleClassValidation);
    }
    let logits: Vec<(f64, u8)> = validation
        .iter()
        .map(|(phi, y)| (params.logit(phi), *y))
        .collect();

    let invphi = (num::sqrt(5.0) - 1.0) / 2.0;
    let mut a = CAL_LO;
    let mut b = CAL_HI;
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = calibration_nll(&logits, c);
    let mut fd = calibration_nll(&logits, d);
    while b - a > CAL_WIDTH {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = calibration_nll(&logits, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = calibration_nll(&logits, d);
        }
    }
    let mut tau = (a + b) / 2.0;
    if calibration_nll(&logits, tau) > calibration_nll(&logits, 1.0) {
        tau = 1.0;
    }
    params.calibration_temperature = tau;
    Ok(tau)
}

/// Rank candidates by calibrated score, descending, ties by ascending
/// strategy id, truncated to `max_n`.
pub fn rank_scored(
    items: impl IntoIterator<Item = (String, FeatureVector)>,
    params: &PredictorParams,
    max_n: usize,
) -> Result<Vec<(String, f64)>, ExecError> {
    params.validate()?;
    let mut scored: Vec<(String, f64)> = items
        .into_iter()
        .map(|(id, phi)| {
            let score = predict(params, &phi);
            (id, score)
        })
        .collect();
    if scored.is_empty() {
        return Err(ExecError::EmptyCandidates);
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then_with(|| a.0.cmp(&b.0)));
    scored.truncate(max_n);
    Ok(scored)
}
