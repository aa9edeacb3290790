//! ATE estimators built on the Neyman orthogonal score
//!
//! ```text
//! ψ(X, D, Y; μ, α, τ) = α(D, X)(Y - μ(D, X)) + μ(1, X) - μ(0, X) - τ
//! ```
//!
//! IPW drops `μ`, plug-in drops `α`, one-step keeps both, and TMLE first
//! fluctuates `μ` so the correction term vanishes. The Neyman error
//! `L(μ, α, τ)` is the sample mean of `ψ`.
//!
//! Standard errors are the sample standard deviation of the per-unit score
//! over `√n`. For IPW and plug-in this ignores nuisance estimation and is
//! flagged as naive.

use serde::{Deserialize, Serialize};

use crate::balance::BalanceReport;
use crate::data::{Dataset, DgpSpec};
use crate::error::{Error, Result};
use crate::linalg::mean_sd;
use crate::outcome::{tmle_update, OutcomeModel};
use crate::riesz::RieszWeightPair;

/// Normal quantile used for the 95% interval.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ipw,
    Plugin,
    Onestep,
    Tmle,
    Matching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: EstimatorKind,
    pub tau_hat: f64,
    pub std_error: f64,
    pub ci95: [f64; 2],
    pub neyman_error: f64,
    /// Representer error term; needs the true nuisances, so only on simulated data.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eq1_term: Option<f64>,
    pub eq2_term: f64,
    /// True when the standard error ignores nuisance estimation.
    pub naive_std_error: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub balance: Option<BalanceReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl EstimateReport {
    fn from_scores(
        estimator: EstimatorKind,
        scores: &[f64],
        neyman_error: f64,
        eq2_term: f64,
        naive: bool,
    ) -> Self {
        let (tau_hat, sd) = mean_sd(scores);
        let std_error = sd / (scores.len() as f64).sqrt();
        Self {
            estimator,
            tau_hat,
            std_error,
            ci95: [tau_hat - Z95 * std_error, tau_hat + Z95 * std_error],
            neyman_error,
            eq1_term: None,
            eq2_term,
            naive_std_error: naive,
            balance: None,
            notes: Vec::new(),
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci95[0] <= truth && truth <= self.ci95[1]
    }
}

/// Per-unit `ψ + τ`; a missing nuisance counts as identically zero.
fn unit_scores(ds: &Dataset, model: Option<&OutcomeModel>, alpha: Option<&RieszWeightPair>) -> Vec<f64> {
    (0..ds.n())
        .map(|i| {
            let (d, x, y) = (ds.treated(i), ds.x(i), ds.y(i));
            let (mu_d, contrast) = match model {
                Some(m) => (m.predict(d, x), m.predict(true, x) - m.predict(false, x)),
                None => (0.0, 0.0),
            };
            let correction = alpha.map_or(0.0, |a| a.alpha(d, x) * (y - mu_d));
            correction + contrast
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn plugin_contrasts(ds: &Dataset, model: &OutcomeModel) -> Vec<f64> {
    (0..ds.n())
        .map(|i| model.predict(true, ds.x(i)) - model.predict(false, ds.x(i)))
        .collect()
}

/// `(1/n) Σ α(D_i, X_i) Y_i`.
pub fn estimate_ipw(ds: &Dataset, alpha: &RieszWeightPair) -> EstimateReport {
    let scores = unit_scores(ds, None, Some(alpha));
    let tau = mean(&scores);
    EstimateReport::from_scores(EstimatorKind::Ipw, &scores, mean(&scores) - tau, tau, true)
}

/// `(1/n) Σ (μ(1, X_i) - μ(0, X_i))`.
pub fn estimate_plugin(ds: &Dataset, model: &OutcomeModel) -> EstimateReport {
    let scores = unit_scores(ds, Some(model), None);
    let tau = mean(&scores);
    let eq2 = eq2_term(ds, model, tau);
    EstimateReport::from_scores(EstimatorKind::Plugin, &scores, mean(&scores) - tau, eq2, true)
}

/// Plug-in plus the representer-weighted residual correction.
pub fn estimate_onestep(
    ds: &Dataset,
    model: &OutcomeModel,
    alpha: &RieszWeightPair,
) -> EstimateReport {
    let scores = unit_scores(ds, Some(model), Some(alpha));
    let tau = mean(&scores);
    let eq2 = eq2_term(ds, model, tau);
    EstimateReport::from_scores(EstimatorKind::Onestep, &scores, neyman_error(ds, model, alpha, tau), eq2, false)
}

/// Fluctuate `model` along `alpha`, then take the plug-in on the result.
///
/// The standard error comes from the full score evaluated at the updated
/// regression, whose correction term has mean zero.
pub fn estimate_tmle(
    ds: &Dataset,
    model: &OutcomeModel,
    alpha: &RieszWeightPair,
) -> Result<EstimateReport> {
    let updated = tmle_update(model, ds, alpha)?;
    Ok(tmle_report(ds, &updated, alpha))
}

/// Report for an already-fluctuated model.
pub fn tmle_report(ds: &Dataset, updated: &OutcomeModel, alpha: &RieszWeightPair) -> EstimateReport {
    let tau = mean(&plugin_contrasts(ds, updated));
    let scores = unit_scores(ds, Some(updated), Some(alpha));
    let (_, sd) = mean_sd(&scores);
    let std_error = sd / (ds.n() as f64).sqrt();
    let mut report = EstimateReport {
        estimator: EstimatorKind::Tmle,
        tau_hat: tau,
        std_error,
        ci95: [tau - Z95 * std_error, tau + Z95 * std_error],
        neyman_error: neyman_error(ds, updated, alpha, tau),
        eq1_term: None,
        eq2_term: eq2_term(ds, updated, tau),
        naive_std_error: false,
        balance: None,
        notes: Vec::new(),
    };
    if let Some(eps) = updated.fluctuation_eps() {
        report.notes.push(format!("fluctuation epsilon {eps}"));
    }
    report
}

/// `L(μ, α, τ) = (1/n) Σ ψ(X_i, D_i, Y_i; μ, α, τ)`.
pub fn neyman_error(ds: &Dataset, model: &OutcomeModel, alpha: &RieszWeightPair, tau: f64) -> f64 {
    mean(&unit_scores(ds, Some(model), Some(alpha))) - tau
}

/// `(1/n) Σ (τ - (μ(1, X_i) - μ(0, X_i)))`.
pub fn eq2_term(ds: &Dataset, model: &OutcomeModel, tau: f64) -> f64 {
    tau - mean(&plugin_contrasts(ds, model))
}

/// Exact split of the Neyman error against the true nuisances `(μ₀, α₀)`:
///
/// ```text
/// L = oracle_noise + nuisance_cross - eq1 - eq2
/// eq1            = (1/n) Σ (α₀ - α)(Y - μ₀)
/// eq2            = (1/n) Σ (τ - (μ(1, X) - μ(0, X)))
/// oracle_noise   = (1/n) Σ α₀ (Y - μ₀)
/// nuisance_cross = (1/n) Σ α (μ₀ - μ)         (at the observed arm)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub eq1: f64,
    pub eq2: f64,
    pub oracle_noise: f64,
    pub nuisance_cross: f64,
}

impl ErrorDecomposition {
    /// Neyman error reassembled from the four terms.
    pub fn neyman_error(&self) -> f64 {
        self.oracle_noise + self.nuisance_cross - self.eq1 - self.eq2
    }
}

pub fn error_decomposition(
    ds: &Dataset,
    model: &OutcomeModel,
    alpha: &RieszWeightPair,
    tau: f64,
    oracle: Option<&DgpSpec>,
) -> Result<ErrorDecomposition> {
    let dgp = oracle.ok_or_else(|| {
        Error::OracleUnavailable("the representer error term needs the true design".into())
    })?;
    if dgp.k != ds.k() {
        return Err(Error::DimensionMismatch { expected: dgp.k, got: ds.k() });
    }
    let n = ds.n() as f64;
    let (mut eq1, mut noise, mut cross) = (0.0, 0.0, 0.0);
    for i in 0..ds.n() {
        let (d, x, y) = (ds.treated(i), ds.x(i), ds.y(i));
        let a0 = dgp.riesz(d, x);
        let a = alpha.alpha(d, x);
        let mu0 = dgp.mu(d, x);
        eq1 += (a0 - a) * (y - mu0);
        noise += a0 * (y - mu0);
        cross += a * (mu0 - model.predict(d, x));
    }
    Ok(ErrorDecomposition {
        eq1: eq1 / n,
        eq2: eq2_term(ds, model, tau),
        oracle_noise: noise / n,
        nuisance_cross: cross / n,
    })
}
