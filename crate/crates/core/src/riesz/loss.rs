use serde::{Deserialize, Serialize};

use super::RieszWeightPair;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::riesz::FitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `g(a) = (a - 1)²`
    Squared,
    /// `g(a) = (|a| - 1)·log(|a| - 1) - |a|` on `|a| > 1`
    Kl,
}

/// The strictly convex generator `g` of a Bregman divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvexSpec {
    pub kind: LossKind,
}

impl ConvexSpec {
    pub const SQUARED: ConvexSpec = ConvexSpec { kind: LossKind::Squared };
    pub const KL: ConvexSpec = ConvexSpec { kind: LossKind::Kl };

    fn check(&self, a: f64) -> Result<()> {
        if !a.is_finite() {
            return Err(Error::Domain(format!("{a} is not finite")));
        }
        if self.kind == LossKind::Kl && a.abs() <= 1.0 {
            return Err(Error::Domain(format!("KL generator needs |a| > 1, got {a}")));
        }
        Ok(())
    }

    pub fn g(&self, a: f64) -> Result<f64> {
        self.check(a)?;
        Ok(match self.kind {
            LossKind::Squared => (a - 1.0).powi(2),
            LossKind::Kl => {
                let u = a.abs() - 1.0;
                u * u.ln() - a.abs()
            }
        })
    }

    pub fn dg(&self, a: f64) -> Result<f64> {
        self.check(a)?;
        Ok(match self.kind {
            LossKind::Squared => 2.0 * (a - 1.0),
            LossKind::Kl => a.signum() * (a.abs() - 1.0).ln(),
        })
    }
}

/// `g(a) - g(b) - g'(b)(a - b)`.
///
/// The KL generator lives on two disjoint rays; both arguments must sit on the
/// same ray. On a ray the divergence reduces to the generalized KL divergence
/// between `|a| - 1` and `|b| - 1`, which is how it is evaluated.
pub fn bregman_pointwise(spec: ConvexSpec, a: f64, b: f64) -> Result<f64> {
    spec.check(a)?;
    spec.check(b)?;
    match spec.kind {
        LossKind::Squared => Ok((a - b).powi(2)),
        LossKind::Kl => {
            if a.signum() != b.signum() {
                return Err(Error::Domain(format!(
                    "KL divergence between opposite branches ({a}, {b})"
                )));
            }
            let u = a.abs() - 1.0;
            let v = b.abs() - 1.0;
            Ok((u * (u / v).ln() - u + v).max(0.0))
        }
    }
}

fn weights_or_unit(cfg: &FitConfig, n: usize) -> Result<Vec<f64>> {
    match &cfg.obs_weights {
        None => Ok(vec![1.0; n]),
        Some(w) if w.len() != n => Err(Error::DimensionMismatch { expected: n, got: w.len() }),
        Some(w) => Ok(w.clone()),
    }
}

/// Empirical feasible objective plus the ridge penalty `λ‖β‖²`.
///
/// Squared loss, per unit: `-2(w1 + w0) + D·w1² + (1 - D)·w0²`.
/// KL loss, per unit on its own arm: `-log(1/(w - 1)) + w`.
/// Observation weights, when present, multiply each unit's summand.
pub fn empirical_objective(
    spec: ConvexSpec,
    pair: &RieszWeightPair,
    ds: &Dataset,
    cfg: &FitConfig,
) -> Result<f64> {
    cfg.validate()?;
    if let Some(kind) = pair.loss_kind() {
        if kind != spec.kind {
            return Err(Error::InvalidConfig(format!(
                "representer was built for {kind:?} loss, objective is {:?}",
                spec.kind
            )));
        }
    }
    let n = ds.n();
    let omega = weights_or_unit(cfg, n)?;
    let mut total = 0.0;
    for i in 0..n {
        let x = ds.x(i);
        let term = match spec.kind {
            LossKind::Squared => {
                let (w1, w0) = (pair.w1(x), pair.w0(x));
                let own = if ds.treated(i) { w1 * w1 } else { w0 * w0 };
                -2.0 * (w1 + w0) + own
            }
            LossKind::Kl => {
                let w = pair.weight(ds.treated(i), x);
                if w <= 1.0 {
                    return Err(Error::Domain(format!(
                        "KL objective needs weights > 1, unit {} has {w}",
                        i + 1
                    )));
                }
                -(1.0 / (w - 1.0)).ln() + w
            }
        };
        total += omega[i] * term;
    }
    let penalty = pair.beta().map_or(0.0, |b| cfg.lambda * b.norm_squared());
    Ok(total / n as f64 + penalty)
}
