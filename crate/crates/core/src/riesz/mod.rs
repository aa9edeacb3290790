//! Riesz representer models and Bregman-Riesz regression.
//!
//! Both arms carry a positive weight function: `w1(x) ≈ 1/e(x)` for treated
//! units and `w0(x) ≈ 1/(1 - e(x))` for controls. The signed representer is
//! assembled as `α(d, x) = d·w1(x) - (1 - d)·w0(x)`.
//!
//! - Squared loss pairs with the linear model `w_d(x) = βᵀΦ(d, x)` on an
//!   arm-indexed basis. Positivity is not enforced.
//! - KL loss pairs with the logistic model `e(x) = 1/(1 + exp(-βᵀφ(x)))`,
//!   `w1 = 1/e`, `w0 = 1/(1 - e)`, so both weights exceed 1.

mod fit;
mod loss;

pub use fit::{fit_riesz, FitConfig, RieszFit};
pub use loss::{bregman_pointwise, empirical_objective, ConvexSpec, LossKind};

use nalgebra::DVector;

use crate::balance::{Provenance, UnitWeights};
use crate::basis::BasisSpec;
use crate::data::{Dataset, DgpSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum RieszModel {
    Linear { beta: DVector<f64>, basis: BasisSpec },
    Logistic { beta: DVector<f64>, basis: BasisSpec },
    /// The true representer of a known simulation design.
    Oracle(DgpSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RieszWeightPair {
    model: RieszModel,
}

impl RieszWeightPair {
    pub fn linear(basis: BasisSpec, beta: Vec<f64>) -> Result<Self> {
        if !basis.arm_indexed() {
            return Err(Error::InvalidConfig(
                "linear representer needs an arm-indexed basis".into(),
            ));
        }
        if beta.len() != basis.dim() {
            return Err(Error::DimensionMismatch { expected: basis.dim(), got: beta.len() });
        }
        Ok(Self { model: RieszModel::Linear { beta: DVector::from_vec(beta), basis } })
    }

    pub fn logistic(basis: BasisSpec, beta: Vec<f64>) -> Result<Self> {
        if basis.arm_indexed() {
            return Err(Error::InvalidConfig(
                "logistic representer needs a covariate-only basis".into(),
            ));
        }
        if beta.len() != basis.dim() {
            return Err(Error::DimensionMismatch { expected: basis.dim(), got: beta.len() });
        }
        Ok(Self { model: RieszModel::Logistic { beta: DVector::from_vec(beta), basis } })
    }

    pub fn oracle(dgp: DgpSpec) -> Self {
        Self { model: RieszModel::Oracle(dgp) }
    }

    pub fn model(&self) -> &RieszModel {
        &self.model
    }

    /// Loss the model was built for; `None` for the oracle.
    pub fn loss_kind(&self) -> Option<LossKind> {
        match self.model {
            RieszModel::Linear { .. } => Some(LossKind::Squared),
            RieszModel::Logistic { .. } => Some(LossKind::Kl),
            RieszModel::Oracle(_) => None,
        }
    }

    pub fn beta(&self) -> Option<&DVector<f64>> {
        match &self.model {
            RieszModel::Linear { beta, .. } | RieszModel::Logistic { beta, .. } => Some(beta),
            RieszModel::Oracle(_) => None,
        }
    }

    pub fn basis(&self) -> Option<&BasisSpec> {
        match &self.model {
            RieszModel::Linear { basis, .. } | RieszModel::Logistic { basis, .. } => Some(basis),
            RieszModel::Oracle(_) => None,
        }
    }

    fn index(&self, d: bool, x: &[f64]) -> f64 {
        let (beta, basis) = match &self.model {
            RieszModel::Linear { beta, basis } | RieszModel::Logistic { beta, basis } => {
                (beta, basis)
            }
            RieszModel::Oracle(_) => unreachable!("oracle has no linear index"),
        };
        let mut phi = vec![0.0; basis.dim()];
        basis.eval_into(d, x, &mut phi);
        phi.iter().zip(beta.iter()).map(|(a, b)| a * b).sum()
    }

    /// Propensity implied by the model, where one exists.
    pub fn propensity(&self, x: &[f64]) -> Option<f64> {
        match &self.model {
            RieszModel::Logistic { .. } => Some(1.0 / (1.0 + (-self.index(true, x)).exp())),
            RieszModel::Oracle(dgp) => Some(dgp.propensity(x)),
            RieszModel::Linear { .. } => None,
        }
    }

    /// Weight function of arm `d` (positive convention).
    pub fn weight(&self, d: bool, x: &[f64]) -> f64 {
        match &self.model {
            RieszModel::Linear { .. } => self.index(d, x),
            RieszModel::Logistic { .. } => {
                let eta = self.index(true, x);
                if d {
                    1.0 + (-eta).exp()
                } else {
                    1.0 + eta.exp()
                }
            }
            RieszModel::Oracle(dgp) => dgp.riesz(d, x).abs(),
        }
    }

    pub fn w1(&self, x: &[f64]) -> f64 {
        self.weight(true, x)
    }

    pub fn w0(&self, x: &[f64]) -> f64 {
        self.weight(false, x)
    }

    /// Signed representer `α(d, x)`.
    pub fn alpha(&self, d: bool, x: &[f64]) -> f64 {
        if d {
            self.w1(x)
        } else {
            -self.w0(x)
        }
    }

    /// Signed per-unit values `α(D_i, X_i)`.
    pub fn unit_weights(&self, ds: &Dataset) -> UnitWeights {
        let w = (0..ds.n()).map(|i| self.alpha(ds.treated(i), ds.x(i))).collect();
        UnitWeights::new(w, Provenance::PrimalFit)
    }

    /// Positive per-unit values `w_{D_i}(X_i)`.
    pub fn own_arm_weights(&self, ds: &Dataset) -> UnitWeights {
        let w = (0..ds.n()).map(|i| self.weight(ds.treated(i), ds.x(i))).collect();
        UnitWeights::new(w, Provenance::PrimalFit)
    }
}
