//! Outcome regression `μ(d, x)` and the TMLE fluctuation.
//!
//! The fluctuation moves the regression along the representer,
//! `μ̃(d, x) = μ̂(d, x) + ε·α(d, x)`, with the single scalar
//! `ε = Σ α_i (Y_i - μ̂(D_i, X_i)) / Σ α_i²`. After the update the score
//! equation `Σ α_i (Y_i - μ̃(D_i, X_i)) = 0` holds.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSpec;
use crate::data::{Dataset, DgpSpec};
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_spd};
use crate::riesz::RieszWeightPair;

#[derive(Debug, Clone, PartialEq)]
pub struct Fluctuation {
    pub eps: f64,
    pub representer: RieszWeightPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    basis: BasisSpec,
    coefficients: Vec<f64>,
    fluctuations: Vec<Fluctuation>,
    notices: Vec<String>,
}

impl OutcomeModel {
    /// A linear model `μ(d, x) = βᵀΦ(d, x)` with fixed coefficients.
    pub fn from_coefficients(basis: BasisSpec, coefficients: Vec<f64>) -> Result<Self> {
        if !basis.arm_indexed() {
            return Err(Error::InvalidConfig("outcome models use an arm-indexed basis".into()));
        }
        if coefficients.len() != basis.dim() {
            return Err(Error::DimensionMismatch { expected: basis.dim(), got: coefficients.len() });
        }
        Ok(Self { basis, coefficients, fluctuations: Vec::new(), notices: Vec::new() })
    }

    /// The true regression of a linear simulation design.
    pub fn oracle(dgp: &DgpSpec) -> Result<Self> {
        let basis = BasisSpec::new(crate::basis::BasisKind::RawIntercept, true, dgp.k)?;
        let mut coefs = dgp.outcome_coefs_treated.clone();
        coefs.extend_from_slice(&dgp.outcome_coefs_control);
        Self::from_coefficients(basis, coefs)
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn notices(&self) -> &[String] {
        &self.notices
    }

    pub fn fluctuations(&self) -> &[Fluctuation] {
        &self.fluctuations
    }

    /// Most recent fluctuation coefficient, if the model was TMLE-updated.
    pub fn fluctuation_eps(&self) -> Option<f64> {
        self.fluctuations.last().map(|f| f.eps)
    }

    pub fn predict(&self, d: bool, x: &[f64]) -> f64 {
        let mut phi = vec![0.0; self.basis.dim()];
        self.basis.eval_into(d, x, &mut phi);
        let base = dot(&phi, &self.coefficients);
        self.fluctuations
            .iter()
            .fold(base, |acc, f| acc + f.eps * f.representer.alpha(d, x))
    }

    /// `Y_i - μ(D_i, X_i)` for every unit.
    pub fn residuals(&self, ds: &Dataset) -> Vec<f64> {
        (0..ds.n()).map(|i| ds.y(i) - self.predict(ds.treated(i), ds.x(i))).collect()
    }
}

/// Ordinary least squares of `Y` on `Φ(D, X)`. A rank-deficient design
/// falls back to a small ridge penalty, recorded in the model's notices.
pub fn fit_outcome(ds: &Dataset, basis: &BasisSpec) -> Result<OutcomeModel> {
    if !basis.arm_indexed() {
        return Err(Error::InvalidConfig("outcome models use an arm-indexed basis".into()));
    }
    let p = basis.dim();
    let rows = basis.design(ds, None)?;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for (i, row) in rows.iter().enumerate() {
        for a in 0..p {
            if row[a] == 0.0 {
                continue;
            }
            xty[a] += row[a] * ds.y(i);
            for b in 0..p {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    let rank = crate::linalg::matrix_rank(&xtx, 1e-12);
    let mut notices = Vec::new();
    let beta = if rank == p {
        solve_spd(&xtx, &xty)
    } else {
        None
    };
    let beta = match beta {
        Some(b) => b,
        None => {
            let ridge = 1e-8 * (xtx.trace() / p as f64).max(1.0);
            notices.push(format!(
                "design is rank deficient (rank {rank} of {p}); used ridge penalty {ridge:e}"
            ));
            let penalized = &xtx + DMatrix::identity(p, p) * ridge;
            solve_spd(&penalized, &xty).ok_or_else(|| {
                Error::InvalidData("outcome design could not be solved even with ridge".into())
            })?
        }
    };
    let mut model = OutcomeModel::from_coefficients(basis.clone(), beta.iter().copied().collect())?;
    model.notices = notices;
    Ok(model)
}

/// One TMLE fluctuation step along `alpha`.
pub fn tmle_update(
    model: &OutcomeModel,
    ds: &Dataset,
    alpha: &RieszWeightPair,
) -> Result<OutcomeModel> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..ds.n() {
        let a = alpha.alpha(ds.treated(i), ds.x(i));
        num += a * (ds.y(i) - model.predict(ds.treated(i), ds.x(i)));
        den += a * a;
    }
    if den == 0.0 || !den.is_finite() {
        return Err(Error::DegenerateFluctuation);
    }
    let mut updated = model.clone();
    updated.fluctuations.push(Fluctuation { eps: num / den, representer: alpha.clone() });
    Ok(updated)
}

/// `Σ α(D_i, X_i)(Y_i - μ(D_i, X_i))`.
pub fn score_residual(model: &OutcomeModel, ds: &Dataset, alpha: &RieszWeightPair) -> f64 {
    (0..ds.n())
        .map(|i| {
            let (d, x) = (ds.treated(i), ds.x(i));
            alpha.alpha(d, x) * (ds.y(i) - model.predict(d, x))
        })
        .sum()
}
