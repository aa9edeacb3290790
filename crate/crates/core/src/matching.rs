//! Nearest-neighbor matching with replacement, as unit weights.
//!
//! Each unit is matched to its `M` nearest opposite-arm units. With `K_M(i)`
//! the number of times unit `i` serves as a match, the matching estimator is
//! `(1/n) Σ α_i Y_i` with `α_i = (2D_i - 1)(1 + K_M(i)/M)`.
//!
//! For `M = 1` these weights coincide with squared-loss Riesz regression on
//! the Voronoi basis built from the same data. [`verify_matching_riesz_equivalence`]
//! checks that numerically.

use serde::{Deserialize, Serialize};

use crate::balance::{Provenance, UnitWeights};
use crate::basis::{build_voronoi_basis, squared_distance, Metric, Standardizer};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{EstimateReport, EstimatorKind, Z95};
use crate::linalg::mean_sd;
use crate::riesz::{fit_riesz, ConvexSpec, FitConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchAssignment {
    /// Matched opposite-arm unit indices for every unit, nearest first.
    pub matches: Vec<Vec<usize>>,
    /// `K_M(i)`: how often unit `i` appears in other units' match lists.
    pub usage: Vec<usize>,
    pub m: usize,
}

fn scaler(ds: &Dataset, metric: Metric) -> Standardizer {
    match metric {
        Metric::Euclidean => Standardizer::identity(ds.k()),
        Metric::Standardized => Standardizer::fit(ds),
    }
}

fn scaled_points(ds: &Dataset, metric: Metric) -> Vec<Vec<f64>> {
    let s = scaler(ds, metric);
    (0..ds.n()).map(|i| s.apply(ds.x(i))).collect()
}

/// Opposite-arm units of `i` sorted by (distance, index).
fn ranked_opposites(ds: &Dataset, points: &[Vec<f64>], i: usize) -> Vec<(f64, usize)> {
    let mut cands: Vec<(f64, usize)> = (0..ds.n())
        .filter(|&j| ds.treated(j) != ds.treated(i))
        .map(|j| (squared_distance(&points[i], &points[j]), j))
        .collect();
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cands
}

pub fn match_units(ds: &Dataset, m: usize, metric: Metric) -> Result<MatchAssignment> {
    let smallest_arm = ds.n_treated().min(ds.n_control());
    if m == 0 || m > smallest_arm {
        return Err(Error::InvalidConfig(format!(
            "number of matches must be in 1..={smallest_arm}, got {m}"
        )));
    }
    let points = scaled_points(ds, metric);
    let mut usage = vec![0; ds.n()];
    let matches = (0..ds.n())
        .map(|i| {
            let chosen: Vec<usize> =
                ranked_opposites(ds, &points, i).into_iter().take(m).map(|(_, j)| j).collect();
            for &j in &chosen {
                usage[j] += 1;
            }
            chosen
        })
        .collect();
    Ok(MatchAssignment { matches, usage, m })
}

/// Signed weights `(2D_i - 1)(1 + K_M(i)/M)`.
pub fn matching_weights(assign: &MatchAssignment, ds: &Dataset) -> Result<UnitWeights> {
    if assign.usage.len() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), got: assign.usage.len() });
    }
    let m = assign.m as f64;
    let w = assign
        .usage
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let s = if ds.treated(i) { 1.0 } else { -1.0 };
            s * (1.0 + k as f64 / m)
        })
        .collect();
    Ok(UnitWeights::new(w, Provenance::Matching))
}

/// `(1/n) Σ (Ŷ_i(1) - Ŷ_i(0))`, imputing the missing potential outcome by the
/// mean of the matched outcomes.
pub fn imputation_estimate(assign: &MatchAssignment, ds: &Dataset) -> f64 {
    let total: f64 = (0..ds.n())
        .map(|i| {
            let imputed = assign.matches[i].iter().map(|&j| ds.y(j)).sum::<f64>()
                / assign.matches[i].len() as f64;
            if ds.treated(i) {
                ds.y(i) - imputed
            } else {
                imputed - ds.y(i)
            }
        })
        .sum();
    total / ds.n() as f64
}

/// Matching estimate in weighting form with a naive standard error.
pub fn estimate_matching(ds: &Dataset, m: usize, metric: Metric) -> Result<EstimateReport> {
    let assign = match_units(ds, m, metric)?;
    let w = matching_weights(&assign, ds)?;
    let scores: Vec<f64> = w.w.iter().zip(ds.outcomes()).map(|(a, y)| a * y).collect();
    let (tau_hat, sd) = mean_sd(&scores);
    let std_error = sd / (ds.n() as f64).sqrt();
    Ok(EstimateReport {
        estimator: EstimatorKind::Matching,
        tau_hat,
        std_error,
        ci95: [tau_hat - Z95 * std_error, tau_hat + Z95 * std_error],
        neyman_error: 0.0,
        eq1_term: None,
        eq2_term: tau_hat,
        naive_std_error: true,
        balance: None,
        notes: vec![format!("{m}-nearest-neighbor matching with replacement")],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Equivalence {
    /// Both weight vectors agree to within the tolerance.
    Verified { max_deviation: f64 },
    Failed { max_deviation: f64 },
    /// Nearest neighbors are not unique, so the partition is ambiguous.
    InconclusiveTies { tied_units: usize },
}

impl Equivalence {
    pub fn passed(&self) -> bool {
        matches!(self, Equivalence::Verified { .. })
    }
}

pub const EQUIVALENCE_TOL: f64 = 1e-6;

/// Units whose nearest-neighbor structure is ambiguous: a tie for the
/// nearest opposite-arm unit, a duplicate of a same-arm unit, or a zero
/// distance to an opposite-arm unit.
pub fn tied_units(ds: &Dataset, metric: Metric) -> Vec<usize> {
    let points = scaled_points(ds, metric);
    (0..ds.n())
        .filter(|&i| {
            let ranked = ranked_opposites(ds, &points, i);
            let nn_tie = ranked.len() > 1 && ranked[0].0 == ranked[1].0;
            let cross_zero = ranked.first().is_some_and(|r| r.0 == 0.0);
            let same_dup = (0..ds.n()).any(|j| {
                j != i && ds.treated(j) == ds.treated(i) && points[i] == points[j]
            });
            nn_tie || cross_zero || same_dup
        })
        .collect()
}

/// Compare `|α(D_i, X_i)|` from squared-loss Riesz regression on the
/// Voronoi basis with `1 + K_1(i)` from 1-NN matching.
pub fn verify_matching_riesz_equivalence(ds: &Dataset, metric: Metric) -> Result<Equivalence> {
    let tied = tied_units(ds, metric);
    if !tied.is_empty() {
        return Ok(Equivalence::InconclusiveTies { tied_units: tied.len() });
    }
    let assign = match_units(ds, 1, metric)?;
    let matched = matching_weights(&assign, ds)?;
    let basis = build_voronoi_basis(ds, metric)?;
    let fit = fit_riesz(ConvexSpec::SQUARED, &basis, ds, &FitConfig::default())?;
    let fitted = fit.pair.unit_weights(ds);
    let max_deviation = fitted
        .w
        .iter()
        .zip(&matched.w)
        .map(|(a, b)| (a.abs() - b.abs()).abs())
        .fold(0.0, f64::max);
    Ok(if max_deviation <= EQUIVALENCE_TOL {
        Equivalence::Verified { max_deviation }
    } else {
        Equivalence::Failed { max_deviation }
    })
}
