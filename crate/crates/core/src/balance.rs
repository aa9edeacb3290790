//! Covariate balancing: the dual side of Bregman-Riesz regression.
//!
//! * Stable balancing weights: the minimum-norm signed weights `α ∈ ℝⁿ` with
//!   `Σ α_i Φ(D_i, X_i) = Σ (Φ(1, X_i) - Φ(0, X_i))` on an arm-indexed basis.
//!   Solved through the KKT system of the equality-constrained QP.
//! * Entropy balancing: weights `w_i > 1` minimizing `Σ g(w_i)` with
//!   `g(w) = (w - 1)·log(w - 1) - w`, subject to
//!   `Σ_{treated} w_i φ(X_i) = Σ_{control} w_i φ(X_i)` on a covariate-only
//!   basis. Solved directly in weight space with an infeasible-start Newton
//!   method, independently of the β-space logistic fit it is dual to.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{inf_norm, matrix_rank, solve_min_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    PrimalFit,
    DualSolve,
    Matching,
    External,
}

/// One weight per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitWeights {
    pub w: Vec<f64>,
    pub provenance: Provenance,
}

impl UnitWeights {
    pub fn new(w: Vec<f64>, provenance: Provenance) -> Self {
        Self { w, provenance }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Absolute values, turning signed representer values into per-arm weights.
    pub fn magnitudes(&self) -> UnitWeights {
        UnitWeights::new(self.w.iter().map(|v| v.abs()).collect(), self.provenance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub residuals: Vec<f64>,
    pub max_abs_violation: f64,
}

impl BalanceReport {
    fn from_residuals(residuals: Vec<f64>) -> Self {
        let max_abs_violation = inf_norm(&residuals);
        Self { residuals, max_abs_violation }
    }
}

fn check_lengths(ds: &Dataset, w: &UnitWeights) -> Result<()> {
    if w.len() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), got: w.len() });
    }
    Ok(())
}

/// Right-hand side `Σ (Φ(1, X_i) - Φ(0, X_i))` of the stable-balancing constraint.
fn sbw_target(ds: &Dataset, basis: &BasisSpec) -> Result<Vec<f64>> {
    let t = basis.design(ds, Some(true))?;
    let c = basis.design(ds, Some(false))?;
    let mut target = vec![0.0; basis.dim()];
    for (rt, rc) in t.iter().zip(&c) {
        for (a, (u, v)) in target.iter_mut().zip(rt.iter().zip(rc)) {
            *a += u - v;
        }
    }
    Ok(target)
}

/// `Σ α_i Φ(D_i, X_i) - Σ (Φ(1, X_i) - Φ(0, X_i))` for signed weights.
pub fn balance_residual_sbw(
    ds: &Dataset,
    alpha: &UnitWeights,
    basis: &BasisSpec,
) -> Result<BalanceReport> {
    check_lengths(ds, alpha)?;
    if !basis.arm_indexed() {
        return Err(Error::InvalidConfig(
            "stable-balancing residual needs an arm-indexed basis".into(),
        ));
    }
    let own = basis.design(ds, None)?;
    let mut residual = sbw_target(ds, basis)?;
    for r in &mut residual {
        *r = -*r;
    }
    for (row, a) in own.iter().zip(&alpha.w) {
        for (r, v) in residual.iter_mut().zip(row) {
            *r += a * v;
        }
    }
    Ok(BalanceReport::from_residuals(residual))
}

/// `Σ_{treated} w_i φ(X_i) - Σ_{control} w_i φ(X_i)` for positive weights.
pub fn balance_residual_eb(
    ds: &Dataset,
    w: &UnitWeights,
    basis: &BasisSpec,
) -> Result<BalanceReport> {
    check_lengths(ds, w)?;
    let design = basis.design(ds, None)?;
    let mut residual = vec![0.0; basis.dim()];
    for (i, (row, wi)) in design.iter().zip(&w.w).enumerate() {
        let s = if ds.treated(i) { 1.0 } else { -1.0 };
        for (r, v) in residual.iter_mut().zip(row) {
            *r += s * wi * v;
        }
    }
    Ok(BalanceReport::from_residuals(residual))
}

/// Output of [`solve_sbw_dual`].
#[derive(Debug, Clone, PartialEq)]
pub struct SbwSolution {
    pub weights: UnitWeights,
    /// Numerical rank of the `p × n` constraint matrix.
    pub rank: usize,
    pub p: usize,
}

impl SbwSolution {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.p
    }
}

/// Minimum-norm signed weights meeting the stable-balancing constraint.
///
/// Solves `[2I Aᵀ; A 0] [α; ν] = [0; c]` where column `i` of `A` is
/// `Φ(D_i, X_i)`. A rank-deficient `A` is handled by a minimum-norm solve of
/// the KKT system; the result is rejected if the constraint is not met.
pub fn solve_sbw_dual(ds: &Dataset, basis: &BasisSpec) -> Result<SbwSolution> {
    if !basis.arm_indexed() {
        return Err(Error::InvalidConfig("stable balancing needs an arm-indexed basis".into()));
    }
    let n = ds.n();
    let p = basis.dim();
    let own = basis.design(ds, None)?;
    let target = sbw_target(ds, basis)?;

    let a = DMatrix::from_fn(p, n, |r, c| own[c][r]);
    let rank = matrix_rank(&a, 1e-10);
    let mut kkt = DMatrix::<f64>::zeros(n + p, n + p);
    for i in 0..n {
        kkt[(i, i)] = 2.0;
    }
    for r in 0..p {
        for c in 0..n {
            kkt[(n + r, c)] = a[(r, c)];
            kkt[(c, n + r)] = a[(r, c)];
        }
    }
    let mut rhs = DVector::<f64>::zeros(n + p);
    for r in 0..p {
        rhs[n + r] = target[r];
    }
    let (sol, _) = solve_min_norm(&kkt, &rhs, 1e-12);
    let alpha: Vec<f64> = sol.rows(0, n).iter().copied().collect();

    let check = &a * DVector::from_column_slice(&alpha) - DVector::from_column_slice(&target);
    let residual = check.amax();
    let scale = 1.0 + inf_norm(&target);
    if residual > 1e-8 * scale {
        return Err(Error::Infeasible { rank, p, residual });
    }
    Ok(SbwSolution { weights: UnitWeights::new(alpha, Provenance::DualSolve), rank, p })
}

#[derive(Debug, Clone)]
pub struct EbConfig {
    pub max_iters: usize,
    /// Stopping threshold on the KKT residual norm.
    pub tol: f64,
}

impl Default for EbConfig {
    fn default() -> Self {
        Self { max_iters: 200, tol: 1e-11 }
    }
}

/// Entropy-balancing weights with default solver settings.
pub fn solve_eb_dual(ds: &Dataset, basis: &BasisSpec) -> Result<UnitWeights> {
    solve_eb_dual_with(ds, basis, &EbConfig::default())
}

/// Minimize `Σ [(w_i - 1)·log(w_i - 1) - w_i]` over `w ∈ (1, ∞)ⁿ` subject to
/// `A w = 0`, where column `i` of `A` is `s_i φ(X_i)` with `s_i = ±1` by arm.
///
/// Infeasible-start Newton: each step solves the KKT system with the diagonal
/// Hessian `1/(w_i - 1)`, then backtracks on the residual norm while keeping
/// every weight above 1.
pub fn solve_eb_dual_with(ds: &Dataset, basis: &BasisSpec, cfg: &EbConfig) -> Result<UnitWeights> {
    if basis.arm_indexed() {
        return Err(Error::InvalidConfig("entropy balancing needs a covariate-only basis".into()));
    }
    let n = ds.n();
    let p = basis.dim();
    let design = basis.design(ds, None)?;
    let a = DMatrix::from_fn(p, n, |r, c| {
        let s = if ds.treated(c) { 1.0 } else { -1.0 };
        s * design[c][r]
    });
    let rank = matrix_rank(&a, 1e-10);

    let mut w = DVector::<f64>::from_element(n, 2.0);
    let mut nu = DVector::<f64>::zeros(p);

    let residual = |w: &DVector<f64>, nu: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let grad = w.map(|wi| (wi - 1.0).ln());
        (grad + a.transpose() * nu, &a * w)
    };
    let norm = |rd: &DVector<f64>, rp: &DVector<f64>| (rd.norm_squared() + rp.norm_squared()).sqrt();

    let (mut rd, mut rp) = residual(&w, &nu);
    for _ in 0..cfg.max_iters {
        let rnorm = norm(&rd, &rp);
        if rnorm <= cfg.tol * (1.0 + w.amax()) {
            return Ok(UnitWeights::new(w.iter().copied().collect(), Provenance::DualSolve));
        }
        let mut kkt = DMatrix::<f64>::zeros(n + p, n + p);
        for i in 0..n {
            kkt[(i, i)] = 1.0 / (w[i] - 1.0);
        }
        for r in 0..p {
            for c in 0..n {
                kkt[(n + r, c)] = a[(r, c)];
                kkt[(c, n + r)] = a[(r, c)];
            }
        }
        let mut rhs = DVector::<f64>::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(&(-&rd));
        rhs.rows_mut(n, p).copy_from(&(-&rp));
        let (step, _) = solve_min_norm(&kkt, &rhs, 1e-14);
        let dw = step.rows(0, n).into_owned();
        let dnu = step.rows(n, p).into_owned();

        // largest step keeping w > 1
        let mut t: f64 = 1.0;
        for i in 0..n {
            if dw[i] < 0.0 {
                t = t.min(0.99 * (w[i] - 1.0) / -dw[i]);
            }
        }
        loop {
            let wt = &w + &dw * t;
            let nut = &nu + &dnu * t;
            let (rdt, rpt) = residual(&wt, &nut);
            if norm(&rdt, &rpt) <= (1.0 - 0.01 * t) * rnorm {
                w = wt;
                nu = nut;
                rd = rdt;
                rp = rpt;
                break;
            }
            t *= 0.5;
            if t < 1e-14 {
                return Err(Error::Infeasible { rank, p, residual: rp.amax() });
            }
        }
    }
    let grad_norm = norm(&rd, &rp);
    Err(Error::NonConvergence { iterations: cfg.max_iters, grad_norm })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Dataset {
        Dataset::from_rows(&vec![vec![0.0]; 4], &[1, 1, 1, 0], &[1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn sbw_residual_fixture() {
        let basis = BasisSpec::one_hot_arm(1);
        let alpha = UnitWeights::new(vec![4.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0, -4.0], Provenance::External);
        let report = balance_residual_sbw(&fixture(), &alpha, &basis).unwrap();
        assert!(report.max_abs_violation < 1e-14);

        let zero = UnitWeights::new(vec![0.0; 4], Provenance::External);
        let report = balance_residual_sbw(&fixture(), &zero, &basis).unwrap();
        assert_eq!(report.residuals, vec![-4.0, 4.0]);
        assert_eq!(report.max_abs_violation, 4.0);
    }

    #[test]
    fn sbw_dual_fixture() {
        let sol = solve_sbw_dual(&fixture(), &BasisSpec::one_hot_arm(1)).unwrap();
        let w = &sol.weights.w;
        for v in &w[..3] {
            assert!((v - 4.0 / 3.0).abs() < 1e-12);
        }
        assert!((w[3] + 4.0).abs() < 1e-12);
        assert!(!sol.rank_deficient());
    }

    #[test]
    fn sbw_dual_two_units() {
        let ds = Dataset::from_rows(&[vec![0.3], vec![-0.2]], &[1, 0], &[0.0; 2]).unwrap();
        let sol = solve_sbw_dual(&ds, &BasisSpec::one_hot_arm(1)).unwrap();
        assert!((sol.weights.w[0] - 2.0).abs() < 1e-12);
        assert!((sol.weights.w[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn sbw_infeasible_reports_rank() {
        // two treated units at the same point cannot match a target that needs different values
        let ds = Dataset::from_rows(&[vec![1.0], vec![1.0], vec![2.0]], &[1, 1, 0], &[0.0; 3]).unwrap();
        let basis = BasisSpec::new(crate::basis::BasisKind::RawIntercept, true, 1).unwrap();
        let err = solve_sbw_dual(&ds, &basis).unwrap_err();
        assert!(matches!(err, Error::Infeasible { p: 4, .. }), "{err:?}");
    }

    #[test]
    fn eb_residual_examples() {
        let ds = Dataset::from_rows(&vec![vec![0.0]; 4], &[1, 0, 0, 0], &[0.0; 4]).unwrap();
        let w = UnitWeights::new(vec![4.0, 4.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0], Provenance::External);
        let r = balance_residual_eb(&ds, &w, &BasisSpec::intercept(1)).unwrap();
        assert!(r.max_abs_violation < 1e-14);

        let ds = Dataset::from_rows(&vec![vec![0.0]; 4], &[1, 0, 1, 0], &[0.0; 4]).unwrap();
        let w = UnitWeights::new(vec![2.0; 4], Provenance::External);
        assert_eq!(balance_residual_eb(&ds, &w, &BasisSpec::intercept(1)).unwrap().max_abs_violation, 0.0);
    }

    #[test]
    fn eb_dual_intercept_fixtures() {
        let ds = Dataset::from_rows(&vec![vec![0.0]; 4], &[1, 0, 1, 0], &[0.0; 4]).unwrap();
        let w = solve_eb_dual(&ds, &BasisSpec::intercept(1)).unwrap();
        for v in &w.w {
            assert!((v - 2.0).abs() < 1e-10);
        }
        let ds = Dataset::from_rows(&vec![vec![0.0]; 4], &[1, 0, 0, 0], &[0.0; 4]).unwrap();
        let w = solve_eb_dual(&ds, &BasisSpec::intercept(1)).unwrap();
        assert!((w.w[0] - 4.0).abs() < 1e-9);
        for v in &w.w[1..] {
            assert!((v - 4.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eb_dual_rejects_arm_indexed_basis() {
        assert!(solve_eb_dual(&fixture(), &BasisSpec::one_hot_arm(1)).is_err());
    }
}
