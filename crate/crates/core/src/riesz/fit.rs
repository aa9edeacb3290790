use nalgebra::{DMatrix, DVector};

use super::{ConvexSpec, LossKind, RieszWeightPair};
use crate::basis::BasisSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{solve_min_norm, solve_spd};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Ridge coefficient on `‖β‖²`.
    pub lambda: f64,
    /// Nonnegative per-unit multipliers on the loss summands.
    pub obs_weights: Option<Vec<f64>>,
    pub max_iters: usize,
    /// Gradient-norm stopping tolerance; relative to `‖r‖` for squared loss.
    pub grad_tol: f64,
    /// Starting coefficients; zero when absent.
    pub init: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { lambda: 0.0, obs_weights: None, max_iters: 500, grad_tol: 1e-10, init: None }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidConfig("grad_tol must be positive".into()));
        }
        if let Some(w) = &self.obs_weights {
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidConfig(
                    "observation weights must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Result of [`fit_riesz`].
#[derive(Debug, Clone)]
pub struct RieszFit {
    pub pair: RieszWeightPair,
    /// Objective (including the ridge term) at the returned coefficients.
    pub objective: f64,
    pub initial_objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub notices: Vec<String>,
}

/// Per-unit data shared by both solvers.
struct Problem {
    n: usize,
    p: usize,
    omega: Vec<f64>,
    lambda: f64,
}

impl Problem {
    fn new(ds: &Dataset, p: usize, cfg: &FitConfig) -> Result<Self> {
        let omega = match &cfg.obs_weights {
            None => vec![1.0; ds.n()],
            Some(w) if w.len() != ds.n() => {
                return Err(Error::DimensionMismatch { expected: ds.n(), got: w.len() })
            }
            Some(w) => w.clone(),
        };
        Ok(Self { n: ds.n(), p, omega, lambda: cfg.lambda })
    }

    fn init(&self, cfg: &FitConfig) -> Result<DVector<f64>> {
        match &cfg.init {
            None => Ok(DVector::zeros(self.p)),
            Some(b) if b.len() != self.p => {
                Err(Error::DimensionMismatch { expected: self.p, got: b.len() })
            }
            Some(b) => Ok(DVector::from_column_slice(b)),
        }
    }
}

/// Minimize the empirical feasible objective over the model class tied to
/// the loss: linear on an arm-indexed basis for squared loss, logistic on a
/// covariate-only basis for KL loss.
pub fn fit_riesz(
    spec: ConvexSpec,
    basis: &BasisSpec,
    ds: &Dataset,
    cfg: &FitConfig,
) -> Result<RieszFit> {
    cfg.validate()?;
    match (spec.kind, basis.arm_indexed()) {
        (LossKind::Squared, false) => Err(Error::InvalidConfig(
            "squared loss uses a linear model on an arm-indexed basis".into(),
        )),
        (LossKind::Kl, true) => Err(Error::InvalidConfig(
            "KL loss uses a logistic model on a covariate-only basis".into(),
        )),
        (LossKind::Squared, true) => fit_squared(basis, ds, cfg),
        (LossKind::Kl, false) => fit_kl(basis, ds, cfg),
    }
}

/// The squared-loss objective is the quadratic `½βᵀHβ - rᵀβ` with
/// `H = (2/n) Σ ω_i Φ(D_i,X_i)Φ(D_i,X_i)ᵀ + 2λI` and
/// `r = (2/n) Σ ω_i (Φ(1,X_i) + Φ(0,X_i))`.
fn fit_squared(basis: &BasisSpec, ds: &Dataset, cfg: &FitConfig) -> Result<RieszFit> {
    let p = basis.dim();
    let prob = Problem::new(ds, p, cfg)?;
    let own = basis.design(ds, None)?;
    let treated = basis.design(ds, Some(true))?;
    let control = basis.design(ds, Some(false))?;

    let scale = 2.0 / prob.n as f64;
    let mut h = DMatrix::<f64>::zeros(p, p);
    let mut r = DVector::<f64>::zeros(p);
    for i in 0..prob.n {
        let w = prob.omega[i] * scale;
        if w == 0.0 {
            continue;
        }
        let phi = &own[i];
        for a in 0..p {
            if phi[a] == 0.0 {
                continue;
            }
            for b in 0..p {
                h[(a, b)] += w * phi[a] * phi[b];
            }
        }
        for a in 0..p {
            r[a] += w * (treated[i][a] + control[i][a]);
        }
    }
    for a in 0..p {
        h[(a, a)] += 2.0 * prob.lambda;
    }

    let objective = |beta: &DVector<f64>| 0.5 * beta.dot(&(&h * beta)) - r.dot(beta);
    let beta0 = prob.init(cfg)?;
    let initial_objective = objective(&beta0);

    let mut notices = Vec::new();
    let mut beta = match solve_spd(&h, &r) {
        Some(b) => b,
        None => {
            let (b, rank) = solve_min_norm(&h, &r, 1e-12);
            notices.push(format!(
                "normal equations are singular (rank {rank} of {p}); used a minimum-norm solve"
            ));
            b
        }
    };
    let mut grad = &h * &beta - &r;
    let mut iterations = 1;
    let tol = cfg.grad_tol * r.norm().max(1.0);
    // Iterative refinement on the residual.
    while grad.norm() > tol && iterations < 4 {
        let (delta, _) = solve_min_norm(&h, &grad, 1e-12);
        beta -= delta;
        grad = &h * &beta - &r;
        iterations += 1;
    }
    let grad_norm = grad.norm();
    if !grad_norm.is_finite() || grad_norm > tol {
        return Err(Error::NonConvergence { iterations, grad_norm });
    }
    let pair = RieszWeightPair::linear(basis.clone(), beta.iter().copied().collect())?;
    Ok(RieszFit {
        objective: objective(&beta),
        pair,
        initial_objective,
        grad_norm,
        iterations,
        notices,
    })
}

/// Tailored loss in terms of the signed index `t = s·βᵀφ(x)` with `s = +1`
/// for treated and `-1` for control units: `1 - t + exp(-t)`.
struct KlObjective<'a> {
    prob: &'a Problem,
    rows: Vec<Vec<f64>>,
    signs: Vec<f64>,
}

impl KlObjective<'_> {
    fn value(&self, beta: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for ((row, s), w) in self.rows.iter().zip(&self.signs).zip(&self.prob.omega) {
            if *w == 0.0 {
                continue;
            }
            let t = s * row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>();
            total += w * (1.0 - t + (-t).exp());
        }
        total / self.prob.n as f64 + self.prob.lambda * beta.norm_squared()
    }

    fn gradient_hessian(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.prob.p;
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        let inv_n = 1.0 / self.prob.n as f64;
        for ((row, s), w) in self.rows.iter().zip(&self.signs).zip(&self.prob.omega) {
            if *w == 0.0 {
                continue;
            }
            let t = s * row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>();
            let e = (-t).exp();
            let gi = -w * inv_n * s * (1.0 + e);
            let hi = w * inv_n * e;
            for a in 0..p {
                g[a] += gi * row[a];
                for b in 0..p {
                    h[(a, b)] += hi * row[a] * row[b];
                }
            }
        }
        g += 2.0 * self.prob.lambda * beta;
        for a in 0..p {
            h[(a, a)] += 2.0 * self.prob.lambda;
        }
        (g, h)
    }
}

/// Damped Newton with Armijo backtracking.
fn fit_kl(basis: &BasisSpec, ds: &Dataset, cfg: &FitConfig) -> Result<RieszFit> {
    let p = basis.dim();
    let prob = Problem::new(ds, p, cfg)?;
    let obj = KlObjective {
        prob: &prob,
        rows: basis.design(ds, None)?,
        signs: (0..ds.n()).map(|i| if ds.treated(i) { 1.0 } else { -1.0 }).collect(),
    };
    let mut beta = prob.init(cfg)?;
    let initial_objective = obj.value(&beta);
    if !initial_objective.is_finite() {
        return Err(Error::InvalidConfig("objective is not finite at the initial point".into()));
    }
    let mut f = initial_objective;
    let mut notices = Vec::new();
    let mut iterations = 0;
    loop {
        let (g, h) = obj.gradient_hessian(&beta);
        let grad_norm = g.norm();
        if grad_norm <= cfg.grad_tol {
            let pair = RieszWeightPair::logistic(basis.clone(), beta.iter().copied().collect())?;
            return Ok(RieszFit {
                pair,
                objective: f,
                initial_objective,
                grad_norm,
                iterations,
                notices,
            });
        }
        if iterations >= cfg.max_iters || !grad_norm.is_finite() {
            return Err(Error::NonConvergence { iterations, grad_norm });
        }
        iterations += 1;

        let neg_g = -&g;
        let mut step = solve_spd(&h, &neg_g);
        if step.is_none() {
            if notices.is_empty() {
                notices.push("Hessian was not positive definite; Newton steps were damped".into());
            }
            let mut damping = 1e-10 * (1.0 + h.diagonal().amax());
            while step.is_none() && damping < 1e10 {
                step = solve_spd(&(&h + DMatrix::identity(p, p) * damping), &neg_g);
                damping *= 10.0;
            }
        }
        let Some(step) = step else {
            return Err(Error::NonConvergence { iterations, grad_norm });
        };

        let slope = g.dot(&step);
        let mut t = 1.0;
        let accepted = loop {
            let trial = &beta + &step * t;
            let ft = obj.value(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * t * slope {
                break Some((trial, ft));
            }
            // Near the optimum the decrease drops below the rounding of f;
            // fall back to requiring a smaller gradient.
            if ft.is_finite() && ft <= f + 1e-13 * (1.0 + f.abs()) {
                let (gt, _) = obj.gradient_hessian(&trial);
                if gt.norm() <= 0.5 * grad_norm {
                    break Some((trial, ft));
                }
            }
            t *= 0.5;
            if t < 1e-16 {
                break None;
            }
        };
        match accepted {
            Some((trial, ft)) => {
                beta = trial;
                f = ft;
            }
            // no decrease available at working precision
            None => return Err(Error::NonConvergence { iterations, grad_norm }),
        }
    }
}
