use neyman::balance::{balance_residual_eb, balance_residual_sbw, BalanceReport};
use neyman::basis::{build_voronoi_basis, BasisKind, BasisSpec, Metric};
use neyman::data::{simulate, Dataset};
use neyman::estimators::{
    error_decomposition, estimate_ipw, estimate_onestep, estimate_plugin, tmle_report,
    ErrorDecomposition, EstimateReport,
};
use neyman::matching::{estimate_matching, match_units, matching_weights};
use neyman::outcome::{fit_outcome, score_residual, tmle_update, OutcomeModel};
use neyman::riesz::{fit_riesz, ConvexSpec, FitConfig, RieszFit, RieszWeightPair};
use neyman::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{BasisArg, EstimateArgs, EstimatorArg, RieszArg};
use crate::io::{resolve_dgp, Truth};

#[derive(Debug, Serialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
    pub initial_objective: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
}

impl From<&RieszFit> for FitSummary {
    fn from(f: &RieszFit) -> Self {
        Self {
            iterations: f.iterations,
            grad_norm: f.grad_norm,
            objective: f.objective,
            initial_objective: f.initial_objective,
            notices: f.notices.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PipelineStep {
    pub step: usize,
    pub name: &'static str,
    pub detail: String,
}

/// JSON written by `estimate`: the estimate plus how it was produced.
#[derive(Debug, Serialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub estimate: EstimateReport,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub riesz: Option<RieszArg>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub riesz_basis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome_basis: Option<String>,
    /// Ridge coefficient of the fitted Riesz model, when one was fitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub residual_weights: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub riesz_fit: Option<FitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_ate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covers_truth: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<ErrorDecomposition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_residual: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub pipeline: Vec<PipelineStep>,
}

/// Result of one estimate run, with the unit weights for `--weights-out`.
pub struct Run {
    pub report: RunReport,
    pub weights: Vec<f64>,
}

fn covariate_kind(arg: BasisArg) -> Option<BasisKind> {
    match arg {
        BasisArg::Raw => Some(BasisKind::Raw),
        BasisArg::RawIntercept => Some(BasisKind::RawIntercept),
        BasisArg::Intercept => Some(BasisKind::Intercept),
        BasisArg::Poly(degree) => Some(BasisKind::Polynomial { degree }),
        BasisArg::OneHotArm | BasisArg::Voronoi => None,
    }
}

pub fn build_basis(
    arg: BasisArg,
    arm_indexed: bool,
    ds: &Dataset,
    standardize: bool,
    metric: Metric,
) -> Result<BasisSpec> {
    match arg {
        BasisArg::OneHotArm | BasisArg::Voronoi if !arm_indexed => Err(Error::InvalidConfig(format!(
            "basis `{arg}` depends on the arm and cannot feed a covariate-only model"
        ))),
        BasisArg::OneHotArm => Ok(BasisSpec::one_hot_arm(ds.k())),
        BasisArg::Voronoi => build_voronoi_basis(ds, metric),
        _ => {
            let kind = covariate_kind(arg).expect("covariate family");
            let basis = BasisSpec::new(kind, arm_indexed, ds.k())?;
            Ok(if standardize { basis.standardized(ds) } else { basis })
        }
    }
}

/// Squared outcome residuals rescaled to mean one.
fn residual_weights(ds: &Dataset, mu: &OutcomeModel) -> Result<Vec<f64>> {
    let sq: Vec<f64> = mu.residuals(ds).iter().map(|r| r * r).collect();
    let mean = sq.iter().sum::<f64>() / sq.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::InvalidData(
            "outcome regression interpolates the data; residual weights are all zero".into(),
        ));
    }
    Ok(sq.into_iter().map(|v| v / mean).collect())
}

struct Representer {
    pair: RieszWeightPair,
    basis: Option<BasisSpec>,
    fit: Option<RieszFit>,
}

fn fit_representer(
    method: RieszArg,
    args: &EstimateArgs,
    ds: &Dataset,
    obs_weights: Option<Vec<f64>>,
    truth: Option<&Truth>,
) -> Result<Representer> {
    let metric = args.metric.into();
    let cfg = FitConfig { lambda: args.lambda, obs_weights, ..FitConfig::default() };
    match method {
        RieszArg::LsLinear => {
            let basis = build_basis(args.basis, true, ds, args.standardize, metric)?;
            let fit = fit_riesz(ConvexSpec::SQUARED, &basis, ds, &cfg)?;
            Ok(Representer { pair: fit.pair.clone(), basis: Some(basis), fit: Some(fit) })
        }
        RieszArg::KlLogistic => {
            let basis = build_basis(args.basis, false, ds, args.standardize, metric)?;
            let fit = fit_riesz(ConvexSpec::KL, &basis, ds, &cfg)?;
            Ok(Representer { pair: fit.pair.clone(), basis: Some(basis), fit: Some(fit) })
        }
        RieszArg::Matching => {
            if args.matches != 1 {
                return Err(Error::InvalidConfig(
                    "the matching representer is the 1-NN one; use --estimator match for M > 1".into(),
                ));
            }
            let basis = build_voronoi_basis(ds, metric)?;
            let cfg = FitConfig { lambda: 0.0, ..cfg };
            let fit = fit_riesz(ConvexSpec::SQUARED, &basis, ds, &cfg)?;
            Ok(Representer { pair: fit.pair.clone(), basis: Some(basis), fit: Some(fit) })
        }
        RieszArg::Oracle => {
            let truth = truth.ok_or_else(|| {
                Error::OracleUnavailable("--riesz oracle needs --truth".into())
            })?;
            if truth.dgp.k != ds.k() {
                return Err(Error::DimensionMismatch { expected: truth.dgp.k, got: ds.k() });
            }
            Ok(Representer { pair: RieszWeightPair::oracle(truth.dgp.clone()), basis: None, fit: None })
        }
    }
}

/// Balance of the representer's unit weights in the form that matches its loss.
fn representer_balance(
    method: RieszArg,
    rep: &Representer,
    ds: &Dataset,
    outcome_basis: &BasisSpec,
) -> Result<BalanceReport> {
    match (method, &rep.basis) {
        (RieszArg::KlLogistic, Some(b)) => balance_residual_eb(ds, &rep.pair.own_arm_weights(ds), b),
        (_, Some(b)) => balance_residual_sbw(ds, &rep.pair.unit_weights(ds), b),
        (_, None) => balance_residual_sbw(ds, &rep.pair.unit_weights(ds), outcome_basis),
    }
}

fn base_report(estimate: EstimateReport, ds: &Dataset) -> RunReport {
    RunReport {
        estimate,
        n: ds.n(),
        riesz: None,
        riesz_basis: None,
        outcome_basis: None,
        lambda: None,
        residual_weights: false,
        riesz_fit: None,
        true_ate: None,
        covers_truth: None,
        decomposition: None,
        score_residual: None,
        pipeline: Vec::new(),
    }
}

fn attach_truth(run: &mut RunReport, truth: Option<&Truth>) {
    if let Some(t) = truth {
        run.true_ate = Some(t.true_ate);
        run.covers_truth = Some(run.estimate.covers(t.true_ate));
    }
}

pub fn run_estimate(ds: &Dataset, args: &EstimateArgs, truth: Option<&Truth>) -> Result<Run> {
    if !(args.lambda >= 0.0 && args.lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("--lambda must be >= 0, got {}", args.lambda)));
    }
    if args.pipeline.is_some() {
        return run_recommended(ds, args, truth);
    }
    let estimator = args.estimator.unwrap_or(EstimatorArg::Tmle);
    let metric: Metric = args.metric.into();

    if estimator == EstimatorArg::Match {
        let estimate = estimate_matching(ds, args.matches, metric)?;
        let assign = match_units(ds, args.matches, metric)?;
        let weights = matching_weights(&assign, ds)?;
        let mut report = base_report(estimate, ds);
        report.estimate.balance =
            Some(balance_residual_sbw(ds, &weights, &build_voronoi_basis(ds, metric)?)?);
        attach_truth(&mut report, truth);
        return Ok(Run { report, weights: weights.w });
    }

    let method = args.riesz.unwrap_or(RieszArg::KlLogistic);
    let outcome_basis = build_basis(args.outcome_basis, true, ds, args.standardize, metric)?;
    let needs_mu = estimator != EstimatorArg::Ipw || args.residual_weights;
    let mu = if needs_mu { Some(fit_outcome(ds, &outcome_basis)?) } else { None };
    let obs_weights = match (&mu, args.residual_weights) {
        (Some(m), true) => Some(residual_weights(ds, m)?),
        _ => None,
    };

    let needs_alpha = estimator != EstimatorArg::Plugin;
    let rep = if needs_alpha { Some(fit_representer(method, args, ds, obs_weights, truth)?) } else { None };

    let updated = match (estimator, &mu, &rep) {
        (EstimatorArg::Tmle, Some(m), Some(r)) => Some(tmle_update(m, ds, &r.pair)?),
        _ => None,
    };
    let score = match (&updated, &rep) {
        (Some(u), Some(r)) => Some(score_residual(u, ds, &r.pair)),
        _ => None,
    };
    let estimate = match (estimator, &mu, &rep) {
        (EstimatorArg::Ipw, _, Some(r)) => estimate_ipw(ds, &r.pair),
        (EstimatorArg::Plugin, Some(m), _) => estimate_plugin(ds, m),
        (EstimatorArg::Onestep, Some(m), Some(r)) => estimate_onestep(ds, m, &r.pair),
        (EstimatorArg::Tmle, _, Some(r)) => tmle_report(ds, updated.as_ref().expect("fluctuated"), &r.pair),
        _ => unreachable!("nuisances are fitted for every estimator that needs them"),
    };

    let mut report = base_report(estimate, ds);
    report.score_residual = score;
    report.residual_weights = args.residual_weights;
    if let Some(m) = &mu {
        report.outcome_basis = Some(args.outcome_basis.to_string());
        report.estimate.notes.extend(m.notices().iter().cloned());
    }
    let mut weights = Vec::new();
    if let Some(r) = &rep {
        report.riesz = Some(method);
        report.riesz_basis = r.basis.as_ref().map(|_| match method {
            RieszArg::Matching => BasisArg::Voronoi.to_string(),
            _ => args.basis.to_string(),
        });
        report.riesz_fit = r.fit.as_ref().map(FitSummary::from);
        report.lambda = match method {
            RieszArg::LsLinear | RieszArg::KlLogistic => Some(args.lambda),
            RieszArg::Matching => Some(0.0),
            RieszArg::Oracle => None,
        };
        report.estimate.balance = Some(representer_balance(method, r, ds, &outcome_basis)?);
        weights = r.pair.unit_weights(ds).w;
    }
    attach_truth(&mut report, truth);
    // TMLE's error is measured against the fluctuated regression
    let final_mu = updated.as_ref().or(mu.as_ref());
    if let (Some(t), Some(m), Some(r)) = (truth, final_mu, &rep) {
        let dec = error_decomposition(ds, m, &r.pair, report.estimate.tau_hat, Some(&t.dgp))?;
        report.estimate.eq1_term = Some(dec.eq1);
        report.decomposition = Some(dec);
    }
    Ok(Run { report, weights })
}

/// Outcome fit, logistic Riesz model, residual-weighted tailored loss, TMLE.
fn run_recommended(ds: &Dataset, args: &EstimateArgs, truth: Option<&Truth>) -> Result<Run> {
    let metric: Metric = args.metric.into();
    let mut steps = Vec::new();

    let outcome_basis = build_basis(args.outcome_basis, true, ds, args.standardize, metric)?;
    let mu = fit_outcome(ds, &outcome_basis)?;
    steps.push(PipelineStep {
        step: 1,
        name: "outcome regression",
        detail: format!("least squares on lifted `{}` basis, {} coefficients", args.outcome_basis, outcome_basis.dim()),
    });

    let riesz_basis = build_basis(args.basis, false, ds, args.standardize, metric)?;
    let cfg = FitConfig { lambda: args.lambda, ..FitConfig::default() };
    let plain = fit_riesz(ConvexSpec::KL, &riesz_basis, ds, &cfg)?;
    steps.push(PipelineStep {
        step: 2,
        name: "logistic Riesz model",
        detail: format!(
            "tailored loss on `{}` basis, {} Newton iterations",
            args.basis, plain.iterations
        ),
    });

    let weights = residual_weights(ds, &mu)?;
    let cfg = FitConfig {
        obs_weights: Some(weights),
        init: Some(plain.pair.beta().expect("logistic fit").iter().copied().collect()),
        ..cfg
    };
    let fit = fit_riesz(ConvexSpec::KL, &riesz_basis, ds, &cfg)?;
    steps.push(PipelineStep {
        step: 3,
        name: "residual-weighted tailored loss",
        detail: format!(
            "squared-residual weights (mean one), warm start from step 2, {} Newton iterations",
            fit.iterations
        ),
    });

    let updated = tmle_update(&mu, ds, &fit.pair)?;
    let score = score_residual(&updated, ds, &fit.pair);
    let eps = updated.fluctuation_eps().expect("fluctuated");
    steps.push(PipelineStep {
        step: 4,
        name: "TMLE",
        detail: format!("fluctuation epsilon {eps}, score residual {score:e}"),
    });

    let mut report = base_report(tmle_report(ds, &updated, &fit.pair), ds);
    report.riesz = Some(RieszArg::KlLogistic);
    report.lambda = Some(args.lambda);
    report.riesz_basis = Some(args.basis.to_string());
    report.outcome_basis = Some(args.outcome_basis.to_string());
    report.residual_weights = true;
    report.riesz_fit = Some(FitSummary::from(&fit));
    report.score_residual = Some(score);
    report.pipeline = steps;
    report.estimate.notes.extend(mu.notices().iter().cloned());
    report.estimate.balance =
        Some(balance_residual_eb(ds, &fit.pair.own_arm_weights(ds), &riesz_basis)?);
    attach_truth(&mut report, truth);
    if let Some(t) = truth {
        let dec = error_decomposition(ds, &updated, &fit.pair, report.estimate.tau_hat, Some(&t.dgp))?;
        report.estimate.eq1_term = Some(dec.eq1);
        report.decomposition = Some(dec);
    }
    let weights = fit.pair.unit_weights(ds).w;
    Ok(Run { report, weights })
}

#[derive(Debug, Serialize)]
pub struct MonteCarloReport {
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    pub dgp: String,
    pub true_ate: f64,
    pub completed: usize,
    pub failures: Vec<String>,
    pub mean_estimate: f64,
    pub bias: f64,
    pub empirical_sd: f64,
    pub mc_std_error: f64,
    pub mean_std_error: f64,
    pub coverage: f64,
    pub estimates: Vec<f64>,
}

/// Replication `r` uses seed `seed + r`; results are collected in replication order.
pub fn run_monte_carlo(args: &EstimateArgs) -> Result<MonteCarloReport> {
    let reps = args.reps.unwrap_or(0);
    let n = args.n.ok_or_else(|| Error::InvalidConfig("--reps needs --n".into()))?;
    let dgp_name = args.dgp.as_deref().ok_or_else(|| Error::InvalidConfig("--reps needs --dgp".into()))?;
    if reps == 0 || args.jobs == 0 {
        return Err(Error::InvalidConfig("--reps and --jobs must be positive".into()));
    }
    let spec = resolve_dgp(dgp_name, args.k)?;
    // validate the design and size once before fanning out
    simulate(&spec, n, args.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<(f64, f64, bool)>> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let seed = args.seed.wrapping_add(r as u64);
                let (ds, true_ate) = simulate(&spec, n, seed)?;
                let truth = Truth { true_ate, n, seed, dgp: spec.clone() };
                let run = run_estimate(&ds, args, Some(&truth))?;
                let e = &run.report.estimate;
                Ok((e.tau_hat, e.std_error, e.covers(true_ate)))
            })
            .collect()
    });

    let true_ate = spec.true_ate();
    let mut estimates = Vec::new();
    let mut ses = Vec::new();
    let mut covered = 0;
    let mut failures = Vec::new();
    let mut first_error = None;
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((tau, se, cover)) => {
                estimates.push(tau);
                ses.push(se);
                covered += usize::from(cover);
            }
            Err(e) => {
                failures.push(format!("replication {r}: {e}"));
                first_error.get_or_insert(e);
            }
        }
    }
    if let (true, Some(e)) = (estimates.is_empty(), first_error) {
        return Err(e);
    }
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let sd = if estimates.len() > 1 {
        (estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloReport {
        reps,
        n,
        seed: args.seed,
        dgp: spec.name.clone(),
        true_ate,
        completed: estimates.len(),
        failures,
        mean_estimate: mean,
        bias: mean - true_ate,
        empirical_sd: sd,
        mc_std_error: sd / m.sqrt(),
        mean_std_error: ses.iter().sum::<f64>() / m,
        coverage: covered as f64 / m,
        estimates,
    })
}
