//! `neyman` command-line tool.
//!
//! Exit codes: 0 on success, 1 for invalid input or configuration, 2 when the
//! numerical machinery fails (nonconvergence, infeasible balance, degenerate
//! fluctuation, failed equivalence).

mod args;
mod estimate;
mod io;

use std::process::ExitCode;

use clap::Parser;
use neyman::balance::{balance_residual_eb, balance_residual_sbw, Provenance, UnitWeights};
use neyman::data::{load_csv, simulate, write_csv};
use neyman::matching::{verify_matching_riesz_equivalence, Equivalence};
use neyman::{Error, Result};
use serde::Serialize;

use args::{BalanceArgs, Cli, Command, EquivalenceArgs, EstimateArgs, FormArg, SimulateArgs};
use io::{emit, read_truth, read_weights, resolve_dgp, sidecar_path, to_json, write_weights, Truth};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

#[derive(Serialize)]
struct Failure<'a> {
    status: &'static str,
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_norm: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::BalanceCheck(a) => cmd_balance_check(&a),
        Command::EquivalenceCheck(a) => cmd_equivalence_check(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => report_failure(&e),
    }
}

fn report_failure(e: &Error) -> ExitCode {
    let numerical = e.is_numerical();
    let (iterations, grad_norm) = match e {
        Error::NonConvergence { iterations, grad_norm } => (Some(*iterations), Some(*grad_norm)),
        _ => (None, None),
    };
    let failure = Failure {
        status: "error",
        kind: if numerical { "numerical" } else { "validation" },
        message: e.to_string(),
        iterations,
        grad_norm: grad_norm.filter(|g| g.is_finite()),
    };
    eprintln!("error: {e}");
    println!("{}", to_json(&failure));
    ExitCode::from(if numerical { EXIT_NUMERICAL } else { EXIT_VALIDATION })
}

fn cmd_simulate(a: &SimulateArgs) -> Result<ExitCode> {
    let spec = resolve_dgp(&a.dgp, a.k)?;
    let (ds, true_ate) = simulate(&spec, a.n, a.seed)?;
    write_csv(&ds, &a.out)?;
    let truth = Truth { true_ate, n: a.n, seed: a.seed, dgp: spec };
    emit(Some(&sidecar_path(&a.out)), &to_json(&truth))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_estimate(a: &EstimateArgs) -> Result<ExitCode> {
    if a.reps.is_some() {
        let report = estimate::run_monte_carlo(a)?;
        emit(a.out.as_deref(), &to_json(&report))?;
        return Ok(ExitCode::SUCCESS);
    }
    let data = a.data.as_ref().expect("clap requires --data without --reps");
    let ds = load_csv(data)?;
    let truth = a.truth.as_deref().map(read_truth).transpose()?;
    let run = estimate::run_estimate(&ds, a, truth.as_ref())?;
    if let Some(path) = &a.weights_out {
        write_weights(path, &run.weights)?;
    }
    emit(a.out.as_deref(), &to_json(&run.report))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_balance_check(a: &BalanceArgs) -> Result<ExitCode> {
    let ds = load_csv(&a.data)?;
    let raw = read_weights(&a.weights)?;
    if raw.len() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), got: raw.len() });
    }
    let metric = neyman::basis::Metric::default();
    let report = match a.form {
        FormArg::Sbw => {
            // all-nonnegative files hold per-arm magnitudes; sign them by arm
            let signed = if raw.iter().all(|v| *v >= 0.0) {
                raw.iter()
                    .enumerate()
                    .map(|(i, v)| if ds.treated(i) { *v } else { -v })
                    .collect()
            } else {
                raw
            };
            let basis = estimate::build_basis(a.basis, true, &ds, a.standardize, metric)?;
            balance_residual_sbw(&ds, &UnitWeights::new(signed, Provenance::External), &basis)?
        }
        FormArg::Eb => {
            let w = UnitWeights::new(raw, Provenance::External).magnitudes();
            let basis = estimate::build_basis(a.basis, false, &ds, a.standardize, metric)?;
            balance_residual_eb(&ds, &w, &basis)?
        }
    };
    emit(a.out.as_deref(), &to_json(&report))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_equivalence_check(a: &EquivalenceArgs) -> Result<ExitCode> {
    let ds = load_csv(&a.data)?;
    let result = verify_matching_riesz_equivalence(&ds, a.metric.into())?;
    emit(a.out.as_deref(), &to_json(&result))?;
    Ok(match result {
        Equivalence::Failed { .. } => ExitCode::from(EXIT_NUMERICAL),
        _ => ExitCode::SUCCESS,
    })
}
