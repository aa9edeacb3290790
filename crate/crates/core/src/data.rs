//! Observations, CSV interchange and synthetic data-generating processes.
//!
//! A [`Dataset`] holds `n` units of `(x, d, y)` with covariates stored row-major.
//! The CSV schema is fixed: a header `y,d,x1,...,xk` followed by one row per unit.
//!
//! [`DgpSpec`] describes a simulation design with a logistic propensity and
//! arm-wise linear outcome regressions. Covariates are drawn uniformly on
//! `[-1, 1]^k`, so the true ATE is the difference of the outcome intercepts.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Vec<f64>,
    treatments: Vec<bool>,
    outcomes: Vec<f64>,
    k: usize,
}

impl Dataset {
    /// Build a dataset from row-major covariates (`n * k` values).
    pub fn new(
        covariates: Vec<f64>,
        k: usize,
        treatments: Vec<bool>,
        outcomes: Vec<f64>,
    ) -> Result<Self> {
        let n = treatments.len();
        if outcomes.len() != n {
            return Err(Error::InvalidData(format!(
                "{} treatments but {} outcomes",
                n,
                outcomes.len()
            )));
        }
        if covariates.len() != n * k {
            return Err(Error::InvalidData(format!(
                "expected {} covariate values for n={n}, k={k}, got {}",
                n * k,
                covariates.len()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidSize(format!("need at least 2 units, got {n}")));
        }
        if let Some(i) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite covariate at unit {}, column x{}",
                i / k.max(1) + 1,
                i % k.max(1) + 1
            )));
        }
        if let Some(i) = outcomes.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite outcome at unit {}", i + 1)));
        }
        let treated = treatments.iter().filter(|&&d| d).count();
        if treated == 0 {
            return Err(Error::DegenerateArm("no treated units".into()));
        }
        if treated == n {
            return Err(Error::DegenerateArm("no control units".into()));
        }
        Ok(Self { covariates, treatments, outcomes, k })
    }

    /// Convenience constructor from per-unit covariate rows and 0/1 treatments.
    pub fn from_rows(rows: &[Vec<f64>], treatments: &[u8], outcomes: &[f64]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch { expected: k, got: bad.len() });
        }
        let mut d = Vec::with_capacity(treatments.len());
        for (i, &t) in treatments.iter().enumerate() {
            match t {
                0 => d.push(false),
                1 => d.push(true),
                _ => return Err(Error::NonBinaryTreatment { row: i + 1 }),
            }
        }
        Self::new(rows.concat(), k, d, outcomes.to_vec())
    }

    pub fn n(&self) -> usize {
        self.treatments.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Covariate row of unit `i`.
    pub fn x(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.k..(i + 1) * self.k]
    }

    pub fn treated(&self, i: usize) -> bool {
        self.treatments[i]
    }

    /// Treatment as a 0/1 real.
    pub fn d(&self, i: usize) -> f64 {
        if self.treatments[i] {
            1.0
        } else {
            0.0
        }
    }

    pub fn y(&self, i: usize) -> f64 {
        self.outcomes[i]
    }

    pub fn treatments(&self) -> &[bool] {
        &self.treatments
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn n_treated(&self) -> usize {
        self.treatments.iter().filter(|&&d| d).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    /// Same units with the outcome column replaced.
    pub fn with_outcomes(&self, outcomes: Vec<f64>) -> Result<Self> {
        Self::new(self.covariates.clone(), self.k, self.treatments.clone(), outcomes)
    }

    /// Per-column mean and standard deviation (population form). Columns with
    /// zero spread report a standard deviation of 1.
    pub fn column_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n() as f64;
        let mut mean = vec![0.0; self.k];
        for i in 0..self.n() {
            for (m, v) in mean.iter_mut().zip(self.x(i)) {
                *m += v / n;
            }
        }
        let mut sd = vec![0.0; self.k];
        for i in 0..self.n() {
            for ((s, v), m) in sd.iter_mut().zip(self.x(i)).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut sd {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        (mean, sd)
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file)
}

/// Parse the `y,d,x1,...,xk` schema from any reader.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 2 || names[0] != "y" || names[1] != "d" {
        return Err(Error::MalformedHeader(format!(
            "expected `y,d,x1,...,xk`, got `{}`",
            names.join(",")
        )));
    }
    for (j, name) in names[2..].iter().enumerate() {
        if *name != format!("x{}", j + 1) {
            return Err(Error::MalformedHeader(format!(
                "column {} should be `x{}`, got `{name}`",
                j + 3,
                j + 1
            )));
        }
    }
    let k = names.len() - 2;

    let mut covariates = Vec::new();
    let mut treatments = Vec::new();
    let mut outcomes = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Csv { row, message: e.to_string() })?;
        if record.len() != k + 2 {
            return Err(Error::Csv {
                row,
                message: format!("expected {} fields, got {}", k + 2, record.len()),
            });
        }
        let cell = |j: usize| -> Result<f64> {
            let raw = &record[j];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    row,
                    column: names[j].to_string(),
                    value: raw.to_string(),
                })
        };
        outcomes.push(cell(0)?);
        let d = cell(1)?;
        if d == 1.0 {
            treatments.push(true);
        } else if d == 0.0 {
            treatments.push(false);
        } else {
            return Err(Error::NonBinaryTreatment { row });
        }
        for j in 0..k {
            covariates.push(cell(j + 2)?);
        }
    }
    Dataset::new(covariates, k, treatments, outcomes)
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(ds, std::io::BufWriter::new(file))
}

/// Values are written with the shortest representation that round-trips.
pub fn write_csv_to<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    let mut header = String::from("y,d");
    for j in 1..=ds.k() {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(out, "{header}")?;
    for i in 0..ds.n() {
        let mut line = format!("{},{}", ds.y(i), u8::from(ds.treated(i)));
        for v in ds.x(i) {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn linear(coefs: &[f64], x: &[f64]) -> f64 {
    coefs[0] + coefs[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// Simulation design. Coefficient vectors are `[intercept, slope_1, ..., slope_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: String,
    pub k: usize,
    pub propensity_coefs: Vec<f64>,
    pub outcome_coefs_treated: Vec<f64>,
    pub outcome_coefs_control: Vec<f64>,
    pub noise_sd: f64,
    /// Declared positivity margin: the propensity stays inside `(epsilon, 1 - epsilon)`.
    pub epsilon: f64,
}

impl DgpSpec {
    /// Logistic propensity and linear outcomes with a true ATE of 1.5.
    pub fn linear_logit(k: usize) -> Self {
        let slopes = |a: f64, b: f64| -> Vec<f64> {
            (0..k).map(|j| if j % 2 == 0 { a } else { b } / (1.0 + j as f64 / 2.0)).collect()
        };
        let mut propensity = vec![0.25];
        propensity.extend(slopes(0.5, -0.5));
        let mut treated = vec![2.5];
        treated.extend(slopes(1.0, -0.5));
        let mut control = vec![1.0];
        control.extend(slopes(0.5, 0.5));
        Self {
            name: "linear-logit".into(),
            k,
            propensity_coefs: propensity,
            outcome_coefs_treated: treated,
            outcome_coefs_control: control,
            noise_sd: 1.0,
            epsilon: 0.05,
        }
    }

    /// Look up a named preset.
    pub fn preset(name: &str, k: usize) -> Result<Self> {
        match name {
            "linear-logit" => Ok(Self::linear_logit(k)),
            "constant-propensity" => {
                let mut spec = Self::linear_logit(k);
                spec.name = name.into();
                spec.propensity_coefs = vec![0.0; k + 1];
                Ok(spec)
            }
            other => Err(Error::InvalidConfig(format!("unknown DGP preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (label, coefs) in [
            ("propensity_coefs", &self.propensity_coefs),
            ("outcome_coefs_treated", &self.outcome_coefs_treated),
            ("outcome_coefs_control", &self.outcome_coefs_control),
        ] {
            if coefs.len() != self.k + 1 {
                return Err(Error::InvalidConfig(format!(
                    "{label} has {} entries, expected k+1 = {}",
                    coefs.len(),
                    self.k + 1
                )));
            }
            if coefs.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidConfig(format!("{label} is not finite")));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig("noise_sd must be finite and >= 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidConfig("epsilon must lie in (0, 1/2)".into()));
        }
        let (lo, hi) = self.propensity_range();
        if lo <= self.epsilon || hi >= 1.0 - self.epsilon {
            return Err(Error::InvalidConfig(format!(
                "propensity range [{lo:.4}, {hi:.4}] violates positivity margin {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Exact min/max of the propensity over the covariate cube `[-1, 1]^k`.
    pub fn propensity_range(&self) -> (f64, f64) {
        let spread: f64 = self.propensity_coefs[1..].iter().map(|b| b.abs()).sum();
        let c = self.propensity_coefs[0];
        (sigmoid(c - spread), sigmoid(c + spread))
    }

    /// Covariates have mean zero, so only the intercepts contribute.
    pub fn true_ate(&self) -> f64 {
        self.outcome_coefs_treated[0] - self.outcome_coefs_control[0]
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        sigmoid(linear(&self.propensity_coefs, x))
    }

    pub fn mu(&self, d: bool, x: &[f64]) -> f64 {
        if d {
            linear(&self.outcome_coefs_treated, x)
        } else {
            linear(&self.outcome_coefs_control, x)
        }
    }

    /// True Riesz representer `d / e(x) - (1 - d) / (1 - e(x))`.
    pub fn riesz(&self, d: bool, x: &[f64]) -> f64 {
        let e = self.propensity(x);
        if d {
            1.0 / e
        } else {
            -1.0 / (1.0 - e)
        }
    }
}

/// Draw `n` units. Identical `(spec, n, seed)` gives a bit-identical dataset.
pub fn simulate(spec: &DgpSpec, n: usize, seed: u64) -> Result<(Dataset, f64)> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("need n >= 2, got {n}")));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sd)
        .map_err(|e| Error::InvalidConfig(format!("noise_sd: {e}")))?;
    let k = spec.k;
    let mut covariates = Vec::with_capacity(n * k);
    let mut treatments = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    // Re-draw treatments if an arm came out empty; only plausible for tiny n.
    for attempt in 0..1000 {
        covariates.clear();
        treatments.clear();
        outcomes.clear();
        for _ in 0..n {
            let start = covariates.len();
            for _ in 0..k {
                covariates.push(rng.random_range(-1.0..=1.0));
            }
            let x = &covariates[start..];
            let d = rng.random::<f64>() < spec.propensity(x);
            let y = spec.mu(d, x) + noise.sample(&mut rng);
            treatments.push(d);
            outcomes.push(y);
        }
        let treated = treatments.iter().filter(|&&d| d).count();
        if treated > 0 && treated < n {
            break;
        }
        if attempt == 999 {
            return Err(Error::DegenerateArm("simulation kept producing a single arm".into()));
        }
    }
    let ds = Dataset::new(covariates, k, treatments, outcomes)?;
    Ok((ds, spec.true_ate()))
}
