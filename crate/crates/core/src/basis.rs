//! Feature maps.
//!
//! Two families are used. Covariate-only maps `φ(x) ∈ ℝ^q` feed the logistic
//! (KL) representer. Arm-indexed maps `Φ(d, x) ∈ ℝ^p` feed the linear
//! (squared-loss) representer. Every arm-indexed map here has a block layout:
//! `Φ(1, ·)` and `Φ(0, ·)` are supported on disjoint coordinates. For the
//! covariate families this is the lift `Φ(d, x) = (d·φ(x), (1-d)·φ(x))`.
//!
//! The Voronoi basis realizes 1-NN matching: coordinate `j` of `Φ(d, x)` is 1
//! exactly when reference unit `j` belongs to arm `d` and is the nearest arm-`d`
//! reference point to `x`.

use std::sync::Arc;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Distance used for nearest-neighbor lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    Euclidean,
    /// Euclidean after z-scoring each column with the reference moments.
    #[default]
    Standardized,
}

/// Per-column affine rescaling `(x - mean) / sd`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &Dataset) -> Self {
        let (mean, sd) = ds.column_moments();
        Self { mean, sd }
    }

    pub fn identity(k: usize) -> Self {
        Self { mean: vec![0.0; k], sd: vec![1.0; k] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Reference points and per-arm membership for the Voronoi partition.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiCells {
    points: Vec<Vec<f64>>,
    arms: Vec<bool>,
    scale: Standardizer,
}

impl VoronoiCells {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the reference unit of arm `d` nearest to `x`; ties go to the
    /// lowest index.
    pub fn nearest(&self, d: bool, x: &[f64]) -> usize {
        let z = self.scale.apply(x);
        let mut best = (f64::INFINITY, usize::MAX);
        for (j, (p, &arm)) in self.points.iter().zip(&self.arms).enumerate() {
            if arm != d {
                continue;
            }
            let dist = squared_distance(p, &z);
            if dist < best.0 {
                best = (dist, j);
            }
        }
        best.1
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind {
    /// Constant 1.
    Intercept,
    /// `x` as is.
    Raw,
    /// `(1, x)`.
    RawIntercept,
    /// All monomials of total degree `<= degree`, graded order, starting with 1.
    Polynomial { degree: usize },
    /// `Φ(d, x) = (d, 1 - d)`.
    OneHotArm,
    Voronoi(Arc<VoronoiCells>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    kind: BasisKind,
    arm_indexed: bool,
    k: usize,
    standardizer: Option<Standardizer>,
    exponents: Vec<Vec<usize>>,
}

impl BasisSpec {
    pub fn new(kind: BasisKind, arm_indexed: bool, k: usize) -> Result<Self> {
        match &kind {
            BasisKind::OneHotArm | BasisKind::Voronoi(_) if !arm_indexed => {
                return Err(Error::InvalidConfig(
                    "one-hot-arm and Voronoi bases are arm-indexed by construction".into(),
                ));
            }
            BasisKind::Raw if k == 0 => {
                return Err(Error::InvalidConfig("raw basis needs at least one covariate".into()));
            }
            BasisKind::Voronoi(cells) if cells.scale.mean.len() != k => {
                return Err(Error::DimensionMismatch { expected: cells.scale.mean.len(), got: k });
            }
            _ => {}
        }
        let exponents = match kind {
            BasisKind::Polynomial { degree } => monomials(k, degree),
            _ => Vec::new(),
        };
        Ok(Self { kind, arm_indexed, k, standardizer: None, exponents })
    }

    /// Covariate-only intercept, `φ(x) = 1`.
    pub fn intercept(k: usize) -> Self {
        Self::new(BasisKind::Intercept, false, k).expect("intercept basis is always valid")
    }

    pub fn one_hot_arm(k: usize) -> Self {
        Self::new(BasisKind::OneHotArm, true, k).expect("one-hot-arm basis is always valid")
    }

    /// Z-score covariates with the moments of `ds` before evaluating. Has no
    /// effect on the one-hot and Voronoi kinds.
    pub fn standardized(mut self, ds: &Dataset) -> Self {
        self.standardizer = Some(Standardizer::fit(ds));
        self
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn arm_indexed(&self) -> bool {
        self.arm_indexed
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Same feature family with arm-indexing switched.
    pub fn with_arm_indexed(&self, arm_indexed: bool) -> Result<Self> {
        let mut out = Self::new(self.kind.clone(), arm_indexed, self.k)?;
        out.standardizer = self.standardizer.clone();
        Ok(out)
    }

    fn block_dim(&self) -> usize {
        match &self.kind {
            BasisKind::Intercept => 1,
            BasisKind::Raw => self.k,
            BasisKind::RawIntercept => self.k + 1,
            BasisKind::Polynomial { .. } => self.exponents.len(),
            BasisKind::OneHotArm => 1,
            BasisKind::Voronoi(cells) => cells.len(),
        }
    }

    /// Output dimension `p`.
    pub fn dim(&self) -> usize {
        match &self.kind {
            BasisKind::Voronoi(cells) => cells.len(),
            _ if self.arm_indexed => 2 * self.block_dim(),
            _ => self.block_dim(),
        }
    }

    pub fn eval(&self, d: bool, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, got: x.len() });
        }
        let mut out = vec![0.0; self.dim()];
        self.eval_into(d, x, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into a zero-initialized buffer of length `dim()`.
    pub(crate) fn eval_into(&self, d: bool, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        match &self.kind {
            BasisKind::OneHotArm => {
                out[if d { 0 } else { 1 }] = 1.0;
                return;
            }
            BasisKind::Voronoi(cells) => {
                out[cells.nearest(d, x)] = 1.0;
                return;
            }
            _ => {}
        }
        let q = self.block_dim();
        let block = if self.arm_indexed && !d { &mut out[q..2 * q] } else { &mut out[..q] };
        let scaled;
        let x = match &self.standardizer {
            Some(s) => {
                scaled = s.apply(x);
                &scaled[..]
            }
            None => x,
        };
        match &self.kind {
            BasisKind::Intercept => block[0] = 1.0,
            BasisKind::Raw => block.copy_from_slice(x),
            BasisKind::RawIntercept => {
                block[0] = 1.0;
                block[1..].copy_from_slice(x);
            }
            BasisKind::Polynomial { .. } => {
                for (slot, exps) in block.iter_mut().zip(&self.exponents) {
                    *slot = exps.iter().map(|&j| x[j]).product();
                }
            }
            BasisKind::OneHotArm | BasisKind::Voronoi(_) => unreachable!(),
        }
    }

    /// Row-major `n × p` matrix of `Φ(d_i, x_i)` for a fixed arm, or for each
    /// unit's own arm when `arm` is `None`.
    pub fn design(&self, ds: &Dataset, arm: Option<bool>) -> Result<Vec<Vec<f64>>> {
        if ds.k() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, got: ds.k() });
        }
        Ok((0..ds.n())
            .map(|i| {
                let mut row = vec![0.0; self.dim()];
                self.eval_into(arm.unwrap_or(ds.treated(i)), ds.x(i), &mut row);
                row
            })
            .collect())
    }
}

/// Exponent multisets (as index lists) of all monomials in `k` variables with
/// total degree at most `degree`, in graded order.
fn monomials(k: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..degree {
        let mut next = Vec::new();
        for m in &frontier {
            let start = m.last().copied().unwrap_or(0);
            for j in start..k {
                let mut grown = m.clone();
                grown.push(j);
                next.push(grown);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Arm-indexed partition basis with one indicator per unit of `reference`.
pub fn build_voronoi_basis(reference: &Dataset, metric: Metric) -> Result<BasisSpec> {
    if reference.n_treated() == 0 || reference.n_control() == 0 {
        return Err(Error::DegenerateArm("Voronoi reference needs both arms".into()));
    }
    let scale = match metric {
        Metric::Euclidean => Standardizer::identity(reference.k()),
        Metric::Standardized => Standardizer::fit(reference),
    };
    let points = (0..reference.n()).map(|i| scale.apply(reference.x(i))).collect();
    let cells = VoronoiCells { points, arms: reference.treatments().to_vec(), scale };
    BasisSpec::new(BasisKind::Voronoi(Arc::new(cells)), true, reference.k())
}
