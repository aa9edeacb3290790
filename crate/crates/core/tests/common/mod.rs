//! Random instance generators and reference solvers shared by the integration tests.
#![allow(dead_code)]

use neyman::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform covariates on `[-1, 1]^k`, treatment from a logistic propensity
/// with random slopes, outcomes linear plus noise. Both arms get at least
/// `min_arm` units.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, k: usize, min_arm: usize) -> Dataset {
    loop {
        let slopes: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let d: Vec<u8> = rows
            .iter()
            .map(|x| {
                let eta: f64 = slopes.iter().zip(x).map(|(b, v)| b * v).sum();
                u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
            })
            .collect();
        let treated = d.iter().filter(|&&v| v == 1).count();
        if treated < min_arm || n - treated < min_arm {
            continue;
        }
        let y: Vec<f64> = rows
            .iter()
            .zip(&d)
            .map(|(x, &di)| {
                let lin: f64 = x.iter().enumerate().map(|(j, v)| v * (1.0 + j as f64)).sum();
                2.0 * di as f64 + lin + rng.random_range(-1.0..1.0)
            })
            .collect();
        return Dataset::from_rows(&rows, &d, &y).unwrap();
    }
}

/// Minimum-norm solution of `A x = c` by cyclic row projections started at
/// zero (Kaczmarz). Iterates stay in the row space of `A`, so the limit is the
/// projection of the origin onto the affine set.
pub fn kaczmarz_min_norm(a: &[Vec<f64>], c: &[f64], tol: f64, max_sweeps: usize) -> Vec<f64> {
    let n = a[0].len();
    let mut x = vec![0.0; n];
    let norms: Vec<f64> = a.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    for _ in 0..max_sweeps {
        for (r, row) in a.iter().enumerate() {
            if norms[r] == 0.0 {
                continue;
            }
            let resid = c[r] - row.iter().zip(&x).map(|(u, v)| u * v).sum::<f64>();
            let step = resid / norms[r];
            for (xi, ai) in x.iter_mut().zip(row) {
                *xi += step * ai;
            }
        }
        let worst = a
            .iter()
            .zip(c)
            .map(|(row, ci)| (row.iter().zip(&x).map(|(u, v)| u * v).sum::<f64>() - ci).abs())
            .fold(0.0, f64::max);
        if worst < tol {
            break;
        }
    }
    x
}

/// Stable-balancing constraint matrix (p rows, n columns) and target.
pub fn sbw_system(ds: &Dataset, basis: &BasisSpec) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = basis.dim();
    let mut a = vec![vec![0.0; ds.n()]; p];
    let mut c = vec![0.0; p];
    for i in 0..ds.n() {
        let own = basis.eval(ds.treated(i), ds.x(i)).unwrap();
        let t = basis.eval(true, ds.x(i)).unwrap();
        let u = basis.eval(false, ds.x(i)).unwrap();
        for r in 0..p {
            a[r][i] = own[r];
            c[r] += t[r] - u[r];
        }
    }
    (a, c)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}
