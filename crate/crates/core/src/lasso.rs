//! ℓ1-penalized least squares by cyclic coordinate descent, with a
//! warm-started λ path and k-fold cross-validation.
//!
//! The objective at a given λ is
//!
//! ```text
//! ‖y − Xβ‖² / (2N) + λ‖β‖₁
//! ```
//!
//! with `X` standardized and `y` centered, so no intercept is penalized.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::standardize_matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    pub max_iter: usize,
    pub cv_seed: u64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            n_lambdas: 100,
            lambda_min_ratio: 1e-3,
            folds: 10,
            tol: 1e-7,
            max_iter: 10_000,
            cv_seed: 0,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_lambdas < 2 {
            return Err(Error::invalid("n_lambdas must be at least 2"));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::invalid("lambda_min_ratio must lie in (0, 1)"));
        }
        if self.folds < 2 || self.folds > n {
            return Err(Error::invalid(format!(
                "folds must lie in [2, {n}], got {}",
                self.folds
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub mean_error: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoFit {
    pub lambda: f64,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub support: Vec<usize>,
    /// Sorted by descending λ; empty for plain path fits.
    pub cv_curve: Vec<CvPoint>,
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

pub fn objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &[f64], lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let b = DVector::from_column_slice(beta);
    let r = y - x * b;
    r.norm_squared() / (2.0 * n) + lambda * beta.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest KKT violation at `lambda` for coefficients `beta`.
pub fn kkt_residual(x: &DMatrix<f64>, y: &DVector<f64>, beta: &[f64], lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let r = y - x * DVector::from_column_slice(beta);
    let grad = x.transpose() * r / n;
    grad.iter()
        .zip(beta)
        .map(|(&g, &b)| {
            if b == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * b.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = x.nrows() as f64;
    (x.transpose() * y)
        .iter()
        .map(|v| v.abs() / n)
        .fold(0.0, f64::max)
}

pub fn lambda_grid(lmax: f64, config: &LassoConfig) -> Vec<f64> {
    let k = config.n_lambdas;
    let lmin = lmax * config.lambda_min_ratio;
    (0..k)
        .map(|i| {
            if i == 0 {
                lmax
            } else {
                let t = i as f64 / (k - 1) as f64;
                (lmax.ln() + t * (lmin.ln() - lmax.ln())).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Converged,
    /// The support reached the number of rows without converging.
    Saturated,
}

/// Coordinate sweeps on the active set before trying a direct solve.
const DIRECT_AFTER: usize = 20;

/// Working state for coordinate descent, kept across λ values for warm starts.
struct Solver<'a> {
    x: &'a DMatrix<f64>,
    col_sq: Vec<f64>,
    y: &'a DVector<f64>,
    beta: Vec<f64>,
    resid: Vec<f64>,
    n: f64,
}

impl<'a> Solver<'a> {
    fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Self {
        let n = x.nrows() as f64;
        let col_sq = x.column_iter().map(|c| c.norm_squared() / n).collect();
        Solver {
            x,
            y,
            col_sq,
            beta: vec![0.0; x.ncols()],
            resid: y.iter().copied().collect(),
            n,
        }
    }

    fn objective(&self, lambda: f64) -> f64 {
        self.resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * self.n)
            + lambda * self.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// One coordinate update; returns the absolute coefficient change.
    fn update(&mut self, j: usize, lambda: f64) -> f64 {
        let d = self.col_sq[j];
        if d == 0.0 {
            return 0.0;
        }
        let col = self.x.column(j);
        let old = self.beta[j];
        let grad: f64 = col.iter().zip(&self.resid).map(|(a, r)| a * r).sum::<f64>() / self.n;
        let new = soft_threshold(grad + d * old, lambda) / d;
        let delta = new - old;
        if delta != 0.0 {
            for (r, a) in self.resid.iter_mut().zip(col.iter()) {
                *r -= a * delta;
            }
            self.beta[j] = new;
        }
        delta.abs()
    }

    /// Cycles over `coords` until the largest change drops below `tol`, for at
    /// most `max_sweeps` passes. Returns whether it converged. `budget`
    /// counts coordinate updates.
    fn sweep_until(
        &mut self,
        coords: &[usize],
        lambda: f64,
        tol: f64,
        budget: &mut usize,
        max_sweeps: usize,
    ) -> Result<bool> {
        let mut prev = self.objective(lambda);
        for _ in 0..max_sweeps {
            if *budget < coords.len() {
                return Err(non_convergence(0, lambda));
            }
            *budget -= coords.len();
            let mut max_change: f64 = 0.0;
            for &j in coords {
                max_change = max_change.max(self.update(j, lambda));
            }
            let obj = self.objective(lambda);
            debug_assert!(
                obj <= prev + 1e-12 * prev.abs().max(1.0),
                "coordinate descent increased the objective: {prev} -> {obj}"
            );
            prev = obj;
            if max_change < tol {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Moves toward the stationary point of the objective restricted to
    /// `active` with the current signs held fixed. A full step is taken when
    /// every sign survives; otherwise the step stops where the first
    /// coefficient reaches zero and that coefficient leaves. The objective is
    /// a convex quadratic along the segment, minimized at its far end, so
    /// either step lowers it.
    fn direct_step(&mut self, active: &[usize], lambda: f64) -> bool {
        if active.is_empty() || active.len() >= self.x.nrows() {
            return false;
        }
        let xa = self.x.select_columns(active);
        let Some(chol) = (xa.transpose() * &xa).cholesky() else {
            return false;
        };
        let signs =
            DVector::from_iterator(active.len(), active.iter().map(|&j| self.beta[j].signum()));
        let target = chol.solve(&(xa.transpose() * self.y - &signs * (self.n * lambda)));
        if target.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let current = DVector::from_iterator(active.len(), active.iter().map(|&j| self.beta[j]));
        let mut step = 1.0;
        let mut blocking = None;
        for i in 0..active.len() {
            if target[i] * signs[i] <= 0.0 {
                let t = current[i] / (current[i] - target[i]);
                if t < step {
                    step = t;
                    blocking = Some(i);
                }
            }
        }
        let before = self.objective(lambda);
        let saved = (self.beta.clone(), self.resid.clone());
        let next = &current + (&target - &current) * step;
        for (i, &j) in active.iter().enumerate() {
            self.beta[j] = if Some(i) == blocking { 0.0 } else { next[i] };
        }
        let b = DVector::from_iterator(active.len(), active.iter().map(|&j| self.beta[j]));
        let fitted = &xa * b;
        for (r, (yi, fi)) in self.resid.iter_mut().zip(self.y.iter().zip(fitted.iter())) {
            *r = yi - fi;
        }
        if self.objective(lambda) > before {
            (self.beta, self.resid) = saved;
            return false;
        }
        true
    }

    /// Solves at `lambda` using an active-set strategy: iterate on the
    /// nonzero coordinates, then confirm with a full sweep.
    /// `max_iter` is measured in full-sweep equivalents.
    fn solve(&mut self, lambda: f64, config: &LassoConfig) -> Result<Outcome> {
        let all: Vec<usize> = (0..self.beta.len()).collect();
        let mut budget = config.max_iter.saturating_mul(all.len());
        loop {
            let active: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&j| self.beta[j] != 0.0)
                .collect();
            if !active.is_empty() {
                loop {
                    let done = self
                        .sweep_until(&active, lambda, config.tol, &mut budget, DIRECT_AFTER)
                        .map_err(|_| non_convergence(config.max_iter, lambda))?;
                    if done {
                        break;
                    }
                    let nonzero: Vec<usize> = active
                        .iter()
                        .copied()
                        .filter(|&j| self.beta[j] != 0.0)
                        .collect();
                    if nonzero.len() >= self.x.nrows() {
                        return Ok(Outcome::Saturated);
                    }
                    self.direct_step(&nonzero, lambda);
                }
            }
            if budget < all.len() {
                return Err(non_convergence(config.max_iter, lambda));
            }
            budget -= all.len();
            let before: Vec<bool> = self.beta.iter().map(|b| *b != 0.0).collect();
            let mut max_change: f64 = 0.0;
            for &j in &all {
                max_change = max_change.max(self.update(j, lambda));
            }
            let same_set = self
                .beta
                .iter()
                .zip(&before)
                .all(|(b, was)| (*b != 0.0) == *was);
            if max_change < config.tol && same_set {
                return Ok(Outcome::Converged);
            }
        }
    }

    fn fit(&self, lambda: f64) -> LassoFit {
        let support = self
            .beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect();
        LassoFit {
            lambda,
            coefficients: self.beta.clone(),
            intercept: 0.0,
            support,
            cv_curve: Vec::new(),
        }
    }
}

fn non_convergence(iterations: usize, lambda: f64) -> Error {
    Error::NonConvergence {
        iterations,
        context: format!("lasso coordinate descent at lambda = {lambda:.6e}"),
    }
}

/// Fits the λ path on a standardized `x` and centered `y`. When the support
/// at some λ would reach the number of rows the solution is no longer unique
/// and the path stops before that λ, so it can be shorter than the grid.
pub fn lasso_path(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &LassoConfig,
) -> Result<Vec<LassoFit>> {
    let grid = lambda_grid(lambda_max(x, y), config);
    path_on_grid(x, y, &grid, config)
}

pub fn path_on_grid(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &[f64],
    config: &LassoConfig,
) -> Result<Vec<LassoFit>> {
    if x.nrows() != y.len() {
        return Err(Error::invalid("x and y row counts differ"));
    }
    let mut solver = Solver::new(x, y);
    let mut out = Vec::with_capacity(grid.len());
    for &lambda in grid {
        if solver.solve(lambda, config)? == Outcome::Saturated {
            if out.is_empty() {
                return Err(non_convergence(config.max_iter, lambda));
            }
            break;
        }
        out.push(solver.fit(lambda));
    }
    Ok(out)
}

/// Single fit at a fixed λ, started from zero.
pub fn lasso_at(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    config: &LassoConfig,
) -> Result<LassoFit> {
    let mut solver = Solver::new(x, y);
    match solver.solve(lambda, config)? {
        Outcome::Converged => Ok(solver.fit(lambda)),
        Outcome::Saturated => Err(non_convergence(config.max_iter, lambda)),
    }
}

/// Seeded random permutation of `0..n` cut into `folds` contiguous blocks.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = n / folds + usize::from(f < n % folds);
        let mut block = perm[start..start + size].to_vec();
        block.sort_unstable();
        if block.len() < 2 {
            return Err(Error::DegenerateFolds {
                fold: f,
                rows: block.len(),
            });
        }
        out.push(block);
        start += size;
    }
    Ok(out)
}

fn centered(x: &DMatrix<f64>, rows: &[usize]) -> (DMatrix<f64>, Vec<f64>) {
    let sub = x.select_rows(rows);
    let means: Vec<f64> = sub.column_iter().map(|c| c.mean()).collect();
    let mut c = sub;
    for (mut col, m) in c.column_iter_mut().zip(&means) {
        col.add_scalar_mut(-m);
    }
    (c, means)
}

/// Chooses λ by k-fold cross-validation (minimum mean held-out squared
/// error, ties to the larger λ) and refits on all rows. Fold paths that
/// stop early are extended with their last fit, as is the final refit. Coefficients are
/// reported on the scale of the supplied `x`.
pub fn cv_select(x: &DMatrix<f64>, y: &DVector<f64>, config: &LassoConfig) -> Result<LassoFit> {
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::invalid("x and y row counts differ"));
    }
    config.validate(n)?;
    let names: Vec<String> = (1..=x.ncols()).map(|j| format!("V{j}")).collect();
    let (xs, scaling) = standardize_matrix(x, &names)?;
    let ymean = y.mean();
    let yc = y.add_scalar(-ymean);
    let grid = lambda_grid(lambda_max(&xs, &yc), config);
    let folds = fold_assignment(n, config.folds, config.cv_seed)?;

    let fold_errors: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|test| -> Result<Vec<f64>> {
            let train: Vec<usize> = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
            let (xt, xmeans) = centered(&xs, &train);
            let ytr: Vec<f64> = train.iter().map(|&i| yc[i]).collect();
            let ym = ytr.iter().sum::<f64>() / ytr.len() as f64;
            let yt = DVector::from_iterator(ytr.len(), ytr.iter().map(|v| v - ym));
            let path = path_on_grid(&xt, &yt, &grid, config)?;
            // A path that stopped early keeps its last fit for smaller λ.
            Ok((0..grid.len())
                .map(|l| &path[l.min(path.len() - 1)])
                .map(|fit| {
                    test.iter()
                        .map(|&i| {
                            let pred = ym
                                + fit
                                    .support
                                    .iter()
                                    .map(|&j| (xs[(i, j)] - xmeans[j]) * fit.coefficients[j])
                                    .sum::<f64>();
                            (yc[i] - pred).powi(2)
                        })
                        .sum::<f64>()
                        / test.len() as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let k = folds.len() as f64;
    let cv_curve: Vec<CvPoint> = grid
        .iter()
        .enumerate()
        .map(|(l, &lambda)| {
            let errs: Vec<f64> = fold_errors.iter().map(|e| e[l]).collect();
            let mean = errs.iter().sum::<f64>() / k;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0);
            CvPoint {
                lambda,
                mean_error: mean,
                se: (var / k).sqrt(),
            }
        })
        .collect();

    let mut best = 0;
    for (l, p) in cv_curve.iter().enumerate() {
        if p.mean_error < cv_curve[best].mean_error {
            best = l;
        }
    }

    let full = path_on_grid(&xs, &yc, &grid[..=best], config)?;
    let fit = full.into_iter().last().expect("non-empty grid");
    let coefficients: Vec<f64> = fit
        .coefficients
        .iter()
        .zip(&scaling)
        .map(|(b, s)| b / s.sd)
        .collect();
    let intercept = ymean
        - coefficients
            .iter()
            .zip(&scaling)
            .map(|(b, s)| b * s.mean)
            .sum::<f64>();
    Ok(LassoFit {
        lambda: fit.lambda,
        coefficients,
        intercept,
        support: fit.support,
        cv_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
    }

    fn standardized_problem(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normal_matrix(&mut rng, n, p);
        let names: Vec<String> = (0..p).map(|j| j.to_string()).collect();
        let (xs, _) = standardize_matrix(&x, &names).unwrap();
        let noise: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let mut y = 1.5 * xs.column(0) - 0.8 * xs.column(3) + noise;
        let m = y.mean();
        y.add_scalar_mut(-m);
        (xs, y)
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-2.5, 1.0), -1.5);
    }

    #[test]
    fn empty_support_at_lambda_max() {
        let (x, y) = standardized_problem(1, 40, 8);
        let path = lasso_path(&x, &y, &LassoConfig::default()).unwrap();
        assert!(path[0].support.is_empty());
        assert!(!path.last().unwrap().support.is_empty());
    }

    #[test]
    fn zero_penalty_matches_ols() {
        let (x, y) = standardized_problem(2, 60, 5);
        let cfg = LassoConfig {
            tol: 1e-12,
            max_iter: 100_000,
            ..Default::default()
        };
        let fit = lasso_at(&x, &y, 0.0, &cfg).unwrap();
        let ols = crate::linalg::least_squares(&x, &y).unwrap();
        for (a, b) in fit.coefficients.iter().zip(ols.coefficients.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    /// Projected-subgradient reference: proximal gradient (ISTA) run for many
    /// iterations with a fixed step, independent of coordinate descent.
    fn ista_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, iters: usize) -> Vec<f64> {
        let n = x.nrows() as f64;
        let xtx = x.transpose() * x / n;
        let xty = x.transpose() * y / n;
        let lip = xtx.clone().symmetric_eigenvalues().max();
        let step = 1.0 / lip;
        let mut b = DVector::zeros(x.ncols());
        for _ in 0..iters {
            let grad = &xtx * &b - &xty;
            let z = &b - step * grad;
            b = z.map(|v| soft_threshold(v, step * lambda));
        }
        b.iter().copied().collect()
    }

    #[test]
    fn single_lambda_matches_ista_oracle() {
        let (x, y) = standardized_problem(3, 50, 10);
        let lambda = 0.1 * lambda_max(&x, &y);
        let fit = lasso_at(&x, &y, lambda, &LassoConfig::default()).unwrap();
        let oracle = ista_oracle(&x, &y, lambda, 20_000);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        let f_cd = objective(&x, &y, &fit.coefficients, lambda);
        let f_or = objective(&x, &y, &oracle, lambda);
        assert!(f_cd <= f_or + 1e-10);
        assert!(kkt_residual(&x, &y, &fit.coefficients, lambda) < 1e-6);
    }

    #[test]
    fn kkt_holds_along_path() {
        let (x, y) = standardized_problem(4, 30, 60);
        for fit in lasso_path(&x, &y, &LassoConfig::default()).unwrap() {
            assert!(kkt_residual(&x, &y, &fit.coefficients, fit.lambda) < 1e-6);
        }
    }

    #[test]
    fn folds_are_balanced_and_disjoint() {
        let f = fold_assignment(23, 10, 9).unwrap();
        let mut all: Vec<usize> = f.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(f.iter().all(|b| b.len() == 2 || b.len() == 3));
        assert!(matches!(
            fold_assignment(15, 10, 0),
            Err(Error::DegenerateFolds { .. })
        ));
    }

    #[test]
    fn cv_is_deterministic() {
        let (x, y) = standardized_problem(5, 60, 20);
        let cfg = LassoConfig {
            cv_seed: 7,
            ..Default::default()
        };
        let a = cv_select(&x, &y, &cfg).unwrap();
        let b = cv_select(&x, &y, &cfg).unwrap();
        assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
        assert_eq!(a.support, b.support);
        assert!(a.cv_curve.windows(2).all(|w| w[0].lambda > w[1].lambda));
    }

    #[test]
    fn config_validation() {
        let bad = LassoConfig {
            n_lambdas: 1,
            ..Default::default()
        };
        assert!(bad.validate(50).is_err());
        let bad = LassoConfig {
            lambda_min_ratio: 1.0,
            ..Default::default()
        };
        assert!(bad.validate(50).is_err());
        let bad = LassoConfig {
            folds: 60,
            ..Default::default()
        };
        assert!(bad.validate(50).is_err());
    }
}
