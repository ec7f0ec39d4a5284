//! Monte Carlo fixtures shared by the statistical and acceptance targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use twostage::data::ols_fit;
use twostage::iv::{self, IvProblem, RobustFlavor};
use twostage::linalg::{column_matrix, intercept};
use twostage::stats::{mean, t_critical};

pub const SEEDS: [u64; 3] = [1, 2, 3];
pub const REPS: usize = 500;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Single endogenous regressor, `m` instruments, intercept as the only
/// exogenous column; `y = 0.5 + x + direct·z_1 + e`.
pub struct Design {
    pub n: usize,
    pub m: usize,
    /// First-stage coefficient on every instrument.
    pub pi: f64,
    /// Direct effect of the first instrument on y.
    pub direct: f64,
    /// corr(e, v).
    pub rho: f64,
}

impl Design {
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> IvProblem {
        let zm = DMatrix::from_fn(self.n, self.m, |_, _| normal(rng));
        let mut x = DVector::zeros(self.n);
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            let e = normal(rng);
            let v = self.rho * e + (1.0 - self.rho * self.rho).sqrt() * normal(rng);
            x[i] = self.pi * zm.row(i).sum() + v;
            y[i] = 0.5 + x[i] + self.direct * zm[(i, 0)] + e;
        }
        IvProblem::new(zm, column_matrix(&x), intercept(self.n), y).unwrap()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rate(hits: usize, total: usize) -> f64 {
    hits as f64 / total as f64
}

pub const SARGAN_DESIGN: Design = Design {
    n: 60,
    m: 5,
    pi: 0.4,
    direct: 0.0,
    rho: 0.5,
};

/// Mean Sargan statistic under valid instruments and its degrees of freedom.
pub fn sargan_null_mean(seed: u64) -> (f64, f64) {
    let d = SARGAN_DESIGN;
    let mut r = rng(seed);
    let stats: Vec<f64> = (0..REPS)
        .map(|_| {
            let p = d.draw(&mut r);
            let fit = iv::tsls(&p, RobustFlavor::Hc0).unwrap();
            iv::sargan_test(&p, &fit.residuals).unwrap().stat
        })
        .collect();
    (mean(&stats), (d.m - 1) as f64)
}

/// Rejection rate of the Anderson-Rubin test at the true β, α = 0.05.
pub fn anderson_rubin_size(seed: u64) -> f64 {
    let d = Design {
        n: 60,
        m: 4,
        pi: 0.3,
        direct: 0.0,
        rho: 0.6,
    };
    let mut r = rng(seed);
    let hits = (0..REPS)
        .filter(|_| iv::anderson_rubin_test(&d.draw(&mut r), &[1.0]).unwrap().p < 0.05)
        .count();
    rate(hits, REPS)
}

/// Share of 95% OLS intervals covering the true slope on exogenous data.
pub fn ols_coverage(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = 40;
    let hits = (0..REPS)
        .filter(|_| {
            let x = DMatrix::from_fn(n, 2, |_, _| normal(&mut r));
            let y = DVector::from_fn(n, |i, _| 1.0 + 2.0 * x[(i, 0)] - x[(i, 1)] + normal(&mut r));
            let fit = ols_fit(&x, &y, true).unwrap();
            let off = fit.slope_offset();
            let half = t_critical(0.05, (n - 3) as f64) * fit.se[off];
            (fit.coefficients[off] - 2.0).abs() <= half
        })
        .count();
    rate(hits, REPS)
}
