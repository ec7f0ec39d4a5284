//! k-class instrumental-variables estimators and their diagnostics.
//!
//! With `X = [X_endog, X_exog]` and `Z̄ = [Z, X_exog]`, the k-class estimate is
//! `β̂(k) = (X'(I − k M_Z̄) X)⁻¹ X'(I − k M_Z̄) y`: `k = 0` gives OLS,
//! `k = 1` two-stage least squares, LIML uses the smallest root of the
//! variance-ratio problem and Fuller subtracts `a / (N − m − q)` from it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ols_fit, OlsFit};
use crate::error::{Error, Result};
use crate::linalg::{self, hstack};
use crate::stats;

#[derive(Debug, Clone)]
pub struct IvProblem {
    z: DMatrix<f64>,
    x_endog: DMatrix<f64>,
    x_exog: DMatrix<f64>,
    y: DVector<f64>,
}

impl IvProblem {
    /// `x_exog` must contain the intercept column if one is wanted.
    pub fn new(
        z: DMatrix<f64>,
        x_endog: DMatrix<f64>,
        x_exog: DMatrix<f64>,
        y: DVector<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if z.nrows() != n || x_endog.nrows() != n || x_exog.nrows() != n {
            return Err(Error::invalid("IV blocks have inconsistent row counts"));
        }
        if z.ncols() == 0 {
            return Err(Error::invalid("at least one instrument is required"));
        }
        if x_endog.ncols() == 0 || x_exog.ncols() == 0 {
            return Err(Error::invalid(
                "need g ≥ 1 endogenous and q ≥ 1 exogenous columns",
            ));
        }
        if z.ncols() < x_endog.ncols() {
            return Err(Error::invalid(format!(
                "order condition fails: {} instruments for {} endogenous regressors",
                z.ncols(),
                x_endog.ncols()
            )));
        }
        if z.ncols() + x_exog.ncols() >= n {
            return Err(Error::RankDeficient {
                condition: f64::INFINITY,
            });
        }
        let p = IvProblem {
            z,
            x_endog,
            x_exog,
            y,
        };
        linalg::least_squares(&p.zbar(), &p.y)?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn m(&self) -> usize {
        self.z.ncols()
    }
    pub fn g(&self) -> usize {
        self.x_endog.ncols()
    }
    pub fn q(&self) -> usize {
        self.x_exog.ncols()
    }
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }
    pub fn x_endog(&self) -> &DMatrix<f64> {
        &self.x_endog
    }
    pub fn x_exog(&self) -> &DMatrix<f64> {
        &self.x_exog
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// `[Z, X_exog]`
    pub fn zbar(&self) -> DMatrix<f64> {
        hstack(&[&self.z, &self.x_exog])
    }

    /// `[X_endog, X_exog]`
    pub fn regressors(&self) -> DMatrix<f64> {
        hstack(&[&self.x_endog, &self.x_exog])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Ols,
    Tsls,
    Liml,
    Fuller,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::Tsls => "TSLS",
            Method::Liml => "LIML",
            Method::Fuller => "FULLER",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobustFlavor {
    #[default]
    Hc0,
    Hc1,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KClassEstimate {
    pub method: Method,
    pub k: f64,
    /// Endogenous coefficients first, then exogenous.
    pub beta: Vec<f64>,
    pub se_classical: Vec<f64>,
    pub se_robust: Vec<f64>,
    pub t_classical: Vec<f64>,
    pub t_robust: Vec<f64>,
    pub p_classical: Vec<f64>,
    pub p_robust: Vec<f64>,
    pub ci_95: Vec<(f64, f64)>,
    pub df_resid: usize,
    pub robust_flavor: RobustFlavor,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl KClassEstimate {
    /// Wald t statistic for `H0: beta[j] = value` with classical errors.
    pub fn t_against(&self, j: usize, value: f64) -> f64 {
        (self.beta[j] - value) / self.se_classical[j]
    }

    pub fn p_against(&self, j: usize, value: f64) -> f64 {
        stats::t_two_sided(self.t_against(j, value), self.df_resid as f64)
    }

    pub fn covers(&self, j: usize, value: f64) -> bool {
        let (lo, hi) = self.ci_95[j];
        lo <= value && value <= hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    pub stat: f64,
    pub df: (usize, usize),
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct FirstStage {
    pub x_hat: DMatrix<f64>,
    pub fits: Vec<OlsFit>,
    /// Joint test of the instrument block, one per endogenous column.
    pub f_tests: Vec<FTest>,
}

/// F test that the `tested` block has zero coefficients in a regression of
/// `y` on `[tested, base]`.
fn block_f(tested: &DMatrix<f64>, base: &DMatrix<f64>, y: &DVector<f64>) -> Result<FTest> {
    let n = y.len();
    let full = linalg::least_squares(&hstack(&[tested, base]), y)?;
    let restricted = linalg::least_squares(base, y)?;
    let df1 = tested.ncols();
    let df2 = n - tested.ncols() - base.ncols();
    let stat = ((restricted.rss - full.rss) / df1 as f64) / (full.rss / df2 as f64);
    Ok(FTest {
        stat,
        df: (df1, df2),
        p: stats::f_upper(stat, df1 as f64, df2 as f64),
    })
}

pub fn first_stage(p: &IvProblem) -> Result<FirstStage> {
    let zbar = p.zbar();
    let mut x_hat = DMatrix::zeros(p.n(), p.g());
    let mut fits = Vec::with_capacity(p.g());
    let mut f_tests = Vec::with_capacity(p.g());
    for j in 0..p.g() {
        let xj = p.x_endog.column(j).into_owned();
        let fit = ols_fit(&zbar, &xj, false)?;
        let fitted = &xj - DVector::from_column_slice(fit.residuals.as_slice());
        x_hat.set_column(j, &fitted);
        f_tests.push(block_f(&p.z, &p.x_exog, &xj)?);
        fits.push(fit);
    }
    Ok(FirstStage {
        x_hat,
        fits,
        f_tests,
    })
}

fn solve_general(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone().lu().solve(b).ok_or(Error::RankDeficient {
        condition: f64::INFINITY,
    })
}

pub fn kclass(
    p: &IvProblem,
    k: f64,
    method: Method,
    flavor: RobustFlavor,
) -> Result<KClassEstimate> {
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::invalid(format!(
            "k must be finite and non-negative, got {k}"
        )));
    }
    let n = p.n();
    let x = p.regressors();
    let zbar = p.zbar();
    let mx = linalg::residualize(&zbar, &x)?;
    // X̃ = (I − k M_Z̄) X, the implied instrument matrix.
    let xt = &x - &mx * k;
    let bread_inv = xt.transpose() * &x;
    let rhs = xt.transpose() * linalg::column_matrix(&p.y);
    let beta_m = solve_general(&bread_inv, &rhs)?;
    let beta = beta_m.column(0).into_owned();
    let bread = solve_general(&bread_inv, &DMatrix::identity(x.ncols(), x.ncols()))?;
    let bread = (&bread + bread.transpose()) * 0.5;

    let resid = &p.y - &x * &beta;
    let ncoef = x.ncols();
    let df_resid = n
        .checked_sub(ncoef)
        .filter(|d| *d > 0)
        .ok_or_else(|| Error::invalid("no residual degrees of freedom"))?;
    let sigma2 = resid.norm_squared() / df_resid as f64;
    let cov = &bread * sigma2;

    let mut meat = DMatrix::zeros(ncoef, ncoef);
    for i in 0..n {
        let row = xt.row(i);
        meat += row.transpose() * row * (resid[i] * resid[i]);
    }
    let mut cov_r = &bread * meat * &bread;
    if flavor == RobustFlavor::Hc1 {
        cov_r *= n as f64 / df_resid as f64;
    }

    let mut se_c = Vec::with_capacity(ncoef);
    let mut se_r = Vec::with_capacity(ncoef);
    for j in 0..ncoef {
        let (vc, vr) = (cov[(j, j)], cov_r[(j, j)]);
        if !(vc > 0.0) || vr < 0.0 {
            return Err(Error::NegativeVariance(vc.min(vr)));
        }
        se_c.push(vc.sqrt());
        se_r.push(vr.sqrt());
    }
    let df = df_resid as f64;
    let tcrit = stats::t_critical(0.05, df);
    let beta_v: Vec<f64> = beta.iter().copied().collect();
    let t_c: Vec<f64> = beta_v.iter().zip(&se_c).map(|(b, s)| b / s).collect();
    let t_r: Vec<f64> = beta_v.iter().zip(&se_r).map(|(b, s)| b / s).collect();
    Ok(KClassEstimate {
        method,
        k,
        p_classical: t_c.iter().map(|t| stats::t_two_sided(*t, df)).collect(),
        p_robust: t_r.iter().map(|t| stats::t_two_sided(*t, df)).collect(),
        ci_95: beta_v
            .iter()
            .zip(&se_c)
            .map(|(b, s)| (b - tcrit * s, b + tcrit * s))
            .collect(),
        beta: beta_v,
        se_classical: se_c,
        se_robust: se_r,
        t_classical: t_c,
        t_robust: t_r,
        df_resid,
        robust_flavor: flavor,
        residuals: resid.iter().copied().collect(),
    })
}

pub fn ols(p: &IvProblem, flavor: RobustFlavor) -> Result<KClassEstimate> {
    kclass(p, 0.0, Method::Ols, flavor)
}

pub fn tsls(p: &IvProblem, flavor: RobustFlavor) -> Result<KClassEstimate> {
    kclass(p, 1.0, Method::Tsls, flavor)
}

/// Smallest acceptable eigenvalue ratio of `W₀` in [`liml_k`].
const W0_TOL: f64 = 1e-10;

/// Smallest eigenvalue of `W₁ W₀⁻¹`, where `W₀` and `W₁` are cross-products
/// of `[y, X_endog]` residualized on `[Z, X_exog]` and on `X_exog`.
pub fn liml_k(p: &IvProblem) -> Result<f64> {
    let y0 = hstack(&[&linalg::column_matrix(&p.y), &p.x_endog]);
    let r0 = linalg::residualize(&p.zbar(), &y0)?;
    let r1 = linalg::residualize(&p.x_exog, &y0)?;
    let w0 = r0.transpose() * &r0;
    let w1 = r1.transpose() * &r1;
    // Too few residual degrees of freedom leave `W₀` (numerically) singular.
    let ev = w0.symmetric_eigenvalues();
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if !(lo > W0_TOL * hi) {
        return Err(Error::RankDeficient {
            condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        });
    }
    let chol = w0.cholesky().ok_or(Error::RankDeficient {
        condition: f64::INFINITY,
    })?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(y0.ncols(), y0.ncols()))
        .ok_or(Error::RankDeficient {
            condition: f64::INFINITY,
        })?;
    let sym = &l_inv * w1 * l_inv.transpose();
    let sym = (&sym + sym.transpose()) * 0.5;
    let k = sym
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if k < 1.0 - 1e-8 {
        return Err(Error::RankDeficient { condition: hi / lo });
    }
    Ok(k)
}

pub fn liml(p: &IvProblem, flavor: RobustFlavor) -> Result<KClassEstimate> {
    let k = liml_k(p)?;
    kclass(p, k, Method::Liml, flavor)
}

pub fn fuller(p: &IvProblem, a: f64, flavor: RobustFlavor) -> Result<KClassEstimate> {
    let dof = p.n() as i64 - p.m() as i64 - p.q() as i64;
    if dof <= 0 {
        return Err(Error::invalid("Fuller requires N > m + q"));
    }
    let k = liml_k(p)? - a / dof as f64;
    kclass(p, k.max(0.0), Method::Fuller, flavor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub stat: f64,
    pub df: usize,
    pub p: f64,
}

/// Sargan over-identification statistic `N·R²` of the 2SLS residuals on `[Z, X_exog]`.
pub fn sargan_test(p: &IvProblem, tsls_residuals: &[f64]) -> Result<ChiSquareTest> {
    if p.m() <= p.g() {
        return Err(Error::NotOverIdentified {
            instruments: p.m(),
            endogenous: p.g(),
        });
    }
    if tsls_residuals.len() != p.n() {
        return Err(Error::invalid("residual length differs from N"));
    }
    let e = DVector::from_column_slice(tsls_residuals);
    let fit = linalg::least_squares(&p.zbar(), &e)?;
    let r2 = 1.0 - fit.rss / e.norm_squared();
    let stat = p.n() as f64 * r2;
    let df = p.m() - p.g();
    Ok(ChiSquareTest {
        stat,
        df,
        p: stats::chi2_upper(stat, df as f64),
    })
}

/// Anderson–Rubin F test of `H0: β_endog = beta0`.
pub fn anderson_rubin_test(p: &IvProblem, beta0: &[f64]) -> Result<FTest> {
    if beta0.len() != p.g() {
        return Err(Error::invalid(format!("beta0 needs {} entries", p.g())));
    }
    let b0 = DVector::from_column_slice(beta0);
    let y0 = &p.y - &p.x_endog * b0;
    block_f(&p.z, &p.x_exog, &y0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IvDiagnostics {
    pub first_stage_f: f64,
    pub first_stage_df: (usize, usize),
    pub first_stage_p: f64,
    pub sargan: Option<ChiSquareTest>,
    pub ar_stat: f64,
    pub ar_df: (usize, usize),
    pub ar_p: f64,
}

/// First-stage F (weakest endogenous column), Sargan (when over-identified)
/// and Anderson–Rubin at `beta0`.
pub fn diagnostics(p: &IvProblem, beta0: &[f64]) -> Result<IvDiagnostics> {
    let fs = first_stage(p)?;
    let weakest = fs
        .f_tests
        .iter()
        .min_by(|a, b| a.stat.total_cmp(&b.stat))
        .copied()
        .expect("g ≥ 1");
    let sargan = match sargan_test(p, &tsls(p, RobustFlavor::Hc0)?.residuals) {
        Ok(t) => Some(t),
        Err(Error::NotOverIdentified { .. }) => None,
        Err(e) => return Err(e),
    };
    let ar = anderson_rubin_test(p, beta0)?;
    Ok(IvDiagnostics {
        first_stage_f: weakest.stat,
        first_stage_df: weakest.df,
        first_stage_p: weakest.p,
        sargan,
        ar_stat: ar.stat,
        ar_df: ar.df,
        ar_p: ar.p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn z(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    /// y = 1 + 1·x + e with x endogenous through v, `m` instruments.
    fn instance(seed: u64, n: usize, m: usize, strength: f64) -> IvProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zm = DMatrix::from_fn(n, m, |_, _| z(&mut rng));
        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let v = z(&mut rng);
            let e = 0.6 * v + 0.8 * z(&mut rng);
            x[i] = strength * zm.row(i).sum() + v;
            y[i] = 1.0 + x[i] + e;
        }
        IvProblem::new(zm, linalg::column_matrix(&x), linalg::intercept(n), y).unwrap()
    }

    #[test]
    fn k_zero_is_ols() {
        let p = instance(1, 80, 3, 0.5);
        let est = ols(&p, RobustFlavor::Hc0).unwrap();
        let fit = ols_fit(&p.regressors(), p.y(), false).unwrap();
        for j in 0..2 {
            assert!((est.beta[j] - fit.coefficients[j]).abs() < 1e-10);
            assert!((est.se_classical[j] - fit.se[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn exactly_identified_tsls_is_iv_formula() {
        let p = instance(2, 120, 1, 0.7);
        let est = tsls(&p, RobustFlavor::Hc0).unwrap();
        let zbar = p.zbar();
        let x = p.regressors();
        let iv = (zbar.transpose() * &x)
            .lu()
            .solve(&(zbar.transpose() * p.y()))
            .unwrap();
        for j in 0..2 {
            assert!((est.beta[j] - iv[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn tsls_matches_two_pass_regression() {
        let p = instance(3, 200, 4, 0.4);
        let est = tsls(&p, RobustFlavor::Hc0).unwrap();
        // First pass: fitted x from [Z, 1]; second pass: y on [x̂, 1].
        let zbar = p.zbar();
        let xcol = p.x_endog().column(0).into_owned();
        let coef = (zbar.transpose() * &zbar).try_inverse().unwrap() * zbar.transpose() * &xcol;
        let xhat = &zbar * coef;
        let second = hstack(&[&linalg::column_matrix(&xhat), p.x_exog()]);
        let b = (second.transpose() * &second).try_inverse().unwrap() * second.transpose() * p.y();
        for j in 0..2 {
            assert!(
                (est.beta[j] - b[j]).abs() < 1e-8,
                "{} vs {}",
                est.beta[j],
                b[j]
            );
        }
    }

    #[test]
    fn liml_is_one_when_exactly_identified() {
        let p = instance(4, 150, 1, 0.6);
        assert!((liml_k(&p).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn liml_eigen_problem_oracle() {
        // Smallest root of det(W₁ − k W₀) = 0 via the nonsymmetric product.
        let p = instance(5, 100, 5, 0.3);
        let y0 = hstack(&[&linalg::column_matrix(p.y()), p.x_endog()]);
        let r0 = linalg::residualize(&p.zbar(), &y0).unwrap();
        let r1 = linalg::residualize(p.x_exog(), &y0).unwrap();
        let w0 = r0.transpose() * &r0;
        let w1 = r1.transpose() * &r1;
        let prod = &w1 * w0.try_inverse().unwrap();
        // 2×2: roots of k² − tr·k + det.
        let tr = prod.trace();
        let det = prod.determinant();
        let small = 0.5 * (tr - (tr * tr - 4.0 * det).sqrt());
        assert!((liml_k(&p).unwrap() - small).abs() < 1e-8);
    }

    #[test]
    fn fuller_ordering_and_limit() {
        let p = instance(6, 100, 6, 0.3);
        let l = liml(&p, RobustFlavor::Hc0).unwrap();
        let f = fuller(&p, 1.0, RobustFlavor::Hc0).unwrap();
        assert!(l.k >= 1.0 - 1e-10);
        assert!(f.k < l.k);
        let f0 = fuller(&p, 0.0, RobustFlavor::Hc0).unwrap();
        assert_eq!(f0.beta, l.beta);
    }

    #[test]
    fn sargan_requires_overidentification() {
        let p = instance(7, 60, 1, 0.6);
        let r = tsls(&p, RobustFlavor::Hc0).unwrap().residuals;
        assert!(matches!(
            sargan_test(&p, &r),
            Err(Error::NotOverIdentified { .. })
        ));
        let d = diagnostics(&p, &[1.0]).unwrap();
        assert!(d.sargan.is_none());
    }

    #[test]
    fn empty_instrument_block_rejected() {
        let n = 20;
        let r = IvProblem::new(
            DMatrix::zeros(n, 0),
            DMatrix::from_element(n, 1, 1.0),
            linalg::intercept(n),
            DVector::zeros(n),
        );
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn perfect_first_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 40;
        let x = DMatrix::from_fn(n, 1, |_, _| z(&mut rng));
        let y = DVector::from_fn(n, |i, _| 2.0 * x[(i, 0)] + z(&mut rng));
        let p = IvProblem::new(x.clone(), x.clone(), linalg::intercept(n), y).unwrap();
        let fs = first_stage(&p).unwrap();
        assert!((&fs.x_hat - &x).amax() < 1e-10);
        assert!((fs.fits[0].r_squared - 1.0).abs() < 1e-10);
    }

    #[test]
    fn robust_and_classical_agree_under_homoscedasticity() {
        let p = instance(9, 1000, 3, 0.5);
        for est in [
            tsls(&p, RobustFlavor::Hc0).unwrap(),
            liml(&p, RobustFlavor::Hc1).unwrap(),
        ] {
            let ratio = est.se_robust[0] / est.se_classical[0];
            assert!((0.75..1.25).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn hc1_scales_hc0() {
        let p = instance(10, 50, 3, 0.5);
        let a = tsls(&p, RobustFlavor::Hc0).unwrap();
        let b = tsls(&p, RobustFlavor::Hc1).unwrap();
        let scale = (50.0f64 / 48.0).sqrt();
        assert!((b.se_robust[0] - scale * a.se_robust[0]).abs() < 1e-12);
    }
}
