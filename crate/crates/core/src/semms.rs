//! Empirical-Bayes variable selection with a three-component mixture on
//! random coefficients.
//!
//! The response model is
//!
//! ```text
//! y = A·β + Σ_k x_k γ_k u_k + ε,   γ_k ∈ {−1, 0, +1},  u_k ~ N(μ, σ²),  ε ~ N(0, σ_e² I)
//! ```
//!
//! where `A` holds the intercept and any locked-in columns. For a working
//! selection (the variables with γ_k ≠ 0 and their signs) the coefficients
//! `u` are integrated out, so
//!
//! ```text
//! y ~ N(A·β + μ·W·1, σ_e² I + σ² W W'),   W = [γ_k x_k]_{k selected}
//! ```
//!
//! The objective maximized everywhere in this module is that marginal
//! log-likelihood plus the multinomial term `Σ_c (n_c + α π_c) ln p_c`,
//! where `n_c` counts candidates per component and `α π` is a Dirichlet
//! pseudo-count centered on the initial mixing proportions. Parameters are
//! fitted by EM on `u`, with a profile-likelihood polish over the variance
//! ratio once a move is accepted. All quantities are evaluated from
//! Gram-matrix summaries, so a candidate model costs `O(s³)` for `s`
//! selected variables.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ols_fit, standardize_matrix, Dataset, OlsFit};
use crate::error::{Error, Result};
use crate::linalg;

/// Floor applied to the slab variance σ².
pub const SIGMA2_FLOOR: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Initial mixing proportions (p_L, p_0, p_R).
pub const INITIAL_PROPORTIONS: [f64; 3] = [0.05, 0.9, 0.05];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub p_l: f64,
    pub p_0: f64,
    pub p_r: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub sigma2_e: f64,
}

/// Posterior membership probabilities `(w_L, w_0, w_R)` for each candidate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    pub rows: BTreeMap<usize, [f64; 3]>,
}

impl PosteriorTable {
    pub fn get(&self, j: usize) -> Option<[f64; 3]> {
        self.rows.get(&j).copied()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SemmsConfig {
    pub lockout_threshold: f64,
    /// Stop when an iteration improves the objective by less than this.
    pub tol: f64,
    pub max_em_iter: usize,
    /// Defaults to twice the number of predictors.
    pub max_greedy_iter: Option<usize>,
    pub greedy: bool,
    /// EM iterations spent on each candidate move before ranking.
    pub candidate_em_iter: usize,
    /// Dirichlet pseudo-count on the mixing proportions, as a multiple of the
    /// number of candidate variables. Zero gives plain maximum likelihood.
    pub prior_weight: f64,
    /// Smallest objective gain that justifies adding a variable. Removals
    /// only need to beat `tol`.
    pub min_gain: f64,
}

impl Default for SemmsConfig {
    fn default() -> Self {
        SemmsConfig {
            lockout_threshold: 0.7,
            tol: 1e-6,
            max_em_iter: 500,
            max_greedy_iter: None,
            greedy: true,
            candidate_em_iter: 25,
            prior_weight: 0.0,
            min_gain: 1.0,
        }
    }
}

impl SemmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lockout_threshold > 0.0 && self.lockout_threshold <= 1.0) {
            return Err(Error::invalid("lockout_threshold must lie in (0, 1]"));
        }
        if !(self.tol > 0.0) || self.max_em_iter == 0 {
            return Err(Error::invalid(
                "tol must be positive and max_em_iter nonzero",
            ));
        }
        if !(self.prior_weight >= 0.0) {
            return Err(Error::invalid("prior_weight must be non-negative"));
        }
        if !(self.min_gain >= 0.0) {
            return Err(Error::invalid("min_gain must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockOut {
    pub index: usize,
    /// Selected variable whose correlation triggered the exclusion.
    pub trigger: usize,
    pub correlation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemmsResult {
    pub selected: Vec<usize>,
    pub locked_in: Vec<usize>,
    pub locked_out: Vec<LockOut>,
    pub signs: BTreeMap<usize, i8>,
    pub mixture: MixtureParams,
    pub posteriors: PosteriorTable,
    pub final_loglik: f64,
    /// Objective after each accepted move, starting with the empty model.
    pub loglik_trace: Vec<f64>,
    /// Columns (in order) of the refit design, after the intercept.
    pub refit_columns: Vec<usize>,
    pub ols_refit: OlsFit,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl SemmsResult {
    pub fn locked_out_indices(&self) -> BTreeSet<usize> {
        self.locked_out.iter().map(|l| l.index).collect()
    }
}

/// Continuous parameters of the marginal model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub beta: DVector<f64>,
    pub mu: f64,
    pub sigma2: f64,
    pub sigma2_e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub col: usize,
    pub sign: f64,
}

/// Gram summaries of a standardized design, shared by every model evaluation.
pub struct Problem<'a> {
    x: &'a DMatrix<f64>,
    n: usize,
    a: DMatrix<f64>,
    aa: DMatrix<f64>,
    aa_inv: DMatrix<f64>,
    ay: DVector<f64>,
    yy: f64,
    xy: DVector<f64>,
    xa: DMatrix<f64>,
    diag: Vec<f64>,
    candidates: Vec<usize>,
    locked_in: Vec<usize>,
    var_y: f64,
}

impl<'a> Problem<'a> {
    /// `x` is expected to be standardized; `locked_in` columns enter `A`.
    pub fn new(
        x: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        locked_in: &BTreeSet<usize>,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::invalid("x and y row counts differ"));
        }
        if let Some(&j) = locked_in.iter().find(|&&j| j >= p) {
            return Err(Error::invalid(format!("locked-in index {j} out of range")));
        }
        let locked: Vec<usize> = locked_in.iter().copied().collect();
        let a = linalg::hstack(&[&linalg::intercept(n), &x.select_columns(&locked)]);
        if a.ncols() >= n {
            return Err(Error::RankDeficient {
                condition: f64::INFINITY,
            });
        }
        // Rank check on the fixed-effect block.
        linalg::least_squares(&a, y)?;
        let aa = a.transpose() * &a;
        let aa_inv = linalg::spd_inverse(&aa)?;
        let ay = a.transpose() * y;
        let xy = x.transpose() * y;
        let xa = x.transpose() * &a;
        let diag = x.column_iter().map(|c| c.norm_squared()).collect();
        let candidates = (0..p).filter(|j| !locked_in.contains(j)).collect();
        let m = y.mean();
        let var_y = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        Ok(Problem {
            x,
            n,
            a,
            aa,
            aa_inv,
            ay,
            yy: y.norm_squared(),
            xy,
            xa,
            diag,
            candidates,
            locked_in: locked,
            var_y,
        })
    }

    pub fn n_candidates(&self) -> usize {
        self.candidates.len()
    }

    fn cross(&self, j: usize) -> DVector<f64> {
        self.x.transpose() * self.x.column(j)
    }
}

/// Gram blocks of one working selection.
struct ModelGram {
    ww: DMatrix<f64>,
    wy: DVector<f64>,
    aw: DMatrix<f64>,
}

impl ModelGram {
    fn dim(&self) -> usize {
        self.wy.len()
    }

    /// `cross[i]` must hold `X' x_{members[i].col}`.
    fn build(prob: &Problem, members: &[Member], cross: &[&DVector<f64>]) -> Self {
        let s = members.len();
        let q = prob.a.ncols();
        let mut ww = DMatrix::zeros(s, s);
        let mut wy = DVector::zeros(s);
        let mut aw = DMatrix::zeros(q, s);
        for (i, mi) in members.iter().enumerate() {
            wy[i] = mi.sign * prob.xy[mi.col];
            for r in 0..q {
                aw[(r, i)] = mi.sign * prob.xa[(mi.col, r)];
            }
            for (j, mj) in members.iter().enumerate() {
                ww[(i, j)] = mi.sign * mj.sign * cross[i][mj.col];
            }
        }
        ModelGram { ww, wy, aw }
    }

    fn ones(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), 1.0)
    }

    /// ‖y − Aβ − W v‖² from Gram blocks.
    fn rss(&self, prob: &Problem, beta: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let ab = &prob.aa * beta;
        let wv = &self.ww * v;
        prob.yy + beta.dot(&ab) + v.dot(&wv) - 2.0 * beta.dot(&prob.ay) - 2.0 * v.dot(&self.wy)
            + 2.0 * beta.dot(&(&self.aw * v))
    }
}

fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    m.clone()
        .cholesky()
        .map(|c| 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Marginal Gaussian log-likelihood of `y` for the selection behind `g`.
fn loglik_y(prob: &Problem, g: &ModelGram, th: &ModelParams) -> f64 {
    let n = prob.n as f64;
    let s = g.dim();
    let ones = g.ones();
    let mean_u = &ones * th.mu;
    let rr = g.rss(prob, &th.beta, &mean_u);
    if s == 0 {
        return -0.5 * (n * LN_2PI + n * th.sigma2_e.ln() + rr / th.sigma2_e);
    }
    let wr = &g.wy - g.aw.transpose() * &th.beta - &g.ww * &mean_u;
    let ratio = th.sigma2 / th.sigma2_e;
    let inner = DMatrix::identity(s, s) / ratio + &g.ww;
    let (quad, logdet) = match inner.clone().cholesky() {
        Some(chol) => {
            let sol = chol.solve(&wr);
            let k = DMatrix::identity(s, s) + &g.ww * ratio;
            let ld = log_det_spd(&k).unwrap_or(f64::NAN);
            (rr - wr.dot(&sol), ld)
        }
        None => return f64::NEG_INFINITY,
    };
    -0.5 * (n * LN_2PI + n * th.sigma2_e.ln() + logdet + quad / th.sigma2_e)
}

/// One closed-form EM update of the continuous parameters (E-step on `u`).
/// Returns the updated parameters and whether σ² hit its floor.
fn em_update(prob: &Problem, g: &ModelGram, th: &ModelParams) -> (ModelParams, bool) {
    let n = prob.n as f64;
    let s = g.dim();
    if s == 0 {
        let beta = &prob.aa_inv * &prob.ay;
        let rss = g.rss(prob, &beta, &DVector::zeros(0));
        return (
            ModelParams {
                beta,
                mu: th.mu,
                sigma2: th.sigma2,
                sigma2_e: (rss / n).max(f64::MIN_POSITIVE),
            },
            false,
        );
    }
    let prec = &g.ww / th.sigma2_e + DMatrix::identity(s, s) / th.sigma2;
    let cu = match linalg::spd_inverse(&prec) {
        Ok(c) => c,
        Err(_) => return (th.clone(), false),
    };
    let rhs = (&g.wy - g.aw.transpose() * &th.beta) / th.sigma2_e + g.ones() * (th.mu / th.sigma2);
    let m = &cu * rhs;
    let mu = m.mean();
    let spread = m.iter().map(|v| (v - mu).powi(2)).sum::<f64>() + cu.trace();
    let raw_sigma2 = spread / s as f64;
    let floored = raw_sigma2 < SIGMA2_FLOOR;
    let sigma2 = raw_sigma2.max(SIGMA2_FLOOR);
    let beta = &prob.aa_inv * (&prob.ay - &g.aw * &m);
    let rss = g.rss(prob, &beta, &m) + (&g.ww * &cu).trace();
    (
        ModelParams {
            beta,
            mu,
            sigma2,
            sigma2_e: (rss / n).max(f64::MIN_POSITIVE),
        },
        floored,
    )
}

/// Exact maximization over (β, μ, σ_e²) at a fixed ratio ρ = σ²/σ_e² by
/// generalized least squares; returns the profiled parameters and value.
fn profile_at(prob: &Problem, g: &ModelGram, ratio: f64) -> Option<(ModelParams, f64)> {
    let n = prob.n as f64;
    let s = g.dim();
    let q = prob.a.ncols();
    let ones = g.ones();
    let m0 = linalg::spd_inverse(&(DMatrix::identity(s, s) / ratio + &g.ww)).ok()?;
    // B = [A, W·1]
    let mut bb = DMatrix::zeros(q + 1, q + 1);
    bb.view_mut((0, 0), (q, q)).copy_from(&prob.aa);
    let aw1 = &g.aw * &ones;
    for r in 0..q {
        bb[(r, q)] = aw1[r];
        bb[(q, r)] = aw1[r];
    }
    bb[(q, q)] = ones.dot(&(&g.ww * &ones));
    let mut bw = DMatrix::zeros(q + 1, s);
    bw.view_mut((0, 0), (q, s)).copy_from(&g.aw);
    let ww1 = &g.ww * &ones;
    for c in 0..s {
        bw[(q, c)] = ww1[c];
    }
    let mut by = DVector::zeros(q + 1);
    by.rows_mut(0, q).copy_from(&prob.ay);
    by[q] = ones.dot(&g.wy);

    let gram = &bb - &bw * &m0 * bw.transpose();
    let rhs = &by - &bw * (&m0 * &g.wy);
    let yvy = prob.yy - g.wy.dot(&(&m0 * &g.wy));
    let coef = gram.clone().cholesky()?.solve(&rhs);
    let quad = yvy - coef.dot(&rhs);
    if !(quad > 0.0) {
        return None;
    }
    let sigma2_e = quad / n;
    let logdet = log_det_spd(&(DMatrix::identity(s, s) + &g.ww * ratio))?;
    let value = -0.5 * (n * LN_2PI + n * sigma2_e.ln() + logdet + n);
    let params = ModelParams {
        beta: coef.rows(0, q).into_owned(),
        mu: coef[q],
        sigma2: (ratio * sigma2_e).max(SIGMA2_FLOOR),
        sigma2_e,
    };
    Some((params, value))
}

/// Golden-section search of the profile likelihood over ln ρ. Only returns
/// a parameter set that beats `current` on the exact likelihood.
fn profile_polish(prob: &Problem, g: &ModelGram, current: &ModelParams) -> Option<ModelParams> {
    if g.dim() == 0 {
        return None;
    }
    let f = |t: f64| {
        profile_at(prob, g, t.exp())
            .map(|(_, v)| v)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let (mut lo, mut hi) = ((1e-10f64).ln(), (1e4f64).ln());
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = f(d);
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    let t_best = [
        (lo.min(c), f(lo.min(c))),
        (c, fc),
        (d, fd),
        ((1e-10f64).ln(), f((1e-10f64).ln())),
    ]
    .into_iter()
    .max_by(|a, b| a.1.total_cmp(&b.1))
    .map(|(t, _)| t)?;
    let (params, _) = profile_at(prob, g, t_best.exp())?;
    let now = loglik_y(prob, g, current);
    let new = loglik_y(prob, g, &params);
    (new > now).then_some(params)
}

fn counts(members: &[Member], k: usize) -> [f64; 3] {
    let r = members.iter().filter(|m| m.sign > 0.0).count();
    let l = members.len() - r;
    [l as f64, (k - members.len()) as f64, r as f64]
}

fn pseudo(prob: &Problem, config: &SemmsConfig) -> [f64; 3] {
    let alpha = config.prior_weight * prob.n_candidates() as f64;
    INITIAL_PROPORTIONS.map(|p| alpha * p)
}

/// Maximizer of the multinomial term for given component counts.
fn update_proportions(cnt: [f64; 3], pseudo: [f64; 3]) -> [f64; 3] {
    let total: f64 = cnt.iter().zip(&pseudo).map(|(c, a)| c + a).sum();
    [0, 1, 2].map(|i| (cnt[i] + pseudo[i]) / total)
}

fn prior_term(cnt: [f64; 3], pseudo: [f64; 3], p: [f64; 3]) -> f64 {
    (0..3)
        .map(|i| {
            let w = cnt[i] + pseudo[i];
            if w == 0.0 {
                0.0
            } else {
                w * p[i].ln()
            }
        })
        .sum()
}

/// Full state of a fitted working model.
#[derive(Debug, Clone)]
pub struct FitState {
    pub members: Vec<Member>,
    pub params: ModelParams,
    pub proportions: [f64; 3],
    pub loglik: f64,
}

impl FitState {
    pub fn mixture(&self) -> MixtureParams {
        MixtureParams {
            p_l: self.proportions[0],
            p_0: self.proportions[1],
            p_r: self.proportions[2],
            mu: self.params.mu,
            sigma2: self.params.sigma2,
            sigma2_e: self.params.sigma2_e,
        }
    }
}

/// Searcher holding the problem, configuration, and cached cross-products.
pub struct Fitter<'p, 'a> {
    prob: &'p Problem<'a>,
    config: SemmsConfig,
    pseudo: [f64; 3],
    cross: BTreeMap<usize, DVector<f64>>,
    init: ModelParams,
    pub floor_hits: usize,
}

impl<'p, 'a> Fitter<'p, 'a> {
    pub fn new(prob: &'p Problem<'a>, config: SemmsConfig) -> Result<Self> {
        config.validate()?;
        let pseudo = pseudo(prob, &config);
        let init = initial_params(prob);
        Ok(Fitter {
            prob,
            config,
            pseudo,
            cross: BTreeMap::new(),
            init,
            floor_hits: 0,
        })
    }

    fn ensure_cross(&mut self, j: usize) {
        if !self.cross.contains_key(&j) {
            let c = self.prob.cross(j);
            self.cross.insert(j, c);
        }
    }

    fn gram(&self, members: &[Member], extra: Option<&DVector<f64>>) -> ModelGram {
        let cross: Vec<&DVector<f64>> = members
            .iter()
            .map(|m| {
                self.cross
                    .get(&m.col)
                    .or(extra)
                    .expect("cross-products cached")
            })
            .collect();
        ModelGram::build(self.prob, members, &cross)
    }

    fn objective(
        &self,
        g: &ModelGram,
        members: &[Member],
        params: &ModelParams,
        p: [f64; 3],
    ) -> f64 {
        let cnt = counts(members, self.prob.n_candidates());
        loglik_y(self.prob, g, params) + prior_term(cnt, self.pseudo, p)
    }

    /// Runs up to `iters` EM updates from `start`; returns the state and the
    /// number of floor hits.
    fn run_em(
        &self,
        g: &ModelGram,
        members: &[Member],
        start: ModelParams,
        iters: usize,
    ) -> (FitState, usize) {
        let cnt = counts(members, self.prob.n_candidates());
        let p = update_proportions(cnt, self.pseudo);
        let mut params = start;
        let mut value = self.objective(g, members, &params, p);
        let mut hits = 0;
        for _ in 0..iters {
            let (next, floored) = em_update(self.prob, g, &params);
            hits += usize::from(floored);
            let next_value = self.objective(g, members, &next, p);
            if !(next_value >= value - 1e-9) {
                break;
            }
            let gain = next_value - value;
            params = next;
            value = next_value;
            if gain < self.config.tol {
                break;
            }
        }
        (
            FitState {
                members: members.to_vec(),
                params,
                proportions: p,
                loglik: value,
            },
            hits,
        )
    }

    /// Full fit of a selection: EM to tolerance, a profile polish, then EM
    /// again from the polished point.
    pub fn converge(&mut self, members: &[Member], start: ModelParams) -> FitState {
        for m in members {
            self.ensure_cross(m.col);
        }
        let g = self.gram(members, None);
        let (mut state, hits) = self.run_em(&g, members, start, self.config.max_em_iter);
        self.floor_hits += hits;
        if let Some(polished) = profile_polish(self.prob, &g, &state.params) {
            let value = self.objective(&g, members, &polished, state.proportions);
            if value > state.loglik {
                let (again, hits) = self.run_em(&g, members, polished, self.config.max_em_iter);
                self.floor_hits += hits;
                if again.loglik >= state.loglik {
                    state = again;
                }
            }
        }
        state
    }

    /// Default starting parameters for this problem.
    pub fn initial_params(&self) -> ModelParams {
        self.init.clone()
    }

    /// Objective before and after each of `iters` plain EM updates from
    /// `start`, without the safeguards used by [`Fitter::converge`].
    pub fn em_trace(&mut self, members: &[Member], start: ModelParams, iters: usize) -> Vec<f64> {
        for m in members {
            self.ensure_cross(m.col);
        }
        let g = self.gram(members, None);
        let p = update_proportions(counts(members, self.prob.n_candidates()), self.pseudo);
        let mut params = start;
        let mut trace = vec![self.objective(&g, members, &params, p)];
        for _ in 0..iters {
            params = em_update(self.prob, &g, &params).0;
            trace.push(self.objective(&g, members, &params, p));
        }
        trace
    }

    /// Short EM run followed by a profile polish; used to rank candidate
    /// moves. EM alone crawls when the slab variance heads to zero.
    fn quick_fit(
        &self,
        g: &ModelGram,
        members: &[Member],
        start: ModelParams,
        iters: usize,
    ) -> f64 {
        let (state, _) = self.run_em(g, members, start, iters);
        match profile_polish(self.prob, g, &state.params) {
            Some(polished) => self
                .objective(g, members, &polished, state.proportions)
                .max(state.loglik),
            None => state.loglik,
        }
    }

    fn start_for(&self, incumbent: &FitState) -> ModelParams {
        if incumbent.members.is_empty() {
            ModelParams {
                beta: incumbent.params.beta.clone(),
                ..self.init.clone()
            }
        } else {
            incumbent.params.clone()
        }
    }

    /// Signed score `x_k' V⁻¹ r` and precision `x_k' V⁻¹ x_k` for a candidate
    /// outside the working model.
    fn score(&self, g: &ModelGram, state: &FitState, k: usize) -> (f64, f64) {
        let prob = self.prob;
        let th = &state.params;
        let s = g.dim();
        let gk = DVector::from_iterator(
            s,
            state.members.iter().map(|m| m.sign * self.cross[&m.col][k]),
        );
        let xr = prob.xy[k] - (prob.xa.row(k) * &th.beta)[0] - th.mu * gk.sum();
        if s == 0 {
            return (xr / th.sigma2_e, prob.diag[k] / th.sigma2_e);
        }
        let inner = DMatrix::identity(s, s) * (th.sigma2_e / th.sigma2) + &g.ww;
        let m = linalg::spd_inverse(&inner).unwrap_or_else(|_| DMatrix::zeros(s, s));
        let wr = &g.wy - g.aw.transpose() * &th.beta - &g.ww * DVector::from_element(s, th.mu);
        let h = (xr - gk.dot(&(&m * wr))) / th.sigma2_e;
        let q = (prob.diag[k] - gk.dot(&(&m * &gk))) / th.sigma2_e;
        (h, q)
    }

    /// Conditional posterior of γ_k for every candidate, holding the other
    /// indicators and all parameters fixed.
    pub fn posterior_table(
        &mut self,
        state: &FitState,
        locked_out: &BTreeSet<usize>,
    ) -> PosteriorTable {
        for m in &state.members {
            self.ensure_cross(m.col);
        }
        let g = self.gram(&state.members, None);
        let p = state.proportions;
        let th = &state.params;
        let mut rows = BTreeMap::new();
        let softmax = |l: [f64; 3]| {
            let mx = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e = l.map(|v| (v - mx).exp());
            let z: f64 = e.iter().sum();
            e.map(|v| v / z)
        };
        let ln = |v: f64| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
        for &k in &self.prob.candidates {
            if locked_out.contains(&k) {
                rows.insert(k, [0.0, 1.0, 0.0]);
                continue;
            }
            if let Some(pos) = state.members.iter().position(|m| m.col == k) {
                let mut lls = [0.0; 3];
                for (ci, sign) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
                    let mut members = state.members.clone();
                    if sign == 0.0 {
                        members.remove(pos);
                    } else {
                        members[pos].sign = sign;
                    }
                    let gm = self.gram(&members, None);
                    lls[ci] = ln(p[ci]) + loglik_y(self.prob, &gm, th);
                }
                rows.insert(k, softmax(lls));
            } else {
                let (h, q) = self.score(&g, state, k);
                let s2 = th.sigma2;
                let delta = |c: f64| {
                    -0.5 * (1.0 + s2 * q).ln() + c * th.mu * h - 0.5 * th.mu * th.mu * q
                        + 0.5 * s2 * (h - c * th.mu * q).powi(2) / (1.0 + s2 * q)
                };
                rows.insert(
                    k,
                    softmax([ln(p[0]) + delta(-1.0), ln(p[1]), ln(p[2]) + delta(1.0)]),
                );
            }
        }
        PosteriorTable { rows }
    }
}

fn initial_params(prob: &Problem) -> ModelParams {
    let n = prob.n as f64;
    let ybar = prob.ay[0] / n;
    let mut slopes: Vec<f64> = prob
        .candidates
        .iter()
        .map(|&k| {
            let d = prob.diag[k];
            if d > 0.0 {
                ((prob.xy[k] - ybar * prob.xa[(k, 0)]) / d).abs()
            } else {
                0.0
            }
        })
        .collect();
    slopes.sort_by(|a, b| b.total_cmp(a));
    slopes.truncate(10);
    let mu = if slopes.is_empty() {
        0.0
    } else {
        slopes.iter().sum::<f64>() / slopes.len() as f64
    };
    let var = if slopes.len() > 1 {
        slopes.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / (slopes.len() - 1) as f64
    } else {
        0.0
    };
    let sigma2 = if var > SIGMA2_FLOOR {
        var
    } else {
        (0.1 * mu * mu).max(1e-6 * prob.var_y)
    };
    ModelParams {
        beta: &prob.aa_inv * &prob.ay,
        mu,
        sigma2,
        sigma2_e: prob.var_y.max(f64::MIN_POSITIVE),
    }
}

/// One EM iteration for a fixed working selection: the E-step yields the
/// posterior of the random coefficients and the component posterior table,
/// the M-step updates (p_L, p_0, p_R, μ, σ², σ_e²) and the locked-in
/// coefficients. Returns the new mixture, the table computed at the incoming
/// parameters, and the objective at the new parameters.
pub fn em_step(
    prob: &Problem,
    members: &[Member],
    mixture: &MixtureParams,
    beta: Option<&DVector<f64>>,
    config: &SemmsConfig,
) -> Result<(MixtureParams, PosteriorTable, f64)> {
    if !(mixture.sigma2 > 0.0 && mixture.sigma2_e > 0.0) {
        return Err(Error::invalid("variances must be positive"));
    }
    let mut fitter = Fitter::new(prob, config.clone())?;
    for m in members {
        fitter.ensure_cross(m.col);
    }
    let params = ModelParams {
        beta: beta.cloned().unwrap_or_else(|| &prob.aa_inv * &prob.ay),
        mu: mixture.mu,
        sigma2: mixture.sigma2,
        sigma2_e: mixture.sigma2_e,
    };
    let p = [mixture.p_l, mixture.p_0, mixture.p_r];
    let g = fitter.gram(members, None);
    let incoming = FitState {
        members: members.to_vec(),
        params: params.clone(),
        proportions: p,
        loglik: fitter.objective(&g, members, &params, p),
    };
    let table = fitter.posterior_table(&incoming, &BTreeSet::new());
    let (next, floored) = em_update(prob, &g, &params);
    let p_new = update_proportions(counts(members, prob.n_candidates()), fitter.pseudo);
    let out = MixtureParams {
        p_l: p_new[0],
        p_0: p_new[1],
        p_r: p_new[2],
        mu: next.mu,
        sigma2: next.sigma2,
        sigma2_e: next.sigma2_e,
    };
    let value = fitter.objective(&g, members, &next, p_new);
    if floored {
        return Err(Error::DegenerateComponent(next.sigma2));
    }
    Ok((out, table, value))
}

fn correlation(prob: &Problem, cross: &DVector<f64>, a: usize, b: usize) -> f64 {
    cross[b] / (prob.diag[a] * prob.diag[b]).sqrt()
}

#[derive(Debug, Clone, Copy)]
enum Move {
    Add(usize, f64),
    Remove(usize),
}

impl Move {
    fn col(&self) -> usize {
        match *self {
            Move::Add(c, _) | Move::Remove(c) => c,
        }
    }
}

/// Greedy add/remove search over a standardized design.
pub fn greedy_search(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    locked_in: &BTreeSet<usize>,
    config: &SemmsConfig,
) -> Result<SemmsResult> {
    let prob = Problem::new(x, y, locked_in)?;
    let mut fitter = Fitter::new(&prob, config.clone())?;
    let max_iter = config.max_greedy_iter.unwrap_or(2 * x.ncols());

    let start = fitter.init.clone();
    let mut state = fitter.converge(&[], start);
    let mut trace = vec![state.loglik];
    let mut locked_out: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let mut converged = false;
    let mut warnings = Vec::new();

    for _ in 0..max_iter {
        let next = if config.greedy {
            best_single_move(&mut fitter, &state, &locked_out)
        } else {
            batch_move(&mut fitter, &state, &locked_out)
                .or_else(|| best_single_move(&mut fitter, &state, &locked_out))
        };
        let Some((new_state, added)) = next else {
            converged = true;
            break;
        };
        assert!(
            new_state.loglik >= state.loglik - 1e-9,
            "accepted move decreased the objective: {} -> {}",
            state.loglik,
            new_state.loglik
        );
        state = new_state;
        trace.push(state.loglik);
        for k in added {
            apply_lockout(&mut fitter, &state, k, &mut locked_out);
        }
        refresh_lockout(&fitter, &state, &mut locked_out);
    }
    if !converged {
        warnings.push(format!("greedy search stopped after {max_iter} iterations"));
    }
    if fitter.floor_hits > 0 {
        warnings.push(format!(
            "slab variance reached its floor {SIGMA2_FLOOR:e} in {} EM updates",
            fitter.floor_hits
        ));
    }

    // Orient so that μ ≥ 0; C_R then carries positive effects.
    if state.params.mu < 0.0 {
        state.params.mu = -state.params.mu;
        for m in state.members.iter_mut() {
            m.sign = -m.sign;
        }
        state.proportions.swap(0, 2);
    }

    let lo_set: BTreeSet<usize> = locked_out.keys().copied().collect();
    let posteriors = fitter.posterior_table(&state, &lo_set);
    let mut signs = BTreeMap::new();
    for m in &state.members {
        let w = posteriors.get(m.col).unwrap_or([0.0, 0.0, 0.0]);
        let s = if w[2] >= w[0] { 1 } else { -1 };
        signs.insert(m.col, s);
    }
    let mut selected: Vec<usize> = state.members.iter().map(|m| m.col).collect();
    selected.sort_unstable();
    let mut refit_columns: Vec<usize> = prob
        .locked_in
        .iter()
        .copied()
        .chain(selected.iter().copied())
        .collect();
    refit_columns.sort_unstable();
    let ols_refit = ols_fit(&x.select_columns(&refit_columns), y, true)?;

    Ok(SemmsResult {
        selected,
        locked_in: prob.locked_in.clone(),
        locked_out: locked_out
            .into_iter()
            .map(|(index, (trigger, correlation))| LockOut {
                index,
                trigger,
                correlation,
            })
            .collect(),
        signs,
        mixture: state.mixture(),
        posteriors,
        final_loglik: state.loglik,
        loglik_trace: trace,
        refit_columns,
        ols_refit,
        converged,
        warnings,
    })
}

/// Evaluates every single add and remove, returns the converged best move
/// if it improves the objective by more than `tol`.
fn best_single_move(
    fitter: &mut Fitter,
    state: &FitState,
    locked_out: &BTreeMap<usize, (usize, f64)>,
) -> Option<(FitState, Vec<usize>)> {
    let prob = fitter.prob;
    let g = fitter.gram(&state.members, None);
    let mut moves: Vec<Move> = Vec::new();
    for &k in &prob.candidates {
        if state.members.iter().any(|m| m.col == k) {
            moves.push(Move::Remove(k));
        } else if !locked_out.contains_key(&k) {
            let (h, _) = fitter.score(&g, state, k);
            moves.push(Move::Add(k, if h < 0.0 { -1.0 } else { 1.0 }));
        }
    }
    let start = fitter.start_for(state);
    let iters = fitter.config.candidate_em_iter;
    let f: &Fitter = fitter;
    let scored: Vec<(f64, Move)> = moves
        .par_iter()
        .map(|mv| {
            let (members, extra) = match *mv {
                Move::Add(k, sign) => {
                    let mut m = state.members.clone();
                    m.push(Member { col: k, sign });
                    (m, Some(f.prob.cross(k)))
                }
                Move::Remove(k) => (
                    state
                        .members
                        .iter()
                        .copied()
                        .filter(|m| m.col != k)
                        .collect(),
                    None,
                ),
            };
            let g = f.gram(&members, extra.as_ref());
            let st = if members.is_empty() {
                f.start_for(&FitState {
                    members: vec![],
                    ..state.clone()
                })
            } else {
                start.clone()
            };
            (f.quick_fit(&g, &members, st, iters), *mv)
        })
        .collect();
    // Largest gain; ties go to the lowest column index.
    let (best_val, best) =
        scored
            .into_iter()
            .fold(None::<(f64, Move)>, |acc, (v, m)| match acc {
                None => Some((v, m)),
                Some((bv, bm)) => {
                    if v > bv || (v == bv && m.col() < bm.col()) {
                        Some((v, m))
                    } else {
                        Some((bv, bm))
                    }
                }
            })?;
    let needed = match best {
        Move::Add(..) => fitter.config.tol.max(fitter.config.min_gain),
        Move::Remove(_) => fitter.config.tol,
    };
    if !(best_val > state.loglik + needed) {
        return None;
    }
    let (members, added) = match best {
        Move::Add(k, sign) => {
            let mut m = state.members.clone();
            m.push(Member { col: k, sign });
            (m, vec![k])
        }
        Move::Remove(k) => (
            state
                .members
                .iter()
                .copied()
                .filter(|m| m.col != k)
                .collect(),
            vec![],
        ),
    };
    let start = if members.is_empty() {
        fitter.init.clone()
    } else {
        fitter.start_for(state)
    };
    let start = ModelParams {
        beta: state.params.beta.clone(),
        ..start
    };
    let converged = fitter.converge(&members, start);
    Some((converged, added))
}

/// Non-greedy step: move every candidate to its posterior-mode component at
/// once, keeping the result only if the objective improves.
fn batch_move(
    fitter: &mut Fitter,
    state: &FitState,
    locked_out: &BTreeMap<usize, (usize, f64)>,
) -> Option<(FitState, Vec<usize>)> {
    let lo: BTreeSet<usize> = locked_out.keys().copied().collect();
    let table = fitter.posterior_table(state, &lo);
    let mut members: Vec<Member> = Vec::new();
    let mut added = Vec::new();
    let mut order: Vec<(usize, [f64; 3])> = table.rows.iter().map(|(k, w)| (*k, *w)).collect();
    order.sort_by(|a, b| {
        (b.1[1] < a.1[1])
            .cmp(&(a.1[1] < b.1[1]))
            .then(a.1[1].total_cmp(&b.1[1]))
            .then(a.0.cmp(&b.0))
    });
    let mut blocked: BTreeSet<usize> = lo.clone();
    for (k, w) in order {
        if blocked.contains(&k) {
            continue;
        }
        let mode = if w[0] > w[1] && w[0] >= w[2] {
            -1.0
        } else if w[2] > w[1] && w[2] > w[0] {
            1.0
        } else {
            continue;
        };
        if !state.members.iter().any(|m| m.col == k) {
            added.push(k);
        }
        members.push(Member { col: k, sign: mode });
        fitter.ensure_cross(k);
        let c = fitter.cross[&k].clone();
        for &j in &fitter.prob.candidates {
            if j != k && correlation(fitter.prob, &c, k, j).abs() > fitter.config.lockout_threshold
            {
                blocked.insert(j);
            }
        }
    }
    let same = members.len() == state.members.len()
        && members.iter().all(|m| {
            state
                .members
                .iter()
                .any(|s| s.col == m.col && s.sign == m.sign)
        });
    if same {
        return None;
    }
    let start = fitter.start_for(state);
    let fit = fitter.converge(&members, start);
    let needed = fitter.config.tol.max(if added.is_empty() {
        0.0
    } else {
        fitter.config.min_gain
    });
    (fit.loglik > state.loglik + needed).then_some((fit, added))
}

fn apply_lockout(
    fitter: &mut Fitter,
    state: &FitState,
    k: usize,
    locked_out: &mut BTreeMap<usize, (usize, f64)>,
) {
    fitter.ensure_cross(k);
    let c = &fitter.cross[&k];
    for &j in &fitter.prob.candidates {
        if j == k || locked_out.contains_key(&j) || state.members.iter().any(|m| m.col == j) {
            continue;
        }
        let r = correlation(fitter.prob, c, k, j);
        if r.abs() > fitter.config.lockout_threshold {
            locked_out.insert(j, (k, r));
        }
    }
}

/// Re-attributes or releases locked-out variables whose trigger left the model.
fn refresh_lockout(
    fitter: &Fitter,
    state: &FitState,
    locked_out: &mut BTreeMap<usize, (usize, f64)>,
) {
    let members: Vec<usize> = state.members.iter().map(|m| m.col).collect();
    let stale: Vec<usize> = locked_out
        .iter()
        .filter(|(_, (t, _))| !members.contains(t))
        .map(|(j, _)| *j)
        .collect();
    for j in stale {
        locked_out.remove(&j);
        for &m in &members {
            let r = correlation(fitter.prob, &fitter.cross[&m], m, j);
            if r.abs() > fitter.config.lockout_threshold {
                locked_out.insert(j, (m, r));
                break;
            }
        }
    }
}

/// Standardizes the predictors, runs the greedy search, and refits the
/// selected model by OLS on the original scale.
pub fn semms_fit(d: &Dataset, config: &SemmsConfig) -> Result<SemmsResult> {
    let (xs, _) = standardize_matrix(d.predictors(), d.column_names())?;
    let mut result = greedy_search(&xs, d.response(), d.locked_in(), config)?;
    result.ols_refit = ols_fit(
        &d.predictors().select_columns(&result.refit_columns),
        d.response(),
        true,
    )?;
    Ok(result)
}
