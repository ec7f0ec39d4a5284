//! Two-step mediation analysis with high-dimensional selection of either the
//! mediators or the exposures.
//!
//! Paths follow the usual diagram: `a` is exposure → mediator, `b` is
//! mediator → response adjusted for the exposure, `c′` the direct effect and
//! `a·b` the indirect effect.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ols_fit, Dataset};
use crate::error::{Error, Result};
use crate::lasso::{cv_select, LassoConfig};
use crate::linalg::hstack;
use crate::semms::{semms_fit, SemmsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// One exposure, many putative mediators.
    MultipleM,
    /// Many putative exposures, one mediator.
    MultipleX,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Semms,
    Lasso,
}

/// How the lasso, which cannot lock variables in, screens mediators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LassoMediatorStrategy {
    /// Exposure as the response, mediators as candidates.
    #[default]
    ExposureAsResponse,
    /// Response on mediators and exposure, exposure penalized like the rest.
    ExposureAsCandidate,
    /// Response on the mediators alone.
    MediatorsOnly,
}

#[derive(Debug, Clone)]
pub struct MediationDesign {
    pub y: DVector<f64>,
    /// N × 1 for multiple mediators, N × P_X for multiple exposures.
    pub x: DMatrix<f64>,
    /// N × P_M for multiple mediators, N × 1 for multiple exposures.
    pub mediators: DMatrix<f64>,
    pub scenario: Scenario,
    pub selector: SelectorKind,
    pub lasso_strategy: LassoMediatorStrategy,
    pub semms: SemmsConfig,
    pub lasso: LassoConfig,
}

impl MediationDesign {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        mediators: DMatrix<f64>,
        scenario: Scenario,
        selector: SelectorKind,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || mediators.nrows() != n {
            return Err(Error::invalid(
                "mediation blocks have inconsistent row counts",
            ));
        }
        let ok = match scenario {
            Scenario::MultipleM => x.ncols() == 1 && mediators.ncols() >= 1,
            Scenario::MultipleX => mediators.ncols() == 1 && x.ncols() >= 1,
        };
        if !ok {
            return Err(Error::invalid("scenario does not match block shapes"));
        }
        Ok(MediationDesign {
            y,
            x,
            mediators,
            scenario,
            selector,
            lasso_strategy: LassoMediatorStrategy::default(),
            semms: SemmsConfig::default(),
            lasso: LassoConfig::default(),
        })
    }
}

/// Selected candidates plus, for SEMMS, the lock-out map `(index, trigger)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: Vec<usize>,
    pub locked_out: Vec<(usize, usize)>,
}

impl Selection {
    /// The selected index standing in for `j`: `j` itself, or the variable
    /// that locked it out.
    pub fn representative(&self, j: usize) -> Option<usize> {
        if self.selected.contains(&j) {
            Some(j)
        } else {
            self.locked_out
                .iter()
                .find(|(i, _)| *i == j)
                .map(|(_, t)| *t)
        }
    }
}

fn run_semms(
    candidates: &DMatrix<f64>,
    locked: Option<&DMatrix<f64>>,
    response: &DVector<f64>,
    config: &SemmsConfig,
) -> Result<Selection> {
    let p = candidates.ncols();
    let (predictors, locked_in) = match locked {
        Some(l) => (hstack(&[candidates, l]), (p..p + l.ncols()).collect()),
        None => (candidates.clone(), Default::default()),
    };
    let d = Dataset::unnamed(predictors, response.clone())?.with_locked_in(locked_in)?;
    let r = semms_fit(&d, config)?;
    Ok(Selection {
        selected: r.selected.into_iter().filter(|&j| j < p).collect(),
        locked_out: r
            .locked_out
            .into_iter()
            .filter(|l| l.index < p)
            .map(|l| (l.index, l.trigger))
            .collect(),
    })
}

fn run_lasso(
    candidates: &DMatrix<f64>,
    response: &DVector<f64>,
    config: &LassoConfig,
    keep_below: usize,
) -> Result<Selection> {
    let fit = cv_select(candidates, response, config)?;
    Ok(Selection {
        selected: fit
            .support
            .into_iter()
            .filter(|&j| j < keep_below)
            .collect(),
        locked_out: Vec::new(),
    })
}

/// Screens the mediators. SEMMS fits `y ~ X + Σ M_j` with the exposure locked
/// in; the lasso uses `d.lasso_strategy`.
pub fn select_mediators(d: &MediationDesign) -> Result<Selection> {
    if d.scenario != Scenario::MultipleM {
        return Err(Error::invalid(
            "select_mediators needs the multiple-mediator scenario",
        ));
    }
    let pm = d.mediators.ncols();
    match d.selector {
        SelectorKind::Semms => run_semms(&d.mediators, Some(&d.x), &d.y, &d.semms),
        SelectorKind::Lasso => match d.lasso_strategy {
            LassoMediatorStrategy::ExposureAsResponse => {
                run_lasso(&d.mediators, &d.x.column(0).into_owned(), &d.lasso, pm)
            }
            LassoMediatorStrategy::ExposureAsCandidate => {
                run_lasso(&hstack(&[&d.mediators, &d.x]), &d.y, &d.lasso, pm)
            }
            LassoMediatorStrategy::MediatorsOnly => run_lasso(&d.mediators, &d.y, &d.lasso, pm),
        },
    }
}

/// Screens the exposures with the mediator as the response.
pub fn select_main_effects(d: &MediationDesign) -> Result<Selection> {
    if d.scenario != Scenario::MultipleX {
        return Err(Error::invalid(
            "select_main_effects needs the multiple-exposure scenario",
        ));
    }
    let m = d.mediators.column(0).into_owned();
    match d.selector {
        SelectorKind::Semms => run_semms(&d.x, None, &m, &d.semms),
        SelectorKind::Lasso => run_lasso(&d.x, &m, &d.lasso, d.x.ncols()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

impl PathEstimate {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Complete,
    Partial,
    None,
}

/// Classification from the three path p-values of a single mediator.
pub fn classify(p_a: f64, p_b: f64, p_c_prime: f64, alpha: f64) -> Classification {
    classify_many(&[(p_a, p_b)], p_c_prime, alpha)
}

/// Several mediators: mediation requires at least one `(a_j, b_j)` pair
/// jointly significant; `c′` decides complete versus partial.
pub fn classify_many(pairs: &[(f64, f64)], p_c_prime: f64, alpha: f64) -> Classification {
    let mediated = pairs.iter().any(|&(a, b)| a < alpha && b < alpha);
    match (mediated, p_c_prime < alpha) {
        (true, false) => Classification::Complete,
        (true, true) => Classification::Partial,
        (false, _) => Classification::None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MediationFit {
    /// Per mediator: coefficient on the focal exposure in `M_j ~ exposures`.
    pub a: Vec<PathEstimate>,
    /// Per mediator, from `y ~ mediators + exposures`.
    pub b: Vec<PathEstimate>,
    /// Per exposure, from the same regression.
    pub c_prime: Vec<PathEstimate>,
    /// Focal exposure's slope in `y ~ exposures`.
    pub total: PathEstimate,
    pub indirect: Vec<f64>,
    pub classification: Classification,
    pub selected_mediators: Vec<usize>,
    pub focal_exposure: usize,
    pub alpha: f64,
}

impl MediationFit {
    pub fn a_hat(&self) -> PathEstimate {
        self.a[0]
    }
    pub fn b_hat(&self) -> PathEstimate {
        self.b[0]
    }
    pub fn c_prime_hat(&self) -> PathEstimate {
        self.c_prime[self.focal_exposure]
    }
}

fn path(fit: &crate::data::OlsFit, j: usize) -> PathEstimate {
    PathEstimate {
        estimate: fit.coefficients[j],
        se: fit.se[j],
        t: fit.t_stats[j],
        p: fit.p_values[j],
    }
}

/// Steps 1–3 with every regression carrying an intercept. `exposures` is
/// N × e, `mediators` N × s with s ≥ 1; `focal_exposure` picks the column
/// whose direct effect drives the classification.
pub fn mediation_fit_with(
    y: &DVector<f64>,
    exposures: &DMatrix<f64>,
    mediators: &DMatrix<f64>,
    focal_exposure: usize,
    alpha: f64,
) -> Result<MediationFit> {
    if mediators.ncols() == 0 {
        return Err(Error::EmptySelection);
    }
    if exposures.ncols() == 0 || focal_exposure >= exposures.ncols() {
        return Err(Error::invalid("focal exposure out of range"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    let s = mediators.ncols();
    let total_fit = ols_fit(exposures, y, true)?;
    let total = path(&total_fit, 1 + focal_exposure);
    let mut a = Vec::with_capacity(s);
    for j in 0..s {
        let fit = ols_fit(exposures, &mediators.column(j).into_owned(), true)?;
        a.push(path(&fit, 1 + focal_exposure));
    }
    let step2 = ols_fit(&hstack(&[mediators, exposures]), y, true)?;
    let b: Vec<PathEstimate> = (0..s).map(|j| path(&step2, 1 + j)).collect();
    let c_prime: Vec<PathEstimate> = (0..exposures.ncols())
        .map(|j| path(&step2, 1 + s + j))
        .collect();
    let indirect = a
        .iter()
        .zip(&b)
        .map(|(a, b)| a.estimate * b.estimate)
        .collect();
    let pairs: Vec<(f64, f64)> = a.iter().zip(&b).map(|(a, b)| (a.p, b.p)).collect();
    let classification = classify_many(&pairs, c_prime[focal_exposure].p, alpha);
    Ok(MediationFit {
        a,
        b,
        c_prime,
        total,
        indirect,
        classification,
        selected_mediators: (0..s).collect(),
        focal_exposure,
        alpha,
    })
}

/// Single-exposure form.
pub fn mediation_fit(
    y: &DVector<f64>,
    x: &DVector<f64>,
    mediators: &DMatrix<f64>,
    alpha: f64,
) -> Result<MediationFit> {
    let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    mediation_fit_with(y, &xm, mediators, 0, alpha)
}

/// Selection followed by the step-2 fit on the chosen block.
pub fn analyze(d: &MediationDesign, alpha: f64) -> Result<(Selection, MediationFit)> {
    match d.scenario {
        Scenario::MultipleM => {
            let sel = select_mediators(d)?;
            if sel.selected.is_empty() {
                return Err(Error::EmptySelection);
            }
            let m = d.mediators.select_columns(&sel.selected);
            let mut fit = mediation_fit_with(&d.y, &d.x, &m, 0, alpha)?;
            fit.selected_mediators = sel.selected.clone();
            Ok((sel, fit))
        }
        Scenario::MultipleX => {
            let sel = select_main_effects(d)?;
            if sel.selected.is_empty() {
                return Err(Error::EmptySelection);
            }
            let xs = d.x.select_columns(&sel.selected);
            let fit = mediation_fit_with(&d.y, &xs, &d.mediators, 0, alpha)?;
            Ok((sel, fit))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn classification_truth_table() {
        let alpha = 0.05;
        let (sig, ns) = (0.01, 0.5);
        for a in [sig, ns] {
            for b in [sig, ns] {
                for c in [sig, ns] {
                    let want = if a < alpha && b < alpha {
                        if c < alpha {
                            Classification::Partial
                        } else {
                            Classification::Complete
                        }
                    } else {
                        Classification::None
                    };
                    assert_eq!(classify(a, b, c, alpha), want, "a={a} b={b} c={c}");
                }
            }
        }
    }

    #[test]
    fn noiseless_paths_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 30;
        let x = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let xm = DMatrix::from_column_slice(n, 1, x.as_slice());
        let m = DMatrix::from_fn(n, 1, |i, _| 1.0 + 3.0 * x[i]);
        let a = ols_fit(&xm, &m.column(0).into_owned(), true).unwrap();
        assert!((a.coefficients[1] - 3.0).abs() < 1e-10);
        // With M an exact function of x the step-2 design is collinear.
        let y = DVector::from_fn(n, |i, _| 1.0 + m[(i, 0)]);
        assert!(matches!(
            mediation_fit(&y, &x, &m, 0.05),
            Err(Error::RankDeficient { .. })
        ));

        // A deterministic wiggle breaks the collinearity; y stays noiseless.
        let m2 = DMatrix::from_fn(n, 1, |i, _| 1.0 + 3.0 * x[i] + 0.1 * (i as f64 * 0.7).sin());
        let y2 = DVector::from_fn(n, |i, _| 1.0 + m2[(i, 0)]);
        let fit = mediation_fit(&y2, &x, &m2, 0.05).unwrap();
        assert!((fit.b_hat().estimate - 1.0).abs() < 1e-10);
        assert!(fit.c_prime_hat().estimate.abs() < 1e-10);
    }

    #[test]
    fn complete_mediation_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100;
        let e = Normal::new(0.0, 0.2f64.sqrt()).unwrap();
        let x = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let m = DMatrix::from_fn(n, 1, |i, _| 1.0 + 3.0 * x[i] + e.sample(&mut rng));
        let y = DVector::from_fn(n, |i, _| 1.0 + m[(i, 0)] + e.sample(&mut rng));
        let fit = mediation_fit(&y, &x, &m, 0.05).unwrap();
        assert!(fit.b_hat().significant(0.05));
        assert!((fit.indirect[0] - fit.a_hat().estimate * fit.b_hat().estimate).abs() < 1e-15);
    }

    #[test]
    fn representative_follows_lockout() {
        let s = Selection {
            selected: vec![3, 7],
            locked_out: vec![(0, 3), (5, 7)],
        };
        assert_eq!(s.representative(3), Some(3));
        assert_eq!(s.representative(0), Some(3));
        assert_eq!(s.representative(1), None);
    }

    #[test]
    fn scenario_shape_checked() {
        let n = 10;
        let r = MediationDesign::new(
            DVector::zeros(n),
            DMatrix::zeros(n, 2),
            DMatrix::zeros(n, 3),
            Scenario::MultipleM,
            SelectorKind::Semms,
        );
        assert!(r.is_err());
    }
}
