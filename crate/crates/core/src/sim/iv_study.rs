//! Replication driver and metrics for the instrument-selection study.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::iv::{self, IvProblem, Method, RobustFlavor};
use crate::lasso::{cv_select, LassoConfig};
use crate::linalg;
use crate::mediation::SelectorKind;
use crate::semms::{semms_fit, SemmsConfig};
use crate::sim::design::{IvData, IvGenerator, IvSimSpec};
use crate::sim::{fmt_num, mean_or_nan};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IvStudyConfig {
    pub spec: IvSimSpec,
    pub selectors: Vec<SelectorKind>,
    pub estimators: Vec<Method>,
    pub semms: SemmsConfig,
    pub lasso: LassoConfig,
    pub robust: RobustFlavor,
    /// Significance level of the coverage interval and of `H0: β = beta`.
    pub alpha: f64,
}

impl Default for IvStudyConfig {
    fn default() -> Self {
        IvStudyConfig {
            spec: IvSimSpec::default(),
            selectors: vec![SelectorKind::Semms, SelectorKind::Lasso],
            estimators: vec![Method::Tsls, Method::Fuller, Method::Liml],
            semms: SemmsConfig::default(),
            lasso: LassoConfig::default(),
            robust: RobustFlavor::Hc0,
            alpha: 0.05,
        }
    }
}

/// One row per selector × estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvRow {
    pub selector: SelectorKind,
    pub estimator: Method,
    pub n_zero: usize,
    pub bias: f64,
    pub mad: f64,
    pub tp: f64,
    pub fp: f64,
    pub mean_p: f64,
    pub cp: f64,
    /// Replications entering bias, MAD, p-value and coverage.
    pub contributing: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IvStudy {
    pub version: String,
    pub config: IvStudyConfig,
    pub rows: Vec<IvRow>,
}

#[derive(Debug, Clone)]
struct EstimateOutcome {
    beta: f64,
    p: f64,
    covers: bool,
}

#[derive(Debug, Clone)]
enum SelectorOutcome {
    Failed,
    Empty,
    Fitted {
        tp: usize,
        fp: usize,
        estimates: Vec<Option<EstimateOutcome>>,
    },
}

/// Instrument indices chosen by `selector` for the first stage `x ~ Z`.
pub fn select_instruments(
    data: &IvData,
    selector: SelectorKind,
    semms: &SemmsConfig,
    lasso: &LassoConfig,
) -> Result<Vec<usize>> {
    match selector {
        SelectorKind::Semms => {
            let d = Dataset::unnamed(data.z.clone(), data.x.clone())?;
            Ok(semms_fit(&d, semms)?.selected)
        }
        SelectorKind::Lasso => Ok(cv_select(&data.z, &data.x, lasso)?.support),
    }
}

fn estimate(
    problem: &IvProblem,
    method: Method,
    config: &IvStudyConfig,
) -> Result<EstimateOutcome> {
    let est = match method {
        Method::Ols => iv::ols(problem, config.robust)?,
        Method::Tsls => iv::tsls(problem, config.robust)?,
        Method::Liml => iv::liml(problem, config.robust)?,
        Method::Fuller => iv::fuller(problem, 1.0, config.robust)?,
    };
    let beta = config.spec.beta;
    let p = est.p_against(0, beta);
    // The Wald interval at level 1 − α covers `beta` exactly when p ≥ α.
    Ok(EstimateOutcome {
        beta: est.beta[0],
        p,
        covers: p >= config.alpha,
    })
}

fn run_replication(gen: &IvGenerator, rep: u64, config: &IvStudyConfig) -> Vec<SelectorOutcome> {
    let (data, mut rng) = gen.generate_with_rng(rep);
    let lasso = LassoConfig {
        cv_seed: rng.random(),
        ..config.lasso.clone()
    };
    config
        .selectors
        .iter()
        .map(|&sel| {
            let chosen = match select_instruments(&data, sel, &config.semms, &lasso) {
                Ok(c) => c,
                Err(_) => return SelectorOutcome::Failed,
            };
            if chosen.is_empty() {
                return SelectorOutcome::Empty;
            }
            let tp = chosen
                .iter()
                .filter(|j| data.true_support.contains(j))
                .count();
            let fp = chosen.len() - tp;
            let problem = IvProblem::new(
                data.z.select_columns(&chosen),
                linalg::column_matrix(&data.x),
                linalg::intercept(data.y.len()),
                data.y.clone(),
            );
            let estimates = match problem {
                Ok(p) => config
                    .estimators
                    .iter()
                    .map(|&m| estimate(&p, m, config).ok())
                    .collect(),
                Err(_) => vec![None; config.estimators.len()],
            };
            SelectorOutcome::Fitted { tp, fp, estimates }
        })
        .collect()
}

/// Runs all replications (in parallel) and aggregates in replication order.
pub fn run_iv_study(config: &IvStudyConfig) -> Result<IvStudy> {
    config.semms.validate()?;
    let gen = IvGenerator::new(&config.spec)?;
    let outcomes: Vec<Vec<SelectorOutcome>> = (0..config.spec.b as u64)
        .into_par_iter()
        .map(|rep| run_replication(&gen, rep, config))
        .collect();

    let mut rows = Vec::new();
    for (si, &selector) in config.selectors.iter().enumerate() {
        let mut n_zero = 0;
        let mut sel_failures = 0;
        let (mut tp_sum, mut fp_sum, mut nonempty) = (0usize, 0usize, 0usize);
        for rep in &outcomes {
            match &rep[si] {
                SelectorOutcome::Failed => sel_failures += 1,
                SelectorOutcome::Empty => n_zero += 1,
                SelectorOutcome::Fitted { tp, fp, .. } => {
                    tp_sum += tp;
                    fp_sum += fp;
                    nonempty += 1;
                }
            }
        }
        for (ei, &estimator) in config.estimators.iter().enumerate() {
            let (mut bias, mut mad, mut p_sum, mut cover, mut count, mut failures) =
                (0.0, 0.0, 0.0, 0usize, 0usize, sel_failures);
            for rep in &outcomes {
                if let SelectorOutcome::Fitted { estimates, .. } = &rep[si] {
                    match &estimates[ei] {
                        Some(e) => {
                            let d = e.beta - config.spec.beta;
                            bias += d;
                            mad += d.abs();
                            p_sum += e.p;
                            cover += usize::from(e.covers);
                            count += 1;
                        }
                        None => failures += 1,
                    }
                }
            }
            rows.push(IvRow {
                selector,
                estimator,
                n_zero,
                bias: mean_or_nan(bias, count),
                mad: mean_or_nan(mad, count),
                tp: mean_or_nan(tp_sum as f64, nonempty),
                fp: mean_or_nan(fp_sum as f64, nonempty),
                mean_p: mean_or_nan(p_sum, count),
                cp: mean_or_nan(cover as f64, count),
                contributing: count,
                failures,
            });
        }
    }
    Ok(IvStudy {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        rows,
    })
}

impl IvStudy {
    pub fn row(&self, selector: SelectorKind, estimator: Method) -> Option<&IvRow> {
        self.rows
            .iter()
            .find(|r| r.selector == selector && r.estimator == estimator)
    }

    /// Table layout with `#`-prefixed metadata lines.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(&format!("# version: {}\n", self.version));
        out.push_str(&format!(
            "# master_seed: {}\n",
            self.config.spec.master_seed
        ));
        out.push_str(&format!(
            "# config: {}\n",
            serde_json::to_string(&self.config)?
        ));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "selector",
            "estimator",
            "N0",
            "bias",
            "MAD",
            "TP",
            "FP",
            "p_value",
            "CP",
            "contributing",
            "failures",
        ])?;
        for r in &self.rows {
            w.write_record([
                selector_label(r.selector).to_string(),
                r.estimator.label().to_string(),
                r.n_zero.to_string(),
                fmt_num(r.bias),
                fmt_num(r.mad),
                fmt_num(r.tp),
                fmt_num(r.fp),
                fmt_num(r.mean_p),
                fmt_num(r.cp),
                r.contributing.to_string(),
                r.failures.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| crate::error::Error::invalid(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(out)
    }
}

pub(crate) fn selector_label(s: SelectorKind) -> &'static str {
    match s {
        SelectorKind::Semms => "SEMMS",
        SelectorKind::Lasso => "LASSO",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> IvStudyConfig {
        IvStudyConfig {
            spec: IvSimSpec {
                n: 60,
                p: 40,
                mu2: 30.0,
                b: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn smoke_run_has_one_row_per_method() {
        let s = run_iv_study(&IvStudyConfig {
            spec: IvSimSpec {
                b: 1,
                ..small().spec
            },
            ..small()
        })
        .unwrap();
        assert_eq!(s.rows.len(), 6);
    }

    #[test]
    fn accounting_identity() {
        let s = run_iv_study(&small()).unwrap();
        for r in &s.rows {
            assert_eq!(r.contributing + r.n_zero + r.failures, 4);
            assert!(r.cp.is_nan() || (0.0..=1.0).contains(&r.cp));
        }
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let cfg = small();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one
            .install(|| run_iv_study(&cfg))
            .unwrap()
            .to_csv()
            .unwrap();
        let b = four
            .install(|| run_iv_study(&cfg))
            .unwrap()
            .to_csv()
            .unwrap();
        assert_eq!(a, b);
    }
}
