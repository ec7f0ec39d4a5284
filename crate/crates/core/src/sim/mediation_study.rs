//! Replication driver and metrics for the mediation study.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lasso::LassoConfig;
use crate::mediation::{
    mediation_fit_with, select_main_effects, select_mediators, LassoMediatorStrategy,
    MediationDesign, Scenario, Selection, SelectorKind,
};
use crate::semms::SemmsConfig;
use crate::sim::design::{generate_mediation, MediationData, MediationSimSpec};
use crate::sim::iv_study::selector_label;
use crate::sim::{fmt_num, mean_or_nan};
use crate::stats;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MediationStudyConfig {
    pub spec: MediationSimSpec,
    pub selectors: Vec<SelectorKind>,
    pub semms: SemmsConfig,
    pub lasso: LassoConfig,
    pub lasso_strategy: LassoMediatorStrategy,
    pub alpha: f64,
}

impl Default for MediationStudyConfig {
    fn default() -> Self {
        MediationStudyConfig {
            spec: MediationSimSpec::default(),
            selectors: vec![SelectorKind::Semms, SelectorKind::Lasso],
            semms: SemmsConfig::default(),
            lasso: LassoConfig::default(),
            lasso_strategy: LassoMediatorStrategy::default(),
            alpha: 0.05,
        }
    }
}

/// Aggregates for one selector. `n_zero` counts replications where the true
/// variable was not found; `b_rate`, `c_rate`, `bias`, `mad` and `cp` are
/// conditional on finding it, `b_detect` is the unconditional share of
/// replications with the true variable found and `b` significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationRow {
    pub selector: SelectorKind,
    pub n_zero: usize,
    pub tp: f64,
    pub fp: f64,
    pub b_rate: f64,
    pub c_rate: f64,
    pub bias: f64,
    pub mad: f64,
    pub cp: f64,
    pub b_detect: f64,
    pub found: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MediationStudy {
    pub version: String,
    pub config: MediationStudyConfig,
    pub rows: Vec<MediationRow>,
}

#[derive(Debug, Clone)]
struct Step2 {
    b: f64,
    b_sig: bool,
    c_sig: bool,
    covers: bool,
}

#[derive(Debug, Clone)]
enum Outcome {
    Failed,
    Selected {
        tp: usize,
        fp: usize,
        step2: Option<Step2>,
    },
}

/// Candidates counted as true positives: selected or locked out by a
/// selected variable, and inside the valid set.
pub fn true_positives(sel: &Selection, v_true: &[usize]) -> usize {
    let mut hit: Vec<usize> = sel
        .selected
        .iter()
        .copied()
        .chain(sel.locked_out.iter().map(|(j, _)| *j))
        .filter(|j| v_true.contains(j))
        .collect();
    hit.sort_unstable();
    hit.dedup();
    hit.len()
}

pub fn false_positives(sel: &Selection, v_true: &[usize]) -> usize {
    sel.selected.iter().filter(|j| !v_true.contains(j)).count()
}

fn step2(
    data: &MediationData,
    scenario: Scenario,
    sel: &Selection,
    rep_col: usize,
    beta2: f64,
    alpha: f64,
) -> Result<Step2> {
    let pos = sel
        .selected
        .iter()
        .position(|&j| j == rep_col)
        .expect("representative is selected");
    let fit = match scenario {
        Scenario::MultipleM => {
            let m = data.mediators.select_columns(&sel.selected);
            let f = mediation_fit_with(&data.y, &data.x, &m, 0, alpha)?;
            (f.b[pos], f.c_prime[0])
        }
        Scenario::MultipleX => {
            let xs = data.x.select_columns(&sel.selected);
            let f = mediation_fit_with(&data.y, &xs, &data.mediators, pos, alpha)?;
            (f.b[0], f.c_prime[pos])
        }
    };
    let (b, c) = fit;
    let df = data.y.len() as f64 - 2.0 - sel.selected.len() as f64;
    let tcrit = stats::t_critical(alpha, df);
    Ok(Step2 {
        b: b.estimate,
        b_sig: b.significant(alpha),
        c_sig: c.significant(alpha),
        covers: (b.estimate - beta2).abs() <= tcrit * b.se,
    })
}

fn run_replication(config: &MediationStudyConfig, rep: u64) -> Vec<Outcome> {
    let Ok((data, mut rng)) = generate_mediation(&config.spec, rep) else {
        return vec![Outcome::Failed; config.selectors.len()];
    };
    let lasso = LassoConfig {
        cv_seed: rng.random(),
        ..config.lasso.clone()
    };
    let spec = &config.spec;
    config
        .selectors
        .iter()
        .map(|&selector| {
            let Ok(mut design) = MediationDesign::new(
                data.y.clone(),
                data.x.clone(),
                data.mediators.clone(),
                spec.scenario,
                selector,
            ) else {
                return Outcome::Failed;
            };
            design.semms = config.semms.clone();
            design.lasso = lasso.clone();
            design.lasso_strategy = config.lasso_strategy;
            let sel = match spec.scenario {
                Scenario::MultipleM => select_mediators(&design),
                Scenario::MultipleX => select_main_effects(&design),
            };
            let Ok(sel) = sel else {
                return Outcome::Failed;
            };
            let tp = true_positives(&sel, &data.v_true);
            let fp = false_positives(&sel, &data.v_true);
            let step2 = match sel.representative(0) {
                Some(col) => match step2(&data, spec.scenario, &sel, col, spec.beta2, config.alpha)
                {
                    Ok(s) => Some(s),
                    Err(_) => return Outcome::Failed,
                },
                None => None,
            };
            Outcome::Selected { tp, fp, step2 }
        })
        .collect()
}

pub fn run_mediation_study(config: &MediationStudyConfig) -> Result<MediationStudy> {
    config.spec.validate()?;
    config.semms.validate()?;
    let outcomes: Vec<Vec<Outcome>> = (0..config.spec.b as u64)
        .into_par_iter()
        .map(|rep| run_replication(config, rep))
        .collect();
    let beta2 = config.spec.beta2;
    let rows = config
        .selectors
        .iter()
        .enumerate()
        .map(|(si, &selector)| {
            let (mut n_zero, mut failures, mut ok) = (0usize, 0usize, 0usize);
            let (mut tp, mut fp) = (0usize, 0usize);
            let (mut found, mut b_sig, mut c_sig, mut cover) = (0usize, 0usize, 0usize, 0usize);
            let (mut bias, mut mad) = (0.0, 0.0);
            for rep in &outcomes {
                match &rep[si] {
                    Outcome::Failed => failures += 1,
                    Outcome::Selected {
                        tp: t,
                        fp: f,
                        step2,
                    } => {
                        ok += 1;
                        tp += t;
                        fp += f;
                        match step2 {
                            None => n_zero += 1,
                            Some(s) => {
                                found += 1;
                                b_sig += usize::from(s.b_sig);
                                c_sig += usize::from(s.c_sig);
                                cover += usize::from(s.covers);
                                bias += s.b - beta2;
                                mad += (s.b - beta2).abs();
                            }
                        }
                    }
                }
            }
            MediationRow {
                selector,
                n_zero,
                tp: mean_or_nan(tp as f64, ok),
                fp: mean_or_nan(fp as f64, ok),
                b_rate: mean_or_nan(b_sig as f64, found),
                c_rate: mean_or_nan(c_sig as f64, found),
                bias: mean_or_nan(bias, found),
                mad: mean_or_nan(mad, found),
                cp: mean_or_nan(cover as f64, found),
                b_detect: mean_or_nan(b_sig as f64, ok),
                found,
                failures,
            }
        })
        .collect();
    Ok(MediationStudy {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        rows,
    })
}

impl MediationStudy {
    pub fn row(&self, selector: SelectorKind) -> Option<&MediationRow> {
        self.rows.iter().find(|r| r.selector == selector)
    }

    pub fn to_csv(&self) -> Result<String> {
        let spec = &self.config.spec;
        let mut out = String::new();
        out.push_str(&format!("# version: {}\n", self.version));
        out.push_str(&format!("# master_seed: {}\n", spec.master_seed));
        out.push_str(&format!(
            "# config: {}\n",
            serde_json::to_string(&self.config)?
        ));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "selector",
            "scenario",
            "setting",
            "beta1",
            "beta2",
            "N0",
            "TP",
            "FP",
            "b_ne_0",
            "c_prime_ne_0",
            "bias_beta2",
            "MAD_beta2",
            "CP_beta2",
            "b_detect",
            "found",
            "failures",
        ])?;
        let scenario = match spec.scenario {
            Scenario::MultipleM => "multiple_M",
            Scenario::MultipleX => "multiple_X",
        };
        for r in &self.rows {
            w.write_record([
                selector_label(r.selector).to_string(),
                scenario.to_string(),
                spec.setting.to_string(),
                fmt_num(spec.beta1),
                fmt_num(spec.beta2),
                r.n_zero.to_string(),
                fmt_num(r.tp),
                fmt_num(r.fp),
                fmt_num(r.b_rate),
                fmt_num(r.c_rate),
                fmt_num(r.bias),
                fmt_num(r.mad),
                fmt_num(r.cp),
                fmt_num(r.b_detect),
                r.found.to_string(),
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
