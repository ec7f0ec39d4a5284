//! Size, power and coverage checks by seeded Monte Carlo. Each check must
//! hold on at least two of three fixed seeds.

mod common;

use common::{anderson_rubin_size, ols_coverage, rate, rng, sargan_null_mean, Design, REPS, SEEDS};
use twostage::iv::{self, RobustFlavor};
use twostage::stats::{ks_uniform_pvalue, mean};

fn two_of_three(check: impl Fn(u64) -> Result<(), String>) {
    let outcomes: Vec<Result<(), String>> = SEEDS.into_iter().map(&check).collect();
    let passed = outcomes.iter().filter(|o| o.is_ok()).count();
    assert!(passed >= 2, "passed on {passed} of 3 seeds: {outcomes:?}");
}

fn within(label: &str, value: f64, ok: bool) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(format!("{label} = {value}"))
    }
}

#[test]
fn sargan_mean_matches_degrees_of_freedom() {
    two_of_three(|seed| {
        let (m, df) = sargan_null_mean(seed);
        within("mean", m, (m - df).abs() <= 0.2 * df)
    });
}

#[test]
fn sargan_detects_direct_effect() {
    let d = Design {
        n: 200,
        m: 5,
        pi: 0.4,
        direct: 0.5,
        rho: 0.5,
    };
    two_of_three(|seed| {
        let mut r = rng(seed);
        let hits = (0..REPS)
            .filter(|_| {
                let p = d.draw(&mut r);
                let fit = iv::tsls(&p, RobustFlavor::Hc0).unwrap();
                iv::sargan_test(&p, &fit.residuals).unwrap().p < 0.05
            })
            .count();
        within("power", rate(hits, REPS), rate(hits, REPS) > 0.5)
    });
}

#[test]
fn anderson_rubin_size_at_true_beta() {
    two_of_three(|seed| {
        let s = anderson_rubin_size(seed);
        within("size", s, (0.02..=0.08).contains(&s))
    });
}

#[test]
fn anderson_rubin_power_far_from_truth() {
    let d = Design {
        n: 100,
        m: 4,
        pi: 0.5,
        direct: 0.0,
        rho: 0.6,
    };
    two_of_three(|seed| {
        let mut r = rng(seed);
        let hits = (0..REPS)
            .filter(|_| iv::anderson_rubin_test(&d.draw(&mut r), &[3.0]).unwrap().p < 0.05)
            .count();
        within("power", rate(hits, REPS), rate(hits, REPS) > 0.9)
    });
}

#[test]
fn ols_interval_coverage_on_exogenous_data() {
    two_of_three(|seed| {
        let c = ols_coverage(seed);
        within("coverage", c, (0.92..=0.98).contains(&c))
    });
}

#[test]
fn first_stage_f_is_uniform_under_null() {
    let d = Design {
        n: 80,
        m: 3,
        pi: 0.0,
        direct: 0.0,
        rho: 0.5,
    };
    two_of_three(|seed| {
        let mut r = rng(seed);
        let pvalues: Vec<f64> = (0..REPS)
            .map(|_| iv::first_stage(&d.draw(&mut r)).unwrap().f_tests[0].p)
            .collect();
        let ks = ks_uniform_pvalue(&pvalues);
        within("KS p", ks, ks > 0.01)
    });
}

#[test]
fn liml_k_exceeds_one_with_irrelevant_instruments() {
    let d = Design {
        n: 100,
        m: 20,
        pi: 0.0,
        direct: 0.0,
        rho: 0.5,
    };
    two_of_three(|seed| {
        let mut r = rng(seed);
        let above = (0..100)
            .filter(|_| iv::liml_k(&d.draw(&mut r)).unwrap() > 1.0 + 1e-4)
            .count();
        within("share", rate(above, 100), rate(above, 100) >= 0.9)
    });
}

#[test]
fn liml_k_close_to_one_with_strong_instruments() {
    let d = Design {
        n: 250,
        m: 5,
        pi: 0.5,
        direct: 0.0,
        rho: 0.5,
    };
    two_of_three(|seed| {
        let mut r = rng(seed);
        let inside = (0..100)
            .filter(|_| (1.0..=1.2).contains(&iv::liml_k(&d.draw(&mut r)).unwrap()))
            .count();
        within("share", rate(inside, 100), rate(inside, 100) >= 0.9)
    });
}

#[test]
fn robust_and_classical_errors_agree_at_large_n() {
    let d = Design {
        n: 1000,
        m: 3,
        pi: 0.5,
        direct: 0.0,
        rho: 0.5,
    };
    let mut r = rng(109);
    for _ in 0..20 {
        let est = iv::tsls(&d.draw(&mut r), RobustFlavor::Hc0).unwrap();
        for (c, s) in est.se_classical.iter().zip(&est.se_robust) {
            assert!((s / c - 1.0).abs() < 0.25, "classical {c}, robust {s}");
        }
    }
}

#[test]
fn fuller_estimates_concentrate_around_truth() {
    let d = Design {
        n: 100,
        m: 5,
        pi: 0.4,
        direct: 0.0,
        rho: 0.6,
    };
    two_of_three(|seed| {
        let mut r = rng(seed);
        let betas: Vec<f64> = (0..REPS)
            .map(|_| {
                iv::fuller(&d.draw(&mut r), 1.0, RobustFlavor::Hc0)
                    .unwrap()
                    .beta[0]
            })
            .collect();
        let m = mean(&betas);
        within("mean", m, (m - 1.0).abs() < 0.05)
    });
}
