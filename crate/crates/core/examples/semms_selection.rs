//! SEMMS on a design with a near-duplicate predictor and a locked-in covariate.
//!
//! Column 0 drives the response and column 1 is a noisy copy of it, so one of
//! the pair is selected and the other locked out. Column 7 is forced in.
//!
//! cargo run --release --example semms_selection -- [seed]

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use twostage::data::Dataset;
use twostage::semms::{semms_fit, SemmsConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let (n, p) = (100, 60);
    let mut x = DMatrix::from_fn(n, p, |_, _| draw());
    for i in 0..n {
        x[(i, 1)] = x[(i, 0)] + 0.25 * draw();
    }
    let y = DVector::from_fn(n, |i, _| {
        1.0 + 2.0 * x[(i, 0)] - 1.5 * x[(i, 5)] + 0.5 * x[(i, 7)] + draw()
    });

    let data = Dataset::unnamed(x, y)?.with_locked_in(BTreeSet::from([7]))?;
    let fit = semms_fit(&data, &SemmsConfig::default())?;

    println!("selected:   {:?}", fit.selected);
    println!("locked in:  {:?}", fit.locked_in);
    for l in &fit.locked_out {
        println!(
            "locked out: {} by {} (r = {:.3})",
            l.index, l.trigger, l.correlation
        );
    }
    let m = &fit.mixture;
    println!(
        "mixture:    p = ({:.3}, {:.3}, {:.3}), mu = {:.3}, sigma2_e = {:.3}",
        m.p_l, m.p_0, m.p_r, m.mu, m.sigma2_e
    );
    println!(
        "loglik:     {:.3} ({} trace points, converged: {})",
        fit.final_loglik,
        fit.loglik_trace.len(),
        fit.converged
    );
    let off = fit.ols_refit.slope_offset();
    println!("\nOLS refit on selected + locked-in columns:");
    for (i, &j) in fit.refit_columns.iter().enumerate() {
        println!(
            "  V{:<3} {:>8.3}  (se {:.3}, p = {:.2e})",
            j + 1,
            fit.ols_refit.coefficients[off + i],
            fit.ols_refit.se[off + i],
            fit.ols_refit.p_values[off + i]
        );
    }
    Ok(())
}
