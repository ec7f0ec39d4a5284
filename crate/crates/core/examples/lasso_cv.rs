//! Lasso regularization path and 10-fold cross-validation on a first stage
//! with five signal instruments among 200 candidates.
//!
//! cargo run --release --example lasso_cv -- [seed]

use twostage::lasso::{cv_select, kkt_residual, lasso_path, LassoConfig};
use twostage::sim::{gen_iv_dataset, IvSimSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(1);
    let spec = IvSimSpec {
        p: 200,
        mu2: 60.0,
        master_seed: seed,
        ..Default::default()
    };
    let data = gen_iv_dataset(&spec, 0)?;
    let config = LassoConfig {
        n_lambdas: 30,
        cv_seed: seed,
        ..Default::default()
    };

    let path = lasso_path(&data.z, &data.x, &config)?;
    println!("{:>10} {:>8} {:>12}", "lambda", "|active|", "KKT");
    for fit in path.iter().step_by(5) {
        // The path centres internally; the intercept absorbs the means.
        let y = data.x.map(|v| v - fit.intercept);
        println!(
            "{:>10.5} {:>8} {:>12.2e}",
            fit.lambda,
            fit.support.len(),
            kkt_residual(&data.z, &y, &fit.coefficients, fit.lambda)
        );
    }

    let cv = cv_select(&data.z, &data.x, &LassoConfig::default())?;
    let best = cv
        .cv_curve
        .iter()
        .min_by(|a, b| a.mean_error.total_cmp(&b.mean_error))
        .expect("non-empty curve");
    println!(
        "\nCV lambda = {:.5} (mean error {:.4} ± {:.4})",
        cv.lambda, best.mean_error, best.se
    );
    println!("selected:   {:?}", cv.support);
    println!("true:       {:?}", data.true_support);
    Ok(())
}
