//! Instrument-selection Monte Carlo on the cut-off design.
//!
//! cargo run --release --example iv_simulation -- [L] [mu2] [n] [B] [seed] [literal|sample_scaled]

use std::time::Instant;

use twostage::sim::{run_iv_study, Calibration, IvSimSpec, IvStudyConfig};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let spec = IvSimSpec {
        l: arg(&args, 0, 5),
        mu2: arg(&args, 1, 180.0),
        n: arg(&args, 2, 100),
        b: arg(&args, 3, 20),
        master_seed: arg(&args, 4, 1),
        calibration: match args.get(5).map(String::as_str) {
            Some("sample_scaled") => Calibration::SampleScaled,
            _ => Calibration::Literal,
        },
        ..Default::default()
    };
    let config = IvStudyConfig {
        spec,
        ..Default::default()
    };
    let start = Instant::now();
    let study = run_iv_study(&config)?;
    print!("{}", study.to_csv()?);
    eprintln!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
