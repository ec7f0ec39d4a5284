//! Mediator / exposure screening Monte Carlo.
//!
//! cargo run --release --example mediation_simulation -- [m|x|hard] [setting] [beta1] [beta2] [B] [seed]

use std::time::Instant;

use twostage::mediation::Scenario;
use twostage::sim::{run_mediation_study, MediationSimSpec, MediationStudyConfig};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind = args.first().map(String::as_str).unwrap_or("m");
    let base = match kind {
        "hard" => MediationSimSpec::hard_case(),
        "x" => MediationSimSpec {
            scenario: Scenario::MultipleX,
            ..Default::default()
        },
        _ => MediationSimSpec::default(),
    };
    let spec = MediationSimSpec {
        setting: arg(&args, 1, base.setting),
        beta1: arg(&args, 2, base.beta1),
        beta2: arg(&args, 3, base.beta2),
        b: arg(&args, 4, 20),
        master_seed: arg(&args, 5, 1),
        ..base
    };
    let config = MediationStudyConfig {
        spec,
        ..Default::default()
    };
    let start = Instant::now();
    let study = run_mediation_study(&config)?;
    print!("{}", study.to_csv()?);
    eprintln!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
