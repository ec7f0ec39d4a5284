//! Mediator screening and path estimation with both selectors.
//!
//! One exposure, 200 candidate mediators of which the first drives the
//! response; its neighbours are correlated decoys.
//!
//! cargo run --release --example mediation_fit -- [setting] [seed]

use twostage::mediation::{analyze, MediationDesign, Scenario, SelectorKind};
use twostage::sim::{gen_mediation_dataset, MediationSimSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let setting: u8 = args.first().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let spec = MediationSimSpec {
        setting,
        p: 200,
        master_seed: seed,
        ..Default::default()
    };
    let data = gen_mediation_dataset(&spec, 0)?;
    println!("valid mediators: {:?}", data.v_true);

    for selector in [SelectorKind::Semms, SelectorKind::Lasso] {
        let design = MediationDesign::new(
            data.y.clone(),
            data.x.clone(),
            data.mediators.clone(),
            Scenario::MultipleM,
            selector,
        )?;
        println!("\n== {selector:?}");
        match analyze(&design, 0.05) {
            Ok((sel, fit)) => {
                println!(
                    "selected {:?}, locked out {:?}",
                    sel.selected, sel.locked_out
                );
                println!(
                    "total {:.3}  c' {:.3} (p = {:.3})",
                    fit.total.estimate, fit.c_prime[0].estimate, fit.c_prime[0].p
                );
                for (k, &j) in sel.selected.iter().enumerate() {
                    println!(
                        "  M{:<4} a {:>7.3} (p {:.1e})  b {:>7.3} (p {:.1e})  ab {:>7.3}",
                        j + 1,
                        fit.a[k].estimate,
                        fit.a[k].p,
                        fit.b[k].estimate,
                        fit.b[k].p,
                        fit.indirect[k]
                    );
                }
                println!("classification: {:?}", fit.classification);
            }
            Err(e) => println!("{e}"),
        }
    }
    Ok(())
}
