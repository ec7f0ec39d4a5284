//! Writes one simulated IV dataset and one mediation dataset as CSV files,
//! ready for the `twostage` binary.
//!
//! ```text
//! cargo run --release --example export_datasets -- [OUT_DIR] [seed]
//! twostage fit-iv --input OUT_DIR/iv.csv --response y --endogenous x
//! twostage fit-mediation --input OUT_DIR/mediation.csv --response y --exposure x
//! ```

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use twostage::sim::{gen_iv_dataset, gen_mediation_dataset, IvSimSpec, MediationSimSpec};

fn write(
    path: &PathBuf,
    names: &[String],
    cols: &[&DMatrix<f64>],
) -> Result<(), Box<dyn std::error::Error>> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    let n = cols[0].nrows();
    for i in 0..n {
        let row: Vec<String> = cols
            .iter()
            .flat_map(|m| m.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>())
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn as_matrix(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = PathBuf::from(args.first().map(String::as_str).unwrap_or("."));
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    std::fs::create_dir_all(&dir)?;

    let iv = gen_iv_dataset(
        &IvSimSpec {
            master_seed: seed,
            p: 100,
            mu2: 30.0,
            ..Default::default()
        },
        0,
    )?;
    let mut names = vec!["y".to_string(), "x".to_string()];
    names.extend((1..=iv.z.ncols()).map(|j| format!("z{j}")));
    write(
        &dir.join("iv.csv"),
        &names,
        &[&as_matrix(&iv.y), &as_matrix(&iv.x), &iv.z],
    )?;
    println!(
        "iv.csv: true instruments {:?}",
        iv.true_support.iter().map(|j| j + 1).collect::<Vec<_>>()
    );

    let med = gen_mediation_dataset(
        &MediationSimSpec {
            master_seed: seed,
            p: 50,
            ..Default::default()
        },
        0,
    )?;
    let mut names = vec!["y".to_string(), "x".to_string()];
    names.extend((1..=med.mediators.ncols()).map(|j| format!("m{j}")));
    write(
        &dir.join("mediation.csv"),
        &names,
        &[&as_matrix(&med.y), &med.x, &med.mediators],
    )?;
    println!(
        "mediation.csv: valid mediators {:?}",
        med.v_true.iter().map(|j| j + 1).collect::<Vec<_>>()
    );
    Ok(())
}
