//! Seeded Monte Carlo studies for the instrument and mediation designs.

pub mod design;
pub mod iv_study;
pub mod mediation_study;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use design::{
    gen_iv_dataset, gen_mediation_dataset, solve_concentration_c, Calibration, IvData, IvGenerator,
    IvSimSpec, MediationData, MediationSimSpec,
};
pub use iv_study::{run_iv_study, select_instruments, IvRow, IvStudy, IvStudyConfig};
pub use mediation_study::{
    run_mediation_study, MediationRow, MediationStudy, MediationStudyConfig,
};

/// Generator for replication `rep`: the master seed picks the key, the
/// replication index picks the stream, so replications are independent of
/// execution order.
pub fn rep_rng(master_seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(rep);
    rng
}

/// Formats a float for tabular output; identical values give identical bytes.
pub(crate) fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v:.6}")
    }
}

pub(crate) fn mean_or_nan(sum: f64, count: usize) -> f64 {
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}
