//! Data generators for the instrument cut-off design and the mediation
//! scenarios.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mediation::Scenario;
use crate::sim::rep_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvSimSpec {
    pub n: usize,
    pub p: usize,
    pub l: usize,
    pub mu2: f64,
    pub beta: f64,
    /// Base of the instrument covariance `rho^|i−j|`.
    pub rho: f64,
    /// Covariance between the structural and first-stage errors.
    pub endog_corr: f64,
    pub b: usize,
    pub master_seed: u64,
    pub calibration: Calibration,
}

/// How `mu2` and `endog_corr` map onto the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// `mu2 = P·C²s / (1 − C²s)` and `cov(e, v) = endog_corr`.
    #[default]
    Literal,
    /// `mu2 = n·C²s / (1 − C²s)` and `corr(e, v) = endog_corr`.
    SampleScaled,
}

impl Default for IvSimSpec {
    fn default() -> Self {
        IvSimSpec {
            n: 100,
            p: 500,
            l: 5,
            mu2: 180.0,
            beta: 1.0,
            rho: 0.5,
            endog_corr: 0.6,
            b: 100,
            master_seed: 1,
            calibration: Calibration::Literal,
        }
    }
}

impl IvSimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.l > self.p {
            return Err(Error::invalid("need 1 ≤ L ≤ P"));
        }
        if !(self.mu2 > 0.0) {
            return Err(Error::invalid("mu2 must be positive"));
        }
        if !(self.endog_corr.abs() < 1.0) {
            return Err(Error::invalid("|endog_corr| must be below 1"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::invalid("|rho| must be below 1"));
        }
        if self.n < 10 || self.b == 0 {
            return Err(Error::invalid("need n ≥ 10 and B ≥ 1"));
        }
        let c = self.coefficient()?;
        let v = first_stage_error_variance(c, self.l, self.rho);
        if v <= self.error_covariance(v).powi(2) {
            return Err(Error::InfeasibleDesign(format!(
                "error covariance is not positive definite: sigma_v^2 = {v:.4}, cov = {}",
                self.endog_corr
            )));
        }
        Ok(())
    }

    /// Common first-stage coefficient `C`.
    pub fn coefficient(&self) -> Result<f64> {
        let scale = match self.calibration {
            Calibration::Literal => self.p,
            Calibration::SampleScaled => self.n,
        };
        solve_concentration_c(scale, self.l, self.mu2, self.rho)
    }

    /// `cov(e, v)` given `σ_v²`.
    pub fn error_covariance(&self, sigma_v2: f64) -> f64 {
        match self.calibration {
            Calibration::Literal => self.endog_corr,
            Calibration::SampleScaled => self.endog_corr * sigma_v2.sqrt(),
        }
    }
}

/// `Σ_ij = rho^|i−j|`.
pub fn ar1_covariance(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

/// `1_L' Σ 1_L` for the leading `L × L` block of the AR(1) covariance.
pub fn signal_mass(l: usize, rho: f64) -> f64 {
    (0..l)
        .flat_map(|i| (0..l).map(move |j| rho.powi((i as i32 - j as i32).abs())))
        .sum()
}

/// Concentration parameter implied by a common first-stage coefficient `c`.
pub fn concentration(p: usize, l: usize, c: f64, rho: f64) -> f64 {
    let cs = c * c * signal_mass(l, rho);
    p as f64 * cs / (1.0 - cs)
}

/// Positive root of `mu2 = P·C²s / (1 − C²s)`.
pub fn solve_concentration_c(p: usize, l: usize, mu2: f64, rho: f64) -> Result<f64> {
    let s = signal_mass(l, rho);
    if !(s > 0.0) {
        return Err(Error::InfeasibleDesign("signal block has zero mass".into()));
    }
    if !(mu2 >= 0.0) {
        return Err(Error::invalid("mu2 must be non-negative"));
    }
    let c = (mu2 / (s * (p as f64 + mu2))).sqrt();
    if first_stage_error_variance(c, l, rho) <= 0.0 {
        return Err(Error::InfeasibleDesign("sigma_v^2 is not positive".into()));
    }
    Ok(c)
}

/// `σ_v² = 1 − γ'Σγ` with `γ = C·(1_L, 0)`.
pub fn first_stage_error_variance(c: f64, l: usize, rho: f64) -> f64 {
    1.0 - c * c * signal_mass(l, rho)
}

#[derive(Debug, Clone)]
pub struct IvData {
    pub z: DMatrix<f64>,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub true_support: Vec<usize>,
}

/// Generator with the Cholesky factor of Σ computed once.
#[derive(Debug, Clone)]
pub struct IvGenerator {
    spec: IvSimSpec,
    chol_t: DMatrix<f64>,
    c: f64,
    sigma_v: f64,
}

impl IvGenerator {
    pub fn new(spec: &IvSimSpec) -> Result<Self> {
        spec.validate()?;
        let sigma = ar1_covariance(spec.p, spec.rho);
        let chol = sigma.cholesky().ok_or_else(|| {
            Error::InfeasibleDesign("instrument covariance is not positive definite".into())
        })?;
        let c = spec.coefficient()?;
        Ok(IvGenerator {
            spec: spec.clone(),
            chol_t: chol.l().transpose(),
            c,
            sigma_v: first_stage_error_variance(c, spec.l, spec.rho).sqrt(),
        })
    }

    pub fn coefficient(&self) -> f64 {
        self.c
    }

    pub fn spec(&self) -> &IvSimSpec {
        &self.spec
    }

    /// Draws replication `rep`; also returns the replication's generator so
    /// callers can take further deterministic draws from the same stream.
    pub fn generate_with_rng(&self, rep: u64) -> (IvData, ChaCha8Rng) {
        let mut rng = rep_rng(self.spec.master_seed, rep);
        let (n, p, l) = (self.spec.n, self.spec.p, self.spec.l);
        let e = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let z = e * &self.chol_t;
        // e ~ N(0, 1), v | e ~ N(cov·e, σ_v² − cov²).
        let cov = self.spec.error_covariance(self.sigma_v * self.sigma_v);
        let cond_sd = (self.sigma_v * self.sigma_v - cov * cov).sqrt();
        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let ei: f64 = StandardNormal.sample(&mut rng);
            let wi: f64 = StandardNormal.sample(&mut rng);
            let vi = cov * ei + cond_sd * wi;
            let signal: f64 = (0..l).map(|j| z[(i, j)]).sum::<f64>() * self.c;
            x[i] = signal + vi;
            y[i] = x[i] * self.spec.beta + ei;
        }
        (
            IvData {
                z,
                x,
                y,
                true_support: (0..l).collect(),
            },
            rng,
        )
    }

    pub fn generate(&self, rep: u64) -> IvData {
        self.generate_with_rng(rep).0
    }
}

pub fn gen_iv_dataset(spec: &IvSimSpec, rep: u64) -> Result<IvData> {
    Ok(IvGenerator::new(spec)?.generate(rep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MediationSimSpec {
    pub scenario: Scenario,
    pub setting: u8,
    pub beta1: f64,
    pub beta2: f64,
    pub n: usize,
    pub p: usize,
    /// Target correlation between the true variable and its decoys; used
    /// when `decoy_sd` is absent.
    pub rho: f64,
    /// Standard deviation of the decoy noise; `None` derives it from `rho`.
    pub decoy_sd: Option<f64>,
    /// Variance of the mediator and response errors.
    pub noise_var: f64,
    pub b: usize,
    pub master_seed: u64,
}

impl Default for MediationSimSpec {
    fn default() -> Self {
        MediationSimSpec {
            scenario: Scenario::MultipleM,
            setting: 1,
            beta1: 3.0,
            beta2: 1.0,
            n: 100,
            p: 500,
            rho: 0.7,
            decoy_sd: Some(0.3),
            noise_var: 0.2,
            b: 100,
            master_seed: 1,
        }
    }
}

impl MediationSimSpec {
    /// Multiple exposures, setting 4, β1 = β2 = 0.5 and decoys tuned to
    /// correlation 0.9.
    pub fn hard_case() -> Self {
        MediationSimSpec {
            scenario: Scenario::MultipleX,
            setting: 4,
            beta1: 0.5,
            beta2: 0.5,
            rho: 0.9,
            decoy_sd: None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.setting) {
            return Err(Error::invalid("setting must be 1, 2, 3 or 4"));
        }
        if self.n < 10 {
            return Err(Error::invalid("need N ≥ 10"));
        }
        if self.p < 10 {
            return Err(Error::invalid("need P ≥ 10 for the decoy block"));
        }
        if !(self.noise_var > 0.0) || self.b == 0 {
            return Err(Error::invalid("noise_var must be positive and B ≥ 1"));
        }
        if self.decoy_sd.is_none() && !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid("rho must lie in (0, 1)"));
        }
        if let Some(sd) = self.decoy_sd {
            if !(sd >= 0.0) {
                return Err(Error::invalid("decoy_sd must be non-negative"));
            }
        }
        Ok(())
    }

    /// Population standard deviation of the true variable `V_1`.
    pub fn v1_sd(&self) -> f64 {
        let u: f64 = 1.0 / 12.0;
        match self.scenario {
            Scenario::MultipleX => u.sqrt(),
            Scenario::MultipleM => (self.beta1 * self.beta1 * u + self.noise_var).sqrt(),
        }
    }

    pub fn decoy_noise_sd(&self) -> f64 {
        self.decoy_sd
            .unwrap_or_else(|| self.v1_sd() * (1.0 / (self.rho * self.rho) - 1.0).sqrt())
    }

    pub fn true_set(&self) -> Vec<usize> {
        if self.setting == 1 {
            vec![0]
        } else {
            (0..10).collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct MediationData {
    pub y: DVector<f64>,
    /// N × 1 (multiple mediators) or N × P (multiple exposures).
    pub x: DMatrix<f64>,
    /// N × P (multiple mediators) or N × 1 (multiple exposures).
    pub mediators: DMatrix<f64>,
    pub v_true: Vec<usize>,
}

/// Builds the P candidate columns from the true column `v1`.
fn candidates(spec: &MediationSimSpec, v1: &DVector<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, p) = (spec.n, spec.p);
    let noise = Normal::new(0.0, spec.decoy_noise_sd()).expect("finite sd");
    let mut v = DMatrix::zeros(n, p);
    v.set_column(0, v1);
    for j in 1..p {
        let col: DVector<f64> = match (spec.setting, j) {
            (2, 1..=9) => {
                let prev = v.column(j - 1).into_owned();
                DVector::from_fn(n, |i, _| prev[i] + noise.sample(rng))
            }
            (3, 1..=9) | (4, 1..=3) => DVector::from_fn(n, |i, _| v1[i] + noise.sample(rng)),
            (4, 4..=9) => DVector::from_fn(n, |i, _| -v1[i] + noise.sample(rng)),
            _ => DVector::from_fn(n, |_, _| rng.random::<f64>()),
        };
        v.set_column(j, &col);
    }
    v
}

pub fn generate_mediation(
    spec: &MediationSimSpec,
    rep: u64,
) -> Result<(MediationData, ChaCha8Rng)> {
    spec.validate()?;
    let mut rng = rep_rng(spec.master_seed, rep);
    let n = spec.n;
    let err = Normal::new(0.0, spec.noise_var.sqrt()).expect("positive variance");
    let x1 = DVector::from_fn(n, |_, _| rng.random::<f64>());
    let m1 = DVector::from_fn(n, |i, _| 1.0 + spec.beta1 * x1[i] + err.sample(&mut rng));
    let y = DVector::from_fn(n, |i, _| 1.0 + spec.beta2 * m1[i] + err.sample(&mut rng));
    let data = match spec.scenario {
        Scenario::MultipleM => MediationData {
            y,
            x: DMatrix::from_column_slice(n, 1, x1.as_slice()),
            mediators: candidates(spec, &m1, &mut rng),
            v_true: spec.true_set(),
        },
        Scenario::MultipleX => MediationData {
            y,
            x: candidates(spec, &x1, &mut rng),
            mediators: DMatrix::from_column_slice(n, 1, m1.as_slice()),
            v_true: spec.true_set(),
        },
    };
    Ok((data, rng))
}

pub fn gen_mediation_dataset(spec: &MediationSimSpec, rep: u64) -> Result<MediationData> {
    Ok(generate_mediation(spec, rep)?.0)
}
