//! Distribution tail probabilities and summary helpers.

use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};

/// Two-sided p-value of a t statistic.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    match StudentsT::new(0.0, 1.0, df) {
        Ok(d) => (2.0 * d.sf(t.abs())).clamp(0.0, 1.0),
        Err(_) => f64::NAN,
    }
}

/// Upper-tail critical value t_{1-alpha/2, df}.
pub fn t_critical(alpha: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .map(|d| d.inverse_cdf(1.0 - alpha / 2.0))
        .unwrap_or(f64::NAN)
}

pub fn f_upper(f: f64, df1: f64, df2: f64) -> f64 {
    if !f.is_finite() {
        return 0.0;
    }
    if f <= 0.0 {
        return 1.0;
    }
    FisherSnedecor::new(df1, df2)
        .map(|d| d.sf(f))
        .unwrap_or(f64::NAN)
}

pub fn chi2_upper(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with the n-1 denominator.
pub fn variance(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// One-sample Kolmogorov–Smirnov test against Uniform(0,1); returns the
/// asymptotic p-value.
pub fn ks_uniform_pvalue(sample: &[f64]) -> f64 {
    let n = sample.len();
    if n == 0 {
        return f64::NAN;
    }
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / nf;
            let hi = (i + 1) as f64 / nf - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    let lambda = (nf.sqrt() + 0.12 + 0.11 / nf.sqrt()) * d;
    // Kolmogorov distribution tail.
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_pvalue_symmetry() {
        let p = t_two_sided(2.0, 10.0);
        assert!((p - t_two_sided(-2.0, 10.0)).abs() < 1e-15);
        assert!((p - 0.0734).abs() < 1e-3);
    }

    #[test]
    fn chi2_median_like() {
        // P(chi2_4 > 5.75) is about 0.218
        assert!((chi2_upper(5.75, 4.0) - 0.2186).abs() < 1e-3);
    }

    #[test]
    fn ks_on_even_grid_is_not_rejected() {
        let grid: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
        assert!(ks_uniform_pvalue(&grid) > 0.99);
        let skew: Vec<f64> = grid.iter().map(|u| u * u).collect();
        assert!(ks_uniform_pvalue(&skew) < 1e-6);
    }
}
