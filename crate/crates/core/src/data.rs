//! Numeric containers, CSV ingestion, standardization, correlations and the
//! OLS primitive used throughout the crate.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, least_squares};
use crate::stats;

/// Predictor matrix with named columns, a response, and an optional set of
/// columns that must always stay in the model.
#[derive(Debug, Clone)]
pub struct Dataset {
    predictors: DMatrix<f64>,
    response: DVector<f64>,
    column_names: Vec<String>,
    locked_in: BTreeSet<usize>,
}

impl Dataset {
    pub fn new(
        predictors: DMatrix<f64>,
        response: DVector<f64>,
        column_names: Vec<String>,
        locked_in: BTreeSet<usize>,
    ) -> Result<Self> {
        let (n, p) = predictors.shape();
        if n < 2 {
            return Err(Error::EmptyData(n));
        }
        if p == 0 {
            return Err(Error::invalid("dataset has no predictor columns"));
        }
        if response.len() != n {
            return Err(Error::invalid(format!(
                "response has length {} but predictors have {} rows",
                response.len(),
                n
            )));
        }
        if column_names.len() != p {
            return Err(Error::invalid(format!(
                "{} column names for {} predictors",
                column_names.len(),
                p
            )));
        }
        if let Some(&bad) = locked_in.iter().find(|&&j| j >= p) {
            return Err(Error::invalid(format!(
                "locked-in index {bad} out of range"
            )));
        }
        if predictors
            .iter()
            .chain(response.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("non-finite value in dataset"));
        }
        Ok(Dataset {
            predictors,
            response,
            column_names,
            locked_in,
        })
    }

    /// Builds a dataset with generated column names `V1..VP`.
    pub fn unnamed(predictors: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        let names = (1..=predictors.ncols()).map(|j| format!("V{j}")).collect();
        Dataset::new(predictors, response, names, BTreeSet::new())
    }

    pub fn with_locked_in(mut self, locked_in: BTreeSet<usize>) -> Result<Self> {
        if let Some(&bad) = locked_in.iter().find(|&&j| j >= self.n_predictors()) {
            return Err(Error::invalid(format!(
                "locked-in index {bad} out of range"
            )));
        }
        self.locked_in = locked_in;
        Ok(self)
    }

    pub fn predictors(&self) -> &DMatrix<f64> {
        &self.predictors
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn locked_in(&self) -> &BTreeSet<usize> {
        &self.locked_in
    }

    pub fn n_rows(&self) -> usize {
        self.predictors.nrows()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.ncols()
    }
}

/// A fully numeric CSV table.
#[derive(Debug, Clone)]
pub struct Table {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<DVector<f64>> {
        let j = self.column_index(name)?;
        Ok(self.values.column(j).into_owned())
    }

    pub fn columns(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.values.select_columns(&idx))
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_table_from(file)
}

pub fn read_table_from<R: std::io::Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let p = names.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        for (j, cell) in record.iter().enumerate() {
            let value = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: i + 1,
                    column: names.get(j).cloned().unwrap_or_default(),
                    value: cell.to_string(),
                })?;
            data.push(value);
        }
        rows += 1;
    }
    if rows < 2 {
        return Err(Error::EmptyData(rows));
    }
    Ok(Table {
        names,
        values: DMatrix::from_row_slice(rows, p, &data),
    })
}

/// Reads a CSV file, moving `response_col` out of the predictor block and
/// resolving `locked_cols` to predictor indices.
pub fn load_csv(path: &Path, response_col: &str, locked_cols: &[String]) -> Result<Dataset> {
    let table = read_table(path)?;
    dataset_from_table(&table, response_col, locked_cols)
}

pub fn dataset_from_table(
    table: &Table,
    response_col: &str,
    locked_cols: &[String],
) -> Result<Dataset> {
    let ry = table.column_index(response_col)?;
    let keep: Vec<usize> = (0..table.names.len()).filter(|&j| j != ry).collect();
    let names: Vec<String> = keep.iter().map(|&j| table.names[j].clone()).collect();
    let mut locked = BTreeSet::new();
    for c in locked_cols {
        let j = names
            .iter()
            .position(|n| n == c)
            .ok_or_else(|| Error::MissingColumn(c.clone()))?;
        locked.insert(j);
    }
    Dataset::new(
        table.values.select_columns(&keep),
        table.values.column(ry).into_owned(),
        names,
        locked,
    )
}

/// Column location and scale removed by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Centers each predictor to mean 0 and scales it to unit sample standard
/// deviation (n-1 denominator). The response is left untouched.
pub fn standardize(d: &Dataset) -> Result<(Dataset, Vec<ScalingRecord>)> {
    let (x, scaling) = standardize_matrix(d.predictors(), d.column_names())?;
    let out = Dataset {
        predictors: x,
        response: d.response.clone(),
        column_names: d.column_names.clone(),
        locked_in: d.locked_in.clone(),
    };
    Ok((out, scaling))
}

pub fn standardize_matrix(
    x: &DMatrix<f64>,
    names: &[String],
) -> Result<(DMatrix<f64>, Vec<ScalingRecord>)> {
    let n = x.nrows();
    let mut out = x.clone();
    let mut records = Vec::with_capacity(x.ncols());
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.mean();
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n as f64 - 1.0)).sqrt();
        let name = names
            .get(j)
            .cloned()
            .unwrap_or_else(|| format!("V{}", j + 1));
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ConstantColumn(name));
        }
        col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        records.push(ScalingRecord { name, mean, sd });
    }
    Ok((out, records))
}

pub fn unstandardize(d: &Dataset, scaling: &[ScalingRecord]) -> Result<Dataset> {
    if scaling.len() != d.n_predictors() {
        return Err(Error::invalid(
            "scaling record length does not match predictors",
        ));
    }
    let mut x = d.predictors.clone();
    for (mut col, s) in x.column_iter_mut().zip(scaling) {
        col.iter_mut().for_each(|v| *v = *v * s.sd + s.mean);
    }
    Ok(Dataset {
        predictors: x,
        response: d.response.clone(),
        column_names: d.column_names.clone(),
        locked_in: d.locked_in.clone(),
    })
}

/// Ordinary least-squares fit with classical inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OlsFit {
    /// Intercept first when it was requested.
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub se: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub f_stat: f64,
    pub f_df: (usize, usize),
    pub r_squared: f64,
    pub sigma2_hat: f64,
    pub intercept: bool,
    pub df_resid: usize,
    #[serde(skip)]
    pub xtx_inv: Option<DMatrix<f64>>,
}

impl OlsFit {
    /// Slope coefficients without the intercept.
    pub fn slopes(&self) -> &[f64] {
        if self.intercept {
            &self.coefficients[1..]
        } else {
            &self.coefficients
        }
    }

    /// Offset into the coefficient vector where the slopes start.
    pub fn slope_offset(&self) -> usize {
        usize::from(self.intercept)
    }
}

pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>, intercept: bool) -> Result<OlsFit> {
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::invalid(format!("X has {n} rows, y has {}", y.len())));
    }
    let design = if intercept {
        linalg::hstack(&[&linalg::intercept(n), x])
    } else {
        x.clone()
    };
    let p = design.ncols();
    let ls = least_squares(&design, y)?;
    let df_resid = n.saturating_sub(p);
    let sigma2_hat = if df_resid > 0 {
        ls.rss / df_resid as f64
    } else {
        f64::NAN
    };
    let se: Vec<f64> = (0..p)
        .map(|j| (sigma2_hat * ls.xtx_inv[(j, j)]).sqrt())
        .collect();
    let coefficients: Vec<f64> = ls.coefficients.iter().copied().collect();
    let t_stats: Vec<f64> = coefficients.iter().zip(&se).map(|(b, s)| b / s).collect();
    let p_values = t_stats
        .iter()
        .map(|&t| stats::t_two_sided(t, df_resid as f64))
        .collect();

    let tss = if intercept {
        let m = y.mean();
        y.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    } else {
        y.norm_squared()
    };
    let r_squared = if tss > 0.0 {
        (1.0 - ls.rss / tss).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let df_model = p - usize::from(intercept);
    let f_stat = if df_model > 0 && df_resid > 0 {
        ((tss - ls.rss) / df_model as f64) / sigma2_hat
    } else {
        f64::NAN
    };

    Ok(OlsFit {
        coefficients,
        residuals: ls.residuals.iter().copied().collect(),
        se,
        t_stats,
        p_values,
        f_stat,
        f_df: (df_model, df_resid),
        r_squared,
        sigma2_hat,
        intercept,
        df_resid,
        xtx_inv: Some(ls.xtx_inv),
    })
}

/// Symmetric Pearson correlation matrix with unit diagonal.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    values: DMatrix<f64>,
}

impl CorrelationMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Pairs `(i, j, r)` with `i < j` and `|r| > threshold`.
    pub fn edges_above(&self, threshold: f64) -> Vec<(usize, usize, f64)> {
        let p = self.dim();
        let mut out = Vec::new();
        for i in 0..p {
            for j in (i + 1)..p {
                let r = self.values[(i, j)];
                if r.abs() > threshold {
                    out.push((i, j, r));
                }
            }
        }
        out
    }
}

pub fn pairwise_correlations(x: &DMatrix<f64>) -> Result<CorrelationMatrix> {
    let names: Vec<String> = (1..=x.ncols()).map(|j| format!("V{j}")).collect();
    let (z, _) = standardize_matrix(x, &names)?;
    let n = x.nrows() as f64;
    let mut values = z.transpose() * &z / (n - 1.0);
    let p = values.nrows();
    for i in 0..p {
        values[(i, i)] = 1.0;
        for j in (i + 1)..p {
            let r = values[(i, j)].clamp(-1.0, 1.0);
            values[(i, j)] = r;
            values[(j, i)] = r;
        }
    }
    Ok(CorrelationMatrix { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_moves_response_out() {
        let f = write_csv("y,a,b\n1,2,3\n4,5,6\n7,8,10\n");
        let d = load_csv(f.path(), "y", &[]).unwrap();
        assert_eq!(d.n_predictors(), 2);
        assert_eq!(d.column_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.response().as_slice(), &[1.0, 4.0, 7.0]);
        assert_eq!(d.predictors()[(2, 1)], 10.0);
    }

    #[test]
    fn load_csv_resolves_locked_columns() {
        let f = write_csv("a,y,b\n1,2,3\n4,5,6\n7,8,10\n");
        let d = load_csv(f.path(), "y", &["b".to_string()]).unwrap();
        assert!(d.locked_in().contains(&1));
    }

    #[test]
    fn load_csv_missing_column() {
        let f = write_csv("y,a,b\n1,2,3\n4,5,6\n7,8,9\n");
        assert!(matches!(load_csv(f.path(), "z", &[]), Err(Error::MissingColumn(c)) if c == "z"));
        assert!(matches!(
            load_csv(f.path(), "y", &["q".to_string()]),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn load_csv_rejects_nan_cell() {
        let f = write_csv("y,a,b\n1,2,3\n4,NaN,6\n7,8,9\n");
        match load_csv(f.path(), "y", &[]) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_needs_two_rows() {
        let f = write_csv("y,a\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), "y", &[]),
            Err(Error::EmptyData(1))
        ));
    }

    #[test]
    fn standardize_simple_column() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let d = Dataset::unnamed(x, DVector::from_vec(vec![0.0, 1.0, 0.0])).unwrap();
        let (s, rec) = standardize(&d).unwrap();
        let col = s.predictors().column(0);
        assert!(col.mean().abs() < 1e-10);
        let sd = (col.iter().map(|v| v * v).sum::<f64>() / 2.0).sqrt();
        assert!((sd - 1.0).abs() < 1e-10);
        assert_eq!(rec[0].mean, 2.0);
        assert_eq!(rec[0].sd, 1.0);
    }

    #[test]
    fn standardize_constant_column() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let d = Dataset::unnamed(x, DVector::zeros(3)).unwrap();
        assert!(matches!(standardize(&d), Err(Error::ConstantColumn(c)) if c == "V2"));
    }

    #[test]
    fn standardize_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 15, 4) * 7.0;
        let d = Dataset::unnamed(x.clone(), DVector::zeros(15)).unwrap();
        let (s, rec) = standardize(&d).unwrap();
        let back = unstandardize(&s, &rec).unwrap();
        assert!((back.predictors() - x).amax() < 1e-10);
    }

    #[test]
    fn ols_exact_line() {
        let x = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = &x.column(0) * 2.0;
        let fit = ols_fit(&x, &y, true).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-10);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_ones_column_gives_mean() {
        let x = DMatrix::from_element(6, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 4.0, 2.0, 8.0, 5.0, 7.0]);
        let fit = ols_fit(&x, &y, false).unwrap();
        assert!((fit.coefficients[0] - y.mean()).abs() < 1e-12);
    }

    /// Brute-force oracle: explicit (X'X)^{-1} X'y through Gauss–Jordan
    /// inversion, independent of the QR path.
    fn normal_equations_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
        let p = x.ncols();
        let xtx = x.transpose() * x;
        let xty = x.transpose() * y;
        let mut aug = vec![vec![0.0; 2 * p]; p];
        for i in 0..p {
            for j in 0..p {
                aug[i][j] = xtx[(i, j)];
            }
            aug[i][p + i] = 1.0;
        }
        for c in 0..p {
            let piv = (c..p)
                .max_by(|&a, &b| aug[a][c].abs().total_cmp(&aug[b][c].abs()))
                .unwrap();
            aug.swap(c, piv);
            let d = aug[c][c];
            for v in aug[c].iter_mut() {
                *v /= d;
            }
            for r in 0..p {
                if r != c {
                    let f = aug[r][c];
                    let row_c = aug[c].clone();
                    for (v, w) in aug[r].iter_mut().zip(row_c) {
                        *v -= f * w;
                    }
                }
            }
        }
        (0..p)
            .map(|i| (0..p).map(|j| aug[i][p + j] * xty[j]).sum())
            .collect()
    }

    #[test]
    fn ols_matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x = random_matrix(&mut rng, 20, 3);
        let y = DVector::from_fn(20, |_, _| rng.random::<f64>());
        let fit = ols_fit(&x, &y, false).unwrap();
        let oracle = normal_equations_oracle(&x, &y);
        for (a, b) in fit.coefficients.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn ols_rank_deficient() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 5.0]);
        assert!(matches!(
            ols_fit(&x, &y, true),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn correlations_identical_and_negated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 12, 1);
        let x = linalg::hstack(&[&a, &a, &(-&a)]);
        let c = pairwise_correlations(&x).unwrap();
        assert!((c.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((c.get(0, 2) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlations_match_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 10, 4);
        let c = pairwise_correlations(&x).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let (a, b) = (x.column(i), x.column(j));
                let (ma, mb) = (a.mean(), b.mean());
                let cov: f64 = a
                    .iter()
                    .zip(b.iter())
                    .map(|(u, v)| (u - ma) * (v - mb))
                    .sum();
                let sa: f64 = a.iter().map(|u| (u - ma).powi(2)).sum::<f64>().sqrt();
                let sb: f64 = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>().sqrt();
                assert!((c.get(i, j) - cov / (sa * sb)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn correlations_constant_column() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 1.0, 3.0, 1.0]);
        assert!(matches!(
            pairwise_correlations(&x),
            Err(Error::ConstantColumn(_))
        ));
    }

    #[test]
    fn dataset_rejects_non_finite() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::INFINITY]);
        assert!(Dataset::unnamed(x, DVector::zeros(2)).is_err());
    }
}
