//! Pairwise chi-square association analysis and VIF-based multicollinearity
//! pruning.

use crate::dataio::{ColumnKind, EncodedMatrix, TabularDataset};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Ridge jitter added to the Gram matrix so exact collinearity cannot make the
/// normal-equation solve fail.
const GRAM_JITTER: f64 = 1e-10;

/// Symmetric matrix of pairwise chi-square p-values over the categorical
/// columns (dates included with their raw string values) plus the label.
#[derive(Debug, Clone)]
pub struct ChiSquareMatrix {
    pub feature_names: Vec<String>,
    /// Row-major `n x n`, entries in `[0, 1]`, diagonal fixed at 0.
    pub p_values: Vec<Vec<f64>>,
}

/// Outcome of iterative VIF pruning.
#[derive(Debug, Clone)]
pub struct PruneTrace {
    /// `(feature_name, vif_at_removal)` in removal order.
    pub removed: Vec<(String, f64)>,
    pub retained: Vec<String>,
    pub threshold: f64,
}

/// Upper tail of the chi-square distribution, computed through the
/// regularized incomplete gamma function.
pub fn chi_square_tail(statistic: f64, dof: usize) -> f64 {
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    dist.sf(statistic).clamp(0.0, 1.0)
}

/// Pearson chi-square p-value for a contingency table of nonnegative counts.
///
/// Zero row/column marginals are dropped before computation; if fewer than two
/// rows or columns remain the table is degenerate. No continuity correction.
pub fn chi_square_p(table: &[Vec<f64>]) -> Result<f64> {
    let degenerate = |ctx: &str| Error::DegenerateTable {
        context: Some(ctx.to_string()),
    };
    if table.is_empty() || table[0].is_empty() {
        return Err(degenerate("empty table"));
    }
    let n_cols = table[0].len();
    if table.iter().any(|row| row.len() != n_cols) {
        return Err(Error::DimensionMismatch(
            "contingency table rows have unequal lengths".into(),
        ));
    }
    if table
        .iter()
        .flatten()
        .any(|&v| v < 0.0 || !v.is_finite())
    {
        return Err(Error::Invalid(
            "contingency counts must be finite and nonnegative".into(),
        ));
    }

    let row_keep: Vec<usize> = (0..table.len())
        .filter(|&r| table[r].iter().sum::<f64>() > 0.0)
        .collect();
    let col_keep: Vec<usize> = (0..n_cols)
        .filter(|&c| table.iter().map(|row| row[c]).sum::<f64>() > 0.0)
        .collect();
    if row_keep.len() < 2 || col_keep.len() < 2 {
        return Err(degenerate("fewer than 2 non-empty rows or columns"));
    }

    let row_sums: Vec<f64> = row_keep
        .iter()
        .map(|&r| col_keep.iter().map(|&c| table[r][c]).sum())
        .collect();
    let col_sums: Vec<f64> = col_keep
        .iter()
        .map(|&c| row_keep.iter().map(|&r| table[r][c]).sum())
        .collect();
    let total: f64 = row_sums.iter().sum();

    let mut statistic = 0.0;
    for (ri, &r) in row_keep.iter().enumerate() {
        for (ci, &c) in col_keep.iter().enumerate() {
            let expected = row_sums[ri] * col_sums[ci] / total;
            let diff = table[r][c] - expected;
            statistic += diff * diff / expected;
        }
    }
    let dof = (row_keep.len() - 1) * (col_keep.len() - 1);
    Ok(chi_square_tail(statistic, dof))
}

/// Pairwise chi-square p-values for every categorical feature pair plus the
/// label column. Numeric columns are excluded; date columns participate with
/// their raw string values.
pub fn chi_square_matrix(ds: &TabularDataset) -> Result<ChiSquareMatrix> {
    let cat_cols: Vec<usize> = (0..ds.column_names.len())
        .filter(|&j| {
            matches!(
                ds.column_kinds[j],
                ColumnKind::Categorical | ColumnKind::Date
            )
        })
        .collect();
    // The label always counts as one categorical column.
    if cat_cols.is_empty() {
        return Err(Error::TooFewCategoricalColumns(1));
    }

    // Per-column integer codes; the label contributes its 0/1 codes.
    let mut names: Vec<String> = cat_cols
        .iter()
        .map(|&j| ds.column_names[j].clone())
        .collect();
    names.push(ds.label_name.clone());
    let mut codes: Vec<Vec<usize>> = cat_cols
        .iter()
        .map(|&j| {
            let mut seen: Vec<&str> = Vec::new();
            ds.rows
                .iter()
                .map(|row| {
                    let cell = row[j].as_str();
                    match seen.iter().position(|&v| v == cell) {
                        Some(idx) => idx,
                        None => {
                            seen.push(cell);
                            seen.len() - 1
                        }
                    }
                })
                .collect()
        })
        .collect();
    codes.push(ds.labels.iter().map(|&y| y as usize).collect());

    let n = names.len();
    let mut p_values = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let table = contingency(&codes[a], &codes[b]);
            let p = chi_square_p(&table).map_err(|e| match e {
                Error::DegenerateTable { .. } => Error::DegenerateTable {
                    context: Some(format!("{} vs {}", names[a], names[b])),
                },
                other => other,
            })?;
            p_values[a][b] = p;
            p_values[b][a] = p;
        }
    }
    Ok(ChiSquareMatrix {
        feature_names: names,
        p_values,
    })
}

fn contingency(a: &[usize], b: &[usize]) -> Vec<Vec<f64>> {
    let rows = a.iter().max().map(|&m| m + 1).unwrap_or(0);
    let cols = b.iter().max().map(|&m| m + 1).unwrap_or(0);
    let mut table = vec![vec![0.0; cols]; rows];
    for (&x, &y) in a.iter().zip(b.iter()) {
        table[x][y] += 1.0;
    }
    table
}

/// Ordinary least squares of `y` on `predictors` (with intercept) via the
/// jittered normal equations; returns the coefficient of determination.
fn ols_r_squared(predictors: &[&[f64]], y: &[f64]) -> f64 {
    let n = y.len();
    let k = predictors.len() + 1;
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { predictors[j - 1][i] });
    let yv = DVector::from_column_slice(y);
    let mut gram = x.transpose() * &x;
    for i in 0..k {
        gram[(i, i)] += GRAM_JITTER;
    }
    let rhs = x.transpose() * &yv;
    let beta = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DVector::zeros(k)),
    };
    let fitted = x * beta;
    let mean = y.iter().sum::<f64>() / n as f64;
    let ss_res: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(yi, fi)| (yi - fi) * (yi - fi))
        .sum();
    let ss_tot: f64 = y.iter().map(|yi| (yi - mean) * (yi - mean)).sum();
    if ss_tot <= 1e-300 {
        // Constant column: carries no collinearity signal.
        0.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Variance inflation factors for the given columns: `1 / (1 - R^2_j)` from
/// regressing each column on all the others. `R^2 = 1` yields `+inf`.
pub fn vif_values(columns: &[Vec<f64>]) -> Vec<f64> {
    (0..columns.len())
        .map(|j| {
            let others: Vec<&[f64]> = columns
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, c)| c.as_slice())
                .collect();
            let r2 = ols_r_squared(&others, &columns[j]);
            if r2 >= 1.0 {
                f64::INFINITY
            } else {
                1.0 / (1.0 - r2)
            }
        })
        .collect()
}

/// Iteratively remove the single feature with the largest VIF (ties broken by
/// lowest column index) until every remaining VIF is at most `threshold`.
pub fn vif_prune(matrix: &EncodedMatrix, threshold: f64) -> Result<PruneTrace> {
    let n_rows = matrix.n_rows();
    let n_features = matrix.n_features();
    if n_features < 2 {
        return Err(Error::Invalid(format!(
            "vif pruning needs at least 2 feature columns, got {n_features}"
        )));
    }
    if n_rows <= n_features {
        return Err(Error::UnderdeterminedRegression {
            rows: n_rows,
            cols: n_features,
        });
    }

    let mut active: Vec<usize> = (0..n_features).collect();
    let mut removed = Vec::new();
    while active.len() >= 2 {
        let columns: Vec<Vec<f64>> = active.iter().map(|&j| matrix.column(j)).collect();
        let vifs = vif_values(&columns);
        let (worst_pos, worst_vif) = vifs
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        if worst_vif <= threshold {
            break;
        }
        let feature = active.remove(worst_pos);
        removed.push((matrix.feature_names[feature].clone(), worst_vif));
    }
    Ok(PruneTrace {
        removed,
        retained: active
            .iter()
            .map(|&j| matrix.feature_names[j].clone())
            .collect(),
        threshold,
    })
}
