//! Shapley-value feature attribution over trained models: exact subset
//! enumeration for small feature counts, permutation sampling otherwise.
//!
//! The value function is interventional: features outside the evaluated
//! subset are replaced by background-row values, and the subset value is the
//! average model output over the background set. Both estimators satisfy the
//! efficiency decomposition `f(x) = base_value + sum(attributions)` up to
//! floating-point error (the permutation estimator's per-permutation
//! contributions telescope).

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

pub const DEFAULT_EXACT_LIMIT: usize = 12;
pub const DEFAULT_BACKGROUND_SIZE: usize = 50;
/// Hard cap on exact enumeration (2^d subset values are materialized).
const MAX_EXACT_FEATURES: usize = 25;

/// A model under explanation: any map from a feature row to a real output.
pub type ModelFn<'a> = &'a dyn Fn(&[f64]) -> f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapMethod {
    Exact,
    Permutation(usize),
}

#[derive(Debug, Clone)]
pub struct ShapReport {
    /// Model output with no instance features present (mean over background).
    pub base_value: f64,
    /// One attribution vector per explained instance.
    pub attributions: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub background_size: usize,
    pub method: ShapMethod,
}

/// Mean absolute attribution per feature for one or more models.
#[derive(Debug, Clone)]
pub struct ShapSummary {
    pub feature_names: Vec<String>,
    pub columns: Vec<SummaryColumn>,
}

#[derive(Debug, Clone)]
pub struct SummaryColumn {
    pub name: String,
    pub mean_abs: Vec<f64>,
    /// Dispersion of the per-feature means (std / mean); lower is more even.
    pub evenness: f64,
}

fn validate_inputs(
    instances: &[Vec<f64>],
    background: &[Vec<f64>],
    n_features: usize,
) -> Result<()> {
    if background.is_empty() {
        return Err(Error::EmptyBackground);
    }
    for row in background.iter().chain(instances.iter()) {
        if row.len() != n_features {
            return Err(Error::DimensionMismatch(format!(
                "row has {} values, expected {n_features}",
                row.len()
            )));
        }
    }
    Ok(())
}

fn value_for_mask(
    f: ModelFn<'_>,
    instance: &[f64],
    mask: u64,
    background: &[Vec<f64>],
    hybrid: &mut Vec<f64>,
) -> f64 {
    let mut total = 0.0;
    for row in background {
        hybrid.clear();
        hybrid.extend(
            row.iter()
                .enumerate()
                .map(|(j, &b)| if mask >> j & 1 == 1 { instance[j] } else { b }),
        );
        total += f(hybrid);
    }
    total / background.len() as f64
}

/// Interventional subset value: features inside the mask keep the instance's
/// values, the rest come from each background row; outputs are averaged.
pub fn value_function(
    f: ModelFn<'_>,
    instance: &[f64],
    subset_mask: &[bool],
    background: &[Vec<f64>],
) -> Result<f64> {
    if subset_mask.len() != instance.len() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} entries for {} features",
            subset_mask.len(),
            instance.len()
        )));
    }
    validate_inputs(std::slice::from_ref(&instance.to_vec()), background, instance.len())?;
    let mask = subset_mask
        .iter()
        .enumerate()
        .fold(0u64, |m, (j, &b)| if b { m | 1 << j } else { m });
    let mut hybrid = Vec::with_capacity(instance.len());
    Ok(value_for_mask(f, instance, mask, background, &mut hybrid))
}

/// Exact Shapley attribution by full subset enumeration with the kernel
/// weights `|S|! (d - |S| - 1)! / d!`.
pub fn exact_shapley(
    f: ModelFn<'_>,
    instances: &[Vec<f64>],
    background: &[Vec<f64>],
    feature_names: Vec<String>,
    exact_limit: usize,
) -> Result<ShapReport> {
    let d = feature_names.len();
    validate_inputs(instances, background, d)?;
    if d > exact_limit.min(MAX_EXACT_FEATURES) {
        return Err(Error::ExactLimitExceeded {
            features: d,
            limit: exact_limit.min(MAX_EXACT_FEATURES),
        });
    }

    // weight[s] = s! (d-s-1)! / d!
    let mut weight = vec![0.0f64; d];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut value = 1.0 / d as f64;
        for i in 1..=s {
            value *= i as f64 / (d - i) as f64;
        }
        *w = value;
    }

    let n_masks = 1usize << d;
    let mut base_value = 0.0;
    let mut attributions = Vec::with_capacity(instances.len());
    let mut values = vec![0.0f64; n_masks];
    let mut hybrid = Vec::with_capacity(d);
    for (idx, instance) in instances.iter().enumerate() {
        for (mask, slot) in values.iter_mut().enumerate() {
            *slot = value_for_mask(f, instance, mask as u64, background, &mut hybrid);
        }
        if idx == 0 {
            base_value = values[0];
        }
        let mut phi = vec![0.0f64; d];
        for (mask, &without) in values.iter().enumerate() {
            for (i, phi_i) in phi.iter_mut().enumerate() {
                if mask >> i & 1 == 0 {
                    let with = values[mask | 1 << i];
                    *phi_i += weight[mask.count_ones() as usize] * (with - without);
                }
            }
        }
        attributions.push(phi);
    }
    Ok(ShapReport {
        base_value,
        attributions,
        feature_names,
        background_size: background.len(),
        method: ShapMethod::Exact,
    })
}

/// Monte-Carlo Shapley estimate: average marginal contribution over uniformly
/// random feature orderings. Subset values are memoized per instance, so
/// large permutation counts on small feature sets stay cheap.
pub fn permutation_shapley(
    f: ModelFn<'_>,
    instances: &[Vec<f64>],
    background: &[Vec<f64>],
    n_permutations: usize,
    seed: u64,
    feature_names: Vec<String>,
) -> Result<ShapReport> {
    let d = feature_names.len();
    validate_inputs(instances, background, d)?;
    if n_permutations < 1 {
        return Err(Error::Invalid("need at least one permutation".into()));
    }
    if d > 60 {
        return Err(Error::Invalid(format!(
            "permutation explainer supports at most 60 features, got {d}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base_value = 0.0;
    let mut attributions = Vec::with_capacity(instances.len());
    let mut order: Vec<usize> = (0..d).collect();
    let mut hybrid = Vec::with_capacity(d);
    for (idx, instance) in instances.iter().enumerate() {
        let mut memo: HashMap<u64, f64> = HashMap::new();
        let mut value = |mask: u64, hybrid: &mut Vec<f64>| -> f64 {
            *memo
                .entry(mask)
                .or_insert_with(|| value_for_mask(f, instance, mask, background, hybrid))
        };
        if idx == 0 {
            base_value = value(0, &mut hybrid);
        }
        let mut phi = vec![0.0f64; d];
        for _ in 0..n_permutations {
            order.shuffle(&mut rng);
            let mut mask = 0u64;
            let mut prev = value(mask, &mut hybrid);
            for &feature in &order {
                mask |= 1 << feature;
                let next = value(mask, &mut hybrid);
                phi[feature] += next - prev;
                prev = next;
            }
        }
        for v in &mut phi {
            *v /= n_permutations as f64;
        }
        attributions.push(phi);
    }
    Ok(ShapReport {
        base_value,
        attributions,
        feature_names,
        background_size: background.len(),
        method: ShapMethod::Permutation(n_permutations),
    })
}

/// Exact attribution when the feature count allows it, permutation sampling
/// otherwise.
pub fn attribute(
    f: ModelFn<'_>,
    instances: &[Vec<f64>],
    background: &[Vec<f64>],
    feature_names: Vec<String>,
    exact_limit: usize,
    n_permutations: usize,
    seed: u64,
) -> Result<ShapReport> {
    if feature_names.len() <= exact_limit.min(MAX_EXACT_FEATURES) {
        exact_shapley(f, instances, background, feature_names, exact_limit)
    } else {
        permutation_shapley(f, instances, background, n_permutations, seed, feature_names)
    }
}

/// Collapse a report into one summary column: mean absolute attribution per
/// feature plus the evenness statistic.
pub fn summarize_report(report: &ShapReport, name: &str) -> SummaryColumn {
    let d = report.feature_names.len();
    let n = report.attributions.len().max(1) as f64;
    let mut mean_abs = vec![0.0f64; d];
    for phi in &report.attributions {
        for (m, v) in mean_abs.iter_mut().zip(phi.iter()) {
            *m += v.abs();
        }
    }
    for m in &mut mean_abs {
        *m /= n;
    }
    let mean = mean_abs.iter().sum::<f64>() / d as f64;
    let evenness = if mean > 0.0 {
        let var = mean_abs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        var.sqrt() / mean
    } else {
        0.0
    };
    SummaryColumn {
        name: name.to_string(),
        mean_abs,
        evenness,
    }
}

/// Mean absolute attribution per feature for each named model, plus the
/// evenness statistic per column.
pub fn shap_summary(
    models: &[(String, ModelFn<'_>)],
    instances: &[Vec<f64>],
    background: &[Vec<f64>],
    feature_names: Vec<String>,
    exact_limit: usize,
    n_permutations: usize,
    seed: u64,
) -> Result<ShapSummary> {
    if instances.is_empty() {
        return Err(Error::Invalid("need at least one instance".into()));
    }
    let mut columns = Vec::with_capacity(models.len());
    for (name, f) in models {
        let report = attribute(
            *f,
            instances,
            background,
            feature_names.clone(),
            exact_limit,
            n_permutations,
            seed,
        )?;
        columns.push(summarize_report(&report, name));
    }
    Ok(ShapSummary {
        feature_names,
        columns,
    })
}

/// One summary per checkpoint, supporting attribution comparison between the
/// end of the convex stage and the end of training.
pub fn checkpoint_attribution(
    checkpoints: &[(String, ModelFn<'_>)],
    instances: &[Vec<f64>],
    background: &[Vec<f64>],
    feature_names: Vec<String>,
    exact_limit: usize,
    n_permutations: usize,
    seed: u64,
) -> Result<Vec<ShapSummary>> {
    checkpoints
        .iter()
        .map(|(name, f)| {
            shap_summary(
                std::slice::from_ref(&(name.clone(), *f)),
                instances,
                background,
                feature_names.clone(),
                exact_limit,
                n_permutations,
                seed,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RecurrentModel;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn full_mask_returns_model_output() {
        let f = |row: &[f64]| 2.0 * row[0] - row[1];
        let background = random_rows(5, 2, 1);
        let instance = vec![0.3, 0.9];
        let v = value_function(&f, &instance, &[true, true], &background).unwrap();
        assert_eq!(v, f(&instance));
    }

    #[test]
    fn empty_mask_returns_background_mean() {
        let f = |row: &[f64]| row[0] + 10.0 * row[1];
        let background = random_rows(7, 2, 2);
        let expected = background.iter().map(|r| f(r)).sum::<f64>() / 7.0;
        let v = value_function(&f, &[0.5, 0.5], &[false, false], &background).unwrap();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-15);
    }

    #[test]
    fn half_mask_averages_hybrid_evaluations() {
        let f = |row: &[f64]| row[0] * 100.0 + row[1];
        let background = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let instance = vec![9.0, 7.0];
        // Feature 0 from the instance, feature 1 from each background row.
        let v = value_function(&f, &instance, &[true, false], &background).unwrap();
        let expected = (f(&[9.0, 2.0]) + f(&[9.0, 4.0])) / 2.0;
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
    }

    #[test]
    fn empty_background_is_rejected() {
        let f = |_: &[f64]| 0.0;
        assert!(matches!(
            value_function(&f, &[0.0], &[true], &[]),
            Err(Error::EmptyBackground)
        ));
    }

    #[test]
    fn linear_model_recovers_coefficients() {
        let f = |row: &[f64]| 2.0 * row[0] + 3.0 * row[1];
        let background = vec![vec![1.0, -1.0], vec![-1.0, 1.0]]; // mean (0, 0)
        let report =
            exact_shapley(&f, &[vec![1.0, 1.0]], &background, names(2), 12).unwrap();
        assert_abs_diff_eq!(report.base_value, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.attributions[0][0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.attributions[0][1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_closed_form_holds_for_random_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 6;
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bias = 0.7;
        let weights = w.clone();
        let f = move |row: &[f64]| {
            bias + row.iter().zip(weights.iter()).map(|(x, wi)| x * wi).sum::<f64>()
        };
        let background = random_rows(15, d, 6);
        let bg_mean: Vec<f64> = (0..d)
            .map(|j| background.iter().map(|r| r[j]).sum::<f64>() / 15.0)
            .collect();
        let instances = random_rows(4, d, 7);
        let report = exact_shapley(&f, &instances, &background, names(d), 12).unwrap();
        for (instance, phi) in instances.iter().zip(report.attributions.iter()) {
            for j in 0..d {
                let expected = w[j] * (instance[j] - bg_mean[j]);
                assert_abs_diff_eq!(phi[j], expected, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn dummy_feature_gets_zero_exactly() {
        let f = |row: &[f64]| row[0].powi(2) + 3.0 * row[2];
        let background = random_rows(10, 3, 8);
        let instances = random_rows(3, 3, 9);
        let report = exact_shapley(&f, &instances, &background, names(3), 12).unwrap();
        for phi in &report.attributions {
            assert_eq!(phi[1], 0.0);
        }
        let sampled =
            permutation_shapley(&f, &instances, &background, 50, 3, names(3)).unwrap();
        for phi in &sampled.attributions {
            assert_eq!(phi[1], 0.0);
        }
    }

    #[test]
    fn symmetric_features_get_equal_attributions() {
        let f = |row: &[f64]| row[0] * row[1] + row[0] + row[1];
        let background: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 6.0; 2]).collect();
        let report =
            exact_shapley(&f, &[vec![0.8, 0.8]], &background, names(2), 12).unwrap();
        assert_abs_diff_eq!(
            report.attributions[0][0],
            report.attributions[0][1],
            epsilon = 1e-12
        );
    }

    #[test]
    fn efficiency_holds_on_a_recurrent_model() {
        let model = RecurrentModel::init(8, 6, 1, 21).unwrap();
        let f = |row: &[f64]| model.predict_row(row);
        let background = random_rows(20, 8, 22);
        let instances = random_rows(50, 8, 23);
        let report = exact_shapley(&f, &instances, &background, names(8), 12).unwrap();
        for (instance, phi) in instances.iter().zip(report.attributions.iter()) {
            let decomposition = report.base_value + phi.iter().sum::<f64>();
            assert!(
                (decomposition - f(instance)).abs() < 1e-9,
                "efficiency gap {}",
                (decomposition - f(instance)).abs()
            );
        }
    }

    #[test]
    fn exact_limit_is_enforced() {
        let f = |row: &[f64]| row[0];
        let background = random_rows(3, 13, 1);
        let instances = random_rows(1, 13, 2);
        assert!(matches!(
            exact_shapley(&f, &instances, &background, names(13), 12),
            Err(Error::ExactLimitExceeded { features: 13, limit: 12 })
        ));
    }

    #[test]
    fn permutation_estimate_converges_to_exact() {
        let model = RecurrentModel::init(10, 5, 1, 31).unwrap();
        let f = |row: &[f64]| model.predict_row(row);
        let background = random_rows(10, 10, 32);
        let instances = random_rows(2, 10, 33);
        let exact = exact_shapley(&f, &instances, &background, names(10), 12).unwrap();
        let sampled =
            permutation_shapley(&f, &instances, &background, 20_000, 34, names(10)).unwrap();
        for (instance, (pe, ps)) in instances
            .iter()
            .zip(exact.attributions.iter().zip(sampled.attributions.iter()))
        {
            let bound = 0.01 * f(instance).abs().max(1.0);
            for (a, b) in pe.iter().zip(ps.iter()) {
                assert!((a - b).abs() < bound, "estimate {b} vs exact {a}");
            }
        }
    }

    #[test]
    fn single_permutation_is_reproducible() {
        let f = |row: &[f64]| row.iter().product::<f64>();
        let background = random_rows(4, 5, 40);
        let instances = random_rows(1, 5, 41);
        let a = permutation_shapley(&f, &instances, &background, 1, 9, names(5)).unwrap();
        let b = permutation_shapley(&f, &instances, &background, 1, 9, names(5)).unwrap();
        assert_eq!(a.attributions, b.attributions);
    }

    #[test]
    fn permutation_estimator_satisfies_efficiency() {
        let f = |row: &[f64]| (row[0] - row[1]).tanh() + row[2];
        let background = random_rows(6, 3, 50);
        let instances = random_rows(5, 3, 51);
        let report =
            permutation_shapley(&f, &instances, &background, 17, 52, names(3)).unwrap();
        for (instance, phi) in instances.iter().zip(report.attributions.iter()) {
            let decomposition = report.base_value + phi.iter().sum::<f64>();
            assert!((decomposition - f(instance)).abs() < 1e-9);
        }
    }

    #[test]
    fn attribution_of_linear_model_is_affine_in_the_instance() {
        // Midpoint equality: phi((a+b)/2) == (phi(a) + phi(b)) / 2.
        let f = |row: &[f64]| 4.0 * row[0] - 2.5 * row[1] + row[2] + 0.3;
        let background = random_rows(12, 3, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..20 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mid: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| (x + y) / 2.0).collect();
            let report = exact_shapley(
                &f,
                &[a.clone(), b.clone(), mid],
                &background,
                names(3),
                12,
            )
            .unwrap();
            for j in 0..3 {
                let expected =
                    (report.attributions[0][j] + report.attributions[1][j]) / 2.0;
                assert_abs_diff_eq!(report.attributions[2][j], expected, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn summary_of_single_instance_is_absolute_attribution() {
        let f = |row: &[f64]| 2.0 * row[0] - 5.0 * row[1];
        let background = vec![vec![0.0, 0.0]];
        let instances = vec![vec![1.0, 1.0]];
        let reference = exact_shapley(&f, &instances, &background, names(2), 12).unwrap();
        let summary = shap_summary(
            &[("only".to_string(), &f as ModelFn<'_>)],
            &instances,
            &background,
            names(2),
            12,
            100,
            0,
        )
        .unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(
                summary.columns[0].mean_abs[j],
                reference.attributions[0][j].abs(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn identical_models_give_identical_summary_columns() {
        let f = |row: &[f64]| row[0] * 0.3 + row[1] * row[1];
        let background = random_rows(8, 2, 70);
        let instances = random_rows(6, 2, 71);
        let summary = shap_summary(
            &[
                ("first".to_string(), &f as ModelFn<'_>),
                ("second".to_string(), &f as ModelFn<'_>),
            ],
            &instances,
            &background,
            names(2),
            12,
            100,
            0,
        )
        .unwrap();
        assert_eq!(summary.columns[0].mean_abs, summary.columns[1].mean_abs);
        assert_eq!(summary.columns[0].evenness, summary.columns[1].evenness);
    }

    #[test]
    fn evenness_statistic_matches_direct_arithmetic() {
        let f = |row: &[f64]| 3.0 * row[0] + row[1];
        let background = vec![vec![0.0, 0.0]];
        let instances = vec![vec![1.0, 1.0]];
        let summary = shap_summary(
            &[("m".to_string(), &f as ModelFn<'_>)],
            &instances,
            &background,
            names(2),
            12,
            10,
            0,
        )
        .unwrap();
        // mean_abs = [3, 1]; mean 2; population std 1; evenness 0.5
        assert_abs_diff_eq!(summary.columns[0].evenness, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn constant_model_checkpoint_attributes_nothing() {
        let mut model = RecurrentModel::init(4, 3, 1, 80).unwrap();
        let n = model.param_count();
        // Zero head: output is sigmoid(0) regardless of input.
        for i in (n - 4)..n {
            model.params_mut()[i] = 0.0;
        }
        let f = |row: &[f64]| model.predict_row(row);
        let background = random_rows(5, 4, 81);
        let instances = random_rows(3, 4, 82);
        let summaries = checkpoint_attribution(
            &[("untrained".to_string(), &f as ModelFn<'_>)],
            &instances,
            &background,
            names(4),
            12,
            50,
            0,
        )
        .unwrap();
        for v in &summaries[0].columns[0].mean_abs {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn stage_checkpoints_differ_once_trained() {
        let early = RecurrentModel::init(3, 4, 1, 90).unwrap();
        let mut late = early.clone();
        for p in late.params_mut().iter_mut() {
            *p += 0.25;
        }
        let fe = |row: &[f64]| early.predict_row(row);
        let fl = |row: &[f64]| late.predict_row(row);
        let background = random_rows(6, 3, 91);
        let instances = random_rows(4, 3, 92);
        let summaries = checkpoint_attribution(
            &[
                ("convex_end".to_string(), &fe as ModelFn<'_>),
                ("final".to_string(), &fl as ModelFn<'_>),
            ],
            &instances,
            &background,
            names(3),
            12,
            50,
            0,
        )
        .unwrap();
        assert_ne!(
            summaries[0].columns[0].mean_abs,
            summaries[1].columns[0].mean_abs
        );
        // Efficiency holds per checkpoint.
        for (f, _summary) in [(&fe as ModelFn<'_>, &summaries[0]), (&fl, &summaries[1])] {
            let report =
                exact_shapley(f, &instances, &background, names(3), 12).unwrap();
            for (instance, phi) in instances.iter().zip(report.attributions.iter()) {
                let decomposition = report.base_value + phi.iter().sum::<f64>();
                assert!((decomposition - f(instance)).abs() < 1e-9);
            }
        }
    }
}
