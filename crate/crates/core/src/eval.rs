//! Stratified k-fold cross-validation, classification metrics, ROC/AUC, and
//! the multi-schedule comparison harness.

use crate::dataio::EncodedMatrix;
use crate::error::{Error, Result};
use crate::loss::NamedSchedule;
use crate::resample::ResampleStrategy;
use crate::train::{derive_seed, train, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Indices are partitioned so each fold's positive count differs from the
/// exact proportional share by at most one; folds are disjoint and covering.
pub fn stratified_kfold(
    labels: &[u8],
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::Invalid(format!("k must be at least 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    for (class, rows) in by_class.iter().enumerate() {
        if rows.len() < k {
            return Err(Error::ClassSmallerThanFolds {
                class: class as u8,
                count: rows.len(),
                k,
            });
        }
    }
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for rows in by_class.iter_mut() {
        rows.shuffle(&mut rng);
        for (pos, &row) in rows.iter().enumerate() {
            folds[pos % k].push(row);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds
        .iter()
        .enumerate()
        .map(|(fi, valid)| {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(other, _)| other != fi)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            (train, valid.clone())
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion-matrix metrics at the given threshold; a prediction is positive
/// iff `prob >= threshold`. Zero-denominator metrics are defined as 0.
pub fn classification_metrics(
    probs: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ClassificationMetrics> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fnc) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels.iter()) {
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fnc += 1,
        }
    }
    let safe_div = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = safe_div(tp, tp + fp);
    let recall = safe_div(tp, tp + fnc);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassificationMetrics {
        accuracy: (tp + tn) as f64 / probs.len() as f64,
        precision,
        recall,
        f1,
    })
}

/// ROC curve by threshold sweep over the unique scores (descending), with
/// (0,0) prepended and (1,1) appended, and the trapezoidal area under it.
///
/// Ties produce diagonal segments, so the area equals the Mann-Whitney
/// statistic `(#{p_pos > p_neg} + 0.5 * #ties) / (P * N)`.
pub fn roc_auc(probs: &[f64], labels: &[u8]) -> Result<(f64, Vec<(f64, f64)>)> {
    if probs.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).expect("finite scores"));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut idx = 0;
    while idx < order.len() {
        let score = probs[order[idx]];
        while idx < order.len() && probs[order[idx]] == score {
            if labels[order[idx]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    if *points.last().unwrap() != (1.0, 1.0) {
        points.push((1.0, 1.0));
    }
    let mut auc = 0.0;
    for pair in points.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok((auc, points))
}

/// Per-fold evaluation results for one schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

impl FoldMetrics {
    fn mean(folds: &[FoldMetrics]) -> FoldMetrics {
        let n = folds.len() as f64;
        let sum = |f: fn(&FoldMetrics) -> f64| folds.iter().map(f).sum::<f64>() / n;
        FoldMetrics {
            loss: sum(|m| m.loss),
            accuracy: sum(|m| m.accuracy),
            precision: sum(|m| m.precision),
            recall: sum(|m| m.recall),
            f1: sum(|m| m.f1),
            auc: sum(|m| m.auc),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleOutcome {
    pub name: String,
    pub slug: String,
    pub folds: Vec<FoldMetrics>,
    pub mean: FoldMetrics,
    /// ROC over the pooled out-of-fold predictions.
    pub roc_points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub schedules: Vec<ScheduleOutcome>,
}

#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub base: TrainConfig,
    pub folds: usize,
    pub resample: ResampleStrategy,
    pub threshold: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            folds: 10,
            resample: ResampleStrategy::default(),
            threshold: 0.5,
        }
    }
}

/// For each schedule and fold: resample the training split, train with a
/// derived seed, and evaluate on the untouched validation split. Fold work
/// items run in parallel; the table order is `(schedule, fold)` regardless of
/// completion order. The loss column is the mean validation loss under the
/// schedule's final-stage loss definition, so it is not comparable across
/// schedules with different final stages.
pub fn compare_schedules(
    matrix: &EncodedMatrix,
    schedules: &[NamedSchedule],
    config: &CompareConfig,
) -> Result<MetricsTable> {
    if schedules.is_empty() {
        return Err(Error::Invalid("no schedules to compare".into()));
    }
    struct FoldResult {
        schedule_index: usize,
        fold_index: usize,
        metrics: FoldMetrics,
        probs: Vec<f64>,
        labels: Vec<u8>,
    }

    let folds = stratified_kfold(&matrix.labels, config.folds, config.base.seed)?;
    let jobs: Vec<(usize, usize)> = (0..schedules.len())
        .flat_map(|si| (0..folds.len()).map(move |fi| (si, fi)))
        .collect();

    let results: Vec<FoldResult> = jobs
        .par_iter()
        .map(|&(si, fi)| -> Result<_> {
            let (train_idx, valid_idx) = &folds[fi];
            let seed = derive_seed(config.base.seed, fi, si);
            let train_split = matrix.select_rows(train_idx);
            let resampled = config.resample.apply(&train_split, seed)?;
            let train_config = TrainConfig {
                seed,
                ..config.base.clone().with_schedule(schedules[si].plan.clone())
            };
            let outcome = train(&resampled, &train_config)?;

            let valid = matrix.select_rows(valid_idx);
            let mut probs = Vec::with_capacity(valid.n_rows());
            let mut loss_sum = 0.0;
            let final_stage = schedules[si].plan.final_stage().kind;
            for i in 0..valid.n_rows() {
                let p = outcome.model.predict_row(valid.row(i));
                loss_sum += final_stage.loss(p, valid.labels[i], &outcome.alpha)?;
                probs.push(p);
            }
            let metrics = classification_metrics(&probs, &valid.labels, config.threshold)?;
            let (auc, _) = roc_auc(&probs, &valid.labels)?;
            Ok(FoldResult {
                schedule_index: si,
                fold_index: fi,
                metrics: FoldMetrics {
                    loss: loss_sum / valid.n_rows() as f64,
                    accuracy: metrics.accuracy,
                    precision: metrics.precision,
                    recall: metrics.recall,
                    f1: metrics.f1,
                    auc,
                },
                probs,
                labels: valid.labels.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut schedules_out = Vec::with_capacity(schedules.len());
    for (si, schedule) in schedules.iter().enumerate() {
        let mut fold_metrics = vec![
            FoldMetrics {
                loss: 0.0,
                accuracy: 0.0,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                auc: 0.0
            };
            folds.len()
        ];
        let mut pooled: Vec<(usize, &Vec<f64>, &Vec<u8>)> = Vec::new();
        for result in &results {
            if result.schedule_index == si {
                fold_metrics[result.fold_index] = result.metrics;
                pooled.push((result.fold_index, &result.probs, &result.labels));
            }
        }
        pooled.sort_by_key(|(fi, _, _)| *fi);
        let mut all_probs = Vec::new();
        let mut all_labels = Vec::new();
        for (_, probs, labels) in pooled {
            all_probs.extend_from_slice(probs);
            all_labels.extend_from_slice(labels);
        }
        let (_, roc_points) = roc_auc(&all_probs, &all_labels)?;
        schedules_out.push(ScheduleOutcome {
            name: schedule.name.clone(),
            slug: schedule.slug(),
            mean: FoldMetrics::mean(&fold_metrics),
            folds: fold_metrics,
            roc_points,
        });
    }
    Ok(MetricsTable {
        schedules: schedules_out,
    })
}
