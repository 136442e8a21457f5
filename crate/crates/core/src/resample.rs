//! Class-rebalancing transforms applied to training folds only.
//!
//! All operations are deterministic given their seed, never alter original
//! feature values, and shuffle the output row order.

use crate::dataio::EncodedMatrix;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Strategy selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResampleStrategy {
    None,
    Undersample { ratio: f64 },
    Oversample { ratio: f64 },
    Smote { k: usize, ratio: f64 },
    /// Undersample the majority to `1/under_ratio` times the minority, then
    /// SMOTE the minority to parity.
    Hybrid { under_ratio: f64, k: usize },
}

impl ResampleStrategy {
    pub fn apply(&self, matrix: &EncodedMatrix, seed: u64) -> Result<EncodedMatrix> {
        match *self {
            ResampleStrategy::None => Ok(matrix.clone()),
            ResampleStrategy::Undersample { ratio } => random_undersample(matrix, ratio, seed),
            ResampleStrategy::Oversample { ratio } => random_oversample(matrix, ratio, seed),
            ResampleStrategy::Smote { k, ratio } => smote(matrix, k, ratio, seed),
            ResampleStrategy::Hybrid { under_ratio, k } => {
                let reduced = random_undersample(matrix, under_ratio, seed)?;
                smote(&reduced, k, 1.0, seed.wrapping_add(1))
            }
        }
    }
}

impl Default for ResampleStrategy {
    fn default() -> Self {
        ResampleStrategy::Hybrid {
            under_ratio: 0.25,
            k: 5,
        }
    }
}

fn class_split(matrix: &EncodedMatrix) -> Result<(Vec<usize>, Vec<usize>)> {
    let positives: Vec<usize> = (0..matrix.n_rows())
        .filter(|&i| matrix.labels[i] == 1)
        .collect();
    let negatives: Vec<usize> = (0..matrix.n_rows())
        .filter(|&i| matrix.labels[i] == 0)
        .collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::ClassMissing {
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }
    Ok((positives, negatives))
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    Ok(())
}

/// Order minority/majority by count; ties keep class 1 as minority.
fn minority_majority(matrix: &EncodedMatrix) -> Result<(Vec<usize>, Vec<usize>)> {
    let (positives, negatives) = class_split(matrix)?;
    if positives.len() <= negatives.len() {
        Ok((positives, negatives))
    } else {
        Ok((negatives, positives))
    }
}

/// Subsample majority rows without replacement until
/// `minority / majority >= ratio`; minority rows are untouched.
pub fn random_undersample(matrix: &EncodedMatrix, ratio: f64, seed: u64) -> Result<EncodedMatrix> {
    check_ratio(ratio)?;
    let (minority, majority) = minority_majority(matrix)?;
    let keep = ((minority.len() as f64 / ratio).floor() as usize).min(majority.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = majority.clone();
    pool.shuffle(&mut rng);
    pool.truncate(keep);
    let mut indices = minority;
    indices.extend_from_slice(&pool);
    indices.shuffle(&mut rng);
    Ok(matrix.select_rows(&indices))
}

/// Duplicate minority rows with replacement until
/// `minority / majority >= ratio`; majority rows are untouched.
pub fn random_oversample(matrix: &EncodedMatrix, ratio: f64, seed: u64) -> Result<EncodedMatrix> {
    check_ratio(ratio)?;
    let (minority, majority) = minority_majority(matrix)?;
    let target = (majority.len() as f64 * ratio).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..matrix.n_rows()).collect();
    for _ in minority.len()..target {
        indices.push(minority[rng.random_range(0..minority.len())]);
    }
    indices.shuffle(&mut rng);
    Ok(matrix.select_rows(&indices))
}

/// Synthetic minority oversampling: each synthetic row is
/// `x_i + u * (x_nn - x_i)` with `u ~ Uniform(0, 1)` and `x_nn` one of the
/// `k` nearest minority neighbors of `x_i` under Euclidean distance.
/// Generation continues until `minority / majority >= ratio`.
pub fn smote(matrix: &EncodedMatrix, k: usize, ratio: f64, seed: u64) -> Result<EncodedMatrix> {
    check_ratio(ratio)?;
    if k == 0 {
        return Err(Error::Invalid("smote needs k >= 1".into()));
    }
    let (minority, majority) = minority_majority(matrix)?;
    if minority.len() <= k {
        return Err(Error::MinorityTooSmall {
            k,
            minority: minority.len(),
        });
    }
    let minority_label = matrix.labels[minority[0]];
    let target = (majority.len() as f64 * ratio).ceil() as usize;
    let synthetic_count = target.saturating_sub(minority.len());

    // Exhaustive k-NN among minority rows, ties broken by row index.
    let neighbors: Vec<Vec<usize>> = minority
        .iter()
        .map(|&i| {
            let mut dists: Vec<(f64, usize)> = minority
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (euclidean(matrix.row(i), matrix.row(j)), j))
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            dists.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = matrix.clone();
    for _ in 0..synthetic_count {
        let pick = rng.random_range(0..minority.len());
        let base = matrix.row(minority[pick]);
        let nn = matrix.row(neighbors[pick][rng.random_range(0..k)]);
        let u: f64 = rng.random_range(0.0..1.0);
        let synthetic: Vec<f64> = base
            .iter()
            .zip(nn.iter())
            .map(|(a, b)| a + u * (b - a))
            .collect();
        out.push_row(&synthetic, minority_label);
    }
    let mut order: Vec<usize> = (0..out.n_rows()).collect();
    order.shuffle(&mut rng);
    Ok(out.select_rows(&order))
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
