//! Mini-batch gradient training of the recurrent classifier under a stage
//! schedule, with per-epoch logging and stage-boundary checkpoints.

use crate::dataio::EncodedMatrix;
use crate::error::{Error, Result};
use crate::loss::{loss_grad, stage_for_epoch, FocalParams, SchedulePlan, StageKind};
use crate::model::RecurrentModel;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    /// Inverse class frequency, normalized so the two weights sum to 2.
    Balanced,
    Fixed { alpha_pos: f64, alpha_neg: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub schedule: SchedulePlan,
    pub alpha: AlphaMode,
    pub hidden_dim: usize,
    /// Stop early after this many epochs without training-loss improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_epochs: 100,
            learning_rate: 0.001,
            batch_size: 32,
            seed: 42,
            optimizer: OptimizerKind::Adam,
            schedule: SchedulePlan::default_multistage(100).expect("valid default plan"),
            alpha: AlphaMode::Balanced,
            hidden_dim: 16,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn with_schedule(mut self, schedule: SchedulePlan) -> Self {
        self.total_epochs = schedule.total_epochs();
        self.schedule = schedule;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.total_epochs != self.schedule.total_epochs() {
            return Err(Error::InvalidSchedule(format!(
                "total_epochs {} does not match the schedule's last epoch {}",
                self.total_epochs,
                self.schedule.total_epochs()
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Invalid(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        if self.hidden_dim < 1 {
            return Err(Error::Invalid("hidden dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: StageKind,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Model snapshot taken at the end of a schedule stage.
#[derive(Debug, Clone)]
pub struct StageCheckpoint {
    pub stage_index: usize,
    pub stage: StageKind,
    pub epoch: usize,
    pub model: RecurrentModel,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RecurrentModel,
    pub logs: Vec<EpochLog>,
    pub checkpoints: Vec<StageCheckpoint>,
    /// Class weights in effect during training.
    pub alpha: FocalParams,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grads[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Class weights for the given labels under the configured alpha mode.
pub fn resolve_alpha(mode: AlphaMode, labels: &[u8]) -> Result<FocalParams> {
    match mode {
        AlphaMode::Balanced => FocalParams::balanced(labels),
        AlphaMode::Fixed {
            alpha_pos,
            alpha_neg,
        } => FocalParams::new(alpha_pos, alpha_neg, 0.0),
    }
}

/// Train on the encoded matrix: per epoch, shuffle rows (seeded), iterate
/// mini-batches, apply the stage loss in effect, backpropagate, and update.
/// Rows are presented as sequences of length one.
pub fn train(matrix: &EncodedMatrix, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (positives, negatives) = matrix.class_counts();
    if positives == 0 || negatives == 0 {
        return Err(Error::ClassMissing {
            positives,
            negatives,
        });
    }
    let alpha = resolve_alpha(config.alpha, &matrix.labels)?;
    let mut model = RecurrentModel::init(matrix.n_features(), config.hidden_dim, 1, config.seed)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(model.param_count());
    let n_rows = matrix.n_rows();
    let mut indices: Vec<usize> = (0..n_rows).collect();
    let mut grads = vec![0.0; model.param_count()];
    let mut logs = Vec::with_capacity(config.total_epochs);
    let mut checkpoints: Vec<StageCheckpoint> = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut stall = 0usize;

    'epochs: for epoch in 1..=config.total_epochs {
        let stage = *stage_for_epoch(&config.schedule, epoch)?;
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for (batch_idx, batch) in indices.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &row_idx in batch {
                let row = matrix.row(row_idx);
                let y = matrix.labels[row_idx];
                let trace = model.forward(row)?;
                batch_loss += stage.kind.loss(trace.p, y, &alpha)?;
                if (trace.p >= 0.5) == (y == 1) {
                    correct += 1;
                }
                let dl_dp = loss_grad(trace.p, y, &alpha, &stage.kind) * scale;
                let sample_grads = model.backward(&trace, dl_dp);
                for (g, s) in grads.iter_mut().zip(sample_grads.iter()) {
                    *g += s;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += batch_loss;
            match config.optimizer {
                OptimizerKind::Adam => {
                    adam.update(model.params_mut(), &grads, config.learning_rate)
                }
                OptimizerKind::Sgd => {
                    for (p, g) in model.params_mut().iter_mut().zip(grads.iter()) {
                        *p -= config.learning_rate * g;
                    }
                }
            }
        }
        let mean_loss = epoch_loss / n_rows as f64;
        logs.push(EpochLog {
            epoch,
            stage: stage.kind,
            mean_loss,
            train_accuracy: correct as f64 / n_rows as f64,
        });
        if epoch == stage.last_epoch {
            checkpoints.push(StageCheckpoint {
                stage_index: checkpoints.len(),
                stage: stage.kind,
                epoch,
                model: model.clone(),
            });
        }
        if let Some(patience) = config.patience {
            if mean_loss + 1e-12 < best_loss {
                best_loss = mean_loss;
                stall = 0;
            } else {
                stall += 1;
                if stall >= patience {
                    if checkpoints.last().map(|c| c.epoch) != Some(epoch) {
                        checkpoints.push(StageCheckpoint {
                            stage_index: checkpoints.len(),
                            stage: stage.kind,
                            epoch,
                            model: model.clone(),
                        });
                    }
                    break 'epochs;
                }
            }
        }
    }

    Ok(TrainOutcome {
        model,
        logs,
        checkpoints,
        alpha,
    })
}

/// Seed for a (fold, schedule) work item derived from the master seed.
pub fn derive_seed(master: u64, fold_index: usize, schedule_index: usize) -> u64 {
    master
        .wrapping_add(fold_index as u64 * 10007)
        .wrapping_add(schedule_index as u64)
}
