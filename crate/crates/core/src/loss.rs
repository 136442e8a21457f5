//! Focal-loss stages, their analytic gradients, convexity diagnostics, and the
//! epoch schedule that switches between them.
//!
//! Three stage families are supported:
//! - a convex stage with modulator `(1 - gamma * p_t)`, valid for `gamma <= 1`,
//! - a power (focal) stage with modulator `(1 - p_t)^exponent`,
//! - and weighted cross-entropy as the shared `gamma = 0` / `exponent = 0` case.

use crate::error::{Error, Result};
use std::fmt;

/// Probability clamp applied before every logarithm.
pub const DEFAULT_EPSILON: f64 = 1e-7;

/// Per-class weights and clamp for the focal losses.
///
/// `gamma` is the focusing value used by the convex stage; power stages take
/// their exponent explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha_pos: f64,
    pub alpha_neg: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha_pos: 1.0,
            alpha_neg: 1.0,
            gamma: 0.0,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl FocalParams {
    pub fn new(alpha_pos: f64, alpha_neg: f64, gamma: f64) -> Result<Self> {
        let params = Self {
            alpha_pos,
            alpha_neg,
            gamma,
            epsilon: DEFAULT_EPSILON,
        };
        params.validate()?;
        Ok(params)
    }

    /// Inverse-class-frequency weights normalized so `alpha_pos + alpha_neg = 2`.
    pub fn balanced(labels: &[u8]) -> Result<Self> {
        let positives = labels.iter().filter(|&&y| y == 1).count();
        let negatives = labels.len() - positives;
        if positives == 0 || negatives == 0 {
            return Err(Error::ClassMissing {
                positives,
                negatives,
            });
        }
        let n = labels.len() as f64;
        Self::new(2.0 * negatives as f64 / n, 2.0 * positives as f64 / n, 0.0)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.01) {
            return Err(Error::Invalid(format!(
                "epsilon must lie in (0, 0.01), got {}",
                self.epsilon
            )));
        }
        if self.gamma < 0.0 || self.alpha_pos < 0.0 || self.alpha_neg < 0.0 {
            return Err(Error::Invalid(
                "gamma and alpha weights must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Class weight for the observed label.
    pub fn alpha_t(&self, y: u8) -> f64 {
        if y == 1 {
            self.alpha_pos
        } else {
            self.alpha_neg
        }
    }

    /// Clamp a probability into `[epsilon, 1 - epsilon]`.
    pub fn clamp(&self, p: f64) -> f64 {
        p.max(self.epsilon).min(1.0 - self.epsilon)
    }
}

/// Probability assigned to the true class: `p` for positives, `1 - p` otherwise.
pub fn p_t(p: f64, y: u8) -> f64 {
    if y == 1 {
        p
    } else {
        1.0 - p
    }
}

/// Convex focal stage: `-alpha_t * (1 - gamma * p_t) * log(p_t)`.
///
/// Restricted to `gamma <= 1` so the modulator stays positive for every
/// `p_t` in `(0, 1)`.
pub fn convex_loss(p: f64, y: u8, params: &FocalParams) -> Result<f64> {
    if params.gamma > 1.0 {
        return Err(Error::ConvexGammaTooLarge(params.gamma));
    }
    let pt = p_t(params.clamp(p), y);
    Ok(-params.alpha_t(y) * (1.0 - params.gamma * pt) * pt.ln())
}

/// Focal stage: `-alpha_t * (1 - p_t)^exponent * log(p_t)`.
pub fn power_loss(p: f64, y: u8, params: &FocalParams, exponent: f64) -> Result<f64> {
    if exponent < 0.0 {
        return Err(Error::Invalid(format!(
            "power exponent must be nonnegative, got {exponent}"
        )));
    }
    let pt = p_t(params.clamp(p), y);
    Ok(-params.alpha_t(y) * (1.0 - pt).powf(exponent) * pt.ln())
}

/// Analytic `dL/dp` of the stage loss.
///
/// Derived from the stage loss in `p_t` composed with `dp_t/dp = +-1`.
pub fn loss_grad(p: f64, y: u8, params: &FocalParams, stage: &StageKind) -> f64 {
    let pt = p_t(params.clamp(p), y);
    let alpha = params.alpha_t(y);
    let d_dpt = match *stage {
        StageKind::Convex { gamma } => alpha * (gamma * pt.ln() - (1.0 - gamma * pt) / pt),
        StageKind::Power { exponent } => {
            let complement = 1.0 - pt;
            // exponent * c^(exponent-1) with the exponent factored first so the
            // exponent = 0 case is exactly zero.
            let modulator_grad = if exponent == 0.0 {
                0.0
            } else {
                exponent * complement.powf(exponent - 1.0)
            };
            alpha * (modulator_grad * pt.ln() - complement.powf(exponent) / pt)
        }
    };
    if y == 1 {
        d_dpt
    } else {
        -d_dpt
    }
}

/// Second derivative of the convex stage in `p_t`, with the class weight
/// dropped: `gamma / p + 1 / p^2`.
pub fn convex_second_derivative(p: f64, gamma: f64) -> f64 {
    gamma / p + 1.0 / (p * p)
}

/// One stage of a training schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageKind {
    Convex { gamma: f64 },
    Power { exponent: f64 },
}

impl StageKind {
    /// Stage loss for one prediction.
    pub fn loss(&self, p: f64, y: u8, params: &FocalParams) -> Result<f64> {
        match *self {
            StageKind::Convex { gamma } => convex_loss(p, y, &params.with_gamma(gamma)),
            StageKind::Power { exponent } => power_loss(p, y, params, exponent),
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StageKind::Convex { gamma } => write!(f, "convex:{}", fmt_value(gamma)),
            StageKind::Power { exponent } => write!(f, "power:{}", fmt_value(exponent)),
        }
    }
}

/// Format a stage value without a trailing `.0` for integers.
pub(crate) fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub kind: StageKind,
    pub first_epoch: usize,
    pub last_epoch: usize,
}

/// Ordered stages tiling `[1, total_epochs]` with no gaps or overlaps.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePlan {
    stages: Vec<Stage>,
}

impl SchedulePlan {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidSchedule("no stages".into()));
        }
        let mut expected_first = 1;
        for stage in &stages {
            if stage.first_epoch != expected_first {
                return Err(Error::InvalidSchedule(format!(
                    "stage starting at epoch {} leaves a gap or overlap (expected {})",
                    stage.first_epoch, expected_first
                )));
            }
            if stage.last_epoch < stage.first_epoch {
                return Err(Error::InvalidSchedule(format!(
                    "stage range {}-{} is empty",
                    stage.first_epoch, stage.last_epoch
                )));
            }
            match stage.kind {
                StageKind::Convex { gamma } => {
                    if !(0.0..=1.0).contains(&gamma) {
                        return Err(Error::ConvexGammaTooLarge(gamma));
                    }
                }
                StageKind::Power { exponent } => {
                    if exponent < 0.0 {
                        return Err(Error::InvalidSchedule(format!(
                            "negative power exponent {exponent}"
                        )));
                    }
                }
            }
            expected_first = stage.last_epoch + 1;
        }
        Ok(Self { stages })
    }

    /// Single convex stage over all epochs.
    pub fn single_convex(gamma: f64, total_epochs: usize) -> Result<Self> {
        Self::new(vec![Stage {
            kind: StageKind::Convex { gamma },
            first_epoch: 1,
            last_epoch: total_epochs,
        }])
    }

    /// Single power stage over all epochs.
    pub fn single_power(exponent: f64, total_epochs: usize) -> Result<Self> {
        Self::new(vec![Stage {
            kind: StageKind::Power { exponent },
            first_epoch: 1,
            last_epoch: total_epochs,
        }])
    }

    /// Three-stage plan: convex (gamma 0) through `e1`, then the intermediate
    /// exponent `final_gamma / 2` through `e2`, then `final_gamma` to the end.
    pub fn multistage(final_gamma: f64, e1: usize, e2: usize, total_epochs: usize) -> Result<Self> {
        if !(e1 >= 1 && e1 < e2 && e2 < total_epochs) {
            return Err(Error::InvalidSchedule(format!(
                "multistage cutoffs must satisfy 1 <= e1 < e2 < total, got e1={e1}, e2={e2}, total={total_epochs}"
            )));
        }
        Self::new(vec![
            Stage {
                kind: StageKind::Convex { gamma: 0.0 },
                first_epoch: 1,
                last_epoch: e1,
            },
            Stage {
                kind: StageKind::Power {
                    exponent: final_gamma / 2.0,
                },
                first_epoch: e1 + 1,
                last_epoch: e2,
            },
            Stage {
                kind: StageKind::Power {
                    exponent: final_gamma,
                },
                first_epoch: e2 + 1,
                last_epoch: total_epochs,
            },
        ])
    }

    /// Default plan: epochs 1-10 convex, 11-50 power 2, 51-100 power 4 at 100
    /// total epochs; cutoffs scale proportionally for other totals.
    pub fn default_multistage(total_epochs: usize) -> Result<Self> {
        if total_epochs < 3 {
            return Err(Error::InvalidSchedule(format!(
                "multistage needs at least 3 epochs, got {total_epochs}"
            )));
        }
        let e1 = ((total_epochs as f64 * 0.1).round() as usize).clamp(1, total_epochs - 2);
        let e2 = ((total_epochs as f64 * 0.5).round() as usize).clamp(e1 + 1, total_epochs - 1);
        Self::multistage(4.0, e1, e2, total_epochs)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.last().map(|s| s.last_epoch).unwrap_or(0)
    }

    /// Loss definition used when validating or reporting after training.
    pub fn final_stage(&self) -> &Stage {
        self.stages.last().expect("plan has at least one stage")
    }
}

/// The unique stage whose epoch range contains `epoch` (1-based).
pub fn stage_for_epoch(plan: &SchedulePlan, epoch: usize) -> Result<&Stage> {
    plan.stages
        .iter()
        .find(|s| s.first_epoch <= epoch && epoch <= s.last_epoch)
        .ok_or(Error::EpochOutOfRange {
            epoch,
            total: plan.total_epochs(),
        })
}

/// A schedule with the display name used in reports and output files.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedSchedule {
    pub name: String,
    pub plan: SchedulePlan,
}

impl NamedSchedule {
    pub fn convex(gamma: f64, total_epochs: usize) -> Result<Self> {
        Ok(Self {
            name: format!("Convex(γ={})", fmt_value(gamma)),
            plan: SchedulePlan::single_convex(gamma, total_epochs)?,
        })
    }

    pub fn nonconvex(gamma: f64, total_epochs: usize) -> Result<Self> {
        Ok(Self {
            name: format!("Nonconvex(γ={})", fmt_value(gamma)),
            plan: SchedulePlan::single_power(gamma, total_epochs)?,
        })
    }

    pub fn multistage(total_epochs: usize) -> Result<Self> {
        Ok(Self {
            name: "Multistage".into(),
            plan: SchedulePlan::default_multistage(total_epochs)?,
        })
    }

    /// The four schedules compared by default.
    pub fn default_comparison(total_epochs: usize) -> Result<Vec<Self>> {
        Ok(vec![
            Self::convex(0.0, total_epochs)?,
            Self::multistage(total_epochs)?,
            Self::nonconvex(2.0, total_epochs)?,
            Self::nonconvex(4.0, total_epochs)?,
        ])
    }

    /// Filesystem-safe slug for per-schedule output files.
    pub fn slug(&self) -> String {
        let mut out = String::new();
        let normalized = self.name.replace("γ=", "g");
        for ch in normalized.chars() {
            if ch.is_ascii_alphanumeric() {
                out.push(ch.to_ascii_lowercase());
            } else if ch == '.' {
                out.push('p');
            } else if !out.ends_with('_') && !out.is_empty() {
                out.push('_');
            }
        }
        out.trim_matches('_').to_string()
    }
}
