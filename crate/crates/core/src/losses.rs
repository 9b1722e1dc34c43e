//! Training-loss arithmetic: dice, binary and categorical cross-entropy, the
//! deep-supervision weighted sum and the polynomial learning-rate decay.
//!
//! Everything here is a pure function over `f64` slices. Log arguments are
//! clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]`; dice terms use the raw
//! probabilities.

use thiserror::Error;

/// Lower bound applied to every log argument.
pub const CLAMP_EPS: f64 = 1e-7;

/// Smoothing added to numerator and denominator of the soft dice.
pub const DEFAULT_DICE_SMOOTH: f64 = 1e-5;

/// Tolerance on the row sums accepted by [`ce`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("prediction has {pred} values, target has {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("probability {value} at index {index} is outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error("target {value} at index {index} is neither 0 nor 1")]
    InvalidTarget { index: usize, value: f64 },
    #[error("row {row} sums to {sum}")]
    NotNormalized { row: usize, sum: f64 },
    #[error("target row {row} is not one-hot")]
    NotOneHot { row: usize },
    #[error("epoch {epoch} outside [0, {max}]")]
    EpochOutOfRange { epoch: u32, max: u32 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Predicted probabilities `ŷ`, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    probs: Vec<f64>,
}

impl Prediction {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(LossError::InvalidProbability { index, value });
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probabilities as seen by the log terms: strictly inside (0, 1).
    pub fn clamped(&self) -> impl Iterator<Item = f64> + '_ {
        self.probs.iter().map(|&p| clamp(p))
    }
}

/// Binary targets `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    labels: Vec<f64>,
}

impl Target {
    pub fn new(labels: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = labels
            .iter()
            .enumerate()
            .find(|(_, v)| **v != 0.0 && **v != 1.0)
        {
            return Err(LossError::InvalidTarget { index, value });
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

fn check_pair(pred: &Prediction, tgt: &Target) -> Result<usize> {
    if pred.len() != tgt.len() {
        return Err(LossError::LengthMismatch {
            pred: pred.len(),
            target: tgt.len(),
        });
    }
    if pred.is_empty() {
        return Err(LossError::EmptyInput);
    }
    Ok(pred.len())
}

/// Mean binary cross-entropy over all `N` outputs.
pub fn bce(pred: &Prediction, tgt: &Target) -> Result<f64> {
    let n = check_pair(pred, tgt)?;
    let sum: f64 = pred
        .clamped()
        .zip(tgt.labels())
        .map(|(p, &y)| y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        .sum();
    Ok(-sum / n as f64)
}

/// d(bce)/d(ŷ_i), evaluated at the clamped probability.
pub fn grad_bce(pred: &Prediction, tgt: &Target) -> Result<Vec<f64>> {
    let n = check_pair(pred, tgt)? as f64;
    Ok(pred
        .clamped()
        .zip(tgt.labels())
        .map(|(p, &y)| -(y / p - (1.0 - y) / (1.0 - p)) / n)
        .collect())
}

/// Categorical cross-entropy averaged over rows; each row of `pred` is a
/// probability vector and each row of `tgt` a one-hot vector.
pub fn ce<P: AsRef<[f64]>, T: AsRef<[f64]>>(pred: &[P], tgt: &[T]) -> Result<f64> {
    if pred.len() != tgt.len() {
        return Err(LossError::LengthMismatch {
            pred: pred.len(),
            target: tgt.len(),
        });
    }
    if pred.is_empty() {
        return Err(LossError::EmptyInput);
    }
    let mut total = 0.0;
    for (row, (p, y)) in pred.iter().zip(tgt).enumerate() {
        let (p, y) = (p.as_ref(), y.as_ref());
        if p.len() != y.len() {
            return Err(LossError::LengthMismatch {
                pred: p.len(),
                target: y.len(),
            });
        }
        if p.is_empty() {
            return Err(LossError::EmptyInput);
        }
        if let Some((index, &value)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(LossError::InvalidProbability { index, value });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(LossError::NotNormalized { row, sum });
        }
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(LossError::NotOneHot { row });
        }
        total -= p
            .iter()
            .zip(y)
            .map(|(&p, &y)| y * clamp(p).ln())
            .sum::<f64>();
    }
    Ok(total / pred.len() as f64)
}

/// Soft dice loss `1 - (2·Σŷy + s) / (Σŷ + Σy + s)`.
pub fn dice_loss(pred: &Prediction, tgt: &Target, smooth: f64) -> Result<f64> {
    check_pair(pred, tgt)?;
    let (inter, sum_p, sum_y) = dice_sums(pred, tgt);
    Ok(1.0 - (2.0 * inter + smooth) / (sum_p + sum_y + smooth))
}

/// d(dice_loss)/d(ŷ_i).
pub fn grad_dice(pred: &Prediction, tgt: &Target, smooth: f64) -> Result<Vec<f64>> {
    check_pair(pred, tgt)?;
    let (inter, sum_p, sum_y) = dice_sums(pred, tgt);
    let num = 2.0 * inter + smooth;
    let den = sum_p + sum_y + smooth;
    Ok(tgt
        .labels()
        .iter()
        .map(|&y| -(2.0 * y * den - num) / (den * den))
        .collect())
}

fn dice_sums(pred: &Prediction, tgt: &Target) -> (f64, f64, f64) {
    pred.probs()
        .iter()
        .zip(tgt.labels())
        .fold((0.0, 0.0, 0.0), |(i, p, t), (&pv, &yv)| {
            (i + pv * yv, p + pv, t + yv)
        })
}

/// Weighted dice + BCE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedLoss {
    pub dice_weight: f64,
    pub bce_weight: f64,
    pub smooth: f64,
}

impl Default for CombinedLoss {
    fn default() -> Self {
        Self {
            dice_weight: 1.0,
            bce_weight: 1.0,
            smooth: DEFAULT_DICE_SMOOTH,
        }
    }
}

impl CombinedLoss {
    pub fn eval(&self, pred: &Prediction, tgt: &Target) -> Result<f64> {
        Ok(self.dice_weight * dice_loss(pred, tgt, self.smooth)?
            + self.bce_weight * bce(pred, tgt)?)
    }
}

/// `dice_loss + bce` with unit weights.
pub fn combined_loss(pred: &Prediction, tgt: &Target) -> Result<f64> {
    CombinedLoss::default().eval(pred, tgt)
}

/// Geometric weights `1, 1/2, 1/4, …` for auxiliary outputs, highest
/// resolution first.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepSupervisionWeights {
    weights: Vec<f64>,
}

impl DeepSupervisionWeights {
    pub const DEFAULT_LEVELS: usize = 3;

    pub fn new(levels: usize) -> Self {
        let weights = std::iter::successors(Some(1.0f64), |w| Some(w / 2.0))
            .take(levels)
            .collect();
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Default for DeepSupervisionWeights {
    fn default() -> Self {
        Self::new(Self::DEFAULT_LEVELS)
    }
}

/// `Σ (1/2)^i · L_i` over the resolution levels.
pub fn deep_supervision_loss(level_losses: &[f64]) -> Result<f64> {
    if level_losses.is_empty() {
        return Err(LossError::EmptyInput);
    }
    let w = DeepSupervisionWeights::new(level_losses.len());
    Ok(w.weights()
        .iter()
        .zip(level_losses)
        .map(|(w, l)| w * l)
        .sum())
}

/// Polynomial learning-rate decay `lr0 · (1 - epoch/epoch_max)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    lr0: f64,
    epoch_max: u32,
    exponent: f64,
}

impl LrSchedule {
    pub const DEFAULT_EXPONENT: f64 = 0.9;

    pub fn new(lr0: f64, epoch_max: u32, exponent: f64) -> Result<Self> {
        if !(lr0.is_finite() && lr0 > 0.0) {
            return Err(LossError::InvalidSchedule("lr0 must be positive"));
        }
        if epoch_max == 0 {
            return Err(LossError::InvalidSchedule("epoch_max must be positive"));
        }
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(LossError::InvalidSchedule("exponent must be positive"));
        }
        Ok(Self {
            lr0,
            epoch_max,
            exponent,
        })
    }

    pub fn with_default_exponent(lr0: f64, epoch_max: u32) -> Result<Self> {
        Self::new(lr0, epoch_max, Self::DEFAULT_EXPONENT)
    }

    pub fn lr0(&self) -> f64 {
        self.lr0
    }

    pub fn epoch_max(&self) -> u32 {
        self.epoch_max
    }
}

pub fn poly_lr(sched: &LrSchedule, epoch: u32) -> Result<f64> {
    if epoch > sched.epoch_max {
        return Err(LossError::EpochOutOfRange {
            epoch,
            max: sched.epoch_max,
        });
    }
    let base = 1.0 - f64::from(epoch) / f64::from(sched.epoch_max);
    Ok(sched.lr0 * base.powf(sched.exponent))
}
