//! Safety levels and the estimators that produce them.
//!
//! A safety level `mu` lies in `[-1, 0]`; `mu = prob_safe - 1`, so values at
//! or below -0.5 correspond to an "unsafe" classification. The learned
//! image classifier is replaced here by a confusion-matrix sensor model:
//! given the ground truth, draw the classification cell (TP/FN/TN/FP) from
//! recall and false-positive rate, then draw `mu` from that cell's
//! distribution.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::Behavior;
use crate::lane_map::{Pose, PoseKey};

#[derive(Debug, Error)]
pub enum SafetyError {
    #[error("value {0} is outside its allowed range")]
    OutOfRange(f64),
    #[error("base rate of 1 leaves no negatives to derive a false-positive rate from")]
    DegenerateBaseRate,
    #[error("bad histogram: {0}")]
    Histogram(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SafetyLevel(f64);

impl SafetyLevel {
    pub const SAFE: SafetyLevel = SafetyLevel(0.0);
    pub const UNSAFE_THRESHOLD: f64 = -0.5;

    pub fn new(mu: f64) -> Result<Self, SafetyError> {
        if (-1.0..=0.0).contains(&mu) {
            Ok(SafetyLevel(mu))
        } else {
            Err(SafetyError::OutOfRange(mu))
        }
    }

    pub fn mu(self) -> f64 {
        self.0
    }

    /// Classified unsafe (the positive class).
    pub fn is_unsafe(self) -> bool {
        self.0 <= Self::UNSAFE_THRESHOLD
    }
}

/// `mu = prob_neg - 1`, where `prob_neg` is the probability of the safe label.
pub fn mu_from_prob(prob_neg: f64) -> Result<SafetyLevel, SafetyError> {
    if !(0.0..=1.0).contains(&prob_neg) {
        return Err(SafetyError::OutOfRange(prob_neg));
    }
    SafetyLevel::new(prob_neg - 1.0)
}

/// False-positive rate implied by precision, recall and the positive base
/// rate, clamped to `[0, 1]`.
pub fn derive_fpr(precision: f64, recall: f64, base_rate: f64) -> Result<f64, SafetyError> {
    for p in [precision, recall] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(SafetyError::OutOfRange(p));
        }
    }
    if !(0.0..=1.0).contains(&base_rate) {
        return Err(SafetyError::OutOfRange(base_rate));
    }
    if base_rate == 1.0 {
        return Err(SafetyError::DegenerateBaseRate);
    }
    let fpr = (1.0 - precision) / precision * recall * base_rate / (1.0 - base_rate);
    Ok(fpr.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruth {
    pub is_unsafe: bool,
}

impl GroundTruth {
    pub const SAFE: GroundTruth = GroundTruth { is_unsafe: false };
    pub const UNSAFE: GroundTruth = GroundTruth { is_unsafe: true };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    TP,
    FN,
    TN,
    FP,
}

impl Cell {
    /// Cells that emit an unsafe-side `mu`.
    pub fn is_positive(self) -> bool {
        matches!(self, Cell::TP | Cell::FP)
    }
}

/// Distribution of `mu` within one half of `[-1, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum MuDistribution {
    Uniform,
    /// `(low, high, weight)` bins; sampled uniformly inside the chosen bin.
    Histogram(Vec<(f64, f64, f64)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Half {
    /// `[-1, -0.5]`
    Positive,
    /// `(-0.5, 0]`
    Negative,
}

impl Half {
    fn scale_unit(self, u: f64) -> f64 {
        // u in [0, 1)
        match self {
            Half::Positive => -1.0 + 0.5 * u,
            Half::Negative => -0.5 * u,
        }
    }

    fn contains(self, mu: f64) -> bool {
        match self {
            Half::Positive => (-1.0..=-0.5).contains(&mu),
            Half::Negative => mu > -0.5 && mu <= 0.0,
        }
    }

    fn clamp(self, mu: f64) -> f64 {
        match self {
            Half::Positive => mu.clamp(-1.0, -0.5),
            Half::Negative => {
                if mu <= -0.5 {
                    // nearest representable value inside the open bound
                    f64::from_bits((-0.5f64).to_bits() - 1)
                } else {
                    mu.min(0.0)
                }
            }
        }
    }
}

impl MuDistribution {
    fn sample<R: Rng + ?Sized>(&self, half: Half, rng: &mut R) -> f64 {
        match self {
            MuDistribution::Uniform => half.scale_unit(rng.gen::<f64>()),
            MuDistribution::Histogram(bins) => {
                let total: f64 = bins.iter().map(|b| b.2).sum();
                let mut pick = rng.gen::<f64>() * total;
                let mut chosen = bins.last().expect("validated non-empty");
                for bin in bins {
                    if pick < bin.2 {
                        chosen = bin;
                        break;
                    }
                    pick -= bin.2;
                }
                let (lo, hi, _) = *chosen;
                half.clamp(lo + (hi - lo) * rng.gen::<f64>())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub recall: f64,
    pub precision: f64,
    pub base_rate: f64,
    pub false_positive_rate: f64,
    pub mu_positive: MuDistribution,
    pub mu_negative: MuDistribution,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel::from_precision_recall(0.84, 0.85, 0.465).expect("defaults are valid")
    }
}

/// Serializable sensor parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    pub recall: f64,
    pub precision: f64,
    pub base_rate: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        SensorParams {
            recall: 0.85,
            precision: 0.84,
            base_rate: 0.465,
        }
    }
}

impl SensorModel {
    pub fn from_precision_recall(precision: f64, recall: f64, base_rate: f64) -> Result<Self, SafetyError> {
        let fpr = derive_fpr(precision, recall, base_rate)?;
        Ok(SensorModel {
            recall,
            precision,
            base_rate,
            false_positive_rate: fpr,
            mu_positive: MuDistribution::Uniform,
            mu_negative: MuDistribution::Uniform,
        })
    }

    pub fn from_params(p: &SensorParams) -> Result<Self, SafetyError> {
        Self::from_precision_recall(p.precision, p.recall, p.base_rate)
    }

    /// Model with explicit rates; precision and base rate are left at the
    /// defaults and do not affect sampling.
    pub fn with_rates(recall: f64, false_positive_rate: f64) -> Result<Self, SafetyError> {
        for p in [recall, false_positive_rate] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SafetyError::OutOfRange(p));
            }
        }
        Ok(SensorModel {
            recall,
            false_positive_rate,
            ..SensorModel::default()
        })
    }

    pub fn f1(&self) -> f64 {
        2.0 * self.precision * self.recall / (self.precision + self.recall)
    }

    /// Replaces the uniform `mu` distributions with histograms read from a
    /// CSV file with columns `cell,bin_low,bin_high,weight`. TP and FP rows
    /// feed the positive side, FN and TN rows the negative side.
    pub fn with_histogram_file(self, path: impl AsRef<Path>) -> Result<Self, SafetyError> {
        let reader = csv::Reader::from_path(path)?;
        self.with_histogram_reader(reader)
    }

    pub fn with_histogram_reader<R: std::io::Read>(mut self, mut reader: csv::Reader<R>) -> Result<Self, SafetyError> {
        #[derive(Deserialize)]
        struct Row {
            cell: Cell,
            bin_low: f64,
            bin_high: f64,
            weight: f64,
        }
        let mut positive = Vec::new();
        let mut negative = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row?;
            let half = if row.cell.is_positive() {
                Half::Positive
            } else {
                Half::Negative
            };
            let inside = row.bin_low <= row.bin_high
                && row.weight >= 0.0
                && (half.contains(row.bin_low) || half == Half::Negative && row.bin_low == -0.5)
                && half.contains(row.bin_high);
            if !inside {
                return Err(SafetyError::Histogram(format!(
                    "{:?} bin [{}, {}] weight {} is outside its half-interval",
                    row.cell, row.bin_low, row.bin_high, row.weight
                )));
            }
            let bins = if half == Half::Positive {
                &mut positive
            } else {
                &mut negative
            };
            bins.push((row.bin_low, row.bin_high, row.weight));
        }
        for (bins, slot) in [(positive, &mut self.mu_positive), (negative, &mut self.mu_negative)] {
            if bins.is_empty() {
                continue;
            }
            if bins.iter().map(|b| b.2).sum::<f64>() <= 0.0 {
                return Err(SafetyError::Histogram("bins have zero total weight".into()));
            }
            *slot = MuDistribution::Histogram(bins);
        }
        Ok(self)
    }
}

/// Draws the classification cell for `truth`, then a `mu` from that cell.
pub fn sample_estimate<R: Rng + ?Sized>(model: &SensorModel, truth: GroundTruth, rng: &mut R) -> (SafetyLevel, Cell) {
    let cell = if truth.is_unsafe {
        if rng.gen::<f64>() < model.recall {
            Cell::TP
        } else {
            Cell::FN
        }
    } else if rng.gen::<f64>() < model.false_positive_rate {
        Cell::FP
    } else {
        Cell::TN
    };
    let mu = if cell.is_positive() {
        model.mu_positive.sample(Half::Positive, rng)
    } else {
        model.mu_negative.sample(Half::Negative, rng)
    };
    (SafetyLevel(mu), cell)
}

/// What an estimator sees before the vehicle commits to a behavior. The
/// ground truth stands in for the camera observation.
#[derive(Debug, Clone, Copy)]
pub struct EstimateQuery<'a> {
    pub pose: &'a Pose,
    pub behavior: &'a Behavior,
    pub truth: GroundTruth,
}

pub trait SafetyEstimator {
    fn estimate(&mut self, query: &EstimateQuery<'_>) -> SafetyLevel;
}

/// Stochastic estimator backed by a [`SensorModel`] and its own random
/// stream.
#[derive(Debug, Clone)]
pub struct ConfusionMatrixEstimator {
    pub model: SensorModel,
    rng: ChaCha8Rng,
}

impl ConfusionMatrixEstimator {
    pub fn new(model: SensorModel, seed: u64) -> Self {
        ConfusionMatrixEstimator {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_rng(model: SensorModel, rng: ChaCha8Rng) -> Self {
        ConfusionMatrixEstimator { model, rng }
    }
}

impl SafetyEstimator for ConfusionMatrixEstimator {
    fn estimate(&mut self, query: &EstimateQuery<'_>) -> SafetyLevel {
        sample_estimate(&self.model, query.truth, &mut self.rng).0
    }
}

/// Deterministic estimator: fixed levels per ground truth, with optional
/// per-(pose, behavior) entries taking precedence.
#[derive(Debug, Clone)]
pub struct TableEstimator {
    pub safe_mu: SafetyLevel,
    pub unsafe_mu: SafetyLevel,
    pub entries: HashMap<(PoseKey, Behavior), SafetyLevel>,
}

impl TableEstimator {
    /// Reports 0.0 for safe behaviors and -1.0 for unsafe ones.
    pub fn perfect() -> Self {
        TableEstimator {
            safe_mu: SafetyLevel::SAFE,
            unsafe_mu: SafetyLevel(-1.0),
            entries: HashMap::new(),
        }
    }

    pub fn with_entry(mut self, pose: &Pose, behavior: &Behavior, mu: SafetyLevel) -> Self {
        self.entries.insert((pose.key(), behavior.clone()), mu);
        self
    }
}

impl SafetyEstimator for TableEstimator {
    fn estimate(&mut self, query: &EstimateQuery<'_>) -> SafetyLevel {
        if let Some(mu) = self.entries.get(&(query.pose.key(), query.behavior.clone())) {
            return *mu;
        }
        if query.truth.is_unsafe {
            self.unsafe_mu
        } else {
            self.safe_mu
        }
    }
}
