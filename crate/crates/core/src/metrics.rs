//! Benchmark scores: POPE accuracy/F1/yes-ratio, MME accuracy and Acc+,
//! and the AMBER generative CHAIR/Cover/Hal/Cog family.
//!
//! Every score is computed as an exact rational first (`*Exact` types) and
//! rounded to one decimal percentage, half away from zero, only at the end.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AnnotationSet, YesNo};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no items to score")]
    Empty,
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("image '{image_id}' has {count} question(s), expected 2")]
    Unpaired { image_id: String, count: usize },
}

fn ratio(num: usize, den: usize) -> BigRational {
    if den == 0 {
        return BigRational::zero();
    }
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Rounds a fraction in `[0, k]` to a percentage with one decimal.
pub fn percent_1dp(fraction: &BigRational) -> f64 {
    let tenths = (fraction * BigInt::from(1000) + BigRational::new(1.into(), 2.into())).floor();
    let tenths = tenths.to_integer().to_i64().expect("percentage fits in i64");
    tenths as f64 / 10.0
}

fn check_lengths(left: usize, right: usize) -> Result<(), MetricsError> {
    if left != right {
        return Err(MetricsError::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Confusion counts with `Yes` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn tally(predictions: &[YesNo], labels: &[YesNo]) -> Self {
        let mut c = Confusion::default();
        for (p, l) in predictions.iter().zip(labels) {
            match (p, l) {
                (YesNo::Yes, YesNo::Yes) => c.tp += 1,
                (YesNo::Yes, YesNo::No) => c.fp += 1,
                (YesNo::No, YesNo::No) => c.tn += 1,
                (YesNo::No, YesNo::Yes) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopeExact {
    pub accuracy: BigRational,
    pub f1: BigRational,
    pub yes_ratio: BigRational,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopeScore {
    pub accuracy: f64,
    pub f1: f64,
    pub yes_ratio: f64,
}

pub fn pope_exact(predictions: &[YesNo], labels: &[YesNo]) -> Result<PopeExact, MetricsError> {
    check_lengths(predictions.len(), labels.len())?;
    let c = Confusion::tally(predictions, labels);
    // 2PR/(P+R) reduces to 2TP/(2TP+FP+FN); both are 0 when TP = 0.
    let f1 = if c.tp == 0 {
        BigRational::zero()
    } else {
        ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
    };
    Ok(PopeExact {
        accuracy: ratio(c.tp + c.tn, c.total()),
        f1,
        yes_ratio: ratio(c.tp + c.fp, c.total()),
    })
}

pub fn pope_scores(predictions: &[YesNo], labels: &[YesNo]) -> Result<PopeScore, MetricsError> {
    let e = pope_exact(predictions, labels)?;
    Ok(PopeScore {
        accuracy: percent_1dp(&e.accuracy),
        f1: percent_1dp(&e.f1),
        yes_ratio: percent_1dp(&e.yes_ratio),
    })
}

/// One scored MME question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MmeJudgment {
    pub image_id: String,
    pub prediction: YesNo,
    pub label: YesNo,
}

/// Fractions in `[0, 1]` (`total` in `[0, 2]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MmeExact {
    pub acc: BigRational,
    pub acc_plus: BigRational,
    pub total: BigRational,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmeScore {
    pub acc: f64,
    pub acc_plus: f64,
    /// Rounded from the exact sum of `acc` and `acc_plus`, so it can differ
    /// from the sum of the two rounded fields by 0.1.
    pub total: f64,
}

pub fn mme_exact(judgments: &[MmeJudgment]) -> Result<MmeExact, MetricsError> {
    if judgments.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut per_image: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for j in judgments {
        per_image
            .entry(&j.image_id)
            .or_default()
            .push(j.prediction == j.label);
    }
    if let Some((id, v)) = per_image.iter().find(|(_, v)| v.len() != 2) {
        return Err(MetricsError::Unpaired {
            image_id: id.to_string(),
            count: v.len(),
        });
    }
    let correct = judgments.iter().filter(|j| j.prediction == j.label).count();
    let both = per_image.values().filter(|v| v.iter().all(|c| *c)).count();
    let acc = ratio(correct, judgments.len());
    let acc_plus = ratio(both, per_image.len());
    Ok(MmeExact {
        total: &acc + &acc_plus,
        acc,
        acc_plus,
    })
}

pub fn mme_scores(judgments: &[MmeJudgment]) -> Result<MmeScore, MetricsError> {
    let e = mme_exact(judgments)?;
    Ok(MmeScore {
        acc: percent_1dp(&e.acc),
        acc_plus: percent_1dp(&e.acc_plus),
        total: percent_1dp(&e.total),
    })
}

/// Mean fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmberExact {
    pub chair: BigRational,
    pub cover: BigRational,
    pub hal: BigRational,
    pub cog: BigRational,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmberScore {
    pub chair: f64,
    pub cover: f64,
    pub hal: f64,
    pub cog: f64,
}

/// `mentioned[i]` is the object set extracted from response `i`.
/// Empty mention sets score 0 for CHAIR and Cog; an empty truth set scores
/// 0 for Cover.
pub fn amber_exact(
    mentioned: &[BTreeSet<String>],
    annotations: &[AnnotationSet],
) -> Result<AmberExact, MetricsError> {
    check_lengths(mentioned.len(), annotations.len())?;
    let mut chair = BigRational::zero();
    let mut cover = BigRational::zero();
    let mut hal = 0usize;
    let mut cog = BigRational::zero();
    for (m, a) in mentioned.iter().zip(annotations) {
        let hallucinated = m.difference(&a.truth).count();
        chair += ratio(hallucinated, m.len());
        cover += ratio(m.intersection(&a.truth).count(), a.truth.len());
        if hallucinated > 0 {
            hal += 1;
        }
        cog += ratio(m.intersection(&a.hallucination).count(), m.len());
    }
    let n = BigRational::from_integer(BigInt::from(mentioned.len()));
    Ok(AmberExact {
        chair: chair / &n,
        cover: cover / &n,
        hal: ratio(hal, mentioned.len()),
        cog: cog / &n,
    })
}

pub fn amber_scores(
    mentioned: &[BTreeSet<String>],
    annotations: &[AnnotationSet],
) -> Result<AmberScore, MetricsError> {
    let e = amber_exact(mentioned, annotations)?;
    Ok(AmberScore {
        chair: percent_1dp(&e.chair),
        cover: percent_1dp(&e.cover),
        hal: percent_1dp(&e.hal),
        cog: percent_1dp(&e.cog),
    })
}
