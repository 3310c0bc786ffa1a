//! OOD heads and scorers.
//!
//! The one-vs-all (OVA) head holds `N + 1` binary classifiers, one per ID
//! class plus background. Head `j` outputs two logits (positive, negative);
//! its ID-confidence is the positive component of their softmax.
//!
//! For a proposal labeled `y` the OVA loss is
//!
//! ```text
//! L(x, y) = -log p_y(x) - min_{j != y} log(1 - p_j(x))
//! ```
//!
//! i.e. a positive term on head `y` plus a single hard-negative term on the
//! other head that currently claims `x` most strongly.
//!
//! MSP, energy and the single binary ("entropy") head are the alternative
//! scorers. All four share [`ScorerDescriptor`], so the trainer can swap them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::Linear;
use crate::error::{Error, Result};
use crate::math::logsumexp;

#[derive(Debug, Clone, PartialEq)]
pub struct OvaParams {
    /// `2(N + 1) x d`; rows `2j` and `2j + 1` are head `j`'s positive and
    /// negative logits.
    pub linear: Linear,
}

impl OvaParams {
    pub fn zeros(num_id: usize, feature_dim: usize) -> Self {
        Self {
            linear: Linear::zeros(2 * (num_id + 1), feature_dim),
        }
    }

    pub fn num_heads(&self) -> usize {
        self.linear.rows / 2
    }
}

/// Per-head positive probabilities `p_j`, `j` in `[0, N]`. They do not sum
/// to one across heads.
#[derive(Debug, Clone, PartialEq)]
pub struct OodScore(pub Vec<f64>);

impl OodScore {
    pub fn for_class(&self, class: usize) -> f64 {
        self.0[class]
    }
}

/// Per head: `(log p_j, log(1 - p_j))`.
fn head_log_probs(logits: &[f64]) -> Vec<(f64, f64)> {
    logits
        .chunks_exact(2)
        .map(|pair| {
            let lse = logsumexp(pair);
            (pair[0] - lse, pair[1] - lse)
        })
        .collect()
}

pub fn ova_forward(params: &OvaParams, feature: &[f64]) -> OodScore {
    let logits = params.linear.forward(feature);
    OodScore(
        head_log_probs(&logits)
            .into_iter()
            .map(|(lp, _)| lp.exp())
            .collect(),
    )
}

/// The negative head chosen by the loss: the `j != y` minimizing
/// `log(1 - p_j)`, lowest index on ties.
pub fn hard_negative(log_probs: &[(f64, f64)], y: usize) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (j, &(_, lneg)) in log_probs.iter().enumerate() {
        if j == y {
            continue;
        }
        match best {
            Some((_, b)) if lneg >= b => {}
            _ => best = Some((j, lneg)),
        }
    }
    best.map(|(j, _)| j).expect("at least two heads")
}

/// Adds this sample's loss gradient (scaled) into `grad` and returns the loss.
fn ova_accumulate(
    params: &OvaParams,
    feature: &[f64],
    y: usize,
    grad: &mut OvaParams,
    scale: f64,
) -> f64 {
    let logits = params.linear.forward(feature);
    let lp = head_log_probs(&logits);
    let k = hard_negative(&lp, y);
    let (lpos_y, _) = lp[y];
    let (lpos_k, lneg_k) = lp[k];
    let p_y = lpos_y.exp();
    let p_k = lpos_k.exp();

    let mut dlogits = vec![0.0; logits.len()];
    dlogits[2 * y] = -(1.0 - p_y);
    dlogits[2 * y + 1] = 1.0 - p_y;
    dlogits[2 * k] = p_k;
    dlogits[2 * k + 1] = -p_k;
    grad.linear.accumulate(&dlogits, feature, scale);

    -lpos_y - lneg_k
}

fn check_label(params: &OvaParams, y: usize) -> Result<()> {
    let heads = params.num_heads();
    if heads < 2 {
        return Err(Error::InvalidArgument(
            "OVA loss needs at least one negative head (N >= 1)".into(),
        ));
    }
    if y >= heads {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {heads} heads"
        )));
    }
    Ok(())
}

/// OVA loss for one proposal with label `y` in `[0, N]`, and its gradient.
/// Only heads `y` and the hard negative receive gradient.
pub fn ova_loss(params: &OvaParams, feature: &[f64], y: usize) -> Result<(f64, OvaParams)> {
    check_label(params, y)?;
    let mut grad = OvaParams {
        linear: Linear::zeros(params.linear.rows, params.linear.cols),
    };
    let loss = ova_accumulate(params, feature, y, &mut grad, 1.0);
    Ok((loss, grad))
}

/// Mean OVA loss over a batch.
pub fn ova_batch_loss(params: &OvaParams, batch: &[(Vec<f64>, usize)]) -> Result<(f64, OvaParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("OVA batch"));
    }
    let mut grad = OvaParams {
        linear: Linear::zeros(params.linear.rows, params.linear.cols),
    };
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x, y) in batch {
        check_label(params, *y)?;
        total += ova_accumulate(params, x, *y, &mut grad, scale);
    }
    Ok((total * scale, grad))
}

/// Single two-logit head separating ID from everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryHeadParams {
    pub linear: Linear,
}

impl BinaryHeadParams {
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            linear: Linear::zeros(2, feature_dim),
        }
    }
}

/// Positive-class probability of the binary head.
pub fn score_entropy_head(params: &BinaryHeadParams, feature: &[f64]) -> f64 {
    let logits = params.linear.forward(feature);
    (logits[0] - logsumexp(&logits)).exp()
}

/// Mean binary cross-entropy over `(feature, is_id)` pairs.
pub fn binary_batch_loss(
    params: &BinaryHeadParams,
    batch: &[(Vec<f64>, bool)],
) -> Result<(f64, BinaryHeadParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("binary head batch"));
    }
    let mut grad = BinaryHeadParams::zeros(params.linear.cols);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x, is_id) in batch {
        let logits = params.linear.forward(x);
        let lse = logsumexp(&logits);
        let target = if *is_id { 0 } else { 1 };
        total += lse - logits[target];
        let mut d: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        d[target] -= 1.0;
        grad.linear.accumulate(&d, x, scale);
    }
    Ok((total * scale, grad))
}

/// Maximum softmax probability over the foreground entries; the last entry
/// of `cls_probs` is background.
pub fn score_msp(cls_probs: &[f64]) -> f64 {
    cls_probs[..cls_probs.len() - 1]
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Free energy `-T log sum_j exp(z_j / T)`. Lower is more ID.
pub fn score_energy(logits: &[f64], temperature: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    -temperature * logsumexp(&scaled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Ova,
    Msp,
    Energy,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HigherIsId,
    LowerIsId,
}

/// Where a scorer's filter threshold comes from when none is configured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdDefault {
    Fixed(f64),
    /// Set once after burn-in so that this fraction of labeled foreground
    /// proposals is accepted. Used for unbounded scores whose scale depends
    /// on the trained logits.
    LabeledQuantile(f64),
}

/// Name, comparison direction and default filter threshold of a scorer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorerDescriptor {
    pub name: &'static str,
    pub direction: Direction,
    pub default_threshold: ThresholdDefault,
    /// Whether the scorer owns a head trained with the OOD losses.
    pub trainable: bool,
    /// Whether scores are probabilities, so the three-band rule applies.
    pub probabilistic: bool,
}

impl ScorerDescriptor {
    /// Maps a raw score to "higher is more ID".
    pub fn oriented(&self, raw: f64) -> f64 {
        match self.direction {
            Direction::HigherIsId => raw,
            Direction::LowerIsId => -raw,
        }
    }

    /// Whether `raw` is on the ID side of `threshold` (inclusive).
    pub fn accepts(&self, raw: f64, threshold: f64) -> bool {
        self.oriented(raw) >= self.oriented(threshold)
    }
}

/// Fraction of labeled foreground proposals the calibrated energy threshold
/// accepts.
pub const ENERGY_ID_ACCEPTANCE: f64 = 0.95;

impl ScorerKind {
    pub const ALL: [ScorerKind; 4] = [
        ScorerKind::Ova,
        ScorerKind::Msp,
        ScorerKind::Energy,
        ScorerKind::Entropy,
    ];

    pub fn descriptor(self) -> ScorerDescriptor {
        match self {
            ScorerKind::Ova => ScorerDescriptor {
                name: "ova",
                direction: Direction::HigherIsId,
                default_threshold: ThresholdDefault::Fixed(0.5),
                trainable: true,
                probabilistic: true,
            },
            ScorerKind::Msp => ScorerDescriptor {
                name: "msp",
                direction: Direction::HigherIsId,
                default_threshold: ThresholdDefault::Fixed(0.5),
                trainable: false,
                probabilistic: true,
            },
            ScorerKind::Energy => ScorerDescriptor {
                name: "energy",
                direction: Direction::LowerIsId,
                default_threshold: ThresholdDefault::LabeledQuantile(ENERGY_ID_ACCEPTANCE),
                trainable: false,
                probabilistic: false,
            },
            ScorerKind::Entropy => ScorerDescriptor {
                name: "entropy",
                direction: Direction::HigherIsId,
                default_threshold: ThresholdDefault::Fixed(0.5),
                trainable: true,
                probabilistic: true,
            },
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.descriptor().name)
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScorerKind::ALL
            .into_iter()
            .find(|k| k.descriptor().name == s)
            .ok_or_else(|| {
                Error::config("scorer", format!("unknown scorer `{s}` (ova, msp, energy, entropy)"))
            })
    }
}
