//! Trainer and benchmark settings, `key = value` parsing and config hashing.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ood::ScorerKind;
use crate::synth::{ProposalParams, SplitParams, WorldParams};

/// Every hyperparameter of the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    /// Classification-confidence threshold for pseudo-labels.
    pub tau: f64,
    /// OOD filter threshold for pseudo-labels used by the detection losses.
    /// Zero disables the filter.
    pub tau_prime: f64,
    /// OOD-confidence threshold for mining ID targets for the OOD head.
    pub tau_ood: f64,
    /// Weight of the unsupervised detection loss.
    pub lambda_unsup: f64,
    /// Weight of the unsupervised OOD-head loss.
    pub lambda_ood: f64,
    /// EMA weight on the teacher.
    pub alpha: f64,
    pub fg_iou: f64,
    pub bg_iou: f64,
    /// Proposal budget per scene for the detection losses.
    pub proposals_per_image: usize,
    /// Proposal budget per labeled scene for the OOD head.
    pub ood_subsample: usize,
    pub burn_in_iters: usize,
    pub total_iters: usize,
    pub eval_interval: usize,
    pub learning_rate: f64,
    pub nms_threshold: f64,
    /// Teacher-side feature noise, in units of the class feature spread.
    pub weak_noise: f64,
    /// Student-side feature noise, in units of the class feature spread.
    pub strong_noise: f64,
    pub scorer: ScorerKind,
    pub seed: u64,
    /// Whether pseudo-boxes also drive the regression term.
    pub unsup_regression: bool,
    /// Labeled scenes per iteration.
    pub labeled_batch: usize,
    /// Unlabeled scenes per iteration.
    pub unlabeled_batch: usize,
    pub energy_temperature: f64,
    /// Fixed energy filter threshold; `None` calibrates it on labeled data
    /// after burn-in.
    pub energy_threshold: Option<f64>,
    /// IoU for a detection to count as a true positive.
    pub eval_iou: f64,
    /// Detections below this class score are dropped at evaluation.
    pub eval_min_score: f64,
    pub proposals: ProposalParams,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            tau: 0.7,
            tau_prime: 0.5,
            tau_ood: 0.7,
            lambda_unsup: 2.0,
            lambda_ood: 0.1,
            alpha: 0.99,
            fg_iou: 0.7,
            bg_iou: 0.3,
            proposals_per_image: 512,
            ood_subsample: 64,
            burn_in_iters: 1000,
            total_iters: 4000,
            eval_interval: 500,
            learning_rate: 0.5,
            nms_threshold: 0.5,
            weak_noise: 0.05,
            strong_noise: 0.2,
            scorer: ScorerKind::Ova,
            seed: 0,
            unsup_regression: true,
            labeled_batch: 2,
            unlabeled_batch: 2,
            energy_temperature: 1.0,
            energy_threshold: None,
            eval_iou: 0.5,
            eval_min_score: 0.05,
            proposals: ProposalParams::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(key, format!("{v} is outside [0, 1]")))
            }
        };
        in_unit("tau", self.tau)?;
        in_unit("alpha", self.alpha)?;
        in_unit("fg_iou", self.fg_iou)?;
        in_unit("bg_iou", self.bg_iou)?;
        in_unit("nms_threshold", self.nms_threshold)?;
        in_unit("eval_iou", self.eval_iou)?;
        if !(self.tau_ood >= 0.5 && self.tau_ood <= 1.0) {
            return Err(Error::config(
                "tau_ood",
                format!("{} must lie in [0.5, 1] for the three-band rule", self.tau_ood),
            ));
        }
        if !(self.tau_prime >= 0.0 && self.tau_prime <= self.tau_ood) {
            return Err(Error::config(
                "tau_prime",
                format!("{} must lie in [0, tau_ood = {}]", self.tau_prime, self.tau_ood),
            ));
        }
        if self.fg_iou <= self.bg_iou {
            return Err(Error::config("fg_iou", "must exceed bg_iou"));
        }
        for (key, v) in [
            ("lambda_unsup", self.lambda_unsup),
            ("lambda_ood", self.lambda_ood),
            ("weak_noise", self.weak_noise),
            ("strong_noise", self.strong_noise),
            ("proposal_jitter", self.proposals.jitter_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("{v} must be non-negative")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.energy_temperature > 0.0) {
            return Err(Error::config("energy_temperature", "must be positive"));
        }
        if self.ood_subsample == 0 || self.ood_subsample > self.proposals_per_image {
            return Err(Error::config(
                "ood_subsample",
                format!(
                    "{} must lie in [1, proposals_per_image = {}]",
                    self.ood_subsample, self.proposals_per_image
                ),
            ));
        }
        if self.total_iters < self.burn_in_iters {
            return Err(Error::config("total_iters", "must be at least burn_in_iters"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval", "must be positive"));
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(Error::config("labeled_batch", "batch sizes must be positive"));
        }
        if !(self.proposals.min_box > 0.0 && self.proposals.min_box <= self.proposals.max_box) {
            return Err(Error::config("proposal_min_box", "need 0 < min <= max"));
        }
        Ok(())
    }

    /// Filter threshold for the active scorer. An uncalibrated energy
    /// threshold accepts everything.
    pub fn filter_threshold(&self) -> f64 {
        match self.scorer {
            ScorerKind::Energy => self.energy_threshold.unwrap_or(f64::INFINITY),
            _ => self.tau_prime,
        }
    }
}

/// Benchmark settings: world plus scene splits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchConfig {
    pub world: WorldParams,
    pub splits: SplitParams,
    /// Seed offset for data generation; the run seed is added to it.
    pub data_seed: u64,
}

/// Everything a single run depends on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub trainer: TrainerConfig,
    pub bench: BenchConfig,
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected on/off, got `{value}`"))),
    }
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.trainer;
        let w = &mut self.bench.world;
        let s = &mut self.bench.splits;
        match key {
            "tau" => t.tau = parse_num(key, value)?,
            "tau_prime" => t.tau_prime = parse_num(key, value)?,
            "tau_ood" => t.tau_ood = parse_num(key, value)?,
            "lambda_unsup" => t.lambda_unsup = parse_num(key, value)?,
            "lambda_ood" => t.lambda_ood = parse_num(key, value)?,
            "alpha" => t.alpha = parse_num(key, value)?,
            "fg_iou" => t.fg_iou = parse_num(key, value)?,
            "bg_iou" => t.bg_iou = parse_num(key, value)?,
            "proposals_per_image" => t.proposals_per_image = parse_num(key, value)?,
            "ood_subsample" => t.ood_subsample = parse_num(key, value)?,
            "burn_in_iters" => t.burn_in_iters = parse_num(key, value)?,
            "total_iters" => t.total_iters = parse_num(key, value)?,
            "eval_interval" => t.eval_interval = parse_num(key, value)?,
            "learning_rate" => t.learning_rate = parse_num(key, value)?,
            "nms_threshold" => t.nms_threshold = parse_num(key, value)?,
            "weak_noise" => t.weak_noise = parse_num(key, value)?,
            "strong_noise" => t.strong_noise = parse_num(key, value)?,
            "scorer" => t.scorer = value.parse()?,
            "seed" => t.seed = parse_num(key, value)?,
            "unsup_regression" => t.unsup_regression = parse_bool(key, value)?,
            "labeled_batch" => t.labeled_batch = parse_num(key, value)?,
            "unlabeled_batch" => t.unlabeled_batch = parse_num(key, value)?,
            "energy_temperature" => t.energy_temperature = parse_num(key, value)?,
            "energy_threshold" => {
                t.energy_threshold = match value {
                    "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "eval_iou" => t.eval_iou = parse_num(key, value)?,
            "eval_min_score" => t.eval_min_score = parse_num(key, value)?,
            "proposal_jitter" => t.proposals.jitter_scale = parse_num(key, value)?,
            "proposal_copies" => t.proposals.copies_per_gt = parse_num(key, value)?,
            "proposal_random" => t.proposals.num_random = parse_num(key, value)?,
            "proposal_min_box" => t.proposals.min_box = parse_num(key, value)?,
            "proposal_max_box" => t.proposals.max_box = parse_num(key, value)?,
            "num_classes" => w.num_classes = parse_num(key, value)?,
            "num_id_classes" => w.num_id_classes = parse_num(key, value)?,
            "feature_dim" => w.feature_dim = parse_num(key, value)?,
            "feature_spread" => w.feature_spread = parse_num(key, value)?,
            "mean_scale" => w.mean_scale = parse_num(key, value)?,
            "ood_offset" => w.ood_offset = parse_num(key, value)?,
            "num_labeled" => s.num_labeled = parse_num(key, value)?,
            "unlabeled_id" => s.unlabeled_per_tag.0 = parse_num(key, value)?,
            "unlabeled_mix" => s.unlabeled_per_tag.1 = parse_num(key, value)?,
            "unlabeled_ood" => s.unlabeled_per_tag.2 = parse_num(key, value)?,
            "num_eval" => s.num_eval = parse_num(key, value)?,
            "num_eval_mix" => s.num_eval_mix = parse_num(key, value)?,
            "min_instances" => s.min_instances = parse_num(key, value)?,
            "max_instances" => s.max_instances = parse_num(key, value)?,
            "min_box" => s.min_box = parse_num(key, value)?,
            "max_box" => s.max_box = parse_num(key, value)?,
            "mix_id_fraction" => s.mix_id_fraction = parse_num(key, value)?,
            "data_seed" => self.bench.data_seed = parse_num(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// All settings in canonical order, as `(key, value)` text.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.trainer;
        let w = &self.bench.world;
        let s = &self.bench.splits;
        let f = |v: f64| format!("{v:?}");
        vec![
            ("tau", f(t.tau)),
            ("tau_prime", f(t.tau_prime)),
            ("tau_ood", f(t.tau_ood)),
            ("lambda_unsup", f(t.lambda_unsup)),
            ("lambda_ood", f(t.lambda_ood)),
            ("alpha", f(t.alpha)),
            ("fg_iou", f(t.fg_iou)),
            ("bg_iou", f(t.bg_iou)),
            ("proposals_per_image", t.proposals_per_image.to_string()),
            ("ood_subsample", t.ood_subsample.to_string()),
            ("burn_in_iters", t.burn_in_iters.to_string()),
            ("total_iters", t.total_iters.to_string()),
            ("eval_interval", t.eval_interval.to_string()),
            ("learning_rate", f(t.learning_rate)),
            ("nms_threshold", f(t.nms_threshold)),
            ("weak_noise", f(t.weak_noise)),
            ("strong_noise", f(t.strong_noise)),
            ("scorer", t.scorer.to_string()),
            ("seed", t.seed.to_string()),
            ("unsup_regression", on_off(t.unsup_regression)),
            ("labeled_batch", t.labeled_batch.to_string()),
            ("unlabeled_batch", t.unlabeled_batch.to_string()),
            ("energy_temperature", f(t.energy_temperature)),
            ("energy_threshold", t.energy_threshold.map_or("auto".to_string(), f)),
            ("eval_iou", f(t.eval_iou)),
            ("eval_min_score", f(t.eval_min_score)),
            ("proposal_jitter", f(t.proposals.jitter_scale)),
            ("proposal_copies", t.proposals.copies_per_gt.to_string()),
            ("proposal_random", t.proposals.num_random.to_string()),
            ("proposal_min_box", f(t.proposals.min_box)),
            ("proposal_max_box", f(t.proposals.max_box)),
            ("num_classes", w.num_classes.to_string()),
            ("num_id_classes", w.num_id_classes.to_string()),
            ("feature_dim", w.feature_dim.to_string()),
            ("feature_spread", f(w.feature_spread)),
            ("mean_scale", f(w.mean_scale)),
            ("ood_offset", f(w.ood_offset)),
            ("num_labeled", s.num_labeled.to_string()),
            ("unlabeled_id", s.unlabeled_per_tag.0.to_string()),
            ("unlabeled_mix", s.unlabeled_per_tag.1.to_string()),
            ("unlabeled_ood", s.unlabeled_per_tag.2.to_string()),
            ("num_eval", s.num_eval.to_string()),
            ("num_eval_mix", s.num_eval_mix.to_string()),
            ("min_instances", s.min_instances.to_string()),
            ("max_instances", s.max_instances.to_string()),
            ("min_box", f(s.min_box)),
            ("max_box", f(s.max_box)),
            ("mix_id_fraction", f(s.mix_id_fraction)),
            ("data_seed", self.bench.data_seed.to_string()),
        ]
    }

    /// `key = value` lines in canonical order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        let w = &self.bench.world;
        if w.num_id_classes == 0 || w.num_id_classes >= w.num_classes {
            return Err(Error::config(
                "num_id_classes",
                format!("need 0 < num_id_classes < num_classes = {}", w.num_classes),
            ));
        }
        if !(0.0..=1.0).contains(&self.bench.splits.mix_id_fraction) {
            return Err(Error::config("mix_id_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Short hex digest of every setting.
    pub fn hash(&self) -> String {
        short_hash(&self.to_text())
    }

    /// Seed used to generate the world and splits of a run.
    pub fn data_seed(&self) -> u64 {
        self.bench.data_seed.wrapping_add(self.trainer.seed)
    }
}

pub fn short_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

/// Parses `key = value` lines onto `config`. `#` starts a comment.
pub fn apply_text(config: &mut ExperimentConfig, text: &str) -> Result<()> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse("config", format!("line {}: expected key = value", n + 1)))?;
        config.set(k.trim(), v.trim())?;
    }
    Ok(())
}

/// Splits a `key=value` override.
pub fn split_override(item: &str) -> Result<(&str, &str)> {
    item.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::parse("override", format!("expected key=value, got `{item}`")))
}
