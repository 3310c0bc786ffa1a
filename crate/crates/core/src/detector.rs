//! Miniature two-stage detector heads on proposal features.
//!
//! The classification head is an affine map to `N + 1` logits (ID classes,
//! then background), the regression head an affine map to four box offsets.
//! [`ModelParams`] also owns the OOD heads so that teacher updates cover
//! every learnable parameter.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{decode_delta, BBox, BoxDelta};
use crate::math::{logsumexp, softmax};
use crate::ood::{BinaryHeadParams, OvaParams};
use crate::rng::StreamRng;

/// Dense affine layer, weights row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn random(rows: usize, cols: usize, scale: f64, rng: &mut StreamRng) -> Self {
        let mut l = Self::zeros(rows, cols);
        for w in &mut l.weight {
            *w = scale * rng.sample::<f64, _>(StandardNormal);
        }
        l
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.weight
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// `self += scale * outer(dout, x)` on weights and `scale * dout` on bias.
    pub fn accumulate(&mut self, dout: &[f64], x: &[f64], scale: f64) {
        for ((row, b), &g) in self
            .weight
            .chunks_exact_mut(self.cols)
            .zip(&mut self.bias)
            .zip(dout)
        {
            if g == 0.0 {
                continue;
            }
            let s = scale * g;
            *b += s;
            for (w, v) in row.iter_mut().zip(x) {
                *w += s * v;
            }
        }
    }

    fn same_shape(&self, other: &Linear) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// All learnable weights of one model. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub num_id: usize,
    pub feature_dim: usize,
    /// `(N + 1) x d`; row `N` is background.
    pub cls: Linear,
    /// `4 x d`: `(dx, dy, dw, dh)`.
    pub reg: Linear,
    pub ova: OvaParams,
    /// Single ID-vs-not head for the entropy scorer.
    pub id_head: BinaryHeadParams,
}

pub type Gradients = ModelParams;

const TENSOR_NAMES: [&str; 8] = [
    "cls.weight",
    "cls.bias",
    "reg.weight",
    "reg.bias",
    "ova.weight",
    "ova.bias",
    "id_head.weight",
    "id_head.bias",
];

impl ModelParams {
    pub fn zeros(num_id: usize, feature_dim: usize) -> Self {
        Self {
            num_id,
            feature_dim,
            cls: Linear::zeros(num_id + 1, feature_dim),
            reg: Linear::zeros(4, feature_dim),
            ova: OvaParams::zeros(num_id, feature_dim),
            id_head: BinaryHeadParams::zeros(feature_dim),
        }
    }

    /// Small Gaussian weights, zero biases.
    pub fn init(num_id: usize, feature_dim: usize, rng: &mut StreamRng) -> Self {
        let scale = 0.01;
        Self {
            num_id,
            feature_dim,
            cls: Linear::random(num_id + 1, feature_dim, scale, rng),
            reg: Linear::random(4, feature_dim, scale, rng),
            ova: OvaParams {
                linear: Linear::random(2 * (num_id + 1), feature_dim, scale, rng),
            },
            id_head: BinaryHeadParams {
                linear: Linear::random(2, feature_dim, scale, rng),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.num_id, self.feature_dim)
    }

    fn layers(&self) -> [&Linear; 4] {
        [&self.cls, &self.reg, &self.ova.linear, &self.id_head.linear]
    }

    fn layers_mut(&mut self) -> [&mut Linear; 4] {
        [
            &mut self.cls,
            &mut self.reg,
            &mut self.ova.linear,
            &mut self.id_head.linear,
        ]
    }

    /// Every parameter tensor, in checkpoint order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors().into_iter().flat_map(|t| t.iter().copied())
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers()
            .iter()
            .zip(other.layers())
            .all(|(a, b)| a.same_shape(b))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        self.cls.forward(feature)
    }

    /// Writes a text checkpoint. Values use Rust's shortest round-trip
    /// formatting, so loading restores every bit.
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "ossod-checkpoint 1");
        let _ = writeln!(out, "config_hash {config_hash}");
        let _ = writeln!(out, "num_id {}", self.num_id);
        let _ = writeln!(out, "feature_dim {}", self.feature_dim);
        for (layer, names) in self.layers().into_iter().zip(TENSOR_NAMES.chunks(2)) {
            let _ = writeln!(out, "tensor {} {} {}", names[0], layer.rows, layer.cols);
            for row in layer.weight.chunks_exact(layer.cols) {
                let _ = writeln!(out, "{}", join(row));
            }
            let _ = writeln!(out, "tensor {} 1 {}", names[1], layer.rows);
            let _ = writeln!(out, "{}", join(&layer.bias));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a checkpoint written by [`ModelParams::save`]; returns the
    /// parameters and the recorded config hash.
    pub fn load(path: &Path) -> Result<(ModelParams, String)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_checkpoint(&text)
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_checkpoint(text: &str) -> Result<(ModelParams, String)> {
    let bad = |m: String| Error::parse("checkpoint", m);
    let mut lines = text.lines();
    let mut field = |name: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad(format!("missing `{name}`")))?;
        let rest = line
            .strip_prefix(name)
            .ok_or_else(|| bad(format!("expected `{name}`, found `{line}`")))?;
        Ok(rest.trim().to_string())
    };
    if field("ossod-checkpoint")? != "1" {
        return Err(bad("unsupported version".into()));
    }
    let hash = field("config_hash")?;
    let num_id: usize = field("num_id")?
        .parse()
        .map_err(|e| bad(format!("num_id: {e}")))?;
    let feature_dim: usize = field("feature_dim")?
        .parse()
        .map_err(|e| bad(format!("feature_dim: {e}")))?;

    let mut params = ModelParams::zeros(num_id, feature_dim);
    for (tensor, name) in params.tensors_mut().into_iter().zip(TENSOR_NAMES) {
        let header = lines
            .next()
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" || parts[1] != name {
            return Err(bad(format!("expected tensor {name}, found `{header}`")));
        }
        let rows: usize = parts[2].parse().map_err(|e| bad(format!("{name}: {e}")))?;
        let cols: usize = parts[3].parse().map_err(|e| bad(format!("{name}: {e}")))?;
        if rows * cols != tensor.len() {
            return Err(bad(format!(
                "{name}: shape {rows}x{cols} does not fit N={num_id}, d={feature_dim}"
            )));
        }
        let mut filled = 0;
        for _ in 0..rows {
            let line = lines.next().ok_or_else(|| bad(format!("{name}: truncated")))?;
            for tok in line.split_whitespace() {
                if filled == tensor.len() {
                    return Err(bad(format!("{name}: too many values")));
                }
                tensor[filled] = tok.parse().map_err(|e| bad(format!("{name}: {e}")))?;
                filled += 1;
            }
        }
        if filled != tensor.len() {
            return Err(bad(format!("{name}: expected {} values", tensor.len())));
        }
    }
    Ok((params, hash))
}

/// One detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    /// ID class label in `[0, N)`.
    pub class_id: usize,
    /// Softmax probability of `class_id`.
    pub cls_score: f64,
    /// The active scorer's ID-confidence for `class_id`.
    pub ood_score: f64,
}

/// Softmax class probabilities, background last.
pub fn classify(params: &ModelParams, feature: &[f64]) -> Vec<f64> {
    softmax(&params.logits(feature))
}

/// Applies predicted offsets to `anchor`; the result is clipped to the unit
/// extent.
pub fn regress(params: &ModelParams, feature: &[f64], anchor: &BBox) -> BBox {
    let d = params.reg.forward(feature);
    decode_delta(anchor, &BoxDelta::from_slice(&d)).clip_unit()
}

/// A proposal prepared for the detection losses.
#[derive(Debug, Clone, PartialEq)]
pub struct DetSample {
    pub feature: Vec<f64>,
    /// Class label; `N` is background.
    pub target: usize,
    /// Offsets to the matched box, for foreground proposals that take part in
    /// the regression term.
    pub reg_target: Option<BoxDelta>,
}

pub const SMOOTH_L1_BETA: f64 = 1.0;

fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < SMOOTH_L1_BETA {
        (0.5 * x * x / SMOOTH_L1_BETA, x / SMOOTH_L1_BETA)
    } else {
        (x.abs() - 0.5 * SMOOTH_L1_BETA, x.signum())
    }
}

/// Mean cross-entropy over all samples plus mean smooth-L1 over samples
/// with a regression target. Gradients are written into the cls/reg slots.
fn detection_loss(params: &ModelParams, batch: &[DetSample]) -> (f64, Gradients) {
    let mut grads = params.zeros_like();
    let n = batch.len() as f64;
    let n_reg = batch.iter().filter(|s| s.reg_target.is_some()).count();

    let mut ce = 0.0;
    let mut reg = 0.0;
    for s in batch {
        let logits = params.logits(&s.feature);
        let lse = logsumexp(&logits);
        ce += lse - logits[s.target];
        let mut dlogits: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        dlogits[s.target] -= 1.0;
        grads.cls.accumulate(&dlogits, &s.feature, 1.0 / n);

        if let Some(t) = s.reg_target {
            let pred = params.reg.forward(&s.feature);
            let mut dpred = [0.0; 4];
            for (k, tv) in t.to_array().into_iter().enumerate() {
                let (v, g) = smooth_l1(pred[k] - tv);
                reg += v;
                dpred[k] = g;
            }
            grads.reg.accumulate(&dpred, &s.feature, 1.0 / n_reg as f64);
        }
    }
    let loss = ce / n + if n_reg > 0 { reg / n_reg as f64 } else { 0.0 };
    (loss, grads)
}

/// Supervised detection loss over sampled labeled proposals.
pub fn supervised_detection_loss(
    params: &ModelParams,
    batch: &[DetSample],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("no foreground or background proposals"));
    }
    Ok(detection_loss(params, batch))
}

/// Same form as the supervised loss on pseudo-labeled proposals; an empty
/// batch contributes nothing.
pub fn unsupervised_detection_loss(params: &ModelParams, batch: &[DetSample]) -> (f64, Gradients) {
    if batch.is_empty() {
        return (0.0, params.zeros_like());
    }
    detection_loss(params, batch)
}

/// Plain gradient descent step.
pub fn sgd_step(params: &ModelParams, grads: &Gradients, learning_rate: f64) -> Result<ModelParams> {
    if !(learning_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    if !params.same_shape(grads) {
        return Err(Error::ShapeMismatch("gradient and parameter shapes differ".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    let mut out = params.clone();
    out.add_scaled(grads, -learning_rate);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::encode_delta;
    use crate::rng::stream;

    fn random_params(n: usize, d: usize, seed: u64) -> ModelParams {
        let mut rng = stream(seed, "params");
        let mut p = ModelParams::zeros(n, d);
        for t in p.tensors_mut() {
            for v in t {
                *v = 0.5 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }

    #[test]
    fn classify_uniform_at_zero() {
        let p = ModelParams::zeros(4, 3);
        let probs = classify(&p, &[1.0, -2.0, 0.5]);
        for v in probs {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn classify_saturates() {
        let mut p = ModelParams::zeros(3, 2);
        p.cls.bias = vec![800.0, -800.0, -800.0, -800.0];
        let probs = classify(&p, &[0.0, 0.0]);
        assert!((probs[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classify_normalizes() {
        for seed in 0..20 {
            let p = random_params(5, 6, seed);
            let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
            let s: f64 = classify(&p, &x).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn regress_zero_is_identity() {
        let p = ModelParams::zeros(2, 3);
        let anchor = BBox::new(0.1, 0.2, 0.4, 0.5);
        let out = regress(&p, &[1.0, 2.0, 3.0], &anchor);
        assert!((out.x_min - 0.1).abs() < 1e-15 && (out.y_max - 0.5).abs() < 1e-15);
    }

    #[test]
    fn regress_shifts_center() {
        let mut p = ModelParams::zeros(2, 1);
        p.reg.bias = vec![0.1, 0.0, 0.0, 0.0];
        let anchor = BBox::new(0.2, 0.2, 0.4, 0.6);
        let out = regress(&p, &[0.0], &anchor);
        // width 0.2, so the center moves by 0.02
        assert!((out.x_min - 0.22).abs() < 1e-12);
        assert!((out.x_max - 0.42).abs() < 1e-12);
        assert!((out.y_min - 0.2).abs() < 1e-12);
        assert!((out.y_max - 0.6).abs() < 1e-12);
    }

    #[test]
    fn regress_output_is_valid() {
        for seed in 0..50 {
            let p = random_params(2, 3, seed);
            let out = regress(&p, &[3.0, -4.0, 2.0], &BBox::new(0.9, 0.9, 1.0, 1.0));
            assert!(out.is_valid() && out.within_unit());
        }
    }

    #[test]
    fn background_sample_under_uniform_prediction() {
        let n = 4;
        let p = ModelParams::zeros(n, 3);
        let batch = [DetSample {
            feature: vec![0.3, -0.2, 1.0],
            target: n,
            reg_target: None,
        }];
        let (loss, _) = supervised_detection_loss(&p, &batch).unwrap();
        assert!((loss - ((n + 1) as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batches() {
        let p = ModelParams::zeros(2, 2);
        assert!(matches!(
            supervised_detection_loss(&p, &[]),
            Err(Error::EmptyBatch(_))
        ));
        let (loss, g) = unsupervised_detection_loss(&p, &[]);
        assert_eq!(loss, 0.0);
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn same_form_for_both_losses() {
        let p = random_params(3, 4, 1);
        let anchor = BBox::new(0.1, 0.1, 0.3, 0.3);
        let batch = vec![
            DetSample {
                feature: vec![0.1, 0.2, 0.3, 0.4],
                target: 1,
                reg_target: Some(encode_delta(&anchor, &BBox::new(0.12, 0.1, 0.33, 0.28))),
            },
            DetSample {
                feature: vec![-0.1, 0.5, 0.0, 0.2],
                target: 3,
                reg_target: None,
            },
        ];
        let (a, ga) = supervised_detection_loss(&p, &batch).unwrap();
        let (b, gb) = unsupervised_detection_loss(&p, &batch);
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn separable_batch_trains_to_zero() {
        let n = 2;
        let batch: Vec<DetSample> = [(vec![1.0, 0.0], 0), (vec![0.0, 1.0], 1), (vec![-1.0, -1.0], 2)]
            .into_iter()
            .map(|(feature, target)| DetSample {
                feature,
                target,
                reg_target: None,
            })
            .collect();
        let mut p = ModelParams::zeros(n, 2);
        for _ in 0..3000 {
            let (_, g) = supervised_detection_loss(&p, &batch).unwrap();
            p = sgd_step(&p, &g, 1.0).unwrap();
        }
        let (loss, _) = supervised_detection_loss(&p, &batch).unwrap();
        assert!(loss < 0.01 && loss > 0.0, "{loss}");
    }

    #[test]
    fn sgd_examples() {
        let p = random_params(2, 3, 4);
        let zero = p.zeros_like();
        assert_eq!(sgd_step(&p, &zero, 0.1).unwrap(), p);
        let out = sgd_step(&p, &p, 1.0).unwrap();
        assert!(out.values().all(|v| v == 0.0));

        let g = random_params(2, 3, 5);
        let twice = sgd_step(&sgd_step(&p, &g, 0.25).unwrap(), &g, 0.25).unwrap();
        let mut expect = p.clone();
        expect.add_scaled(&g, -0.5);
        for (a, b) in twice.values().zip(expect.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let p = ModelParams::zeros(2, 2);
        let mut g = p.zeros_like();
        g.cls.weight[0] = f64::NAN;
        assert!(matches!(sgd_step(&p, &g, 0.1), Err(Error::NonFinite(_))));
        assert!(sgd_step(&p, &p.zeros_like(), 0.0).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut p = random_params(3, 5, 9);
        p.cls.weight[0] = 1.0 / 3.0;
        p.reg.bias[2] = -7.123456789012345e-300;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        p.save(&path, "abc123").unwrap();
        let (q, hash) = ModelParams::load(&path).unwrap();
        assert_eq!(hash, "abc123");
        assert!(p.values().zip(q.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(p, q);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(parse_checkpoint("nonsense").is_err());
        let p = ModelParams::zeros(1, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        p.save(&path, "h").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(parse_checkpoint(&truncated).is_err());
    }
}
