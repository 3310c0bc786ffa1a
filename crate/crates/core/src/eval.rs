//! Detection and OOD-filtering metrics against the benchmark's ground truth.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::TrainerConfig;
use crate::detector::{Detection, ModelParams};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::math::mean;
use crate::rng::stream;
use crate::synth::{DatasetSplits, GroundTruthAccess, Scene, World};
use crate::trainer::{detect_scene, generate_pseudo_labels, instance_ood_score, PseudoLabelSet};

/// A scored detection tagged with the scene it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub scene: usize,
    pub bbox: BBox,
    pub score: f64,
}

/// A ground-truth box tagged with its scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub scene: usize,
    pub bbox: BBox,
}

/// Greedy matching in descending score order. Returns the true-positive flag
/// of each detection in that order.
fn match_detections(dets: &[ScoredBox], gt: &[GtBox], iou_threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut used = vec![false; gt.len()];
    order
        .into_iter()
        .map(|i| {
            let d = &dets[i];
            let mut best: Option<(usize, f64)> = None;
            for (g, gb) in gt.iter().enumerate() {
                if used[g] || gb.scene != d.scene {
                    continue;
                }
                let v = iou(&d.bbox, &gb.bbox);
                match best {
                    Some((_, b)) if v <= b => {}
                    _ => best = Some((g, v)),
                }
            }
            match best {
                Some((g, v)) if v >= iou_threshold => {
                    used[g] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// Average precision of one class: area under the all-point interpolated
/// precision/recall curve.
///
/// With no ground truth the result is zero (and callers should leave the
/// class out of the mean).
pub fn average_precision(dets: &[ScoredBox], gt: &[GtBox], iou_threshold: f64) -> f64 {
    if gt.is_empty() || dets.is_empty() {
        return 0.0;
    }
    let tp_flags = match_detections(dets, gt, iou_threshold);
    let n_gt = gt.len() as f64;
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    for (k, is_tp) in tp_flags.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        recall.push(tp as f64 / n_gt);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // precision envelope, right to left
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// AP of one class together with how much ground truth it had.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub ap: f64,
    pub num_gt: usize,
}

/// Mean AP over classes that have ground truth.
pub fn mean_ap(per_class: &[ClassAp]) -> Result<f64> {
    let aps: Vec<f64> = per_class
        .iter()
        .filter(|c| c.num_gt > 0)
        .map(|c| c.ap)
        .collect();
    if aps.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    Ok(mean(&aps))
}

/// Probability that a random ID sample outscores a random OOD sample, ties
/// counting half (Mann-Whitney with midranks).
pub fn ood_auroc(scores: &[(f64, bool)]) -> Result<f64> {
    let n_id = scores.iter().filter(|s| s.1).count();
    let n_ood = scores.len() - n_id;
    if n_id == 0 || n_ood == 0 {
        return Err(Error::SingleLabel);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.partial_cmp(&scores[b].0).unwrap_or(Ordering::Equal));
    let mut rank_sum_id = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        // ranks are 1-based; the tied block i..=j shares the midrank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if scores[k].1 {
                rank_sum_id += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_id - (n_id * (n_id + 1)) as f64 / 2.0;
    Ok(u / (n_id as f64 * n_ood as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoQuality {
    pub precision: f64,
    pub recall: f64,
    /// Set when there were no pseudo-labels, so precision is reported as 0.
    pub precision_undefined: bool,
}

/// Precision of the filtered pseudo-labels and recall of ID ground truth.
///
/// A pseudo-label is correct iff it overlaps a same-class ID instance with
/// IoU >= 0.5. `pseudo` and `scenes` are parallel.
pub fn pseudo_label_quality(world: &World, pseudo: &[PseudoLabelSet], scenes: &[&Scene]) -> PseudoQuality {
    let mut total = 0usize;
    let mut correct = 0usize;
    let mut id_instances = 0usize;
    let mut covered = 0usize;
    for (set, scene) in pseudo.iter().zip(scenes) {
        let gt = scene.id_annotations(world);
        id_instances += gt.len();
        let mut hit = vec![false; gt.len()];
        for det in set.filtered() {
            total += 1;
            let mut ok = false;
            for (g, (b, c)) in gt.iter().enumerate() {
                if *c == det.class_id && iou(b, &det.bbox) >= 0.5 {
                    ok = true;
                    hit[g] = true;
                }
            }
            if ok {
                correct += 1;
            }
        }
        covered += hit.iter().filter(|&&h| h).count();
    }
    PseudoQuality {
        precision: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        recall: if id_instances > 0 {
            covered as f64 / id_instances as f64
        } else {
            0.0
        },
        precision_undefined: total == 0,
    }
}

/// Loss components of one training step, unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub sup_det: f64,
    pub unsup_det: f64,
    pub ova_sup: f64,
    pub ova_unsup: f64,
}

impl LossComponents {
    /// `sup + lambda * unsup + ova_sup + lambda_ood * ova_unsup`.
    pub fn total(&self, lambda_unsup: f64, lambda_ood: f64) -> f64 {
        self.sup_det + lambda_unsup * self.unsup_det + self.ova_sup + lambda_ood * self.ova_unsup
    }
}

/// One evaluation snapshot of the teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub map: f64,
    /// Per ID class; `None` when the evaluation set has no instance of it.
    pub per_class_ap: Vec<Option<f64>>,
    /// ID/OOD AUROC over the unlabeled pool; 0.5 with `auroc_undefined`
    /// set when the pool holds only one of the two kinds.
    pub ood_auroc: f64,
    pub auroc_undefined: bool,
    pub pseudo_precision: f64,
    pub pseudo_recall: f64,
    pub precision_undefined: bool,
    /// Components of the last training step before this evaluation.
    pub loss: LossComponents,
    pub loss_total: f64,
    /// Accepted / ignored / rejected pseudo-labels over the unlabeled pool.
    pub pseudo_counts: (usize, usize, usize),
}

pub const CSV_HEADER: &str = "iteration,map,ood_auroc,auroc_undefined,pseudo_precision,pseudo_recall,precision_undefined,\
loss_sup_det,loss_unsup_det,loss_ova_sup,loss_ova_unsup,loss_total,\
pseudo_accepted,pseudo_ignored,pseudo_rejected,per_class_ap";

impl MetricsRecord {
    /// CSV row matching [`CSV_HEADER`]. Per-class APs are `;`-separated with
    /// empty entries for classes absent from the evaluation set.
    pub fn csv_row(&self) -> String {
        let per_class = self
            .per_class_ap
            .iter()
            .map(|ap| ap.map(|v| format!("{v:.6}")).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "{},{:.6},{:.6},{},{:.6},{:.6},{},{:.9},{:.9},{:.9},{:.9},{:.9},{},{},{},{}",
            self.iteration,
            self.map,
            self.ood_auroc,
            u8::from(self.auroc_undefined),
            self.pseudo_precision,
            self.pseudo_recall,
            u8::from(self.precision_undefined),
            self.loss.sup_det,
            self.loss.unsup_det,
            self.loss.ova_sup,
            self.loss.ova_unsup,
            self.loss_total,
            self.pseudo_counts.0,
            self.pseudo_counts.1,
            self.pseudo_counts.2,
            per_class
        )
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CSV_HEADER}");
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Per-class AP of `params` on the held-out scenes.
pub fn detection_metrics(
    params: &ModelParams,
    splits: &DatasetSplits,
    config: &TrainerConfig,
) -> Vec<ClassAp> {
    let world = &splits.world;
    let n = world.num_id();
    let mut rng = stream(config.seed, "eval/detections");
    let mut dets: Vec<Vec<ScoredBox>> = vec![Vec::new(); n];
    let mut gts: Vec<Vec<GtBox>> = vec![Vec::new(); n];
    for (k, scene) in splits.eval.iter().enumerate() {
        for (bbox, label) in scene.id_annotations(world) {
            gts[label].push(GtBox { scene: k, bbox });
        }
        let proposals = crate::synth::generate_proposals(&scene.boxes(), &config.proposals, &mut rng);
        let noise = config.weak_noise * world.feature_spread();
        let features = scene.features(world, &proposals, noise, &mut rng);
        let found: Vec<Detection> = detect_scene(params, &proposals, &features, config);
        for d in found {
            if d.cls_score >= config.eval_min_score {
                dets[d.class_id].push(ScoredBox {
                    scene: k,
                    bbox: d.bbox,
                    score: d.cls_score,
                });
            }
        }
    }
    dets.iter()
        .zip(&gts)
        .map(|(d, g)| ClassAp {
            ap: average_precision(d, g, config.eval_iou),
            num_gt: g.len(),
        })
        .collect()
}

/// Scores every instance of the unlabeled pool and measures ID/OOD
/// separation. Reads hidden annotations.
pub fn unlabeled_auroc(params: &ModelParams, splits: &DatasetSplits, config: &TrainerConfig) -> Result<f64> {
    let world = &splits.world;
    let access = GroundTruthAccess::evaluator();
    let mut rng = stream(config.seed, "eval/auroc");
    let noise = config.weak_noise * world.feature_spread();
    let mut scores = Vec::new();
    for scene in splits.unlabeled_ground_truth(access) {
        for inst in &scene.instances {
            let f = crate::synth::feature_oracle(world, scene, &inst.bbox, noise, &mut rng);
            let score = instance_ood_score(params, &f, config);
            scores.push((score, world.is_id(inst.class_id)));
        }
    }
    ood_auroc(&scores)
}

/// Full teacher evaluation: detection AP, OOD AUROC and pseudo-label quality.
pub fn evaluate(
    params: &ModelParams,
    splits: &DatasetSplits,
    config: &TrainerConfig,
    iteration: usize,
    loss: LossComponents,
) -> Result<MetricsRecord> {
    let per_class = detection_metrics(params, splits, config);
    let map = mean_ap(&per_class)?;
    let (ood_auroc, auroc_undefined) = match unlabeled_auroc(params, splits, config) {
        Ok(a) => (a, false),
        Err(Error::SingleLabel) => (0.5, true),
        Err(e) => return Err(e),
    };

    let mut rng = stream(config.seed, "eval/pseudo");
    let pseudo: Vec<PseudoLabelSet> = splits
        .unlabeled
        .iter()
        .map(|u| generate_pseudo_labels(params, &splits.world, u, config, &mut rng))
        .collect();
    let access = GroundTruthAccess::evaluator();
    let quality = pseudo_label_quality(&splits.world, &pseudo, &splits.unlabeled_ground_truth(access));
    let counts = pseudo.iter().fold((0, 0, 0), |acc, p| {
        (
            acc.0 + p.accepted_id().len(),
            acc.1 + p.ignored().len(),
            acc.2 + p.rejected_ood().len(),
        )
    });

    Ok(MetricsRecord {
        iteration,
        map,
        per_class_ap: per_class
            .iter()
            .map(|c| (c.num_gt > 0).then_some(c.ap))
            .collect(),
        ood_auroc,
        auroc_undefined,
        pseudo_precision: quality.precision,
        pseudo_recall: quality.recall,
        precision_undefined: quality.precision_undefined,
        loss,
        loss_total: loss.total(config.lambda_unsup, config.lambda_ood),
        pseudo_counts: counts,
    })
}
