//! The online open-set semi-supervised training loop.
//!
//! 1. Burn-in: the student trains on labeled scenes only, with the supervised
//!    detection loss and the supervised OOD-head loss.
//! 2. The teacher starts as an exact copy of the student.
//! 3. Each iteration the teacher pseudo-labels unlabeled scenes. Detections
//!    with class score `>= tau` form the pseudo-label set; those whose OOD
//!    score also clears `tau_prime` supervise the detection heads.
//! 4. The OOD head mines its own targets from the same pseudo-labels with a
//!    three-band rule: score `>= tau_ood` is a confident ID target, score
//!    below 0.5 turns the instance into background, and anything in between
//!    is left out.
//! 5. The student minimizes
//!    `L_sup + lambda * L_unsup + L_ova_sup + lambda_ood * L_ova_unsup`
//!    with one gradient step, then the teacher follows by EMA.

use rand::seq::index::sample;
use rand::Rng;

use crate::config::{ExperimentConfig, TrainerConfig};
use crate::detector::{
    regress, sgd_step, supervised_detection_loss, unsupervised_detection_loss,
    DetSample, Detection, Gradients, ModelParams,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, LossComponents, MetricsRecord};
use crate::geometry::{
    assign_proposal_labels, best_match, encode_delta, nms, BBox, LabelKind, ProposalLabel,
};
use crate::math::softmax;
use crate::ood::{
    binary_batch_loss, ova_batch_loss, ova_forward, score_energy, score_entropy_head, score_msp,
    ScorerKind, ThresholdDefault,
};
use crate::rng::{stream, StreamRng, TrainerStreams};
use crate::synth::{generate_proposals, generate_world, generate_splits, DatasetSplits, Scene, UnlabeledScene, World};

/// Where a pseudo-label falls under the three-band rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    AcceptedId,
    Ignored,
    RejectedOod,
}

/// Band of an OOD score: accepted iff `p >= tau_ood`, rejected iff
/// `p < 0.5`, ignored otherwise. Scorers without probabilities split on
/// their filter threshold and have no ignored band.
pub fn band_of(score: f64, config: &TrainerConfig) -> Band {
    let desc = config.scorer.descriptor();
    if desc.probabilistic {
        if score >= config.tau_ood {
            Band::AcceptedId
        } else if score < 0.5 {
            Band::RejectedOod
        } else {
            Band::Ignored
        }
    } else if desc.accepts(score, config.filter_threshold()) {
        Band::AcceptedId
    } else {
        Band::RejectedOod
    }
}

/// Teacher pseudo-labels for one unlabeled scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    /// Detections with class score `>= tau`, after NMS.
    pub detections: Vec<Detection>,
    pub bands: Vec<Band>,
    /// Whether each detection clears the OOD filter and supervises the
    /// detection heads.
    pub passes_filter: Vec<bool>,
    pub num_id: usize,
}

impl PseudoLabelSet {
    fn in_band(&self, band: Band) -> Vec<&Detection> {
        self.detections
            .iter()
            .zip(&self.bands)
            .filter(|(_, b)| **b == band)
            .map(|(d, _)| d)
            .collect()
    }

    pub fn accepted_id(&self) -> Vec<&Detection> {
        self.in_band(Band::AcceptedId)
    }

    pub fn ignored(&self) -> Vec<&Detection> {
        self.in_band(Band::Ignored)
    }

    pub fn rejected_ood(&self) -> Vec<&Detection> {
        self.in_band(Band::RejectedOod)
    }

    /// The OOD-filtered subset used by the detection losses.
    pub fn filtered(&self) -> Vec<&Detection> {
        self.detections
            .iter()
            .zip(&self.passes_filter)
            .filter(|(_, p)| **p)
            .map(|(d, _)| d)
            .collect()
    }
}

fn argmax_foreground(probs: &[f64]) -> usize {
    let mut best = 0;
    for (j, p) in probs[..probs.len() - 1].iter().enumerate() {
        if *p > probs[best] {
            best = j;
        }
    }
    best
}

/// Raw score of the configured scorer for a proposal predicted as `class`.
pub fn ood_score(
    params: &ModelParams,
    feature: &[f64],
    logits: &[f64],
    probs: &[f64],
    class: usize,
    config: &TrainerConfig,
) -> f64 {
    match config.scorer {
        ScorerKind::Ova => ova_forward(&params.ova, feature).for_class(class),
        ScorerKind::Msp => score_msp(probs),
        ScorerKind::Energy => score_energy(&logits[..params.num_id], config.energy_temperature),
        ScorerKind::Entropy => score_entropy_head(&params.id_head, feature),
    }
}

/// Scorer output for a ground-truth instance, oriented so higher means ID.
pub fn instance_ood_score(params: &ModelParams, feature: &[f64], config: &TrainerConfig) -> f64 {
    let logits = params.logits(feature);
    let probs = softmax(&logits);
    let y = argmax_foreground(&probs);
    let raw = ood_score(params, feature, &logits, &probs, y, config);
    config.scorer.descriptor().oriented(raw)
}

/// Runs the detector over proposals: foreground argmax class, regressed box,
/// class-agnostic NMS. Proposals scoring below `min_score` are dropped before
/// NMS; they could only ever suppress lower-scoring boxes.
pub fn detect_scene(
    params: &ModelParams,
    proposals: &[BBox],
    features: &[Vec<f64>],
    config: &TrainerConfig,
) -> Vec<Detection> {
    detect_above(params, proposals, features, config, config.eval_min_score)
}

fn detect_above(
    params: &ModelParams,
    proposals: &[BBox],
    features: &[Vec<f64>],
    config: &TrainerConfig,
    min_score: f64,
) -> Vec<Detection> {
    struct Candidate {
        idx: usize,
        logits: Vec<f64>,
        probs: Vec<f64>,
        class: usize,
        bbox: BBox,
    }
    let mut cands = Vec::new();
    for (idx, (p, f)) in proposals.iter().zip(features).enumerate() {
        let logits = params.logits(f);
        let probs = softmax(&logits);
        let class = argmax_foreground(&probs);
        if probs[class] < min_score {
            continue;
        }
        cands.push(Candidate {
            idx,
            bbox: regress(params, f, p),
            logits,
            probs,
            class,
        });
    }
    let boxes: Vec<BBox> = cands.iter().map(|c| c.bbox).collect();
    let scores: Vec<f64> = cands.iter().map(|c| c.probs[c.class]).collect();
    nms(&boxes, &scores, config.nms_threshold)
        .into_iter()
        .map(|k| {
            let c = &cands[k];
            let f = &features[c.idx];
            Detection {
                bbox: c.bbox,
                class_id: c.class,
                cls_score: c.probs[c.class],
                ood_score: ood_score(params, f, &c.logits, &c.probs, c.class, config),
            }
        })
        .collect()
}

/// Teacher pass over one unlabeled scene: weak-noise features, detection,
/// `tau` thresholding, OOD scoring, filtering and banding.
pub fn generate_pseudo_labels(
    teacher: &ModelParams,
    world: &World,
    scene: &UnlabeledScene,
    config: &TrainerConfig,
    rng: &mut StreamRng,
) -> PseudoLabelSet {
    let proposals = scene.proposals(&config.proposals, rng);
    let noise = config.weak_noise * world.feature_spread();
    let features = scene.features(world, &proposals, noise, rng);
    pseudo_labels_from(teacher, &proposals, &features, config)
}

/// Pseudo-labels from already rendered proposals.
pub fn pseudo_labels_from(
    teacher: &ModelParams,
    proposals: &[BBox],
    features: &[Vec<f64>],
    config: &TrainerConfig,
) -> PseudoLabelSet {
    let detections: Vec<Detection> = detect_above(teacher, proposals, features, config, config.tau)
        .into_iter()
        .filter(|d| d.cls_score >= config.tau)
        .collect();
    let desc = config.scorer.descriptor();
    let threshold = config.filter_threshold();
    let bands = detections.iter().map(|d| band_of(d.ood_score, config)).collect();
    let passes_filter = detections
        .iter()
        .map(|d| desc.accepts(d.ood_score, threshold))
        .collect();
    PseudoLabelSet {
        detections,
        bands,
        passes_filter,
        num_id: teacher.num_id,
    }
}

/// OOD-head targets on an unlabeled scene.
///
/// A proposal whose best pseudo-label overlap exceeds `fg_iou` takes that
/// pseudo-label's class if it was accepted as ID, background if it was
/// rejected as OOD, and nothing if it was ignored. Unmatched proposals are
/// not used: there is no background sampling on unlabeled data.
pub fn build_ood_targets_unlabeled(
    proposals: &[BBox],
    pseudo: &PseudoLabelSet,
    config: &TrainerConfig,
) -> Vec<(usize, usize)> {
    let boxes: Vec<BBox> = pseudo.detections.iter().map(|d| d.bbox).collect();
    proposals
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (k, m) = best_match(p, &boxes)?;
            if m <= config.fg_iou {
                return None;
            }
            match pseudo.bands[k] {
                Band::AcceptedId => Some((i, pseudo.detections[k].class_id)),
                Band::RejectedOod => Some((i, pseudo.num_id)),
                Band::Ignored => None,
            }
        })
        .collect()
}

fn choose(rng: &mut StreamRng, pool: &[usize], k: usize) -> Vec<usize> {
    if k >= pool.len() {
        return pool.to_vec();
    }
    let mut picked: Vec<usize> = sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

/// Picks at most `budget` labeled proposals for the OOD head, foreground
/// first, then background; ignored proposals are never chosen.
pub fn subsample_ood_batch(labels: &[ProposalLabel], budget: usize, rng: &mut StreamRng) -> Vec<usize> {
    let fg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_foreground()).collect();
    let bg: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i].kind == LabelKind::Background)
        .collect();
    let mut out = choose(rng, &fg, budget);
    let room = budget - out.len();
    out.extend(choose(rng, &bg, room));
    out
}

/// Element-wise `alpha * teacher + (1 - alpha) * student` over every
/// parameter, OOD heads included.
pub fn ema_update(teacher: &ModelParams, student: &ModelParams, alpha: f64) -> Result<ModelParams> {
    if !teacher.same_shape(student) {
        return Err(Error::ShapeMismatch("teacher and student differ".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut out = teacher.clone();
    for (t, s) in out.tensors_mut().into_iter().zip(student.tensors()) {
        for (tv, sv) in t.iter_mut().zip(s) {
            *tv = alpha * *tv + (1.0 - alpha) * sv;
        }
    }
    Ok(out)
}

pub fn init_teacher(student: &ModelParams) -> ModelParams {
    student.clone()
}

/// Every sample that feeds one optimizer step.
#[derive(Debug, Clone, Default)]
pub struct StepBatches {
    pub sup_det: Vec<DetSample>,
    pub unsup_det: Vec<DetSample>,
    pub ova_sup: Vec<(Vec<f64>, usize)>,
    pub ova_unsup: Vec<(Vec<f64>, usize)>,
    /// Teacher pseudo-labels of each unlabeled scene in the batch.
    pub pseudo: Vec<PseudoLabelSet>,
}

fn det_samples(
    proposals: &[BBox],
    features: &[Vec<f64>],
    labels: &[ProposalLabel],
    targets: &[BBox],
    num_id: usize,
    with_regression: bool,
    budget: usize,
    rng: &mut StreamRng,
) -> Vec<DetSample> {
    let usable: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i].kind != LabelKind::Ignored)
        .collect();
    choose(rng, &usable, budget)
        .into_iter()
        .map(|i| match labels[i].kind {
            LabelKind::Foreground(c) => DetSample {
                feature: features[i].clone(),
                target: c,
                reg_target: with_regression
                    .then(|| encode_delta(&proposals[i], &targets[labels[i].matched_gt.unwrap_or(0)])),
            },
            _ => DetSample {
                feature: features[i].clone(),
                target: num_id,
                reg_target: None,
            },
        })
        .collect()
}

/// Renders the labeled and unlabeled scenes of one step into samples.
/// Pass an empty unlabeled slice for a burn-in step.
pub fn prepare_step(
    teacher: &ModelParams,
    world: &World,
    labeled: &[&Scene],
    unlabeled: &[&UnlabeledScene],
    config: &TrainerConfig,
    streams: &mut TrainerStreams,
) -> StepBatches {
    let num_id = teacher.num_id;
    let strong = config.strong_noise * world.feature_spread();
    let head = config.scorer.descriptor();
    let mut out = StepBatches::default();

    for scene in labeled {
        let gt = scene.id_annotations(world);
        let gt_boxes: Vec<BBox> = gt.iter().map(|g| g.0).collect();
        let proposals = generate_proposals(&scene.boxes(), &config.proposals, &mut streams.proposals);
        let features = scene.features(world, &proposals, strong, &mut streams.noise);
        let labels = assign_proposal_labels(&proposals, &gt, config.fg_iou, config.bg_iou);
        out.sup_det.extend(det_samples(
            &proposals,
            &features,
            &labels,
            &gt_boxes,
            num_id,
            true,
            config.proposals_per_image,
            &mut streams.sampling,
        ));
        if head.trainable {
            for i in subsample_ood_batch(&labels, config.ood_subsample, &mut streams.ood_sampling) {
                let y = match labels[i].kind {
                    LabelKind::Foreground(c) => c,
                    _ => num_id,
                };
                out.ova_sup.push((features[i].clone(), y));
            }
        }
    }

    for scene in unlabeled {
        let pseudo = generate_pseudo_labels(teacher, world, scene, config, &mut streams.proposals);
        let proposals = scene.proposals(&config.proposals, &mut streams.proposals);
        let features = scene.features(world, &proposals, strong, &mut streams.noise);

        let kept: Vec<&Detection> = pseudo.filtered();
        if !kept.is_empty() {
            let targets: Vec<(BBox, usize)> = kept.iter().map(|d| (d.bbox, d.class_id)).collect();
            let target_boxes: Vec<BBox> = targets.iter().map(|t| t.0).collect();
            let labels = assign_proposal_labels(&proposals, &targets, config.fg_iou, config.bg_iou);
            out.unsup_det.extend(det_samples(
                &proposals,
                &features,
                &labels,
                &target_boxes,
                num_id,
                config.unsup_regression,
                config.proposals_per_image,
                &mut streams.sampling,
            ));
        }
        if head.trainable {
            for (i, y) in build_ood_targets_unlabeled(&proposals, &pseudo, config) {
                out.ova_unsup.push((features[i].clone(), y));
            }
        }
        out.pseudo.push(pseudo);
    }
    out
}

/// Loss and gradient of the configured OOD head on `batch`; zero when the
/// batch is empty or the scorer has no trainable head.
pub fn ood_head_loss(
    params: &ModelParams,
    batch: &[(Vec<f64>, usize)],
    scorer: ScorerKind,
) -> Result<(f64, Gradients)> {
    let mut grads = params.zeros_like();
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let loss = match scorer {
        ScorerKind::Ova => {
            let (l, g) = ova_batch_loss(&params.ova, batch)?;
            grads.ova = g;
            l
        }
        ScorerKind::Entropy => {
            let binary: Vec<(Vec<f64>, bool)> = batch
                .iter()
                .map(|(x, y)| (x.clone(), *y < params.num_id))
                .collect();
            let (l, g) = binary_batch_loss(&params.id_head, &binary)?;
            grads.id_head = g;
            l
        }
        ScorerKind::Msp | ScorerKind::Energy => 0.0,
    };
    Ok((loss, grads))
}

/// Evaluates the four loss components and the weighted total gradient.
pub fn step_losses(
    params: &ModelParams,
    batches: &StepBatches,
    config: &TrainerConfig,
) -> Result<(LossComponents, Gradients)> {
    let (sup_det, g_sup) = supervised_detection_loss(params, &batches.sup_det)?;
    let (unsup_det, g_unsup) = unsupervised_detection_loss(params, &batches.unsup_det);
    let (ova_sup, g_ova_sup) = ood_head_loss(params, &batches.ova_sup, config.scorer)?;
    let (ova_unsup, g_ova_unsup) = ood_head_loss(params, &batches.ova_unsup, config.scorer)?;

    let components = LossComponents {
        sup_det,
        unsup_det,
        ova_sup,
        ova_unsup,
    };
    let total = components.total(config.lambda_unsup, config.lambda_ood);
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "total loss (sup_det={sup_det}, unsup_det={unsup_det}, ova_sup={ova_sup}, ova_unsup={ova_unsup})"
        )));
    }
    let mut grads = g_sup;
    grads.add_scaled(&g_unsup, config.lambda_unsup);
    grads.add_scaled(&g_ova_sup, 1.0);
    grads.add_scaled(&g_ova_unsup, config.lambda_ood);
    Ok((components, grads))
}

/// What one step did.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub loss: LossComponents,
    pub total: f64,
    pub batches: StepBatches,
}

/// One semi-supervised iteration: pseudo-label, compute all losses, update
/// the student, then the teacher by EMA.
pub fn train_step(
    student: &ModelParams,
    teacher: &ModelParams,
    world: &World,
    labeled: &[&Scene],
    unlabeled: &[&UnlabeledScene],
    config: &TrainerConfig,
    streams: &mut TrainerStreams,
) -> Result<(ModelParams, ModelParams, StepReport)> {
    let batches = prepare_step(teacher, world, labeled, unlabeled, config, streams);
    let (loss, grads) = step_losses(student, &batches, config)?;
    let student = sgd_step(student, &grads, config.learning_rate)?;
    let teacher = ema_update(teacher, &student, config.alpha)?;
    Ok((
        student,
        teacher,
        StepReport {
            total: loss.total(config.lambda_unsup, config.lambda_ood),
            loss,
            batches,
        },
    ))
}

fn burn_in_step(
    student: &ModelParams,
    world: &World,
    labeled: &[&Scene],
    config: &TrainerConfig,
    streams: &mut TrainerStreams,
) -> Result<(ModelParams, LossComponents)> {
    let batches = prepare_step(student, world, labeled, &[], config, streams);
    let (loss, grads) = step_losses(student, &batches, config)?;
    Ok((sgd_step(student, &grads, config.learning_rate)?, loss))
}

fn sample_batch<'a, T>(items: &'a [T], k: usize, rng: &mut StreamRng) -> Vec<&'a T> {
    (0..k).map(|_| &items[rng.random_range(0..items.len())]).collect()
}

/// Supervised-only training of the student for `burn_in_iters` steps.
pub fn burn_in(
    student: &ModelParams,
    world: &World,
    labeled: &[Scene],
    config: &TrainerConfig,
    streams: &mut TrainerStreams,
) -> Result<(ModelParams, Vec<LossComponents>)> {
    let mut params = student.clone();
    let mut losses = Vec::with_capacity(config.burn_in_iters);
    for _ in 0..config.burn_in_iters {
        let batch = sample_batch(labeled, config.labeled_batch, &mut streams.data);
        let (next, loss) = burn_in_step(&params, world, &batch, config, streams)?;
        params = next;
        losses.push(loss);
    }
    Ok((params, losses))
}

/// Raw filter threshold accepting fraction `q` of labeled foreground
/// proposals under the active scorer. `None` if there are no such proposals.
pub fn calibrate_threshold(
    params: &ModelParams,
    world: &World,
    labeled: &[Scene],
    config: &TrainerConfig,
    q: f64,
) -> Option<f64> {
    let mut rng = stream(config.seed, "calibration");
    let noise = config.weak_noise * world.feature_spread();
    let mut scores = Vec::new();
    for scene in labeled {
        let gt = scene.id_annotations(world);
        let proposals = generate_proposals(&scene.boxes(), &config.proposals, &mut rng);
        let features = scene.features(world, &proposals, noise, &mut rng);
        let labels = assign_proposal_labels(&proposals, &gt, config.fg_iou, config.bg_iou);
        for (f, l) in features.iter().zip(&labels) {
            if matches!(l.kind, LabelKind::Foreground(_)) {
                scores.push(instance_ood_score(params, f, config));
            }
        }
    }
    if scores.is_empty() {
        return None;
    }
    scores.sort_by(f64::total_cmp);
    let k = (((1.0 - q) * scores.len() as f64).floor() as usize).min(scores.len() - 1);
    Some(config.scorer.descriptor().oriented(scores[k]))
}

/// Config with a calibrated threshold filled in where the scorer asks for
/// one and none was set.
pub fn resolve_thresholds(
    params: &ModelParams,
    world: &World,
    labeled: &[Scene],
    config: &TrainerConfig,
) -> TrainerConfig {
    let mut out = config.clone();
    if config.scorer == ScorerKind::Energy && config.energy_threshold.is_none() {
        if let ThresholdDefault::LabeledQuantile(q) = ScorerKind::Energy.descriptor().default_threshold {
            out.energy_threshold = calibrate_threshold(params, world, labeled, config, q);
        }
    }
    out
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<MetricsRecord>,
    pub teacher: ModelParams,
    pub student: ModelParams,
}

/// Iterations at which the teacher is evaluated: the end of burn-in, every
/// `eval_interval` steps after it, and the final step.
pub fn eval_points(config: &TrainerConfig) -> Vec<usize> {
    let mut pts = vec![config.burn_in_iters];
    let mut k = config.burn_in_iters + config.eval_interval;
    while k < config.total_iters {
        pts.push(k);
        k += config.eval_interval;
    }
    if config.total_iters > config.burn_in_iters {
        pts.push(config.total_iters);
    }
    pts
}

/// Burn-in, teacher initialization and the semi-supervised loop, calling
/// `on_eval` with each record and the current teacher and student.
pub fn run_experiment_with<F>(
    config: &TrainerConfig,
    splits: &DatasetSplits,
    mut on_eval: F,
) -> Result<ExperimentOutcome>
where
    F: FnMut(&MetricsRecord, &ModelParams, &ModelParams) -> Result<()>,
{
    config.validate()?;
    let world = &splits.world;
    if splits.labeled.is_empty() {
        return Err(Error::InvalidArgument("no labeled scenes".into()));
    }
    let mut streams = TrainerStreams::new(config.seed);
    let init = ModelParams::init(world.num_id(), world.feature_dim, &mut stream(config.seed, "init"));
    let (mut student, burn_losses) = burn_in(&init, world, &splits.labeled, config, &mut streams)?;
    let config = &resolve_thresholds(&student, world, &splits.labeled, config);
    let mut teacher = init_teacher(&student);

    let mut records = Vec::new();
    let mut last_loss = burn_losses.last().copied().unwrap_or_default();
    let points = eval_points(config);
    let mut next_point = points.iter().peekable();

    let mut record_at = |it: usize, loss: LossComponents, teacher: &ModelParams, student: &ModelParams| -> Result<()> {
        let rec = evaluate(teacher, splits, config, it, loss)?;
        on_eval(&rec, teacher, student)?;
        records.push(rec);
        Ok(())
    };

    if next_point.peek() == Some(&&config.burn_in_iters) {
        next_point.next();
        record_at(config.burn_in_iters, last_loss, &teacher, &student)?;
    }
    for it in config.burn_in_iters + 1..=config.total_iters {
        let labeled = sample_batch(&splits.labeled, config.labeled_batch, &mut streams.data);
        let unlabeled = if splits.unlabeled.is_empty() {
            Vec::new()
        } else {
            sample_batch(&splits.unlabeled, config.unlabeled_batch, &mut streams.data)
        };
        let (s, t, report) = train_step(&student, &teacher, world, &labeled, &unlabeled, config, &mut streams)?;
        student = s;
        teacher = t;
        last_loss = report.loss;
        if next_point.peek() == Some(&&it) {
            next_point.next();
            record_at(it, last_loss, &teacher, &student)?;
        }
    }
    Ok(ExperimentOutcome {
        records,
        teacher,
        student,
    })
}

/// Runs the full method and returns the metric trajectory.
pub fn run_experiment(config: &TrainerConfig, splits: &DatasetSplits) -> Result<Vec<MetricsRecord>> {
    run_experiment_with(config, splits, |_, _, _| Ok(())).map(|o| o.records)
}

/// Generates the world and splits a config describes.
pub fn build_splits(config: &ExperimentConfig) -> Result<DatasetSplits> {
    let seed = config.data_seed();
    let world = generate_world(&config.bench.world, seed)?;
    generate_splits(&world, &config.bench.splits, seed)
}
