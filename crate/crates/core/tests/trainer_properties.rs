//! Structural properties of the training loop.

mod common;

use std::sync::OnceLock;

use common::*;
use ossod::config::{apply_text, ExperimentConfig, TrainerConfig};
use ossod::detector::{
    sgd_step, supervised_detection_loss, unsupervised_detection_loss, Detection, Linear, ModelParams,
};
use ossod::eval::LossComponents;
use ossod::geometry::BBox;
use ossod::ood::{ova_batch_loss, ScorerKind};
use ossod::rng::{stream, TrainerStreams};
use ossod::synth::DatasetSplits;
use ossod::trainer::{
    band_of, build_ood_targets_unlabeled, build_splits, burn_in, ema_update, init_teacher, prepare_step,
    pseudo_labels_from, run_experiment, run_experiment_with, step_losses, train_step, Band, PseudoLabelSet,
};
use proptest::prelude::*;

fn small_config(extra: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    apply_text(
        &mut c,
        "num_labeled = 12\nunlabeled_id = 6\nunlabeled_mix = 12\nunlabeled_ood = 6\nnum_eval = 12\n\
         proposals_per_image = 128\nburn_in_iters = 150\ntotal_iters = 190\neval_interval = 20\n",
    )
    .unwrap();
    apply_text(&mut c, extra).unwrap();
    c.validate().unwrap();
    c
}

fn small_splits() -> &'static DatasetSplits {
    static S: OnceLock<DatasetSplits> = OnceLock::new();
    S.get_or_init(|| build_splits(&small_config("")).unwrap())
}

/// A burned-in model that produces confident detections.
fn trained() -> &'static ModelParams {
    static T: OnceLock<ModelParams> = OnceLock::new();
    T.get_or_init(|| {
        let c = small_config("");
        let s = small_splits();
        let init = ModelParams::init(s.world.num_id(), s.world.feature_dim, &mut stream(0, "init"));
        burn_in(&init, &s.world, &s.labeled, &c.trainer, &mut TrainerStreams::new(0)).unwrap().0
    })
}

fn rendered_scene(k: usize, seed: u64) -> (Vec<BBox>, Vec<Vec<f64>>) {
    let s = small_splits();
    let c = small_config("");
    let u = &s.unlabeled[k % s.unlabeled.len()];
    let mut r = stream(seed, "scene");
    let proposals = u.proposals(&c.trainer.proposals, &mut r);
    let features = u.features(&s.world, &proposals, 0.05 * s.world.feature_spread(), &mut r);
    (proposals, features)
}

fn with(base: &TrainerConfig, f: impl FnOnce(&mut TrainerConfig)) -> TrainerConfig {
    let mut c = base.clone();
    f(&mut c);
    c
}

// EMA

proptest! {
    #[test]
    fn ema_limits(seed in 0u64..1000) {
        let mut r = rng(seed);
        let t = random_params(&mut r, 3, 6, 1.0);
        let s = random_params(&mut r, 3, 6, 1.0);
        prop_assert_eq!(ema_update(&t, &s, 1.0).unwrap(), t.clone());
        prop_assert_eq!(ema_update(&t, &s, 0.0).unwrap(), s);
    }

    #[test]
    fn ema_stays_in_hull_of_history(seed in 0u64..1000, alpha in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let mut teacher = random_params(&mut r, 2, 4, 1.0);
        let mut lo: Vec<f64> = teacher.values().collect();
        let mut hi = lo.clone();
        for _ in 0..20 {
            let student = random_params(&mut r, 2, 4, 1.0);
            for (k, v) in student.values().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
            teacher = ema_update(&teacher, &student, alpha).unwrap();
            for (k, v) in teacher.values().enumerate() {
                prop_assert!(v >= lo[k] - 1e-12 && v <= hi[k] + 1e-12);
            }
        }
    }
}

#[test]
fn ema_scalar_example_and_geometric_convergence() {
    let mut t = ModelParams::zeros(1, 2);
    let s = ModelParams::zeros(1, 2);
    t.cls.bias[0] = 1.0;
    assert_eq!(ema_update(&t, &s, 0.5).unwrap().cls.bias[0], 0.5);

    let mut r = rng(3);
    let student = random_params(&mut r, 2, 5, 1.0);
    let mut teacher = random_params(&mut r, 2, 5, 1.0);
    let dist = |a: &ModelParams| -> f64 {
        a.values().zip(student.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let alpha = 0.9;
    for _ in 0..30 {
        let before = dist(&teacher);
        teacher = ema_update(&teacher, &student, alpha).unwrap();
        assert!((dist(&teacher) - alpha * before).abs() <= 1e-12 * before.max(1.0));
    }
    assert!(ema_update(&teacher, &ModelParams::zeros(3, 5), alpha).is_err());
    assert!(ema_update(&teacher, &student, 1.5).is_err());
}

#[test]
fn teacher_starts_as_exact_independent_copy() {
    let mut student = trained().clone();
    let teacher = init_teacher(&student);
    assert_eq!(teacher, student);
    let snapshot = teacher.clone();
    student.cls.weight[0] += 1.0;
    assert_eq!(teacher, snapshot);
    assert_eq!(ema_update(&teacher, &student, 1.0).unwrap(), snapshot);
}

// Pseudo-labels

fn one_detection_teacher(cls_score: f64, ood_score: f64) -> ModelParams {
    let mut p = ModelParams::zeros(1, 2);
    p.cls.bias[0] = (cls_score / (1.0 - cls_score)).ln();
    p.ova.linear.bias[0] = (ood_score / (1.0 - ood_score)).ln();
    p
}

#[test]
fn confident_but_ood_detection_is_rejected_and_filtered() {
    let c = TrainerConfig::default();
    let teacher = one_detection_teacher(0.9, 0.4);
    let set = pseudo_labels_from(&teacher, &[BBox::new(0.1, 0.1, 0.3, 0.3)], &[vec![0.0, 0.0]], &c);
    assert_eq!(set.detections.len(), 1);
    assert!((set.detections[0].ood_score - 0.4).abs() < 1e-12);
    assert!(set.filtered().is_empty());
    assert_eq!(set.rejected_ood().len(), 1);

    let teacher = one_detection_teacher(0.9, 0.8);
    let set = pseudo_labels_from(&teacher, &[BBox::new(0.1, 0.1, 0.3, 0.3)], &[vec![0.0, 0.0]], &c);
    assert_eq!(set.accepted_id().len(), 1);
    assert_eq!(set.filtered().len(), 1);
}

#[test]
fn unreachable_tau_empties_everything() {
    let c = with(&small_config("").trainer, |c| c.tau = 1.01);
    let s = small_splits();
    let labeled: Vec<_> = s.labeled.iter().take(2).collect();
    let unlabeled: Vec<_> = s.unlabeled.iter().take(4).collect();
    let b = prepare_step(trained(), &s.world, &labeled, &unlabeled, &c, &mut TrainerStreams::new(1));
    assert!(b.pseudo.iter().all(|p| p.detections.is_empty()));
    assert!(b.unsup_det.is_empty() && b.ova_unsup.is_empty());
    let (loss, _) = step_losses(trained(), &b, &c).unwrap();
    assert_eq!((loss.unsup_det, loss.ova_unsup), (0.0, 0.0));
}

#[test]
fn rejecting_every_pseudo_label_zeroes_the_unsupervised_detection_term() {
    // no OOD score reaches 1, so nothing clears the filter
    let c = with(&small_config("").trainer, |c| {
        c.tau_prime = 1.0;
        c.tau_ood = 1.0;
    });
    let s = small_splits();
    let labeled: Vec<_> = s.labeled.iter().take(2).collect();
    let unlabeled: Vec<_> = s.unlabeled.iter().collect();
    let b = prepare_step(trained(), &s.world, &labeled, &unlabeled, &c, &mut TrainerStreams::new(2));
    assert!(b.pseudo.iter().map(|p| p.detections.len()).sum::<usize>() > 0);
    assert!(b.unsup_det.is_empty());
    let (loss, grads) = step_losses(trained(), &b, &c).unwrap();
    assert_eq!(loss.unsup_det, 0.0);

    // the same step without any unsupervised detection samples
    let mut stripped = b.clone();
    stripped.unsup_det.clear();
    let (_, again) = step_losses(trained(), &stripped, &c).unwrap();
    assert_eq!(grads, again);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_tau_prime_never_grows_the_filtered_set(
        scene in 0usize..24, seed in 0u64..50, a in 0.0f64..=0.7, b in 0.0f64..=0.7,
        scorer in prop::sample::select(vec![ScorerKind::Ova, ScorerKind::Msp, ScorerKind::Entropy]),
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (proposals, features) = rendered_scene(scene, seed);
        let base = with(&small_config("").trainer, |c| { c.scorer = scorer; c.tau = 0.5; });
        let n_lo = pseudo_labels_from(trained(), &proposals, &features, &with(&base, |c| c.tau_prime = lo)).filtered().len();
        let n_hi = pseudo_labels_from(trained(), &proposals, &features, &with(&base, |c| c.tau_prime = hi)).filtered().len();
        prop_assert!(n_hi <= n_lo);
    }

    #[test]
    fn lowering_the_energy_threshold_never_grows_the_filtered_set(
        scene in 0usize..24, seed in 0u64..50, a in -8.0f64..0.0, b in -8.0f64..0.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (proposals, features) = rendered_scene(scene, seed);
        let base = with(&small_config("").trainer, |c| { c.scorer = ScorerKind::Energy; c.tau = 0.5; });
        let strict = pseudo_labels_from(trained(), &proposals, &features, &with(&base, |c| c.energy_threshold = Some(lo)));
        let loose = pseudo_labels_from(trained(), &proposals, &features, &with(&base, |c| c.energy_threshold = Some(hi)));
        prop_assert!(strict.filtered().len() <= loose.filtered().len());
    }

    #[test]
    fn bands_partition_every_detection(
        scene in 0usize..24, seed in 0u64..50, tau_ood in 0.5f64..=1.0, tau in 0.3f64..0.9,
        scorer in prop::sample::select(ScorerKind::ALL.to_vec()),
    ) {
        let (proposals, features) = rendered_scene(scene, seed);
        let c = with(&small_config("").trainer, |c| {
            c.scorer = scorer;
            c.tau = tau;
            c.tau_ood = tau_ood;
            c.tau_prime = c.tau_prime.min(tau_ood);
            c.energy_threshold = Some(-3.0);
        });
        let set = pseudo_labels_from(trained(), &proposals, &features, &c);
        prop_assert_eq!(set.bands.len(), set.detections.len());
        let total = set.accepted_id().len() + set.ignored().len() + set.rejected_ood().len();
        prop_assert_eq!(total, set.detections.len());
        for (d, band) in set.detections.iter().zip(&set.bands) {
            prop_assert!(d.cls_score >= tau);
            prop_assert_eq!(*band, band_of(d.ood_score, &c));
        }
        if scorer.descriptor().probabilistic {
            for d in set.filtered() {
                prop_assert!(d.ood_score >= c.tau_prime);
            }
        }
    }

    #[test]
    fn band_edges(p in 0.0f64..=1.0, tau_ood in 0.5f64..=1.0) {
        let c = TrainerConfig { tau_ood, ..TrainerConfig::default() };
        let expected = if p >= tau_ood { Band::AcceptedId } else if p < 0.5 { Band::RejectedOod } else { Band::Ignored };
        prop_assert_eq!(band_of(p, &c), expected);
    }
}

#[test]
fn band_boundaries() {
    let c = TrainerConfig::default();
    assert_eq!(band_of(0.5, &c), Band::Ignored);
    assert_eq!(band_of(0.7, &c), Band::AcceptedId);
    assert_eq!(band_of(0.499_999, &c), Band::RejectedOod);
}

fn det(b: BBox, class_id: usize, ood_score: f64) -> Detection {
    Detection {
        bbox: b,
        class_id,
        cls_score: 0.9,
        ood_score,
    }
}

#[test]
fn unlabeled_ood_targets_follow_bands() {
    let c = TrainerConfig::default();
    let a = BBox::new(0.0, 0.0, 0.2, 0.2);
    let b = BBox::new(0.5, 0.5, 0.7, 0.7);
    let m = BBox::new(0.2, 0.6, 0.4, 0.8);
    let dets = vec![det(a, 1, 0.9), det(b, 2, 0.3), det(m, 0, 0.6)];
    let set = PseudoLabelSet {
        bands: dets.iter().map(|d| band_of(d.ood_score, &c)).collect(),
        passes_filter: vec![true, false, true],
        detections: dets,
        num_id: 4,
    };
    let shrink = |x: &BBox| BBox::new(x.x_min + 0.002, x.y_min + 0.002, x.x_max - 0.002, x.y_max - 0.002);
    let proposals = vec![
        shrink(&a),                         // IoU ~0.96 with an accepted box
        shrink(&b),                         // with a rejected box
        shrink(&m),                         // with an ignored box
        BBox::new(0.85, 0.0, 0.95, 0.1),    // with nothing
        BBox::new(0.0, 0.0, 0.2, 0.12),     // overlaps accepted box at IoU 0.6
    ];
    let t = build_ood_targets_unlabeled(&proposals, &set, &c);
    assert_eq!(t, vec![(0, 1), (1, 4)]);
}

// Full steps

#[test]
fn loss_decomposes_at_every_iteration() {
    let cfg = small_config("lambda_unsup = 2.0\nlambda_ood = 0.1\ntau = 0.5");
    let c = &cfg.trainer;
    let s = small_splits();
    let mut streams = TrainerStreams::new(5);
    let mut student = trained().clone();
    let mut teacher = init_teacher(&student);
    let mut saw_unsup = false;
    for it in 0..25 {
        let labeled: Vec<_> = (0..c.labeled_batch).map(|k| &s.labeled[(it + k) % s.labeled.len()]).collect();
        let unlabeled: Vec<_> = (0..c.unlabeled_batch)
            .map(|k| &s.unlabeled[(3 * it + k) % s.unlabeled.len()])
            .collect();
        let (next_s, next_t, report) =
            train_step(&student, &teacher, &s.world, &labeled, &unlabeled, c, &mut streams).unwrap();
        let b = &report.batches;
        let (sup, g_sup) = supervised_detection_loss(&student, &b.sup_det).unwrap();
        let (unsup, g_unsup) = unsupervised_detection_loss(&student, &b.unsup_det);
        let ova_sup = ova_batch_loss(&student.ova, &b.ova_sup).unwrap();
        let ova_unsup = if b.ova_unsup.is_empty() {
            (0.0, ModelParams::zeros(student.num_id, student.feature_dim).ova)
        } else {
            ova_batch_loss(&student.ova, &b.ova_unsup).unwrap()
        };
        saw_unsup |= !b.unsup_det.is_empty() && !b.ova_unsup.is_empty();
        let expected = sup + c.lambda_unsup * unsup + ova_sup.0 + c.lambda_ood * ova_unsup.0;
        assert!((report.total - expected).abs() < 1e-12, "iteration {it}");
        assert_eq!(
            report.loss,
            LossComponents { sup_det: sup, unsup_det: unsup, ova_sup: ova_sup.0, ova_unsup: ova_unsup.0 }
        );

        // the applied gradient is the same weighted sum
        let mut g = g_sup;
        for (dst, src) in g.tensors_mut().into_iter().zip(g_unsup.tensors()) {
            for (x, y) in dst.iter_mut().zip(src) {
                *x += c.lambda_unsup * y;
            }
        }
        let ova_total: Linear = Linear {
            rows: ova_sup.1.linear.rows,
            cols: ova_sup.1.linear.cols,
            weight: ova_sup.1.linear.weight.iter().zip(&ova_unsup.1.linear.weight).map(|(a, b)| a + c.lambda_ood * b).collect(),
            bias: ova_sup.1.linear.bias.iter().zip(&ova_unsup.1.linear.bias).map(|(a, b)| a + c.lambda_ood * b).collect(),
        };
        g.ova.linear = ova_total;
        let expected_student = sgd_step(&student, &g, c.learning_rate).unwrap();
        let diff = expected_student.values().zip(next_s.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "iteration {it}: student differs by {diff:e}");
        assert_eq!(next_t, ema_update(&teacher, &next_s, c.alpha).unwrap());
        student = next_s;
        teacher = next_t;
    }
    assert!(saw_unsup, "no iteration exercised the unsupervised terms");
}

#[test]
fn logged_totals_match_components() {
    let cfg = small_config("tau = 0.5");
    let recs = run_experiment(&cfg.trainer, small_splits()).unwrap();
    assert_eq!(recs.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![150, 170, 190]);
    for r in &recs {
        assert_eq!(r.loss_total, r.loss.total(cfg.trainer.lambda_unsup, cfg.trainer.lambda_ood));
        assert!((0.0..=1.0).contains(&r.map));
        assert!((0.0..=1.0).contains(&r.pseudo_precision) && (0.0..=1.0).contains(&r.pseudo_recall));
    }
}

#[test]
fn hidden_labels_never_reach_training() {
    let cfg = small_config("tau = 0.5");
    let clean = small_splits();
    let poisoned = clean.with_poisoned_hidden_labels(99);
    assert_ne!(&poisoned, clean);
    let run = |s: &DatasetSplits| {
        let mut losses = Vec::new();
        let out = run_experiment_with(&cfg.trainer, s, |r, _, _| {
            losses.push((r.loss, r.map));
            Ok(())
        })
        .unwrap();
        (out.teacher, out.student, losses)
    };
    assert_eq!(run(clean), run(&poisoned));
}

#[test]
fn burn_in_is_deterministic_and_learns() {
    let cfg = small_config("");
    let s = small_splits();
    let init = ModelParams::init(s.world.num_id(), s.world.feature_dim, &mut stream(0, "init"));
    let zero = with(&cfg.trainer, |c| c.burn_in_iters = 0);
    let (same, none) = burn_in(&init, &s.world, &s.labeled, &zero, &mut TrainerStreams::new(0)).unwrap();
    assert_eq!(same, init);
    assert!(none.is_empty());
    let (a, la) = burn_in(&init, &s.world, &s.labeled, &cfg.trainer, &mut TrainerStreams::new(0)).unwrap();
    let (b, _) = burn_in(&init, &s.world, &s.labeled, &cfg.trainer, &mut TrainerStreams::new(0)).unwrap();
    assert_eq!(a, b);
    let head: f64 = la[..10].iter().map(|l| l.sup_det).sum::<f64>() / 10.0;
    let tail: f64 = la[la.len() - 10..].iter().map(|l| l.sup_det).sum::<f64>() / 10.0;
    assert!(tail < head, "supervised loss {head} -> {tail}");
}

#[test]
fn degenerate_schedule_evaluates_once() {
    let cfg = small_config("total_iters = 150");
    let recs = run_experiment(&cfg.trainer, small_splits()).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].iteration, 150);
}

#[test]
fn swapping_msp_for_ova_shares_the_burn_in_detector() {
    let s = small_splits();
    let mut burned = Vec::new();
    let mut firsts = Vec::new();
    for scorer in ["msp", "ova"] {
        let cfg = small_config(&format!("scorer = {scorer}\ntau = 0.5"));
        let mut first = None;
        run_experiment_with(&cfg.trainer, s, |r, teacher, _| {
            if first.is_none() {
                first = Some((r.map, r.per_class_ap.clone(), teacher.cls.clone(), teacher.reg.clone()));
            }
            Ok(())
        })
        .unwrap();
        let first = first.unwrap();
        burned.push((first.2.clone(), first.3.clone()));
        firsts.push(first);
    }
    assert_eq!(burned[0], burned[1]);
    assert_eq!(firsts[0].0, firsts[1].0);
    assert_eq!(firsts[0].1, firsts[1].1);
}

#[test]
fn every_scorer_runs_end_to_end() {
    for scorer in ScorerKind::ALL {
        let cfg = small_config(&format!("scorer = {scorer}\ntau = 0.5"));
        let recs = run_experiment(&cfg.trainer, small_splits()).unwrap();
        assert_eq!(recs.len(), 3, "{scorer}");
        assert!(recs.iter().all(|r| r.map.is_finite() && r.ood_auroc.is_finite()));
    }
}

#[test]
fn runs_repeat_exactly() {
    let cfg = small_config("tau = 0.5");
    let a = run_experiment(&cfg.trainer, small_splits()).unwrap();
    let b = run_experiment(&cfg.trainer, &build_splits(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}
