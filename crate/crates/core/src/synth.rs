//! Procedural open-set detection benchmark.
//!
//! A world is a set of classes, split into in-distribution (ID) and
//! out-of-distribution (OOD), each with a mean in feature space. Scenes are
//! sets of boxed instances; every instance carries a latent appearance vector
//! drawn once around its class mean. Proposal features are mixtures of the
//! best-overlapping instance's appearance and the background mean, weighted by
//! IoU, so poorly localized proposals look partly like background.
//!
//! The trainer never sees unlabeled annotations: unlabeled scenes are wrapped in
//! [`UnlabeledScene`], which exposes proposals and features only. Reading the
//! hidden annotations requires a [`GroundTruthAccess`] token.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{best_match, BBox};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: usize,
    pub is_id: bool,
    pub feature_mean: Vec<f64>,
    pub feature_spread: f64,
}

/// World generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldParams {
    pub num_classes: usize,
    pub num_id_classes: usize,
    pub feature_dim: usize,
    /// Isotropic standard deviation of instance appearance around its class mean.
    pub feature_spread: f64,
    /// Standard deviation of each coordinate of an independently drawn mean.
    pub mean_scale: f64,
    /// When positive, each OOD class is a look-alike of a random ID class: its
    /// mean is that class's mean plus a random offset of this length.
    /// Zero draws OOD means independently.
    pub ood_offset: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            num_classes: 10,
            num_id_classes: 4,
            feature_dim: 16,
            feature_spread: 0.25,
            mean_scale: 0.15,
            ood_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub classes: Vec<ClassSpec>,
    pub background_mean: Vec<f64>,
    pub feature_dim: usize,
    /// Detector label of each class, `None` for OOD classes.
    id_labels: Vec<Option<usize>>,
}

impl World {
    fn new(classes: Vec<ClassSpec>, background_mean: Vec<f64>) -> Self {
        let feature_dim = background_mean.len();
        let mut next = 0;
        let id_labels = classes
            .iter()
            .map(|c| {
                c.is_id.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Self {
            classes,
            background_mean,
            feature_dim,
            id_labels,
        }
    }

    /// Number of ID classes `N`.
    pub fn num_id(&self) -> usize {
        self.id_labels.iter().flatten().count()
    }

    /// Maps a world class id to its detector label in `[0, N)`.
    pub fn id_label(&self, class_id: usize) -> Option<usize> {
        self.id_labels.get(class_id).copied().flatten()
    }

    pub fn is_id(&self, class_id: usize) -> bool {
        self.id_label(class_id).is_some()
    }

    pub fn feature_spread(&self) -> f64 {
        self.classes.first().map_or(0.0, |c| c.feature_spread)
    }

    fn class_ids(&self, id: bool) -> Vec<usize> {
        self.classes
            .iter()
            .filter(|c| c.is_id == id)
            .map(|c| c.class_id)
            .collect()
    }
}

const MAX_WORLD_ATTEMPTS: usize = 1000;

fn gaussian_vec(rng: &mut StreamRng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Draws a world. ID membership is a random subset of the classes.
///
/// All class means and the background mean are kept at least
/// `2 * feature_spread` apart by resampling the whole draw.
pub fn generate_world(params: &WorldParams, seed: u64) -> Result<World> {
    let WorldParams {
        num_classes,
        num_id_classes,
        feature_dim,
        feature_spread,
        mean_scale,
        ood_offset,
    } = *params;
    if num_id_classes == 0 || num_id_classes >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "need 0 < num_id_classes < num_classes, got {num_id_classes} of {num_classes}"
        )));
    }
    if feature_dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature_dim must be at least 2, got {feature_dim}"
        )));
    }
    if !(feature_spread > 0.0) || !(mean_scale > 0.0) || !(ood_offset >= 0.0) {
        return Err(Error::InvalidArgument(
            "feature_spread and mean_scale must be positive, ood_offset non-negative".into(),
        ));
    }

    let mut rng = stream(seed, "world");
    let mut ids: Vec<usize> = (0..num_classes).collect();
    ids.shuffle(&mut rng);
    let mut is_id = vec![false; num_classes];
    let mut id_sorted: Vec<usize> = ids[..num_id_classes].to_vec();
    id_sorted.sort_unstable();
    for &c in &id_sorted {
        is_id[c] = true;
    }

    let min_sep = 2.0 * feature_spread;
    for _ in 0..MAX_WORLD_ATTEMPTS {
        let background = gaussian_vec(&mut rng, feature_dim, mean_scale);
        let mut means: Vec<Vec<f64>> = vec![Vec::new(); num_classes];
        for &c in &id_sorted {
            means[c] = gaussian_vec(&mut rng, feature_dim, mean_scale);
        }
        for c in (0..num_classes).filter(|&c| !is_id[c]) {
            means[c] = if ood_offset > 0.0 {
                let parent = id_sorted[rng.random_range(0..id_sorted.len())];
                let dir = gaussian_vec(&mut rng, feature_dim, 1.0);
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                means[parent]
                    .iter()
                    .zip(&dir)
                    .map(|(m, d)| m + ood_offset * d / norm)
                    .collect()
            } else {
                gaussian_vec(&mut rng, feature_dim, mean_scale)
            };
        }

        let mut all: Vec<&Vec<f64>> = means.iter().collect();
        all.push(&background);
        let separated = (0..all.len())
            .all(|i| (i + 1..all.len()).all(|j| distance(all[i], all[j]) >= min_sep));
        if separated {
            let classes = means
                .into_iter()
                .enumerate()
                .map(|(class_id, feature_mean)| ClassSpec {
                    class_id,
                    is_id: is_id[class_id],
                    feature_mean,
                    feature_spread,
                })
                .collect();
            return Ok(World::new(classes, background));
        }
    }
    Err(Error::InfeasibleWorld {
        count: num_classes + 1,
        dim: feature_dim,
        min_separation: min_sep,
        attempts: MAX_WORLD_ATTEMPTS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SplitTag {
    Id,
    Mix,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub bbox: BBox,
    pub class_id: usize,
    /// Latent appearance: class mean plus per-instance spread.
    pub appearance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: usize,
    pub tag: SplitTag,
    pub instances: Vec<Instance>,
}

impl Scene {
    pub fn boxes(&self) -> Vec<BBox> {
        self.instances.iter().map(|i| i.bbox).collect()
    }

    /// Annotations restricted to ID classes, as `(box, detector label)`.
    pub fn id_annotations(&self, world: &World) -> Vec<(BBox, usize)> {
        self.instances
            .iter()
            .filter_map(|i| world.id_label(i.class_id).map(|l| (i.bbox, l)))
            .collect()
    }

    pub fn features(
        &self,
        world: &World,
        proposals: &[BBox],
        noise_scale: f64,
        rng: &mut StreamRng,
    ) -> Vec<Vec<f64>> {
        proposals
            .iter()
            .map(|p| feature_oracle(world, self, p, noise_scale, rng))
            .collect()
    }
}

/// Capability needed to read the annotations of unlabeled scenes.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthAccess(());

impl GroundTruthAccess {
    /// For evaluation code and leakage probes only.
    pub fn evaluator() -> Self {
        GroundTruthAccess(())
    }
}

/// An unlabeled scene: the trainer may observe it but not read its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledScene(Scene);

impl UnlabeledScene {
    pub fn scene_id(&self) -> usize {
        self.0.scene_id
    }

    /// RPN-surrogate proposals. Uses instance locations, never classes.
    pub fn proposals(&self, params: &ProposalParams, rng: &mut StreamRng) -> Vec<BBox> {
        generate_proposals(&self.0.boxes(), params, rng)
    }

    pub fn features(
        &self,
        world: &World,
        proposals: &[BBox],
        noise_scale: f64,
        rng: &mut StreamRng,
    ) -> Vec<Vec<f64>> {
        self.0.features(world, proposals, noise_scale, rng)
    }

    pub fn ground_truth(&self, _access: GroundTruthAccess) -> &Scene {
        &self.0
    }
}

/// Scene generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitParams {
    pub num_labeled: usize,
    /// Unlabeled scene counts per tag: (ID, MIX, OOD).
    pub unlabeled_per_tag: (usize, usize, usize),
    /// Held-out pure-ID scenes for detection metrics.
    pub num_eval: usize,
    /// Held-out MIX scenes whose OOD objects are present but unannotated.
    pub num_eval_mix: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub min_box: f64,
    pub max_box: f64,
    /// Probability that an instance of a MIX scene is ID.
    pub mix_id_fraction: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            num_labeled: 50,
            unlabeled_per_tag: (60, 160, 80),
            num_eval: 100,
            num_eval_mix: 0,
            min_instances: 2,
            max_instances: 4,
            min_box: 0.05,
            max_box: 0.3,
            mix_id_fraction: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub world: World,
    pub labeled: Vec<Scene>,
    pub unlabeled: Vec<UnlabeledScene>,
    pub eval: Vec<Scene>,
}

impl DatasetSplits {
    pub fn id_class_count(&self) -> usize {
        self.world.num_id()
    }

    pub fn background_feature_mean(&self) -> &[f64] {
        &self.world.background_mean
    }

    /// Rewrites every hidden unlabeled class label with garbage while leaving
    /// what the scenes look like untouched. Training on the result must be
    /// indistinguishable from training on the original.
    pub fn with_poisoned_hidden_labels(&self, seed: u64) -> DatasetSplits {
        let mut rng = stream(seed, "poison");
        let mut out = self.clone();
        let n = out.world.classes.len();
        for u in &mut out.unlabeled {
            for inst in &mut u.0.instances {
                inst.class_id = rng.random_range(0..n);
            }
            u.0.tag = [SplitTag::Id, SplitTag::Mix, SplitTag::Ood][rng.random_range(0..3)];
        }
        out
    }

    /// The same splits with every OOD object erased from the unlabeled pool:
    /// what training would see behind a perfect outlier filter.
    pub fn without_unlabeled_ood(&self, _access: GroundTruthAccess) -> DatasetSplits {
        let mut out = self.clone();
        for u in &mut out.unlabeled {
            let world = &self.world;
            u.0.instances.retain(|i| world.is_id(i.class_id));
        }
        out
    }

    pub fn unlabeled_ground_truth(&self, access: GroundTruthAccess) -> Vec<&Scene> {
        self.unlabeled.iter().map(|u| u.ground_truth(access)).collect()
    }
}

fn sample_box(rng: &mut StreamRng, min_box: f64, max_box: f64) -> BBox {
    let w = rng.random_range(min_box..=max_box);
    let h = rng.random_range(min_box..=max_box);
    let cx = rng.random_range(0.5 * w..=1.0 - 0.5 * w);
    let cy = rng.random_range(0.5 * h..=1.0 - 0.5 * h);
    BBox::from_center(cx, cy, w, h).clip_unit()
}

fn appearance(world: &World, class_id: usize, rng: &mut StreamRng) -> Vec<f64> {
    let spec = &world.classes[class_id];
    spec.feature_mean
        .iter()
        .map(|m| m + spec.feature_spread * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

// Instances in one scene overlap at most this much, so every object stays
// individually detectable.
const MAX_INSTANCE_OVERLAP: f64 = 0.3;

fn generate_scene(
    world: &World,
    params: &SplitParams,
    scene_id: usize,
    tag: SplitTag,
    seed: u64,
) -> Scene {
    let mut rng = stream(seed, &format!("scene/{scene_id}"));
    let id_classes = world.class_ids(true);
    let ood_classes = world.class_ids(false);

    let min_n = if tag == SplitTag::Mix {
        params.min_instances.max(2)
    } else {
        params.min_instances.max(1)
    };
    let max_n = params.max_instances.max(min_n);
    let count = rng.random_range(min_n..=max_n);

    let mut from_id: Vec<bool> = (0..count)
        .map(|_| match tag {
            SplitTag::Id => true,
            SplitTag::Ood => false,
            SplitTag::Mix => rng.random_bool(params.mix_id_fraction.clamp(0.0, 1.0)),
        })
        .collect();
    if tag == SplitTag::Mix {
        if from_id.iter().all(|&b| b) {
            let k = rng.random_range(0..count);
            from_id[k] = false;
        } else if from_id.iter().all(|&b| !b) {
            let k = rng.random_range(0..count);
            from_id[k] = true;
        }
    }

    let mut boxes: Vec<BBox> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut candidate = sample_box(&mut rng, params.min_box, params.max_box);
        for _ in 0..50 {
            if boxes
                .iter()
                .all(|b| crate::geometry::iou(b, &candidate) <= MAX_INSTANCE_OVERLAP)
            {
                break;
            }
            candidate = sample_box(&mut rng, params.min_box, params.max_box);
        }
        boxes.push(candidate);
    }

    let instances = boxes
        .into_iter()
        .zip(from_id)
        .map(|(bbox, id)| {
            let pool = if id { &id_classes } else { &ood_classes };
            let class_id = pool[rng.random_range(0..pool.len())];
            let appearance = appearance(world, class_id, &mut rng);
            Instance {
                bbox,
                class_id,
                appearance,
            }
        })
        .collect();

    Scene {
        scene_id,
        tag,
        instances,
    }
}

/// Draws labeled, unlabeled and held-out evaluation scenes. Each scene is
/// seeded from its index, so generation order does not matter.
pub fn generate_splits(world: &World, params: &SplitParams, seed: u64) -> Result<DatasetSplits> {
    let (n_id, n_mix, n_ood) = params.unlabeled_per_tag;
    if params.num_labeled == 0 {
        return Err(Error::InvalidArgument("num_labeled must be at least 1".into()));
    }
    if n_id + n_mix + n_ood == 0 {
        return Err(Error::InvalidArgument(
            "at least one unlabeled scene is required".into(),
        ));
    }
    if !(params.min_box > 0.0 && params.min_box <= params.max_box && params.max_box <= 1.0) {
        return Err(Error::InvalidArgument(
            "box sizes must satisfy 0 < min_box <= max_box <= 1".into(),
        ));
    }
    if params.max_instances == 0 || params.min_instances > params.max_instances {
        return Err(Error::InvalidArgument(
            "instance counts must satisfy min_instances <= max_instances, max_instances >= 1".into(),
        ));
    }

    let mut next_id = 0usize;
    let mut make = |tag: SplitTag, count: usize| -> Vec<Scene> {
        (0..count)
            .map(|_| {
                let s = generate_scene(world, params, next_id, tag, seed);
                next_id += 1;
                s
            })
            .collect()
    };

    let labeled = make(SplitTag::Id, params.num_labeled);
    let mut unlabeled = make(SplitTag::Id, n_id);
    unlabeled.extend(make(SplitTag::Mix, n_mix));
    unlabeled.extend(make(SplitTag::Ood, n_ood));
    let mut eval = make(SplitTag::Id, params.num_eval);
    eval.extend(make(SplitTag::Mix, params.num_eval_mix));

    Ok(DatasetSplits {
        world: world.clone(),
        labeled,
        unlabeled: unlabeled.into_iter().map(UnlabeledScene).collect(),
        eval,
    })
}

/// Feature of `proposal` in `scene`.
///
/// With `m` the best IoU against any instance `g`, returns
/// `m * appearance(g) + (1 - m) * background + noise_scale * z`.
pub fn feature_oracle(
    world: &World,
    scene: &Scene,
    proposal: &BBox,
    noise_scale: f64,
    rng: &mut StreamRng,
) -> Vec<f64> {
    let matched = best_match(proposal, scene.instances.iter().map(|i| &i.bbox));
    let mut out = world.background_mean.clone();
    if let Some((idx, m)) = matched {
        let app = &scene.instances[idx].appearance;
        for (o, a) in out.iter_mut().zip(app) {
            *o = m * a + (1.0 - m) * *o;
        }
    }
    if noise_scale > 0.0 {
        for o in &mut out {
            *o += noise_scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out
}

/// RPN-surrogate settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalParams {
    /// Corner jitter, as a fraction of the box side, at its largest.
    pub jitter_scale: f64,
    pub copies_per_gt: usize,
    pub num_random: usize,
    pub min_box: f64,
    pub max_box: f64,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self {
            jitter_scale: 0.4,
            copies_per_gt: 16,
            num_random: 32,
            min_box: 0.05,
            max_box: 0.3,
        }
    }
}

const MIN_PROPOSAL_SIDE: f64 = 1e-3;

fn keep_nondegenerate(b: BBox) -> BBox {
    let mut b = b.clip_unit();
    if b.width() < MIN_PROPOSAL_SIDE {
        let x0 = b.x_min.min(1.0 - MIN_PROPOSAL_SIDE);
        b.x_min = x0;
        b.x_max = x0 + MIN_PROPOSAL_SIDE;
    }
    if b.height() < MIN_PROPOSAL_SIDE {
        let y0 = b.y_min.min(1.0 - MIN_PROPOSAL_SIDE);
        b.y_min = y0;
        b.y_max = y0 + MIN_PROPOSAL_SIDE;
    }
    b
}

/// Jittered copies of every ground-truth box followed by uniformly placed
/// random boxes, all clipped to the unit extent.
///
/// Each copy draws its own jitter magnitude in `[0, jitter_scale]`, so the
/// copies cover a wide range of IoUs with their source. Zero jitter reproduces
/// the source boxes exactly.
pub fn generate_proposals(gt: &[BBox], params: &ProposalParams, rng: &mut StreamRng) -> Vec<BBox> {
    let mut out = Vec::with_capacity(gt.len() * params.copies_per_gt + params.num_random);
    for g in gt {
        for _ in 0..params.copies_per_gt {
            if params.jitter_scale <= 0.0 {
                out.push(*g);
                continue;
            }
            let s = params.jitter_scale * rng.random::<f64>();
            let (w, h) = (g.width(), g.height());
            let mut j = |side: f64| s * side * rng.sample::<f64, _>(StandardNormal);
            let b = BBox::new(
                g.x_min + j(w),
                g.y_min + j(h),
                g.x_max + j(w),
                g.y_max + j(h),
            );
            out.push(keep_nondegenerate(b));
        }
    }
    for _ in 0..params.num_random {
        out.push(sample_box(rng, params.min_box, params.max_box));
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum DatasetRecord {
    World {
        world: World,
    },
    Scene {
        id: usize,
        tag: SplitTag,
        role: SceneRole,
        labeled: bool,
        instances: Vec<Instance>,
    },
}

#[derive(Serialize, Deserialize, PartialEq, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum SceneRole {
    Labeled,
    Unlabeled,
    Eval,
}

/// Writes the splits as JSON lines: one `world` record, then one `scene`
/// record per scene with fields `id, tag, role, labeled, instances`.
pub fn export_dataset(splits: &DatasetSplits, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |rec: &DatasetRecord| -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| Error::parse("dataset", e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))
    };
    put(&DatasetRecord::World {
        world: splits.world.clone(),
    })?;
    let access = GroundTruthAccess::evaluator();
    let scenes = splits
        .labeled
        .iter()
        .map(|s| (s, SceneRole::Labeled))
        .chain(
            splits
                .unlabeled
                .iter()
                .map(|u| (u.ground_truth(access), SceneRole::Unlabeled)),
        )
        .chain(splits.eval.iter().map(|s| (s, SceneRole::Eval)));
    for (scene, role) in scenes {
        put(&DatasetRecord::Scene {
            id: scene.scene_id,
            tag: scene.tag,
            role,
            labeled: role == SceneRole::Labeled,
            instances: scene.instances.clone(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn import_dataset(path: &Path) -> Result<DatasetSplits> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut world = None;
    let (mut labeled, mut unlabeled, mut eval) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse("dataset", format!("line {}: {e}", n + 1)))?;
        match rec {
            DatasetRecord::World { world: w } => world = Some(World::new(w.classes, w.background_mean)),
            DatasetRecord::Scene {
                id,
                tag,
                role,
                instances,
                ..
            } => {
                let scene = Scene {
                    scene_id: id,
                    tag,
                    instances,
                };
                match role {
                    SceneRole::Labeled => labeled.push(scene),
                    SceneRole::Unlabeled => unlabeled.push(UnlabeledScene(scene)),
                    SceneRole::Eval => eval.push(scene),
                }
            }
        }
    }
    let world = world.ok_or_else(|| Error::parse("dataset", "missing world record"))?;
    Ok(DatasetSplits {
        world,
        labeled,
        unlabeled,
        eval,
    })
}
