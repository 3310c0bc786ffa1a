//! Run matrices, manifests and run comparison.
//!
//! A manifest is a base config, a list of seeds and a list of named
//! variants, each a set of overrides on the base. Runs land in
//! `<out>/runs/<manifest hash>/<variant>/<seed>/` with `metrics.csv`,
//! `summary.json` and `checkpoints/`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{apply_text, short_hash, split_override, ExperimentConfig};
use crate::detector::ModelParams;
use crate::error::{Error, Result};
use crate::eval::{evaluate, metrics_csv, LossComponents, MetricsRecord};
use crate::trainer::{build_splits, run_experiment_with};

/// One point on the variant axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

impl Variant {
    pub fn new(name: &str, overrides: &[(&str, &str)]) -> Self {
        Self {
            name: name.to_string(),
            overrides: overrides
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub base: ExperimentConfig,
    pub seeds: Vec<u64>,
    /// What the variants vary, e.g. `scorer` or `labeled_count`.
    pub axis: String,
    pub variants: Vec<Variant>,
    /// Output root; runs go under `<out_dir>/runs/<hash>/`.
    pub out_dir: PathBuf,
}

pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

pub const PRESETS: [&str; 6] = [
    "main",
    "combo-sweep",
    "label-sweep",
    "idclass-sweep",
    "scorer-ablation",
    "no-filter-baseline",
];

const NO_FILTER: [(&str, &str); 2] = [("tau_prime", "0"), ("lambda_ood", "0")];

/// Axis name and variants of a built-in preset.
pub fn preset(name: &str) -> Result<(String, Vec<Variant>)> {
    let v = Variant::new;
    let (axis, variants) = match name {
        // full method against plain SSOD and against a head trained on labeled data only
        "main" => (
            "method",
            vec![
                v("ova", &[]),
                v("nofilter", &NO_FILTER),
                v("labeled-ood-only", &[("lambda_ood", "0")]),
            ],
        ),
        "combo-sweep" => {
            let combos = [
                ("id", ("60", "0", "0")),
                ("id-mix", ("60", "160", "0")),
                ("id-mix-ood", ("60", "160", "80")),
            ];
            let mut out = Vec::new();
            for (combo, (id, mix, ood)) in combos {
                let data = [("unlabeled_id", id), ("unlabeled_mix", mix), ("unlabeled_ood", ood)];
                out.push(v(&format!("{combo}-nofilter"), &[&data[..], &NO_FILTER[..]].concat()));
                out.push(v(&format!("{combo}-ova"), &data));
            }
            ("unlabeled_combo", out)
        }
        "label-sweep" => (
            "labeled_count",
            ["10", "25", "50"]
                .iter()
                .map(|n| v(&format!("labeled-{n}"), &[("num_labeled", n)]))
                .collect(),
        ),
        "idclass-sweep" => (
            "id_classes",
            ["2", "4", "6"]
                .iter()
                .map(|n| v(&format!("id-classes-{n}"), &[("num_id_classes", n)]))
                .collect(),
        ),
        "scorer-ablation" => (
            "scorer",
            vec![
                v("nofilter", &NO_FILTER),
                v("msp", &[("scorer", "msp")]),
                v("energy", &[("scorer", "energy")]),
                v("entropy", &[("scorer", "entropy")]),
                v("ova", &[("scorer", "ova")]),
            ],
        ),
        "no-filter-baseline" => ("method", vec![v("nofilter", &NO_FILTER)]),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset `{name}`; known: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok((axis.to_string(), variants))
}

impl ExperimentManifest {
    /// Single-variant manifest over the default seeds.
    pub fn single(base: ExperimentConfig, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            base,
            seeds: DEFAULT_SEEDS.to_vec(),
            axis: "none".into(),
            variants: vec![Variant::new("base", &[])],
            out_dir: out_dir.into(),
        }
    }

    pub fn with_preset(mut self, name: &str) -> Result<Self> {
        let (axis, variants) = preset(name)?;
        self.axis = axis;
        self.variants = variants;
        Ok(self)
    }

    /// Settings that define the results, one per line. The per-run seed
    /// comes from the seed list, so the base `seed` is left out.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.base.entries() {
            if k != "seed" {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "seeds = {}", seeds.join(","));
        let _ = writeln!(out, "axis = {}", self.axis);
        for v in &self.variants {
            let _ = writeln!(out, "variant {} = {}", v.name, override_text(&v.overrides));
        }
        out
    }

    pub fn hash(&self) -> String {
        short_hash(&self.canonical_text())
    }

    pub fn matrix_dir(&self) -> PathBuf {
        self.out_dir.join("runs").join(self.hash())
    }

    /// Config of one run.
    pub fn run_config(&self, variant: &Variant, seed: u64) -> Result<ExperimentConfig> {
        let mut c = self.base.clone();
        for (k, v) in &variant.overrides {
            c.set(k, v)?;
        }
        c.trainer.seed = seed;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variant", "at least one variant is required"));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("variant", "variant names must be unique"));
        }
        for v in &self.variants {
            if v.name.is_empty() || !v.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(Error::config("variant", format!("bad variant name `{}`", v.name)));
            }
            self.run_config(v, self.seeds[0])?;
        }
        self.base.validate()
    }
}

fn override_text(overrides: &[(String, String)]) -> String {
    overrides
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Applies manifest text: config keys plus `seeds = 0,1,2`, `axis = name`,
/// `preset = name` and `variant <name> = key=value; key=value`.
pub fn apply_manifest_text(manifest: &mut ExperimentManifest, text: &str) -> Result<()> {
    let mut plain = String::new();
    let mut explicit: Vec<Variant> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::parse("manifest", format!("line {}: expected key = value", n + 1)))?;
        apply_manifest_key(manifest, &mut explicit, &mut plain, k, v)?;
    }
    apply_text(&mut manifest.base, &plain)?;
    if !explicit.is_empty() {
        manifest.variants = explicit;
    }
    Ok(())
}

fn apply_manifest_key(
    manifest: &mut ExperimentManifest,
    explicit: &mut Vec<Variant>,
    plain: &mut String,
    k: &str,
    v: &str,
) -> Result<()> {
    if let Some(name) = k.strip_prefix("variant ") {
        let overrides = v
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| split_override(s).map(|(a, b)| (a.to_string(), b.to_string())))
            .collect::<Result<Vec<_>>>()?;
        explicit.push(Variant {
            name: name.trim().to_string(),
            overrides,
        });
        return Ok(());
    }
    match k {
        "seeds" => {
            manifest.seeds = v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| Error::config("seeds", format!("cannot parse `{s}`: {e}")))
                })
                .collect::<Result<_>>()?;
        }
        "axis" => manifest.axis = v.to_string(),
        "preset" => {
            let (axis, variants) = preset(v)?;
            manifest.axis = axis;
            manifest.variants = variants;
        }
        _ => {
            let _ = writeln!(plain, "{k} = {v}");
        }
    }
    Ok(())
}

/// Defaults, overlaid by the file at `path` (if any), then by `overrides`.
pub fn parse_config(path: Option<&Path>, overrides: &[String], out_dir: &Path) -> Result<ExperimentManifest> {
    let mut m = ExperimentManifest::single(ExperimentConfig::default(), out_dir);
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        apply_manifest_text(&mut m, &text)?;
    }
    let mut explicit = Vec::new();
    let mut plain = String::new();
    for o in overrides {
        let (k, v) = split_override(o)?;
        apply_manifest_key(&mut m, &mut explicit, &mut plain, k, v)?;
    }
    apply_text(&mut m.base, &plain)?;
    if !explicit.is_empty() {
        m.variants = explicit;
    }
    m.validate()?;
    Ok(m)
}

/// Per-run `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub final_metrics: MetricsRecord,
    /// Teacher evaluation with the highest mAP (earliest on ties).
    pub best_metrics: MetricsRecord,
}

/// Runs one (variant, seed) cell into `dir`.
pub fn run_single(config: &ExperimentConfig, variant: &str, dir: &Path) -> Result<RunSummary> {
    let splits = build_splits(config)?;
    let hash = config.hash();
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let outcome = run_experiment_with(&config.trainer, &splits, |rec, teacher, _| {
        teacher.save(&ckpt_dir.join(format!("teacher-{:06}.ckpt", rec.iteration)), &hash)
    })?;
    outcome.student.save(&ckpt_dir.join("student-final.ckpt"), &hash)?;
    let records = outcome.records;
    let csv = dir.join("metrics.csv");
    fs::write(&csv, metrics_csv(&records)).map_err(|e| Error::io(&csv, e))?;

    let final_metrics = records
        .last()
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("run produced no evaluations".into()))?;
    let best_metrics = records
        .iter()
        .fold(None::<&MetricsRecord>, |best, r| match best {
            Some(b) if b.map >= r.map => Some(b),
            _ => Some(r),
        })
        .cloned()
        .unwrap_or_else(|| final_metrics.clone());
    let summary = RunSummary {
        variant: variant.to_string(),
        seed: config.trainer.seed,
        config_hash: hash,
        final_metrics,
        best_metrics,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    let cfg = dir.join("config.txt");
    fs::write(&cfg, config.to_text()).map_err(|e| Error::io(&cfg, e))?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse("json", e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_stdev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub stdev: f64,
    pub values: Vec<f64>,
}

impl Aggregate {
    fn of(values: Vec<f64>) -> Self {
        let (mean, stdev) = mean_stdev(&values);
        Self { mean, stdev, values }
    }
}

/// One row of the matrix summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub final_map: Aggregate,
    pub best_map: Aggregate,
    pub final_ood_auroc: Aggregate,
    pub final_pseudo_precision: Aggregate,
    pub final_pseudo_recall: Aggregate,
    /// `(seed, error)` for runs that failed.
    pub failures: Vec<(u64, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub hash: String,
    pub axis: String,
    pub dir: PathBuf,
    pub variants: Vec<VariantSummary>,
}

impl MatrixReport {
    pub fn num_failures(&self) -> usize {
        self.variants.iter().map(|v| v.failures.len()).sum()
    }

    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == name)
    }

    /// Text table in `mean (±stdev)` form.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "matrix {} [axis: {}]", self.hash, self.axis);
        let _ = writeln!(
            out,
            "{:<22} {:>18} {:>18} {:>18} {:>18}  failed",
            "variant", "final mAP", "best mAP", "OOD AUROC", "pseudo precision"
        );
        let pm = |a: &Aggregate| format!("{:.4} (±{:.4})", a.mean, a.stdev);
        for v in &self.variants {
            let _ = writeln!(
                out,
                "{:<22} {:>18} {:>18} {:>18} {:>18}  {}",
                v.variant,
                pm(&v.final_map),
                pm(&v.best_map),
                pm(&v.final_ood_auroc),
                pm(&v.final_pseudo_precision),
                v.failures.len()
            );
        }
        out
    }
}

/// Runs every variant × seed, in parallel, then writes `summary.txt` and
/// `summary.json` in the matrix directory. Failed runs are recorded and
/// the rest continue.
pub fn run_matrix(manifest: &ExperimentManifest) -> Result<MatrixReport> {
    manifest.validate()?;
    let dir = manifest.matrix_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mtext = dir.join("manifest.txt");
    fs::write(&mtext, manifest.canonical_text()).map_err(|e| Error::io(&mtext, e))?;

    let cells: Vec<(&Variant, u64)> = manifest
        .variants
        .iter()
        .flat_map(|v| manifest.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<Result<RunSummary>> = cells
        .par_iter()
        .map(|&(v, seed)| {
            let config = manifest.run_config(v, seed)?;
            let run_dir = dir.join(&v.name).join(seed.to_string());
            run_single(&config, &v.name, &run_dir)
        })
        .collect();

    let mut by_variant: BTreeMap<&str, (Vec<RunSummary>, Vec<(u64, String)>)> = BTreeMap::new();
    for ((v, seed), r) in cells.iter().zip(results) {
        let entry = by_variant.entry(v.name.as_str()).or_default();
        match r {
            Ok(s) => entry.0.push(s),
            Err(e) => entry.1.push((*seed, e.to_string())),
        }
    }
    let variants = manifest
        .variants
        .iter()
        .map(|v| {
            let (runs, failures) = by_variant.remove(v.name.as_str()).unwrap_or_default();
            let col = |f: fn(&RunSummary) -> f64| Aggregate::of(runs.iter().map(f).collect());
            VariantSummary {
                variant: v.name.clone(),
                seeds: runs.iter().map(|r| r.seed).collect(),
                final_map: col(|r| r.final_metrics.map),
                best_map: col(|r| r.best_metrics.map),
                final_ood_auroc: col(|r| r.final_metrics.ood_auroc),
                final_pseudo_precision: col(|r| r.final_metrics.pseudo_precision),
                final_pseudo_recall: col(|r| r.final_metrics.pseudo_recall),
                failures,
            }
        })
        .collect();
    let report = MatrixReport {
        hash: manifest.hash(),
        axis: manifest.axis.clone(),
        dir: dir.clone(),
        variants,
    };
    let txt = dir.join("summary.txt");
    fs::write(&txt, report.table()).map_err(|e| Error::io(&txt, e))?;
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

/// Metrics compared between runs, by CSV column.
pub const COMPARED_METRICS: [&str; 4] = ["map", "ood_auroc", "pseudo_precision", "pseudo_recall"];

/// Final-row values of the compared metrics from a `metrics.csv`.
pub fn final_metrics_from_csv(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::parse("metrics.csv", "empty file"))?
        .split(',')
        .collect();
    let last: Vec<&str> = lines
        .last()
        .ok_or_else(|| Error::parse("metrics.csv", "no rows"))?
        .split(',')
        .collect();
    COMPARED_METRICS
        .iter()
        .map(|&m| {
            let idx = header
                .iter()
                .position(|h| *h == m)
                .ok_or_else(|| Error::parse("metrics.csv", format!("missing metric column `{m}`")))?;
            let cell = last
                .get(idx)
                .ok_or_else(|| Error::parse("metrics.csv", format!("short row, no `{m}`")))?;
            let v = cell
                .parse::<f64>()
                .map_err(|e| Error::parse("metrics.csv", format!("`{m}` = `{cell}`: {e}")))?;
            Ok((m.to_string(), v))
        })
        .collect()
}

/// `(variant, seed)` → final metrics. A directory with seed subfolders is a
/// single variant (named `""`); otherwise each subfolder is a variant.
pub fn load_run_set(dir: &Path) -> Result<BTreeMap<(String, u64), BTreeMap<String, f64>>> {
    let mut out = BTreeMap::new();
    let seeds = seed_dirs(dir)?;
    if !seeds.is_empty() {
        for (seed, p) in seeds {
            out.insert((String::new(), seed), read_final(&p)?);
        }
        return Ok(out);
    }
    for entry in list_dir(dir)? {
        if !entry.is_dir() {
            continue;
        }
        let name = entry.file_name().unwrap_or_default().to_string_lossy().to_string();
        for (seed, p) in seed_dirs(&entry)? {
            out.insert((name.clone(), seed), read_final(&p)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Incompatible(format!("no runs under {}", dir.display())));
    }
    Ok(out)
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

fn seed_dirs(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    Ok(list_dir(dir)?
        .into_iter()
        .filter(|p| p.join("metrics.csv").is_file())
        .filter_map(|p| {
            let seed = p.file_name()?.to_str()?.parse().ok()?;
            Some((seed, p))
        })
        .collect())
}

fn read_final(run_dir: &Path) -> Result<BTreeMap<String, f64>> {
    let p = run_dir.join("metrics.csv");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    final_metrics_from_csv(&text)
}

/// Two-sided sign test p-value for `wins` against `losses` (ties dropped).
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    let mut tail = 0.0;
    let mut c = 1.0f64;
    for i in 0..=k {
        if i > 0 {
            c = c * (n - i + 1) as f64 / i as f64;
        }
        tail += c;
    }
    (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub variant: String,
    pub metric: String,
    pub baseline_mean: f64,
    pub treatment_mean: f64,
    pub mean_delta: f64,
    /// `treatment - baseline` per seed.
    pub deltas: Vec<(u64, f64)>,
    pub wins: usize,
    pub losses: usize,
    pub sign_test_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<MetricDelta>,
}

impl CompareReport {
    pub fn row(&self, variant: &str, metric: &str) -> Option<&MetricDelta> {
        self.rows.iter().find(|r| r.variant == variant && r.metric == metric)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<22} {:<17} {:>10} {:>10} {:>10} {:>7} {:>7}",
            "variant", "metric", "baseline", "treatment", "delta", "wins", "p"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<22} {:<17} {:>10.4} {:>10.4} {:>+10.4} {:>7} {:>7.3}",
                if r.variant.is_empty() { "-" } else { &r.variant },
                r.metric,
                r.baseline_mean,
                r.treatment_mean,
                r.mean_delta,
                format!("{}/{}", r.wins, r.deltas.len()),
                r.sign_test_p
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

/// Per-metric, per-variant deltas of `treatment` over `baseline`, paired by
/// seed. Both sides must cover the same variants and seeds.
pub fn compare_runs(baseline_dir: &Path, treatment_dir: &Path) -> Result<CompareReport> {
    let base = load_run_set(baseline_dir)?;
    let treat = load_run_set(treatment_dir)?;
    let keys: Vec<_> = base.keys().collect();
    if keys != treat.keys().collect::<Vec<_>>() {
        let show = |m: &BTreeMap<(String, u64), _>| {
            m.keys()
                .map(|(v, s)| if v.is_empty() { s.to_string() } else { format!("{v}/{s}") })
                .collect::<Vec<_>>()
                .join(",")
        };
        return Err(Error::Incompatible(format!(
            "variant/seed axes differ: [{}] vs [{}]",
            show(&base),
            show(&treat)
        )));
    }
    let mut variants: Vec<&String> = keys.iter().map(|(v, _)| v).collect();
    variants.dedup();
    let mut rows = Vec::new();
    for variant in variants {
        for metric in COMPARED_METRICS {
            let pairs: Vec<(u64, f64, f64)> = base
                .iter()
                .filter(|((v, _), _)| v == variant)
                .map(|((v, s), m)| (*s, m[metric], treat[&(v.clone(), *s)][metric]))
                .collect();
            let deltas: Vec<(u64, f64)> = pairs.iter().map(|&(s, b, t)| (s, t - b)).collect();
            let wins = deltas.iter().filter(|d| d.1 > 0.0).count();
            let losses = deltas.iter().filter(|d| d.1 < 0.0).count();
            let n = pairs.len() as f64;
            let baseline_mean = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            let treatment_mean = pairs.iter().map(|p| p.2).sum::<f64>() / n;
            rows.push(MetricDelta {
                variant: variant.clone(),
                metric: metric.to_string(),
                baseline_mean,
                treatment_mean,
                mean_delta: treatment_mean - baseline_mean,
                deltas,
                wins,
                losses,
                sign_test_p: sign_test_p(wins, losses),
            });
        }
    }
    Ok(CompareReport { rows })
}

/// Re-scores a saved teacher on the benchmark described by `config`.
/// The checkpoint must come from a run with the same config hash.
pub fn evaluate_checkpoint(path: &Path, config: &ExperimentConfig) -> Result<MetricsRecord> {
    let (params, hash) = ModelParams::load(path)?;
    if hash != config.hash() {
        return Err(Error::Incompatible(format!(
            "checkpoint was written under config {hash}, current config is {}",
            config.hash()
        )));
    }
    let splits = build_splits(config)?;
    let iteration = iteration_from_name(path).unwrap_or(0);
    evaluate(&params, &splits, &config.trainer, iteration, LossComponents::default())
}

fn iteration_from_name(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.rsplit('-').next()?.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            let m = ExperimentManifest::single(ExperimentConfig::default(), "out")
                .with_preset(name)
                .unwrap();
            m.validate().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn hash_ignores_base_seed_but_not_seed_list() {
        let a = ExperimentManifest::single(ExperimentConfig::default(), "out");
        let mut b = a.clone();
        b.base.trainer.seed = 9;
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![0, 1];
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn manifest_text_sets_variants_and_seeds() {
        let mut m = ExperimentManifest::single(ExperimentConfig::default(), "out");
        apply_manifest_text(
            &mut m,
            "seeds = 4, 5\naxis = tau\nvariant low = tau=0.6\nvariant high = tau=0.8; lambda_ood=0\ntau_ood = 0.8\n",
        )
        .unwrap();
        assert_eq!(m.seeds, vec![4, 5]);
        assert_eq!(m.variants.len(), 2);
        assert_eq!(m.variants[1].overrides.len(), 2);
        assert_eq!(m.base.trainer.tau_ood, 0.8);
        let c = m.run_config(&m.variants[1], 5).unwrap();
        assert_eq!((c.trainer.tau, c.trainer.lambda_ood, c.trainer.seed), (0.8, 0.0, 5));
    }

    #[test]
    fn duplicate_variant_names_rejected() {
        let mut m = ExperimentManifest::single(ExperimentConfig::default(), "out");
        m.variants.push(Variant::new("base", &[]));
        assert!(m.validate().is_err());
    }

    #[test]
    fn mean_stdev_examples() {
        assert_eq!(mean_stdev(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_stdev(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(0, 0), 1.0);
        assert_eq!(sign_test_p(3, 0), 0.25);
        assert_eq!(sign_test_p(2, 1), 1.0);
        assert!((sign_test_p(10, 0) - 2.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn csv_missing_column_is_an_error() {
        let ok = "iteration,map,ood_auroc,pseudo_precision,pseudo_recall\n1,0.5,0.6,0.7,0.8\n2,0.55,0.6,0.7,0.8\n";
        let m = final_metrics_from_csv(ok).unwrap();
        assert_eq!(m["map"], 0.55);
        let bad = "iteration,map,pseudo_precision,pseudo_recall\n1,0.5,0.7,0.8\n";
        let err = final_metrics_from_csv(bad).unwrap_err().to_string();
        assert!(err.contains("ood_auroc"), "{err}");
    }

    #[test]
    fn iteration_parsed_from_checkpoint_name() {
        assert_eq!(iteration_from_name(Path::new("a/teacher-001500.ckpt")), Some(1500));
        assert_eq!(iteration_from_name(Path::new("a/student-final.ckpt")), None);
    }
}
