//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ossod::detector::{Linear, ModelParams};
use ossod::eval::{GtBox, ScoredBox};
use ossod::geometry::BBox;
use ossod::rng::{stream, StreamRng};
use rand::Rng;

pub fn rng(seed: u64) -> StreamRng {
    stream(seed, "tests")
}

pub fn gauss_vec(rng: &mut StreamRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

pub fn random_linear(rng: &mut StreamRng, rows: usize, cols: usize, scale: f64) -> Linear {
    Linear {
        rows,
        cols,
        weight: gauss_vec(rng, rows * cols, scale),
        bias: gauss_vec(rng, rows, scale),
    }
}

pub fn random_params(rng: &mut StreamRng, num_id: usize, d: usize, scale: f64) -> ModelParams {
    let mut p = ModelParams::zeros(num_id, d);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = scale * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
    p
}

/// `W x + b`, written out longhand.
pub fn affine(l: &Linear, x: &[f64]) -> Vec<f64> {
    (0..l.rows)
        .map(|r| {
            let mut s = l.bias[r];
            for c in 0..l.cols {
                s += l.weight[r * l.cols + c] * x[c];
            }
            s
        })
        .collect()
}

/// Positive probability of each OVA head, via the logistic of the logit gap.
pub fn ova_probs(l: &Linear, x: &[f64]) -> Vec<f64> {
    let z = affine(l, x);
    z.chunks(2).map(|h| 1.0 / (1.0 + (h[1] - h[0]).exp())).collect()
}

/// OVA loss by enumerating every negative head and keeping the smallest
/// `log(1 - p_j)`.
pub fn ova_loss_brute(l: &Linear, x: &[f64], y: usize) -> f64 {
    let z = affine(l, x);
    // log of the logistic, stable on both sides
    let log_sigmoid = |t: f64| if t >= 0.0 { -(-t).exp().ln_1p() } else { t - t.exp().ln_1p() };
    let log_pos = |j: usize| log_sigmoid(z[2 * j] - z[2 * j + 1]);
    let log_neg = |j: usize| log_sigmoid(z[2 * j + 1] - z[2 * j]);
    let heads = z.len() / 2;
    let mut min_neg = f64::INFINITY;
    for j in 0..heads {
        if j != y {
            min_neg = min_neg.min(log_neg(j));
        }
    }
    -log_pos(y) - min_neg
}

/// Central finite-difference gradient of `f` over every entry of `params`'
/// tensors, in `tensors()` order.
pub fn fd_grad_model(params: &ModelParams, h: f64, f: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut p = params.clone();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (ti, &n) in sizes.iter().enumerate() {
        for k in 0..n {
            let orig = p.tensors()[ti][k];
            p.tensors_mut()[ti][k] = orig + h;
            let up = f(&p);
            p.tensors_mut()[ti][k] = orig - h;
            let down = f(&p);
            p.tensors_mut()[ti][k] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

pub fn fd_grad_linear(l: &Linear, h: f64, f: impl Fn(&Linear) -> f64) -> Vec<f64> {
    let mut p = l.clone();
    let mut out = Vec::new();
    for k in 0..p.weight.len() {
        let orig = p.weight[k];
        p.weight[k] = orig + h;
        let up = f(&p);
        p.weight[k] = orig - h;
        let down = f(&p);
        p.weight[k] = orig;
        out.push((up - down) / (2.0 * h));
    }
    for k in 0..p.bias.len() {
        let orig = p.bias[k];
        p.bias[k] = orig + h;
        let up = f(&p);
        p.bias[k] = orig - h;
        let down = f(&p);
        p.bias[k] = orig;
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over paired entries.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let union = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
    if union > 0.0 { inter / union } else { 0.0 }
}

/// AP by enumerating every score cut-off: precision and recall of each
/// top-k prefix, then the exact area under the interpolated step curve.
pub fn ap_brute(dets: &[ScoredBox], gt: &[GtBox], thr: f64) -> f64 {
    if gt.is_empty() || dets.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut points = Vec::new();
    for k in 1..=order.len() {
        // re-run greedy matching on the prefix from scratch
        let mut used = vec![false; gt.len()];
        let mut tp = 0;
        for &i in &order[..k] {
            let mut best: Option<(usize, f64)> = None;
            for (g, gb) in gt.iter().enumerate() {
                if used[g] || gb.scene != dets[i].scene {
                    continue;
                }
                let v = box_iou(&dets[i].bbox, &gb.bbox);
                if v >= thr && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / gt.len() as f64, tp as f64 / k as f64));
    }
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).collect();
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut area = 0.0;
    for w in levels.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        // interpolated precision on (lo, hi]: best precision at recall >= hi
        let p = points
            .iter()
            .filter(|q| q.0 >= hi)
            .map(|q| q.1)
            .fold(0.0, f64::max);
        area += (hi - lo) * p;
    }
    area
}
