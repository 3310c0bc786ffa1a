//! Axis-aligned boxes, IoU, greedy NMS and IoU-band proposal labeling.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Closed axis-aligned rectangle in continuous scene coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box from two corners in any order.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x_min: x0.min(x1),
            y_min: y0.min(y1),
            x_max: x0.max(x1),
            y_max: y0.max(y1),
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn is_valid(&self) -> bool {
        self.x_min <= self.x_max
            && self.y_min <= self.y_max
            && [self.x_min, self.y_min, self.x_max, self.y_max]
                .iter()
                .all(|v| v.is_finite())
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clips to the unit scene extent `[0,1]²`.
    pub fn clip_unit(&self) -> BBox {
        let c = |v: f64| v.clamp(0.0, 1.0);
        BBox::new(c(self.x_min), c(self.y_min), c(self.x_max), c(self.y_max))
    }

    /// Scales about the origin by `s` then translates by `(tx, ty)`.
    pub fn scale_translate(&self, s: f64, tx: f64, ty: f64) -> BBox {
        BBox::new(
            s * self.x_min + tx,
            s * self.y_min + ty,
            s * self.x_max + tx,
            s * self.y_max + ty,
        )
    }

    pub fn within_unit(&self) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= 1.0 && self.y_max <= 1.0
    }
}

/// Intersection over union. Zero when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Greedy non-maximum suppression.
///
/// Visits detections by descending score (ties by input index) and drops any
/// detection whose IoU with an already kept one exceeds `iou_threshold`.
/// Returns kept indices in visiting order.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "one score per box");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| iou(&boxes[k], &boxes[i]) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelKind {
    /// ID class index in `[0, N)`.
    Foreground(usize),
    Background,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProposalLabel {
    pub kind: LabelKind,
    /// Index into the ground-truth list; present iff `kind` is foreground.
    pub matched_gt: Option<usize>,
}

impl ProposalLabel {
    pub fn is_foreground(&self) -> bool {
        matches!(self.kind, LabelKind::Foreground(_))
    }
}

/// Highest IoU against `gt` and the lowest index attaining it.
pub fn best_match<'a, I>(proposal: &BBox, gt: I) -> Option<(usize, f64)>
where
    I: IntoIterator<Item = &'a BBox>,
{
    let mut best: Option<(usize, f64)> = None;
    for (idx, g) in gt.into_iter().enumerate() {
        let v = iou(proposal, g);
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((idx, v)),
        }
    }
    best
}

/// Labels proposals by their best IoU with ground truth.
///
/// Strictly above `fg_iou` is foreground (class of the best match), strictly
/// below `bg_iou` is background, anything in between (boundaries included) is
/// ignored. With no ground truth every proposal is background.
pub fn assign_proposal_labels(
    proposals: &[BBox],
    gt: &[(BBox, usize)],
    fg_iou: f64,
    bg_iou: f64,
) -> Vec<ProposalLabel> {
    debug_assert!(fg_iou > bg_iou);
    proposals
        .iter()
        .map(|p| match best_match(p, gt.iter().map(|(b, _)| b)) {
            None => ProposalLabel {
                kind: LabelKind::Background,
                matched_gt: None,
            },
            Some((idx, m)) if m > fg_iou => ProposalLabel {
                kind: LabelKind::Foreground(gt[idx].1),
                matched_gt: Some(idx),
            },
            Some((_, m)) if m < bg_iou => ProposalLabel {
                kind: LabelKind::Background,
                matched_gt: None,
            },
            Some(_) => ProposalLabel {
                kind: LabelKind::Ignored,
                matched_gt: None,
            },
        })
        .collect()
}

/// Center/log-size box offsets relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDelta {
    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            dx: v[0],
            dy: v[1],
            dw: v[2],
            dh: v[3],
        }
    }
}

// Keeps log-size offsets finite for degenerate boxes.
const MIN_SIDE: f64 = 1e-6;
// exp() guard, same role as detectron2's scale clamp.
const MAX_LOG_SCALE: f64 = 4.0;

/// Offsets that take `anchor` onto `target`.
pub fn encode_delta(anchor: &BBox, target: &BBox) -> BoxDelta {
    let (ax, ay) = anchor.center();
    let (tx, ty) = target.center();
    let aw = anchor.width().max(MIN_SIDE);
    let ah = anchor.height().max(MIN_SIDE);
    let tw = target.width().max(MIN_SIDE);
    let th = target.height().max(MIN_SIDE);
    BoxDelta {
        dx: (tx - ax) / aw,
        dy: (ty - ay) / ah,
        dw: (tw / aw).ln(),
        dh: (th / ah).ln(),
    }
}

/// Applies offsets to `anchor`. The result is not clipped.
pub fn decode_delta(anchor: &BBox, delta: &BoxDelta) -> BBox {
    let (ax, ay) = anchor.center();
    let aw = anchor.width();
    let ah = anchor.height();
    let cx = ax + delta.dx * aw;
    let cy = ay + delta.dy * ah;
    let w = aw * delta.dw.min(MAX_LOG_SCALE).exp();
    let h = ah * delta.dh.min(MAX_LOG_SCALE).exp();
    BBox::from_center(cx, cy, w, h)
}
