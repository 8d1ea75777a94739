//! Coarse-to-fine matching of predicted instances to ground-truth instances
//! of one category in one image.
//!
//! Coarse step: every ground truth keeps at most `t` predictions whose box IoU
//! is strictly above the gate, best IoU first. Ground truths left without a
//! candidate are false negatives. Fine step: each candidate pair is scored by
//! the maximum boundary F-measure over the threshold grid, and pairs are
//! accepted greedily by descending score so that every ground truth and every
//! prediction is used at most once.

use crate::boundary::{sweep_counts, MatchRadius, PrAccumulator, ThresholdGrid};
use crate::error::{Error, Result};
use crate::gt_convert::GtInstance;
use crate::raster::{bbox_of, BBox, BoundaryMap, ProbMap};

pub const DEFAULT_IOU_MIN: f64 = 0.5;
pub const DEFAULT_TOP_T: usize = 2;

/// A predicted instance: box, detection score and an edge crop sized to the
/// box.
#[derive(Debug, Clone, PartialEq)]
pub struct PredInstance {
    pub category: u16,
    pub score: f64,
    pub bbox: BBox,
    pub edges: ProbMap,
}

impl PredInstance {
    pub fn new(category: u16, score: f64, bbox: BBox, edges: ProbMap) -> Result<Self> {
        if edges.channels() != 1 || edges.width() != bbox.width() || edges.height() != bbox.height()
        {
            return Err(Error::Shape(format!(
                "edge crop {}x{}x{} does not fit box {bbox:?}",
                edges.channels(),
                edges.height(),
                edges.width()
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Param(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            category,
            score,
            bbox,
            edges,
        })
    }
}

/// Intersection over union of two half-open boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub pred: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMatch {
    /// Per ground truth, candidates in rank order.
    pub candidates: Vec<Vec<Candidate>>,
    /// Ground truths without any candidate, ascending.
    pub false_neg: Vec<usize>,
}

/// IoU-gated top-`t` candidate selection. Ranking is IoU descending, then
/// score descending, then input order.
pub fn coarse_match(gts: &[BBox], preds: &[(BBox, f64)], iou_min: f64, t: usize) -> CoarseMatch {
    let mut candidates = Vec::with_capacity(gts.len());
    let mut false_neg = Vec::new();
    for (gi, g) in gts.iter().enumerate() {
        let mut c: Vec<Candidate> = preds
            .iter()
            .enumerate()
            .map(|(pi, (b, _))| Candidate {
                pred: pi,
                iou: iou(g, b),
            })
            .filter(|c| c.iou > iou_min)
            .collect();
        c.sort_by(|a, b| {
            b.iou
                .total_cmp(&a.iou)
                .then(preds[b.pred].1.total_cmp(&preds[a.pred].1))
                .then(a.pred.cmp(&b.pred))
        });
        c.truncate(t);
        if c.is_empty() {
            false_neg.push(gi);
        }
        candidates.push(c);
    }
    CoarseMatch {
        candidates,
        false_neg,
    }
}

/// A scored candidate pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub gt: usize,
    pub pred: usize,
    pub pair_mf: f64,
    pub iou: f64,
}

/// Greedy one-to-one assignment by descending `pair_mf`; ties go to the higher
/// IoU, then to the earlier entry of `pairs`. Returns indices into `pairs`.
pub fn assign_greedy(pairs: &[PairScore]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&pairs[a], &pairs[b]);
        pb.pair_mf
            .total_cmp(&pa.pair_mf)
            .then(pb.iou.total_cmp(&pa.iou))
            .then(a.cmp(&b))
    });
    let mut gt_used = Vec::new();
    let mut pred_used = Vec::new();
    let mut chosen = Vec::new();
    for i in order {
        let p = &pairs[i];
        if gt_used.contains(&p.gt) || pred_used.contains(&p.pred) {
            continue;
        }
        gt_used.push(p.gt);
        pred_used.push(p.pred);
        chosen.push(i);
    }
    chosen
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpPair {
    pub gt: usize,
    pub pred: usize,
    pub pair_mf: f64,
    pub iou: f64,
    /// Per-threshold counts of the embedded prediction against the GT edges.
    pub acc: PrAccumulator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Sorted by ground-truth index.
    pub tp_pairs: Vec<TpPair>,
    pub false_pos: Vec<usize>,
    pub false_neg: Vec<usize>,
}

/// Evaluation settings shared by the pairwise F-measure.
#[derive(Debug, Clone, Copy)]
pub struct PairContext<'a> {
    pub width: usize,
    pub height: usize,
    pub grid: &'a ThresholdGrid,
    pub tol: MatchRadius,
    pub ignore: Option<&'a BoundaryMap>,
}

/// Per-threshold counts of `pred` embedded on the canvas against `gt_edges`.
///
/// Only the hull of the prediction box and the GT edge support is scanned:
/// both maps are empty outside it, so the counts equal those of the full
/// canvas.
pub fn pair_accumulator(
    gt_edges: &BoundaryMap,
    gt_support: Option<BBox>,
    pred: &PredInstance,
    ctx: &PairContext<'_>,
) -> Result<PrAccumulator> {
    let mut acc = PrAccumulator::new(ctx.grid);
    if !pred.bbox.fits(ctx.width, ctx.height) {
        return Err(Error::Shape(format!(
            "prediction box {:?} exceeds {}x{} canvas",
            pred.bbox, ctx.width, ctx.height
        )));
    }
    let Some(support) = gt_support else {
        return Ok(acc);
    };
    let rect = support.hull(&pred.bbox);
    let mut local = vec![0.0f32; rect.area()];
    let rw = rect.width();
    for (row, y) in (pred.bbox.y0..pred.bbox.y1).enumerate() {
        let src = &pred.edges.values()[row * pred.bbox.width()..(row + 1) * pred.bbox.width()];
        let off = (y - rect.y0) * rw + (pred.bbox.x0 - rect.x0);
        local[off..off + src.len()].copy_from_slice(src);
    }
    let gt_local = gt_edges.crop(rect);
    let ig_local = ctx.ignore.map(|m| m.crop(rect));
    let counts = sweep_counts(&local, &gt_local, ctx.tol, ig_local.as_ref(), ctx.grid)?;
    if counts.first().is_some_and(|c| c.gt_total > 0) {
        acc.add_counts(&counts)?;
    }
    Ok(acc)
}

/// Scores every coarse candidate and assigns greedily.
pub fn fine_match(
    coarse: &CoarseMatch,
    gts: &[GtInstance],
    preds: &[PredInstance],
    ctx: &PairContext<'_>,
) -> Result<MatchResult> {
    if coarse.candidates.len() != gts.len() {
        return Err(Error::Shape(format!(
            "{} candidate lists for {} ground truths",
            coarse.candidates.len(),
            gts.len()
        )));
    }
    let mut pairs = Vec::new();
    let mut accs = Vec::new();
    for (gi, (gt, cands)) in gts.iter().zip(&coarse.candidates).enumerate() {
        if cands.is_empty() {
            continue;
        }
        if gt.edges.width() != ctx.width || gt.edges.height() != ctx.height {
            return Err(Error::Shape(format!(
                "ground truth {} is {}x{}, canvas {}x{}",
                gt.id,
                gt.edges.width(),
                gt.edges.height(),
                ctx.width,
                ctx.height
            )));
        }
        let support = bbox_of(&gt.edges).ok();
        for c in cands {
            let acc = pair_accumulator(&gt.edges, support, &preds[c.pred], ctx)?;
            pairs.push(PairScore {
                gt: gi,
                pred: c.pred,
                pair_mf: acc.mf_ods().f,
                iou: c.iou,
            });
            accs.push(acc);
        }
    }

    let chosen = assign_greedy(&pairs);
    let mut tp_pairs: Vec<TpPair> = chosen
        .iter()
        .map(|&i| TpPair {
            gt: pairs[i].gt,
            pred: pairs[i].pred,
            pair_mf: pairs[i].pair_mf,
            iou: pairs[i].iou,
            acc: accs[i].clone(),
        })
        .collect();
    tp_pairs.sort_by_key(|p| p.gt);

    let mut gt_hit = vec![false; gts.len()];
    let mut pred_hit = vec![false; preds.len()];
    for p in &tp_pairs {
        gt_hit[p.gt] = true;
        pred_hit[p.pred] = true;
    }
    Ok(MatchResult {
        tp_pairs,
        false_pos: (0..preds.len()).filter(|&i| !pred_hit[i]).collect(),
        false_neg: (0..gts.len()).filter(|&i| !gt_hit[i]).collect(),
    })
}

/// Coarse then fine matching for one category of one image.
pub fn match_instances(
    gts: &[GtInstance],
    preds: &[PredInstance],
    iou_min: f64,
    top_t: usize,
    ctx: &PairContext<'_>,
) -> Result<MatchResult> {
    let gt_boxes: Vec<BBox> = gts.iter().map(|g| g.bbox).collect();
    let pred_boxes: Vec<(BBox, f64)> = preds.iter().map(|p| (p.bbox, p.score)).collect();
    let coarse = coarse_match(&gt_boxes, &pred_boxes, iou_min, top_t);
    fine_match(&coarse, gts, preds, ctx)
}
