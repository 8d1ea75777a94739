//! Brute-force oracles and scene builders shared by the integration tests.
#![allow(dead_code)]

use ped_eval::gt_convert::{convert_scene, GtInstance, GtScene, DEFAULT_RADIUS};
use ped_eval::manifest::ImagePredictions;
use ped_eval::matching::PredInstance;
use ped_eval::perturb::Draws;
use ped_eval::raster::{BBox, BoundaryMap, ProbMap};
use ped_eval::synth::{synth_categories, synth_scene};

/// `(pred_total, pred_matched, gt_total, gt_matched)` by comparing every
/// pair of set pixels.
pub fn naive_correspond(
    pred: &BoundaryMap,
    gt: &BoundaryMap,
    max_sq: u64,
    ignore: Option<&BoundaryMap>,
) -> (u64, u64, u64, u64) {
    let keep = |x: usize, y: usize| ignore.is_none_or(|m| !m.get(x, y));
    let p: Vec<(usize, usize)> = pred.set_pixels().filter(|&(x, y)| keep(x, y)).collect();
    let g: Vec<(usize, usize)> = gt.set_pixels().filter(|&(x, y)| keep(x, y)).collect();
    let near = |a: (usize, usize), b: (usize, usize)| {
        let dx = a.0 as i64 - b.0 as i64;
        let dy = a.1 as i64 - b.1 as i64;
        (dx * dx + dy * dy) as u64 <= max_sq
    };
    let pm = p.iter().filter(|&&a| g.iter().any(|&b| near(a, b))).count();
    let gm = g.iter().filter(|&&a| p.iter().any(|&b| near(a, b))).count();
    (p.len() as u64, pm as u64, g.len() as u64, gm as u64)
}

pub fn f_from(c: (u64, u64, u64, u64)) -> f64 {
    let p = if c.0 == 0 {
        0.0
    } else {
        c.1 as f64 / c.0 as f64
    };
    let r = if c.2 == 0 {
        0.0
    } else {
        c.3 as f64 / c.2 as f64
    };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Maximum over `grid` of the F-measure of `values >= theta` against `gt`.
pub fn naive_max_f(
    values: &ProbMap,
    gt: &BoundaryMap,
    grid: &[f64],
    max_sq: u64,
    ignore: Option<&BoundaryMap>,
) -> f64 {
    grid.iter()
        .map(|&t| {
            let bin = BoundaryMap::from_fn(gt.width(), gt.height(), |x, y| {
                f64::from(values.get(0, x, y)) >= t
            });
            f_from(naive_correspond(&bin, gt, max_sq, ignore))
        })
        .fold(0.0, f64::max)
}

pub fn random_map(rng: &mut Draws, w: usize, h: usize, density: f64) -> BoundaryMap {
    BoundaryMap::from_fn(w, h, |_, _| rng.unit() < density)
}

fn random_box(rng: &mut Draws, w: usize, h: usize, min: usize, max: usize) -> BBox {
    let bw = min + rng.below(max - min + 1);
    let bh = min + rng.below(max - min + 1);
    let x0 = rng.below(w - bw + 1);
    let y0 = rng.below(h - bh + 1);
    BBox::new(x0, y0, x0 + bw, y0 + bh).unwrap()
}

fn shifted(b: BBox, dx: i64, dy: i64, w: usize, h: usize) -> BBox {
    let x0 = (b.x0 as i64 + dx).clamp(0, (w - b.width()) as i64) as usize;
    let y0 = (b.y0 as i64 + dy).clamp(0, (h - b.height()) as i64) as usize;
    BBox::new(x0, y0, x0 + b.width(), y0 + b.height()).unwrap()
}

/// Scene of one category for matching tests: up to `max_gt` ground truths
/// with outline edges, up to `max_pred` predictions (most of them near a
/// ground truth) with graded random crops, and sometimes an ignore patch.
pub fn random_match_scene(
    rng: &mut Draws,
    w: usize,
    h: usize,
    max_gt: usize,
    max_pred: usize,
) -> (Vec<GtInstance>, Vec<PredInstance>, Option<BoundaryMap>) {
    let n_gt = rng.below(max_gt + 1);
    let n_pred = rng.below(max_pred + 1);
    let levels = [0.0f32, 0.25, 0.5, 0.75, 1.0];
    let gts: Vec<GtInstance> = (0..n_gt)
        .map(|i| {
            let b = random_box(rng, w, h, 6, 16);
            let edges = BoundaryMap::from_fn(w, h, |x, y| {
                b.contains(x, y)
                    && (x == b.x0 + 1 || y == b.y0 + 1 || x + 2 == b.x1 || y + 2 == b.y1)
            });
            GtInstance {
                id: i as u16 + 1,
                category: 11,
                bbox: b,
                edges,
            }
        })
        .collect();
    let preds = (0..n_pred)
        .map(|_| {
            let b = if !gts.is_empty() && rng.unit() < 0.8 {
                let g = gts[rng.below(gts.len())].bbox;
                let dx = rng.below(5) as i64 - 2;
                let dy = rng.below(5) as i64 - 2;
                shifted(g, dx, dy, w, h)
            } else {
                random_box(rng, w, h, 6, 16)
            };
            let on = 0.5 + 0.5 * rng.unit();
            let vals: Vec<f32> = (0..b.area())
                .map(|i| {
                    let (x, y) = (i % b.width(), i / b.width());
                    let border = x == 1 || y == 1 || x + 2 == b.width() || y + 2 == b.height();
                    if border && rng.unit() < on {
                        levels[2 + rng.below(3)]
                    } else if rng.unit() < 0.1 {
                        levels[rng.below(3)]
                    } else {
                        0.0
                    }
                })
                .collect();
            let score = (rng.below(4) as f64) / 4.0 + 0.1;
            PredInstance::new(
                11,
                score,
                b,
                ProbMap::new(1, b.width(), b.height(), vals).unwrap(),
            )
            .unwrap()
        })
        .collect();
    let ignore = if rng.unit() < 0.3 {
        let b = random_box(rng, w, h, 3, 8);
        Some(BoundaryMap::from_fn(w, h, |x, y| b.contains(x, y)))
    } else {
        None
    };
    (gts, preds, ignore)
}

/// Converted ground truth of synthetic scene `index`.
pub fn synth_gt(seed: u64, index: u64, w: usize, h: usize) -> GtScene {
    let s = synth_scene(seed, index, w, h);
    convert_scene(
        &s.labels,
        &s.instances,
        &s.manifest,
        &synth_categories(),
        DEFAULT_RADIUS,
    )
    .unwrap()
}

/// Ground truth copied into prediction form.
pub fn perfect_predictions(scene: &GtScene) -> ImagePredictions {
    ImagePredictions {
        semantic: Some(ProbMap::from_boundaries(&scene.semantic)),
        instances: scene
            .instances
            .iter()
            .map(|g| {
                PredInstance::new(
                    g.category,
                    1.0,
                    g.bbox,
                    ProbMap::from_boundary(&g.edges.crop(g.bbox)),
                )
                .unwrap()
            })
            .collect(),
    }
}
