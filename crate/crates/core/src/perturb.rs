//! Synthetic degradations of ground truth, used to produce predictions whose
//! effect on the metrics is known in direction.
//!
//! Random draws come from ChaCha8 seeded with the 64-bit seed written
//! little-endian into the first 8 bytes of the 32-byte key (remaining bytes
//! zero). Each image uses its own stream: `2 * index` for semantic maps and
//! `2 * index + 1` for instances. A uniform draw in `[0, 1)` is
//! `(next_u64 >> 11) * 2^-53`; an integer below `n` is `floor(u * n)`.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gt_convert::GtInstance;
use crate::io;
use crate::manifest::{
    DatasetManifest, PredEntry, PredImage, PredictionManifest, MANIFEST_VERSION,
    PREDICTION_MANIFEST_NAME,
};
use crate::matching::PredInstance;
use crate::raster::{BBox, BoundaryMap, ProbMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreDistribution {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PerturbOp {
    /// Grey-level dilation with a square of the given radius.
    Dilate {
        radius: usize,
    },
    /// Translation; pixels moved off the canvas are lost.
    Shift {
        dx: i64,
        dy: i64,
    },
    /// Removes `round(fraction * n)` instances chosen at random.
    DropInstances {
        fraction: f64,
    },
    /// Moves each instance box (with its crop) by up to `max_px` per axis.
    JitterBoxes {
        max_px: usize,
    },
    /// Replaces each value `v` with `1 - v` at the given rate.
    FlipNoise {
        rate: f64,
    },
    ScoreAssign {
        distribution: ScoreDistribution,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub seed: u64,
    pub ops: Vec<PerturbOp>,
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Param(format!("{name} {v} outside [0, 1]")))
            }
        };
        for op in &self.ops {
            match *op {
                PerturbOp::DropInstances { fraction } => unit("drop fraction", fraction)?,
                PerturbOp::FlipNoise { rate } => unit("flip rate", rate)?,
                PerturbOp::ScoreAssign {
                    distribution: ScoreDistribution::Constant { value },
                } => unit("score", value)?,
                PerturbOp::ScoreAssign {
                    distribution: ScoreDistribution::Uniform { low, high },
                } => {
                    unit("score", low)?;
                    unit("score", high)?;
                    if low > high {
                        return Err(Error::Param(format!("score range {low} > {high}")));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Portable random source, see the module docs.
pub struct Draws(ChaCha8Rng);

impl Draws {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        Self(rng)
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.unit() * n as f64) as usize).min(n.saturating_sub(1))
    }
}

/// Square max filter on one plane.
fn dilate_plane(values: &mut [f32], w: usize, h: usize, r: usize) {
    if r == 0 || w == 0 || h == 0 {
        return;
    }
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let row = &values[y * w..(y + 1) * w];
            tmp[y * w + x] = row[x.saturating_sub(r)..(x + r + 1).min(w)]
                .iter()
                .fold(0.0f32, |a, &b| a.max(b));
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut m = 0.0f32;
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                m = m.max(tmp[yy * w + x]);
            }
            values[y * w + x] = m;
        }
    }
}

fn shift_plane(values: &mut [f32], w: usize, h: usize, dx: i64, dy: i64) {
    let src = values.to_vec();
    values.iter_mut().for_each(|v| *v = 0.0);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (nx, ny) = (x + dx, y + dy);
            if (0..w as i64).contains(&nx) && (0..h as i64).contains(&ny) {
                values[ny as usize * w + nx as usize] = src[y as usize * w + x as usize];
            }
        }
    }
}

fn flip_plane(values: &mut [f32], rate: f64, rng: &mut Draws) {
    if rate == 0.0 {
        return;
    }
    for v in values.iter_mut() {
        if rng.unit() < rate {
            *v = 1.0 - *v;
        }
    }
}

/// Degraded semantic prediction from per-category ground truth. Instance-only
/// operations are skipped.
pub fn perturb_semantic(gt: &[BoundaryMap], spec: &PerturbSpec, stream: u64) -> Result<ProbMap> {
    spec.validate()?;
    let (w, h) = gt.first().map_or((0, 0), |m| (m.width(), m.height()));
    if gt.iter().any(|m| m.width() != w || m.height() != h) {
        return Err(Error::Shape("semantic channels differ in size".into()));
    }
    let mut out = if gt.is_empty() {
        ProbMap::zeros(0, 0, 0)
    } else {
        ProbMap::from_boundaries(gt)
    };
    let mut rng = Draws::new(spec.seed, stream);
    for op in &spec.ops {
        for k in 0..out.channels() {
            let plane = out.channel_mut(k);
            match *op {
                PerturbOp::Dilate { radius } => dilate_plane(plane, w, h, radius),
                PerturbOp::Shift { dx, dy } => shift_plane(plane, w, h, dx, dy),
                PerturbOp::FlipNoise { rate } => flip_plane(plane, rate, &mut rng),
                PerturbOp::DropInstances { .. }
                | PerturbOp::JitterBoxes { .. }
                | PerturbOp::ScoreAssign { .. } => {}
            }
        }
    }
    Ok(out)
}

/// Moves an instance by `(dx, dy)`, clipping box and crop to the canvas.
/// Returns `None` when nothing of the box stays on the canvas.
fn translate(p: &PredInstance, dx: i64, dy: i64, w: usize, h: usize) -> Option<PredInstance> {
    let nx0 = p.bbox.x0 as i64 + dx;
    let ny0 = p.bbox.y0 as i64 + dy;
    let nx1 = p.bbox.x1 as i64 + dx;
    let ny1 = p.bbox.y1 as i64 + dy;
    let cx0 = nx0.max(0);
    let cy0 = ny0.max(0);
    let cx1 = nx1.min(w as i64);
    let cy1 = ny1.min(h as i64);
    if cx0 >= cx1 || cy0 >= cy1 {
        return None;
    }
    let bbox = BBox::new(cx0 as usize, cy0 as usize, cx1 as usize, cy1 as usize).ok()?;
    // the part of the old crop that is still visible
    let inner = BBox::new(
        (cx0 - nx0) as usize,
        (cy0 - ny0) as usize,
        (cx1 - nx0) as usize,
        (cy1 - ny0) as usize,
    )
    .ok()?;
    Some(PredInstance {
        category: p.category,
        score: p.score,
        bbox,
        edges: p.edges.crop(0, inner),
    })
}

/// Predictions copied from ground-truth instances (score 1, crop = GT edges
/// inside the GT box), then degraded by `spec`.
pub fn perturb_instances(
    gt: &[GtInstance],
    width: usize,
    height: usize,
    spec: &PerturbSpec,
    stream: u64,
) -> Result<Vec<PredInstance>> {
    spec.validate()?;
    let mut preds: Vec<PredInstance> = gt
        .iter()
        .map(|g| {
            PredInstance::new(
                g.category,
                1.0,
                g.bbox,
                ProbMap::from_boundary(&g.edges.crop(g.bbox)),
            )
        })
        .collect::<Result<_>>()?;
    let mut rng = Draws::new(spec.seed, stream);
    for op in &spec.ops {
        match *op {
            PerturbOp::Dilate { radius } => {
                for p in &mut preds {
                    let (w, h) = (p.bbox.width(), p.bbox.height());
                    dilate_plane(p.edges.values_mut(), w, h, radius);
                }
            }
            PerturbOp::Shift { dx, dy } => {
                preds = preds
                    .iter()
                    .filter_map(|p| translate(p, dx, dy, width, height))
                    .collect();
            }
            PerturbOp::DropInstances { fraction } => {
                let n = preds.len();
                let drop = ((fraction * n as f64).round() as usize).min(n);
                let mut order: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    let j = rng.below(i + 1);
                    order.swap(i, j);
                }
                let mut keep = vec![true; n];
                for &i in &order[..drop] {
                    keep[i] = false;
                }
                let mut it = keep.into_iter();
                preds.retain(|_| it.next().unwrap_or(false));
            }
            PerturbOp::JitterBoxes { max_px } => {
                let span = 2 * max_px + 1;
                preds = preds
                    .iter()
                    .filter_map(|p| {
                        let dx = rng.below(span) as i64 - max_px as i64;
                        let dy = rng.below(span) as i64 - max_px as i64;
                        translate(p, dx, dy, width, height)
                    })
                    .collect();
            }
            PerturbOp::FlipNoise { rate } => {
                for p in &mut preds {
                    flip_plane(p.edges.values_mut(), rate, &mut rng);
                }
            }
            PerturbOp::ScoreAssign { distribution } => {
                for p in &mut preds {
                    p.score = match distribution {
                        ScoreDistribution::Constant { value } => value,
                        ScoreDistribution::Uniform { low, high } => low + (high - low) * rng.unit(),
                    };
                }
            }
        }
    }
    Ok(preds)
}

/// Writes perturbed predictions for every image of a converted dataset into
/// `out_dir`, together with `predictions.json`.
pub fn perturb_dataset(
    gt_manifest: &Path,
    out_dir: &Path,
    spec: &PerturbSpec,
) -> Result<PredictionManifest> {
    spec.validate()?;
    let (gt, root) = DatasetManifest::load(gt_manifest)?;
    let images = gt
        .images
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let scene = gt.load_scene(&root, entry)?;
            let i = i as u64;
            let sem = perturb_semantic(&scene.semantic, spec, 2 * i)?;
            let sem = if sem.channels() == 0 {
                ProbMap::zeros(0, entry.width, entry.height)
            } else {
                sem
            };
            let semantic = format!("{}/semantic.pedp", entry.id);
            io::write_prob_map(&out_dir.join(&semantic), &sem)?;
            let preds =
                perturb_instances(&scene.instances, entry.width, entry.height, spec, 2 * i + 1)?;
            let mut instances = Vec::with_capacity(preds.len());
            for (k, p) in preds.into_iter().enumerate() {
                let edges = format!("{}/inst_{k}.pedp", entry.id);
                io::write_prob_map(&out_dir.join(&edges), &p.edges)?;
                instances.push(PredEntry {
                    category: p.category,
                    score: p.score,
                    bbox: p.bbox,
                    edges,
                });
            }
            Ok(PredImage {
                id: entry.id.clone(),
                semantic: Some(semantic),
                instances,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = PredictionManifest {
        version: MANIFEST_VERSION,
        images,
    };
    manifest.write(&out_dir.join(PREDICTION_MANIFEST_NAME))?;
    Ok(manifest)
}
