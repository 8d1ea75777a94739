//! Dataset evaluation: per-image tallies computed in parallel, then merged in
//! image order so results do not depend on the thread count.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::boundary::{accumulate_channel, PrAccumulator, ThresholdGrid, Tolerance};
use crate::error::{Error, Result};
use crate::gt_convert::GtScene;
use crate::io::{self, RangePolicy};
use crate::manifest::{DatasetManifest, ImagePredictions, PredFormat, PredictionManifest};
use crate::matching::{match_instances, PairContext, DEFAULT_IOU_MIN, DEFAULT_TOP_T};
use crate::metric::{
    aggregate, f2_instance, f2_stuff, ConfigEcho, InstanceEdgeMode, InstanceTally, Report,
};
use crate::raster::{CategoryKind, CategorySet};

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub tolerance: Tolerance,
    pub grid: ThresholdGrid,
    pub iou_min: f64,
    pub top_t: usize,
    /// Instance predictions scoring below this are dropped before matching.
    pub min_score: f64,
    pub instance_edge_mode: InstanceEdgeMode,
    pub range: RangePolicy,
    pub format: PredFormat,
    /// Restricts scoring to these category ids.
    pub only: Option<Vec<u16>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tolerance: Tolerance::default(),
            grid: ThresholdGrid::default(),
            iou_min: DEFAULT_IOU_MIN,
            top_t: DEFAULT_TOP_T,
            min_score: 0.0,
            instance_edge_mode: InstanceEdgeMode::default(),
            range: RangePolicy::default(),
            format: PredFormat::default(),
            only: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_min >= 0.0 && self.iou_min < 1.0) {
            return Err(Error::Param(format!(
                "IoU gate {} outside [0, 1)",
                self.iou_min
            )));
        }
        if self.top_t == 0 {
            return Err(Error::Param("top-t must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(Error::Param(format!(
                "minimum score {} outside [0, 1]",
                self.min_score
            )));
        }
        Ok(())
    }

    fn echo(&self, radius: Option<usize>) -> ConfigEcho {
        ConfigEcho {
            tolerance: self.tolerance.to_string(),
            grid: self.grid.thresholds().to_vec(),
            radius,
            top_t: self.top_t,
            iou_min: self.iou_min,
            min_score: self.min_score,
            instance_edge_mode: self.instance_edge_mode,
        }
    }
}

/// Running totals of one category.
#[derive(Debug, Clone, PartialEq)]
pub enum CategoryTally {
    Stuff(PrAccumulator),
    Instance(InstanceTally),
}

impl CategoryTally {
    fn new(kind: CategoryKind, grid: &ThresholdGrid) -> Self {
        match kind {
            CategoryKind::Stuff => CategoryTally::Stuff(PrAccumulator::new(grid)),
            CategoryKind::Instance => {
                CategoryTally::Instance(InstanceTally::new(PrAccumulator::new(grid)))
            }
        }
    }

    fn merge(&mut self, other: &CategoryTally) -> Result<()> {
        match (self, other) {
            (CategoryTally::Stuff(a), CategoryTally::Stuff(b)) => a.merge(b),
            (CategoryTally::Instance(a), CategoryTally::Instance(b)) => a.merge(b),
            _ => Err(Error::Invariant(
                "merging tallies of different kinds".into(),
            )),
        }
    }

    /// Accumulator whose ODS yields the category's F_edge.
    pub fn accumulator(&self) -> &PrAccumulator {
        match self {
            CategoryTally::Stuff(a) => a,
            CategoryTally::Instance(t) => &t.acc,
        }
    }
}

/// Report plus the dataset tallies it was computed from, keyed by category id.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: Report,
    pub tallies: BTreeMap<u16, CategoryTally>,
}

/// Tallies of one image, one per category in category-set order.
pub fn evaluate_image(
    scene: &GtScene,
    preds: &ImagePredictions,
    cats: &CategorySet,
    cfg: &EvalConfig,
) -> Result<Vec<CategoryTally>> {
    let (w, h) = (scene.width(), scene.height());
    if scene.semantic.len() != cats.len() {
        return Err(Error::Shape(format!(
            "{} semantic channels for {} categories",
            scene.semantic.len(),
            cats.len()
        )));
    }
    if let Some(sem) = &preds.semantic {
        if sem.channels() != cats.len() || sem.width() != w || sem.height() != h {
            return Err(Error::Shape(format!(
                "semantic prediction {}x{}x{} for {} categories on {w}x{h}",
                sem.channels(),
                sem.height(),
                sem.width(),
                cats.len()
            )));
        }
    }
    for p in &preds.instances {
        if cats.kind_of(p.category) != Some(CategoryKind::Instance) {
            return Err(Error::Param(format!(
                "predicted instance has category {}, which is not an instance category",
                p.category
            )));
        }
    }
    let tol = cfg.tolerance.resolve(w, h)?;
    let ignore = scene.ignore.as_ref();
    let zeros = vec![0.0f32; w * h];

    let mut out = Vec::with_capacity(cats.len());
    for (k, cat) in cats.iter().enumerate() {
        let mut tally = CategoryTally::new(cat.kind, &cfg.grid);
        match &mut tally {
            CategoryTally::Stuff(acc) => {
                let plane = preds.semantic.as_ref().map_or(&zeros[..], |m| m.channel(k));
                accumulate_channel(plane, &scene.semantic[k], &cfg.grid, tol, ignore, acc)?;
            }
            CategoryTally::Instance(t) => {
                let gts: Vec<_> = scene
                    .instances
                    .iter()
                    .filter(|g| g.category == cat.id)
                    .cloned()
                    .collect();
                let ps: Vec<_> = preds
                    .instances
                    .iter()
                    .filter(|p| p.category == cat.id && p.score >= cfg.min_score)
                    .cloned()
                    .collect();
                if gts.is_empty() && ps.is_empty() {
                    out.push(tally);
                    continue;
                }
                let ctx = PairContext {
                    width: w,
                    height: h,
                    grid: &cfg.grid,
                    tol,
                    ignore,
                };
                let m = match_instances(&gts, &ps, cfg.iou_min, cfg.top_t, &ctx)?;
                t.images = 1;
                t.tp = m.tp_pairs.len() as u64;
                t.fp = m.false_pos.len() as u64;
                t.fn_ = m.false_neg.len() as u64;
                for pair in &m.tp_pairs {
                    t.acc.merge(&pair.acc)?;
                    t.pair_mfs.push(pair.pair_mf);
                }
            }
        }
        out.push(tally);
    }
    Ok(out)
}

fn finish(
    per_image: Vec<Vec<CategoryTally>>,
    cats: &CategorySet,
    cfg: &EvalConfig,
    radius: Option<usize>,
) -> Result<Evaluation> {
    let mut totals: Vec<CategoryTally> = cats
        .iter()
        .map(|c| CategoryTally::new(c.kind, &cfg.grid))
        .collect();
    for img in &per_image {
        for (t, o) in totals.iter_mut().zip(img) {
            t.merge(o)?;
        }
    }
    let scored = match &cfg.only {
        Some(ids) => cats.subset(ids),
        None => cats.clone(),
    };
    let mut outcomes = Vec::new();
    let mut tallies = BTreeMap::new();
    for (cat, tally) in cats.iter().zip(totals) {
        if scored.index_of(cat.id).is_none() {
            continue;
        }
        outcomes.push(match &tally {
            CategoryTally::Stuff(acc) => f2_stuff(cat, acc)?,
            CategoryTally::Instance(t) => f2_instance(cat, t, cfg.instance_edge_mode)?,
        });
        tallies.insert(cat.id, tally);
    }
    let report = aggregate(outcomes, &scored, cfg.echo(radius))?;
    Ok(Evaluation { report, tallies })
}

/// Evaluates in-memory scenes against their predictions.
pub fn evaluate_scenes(
    pairs: &[(GtScene, ImagePredictions)],
    cats: &CategorySet,
    cfg: &EvalConfig,
    radius: Option<usize>,
) -> Result<Evaluation> {
    cfg.validate()?;
    let per_image = pairs
        .par_iter()
        .map(|(scene, preds)| evaluate_image(scene, preds, cats, cfg))
        .collect::<Result<Vec<_>>>()?;
    finish(per_image, cats, cfg, radius)
}

/// Evaluates a prediction manifest against a converted dataset. Images
/// without predictions are scored as empty predictions.
pub fn evaluate_dataset(
    gt_manifest: &Path,
    pred_manifest: &Path,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    cfg.validate()?;
    let (gt, gt_root) = DatasetManifest::load(gt_manifest)?;
    let (preds, pred_root) = PredictionManifest::load(pred_manifest)?;
    let by_id: BTreeMap<&str, usize> = preds
        .images
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();
    for p in &preds.images {
        if !gt.images.iter().any(|e| e.id == p.id) {
            return Err(Error::format(
                pred_manifest,
                format!("image {:?} is not in the dataset", p.id),
            ));
        }
    }
    let cats = &gt.categories;
    let per_image = gt
        .images
        .par_iter()
        .map(|entry| {
            let scene = gt.load_scene(&gt_root, entry)?;
            let p = match by_id.get(entry.id.as_str()) {
                Some(&i) => PredictionManifest::load_image(
                    &pred_root,
                    &preds.images[i],
                    cats.len(),
                    (entry.width, entry.height),
                    cfg.format,
                    cfg.range,
                )?,
                None => ImagePredictions {
                    semantic: None,
                    instances: Vec::new(),
                },
            };
            evaluate_image(&scene, &p, cats, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    finish(per_image, cats, cfg, Some(gt.radius))
}

/// Writes `pr_<category>.csv` for every scored category.
pub fn write_pr_dump(eval: &Evaluation, dir: &Path) -> Result<()> {
    for (id, tally) in &eval.tallies {
        io::write_atomic(
            &dir.join(format!("pr_{id}.csv")),
            io::pr_csv(tally.accumulator()).as_bytes(),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gt_convert::GtInstance;
    use crate::matching::PredInstance;
    use crate::raster::{BBox, BoundaryMap, Category, ProbMap};

    fn cats() -> CategorySet {
        CategorySet::new(vec![
            Category {
                id: 1,
                name: "road".into(),
                kind: CategoryKind::Stuff,
            },
            Category {
                id: 11,
                name: "car".into(),
                kind: CategoryKind::Instance,
            },
        ])
        .unwrap()
    }

    fn scene() -> GtScene {
        let (w, h) = (20, 20);
        let sem = vec![
            BoundaryMap::from_fn(w, h, |_, y| y == 10),
            BoundaryMap::empty(w, h),
        ];
        let boxes = [
            BBox::new(1, 1, 7, 7).unwrap(),
            BBox::new(11, 11, 18, 18).unwrap(),
        ];
        let instances = boxes
            .iter()
            .enumerate()
            .map(|(i, &b)| GtInstance {
                id: i as u16 + 1,
                category: 11,
                bbox: b,
                edges: BoundaryMap::from_fn(w, h, |x, y| {
                    b.contains(x, y) && (x == b.x0 + 1 || y == b.y0 + 1)
                }),
            })
            .collect();
        GtScene {
            semantic: sem,
            instances,
            ignore: None,
        }
    }

    fn perfect(s: &GtScene) -> ImagePredictions {
        ImagePredictions {
            semantic: Some(ProbMap::from_boundaries(&s.semantic)),
            instances: s
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

    fn cfg() -> EvalConfig {
        EvalConfig {
            tolerance: Tolerance::Pixels(1.0),
            ..EvalConfig::default()
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let s = scene();
        let p = perfect(&s);
        let e = evaluate_scenes(&[(s, p)], &cats(), &cfg(), None).unwrap();
        for c in &e.report.categories {
            assert_eq!((c.f_edge, c.f_object, c.f2), (1.0, 1.0, 1.0), "{c:?}");
        }
        assert_eq!(e.report.overall_mean.unwrap().f2, 1.0);
    }

    #[test]
    fn missing_instance_lowers_object_score() {
        let s = scene();
        let mut p = perfect(&s);
        p.instances.pop();
        let e = evaluate_scenes(&[(s, p)], &cats(), &cfg(), None).unwrap();
        let car = e
            .report
            .categories
            .iter()
            .find(|c| c.category == 11)
            .unwrap();
        assert_eq!((car.support.tp, car.support.fp, car.support.fn_), (1, 0, 1));
        assert!((car.f_object - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(car.f_edge, 1.0);
    }

    #[test]
    fn min_score_drops_predictions() {
        let s = scene();
        let mut p = perfect(&s);
        p.instances[0].score = 0.2;
        let c = EvalConfig {
            min_score: 0.5,
            ..cfg()
        };
        let e = evaluate_scenes(&[(s, p)], &cats(), &c, None).unwrap();
        let car = e
            .report
            .categories
            .iter()
            .find(|c| c.category == 11)
            .unwrap();
        assert_eq!((car.support.tp, car.support.fp, car.support.fn_), (1, 0, 1));
    }

    #[test]
    fn only_filter_and_missing_semantic() {
        let s = scene();
        let mut p = perfect(&s);
        p.semantic = None;
        let c = EvalConfig {
            only: Some(vec![1]),
            ..cfg()
        };
        let e = evaluate_scenes(&[(s, p)], &cats(), &c, None).unwrap();
        assert_eq!(e.report.categories.len(), 1);
        assert_eq!(e.report.categories[0].f_edge, 0.0);
    }

    #[test]
    fn stuff_category_prediction_is_rejected() {
        let s = scene();
        let mut p = perfect(&s);
        p.instances[0].category = 1;
        assert!(evaluate_scenes(&[(s, p)], &cats(), &cfg(), None).is_err());
    }
}
