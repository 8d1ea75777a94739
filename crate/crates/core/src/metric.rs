//! Per-category F_edge, F_object and their product F², plus the dataset
//! report with stuff, instance and overall means.

use serde::{Deserialize, Serialize};

use crate::boundary::PrAccumulator;
use crate::error::{Error, Result};
use crate::raster::{Category, CategoryKind, CategorySet};

/// Object-recognition term: `TP / (TP + FP/2 + FN/2)`.
pub fn f_object(tp: u64, fp: u64, fn_: u64) -> Result<f64> {
    if tp == 0 && fp == 0 && fn_ == 0 {
        return Err(Error::Undefined("no instances on either side".into()));
    }
    Ok(tp as f64 / (tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64))
}

/// F² = F_edge × F_object.
#[inline]
pub fn compose_f2(f_edge: f64, f_object: f64) -> f64 {
    f_edge * f_object
}

/// How F_edge of an instance category is formed from its matched pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceEdgeMode {
    /// One ODS threshold over the counts of every matched pair in the
    /// dataset.
    #[default]
    DatasetOds,
    /// Mean of the per-pair maximum F-measures.
    PerPairMean,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    /// Images whose ground truth had edges of the category (stuff) or that
    /// contained instances of it.
    pub images: u64,
    pub gt_instances: u64,
    pub pred_instances: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: u16,
    pub name: String,
    pub kind: CategoryKind,
    pub f_edge: f64,
    pub f_object: f64,
    pub f2: f64,
    /// Threshold at which F_edge was attained, when it came from an ODS sweep.
    pub theta_star: Option<f64>,
    pub support: Support,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub category: u16,
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CategoryOutcome {
    Scored(CategoryScore),
    Skipped(Skipped),
}

fn skipped(cat: &Category, reason: &str) -> CategoryOutcome {
    CategoryOutcome::Skipped(Skipped {
        category: cat.id,
        name: cat.name.clone(),
        reason: reason.to_string(),
    })
}

/// Stuff category score: F_object is fixed at 1, so F² equals F_edge.
pub fn f2_stuff(cat: &Category, acc: &PrAccumulator) -> Result<CategoryOutcome> {
    if cat.kind != CategoryKind::Stuff {
        return Err(Error::Param(format!("category {} is not stuff", cat.id)));
    }
    let gt_edges = acc.counts().first().map_or(0, |c| c.gt_total);
    if gt_edges == 0 {
        return Ok(skipped(cat, "no ground-truth edge pixels in the dataset"));
    }
    let ods = acc.mf_ods();
    Ok(CategoryOutcome::Scored(CategoryScore {
        category: cat.id,
        name: cat.name.clone(),
        kind: cat.kind,
        f_edge: ods.f,
        f_object: 1.0,
        f2: compose_f2(ods.f, 1.0),
        theta_star: Some(ods.theta),
        support: Support {
            images: acc.contributions(),
            ..Support::default()
        },
    }))
}

/// Dataset totals of instance matching for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTally {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub images: u64,
    /// Summed counts of every matched pair.
    pub acc: PrAccumulator,
    /// Per-pair maximum F-measures, in image then ground-truth order.
    pub pair_mfs: Vec<f64>,
}

impl InstanceTally {
    pub fn new(acc: PrAccumulator) -> Self {
        Self {
            tp: 0,
            fp: 0,
            fn_: 0,
            images: 0,
            acc,
            pair_mfs: Vec::new(),
        }
    }

    /// Appends `other`; call in image order to keep `pair_mfs` ordered.
    pub fn merge(&mut self, other: &InstanceTally) -> Result<()> {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.images += other.images;
        self.acc.merge(&other.acc)?;
        self.pair_mfs.extend_from_slice(&other.pair_mfs);
        Ok(())
    }

    pub fn gt_instances(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn pred_instances(&self) -> u64 {
        self.tp + self.fp
    }
}

/// Instance category score from its dataset tally.
pub fn f2_instance(
    cat: &Category,
    tally: &InstanceTally,
    mode: InstanceEdgeMode,
) -> Result<CategoryOutcome> {
    if cat.kind != CategoryKind::Instance {
        return Err(Error::Param(format!(
            "category {} is not an instance category",
            cat.id
        )));
    }
    let support = Support {
        images: tally.images,
        gt_instances: tally.gt_instances(),
        pred_instances: tally.pred_instances(),
        tp: tally.tp,
        fp: tally.fp,
        fn_: tally.fn_,
    };
    if support.gt_instances == 0 && support.pred_instances == 0 {
        return Ok(skipped(cat, "no ground-truth or predicted instances"));
    }
    let f_obj = f_object(tally.tp, tally.fp, tally.fn_)?;
    let (f_edge, theta_star) = if tally.tp == 0 {
        (0.0, None)
    } else {
        match mode {
            InstanceEdgeMode::DatasetOds if tally.acc.contributions() > 0 => {
                let ods = tally.acc.mf_ods();
                (ods.f, Some(ods.theta))
            }
            InstanceEdgeMode::DatasetOds => (0.0, None),
            InstanceEdgeMode::PerPairMean => {
                let sum: f64 = tally.pair_mfs.iter().sum();
                (sum / tally.pair_mfs.len().max(1) as f64, None)
            }
        }
    };
    Ok(CategoryOutcome::Scored(CategoryScore {
        category: cat.id,
        name: cat.name.clone(),
        kind: cat.kind,
        f_edge,
        f_object: f_obj,
        f2: compose_f2(f_edge, f_obj),
        theta_star,
        support,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub f_edge: f64,
    pub f_object: f64,
    pub f2: f64,
    pub count: usize,
}

/// Settings echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub tolerance: String,
    pub grid: Vec<f64>,
    pub radius: Option<usize>,
    pub top_t: usize,
    pub iou_min: f64,
    pub min_score: f64,
    pub instance_edge_mode: InstanceEdgeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ConfigEcho,
    pub categories: Vec<CategoryScore>,
    pub skipped: Vec<Skipped>,
    pub stuff_mean: Option<MeanScores>,
    pub instance_mean: Option<MeanScores>,
    pub overall_mean: Option<MeanScores>,
}

fn mean<'a>(scores: impl Iterator<Item = &'a CategoryScore>) -> Option<MeanScores> {
    let mut m = MeanScores {
        f_edge: 0.0,
        f_object: 0.0,
        f2: 0.0,
        count: 0,
    };
    for s in scores {
        m.f_edge += s.f_edge;
        m.f_object += s.f_object;
        m.f2 += s.f2;
        m.count += 1;
    }
    if m.count == 0 {
        return None;
    }
    let n = m.count as f64;
    m.f_edge /= n;
    m.f_object /= n;
    m.f2 /= n;
    Some(m)
}

/// Orders outcomes by the category set and averages over evaluated
/// categories only.
pub fn aggregate(
    outcomes: Vec<CategoryOutcome>,
    cats: &CategorySet,
    config: ConfigEcho,
) -> Result<Report> {
    let mut categories = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            CategoryOutcome::Scored(s) => categories.push(s),
            CategoryOutcome::Skipped(s) => skipped.push(s),
        }
    }
    let rank = |id: u16| cats.index_of(id).unwrap_or(usize::MAX);
    categories.sort_by_key(|s| rank(s.category));
    skipped.sort_by_key(|s| rank(s.category));
    if categories.is_empty() {
        return Err(Error::EmptyReport);
    }
    Ok(Report {
        config,
        stuff_mean: mean(categories.iter().filter(|s| s.kind == CategoryKind::Stuff)),
        instance_mean: mean(
            categories
                .iter()
                .filter(|s| s.kind == CategoryKind::Instance),
        ),
        overall_mean: mean(categories.iter()),
        categories,
        skipped,
    })
}
