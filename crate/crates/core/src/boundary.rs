//! Boundary correspondence under a distance tolerance, per-threshold
//! precision/recall accumulation and maximum F-measure at the optimal dataset
//! scale (ODS).
//!
//! Matching is one-sided: a predicted edge pixel is matched when some
//! ground-truth edge pixel lies within the tolerance, and vice versa. Distances
//! are exact (integer squared distances), so results agree bit for bit with an
//! all-pairs scan.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::raster::{at_or_above, BoundaryMap, ProbMap};

/// Matching radius, stored as the largest admissible squared distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchRadius {
    max_sq: u64,
}

impl MatchRadius {
    pub fn from_pixels(tol: f64) -> Result<Self> {
        if !(tol.is_finite() && tol >= 0.0) {
            return Err(Error::Param(format!("tolerance {tol} must be >= 0")));
        }
        Ok(Self {
            max_sq: (tol * tol + 1e-9).floor() as u64,
        })
    }

    pub fn from_squared(max_sq: u64) -> Self {
        Self { max_sq }
    }

    pub fn max_sq(&self) -> u64 {
        self.max_sq
    }

    pub fn admits(&self, sq: u64) -> bool {
        sq <= self.max_sq
    }

    /// Integer offsets `(dx, dy)` with `dx² + dy² <= max_sq`.
    pub fn disc(&self) -> Vec<(isize, isize)> {
        let r = self.max_sq.isqrt() as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if (dx * dx + dy * dy) as u64 <= self.max_sq {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

/// Matching tolerance as configured: absolute pixels or a fraction of the
/// image diagonal (rounded to whole pixels, at least one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    Pixels(f64),
    DiagonalFraction(f64),
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::DiagonalFraction(0.0035)
    }
}

impl Tolerance {
    pub fn resolve(&self, width: usize, height: usize) -> Result<MatchRadius> {
        match *self {
            Tolerance::Pixels(px) => MatchRadius::from_pixels(px),
            Tolerance::DiagonalFraction(frac) => {
                if !(frac.is_finite() && frac >= 0.0) {
                    return Err(Error::Param(format!(
                        "tolerance fraction {frac} must be >= 0"
                    )));
                }
                let diag = ((width * width + height * height) as f64).sqrt();
                let px = (frac * diag).round().max(1.0);
                MatchRadius::from_pixels(px)
            }
        }
    }
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tolerance::Pixels(px) => write!(f, "{px}px"),
            Tolerance::DiagonalFraction(frac) => write!(f, "{frac}"),
        }
    }
}

impl FromStr for Tolerance {
    type Err = Error;

    /// `"2px"` is absolute, a bare number is a fraction of the diagonal.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Param(format!("cannot parse tolerance {s:?}"));
        let s = s.trim();
        let tol = if let Some(px) = s.strip_suffix("px") {
            Tolerance::Pixels(px.trim().parse().map_err(|_| bad())?)
        } else {
            Tolerance::DiagonalFraction(s.parse().map_err(|_| bad())?)
        };
        match tol {
            Tolerance::Pixels(v) | Tolerance::DiagonalFraction(v)
                if !(v.is_finite() && v >= 0.0) =>
            {
                Err(bad())
            }
            t => Ok(t),
        }
    }
}

/// Strictly increasing thresholds inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdGrid(Vec<f64>);

impl ThresholdGrid {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::Param("threshold grid is empty".into()));
        }
        for t in &thresholds {
            crate::raster::check_theta(*t)?;
        }
        if thresholds.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Param(
                "thresholds must be strictly increasing".into(),
            ));
        }
        Ok(Self(thresholds))
    }

    /// `n` evenly spaced thresholds `i / (n + 1)`, `i = 1..=n`.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|i| i as f64 / (n + 1) as f64).collect())
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of thresholds at or below `v`: the pixel is set for exactly
    /// the first `level(v)` thresholds.
    #[inline]
    pub fn level(&self, v: f32) -> usize {
        self.0.partition_point(|&t| at_or_above(v, t))
    }
}

impl Default for ThresholdGrid {
    /// 0.01, 0.02, ..., 0.99.
    fn default() -> Self {
        Self::uniform(99).expect("static grid")
    }
}

impl TryFrom<Vec<f64>> for ThresholdGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ThresholdGrid::new(v)
    }
}

impl From<ThresholdGrid> for Vec<f64> {
    fn from(g: ThresholdGrid) -> Self {
        g.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchCounts {
    pub pred_total: u64,
    pub pred_matched: u64,
    pub gt_total: u64,
    pub gt_matched: u64,
}

impl MatchCounts {
    pub fn add(&mut self, other: &MatchCounts) {
        self.pred_total += other.pred_total;
        self.pred_matched += other.pred_matched;
        self.gt_total += other.gt_total;
        self.gt_matched += other.gt_matched;
    }

    /// 0 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.pred_matched, self.pred_total)
    }

    /// 0 when there is no ground truth.
    pub fn recall(&self) -> f64 {
        ratio(self.gt_matched, self.gt_total)
    }

    pub fn f_measure(&self) -> f64 {
        f_measure(self.precision(), self.recall())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both are 0.
pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_shapes(a: &BoundaryMap, b: &BoundaryMap, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn without(map: &BoundaryMap, ignore: Option<&BoundaryMap>) -> BoundaryMap {
    match ignore {
        None => map.clone(),
        Some(ig) => BoundaryMap::from_fn(map.width(), map.height(), |x, y| {
            map.get(x, y) && !ig.get(x, y)
        }),
    }
}

fn matched_against(src: &BoundaryMap, target: &BoundaryMap, tol: MatchRadius) -> u64 {
    match squared_edt(target) {
        None => 0,
        Some(dt) => src
            .bits()
            .iter()
            .zip(&dt)
            .filter(|(&b, &d)| b && tol.admits(d))
            .count() as u64,
    }
}

/// Correspondence counts between two binary maps. Ignored pixels are removed
/// from both maps before matching.
pub fn correspond(
    pred: &BoundaryMap,
    gt: &BoundaryMap,
    tol: MatchRadius,
    ignore: Option<&BoundaryMap>,
) -> Result<MatchCounts> {
    check_shapes(pred, gt, "correspond")?;
    if let Some(ig) = ignore {
        check_shapes(gt, ig, "ignore mask")?;
    }
    let pred = without(pred, ignore);
    let gt = without(gt, ignore);
    Ok(MatchCounts {
        pred_total: pred.count() as u64,
        pred_matched: matched_against(&pred, &gt, tol),
        gt_total: gt.count() as u64,
        gt_matched: matched_against(&gt, &pred, tol),
    })
}

/// Counts for every threshold of `grid` in a single pass over the image.
///
/// Equivalent to `correspond(binarize(pred, theta), gt, tol, ignore)` for each
/// theta: a predicted pixel counts at theta iff its value is at least theta,
/// and a GT pixel is matched at theta iff the largest predicted value within
/// the tolerance disc is at least theta.
pub fn sweep_counts(
    pred: &[f32],
    gt: &BoundaryMap,
    tol: MatchRadius,
    ignore: Option<&BoundaryMap>,
    grid: &ThresholdGrid,
) -> Result<Vec<MatchCounts>> {
    let (w, h) = (gt.width(), gt.height());
    if pred.len() != w * h {
        return Err(Error::Shape(format!(
            "prediction has {} pixels, ground truth {}x{}",
            pred.len(),
            w,
            h
        )));
    }
    if let Some(ig) = ignore {
        check_shapes(gt, ig, "ignore mask")?;
    }
    let ignored = |i: usize| ignore.is_some_and(|ig| ig.bits()[i]);
    let n = grid.len();

    let levels: Vec<u16> = pred
        .iter()
        .enumerate()
        .map(|(i, &v)| if ignored(i) { 0 } else { grid.level(v) as u16 })
        .collect();
    let gt = without(gt, ignore);

    let mut pred_hist = vec![0u64; n + 1];
    let mut pred_matched_hist = vec![0u64; n + 1];
    let dt = squared_edt(&gt);
    for (i, &l) in levels.iter().enumerate() {
        pred_hist[l as usize] += 1;
        if dt.as_ref().is_some_and(|d| tol.admits(d[i])) {
            pred_matched_hist[l as usize] += 1;
        }
    }

    let disc = tol.disc();
    let mut gt_hist = vec![0u64; n + 1];
    let mut gt_total = 0u64;
    for (x, y) in gt.set_pixels() {
        gt_total += 1;
        let mut best = 0u16;
        for &(dx, dy) in &disc {
            let (qx, qy) = (x as isize + dx, y as isize + dy);
            if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                continue;
            }
            let l = levels[qy as usize * w + qx as usize];
            if l > best {
                best = l;
                if best as usize == n {
                    break;
                }
            }
        }
        gt_hist[best as usize] += 1;
    }

    // count at threshold j = pixels whose level exceeds j
    let mut out = vec![MatchCounts::default(); n];
    let (mut pt, mut pm, mut gm) = (0u64, 0u64, 0u64);
    for j in (0..n).rev() {
        pt += pred_hist[j + 1];
        pm += pred_matched_hist[j + 1];
        gm += gt_hist[j + 1];
        out[j] = MatchCounts {
            pred_total: pt,
            pred_matched: pm,
            gt_total,
            gt_matched: gm,
        };
    }
    Ok(out)
}

/// Result of [`PrAccumulator::mf_ods`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ods {
    pub f: f64,
    pub theta: f64,
    pub index: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Per-threshold counts summed over images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrAccumulator {
    grid: Vec<u64>,
    counts: Vec<MatchCounts>,
    images: u64,
}

impl PrAccumulator {
    pub fn new(grid: &ThresholdGrid) -> Self {
        Self {
            // thresholds kept as bit patterns so the accumulator stays Eq
            grid: grid.thresholds().iter().map(|t| t.to_bits()).collect(),
            counts: vec![MatchCounts::default(); grid.len()],
            images: 0,
        }
    }

    pub fn thresholds(&self) -> impl Iterator<Item = f64> + '_ {
        self.grid.iter().map(|&b| f64::from_bits(b))
    }

    pub fn counts(&self) -> &[MatchCounts] {
        &self.counts
    }

    /// Images (or instance pairs) that contributed.
    pub fn contributions(&self) -> u64 {
        self.images
    }

    fn check_grid(&self, grid: &[u64]) -> Result<()> {
        if self.grid != grid {
            return Err(Error::Param("threshold grids differ".into()));
        }
        Ok(())
    }

    /// Adds one image's per-threshold counts.
    pub fn add_counts(&mut self, counts: &[MatchCounts]) -> Result<()> {
        if counts.len() != self.counts.len() {
            return Err(Error::Param(format!(
                "{} counts for a {}-threshold grid",
                counts.len(),
                self.counts.len()
            )));
        }
        for (a, c) in self.counts.iter_mut().zip(counts) {
            a.add(c);
        }
        self.images += 1;
        Ok(())
    }

    /// Associative, commutative merge.
    pub fn merge(&mut self, other: &PrAccumulator) -> Result<()> {
        self.check_grid(&other.grid)?;
        for (a, c) in self.counts.iter_mut().zip(&other.counts) {
            a.add(c);
        }
        self.images += other.images;
        Ok(())
    }

    pub fn f_at(&self, index: usize) -> f64 {
        self.counts[index].f_measure()
    }

    /// `(theta, precision, recall, f)` for every grid threshold.
    pub fn pr_points(&self) -> Vec<(f64, f64, f64, f64)> {
        self.thresholds()
            .zip(&self.counts)
            .map(|(t, c)| (t, c.precision(), c.recall(), c.f_measure()))
            .collect()
    }

    /// Maximum F over the grid; the lowest threshold wins ties.
    pub fn mf_ods(&self) -> Ods {
        let mut best = Ods {
            f: -1.0,
            theta: 0.0,
            index: 0,
            precision: 0.0,
            recall: 0.0,
        };
        for (i, (t, c)) in self.thresholds().zip(&self.counts).enumerate() {
            let f = c.f_measure();
            if f > best.f {
                best = Ods {
                    f,
                    theta: t,
                    index: i,
                    precision: c.precision(),
                    recall: c.recall(),
                };
            }
        }
        best
    }
}

/// Adds one image to `acc`. Images without ground-truth edges (after
/// ignore) leave the accumulator untouched; returns whether the image
/// contributed.
pub fn accumulate_pr(
    pred: &ProbMap,
    gt: &BoundaryMap,
    grid: &ThresholdGrid,
    tol: MatchRadius,
    ignore: Option<&BoundaryMap>,
    acc: &mut PrAccumulator,
) -> Result<bool> {
    if pred.channels() != 1 || pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Shape(format!(
            "prediction {}x{}x{} vs ground truth {}x{}",
            pred.channels(),
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let grid_bits: Vec<u64> = grid.thresholds().iter().map(|t| t.to_bits()).collect();
    acc.check_grid(&grid_bits)?;
    accumulate_channel(pred.values(), gt, grid, tol, ignore, acc)
}

pub(crate) fn accumulate_channel(
    pred: &[f32],
    gt: &BoundaryMap,
    grid: &ThresholdGrid,
    tol: MatchRadius,
    ignore: Option<&BoundaryMap>,
    acc: &mut PrAccumulator,
) -> Result<bool> {
    let counts = sweep_counts(pred, gt, tol, ignore, grid)?;
    if counts.first().is_none_or(|c| c.gt_total == 0) {
        return Ok(false);
    }
    acc.add_counts(&counts)?;
    Ok(true)
}
