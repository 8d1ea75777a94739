//! Raster types shared by every stage of the pipeline: label and instance
//! rasters, binary boundary maps, multi-channel probability maps, pixel boxes
//! and the category set.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value marking pixels that take no part in evaluation.
pub const IGNORE_LABEL: u16 = u16::MAX;

/// Per-pixel category ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        check_len(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    /// Pixels carrying [`IGNORE_LABEL`].
    pub fn ignore_mask(&self) -> BoundaryMap {
        BoundaryMap {
            width: self.width,
            height: self.height,
            bits: self.data.iter().map(|&l| l == IGNORE_LABEL).collect(),
        }
    }

    /// Checks every non-ignore label against `cats`.
    pub fn validate(&self, cats: &CategorySet) -> Result<()> {
        for (i, &label) in self.data.iter().enumerate() {
            if label != IGNORE_LABEL && cats.index_of(label).is_none() {
                return Err(Error::Label {
                    label,
                    x: i % self.width,
                    y: i / self.width,
                });
            }
        }
        Ok(())
    }

    /// Maps every label that is not in `keep` to [`IGNORE_LABEL`].
    pub fn restrict_to(&self, keep: &CategorySet) -> LabelMap {
        let data = self
            .data
            .iter()
            .map(|&l| {
                if l != IGNORE_LABEL && keep.index_of(l).is_some() {
                    l
                } else {
                    IGNORE_LABEL
                }
            })
            .collect();
        LabelMap {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Per-pixel instance ids, row-major; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl InstanceMap {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        check_len(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    /// Distinct nonzero ids in ascending order.
    pub fn ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self
            .data
            .iter()
            .copied()
            .filter(|&i| i != 0)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Binary per-pixel edge flags, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BoundaryMap {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_len(width, height, bits.len())?;
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Coordinates of set pixels in row-major order.
    pub fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn same_shape(&self, other: &BoundaryMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copy of the region covered by `rect`.
    pub fn crop(&self, rect: BBox) -> BoundaryMap {
        let mut bits = Vec::with_capacity(rect.area());
        for y in rect.y0..rect.y1 {
            let row = y * self.width;
            bits.extend_from_slice(&self.bits[row + rect.x0..row + rect.x1]);
        }
        BoundaryMap {
            width: rect.width(),
            height: rect.height(),
            bits,
        }
    }

    pub fn union_with(&mut self, other: &BoundaryMap) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }
}

/// Real-valued maps in `[0, 1]`, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    channels: usize,
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ProbMap {
    pub fn new(channels: usize, width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        let expected = channels * width * height;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{} values for {channels}x{height}x{width} map",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Param(format!(
                "probability {v} at index {i} outside [0, 1]"
            )));
        }
        Ok(Self {
            channels,
            width,
            height,
            values,
        })
    }

    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
            values: vec![0.0; channels * width * height],
        }
    }

    pub fn from_boundary(map: &BoundaryMap) -> Self {
        Self::from_boundaries(std::slice::from_ref(map))
    }

    /// Stacks binary maps as 0/1 channels. All maps must share a shape.
    pub fn from_boundaries(maps: &[BoundaryMap]) -> Self {
        let (width, height) = maps.first().map_or((0, 0), |m| (m.width, m.height));
        let mut values = Vec::with_capacity(maps.len() * width * height);
        for m in maps {
            assert!(
                m.width == width && m.height == height,
                "channel shapes differ"
            );
            values.extend(m.bits.iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
        }
        Self {
            channels: maps.len(),
            width,
            height,
            values,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.values[k * n..(k + 1) * n]
    }

    pub(crate) fn channel_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.values[k * n..(k + 1) * n]
    }

    /// One channel as its own single-channel map.
    pub fn extract_channel(&self, k: usize) -> ProbMap {
        ProbMap {
            channels: 1,
            width: self.width,
            height: self.height,
            values: self.channel(k).to_vec(),
        }
    }

    pub fn get(&self, k: usize, x: usize, y: usize) -> f32 {
        self.values[(k * self.height + y) * self.width + x]
    }

    /// Single-channel crop of channel `k`.
    pub fn crop(&self, k: usize, rect: BBox) -> ProbMap {
        let src = self.channel(k);
        let mut values = Vec::with_capacity(rect.area());
        for y in rect.y0..rect.y1 {
            let row = y * self.width;
            values.extend_from_slice(&src[row + rect.x0..row + rect.x1]);
        }
        ProbMap {
            channels: 1,
            width: rect.width(),
            height: rect.height(),
            values,
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 4]", try_from = "[usize; 4]")]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Param(format!(
                "degenerate box ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        (x0 < x1 && y0 < y1).then_some(BBox { x0, y0, x1, y1 })
    }

    /// Smallest box covering both.
    pub fn hull(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    /// Grows the box by `r` on every side, clipped to the canvas.
    pub fn dilate(&self, r: usize, width: usize, height: usize) -> BBox {
        BBox {
            x0: self.x0.saturating_sub(r),
            y0: self.y0.saturating_sub(r),
            x1: (self.x1 + r).min(width),
            y1: (self.y1 + r).min(height),
        }
    }

    pub fn full(width: usize, height: usize) -> BBox {
        BBox {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl TryFrom<[usize; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [usize; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryKind {
    Stuff,
    Instance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u16,
    pub name: String,
    pub kind: CategoryKind,
}

/// Ordered categories; channel `k` of a semantic map belongs to the `k`-th
/// entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CategorySetRepr", into = "CategorySetRepr")]
pub struct CategorySet {
    categories: Vec<Category>,
}

#[derive(Serialize, Deserialize)]
struct CategorySetRepr {
    categories: Vec<Category>,
}

impl TryFrom<CategorySetRepr> for CategorySet {
    type Error = Error;

    fn try_from(r: CategorySetRepr) -> Result<Self> {
        CategorySet::new(r.categories)
    }
}

impl From<CategorySet> for CategorySetRepr {
    fn from(c: CategorySet) -> Self {
        CategorySetRepr {
            categories: c.categories,
        }
    }
}

impl CategorySet {
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &categories {
            if c.id == IGNORE_LABEL {
                return Err(Error::Param(format!(
                    "category id {IGNORE_LABEL} is reserved for ignore"
                )));
            }
            if !seen.insert(c.id) {
                return Err(Error::Param(format!("duplicate category id {}", c.id)));
            }
        }
        Ok(Self { categories })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Category> {
        self.categories.iter()
    }

    pub fn get(&self, index: usize) -> &Category {
        &self.categories[index]
    }

    pub fn index_of(&self, id: u16) -> Option<usize> {
        self.categories.iter().position(|c| c.id == id)
    }

    pub fn by_id(&self, id: u16) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn kind_of(&self, id: u16) -> Option<CategoryKind> {
        self.by_id(id).map(|c| c.kind)
    }

    /// Keeps only categories whose id is in `ids`, preserving order.
    pub fn subset(&self, ids: &[u16]) -> CategorySet {
        CategorySet {
            categories: self
                .categories
                .iter()
                .filter(|c| ids.contains(&c.id))
                .cloned()
                .collect(),
        }
    }
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width * height != len {
        return Err(Error::Shape(format!(
            "{len} pixels for a {width}x{height} raster"
        )));
    }
    Ok(())
}

/// Binarization rule used everywhere: a pixel is set iff its value is at or
/// above the threshold.
#[inline]
pub(crate) fn at_or_above(value: f32, theta: f64) -> bool {
    f64::from(value) >= theta
}

/// Tight box around the set pixels of `mask`.
pub fn bbox_of(mask: &BoundaryMap) -> Result<BBox> {
    bbox_of_pixels(mask.set_pixels())
}

/// Tight box around a pixel set.
pub fn bbox_of_pixels(pixels: impl IntoIterator<Item = (usize, usize)>) -> Result<BBox> {
    let mut acc: Option<BBox> = None;
    for (x, y) in pixels {
        let px = BBox {
            x0: x,
            y0: y,
            x1: x + 1,
            y1: y + 1,
        };
        acc = Some(match acc {
            Some(b) => b.hull(&px),
            None => px,
        });
    }
    acc.ok_or(Error::EmptyMask)
}

/// Places a single-channel crop on a zeroed `width x height` canvas.
pub fn embed(crop: &ProbMap, bbox: BBox, width: usize, height: usize) -> Result<ProbMap> {
    if crop.channels != 1 {
        return Err(Error::Shape(format!(
            "embed expects one channel, got {}",
            crop.channels
        )));
    }
    if crop.width != bbox.width() || crop.height != bbox.height() {
        return Err(Error::Shape(format!(
            "crop is {}x{} but box is {}x{}",
            crop.width,
            crop.height,
            bbox.width(),
            bbox.height()
        )));
    }
    if !bbox.fits(width, height) {
        return Err(Error::Shape(format!(
            "box {bbox:?} exceeds {width}x{height} canvas"
        )));
    }
    let mut out = ProbMap::zeros(1, width, height);
    for (row, y) in (bbox.y0..bbox.y1).enumerate() {
        let src = &crop.values[row * crop.width..(row + 1) * crop.width];
        out.values[y * width + bbox.x0..y * width + bbox.x1].copy_from_slice(src);
    }
    Ok(out)
}

/// Thresholds a single-channel map: set iff `value >= theta`.
pub fn binarize(map: &ProbMap, theta: f64) -> Result<BoundaryMap> {
    if map.channels != 1 {
        return Err(Error::Shape(format!(
            "binarize expects one channel, got {}",
            map.channels
        )));
    }
    check_theta(theta)?;
    Ok(BoundaryMap {
        width: map.width,
        height: map.height,
        bits: map.values.iter().map(|&v| at_or_above(v, theta)).collect(),
    })
}

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Param(format!("threshold {theta} outside (0, 1)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(width: usize, height: usize, pts: &[(usize, usize)]) -> BoundaryMap {
        BoundaryMap::from_fn(width, height, |x, y| pts.contains(&(x, y)))
    }

    #[test]
    fn bbox_single_pixel() {
        let m = mask_from(8, 8, &[(3, 5)]);
        assert_eq!(bbox_of(&m).unwrap(), BBox::new(3, 5, 4, 6).unwrap());
    }

    #[test]
    fn bbox_full_frame() {
        let m = BoundaryMap::from_fn(8, 8, |_, _| true);
        assert_eq!(bbox_of(&m).unwrap(), BBox::new(0, 0, 8, 8).unwrap());
    }

    #[test]
    fn bbox_two_pixels() {
        // min/max scan: x in {1,4}, y in {1,2}
        let m = mask_from(8, 8, &[(1, 1), (4, 2)]);
        assert_eq!(bbox_of(&m).unwrap(), BBox::new(1, 1, 5, 3).unwrap());
    }

    #[test]
    fn bbox_empty_is_error() {
        assert!(matches!(
            bbox_of(&BoundaryMap::empty(4, 4)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn embed_quadrant() {
        let crop = ProbMap::new(1, 2, 2, vec![1.0; 4]).unwrap();
        let out = embed(&crop, BBox::new(0, 0, 2, 2).unwrap(), 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = if x < 2 && y < 2 { 1.0 } else { 0.0 };
                assert_eq!(out.get(0, x, y), want);
            }
        }
    }

    #[test]
    fn embed_identity_and_single() {
        let vals: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        let crop = ProbMap::new(1, 4, 4, vals).unwrap();
        assert_eq!(embed(&crop, BBox::full(4, 4), 4, 4).unwrap(), crop);

        let one = ProbMap::new(1, 1, 1, vec![0.7]).unwrap();
        let out = embed(&one, BBox::new(3, 3, 4, 4).unwrap(), 4, 4).unwrap();
        assert_eq!(out.get(0, 3, 3), 0.7);
        assert_eq!(out.values().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn embed_shape_errors() {
        let crop = ProbMap::new(1, 2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(
            embed(&crop, BBox::new(0, 0, 3, 2).unwrap(), 4, 4),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            embed(&crop, BBox::new(3, 3, 5, 5).unwrap(), 4, 4),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn binarize_cases() {
        let zeros = ProbMap::zeros(1, 3, 3);
        assert!(binarize(&zeros, 0.5).unwrap().is_empty());

        let m = ProbMap::new(1, 2, 1, vec![0.4, 0.6]).unwrap();
        assert_eq!(binarize(&m, 0.5).unwrap().bits(), &[false, true]);

        let half = ProbMap::new(1, 1, 1, vec![0.5]).unwrap();
        assert_eq!(binarize(&half, 0.5).unwrap().bits(), &[true]);

        assert!(matches!(binarize(&m, 0.0), Err(Error::Param(_))));
        assert!(matches!(binarize(&m, 1.0), Err(Error::Param(_))));
    }

    #[test]
    fn prob_map_rejects_out_of_range() {
        assert!(ProbMap::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ProbMap::new(1, 1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn category_set_rejects_duplicates() {
        let c = |id| Category {
            id,
            name: format!("c{id}"),
            kind: CategoryKind::Stuff,
        };
        assert!(CategorySet::new(vec![c(1), c(1)]).is_err());
        assert!(CategorySet::new(vec![c(IGNORE_LABEL)]).is_err());
        assert!(CategorySet::new(vec![c(1), c(2)]).is_ok());
    }

    fn crop_strategy() -> impl Strategy<Value = (usize, usize, Vec<f32>, usize, usize)> {
        (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
            (
                Just(w),
                Just(h),
                prop::collection::vec(0.0f32..=1.0, w * h),
                0usize..5,
                0usize..5,
            )
        })
    }

    proptest! {
        #[test]
        fn embed_restrict_round_trip((w, h, vals, ox, oy) in crop_strategy()) {
            let crop = ProbMap::new(1, w, h, vals).unwrap();
            let bbox = BBox::new(ox, oy, ox + w, oy + h).unwrap();
            let canvas = embed(&crop, bbox, 12, 12).unwrap();
            prop_assert_eq!(canvas.crop(0, bbox), crop.clone());

            // support box translates with the placement
            let support = binarize(&crop, 1e-6).unwrap();
            if let Ok(inner) = bbox_of(&support) {
                let outer = bbox_of(&binarize(&canvas, 1e-6).unwrap()).unwrap();
                prop_assert_eq!(outer, BBox::new(inner.x0 + ox, inner.y0 + oy, inner.x1 + ox, inner.y1 + oy).unwrap());
            }
        }

        #[test]
        fn binarize_is_monotone(vals in prop::collection::vec(0.0f32..=1.0, 25), a in 0.001f64..0.999, b in 0.001f64..0.999) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let m = ProbMap::new(1, 5, 5, vals).unwrap();
            let low = binarize(&m, lo).unwrap();
            let high = binarize(&m, hi).unwrap();
            for (h, l) in high.bits().iter().zip(low.bits()) {
                prop_assert!(!h || *l);
            }
        }
    }
}
