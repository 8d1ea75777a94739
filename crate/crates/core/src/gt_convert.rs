//! Segmentation ground truth to multi-label boundary ground truth.
//!
//! A pixel is an edge of a region when its Chebyshev neighbourhood of the
//! given radius (the pixel included) contains both a pixel of that region and
//! a pixel of some other region. Both sides of a boundary receive the edge, so
//! a pixel can be an edge of several categories or instances at once. Ignore
//! pixels never produce or receive edges. Window counts come from summed-area
//! tables, so the cost is linear in the canvas per category or instance.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io;
use crate::manifest::{DatasetManifest, ImageEntry, ImageError, InstanceEntry, MANIFEST_VERSION};
use crate::raster::{
    BBox, BoundaryMap, CategoryKind, CategorySet, InstanceMap, LabelMap, ProbMap, IGNORE_LABEL,
};

/// Boundary radius used when none is given.
pub const DEFAULT_RADIUS: usize = 2;

/// One ground-truth instance with full-canvas edges.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub id: u16,
    pub category: u16,
    /// Tight box of the instance pixels grown by the boundary radius.
    pub bbox: BBox,
    pub edges: BoundaryMap,
}

/// Converted ground truth of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GtScene {
    /// One channel per entry of the category set, in order.
    pub semantic: Vec<BoundaryMap>,
    pub instances: Vec<GtInstance>,
    /// Pixels excluded from every correspondence count.
    pub ignore: Option<BoundaryMap>,
}

impl GtScene {
    pub fn width(&self) -> usize {
        self.semantic.first().map_or(0, |m| m.width())
    }

    pub fn height(&self) -> usize {
        self.semantic.first().map_or(0, |m| m.height())
    }
}

/// Summed-area table over a rectangular region of the canvas.
struct Integral {
    region: BBox,
    stride: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn build(region: BBox, canvas_width: usize, pred: impl Fn(usize) -> bool) -> Self {
        let w = region.width();
        let stride = w + 1;
        let mut sums = vec![0u32; stride * (region.height() + 1)];
        for (ry, y) in (region.y0..region.y1).enumerate() {
            let mut row = 0u32;
            for (rx, x) in (region.x0..region.x1).enumerate() {
                row += pred(y * canvas_width + x) as u32;
                sums[(ry + 1) * stride + rx + 1] = sums[ry * stride + rx + 1] + row;
            }
        }
        Self {
            region,
            stride,
            sums,
        }
    }

    /// Count inside the window of radius `r` around `(x, y)`, clipped to the
    /// region.
    fn window(&self, x: usize, y: usize, r: usize) -> (u32, u32) {
        let x0 = x.saturating_sub(r).max(self.region.x0) - self.region.x0;
        let y0 = y.saturating_sub(r).max(self.region.y0) - self.region.y0;
        let x1 = (x + r + 1).min(self.region.x1) - self.region.x0;
        let y1 = (y + r + 1).min(self.region.y1) - self.region.y0;
        let s = |xx: usize, yy: usize| self.sums[yy * self.stride + xx];
        let count = s(x1, y1) + s(x0, y0) - s(x0, y1) - s(x1, y0);
        (count, ((x1 - x0) * (y1 - y0)) as u32)
    }
}

fn check_radius(radius: usize) -> Result<()> {
    if radius == 0 {
        return Err(Error::Param("boundary radius must be at least 1".into()));
    }
    Ok(())
}

/// Per-category binary boundary maps, one per entry of `cats`.
pub fn semantic_boundary_maps(
    labels: &LabelMap,
    radius: usize,
    cats: &CategorySet,
) -> Result<Vec<BoundaryMap>> {
    check_radius(radius)?;
    labels.validate(cats)?;
    let (w, h) = (labels.width(), labels.height());
    let data = labels.data();
    let full = BBox::full(w.max(1), h.max(1));
    if w == 0 || h == 0 {
        return Ok(vec![BoundaryMap::empty(w, h); cats.len()]);
    }
    let valid = Integral::build(full, w, |i| data[i] != IGNORE_LABEL);

    // Bounding box of every category present, so each channel only scans
    // the neighbourhood of its own pixels.
    let mut extents: BTreeMap<u16, BBox> = BTreeMap::new();
    for (i, &l) in data.iter().enumerate() {
        if l == IGNORE_LABEL {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let px = BBox {
            x0: x,
            y0: y,
            x1: x + 1,
            y1: y + 1,
        };
        extents
            .entry(l)
            .and_modify(|b| *b = b.hull(&px))
            .or_insert(px);
    }

    let maps = cats
        .iter()
        .map(|cat| {
            let mut out = BoundaryMap::empty(w, h);
            let Some(extent) = extents.get(&cat.id) else {
                return out;
            };
            let scan = extent.dilate(radius, w, h);
            let region = scan.dilate(radius, w, h);
            let own = Integral::build(region, w, |i| data[i] == cat.id);
            for y in scan.y0..scan.y1 {
                for x in scan.x0..scan.x1 {
                    if data[y * w + x] == IGNORE_LABEL {
                        continue;
                    }
                    let (mine, _) = own.window(x, y, radius);
                    if mine == 0 {
                        continue;
                    }
                    let (labelled, _) = valid.window(x, y, radius);
                    if labelled > mine {
                        out.set(x, y, true);
                    }
                }
            }
            out
        })
        .collect();
    Ok(maps)
}

/// Per-category boundaries as a binary-valued probability map.
pub fn semantic_boundaries(
    labels: &LabelMap,
    radius: usize,
    cats: &CategorySet,
) -> Result<ProbMap> {
    let maps = semantic_boundary_maps(labels, radius, cats)?;
    if maps.is_empty() {
        return Ok(ProbMap::zeros(0, labels.width(), labels.height()));
    }
    Ok(ProbMap::from_boundaries(&maps))
}

/// One ground-truth instance per nonzero id, in ascending id order.
///
/// Instances without any edge pixel (an instance covering the whole canvas)
/// are dropped.
pub fn instance_boundaries(
    instances: &InstanceMap,
    manifest: &BTreeMap<u16, u16>,
    radius: usize,
) -> Result<Vec<GtInstance>> {
    check_radius(radius)?;
    let (w, h) = (instances.width(), instances.height());
    let data = instances.data();

    let mut extents: BTreeMap<u16, BBox> = BTreeMap::new();
    for (i, &id) in data.iter().enumerate() {
        if id == 0 {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let px = BBox {
            x0: x,
            y0: y,
            x1: x + 1,
            y1: y + 1,
        };
        extents
            .entry(id)
            .and_modify(|b| *b = b.hull(&px))
            .or_insert(px);
    }

    let mut out = Vec::with_capacity(extents.len());
    for (&id, tight) in &extents {
        let category = *manifest.get(&id).ok_or(Error::Manifest(id))?;
        let bbox = tight.dilate(radius, w, h);
        let region = bbox.dilate(radius, w, h);
        let own = Integral::build(region, w, |i| data[i] == id);
        let mut edges = BoundaryMap::empty(w, h);
        let mut any = false;
        for y in bbox.y0..bbox.y1 {
            for x in bbox.x0..bbox.x1 {
                let (mine, area) = own.window(x, y, radius);
                if mine > 0 && mine < area {
                    edges.set(x, y, true);
                    any = true;
                }
            }
        }
        if any {
            out.push(GtInstance {
                id,
                category,
                bbox,
                edges,
            });
        }
    }
    Ok(out)
}

/// Full conversion of one image. Labels outside `cats` must already have been
/// mapped to ignore; instances whose category is not in `cats` are dropped.
pub fn convert_scene(
    labels: &LabelMap,
    instances: &InstanceMap,
    manifest: &BTreeMap<u16, u16>,
    cats: &CategorySet,
    radius: usize,
) -> Result<GtScene> {
    if labels.width() != instances.width() || labels.height() != instances.height() {
        return Err(Error::Shape(format!(
            "label raster {}x{} vs instance raster {}x{}",
            labels.width(),
            labels.height(),
            instances.width(),
            instances.height()
        )));
    }
    let semantic = semantic_boundary_maps(labels, radius, cats)?;
    let mut kept = Vec::new();
    for inst in instance_boundaries(instances, manifest, radius)? {
        match cats.kind_of(inst.category) {
            None => continue,
            Some(CategoryKind::Stuff) => {
                return Err(Error::Param(format!(
                    "instance {} is assigned to stuff category {}",
                    inst.id, inst.category
                )))
            }
            Some(CategoryKind::Instance) => kept.push(inst),
        }
    }
    let ignore = labels.ignore_mask();
    let ignore = (!ignore.is_empty()).then_some(ignore);
    Ok(GtScene {
        semantic,
        instances: kept,
        ignore,
    })
}

/// Options for [`convert_dataset`].
#[derive(Debug, Clone)]
pub struct ConvertOptions {
    pub radius: usize,
    /// When set, only these category ids are kept; every other label becomes
    /// ignore.
    pub only: Option<Vec<u16>>,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            only: None,
        }
    }
}

/// Input files of one image inside a segmentation root.
#[derive(Debug, Clone)]
pub struct SegmentationSource {
    pub id: String,
    pub label: PathBuf,
    pub instance: PathBuf,
    pub sidecar: PathBuf,
}

pub const LABEL_SUFFIX: &str = "_label.png";
pub const INSTANCE_SUFFIX: &str = "_instance.png";
pub const SIDECAR_SUFFIX: &str = "_instance.json";

/// Images under `seg_root`, discovered by their `<id>_label.png` files and
/// sorted by id.
pub fn discover_sources(seg_root: &Path) -> Result<Vec<SegmentationSource>> {
    let rd = fs::read_dir(seg_root).map_err(|e| Error::io(seg_root, e))?;
    let mut ids = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(seg_root, e))?;
        let name = entry.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(LABEL_SUFFIX)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids
        .into_iter()
        .map(|id| SegmentationSource {
            label: seg_root.join(format!("{id}{LABEL_SUFFIX}")),
            instance: seg_root.join(format!("{id}{INSTANCE_SUFFIX}")),
            sidecar: seg_root.join(format!("{id}{SIDECAR_SUFFIX}")),
            id,
        })
        .collect())
}

/// Converts every image under `seg_root` and writes the converted files plus
/// `manifest.json` into `out_root`. Per-image failures are recorded in the
/// manifest's error list rather than aborting the run.
pub fn convert_dataset(
    seg_root: &Path,
    out_root: &Path,
    cats: &CategorySet,
    opts: &ConvertOptions,
) -> Result<DatasetManifest> {
    check_radius(opts.radius)?;
    let cats = match &opts.only {
        Some(ids) => cats.subset(ids),
        None => cats.clone(),
    };
    let sources = discover_sources(seg_root)?;
    fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;

    let results: Vec<std::result::Result<ImageEntry, ImageError>> = sources
        .par_iter()
        .map(|src| {
            convert_one(src, out_root, &cats, opts.radius).map_err(|e| ImageError {
                id: src.id.clone(),
                message: e.to_string(),
            })
        })
        .collect();

    let mut images = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(e) => images.push(e),
            Err(e) => errors.push(e),
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        categories: cats,
        radius: opts.radius,
        images,
        errors,
    };
    manifest.write(&out_root.join(crate::manifest::DATASET_MANIFEST_NAME))?;
    Ok(manifest)
}

fn convert_one(
    src: &SegmentationSource,
    out_root: &Path,
    cats: &CategorySet,
    radius: usize,
) -> Result<ImageEntry> {
    let labels = io::read_label_png(&src.label)?.restrict_to(cats);
    let instances = io::read_instance_png(&src.instance)?;
    let sidecar = if src.sidecar.exists() {
        io::read_instance_sidecar(&src.sidecar)?
    } else {
        BTreeMap::new()
    };
    let scene = convert_scene(&labels, &instances, &sidecar, cats, radius)?;

    let dir = out_root.join(&src.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut checksums = BTreeMap::new();
    let mut put = |rel: String, map: &ProbMap| -> Result<String> {
        let bytes = io::encode_prob_map(map);
        io::write_atomic(&out_root.join(&rel), &bytes)?;
        checksums.insert(rel.clone(), io::sha256_hex(&bytes));
        Ok(rel)
    };

    let semantic = if scene.semantic.is_empty() {
        ProbMap::zeros(0, labels.width(), labels.height())
    } else {
        ProbMap::from_boundaries(&scene.semantic)
    };
    let semantic = put(format!("{}/semantic.pedp", src.id), &semantic)?;
    let ignore = match &scene.ignore {
        Some(m) => Some(put(
            format!("{}/ignore.pedp", src.id),
            &ProbMap::from_boundary(m),
        )?),
        None => None,
    };
    let mut entries = Vec::with_capacity(scene.instances.len());
    for inst in &scene.instances {
        let crop = ProbMap::from_boundary(&inst.edges.crop(inst.bbox));
        let edges = put(format!("{}/inst_{}.pedp", src.id, inst.id), &crop)?;
        entries.push(InstanceEntry {
            id: inst.id,
            category: inst.category,
            bbox: inst.bbox,
            edges,
        });
    }
    Ok(ImageEntry {
        id: src.id.clone(),
        width: labels.width(),
        height: labels.height(),
        semantic,
        ignore,
        instances: entries,
        checksums,
    })
}
