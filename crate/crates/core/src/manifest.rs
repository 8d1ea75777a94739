//! Dataset and prediction manifests. File paths inside a manifest are
//! relative to the directory holding it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gt_convert::{GtInstance, GtScene};
use crate::io::{self, RangePolicy};
use crate::matching::PredInstance;
use crate::raster::{embed, BBox, BoundaryMap, Category, CategoryKind, CategorySet, ProbMap};

pub const MANIFEST_VERSION: u32 = 1;
pub const DATASET_MANIFEST_NAME: &str = "manifest.json";
pub const PREDICTION_MANIFEST_NAME: &str = "predictions.json";

mod category_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        cats: &CategorySet,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(cats.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<CategorySet, D::Error> {
        let list = Vec::<Category>::deserialize(d)?;
        CategorySet::new(list).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub id: u16,
    pub category: u16,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Single-channel crop covering `bbox`.
    pub edges: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// One channel per category, in category-set order.
    pub semantic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ignore: Option<String>,
    pub instances: Vec<InstanceEntry>,
    /// SHA-256 of every file above, keyed by relative path.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageError {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(with = "category_list")]
    pub categories: CategorySet,
    pub radius: usize,
    pub images: Vec<ImageEntry>,
    #[serde(default)]
    pub errors: Vec<ImageError>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = io::read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("manifest serializes");
    s.push('\n');
    io::write_atomic(path, s.as_bytes())
}

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != MANIFEST_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported manifest version {version}"),
        ));
    }
    Ok(())
}

fn check_unique<'a>(path: &Path, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::format(path, format!("duplicate image id {id:?}")));
        }
    }
    Ok(())
}

fn check_file(path: &Path, root: &Path, rel: &str) -> Result<()> {
    if !root.join(rel).is_file() {
        return Err(Error::format(
            path,
            format!("referenced file {rel} is missing"),
        ));
    }
    Ok(())
}

fn to_boundary(map: &ProbMap, k: usize) -> BoundaryMap {
    let plane = map.channel(k);
    BoundaryMap::from_fn(map.width(), map.height(), |x, y| {
        plane[y * map.width() + x] >= 0.5
    })
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Reads and validates a manifest; returns it with its root directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let m: Self = read_json(path)?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        check_version(path, m.version)?;
        check_unique(path, m.images.iter().map(|e| e.id.as_str()))?;
        for e in &m.images {
            check_file(path, &root, &e.semantic)?;
            if let Some(ig) = &e.ignore {
                check_file(path, &root, ig)?;
            }
            for inst in &e.instances {
                check_file(path, &root, &inst.edges)?;
                if m.categories.kind_of(inst.category) != Some(CategoryKind::Instance) {
                    return Err(Error::format(
                        path,
                        format!(
                            "instance {} of image {} has non-instance category {}",
                            inst.id, e.id, inst.category
                        ),
                    ));
                }
                if !inst.bbox.fits(e.width, e.height) {
                    return Err(Error::format(
                        path,
                        format!("instance {} box exceeds image {}", inst.id, e.id),
                    ));
                }
            }
        }
        Ok((m, root))
    }

    /// Recomputes every checksum; returns the relative paths that differ.
    pub fn verify_checksums(&self, root: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for e in &self.images {
            for (rel, sum) in &e.checksums {
                if io::sha256_hex(&io::read_bytes(&root.join(rel))?) != *sum {
                    bad.push(rel.clone());
                }
            }
        }
        Ok(bad)
    }

    /// Reads the converted ground truth of one image onto its full canvas.
    pub fn load_scene(&self, root: &Path, entry: &ImageEntry) -> Result<GtScene> {
        let (w, h) = (entry.width, entry.height);
        let sem_path = root.join(&entry.semantic);
        let sem = io::read_prob_map(&sem_path, RangePolicy::Strict)?;
        if sem.channels() != self.categories.len() || sem.width() != w || sem.height() != h {
            return Err(Error::format(
                &sem_path,
                format!(
                    "{}x{}x{} map for {} categories on {w}x{h}",
                    sem.channels(),
                    sem.height(),
                    sem.width(),
                    self.categories.len()
                ),
            ));
        }
        let semantic = (0..sem.channels()).map(|k| to_boundary(&sem, k)).collect();
        let ignore = match &entry.ignore {
            Some(rel) => {
                let p = root.join(rel);
                let m = io::read_prob_map(&p, RangePolicy::Strict)?;
                if m.channels() != 1 || m.width() != w || m.height() != h {
                    return Err(Error::format(&p, "ignore mask does not match the image"));
                }
                Some(to_boundary(&m, 0))
            }
            None => None,
        };
        let mut instances = Vec::with_capacity(entry.instances.len());
        for inst in &entry.instances {
            let p = root.join(&inst.edges);
            let crop = io::read_prob_map(&p, RangePolicy::Strict)?;
            let full =
                embed(&crop, inst.bbox, w, h).map_err(|e| Error::format(&p, e.to_string()))?;
            instances.push(GtInstance {
                id: inst.id,
                category: inst.category,
                bbox: inst.bbox,
                edges: to_boundary(&full, 0),
            });
        }
        Ok(GtScene {
            semantic,
            instances,
            ignore,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredEntry {
    pub category: u16,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Single-channel crop covering `bbox`.
    pub edges: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredImage {
    pub id: String,
    /// One channel per category of the dataset, in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<String>,
    #[serde(default)]
    pub instances: Vec<PredEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionManifest {
    pub version: u32,
    pub images: Vec<PredImage>,
}

/// How prediction files are encoded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PredFormat {
    /// `.pedp` float maps.
    #[default]
    Float,
    /// 8-bit PNG with channel planes stacked vertically.
    Quantized,
}

/// Decoded predictions of one image.
#[derive(Debug, Clone)]
pub struct ImagePredictions {
    pub semantic: Option<ProbMap>,
    pub instances: Vec<PredInstance>,
}

impl PredictionManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let m: Self = read_json(path)?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        check_version(path, m.version)?;
        check_unique(path, m.images.iter().map(|e| e.id.as_str()))?;
        for img in &m.images {
            if let Some(s) = &img.semantic {
                check_file(path, &root, s)?;
            }
            for p in &img.instances {
                check_file(path, &root, &p.edges)?;
            }
        }
        Ok((m, root))
    }

    /// Reads the maps of one image; `channels` is the dataset category count
    /// and `(width, height)` its canvas.
    pub fn load_image(
        root: &Path,
        img: &PredImage,
        channels: usize,
        (width, height): (usize, usize),
        format: PredFormat,
        policy: RangePolicy,
    ) -> Result<ImagePredictions> {
        let read = |rel: &str, k: usize| -> Result<ProbMap> {
            let p = root.join(rel);
            match format {
                PredFormat::Float => io::read_prob_map(&p, policy),
                PredFormat::Quantized => io::read_quantized_png(&p, k),
            }
        };
        let semantic = match &img.semantic {
            Some(rel) => {
                let m = read(rel, channels)?;
                if m.channels() != channels || m.width() != width || m.height() != height {
                    return Err(Error::format(
                        root.join(rel),
                        format!(
                            "{}x{}x{} prediction for {channels} categories on {width}x{height}",
                            m.channels(),
                            m.height(),
                            m.width()
                        ),
                    ));
                }
                Some(m)
            }
            None => None,
        };
        let mut instances = Vec::with_capacity(img.instances.len());
        for p in &img.instances {
            let path = root.join(&p.edges);
            if !p.bbox.fits(width, height) {
                return Err(Error::format(
                    &path,
                    format!("box {:?} exceeds the image", p.bbox),
                ));
            }
            let crop = read(&p.edges, 1)?;
            let inst = PredInstance::new(p.category, p.score, p.bbox, crop)
                .map_err(|e| Error::format(&path, e.to_string()))?;
            instances.push(inst);
        }
        Ok(ImagePredictions {
            semantic,
            instances,
        })
    }
}
