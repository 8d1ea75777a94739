//! Seeded synthetic segmentation scenes: three wavy stuff bands, five or six
//! non-overlapping elliptical instances and a small ignore patch over stuff.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Result;
use crate::gt_convert::{INSTANCE_SUFFIX, LABEL_SUFFIX, SIDECAR_SUFFIX};
use crate::io;
use crate::perturb::Draws;
use crate::raster::{Category, CategoryKind, CategorySet, InstanceMap, LabelMap, IGNORE_LABEL};

pub const STUFF_IDS: [u16; 3] = [1, 2, 3];
pub const INSTANCE_IDS: [u16; 3] = [11, 12, 13];
pub const CATEGORIES_FILE: &str = "categories.json";

pub fn synth_categories() -> CategorySet {
    let names = ["road", "vegetation", "sky", "car", "person", "bicycle"];
    let ids = STUFF_IDS.iter().chain(&INSTANCE_IDS);
    CategorySet::new(
        ids.zip(names)
            .enumerate()
            .map(|(i, (&id, name))| Category {
                id,
                name: name.to_string(),
                kind: if i < 3 {
                    CategoryKind::Stuff
                } else {
                    CategoryKind::Instance
                },
            })
            .collect(),
    )
    .expect("static categories")
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub labels: LabelMap,
    pub instances: InstanceMap,
    /// Instance id to category id.
    pub manifest: BTreeMap<u16, u16>,
}

/// Scene `index` of the sequence drawn from `seed`.
pub fn synth_scene(seed: u64, index: u64, width: usize, height: usize) -> SynthScene {
    assert!(
        width >= 24 && height >= 24,
        "synthetic scenes need at least 24x24"
    );
    let mut rng = Draws::new(seed, index);
    let (w, h) = (width as f64, height as f64);

    let mut wave = |base: f64| {
        let amp = h * (0.02 + 0.04 * rng.unit());
        let freq = (1.0 + 3.0 * rng.unit()) * std::f64::consts::TAU / w;
        let phase = rng.unit() * std::f64::consts::TAU;
        move |x: usize| base * h + amp * (x as f64 * freq + phase).sin()
    };
    let b1 = wave(0.33);
    let b2 = wave(0.66);

    let mut labels = vec![0u16; width * height];
    for y in 0..height {
        for x in 0..width {
            let yf = y as f64;
            labels[y * width + x] = if yf < b1(x) {
                STUFF_IDS[2]
            } else if yf < b2(x) {
                STUFF_IDS[1]
            } else {
                STUFF_IDS[0]
            };
        }
    }

    // one ellipse per cell of a 3x2 grid keeps instances apart
    let (cw, ch) = (width / 3, height / 2);
    let n = 5 + rng.below(2);
    let mut cells: Vec<usize> = (0..6).collect();
    for i in (1..6).rev() {
        cells.swap(i, rng.below(i + 1));
    }
    let mut inst = vec![0u16; width * height];
    let mut manifest = BTreeMap::new();
    for (k, &cell) in cells[..n].iter().enumerate() {
        let id = k as u16 + 1;
        let category = INSTANCE_IDS[rng.below(3)];
        let (ox, oy) = ((cell % 3) * cw, (cell / 3) * ch);
        let half_w = (cw as f64 - 4.0) / 2.0;
        let half_h = (ch as f64 - 4.0) / 2.0;
        let rx = half_w * (0.45 + 0.5 * rng.unit());
        let ry = half_h * (0.45 + 0.5 * rng.unit());
        let cx = ox as f64 + 2.0 + half_w + (half_w - rx) * (2.0 * rng.unit() - 1.0);
        let cy = oy as f64 + 2.0 + half_h + (half_h - ry) * (2.0 * rng.unit() - 1.0);
        for y in oy..oy + ch {
            for x in ox..ox + cw {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    inst[y * width + x] = id;
                    labels[y * width + x] = category;
                }
            }
        }
        manifest.insert(id, category);
    }

    let (iw, ih) = ((width / 16).max(2), (height / 16).max(2));
    let ix = rng.below(width - iw);
    let iy = rng.below(height - ih);
    for y in iy..iy + ih {
        for x in ix..ix + iw {
            // the patch only covers stuff so every instance stays whole
            if inst[y * width + x] == 0 {
                labels[y * width + x] = IGNORE_LABEL;
            }
        }
    }

    SynthScene {
        labels: LabelMap::new(width, height, labels).expect("sized"),
        instances: InstanceMap::new(width, height, inst).expect("sized"),
        manifest,
    }
}

/// Image ids used by [`write_synth_dataset`].
pub fn synth_image_id(index: usize) -> String {
    format!("scene{index:03}")
}

/// Writes `count` scenes as a segmentation root plus `categories.json`.
pub fn write_synth_dataset(
    dir: &Path,
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<()> {
    for i in 0..count {
        let s = synth_scene(seed, i as u64, width, height);
        let id = synth_image_id(i);
        io::write_label_png(&dir.join(format!("{id}{LABEL_SUFFIX}")), &s.labels)?;
        io::write_instance_png(&dir.join(format!("{id}{INSTANCE_SUFFIX}")), &s.instances)?;
        io::write_instance_sidecar(&dir.join(format!("{id}{SIDECAR_SUFFIX}")), &s.manifest)?;
    }
    let mut cats = serde_json::to_string_pretty(&synth_categories()).expect("categories serialize");
    cats.push('\n');
    io::write_atomic(&dir.join(CATEGORIES_FILE), cats.as_bytes())
}
