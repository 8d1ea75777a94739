//! File formats: 16-bit label and instance PNGs, the planar float
//! probability-map format, 8-bit quantized probability PNGs and report
//! serialization.
//!
//! Probability maps (`.pedp`) are little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `PEDP` |
//! | 2     | format version (1) |
//! | 2     | channel count K |
//! | 4     | height H |
//! | 4     | width W |
//! | 4·K·H·W | f32 values, channel-major then row-major |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::boundary::PrAccumulator;
use crate::error::{Error, Result};
use crate::metric::{MeanScores, Report};
use crate::raster::{InstanceMap, LabelMap, ProbMap};

pub const PEDP_MAGIC: &[u8; 4] = b"PEDP";
pub const PEDP_VERSION: u16 = 1;
const PEDP_HEADER: usize = 16;

/// Out-of-range handling when reading probability maps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum RangePolicy {
    /// Values outside `[0, 1]` are an error.
    Strict,
    /// Values outside `[0, 1]` are clamped. NaN is always an error.
    #[default]
    Clamp,
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn decode_gray16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = read_bytes(path)?;
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::format(
            path,
            format!(
                "expected 16-bit single-channel PNG, got {:?} at {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(w * h * 2)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let stride = frame.line_size;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * stride..y * stride + 2 * w];
        data.extend(
            row.chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]])),
        );
    }
    Ok((w, h, data))
}

fn encode_gray16(width: usize, height: usize, data: &[u16]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Invariant(e.to_string()))?;
        let raw: Vec<u8> = data.iter().flat_map(|v| v.to_be_bytes()).collect();
        writer
            .write_image_data(&raw)
            .map_err(|e| Error::Invariant(e.to_string()))?;
    }
    Ok(out)
}

/// Reads a category raster; 65535 marks ignore.
pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let (w, h, data) = decode_gray16(path)?;
    LabelMap::new(w, h, data)
}

/// Reads an instance-id raster; 0 is background.
pub fn read_instance_png(path: &Path) -> Result<InstanceMap> {
    let (w, h, data) = decode_gray16(path)?;
    InstanceMap::new(w, h, data)
}

pub fn write_label_png(path: &Path, map: &LabelMap) -> Result<()> {
    write_atomic(path, &encode_gray16(map.width(), map.height(), map.data())?)
}

pub fn write_instance_png(path: &Path, map: &InstanceMap) -> Result<()> {
    write_atomic(path, &encode_gray16(map.width(), map.height(), map.data())?)
}

/// Instance id to category id, stored as a JSON object keyed by the decimal
/// instance id.
pub fn read_instance_sidecar(path: &Path) -> Result<BTreeMap<u16, u16>> {
    let bytes = read_bytes(path)?;
    let raw: BTreeMap<String, u16> =
        serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<u16>()
                .map(|k| (k, v))
                .map_err(|_| Error::format(path, format!("instance id {k:?} is not an integer")))
        })
        .collect()
}

pub fn write_instance_sidecar(path: &Path, manifest: &BTreeMap<u16, u16>) -> Result<()> {
    let raw: BTreeMap<String, u16> = manifest.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let mut s = serde_json::to_string_pretty(&raw).expect("map serializes");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn encode_prob_map(map: &ProbMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(PEDP_HEADER + 4 * map.values().len());
    out.extend_from_slice(PEDP_MAGIC);
    out.extend_from_slice(&PEDP_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.channels() as u16).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    for v in map.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_prob_map(bytes: &[u8], path: &Path, policy: RangePolicy) -> Result<ProbMap> {
    if bytes.len() < PEDP_HEADER || &bytes[..4] != PEDP_MAGIC {
        return Err(Error::format(path, "missing PEDP magic"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at =
        |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = u16_at(4);
    if version != PEDP_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let k = u16_at(6) as usize;
    let h = u32_at(8) as usize;
    let w = u32_at(12) as usize;
    let n = k * h * w;
    if bytes.len() != PEDP_HEADER + 4 * n {
        return Err(Error::format(
            path,
            format!(
                "{} payload bytes for {k}x{h}x{w}",
                bytes.len() - PEDP_HEADER
            ),
        ));
    }
    let mut values = Vec::with_capacity(n);
    for (i, c) in bytes[PEDP_HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        values.push(check_value(v, i, path, policy)?);
    }
    ProbMap::new(k, w, h, values)
}

fn check_value(v: f32, index: usize, path: &Path, policy: RangePolicy) -> Result<f32> {
    if (0.0..=1.0).contains(&v) {
        return Ok(v);
    }
    if v.is_nan() || policy == RangePolicy::Strict {
        return Err(Error::Range {
            path: path.to_path_buf(),
            index,
            value: v,
        });
    }
    Ok(v.clamp(0.0, 1.0))
}

pub fn read_prob_map(path: &Path, policy: RangePolicy) -> Result<ProbMap> {
    decode_prob_map(&read_bytes(path)?, path, policy)
}

pub fn write_prob_map(path: &Path, map: &ProbMap) -> Result<()> {
    write_atomic(path, &encode_prob_map(map))
}

/// Reads an 8-bit greyscale PNG holding `channels` planes stacked
/// vertically (so its height is `channels * H`); values are `byte / 255`.
pub fn read_quantized_png(path: &Path, channels: usize) -> Result<ProbMap> {
    let bytes = read_bytes(path)?;
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "expected 8-bit single-channel PNG"));
    }
    let (w, total_h) = (info.width as usize, info.height as usize);
    if channels == 0 || total_h % channels != 0 {
        return Err(Error::format(
            path,
            format!("height {total_h} does not split into {channels} planes"),
        ));
    }
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(w * total_h)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut values = Vec::with_capacity(w * total_h);
    for y in 0..total_h {
        let row = &buf[y * frame.line_size..y * frame.line_size + w];
        values.extend(row.iter().map(|&b| f32::from(b) / 255.0));
    }
    ProbMap::new(channels, w, total_h / channels, values)
}

pub fn write_quantized_png(path: &Path, map: &ProbMap) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(
            &mut out,
            map.width() as u32,
            (map.height() * map.channels()) as u32,
        );
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Invariant(e.to_string()))?;
        let raw: Vec<u8> = map
            .values()
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect();
        writer
            .write_image_data(&raw)
            .map_err(|e| Error::Invariant(e.to_string()))?;
    }
    write_atomic(path, &out)
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

pub fn report_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// One row per category (percentages, one decimal) plus mean rows.
pub fn report_csv(report: &Report) -> String {
    let mut s = String::from("category,name,kind,f_edge,f_object,f2\n");
    for c in &report.categories {
        let kind = match c.kind {
            crate::raster::CategoryKind::Stuff => "stuff",
            crate::raster::CategoryKind::Instance => "instance",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            c.category,
            csv_field(&c.name),
            kind,
            pct(c.f_edge),
            pct(c.f_object),
            pct(c.f2)
        );
    }
    let mut mean_row = |label: &str, m: &Option<MeanScores>| {
        if let Some(m) = m {
            let _ = writeln!(
                s,
                "mean,{label},{label},{},{},{}",
                pct(m.f_edge),
                pct(m.f_object),
                pct(m.f2)
            );
        }
    };
    mean_row("stuff", &report.stuff_mean);
    mean_row("instance", &report.instance_mean);
    mean_row("overall", &report.overall_mean);
    s
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

pub fn write_report(report: &Report, json_path: &Path, csv_path: Option<&Path>) -> Result<()> {
    write_atomic(json_path, report_json(report).as_bytes())?;
    if let Some(p) = csv_path {
        write_atomic(p, report_csv(report).as_bytes())?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Report> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-threshold precision/recall points as CSV.
pub fn pr_csv(acc: &PrAccumulator) -> String {
    let mut s = String::from("threshold,precision,recall,f\n");
    for (t, p, r, f) in acc.pr_points() {
        let _ = writeln!(s, "{t},{p},{r},{f}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{ConfigEcho, InstanceEdgeMode};

    #[test]
    fn label_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.png");
        let map = LabelMap::new(2, 2, vec![1, 1, 2, 65535]).unwrap();
        write_label_png(&p, &map).unwrap();
        let back = read_label_png(&p).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.ignore_mask().count(), 1);
    }

    #[test]
    fn eight_bit_label_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.png");
        write_quantized_png(&p, &ProbMap::zeros(1, 2, 2)).unwrap();
        assert!(matches!(read_label_png(&p), Err(Error::Format { .. })));
        assert!(matches!(
            read_label_png(&dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn prob_map_header_layout() {
        let map = ProbMap::new(2, 2, 1, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let bytes = encode_prob_map(&map);
        assert_eq!(&bytes[..4], b"PEDP");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..8], &[2, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[2, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 16);
        let back = decode_prob_map(&bytes, Path::new("m"), RangePolicy::Strict).unwrap();
        assert_eq!(back.channels(), 2);
        assert_eq!((back.height(), back.width()), (1, 2));
        assert_eq!(back.values(), map.values());
    }

    #[test]
    fn prob_map_range_and_magic() {
        let mut bytes = encode_prob_map(&ProbMap::zeros(1, 1, 1));
        bytes[16..20].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(
            decode_prob_map(&bytes, Path::new("m"), RangePolicy::Strict),
            Err(Error::Range { .. })
        ));
        let clamped = decode_prob_map(&bytes, Path::new("m"), RangePolicy::Clamp).unwrap();
        assert_eq!(clamped.values(), &[1.0]);
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_prob_map(&bytes, Path::new("m"), RangePolicy::Clamp).is_err());

        let mut bad = encode_prob_map(&ProbMap::zeros(1, 1, 1));
        bad[0] = b'X';
        assert!(matches!(
            decode_prob_map(&bad, Path::new("m"), RangePolicy::Strict),
            Err(Error::Format { .. })
        ));
        let mut bad = encode_prob_map(&ProbMap::zeros(1, 1, 1));
        bad[4] = 9;
        assert!(matches!(
            decode_prob_map(&bad, Path::new("m"), RangePolicy::Strict),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn quantized_planes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.png");
        let map = ProbMap::new(2, 2, 1, vec![0.0, 1.0, 51.0 / 255.0, 1.0]).unwrap();
        write_quantized_png(&p, &map).unwrap();
        let back = read_quantized_png(&p, 2).unwrap();
        assert_eq!(back, map);
        assert!(read_quantized_png(&p, 3).is_err());
    }

    fn report_with_instance_mean() -> Report {
        Report {
            config: ConfigEcho {
                tolerance: "0.0035".into(),
                grid: vec![0.5],
                radius: Some(2),
                top_t: 2,
                iou_min: 0.5,
                min_score: 0.0,
                instance_edge_mode: InstanceEdgeMode::DatasetOds,
            },
            categories: vec![],
            skipped: vec![],
            stuff_mean: None,
            instance_mean: Some(MeanScores {
                f_edge: 0.678,
                f_object: 0.555,
                f2: 0.376,
                count: 8,
            }),
            overall_mean: None,
        }
    }

    #[test]
    fn csv_renders_percentages() {
        let csv = report_csv(&report_with_instance_mean());
        assert!(
            csv.contains("mean,instance,instance,67.8,55.5,37.6\n"),
            "{csv}"
        );
        assert!(!csv.contains("skip"));
        let json = report_json(&report_with_instance_mean());
        assert!(json.contains("\"skipped\": []"));
    }

    #[test]
    fn report_files_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let r = report_with_instance_mean();
        let (j, c) = (dir.path().join("r.json"), dir.path().join("r.csv"));
        write_report(&r, &j, Some(&c)).unwrap();
        let first = (fs::read(&j).unwrap(), fs::read(&c).unwrap());
        write_report(&r, &j, Some(&c)).unwrap();
        assert_eq!(first, (fs::read(&j).unwrap(), fs::read(&c).unwrap()));
        assert_eq!(read_report(&j).unwrap(), r);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let m = BTreeMap::from([(1u16, 11u16), (7, 12)]);
        write_instance_sidecar(&p, &m).unwrap();
        assert_eq!(read_instance_sidecar(&p).unwrap(), m);
    }
}
