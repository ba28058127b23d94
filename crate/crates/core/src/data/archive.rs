//! On-disk benchmark format: a structured text index plus one binary array
//! archive, instead of thousands of image files.
//!
//! A benchmark directory contains:
//!
//! - `meta.toml` — format version, generator seed, the full spec, image
//!   shape, dtype, and per-split counts.
//! - `manifest.csv` — one row per sample with the fixed column order
//!   `sample_id,split,array_index,label,environment,glyph_x0,glyph_y0,glyph_x1,glyph_y1,occluded`
//!   (empty cells where a field does not apply; `occluded` is 0/1).
//! - `arrays.bin` — raw little-endian `f32` pixels, sample-major
//!   `[N, C, H, W]`, ordered by `array_index`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::data::dataset::{Dataset, TransformSpec};
use crate::data::spurious::{BenchmarkManifest, SampleRecord, Split, SpuriousSpec};
use crate::error::{Error, Result};
use crate::num::Float;

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetaFile {
    format_version: u32,
    seed: u64,
    dtype: String,
    image_shape: (usize, usize, usize),
    num_samples: usize,
    archive: String,
    manifest: String,
    counts: std::collections::BTreeMap<String, usize>,
    spec: SpuriousSpec,
}

fn manifest_csv(manifest: &BenchmarkManifest) -> String {
    let mut out = String::from(
        "sample_id,split,array_index,label,environment,glyph_x0,glyph_y0,glyph_x1,glyph_y1,occluded\n",
    );
    for r in &manifest.records {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        let bbox = r
            .glyph_bbox
            .map(|(x0, y0, x1, y1)| format!("{x0},{y0},{x1},{y1}"))
            .unwrap_or_else(|| ",,,".to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.sample_id,
            r.split.as_str(),
            r.array_index,
            label,
            r.environment,
            bbox,
            r.occluded as u8
        )
        .unwrap();
    }
    out
}

fn parse_manifest_csv(text: &str) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 10 {
            return Err(Error::ConfigParse(format!(
                "manifest row {} has {} fields, expected 10",
                lineno + 1,
                parts.len()
            )));
        }
        let split = Split::from_str_tag(parts[1])
            .ok_or_else(|| Error::ConfigParse(format!("unknown split `{}`", parts[1])))?;
        let parse_usize = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::ConfigParse(format!("bad {what} `{s}` in manifest")))
        };
        let label = if parts[3].is_empty() {
            None
        } else {
            Some(parse_usize(parts[3], "label")?)
        };
        let glyph_bbox = if parts[5].is_empty() {
            None
        } else {
            Some((
                parse_usize(parts[5], "glyph_x0")?,
                parse_usize(parts[6], "glyph_y0")?,
                parse_usize(parts[7], "glyph_x1")?,
                parse_usize(parts[8], "glyph_y1")?,
            ))
        };
        let occluded = match parts[9] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::ConfigParse(format!(
                    "bad occluded flag `{other}` in manifest"
                )))
            }
        };
        records.push(SampleRecord {
            sample_id: parts[0].to_string(),
            split,
            array_index: parse_usize(parts[2], "array_index")?,
            label,
            environment: parse_usize(parts[4], "environment")? as u8,
            glyph_bbox,
            occluded,
        });
    }
    Ok(records)
}

/// Writes a benchmark directory. Identical inputs produce identical bytes.
pub fn write_benchmark(dir: &Path, manifest: &BenchmarkManifest, images: &Array4<f32>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let shape = images.shape();
    let mut counts = std::collections::BTreeMap::new();
    for split in Split::ALL {
        let n = manifest.records_of(split).count();
        if n > 0 {
            counts.insert(split.as_str().to_string(), n);
        }
    }
    let meta = MetaFile {
        format_version: ARCHIVE_FORMAT_VERSION,
        seed: manifest.seed,
        dtype: "f32le".to_string(),
        image_shape: (shape[1], shape[2], shape[3]),
        num_samples: shape[0],
        archive: "arrays.bin".to_string(),
        manifest: "manifest.csv".to_string(),
        counts,
        spec: manifest.spec.clone(),
    };
    let meta_text =
        toml::to_string_pretty(&meta).map_err(|e| Error::ConfigParse(e.to_string()))?;
    let meta_path = dir.join("meta.toml");
    std::fs::write(&meta_path, meta_text).map_err(|e| Error::io(&meta_path, e))?;

    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest_csv(manifest))
        .map_err(|e| Error::io(&manifest_path, e))?;

    let data = images.as_slice().expect("contiguous image archive");
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let bin_path = dir.join("arrays.bin");
    std::fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    Ok(())
}

/// Reads a benchmark directory back into a manifest and the image archive.
pub fn read_benchmark(dir: &Path) -> Result<(BenchmarkManifest, Array4<f32>)> {
    let meta_path = dir.join("meta.toml");
    if !meta_path.is_file() {
        return Err(Error::MissingDirectory { path: dir.into() });
    }
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MetaFile =
        toml::from_str(&meta_text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    if meta.format_version != ARCHIVE_FORMAT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "benchmark format version {} unsupported (expected {ARCHIVE_FORMAT_VERSION})",
            meta.format_version
        )));
    }
    if meta.dtype != "f32le" {
        return Err(Error::ConfigParse(format!(
            "unsupported archive dtype `{}`",
            meta.dtype
        )));
    }
    let manifest_path = dir.join(&meta.manifest);
    let manifest_text =
        std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let records = parse_manifest_csv(&manifest_text)?;

    let bin_path = dir.join(&meta.archive);
    let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let (c, h, w) = meta.image_shape;
    let expected = meta.num_samples * c * h * w * 4;
    if bytes.len() != expected {
        return Err(Error::ConfigParse(format!(
            "archive has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(meta.num_samples * c * h * w);
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    let images = Array4::from_shape_vec((meta.num_samples, c, h, w), data)
        .map_err(|e| Error::ConfigParse(e.to_string()))?;
    let manifest = BenchmarkManifest {
        format_version: meta.format_version,
        seed: meta.seed,
        spec: meta.spec,
        records,
    };
    Ok((manifest, images))
}

/// Extracts one split of a benchmark as an in-memory dataset.
pub fn load_split<F: Float>(
    manifest: &BenchmarkManifest,
    images: &Array4<f32>,
    split: Split,
) -> Result<Dataset<F>> {
    let records: Vec<&SampleRecord> = manifest.records_of(split).collect();
    if records.is_empty() {
        return Err(Error::MissingDirectory {
            path: format!("<benchmark split {}>", split.as_str()).into(),
        });
    }
    let s = images.shape();
    let mut data = Array4::<F>::zeros((records.len(), s[1], s[2], s[3]));
    let mut labels = Vec::new();
    let mut sample_ids = Vec::with_capacity(records.len());
    let labeled = records.iter().all(|r| r.label.is_some());
    for (row, r) in records.iter().enumerate() {
        let src = images.index_axis(ndarray::Axis(0), r.array_index);
        data.index_axis_mut(ndarray::Axis(0), row)
            .assign(&src.mapv(|v| F::from_f64_lossy(v as f64)));
        if labeled {
            labels.push(r.label.unwrap());
        }
        sample_ids.push(r.sample_id.clone());
    }
    Ok(Dataset {
        images: data,
        labels,
        sample_ids,
        class_names: if labeled {
            vec!["class0".to_string(), "class1".to_string()]
        } else {
            Vec::new()
        },
        value_range: (0.0, 1.0),
        transform: TransformSpec::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::spurious::{generate_spurious_benchmark, SplitCounts};

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("oodkit-archive-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn tiny_benchmark() -> (BenchmarkManifest, Array4<f32>) {
        let spec = SpuriousSpec {
            counts: SplitCounts {
                train: 12,
                val_id: 4,
                test_id: 4,
                spurious_ood: 4,
                conventional_ood: 4,
                fine_grained_ood: 2,
            },
            ..SpuriousSpec::desk_default()
        };
        generate_spurious_benchmark(&spec, 99).unwrap()
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tmpdir("roundtrip");
        let (manifest, images) = tiny_benchmark();
        write_benchmark(&dir, &manifest, &images).unwrap();
        let (back_m, back_i) = read_benchmark(&dir).unwrap();
        assert_eq!(back_m, manifest);
        assert_eq!(back_i, images);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn identical_generation_writes_identical_bytes() {
        let d1 = tmpdir("bytes1");
        let d2 = tmpdir("bytes2");
        let (m, i) = tiny_benchmark();
        write_benchmark(&d1, &m, &i).unwrap();
        write_benchmark(&d2, &m, &i).unwrap();
        for f in ["meta.toml", "manifest.csv", "arrays.bin"] {
            let a = std::fs::read(d1.join(f)).unwrap();
            let b = std::fs::read(d2.join(f)).unwrap();
            assert_eq!(a, b, "{f} differs");
        }
        std::fs::remove_dir_all(&d1).ok();
        std::fs::remove_dir_all(&d2).ok();
    }

    #[test]
    fn load_split_extracts_labels() {
        let (manifest, images) = tiny_benchmark();
        let train: Dataset<f32> = load_split(&manifest, &images, Split::Train).unwrap();
        assert_eq!(train.len(), 12);
        assert_eq!(train.labels.len(), 12);
        let ood: Dataset<f32> = load_split(&manifest, &images, Split::SpuriousOod).unwrap();
        assert!(ood.labels.is_empty());
    }

    #[test]
    fn missing_directory_is_reported() {
        let err = read_benchmark(Path::new("/nonexistent/oodkit-bench")).unwrap_err();
        assert!(matches!(err, Error::MissingDirectory { .. }));
    }
}
