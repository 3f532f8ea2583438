//! On-disk dataset layout and round-trip I/O.
//!
//! A dataset directory holds `manifest.json` (generator config plus the
//! train/test split), `images/<id>.pgm`, `masks/<id>.pgm`, and
//! `annotations.jsonl` with one `{"id", "major", "minor"}` object per
//! line. Everything round-trips bit-exactly: images are 8-bit quantized
//! at generation time and annotation coordinates survive JSON.

use crate::geometry::{AspectAnnotation, Point2};
use crate::pgm;
use crate::synth::{split_indices, SampleRecord, SynthConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset i/o failed for {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Pgm(#[from] pgm::PgmError),
    #[error("bad dataset entry {id}: {reason}")]
    Format { id: String, reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub config: SynthConfig,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub manifest: Manifest,
}

impl Dataset {
    /// Generate a dataset in memory, including its split.
    pub fn generate(cfg: &SynthConfig) -> Result<Self, crate::synth::SynthError> {
        let records = crate::synth::synth_dataset(cfg)?;
        let (train, test) = split_indices(cfg.n, cfg.split_ratio, cfg.seed);
        let split = Split {
            train: train.iter().map(|&i| records[i].id.clone()).collect(),
            test: test.iter().map(|&i| records[i].id.clone()).collect(),
        };
        Ok(Self {
            records,
            manifest: Manifest {
                config: cfg.clone(),
                split,
            },
        })
    }

    pub fn record(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    fn subset(&self, ids: &[String]) -> Vec<SampleRecord> {
        ids.iter()
            .filter_map(|id| self.record(id).cloned())
            .collect()
    }

    pub fn train_records(&self) -> Vec<SampleRecord> {
        if self.manifest.split.train.is_empty() {
            self.records.clone()
        } else {
            self.subset(&self.manifest.split.train)
        }
    }

    pub fn test_records(&self) -> Vec<SampleRecord> {
        self.subset(&self.manifest.split.test)
    }
}

#[derive(Serialize, Deserialize)]
struct AnnotationLine {
    id: String,
    major: [[f64; 2]; 2],
    minor: [[f64; 2]; 2],
}

fn to_line(id: &str, ann: &AspectAnnotation) -> AnnotationLine {
    let p = |pt: Point2| [pt.x, pt.y];
    AnnotationLine {
        id: id.to_string(),
        major: [p(ann.major[0]), p(ann.major[1])],
        minor: [p(ann.minor[0]), p(ann.minor[1])],
    }
}

fn from_line(line: &AnnotationLine) -> AspectAnnotation {
    let p = |a: [f64; 2]| Point2::new(a[0], a[1]);
    AspectAnnotation::new(
        [p(line.major[0]), p(line.major[1])],
        [p(line.minor[0]), p(line.minor[1])],
    )
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<(), DatasetError> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    std::fs::create_dir_all(&images).map_err(|e| io_err(&images, e))?;
    std::fs::create_dir_all(&masks).map_err(|e| io_err(&masks, e))?;

    let manifest_path = dir.join("manifest.json");
    let manifest = serde_json::to_string_pretty(&dataset.manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, manifest).map_err(|e| io_err(&manifest_path, e))?;

    let mut lines = String::new();
    for rec in &dataset.records {
        let bytes: Vec<u8> = rec
            .image
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        pgm::write_gray(&images.join(format!("{}.pgm", rec.id)), rec.width, rec.height, &bytes)?;
        pgm::write_mask(&masks.join(format!("{}.pgm", rec.id)), &rec.gt)?;
        lines.push_str(&serde_json::to_string(&to_line(&rec.id, &rec.ann)).expect("annotation"));
        lines.push('\n');
    }
    let ann_path = dir.join("annotations.jsonl");
    std::fs::write(&ann_path, lines).map_err(|e| io_err(&ann_path, e))?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let images = dir.join("images");
    if !images.is_dir() {
        return Ok(Dataset::default()); // empty directory, empty dataset
    }
    let mut ids: Vec<String> = std::fs::read_dir(&images)
        .map_err(|e| io_err(&images, e))?
        .filter_map(|entry| {
            let name = entry.ok()?.file_name().into_string().ok()?;
            name.strip_suffix(".pgm").map(str::to_string)
        })
        .collect();
    ids.sort();

    let mut annotations: BTreeMap<String, AspectAnnotation> = BTreeMap::new();
    let ann_path = dir.join("annotations.jsonl");
    if ann_path.exists() {
        let text = std::fs::read_to_string(&ann_path).map_err(|e| io_err(&ann_path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: AnnotationLine =
                serde_json::from_str(line).map_err(|e| DatasetError::Format {
                    id: format!("annotations.jsonl:{}", lineno + 1),
                    reason: e.to_string(),
                })?;
            annotations.insert(parsed.id.clone(), from_line(&parsed));
        }
    }

    let mut records = Vec::with_capacity(ids.len());
    for id in &ids {
        let (w, h, bytes) = pgm::read_gray(&images.join(format!("{id}.pgm")))?;
        let gt = pgm::read_mask(&dir.join("masks").join(format!("{id}.pgm")))?;
        let ann = annotations
            .get(id)
            .copied()
            .ok_or_else(|| DatasetError::Format {
                id: id.clone(),
                reason: "missing annotation line".into(),
            })?;
        if gt.height() != h || gt.width() != w {
            return Err(DatasetError::Format {
                id: id.clone(),
                reason: "image and mask sizes differ".into(),
            });
        }
        records.push(SampleRecord {
            id: id.clone(),
            height: h,
            width: w,
            image: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
            gt,
            ann,
        });
    }

    let manifest_path = dir.join("manifest.json");
    let manifest = if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Format {
            id: "manifest.json".into(),
            reason: e.to_string(),
        })?
    } else {
        Manifest::default()
    };
    Ok(Dataset { records, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dataset() -> Dataset {
        let cfg = SynthConfig {
            n: 6,
            ..SynthConfig::default()
        };
        Dataset::generate(&cfg).unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        write_dataset(dir.path(), &ds).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.records.len(), back.records.len());
        for (a, b) in ds.records.iter().zip(back.records.iter()) {
            assert_eq!(a, b, "record {} round trip", a.id);
        }
        assert_eq!(ds.manifest, back.manifest);

        // Writing again produces byte-identical files.
        let dir2 = tempfile::tempdir().unwrap();
        write_dataset(dir2.path(), &back).unwrap();
        let a = std::fs::read(dir.path().join("annotations.jsonl")).unwrap();
        let b = std::fs::read(dir2.path().join("annotations.jsonl")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_annotation_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        write_dataset(dir.path(), &ds).unwrap();
        // Drop one annotation line.
        let ann_path = dir.path().join("annotations.jsonl");
        let text = std::fs::read_to_string(&ann_path).unwrap();
        let kept: Vec<&str> = text.lines().skip(1).collect();
        std::fs::write(&ann_path, kept.join("\n")).unwrap();
        match read_dataset(dir.path()) {
            Err(DatasetError::Format { id, .. }) => assert_eq!(id, ds.records[0].id),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn empty_directory_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert!(ds.records.is_empty());
    }

    #[test]
    fn split_uses_generated_ids() {
        let ds = small_dataset();
        let train = ds.train_records();
        let test = ds.test_records();
        assert_eq!(train.len() + test.len(), ds.records.len());
        assert!(train.iter().all(|r| !test.iter().any(|t| t.id == r.id)));
    }
}
