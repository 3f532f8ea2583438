//! Segmentation evaluation metrics.
//!
//! Overlap metrics (DSC, Jaccard, precision, recall), boundary metrics
//! (directed average surface distance and the 95th-percentile Hausdorff
//! distance) built on an exact two-pass Euclidean distance transform, and
//! the per-shape pseudo-label fidelity table.
//!
//! Conventions, frozen here and mirrored by the brute-force test oracles:
//! boundaries are foreground pixels 4-adjacent to background or to the
//! image border; pixel distance is the Euclidean distance between integer
//! pixel coordinates; ASD is directed (prediction boundary to reference
//! boundary); HD95 is the linearly interpolated 95th percentile of the
//! union of both directed distance multisets. If exactly one boundary is
//! empty both surface metrics report the image diagonal; if both are
//! empty they report zero.

use crate::geometry::{self, AspectAnnotation, ShapeKind};
use crate::mask::BinaryMask;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("mask shapes differ")]
    ShapeMismatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("report i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

/// All per-image metrics for one prediction/reference pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub dsc: f64,
    pub jaccard: f64,
    pub asd: f64,
    pub hd95: f64,
    pub precision: f64,
    pub recall: f64,
}

impl MetricReport {
    pub fn compute(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self, MetricError> {
        let (dsc, jaccard, precision, recall) = overlap_metrics(pred, gt)?;
        let (asd, hd95) = surface_metrics(pred, gt)?;
        Ok(Self {
            dsc,
            jaccard,
            asd,
            hd95,
            precision,
            recall,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [
            self.dsc,
            self.jaccard,
            self.asd,
            self.hd95,
            self.precision,
            self.recall,
        ]
    }
}

/// DSC, Jaccard, precision and recall of `pred` against `gt`.
///
/// Empty-set convention: both masks empty reports all ones; exactly one
/// empty reports all zeros.
pub fn overlap_metrics(
    pred: &BinaryMask,
    gt: &BinaryMask,
) -> Result<(f64, f64, f64, f64), MetricError> {
    if !pred.same_shape(gt) {
        return Err(MetricError::ShapeMismatch);
    }
    let mut inter = 0usize;
    let mut a = 0usize;
    let mut b = 0usize;
    for (&pa, &pb) in pred.bits().iter().zip(gt.bits()) {
        a += pa as usize;
        b += pb as usize;
        inter += (pa & pb) as usize;
    }
    if a == 0 && b == 0 {
        return Ok((1.0, 1.0, 1.0, 1.0));
    }
    if a == 0 || b == 0 {
        return Ok((0.0, 0.0, 0.0, 0.0));
    }
    let union = a + b - inter;
    Ok((
        2.0 * inter as f64 / (a + b) as f64,
        inter as f64 / union as f64,
        inter as f64 / a as f64,
        inter as f64 / b as f64,
    ))
}

/// Exact Euclidean distance of every pixel to the nearest foreground
/// pixel (infinity everywhere for an empty mask). Two-pass squared
/// transform: per-column nearest-site scan, then a lower-envelope-of-
/// parabolas sweep along rows.
pub fn distance_transform(mask: &BinaryMask) -> Vec<f64> {
    squared_distance_transform(mask)
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

/// Squared variant of [`distance_transform`]; values are exact integers
/// (as f64) for non-empty masks.
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let inf = f64::INFINITY;
    // Pass 1: per column, squared distance to the nearest site in y.
    let mut coldist = vec![inf; h * w];
    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if mask.get(r, c) {
                last = Some(r);
            }
            if let Some(s) = last {
                coldist[r * w + c] = ((r - s) * (r - s)) as f64;
            }
        }
        last = None;
        for r in (0..h).rev() {
            if mask.get(r, c) {
                last = Some(r);
            }
            if let Some(s) = last {
                let d = ((s - r) * (s - r)) as f64;
                if d < coldist[r * w + c] {
                    coldist[r * w + c] = d;
                }
            }
        }
    }
    // Pass 2: per row, lower envelope of parabolas x -> (x - x')^2 + f(x').
    let mut out = vec![inf; h * w];
    let mut v = vec![0usize; w];
    let mut z = vec![0.0f64; w + 1];
    for r in 0..h {
        let f = |x: usize| coldist[r * w + x];
        let mut k = 0usize;
        let mut started = false;
        for q in 0..w {
            if f(q).is_infinite() {
                continue;
            }
            if !started {
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                started = true;
                continue;
            }
            // Pop parabolas the new one dominates; z[0] = -inf terminates.
            let s = loop {
                let p = v[k];
                let s = ((f(q) + (q * q) as f64) - (f(p) + (p * p) as f64))
                    / (2.0 * q as f64 - 2.0 * p as f64);
                if s > z[k] {
                    break s;
                }
                k -= 1;
            };
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        if !started {
            continue; // no site in this row's columns: stays infinite
        }
        let mut k2 = 0usize;
        for x in 0..w {
            while z[k2 + 1] < x as f64 {
                k2 += 1;
            }
            let p = v[k2];
            let dx = x as f64 - p as f64;
            out[r * w + x] = dx * dx + f(p);
        }
    }
    // Columns with no site anywhere in the row pass still get covered by
    // other columns' parabolas; a fully empty mask stays infinite.
    out
}

/// Directed average surface distance (pred boundary to reference
/// boundary) and symmetric 95th-percentile Hausdorff distance.
pub fn surface_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<(f64, f64), MetricError> {
    if !pred.same_shape(gt) {
        return Err(MetricError::ShapeMismatch);
    }
    let ab = pred.boundary_mask();
    let bb = gt.boundary_mask();
    let a_pixels: Vec<(usize, usize)> = ab.foreground().collect();
    let b_pixels: Vec<(usize, usize)> = bb.foreground().collect();
    let diag = ((pred.height() * pred.height() + pred.width() * pred.width()) as f64).sqrt();
    match (a_pixels.is_empty(), b_pixels.is_empty()) {
        (true, true) => return Ok((0.0, 0.0)),
        (true, false) | (false, true) => return Ok((diag, diag)),
        _ => {}
    }
    let dist_to_b = distance_transform(&bb);
    let dist_to_a = distance_transform(&ab);
    let w = pred.width();
    let mut asd_sum = 0.0;
    let mut all: Vec<f64> = Vec::with_capacity(a_pixels.len() + b_pixels.len());
    for &(r, c) in &a_pixels {
        let d = dist_to_b[r * w + c];
        asd_sum += d;
        all.push(d);
    }
    for &(r, c) in &b_pixels {
        all.push(dist_to_a[r * w + c]);
    }
    let asd = asd_sum / a_pixels.len() as f64;
    all.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
    Ok((asd, percentile_interp(&all, 0.95)))
}

/// Linearly interpolated percentile of an ascending-sorted slice.
pub fn percentile_interp(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Mean and sample standard deviation of per-kind precision/recall of a
/// pseudo-label shape over a dataset.
#[derive(Debug, Clone, Copy)]
pub struct KindFidelity {
    pub kind: ShapeKind,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
}

/// For each shape kind, generate the pseudo-label from every annotation
/// and average precision/recall against the reference masks.
pub fn shape_fidelity(
    items: &[(&BinaryMask, &AspectAnnotation)],
    kinds: &[ShapeKind],
) -> Result<Vec<KindFidelity>, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let mut out = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let mut precs = Vec::with_capacity(items.len());
        let mut recs = Vec::with_capacity(items.len());
        for (gt, ann) in items {
            let label = geometry::generate_pseudo_label(ann, kind, gt.height(), gt.width());
            let (_, _, precision, recall) = overlap_metrics(&label.mask, gt)?;
            precs.push(precision);
            recs.push(recall);
        }
        out.push(KindFidelity {
            kind,
            precision_mean: mean(&precs),
            precision_std: sample_std(&precs),
            recall_mean: mean(&recs),
            recall_std: sample_std(&recs),
        });
    }
    Ok(out)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Write the per-image metric CSV: a header, one row per image, then a
/// `mean` row and a `std` row.
pub fn write_report(path: &Path, rows: &[(String, MetricReport)]) -> Result<(), MetricError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "id,dsc,jaccard,asd,hd95,precision,recall")?;
    for (id, r) in rows {
        writeln!(
            file,
            "{id},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.dsc, r.jaccard, r.asd, r.hd95, r.precision, r.recall
        )?;
    }
    for (label, stat) in [("mean", mean as fn(&[f64]) -> f64), ("std", sample_std)] {
        let cols: Vec<f64> = (0..6)
            .map(|i| {
                let vals: Vec<f64> = rows.iter().map(|(_, r)| r.values()[i]).collect();
                stat(&vals)
            })
            .collect();
        writeln!(
            file,
            "{label},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            cols[0], cols[1], cols[2], cols[3], cols[4], cols[5]
        )?;
    }
    file.flush()?;
    Ok(())
}

/// Parse a CSV produced by [`write_report`], returning per-image rows and
/// the mean row.
pub fn read_report(path: &Path) -> Result<(Vec<(String, MetricReport)>, MetricReport), MetricError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut mean_row = None;
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id = parts.next().unwrap_or_default().to_string();
        let nums: Vec<f64> = parts.filter_map(|p| p.parse().ok()).collect();
        if nums.len() != 6 {
            continue;
        }
        let report = MetricReport {
            dsc: nums[0],
            jaccard: nums[1],
            asd: nums[2],
            hd95: nums[3],
            precision: nums[4],
            recall: nums[5],
        };
        match id.as_str() {
            "mean" => mean_row = Some(report),
            "std" => {}
            _ => rows.push((id, report)),
        }
    }
    let mean_row = mean_row.ok_or_else(|| {
        MetricError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "report has no mean row",
        ))
    })?;
    Ok((rows, mean_row))
}
