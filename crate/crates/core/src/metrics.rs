//! Evaluation protocol: best-overlap cluster selection, Dice, XOR, and
//! boundary Hausdorff distance, plus dataset-level aggregation.
//!
//! The benchmarks this follows report an "XOR" percentage and a "Hammoud
//! distance" without giving formulas; the definitions here —
//! `(FP+FN)/|gt|·100` and the symmetric Hausdorff distance between
//! 4-connected mask boundaries — are the standard readings from the skin
//! lesion segmentation literature and are isolated in this module so they
//! can be swapped without touching anything else.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageio::ImageIoError;
use crate::model::SegmentationMap;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ground-truth mask is empty")]
    EmptyGroundTruth,

    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimMismatch(usize, usize, usize, usize),

    #[error("prediction and ground-truth files do not pair up: {0}")]
    UnmatchedFiles(String),

    #[error("no .png pairs found under the given directories")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] ImageIoError),
}

/// Boolean pixel grid; `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), h * w);
        Self { h, w, data }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Self { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_all_background(&self) -> bool {
        self.data.iter().all(|&b| !b)
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<(), MetricsError> {
        if self.h != other.h || self.w != other.w {
            return Err(MetricsError::DimMismatch(self.h, self.w, other.h, other.w));
        }
        Ok(())
    }

    /// Boundary pixels: foreground with at least one background 4-neighbor,
    /// where pixels outside the image count as background.
    pub fn boundary_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                if !self.get(y, x) {
                    continue;
                }
                let edge = y == 0
                    || x == 0
                    || y == self.h - 1
                    || x == self.w - 1
                    || !self.get(y - 1, x)
                    || !self.get(y + 1, x)
                    || !self.get(y, x - 1)
                    || !self.get(y, x + 1);
                if edge {
                    out.push((y, x));
                }
            }
        }
        out
    }
}

/// The predicted cluster with the largest intersection with the ground
/// truth (lowest id on ties), together with its binarized mask.
pub fn best_overlap_cluster(
    seg: &SegmentationMap,
    gt: &BinaryMask,
) -> Result<(u32, BinaryMask), MetricsError> {
    if seg.height() != gt.height() || seg.width() != gt.width() {
        return Err(MetricsError::DimMismatch(
            seg.height(),
            seg.width(),
            gt.height(),
            gt.width(),
        ));
    }
    if gt.is_all_background() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let mut overlap: BTreeMap<u32, usize> = BTreeMap::new();
    for (label, &fg) in seg.labels().iter().zip(gt.data()) {
        if fg {
            *overlap.entry(*label).or_insert(0) += 1;
        }
    }
    // BTreeMap iterates ids in ascending order, so strict `>` keeps the
    // lowest id on ties
    let (mut best_id, mut best_count) = (0u32, 0usize);
    for (&id, &count) in &overlap {
        if count > best_count {
            best_id = id;
            best_count = count;
        }
    }
    let mask = BinaryMask::new(
        seg.height(),
        seg.width(),
        seg.labels().iter().map(|&l| l == best_id).collect(),
    );
    Ok((best_id, mask))
}

/// Dice similarity coefficient as a percentage: `100·2|∩|/(|pred|+|gt|)`.
/// Defined as 0 for an empty prediction.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    pred.check_dims(gt).expect("dice: mask dims must match");
    let inter = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|&(&p, &g)| p && g)
        .count();
    let total = pred.count_ones() + gt.count_ones();
    if total == 0 {
        return 0.0;
    }
    100.0 * 2.0 * inter as f64 / total as f64
}

/// XOR error as a percentage of the ground-truth area:
/// `100·(|pred∖gt| + |gt∖pred|)/|gt|`. Can exceed 100 for heavy
/// over-segmentation.
pub fn xor_metric(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    pred.check_dims(gt).expect("xor: mask dims must match");
    let gt_area = gt.count_ones();
    assert!(gt_area > 0, "xor: ground truth must be non-empty");
    let mismatched = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|&(&p, &g)| p != g)
        .count();
    100.0 * mismatched as f64 / gt_area as f64
}

/// Symmetric Hausdorff distance between the 4-connected boundaries of the
/// two masks, in pixels. If either boundary is empty the image diagonal is
/// returned as the defined worst case.
pub fn hammoud_distance(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    pred.check_dims(gt).expect("hammoud: mask dims must match");
    let a = pred.boundary_pixels();
    let b = gt.boundary_pixels();
    if a.is_empty() || b.is_empty() {
        let (h, w) = (pred.height() as f64, pred.width() as f64);
        return (h * h + w * w).sqrt();
    }
    directed_hausdorff_sq(&a, &b)
        .max(directed_hausdorff_sq(&b, &a))
        .sqrt()
}

fn directed_hausdorff_sq(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    let mut worst = 0.0f64;
    for &(ay, ax) in from {
        let mut nearest = f64::INFINITY;
        for &(by, bx) in to {
            let dy = ay as f64 - by as f64;
            let dx = ax as f64 - bx as f64;
            let d = dy * dy + dx * dx;
            if d < nearest {
                nearest = d;
                if nearest == 0.0 {
                    break;
                }
            }
        }
        worst = worst.max(nearest);
    }
    worst
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub dsc: f64,
    pub xor: f64,
    pub hm: f64,
    pub cluster: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MeanMetrics {
    pub dsc: f64,
    pub xor: f64,
    pub hm: f64,
}

/// Per-image scores plus their arithmetic means.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean: MeanMetrics,
}

/// Published FuseNet reference scores on the PH² skin lesion benchmark
/// (DSC %, XOR %, HM px). Context for dataset runs, not a test target.
pub const REFERENCE_PH2: MeanMetrics = MeanMetrics {
    dsc: 88.7,
    xor: 20.1,
    hm: 19.3,
};

/// Published FuseNet reference scores on the lung CT benchmark.
pub const REFERENCE_LUNG: MeanMetrics = MeanMetrics {
    dsc: 95.3,
    xor: 4.7,
    hm: 7.2,
};

/// Scores one prediction against a ground-truth mask using the
/// best-overlap cluster rule.
pub fn evaluate_single(
    name: &str,
    seg: &SegmentationMap,
    gt: &BinaryMask,
) -> Result<ImageMetrics, MetricsError> {
    let (cluster, pred) = best_overlap_cluster(seg, gt)?;
    Ok(ImageMetrics {
        name: name.to_string(),
        dsc: dice(&pred, gt),
        xor: xor_metric(&pred, gt),
        hm: hammoud_distance(&pred, gt),
        cluster,
    })
}

pub fn aggregate(per_image: Vec<ImageMetrics>) -> Result<MetricsReport, MetricsError> {
    if per_image.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let n = per_image.len() as f64;
    let mean = MeanMetrics {
        dsc: per_image.iter().map(|m| m.dsc).sum::<f64>() / n,
        xor: per_image.iter().map(|m| m.xor).sum::<f64>() / n,
        hm: per_image.iter().map(|m| m.hm).sum::<f64>() / n,
    };
    Ok(MetricsReport { per_image, mean })
}

/// Pairs `.png` files by stem between the two directories, scores every
/// pair, and aggregates. Files present on only one side are a hard error,
/// reported together.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path) -> Result<MetricsReport, MetricsError> {
    let preds = png_stems(pred_dir)?;
    let gts = png_stems(gt_dir)?;

    let mut complaints = Vec::new();
    for stem in preds.keys() {
        if !gts.contains_key(stem) {
            complaints.push(format!("{stem}.png has no ground truth"));
        }
    }
    for stem in gts.keys() {
        if !preds.contains_key(stem) {
            complaints.push(format!("{stem}.png has no prediction"));
        }
    }
    if !complaints.is_empty() {
        return Err(MetricsError::UnmatchedFiles(complaints.join("; ")));
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }

    let mut per_image = Vec::with_capacity(preds.len());
    for (stem, pred_path) in &preds {
        let seg = crate::imageio::load_cluster_map(pred_path)?;
        let gt = crate::imageio::load_mask(&gts[stem])?;
        per_image.push(evaluate_single(stem, &seg, &gt)?);
    }
    aggregate(per_image)
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>, MetricsError> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|source| ImageIoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| ImageIoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        let is_png = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("png"))
            .unwrap_or(false);
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}
