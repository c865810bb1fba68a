//! Full-image pore detection: probability map inference, thresholding to
//! 7×7 bounding boxes, greedy NMS, and the traditional connected-components
//! baseline used for the post-processing ablation.

use std::path::Path;

use thiserror::Error;

use crate::data::GrayImage;
use crate::model::{PoreModel, SHRINK};
use crate::nn::NnError;
use crate::tensor::FeatureMap;

/// The probability map covers the valid interior: map (i, j) is the pore
/// probability of image pixel (i + 8, j + 8).
pub const BORDER_OFFSET: usize = 8;
/// Detections use 7×7 boxes, mirroring the training label box.
pub const BOX_HALF: usize = 3;
const BOX_SIDE: i64 = 2 * BOX_HALF as i64 + 1;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("threshold {0} outside (0, 1)")]
    InvalidProbabilityThreshold(f64),
    #[error("intersection threshold {0} outside [0, 1)")]
    InvalidIntersectionThreshold(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: malformed detection line")]
    Parse { path: String, line: usize },
}

/// Pore probability of each valid patch center of an image.
#[derive(Debug, Clone)]
pub struct ProbabilityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn from_feature_map(map: &FeatureMap) -> Self {
        let (h, w, c) = map.dims();
        assert_eq!(c, 1);
        Self {
            height: h,
            width: w,
            values: map.data().to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }
}

/// 7×7 box centered at (row, col) in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

/// Final detection: scored pore coordinate in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

pub type DetectionSet = Vec<Detection>;

/// Run the FCN over a whole image in infer mode.
pub fn infer_probability_map(
    model: &PoreModel,
    image: &GrayImage,
) -> Result<ProbabilityMap, DetectError> {
    let out = model.forward_infer(&image.to_feature_map())?;
    debug_assert_eq!(out.dims().0, image.height - SHRINK);
    debug_assert_eq!(out.dims().1, image.width - SHRINK);
    Ok(ProbabilityMap::from_feature_map(&out))
}

/// One box per map cell strictly above `p_t`, centered at the corresponding
/// image coordinate.
pub fn threshold_to_boxes(map: &ProbabilityMap, p_t: f64) -> Result<Vec<BoundingBox>, DetectError> {
    if !(0.0 < p_t && p_t < 1.0) {
        return Err(DetectError::InvalidProbabilityThreshold(p_t));
    }
    let mut boxes = Vec::new();
    for i in 0..map.height {
        for j in 0..map.width {
            let p = map.get(i, j);
            if p > p_t {
                boxes.push(BoundingBox {
                    row: i + BORDER_OFFSET,
                    col: j + BORDER_OFFSET,
                    score: p,
                });
            }
        }
    }
    Ok(boxes)
}

/// Intersection-over-union of two 7×7 boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let dr = (a.row as i64 - b.row as i64).abs();
    let dc = (a.col as i64 - b.col as i64).abs();
    let inter = (BOX_SIDE - dr).max(0) * (BOX_SIDE - dc).max(0);
    if inter == 0 {
        return 0.0;
    }
    let union = 2 * BOX_SIDE * BOX_SIDE - inter;
    inter as f64 / union as f64
}

/// Greedy score-descending NMS: keep a box iff its IoU with every
/// already-kept box is <= `i_t`. Score ties are broken by (row, col)
/// lexicographic order so the result is deterministic.
pub fn nms(boxes: &[BoundingBox], i_t: f64) -> Result<Vec<BoundingBox>, DetectError> {
    if !(0.0..1.0).contains(&i_t) {
        return Err(DetectError::InvalidIntersectionThreshold(i_t));
    }
    let mut order: Vec<&BoundingBox> = boxes.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| (a.row, a.col).cmp(&(b.row, b.col)))
    });
    let mut kept: Vec<BoundingBox> = Vec::new();
    for cand in order {
        if kept.iter().all(|k| iou(k, cand) <= i_t) {
            kept.push(*cand);
        }
    }
    Ok(kept)
}

/// The full proposed pipeline: infer, threshold, NMS, convert to coordinates.
pub fn detect_pores(
    model: &PoreModel,
    image: &GrayImage,
    p_t: f64,
    i_t: f64,
) -> Result<DetectionSet, DetectError> {
    let map = infer_probability_map(model, image)?;
    detect_from_map(&map, p_t, i_t)
}

/// Threshold + NMS on an already-computed probability map.
pub fn detect_from_map(map: &ProbabilityMap, p_t: f64, i_t: f64) -> Result<DetectionSet, DetectError> {
    let boxes = threshold_to_boxes(map, p_t)?;
    let kept = nms(&boxes, i_t)?;
    Ok(kept
        .into_iter()
        .map(|b| Detection {
            row: b.row,
            col: b.col,
            score: b.score,
        })
        .collect())
}

/// Traditional baseline: binarize the map at 0.5, take 8-connected
/// components, and propose one detection per component at its centroid
/// (rounded to the nearest pixel, ties toward the smaller index), scored
/// by the component's maximum probability.
pub fn traditional_postprocess(map: &ProbabilityMap) -> DetectionSet {
    let (h, w) = (map.height, map.width);
    let mut visited = vec![false; h * w];
    let mut detections = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if visited[start] || map.values[start] <= 0.5 {
            continue;
        }
        let mut sum_r = 0.0f64;
        let mut sum_c = 0.0f64;
        let mut count = 0usize;
        let mut max_p = 0.0f64;
        visited[start] = true;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (r, c) = (idx / w, idx % w);
            sum_r += r as f64;
            sum_c += c as f64;
            count += 1;
            max_p = max_p.max(map.values[idx]);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let nidx = nr as usize * w + nc as usize;
                    if !visited[nidx] && map.values[nidx] > 0.5 {
                        visited[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
        }
        // round half toward the smaller index
        let round_down = |x: f64| (x - 0.5).ceil() as usize;
        detections.push(Detection {
            row: round_down(sum_r / count as f64) + BORDER_OFFSET,
            col: round_down(sum_c / count as f64) + BORDER_OFFSET,
            score: max_p,
        });
    }
    detections
}

/// Write detections as 1-indexed `row col score` lines.
pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<(), DetectError> {
    let mut out = String::new();
    for d in detections {
        out.push_str(&format!("{} {} {:.6}\n", d.row + 1, d.col + 1, d.score));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a detection file written by [`write_detections`].
pub fn read_detections(path: &Path) -> Result<DetectionSet, DetectError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut detections = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let err = || DetectError::Parse {
            path: display.clone(),
            line: i + 1,
        };
        let row: usize = fields.next().and_then(|s| s.parse().ok()).ok_or_else(err)?;
        let col: usize = fields.next().and_then(|s| s.parse().ok()).ok_or_else(err)?;
        let score: f64 = match fields.next() {
            Some(s) => s.parse().map_err(|_| err())?,
            None => 1.0,
        };
        if fields.next().is_some() || row == 0 || col == 0 {
            return Err(err());
        }
        detections.push(Detection {
            row: row - 1,
            col: col - 1,
            score,
        });
    }
    Ok(detections)
}
