//! The reproducible evaluation protocol: 8-pixel border exclusion,
//! mutual-nearest-neighbor matching of detections to ground truth, TDR /
//! FDR / F-score, and the post-processing parameter grid search.
//!
//! Matching applies no maximum-distance gate: a detection is true exactly
//! when it and some ground-truth pore are each other's Euclidean nearest
//! neighbors. This is the protocol's most surprising property and is
//! deliberate.

use thiserror::Error;

use crate::data::{ImagePair, PoreAnnotations};
use crate::detect::{detect_from_map, infer_probability_map, Detection, DetectError};
use crate::model::PoreModel;

/// Pores and detections in the first and last 8 rows/columns are excluded.
pub const BORDER_MARGIN: usize = 8;

/// Probability-threshold search range.
pub const P_T_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
/// NMS intersection-threshold search range.
pub const I_T_GRID: [f64; 8] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground truth is empty; recall is undefined")]
    EmptyGroundTruth,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error(transparent)]
    Detect(#[from] DetectError),
}

/// Mutual-argmin matching outcome for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// (detection index, ground-truth index) mutual nearest-neighbor pairs.
    pub pairs: Vec<(usize, usize)>,
    pub true_detections: usize,
    pub false_detections: usize,
    pub undetected: usize,
}

/// TDR / FDR / F-score triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub tdr: f64,
    pub fdr: f64,
    pub f_score: f64,
}

/// Detection/ground-truth counts poolable across images (micro-average).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub true_detections: usize,
    pub false_detections: usize,
    pub ground_truth: usize,
}

impl Counts {
    pub fn add(&mut self, other: &Counts) {
        self.true_detections += other.true_detections;
        self.false_detections += other.false_detections;
        self.ground_truth += other.ground_truth;
    }

    pub fn metrics(&self) -> Result<Metrics, EvalError> {
        if self.ground_truth == 0 {
            return Err(EvalError::EmptyGroundTruth);
        }
        let n_det = self.true_detections + self.false_detections;
        let tdr = self.true_detections as f64 / self.ground_truth as f64;
        let fdr = if n_det == 0 {
            0.0
        } else {
            self.false_detections as f64 / n_det as f64
        };
        Ok(Metrics {
            tdr,
            fdr,
            f_score: f_score(tdr, fdr),
        })
    }
}

/// Harmonic mean of precision (1 - FDR) and recall (TDR); 0 when both are 0.
pub fn f_score(tdr: f64, fdr: f64) -> f64 {
    let precision = 1.0 - fdr;
    if precision + tdr == 0.0 {
        0.0
    } else {
        2.0 * precision * tdr / (precision + tdr)
    }
}

fn in_interior(point: (usize, usize), dims: (usize, usize), margin: usize) -> bool {
    let (r, c) = point;
    let (h, w) = dims;
    r >= margin && c >= margin && r + margin < h && c + margin < w
}

/// Retain points at least `BORDER_MARGIN` pixels inside the image.
pub fn exclude_border(points: &[(usize, usize)], dims: (usize, usize)) -> Vec<(usize, usize)> {
    points
        .iter()
        .copied()
        .filter(|&p| in_interior(p, dims, BORDER_MARGIN))
        .collect()
}

fn dist2(a: (usize, usize), b: (usize, usize)) -> u64 {
    let dr = a.0 as i64 - b.0 as i64;
    let dc = a.1 as i64 - b.1 as i64;
    (dr * dr + dc * dc) as u64
}

/// Index of the nearest candidate; equidistant ties go to the candidate
/// with the lexicographically smaller (row, col).
fn argmin_nearest(from: (usize, usize), candidates: &[(usize, usize)]) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| dist2(from, **a).cmp(&dist2(from, **b)).then(a.cmp(b)))
        .map(|(i, _)| i)
}

/// Mutual-argmin matching: detection d is true iff its nearest ground-truth
/// point g also has d as its nearest detection. No distance cap is applied.
pub fn match_detections(
    detections: &[(usize, usize)],
    ground_truth: &[(usize, usize)],
) -> MatchResult {
    let nearest_g: Vec<Option<usize>> = detections
        .iter()
        .map(|&d| argmin_nearest(d, ground_truth))
        .collect();
    let nearest_d: Vec<Option<usize>> = ground_truth
        .iter()
        .map(|&g| argmin_nearest(g, detections))
        .collect();
    let mut pairs = Vec::new();
    for (di, ng) in nearest_g.iter().enumerate() {
        if let Some(gi) = ng {
            if nearest_d[*gi] == Some(di) {
                pairs.push((di, *gi));
            }
        }
    }
    MatchResult {
        true_detections: pairs.len(),
        false_detections: detections.len() - pairs.len(),
        undetected: ground_truth.len() - pairs.len(),
        pairs,
    }
}

/// Metrics for a single match result against `g_count` ground-truth pores.
pub fn compute_metrics(result: &MatchResult, g_count: usize) -> Result<Metrics, EvalError> {
    Counts {
        true_detections: result.true_detections,
        false_detections: result.false_detections,
        ground_truth: g_count,
    }
    .metrics()
}

/// Border-filter both sets, match, and return poolable counts.
pub fn evaluate_image(
    detections: &[Detection],
    annotations: &PoreAnnotations,
    dims: (usize, usize),
) -> Counts {
    let det_coords: Vec<(usize, usize)> = detections.iter().map(|d| (d.row, d.col)).collect();
    let det_coords = exclude_border(&det_coords, dims);
    let gt_coords = exclude_border(&annotations.pores, dims);
    let result = match_detections(&det_coords, &gt_coords);
    Counts {
        true_detections: result.true_detections,
        false_detections: result.false_detections,
        ground_truth: gt_coords.len(),
    }
}

/// One cell of the post-processing grid search.
#[derive(Debug, Clone, Copy)]
pub struct GridCell {
    pub p_t: f64,
    pub i_t: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best_p_t: f64,
    pub best_i_t: f64,
    pub best_metrics: Metrics,
    /// All 72 evaluated cells, p_t-major.
    pub grid: Vec<GridCell>,
}

/// Evaluate every (p_t, i_t) cell of the standard ranges on a validation set,
/// pooling counts across images, and return the F-score argmax. Ties are
/// broken toward larger p_t, then smaller i_t.
pub fn grid_search(
    model: &PoreModel,
    validation: &[ImagePair],
) -> Result<GridSearchResult, EvalError> {
    if validation.is_empty() {
        return Err(EvalError::EmptyValidation);
    }
    let maps: Vec<_> = validation
        .iter()
        .map(|p| infer_probability_map(model, &p.image))
        .collect::<Result<_, _>>()?;
    let mut grid = Vec::with_capacity(P_T_GRID.len() * I_T_GRID.len());
    let mut best: Option<GridCell> = None;
    for &p_t in &P_T_GRID {
        for &i_t in &I_T_GRID {
            let mut pooled = Counts::default();
            for (pair, map) in validation.iter().zip(&maps) {
                let detections = detect_from_map(map, p_t, i_t)?;
                pooled.add(&evaluate_image(
                    &detections,
                    &pair.annotations,
                    (pair.image.height, pair.image.width),
                ));
            }
            let cell = GridCell {
                p_t,
                i_t,
                metrics: pooled.metrics()?,
            };
            grid.push(cell);
            let better = match &best {
                None => true,
                Some(b) => {
                    cell.metrics.f_score > b.metrics.f_score
                        || (cell.metrics.f_score == b.metrics.f_score
                            && (cell.p_t > b.p_t || (cell.p_t == b.p_t && cell.i_t < b.i_t)))
                }
            };
            if better {
                best = Some(cell);
            }
        }
    }
    let best = best.expect("grid is non-empty");
    Ok(GridSearchResult {
        best_p_t: best.p_t,
        best_i_t: best.i_t,
        best_metrics: best.metrics,
        grid,
    })
}
