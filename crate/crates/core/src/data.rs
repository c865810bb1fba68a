//! Dataset loading, the positional train/validation/test split, patch
//! labeling and random patch sampling.
//!
//! On-disk formats:
//! - images: 8-bit binary PGM;
//! - annotations: UTF-8 text, one `row col` pair per line, 1-indexed.
//!
//! Whether third-party ground truth is `(row, col)` or `(x, y)` ordered is
//! not always documented, so the loader exposes an explicit axis order
//! instead of guessing.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::pgm::{self, PgmError};
use crate::tensor::FeatureMap;

/// Half-size of a training patch: the patch is 17×17 around its center.
pub const PATCH_MARGIN: usize = 8;
/// A patch is positive iff a pore lies within this Chebyshev distance of
/// the patch center (the 7×7 labeling box).
pub const LABEL_RADIUS: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: malformed annotation line: {msg}")]
    AnnotationParse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: coordinate ({row}, {col}) out of bounds for {height}x{width} image (1-indexed)")]
    AnnotationOutOfBounds {
        path: String,
        line: usize,
        row: i64,
        col: i64,
        height: usize,
        width: usize,
    },
    #[error("{path}:{line}: duplicate pore coordinate")]
    DuplicateAnnotation { path: String, line: usize },
    #[error("no annotation file for image {0}")]
    MissingAnnotation(String),
    #[error("benchmark split requires exactly 30 image/annotation pairs, found {0}")]
    WrongPairCount(usize),
    #[error("dataset in {0} has too few pairs to split (need at least 3)")]
    TooFewPairs(String),
    #[error("patch sampling failed: {0}")]
    Sampling(String),
}

/// 2-D grayscale raster with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), height * width);
        debug_assert!(pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
        Self {
            height,
            width,
            pixels,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Single-channel feature map view (copies the pixel data).
    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap::from_vec(self.height, self.width, 1, self.pixels.clone())
            .expect("pixel count matches dims")
    }

    /// 17×17 window centered at (row, col); the center must be at least
    /// [`PATCH_MARGIN`] pixels from every border.
    pub fn extract_patch(&self, row: usize, col: usize) -> FeatureMap {
        assert!(self.center_is_valid(row, col), "patch center out of range");
        let side = 2 * PATCH_MARGIN + 1;
        let mut data = Vec::with_capacity(side * side);
        for r in row - PATCH_MARGIN..=row + PATCH_MARGIN {
            let base = r * self.width + (col - PATCH_MARGIN);
            data.extend_from_slice(&self.pixels[base..base + side]);
        }
        FeatureMap::from_vec(side, side, 1, data).unwrap()
    }

    pub fn center_is_valid(&self, row: usize, col: usize) -> bool {
        row >= PATCH_MARGIN
            && col >= PATCH_MARGIN
            && row + PATCH_MARGIN < self.height
            && col + PATCH_MARGIN < self.width
    }
}

/// Ground-truth pore coordinates, 0-indexed (row, col).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoreAnnotations {
    pub pores: Vec<(usize, usize)>,
}

/// Coordinate order of an annotation file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AxisOrder {
    /// Each line is `row col` (the convention this crate writes).
    #[default]
    RowCol,
    /// Each line is `x y`, i.e. column first.
    XY,
}

/// One image with its ground truth.
#[derive(Debug, Clone)]
pub struct ImagePair {
    /// File stem, used to pair detections and reports back to the image.
    pub name: String,
    pub image: GrayImage,
    pub annotations: PoreAnnotations,
}

/// Positional dataset split over the lexicographically sorted file list.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<ImagePair>,
    pub validation: Vec<ImagePair>,
    pub test: Vec<ImagePair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Exactly 30 pairs: first 15 train, next 5 validation, last 10 test.
    Benchmark,
    /// Any n >= 3, split 50/17/33% by the same ordering rule.
    Proportional,
}

/// 17×17 patch with its pore label.
#[derive(Debug, Clone)]
pub struct PatchExample {
    pub patch: FeatureMap,
    pub label: f64,
}

/// Load an 8-bit grayscale raster, mapping pixel values to [0, 1] by
/// division by 255.
pub fn load_image(path: &Path) -> Result<GrayImage, DataError> {
    let img = pgm::read_pgm(path)?;
    let pixels = img.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok(GrayImage::new(img.height, img.width, pixels))
}

pub fn write_image(path: &Path, image: &GrayImage) -> Result<(), DataError> {
    let pixels: Vec<u8> = image
        .pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    pgm::write_pgm(path, image.width, image.height, &pixels)?;
    Ok(())
}

/// Parse a 1-indexed annotation file into 0-indexed coordinates, validating
/// bounds and rejecting duplicates.
pub fn load_annotations(
    path: &Path,
    image_dims: (usize, usize),
    axis_order: AxisOrder,
) -> Result<PoreAnnotations, DataError> {
    let (height, width) = image_dims;
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut pores = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let parse = |field: Option<&str>, what: &str| -> Result<i64, DataError> {
            field
                .ok_or(())
                .and_then(|s| s.parse::<i64>().map_err(|_| ()))
                .map_err(|_| DataError::AnnotationParse {
                    path: display.clone(),
                    line: line_no,
                    msg: format!("expected two integers, bad {what}"),
                })
        };
        let a = parse(fields.next(), "first field")?;
        let b = parse(fields.next(), "second field")?;
        if fields.next().is_some() {
            return Err(DataError::AnnotationParse {
                path: display,
                line: line_no,
                msg: "expected exactly two integers".into(),
            });
        }
        let (row, col) = match axis_order {
            AxisOrder::RowCol => (a, b),
            AxisOrder::XY => (b, a),
        };
        if row < 1 || col < 1 || row > height as i64 || col > width as i64 {
            return Err(DataError::AnnotationOutOfBounds {
                path: display,
                line: line_no,
                row,
                col,
                height,
                width,
            });
        }
        let coord = ((row - 1) as usize, (col - 1) as usize);
        if !seen.insert(coord) {
            return Err(DataError::DuplicateAnnotation {
                path: display,
                line: line_no,
            });
        }
        pores.push(coord);
    }
    Ok(PoreAnnotations { pores })
}

/// Write annotations in the on-disk convention: 1-indexed `row col` lines.
pub fn write_annotations(path: &Path, annotations: &PoreAnnotations) -> Result<(), DataError> {
    let mut out = String::new();
    for &(r, c) in &annotations.pores {
        out.push_str(&format!("{} {}\n", r + 1, c + 1));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// All image/annotation pairs in a directory, sorted by file name.
pub fn load_dir_pairs(dir: &Path, axis_order: AxisOrder) -> Result<Vec<ImagePair>, DataError> {
    let mut image_paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    image_paths.sort();
    let mut pairs = Vec::with_capacity(image_paths.len());
    for img_path in image_paths {
        let ann_path = img_path.with_extension("txt");
        if !ann_path.exists() {
            return Err(DataError::MissingAnnotation(img_path.display().to_string()));
        }
        let image = load_image(&img_path)?;
        let annotations =
            load_annotations(&ann_path, (image.height, image.width), axis_order)?;
        let name = img_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        pairs.push(ImagePair {
            name,
            image,
            annotations,
        });
    }
    Ok(pairs)
}

/// Split pairs positionally after canonical (sorted) ordering.
pub fn split_pairs(pairs: Vec<ImagePair>, mode: SplitMode) -> Result<DatasetSplit, DataError> {
    let n = pairs.len();
    let (n_train, n_val) = match mode {
        SplitMode::Benchmark => {
            if n != 30 {
                return Err(DataError::WrongPairCount(n));
            }
            (15, 5)
        }
        SplitMode::Proportional => {
            if n < 3 {
                return Err(DataError::TooFewPairs(format!("{n} pairs")));
            }
            let n_train = ((n as f64 * 0.50).round() as usize).max(1);
            let n_val = ((n as f64 * 0.17).round() as usize).max(1);
            if n_train + n_val >= n {
                return Err(DataError::TooFewPairs(format!("{n} pairs")));
            }
            (n_train, n_val)
        }
    };
    let mut pairs = pairs;
    let test = pairs.split_off(n_train + n_val);
    let validation = pairs.split_off(n_train);
    Ok(DatasetSplit {
        train: pairs,
        validation,
        test,
    })
}

/// Load a directory and apply the positional split.
pub fn split_dataset(
    dir: &Path,
    mode: SplitMode,
    axis_order: AxisOrder,
) -> Result<DatasetSplit, DataError> {
    split_pairs(load_dir_pairs(dir, axis_order)?, mode)
}

/// 1 iff some pore lies within the 7×7 box centered at `center`.
pub fn label_patch(center: (usize, usize), annotations: &PoreAnnotations) -> f64 {
    let (r, c) = (center.0 as i64, center.1 as i64);
    let radius = LABEL_RADIUS as i64;
    for &(pr, pc) in &annotations.pores {
        if (pr as i64 - r).abs() <= radius && (pc as i64 - c).abs() <= radius {
            return 1.0;
        }
    }
    0.0
}

/// Stratified random patch batch across all training images.
///
/// Exactly `round(batch_size * pos_fraction)` positives, drawn by jittering
/// a uniformly chosen ground-truth pore within its 7×7 label box; the rest
/// are negatives drawn uniformly over valid patch centers and rejected if
/// their label is 1. The batch is shuffled before being returned.
pub fn sample_batch(
    images: &[ImagePair],
    batch_size: usize,
    pos_fraction: f64,
    rng: &mut impl Rng,
) -> Result<Vec<PatchExample>, DataError> {
    if images.is_empty() {
        return Err(DataError::Sampling("no training images".into()));
    }
    for p in images {
        if p.image.height < 2 * PATCH_MARGIN + 1 || p.image.width < 2 * PATCH_MARGIN + 1 {
            return Err(DataError::Sampling(format!(
                "image {} is smaller than a 17x17 patch",
                p.name
            )));
        }
    }
    let n_pos = (batch_size as f64 * pos_fraction).round() as usize;
    let n_neg = batch_size - n_pos.min(batch_size);

    // every (image, pore) pair eligible as a positive seed
    let pore_index: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.annotations.pores.len()).map(move |j| (i, j)))
        .collect();
    if n_pos > 0 && pore_index.is_empty() {
        return Err(DataError::Sampling(
            "positive patches requested but the training set has no pores".into(),
        ));
    }

    let mut batch = Vec::with_capacity(batch_size);
    let radius = LABEL_RADIUS as i64;
    for _ in 0..n_pos {
        let mut placed = false;
        for _ in 0..1000 {
            let &(ii, pi) = &pore_index[rng.random_range(0..pore_index.len())];
            let pair = &images[ii];
            let (pr, pc) = pair.annotations.pores[pi];
            let r = pr as i64 + rng.random_range(-radius..=radius);
            let c = pc as i64 + rng.random_range(-radius..=radius);
            if r < 0 || c < 0 {
                continue;
            }
            let (r, c) = (r as usize, c as usize);
            if !pair.image.center_is_valid(r, c) {
                continue;
            }
            debug_assert_eq!(label_patch((r, c), &pair.annotations), 1.0);
            batch.push(PatchExample {
                patch: pair.image.extract_patch(r, c),
                label: 1.0,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(DataError::Sampling(
                "could not place a positive patch (pores too close to borders?)".into(),
            ));
        }
    }
    for _ in 0..n_neg {
        let mut placed = false;
        for _ in 0..1000 {
            let pair = &images[rng.random_range(0..images.len())];
            let r = rng.random_range(PATCH_MARGIN..pair.image.height - PATCH_MARGIN);
            let c = rng.random_range(PATCH_MARGIN..pair.image.width - PATCH_MARGIN);
            if label_patch((r, c), &pair.annotations) == 1.0 {
                continue;
            }
            batch.push(PatchExample {
                patch: pair.image.extract_patch(r, c),
                label: 0.0,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(DataError::Sampling(
                "could not place a negative patch (image saturated with pores?)".into(),
            ));
        }
    }
    batch.shuffle(rng);
    Ok(batch)
}
