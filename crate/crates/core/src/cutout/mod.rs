//! Cutout: foreground token masks read off a designated attention head.
//!
//! Visual tokens are scored by the mean attention they receive from the
//! non-padding text queries, taken greedily in descending order until the
//! running sum reaches a fraction `eta` of the total, then dilated with a
//! `kappa x kappa` max-pool.

mod heads;

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use thiserror::Error;

use crate::model::AttentionRecord;
use crate::region_binding::TokenPartition;

pub use heads::{
    best_per_head, format_head_report, rank_heads, score_heads, HeadScore, ProbeSample, DEFAULT_ETA_GRID,
    HEAD_REPORT_HEADER,
};

/// Relative slack on the `eta` target so summation order cannot decide
/// whether a boundary token is needed.
const MASS_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CutoutError {
    #[error("no non-padding text tokens to aggregate")]
    NoTextTokens,
    #[error("attention weights are all zero")]
    AllZeroWeights,
    #[error("eta must lie in (0, 1], got {0}")]
    InvalidEta(f64),
    #[error("kernel size must be odd and positive, got {0}")]
    InvalidKernel(usize),
    #[error("mask is empty after restricting to the box")]
    EmptyAfterRestriction,
    #[error("target mask is empty")]
    EmptyTarget,
    #[error("grid mismatch: {0}")]
    ShapeMismatch(String),
    #[error("probe corpus is empty")]
    EmptyCorpus,
    #[error("probe sample {sample} has no record for block {block} head {head}")]
    MissingRecord { sample: usize, block: usize, head: usize },
    #[error("mask image: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary mask over a `rows x cols` token grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl TokenMask {
    pub fn empty(grid: (usize, usize)) -> Self {
        Self { rows: grid.0, cols: grid.1, bits: vec![false; grid.0 * grid.1] }
    }

    pub fn from_bits(grid: (usize, usize), bits: Vec<bool>) -> Result<Self, CutoutError> {
        if bits.len() != grid.0 * grid.1 {
            return Err(CutoutError::ShapeMismatch(format!("{} bits for grid {grid:?}", bits.len())));
        }
        Ok(Self { rows: grid.0, cols: grid.1, bits })
    }

    pub fn from_indices(grid: (usize, usize), indices: &[usize]) -> Result<Self, CutoutError> {
        let mut mask = Self::empty(grid);
        for &i in indices {
            if i >= mask.bits.len() {
                return Err(CutoutError::ShapeMismatch(format!("index {i} outside grid {grid:?}")));
            }
            mask.bits[i] = true;
        }
        Ok(mask)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn contains(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    pub fn is_subset_of(&self, other: &TokenMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn same_grid(&self, other: &TokenMask) -> Result<(), CutoutError> {
        if self.grid() != other.grid() {
            return Err(CutoutError::ShapeMismatch(format!("{:?} vs {:?}", self.grid(), other.grid())));
        }
        Ok(())
    }

    /// Binary P5 graymap, 255 where selected.
    pub fn to_pgm(&self) -> Vec<u8> {
        let pixels: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&pixels, self.cols as u32, self.rows as u32, ExtendedColorType::L8)
            .expect("in-memory PGM encode");
        out
    }

    /// Any graymap; pixels at or above mid-gray count as selected.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self, CutoutError> {
        let img = image::load(Cursor::new(bytes), ImageFormat::Pnm)?.to_luma8();
        let (w, h) = img.dimensions();
        let bits = img.pixels().map(|p| p.0[0] >= 128).collect();
        Self::from_bits((h as usize, w as usize), bits)
    }

    pub fn read_pgm(path: &Path) -> Result<Self, CutoutError> {
        Self::from_pgm(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoutMask {
    pub mask: TokenMask,
    pub eta_used: f64,
    pub kappa_used: usize,
}

/// Mean attention each visual token receives from the non-padding text rows.
pub fn aggregate_text_attention(record: &AttentionRecord, pad_flags: &[bool]) -> Result<Vec<f64>, CutoutError> {
    let rows = record.text_to_visual();
    if pad_flags.len() != rows.nrows() {
        return Err(CutoutError::ShapeMismatch(format!(
            "{} pad flags for {} text rows",
            pad_flags.len(),
            rows.nrows()
        )));
    }
    let live: Vec<usize> = (0..pad_flags.len()).filter(|&i| !pad_flags[i]).collect();
    if live.is_empty() {
        return Err(CutoutError::NoTextTokens);
    }
    let mut weights = vec![0.0; rows.ncols()];
    for &r in &live {
        for (w, &a) in weights.iter_mut().zip(rows.row(r)) {
            *w += a;
        }
    }
    let n = live.len() as f64;
    Ok(weights.into_iter().map(|w| w / n).collect())
}

/// Shortest prefix of tokens in descending weight order (ties by ascending
/// index) whose weight reaches `eta` of the total. Returns ascending indices;
/// never empty.
pub fn select_mask(weights: &[f64], eta: f64) -> Result<Vec<usize>, CutoutError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(CutoutError::InvalidEta(eta));
    }
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(CutoutError::AllZeroWeights);
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let target = eta * total * (1.0 - MASS_SLACK);
    let mut cumulative = 0.0;
    let mut taken = Vec::new();
    for i in order {
        taken.push(i);
        cumulative += weights[i];
        if cumulative >= target {
            break;
        }
    }
    taken.sort_unstable();
    Ok(taken)
}

/// Stride-1 max-pool (binary dilation) with a `kappa x kappa` window clipped
/// at the borders.
pub fn smooth_mask(mask: &TokenMask, kappa: usize, eta_used: f64) -> Result<CutoutMask, CutoutError> {
    if kappa == 0 || kappa.is_multiple_of(2) {
        return Err(CutoutError::InvalidKernel(kappa));
    }
    let r = kappa / 2;
    let (rows, cols) = mask.grid();
    let mut out = TokenMask::empty(mask.grid());
    for row in 0..rows {
        for col in 0..cols {
            if !mask.get(row, col) {
                continue;
            }
            for y in row.saturating_sub(r)..=(row + r).min(rows - 1) {
                for x in col.saturating_sub(r)..=(col + r).min(cols - 1) {
                    out.bits[y * cols + x] = true;
                }
            }
        }
    }
    Ok(CutoutMask { mask: out, eta_used, kappa_used: kappa })
}

pub fn restrict_to_box(cutout: &CutoutMask, partition: &TokenPartition) -> Result<CutoutMask, CutoutError> {
    if cutout.mask.grid() != partition.grid {
        return Err(CutoutError::ShapeMismatch(format!("{:?} vs {:?}", cutout.mask.grid(), partition.grid)));
    }
    let bits: Vec<bool> = (0..cutout.mask.len()).map(|i| cutout.mask.contains(i) && partition.is_inside(i)).collect();
    if !bits.iter().any(|&b| b) {
        return Err(CutoutError::EmptyAfterRestriction);
    }
    Ok(CutoutMask {
        mask: TokenMask::from_bits(partition.grid, bits)?,
        eta_used: cutout.eta_used,
        kappa_used: cutout.kappa_used,
    })
}

/// Full Cutout from a captured record: aggregate, select, dilate.
pub fn cutout_from_record(
    record: &AttentionRecord,
    pad_flags: &[bool],
    grid: (usize, usize),
    eta: f64,
    kappa: usize,
) -> Result<CutoutMask, CutoutError> {
    let weights = aggregate_text_attention(record, pad_flags)?;
    if weights.len() != grid.0 * grid.1 {
        return Err(CutoutError::ShapeMismatch(format!("{} weights for grid {grid:?}", weights.len())));
    }
    let selected = TokenMask::from_indices(grid, &select_mask(&weights, eta)?)?;
    smooth_mask(&selected, kappa, eta)
}

fn overlap(pred: &TokenMask, target: &TokenMask) -> Result<(usize, usize), CutoutError> {
    pred.same_grid(target)?;
    let inter = pred.bits.iter().zip(&target.bits).filter(|(&a, &b)| a && b).count();
    let union = pred.bits.iter().zip(&target.bits).filter(|(&a, &b)| a || b).count();
    Ok((inter, union))
}

/// Intersection over union; two empty masks score 0.
pub fn iou(pred: &TokenMask, target: &TokenMask) -> Result<f64, CutoutError> {
    let (inter, union) = overlap(pred, target)?;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Intersection over target.
pub fn iot(pred: &TokenMask, target: &TokenMask) -> Result<f64, CutoutError> {
    let (inter, _) = overlap(pred, target)?;
    let t = target.count();
    if t == 0 {
        return Err(CutoutError::EmptyTarget);
    }
    Ok(inter as f64 / t as f64)
}
