//! Region Binding masks.
//!
//! For an object box and its sub-prompt, three families of attention are
//! blocked in every block and head: visual tokens inside the box attending to
//! visual tokens outside it, outside tokens attending to the sub-prompt text,
//! and sub-prompt text attending to outside tokens. Everything else, including
//! outside-to-inside attention and all text-to-text attention, stays open.
//!
//! The joint sequence is ordered visual tokens first (row-major over the
//! latent grid), then text tokens.

use thiserror::Error;

use crate::layout::BoundingBox;
use crate::tensor::TensorDump;

#[derive(Debug, Error, PartialEq)]
pub enum RegionError {
    #[error("box {bbox:?} on canvas {canvas} maps to no tokens of a {rows}x{cols} grid")]
    DegenerateBox { bbox: BoundingBox, canvas: u32, rows: usize, cols: usize },
    #[error("grid and canvas must be non-empty")]
    EmptyGrid,
}

/// Additive attention mask over the joint sequence; every entry is either
/// `0` or `-inf`, stored as a blocked flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    blocked: Vec<bool>,
}

impl AttentionMask {
    pub fn open(size: usize) -> Self {
        Self { size, blocked: vec![false; size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn block(&mut self, query: usize, key: usize) {
        self.blocked[query * self.size + key] = true;
    }

    pub fn is_blocked(&self, query: usize, key: usize) -> bool {
        self.blocked[query * self.size + key]
    }

    pub fn additive(&self, query: usize, key: usize) -> f64 {
        if self.is_blocked(query, key) {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    pub fn is_open(&self) -> bool {
        !self.blocked.iter().any(|&b| b)
    }

    pub fn row_has_open_key(&self, query: usize) -> bool {
        self.blocked[query * self.size..(query + 1) * self.size].iter().any(|&b| !b)
    }

    /// Debug dump: 1.0 where blocked, 0.0 elsewhere.
    pub fn to_tensor(&self) -> TensorDump {
        TensorDump {
            dims: vec![self.size, self.size],
            data: self.blocked.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Inclusive token rectangle on the latent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenRect {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl TokenRect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenPartition {
    pub grid: (usize, usize),
    pub rect: TokenRect,
    /// Visual token indices inside the box, ascending.
    pub inside: Vec<usize>,
    /// Visual token indices outside the box, ascending.
    pub outside: Vec<usize>,
    /// Non-padding text positions, relative to the start of the text block.
    pub subprompt_text: Vec<usize>,
    pub n_text: usize,
}

impl TokenPartition {
    pub fn n_visual(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn is_inside(&self, token: usize) -> bool {
        self.rect.contains(token / self.grid.1, token % self.grid.1)
    }
}

/// Maps canvas cell span `[lo, hi]` onto `tokens` grid positions: floor for
/// the lower edge, inclusive floor for the upper, clamped to the grid.
fn scale_span(lo: u32, hi: u32, canvas: u32, tokens: usize) -> (i64, i64) {
    let t = tokens as i64;
    let c = canvas as i64;
    let start = (lo as i64 * t) / c;
    let end = ((hi as i64 + 1) * t) / c - 1;
    (start.clamp(0, t - 1), end.clamp(0, t - 1))
}

pub fn partition_tokens(
    grid: (usize, usize),
    bbox: &BoundingBox,
    canvas: u32,
    text_pad_flags: &[bool],
) -> Result<TokenPartition, RegionError> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 || canvas == 0 {
        return Err(RegionError::EmptyGrid);
    }
    let (row_min, row_max) = scale_span(bbox.y_min, bbox.y_max, canvas, rows);
    let (col_min, col_max) = scale_span(bbox.x_min, bbox.x_max, canvas, cols);
    if row_max < row_min || col_max < col_min {
        return Err(RegionError::DegenerateBox { bbox: *bbox, canvas, rows, cols });
    }
    let rect = TokenRect {
        row_min: row_min as usize,
        row_max: row_max as usize,
        col_min: col_min as usize,
        col_max: col_max as usize,
    };
    let (inside, outside) = (0..rows * cols).partition(|&i| rect.contains(i / cols, i % cols));
    let subprompt_text = text_pad_flags.iter().enumerate().filter(|(_, &pad)| !pad).map(|(i, _)| i).collect();
    Ok(TokenPartition { grid, rect, inside, outside, subprompt_text, n_text: text_pad_flags.len() })
}

pub fn build_rb_mask(partition: &TokenPartition) -> AttentionMask {
    let n_visual = partition.n_visual();
    let mut mask = AttentionMask::open(n_visual + partition.n_text);
    for &i in &partition.inside {
        for &o in &partition.outside {
            mask.block(i, o);
        }
    }
    for &o in &partition.outside {
        for &t in &partition.subprompt_text {
            mask.block(o, n_visual + t);
            mask.block(n_visual + t, o);
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x_min: u32, x_max: u32, y_min: u32, y_max: u32) -> BoundingBox {
        BoundingBox { x_min, y_min, x_max, y_max }
    }

    fn columns(p: &TokenPartition) -> Vec<usize> {
        let mut cols: Vec<usize> = p.inside.iter().map(|i| i % p.grid.1).collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }

    #[test]
    fn identity_scaling_left_half() {
        let p = partition_tokens((32, 32), &bx(0, 15, 0, 31), 32, &[false]).unwrap();
        assert_eq!(columns(&p), (0..16).collect::<Vec<_>>());
        assert_eq!(p.inside.len(), 16 * 32);
    }

    #[test]
    fn half_resolution_left_half() {
        // floor(0*16/32) = 0, floor(16*16/32) - 1 = 7
        let p = partition_tokens((16, 16), &bx(0, 15, 0, 31), 32, &[false]).unwrap();
        assert_eq!(columns(&p), (0..8).collect::<Vec<_>>());
        assert_eq!(p.inside.len(), 8 * 16);
    }

    #[test]
    fn full_canvas_has_no_outside() {
        let p = partition_tokens((8, 8), &BoundingBox::full(32), 32, &[false, true]).unwrap();
        assert!(p.outside.is_empty());
        assert!(build_rb_mask(&p).is_open());
    }

    #[test]
    fn degenerate_box_rejected() {
        // one canvas cell at x=5 of 32 collapses on an 8-wide grid
        let err = partition_tokens((8, 8), &bx(5, 5, 0, 31), 32, &[false]).unwrap_err();
        assert!(matches!(err, RegionError::DegenerateBox { .. }));
    }

    #[test]
    fn padding_excluded_from_subprompt() {
        let p = partition_tokens((2, 2), &bx(0, 0, 0, 1), 2, &[false, true, false]).unwrap();
        assert_eq!(p.subprompt_text, vec![0, 2]);
    }

    #[test]
    fn two_by_two_left_column_mask() {
        let p = partition_tokens((2, 2), &bx(0, 0, 0, 1), 2, &[false, false]).unwrap();
        assert_eq!(p.inside, vec![0, 2]);
        let mask = build_rb_mask(&p);
        let (t0, t1) = (4, 5);
        let expected =
            [(0, 1), (0, 3), (2, 1), (2, 3), (1, t0), (1, t1), (3, t0), (3, t1), (t0, 1), (t0, 3), (t1, 1), (t1, 3)];
        for q in 0..6 {
            for k in 0..6 {
                assert_eq!(mask.is_blocked(q, k), expected.contains(&(q, k)), "entry ({q},{k})");
            }
        }
        assert_eq!(mask.additive(0, 1), f64::NEG_INFINITY);
        assert_eq!(mask.additive(1, 0), 0.0);
    }

    #[test]
    fn mask_dump_flags() {
        let p = partition_tokens((2, 2), &bx(0, 0, 0, 1), 2, &[false]).unwrap();
        let t = build_rb_mask(&p).to_tensor();
        assert_eq!(t.dims, vec![5, 5]);
        assert_eq!(t.data[1], 1.0);
        assert_eq!(t.data[0], 0.0);
    }

    proptest! {
        #[test]
        fn census_and_open_rows(
            rows in 1usize..10, cols in 1usize..10, canvas in 1u32..40,
            a in 0u32..40, b in 0u32..40, c in 0u32..40, d in 0u32..40,
            pads in proptest::collection::vec(any::<bool>(), 1..6),
        ) {
            let w = canvas;
            let bbox = BoundingBox::clamped(a as i64, c as i64, b as i64, d as i64, w);
            if let Ok(p) = partition_tokens((rows, cols), &bbox, w, &pads) {
                let mask = build_rb_mask(&p);
                let expected = p.inside.len() * p.outside.len() + 2 * p.outside.len() * p.subprompt_text.len();
                prop_assert_eq!(mask.blocked_count(), expected);
                for q in 0..mask.size() {
                    prop_assert!(mask.row_has_open_key(q));
                    prop_assert!(!mask.is_blocked(q, q));
                }
                for &o in &p.outside {
                    for &i in &p.inside {
                        prop_assert!(!mask.is_blocked(o, i));
                    }
                }
            }
        }

        #[test]
        fn enlarging_box_never_shrinks_inside(
            rows in 1usize..12, cols in 1usize..12, canvas in 2u32..40,
            x0 in 0u32..40, x1 in 0u32..40, y0 in 0u32..40, y1 in 0u32..40, grow in 0u32..5,
        ) {
            let small = BoundingBox::clamped(x0 as i64, y0 as i64, x1 as i64, y1 as i64, canvas);
            let big = BoundingBox::clamped(
                small.x_min as i64 - grow as i64, small.y_min as i64 - grow as i64,
                small.x_max as i64 + grow as i64, small.y_max as i64 + grow as i64, canvas);
            if let Ok(ps) = partition_tokens((rows, cols), &small, canvas, &[false]) {
                let pb = partition_tokens((rows, cols), &big, canvas, &[false]).unwrap();
                for i in &ps.inside {
                    prop_assert!(pb.inside.contains(i));
                }
            }
        }
    }
}
