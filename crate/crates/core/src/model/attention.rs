use ndarray::{s, Array2};

use super::ModelError;
use crate::region_binding::AttentionMask;

/// Which head's weights to return, and for which query rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadCapture {
    pub head: usize,
    pub rows: std::ops::Range<usize>,
}

/// Multi-head scaled dot-product attention with an additive `{0, -inf}` mask.
///
/// Inputs are `N x d` with `d` split evenly across `num_heads`. Masked keys get
/// exactly zero weight. Returns the concatenated head outputs and, for each
/// capture request, the selected head's softmax rows.
pub fn masked_attention(
    queries: &Array2<f64>,
    keys: &Array2<f64>,
    values: &Array2<f64>,
    num_heads: usize,
    mask: Option<&AttentionMask>,
    captures: &[HeadCapture],
) -> Result<(Array2<f64>, Vec<Array2<f64>>), ModelError> {
    let (n, d) = queries.dim();
    if keys.dim() != (n, d) || values.dim() != (n, d) {
        return Err(ModelError::ShapeMismatch(format!(
            "q {:?}, k {:?}, v {:?}",
            queries.dim(),
            keys.dim(),
            values.dim()
        )));
    }
    if num_heads == 0 || d % num_heads != 0 {
        return Err(ModelError::ShapeMismatch(format!("{d} channels over {num_heads} heads")));
    }
    if let Some(m) = mask {
        if m.size() != n {
            return Err(ModelError::ShapeMismatch(format!("mask is {0}x{0}, sequence is {n}", m.size())));
        }
    }
    let head_dim = d / num_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut output = Array2::<f64>::zeros((n, d));
    let mut captured: Vec<Option<Array2<f64>>> = vec![None; captures.len()];

    for h in 0..num_heads {
        let cols = s![.., h * head_dim..(h + 1) * head_dim];
        let q = queries.slice(cols);
        let k = keys.slice(cols);
        let v = values.slice(cols);
        let mut weights = q.dot(&k.t());
        for (row, mut scores) in weights.rows_mut().into_iter().enumerate() {
            let blocked = |j: usize| mask.is_some_and(|m| m.is_blocked(row, j));
            let mut max = f64::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate() {
                *s *= scale;
                if !blocked(j) && *s > max {
                    max = *s;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(ModelError::FullyMaskedRow { row });
            }
            let mut total = 0.0;
            for (j, s) in scores.iter_mut().enumerate() {
                *s = if blocked(j) { 0.0 } else { (*s - max).exp() };
                total += *s;
            }
            scores.mapv_inplace(|w| w / total);
        }
        output.slice_mut(cols).assign(&weights.dot(&v));
        for (slot, cap) in captured.iter_mut().zip(captures) {
            if cap.head == h {
                *slot = Some(weights.slice(s![cap.rows.clone(), ..]).to_owned());
            }
        }
    }

    let captured = captured
        .into_iter()
        .zip(captures)
        .map(|(c, cap)| c.ok_or(ModelError::HeadOutOfRange { block: 0, head: cap.head }))
        .collect::<Result<_, _>>()?;
    Ok((output, captured))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PortableRng;
    use ndarray::array;

    fn all_rows(n: usize, head: usize) -> Vec<HeadCapture> {
        vec![HeadCapture { head, rows: 0..n }]
    }

    #[test]
    fn identical_keys_split_evenly() {
        let q = array![[1.0, 0.0], [0.0, 1.0]];
        let k = array![[0.5, 0.5], [0.5, 0.5]];
        let v = array![[1.0, 2.0], [3.0, 4.0]];
        let (_, caps) = masked_attention(&q, &k, &v, 1, None, &all_rows(2, 0)).unwrap();
        for w in caps[0].iter() {
            assert_eq!(*w, 0.5);
        }
    }

    #[test]
    fn single_surviving_key() {
        let q = array![[1.0, 2.0], [0.3, -1.0]];
        let k = array![[0.2, 0.1], [2.0, 2.0]];
        let v = array![[1.0, 2.0], [3.0, 4.0]];
        let mut mask = AttentionMask::open(2);
        mask.block(0, 1);
        let (out, caps) = masked_attention(&q, &k, &v, 1, Some(&mask), &all_rows(2, 0)).unwrap();
        assert_eq!(caps[0][[0, 1]], 0.0);
        assert_eq!(caps[0][[0, 0]], 1.0);
        assert_eq!(out.row(0).to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let mut mask = AttentionMask::open(2);
        mask.block(1, 0);
        mask.block(1, 1);
        let err = masked_attention(&x, &x, &x, 1, Some(&mask), &[]).unwrap_err();
        assert_eq!(err, ModelError::FullyMaskedRow { row: 1 });
    }

    /// Reference: per-entry exp without max shift, Neumaier-compensated sums,
    /// accumulated independently of the matrix-product path.
    fn reference_weights(
        q: &Array2<f64>,
        k: &Array2<f64>,
        head: usize,
        heads: usize,
        mask: &AttentionMask,
    ) -> Array2<f64> {
        let (n, d) = q.dim();
        let hd = d / heads;
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            let mut exps = vec![0.0f64; n];
            for j in 0..n {
                if mask.is_blocked(i, j) {
                    continue;
                }
                let mut dot = 0.0;
                let mut comp = 0.0;
                for c in head * hd..(head + 1) * hd {
                    let term = q[[i, c]] * k[[j, c]];
                    let t = dot + term;
                    comp += if f64::abs(dot) >= f64::abs(term) { (dot - t) + term } else { (term - t) + dot };
                    dot = t;
                }
                exps[j] = ((dot + comp) / (hd as f64).sqrt()).exp();
            }
            let mut total = 0.0;
            let mut comp = 0.0;
            for &e in &exps {
                let t = total + e;
                comp += if total >= e { (total - t) + e } else { (e - t) + total };
                total = t;
            }
            let total = total + comp;
            for j in 0..n {
                out[[i, j]] = exps[j] / total;
            }
        }
        out
    }

    #[test]
    fn random_six_token_case_matches_reference() {
        let mut rng = PortableRng::from_seed(42);
        let (n, d, heads) = (6, 8, 2);
        let mut gen = || Array2::from_shape_fn((n, d), |_| rng.gaussian());
        let (q, k, v) = (gen(), gen(), gen());
        let mut mask = AttentionMask::open(n);
        for (i, j) in [(0, 3), (1, 4), (2, 0), (5, 1), (5, 2)] {
            mask.block(i, j);
        }
        for head in 0..heads {
            let (_, caps) = masked_attention(&q, &k, &v, heads, Some(&mask), &all_rows(n, head)).unwrap();
            let reference = reference_weights(&q, &k, head, heads, &mask);
            for (a, b) in caps[0].iter().zip(reference.iter()) {
                assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }
    }
}
