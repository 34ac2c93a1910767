//! Small MMDiT-style model with seeded random weights.
//!
//! Each block keeps separate weights for the visual and text streams:
//! adaptive layer-norm modulation from the timestep embedding, per-head
//! RMS-normalised queries and keys, joint masked attention over the
//! concatenated sequence, and gated residual attention and MLP updates.

use ndarray::{concatenate, s, Array1, Array2, Axis};

use super::attention::{masked_attention, HeadCapture};
use super::{
    AttentionRecord, HeadSelector, LatentState, ModelAdapter, ModelConfig, ModelError, TokenLayout, TokenizedPrompt,
};
use crate::region_binding::AttentionMask;
use crate::rng::PortableRng;

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
struct StreamWeights {
    modulation: Array2<f64>,
    modulation_bias: Array1<f64>,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    mlp_in: Array2<f64>,
    mlp_out: Array2<f64>,
}

#[derive(Debug, Clone)]
struct BlockWeights {
    visual: StreamWeights,
    text: StreamWeights,
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    cfg: ModelConfig,
    patch_in: Array2<f64>,
    patch_bias: Array1<f64>,
    positions: Array2<f64>,
    token_embedding: Array2<f64>,
    text_proj: Array2<f64>,
    time_in: Array2<f64>,
    time_out: Array2<f64>,
    blocks: Vec<BlockWeights>,
    final_modulation: Array2<f64>,
    final_out: Array2<f64>,
}

fn gaussian_matrix(seed: u64, name: &str, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let mut rng = PortableRng::substream(seed, &format!("toy/weights/{name}"));
    Array2::from_shape_fn((rows, cols), |_| rng.gaussian() * std)
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
}

fn layer_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

/// `LN(x) * (1 + scale) + shift`, broadcasting the modulation over rows.
fn modulate(x: &Array2<f64>, shift: &Array1<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let mut out = layer_norm(x);
    for mut row in out.rows_mut() {
        row.zip_mut_with(scale, |v, s| *v *= 1.0 + s);
        row += shift;
    }
    out
}

fn rms_norm_heads(x: &mut Array2<f64>, num_heads: usize) {
    let head_dim = x.ncols() / num_heads;
    for mut row in x.rows_mut() {
        for h in 0..num_heads {
            let mut chunk = row.slice_mut(s![h * head_dim..(h + 1) * head_dim]);
            let ms = chunk.iter().map(|v| v * v).sum::<f64>() / head_dim as f64;
            let inv = 1.0 / (ms + LN_EPS).sqrt();
            chunk.mapv_inplace(|v| v * inv);
        }
    }
}

/// Sine/cosine features of a scalar, `dim` wide.
fn sinusoid(t: f64, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t * freq).sin();
        out[half + i] = (t * freq).cos();
    }
    out
}

/// Lowercased alphanumeric words hashed (FNV-1a) into `1..vocab`, padded
/// with id 0 to `len`. Words past `len` are dropped.
pub fn tokenize_words(prompt: &str, len: usize, vocab: usize) -> Result<TokenizedPrompt, ModelError> {
    let mut ids: Vec<u32> = prompt
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .take(len)
        .map(|w| {
            let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
            for b in w.to_lowercase().bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
            1 + (hash % (vocab as u64 - 1)) as u32
        })
        .collect();
    if ids.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    let real = ids.len();
    ids.resize(len, 0);
    let pad_flags = (0..len).map(|i| i >= real).collect();
    TokenizedPrompt::new(ids, pad_flags)
}

impl StreamWeights {
    fn init(seed: u64, prefix: &str, d: usize, hidden: usize) -> Self {
        let w =
            |name: &str, r: usize, c: usize, std: f64| gaussian_matrix(seed, &format!("{prefix}/{name}"), r, c, std);
        let inv = 1.0 / (d as f64).sqrt();
        let mut modulation_bias = Array1::zeros(6 * d);
        // gates start half open
        modulation_bias.slice_mut(s![2 * d..3 * d]).fill(0.5);
        modulation_bias.slice_mut(s![5 * d..6 * d]).fill(0.5);
        Self {
            modulation: w("modulation", d, 6 * d, 0.1 * inv),
            modulation_bias,
            wq: w("q", d, d, inv),
            wk: w("k", d, d, inv),
            wv: w("v", d, d, inv),
            wo: w("o", d, d, inv),
            mlp_in: w("mlp_in", d, hidden, inv),
            mlp_out: w("mlp_out", hidden, d, 1.0 / (hidden as f64).sqrt()),
        }
    }

    /// shift/scale/gate for attention, then for the MLP.
    fn modulation(&self, cond: &Array1<f64>) -> [Array1<f64>; 6] {
        let m = cond.dot(&self.modulation) + &self.modulation_bias;
        let d = m.len() / 6;
        std::array::from_fn(|i| m.slice(s![i * d..(i + 1) * d]).to_owned())
    }

    fn mlp(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.mlp_in).mapv(gelu).dot(&self.mlp_out)
    }
}

fn gated(update: Array2<f64>, gate: &Array1<f64>) -> Array2<f64> {
    let mut out = update;
    for mut row in out.rows_mut() {
        row *= gate;
    }
    out
}

impl ToyModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let c = cfg.latent_channels;
        let seed = cfg.seed;
        let hidden = d * cfg.mlp_ratio;
        let inv = 1.0 / (d as f64).sqrt();
        let (rows, cols) = cfg.latent_grid;
        let mut positions = Array2::zeros((rows * cols, d));
        for r in 0..rows {
            for col in 0..cols {
                let mut p = positions.row_mut(r * cols + col);
                p.slice_mut(s![..d / 2]).assign(&sinusoid(r as f64, d / 2));
                p.slice_mut(s![d / 2..]).assign(&sinusoid(col as f64, d / 2));
            }
        }
        let blocks = (0..cfg.num_blocks)
            .map(|b| BlockWeights {
                visual: StreamWeights::init(seed, &format!("block{b}/visual"), d, hidden),
                text: StreamWeights::init(seed, &format!("block{b}/text"), d, hidden),
            })
            .collect();
        Ok(Self {
            patch_in: gaussian_matrix(seed, "patch_in", c, d, 1.0 / (c as f64).sqrt()),
            patch_bias: Array1::zeros(d),
            positions,
            token_embedding: gaussian_matrix(seed, "token_embedding", cfg.vocab_size, d, 1.0),
            text_proj: gaussian_matrix(seed, "text_proj", d, d, inv),
            time_in: gaussian_matrix(seed, "time_in", d, d, inv),
            time_out: gaussian_matrix(seed, "time_out", d, d, inv),
            blocks,
            final_modulation: gaussian_matrix(seed, "final_modulation", d, 2 * d, 0.1 * inv),
            final_out: gaussian_matrix(seed, "final_out", d, c, inv),
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Zeroes every attention output and MLP output projection, turning each
    /// block into the identity.
    pub fn zero_output_projections(&mut self) {
        for b in &mut self.blocks {
            for s in [&mut b.visual, &mut b.text] {
                s.wo.fill(0.0);
                s.mlp_out.fill(0.0);
            }
        }
    }

    fn time_embedding(&self, tau: f64) -> Array1<f64> {
        let base = sinusoid(tau * 1000.0, self.cfg.embed_dim);
        base.dot(&self.time_in).mapv(silu).dot(&self.time_out).mapv(silu)
    }

    /// Embeds visual latents and text ids into the hidden space.
    pub fn embed(&self, latent: &Array2<f64>, tau: f64, prompt: &TokenizedPrompt) -> Result<LatentState, ModelError> {
        let expected = (self.cfg.n_visual(), self.cfg.latent_channels);
        if latent.dim() != expected {
            return Err(ModelError::ShapeMismatch(format!("latent {:?}, expected {expected:?}", latent.dim())));
        }
        if prompt.len() != self.cfg.text_len_max {
            return Err(ModelError::ShapeMismatch(format!(
                "prompt has {} tokens, expected {}",
                prompt.len(),
                self.cfg.text_len_max
            )));
        }
        let visual = latent.dot(&self.patch_in) + &self.patch_bias + &self.positions;
        let mut text = Array2::zeros((prompt.len(), self.cfg.embed_dim));
        for (mut row, &id) in text.rows_mut().into_iter().zip(&prompt.token_ids) {
            let id = (id as usize).min(self.cfg.vocab_size - 1);
            row.assign(&self.token_embedding.row(id));
        }
        Ok(LatentState { visual_tokens: visual, text_tokens: text.dot(&self.text_proj), tau })
    }

    /// One joint block: modulated pre-norm, masked joint attention, gated
    /// residual attention and MLP updates.
    pub fn forward_block(
        &self,
        state: &LatentState,
        block_index: usize,
        mask: Option<&AttentionMask>,
        capture_heads: &[usize],
    ) -> Result<(LatentState, Vec<AttentionRecord>), ModelError> {
        let block = self.blocks.get(block_index).ok_or(ModelError::HeadOutOfRange { block: block_index, head: 0 })?;
        if let Some(&head) = capture_heads.iter().find(|&&h| h >= self.cfg.num_heads) {
            return Err(ModelError::HeadOutOfRange { block: block_index, head });
        }
        let cond = self.time_embedding(state.tau);
        let n_visual = state.visual_tokens.nrows();
        let n_text = state.text_tokens.nrows();
        let heads = self.cfg.num_heads;

        let [v_shift, v_scale, v_gate, v_mshift, v_mscale, v_mgate] = block.visual.modulation(&cond);
        let [t_shift, t_scale, t_gate, t_mshift, t_mscale, t_mgate] = block.text.modulation(&cond);
        let xv = modulate(&state.visual_tokens, &v_shift, &v_scale);
        let xt = modulate(&state.text_tokens, &t_shift, &t_scale);

        let joint = |wv: &Array2<f64>, wt: &Array2<f64>| {
            concatenate(Axis(0), &[xv.dot(wv).view(), xt.dot(wt).view()]).expect("same width")
        };
        let mut q = joint(&block.visual.wq, &block.text.wq);
        let mut k = joint(&block.visual.wk, &block.text.wk);
        let v = joint(&block.visual.wv, &block.text.wv);
        rms_norm_heads(&mut q, heads);
        rms_norm_heads(&mut k, heads);

        let captures: Vec<HeadCapture> =
            capture_heads.iter().map(|&head| HeadCapture { head, rows: n_visual..n_visual + n_text }).collect();
        let (attn, weights) = masked_attention(&q, &k, &v, heads, mask, &captures)?;

        let attn_v = attn.slice(s![..n_visual, ..]).dot(&block.visual.wo);
        let attn_t = attn.slice(s![n_visual.., ..]).dot(&block.text.wo);
        let mut visual = &state.visual_tokens + &gated(attn_v, &v_gate);
        let mut text = &state.text_tokens + &gated(attn_t, &t_gate);
        visual = &visual + &gated(block.visual.mlp(&modulate(&visual, &v_mshift, &v_mscale)), &v_mgate);
        text = &text + &gated(block.text.mlp(&modulate(&text, &t_mshift, &t_mscale)), &t_mgate);

        let records = capture_heads
            .iter()
            .zip(weights)
            .map(|(&head, w)| AttentionRecord { block_index, head_index: head, step_index: 0, n_visual, weights: w })
            .collect();
        Ok((LatentState { visual_tokens: visual, text_tokens: text, tau: state.tau }, records))
    }
}

impl ModelAdapter for ToyModel {
    fn token_layout(&self) -> TokenLayout {
        TokenLayout {
            grid: self.cfg.latent_grid,
            n_text: self.cfg.text_len_max,
            latent_channels: self.cfg.latent_channels,
        }
    }

    fn num_blocks(&self) -> usize {
        self.cfg.num_blocks
    }

    fn num_heads(&self) -> usize {
        self.cfg.num_heads
    }

    fn tokenize(&self, prompt: &str) -> Result<TokenizedPrompt, ModelError> {
        tokenize_words(prompt, self.cfg.text_len_max, self.cfg.vocab_size)
    }

    fn predict_velocity(
        &self,
        latent: &Array2<f64>,
        tau: f64,
        prompt: &TokenizedPrompt,
        mask: Option<&AttentionMask>,
        capture: &[HeadSelector],
    ) -> Result<(Array2<f64>, Vec<AttentionRecord>), ModelError> {
        for &head in capture {
            self.check_head(head)?;
        }
        let mut state = self.embed(latent, tau, prompt)?;
        let mut records: Vec<AttentionRecord> = Vec::with_capacity(capture.len());
        for b in 0..self.cfg.num_blocks {
            let heads: Vec<usize> = capture.iter().filter(|c| c.block == b).map(|c| c.head).collect();
            let (next, recs) = self.forward_block(&state, b, mask, &heads)?;
            state = next;
            records.extend(recs);
        }
        // back to request order
        let records = capture
            .iter()
            .map(|sel| {
                records.iter().find(|r| r.selector() == *sel).cloned().expect("every requested head was captured")
            })
            .collect();
        let cond = self.time_embedding(tau);
        let m = cond.dot(&self.final_modulation);
        let d = self.cfg.embed_dim;
        let shift = m.slice(s![..d]).to_owned();
        let scale = m.slice(s![d..]).to_owned();
        let velocity = modulate(&state.visual_tokens, &shift, &scale).dot(&self.final_out);
        Ok((velocity, records))
    }

    fn describe(&self) -> String {
        let c = &self.cfg;
        format!(
            "toy-mmdit grid={}x{} channels={} dim={} blocks={} heads={} text={} seed={}",
            c.latent_grid.0,
            c.latent_grid.1,
            c.latent_channels,
            c.embed_dim,
            c.num_blocks,
            c.num_heads,
            c.text_len_max,
            c.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::BoundingBox;
    use crate::region_binding::{build_rb_mask, partition_tokens};
    use sha2::{Digest, Sha256};

    fn small() -> ModelConfig {
        ModelConfig {
            latent_grid: (4, 4),
            embed_dim: 16,
            num_blocks: 2,
            num_heads: 2,
            text_len_max: 6,
            ..Default::default()
        }
    }

    fn noise(cfg: &ModelConfig, seed: u64) -> Array2<f64> {
        let mut rng = PortableRng::from_seed(seed);
        Array2::from_shape_fn((cfg.n_visual(), cfg.latent_channels), |_| rng.gaussian())
    }

    fn hash(m: &Array2<f64>) -> String {
        let mut h = Sha256::new();
        for v in m.iter() {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    #[test]
    fn zero_projections_make_blocks_identity() {
        let mut model = ToyModel::new(small()).unwrap();
        model.zero_output_projections();
        let prompt = model.tokenize("a red dog").unwrap();
        let state = model.embed(&noise(model.config(), 1), 0.3, &prompt).unwrap();
        let (out, _) = model.forward_block(&state, 0, None, &[]).unwrap();
        assert_eq!(out, state);
    }

    #[test]
    fn forward_block_is_deterministic() {
        let model = ToyModel::new(small()).unwrap();
        let prompt = model.tokenize("a red dog").unwrap();
        let state = model.embed(&noise(model.config(), 1), 0.3, &prompt).unwrap();
        let a = model.forward_block(&state, 1, None, &[0]).unwrap();
        let b = model.forward_block(&state, 1, None, &[0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn background_mask_matches_no_mask_exactly() {
        let model = ToyModel::new(small()).unwrap();
        let prompt = model.tokenize("a park").unwrap();
        let partition = partition_tokens((4, 4), &BoundingBox::full(32), 32, &prompt.pad_flags).unwrap();
        let mask = build_rb_mask(&partition);
        let state = model.embed(&noise(model.config(), 2), 0.5, &prompt).unwrap();
        let masked = model.forward_block(&state, 0, Some(&mask), &[1]).unwrap();
        let open = model.forward_block(&state, 0, None, &[1]).unwrap();
        assert_eq!(masked, open);
    }

    #[test]
    fn velocity_golden_hash() {
        let model = ToyModel::new(ModelConfig::default()).unwrap();
        let prompt = model.tokenize("a photo of a dog left of a cat").unwrap();
        let (v, _) = model.predict_velocity(&noise(model.config(), 7), 0.25, &prompt, None, &[]).unwrap();
        assert_eq!(v.dim(), (64, 4));
        assert!(v.iter().all(|x| x.is_finite()));
        assert_eq!(hash(&v), GOLDEN_VELOCITY);
    }

    const GOLDEN_VELOCITY: &str = "830536ec98f5cf705d11ecc4c830757a77983fe68beca024926cf684b220f68a";

    #[test]
    fn prompts_change_velocity() {
        let model = ToyModel::new(small()).unwrap();
        let x = noise(model.config(), 3);
        let a = model.predict_velocity(&x, 0.1, &model.tokenize("a dog").unwrap(), None, &[]).unwrap().0;
        let b = model.predict_velocity(&x, 0.1, &model.tokenize("a cat").unwrap(), None, &[]).unwrap().0;
        assert_ne!(a, b);
    }

    #[test]
    fn capture_echoes_selector_and_rows_are_stochastic() {
        let model = ToyModel::new(small()).unwrap();
        let prompt = model.tokenize("a dog").unwrap();
        let sel = [HeadSelector { block: 1, head: 1 }, HeadSelector { block: 0, head: 0 }];
        let (_, recs) = model.predict_velocity(&noise(model.config(), 4), 0.4, &prompt, None, &sel).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].selector(), sel[0]);
        assert_eq!(recs[1].selector(), sel[1]);
        assert_eq!(recs[0].weights.dim(), (6, 16 + 6));
        for row in recs[0].weights.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_heads_and_shapes_rejected() {
        let model = ToyModel::new(small()).unwrap();
        let prompt = model.tokenize("a dog").unwrap();
        let x = noise(model.config(), 5);
        let sel = [HeadSelector { block: 2, head: 0 }];
        assert!(matches!(model.predict_velocity(&x, 0.0, &prompt, None, &sel), Err(ModelError::HeadOutOfRange { .. })));
        let wrong = Array2::zeros((3, 4));
        assert!(matches!(model.predict_velocity(&wrong, 0.0, &prompt, None, &[]), Err(ModelError::ShapeMismatch(_))));
    }

    #[test]
    fn tokenizer_pads_and_rejects_empty() {
        let t = tokenize_words("A dog, a cat!", 6, 100).unwrap();
        assert_eq!(t.pad_flags, vec![false, false, false, false, true, true]);
        assert_eq!(t.token_ids[0], t.token_ids[2]);
        assert_eq!(tokenize_words("  ,. ", 6, 100), Err(ModelError::EmptyPrompt));
    }

    #[test]
    fn config_validation() {
        let cfg = ModelConfig { num_heads: 5, ..Default::default() };
        assert!(ToyModel::new(cfg).is_err());
        let cfg = ModelConfig { latent_grid: (1, 4), ..Default::default() };
        assert!(ToyModel::new(cfg).is_err());
    }
}
