//! Attention capture over a probe corpus for head selection.

use ndarray::Array2;

use super::{PipelineError, StitchConfig};
use crate::cutout::{ProbeSample, TokenMask};
use crate::model::{sample, CaptureSpec, HeadSelector, ModelAdapter, Unmasked};
use crate::rng::PortableRng;

/// Samples `"a photo of a {object}"` without constraints for `cfg.s_steps`
/// steps and records every head during the last of them.
pub fn collect_probe<M: ModelAdapter + ?Sized>(
    model: &M,
    object: &str,
    reference: TokenMask,
    cfg: &StitchConfig,
) -> Result<ProbeSample, PipelineError> {
    cfg.validate()?;
    let layout = model.token_layout();
    if reference.grid() != layout.grid {
        return Err(PipelineError::ShapeMismatch(format!(
            "reference mask for {object} is {:?}, model grid is {:?}",
            reference.grid(),
            layout.grid
        )));
    }
    let prompt = model.tokenize(&ProbeSample::probe_prompt(object))?;
    let heads: Vec<HeadSelector> = (0..model.num_blocks())
        .flat_map(|block| (0..model.num_heads()).map(move |head| HeadSelector { block, head }))
        .collect();
    let schedule = model.schedule(cfg.t_steps)?;
    let mut rng = PortableRng::substream(cfg.seed, &format!("noise/probe/{object}"));
    let noise = Array2::from_shape_simple_fn((layout.n_visual(), layout.latent_channels), || rng.gaussian());
    let capture = CaptureSpec { step: cfg.s_steps - 1, heads };
    let traj = sample(model, noise, &prompt, &schedule, 0..cfg.s_steps, &Unmasked, Some(&capture))?;
    Ok(ProbeSample { object: object.to_string(), pad_flags: prompt.pad_flags, reference, records: traj.records })
}
