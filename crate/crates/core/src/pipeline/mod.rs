//! Stitch generation: constrained per-object branches, Cutout, composite
//! latent, unconstrained continuation.

mod ablation;
mod artifacts;
mod probe;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cutout::{cutout_from_record, restrict_to_box, CutoutError, CutoutMask};
use crate::layout::{LayoutError, LayoutPlan};
use crate::model::{sample, CaptureSpec, HeadSelector, MaskedUntil, ModelAdapter, ModelError, Schedule, Unmasked};
use crate::region_binding::{build_rb_mask, partition_tokens, RegionError};
use crate::rng::PortableRng;
use crate::tensor::TensorError;

pub use ablation::{run_ablation_sweep, AblationRow, SUMMARY_HEADER};
pub use artifacts::{preview_pgm, write_atomic, write_run_dir, RunDirectory};
pub use probe::collect_probe;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid stitch config: {0}")]
    InvalidConfig(String),
    #[error("branches disagree on the schedule: {0}")]
    BranchDivergence(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("object {object}: {source}")]
    Object { object: usize, source: Box<PipelineError> },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Cutout(#[from] CutoutError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    fn for_object(object: usize, err: impl Into<PipelineError>) -> Self {
        PipelineError::Object { object, source: Box::new(err.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchConfig {
    pub s_steps: usize,
    pub t_steps: usize,
    /// Operational Cutout threshold.
    pub eta: f64,
    pub kappa: usize,
    pub canvas: u32,
    pub cutout_block: usize,
    pub cutout_head: usize,
    pub shared_noise: bool,
    pub seed: u64,
    /// Threshold at which the cutout head was selected; informational.
    pub head_eta: f64,
    pub restrict_to_box: bool,
    pub parallel_branches: bool,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            s_steps: 10,
            t_steps: 50,
            eta: 0.95,
            kappa: 5,
            canvas: 32,
            cutout_block: 1,
            cutout_head: 0,
            shared_noise: true,
            seed: 0,
            head_eta: 0.95,
            restrict_to_box: true,
            parallel_branches: true,
        }
    }
}

impl StitchConfig {
    pub fn flux() -> Self {
        Self { cutout_block: 14, cutout_head: 20, head_eta: 0.75, ..Self::default() }
    }

    pub fn sd35() -> Self {
        Self { cutout_block: 14, cutout_head: 34, head_eta: 0.75, ..Self::default() }
    }

    pub fn qwen() -> Self {
        Self { s_steps: 6, eta: 0.9, cutout_block: 25, cutout_head: 1, head_eta: 0.9, ..Self::default() }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Self::default()),
            "flux" => Some(Self::flux()),
            "sd35" => Some(Self::sd35()),
            "qwen" => Some(Self::qwen()),
            _ => None,
        }
    }

    pub fn cutout_selector(&self) -> HeadSelector {
        HeadSelector { block: self.cutout_block, head: self.cutout_head }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.s_steps < 1 || self.s_steps >= self.t_steps {
            return bad(format!("need 1 <= s_steps < t_steps, got s_steps={} t_steps={}", self.s_steps, self.t_steps));
        }
        for (name, v) in [("eta", self.eta), ("head_eta", self.head_eta)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if self.kappa == 0 || self.kappa.is_multiple_of(2) {
            return bad(format!("kappa must be odd and positive, got {}", self.kappa));
        }
        if self.canvas < 2 {
            return bad(format!("canvas must be at least 2, got {}", self.canvas));
        }
        Ok(())
    }
}

/// Background latent with object tokens spliced in.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeLatent {
    pub tokens: Array2<f64>,
    /// Source branch per visual token; 0 is the background.
    pub provenance: Vec<usize>,
}

/// Starts from `background` and, for each overlay in order, copies the
/// object tokens at mask positions. Later overlays win contested tokens.
pub fn compose_latents(
    background: &Array2<f64>,
    overlays: &[(&CutoutMask, &Array2<f64>)],
) -> Result<CompositeLatent, PipelineError> {
    let mut tokens = background.clone();
    let mut provenance = vec![0; background.nrows()];
    for (k, (mask, object)) in overlays.iter().enumerate() {
        if object.dim() != background.dim() {
            return Err(PipelineError::ShapeMismatch(format!(
                "overlay {} tokens {:?} vs background {:?}",
                k + 1,
                object.dim(),
                background.dim()
            )));
        }
        if mask.mask.len() != background.nrows() {
            return Err(PipelineError::ShapeMismatch(format!(
                "overlay {} mask has {} cells for {} tokens",
                k + 1,
                mask.mask.len(),
                background.nrows()
            )));
        }
        for i in mask.mask.indices() {
            tokens.row_mut(i).assign(&object.row(i));
            provenance[i] = k + 1;
        }
    }
    Ok(CompositeLatent { tokens, provenance })
}

/// Latent of one branch after the constrained phase.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchResult {
    pub prompt: String,
    pub latent: Array2<f64>,
    pub tau: f64,
    pub cutout: Option<CutoutMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchRun {
    /// Branch 0 is the background.
    pub branches: Vec<BranchResult>,
    pub composite: CompositeLatent,
    pub final_latent: Array2<f64>,
    pub schedule: Vec<f64>,
}

impl StitchRun {
    pub fn cutouts(&self) -> impl Iterator<Item = &CutoutMask> {
        self.branches.iter().filter_map(|b| b.cutout.as_ref())
    }
}

fn initial_noise(cfg: &StitchConfig, branch: usize, shape: (usize, usize)) -> Array2<f64> {
    let name = if cfg.shared_noise { "noise/shared".to_string() } else { format!("noise/branch/{branch}") };
    let mut rng = PortableRng::substream(cfg.seed, &name);
    Array2::from_shape_simple_fn(shape, || rng.gaussian())
}

fn run_branch<M: ModelAdapter + ?Sized>(
    model: &M,
    plan: &LayoutPlan,
    cfg: &StitchConfig,
    schedule: &Schedule,
    k: usize,
) -> Result<BranchResult, PipelineError> {
    let layout = model.token_layout();
    let shape = (layout.n_visual(), layout.latent_channels);
    let noise = initial_noise(cfg, k, shape);
    if k == 0 {
        let prompt = model.tokenize(&plan.background_prompt)?;
        let traj = sample(model, noise, &prompt, schedule, 0..cfg.s_steps, &Unmasked, None)?;
        let last = traj.last();
        return Ok(BranchResult {
            prompt: plan.background_prompt.clone(),
            latent: last.latent.clone(),
            tau: last.tau,
            cutout: None,
        });
    }
    let object = &plan.objects[k - 1];
    let wrap = |e: PipelineError| PipelineError::for_object(k, e);
    let prompt = model.tokenize(&object.sub_prompt).map_err(|e| wrap(e.into()))?;
    let partition =
        partition_tokens(layout.grid, &object.bbox, plan.canvas_size, &prompt.pad_flags).map_err(|e| wrap(e.into()))?;
    let masks = MaskedUntil { mask: build_rb_mask(&partition), until: cfg.s_steps };
    let capture = CaptureSpec { step: cfg.s_steps - 1, heads: vec![cfg.cutout_selector()] };
    let traj =
        sample(model, noise, &prompt, schedule, 0..cfg.s_steps, &masks, Some(&capture)).map_err(|e| wrap(e.into()))?;
    let record = traj
        .records
        .first()
        .ok_or_else(|| wrap(PipelineError::BranchDivergence("designated head was not captured".into())))?;
    let mut cutout =
        cutout_from_record(record, &prompt.pad_flags, layout.grid, cfg.eta, cfg.kappa).map_err(|e| wrap(e.into()))?;
    if cfg.restrict_to_box {
        cutout = restrict_to_box(&cutout, &partition).map_err(|e| wrap(e.into()))?;
    }
    let last = traj.last();
    Ok(BranchResult {
        prompt: object.sub_prompt.clone(),
        latent: last.latent.clone(),
        tau: last.tau,
        cutout: Some(cutout),
    })
}

/// Runs the whole method on `plan`. A plan without objects reduces to
/// sampling the background prompt for `s_steps`, then the full prompt.
pub fn run_stitch<M: ModelAdapter + ?Sized>(
    model: &M,
    plan: &LayoutPlan,
    cfg: &StitchConfig,
) -> Result<StitchRun, PipelineError> {
    cfg.validate()?;
    if plan.objects.is_empty() {
        if plan.canvas_size < 2 {
            return Err(LayoutError::CanvasTooSmall(plan.canvas_size).into());
        }
    } else {
        plan.validate()?;
    }
    model.check_head(cfg.cutout_selector())?;
    let schedule = model.schedule(cfg.t_steps)?;

    let branch_ids: Vec<usize> = (0..=plan.objects.len()).collect();
    let branches: Vec<BranchResult> = if cfg.parallel_branches {
        branch_ids.par_iter().map(|&k| run_branch(model, plan, cfg, &schedule, k)).collect::<Result<_, _>>()?
    } else {
        branch_ids.iter().map(|&k| run_branch(model, plan, cfg, &schedule, k)).collect::<Result<_, _>>()?
    };

    let tau_s = schedule.tau(cfg.s_steps);
    if let Some((k, b)) = branches.iter().enumerate().find(|(_, b)| b.tau != tau_s) {
        return Err(PipelineError::BranchDivergence(format!("branch {k} stopped at tau {} instead of {tau_s}", b.tau)));
    }

    let overlays: Vec<(&CutoutMask, &Array2<f64>)> =
        branches[1..].iter().map(|b| (b.cutout.as_ref().expect("object branches carry a cutout"), &b.latent)).collect();
    let composite = compose_latents(&branches[0].latent, &overlays)?;

    let full_prompt = model.tokenize(&plan.full_prompt)?;
    let traj =
        sample(model, composite.tokens.clone(), &full_prompt, &schedule, cfg.s_steps..cfg.t_steps, &Unmasked, None)?;
    let final_latent = traj.last().latent.clone();
    Ok(StitchRun { branches, composite, final_latent, schedule: schedule.taus().to_vec() })
}
