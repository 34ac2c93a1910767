//! Sweeps over the number of constrained steps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{run_stitch, write_atomic, write_run_dir, PipelineError, StitchConfig};
use crate::layout::LayoutPlan;
use crate::manifest::sha256_hex;
use crate::model::ModelAdapter;
use crate::tensor::TensorDump;

pub const SUMMARY_HEADER: &str = "s_steps\tprompts\taccuracy\tfinal_sha256";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub s_steps: usize,
    pub dir: PathBuf,
    pub prompts: usize,
    /// Filled in by a downstream evaluator; blend scoring is not computed.
    pub accuracy: Option<f64>,
    /// Hash over the concatenated `final.tnsr` bytes of all prompts.
    pub final_sha256: String,
}

/// Runs every plan once per S value under `out/s_<S>/<index>/` and writes
/// `out/summary.tsv`. Rows follow the order of `s_values`.
pub fn run_ablation_sweep<M: ModelAdapter + ?Sized>(
    model: &M,
    plans: &[LayoutPlan],
    s_values: &[usize],
    cfg: &StitchConfig,
    out: &Path,
) -> Result<Vec<AblationRow>, PipelineError> {
    for &s in s_values {
        StitchConfig { s_steps: s, ..cfg.clone() }.validate()?;
    }
    let grid = model.token_layout().grid;
    let mut rows = Vec::with_capacity(s_values.len());
    for &s in s_values {
        let run_cfg = StitchConfig { s_steps: s, ..cfg.clone() };
        let dir = out.join(format!("s_{s}"));
        let mut finals = Vec::new();
        for (i, plan) in plans.iter().enumerate() {
            let run = run_stitch(model, plan, &run_cfg)?;
            finals.extend(TensorDump::from_matrix(&run.final_latent).to_bytes());
            write_run_dir(
                &dir.join(format!("{i:04}")),
                plan,
                &run_cfg,
                &run,
                &model.describe(),
                grid,
                BTreeMap::new(),
            )?;
        }
        rows.push(AblationRow {
            s_steps: s,
            dir,
            prompts: plans.len(),
            accuracy: None,
            final_sha256: sha256_hex(&finals),
        });
    }
    let mut tsv = format!("{SUMMARY_HEADER}\n");
    for r in &rows {
        let acc = r.accuracy.map(|a| format!("{a:.2}")).unwrap_or_else(|| "-".into());
        tsv.push_str(&format!("{}\t{}\t{}\t{}\n", r.s_steps, r.prompts, acc, r.final_sha256));
    }
    write_atomic(&out.join("summary.tsv"), tsv.as_bytes())?;
    Ok(rows)
}
