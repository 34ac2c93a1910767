//! Run directory persistence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use ndarray::Array2;

use super::{PipelineError, StitchConfig, StitchRun};
use crate::layout::LayoutPlan;
use crate::manifest::RunManifest;
use crate::tensor::TensorDump;

/// Writes via a sibling temporary file and a rename, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Grayscale rendering of a latent: channel mean per token, min-max scaled.
pub fn preview_pgm(latent: &Array2<f64>, grid: (usize, usize)) -> Vec<u8> {
    let means: Vec<f64> = latent.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect();
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels: Vec<u8> =
        means.iter().map(|&m| if hi > lo { ((m - lo) / (hi - lo) * 255.0).round() as u8 } else { 128 }).collect();
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&pixels, grid.1 as u32, grid.0 as u32, ExtendedColorType::L8)
        .expect("in-memory PGM encode");
    out
}

#[derive(Debug, Clone)]
pub struct RunDirectory {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

/// Persists a finished run. `meta.json` is written last and lists every
/// other file with its hash.
pub fn write_run_dir(
    root: &Path,
    plan: &LayoutPlan,
    cfg: &StitchConfig,
    run: &StitchRun,
    model: &str,
    grid: (usize, usize),
    timings_ms: BTreeMap<String, f64>,
) -> Result<RunDirectory, PipelineError> {
    let mut manifest = RunManifest::new(model, serde_json::to_value(cfg)?);
    manifest.record_input("prompt", plan.full_prompt.as_bytes());
    manifest.timings_ms = timings_ms;
    let mut put = |rel: String, bytes: Vec<u8>| -> Result<(), PipelineError> {
        write_atomic(&root.join(&rel), &bytes)?;
        manifest.record_artifact(&rel, &bytes);
        Ok(())
    };
    put("layout.json".into(), plan.to_json().into_bytes())?;
    for (k, b) in run.branches.iter().enumerate() {
        put(format!("branch_{k}/step_{}.tnsr", cfg.s_steps), TensorDump::from_matrix(&b.latent).to_bytes())?;
        if let Some(c) = &b.cutout {
            put(format!("masks/obj_{k}.pgm"), c.mask.to_pgm())?;
        }
    }
    put("composite.tnsr".into(), TensorDump::from_matrix(&run.composite.tokens).to_bytes())?;
    put("final.tnsr".into(), TensorDump::from_matrix(&run.final_latent).to_bytes())?;
    put("preview.pgm".into(), preview_pgm(&run.final_latent, grid))?;
    write_atomic(&root.join("meta.json"), manifest.to_json().as_bytes())?;
    Ok(RunDirectory { root: root.to_path_buf(), manifest })
}
