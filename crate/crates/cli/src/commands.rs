use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use stitch_core::config::{load_config, AppConfig};
use stitch_core::cutout::{best_per_head, format_head_report, rank_heads, TokenMask};
use stitch_core::layout::{fallback_plan, plan_layout, FallbackProvider, HttpChatProvider, LayoutProvider};
use stitch_core::model::{ModelConfig, ToyModel};
use stitch_core::pipeline::{collect_probe, run_ablation_sweep, write_atomic, write_run_dir};
use stitch_core::poseval::{
    aggregate, evaluate_batch, format_report, from_jsonl, gen_prompts, oracle_detector, to_jsonl, ImageDetections,
    PromptRecord, Verdict, Vocab,
};
use stitch_core::{run_stitch, LayoutPlan};

use crate::{
    AblateArgs, BenchCommand, Command, GenerateArgs, OracleArgs, PlanArgs, ProviderKind, ReportArgs, SelectHeadArgs,
};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Plan(a) => plan(a),
        Command::Generate(a) => generate(a),
        Command::SelectHead(a) => select_head(a),
        Command::Bench(BenchCommand::Gen(a)) => {
            let records = gen_prompts(a.task, a.n, a.seed, &Vocab::default())?;
            emit(a.out.as_deref(), &to_jsonl(&records))
        }
        Command::Bench(BenchCommand::Eval(a)) => {
            let records: Vec<PromptRecord> = from_jsonl(&fs::read_to_string(&a.prompts)?)?;
            let images: Vec<ImageDetections> = from_jsonl(&fs::read_to_string(&a.detections)?)?;
            let verdicts = evaluate_batch(&records, &images)?;
            write_atomic(&a.out, to_jsonl(&verdicts).as_bytes())?;
            let passed = verdicts.iter().filter(|v| v.pass).count();
            println!("{passed}/{} images pass", verdicts.len());
            Ok(())
        }
        Command::Bench(BenchCommand::OracleDetect(a)) => oracle_detect(a),
        Command::Report(a) => report(a),
        Command::AblateS(a) => ablate(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => Ok(write_atomic(path, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn config(path: Option<&Path>) -> Result<AppConfig> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => AppConfig::default(),
    })
}

fn toy_model(cfg: &AppConfig) -> Result<ToyModel> {
    if cfg.model != "toy" {
        return Err(format!("model {:?} has no adapter in this build; use \"toy\"", cfg.model).into());
    }
    Ok(ToyModel::new(ModelConfig::default())?)
}

fn provider(kind: ProviderKind, cfg: &AppConfig) -> Box<dyn LayoutProvider> {
    match kind {
        ProviderKind::Fallback => Box::new(FallbackProvider),
        ProviderKind::Llm => {
            Box::new(HttpChatProvider::from_env(&cfg.llm.base_url, &cfg.llm.model, &cfg.llm.api_key_env))
        }
    }
}

fn plan(a: PlanArgs) -> Result<()> {
    let cfg = config(a.config.as_deref())?;
    let canvas = a.canvas.unwrap_or(cfg.stitch.canvas);
    let plan = plan_layout(&a.prompt, canvas, provider(a.provider, &cfg).as_ref())?;
    emit(a.out.as_deref(), &(plan.to_json() + "\n"))
}

fn set_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    set_threads(a.threads)?;
    let mut cfg = config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.stitch.seed = seed;
    }
    if a.sequential_branches {
        cfg.stitch.parallel_branches = false;
    }
    cfg.stitch.validate()?;
    let model = toy_model(&cfg)?;
    let mut plan = match (&a.layout, &a.prompt) {
        (Some(path), _) => LayoutPlan::read(path)?,
        (None, Some(prompt)) => plan_layout(prompt, cfg.stitch.canvas, provider(a.provider, &cfg).as_ref())?,
        (None, None) => return Err("generate needs --prompt or --layout".into()),
    };
    if let Some(prompt) = &a.prompt {
        plan.full_prompt = prompt.clone();
    }
    let started = Instant::now();
    let run = run_stitch(&model, &plan, &cfg.stitch)?;
    let mut timings = BTreeMap::new();
    timings.insert("generate".to_string(), started.elapsed().as_secs_f64() * 1e3);
    let grid = model.config().latent_grid;
    let dir = write_run_dir(&a.out, &plan, &cfg.stitch, &run, "toy", grid, timings)?;
    let final_hash = &dir.manifest.artifact("final.tnsr").expect("final latent recorded").sha256;
    println!("{}\tfinal.tnsr {final_hash}", a.out.display());
    Ok(())
}

fn reference_path(dir: &Path, object: &str) -> PathBuf {
    dir.join(format!("{}.pgm", object.replace(' ', "_")))
}

fn select_head(a: SelectHeadArgs) -> Result<()> {
    let cfg = config(a.config.as_deref())?;
    let model = toy_model(&cfg)?;
    let objects = fs::read_to_string(&a.probe_objects)?;
    let mut samples = Vec::new();
    for object in objects.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let path = reference_path(&a.references, object);
        if !path.exists() {
            eprintln!("skipping {object}: no reference mask at {}", path.display());
            continue;
        }
        samples.push(collect_probe(&model, object, TokenMask::read_pgm(&path)?, &cfg.stitch)?);
    }
    let ranked = rank_heads(&samples, &a.etas, a.kappa)?;
    let best: Vec<_> = best_per_head(&ranked).into_iter().take(a.top).collect();
    emit(a.out.as_deref(), &format_head_report(&best))
}

fn oracle_detect(a: OracleArgs) -> Result<()> {
    let records: Vec<PromptRecord> = from_jsonl(&fs::read_to_string(&a.prompts)?)?;
    let mut lines = Vec::with_capacity(records.len());
    for record in &records {
        let layout_file = a.layouts.as_ref().map(|d| d.join(format!("{}.json", record.index)));
        let plan = match layout_file {
            Some(path) if path.exists() => LayoutPlan::read(&path)?,
            _ => match fallback_plan(&record.scene(), a.canvas) {
                Ok(plan) => plan,
                Err(e) => {
                    eprintln!("skipping record {}: {e}", record.index);
                    continue;
                }
            },
        };
        lines.push(ImageDetections {
            image: format!("oracle/{}", record.index),
            index: record.index,
            seed: 0,
            detections: oracle_detector(record, &plan)?,
        });
    }
    write_atomic(&a.out, to_jsonl(&lines).as_bytes())?;
    println!("{} detection sets", lines.len());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut verdicts: Vec<Verdict> = Vec::new();
    for input in &a.inputs {
        let path = if input.is_dir() { input.join("verdicts.jsonl") } else { input.clone() };
        verdicts.extend(from_jsonl::<Verdict>(&fs::read_to_string(&path)?)?);
    }
    let report = aggregate(&verdicts);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    emit(a.out.as_deref(), &format_report(&a.model, &report))
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.stitch.seed = seed;
    }
    let model = toy_model(&cfg)?;
    let mut plans = Vec::new();
    for path in &a.layout {
        plans.push(LayoutPlan::read(path)?);
    }
    for prompt in &a.prompt {
        plans.push(plan_layout(prompt, cfg.stitch.canvas, &FallbackProvider)?);
    }
    if plans.is_empty() {
        return Err("ablate-s needs at least one --layout or --prompt".into());
    }
    let rows = run_ablation_sweep(&model, &plans, &a.s_values, &cfg.stitch, &a.out)?;
    for r in rows {
        println!("s={}\t{}\t{}", r.s_steps, r.dir.display(), r.final_sha256);
    }
    println!("summary: {}", a.out.join("summary.tsv").display());
    Ok(())
}
