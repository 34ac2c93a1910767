use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};
use std::thread;

use sha2::{Digest, Sha256};

fn stitch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stitch")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("stitch-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn digest(path: &Path) -> String {
    Sha256::digest(std::fs::read(path).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bench_gen_is_replayable() {
    let dir = scratch("gen");
    let (a, b) = (dir.join("a.jsonl"), dir.join("b.jsonl"));
    for out in [&a, &b] {
        let o = stitch(&["bench", "gen", "--task", "neg", "--n", "100", "--seed", "0", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 100);
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn usage_and_domain_errors() {
    let o = stitch(&["bench", "gen", "--task", "seven_obj"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage:"));
    assert_eq!(stitch(&["frobnicate"]).status.code(), Some(2));

    let dir = scratch("errors");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "s_steps = 50\nt_steps = 50\n").unwrap();
    let o = stitch(&["generate", "--prompt", "a dog left of a cat", "--config", s(&cfg), "--out", s(&dir.join("run"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("s_steps"));

    std::fs::write(&cfg, "stepz = 3\n").unwrap();
    let o = stitch(&["generate", "--prompt", "a dog", "--config", s(&cfg), "--out", s(&dir.join("run"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn generate_writes_a_verifiable_run() {
    let dir = scratch("generate");
    let cfg = dir.join("quick.toml");
    std::fs::write(&cfg, "s_steps = 3\nt_steps = 8\n").unwrap();
    let layout = dir.join("layout.json");
    let o = stitch(&["plan", "--prompt", "a cup above a book", "--out", s(&layout)]);
    assert!(o.status.success());
    let run = dir.join("run");
    let o = stitch(&["generate", "--layout", s(&layout), "--config", s(&cfg), "--seed", "4", "--out", s(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = stitch_core::manifest::RunManifest::read(&run.join("meta.json")).unwrap();
    manifest.verify(&run).unwrap();
    assert_eq!(manifest.config["seed"], 4);
    assert!(run.join("branch_2/step_3.tnsr").exists());
    let plan = stitch_core::LayoutPlan::read(&run.join("layout.json")).unwrap();
    assert_eq!(plan, stitch_core::LayoutPlan::read(&layout).unwrap());
}

#[test]
fn oracle_eval_report_loop() {
    let dir = scratch("bench");
    let mut verdict_dirs = Vec::new();
    for seed in ["1", "2"] {
        let d = dir.join(format!("seed{seed}"));
        std::fs::create_dir_all(&d).unwrap();
        let prompts = d.join("prompts.jsonl");
        assert!(stitch(&["bench", "gen", "--task", "three_obj", "--n", "20", "--seed", seed, "--out", s(&prompts)])
            .status
            .success());
        let dets = d.join("detections.jsonl");
        assert!(stitch(&["bench", "oracle-detect", "--prompts", s(&prompts), "--out", s(&dets)]).status.success());
        let o = stitch(&[
            "bench",
            "eval",
            "--prompts",
            s(&prompts),
            "--detections",
            s(&dets),
            "--out",
            s(&d.join("verdicts.jsonl")),
        ]);
        assert!(o.status.success());
        assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "20/20 images pass");
        verdict_dirs.push(d);
    }
    let o = stitch(&["report", "--model", "oracle", s(&verdict_dirs[0]), s(&verdict_dirs[1])]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text, "Model\t2 Obj\t3 Obj\t4 Obj\tNeg\tRel\tPAB\tAvg.\noracle\t-\t1.00 ± 0.00\t-\t-\t-\t-\t1.00\n");
}

#[test]
fn select_head_reports_table() {
    let dir = scratch("heads");
    let objects = dir.join("objects.txt");
    std::fs::write(&objects, "dog\nteddy bear\nunicorn\n").unwrap();
    let refs = dir.join("refs");
    std::fs::create_dir_all(&refs).unwrap();
    let centre = stitch_core::cutout::TokenMask::from_indices((8, 8), &[27, 28, 35, 36]).unwrap();
    std::fs::write(refs.join("dog.pgm"), centre.to_pgm()).unwrap();
    std::fs::write(refs.join("teddy_bear.pgm"), centre.to_pgm()).unwrap();
    let cfg = dir.join("cfg.toml");
    std::fs::write(&cfg, "s_steps = 2\nt_steps = 4\n").unwrap();
    let o = stitch(&[
        "select-head",
        "--probe-objects",
        s(&objects),
        "--references",
        s(&refs),
        "--etas",
        "0.75,0.9",
        "--top",
        "3",
        "--config",
        s(&cfg),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "Block\tHead\tη\tIoU\tIoT");
    assert_eq!(lines.len(), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("skipping unicorn"));
}

#[test]
fn ablate_s_writes_summary() {
    let dir = scratch("ablate");
    let cfg = dir.join("cfg.toml");
    std::fs::write(&cfg, "t_steps = 12\nkappa = 3\n").unwrap();
    let out = dir.join("sweep");
    let o = stitch(&[
        "ablate-s",
        "--s-values",
        "2,4",
        "--prompt",
        "a kite above a boat",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.tsv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("2\t1\t") && rows[2].starts_with("4\t1\t"));
    assert!(out.join("s_4/0000/final.tnsr").exists());
    let o = stitch(&["ablate-s", "--s-values", "12", "--prompt", "a kite", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

/// Minimal chat-completions endpoint: background requests get "park", layout
/// requests get a fixed two-box answer with one coordinate off the canvas.
fn mock_llm(requests: usize) -> (String, Arc<Mutex<Vec<String>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = thread::spawn(move || {
        for stream in listener.incoming().take(requests) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let body = String::from_utf8(body).unwrap();
            let content = if body.contains("ONE word") {
                "park".to_string()
            } else {
                r#"Justification: butterflies fly. [{"prompt": "a butterfly", "x_min": 4, "y_min": 0, "x_max": 27, "y_max": 13}, {"prompt": "a skateboard", "x_min": 0, "y_min": 18, "x_max": 40, "y_max": 31}]"#.to_string()
            };
            let reply =
                serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
            log.lock().unwrap().push(head + &body);
            write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}", reply.len()).unwrap();
        }
    });
    (url, seen, handle)
}

#[test]
fn plan_through_http_provider() {
    let (url, seen, handle) = mock_llm(2);
    let dir = scratch("llm");
    let cfg = dir.join("llm.toml");
    std::fs::write(&cfg, format!("[llm]\nbase_url = \"{url}\"\nmodel = \"layout-model\"\n")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stitch"))
        .args(["plan", "--prompt", "a butterfly above a skateboard", "--provider", "llm", "--config", s(&cfg)])
        .env("STITCH_LLM_API_KEY", "test-key")
        .output()
        .unwrap();
    handle.join().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let layout: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(layout["background"], "park");
    assert_eq!(layout["objects"][1]["x_max"], 31);
    assert!(layout["objects"][0]["y_max"].as_i64().unwrap() < layout["objects"][1]["y_min"].as_i64().unwrap());
    let requests = seen.lock().unwrap();
    assert!(requests.iter().all(|r| r.starts_with("POST /chat/completions") && r.contains("Bearer test-key")));
    assert!(requests.iter().any(|r| r.contains("Description: a butterfly above a skateboard")));
    assert!(requests.iter().all(|r| r.contains("layout-model")));
}
