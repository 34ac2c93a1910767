//! Accuracy aggregation over tasks and seeds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Task, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: Task,
    /// (seed, fraction of images passing), ascending by seed.
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// In report column order; tasks without verdicts are absent.
    pub tasks: Vec<TaskSummary>,
    /// Mean of the task means.
    pub average: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn aggregate(verdicts: &[Verdict]) -> Report {
    let mut counts: BTreeMap<(Task, u64), (usize, usize)> = BTreeMap::new();
    for v in verdicts {
        let c = counts.entry((v.task, v.seed)).or_default();
        c.0 += v.pass as usize;
        c.1 += 1;
    }
    let mut tasks = Vec::new();
    let mut warnings = Vec::new();
    for task in Task::ALL {
        let per_seed: Vec<(u64, f64)> = counts
            .iter()
            .filter(|((t, _), _)| *t == task)
            .map(|(&(_, seed), &(pass, total))| (seed, pass as f64 / total as f64))
            .collect();
        if per_seed.is_empty() {
            warnings.push(format!("no verdicts for task {task}"));
            continue;
        }
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().map(|p| p.1).sum::<f64>() / n;
        let var = per_seed.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n;
        tasks.push(TaskSummary { task, per_seed, mean, std: var.sqrt() });
    }
    let average = (!tasks.is_empty()).then(|| tasks.iter().map(|t| t.mean).sum::<f64>() / tasks.len() as f64);
    Report { tasks, average, warnings }
}

/// Tab-separated table with one row for `model`; absent tasks print `-`.
pub fn format_report(model: &str, report: &Report) -> String {
    let mut header = vec!["Model".to_string()];
    let mut row = vec![model.to_string()];
    for task in Task::ALL {
        header.push(task.column().to_string());
        row.push(match report.tasks.iter().find(|t| t.task == task) {
            Some(t) => format!("{:.2} ± {:.2}", t.mean, t.std),
            None => "-".to_string(),
        });
    }
    header.push("Avg.".into());
    row.push(report.average.map(|a| format!("{a:.2}")).unwrap_or_else(|| "-".into()));
    format!("{}\n{}\n", header.join("\t"), row.join("\t"))
}
