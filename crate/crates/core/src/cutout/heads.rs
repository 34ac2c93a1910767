//! Segmentation-head profiling over a probe corpus.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cutout_from_record, iot, iou, CutoutError, TokenMask};
use crate::model::{AttentionRecord, HeadSelector};

pub const DEFAULT_ETA_GRID: [f64; 7] = [0.75, 0.80, 0.85, 0.90, 0.95, 0.97, 0.99];

pub const HEAD_REPORT_HEADER: &str = "Block\tHead\tη\tIoU\tIoT";

/// One probe image: captured records for every candidate head plus the
/// reference foreground mask.
#[derive(Debug, Clone)]
pub struct ProbeSample {
    pub object: String,
    pub pad_flags: Vec<bool>,
    pub reference: TokenMask,
    pub records: Vec<AttentionRecord>,
}

impl ProbeSample {
    pub fn probe_prompt(object: &str) -> String {
        format!("a photo of a {object}")
    }

    fn record(&self, head: HeadSelector) -> Option<&AttentionRecord> {
        self.records.iter().find(|r| r.selector() == head)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub block_index: usize,
    pub head_index: usize,
    pub eta: f64,
    pub iou: f64,
    pub iot: f64,
}

impl HeadScore {
    pub fn selector(&self) -> HeadSelector {
        HeadSelector { block: self.block_index, head: self.head_index }
    }
}

fn candidate_heads(samples: &[ProbeSample]) -> Vec<HeadSelector> {
    let mut heads: Vec<HeadSelector> = samples.iter().flat_map(|s| s.records.iter().map(|r| r.selector())).collect();
    heads.sort_by_key(|h| (h.block, h.head));
    heads.dedup();
    heads
}

fn score_one(samples: &[ProbeSample], head: HeadSelector, eta: f64, kappa: usize) -> Result<HeadScore, CutoutError> {
    let mut iou_sum = 0.0;
    let mut iot_sum = 0.0;
    for (i, sample) in samples.iter().enumerate() {
        let record =
            sample.record(head).ok_or(CutoutError::MissingRecord { sample: i, block: head.block, head: head.head })?;
        let pred = cutout_from_record(record, &sample.pad_flags, sample.reference.grid(), eta, kappa)?;
        iou_sum += iou(&pred.mask, &sample.reference)?;
        iot_sum += iot(&pred.mask, &sample.reference)?;
    }
    let n = samples.len() as f64;
    Ok(HeadScore { block_index: head.block, head_index: head.head, eta, iou: iou_sum / n, iot: iot_sum / n })
}

/// Mean IoU and IoT for every (head, eta) pair, in (block, head, eta-grid)
/// order. Each triple is reduced over the corpus in sample order, so the
/// result does not depend on thread count.
pub fn score_heads(samples: &[ProbeSample], eta_grid: &[f64], kappa: usize) -> Result<Vec<HeadScore>, CutoutError> {
    if samples.is_empty() {
        return Err(CutoutError::EmptyCorpus);
    }
    let triples: Vec<(HeadSelector, f64)> =
        candidate_heads(samples).into_iter().flat_map(|h| eta_grid.iter().map(move |&e| (h, e))).collect();
    triples.par_iter().map(|&(h, e)| score_one(samples, h, e, kappa)).collect()
}

/// All (head, eta) scores sorted by IoU descending; ties by IoT descending,
/// then block, head and eta ascending.
pub fn rank_heads(samples: &[ProbeSample], eta_grid: &[f64], kappa: usize) -> Result<Vec<HeadScore>, CutoutError> {
    let mut scores = score_heads(samples, eta_grid, kappa)?;
    scores.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(b.iot.total_cmp(&a.iot))
            .then(a.block_index.cmp(&b.block_index))
            .then(a.head_index.cmp(&b.head_index))
            .then(a.eta.total_cmp(&b.eta))
    });
    Ok(scores)
}

/// Keeps the first (best) entry per head of an already ranked list.
pub fn best_per_head(ranked: &[HeadScore]) -> Vec<HeadScore> {
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for s in ranked {
        if !seen.contains(&s.selector()) {
            seen.push(s.selector());
            out.push(s.clone());
        }
    }
    out
}

pub fn format_head_report(scores: &[HeadScore]) -> String {
    let mut out = String::from(HEAD_REPORT_HEADER);
    out.push('\n');
    for s in scores {
        out.push_str(&format!("{}\t{}\t{:.2}\t{:.2}\t{:.2}\n", s.block_index, s.head_index, s.eta, s.iou, s.iot));
    }
    out
}
