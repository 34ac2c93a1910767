//! Procedural verification of detections against prompt records.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PosevalError, PromptRecord, RelVariant, Task};
use crate::layout::{LayoutPlan, SceneRelation};
use crate::spatial::Relation;

/// Detector output for one instance; `box` is `[x0, y0, x1, y1]` in pixels
/// with y pointing down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
}

impl Detection {
    pub fn center(&self) -> (f64, f64) {
        ((self.bbox[0] + self.bbox[2]) / 2.0, (self.bbox[1] + self.bbox[3]) / 2.0)
    }
}

/// One line of a detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image: String,
    /// Index of the prompt record the image was generated for.
    pub index: usize,
    /// Generation seed of the image.
    #[serde(default)]
    pub seed: u64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub task: Task,
    pub index: usize,
    pub seed: u64,
    pub image: String,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

pub fn relation_holds(a: &Detection, relation: Relation, b: &Detection) -> bool {
    relation.holds(a.center(), b.center())
}

/// Highest-confidence instance of `class`; the earliest wins ties.
fn best_instance<'a>(detections: &'a [Detection], class: &str) -> Option<&'a Detection> {
    detections.iter().filter(|d| d.class == class).fold(None, |best: Option<&Detection>, d| match best {
        Some(b) if b.confidence >= d.confidence => Some(b),
        _ => Some(d),
    })
}

fn describe(record: &PromptRecord, r: &SceneRelation) -> String {
    format!("{} {} {}", record.objects[r.subject].class, r.relation, record.objects[r.object].class)
}

/// Relations a Rel record must satisfy, resolved from its variant.
fn resolved_relations(record: &PromptRecord) -> Result<Vec<SceneRelation>, PosevalError> {
    let variant = record.rel_variant.ok_or_else(|| PosevalError::MissingClassMetadata {
        index: record.index,
        detail: "relative record without a variant".into(),
    })?;
    let first = record.stated_relations[0];
    let target = match variant {
        RelVariant::Same => first.relation,
        RelVariant::Opposite => first.relation.inverse(),
    };
    Ok(vec![first, SceneRelation { subject: 2, relation: target, object: first.object }])
}

fn check_record(record: &PromptRecord) -> Result<(), PosevalError> {
    let bad = |detail: String| Err(PosevalError::MissingClassMetadata { index: record.index, detail });
    if record.objects.len() != record.task.object_count() {
        return bad(format!("{} objects for task {}", record.objects.len(), record.task));
    }
    if record.stated_relations.is_empty() {
        return bad("no stated relations".into());
    }
    if record.stated_relations.iter().any(|r| r.subject >= record.objects.len() || r.object >= record.objects.len()) {
        return bad("relation index out of range".into());
    }
    if record.task == Task::Pab && record.objects.iter().any(|o| o.attribute.is_none()) {
        return bad("attribute binding record without attributes".into());
    }
    Ok(())
}

/// Pass/fail with human-readable failure reasons.
pub fn evaluate_image(detections: &[Detection], record: &PromptRecord) -> Result<(bool, Vec<String>), PosevalError> {
    check_record(record)?;
    let mut reasons: Vec<String> = record
        .objects
        .iter()
        .filter(|o| !detections.iter().any(|d| d.class == o.class))
        .map(|o| format!("missing class: {}", o.class))
        .collect();
    if !reasons.is_empty() {
        return Ok((false, reasons));
    }
    let instances = |i: usize| detections.iter().filter(move |d| d.class == record.objects[i].class);
    match record.task {
        Task::TwoObj | Task::ThreeObj | Task::FourObj | Task::Rel => {
            let relations =
                if record.task == Task::Rel { resolved_relations(record)? } else { record.stated_relations.clone() };
            let best: Vec<&Detection> = (0..record.objects.len())
                .map(|i| best_instance(detections, &record.objects[i].class).expect("presence checked"))
                .collect();
            for r in &relations {
                if !relation_holds(best[r.subject], r.relation, best[r.object]) {
                    reasons.push(format!("relation failed: {}", describe(record, r)));
                }
            }
        }
        Task::Pab => {
            let r = record.stated_relations[0];
            let attributed = |i: usize| {
                let want = record.objects[i].attribute.as_deref();
                instances(i).filter(move |d| d.attribute.as_deref() == want)
            };
            if attributed(r.subject).next().is_none() || attributed(r.object).next().is_none() {
                reasons.push("attribute mismatch".into());
            } else if !attributed(r.subject).any(|a| attributed(r.object).any(|b| relation_holds(a, r.relation, b))) {
                reasons.push(format!("relation failed: {}", describe(record, &r)));
            }
        }
        Task::Neg => {
            let r = record.stated_relations[0];
            if instances(r.subject).any(|a| instances(r.object).any(|b| relation_holds(a, r.relation, b))) {
                reasons.push(format!("negated relation holds: {}", describe(record, &r)));
            }
        }
    }
    Ok((reasons.is_empty(), reasons))
}

/// Evaluates every image against the record with its index, in input order.
pub fn evaluate_batch(records: &[PromptRecord], images: &[ImageDetections]) -> Result<Vec<Verdict>, PosevalError> {
    let by_index: HashMap<usize, &PromptRecord> = records.iter().map(|r| (r.index, r)).collect();
    images
        .par_iter()
        .map(|img| {
            let record = by_index.get(&img.index).ok_or_else(|| PosevalError::Misaligned {
                index: img.index,
                detail: format!("no prompt record for image {}", img.image),
            })?;
            let (pass, reasons) = evaluate_image(&img.detections, record)?;
            Ok(Verdict { task: record.task, index: img.index, seed: img.seed, image: img.image.clone(), pass, reasons })
        })
        .collect()
}

/// Synthetic detector: one confident detection per planned box, labelled with
/// the record's class and attribute. Box `[lo, hi]` cells become the pixel
/// rectangle `[lo, hi + 1)`.
pub fn oracle_detector(record: &PromptRecord, layout: &LayoutPlan) -> Result<Vec<Detection>, PosevalError> {
    let misaligned = |detail: String| PosevalError::Misaligned { index: record.index, detail };
    if layout.objects.len() != record.objects.len() {
        return Err(misaligned(format!("{} boxes for {} objects", layout.objects.len(), record.objects.len())));
    }
    record
        .objects
        .iter()
        .zip(&layout.objects)
        .map(|(o, l)| {
            if !l.sub_prompt.contains(&o.class) {
                return Err(misaligned(format!("box {:?} does not describe {}", l.sub_prompt, o.class)));
            }
            let b = l.bbox;
            Ok(Detection {
                class: o.class.clone(),
                bbox: [b.x_min as f64, b.y_min as f64, b.x_max as f64 + 1.0, b.y_max as f64 + 1.0],
                confidence: 1.0,
                attribute: o.attribute.clone(),
            })
        })
        .collect()
}
