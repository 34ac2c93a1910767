//! PosEval: prompt sets for six positional tasks and procedural verification
//! of detector output against them.

mod evaluate;
mod generate;
mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{LayoutError, SceneObject, SceneRelation, SceneSpec};
use crate::spatial::Relation;

pub use evaluate::{
    evaluate_batch, evaluate_image, oracle_detector, relation_holds, Detection, ImageDetections, Verdict,
};
pub use generate::{article, gen_prompts, neg_from_two_obj, OPPOSITE_PHRASES, SAME_PHRASE};
pub use report::{aggregate, format_report, Report, TaskSummary};

#[derive(Debug, Error)]
pub enum PosevalError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("vocabulary too small: {0}")]
    InsufficientVocab(String),
    #[error("record {index}: {detail}")]
    MissingClassMetadata { index: usize, detail: String },
    #[error("layout does not align with record {index}: {detail}")]
    Misaligned { index: usize, detail: String },
    #[error("line {line}: {source}")]
    Jsonl { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TwoObj,
    ThreeObj,
    FourObj,
    Neg,
    Rel,
    Pab,
}

impl Task {
    /// Report column order.
    pub const ALL: [Task; 6] = [Task::TwoObj, Task::ThreeObj, Task::FourObj, Task::Neg, Task::Rel, Task::Pab];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::TwoObj => "two_obj",
            Task::ThreeObj => "three_obj",
            Task::FourObj => "four_obj",
            Task::Neg => "neg",
            Task::Rel => "rel",
            Task::Pab => "pab",
        }
    }

    pub fn column(self) -> &'static str {
        match self {
            Task::TwoObj => "2 Obj",
            Task::ThreeObj => "3 Obj",
            Task::FourObj => "4 Obj",
            Task::Neg => "Neg",
            Task::Rel => "Rel",
            Task::Pab => "PAB",
        }
    }

    pub fn object_count(self) -> usize {
        match self {
            Task::ThreeObj | Task::Rel => 3,
            Task::FourObj => 4,
            _ => 2,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = PosevalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Ok(match key.as_str() {
            "twoobj" | "2obj" | "position" => Task::TwoObj,
            "threeobj" | "3obj" => Task::ThreeObj,
            "fourobj" | "4obj" => Task::FourObj,
            "neg" | "negative" => Task::Neg,
            "rel" | "relative" => Task::Rel,
            "pab" => Task::Pab,
            _ => return Err(PosevalError::UnknownTask(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelVariant {
    Same,
    Opposite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptObject {
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
}

/// One benchmark prompt with its ground truth. For [`Task::Neg`] the stated
/// relation is the one that must *not* hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub task: Task,
    pub prompt_text: String,
    pub objects: Vec<PromptObject>,
    pub stated_relations: Vec<SceneRelation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_variant: Option<RelVariant>,
    pub seed: u64,
    pub index: usize,
}

impl PromptRecord {
    /// A scene whose satisfying layouts pass this record.
    pub fn scene(&self) -> SceneSpec {
        let objects = self
            .objects
            .iter()
            .map(|o| SceneObject { name: o.class.clone(), attribute: o.attribute.clone() })
            .collect();
        let relations = self
            .stated_relations
            .iter()
            .map(|r| match self.task {
                Task::Neg => SceneRelation { relation: r.relation.inverse(), ..*r },
                _ => *r,
            })
            .collect();
        SceneSpec { objects, relations }
    }
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|r| serde_json::to_string(r).expect("record serialises") + "\n").collect()
}

/// Parses JSON lines, skipping blank lines.
pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, PosevalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| PosevalError::Jsonl { line: i + 1, source }))
        .collect()
}

const OBJECTS: &str = include_str!("../../data/objects.txt");
const COLORS: &str = include_str!("../../data/colors.txt");
const RELATIONS: &str = include_str!("../../data/relations.txt");

/// Object classes, colors and relations prompts are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pub objects: Vec<String>,
    pub colors: Vec<String>,
    pub relations: Vec<Relation>,
}

fn lines(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_text(OBJECTS, COLORS, RELATIONS).expect("bundled vocabulary parses")
    }
}

impl Vocab {
    /// One entry per line in each text.
    pub fn from_text(objects: &str, colors: &str, relations: &str) -> Result<Self, PosevalError> {
        let relations = lines(relations)
            .iter()
            .map(|r| r.parse::<Relation>().map_err(|e| PosevalError::InsufficientVocab(e.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(Self { objects: lines(objects), colors: lines(colors), relations })
    }

    fn require(&self, task: Task) -> Result<(), PosevalError> {
        if self.objects.len() < task.object_count() {
            return Err(PosevalError::InsufficientVocab(format!(
                "{task} needs {} object classes, have {}",
                task.object_count(),
                self.objects.len()
            )));
        }
        if task == Task::Pab && self.colors.len() < 2 {
            return Err(PosevalError::InsufficientVocab("pab needs at least 2 colors".into()));
        }
        if self.relations.is_empty() {
            return Err(PosevalError::InsufficientVocab("no relations".into()));
        }
        Ok(())
    }
}
