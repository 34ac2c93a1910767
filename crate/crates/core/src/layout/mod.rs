//! Layout planning: a full prompt becomes a background prompt plus one
//! sub-prompt and bounding box per object on a `W x W` canvas.

mod grid;
mod planner;
mod provider;
mod scene_parse;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::Relation;

pub use grid::{fallback_plan, solve_grid_layout, GridCell};
pub use planner::{background_system_prompt, layout_system_prompt, parse_layout_response, plan_layout, user_prompt};
pub use provider::{
    FallbackProvider, FixtureProvider, FixtureRecord, HttpChatProvider, LayoutProvider, ProviderError,
    DEFAULT_API_KEY_ENV,
};
pub use scene_parse::parse_scene;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("malformed layout response: {0}")]
    MalformedLlmResponse(String),
    #[error("layout contains no objects")]
    EmptyLayout,
    #[error("no 2x2 cell assignment satisfies the scene relations")]
    UnsatisfiableScene,
    #[error("scene has {0} objects; at most 4 fit the grid")]
    TooManyObjects(usize),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid box {0}")]
    InvalidBox(String),
    #[error("canvas size {0} is below the minimum of 2")]
    CanvasTooSmall(u32),
    #[error("layout provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("layout file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Inclusive cell rectangle on the layout canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32, canvas: u32) -> Result<Self, LayoutError> {
        let b = Self { x_min, y_min, x_max, y_max };
        b.check(canvas)?;
        Ok(b)
    }

    pub fn full(canvas: u32) -> Self {
        Self { x_min: 0, y_min: 0, x_max: canvas - 1, y_max: canvas - 1 }
    }

    /// Clamps raw coordinates into `[0, canvas - 1]`; swapped edges are reordered.
    pub fn clamped(x_min: i64, y_min: i64, x_max: i64, y_max: i64, canvas: u32) -> Self {
        let hi = canvas as i64 - 1;
        let c = |v: i64| v.clamp(0, hi) as u32;
        let (x0, x1) = (c(x_min), c(x_max));
        let (y0, y1) = (c(y_min), c(y_max));
        Self { x_min: x0.min(x1), y_min: y0.min(y1), x_max: x0.max(x1), y_max: y0.max(y1) }
    }

    pub fn check(&self, canvas: u32) -> Result<(), LayoutError> {
        if self.x_min > self.x_max || self.y_min > self.y_max || self.x_max >= canvas || self.y_max >= canvas {
            return Err(LayoutError::InvalidBox(format!("{self:?} on canvas {canvas}")));
        }
        Ok(())
    }

    /// Center in canvas units, treating each cell as a unit square.
    pub fn center(&self) -> (f64, f64) {
        ((self.x_min as f64 + self.x_max as f64 + 1.0) / 2.0, (self.y_min as f64 + self.y_max as f64 + 1.0) / 2.0)
    }

    pub fn area(&self) -> u64 {
        (self.x_max - self.x_min + 1) as u64 * (self.y_max - self.y_min + 1) as u64
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_max && other.x_min <= self.x_max && self.y_min <= other.y_max && other.y_min <= self.y_max
    }

    pub fn contains_cell(&self, x: u32, y: u32) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutObject {
    pub sub_prompt: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutPlan {
    pub full_prompt: String,
    pub background_prompt: String,
    pub objects: Vec<LayoutObject>,
    pub canvas_size: u32,
}

impl LayoutPlan {
    /// A plan with no foreground objects. Planners never return one; the
    /// pipeline accepts it and degenerates to plain sampling.
    pub fn background_only(full_prompt: &str, background_prompt: &str, canvas_size: u32) -> Self {
        Self {
            full_prompt: full_prompt.to_string(),
            background_prompt: background_prompt.to_string(),
            objects: Vec::new(),
            canvas_size,
        }
    }

    /// Background box, always the whole canvas.
    pub fn background_box(&self) -> BoundingBox {
        BoundingBox::full(self.canvas_size)
    }

    /// Checks the structural invariants planners guarantee.
    pub fn validate(&self) -> Result<(), LayoutError> {
        if self.canvas_size < 2 {
            return Err(LayoutError::CanvasTooSmall(self.canvas_size));
        }
        if self.objects.is_empty() {
            return Err(LayoutError::EmptyLayout);
        }
        for obj in &self.objects {
            if obj.sub_prompt.trim().is_empty() {
                return Err(LayoutError::MalformedLlmResponse("empty sub-prompt".into()));
            }
            obj.bbox.check(self.canvas_size)?;
        }
        Ok(())
    }

    pub fn to_file(&self) -> LayoutFile {
        LayoutFile {
            prompt: self.full_prompt.clone(),
            canvas: self.canvas_size,
            background: self.background_prompt.clone(),
            objects: self
                .objects
                .iter()
                .map(|o| LayoutEntry {
                    prompt: o.sub_prompt.clone(),
                    x_min: o.bbox.x_min as i64,
                    y_min: o.bbox.y_min as i64,
                    x_max: o.bbox.x_max as i64,
                    y_max: o.bbox.y_max as i64,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("layout serialises")
    }

    /// Reads a layout file; boxes must already lie on the canvas.
    pub fn from_json(text: &str) -> Result<Self, LayoutError> {
        let file: LayoutFile = serde_json::from_str(text)?;
        let canvas = file.canvas;
        if canvas < 2 {
            return Err(LayoutError::CanvasTooSmall(canvas));
        }
        let mut objects = Vec::with_capacity(file.objects.len());
        for e in file.objects {
            let coords = [e.x_min, e.y_min, e.x_max, e.y_max];
            if coords.iter().any(|&c| c < 0 || c >= canvas as i64) {
                return Err(LayoutError::InvalidBox(format!("{coords:?} on canvas {canvas}")));
            }
            let bbox = BoundingBox::new(e.x_min as u32, e.y_min as u32, e.x_max as u32, e.y_max as u32, canvas)?;
            objects.push(LayoutObject { sub_prompt: e.prompt, bbox });
        }
        Ok(Self { full_prompt: file.prompt, background_prompt: file.background, objects, canvas_size: canvas })
    }

    pub fn read(path: &std::path::Path) -> Result<Self, LayoutError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One object entry; key names follow the layout request schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub prompt: String,
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

/// On-disk layout document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutFile {
    pub prompt: String,
    pub canvas: u32,
    pub background: String,
    pub objects: Vec<LayoutEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRelation {
    pub subject: usize,
    pub relation: Relation,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    pub relations: Vec<SceneRelation>,
}

impl SceneSpec {
    pub fn new(names: &[&str]) -> Self {
        Self {
            objects: names.iter().map(|n| SceneObject { name: n.to_string(), attribute: None }).collect(),
            relations: Vec::new(),
        }
    }

    pub fn relate(mut self, subject: usize, relation: Relation, object: usize) -> Self {
        self.relations.push(SceneRelation { subject, relation, object });
        self
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let n = self.objects.len();
        for r in &self.relations {
            if r.subject >= n || r.object >= n {
                return Err(LayoutError::InvalidScene(format!("relation index out of range for {n} objects")));
            }
            if r.subject == r.object {
                return Err(LayoutError::InvalidScene("object related to itself".into()));
            }
        }
        Ok(())
    }

    /// Sub-prompt text for object `i`: the attribute, if any, then the name.
    pub fn describe(&self, i: usize) -> String {
        let o = &self.objects[i];
        match &o.attribute {
            Some(a) => format!("{a} {}", o.name),
            None => o.name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    Overlap { first: usize, second: usize },
    Coverage { covered_cells: u64, total_cells: u64 },
}

/// Advisory checks: pairwise overlaps and incomplete canvas coverage.
pub fn validate_layout(plan: &LayoutPlan) -> Vec<Finding> {
    let mut findings = Vec::new();
    for i in 0..plan.objects.len() {
        for j in i + 1..plan.objects.len() {
            if plan.objects[i].bbox.intersects(&plan.objects[j].bbox) {
                findings.push(Finding::Overlap { first: i, second: j });
            }
        }
    }
    let w = plan.canvas_size;
    let mut covered = HashSet::new();
    for o in &plan.objects {
        for y in o.bbox.y_min..=o.bbox.y_max.min(w.saturating_sub(1)) {
            for x in o.bbox.x_min..=o.bbox.x_max.min(w.saturating_sub(1)) {
                covered.insert((x, y));
            }
        }
    }
    let total = w as u64 * w as u64;
    if (covered.len() as u64) < total {
        findings.push(Finding::Coverage { covered_cells: covered.len() as u64, total_cells: total });
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(boxes: &[BoundingBox]) -> LayoutPlan {
        LayoutPlan {
            full_prompt: "p".into(),
            background_prompt: "background".into(),
            objects: boxes
                .iter()
                .enumerate()
                .map(|(i, b)| LayoutObject { sub_prompt: format!("o{i}"), bbox: *b })
                .collect(),
            canvas_size: 32,
        }
    }

    #[test]
    fn disjoint_halves_have_no_findings() {
        let left = BoundingBox::new(0, 0, 15, 31, 32).unwrap();
        let right = BoundingBox::new(16, 0, 31, 31, 32).unwrap();
        assert!(validate_layout(&plan(&[left, right])).is_empty());
    }

    #[test]
    fn identical_boxes_overlap_once() {
        let full = BoundingBox::full(32);
        assert_eq!(validate_layout(&plan(&[full, full])), vec![Finding::Overlap { first: 0, second: 1 }]);
    }

    #[test]
    fn half_canvas_is_a_coverage_gap() {
        let left = BoundingBox::new(0, 0, 15, 31, 32).unwrap();
        assert_eq!(validate_layout(&plan(&[left])), vec![Finding::Coverage { covered_cells: 512, total_cells: 1024 }]);
    }

    #[test]
    fn clamping_and_reordering() {
        let b = BoundingBox::clamped(-3, 4, 40, 2, 32);
        assert_eq!(b, BoundingBox { x_min: 0, y_min: 2, x_max: 31, y_max: 4 });
    }

    #[test]
    fn box_invariants_enforced() {
        assert!(BoundingBox::new(5, 0, 4, 3, 32).is_err());
        assert!(BoundingBox::new(0, 0, 32, 3, 32).is_err());
    }

    #[test]
    fn layout_file_uses_schema_keys() {
        let left = BoundingBox::new(0, 0, 15, 31, 32).unwrap();
        let json = plan(&[left]).to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["background"], "background");
        let entry = &v["objects"][0];
        for key in ["prompt", "x_min", "y_min", "x_max", "y_max"] {
            assert!(entry.get(key).is_some(), "missing {key}");
        }
        assert_eq!(LayoutPlan::from_json(&json).unwrap(), plan(&[left]));
    }

    #[test]
    fn layout_file_rejects_off_canvas_boxes() {
        let text = r#"{"prompt":"p","canvas":8,"background":"b","objects":[{"prompt":"x","x_min":0,"y_min":0,"x_max":8,"y_max":3}]}"#;
        assert!(LayoutPlan::from_json(text).is_err());
    }

    #[test]
    fn scene_validation() {
        let bad = SceneSpec::new(&["a"]).relate(0, Relation::LeftOf, 1);
        assert!(bad.validate().is_err());
        let selfish = SceneSpec::new(&["a", "b"]).relate(0, Relation::LeftOf, 0);
        assert!(selfish.validate().is_err());
    }
}
