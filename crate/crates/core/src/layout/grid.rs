//! Deterministic 2x2 grid placement used when no language model is available.

use serde::{Deserialize, Serialize};

use super::{BoundingBox, LayoutError, LayoutObject, LayoutPlan, SceneSpec};

/// A cell of the 2x2 placement grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
}

impl GridCell {
    /// Row-major index in `0..4`.
    pub fn from_index(i: usize) -> Self {
        Self { row: i / 2, col: i % 2 }
    }

    pub fn center(self) -> (f64, f64) {
        (self.col as f64 + 0.5, self.row as f64 + 0.5)
    }
}

/// Lexicographically first injective assignment of objects to cells
/// (object order, row-major cells) under which every relation holds between
/// cell centers. Diagonal neighbours relate to nothing here, so a satisfying
/// assignment also satisfies the looser box-center predicate used downstream.
pub fn solve_grid_layout(scene: &SceneSpec) -> Result<Vec<GridCell>, LayoutError> {
    scene.validate()?;
    let n = scene.objects.len();
    if n > 4 {
        return Err(LayoutError::TooManyObjects(n));
    }
    let mut assignment = Vec::with_capacity(n);
    let mut used = [false; 4];
    if search(scene, &mut assignment, &mut used) {
        Ok(assignment)
    } else {
        Err(LayoutError::UnsatisfiableScene)
    }
}

fn search(scene: &SceneSpec, assignment: &mut Vec<GridCell>, used: &mut [bool; 4]) -> bool {
    let k = assignment.len();
    if k == scene.objects.len() {
        return true;
    }
    for idx in 0..4 {
        if used[idx] {
            continue;
        }
        let cell = GridCell::from_index(idx);
        assignment.push(cell);
        // Only relations whose endpoints are both placed can be checked; the
        // newest object is the only one that can break a previously valid prefix.
        let consistent = scene.relations.iter().all(|r| {
            if r.subject.max(r.object) != k {
                return true;
            }
            r.relation.holds_strictly(assignment[r.subject].center(), assignment[r.object].center())
        });
        if consistent {
            used[idx] = true;
            if search(scene, assignment, used) {
                return true;
            }
            used[idx] = false;
        }
        assignment.pop();
    }
    false
}

/// Plans a layout from a structured scene: solve the grid, then stretch the
/// occupied rows and columns so the boxes tile the canvas.
pub fn fallback_plan(scene: &SceneSpec, canvas: u32) -> Result<LayoutPlan, LayoutError> {
    if canvas < 2 {
        return Err(LayoutError::CanvasTooSmall(canvas));
    }
    if scene.objects.is_empty() {
        return Err(LayoutError::EmptyLayout);
    }
    let cells = solve_grid_layout(scene)?;
    let mut rows: Vec<usize> = cells.iter().map(|c| c.row).collect();
    let mut cols: Vec<usize> = cells.iter().map(|c| c.col).collect();
    rows.sort_unstable();
    rows.dedup();
    cols.sort_unstable();
    cols.dedup();
    let span = |rank: usize, parts: usize| -> (u32, u32) {
        let lo = (rank as u64 * canvas as u64 / parts as u64) as u32;
        let hi = ((rank as u64 + 1) * canvas as u64 / parts as u64) as u32 - 1;
        (lo, hi)
    };
    let objects = cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let r = rows.iter().position(|&v| v == cell.row).unwrap();
            let c = cols.iter().position(|&v| v == cell.col).unwrap();
            let (y_min, y_max) = span(r, rows.len());
            let (x_min, x_max) = span(c, cols.len());
            LayoutObject { sub_prompt: scene.describe(i), bbox: BoundingBox { x_min, y_min, x_max, y_max } }
        })
        .collect();
    Ok(LayoutPlan {
        full_prompt: render_scene(scene),
        background_prompt: "background".to_string(),
        objects,
        canvas_size: canvas,
    })
}

fn render_scene(scene: &SceneSpec) -> String {
    let a = |i: usize| format!("a {}", scene.describe(i));
    if scene.relations.is_empty() {
        return (0..scene.objects.len()).map(a).collect::<Vec<_>>().join(" and ");
    }
    scene
        .relations
        .iter()
        .map(|r| format!("{} {} {}", a(r.subject), r.relation, a(r.object)))
        .collect::<Vec<_>>()
        .join(", and ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::Relation;
    use proptest::prelude::*;

    /// Independent oracle: walk every injective map in lexicographic order and
    /// keep the first one that satisfies all relations.
    fn brute_force(scene: &SceneSpec) -> Option<Vec<GridCell>> {
        let n = scene.objects.len();
        let total = 4usize.pow(n as u32);
        (0..total).find_map(|code| {
            let mut digits = vec![0usize; n];
            let mut c = code;
            for d in digits.iter_mut().rev() {
                *d = c % 4;
                c /= 4;
            }
            let mut sorted = digits.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != n {
                return None;
            }
            let cells: Vec<GridCell> = digits.iter().map(|&i| GridCell::from_index(i)).collect();
            let ok = scene.relations.iter().all(|r| {
                let (a, b) = (cells[r.subject], cells[r.object]);
                match r.relation {
                    Relation::LeftOf => a.row == b.row && a.col < b.col,
                    Relation::RightOf => a.row == b.row && a.col > b.col,
                    Relation::Above => a.col == b.col && a.row < b.row,
                    Relation::Below => a.col == b.col && a.row > b.row,
                }
            });
            ok.then_some(cells)
        })
    }

    fn cell(row: usize, col: usize) -> GridCell {
        GridCell { row, col }
    }

    #[test]
    fn above_stacks_in_first_column() {
        let scene = SceneSpec::new(&["a", "b"]).relate(0, Relation::Above, 1);
        assert_eq!(solve_grid_layout(&scene).unwrap(), vec![cell(0, 0), cell(1, 0)]);
        assert_eq!(brute_force(&scene).unwrap(), vec![cell(0, 0), cell(1, 0)]);
    }

    #[test]
    fn single_object_takes_first_cell() {
        let scene = SceneSpec::new(&["a"]);
        assert_eq!(solve_grid_layout(&scene).unwrap(), vec![cell(0, 0)]);
    }

    #[test]
    fn four_cycle_is_solvable() {
        let scene = SceneSpec::new(&["a", "b", "c", "d"])
            .relate(0, Relation::LeftOf, 1)
            .relate(1, Relation::Above, 2)
            .relate(2, Relation::RightOf, 3)
            .relate(3, Relation::Below, 0);
        let got = solve_grid_layout(&scene).unwrap();
        assert_eq!(Some(got.clone()), brute_force(&scene));
        assert_eq!(got, vec![cell(0, 0), cell(0, 1), cell(1, 1), cell(1, 0)]);
    }

    #[test]
    fn two_objects_split_the_canvas() {
        let scene = SceneSpec::new(&["a", "b"]).relate(0, Relation::LeftOf, 1);
        let plan = fallback_plan(&scene, 32).unwrap();
        assert_eq!(plan.objects[0].bbox, BoundingBox { x_min: 0, y_min: 0, x_max: 15, y_max: 31 });
        assert_eq!(plan.objects[1].bbox, BoundingBox { x_min: 16, y_min: 0, x_max: 31, y_max: 31 });
        assert_eq!(plan.background_prompt, "background");
    }

    #[test]
    fn three_object_chain() {
        let scene = SceneSpec::new(&["a", "b", "c"]).relate(0, Relation::LeftOf, 1).relate(1, Relation::Above, 2);
        assert_eq!(brute_force(&scene).unwrap(), vec![cell(0, 0), cell(0, 1), cell(1, 1)]);
        assert_eq!(solve_grid_layout(&scene).unwrap(), vec![cell(0, 0), cell(0, 1), cell(1, 1)]);
        let plan = fallback_plan(&scene, 32).unwrap();
        assert_eq!(plan.objects[0].bbox, BoundingBox { x_min: 0, y_min: 0, x_max: 15, y_max: 15 });
        assert_eq!(plan.objects[2].bbox, BoundingBox { x_min: 16, y_min: 16, x_max: 31, y_max: 31 });
    }

    #[test]
    fn contradiction_is_unsatisfiable() {
        let scene = SceneSpec::new(&["a", "b"]).relate(0, Relation::LeftOf, 1).relate(1, Relation::LeftOf, 0);
        assert!(matches!(fallback_plan(&scene, 32), Err(LayoutError::UnsatisfiableScene)));
    }

    #[test]
    fn too_many_objects() {
        let scene = SceneSpec::new(&["a", "b", "c", "d", "e"]);
        assert!(matches!(solve_grid_layout(&scene), Err(LayoutError::TooManyObjects(5))));
    }

    fn arb_scene() -> impl Strategy<Value = SceneSpec> {
        (1usize..=4).prop_flat_map(|n| {
            let rel = (0..n, 0..4usize, 0..n);
            proptest::collection::vec(rel, 0..5).prop_map(move |rels| {
                let names: Vec<String> = (0..n).map(|i| format!("obj{i}")).collect();
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                let mut scene = SceneSpec::new(&refs);
                for (s, r, o) in rels {
                    if s != o {
                        scene = scene.relate(s, Relation::ALL[r], o);
                    }
                }
                scene
            })
        })
    }

    proptest! {
        #[test]
        fn solver_matches_exhaustive_oracle(scene in arb_scene()) {
            let got = solve_grid_layout(&scene).ok();
            prop_assert_eq!(got, brute_force(&scene));
        }

        #[test]
        fn fallback_boxes_are_valid_deterministic_and_satisfy_relations(
            scene in arb_scene(), canvas in 2u32..64
        ) {
            if let Ok(plan) = fallback_plan(&scene, canvas) {
                prop_assert!(plan.validate().is_ok());
                prop_assert_eq!(&plan, &fallback_plan(&scene, canvas).unwrap());
                for r in &scene.relations {
                    let a = plan.objects[r.subject].bbox.center();
                    let b = plan.objects[r.object].bbox.center();
                    prop_assert!(r.relation.holds(a, b));
                }
            }
        }
    }
}
