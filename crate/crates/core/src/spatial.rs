//! The four positional relations and the dominant-axis center predicate
//! shared by layout solving and benchmark verification.
//!
//! Coordinates are image-style: `x` grows to the right, `y` grows downward.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "left of")]
    LeftOf,
    #[serde(rename = "right of")]
    RightOf,
    #[serde(rename = "above")]
    Above,
    #[serde(rename = "below")]
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below];

    pub fn inverse(self) -> Self {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Relation::LeftOf | Relation::RightOf)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    /// Dominant-axis rule on centers: the displacement from `a` to `b` must
    /// point the right way along the relation's axis and be at least as long
    /// as the cross-axis displacement. Coincident centers satisfy nothing.
    pub fn holds(self, a: (f64, f64), b: (f64, f64)) -> bool {
        let dx = b.0 - a.0;
        let dy = b.1 - a.1;
        match self {
            Relation::LeftOf => dx > 0.0 && dx.abs() >= dy.abs(),
            Relation::RightOf => dx < 0.0 && dx.abs() >= dy.abs(),
            Relation::Above => dy > 0.0 && dy.abs() >= dx.abs(),
            Relation::Below => dy < 0.0 && dy.abs() >= dx.abs(),
        }
    }

    /// Like [`Relation::holds`] but diagonal placements (equal axis
    /// displacements) do not count.
    pub fn holds_strictly(self, a: (f64, f64), b: (f64, f64)) -> bool {
        let dx = b.0 - a.0;
        let dy = b.1 - a.1;
        match self {
            Relation::LeftOf => dx > 0.0 && dx.abs() > dy.abs(),
            Relation::RightOf => dx < 0.0 && dx.abs() > dy.abs(),
            Relation::Above => dy > 0.0 && dy.abs() > dx.abs(),
            Relation::Below => dy < 0.0 && dy.abs() > dx.abs(),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown relation {0:?}")]
pub struct UnknownRelation(pub String);

impl FromStr for Relation {
    type Err = UnknownRelation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left of" | "to the left of" => Ok(Relation::LeftOf),
            "right of" | "to the right of" => Ok(Relation::RightOf),
            "above" => Ok(Relation::Above),
            "below" => Ok(Relation::Below),
            other => Err(UnknownRelation(other.to_string())),
        }
    }
}
