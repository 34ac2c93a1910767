//! Positional control for joint-attention flow-matching image generators.
//!
//! The crate is organised around the generation pipeline:
//!
//! * [`layout`] turns a prompt into per-object sub-prompts and boxes.
//! * [`model`] holds the maskable joint-attention transformer, the Euler
//!   sampler and the adapter trait real backbones implement.
//! * [`region_binding`] builds the additive attention masks that keep each
//!   object branch inside its box.
//! * [`cutout`] derives foreground token masks from a designated attention
//!   head and ranks heads by segmentation quality.
//! * [`pipeline`] runs the constrained branches, splices their latents and
//!   finishes generation unconstrained.
//! * [`poseval`] generates and verifies the positional benchmark.
//! * [`config`] and [`manifest`] cover run configuration and artifacts.

pub mod config;
pub mod cutout;
pub mod layout;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod poseval;
pub mod region_binding;
pub mod rng;
pub mod spatial;
pub mod tensor;

pub use layout::{BoundingBox, LayoutPlan, SceneSpec};
pub use pipeline::{run_stitch, StitchConfig};
pub use spatial::Relation;
