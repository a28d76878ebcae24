//! Layout-grounded text-to-image generation at desk scale.
//!
//! - [`layout`]: boxes, canvases and layout validation.
//! - [`dsl`]: the textual layout format completed by the LLM.
//! - [`diffusion`]: noise schedules, DDPM/DDIM updates and DDIM inversion.
//! - [`generator`]: per-box masked inversion and composed generation.
//! - [`benchmark`]: prompt sets and layout checkers for reasoning benchmarks.

pub mod benchmark;
pub mod diffusion;
pub mod dsl;
pub mod generator;
pub mod layout;

pub use dsl::{
    extract_layout_block, parse_layout, serialize_layout, DiagnosticKind, ParseDiagnostic,
    RawCompletion,
};
pub use layout::{
    box_center, intersection_area, scale_layout, validate_layout, BoundingBox, Canvas, Layout,
    LayoutError, ObjectSpec, ValidationReport,
};
