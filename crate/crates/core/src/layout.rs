//! Canonical layout representation: captioned boxes on a fixed canvas.
//!
//! The JSON form of [`Layout`] is the exchange format between the CLI, the
//! HTTP service and the UI:
//!
//! ```json
//! {"canvas":[512,512],"background_prompt":"...","objects":[{"description":"a skier","box":[5,152,139,168]}]}
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default canvas edge used by the layout prompt.
pub const DEFAULT_CANVAS: Canvas = Canvas {
    width: 512,
    height: 512,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("box must have positive width and height, got {w}x{h}")]
    DegenerateBox { w: i64, h: i64 },
    #[error("object description is empty")]
    EmptyDescription,
    #[error("background prompt is empty")]
    EmptyBackground,
    #[error("canvas dimensions must be positive, got {0}x{1}")]
    InvalidCanvas(i64, i64),
}

/// Canvas size in pixels. Serialized as `[width, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 2]", into = "[i64; 2]")]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Result<Self, LayoutError> {
        if width == 0 || height == 0 {
            return Err(LayoutError::InvalidCanvas(width as i64, height as i64));
        }
        Ok(Self { width, height })
    }
}

impl Default for Canvas {
    fn default() -> Self {
        DEFAULT_CANVAS
    }
}

impl TryFrom<[i64; 2]> for Canvas {
    type Error = LayoutError;

    fn try_from([w, h]: [i64; 2]) -> Result<Self, Self::Error> {
        if w <= 0 || h <= 0 || w > u32::MAX as i64 || h > u32::MAX as i64 {
            return Err(LayoutError::InvalidCanvas(w, h));
        }
        Ok(Self {
            width: w as u32,
            height: h as u32,
        })
    }
}

impl From<Canvas> for [i64; 2] {
    fn from(c: Canvas) -> Self {
        [c.width as i64, c.height as i64]
    }
}

/// Axis-aligned box in `(x, y, width, height)` form, top-left anchored.
///
/// Width and height are always positive; whether the box fits its canvas is
/// a question for [`validate_layout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct BoundingBox {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
}

impl BoundingBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Result<Self, LayoutError> {
        if w <= 0 || h <= 0 {
            return Err(LayoutError::DegenerateBox { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn x(&self) -> i64 {
        self.x
    }

    pub fn y(&self) -> i64 {
        self.y
    }

    pub fn width(&self) -> i64 {
        self.w
    }

    pub fn height(&self) -> i64 {
        self.h
    }

    /// Exclusive right edge.
    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        box_center(self)
    }

    pub fn to_array(self) -> [i64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Whether the pixel at `(col, row)` falls inside the box.
    pub fn contains_pixel(&self, col: i64, row: i64) -> bool {
        col >= self.x && col < self.right() && row >= self.y && row < self.bottom()
    }

    pub fn fits(&self, canvas: Canvas) -> bool {
        self.x >= 0
            && self.y >= 0
            && self.right() <= canvas.width as i64
            && self.bottom() <= canvas.height as i64
    }
}

impl TryFrom<[i64; 4]> for BoundingBox {
    type Error = LayoutError;

    fn try_from([x, y, w, h]: [i64; 4]) -> Result<Self, Self::Error> {
        Self::new(x, y, w, h)
    }
}

impl From<BoundingBox> for [i64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// One captioned box.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawObjectSpec")]
pub struct ObjectSpec {
    pub description: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Deserialize)]
struct RawObjectSpec {
    description: String,
    #[serde(rename = "box")]
    bbox: BoundingBox,
}

impl TryFrom<RawObjectSpec> for ObjectSpec {
    type Error = LayoutError;

    fn try_from(raw: RawObjectSpec) -> Result<Self, Self::Error> {
        Self::new(raw.description, raw.bbox)
    }
}

impl ObjectSpec {
    pub fn new(description: impl Into<String>, bbox: BoundingBox) -> Result<Self, LayoutError> {
        let description = description.into();
        if description.trim().is_empty() {
            return Err(LayoutError::EmptyDescription);
        }
        Ok(Self { description, bbox })
    }
}

/// A scene: ordered foreground boxes plus a background prompt.
///
/// Object order is significant. The grounded generator composes objects in
/// this order, so later objects win where masks overlap.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLayout")]
pub struct Layout {
    pub canvas: Canvas,
    pub background_prompt: String,
    pub objects: Vec<ObjectSpec>,
}

#[derive(Deserialize)]
struct RawLayout {
    #[serde(default)]
    canvas: Canvas,
    background_prompt: String,
    #[serde(default)]
    objects: Vec<ObjectSpec>,
}

impl TryFrom<RawLayout> for Layout {
    type Error = LayoutError;

    fn try_from(raw: RawLayout) -> Result<Self, Self::Error> {
        Self::with_canvas(raw.objects, raw.background_prompt, raw.canvas)
    }
}

impl Layout {
    /// Layout on the default 512x512 canvas.
    pub fn new(
        objects: Vec<ObjectSpec>,
        background_prompt: impl Into<String>,
    ) -> Result<Self, LayoutError> {
        Self::with_canvas(objects, background_prompt, DEFAULT_CANVAS)
    }

    pub fn with_canvas(
        objects: Vec<ObjectSpec>,
        background_prompt: impl Into<String>,
        canvas: Canvas,
    ) -> Result<Self, LayoutError> {
        let background_prompt = background_prompt.into();
        if background_prompt.trim().is_empty() {
            return Err(LayoutError::EmptyBackground);
        }
        Ok(Self {
            canvas,
            background_prompt,
            objects,
        })
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Outcome of [`validate_layout`]. Overlaps are warnings; nothing is repaired.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub out_of_bounds: Vec<usize>,
    pub overlapping_pairs: Vec<(usize, usize)>,
    pub is_clean: bool,
}

/// Reports boxes leaving the canvas and pairs of boxes with positive-area
/// intersection. Edge-touching boxes do not overlap.
pub fn validate_layout(layout: &Layout) -> ValidationReport {
    let out_of_bounds: Vec<usize> = layout
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.bbox.fits(layout.canvas))
        .map(|(i, _)| i)
        .collect();

    let mut overlapping_pairs = Vec::new();
    for (i, a) in layout.objects.iter().enumerate() {
        for (j, b) in layout.objects.iter().enumerate().skip(i + 1) {
            if intersection_area(&a.bbox, &b.bbox) > 0.0 {
                overlapping_pairs.push((i, j));
            }
        }
    }

    let is_clean = out_of_bounds.is_empty() && overlapping_pairs.is_empty();
    ValidationReport {
        out_of_bounds,
        overlapping_pairs,
        is_clean,
    }
}

pub fn box_center(b: &BoundingBox) -> (f64, f64) {
    (b.x as f64 + b.w as f64 / 2.0, b.y as f64 + b.h as f64 / 2.0)
}

pub fn intersection_area(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = a.right().min(b.right()) - a.x.max(b.x);
    let h = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if w <= 0 || h <= 0 {
        0.0
    } else {
        (w * h) as f64
    }
}

/// `round(v * to / from)` with ties rounded up, in exact integer arithmetic.
fn rescale(v: i64, to: u32, from: u32) -> i64 {
    let (to, from) = (to as i64, from as i64);
    (2 * v * to + from).div_euclid(2 * from)
}

/// Maps every box onto `target`, scaling each coordinate independently.
/// Degenerate extents are clamped to one pixel.
pub fn scale_layout(layout: &Layout, target: Canvas) -> Layout {
    let src = layout.canvas;
    let objects = layout
        .objects
        .iter()
        .map(|o| {
            let b = o.bbox;
            let bbox = BoundingBox {
                x: rescale(b.x, target.width, src.width),
                y: rescale(b.y, target.height, src.height),
                w: rescale(b.w, target.width, src.width).max(1),
                h: rescale(b.h, target.height, src.height).max(1),
            };
            ObjectSpec {
                description: o.description.clone(),
                bbox,
            }
        })
        .collect();
    Layout {
        canvas: target,
        background_prompt: layout.background_prompt.clone(),
        objects,
    }
}
