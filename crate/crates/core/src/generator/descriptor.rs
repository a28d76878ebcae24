//! Keyword lookup from box descriptions to drawable toy objects.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

/// Linear RGB with components in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rgb(pub [f64; 3]);

/// Colors recognized in descriptions, in benchmark order, plus `grey`.
pub const PALETTE: [(&str, Rgb); 11] = [
    ("red", Rgb([0.86, 0.10, 0.10])),
    ("orange", Rgb([1.00, 0.55, 0.00])),
    ("yellow", Rgb([0.95, 0.88, 0.10])),
    ("green", Rgb([0.12, 0.62, 0.18])),
    ("blue", Rgb([0.10, 0.28, 0.88])),
    ("purple", Rgb([0.50, 0.18, 0.66])),
    ("pink", Rgb([1.00, 0.58, 0.76])),
    ("brown", Rgb([0.52, 0.32, 0.12])),
    ("black", Rgb([0.04, 0.04, 0.04])),
    ("white", Rgb([0.97, 0.97, 0.97])),
    ("gray", Rgb([0.50, 0.50, 0.50])),
];

const SHAPE_WORDS: [(&str, ShapeKind); 14] = [
    ("circle", ShapeKind::Circle),
    ("circular", ShapeKind::Circle),
    ("ball", ShapeKind::Circle),
    ("sphere", ShapeKind::Circle),
    ("disk", ShapeKind::Circle),
    ("round", ShapeKind::Circle),
    ("square", ShapeKind::Square),
    ("box", ShapeKind::Square),
    ("cube", ShapeKind::Square),
    ("block", ShapeKind::Square),
    ("rectangle", ShapeKind::Square),
    ("triangle", ShapeKind::Triangle),
    ("pyramid", ShapeKind::Triangle),
    ("cone", ShapeKind::Triangle),
];

pub const DEFAULT_OBJECT_SHAPE: ShapeKind = ShapeKind::Circle;
pub const DEFAULT_OBJECT_COLOR: &str = "gray";
/// Unpainted canvas tone for backgrounds without a color keyword; outside
/// the palette so no object color collides with it.
pub const DEFAULT_BACKGROUND: Rgb = Rgb([0.84, 0.80, 0.70]);

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

fn singular(word: &str) -> &str {
    word.strip_suffix("es")
        .filter(|s| s.ends_with('x'))
        .or_else(|| word.strip_suffix('s'))
        .unwrap_or(word)
}

pub fn palette_color(name: &str) -> Option<Rgb> {
    let name = if name == "grey" { "gray" } else { name };
    PALETTE.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}

/// Palette entry closest to `rgb` in Euclidean distance.
pub fn nearest_palette_color(rgb: Rgb) -> &'static str {
    let dist = |c: &Rgb| {
        c.0.iter()
            .zip(rgb.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    };
    PALETTE
        .iter()
        .min_by(|a, b| dist(&a.1).total_cmp(&dist(&b.1)))
        .map(|(n, _)| *n)
        .expect("palette is non-empty")
}

fn first_color(text: &str) -> Option<(String, Rgb)> {
    words(text).find_map(|w| palette_color(&w).map(|c| (w, c)))
}

/// What the renderer draws for one box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDescriptor {
    pub shape: ShapeKind,
    pub color_name: String,
    pub color: Rgb,
    /// True when shape or color fell back to the defaults.
    pub used_defaults: bool,
}

impl ObjectDescriptor {
    /// First shape keyword and first color keyword win; anything missing
    /// falls back to a gray circle.
    pub fn parse(description: &str) -> Self {
        let shape = words(description).find_map(|w| {
            let w = singular(&w).to_string();
            SHAPE_WORDS.iter().find(|(k, _)| *k == w).map(|(_, s)| *s)
        });
        let color = first_color(description);
        let used_defaults = shape.is_none() || color.is_none();
        if used_defaults {
            log::warn!(
                "description {description:?} lacks a known {}; using defaults",
                match (shape.is_none(), color.is_none()) {
                    (true, true) => "shape and color",
                    (true, false) => "shape",
                    _ => "color",
                }
            );
        }
        let (color_name, color) = color.unwrap_or_else(|| {
            (
                DEFAULT_OBJECT_COLOR.to_string(),
                palette_color(DEFAULT_OBJECT_COLOR).expect("default color in palette"),
            )
        });
        Self {
            shape: shape.unwrap_or(DEFAULT_OBJECT_SHAPE),
            color_name: if color_name == "grey" {
                "gray".into()
            } else {
                color_name
            },
            color,
            used_defaults,
        }
    }
}

/// Flat background fill chosen from the background prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundDescriptor {
    pub color: Rgb,
}

impl BackgroundDescriptor {
    pub fn parse(prompt: &str) -> Self {
        Self {
            color: first_color(prompt).map_or(DEFAULT_BACKGROUND, |(_, c)| c),
        }
    }
}
