//! Procedural renderer standing in for the text-conditioned image model.
//!
//! Latent channel layout: channels 0..3 hold RGB mapped from `[0, 1]` to
//! `[-1, 1]`; channel 3 is an occupancy channel (`+1` on object pixels,
//! `-1` elsewhere); further channels stay 0.

use super::descriptor::{BackgroundDescriptor, ObjectDescriptor, Rgb, ShapeKind};
use super::GeneratorError;
use crate::diffusion::{LatentImage, Shape};
use crate::layout::BoundingBox;

/// Fraction of the box extent covered by the drawn shape.
pub const SHAPE_EXTENT: f64 = 0.8;

/// Share of the object color an object term spreads over non-object pixels
/// (text conditioning leaks beyond the object itself; attenuation is what
/// keeps it inside the box).
pub const CONTEXT_BLEED: f64 = 0.25;

const OCCUPANCY_CHANNEL: usize = 3;

fn to_latent(v: f64) -> f64 {
    2.0 * v - 1.0
}

/// Whether the pixel centred at `(col + 0.5, row + 0.5)` lies inside the
/// shape drawn centred in `b` at [`SHAPE_EXTENT`] of its extent.
pub fn shape_contains(kind: ShapeKind, b: &BoundingBox, row: i64, col: i64) -> bool {
    let (cx, cy) = b.center();
    let half_w = SHAPE_EXTENT * b.width() as f64 / 2.0;
    let half_h = SHAPE_EXTENT * b.height() as f64 / 2.0;
    let px = col as f64 + 0.5 - cx;
    let py = row as f64 + 0.5 - cy;
    match kind {
        ShapeKind::Square => px.abs() <= half_w && py.abs() <= half_h,
        ShapeKind::Circle => (px / half_w).powi(2) + (py / half_h).powi(2) <= 1.0,
        ShapeKind::Triangle => {
            // apex at top centre, base along the bottom edge
            let depth = py + half_h;
            (0.0..=2.0 * half_h).contains(&depth) && px.abs() <= half_w * depth / (2.0 * half_h)
        }
    }
}

/// Pixels of the latent grid covered by the shape.
pub fn shape_support(kind: ShapeKind, b: &BoundingBox, height: usize, width: usize) -> Vec<bool> {
    let mut out = vec![false; height * width];
    for row in 0..height {
        for col in 0..width {
            out[row * width + col] = shape_contains(kind, b, row as i64, col as i64);
        }
    }
    out
}

fn fill(image: &mut LatentImage, row: usize, col: usize, rgb: Rgb, occupancy: f64) {
    let shape = image.shape();
    for c in 0..shape.channels {
        let v = match c {
            0..=2 => to_latent(rgb.0[c]),
            OCCUPANCY_CHANNEL => occupancy,
            _ => 0.0,
        };
        image.set(c, row, col, v);
    }
}

/// Background-only image.
pub fn render_background(background: &BackgroundDescriptor, shape: Shape) -> LatentImage {
    let mut image = LatentImage::zeros(shape);
    for row in 0..shape.height {
        for col in 0..shape.width {
            fill(&mut image, row, col, background.color, -1.0);
        }
    }
    image
}

/// Background fill plus the object's shape drawn centred in `bbox` at 80% of
/// the box extent. Fails when the shape covers no pixel of the grid.
pub fn render_target(
    descriptor: &ObjectDescriptor,
    bbox: &BoundingBox,
    background: &BackgroundDescriptor,
    shape: Shape,
) -> Result<LatentImage, GeneratorError> {
    let support = shape_support(descriptor.shape, bbox, shape.height, shape.width);
    if !support.iter().any(|&s| s) {
        return Err(GeneratorError::Domain(format!(
            "box {:?} draws no pixel on a {}x{} grid",
            bbox.to_array(),
            shape.height,
            shape.width
        )));
    }
    let mut image = render_background(background, shape);
    for (i, _) in support.iter().enumerate().filter(|(_, s)| **s) {
        fill(
            &mut image,
            i / shape.width,
            i % shape.width,
            descriptor.color,
            1.0,
        );
    }
    Ok(image)
}

/// Target of one object term: [`render_target`] with [`CONTEXT_BLEED`] of
/// the object color mixed into every non-object pixel.
pub fn object_term_target(
    descriptor: &ObjectDescriptor,
    bbox: &BoundingBox,
    background: &BackgroundDescriptor,
    shape: Shape,
) -> Result<LatentImage, GeneratorError> {
    let mut image = render_target(descriptor, bbox, background, shape)?;
    let support = shape_support(descriptor.shape, bbox, shape.height, shape.width);
    let mut tint = [0.0; 3];
    for (k, t) in tint.iter_mut().enumerate() {
        *t =
            background.color.0[k] + CONTEXT_BLEED * (descriptor.color.0[k] - background.color.0[k]);
    }
    for (i, _) in support.iter().enumerate().filter(|(_, s)| !**s) {
        fill(
            &mut image,
            i / shape.width,
            i % shape.width,
            Rgb(tint),
            -1.0,
        );
    }
    Ok(image)
}

/// RGB of one latent pixel, clamped to `[0, 1]`. Missing color channels
/// read as 0.
pub fn pixel_rgb(image: &LatentImage, row: usize, col: usize) -> Rgb {
    let channels = image.shape().channels;
    let mut out = [0.0; 3];
    for (c, v) in out.iter_mut().enumerate() {
        if c < channels {
            *v = ((image.get(c, row, col) + 1.0) / 2.0).clamp(0.0, 1.0);
        }
    }
    Rgb(out)
}

/// Row-major 8-bit RGB rendering of a latent.
pub fn to_rgb8(image: &LatentImage) -> Vec<u8> {
    let shape = image.shape();
    let mut out = Vec::with_capacity(shape.plane() * 3);
    for row in 0..shape.height {
        for col in 0..shape.width {
            let Rgb(rgb) = pixel_rgb(image, row, col);
            out.extend(rgb.iter().map(|v| (v * 255.0).round() as u8));
        }
    }
    out
}

/// Occupancy channel value at a pixel, if the latent has one.
pub fn occupancy(image: &LatentImage, row: usize, col: usize) -> Option<f64> {
    (image.shape().channels > OCCUPANCY_CHANNEL).then(|| image.get(OCCUPANCY_CHANNEL, row, col))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::descriptor::palette_color;

    fn bx(x: i64, y: i64, w: i64, h: i64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn gray_bg() -> BackgroundDescriptor {
        BackgroundDescriptor::parse("a gray wall")
    }

    #[test]
    fn red_circle_inside_inscribed_disk() {
        let shape = Shape::new(4, 64, 64);
        let d = ObjectDescriptor::parse("a red circle");
        let b = bx(16, 16, 32, 32);
        let img = render_target(&d, &b, &gray_bg(), shape).unwrap();
        let red = palette_color("red").unwrap();
        let gray = palette_color("gray").unwrap();
        for row in 0..64 {
            for col in 0..64 {
                let (dx, dy) = (col as f64 + 0.5 - 32.0, row as f64 + 0.5 - 32.0);
                let inside = dx * dx + dy * dy <= 12.8 * 12.8;
                let want = if inside { red } else { gray };
                let got = pixel_rgb(&img, row, col);
                for k in 0..3 {
                    assert!((got.0[k] - want.0[k]).abs() < 1e-12, "({row},{col})");
                }
                assert_eq!(
                    occupancy(&img, row, col),
                    Some(if inside { 1.0 } else { -1.0 })
                );
            }
        }
    }

    #[test]
    fn deterministic() {
        let shape = Shape::new(4, 32, 32);
        let d = ObjectDescriptor::parse("a blue triangle");
        let b = bx(3, 4, 20, 18);
        let a = render_target(&d, &b, &gray_bg(), shape).unwrap();
        let c = render_target(&d, &b, &gray_bg(), shape).unwrap();
        assert!(a.bitwise_eq(&c));
    }

    #[test]
    fn renders_differ_on_symmetric_difference() {
        let shape = Shape::new(4, 48, 48);
        let d = ObjectDescriptor::parse("a green square");
        let (b1, b2) = (bx(4, 4, 20, 20), bx(10, 12, 20, 20));
        let i1 = render_target(&d, &b1, &gray_bg(), shape).unwrap();
        let i2 = render_target(&d, &b2, &gray_bg(), shape).unwrap();
        let s1 = shape_support(d.shape, &b1, 48, 48);
        let s2 = shape_support(d.shape, &b2, 48, 48);
        for row in 0..48 {
            for col in 0..48 {
                let differs = i1.pixel(row, col) != i2.pixel(row, col);
                let i = row * 48 + col;
                assert_eq!(differs, s1[i] != s2[i], "({row},{col})");
            }
        }
    }

    #[test]
    fn degenerate_box_is_an_error() {
        let shape = Shape::new(4, 16, 16);
        let d = ObjectDescriptor::parse("a red triangle");
        // 1x1 box: the 0.8-extent triangle misses the only pixel centre's row span
        assert!(render_target(&d, &bx(100, 100, 4, 4), &gray_bg(), shape).is_err());
    }

    #[test]
    fn bleed_only_off_shape() {
        let shape = Shape::new(4, 16, 16);
        let d = ObjectDescriptor::parse("a red square");
        let b = bx(4, 4, 8, 8);
        let plain = render_target(&d, &b, &gray_bg(), shape).unwrap();
        let term = object_term_target(&d, &b, &gray_bg(), shape).unwrap();
        let support = shape_support(d.shape, &b, 16, 16);
        for (i, s) in support.iter().enumerate() {
            let (row, col) = (i / 16, i % 16);
            assert_eq!(*s, plain.pixel(row, col) == term.pixel(row, col));
            assert_eq!(plain.get(3, row, col), term.get(3, row, col));
        }
    }

    #[test]
    fn rgb8_layout() {
        let shape = Shape::new(4, 2, 3);
        let img = render_background(&BackgroundDescriptor::parse("white"), shape);
        let bytes = to_rgb8(&img);
        assert_eq!(bytes.len(), 18);
        assert!(bytes.iter().all(|&b| b == 247));
    }
}
