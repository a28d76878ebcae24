//! Readouts of generated latents: object regions and their colors.

use super::descriptor::{nearest_palette_color, Rgb};
use super::mask::{flood_fill, Mask};
use super::render::{occupancy, pixel_rgb};
use crate::diffusion::LatentImage;
use crate::layout::BoundingBox;

/// Pixels whose occupancy channel is positive.
pub fn occupied(image: &LatentImage) -> Mask {
    let s = image.shape();
    Mask::from_fn(s.height, s.width, |r, c| {
        occupancy(image, r, c).is_some_and(|v| v > 0.0)
    })
}

/// Occupied component containing the occupied pixel nearest the box centre
/// (ties: smallest row, then column). Empty when nothing is occupied.
pub fn object_region(image: &LatentImage, bbox: &BoundingBox) -> Mask {
    let occ = occupied(image);
    let (cx, cy) = bbox.center();
    let seed = occ.pixels().min_by(|a, b| {
        let d = |&(r, c): &(usize, usize)| {
            (r as f64 + 0.5 - cy).powi(2) + (c as f64 + 0.5 - cx).powi(2)
        };
        d(a).total_cmp(&d(b))
    });
    match seed {
        Some(seed) => flood_fill(occ.height, occ.width, seed, |r, c| occ.get(r, c)),
        None => Mask::empty(occ.height, occ.width),
    }
}

/// Number of 4-connected occupied components.
pub fn count_regions(image: &LatentImage) -> usize {
    let mut left = occupied(image);
    let mut n = 0;
    loop {
        let Some(seed) = left.pixels().next() else {
            break;
        };
        let comp = flood_fill(left.height, left.width, seed, |r, c| left.get(r, c));
        for (r, c) in comp.pixels() {
            left.set(r, c, false);
        }
        n += 1;
    }
    n
}

/// Mean RGB over the mask, `None` for an empty mask.
pub fn mean_color(image: &LatentImage, mask: &Mask) -> Option<Rgb> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (r, c) in mask.pixels() {
        let Rgb(p) = pixel_rgb(image, r, c);
        for k in 0..3 {
            sum[k] += p[k];
        }
        n += 1;
    }
    (n > 0).then(|| Rgb(sum.map(|v| v / n as f64)))
}

/// Palette name nearest the mean color under the mask.
pub fn dominant_color(image: &LatentImage, mask: &Mask) -> Option<&'static str> {
    mean_color(image, mask).map(nearest_palette_color)
}
