//! Saliency-seeded mask refinement.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::GeneratorError;
use crate::diffusion::Grid;
use crate::layout::BoundingBox;

/// Nonnegative per-pixel affinity between image locations and an object
/// term. Normalized to a maximum of 1 when produced by the generator.
pub type SaliencyMap = Grid;

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(height, width);
        for row in 0..height {
            for col in 0..width {
                m.data[row * width + col] = f(row, col);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// `(row, col)` of every set pixel, row-major.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(move |(i, _)| (i / self.width, i % self.width))
    }

    /// Tight bounds of the set pixels, `None` for an empty mask.
    pub fn outer_box(&self) -> Option<BoundingBox> {
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        let mut any = false;
        for (row, col) in self.pixels() {
            any = true;
            r0 = r0.min(row);
            r1 = r1.max(row);
            c0 = c0.min(col);
            c1 = c1.max(col);
        }
        any.then(|| {
            BoundingBox::new(
                c0 as i64,
                r0 as i64,
                (c1 - c0 + 1) as i64,
                (r1 - r0 + 1) as i64,
            )
            .expect("non-empty bounds")
        })
    }

    /// Intersection over union against the pixels of a box.
    pub fn iou_with_box(&self, b: &BoundingBox) -> f64 {
        let mut inter = 0i64;
        for (row, col) in self.pixels() {
            if b.contains_pixel(col as i64, row as i64) {
                inter += 1;
            }
        }
        // box area clipped to the grid
        let clipped_w = (b.right().min(self.width as i64) - b.x().max(0)).max(0);
        let clipped_h = (b.bottom().min(self.height as i64) - b.y().max(0)).max(0);
        let union = self.count() as i64 + clipped_w * clipped_h - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Whether all set pixels form one 4-connected component.
    pub fn is_connected(&self) -> bool {
        let Some((r, c)) = self.pixels().next() else {
            return false;
        };
        flood_fill(self.height, self.width, (r, c), |row, col| {
            self.get(row, col)
        })
        .count()
            == self.count()
    }

    /// Plain (P1) PBM encoding, 1 = set.
    pub fn to_pbm(&self) -> String {
        let mut out = format!("P1\n{} {}\n", self.width, self.height);
        for row in 0..self.height {
            let line: Vec<&str> = (0..self.width)
                .map(|col| if self.get(row, col) { "1" } else { "0" })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// 4-connected component containing `seed` among pixels where `inside` holds.
pub fn flood_fill(
    height: usize,
    width: usize,
    seed: (usize, usize),
    inside: impl Fn(usize, usize) -> bool,
) -> Mask {
    let mut mask = Mask::empty(height, width);
    if !inside(seed.0, seed.1) {
        return mask;
    }
    let mut queue = VecDeque::from([seed]);
    mask.set(seed.0, seed.1, true);
    while let Some((row, col)) = queue.pop_front() {
        let neighbours = [
            (row.wrapping_sub(1), col),
            (row + 1, col),
            (row, col.wrapping_sub(1)),
            (row, col + 1),
        ];
        for (r, c) in neighbours {
            if r < height && c < width && !mask.get(r, c) && inside(r, c) {
                mask.set(r, c, true);
                queue.push_back((r, c));
            }
        }
    }
    mask
}

/// Turns a saliency map into an object mask and its tight bounding box.
pub trait MaskRefiner: Send + Sync {
    fn refine(
        &self,
        saliency: &SaliencyMap,
        threshold: f64,
    ) -> Result<(Mask, BoundingBox), GeneratorError>;
}

/// Default refiner: flood fill of the superlevel set `{s >= threshold * max}`
/// from the most salient pixel.
#[derive(Debug, Clone, Copy, Default)]
pub struct FloodFillRefiner;

impl MaskRefiner for FloodFillRefiner {
    fn refine(
        &self,
        saliency: &SaliencyMap,
        threshold: f64,
    ) -> Result<(Mask, BoundingBox), GeneratorError> {
        refine_mask(saliency, threshold)
    }
}

/// Most salient pixel; ties go to the smallest row, then column.
pub fn saliency_argmax(saliency: &SaliencyMap) -> Option<(usize, usize)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in saliency.data.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| (i / saliency.width, i % saliency.width))
}

pub fn refine_mask(
    saliency: &SaliencyMap,
    threshold: f64,
) -> Result<(Mask, BoundingBox), GeneratorError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(GeneratorError::Domain(format!(
            "mask threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let max = saliency.max();
    if !(max > 0.0 && max.is_finite()) {
        return Err(GeneratorError::Domain(
            "saliency map has no positive finite maximum".into(),
        ));
    }
    let seed = saliency_argmax(saliency).expect("non-empty saliency");
    let level = threshold * max;
    let mask = flood_fill(saliency.height, saliency.width, seed, |r, c| {
        saliency.get(r, c) >= level
    });
    let outer = mask.outer_box().expect("seed pixel is always in the mask");
    Ok((mask, outer))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_indicator() {
        let s = Grid::from_fn(32, 32, |r, c| {
            if (5..15).contains(&r) && (8..18).contains(&c) {
                1.0
            } else {
                0.0
            }
        });
        let (mask, outer) = refine_mask(&s, 0.5).unwrap();
        assert_eq!(outer, BoundingBox::new(8, 5, 10, 10).unwrap());
        assert_eq!(mask.count(), 100);
        assert_eq!(mask.iou_with_box(&outer), 1.0);
    }

    #[test]
    fn tie_break_picks_first_block() {
        let s = Grid::from_fn(20, 20, |r, c| {
            let a = (2..6).contains(&r) && (10..14).contains(&c);
            let b = (10..14).contains(&r) && (1..5).contains(&c);
            if a || b {
                1.0
            } else {
                0.0
            }
        });
        let (mask, outer) = refine_mask(&s, 0.5).unwrap();
        assert_eq!(saliency_argmax(&s), Some((2, 10)));
        assert_eq!(outer, BoundingBox::new(10, 2, 4, 4).unwrap());
        assert_eq!(mask.count(), 16);
    }

    #[test]
    fn gaussian_bump_superlevel_radius() {
        // exp(-d^2 / (2 s^2)) >= tau  <=>  d <= s * sqrt(-2 ln tau)
        let (n, sigma, tau) = (64usize, 6.0f64, 0.5f64);
        let (cy, cx) = (30.0, 33.0);
        let s = Grid::from_fn(n, n, |r, c| {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        });
        let (mask, outer) = refine_mask(&s, tau).unwrap();
        let radius = sigma * (-2.0 * tau.ln()).sqrt();
        for (row, col) in mask.pixels() {
            let d = ((row as f64 - cy).powi(2) + (col as f64 - cx).powi(2)).sqrt();
            assert!(d <= radius + 1.0);
        }
        let half_width = (outer.width() - 1) as f64 / 2.0;
        assert!(
            (half_width - radius).abs() <= 1.0,
            "{half_width} vs {radius}"
        );
        let half_height = (outer.height() - 1) as f64 / 2.0;
        assert!((half_height - radius).abs() <= 1.0);
        assert!(mask.is_connected());
    }

    #[test]
    fn rejects_flat_zero_saliency() {
        assert!(refine_mask(&Grid::filled(4, 4, 0.0), 0.5).is_err());
        assert!(refine_mask(&Grid::filled(4, 4, 1.0), 1.5).is_err());
    }

    #[test]
    fn pbm_encoding() {
        let m = Mask::from_fn(2, 3, |r, c| r == c);
        assert_eq!(m.to_pbm(), "P1\n3 2\n1 0 0\n0 1 0\n");
    }

    #[test]
    fn connectivity() {
        let m = Mask::from_fn(3, 3, |r, c| r == c);
        assert!(!m.is_connected());
        let m = Mask::from_fn(3, 3, |r, _| r == 1);
        assert!(m.is_connected());
    }
}
