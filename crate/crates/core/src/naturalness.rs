//! Histogram-of-oriented-gradients descriptors and their intersection, used
//! to score how close a synthetic image stays to its background.

use thiserror::Error;

use crate::image::ImageBuffer;

pub const CELL: u32 = 8;
pub const BINS: usize = 9;
const BLOCK_LEN: usize = 4 * BINS;
const BLOCK_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NaturalnessError {
    #[error("image {width}x{height} is smaller than 16x16")]
    TooSmall { width: u32, height: u32 },
    #[error("descriptor geometry {a:?} does not match {b:?}")]
    GeometryMismatch { a: (usize, usize), b: (usize, usize) },
}

/// Block-normalized HOG: `(cells_x - 1) * (cells_y - 1)` blocks of 2x2 cells,
/// 9 unsigned orientation bins per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub cells_x: usize,
    pub cells_y: usize,
    pub values: Vec<f64>,
}

impl HogDescriptor {
    pub fn geometry(&self) -> (usize, usize) {
        (self.cells_x, self.cells_y)
    }
}

fn luma(image: &ImageBuffer) -> Vec<f64> {
    image
        .pixels()
        .chunks_exact(4)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

pub fn hog(image: &ImageBuffer) -> Result<HogDescriptor, NaturalnessError> {
    let (width, height) = image.dims();
    if width < 2 * CELL || height < 2 * CELL {
        return Err(NaturalnessError::TooSmall { width, height });
    }
    let (w, h) = (width as usize, height as usize);
    let (cells_x, cells_y) = (w / CELL as usize, h / CELL as usize);
    let gray = luma(image);
    let at = |x: usize, y: usize| gray[y * w + x];

    let mut cells = vec![[0.0f64; BINS]; cells_x * cells_y];
    for y in 0..cells_y * CELL as usize {
        for x in 0..cells_x * CELL as usize {
            let gx = at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y);
            let gy = at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1));
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            // bin k is centered on k * 20 degrees; votes wrap from 160 to 0
            let pos = theta / (180.0 / BINS as f64);
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = lo as usize % BINS;
            let b1 = (b0 + 1) % BINS;
            let cell = &mut cells[(y / CELL as usize) * cells_x + x / CELL as usize];
            cell[b0] += mag * (1.0 - frac);
            cell[b1] += mag * frac;
        }
    }

    let mut values = Vec::with_capacity((cells_x - 1) * (cells_y - 1) * BLOCK_LEN);
    for by in 0..cells_y - 1 {
        for bx in 0..cells_x - 1 {
            let start = values.len();
            for (cx, cy) in [(bx, by), (bx + 1, by), (bx, by + 1), (bx + 1, by + 1)] {
                values.extend_from_slice(&cells[cy * cells_x + cx]);
            }
            let block = &mut values[start..];
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + BLOCK_EPS * BLOCK_EPS).sqrt();
            block.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(HogDescriptor { cells_x, cells_y, values })
}

/// Sum of element-wise minima of the L1-normalized descriptors, in [0, 1].
/// Two all-zero descriptors are identical and score 1.
pub fn hog_intersection(a: &HogDescriptor, b: &HogDescriptor) -> Result<f64, NaturalnessError> {
    if a.geometry() != b.geometry() {
        return Err(NaturalnessError::GeometryMismatch { a: a.geometry(), b: b.geometry() });
    }
    let (sa, sb): (f64, f64) = (a.values.iter().sum(), b.values.iter().sum());
    match (sa > 0.0, sb > 0.0) {
        (false, false) => Ok(1.0),
        // exact for equal inputs, where the float sum can fall short of 1
        (true, true) if a.values == b.values => Ok(1.0),
        (true, true) => {
            let s: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x / sa).min(y / sb)).sum();
            Ok(s.clamp(0.0, 1.0))
        }
        _ => Ok(0.0),
    }
}

/// HOG intersection of two images of the same size.
pub fn image_intersection(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, NaturalnessError> {
    hog_intersection(&hog(a)?, &hog(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray(w: u32, h: u32, f: impl Fn(u32, u32) -> u8) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| {
            let v = f(x, y);
            [v, v, v, 255]
        })
    }

    #[test]
    fn constant_image_has_zero_descriptor() {
        let d = hog(&ImageBuffer::filled(32, 24, [90, 10, 200, 255])).unwrap();
        assert_eq!(d.geometry(), (4, 3));
        assert_eq!(d.values.len(), 3 * 2 * 36);
        assert!(d.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(matches!(hog(&ImageBuffer::filled(15, 40, [0; 4])), Err(NaturalnessError::TooSmall { .. })));
    }

    #[test]
    fn trailing_partial_cells_are_ignored() {
        let a = gray(35, 21, |x, y| ((x * 7 + y * 3) % 256) as u8);
        let d = hog(&a).unwrap();
        assert_eq!(d.geometry(), (4, 2));
        assert_eq!(d.values.len(), 3 * 36);
    }

    #[test]
    fn vertical_step_edge_votes_bin_zero() {
        // step between columns 11 and 12: gradient at x = 11 and x = 12 is
        // horizontal with magnitude 100, everything else is zero
        let img = gray(32, 32, |x, _| if x < 12 { 0 } else { 100 });
        let d = hog(&img).unwrap();
        for by in 0..3 {
            for bx in 0..3 {
                let block = &d.values[(by * 3 + bx) * 36..][..36];
                for (i, v) in block.iter().enumerate() {
                    let cell_x = bx + (i / 9) % 2;
                    let bin = i % 9;
                    let expected = if cell_x == 1 && bin == 0 {
                        // two cells with 8 rows x 2 columns x 100 each
                        1600.0 / (2.0f64 * 1600.0 * 1600.0 + 1e-12).sqrt()
                    } else {
                        0.0
                    };
                    assert!((v - expected).abs() < 1e-9, "block ({bx},{by}) entry {i}: {v}");
                }
            }
        }
    }

    #[test]
    fn scaling_intensity_is_normalized_away() {
        let img = gray(40, 32, |x, y| (((x * 13 + y * 7) % 64) * 2) as u8 * 2);
        let half = gray(40, 32, |x, y| (((x * 13 + y * 7) % 64) * 2) as u8);
        let (a, b) = (hog(&img).unwrap(), hog(&half).unwrap());
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_images_score_one() {
        let img = gray(48, 48, |x, y| ((x * x + y * 3) % 256) as u8);
        assert_eq!(image_intersection(&img, &img).unwrap(), 1.0);
        let flat = ImageBuffer::filled(16, 16, [3, 3, 3, 255]);
        assert_eq!(image_intersection(&flat, &flat).unwrap(), 1.0);
        assert_eq!(image_intersection(&flat, &gray(16, 16, |x, _| (x * 16) as u8)).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_stripes_barely_intersect() {
        let horizontal = gray(64, 64, |_, y| if (y / 4) % 2 == 0 { 0 } else { 255 });
        let vertical = gray(64, 64, |x, _| if (x / 4) % 2 == 0 { 0 } else { 255 });
        assert!(image_intersection(&horizontal, &vertical).unwrap() < 0.2);
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let a = hog(&ImageBuffer::filled(16, 16, [0; 4])).unwrap();
        let b = hog(&ImageBuffer::filled(24, 16, [0; 4])).unwrap();
        assert!(matches!(hog_intersection(&a, &b), Err(NaturalnessError::GeometryMismatch { .. })));
    }

    fn textured(seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fx, fy): (f64, f64) = (rng.random_range(0.05..0.3), rng.random_range(0.05..0.3));
        ImageBuffer::from_fn(96, 96, |x, y| {
            let v = 128.0 + 60.0 * (x as f64 * fx).sin() + 50.0 * (y as f64 * fy).cos();
            let v = v.clamp(0.0, 255.0) as u8;
            [v, v / 2 + 40, 255 - v, 255]
        })
    }

    fn paste_noise(bg: &ImageBuffer, side: u32, rng: &mut ChaCha8Rng) -> ImageBuffer {
        let x0 = rng.random_range(0..=bg.width() - side);
        let y0 = rng.random_range(0..=bg.height() - side);
        let mut out = bg.clone();
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                out.put(x, y, [rng.random(), rng.random(), rng.random(), 255]);
            }
        }
        out
    }

    #[test]
    fn larger_insertions_lower_mean_intersection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let tiers = [8u32, 20, 40];
        let means: Vec<f64> = tiers
            .iter()
            .map(|&side| {
                let total: f64 = (0..200)
                    .map(|i| {
                        let bg = textured(i);
                        image_intersection(&bg, &paste_noise(&bg, side, &mut rng)).unwrap()
                    })
                    .sum();
                total / 200.0
            })
            .collect();
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }

    proptest! {
        #[test]
        fn intersection_properties(seed in any::<u64>(), w in 16u32..48, h in 16u32..48) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = ImageBuffer::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random(), 255]);
            let b = ImageBuffer::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random(), 255]);
            let (da, db) = (hog(&a).unwrap(), hog(&b).unwrap());
            prop_assert!(da.values.iter().all(|v| *v >= 0.0));
            prop_assert_eq!(da.values.len(), (da.cells_x - 1) * (da.cells_y - 1) * 36);
            prop_assert!((hog_intersection(&da, &da).unwrap() - 1.0).abs() < 1e-12);
            let ab = hog_intersection(&da, &db).unwrap();
            let ba = hog_intersection(&db, &da).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
