//! Bundled synthetic segmentation fixtures.
//!
//! Flat-color regions with seeded Gaussian noise and a known ground-truth
//! mask, so the whole verification suite runs without any external dataset.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::metrics::BinaryMask;
use crate::numerics::Tensor;

/// A generated RGB image in [0,1] with the mask of its foreground region.
pub struct Fixture {
    pub image: Tensor<f64>,
    pub gt: BinaryMask,
}

/// One elliptical foreground region on a flat background, plus pixel noise
/// (σ = 0.05).
pub fn two_region(size: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = random_color(&mut rng, 0.10, 0.40);
    // offset every channel by at least 0.35 so the two regions stay
    // clearly separated even under the contrast jitter of the augmented view
    let fg = [
        (bg[0] + rng.random_range(0.35..0.55)).min(0.97),
        (bg[1] + rng.random_range(0.35..0.55)).min(0.97),
        (bg[2] + rng.random_range(0.35..0.55)).min(0.97),
    ];
    let shape = random_ellipse(&mut rng, size, 0.30, 0.38);

    let gt = BinaryMask::from_fn(size, size, |y, x| shape.contains(y, x));
    let image = paint(size, 0.05, &mut rng, |y, x| {
        if gt.get(y, x) {
            fg
        } else {
            bg
        }
    });
    Fixture { image, gt }
}

/// Four flat-color regions: two background halves split vertically, the
/// elliptical foreground (the ground truth), and a distractor disk on the
/// opposite half. Noise σ = 0.05.
pub fn four_region(size: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors = distinct_colors(&mut rng, 4, 0.45);
    let split = size / 2 + rng.random_range(0..size / 8) - size / 16;

    // foreground ellipse on the left half, distractor disk on the right
    let fg_shape = Ellipse {
        cy: rng.random_range(size as f64 * 0.30..size as f64 * 0.70),
        cx: rng.random_range(size as f64 * 0.18..size as f64 * 0.38),
        ry: rng.random_range(size as f64 * 0.12..size as f64 * 0.20),
        rx: rng.random_range(size as f64 * 0.10..size as f64 * 0.18),
    };
    let distractor = Ellipse {
        cy: rng.random_range(size as f64 * 0.25..size as f64 * 0.75),
        cx: rng.random_range(size as f64 * 0.62..size as f64 * 0.85),
        ry: rng.random_range(size as f64 * 0.10..size as f64 * 0.16),
        rx: rng.random_range(size as f64 * 0.10..size as f64 * 0.16),
    };

    let gt = BinaryMask::from_fn(size, size, |y, x| fg_shape.contains(y, x));
    let image = paint(size, 0.05, &mut rng, |y, x| {
        if fg_shape.contains(y, x) {
            colors[2]
        } else if distractor.contains(y, x) {
            colors[3]
        } else if x < split {
            colors[0]
        } else {
            colors[1]
        }
    });
    Fixture { image, gt }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 - self.cy) / self.ry;
        let dx = (x as f64 - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

fn random_ellipse(rng: &mut ChaCha8Rng, size: usize, r_lo: f64, r_hi: f64) -> Ellipse {
    let s = size as f64;
    Ellipse {
        cy: rng.random_range(s * 0.38..s * 0.62),
        cx: rng.random_range(s * 0.38..s * 0.62),
        ry: rng.random_range(s * r_lo..s * r_hi),
        rx: rng.random_range(s * r_lo..s * r_hi),
    }
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

/// Colors with pairwise L2 distance of at least `min_dist`.
fn distinct_colors(rng: &mut ChaCha8Rng, n: usize, min_dist: f64) -> Vec<[f64; 3]> {
    let mut colors: Vec<[f64; 3]> = Vec::with_capacity(n);
    while colors.len() < n {
        let c = random_color(rng, 0.08, 0.92);
        let ok = colors.iter().all(|o| {
            let d: f64 = (0..3).map(|i| (c[i] - o[i]).powi(2)).sum();
            d.sqrt() >= min_dist
        });
        if ok {
            colors.push(c);
        }
    }
    colors
}

fn paint(
    size: usize,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
    color_at: impl Fn(usize, usize) -> [f64; 3],
) -> Tensor<f64> {
    let normal = Normal::new(0.0, noise_sigma).expect("valid sigma");
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let c = color_at(y, x);
            for ch in c {
                data.push((ch + normal.sample(rng)).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![size, size, 3], data).expect("fixture shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_region_has_plausible_foreground() {
        for seed in 0..5 {
            let f = two_region(64, seed);
            assert_eq!(f.image.shape(), &[64, 64, 3]);
            let area = f.gt.count_ones() as f64 / (64.0 * 64.0);
            assert!((0.05..0.6).contains(&area), "area fraction {area}");
            assert!(f.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn four_region_gt_is_the_ellipse_only() {
        let f = four_region(64, 3);
        let area = f.gt.count_ones();
        assert!(area > 50, "foreground too small: {area}");
        assert!(area < 64 * 64 / 3, "foreground too big: {area}");
    }

    #[test]
    fn fixtures_are_seed_deterministic() {
        let a = two_region(32, 9);
        let b = two_region(32, 9);
        assert_eq!(a.gt, b.gt);
        assert!(a
            .image
            .data()
            .iter()
            .zip(b.image.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = two_region(32, 10);
        assert!(a.image.data().iter().zip(c.image.data()).any(|(x, y)| x != y));
    }
}
