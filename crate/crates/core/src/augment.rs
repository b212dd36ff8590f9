//! Photometric augmentation of the input image.
//!
//! Only pixel-aligned transforms are used (color jitter and Gaussian blur);
//! flips, crops and other geometric augmentations would break the
//! pixel-level correspondence the dual-stream losses rely on.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
}

/// Configuration of the augmented view.
///
/// Strengths of 0 skip the corresponding jitter stage entirely, and the
/// sentinel sigma range `(0, 0)` skips the blur, so an all-zero config is a
/// bit-exact identity.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Blur sigma is drawn uniformly from this range per view.
    pub blur_sigma: (f64, f64),
    pub blur_kernel_size: usize,
    pub seed: u64,
    /// Redraw the augmented view every training iteration instead of once
    /// per session.
    pub resample_each_iteration: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            blur_sigma: (0.1, 0.3),
            blur_kernel_size: 5,
            seed: 0,
            resample_each_iteration: false,
        }
    }
}

impl AugmentConfig {
    /// A config that reproduces the input exactly.
    pub fn identity(seed: u64) -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            blur_sigma: (0.0, 0.0),
            blur_kernel_size: 5,
            seed,
            resample_each_iteration: false,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, s) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !(0.0..1.0).contains(&s) {
                return Err(AugmentError::InvalidConfig(format!(
                    "{name} strength must be in [0,1), got {s}"
                )));
            }
        }
        let (lo, hi) = self.blur_sigma;
        let sentinel = lo == 0.0 && hi == 0.0;
        if lo > hi {
            return Err(AugmentError::InvalidConfig(format!(
                "blur sigma range has lo > hi: ({lo}, {hi})"
            )));
        }
        if !sentinel && lo <= 0.0 {
            return Err(AugmentError::InvalidConfig(format!(
                "blur sigma must be positive (or (0,0) to disable), got ({lo}, {hi})"
            )));
        }
        if self.blur_kernel_size % 2 == 0 || self.blur_kernel_size == 0 {
            return Err(AugmentError::InvalidConfig(format!(
                "blur kernel size must be odd, got {}",
                self.blur_kernel_size
            )));
        }
        Ok(())
    }

    fn blur_enabled(&self) -> bool {
        !(self.blur_sigma.0 == 0.0 && self.blur_sigma.1 == 0.0)
    }
}

fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Per-pixel grayscale value. RGB uses Rec. 601 luma weights; other channel
/// counts fall back to the channel mean.
fn pixel_gray<T: Scalar>(px: &[T]) -> T {
    if px.len() == 3 {
        T::from_f64(0.299) * px[0] + T::from_f64(0.587) * px[1] + T::from_f64(0.114) * px[2]
    } else {
        px.iter().copied().sum::<T>() / T::from_f64(px.len() as f64)
    }
}

/// Multiplies every value by `factor`, clamping to [0,1].
pub fn apply_brightness<T: Scalar>(img: &Tensor<T>, factor: f64) -> Tensor<T> {
    let f = T::from_f64(factor);
    img.map(|v| clamp01(v * f))
}

/// Blends toward the image's mean luminance: `f·x + (1−f)·mean`.
pub fn apply_contrast<T: Scalar>(img: &Tensor<T>, factor: f64) -> Tensor<T> {
    let c = img.shape()[2];
    let n = T::from_f64((img.numel() / c) as f64);
    let mean = img
        .data()
        .chunks_exact(c)
        .map(pixel_gray)
        .sum::<T>()
        / n;
    let f = T::from_f64(factor);
    let base = (T::one() - f) * mean;
    img.map(|v| clamp01(f * v + base))
}

/// Blends toward the per-pixel grayscale: `f·x + (1−f)·gray`.
pub fn apply_saturation<T: Scalar>(img: &Tensor<T>, factor: f64) -> Tensor<T> {
    let c = img.shape()[2];
    let f = T::from_f64(factor);
    let mut out = Vec::with_capacity(img.numel());
    for px in img.data().chunks_exact(c) {
        let gray = pixel_gray(px);
        let base = (T::one() - f) * gray;
        out.extend(px.iter().map(|&v| clamp01(f * v + base)));
    }
    Tensor::new(img.shape().to_vec(), out).expect("saturation shape")
}

/// Brightness → contrast → saturation, each with a factor drawn from
/// `U[1−s, 1+s]` and skipped entirely when its strength is 0.
pub fn color_jitter<T: Scalar, R: Rng>(
    img: &Tensor<T>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Tensor<T> {
    let mut out = img.clone();
    for (strength, stage) in [
        (cfg.brightness, 0usize),
        (cfg.contrast, 1),
        (cfg.saturation, 2),
    ] {
        if strength == 0.0 {
            continue;
        }
        let factor = rng.random_range(1.0 - strength..1.0 + strength);
        out = match stage {
            0 => apply_brightness(&out, factor),
            1 => apply_contrast(&out, factor),
            _ => apply_saturation(&out, factor),
        };
    }
    out
}

/// Normalized 1-d Gaussian taps for a kernel of `ksize` entries.
pub fn gaussian_taps(sigma: f64, ksize: usize) -> Vec<f64> {
    let c = (ksize / 2) as f64;
    let mut taps: Vec<f64> = (0..ksize)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian blur with edge-replicate padding. The kernel sums to
/// one, so constant images are preserved.
pub fn gaussian_blur<T: Scalar>(img: &Tensor<T>, sigma: f64, ksize: usize) -> Tensor<T> {
    assert!(sigma > 0.0, "gaussian_blur: sigma must be positive");
    assert!(ksize % 2 == 1, "gaussian_blur: kernel size must be odd");
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let taps: Vec<T> = gaussian_taps(sigma, ksize)
        .into_iter()
        .map(T::from_f64)
        .collect();
    let half = (ksize / 2) as isize;

    // horizontal pass
    let src = img.data();
    let mut tmp = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            for (t, tap) in taps.iter().enumerate() {
                let sx = (x as isize + t as isize - half).clamp(0, w as isize - 1) as usize;
                let sbase = (y * w + sx) * c;
                let dbase = (y * w + x) * c;
                for ci in 0..c {
                    tmp[dbase + ci] += *tap * src[sbase + ci];
                }
            }
        }
    }
    // vertical pass
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            for (t, tap) in taps.iter().enumerate() {
                let sy = (y as isize + t as isize - half).clamp(0, h as isize - 1) as usize;
                let sbase = (sy * w + x) * c;
                let dbase = (y * w + x) * c;
                for ci in 0..c {
                    out[dbase + ci] += *tap * tmp[sbase + ci];
                }
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("blur shape")
}

/// Builds the augmented view with a fresh RNG seeded from the config.
pub fn make_augmented_view<T: Scalar>(img: &Tensor<T>, cfg: &AugmentConfig) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    make_augmented_view_with_rng(img, cfg, &mut rng)
}

/// As [`make_augmented_view`] with an explicit RNG state, for callers that
/// resample across iterations.
pub fn make_augmented_view_with_rng<T: Scalar, R: Rng>(
    img: &Tensor<T>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Tensor<T> {
    let jittered = color_jitter(img, cfg, rng);
    if !cfg.blur_enabled() {
        return jittered;
    }
    let (lo, hi) = cfg.blur_sigma;
    let sigma = if lo < hi { rng.random_range(lo..hi) } else { lo };
    gaussian_blur(&jittered, sigma, cfg.blur_kernel_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[h, w, 3], |_| rng.random_range(0.0..1.0))
    }

    fn total_variation(img: &Tensor<f64>) -> f64 {
        let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        let mut tv = 0.0;
        for y in 0..h {
            for x in 0..w {
                for ci in 0..c {
                    if x + 1 < w {
                        tv += (img.at3(y, x + 1, ci) - img.at3(y, x, ci)).abs();
                    }
                    if y + 1 < h {
                        tv += (img.at3(y + 1, x, ci) - img.at3(y, x, ci)).abs();
                    }
                }
            }
        }
        tv
    }

    #[test]
    fn zero_strength_config_is_bit_exact_identity() {
        let img = test_image(9, 7, 1);
        let out = make_augmented_view(&img, &AugmentConfig::identity(42));
        assert!(img
            .data()
            .iter()
            .zip(out.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn forced_brightness_doubles_values() {
        let img = Tensor::filled(&[2, 2, 3], 0.25);
        let out = apply_brightness(&img, 2.0);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let img = test_image(8, 8, 2);
        let cfg = AugmentConfig {
            seed: 77,
            ..AugmentConfig::default()
        };
        let a = make_augmented_view(&img, &cfg);
        let b = make_augmented_view(&img, &cfg);
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn different_seeds_differ() {
        let img = test_image(8, 8, 3);
        let a = make_augmented_view(
            &img,
            &AugmentConfig {
                seed: 1,
                ..AugmentConfig::default()
            },
        );
        let b = make_augmented_view(
            &img,
            &AugmentConfig {
                seed: 2,
                ..AugmentConfig::default()
            },
        );
        assert_eq!(a.shape(), img.shape());
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| x != y));
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = Tensor::filled(&[6, 5, 1], 0.42);
        let out = gaussian_blur(&img, 1.3, 5);
        for &v in out.data() {
            assert!((v - 0.42f64).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_blur_reproduces_gaussian_kernel() {
        // unit impulse at the center of an 11x11 single-channel image
        let mut img = Tensor::zeros(&[11, 11, 1]);
        img.data_mut()[(5 * 11 + 5) * 1] = 1.0;
        let out = gaussian_blur(&img, 1.0, 5);
        let taps = gaussian_taps(1.0, 5);
        for dy in 0..5 {
            for dx in 0..5 {
                let expect = taps[dy] * taps[dx];
                let got = out.at3(3 + dy, 3 + dx, 0);
                assert!(
                    (got - expect).abs() < 1e-12,
                    "kernel mismatch at ({dy},{dx}): {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn blurred_impulse_mass_stays_centered() {
        let mut img = Tensor::zeros(&[15, 15, 1]);
        img.data_mut()[(7 * 15 + 7) * 1] = 1.0;
        let cfg = AugmentConfig {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            ..AugmentConfig::default()
        };
        let out = make_augmented_view(&img, &cfg);
        // centroid of the blurred mass must sit at the impulse location
        let (mut sy, mut sx, mut mass) = (0.0, 0.0, 0.0);
        for y in 0..15 {
            for x in 0..15 {
                let v = out.at3(y, x, 0);
                sy += v * y as f64;
                sx += v * x as f64;
                mass += v;
            }
        }
        assert!((sy / mass - 7.0).abs() < 1e-9);
        assert!((sx / mass - 7.0).abs() < 1e-9);
    }

    #[test]
    fn blur_never_increases_total_variation() {
        for seed in 0..5 {
            let img = test_image(10, 10, seed);
            let out = gaussian_blur(&img, 0.8, 5);
            assert!(total_variation(&out) <= total_variation(&img) + 1e-9);
        }
    }

    #[test]
    fn output_stays_in_unit_range_and_shape() {
        for seed in 0..10 {
            let img = test_image(12, 9, seed);
            let cfg = AugmentConfig {
                seed,
                ..AugmentConfig::default()
            };
            let out = make_augmented_view(&img, &cfg);
            assert_eq!(out.shape(), img.shape());
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let mut cfg = AugmentConfig::default();
        cfg.brightness = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.blur_sigma = (2.0, 1.0);
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.blur_kernel_size = 4;
        assert!(cfg.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
        assert!(AugmentConfig::identity(0).validate().is_ok());
    }
}
