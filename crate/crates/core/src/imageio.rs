//! PNG loading and saving for images, masks, and cluster maps.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use image::{DynamicImage, GrayImage, RgbImage};
use thiserror::Error;

use crate::metrics::BinaryMask;
use crate::model::SegmentationMap;
use crate::numerics::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: unsupported format ({detail}); expected an 8-bit PNG")]
    Unsupported { path: PathBuf, detail: String },

    #[error("{path}: color {rgb:?} is not in the cluster palette")]
    UnknownPaletteColor { path: PathBuf, rgb: [u8; 3] },
}

/// Loads an 8-bit RGB or grayscale PNG into an `[h,w,c]` tensor scaled to
/// [0,1]. Alpha channels are dropped; 16-bit inputs are rejected.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>, ImageIoError> {
    let img = open(path)?;
    let (data, h, w, c): (Vec<u8>, usize, usize, usize) = match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            (g.into_raw(), h as usize, w as usize, 1)
        }
        DynamicImage::ImageLumaA8(g) => {
            let (w, h) = g.dimensions();
            let data = g.into_raw().chunks_exact(2).map(|px| px[0]).collect();
            (data, h as usize, w as usize, 1)
        }
        DynamicImage::ImageRgb8(g) => {
            let (w, h) = g.dimensions();
            (g.into_raw(), h as usize, w as usize, 3)
        }
        DynamicImage::ImageRgba8(g) => {
            let (w, h) = g.dimensions();
            let data = g
                .into_raw()
                .chunks_exact(4)
                .flat_map(|px| [px[0], px[1], px[2]])
                .collect();
            (data, h as usize, w as usize, 3)
        }
        other => {
            return Err(ImageIoError::Unsupported {
                path: path.to_path_buf(),
                detail: format!("{:?} pixels", other.color()),
            })
        }
    };
    let tensor = Tensor::from_fn(&[h, w, c], |i| T::from_f64(data[i] as f64 / 255.0));
    Ok(tensor)
}

/// Loads an 8-bit grayscale PNG mask; values ≥ 128 are foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask, ImageIoError> {
    let img = open(path)?;
    let gray: GrayImage = match img {
        DynamicImage::ImageLuma8(g) => g,
        DynamicImage::ImageLumaA8(g) => DynamicImage::ImageLumaA8(g).into_luma8(),
        other => {
            return Err(ImageIoError::Unsupported {
                path: path.to_path_buf(),
                detail: format!("{:?} pixels where a grayscale mask was expected", other.color()),
            })
        }
    };
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| v >= 128).collect();
    Ok(BinaryMask::new(h as usize, w as usize, data))
}

/// Loads a cluster map: grayscale pixels are taken as raw cluster ids, RGB
/// pixels are mapped back through the fixed cluster palette.
pub fn load_cluster_map(path: &Path) -> Result<SegmentationMap, ImageIoError> {
    let img = open(path)?;
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let labels = g.into_raw().into_iter().map(|v| v as u32).collect();
            Ok(SegmentationMap::new(h as usize, w as usize, labels))
        }
        DynamicImage::ImageRgb8(g) => {
            let (w, h) = g.dimensions();
            let inverse = palette_inverse();
            let mut labels = Vec::with_capacity((w * h) as usize);
            for px in g.into_raw().chunks_exact(3) {
                let rgb = [px[0], px[1], px[2]];
                match inverse.iter().position(|&c| c == rgb) {
                    Some(id) => labels.push(id as u32),
                    None => {
                        return Err(ImageIoError::UnknownPaletteColor {
                            path: path.to_path_buf(),
                            rgb,
                        })
                    }
                }
            }
            Ok(SegmentationMap::new(h as usize, w as usize, labels))
        }
        other => Err(ImageIoError::Unsupported {
            path: path.to_path_buf(),
            detail: format!("{:?} pixels where a cluster map was expected", other.color()),
        }),
    }
}

/// Writes the cluster map as an RGB PNG using the fixed palette, one color
/// per cluster id.
pub fn save_indexed_png(seg: &SegmentationMap, path: &Path) -> Result<(), ImageIoError> {
    let (h, w) = (seg.height(), seg.width());
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, &label) in seg.labels().iter().enumerate() {
        let color = cluster_color(label);
        img.put_pixel((i % w) as u32, (i / w) as u32, image::Rgb(color));
    }
    img.save(path).map_err(|source| ImageIoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a binary mask as an 8-bit grayscale PNG (0 / 255).
pub fn save_binary_png(mask: &BinaryMask, path: &Path) -> Result<(), ImageIoError> {
    let (h, w) = (mask.height(), mask.width());
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = if mask.get(y, x) { 255 } else { 0 };
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path).map_err(|source| ImageIoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Fixed color for a cluster id, stable across runs. Ids beyond the palette
/// wrap around.
pub fn cluster_color(id: u32) -> [u8; 3] {
    let palette = palette_inverse();
    palette[(id as usize) % palette.len()]
}

/// 256 visually distinct colors: 16 hand-picked entries followed by
/// golden-angle hues over three brightness tiers. Injectivity is asserted
/// by a unit test, which keeps RGB→id inversion well-defined.
fn palette_inverse() -> &'static [[u8; 3]; 256] {
    static PALETTE: OnceLock<[[u8; 3]; 256]> = OnceLock::new();
    PALETTE.get_or_init(|| {
        let mut out = [[0u8; 3]; 256];
        let base: [[u8; 3]; 16] = [
            [230, 25, 75],
            [60, 180, 75],
            [255, 225, 25],
            [0, 130, 200],
            [245, 130, 48],
            [145, 30, 180],
            [70, 240, 240],
            [240, 50, 230],
            [210, 245, 60],
            [250, 190, 212],
            [0, 128, 128],
            [220, 190, 255],
            [170, 110, 40],
            [255, 250, 200],
            [128, 0, 0],
            [0, 0, 117],
        ];
        out[..16].copy_from_slice(&base);
        for (i, slot) in out.iter_mut().enumerate().skip(16) {
            let k = (i - 16) as f64;
            let hue = (k * 0.618_033_988_749_895).fract();
            let value = 0.95 - 0.25 * ((i - 16) % 3) as f64;
            *slot = hsv_to_rgb(hue, 0.78, value);
        }
        out
    })
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

fn open(path: &Path) -> Result<DynamicImage, ImageIoError> {
    image::open(path).map_err(|source| ImageIoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_is_injective() {
        let palette = palette_inverse();
        let mut seen = std::collections::HashSet::new();
        for color in palette.iter() {
            assert!(seen.insert(*color), "duplicate palette color {color:?}");
        }
    }

    #[test]
    fn palette_is_stable() {
        assert_eq!(cluster_color(0), [230, 25, 75]);
        assert_eq!(cluster_color(0), cluster_color(256));
    }

    #[test]
    fn binary_mask_roundtrip_is_exact() {
        let dir = std::env::temp_dir().join(format!("fusenet-io-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mask = BinaryMask::from_fn(9, 7, |y, x| (y * 7 + x) % 3 == 0);
        let path = dir.join("mask.png");
        save_binary_png(&mask, &path).unwrap();
        let loaded = load_mask(&path).unwrap();
        assert_eq!(loaded, mask);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn cluster_map_roundtrip_through_palette() {
        let dir = std::env::temp_dir().join(format!("fusenet-io-test2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let seg = SegmentationMap::new(5, 4, (0..20).map(|i| (i % 7) as u32).collect());
        let path = dir.join("seg.png");
        save_indexed_png(&seg, &path).unwrap();
        let loaded = load_cluster_map(&path).unwrap();
        assert_eq!(loaded, seg);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn grayscale_png_loads_single_channel() {
        let dir = std::env::temp_dir().join(format!("fusenet-io-test3-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("gray.png");
        let mut img = GrayImage::new(4, 3);
        img.put_pixel(0, 0, image::Luma([255]));
        img.save(&path).unwrap();
        let tensor: Tensor<f64> = load_image(&path).unwrap();
        assert_eq!(tensor.shape(), &[3, 4, 1]);
        assert_eq!(tensor.data()[0], 1.0);
        assert_eq!(tensor.data()[1], 0.0);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_file_error_names_the_path() {
        let err = load_image::<f64>(Path::new("/nonexistent/file.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/file.png"));
    }
}
