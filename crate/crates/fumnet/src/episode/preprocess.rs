//! Image preprocessing: scale the shorter side to `84 / 0.875`, center-crop
//! to 84×84, and standardize per channel. No augmentation.

use super::DataError;
use crate::tensor::Tensor;

pub const TARGET_SIZE: usize = 84;
const CROP_RATIO: f64 = 0.875;

/// Per-channel standardization constants applied after the crop.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

impl Normalization {
    /// No-op normalization, handy for geometry tests.
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

/// `[3, H, W] -> [3, 84, 84]`.
pub fn preprocess(image: &Tensor<f32>, norm: &Normalization) -> Result<Tensor<f32>, DataError> {
    let shape = image.shape();
    assert_eq!(shape.len(), 3, "expected a [channels, h, w] image");
    assert_eq!(shape[0], 3, "expected 3 channels");
    let (h, w) = (shape[1], shape[2]);
    if h < 2 || w < 2 {
        return Err(DataError::DegenerateImage {
            width: w,
            height: h,
        });
    }

    let scaled_short = (TARGET_SIZE as f64 / CROP_RATIO).round() as usize; // 96
    let (new_h, new_w) = if h <= w {
        let nw = ((w as f64) * scaled_short as f64 / h as f64).round() as usize;
        (scaled_short, nw.max(TARGET_SIZE))
    } else {
        let nh = ((h as f64) * scaled_short as f64 / w as f64).round() as usize;
        (nh.max(TARGET_SIZE), scaled_short)
    };
    let resized = resize_bilinear(image, new_h, new_w);

    let top = (new_h - TARGET_SIZE) / 2;
    let left = (new_w - TARGET_SIZE) / 2;
    let mut out = Tensor::zeros(&[3, TARGET_SIZE, TARGET_SIZE]);
    for c in 0..3 {
        for y in 0..TARGET_SIZE {
            for x in 0..TARGET_SIZE {
                let v = resized.at(&[c, top + y, left + x]);
                out.data_mut()[(c * TARGET_SIZE + y) * TARGET_SIZE + x] =
                    (v - norm.mean[c]) / norm.std[c];
            }
        }
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel-center coordinates.
fn resize_bilinear(image: &Tensor<f32>, new_h: usize, new_w: usize) -> Tensor<f32> {
    let shape = image.shape();
    let (channels, h, w) = (shape[0], shape[1], shape[2]);
    if new_h == h && new_w == w {
        return image.clone();
    }
    let mut out = Tensor::zeros(&[channels, new_h, new_w]);
    let sy = h as f64 / new_h as f64;
    let sx = w as f64 / new_w as f64;
    for c in 0..channels {
        let plane = &image.data()[c * h * w..(c + 1) * h * w];
        for y in 0..new_h {
            let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = src_y.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = (src_y - y0 as f64) as f32;
            for x in 0..new_w {
                let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = src_x.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = (src_x - x0 as f64) as f32;
                let v00 = plane[y0 * w + x0];
                let v01 = plane[y0 * w + x1];
                let v10 = plane[y1 * w + x0];
                let v11 = plane[y1 * w + x1];
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                out.data_mut()[(c * new_h + y) * new_w + x] = top + (bottom - top) * fy;
            }
        }
    }
    out
}
