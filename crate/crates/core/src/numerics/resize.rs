//! Bilinear image resizing with half-pixel centers (align-corners = false),
//! matching the convention of the standard evaluation pipelines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels-last (HWC) real image tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Per-channel affine normalization `(v - mean) / std`.
    pub fn normalize(&self, mean: &[f32], std: &[f32]) -> Result<ImageTensor> {
        if mean.len() != self.channels || std.len() != self.channels {
            return Err(Error::Shape(format!(
                "normalization constants for {} channels, image has {}",
                mean.len(),
                self.channels
            )));
        }
        let mut out = self.clone();
        for px in out.data.chunks_mut(self.channels) {
            for (c, v) in px.iter_mut().enumerate() {
                *v = (*v - mean[c]) / std[c];
            }
        }
        Ok(out)
    }

    /// Crop of the rectangle with top-left (y0, x0).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> ImageTensor {
        let mut out = ImageTensor::zeros(h, w, self.channels);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * self.channels;
            let dst = y * w * self.channels;
            out.data[dst..dst + w * self.channels]
                .copy_from_slice(&self.data[src..src + w * self.channels]);
        }
        out
    }

    /// Reflect-pad to at least (h, w); a no-op when already large enough.
    /// Reflection excludes the border pixel (abcb-style), standard for
    /// evaluation-time padding of undersized inputs.
    pub fn reflect_pad_to(&self, h: usize, w: usize) -> ImageTensor {
        if self.height >= h && self.width >= w {
            return self.clone();
        }
        let th = self.height.max(h);
        let tw = self.width.max(w);
        let mut out = ImageTensor::zeros(th, tw, self.channels);
        let reflect = |i: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let m = i % period;
            if m < n {
                m
            } else {
                period - m
            }
        };
        for y in 0..th {
            let sy = reflect(y, self.height);
            for x in 0..tw {
                let sx = reflect(x, self.width);
                for c in 0..self.channels {
                    out.set(y, x, c, self.get(sy, sx, c));
                }
            }
        }
        out
    }
}

/// Bilinear resize with half-pixel centers. Identical target size returns a
/// bit-identical copy.
pub fn bilinear_resize(img: &ImageTensor, target_h: usize, target_w: usize) -> Result<ImageTensor> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::Parameter("resize target dimension is zero".into()));
    }
    if img.height == 0 || img.width == 0 {
        return Err(Error::Shape("resize of empty image".into()));
    }
    if target_h == img.height && target_w == img.width {
        return Ok(img.clone());
    }
    let mut out = ImageTensor::zeros(target_h, target_w, img.channels);
    let sy = img.height as f64 / target_h as f64;
    let sx = img.width as f64 / target_w as f64;
    for y in 0..target_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..target_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = fx - x0 as f64;
            for c in 0..img.channels {
                let v00 = img.get(y0, x0, c) as f64;
                let v01 = img.get(y0, x1, c) as f64;
                let v10 = img.get(y1, x0, c) as f64;
                let v11 = img.get(y1, x1, c) as f64;
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                out.set(y, x, c, (top + (bot - top) * wy) as f32);
            }
        }
    }
    Ok(out)
}

/// Single-plane convenience wrapper used for class-logit upsampling.
pub fn bilinear_resize_plane(
    plane: &[f32],
    h: usize,
    w: usize,
    target_h: usize,
    target_w: usize,
) -> Result<Vec<f32>> {
    let img = ImageTensor {
        height: h,
        width: w,
        channels: 1,
        data: plane.to_vec(),
    };
    Ok(bilinear_resize(&img, target_h, target_w)?.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_bit_identical() {
        let img = ImageTensor {
            height: 3,
            width: 2,
            channels: 2,
            data: (0..12).map(|i| i as f32 * 0.37 - 1.0).collect(),
        };
        let out = bilinear_resize(&img, 3, 2).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn checkerboard_to_single_pixel_averages() {
        let img = ImageTensor {
            height: 2,
            width: 2,
            channels: 1,
            data: vec![0.0, 1.0, 1.0, 0.0],
        };
        let out = bilinear_resize(&img, 1, 1).unwrap();
        assert!((out.data[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn upsample_row_is_monotone() {
        let img = ImageTensor {
            height: 1,
            width: 2,
            channels: 1,
            data: vec![0.0, 1.0],
        };
        let out = bilinear_resize(&img, 1, 4).unwrap();
        for pair in out.data.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
    }

    #[test]
    fn zero_target_is_parameter_error() {
        let img = ImageTensor::zeros(2, 2, 1);
        assert!(matches!(
            bilinear_resize(&img, 0, 2),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn reflect_pad_reaches_target_and_mirrors() {
        let img = ImageTensor {
            height: 1,
            width: 3,
            channels: 1,
            data: vec![1.0, 2.0, 3.0],
        };
        let out = img.reflect_pad_to(1, 6);
        assert_eq!(out.width, 6);
        // abcb reflection: 1 2 3 2 1 2
        assert_eq!(out.data, vec![1.0, 2.0, 3.0, 2.0, 1.0, 2.0]);
    }
}
