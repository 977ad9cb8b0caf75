//! Sliding-window enumeration and the logit accumulation canvas.

use crate::error::{Error, Result};
use crate::head::ScorePlanes;

/// Window origins along one axis: stride steps with the last window clamped
/// to end exactly at the edge. Covers every pixel at least once.
pub fn window_origins(len: usize, window: usize, stride: usize) -> Vec<usize> {
    debug_assert!(window <= len && stride >= 1);
    let mut origins = Vec::new();
    let mut pos = 0usize;
    loop {
        if pos + window >= len {
            let last = len - window;
            if origins.last() != Some(&last) {
                origins.push(last);
            }
            break;
        }
        origins.push(pos);
        pos += stride;
    }
    origins
}

/// Per-pixel class-logit sums with coverage counts. Accumulation order is
/// the fixed window order, so results are independent of how the windows
/// were computed.
pub struct LogitCanvas {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl LogitCanvas {
    pub fn new(height: usize, width: usize, classes: usize) -> Self {
        LogitCanvas {
            height,
            width,
            classes,
            sums: vec![0.0; classes * height * width],
            counts: vec![0; height * width],
        }
    }

    pub fn add_window(&mut self, y0: usize, x0: usize, planes: &ScorePlanes) -> Result<()> {
        if planes.classes != self.classes
            || y0 + planes.height > self.height
            || x0 + planes.width > self.width
        {
            return Err(Error::Shape(format!(
                "window {}x{}x{} at ({y0},{x0}) outside canvas {}x{}x{}",
                planes.height, planes.width, planes.classes, self.height, self.width, self.classes
            )));
        }
        let hw = self.height * self.width;
        for c in 0..self.classes {
            let plane = planes.plane(c);
            for y in 0..planes.height {
                for x in 0..planes.width {
                    self.sums[c * hw + (y0 + y) * self.width + (x0 + x)] +=
                        plane[y * planes.width + x] as f64;
                }
            }
        }
        for y in 0..planes.height {
            for x in 0..planes.width {
                self.counts[(y0 + y) * self.width + (x0 + x)] += 1;
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Overlap-averaged planes. Every pixel must be covered at least once.
    pub fn into_average(self) -> Result<ScorePlanes> {
        if let Some(idx) = self.counts.iter().position(|&c| c == 0) {
            return Err(Error::Contract(format!(
                "pixel {idx} not covered by any window"
            )));
        }
        let hw = self.height * self.width;
        // The per-class count pattern is identical, so counts store one
        // plane's worth.
        let mut data = Vec::with_capacity(self.classes * hw);
        for c in 0..self.classes {
            for p in 0..hw {
                data.push((self.sums[c * hw + p] / self.counts[p] as f64) as f32);
            }
        }
        Ok(ScorePlanes {
            height: self.height,
            width: self.width,
            classes: self.classes,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_when_exact_fit() {
        assert_eq!(window_origins(224, 224, 112), vec![0]);
    }

    #[test]
    fn edge_aligned_enumeration() {
        // 448 wide: ceil((448-224)/112)+1 = 3 windows at 0, 112, 224.
        assert_eq!(window_origins(448, 224, 112), vec![0, 112, 224]);
        // 336: 2 windows, the last clamped to 112.
        assert_eq!(window_origins(336, 224, 112), vec![0, 112]);
        // 400: last window must end at 176+224 = 400.
        assert_eq!(window_origins(400, 224, 112), vec![0, 112, 176]);
    }

    #[test]
    fn window_count_matches_ceil_formula() {
        for len in [224usize, 236, 336, 448, 500, 1024] {
            let got = window_origins(len, 224, 112).len();
            let expect = (len - 224).div_ceil(112) + 1;
            assert_eq!(got, expect, "len {len}");
        }
    }

    #[test]
    fn coverage_counts_sum_to_window_area() {
        let origins_y = window_origins(32, 24, 12);
        let origins_x = window_origins(48, 24, 12);
        let mut canvas = LogitCanvas::new(32, 48, 2);
        let planes = ScorePlanes {
            height: 24,
            width: 24,
            classes: 2,
            data: vec![1.0; 2 * 24 * 24],
        };
        let mut windows = 0;
        for &y in &origins_y {
            for &x in &origins_x {
                canvas.add_window(y, x, &planes).unwrap();
                windows += 1;
            }
        }
        let total: u64 = canvas.counts().iter().map(|&c| c as u64).sum();
        assert_eq!(total, windows as u64 * 24 * 24);
        let avg = canvas.into_average().unwrap();
        assert!(avg.data.iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn uncovered_pixel_is_contract_error() {
        let canvas = LogitCanvas::new(4, 4, 1);
        assert!(matches!(canvas.into_average(), Err(Error::Contract(_))));
    }
}
