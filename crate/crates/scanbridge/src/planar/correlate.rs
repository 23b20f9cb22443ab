//! Phase correlation: Fourier-domain translation estimation from the
//! normalized cross-power spectrum.
//!
//! The integer-shift estimator is mathematically exact for circular shifts:
//! the cross-power spectrum of an image and its shifted copy is a pure phase
//! ramp whose inverse transform is a delta at the shift. No window is
//! applied here — callers that correlate real (non-circular) content window
//! the images first.

use super::image::ProjectionImage;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Row-column 2-D FFT with cached plans; create once per image size.
pub struct Fft2d {
    width: usize,
    height: usize,
    fwd_w: Arc<dyn Fft<f64>>,
    fwd_h: Arc<dyn Fft<f64>>,
    inv_w: Arc<dyn Fft<f64>>,
    inv_h: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            fwd_w: planner.plan_fft_forward(width),
            fwd_h: planner.plan_fft_forward(height),
            inv_w: planner.plan_fft_inverse(width),
            inv_h: planner.plan_fft_inverse(height),
        }
    }

    pub fn forward(&self, real: &[f64]) -> Vec<Complex<f64>> {
        debug_assert_eq!(real.len(), self.width * self.height);
        let mut data: Vec<Complex<f64>> = real.iter().map(|v| Complex::new(*v, 0.0)).collect();
        self.pass(&mut data, &self.fwd_w, &self.fwd_h);
        data
    }

    pub fn inverse(&self, mut data: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        self.pass(&mut data, &self.inv_w, &self.inv_h);
        data
    }

    fn pass(&self, data: &mut [Complex<f64>], row_fft: &Arc<dyn Fft<f64>>, col_fft: &Arc<dyn Fft<f64>>) {
        for row in 0..self.height {
            row_fft.process(&mut data[row * self.width..(row + 1) * self.width]);
        }
        let mut column = vec![Complex::new(0.0, 0.0); self.height];
        for col in 0..self.width {
            for row in 0..self.height {
                column[row] = data[row * self.width + col];
            }
            col_fft.process(&mut column);
            for row in 0..self.height {
                data[row * self.width + col] = column[row];
            }
        }
    }
}

/// Normalized cross-power spectrum `F(b)·conj(F(a)) / |·|`, bins with
/// negligible magnitude zeroed. Returns the spectrum and the count of
/// contributing (nonzero) bins, which is the coherent-sum ceiling used to
/// normalize the peak.
pub fn cross_power(fa: &[Complex<f64>], fb: &[Complex<f64>]) -> (Vec<Complex<f64>>, usize) {
    let mut kept = 0usize;
    let spec = fa
        .iter()
        .zip(fb.iter())
        .map(|(a, b)| {
            let g = b * a.conj();
            let mag = g.norm();
            if mag > 1e-12 {
                kept += 1;
                g / mag
            } else {
                Complex::new(0.0, 0.0)
            }
        })
        .collect();
    (spec, kept)
}

/// Zeroes all bins above `cutoff` cycles/pixel (radial), returning how many
/// nonzero bins remain.
///
/// Resampling an image (the rotation candidates) perturbs mostly the
/// high-frequency phases; whitened correlation would weight that noise as
/// heavily as the real structure. Cutting the band identically for every
/// candidate makes their peaks comparable.
pub fn apply_lowpass(spec: &mut [Complex<f64>], width: usize, height: usize, cutoff: f64) -> usize {
    let mut kept = 0usize;
    for row in 0..height {
        let fy = {
            let k = row.min(height - row) as f64;
            k / height as f64
        };
        for col in 0..width {
            let fx = {
                let k = col.min(width - col) as f64;
                k / width as f64
            };
            let idx = row * width + col;
            if (fx * fx + fy * fy).sqrt() > cutoff {
                spec[idx] = Complex::new(0.0, 0.0);
            } else if spec[idx].norm_sqr() > 0.0 {
                kept += 1;
            }
        }
    }
    kept
}

/// Correlation surface peak: integer location (row-major first wins on exact
/// ties, hence deterministic) and the normalized peak value.
pub struct CorrelationPeak {
    pub dx: i32,
    pub dy: i32,
    pub peak: f64,
    surface: Vec<f64>,
    width: usize,
    height: usize,
    peak_col: usize,
    peak_row: usize,
}

impl CorrelationPeak {
    /// Parabolic sub-pixel refinement around the integer peak, using the
    /// wrap-around neighbors of the correlation surface.
    pub fn subpixel(&self) -> (f64, f64) {
        let wrap = |x: isize, n: usize| -> usize { x.rem_euclid(n as isize) as usize };
        let val = |c: isize, r: isize| -> f64 {
            self.surface[wrap(r, self.height) * self.width + wrap(c, self.width)]
        };
        let (pc, pr) = (self.peak_col as isize, self.peak_row as isize);
        let center = val(pc, pr);
        let left = val(pc - 1, pr);
        let right = val(pc + 1, pr);
        let up = val(pc, pr - 1);
        let down = val(pc, pr + 1);
        let denom_x = 2.0 * (left + right - 2.0 * center);
        let denom_y = 2.0 * (up + down - 2.0 * center);
        let off_x = if denom_x.abs() > 1e-12 { ((left - right) / denom_x).clamp(-0.5, 0.5) } else { 0.0 };
        let off_y = if denom_y.abs() > 1e-12 { ((up - down) / denom_y).clamp(-0.5, 0.5) } else { 0.0 };
        (self.dx as f64 + off_x, self.dy as f64 + off_y)
    }
}

/// Runs the inverse transform of a cross-power spectrum and locates the peak,
/// unwrapping it into the signed range (negative shifts wrap around).
/// `coherent_bins` is the number of nonzero spectrum bins: a perfect match
/// sums that many unit phasors, so it normalizes the peak to 1.
pub fn correlation_peak(
    fft: &Fft2d,
    spectrum: Vec<Complex<f64>>,
    width: usize,
    height: usize,
    coherent_bins: usize,
) -> CorrelationPeak {
    let inv = fft.inverse(spectrum);
    let norm = if coherent_bins > 0 { 1.0 / coherent_bins as f64 } else { 0.0 };
    let surface: Vec<f64> = inv.iter().map(|c| c.re * norm).collect();
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0usize;
    for (i, v) in surface.iter().enumerate() {
        if *v > best {
            best = *v;
            best_idx = i;
        }
    }
    let peak_col = best_idx % width;
    let peak_row = best_idx / width;
    let dx = if peak_col > width / 2 { peak_col as i64 - width as i64 } else { peak_col as i64 };
    let dy = if peak_row > height / 2 { peak_row as i64 - height as i64 } else { peak_row as i64 };
    CorrelationPeak {
        dx: dx as i32,
        dy: dy as i32,
        peak: best.clamp(0.0, 1.0),
        surface,
        width,
        height,
        peak_col,
        peak_row,
    }
}

/// Full integer-pixel phase correlation of two equal-size images.
///
/// Returns `(dx, dy, peak)`: the circular pixel shift taking `a` to `b`
/// (column shift positive rightward, row shift positive downward) and the
/// normalized correlation peak in `[0, 1]`.
pub fn phase_correlate_raw(a: &ProjectionImage, b: &ProjectionImage) -> (i32, i32, f64) {
    debug_assert_eq!(a.width(), b.width());
    debug_assert_eq!(a.height(), b.height());
    let fft = Fft2d::new(a.width(), a.height());
    let fa = fft.forward(a.values());
    let fb = fft.forward(b.values());
    let (spec, kept) = cross_power(&fa, &fb);
    let peak = correlation_peak(&fft, spec, a.width(), a.height(), kept);
    (peak.dx, peak.dy, peak.peak)
}

/// Circular shift of image content by `(sx, sy)` pixels; the reference
/// operation phase correlation is specified against.
#[cfg(test)]
pub(crate) fn circular_shift(image: &ProjectionImage, sx: i32, sy: i32) -> ProjectionImage {
    let (w, h) = (image.width() as i32, image.height() as i32);
    let mut out = ProjectionImage::new_zero(image.canvas);
    for row in 0..h {
        for col in 0..w {
            let src_c = (col - sx).rem_euclid(w);
            let src_r = (row - sy).rem_euclid(h);
            let v = image.value(src_c as usize, src_r as usize);
            out.values_mut()[(row * w + col) as usize] = v;
        }
    }
    out
}
