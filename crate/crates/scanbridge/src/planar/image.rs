//! Down-projection of clouds to grayscale grids, plus the image-space
//! operations (center rotation, windowing, PGM export) the matcher needs.

use crate::geometry::PointCloud;
use std::fmt::Write as _;

/// How a pixel accumulates the points that land on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueMode {
    /// Point count, clamped at the canvas saturation cap. Dense structures
    /// (walls, pillars) become bright zones.
    Count,
    /// Maximum reflectance of the contributing points.
    MaxIntensity,
}

/// Geometry and accumulation rules of the projection grid.
///
/// Size and resolution matter: points that do not fit the canvas are
/// dropped, and the pixel pitch bounds the translation precision the
/// matcher can reach.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionCanvas {
    pub width: usize,
    pub height: usize,
    /// Meters per pixel.
    pub resolution: f64,
    pub value_mode: ValueMode,
    /// Count cap per pixel (count mode only).
    pub saturation: u32,
}

impl Default for ProjectionCanvas {
    fn default() -> Self {
        Self { width: 256, height: 256, resolution: 0.5, value_mode: ValueMode::Count, saturation: 16 }
    }
}

impl ProjectionCanvas {
    pub fn validate(&self) -> Result<(), String> {
        if self.width < 32 || self.height < 32 || self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(format!("canvas must be even and >= 32 px, got {}x{}", self.width, self.height));
        }
        if self.resolution <= 0.0 {
            return Err("resolution must be positive".into());
        }
        Ok(())
    }

    /// Half-span of the canvas in meters (x direction).
    pub fn span_x(&self) -> f64 {
        self.width as f64 / 2.0 * self.resolution
    }
}

/// A projected cloud: row-major grid of non-negative values.
#[derive(Debug, Clone)]
pub struct ProjectionImage {
    values: Vec<f64>,
    pub canvas: ProjectionCanvas,
    /// Points that actually landed on the grid.
    pub point_count_used: usize,
}

impl ProjectionImage {
    pub fn new_zero(canvas: ProjectionCanvas) -> Self {
        Self { values: vec![0.0; canvas.width * canvas.height], canvas, point_count_used: 0 }
    }

    pub fn width(&self) -> usize {
        self.canvas.width
    }

    pub fn height(&self) -> usize {
        self.canvas.height
    }

    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.canvas.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// ASCII PGM (P2) export for debugging and plots. Count mode writes raw
    /// counts with `maxval = saturation`; intensity mode scales to 255.
    pub fn to_pgm(&self) -> String {
        let (w, h) = (self.canvas.width, self.canvas.height);
        let maxval: u32 = match self.canvas.value_mode {
            ValueMode::Count => self.canvas.saturation,
            ValueMode::MaxIntensity => 255,
        };
        let mut out = String::with_capacity(w * h * 4 + 32);
        let _ = writeln!(out, "P2");
        let _ = writeln!(out, "{w} {h}");
        let _ = writeln!(out, "{maxval}");
        for row in 0..h {
            let mut line = String::with_capacity(w * 4);
            for col in 0..w {
                if col > 0 {
                    line.push(' ');
                }
                let v = self.value(col, row);
                let scaled: u32 = match self.canvas.value_mode {
                    ValueMode::Count => (v.round() as u32).min(maxval),
                    ValueMode::MaxIntensity => ((v * 255.0).round() as u32).min(255),
                };
                let _ = write!(line, "{scaled}");
            }
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

/// Projects every point onto the x-y plane: pixel column
/// `cx + round(x / resolution)`, row `cy − round(y / resolution)`, with the
/// canvas center at `(width/2, height/2)`. Points mapping outside the grid
/// are dropped; z is ignored.
pub fn project_to_image(cloud: &PointCloud, canvas: &ProjectionCanvas) -> ProjectionImage {
    debug_assert!(canvas.validate().is_ok());
    let mut image = ProjectionImage::new_zero(*canvas);
    let (w, h) = (canvas.width as i64, canvas.height as i64);
    let (cx, cy) = (w / 2, h / 2);
    let mut used = 0usize;
    for p in &cloud.points {
        let col = cx + (p.x / canvas.resolution).round() as i64;
        let row = cy - (p.y / canvas.resolution).round() as i64;
        if col < 0 || col >= w || row < 0 || row >= h {
            continue;
        }
        used += 1;
        let idx = (row * w + col) as usize;
        match canvas.value_mode {
            ValueMode::Count => {
                let v = &mut image.values[idx];
                if *v < canvas.saturation as f64 {
                    *v += 1.0;
                }
            }
            ValueMode::MaxIntensity => {
                let v = &mut image.values[idx];
                if p.intensity > *v {
                    *v = p.intensity;
                }
            }
        }
    }
    image.point_count_used = used;
    image
}

/// Rotates image content about the canvas center by `angle`, where a
/// positive angle matches a positive world-frame yaw of the projected cloud.
/// Bilinear resampling, zero fill outside; `angle == 0` is an exact copy.
pub fn rotate_about_center(image: &ProjectionImage, angle: f64) -> ProjectionImage {
    if angle == 0.0 {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    let (cx, cy) = ((w / 2) as f64, (h / 2) as f64);
    let (sin, cos) = angle.sin_cos();
    let mut out = ProjectionImage::new_zero(image.canvas);
    out.point_count_used = image.point_count_used;
    for row in 0..h {
        let dv = row as f64 - cy;
        for col in 0..w {
            let du = col as f64 - cx;
            // Inverse of the pixel-space map induced by a world yaw: world
            // y points up, rows point down.
            let src_u = cx + du * cos - dv * sin;
            let src_v = cy + du * sin + dv * cos;
            let v = bilinear(image, src_u, src_v);
            if v != 0.0 {
                out.values[row * w + col] = v;
            }
        }
    }
    out
}

fn bilinear(image: &ProjectionImage, u: f64, v: f64) -> f64 {
    let (w, h) = (image.width() as isize, image.height() as isize);
    let u0 = u.floor();
    let v0 = v.floor();
    let fu = u - u0;
    let fv = v - v0;
    let (iu, iv) = (u0 as isize, v0 as isize);
    let sample = |x: isize, y: isize| -> f64 {
        if x < 0 || x >= w || y < 0 || y >= h {
            0.0
        } else {
            image.values[(y * w + x) as usize]
        }
    };
    let top = sample(iu, iv) * (1.0 - fu) + sample(iu + 1, iv) * fu;
    let bottom = sample(iu, iv + 1) * (1.0 - fu) + sample(iu + 1, iv + 1) * fu;
    top * (1.0 - fv) + bottom * fv
}

/// Separable binomial 3x3 smoothing ([1,2,1]/4 per axis, edge-clamped).
///
/// Projected walls are one-pixel-thin lines; correlating them raw makes the
/// peak hypersensitive to sub-pixel quantization and favors whichever
/// rotation candidate happened to get resampling blur. Smoothing both images
/// identically removes that asymmetry. Integer-shift recovery is unaffected:
/// convolution commutes with shifts.
pub fn smooth_binomial(image: &ProjectionImage) -> ProjectionImage {
    let (w, h) = (image.width() as isize, image.height() as isize);
    let mut tmp = vec![0.0f64; (w * h) as usize];
    let at = |c: isize, r: isize| -> f64 {
        let c = c.clamp(0, w - 1);
        let r = r.clamp(0, h - 1);
        image.values()[(r * w + c) as usize]
    };
    for r in 0..h {
        for c in 0..w {
            tmp[(r * w + c) as usize] = 0.25 * (at(c - 1, r) + 2.0 * at(c, r) + at(c + 1, r));
        }
    }
    let mut out = image.clone();
    let tmp_at = |c: isize, r: isize| -> f64 {
        let c = c.clamp(0, w - 1);
        let r = r.clamp(0, h - 1);
        tmp[(r * w + c) as usize]
    };
    for r in 0..h {
        for c in 0..w {
            out.values_mut()[(r * w + c) as usize] =
                0.25 * (tmp_at(c, r - 1) + 2.0 * tmp_at(c, r) + tmp_at(c, r + 1));
        }
    }
    out
}

/// Separable raised-cosine (Hann) window; suppresses the wrap-around
/// artifacts of canal walls touching the canvas edge.
pub fn apply_hann_window(image: &ProjectionImage) -> ProjectionImage {
    let (w, h) = (image.width(), image.height());
    let wx: Vec<f64> = (0..w).map(|i| hann(i, w)).collect();
    let wy: Vec<f64> = (0..h).map(|i| hann(i, h)).collect();
    let mut out = image.clone();
    for row in 0..h {
        for col in 0..w {
            out.values[row * w + col] *= wx[col] * wy[row];
        }
    }
    out
}

fn hann(i: usize, n: usize) -> f64 {
    0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, PointCloud};

    fn canvas_200() -> ProjectionCanvas {
        ProjectionCanvas { width: 200, height: 200, ..Default::default() }
    }

    #[test]
    fn projection_pixel_arithmetic() {
        let cloud = PointCloud::new(vec![Point3::new(10.0, 5.0, 1.0, 0.5)], 0.0, "");
        let image = project_to_image(&cloud, &canvas_200());
        // col = 100 + round(10/0.5) = 120, row = 100 - round(5/0.5) = 90
        assert_eq!(image.value(120, 90), 1.0);
        assert_eq!(image.point_count_used, 1);
    }

    #[test]
    fn out_of_canvas_points_are_dropped() {
        let cloud = PointCloud::new(vec![Point3::new(60.0, 0.0, 0.0, 0.5)], 0.0, "");
        let image = project_to_image(&cloud, &canvas_200());
        assert_eq!(image.point_count_used, 0);
        assert!(image.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn count_mode_clamps_at_saturation() {
        let points = vec![Point3::new(1.0, 1.0, 0.0, 0.5); 100];
        let cloud = PointCloud::new(points, 0.0, "");
        let canvas = ProjectionCanvas { saturation: 32, ..canvas_200() };
        let image = project_to_image(&cloud, &canvas);
        let max = image.values().iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 32.0);
    }

    #[test]
    fn max_intensity_mode_keeps_brightest() {
        let points = vec![
            Point3::new(1.0, 1.0, 0.0, 0.25),
            Point3::new(1.0, 1.0, 5.0, 0.75),
        ];
        let cloud = PointCloud::new(points, 0.0, "");
        let canvas = ProjectionCanvas { value_mode: ValueMode::MaxIntensity, ..canvas_200() };
        let image = project_to_image(&cloud, &canvas);
        let max = image.values().iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 0.75);
    }

    #[test]
    fn pgm_export_is_wellformed() {
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0, 0.5)], 0.0, "");
        let canvas = ProjectionCanvas { width: 32, height: 32, saturation: 4, ..Default::default() };
        let image = project_to_image(&cloud, &canvas);
        let pgm = image.to_pgm();
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("32 32"));
        assert_eq!(lines.next(), Some("4"));
        assert_eq!(pgm.lines().count(), 3 + 32);
        // Deterministic bytes.
        assert_eq!(pgm, image.to_pgm());
    }

    #[test]
    fn zero_angle_rotation_is_exact_copy() {
        let cloud = PointCloud::new(vec![Point3::new(3.0, 4.0, 0.0, 0.5)], 0.0, "");
        let image = project_to_image(&cloud, &canvas_200());
        let rotated = rotate_about_center(&image, 0.0);
        assert_eq!(image.values(), rotated.values());
    }

    #[test]
    fn rotation_moves_content_like_world_yaw() {
        // A point on the +x axis rotated by +90° should land on +y, i.e.
        // above the center in image rows.
        let cloud = PointCloud::new(vec![Point3::new(20.0, 0.0, 0.0, 0.5)], 0.0, "");
        let image = project_to_image(&cloud, &canvas_200());
        let rotated = rotate_about_center(&image, std::f64::consts::FRAC_PI_2);
        // Original bright pixel: (140, 100). After +90° world yaw the point
        // (20, 0) maps to (0, 20): col 100, row 60.
        assert!(rotated.value(100, 60) > 0.9, "value {}", rotated.value(100, 60));
    }
}
