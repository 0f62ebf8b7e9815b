//! Discretized surface topographies and their flat facets (Elements).
//!
//! A [`HeightMap`] stores elevations in micrometers on a regular grid with a
//! fixed lateral pitch, also in micrometers. Cell `(i, j)` is column `i`
//! (x direction) and row `j` (y direction); the grid is centered on the
//! origin of its surface frame, so cell centers sit at
//! `((i + 0.5) - width / 2) * pitch`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("grid must be at least 2x2 cells, got {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("pitch must be positive and finite, got {0}")]
    InvalidPitch(f64),
    #[error("height at cell ({i}, {j}) is not finite")]
    NonFinite { i: usize, j: usize },
    #[error("expected {expected} height values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("cell ({i}, {j}) outside {width}x{height} grid")]
    OutOfBounds {
        i: usize,
        j: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("scratch layout: {0}")]
    Layout(String),
    #[error("height grid line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Elevation grid of the inspected surface.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    width: usize,
    height: usize,
    pitch: f64,
    heights: Vec<f64>,
}

impl HeightMap {
    /// Builds a map from row-major heights (`heights[j * width + i]`).
    pub fn new(width: usize, height: usize, pitch: f64, heights: Vec<f64>) -> Result<Self, SurfaceError> {
        check_dims(width, height, pitch)?;
        if heights.len() != width * height {
            return Err(SurfaceError::LengthMismatch {
                expected: width * height,
                got: heights.len(),
            });
        }
        if let Some(k) = heights.iter().position(|h| !h.is_finite()) {
            return Err(SurfaceError::NonFinite {
                i: k % width,
                j: k / width,
            });
        }
        Ok(Self {
            width,
            height,
            pitch,
            heights,
        })
    }

    pub fn flat(width: usize, height: usize, pitch: f64, level: f64) -> Result<Self, SurfaceError> {
        Self::new(width, height, pitch, vec![level; width * height])
    }

    /// Samples `f(i, j)` over every cell.
    pub fn from_fn(
        width: usize,
        height: usize,
        pitch: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, SurfaceError> {
        check_dims(width, height, pitch)?;
        let mut heights = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                heights.push(f(i, j));
            }
        }
        Self::new(width, height, pitch, heights)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Lateral cell size in micrometers.
    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn get(&self, i: usize, j: usize) -> Result<f64, SurfaceError> {
        self.check_index(i, j)?;
        Ok(self.heights[j * self.width + i])
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.width + i]
    }

    /// Cell center in the surface frame, micrometers, without elevation.
    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 + 0.5 - self.width as f64 / 2.0) * self.pitch,
            (j as f64 + 0.5 - self.height as f64 / 2.0) * self.pitch,
        )
    }

    /// Lateral extent (x, y) in micrometers.
    pub fn extent(&self) -> (f64, f64) {
        (self.width as f64 * self.pitch, self.height as f64 * self.pitch)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.heights
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| (lo.min(h), hi.max(h)))
    }

    fn check_index(&self, i: usize, j: usize) -> Result<(), SurfaceError> {
        if i >= self.width || j >= self.height {
            return Err(SurfaceError::OutOfBounds {
                i,
                j,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// Height gradient (dh/dx, dh/dy), dimensionless. Central differences in
    /// the interior, one-sided on the border.
    #[inline]
    fn gradient(&self, i: usize, j: usize) -> (f64, f64) {
        let gx = if i == 0 {
            self.at(1, j) - self.at(0, j)
        } else if i == self.width - 1 {
            self.at(i, j) - self.at(i - 1, j)
        } else {
            0.5 * (self.at(i + 1, j) - self.at(i - 1, j))
        };
        let gy = if j == 0 {
            self.at(i, 1) - self.at(i, 0)
        } else if j == self.height - 1 {
            self.at(i, j) - self.at(i, j - 1)
        } else {
            0.5 * (self.at(i, j + 1) - self.at(i, j - 1))
        };
        (gx / self.pitch, gy / self.pitch)
    }

    /// Unit normal of the facet at `(i, j)` in the surface frame, pointing
    /// to the +z (camera) side.
    pub fn facet_normal(&self, i: usize, j: usize) -> Result<Vector3<f64>, SurfaceError> {
        self.check_index(i, j)?;
        Ok(self.normal_unchecked(i, j))
    }

    #[inline]
    pub(crate) fn normal_unchecked(&self, i: usize, j: usize) -> Vector3<f64> {
        let (gx, gy) = self.gradient(i, j);
        Vector3::new(-gx, -gy, 1.0).normalize()
    }

    /// True facet area in square micrometers: the cell area inflated by the
    /// local slope.
    pub fn facet_area(&self, i: usize, j: usize) -> Result<f64, SurfaceError> {
        self.check_index(i, j)?;
        Ok(self.area_unchecked(i, j))
    }

    #[inline]
    pub(crate) fn area_unchecked(&self, i: usize, j: usize) -> f64 {
        let (gx, gy) = self.gradient(i, j);
        self.pitch * self.pitch * (1.0 + gx * gx + gy * gy).sqrt()
    }

    /// Facet at `(i, j)` in surface-frame micrometers.
    pub fn facet(&self, i: usize, j: usize) -> Result<LocalFacet, SurfaceError> {
        self.check_index(i, j)?;
        Ok(self.facet_unchecked(i, j))
    }

    #[inline]
    pub(crate) fn facet_unchecked(&self, i: usize, j: usize) -> LocalFacet {
        let (x, y) = self.cell_center(i, j);
        let (gx, gy) = self.gradient(i, j);
        let slope = (1.0 + gx * gx + gy * gy).sqrt();
        LocalFacet {
            center: Vector3::new(x, y, self.at(i, j)),
            normal: Vector3::new(-gx, -gy, 1.0) / slope,
            area: self.pitch * self.pitch * slope,
        }
    }

    /// Plain-text grid: `width height pitch_um`, then one row of heights per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {}", self.width, self.height, self.pitch);
        for row in self.heights.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|h| h.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SurfaceError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (n, header) = lines.next().ok_or(SurfaceError::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(SurfaceError::Parse {
                line: n + 1,
                message: "header must be `width height pitch_um`".into(),
            });
        }
        let parse_err = |line: usize, what: &str| SurfaceError::Parse {
            line,
            message: format!("cannot parse {what}"),
        };
        let width: usize = fields[0].parse().map_err(|_| parse_err(n + 1, "width"))?;
        let height: usize = fields[1].parse().map_err(|_| parse_err(n + 1, "height"))?;
        let pitch: f64 = fields[2].parse().map_err(|_| parse_err(n + 1, "pitch"))?;
        let mut heights = Vec::with_capacity(width.saturating_mul(height));
        let mut rows = 0;
        for (n, line) in lines {
            let before = heights.len();
            for tok in line.split_whitespace() {
                heights.push(tok.parse::<f64>().map_err(|_| parse_err(n + 1, "height value"))?);
            }
            if heights.len() - before != width {
                return Err(SurfaceError::Parse {
                    line: n + 1,
                    message: format!("expected {width} values, got {}", heights.len() - before),
                });
            }
            rows += 1;
        }
        if rows != height {
            return Err(SurfaceError::Parse {
                line: rows + 2,
                message: format!("expected {height} rows, got {rows}"),
            });
        }
        Self::new(width, height, pitch, heights)
    }
}

fn check_dims(width: usize, height: usize, pitch: f64) -> Result<(), SurfaceError> {
    if width < 2 || height < 2 {
        return Err(SurfaceError::InvalidDimensions { width, height });
    }
    if !(pitch > 0.0 && pitch.is_finite()) {
        return Err(SurfaceError::InvalidPitch(pitch));
    }
    Ok(())
}

/// A flat Element in surface-frame micrometers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFacet {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// Square micrometers.
    pub area: f64,
}

/// Parameters of the punctate-defect topography.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectParams {
    /// Curvature parameter.
    pub w: f64,
    pub grid: (usize, usize),
    /// Micrometers per cell.
    pub pitch: f64,
}

impl DefectParams {
    pub fn new(w: f64) -> Self {
        Self {
            w,
            grid: (100, 100),
            pitch: 1.0,
        }
    }
}

/// `T = 100 - (w/2) (sin(pi x / 100) + sin(pi y / 100))` sampled at integer
/// cell indices.
pub fn punctate_defect(params: &DefectParams) -> Result<HeightMap, SurfaceError> {
    if !(params.w >= 0.0 && params.w.is_finite()) {
        return Err(SurfaceError::InvalidParameter(format!(
            "curvature w must be finite and >= 0, got {}",
            params.w
        )));
    }
    let (nx, ny) = params.grid;
    let half_w = params.w / 2.0;
    HeightMap::from_fn(nx, ny, params.pitch, |i, j| {
        100.0 - half_w * ((PI * i as f64 / 100.0).sin() + (PI * j as f64 / 100.0).sin())
    })
}

/// Reflectivity (reflection system) or transmissivity (transmission system)
/// plus the refractive index used when refracting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    alpha: f64,
    refractive_index: f64,
}

impl Material {
    pub fn new(alpha: f64, refractive_index: f64) -> Result<Self, SurfaceError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(SurfaceError::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        if !(refractive_index >= 1.0 && refractive_index.is_finite()) {
            return Err(SurfaceError::InvalidParameter(format!(
                "refractive index must be >= 1, got {refractive_index}"
            )));
        }
        Ok(Self {
            alpha,
            refractive_index,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn refractive_index(&self) -> f64 {
        self.refractive_index
    }
}

impl Default for Material {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            refractive_index: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GrooveProfile {
    /// Raised-cosine cross-section: full depth on the centerline, zero slope
    /// at both edges.
    #[default]
    Cosine,
}

/// Parallel scratches running along y, laid out side by side along x and
/// centered on the plate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScratchSpec {
    /// Micrometers, one entry per scratch, left to right.
    pub widths: Vec<f64>,
    pub length: f64,
    pub depth: f64,
    /// Center-to-center distance, micrometers.
    pub spacing: f64,
    pub profile: GrooveProfile,
}

impl ScratchSpec {
    /// Ten scratches 5..50 um wide in 5 um steps, 5 mm long, 2 um deep.
    pub fn glass_plate() -> Self {
        Self {
            widths: (1..=10).map(|k| 5.0 * k as f64).collect(),
            length: 5000.0,
            depth: 2.0,
            spacing: 250.0,
            profile: GrooveProfile::Cosine,
        }
    }

    pub fn count(&self) -> usize {
        self.widths.len()
    }

    /// Groove centerline x positions, micrometers.
    pub fn centers(&self) -> Vec<f64> {
        let n = self.widths.len();
        (0..n)
            .map(|k| (k as f64 - (n as f64 - 1.0) / 2.0) * self.spacing)
            .collect()
    }

    pub fn validate(&self) -> Result<(), SurfaceError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.widths.iter().any(|&w| !positive(w)) {
            return Err(SurfaceError::InvalidParameter("scratch widths must be > 0".into()));
        }
        if !self.widths.is_empty() && !(positive(self.length) && positive(self.depth) && positive(self.spacing)) {
            return Err(SurfaceError::InvalidParameter(
                "scratch length, depth and spacing must be > 0".into(),
            ));
        }
        for (k, pair) in self.widths.windows(2).enumerate() {
            if (pair[0] + pair[1]) / 2.0 > self.spacing {
                return Err(SurfaceError::Layout(format!(
                    "scratches {k} and {} overlap at spacing {} um",
                    k + 1,
                    self.spacing
                )));
            }
        }
        Ok(())
    }

    /// Depth below the base level at `(x, y)` (micrometers, >= 0) and the
    /// index of the groove responsible, if any.
    pub fn depth_at(&self, x: f64, y: f64) -> Option<(usize, f64)> {
        let n = self.widths.len();
        if n == 0 {
            return None;
        }
        let first = -(n as f64 - 1.0) / 2.0 * self.spacing;
        let k = ((x - first) / self.spacing).round();
        if k < 0.0 || k >= n as f64 {
            return None;
        }
        let k = k as usize;
        let width = self.widths[k];
        let dx = x - (first + k as f64 * self.spacing);
        if dx.abs() >= width / 2.0 {
            return None;
        }
        let cross = 0.5 * (1.0 + (2.0 * PI * dx / width).cos());
        let half = self.length / 2.0;
        let ay = y.abs();
        let taper = if ay <= half {
            1.0
        } else if ay < half + width {
            0.5 * (1.0 + (PI * (ay - half) / width).cos())
        } else {
            return None;
        };
        let d = self.depth * cross * taper;
        (d > 0.0).then_some((k, d))
    }
}

/// Flat plate at `base` with the grooves of `spec` cut into it.
pub fn scratch_plate(
    spec: &ScratchSpec,
    width: usize,
    height: usize,
    pitch: f64,
    base: f64,
) -> Result<HeightMap, SurfaceError> {
    check_dims(width, height, pitch)?;
    spec.validate()?;
    if let (Some(&first), Some(&last)) = (spec.widths.first(), spec.widths.last()) {
        let centers = spec.centers();
        let left = centers[0] - first / 2.0;
        let right = centers[centers.len() - 1] + last / 2.0;
        let widest = spec.widths.iter().cloned().fold(0.0, f64::max);
        let (ex, ey) = (width as f64 * pitch, height as f64 * pitch);
        if left < -ex / 2.0 || right > ex / 2.0 {
            return Err(SurfaceError::Layout(format!(
                "grooves span [{left}, {right}] um but the plate is {ex} um wide"
            )));
        }
        if spec.length + 2.0 * widest > ey {
            return Err(SurfaceError::Layout(format!(
                "grooves with tapers need {} um but the plate is {ey} um long",
                spec.length + 2.0 * widest
            )));
        }
    }
    let x_of = |i: usize| (i as f64 + 0.5 - width as f64 / 2.0) * pitch;
    let y_of = |j: usize| (j as f64 + 0.5 - height as f64 / 2.0) * pitch;
    HeightMap::from_fn(width, height, pitch, |i, j| {
        base - spec.depth_at(x_of(i), y_of(j)).map_or(0.0, |(_, d)| d)
    })
}
