//! Per-pixel luminous flux from Element traces, flux images and N-step
//! modulation.
//!
//! The flux a camera pixel collects is
//! `alpha * (sum_screen s L A_s cos(t1) cos(t2) / r^2 + C * sum_all s)`,
//! where the first sum runs over Elements whose reverse ray lands on the
//! screen and `C` is the ambient illuminance reaching every Element.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::io::write_float_grid;
use crate::optics::{trace_element, ElementTrace, Facet, SystemGeometry};
use crate::patterns::{PatternError, ScreenPattern};
use crate::surface::{HeightMap, Material};

#[derive(Debug, Error)]
pub enum FluxError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("surface does not cover the footprint of camera pixel ({}, {})", .0.0, .0.1)]
    Coverage((usize, usize)),
    #[error("modulation needs at least 3 phase steps, got {0}")]
    ModulationUndefined(usize),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The Elements imaged by one camera pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFootprint {
    pixel: (usize, usize),
    elements: Vec<Facet>,
}

impl PixelFootprint {
    pub fn new(pixel: (usize, usize), elements: Vec<Facet>) -> Result<Self, FluxError> {
        if elements.is_empty() {
            return Err(FluxError::Config(format!("footprint of pixel {pixel:?} has no Elements")));
        }
        if let Some(e) = elements.iter().find(|e| !(e.area > 0.0 && e.area.is_finite())) {
            return Err(FluxError::Config(format!("Element area must be > 0, got {}", e.area)));
        }
        Ok(Self { pixel, elements })
    }

    /// Treats every cell of `map` as imaged by a single pixel, the one
    /// seeing the surface origin.
    pub fn whole_map(geom: &SystemGeometry, map: &HeightMap) -> Result<Self, FluxError> {
        let pixel = geom
            .camera
            .project(&geom.surface.origin)
            .map(|(x, y)| (x.floor().max(0.0) as usize, y.floor().max(0.0) as usize))
            .ok_or_else(|| FluxError::Config("camera does not see the surface origin".into()))?;
        let elements = (0..map.height())
            .flat_map(|j| (0..map.width()).map(move |i| (i, j)))
            .map(|(i, j)| Facet::from_map(geom, map, i, j))
            .collect();
        Self::new(pixel, elements)
    }

    pub fn pixel(&self) -> (usize, usize) {
        self.pixel
    }

    pub fn elements(&self) -> &[Facet] {
        &self.elements
    }

    pub fn total_area(&self) -> f64 {
        self.elements.iter().map(|e| e.area).sum()
    }
}

/// Screen contribution of one Element: the screen pixel it sees and its
/// weight `s A_s cos(t1) cos(t2) / r^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Contribution {
    screen_index: usize,
    weight: f64,
}

#[inline]
fn contribution(geom: &SystemGeometry, facet: &Facet, material: &Material) -> Option<Contribution> {
    match trace_element(geom, facet, material) {
        ElementTrace::Screen(hit) => Some(Contribution {
            screen_index: hit.pixel.1 * geom.screen.width_px + hit.pixel.0,
            weight: facet.area * hit.coupling(geom.source_area),
        }),
        ElementTrace::Environment(_) => None,
    }
}

/// Traces of a footprint, reusable across patterns.
#[derive(Debug, Clone)]
pub struct FootprintTrace {
    contributions: Vec<Contribution>,
    total_area: f64,
    screen_elements: usize,
}

impl FootprintTrace {
    pub fn new(geom: &SystemGeometry, footprint: &PixelFootprint, material: &Material) -> Self {
        let contributions: Vec<Contribution> = footprint
            .elements
            .par_iter()
            .filter_map(|f| contribution(geom, f, material))
            .collect();
        Self {
            screen_elements: contributions.len(),
            contributions,
            total_area: footprint.total_area(),
        }
    }

    /// Number of Elements lit by the screen.
    pub fn screen_elements(&self) -> usize {
        self.screen_elements
    }

    pub fn flux(&self, geom: &SystemGeometry, material: &Material, pattern: &ScreenPattern) -> Result<f64, FluxError> {
        pattern.check_screen(&geom.screen)?;
        let lum = pattern.luminance();
        let screen: f64 = self.contributions.iter().map(|c| c.weight * lum[c.screen_index]).sum();
        Ok(material.alpha() * (screen + geom.env_illuminance * self.total_area))
    }
}

/// Flux collected by one camera pixel under `pattern`.
pub fn pixel_flux(
    geom: &SystemGeometry,
    footprint: &PixelFootprint,
    material: &Material,
    pattern: &ScreenPattern,
) -> Result<f64, FluxError> {
    pattern.check_screen(&geom.screen)?;
    FootprintTrace::new(geom, footprint, material).flux(geom, material, pattern)
}

/// Rectangle of camera pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    fn validate(&self, geom: &SystemGeometry) -> Result<(), FluxError> {
        let cam = &geom.camera;
        if self.width == 0 || self.height == 0 || self.x0 + self.width > cam.width_px || self.y0 + self.height > cam.height_px {
            return Err(FluxError::Config(format!(
                "roi {self:?} is empty or exceeds the {}x{} sensor",
                cam.width_px, cam.height_px
            )));
        }
        Ok(())
    }

    /// Smallest roi containing every camera pixel that sees a cell of `map`,
    /// shrunk by one pixel on each side so edge pixels are fully covered.
    pub fn covering(geom: &SystemGeometry, map: &HeightMap) -> Result<Roi, FluxError> {
        let (ex, ey) = map.extent();
        let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
            let p = geom.surface_point(sx * ex / 2.0, sy * ey / 2.0, 0.0);
            let (x, y) = geom
                .camera
                .project(&p)
                .ok_or_else(|| FluxError::Config("surface corner is behind the camera".into()))?;
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
        let cam = &geom.camera;
        let x0 = (x_lo.ceil().max(0.0) as usize) + 1;
        let y0 = (y_lo.ceil().max(0.0) as usize) + 1;
        let x1 = (x_hi.floor().min(cam.width_px as f64) as usize).saturating_sub(1);
        let y1 = (y_hi.floor().min(cam.height_px as f64) as usize).saturating_sub(1);
        if x1 <= x0 || y1 <= y0 {
            return Err(FluxError::Config("surface images to less than one full camera pixel".into()));
        }
        Ok(Roi {
            x0,
            y0,
            width: x1 - x0,
            height: y1 - y0,
        })
    }
}

/// Camera-pixel grid of flux values.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxImage {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
    /// Geometry fingerprint and pattern label.
    pub provenance: String,
}

impl FluxImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>, provenance: String) -> Result<Self, FluxError> {
        if values.len() != width * height || width == 0 || height == 0 {
            return Err(FluxError::Config(format!("{} values for a {width}x{height} image", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(FluxError::Config(format!("flux {v} is negative or non-finite")));
        }
        Ok(Self {
            width,
            height,
            values,
            provenance,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    pub fn write(&self, path: &Path) -> Result<PathBuf, FluxError> {
        write_float_grid(
            path,
            self.width,
            self.height,
            &[("provenance", self.provenance.clone())],
            &self.values,
        )?;
        Ok(path.to_path_buf())
    }
}

/// Cell rows per work unit. Partial sums are combined in chunk order, so the
/// result does not depend on the thread count.
const CHUNK_ROWS: usize = 16;
/// Chunks traced in parallel before their partial sums are folded.
const CHUNKS_PER_BATCH: usize = 64;

struct CellContribution {
    roi_index: u32,
    area: f64,
    screen: Option<Contribution>,
}

/// Renders one flux image per pattern, tracing every cell of `surface`
/// once. Each cell belongs to the camera pixel its center projects into.
pub fn render_many(
    geom: &SystemGeometry,
    surface: &HeightMap,
    material: &Material,
    patterns: &[&ScreenPattern],
    roi: Roi,
) -> Result<Vec<FluxImage>, FluxError> {
    roi.validate(geom)?;
    for p in patterns {
        p.check_screen(&geom.screen)?;
    }
    check_coverage(geom, surface, roi)?;

    let n_pix = roi.width * roi.height;
    let mut screen_sums = vec![vec![0.0f64; n_pix]; patterns.len()];
    let mut areas = vec![0.0f64; n_pix];
    let mut counts = vec![0u32; n_pix];

    let chunks: Vec<(usize, usize)> = (0..surface.height())
        .step_by(CHUNK_ROWS)
        .map(|j0| (j0, (j0 + CHUNK_ROWS).min(surface.height())))
        .collect();
    for batch in chunks.chunks(CHUNKS_PER_BATCH) {
        let partials: Vec<Vec<CellContribution>> = batch
            .par_iter()
            .map(|&(j0, j1)| trace_rows(geom, surface, material, roi, j0, j1))
            .collect();
        for cell in partials.iter().flatten() {
            let k = cell.roi_index as usize;
            areas[k] += cell.area;
            counts[k] += 1;
            if let Some(c) = cell.screen {
                for (sums, p) in screen_sums.iter_mut().zip(patterns) {
                    sums[k] += c.weight * p.luminance()[c.screen_index];
                }
            }
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(FluxError::Coverage((roi.x0 + k % roi.width, roi.y0 + k / roi.width)));
    }

    let alpha = material.alpha();
    let c = geom.env_illuminance;
    let fp = geom.fingerprint();
    screen_sums
        .into_iter()
        .zip(patterns)
        .map(|(sums, p)| {
            let values = sums.iter().zip(&areas).map(|(s, a)| alpha * (s + c * a)).collect();
            FluxImage::new(roi.width, roi.height, values, format!("geometry={fp} pattern={}", p.label()))
        })
        .collect()
}

/// Single-pattern [`render_many`].
pub fn render_image(
    geom: &SystemGeometry,
    surface: &HeightMap,
    material: &Material,
    pattern: &ScreenPattern,
    roi: Roi,
) -> Result<FluxImage, FluxError> {
    Ok(render_many(geom, surface, material, &[pattern], roi)?.remove(0))
}

fn trace_rows(
    geom: &SystemGeometry,
    surface: &HeightMap,
    material: &Material,
    roi: Roi,
    j0: usize,
    j1: usize,
) -> Vec<CellContribution> {
    let mut out = Vec::new();
    for j in j0..j1 {
        for i in 0..surface.width() {
            let facet = Facet::from_map(geom, surface, i, j);
            let Some((x, y)) = geom.camera.project(&facet.center) else {
                continue;
            };
            let (px, py) = (x.floor(), y.floor());
            if px < roi.x0 as f64 || py < roi.y0 as f64 {
                continue;
            }
            let (px, py) = (px as usize - roi.x0, py as usize - roi.y0);
            if px >= roi.width || py >= roi.height {
                continue;
            }
            out.push(CellContribution {
                roi_index: (py * roi.width + px) as u32,
                area: facet.area,
                screen: contribution(geom, &facet, material),
            });
        }
    }
    out
}

/// Every roi corner must back-project inside the map extent.
fn check_coverage(geom: &SystemGeometry, surface: &HeightMap, roi: Roi) -> Result<(), FluxError> {
    let (ex, ey) = surface.extent();
    let corners = [
        (roi.x0, roi.y0),
        (roi.x0 + roi.width, roi.y0),
        (roi.x0, roi.y0 + roi.height),
        (roi.x0 + roi.width, roi.y0 + roi.height),
    ];
    for (cx, cy) in corners {
        let dir = geom.camera.ray_through(cx as f64, cy as f64);
        let inside = geom
            .surface_hit(&geom.camera.pinhole, &dir)
            .is_some_and(|(x, y)| x.abs() <= ex / 2.0 + 1e-9 && y.abs() <= ey / 2.0 + 1e-9);
        if !inside {
            let px = (cx.min(roi.x0 + roi.width - 1), cy.min(roi.y0 + roi.height - 1));
            return Err(FluxError::Coverage(px));
        }
    }
    Ok(())
}

/// Camera-pixel grid of N-step modulation values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationImage {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
    pub steps: usize,
    pub period: f64,
}

impl ModulationImage {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    pub fn write(&self, path: &Path) -> Result<PathBuf, FluxError> {
        write_float_grid(
            path,
            self.width,
            self.height,
            &[("steps", self.steps.to_string()), ("period", self.period.to_string())],
            &self.values,
        )?;
        Ok(path.to_path_buf())
    }
}

/// `(2/N) sqrt((sum phi_k sin d_k)^2 + (sum phi_k cos d_k)^2)` for one pixel.
pub fn modulation_value(samples: &[f64], phase_steps: &[f64]) -> Result<f64, FluxError> {
    if samples.len() < 3 || samples.len() != phase_steps.len() {
        return Err(FluxError::ModulationUndefined(samples.len()));
    }
    let (mut s, mut c) = (0.0, 0.0);
    for (phi, d) in samples.iter().zip(phase_steps) {
        let (sin, cos) = d.sin_cos();
        s += phi * sin;
        c += phi * cos;
    }
    Ok(2.0 / samples.len() as f64 * s.hypot(c))
}

/// Pixel-wise modulation of a frame stack; `period` is recorded only.
pub fn modulation(frames: &[FluxImage], phase_steps: &[f64], period: f64) -> Result<ModulationImage, FluxError> {
    let n = frames.len();
    if n < 3 || phase_steps.len() != n {
        return Err(FluxError::ModulationUndefined(n.min(phase_steps.len())));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    if frames.iter().any(|f| f.width != w || f.height != h) {
        return Err(FluxError::Config("modulation frames differ in size".into()));
    }
    let trig: Vec<(f64, f64)> = phase_steps.iter().map(|d| d.sin_cos()).collect();
    let values = (0..w * h)
        .map(|k| {
            let (mut s, mut c) = (0.0, 0.0);
            for (f, (sin, cos)) in frames.iter().zip(&trig) {
                s += f.values[k] * sin;
                c += f.values[k] * cos;
            }
            2.0 / n as f64 * s.hypot(c)
        })
        .collect();
    Ok(ModulationImage {
        width: w,
        height: h,
        values,
        steps: n,
        period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{DeskLayout, Mode, Vec3};
    use crate::patterns::{binary_type1, binary_type2, core_region, uniform, ScreenDims, ScreenMask};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn geom(mode: Mode, c: f64) -> SystemGeometry {
        DeskLayout::default().geometry(mode).unwrap().with_env_illuminance(c).unwrap()
    }

    fn flat_footprint(g: &SystemGeometry, n: usize, pitch: f64) -> PixelFootprint {
        PixelFootprint::whole_map(g, &HeightMap::flat(n, n, pitch, 0.0).unwrap()).unwrap()
    }

    #[test]
    fn environment_only_and_dark_examples() {
        let g = geom(Mode::Reflection, 0.3);
        let m = Material::new(0.8, 1.5).unwrap();
        // Facets facing away from the camera only receive ambient light.
        let away: Vec<Facet> = (0..5)
            .map(|k| Facet {
                center: Vec3::new(k as f64, 0.0, 0.0),
                normal: -Vec3::z(),
                area: 1.0 + k as f64,
            })
            .collect();
        let fp = PixelFootprint::new((0, 0), away).unwrap();
        let u = uniform(ScreenDims::default(), 5.0).unwrap();
        let phi = pixel_flux(&g, &fp, &m, &u).unwrap();
        assert!((phi - 0.8 * 0.3 * 15.0).abs() < 1e-12);

        let dark = uniform(ScreenDims::default(), 0.0).unwrap();
        let g0 = geom(Mode::Transmission, 0.0);
        assert_eq!(pixel_flux(&g0, &flat_footprint(&g0, 8, 1.0), &m, &dark).unwrap(), 0.0);
        assert!(PixelFootprint::new((0, 0), vec![]).is_err());
    }

    #[test]
    fn pattern_size_must_match_screen() {
        let g = geom(Mode::Reflection, 0.0);
        let small = uniform(ScreenDims { width: 10, height: 10, pixel_pitch: 0.272 }, 1.0).unwrap();
        assert!(matches!(
            pixel_flux(&g, &flat_footprint(&g, 4, 1.0), &Material::default(), &small),
            Err(FluxError::Pattern(PatternError::DimensionMismatch { .. }))
        ));
    }

    #[test]
    fn superposition_and_affine_identity() {
        let m = Material::default();
        for mode in Mode::ALL {
            let g = geom(mode, 0.0);
            let field = HeightMap::flat(21, 21, 500.0, 0.0).unwrap();
            let core = core_region(&g, &field, &m, 2).unwrap();
            let bump = crate::surface::punctate_defect(&crate::surface::DefectParams::new(15.0)).unwrap();
            let fp = PixelFootprint::whole_map(&g, &bump).unwrap();
            let t = FootprintTrace::new(&g, &fp, &m);
            let u = uniform(core.dims(), 1.0).unwrap();
            let t1 = binary_type1(&core, 1.0).unwrap();
            let t2 = binary_type2(&core, 1.0).unwrap();
            let (fu, f1, f2) = (t.flux(&g, &m, &u).unwrap(), t.flux(&g, &m, &t1).unwrap(), t.flux(&g, &m, &t2).unwrap());
            assert!((f1 + f2 - fu).abs() <= 1e-9 * fu, "{mode}: {f1} + {f2} vs {fu}");

            let c = 0.05;
            let gc = g.with_env_illuminance(c).unwrap();
            let tc = FootprintTrace::new(&gc, &fp, &m);
            let lhs = tc.flux(&gc, &m, &t1).unwrap() + tc.flux(&gc, &m, &t2).unwrap();
            let rhs = tc.flux(&gc, &m, &u).unwrap() + m.alpha() * c * fp.total_area();
            assert!((lhs - rhs).abs() <= 1e-9 * rhs);
        }
    }

    #[test]
    fn modulation_examples() {
        let steps: Vec<f64> = (0..4).map(|k| 2.0 * PI * k as f64 / 4.0).collect();
        assert!((modulation_value(&[2.0, 1.0, 0.0, 1.0], &steps).unwrap() - 1.0).abs() < 1e-12);
        assert!(modulation_value(&[3.0; 4], &steps).unwrap() < 1e-12);
        assert!(matches!(
            modulation_value(&[1.0, 2.0], &steps[..2]),
            Err(FluxError::ModulationUndefined(2))
        ));
        for phi in [0.0, 0.3, 1.7, 4.0] {
            let frames: Vec<f64> = steps.iter().map(|d| 5.0 + 2.5 * (phi + d).cos()).collect();
            assert!((modulation_value(&frames, &steps).unwrap() - 2.5).abs() < 1e-12);
        }
        let img = |v: f64| FluxImage::new(2, 1, vec![v, 2.0 * v], String::new()).unwrap();
        let stack = [img(2.0), img(1.0), img(0.0), img(1.0)];
        let m = modulation(&stack, &steps, 16.0).unwrap();
        assert!((m.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((m.get(1, 0) - 2.0).abs() < 1e-12);
        assert!(modulation(&stack[..2], &steps[..2], 16.0).is_err());
    }

    fn transmission_plate() -> (SystemGeometry, HeightMap, Roi) {
        let g = geom(Mode::Transmission, 0.0);
        // 66 um per camera pixel; 6x6 cells per pixel.
        let map = HeightMap::flat(144, 144, 11.0, 0.0).unwrap();
        let roi = Roi::covering(&g, &map).unwrap();
        (g, map, roi)
    }

    #[test]
    fn flat_uniform_render_is_constant() {
        let m = Material::default();
        for mode in Mode::ALL {
            let g = geom(mode, 0.0);
            let map = HeightMap::flat(144, 144, 11.0, 0.0).unwrap();
            let roi = Roi::covering(&g, &map).unwrap();
            let img = render_image(&g, &map, &m, &uniform(ScreenDims::default(), 1.0).unwrap(), roi).unwrap();
            let (lo, hi) = img.values().iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            // Reflection bins a tilted footprint, so whole cells jump pixels.
            let tol = if mode == Mode::Transmission { 0.005 } else { 0.2 };
            assert!(hi / lo - 1.0 < tol, "{mode}: {lo}..{hi}");
            assert!(img.provenance.contains(&g.fingerprint()));
        }
    }

    #[test]
    fn flat_type2_render_is_ambient_only() {
        let (g, map, roi) = transmission_plate();
        let g = g.with_env_illuminance(0.02).unwrap();
        let m = Material::default();
        let field = HeightMap::flat(31, 31, 200.0, 0.0).unwrap();
        let core = core_region(&g, &field, &m, 2).unwrap();
        let img = render_image(&g, &map, &m, &binary_type2(&core, 1.0).unwrap(), roi).unwrap();
        let cell = 11.0 * 11.0;
        for v in img.values() {
            let cells = v / (0.02 * cell);
            assert!((cells - cells.round()).abs() < 1e-9 && cells >= 1.0, "{v}");
        }
    }

    #[test]
    fn render_rejects_uncovered_pixels() {
        let (g, map, roi) = transmission_plate();
        let u = uniform(ScreenDims::default(), 1.0).unwrap();
        let wide = Roi { x0: roi.x0 - 2, ..roi };
        assert!(matches!(render_image(&g, &map, &Material::default(), &u, wide), Err(FluxError::Coverage(_))));
        let huge = Roi { width: 10_000, ..roi };
        assert!(matches!(render_image(&g, &map, &Material::default(), &u, huge), Err(FluxError::Config(_))));
    }

    #[test]
    fn render_matches_pixel_flux_and_is_thread_independent() {
        let (g, _, _) = transmission_plate();
        let g = g.with_env_illuminance(0.01).unwrap();
        let m = Material::default();
        let map = HeightMap::from_fn(150, 150, 11.0, |i, j| 3.0 * ((i as f64) * 0.2).sin() * ((j as f64) * 0.13).cos()).unwrap();
        let roi = Roi::covering(&g, &map).unwrap();
        let mask = ScreenMask::from_fn(ScreenDims::default(), |i, j| (i / 7 + j / 5) % 2 == 0);
        let pat = binary_type1(&mask, 2.0).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| render_image(&g, &map, &m, &pat, roi).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(4));

        // Rebuild one pixel's footprint by hand.
        let (px, py) = (roi.x0 + roi.width / 2, roi.y0 + roi.height / 2);
        let elements: Vec<Facet> = (0..map.height())
            .flat_map(|j| (0..map.width()).map(move |i| (i, j)))
            .map(|(i, j)| Facet::from_map(&g, &map, i, j))
            .filter(|f| {
                let (x, y) = g.camera.project(&f.center).unwrap();
                (x.floor() as usize, y.floor() as usize) == (px, py)
            })
            .collect();
        let fp = PixelFootprint::new((px, py), elements).unwrap();
        let direct = pixel_flux(&g, &fp, &m, &pat).unwrap();
        let rendered = a.get(px - roi.x0, py - roi.y0);
        assert!((direct - rendered).abs() <= 1e-12 * direct);
    }

    #[test]
    fn flux_image_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let img = FluxImage::new(2, 2, vec![0.0, 1.0, 2.0, 3.0], "geometry=ab pattern=u".into()).unwrap();
        let path = img.write(&dir.path().join("f.f32")).unwrap();
        let (w, h, meta, v) = crate::io::read_float_grid(&path).unwrap();
        assert_eq!((w, h, v), (2, 2, vec![0.0, 1.0, 2.0, 3.0]));
        assert_eq!(meta[0].1, "geometry=ab pattern=u");
        assert!(FluxImage::new(1, 1, vec![-1.0], String::new()).is_err());
    }

    fn random_pattern(vals: &[f64]) -> ScreenPattern {
        let dims = ScreenDims::default();
        let lum = (0..dims.width * dims.height).map(|k| vals[(k / 97) % vals.len()]).collect();
        ScreenPattern::new(dims, lum, "random").unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn flux_is_linear(vals in proptest::collection::vec(0.0f64..10.0, 1..40), c in 0.0f64..1.0, k in 0.01f64..100.0, w in 0.0f64..20.0) {
            let m = Material::default();
            for mode in Mode::ALL {
                let g = geom(mode, c);
                let gk = g.with_env_illuminance(c * k).unwrap();
                let map = crate::surface::punctate_defect(&crate::surface::DefectParams::new(w)).unwrap();
                let fp = PixelFootprint::whole_map(&g, &map).unwrap();
                let p = random_pattern(&vals);
                let a = pixel_flux(&g, &fp, &m, &p).unwrap();
                let b = pixel_flux(&gk, &fp, &m, &p.scaled(k).unwrap()).unwrap();
                prop_assert!((b - k * a).abs() <= 1e-12 * (k * a).max(1e-300));
            }
        }

        #[test]
        fn flux_is_monotone_in_luminance(vals in proptest::collection::vec(0.0f64..10.0, 1..40), extra in proptest::collection::vec(0.0f64..10.0, 1..40), w in 0.0f64..20.0) {
            let m = Material::default();
            for mode in Mode::ALL {
                let g = geom(mode, 0.01);
                let map = crate::surface::punctate_defect(&crate::surface::DefectParams::new(w)).unwrap();
                let fp = PixelFootprint::whole_map(&g, &map).unwrap();
                let low = random_pattern(&vals);
                let high_lum = low.luminance().iter().enumerate().map(|(k, v)| v + extra[k % extra.len()]).collect();
                let high = ScreenPattern::new(low.dims(), high_lum, "high").unwrap();
                prop_assert!(pixel_flux(&g, &fp, &m, &high).unwrap() >= pixel_flux(&g, &fp, &m, &low).unwrap());
            }
        }

        #[test]
        fn modulation_rejects_dc(frames in proptest::collection::vec(0.0f64..100.0, 3..10), offset in -50.0f64..50.0) {
            let n = frames.len();
            let steps: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
            let shifted: Vec<f64> = frames.iter().map(|f| f + offset).collect();
            let a = modulation_value(&frames, &steps).unwrap();
            let b = modulation_value(&shifted, &steps).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
