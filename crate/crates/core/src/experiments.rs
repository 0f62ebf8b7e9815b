//! The two studies: the single-pixel w-sweep over the punctate defect and
//! the rendered scratch plate, plus the 8-bit image helpers they share.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::flux::{modulation, modulation_value, render_many, FluxError, FootprintTrace, PixelFootprint, Roi};
use crate::io::write_pgm8;
use crate::optics::{DeskLayout, Mode, OpticsError, SystemGeometry};
use crate::patterns::{
    binary_type1, binary_type2, core_region, fringes, uniform, Orientation, PatternError, ScreenDims, ScreenMask,
};
use crate::surface::{punctate_defect, scratch_plate, DefectParams, HeightMap, Material, ScratchSpec, SurfaceError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("flat baseline of {item} in the {system} system is zero")]
    DegenerateBaseline { item: Item, system: Mode },
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Flux(#[from] FluxError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Detection method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Item {
    Modulation,
    Uniform,
    Type1,
    Type2,
}

impl Item {
    pub const ALL: [Item; 4] = [Item::Modulation, Item::Uniform, Item::Type1, Item::Type2];

    pub fn name(self) -> &'static str {
        match self {
            Item::Modulation => "modulation",
            Item::Uniform => "uniform",
            Item::Type1 => "type1",
            Item::Type2 => "type2",
        }
    }

    /// Direction in which a defect moves this item's signal.
    pub fn defect_side(self) -> DefectSide {
        match self {
            Item::Type2 => DefectSide::Above,
            _ => DefectSide::Below,
        }
    }
}

impl std::fmt::Display for Item {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefectSide {
    Below,
    Above,
}

/// Fringe parameters as fractions of L0 where relevant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeParams {
    pub bias: f64,
    pub amplitude: f64,
    pub period: f64,
    pub steps: usize,
    pub orientation: Orientation,
}

impl FringeParams {
    pub fn default_for(l0: f64) -> Self {
        Self {
            bias: 0.5 * l0,
            amplitude: 0.5 * l0,
            period: 16.0,
            steps: 4,
            orientation: Orientation::X,
        }
    }
}

/// Square flat plate whose reverse-traced image defines the core region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreField {
    /// Full side length, mm.
    pub size_mm: f64,
    /// Cell pitch, micrometers.
    pub pitch_um: f64,
    /// Plate height, micrometers.
    pub height_um: f64,
}

impl CoreField {
    pub fn map(&self) -> Result<HeightMap, ExperimentError> {
        if !(self.size_mm > 0.0 && self.pitch_um > 0.0) {
            return Err(ExperimentError::Config(format!("invalid core field {self:?}")));
        }
        let n = ((self.size_mm * 1e3 / self.pitch_um).round() as usize).max(1);
        Ok(HeightMap::flat(n, n, self.pitch_um, self.height_um)?)
    }
}

/// Everything shared by the two studies' optical setup.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalSetup {
    pub layout: DeskLayout,
    pub material: Material,
    pub l0: f64,
    /// Ambient illuminance as a fraction of a flat Element's screen
    /// illuminance under `l0`.
    pub ambient_fraction: f64,
    pub fringe: FringeParams,
    pub core_margin: usize,
}

impl Default for OpticalSetup {
    fn default() -> Self {
        Self {
            layout: DeskLayout::default(),
            material: Material::default(),
            l0: 1.0,
            ambient_fraction: 0.01,
            fringe: FringeParams::default_for(1.0),
            core_margin: 2,
        }
    }
}

impl OpticalSetup {
    pub fn geometry(&self, mode: Mode) -> Result<SystemGeometry, ExperimentError> {
        if !(self.ambient_fraction >= 0.0 && self.ambient_fraction.is_finite()) {
            return Err(ExperimentError::Config(format!(
                "ambient fraction must be >= 0, got {}",
                self.ambient_fraction
            )));
        }
        let g = self.layout.geometry(mode)?;
        let c = self.ambient_fraction * g.flat_element_illuminance(self.l0, &self.material);
        Ok(g.with_env_illuminance(c)?)
    }
}

/// Patterns of the four items for one rig.
struct PatternBank {
    uniform: crate::patterns::ScreenPattern,
    type1: crate::patterns::ScreenPattern,
    type2: crate::patterns::ScreenPattern,
    fringes: crate::patterns::FringeSet,
}

impl PatternBank {
    fn new(setup: &OpticalSetup, geom: &SystemGeometry, core: &ScreenMask) -> Result<Self, ExperimentError> {
        let dims = ScreenDims::from(&geom.screen);
        let f = setup.fringe;
        Ok(Self {
            uniform: uniform(dims, setup.l0)?,
            type1: binary_type1(core, setup.l0)?,
            type2: binary_type2(core, setup.l0)?,
            fringes: fringes(dims, f.bias, f.amplitude, f.period, f.steps, f.orientation)?,
        })
    }
}

// ---------------------------------------------------------------------------
// Sweep

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub ws: Vec<f64>,
    pub modes: Vec<Mode>,
    pub setup: OpticalSetup,
    /// Defect grid (cells per side) and pitch, micrometers.
    pub grid: usize,
    pub pitch: f64,
    pub reflection_field: CoreField,
    pub transmission_field: CoreField,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ws: (0..=20).map(f64::from).collect(),
            modes: Mode::ALL.to_vec(),
            setup: OpticalSetup::default(),
            grid: 100,
            pitch: 1.0,
            reflection_field: CoreField {
                size_mm: 150.0,
                pitch_um: 100.0,
                height_um: 100.0,
            },
            transmission_field: CoreField {
                size_mm: 22.0,
                pitch_um: 100.0,
                height_um: 100.0,
            },
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.ws.first() != Some(&0.0) {
            return Err(ExperimentError::Config("w list must start at 0".into()));
        }
        if self.ws.windows(2).any(|p| !(p[1] > p[0])) || self.ws.iter().any(|w| !w.is_finite()) {
            return Err(ExperimentError::Config("w list must be strictly ascending and finite".into()));
        }
        if self.modes.is_empty() {
            return Err(ExperimentError::Config("no system mode selected".into()));
        }
        Ok(())
    }

    fn field(&self, mode: Mode) -> CoreField {
        match mode {
            Mode::Reflection => self.reflection_field,
            Mode::Transmission => self.transmission_field,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponsePoint {
    pub w: f64,
    pub item: Item,
    pub system: Mode,
    pub relative_value: f64,
    /// Unnormalized pixel output.
    pub raw: f64,
}

/// Relative responses, ordered by w, then item, then system.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseCurve {
    pub points: Vec<ResponsePoint>,
}

impl ResponseCurve {
    /// `(w, relative value)` pairs of one item in one system.
    pub fn series(&self, item: Item, system: Mode) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| p.item == item && p.system == system)
            .map(|p| (p.w, p.relative_value))
            .collect()
    }

    pub fn value(&self, w: f64, item: Item, system: Mode) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.w == w && p.item == item && p.system == system)
            .map(|p| p.relative_value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("w,item,system,relative_value\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", p.w, p.item, p.system, p.relative_value);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<PathBuf, ExperimentError> {
        fs::write(path, self.to_csv())?;
        Ok(path.to_path_buf())
    }
}

/// Single-pixel outputs of the four items for one surface.
fn item_outputs(
    geom: &SystemGeometry,
    material: &Material,
    bank: &PatternBank,
    map: &HeightMap,
) -> Result<[f64; 4], ExperimentError> {
    let fp = PixelFootprint::whole_map(geom, map)?;
    let trace = FootprintTrace::new(geom, &fp, material);
    let frames = bank
        .fringes
        .frames
        .iter()
        .map(|f| trace.flux(geom, material, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok([
        modulation_value(&frames, &bank.fringes.phase_steps)?,
        trace.flux(geom, material, &bank.uniform)?,
        trace.flux(geom, material, &bank.type1)?,
        trace.flux(geom, material, &bank.type2)?,
    ])
}

/// Relative single-pixel response of every item as the defect deepens.
pub fn response_sweep(cfg: &SweepConfig) -> Result<ResponseCurve, ExperimentError> {
    cfg.validate()?;
    let mut points = Vec::new();
    for &mode in &cfg.modes {
        let setup = &cfg.setup;
        let geom = setup.geometry(mode)?;
        let core = core_region(&geom, &cfg.field(mode).map()?, &setup.material, setup.core_margin)?;
        let bank = PatternBank::new(setup, &geom, &core)?;
        let raw = cfg
            .ws
            .par_iter()
            .map(|&w| {
                let map = punctate_defect(&DefectParams {
                    w,
                    grid: (cfg.grid, cfg.grid),
                    pitch: cfg.pitch,
                })?;
                item_outputs(&geom, &setup.material, &bank, &map)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let base = raw[0];
        for (k, item) in Item::ALL.iter().enumerate() {
            if base[k] == 0.0 {
                return Err(ExperimentError::DegenerateBaseline { item: *item, system: mode });
            }
        }
        for (&w, values) in cfg.ws.iter().zip(&raw) {
            for (k, &item) in Item::ALL.iter().enumerate() {
                points.push(ResponsePoint {
                    w,
                    item,
                    system: mode,
                    relative_value: values[k] / base[k],
                    raw: values[k],
                });
            }
        }
    }
    points.sort_by(|a, b| {
        a.w.total_cmp(&b.w)
            .then(a.item.cmp(&b.item))
            .then(a.system.cmp(&b.system))
    });
    Ok(ResponseCurve { points })
}

// ---------------------------------------------------------------------------
// 8-bit image helpers

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Gray8 {
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[j * self.width + i]
    }

    pub fn write_pgm(&self, path: &Path) -> Result<PathBuf, ExperimentError> {
        write_pgm8(path, self.width, self.height, &self.data)?;
        Ok(path.to_path_buf())
    }
}

/// Maps `[min, max]` affinely onto `[0, 255]`, rounding half up; a constant
/// image maps to 0.
pub fn grayscale_stretch(width: usize, height: usize, values: &[f64]) -> Result<Gray8, ExperimentError> {
    if values.is_empty() || values.len() != width * height {
        return Err(ExperimentError::Domain(format!(
            "{} values for a {width}x{height} image",
            values.len()
        )));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let data = if hi > lo {
        values
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![0; values.len()]
    };
    Ok(Gray8 { width, height, data })
}

/// One image row, displaced by `shift` samples when plotted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    pub shift: usize,
    pub values: Vec<u8>,
}

impl Profile {
    /// `(plot position, gray)` pairs.
    pub fn plotted(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.values.iter().enumerate().map(move |(k, &v)| (k + self.shift, v))
    }

    pub fn pv(&self) -> f64 {
        peak_to_valley(&self.values.iter().map(|&v| v as f64).collect::<Vec<_>>()).unwrap_or(0.0)
    }
}

pub fn extract_profile(img: &Gray8, row: usize, shift: usize) -> Result<Profile, ExperimentError> {
    if row >= img.height {
        return Err(ExperimentError::Domain(format!(
            "row {row} is outside an image of height {}",
            img.height
        )));
    }
    Ok(Profile {
        shift,
        values: img.data[row * img.width..(row + 1) * img.width].to_vec(),
    })
}

pub fn peak_to_valley(series: &[f64]) -> Result<f64, ExperimentError> {
    if series.is_empty() {
        return Err(ExperimentError::Domain("peak-to-valley of an empty series".into()));
    }
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(hi - lo)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median and MAD-based sigma (`1.4826 * MAD`).
pub fn robust_stats(values: &[f64]) -> (f64, f64) {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    (m, 1.4826 * median(&dev))
}

/// Smallest sigma used for thresholding 8-bit images: one gray level.
pub const GRAY_SIGMA_FLOOR: f64 = 1.0;

/// Marks pixels more than `k` robust sigmas beyond the median on the
/// item's defect side.
pub fn detect_mask(img: &Gray8, item: Item, k: f64) -> Vec<bool> {
    let values: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let (m, sigma) = robust_stats(&values);
    let t = k * sigma.max(GRAY_SIGMA_FLOOR);
    values
        .iter()
        .map(|&v| match item.defect_side() {
            DefectSide::Above => v > m + t,
            DefectSide::Below => v < m - t,
        })
        .collect()
}

/// 8-connected component labels (0 = background, 1.. in raster order of
/// first pixel) and the component count.
pub fn connected_components(mask: &[bool], width: usize, height: usize) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; mask.len()];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (i, j) = ((idx % width) as i64, (idx / width) as i64);
            for dj in -1..=1 {
                for di in -1..=1 {
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= width as i64 || b >= height as i64 {
                        continue;
                    }
                    let n = b as usize * width + a as usize;
                    if mask[n] && labels[n] == 0 {
                        labels[n] = count;
                        stack.push(n);
                    }
                }
            }
        }
    }
    (labels, count as usize)
}

// ---------------------------------------------------------------------------
// Scratch plate

#[derive(Debug, Clone, PartialEq)]
pub struct ScratchConfig {
    pub spec: ScratchSpec,
    /// Plate size in cells and cell pitch, micrometers.
    pub plate_width: usize,
    pub plate_height: usize,
    pub pitch: f64,
    pub modes: Vec<Mode>,
    pub setup: OpticalSetup,
    /// Pitch of the flat plate traced for the core region, micrometers.
    pub core_pitch: f64,
    /// Robust-sigma multiplier of the detection masks.
    pub k: f64,
    /// Plot displacement between successive items' profiles.
    pub profile_shift: usize,
}

impl Default for ScratchConfig {
    fn default() -> Self {
        Self {
            spec: ScratchSpec::glass_plate(),
            plate_width: 3000,
            plate_height: 6000,
            pitch: 1.0,
            modes: Mode::ALL.to_vec(),
            setup: OpticalSetup::default(),
            core_pitch: 20.0,
            k: 5.0,
            profile_shift: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemResult {
    pub item: Item,
    /// Flux (or modulation) per camera pixel.
    pub raw: Vec<f64>,
    pub stretched: Gray8,
    pub profile: Profile,
    pub pv: f64,
    pub mask: Vec<bool>,
    pub components: usize,
    /// `|scratch mean - background median|` over the uniform background flux.
    pub contrast: f64,
    /// Scratch-pixel mean beyond the background median, in robust sigmas of
    /// the stretched image (floored at one gray level), signed toward the
    /// item's defect side.
    pub scratch_sigmas: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemReport {
    pub system: Mode,
    pub roi: Roi,
    pub profile_row: usize,
    /// Camera pixels that image any groove cell.
    pub scratch_pixels: Vec<bool>,
    /// Median uniform-illumination flux over background pixels.
    pub background_flux: f64,
    pub geometry_fingerprint: String,
    pub items: Vec<ItemResult>,
}

impl SystemReport {
    pub fn item(&self, item: Item) -> &ItemResult {
        self.items.iter().find(|r| r.item == item).expect("every item is rendered")
    }

    pub fn width(&self) -> usize {
        self.roi.width
    }

    pub fn height(&self) -> usize {
        self.roi.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub k: f64,
    pub systems: Vec<SystemReport>,
}

impl DetectionReport {
    pub fn system(&self, mode: Mode) -> Option<&SystemReport> {
        self.systems.iter().find(|s| s.system == mode)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "detection threshold k = {}", self.k);
        for s in &self.systems {
            let _ = writeln!(
                out,
                "\n[{}]\ngeometry {}\nroi x0={} y0={} width={} height={}\nprofile_row {}\nscratch_pixels {}\nbackground_flux {}",
                s.system,
                s.geometry_fingerprint,
                s.roi.x0,
                s.roi.y0,
                s.roi.width,
                s.roi.height,
                s.profile_row,
                s.scratch_pixels.iter().filter(|&&b| b).count(),
                s.background_flux
            );
            let _ = writeln!(out, "item        pv  contrast      sigmas  components");
            for r in &s.items {
                let _ = writeln!(
                    out,
                    "{:<10} {:>3}  {:<12.6e}  {:>6.1}  {}",
                    r.item.name(),
                    r.pv,
                    r.contrast,
                    r.scratch_sigmas,
                    r.components
                );
            }
        }
        out
    }

    /// Writes images, masks, profiles and the summary under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        let mut csv = String::from("system,item,sample,position,gray\n");
        for s in &self.systems {
            for r in &s.items {
                let stem = format!("{}_{}", s.system, r.item);
                paths.push(r.stretched.write_pgm(&dir.join(format!("{stem}.pgm")))?);
                let mask = Gray8 {
                    width: s.width(),
                    height: s.height(),
                    data: r.mask.iter().map(|&b| if b { 255 } else { 0 }).collect(),
                };
                paths.push(mask.write_pgm(&dir.join(format!("{stem}_mask.pgm")))?);
                for (k, (pos, v)) in r.profile.plotted().enumerate() {
                    let _ = writeln!(csv, "{},{},{k},{pos},{v}", s.system, r.item);
                }
            }
        }
        let profiles = dir.join("profiles.csv");
        fs::write(&profiles, csv)?;
        paths.push(profiles);
        let summary = dir.join("summary.txt");
        fs::write(&summary, self.summary())?;
        paths.push(summary);
        Ok(paths)
    }
}

/// Renders the scratch plate under every item and analyses the images.
pub fn scratch_experiment(cfg: &ScratchConfig) -> Result<DetectionReport, ExperimentError> {
    if cfg.modes.is_empty() {
        return Err(ExperimentError::Config("no system mode selected".into()));
    }
    if !(cfg.k > 0.0 && cfg.core_pitch > 0.0) {
        return Err(ExperimentError::Config("k and core pitch must be > 0".into()));
    }
    let plate = scratch_plate(&cfg.spec, cfg.plate_width, cfg.plate_height, cfg.pitch, 0.0)?;
    let (ex, ey) = plate.extent();
    let field = HeightMap::flat(
        ((ex / cfg.core_pitch).round() as usize).max(1),
        ((ey / cfg.core_pitch).round() as usize).max(1),
        cfg.core_pitch,
        0.0,
    )?;
    let systems = cfg
        .modes
        .iter()
        .map(|&mode| scratch_system(cfg, mode, &plate, &field))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DetectionReport { k: cfg.k, systems })
}

fn scratch_system(
    cfg: &ScratchConfig,
    mode: Mode,
    plate: &HeightMap,
    field: &HeightMap,
) -> Result<SystemReport, ExperimentError> {
    let setup = &cfg.setup;
    let geom = setup.geometry(mode)?;
    let core = core_region(&geom, field, &setup.material, setup.core_margin)?;
    let bank = PatternBank::new(setup, &geom, &core)?;
    let roi = Roi::covering(&geom, plate)?;

    let mut patterns = vec![&bank.uniform, &bank.type1, &bank.type2];
    patterns.extend(bank.fringes.frames.iter());
    let mut images = render_many(&geom, plate, &setup.material, &patterns, roi)?;
    let frames = images.split_off(3);
    let modulation = modulation(&frames, &bank.fringes.phase_steps, bank.fringes.period)?;

    let scratch = scratch_pixels(&geom, cfg, plate, roi);
    if !scratch.contains(&true) || !scratch.contains(&false) {
        return Err(ExperimentError::Config(
            "scratch plate must image both scratch and background pixels".into(),
        ));
    }
    let background = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(&scratch).filter(|(_, &s)| !s).map(|(x, _)| *x).collect()
    };
    let background_flux = median(&background(images[0].values()));
    if !(background_flux > 0.0) {
        return Err(ExperimentError::Config("uniform background flux is zero".into()));
    }
    let profile_row = {
        let (_, y) = geom
            .camera
            .project(&geom.surface.origin)
            .ok_or_else(|| ExperimentError::Config("camera does not see the plate center".into()))?;
        let row = y.floor() as isize - roi.y0 as isize;
        if row < 0 || row >= roi.height as isize {
            return Err(ExperimentError::Config("plate center is outside the rendered region".into()));
        }
        row as usize
    };

    let raws = [
        (Item::Modulation, modulation.values().to_vec()),
        (Item::Uniform, images[0].values().to_vec()),
        (Item::Type1, images[1].values().to_vec()),
        (Item::Type2, images[2].values().to_vec()),
    ];
    let items = raws
        .into_iter()
        .enumerate()
        .map(|(n, (item, raw))| {
            let stretched = grayscale_stretch(roi.width, roi.height, &raw)?;
            let profile = extract_profile(&stretched, profile_row, n * cfg.profile_shift)?;
            let mask = detect_mask(&stretched, item, cfg.k);
            let (_, components) = connected_components(&mask, roi.width, roi.height);
            let scratch_mean = mean_where(&raw, &scratch, true);
            let contrast = (scratch_mean - median(&background(&raw))).abs() / background_flux;
            let gray: Vec<f64> = stretched.data.iter().map(|&v| v as f64).collect();
            let (m, sigma) = robust_stats(&background(&gray));
            let sign = match item.defect_side() {
                DefectSide::Above => 1.0,
                DefectSide::Below => -1.0,
            };
            let scratch_sigmas = sign * (mean_where(&gray, &scratch, true) - m) / sigma.max(GRAY_SIGMA_FLOOR);
            Ok(ItemResult {
                item,
                pv: profile.pv(),
                raw,
                stretched,
                profile,
                mask,
                components,
                contrast,
                scratch_sigmas,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    Ok(SystemReport {
        system: mode,
        roi,
        profile_row,
        scratch_pixels: scratch,
        background_flux,
        geometry_fingerprint: geom.fingerprint(),
        items,
    })
}

fn mean_where(values: &[f64], mask: &[bool], want: bool) -> f64 {
    let (sum, n) = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == want)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    sum / n as f64
}

/// Camera pixels within `roi` that image at least one groove cell.
fn scratch_pixels(geom: &SystemGeometry, cfg: &ScratchConfig, plate: &HeightMap, roi: Roi) -> Vec<bool> {
    let mut out = vec![false; roi.width * roi.height];
    for j in 0..plate.height() {
        for i in 0..plate.width() {
            let (x, y) = plate.cell_center(i, j);
            if cfg.spec.depth_at(x, y).is_none() {
                continue;
            }
            let p = geom.surface_point(x, y, plate.heights()[j * plate.width() + i]);
            let Some((px, py)) = geom.camera.project(&p) else {
                continue;
            };
            let (px, py) = (px.floor() as isize - roi.x0 as isize, py.floor() as isize - roi.y0 as isize);
            if px >= 0 && py >= 0 && (px as usize) < roi.width && (py as usize) < roi.height {
                out[py as usize * roi.width + px as usize] = true;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stretch_examples() {
        assert_eq!(grayscale_stretch(2, 1, &[0.0, 1.0]).unwrap().data, vec![0, 255]);
        assert_eq!(grayscale_stretch(2, 2, &[7.0; 4]).unwrap().data, vec![0; 4]);
        assert_eq!(grayscale_stretch(3, 1, &[1.0, 2.0, 3.0]).unwrap().data, vec![0, 128, 255]);
        assert!(grayscale_stretch(0, 0, &[]).is_err());
    }

    #[test]
    fn profile_and_pv_examples() {
        let img = Gray8 {
            width: 4,
            height: 2,
            data: vec![10, 200, 30, 90, 7, 7, 7, 7],
        };
        let raw = extract_profile(&img, 0, 0).unwrap();
        assert_eq!(raw.values, vec![10, 200, 30, 90]);
        assert_eq!(raw.pv(), 190.0);
        let shifted = extract_profile(&img, 0, 10).unwrap();
        assert_eq!(shifted.values, raw.values);
        assert_eq!(shifted.plotted().next(), Some((10, 10)));
        assert_eq!(shifted.pv(), raw.pv());
        assert_eq!(extract_profile(&img, 1, 0).unwrap().pv(), 0.0);
        assert!(extract_profile(&img, 2, 0).is_err());
        assert_eq!(peak_to_valley(&[5.0]).unwrap(), 0.0);
        assert_eq!(peak_to_valley(&[0.0, 255.0]).unwrap(), 255.0);
        assert!(peak_to_valley(&[]).is_err());
    }

    #[test]
    fn detect_mask_examples() {
        let flat = Gray8 {
            width: 5,
            height: 5,
            data: vec![100; 25],
        };
        for item in Item::ALL {
            assert!(!detect_mask(&flat, item, 5.0).contains(&true));
        }
        let mut hot = flat.clone();
        hot.data[12] = 110;
        let m = detect_mask(&hot, Item::Type2, 5.0);
        assert_eq!(m.iter().filter(|&&b| b).count(), 1);
        assert!(m[12]);
        assert!(!detect_mask(&hot, Item::Type1, 5.0).contains(&true));
    }

    #[test]
    fn components_use_eight_connectivity() {
        #[rustfmt::skip]
        let mask = [
            true,  false, false, true,
            false, true,  false, false,
            false, false, false, true,
        ];
        let (labels, n) = connected_components(&mask, 4, 3);
        assert_eq!(n, 3);
        assert_eq!(labels[0], labels[5]);
        assert_ne!(labels[3], labels[11]);
    }

    #[test]
    fn sweep_normalizes_and_orders_output() {
        let cfg = SweepConfig {
            ws: vec![0.0, 5.0, 10.0],
            ..SweepConfig::default()
        };
        let curve = response_sweep(&cfg).unwrap();
        assert_eq!(curve.points.len(), 3 * 4 * 2);
        for p in curve.points.iter().filter(|p| p.w == 0.0) {
            assert_eq!(p.relative_value, 1.0);
        }
        let keys: Vec<_> = curve.points.iter().map(|p| (p.w, p.item, p.system)).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        assert_eq!(keys, sorted);
        let csv = curve.to_csv();
        assert!(csv.starts_with("w,item,system,relative_value\n0,modulation,reflection,1\n"));
    }

    #[test]
    fn sweep_rejects_bad_configs() {
        let bad_start = SweepConfig {
            ws: vec![1.0, 2.0],
            ..SweepConfig::default()
        };
        assert!(matches!(response_sweep(&bad_start), Err(ExperimentError::Config(_))));
        let unsorted = SweepConfig {
            ws: vec![0.0, 3.0, 2.0],
            ..SweepConfig::default()
        };
        assert!(response_sweep(&unsorted).is_err());
        // Without ambient light a clean plate under type 2 is dark.
        let mut dark = SweepConfig {
            ws: vec![0.0, 1.0],
            modes: vec![Mode::Transmission],
            ..SweepConfig::default()
        };
        dark.setup.ambient_fraction = 0.0;
        assert!(matches!(
            response_sweep(&dark),
            Err(ExperimentError::DegenerateBaseline { item: Item::Type2, system: Mode::Transmission })
        ));
    }

    proptest! {
        #[test]
        fn stretch_preserves_order(values in proptest::collection::vec(-1e6f64..1e6, 2..64)) {
            let img = grayscale_stretch(values.len(), 1, &values).unwrap();
            for a in 0..values.len() {
                for b in 0..values.len() {
                    if values[a] < values[b] {
                        prop_assert!(img.data[a] <= img.data[b]);
                    }
                }
            }
        }

        #[test]
        fn pv_is_shift_invariant(values in proptest::collection::vec(-1e3f64..1e3, 1..64), c in -1e3f64..1e3) {
            let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
            let a = peak_to_valley(&values).unwrap();
            let b = peak_to_valley(&shifted).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
