//! Command-line orchestration: configuration, subcommand dispatch and file
//! emission.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sli_core::experiments::{grayscale_stretch, response_sweep, scratch_experiment, ExperimentError, OpticalSetup};
use sli_core::flux::{pixel_flux, render_image, FluxError, PixelFootprint, Roi};
use sli_core::optics::{Mode, OpticsError, SystemGeometry};
use sli_core::oracle::{monte_carlo_flat_flux, FlatPatch};
use sli_core::patterns::{
    binary_type1, binary_type2, core_region, fringes, uniform, PatternError, ScreenDims, ScreenPattern,
};
use sli_core::surface::{punctate_defect, scratch_plate, DefectParams, HeightMap, SurfaceError};

pub use config::{parse_config, ConfigError, RenderPattern, RenderSurface, RunConfig, DEFAULTS};

/// Relative tolerance between the reverse-trace flux and the oracle.
pub const ORACLE_TOLERANCE: f64 = 0.02;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Surface(SurfaceError),
    Optics(OpticsError),
    Patterns(PatternError),
    Flux(FluxError),
    Experiments(String),
    Oracle(String),
    Io { path: PathBuf, source: std::io::Error },
}

impl std::error::Error for CliError {}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config: {e}"),
            CliError::Surface(e) => write!(f, "surface: {e}"),
            CliError::Optics(e) => write!(f, "optics: {e}"),
            CliError::Patterns(e) => write!(f, "patterns: {e}"),
            CliError::Flux(e) => match e {
                FluxError::Pattern(p) => write!(f, "patterns: {p}"),
                other => write!(f, "flux: {other}"),
            },
            CliError::Experiments(e) => write!(f, "experiments: {e}"),
            CliError::Oracle(e) => write!(f, "oracle: {e}"),
            CliError::Io { path, source } => write!(f, "io: {}: {source}", path.display()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<SurfaceError> for CliError {
    fn from(e: SurfaceError) -> Self {
        CliError::Surface(e)
    }
}

impl From<OpticsError> for CliError {
    fn from(e: OpticsError) -> Self {
        CliError::Optics(e)
    }
}

impl From<PatternError> for CliError {
    fn from(e: PatternError) -> Self {
        CliError::Patterns(e)
    }
}

impl From<FluxError> for CliError {
    fn from(e: FluxError) -> Self {
        CliError::Flux(e)
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Surface(e) => CliError::Surface(e),
            ExperimentError::Optics(e) => CliError::Optics(e),
            ExperimentError::Pattern(e) => CliError::Patterns(e),
            ExperimentError::Flux(e) => CliError::Flux(e),
            other => CliError::Experiments(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Sweep,
    Scratch,
    Render,
    Patterns,
    VerifyOracle,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Sweep => "sweep",
            Subcommand::Scratch => "scratch",
            Subcommand::Render => "render",
            Subcommand::Patterns => "patterns",
            Subcommand::VerifyOracle => "verify-oracle",
        }
    }
}

/// Runs one subcommand, writing under `out`; returns every file written.
pub fn run_subcommand(cmd: Subcommand, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    match cmd {
        Subcommand::Sweep => {
            let curve = response_sweep(&cfg.sweep)?;
            let path = out.join("sweep.csv");
            fs::write(&path, curve.to_csv()).map_err(io_err(&path))?;
            Ok(vec![path])
        }
        Subcommand::Scratch => {
            let report = scratch_experiment(&cfg.scratch)?;
            Ok(report.write(out).map_err(|e| match e {
                ExperimentError::Io(source) => CliError::Io {
                    path: out.to_path_buf(),
                    source,
                },
                other => other.into(),
            })?)
        }
        Subcommand::Render => render(cfg, out),
        Subcommand::Patterns => patterns(cfg, out),
        Subcommand::VerifyOracle => verify_oracle(cfg, out),
    }
}

fn pattern_files(p: &ScreenPattern, path: &Path, bits: u8) -> Result<Vec<PathBuf>, CliError> {
    p.write_pgm(path, bits).map_err(|e| match e {
        PatternError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other.into(),
    })
}

fn patterns(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let s = &cfg.setup;
    let mut files = Vec::new();
    for &mode in &cfg.modes {
        let geom = s.geometry(mode)?;
        let field = match mode {
            Mode::Reflection => cfg.sweep.reflection_field,
            Mode::Transmission => cfg.sweep.transmission_field,
        };
        let core = core_region(&geom, &field.map()?, &s.material, s.core_margin)?;
        let dir = out.join(format!("patterns_{mode}"));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let dims = ScreenDims::from(&geom.screen);
        files.extend(pattern_files(&uniform(dims, s.l0)?, &dir.join("uniform.pgm"), cfg.pgm_bits)?);
        files.extend(pattern_files(&binary_type1(&core, s.l0)?, &dir.join("type1.pgm"), cfg.pgm_bits)?);
        files.extend(pattern_files(&binary_type2(&core, s.l0)?, &dir.join("type2.pgm"), cfg.pgm_bits)?);
        let f = s.fringe;
        let set = fringes(dims, f.bias, f.amplitude, f.period, f.steps, f.orientation)?;
        for (k, frame) in set.frames.iter().enumerate() {
            files.extend(pattern_files(frame, &dir.join(format!("fringe{k}.pgm")), cfg.pgm_bits)?);
        }
    }
    Ok(files)
}

fn render_surface(cfg: &RunConfig) -> Result<HeightMap, CliError> {
    let sc = &cfg.scratch;
    Ok(match &cfg.render.surface {
        RenderSurface::Defect => punctate_defect(&DefectParams {
            w: cfg.render.defect_w,
            grid: (cfg.sweep.grid, cfg.sweep.grid),
            pitch: cfg.sweep.pitch,
        })?,
        RenderSurface::Scratch => scratch_plate(&sc.spec, sc.plate_width, sc.plate_height, sc.pitch, 0.0)?,
        RenderSurface::File(path) => {
            let p = Path::new(path);
            HeightMap::from_text(&fs::read_to_string(p).map_err(io_err(p))?)?
        }
    })
}

fn render_pattern(
    setup: &OpticalSetup,
    geom: &SystemGeometry,
    cfg: &RunConfig,
    surface: &HeightMap,
) -> Result<ScreenPattern, CliError> {
    let dims = ScreenDims::from(&geom.screen);
    let core = || -> Result<_, CliError> {
        let field = if cfg.render.core_field_mm > 0.0 {
            let pitch = cfg.render.core_pitch_um;
            let n = ((cfg.render.core_field_mm * 1e3 / pitch).round() as usize).max(1);
            HeightMap::flat(n, n, pitch, surface.min_max().1)?
        } else if cfg.render.surface == RenderSurface::Defect {
            match geom.mode {
                Mode::Reflection => cfg.sweep.reflection_field.map()?,
                Mode::Transmission => cfg.sweep.transmission_field.map()?,
            }
        } else {
            let (ex, ey) = surface.extent();
            let pitch = cfg.render.core_pitch_um;
            HeightMap::flat(
                ((ex / pitch).round() as usize).max(1),
                ((ey / pitch).round() as usize).max(1),
                pitch,
                surface.min_max().1,
            )?
        };
        Ok(core_region(geom, &field, &setup.material, setup.core_margin)?)
    };
    Ok(match cfg.render.pattern {
        RenderPattern::Uniform => uniform(dims, setup.l0)?,
        RenderPattern::Type1 => binary_type1(&core()?, setup.l0)?,
        RenderPattern::Type2 => binary_type2(&core()?, setup.l0)?,
        RenderPattern::Fringe(k) => {
            let f = setup.fringe;
            fringes(dims, f.bias, f.amplitude, f.period, f.steps, f.orientation)?
                .frames
                .swap_remove(k)
        }
    })
}

fn render(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let setup = &cfg.setup;
    let surface = render_surface(cfg)?;
    let mut files = Vec::new();
    for &mode in &cfg.modes {
        let geom = setup.geometry(mode)?;
        let pattern = render_pattern(setup, &geom, cfg, &surface)?;
        let stem = format!("render_{mode}");
        let floats = out.join(format!("{stem}.f32"));
        let pgm = out.join(format!("{stem}.pgm"));
        // A surface smaller than one camera pixel is rendered as one pixel.
        let (values, width, height, provenance) = match Roi::covering(&geom, &surface) {
            Ok(roi) => {
                let img = render_image(&geom, &surface, &setup.material, &pattern, roi)?;
                let p = img.provenance.clone();
                (img.values().to_vec(), img.width, img.height, p)
            }
            Err(FluxError::Config(_)) => {
                let fp = PixelFootprint::whole_map(&geom, &surface)?;
                let phi = pixel_flux(&geom, &fp, &setup.material, &pattern)?;
                (
                    vec![phi],
                    1,
                    1,
                    format!("geometry={} pattern={} footprint=whole-surface", geom.fingerprint(), pattern.label()),
                )
            }
            Err(e) => return Err(e.into()),
        };
        sli_core::io::write_float_grid(&floats, width, height, &[("provenance", provenance)], &values)
            .map_err(io_err(&floats))?;
        let gray = grayscale_stretch(width, height, &values)?;
        sli_core::io::write_pgm8(&pgm, width, height, &gray.data).map_err(io_err(&pgm))?;
        files.push(floats);
        files.push(pgm);
    }
    Ok(files)
}

fn verify_oracle(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let s = &cfg.setup;
    let o = cfg.oracle;
    let mut report = format!("seed {}\nsamples {}\ncells {}\npitch_um {}\n", o.seed, o.samples, o.cells, o.pitch_um);
    let mut failures = Vec::new();
    for &mode in &cfg.modes {
        let geom = s.geometry(mode)?;
        let flat = HeightMap::flat(o.cells, o.cells, o.pitch_um, 0.0)?;
        let fp = PixelFootprint::whole_map(&geom, &flat)?;
        let pattern = uniform(ScreenDims::from(&geom.screen), s.l0)?;
        let model = pixel_flux(&geom, &fp, &s.material, &pattern)?;
        let patch = FlatPatch {
            cells: o.cells,
            pitch: o.pitch_um,
        };
        let est = monte_carlo_flat_flux(&geom, &s.material, patch, s.l0, o.samples, o.seed);
        let rel = (est.flux - model).abs() / model;
        let _ = writeln!(
            report,
            "{mode} model {model} oracle {} std_error {} relative_error {rel} missed {}",
            est.flux, est.std_error, est.missed
        );
        if !(rel < ORACLE_TOLERANCE) {
            failures.push(format!("{mode} relative error {rel}"));
        }
    }
    let path = out.join("oracle.txt");
    fs::write(&path, report).map_err(io_err(&path))?;
    if !failures.is_empty() {
        return Err(CliError::Oracle(format!(
            "reverse trace disagrees with Monte Carlo beyond {ORACLE_TOLERANCE}: {}",
            failures.join(", ")
        )));
    }
    Ok(vec![path])
}
