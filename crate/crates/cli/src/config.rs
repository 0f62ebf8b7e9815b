//! Sectioned `key = value` run configuration.
//!
//! Every key except `geometry.mode` has a default; `DEFAULTS` lists them all
//! and parses to the default configuration. Unknown sections or keys are
//! rejected, and every error names the key and its line.

use std::collections::BTreeMap;
use std::fmt;

use sli_core::experiments::{CoreField, FringeParams, OpticalSetup, ScratchConfig, SweepConfig};
use sli_core::optics::{DeskLayout, Mode};
use sli_core::patterns::Orientation;
use sli_core::surface::{GrooveProfile, Material, ScratchSpec};

pub const DEFAULTS: &str = "\
# Structured-light inspection simulator configuration.
# Lengths carry their unit in the key name. Lists are comma-separated.

[geometry]
# reflection | transmission | both (required)
mode = both
camera_distance_mm = 300
reflection_tilt_deg = 15
reflection_screen_distance_mm = 200
transmission_screen_distance_mm = 200
screen_width_px = 1920
screen_height_px = 1080
screen_pitch_mm = 0.272
camera_width_px = 3384
camera_height_px = 2710
camera_pixel_pitch_um = 5.5
focal_length_mm = 25
# ambient illuminance as a fraction of a flat Element's screen illuminance
ambient_fraction = 0.01

[material]
alpha = 1
refractive_index = 1.5

[patterns]
l0 = 1
# fringe bias and amplitude default to 0.5 * l0
fringe_bias = 0.5
fringe_amplitude = 0.5
fringe_period = 16
fringe_steps = 4
# x | y
fringe_orientation = x
core_margin = 2
# 8 | 16
pgm_bits = 8

[sweep]
w_values = 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20
grid = 100
pitch_um = 1
# flat plates traced for the core region (also used by `patterns`)
reflection_field_mm = 150
transmission_field_mm = 22
field_pitch_um = 100
field_height_um = 100

[scratch]
widths_um = 5, 10, 15, 20, 25, 30, 35, 40, 45, 50
length_um = 5000
depth_um = 2
spacing_um = 250
plate_width = 3000
plate_height = 6000
pitch_um = 1
core_pitch_um = 20
k = 5
profile_shift = 10

[render]
# defect | scratch | path to a height-map text file
surface = defect
defect_w = 10
# uniform | type1 | type2 | fringe<k>
pattern = type2
# core region traced from a flat plate of this size; 0 = the sweep field
# for the defect, the surface extent otherwise
core_field_mm = 0
core_pitch_um = 20

[oracle]
seed = 7
samples = 1000000
cells = 8
pitch_um = 1
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum RenderSurface {
    Defect,
    Scratch,
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RenderPattern {
    Uniform,
    Type1,
    Type2,
    Fringe(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub surface: RenderSurface,
    pub defect_w: f64,
    pub pattern: RenderPattern,
    pub core_field_mm: f64,
    pub core_pitch_um: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub seed: u64,
    pub samples: usize,
    pub cells: usize,
    pub pitch_um: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub modes: Vec<Mode>,
    pub setup: OpticalSetup,
    pub pgm_bits: u8,
    pub sweep: SweepConfig,
    pub scratch: ScratchConfig,
    pub render: RenderConfig,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config(DEFAULTS).expect("built-in defaults parse")
    }
}

const SCHEMA: &[(&str, &[&str])] = &[
    (
        "geometry",
        &[
            "mode",
            "camera_distance_mm",
            "reflection_tilt_deg",
            "reflection_screen_distance_mm",
            "transmission_screen_distance_mm",
            "screen_width_px",
            "screen_height_px",
            "screen_pitch_mm",
            "camera_width_px",
            "camera_height_px",
            "camera_pixel_pitch_um",
            "focal_length_mm",
            "ambient_fraction",
        ],
    ),
    ("material", &["alpha", "refractive_index"]),
    (
        "patterns",
        &[
            "l0",
            "fringe_bias",
            "fringe_amplitude",
            "fringe_period",
            "fringe_steps",
            "fringe_orientation",
            "core_margin",
            "pgm_bits",
        ],
    ),
    (
        "sweep",
        &[
            "w_values",
            "grid",
            "pitch_um",
            "reflection_field_mm",
            "transmission_field_mm",
            "field_pitch_um",
            "field_height_um",
        ],
    ),
    (
        "scratch",
        &[
            "widths_um",
            "length_um",
            "depth_um",
            "spacing_um",
            "plate_width",
            "plate_height",
            "pitch_um",
            "core_pitch_um",
            "k",
            "profile_shift",
        ],
    ),
    ("render", &["surface", "defect_w", "pattern", "core_field_mm", "core_pitch_um"]),
    ("oracle", &["seed", "samples", "cells", "pitch_um"]),
];

/// Raw `section.key -> (value, line)` table.
struct Table {
    entries: BTreeMap<String, (String, usize)>,
}

impl Table {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<&str> = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                let Some((known, _)) = SCHEMA.iter().find(|(s, _)| *s == name) else {
                    return Err(ConfigError {
                        line: Some(line_no),
                        key: format!("[{name}]"),
                        message: "unknown section".into(),
                    });
                };
                section = Some(known);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError {
                    line: Some(line_no),
                    key: line.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let key = key.trim();
            let Some(sec) = section else {
                return Err(ConfigError {
                    line: Some(line_no),
                    key: key.to_string(),
                    message: "key outside of any section".into(),
                });
            };
            let qualified = format!("{sec}.{key}");
            let keys = SCHEMA.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
            if !keys.contains(&key) {
                return Err(ConfigError {
                    line: Some(line_no),
                    key: qualified,
                    message: "unknown key".into(),
                });
            }
            if let Some((_, first)) = entries.get(&qualified) {
                return Err(ConfigError {
                    line: Some(line_no),
                    key: qualified,
                    message: format!("duplicate key (first set on line {first})"),
                });
            }
            entries.insert(qualified, (value.trim().to_string(), line_no));
        }
        Ok(Self { entries })
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.raw(key).map(|(_, l)| l),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| ConfigError {
                line: Some(line),
                key: key.to_string(),
                message: format!("cannot parse `{v}`"),
            }),
        }
    }

    /// A float satisfying `ok`, described by `rule` in errors.
    fn f64(&self, key: &str, default: f64, rule: &str, ok: impl Fn(f64) -> bool) -> Result<f64, ConfigError> {
        let v: f64 = self.parsed(key, default)?;
        if !(v.is_finite() && ok(v)) {
            return Err(self.error(key, format!("{rule}, got {v}")));
        }
        Ok(v)
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.f64(key, default, "must be > 0", |v| v > 0.0)
    }

    fn count(&self, key: &str, default: usize, min: usize) -> Result<usize, ConfigError> {
        let v: usize = self.parsed(key, default)?;
        if v < min {
            return Err(self.error(key, format!("must be >= {min}, got {v}")));
        }
        Ok(v)
    }

    fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some((v, _)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| self.error(key, format!("cannot parse number list `{v}`"))),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    let trimmed = line.trim_start();
    if trimmed.starts_with('#') || trimmed.starts_with(';') {
        return "";
    }
    match line.find(" #") {
        Some(k) => &line[..k],
        None => line,
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let t = Table::parse(text)?;

    let modes = match t.raw("geometry.mode") {
        None => {
            return Err(ConfigError {
                line: None,
                key: "geometry.mode".into(),
                message: "missing required key (reflection | transmission | both); every other key \
                          has a default, see --print-defaults"
                    .into(),
            })
        }
        Some(("both", _)) => Mode::ALL.to_vec(),
        Some((v, _)) => vec![v.parse::<Mode>().map_err(|e| t.error("geometry.mode", e))?],
    };

    let d = DeskLayout::default();
    let layout = DeskLayout {
        camera_distance_mm: t.positive("geometry.camera_distance_mm", d.camera_distance_mm)?,
        reflection_tilt_deg: t.f64(
            "geometry.reflection_tilt_deg",
            d.reflection_tilt_deg,
            "must lie in [0, 90)",
            |v| (0.0..90.0).contains(&v),
        )?,
        reflection_screen_distance_mm: t.positive(
            "geometry.reflection_screen_distance_mm",
            d.reflection_screen_distance_mm,
        )?,
        transmission_screen_distance_mm: t.positive(
            "geometry.transmission_screen_distance_mm",
            d.transmission_screen_distance_mm,
        )?,
        screen_width_px: t.count("geometry.screen_width_px", d.screen_width_px, 1)?,
        screen_height_px: t.count("geometry.screen_height_px", d.screen_height_px, 1)?,
        screen_pitch_mm: t.positive("geometry.screen_pitch_mm", d.screen_pitch_mm)?,
        camera_width_px: t.count("geometry.camera_width_px", d.camera_width_px, 1)?,
        camera_height_px: t.count("geometry.camera_height_px", d.camera_height_px, 1)?,
        camera_pixel_pitch_um: t.positive("geometry.camera_pixel_pitch_um", d.camera_pixel_pitch_um)?,
        focal_length_mm: t.positive("geometry.focal_length_mm", d.focal_length_mm)?,
    };
    let ambient_fraction = t.f64("geometry.ambient_fraction", 0.01, "must be >= 0", |v| v >= 0.0)?;

    let alpha = t.f64("material.alpha", 1.0, "must lie in [0, 1]", |v| (0.0..=1.0).contains(&v))?;
    let n = t.f64("material.refractive_index", 1.5, "must be >= 1", |v| v >= 1.0)?;
    let material = Material::new(alpha, n).map_err(|e| t.error("material.alpha", e.to_string()))?;

    let l0 = t.positive("patterns.l0", 1.0)?;
    let fringe = FringeParams {
        bias: t.f64("patterns.fringe_bias", 0.5 * l0, "must be >= 0", |v| v >= 0.0)?,
        amplitude: t.f64("patterns.fringe_amplitude", 0.5 * l0, "must be >= 0", |v| v >= 0.0)?,
        period: t.f64("patterns.fringe_period", 16.0, "must be >= 2", |v| v >= 2.0)?,
        steps: t.count("patterns.fringe_steps", 4, 3)?,
        orientation: match t.raw("patterns.fringe_orientation") {
            None => Orientation::X,
            Some((v, _)) => v.parse().map_err(|e: String| t.error("patterns.fringe_orientation", e))?,
        },
    };
    if fringe.bias < fringe.amplitude {
        return Err(t.error(
            "patterns.fringe_amplitude",
            format!("must not exceed fringe_bias ({}), got {}", fringe.bias, fringe.amplitude),
        ));
    }
    let core_margin = t.count("patterns.core_margin", 2, 0)?;
    let pgm_bits: u8 = t.parsed("patterns.pgm_bits", 8)?;
    if pgm_bits != 8 && pgm_bits != 16 {
        return Err(t.error("patterns.pgm_bits", format!("must be 8 or 16, got {pgm_bits}")));
    }

    let setup = OpticalSetup {
        layout,
        material,
        l0,
        ambient_fraction,
        fringe,
        core_margin,
    };
    for &mode in &modes {
        layout.geometry(mode).map_err(|e| t.error("geometry.mode", e.to_string()))?;
    }

    let sd = SweepConfig::default();
    let ws = t.list("sweep.w_values", &sd.ws)?;
    if ws.first() != Some(&0.0) || ws.windows(2).any(|p| !(p[1] > p[0])) || ws.iter().any(|w| !w.is_finite()) {
        return Err(t.error("sweep.w_values", "must start at 0 and be strictly ascending"));
    }
    let field_pitch = t.positive("sweep.field_pitch_um", sd.reflection_field.pitch_um)?;
    let field_height = t.f64("sweep.field_height_um", sd.reflection_field.height_um, "must be finite", |_| true)?;
    let sweep = SweepConfig {
        ws,
        modes: modes.clone(),
        setup: setup.clone(),
        grid: t.count("sweep.grid", sd.grid, 2)?,
        pitch: t.positive("sweep.pitch_um", sd.pitch)?,
        reflection_field: CoreField {
            size_mm: t.positive("sweep.reflection_field_mm", sd.reflection_field.size_mm)?,
            pitch_um: field_pitch,
            height_um: field_height,
        },
        transmission_field: CoreField {
            size_mm: t.positive("sweep.transmission_field_mm", sd.transmission_field.size_mm)?,
            pitch_um: field_pitch,
            height_um: field_height,
        },
    };

    let sc = ScratchConfig::default();
    let spec = ScratchSpec {
        widths: t.list("scratch.widths_um", &sc.spec.widths)?,
        length: t.positive("scratch.length_um", sc.spec.length)?,
        depth: t.f64("scratch.depth_um", sc.spec.depth, "must be >= 0", |v| v >= 0.0)?,
        spacing: t.positive("scratch.spacing_um", sc.spec.spacing)?,
        profile: GrooveProfile::Cosine,
    };
    if spec.widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(t.error("scratch.widths_um", "every width must be > 0"));
    }
    spec.validate().map_err(|e| t.error("scratch.widths_um", e.to_string()))?;
    let scratch = ScratchConfig {
        spec,
        plate_width: t.count("scratch.plate_width", sc.plate_width, 2)?,
        plate_height: t.count("scratch.plate_height", sc.plate_height, 2)?,
        pitch: t.positive("scratch.pitch_um", sc.pitch)?,
        modes: modes.clone(),
        setup: setup.clone(),
        core_pitch: t.positive("scratch.core_pitch_um", sc.core_pitch)?,
        k: t.positive("scratch.k", sc.k)?,
        profile_shift: t.count("scratch.profile_shift", sc.profile_shift, 0)?,
    };

    let render = RenderConfig {
        surface: match t.raw("render.surface") {
            None | Some(("defect", _)) => RenderSurface::Defect,
            Some(("scratch", _)) => RenderSurface::Scratch,
            Some((path, _)) => RenderSurface::File(path.to_string()),
        },
        defect_w: t.f64("render.defect_w", 10.0, "must be >= 0", |v| v >= 0.0)?,
        pattern: match t.raw("render.pattern") {
            None | Some(("type2", _)) => RenderPattern::Type2,
            Some(("uniform", _)) => RenderPattern::Uniform,
            Some(("type1", _)) => RenderPattern::Type1,
            Some((v, _)) => match v.strip_prefix("fringe").and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k < fringe.steps => RenderPattern::Fringe(k),
                _ => {
                    return Err(t.error(
                        "render.pattern",
                        format!("expected uniform, type1, type2 or fringe0..fringe{}, got `{v}`", fringe.steps - 1),
                    ))
                }
            },
        },
        core_field_mm: t.f64("render.core_field_mm", 0.0, "must be >= 0", |v| v >= 0.0)?,
        core_pitch_um: t.positive("render.core_pitch_um", 20.0)?,
    };

    let oracle = OracleConfig {
        seed: t.parsed("oracle.seed", 7)?,
        samples: t.count("oracle.samples", 1_000_000, 1)?,
        cells: t.count("oracle.cells", 8, 1)?,
        pitch_um: t.positive("oracle.pitch_um", 1.0)?,
    };

    Ok(RunConfig {
        modes,
        setup,
        pgm_bits,
        sweep,
        scratch,
        render,
        oracle,
    })
}
