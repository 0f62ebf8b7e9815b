//! Ray geometry and Lambertian radiometry for the screen/surface/camera rig.
//!
//! World coordinates are millimeters. The inspected surface sits in the
//! plane of its [`Frame`]; the display screen is a second plane whose
//! normal faces the surface; the camera is an ideal pinhole. Incident light
//! is found by tracing rays backwards from the camera, bouncing or bending
//! them at each Element and intersecting the result with the screen.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use nalgebra::Vector3;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::surface::{HeightMap, LocalFacet, Material};

pub type Vec3 = Vector3<f64>;

const UNIT_TOLERANCE: f64 = 1e-9;
/// Micrometers to millimeters.
pub(crate) const UM: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("{0} vector is not unit length (norm {1})")]
    NotUnit(&'static str, f64),
    #[error("illuminance is singular at zero distance")]
    Singularity,
    #[error("{0}")]
    Domain(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Reflection,
    Transmission,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Reflection, Mode::Transmission];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Reflection => "reflection",
            Mode::Transmission => "transmission",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reflection" => Ok(Mode::Reflection),
            "transmission" => Ok(Mode::Transmission),
            other => Err(format!("unknown system mode `{other}`")),
        }
    }
}

/// Plane origin plus an orthonormal in-plane basis; the plane normal is
/// `u x v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: Vec3,
    pub u: Vec3,
    pub v: Vec3,
}

impl Frame {
    pub fn new(origin: Vec3, u: Vec3, v: Vec3) -> Result<Self, OpticsError> {
        let ok = (u.norm() - 1.0).abs() < UNIT_TOLERANCE
            && (v.norm() - 1.0).abs() < UNIT_TOLERANCE
            && u.dot(&v).abs() < UNIT_TOLERANCE;
        if !ok {
            return Err(OpticsError::InvalidGeometry("frame basis is not orthonormal".into()));
        }
        Ok(Self { origin, u, v })
    }

    pub fn xy() -> Self {
        Self {
            origin: Vec3::zeros(),
            u: Vec3::x(),
            v: Vec3::y(),
        }
    }

    #[inline]
    pub fn normal(&self) -> Vec3 {
        self.u.cross(&self.v)
    }

    /// Rotates the in-plane basis about `v` by `angle` radians.
    pub fn tilted_about_v(&self, angle: f64) -> Self {
        let n = self.normal();
        let (s, c) = angle.sin_cos();
        Self {
            origin: self.origin,
            u: self.u * c - n * s,
            v: self.v,
        }
    }
}

/// Ideal pinhole camera aimed at a target point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pinhole: Vec3,
    forward: Vec3,
    right: Vec3,
    down: Vec3,
    pub focal_length_mm: f64,
    pub pixel_pitch_um: f64,
    pub width_px: usize,
    pub height_px: usize,
}

impl Camera {
    pub fn looking_at(
        pinhole: Vec3,
        target: Vec3,
        focal_length_mm: f64,
        pixel_pitch_um: f64,
        width_px: usize,
        height_px: usize,
    ) -> Result<Self, OpticsError> {
        let forward = (target - pinhole)
            .try_normalize(1e-12)
            .ok_or_else(|| OpticsError::InvalidGeometry("camera target coincides with pinhole".into()))?;
        let right = forward
            .cross(&Vec3::y())
            .try_normalize(1e-9)
            .unwrap_or_else(|| forward.cross(&Vec3::x()).normalize());
        let down = right.cross(&forward);
        if !(focal_length_mm > 0.0 && pixel_pitch_um > 0.0 && width_px > 0 && height_px > 0) {
            return Err(OpticsError::InvalidGeometry(
                "camera focal length, pixel pitch and sensor size must be positive".into(),
            ));
        }
        Ok(Self {
            pinhole,
            forward,
            right,
            down,
            focal_length_mm,
            pixel_pitch_um,
            width_px,
            height_px,
        })
    }

    pub fn forward(&self) -> Vec3 {
        self.forward
    }

    /// Continuous sensor coordinates (pixels) of a world point; pixel
    /// `(i, j)` spans `[i, i + 1) x [j, j + 1)`.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let d = p - self.pinhole;
        let z = d.dot(&self.forward);
        if z <= 0.0 {
            return None;
        }
        let scale = self.focal_length_mm / (z * self.pixel_pitch_um * UM);
        Some((
            d.dot(&self.right) * scale + self.width_px as f64 / 2.0,
            d.dot(&self.down) * scale + self.height_px as f64 / 2.0,
        ))
    }

    /// Unit direction of the ray through sensor coordinates `(x, y)`.
    pub fn ray_through(&self, x: f64, y: f64) -> Vec3 {
        let pitch = self.pixel_pitch_um * UM;
        (self.forward * self.focal_length_mm
            + self.right * ((x - self.width_px as f64 / 2.0) * pitch)
            + self.down * ((y - self.height_px as f64 / 2.0) * pitch))
            .normalize()
    }
}

/// Display screen: a grid of square pixels on a plane. The frame origin is
/// the center of pixel `(width / 2, height / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Screen {
    pub frame: Frame,
    pub width_px: usize,
    pub height_px: usize,
    pub pixel_pitch_mm: f64,
}

impl Screen {
    #[inline]
    pub fn pixel_at(&self, hit: &Vec3) -> Option<(usize, usize)> {
        let rel = hit - self.frame.origin;
        let i = (rel.dot(&self.frame.u) / self.pixel_pitch_mm).round() + (self.width_px / 2) as f64;
        let j = (rel.dot(&self.frame.v) / self.pixel_pitch_mm).round() + (self.height_px / 2) as f64;
        if i < 0.0 || j < 0.0 || i >= self.width_px as f64 || j >= self.height_px as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> Vec3 {
        let a = (i as f64 - (self.width_px / 2) as f64) * self.pixel_pitch_mm;
        let b = (j as f64 - (self.height_px / 2) as f64) * self.pixel_pitch_mm;
        self.frame.origin + self.frame.u * a + self.frame.v * b
    }
}

/// Poses and radiometric constants of one inspection rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemGeometry {
    pub mode: Mode,
    pub camera: Camera,
    pub screen: Screen,
    /// Frame of the inspected surface; HeightMap coordinates live in it.
    pub surface: Frame,
    /// Area of one constant-luminance source patch, mm^2.
    pub source_area: f64,
    /// Ambient illuminance reaching every Element (relative units).
    pub env_illuminance: f64,
}

impl SystemGeometry {
    pub fn new(
        mode: Mode,
        camera: Camera,
        screen: Screen,
        surface: Frame,
        source_area: f64,
        env_illuminance: f64,
    ) -> Result<Self, OpticsError> {
        let n = surface.normal();
        if ((camera.pinhole - surface.origin).dot(&n)).abs() < 1e-9 {
            return Err(OpticsError::InvalidGeometry("camera pinhole lies on the surface plane".into()));
        }
        let ns = screen.frame.normal();
        let parallel = ns.cross(&n).norm() < 1e-12;
        if parallel && ((screen.frame.origin - surface.origin).dot(&n)).abs() < 1e-9 {
            return Err(OpticsError::InvalidGeometry("screen plane coincides with surface plane".into()));
        }
        if !(source_area > 0.0 && source_area.is_finite()) {
            return Err(OpticsError::InvalidGeometry(format!(
                "source patch area must be > 0, got {source_area}"
            )));
        }
        if !(env_illuminance >= 0.0 && env_illuminance.is_finite()) {
            return Err(OpticsError::InvalidGeometry(format!(
                "environment illuminance must be >= 0, got {env_illuminance}"
            )));
        }
        if !(screen.pixel_pitch_mm > 0.0 && screen.width_px > 0 && screen.height_px > 0) {
            return Err(OpticsError::InvalidGeometry("screen size and pitch must be positive".into()));
        }
        Ok(Self {
            mode,
            camera,
            screen,
            surface,
            source_area,
            env_illuminance,
        })
    }

    pub fn with_env_illuminance(mut self, c: f64) -> Result<Self, OpticsError> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(OpticsError::InvalidGeometry(format!(
                "environment illuminance must be >= 0, got {c}"
            )));
        }
        self.env_illuminance = c;
        Ok(self)
    }

    /// Illuminance a flat Element at the surface origin receives from a
    /// uniform screen of luminance `l0`; zero when its ray misses the screen.
    pub fn flat_element_illuminance(&self, l0: f64, material: &Material) -> f64 {
        let facet = Facet {
            center: self.surface.origin,
            normal: self.surface.normal(),
            area: 1.0,
        };
        match trace_element(self, &facet, material) {
            ElementTrace::Screen(hit) => l0 * self.source_area * hit.cos_theta1 * hit.cos_theta2 / (hit.distance * hit.distance),
            ElementTrace::Environment(_) => 0.0,
        }
    }

    /// Lifts a surface-frame facet (micrometers) into world millimeters.
    #[inline]
    pub fn world_facet(&self, f: &LocalFacet) -> Facet {
        let s = &self.surface;
        let n = s.normal();
        Facet {
            center: s.origin + (s.u * f.center.x + s.v * f.center.y + n * f.center.z) * UM,
            normal: s.u * f.normal.x + s.v * f.normal.y + n * f.normal.z,
            area: f.area,
        }
    }

    /// World position of a surface-frame point given in micrometers.
    #[inline]
    pub fn surface_point(&self, x: f64, y: f64, z: f64) -> Vec3 {
        let s = &self.surface;
        s.origin + (s.u * x + s.v * y + s.normal() * z) * UM
    }

    /// Intersection of a world ray with the surface plane, in surface-frame
    /// micrometers.
    pub fn surface_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let n = self.surface.normal();
        let denom = dir.dot(&n);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = (self.surface.origin - origin).dot(&n) / denom;
        if t <= 0.0 {
            return None;
        }
        let rel = origin + dir * t - self.surface.origin;
        Some((rel.dot(&self.surface.u) / UM, rel.dot(&self.surface.v) / UM))
    }

    /// Stable hex digest of every geometric and radiometric parameter.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        let mut out = String::with_capacity(16);
        for b in &digest[..8] {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

/// Parameters of the default desk-scale rigs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeskLayout {
    pub camera_distance_mm: f64,
    pub reflection_tilt_deg: f64,
    pub reflection_screen_distance_mm: f64,
    pub transmission_screen_distance_mm: f64,
    pub screen_width_px: usize,
    pub screen_height_px: usize,
    pub screen_pitch_mm: f64,
    pub camera_width_px: usize,
    pub camera_height_px: usize,
    pub camera_pixel_pitch_um: f64,
    pub focal_length_mm: f64,
}

impl Default for DeskLayout {
    fn default() -> Self {
        Self {
            camera_distance_mm: 300.0,
            reflection_tilt_deg: 15.0,
            reflection_screen_distance_mm: 200.0,
            transmission_screen_distance_mm: 200.0,
            screen_width_px: 1920,
            screen_height_px: 1080,
            screen_pitch_mm: 0.272,
            camera_width_px: 3384,
            camera_height_px: 2710,
            camera_pixel_pitch_um: 5.5,
            focal_length_mm: 25.0,
        }
    }
}

impl DeskLayout {
    /// Surface in the world xy-plane at the origin. Reflection: camera and
    /// screen tilted by the same angle on opposite sides of the normal, the
    /// screen facing the origin. Transmission: camera on +z, screen on -z,
    /// both on the axis. `env_illuminance` starts at 0.
    pub fn geometry(&self, mode: Mode) -> Result<SystemGeometry, OpticsError> {
        let surface = Frame::xy();
        let (pinhole, screen_frame) = match mode {
            Mode::Reflection => {
                let t = self.reflection_tilt_deg.to_radians();
                let (s, c) = t.sin_cos();
                let pinhole = Vec3::new(-s, 0.0, c) * self.camera_distance_mm;
                let origin = Vec3::new(s, 0.0, c) * self.reflection_screen_distance_mm;
                // u x v = -(sin t, 0, cos t): the screen faces the origin.
                let frame = Frame::new(origin, Vec3::new(c, 0.0, -s), Vec3::new(0.0, -1.0, 0.0))?;
                (pinhole, frame)
            }
            Mode::Transmission => {
                let pinhole = Vec3::new(0.0, 0.0, self.camera_distance_mm);
                let origin = Vec3::new(0.0, 0.0, -self.transmission_screen_distance_mm);
                (pinhole, Frame::new(origin, Vec3::x(), Vec3::y())?)
            }
        };
        let camera = Camera::looking_at(
            pinhole,
            surface.origin,
            self.focal_length_mm,
            self.camera_pixel_pitch_um,
            self.camera_width_px,
            self.camera_height_px,
        )?;
        let screen = Screen {
            frame: screen_frame,
            width_px: self.screen_width_px,
            height_px: self.screen_height_px,
            pixel_pitch_mm: self.screen_pitch_mm,
        };
        SystemGeometry::new(
            mode,
            camera,
            screen,
            surface,
            self.screen_pitch_mm * self.screen_pitch_mm,
            0.0,
        )
    }
}

/// A flat Element in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Facet {
    /// Millimeters.
    pub center: Vec3,
    pub normal: Vec3,
    /// Square micrometers.
    pub area: f64,
}

impl Facet {
    pub fn from_map(geom: &SystemGeometry, map: &HeightMap, i: usize, j: usize) -> Facet {
        geom.world_facet(&map.facet_unchecked(i, j))
    }
}

fn check_unit(name: &'static str, v: &Vec3) -> Result<(), OpticsError> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE || !n.is_finite() {
        return Err(OpticsError::NotUnit(name, n));
    }
    Ok(())
}

/// Mirror reflection of direction `d` about normal `n`.
pub fn reflect(d: &Vec3, n: &Vec3) -> Result<Vec3, OpticsError> {
    check_unit("direction", d)?;
    check_unit("normal", n)?;
    Ok(reflect_unchecked(d, n))
}

#[inline]
fn reflect_unchecked(d: &Vec3, n: &Vec3) -> Vec3 {
    d - n * (2.0 * d.dot(n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Refraction {
    Transmitted(Vec3),
    TotalInternalReflection,
}

/// Snell refraction of `d` through a surface with normal `n` (facing the
/// incoming ray) for index ratio `eta = n1 / n2`.
pub fn refract(d: &Vec3, n: &Vec3, eta: f64) -> Result<Refraction, OpticsError> {
    check_unit("direction", d)?;
    check_unit("normal", n)?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(OpticsError::Domain(format!("index ratio must be > 0, got {eta}")));
    }
    Ok(refract_unchecked(d, n, eta))
}

#[inline]
fn refract_unchecked(d: &Vec3, n: &Vec3, eta: f64) -> Refraction {
    let cos_i = -d.dot(n);
    let k = 1.0 - eta * eta * (1.0 - cos_i * cos_i);
    if k < 0.0 {
        return Refraction::TotalInternalReflection;
    }
    Refraction::Transmitted(d * eta + n * (eta * cos_i - k.sqrt()))
}

fn lambert_cos(theta: f64, name: &str) -> Result<f64, OpticsError> {
    if !(0.0..=FRAC_PI_2).contains(&theta) {
        return Err(OpticsError::Domain(format!("{name} = {theta} outside [0, pi/2]")));
    }
    Ok(if theta == FRAC_PI_2 { 0.0 } else { theta.cos() })
}

/// Illuminance at distance `r` from a Lambertian patch of luminance
/// `luminance` and area `area`: `L A cos(theta1) cos(theta2) / r^2`.
pub fn lambertian_illuminance(
    luminance: f64,
    area: f64,
    r: f64,
    theta1: f64,
    theta2: f64,
) -> Result<f64, OpticsError> {
    if r == 0.0 {
        return Err(OpticsError::Singularity);
    }
    if !(r > 0.0) || luminance < 0.0 || area < 0.0 {
        return Err(OpticsError::Domain(
            "distance must be > 0 and luminance, area >= 0".into(),
        ));
    }
    Ok(luminance * area * lambert_cos(theta1, "theta1")? * lambert_cos(theta2, "theta2")? / (r * r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvCause {
    /// The outgoing ray never reaches the screen plane or lands off the panel.
    MissedScreen,
    TotalInternalReflection,
    /// The facet faces away from the camera.
    Backfacing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenHit {
    pub pixel: (usize, usize),
    /// Path length from the Element to the screen, mm.
    pub distance: f64,
    pub cos_theta1: f64,
    pub cos_theta2: f64,
}

impl ScreenHit {
    /// Angle between the screen normal and the ray.
    pub fn theta1(&self) -> f64 {
        self.cos_theta1.clamp(-1.0, 1.0).acos()
    }

    /// Angle between the Element normal and the ray on the camera side.
    pub fn theta2(&self) -> f64 {
        self.cos_theta2.clamp(-1.0, 1.0).acos()
    }

    /// Geometry factor `A_s cos(theta1) cos(theta2) / r^2`.
    #[inline]
    pub fn coupling(&self, source_area: f64) -> f64 {
        source_area * self.cos_theta1 * self.cos_theta2 / (self.distance * self.distance)
    }
}

/// Where an Element's incident light comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementTrace {
    Screen(ScreenHit),
    Environment(EnvCause),
}

/// Reverse-traces the camera ray through `element` to the screen.
///
/// Reflection bounces the ray about the facet normal; transmission bends it
/// into the material (single interface). `theta2` is measured on the camera
/// side of the Element, where it equals the angle of incidence for a mirror.
pub fn trace_element(geom: &SystemGeometry, element: &Facet, material: &Material) -> ElementTrace {
    let d = (element.center - geom.camera.pinhole).normalize();
    let n = element.normal;
    let cos_view = -d.dot(&n);
    if cos_view <= 0.0 {
        return ElementTrace::Environment(EnvCause::Backfacing);
    }
    let out = match geom.mode {
        Mode::Reflection => reflect_unchecked(&d, &n),
        Mode::Transmission => match refract_unchecked(&d, &n, 1.0 / material.refractive_index()) {
            Refraction::Transmitted(t) => t,
            Refraction::TotalInternalReflection => {
                return ElementTrace::Environment(EnvCause::TotalInternalReflection)
            }
        },
    };
    let ns = geom.screen.frame.normal();
    let denom = out.dot(&ns);
    // The screen emits from its front face only.
    if denom >= -1e-12 {
        return ElementTrace::Environment(EnvCause::MissedScreen);
    }
    let t = (geom.screen.frame.origin - element.center).dot(&ns) / denom;
    if t <= 0.0 {
        return ElementTrace::Environment(EnvCause::MissedScreen);
    }
    let hit = element.center + out * t;
    match geom.screen.pixel_at(&hit) {
        Some(pixel) => ElementTrace::Screen(ScreenHit {
            pixel,
            distance: t,
            cos_theta1: -denom / out.norm(),
            cos_theta2: cos_view,
        }),
        None => ElementTrace::Environment(EnvCause::MissedScreen),
    }
}
