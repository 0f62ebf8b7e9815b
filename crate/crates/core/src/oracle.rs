//! Forward Monte Carlo estimate of the flux a flat patch collects under a
//! uniform screen, built without the reverse tracer.
//!
//! Points are drawn uniformly on the patch and on the screen pixel it sees;
//! the pixel is found from closed forms (mirror image of the pinhole for
//! reflection, scalar Snell's law for transmission). Each sample scores
//! `L cos(t1) cos(t2) / r^2`; the ambient term is added analytically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::optics::{Mode, SystemGeometry, Vec3, UM};
use crate::surface::Material;

/// Flat square patch of `cells x cells` Elements at `pitch` micrometers,
/// centered on the surface origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatPatch {
    pub cells: usize,
    pub pitch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub flux: f64,
    /// Standard error of the screen term.
    pub std_error: f64,
    pub samples: usize,
    /// Samples whose ray left the screen.
    pub missed: usize,
}

pub fn monte_carlo_flat_flux(
    geom: &SystemGeometry,
    material: &Material,
    patch: FlatPatch,
    l0: f64,
    samples: usize,
    seed: u64,
) -> OracleEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = &geom.surface;
    let n = s.normal();
    let sc = &geom.screen;
    let ns = sc.frame.u.cross(&sc.frame.v);
    let half = patch.cells as f64 * patch.pitch / 2.0;
    let pinhole = geom.camera.pinhole;
    let image = pinhole - n * (2.0 * (pinhole - s.origin).dot(&n));
    let p = sc.pixel_pitch_mm;

    let (mut sum, mut sum_sq, mut missed) = (0.0, 0.0, 0usize);
    for _ in 0..samples {
        let x = rng.gen_range(-half..half);
        let y = rng.gen_range(-half..half);
        let q = s.origin + (s.u * x + s.v * y) * UM;
        let view = q - pinhole;
        let cos_view = -view.dot(&n) / view.norm();
        let dir = match geom.mode {
            Mode::Reflection => q - image,
            Mode::Transmission => {
                let d = view.normalize();
                let tangent = d + n * cos_view;
                let sin_t = tangent.norm() / material.refractive_index();
                if sin_t >= 1.0 {
                    missed += 1;
                    continue;
                }
                let along = tangent.try_normalize(1e-15).unwrap_or_else(Vec3::zeros);
                along * sin_t - n * (1.0 - sin_t * sin_t).sqrt()
            }
        };
        let t = (sc.frame.origin - q).dot(&ns) / dir.dot(&ns);
        if !(t > 0.0) {
            missed += 1;
            continue;
        }
        let hit = q + dir * t - sc.frame.origin;
        let a = (hit.dot(&sc.frame.u) / p).round();
        let b = (hit.dot(&sc.frame.v) / p).round();
        let (hw, hh) = ((sc.width_px / 2) as f64, (sc.height_px / 2) as f64);
        if a + hw < 0.0 || b + hh < 0.0 || a + hw >= sc.width_px as f64 || b + hh >= sc.height_px as f64 {
            missed += 1;
            continue;
        }
        let e = sc.frame.origin
            + sc.frame.u * ((a + rng.gen_range(-0.5..0.5)) * p)
            + sc.frame.v * ((b + rng.gen_range(-0.5..0.5)) * p);
        let line = e - q;
        let r2 = line.norm_squared();
        let cos1 = (line.dot(&ns) / r2.sqrt()).abs();
        let cos2 = match geom.mode {
            Mode::Reflection => line.dot(&n) / r2.sqrt(),
            Mode::Transmission => cos_view,
        };
        let v = l0 * cos1 * cos2.max(0.0) / r2;
        sum += v;
        sum_sq += v * v;
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    let area = (2.0 * half).powi(2);
    let scale = material.alpha() * area * geom.source_area;
    OracleEstimate {
        flux: scale * mean + material.alpha() * geom.env_illuminance * area,
        std_error: scale * (var / m).sqrt(),
        samples,
        missed,
    }
}
