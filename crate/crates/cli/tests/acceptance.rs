//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_6};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use sli_core::experiments::{
    response_sweep, scratch_experiment, DetectionReport, Item, ResponseCurve, ScratchConfig, SweepConfig,
};
use sli_core::flux::{FootprintTrace, PixelFootprint};
use sli_core::optics::{lambertian_illuminance, reflect, refract, Mode, Refraction, Vec3};
use sli_core::oracle::{monte_carlo_flat_flux, FlatPatch};
use sli_core::patterns::{binary_type1, binary_type2, core_region, uniform, ScreenDims};
use sli_core::surface::{punctate_defect, DefectParams, HeightMap};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn normalization(curve: &ResponseCurve) -> Outcome {
    let worst = curve
        .points
        .iter()
        .filter(|p| p.w == 0.0)
        .map(|p| (p.relative_value - 1.0).abs())
        .fold(0.0, f64::max);
    let n = curve.points.iter().filter(|p| p.w == 0.0).count();
    check(
        worst <= 1e-9 && n == 8,
        format!("{n} item/system baselines, max |rel - 1| = {worst:e}"),
        format!("{n} baselines, max |rel - 1| = {worst:e}"),
    )
}

fn ordering(curve: &ResponseCurve, seconds: f64) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = seconds < 60.0;
    for mode in Mode::ALL {
        let v = |w: f64, item| curve.value(w, item, mode).unwrap();
        for w in (1..=20).map(f64::from) {
            let (m, t1, u) = (v(w, Item::Modulation), v(w, Item::Type1), v(w, Item::Uniform));
            if !(m <= t1 && t1 <= u && u <= 1.0 + 1e-9) {
                ok = false;
                notes.push(format!("{mode} w={w}: mod {m} type1 {t1} uniform {u}"));
            }
        }
        let (m, t1, u) = (v(20.0, Item::Modulation), v(20.0, Item::Type1), v(20.0, Item::Uniform));
        let gaps = (t1 - m, u - t1);
        ok &= gaps.0 >= 1e-3 && gaps.1 >= 1e-3;
        notes.push(format!(
            "{mode} w=20 mod {m:.4} <= type1 {t1:.4} <= uniform {u:.4} (gaps {:.3}, {:.3})",
            gaps.0, gaps.1
        ));
    }
    notes.push(format!("single-threaded sweep {seconds:.1} s"));
    check(ok, notes.join("; "), notes.join("; "))
}

fn type2_growth(curve: &ResponseCurve) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for mode in Mode::ALL {
        let s = curve.series(Item::Type2, mode);
        let min = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let monotone = s.windows(2).all(|p| p[1].1 >= p[0].1 - 1e-6);
        ok &= min >= 1.0 - 1e-9 && monotone;
        notes.push(format!(
            "{mode}: min {min:.6}, w=20 {:.3}, non-decreasing {monotone}",
            s.last().unwrap().1
        ));
    }
    check(ok, notes.join("; "), notes.join("; "))
}

fn oracle() -> Outcome {
    let setup = sli_core::experiments::OpticalSetup::default();
    let mut ok = true;
    let mut notes = Vec::new();
    for mode in Mode::ALL {
        let g = setup.geometry(mode).unwrap();
        let flat = HeightMap::flat(8, 8, 1.0, 0.0).unwrap();
        let fp = PixelFootprint::whole_map(&g, &flat).unwrap();
        let u = uniform(ScreenDims::from(&g.screen), setup.l0).unwrap();
        let model = FootprintTrace::new(&g, &fp, &setup.material).flux(&g, &setup.material, &u).unwrap();
        let est = monte_carlo_flat_flux(
            &g,
            &setup.material,
            FlatPatch { cells: 8, pitch: 1.0 },
            setup.l0,
            1_000_000,
            7,
        );
        let rel = (est.flux - model).abs() / model;
        ok &= rel < 0.02;
        notes.push(format!("{mode} relative error {rel:.2e} (1e6 samples, seed 7)"));
    }
    check(ok, notes.join("; "), notes.join("; "))
}

fn superposition() -> Outcome {
    let setup = sli_core::experiments::OpticalSetup::default();
    let sweep = SweepConfig::default();
    let m = setup.material;
    let mut worst: f64 = 0.0;
    let mut worst_affine: f64 = 0.0;
    for mode in Mode::ALL {
        let g = setup.geometry(mode).unwrap();
        let field = match mode {
            Mode::Reflection => sweep.reflection_field,
            Mode::Transmission => sweep.transmission_field,
        };
        let core = core_region(&g, &field.map().unwrap(), &m, setup.core_margin).unwrap();
        let u = uniform(core.dims(), setup.l0).unwrap();
        let t1 = binary_type1(&core, setup.l0).unwrap();
        let t2 = binary_type2(&core, setup.l0).unwrap();
        for w in [0.0, 10.0] {
            let map = punctate_defect(&DefectParams::new(w)).unwrap();
            let fp = PixelFootprint::whole_map(&g, &map).unwrap();
            // Pattern-driven term alone.
            let g0 = g.with_env_illuminance(0.0).unwrap();
            let tr = FootprintTrace::new(&g0, &fp, &m);
            let (a, b, c) = (
                tr.flux(&g0, &m, &t1).unwrap(),
                tr.flux(&g0, &m, &t2).unwrap(),
                tr.flux(&g0, &m, &u).unwrap(),
            );
            worst = worst.max((a + b - c).abs() / c);
            // With ambient light every item carries the same additive term.
            let tr = FootprintTrace::new(&g, &fp, &m);
            let (a, b, c) = (
                tr.flux(&g, &m, &t1).unwrap(),
                tr.flux(&g, &m, &t2).unwrap(),
                tr.flux(&g, &m, &u).unwrap(),
            );
            let ambient = m.alpha() * g.env_illuminance * fp.total_area();
            worst_affine = worst_affine.max((a + b - c - ambient).abs() / c);
        }
    }
    check(
        worst <= 1e-9 && worst_affine <= 1e-9,
        format!(
            "flat and w=10, both systems: |t1 + t2 - u| / u = {worst:.1e} without ambient; \
             {worst_affine:.1e} after removing the shared ambient term"
        ),
        format!("superposition residual {worst:e}, affine residual {worst_affine:e}"),
    )
}

fn scratch_visibility(report: &DetectionReport) -> Outcome {
    let t = report.system(Mode::Transmission).unwrap();
    let (u, t2) = (t.item(Item::Uniform), t.item(Item::Type2));
    let ratio = u.contrast / t2.contrast;
    let a = ratio < 0.1;
    let b = t2.scratch_sigmas >= 5.0;
    let c = t2.components == 10;
    let r = report.system(Mode::Reflection).unwrap();
    let reference = format!(
        "reflection for reference: ratio {:.3}, {:.1} sigma, {} components",
        r.item(Item::Uniform).contrast / r.item(Item::Type2).contrast,
        r.item(Item::Type2).scratch_sigmas,
        r.item(Item::Type2).components
    );
    let msg = format!(
        "transmission: (a) uniform/type2 contrast {ratio:.4} [{}], (b) type2 scratch mean {:.1} robust sigma [{}], \
         (c) {} components at k=5 [{}]; {reference}",
        pf(a),
        t2.scratch_sigmas,
        pf(b),
        t2.components,
        pf(c)
    );
    check(a && b && c, msg.clone(), msg)
}

fn pv_comparability(report: &DetectionReport) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for s in &report.systems {
        let (t2, m) = (s.item(Item::Type2).pv, s.item(Item::Modulation).pv);
        let rel = (t2 - m).abs() / m;
        ok &= rel <= 0.3;
        notes.push(format!("{}: PV type2 {t2} vs modulation {m} ({:+.1}%)", s.system, 100.0 * (t2 - m) / m));
    }
    check(ok && report.systems.len() == 2, notes.join("; "), notes.join("; "))
}

fn radiometry() -> Outcome {
    let mut fails = Vec::new();
    if lambertian_illuminance(1.0, 1.0, 1.0, 0.0, 0.0).unwrap() != 1.0 {
        fails.push("theta = 0");
    }
    let e = lambertian_illuminance(2000.0, 0.272 * 0.272, 300.0, FRAC_PI_6, FRAC_PI_6).unwrap();
    let closed = 2000.0 * 0.272 * 0.272 * (3f64.sqrt() / 2.0).powi(2) / 300.0 / 300.0;
    if (e - closed).abs() > 1e-12 {
        fails.push("30 degrees");
    }
    let up = Vec3::z();
    if (reflect(&-up, &up).unwrap() - up).norm() > 1e-15 {
        fails.push("reflect normal incidence");
    }
    if refract(&-up, &up, 1.0 / 1.5).unwrap() != Refraction::Transmitted(-up) {
        fails.push("refract normal incidence");
    }
    // Plane of incidence over a fixed fan of directions and normals.
    for k in 0..50 {
        let a = k as f64 * 0.37;
        let n = Vec3::new(0.2 * a.sin(), 0.3 * a.cos(), 1.0).normalize();
        let d = Vec3::new(a.cos(), (2.0 * a).sin(), -1.5).normalize();
        let plane = d.cross(&n).normalize();
        let r = reflect(&d, &n).unwrap();
        let in_plane = r.dot(&plane).abs() < 1e-12
            && match refract(&d, &n, 1.0 / 1.5).unwrap() {
                Refraction::Transmitted(t) => t.dot(&plane).abs() < 1e-12,
                Refraction::TotalInternalReflection => false,
            };
        if !in_plane {
            fails.push("plane of incidence");
            break;
        }
    }
    // Glass to air: the critical angle is asin(1 / 1.5).
    let crit = (1.0f64 / 1.5).asin();
    let at = |t: f64| Vec3::new(t.sin(), 0.0, -t.cos());
    let below = refract(&at(crit - 1e-6), &up, 1.5).unwrap();
    let above = refract(&at(crit + 1e-6), &up, 1.5).unwrap();
    if !matches!(below, Refraction::Transmitted(_)) || above != Refraction::TotalInternalReflection {
        fails.push("TIR threshold");
    }
    let diag = Vec3::new(FRAC_1_SQRT_2, 0.0, -FRAC_1_SQRT_2);
    if refract(&diag, &up, 1.5).unwrap() != Refraction::TotalInternalReflection {
        fails.push("45 degree TIR");
    }
    check(
        fails.is_empty(),
        format!("E(theta=0) = 1 exactly; E(30, 30) = {e:.6e} vs closed form; reflect/refract/TIR checks"),
        format!("failed: {}", fails.join(", ")),
    )
}

fn run_cli(args: &[&str], config: &Path, out: &Path) -> Result<Vec<PathBuf>, String> {
    let output = Command::new(env!("CARGO_BIN_EXE_sli"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !output.status.success() {
        return Err(String::from_utf8_lossy(&output.stderr).into_owned());
    }
    Ok(String::from_utf8_lossy(&output.stdout).lines().map(PathBuf::from).collect())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.ini");
    fs::write(&config, sli_cli::DEFAULTS).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for cmd in ["sweep", "scratch"] {
        let a = run_cli(&[cmd], &config, &dir.path().join(format!("{cmd}_a")))?;
        let b = run_cli(&[cmd], &config, &dir.path().join(format!("{cmd}_b")))?;
        if a.len() != b.len() || a.is_empty() {
            return Err(format!("{cmd}: {} vs {} files", a.len(), b.len()));
        }
        for (fa, fb) in a.iter().zip(&b) {
            let (x, y) = (fs::read(fa).map_err(|e| e.to_string())?, fs::read(fb).map_err(|e| e.to_string())?);
            if x != y || fa.file_name() != fb.file_name() {
                return Err(format!("{} differs from {}", fa.display(), fb.display()));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} files byte-identical across two runs of `sweep` and `scratch`"))
}

fn pf(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let curve = pool.install(|| response_sweep(&SweepConfig::default()));
    let seconds = start.elapsed().as_secs_f64();
    match curve {
        Ok(curve) => {
            results.push(("1 normalization identity", normalization(&curve)));
            results.push(("2 response ordering", ordering(&curve, seconds)));
            results.push(("3 type-2 growth", type2_growth(&curve)));
        }
        Err(e) => {
            for name in ["1 normalization identity", "2 response ordering", "3 type-2 growth"] {
                results.push((name, Err(format!("sweep failed: {e}"))));
            }
        }
    }
    results.push(("4 Monte Carlo oracle", oracle()));
    results.push(("5 superposition", superposition()));
    match scratch_experiment(&ScratchConfig::default()) {
        Ok(report) => {
            results.push(("6 scratch visibility", scratch_visibility(&report)));
            results.push(("7 PV comparability", pv_comparability(&report)));
        }
        Err(e) => {
            results.push(("6 scratch visibility", Err(format!("scratch failed: {e}"))));
            results.push(("7 PV comparability", Err(format!("scratch failed: {e}"))));
        }
    }
    results.push(("8 radiometric identities", radiometry()));
    results.push(("9 determinism", determinism()));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(msg) => println!("PASS  {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
