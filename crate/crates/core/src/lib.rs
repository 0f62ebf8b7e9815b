//! Simulation of screen-based structured light inspection of smooth
//! surfaces: display patterns, reverse ray tracing, per-pixel flux and the
//! defect experiments built on top of them.

pub mod experiments;
pub mod flux;
pub mod io;
pub mod optics;
pub mod oracle;
pub mod patterns;
pub mod surface;
