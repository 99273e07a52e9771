//! Monte Carlo simulation and analysis for quantum-correlation beam tracking.
//!
//! The crate follows the measurement chain end to end:
//!
//! * [`source`] draws ground-truth photons, either correlated pairs from a
//!   double-Gaussian biphoton model or single photons from a classical laser;
//! * [`camera`] turns them into pixelated, jittered, efficiency-thinned
//!   time-tagged events and defines the binary event file;
//! * [`coincidence`] matches signal and idler events in time and space;
//! * [`tracking`] holds the centroid estimators, uncertainty products and
//!   bounds;
//! * [`optics`] is the ray-transfer algebra behind trajectory changes and the
//!   two-laser overlap bound;
//! * [`scenarios`] wires everything into configurable experiments driven by
//!   the `qcbt` binary.
//!
//! Units are fixed throughout: positions in μm, transverse wavenumbers in
//! μm⁻¹ (ħ = 1), times in ns unless a name says otherwise.

pub mod camera;
pub mod coincidence;
pub mod error;
pub mod optics;
pub mod scenarios;
pub mod source;
pub mod tracking;

pub use error::{Error, Result};

/// Two-component vector used for transverse coordinates, `(x, y)` in the
/// position plane or `(u, v)` in the momentum plane.
pub type Vec2 = [f64; 2];

/// The crystal plane a photon is imaged onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    /// Near field (image of the crystal), coordinates in μm.
    Position,
    /// Far field (Fourier plane), coordinates in μm⁻¹.
    Momentum,
}

impl Plane {
    pub const ALL: [Plane; 2] = [Plane::Position, Plane::Momentum];

    pub fn as_str(self) -> &'static str {
        match self {
            Plane::Position => "position",
            Plane::Momentum => "momentum",
        }
    }
}

/// Which arm of the setup a detection belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// Photon that traverses the monitored channel.
    Signal,
    /// Local reference photon.
    Idler,
    Unknown,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Signal => "signal",
            Arm::Idler => "idler",
            Arm::Unknown => "unknown",
        }
    }
}
