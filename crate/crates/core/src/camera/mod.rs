//! Time-tagging camera model.
//!
//! One sensor carries four rectangular regions, one per (plane, arm). A
//! photon survives with its arm's efficiency, is quantized to the pixel grid
//! of its region and gets a Gaussian-jittered timestamp rounded to whole ns.
//! Physical coordinates are centered on each region: `coord = 0` sits on the
//! boundary between the two central pixels.

mod background;
mod format;

pub use background::{inject_background, BackgroundSpec, BeamSpot, RegionKey};
pub use format::{
    read_events, read_events_file, write_events, write_events_csv, write_events_file, EventFile, FORMAT_VERSION,
    HEADER_LEN, MAGIC, RECORD_LEN,
};

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::source::{Origin, TruthPhoton};
use crate::{Arm, Error, Plane, Result, Vec2};

/// Pixel rectangle `[x0, x0 + width) × [y0, y0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl Region {
    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x0 && px < self.x0 + self.width && py >= self.y0 && py < self.y0 + self.height
    }

    pub fn pixel_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    fn overlaps(&self, other: &Region) -> bool {
        self.x0 < other.x0 + other.width
            && other.x0 < self.x0 + self.width
            && self.y0 < other.y0 + other.height
            && other.y0 < self.y0 + self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionMap {
    pub position_signal: Region,
    pub position_idler: Region,
    pub momentum_signal: Region,
    pub momentum_idler: Region,
}

impl RegionMap {
    /// Splits an `nx × ny` sensor into four quadrants: position plane on the
    /// top row, momentum plane on the bottom, signal on the left.
    pub fn quadrants(nx: u32, ny: u32) -> Self {
        let (w, h) = (nx / 2, ny / 2);
        let r = |x0, y0| Region { x0, y0, width: w, height: h };
        RegionMap {
            position_signal: r(0, 0),
            position_idler: r(w, 0),
            momentum_signal: r(0, h),
            momentum_idler: r(w, h),
        }
    }

    pub fn get(&self, plane: Plane, arm: Arm) -> Option<&Region> {
        match (plane, arm) {
            (Plane::Position, Arm::Signal) => Some(&self.position_signal),
            (Plane::Position, Arm::Idler) => Some(&self.position_idler),
            (Plane::Momentum, Arm::Signal) => Some(&self.momentum_signal),
            (Plane::Momentum, Arm::Idler) => Some(&self.momentum_idler),
            (_, Arm::Unknown) => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Plane, Arm, &Region)> {
        [
            (Plane::Position, Arm::Signal, &self.position_signal),
            (Plane::Position, Arm::Idler, &self.position_idler),
            (Plane::Momentum, Arm::Signal, &self.momentum_signal),
            (Plane::Momentum, Arm::Idler, &self.momentum_idler),
        ]
        .into_iter()
    }

    /// The (plane, arm) owning a pixel, if any.
    pub fn locate(&self, px: u32, py: u32) -> Option<(Plane, Arm)> {
        self.iter().find(|(_, _, r)| r.contains(px, py)).map(|(p, a, _)| (p, a))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraParams {
    /// Sensor size `(nx, ny)` in pixels.
    pub pixels: [u32; 2],
    /// Position-plane pixel pitch, μm/pixel.
    pub pitch: f64,
    /// Momentum-plane calibration, μm⁻¹/pixel.
    pub k_per_pixel: f64,
    /// RMS timestamp jitter, ns.
    pub jitter_sigma: f64,
    pub efficiency_signal: f64,
    pub efficiency_idler: f64,
    pub camera_id: u16,
    pub regions: RegionMap,
}

impl Default for CameraParams {
    fn default() -> Self {
        CameraParams::tpx3()
    }
}

impl CameraParams {
    /// 256×256 sensor, 55 μm pitch, 7 ns timing. The momentum calibration
    /// puts a 1.06×10⁻³ μm⁻¹ correlation width at 0.74 pixels.
    pub fn tpx3() -> Self {
        CameraParams {
            pixels: [256, 256],
            pitch: 55.0,
            k_per_pixel: 1.43e-3,
            jitter_sigma: 7.0,
            efficiency_signal: 0.04,
            efficiency_idler: 0.04,
            camera_id: 0,
            regions: RegionMap::quadrants(256, 256),
        }
    }

    /// A sensor fine enough that pixel quantization is negligible next to
    /// the beam and correlation widths (1 μm, 2×10⁻⁵ μm⁻¹ per pixel), with
    /// unit efficiency. Timing matches [`CameraParams::tpx3`].
    pub fn high_resolution() -> Self {
        CameraParams {
            pixels: [32768, 32768],
            pitch: 1.0,
            k_per_pixel: 2e-5,
            efficiency_signal: 1.0,
            efficiency_idler: 1.0,
            camera_id: 1,
            regions: RegionMap::quadrants(32768, 32768),
            ..CameraParams::tpx3()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [nx, ny] = self.pixels;
        if nx == 0 || ny == 0 || nx > 65536 || ny > 65536 {
            return Err(Error::invalid(format!("sensor size must be within 1..=65536 pixels, got {nx}×{ny}")));
        }
        if !(self.pitch.is_finite() && self.pitch > 0.0) || !(self.k_per_pixel.is_finite() && self.k_per_pixel > 0.0) {
            return Err(Error::invalid("pixel pitch and momentum calibration must be positive"));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(Error::invalid("timing jitter must be non-negative"));
        }
        for e in [self.efficiency_signal, self.efficiency_idler] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::invalid(format!("efficiency {e} outside [0, 1]")));
            }
        }
        let regions: Vec<_> = self.regions.iter().collect();
        for (i, (p, a, r)) in regions.iter().enumerate() {
            if r.width == 0 || r.height == 0 || r.x0 + r.width > nx || r.y0 + r.height > ny {
                return Err(Error::invalid(format!("{} {} region {r:?} does not fit the sensor", p.as_str(), a.as_str())));
            }
            for (q, b, s) in &regions[i + 1..] {
                if r.overlaps(s) {
                    return Err(Error::invalid(format!(
                        "regions {} {} and {} {} overlap",
                        p.as_str(),
                        a.as_str(),
                        q.as_str(),
                        b.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Physical size of one pixel in `plane` units.
    pub fn scale(&self, plane: Plane) -> f64 {
        match plane {
            Plane::Position => self.pitch,
            Plane::Momentum => self.k_per_pixel,
        }
    }

    pub fn efficiency(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Signal => self.efficiency_signal,
            Arm::Idler => self.efficiency_idler,
            Arm::Unknown => 1.0,
        }
    }

    /// Pixel hit by a physical coordinate, or `None` outside the region.
    pub fn to_pixel(&self, plane: Plane, arm: Arm, coord: Vec2) -> Option<(u16, u16)> {
        let region = self.regions.get(plane, arm)?;
        let scale = self.scale(plane);
        let ix = (coord[0] / scale).floor() + (region.width / 2) as f64;
        let iy = (coord[1] / scale).floor() + (region.height / 2) as f64;
        if !(ix >= 0.0 && ix < region.width as f64 && iy >= 0.0 && iy < region.height as f64) {
            return None;
        }
        Some(((region.x0 + ix as u32) as u16, (region.y0 + iy as u32) as u16))
    }

    /// Physical coordinate of a pixel center.
    pub fn pixel_center(&self, plane: Plane, arm: Arm, px: u16, py: u16) -> Option<Vec2> {
        let region = self.regions.get(plane, arm)?;
        let scale = self.scale(plane);
        let fx = px as f64 - region.x0 as f64 - (region.width / 2) as f64 + 0.5;
        let fy = py as f64 - region.y0 as f64 - (region.height / 2) as f64 + 0.5;
        Some([fx * scale, fy * scale])
    }

    /// Physical coordinate of an event, looking the region up from the pixel
    /// when the arm is unknown.
    pub fn event_coord(&self, ev: &PhotonEvent) -> Option<Vec2> {
        let (plane, arm) = match ev.arm {
            Arm::Unknown => self.regions.locate(ev.px as u32, ev.py as u32)?,
            arm => (ev.plane, arm),
        };
        self.pixel_center(plane, arm, ev.px, ev.py)
    }
}

/// One time-tagged detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhotonEvent {
    /// ns
    pub t: u64,
    pub plane: Plane,
    pub arm: Arm,
    pub px: u16,
    pub py: u16,
    /// Provenance for validation; not part of the file format.
    pub truth: Option<Origin>,
}

impl PhotonEvent {
    /// Total order used for sorting and merging.
    pub fn key(&self) -> (u64, Plane, Arm, u16, u16) {
        (self.t, self.plane, self.arm, self.px, self.py)
    }
}

/// Stable sort by [`PhotonEvent::key`].
pub fn sort_events(events: &mut [PhotonEvent]) {
    events.sort_by_key(PhotonEvent::key);
}

/// Applies efficiency, pixelization and timing jitter, counting photons that
/// fall outside their region.
#[derive(Debug, Clone)]
pub struct Detector {
    params: CameraParams,
    detected: u64,
    lost: u64,
    clipped: u64,
}

impl Detector {
    pub fn new(params: CameraParams) -> Result<Self> {
        params.validate()?;
        Ok(Detector { params, detected: 0, lost: 0, clipped: 0 })
    }

    pub fn params(&self) -> &CameraParams {
        &self.params
    }

    pub fn detected(&self) -> u64 {
        self.detected
    }

    /// Photons removed by the efficiency draw.
    pub fn lost(&self) -> u64 {
        self.lost
    }

    /// Photons that survived the efficiency draw but missed their region.
    pub fn clipped(&self) -> u64 {
        self.clipped
    }

    pub fn detect<R: Rng + ?Sized>(&mut self, photon: &TruthPhoton, rng: &mut R) -> Option<PhotonEvent> {
        if !self.survives(photon.arm, rng) {
            return None;
        }
        self.place(photon, rng)
    }

    /// The efficiency draw on its own. Callers that thin first can skip
    /// building photons that would be lost, then finish with
    /// [`Detector::place`].
    pub fn survives<R: Rng + ?Sized>(&mut self, arm: Arm, rng: &mut R) -> bool {
        let eff = self.params.efficiency(arm);
        if eff < 1.0 && rng.random::<f64>() >= eff {
            self.lost += 1;
            return false;
        }
        true
    }

    /// Records `n` photons removed by thinning done outside the detector.
    pub fn record_lost(&mut self, n: u64) {
        self.lost += n;
    }

    /// Pixelization and timing for a photon that already survived thinning.
    pub fn place<R: Rng + ?Sized>(&mut self, photon: &TruthPhoton, rng: &mut R) -> Option<PhotonEvent> {
        let Some((px, py)) = self.params.to_pixel(photon.plane, photon.arm, photon.coord) else {
            self.clipped += 1;
            return None;
        };
        let mut t = photon.t;
        if self.params.jitter_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            t += self.params.jitter_sigma * z;
        }
        self.detected += 1;
        Some(PhotonEvent {
            t: t.round().max(0.0) as u64,
            plane: photon.plane,
            arm: photon.arm,
            px,
            py,
            truth: Some(photon.origin),
        })
    }
}

/// Stable k-way merge of timestamp-sorted streams. Equal timestamps are
/// ordered by (plane, arm, pixel), then by stream order.
pub fn merge_streams(streams: Vec<Vec<PhotonEvent>>) -> Result<Vec<PhotonEvent>> {
    for (s, stream) in streams.iter().enumerate() {
        if let Some(i) = stream.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::UnsortedStream { stream: s, index: i + 1 });
        }
    }
    let total = streams.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    let mut heap = BinaryHeap::with_capacity(streams.len());
    for (s, stream) in streams.iter().enumerate() {
        if let Some(ev) = stream.first() {
            heap.push(Reverse((ev.key(), s, 0usize)));
        }
    }
    while let Some(Reverse((_, s, i))) = heap.pop() {
        out.push(streams[s][i]);
        if let Some(ev) = streams[s].get(i + 1) {
            heap.push(Reverse((ev.key(), s, i + 1)));
        }
    }
    Ok(out)
}
