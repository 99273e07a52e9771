use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::{sort_events, CameraParams, PhotonEvent};
use crate::source::Origin;
use crate::{Arm, Error, Plane, Result, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionKey {
    pub plane: Plane,
    pub arm: Arm,
}

/// Gaussian spot of a disruptive beam inside one region. `center` and
/// `sigma` are in the physical units of the plane.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSpot {
    pub plane: Plane,
    pub arm: Arm,
    #[serde(default)]
    pub center: Vec2,
    pub sigma: f64,
}

/// Uncorrelated light reaching the sensor.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackgroundSpec {
    /// Uniform dark counts, `rate` per second per pixel, over the listed
    /// regions (all four when empty).
    FlatDark {
        rate: f64,
        #[serde(default)]
        regions: Vec<RegionKey>,
    },
    /// A bright unrelated beam with total rate `rate` photons/s split evenly
    /// over its spots.
    DisruptiveBeam { rate: f64, spots: Vec<BeamSpot> },
}

impl BackgroundSpec {
    pub fn validate(&self) -> Result<()> {
        let rate = match self {
            BackgroundSpec::FlatDark { rate, .. } => *rate,
            BackgroundSpec::DisruptiveBeam { rate, spots } => {
                if spots.iter().any(|s| !(s.sigma.is_finite() && s.sigma >= 0.0)) {
                    return Err(Error::invalid("disruptive beam spot widths must be non-negative"));
                }
                if *rate > 0.0 && spots.is_empty() {
                    return Err(Error::invalid("disruptive beam needs at least one spot"));
                }
                *rate
            }
        };
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::invalid(format!("background rate must be non-negative, got {rate}")));
        }
        Ok(())
    }
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive finite mean");
    d.sample(rng) as u64
}

/// Background events over `[start_ns, start_ns + duration_s·10⁹)`, sorted.
/// Returns the events and the number of photons that missed their region.
pub fn inject_background<R: Rng + ?Sized>(
    spec: &BackgroundSpec,
    cam: &CameraParams,
    start_ns: f64,
    duration_s: f64,
    rng: &mut R,
) -> Result<(Vec<PhotonEvent>, u64)> {
    spec.validate()?;
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::invalid(format!("background duration must be positive, got {duration_s}")));
    }
    let span_ns = duration_s * 1e9;
    let stamp = |rng: &mut R| (start_ns + rng.random::<f64>() * span_ns).round().max(0.0) as u64;
    let mut events = Vec::new();
    let mut clipped = 0;
    match spec {
        BackgroundSpec::FlatDark { rate, regions } => {
            let keys: Vec<(Plane, Arm)> = if regions.is_empty() {
                cam.regions.iter().map(|(p, a, _)| (p, a)).collect()
            } else {
                regions.iter().map(|k| (k.plane, k.arm)).collect()
            };
            for (plane, arm) in keys {
                let region = cam
                    .regions
                    .get(plane, arm)
                    .ok_or_else(|| Error::invalid("flat background needs signal or idler regions"))?;
                let count = poisson_count(rate * region.pixel_count() as f64 * duration_s, rng);
                events.reserve(count as usize);
                for _ in 0..count {
                    let px = region.x0 + rng.random_range(0..region.width);
                    let py = region.y0 + rng.random_range(0..region.height);
                    events.push(PhotonEvent {
                        t: stamp(rng),
                        plane,
                        arm,
                        px: px as u16,
                        py: py as u16,
                        truth: Some(Origin::Background),
                    });
                }
            }
        }
        BackgroundSpec::DisruptiveBeam { rate, spots } => {
            let per_spot = if spots.is_empty() { 0.0 } else { rate / spots.len() as f64 };
            for spot in spots {
                let count = poisson_count(per_spot * duration_s, rng);
                for _ in 0..count {
                    let zx: f64 = StandardNormal.sample(rng);
                    let zy: f64 = StandardNormal.sample(rng);
                    let coord = [spot.center[0] + spot.sigma * zx, spot.center[1] + spot.sigma * zy];
                    let t = stamp(rng);
                    match cam.to_pixel(spot.plane, spot.arm, coord) {
                        Some((px, py)) => events.push(PhotonEvent {
                            t,
                            plane: spot.plane,
                            arm: spot.arm,
                            px,
                            py,
                            truth: Some(Origin::Background),
                        }),
                        None => clipped += 1,
                    }
                }
            }
        }
    }
    sort_events(&mut events);
    Ok((events, clipped))
}
