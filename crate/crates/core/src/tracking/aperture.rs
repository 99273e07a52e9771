use crate::camera::{CameraParams, PhotonEvent};
use crate::source::Origin;
use crate::{Error, Result, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SbrMethod {
    /// Counted from the events' truth tags.
    Truth,
    /// Background density measured in the annulus `radius < ρ ≤ 2·radius`
    /// and scaled to the aperture area.
    Annulus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApertureResult {
    pub kept: Vec<PhotonEvent>,
    /// Physical coordinates of `kept`, same order.
    pub coords: Vec<Vec2>,
    /// Estimated signal and background counts inside the aperture.
    pub signal: f64,
    pub background: f64,
    /// Signal counts over background counts inside the aperture; infinite
    /// when no background is present.
    pub sbr: f64,
    pub method: SbrMethod,
}

/// Keeps the events within `radius` of `center` (physical units of their
/// plane).
pub fn digital_aperture(events: &[PhotonEvent], cam: &CameraParams, center: Vec2, radius: f64) -> Result<ApertureResult> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::invalid(format!("aperture radius must be positive, got {radius}")));
    }
    let tagged = events.iter().all(|e| e.truth.is_some());
    let mut kept = Vec::new();
    let mut coords = Vec::new();
    let mut annulus = 0usize;
    for e in events {
        let c = cam
            .event_coord(e)
            .ok_or_else(|| Error::Estimator("event outside every camera region".into()))?;
        let rho = ((c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2)).sqrt();
        if rho <= radius {
            kept.push(*e);
            coords.push(c);
        } else if rho <= 2.0 * radius {
            annulus += 1;
        }
    }
    let (signal, background, method) = if tagged {
        let bg = kept.iter().filter(|e| e.truth == Some(Origin::Background)).count() as f64;
        (kept.len() as f64 - bg, bg, SbrMethod::Truth)
    } else {
        // The annulus is three times the aperture's area.
        let bg = annulus as f64 / 3.0;
        ((kept.len() as f64 - bg).max(0.0), bg, SbrMethod::Annulus)
    };
    let sbr = if background > 0.0 { signal / background } else { f64::INFINITY };
    Ok(ApertureResult { kept, coords, signal, background, sbr, method })
}
