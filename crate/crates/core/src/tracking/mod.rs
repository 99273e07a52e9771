//! Beam-position estimators, their trial statistics and the bounds they are
//! compared against.
//!
//! A classical estimate is the centroid of one plane's photons. A correlation
//! estimate is the mean of `r_s - r_i` (position plane) or `k_s + k_i`
//! (momentum plane) over coincident pairs; only the signal photon sees the
//! channel, so the shift of that mean is the beam's shift.

mod aperture;
mod fit;

pub use aperture::{digital_aperture, ApertureResult, SbrMethod};
pub use fit::{fit_gaussian_width, GaussianFit, Histogram};

use crate::camera::{CameraParams, PhotonEvent};
use crate::coincidence::PairCoords;
use crate::{Error, Plane, Result, Vec2};

fn mean2(points: impl ExactSizeIterator<Item = Vec2>) -> Result<Vec2> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Estimator("cannot take the centroid of an empty set".into()));
    }
    let sum = points.fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
    Ok([sum[0] / n as f64, sum[1] / n as f64])
}

/// Centre of mass of a set of coordinates.
pub fn centroid(coords: &[Vec2]) -> Result<Vec2> {
    mean2(coords.iter().copied())
}

/// Centroid of detected events, each taken at its pixel centre.
pub fn event_centroid(events: &[PhotonEvent], cam: &CameraParams) -> Result<Vec2> {
    let coords = events
        .iter()
        .map(|e| cam.event_coord(e).ok_or_else(|| Error::Estimator("event outside every camera region".into())))
        .collect::<Result<Vec<_>>>()?;
    centroid(&coords)
}

fn check_width(sigma: f64, n: u64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("width must be positive, got {sigma}")));
    }
    if n == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    Ok(())
}

/// Predicted variance `σ²/n` of a centroid of `n` photons from a beam of
/// RMS width `σ`.
pub fn centroid_variance_prediction(sigma: f64, n: u64) -> Result<f64> {
    check_width(sigma, n)?;
    Ok(sigma * sigma / n as f64)
}

/// Predicted variance `2σ²/n` of the difference of two such centroids.
pub fn displacement_variance_prediction(sigma: f64, n: u64) -> Result<f64> {
    Ok(2.0 * centroid_variance_prediction(sigma, n)?)
}

/// Fisher information `1/σ²` of one Gaussian-distributed photon and the
/// Cramér-Rao variance bound `σ²/n`.
pub fn fisher_crb(sigma: f64, n: u64) -> Result<(f64, f64)> {
    check_width(sigma, n)?;
    Ok((1.0 / (sigma * sigma), sigma * sigma / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMode {
    /// `r_s - r_i`, position plane.
    Difference,
    /// `k_s + k_i`, momentum plane.
    Sum,
}

impl CorrelationMode {
    pub fn plane(self) -> Plane {
        match self {
            CorrelationMode::Difference => Plane::Position,
            CorrelationMode::Sum => Plane::Momentum,
        }
    }
}

pub fn correlation_centroid(pairs: &[PairCoords], mode: CorrelationMode) -> Result<Vec2> {
    if let Some(p) = pairs.iter().find(|p| p.plane != mode.plane()) {
        return Err(Error::Estimator(format!(
            "{mode:?} mode needs {} plane pairs, got a {} plane pair",
            mode.plane().as_str(),
            p.plane.as_str()
        )));
    }
    mean2(pairs.iter().map(PairCoords::correlation_coordinate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    ClassicalCentroid,
    CorrelationDifference,
    CorrelationSum,
}

/// One block of data for an estimator.
#[derive(Debug, Clone, Copy)]
pub enum Block<'a> {
    /// Single-photon coordinates from one plane.
    Singles { plane: Plane, coords: &'a [Vec2] },
    Pairs(&'a [PairCoords]),
}

impl Block<'_> {
    fn len(&self) -> usize {
        match self {
            Block::Singles { coords, .. } => coords.len(),
            Block::Pairs(p) => p.len(),
        }
    }

    fn plane(&self) -> Option<Plane> {
        match self {
            Block::Singles { plane, .. } => Some(*plane),
            Block::Pairs(p) => p.first().map(|p| p.plane),
        }
    }

    fn estimate(&self, mode: EstimatorMode) -> Result<Vec2> {
        match (self, mode) {
            (Block::Singles { coords, .. }, EstimatorMode::ClassicalCentroid) => centroid(coords),
            (Block::Pairs(p), EstimatorMode::CorrelationDifference) => correlation_centroid(p, CorrelationMode::Difference),
            (Block::Pairs(p), EstimatorMode::CorrelationSum) => correlation_centroid(p, CorrelationMode::Sum),
            _ => Err(Error::Estimator(format!("{mode:?} does not apply to this kind of block"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TrackingEstimate {
    pub mode: EstimatorMode,
    pub value: Vec2,
    /// The smaller of the two block sizes.
    pub n: usize,
    pub plane: Plane,
}

/// `estimate(b) - estimate(a)`.
pub fn displacement_estimate(a: Block<'_>, b: Block<'_>, mode: EstimatorMode) -> Result<TrackingEstimate> {
    let plane = a.plane().or(b.plane()).unwrap_or(Plane::Position);
    if b.plane().is_some_and(|p| p != plane) {
        return Err(Error::Estimator("blocks come from different planes".into()));
    }
    let (ea, eb) = (a.estimate(mode)?, b.estimate(mode)?);
    Ok(TrackingEstimate { mode, value: [eb[0] - ea[0], eb[1] - ea[1]], n: a.len().min(b.len()), plane })
}

/// Spread of one scalar estimate over repeated trials.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrialStatistics {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (M - 1 denominator).
    pub std: f64,
    /// Standard error of `std`, `std / √(2(M - 1))`.
    pub se_std: f64,
    /// Events or pairs behind each estimate.
    pub n: u64,
}

impl TrialStatistics {
    pub fn new(values: Vec<f64>, n: u64) -> Result<Self> {
        let m = values.len();
        if m < 2 {
            return Err(Error::Estimator(format!("need at least two trials, got {m}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Estimator("non-finite trial value".into()));
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let std = var.sqrt();
        Ok(TrialStatistics { se_std: std / (2.0 * (m - 1) as f64).sqrt(), values, mean, std, n })
    }

    pub fn trials(&self) -> usize {
        self.values.len()
    }

    /// Standard error of the mean.
    pub fn se_mean(&self) -> f64 {
        self.std / (self.values.len() as f64).sqrt()
    }
}

/// `√((var_x + var_y)/2)`: a per-axis spread that uses both axes.
pub fn pooled_std(x: &TrialStatistics, y: &TrialStatistics) -> f64 {
    ((x.std * x.std + y.std * y.std) / 2.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct UncertaintyProduct {
    /// μm
    pub sigma_dr: f64,
    /// μm⁻¹
    pub sigma_dk: f64,
    pub product: f64,
    pub n: u64,
    /// The limit `1/n`.
    pub hul: f64,
}

impl UncertaintyProduct {
    pub fn from_stds(sigma_dr: f64, sigma_dk: f64, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("count must be at least 1"));
        }
        Ok(UncertaintyProduct { sigma_dr, sigma_dk, product: sigma_dr * sigma_dk, n, hul: 1.0 / n as f64 })
    }

    /// `product · n`, in units of the limit.
    pub fn scaled(&self) -> f64 {
        self.product * self.n as f64
    }

    /// Relative standard error of the product from those of its factors.
    pub fn relative_error(r: &TrialStatistics, k: &TrialStatistics) -> f64 {
        ((r.se_std / r.std).powi(2) + (k.se_std / k.std).powi(2)).sqrt()
    }
}

/// Product of the displacement spreads in position and momentum.
pub fn uncertainty_product(r: &TrialStatistics, k: &TrialStatistics) -> Result<UncertaintyProduct> {
    if r.n != k.n {
        return Err(Error::Estimator(format!("position statistics use n = {} but momentum uses n = {}", r.n, k.n)));
    }
    UncertaintyProduct::from_stds(r.std, k.std, r.n)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EfficiencyBound {
    /// `2δrδk / (ε_i n_s)`
    pub product: f64,
    /// Idler efficiency above which correlations beat the limit
    /// unconditionally: `2δrδk`.
    pub break_even: f64,
}

/// Uncertainty product per heralding signal detection when the idler arm is
/// detected with efficiency `epsilon_i`.
pub fn efficiency_bound(delta_r: f64, delta_k: f64, epsilon_i: f64, n_s: u64) -> Result<EfficiencyBound> {
    if !(epsilon_i > 0.0 && epsilon_i <= 1.0) {
        return Err(Error::invalid(format!("idler efficiency must be in (0, 1], got {epsilon_i}")));
    }
    if n_s == 0 {
        return Err(Error::invalid("signal count must be at least 1"));
    }
    let break_even = 2.0 * delta_r * delta_k;
    Ok(EfficiencyBound { product: break_even / (epsilon_i * n_s as f64), break_even })
}
