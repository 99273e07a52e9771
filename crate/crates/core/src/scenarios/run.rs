//! The named experiments. Each returns typed results; [`run_scenario`]
//! turns them into tables and a JSON summary.
//!
//! Trial `t` of a measurement draws from `ChaCha8Rng::seed_from_u64(seed +
//! t)` on a stream reserved for that measurement, so trials are independent,
//! order-free and reproducible one by one.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::config::{ScenarioConfig, ScenarioKind};
use super::pipeline::{simulate_laser_block, simulate_spdc_block, SpdcSetup, Target};
use super::report::{cell, EventDump, ScenarioReport, Table};
use crate::camera::{inject_background, merge_streams, BackgroundSpec, BeamSpot, CameraParams, RegionKey};
use crate::coincidence::{throughput_bench, BenchReport, PairCoords};
use crate::optics::{overlap_product_min_uncertainty, overlap_uncertainty_product, OverlapConfig};
use crate::source::{mirror_to_displacement, Displacement, LaserSourceParams, SpdcSourceParams};
use crate::tracking::{
    centroid, correlation_centroid, digital_aperture, efficiency_bound, fisher_crb, fit_gaussian_width, pooled_std,
    CorrelationMode, GaussianFit, Histogram, TrialStatistics, UncertaintyProduct,
};
use crate::{Arm, Error, Plane, Result, Vec2};

mod stream {
    pub const CRB: u64 = 1;
    pub const SWEEP_LASER: u64 = 2;
    pub const SWEEP_SPDC: u64 = 3;
    pub const TRACK_LASER: u64 = 4;
    pub const TRACK_SPDC: u64 = 5;
    pub const TRACK_STREAMING: u64 = 6;
    pub const BACKGROUND_PAIRS: u64 = 7;
    pub const BACKGROUND_NOISE: u64 = 8;
    pub const APERTURE: u64 = 9;
    pub const CORRELATIONS: u64 = 10;
    pub const OVERLAP: u64 = 11;
    pub const EFFICIENCY: u64 = 12;
    /// Added to a stream id for draws that must stay independent of it.
    pub const AUX: u64 = 1 << 32;
}

pub fn trial_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index));
    rng.set_stream(stream);
    rng
}

fn stage<T>(stage: &'static str, seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage { stage, seed, source: Box::new(e) },
    })
}

/// Runs `m` trials in parallel, returning results in trial order.
fn run_trials<T: Send>(m: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..m as u64).into_par_iter().map(f).collect()
}

fn stats(values: Vec<f64>, n: u64) -> Result<TrialStatistics> {
    TrialStatistics::new(values, n)
}

/// Spread of a 2-vector estimate: x only, or pooled over both axes.
fn spread(values: &[Vec2], n: u64, two_d: bool) -> Result<(TrialStatistics, f64)> {
    let x = stats(values.iter().map(|v| v[0]).collect(), n)?;
    let s = if two_d {
        let y = stats(values.iter().map(|v| v[1]).collect(), n)?;
        pooled_std(&x, &y)
    } else {
        x.std
    };
    Ok((x, s))
}

fn diff(a: Vec2, b: Vec2) -> Vec2 {
    [b[0] - a[0], b[1] - a[1]]
}

fn spdc_setup(cfg: &ScenarioConfig, camera: CameraParams, background: Option<BackgroundSpec>) -> Result<SpdcSetup> {
    let source = cfg.spdc_params()?;
    Ok(SpdcSetup { coincidence: cfg.coincidence_config(&source)?, source, camera, background })
}

fn correlation_estimates(pairs: &[Vec<PairCoords>; 2]) -> Result<(Vec2, Vec2)> {
    Ok((
        correlation_centroid(&pairs[Plane::Position as usize], CorrelationMode::Difference)?,
        correlation_centroid(&pairs[Plane::Momentum as usize], CorrelationMode::Sum)?,
    ))
}

// ---------------------------------------------------------------- CRB check

#[derive(Debug, Clone, serde::Serialize)]
pub struct CrbResult {
    pub sigma: f64,
    pub n: usize,
    pub trials: usize,
    pub fisher_information: f64,
    pub crb_variance: f64,
    pub empirical_variance: f64,
    /// `empirical_variance / crb_variance`
    pub ratio: f64,
    pub centroids: Vec<f64>,
}

/// Centroid variance of a laser beam against the Cramér-Rao bound.
pub fn crb_check(cfg: &ScenarioConfig, seed: u64) -> Result<CrbResult> {
    let camera = cfg.camera_params()?;
    let sigma = cfg.crb_sigma();
    let laser = LaserSourceParams { sigma_r: sigma, ..cfg.laser_params()? };
    let n = cfg.crb.n;
    let centroids = run_trials(cfg.crb.trials, |t| {
        let mut rng = trial_rng(seed, stream::CRB, t);
        let block = stage(
            "crb-check",
            seed + t,
            simulate_laser_block(&laser, &camera, &Displacement::ZERO, n, &[Plane::Position], 0.0, &mut rng, false),
        )?;
        Ok(centroid(block.plane(Plane::Position))?[0])
    })?;
    let s = stats(centroids, n as u64)?;
    let (fisher, crb) = fisher_crb(sigma, n as u64)?;
    let var = s.std * s.std;
    Ok(CrbResult {
        sigma,
        n,
        trials: cfg.crb.trials,
        fisher_information: fisher,
        crb_variance: crb,
        empirical_variance: var,
        ratio: var / crb,
        centroids: s.values,
    })
}

// ------------------------------------------------------ uncertainty sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Laser,
    Spdc,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Laser => "laser",
            SourceKind::Spdc => "spdc",
        }
    }
}

/// Displacement estimates `(Δr̄, Δk̄)` from one trial.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TrialEstimate {
    pub trial: u64,
    pub dr: Vec2,
    pub dk: Vec2,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ProductPoint {
    pub source: SourceKind,
    pub n: u64,
    pub batch: usize,
    pub sigma_dr: f64,
    pub sigma_dk: f64,
    pub product: f64,
    /// `product · n`
    pub scaled: f64,
    /// Relative standard error of `product`.
    pub rel_err: f64,
    pub mean_dr: f64,
    pub mean_dk: f64,
    pub trials: Vec<TrialEstimate>,
}

fn product_point(source: SourceKind, n: u64, batch: usize, trials: Vec<TrialEstimate>, two_d: bool) -> Result<ProductPoint> {
    let drs: Vec<Vec2> = trials.iter().map(|t| t.dr).collect();
    let dks: Vec<Vec2> = trials.iter().map(|t| t.dk).collect();
    let (rx, sr) = spread(&drs, n, two_d)?;
    let (kx, sk) = spread(&dks, n, two_d)?;
    let p = UncertaintyProduct::from_stds(sr, sk, n)?;
    Ok(ProductPoint {
        source,
        n,
        batch,
        sigma_dr: sr,
        sigma_dk: sk,
        product: p.product,
        scaled: p.scaled(),
        rel_err: UncertaintyProduct::relative_error(&rx, &kx),
        mean_dr: rx.mean,
        mean_dk: kx.mean,
        trials,
    })
}

/// One laser displacement trial: reference block at rest, second block
/// displaced.
fn laser_trial(laser: &LaserSourceParams, camera: &CameraParams, disp: &Displacement, n: usize, rng: &mut impl Rng) -> Result<(Vec2, Vec2)> {
    let a = simulate_laser_block(laser, camera, &Displacement::ZERO, n, &Plane::ALL, 0.0, rng, false)?;
    let b = simulate_laser_block(laser, camera, disp, n, &Plane::ALL, 0.0, rng, false)?;
    Ok((
        diff(centroid(a.plane(Plane::Position))?, centroid(b.plane(Plane::Position))?),
        diff(centroid(a.plane(Plane::Momentum))?, centroid(b.plane(Plane::Momentum))?),
    ))
}

fn spdc_trial<R: Rng, B: Rng>(setup: &SpdcSetup, disp: &Displacement, target: Target, rng: &mut R, bg: &mut B) -> Result<(Vec2, Vec2, [usize; 2])> {
    let a = simulate_spdc_block(setup, &Displacement::ZERO, target, 0.0, rng, bg, false)?;
    let b = simulate_spdc_block(setup, disp, target, 0.0, rng, bg, false)?;
    let (ra, ka) = correlation_estimates(&a.pairs)?;
    let (rb, kb) = correlation_estimates(&b.pairs)?;
    let used = [a.pairs[0].len().min(b.pairs[0].len()), a.pairs[1].len().min(b.pairs[1].len())];
    Ok((diff(ra, rb), diff(ka, kb), used))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepResult {
    pub points: Vec<ProductPoint>,
    pub efficiency: Vec<EfficiencyPoint>,
}

impl SweepResult {
    /// Mean of `product · n` over batches for one source and n.
    pub fn mean_scaled(&self, source: SourceKind, n: u64) -> Option<f64> {
        let v: Vec<f64> = self.points.iter().filter(|p| p.source == source && p.n == n).map(|p| p.scaled).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Uncertainty product against n for the laser and SPDC sources, plus the
/// idler-efficiency scan when configured.
pub fn uncertainty_sweep(cfg: &ScenarioConfig, seed: u64) -> Result<SweepResult> {
    let camera = cfg.camera_params()?;
    let laser = cfg.laser_params()?;
    let setup = spdc_setup(cfg, camera.clone(), None)?;
    let [dx, du] = cfg.sweep.displacement;
    let disp = Displacement { dx, du, ..Displacement::ZERO };
    let m = cfg.trials;
    let mut points = Vec::new();
    for (ni, &n) in cfg.sweep.n_values.iter().enumerate() {
        for batch in 0..cfg.sweep.batches {
            let base = (m * (batch + cfg.sweep.batches * ni)) as u64;
            if cfg.sweep.laser {
                let trials = run_trials(m, |t| {
                    let mut rng = trial_rng(seed, stream::SWEEP_LASER, base + t);
                    let (dr, dk) = stage("uncertainty-sweep/laser", seed + base + t, laser_trial(&laser, &camera, &disp, n as usize, &mut rng))?;
                    Ok(TrialEstimate { trial: t, dr, dk })
                })?;
                points.push(product_point(SourceKind::Laser, n, batch, trials, cfg.two_d)?);
            }
            if cfg.sweep.spdc {
                let trials = run_trials(m, |t| {
                    let mut rng = trial_rng(seed, stream::SWEEP_SPDC, base + t);
                    let mut bg = trial_rng(seed, stream::SWEEP_SPDC + stream::AUX, base + t);
                    let (dr, dk, _) = stage(
                        "uncertainty-sweep/spdc",
                        seed + base + t,
                        spdc_trial(&setup, &disp, Target::PairsPerPlane(n as usize), &mut rng, &mut bg),
                    )?;
                    Ok(TrialEstimate { trial: t, dr, dk })
                })?;
                points.push(product_point(SourceKind::Spdc, n, batch, trials, cfg.two_d)?);
            }
        }
    }
    let efficiency = if cfg.sweep.efficiencies.is_empty() { Vec::new() } else { efficiency_scan(cfg, seed)? };
    Ok(SweepResult { points, efficiency })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EfficiencyPoint {
    pub epsilon_i: f64,
    pub pair_budget: u64,
    /// Signal detections whose partner reached the same plane: `G·ε_s/4`.
    pub n_s: f64,
    pub mean_pairs: f64,
    pub sigma_dr: f64,
    pub sigma_dk: f64,
    pub product: f64,
    /// `product · ε_i · n_s`; constant when the efficiency bound holds.
    pub scaled: f64,
    pub rel_err: f64,
    pub bound: f64,
    pub break_even: f64,
}

/// Uncertainty product at a fixed generated-pair budget as the idler
/// efficiency varies.
pub fn efficiency_scan(cfg: &ScenarioConfig, seed: u64) -> Result<Vec<EfficiencyPoint>> {
    let spdc = cfg.spdc_params()?;
    let budget = cfg.sweep.pair_budget;
    let [dx, du] = cfg.sweep.displacement;
    let disp = Displacement { dx, du, ..Displacement::ZERO };
    let m = cfg.trials;
    let mut out = Vec::new();
    for (ei, &eps) in cfg.sweep.efficiencies.iter().enumerate() {
        let mut camera = cfg.camera_params()?;
        camera.efficiency_idler = eps;
        let setup = spdc_setup(cfg, camera.clone(), None)?;
        let base = (m * ei) as u64;
        let trials = run_trials(m, |t| {
            let mut rng = trial_rng(seed, stream::EFFICIENCY, base + t);
            let mut bg = trial_rng(seed, stream::EFFICIENCY + stream::AUX, base + t);
            stage("efficiency-scan", seed + base + t, spdc_trial(&setup, &disp, Target::Budget(budget), &mut rng, &mut bg))
        })?;
        let n_s = budget as f64 * camera.efficiency_signal / 4.0;
        let mean_pairs = trials.iter().map(|t| (t.2[0] + t.2[1]) as f64 / 2.0).sum::<f64>() / m as f64;
        let drs: Vec<Vec2> = trials.iter().map(|t| t.0).collect();
        let dks: Vec<Vec2> = trials.iter().map(|t| t.1).collect();
        let (rx, sr) = spread(&drs, n_s as u64, cfg.two_d)?;
        let (kx, sk) = spread(&dks, n_s as u64, cfg.two_d)?;
        let bound = efficiency_bound(spdc.delta_r, spdc.delta_k, eps, n_s.max(1.0) as u64)?;
        out.push(EfficiencyPoint {
            epsilon_i: eps,
            pair_budget: budget,
            n_s,
            mean_pairs,
            sigma_dr: sr,
            sigma_dk: sk,
            product: sr * sk,
            scaled: sr * sk * eps * n_s,
            rel_err: UncertaintyProduct::relative_error(&rx, &kx),
            bound: bound.product,
            break_even: bound.break_even,
        });
    }
    Ok(out)
}

// ------------------------------------------------------------------ track

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrackPoint {
    pub source: SourceKind,
    pub step: usize,
    pub mirror_position: Option<f64>,
    pub true_dx: f64,
    pub true_du: f64,
    pub mean_dx: f64,
    pub se_dx: f64,
    pub std_dx: f64,
    pub mean_du: f64,
    pub se_du: f64,
    pub std_du: f64,
    pub trials: Vec<TrialEstimate>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StreamPoint {
    pub step: usize,
    pub batch: usize,
    pub dx: f64,
    pub du: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrackResult {
    pub points: Vec<TrackPoint>,
    pub streaming: Vec<StreamPoint>,
    #[serde(skip)]
    pub events: Vec<EventDump>,
}

/// `(mirror position, displacement)` for every step of the schedule.
pub fn schedule(cfg: &ScenarioConfig) -> Vec<(Option<f64>, Displacement)> {
    match &cfg.track.displacements {
        Some(steps) => steps.iter().map(|&[dx, du]| (None, Displacement { dx, du, ..Displacement::ZERO })).collect(),
        None => cfg
            .track
            .mirror_positions
            .iter()
            .map(|&t| (Some(t), mirror_to_displacement(t, &cfg.track.gains)))
            .collect(),
    }
}

fn track_point(source: SourceKind, step: usize, mirror: Option<f64>, disp: &Displacement, n: u64, trials: Vec<TrialEstimate>) -> Result<TrackPoint> {
    let x = stats(trials.iter().map(|t| t.dr[0]).collect(), n)?;
    let u = stats(trials.iter().map(|t| t.dk[0]).collect(), n)?;
    Ok(TrackPoint {
        source,
        step,
        mirror_position: mirror,
        true_dx: disp.dx,
        true_du: disp.du,
        mean_dx: x.mean,
        se_dx: x.se_mean(),
        std_dx: x.std,
        mean_du: u.mean,
        se_du: u.se_mean(),
        std_du: u.std,
        trials,
    })
}

/// Displacement estimates along the mirror schedule.
pub fn track(cfg: &ScenarioConfig, seed: u64, keep_events: bool) -> Result<TrackResult> {
    let camera = cfg.camera_params()?;
    let laser = cfg.laser_params()?;
    let setup = spdc_setup(cfg, camera.clone(), None)?;
    let m = cfg.trials;
    let n = cfg.track.n;
    let mut points = Vec::new();
    let mut streaming = Vec::new();
    let mut events = Vec::new();
    for (step, (mirror, disp)) in schedule(cfg).into_iter().enumerate() {
        let base = (m * step) as u64;
        if cfg.track.laser {
            let trials = run_trials(m, |t| {
                let mut rng = trial_rng(seed, stream::TRACK_LASER, base + t);
                let (dr, dk) = stage("track/laser", seed + base + t, laser_trial(&laser, &camera, &disp, n, &mut rng))?;
                Ok(TrialEstimate { trial: t, dr, dk })
            })?;
            points.push(track_point(SourceKind::Laser, step, mirror, &disp, n as u64, trials)?);
        }
        let trials = run_trials(m, |t| {
            let mut rng = trial_rng(seed, stream::TRACK_SPDC, base + t);
            let mut bg = trial_rng(seed, stream::TRACK_SPDC + stream::AUX, base + t);
            let (dr, dk, _) = stage("track/spdc", seed + base + t, spdc_trial(&setup, &disp, Target::PairsPerPlane(n), &mut rng, &mut bg))?;
            Ok(TrialEstimate { trial: t, dr, dk })
        })?;
        points.push(track_point(SourceKind::Spdc, step, mirror, &disp, n as u64, trials)?);

        if keep_events {
            let mut rng = trial_rng(seed, stream::TRACK_SPDC + 2 * stream::AUX, step as u64);
            let mut bg = trial_rng(seed, stream::TRACK_SPDC + 3 * stream::AUX, step as u64);
            let block = stage("track/events", seed + step as u64, simulate_spdc_block(&setup, &disp, Target::PairsPerPlane(n), 0.0, &mut rng, &mut bg, true))?;
            events.push(EventDump { name: format!("events_step{step}"), camera_id: camera.camera_id, events: block.events });
        }

        if cfg.track.streaming {
            let k = cfg.track.batch_pairs;
            let batches = cfg.track.stream_batches;
            let mut rng = trial_rng(seed, stream::TRACK_STREAMING, step as u64);
            let mut bg = trial_rng(seed, stream::TRACK_STREAMING + stream::AUX, step as u64);
            let total = Target::PairsPerPlane(k * batches);
            let s = seed + step as u64;
            let reference = stage("track/streaming", s, simulate_spdc_block(&setup, &Displacement::ZERO, total, 0.0, &mut rng, &mut bg, false))?;
            let moved = stage("track/streaming", s, simulate_spdc_block(&setup, &disp, total, 0.0, &mut rng, &mut bg, false))?;
            let (r0, k0) = correlation_estimates(&reference.pairs)?;
            for b in 0..batches {
                let slice = |plane: Plane| &moved.pairs[plane as usize][b * k..(b + 1) * k];
                let r = correlation_centroid(slice(Plane::Position), CorrelationMode::Difference)?;
                let kk = correlation_centroid(slice(Plane::Momentum), CorrelationMode::Sum)?;
                streaming.push(StreamPoint { step, batch: b, dx: r[0] - r0[0], du: kk[0] - k0[0] });
            }
        }
    }
    Ok(TrackResult { points, streaming, events })
}

// ------------------------------------------------------------- background

/// The disruptive beam used by the background scenario: `brightness` times
/// the SPDC singles rate, split over Gaussian spots centred in all four
/// regions.
pub fn disruptive_beam(cfg: &ScenarioConfig, spdc: &SpdcSourceParams, camera: &CameraParams) -> BackgroundSpec {
    let singles = spdc.pair_rate * (camera.efficiency_signal + camera.efficiency_idler);
    let spots = [Plane::Position, Plane::Momentum]
        .into_iter()
        .flat_map(|plane| {
            let sigma = match plane {
                Plane::Position => cfg.background.spot_sigma_r,
                Plane::Momentum => cfg.background.spot_sigma_k,
            };
            [Arm::Signal, Arm::Idler].map(|arm| BeamSpot { plane, arm, center: [0.0, 0.0], sigma })
        })
        .collect();
    BackgroundSpec::DisruptiveBeam { rate: cfg.background.brightness * singles, spots }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DisruptionPoint {
    pub step: usize,
    pub true_dx: f64,
    pub mean_dx_off: f64,
    pub mean_dx_on: f64,
    pub std_dx_off: f64,
    pub std_dx_on: f64,
    /// `mean_dx_on - mean_dx_off`
    pub difference: f64,
    /// `std_dx_on / std_dx_off`
    pub ratio: f64,
    pub accidental_fraction_on: f64,
    pub trials_off: Vec<f64>,
    pub trials_on: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ApertureStudy {
    pub small_radius: f64,
    pub large_radius: f64,
    pub exposure_s: f64,
    /// Pooled signal over pooled background counts.
    pub sbr_small: f64,
    pub sbr_large: f64,
    pub std_small: f64,
    pub std_large: f64,
    /// `std_large / std_small`
    pub ratio: f64,
    pub mean_small: f64,
    pub mean_large: f64,
    /// Per trial: centroid x in the small and large apertures, then
    /// `[signal, background]` counts in each.
    pub trials: Vec<(f64, f64, [f64; 2], [f64; 2])>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BackgroundResult {
    pub points: Vec<DisruptionPoint>,
    pub mean_abs_difference: f64,
    pub mean_ratio: f64,
    pub aperture: Option<ApertureStudy>,
}

/// Correlation tracking with a disruptive beam switched on and off. Both
/// runs of a trial share their pair stream; only the background differs.
pub fn background(cfg: &ScenarioConfig, seed: u64) -> Result<BackgroundResult> {
    let camera = cfg.camera_params()?;
    let spdc = cfg.spdc_params()?;
    let off = spdc_setup(cfg, camera.clone(), None)?;
    let on = spdc_setup(cfg, camera.clone(), Some(disruptive_beam(cfg, &spdc, &camera)))?;
    let m = cfg.trials;
    let n = cfg.background.n;
    let mut points = Vec::new();
    for (step, &t) in cfg.background.mirror_positions.iter().enumerate() {
        let disp = mirror_to_displacement(t, &cfg.track.gains);
        let base = (m * step) as u64;
        let trials = run_trials(m, |t| {
            let run = |setup: &SpdcSetup| -> Result<(f64, u64, u64)> {
                let mut rng = trial_rng(seed, stream::BACKGROUND_PAIRS, base + t);
                let mut bg = trial_rng(seed, stream::BACKGROUND_NOISE, base + t);
                let a = simulate_spdc_block(setup, &Displacement::ZERO, Target::PairsPerPlane(n), 0.0, &mut rng, &mut bg, false)?;
                let b = simulate_spdc_block(setup, &disp, Target::PairsPerPlane(n), 0.0, &mut rng, &mut bg, false)?;
                let ra = correlation_centroid(a.plane(Plane::Position), CorrelationMode::Difference)?;
                let rb = correlation_centroid(b.plane(Plane::Position), CorrelationMode::Difference)?;
                Ok((rb[0] - ra[0], a.counts.accidental_gated + b.counts.accidental_gated, a.counts.gated + b.counts.gated))
            };
            let s = seed + base + t;
            Ok((stage("background/off", s, run(&off))?, stage("background/on", s, run(&on))?))
        })?;
        let off_v: Vec<f64> = trials.iter().map(|t| t.0 .0).collect();
        let on_v: Vec<f64> = trials.iter().map(|t| t.1 .0).collect();
        let (acc, gated) = trials.iter().fold((0, 0), |(a, g), t| (a + t.1 .1, g + t.1 .2));
        let so = stats(off_v, n as u64)?;
        let sn = stats(on_v, n as u64)?;
        points.push(DisruptionPoint {
            step,
            true_dx: disp.dx,
            mean_dx_off: so.mean,
            mean_dx_on: sn.mean,
            std_dx_off: so.std,
            std_dx_on: sn.std,
            difference: sn.mean - so.mean,
            ratio: sn.std / so.std,
            accidental_fraction_on: acc as f64 / gated.max(1) as f64,
            trials_off: so.values,
            trials_on: sn.values,
        });
    }
    let k = points.len() as f64;
    let mean_abs_difference = points.iter().map(|p| p.difference.abs()).sum::<f64>() / k;
    let mean_ratio = points.iter().map(|p| p.ratio).sum::<f64>() / k;
    let aperture = if cfg.background.aperture_study { Some(aperture_study(cfg, seed)?) } else { None };
    Ok(BackgroundResult { points, mean_abs_difference, mean_ratio, aperture })
}

/// Laser centroid through a small and a large digital aperture over a flat
/// dark-count background. The exposure is chosen so the large aperture sees
/// the configured SBR; the small one follows from the area ratio.
pub fn aperture_study(cfg: &ScenarioConfig, seed: u64) -> Result<ApertureStudy> {
    let camera = cfg.camera_params()?;
    let laser = cfg.laser_params()?;
    let a = &cfg.aperture;
    let fwhm = 2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * laser.sigma_r;
    let small_radius = a.small_fwhm * fwhm / 2.0;
    let large_radius = a.large_fwhm * fwhm / 2.0;
    let large_pixels = std::f64::consts::PI * large_radius * large_radius / (camera.pitch * camera.pitch);
    let exposure_s = a.n as f64 / (a.sbr_large * a.dark_rate * large_pixels);
    let spec = BackgroundSpec::FlatDark { rate: a.dark_rate, regions: vec![RegionKey { plane: Plane::Position, arm: Arm::Signal }] };
    let trials = run_trials(a.trials, |t| {
        let s = seed + t;
        let mut rng = trial_rng(seed, stream::APERTURE, t);
        let block = stage(
            "background/aperture",
            s,
            simulate_laser_block(&laser, &camera, &Displacement::ZERO, a.n, &[Plane::Position], 0.0, &mut rng, true),
        )?;
        let (bg, _) = stage("background/aperture", s, inject_background(&spec, &camera, 0.0, exposure_s, &mut rng))?;
        let events = merge_streams(vec![block.events, bg])?;
        let small = digital_aperture(&events, &camera, [0.0, 0.0], small_radius)?;
        let large = digital_aperture(&events, &camera, [0.0, 0.0], large_radius)?;
        Ok((centroid(&small.coords)?[0], centroid(&large.coords)?[0], [small.signal, small.background], [large.signal, large.background]))
    })?;
    let ss = stats(trials.iter().map(|t| t.0).collect(), a.n as u64)?;
    let sl = stats(trials.iter().map(|t| t.1).collect(), a.n as u64)?;
    // Per-trial background counts are O(1) in the small aperture, so the
    // ratio is formed from pooled counts.
    let pooled = |pick: fn(&(f64, f64, [f64; 2], [f64; 2])) -> [f64; 2]| {
        let [s, b] = trials.iter().map(pick).fold([0.0, 0.0], |acc, x| [acc[0] + x[0], acc[1] + x[1]]);
        if b > 0.0 { s / b } else { f64::INFINITY }
    };
    Ok(ApertureStudy {
        small_radius,
        large_radius,
        exposure_s,
        sbr_small: pooled(|t| t.2),
        sbr_large: pooled(|t| t.3),
        std_small: ss.std,
        std_large: sl.std,
        ratio: sl.std / ss.std,
        mean_small: ss.mean,
        mean_large: sl.mean,
        trials,
    })
}

// ---------------------------------------------------------- overlap bound

#[derive(Debug, Clone, serde::Serialize)]
pub struct OverlapPoint {
    pub alpha: f64,
    pub product: f64,
    pub closed_form: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct OverlapResult {
    pub points: Vec<OverlapPoint>,
    pub random_checked: usize,
    /// Smallest `product / (2/n)` among the random configurations.
    pub min_random_ratio: f64,
}

/// Overlapped-beam product across α, and against random feasible beams.
pub fn overlap_bound(cfg: &ScenarioConfig, seed: u64) -> Result<OverlapResult> {
    let o = &cfg.overlap;
    let bound = 2.0 / o.n as f64;
    let points = o
        .alphas
        .iter()
        .map(|&alpha| {
            Ok(OverlapPoint {
                alpha,
                product: overlap_uncertainty_product(&OverlapConfig::minimum_uncertainty(o.sigma_x2, alpha, o.n))?,
                closed_form: overlap_product_min_uncertainty(alpha, o.n),
                bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = trial_rng(seed, stream::OVERLAP, 0);
    let mut min_ratio = f64::INFINITY;
    for _ in 0..o.random_configs {
        let c = random_feasible_overlap(&mut rng, o.n);
        min_ratio = min_ratio.min(overlap_uncertainty_product(&c)? / bound);
    }
    Ok(OverlapResult { points, random_checked: o.random_configs, min_random_ratio: min_ratio })
}

/// Two beams each at or above the uncertainty limit, widths spread over
/// two decades.
pub fn random_feasible_overlap<R: Rng + ?Sized>(rng: &mut R, n: u64) -> OverlapConfig {
    let mut beam = || {
        let sx = 10f64.powf(rng.random_range(0.0..2.0)) * 10.0;
        let sk = 0.5 / sx * 10f64.powf(rng.random_range(0.0..1.0));
        (sx, sk)
    };
    let (sigma_x1, sigma_k1) = beam();
    let (sigma_x2, sigma_k2) = beam();
    OverlapConfig { sigma_x1, sigma_x2, sigma_k1, sigma_k2, n }
}

// ----------------------------------------------------------- correlations

#[derive(Debug, Clone, serde::Serialize)]
pub struct WidthFit {
    pub plane: Plane,
    pub axis: usize,
    pub bin_width: f64,
    /// `√(δ² + h²/12)` for the configured width and bin.
    pub expected: f64,
    pub fit: GaussianFit,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CorrelationsResult {
    pub pairs: [usize; 2],
    pub fits: Vec<WidthFit>,
    /// Marginal histograms, per plane and axis.
    pub histograms: Vec<(Plane, usize, Histogram)>,
    /// Joint 2-D histograms: `(plane, x centre, y centre, count)` for
    /// filled bins.
    pub joint: Vec<(Plane, f64, f64, u64)>,
    #[serde(skip)]
    pub events: Vec<EventDump>,
}

fn joint_histogram(plane: Plane, coords: &[Vec2], h: f64) -> Vec<(Plane, f64, f64, u64)> {
    let mut map = std::collections::BTreeMap::new();
    for c in coords {
        let key = ((c[0] / h).round() as i64, (c[1] / h).round() as i64);
        *map.entry(key).or_insert(0u64) += 1;
    }
    map.into_iter().map(|((i, j), c)| (plane, i as f64 * h, j as f64 * h, c)).collect()
}

/// Position-difference and momentum-sum histograms of SPDC pairs with
/// Gaussian width fits.
pub fn correlations(cfg: &ScenarioConfig, seed: u64, keep_events: bool) -> Result<CorrelationsResult> {
    let camera = cfg.camera_params()?;
    let setup = spdc_setup(cfg, camera.clone(), None)?;
    let mut rng = trial_rng(seed, stream::CORRELATIONS, 0);
    let mut bg = trial_rng(seed, stream::CORRELATIONS + stream::AUX, 0);
    let block = stage(
        "correlations",
        seed,
        simulate_spdc_block(&setup, &Displacement::ZERO, Target::PairsPerPlane(cfg.correlations.pairs), 0.0, &mut rng, &mut bg, keep_events),
    )?;
    let mut fits = Vec::new();
    let mut histograms = Vec::new();
    let mut joint = Vec::new();
    for plane in Plane::ALL {
        let (h, delta) = match plane {
            Plane::Position => (cfg.correlations.bin_r.unwrap_or(camera.pitch), setup.source.delta_r),
            Plane::Momentum => (cfg.correlations.bin_k.unwrap_or(camera.k_per_pixel), setup.source.delta_k),
        };
        let coords: Vec<Vec2> = block.plane(plane).iter().map(PairCoords::correlation_coordinate).collect();
        joint.extend(joint_histogram(plane, &coords, h));
        for axis in 0..2 {
            let samples: Vec<f64> = coords.iter().map(|c| c[axis]).collect();
            let hist = Histogram::from_samples(&samples, h)?;
            let fit = stage("correlations/fit", seed, fit_gaussian_width(&hist))?;
            fits.push(WidthFit { plane, axis, bin_width: h, expected: (delta * delta + h * h / 12.0).sqrt(), fit });
            histograms.push((plane, axis, hist));
        }
    }
    let events = if keep_events {
        vec![EventDump { name: "events".into(), camera_id: camera.camera_id, events: block.events }]
    } else {
        Vec::new()
    };
    Ok(CorrelationsResult { pairs: [block.pairs[0].len(), block.pairs[1].len()], fits, histograms, joint, events })
}

// ------------------------------------------------------------------ bench

pub fn bench(cfg: &ScenarioConfig, seed: u64) -> Result<BenchReport> {
    let spdc = cfg.spdc_params()?;
    let co = cfg.coincidence_config(&spdc)?;
    stage("bench", seed, throughput_bench(cfg.bench.events, &co, seed))
}

// ------------------------------------------------------------ dispatching

fn f(v: f64) -> String {
    cell(v)
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

fn product_tables(points: &[ProductPoint]) -> (Table, Table) {
    let mut summary = Table::new(
        "products",
        &["source", "n", "batch", "sigma_dr", "sigma_dk", "product", "product_times_n", "rel_err", "hul"],
    );
    let mut raw = Table::new("product_trials", &["source", "n", "batch", "trial", "dx", "dy", "du", "dv"]);
    for p in points {
        summary.push(vec![
            cell(p.source.as_str()),
            cell(p.n),
            cell(p.batch),
            f(p.sigma_dr),
            f(p.sigma_dk),
            f(p.product),
            f(p.scaled),
            f(p.rel_err),
            f(1.0 / p.n as f64),
        ]);
        for t in &p.trials {
            raw.push(vec![
                cell(p.source.as_str()),
                cell(p.n),
                cell(p.batch),
                cell(t.trial),
                f(t.dr[0]),
                f(t.dr[1]),
                f(t.dk[0]),
                f(t.dk[1]),
            ]);
        }
    }
    (summary, raw)
}

/// Runs one scenario end to end.
pub fn run_scenario(cfg: &ScenarioConfig, kind: ScenarioKind, seed: u64, keep_events: bool) -> Result<ScenarioReport> {
    let start = Instant::now();
    let mut tables = Vec::new();
    let mut dumps = Vec::new();
    let summary = match kind {
        ScenarioKind::CrbCheck => {
            let r = crb_check(cfg, seed)?;
            let mut t = Table::new("crb_trials", &["trial", "centroid_x"]);
            for (i, c) in r.centroids.iter().enumerate() {
                t.push(vec![cell(i), f(*c)]);
            }
            let mut s = Table::new("crb", &["sigma", "n", "trials", "fisher_information", "crb_variance", "empirical_variance", "ratio"]);
            s.push(vec![f(r.sigma), cell(r.n), cell(r.trials), f(r.fisher_information), f(r.crb_variance), f(r.empirical_variance), f(r.ratio)]);
            tables.extend([s, t]);
            json!({ "ratio": r.ratio, "crb_variance": r.crb_variance, "empirical_variance": r.empirical_variance })
        }
        ScenarioKind::UncertaintySweep => {
            let r = uncertainty_sweep(cfg, seed)?;
            let (s, raw) = product_tables(&r.points);
            tables.extend([s, raw]);
            let mut means = Vec::new();
            for source in [SourceKind::Laser, SourceKind::Spdc] {
                for &n in &cfg.sweep.n_values {
                    if let Some(v) = r.mean_scaled(source, n) {
                        means.push(json!({ "source": source, "n": n, "mean_product_times_n": v }));
                    }
                }
            }
            if !r.efficiency.is_empty() {
                let mut t = Table::new(
                    "efficiency",
                    &["epsilon_i", "pair_budget", "n_s", "mean_pairs", "sigma_dr", "sigma_dk", "product", "product_eps_ns", "rel_err", "bound", "break_even"],
                );
                for p in &r.efficiency {
                    t.push(vec![
                        f(p.epsilon_i),
                        cell(p.pair_budget),
                        f(p.n_s),
                        f(p.mean_pairs),
                        f(p.sigma_dr),
                        f(p.sigma_dk),
                        f(p.product),
                        f(p.scaled),
                        f(p.rel_err),
                        f(p.bound),
                        f(p.break_even),
                    ]);
                }
                tables.push(t);
            }
            json!({ "products": means, "efficiency": r.efficiency })
        }
        ScenarioKind::Track => {
            let r = track(cfg, seed, keep_events)?;
            let mut t = Table::new(
                "track",
                &["source", "step", "mirror_position", "true_dx", "true_du", "mean_dx", "se_dx", "std_dx", "mean_du", "se_du", "std_du"],
            );
            let mut raw = Table::new("track_trials", &["source", "step", "trial", "dx", "dy", "du", "dv"]);
            for p in &r.points {
                t.push(vec![
                    cell(p.source.as_str()),
                    cell(p.step),
                    opt(p.mirror_position),
                    f(p.true_dx),
                    f(p.true_du),
                    f(p.mean_dx),
                    f(p.se_dx),
                    f(p.std_dx),
                    f(p.mean_du),
                    f(p.se_du),
                    f(p.std_du),
                ]);
                for e in &p.trials {
                    raw.push(vec![cell(p.source.as_str()), cell(p.step), cell(e.trial), f(e.dr[0]), f(e.dr[1]), f(e.dk[0]), f(e.dk[1])]);
                }
            }
            tables.extend([t, raw]);
            if !r.streaming.is_empty() {
                let mut s = Table::new("track_streaming", &["step", "batch", "dx", "du"]);
                for p in &r.streaming {
                    s.push(vec![cell(p.step), cell(p.batch), f(p.dx), f(p.du)]);
                }
                tables.push(s);
            }
            dumps = r.events;
            let pts: Vec<_> = r
                .points
                .iter()
                .map(|p| json!({ "source": p.source, "step": p.step, "true_dx": p.true_dx, "mean_dx": p.mean_dx, "se_dx": p.se_dx, "true_du": p.true_du, "mean_du": p.mean_du, "se_du": p.se_du }))
                .collect();
            json!({ "points": pts })
        }
        ScenarioKind::Background => {
            let r = background(cfg, seed)?;
            let mut t = Table::new(
                "disruption",
                &["step", "true_dx", "mean_dx_off", "mean_dx_on", "std_dx_off", "std_dx_on", "difference", "ratio", "accidental_fraction_on"],
            );
            let mut raw = Table::new("disruption_trials", &["step", "trial", "dx_off", "dx_on"]);
            for p in &r.points {
                t.push(vec![
                    cell(p.step),
                    f(p.true_dx),
                    f(p.mean_dx_off),
                    f(p.mean_dx_on),
                    f(p.std_dx_off),
                    f(p.std_dx_on),
                    f(p.difference),
                    f(p.ratio),
                    f(p.accidental_fraction_on),
                ]);
                for (i, (a, b)) in p.trials_off.iter().zip(&p.trials_on).enumerate() {
                    raw.push(vec![cell(p.step), cell(i), f(*a), f(*b)]);
                }
            }
            tables.extend([t, raw]);
            let mut ap_json = serde_json::Value::Null;
            if let Some(a) = &r.aperture {
                let mut at = Table::new(
                    "aperture_trials",
                    &["trial", "centroid_small", "centroid_large", "signal_small", "background_small", "signal_large", "background_large"],
                );
                for (i, tr) in a.trials.iter().enumerate() {
                    at.push(vec![cell(i), f(tr.0), f(tr.1), f(tr.2[0]), f(tr.2[1]), f(tr.3[0]), f(tr.3[1])]);
                }
                tables.push(at);
                ap_json = json!({
                    "small_radius": a.small_radius, "large_radius": a.large_radius, "exposure_s": a.exposure_s,
                    "sbr_small": a.sbr_small, "sbr_large": a.sbr_large,
                    "std_small": a.std_small, "std_large": a.std_large, "ratio": a.ratio,
                });
            }
            json!({ "mean_abs_difference": r.mean_abs_difference, "mean_ratio": r.mean_ratio, "aperture": ap_json })
        }
        ScenarioKind::OverlapBound => {
            let r = overlap_bound(cfg, seed)?;
            let mut t = Table::new("overlap", &["alpha", "product", "closed_form", "bound"]);
            for p in &r.points {
                t.push(vec![f(p.alpha), f(p.product), f(p.closed_form), f(p.bound)]);
            }
            tables.push(t);
            json!({ "random_checked": r.random_checked, "min_random_ratio": r.min_random_ratio })
        }
        ScenarioKind::Correlations => {
            let r = correlations(cfg, seed, keep_events)?;
            let mut ft = Table::new("width_fits", &["plane", "axis", "bin_width", "width", "width_err", "center", "center_err", "baseline", "expected"]);
            for w in &r.fits {
                ft.push(vec![
                    cell(w.plane.as_str()),
                    cell(w.axis),
                    f(w.bin_width),
                    f(w.fit.width),
                    f(w.fit.width_err),
                    f(w.fit.center),
                    f(w.fit.center_err),
                    f(w.fit.baseline),
                    f(w.expected),
                ]);
            }
            let mut ht = Table::new("marginals", &["plane", "axis", "center", "count"]);
            for (plane, axis, h) in &r.histograms {
                for (c, n) in h.centers.iter().zip(&h.counts) {
                    ht.push(vec![cell(plane.as_str()), cell(axis), f(*c), f(*n)]);
                }
            }
            let mut jt = Table::new("joint", &["plane", "x", "y", "count"]);
            for (plane, x, y, c) in &r.joint {
                jt.push(vec![cell(plane.as_str()), f(*x), f(*y), cell(c)]);
            }
            tables.extend([ft, ht, jt]);
            dumps = r.events;
            let fits: Vec<_> = r
                .fits
                .iter()
                .map(|w| json!({ "plane": w.plane, "axis": w.axis, "width": w.fit.width, "width_err": w.fit.width_err, "expected": w.expected }))
                .collect();
            json!({ "pairs": r.pairs, "fits": fits })
        }
        ScenarioKind::Bench => {
            let r = bench(cfg, seed)?;
            let mut t = Table::new("bench", &["events", "pairs"]);
            t.push(vec![cell(r.events), cell(r.pairs)]);
            tables.push(t);
            serde_json::to_value(&r).expect("bench report serializes")
        }
    };
    Ok(ScenarioReport {
        scenario: kind.as_str().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        wall_clock_s: start.elapsed().as_secs_f64(),
        warnings: cfg.warnings(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        summary,
        tables: tables.iter().map(|t| format!("{}.csv", t.name)).collect(),
        table_data: tables,
        event_dumps: dumps,
    })
}
