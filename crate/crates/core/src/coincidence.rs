//! Temporal coincidence matching and spatial gating.
//!
//! The matcher walks the signal stream in time order keeping a buffer of
//! idler events that can still pair with the current signal event, i.e. those
//! within `±window` of it. Each signal event takes the unmatched buffered
//! idler with the smallest `|dt|`, the earlier idler winning ties. Pairing is
//! one-to-one and the buffer never holds more than the idler events of one
//! window span.

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::camera::{merge_streams, CameraParams, PhotonEvent};
use crate::{Arm, Error, Plane, Result, Vec2};

/// Where the spatial gate is centered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateCenter {
    /// Zero difference (position) and zero sum (momentum).
    #[default]
    Origin,
    /// Follows a displaced correlation peak: the component-wise median of
    /// the candidates, refined by the mean of the candidates inside the
    /// gate. The median alone snaps to the pixel grid and leaves the gate
    /// off-centre by up to half a pixel.
    Peak,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoincidenceConfig {
    /// Half-width τ of the coincidence window, ns.
    pub window: u64,
    /// Gate radius on `|r_s - r_i|`, μm.
    pub rho_r: Option<f64>,
    /// Gate radius on `|k_s + k_i|`, μm⁻¹.
    pub rho_k: Option<f64>,
    pub gate_center: GateCenter,
}

impl Default for CoincidenceConfig {
    fn default() -> Self {
        CoincidenceConfig { window: 20, rho_r: None, rho_k: None, gate_center: GateCenter::Origin }
    }
}

impl CoincidenceConfig {
    /// Gates at four correlation widths.
    pub fn with_default_gates(self, delta_r: f64, delta_k: f64) -> Self {
        CoincidenceConfig {
            rho_r: self.rho_r.or(Some(4.0 * delta_r)),
            rho_k: self.rho_k.or(Some(4.0 * delta_k)),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::invalid("coincidence window must be positive"));
        }
        for r in [self.rho_r, self.rho_k].into_iter().flatten() {
            if r.is_nan() || r <= 0.0 {
                return Err(Error::invalid(format!("gate radius must be positive, got {r}")));
            }
        }
        Ok(())
    }

    pub fn radius(&self, plane: Plane) -> Option<f64> {
        match plane {
            Plane::Position => self.rho_r,
            Plane::Momentum => self.rho_k,
        }
    }
}

/// Two detections from one plane matched in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoincidencePair {
    pub signal: PhotonEvent,
    pub idler: PhotonEvent,
    /// `t_signal - t_idler`, ns.
    pub dt: i64,
    pub plane: Plane,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoincidenceOutput {
    /// Sorted by signal timestamp.
    pub pairs: Vec<CoincidencePair>,
    pub signal_singles: u64,
    pub idler_singles: u64,
    /// Signal events that had more than one unmatched candidate.
    pub ambiguous: u64,
    /// Largest number of idler events buffered at once.
    pub peak_buffered: usize,
}

struct IndexMatch {
    pairs: Vec<(usize, usize)>,
    ambiguous: Vec<usize>,
    peak_buffered: usize,
}

fn check_sorted(events: &[PhotonEvent], arm: Arm) -> Result<()> {
    match events.windows(2).position(|w| w[1].t < w[0].t) {
        Some(i) => Err(Error::unsorted_arm(arm, i + 1)),
        None => Ok(()),
    }
}

/// Core greedy matcher over sorted slices, returning index pairs.
fn match_indices(signal: &[PhotonEvent], idler: &[PhotonEvent], window: u64) -> IndexMatch {
    let mut pairs = Vec::new();
    let mut ambiguous = Vec::new();
    let mut buffer: VecDeque<(usize, bool)> = VecDeque::new();
    let mut next = 0;
    let mut peak = 0;
    if window == 0 {
        return IndexMatch { pairs, ambiguous, peak_buffered: 0 };
    }
    for (si, s) in signal.iter().enumerate() {
        let hi = s.t.saturating_add(window);
        while next < idler.len() && idler[next].t <= hi {
            buffer.push_back((next, false));
            next += 1;
        }
        let lo = s.t.saturating_sub(window);
        while buffer.front().is_some_and(|&(i, _)| idler[i].t < lo) {
            buffer.pop_front();
        }
        // Matched events at the front no longer matter.
        while buffer.front().is_some_and(|&(_, m)| m) {
            buffer.pop_front();
        }
        peak = peak.max(buffer.len());
        let mut best: Option<(u64, usize)> = None;
        let mut candidates = 0;
        for (slot, &(i, matched)) in buffer.iter().enumerate() {
            if matched {
                continue;
            }
            candidates += 1;
            let d = s.t.abs_diff(idler[i].t);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, slot));
            }
        }
        if candidates > 1 {
            ambiguous.push(si);
        }
        if let Some((_, slot)) = best {
            buffer[slot].1 = true;
            pairs.push((si, buffer[slot].0));
        }
    }
    IndexMatch { pairs, ambiguous, peak_buffered: peak }
}

fn build_output(
    signal: &[PhotonEvent],
    idler: &[PhotonEvent],
    plane: Plane,
    m: IndexMatch,
) -> CoincidenceOutput {
    let pairs: Vec<_> = m
        .pairs
        .iter()
        .map(|&(si, ii)| CoincidencePair {
            signal: signal[si],
            idler: idler[ii],
            dt: signal[si].t as i64 - idler[ii].t as i64,
            plane,
        })
        .collect();
    CoincidenceOutput {
        signal_singles: (signal.len() - pairs.len()) as u64,
        idler_singles: (idler.len() - pairs.len()) as u64,
        ambiguous: m.ambiguous.len() as u64,
        peak_buffered: m.peak_buffered,
        pairs,
    }
}

fn common_plane(signal: &[PhotonEvent], idler: &[PhotonEvent]) -> Result<Plane> {
    let plane = signal.first().or(idler.first()).map(|e| e.plane).unwrap_or(Plane::Position);
    if signal.iter().chain(idler).any(|e| e.plane != plane) {
        return Err(Error::invalid("coincidence streams must come from a single plane"));
    }
    Ok(plane)
}

/// Matches one plane's signal and idler streams. A zero window yields no
/// pairs.
pub fn match_coincidences(signal: &[PhotonEvent], idler: &[PhotonEvent], cfg: &CoincidenceConfig) -> Result<CoincidenceOutput> {
    check_sorted(signal, Arm::Signal)?;
    check_sorted(idler, Arm::Idler)?;
    let plane = common_plane(signal, idler)?;
    let m = match_indices(signal, idler, cfg.window);
    Ok(build_output(signal, idler, plane, m))
}

/// Same result as [`match_coincidences`] at low occupancy, computed over
/// time epochs in parallel. Each epoch replays one window width before its
/// start to rebuild the matcher state; an idler claimed by two epochs keeps
/// its earlier signal.
pub fn match_coincidences_parallel(
    signal: &[PhotonEvent],
    idler: &[PhotonEvent],
    cfg: &CoincidenceConfig,
    epoch_ns: u64,
) -> Result<CoincidenceOutput> {
    check_sorted(signal, Arm::Signal)?;
    check_sorted(idler, Arm::Idler)?;
    let plane = common_plane(signal, idler)?;
    if epoch_ns == 0 {
        return Err(Error::invalid("epoch length must be positive"));
    }
    let (Some(first), Some(last)) = (signal.first(), signal.last()) else {
        return Ok(build_output(signal, idler, plane, IndexMatch { pairs: vec![], ambiguous: vec![], peak_buffered: 0 }));
    };
    let tau = cfg.window;
    let overlap = 2 * tau;
    let epochs: Vec<u64> = (first.t / epoch_ns..=last.t / epoch_ns).collect();
    let parts: Vec<IndexMatch> = epochs
        .par_iter()
        .map(|&k| {
            let start = k * epoch_ns;
            let end = start + epoch_ns;
            let s_lo = signal.partition_point(|e| e.t < start.saturating_sub(overlap));
            let s_hi = signal.partition_point(|e| e.t < end);
            let i_lo = idler.partition_point(|e| e.t < start.saturating_sub(overlap + tau));
            let i_hi = idler.partition_point(|e| e.t <= end.saturating_add(tau));
            let mut m = match_indices(&signal[s_lo..s_hi], &idler[i_lo..i_hi], tau);
            m.pairs.retain(|&(si, _)| signal[s_lo + si].t >= start);
            for p in &mut m.pairs {
                p.0 += s_lo;
                p.1 += i_lo;
            }
            m.ambiguous.retain(|&si| signal[s_lo + si].t >= start);
            m
        })
        .collect();
    let mut pairs = Vec::new();
    let mut ambiguous = Vec::new();
    let mut peak = 0;
    for m in parts {
        pairs.extend(m.pairs);
        ambiguous.extend(m.ambiguous);
        peak = peak.max(m.peak_buffered);
    }
    let mut claimed = vec![false; idler.len()];
    pairs.retain(|&(_, ii)| !std::mem::replace(&mut claimed[ii], true));
    Ok(build_output(signal, idler, plane, IndexMatch { pairs, ambiguous, peak_buffered: peak }))
}

/// Splits a time-sorted mixed stream by plane and arm and matches both
/// planes. Events with an unknown arm are ignored.
pub fn match_all(events: &[PhotonEvent], cfg: &CoincidenceConfig) -> Result<CoincidenceOutput> {
    let mut by_plane: [[Vec<PhotonEvent>; 2]; 2] = Default::default();
    for e in events {
        let arm = match e.arm {
            Arm::Signal => 0,
            Arm::Idler => 1,
            Arm::Unknown => continue,
        };
        by_plane[e.plane as usize][arm].push(*e);
    }
    let mut out = CoincidenceOutput::default();
    let mut planes = Vec::new();
    for [s, i] in &by_plane {
        let o = match_coincidences(s, i, cfg)?;
        out.signal_singles += o.signal_singles;
        out.idler_singles += o.idler_singles;
        out.ambiguous += o.ambiguous;
        out.peak_buffered = out.peak_buffered.max(o.peak_buffered);
        planes.push(o.pairs);
    }
    let [a, b]: [Vec<_>; 2] = planes.try_into().expect("two planes");
    out.pairs = merge_pairs(a, b);
    Ok(out)
}

fn merge_pairs(a: Vec<CoincidencePair>, b: Vec<CoincidencePair>) -> Vec<CoincidencePair> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut ia, mut ib) = (a.into_iter().peekable(), b.into_iter().peekable());
    loop {
        let take_a = match (ia.peek(), ib.peek()) {
            (Some(x), Some(y)) => x.signal.t <= y.signal.t,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        out.push(if take_a { ia.next() } else { ib.next() }.expect("peeked"));
    }
    out
}

/// Physical coordinates of a matched pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCoords {
    pub plane: Plane,
    pub signal: Vec2,
    pub idler: Vec2,
}

impl PairCoords {
    pub fn from_pair(pair: &CoincidencePair, cam: &CameraParams) -> Option<Self> {
        Some(PairCoords {
            plane: pair.plane,
            signal: cam.event_coord(&pair.signal)?,
            idler: cam.event_coord(&pair.idler)?,
        })
    }

    /// `r_s - r_i` in the position plane, `k_s + k_i` in the momentum plane.
    pub fn correlation_coordinate(&self) -> Vec2 {
        match self.plane {
            Plane::Position => [self.signal[0] - self.idler[0], self.signal[1] - self.idler[1]],
            Plane::Momentum => [self.signal[0] + self.idler[0], self.signal[1] + self.idler[1]],
        }
    }
}

const PEAK_REFINEMENTS: usize = 3;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Keeps pairs whose correlation coordinate lies within the plane's gate
/// radius of the gate center.
pub fn spatial_gate(pairs: &[CoincidencePair], cfg: &CoincidenceConfig, cam: &CameraParams) -> Result<Vec<CoincidencePair>> {
    let mut centers = [[0.0; 2]; 2];
    for plane in Plane::ALL {
        if !pairs.iter().any(|p| p.plane == plane) {
            continue;
        }
        if cfg.radius(plane).is_none() {
            return Err(Error::invalid(format!("no gate radius configured for the {} plane", plane.as_str())));
        }
        if cfg.gate_center == GateCenter::Peak {
            let coords: Vec<Vec2> = pairs
                .iter()
                .filter(|p| p.plane == plane)
                .filter_map(|p| PairCoords::from_pair(p, cam))
                .map(|c| c.correlation_coordinate())
                .collect();
            let mut center = [0.0; 2];
            for (axis, c) in center.iter_mut().enumerate() {
                let mut v: Vec<f64> = coords.iter().map(|c| c[axis]).collect();
                *c = median(&mut v);
            }
            let radius = cfg.radius(plane).expect("checked above");
            for _ in 0..PEAK_REFINEMENTS {
                let (mut sum, mut k) = ([0.0; 2], 0usize);
                for c in &coords {
                    if (c[0] - center[0]).hypot(c[1] - center[1]) <= radius {
                        sum[0] += c[0];
                        sum[1] += c[1];
                        k += 1;
                    }
                }
                if k == 0 {
                    break;
                }
                center = [sum[0] / k as f64, sum[1] / k as f64];
            }
            centers[plane as usize] = center;
        }
    }
    let mut kept = Vec::with_capacity(pairs.len());
    for p in pairs {
        let radius = cfg.radius(p.plane).expect("checked above");
        let c = PairCoords::from_pair(p, cam)
            .ok_or_else(|| Error::invalid("pair event outside every camera region"))?
            .correlation_coordinate();
        let center = centers[p.plane as usize];
        let (dx, dy) = (c[0] - center[0], c[1] - center[1]);
        if (dx * dx + dy * dy).sqrt() <= radius {
            kept.push(*p);
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BenchReport {
    pub events: usize,
    pub pairs: usize,
    pub seconds: f64,
    pub events_per_second: f64,
    pub threads: usize,
    pub cpu: String,
}

fn cpu_model() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

/// Synthetic single-plane stream at 10⁵ events/s: 30 % of the events are
/// jittered pair partners, the rest uncorrelated singles split evenly
/// between the arms.
pub fn synthetic_stream(n_events: usize, seed: u64) -> (Vec<PhotonEvent>, Vec<PhotonEvent>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = 1e5;
    let mut signal = Vec::with_capacity(n_events / 2 + 1);
    let mut idler = Vec::with_capacity(n_events / 2 + 1);
    let mut t = 0.0;
    let ev = |t: f64, arm, px| PhotonEvent { t: t.max(0.0).round() as u64, plane: Plane::Position, arm, px, py: px, truth: None };
    let mut produced = 0;
    while produced < n_events {
        let gap: f64 = Exp1.sample(&mut rng);
        t += gap * 1e9 / rate;
        let px = rng.random_range(0..128u16);
        let r: f64 = rng.random();
        if r < 0.15 && produced + 1 < n_events {
            let js: f64 = StandardNormal.sample(&mut rng);
            let ji: f64 = StandardNormal.sample(&mut rng);
            signal.push(ev(t + 7.0 * js, Arm::Signal, px));
            idler.push(ev(t + 7.0 * ji, Arm::Idler, px + 128));
            produced += 2;
        } else if r < 0.575 {
            signal.push(ev(t, Arm::Signal, px));
            produced += 1;
        } else {
            idler.push(ev(t, Arm::Idler, px + 128));
            produced += 1;
        }
    }
    signal.sort_by_key(PhotonEvent::key);
    idler.sort_by_key(PhotonEvent::key);
    (signal, idler)
}

/// Times one merge-and-match pass over `n_events` synthetic events.
pub fn throughput_bench(n_events: usize, cfg: &CoincidenceConfig, seed: u64) -> Result<BenchReport> {
    let (signal, idler) = synthetic_stream(n_events, seed);
    let start = Instant::now();
    let merged = merge_streams(vec![signal, idler])?;
    let out = match_all(&merged, cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        events: merged.len(),
        pairs: out.pairs.len(),
        seconds,
        events_per_second: merged.len() as f64 / seconds.max(1e-12),
        threads: rayon::current_num_threads(),
        cpu: cpu_model(),
    })
}
