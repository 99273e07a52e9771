//! Source → camera → coincidence chains that produce one block of data.
//!
//! SPDC blocks are generated in chunks. Each chunk is a self-contained time
//! segment: its pairs are detected, sorted per region, merged with any
//! background injected over the same span, matched and gated. Chunks
//! continue until the target is met; surplus pairs are dropped from the end
//! so a block always holds its earliest pairs.

use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::camera::{inject_background, merge_streams, sort_events, BackgroundSpec, CameraParams, Detector, PhotonEvent};
use crate::coincidence::{match_coincidences, spatial_gate, CoincidenceConfig, PairCoords};
use crate::source::{Displacement, LaserSource, LaserSourceParams, Origin, SpdcSource, SpdcSourceParams};
use crate::{Arm, Error, Plane, Result, Vec2};

const MAX_CHUNK: u64 = 1 << 18;

/// How much data one SPDC block needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// At least this many gated pairs in each plane; extra pairs are cut.
    PairsPerPlane(usize),
    /// Exactly this many generated pairs, whatever survives.
    Budget(u64),
}

/// Everything an SPDC block needs besides randomness.
#[derive(Debug, Clone)]
pub struct SpdcSetup {
    pub source: SpdcSourceParams,
    pub camera: CameraParams,
    /// Must carry both gate radii.
    pub coincidence: CoincidenceConfig,
    pub background: Option<BackgroundSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct BlockCounts {
    pub generated_pairs: u64,
    pub detected: u64,
    pub background_events: u64,
    pub coincidences: u64,
    pub gated: u64,
    /// Gated pairs whose photons do not share a pair id (needs truth tags).
    pub accidental_gated: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SpdcBlock {
    /// Gated pairs per plane, indexed by `Plane as usize`, in time order.
    pub pairs: [Vec<PairCoords>; 2],
    pub counts: BlockCounts,
    /// Every detected event when requested, time-sorted.
    pub events: Vec<PhotonEvent>,
}

impl SpdcBlock {
    pub fn plane(&self, plane: Plane) -> &[PairCoords] {
        &self.pairs[plane as usize]
    }
}

/// Which photons of each pair survive detection. Rather than two draws per
/// pair, draws the run of pairs that lose both photons (geometric) and then
/// the outcome of the next pair conditioned on keeping at least one; the
/// sequence of outcomes has the same distribution.
struct PairThinning {
    any: f64,
    geometric: Option<Geometric>,
    /// Cumulative probabilities of (both, signal only) given at least one.
    both: f64,
    signal_only: f64,
}

impl PairThinning {
    fn new(es: f64, ei: f64) -> Self {
        let any = 1.0 - (1.0 - es) * (1.0 - ei);
        PairThinning {
            any,
            geometric: (any > 0.0 && any < 1.0).then(|| Geometric::new(any).expect("probability in (0, 1)")),
            both: es * ei / any,
            signal_only: (es * ei + es * (1.0 - ei)) / any,
        }
    }

    /// `(pairs lost entirely, [signal kept, idler kept] of the next pair)`.
    fn next<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, [bool; 2]) {
        if self.any <= 0.0 {
            return (u64::MAX, [false, false]);
        }
        let lost = self.geometric.as_ref().map_or(0, |g| g.sample(rng));
        if self.both >= 1.0 {
            return (lost, [true, true]);
        }
        let u: f64 = rng.random::<f64>();
        let kept = if u < self.both {
            [true, true]
        } else if u < self.signal_only {
            [true, false]
        } else {
            [false, true]
        };
        (lost, kept)
    }
}

fn region_index(plane: Plane, arm: Arm) -> usize {
    2 * plane as usize + (arm == Arm::Idler) as usize
}

/// Simulates one SPDC block starting at `start_ns`.
///
/// Pair generation and detection draw from `rng`; background draws from
/// `bg_rng`, so switching the background on or off leaves the pairs
/// unchanged.
pub fn simulate_spdc_block<R: Rng, B: Rng>(
    setup: &SpdcSetup,
    disp: &Displacement,
    target: Target,
    start_ns: f64,
    rng: &mut R,
    bg_rng: &mut B,
    keep_events: bool,
) -> Result<SpdcBlock> {
    if setup.coincidence.rho_r.is_none() || setup.coincidence.rho_k.is_none() {
        return Err(Error::invalid("SPDC blocks need both gate radii"));
    }
    if !disp.is_finite() {
        return Err(Error::invalid("displacement must be finite"));
    }
    let mut source = SpdcSource::new(setup.source, start_ns)?;
    let mut detector = Detector::new(setup.camera.clone())?;
    let cam = &setup.camera;
    // Fraction of pairs expected to end up gated in a given plane.
    let yield_per_plane = 0.25 * cam.efficiency_signal * cam.efficiency_idler * 0.9;
    let mut block = SpdcBlock::default();
    let thinning = PairThinning::new(cam.efficiency_signal, cam.efficiency_idler);
    // Chunks are sized by detections, not by generated pairs.
    let max_chunk = (MAX_CHUNK as f64 / thinning.any.max(1e-6)) as u64;

    loop {
        let chunk = match target {
            Target::PairsPerPlane(n) => {
                let have = block.pairs.iter().map(Vec::len).min().expect("two planes");
                if have >= n {
                    break;
                }
                if block.counts.generated_pairs > 0 && block.counts.gated == 0 && block.counts.generated_pairs > 1 << 22 {
                    return Err(Error::invalid("no coincidences survive; check efficiencies, window and gates"));
                }
                ((((n - have) as f64 / yield_per_plane.max(1e-9)) * 1.1) as u64 + 64).min(max_chunk)
            }
            Target::Budget(g) => {
                let left = g - block.counts.generated_pairs;
                if left == 0 {
                    break;
                }
                left.min(max_chunk)
            }
        };
        let chunk_start = source.now();
        let mut regions: [Vec<PhotonEvent>; 4] = Default::default();
        let mut left = chunk;
        while left > 0 {
            let (lost_pairs, kept) = thinning.next(rng);
            if lost_pairs >= left {
                source.skip_many(left, rng);
                detector.record_lost(2 * left);
                break;
            }
            source.skip_many(lost_pairs, rng);
            detector.record_lost(2 * lost_pairs + kept.iter().filter(|k| !**k).count() as u64);
            left -= lost_pairs + 1;
            let pair = source.sample(disp, rng);
            for (photon, keep) in pair.photons().iter().zip(kept) {
                if !keep {
                    continue;
                }
                if let Some(ev) = detector.place(photon, rng) {
                    regions[region_index(ev.plane, ev.arm)].push(ev);
                }
            }
        }
        block.counts.generated_pairs += chunk;
        let chunk_end = source.now();
        for r in &mut regions {
            sort_events(r);
        }
        if let Some(spec) = &setup.background {
            let span_s = ((chunk_end - chunk_start) * 1e-9).max(1e-9);
            let (bg, _) = inject_background(spec, cam, chunk_start, span_s, bg_rng)?;
            block.counts.background_events += bg.len() as u64;
            let mut split: [Vec<PhotonEvent>; 4] = Default::default();
            for ev in bg {
                if ev.arm != Arm::Unknown {
                    split[region_index(ev.plane, ev.arm)].push(ev);
                }
            }
            for (r, b) in regions.iter_mut().zip(split) {
                if !b.is_empty() {
                    *r = merge_streams(vec![std::mem::take(r), b])?;
                }
            }
        }
        if keep_events {
            let all = regions.iter().cloned().collect();
            let merged = merge_streams(all)?;
            block.events = merge_streams(vec![std::mem::take(&mut block.events), merged])?;
        }
        block.counts.detected = detector.detected();
        for plane in Plane::ALL {
            let s = &regions[region_index(plane, Arm::Signal)];
            let i = &regions[region_index(plane, Arm::Idler)];
            let matched = match_coincidences(s, i, &setup.coincidence)?;
            block.counts.coincidences += matched.pairs.len() as u64;
            let gated = spatial_gate(&matched.pairs, &setup.coincidence, cam)?;
            block.counts.gated += gated.len() as u64;
            for p in &gated {
                let same_pair = matches!((p.signal.truth, p.idler.truth), (Some(Origin::Pair(a)), Some(Origin::Pair(b))) if a == b);
                if !same_pair {
                    block.counts.accidental_gated += 1;
                }
                let coords = PairCoords::from_pair(p, cam).expect("gated pairs lie inside their regions");
                block.pairs[plane as usize].push(coords);
            }
        }
    }
    if let Target::PairsPerPlane(n) = target {
        for p in &mut block.pairs {
            p.truncate(n);
        }
    }
    Ok(block)
}

/// Detected laser photons per plane.
#[derive(Debug, Clone, Default)]
pub struct LaserBlock {
    pub coords: [Vec<Vec2>; 2],
    pub events: Vec<PhotonEvent>,
}

impl LaserBlock {
    pub fn plane(&self, plane: Plane) -> &[Vec2] {
        &self.coords[plane as usize]
    }
}

/// Collects `n` detected laser photons in each requested plane.
pub fn simulate_laser_block<R: Rng>(
    params: &LaserSourceParams,
    camera: &CameraParams,
    disp: &Displacement,
    n: usize,
    planes: &[Plane],
    start_ns: f64,
    rng: &mut R,
    keep_events: bool,
) -> Result<LaserBlock> {
    if camera.efficiency_signal <= 0.0 && n > 0 {
        return Err(Error::invalid("laser photons cannot be detected at zero signal efficiency"));
    }
    let mut source = LaserSource::new(*params, start_ns)?;
    let mut detector = Detector::new(camera.clone())?;
    let mut block = LaserBlock::default();
    let full = |b: &LaserBlock| planes.iter().all(|&p| b.coords[p as usize].len() >= n);
    let mut misses = 0u64;
    while !full(&block) {
        let photon = source.sample(disp, rng);
        let Some(ev) = detector.detect(&photon, rng) else {
            misses += 1;
            if misses > 1 << 26 && block.coords.iter().all(Vec::is_empty) {
                return Err(Error::invalid("laser photons never reach the sensor"));
            }
            continue;
        };
        let slot = &mut block.coords[ev.plane as usize];
        if slot.len() < n && planes.contains(&ev.plane) {
            slot.push(camera.event_coord(&ev).expect("detected events lie in a region"));
            if keep_events {
                block.events.push(ev);
            }
        }
    }
    sort_events(&mut block.events);
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::GateCenter;
    use crate::tracking::{correlation_centroid, CorrelationMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(camera: CameraParams) -> SpdcSetup {
        let source = SpdcSourceParams::pure_state(42.0, 1.06e-3, 1e5);
        let coincidence =
            CoincidenceConfig { gate_center: GateCenter::Peak, ..CoincidenceConfig::default().with_default_gates(42.0, 1.06e-3) };
        SpdcSetup { source, camera, coincidence, background: None }
    }

    #[test]
    fn spdc_block_meets_target_with_true_pairs() {
        let s = setup(CameraParams::high_resolution());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bg = ChaCha8Rng::seed_from_u64(2);
        let disp = Displacement { dx: 25.0, du: 2e-3, ..Displacement::ZERO };
        let block = simulate_spdc_block(&s, &disp, Target::PairsPerPlane(4000), 0.0, &mut rng, &mut bg, false).unwrap();
        assert_eq!(block.plane(Plane::Position).len(), 4000);
        assert_eq!(block.plane(Plane::Momentum).len(), 4000);
        assert_eq!(block.counts.accidental_gated, 0);
        let d = correlation_centroid(block.plane(Plane::Position), CorrelationMode::Difference).unwrap();
        assert!((d[0] - 25.0).abs() < 4.0 * 42.0 / 4000f64.sqrt(), "{d:?}");
        let k = correlation_centroid(block.plane(Plane::Momentum), CorrelationMode::Sum).unwrap();
        assert!((k[0] - 2e-3).abs() < 4.0 * 1.06e-3 / 4000f64.sqrt(), "{k:?}");
    }

    #[test]
    fn thinning_matches_independent_draws() {
        let (es, ei) = (0.3, 0.1);
        let th = PairThinning::new(es, ei);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut pairs, mut s, mut i, mut both) = (0u64, 0u64, 0u64, 0u64);
        while pairs < 2_000_000 {
            let (lost, kept) = th.next(&mut rng);
            pairs += lost + 1;
            s += kept[0] as u64;
            i += kept[1] as u64;
            both += (kept[0] && kept[1]) as u64;
        }
        let n = pairs as f64;
        for (got, p) in [(s, es), (i, ei), (both, es * ei)] {
            let sd = (n * p * (1.0 - p)).sqrt();
            assert!((got as f64 - n * p).abs() < 5.0 * sd, "{got} vs {}", n * p);
        }
        assert_eq!(PairThinning::new(1.0, 1.0).next(&mut rng), (0, [true, true]));
        assert_eq!(PairThinning::new(0.0, 0.0).next(&mut rng).0, u64::MAX);
    }

    #[test]
    fn budget_target_and_efficiency() {
        let mut cam = CameraParams::high_resolution();
        cam.efficiency_idler = 0.5;
        let s = setup(cam);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bg = ChaCha8Rng::seed_from_u64(4);
        let block = simulate_spdc_block(&s, &Displacement::ZERO, Target::Budget(40_000), 0.0, &mut rng, &mut bg, true).unwrap();
        assert_eq!(block.counts.generated_pairs, 40_000);
        // Same-plane pairs (1/4) with a detected idler (1/2), less window losses.
        let expected = 40_000.0 * 0.25 * 0.5 * 0.957;
        let got = block.plane(Plane::Position).len() as f64;
        assert!((got - expected).abs() < 5.0 * expected.sqrt(), "{got} vs {expected}");
        assert_eq!(block.events.len() as u64, block.counts.detected);
        assert!(block.events.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn background_does_not_change_pairs_stream() {
        let s = setup(CameraParams::tpx3());
        let spec = BackgroundSpec::FlatDark { rate: 50.0, regions: vec![] };
        let with_bg = SpdcSetup { background: Some(spec), ..s.clone() };
        let run = |setup: &SpdcSetup| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut bg = ChaCha8Rng::seed_from_u64(6);
            simulate_spdc_block(setup, &Displacement::ZERO, Target::Budget(20_000), 0.0, &mut rng, &mut bg, false).unwrap()
        };
        let (off, on) = (run(&s), run(&with_bg));
        assert_eq!(off.counts.background_events, 0);
        assert!(on.counts.background_events > 0);
        assert_eq!(off.counts.detected, on.counts.detected);
    }

    #[test]
    fn laser_block_counts_per_plane() {
        let params = LaserSourceParams { sigma_r: 52.7, sigma_k: 1.41e-2, photon_rate: 1e5, center: Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cam = CameraParams::tpx3();
        let b = simulate_laser_block(&params, &cam, &Displacement::ZERO, 300, &Plane::ALL, 0.0, &mut rng, true).unwrap();
        assert_eq!((b.plane(Plane::Position).len(), b.plane(Plane::Momentum).len()), (300, 300));
        assert_eq!(b.events.len(), 600);
        let only_r = simulate_laser_block(&params, &cam, &Displacement::ZERO, 50, &[Plane::Position], 0.0, &mut rng, false).unwrap();
        assert!(only_r.plane(Plane::Momentum).is_empty());
    }
}
