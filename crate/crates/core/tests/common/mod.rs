#![allow(dead_code)]

use qcbt::camera::PhotonEvent;
use qcbt::{Arm, Plane};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

pub fn event(t: u64, arm: Arm, id: u16) -> PhotonEvent {
    PhotonEvent { t, plane: Plane::Position, arm, px: id, py: 0, truth: None }
}

/// O(N·M) reference for the matching policy: signals in order, each taking
/// the unmatched idler with the smallest |dt| inside the window, ties to the
/// earlier idler. A zero window is degenerate and matches nothing. Returns
/// index pairs.
pub fn brute_force_match(signal: &[PhotonEvent], idler: &[PhotonEvent], window: u64) -> Vec<(usize, usize)> {
    if window == 0 {
        return Vec::new();
    }
    let mut used = vec![false; idler.len()];
    let mut out = Vec::new();
    for (si, s) in signal.iter().enumerate() {
        let mut best: Option<(u64, usize)> = None;
        for (ii, i) in idler.iter().enumerate() {
            let d = s.t.abs_diff(i.t);
            if used[ii] || d > window {
                continue;
            }
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, ii));
            }
        }
        if let Some((_, ii)) = best {
            used[ii] = true;
            out.push((si, ii));
        }
    }
    out
}

/// Sorted timestamps of a Poisson process of `rate` events/s over `t_ns`,
/// rounded to whole ns.
pub fn poisson_times(rng: &mut impl Rng, rate: f64, t_ns: f64) -> Vec<u64> {
    let mean_gap = 1e9 / rate;
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        let g: f64 = Exp1.sample(rng);
        t += g * mean_gap;
        if t >= t_ns {
            return out;
        }
        out.push(t.round() as u64);
    }
}

/// Signal and idler streams with ids in `px`, sorted by time. Times are
/// drawn from a short range so that ties and contention are common.
pub fn dense_streams(seed: u64, n: usize, span: u64) -> (Vec<PhotonEvent>, Vec<PhotonEvent>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |arm, k: usize| {
        let mut v: Vec<u64> = (0..k).map(|_| rng.random_range(0..span)).collect();
        v.sort_unstable();
        v.into_iter().enumerate().map(|(i, t)| event(t, arm, i as u16)).collect::<Vec<_>>()
    };
    let ns = n / 2;
    (make(Arm::Signal, ns), make(Arm::Idler, n - ns))
}
