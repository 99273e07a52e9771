mod common;

use common::{brute_force_match, dense_streams, event, poisson_times};
use proptest::prelude::*;
use qcbt::camera::CameraParams;
use qcbt::coincidence::{
    match_coincidences, match_coincidences_parallel, CoincidenceConfig, CoincidenceOutput, GateCenter,
};
use qcbt::scenarios::{simulate_spdc_block, SpdcSetup, Target};
use qcbt::source::{Displacement, SpdcSourceParams};
use qcbt::{Arm, Plane};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(window: u64) -> CoincidenceConfig {
    CoincidenceConfig { window, ..CoincidenceConfig::default() }
}

fn index_pairs(out: &CoincidenceOutput) -> Vec<(usize, usize)> {
    out.pairs.iter().map(|p| (p.signal.px as usize, p.idler.px as usize)).collect()
}

#[test]
fn matches_brute_force_on_contended_streams() {
    for seed in 0..200 {
        // ~1000 events in 20 μs: several candidates per window, many ties.
        let (s, i) = dense_streams(seed, 1000, 20_000);
        for window in [0, 1, 7, 20, 60] {
            let fast = match_coincidences(&s, &i, &config(window)).unwrap();
            assert_eq!(index_pairs(&fast), brute_force_match(&s, &i, window), "seed {seed} window {window}");
        }
    }
}

#[test]
fn prefers_closest_then_earliest_idler() {
    let s = vec![event(100, Arm::Signal, 0)];
    let i = vec![event(90, Arm::Idler, 0), event(104, Arm::Idler, 1), event(110, Arm::Idler, 2)];
    let out = match_coincidences(&s, &i, &config(20)).unwrap();
    assert_eq!(index_pairs(&out), vec![(0, 1)]);
    assert_eq!(out.pairs[0].dt, -4);
    let tie = vec![event(95, Arm::Idler, 0), event(105, Arm::Idler, 1)];
    assert_eq!(index_pairs(&match_coincidences(&s, &tie, &config(20)).unwrap()), vec![(0, 0)]);
}

fn accidental_count(seed: u64, rate: f64, t_s: f64, tau: u64) -> f64 {
    // Independent Poisson streams: every coincidence is accidental.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s: Vec<_> = poisson_times(&mut rng, rate, t_s * 1e9).into_iter().map(|t| event(t, Arm::Signal, 0)).collect();
    let i: Vec<_> = poisson_times(&mut rng, rate, t_s * 1e9).into_iter().map(|t| event(t, Arm::Idler, 0)).collect();
    match_coincidences(&s, &i, &config(tau)).unwrap().pairs.len() as f64
}

#[test]
fn accidentals_follow_two_tau_rates_time() {
    let got = accidental_count(2024, 1e4, 10.0, 20);
    let expected = 2.0 * 20e-9 * 1e4 * 1e4 * 10.0;
    assert!((got - expected).abs() <= 3.0 * expected.sqrt(), "{got} vs {expected}");
}

#[test]
fn accidentals_at_high_statistics_count_whole_ns() {
    // With whole-ns timestamps |t_s - t_i| ≤ τ spans 2τ+1 ns, a 2.5 %
    // excess over 2τ that only shows once thousands are counted.
    let got = accidental_count(2025, 1e5, 10.0, 20);
    let exact = 41e-9 * 1e5 * 1e5 * 10.0;
    assert!((got - exact).abs() < 3.0 * exact.sqrt(), "{got} vs {exact}");
}

#[test]
fn default_gate_retains_true_pairs() {
    // Tail of a 2-D Gaussian: P(|d| ≤ 4δ) = 1 − exp(−8). A low pair rate
    // keeps accidentals out of the ungated sample.
    let source = SpdcSourceParams::pure_state(42.0, 1.06e-3, 1e3);
    let ungated = CoincidenceConfig { rho_r: Some(f64::INFINITY), rho_k: Some(f64::INFINITY), ..CoincidenceConfig::default() };
    let setup = SpdcSetup { source, camera: CameraParams::high_resolution(), coincidence: ungated, background: None };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bg = ChaCha8Rng::seed_from_u64(9);
    let block = simulate_spdc_block(&setup, &Displacement::ZERO, Target::Budget(400_000), 0.0, &mut rng, &mut bg, false).unwrap();
    let gated = CoincidenceConfig::default().with_default_gates(42.0, 1.06e-3);
    let retained = |plane: Plane| {
        let pairs: Vec<_> = block.plane(plane).to_vec();
        let kept = pairs
            .iter()
            .filter(|p| {
                let c = p.correlation_coordinate();
                c[0].hypot(c[1]) <= gated.radius(plane).unwrap()
            })
            .count();
        kept as f64 / pairs.len() as f64
    };
    let oracle = 1.0 - (-8.0f64).exp();
    for plane in Plane::ALL {
        let r = retained(plane);
        assert!((r - oracle).abs() < 1e-3, "{plane:?}: retention {r} vs {oracle}");
    }
}

#[test]
fn peak_gate_follows_displaced_pixelized_peak() {
    // On 55 μm pixels the median of the difference snaps to 0 for a 25 μm
    // shift; an off-centre gate would then pull the estimate towards zero.
    let source = SpdcSourceParams::pure_state(42.0, 1.06e-3, 1e5);
    let mut camera = CameraParams::tpx3();
    camera.efficiency_signal = 1.0;
    camera.efficiency_idler = 1.0;
    let coincidence = CoincidenceConfig { gate_center: GateCenter::Peak, ..CoincidenceConfig::default().with_default_gates(42.0, 1.06e-3) };
    let setup = SpdcSetup { source, camera, coincidence, background: None };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut bg = ChaCha8Rng::seed_from_u64(11);
    let disp = Displacement { dx: 25.0, ..Displacement::ZERO };
    let n = 200_000;
    let block = simulate_spdc_block(&setup, &disp, Target::PairsPerPlane(n), 0.0, &mut rng, &mut bg, false).unwrap();
    let mean = block.plane(Plane::Position).iter().map(|p| p.correlation_coordinate()[0]).sum::<f64>() / n as f64;
    let se = (42.0f64.powi(2) + 55.0f64.powi(2) / 6.0).sqrt() / (n as f64).sqrt();
    assert!((mean - 25.0).abs() < 4.0 * se, "{mean} ± {se}");
}

fn stream_strategy() -> impl Strategy<Value = (Vec<u64>, Vec<u64>, u64)> {
    (
        prop::collection::vec(0u64..5000, 0..300),
        prop::collection::vec(0u64..5000, 0..300),
        0u64..80,
    )
        .prop_map(|(mut s, mut i, w)| {
            s.sort_unstable();
            i.sort_unstable();
            (s, i, w)
        })
}

fn to_events(ts: &[u64], arm: Arm) -> Vec<qcbt::camera::PhotonEvent> {
    ts.iter().enumerate().map(|(k, &t)| event(t, arm, k as u16)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn equals_brute_force((s, i, w) in stream_strategy()) {
        let (s, i) = (to_events(&s, Arm::Signal), to_events(&i, Arm::Idler));
        let out = match_coincidences(&s, &i, &config(w)).unwrap();
        prop_assert_eq!(index_pairs(&out), brute_force_match(&s, &i, w));
    }

    #[test]
    fn one_to_one_within_window_and_conserving((s, i, w) in stream_strategy()) {
        let (se, ie) = (to_events(&s, Arm::Signal), to_events(&i, Arm::Idler));
        let out = match_coincidences(&se, &ie, &config(w)).unwrap();
        let pairs = index_pairs(&out);
        let mut sig: Vec<_> = pairs.iter().map(|p| p.0).collect();
        let mut idl: Vec<_> = pairs.iter().map(|p| p.1).collect();
        sig.dedup();
        idl.sort_unstable();
        idl.dedup();
        prop_assert_eq!(sig.len(), pairs.len());
        prop_assert_eq!(idl.len(), pairs.len());
        for p in &out.pairs {
            prop_assert!(p.dt.unsigned_abs() <= w);
            prop_assert_eq!(p.dt, p.signal.t as i64 - p.idler.t as i64);
        }
        prop_assert_eq!(out.pairs.len() as u64 + out.signal_singles, s.len() as u64);
        prop_assert_eq!(out.pairs.len() as u64 + out.idler_singles, i.len() as u64);
        prop_assert!(out.pairs.windows(2).all(|p| p[0].signal.t <= p[1].signal.t));
    }

    #[test]
    fn unmatched_signals_leave_no_free_idler_in_window((s, i, w) in stream_strategy()) {
        let w = w.max(1);
        let (se, ie) = (to_events(&s, Arm::Signal), to_events(&i, Arm::Idler));
        let pairs = index_pairs(&match_coincidences(&se, &ie, &config(w)).unwrap());
        let mut sig_used = vec![false; s.len()];
        let mut idl_used = vec![false; i.len()];
        for &(a, b) in &pairs {
            sig_used[a] = true;
            idl_used[b] = true;
        }
        for (a, &ts) in s.iter().enumerate().filter(|(a, _)| !sig_used[*a]) {
            for (b, &ti) in i.iter().enumerate() {
                prop_assert!(idl_used[b] || ts.abs_diff(ti) > w, "signal {} left unmatched beside idler {}", a, b);
            }
        }
    }

    #[test]
    fn parallel_epochs_agree_with_single_pass(seed in 0u64..1000, epoch in 200u64..5000) {
        let (s, i) = dense_streams(seed, 600, 60_000);
        let seq = match_coincidences(&s, &i, &config(20)).unwrap();
        let par = match_coincidences_parallel(&s, &i, &config(20), epoch).unwrap();
        prop_assert_eq!(index_pairs(&seq), index_pairs(&par));
    }
}

#[test]
fn unsorted_input_is_rejected() {
    let s = vec![event(10, Arm::Signal, 0), event(5, Arm::Signal, 1)];
    let err = match_coincidences(&s, &[], &config(20)).unwrap_err();
    assert!(matches!(err, qcbt::Error::UnsortedArm { index: 1, .. }), "{err}");
}

#[test]
fn buffer_stays_within_one_window_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let tau = 20;
    let s: Vec<_> = poisson_times(&mut rng, 2e6, 1e7).into_iter().map(|t| event(t, Arm::Signal, 0)).collect();
    let i: Vec<_> = poisson_times(&mut rng, 2e6, 1e7).into_iter().map(|t| event(t, Arm::Idler, 0)).collect();
    let out = match_coincidences(&s, &i, &config(tau)).unwrap();
    // Most idlers inside any closed span of 2τ ns.
    let mut densest = 0;
    let mut lo = 0;
    for hi in 0..i.len() {
        while i[hi].t - i[lo].t > 2 * tau {
            lo += 1;
        }
        densest = usize::max(densest, hi - lo + 1);
    }
    assert!(out.peak_buffered >= 1 && out.peak_buffered <= densest, "{} vs {densest}", out.peak_buffered);
}
