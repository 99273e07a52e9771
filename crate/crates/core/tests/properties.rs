use proptest::prelude::*;
use qcbt::coincidence::PairCoords;
use qcbt::optics::{
    compose, four_f_system, mat_propagation, mat_thin_lens, overlap_product_min_uncertainty, overlap_uncertainty_product,
    trajectory_change, AbcdMatrix, OverlapConfig, Ray,
};
use qcbt::tracking::{centroid, correlation_centroid, efficiency_bound, CorrelationMode, TrialStatistics};
use qcbt::Plane;

/// A lossless channel from three free entries: D follows from AD − BC = 1.
fn channel() -> impl Strategy<Value = AbcdMatrix> {
    (0.2f64..3.0, prop::bool::ANY, -2e4f64..2e4, -1e-3f64..1e-3).prop_map(|(a, neg, b, c)| {
        let a = if neg { -a } else { a };
        AbcdMatrix::new(a, b, c, (1.0 + b * c) / a)
    })
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * scale.max(1.0)
}

proptest! {
    #[test]
    fn composition_keeps_unit_determinant(m1 in channel(), m2 in channel(), f in 1e3f64..1e5) {
        let lens = mat_thin_lens(f).unwrap();
        let total = compose(&[m1, lens, m2, mat_propagation(f)]).unwrap();
        let scale = [m1, m2, total].iter().flat_map(|m| [m.a, m.b, m.c, m.d]).fold(1.0f64, |s, v| s.max(v.abs()));
        prop_assert!((total.determinant() - 1.0).abs() < 1e-9 * scale * scale);
    }

    #[test]
    fn trajectory_change_matches_closed_forms(
        m in channel(), f in 1e3f64..1e5, d in 0.0f64..1e5, r in -1e3f64..1e3, theta in -1e-2f64..1e-2,
    ) {
        let dc = trajectory_change(&m, f, d, Ray::new(r, theta)).unwrap();
        let AbcdMatrix { a, b, c, d: dd } = m;
        let dr = (c * f - dd + 1.0) * r + c * f * f * theta;
        let dth = ((b - d - (a + dd - 2.0) * f + c * f * f) * r - ((a - 1.0) * f * f - c * f.powi(3)) * theta) / (f * f);
        // Cancellation inside the composed matrices sets the error scale.
        let scale_r = [c * f * r, dd * r, r, c * f * f * theta].iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let scale_t = [b * r, d * r, a * f * r, c * f * f * r, a * f * f * theta, c * f.powi(3) * theta]
            .iter()
            .fold(0.0f64, |s, v| s.max(v.abs())) / (f * f);
        prop_assert!((dc.delta_r - dr).abs() <= 1e-9 * scale_r.max(1.0), "{} vs {}", dc.delta_r, dr);
        prop_assert!((dc.delta_theta - dth).abs() <= 1e-9 * scale_t.max(1e-6), "{} vs {}", dc.delta_theta, dth);
    }

    #[test]
    fn unperturbed_channel_changes_nothing(f in 1e3f64..1e5, d in 0.0f64..1e5, r in -1e3f64..1e3, theta in -1e-2f64..1e-2) {
        let dc = trajectory_change(&mat_propagation(d), f, d, Ray::new(r, theta)).unwrap();
        prop_assert_eq!((dc.delta_r, dc.delta_theta), (0.0, 0.0));
        // The reference system images with inversion: r → −r.
        let out = four_f_system(&mat_propagation(d), f).unwrap().apply(Ray::new(r, theta));
        prop_assert!(close(out.r, -r, r.abs()));
    }

    #[test]
    fn overlap_product_respects_bound(
        x1 in 1.0f64..1e3, x2 in 1.0f64..1e3, e1 in 1.0f64..10.0, e2 in 1.0f64..10.0, n in 1u64..100_000,
    ) {
        let cfg = OverlapConfig { sigma_x1: x1, sigma_x2: x2, sigma_k1: 0.5 * e1 / x1, sigma_k2: 0.5 * e2 / x2, n };
        let p = overlap_uncertainty_product(&cfg).unwrap();
        prop_assert!(p >= 2.0 / n as f64 * (1.0 - 1e-12));
    }

    #[test]
    fn minimum_uncertainty_overlap_has_closed_form(alpha in 0.05f64..20.0, sx in 1.0f64..1e3, n in 1u64..100_000) {
        let p = overlap_uncertainty_product(&OverlapConfig::minimum_uncertainty(sx, alpha, n)).unwrap();
        let q = overlap_product_min_uncertainty(alpha, n);
        prop_assert!((p - q).abs() <= 1e-12 * q);
    }

    #[test]
    fn centroid_is_translation_equivariant(
        pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..200), sx in -1e3f64..1e3, sy in -1e3f64..1e3,
    ) {
        let a: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + sx, p[1] + sy]).collect();
        let (ca, cb) = (centroid(&a).unwrap(), centroid(&b).unwrap());
        prop_assert!((cb[0] - ca[0] - sx).abs() < 1e-9 && (cb[1] - ca[1] - sy).abs() < 1e-9);
    }

    #[test]
    fn correlation_centroids_see_only_the_signal_shift(
        pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -50f64..50.0), 1..100), shift in -100f64..100.0, common in -500f64..500.0,
    ) {
        // A common shift of both photons cancels in the difference; a shift
        // of the signal photon alone passes through.
        let build = |sig: f64, com: f64, plane| -> Vec<PairCoords> {
            pts.iter().map(|&(x, y, dx)| PairCoords { plane, signal: [x + dx + sig + com, y], idler: [x + com, y] }).collect()
        };
        let base = correlation_centroid(&build(0.0, 0.0, Plane::Position), CorrelationMode::Difference).unwrap();
        let moved = correlation_centroid(&build(shift, common, Plane::Position), CorrelationMode::Difference).unwrap();
        prop_assert!((moved[0] - base[0] - shift).abs() < 1e-9);
        let sum0 = correlation_centroid(&build(0.0, 0.0, Plane::Momentum), CorrelationMode::Sum).unwrap();
        let sum1 = correlation_centroid(&build(shift, 0.0, Plane::Momentum), CorrelationMode::Sum).unwrap();
        prop_assert!((sum1[0] - sum0[0] - shift).abs() < 1e-9);
    }

    #[test]
    fn trial_spread_scales_with_values(vals in prop::collection::vec(-10f64..10.0, 2..60), k in 0.01f64..100.0, off in -1e3f64..1e3) {
        let a = TrialStatistics::new(vals.clone(), 10).unwrap();
        let b = TrialStatistics::new(vals.iter().map(|v| k * v + off).collect(), 10).unwrap();
        prop_assert!((b.std - k * a.std).abs() <= 1e-9 * (1.0 + k * a.std));
        prop_assert!((b.se_std - b.std / (2.0 * (vals.len() - 1) as f64).sqrt()).abs() <= 1e-12 * (1.0 + b.std));
    }

    #[test]
    fn efficiency_bound_is_inverse_in_efficiency(dr in 1.0f64..100.0, dk in 1e-4f64..1e-2, eps in 0.001f64..1.0, ns in 1u64..1_000_000) {
        let b = efficiency_bound(dr, dk, eps, ns).unwrap();
        prop_assert!((b.product * eps * ns as f64 - 2.0 * dr * dk).abs() <= 1e-12 * 2.0 * dr * dk);
        prop_assert!((b.break_even - 2.0 * dr * dk).abs() <= 1e-15);
    }
}
