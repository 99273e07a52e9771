//! Paraxial ray-transfer (ABCD) algebra for one transverse axis.
//!
//! The reference geometry is a channel sandwiched between two imaging lenses
//! of focal length `f`, each a distance `f` from the input and output planes:
//!
//! ```text
//! prop(f) · lens(f) · channel · lens(f) · prop(f)
//! ```
//!
//! With an unperturbed channel `prop(d)` the system maps `(r, θ)` to
//! `(-r, (d - 2f)/f² · r - θ)`. A perturbed channel `[[A, B], [C, D]]`
//! changes the output by
//!
//! ```text
//! Δr = (Cf - D + 1) r + C f² θ
//! Δθ = ([B - d - (A + D - 2) f + C f²] r - [(A - 1) f² - C f³] θ) / f²
//! ```
//!
//! [`trajectory_change`] computes this by composing and subtracting the two
//! systems rather than from the closed form.

use crate::{Error, Result};

/// A ray on one transverse axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    /// Transverse position, μm.
    pub r: f64,
    /// Angle to the optical axis, rad.
    pub theta: f64,
}

impl Ray {
    pub fn new(r: f64, theta: f64) -> Self {
        Ray { r, theta }
    }
}

/// A 2×2 ray-transfer matrix `[[a, b], [c, d]]`.
///
/// `b` carries μm/rad and `c` rad/μm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbcdMatrix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl AbcdMatrix {
    pub const IDENTITY: AbcdMatrix = AbcdMatrix { a: 1.0, b: 0.0, c: 0.0, d: 1.0 };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        AbcdMatrix { a, b, c, d }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    /// `self · rhs`: `rhs` acts on the ray first.
    pub fn mul(&self, rhs: &AbcdMatrix) -> AbcdMatrix {
        AbcdMatrix {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
        }
    }

    pub fn apply(&self, ray: Ray) -> Ray {
        Ray {
            r: self.a * ray.r + self.b * ray.theta,
            theta: self.c * ray.r + self.d * ray.theta,
        }
    }

    /// Whether the determinant is one within `rel_tol`, relative to the
    /// magnitude of the two products that make it up.
    pub fn is_lossless(&self, rel_tol: f64) -> bool {
        let scale = (self.a * self.d).abs().max((self.b * self.c).abs()).max(1.0);
        (self.determinant() - 1.0).abs() <= rel_tol * scale
    }
}

/// Free-space propagation over `d` μm.
pub fn mat_propagation(d: f64) -> AbcdMatrix {
    AbcdMatrix::new(1.0, d, 0.0, 1.0)
}

/// Thin lens of focal length `f` μm. `f64::INFINITY` gives the identity.
pub fn mat_thin_lens(f: f64) -> Result<AbcdMatrix> {
    if f == 0.0 || f.is_nan() {
        return Err(Error::invalid(format!("thin lens focal length must be non-zero, got {f}")));
    }
    Ok(AbcdMatrix::new(1.0, 0.0, -1.0 / f, 1.0))
}

/// Product of the matrices in written order: the last element acts first.
pub fn compose(ms: &[AbcdMatrix]) -> Result<AbcdMatrix> {
    let (first, rest) = ms
        .split_first()
        .ok_or_else(|| Error::invalid("cannot compose an empty list of matrices"))?;
    Ok(rest.iter().fold(*first, |acc, m| acc.mul(m)))
}

/// The imaging system `prop(f) · lens(f) · channel · lens(f) · prop(f)`.
pub fn four_f_system(channel: &AbcdMatrix, f: f64) -> Result<AbcdMatrix> {
    let lens = mat_thin_lens(f)?;
    let prop = mat_propagation(f);
    compose(&[prop, lens, *channel, lens, prop])
}

/// Output change of the four-f system when the channel `prop(d)` is replaced
/// by `channel`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryChange {
    /// μm
    pub delta_r: f64,
    /// rad
    pub delta_theta: f64,
}

pub fn trajectory_change(channel: &AbcdMatrix, f: f64, d: f64, ray: Ray) -> Result<TrajectoryChange> {
    let reference = four_f_system(&mat_propagation(d), f)?.apply(ray);
    let perturbed = four_f_system(channel, f)?.apply(ray);
    Ok(TrajectoryChange {
        delta_r: perturbed.r - reference.r,
        delta_theta: perturbed.theta - reference.theta,
    })
}

/// Two classical beams overlapped to emulate simultaneous narrow position and
/// momentum widths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapConfig {
    /// Position widths of beams 1 and 2, μm.
    pub sigma_x1: f64,
    pub sigma_x2: f64,
    /// Momentum widths of beams 1 and 2, μm⁻¹.
    pub sigma_k1: f64,
    pub sigma_k2: f64,
    /// Photons per beam per plane.
    pub n: u64,
}

impl OverlapConfig {
    /// Both beams at minimum uncertainty, `σx1 = α σx2` and `σk2 = α σk1`.
    pub fn minimum_uncertainty(sigma_x2: f64, alpha: f64, n: u64) -> Self {
        let sigma_x1 = alpha * sigma_x2;
        OverlapConfig {
            sigma_x1,
            sigma_x2,
            sigma_k1: 0.5 / sigma_x1,
            sigma_k2: 0.5 / sigma_x2,
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.sigma_x1, self.sigma_x2, self.sigma_k1, self.sigma_k2];
        if widths.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid(format!("overlap widths must be finite and positive: {widths:?}")));
        }
        if self.n == 0 {
            return Err(Error::invalid("overlap photon count must be at least 1"));
        }
        // Relative slack so that minimum-uncertainty beams built in floating
        // point are not rejected.
        for (beam, sx, sk) in [(1, self.sigma_x1, self.sigma_k1), (2, self.sigma_x2, self.sigma_k2)] {
            if sx * sk < 0.5 * (1.0 - 1e-12) {
                return Err(Error::invalid(format!(
                    "beam {beam} violates the uncertainty limit: σx·σk = {} < 1/2",
                    sx * sk
                )));
            }
        }
        Ok(())
    }
}

/// Uncertainty product of centroid changes measured with two overlapped
/// beams, `(2/n) √(σx1²σk1² + σx2²σk2² + σx1²σk2² + σx2²σk1²)`.
pub fn overlap_uncertainty_product(cfg: &OverlapConfig) -> Result<f64> {
    cfg.validate()?;
    let (x1, x2) = (cfg.sigma_x1 * cfg.sigma_x1, cfg.sigma_x2 * cfg.sigma_x2);
    let (k1, k2) = (cfg.sigma_k1 * cfg.sigma_k1, cfg.sigma_k2 * cfg.sigma_k2);
    Ok(2.0 / cfg.n as f64 * (x1 * k1 + x2 * k2 + x1 * k2 + x2 * k1).sqrt())
}

/// The same product for minimum-uncertainty beams, `(1/n) √(2 + α² + 1/α²)`.
pub fn overlap_product_min_uncertainty(alpha: f64, n: u64) -> f64 {
    (2.0 + alpha * alpha + 1.0 / (alpha * alpha)).sqrt() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    // Hand-expanded products, independent of `AbcdMatrix::mul`.
    fn mul2(m: [[f64; 2]; 2], n: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = m[i][0] * n[0][j] + m[i][1] * n[1][j];
            }
        }
        out
    }

    #[test]
    fn propagation_basics() {
        assert_eq!(mat_propagation(0.0), AbcdMatrix::IDENTITY);
        assert_eq!(mat_propagation(100.0).b, 100.0);
        let f = 37.5;
        let twice = compose(&[mat_propagation(f), mat_propagation(f)]).unwrap();
        assert_eq!(twice, mat_propagation(2.0 * f));
    }

    #[test]
    fn thin_lens_basics() {
        assert_eq!(mat_thin_lens(f64::INFINITY).unwrap().c, 0.0);
        assert!(close(mat_thin_lens(1000.0).unwrap().c, -0.001, 1e-15));
        let pair = compose(&[mat_thin_lens(250.0).unwrap(), mat_thin_lens(-250.0).unwrap()]).unwrap();
        assert_eq!(pair, AbcdMatrix::IDENTITY);
        assert!(matches!(mat_thin_lens(0.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn compose_order_and_errors() {
        assert!(compose(&[]).is_err());
        assert_eq!(compose(&[AbcdMatrix::IDENTITY, AbcdMatrix::IDENTITY]).unwrap(), AbcdMatrix::IDENTITY);
        // prop(f) after lens(f) brings a parallel ray to the axis.
        let f = 200.0;
        let focus = compose(&[mat_propagation(f), mat_thin_lens(f).unwrap()]).unwrap();
        let out = focus.apply(Ray::new(3.0, 0.0));
        assert!(out.r.abs() < 1e-12);
        assert!(close(out.theta, -3.0 / f, 1e-15));
    }

    #[test]
    fn four_f_reference_output() {
        let (f, d) = (150.0, 420.0);
        let ray = Ray::new(12.0, 0.003);
        let out = four_f_system(&mat_propagation(d), f).unwrap().apply(ray);
        assert!(close(out.r, -ray.r, 1e-12));
        assert!(close(out.theta, (d - 2.0 * f) / (f * f) * ray.r - ray.theta, 1e-12));
    }

    #[test]
    fn unchanged_channel_gives_zero_change() {
        let ch = trajectory_change(&mat_propagation(300.0), 120.0, 300.0, Ray::new(-7.0, 0.01)).unwrap();
        assert_eq!(ch, TrajectoryChange { delta_r: 0.0, delta_theta: 0.0 });
        assert!(trajectory_change(&mat_propagation(1.0), 0.0, 1.0, Ray::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn trajectory_change_matches_explicit_products() {
        let (f, d) = (80.0, 260.0);
        let (a, c) = (1.3, -0.0021);
        let b = 55.0;
        let dd = (1.0 + b * c) / a;
        let ch = AbcdMatrix::new(a, b, c, dd);
        let ray = Ray::new(4.0, -0.02);
        let lens = [[1.0, 0.0], [-1.0 / f, 1.0]];
        let prop = [[1.0, f], [0.0, 1.0]];
        let sys = |m: [[f64; 2]; 2]| mul2(mul2(mul2(mul2(prop, lens), m), lens), prop);
        let p = sys([[a, b], [c, dd]]);
        let r = sys([[1.0, d], [0.0, 1.0]]);
        let want_r = (p[0][0] - r[0][0]) * ray.r + (p[0][1] - r[0][1]) * ray.theta;
        let want_t = (p[1][0] - r[1][0]) * ray.r + (p[1][1] - r[1][1]) * ray.theta;
        let got = trajectory_change(&ch, f, d, ray).unwrap();
        assert!(close(got.delta_r, want_r, 1e-12));
        assert!(close(got.delta_theta, want_t, 1e-12));
        // Closed form of the angle change as derived from the products.
        let closed_t = ((b - d - (a + dd - 2.0) * f + c * f * f) * ray.r
            - ((a - 1.0) * f * f - c * f * f * f) * ray.theta)
            / (f * f);
        assert!(close(got.delta_theta, closed_t, 1e-12));
    }

    #[test]
    fn overlap_examples() {
        let n = 7;
        let p = overlap_uncertainty_product(&OverlapConfig::minimum_uncertainty(40.0, 1.0, n)).unwrap();
        assert!(close(p, 2.0 / n as f64, 1e-12));
        let p = overlap_uncertainty_product(&OverlapConfig::minimum_uncertainty(40.0, 2.0, n)).unwrap();
        assert!(close(p, 2.5 / n as f64, 1e-12));
        let unit = OverlapConfig { sigma_x1: 1.0, sigma_x2: 1.0, sigma_k1: 0.5, sigma_k2: 0.5, n: 1 };
        assert!(close(overlap_uncertainty_product(&unit).unwrap(), 2.0, 1e-15));
        let bad = OverlapConfig { sigma_k1: 0.4, ..unit };
        assert!(overlap_uncertainty_product(&bad).is_err());
        assert!(overlap_uncertainty_product(&OverlapConfig { n: 0, ..unit }).is_err());
    }

    #[test]
    fn min_uncertainty_form_is_monotone_in_log_alpha() {
        let mut prev = overlap_product_min_uncertainty(1.0, 1);
        for i in 1..50 {
            let alpha = 1.1f64.powi(i);
            let up = overlap_product_min_uncertainty(alpha, 1);
            let down = overlap_product_min_uncertainty(1.0 / alpha, 1);
            assert!(up > prev);
            assert!(close(up, down, 1e-12));
            prev = up;
        }
    }
}
