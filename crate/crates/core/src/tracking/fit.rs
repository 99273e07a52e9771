//! Gaussian-plus-baseline fit to binned counts (Levenberg–Marquardt with
//! Poisson weights).

use nalgebra::{Matrix4, Vector4};

use crate::{Error, Result};

const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Histogram {
    pub centers: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Histogram {
    /// Bins of width `bin_width` centred on its integer multiples, covering
    /// the samples. Quantised data whose values sit on those multiples land
    /// one value per bin.
    pub fn from_samples(samples: &[f64], bin_width: f64) -> Result<Self> {
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::invalid(format!("bin width must be positive, got {bin_width}")));
        }
        if samples.is_empty() {
            return Ok(Histogram { centers: vec![], counts: vec![] });
        }
        let index = |x: f64| (x / bin_width).round() as i64;
        let lo = samples.iter().map(|&x| index(x)).min().expect("non-empty");
        let hi = samples.iter().map(|&x| index(x)).max().expect("non-empty");
        let mut counts = vec![0.0; (hi - lo + 1) as usize];
        for &x in samples {
            counts[(index(x) - lo) as usize] += 1.0;
        }
        let centers = (lo..=hi).map(|i| i as f64 * bin_width).collect();
        Ok(Histogram { centers, counts })
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    /// RMS width `s` of `A·exp(-(x-μ)²/(2s²))`.
    pub width: f64,
    pub baseline: f64,
    pub center_err: f64,
    pub width_err: f64,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

fn model(p: &Vector4<f64>, x: f64) -> (f64, Vector4<f64>) {
    let (a, mu, s, b) = (p[0], p[1], p[2], p[3]);
    let u = (x - mu) / s;
    let g = (-0.5 * u * u).exp();
    (a * g + b, Vector4::new(g, a * g * u / s, a * g * u * u / s, 1.0))
}

fn chi2(h: &Histogram, w: &[f64], p: &Vector4<f64>) -> f64 {
    h.centers.iter().zip(&h.counts).zip(w).map(|((&x, &y), &wi)| wi * (y - model(p, x).0).powi(2)).sum()
}

/// Fits `A·exp(-(x-μ)²/(2s²)) + b` to a histogram. Needs at least five
/// non-empty bins.
pub fn fit_gaussian_width(h: &Histogram) -> Result<GaussianFit> {
    let filled = h.counts.iter().filter(|&&c| c > 0.0).count();
    if filled < 5 {
        return Err(Error::Estimator(format!("gaussian fit needs at least 5 non-empty bins, got {filled}")));
    }
    let weights: Vec<f64> = h.counts.iter().map(|&c| 1.0 / c.max(1.0)).collect();
    let span = h.centers.last().expect("non-empty") - h.centers.first().expect("non-empty");

    let base = h.counts.iter().copied().fold(f64::INFINITY, f64::min);
    let peak = h.counts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let excess: Vec<f64> = h.counts.iter().map(|c| c - base).collect();
    let mass: f64 = excess.iter().sum();
    if peak - base <= 0.0 || mass <= 0.0 {
        return Err(Error::FitDegenerate("histogram has no peak above its floor".into()));
    }
    let mu0 = h.centers.iter().zip(&excess).map(|(x, e)| x * e).sum::<f64>() / mass;
    let var0 = h.centers.iter().zip(&excess).map(|(x, e)| (x - mu0).powi(2) * e).sum::<f64>() / mass;
    let bin = if h.centers.len() > 1 { h.centers[1] - h.centers[0] } else { 1.0 };
    let mut p = Vector4::new(peak - base, mu0, var0.sqrt().max(bin / 2.0), base);

    let mut lambda = 1e-3;
    let mut current = chi2(h, &weights, &p);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for ((&x, &y), &w) in h.centers.iter().zip(&h.counts).zip(&weights) {
            let (m, g) = model(&p, x);
            jtj += w * g * g.transpose();
            jtr += w * (y - m) * g;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for i in 0..4 {
                damped[(i, i)] *= 1.0 + lambda;
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let next = chi2(h, &weights, &trial);
            if next.is_finite() && next <= current {
                let rel = (current - next) / current.max(1e-300);
                let small_step = step.iter().zip(trial.iter()).all(|(d, v)| d.abs() <= 1e-10 * v.abs().max(1e-12));
                p = trial;
                current = next;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                converged = rel < 1e-12 || small_step;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: we are at the minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }
    let residual_norm = current.sqrt();
    if !converged {
        return Err(Error::FitNonConvergence { iterations, residual_norm });
    }
    let width = p[2].abs();
    if !(width.is_finite() && p[0].is_finite()) || width > span || p[0] <= 0.0 {
        return Err(Error::FitDegenerate(format!("fitted width {width} outside the histogram span {span}")));
    }
    let mut jtj = Matrix4::zeros();
    for (&x, &w) in h.centers.iter().zip(&weights) {
        let g = model(&p, x).1;
        jtj += w * g * g.transpose();
    }
    let dof = h.centers.len().saturating_sub(4).max(1);
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::FitDegenerate("singular fit covariance".into()))?
        * (current / dof as f64);
    Ok(GaussianFit {
        amplitude: p[0],
        center: p[1],
        width,
        baseline: p[3],
        center_err: cov[(1, 1)].max(0.0).sqrt(),
        width_err: cov[(2, 2)].max(0.0).sqrt(),
        chi2: current,
        dof,
        iterations,
    })
}
