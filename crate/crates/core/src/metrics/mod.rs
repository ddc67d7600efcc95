//! Full-reference quality metrics for hyperspectral cubes.

mod report;

use thiserror::Error;

use crate::hsi::HsiCube;

pub use report::{CubeMetrics, MetricsReport, ReportMetadata, PSNR_CAP_DB};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: reference {reference:?}, test {test:?}")]
    Dimension { reference: (usize, usize, usize), test: (usize, usize, usize) },
    #[error("metric undefined: {0}")]
    Undefined(String),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

fn check_shapes(reference: &HsiCube, test: &HsiCube) -> Result<()> {
    if !reference.same_shape(test) {
        return Err(MetricsError::Dimension { reference: reference.dims(), test: test.dims() });
    }
    Ok(())
}

/// Band-averaged PSNR in dB with unit peak. A band with zero error yields `+∞`.
pub fn psnr(reference: &HsiCube, test: &HsiCube) -> Result<f64> {
    check_shapes(reference, test)?;
    let n = (reference.height() * reference.width()) as f64;
    let total: f64 = (0..reference.bands())
        .map(|b| {
            let mse = reference
                .band(b)
                .iter()
                .zip(test.band(b))
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>()
                / n;
            if mse == 0.0 {
                f64::INFINITY
            } else {
                -10.0 * mse.log10()
            }
        })
        .sum();
    Ok(total / reference.bands() as f64)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Window side used for an `h`×`w` band: 11, or the largest odd size that fits.
pub fn ssim_window_size(h: usize, w: usize) -> usize {
    let m = SSIM_WINDOW.min(h).min(w);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// Separable "valid" correlation of an `h`×`w` plane with `taps`×`taps`.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(j, t)| t * plane[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_band(x: &[f32], y: &[f32], h: usize, w: usize, taps: &[f64]) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_x = filter_valid(&xf, h, w, taps);
    let mu_y = filter_valid(&yf, h, w, taps);
    let e_xx = filter_valid(&prod(&xf, &xf), h, w, taps);
    let e_yy = filter_valid(&prod(&yf, &yf), h, w, taps);
    let e_xy = filter_valid(&prod(&xf, &yf), h, w, taps);
    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    total / n as f64
}

/// Band-averaged SSIM over the valid region of an 11×11 Gaussian window (σ = 1.5),
/// dynamic range 1.
pub fn ssim(reference: &HsiCube, test: &HsiCube) -> Result<f64> {
    check_shapes(reference, test)?;
    let (h, w, b) = reference.dims();
    let taps = gaussian_taps(ssim_window_size(h, w), SSIM_SIGMA);
    let total: f64 = (0..b).map(|band| ssim_band(reference.band(band), test.band(band), h, w, &taps)).sum();
    Ok(total / b as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamStats {
    /// Mean spectral angle in degrees over the pixels that were scored.
    pub degrees: f64,
    pub scored: usize,
    /// Pixels where either spectrum is all zeros.
    pub skipped: usize,
}

/// Angle between two non-zero vectors, in radians.
///
/// Uses `2·atan2(‖x̂ − ŷ‖, ‖x̂ + ŷ‖)` on the normalized vectors, which equals
/// `arccos(⟨x,y⟩ / ‖x‖‖y‖)` but stays accurate near 0 and π.
pub fn spectral_angle(x: &[f64], y: &[f64]) -> f64 {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (u, v) = (a / nx, b / ny);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

pub fn sam_stats(reference: &HsiCube, test: &HsiCube) -> Result<SamStats> {
    check_shapes(reference, test)?;
    let (h, w, b) = reference.dims();
    let (mut x, mut y) = (vec![0.0; b], vec![0.0; b]);
    let (mut total, mut scored, mut skipped) = (0.0, 0, 0);
    for p in 0..h * w {
        for band in 0..b {
            x[band] = reference.band(band)[p] as f64;
            y[band] = test.band(band)[p] as f64;
        }
        if x.iter().all(|&v| v == 0.0) || y.iter().all(|&v| v == 0.0) {
            skipped += 1;
            continue;
        }
        total += spectral_angle(&x, &y);
        scored += 1;
    }
    if scored == 0 {
        return Err(MetricsError::Undefined(format!("all {skipped} pixels have a zero spectrum")));
    }
    Ok(SamStats { degrees: (total / scored as f64).to_degrees(), scored, skipped })
}

/// Mean spectral angle in degrees.
pub fn sam(reference: &HsiCube, test: &HsiCube) -> Result<f64> {
    sam_stats(reference, test).map(|s| s.degrees)
}
