//! Real-valued map utilities shared by the diffuser and correlator modules.
//!
//! Maps are row-major `n × n` slices. Smoothing and correlation go through the
//! centered FFT; zero padding is applied wherever wrap-around would bias the
//! result.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{fft2_inplace, Direction};

fn to_complex(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Circular Gaussian blur with standard deviation `sigma_px`.
pub fn gaussian_smooth(values: &[f64], n: usize, sigma_px: f64) -> Vec<f64> {
    if sigma_px <= 0.0 {
        return values.to_vec();
    }
    let mut buf = to_complex(values);
    fft2_inplace(&mut buf, n, Direction::Forward);
    let half = (n / 2) as f64;
    let k = 2.0 * (std::f64::consts::PI * sigma_px / n as f64).powi(2);
    for iy in 0..n {
        let fy = iy as f64 - half;
        for ix in 0..n {
            let fx = ix as f64 - half;
            buf[iy * n + ix] *= (-k * (fx * fx + fy * fy)).exp();
        }
    }
    fft2_inplace(&mut buf, n, Direction::Inverse);
    buf.into_iter().map(|c| c.re).collect()
}

/// Gaussian blur with zero (non-periodic) boundaries.
pub fn gaussian_smooth_open(values: &[f64], n: usize, sigma_px: f64) -> Vec<f64> {
    let m = 2 * n;
    let mut padded = vec![0.0; m * m];
    let off = n / 2;
    for y in 0..n {
        padded[(y + off) * m + off..(y + off) * m + off + n].copy_from_slice(&values[y * n..(y + 1) * n]);
    }
    let s = gaussian_smooth(&padded, m, sigma_px);
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        out[y * n..(y + 1) * n].copy_from_slice(&s[(y + off) * m + off..(y + off) * m + off + n]);
    }
    out
}

/// Linear (zero-padded) autocorrelation. The result is `2n × 2n` with zero lag
/// at index `(n, n)`.
pub fn autocorrelation(values: &[f64], n: usize) -> Vec<f64> {
    let m = 2 * n;
    let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
    for y in 0..n {
        for x in 0..n {
            buf[y * m + x] = Complex64::new(values[y * n + x], 0.0);
        }
    }
    fft2_inplace(&mut buf, m, Direction::Forward);
    for v in &mut buf {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    fft2_inplace(&mut buf, m, Direction::Inverse);
    // centered transforms put zero lag at m/2 = n
    let scale = m as f64;
    buf.into_iter().map(|c| c.re * scale).collect()
}

/// Half-maximum width of a 1-D profile around `center`, in samples, found by
/// linear interpolation on both sides. `None` when either side never crosses.
pub fn profile_fwhm(profile: &[f64], center: usize) -> Option<f64> {
    let peak = profile[center];
    if !(peak > 0.0) {
        return None;
    }
    let half = 0.5 * peak;
    let right = (center + 1..profile.len()).find(|&i| profile[i] < half).map(|i| {
        let (a, b) = (profile[i - 1], profile[i]);
        (i - 1) as f64 + (a - half) / (a - b)
    })?;
    let left = (0..center).rev().find(|&i| profile[i] < half).map(|i| {
        let (a, b) = (profile[i + 1], profile[i]);
        (i + 1) as f64 - (a - half) / (a - b)
    })?;
    Some(right - left)
}

pub fn row(values: &[f64], n: usize, y: usize) -> Vec<f64> {
    values[y * n..(y + 1) * n].to_vec()
}

pub fn column(values: &[f64], n: usize, x: usize) -> Vec<f64> {
    (0..n).map(|y| values[y * n + x]).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// Block sum by an integer factor.
pub fn bin(values: &[f64], n: usize, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || n % factor != 0 {
        return Err(Error::Parameter(format!("binning factor {factor} does not divide {n}")));
    }
    let m = n / factor;
    let mut out = vec![0.0; m * m];
    for y in 0..n {
        for x in 0..n {
            out[(y / factor) * m + x / factor] += values[y * n + x];
        }
    }
    Ok(out)
}

/// Gaussian-smoothed envelope without zero-padding bias: normalized
/// convolution divides by the smoothed unit image, so edges are not pulled
/// towards zero.
pub fn envelope(values: &[f64], n: usize, sigma_px: f64) -> Vec<f64> {
    let raw = gaussian_smooth_open(values, n, sigma_px);
    let weight = gaussian_smooth_open(&vec![1.0; n * n], n, sigma_px);
    raw.iter().zip(&weight).map(|(v, w)| v / w.max(1e-12)).collect()
}

/// Envelope-corrected map: values divided by their heavily smoothed version,
/// minus one, inside the support where the envelope exceeds `floor` of its
/// maximum. Outside the support the result is zero. Returns the corrected
/// map and the support mask.
pub fn envelope_corrected(values: &[f64], n: usize, sigma_px: f64, floor: f64) -> (Vec<f64>, Vec<bool>) {
    let env = envelope(values, n, sigma_px);
    let emax = env.iter().cloned().fold(f64::MIN, f64::max);
    let mut support = vec![false; n * n];
    let mut out = vec![0.0; n * n];
    if !(emax > 0.0) {
        return (out, support);
    }
    for i in 0..n * n {
        if env[i] > floor * emax {
            support[i] = true;
            out[i] = values[i] / env[i] - 1.0;
        }
    }
    (out, support)
}

/// Mean half-maximum width (in pixels) of the normalized autocorrelation
/// central peak along x and y.
pub fn autocorrelation_fwhm_px(values: &[f64], n: usize) -> Option<f64> {
    let ac = autocorrelation(values, n);
    let m = 2 * n;
    let c = n;
    let x = profile_fwhm(&row(&ac, m, c), c)?;
    let y = profile_fwhm(&column(&ac, m, c), c)?;
    Some(0.5 * (x + y))
}
