//! Thin random phase screens and their coherent far-field speckle.
//!
//! A screen is a zero-mean Gaussian random phase map with Gaussian
//! autocorrelation `exp(-r²/L²)`, where `L` is the waviness (correlation
//! length). It is synthesized by filtering white noise in the Fourier domain
//! and rescaling the result to the requested rms phase.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, param, Error, Result};
use crate::grid::{fft2_inplace, fft2_unitary, Direction, Field2D, Grid};
use crate::image::{autocorrelation_fwhm_px, envelope_corrected};
use crate::rng::{substream, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseScreen {
    pub grid: Grid,
    /// Phase in radians, row-major.
    pub phase: Vec<f64>,
    pub rms_phase: f64,
    pub corr_length_um: f64,
    pub seed: u64,
}

impl PhaseScreen {
    pub fn flat(grid: Grid) -> Self {
        Self {
            grid,
            phase: vec![0.0; grid.len()],
            rms_phase: 0.0,
            corr_length_um: f64::INFINITY,
            seed: 0,
        }
    }

    pub fn from_phase(grid: Grid, phase: Vec<f64>) -> Result<Self> {
        check_len(grid.len(), phase.len())?;
        let rms = sample_rms(&phase);
        Ok(Self {
            grid,
            phase,
            rms_phase: rms,
            corr_length_um: f64::NAN,
            seed: 0,
        })
    }

    pub fn is_flat(&self) -> bool {
        self.phase.iter().all(|&p| p == 0.0)
    }

    /// Rms of the phase about its mean.
    pub fn measured_rms(&self) -> f64 {
        sample_rms(&self.phase)
    }

    /// `t = e^{iΦ}`.
    pub fn transmission(&self) -> Vec<Complex64> {
        self.phase.iter().map(|&p| Complex64::from_polar(1.0, p)).collect()
    }

    /// `t² = e^{2iΦ}`: both photons of a pair crossing the same point.
    pub fn transmission_squared(&self) -> Vec<Complex64> {
        self.phase.iter().map(|&p| Complex64::from_polar(1.0, 2.0 * p)).collect()
    }

    /// Distance (µm) at which the normalized phase autocorrelation along x and
    /// y first drops to 1/e, averaged over both axes.
    pub fn measured_corr_length_um(&self) -> Option<f64> {
        let n = self.grid.n();
        let mean = self.phase.iter().sum::<f64>() / self.phase.len() as f64;
        let centered: Vec<f64> = self.phase.iter().map(|p| p - mean).collect();
        let var: f64 = centered.iter().map(|p| p * p).sum::<f64>() / centered.len() as f64;
        if var == 0.0 {
            return None;
        }
        let target = (-1.0f64).exp();
        let mut widths = Vec::new();
        for (dx, dy) in [(1usize, 0usize), (0, 1)] {
            let mut prev = 1.0;
            let mut found = None;
            for lag in 1..n / 2 {
                let mut s = 0.0;
                for y in 0..n {
                    for x in 0..n {
                        let (x2, y2) = ((x + lag * dx) % n, (y + lag * dy) % n);
                        s += centered[y * n + x] * centered[y2 * n + x2];
                    }
                }
                let c = s / (n * n) as f64 / var;
                if c < target {
                    found = Some((lag - 1) as f64 + (prev - target) / (prev - c));
                    break;
                }
                prev = c;
            }
            widths.push(found? * self.grid.pitch_um());
        }
        Some(0.5 * (widths[0] + widths[1]))
    }
}

fn sample_rms(phase: &[f64]) -> f64 {
    let n = phase.len() as f64;
    let mean = phase.iter().sum::<f64>() / n;
    (phase.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Gaussian random phase field with Gaussian autocorrelation of 1/e width
/// `corr_length_um`, scaled to exactly `rms_phase` radians.
pub fn synthesize_screen(grid: Grid, rms_phase: f64, corr_length_um: f64, seed: u64) -> Result<PhaseScreen> {
    if !(rms_phase >= 0.0 && rms_phase.is_finite()) {
        return param(format!("rms phase {rms_phase} must be non-negative"));
    }
    if !(corr_length_um >= 2.0 * grid.pitch_um()) {
        return param(format!(
            "correlation length {corr_length_um} um under-resolved by {} um pitch",
            grid.pitch_um()
        ));
    }
    let n = grid.n();
    let mut screen = PhaseScreen {
        grid,
        phase: vec![0.0; n * n],
        rms_phase,
        corr_length_um,
        seed,
    };
    if rms_phase == 0.0 {
        return Ok(screen);
    }
    let mut rng = substream(seed, Stream::Screen, 0);
    let mut buf: Vec<Complex64> = (0..n * n)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    fft2_inplace(&mut buf, n, Direction::Forward);
    // autocorrelation exp(-r²/L²)  <=>  power spectrum exp(-π² L² ν²)
    let k = 0.5 * (std::f64::consts::PI * corr_length_um).powi(2);
    for iy in 0..n {
        let fy = grid.freq(iy);
        for ix in 0..n {
            let fx = grid.freq(ix);
            buf[iy * n + ix] *= (-k * (fx * fx + fy * fy)).exp();
        }
    }
    fft2_inplace(&mut buf, n, Direction::Inverse);
    let raw: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let rms = sample_rms(&raw);
    if rms == 0.0 {
        return Err(Error::Estimation("degenerate screen realization".into()));
    }
    screen.phase = raw.iter().map(|v| (v - mean) * rms_phase / rms).collect();
    Ok(screen)
}

/// Two disjoint regions of one screen, side by side along x: the signal and
/// idler spots of a walk-off separated pair of beams.
pub fn synthesize_screen_pair(
    grid: Grid,
    rms_phase: f64,
    corr_length_um: f64,
    seed: u64,
) -> Result<(PhaseScreen, PhaseScreen)> {
    let big = synthesize_screen(Grid::new(2 * grid.n(), grid.pitch_um(), grid.wavelength_nm())?, rms_phase, corr_length_um, seed)?;
    split_screen(&big)
}

/// Left and right `n × n` regions from the middle rows of a `2n × 2n` screen.
pub fn split_screen(big: &PhaseScreen) -> Result<(PhaseScreen, PhaseScreen)> {
    let m = big.grid.n();
    if m % 2 != 0 {
        return param("screen edge must be even to split");
    }
    let n = m / 2;
    let grid = Grid::new(n, big.grid.pitch_um(), big.grid.wavelength_nm())?;
    let cut = |x0: usize| {
        let mut phase = Vec::with_capacity(n * n);
        for y in n / 2..n / 2 + n {
            phase.extend_from_slice(&big.phase[y * m + x0..y * m + x0 + n]);
        }
        PhaseScreen {
            grid,
            phase,
            rms_phase: big.rms_phase,
            corr_length_um: big.corr_length_um,
            seed: big.seed,
        }
    };
    Ok((cut(0), cut(n)))
}

/// `|F(beam · t)|²`: coherent far-field speckle of a beam through the screen.
pub fn laser_speckle_farfield(screen: &PhaseScreen, beam: &Field2D) -> Result<Vec<f64>> {
    check_len(screen.grid.len(), beam.values.len())?;
    let t = screen.transmission();
    let lit = crate::grid::apply_mask(beam, &t)?;
    Ok(fft2_unitary(&lit).intensity())
}

/// Settings of the autocorrelation-width grain estimator.
#[derive(Clone, Copy, Debug)]
pub struct GrainEstimator {
    /// Gaussian sigma (pixels) of the envelope estimate.
    pub envelope_sigma_px: f64,
    /// Support threshold relative to the envelope maximum.
    pub support_floor: f64,
    pub min_grains: f64,
}

impl Default for GrainEstimator {
    fn default() -> Self {
        Self {
            envelope_sigma_px: 8.0,
            support_floor: 0.1,
            min_grains: 100.0,
        }
    }
}

impl GrainEstimator {
    /// Grain FWHM in pixels of a speckle map.
    pub fn fwhm_px(&self, map: &[f64], n: usize) -> Result<f64> {
        check_len(n * n, map.len())?;
        // an envelope narrower than a few grains absorbs part of the speckle
        // and narrows the autocorrelation, so widen it until it is not
        let mut sigma = self.envelope_sigma_px;
        let mut fwhm = self.measure(map, n, sigma)?;
        for _ in 0..4 {
            let wanted = (4.0 * fwhm).min(n as f64 / 8.0);
            if sigma >= wanted {
                break;
            }
            sigma = wanted;
            fwhm = self.measure(map, n, sigma)?;
        }
        Ok(fwhm)
    }

    fn measure(&self, map: &[f64], n: usize, sigma: f64) -> Result<f64> {
        let (corrected, support) = envelope_corrected(map, n, sigma, self.support_floor);
        // speckle with unit contrast has participation area ≈ support / 2
        let (s1, s2) = map
            .iter()
            .zip(&support)
            .filter(|(_, &s)| s)
            .fold((0.0, 0.0), |(a, b), (v, _)| (a + v, b + v * v));
        let area = if s2 > 0.0 { 2.0 * s1 * s1 / s2 } else { 0.0 };
        let fwhm = autocorrelation_fwhm_px(&corrected, n)
            .filter(|w| w.is_finite() && *w > 0.0 && *w < n as f64 / 4.0)
            .ok_or_else(|| Error::Estimation("autocorrelation peak indistinct".into()))?;
        let grains = area / (fwhm * fwhm);
        if grains < self.min_grains {
            return Err(Error::Estimation(format!(
                "only {grains:.0} grains in the speckle support (need {})",
                self.min_grains
            )));
        }
        Ok(fwhm)
    }
}

/// Grain FWHM of a far-field speckle map in mm⁻¹, given the conjugate pitch of
/// the map in µm⁻¹ per pixel.
pub fn estimate_grain_fwhm(intensity: &[f64], n: usize, conj_pitch_per_um: f64) -> Result<f64> {
    let px = GrainEstimator::default().fwhm_px(intensity, n)?;
    Ok(px * conj_pitch_per_um * 1000.0)
}

/// Waviness scale (µm) read off a far-field grain FWHM (mm⁻¹).
pub fn waviness_from_grain(fwhm_per_mm: f64) -> f64 {
    1000.0 / fwhm_per_mm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, pitch: f64) -> Grid {
        Grid::new(n, pitch, 710.0).unwrap()
    }

    #[test]
    fn zero_rms_is_flat() {
        let s = synthesize_screen(grid(64, 5.0), 0.0, 20.0, 1).unwrap();
        assert!(s.is_flat());
        assert!(s.transmission().iter().all(|t| *t == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn transmission_of_constant_phase() {
        let g = grid(8, 1.0);
        let s = PhaseScreen::from_phase(g, vec![std::f64::consts::PI; 64]).unwrap();
        assert!(s.transmission().iter().all(|t| (t + 1.0).norm() < 1e-15));
    }

    #[test]
    fn rejects_underresolved_correlation() {
        assert!(synthesize_screen(grid(64, 10.0), 1.0, 19.0, 1).is_err());
        assert!(synthesize_screen(grid(64, 10.0), -1.0, 50.0, 1).is_err());
        assert!(synthesize_screen(grid(64, 10.0), 1.0, 20.0, 1).is_ok());
    }

    #[test]
    fn statistics_of_reference_screen() {
        let rms = 4.0 * std::f64::consts::PI;
        let s = synthesize_screen(grid(1024, 5.0), rms, 125.0, 7).unwrap();
        let r = s.measured_rms();
        assert!(r > 0.95 * rms && r < 1.05 * rms, "{r}");
        let t = s.transmission();
        assert!(t.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max) < 1e-12);
        let l = s.measured_corr_length_um().unwrap();
        assert!((l / 125.0 - 1.0).abs() < 0.15, "corr {l}");
    }

    #[test]
    fn screens_are_reproducible() {
        let a = synthesize_screen(grid(128, 5.0), 3.0, 40.0, 11).unwrap();
        let b = synthesize_screen(grid(128, 5.0), 3.0, 40.0, 11).unwrap();
        let c = synthesize_screen(grid(128, 5.0), 3.0, 40.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.phase, c.phase);
    }

    #[test]
    fn screen_pair_regions_are_disjoint_slices() {
        let g = grid(64, 5.0);
        let (s, i) = synthesize_screen_pair(g, 2.0, 30.0, 3).unwrap();
        assert_eq!(s.phase.len(), 64 * 64);
        assert_ne!(s.phase, i.phase);
        // contiguous: last column of signal borders first column of idler
        let big = synthesize_screen(grid(128, 5.0), 2.0, 30.0, 3).unwrap();
        assert_eq!(s.phase[0], big.phase[32 * 128]);
        assert_eq!(i.phase[0], big.phase[32 * 128 + 64]);
    }

    #[test]
    fn flat_screen_gives_single_spot() {
        let g = grid(128, 10.0);
        let beam = Field2D::gaussian(g, 400.0);
        let ff = laser_speckle_farfield(&PhaseScreen::flat(g), &beam).unwrap();
        let total: f64 = ff.iter().sum();
        assert!((total - beam.power()).abs() / total < 1e-12);
        let peak = crate::image::argmax(&ff);
        assert_eq!(peak, 64 * 128 + 64);
        // energy within a few conjugate pixels of the center
        let near: f64 = (60..69).flat_map(|y| (60..69).map(move |x| y * 128 + x)).map(|i| ff[i]).sum();
        assert!(near / total > 0.99);
    }

    #[test]
    fn waviness_conversion() {
        assert!((waviness_from_grain(8.0) - 125.0).abs() < 1e-12);
        assert!((waviness_from_grain(8.4) - 119.0476).abs() < 1e-3);
    }

    #[test]
    fn grain_estimator_rejects_single_spot() {
        let g = grid(128, 10.0);
        let beam = Field2D::gaussian(g, 400.0);
        let ff = laser_speckle_farfield(&PhaseScreen::flat(g), &beam).unwrap();
        assert!(estimate_grain_fwhm(&ff, 128, g.freq_pitch()).is_err());
    }
}
