//! Stochastic SPDC twin fields.
//!
//! Realizations are classical complex fields sampled in the symmetric-ordering
//! (Wigner) representation: each mode starts with vacuum noise of 1/2 photon,
//! and a thin crystal applies pointwise two-mode squeezing driven by the pump
//! amplitude. Ensemble moments of these fields equal the symmetrically ordered
//! quantum moments, so photon flux is `⟨|A|²⟩ - 1/2` and the pair amplitude is
//! `⟨A_s A_i⟩`.
//!
//! Phase matching is a Gaussian angular filter in the crystal far field. The
//! filter is applied as a mode-dependent beam splitter: the rejected part of
//! every mode is replaced by fresh vacuum, which keeps every mode at no less
//! than 1/2 photon.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{check_len, param, Error, Result};
use crate::grid::{fft2_inplace, Direction, Field2D, Grid};
use crate::rng::{complex_normal, substream, Stream};

pub const VACUUM: f64 = 0.5;
pub const PUMP_WAVELENGTH_NM: f64 = 355.0;
pub const SIGNAL_WAVELENGTH_NM: f64 = 710.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PumpProfile {
    /// Crystal-plane grid; its wavelength is the degenerate signal wavelength.
    pub grid: Grid,
    /// Real amplitude with unit peak.
    pub amplitude: Vec<f64>,
    pub wavelength_nm: f64,
    pub fwhm_mm: f64,
}

impl PumpProfile {
    /// Gaussian pump whose intensity has FWHM `fwhm_mm`.
    pub fn gaussian(grid: Grid, fwhm_mm: f64) -> Result<Self> {
        if !(fwhm_mm > 0.0) {
            return param(format!("pump FWHM {fwhm_mm} mm must be positive"));
        }
        let field = Field2D::gaussian(grid, fwhm_mm * 1000.0);
        Ok(Self {
            grid,
            amplitude: field.values.iter().map(|v| v.re).collect(),
            wavelength_nm: PUMP_WAVELENGTH_NM,
            fwhm_mm,
        })
    }

    /// Uniform unit pump, the plane-wave limit.
    pub fn flat(grid: Grid) -> Self {
        Self {
            grid,
            amplitude: vec![1.0; grid.len()],
            wavelength_nm: PUMP_WAVELENGTH_NM,
            fwhm_mm: f64::INFINITY,
        }
    }

    pub fn as_field(&self) -> Field2D {
        Field2D {
            grid: self.grid,
            values: self.amplitude.iter().map(|&a| Complex64::new(a, 0.0)).collect(),
        }
    }

    /// FWHM (mm) of `|E_p|²` along x through the center, measured on the grid.
    pub fn measured_fwhm_mm(&self) -> Option<f64> {
        let n = self.grid.n();
        let prof: Vec<f64> = (0..n).map(|x| self.amplitude[(n / 2) * n + x].powi(2)).collect();
        crate::image::profile_fwhm(&prof, n / 2).map(|w| w * self.grid.pitch_um() / 1000.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainSpec {
    /// Peak parametric gain `g`; the local squeezing parameter is `g |E_p|`.
    pub gain: f64,
    /// FWHM of the phase-matching angular acceptance (photon flux), mrad.
    pub pm_fwhm_mrad: f64,
    pub signal_wavelength_nm: f64,
}

impl GainSpec {
    pub fn new(gain: f64, pm_fwhm_mrad: f64) -> Result<Self> {
        let g = Self {
            gain,
            pm_fwhm_mrad,
            signal_wavelength_nm: SIGNAL_WAVELENGTH_NM,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return param(format!("gain {} must be non-negative", self.gain));
        }
        if !(self.pm_fwhm_mrad > 0.0) {
            return param(format!("phase-matching FWHM {} mrad must be positive", self.pm_fwhm_mrad));
        }
        Ok(())
    }

    /// Phase-matching FWHM converted to spatial frequency (µm⁻¹), `ν = θ/λ`.
    pub fn pm_fwhm_per_um(&self) -> f64 {
        self.pm_fwhm_mrad * 1e-3 / (self.signal_wavelength_nm * 1e-3)
    }
}

/// Amplitude transmission of the phase-matching filter at spatial frequency
/// `nu` (µm⁻¹). Its square has FWHM `pm_fwhm_per_um`.
pub fn phase_matching_amplitude(nu_x: f64, nu_y: f64, pm_fwhm_per_um: f64) -> f64 {
    let r2 = (nu_x * nu_x + nu_y * nu_y) / (pm_fwhm_per_um * pm_fwhm_per_um);
    (-2.0 * std::f64::consts::LN_2 * r2).exp()
}

/// Phase-matching amplitude filter sampled on the conjugate grid.
pub fn phase_matching_filter(grid: Grid, gain: &GainSpec) -> Vec<f64> {
    let n = grid.n();
    let w = gain.pm_fwhm_per_um();
    let mut h = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            h.push(phase_matching_amplitude(grid.freq(ix), grid.freq(iy), w));
        }
    }
    h
}

#[derive(Clone, Debug)]
pub struct TwinFields {
    pub signal: Field2D,
    pub idler: Field2D,
    pub seed: u64,
    pub index: u64,
    pub vacuum_baseline: f64,
}

/// Precomputed squeezing and phase-matching maps for repeated sampling.
#[derive(Clone, Debug)]
pub struct TwinSource {
    grid: Grid,
    cosh: Vec<f64>,
    sinh: Vec<f64>,
    pm: Vec<f64>,
    pm_leak: Vec<f64>,
}

impl TwinSource {
    pub fn new(pump: &PumpProfile, gain: &GainSpec) -> Result<Self> {
        gain.validate()?;
        check_len(pump.grid.len(), pump.amplitude.len())?;
        let grid = pump.grid;
        let cosh = pump.amplitude.iter().map(|a| (gain.gain * a.abs()).cosh()).collect();
        let sinh = pump.amplitude.iter().map(|a| (gain.gain * a.abs()).sinh()).collect();
        let pm = phase_matching_filter(grid, gain);
        let pm_leak = pm.iter().map(|h| (1.0 - h * h).max(0.0).sqrt()).collect();
        Ok(Self {
            grid,
            cosh,
            sinh,
            pm,
            pm_leak,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Squeezing coefficients `(cosh, sinh)` per crystal-plane sample.
    pub fn coefficients(&self) -> (&[f64], &[f64]) {
        (&self.cosh, &self.sinh)
    }

    /// Phase-matching amplitude filter on the conjugate grid.
    pub fn phase_matching(&self) -> &[f64] {
        &self.pm
    }

    /// Mean photon pairs per realization passing the phase-matching filter:
    /// `⟨|H|²⟩ · Σ sinh²`, the signal photon number of the filtered field.
    pub fn mean_pairs(&self) -> f64 {
        let pass = self.pm.iter().map(|h| h * h).sum::<f64>() / self.pm.len() as f64;
        pass * self.sinh.iter().map(|s| s * s).sum::<f64>()
    }

    /// Realization `index` of the stream seeded by `seed`.
    pub fn realize(&self, seed: u64, index: u64) -> TwinFields {
        let n = self.grid.n();
        let len = n * n;
        let mut rng = substream(seed, Stream::Vacuum, index);
        let mut a_s = Vec::with_capacity(len);
        let mut a_i = Vec::with_capacity(len);
        for k in 0..len {
            let vs = complex_normal(&mut rng, VACUUM);
            let vi = complex_normal(&mut rng, VACUUM);
            let (c, s) = (self.cosh[k], self.sinh[k]);
            a_s.push(vs * c + vi.conj() * s);
            a_i.push(vi * c + vs.conj() * s);
        }
        self.phase_match(&mut a_s, &mut rng);
        self.phase_match(&mut a_i, &mut rng);
        TwinFields {
            signal: Field2D {
                grid: self.grid,
                values: a_s,
            },
            idler: Field2D {
                grid: self.grid,
                values: a_i,
            },
            seed,
            index,
            vacuum_baseline: VACUUM,
        }
    }

    fn phase_match<R: Rng>(&self, field: &mut [Complex64], rng: &mut R) {
        let n = self.grid.n();
        fft2_inplace(field, n, Direction::Forward);
        for (k, v) in field.iter_mut().enumerate() {
            let leak = self.pm_leak[k];
            *v *= self.pm[k];
            if leak > 0.0 {
                *v += complex_normal(rng, VACUUM) * leak;
            }
        }
        fft2_inplace(field, n, Direction::Inverse);
    }
}

/// One realization of the twin fields for `seed`.
pub fn generate_twin_fields(pump: &PumpProfile, gain: &GainSpec, seed: u64) -> Result<TwinFields> {
    Ok(TwinSource::new(pump, gain)?.realize(seed, 0))
}

/// Accumulates `|A|²` per sample across realizations.
#[derive(Clone, Debug)]
pub struct FluxAccumulator {
    sum: Vec<f64>,
    count: usize,
}

impl FluxAccumulator {
    pub fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            count: 0,
        }
    }

    pub fn add(&mut self, field: &[Complex64]) {
        for (s, v) in self.sum.iter_mut().zip(field) {
            *s += v.norm_sqr();
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: Self) {
        for (s, o) in self.sum.iter_mut().zip(other.sum) {
            *s += o;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Raw ensemble mean `⟨|A|²⟩`, vacuum included.
    pub fn mean_intensity(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::Estimation("empty ensemble".into()));
        }
        Ok(self.sum.iter().map(|s| s / self.count as f64).collect())
    }

    /// `⟨|A|²⟩ - 1/2` per sample, clipped at zero.
    pub fn photon_flux(&self) -> Result<Vec<f64>> {
        Ok(self.mean_intensity()?.into_iter().map(|m| (m - VACUUM).max(0.0)).collect())
    }
}

/// Per-sample photon flux of the signal arm over an ensemble.
pub fn mean_photon_flux(fields: &[TwinFields]) -> Result<Vec<f64>> {
    let first = fields.first().ok_or_else(|| Error::Estimation("empty ensemble".into()))?;
    let mut acc = FluxAccumulator::new(first.signal.values.len());
    for f in fields {
        acc.add(&f.signal.values);
    }
    acc.photon_flux()
}
