//! Sampled transverse fields and centered unitary Fourier transforms.
//!
//! All grids are square with `n` a power of two. Index `i` sits at the
//! physical coordinate `(i - n/2) * pitch`, so both the origin of direct space
//! and the zero spatial frequency live at index `n/2`. Transforms carry the
//! `1/sqrt(n)` per-axis normalization, which makes them unitary: photon
//! numbers survive any number of propagation steps.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, param, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    n: usize,
    pitch_um: f64,
    wavelength_nm: f64,
}

impl Grid {
    pub fn new(n: usize, pitch_um: f64, wavelength_nm: f64) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return param(format!("grid size {n} must be a power of two >= 2"));
        }
        if !(pitch_um > 0.0 && pitch_um.is_finite()) {
            return param(format!("grid pitch {pitch_um} um must be positive"));
        }
        if !(wavelength_nm > 0.0 && wavelength_nm.is_finite()) {
            return param(format!("wavelength {wavelength_nm} nm must be positive"));
        }
        Ok(Self {
            n,
            pitch_um,
            wavelength_nm,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pitch_um(&self) -> f64 {
        self.pitch_um
    }

    pub fn wavelength_nm(&self) -> f64 {
        self.wavelength_nm
    }

    /// Same sampling, different wavelength.
    pub fn with_wavelength(&self, wavelength_nm: f64) -> Result<Self> {
        Self::new(self.n, self.pitch_um, wavelength_nm)
    }

    /// Same sample count, different pitch.
    pub fn with_pitch(&self, pitch_um: f64) -> Result<Self> {
        Self::new(self.n, pitch_um, self.wavelength_nm)
    }

    /// Direct-space coordinate of index `i`, in µm.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64) * self.pitch_um
    }

    /// Pitch of the conjugate (spatial-frequency) grid, in µm⁻¹.
    pub fn freq_pitch(&self) -> f64 {
        1.0 / (self.n as f64 * self.pitch_um)
    }

    /// Spatial frequency of index `i`, in µm⁻¹.
    pub fn freq(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64) * self.freq_pitch()
    }

    pub fn field_of_view_um(&self) -> f64 {
        self.n as f64 * self.pitch_um
    }

    /// Pitch in a plane reached through a 2-f system of focal `f_mm`.
    pub fn fourier_plane_pitch_um(&self, f_mm: f64) -> f64 {
        freq_to_position(self.freq_pitch(), self.wavelength_nm, f_mm)
    }
}

/// `x = λ f ν`: transverse position (µm) in the back focal plane of a lens of
/// focal `f_mm` corresponding to spatial frequency `nu` (µm⁻¹).
pub fn freq_to_position(nu_per_um: f64, wavelength_nm: f64, f_mm: f64) -> f64 {
    // (λ nm / 1000) µm * (f mm * 1000) µm * ν µm⁻¹
    wavelength_nm * f_mm * nu_per_um
}

pub fn position_to_freq(x_um: f64, wavelength_nm: f64, f_mm: f64) -> f64 {
    x_um / (wavelength_nm * f_mm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field2D {
    pub grid: Grid,
    pub values: Vec<Complex64>,
}

impl Field2D {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        check_len(grid.len(), values.len())?;
        Ok(Self { grid, values })
    }

    /// Builds a field from a function of the physical coordinates (µm).
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> Complex64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(n * n);
        for iy in 0..n {
            let y = grid.coord(iy);
            for ix in 0..n {
                values.push(f(grid.coord(ix), y));
            }
        }
        Self { grid, values }
    }

    /// Real Gaussian amplitude of unit peak whose intensity has the given FWHM.
    pub fn gaussian(grid: Grid, intensity_fwhm_um: f64) -> Self {
        let a = 2.0 * std::f64::consts::LN_2 / (intensity_fwhm_um * intensity_fwhm_um);
        Self::from_fn(grid, |x, y| Complex64::new((-a * (x * x + y * y)).exp(), 0.0))
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn power(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

pub fn fft2_unitary(field: &Field2D) -> Field2D {
    let mut out = field.clone();
    fft2_inplace(&mut out.values, field.n(), Direction::Forward);
    out
}

pub fn ifft2_unitary(field: &Field2D) -> Field2D {
    let mut out = field.clone();
    fft2_inplace(&mut out.values, field.n(), Direction::Inverse);
    out
}

/// Pointwise product with a complex mask of the same shape.
pub fn apply_mask(field: &Field2D, mask: &[Complex64]) -> Result<Field2D> {
    check_len(field.values.len(), mask.len())?;
    let values = field
        .values
        .iter()
        .zip(mask)
        .map(|(a, m)| a * m)
        .collect();
    Ok(Field2D {
        grid: field.grid,
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Inverse,
}

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, dir: Direction) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        let fwd = dir == Direction::Forward;
        cache
            .entry((n, fwd))
            .or_insert_with(|| {
                if fwd {
                    planner.plan_fft_forward(n)
                } else {
                    planner.plan_fft_inverse(n)
                }
            })
            .clone()
    })
}

/// Per-axis sign pattern `(-1)^i` shifts the zero of both domains to `n/2`;
/// the leftover constant phase is `(∓i)^n` per axis.
fn centering_phase(n: usize, dir: Direction) -> Complex64 {
    let base = match dir {
        Direction::Forward => Complex64::new(0.0, -1.0),
        Direction::Inverse => Complex64::new(0.0, 1.0),
    };
    base.powu((n % 4) as u32)
}

/// Centered unitary 1-D transform of every contiguous length-`n` chunk.
pub fn fft1_inplace(data: &mut [Complex64], n: usize, dir: Direction) {
    debug_assert_eq!(data.len() % n, 0);
    let fft = plan(n, dir);
    let norm = centering_phase(n, dir) / (n as f64).sqrt();
    for row in data.chunks_exact_mut(n) {
        for (i, v) in row.iter_mut().enumerate() {
            if i % 2 == 1 {
                *v = -*v;
            }
        }
    }
    fft.process(data);
    for row in data.chunks_exact_mut(n) {
        for (i, v) in row.iter_mut().enumerate() {
            *v *= if i % 2 == 1 { -norm } else { norm };
        }
    }
}

/// Centered unitary 2-D transform of a row-major `n × n` array.
pub fn fft2_inplace(data: &mut [Complex64], n: usize, dir: Direction) {
    debug_assert_eq!(data.len(), n * n);
    fft1_inplace(data, n, dir);
    transpose(data, n);
    fft1_inplace(data, n, dir);
    transpose(data, n);
}

pub fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// Centered 1-D transform returning a new vector.
pub fn fft1(data: &[Complex64], dir: Direction) -> Vec<Complex64> {
    let mut out = data.to_vec();
    fft1_inplace(&mut out, data.len(), dir);
    out
}
