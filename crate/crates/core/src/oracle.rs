//! Closed-form biphoton wavefunctions used as ground truth.
//!
//! Configuration A: in the thin-crystal, low-gain limit the two-photon
//! amplitude at the cameras depends only on the sum coordinate,
//! `ψ(s) = F(E_p · t²)(s / λf)`.
//!
//! Configuration B (1-D transverse model): each arm is a 4-f imager with the
//! diffuser in its pupil, so
//! `ψ(x₁, x₂) = Σ_ρ E_p(ρ) p_s(x₁ − ρ) p_i(x₂ − ρ)` with `p = F⁻¹(pupil)`.
//! The displacement convention matches [`crate::optics::propagate_config_b`]
//! (pre-inverted cameras, circular grid).

use num_complex::Complex64;
use rand::Rng;

use crate::diffuser::PhaseScreen;
use crate::error::{check_len, param, Error, Result};
use crate::exec::{map_indexed, Mode};
use crate::grid::{fft1, fft2_inplace, Direction, Grid};
use crate::rng::{substream, Stream};
use crate::spdc::PumpProfile;

/// Largest config-B table edge (the table holds n² doubles).
pub const MAX_TABLE_N: usize = 2048;

const NORM_TOL: f64 = 1e-9;

/// Probability map over the config-A sum coordinate `s = r₁ + r₂`.
#[derive(Clone, Debug)]
pub struct SumMap {
    /// Sampling of `s` in camera-plane µm.
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// Two-photon amplitude over the sum coordinate, normalized so `Σ|ψ|² = 1`.
pub fn psi_config_a(pump: &PumpProfile, screen: &PhaseScreen, f_mm: f64) -> Result<(Grid, Vec<Complex64>)> {
    if pump.grid.n() != screen.grid.n() || (pump.grid.pitch_um() / screen.grid.pitch_um() - 1.0).abs() > 1e-9 {
        return Err(Error::Shape {
            expected: screen.grid.len(),
            got: pump.amplitude.len(),
        });
    }
    if !(f_mm > 0.0) {
        return param("focal length must be positive");
    }
    let n = pump.grid.n();
    let mut psi: Vec<Complex64> = if screen.is_flat() {
        pump.amplitude.iter().map(|&a| Complex64::new(a, 0.0)).collect()
    } else {
        pump.amplitude
            .iter()
            .zip(&screen.phase)
            .map(|(&a, &p)| Complex64::from_polar(a, 2.0 * p))
            .collect()
    };
    fft2_inplace(&mut psi, n, Direction::Forward);
    let norm = psi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return param("pump has no power");
    }
    for v in &mut psi {
        *v /= norm;
    }
    let grid = pump.grid.with_pitch(pump.grid.fourier_plane_pitch_um(f_mm))?;
    Ok((grid, psi))
}

/// `|ψ(s)|²` normalized to unit sum.
pub fn g2_config_a(pump: &PumpProfile, screen: &PhaseScreen, f_mm: f64) -> Result<SumMap> {
    let (grid, psi) = psi_config_a(pump, screen, f_mm)?;
    let mut values: Vec<f64> = psi.iter().map(|v| v.norm_sqr()).collect();
    normalize(&mut values)?;
    Ok(SumMap { grid, values })
}

/// Joint detection probability over (x₁, x₂); row index is x₁ (signal).
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable1D {
    pub n: usize,
    pub pitch_um: f64,
    pub values: Vec<f64>,
}

impl JointTable1D {
    /// Normalizes `values` to unit sum.
    pub fn new(n: usize, pitch_um: f64, mut values: Vec<f64>) -> Result<Self> {
        check_len(n * n, values.len())?;
        if values.iter().any(|v| !(*v >= 0.0)) {
            return param("joint table entries must be non-negative");
        }
        normalize(&mut values)?;
        Ok(Self { n, pitch_um, values })
    }

    pub fn get(&self, i1: usize, i2: usize) -> f64 {
        self.values[i1 * self.n + i2]
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64) * self.pitch_um
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn transposed(&self) -> Self {
        let n = self.n;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[j * n + i] = self.values[i * n + j];
            }
        }
        Self { values, ..*self }
    }

    /// Marginals `(P(x₁), P(x₂))`.
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut m1 = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let v = self.values[i * n + j];
                m1[i] += v;
                m2[j] += v;
            }
        }
        (m1, m2)
    }

    /// Probability mass within `band` cells of the diagonal.
    pub fn diagonal_mass(&self, band: usize) -> f64 {
        let n = self.n;
        (0..n)
            .flat_map(|i| (i.saturating_sub(band)..(i + band + 1).min(n)).map(move |j| (i, j)))
            .map(|(i, j)| self.values[i * n + j])
            .sum()
    }

    /// Total-variation distance to another table of the same shape.
    pub fn total_variation(&self, other: &[f64]) -> Result<f64> {
        check_len(self.values.len(), other.len())?;
        Ok(0.5 * self.values.iter().zip(other).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }
}

/// One transverse axis of the config-B model.
#[derive(Clone, Debug)]
pub struct ConfigB1D<'a> {
    /// Crystal-plane sampling (equal to the camera sampling).
    pub grid: Grid,
    /// Pump amplitude along the axis.
    pub pump: &'a [f64],
    /// Screen phases along the axis, on the Fourier-plane grid.
    pub phase_signal: &'a [f64],
    pub phase_idler: &'a [f64],
    /// Optional phase-matching amplitude on the conjugate grid.
    pub phase_matching: Option<&'a [f64]>,
}

impl ConfigB1D<'_> {
    /// Point-spread functions `(p_s, p_i)`, centered at index n/2.
    pub fn psfs(&self) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let n = self.grid.n();
        for s in [self.pump, self.phase_signal, self.phase_idler] {
            check_len(n, s.len())?;
        }
        if let Some(h) = self.phase_matching {
            check_len(n, h.len())?;
        }
        let psf = |phase: &[f64]| {
            let pupil: Vec<Complex64> = phase
                .iter()
                .enumerate()
                .map(|(k, &p)| Complex64::from_polar(self.phase_matching.map_or(1.0, |h| h[k]), p))
                .collect();
            let scale = 1.0 / (n as f64).sqrt();
            fft1(&pupil, Direction::Inverse).into_iter().map(|v| v * scale).collect::<Vec<_>>()
        };
        Ok((psf(self.phase_signal), psf(self.phase_idler)))
    }
}

/// Direct quadrature of the config-B two-photon amplitude on the grid, then
/// `|ψ|²` normalized to unit sum.
pub fn g2_joint_table_config_b_1d(model: &ConfigB1D<'_>, f_mm: f64) -> Result<JointTable1D> {
    let n = model.grid.n();
    if n > MAX_TABLE_N {
        return param(format!("table edge {n} exceeds {MAX_TABLE_N}"));
    }
    if !(f_mm > 0.0) {
        return param("focal length must be positive");
    }
    let (ps, pi) = model.psfs()?;
    let half = n / 2;
    let wrap = |d: isize| ((d + half as isize).rem_euclid(n as isize)) as usize;
    let pump = model.pump;
    let rows = map_indexed(n, Mode::default(), |x1| {
        let mut row = vec![0.0; n];
        for (x2, out) in row.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (rho, &e) in pump.iter().enumerate() {
                if e != 0.0 {
                    let r = rho as isize;
                    acc += ps[wrap(x1 as isize - r)] * pi[wrap(x2 as isize - r)] * e;
                }
            }
            *out = acc.norm_sqr();
        }
        row
    });
    JointTable1D::new(n, model.grid.pitch_um(), rows.concat())
}

/// I.i.d. index pairs `(i₁, i₂)` drawn from the table by inverse CDF.
pub fn sample_pairs_from_joint(table: &JointTable1D, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let total = table.total();
    if (total - 1.0).abs() > NORM_TOL || table.values.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Estimation(format!("table is not normalized (sum {total})")));
    }
    let cdf = cumulative(&table.values);
    let mut rng = substream(seed, Stream::Oracle, 0);
    let n = table.n;
    Ok((0..count)
        .map(|_| {
            let k = search(&cdf, rng.random::<f64>());
            (k / n, k % n)
        })
        .collect())
}

/// Running sums with the last entry pinned to the total.
pub(crate) fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// First index whose cumulative weight exceeds `u · total`, skipping
/// zero-weight cells.
pub(crate) fn search(cdf: &[f64], u: f64) -> usize {
    let target = u * cdf.last().copied().unwrap_or(0.0);
    cdf.partition_point(|&c| c <= target).min(cdf.len() - 1)
}

fn normalize(values: &mut [f64]) -> Result<()> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Estimation("map has no mass".into()));
    }
    for v in values.iter_mut() {
        *v /= total;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffuser::synthesize_screen;
    use crate::image::{argmax, profile_fwhm, row};
    use std::f64::consts::PI;

    fn grid(n: usize, pitch: f64) -> Grid {
        Grid::new(n, pitch, 710.0).unwrap()
    }

    #[test]
    fn flat_screen_reduces_to_pump_spectrum() {
        let g = grid(256, 10.0);
        let pump = PumpProfile::gaussian(g, 1.6).unwrap();
        let map = g2_config_a(&pump, &PhaseScreen::flat(g), 150.0).unwrap();
        let mut spec: Vec<Complex64> = pump.amplitude.iter().map(|&a| Complex64::new(a, 0.0)).collect();
        fft2_inplace(&mut spec, 256, Direction::Forward);
        let total: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
        for (m, s) in map.values.iter().zip(&spec) {
            assert!((m - s.norm_sqr() / total).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_pump_sum_coordinate_width() {
        // 40 µm pitch keeps the s-plane pitch at ~5 µm
        let g = grid(512, 40.0);
        let pump = PumpProfile::gaussian(g, 1.6).unwrap();
        let map = g2_config_a(&pump, &PhaseScreen::flat(g), 150.0).unwrap();
        let c = argmax(&map.values);
        assert_eq!(c, 256 * 512 + 256);
        let prof = row(&map.values, 512, 256);
        let fwhm = profile_fwhm(&prof, 256).unwrap() * map.grid.pitch_um();
        let want = 2.0 * std::f64::consts::LN_2 / PI * 0.71 * 150_000.0 / 1600.0;
        assert!((want - 29.4).abs() < 0.1);
        assert!((fwhm / want - 1.0).abs() < 0.03, "{fwhm} vs {want}");
        assert!((map.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rough_screen_speckles_the_sum_coordinate() {
        let g = grid(256, 10.0);
        let pump = PumpProfile::gaussian(g, 1.6).unwrap();
        let screen = synthesize_screen(g, 4.0 * PI, 125.0, 4).unwrap();
        let map = g2_config_a(&pump, &screen, 150.0).unwrap();
        let peak = map.values.iter().cloned().fold(0.0, f64::max);
        // a flat screen concentrates a few % of the mass in the peak cell
        let flat = g2_config_a(&pump, &PhaseScreen::flat(g), 150.0).unwrap();
        let flat_peak = flat.values.iter().cloned().fold(0.0, f64::max);
        assert!(peak < flat_peak / 10.0);
        assert!((map.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psi_requires_shared_grid() {
        let pump = PumpProfile::gaussian(grid(64, 10.0), 0.3).unwrap();
        assert!(psi_config_a(&pump, &PhaseScreen::flat(grid(64, 5.0)), 150.0).is_err());
        assert!(psi_config_a(&pump, &PhaseScreen::flat(grid(32, 10.0)), 150.0).is_err());
    }

    fn model<'a>(g: Grid, pump: &'a [f64], s: &'a [f64], i: &'a [f64]) -> ConfigB1D<'a> {
        ConfigB1D {
            grid: g,
            pump,
            phase_signal: s,
            phase_idler: i,
            phase_matching: None,
        }
    }

    fn gaussian_pump(n: usize, w_px: f64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let x = (i as f64 - (n / 2) as f64) / w_px;
                (-x * x).exp()
            })
            .collect()
    }

    #[test]
    fn clear_pupils_put_mass_on_the_diagonal() {
        let n = 64;
        let pump = gaussian_pump(n, 8.0);
        let zero = vec![0.0; n];
        let t = g2_joint_table_config_b_1d(&model(grid(n, 10.0), &pump, &zero, &zero), 150.0).unwrap();
        assert!((t.diagonal_mass(0) - 1.0).abs() < 1e-12);
        let p2: f64 = pump.iter().map(|a| a * a).sum();
        for i in 0..n {
            assert!((t.get(i, i) - pump[i] * pump[i] / p2).abs() < 1e-12);
        }
    }

    #[test]
    fn point_pump_gives_separable_table() {
        let n = 32;
        let g = grid(n, 10.0);
        let mut pump = vec![0.0; n];
        pump[12] = 1.0;
        let s = synthesize_screen(g, 3.0, 40.0, 1).unwrap();
        let (ps, pi) = (&s.phase[5 * n..6 * n], &s.phase[20 * n..21 * n]);
        let m = model(g, &pump, ps, pi);
        let t = g2_joint_table_config_b_1d(&m, 150.0).unwrap();
        let (a, b) = m.psfs().unwrap();
        let wrap = |d: isize| ((d + 16).rem_euclid(32)) as usize;
        let ns: f64 = a.iter().map(|v| v.norm_sqr()).sum();
        let ni: f64 = b.iter().map(|v| v.norm_sqr()).sum();
        for x1 in 0..n {
            for x2 in 0..n {
                let want = a[wrap(x1 as isize - 12)].norm_sqr() * b[wrap(x2 as isize - 12)].norm_sqr() / (ns * ni);
                assert!((t.get(x1, x2) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swapping_screens_transposes_exactly() {
        let n = 64;
        let g = grid(n, 10.0);
        let pump = gaussian_pump(n, 10.0);
        let s = synthesize_screen(g, 4.0 * PI, 30.0, 9).unwrap();
        let (ps, pi) = (&s.phase[..n], &s.phase[32 * n..33 * n]);
        let a = g2_joint_table_config_b_1d(&model(g, &pump, ps, pi), 150.0).unwrap();
        let b = g2_joint_table_config_b_1d(&model(g, &pump, pi, ps), 150.0).unwrap();
        // equal up to the summation order of the normalization
        let at = a.transposed();
        assert!(at.values.iter().zip(&b.values).all(|(u, v)| (u - v).abs() <= 1e-12 * u.max(*v)));
    }

    /// With phase-only pupils the arms are unitary, so the signal marginal is
    /// the incoherent image `|E_p|² ⊛ |p_s|²`.
    #[test]
    fn marginals_are_incoherent_images() {
        let n = 128;
        let g = grid(n, 10.0);
        let pump = gaussian_pump(n, 12.0);
        let s = synthesize_screen(g, 4.0 * PI, 40.0, 2).unwrap();
        let (ps, pi) = (&s.phase[..n], &s.phase[64 * n..65 * n]);
        let m = model(g, &pump, ps, pi);
        let t = g2_joint_table_config_b_1d(&m, 150.0).unwrap();
        let (m1, m2) = t.marginals();
        let (a, b) = m.psfs().unwrap();
        for (marg, psf) in [(m1, a), (m2, b)] {
            let mut want = vec![0.0; n];
            for (x, w) in want.iter_mut().enumerate() {
                for (rho, e) in pump.iter().enumerate() {
                    let d = ((x as isize - rho as isize + 64).rem_euclid(128)) as usize;
                    *w += e * e * psf[d].norm_sqr();
                }
            }
            let tot: f64 = want.iter().sum();
            for (u, v) in marg.iter().zip(&want) {
                assert!((u - v / tot).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn table_guards() {
        assert!(JointTable1D::new(2, 1.0, vec![0.0; 4]).is_err());
        assert!(JointTable1D::new(2, 1.0, vec![1.0, -1.0, 1.0, 1.0]).is_err());
        let big = grid(4096, 1.0);
        let p = vec![1.0; 4096];
        assert!(g2_joint_table_config_b_1d(&model(big, &p, &p, &p), 150.0).is_err());
        let mut t = JointTable1D::new(2, 1.0, vec![1.0; 4]).unwrap();
        t.values[0] = 2.0;
        assert!(sample_pairs_from_joint(&t, 10, 1).is_err());
    }

    #[test]
    fn delta_table_samples_one_cell() {
        let mut v = vec![0.0; 16];
        v[9] = 3.0;
        let t = JointTable1D::new(4, 1.0, v).unwrap();
        let s = sample_pairs_from_joint(&t, 1000, 5).unwrap();
        assert!(s.iter().all(|&p| p == (2, 1)));
    }
}
