//! The two detection geometries as linear field propagators.
//!
//! Configuration A relays the crystal onto the diffuser with an ideal 4-f
//! system (absorbed: unit magnification) and detects in the back focal plane
//! of a Fourier lens, so one arm is `F(field · t)`.
//!
//! Configuration B puts the diffuser in the Fourier plane of the crystal and
//! images the crystal onto the cameras through a second 2-f stage. Each arm
//! sees its own region of the screen, so an arm is a 4-f imager with a random
//! pupil `t_branch`: `F⁻¹(F(field) · t_branch)`. Camera coordinates are
//! pre-inverted so that a clear pupil gives the identity map.

use num_complex::Complex64;

use crate::diffuser::PhaseScreen;
use crate::error::{check_len, param, Error, Result};
use crate::grid::{fft2_inplace, Direction, Field2D, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Signal,
    Idler,
}

fn check_collection(c: f64) -> Result<()> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        param(format!("collection {c} outside [0, 1]"))
    }
}

fn same_sampling(a: &Grid, b: &Grid) -> bool {
    a.n() == b.n() && (a.pitch_um() / b.pitch_um() - 1.0).abs() < 1e-9
}

#[derive(Clone, Debug)]
pub struct ConfigA {
    pub f_relay_mm: f64,
    pub f_fourier_mm: f64,
    pub screen: PhaseScreen,
    /// Amplitude transmission shared by both arms.
    pub collection: f64,
}

impl ConfigA {
    pub fn new(screen: PhaseScreen, f_relay_mm: f64, f_fourier_mm: f64, collection: f64) -> Result<Self> {
        if !(f_relay_mm > 0.0 && f_fourier_mm > 0.0) {
            return param("focal lengths must be positive");
        }
        check_collection(collection)?;
        Ok(Self {
            f_relay_mm,
            f_fourier_mm,
            screen,
            collection,
        })
    }

    /// The reference geometry: 75 mm relay, 150 mm Fourier lenses.
    pub fn reference(screen: PhaseScreen) -> Self {
        Self::new(screen, 75.0, 150.0, 1.0).expect("reference focal lengths are valid")
    }

    /// Camera-plane grid: pitch `λ f ν₀` where `ν₀` is the conjugate pitch.
    pub fn camera_grid(&self, crystal: &Grid) -> Result<Grid> {
        crystal.with_pitch(crystal.fourier_plane_pitch_um(self.f_fourier_mm))
    }
}

pub fn propagate_config_a(field: &Field2D, cfg: &ConfigA) -> Result<Field2D> {
    if !same_sampling(&field.grid, &cfg.screen.grid) {
        return Err(Error::Shape {
            expected: cfg.screen.grid.len(),
            got: field.values.len(),
        });
    }
    let mut values = field.values.clone();
    if !cfg.screen.is_flat() {
        for (v, p) in values.iter_mut().zip(&cfg.screen.phase) {
            *v *= Complex64::from_polar(1.0, *p);
        }
    }
    fft2_inplace(&mut values, field.n(), Direction::Forward);
    if cfg.collection != 1.0 {
        for v in &mut values {
            *v *= cfg.collection;
        }
    }
    Ok(Field2D {
        grid: cfg.camera_grid(&field.grid)?,
        values,
    })
}

#[derive(Clone, Debug)]
pub struct ConfigB {
    pub f_mm: f64,
    /// Crystal (and camera) plane sampling.
    pub grid: Grid,
    pupil_signal: Option<Vec<Complex64>>,
    pupil_idler: Option<Vec<Complex64>>,
    pub collection: f64,
}

impl ConfigB {
    /// Grid of the Fourier plane where the diffuser sits.
    pub fn diffuser_grid(grid: &Grid, f_mm: f64) -> Result<Grid> {
        grid.with_pitch(grid.fourier_plane_pitch_um(f_mm))
    }

    /// Pupils from two screen regions sampled on [`ConfigB::diffuser_grid`].
    pub fn from_screens(grid: Grid, f_mm: f64, signal: &PhaseScreen, idler: &PhaseScreen, collection: f64) -> Result<Self> {
        if !(f_mm > 0.0) {
            return param("focal length must be positive");
        }
        let dg = Self::diffuser_grid(&grid, f_mm)?;
        for s in [signal, idler] {
            if !same_sampling(&dg, &s.grid) {
                return param(format!(
                    "screen pitch {} um does not match the Fourier-plane pitch {} um",
                    s.grid.pitch_um(),
                    dg.pitch_um()
                ));
            }
        }
        Self::with_pupils(grid, f_mm, Some(signal.transmission()), Some(idler.transmission()), collection)
    }

    /// Arbitrary complex pupils (apertures times phase). `None` leaves the
    /// branch undefined.
    pub fn with_pupils(
        grid: Grid,
        f_mm: f64,
        signal: Option<Vec<Complex64>>,
        idler: Option<Vec<Complex64>>,
        collection: f64,
    ) -> Result<Self> {
        check_collection(collection)?;
        for p in signal.iter().chain(idler.iter()) {
            check_len(grid.len(), p.len())?;
        }
        Ok(Self {
            f_mm,
            grid,
            pupil_signal: signal,
            pupil_idler: idler,
            collection,
        })
    }

    /// Clear pupils on both arms: ideal imaging.
    pub fn clear(grid: Grid, f_mm: f64) -> Self {
        let one = vec![Complex64::new(1.0, 0.0); grid.len()];
        Self::with_pupils(grid, f_mm, Some(one.clone()), Some(one), 1.0).expect("valid clear pupils")
    }

    pub fn pupil(&self, branch: Branch) -> Result<&[Complex64]> {
        match branch {
            Branch::Signal => self.pupil_signal.as_deref(),
            Branch::Idler => self.pupil_idler.as_deref(),
        }
        .ok_or_else(|| Error::Parameter(format!("{branch:?} aperture not defined")))
    }

    /// Swaps the signal and idler pupils.
    pub fn swapped(&self) -> Self {
        Self {
            pupil_signal: self.pupil_idler.clone(),
            pupil_idler: self.pupil_signal.clone(),
            ..self.clone()
        }
    }

    /// Point-spread function of a branch: `F⁻¹(pupil)`, centered at index n/2.
    pub fn psf(&self, branch: Branch) -> Result<Vec<Complex64>> {
        let mut p = self.pupil(branch)?.to_vec();
        fft2_inplace(&mut p, self.grid.n(), Direction::Inverse);
        let s = self.collection / self.grid.n() as f64;
        for v in &mut p {
            *v *= s;
        }
        Ok(p)
    }
}

pub fn propagate_config_b(field: &Field2D, branch: Branch, cfg: &ConfigB) -> Result<Field2D> {
    if !same_sampling(&field.grid, &cfg.grid) {
        return Err(Error::Shape {
            expected: cfg.grid.len(),
            got: field.values.len(),
        });
    }
    let pupil = cfg.pupil(branch)?;
    let n = field.n();
    let mut values = field.values.clone();
    fft2_inplace(&mut values, n, Direction::Forward);
    for (v, p) in values.iter_mut().zip(pupil) {
        *v *= p * cfg.collection;
    }
    fft2_inplace(&mut values, n, Direction::Inverse);
    Ok(Field2D {
        grid: field.grid,
        values,
    })
}

#[derive(Clone, Debug)]
pub enum OpticalSystem {
    A(ConfigA),
    B(ConfigB),
}

impl OpticalSystem {
    pub fn propagate(&self, field: &Field2D, branch: Branch) -> Result<Field2D> {
        match self {
            OpticalSystem::A(cfg) => propagate_config_a(field, cfg),
            OpticalSystem::B(cfg) => propagate_config_b(field, branch, cfg),
        }
    }

    pub fn collection(&self) -> f64 {
        match self {
            OpticalSystem::A(c) => c.collection,
            OpticalSystem::B(c) => c.collection,
        }
    }
}

/// Camera-plane response to a unit point source at crystal sample `(ix, iy)`.
pub fn impulse_response(system: &OpticalSystem, crystal: Grid, ix: usize, iy: usize, branch: Branch) -> Result<Field2D> {
    let n = crystal.n();
    if ix >= n || iy >= n {
        return param(format!("source ({ix}, {iy}) outside the {n}x{n} grid"));
    }
    let mut delta = Field2D::zeros(crystal);
    delta.values[iy * n + ix] = Complex64::new(1.0, 0.0);
    system.propagate(&delta, branch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffuser::{synthesize_screen, synthesize_screen_pair};
    use crate::rng::{complex_normal, substream, Stream};
    use std::f64::consts::PI;

    fn grid(n: usize, pitch: f64) -> Grid {
        Grid::new(n, pitch, 710.0).unwrap()
    }

    fn noise(g: Grid, seed: u64) -> Field2D {
        let mut rng = substream(seed, Stream::Vacuum, 0);
        Field2D::from_values(g, (0..g.len()).map(|_| complex_normal(&mut rng, 1.0)).collect()).unwrap()
    }

    #[test]
    fn config_a_camera_pitch() {
        let g = grid(512, 10.0);
        let cfg = ConfigA::reference(PhaseScreen::flat(g));
        let cam = cfg.camera_grid(&g).unwrap();
        // λ f / (n pitch) = 0.71 * 150000 / 5120
        assert!((cam.pitch_um() - 0.71 * 150_000.0 / 5120.0).abs() < 1e-9);
        assert!(ConfigA::new(PhaseScreen::flat(g), 75.0, 150.0, 1.2).is_err());
        assert!(ConfigA::new(PhaseScreen::flat(g), 0.0, 150.0, 1.0).is_err());
    }

    #[test]
    fn config_a_impulse_matches_closed_form() {
        let g = grid(256, 10.0);
        let screen = synthesize_screen(g, 4.0 * PI, 125.0, 3).unwrap();
        let t = screen.transmission();
        let sys = OpticalSystem::A(ConfigA::reference(screen));
        let (ix, iy) = (140usize, 101usize);
        let h = impulse_response(&sys, g, ix, iy, Branch::Signal).unwrap();
        let (x0, y0) = (g.coord(ix), g.coord(iy));
        let mut worst = 0.0f64;
        for ky in 0..256 {
            for kx in 0..256 {
                let arg = -2.0 * PI * (g.freq(kx) * x0 + g.freq(ky) * y0);
                let want = t[iy * 256 + ix] * Complex64::from_polar(1.0 / 256.0, arg);
                worst = worst.max((h.values[ky * 256 + kx] - want).norm() / want.norm());
            }
        }
        assert!(worst < 1e-8, "{worst}");
        // flat camera intensity
        let i = h.intensity();
        assert!(i.iter().all(|v| (v * 65536.0 - 1.0).abs() < 1e-9));
    }

    #[test]
    fn config_a_flat_screen_center_delta_is_flat_phase() {
        let g = grid(64, 10.0);
        let sys = OpticalSystem::A(ConfigA::reference(PhaseScreen::flat(g)));
        let h = impulse_response(&sys, g, 32, 32, Branch::Idler).unwrap();
        assert!(h.values.iter().all(|v| (v - Complex64::new(1.0 / 64.0, 0.0)).norm() < 1e-14));
    }

    #[test]
    fn config_a_lossless_and_linear() {
        let g = grid(128, 10.0);
        let cfg = ConfigA::reference(synthesize_screen(g, 4.0 * PI, 125.0, 1).unwrap());
        let (x, y) = (noise(g, 1), noise(g, 2));
        let px = propagate_config_a(&x, &cfg).unwrap();
        assert!((px.power() - x.power()).abs() / x.power() < 1e-10);
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5));
        let mix = Field2D::from_values(g, x.values.iter().zip(&y.values).map(|(u, v)| a * u + b * v).collect()).unwrap();
        let lhs = propagate_config_a(&mix, &cfg).unwrap();
        let py = propagate_config_a(&y, &cfg).unwrap();
        let err = lhs
            .values
            .iter()
            .zip(px.values.iter().zip(&py.values))
            .map(|(l, (u, v))| (l - (a * u + b * v)).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-10 * lhs.max_abs());
    }

    #[test]
    fn config_a_rejects_mismatched_grid() {
        let cfg = ConfigA::reference(PhaseScreen::flat(grid(64, 10.0)));
        assert!(propagate_config_a(&Field2D::zeros(grid(32, 10.0)), &cfg).is_err());
        assert!(propagate_config_a(&Field2D::zeros(grid(64, 5.0)), &cfg).is_err());
    }

    #[test]
    fn config_b_clear_pupil_is_identity() {
        let g = grid(64, 10.0);
        let cfg = ConfigB::clear(g, 150.0);
        let x = noise(g, 4);
        let y = propagate_config_b(&x, Branch::Signal, &cfg).unwrap();
        let err = x.values.iter().zip(&y.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn config_b_missing_branch() {
        let g = grid(16, 10.0);
        let cfg = ConfigB::with_pupils(g, 150.0, Some(vec![Complex64::new(1.0, 0.0); 256]), None, 1.0).unwrap();
        assert!(propagate_config_b(&Field2D::zeros(g), Branch::Idler, &cfg).is_err());
        assert!(propagate_config_b(&Field2D::zeros(g), Branch::Signal, &cfg).is_ok());
    }

    #[test]
    fn config_b_impulse_is_shifted_pupil_transform() {
        let n = 32;
        let g = grid(n, 10.0);
        let dg = ConfigB::diffuser_grid(&g, 150.0).unwrap();
        let (s, i) = synthesize_screen_pair(dg, 2.0, 3.0 * dg.pitch_um(), 5).unwrap();
        let cfg = ConfigB::from_screens(g, 150.0, &s, &i, 1.0).unwrap();
        let pupil = s.transmission();
        let (ix, iy) = (20usize, 9usize);
        let h = impulse_response(&OpticalSystem::B(cfg), g, ix, iy, Branch::Signal).unwrap();
        // direct transform of the pupil evaluated at the displacement x - r0
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (g.coord(x) - g.coord(ix), g.coord(y) - g.coord(iy));
                let mut s = Complex64::new(0.0, 0.0);
                for ky in 0..n {
                    for kx in 0..n {
                        let arg = 2.0 * PI * (g.freq(kx) * dx + g.freq(ky) * dy);
                        s += pupil[ky * n + kx] * Complex64::from_polar(1.0, arg);
                    }
                }
                let want = s / (n * n) as f64;
                assert!((h.values[y * n + x] - want).norm() < 1e-8 * want.norm().max(1e-3));
            }
        }
    }

    #[test]
    fn config_b_screen_pitch_is_checked() {
        let g = grid(64, 10.0);
        let wrong = grid(64, 10.0);
        let s = synthesize_screen(wrong, 1.0, 40.0, 1).unwrap();
        assert!(ConfigB::from_screens(g, 150.0, &s, &s, 1.0).is_err());
    }

    /// A hard circular pupil of diameter D (Fourier-plane µm) images a point
    /// with an Airy core of FWHM ≈ 1.029 λ f / D.
    #[test]
    fn hard_aperture_psf_width() {
        let n = 256;
        let g = grid(n, 5.0);
        let dg = ConfigB::diffuser_grid(&g, 150.0).unwrap();
        let d_um = 40.0 * dg.pitch_um();
        let pupil: Vec<Complex64> = (0..n * n)
            .map(|k| {
                let (x, y) = (dg.coord(k % n), dg.coord(k / n));
                Complex64::new(if (x * x + y * y).sqrt() <= d_um / 2.0 { 1.0 } else { 0.0 }, 0.0)
            })
            .collect();
        let cfg = ConfigB::with_pupils(g, 150.0, Some(pupil), None, 1.0).unwrap();
        let h = impulse_response(&OpticalSystem::B(cfg), g, n / 2, n / 2, Branch::Signal).unwrap();
        let prof: Vec<f64> = (0..n).map(|x| h.values[(n / 2) * n + x].norm_sqr()).collect();
        let fwhm = crate::image::profile_fwhm(&prof, n / 2).unwrap() * g.pitch_um();
        let want = 1.029 * 0.71 * 150_000.0 / d_um;
        assert!((fwhm / want - 1.0).abs() < 0.1, "{fwhm} vs {want}");
    }

    #[test]
    fn config_b_lossless_with_phase_pupils() {
        let g = grid(64, 10.0);
        let dg = ConfigB::diffuser_grid(&g, 150.0).unwrap();
        let (s, i) = synthesize_screen_pair(dg, 4.0 * PI, 4.0 * dg.pitch_um(), 2).unwrap();
        let cfg = ConfigB::from_screens(g, 150.0, &s, &i, 1.0).unwrap();
        let x = noise(g, 8);
        for b in [Branch::Signal, Branch::Idler] {
            let y = propagate_config_b(&x, b, &cfg).unwrap();
            assert!((y.power() - x.power()).abs() / x.power() < 1e-10);
        }
    }
}
