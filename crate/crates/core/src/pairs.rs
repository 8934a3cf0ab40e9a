//! Photon-pair emission sampling.
//!
//! At low gain the down-converted light is a Poisson stream of pairs whose
//! joint position density at the cameras is `|ψ(x₁, x₂)|²`. Frames are built
//! by drawing a Poisson number of pairs, thinning each photon independently
//! with the detection probability, and placing the survivors: both photons
//! from the joint density, or a lone photon from its marginal.
//!
//! Configuration A uses `|ψ(ν₁, ν₂)|² ∝ |H(ν₁)H(ν₂)|² |Ψ(ν₁+ν₂)|²` with
//! `Ψ = F(c · t²)`, where `c` is the pair amplitude at the crystal and `H` the
//! phase-matching amplitude; the phase-matching filter is moved past the
//! screen, which holds while `H` is much wider than the screen spectrum.
//!
//! Configuration B is exact on the grid:
//! `ψ(x₁, x₂) = Σ_ρ c(ρ) p_s(x₁ − ρ) p_i(x₂ − ρ)`, `p = F⁻¹(H · pupil)`.
//! The idler marginal is `Σ_Δ K_s(Δ) [(c·c*₊Δ) ⊛ (p_i·p_i*₋Δ)]` with `K_s` the
//! autocorrelation of `p_s`, and the signal conditional is one convolution.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::diffuser::PhaseScreen;
use crate::error::{check_len, param, Error, Result};
use crate::exec::{map_indexed, Mode};
use crate::grid::{fft1_inplace, fft2_inplace, Direction};
use crate::optics::{Branch, ConfigB};
use crate::oracle::{cumulative, search, ConfigB1D};
use crate::rng::{substream, Stream};
use crate::spdc::TwinSource;

/// Largest number of displacements kept in the marginal stencil.
pub const MAX_STENCIL: usize = 4096;
/// Two-dimensional stencils drop displacements where `|K| < STENCIL_FLOOR · K(0)`.
/// `K` rings slowly when the grid truncates the phase-matching filter, so an
/// exact stencil would cover the whole plane; the dropped tail oscillates and
/// moves the marginal by a total variation of order 1e-6. One-dimensional
/// models keep every displacement and are exact.
const STENCIL_FLOOR: f64 = 1e-4;

/// A joint position density that can be sampled photon by photon. Positions
/// are flat indices on the model's camera-plane grid.
pub trait PairModel: Sync {
    /// Samples per axis.
    fn n(&self) -> usize;
    /// 1 or 2.
    fn dims(&self) -> usize;
    fn sample_pair(&self, rng: &mut ChaCha8Rng) -> (usize, usize);
    fn sample_signal(&self, rng: &mut ChaCha8Rng) -> usize;
    fn sample_idler(&self, rng: &mut ChaCha8Rng) -> usize;

    fn len(&self) -> usize {
        self.n().pow(self.dims() as u32)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EmissionSpec {
    /// Mean emitted pairs per frame.
    pub mean_pairs: f64,
    /// Probability that a signal photon is detected.
    pub keep_signal: f64,
    pub keep_idler: f64,
}

impl EmissionSpec {
    pub fn new(mean_pairs: f64, keep_signal: f64, keep_idler: f64) -> Result<Self> {
        if !(mean_pairs >= 0.0 && mean_pairs.is_finite()) {
            return param(format!("mean pairs {mean_pairs} must be finite and non-negative"));
        }
        for k in [keep_signal, keep_idler] {
            if !(0.0..=1.0).contains(&k) {
                return param(format!("detection probability {k} outside [0, 1]"));
            }
        }
        Ok(Self {
            mean_pairs,
            keep_signal,
            keep_idler,
        })
    }
}

/// Detected photon positions of one frame.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrameHits {
    pub signal: Vec<u32>,
    pub idler: Vec<u32>,
    pub emitted: usize,
    /// Pairs with both photons detected.
    pub coincident: usize,
}

/// Frame `frame` of the emission stream seeded by `seed`.
pub fn emit_frame(model: &dyn PairModel, spec: &EmissionSpec, seed: u64, frame: u64) -> FrameHits {
    let mut rng = substream(seed, Stream::Pairs, frame);
    let emitted = if spec.mean_pairs > 0.0 {
        Poisson::new(spec.mean_pairs).map(|p| p.sample(&mut rng) as usize).unwrap_or(0)
    } else {
        0
    };
    let mut hits = FrameHits {
        emitted,
        ..FrameHits::default()
    };
    for _ in 0..emitted {
        let s = rng.random::<f64>() < spec.keep_signal;
        let i = rng.random::<f64>() < spec.keep_idler;
        match (s, i) {
            (true, true) => {
                let (a, b) = model.sample_pair(&mut rng);
                hits.signal.push(a as u32);
                hits.idler.push(b as u32);
                hits.coincident += 1;
            }
            (true, false) => hits.signal.push(model.sample_signal(&mut rng) as u32),
            (false, true) => hits.idler.push(model.sample_idler(&mut rng) as u32),
            (false, false) => {}
        }
    }
    hits
}

pub fn emit_frames(model: &dyn PairModel, spec: &EmissionSpec, seed: u64, count: usize, mode: Mode) -> Vec<FrameHits> {
    map_indexed(count, mode, |f| emit_frame(model, spec, seed, f as u64))
}

/// Configuration-A far-field pair density.
#[derive(Clone, Debug)]
pub struct FarFieldPairs {
    n: usize,
    sum_cdf: Vec<f64>,
    /// Row `s` holds the CDF of `k₁` given sum index `s` along one axis.
    cond_cdf: Vec<f64>,
}

impl FarFieldPairs {
    /// `pair_amplitude` is `c` on the crystal grid, `h` the phase-matching
    /// amplitude along one conjugate axis.
    pub fn new(pair_amplitude: &[f64], h: &[f64], screen: &PhaseScreen) -> Result<Self> {
        let n = h.len();
        check_len(n * n, pair_amplitude.len())?;
        check_len(n * n, screen.phase.len())?;
        let mut psi: Vec<Complex64> = if screen.is_flat() {
            pair_amplitude.iter().map(|&c| Complex64::new(c, 0.0)).collect()
        } else {
            pair_amplitude
                .iter()
                .zip(&screen.phase)
                .map(|(&c, &p)| Complex64::from_polar(c, 2.0 * p))
                .collect()
        };
        fft2_inplace(&mut psi, n, Direction::Forward);
        let h2: Vec<f64> = h.iter().map(|v| v * v).collect();
        let half = n / 2;
        let mut cond_cdf = Vec::with_capacity(n * n);
        let mut w = vec![0.0; n];
        for (s, ws) in w.iter_mut().enumerate() {
            let row: Vec<f64> = (0..n).map(|k| h2[k] * h2[(s + n + half - k) % n]).collect();
            let c = cumulative(&row);
            *ws = *c.last().unwrap();
            cond_cdf.extend(c);
        }
        let weights: Vec<f64> = (0..n * n).map(|k| psi[k].norm_sqr() * w[k % n] * w[k / n]).collect();
        let sum_cdf = cumulative(&weights);
        if !(*sum_cdf.last().unwrap() > 0.0) {
            return Err(Error::Estimation("pair density has no mass".into()));
        }
        Ok(Self { n, sum_cdf, cond_cdf })
    }

    /// Pair density of a twin source seen through `screen`.
    pub fn from_source(source: &TwinSource, screen: &PhaseScreen) -> Result<Self> {
        let n = source.grid().n();
        let (cosh, sinh) = source.coefficients();
        let c: Vec<f64> = cosh.iter().zip(sinh).map(|(a, b)| a * b).collect();
        let h = &source.phase_matching()[(n / 2) * n..(n / 2 + 1) * n];
        Self::new(&c, h, screen)
    }

    fn split(&self, s: usize, rng: &mut ChaCha8Rng) -> usize {
        search(&self.cond_cdf[s * self.n..(s + 1) * self.n], rng.random())
    }
}

impl PairModel for FarFieldPairs {
    fn n(&self) -> usize {
        self.n
    }

    fn dims(&self) -> usize {
        2
    }

    fn sample_pair(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let n = self.n;
        let s = search(&self.sum_cdf, rng.random());
        let (sx, sy) = (s % n, s / n);
        let (x1, y1) = (self.split(sx, rng), self.split(sy, rng));
        let partner = |s: usize, k: usize| (s + n + n / 2 - k) % n;
        (y1 * n + x1, partner(sy, y1) * n + partner(sx, x1))
    }

    fn sample_signal(&self, rng: &mut ChaCha8Rng) -> usize {
        self.sample_pair(rng).0
    }

    fn sample_idler(&self, rng: &mut ChaCha8Rng) -> usize {
        self.sample_pair(rng).1
    }
}

/// Regular grid of 1 or 2 axes with centered unitary transforms.
#[derive(Clone, Copy, Debug)]
struct Lattice {
    n: usize,
    dims: usize,
}

impl Lattice {
    fn len(&self) -> usize {
        self.n.pow(self.dims as u32)
    }

    fn fft(&self, data: &mut [Complex64], dir: Direction) {
        if self.dims == 1 {
            fft1_inplace(data, self.n, dir);
        } else {
            fft2_inplace(data, self.n, dir);
        }
    }

    fn split(&self, i: usize) -> (usize, usize) {
        (i % self.n, i / self.n)
    }

    fn join(&self, x: usize, y: usize) -> usize {
        y * self.n + x
    }

    /// Plain circular displacement `i + d`.
    fn shift(&self, i: usize, d: (isize, isize)) -> usize {
        let n = self.n as isize;
        let (x, y) = self.split(i);
        let sx = (x as isize + d.0).rem_euclid(n) as usize;
        if self.dims == 1 {
            return sx;
        }
        self.join(sx, (y as isize + d.1).rem_euclid(n) as usize)
    }

    /// Centered circular difference `a ⊖ b`.
    fn sub(&self, a: usize, b: usize) -> usize {
        let (n, h) = (self.n, self.n / 2);
        let (ax, ay) = self.split(a);
        let (bx, by) = self.split(b);
        let x = (ax + n + h - bx) % n;
        if self.dims == 1 {
            return x;
        }
        self.join(x, (ay + n + h - by) % n)
    }

    /// Centered circular convolution `(a ⊛ b)(x) = Σ_ρ a(ρ) b(x ⊖ ρ)`.
    fn convolve_spectra(&self, fa: &[Complex64], fb: &[Complex64]) -> Vec<Complex64> {
        let scale = (self.len() as f64).sqrt();
        let mut out: Vec<Complex64> = fa.iter().zip(fb).map(|(a, b)| a * b * scale).collect();
        self.fft(&mut out, Direction::Inverse);
        out
    }

    fn displacements(&self, radius: (usize, usize)) -> Vec<(isize, isize)> {
        // a radius of n/2 reaches the same displacement from both sides
        let n = self.n as isize;
        let (rx, ry) = (radius.0 as isize, radius.1 as isize);
        let ry = if self.dims == 1 { 0 } else { ry };
        (-ry..=ry.min(n - 1 - ry))
            .flat_map(|dy| (-rx..=rx.min(n - 1 - rx)).map(move |dx| (dx, dy)))
            .collect()
    }
}

/// Configuration-B near-field pair density, in one or two transverse axes.
#[derive(Clone, Debug)]
pub struct NearFieldPairs {
    lattice: Lattice,
    amplitude: Vec<Complex64>,
    psf_idler: Vec<Complex64>,
    spectrum_signal: Vec<Complex64>,
    signal_cdf: Vec<f64>,
    idler_cdf: Vec<f64>,
}

impl NearFieldPairs {
    fn build(lattice: Lattice, amplitude: Vec<Complex64>, h: &[f64], pupil_s: &[Complex64], pupil_i: &[Complex64]) -> Result<Self> {
        let len = lattice.len();
        for v in [h.len(), pupil_s.len(), pupil_i.len(), amplitude.len()] {
            check_len(len, v)?;
        }
        let spectrum = |pupil: &[Complex64]| -> Vec<Complex64> { pupil.iter().zip(h).map(|(p, h)| p * h).collect() };
        let to_psf = |mut s: Vec<Complex64>| {
            lattice.fft(&mut s, Direction::Inverse);
            s
        };
        let spectrum_signal = spectrum(pupil_s);
        let psf_signal = to_psf(spectrum_signal.clone());
        let psf_idler = to_psf(spectrum(pupil_i));

        let floor = if lattice.dims == 1 { 0.0 } else { STENCIL_FLOOR };
        let idler_marginal = marginal(lattice, &amplitude, &psf_signal, &psf_idler, floor)?;
        let signal_marginal = marginal(lattice, &amplitude, &psf_idler, &psf_signal, floor)?;
        let idler_cdf = cumulative(&idler_marginal);
        let signal_cdf = cumulative(&signal_marginal);
        if !(*idler_cdf.last().unwrap() > 0.0 && *signal_cdf.last().unwrap() > 0.0) {
            return Err(Error::Estimation("pair density has no mass".into()));
        }
        Ok(Self {
            lattice,
            amplitude,
            psf_idler,
            spectrum_signal,
            signal_cdf,
            idler_cdf,
        })
    }

    /// Two-dimensional model from a twin source and a configuration-B setup.
    pub fn from_source(source: &TwinSource, cfg: &ConfigB) -> Result<Self> {
        let grid = source.grid();
        if grid.n() != cfg.grid.n() {
            return Err(Error::Shape {
                expected: cfg.grid.len(),
                got: grid.len(),
            });
        }
        let (cosh, sinh) = source.coefficients();
        let c = cosh.iter().zip(sinh).map(|(a, b)| Complex64::new(a * b, 0.0)).collect();
        let lattice = Lattice { n: grid.n(), dims: 2 };
        Self::build(lattice, c, source.phase_matching(), cfg.pupil(Branch::Signal)?, cfg.pupil(Branch::Idler)?)
    }

    /// One-dimensional model matching an oracle setup.
    pub fn from_1d(model: &ConfigB1D<'_>) -> Result<Self> {
        let n = model.grid.n();
        check_len(n, model.pump.len())?;
        let lattice = Lattice { n, dims: 1 };
        let ones = vec![1.0; n];
        let h = model.phase_matching.unwrap_or(&ones);
        let pupil = |p: &[f64]| -> Result<Vec<Complex64>> {
            check_len(n, p.len())?;
            Ok(p.iter().map(|&v| Complex64::from_polar(1.0, v)).collect())
        };
        let c = model.pump.iter().map(|&a| Complex64::new(a, 0.0)).collect();
        Self::build(lattice, c, h, &pupil(model.phase_signal)?, &pupil(model.phase_idler)?)
    }

    /// Unnormalized marginal densities `(P(x₁), P(x₂))`.
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let undo = |c: &[f64]| {
            let mut prev = 0.0;
            c.iter()
                .map(|&v| {
                    let d = v - prev;
                    prev = v;
                    d
                })
                .collect()
        };
        (undo(&self.signal_cdf), undo(&self.idler_cdf))
    }

    /// `|ψ(·, x₂)|²` over the signal positions.
    pub fn conditional(&self, x2: usize) -> Vec<f64> {
        let l = self.lattice;
        let mut q: Vec<Complex64> = (0..l.len()).map(|r| self.amplitude[r] * self.psf_idler[l.sub(x2, r)]).collect();
        l.fft(&mut q, Direction::Forward);
        l.convolve_spectra(&q, &self.spectrum_signal).iter().map(|v| v.norm_sqr()).collect()
    }
}

impl PairModel for NearFieldPairs {
    fn n(&self) -> usize {
        self.lattice.n
    }

    fn dims(&self) -> usize {
        self.lattice.dims
    }

    fn sample_pair(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let x2 = search(&self.idler_cdf, rng.random());
        let cdf = cumulative(&self.conditional(x2));
        (search(&cdf, rng.random()), x2)
    }

    fn sample_signal(&self, rng: &mut ChaCha8Rng) -> usize {
        search(&self.signal_cdf, rng.random())
    }

    fn sample_idler(&self, rng: &mut ChaCha8Rng) -> usize {
        search(&self.idler_cdf, rng.random())
    }
}

/// Marginal over the photon imaged by `psf_b`, integrating out the photon
/// imaged by `psf_a`.
fn marginal(l: Lattice, c: &[Complex64], psf_a: &[Complex64], psf_b: &[Complex64], floor: f64) -> Result<Vec<f64>> {
    let len = l.len();
    // K(Δ) = Σ_u p_a(u) p_a*(u − Δ), from |F p_a|²
    let mut k: Vec<Complex64> = psf_a.to_vec();
    l.fft(&mut k, Direction::Forward);
    for v in &mut k {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    l.fft(&mut k, Direction::Inverse);
    let scale = (len as f64).sqrt();
    let zero = if l.dims == 1 { l.n / 2 } else { l.join(l.n / 2, l.n / 2) };
    let k0 = k[zero].norm() * scale;
    let kernel = |d: (isize, isize)| k[l.shift(zero, d)] * scale;

    // smallest box holding every displacement above the floor
    let mut radius = (0usize, 0usize);
    for i in 0..len {
        if k[i].norm() * scale > floor * k0 {
            let (x, y) = l.split(i);
            let dx = (x as isize - (l.n / 2) as isize).unsigned_abs();
            let dy = if l.dims == 1 { 0 } else { (y as isize - (l.n / 2) as isize).unsigned_abs() };
            radius = (radius.0.max(dx), radius.1.max(dy));
        }
    }
    let stencil: Vec<(isize, isize)> = l
        .displacements(radius)
        .into_iter()
        .filter(|&d| kernel(d).norm() > floor * k0)
        .collect();
    if stencil.len() > MAX_STENCIL {
        return param(format!(
            "pupil autocorrelation spans {} displacements (limit {MAX_STENCIL})",
            stencil.len()
        ));
    }
    let mut total = vec![Complex64::new(0.0, 0.0); len];
    for d in stencil {
        let kd = kernel(d);
        let mut a: Vec<Complex64> = (0..len).map(|r| c[r] * c[l.shift(r, d)].conj()).collect();
        let mut b: Vec<Complex64> = (0..len).map(|u| psf_b[u] * psf_b[l.shift(u, (-d.0, -d.1))].conj()).collect();
        l.fft(&mut a, Direction::Forward);
        l.fft(&mut b, Direction::Forward);
        for (t, v) in total.iter_mut().zip(l.convolve_spectra(&a, &b)) {
            *t += kd * v;
        }
    }
    Ok(total.into_iter().map(|v| v.re.max(0.0)).collect())
}
