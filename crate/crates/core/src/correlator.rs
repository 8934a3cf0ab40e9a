//! Twin-image correlation analysis.
//!
//! For every frame pair the signal image is cross-correlated with the idler
//! image (far mode: the idler rotated by 180°, which turns the correlation
//! into a function of the sum coordinate). The correlation of the stack-mean
//! images is subtracted to remove accidental coincidences, leaving the mean
//! number of genuine coincidences per frame at each displacement.
//!
//! Maps are `2n × 2n` (frames zero-padded ×2) with zero displacement at index
//! `(n, n)`. In far mode the map coordinate is the sum `s = k₁ + k₂ − n` of
//! centered pixel indices, so momentum anti-correlation shows up at the center.

use num_complex::Complex64;

use crate::diffuser::GrainEstimator;
use crate::emccd::{rotate180, PhotonImage};
use crate::error::{check_len, param, Error, Result};
use crate::exec::{chunked_fold, Mode};
use crate::grid::{fft2_inplace, Direction};
use crate::image::{argmax, envelope, envelope_corrected, gaussian_smooth_open, profile_fwhm};

/// Frames whose count product is below `SPARSE_FACTOR · m²` are correlated
/// count by count instead of through FFTs.
const SPARSE_FACTOR: usize = 16;
const FOLD_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelationMode {
    Far,
    Near,
}

impl CorrelationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CorrelationMode::Far => "far",
            CorrelationMode::Near => "near",
        }
    }
}

impl std::str::FromStr for CorrelationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "far" => Ok(CorrelationMode::Far),
            "near" => Ok(CorrelationMode::Near),
            other => Err(Error::Parameter(format!("mode must be far or near, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PairStack {
    pub signal: Vec<PhotonImage>,
    pub idler: Vec<PhotonImage>,
    pub mode: CorrelationMode,
    /// Camera pixel in map units: µm (near) or µm⁻¹ of spatial frequency (far).
    pub scale: f64,
}

impl PairStack {
    pub fn new(signal: Vec<PhotonImage>, idler: Vec<PhotonImage>, mode: CorrelationMode, scale: f64) -> Result<Self> {
        if signal.len() != idler.len() {
            return param(format!("{} signal frames but {} idler frames", signal.len(), idler.len()));
        }
        if signal.len() < 2 {
            return param("a stack needs at least two frame pairs");
        }
        let n = signal[0].n;
        for f in signal.iter().chain(&idler) {
            if f.n != n || f.counts.len() != n * n {
                return Err(Error::Shape {
                    expected: n * n,
                    got: f.counts.len(),
                });
            }
        }
        if !(scale > 0.0) {
            return param("pixel scale must be positive");
        }
        Ok(Self {
            signal,
            idler,
            mode,
            scale,
        })
    }

    pub fn n(&self) -> usize {
        self.signal[0].n
    }

    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    /// Mean counts per frame `(signal, idler)`.
    pub fn mean_counts(&self) -> (f64, f64) {
        let m = self.len() as f64;
        let s = self.signal.iter().map(|f| f.total()).sum::<u64>() as f64 / m;
        let i = self.idler.iter().map(|f| f.total()).sum::<u64>() as f64 / m;
        (s, i)
    }

    /// Ensemble-mean images `(signal, idler)`.
    pub fn mean_images(&self) -> (Vec<f64>, Vec<f64>) {
        (mean_image(&self.signal), mean_image(&self.idler))
    }
}

pub fn mean_image(frames: &[PhotonImage]) -> Vec<f64> {
    let len = frames.first().map_or(0, |f| f.counts.len());
    let mut sum = vec![0u64; len];
    for f in frames {
        for (s, &c) in sum.iter_mut().zip(&f.counts) {
            *s += c as u64;
        }
    }
    let m = frames.len().max(1) as f64;
    sum.into_iter().map(|s| s as f64 / m).collect()
}

#[derive(Clone, Debug)]
pub struct CorrelationMap {
    /// Map edge, twice the camera edge.
    pub m: usize,
    /// Mean excess coincidences per frame at each displacement.
    pub values: Vec<f64>,
    /// Accidental coincidences per frame (mean ⋆ mean), the subtracted part.
    pub background: Vec<f64>,
    pub mode: CorrelationMode,
    pub scale: f64,
    pub frames: usize,
    /// Maps of the even and odd frames alone.
    pub halves: Option<[Vec<f64>; 2]>,
}

impl CorrelationMap {
    pub fn center(&self) -> usize {
        self.m / 2
    }

    /// Standard error of `values` at each displacement under Poisson
    /// coincidence statistics.
    pub fn noise(&self) -> Vec<f64> {
        let f = self.frames as f64;
        self.background.iter().map(|b| (b.max(0.0) / f).sqrt()).collect()
    }

    fn z_noise_floor(&self) -> f64 {
        // single accidental coincidence over the whole stack
        1.0 / self.frames as f64
    }
}

/// Padded correlation workspace for `n × n` frames.
struct Correlator {
    n: usize,
    m: usize,
}

impl Correlator {
    /// Adds `conj(F a) · F b` for a pair of real images.
    fn accumulate(&self, acc: &mut [Complex64], a: &[f64], b: &[f64]) {
        // both spectra from one complex transform of a + i b
        let (n, m) = (self.n, self.m);
        let mut z = vec![Complex64::new(0.0, 0.0); m * m];
        for y in 0..n {
            for x in 0..n {
                z[y * m + x] = Complex64::new(a[y * n + x], b[y * n + x]);
            }
        }
        fft2_inplace(&mut z, m, Direction::Forward);
        // centered index k ↔ frequency k − m/2, so −k ↔ (m − k) mod m
        let mirror = |k: usize| (m - k) % m;
        for ky in 0..m {
            for kx in 0..m {
                let zk = z[ky * m + kx];
                let zm = z[mirror(ky) * m + mirror(kx)].conj();
                let fa = (zk + zm) * 0.5;
                let fb = (zk - zm) * Complex64::new(0.0, -0.5);
                acc[ky * m + kx] += fa.conj() * fb;
            }
        }
    }

    /// `C(d) = Σ_x a(x) b(x + d)` from accumulated spectra, center at n.
    fn finish(&self, mut acc: Vec<Complex64>) -> Vec<f64> {
        fft2_inplace(&mut acc, self.m, Direction::Inverse);
        let scale = self.m as f64;
        acc.into_iter().map(|v| v.re * scale).collect()
    }

    fn sparse(&self, acc: &mut [i64], a: &[(usize, u16)], b: &[(usize, u16)]) {
        let (n, m) = (self.n, self.m);
        for &(ia, ca) in a {
            let (ax, ay) = (ia % n, ia / n);
            for &(ib, cb) in b {
                let (bx, by) = (ib % n, ib / n);
                let dx = bx + n - ax;
                let dy = by + n - ay;
                acc[dy * m + dx] += ca as i64 * cb as i64;
            }
        }
    }
}

fn nonzero(img: &PhotonImage) -> Vec<(usize, u16)> {
    img.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (i, c)).collect()
}

#[derive(Default)]
struct Raw {
    dense: Option<Vec<Complex64>>,
    sparse: Vec<i64>,
}

impl Raw {
    fn merge(&mut self, other: Raw) {
        for (x, y) in self.sparse.iter_mut().zip(&other.sparse) {
            *x += y;
        }
        match (&mut self.dense, other.dense) {
            (Some(a), Some(b)) => {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
            }
            (a @ None, b) => *a = b,
            _ => {}
        }
    }

    fn total(self, corr: &Correlator) -> Vec<f64> {
        let mut raw: Vec<f64> = self.sparse.iter().map(|&v| v as f64).collect();
        if let Some(d) = self.dense {
            for (r, v) in raw.iter_mut().zip(corr.finish(d)) {
                *r += v;
            }
        }
        raw
    }
}

pub fn cross_correlate_stack(stack: &PairStack) -> Result<CorrelationMap> {
    cross_correlate_stack_with(stack, Mode::default())
}

pub fn cross_correlate_stack_with(stack: &PairStack, mode: Mode) -> Result<CorrelationMap> {
    let n = stack.n();
    let m = 2 * n;
    let corr = Correlator { n, m };
    let rotate = stack.mode == CorrelationMode::Far;
    // even and odd frames accumulate apart so that feature regions can be
    // chosen on one half and integrated on the other
    let [even, odd] = chunked_fold(
        stack.len(),
        FOLD_CHUNK,
        mode,
        || {
            [0, 1].map(|_| Raw {
                dense: None,
                sparse: vec![0; m * m],
            })
        },
        |p, f| {
            let h = &mut p[f % 2];
            let s = &stack.signal[f];
            let i = if rotate { rotate180(&stack.idler[f]) } else { stack.idler[f].clone() };
            let (a, b) = (nonzero(s), nonzero(&i));
            if a.len() * b.len() <= SPARSE_FACTOR * m * m {
                corr.sparse(&mut h.sparse, &a, &b);
            } else {
                let acc = h.dense.get_or_insert_with(|| vec![Complex64::new(0.0, 0.0); m * m]);
                corr.accumulate(acc, &s.as_f64(), &i.as_f64());
            }
        },
        |a, b| {
            let [b0, b1] = b;
            a[0].merge(b0);
            a[1].merge(b1);
        },
    );
    let (raw_even, raw_odd) = (even.total(&corr), odd.total(&corr));
    let background_of = |frames: &mut dyn Iterator<Item = usize>| {
        let idx: Vec<usize> = frames.collect();
        let pick = |v: &[PhotonImage]| idx.iter().map(|&f| v[f].clone()).collect::<Vec<_>>();
        let ms = mean_image(&pick(&stack.signal));
        let mi = mean_image(&pick(&stack.idler));
        let mi: Vec<f64> = if rotate { mi.into_iter().rev().collect() } else { mi };
        let mut acc = vec![Complex64::new(0.0, 0.0); m * m];
        corr.accumulate(&mut acc, &ms, &mi);
        corr.finish(acc)
    };
    let excess = |raw: &[f64], bg: &[f64], frames: usize| -> Vec<f64> {
        let mut v: Vec<f64> = raw.iter().zip(bg).map(|(r, b)| r / frames as f64 - b).collect();
        if rotate {
            // C(d) with d = r − k₁ holds sum s = −1 − d: reverse both axes
            v.reverse();
        }
        v
    };
    let total = stack.len();
    let (n_even, n_odd) = (total.div_ceil(2), total / 2);
    let raw: Vec<f64> = raw_even.iter().zip(&raw_odd).map(|(a, b)| a + b).collect();
    let mut background = background_of(&mut (0..total));
    let values = excess(&raw, &background, total);
    let halves = [
        excess(&raw_even, &background_of(&mut (0..total).step_by(2)), n_even),
        excess(&raw_odd, &background_of(&mut (1..total).step_by(2)), n_odd),
    ];
    if rotate {
        background.reverse();
    }
    Ok(CorrelationMap {
        m,
        values,
        background,
        mode: stack.mode,
        scale: stack.scale,
        frames: stack.len(),
        halves: Some(halves),
    })
}

/// Two-photon amplitude correlation of complex far fields, accumulated over
/// realizations: `M(s) = Σ_ν A_s(ν) A_i(s − ν)`, on the same centered sum
/// grid as the configuration-A oracle.
#[derive(Clone, Debug)]
pub struct FieldCorrelator {
    n: usize,
    acc: Vec<Complex64>,
    count: usize,
}

impl FieldCorrelator {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            acc: vec![Complex64::new(0.0, 0.0); n * n],
            count: 0,
        }
    }

    pub fn add(&mut self, signal: &[Complex64], idler: &[Complex64]) -> Result<()> {
        let len = self.n * self.n;
        check_len(len, signal.len())?;
        check_len(len, idler.len())?;
        let mut a = signal.to_vec();
        let mut b = idler.to_vec();
        fft2_inplace(&mut a, self.n, Direction::Forward);
        fft2_inplace(&mut b, self.n, Direction::Forward);
        for ((acc, x), y) in self.acc.iter_mut().zip(&a).zip(&b) {
            *acc += x * y;
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: Self) {
        for (a, b) in self.acc.iter_mut().zip(other.acc) {
            *a += b;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `|M(s)|²` normalized to unit sum.
    pub fn probability_map(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::Estimation("no realizations accumulated".into()));
        }
        let mut m = self.acc.clone();
        fft2_inplace(&mut m, self.n, Direction::Inverse);
        let p: Vec<f64> = m.iter().map(|v| v.norm_sqr()).collect();
        let total: f64 = p.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Estimation("correlation vanished".into()));
        }
        Ok(p.into_iter().map(|v| v / total).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub x0: f64,
    pub y0: f64,
    /// Standard deviations in pixels.
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub offset: f64,
    pub snr: f64,
}

impl GaussianFit {
    /// Variances in map units: µm² (near) or ħ²µm⁻² via `p = ħ 2π ν` (far).
    pub fn variances(&self, mode: CorrelationMode, scale: f64) -> (f64, f64) {
        let unit = match mode {
            CorrelationMode::Near => scale,
            CorrelationMode::Far => 2.0 * std::f64::consts::PI * scale,
        };
        ((self.sigma_x * unit).powi(2), (self.sigma_y * unit).powi(2))
    }

    fn eval(p: &[f64; 6], x: f64, y: f64) -> (f64, [f64; 6]) {
        let [a, x0, y0, sx, sy, b] = *p;
        let (u, v) = ((x - x0) / sx, (y - y0) / sy);
        let e = (-0.5 * (u * u + v * v)).exp();
        let g = a * e;
        (g + b, [e, g * u / sx, g * v / sy, g * u * u / sx, g * v * v / sy, 1.0])
    }
}

/// Least-squares 2-D Gaussian fit (Levenberg–Marquardt) around the maximum.
pub fn fit_gaussian_peak(map: &CorrelationMap) -> Result<GaussianFit> {
    let m = map.m;
    let peak = argmax(&map.values);
    let (px, py) = (peak % m, peak / m);
    let top = map.values[peak];
    if !(top > 0.0) {
        return Err(Error::Estimation("no positive correlation peak".into()));
    }
    // initial width from the half-maximum area around the peak
    let reach = 12usize.min(m / 2);
    let mut above = 0usize;
    for y in py.saturating_sub(reach)..(py + reach + 1).min(m) {
        for x in px.saturating_sub(reach)..(px + reach + 1).min(m) {
            if map.values[y * m + x] > 0.5 * top {
                above += 1;
            }
        }
    }
    let s0 = (above.max(1) as f64 / (2.0 * std::f64::consts::PI * std::f64::consts::LN_2)).sqrt().max(0.5);
    let half = ((5.0 * s0).ceil() as usize).clamp(4, m / 2);
    let (x_lo, x_hi) = (px.saturating_sub(half), (px + half + 1).min(m));
    let (y_lo, y_hi) = (py.saturating_sub(half), (py + half + 1).min(m));
    let pts: Vec<(f64, f64, f64)> = (y_lo..y_hi)
        .flat_map(|y| (x_lo..x_hi).map(move |x| (x, y)))
        .map(|(x, y)| (x as f64, y as f64, map.values[y * m + x]))
        .collect();

    let cost = |p: &[f64; 6]| -> f64 { pts.iter().map(|&(x, y, v)| (GaussianFit::eval(p, x, y).0 - v).powi(2)).sum() };
    let mut p = [top, px as f64, py as f64, s0, s0, 0.0];
    let mut c = cost(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..500 {
        let mut jtj = [[0.0; 6]; 6];
        let mut jtr = [0.0; 6];
        for &(x, y, v) in &pts {
            let (f, g) = GaussianFit::eval(&p, x, y);
            let r = v - f;
            for i in 0..6 {
                jtr[i] += g[i] * r;
                for j in 0..6 {
                    jtj[i][j] += g[i] * g[j];
                }
            }
        }
        let mut a = jtj;
        for (i, row) in a.iter_mut().enumerate() {
            row[i] *= 1.0 + lambda;
        }
        let Some(step) = solve6(a, jtr) else {
            lambda *= 10.0;
            continue;
        };
        let mut q = p;
        for i in 0..6 {
            q[i] += step[i];
        }
        q[3] = q[3].abs();
        q[4] = q[4].abs();
        let cq = cost(&q);
        if cq <= c {
            let rel = (c - cq) / c.max(f64::MIN_POSITIVE);
            p = q;
            c = cq;
            lambda = (lambda * 0.3).max(1e-12);
            if rel < 1e-12 {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                converged = true;
                break;
            }
        }
    }
    if !converged || !(p[3] > 0.0 && p[4] > 0.0) || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation("Gaussian fit did not converge".into()));
    }
    let noise = map.noise();
    let (cx, cy) = (p[1].round().clamp(0.0, (m - 1) as f64) as usize, p[2].round().clamp(0.0, (m - 1) as f64) as usize);
    let sigma = noise[cy * m + cx].max(map.z_noise_floor());
    let snr = p[0] / sigma;
    if snr < 5.0 {
        return Err(Error::Estimation(format!("peak SNR {snr:.1} below 5")));
    }
    Ok(GaussianFit {
        amplitude: p[0],
        x0: p[1],
        y0: p[2],
        sigma_x: p[3],
        sigma_y: p[4],
        offset: p[5],
        snr,
    })
}

fn solve6(mut a: [[f64; 6]; 6], mut b: [f64; 6]) -> Option<[f64; 6]> {
    for col in 0..6 {
        let pivot = (col..6).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..6 {
            let f = a[row][col] / a[col][col];
            for k in col..6 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 6];
    for row in (0..6).rev() {
        let s: f64 = (row + 1..6).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Region over which genuine coincidences are integrated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    /// ±5 fitted σ around a single Gaussian peak.
    Peak,
    /// Support of the smoothed map (> 10 % of its maximum).
    Envelope,
    /// Peak when a compact Gaussian holds most of the excess, else envelope.
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegreeOfCorrelation {
    pub value: f64,
    pub feature: Feature,
    pub clamped: bool,
    pub diagnostic: Option<String>,
}

/// Smoothing scale separating speckle grains from their envelope.
pub fn envelope_sigma_px(m: usize) -> f64 {
    (m as f64 / 32.0).max(2.0)
}

/// Level, relative to the smoothed maximum, bounding an envelope region. A
/// 2-D Gaussian loses exactly this fraction of its mass outside the level.
const ENVELOPE_LEVEL: f64 = 0.01;

fn envelope_support(values: &[f64], m: usize) -> Vec<bool> {
    let smooth = gaussian_smooth_open(values, m, envelope_sigma_px(m));
    let max = smooth.iter().cloned().fold(f64::MIN, f64::max);
    smooth.iter().map(|&v| max > 0.0 && v > ENVELOPE_LEVEL * max).collect()
}

fn peak_window(map: &CorrelationMap, fit: &GaussianFit) -> Vec<bool> {
    let m = map.m;
    (0..m * m)
        .map(|i| {
            let (x, y) = ((i % m) as f64, (i / m) as f64);
            (x - fit.x0).abs() <= 5.0 * fit.sigma_x && (y - fit.y0).abs() <= 5.0 * fit.sigma_y
        })
        .collect()
}

/// Excess per frame and its variance, summed over `region`.
fn integrate(values: &[f64], background: &[f64], frames: f64, region: &[bool]) -> (f64, f64) {
    region
        .iter()
        .zip(values.iter().zip(background))
        .filter(|(r, _)| **r)
        .fold((0.0, 0.0), |(s, v), (_, (x, b))| (s + x, v + b.max(0.0) / frames))
}

/// Envelope integral. With half maps the region is chosen on one half and
/// summed on the other, so noise cannot bias the selection.
fn envelope_integral(map: &CorrelationMap) -> (f64, f64) {
    let f = map.frames as f64;
    match &map.halves {
        Some([even, odd]) => {
            let (fe, fo) = (f / 2.0, f / 2.0);
            let (a, va) = integrate(odd, &map.background, fo, &envelope_support(even, map.m));
            let (b, vb) = integrate(even, &map.background, fe, &envelope_support(odd, map.m));
            (0.5 * (a + b), 0.25 * (va + vb))
        }
        None => integrate(&map.values, &map.background, f, &envelope_support(&map.values, map.m)),
    }
}

/// Genuine coincidences per frame divided by the mean photon count per frame.
pub fn degree_of_correlation(map: &CorrelationMap, stack: &PairStack, feature: Feature) -> DegreeOfCorrelation {
    let (ms, mi) = stack.mean_counts();
    let photons = 0.5 * (ms + mi);
    let zero = |feature, why: &str| DegreeOfCorrelation {
        value: 0.0,
        feature,
        clamped: false,
        diagnostic: Some(why.to_string()),
    };
    if !(photons > 0.0) {
        return zero(feature, "stack has no photons");
    }
    let frames = map.frames as f64;
    let fit = fit_gaussian_peak(map).ok();
    let window = |f: &GaussianFit| integrate(&map.values, &map.background, frames, &peak_window(map, f));
    let ((excess, var), used) = match (feature, fit) {
        (Feature::Peak, Some(f)) => (window(&f), Feature::Peak),
        (Feature::Peak, None) => return zero(Feature::Peak, "no fittable correlation peak"),
        (Feature::Envelope, _) | (Feature::Auto, None) => (envelope_integral(map), Feature::Envelope),
        (Feature::Auto, Some(f)) => {
            let peak = window(&f);
            let envelope = envelope_integral(map);
            let compact = f.sigma_x < map.m as f64 / 16.0 && f.sigma_y < map.m as f64 / 16.0;
            if compact && peak.0 >= 0.5 * envelope.0 {
                (peak, Feature::Peak)
            } else {
                (envelope, Feature::Envelope)
            }
        }
    };
    if !(excess > 5.0 * var.sqrt()) || !(excess > 0.0) {
        return zero(used, "no significant coincidence excess");
    }
    let raw = excess / photons;
    let clamped = !(0.0..=1.0).contains(&raw);
    DegreeOfCorrelation {
        value: raw.clamp(0.0, 1.0),
        feature: used,
        clamped,
        diagnostic: clamped.then(|| format!("raw ratio {raw:.3} clamped to [0, 1]")),
    }
}

/// `V_d = 0.25 / (σ²_d · σ²_νd)` per axis with momentum variances in ħ²µm⁻²,
/// and `V = sqrt(V_x V_y)`.
pub fn schmidt_numbers(sx2: f64, sy2: f64, snx2: f64, sny2: f64) -> Result<(f64, f64, f64)> {
    if [sx2, sy2, snx2, sny2].iter().any(|v| !(*v > 0.0)) {
        return param("variances must be positive");
    }
    let vx = 0.25 / (sx2 * snx2);
    let vy = 0.25 / (sy2 * sny2);
    Ok((vx, vy, (vx * vy).sqrt()))
}

/// Grain FWHM of a far-mode map in mm⁻¹.
pub fn grain_fwhm(map: &CorrelationMap) -> Result<f64> {
    if map.mode != CorrelationMode::Far {
        return param("grain size is measured on far-mode maps");
    }
    let px = GrainEstimator::default().fwhm_px(&map.values, map.m)?;
    Ok(px * map.scale * 1000.0)
}

/// Standard deviation over mean of an image after envelope correction, on the
/// region where the envelope exceeds 10 % of its maximum.
pub fn speckle_contrast(image: &[f64], n: usize) -> Result<f64> {
    speckle_contrast_with(image, n, GrainEstimator::default().envelope_sigma_px)
}

pub fn speckle_contrast_with(image: &[f64], n: usize, sigma_px: f64) -> Result<f64> {
    check_len(n * n, image.len())?;
    let (corrected, support) = envelope_corrected(image, n, sigma_px, 0.1);
    let vals: Vec<f64> = corrected.iter().zip(&support).filter(|(_, &s)| s).map(|(v, _)| *v).collect();
    if vals.is_empty() {
        return Err(Error::Estimation("empty envelope support".into()));
    }
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
    // corrected values fluctuate around zero; the ratio image has mean 1 + mean
    Ok(var.sqrt() / (1.0 + mean))
}

/// Speckle contrast of an accumulated photon-count image with the Poisson
/// shot-noise variance removed: `sqrt(⟨(c/e − 1)²⟩ − ⟨1/e⟩)` over the region
/// where the envelope `e` exceeds 10 % of its maximum. Clamped at zero.
pub fn shot_corrected_contrast(counts: &[f64], n: usize, sigma_px: f64) -> Result<f64> {
    check_len(n * n, counts.len())?;
    let env = envelope(counts, n, sigma_px);
    let top = env.iter().cloned().fold(0.0, f64::max);
    let (mut k, mut var, mut shot) = (0.0, 0.0, 0.0);
    for (c, e) in counts.iter().zip(&env) {
        if *e > 0.1 * top && top > 0.0 {
            k += 1.0;
            var += (c / e - 1.0).powi(2);
            shot += 1.0 / e;
        }
    }
    if k == 0.0 {
        return Err(Error::Estimation("empty envelope support".into()));
    }
    Ok(((var - shot) / k).max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// FWHM (mm) of the smoothed map envelope through its maximum along `axis`.
/// `smooth_px = 0` uses the raw map.
pub fn envelope_fwhm(map: &CorrelationMap, axis: Axis, smooth_px: f64) -> Result<f64> {
    let m = map.m;
    let env = if smooth_px > 0.0 {
        gaussian_smooth_open(&map.values, m, smooth_px)
    } else {
        map.values.clone()
    };
    let peak = argmax(&env);
    let (px, py) = (peak % m, peak / m);
    let (profile, center) = match axis {
        Axis::X => ((0..m).map(|x| env[py * m + x]).collect::<Vec<_>>(), px),
        Axis::Y => ((0..m).map(|y| env[y * m + px]).collect::<Vec<_>>(), py),
    };
    let fwhm = profile_fwhm(&profile, center).ok_or_else(|| Error::Estimation("envelope not resolved".into()))?;
    Ok(fwhm * map.scale / 1000.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationReport {
    pub pairs: usize,
    pub mode: CorrelationMode,
    pub doc: f64,
    pub sx2: f64,
    pub sy2: f64,
    pub snx2: f64,
    pub sny2: f64,
    pub vx: f64,
    pub vy: f64,
    pub v: f64,
    pub grain_fwhm: f64,
    pub envelope_fwhm: f64,
}

pub const REPORT_HEADER: &str = "pairs,mode,doc,sx2,sy2,snx2,sny2,vx,vy,v,grain_fwhm,envelope_fwhm";

impl CorrelationReport {
    /// Everything measurable from one stack; quantities that do not apply
    /// (or fail to estimate) are NaN.
    pub fn measure(stack: &PairStack, map: &CorrelationMap) -> Self {
        let nan = f64::NAN;
        let doc = degree_of_correlation(map, stack, Feature::Auto);
        // peak widths for single-peak maps, grain and envelope for speckle maps
        let peak = doc.feature == Feature::Peak;
        let (a, b) = match fit_gaussian_peak(map) {
            Ok(f) if peak => f.variances(map.mode, map.scale),
            _ => (nan, nan),
        };
        let doc = doc.value;
        let (sx2, sy2, snx2, sny2) = match map.mode {
            CorrelationMode::Near => (a, b, nan, nan),
            CorrelationMode::Far => (nan, nan, a, b),
        };
        let grain = match map.mode {
            CorrelationMode::Far if !peak => grain_fwhm(map).unwrap_or(nan),
            _ => nan,
        };
        let envelope = match map.mode {
            CorrelationMode::Near if !peak => envelope_fwhm(map, Axis::X, envelope_sigma_px(map.m)).unwrap_or(nan),
            _ => nan,
        };
        Self {
            pairs: stack.len(),
            mode: map.mode,
            doc,
            sx2,
            sy2,
            snx2,
            sny2,
            vx: nan,
            vy: nan,
            v: nan,
            grain_fwhm: grain,
            envelope_fwhm: envelope,
        }
    }

    /// Fills the Schmidt numbers from position variances in `self` and
    /// momentum variances in `far`.
    pub fn with_schmidt(mut self, far: &CorrelationReport) -> Result<Self> {
        self.snx2 = far.snx2;
        self.sny2 = far.sny2;
        let (vx, vy, v) = schmidt_numbers(self.sx2, self.sy2, self.snx2, self.sny2)?;
        self.vx = vx;
        self.vy = vy;
        self.v = v;
        Ok(self)
    }

    pub fn to_csv(&self) -> String {
        let f = |v: f64| if v.is_finite() { format!("{v}") } else { "nan".into() };
        format!(
            "{REPORT_HEADER}\n{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.pairs,
            self.mode.as_str(),
            f(self.doc),
            f(self.sx2),
            f(self.sy2),
            f(self.snx2),
            f(self.sny2),
            f(self.vx),
            f(self.vy),
            f(self.v),
            f(self.grain_fwhm),
            f(self.envelope_fwhm)
        )
    }
}
