//! Photon-counting camera model.
//!
//! Counts are Poisson with mean `η · flux` per pixel (or supplied directly as
//! detected photon hits), amplified by a deterministic EM gain, blurred by
//! Gaussian read noise and optionally thresholded to one bit.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{check_len, param, Error, Result};
use crate::image::bin;
use crate::rng::{substream, Stream};

/// Largest clipped fraction tolerated by [`subtract_vacuum`].
pub const MAX_CLIPPED_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Readout {
    /// One bit per pixel: 1 when the amplified signal exceeds the threshold.
    Thresholded,
    /// Raw photoelectron counts, no read noise.
    Ideal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraSpec {
    pub pixels: usize,
    pub pitch_um: f64,
    pub quantum_efficiency: f64,
    /// Read noise in output units.
    pub read_noise_sigma: f64,
    pub threshold: f64,
    /// Output units per photoelectron.
    pub em_gain: f64,
    pub readout: Readout,
}

impl CameraSpec {
    pub fn new(pixels: usize, pitch_um: f64, quantum_efficiency: f64) -> Result<Self> {
        let spec = Self {
            pixels,
            pitch_um,
            quantum_efficiency,
            read_noise_sigma: 1.0,
            threshold: 4.0,
            em_gain: 200.0,
            readout: Readout::Thresholded,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels == 0 {
            return param("camera needs at least one pixel");
        }
        if !(self.pitch_um > 0.0) {
            return param("pixel pitch must be positive");
        }
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return param(format!("quantum efficiency {} outside [0, 1]", self.quantum_efficiency));
        }
        if !(self.read_noise_sigma >= 0.0) {
            return param("read noise must be non-negative");
        }
        if self.read_noise_sigma > 0.0 && !(self.threshold > 0.0) {
            return param("threshold must be positive when read noise is present");
        }
        if !(self.em_gain > 0.0) {
            return param("EM gain must be positive");
        }
        Ok(())
    }

    /// Integer block size mapping an `n_sim` grid onto the camera.
    pub fn bin_factor(&self, n_sim: usize) -> Result<usize> {
        if n_sim < self.pixels || n_sim % self.pixels != 0 {
            return param(format!("camera of {} pixels does not divide a {n_sim} grid", self.pixels));
        }
        Ok(n_sim / self.pixels)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhotonImage {
    pub n: usize,
    pub counts: Vec<u16>,
    pub frame: u64,
    pub seed: u64,
}

impl PhotonImage {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Photon flux `I − baseline`, with small negatives clipped to zero.
pub fn subtract_vacuum(intensity: &[f64], baseline: f64) -> Result<Vec<f64>> {
    let mut positive = 0.0;
    let mut clipped = 0.0;
    let out: Vec<f64> = intensity
        .iter()
        .map(|&v| {
            let d = v - baseline;
            if d < 0.0 {
                clipped -= d;
                0.0
            } else {
                positive += d;
                d
            }
        })
        .collect();
    if clipped > MAX_CLIPPED_FRACTION * positive {
        return Err(Error::Calibration(format!(
            "vacuum subtraction clipped {clipped:.3e} against {positive:.3e} of signal"
        )));
    }
    Ok(out)
}

fn read_out<R: Rng>(counts: impl Iterator<Item = u64>, spec: &CameraSpec, rng: &mut R) -> Vec<u16> {
    match spec.readout {
        Readout::Ideal => counts.map(|c| c.min(u16::MAX as u64) as u16).collect(),
        Readout::Thresholded => {
            let noise = Normal::new(0.0, spec.read_noise_sigma).expect("validated sigma");
            counts
                .map(|c| {
                    let v = c as f64 * spec.em_gain + noise.sample(rng);
                    u16::from(v > spec.threshold)
                })
                .collect()
        }
    }
}

/// Frame from a photon-flux map on an `n_sim²` grid (vacuum already removed).
pub fn detect(flux: &[f64], n_sim: usize, spec: &CameraSpec, seed: u64, frame: u64) -> Result<PhotonImage> {
    spec.validate()?;
    check_len(n_sim * n_sim, flux.len())?;
    if flux.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Calibration("negative photon flux".into()));
    }
    let factor = spec.bin_factor(n_sim)?;
    let binned = bin(flux, n_sim, factor)?;
    let mut rng = substream(seed, Stream::Detector, frame);
    let eta = spec.quantum_efficiency;
    let electrons: Vec<u64> = binned
        .iter()
        .map(|&m| {
            let mean = eta * m;
            if mean > 0.0 {
                Poisson::new(mean).map(|p| p.sample(&mut rng) as u64).unwrap_or(0)
            } else {
                0
            }
        })
        .collect();
    Ok(PhotonImage {
        n: spec.pixels,
        counts: read_out(electrons.into_iter(), spec, &mut rng),
        frame,
        seed,
    })
}

/// Frame from detected photon positions (flat indices on an `n_sim²` grid).
/// Losses are assumed applied upstream, so η is not used again here.
pub fn detect_hits(hits: &[u32], n_sim: usize, spec: &CameraSpec, seed: u64, frame: u64) -> Result<PhotonImage> {
    spec.validate()?;
    let factor = spec.bin_factor(n_sim)?;
    let n = spec.pixels;
    let mut electrons = vec![0u64; n * n];
    for &h in hits {
        let h = h as usize;
        if h >= n_sim * n_sim {
            return param(format!("hit {h} outside the {n_sim}x{n_sim} grid"));
        }
        let (x, y) = (h % n_sim / factor, h / n_sim / factor);
        electrons[y * n + x] += 1;
    }
    let mut rng = substream(seed, Stream::Detector, frame);
    Ok(PhotonImage {
        n,
        counts: read_out(electrons.into_iter(), spec, &mut rng),
        frame,
        seed,
    })
}

/// Pixel `(i, j) ↦ (n−1−i, n−1−j)`.
pub fn rotate180(image: &PhotonImage) -> PhotonImage {
    let mut counts = image.counts.clone();
    counts.reverse();
    PhotonImage { counts, ..image.clone() }
}

/// Keeps each count independently with probability `keep`.
pub fn thin(image: &PhotonImage, keep: f64, seed: u64) -> Result<PhotonImage> {
    if !(0.0..=1.0).contains(&keep) {
        return param(format!("keep probability {keep} outside [0, 1]"));
    }
    let mut rng = substream(seed, Stream::Detector, u64::MAX - image.frame);
    let counts = image
        .counts
        .iter()
        .map(|&c| (0..c).filter(|_| rng.random::<f64>() < keep).count() as u16)
        .collect();
    Ok(PhotonImage { counts, ..image.clone() })
}
