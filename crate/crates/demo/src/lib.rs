//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each call builds a small configuration, evaluates one map and hands it to
//! JavaScript as a `Map`: a square image plus one summary number.

use biphoton::config::{ExperimentConfig, Geometry, ScreenSource};
use biphoton::correlator::speckle_contrast;
use biphoton::diffuser::estimate_grain_fwhm;
use biphoton::pipeline;
use wasm_bindgen::prelude::*;

/// Simulation grid used by every demo map.
const N: usize = 256;

#[wasm_bindgen]
pub struct Map {
    width: usize,
    values: Vec<f32>,
    summary: f64,
}

#[wasm_bindgen]
impl Map {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Row-major values, top row first.
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }

    /// Grain FWHM in mm⁻¹ for far-field maps, speckle contrast for tables.
    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> f64 {
        self.summary
    }
}

fn config(geometry: Geometry, rms_rad: f64, corr_um: f64, seed: u32) -> ExperimentConfig {
    let pitch_um = match geometry {
        Geometry::A => 20.0,
        Geometry::B => 40.0,
    };
    ExperimentConfig {
        n: N,
        pitch_um,
        camera_pixels: N,
        geometry,
        oracle_1d: geometry == Geometry::B,
        screen: ScreenSource::Synthetic {
            rms_rad,
            corr_um,
            seed: seed as u64,
        },
        ..ExperimentConfig::default()
    }
}

fn err(e: biphoton::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn finish(cfg: &ExperimentConfig, stack: biphoton::fstack::FStack, grain: bool) -> Result<Map, JsValue> {
    let values = stack.frame(0).map_err(err)?;
    let summary = if grain {
        estimate_grain_fwhm(&values, cfg.n, 1.0 / (cfg.n as f64 * cfg.pitch_um))
    } else {
        speckle_contrast(&values, cfg.n)
    };
    Ok(Map {
        width: cfg.n,
        values: values.iter().map(|&v| v as f32).collect(),
        summary: summary.unwrap_or(f64::NAN),
    })
}

/// Far-field intensity of the pump laser after the diffuser.
#[wasm_bindgen]
pub fn laser_speckle(rms_rad: f64, corr_um: f64, seed: u32) -> Result<Map, JsValue> {
    let cfg = config(Geometry::A, rms_rad, corr_um, seed);
    finish(&cfg, pipeline::laser(&cfg).map_err(err)?, true)
}

/// Two-photon far-field correlation through the same diffuser, on the sum
/// coordinate of the two momenta.
#[wasm_bindgen]
pub fn twin_speckle(rms_rad: f64, corr_um: f64, seed: u32) -> Result<Map, JsValue> {
    let cfg = config(Geometry::A, rms_rad, corr_um, seed);
    finish(&cfg, pipeline::oracle(&cfg).map_err(err)?, true)
}

/// Joint position table of one row through two independent diffuser regions,
/// signal position along x and idler position along y.
#[wasm_bindgen]
pub fn joint_table(rms_rad: f64, corr_um: f64, seed: u32) -> Result<Map, JsValue> {
    let cfg = config(Geometry::B, rms_rad, corr_um, seed);
    finish(&cfg, pipeline::oracle(&cfg).map_err(err)?, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_are_square_and_normalized() {
        for map in [laser_speckle(6.0, 125.0, 1), twin_speckle(6.0, 125.0, 1), joint_table(6.0, 125.0, 1)] {
            let map = map.ok().unwrap();
            assert_eq!(map.values.len(), map.width * map.width);
            assert!(map.values.iter().all(|v| v.is_finite() && *v >= 0.0));
            assert!(map.summary > 0.0, "{}", map.summary);
        }
    }
}
