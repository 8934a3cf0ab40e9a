//! Experiment configuration files.
//!
//! Line-oriented `key = value` pairs under `[section]` headers, `#` comments.
//! Every key is optional and falls back to the reference experiment; unknown
//! sections or keys, duplicates and malformed values are errors.
//!
//! ```text
//! [grid]
//! n = 512
//! pitch_um = 10
//! [screen]
//! rms_rad = 12.566
//! corr_um = 125
//! seed = 7
//! [optics]
//! config = a
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

const SCHEMA: &[(&str, &[&str])] = &[
    ("grid", &["n", "pitch_um", "lambda_nm"]),
    ("pump", &["fwhm_mm", "wavelength_nm"]),
    ("gain", &["g", "pm_fwhm_mrad"]),
    ("screen", &["rms_rad", "corr_um", "seed", "path"]),
    ("optics", &["config", "f_relay_mm", "f_fourier_mm", "f_mm", "collection", "oracle_1d"]),
    ("camera", &["pixels", "pitch_um", "eta", "read_sigma", "threshold"]),
    ("run", &["pairs", "master_seed", "out_dir"]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    /// Diffuser in the crystal image plane, cameras in the far field.
    A,
    /// Diffuser in the far field, cameras in the crystal image plane.
    B,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScreenSource {
    None,
    Synthetic { rms_rad: f64, corr_um: f64, seed: u64 },
    /// Single-frame f32 FSTACK phase map in radians.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub pitch_um: f64,
    pub lambda_nm: f64,
    pub pump_fwhm_mm: f64,
    /// Recorded only; the simulation is monochromatic at degeneracy.
    pub pump_wavelength_nm: f64,
    pub gain: f64,
    pub pm_fwhm_mrad: f64,
    pub screen: ScreenSource,
    pub geometry: Geometry,
    pub f_relay_mm: f64,
    pub f_fourier_mm: f64,
    /// Configuration B lens between crystal image and diffuser.
    pub f_mm: f64,
    pub collection: f64,
    pub oracle_1d: bool,
    pub camera_pixels: usize,
    /// Camera pixel pitch, derived from the optics when absent.
    pub camera_pitch_um: Option<f64>,
    pub eta: f64,
    pub read_sigma: f64,
    pub threshold: f64,
    pub pairs: usize,
    pub master_seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 512,
            pitch_um: 10.0,
            lambda_nm: 710.0,
            pump_fwhm_mm: 1.6,
            pump_wavelength_nm: 355.0,
            gain: 0.38,
            pm_fwhm_mrad: 47.0,
            screen: ScreenSource::None,
            geometry: Geometry::A,
            f_relay_mm: 75.0,
            f_fourier_mm: 150.0,
            f_mm: 150.0,
            collection: 1.0,
            oracle_1d: false,
            camera_pixels: 512,
            camera_pitch_um: None,
            eta: 0.26,
            read_sigma: 1.0,
            threshold: 4.0,
            pairs: 100,
            master_seed: 1,
            out_dir: None,
        }
    }
}

type Entries = BTreeMap<(String, String), (String, usize)>;

fn parse_entries(text: &str) -> Result<Entries> {
    let mut section: Option<&str> = None;
    let mut out = Entries::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section header")))?
                .trim();
            let known = SCHEMA.iter().find(|(s, _)| *s == name);
            section = Some(known.ok_or_else(|| Error::Config(format!("line {line_no}: unknown section [{name}]")))?.0);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line_no}: expected key = value")))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.ok_or_else(|| Error::Config(format!("line {line_no}: key {key:?} outside any section")))?;
        let keys = SCHEMA.iter().find(|(s, _)| *s == sec).unwrap().1;
        if !keys.contains(&key) {
            return Err(Error::Config(format!("line {line_no}: unknown key {key:?} in [{sec}]")));
        }
        let value = value.strip_prefix('"').and_then(|v| v.strip_suffix('"')).unwrap_or(value);
        if out.insert((sec.to_string(), key.to_string()), (value.to_string(), line_no)).is_some() {
            return Err(Error::Config(format!("line {line_no}: duplicate key {key:?} in [{sec}]")));
        }
    }
    Ok(out)
}

struct Reader {
    entries: Entries,
}

impl Reader {
    fn raw(&self, sec: &str, key: &str) -> Option<&(String, usize)> {
        self.entries.get(&(sec.to_string(), key.to_string()))
    }

    fn get<T: FromStr>(&self, sec: &str, key: &str, default: T) -> Result<T> {
        Ok(self.opt(sec, key)?.unwrap_or(default))
    }

    fn opt<T: FromStr>(&self, sec: &str, key: &str) -> Result<Option<T>> {
        self.raw(sec, key)
            .map(|(v, line)| {
                v.parse()
                    .map_err(|_| Error::Config(format!("line {line}: cannot parse {sec}.{key} = {v:?}")))
            })
            .transpose()
    }

    fn has_section(&self, sec: &str) -> bool {
        self.entries.keys().any(|(s, _)| s == sec)
    }
}

impl ExperimentConfig {
    /// Parses `text`; relative screen paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let r = Reader {
            entries: parse_entries(text)?,
        };
        let d = Self::default();
        let screen = if r.raw("screen", "path").is_some() {
            for k in ["rms_rad", "corr_um", "seed"] {
                if r.raw("screen", k).is_some() {
                    return Err(Error::Config(format!("screen.path excludes screen.{k}")));
                }
            }
            let p: String = r.get("screen", "path", String::new())?;
            ScreenSource::File(base.join(p))
        } else if r.has_section("screen") {
            ScreenSource::Synthetic {
                rms_rad: r.get("screen", "rms_rad", 4.0 * std::f64::consts::PI)?,
                corr_um: r.get("screen", "corr_um", 125.0)?,
                seed: r.get("screen", "seed", 1)?,
            }
        } else {
            ScreenSource::None
        };
        let geometry = match r.get("optics", "config", "a".to_string())?.to_ascii_lowercase().as_str() {
            "a" => Geometry::A,
            "b" => Geometry::B,
            other => return Err(Error::Config(format!("optics.config must be a or b, got {other:?}"))),
        };
        let n = r.get("grid", "n", d.n)?;
        let cfg = Self {
            n,
            pitch_um: r.get("grid", "pitch_um", d.pitch_um)?,
            lambda_nm: r.get("grid", "lambda_nm", d.lambda_nm)?,
            pump_fwhm_mm: r.get("pump", "fwhm_mm", d.pump_fwhm_mm)?,
            pump_wavelength_nm: r.get("pump", "wavelength_nm", d.pump_wavelength_nm)?,
            gain: r.get("gain", "g", d.gain)?,
            pm_fwhm_mrad: r.get("gain", "pm_fwhm_mrad", d.pm_fwhm_mrad)?,
            screen,
            geometry,
            f_relay_mm: r.get("optics", "f_relay_mm", d.f_relay_mm)?,
            f_fourier_mm: r.get("optics", "f_fourier_mm", d.f_fourier_mm)?,
            f_mm: r.get("optics", "f_mm", d.f_mm)?,
            collection: r.get("optics", "collection", d.collection)?,
            oracle_1d: r.get("optics", "oracle_1d", d.oracle_1d)?,
            camera_pixels: r.get("camera", "pixels", n)?,
            camera_pitch_um: r.opt("camera", "pitch_um")?,
            eta: r.get("camera", "eta", d.eta)?,
            read_sigma: r.get("camera", "read_sigma", d.read_sigma)?,
            threshold: r.get("camera", "threshold", d.threshold)?,
            pairs: r.get("run", "pairs", d.pairs)?,
            master_seed: r.get("run", "master_seed", d.master_seed)?,
            out_dir: r.opt::<String>("run", "out_dir")?.map(|p| base.join(p)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Simulation-plane pitch at the cameras: µm⁻¹·(λf) in A, µm in B.
    pub fn sim_camera_pitch_um(&self) -> f64 {
        match self.geometry {
            Geometry::A => self.lambda_nm * 1e-3 * self.f_fourier_mm * 1e3 / (self.n as f64 * self.pitch_um),
            Geometry::B => self.pitch_um,
        }
    }

    pub fn camera_bin(&self) -> usize {
        self.n / self.camera_pixels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 4 || !self.n.is_power_of_two() {
            return bad(format!("grid.n = {} must be a power of two ≥ 4", self.n));
        }
        for (name, v) in [
            ("grid.pitch_um", self.pitch_um),
            ("grid.lambda_nm", self.lambda_nm),
            ("pump.fwhm_mm", self.pump_fwhm_mm),
            ("pump.wavelength_nm", self.pump_wavelength_nm),
            ("gain.pm_fwhm_mrad", self.pm_fwhm_mrad),
            ("optics.f_relay_mm", self.f_relay_mm),
            ("optics.f_fourier_mm", self.f_fourier_mm),
            ("optics.f_mm", self.f_mm),
            ("camera.threshold", self.threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return bad(format!("gain.g = {} must be non-negative", self.gain));
        }
        for (name, v) in [("optics.collection", self.collection), ("camera.eta", self.eta)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        if !(self.read_sigma >= 0.0) {
            return bad("camera.read_sigma must be non-negative".into());
        }
        if self.camera_pixels == 0 || self.n % self.camera_pixels != 0 {
            return bad(format!("camera.pixels = {} must divide grid.n = {}", self.camera_pixels, self.n));
        }
        if let Some(p) = self.camera_pitch_um {
            let want = self.sim_camera_pitch_um() * self.camera_bin() as f64;
            if !((p - want).abs() <= 1e-6 * want) {
                return bad(format!("camera.pitch_um = {p} but the optics give {want} um per camera pixel"));
            }
        }
        if self.pairs == 0 {
            return Err(Error::Parameter("run.pairs must be at least 1".into()));
        }
        match &self.screen {
            ScreenSource::Synthetic { rms_rad, corr_um, .. } => {
                if !(*rms_rad >= 0.0 && *corr_um > 0.0) {
                    return bad("screen.rms_rad must be ≥ 0 and screen.corr_um > 0".into());
                }
            }
            ScreenSource::File(p) => {
                if !p.is_file() {
                    return bad(format!("screen file {} does not exist", p.display()));
                }
            }
            ScreenSource::None => {}
        }
        Ok(())
    }
}

/// Canonical form with every resolved value, suitable as a run snapshot.
impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[grid]\nn = {}\npitch_um = {}\nlambda_nm = {}", self.n, self.pitch_um, self.lambda_nm)?;
        writeln!(f, "\n[pump]\nfwhm_mm = {}\nwavelength_nm = {}", self.pump_fwhm_mm, self.pump_wavelength_nm)?;
        writeln!(f, "\n[gain]\ng = {}\npm_fwhm_mrad = {}", self.gain, self.pm_fwhm_mrad)?;
        match &self.screen {
            ScreenSource::None => {}
            ScreenSource::Synthetic { rms_rad, corr_um, seed } => {
                writeln!(f, "\n[screen]\nrms_rad = {rms_rad}\ncorr_um = {corr_um}\nseed = {seed}")?
            }
            ScreenSource::File(p) => writeln!(f, "\n[screen]\npath = \"{}\"", p.display())?,
        }
        let geometry = match self.geometry {
            Geometry::A => "a",
            Geometry::B => "b",
        };
        writeln!(
            f,
            "\n[optics]\nconfig = {geometry}\nf_relay_mm = {}\nf_fourier_mm = {}\nf_mm = {}\ncollection = {}\noracle_1d = {}",
            self.f_relay_mm, self.f_fourier_mm, self.f_mm, self.collection, self.oracle_1d
        )?;
        writeln!(f, "\n[camera]\npixels = {}", self.camera_pixels)?;
        if let Some(p) = self.camera_pitch_um {
            writeln!(f, "pitch_um = {p}")?;
        }
        writeln!(f, "eta = {}\nread_sigma = {}\nthreshold = {}", self.eta, self.read_sigma, self.threshold)?;
        writeln!(f, "\n[run]\npairs = {}\nmaster_seed = {}", self.pairs, self.master_seed)?;
        if let Some(d) = &self.out_dir {
            writeln!(f, "out_dir = \"{}\"", d.display())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("."))
    }

    #[test]
    fn empty_file_is_the_reference_setup() {
        assert_eq!(parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn reads_sections_and_comments() {
        let c = parse(
            "# run\n[grid]\nn = 256 # smaller\npitch_um=20\n\n[screen]\nrms_rad = 6.28\ncorr_um = 75\nseed = 9\n[optics]\nconfig = B\noracle_1d = true\n[camera]\npixels = 64\n",
        )
        .unwrap();
        assert_eq!(c.n, 256);
        assert_eq!(c.pitch_um, 20.0);
        assert_eq!(c.geometry, Geometry::B);
        assert!(c.oracle_1d);
        assert_eq!(c.camera_bin(), 4);
        assert_eq!(
            c.screen,
            ScreenSource::Synthetic {
                rms_rad: 6.28,
                corr_um: 75.0,
                seed: 9
            }
        );
    }

    #[test]
    fn unknown_keys_and_sections_are_errors() {
        assert!(matches!(parse("[grid]\npitch = 10\n"), Err(Error::Config(_))));
        assert!(matches!(parse("[lens]\nf = 1\n"), Err(Error::Config(_))));
        assert!(matches!(parse("n = 4\n"), Err(Error::Config(_))));
        assert!(matches!(parse("[grid]\nn = 64\nn = 64\n"), Err(Error::Config(_))));
        assert!(matches!(parse("[grid]\nn = sixty\n"), Err(Error::Config(_))));
        assert!(matches!(parse("[optics]\nconfig = c\n"), Err(Error::Config(_))));
    }

    #[test]
    fn camera_must_divide_grid() {
        assert!(parse("[camera]\npixels = 100\n").is_err());
        // 0.71 µm · 150 mm / 5120 µm ≈ 20.8 µm per simulated pixel
        let want = 0.71 * 150e3 / 5120.0 * 4.0;
        assert!(parse(&format!("[camera]\npixels = 128\npitch_um = {want}\n")).is_ok());
        assert!(parse("[camera]\npixels = 128\npitch_um = 16\n").is_err());
    }

    #[test]
    fn zero_pairs_is_a_parameter_error() {
        assert!(matches!(parse("[run]\npairs = 0\n"), Err(Error::Parameter(_))));
    }

    #[test]
    fn missing_screen_file_is_rejected() {
        assert!(parse("[screen]\npath = /nonexistent/screen.fstack\n").is_err());
        assert!(parse("[screen]\npath = x\nseed = 3\n").is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let c = parse("[screen]\nseed = 4\n[optics]\ncollection = 0.8\n[run]\npairs = 7\nout_dir = \"runs/x\"\n").unwrap();
        let again = ExperimentConfig::parse(&c.to_string(), Path::new("")).unwrap();
        assert_eq!(again, c);
    }
}
