//! End-to-end runs driven by an [`ExperimentConfig`]: simulation of twin
//! frame stacks, analysis, oracle maps and laser speckle. The command-line
//! tool is a thin layer over these functions.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, Geometry, ScreenSource};
use crate::correlator::{cross_correlate_stack_with, CorrelationMap, CorrelationMode, CorrelationReport, FieldCorrelator, PairStack};
use crate::diffuser::{laser_speckle_farfield, split_screen, synthesize_screen, PhaseScreen};
use crate::emccd::{detect_hits, CameraSpec, PhotonImage};
use crate::error::{Error, Result};
use crate::exec::{chunked_fold, Mode};
use crate::fstack::{FStack, FrameData};
use crate::grid::Grid;
use crate::optics::{propagate_config_a, ConfigA, ConfigB};
use crate::oracle::{g2_config_a, g2_joint_table_config_b_1d, ConfigB1D};
use crate::pairs::{emit_frames, EmissionSpec, FarFieldPairs, NearFieldPairs, PairModel};
use crate::spdc::{FluxAccumulator, GainSpec, PumpProfile, TwinSource};

pub const MANIFEST: &str = "manifest.txt";
pub const SNAPSHOT: &str = "config.snapshot";

/// Crystal-plane grid of a configuration.
pub fn crystal_grid(cfg: &ExperimentConfig) -> Result<Grid> {
    Grid::new(cfg.n, cfg.pitch_um, cfg.lambda_nm)
}

pub fn pump(cfg: &ExperimentConfig) -> Result<PumpProfile> {
    PumpProfile::gaussian(crystal_grid(cfg)?, cfg.pump_fwhm_mm)
}

pub fn twin_source(cfg: &ExperimentConfig) -> Result<TwinSource> {
    TwinSource::new(&pump(cfg)?, &GainSpec::new(cfg.gain, cfg.pm_fwhm_mrad)?)
}

/// The screen as placed in the setup: `n × n` on the crystal grid (A), or
/// `2n × 2n` on the Fourier-plane grid (B) from which both arms are cut.
pub fn full_screen(cfg: &ExperimentConfig) -> Result<PhaseScreen> {
    let crystal = crystal_grid(cfg)?;
    let grid = match cfg.geometry {
        Geometry::A => crystal,
        Geometry::B => Grid::new(2 * cfg.n, ConfigB::diffuser_grid(&crystal, cfg.f_mm)?.pitch_um(), cfg.lambda_nm)?,
    };
    match &cfg.screen {
        ScreenSource::None => Ok(PhaseScreen::flat(grid)),
        ScreenSource::Synthetic { rms_rad, corr_um, seed } => synthesize_screen(grid, *rms_rad, *corr_um, *seed),
        ScreenSource::File(path) => {
            let stack = FStack::read(path)?;
            if stack.width != grid.n() || stack.height != grid.n() || stack.frames != 1 {
                return Err(Error::Config(format!(
                    "screen file {} is {}x{}x{}, expected one {}x{} frame",
                    path.display(),
                    stack.width,
                    stack.height,
                    stack.frames,
                    grid.n(),
                    grid.n()
                )));
            }
            PhaseScreen::from_phase(grid, stack.frame(0)?)
        }
    }
}

pub fn config_a(cfg: &ExperimentConfig, screen: PhaseScreen) -> Result<ConfigA> {
    ConfigA::new(screen, cfg.f_relay_mm, cfg.f_fourier_mm, cfg.collection)
}

pub fn config_b(cfg: &ExperimentConfig, full: &PhaseScreen) -> Result<ConfigB> {
    let (s, i) = split_screen(full)?;
    ConfigB::from_screens(crystal_grid(cfg)?, cfg.f_mm, &s, &i, cfg.collection)
}

pub fn camera(cfg: &ExperimentConfig) -> Result<CameraSpec> {
    let pitch = cfg.sim_camera_pitch_um() * cfg.camera_bin() as f64;
    let mut spec = CameraSpec::new(cfg.camera_pixels, pitch, cfg.eta)?;
    spec.read_noise_sigma = cfg.read_sigma;
    spec.threshold = cfg.threshold;
    spec.validate()?;
    Ok(spec)
}

pub fn correlation_mode(cfg: &ExperimentConfig) -> CorrelationMode {
    match cfg.geometry {
        Geometry::A => CorrelationMode::Far,
        Geometry::B => CorrelationMode::Near,
    }
}

/// Map units per camera pixel: µm⁻¹ of spatial frequency (A) or µm (B).
pub fn camera_scale(cfg: &ExperimentConfig) -> f64 {
    let bin = cfg.camera_bin() as f64;
    match cfg.geometry {
        Geometry::A => bin / (cfg.n as f64 * cfg.pitch_um),
        Geometry::B => bin * cfg.pitch_um,
    }
}

pub fn pair_model(cfg: &ExperimentConfig, source: &TwinSource, screen: &PhaseScreen) -> Result<Box<dyn PairModel>> {
    Ok(match cfg.geometry {
        Geometry::A => Box::new(FarFieldPairs::from_source(source, screen)?),
        Geometry::B => Box::new(NearFieldPairs::from_source(source, &config_b(cfg, screen)?)?),
    })
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub signal: Vec<PhotonImage>,
    pub idler: Vec<PhotonImage>,
    pub screen: PhaseScreen,
    pub mean_pairs: f64,
    pub emitted: usize,
    pub coincident: usize,
    pub mode: CorrelationMode,
    pub scale: f64,
}

impl Simulation {
    pub fn stack(&self) -> Result<PairStack> {
        PairStack::new(self.signal.clone(), self.idler.clone(), self.mode, self.scale)
    }
}

/// Twin frame stacks for `cfg.pairs` frame pairs.
pub fn simulate(cfg: &ExperimentConfig, mode: Mode) -> Result<Simulation> {
    cfg.validate()?;
    let source = twin_source(cfg)?;
    let screen = full_screen(cfg)?;
    let model = pair_model(cfg, &source, &screen)?;
    let keep = cfg.eta * cfg.collection * cfg.collection;
    let spec = EmissionSpec::new(source.mean_pairs(), keep, keep)?;
    let hits = emit_frames(model.as_ref(), &spec, cfg.master_seed, cfg.pairs, mode);
    let cam = camera(cfg)?;
    // every loss sits in the emission thinning; the camera only bins and reads out
    let mut readout = cam.clone();
    readout.quantum_efficiency = 1.0;
    let mut signal = Vec::with_capacity(hits.len());
    let mut idler = Vec::with_capacity(hits.len());
    for (f, h) in hits.iter().enumerate() {
        let f = f as u64;
        let mut s = detect_hits(&h.signal, cfg.n, &readout, cfg.master_seed, 2 * f)?;
        let mut i = detect_hits(&h.idler, cfg.n, &readout, cfg.master_seed, 2 * f + 1)?;
        s.frame = f;
        i.frame = f;
        signal.push(s);
        idler.push(i);
    }
    Ok(Simulation {
        signal,
        idler,
        screen,
        mean_pairs: spec.mean_pairs,
        emitted: hits.iter().map(|h| h.emitted).sum(),
        coincident: hits.iter().map(|h| h.coincident).sum(),
        mode: correlation_mode(cfg),
        scale: camera_scale(cfg),
    })
}

fn screen_stack(screen: &PhaseScreen) -> Result<FStack> {
    FStack::real_map(&screen.phase, screen.grid.n(), screen.grid.n())
}

pub fn manifest_text(cfg: &ExperimentConfig, sim: &Simulation) -> String {
    format!(
        "master_seed = {}\npairs = {}\nmode = {}\nscale = {}\nmean_pairs_per_frame = {}\nemitted_pairs = {}\ncoincident_pairs = {}\nfiles = signal.fstack idler.fstack screen.fstack {SNAPSHOT}\n",
        cfg.master_seed,
        cfg.pairs,
        sim.mode.as_str(),
        sim.scale,
        sim.mean_pairs,
        sim.emitted,
        sim.coincident
    )
}

/// Writes the stacks, the screen, a config snapshot and the manifest.
pub fn write_simulation(cfg: &ExperimentConfig, sim: &Simulation, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    FStack::from_images(&sim.signal)?.write(&dir.join("signal.fstack"))?;
    FStack::from_images(&sim.idler)?.write(&dir.join("idler.fstack"))?;
    screen_stack(&sim.screen)?.write(&dir.join("screen.fstack"))?;
    fs::write(dir.join(SNAPSHOT), cfg.to_string())?;
    fs::write(dir.join(MANIFEST), manifest_text(cfg, sim))?;
    Ok(())
}

/// `(mode, scale)` recorded in a manifest.
pub fn read_manifest(path: &Path) -> Result<(CorrelationMode, f64)> {
    let text = fs::read_to_string(path)?;
    let field = |key: &str| {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim().to_string())
            .ok_or_else(|| Error::Format(format!("manifest lacks {key}")))
    };
    let mode = field("mode")?.parse()?;
    let scale = field("scale")?
        .parse()
        .map_err(|_| Error::Format("manifest scale is not a number".into()))?;
    Ok((mode, scale))
}

pub fn manifest_beside(signal: &Path) -> PathBuf {
    signal.parent().unwrap_or(Path::new(".")).join(MANIFEST)
}

/// Correlation map and report of two frame stacks.
pub fn analyze(signal: &FStack, idler: &FStack, mode: CorrelationMode, scale: f64, exec: Mode) -> Result<(CorrelationReport, CorrelationMap)> {
    if signal.frames != idler.frames {
        return Err(Error::Parameter(format!("{} signal frames but {} idler frames", signal.frames, idler.frames)));
    }
    let stack = PairStack::new(signal.to_images(0)?, idler.to_images(0)?, mode, scale)?;
    let map = cross_correlate_stack_with(&stack, exec)?;
    Ok((CorrelationReport::measure(&stack, &map), map))
}

/// Normalized G² map: sum coordinate in A, 1-D joint table in B.
pub fn oracle(cfg: &ExperimentConfig) -> Result<FStack> {
    match cfg.geometry {
        Geometry::A => {
            let map = g2_config_a(&pump(cfg)?, &full_screen(cfg)?, cfg.f_fourier_mm)?;
            FStack::real_map(&map.values, cfg.n, cfg.n)
        }
        Geometry::B => {
            if !cfg.oracle_1d {
                return Err(Error::Config("configuration b has a 1-D oracle only; set optics.oracle_1d = true".into()));
            }
            let table = oracle_table_1d(cfg)?;
            FStack::new(cfg.n, cfg.n, 1, FrameData::F32(table.values.iter().map(|&v| v as f32).collect()))
        }
    }
}

/// Central rows of pump, phase matching and both screen regions.
pub struct Slices1D {
    pub grid: Grid,
    pub pump: Vec<f64>,
    pub phase_signal: Vec<f64>,
    pub phase_idler: Vec<f64>,
    pub phase_matching: Vec<f64>,
}

impl Slices1D {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let n = cfg.n;
        let row = |v: &[f64]| v[(n / 2) * n..(n / 2 + 1) * n].to_vec();
        let source = twin_source(cfg)?;
        let (s, i) = split_screen(&full_screen(cfg)?)?;
        Ok(Self {
            grid: crystal_grid(cfg)?,
            pump: row(&pump(cfg)?.amplitude),
            phase_signal: row(&s.phase),
            phase_idler: row(&i.phase),
            phase_matching: row(source.phase_matching()),
        })
    }

    pub fn model(&self) -> ConfigB1D<'_> {
        ConfigB1D {
            grid: self.grid,
            pump: &self.pump,
            phase_signal: &self.phase_signal,
            phase_idler: &self.phase_idler,
            phase_matching: Some(&self.phase_matching),
        }
    }
}

pub fn oracle_table_1d(cfg: &ExperimentConfig) -> Result<crate::oracle::JointTable1D> {
    let slices = Slices1D::from_config(cfg)?;
    g2_joint_table_config_b_1d(&slices.model(), cfg.f_mm)
}

/// Far-field speckle of a coherent beam with the pump's profile through the
/// configuration-A screen.
pub fn laser(cfg: &ExperimentConfig) -> Result<FStack> {
    let beam = pump(cfg)?.as_field();
    let intensity = laser_speckle_farfield(&full_screen(cfg)?, &beam)?;
    FStack::real_map(&intensity, cfg.n, cfg.n)
}

/// Field-route Monte Carlo maps of configuration A.
pub struct FieldMapsA {
    /// Sum-coordinate map `|⟨A_s ⊛ A_i⟩|²`, unit sum.
    pub correlation: Vec<f64>,
    /// Ensemble-mean signal photon flux at the camera.
    pub signal_flux: Vec<f64>,
    pub realizations: usize,
}

/// Propagates `realizations` twin-field realizations to the far field and
/// accumulates the pair correlation and the signal flux.
pub fn field_correlation_a(source: &TwinSource, optics: &ConfigA, seed: u64, realizations: usize, mode: Mode) -> Result<FieldMapsA> {
    let n = source.grid().n();
    let acc = chunked_fold(
        realizations,
        8,
        mode,
        || (FieldCorrelator::new(n), FluxAccumulator::new(n * n), None::<Error>),
        |(fc, flux, err), r| {
            if err.is_some() {
                return;
            }
            let fields = source.realize(seed, r as u64);
            let step = propagate_config_a(&fields.signal, optics)
                .and_then(|s| Ok((s, propagate_config_a(&fields.idler, optics)?)))
                .and_then(|(s, i)| {
                    flux.add(&s.values);
                    fc.add(&s.values, &i.values)
                });
            if let Err(e) = step {
                *err = Some(e);
            }
        },
        |a, b| {
            a.0.merge(b.0);
            a.1.merge(b.1);
            if a.2.is_none() {
                a.2 = b.2;
            }
        },
    );
    if let Some(e) = acc.2 {
        return Err(e);
    }
    Ok(FieldMapsA {
        correlation: acc.0.probability_map()?,
        signal_flux: acc.1.photon_flux()?,
        realizations,
    })
}
