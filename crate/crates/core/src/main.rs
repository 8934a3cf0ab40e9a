use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use biphoton::config::{ExperimentConfig, ScreenSource};
use biphoton::correlator::CorrelationMode;
use biphoton::diffuser::{estimate_grain_fwhm, synthesize_screen};
use biphoton::exec::Mode;
use biphoton::fstack::{write_pgm, FStack};
use biphoton::grid::Grid;
use biphoton::pipeline;
use biphoton::Error;

#[derive(Parser)]
#[command(name = "biphoton", version, about = "Two-photon speckle simulator and twin-image analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random phase screen (radians) as a single-frame FSTACK.
    GenDiffuser {
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 10.0)]
        pitch_um: f64,
        #[arg(long, default_value_t = 4.0 * std::f64::consts::PI)]
        rms_rad: f64,
        #[arg(long, default_value_t = 125.0)]
        corr_um: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        export_pgm: Option<PathBuf>,
    },
    /// Simulate twin frame stacks for a configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides run.out_dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides run.master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Exports the first signal frame.
        #[arg(long)]
        export_pgm: Option<PathBuf>,
    },
    /// Cross-correlate twin stacks and report entanglement metrics.
    Analyze {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        idler: PathBuf,
        /// Defaults to the configuration geometry or the run manifest.
        #[arg(long)]
        mode: Option<CorrelationMode>,
        /// Calibrates the map from this configuration's optics and camera.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Correlation map output (single-frame FSTACK).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        export_pgm: Option<PathBuf>,
    },
    /// Evaluate the closed-form two-photon correlation map.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides screen.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        export_pgm: Option<PathBuf>,
    },
    /// Far-field speckle of a coherent beam through the configured screen.
    Laser {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides screen.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        export_pgm: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format(_) => 3,
        _ => 2,
    }
}

fn load(path: &Path, screen_seed: Option<u64>) -> biphoton::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let (Some(seed), ScreenSource::Synthetic { seed: s, .. }) = (screen_seed, &mut cfg.screen) {
        *s = seed;
    }
    Ok(cfg)
}

fn export(stack: &FStack, pgm: &Option<PathBuf>) -> biphoton::Result<()> {
    match pgm {
        Some(p) => write_pgm(stack, 0, p),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> biphoton::Result<()> {
    match cli.command {
        Command::GenDiffuser {
            n,
            pitch_um,
            rms_rad,
            corr_um,
            seed,
            out,
            export_pgm,
        } => {
            let screen = synthesize_screen(Grid::new(n, pitch_um, 710.0)?, rms_rad, corr_um, seed)?;
            let stack = FStack::real_map(&screen.phase, n, n)?;
            stack.write(&out)?;
            export(&stack, &export_pgm)
        }
        Command::Simulate {
            config,
            out_dir,
            seed,
            export_pgm,
        } => {
            let mut cfg = load(&config, None)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let dir = out_dir
                .or_else(|| cfg.out_dir.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out-dir or set run.out_dir".into()))?;
            let sim = pipeline::simulate(&cfg, Mode::default())?;
            pipeline::write_simulation(&cfg, &sim, &dir)?;
            eprintln!(
                "{} frame pairs, {:.1} pairs per frame emitted, {} coincident pairs detected -> {}",
                sim.signal.len(),
                sim.mean_pairs,
                sim.coincident,
                dir.display()
            );
            export(&FStack::from_images(&sim.signal[..1])?, &export_pgm)
        }
        Command::Analyze {
            signal,
            idler,
            mode,
            config,
            report,
            out,
            export_pgm,
        } => {
            let (default_mode, scale) = match &config {
                Some(c) => {
                    let cfg = ExperimentConfig::load(c)?;
                    (Some(pipeline::correlation_mode(&cfg)), pipeline::camera_scale(&cfg))
                }
                None => {
                    let manifest = pipeline::manifest_beside(&signal);
                    if manifest.is_file() {
                        let (m, s) = pipeline::read_manifest(&manifest)?;
                        (Some(m), s)
                    } else {
                        (None, 1.0)
                    }
                }
            };
            let mode = mode
                .or(default_mode)
                .ok_or_else(|| Error::Parameter("--mode is required without a config or manifest".into()))?;
            let s = FStack::read(&signal)?;
            let i = FStack::read(&idler)?;
            let (rep, map) = pipeline::analyze(&s, &i, mode, scale, Mode::default())?;
            let csv = rep.to_csv();
            std::fs::write(&report, &csv)?;
            print!("{csv}");
            let stack = FStack::real_map(&map.values, map.m, map.m)?;
            if let Some(p) = out {
                stack.write(&p)?;
            }
            export(&stack, &export_pgm)
        }
        Command::Oracle {
            config,
            out,
            seed,
            export_pgm,
        } => {
            let cfg = load(&config, seed)?;
            let stack = pipeline::oracle(&cfg)?;
            stack.write(&out)?;
            export(&stack, &export_pgm)
        }
        Command::Laser {
            config,
            out,
            seed,
            export_pgm,
        } => {
            let cfg = load(&config, seed)?;
            let stack = pipeline::laser(&cfg)?;
            stack.write(&out)?;
            let values = stack.frame(0)?;
            match estimate_grain_fwhm(&values, cfg.n, 1.0 / (cfg.n as f64 * cfg.pitch_um)) {
                Ok(g) => println!("grain_fwhm_per_mm = {g}"),
                Err(e) => println!("grain_fwhm_per_mm = nan  # {e}"),
            }
            export(&stack, &export_pgm)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
