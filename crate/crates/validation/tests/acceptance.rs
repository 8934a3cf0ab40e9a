//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the binary exits non-zero if any criterion fails.
//!
//! Pass criterion ids (`C3 C5`) as arguments to run a subset.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;

use biphoton::config::{ExperimentConfig, Geometry, ScreenSource};
use biphoton::correlator::{envelope_fwhm, envelope_sigma_px, schmidt_numbers, shot_corrected_contrast, speckle_contrast, Axis, CorrelationMap, CorrelationMode};
use biphoton::diffuser::{estimate_grain_fwhm, synthesize_screen, GrainEstimator, PhaseScreen};
use biphoton::emccd::{detect_hits, rotate180, PhotonImage};
use biphoton::exec::Mode;
use biphoton::fstack::FStack;
use biphoton::grid::{fft2_unitary, ifft2_unitary, Field2D, Grid};
use biphoton::image::{bin, envelope_corrected, pearson};
use biphoton::optics::{propagate_config_a, propagate_config_b, Branch, ConfigA, ConfigB};
use biphoton::oracle::{g2_config_a, g2_joint_table_config_b_1d, JointTable1D};
use biphoton::pairs::{emit_frame, emit_frames, EmissionSpec, NearFieldPairs};
use biphoton::pipeline::{self, FieldMapsA};
use biphoton::rng::{substream, Stream};
use biphoton::spdc::{GainSpec, PumpProfile, TwinSource};

const FIELD_REALIZATIONS: usize = 1200;
const FIELD_SEED: u64 = 2024;
const SCREEN_SEED: u64 = 11;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value / target - 1.0).abs() <= rel
}

fn config_a(corr_um: f64) -> ExperimentConfig {
    ExperimentConfig {
        screen: ScreenSource::Synthetic {
            rms_rad: 4.0 * PI,
            corr_um,
            seed: SCREEN_SEED,
        },
        ..ExperimentConfig::default()
    }
}

fn field_run(cfg: &ExperimentConfig, realizations: usize) -> (FieldMapsA, Vec<f64>, f64, Duration) {
    let source = pipeline::twin_source(cfg).unwrap();
    let screen = pipeline::full_screen(cfg).unwrap();
    let optics = pipeline::config_a(cfg, screen.clone()).unwrap();
    let t = Instant::now();
    let maps = pipeline::field_correlation_a(&source, &optics, FIELD_SEED, realizations, Mode::default()).unwrap();
    let elapsed = t.elapsed();
    let oracle = g2_config_a(&pipeline::pump(cfg).unwrap(), &screen, cfg.f_fourier_mm).unwrap().values;
    (maps, oracle, source.mean_pairs() * realizations as f64, elapsed)
}

/// Pearson correlation after binning both maps and dividing out their smooth
/// envelopes, over the oracle's envelope support.
fn matched_pearson(mc: &[f64], oracle: &[f64], n: usize, factor: usize) -> f64 {
    let m = n / factor;
    let (a, b) = (bin(mc, n, factor).unwrap(), bin(oracle, n, factor).unwrap());
    let (ca, _) = envelope_corrected(&a, m, 8.0, 0.1);
    let (cb, support) = envelope_corrected(&b, m, 8.0, 0.1);
    let (x, y): (Vec<f64>, Vec<f64>) = ca.iter().zip(&cb).zip(&support).filter(|(_, s)| **s).map(|((x, y), _)| (*x, *y)).unzip();
    pearson(&x, &y)
}

fn c1(run: &(FieldMapsA, Vec<f64>, f64, Duration)) -> Outcome {
    let (maps, oracle, pairs, elapsed) = run;
    let n = 512;
    let r = matched_pearson(&maps.correlation, oracle, n, 2);
    let raw = pearson(&maps.correlation, oracle);
    outcome(
        r >= 0.95 && *pairs >= 1e4 && elapsed.as_secs_f64() < 300.0,
        format!(
            "pearson {r:.4} (2x2 binned, envelope corrected; unbinned raw {raw:.4}), {} realizations, {pairs:.3e} pairs, {:.0} s",
            maps.realizations,
            elapsed.as_secs_f64()
        ),
    )
}

fn local_maxima(profile: &[f64], level: f64) -> usize {
    let top = profile.iter().cloned().fold(0.0, f64::max);
    (1..profile.len() - 1)
        .filter(|&i| profile[i] > level * top && profile[i] > profile[i - 1] && profile[i] >= profile[i + 1])
        .count()
}

fn grains_2d(table: &JointTable1D, level: f64) -> usize {
    let n = table.n;
    let top = table.values.iter().cloned().fold(0.0, f64::max);
    let mut count = 0;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let v = table.get(i, j);
            if v > level * top && (0..9).filter(|k| *k != 4).all(|k| v > table.get(i + k / 3 - 1, j + k % 3 - 1)) {
                count += 1;
            }
        }
    }
    count
}

fn c2() -> Outcome {
    let cfg = ExperimentConfig {
        geometry: Geometry::B,
        n: 256,
        pitch_um: 40.0,
        oracle_1d: true,
        screen: ScreenSource::Synthetic {
            rms_rad: 4.0 * PI,
            corr_um: 125.0,
            seed: 3,
        },
        ..ExperimentConfig::default()
    };
    let n = cfg.n;
    let slices = pipeline::Slices1D::from_config(&cfg).unwrap();
    let table = g2_joint_table_config_b_1d(&slices.model(), cfg.f_mm).unwrap();
    let model = NearFieldPairs::from_1d(&slices.model()).unwrap();
    let spec = EmissionSpec::new(1000.0, 1.0, 1.0).unwrap();
    let frames = emit_frames(&model, &spec, 7, 1010, Mode::default());
    let mut hist = vec![0.0; n * n];
    let mut samples = 0usize;
    for f in &frames {
        for (s, i) in f.signal.iter().zip(&f.idler) {
            hist[*s as usize * n + *i as usize] += 1.0;
            samples += 1;
        }
    }
    hist.iter_mut().for_each(|v| *v /= samples as f64);
    let tv = table.total_variation(&hist).unwrap();
    let diagonal: Vec<f64> = (0..n).map(|i| table.get(i, i)).collect();
    let along = local_maxima(&diagonal, 0.05);
    outcome(
        tv < 0.1 && samples >= 1_000_000 && along >= 20,
        format!(
            "tv {tv:.4} at {samples} samples; {along} grains along the diagonal ridge (need 20), {} grains in the whole table",
            grains_2d(&table, 0.05)
        ),
    )
}

/// Photon counts of the signal camera summed over `frames` detected frames.
fn single_arm_counts(cfg: &ExperimentConfig, frames: usize) -> Vec<f64> {
    let source = pipeline::twin_source(cfg).unwrap();
    let model = pipeline::pair_model(cfg, &source, &pipeline::full_screen(cfg).unwrap()).unwrap();
    let keep = cfg.eta * cfg.collection * cfg.collection;
    let spec = EmissionSpec::new(source.mean_pairs(), keep, keep).unwrap();
    let mut readout = pipeline::camera(cfg).unwrap();
    readout.quantum_efficiency = 1.0;
    let mut sum = vec![0.0; cfg.n * cfg.n];
    for f in 0..frames as u64 {
        let hits = emit_frame(model.as_ref(), &spec, cfg.master_seed, f);
        let img = detect_hits(&hits.signal, cfg.n, &readout, cfg.master_seed, 2 * f).unwrap();
        for (s, c) in sum.iter_mut().zip(&img.counts) {
            *s += *c as f64;
        }
    }
    sum
}

fn c3(run: &(FieldMapsA, Vec<f64>, f64, Duration)) -> Outcome {
    let map = speckle_contrast(&run.0.correlation, 512).unwrap();
    let frames = 1000;
    let counts = single_arm_counts(&config_a(125.0), frames);
    let single = shot_corrected_contrast(&counts, 512, GrainEstimator::default().envelope_sigma_px).unwrap();
    let raw = speckle_contrast(&counts, 512).unwrap();
    outcome(
        map >= 0.7 && single < 0.2,
        format!("correlation-map contrast {map:.3}; single-arm mean of {frames} frames {single:.3} after shot-noise removal ({raw:.3} raw)"),
    )
}

fn c4(run: &(FieldMapsA, Vec<f64>, f64, Duration)) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for corr in [75.0, 125.0, 250.0] {
        let cfg = config_a(corr);
        let conj = 1.0 / (cfg.n as f64 * cfg.pitch_um);
        let laser = pipeline::laser(&cfg).unwrap().frame(0).unwrap();
        let laser = estimate_grain_fwhm(&laser, cfg.n, conj);
        let map = if corr == 125.0 {
            estimate_grain_fwhm(&run.0.correlation, cfg.n, conj)
        } else {
            estimate_grain_fwhm(&field_run(&cfg, 400).0.correlation, cfg.n, conj)
        };
        let want = 1000.0 / corr;
        let show = |r: &biphoton::Result<f64>| match r {
            Ok(v) => format!("{v:.2}"),
            Err(e) => format!("n/a ({e})"),
        };
        for r in [&laser, &map] {
            pass &= matches!(r, Ok(v) if within(*v, want, 0.2));
        }
        parts.push(format!("{corr} um: laser {} map {} want {want:.2} /mm", show(&laser), show(&map)));
    }
    outcome(pass, parts.join("; "))
}

fn doc_run(collection: f64) -> (f64, usize) {
    let cfg = ExperimentConfig {
        collection,
        pairs: 100,
        master_seed: 5,
        ..ExperimentConfig::default()
    };
    let sim = pipeline::simulate(&cfg, Mode::default()).unwrap();
    let s = FStack::from_images(&sim.signal).unwrap();
    let i = FStack::from_images(&sim.idler).unwrap();
    let (report, _) = pipeline::analyze(&s, &i, sim.mode, sim.scale, Mode::default()).unwrap();
    (report.doc, sim.coincident)
}

fn c5() -> Outcome {
    let (clear, pairs) = doc_run(1.0);
    let (lossy, _) = doc_run(0.8);
    let drop = 1.0 - lossy / clear;
    outcome(
        (clear - 0.26).abs() <= 0.03 && pairs >= 10_000 && drop >= 0.15,
        format!("doc {clear:.3} over {pairs} detected pairs; collection 0.8 gives {lossy:.3} ({:.0} % drop, detected-pair fraction predicts 36 %)", 100.0 * drop),
    )
}

fn c6() -> Outcome {
    let (vx, vy, _) = schmidt_numbers(171.0, 72.0, 5.00e-5, 1.05e-5).unwrap();
    let v_quoted = (29.0f64 * 347.0).sqrt();
    outcome(
        (vx - 29.0).abs() <= 1.0 && (v_quoted - 100.0).abs() <= 5.0 && (vy - 330.7).abs() <= 0.5,
        format!("Vx {vx:.2}, V from quoted Vx, Vy {v_quoted:.1}, Vy from variances {vy:.2} (quoted 347, {:.1} % off)", 100.0 * (1.0 - vy / 347.0)),
    )
}

/// Histogram of sampled pairs over `x_i - x_s` as a near-mode map: the
/// accidental-free limit of the frame correlation map.
fn coincidence_map(cfg: &ExperimentConfig, pairs: usize) -> CorrelationMap {
    let n = cfg.n;
    let m = 2 * n;
    let source = pipeline::twin_source(cfg).unwrap();
    let model = pipeline::pair_model(cfg, &source, &pipeline::full_screen(cfg).unwrap()).unwrap();
    let mut rng = substream(cfg.master_seed, Stream::Pairs, 0);
    let mut values = vec![0.0; m * m];
    for _ in 0..pairs {
        let (s, i) = model.sample_pair(&mut rng);
        let dx = i % n + n - s % n;
        let dy = i / n + n - s / n;
        values[dy * m + dx] += 1.0;
    }
    CorrelationMap {
        m,
        background: vec![0.0; m * m],
        values,
        mode: CorrelationMode::Near,
        scale: pipeline::camera_scale(cfg),
        frames: 1,
        halves: None,
    }
}

fn c7() -> Outcome {
    let cfg = ExperimentConfig {
        geometry: Geometry::B,
        screen: ScreenSource::Synthetic {
            rms_rad: 4.0 * PI,
            corr_um: 125.0,
            seed: SCREEN_SEED,
        },
        master_seed: 5,
        ..ExperimentConfig::default()
    };
    let pairs = 4000;
    let map = coincidence_map(&cfg, pairs);
    let smooth = envelope_sigma_px(map.m);
    let fx = envelope_fwhm(&map, Axis::X, smooth);
    let fy = envelope_fwhm(&map, Axis::Y, smooth);
    let pass = [&fx, &fy].iter().all(|r| matches!(r, Ok(v) if within(*v, 1.6, 0.25)));
    let show = |r: &biphoton::Result<f64>| match r {
        Ok(v) => format!("{v:.2}"),
        Err(e) => format!("n/a ({e})"),
    };
    outcome(
        pass,
        format!(
            "envelope FWHM x {} y {} mm from {pairs} coincidences (want 1.6 mm +-25 %, field of view {:.2} mm)",
            show(&fx),
            show(&fy),
            cfg.n as f64 * cfg.pitch_um / 1000.0
        ),
    )
}

fn random_field(grid: Grid, seed: u64) -> Field2D {
    let s = synthesize_screen(grid, 3.0, 4.0 * grid.pitch_um(), seed).unwrap();
    let values = s.phase.iter().enumerate().map(|(k, p)| Complex64::from_polar(1.0 + (k % 7) as f64 * 0.1, *p)).collect();
    Field2D::from_values(grid, values).unwrap()
}

fn shift(values: &[f64], n: usize, dx: usize, dy: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[((y + dy) % n) * n + (x + dx) % n] = values[y * n + x];
        }
    }
    out
}

fn stack_bytes(images: &[PhotonImage]) -> Vec<u8> {
    let mut buf = Vec::new();
    FStack::from_images(images).unwrap().write_to(&mut buf).unwrap();
    buf
}

fn c8() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let mut check = |name: &str, ok: bool, value: String| {
        pass &= ok;
        notes.push(format!("{name} {value}{}", if ok { "" } else { " (fail)" }));
    };

    let grid = Grid::new(128, 10.0, 710.0).unwrap();
    let f = random_field(grid, 1);
    let spectrum = fft2_unitary(&f);
    let back = ifft2_unitary(&spectrum);
    let parseval = (spectrum.power() / f.power() - 1.0).abs();
    let round = back.values.iter().zip(&f.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / f.max_abs();
    check("fft", parseval < 1e-10 && round < 1e-10, format!("{:.1e}/{:.1e}", parseval, round));

    let screen = synthesize_screen(grid, 4.0 * PI, 125.0, 2).unwrap();
    let a = propagate_config_a(&f, &ConfigA::reference(screen.clone())).unwrap();
    let dg = ConfigB::diffuser_grid(&grid, 150.0).unwrap();
    let (ps, pi) = (synthesize_screen(dg, 4.0 * PI, 500.0, 3).unwrap(), synthesize_screen(dg, 4.0 * PI, 500.0, 4).unwrap());
    let b = propagate_config_b(&f, Branch::Idler, &ConfigB::from_screens(grid, 150.0, &ps, &pi, 1.0).unwrap()).unwrap();
    let loss = [a.power(), b.power()].iter().map(|p| (p / f.power() - 1.0).abs()).fold(0.0, f64::max);
    check("phase-only power", loss < 1e-12, format!("{loss:.1e}"));

    let pump = PumpProfile::gaussian(Grid::new(512, 10.0, 710.0).unwrap(), 1.6).unwrap();
    let mut worst: f64 = 0.0;
    for g in [0.38, 1.0, 2.0] {
        let src = TwinSource::new(&pump, &GainSpec::new(g, 47.0).unwrap()).unwrap();
        let (c, s) = src.coefficients();
        worst = c.iter().zip(s).map(|(c, s)| (c * c - s * s - 1.0).abs()).fold(worst, f64::max);
    }
    check("cosh^2-sinh^2", worst < 1e-12, format!("{worst:.1e}"));

    let img = PhotonImage {
        n: 64,
        counts: (0..64 * 64).map(|k| ((k * 7919) % 13) as u16).collect(),
        frame: 0,
        seed: 0,
    };
    check("rotate180", rotate180(&rotate180(&img)) == img && rotate180(&img) != img, "exact".into());

    let n = 256;
    let g = Grid::new(n, 20.0, 710.0).unwrap();
    let pump = PumpProfile::gaussian(g, 1.6).unwrap();
    let screen = synthesize_screen(g, 4.0 * PI, 125.0, 9).unwrap();
    let base = g2_config_a(&pump, &screen, 150.0).unwrap().values;
    let mut moved = pump.clone();
    moved.amplitude = shift(&pump.amplitude, n, 37, 201);
    let moved_screen = PhaseScreen::from_phase(g, shift(&screen.phase, n, 37, 201)).unwrap();
    let shifted = g2_config_a(&moved, &moved_screen, 150.0).unwrap().values;
    let top = base.iter().cloned().fold(0.0, f64::max);
    let diff = base.iter().zip(&shifted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / top;
    check("far translation", diff < 1e-12, format!("{diff:.1e}"));

    let mut same = true;
    for geometry in [Geometry::A, Geometry::B] {
        let cfg = ExperimentConfig {
            geometry,
            n: 64,
            camera_pixels: 64,
            pitch_um: 40.0,
            pump_fwhm_mm: 0.8,
            gain: 1.0,
            pairs: 12,
            screen: ScreenSource::Synthetic {
                rms_rad: 4.0 * PI,
                corr_um: 250.0,
                seed: 4,
            },
            ..ExperimentConfig::default()
        };
        let serial = pipeline::simulate(&cfg, Mode::Serial).unwrap();
        let parallel = pipeline::simulate(&cfg, Mode::Parallel).unwrap();
        let again = pipeline::simulate(&cfg, Mode::Serial).unwrap();
        let bytes = |s: &pipeline::Simulation| (stack_bytes(&s.signal), stack_bytes(&s.idler));
        same &= bytes(&serial) == bytes(&parallel) && bytes(&serial) == bytes(&again) && serial.coincident > 0;
    }
    check("reruns", same, "byte-identical".into());

    outcome(pass, notes.join(", "))
}

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('C')).collect();
    let run = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w == id);
    // C1, C3 and C4 share one field-route run
    let field = ["C1", "C3", "C4"].iter().any(|id| run(id)).then(|| field_run(&config_a(125.0), FIELD_REALIZATIONS));
    let field_run_a = || field.as_ref().expect("field run is computed when needed");
    let mut failed = 0;
    let mut report = |id: &str, o: Outcome| {
        println!("{id} {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    if run("C1") {
        report("C1", c1(field_run_a()));
    }
    if run("C2") {
        report("C2", c2());
    }
    if run("C3") {
        report("C3", c3(field_run_a()));
    }
    if run("C4") {
        report("C4", c4(field_run_a()));
    }
    if run("C5") {
        report("C5", c5());
    }
    if run("C6") {
        report("C6", c6());
    }
    if run("C7") {
        report("C7", c7());
    }
    if run("C8") {
        report("C8", c8());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
