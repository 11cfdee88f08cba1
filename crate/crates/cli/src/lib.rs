//! `twinbeam` command line: configuration, simulation, analysis and sweeps.
//!
//! Every subcommand writes its outputs plus a `*.manifest.json` run record
//! holding the config snapshot, seed, version, stage timings and SHA-256
//! checksums of the emitted files.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use twinbeam_core::analysis::{
    measure_counting, measure_intensity, width_vs_power_sweep, width_vs_waist_sweep, AxisWidth, CountingOptions,
    IntensityOptions, PowerRow, SweepOptions, WaistRow, WidthEstimate,
};
use twinbeam_core::config::{validate, ExperimentConfig, Layout, Regime};
use twinbeam_core::detector::{extract_events, EventList, Frame};
use twinbeam_core::io::{self, num, Table};
use twinbeam_core::pipeline::{CountingSimulator, IntensitySimulator};
use twinbeam_core::pm::predict_widths;
use twinbeam_core::synth::{gain_to_targets, make_speckle_model};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Frames loaded or generated per parallel batch; bounds peak memory.
const BATCH: usize = 256;

/// Inclusive linear range written `start:stop:count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.start + step * i as f64).collect()
    }
}

impl FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, n] = parts[..] else {
            return Err(format!("expected start:stop:count, got '{s}'"));
        };
        let start: f64 = a.parse().map_err(|_| format!("bad range start '{a}'"))?;
        let stop: f64 = b.parse().map_err(|_| format!("bad range stop '{b}'"))?;
        let count: usize = n.parse().map_err(|_| format!("bad range count '{n}'"))?;
        if count == 0 || !start.is_finite() || !stop.is_finite() {
            return Err(format!("range '{s}' must be finite with count >= 1"));
        }
        Ok(Self { start, stop, count })
    }
}

#[derive(Debug, Parser)]
#[command(name = "twinbeam", version, about = "Twin-beam spatial correlation simulator and analyser")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config file; defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Square sensor edge in pixels, replacing the configured sensor.
    #[arg(long, global = true)]
    pub sensor: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Phase-matching widths, optionally over a pump-waist range.
    Predict {
        /// Horizontal waist range in meters, `start:stop:count`.
        #[arg(long)]
        waist_sweep: Option<Range>,
        #[arg(long)]
        widen_factor: Option<f64>,
        #[arg(long, default_value = "predict.csv")]
        out: PathBuf,
    },
    /// Simulated detector frames written to a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        /// `counting` or `intensity`; defaults to the configured regime.
        #[arg(long)]
        regime: Option<Regime>,
        /// Also write an 8-bit graymap preview per frame.
        #[arg(long)]
        pgm: bool,
    },
    /// Coincidence histogram, XC width and efficiencies of a counting stack.
    AnalyzeCounting {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value = "counting.csv")]
        out: PathBuf,
    },
    /// AC and XC widths of an intensity stack.
    AnalyzeIntensity {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value = "intensity.csv")]
        out: PathBuf,
    },
    /// AC and XC widths against pump power.
    SweepPower {
        /// Pump powers in watts, `start:stop:count`.
        #[arg(long, default_value = "0.015:0.05:8")]
        powers: Range,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        widen_factor: Option<f64>,
        #[arg(long, default_value = "sweep_power.csv")]
        out: PathBuf,
    },
    /// AC and XC widths against the horizontal pump waist.
    SweepWaist {
        /// Horizontal waists in meters, `start:stop:count`.
        #[arg(long, default_value = "0.00015:0.00045:7")]
        waists: Range,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        widen_factor: Option<f64>,
        #[arg(long, default_value = "sweep_waist.csv")]
        out: PathBuf,
    },
    /// Widths against pump power over 15–50 mW.
    ReproduceFig3 {
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value = "fig3.csv")]
        out: PathBuf,
    },
    /// Widths against pump waist, plain and with a doubled pump spectrum.
    ReproduceFig4 {
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value = "fig4.csv")]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Predict { .. } => "predict",
            Command::Synth { .. } => "synth",
            Command::AnalyzeCounting { .. } => "analyze-counting",
            Command::AnalyzeIntensity { .. } => "analyze-intensity",
            Command::SweepPower { .. } => "sweep-power",
            Command::SweepWaist { .. } => "sweep-waist",
            Command::ReproduceFig3 { .. } => "reproduce-fig3",
            Command::ReproduceFig4 { .. } => "reproduce-fig4",
        }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Stage(String),
}

impl From<twinbeam_core::error::Error> for CliError {
    fn from(e: twinbeam_core::error::Error) -> Self {
        CliError::Stage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Stage(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Record of one run. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config: String,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    fn new(command: &str, args: &[String], config: &ExperimentConfig) -> Self {
        Self {
            tool: "twinbeam".into(),
            version: VERSION.into(),
            command: command.into(),
            args: args.to_vec(),
            seed: config.rng_seed,
            config: config.to_config_string(),
            timings: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let t = Instant::now();
        info!("{stage}: started");
        let out = f()?;
        let seconds = t.elapsed().as_secs_f64();
        info!("{stage}: {seconds:.2} s");
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds,
        });
        Ok(out)
    }

    /// Records a file already written under `base`.
    fn record(&mut self, base: &Path, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path)?;
        let rel = path.strip_prefix(base).unwrap_or(path);
        self.outputs.push(OutputFile {
            path: rel.to_string_lossy().into_owned(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Stage(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Manifest path for a single output file: `results.csv` →
/// `results.manifest.json`.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

/// Checks every recorded checksum against the files on disk.
pub fn verify_manifest(path: &Path) -> Result<bool, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let base = path.parent().unwrap_or(Path::new("."));
    for o in &m.outputs {
        let bytes = fs::read(base.join(&o.path)).map_err(|e| format!("{}: {e}", o.path))?;
        if sha256_hex(&bytes) != o.sha256 || bytes.len() as u64 != o.bytes {
            return Ok(false);
        }
    }
    Ok(!m.outputs.is_empty())
}

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut c = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    c.apply_env()?;
    if let Some(n) = common.sensor {
        if n < 64 {
            return Err(CliError::Usage(format!("--sensor must be at least 64, got {n}")));
        }
        c = c.with_sensor(n);
    }
    validate(&c).into_result()?;
    Ok(c)
}

fn um(v: f64) -> String {
    num(v * 1e6)
}

fn width_cells(w: &AxisWidth) -> [String; 2] {
    [um(w.fwhm), um(w.uncertainty)]
}

fn write_table(table: &Table, out: &Path, manifest: &mut RunManifest) -> CliResult<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    table.write(out)?;
    let base = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = out.file_name().map(PathBuf::from).unwrap_or_else(|| out.to_path_buf());
    manifest.record(base, &base.join(name))?;
    manifest.write(&manifest_path_for(out))
}

fn predict(c: &ExperimentConfig, sweep: Option<Range>, widen: f64, out: &Path, m: &mut RunManifest) -> CliResult<()> {
    let waists = sweep.map_or_else(|| vec![c.pump.waist_horizontal], |r| r.values());
    let e = c.pump.ellipticity();
    let rows = m.time("predict", || {
        waists
            .par_iter()
            .map(|&w| {
                let mut cw = c.clone();
                cw.pump.waist_horizontal = w;
                cw.pump.waist_vertical = w * e;
                Ok((w, predict_widths(&cw, widen)?))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let mut t = Table::new(["w_p_m", "radial_fwhm_um", "azimuthal_fwhm_um"]);
    for (w, p) in rows {
        t.push(vec![num(w), um(p.radial_fwhm), um(p.azimuthal_fwhm)]);
    }
    write_table(&t, out, m)
}

/// Frame producer for one regime.
enum Source {
    Counting(CountingSimulator),
    Intensity(IntensitySimulator),
}

impl Source {
    fn new(c: &ExperimentConfig, regime: Regime) -> CliResult<Self> {
        let c = c.with_regime(regime);
        Ok(match regime {
            Regime::Counting => Source::Counting(CountingSimulator::new(&c)?),
            Regime::Intensity => {
                let pm = predict_widths(&c, c.pump.spectrum_widen_factor)?;
                let floor = c.detector.superpixel_pitch(Regime::Intensity);
                let t = gain_to_targets(c.pump.power, &c.gain, &pm, floor)?;
                let model = make_speckle_model(t.ac_fwhm, t.xc_fwhm, c.source.cross_strength, t.mean_intensity)?;
                Source::Intensity(IntensitySimulator::new(&c, &model)?)
            }
        })
    }

    fn frame(&self, i: u64) -> Frame {
        match self {
            Source::Counting(s) => s.frame(i),
            Source::Intensity(s) => s.frame(i),
        }
    }
}

fn synth(c: &ExperimentConfig, dir: &Path, frames: usize, regime: Regime, pgm: bool, m: &mut RunManifest) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let source = m.time("model", || Source::new(c, regime))?;
    let mut names = Vec::with_capacity(frames);
    m.time("frames", || {
        for start in (0..frames).step_by(BATCH) {
            let end = (start + BATCH).min(frames);
            let batch: Vec<Frame> = (start..end).into_par_iter().map(|i| source.frame(i as u64)).collect();
            for f in &batch {
                let name = io::frame_file_name(f.frame_index);
                io::write_frame(&dir.join(&name), f)?;
                if pgm {
                    io::write_pgm(&dir.join(format!("frame_{:06}.pgm", f.frame_index)), f)?;
                }
                names.push(name);
            }
        }
        Ok(())
    })?;
    let index = io::write_index(dir, &names)?;
    let t = Instant::now();
    for n in &names {
        m.record(dir, &dir.join(n))?;
        if pgm {
            m.record(dir, &dir.join(n.replace(".tbf", ".pgm")))?;
        }
    }
    m.record(dir, &index)?;
    m.timings.push(StageTiming {
        stage: "checksums".into(),
        seconds: t.elapsed().as_secs_f64(),
    });
    m.write(&dir.join("manifest.json"))
}

/// Reads a stack directory in frame order, batch by batch.
fn for_each_batch(dir: &Path, mut f: impl FnMut(Vec<Frame>) -> CliResult<()>) -> CliResult<usize> {
    let paths = io::read_index(dir)?;
    if paths.is_empty() {
        return Err(CliError::Stage(format!("{}: index lists no frames", dir.display())));
    }
    for chunk in paths.chunks(BATCH) {
        let frames = chunk.par_iter().map(|p| io::read_frame(p)).collect::<Result<Vec<_>, _>>()?;
        f(frames)?;
    }
    Ok(paths.len())
}

fn check_frame(f: &Frame, layout: &Layout) -> CliResult<()> {
    if f.regime != layout.regime || f.width() != layout.width || f.height() != layout.height || f.signal != layout.signal || f.idler != layout.idler {
        return Err(CliError::Stage(format!(
            "frame {} ({} regime, {}x{}) does not match the configured {} layout ({}x{})",
            f.frame_index,
            f.regime,
            f.width(),
            f.height(),
            layout.regime,
            layout.width,
            layout.height
        )));
    }
    Ok(())
}

fn axis_columns(prefix: &str) -> Vec<String> {
    ["radial_fwhm_um", "radial_sigma_um", "azimuthal_fwhm_um", "azimuthal_sigma_um"]
        .iter()
        .map(|s| format!("{prefix}{s}"))
        .collect()
}

fn estimate_cells(e: &WidthEstimate) -> Vec<String> {
    let mut v = width_cells(&e.radial).to_vec();
    v.extend(width_cells(&e.azimuthal));
    v
}

fn analyze_counting(c: &ExperimentConfig, dir: &Path, window: usize, out: &Path, m: &mut RunManifest) -> CliResult<()> {
    let layout = c.layout(Regime::Counting)?;
    let threshold = c.detector.threshold;
    let mut events: Vec<EventList> = Vec::new();
    m.time("events", || {
        for_each_batch(dir, |frames| {
            for f in &frames {
                check_frame(f, &layout)?;
            }
            let ev = frames.par_iter().map(|f| extract_events(f, threshold)).collect::<Result<Vec<_>, _>>()?;
            events.extend(ev);
            Ok(())
        })
    })?;
    let opts = CountingOptions {
        window,
        ..CountingOptions::default()
    };
    let r = m.time("analysis", || Ok(measure_counting(&events, &layout, c, &opts)?))?;
    let mut cols = vec!["n_frames".to_string()];
    cols.extend(axis_columns("xc_"));
    cols.extend(["eta_signal", "eta_signal_sigma", "eta_idler", "eta_idler_sigma", "method"].map(String::from));
    let mut t = Table::new(cols);
    let mo = &r.moments;
    let mut row = vec![events.len().to_string()];
    row.extend(estimate_cells(&r.width));
    row.extend([
        num(mo.estimated_efficiency_signal),
        num(mo.efficiency_sigma_signal),
        num(mo.estimated_efficiency_idler),
        num(mo.efficiency_sigma_idler),
        r.width.method.to_string(),
    ]);
    t.push(row);
    write_table(&t, out, m)
}

fn analyze_intensity(c: &ExperimentConfig, dir: &Path, window: usize, out: &Path, m: &mut RunManifest) -> CliResult<()> {
    let layout = c.layout(Regime::Intensity)?;
    let mut stack: Vec<Frame> = Vec::new();
    m.time("load", || {
        for_each_batch(dir, |frames| {
            for f in &frames {
                check_frame(f, &layout)?;
            }
            stack.extend(frames);
            Ok(())
        })
    })?;
    let opts = IntensityOptions {
        window,
        ..IntensityOptions::default()
    };
    let r = m.time("analysis", || Ok(measure_intensity(&stack, &layout, c, &opts)?))?;
    let mut cols = vec!["map".to_string(), "n_frames".into(), "n_points".into()];
    cols.extend(axis_columns(""));
    cols.extend(["radial_at_floor", "azimuthal_at_floor", "method", "fit_radial_fwhm_um", "fit_azimuthal_fwhm_um"].map(String::from));
    let mut t = Table::new(cols);
    for (name, e, map) in [("ac", &r.ac, &r.ac_map), ("xc", &r.xc, &r.xc_map)] {
        let mut row = vec![name.to_string(), stack.len().to_string(), map.components.len().to_string()];
        row.extend(estimate_cells(e));
        let alt = e.alternative.map_or([String::new(), String::new()], |a| [um(a[0]), um(a[1])]);
        row.extend([e.radial.at_floor.to_string(), e.azimuthal.at_floor.to_string(), e.method.to_string()]);
        row.extend(alt);
        t.push(row);
    }
    write_table(&t, out, m)
}

fn sweep_options(c: &ExperimentConfig, frames: Option<usize>, widen: Option<f64>) -> CliResult<SweepOptions> {
    let mut o = SweepOptions::from_config(c);
    if let Some(n) = frames {
        o.n_frames = n;
    }
    if let Some(w) = widen {
        o.widen_factor = w;
    }
    if o.n_frames < 100 {
        return Err(CliError::Usage(format!("--frames must be at least 100, got {}", o.n_frames)));
    }
    if !(o.widen_factor >= 1.0) {
        return Err(CliError::Usage(format!("--widen-factor must be >= 1, got {}", o.widen_factor)));
    }
    Ok(o)
}

fn power_table(rows: &[PowerRow]) -> Table {
    let mut t = Table::new([
        "power_W",
        "ac_radial_fwhm_um",
        "ac_azimuthal_fwhm_um",
        "xc_radial_fwhm_um",
        "xc_azimuthal_fwhm_um",
        "ac_radial_sigma_um",
        "ac_azimuthal_sigma_um",
        "xc_radial_sigma_um",
        "xc_azimuthal_sigma_um",
        "ac_radial_at_floor",
        "ac_azimuthal_at_floor",
    ]);
    for r in rows {
        t.push(vec![
            num(r.power),
            um(r.ac.radial.fwhm),
            um(r.ac.azimuthal.fwhm),
            um(r.xc.radial.fwhm),
            um(r.xc.azimuthal.fwhm),
            um(r.ac.radial.uncertainty),
            um(r.ac.azimuthal.uncertainty),
            um(r.xc.radial.uncertainty),
            um(r.xc.azimuthal.uncertainty),
            r.ac.radial.at_floor.to_string(),
            r.ac.azimuthal.at_floor.to_string(),
        ]);
    }
    t
}

fn waist_table(rows: &[(f64, WaistRow)]) -> Table {
    let mut t = Table::new([
        "widen_factor",
        "w_p_horizontal_m",
        "w_p_vertical_m",
        "predicted_radial_fwhm_um",
        "predicted_azimuthal_fwhm_um",
        "ac_radial_fwhm_um",
        "ac_azimuthal_fwhm_um",
        "xc_radial_fwhm_um",
        "xc_azimuthal_fwhm_um",
        "ac_radial_sigma_um",
        "ac_azimuthal_sigma_um",
        "xc_radial_sigma_um",
        "xc_azimuthal_sigma_um",
    ]);
    for (widen, r) in rows {
        t.push(vec![
            num(*widen),
            num(r.waist_horizontal),
            num(r.waist_vertical),
            um(r.predicted.radial_fwhm),
            um(r.predicted.azimuthal_fwhm),
            um(r.ac.radial.fwhm),
            um(r.ac.azimuthal.fwhm),
            um(r.xc.radial.fwhm),
            um(r.xc.azimuthal.fwhm),
            um(r.ac.radial.uncertainty),
            um(r.ac.azimuthal.uncertainty),
            um(r.xc.radial.uncertainty),
            um(r.xc.azimuthal.uncertainty),
        ]);
    }
    t
}

fn sweep_power(c: &ExperimentConfig, powers: &[f64], o: &SweepOptions, out: &Path, m: &mut RunManifest) -> CliResult<()> {
    let rows = m.time("sweep", || Ok(width_vs_power_sweep(c, powers, o)?))?;
    write_table(&power_table(&rows), out, m)
}

fn sweep_waist(c: &ExperimentConfig, waists: &[f64], widens: &[f64], o: &SweepOptions, out: &Path, m: &mut RunManifest) -> CliResult<()> {
    let mut rows = Vec::new();
    for &widen in widens {
        let o = SweepOptions { widen_factor: widen, ..*o };
        let part = m.time(&format!("sweep (widen {widen})"), || Ok(width_vs_waist_sweep(c, waists, &o)?))?;
        rows.extend(part.into_iter().map(|r| (widen, r)));
    }
    write_table(&waist_table(&rows), out, m)
}

fn execute(cli: Cli, args: &[String]) -> CliResult<()> {
    let c = load_config(&cli.common)?;
    let mut m = RunManifest::new(cli.command.name(), args, &c);
    let widen_or = |w: Option<f64>| w.unwrap_or(c.pump.spectrum_widen_factor);
    match cli.command {
        Command::Predict {
            waist_sweep,
            widen_factor,
            out,
        } => predict(&c, waist_sweep, widen_or(widen_factor), &out, &mut m),
        Command::Synth { out, frames, regime, pgm } => {
            let n = frames.unwrap_or(c.n_frames);
            if n == 0 {
                return Err(CliError::Usage("--frames must be at least 1".into()));
            }
            synth(&c, &out, n, regime.unwrap_or(c.regime), pgm, &mut m)
        }
        Command::AnalyzeCounting { frames, window, out } => {
            analyze_counting(&c, &frames, window.unwrap_or(c.window), &out, &mut m)
        }
        Command::AnalyzeIntensity {
            frames,
            points,
            window,
            out,
        } => {
            let mut c = c.clone();
            if let Some(p) = points {
                c.n_reference_points = p;
            }
            analyze_intensity(&c, &frames, window.unwrap_or(c.window), &out, &mut m)
        }
        Command::SweepPower {
            powers,
            frames,
            widen_factor,
            out,
        } => sweep_power(&c, &powers.values(), &sweep_options(&c, frames, widen_factor)?, &out, &mut m),
        Command::SweepWaist {
            waists,
            frames,
            widen_factor,
            out,
        } => {
            let o = sweep_options(&c, frames, widen_factor)?;
            sweep_waist(&c, &waists.values(), &[o.widen_factor], &o, &out, &mut m)
        }
        Command::ReproduceFig3 { frames, out } => {
            let powers = Range {
                start: 0.015,
                stop: 0.05,
                count: 8,
            };
            sweep_power(&c, &powers.values(), &sweep_options(&c, frames, None)?, &out, &mut m)
        }
        Command::ReproduceFig4 { frames, out } => {
            let waists = Range {
                start: 0.15e-3,
                stop: 0.45e-3,
                count: 7,
            };
            let o = sweep_options(&c, frames, None)?;
            sweep_waist(&c, &waists.values(), &[1.0, 2.0], &o, &out, &mut m)
        }
    }
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 1 when a stage fails, 2 on usage errors.
pub fn run_pipeline<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let run = |cli: Cli| execute(cli, &args[1.min(args.len())..]);
    let result = match cli.common.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(CliError::Stage(e.to_string())),
        },
        None => run(cli),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `twinbeam --help` for usage.");
            2
        }
        Err(CliError::Stage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}
