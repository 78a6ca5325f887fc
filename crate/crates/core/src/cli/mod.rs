//! `ffsim` command-line front end.
//!
//! Every subcommand writes its outputs plus a `manifest.toml` into the output
//! directory. Parameters come from built-in defaults, then an optional config
//! file, then flags.

mod manifest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::coincidence;
use crate::detector_model::detection_matrix;
use crate::discriminator::{find_plateaus, threshold_sweep, AmplitudeModel, DEFAULT_NOISE_FRACTION};
use crate::error::{Error, Result};
use crate::event_sim::{self, ConfigFile, ExperimentConfig};
use crate::feedforward::{g2_sweep, log_grid, write_sweep_csv, HeraldSelection};
use crate::photon_stats::{SourceFamily, DEFAULT_TAIL_LIMIT};
use crate::timetag::{decode_any, Channel, Picos};
use crate::units::{format_duration, parse_duration};

pub use manifest::{read_manifest, sha256_hex, verify, OutputDigest, OutputSet, RunManifest, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ffsim", version, about = "Heralded single-photon source with feed-forward: models, simulation, analysis")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "FFSIM_OUT_DIR", default_value = ".")]
    pub out: PathBuf,

    /// Experiment config file (TOML); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Herald detector response matrix p(n, clicks).
    Matrix(MatrixArgs),
    /// Heralded g2(0) against source brightness.
    Sweep(SweepArgs),
    /// Event-level Monte Carlo producing a time-tag file.
    Simulate(SimulateArgs),
    /// Coincidence histogram, peak g2 and gate-region rates of a tag file.
    Analyze(AnalyzeArgs),
    /// Trigger-rate surface over discriminator thresholds.
    Thresholds(ThresholdArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DetectorArgs {
    /// Idler path transmission up to the detector.
    #[arg(long)]
    pub transmission: Option<f64>,
    /// Number of detector pixels.
    #[arg(long)]
    pub pixels: Option<usize>,
    /// Nearest-neighbour crosstalk probability.
    #[arg(long)]
    pub crosstalk: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct MatrixArgs {
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Largest incident photon number.
    #[arg(long, default_value_t = 10)]
    pub nmax: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Herald click selection, e.g. `1`, `2+`, `1-3,!2`.
    #[arg(long)]
    pub selection: Option<String>,
    /// Source photon statistics.
    #[arg(long)]
    pub family: Option<SourceFamily>,
    /// Smallest mean pair number of the log grid.
    #[arg(long, default_value_t = 1e-4)]
    pub mu_min: f64,
    /// Largest mean pair number of the log grid.
    #[arg(long, default_value_t = 1.0)]
    pub mu_max: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 30)]
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TagFormat {
    Bin,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Number of pump pulses.
    #[arg(long)]
    pub pulses: Option<u64>,
    /// RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mean pairs per pulse.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Worker threads; the output does not depend on this.
    #[arg(long, env = "FFSIM_THREADS")]
    pub threads: Option<usize>,
    /// Tag file encoding.
    #[arg(long, value_enum, default_value_t = TagFormat::Bin)]
    pub format: TagFormat,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Tag file, binary or CSV.
    #[arg(long)]
    pub tags: PathBuf,
    /// Histogram bin width.
    #[arg(long, default_value = "250ps", value_parser = duration_arg)]
    pub bin: Picos,
    /// Half-span of the histogram.
    #[arg(long, default_value = "100ns", value_parser = duration_arg)]
    pub range: Picos,
    /// Pulse period; defaults to the config value.
    #[arg(long, value_parser = duration_arg)]
    pub rep_period: Option<Picos>,
    /// Acquisition time; defaults to the config run length, else the last tag.
    #[arg(long, value_parser = duration_arg)]
    pub duration: Option<Picos>,
    /// Half-width of the window integrated around each peak.
    #[arg(long, default_value = "1ns", value_parser = duration_arg)]
    pub peak_halfwidth: Picos,
    /// Channel pair of the histogram, `start,stop`.
    #[arg(long, default_value = "hbt_a,hbt_b", value_parser = channel_pair_arg)]
    pub pair: (Channel, Channel),
}

#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Mean photon number of the source hitting the detector.
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Source photon statistics.
    #[arg(long)]
    pub family: Option<SourceFamily>,
    /// Pulse amplitude per click.
    #[arg(long, default_value_t = 1.0)]
    pub unit_amplitude: f64,
    /// Amplitude noise as a fraction of the unit amplitude.
    #[arg(long, default_value_t = DEFAULT_NOISE_FRACTION)]
    pub noise: f64,
    /// Threshold grid start, in units of the unit amplitude.
    #[arg(long, default_value_t = 0.5)]
    pub min: f64,
    /// Threshold grid end, in units of the unit amplitude.
    #[arg(long, default_value_t = 5.5)]
    pub max: f64,
    /// Threshold grid spacing.
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    /// Largest photon number kept in the source distribution.
    #[arg(long, default_value_t = 40)]
    pub nmax: usize,
}

fn duration_arg(text: &str) -> std::result::Result<Picos, String> {
    parse_duration(text).map_err(|e| e.to_string())
}

fn channel_pair_arg(text: &str) -> std::result::Result<(Channel, Channel), String> {
    let (a, b) = text.split_once(',').ok_or("expected two channels separated by a comma")?;
    let parse = |s: &str| s.trim().parse::<Channel>().map_err(|e| e.to_string());
    Ok((parse(a)?, parse(b)?))
}

/// Parses arguments, runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Parameter(_) | Error::Truncation { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

struct Context {
    command: &'static str,
    started: String,
    file: ConfigFile,
    config: ExperimentConfig,
    parameters: BTreeMap<String, String>,
    outputs: OutputSet,
}

impl Context {
    fn new(cli: &Cli, command: &'static str) -> Result<Self> {
        let started = now();
        let file = match &cli.config {
            Some(path) => ConfigFile::parse(&fs::read_to_string(path)?)?,
            None => ConfigFile::default(),
        };
        let config = file.resolve()?;
        Ok(Self {
            command,
            started,
            file,
            config,
            parameters: BTreeMap::new(),
            outputs: OutputSet::create(&cli.out)?,
        })
    }

    fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.insert(key.to_string(), value.to_string());
    }

    fn finish(self, seed: Option<u64>, config: Option<ConfigFile>) -> Result<RunManifest> {
        self.outputs.finish(RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started: self.started,
            finished: now(),
            parameters: self.parameters,
            config,
            outputs: Vec::new(),
        })
    }

    /// Applies detector flags over the config.
    fn detector(&mut self, args: &DetectorArgs) -> Result<(f64, usize, f64)> {
        let t = args.transmission.unwrap_or(self.config.idler_transmission);
        let n = args.pixels.unwrap_or(self.config.n_pixels);
        let eps = args.crosstalk.unwrap_or(self.config.crosstalk);
        self.param("transmission", t);
        self.param("pixels", n);
        self.param("crosstalk", eps);
        Ok((t, n, eps))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<RunManifest> {
    match &cli.command {
        Command::Matrix(args) => matrix(cli, args),
        Command::Sweep(args) => sweep(cli, args),
        Command::Simulate(args) => simulate(cli, args),
        Command::Analyze(args) => analyze(cli, args),
        Command::Thresholds(args) => thresholds(cli, args),
    }
}

fn matrix(cli: &Cli, args: &MatrixArgs) -> Result<RunManifest> {
    let mut ctx = Context::new(cli, "matrix")?;
    let (t, n, eps) = ctx.detector(&args.detector)?;
    ctx.param("nmax", args.nmax);
    let det = detection_matrix(t, n, eps, args.nmax)?;
    let mut table = Vec::new();
    det.write_csv(&mut table, Some(3))?;
    print!("{}", String::from_utf8_lossy(&table));
    let mut csv = Vec::new();
    det.write_csv(&mut csv, None)?;
    ctx.outputs.write("detection_matrix.csv", &csv)?;
    ctx.finish(None, None)
}

fn sweep(cli: &Cli, args: &SweepArgs) -> Result<RunManifest> {
    let mut ctx = Context::new(cli, "sweep")?;
    let (t, n, eps) = ctx.detector(&args.detector)?;
    let family = args.family.unwrap_or(ctx.config.source_family);
    let selection = match &args.selection {
        Some(text) => HeraldSelection::parse(text, n)?,
        None => ctx.config.herald_selection.clone(),
    };
    selection.validate(n)?;
    let means = log_grid(args.mu_min, args.mu_max, args.points)?;
    let n_max = family.required_n_max(args.mu_max, DEFAULT_TAIL_LIMIT)?;
    ctx.param("selection", selection.label());
    ctx.param("family", family);
    ctx.param("mu_min", args.mu_min);
    ctx.param("mu_max", args.mu_max);
    ctx.param("points", args.points);
    ctx.param("nmax", n_max);
    let det = detection_matrix(t, n, eps, n_max)?;
    let points = g2_sweep(&det, &selection, &means, family)?;
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &points, &selection, family)?;
    ctx.outputs.write("g2_sweep.csv", &csv)?;
    for p in &points {
        println!("mu={:.4e} g2={:.4e} acceptance={:.4e}", p.mean, p.g2, p.acceptance);
    }
    ctx.finish(None, None)
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<RunManifest> {
    let mut ctx = Context::new(cli, "simulate")?;
    let mut config = ctx.config.clone();
    if let Some(p) = args.pulses {
        config.n_pulses = p;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(mu) = args.mu {
        config.mean_pairs_per_pulse = mu;
    }
    config.validate()?;
    if let Some(threads) = args.threads {
        ctx.param("threads", threads);
    }
    let sim = event_sim::run_with_threads(&config, args.threads)?;
    let (name, bytes) = match args.format {
        TagFormat::Bin => ("tags.bin", sim.stream.to_binary()),
        TagFormat::Csv => {
            let mut buf = Vec::new();
            sim.stream.encode_csv(&mut buf)?;
            ("tags.csv", buf)
        }
    };
    ctx.outputs.write(name, &bytes)?;
    ctx.outputs.write("summary.toml", sim.summary.to_toml(&config).as_bytes())?;
    // The resolved config alone reproduces this run via `simulate --config`.
    ctx.outputs.write("config.toml", config.to_toml().as_bytes())?;
    let s = &sim.summary;
    println!(
        "pulses={} heralds={} hbt_a={} hbt_b={} acceptance={:.4e}",
        s.n_pulses, s.counts.herald, s.counts.hbt_a, s.counts.hbt_b, s.acceptance
    );
    ctx.finish(Some(config.seed), Some(config.to_file()))
}

fn analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<RunManifest> {
    let mut ctx = Context::new(cli, "analyze")?;
    let stream = decode_any(&fs::read(&args.tags)?)?;
    let mut config = ctx.config.clone();
    if let Some(rep) = args.rep_period {
        config.rep_period = rep;
    }
    let duration = match args.duration {
        Some(d) => d,
        None if cli.config.is_some() => config.duration()?,
        None => stream.last_timestamp().map_or(0, |t| t.saturating_add(1)),
    };
    ctx.param("tags", args.tags.display());
    ctx.param("bin", format_duration(args.bin));
    ctx.param("range", format_duration(args.range));
    ctx.param("rep_period", format_duration(config.rep_period));
    ctx.param("duration", format_duration(duration));
    ctx.param("peak_halfwidth", format_duration(args.peak_halfwidth));
    ctx.param("pair", format!("{},{}", args.pair.0.name(), args.pair.1.name()));

    let hist = coincidence::correlate(&stream, args.pair, args.bin, args.range)?.with_duration(duration);
    let mut csv = Vec::new();
    hist.write_csv(&mut csv)?;
    ctx.outputs.write("histogram.csv", &csv)?;
    let peaks = coincidence::g2_tau(&hist, config.rep_period, config.rep_rate_hz(), args.peak_halfwidth)?;
    let mut csv = Vec::new();
    coincidence::write_peaks_csv(&mut csv, &peaks)?;
    ctx.outputs.write("peaks.csv", &csv)?;

    let report = gate_report(&stream, &config, args)?;
    let mut text = String::new();
    text.push_str(&format!("duration_ps = {duration}\n"));
    text.push_str(&format!("singles = [{}, {}]\n", hist.total_singles.0, hist.total_singles.1));
    if let Some(zero) = peaks.iter().find(|p| p.offset == 0) {
        text.push_str(&format!("g2_zero_peak = {:e}\n", zero.g2));
        println!("g2(0) from zero-delay peak: {:.4}", zero.g2);
    }
    if let Some(report) = report {
        println!(
            "herald peaks: correlated {:.0}, open {:.1}, closed {:.1} ({:+.2} ± {:.2} dB)",
            report.suppression.correlated,
            report.suppression.open_mean,
            report.suppression.closed_mean,
            report.suppression.ratio_db,
            report.suppression.sigma_db
        );
        text.push_str(&toml::to_string(&report).map_err(|e| Error::Inconsistent(e.to_string()))?);
    }
    ctx.outputs.write("rates.toml", text.as_bytes())?;
    let file = cli.config.as_ref().map(|_| ctx.file.clone());
    ctx.finish(None, file)
}

#[derive(serde::Serialize)]
struct GateReport {
    peak_ordering_ok: bool,
    heralded_g2: Option<coincidence::HeraldedG2>,
    /// From peaks restricted to uncorrelated photons in the expected gate state.
    suppression: coincidence::Suppression,
    /// From the plain herald-to-HBT histogram.
    unconditioned_suppression: Option<coincidence::Suppression>,
    rates: coincidence::RegionRates,
    herald_peaks: Vec<coincidence::ConditionedPeak>,
}

/// Maps an undefined statistic to `None`.
fn defined<T>(result: Result<T>) -> Result<Option<T>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedStatistic(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Herald-referenced statistics, when the stream carries heralds and HBT tags.
fn gate_report(
    stream: &crate::timetag::TagStream,
    config: &ExperimentConfig,
    args: &AnalyzeArgs,
) -> Result<Option<GateReport>> {
    if stream.count(Channel::HeraldTrigger) == 0 || stream.count(Channel::HbtA) + stream.count(Channel::HbtB) == 0 {
        return Ok(None);
    }
    let herald_peaks = coincidence::gate_conditioned_peaks(stream, config, args.bin, args.range, args.peak_halfwidth)?;
    let Some(suppression) = defined(coincidence::conditioned_suppression(&herald_peaks, config))? else {
        return Ok(None);
    };
    let mut herald_hist =
        coincidence::correlate(stream, (Channel::HeraldTrigger, Channel::HbtA), args.bin, args.range)?;
    herald_hist.merge(&coincidence::correlate(
        stream,
        (Channel::HeraldTrigger, Channel::HbtB),
        args.bin,
        args.range,
    )?)?;
    let raw_peaks = coincidence::integrate_peaks(&herald_hist, config.rep_period, args.peak_halfwidth)?;
    Ok(Some(GateReport {
        peak_ordering_ok: suppression.correlated > suppression.open_mean
            && suppression.open_mean > suppression.closed_mean,
        heralded_g2: defined(coincidence::heralded_g2(stream, 0, config.rep_period, args.peak_halfwidth))?,
        suppression,
        unconditioned_suppression: defined(coincidence::suppression_ratio(&raw_peaks, config))?,
        rates: coincidence::herald_conditioned_rates(stream, config)?,
        herald_peaks,
    }))
}

fn thresholds(cli: &Cli, args: &ThresholdArgs) -> Result<RunManifest> {
    let mut ctx = Context::new(cli, "thresholds")?;
    let (t, n, eps) = ctx.detector(&args.detector)?;
    let family = args.family.unwrap_or(ctx.config.source_family);
    if !(args.step > 0.0 && args.max > args.min) {
        return Err(Error::param("threshold grid needs max > min and a positive step"));
    }
    ctx.param("mu", args.mu);
    ctx.param("family", family);
    ctx.param("unit_amplitude", args.unit_amplitude);
    ctx.param("noise", args.noise);
    ctx.param("grid", format!("{}:{}:{}", args.min, args.max, args.step));
    ctx.param("nmax", args.nmax);
    let det = detection_matrix(t, n, eps, args.nmax)?;
    let source = family.distribution(args.mu, args.nmax)?;
    let model = AmplitudeModel::new(args.unit_amplitude, args.noise * args.unit_amplitude, 0.0)?;
    let steps = ((args.max - args.min) / args.step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| (args.min + i as f64 * args.step) * args.unit_amplitude)
        .collect();
    let mut high = grid.clone();
    high.push(f64::INFINITY);
    let surface = threshold_sweep(&source, &det, &model, ctx.config.rep_rate_hz(), &grid, &high)?;
    let mut csv = Vec::new();
    surface.write_csv(&mut csv)?;
    ctx.outputs.write("thresholds.csv", &csv)?;
    let open_ended = surface.low_sweep(high.len() - 1);
    let floor = 1e-9 * open_ended.first().copied().unwrap_or(0.0);
    let plateaus = find_plateaus(&open_ended, 1e-3, 3, floor);
    println!("plateaus along the low threshold (high = inf): {}", plateaus.len());
    ctx.finish(None, None)
}
