//! Command-line frontend for graph-based change-point detection in
//! multiband image sequences: segmentation, online detection, stream
//! simulation, mask scoring, operating-curve sweeps, and noise estimation.
//!
//! Exit statuses: 0 success, 1 runtime failure, 2 invalid arguments,
//! configuration, or inputs.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use graphcpd::config::{self, KeyValueConfig};
use graphcpd::detector::StatisticsWriter;
use graphcpd::{
    estimate_noise, matched_pfa_delays, monte_carlo, pd_pfa, read_labels_path, read_mask_path,
    read_sequence_path, simulate_sequence, slic_segment, write_labels_path, write_mask_path,
    write_matched_csv, write_sequence_path, Detector, ImageSequence, Method, MetricKind,
};

/// Keys a standalone segmentation run understands.
const SEGMENT_KEYS: &[&str] = &["slic_step", "slic_compactness", "slic_iters"];

#[derive(Parser)]
#[command(
    name = "graphcpd",
    version,
    about = "Online graph-based change-point detection in multiband image sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment the first frame into superpixels and write the labeling
    Segment(SegmentArgs),
    /// Run the online detector over a sequence, writing statistics and masks
    Detect(DetectArgs),
    /// Draw a synthetic sequence from a scenario and write it with its truth
    Simulate(SimulateArgs),
    /// Score estimated change masks against ground-truth masks
    Evaluate(EvaluateArgs),
    /// Sweep operating points over Monte Carlo runs and write a metrics CSV
    Roc(RocArgs),
    /// Estimate the per-pixel noise variance from consecutive frame pairs
    EstimateNoise(EstimateNoiseArgs),
}

#[derive(Args)]
struct SegmentArgs {
    /// Input sequence (MBS1)
    #[arg(long)]
    input: PathBuf,
    /// Output labeling (SPL1)
    #[arg(long)]
    output: PathBuf,
    /// Key-value config file with slic_* settings
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct DetectArgs {
    /// Input sequence (MBS1)
    #[arg(long)]
    input: PathBuf,
    /// Output directory for statistics.csv, flagged masks, and the labeling
    #[arg(long)]
    output: PathBuf,
    /// Key-value config file with detector (and, without --labels, slic_*) settings
    #[arg(long)]
    config: Option<PathBuf>,
    /// Precomputed labeling (SPL1); skips segmentation
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Override a config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config file (defaults to the example1 preset)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for sequence.mbs and truth.cmk
    #[arg(long)]
    output: PathBuf,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override a config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of estimated masks (*.cmk)
    #[arg(long)]
    input: PathBuf,
    /// Directory of ground-truth masks with matching file names
    #[arg(long)]
    truth: PathBuf,
    /// Optional CSV output path (counts and rates)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RocArgs {
    /// Scenario config file (defaults to the example1 preset)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path; a gnuplot script is written next to it
    #[arg(long)]
    output: PathBuf,
    /// Detection method
    #[arg(long, default_value = "dagfss")]
    method: String,
    /// Reported metric: "delay" or "pdpfa"
    #[arg(long, default_value = "delay")]
    metric: String,
    /// Comma-separated operating points (alpha for dagfss, tau for cva), or
    /// target per-run false-alarm probabilities with --matched
    #[arg(long)]
    grid: String,
    /// Compare at matched per-run false-alarm probabilities instead of
    /// sweeping raw operating points
    #[arg(long)]
    matched: bool,
    /// Number of Monte Carlo runs
    #[arg(long, default_value_t = 100)]
    runs: usize,
    /// Base random seed; run i uses seed + i
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override a config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EstimateNoiseArgs {
    /// Input sequence (MBS1)
    #[arg(long)]
    input: PathBuf,
    /// Number of initial frames to use (default: all)
    #[arg(long)]
    frames: Option<usize>,
}

/// A failure carrying the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

type CliResult<T> = Result<T, Failure>;

/// Mark an error as caused by user-supplied arguments, config, or inputs.
fn user<T>(result: graphcpd::Result<T>) -> CliResult<T> {
    result.map_err(|e| Failure {
        code: 2,
        message: e.to_string(),
    })
}

/// Mark an error as a runtime failure after validation succeeded.
fn internal<T, E: std::fmt::Display>(result: Result<T, E>) -> CliResult<T> {
    result.map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Segment(args) => cmd_segment(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Roc(args) => cmd_roc(args),
        Command::EstimateNoise(args) => cmd_estimate_noise(args),
    }
}

/// Cap worker parallelism from GRAPHCPD_THREADS when set.
fn configure_threads() -> CliResult<()> {
    match std::env::var("GRAPHCPD_THREADS") {
        Err(_) => Ok(()),
        Ok(raw) => {
            let threads: usize = raw
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| usage(format!("GRAPHCPD_THREADS must be a positive integer, got {raw:?}")))?;
            internal(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global(),
            )
        }
    }
}

/// Load the config file (if any) and apply --set overrides on top.
fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<KeyValueConfig> {
    let mut config = match path {
        Some(path) => user(KeyValueConfig::from_path(path))?,
        None => KeyValueConfig::new(),
    };
    user(config.apply_overrides(overrides))?;
    Ok(config)
}

fn cmd_segment(args: SegmentArgs) -> CliResult<()> {
    let config = load_config(args.config.as_deref(), &args.set)?;
    user(config.check_known(SEGMENT_KEYS))?;
    let params = user(config::superpixel_params(&config))?;
    let seq = user(read_sequence_path(&args.input))?;
    let labeling = user(slic_segment(seq.frame(0), &params))?;
    internal(write_labels_path(&args.output, &labeling))?;
    let k = labeling.segment_count();
    let mean = labeling.pixel_count() as f64 / k as f64;
    println!("K = {k} segments, mean size {mean:.2} pixels");
    println!("wrote {}", args.output.display());
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> CliResult<()> {
    let config = load_config(args.config.as_deref(), &args.set)?;
    let detector_config = user(config::detector_config(&config))?;
    let seq = user(read_sequence_path(&args.input))?;

    let (labeling, computed) = match &args.labels {
        Some(path) => {
            let labeling = user(read_labels_path(path))?;
            if labeling.height() != seq.height() || labeling.width() != seq.width() {
                return Err(usage(format!(
                    "labeling is {}x{} but the sequence is {}x{}",
                    labeling.height(),
                    labeling.width(),
                    seq.height(),
                    seq.width()
                )));
            }
            (labeling, false)
        }
        None => {
            let params = user(config::superpixel_params(&config))?;
            (user(slic_segment(seq.frame(0), &params))?, true)
        }
    };

    let mut detector = user(Detector::new(labeling, detector_config))?;
    if detector.is_degenerate() {
        eprintln!(
            "warning: no vertex has a positive statistic variance; flags can never be raised"
        );
    }

    internal(std::fs::create_dir_all(&args.output))?;
    let stats_path = args.output.join("statistics.csv");
    let file = internal(File::create(&stats_path))?;
    let mut writer = internal(StatisticsWriter::new(BufWriter::new(file)))?;
    let mut flagged = Vec::new();
    for frame in seq.frames() {
        if let Some(stats) = internal(detector.push(frame))? {
            internal(writer.write_frame(&stats))?;
            if stats.flags.any() {
                flagged.push(stats.frame);
                let mask_path = args.output.join(format!("mask_{:06}.cmk", stats.frame));
                internal(write_mask_path(mask_path, &stats.flags))?;
            }
        }
    }
    internal(writer.flush())?;
    if computed {
        internal(write_labels_path(
            args.output.join("labels.spl"),
            detector.labeling(),
        ))?;
    }

    println!("wrote {}", stats_path.display());
    match flagged.first() {
        Some(first) => println!(
            "change detected: first flagged frame {first}, {} flagged frames, masks in {}",
            flagged.len(),
            args.output.display()
        ),
        None => println!("no change detected"),
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let config = load_config(args.config.as_deref(), &args.set)?;
    let scenario = user(config::scenario(&config))?;
    let sim = user(scenario.simulator_config())?;
    let (seq, truth) = internal(simulate_sequence(&sim, args.seed))?;

    internal(std::fs::create_dir_all(&args.output))?;
    let seq_path = args.output.join("sequence.mbs");
    internal(write_sequence_path(&seq_path, &seq))?;
    let truth_path = args.output.join("truth.cmk");
    internal(write_mask_path(&truth_path, &truth.mask_at(truth.change_frame)))?;

    println!(
        "wrote {} ({} frames of {}x{}x{})",
        seq_path.display(),
        seq.len(),
        seq.height(),
        seq.width(),
        seq.bands()
    );
    if truth.has_change() {
        println!(
            "wrote {} (change at frame {} over {} pixels)",
            truth_path.display(),
            truth.change_frame,
            truth.support.iter().filter(|&&v| v == 1).count()
        );
    } else {
        println!("wrote {} (no change)", truth_path.display());
    }
    Ok(())
}

/// Read every *.cmk file in `dir`, sorted by file name.
fn read_mask_dir(dir: &Path) -> CliResult<Vec<(String, graphcpd::ChangeMask)>> {
    let entries = user(
        std::fs::read_dir(dir)
            .map_err(|e| graphcpd::Error::io_at(dir, e))
            .and_then(|entries| {
                entries
                    .map(|e| e.map_err(|e| graphcpd::Error::io_at(dir, e)))
                    .collect::<graphcpd::Result<Vec<_>>>()
            }),
    )?;
    let mut masks = Vec::new();
    for entry in entries {
        let path = entry.path();
        if path.extension().is_some_and(|ext| ext == "cmk") {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            masks.push((name, user(read_mask_path(&path))?));
        }
    }
    if masks.is_empty() {
        return Err(usage(format!("no .cmk masks found in {}", dir.display())));
    }
    masks.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(masks)
}

fn fmt_rate(rate: Option<f64>) -> String {
    match rate {
        Some(v) => format!("{v}"),
        None => "NA".to_string(),
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let estimates = read_mask_dir(&args.input)?;
    let truth = read_mask_dir(&args.truth)?;
    let estimate_names: Vec<&str> = estimates.iter().map(|(n, _)| n.as_str()).collect();
    let truth_names: Vec<&str> = truth.iter().map(|(n, _)| n.as_str()).collect();
    if estimate_names != truth_names {
        return Err(usage(format!(
            "mask file names differ between the two directories: {} vs {}",
            estimate_names.join(", "),
            truth_names.join(", ")
        )));
    }

    let estimate_masks: Vec<_> = estimates.into_iter().map(|(_, m)| m).collect();
    let truth_masks: Vec<_> = truth.into_iter().map(|(_, m)| m).collect();
    let counts = user(pd_pfa(&estimate_masks, &truth_masks))?;

    println!(
        "detected {} of {} change cells; {} false flags over {} clean cells",
        counts.detected, counts.change_cells, counts.false_flags, counts.clean_cells
    );
    println!("Pd = {}", fmt_rate(counts.pd()));
    println!("Pfa = {}", fmt_rate(counts.pfa()));

    if let Some(path) = &args.output {
        let table = format!(
            "pd,pfa,detected,change_cells,false_flags,clean_cells\n{},{},{},{},{},{}\n",
            fmt_rate(counts.pd()),
            fmt_rate(counts.pfa()),
            counts.detected,
            counts.change_cells,
            counts.false_flags,
            counts.clean_cells
        );
        internal(std::fs::write(path, table))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Parse a comma-separated list of floats.
fn parse_grid(raw: &str) -> CliResult<Vec<f64>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| usage(format!("grid entry {s:?} is not a number")))
        })
        .collect()
}

/// Write a gnuplot-compatible companion script for a metrics CSV.
fn write_plot_script(
    csv_path: &Path,
    ylabel: &str,
    columns: &str,
) -> CliResult<PathBuf> {
    let script_path = csv_path.with_extension("gnuplot");
    let csv_name = csv_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let script = format!(
        "# plot script for {csv_name}\n\
         set datafile separator \",\"\n\
         set datafile missing \"NA\"\n\
         set key autotitle columnhead\n\
         set xlabel \"probability of false alarm\"\n\
         set ylabel \"{ylabel}\"\n\
         set grid\n\
         plot \"{csv_name}\" using {columns} with linespoints\n"
    );
    internal(std::fs::write(&script_path, script))?;
    Ok(script_path)
}

fn cmd_roc(args: RocArgs) -> CliResult<()> {
    let config = load_config(args.config.as_deref(), &args.set)?;
    let scenario = user(config::scenario(&config))?;
    let method = user(Method::from_str(&args.method))?;
    let metric = user(MetricKind::from_str(&args.metric))?;
    let grid = parse_grid(&args.grid)?;

    let (rows, ylabel, columns) = if args.matched {
        if metric != MetricKind::MeanDelay {
            return Err(usage(
                "matched mode reports mean delays; --metric must be \"delay\"",
            ));
        }
        let rows = internal(matched_pfa_delays(
            &scenario, method, &grid, args.runs, args.seed,
        ))?;
        let count = rows.len();
        let file = internal(File::create(&args.output))?;
        internal(write_matched_csv(BufWriter::new(file), &rows))?;
        (count, "mean detection delay (frames)", "1:7")
    } else {
        let table = internal(monte_carlo(
            &scenario, method, metric, &grid, args.runs, args.seed,
        ))?;
        let count = table.rows.len();
        let file = internal(File::create(&args.output))?;
        internal(table.write_csv(BufWriter::new(file)))?;
        let ylabel = match metric {
            MetricKind::MeanDelay => "mean detection delay (frames)",
            MetricKind::PdPfa => "pixel detection rate",
        };
        (count, ylabel, "2:3")
    };

    println!("wrote {} rows to {}", rows, args.output.display());
    let script = write_plot_script(&args.output, ylabel, columns)?;
    println!("plot script: {}", script.display());
    Ok(())
}

fn cmd_estimate_noise(args: EstimateNoiseArgs) -> CliResult<()> {
    let seq: ImageSequence = user(read_sequence_path(&args.input))?;
    let frames = args.frames.unwrap_or_else(|| seq.len());
    let estimate = user(estimate_noise(&seq, frames))?;
    println!("{estimate}");
    Ok(())
}
