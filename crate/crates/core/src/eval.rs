//! Monte Carlo evaluation: synthetic scenarios, detection-delay and pooled
//! detection/false-alarm probabilities, and delay comparisons at matched
//! per-run false-alarm rates.
//!
//! Frame 1 never carries a decision (the detector needs two frames), so every
//! metric here runs over frames `2..=T`. A run is a *false alarm* when any
//! vertex is flagged before the change frame; otherwise its *delay* is the
//! first flagged frame minus the change frame, or the run is *undetected*.
//! Delays are averaged over detected, non-false-alarm runs only, with the
//! excluded runs reported as counts.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::baseline::{cva_magnitude, CvaDetector};
use crate::detector::{Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::formats::{ChangeMask, Frame, ImageSequence};
use crate::sim::{noise_variance_for_snr, simulate_sequence, GroundTruth, SimulatorConfig};
use crate::superpixel::{grid_partition, slic_segment, Labeling, SuperpixelParams};

/// Detection method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// The graph-filter detector; operating points are family-wise levels
    /// `alpha` in (0, 1).
    DaGfss,
    /// Change vector analysis; operating points are magnitude thresholds
    /// `tau >= 0`.
    Cva,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dagfss" => Ok(Method::DaGfss),
            "cva" => Ok(Method::Cva),
            other => Err(Error::invalid(format!(
                "unknown method {other:?}, expected \"dagfss\" or \"cva\""
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::DaGfss => "dagfss",
            Method::Cva => "cva",
        })
    }
}

/// What one run amounted to, relative to its change frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    /// Some vertex was flagged strictly before the change frame.
    FalseAlarm { frame: usize },
    /// First alarm at or after the change frame, `delay` frames late.
    Detected { delay: usize },
    /// No alarm anywhere.
    Undetected,
}

/// Classify a run from the frames that carried at least one flag.
///
/// `change_frame` is 1-based; pass `T + 1` for a null run so that any alarm
/// counts as a false alarm.
pub fn detection_delay(flagged_frames: &[usize], change_frame: usize) -> Result<RunOutcome> {
    if change_frame < 2 {
        return Err(Error::invalid(format!(
            "change frame must be >= 2, got {change_frame}"
        )));
    }
    match flagged_frames.iter().min() {
        None => Ok(RunOutcome::Undetected),
        Some(&first) if first < 2 => Err(Error::invalid(format!(
            "flags exist from frame 2 on, got a flag at frame {first}"
        ))),
        Some(&first) if first < change_frame => Ok(RunOutcome::FalseAlarm { frame: first }),
        Some(&first) => Ok(RunOutcome::Detected {
            delay: first - change_frame,
        }),
    }
}

/// Pooled per-pixel detection/false-alarm counts over frames and runs.
///
/// Integer counters so that the ratios are exact rationals:
/// `Pd = detected / change_cells`, `Pfa = false_flags / clean_cells`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PdPfa {
    /// Cells flagged while truly changed.
    pub detected: u64,
    /// Truly changed cells.
    pub change_cells: u64,
    /// Cells flagged while unchanged.
    pub false_flags: u64,
    /// Unchanged cells.
    pub clean_cells: u64,
}

impl PdPfa {
    fn tally(&mut self, truth: bool, flagged: bool) {
        if truth {
            self.change_cells += 1;
            if flagged {
                self.detected += 1;
            }
        } else {
            self.clean_cells += 1;
            if flagged {
                self.false_flags += 1;
            }
        }
    }

    fn merge(&mut self, other: &PdPfa) {
        self.detected += other.detected;
        self.change_cells += other.change_cells;
        self.false_flags += other.false_flags;
        self.clean_cells += other.clean_cells;
    }

    /// Detection probability; undefined (None) without any changed cell.
    pub fn pd(&self) -> Option<f64> {
        (self.change_cells > 0).then(|| self.detected as f64 / self.change_cells as f64)
    }

    /// False-alarm probability; undefined without any unchanged cell.
    pub fn pfa(&self) -> Option<f64> {
        (self.clean_cells > 0).then(|| self.false_flags as f64 / self.clean_cells as f64)
    }
}

/// Pool per-pixel counts over paired estimate/truth masks (one pair per
/// evaluated frame, `t = 2..=T`).
pub fn pd_pfa(estimates: &[ChangeMask], truth: &[ChangeMask]) -> Result<PdPfa> {
    if estimates.len() != truth.len() {
        return Err(Error::dims(format!(
            "{} estimate masks against {} truth masks",
            estimates.len(),
            truth.len()
        )));
    }
    let mut acc = PdPfa::default();
    for (est, tru) in estimates.iter().zip(truth) {
        if est.flags().len() != tru.flags().len() {
            return Err(Error::dims(format!(
                "estimate mask has {} cells, truth mask has {}",
                est.flags().len(),
                tru.flags().len()
            )));
        }
        for (&e, &c) in est.flags().iter().zip(tru.flags()) {
            acc.tally(c == 1, e == 1);
        }
    }
    Ok(acc)
}

/// One run of one method: per-frame decisions plus what actually happened.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Effective change frame; `T + 1` on a null run.
    pub change_frame: usize,
    /// Per-frame decision masks for `t = 2..=T`, in order.
    pub flags: Vec<ChangeMask>,
    pub truth: GroundTruth,
}

impl RunResult {
    /// Frames carrying at least one flag, ascending.
    pub fn flagged_frames(&self) -> Vec<usize> {
        self.flags
            .iter()
            .filter(|m| m.any())
            .map(|m| m.frame)
            .collect()
    }

    /// First flagged frame, the change-point estimate.
    pub fn first_alarm(&self) -> Option<usize> {
        self.flags.iter().find(|m| m.any()).map(|m| m.frame)
    }

    pub fn outcome(&self) -> Result<RunOutcome> {
        detection_delay(&self.flagged_frames(), self.change_frame)
    }

    /// Pool this run's per-pixel counts against its ground truth.
    pub fn pd_pfa(&self) -> PdPfa {
        let mut acc = PdPfa::default();
        for mask in &self.flags {
            for (n, &f) in mask.flags().iter().enumerate() {
                acc.tally(self.truth.flag(mask.frame, n), f == 1);
            }
        }
        acc
    }
}

/// Background block levels, cycled over partition segments.
const BLOCK_LEVELS: [f64; 4] = [-1.5, -0.5, 0.5, 1.5];

/// A complete synthetic experiment: image geometry, background layout,
/// change, noise level, and the detector/segmentation settings.
///
/// The background is piecewise constant on the blocks of a step-`step` grid
/// partition, with level `amplitude * {-1.5, -0.5, 0.5, 1.5}` cycling over
/// block indices, identical in every band. The change adds
/// `change_scale * amplitude` to every band of one block, so it respects the
/// whole-segment assumption by construction. The noise variance is derived
/// from `snr_db` via `sigma^2 = mean(background^2) / 10^(snr/10)`;
/// `snr_db = +inf` gives a noiseless stream.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub frames: usize,
    /// 1-based change frame (ignored when `change_scale == 0`).
    pub change_frame: usize,
    pub snr_db: f64,
    /// Background block amplitude.
    pub amplitude: f64,
    /// Change offset per band, in units of `amplitude`; 0 gives a null stream.
    pub change_scale: f64,
    /// Which layout block carries the change.
    pub change_segment: usize,
    /// Grid step of the background layout and the segmentation.
    pub step: usize,
    pub compactness: f64,
    pub iterations: usize,
    pub slow_rate: f64,
    pub fast_rate: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub burn_in: usize,
    /// Re-segment each run from its own first frame (the full pipeline);
    /// false uses the known grid layout directly.
    pub resegment: bool,
    /// Detector noise variance override; None uses the true variance.
    /// Required for detection on noiseless streams, where thresholds must
    /// come from a nonzero reference variance.
    pub calibration_noise: Option<f64>,
}

impl Scenario {
    /// 10x10, 9 bands, 70 frames, change of one 21-pixel block at t=16,
    /// 10 dB; slow/fast rates 0.01/0.8.
    pub fn example1() -> Self {
        Scenario {
            height: 10,
            width: 10,
            bands: 9,
            frames: 70,
            change_frame: 16,
            snr_db: 10.0,
            amplitude: 10.0,
            change_scale: 0.4,
            change_segment: 1,
            step: 6,
            compactness: 10.0,
            iterations: 10,
            slow_rate: 0.01,
            fast_rate: 0.8,
            gamma: 0.1,
            alpha: 0.05,
            burn_in: 0,
            resegment: true,
            calibration_noise: None,
        }
    }

    /// 50x50, 7 bands, 1000 frames, change of one 25-pixel block at t=301,
    /// 10 dB; slow/fast rates 0.15/0.5 and a 100-frame burn-in.
    pub fn example2() -> Self {
        Scenario {
            height: 50,
            width: 50,
            bands: 7,
            frames: 1000,
            change_frame: 301,
            snr_db: 10.0,
            amplitude: 10.0,
            change_scale: 0.4,
            change_segment: 1,
            step: 5,
            compactness: 10.0,
            iterations: 10,
            slow_rate: 0.15,
            fast_rate: 0.5,
            gamma: 0.1,
            alpha: 0.05,
            burn_in: 100,
            resegment: true,
            calibration_noise: None,
        }
    }

    /// The block partition the background (and the change support) lives on.
    pub fn layout(&self) -> Result<Labeling> {
        grid_partition(self.height, self.width, self.step)
    }

    /// Band-major `L x N` static background.
    pub fn background(&self) -> Result<Vec<f64>> {
        if !(self.amplitude.is_finite()) {
            return Err(Error::invalid(format!(
                "amplitude must be finite, got {}",
                self.amplitude
            )));
        }
        let layout = self.layout()?;
        let n = layout.pixel_count();
        let per_pixel: Vec<f64> = layout
            .labels()
            .iter()
            .map(|&l| self.amplitude * BLOCK_LEVELS[l as usize % BLOCK_LEVELS.len()])
            .collect();
        let mut out = Vec::with_capacity(self.bands.max(1) * n);
        for _ in 0..self.bands {
            out.extend_from_slice(&per_pixel);
        }
        Ok(out)
    }

    /// True per-band noise variance implied by `snr_db`.
    pub fn noise_variance(&self) -> Result<f64> {
        noise_variance_for_snr(&self.background()?, self.snr_db)
    }

    /// Band-major `L x N` change offset (all-zero when `change_scale == 0`).
    pub fn change(&self) -> Result<Vec<f64>> {
        let layout = self.layout()?;
        let n = layout.pixel_count();
        let mut out = vec![0.0; self.bands.max(1) * n];
        if self.change_scale != 0.0 {
            if !self.change_scale.is_finite() {
                return Err(Error::invalid(format!(
                    "change scale must be finite, got {}",
                    self.change_scale
                )));
            }
            let members = layout.segment_members();
            let block = members.get(self.change_segment).ok_or_else(|| {
                Error::invalid(format!(
                    "change segment {} does not exist; the layout has {} blocks",
                    self.change_segment,
                    members.len()
                ))
            })?;
            let offset = self.change_scale * self.amplitude;
            for band in 0..self.bands {
                for &p in block {
                    out[band * n + p] = offset;
                }
            }
        }
        Ok(out)
    }

    pub fn simulator_config(&self) -> Result<SimulatorConfig> {
        let config = SimulatorConfig {
            background: self.background()?,
            change: self.change()?,
            change_frame: self.change_frame,
            frames: self.frames,
            noise_variance: self.noise_variance()?,
            bands: self.bands,
            partition: self.layout()?,
        };
        config.validate()?;
        Ok(config)
    }

    /// Detector settings with this scenario's default level `alpha`.
    pub fn detector_config(&self) -> Result<DetectorConfig> {
        self.detector_config_at(self.alpha)
    }

    /// Detector settings at an explicit operating point.
    pub fn detector_config_at(&self, alpha: f64) -> Result<DetectorConfig> {
        let noise = match self.calibration_noise {
            Some(v) => v,
            None => self.noise_variance()?,
        };
        let mut config = DetectorConfig::new(self.slow_rate, self.fast_rate, self.gamma, alpha, noise);
        config.burn_in = self.burn_in;
        config.validate()?;
        Ok(config)
    }

    pub fn superpixel_params(&self) -> SuperpixelParams {
        SuperpixelParams {
            step: self.step,
            compactness: self.compactness,
            iterations: self.iterations,
        }
    }

    /// The detector's segmentation for a run starting with `first`.
    pub fn partition(&self, first: &Frame) -> Result<Labeling> {
        if self.resegment {
            slic_segment(first, &self.superpixel_params())
        } else {
            self.layout()
        }
    }
}

/// Run one method once over one freshly simulated stream.
pub fn single_run(
    scenario: &Scenario,
    method: Method,
    operating_point: f64,
    seed: u64,
) -> Result<RunResult> {
    let sim = scenario.simulator_config()?;
    let (seq, truth) = simulate_sequence(&sim, seed)?;
    let labeling = match method {
        Method::DaGfss => Some(scenario.partition(seq.frame(0))?),
        Method::Cva => None,
    };
    run_on_sequence(scenario, method, operating_point, &seq, labeling, truth)
}

fn run_on_sequence(
    scenario: &Scenario,
    method: Method,
    operating_point: f64,
    seq: &ImageSequence,
    labeling: Option<Labeling>,
    truth: GroundTruth,
) -> Result<RunResult> {
    let change_frame = if truth.has_change() {
        truth.change_frame
    } else {
        seq.len() + 1
    };
    let mut flags = Vec::with_capacity(seq.len().saturating_sub(1));
    match method {
        Method::DaGfss => {
            let labeling =
                labeling.ok_or_else(|| Error::invalid("detector runs need a segmentation"))?;
            let config = scenario.detector_config_at(operating_point)?;
            let mut detector = Detector::new(labeling, config)?;
            for t in 0..seq.len() {
                if let Some(stats) = detector.push(seq.frame(t))? {
                    flags.push(stats.flags);
                }
            }
        }
        Method::Cva => {
            let mut detector = CvaDetector::new(operating_point)?;
            for t in 0..seq.len() {
                if let Some((_, mask)) = detector.push(seq.frame(t))? {
                    flags.push(mask);
                }
            }
        }
    }
    Ok(RunResult {
        change_frame,
        flags,
        truth,
    })
}

/// Which aggregate a metrics table reports per operating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// Mean detection delay over detected runs, with the per-run
    /// false-alarm probability alongside.
    MeanDelay,
    /// Pooled per-pixel detection/false-alarm probabilities.
    PdPfa,
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delay" => Ok(MetricKind::MeanDelay),
            "pdpfa" => Ok(MetricKind::PdPfa),
            other => Err(Error::invalid(format!(
                "unknown metric {other:?}, expected \"delay\" or \"pdpfa\""
            ))),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::MeanDelay => "delay",
            MetricKind::PdPfa => "pdpfa",
        })
    }
}

/// One operating point's aggregates over all runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub operating_point: f64,
    /// Per-run false-alarm probability (delay metric) or pooled per-pixel
    /// false-alarm probability (pd/pfa metric).
    pub pfa: Option<f64>,
    /// Mean delay or pooled detection probability; None when no run
    /// qualified (or the truth had no changed cell).
    pub value: Option<f64>,
    pub false_alarm_runs: u64,
    pub undetected_runs: u64,
    pub runs: u64,
    /// Frames with at least one flag, pooled over runs.
    pub alarm_frames: u64,
    /// Frames at which flagging was possible (past burn-in), pooled.
    pub tested_frames: u64,
}

impl MetricsRow {
    /// Per-frame family-wise alarm rate, pooled over runs.
    pub fn frame_alarm_rate(&self) -> Option<f64> {
        (self.tested_frames > 0).then(|| self.alarm_frames as f64 / self.tested_frames as f64)
    }

    /// Runs that detected the change without a prior false alarm.
    pub fn detected_runs(&self) -> u64 {
        self.runs - self.false_alarm_runs - self.undetected_runs
    }
}

/// Rows in grid order, one per operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub metric: MetricKind,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    /// CSV with columns
    /// `operating_point,pfa,pd_or_delay,false_alarm_runs,undetected_runs,runs`.
    /// Undefined values are written as `NA`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record([
            "operating_point",
            "pfa",
            "pd_or_delay",
            "false_alarm_runs",
            "undetected_runs",
            "runs",
        ])
        .map_err(|e| Error::format("CSV", e.to_string()))?;
        for row in &self.rows {
            csv.write_record(&[
                row.operating_point.to_string(),
                option_field(row.pfa),
                option_field(row.value),
                row.false_alarm_runs.to_string(),
                row.undetected_runs.to_string(),
                row.runs.to_string(),
            ])
            .map_err(|e| Error::format("CSV", e.to_string()))?;
        }
        csv.flush()?;
        Ok(())
    }
}

fn option_field(v: Option<f64>) -> String {
    match v {
        Some(v) => v.to_string(),
        None => "NA".to_string(),
    }
}

/// Integer-only per-grid-point accumulator, so that parallel merge order
/// cannot change any result.
#[derive(Debug, Clone, Copy, Default)]
struct GridAccum {
    false_alarm_runs: u64,
    detected_runs: u64,
    undetected_runs: u64,
    delay_sum: u64,
    counts: PdPfa,
    alarm_frames: u64,
    tested_frames: u64,
}

impl GridAccum {
    fn absorb(&mut self, result: &RunResult, tested_frames: u64) -> Result<()> {
        match result.outcome()? {
            RunOutcome::FalseAlarm { .. } => self.false_alarm_runs += 1,
            RunOutcome::Detected { delay } => {
                self.detected_runs += 1;
                self.delay_sum += delay as u64;
            }
            RunOutcome::Undetected => self.undetected_runs += 1,
        }
        self.counts.merge(&result.pd_pfa());
        self.alarm_frames += result.flags.iter().filter(|m| m.any()).count() as u64;
        self.tested_frames += tested_frames;
        Ok(())
    }

    fn merge(&mut self, other: &GridAccum) {
        self.false_alarm_runs += other.false_alarm_runs;
        self.detected_runs += other.detected_runs;
        self.undetected_runs += other.undetected_runs;
        self.delay_sum += other.delay_sum;
        self.counts.merge(&other.counts);
        self.alarm_frames += other.alarm_frames;
        self.tested_frames += other.tested_frames;
    }
}

fn validate_grid(method: Method, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("the operating-point grid must be non-empty"));
    }
    for &g in grid {
        match method {
            Method::DaGfss if !(g > 0.0 && g < 1.0) => {
                return Err(Error::invalid(format!(
                    "alpha grid values must lie strictly inside (0, 1), got {g}"
                )));
            }
            Method::Cva if !(g >= 0.0 && g.is_finite()) => {
                return Err(Error::invalid(format!(
                    "tau grid values must be non-negative and finite, got {g}"
                )));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Frames at which `method` can raise a flag in one run of `scenario`.
fn testable_frames(scenario: &Scenario, method: Method) -> u64 {
    let last = scenario.frames as u64;
    let first = match method {
        Method::DaGfss => (scenario.burn_in as u64 + 1).max(2),
        Method::Cva => 2,
    };
    last.saturating_sub(first - 1)
}

/// Sweep a grid of operating points over `runs` independent streams.
///
/// Run `i` draws its stream from `seed + i`, is simulated and (for the
/// detector) segmented once, and then evaluated at every grid point, so the
/// table is deterministic given `(scenario, method, grid, runs, seed)` and
/// independent of scheduling.
pub fn monte_carlo(
    scenario: &Scenario,
    method: Method,
    metric: MetricKind,
    grid: &[f64],
    runs: usize,
    seed: u64,
) -> Result<MetricsTable> {
    if runs == 0 {
        return Err(Error::invalid("at least one run is required"));
    }
    validate_grid(method, grid)?;
    let sim = scenario.simulator_config()?;
    let tested = testable_frames(scenario, method);

    let accums = (0..runs)
        .into_par_iter()
        .map(|i| -> Result<Vec<GridAccum>> {
            let run_seed = seed.wrapping_add(i as u64);
            let (seq, truth) = simulate_sequence(&sim, run_seed)?;
            let labeling = match method {
                Method::DaGfss => Some(scenario.partition(seq.frame(0))?),
                Method::Cva => None,
            };
            let mut per_grid = vec![GridAccum::default(); grid.len()];
            for (acc, &point) in per_grid.iter_mut().zip(grid) {
                let result = run_on_sequence(
                    scenario,
                    method,
                    point,
                    &seq,
                    labeling.clone(),
                    truth.clone(),
                )?;
                acc.absorb(&result, tested)?;
            }
            Ok(per_grid)
        })
        .try_reduce(
            || vec![GridAccum::default(); grid.len()],
            |mut left, right| {
                for (l, r) in left.iter_mut().zip(&right) {
                    l.merge(r);
                }
                Ok(left)
            },
        )?;

    let rows = grid
        .iter()
        .zip(&accums)
        .map(|(&point, acc)| {
            let (pfa, value) = match metric {
                MetricKind::MeanDelay => (
                    Some(acc.false_alarm_runs as f64 / runs as f64),
                    (acc.detected_runs > 0)
                        .then(|| acc.delay_sum as f64 / acc.detected_runs as f64),
                ),
                MetricKind::PdPfa => (acc.counts.pfa(), acc.counts.pd()),
            };
            MetricsRow {
                operating_point: point,
                pfa,
                value,
                false_alarm_runs: acc.false_alarm_runs,
                undetected_runs: acc.undetected_runs,
                runs: runs as u64,
                alarm_frames: acc.alarm_frames,
                tested_frames: acc.tested_frames,
            }
        })
        .collect();
    Ok(MetricsTable { metric, rows })
}

/// Mean delays at an empirically matched per-run false-alarm probability.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedDelayRow {
    pub target_pfa: f64,
    /// Scalar threshold on the per-frame maximum statistic that realizes the
    /// target false-alarm count.
    pub threshold: f64,
    pub false_alarm_runs: u64,
    pub detected_runs: u64,
    pub undetected_runs: u64,
    pub runs: u64,
    pub mean_delay: Option<f64>,
}

/// CSV for matched-delay rows; columns
/// `target_pfa,threshold,false_alarm_runs,detected_runs,undetected_runs,runs,mean_delay`.
pub fn write_matched_csv<W: Write>(writer: W, rows: &[MatchedDelayRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record([
        "target_pfa",
        "threshold",
        "false_alarm_runs",
        "detected_runs",
        "undetected_runs",
        "runs",
        "mean_delay",
    ])
    .map_err(|e| Error::format("CSV", e.to_string()))?;
    for row in rows {
        csv.write_record(&[
            row.target_pfa.to_string(),
            row.threshold.to_string(),
            row.false_alarm_runs.to_string(),
            row.detected_runs.to_string(),
            row.undetected_runs.to_string(),
            row.runs.to_string(),
            option_field(row.mean_delay),
        ])
        .map_err(|e| Error::format("CSV", e.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

/// Per-frame maximum decision statistic of one run, for `t = 2..=T`.
///
/// For the detector this is `max_n r(n) / sigma_R^2(n)` over testable
/// vertices — the quantity a scalar threshold sweep of `alpha` acts on — and
/// for CVA the maximum magnitude. Frames suppressed by burn-in carry
/// negative infinity so they can never cross a threshold.
fn max_statistic_trajectory(
    scenario: &Scenario,
    method: Method,
    sim: &SimulatorConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let (seq, _) = simulate_sequence(sim, seed)?;
    let mut out = Vec::with_capacity(seq.len().saturating_sub(1));
    match method {
        Method::DaGfss => {
            let labeling = scenario.partition(seq.frame(0))?;
            let config = scenario.detector_config_at(scenario.alpha)?;
            let mut detector = Detector::new(labeling, config)?;
            let sigma = detector.sigma_r_sq().to_vec();
            for t in 0..seq.len() {
                if let Some(stats) = detector.push(seq.frame(t))? {
                    let m = if stats.frame <= scenario.burn_in {
                        f64::NEG_INFINITY
                    } else {
                        stats
                            .statistic
                            .iter()
                            .zip(&sigma)
                            .filter(|&(_, &s)| s > 0.0)
                            .map(|(&r, &s)| r / s)
                            .fold(f64::NEG_INFINITY, f64::max)
                    };
                    out.push(m);
                }
            }
        }
        Method::Cva => {
            for t in 1..seq.len() {
                let magnitudes = cva_magnitude(seq.frame(t), seq.frame(t - 1))?;
                out.push(magnitudes.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    Ok(out)
}

/// Compare-ready mean delays at matched per-run false-alarm probabilities.
///
/// Per run, the per-frame maximum statistic is tracked; for each target `p`,
/// a scalar threshold is placed between the `k`-th and `(k+1)`-th largest
/// pre-change maxima with `k = round(p * runs)`, so that (up to ties) exactly
/// `k` runs alarm before the change. Calling this for two methods with equal
/// `(scenario, runs, seed)` compares them on identical streams at identical
/// realized false-alarm rates.
pub fn matched_pfa_delays(
    scenario: &Scenario,
    method: Method,
    targets: &[f64],
    runs: usize,
    seed: u64,
) -> Result<Vec<MatchedDelayRow>> {
    if runs == 0 {
        return Err(Error::invalid("at least one run is required"));
    }
    if targets.is_empty() {
        return Err(Error::invalid("at least one target is required"));
    }
    for &p in targets {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!(
                "target false-alarm probabilities must lie strictly inside (0, 1), got {p}"
            )));
        }
    }
    if scenario.change_scale == 0.0 {
        return Err(Error::invalid(
            "matched-delay comparison needs a change to detect",
        ));
    }
    let change_frame = scenario.change_frame;
    let first_decision = match method {
        Method::DaGfss => (scenario.burn_in + 1).max(2),
        Method::Cva => 2,
    };
    if first_decision >= change_frame {
        return Err(Error::invalid(format!(
            "no pre-change decision frames: decisions start at {first_decision}, \
             the change is at {change_frame}"
        )));
    }
    let sim = scenario.simulator_config()?;

    let trajectories: Vec<Vec<f64>> = (0..runs)
        .into_par_iter()
        .map(|i| max_statistic_trajectory(scenario, method, &sim, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;

    // trajectory index j holds frame t = j + 2
    let pre = change_frame - 2;
    let pre_max: Vec<f64> = trajectories
        .iter()
        .map(|tr| tr[..pre].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut sorted = pre_max.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("statistics are never NaN"));

    let mut rows = Vec::with_capacity(targets.len());
    for &target in targets {
        let k = (target * runs as f64).round() as usize;
        if k >= runs {
            return Err(Error::invalid(format!(
                "target false-alarm probability {target} rounds to {k} of {runs} runs; \
                 no clean runs would remain"
            )));
        }
        let threshold = if k == 0 {
            sorted[0]
        } else {
            0.5 * (sorted[k - 1] + sorted[k])
        };
        if !threshold.is_finite() {
            return Err(Error::invalid(
                "the pre-change window carries no testable statistics",
            ));
        }
        let mut false_alarm_runs = 0u64;
        let mut detected_runs = 0u64;
        let mut undetected_runs = 0u64;
        let mut delay_sum = 0u64;
        for (tr, &pm) in trajectories.iter().zip(&pre_max) {
            if pm > threshold {
                false_alarm_runs += 1;
                continue;
            }
            match tr[pre..].iter().position(|&m| m > threshold) {
                Some(j) => {
                    detected_runs += 1;
                    delay_sum += j as u64;
                }
                None => undetected_runs += 1,
            }
        }
        rows.push(MatchedDelayRow {
            target_pfa: target,
            threshold,
            false_alarm_runs,
            detected_runs,
            undetected_runs,
            runs: runs as u64,
            mean_delay: (detected_runs > 0).then(|| delay_sum as f64 / detected_runs as f64),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_and_metric_parse_and_print() {
        assert_eq!("dagfss".parse::<Method>().unwrap(), Method::DaGfss);
        assert_eq!("cva".parse::<Method>().unwrap(), Method::Cva);
        assert_eq!(Method::DaGfss.to_string(), "dagfss");
        let msg = "mad".parse::<Method>().unwrap_err().to_string();
        assert!(msg.contains("dagfss") && msg.contains("cva"), "{msg}");
        assert_eq!("delay".parse::<MetricKind>().unwrap(), MetricKind::MeanDelay);
        assert_eq!("pdpfa".parse::<MetricKind>().unwrap(), MetricKind::PdPfa);
        assert!("roc".parse::<MetricKind>().is_err());
    }

    #[test]
    fn detection_delay_classifies_runs() {
        assert_eq!(
            detection_delay(&[20], 16).unwrap(),
            RunOutcome::Detected { delay: 4 }
        );
        assert_eq!(
            detection_delay(&[10, 20], 16).unwrap(),
            RunOutcome::FalseAlarm { frame: 10 }
        );
        assert_eq!(detection_delay(&[], 16).unwrap(), RunOutcome::Undetected);
        assert_eq!(
            detection_delay(&[16], 16).unwrap(),
            RunOutcome::Detected { delay: 0 }
        );
        assert!(detection_delay(&[1], 16).is_err());
        assert!(detection_delay(&[5], 1).is_err());
    }

    fn mask(flags: &[u8]) -> ChangeMask {
        ChangeMask::new(1, flags.len(), flags.to_vec()).unwrap()
    }

    #[test]
    fn pd_pfa_matches_hand_counts() {
        // Perfect estimate with some ones: Pd = 1, Pfa = 0.
        let truth = [mask(&[1, 1, 0, 0]), mask(&[0, 0, 0, 0])];
        let perfect = pd_pfa(&truth.clone(), &truth).unwrap();
        assert_eq!(
            perfect,
            PdPfa {
                detected: 2,
                change_cells: 2,
                false_flags: 0,
                clean_cells: 6
            }
        );
        assert_eq!(perfect.pd(), Some(1.0));
        assert_eq!(perfect.pfa(), Some(0.0));

        // Flag everything: Pd = 1, Pfa = 1.
        let ones = [mask(&[1, 1, 1, 1]), mask(&[1, 1, 1, 1])];
        let all = pd_pfa(&ones, &truth).unwrap();
        assert_eq!(all.pd(), Some(1.0));
        assert_eq!(all.pfa(), Some(1.0));

        // Null truth with 3 spurious flags over 8 cells: Pfa = 3/8, Pd undefined.
        let null = [mask(&[0, 0, 0, 0]), mask(&[0, 0, 0, 0])];
        let noisy = [mask(&[1, 0, 1, 0]), mask(&[0, 0, 0, 1])];
        let spurious = pd_pfa(&noisy, &null).unwrap();
        assert_eq!(spurious.pd(), None);
        assert_eq!(spurious.pfa(), Some(3.0 / 8.0));
        assert_eq!(spurious.false_flags, 3);
        assert_eq!(spurious.clean_cells, 8);

        assert!(pd_pfa(&ones, &truth[..1]).is_err());
    }

    #[test]
    fn pd_pfa_is_permutation_invariant() {
        let est = [mask(&[1, 0, 1, 0, 1])];
        let tru = [mask(&[1, 1, 0, 0, 0])];
        let perm = [3usize, 0, 4, 1, 2];
        let permute = |m: &ChangeMask| {
            let f = m.flags();
            mask(&perm.iter().map(|&i| f[i]).collect::<Vec<_>>())
        };
        let direct = pd_pfa(&est, &tru).unwrap();
        let shuffled = pd_pfa(&[permute(&est[0])], &[permute(&tru[0])]).unwrap();
        assert_eq!(direct, shuffled);
    }

    #[test]
    fn example1_layout_background_and_noise() {
        let scenario = Scenario::example1();
        let layout = scenario.layout().unwrap();
        assert_eq!(layout.segment_sizes(), vec![49, 21, 21, 9]);
        let background = scenario.background().unwrap();
        assert_eq!(background.len(), 9 * 100);
        let mean_sq =
            background.iter().map(|v| v * v).sum::<f64>() / background.len() as f64;
        assert!((mean_sq - 141.0).abs() < 1e-9, "mean square {mean_sq}");
        let sigma2 = scenario.noise_variance().unwrap();
        assert!((sigma2 - 14.1).abs() < 1e-9, "sigma2 {sigma2}");

        // The change covers exactly the 21 pixels of block 1, in every band.
        let change = scenario.change().unwrap();
        let members = layout.segment_members();
        let block = &members[1];
        assert_eq!(block.len(), 21);
        for band in 0..9 {
            for p in 0..100 {
                let expected = if block.contains(&p) { 4.0 } else { 0.0 };
                assert_eq!(change[band * 100 + p], expected);
            }
        }
        assert!(scenario.simulator_config().is_ok());
        assert!(scenario.detector_config_at(0.05).is_ok());
        assert!(Scenario::example2().simulator_config().is_ok());
    }

    /// Small, fast scenario for engine-level tests.
    fn small_scenario() -> Scenario {
        let mut s = Scenario::example1();
        s.frames = 12;
        s.change_frame = 6;
        s
    }

    #[test]
    fn single_run_is_deterministic() {
        let scenario = small_scenario();
        for method in [Method::DaGfss, Method::Cva] {
            let op = match method {
                Method::DaGfss => 0.05,
                Method::Cva => 25.0,
            };
            let a = single_run(&scenario, method, op, 9).unwrap();
            let b = single_run(&scenario, method, op, 9).unwrap();
            assert_eq!(a.change_frame, 6);
            assert_eq!(a.flags.len(), 11);
            for (x, y) in a.flags.iter().zip(&b.flags) {
                assert_eq!(x.flags(), y.flags());
                assert_eq!(x.frame, y.frame);
            }
        }
    }

    #[test]
    fn noiseless_streams_detect_immediately_and_never_false_alarm() {
        let mut scenario = small_scenario();
        scenario.snr_db = f64::INFINITY;
        scenario.calibration_noise = Some(14.1);
        for (method, grid) in [(Method::DaGfss, vec![0.05, 0.2]), (Method::Cva, vec![1.0])] {
            let table =
                monte_carlo(&scenario, method, MetricKind::MeanDelay, &grid, 3, 1).unwrap();
            for row in &table.rows {
                assert_eq!(row.false_alarm_runs, 0, "{method}");
                assert_eq!(row.undetected_runs, 0, "{method}");
                assert_eq!(row.value, Some(0.0), "{method}");
                assert_eq!(row.pfa, Some(0.0), "{method}");
                assert_eq!(row.runs, 3);
            }
        }
    }

    #[test]
    fn monte_carlo_is_deterministic_including_csv_bytes() {
        let scenario = small_scenario();
        let grid = [0.05, 0.2];
        let a = monte_carlo(&scenario, Method::DaGfss, MetricKind::MeanDelay, &grid, 3, 7)
            .unwrap();
        let b = monte_carlo(&scenario, Method::DaGfss, MetricKind::MeanDelay, &grid, 3, 7)
            .unwrap();
        assert_eq!(a, b);
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        a.write_csv(&mut bytes_a).unwrap();
        b.write_csv(&mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
        let text = String::from_utf8(bytes_a).unwrap();
        assert!(text.starts_with(
            "operating_point,pfa,pd_or_delay,false_alarm_runs,undetected_runs,runs\n"
        ));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn null_scenario_reports_no_detections_and_no_changed_cells() {
        let mut scenario = small_scenario();
        scenario.change_scale = 0.0;
        let delay = monte_carlo(
            &scenario,
            Method::DaGfss,
            MetricKind::MeanDelay,
            &[0.05],
            4,
            3,
        )
        .unwrap();
        assert_eq!(delay.rows[0].value, None);
        assert_eq!(
            delay.rows[0].false_alarm_runs + delay.rows[0].undetected_runs,
            4
        );
        let pooled = monte_carlo(&scenario, Method::Cva, MetricKind::PdPfa, &[5.0], 4, 3)
            .unwrap();
        assert_eq!(pooled.rows[0].value, None, "no changed cell exists");
        assert!(pooled.rows[0].pfa.is_some());
    }

    #[test]
    fn monte_carlo_rejects_bad_arguments() {
        let scenario = small_scenario();
        assert!(monte_carlo(
            &scenario,
            Method::DaGfss,
            MetricKind::MeanDelay,
            &[],
            2,
            0
        )
        .is_err());
        assert!(monte_carlo(
            &scenario,
            Method::DaGfss,
            MetricKind::MeanDelay,
            &[1.5],
            2,
            0
        )
        .is_err());
        assert!(monte_carlo(
            &scenario,
            Method::Cva,
            MetricKind::MeanDelay,
            &[-1.0],
            2,
            0
        )
        .is_err());
        assert!(monte_carlo(
            &scenario,
            Method::DaGfss,
            MetricKind::MeanDelay,
            &[0.05],
            0,
            0
        )
        .is_err());
    }

    #[test]
    fn matched_rows_realize_the_target_false_alarm_count() {
        let scenario = small_scenario();
        for method in [Method::DaGfss, Method::Cva] {
            let rows = matched_pfa_delays(&scenario, method, &[0.25], 12, 17).unwrap();
            let row = &rows[0];
            assert_eq!(row.false_alarm_runs, 3, "{method}");
            assert_eq!(row.detected_runs + row.undetected_runs, 9, "{method}");
            assert!(row.threshold.is_finite());
            let again = matched_pfa_delays(&scenario, method, &[0.25], 12, 17).unwrap();
            assert_eq!(rows, again);
        }
    }

    #[test]
    fn matched_protocol_validates_its_preconditions() {
        let scenario = small_scenario();
        // Rounds to every run a false alarm.
        assert!(matched_pfa_delays(&scenario, Method::Cva, &[0.9], 2, 0).is_err());
        let mut null = small_scenario();
        null.change_scale = 0.0;
        assert!(matched_pfa_delays(&null, Method::Cva, &[0.1], 4, 0).is_err());
        let mut late = small_scenario();
        late.burn_in = 7; // burn-in swallows the whole pre-change window
        assert!(matched_pfa_delays(&late, Method::DaGfss, &[0.1], 4, 0).is_err());
        assert!(matched_pfa_delays(&scenario, Method::Cva, &[0.0], 4, 0).is_err());
    }

    #[test]
    fn stronger_changes_are_detected_no_later() {
        // Seed-paired delay monotonicity on a change-magnitude grid.
        let mut mean_delays = Vec::new();
        for scale in [0.25, 0.5, 1.0] {
            let mut scenario = small_scenario();
            scenario.frames = 30;
            scenario.change_frame = 10;
            scenario.slow_rate = 0.15;
            scenario.fast_rate = 0.5;
            scenario.change_scale = scale;
            let table = monte_carlo(
                &scenario,
                Method::DaGfss,
                MetricKind::MeanDelay,
                &[0.05],
                24,
                81,
            )
            .unwrap();
            let row = &table.rows[0];
            assert!(row.detected_runs() > 0, "scale {scale} detected nothing");
            mean_delays.push(row.value.unwrap());
        }
        assert!(
            mean_delays.windows(2).all(|w| w[0] >= w[1]),
            "delays {mean_delays:?} not monotone"
        );
    }
}
