//! The streaming change-point detector.
//!
//! Per pixel and band, two exponentially weighted moving averages with
//! forgetting factors `slow_rate < fast_rate` track the stream; their
//! difference is a zero-mean signal before a change and picks up the change
//! profile afterwards. Each band of the difference is low-pass filtered on
//! the superpixel graph, and the per-vertex statistic
//!
//! `r(n) = sum over bands of (sum of the filtered band over n's closed
//! neighborhood)^2`
//!
//! is compared against `xi(n) = sigma_R^2(n) * Q_{chi2(L)}(1 - alpha / N)`,
//! a Bonferroni-corrected chi-squared quantile scaled by the per-vertex null
//! variance
//!
//! `sigma_R^2(n) = eta * sigma^2 * ||H 1_{closed neighborhood of n}||^2`,
//!
//! where `eta` is the stationary variance factor of the dual-EMA difference.
//! Vertices with `sigma_R^2 = 0` (e.g. when the whole image is one
//! superpixel, so the filter annihilates every neighborhood indicator) are
//! untestable and never flag.
//!
//! The engine ([`Detector`]) runs entirely on the clique closed forms in
//! O(N * L) per frame; the dense spectral routes ([`test_statistic`],
//! [`sigma_r_sq`]) exist as an independent cross-check and for ad-hoc use.

use std::io::Write;

use crate::error::{Error, Result};
use crate::filter::{clique_filter, GraphFilter};
use crate::formats::{ChangeMask, Frame, ImageSequence};
use crate::graph::{build_graph, neighborhood_sums, PixelGraph};
use crate::special::chi2_quantile;
use crate::superpixel::Labeling;

/// Parameters of one detector instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Forgetting factor of the slow average (config key `lambda`).
    pub slow_rate: f64,
    /// Forgetting factor of the fast average (config key `Lambda`).
    pub fast_rate: f64,
    /// Low-pass cutoff of the graph filter (config key `gamma`).
    pub gamma: f64,
    /// Family-wise false-alarm level across all N per-vertex tests.
    pub alpha: f64,
    /// Per-band noise variance `sigma^2` of the observations.
    pub noise_variance: f64,
    /// Flags are suppressed for frames `t <= burn_in`.
    pub burn_in: usize,
}

impl DetectorConfig {
    pub fn new(
        slow_rate: f64,
        fast_rate: f64,
        gamma: f64,
        alpha: f64,
        noise_variance: f64,
    ) -> Self {
        DetectorConfig {
            slow_rate,
            fast_rate,
            gamma,
            alpha,
            noise_variance,
            burn_in: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slow_rate > 0.0 && self.slow_rate < self.fast_rate && self.fast_rate < 1.0) {
            return Err(Error::invalid(format!(
                "averaging rates must satisfy 0 < lambda < Lambda < 1, got lambda = {}, Lambda = {}",
                self.slow_rate, self.fast_rate
            )));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!(
                "gamma must be positive and finite, got {}",
                self.gamma
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha must lie strictly inside (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.noise_variance > 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::invalid(format!(
                "sigma2 must be positive and finite, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

/// Stationary variance factor of the dual-EMA difference of a unit-variance
/// white stream: `Var(D_t) -> eta * sigma^2` as `t -> infinity`.
pub fn eta(slow_rate: f64, fast_rate: f64) -> Result<f64> {
    for (name, r) in [("lambda", slow_rate), ("Lambda", fast_rate)] {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid(format!(
                "{name} must lie strictly inside (0, 1), got {r}"
            )));
        }
    }
    let a = slow_rate / (2.0 - slow_rate);
    let b = fast_rate / (2.0 - fast_rate);
    let cross = 2.0 * slow_rate * fast_rate
        / (slow_rate + fast_rate - slow_rate * fast_rate);
    Ok(a + b - cross)
}

/// One EMA step, `state <- state + rate * (obs - state)`. The increment form
/// makes a matching observation an exact fixed point.
pub fn ema_update(state: &mut [f64], observation: &[f64], rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!(
            "EMA rate must lie in (0, 1], got {rate}"
        )));
    }
    if state.len() != observation.len() {
        return Err(Error::dims(format!(
            "EMA state holds {} entries, observation {}",
            state.len(),
            observation.len()
        )));
    }
    for (v, &y) in state.iter_mut().zip(observation) {
        *v += rate * (y - *v);
    }
    Ok(())
}

/// The pair of moving averages over one stream, band-major `L x N` in f64.
#[derive(Debug, Clone)]
pub struct DetectorState {
    slow: Vec<f64>,
    fast: Vec<f64>,
    bands: usize,
    pixels: usize,
    frame: usize,
}

impl DetectorState {
    /// Both averages start at the first observation.
    pub fn init(frame: &Frame) -> Self {
        let values: Vec<f64> = frame.values().iter().map(|&v| v as f64).collect();
        DetectorState {
            slow: values.clone(),
            fast: values,
            bands: frame.bands(),
            pixels: frame.pixel_count(),
            frame: 1,
        }
    }

    /// Advance both averages by one observation.
    pub fn update(&mut self, frame: &Frame, slow_rate: f64, fast_rate: f64) -> Result<()> {
        if frame.bands() != self.bands || frame.pixel_count() != self.pixels {
            return Err(Error::dims(format!(
                "frame shape {}x{} with {} bands does not match the stream ({} pixels, {} bands)",
                frame.height(),
                frame.width(),
                frame.bands(),
                self.pixels,
                self.bands
            )));
        }
        let obs: Vec<f64> = frame.values().iter().map(|&v| v as f64).collect();
        ema_update(&mut self.slow, &obs, slow_rate)?;
        ema_update(&mut self.fast, &obs, fast_rate)?;
        self.frame += 1;
        Ok(())
    }

    /// The difference signal `fast - slow`, band-major `L x N`.
    pub fn difference(&self) -> Vec<f64> {
        self.fast
            .iter()
            .zip(&self.slow)
            .map(|(f, s)| f - s)
            .collect()
    }

    /// 1-based index of the frame last absorbed.
    pub fn frame_index(&self) -> usize {
        self.frame
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn slow(&self) -> &[f64] {
        &self.slow
    }

    pub fn fast(&self) -> &[f64] {
        &self.fast
    }
}

/// Per-vertex null variances via the dense spectral route:
/// `eta * sigma2 * ||H 1_{closed neighborhood}||^2`, one filter application
/// per distinct segment.
pub fn sigma_r_sq(
    graph: &PixelGraph,
    filter: &GraphFilter,
    eta: f64,
    noise_variance: f64,
) -> Result<Vec<f64>> {
    validate_variance_args(eta, noise_variance)?;
    if filter.decomposition().len() != graph.vertex_count() {
        return Err(Error::dims(
            "filter decomposition does not match the graph size",
        ));
    }
    let n = graph.vertex_count();
    let mut out = vec![0.0; n];
    let mut indicator = vec![0.0; n];
    for members in graph.components() {
        for &p in members {
            indicator[p] = 1.0;
        }
        let filtered = filter.apply(&indicator)?;
        let energy: f64 = filtered.iter().map(|v| v * v).sum();
        let value = eta * noise_variance * energy;
        for &p in members {
            out[p] = value;
        }
        for &p in members {
            indicator[p] = 0.0;
        }
    }
    Ok(out)
}

/// Same quantity in closed form, O(N): the neighborhood indicator of a
/// clique lies in the filter's kernel, so
/// `||H 1_c||^2 = m_c - (u_1' 1_c)^2`.
pub fn clique_sigma_r_sq(
    labeling: &Labeling,
    eta: f64,
    noise_variance: f64,
) -> Result<Vec<f64>> {
    validate_variance_args(eta, noise_variance)?;
    let n = labeling.pixel_count();
    let sizes = labeling.segment_sizes();
    let degree_sum: usize = sizes.iter().map(|&m| m * (m - 1)).sum();
    let per_segment: Vec<f64> = sizes
        .iter()
        .map(|&m| {
            let mf = m as f64;
            let u1_dot = if degree_sum > 0 {
                mf * ((mf - 1.0) / degree_sum as f64).sqrt()
            } else {
                mf / (n as f64).sqrt()
            };
            eta * noise_variance * (mf - u1_dot * u1_dot).max(0.0)
        })
        .collect();
    Ok(labeling
        .labels()
        .iter()
        .map(|&l| per_segment[l as usize])
        .collect())
}

fn validate_variance_args(eta: f64, noise_variance: f64) -> Result<()> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!(
            "eta must be non-negative and finite, got {eta}"
        )));
    }
    if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
        return Err(Error::invalid(format!(
            "sigma2 must be non-negative and finite, got {noise_variance}"
        )));
    }
    Ok(())
}

/// Per-vertex statistic via the dense spectral route: filter each band of
/// `diff` (band-major, length `L * N`), take closed-neighborhood sums,
/// accumulate squares across bands.
pub fn test_statistic(
    diff: &[f64],
    graph: &PixelGraph,
    filter: &GraphFilter,
) -> Result<Vec<f64>> {
    let n = graph.vertex_count();
    if n == 0 || !diff.len().is_multiple_of(n) || diff.is_empty() {
        return Err(Error::dims(format!(
            "difference signal of length {} is not a positive multiple of {n} vertices",
            diff.len()
        )));
    }
    let bands = diff.len() / n;
    let mut r = vec![0.0; n];
    for l in 0..bands {
        let filtered = filter.apply(&diff[l * n..(l + 1) * n])?;
        let sums = neighborhood_sums(graph, &filtered)?;
        for (acc, s) in r.iter_mut().zip(&sums) {
            *acc += s * s;
        }
    }
    Ok(r)
}

/// Per-vertex decision thresholds: `sigma_r_sq[n]` times the chi-squared
/// quantile with `bands` degrees of freedom at `1 - alpha / num_tests`.
pub fn thresholds(
    sigma_r_sq: &[f64],
    bands: usize,
    alpha: f64,
    num_tests: usize,
) -> Result<Vec<f64>> {
    if num_tests == 0 {
        return Err(Error::invalid("number of tests must be >= 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    let per_test = alpha / num_tests as f64;
    let q = 1.0 - per_test;
    if q >= 1.0 {
        return Err(Error::invalid(
            "per-test level alpha / N underflows f64 precision",
        ));
    }
    let quantile = chi2_quantile(bands, q)?;
    Ok(sigma_r_sq.iter().map(|&s| s * quantile).collect())
}

/// Everything the detector reports about one frame.
#[derive(Debug, Clone)]
pub struct TestStatistics {
    /// 1-based frame index (always >= 2; the first frame only initializes).
    pub frame: usize,
    /// Per-vertex statistic `r(n)`.
    pub statistic: Vec<f64>,
    /// Per-vertex thresholds `xi(n)`.
    pub thresholds: Vec<f64>,
    /// The Bonferroni-corrected per-test level `alpha / N`.
    pub per_test_level: f64,
    /// Per-pixel decisions.
    pub flags: ChangeMask,
}

/// Streaming detector bound to one segmentation.
///
/// Per-frame work is O(N * L) via the clique closed forms; the spectral
/// decomposition is never materialized here.
#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    labeling: Labeling,
    graph: PixelGraph,
    eta: f64,
    /// Per-vertex null variance (constant on each segment).
    sigma: Vec<f64>,
    /// Per-segment null variance, indexed by segment id.
    sigma_per_segment: Vec<f64>,
    /// Per-segment threshold, indexed by segment id.
    xi_per_segment: Vec<f64>,
    per_test_level: f64,
    state: Option<DetectorState>,
}

impl Detector {
    pub fn new(labeling: Labeling, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let graph = build_graph(&labeling);
        let eta = eta(config.slow_rate, config.fast_rate)?;
        let sigma = clique_sigma_r_sq(&labeling, eta, config.noise_variance)?;
        let n = labeling.pixel_count();
        Ok(Detector {
            per_test_level: config.alpha / n as f64,
            config,
            labeling,
            graph,
            eta,
            sigma,
            sigma_per_segment: Vec::new(),
            xi_per_segment: Vec::new(),
            state: None,
        })
    }

    /// Absorb one frame. The first frame initializes the averages and yields
    /// no statistics; every later frame yields a full report.
    pub fn push(&mut self, frame: &Frame) -> Result<Option<TestStatistics>> {
        let Some(state) = self.state.as_mut() else {
            if frame.pixel_count() != self.labeling.pixel_count() {
                return Err(Error::dims(format!(
                    "frame has {} pixels, labeling has {}",
                    frame.pixel_count(),
                    self.labeling.pixel_count()
                )));
            }
            self.prepare_thresholds(frame.bands())?;
            self.state = Some(DetectorState::init(frame));
            return Ok(None);
        };
        state.update(frame, self.config.slow_rate, self.config.fast_rate)?;
        let t = state.frame_index();
        let diff = state.difference();

        let n = self.labeling.pixel_count();
        let bands = frame.bands();
        let k = self.labeling.segment_count();

        // r per segment: filter each band in closed form, sum it over each
        // segment (the closed neighborhood of all its members), square,
        // accumulate over bands. Broadcasting the per-segment value keeps
        // every per-vertex output bitwise constant within a segment.
        let mut r_per_segment = vec![0.0f64; k];
        let mut sums = vec![0.0f64; k];
        for l in 0..bands {
            let filtered = clique_filter(&self.labeling, self.config.gamma, &diff[l * n..(l + 1) * n])?;
            sums.fill(0.0);
            for (p, &lab) in self.labeling.labels().iter().enumerate() {
                sums[lab as usize] += filtered[p];
            }
            for c in 0..k {
                r_per_segment[c] += sums[c] * sums[c];
            }
        }

        let testing = t > self.config.burn_in;
        let mut flag_per_segment = vec![0u8; k];
        for c in 0..k {
            if testing && self.sigma_per_segment[c] > 0.0 && r_per_segment[c] > self.xi_per_segment[c]
            {
                flag_per_segment[c] = 1;
            }
        }

        let labels = self.labeling.labels();
        let statistic: Vec<f64> = labels.iter().map(|&l| r_per_segment[l as usize]).collect();
        let thresholds: Vec<f64> = labels.iter().map(|&l| self.xi_per_segment[l as usize]).collect();
        let flags: Vec<u8> = labels.iter().map(|&l| flag_per_segment[l as usize]).collect();
        let mask = ChangeMask::new(self.labeling.height(), self.labeling.width(), flags)?
            .at_frame(t);
        Ok(Some(TestStatistics {
            frame: t,
            statistic,
            thresholds,
            per_test_level: self.per_test_level,
            flags: mask,
        }))
    }

    fn prepare_thresholds(&mut self, bands: usize) -> Result<()> {
        let n = self.labeling.pixel_count();
        let per_vertex = thresholds(&self.sigma, bands, self.config.alpha, n)?;
        let k = self.labeling.segment_count();
        let mut sigma_seg = vec![0.0; k];
        let mut xi_seg = vec![0.0; k];
        for (p, &l) in self.labeling.labels().iter().enumerate() {
            sigma_seg[l as usize] = self.sigma[p];
            xi_seg[l as usize] = per_vertex[p];
        }
        self.sigma_per_segment = sigma_seg;
        self.xi_per_segment = xi_seg;
        Ok(())
    }

    /// Drop the averaged state, keeping the segmentation and calibration.
    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn labeling(&self) -> &Labeling {
        &self.labeling
    }

    pub fn graph(&self) -> &PixelGraph {
        &self.graph
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Per-vertex null variances (zero marks an untestable vertex).
    pub fn sigma_r_sq(&self) -> &[f64] {
        &self.sigma
    }

    /// Per-vertex thresholds; empty until the first frame fixes the band count.
    pub fn thresholds(&self) -> Vec<f64> {
        self.labeling
            .labels()
            .iter()
            .map(|&l| *self.xi_per_segment.get(l as usize).unwrap_or(&0.0))
            .collect()
    }

    /// Number of vertices with a positive null variance.
    pub fn testable_count(&self) -> usize {
        self.sigma.iter().filter(|&&s| s > 0.0).count()
    }

    /// True when no vertex can ever be tested (e.g. a single superpixel).
    pub fn is_degenerate(&self) -> bool {
        self.testable_count() == 0
    }

    /// 1-based index of the last absorbed frame (0 before the first push).
    pub fn frame_index(&self) -> usize {
        self.state.as_ref().map_or(0, DetectorState::frame_index)
    }

    pub fn state(&self) -> Option<&DetectorState> {
        self.state.as_ref()
    }
}

/// Noise variance estimate from the first `frames` frames: per band, the
/// squared scaled median absolute temporal first difference, averaged over
/// bands and halved (a difference of two independent frames doubles the
/// variance).
pub fn estimate_noise(seq: &ImageSequence, frames: usize) -> Result<f64> {
    if frames < 2 {
        return Err(Error::invalid("noise estimation needs at least 2 frames"));
    }
    if frames > seq.len() {
        return Err(Error::invalid(format!(
            "noise estimation window {frames} exceeds the sequence length {}",
            seq.len()
        )));
    }
    let n = seq.pixel_count();
    let mut acc = 0.0;
    let mut diffs = Vec::with_capacity((frames - 1) * n);
    for band in 0..seq.bands() {
        diffs.clear();
        for t in 1..frames {
            let prev = seq.frame(t - 1).band(band);
            let cur = seq.frame(t).band(band);
            for (a, b) in cur.iter().zip(prev) {
                diffs.push((*a as f64 - *b as f64).abs());
            }
        }
        diffs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = diffs.len() / 2;
        let median = if diffs.len() % 2 == 1 {
            diffs[mid]
        } else {
            0.5 * (diffs[mid - 1] + diffs[mid])
        };
        let scaled = 1.4826 * median;
        acc += scaled * scaled;
    }
    Ok(acc / (seq.bands() as f64 * 2.0))
}

/// Streaming CSV export of per-frame statistics.
/// Columns: `t, n, r, xi, flag`.
pub struct StatisticsWriter<W: Write> {
    csv: csv::Writer<W>,
}

impl<W: Write> StatisticsWriter<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["t", "n", "r", "xi", "flag"])
            .map_err(|e| Error::format("CSV", e.to_string()))?;
        Ok(StatisticsWriter { csv })
    }

    pub fn write_frame(&mut self, stats: &TestStatistics) -> Result<()> {
        let rows = stats
            .statistic
            .iter()
            .zip(&stats.thresholds)
            .zip(stats.flags.flags());
        for (n, ((r, xi), flag)) in rows.enumerate() {
            self.csv
                .write_record(&[
                    stats.frame.to_string(),
                    n.to_string(),
                    r.to_string(),
                    xi.to_string(),
                    flag.to_string(),
                ])
                .map_err(|e| Error::format("CSV", e.to_string()))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.csv.flush()?;
        Ok(())
    }
}

/// Write a batch of per-frame statistics as one CSV document.
pub fn write_statistics_csv<W: Write>(writer: W, stats: &[TestStatistics]) -> Result<()> {
    let mut out = StatisticsWriter::new(writer)?;
    for s in stats {
        out.write_frame(s)?;
    }
    out.flush()
}
