//! Flat `key = value` configuration files and `--set` overrides.
//!
//! Syntax: one `key = value` pair per line; blank lines and lines starting
//! with `#` are ignored; keys are case-sensitive (`lambda` and `Lambda` are
//! different rates). Duplicate keys are rejected rather than silently
//! resolved. Every consumer validates against its own closed key set so a
//! typo fails loudly instead of being ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::eval::Scenario;
use crate::superpixel::SuperpixelParams;

/// Keys understood by the detection pipeline (`segment` / `detect`).
pub const DETECTOR_KEYS: &[&str] = &[
    "lambda",
    "Lambda",
    "gamma",
    "alpha",
    "sigma2",
    "burn_in",
    "slic_step",
    "slic_compactness",
    "slic_iters",
];

/// Keys understood by scenario files (`simulate` / `roc`).
pub const SCENARIO_KEYS: &[&str] = &[
    "preset",
    "height",
    "width",
    "bands",
    "frames",
    "change_frame",
    "snr_db",
    "amplitude",
    "change_scale",
    "change_segment",
    "slic_step",
    "slic_compactness",
    "slic_iters",
    "lambda",
    "Lambda",
    "gamma",
    "alpha",
    "burn_in",
    "resegment",
    "calibration_sigma2",
];

/// An ordered bag of string settings with typed, key-naming accessors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValueConfig {
    values: BTreeMap<String, String>,
}

impl KeyValueConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = KeyValueConfig::new();
        for (number, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = split_assignment(line)
                .map_err(|e| Error::config(format!("line {}: {e}", number + 1)))?;
            if config.values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::config(format!(
                    "line {}: duplicate key {key:?}",
                    number + 1
                )));
            }
        }
        Ok(config)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Self::parse(&text)
    }

    /// Apply `key=value` overrides; existing keys are replaced.
    pub fn apply_overrides<I, S>(&mut self, overrides: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for item in overrides {
            let (key, value) = split_assignment(item.as_ref())
                .map_err(|e| Error::config(format!("override {:?}: {e}", item.as_ref())))?;
            self.values.insert(key.to_string(), value.to_string());
        }
        Ok(())
    }

    /// Reject any key outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for key in self.values.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::config(format!(
                    "unknown key {key:?}; known keys: {}",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                Error::config(format!("key {key:?}: cannot parse value {raw:?}: {e}"))
            }),
        }
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.parsed(key)
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.parsed(key)
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.parsed(key)
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        self.f64(key)?
            .ok_or_else(|| Error::config(format!("missing required key {key:?}")))
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        self.usize(key)?
            .ok_or_else(|| Error::config(format!("missing required key {key:?}")))
    }
}

fn split_assignment(text: &str) -> std::result::Result<(&str, &str), String> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| format!("expected key = value, got {text:?}"))?;
    let (key, value) = (key.trim(), value.trim());
    if key.is_empty() {
        return Err(format!("empty key in {text:?}"));
    }
    if value.is_empty() {
        return Err(format!("empty value for key {key:?}"));
    }
    Ok((key, value))
}

/// Detector settings from `lambda`, `Lambda`, `gamma`, `alpha`, `sigma2`
/// (all required) and `burn_in` (default 0). Unknown keys are rejected.
pub fn detector_config(config: &KeyValueConfig) -> Result<DetectorConfig> {
    config.check_known(DETECTOR_KEYS)?;
    let mut detector = DetectorConfig::new(
        config.require_f64("lambda")?,
        config.require_f64("Lambda")?,
        config.require_f64("gamma")?,
        config.require_f64("alpha")?,
        config.require_f64("sigma2")?,
    );
    if let Some(burn_in) = config.usize("burn_in")? {
        detector.burn_in = burn_in;
    }
    detector.validate()?;
    Ok(detector)
}

/// Segmentation settings from `slic_step` (required), `slic_compactness`
/// and `slic_iters` (defaults 10 and 10).
pub fn superpixel_params(config: &KeyValueConfig) -> Result<SuperpixelParams> {
    let mut params = SuperpixelParams::new(config.require_usize("slic_step")?);
    if let Some(compactness) = config.f64("slic_compactness")? {
        params.compactness = compactness;
    }
    if let Some(iterations) = config.usize("slic_iters")? {
        params.iterations = iterations;
    }
    Ok(params)
}

/// A scenario from an optional `preset` (`example1`, the default, or
/// `example2`) with any field overridden by its key. Unknown keys are
/// rejected.
pub fn scenario(config: &KeyValueConfig) -> Result<Scenario> {
    config.check_known(SCENARIO_KEYS)?;
    let mut scenario = match config.get("preset") {
        None | Some("example1") => Scenario::example1(),
        Some("example2") => Scenario::example2(),
        Some(other) => {
            return Err(Error::config(format!(
                "unknown preset {other:?}, expected \"example1\" or \"example2\""
            )));
        }
    };
    if let Some(v) = config.usize("height")? {
        scenario.height = v;
    }
    if let Some(v) = config.usize("width")? {
        scenario.width = v;
    }
    if let Some(v) = config.usize("bands")? {
        scenario.bands = v;
    }
    if let Some(v) = config.usize("frames")? {
        scenario.frames = v;
    }
    if let Some(v) = config.usize("change_frame")? {
        scenario.change_frame = v;
    }
    if let Some(v) = config.f64("snr_db")? {
        scenario.snr_db = v;
    }
    if let Some(v) = config.f64("amplitude")? {
        scenario.amplitude = v;
    }
    if let Some(v) = config.f64("change_scale")? {
        scenario.change_scale = v;
    }
    if let Some(v) = config.usize("change_segment")? {
        scenario.change_segment = v;
    }
    if let Some(v) = config.usize("slic_step")? {
        scenario.step = v;
    }
    if let Some(v) = config.f64("slic_compactness")? {
        scenario.compactness = v;
    }
    if let Some(v) = config.usize("slic_iters")? {
        scenario.iterations = v;
    }
    if let Some(v) = config.f64("lambda")? {
        scenario.slow_rate = v;
    }
    if let Some(v) = config.f64("Lambda")? {
        scenario.fast_rate = v;
    }
    if let Some(v) = config.f64("gamma")? {
        scenario.gamma = v;
    }
    if let Some(v) = config.f64("alpha")? {
        scenario.alpha = v;
    }
    if let Some(v) = config.usize("burn_in")? {
        scenario.burn_in = v;
    }
    if let Some(v) = config.bool("resegment")? {
        scenario.resegment = v;
    }
    if let Some(v) = config.f64("calibration_sigma2")? {
        scenario.calibration_noise = Some(v);
    }
    Ok(scenario)
}
