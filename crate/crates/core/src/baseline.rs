//! Change vector analysis, the memoryless per-pixel baseline.
//!
//! For consecutive frames the change magnitude at pixel `n` is the Euclidean
//! norm of the spectral difference vector across bands; a pixel is flagged
//! when the magnitude exceeds a fixed threshold `tau`. There is no temporal
//! averaging and no spatial structure: a persistent change is visible only
//! at the transition frame, after which both frames contain it again.

use crate::error::{Error, Result};
use crate::formats::{ChangeMask, Frame};

/// Per-pixel magnitudes `||y_t(n) - y_{t-1}(n)||_2` across bands.
pub fn cva_magnitude(current: &Frame, previous: &Frame) -> Result<Vec<f64>> {
    if current.bands() != previous.bands()
        || current.height() != previous.height()
        || current.width() != previous.width()
    {
        return Err(Error::dims(format!(
            "frames disagree: {}x{}x{} vs {}x{}x{}",
            current.height(),
            current.width(),
            current.bands(),
            previous.height(),
            previous.width(),
            previous.bands()
        )));
    }
    let n = current.pixel_count();
    let mut out = vec![0.0f64; n];
    for band in 0..current.bands() {
        let cur = current.band(band);
        let prev = previous.band(band);
        for p in 0..n {
            let d = cur[p] as f64 - prev[p] as f64;
            out[p] += d * d;
        }
    }
    for v in &mut out {
        *v = v.sqrt();
    }
    Ok(out)
}

/// Threshold the magnitudes into a change mask; strict exceedance flags.
pub fn cva_detect(
    magnitudes: &[f64],
    tau: f64,
    height: usize,
    width: usize,
) -> Result<ChangeMask> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "CVA threshold must be non-negative and finite, got {tau}"
        )));
    }
    if magnitudes.len() != height * width {
        return Err(Error::dims(format!(
            "magnitude buffer holds {} entries, expected {height}x{width}",
            magnitudes.len()
        )));
    }
    let flags: Vec<u8> = magnitudes.iter().map(|&m| u8::from(m > tau)).collect();
    ChangeMask::new(height, width, flags)
}

/// Streaming wrapper: holds the previous frame and a threshold.
#[derive(Debug, Clone)]
pub struct CvaDetector {
    tau: f64,
    previous: Option<Frame>,
    frame: usize,
}

impl CvaDetector {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!(
                "CVA threshold must be non-negative and finite, got {tau}"
            )));
        }
        Ok(CvaDetector {
            tau,
            previous: None,
            frame: 0,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Absorb one frame; from the second frame on, yields the magnitudes and
    /// the thresholded mask.
    pub fn push(&mut self, frame: &Frame) -> Result<Option<(Vec<f64>, ChangeMask)>> {
        self.frame += 1;
        let out = match self.previous.as_ref() {
            None => None,
            Some(prev) => {
                let mags = cva_magnitude(frame, prev)?;
                let mask =
                    cva_detect(&mags, self.tau, frame.height(), frame.width())?.at_frame(self.frame);
                Some((mags, mask))
            }
        };
        self.previous = Some(frame.clone());
        Ok(out)
    }

    pub fn reset(&mut self) {
        self.previous = None;
        self.frame = 0;
    }
}
