//! Synthetic multiband sequences with a single persistent change.
//!
//! The model: frame `t` equals a static background plus i.i.d. Gaussian
//! noise of variance `sigma^2` per band, and from the change frame `t_c`
//! onwards a constant offset is added on the change support. The support
//! must be a union of whole partition segments, and exactly one change event
//! exists per stream (a zero offset gives a null stream).
//!
//! Determinism: one ChaCha8 stream seeded with the run seed, drawn in frame,
//! band, pixel order, so equal seeds give byte-identical sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::formats::{ChangeMask, Frame, ImageSequence};
use crate::superpixel::Labeling;

/// Everything that defines one synthetic stream (up to the seed).
#[derive(Debug, Clone)]
pub struct SimulatorConfig {
    /// Static background, band-major `L x N`.
    pub background: Vec<f64>,
    /// Persistent offset added from `change_frame` on, band-major `L x N`;
    /// all-zero means a null stream.
    pub change: Vec<f64>,
    /// 1-based frame index at which the change appears (>= 2).
    pub change_frame: usize,
    /// Number of frames `T` (>= 2).
    pub frames: usize,
    /// Per-band noise variance (0 gives a noiseless stream).
    pub noise_variance: f64,
    /// Number of bands `L`.
    pub bands: usize,
    /// Partition whose segments the change support must respect.
    pub partition: Labeling,
}

impl SimulatorConfig {
    /// Pixels carrying a nonzero offset in any band.
    pub fn change_support(&self) -> Vec<u8> {
        let n = self.partition.pixel_count();
        let mut support = vec![0u8; n];
        for band in self.change.chunks_exact(n) {
            for (s, &offset) in support.iter_mut().zip(band) {
                if offset != 0.0 {
                    *s = 1;
                }
            }
        }
        support
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.partition.pixel_count();
        if self.bands == 0 {
            return Err(Error::invalid("band count must be >= 1"));
        }
        if self.background.len() != self.bands * n {
            return Err(Error::dims(format!(
                "background holds {} values, expected {} ({} bands x {n} pixels)",
                self.background.len(),
                self.bands * n,
                self.bands
            )));
        }
        if self.change.len() != self.bands * n {
            return Err(Error::dims(format!(
                "change profile holds {} values, expected {}",
                self.change.len(),
                self.bands * n
            )));
        }
        if self.frames < 2 {
            return Err(Error::invalid("a stream needs at least 2 frames"));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::invalid(format!(
                "sigma2 must be non-negative and finite, got {}",
                self.noise_variance
            )));
        }
        for (what, values) in [("background", &self.background), ("change", &self.change)] {
            if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{what} contains a non-finite value {bad}"
                )));
            }
        }

        let support = self.change_support();
        let has_change = support.contains(&1);
        if has_change {
            if self.change_frame < 2 || self.change_frame > self.frames {
                return Err(Error::invalid(format!(
                    "change frame {} must lie in 2..={}",
                    self.change_frame, self.frames
                )));
            }
            // The support must be a union of whole partition segments.
            for members in self.partition.segment_members() {
                let marked = members.iter().filter(|&&p| support[p] == 1).count();
                if marked != 0 && marked != members.len() {
                    return Err(Error::invalid(format!(
                        "change support covers {marked} of {} pixels of a partition segment; \
                         changes must affect whole segments",
                        members.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// What actually happened in a simulated stream.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// 1-based frame index of the change (meaningful only when `has_change`).
    pub change_frame: usize,
    pub height: usize,
    pub width: usize,
    /// Per-pixel change support, `{0, 1}`.
    pub support: Vec<u8>,
}

impl GroundTruth {
    pub fn has_change(&self) -> bool {
        self.support.contains(&1)
    }

    /// True when pixel `n` carries the change at frame `t`.
    pub fn flag(&self, t: usize, n: usize) -> bool {
        self.has_change() && t >= self.change_frame && self.support[n] == 1
    }

    /// The truth mask for frame `t`.
    pub fn mask_at(&self, t: usize) -> ChangeMask {
        let flags = if self.has_change() && t >= self.change_frame {
            self.support.clone()
        } else {
            vec![0; self.support.len()]
        };
        ChangeMask::new(self.height, self.width, flags)
            .expect("support is validated")
            .at_frame(t)
    }
}

/// Generate one stream. Equal `(config, seed)` pairs give identical output.
pub fn simulate_sequence(
    config: &SimulatorConfig,
    seed: u64,
) -> Result<(ImageSequence, GroundTruth)> {
    config.validate()?;
    let n = config.partition.pixel_count();
    let (h, w) = (config.partition.height(), config.partition.width());
    let sigma = config.noise_variance.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;

    let mut frames = Vec::with_capacity(config.frames);
    for t in 1..=config.frames {
        let changed = t >= config.change_frame;
        let mut values = Vec::with_capacity(config.bands * n);
        for band in 0..config.bands {
            for p in 0..n {
                let idx = band * n + p;
                let mut v = config.background[idx];
                if changed {
                    v += config.change[idx];
                }
                if sigma > 0.0 {
                    let z: f64 = normal.sample(&mut rng);
                    v += sigma * z;
                }
                values.push(v as f32);
            }
        }
        frames.push(Frame::new(h, w, config.bands, values)?);
    }
    let truth = GroundTruth {
        change_frame: config.change_frame,
        height: h,
        width: w,
        support: config.change_support(),
    };
    Ok((ImageSequence::new(frames)?, truth))
}

/// Noise variance hitting a target SNR in dB:
/// `sigma^2 = mean(background^2) / 10^(snr/10)`.
pub fn noise_variance_for_snr(background: &[f64], snr_db: f64) -> Result<f64> {
    if background.is_empty() {
        return Err(Error::invalid("background must be non-empty"));
    }
    if snr_db.is_nan() {
        return Err(Error::invalid("SNR must not be NaN"));
    }
    let mean_sq = background.iter().map(|v| v * v).sum::<f64>() / background.len() as f64;
    Ok(mean_sq / 10f64.powf(snr_db / 10.0))
}
