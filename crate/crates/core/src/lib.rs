//! Online change-point detection for multiband image sequences.
//!
//! The pipeline: segment a reference frame into superpixels, treat the pixels
//! as a graph whose components are superpixel cliques, track each pixel with
//! a pair of exponentially weighted moving averages, low-pass filter their
//! difference on the graph, and test per-vertex neighborhood energies against
//! chi-squared thresholds with a Bonferroni family-wise correction. A
//! change-vector-analysis baseline, a synthetic-sequence simulator, and a
//! Monte Carlo evaluation harness round out the crate.
//!
//! Modules:
//! * [`formats`] — in-memory containers and the MBS1/SPL1/CMK1/PGM codecs
//! * [`superpixel`] — deterministic SLIC segmentation
//! * [`graph`] — the clique-per-superpixel pixel graph
//! * [`spectral`] — normalized-Laplacian eigendecomposition
//! * [`filter`] — spectral low-pass filter (dense and closed-form routes)
//! * [`special`] — gamma/chi-squared machinery for calibration
//! * [`detector`] — the streaming detector itself
//! * [`baseline`] — change vector analysis
//! * [`sim`] — synthetic sequence generation
//! * [`eval`] — delay/ROC metrics and the Monte Carlo harness
//! * [`config`] — key=value configuration files and overrides

// Parameter checks are written as `!(x > 0.0)` on purpose: unlike `x <= 0.0`
// the negated form also rejects NaN, which must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod filter;
pub mod formats;
pub mod graph;
pub mod sim;
pub mod special;
pub mod spectral;
pub mod superpixel;

pub use baseline::{cva_detect, cva_magnitude, CvaDetector};
pub use config::KeyValueConfig;
pub use detector::{estimate_noise, eta, Detector, DetectorConfig, TestStatistics};
pub use error::{Error, Result};
pub use eval::{
    detection_delay, matched_pfa_delays, monte_carlo, pd_pfa, single_run, write_matched_csv,
    MatchedDelayRow, Method, MetricKind, MetricsRow, MetricsTable, PdPfa, RunOutcome, RunResult,
    Scenario,
};
pub use filter::{clique_filter, filter_gain, GraphFilter};
pub use formats::{
    read_labels, read_labels_path, read_mask, read_mask_path, read_sequence, read_sequence_path,
    write_labels, write_labels_path, write_mask, write_mask_path, write_mask_pgm,
    write_mask_pgm_path, write_sequence, write_sequence_path, ChangeMask, Frame, ImageSequence,
};
pub use graph::{build_graph, neighborhood_sums, PixelGraph};
pub use sim::{noise_variance_for_snr, simulate_sequence, GroundTruth, SimulatorConfig};
pub use spectral::{spectral_decompose, SpectralDecomposition};
pub use superpixel::{enforce_connectivity, grid_partition, slic_segment, Labeling, SuperpixelParams};
