//! In-memory containers and binary file formats.
//!
//! Three little-endian containers share the same shape: a four-byte magic,
//! `u32` dimensions, then a flat payload.
//!
//! * `MBS1` — multiband sequence: magic, `T H W L`, then `T*L*H*W` `f32`
//!   samples ordered frame-major, band-major, row-major within a band.
//! * `SPL1` — segmentation labels: magic, `H W`, then `H*W` `u32` labels
//!   (contiguous ids `0..K`).
//! * `CMK1` — change mask: magic, `H W`, then `H*W` bytes in `{0, 1}`.
//!
//! Masks can additionally be exported as binary 8-bit PGM for quick viewing.
//! Decoding is total: any byte stream either parses into a valid object or
//! produces a typed format error naming what went wrong.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::superpixel::Labeling;

pub const SEQUENCE_MAGIC: &[u8; 4] = b"MBS1";
pub const LABELS_MAGIC: &[u8; 4] = b"SPL1";
pub const MASK_MAGIC: &[u8; 4] = b"CMK1";

// ---------------------------------------------------------------------------
// In-memory containers
// ---------------------------------------------------------------------------

/// One observation: `bands` co-registered channels over an `height x width`
/// pixel grid. Samples are stored band-major (`band * pixels + pixel`) as
/// `f32`, exactly as they live on disk; all detector math widens to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
}

impl Frame {
    /// Dimensions must be positive and `values` must hold exactly
    /// `bands * height * width` samples. Finiteness is enforced at the file
    /// boundary (read/write), not here, so intermediate buffers can be built
    /// incrementally.
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::dims(format!(
                "frame dimensions must be positive, got {height}x{width} with {bands} bands"
            )));
        }
        let expect = bands
            .checked_mul(height)
            .and_then(|p| p.checked_mul(width))
            .ok_or_else(|| Error::dims("frame dimensions overflow"))?;
        if values.len() != expect {
            return Err(Error::dims(format!(
                "frame payload holds {} samples, expected {expect}",
                values.len()
            )));
        }
        Ok(Frame {
            height,
            width,
            bands,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Result<Self> {
        let n = bands
            .checked_mul(height)
            .and_then(|p| p.checked_mul(width))
            .ok_or_else(|| Error::dims("frame dimensions overflow"))?;
        Frame::new(height, width, bands, vec![0.0; n])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Number of pixels per band.
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Sample for `band` at flat row-major `pixel`.
    pub fn value(&self, band: usize, pixel: usize) -> f32 {
        self.values[band * self.pixel_count() + pixel]
    }

    /// Row-major slice of one band.
    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.pixel_count();
        &self.values[band * n..(band + 1) * n]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// An ordered run of frames sharing one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    height: usize,
    width: usize,
    bands: usize,
    frames: Vec<Frame>,
}

impl ImageSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::dims("a sequence needs at least one frame"))?;
        let (height, width, bands) = (first.height, first.width, first.bands);
        for (i, f) in frames.iter().enumerate() {
            if f.height != height || f.width != width || f.bands != bands {
                return Err(Error::dims(format!(
                    "frame {} has shape {}x{}x{}, expected {}x{}x{}",
                    i + 1,
                    f.height,
                    f.width,
                    f.bands,
                    height,
                    width,
                    bands
                )));
            }
        }
        Ok(ImageSequence {
            height,
            width,
            bands,
            frames,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Zero-based access; frame `t` of the 1-based stream is `frame(t - 1)`.
    pub fn frame(&self, index: usize) -> &Frame {
        &self.frames[index]
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }
}

/// Per-pixel binary change decisions for one frame.
///
/// `frame` records which 1-based stream position the mask refers to; it is
/// carried in memory only (0 = unspecified, e.g. freshly loaded from disk)
/// and never serialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeMask {
    pub frame: usize,
    height: usize,
    width: usize,
    flags: Vec<u8>,
}

impl ChangeMask {
    pub fn new(height: usize, width: usize, flags: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dims(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if flags.len() != height * width {
            return Err(Error::dims(format!(
                "mask payload holds {} flags, expected {}",
                flags.len(),
                height * width
            )));
        }
        if let Some(bad) = flags.iter().find(|&&f| f > 1) {
            return Err(Error::invalid(format!(
                "mask flags must be 0 or 1, found {bad}"
            )));
        }
        Ok(ChangeMask {
            frame: 0,
            height,
            width,
            flags,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        ChangeMask::new(height, width, vec![0; height * width])
    }

    /// Same mask annotated with the 1-based frame index it belongs to.
    pub fn at_frame(mut self, frame: usize) -> Self {
        self.frame = frame;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn flags(&self) -> &[u8] {
        &self.flags
    }

    pub fn any(&self) -> bool {
        self.flags.contains(&1)
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f == 1).count()
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn read_magic<R: Read>(reader: &mut R, expect: &[u8; 4], format: &'static str) -> Result<()> {
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::format(format, "stream too short for magic bytes"))?;
    if &magic != expect {
        return Err(Error::format(
            format,
            format!("bad magic {magic:?}, expected {expect:?}"),
        ));
    }
    Ok(())
}

fn read_dim<R: Read>(reader: &mut R, field: &str, format: &'static str) -> Result<usize> {
    let v = reader
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::format(format, format!("truncated header: missing {field}")))?;
    if v == 0 {
        return Err(Error::format(format, format!("zero dimension in {field}")));
    }
    Ok(v as usize)
}

fn expect_eof<R: Read>(reader: &mut R, format: &'static str) -> Result<()> {
    let mut probe = [0u8; 1];
    match reader.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::format(format, "trailing bytes after payload")),
        Err(e) => Err(Error::Io(e)),
    }
}

fn dim_u32(value: usize, field: &str, format: &'static str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::format(format, format!("{field} exceeds u32 range")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| Error::io_at(path, e))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io_at(path, e))?,
    ))
}

// ---------------------------------------------------------------------------
// MBS1 sequences
// ---------------------------------------------------------------------------

/// Decode an `MBS1` stream. The reader must be exhausted by the payload;
/// trailing bytes are an error, as are non-finite samples.
pub fn read_sequence<R: Read>(mut reader: R) -> Result<ImageSequence> {
    const F: &str = "MBS1";
    read_magic(&mut reader, SEQUENCE_MAGIC, F)?;
    let frames = read_dim(&mut reader, "frame count", F)?;
    let height = read_dim(&mut reader, "height", F)?;
    let width = read_dim(&mut reader, "width", F)?;
    let bands = read_dim(&mut reader, "band count", F)?;
    let per_frame = bands
        .checked_mul(height)
        .and_then(|p| p.checked_mul(width))
        .ok_or_else(|| Error::format(F, "declared dimensions overflow"))?;

    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![0f32; per_frame];
    for t in 1..=frames {
        reader
            .read_f32_into::<LittleEndian>(&mut buf)
            .map_err(|_| {
                Error::format(
                    F,
                    format!("truncated payload: frame {t} of {frames} incomplete"),
                )
            })?;
        if let Some(pos) = buf.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                F,
                format!("non-finite sample in frame {t} at offset {pos}"),
            ));
        }
        out.push(Frame::new(height, width, bands, buf.clone())?);
    }
    expect_eof(&mut reader, F)?;
    ImageSequence::new(out)
}

pub fn read_sequence_path(path: impl AsRef<Path>) -> Result<ImageSequence> {
    read_sequence(open(path.as_ref())?)
}

/// Encode a sequence as `MBS1`. All samples are validated finite before the
/// first byte is written.
pub fn write_sequence<W: Write>(mut writer: W, seq: &ImageSequence) -> Result<()> {
    const F: &str = "MBS1";
    for (i, frame) in seq.frames().iter().enumerate() {
        if !frame.is_finite() {
            return Err(Error::invalid(format!(
                "sequence contains a non-finite sample in frame {}",
                i + 1
            )));
        }
    }
    writer.write_all(SEQUENCE_MAGIC)?;
    writer.write_u32::<LittleEndian>(dim_u32(seq.len(), "frame count", F)?)?;
    writer.write_u32::<LittleEndian>(dim_u32(seq.height(), "height", F)?)?;
    writer.write_u32::<LittleEndian>(dim_u32(seq.width(), "width", F)?)?;
    writer.write_u32::<LittleEndian>(dim_u32(seq.bands(), "band count", F)?)?;
    for frame in seq.frames() {
        for &v in frame.values() {
            writer.write_f32::<LittleEndian>(v)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Validates first, so an invalid sequence leaves no file behind.
pub fn write_sequence_path(path: impl AsRef<Path>, seq: &ImageSequence) -> Result<()> {
    for (i, frame) in seq.frames().iter().enumerate() {
        if !frame.is_finite() {
            return Err(Error::invalid(format!(
                "sequence contains a non-finite sample in frame {}",
                i + 1
            )));
        }
    }
    write_sequence(create(path.as_ref())?, seq)
}

// ---------------------------------------------------------------------------
// SPL1 labelings
// ---------------------------------------------------------------------------

pub fn read_labels<R: Read>(mut reader: R) -> Result<Labeling> {
    const F: &str = "SPL1";
    read_magic(&mut reader, LABELS_MAGIC, F)?;
    let height = read_dim(&mut reader, "height", F)?;
    let width = read_dim(&mut reader, "width", F)?;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| Error::format(F, "declared dimensions overflow"))?;
    let mut labels = vec![0u32; n];
    reader
        .read_u32_into::<LittleEndian>(&mut labels)
        .map_err(|_| Error::format(F, format!("truncated payload: expected {n} labels")))?;
    expect_eof(&mut reader, F)?;
    Labeling::new(height, width, labels)
        .map_err(|e| Error::format(F, format!("invalid labeling: {e}")))
}

pub fn read_labels_path(path: impl AsRef<Path>) -> Result<Labeling> {
    read_labels(open(path.as_ref())?)
}

pub fn write_labels<W: Write>(mut writer: W, labeling: &Labeling) -> Result<()> {
    const F: &str = "SPL1";
    writer.write_all(LABELS_MAGIC)?;
    writer.write_u32::<LittleEndian>(dim_u32(labeling.height(), "height", F)?)?;
    writer.write_u32::<LittleEndian>(dim_u32(labeling.width(), "width", F)?)?;
    for &l in labeling.labels() {
        writer.write_u32::<LittleEndian>(l)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_labels_path(path: impl AsRef<Path>, labeling: &Labeling) -> Result<()> {
    write_labels(create(path.as_ref())?, labeling)
}

// ---------------------------------------------------------------------------
// CMK1 masks
// ---------------------------------------------------------------------------

pub fn read_mask<R: Read>(mut reader: R) -> Result<ChangeMask> {
    const F: &str = "CMK1";
    read_magic(&mut reader, MASK_MAGIC, F)?;
    let height = read_dim(&mut reader, "height", F)?;
    let width = read_dim(&mut reader, "width", F)?;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| Error::format(F, "declared dimensions overflow"))?;
    let mut flags = vec![0u8; n];
    reader
        .read_exact(&mut flags)
        .map_err(|_| Error::format(F, format!("truncated payload: expected {n} flags")))?;
    if let Some(pos) = flags.iter().position(|&f| f > 1) {
        return Err(Error::format(
            F,
            format!("flag at offset {pos} is {}, outside {{0, 1}}", flags[pos]),
        ));
    }
    expect_eof(&mut reader, F)?;
    ChangeMask::new(height, width, flags)
}

pub fn read_mask_path(path: impl AsRef<Path>) -> Result<ChangeMask> {
    read_mask(open(path.as_ref())?)
}

pub fn write_mask<W: Write>(mut writer: W, mask: &ChangeMask) -> Result<()> {
    const F: &str = "CMK1";
    writer.write_all(MASK_MAGIC)?;
    writer.write_u32::<LittleEndian>(dim_u32(mask.height(), "height", F)?)?;
    writer.write_u32::<LittleEndian>(dim_u32(mask.width(), "width", F)?)?;
    writer.write_all(mask.flags())?;
    writer.flush()?;
    Ok(())
}

pub fn write_mask_path(path: impl AsRef<Path>, mask: &ChangeMask) -> Result<()> {
    write_mask(create(path.as_ref())?, mask)
}

/// Binary 8-bit PGM export of a mask: flagged pixels white, the rest black.
pub fn write_mask_pgm<W: Write>(mut writer: W, mask: &ChangeMask) -> Result<()> {
    write!(writer, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
    let bytes: Vec<u8> = mask.flags().iter().map(|&f| f * 255).collect();
    writer.write_all(&bytes)?;
    writer.flush()?;
    Ok(())
}

pub fn write_mask_pgm_path(path: impl AsRef<Path>, mask: &ChangeMask) -> Result<()> {
    write_mask_pgm(create(path.as_ref())?, mask)
}
