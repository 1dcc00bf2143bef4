//! Latent tensors, VAE scale bookkeeping and the `CRTFLAT1` file format.
//!
//! A [`LatentField`] is a `channels x height x width` block of finite reals
//! stored channel-major, row-major within a channel. Values are held as
//! `f64` in memory; the on-disk format is binary32.

use std::io::{self, Read, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::GaussianStream;

/// Smallest accepted height or width.
pub const MIN_SIDE: usize = 2;
/// Largest accepted height, width or channel count.
pub const MAX_SIDE: usize = 4096;
/// Magic prefix of the latent file format.
pub const MAGIC: &[u8; 8] = b"CRTFLAT1";
/// Bytes before the payload: magic plus three u32 dimension words.
pub const HEADER_LEN: usize = 8 + 3 * 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatentError {
    #[error("dimensions {channels}x{height}x{width} out of bounds (channels 1..={max}, sides {min}..={max})", min = MIN_SIDE, max = MAX_SIDE)]
    Bounds {
        channels: usize,
        height: usize,
        width: usize,
    },
    #[error("expected {expected} values, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected \"CRTFLAT1\"")]
    BadMagic { found: [u8; 8] },
    #[error("truncated stream: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("dimension overflow: {channels}x{height}x{width}")]
    DimensionOverflow {
        channels: u32,
        height: u32,
        width: u32,
    },
    #[error("invalid latent payload: {0}")]
    Invalid(#[from] LatentError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Dimensions of a latent field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self, LatentError> {
        let side_ok = |s: usize| (MIN_SIDE..=MAX_SIDE).contains(&s);
        if channels == 0 || channels > MAX_SIDE || !side_ok(height) || !side_ok(width) {
            return Err(LatentError::Bounds {
                channels,
                height,
                width,
            });
        }
        Ok(Self {
            channels,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per channel.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Real-valued `C x H x W` latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    shape: Shape,
    values: Vec<f64>,
}

impl LatentField {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self, LatentError> {
        let shape = Shape::new(shape.channels, shape.height, shape.width)?;
        if values.len() != shape.len() {
            return Err(LatentError::Length {
                expected: shape.len(),
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(LatentError::NonFinite { index });
        }
        Ok(Self { shape, values })
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self, LatentError> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    /// Builds a field from `f(channel, row, col)`.
    pub fn from_fn(
        shape: Shape,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self, LatentError> {
        let mut values = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    values.push(f(c, y, x));
                }
            }
        }
        Self::new(shape, values)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.plane();
        &self.values[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.shape.height + y) * self.shape.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, LatentError> {
        Self::new(self.shape, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two fields of identical shape.
    pub fn zip_map(
        &self,
        other: &LatentField,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, LatentError> {
        self.ensure_same_shape(other)?;
        Self::new(
            self.shape,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn ensure_same_shape(&self, other: &LatentField) -> Result<(), LatentError> {
        if self.shape != other.shape {
            return Err(LatentError::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    /// Largest absolute elementwise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &LatentField) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copy with every value rounded to binary32, i.e. what a file round trip yields.
    pub fn quantized(&self) -> Self {
        Self {
            shape: self.shape,
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    /// Serialized `CRTFLAT1` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        write_latent(self, &mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Hex SHA-256 of the serialized bytes; equals the digest of the written file.
    pub fn digest(&self) -> String {
        digest_bytes(&self.to_bytes())
    }
}

/// Hex SHA-256 of raw bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// Draws an N(0, I) latent from the documented seeded stream.
pub fn sample_gaussian_latent(
    channels: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<LatentField, LatentError> {
    let shape = Shape::new(channels, height, width)?;
    GaussianStream::new(seed).next_field(shape)
}

/// Latent scale factor `gamma` of the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VaeScale(f64);

impl VaeScale {
    pub const SD15: VaeScale = VaeScale(0.18215);
    pub const SDXL: VaeScale = VaeScale(0.13025);

    pub fn new(gamma: f64) -> Option<Self> {
        (gamma.is_finite() && gamma > 0.0).then_some(Self(gamma))
    }

    pub fn gamma(self) -> f64 {
        self.0
    }
}

impl Default for VaeScale {
    fn default() -> Self {
        Self::SD15
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleDirection {
    /// Image space to latent space: multiply by gamma.
    Encode,
    /// Latent space to image space: divide by gamma.
    Decode,
}

pub fn apply_vae_scale(
    field: &LatentField,
    scale: VaeScale,
    direction: ScaleDirection,
) -> LatentField {
    let g = scale.gamma();
    let values = match direction {
        ScaleDirection::Encode => field.values.iter().map(|v| v * g).collect(),
        ScaleDirection::Decode => field.values.iter().map(|v| v / g).collect(),
    };
    LatentField {
        shape: field.shape,
        values,
    }
}

/// Population statistics of one channel.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub channels: Vec<ChannelSummary>,
}

pub fn latent_stats(field: &LatentField) -> ChannelStats {
    let channels = (0..field.channels())
        .map(|c| {
            let xs = field.channel(c);
            let n = xs.len() as f64;
            let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for &v in xs {
                min = min.min(v);
                max = max.max(v);
                sum += v;
            }
            // Clamp guards the rounding of sum / n for near-constant channels.
            let mean = (sum / n).clamp(min, max);
            let variance = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            ChannelSummary {
                min,
                max,
                mean,
                variance,
            }
        })
        .collect();
    ChannelStats { channels }
}

/// Writes `field` as `CRTFLAT1`: magic, then channels, height, width as u32
/// LE, then binary32 LE values, channels outermost.
pub fn write_latent<W: Write>(field: &LatentField, sink: &mut W) -> io::Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * field.values.len());
    buf.extend_from_slice(MAGIC);
    for dim in [field.channels(), field.height(), field.width()] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in &field.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    sink.write_all(&buf)
}

/// Reads one `CRTFLAT1` field. Nothing is returned unless the whole payload is valid.
pub fn read_latent<R: Read>(source: &mut R) -> Result<LatentField, FormatError> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_full(source, &mut header)?;
    if got < MAGIC.len() {
        return Err(FormatError::Truncated {
            needed: HEADER_LEN,
            got,
        });
    }
    let mut magic = [0u8; 8];
    magic.copy_from_slice(&header[..8]);
    if &magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    if got < HEADER_LEN {
        return Err(FormatError::Truncated {
            needed: HEADER_LEN,
            got,
        });
    }
    let word = |i: usize| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let (c, h, w) = (word(0), word(1), word(2));
    let shape = Shape::new(c as usize, h as usize, w as usize).map_err(|_| {
        FormatError::DimensionOverflow {
            channels: c,
            height: h,
            width: w,
        }
    })?;
    let needed = 4 * shape.len();
    let mut payload = vec![0u8; needed];
    let got = read_full(source, &mut payload)?;
    if got < needed {
        return Err(FormatError::Truncated {
            needed: HEADER_LEN + needed,
            got: HEADER_LEN + got,
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(LatentField::new(shape, values)?)
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
