//! Bit-plane weaved storage.
//!
//! Samples are grouped into batches of `disp` rows and features into chunks of
//! `difp` columns. Every memory line holds one bit plane of one chunk for the
//! whole batch: bit `k` of the line is plane `t` (plane 0 = MSB) of feature
//! `chunk * difp + k % difp` of sample `batch * disp + k / difp`. Lines are
//! ordered batch, then plane, then chunk, so a precision-`p` read is the first
//! `p * n_chunks` lines of each batch.

mod format;

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{FixedMatrix, PrecisionLevel};

pub use format::{FormatError, MAGIC, VERSION};

/// Widest feature vector the datapath accepts.
pub const MAX_FEATURES: usize = 1024;

/// Number of bit planes per stored value.
pub const PLANES: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeaveError {
    #[error("{d} features exceed the hardware bound of {MAX_FEATURES}")]
    TooManyFeatures { d: usize },
    #[error("cannot weave an empty matrix")]
    NoSamples,
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("line index out of range: batch {batch}, plane {plane}, chunk {chunk}")]
    OutOfRange { batch: usize, plane: usize, chunk: usize },
}

/// Batch and chunk geometry of a weaved line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutParams {
    /// Samples per batch.
    pub disp: usize,
    /// Features per chunk.
    pub difp: usize,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self { disp: 32, difp: 16 }
    }
}

impl LayoutParams {
    pub fn new(disp: usize, difp: usize) -> Result<Self, WeaveError> {
        let layout = Self { disp, difp };
        layout.validate()?;
        Ok(layout)
    }

    /// Both factors are powers of two, `4 <= difp <= 64`, and the line is a
    /// whole number of 64-bit lanes.
    pub fn validate(&self) -> Result<(), WeaveError> {
        let bad = |msg: String| Err(WeaveError::InvalidLayout(msg));
        if !self.disp.is_power_of_two() || !self.difp.is_power_of_two() {
            return bad(format!("disp {} and difp {} must be powers of two", self.disp, self.difp));
        }
        if !(4..=64).contains(&self.difp) {
            return bad(format!("difp {} must lie in 4..=64", self.difp));
        }
        if !self.line_bits().is_multiple_of(64) {
            return bad(format!("line width {} is not a multiple of 64", self.line_bits()));
        }
        Ok(())
    }

    pub fn line_bits(&self) -> usize {
        self.disp * self.difp
    }

    pub fn lanes(&self) -> usize {
        self.line_bits() / 64
    }
}

/// Dimensions of a weaved matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeaveShape {
    pub layout: LayoutParams,
    pub n: usize,
    pub d: usize,
    pub d_pad: usize,
    pub n_batches: usize,
    pub n_chunks: usize,
}

impl WeaveShape {
    pub fn new(layout: LayoutParams, n: usize, d: usize) -> Result<Self, WeaveError> {
        layout.validate()?;
        if n == 0 {
            return Err(WeaveError::NoSamples);
        }
        if d == 0 || d > MAX_FEATURES {
            return Err(WeaveError::TooManyFeatures { d });
        }
        let n_chunks = d.div_ceil(layout.difp);
        Ok(Self { layout, n, d, d_pad: n_chunks * layout.difp, n_batches: n.div_ceil(layout.disp), n_chunks })
    }

    pub fn word_count(&self) -> usize {
        self.n_batches * PLANES * self.n_chunks
    }

    /// Line offset of `(batch, plane, chunk)`.
    pub fn word_index(&self, batch: usize, plane: usize, chunk: usize) -> Result<usize, WeaveError> {
        if batch >= self.n_batches || plane >= PLANES || chunk >= self.n_chunks {
            return Err(WeaveError::OutOfRange { batch, plane, chunk });
        }
        Ok(self.offset(batch, plane, chunk))
    }

    #[inline]
    fn offset(&self, batch: usize, plane: usize, chunk: usize) -> usize {
        (batch * PLANES + plane) * self.n_chunks + chunk
    }

    /// Lines a precision-`p` scan of every batch reads.
    pub fn words_read(&self, p: PrecisionLevel) -> usize {
        self.n_batches * p.bits() as usize * self.n_chunks
    }

    /// Samples of `batch` that are real rows rather than padding.
    pub fn batch_len(&self, batch: usize) -> usize {
        (self.n - batch * self.layout.disp).min(self.layout.disp)
    }
}

/// Extracts the `difp`-bit feature mask of batch slot `slot` from a line.
#[inline]
pub fn slot_mask(line: &[u64], slot: usize, difp: usize) -> u64 {
    let bit = slot * difp;
    let lane = line[bit / 64] >> (bit % 64);
    if difp == 64 {
        lane
    } else {
        lane & ((1u64 << difp) - 1)
    }
}

/// Read access to weaved lines. Kernels go through this so traffic can be
/// metered.
pub trait PlaneSource: Sync {
    fn shape(&self) -> &WeaveShape;

    /// The `lanes()` 64-bit lanes of line `(batch, plane, chunk)`.
    /// Indices must be in range.
    fn line(&self, batch: usize, plane: usize, chunk: usize) -> &[u64];
}

/// Immutable weaved dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeavedMatrix {
    shape: WeaveShape,
    lanes: Vec<u64>,
}

impl WeavedMatrix {
    pub fn from_parts(shape: WeaveShape, lanes: Vec<u64>) -> Result<Self, WeaveError> {
        let want = shape.word_count() * shape.layout.lanes();
        if lanes.len() != want {
            return Err(WeaveError::InvalidLayout(format!("expected {want} lanes, got {}", lanes.len())));
        }
        Ok(Self { shape, lanes })
    }

    pub fn shape(&self) -> &WeaveShape {
        &self.shape
    }

    pub fn layout(&self) -> LayoutParams {
        self.shape.layout
    }

    pub fn n(&self) -> usize {
        self.shape.n
    }

    pub fn d(&self) -> usize {
        self.shape.d
    }

    /// All lanes in line order.
    pub fn lanes(&self) -> &[u64] {
        &self.lanes
    }

    /// Serialized `.bisw` image.
    pub fn to_bytes(&self) -> Vec<u8> {
        format::serialize(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        format::deserialize(bytes)
    }
}

impl PlaneSource for WeavedMatrix {
    fn shape(&self) -> &WeaveShape {
        &self.shape
    }

    #[inline]
    fn line(&self, batch: usize, plane: usize, chunk: usize) -> &[u64] {
        let lanes = self.shape.layout.lanes();
        let at = self.shape.offset(batch, plane, chunk) * lanes;
        &self.lanes[at..at + lanes]
    }
}

/// Wraps a [`PlaneSource`] and counts every line handed out.
pub struct CountingSource<'a, S: PlaneSource> {
    inner: &'a S,
    reads: AtomicU64,
}

impl<'a, S: PlaneSource> CountingSource<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self { inner, reads: AtomicU64::new(0) }
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }
}

impl<S: PlaneSource> PlaneSource for CountingSource<'_, S> {
    fn shape(&self) -> &WeaveShape {
        self.inner.shape()
    }

    fn line(&self, batch: usize, plane: usize, chunk: usize) -> &[u64] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.inner.line(batch, plane, chunk)
    }
}

/// Weaves `m` into bit planes. Padding features and samples are zero.
pub fn weave(m: &FixedMatrix, layout: LayoutParams) -> Result<WeavedMatrix, WeaveError> {
    if m.cols() > MAX_FEATURES {
        return Err(WeaveError::TooManyFeatures { d: m.cols() });
    }
    let shape = WeaveShape::new(layout, m.rows(), m.cols())?;
    let lanes_per_line = layout.lanes();
    let batch_lanes = PLANES * shape.n_chunks * lanes_per_line;
    let mut lanes = vec![0u64; shape.n_batches * batch_lanes];

    lanes.par_chunks_mut(batch_lanes).enumerate().for_each(|(b, out)| {
        for slot in 0..shape.batch_len(b) {
            let row = m.row(b * layout.disp + slot);
            for (j, &raw) in row.iter().enumerate() {
                if raw == 0 {
                    continue;
                }
                let chunk = j / layout.difp;
                let k = slot * layout.difp + j % layout.difp;
                let (lane, bit) = (k / 64, k % 64);
                let mut bits = raw;
                while bits != 0 {
                    let plane = bits.leading_zeros() as usize;
                    bits &= !(0x8000_0000u32 >> plane);
                    out[(plane * shape.n_chunks + chunk) * lanes_per_line + lane] |= 1u64 << bit;
                }
            }
        }
    });
    Ok(WeavedMatrix { shape, lanes })
}

/// Reassembles the matrix from the `p` most significant planes only.
pub fn unweave<S: PlaneSource + ?Sized>(src: &S, p: PrecisionLevel) -> FixedMatrix {
    let shape = *src.shape();
    let layout = shape.layout;
    let mut out = FixedMatrix::zeros(shape.n, shape.d);
    let d = shape.d;
    let batch_values = layout.disp * d;

    out.as_mut_slice().par_chunks_mut(batch_values).enumerate().for_each(|(b, rows)| {
        let len = shape.batch_len(b);
        for plane in 0..p.bits() as usize {
            let weight = 0x8000_0000u32 >> plane;
            for chunk in 0..shape.n_chunks {
                let line = src.line(b, plane, chunk);
                let base = chunk * layout.difp;
                let width = layout.difp.min(d - base);
                for slot in 0..len {
                    let mut mask = slot_mask(line, slot, layout.difp);
                    let row = &mut rows[slot * d + base..slot * d + base + width];
                    while mask != 0 {
                        let q = mask.trailing_zeros() as usize;
                        mask &= mask - 1;
                        row[q] |= weight;
                    }
                }
            }
        }
    });
    out
}
