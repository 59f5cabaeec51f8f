//! Bit-serial distance kernel.
//!
//! Every dot product `x_p . c` is evaluated plane by plane: for plane `t` the
//! center coordinates whose sample bit is set are summed (select-and-add), and
//! the plane sums are combined MSB first with Horner's rule. The kernel is pure
//! integer arithmetic; results are exact multiples of `2^-64`.

use std::fmt;

use thiserror::Error;

use crate::fixedpoint::PrecisionLevel;
use crate::kmeans::CenterSet;
use crate::weave::{slot_mask, PlaneSource, WeaveShape};

/// Features covered by one subset-sum table.
const GROUP: usize = 4;
const GROUP_ENTRIES: usize = 1 << GROUP;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("sample {index} out of range for {n} samples")]
    SampleOutOfRange { index: usize, n: usize },
    #[error("center has {actual} coordinates, layout expects {expected}")]
    CenterDimension { expected: usize, actual: usize },
    #[error("no centers")]
    NoCenters,
}

/// Center coordinates padded with zeros to the weaved feature width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenterVector(Vec<u32>);

impl CenterVector {
    /// Pads `coords` with zeros up to `d_pad` entries.
    pub fn new(coords: &[u32], d_pad: usize) -> Result<Self, KernelError> {
        if coords.len() > d_pad {
            return Err(KernelError::CenterDimension { expected: d_pad, actual: coords.len() });
        }
        let mut v = coords.to_vec();
        v.resize(d_pad, 0);
        Ok(Self(v))
    }

    pub fn coords(&self) -> &[u32] {
        &self.0
    }
}

/// Assignment score `||c||^2 - 2 x.c` at scale `2^-64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Score(pub i128);

impl Score {
    pub fn from_parts(norm_sq: u128, dot: u128) -> Self {
        Score(norm_sq as i128 - 2 * dot as i128)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 18_446_744_073_709_551_616.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

fn check_sample(shape: &WeaveShape, i: usize) -> Result<(), KernelError> {
    if i >= shape.n {
        return Err(KernelError::SampleOutOfRange { index: i, n: shape.n });
    }
    Ok(())
}

/// `x_p . c` for sample `i` at scale `2^-64`, by literal select-and-add.
pub fn bis_dot<S: PlaneSource + ?Sized>(
    src: &S,
    i: usize,
    c: &CenterVector,
    p: PrecisionLevel,
) -> Result<u128, KernelError> {
    let shape = *src.shape();
    check_sample(&shape, i)?;
    if c.0.len() != shape.d_pad {
        return Err(KernelError::CenterDimension { expected: shape.d_pad, actual: c.0.len() });
    }
    let difp = shape.layout.difp;
    let (batch, slot) = (i / shape.layout.disp, i % shape.layout.disp);
    let mut acc: u128 = 0;
    for plane in 0..p.bits() as usize {
        let mut plane_sum: u64 = 0;
        for chunk in 0..shape.n_chunks {
            let mut mask = slot_mask(src.line(batch, plane, chunk), slot, difp);
            let coords = &c.0[chunk * difp..(chunk + 1) * difp];
            while mask != 0 {
                plane_sum += u64::from(coords[mask.trailing_zeros() as usize]);
                mask &= mask - 1;
            }
        }
        acc = 2 * acc + u128::from(plane_sum);
    }
    Ok(acc << (32 - p.bits()))
}

/// Scores against a fixed center set.
///
/// Select-and-add over four features at a time is replaced by a lookup into a
/// 16-entry table of subset sums, one table per feature group and center; the
/// plane sums are identical.
pub struct ScoreKernel<'c> {
    centers: &'c CenterSet,
    shape: WeaveShape,
    k: usize,
    tables: Vec<u64>,
}

impl<'c> ScoreKernel<'c> {
    pub fn new(centers: &'c CenterSet, shape: &WeaveShape) -> Result<Self, KernelError> {
        let k = centers.k();
        if k == 0 {
            return Err(KernelError::NoCenters);
        }
        if centers.d() != shape.d {
            return Err(KernelError::CenterDimension { expected: shape.d, actual: centers.d() });
        }
        let groups = shape.d_pad / GROUP;
        let mut tables = vec![0u64; groups * GROUP_ENTRIES * k];
        for g in 0..groups {
            for v in 1..GROUP_ENTRIES {
                let row = &mut tables[(g * GROUP_ENTRIES + v) * k..][..k];
                for (c, slot) in row.iter_mut().enumerate() {
                    let coords = centers.coords(c);
                    *slot = (0..GROUP)
                        .filter(|b| v & (1 << b) != 0)
                        .filter_map(|b| coords.get(g * GROUP + b))
                        .map(|&x| u64::from(x))
                        .sum();
                }
            }
        }
        Ok(Self { centers, shape: *shape, k, tables })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Scores for every real sample of `batch`, `k` per sample, written into
    /// `out` (length at least `batch_len * k`). Reads exactly
    /// `p * n_chunks` lines.
    pub fn batch_scores<S: PlaneSource + ?Sized>(&self, src: &S, batch: usize, p: PrecisionLevel, out: &mut [Score]) {
        let len = self.shape.batch_len(batch);
        let (k, difp) = (self.k, self.shape.layout.difp);
        let mut plane_sums = vec![0u64; len * k];
        let mut acc = vec![0u128; len * k];
        for plane in 0..p.bits() as usize {
            plane_sums.fill(0);
            for chunk in 0..self.shape.n_chunks {
                let line = src.line(batch, plane, chunk);
                let group0 = chunk * difp / GROUP;
                for (slot, sums) in plane_sums.chunks_exact_mut(k).enumerate() {
                    let mask = slot_mask(line, slot, difp);
                    if mask == 0 {
                        continue;
                    }
                    for q in 0..difp / GROUP {
                        let v = ((mask >> (q * GROUP)) & 0xF) as usize;
                        if v != 0 {
                            let row = &self.tables[((group0 + q) * GROUP_ENTRIES + v) * k..][..k];
                            for (s, t) in sums.iter_mut().zip(row) {
                                *s += t;
                            }
                        }
                    }
                }
            }
            for (a, &s) in acc.iter_mut().zip(&plane_sums) {
                *a = 2 * *a + u128::from(s);
            }
        }
        let shift = 32 - p.bits();
        for (idx, (o, a)) in out.iter_mut().zip(&acc).enumerate() {
            *o = Score::from_parts(self.centers.norm_sq(idx % k), a << shift);
        }
    }

    /// Scores of a single sample, one traversal of its `p` planes.
    pub fn sample_scores<S: PlaneSource + ?Sized>(
        &self,
        src: &S,
        i: usize,
        p: PrecisionLevel,
    ) -> Result<Vec<Score>, KernelError> {
        check_sample(&self.shape, i)?;
        let (k, difp) = (self.k, self.shape.layout.difp);
        let (batch, slot) = (i / self.shape.layout.disp, i % self.shape.layout.disp);
        let mut sums = vec![0u64; k];
        let mut acc = vec![0u128; k];
        for plane in 0..p.bits() as usize {
            sums.fill(0);
            for chunk in 0..self.shape.n_chunks {
                let mask = slot_mask(src.line(batch, plane, chunk), slot, difp);
                let group0 = chunk * difp / GROUP;
                for q in 0..difp / GROUP {
                    let v = ((mask >> (q * GROUP)) & 0xF) as usize;
                    let row = &self.tables[((group0 + q) * GROUP_ENTRIES + v) * k..][..k];
                    for (s, t) in sums.iter_mut().zip(row) {
                        *s += t;
                    }
                }
            }
            for (a, &s) in acc.iter_mut().zip(&sums) {
                *a = 2 * *a + u128::from(s);
            }
        }
        let shift = 32 - p.bits();
        Ok(acc.iter().enumerate().map(|(c, a)| Score::from_parts(self.centers.norm_sq(c), a << shift)).collect())
    }
}

/// `||c_k||^2 - 2 x_p.c_k` for every center.
pub fn scores<S: PlaneSource + ?Sized>(
    src: &S,
    i: usize,
    centers: &CenterSet,
    p: PrecisionLevel,
) -> Result<Vec<Score>, KernelError> {
    ScoreKernel::new(centers, src.shape())?.sample_scores(src, i, p)
}

/// Index of the smallest score; ties go to the lowest index.
pub fn assign(scores: &[Score]) -> usize {
    let mut best = 0;
    for (k, s) in scores.iter().enumerate().skip(1) {
        if *s < scores[best] {
            best = k;
        }
    }
    best
}
