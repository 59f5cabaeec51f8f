//! Per-feature min-max normalization into 32-bit unsigned fixed-point
//! fractions, and MSB truncation to any precision level.
//!
//! A raw value `r` stands for the fraction `r / 2^32` in `[0, 1)`. Quantization
//! scales by `2^32 - 1` so both column endpoints are representable exactly.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest scale factor used by [`quantize`] and [`dequantize`].
const SCALE: f64 = u32::MAX as f64;

/// `2^32`, the denominator of the fraction interpretation.
pub const FRACTION_ONE: f64 = 4_294_967_296.0;

#[derive(Debug, Error, PartialEq)]
pub enum FixedPointError {
    #[error("matrix has no rows or no columns")]
    Empty,
    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch: expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("buffer of length {len} is not a {n}x{d} matrix")]
    BadShape { n: usize, d: usize, len: usize },
    #[error("precision level {0} is outside 1..=32")]
    InvalidPrecision(u32),
}

/// Dense row-major matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl RealMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self, FixedPointError> {
        if n.checked_mul(d) != Some(values.len()) {
            return Err(FixedPointError::BadShape { n, d, len: values.len() });
        }
        Ok(Self { n, d, values })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FixedPointError> {
        let d = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(FixedPointError::DimensionMismatch { expected: d, actual: row.len() });
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), d, values)
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.d.max(1)).take(self.n)
    }
}

/// Row-major matrix of raw 32-bit fixed-point fractions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedMatrix {
    n: usize,
    d: usize,
    values: Vec<u32>,
}

impl FixedMatrix {
    pub fn new(n: usize, d: usize, values: Vec<u32>) -> Result<Self, FixedPointError> {
        if n.checked_mul(d) != Some(values.len()) {
            return Err(FixedPointError::BadShape { n, d, len: values.len() });
        }
        Ok(Self { n, d, values })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self { n, d, values: vec![0; n * d] }
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.values[i * self.d + j]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [u32] {
        &mut self.values
    }

    /// Elementwise [`truncate_msb`].
    pub fn truncated(&self, p: PrecisionLevel) -> Self {
        Self { n: self.n, d: self.d, values: self.values.iter().map(|&v| truncate_msb(v, p)).collect() }
    }

    /// Interprets every raw value as the fraction `raw / 2^32`.
    pub fn to_fractions(&self) -> RealMatrix {
        RealMatrix { n: self.n, d: self.d, values: self.values.iter().map(|&v| f64::from(v) / FRACTION_ONE).collect() }
    }
}

/// Number of most significant bits consumed from every 32-bit value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct PrecisionLevel(u8);

impl PrecisionLevel {
    pub const FULL: PrecisionLevel = PrecisionLevel(32);

    pub fn new(bits: u32) -> Result<Self, FixedPointError> {
        if (1..=32).contains(&bits) {
            Ok(Self(bits as u8))
        } else {
            Err(FixedPointError::InvalidPrecision(bits))
        }
    }

    pub fn bits(self) -> u32 {
        u32::from(self.0)
    }

    /// All levels `1..=32`, ascending.
    pub fn all() -> impl Iterator<Item = PrecisionLevel> {
        (1..=32).map(PrecisionLevel)
    }
}

impl TryFrom<u32> for PrecisionLevel {
    type Error = FixedPointError;

    fn try_from(bits: u32) -> Result<Self, Self::Error> {
        Self::new(bits)
    }
}

impl From<PrecisionLevel> for u32 {
    fn from(p: PrecisionLevel) -> u32 {
        p.bits()
    }
}

impl fmt::Display for PrecisionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-feature affine map from data units onto `[0, 2^32 - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    min: Vec<f64>,
    range: Vec<f64>,
}

impl Normalizer {
    pub fn features(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn range(&self) -> &[f64] {
        &self.range
    }

    fn quantize_value(&self, x: f64, j: usize) -> u32 {
        let range = self.range[j];
        if range == 0.0 {
            return 0;
        }
        // f64::round is half-away-from-zero; `as` saturates at both ends.
        ((x - self.min[j]) / range * SCALE).round().clamp(0.0, SCALE) as u32
    }
}

/// Column minima and ranges of `data`.
pub fn fit_normalizer(data: &RealMatrix) -> Result<Normalizer, FixedPointError> {
    if data.rows() == 0 || data.cols() == 0 {
        return Err(FixedPointError::Empty);
    }
    let d = data.cols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for (i, row) in data.iter_rows().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if !x.is_finite() {
                return Err(FixedPointError::NonFinite { row: i, col: j, value: x });
            }
            lo[j] = lo[j].min(x);
            hi[j] = hi[j].max(x);
        }
    }
    let range = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
    Ok(Normalizer { min: lo, range })
}

pub fn quantize(data: &RealMatrix, norm: &Normalizer) -> Result<FixedMatrix, FixedPointError> {
    if data.cols() != norm.features() {
        return Err(FixedPointError::DimensionMismatch { expected: norm.features(), actual: data.cols() });
    }
    let d = data.cols();
    let values = data.as_slice().iter().enumerate().map(|(idx, &x)| norm.quantize_value(x, idx % d)).collect();
    Ok(FixedMatrix { n: data.rows(), d, values })
}

/// Keeps the `p` most significant bits of `raw`.
#[inline]
pub fn truncate_msb(raw: u32, p: PrecisionLevel) -> u32 {
    raw & (u32::MAX << (32 - p.bits()))
}

/// Maps a raw value of feature `j` back into data units.
pub fn dequantize(raw: u32, norm: &Normalizer, j: usize) -> f64 {
    norm.min[j] + f64::from(raw) / SCALE * norm.range[j]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(bits: u32) -> PrecisionLevel {
        PrecisionLevel::new(bits).unwrap()
    }

    #[test]
    fn fit_single_columns() {
        let m = RealMatrix::new(3, 1, vec![2.0, 4.0, 6.0]).unwrap();
        let n = fit_normalizer(&m).unwrap();
        assert_eq!(n.min(), &[2.0]);
        assert_eq!(n.range(), &[4.0]);

        let c = RealMatrix::new(2, 1, vec![5.0, 5.0]).unwrap();
        let n = fit_normalizer(&c).unwrap();
        assert_eq!(n.min(), &[5.0]);
        assert_eq!(n.range(), &[0.0]);
    }

    #[test]
    fn fit_columns_independently() {
        let m = RealMatrix::from_rows(&[vec![0.0, 10.0], vec![1.0, 30.0]]).unwrap();
        let n = fit_normalizer(&m).unwrap();
        assert_eq!(n.min(), &[0.0, 10.0]);
        assert_eq!(n.range(), &[1.0, 20.0]);
    }

    #[test]
    fn fit_rejects_non_finite_with_location() {
        let m = RealMatrix::from_rows(&[vec![0.0, 1.0], vec![f64::NAN, 2.0]]).unwrap();
        match fit_normalizer(&m) {
            Err(FixedPointError::NonFinite { row: 1, col: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let empty = RealMatrix::new(0, 3, vec![]).unwrap();
        assert_eq!(fit_normalizer(&empty), Err(FixedPointError::Empty));
    }

    #[test]
    fn quantize_endpoints_and_midpoint() {
        let m = RealMatrix::new(3, 1, vec![2.0, 6.0, 4.0]).unwrap();
        let norm = fit_normalizer(&m).unwrap();
        let q = quantize(&m, &norm).unwrap();
        // round(0.5 * (2^32 - 1)) = round(2147483647.5) = 2^31
        assert_eq!(q.as_slice(), &[0, 0xFFFF_FFFF, 0x8000_0000]);
    }

    #[test]
    fn quantize_constant_and_out_of_range() {
        let m = RealMatrix::new(2, 1, vec![5.0, 5.0]).unwrap();
        let norm = fit_normalizer(&m).unwrap();
        assert_eq!(quantize(&m, &norm).unwrap().as_slice(), &[0, 0]);

        let fit = RealMatrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let norm = fit_normalizer(&fit).unwrap();
        let wild = RealMatrix::new(2, 1, vec![-3.0, 7.5]).unwrap();
        assert_eq!(quantize(&wild, &norm).unwrap().as_slice(), &[0, u32::MAX]);

        let wrong = RealMatrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(quantize(&wrong, &norm), Err(FixedPointError::DimensionMismatch { expected: 1, actual: 2 })));
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate_msb(0xFFFF_FFFF, p(4)), 0xF000_0000);
        assert_eq!(truncate_msb(0xDEAD_BEEF, p(8)), 0xDE00_0000);
        assert_eq!(truncate_msb(0xDEAD_BEEF, p(32)), 0xDEAD_BEEF);
        assert_eq!(truncate_msb(0x7FFF_FFFF, p(1)), 0);
    }

    #[test]
    fn truncate_exhaustive_small_values() {
        for bits in 1..=32 {
            let level = p(bits);
            let mut prev = 0;
            for v in 0..0x1_0000u32 {
                let t = truncate_msb(v << 16, level);
                assert!(t <= v << 16);
                assert!(t >= prev, "monotone");
                assert_eq!(truncate_msb(t, level), t);
                assert!(u64::from((v << 16) - t) < 1u64 << (32 - bits));
                prev = t;
            }
        }
    }

    #[test]
    fn dequantize_endpoints() {
        let m = RealMatrix::new(2, 1, vec![-1.0, 3.0]).unwrap();
        let norm = fit_normalizer(&m).unwrap();
        assert_eq!(dequantize(0, &norm, 0), -1.0);
        assert_eq!(dequantize(u32::MAX, &norm, 0), 3.0);
    }

    #[test]
    fn precision_bounds() {
        assert!(PrecisionLevel::new(0).is_err());
        assert!(PrecisionLevel::new(33).is_err());
        assert_eq!(PrecisionLevel::all().count(), 32);
        let parsed: PrecisionLevel = serde_json::from_str("12").unwrap();
        assert_eq!(parsed.bits(), 12);
        assert!(serde_json::from_str::<PrecisionLevel>("40").is_err());
    }

    proptest! {
        #[test]
        fn truncation_properties(v in any::<u32>(), w in any::<u32>(), bits in 1u32..=32) {
            let level = p(bits);
            let t = truncate_msb(v, level);
            prop_assert!(t <= v);
            prop_assert_eq!(truncate_msb(t, level), t);
            prop_assert!(u64::from(v - t) < 1u64 << (32 - bits));
            if v <= w {
                prop_assert!(t <= truncate_msb(w, level));
            }
        }

        #[test]
        fn dequantize_roundtrip(lo in -1e6f64..1e6, span in 1e-3f64..1e6, t in 0.0f64..=1.0) {
            let m = RealMatrix::new(2, 1, vec![lo, lo + span]).unwrap();
            let norm = fit_normalizer(&m).unwrap();
            let x = lo + t * norm.range()[0];
            let q = quantize(&RealMatrix::new(1, 1, vec![x]).unwrap(), &norm).unwrap();
            let back = dequantize(q.get(0, 0), &norm, 0);
            // half a quantization step plus f64 slack
            let tol = norm.range()[0] / FRACTION_ONE + 1e-9 * (lo.abs() + span);
            prop_assert!((back - x).abs() <= tol, "x={} back={}", x, back);
        }
    }
}
