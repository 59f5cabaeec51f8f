//! Lloyd iteration over weaved data at a chosen precision.
//!
//! One iteration assigns every sample with the bit-serial kernel, aggregates
//! the truncated samples per cluster in exact integer arithmetic, divides to
//! obtain new 32-bit centers and records the within-cluster sum of squares of
//! the truncated data against those new centers.

mod reference;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitserial::{assign, KernelError, Score, ScoreKernel};
use crate::fixedpoint::{FixedMatrix, PrecisionLevel, FRACTION_ONE};
use crate::weave::{unweave, PlaneSource};

pub use reference::{reference_lloyd, ReferenceResult};

/// Samples per partial-sum block. Fixed so merge order never depends on the
/// worker count.
const BLOCK: usize = 4096;

/// Clusters the modeled hardware supports.
pub const HW_MAX_CLUSTERS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum KMeansError {
    #[error("at least one center is required")]
    NoCenters,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("assignment {value} at sample {index} is not below k = {k}")]
    BadAssignment { index: usize, value: u32, k: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Centers as 32-bit fractions plus their exact squared norms at scale `2^-64`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenterSet {
    d: usize,
    coords: Vec<u32>,
    norm_sq: Vec<u128>,
}

fn norm_sq(coords: &[u32]) -> u128 {
    coords.iter().map(|&c| u128::from(c) * u128::from(c)).sum()
}

/// Center pre-processing: validates the centers and computes `||c||^2`.
pub fn preprocess_centers(rows: &[Vec<u32>]) -> Result<CenterSet, KMeansError> {
    let first = rows.first().ok_or(KMeansError::NoCenters)?;
    let d = first.len();
    if d == 0 {
        return Err(KMeansError::DimensionMismatch { expected: 1, actual: 0 });
    }
    let mut coords = Vec::with_capacity(rows.len() * d);
    for row in rows {
        if row.len() != d {
            return Err(KMeansError::DimensionMismatch { expected: d, actual: row.len() });
        }
        coords.extend_from_slice(row);
    }
    Ok(CenterSet::from_flat(d, coords))
}

impl CenterSet {
    fn from_flat(d: usize, coords: Vec<u32>) -> Self {
        let norm_sq = coords.chunks_exact(d).map(norm_sq).collect();
        Self { d, coords, norm_sq }
    }

    pub fn k(&self) -> usize {
        self.norm_sq.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn coords(&self, k: usize) -> &[u32] {
        &self.coords[k * self.d..(k + 1) * self.d]
    }

    pub fn norm_sq(&self, k: usize) -> u128 {
        self.norm_sq[k]
    }

    pub fn rows(&self) -> Vec<Vec<u32>> {
        self.coords.chunks_exact(self.d).map(<[u32]>::to_vec).collect()
    }

    /// Centers as fractions in `[0, 1)`.
    pub fn to_fractions(&self) -> Vec<Vec<f64>> {
        self.coords.chunks_exact(self.d).map(|c| c.iter().map(|&v| f64::from(v) / FRACTION_ONE).collect()).collect()
    }
}

/// Cluster index of every real sample at precision `p`.
pub fn assign_all<S: PlaneSource + ?Sized>(
    src: &S,
    centers: &CenterSet,
    p: PrecisionLevel,
) -> Result<Vec<u32>, KMeansError> {
    let shape = *src.shape();
    let kernel = ScoreKernel::new(centers, &shape)?;
    let k = kernel.k();
    let mut out = vec![0u32; shape.n];
    out.par_chunks_mut(shape.layout.disp).enumerate().for_each_init(
        || vec![Score::default(); shape.layout.disp * k],
        |scratch, (b, slots)| {
            kernel.batch_scores(src, b, p, scratch);
            for (slot, a) in slots.iter_mut().enumerate() {
                *a = assign(&scratch[slot * k..(slot + 1) * k]) as u32;
            }
        },
    );
    Ok(out)
}

/// Per-cluster coordinate sums (scale `2^-32`) and member counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accumulation {
    pub k: usize,
    pub d: usize,
    pub sums: Vec<u64>,
    pub counts: Vec<u64>,
}

impl Accumulation {
    pub fn sums(&self, k: usize) -> &[u64] {
        &self.sums[k * self.d..(k + 1) * self.d]
    }
}

fn check_assignments(n: usize, assignments: &[u32], k: usize) -> Result<(), KMeansError> {
    if assignments.len() != n {
        return Err(KMeansError::DimensionMismatch { expected: n, actual: assignments.len() });
    }
    match assignments.iter().position(|&a| a as usize >= k) {
        Some(index) => Err(KMeansError::BadAssignment { index, value: assignments[index], k }),
        None => Ok(()),
    }
}

/// Aggregation stage.
pub fn accumulate(m_p: &FixedMatrix, assignments: &[u32], k: usize) -> Result<Accumulation, KMeansError> {
    if k == 0 {
        return Err(KMeansError::NoCenters);
    }
    check_assignments(m_p.rows(), assignments, k)?;
    let d = m_p.cols();
    let partials: Vec<(Vec<u64>, Vec<u64>)> = m_p
        .as_slice()
        .par_chunks(BLOCK * d.max(1))
        .zip(assignments.par_chunks(BLOCK))
        .map(|(rows, labels)| {
            let mut sums = vec![0u64; k * d];
            let mut counts = vec![0u64; k];
            for (row, &a) in rows.chunks_exact(d).zip(labels) {
                let a = a as usize;
                counts[a] += 1;
                for (s, &x) in sums[a * d..(a + 1) * d].iter_mut().zip(row) {
                    *s += u64::from(x);
                }
            }
            (sums, counts)
        })
        .collect();

    let mut sums = vec![0u64; k * d];
    let mut counts = vec![0u64; k];
    for (ps, pc) in partials {
        sums.iter_mut().zip(ps).for_each(|(a, b)| *a += b);
        counts.iter_mut().zip(pc).for_each(|(a, b)| *a += b);
    }
    Ok(Accumulation { k, d, sums, counts })
}

/// `sum / count` rounded half to even.
fn div_round_even(sum: u64, count: u64) -> u64 {
    let (q, r) = (sum / count, sum % count);
    match (2 * u128::from(r)).cmp(&u128::from(count)) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
        std::cmp::Ordering::Less => q,
    }
}

/// Division stage. Empty clusters keep their previous center.
pub fn divide(acc: &Accumulation, previous: &CenterSet) -> Result<CenterSet, KMeansError> {
    if acc.k != previous.k() {
        return Err(KMeansError::DimensionMismatch { expected: previous.k(), actual: acc.k });
    }
    if acc.d != previous.d() {
        return Err(KMeansError::DimensionMismatch { expected: previous.d(), actual: acc.d });
    }
    let mut coords = Vec::with_capacity(acc.k * acc.d);
    for c in 0..acc.k {
        match acc.counts[c] {
            0 => coords.extend_from_slice(previous.coords(c)),
            count => {
                coords.extend(acc.sums(c).iter().map(|&s| div_round_even(s, count).min(u64::from(u32::MAX)) as u32))
            }
        }
    }
    Ok(CenterSet::from_flat(acc.d, coords))
}

/// Within-cluster sum of squares in the fraction domain.
pub fn loss(m_p: &FixedMatrix, centers: &CenterSet, assignments: &[u32]) -> Result<f64, KMeansError> {
    if m_p.cols() != centers.d() {
        return Err(KMeansError::DimensionMismatch { expected: centers.d(), actual: m_p.cols() });
    }
    check_assignments(m_p.rows(), assignments, centers.k())?;
    let d = m_p.cols();
    let fractions = centers.to_fractions();
    let partials: Vec<f64> = m_p
        .as_slice()
        .par_chunks(BLOCK * d)
        .zip(assignments.par_chunks(BLOCK))
        .map(|(rows, labels)| {
            let mut total = 0.0;
            for (row, &a) in rows.chunks_exact(d).zip(labels) {
                let c = &fractions[a as usize];
                total += row
                    .iter()
                    .zip(c)
                    .map(|(&x, &cj)| {
                        let diff = f64::from(x) / FRACTION_ONE - cj;
                        diff * diff
                    })
                    .sum::<f64>();
            }
            total
        })
        .collect();
    Ok(partials.into_iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub max_iters: usize,
    /// Relative loss change below which the run stops.
    pub tol: f64,
    /// Keep every iteration's assignments.
    #[serde(default)]
    pub record_history: bool,
}

impl Default for RunParams {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-6, record_history: false }
    }
}

impl RunParams {
    pub fn validate(&self) -> Result<(), KMeansError> {
        if self.max_iters == 0 {
            return Err(KMeansError::InvalidParams("max_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(KMeansError::InvalidParams(format!("tol {} must be finite and >= 0", self.tol)));
        }
        Ok(())
    }

    fn loss_settled(&self, prev: f64, cur: f64) -> bool {
        (cur - prev).abs() / prev.max(f64::MIN_POSITIVE) < self.tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The update left every center unchanged, so the next assignment would
    /// repeat this one.
    CentersStable,
    LossTolerance,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub centers: CenterSet,
    /// Assignments of the final iteration.
    pub assignments: Vec<u32>,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Per-iteration assignments when requested.
    pub history: Option<Vec<Vec<u32>>>,
}

/// Lloyd's algorithm on the `p` most significant planes of `src`.
pub fn run<S: PlaneSource + ?Sized>(
    src: &S,
    init: &CenterSet,
    p: PrecisionLevel,
    params: &RunParams,
) -> Result<TrainResult, KMeansError> {
    params.validate()?;
    if init.d() != src.shape().d {
        return Err(KMeansError::DimensionMismatch { expected: src.shape().d, actual: init.d() });
    }
    let m_p = unweave(src, p);
    let k = init.k();
    let mut centers = init.clone();
    let mut assignments = Vec::new();
    let mut loss_trace = Vec::new();
    let mut history = params.record_history.then(Vec::new);
    let mut stop_reason = StopReason::MaxIters;

    for iter in 0..params.max_iters {
        assignments = assign_all(src, &centers, p)?;
        let acc = accumulate(&m_p, &assignments, k)?;
        let updated = divide(&acc, &centers)?;
        let l = loss(&m_p, &updated, &assignments)?;
        if let Some(h) = history.as_mut() {
            h.push(assignments.clone());
        }
        loss_trace.push(l);

        let stable = updated == centers;
        centers = updated;
        if stable {
            stop_reason = StopReason::CentersStable;
            break;
        }
        if iter > 0 && params.loss_settled(loss_trace[iter - 1], l) {
            stop_reason = StopReason::LossTolerance;
            break;
        }
    }

    Ok(TrainResult {
        centers,
        assignments,
        iterations: loss_trace.len(),
        loss_trace,
        converged: stop_reason != StopReason::MaxIters,
        stop_reason,
        history,
    })
}
