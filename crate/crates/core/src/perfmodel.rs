//! Shape-only performance model of the bit-serial K-Means datapath.
//!
//! Per iteration the engine streams `p` planes of every (batch, chunk) pair,
//! one 512-bit line per cycle, so runtime is the larger of the memory time and
//! the pipeline time. Aggregation/division stalls and DRAM row-buffer misses
//! are optional calibration terms, both off by default.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::PrecisionLevel;
use crate::weave::{LayoutParams, PLANES};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape must have at least one sample and one feature (n = {n}, d = {d})")]
    EmptyShape { n: u64, d: u64 },
    #[error("{d} features exceed the supported maximum of {max}")]
    TooManyFeatures { d: u64, max: u64 },
    #[error("invalid hardware parameters: {0}")]
    InvalidParams(String),
}

/// Stall cycles per iteration: `cycles_per_center_chunk * k * chunks + fixed_cycles`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverheadModel {
    pub enabled: bool,
    pub cycles_per_center_chunk: u64,
    pub fixed_cycles: u64,
}

impl Default for OverheadModel {
    fn default() -> Self {
        Self { enabled: false, cycles_per_center_chunk: 16, fixed_cycles: 1000 }
    }
}

/// Bandwidth derating for strided low-precision reads.
///
/// Reading `p` of every `plane_extent` planes hits an open DRAM row with
/// fraction `p / plane_extent`. At or above `min_hit_fraction` no penalty
/// applies; below it bandwidth drops linearly, reaching `1 - miss_penalty`
/// at a zero hit fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RowBufferModel {
    pub enabled: bool,
    pub plane_extent: u32,
    pub min_hit_fraction: f64,
    pub miss_penalty: f64,
}

impl Default for RowBufferModel {
    fn default() -> Self {
        Self { enabled: false, plane_extent: PLANES as u32, min_hit_fraction: 0.25, miss_penalty: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HwParams {
    pub disp: usize,
    pub difp: usize,
    pub line_bits: usize,
    pub frequency_hz: f64,
    /// Bytes per second one line per cycle can move.
    pub peak_bandwidth: f64,
    /// Bytes per second the host link sustains.
    pub platform_bandwidth_cap: f64,
    pub max_clusters: usize,
    pub max_features: usize,
    pub overhead: OverheadModel,
    pub row_buffer: RowBufferModel,
}

impl Default for HwParams {
    fn default() -> Self {
        Self {
            disp: 32,
            difp: 16,
            line_bits: 512,
            frequency_hz: 200e6,
            peak_bandwidth: 12.8e9,
            platform_bandwidth_cap: 17e9,
            max_clusters: 8,
            max_features: 1024,
            overhead: OverheadModel::default(),
            row_buffer: RowBufferModel::default(),
        }
    }
}

impl HwParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParams(m));
        if self.line_bits != self.disp * self.difp {
            return bad(format!("line_bits {} != disp {} * difp {}", self.line_bits, self.disp, self.difp));
        }
        if let Err(e) = self.layout().validate() {
            return bad(e.to_string());
        }
        for (name, v) in [
            ("frequency_hz", self.frequency_hz),
            ("peak_bandwidth", self.peak_bandwidth),
            ("platform_bandwidth_cap", self.platform_bandwidth_cap),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let rb = &self.row_buffer;
        if rb.plane_extent == 0
            || !(0.0..=1.0).contains(&rb.min_hit_fraction)
            || !(0.0..=1.0).contains(&rb.miss_penalty)
        {
            return bad("row buffer model needs plane_extent > 0 and fractions in [0, 1]".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> LayoutParams {
        LayoutParams { disp: self.disp, difp: self.difp }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEstimate {
    pub n: u64,
    pub d: u64,
    pub k: u64,
    pub precision: u32,
    pub traffic_bits: u64,
    pub compute_cycles: u64,
    pub memory_time_s: f64,
    pub compute_time_s: f64,
    pub effective_bandwidth: f64,
    pub runtime_s: f64,
    /// Bytes of 32-bit source data per second of modeled runtime.
    pub throughput: f64,
    pub speedup_vs_32: f64,
    /// False when `k` exceeds the modeled number of distance processors.
    pub hardware_faithful: bool,
}

fn check_shape(n: u64, d: u64, hw: &HwParams) -> Result<(), ModelError> {
    if n == 0 || d == 0 {
        return Err(ModelError::EmptyShape { n, d });
    }
    if d > hw.max_features as u64 {
        return Err(ModelError::TooManyFeatures { d, max: hw.max_features as u64 });
    }
    Ok(())
}

fn lines(n: u64, d: u64, p: PrecisionLevel, hw: &HwParams) -> u64 {
    n.div_ceil(hw.disp as u64) * u64::from(p.bits()) * d.div_ceil(hw.difp as u64)
}

/// Bits streamed per iteration.
pub fn memory_traffic(n: u64, d: u64, p: PrecisionLevel, hw: &HwParams) -> Result<u64, ModelError> {
    check_shape(n, d, hw)?;
    Ok(lines(n, d, p, hw) * hw.line_bits as u64)
}

pub fn overhead_cycles(k: u64, d: u64, hw: &HwParams) -> u64 {
    let o = &hw.overhead;
    if !o.enabled {
        return 0;
    }
    o.cycles_per_center_chunk * k * d.div_ceil(hw.difp as u64) + o.fixed_cycles
}

/// Pipeline cycles per iteration, one line per cycle plus stalls.
pub fn compute_cycles(n: u64, d: u64, k: u64, p: PrecisionLevel, hw: &HwParams) -> Result<u64, ModelError> {
    check_shape(n, d, hw)?;
    Ok(lines(n, d, p, hw) + overhead_cycles(k, d, hw))
}

/// Fraction of accesses expected to hit an open DRAM row.
pub fn row_buffer_hit_fraction(p: PrecisionLevel, hw: &HwParams) -> f64 {
    (f64::from(p.bits()) / f64::from(hw.row_buffer.plane_extent)).min(1.0)
}

/// Sustained bytes per second at precision `p`.
pub fn effective_bandwidth(p: PrecisionLevel, hw: &HwParams) -> f64 {
    let base = hw.peak_bandwidth.min(hw.platform_bandwidth_cap);
    let rb = &hw.row_buffer;
    if !rb.enabled || p.bits() >= rb.plane_extent {
        return base;
    }
    let hit = row_buffer_hit_fraction(p, hw);
    if hit >= rb.min_hit_fraction {
        base
    } else {
        base * (1.0 - rb.miss_penalty * (1.0 - hit / rb.min_hit_fraction))
    }
}

fn runtime(n: u64, d: u64, k: u64, p: PrecisionLevel, hw: &HwParams) -> Result<(u64, u64, f64, f64, f64), ModelError> {
    let traffic = memory_traffic(n, d, p, hw)?;
    let cycles = compute_cycles(n, d, k, p, hw)?;
    let bandwidth = effective_bandwidth(p, hw);
    let memory_time = traffic as f64 / 8.0 / bandwidth;
    let compute_time = cycles as f64 / hw.frequency_hz;
    Ok((traffic, cycles, bandwidth, memory_time, compute_time))
}

pub fn estimate_iteration(
    n: u64,
    d: u64,
    k: u64,
    p: PrecisionLevel,
    hw: &HwParams,
) -> Result<IterationEstimate, ModelError> {
    hw.validate()?;
    let (traffic_bits, compute_cycles, effective_bandwidth, memory_time_s, compute_time_s) = runtime(n, d, k, p, hw)?;
    let runtime_s = memory_time_s.max(compute_time_s);
    let (_, _, _, m32, c32) = runtime(n, d, k, PrecisionLevel::FULL, hw)?;
    let source_bytes = (n * d * 4) as f64;
    Ok(IterationEstimate {
        n,
        d,
        k,
        precision: p.bits(),
        traffic_bits,
        compute_cycles,
        memory_time_s,
        compute_time_s,
        effective_bandwidth,
        runtime_s,
        throughput: source_bytes / runtime_s,
        speedup_vs_32: m32.max(c32) / runtime_s,
        hardware_faithful: k <= hw.max_clusters as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(bits: u32) -> PrecisionLevel {
        PrecisionLevel::new(bits).unwrap()
    }

    #[test]
    fn traffic_examples() {
        let hw = HwParams::default();
        assert_eq!(memory_traffic(32, 16, p(1), &hw).unwrap(), 512);
        assert_eq!(memory_traffic(92_000, 178, p(32), &hw).unwrap(), 565_248_000);
        for bits in 1..=32 {
            let per_sample = memory_traffic(32, 178, p(bits), &hw).unwrap() / 32;
            assert_eq!(per_sample, 192 * u64::from(bits));
        }
        assert!(matches!(memory_traffic(0, 4, p(4), &hw), Err(ModelError::EmptyShape { .. })));
        assert!(matches!(memory_traffic(4, 0, p(4), &hw), Err(ModelError::EmptyShape { .. })));
        assert!(matches!(memory_traffic(4, 1025, p(4), &hw), Err(ModelError::TooManyFeatures { .. })));
    }

    #[test]
    fn cycle_examples() {
        let hw = HwParams::default();
        assert_eq!(compute_cycles(111_280, 128, 8, p(32), &hw).unwrap(), 890_368);
        assert_eq!(compute_cycles(32, 16, 1, p(1), &hw).unwrap(), 1);
        assert_eq!(
            compute_cycles(1000, 50, 3, p(12), &hw).unwrap() * 2,
            compute_cycles(1000, 50, 3, p(24), &hw).unwrap()
        );
        let mut stalled = hw;
        stalled.overhead.enabled = true;
        // 16 * 3 * 4 chunks + 1000
        assert_eq!(compute_cycles(32, 50, 3, p(1), &stalled).unwrap(), 4 + 1192);
    }

    #[test]
    fn gas_throughput_endpoint() {
        let e = estimate_iteration(111_280, 128, 8, p(32), &HwParams::default()).unwrap();
        assert!((e.runtime_s - 4.45184e-3).abs() < 1e-9);
        assert!((e.throughput / 12.8e9 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn bandwidth_models() {
        let mut hw = HwParams::default();
        for bits in [1, 4, 32] {
            assert_eq!(effective_bandwidth(p(bits), &hw), 12.8e9);
        }
        hw.row_buffer.enabled = true;
        assert_eq!(row_buffer_hit_fraction(p(4), &hw), 0.125);
        assert!(effective_bandwidth(p(4), &hw) < 12.8e9);
        assert!(effective_bandwidth(p(2), &hw) < effective_bandwidth(p(4), &hw));
        for bits in 8..=32 {
            assert_eq!(effective_bandwidth(p(bits), &hw), 12.8e9);
        }
        hw.peak_bandwidth = 20e9;
        hw.row_buffer.enabled = false;
        assert_eq!(effective_bandwidth(p(9), &hw), 17e9);
    }

    #[test]
    fn speedups() {
        let mut hw = HwParams::default();
        for (n, d) in [(10_000, 32), (92_000, 178), (7, 3), (581_012, 54)] {
            for bits in 1..=32 {
                let e = estimate_iteration(n, d, 4, p(bits), &hw).unwrap();
                let want = 32.0 / f64::from(bits);
                assert!((e.speedup_vs_32 - want).abs() <= 1e-12 * want);
            }
        }
        hw.row_buffer.enabled = true;
        let e = estimate_iteration(10_000, 32, 4, p(4), &hw).unwrap();
        assert!(e.speedup_vs_32 < 8.0 && e.speedup_vs_32 > 6.0);
    }

    #[test]
    fn monotone_in_shape() {
        let mut hw = HwParams::default();
        hw.overhead.enabled = true;
        hw.row_buffer.enabled = true;
        let rt = |n, d, bits| estimate_iteration(n, d, 3, p(bits), &hw).unwrap().runtime_s;
        for bits in 1..32 {
            assert!(rt(5000, 40, bits) <= rt(5000, 40, bits + 1));
        }
        assert!(rt(5000, 40, 8) <= rt(5001, 40, 8));
        assert!(rt(5000, 40, 8) <= rt(5000, 41, 8));
        let mut faster = hw;
        faster.peak_bandwidth *= 2.0;
        let slow = estimate_iteration(5000, 40, 3, p(8), &hw).unwrap().runtime_s;
        let fast = estimate_iteration(5000, 40, 3, p(8), &faster).unwrap().runtime_s;
        assert!(fast <= slow);
    }

    #[test]
    fn flags_too_many_clusters() {
        let hw = HwParams::default();
        assert!(estimate_iteration(100, 4, 8, p(8), &hw).unwrap().hardware_faithful);
        assert!(!estimate_iteration(100, 4, 9, p(8), &hw).unwrap().hardware_faithful);
    }

    #[test]
    fn params_json_defaults() {
        let hw: HwParams = serde_json::from_str(r#"{"frequency_hz": 1e8, "row_buffer": {"enabled": true}}"#).unwrap();
        assert_eq!(hw.frequency_hz, 1e8);
        assert_eq!(hw.disp, 32);
        assert!(hw.row_buffer.enabled);
        assert_eq!(hw.row_buffer.plane_extent, 32);
        let bad = HwParams { line_bits: 256, ..HwParams::default() };
        assert!(bad.validate().is_err());
    }
}
