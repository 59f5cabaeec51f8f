//! Precision sweeps: one weaved copy, one Lloyd run per precision level,
//! modeled hardware time attached to every iteration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{gen_blobs, load_csv};
use super::HarnessError;
use crate::fixedpoint::{fit_normalizer, quantize, FixedMatrix, PrecisionLevel, RealMatrix, FRACTION_ONE};
use crate::kmeans::{preprocess_centers, run, CenterSet, RunParams, StopReason};
use crate::perfmodel::{estimate_iteration, HwParams};
use crate::weave::{weave, WeavedMatrix, MAX_FEATURES};

pub const REPORT_SCHEMA: &str = "biskm-report/1";

/// Non-empty, ascending, duplicate-free precision levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct PrecisionList(Vec<PrecisionLevel>);

impl PrecisionList {
    pub fn new(bits: impl IntoIterator<Item = u32>) -> Result<Self, HarnessError> {
        let mut levels = bits.into_iter().map(PrecisionLevel::new).collect::<Result<Vec<_>, _>>()?;
        levels.sort_unstable();
        levels.dedup();
        if levels.is_empty() {
            return Err(HarnessError::InvalidConfig("precision list is empty".into()));
        }
        Ok(Self(levels))
    }

    pub fn levels(&self) -> &[PrecisionLevel] {
        &self.0
    }
}

impl TryFrom<Vec<u32>> for PrecisionList {
    type Error = HarnessError;

    fn try_from(v: Vec<u32>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<PrecisionList> for Vec<u32> {
    fn from(l: PrecisionList) -> Self {
        l.0.into_iter().map(PrecisionLevel::bits).collect()
    }
}

impl FromStr for PrecisionList {
    type Err = HarnessError;

    /// Parses `"4,6,8"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = s
            .split(',')
            .map(|t| t.trim().parse::<u32>().map_err(|_| HarnessError::InvalidConfig(format!("bad precision {t:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(bits)
    }
}

impl fmt::Display for PrecisionList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSource {
    Csv { path: PathBuf, has_header: bool },
    Blobs { n: usize, d: usize, k: usize, seed: u64, spread: f64 },
}

impl DatasetSource {
    pub fn load(&self) -> Result<RealMatrix, HarnessError> {
        match self {
            DatasetSource::Csv { path, has_header } => load_csv(path, *has_header),
            DatasetSource::Blobs { n, d, k, seed, spread } => Ok(gen_blobs(*n, *d, *k, *seed, *spread)?.0),
        }
    }

    fn describe(&self) -> String {
        match self {
            DatasetSource::Csv { path, .. } => format!("csv:{}", path.display()),
            DatasetSource::Blobs { n, d, k, seed, spread } => {
                format!("blobs:n={n},d={d},k={k},seed={seed},spread={spread}")
            }
        }
    }
}

/// Where the initial centers come from. Explicit centers are fractions in
/// `[0, 1)` of the normalized feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitCenters {
    Explicit(Vec<Vec<f64>>),
    /// `k` distinct data rows drawn with a seeded ChaCha8 generator.
    Seeded(u64),
}

/// Converts normalized fractions into raw 32-bit center coordinates.
pub fn centers_from_fractions(rows: &[Vec<f64>]) -> Result<CenterSet, HarnessError> {
    let mut raw = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut out = Vec::with_capacity(row.len());
        for (j, &x) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) {
                return Err(HarnessError::InvalidConfig(format!(
                    "initial center {i}, coordinate {j}: {x} is outside [0, 1]"
                )));
            }
            out.push((x * FRACTION_ONE).round().min(f64::from(u32::MAX)) as u32);
        }
        raw.push(out);
    }
    Ok(preprocess_centers(&raw)?)
}

/// Picks `k` distinct rows of `m` at full precision.
pub fn seeded_centers(m: &FixedMatrix, k: usize, seed: u64) -> Result<CenterSet, HarnessError> {
    if k == 0 || k > m.rows() {
        return Err(HarnessError::InvalidConfig(format!("cannot draw {k} centers from {} rows", m.rows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<u32>> = index::sample(&mut rng, m.rows(), k).into_iter().map(|i| m.row(i).to_vec()).collect();
    Ok(preprocess_centers(&rows)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub precisions: PrecisionList,
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub init: InitCenters,
    #[serde(default)]
    pub hw: HwParams,
    pub dataset: DatasetSource,
    /// Copies of the dataset the modeled hardware streams. Affects modeled
    /// time only; identical copies cannot change Lloyd's trajectory.
    #[serde(default = "one")]
    pub duplicate: u64,
}

fn one() -> u64 {
    1
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.k == 0 {
            return Err(HarnessError::InvalidConfig("k must be at least 1".into()));
        }
        if self.duplicate == 0 {
            return Err(HarnessError::InvalidConfig("duplicate must be at least 1".into()));
        }
        if let InitCenters::Explicit(rows) = &self.init {
            if rows.len() != self.k {
                return Err(HarnessError::InvalidConfig(format!(
                    "{} explicit centers given for k = {}",
                    rows.len(),
                    self.k
                )));
            }
        }
        self.hw.validate()?;
        self.run_params().validate()?;
        Ok(())
    }

    pub fn run_params(&self) -> RunParams {
        RunParams { max_iters: self.max_iters, tol: self.tol, record_history: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub n: usize,
    pub d: usize,
    pub d_pad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub precision: u32,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    pub runtime_per_iter_s: f64,
    /// Modeled time at the end of each iteration.
    pub cum_modeled_time_s: Vec<f64>,
    pub traffic_bits: u64,
    pub speedup_vs_32: f64,
    pub hardware_faithful: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: String,
    pub tool_version: String,
    pub dataset: DatasetInfo,
    pub config: SweepConfig,
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    pub fn entry(&self, precision: u32) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.precision == precision)
    }
}

/// Host wall-clock time, kept out of the report so reports stay reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct WallClock {
    pub total_s: f64,
    pub per_precision_s: Vec<(u32, f64)>,
}

/// Quantized and weaved dataset shared by every precision of a sweep.
pub struct PreparedData {
    pub fixed: FixedMatrix,
    pub weaved: WeavedMatrix,
    pub info: DatasetInfo,
}

pub fn prepare(config: &SweepConfig) -> Result<PreparedData, HarnessError> {
    let data = config.dataset.load()?;
    if data.cols() > MAX_FEATURES {
        return Err(HarnessError::InvalidShape(format!(
            "{} features exceed the hardware bound of {MAX_FEATURES}",
            data.cols()
        )));
    }
    let norm = fit_normalizer(&data)?;
    let fixed = quantize(&data, &norm)?;
    let weaved = weave(&fixed, config.hw.layout())?;
    let info = DatasetInfo {
        source: config.dataset.describe(),
        n: fixed.rows(),
        d: fixed.cols(),
        d_pad: weaved.shape().d_pad,
    };
    Ok(PreparedData { fixed, weaved, info })
}

pub fn initial_centers(config: &SweepConfig, data: &FixedMatrix) -> Result<CenterSet, HarnessError> {
    let centers = match &config.init {
        InitCenters::Explicit(rows) => centers_from_fractions(rows)?,
        InitCenters::Seeded(seed) => seeded_centers(data, config.k, *seed)?,
    };
    if centers.d() != data.cols() {
        return Err(HarnessError::InvalidConfig(format!(
            "initial centers have {} coordinates, data has {}",
            centers.d(),
            data.cols()
        )));
    }
    Ok(centers)
}

/// Runs the sweep on the current rayon pool.
pub fn sweep(config: &SweepConfig) -> Result<(SweepReport, WallClock), HarnessError> {
    let start = Instant::now();
    config.validate()?;
    let prepared = prepare(config)?;
    let init = initial_centers(config, &prepared.fixed)?;
    let params = config.run_params();
    let (n, d, k) = (prepared.info.n as u64 * config.duplicate, prepared.info.d as u64, config.k as u64);

    let results: Vec<(SweepEntry, f64)> = config
        .precisions
        .levels()
        .par_iter()
        .map(|&p| -> Result<(SweepEntry, f64), HarnessError> {
            let t0 = Instant::now();
            let result = run(&prepared.weaved, &init, p, &params)?;
            let est = estimate_iteration(n, d, k, p, &config.hw)?;
            let cum = (1..=result.iterations).map(|i| i as f64 * est.runtime_s).collect();
            let entry = SweepEntry {
                precision: p.bits(),
                iterations: result.iterations,
                converged: result.converged,
                stop_reason: result.stop_reason,
                final_loss: *result.loss_trace.last().expect("at least one iteration"),
                loss_trace: result.loss_trace,
                runtime_per_iter_s: est.runtime_s,
                cum_modeled_time_s: cum,
                traffic_bits: est.traffic_bits,
                speedup_vs_32: est.speedup_vs_32,
                hardware_faithful: est.hardware_faithful,
            };
            Ok((entry, t0.elapsed().as_secs_f64()))
        })
        .collect::<Result<_, _>>()?;

    let per_precision_s = results.iter().map(|(e, t)| (e.precision, *t)).collect();
    let report = SweepReport {
        schema: REPORT_SCHEMA.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset: prepared.info,
        config: config.clone(),
        entries: results.into_iter().map(|(e, _)| e).collect(),
    };
    Ok((report, WallClock { total_s: start.elapsed().as_secs_f64(), per_precision_s }))
}

/// Runs the sweep on a dedicated pool of `workers` threads.
pub fn sweep_with_workers(config: &SweepConfig, workers: usize) -> Result<(SweepReport, WallClock), HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    pool.install(|| sweep(config))
}
