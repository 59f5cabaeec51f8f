//! CSV ingestion and seeded synthetic blobs.

use std::fs::File;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::HarnessError;
use crate::fixedpoint::RealMatrix;

/// Reads a numeric CSV. With `has_header` the first line is skipped.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<RealMatrix, HarnessError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => HarnessError::MissingFile(path.to_path_buf()),
        _ => HarnessError::Io { path: path.to_path_buf(), source: e },
    })?;
    let mut reader =
        csv::ReaderBuilder::new().has_headers(has_header).flexible(true).trim(csv::Trim::All).from_reader(file);

    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(HarnessError::Ragged { line, expected, actual: record.len() });
        }
        for (col, cell) in record.iter().enumerate() {
            let x = cell.parse::<f64>().map_err(|_| HarnessError::NonNumeric {
                line,
                column: col + 1,
                value: cell.to_string(),
            })?;
            values.push(x);
        }
        rows += 1;
    }
    match width {
        Some(d) => Ok(RealMatrix::new(rows, d, values)?),
        None => Err(HarnessError::EmptyFile(path.to_path_buf())),
    }
}

/// Writes `data` as a header-less CSV.
pub fn write_csv(path: impl AsRef<Path>, data: &RealMatrix) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for row in data.iter_rows() {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

/// `k` isotropic Gaussian clusters.
///
/// Randomness comes from ChaCha8 (a counter-based stream cipher generator)
/// seeded with `seed`, so output is identical on every platform. Cluster
/// means are drawn uniformly from `[0, 10)^d`; sample `i` belongs to cluster
/// `i % k` and equals its mean plus `spread` times a standard normal vector.
pub fn gen_blobs(n: usize, d: usize, k: usize, seed: u64, spread: f64) -> Result<(RealMatrix, Vec<u32>), HarnessError> {
    if k == 0 || n < k || d == 0 {
        return Err(HarnessError::InvalidShape(format!("need n >= k >= 1 and d >= 1 (n={n}, d={d}, k={k})")));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(HarnessError::InvalidShape(format!("spread {spread} must be finite and >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<f64> = (0..k * d).map(|_| rng.random_range(0.0..10.0)).collect();
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        labels.push(c as u32);
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            values.push(means[c * d + j] + spread * z);
        }
    }
    Ok((RealMatrix::new(n, d, values)?, labels))
}
