//! Textbook double-precision Lloyd, used as the correctness oracle for the
//! bit-serial path. Same tie, empty-cluster and stopping rules as [`run`].
//!
//! [`run`]: super::run

use crate::fixedpoint::RealMatrix;

use super::{KMeansError, RunParams, StopReason};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceResult {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<u32>,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub history: Option<Vec<Vec<u32>>>,
}

fn sq_dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> u32 {
    let mut best = 0;
    let mut best_d = sq_dist(x, &centers[0]);
    for (k, c) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(x, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best as u32
}

pub fn reference_lloyd(
    data: &RealMatrix,
    init: &[Vec<f64>],
    params: &RunParams,
) -> Result<ReferenceResult, KMeansError> {
    params.validate()?;
    if init.is_empty() {
        return Err(KMeansError::NoCenters);
    }
    let d = data.cols();
    if let Some(bad) = init.iter().find(|c| c.len() != d) {
        return Err(KMeansError::DimensionMismatch { expected: d, actual: bad.len() });
    }
    let k = init.len();
    let mut centers = init.to_vec();
    let mut assignments = Vec::new();
    let mut loss_trace: Vec<f64> = Vec::new();
    let mut history = params.record_history.then(Vec::new);
    let mut stop_reason = StopReason::MaxIters;

    for iter in 0..params.max_iters {
        assignments = data.iter_rows().map(|x| nearest(x, &centers)).collect::<Vec<_>>();

        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter_rows().zip(&assignments) {
            counts[a as usize] += 1;
            for (s, v) in sums[a as usize].iter_mut().zip(x) {
                *s += v;
            }
        }
        let updated: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centers)
            .map(
                |((s, &count), prev)| {
                    if count == 0 {
                        prev.clone()
                    } else {
                        s.into_iter().map(|v| v / count as f64).collect()
                    }
                },
            )
            .collect();

        let l: f64 = data.iter_rows().zip(&assignments).map(|(x, &a)| sq_dist(x, &updated[a as usize])).sum();
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

    Ok(ReferenceResult {
        centers,
        assignments,
        iterations: loss_trace.len(),
        loss_trace,
        converged: stop_reason != StopReason::MaxIters,
        stop_reason,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_example() {
        let data = RealMatrix::new(4, 1, vec![0.0, 0.1, 0.9, 1.0]).unwrap();
        let r = reference_lloyd(&data, &[vec![0.0], vec![1.0]], &RunParams::default()).unwrap();
        assert!(r.converged);
        assert!((r.centers[0][0] - 0.05).abs() < 1e-12);
        assert!((r.centers[1][0] - 0.95).abs() < 1e-12);
        assert!((r.loss_trace.last().unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_converges_in_one_iteration() {
        let data = RealMatrix::new(4, 1, vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        let r = reference_lloyd(&data, &[vec![0.0], vec![0.5]], &RunParams::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.stop_reason, StopReason::CentersStable);
    }

    #[test]
    fn k_equals_n_gives_zero_loss() {
        let rows = vec![vec![0.1, 0.2], vec![0.7, 0.3], vec![0.4, 0.9]];
        let data = RealMatrix::from_rows(&rows).unwrap();
        let r = reference_lloyd(&data, &rows, &RunParams::default()).unwrap();
        assert_eq!(r.loss_trace, vec![0.0]);
        assert_eq!(r.assignments, vec![0, 1, 2]);
    }

    #[test]
    fn permutation_leaves_centers_unchanged() {
        let rows: Vec<Vec<f64>> =
            (0..60).map(|i| vec![(i as f64 * 0.37).sin().abs(), (i as f64 * 0.11).cos().abs()]).collect();
        let init = vec![rows[0].clone(), rows[1].clone(), rows[2].clone()];
        let a = reference_lloyd(&RealMatrix::from_rows(&rows).unwrap(), &init, &RunParams::default()).unwrap();
        let mut shuffled = rows.clone();
        shuffled.reverse();
        shuffled.rotate_left(17);
        let b = reference_lloyd(&RealMatrix::from_rows(&shuffled).unwrap(), &init, &RunParams::default()).unwrap();
        for (x, y) in a.centers.iter().zip(&b.centers) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_cluster_keeps_center() {
        let data = RealMatrix::new(3, 1, vec![0.0, 0.1, 0.2]).unwrap();
        let r = reference_lloyd(&data, &[vec![0.1], vec![5.0]], &RunParams::default()).unwrap();
        assert_eq!(r.centers[1], vec![5.0]);
    }
}
