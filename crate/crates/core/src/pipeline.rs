//! Per-slice driver: scan, estimate, maintain, in that order, with a barrier
//! between phases.

use std::time::{Duration, Instant};

use crate::estimator::{EstimateReport, EstimatorError, VirtualEstimator};
use crate::pool::{MaintenanceReport, SlidingPool};
use crate::trace::SliceBatch;

#[derive(Debug, Clone)]
pub struct SliceOutcome {
    pub slice: u64,
    pub pairs: usize,
    pub reports: Vec<EstimateReport>,
    pub maintenance: MaintenanceReport,
    pub scan_time: Duration,
    pub estimate_time: Duration,
    pub maintain_time: Duration,
}

/// Runs one full slice cycle. The batch must belong to the estimator's
/// current slice.
pub fn process_slice<P: SlidingPool>(
    estimator: &mut VirtualEstimator<P>,
    batch: &SliceBatch,
    k_prime: u32,
) -> Result<SliceOutcome, EstimatorError> {
    let slice = estimator.current_slice();
    debug_assert_eq!(slice, batch.slice);

    let started = Instant::now();
    estimator.scan(&batch.pairs());
    let scan_time = started.elapsed();

    let started = Instant::now();
    let reports = estimator.estimate_active(k_prime)?;
    let estimate_time = started.elapsed();

    let started = Instant::now();
    let maintenance = estimator.end_slice();
    let maintain_time = started.elapsed();

    Ok(SliceOutcome {
        slice,
        pairs: batch.records.len(),
        reports,
        maintenance,
        scan_time,
        estimate_time,
        maintain_time,
    })
}
