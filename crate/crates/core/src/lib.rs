//! Per-host cardinality estimation over sliding time windows.
//!
//! The core building block is the asynchronous-timestamp counter
//! ([`counter::AtValue`]), which needs `ceil(log2(2k+1))` bits and only has
//! to be maintained once every `k` slices. A pool of them ([`pool::AtPool`])
//! is shared by every monitored host through virtual counter vectors
//! ([`estimator::VirtualEstimator`]). Distance-recorder and timestamp pools
//! are provided as comparators, and [`oracle`] gives exact answers for
//! testing.

pub mod cli;
pub mod counter;
pub mod estimator;
pub mod oracle;
pub mod packed;
pub mod pipeline;
pub mod pool;
pub mod synth;
pub mod trace;

pub use counter::{ActValue, AtValue, CounterError, DrValue, TsValue, WindowConfig};
pub use estimator::{EstimateReport, HashFamily, VirtualEstimator, VirtualEstimatorConfig};
pub use oracle::SliceSetStore;
pub use pool::{AnyPool, AtPool, CounterKind, DrPool, PartitionMethod, SlidingPool, TsPool};
pub use trace::{IpPairRecord, TraceFormat};
