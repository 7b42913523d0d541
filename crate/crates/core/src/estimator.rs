//! Virtual estimators over a shared counter pool.
//!
//! Each monitored host `aip` owns `g` virtual counters; virtual counter `i`
//! lives in pool cell `H(aip, i)`. An opposite host `bip` selects virtual
//! counter `BH(bip)`. At a slice end the host's cardinality over the last
//! `k'` slices is estimated from the inactive fraction of its virtual
//! counters (`z_v`) against the inactive fraction of the whole pool (`z_p`):
//!
//! ```text
//! n ≈ g · (ln z_p − ln z_v)
//! ```
//!
//! With a noise-free pool (`z_p = 1`) this is the plain linear estimator
//! `−g · ln(g0 / g)`.

use std::collections::{HashMap, HashSet};
use std::net::Ipv4Addr;

use rayon::prelude::*;
use thiserror::Error;

use crate::counter::{check_query, CounterError};
use crate::pool::{AnyPool, CounterKind, MaintenanceReport, PartitionMethod, PoolError, SlidingPool};

/// Pairs handed to one worker during the scan phase.
pub const SCAN_BATCH: usize = 1 << 15;

/// Default reporting floor: hosts estimated below this are not reported.
pub const DEFAULT_FLOOR: f64 = 100.0;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("virtual counters per host g={g} must be in 1..=2^{c}")]
    InvalidG { g: u64, c: u32 },
    #[error("pool does not match configuration: {0}")]
    PoolMismatch(String),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Counter(#[from] CounterError),
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded hash pair `H(aip, i)` and `BH(bip)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashFamily {
    cell_seed: u64,
    index_seed: u64,
    c: u32,
    g: u32,
}

impl HashFamily {
    pub fn new(seed: u64, c: u32, g: u32) -> Self {
        Self {
            cell_seed: mix64(seed ^ 0x243f_6a88_85a3_08d3),
            index_seed: mix64(seed ^ 0x1319_8a2e_0370_7344),
            c,
            g,
        }
    }

    /// Pool cell backing virtual counter `i` of `aip`, in `0..2^c`.
    #[inline]
    pub fn cell(&self, aip: u32, i: u32) -> usize {
        let key = (u64::from(aip) << 32) | u64::from(i);
        let h = mix64(mix64(key ^ self.cell_seed).wrapping_add(self.cell_seed));
        (h >> (64 - self.c)) as usize
    }

    /// Virtual counter selected by `bip`, in `0..g`.
    #[inline]
    pub fn virtual_index(&self, bip: u32) -> u32 {
        let h = mix64(mix64(u64::from(bip) ^ self.index_seed).wrapping_add(self.index_seed));
        ((u128::from(h) * u128::from(self.g)) >> 64) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualEstimatorConfig {
    pub g: u32,
    pub c: u32,
    pub k: u32,
    pub seed: u64,
    pub counter_kind: CounterKind,
    pub partition: PartitionMethod,
}

impl VirtualEstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.c > crate::pool::MAX_C {
            return Err(PoolError::PoolTooLarge(self.c).into());
        }
        if self.g == 0 || u64::from(self.g) > 1u64 << self.c {
            return Err(EstimatorError::InvalidG {
                g: self.g.into(),
                c: self.c,
            });
        }
        Ok(())
    }

    pub fn hashes(&self) -> HashFamily {
        HashFamily::new(self.seed, self.c, self.g)
    }

    pub fn build_pool(&self) -> Result<AnyPool, EstimatorError> {
        self.validate()?;
        Ok(AnyPool::new(self.counter_kind, self.c, self.k, self.partition)?)
    }
}

/// One host's estimate at one slice end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateReport {
    pub host: Ipv4Addr,
    /// Last slice of the window.
    pub slice_end: u64,
    pub k_prime: u32,
    pub estimate: f64,
    /// Inactive fraction of the host's virtual counters, before clamping.
    pub z_v: f64,
    /// Inactive fraction of the pool, before clamping.
    pub z_p: f64,
    pub saturated: bool,
}

impl EstimateReport {
    pub fn window_start(&self) -> u64 {
        (self.slice_end + 1).saturating_sub(u64::from(self.k_prime))
    }
}

/// Linear-counting estimate `−g·ln(g0/g)`; `g0 = 0` is clamped to 1.
pub fn estimate_linear(g: u32, zeros: u32) -> (f64, bool) {
    debug_assert!(zeros <= g);
    let saturated = zeros == 0;
    let g0 = zeros.max(1);
    let g = f64::from(g);
    (-g * (f64::from(g0) / g).ln(), saturated)
}

/// Shared-pool estimate `g·(ln z_p − ln z_v)`, with zero fractions clamped
/// to half a counter and negative results floored at zero.
pub fn estimate_shared(g: u32, pool_len: usize, z_v: f64, z_p: f64) -> (f64, bool) {
    let mut saturated = false;
    let z_v = if z_v <= 0.0 {
        saturated = true;
        0.5 / f64::from(g)
    } else {
        z_v
    };
    let z_p = if z_p <= 0.0 {
        saturated = true;
        0.5 / pool_len as f64
    } else {
        z_p
    };
    let raw = f64::from(g) * (z_p.ln() - z_v.ln());
    if raw < 0.0 {
        (0.0, true)
    } else {
        (raw, saturated)
    }
}

/// Virtual estimator over a pool of any counter flavour.
#[derive(Debug)]
pub struct VirtualEstimator<P = AnyPool> {
    config: VirtualEstimatorConfig,
    hashes: HashFamily,
    pool: P,
    /// Last slice each host was seen in.
    registry: HashMap<u32, u64>,
    slice: u64,
}

impl VirtualEstimator<AnyPool> {
    pub fn from_config(config: VirtualEstimatorConfig) -> Result<Self, EstimatorError> {
        let pool = config.build_pool()?;
        Self::new(config, pool)
    }
}

impl<P: SlidingPool> VirtualEstimator<P> {
    pub fn new(config: VirtualEstimatorConfig, pool: P) -> Result<Self, EstimatorError> {
        config.validate()?;
        if pool.len() != 1usize << config.c || pool.k() != config.k {
            return Err(EstimatorError::PoolMismatch(format!(
                "pool has {} cells and k={}, config wants 2^{} cells and k={}",
                pool.len(),
                pool.k(),
                config.c,
                config.k
            )));
        }
        if pool.kind() != config.counter_kind {
            return Err(EstimatorError::PoolMismatch(format!(
                "pool holds {} counters, config wants {}",
                pool.kind(),
                config.counter_kind
            )));
        }
        Ok(Self {
            hashes: config.hashes(),
            config,
            pool,
            registry: HashMap::new(),
            slice: 0,
        })
    }

    pub fn config(&self) -> &VirtualEstimatorConfig {
        &self.config
    }

    pub fn pool(&self) -> &P {
        &self.pool
    }

    pub fn into_pool(self) -> P {
        self.pool
    }

    /// Index of the slice currently being filled.
    pub fn current_slice(&self) -> u64 {
        self.slice
    }

    /// Pool cell that `(aip, bip)` sets.
    #[inline]
    pub fn cell_for(&self, aip: u32, bip: u32) -> usize {
        self.hashes.cell(aip, self.hashes.virtual_index(bip))
    }

    /// Pool cells backing the host's virtual counters, in virtual order.
    pub fn virtual_cells(&self, aip: u32) -> impl Iterator<Item = usize> + '_ {
        (0..self.config.g).map(move |i| self.hashes.cell(aip, i))
    }

    /// Sets the pair's cell without touching the host registry; safe to call
    /// from many threads during the scan phase.
    #[inline]
    pub fn set_pair(&self, aip: u32, bip: u32) {
        self.pool.set(self.cell_for(aip, bip));
    }

    pub fn record_pair(&mut self, aip: Ipv4Addr, bip: Ipv4Addr) {
        let (aip, bip) = (u32::from(aip), u32::from(bip));
        self.set_pair(aip, bip);
        self.registry.insert(aip, self.slice);
    }

    /// Scan phase for one batch: sets every pair's cell in parallel and
    /// registers the hosts seen.
    pub fn scan(&mut self, pairs: &[(u32, u32)]) {
        let this = &*self;
        let seen = pairs
            .par_chunks(SCAN_BATCH)
            .map(|chunk| {
                let mut hosts = HashSet::new();
                for &(aip, bip) in chunk {
                    this.set_pair(aip, bip);
                    hosts.insert(aip);
                }
                hosts
            })
            .reduce(HashSet::new, |mut a, b| {
                if a.len() < b.len() {
                    return b.into_iter().fold(a, |mut acc, h| {
                        acc.insert(h);
                        acc
                    });
                }
                a.extend(b);
                a
            });
        let slice = self.slice;
        for aip in seen {
            self.registry.insert(aip, slice);
        }
    }

    /// Hosts seen within the last `k_prime` slices, ascending.
    pub fn active_hosts(&self, k_prime: u32) -> Vec<Ipv4Addr> {
        let oldest = (self.slice + 1).saturating_sub(u64::from(k_prime));
        let mut hosts: Vec<u32> = self
            .registry
            .iter()
            .filter(|&(_, &seen)| seen >= oldest)
            .map(|(&aip, _)| aip)
            .collect();
        hosts.sort_unstable();
        hosts.into_iter().map(Ipv4Addr::from).collect()
    }

    pub fn inactive_fraction(&self, k_prime: u32) -> Result<f64, EstimatorError> {
        check_query(self.config.k, k_prime)?;
        Ok(self.pool.inactive_fraction(k_prime))
    }

    /// Number of the host's virtual counters that are inactive.
    pub fn inactive_virtual(&self, aip: Ipv4Addr, k_prime: u32) -> u32 {
        let aip = u32::from(aip);
        self.virtual_cells(aip)
            .filter(|&cell| !self.pool.is_active(cell, k_prime))
            .count() as u32
    }

    pub fn estimate_host(
        &self,
        aip: Ipv4Addr,
        k_prime: u32,
        z_p: f64,
    ) -> Result<EstimateReport, EstimatorError> {
        check_query(self.config.k, k_prime)?;
        Ok(self.estimate_host_unchecked(aip, k_prime, z_p))
    }

    fn estimate_host_unchecked(&self, aip: Ipv4Addr, k_prime: u32, z_p: f64) -> EstimateReport {
        let g = self.config.g;
        let z_v = f64::from(self.inactive_virtual(aip, k_prime)) / f64::from(g);
        let (estimate, saturated) = estimate_shared(g, self.pool.len(), z_v, z_p);
        EstimateReport {
            host: aip,
            slice_end: self.slice,
            k_prime,
            estimate,
            z_v,
            z_p,
            saturated,
        }
    }

    /// Estimate phase: one report per distinct host, ascending by address.
    pub fn estimate_all(
        &self,
        hosts: &[Ipv4Addr],
        k_prime: u32,
    ) -> Result<Vec<EstimateReport>, EstimatorError> {
        check_query(self.config.k, k_prime)?;
        let mut hosts = hosts.to_vec();
        hosts.sort_unstable();
        hosts.dedup();
        if hosts.is_empty() {
            return Ok(Vec::new());
        }
        let z_p = self.pool.inactive_fraction(k_prime);
        Ok(hosts
            .par_iter()
            .map(|&aip| self.estimate_host_unchecked(aip, k_prime, z_p))
            .collect())
    }

    /// Estimates every host seen in the queried window.
    pub fn estimate_active(&self, k_prime: u32) -> Result<Vec<EstimateReport>, EstimatorError> {
        check_query(self.config.k, k_prime)?;
        self.estimate_all(&self.active_hosts(k_prime), k_prime)
    }

    /// Maintain phase: closes the current slice.
    pub fn end_slice(&mut self) -> MaintenanceReport {
        let report = self.pool.advance_slice();
        self.slice += 1;
        let oldest = (self.slice + 1).saturating_sub(u64::from(self.config.k));
        self.registry.retain(|_, seen| *seen >= oldest);
        report
    }
}
