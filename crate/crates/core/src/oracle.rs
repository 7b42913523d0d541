//! Exact sliding-window ground truth.
//!
//! Keeps, for each of the last `k` slices, the set of distinct opposite
//! hosts seen by every host. Memory grows with the number of distinct pairs
//! in the window, so this is meant for tests and desk-scale traces.

use std::collections::{HashMap, HashSet, VecDeque};
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::counter::{check_query, CounterError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("slice {got} precedes current slice {current}")]
    SliceRegression { got: u64, current: u64 },
    #[error(transparent)]
    Counter(#[from] CounterError),
}

#[derive(Debug, Default)]
struct SliceSets {
    slice: u64,
    hosts: HashMap<u32, HashSet<u32>>,
}

#[derive(Debug)]
pub struct SliceSetStore {
    k: u32,
    current: u64,
    ring: VecDeque<SliceSets>,
}

impl SliceSetStore {
    pub fn new(k: u32) -> Result<Self, OracleError> {
        check_query(k, 1)?;
        Ok(Self {
            k,
            current: 0,
            ring: VecDeque::with_capacity(k as usize),
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn current_slice(&self) -> u64 {
        self.current
    }

    /// Moves the current slice forward, evicting slices outside the window.
    pub fn advance_to(&mut self, t: u64) -> Result<(), OracleError> {
        if t < self.current {
            return Err(OracleError::SliceRegression {
                got: t,
                current: self.current,
            });
        }
        self.current = t;
        let oldest = (t + 1).saturating_sub(u64::from(self.k));
        while self.ring.front().is_some_and(|s| s.slice < oldest) {
            self.ring.pop_front();
        }
        Ok(())
    }

    pub fn record(&mut self, aip: Ipv4Addr, bip: Ipv4Addr, t: u64) -> Result<(), OracleError> {
        self.advance_to(t)?;
        if self.ring.back().is_none_or(|s| s.slice != t) {
            self.ring.push_back(SliceSets {
                slice: t,
                hosts: HashMap::new(),
            });
        }
        let sets = self.ring.back_mut().expect("slice just pushed");
        sets.hosts.entry(aip.into()).or_default().insert(bip.into());
        Ok(())
    }

    fn window(&self, t: u64, k_prime: u32) -> Result<impl Iterator<Item = &SliceSets>, OracleError> {
        check_query(self.k, k_prime)?;
        if t < self.current {
            return Err(OracleError::SliceRegression {
                got: t,
                current: self.current,
            });
        }
        let oldest = (t + 1).saturating_sub(u64::from(k_prime));
        Ok(self
            .ring
            .iter()
            .filter(move |s| s.slice >= oldest && s.slice <= t))
    }

    /// Distinct opposite hosts of `aip` over slices `t-k'+1 ..= t`.
    pub fn cardinality(&self, aip: Ipv4Addr, t: u64, k_prime: u32) -> Result<u64, OracleError> {
        let aip = u32::from(aip);
        let sets: Vec<&HashSet<u32>> = self
            .window(t, k_prime)?
            .filter_map(|s| s.hosts.get(&aip))
            .collect();
        Ok(match sets.as_slice() {
            [] => 0,
            [only] => only.len() as u64,
            many => {
                let union: HashSet<u32> = many.iter().flat_map(|s| s.iter().copied()).collect();
                union.len() as u64
            }
        })
    }

    /// Hosts with at least one opposite host in the window, ascending.
    pub fn hosts_in_window(&self, t: u64, k_prime: u32) -> Result<Vec<Ipv4Addr>, OracleError> {
        let hosts: HashSet<u32> = self
            .window(t, k_prime)?
            .flat_map(|s| s.hosts.keys().copied())
            .collect();
        let mut hosts: Vec<u32> = hosts.into_iter().collect();
        hosts.sort_unstable();
        Ok(hosts.into_iter().map(Ipv4Addr::from).collect())
    }
}

/// Whether a counter set in the given slices is active at the end of slice
/// `t` for window width `k_prime`.
pub fn counter_active(set_slices: &[u64], t: u64, k_prime: u32) -> bool {
    let oldest = (t + 1).saturating_sub(u64::from(k_prime));
    set_slices.iter().any(|&s| s >= oldest && s <= t)
}
