//! Counter pools shared by every monitored host.
//!
//! [`AtPool`] holds `2^c` asynchronous timestamps split into `2k` blocks.
//! Every cell of a block shares one clock value, and block `i` runs `i` steps
//! ahead of block 0, so the `2k` clocks are pairwise distinct. Only block 0's
//! clock is stored. At each slice boundary exactly the blocks whose clock
//! turns to `0` or `k` are maintained.
//!
//! [`DrPool`] and [`TsPool`] expose the same [`SlidingPool`] surface backed by
//! distance-recorder and timestamp counters for comparison.
//!
//! Pools follow a three-phase cycle per slice: concurrent `set` calls (scan),
//! concurrent read-only queries (estimate), then an exclusive
//! `advance_slice` (maintain). The phases never overlap; `advance_slice`
//! takes `&mut self` to enforce the last barrier.

use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use thiserror::Error;

use crate::counter::{
    check_query, check_raw, preserve_fast_raw, ActValue, AtValue, CounterError, DrValue, MAX_K,
};
use crate::packed::PackedCells;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"ATP1";
pub const SNAPSHOT_HEADER_LEN: usize = 16;
pub const MAX_C: u32 = 32;

const PAR_CHUNK: usize = 1 << 14;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("pool of 2^{c} cells cannot hold 2k={} blocks", 2 * k)]
    PoolTooSmall { c: u32, k: u32 },
    #[error("pool exponent c={0} exceeds {MAX_C}")]
    PoolTooLarge(u32),
    #[error(
        "tail-remainder partition leaves the last block empty for c={c}, k={k} \
         (2k-1 divides 2^c); use the low-deviation partition"
    )]
    EmptyTailBlock { c: u32, k: u32 },
    #[error("cell index {index} outside pool of {len} cells")]
    CellOutOfRange { index: usize, len: usize },
    #[error("block index {index} outside 0..{blocks}")]
    BlockOutOfRange { index: usize, blocks: usize },
    #[error(transparent)]
    Counter(#[from] CounterError),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot i/o: {0}")]
    Io(#[from] io::Error),
}

/// How the `2^c` cells are split into `2k` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum PartitionMethod {
    /// `2k-1` blocks of `floor(2^c/(2k-1))` cells, remainder in the last block.
    #[default]
    TailRemainder,
    /// Block sizes differ by at most one; the larger blocks come last.
    LowDeviation,
}

impl PartitionMethod {
    fn code(self) -> u8 {
        match self {
            PartitionMethod::TailRemainder => 0,
            PartitionMethod::LowDeviation => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PartitionMethod::TailRemainder),
            1 => Some(PartitionMethod::LowDeviation),
            _ => None,
        }
    }
}

impl FromStr for PartitionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tail" => Ok(PartitionMethod::TailRemainder),
            "low-dev" => Ok(PartitionMethod::LowDeviation),
            other => Err(format!("unknown partition method {other:?}")),
        }
    }
}

impl fmt::Display for PartitionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionMethod::TailRemainder => "tail",
            PartitionMethod::LowDeviation => "low-dev",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CounterKind {
    At,
    Dr,
    Ts,
}

impl CounterKind {
    pub const ALL: [CounterKind; 3] = [CounterKind::At, CounterKind::Dr, CounterKind::Ts];

    pub fn bits_per_counter(self, k: u32) -> u32 {
        match self {
            CounterKind::At => AtValue::width(k),
            CounterKind::Dr => DrValue::width(k),
            CounterKind::Ts => 64,
        }
    }
}

impl FromStr for CounterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "at" => Ok(CounterKind::At),
            "dr" => Ok(CounterKind::Dr),
            "ts" => Ok(CounterKind::Ts),
            other => Err(format!("unknown counter kind {other:?}")),
        }
    }
}

impl fmt::Display for CounterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CounterKind::At => "at",
            CounterKind::Dr => "dr",
            CounterKind::Ts => "ts",
        })
    }
}

/// What one slice boundary cost.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaintenanceReport {
    /// Blocks whose cells were maintained (AT pools only).
    pub blocks: Vec<usize>,
    pub cells_maintained: u64,
    /// Cells that turned inactive during maintenance.
    pub cells_cleared: u64,
}

/// Common surface of the three pool flavours.
///
/// Cell indices and query widths are assumed valid; callers validate them
/// once up front.
pub trait SlidingPool: Send + Sync {
    fn kind(&self) -> CounterKind;
    fn len(&self) -> usize;
    fn k(&self) -> u32;
    /// Scan phase: mark a cell active in the current slice.
    fn set(&self, cell: usize);
    /// Estimate phase: activity over the last `k_prime` slices.
    fn is_active(&self, cell: usize, k_prime: u32) -> bool;
    fn count_inactive(&self, k_prime: u32) -> u64;
    /// Maintain phase: close the current slice and open the next one.
    fn advance_slice(&mut self) -> MaintenanceReport;
    fn memory_bytes(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bits_per_counter(&self) -> u32 {
        self.kind().bits_per_counter(self.k())
    }

    fn inactive_fraction(&self, k_prime: u32) -> f64 {
        self.count_inactive(k_prime) as f64 / self.len() as f64
    }
}

fn validate_shape(c: u32, k: u32) -> Result<(), PoolError> {
    if k == 0 || k > MAX_K {
        return Err(CounterError::InvalidK(k).into());
    }
    if c > MAX_C {
        return Err(PoolError::PoolTooLarge(c));
    }
    if (1u64 << c) < 2 * u64::from(k) {
        return Err(PoolError::PoolTooSmall { c, k });
    }
    Ok(())
}

/// Block boundaries: `starts[i]..starts[i+1]` is block `i`.
fn block_starts(len: usize, k: u32, partition: PartitionMethod) -> Vec<usize> {
    let blocks = 2 * k as usize;
    let mut starts = Vec::with_capacity(blocks + 1);
    match partition {
        PartitionMethod::TailRemainder => {
            let a = len / (blocks - 1);
            starts.extend((0..blocks).map(|i| i * a));
        }
        PartitionMethod::LowDeviation => {
            let a = len / blocks;
            let b = len % blocks;
            let mut pos = 0;
            for i in 0..blocks {
                starts.push(pos);
                pos += if i < blocks - b { a } else { a + 1 };
            }
        }
    }
    starts.push(len);
    starts
}

/// Pool of `2^c` asynchronous-timestamp counters.
#[derive(Debug)]
pub struct AtPool {
    c: u32,
    k: u32,
    partition: PartitionMethod,
    cells: PackedCells,
    bact0: u32,
    starts: Vec<usize>,
    // a/b for tail-remainder, a'/b' for low-deviation
    block_a: usize,
    block_b: usize,
    div_a: Divisor,
    div_a1: Divisor,
}

/// Exact division by a constant via a 64-bit reciprocal; valid for
/// `n * d < 2^64`, which holds for pools of at most `2^32` cells.
#[derive(Debug, Clone, Copy)]
struct Divisor(u128);

impl Divisor {
    fn new(d: usize) -> Self {
        debug_assert!(d > 0);
        Self((1u128 << 64) / d as u128 + 1)
    }

    #[inline]
    fn div(self, n: usize) -> usize {
        ((n as u128 * self.0) >> 64) as usize
    }
}

impl AtPool {
    pub fn new(c: u32, k: u32, partition: PartitionMethod) -> Result<Self, PoolError> {
        validate_shape(c, k)?;
        let len = 1usize << c;
        let blocks = 2 * k as usize;
        let (block_a, block_b) = match partition {
            PartitionMethod::TailRemainder => {
                let b = len % (blocks - 1);
                if b == 0 {
                    return Err(PoolError::EmptyTailBlock { c, k });
                }
                (len / (blocks - 1), b)
            }
            PartitionMethod::LowDeviation => (len / blocks, len % blocks),
        };
        Ok(Self {
            c,
            k,
            partition,
            cells: PackedCells::new(len, AtValue::width(k), u64::from(2 * k)),
            bact0: 0,
            starts: block_starts(len, k, partition),
            block_a,
            block_b,
            div_a: Divisor::new(block_a),
            div_a1: Divisor::new(block_a + 1),
        })
    }

    pub fn c(&self) -> u32 {
        self.c
    }

    pub fn partition(&self) -> PartitionMethod {
        self.partition
    }

    pub fn bact0(&self) -> ActValue {
        ActValue::new(self.bact0, self.k).expect("bact0 kept in range")
    }

    pub fn block_count(&self) -> usize {
        2 * self.k as usize
    }

    /// Cell range of block `block`.
    pub fn block_range(&self, block: usize) -> std::ops::Range<usize> {
        self.starts[block]..self.starts[block + 1]
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.starts.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn block_of(&self, index: usize) -> Result<usize, PoolError> {
        self.check_index(index)?;
        Ok(self.block_of_unchecked(index))
    }

    #[inline]
    fn block_of_unchecked(&self, i: usize) -> usize {
        let blocks = self.block_count();
        match self.partition {
            PartitionMethod::TailRemainder => self.div_a.div(i).min(blocks - 1),
            PartitionMethod::LowDeviation => {
                let (a, b) = (self.block_a, self.block_b);
                if i < a * (blocks - b + 1) {
                    self.div_a.div(i)
                } else {
                    self.div_a1.div(i + blocks - b)
                }
            }
        }
    }

    pub fn block_act(&self, block: usize) -> Result<ActValue, PoolError> {
        if block >= self.block_count() {
            return Err(PoolError::BlockOutOfRange {
                index: block,
                blocks: self.block_count(),
            });
        }
        Ok(ActValue::new(self.block_act_raw(block), self.k)?)
    }

    #[inline]
    fn block_act_raw(&self, block: usize) -> u32 {
        let act = self.bact0 + block as u32;
        if act >= 2 * self.k {
            act - 2 * self.k
        } else {
            act
        }
    }

    fn check_index(&self, index: usize) -> Result<(), PoolError> {
        if index >= self.cells.len() {
            Err(PoolError::CellOutOfRange {
                index,
                len: self.cells.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Stored value of a cell.
    pub fn value(&self, index: usize) -> Result<AtValue, PoolError> {
        self.check_index(index)?;
        Ok(AtValue::from_raw(self.cells.get(index) as u32, self.k).expect("stored value valid"))
    }

    pub fn pool_set(&self, index: usize) -> Result<(), PoolError> {
        self.check_index(index)?;
        self.set(index);
        Ok(())
    }

    pub fn pool_check(&self, index: usize, k_prime: u32) -> Result<bool, PoolError> {
        self.check_index(index)?;
        check_query(self.k, k_prime)?;
        Ok(self.is_active(index, k_prime))
    }

    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<(), PoolError> {
        let mut header = [0u8; SNAPSHOT_HEADER_LEN];
        header[..4].copy_from_slice(SNAPSHOT_MAGIC);
        header[4] = self.c as u8;
        header[5] = self.partition.code();
        header[8..12].copy_from_slice(&self.k.to_le_bytes());
        header[12..16].copy_from_slice(&self.bact0.to_le_bytes());
        out.write_all(&header)?;
        for word in self.cells.word_values() {
            out.write_all(&word.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut input: R) -> Result<Self, PoolError> {
        let mut header = [0u8; SNAPSHOT_HEADER_LEN];
        input.read_exact(&mut header)?;
        if &header[..4] != SNAPSHOT_MAGIC {
            return Err(PoolError::Snapshot("bad magic".into()));
        }
        let c = u32::from(header[4]);
        let partition = PartitionMethod::from_code(header[5])
            .ok_or_else(|| PoolError::Snapshot(format!("unknown partition {}", header[5])))?;
        let k = u32::from_le_bytes(header[8..12].try_into().unwrap());
        let bact0 = u32::from_le_bytes(header[12..16].try_into().unwrap());
        let mut pool = Self::new(c, k, partition)?;
        if bact0 >= 2 * k {
            return Err(PoolError::Snapshot(format!("bact0 {bact0} out of range")));
        }
        let n_words = PackedCells::words_for(pool.cells.len(), pool.cells.width());
        let mut bytes = vec![0u8; n_words * 8];
        input.read_exact(&mut bytes)?;
        let words = bytes
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let cells = PackedCells::from_words(words, pool.cells.len(), pool.cells.width())
            .ok_or_else(|| PoolError::Snapshot("cell array size mismatch".into()))?;
        if (0..cells.len()).any(|i| cells.get(i) > u64::from(2 * k)) {
            return Err(PoolError::Snapshot("cell value above sentinel".into()));
        }
        pool.cells = cells;
        pool.bact0 = bact0;
        Ok(pool)
    }

    fn maintain_block(&self, block: usize, act: u32) -> u64 {
        let k = self.k;
        let sentinel = u64::from(2 * k);
        let range = self.block_range(block);
        let chunks: Vec<_> = range.clone().step_by(PAR_CHUNK).collect();
        chunks
            .into_par_iter()
            .map(|start| {
                let end = (start + PAR_CHUNK).min(range.end);
                let mut cleared = 0;
                for i in start..end {
                    let v = self.cells.get(i);
                    if v != sentinel && u64::from(preserve_fast_raw(v as u32, act, k)) == sentinel {
                        self.cells.store_shared(i, sentinel);
                        cleared += 1;
                    }
                }
                cleared
            })
            .sum()
    }
}

impl SlidingPool for AtPool {
    fn kind(&self) -> CounterKind {
        CounterKind::At
    }

    fn len(&self) -> usize {
        self.cells.len()
    }

    fn k(&self) -> u32 {
        self.k
    }

    #[inline]
    fn set(&self, cell: usize) {
        let act = self.block_act_raw(self.block_of_unchecked(cell));
        self.cells.store_shared(cell, u64::from(act));
    }

    #[inline]
    fn is_active(&self, cell: usize, k_prime: u32) -> bool {
        let act = self.block_act_raw(self.block_of_unchecked(cell));
        check_raw(self.cells.get(cell) as u32, act, self.k, k_prime)
    }

    fn count_inactive(&self, k_prime: u32) -> u64 {
        let k = self.k;
        (0..self.block_count())
            .into_par_iter()
            .flat_map_iter(|block| {
                let act = self.block_act_raw(block);
                let range = self.block_range(block);
                range
                    .clone()
                    .step_by(PAR_CHUNK)
                    .map(move |s| (act, s, (s + PAR_CHUNK).min(range.end)))
            })
            .map(|(act, start, end)| {
                let mut inactive = 0;
                self.cells.for_each_in(start..end, |v| {
                    inactive += u64::from(!check_raw(v as u32, act, k, k_prime));
                });
                inactive
            })
            .sum()
    }

    fn advance_slice(&mut self) -> MaintenanceReport {
        let k = self.k;
        self.bact0 = (self.bact0 + 1) % (2 * k);
        let mut report = MaintenanceReport::default();
        // Block i reads act (bact0 + i) mod 2k, so act 0 and act k each select one block.
        for target in [0, k] {
            let block = ((2 * k + target - self.bact0) % (2 * k)) as usize;
            report.cells_maintained += self.block_range(block).len() as u64;
            report.cells_cleared += self.maintain_block(block, target);
            report.blocks.push(block);
        }
        report.blocks.sort_unstable();
        report
    }

    fn memory_bytes(&self) -> usize {
        self.cells.memory_bytes()
    }
}

/// Pool of `2^c` distance-recorder counters; every cell slides every slice.
#[derive(Debug)]
pub struct DrPool {
    k: u32,
    cells: PackedCells,
}

impl DrPool {
    pub fn new(c: u32, k: u32) -> Result<Self, PoolError> {
        validate_shape(c, k)?;
        Ok(Self {
            k,
            cells: PackedCells::new(1usize << c, DrValue::width(k), u64::from(k)),
        })
    }

    pub fn value(&self, index: usize) -> DrValue {
        DrValue::from_raw(self.cells.get(index) as u32, self.k).expect("stored value valid")
    }
}

impl SlidingPool for DrPool {
    fn kind(&self) -> CounterKind {
        CounterKind::Dr
    }

    fn len(&self) -> usize {
        self.cells.len()
    }

    fn k(&self) -> u32 {
        self.k
    }

    fn set(&self, cell: usize) {
        self.cells.store_shared(cell, 0);
    }

    fn is_active(&self, cell: usize, k_prime: u32) -> bool {
        self.cells.get(cell) < u64::from(k_prime)
    }

    fn count_inactive(&self, k_prime: u32) -> u64 {
        let len = self.cells.len();
        (0..len)
            .into_par_iter()
            .step_by(PAR_CHUNK)
            .map(|s| {
                let mut inactive = 0;
                self.cells.for_each_in(s..(s + PAR_CHUNK).min(len), |v| {
                    inactive += u64::from(v >= u64::from(k_prime));
                });
                inactive
            })
            .sum()
    }

    fn advance_slice(&mut self) -> MaintenanceReport {
        let k = u64::from(self.k);
        let len = self.cells.len();
        let cells = &self.cells;
        let cleared = (0..len)
            .into_par_iter()
            .step_by(PAR_CHUNK)
            .map(|s| {
                let mut cleared = 0;
                for i in s..(s + PAR_CHUNK).min(len) {
                    let v = cells.get(i);
                    if v < k {
                        cells.store_shared(i, v + 1);
                        if v + 1 == k {
                            cleared += 1;
                        }
                    }
                }
                cleared
            })
            .sum();
        MaintenanceReport {
            blocks: Vec::new(),
            cells_maintained: len as u64,
            cells_cleared: cleared,
        }
    }

    fn memory_bytes(&self) -> usize {
        self.cells.memory_bytes()
    }
}

/// Pool of 64-bit last-seen timestamps; never maintained.
#[derive(Debug)]
pub struct TsPool {
    k: u32,
    // slice index + 1; 0 means never set
    cells: Vec<AtomicU64>,
    slice: u64,
}

impl TsPool {
    pub fn new(c: u32, k: u32) -> Result<Self, PoolError> {
        validate_shape(c, k)?;
        Ok(Self {
            k,
            cells: (0..1usize << c).map(|_| AtomicU64::new(0)).collect(),
            slice: 0,
        })
    }

    pub fn current_slice(&self) -> u64 {
        self.slice
    }
}

impl SlidingPool for TsPool {
    fn kind(&self) -> CounterKind {
        CounterKind::Ts
    }

    fn len(&self) -> usize {
        self.cells.len()
    }

    fn k(&self) -> u32 {
        self.k
    }

    fn set(&self, cell: usize) {
        self.cells[cell].store(self.slice + 1, Ordering::Relaxed);
    }

    fn is_active(&self, cell: usize, k_prime: u32) -> bool {
        let stamp = self.cells[cell].load(Ordering::Relaxed);
        stamp != 0 && self.slice + 1 - stamp < u64::from(k_prime)
    }

    fn count_inactive(&self, k_prime: u32) -> u64 {
        self.cells
            .par_chunks(PAR_CHUNK)
            .enumerate()
            .map(|(n, chunk)| {
                (0..chunk.len())
                    .filter(|&j| !self.is_active(n * PAR_CHUNK + j, k_prime))
                    .count() as u64
            })
            .sum()
    }

    fn advance_slice(&mut self) -> MaintenanceReport {
        self.slice += 1;
        MaintenanceReport::default()
    }

    fn memory_bytes(&self) -> usize {
        self.cells.len() * std::mem::size_of::<u64>()
    }
}

/// Runtime-selected pool.
#[derive(Debug)]
pub enum AnyPool {
    At(AtPool),
    Dr(DrPool),
    Ts(TsPool),
}

impl AnyPool {
    pub fn new(
        kind: CounterKind,
        c: u32,
        k: u32,
        partition: PartitionMethod,
    ) -> Result<Self, PoolError> {
        Ok(match kind {
            CounterKind::At => AnyPool::At(AtPool::new(c, k, partition)?),
            CounterKind::Dr => AnyPool::Dr(DrPool::new(c, k)?),
            CounterKind::Ts => AnyPool::Ts(TsPool::new(c, k)?),
        })
    }

    fn inner(&self) -> &dyn SlidingPool {
        match self {
            AnyPool::At(p) => p,
            AnyPool::Dr(p) => p,
            AnyPool::Ts(p) => p,
        }
    }

    pub fn as_at(&self) -> Option<&AtPool> {
        match self {
            AnyPool::At(p) => Some(p),
            _ => None,
        }
    }
}

impl SlidingPool for AnyPool {
    fn kind(&self) -> CounterKind {
        self.inner().kind()
    }

    fn len(&self) -> usize {
        self.inner().len()
    }

    fn k(&self) -> u32 {
        self.inner().k()
    }

    #[inline]
    fn set(&self, cell: usize) {
        match self {
            AnyPool::At(p) => p.set(cell),
            AnyPool::Dr(p) => p.set(cell),
            AnyPool::Ts(p) => p.set(cell),
        }
    }

    #[inline]
    fn is_active(&self, cell: usize, k_prime: u32) -> bool {
        match self {
            AnyPool::At(p) => p.is_active(cell, k_prime),
            AnyPool::Dr(p) => p.is_active(cell, k_prime),
            AnyPool::Ts(p) => p.is_active(cell, k_prime),
        }
    }

    fn count_inactive(&self, k_prime: u32) -> u64 {
        self.inner().count_inactive(k_prime)
    }

    fn advance_slice(&mut self) -> MaintenanceReport {
        match self {
            AnyPool::At(p) => p.advance_slice(),
            AnyPool::Dr(p) => p.advance_slice(),
            AnyPool::Ts(p) => p.advance_slice(),
        }
    }

    fn memory_bytes(&self) -> usize {
        self.inner().memory_bytes()
    }
}
