//! Synthetic IP-pair traffic with known per-window cardinalities.
//!
//! A plan lists hosts with a target number of distinct opposite hosts and a
//! span of active slices. Each distinct pair is emitted at least once inside
//! the span, plus extra packets drawn from a Poisson distribution so that the
//! mean number of packets per pair equals the repetition factor. Ground truth
//! is computed from the emitted occurrences by interval coverage, without
//! going through the exact oracle.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{self, BufRead, Write};
use std::net::Ipv4Addr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::trace::{slice_of, slice_origin, IpPairRecord};

/// First address handed to planned hosts.
pub const HOST_BASE: Ipv4Addr = Ipv4Addr::new(172, 16, 0, 0);
/// First address of the opposite-host universe.
pub const BIP_BASE: Ipv4Addr = Ipv4Addr::new(100, 64, 0, 0);

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible plan: {0}")]
    Infeasible(String),
    #[error("ground truth line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostPlan {
    pub aip: Ipv4Addr,
    /// Distinct opposite hosts over the whole active span.
    pub cardinality: u32,
    pub start_slice: u64,
    pub span_slices: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub hosts: Vec<HostPlan>,
    /// Mean packets per distinct pair, at least 1.
    pub repetition: f64,
    pub bip_universe: u32,
    pub seed: u64,
    pub slice_us: u64,
    /// Start of generator slice 0; must sit on the slice grid.
    pub start_us: u64,
    /// Window width used for the ground-truth rows.
    pub k_prime: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroundTruthRow {
    pub aip: Ipv4Addr,
    pub window_end_slice: u64,
    pub k_prime: u32,
    pub true_cardinality: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticTrace {
    pub records: Vec<IpPairRecord>,
    /// Sorted by (window end, aip).
    pub ground_truth: Vec<GroundTruthRow>,
    pub distinct_pairs: u64,
}

impl SyntheticTrace {
    pub fn slice_count(&self) -> u64 {
        self.ground_truth
            .iter()
            .map(|r| r.window_end_slice + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Host cardinalities spaced evenly in log space over `[min, max]`.
pub fn log_spaced_plan(hosts: u32, min: u32, max: u32, span_slices: u64) -> Vec<HostPlan> {
    let (lo, hi) = (f64::from(min).ln(), f64::from(max).ln());
    (0..hosts)
        .map(|i| {
            let frac = if hosts > 1 {
                f64::from(i) / f64::from(hosts - 1)
            } else {
                0.0
            };
            HostPlan {
                aip: Ipv4Addr::from(u32::from(HOST_BASE) + i),
                cardinality: (lo + frac * (hi - lo)).exp().round() as u32,
                start_slice: 0,
                span_slices,
            }
        })
        .collect()
}

/// Heavy-tailed plan: cardinalities from a Pareto law with shape `alpha`
/// and scale `min`, truncated at `max`.
pub fn pareto_plan(
    hosts: u32,
    alpha: f64,
    min: u32,
    max: u32,
    span_slices: u64,
    seed: u64,
) -> Vec<HostPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..hosts)
        .map(|i| {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let n = (f64::from(min) * u.powf(-1.0 / alpha)).min(f64::from(max));
            HostPlan {
                aip: Ipv4Addr::from(u32::from(HOST_BASE) + i),
                cardinality: n.round() as u32,
                start_slice: 0,
                span_slices,
            }
        })
        .collect()
}

fn validate(spec: &SyntheticSpec) -> Result<(), SynthError> {
    let fail = |m: String| Err(SynthError::Infeasible(m));
    if spec.slice_us == 0 {
        return fail("slice duration must be positive".into());
    }
    if !spec.start_us.is_multiple_of(spec.slice_us) {
        return fail("start time must sit on the slice grid".into());
    }
    if spec.k_prime == 0 {
        return fail("k' must be positive".into());
    }
    if !(spec.repetition >= 1.0 && spec.repetition.is_finite()) {
        return fail(format!("repetition {} must be >= 1", spec.repetition));
    }
    let mut seen = HashSet::new();
    for h in &spec.hosts {
        if !seen.insert(h.aip) {
            return fail(format!("host {} planned twice", h.aip));
        }
        if h.cardinality > spec.bip_universe {
            return fail(format!(
                "host {} wants {} opposite hosts but the universe has {}",
                h.aip, h.cardinality, spec.bip_universe
            ));
        }
        if h.span_slices == 0 {
            return fail(format!("host {} has an empty active span", h.aip));
        }
    }
    if u64::from(u32::from(BIP_BASE)) + u64::from(spec.bip_universe) > u64::from(u32::MAX) + 1 {
        return fail("opposite-host universe overflows the address space".into());
    }
    Ok(())
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticTrace, SynthError> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let extra = if spec.repetition > 1.0 {
        Some(Poisson::new(spec.repetition - 1.0).expect("positive rate"))
    } else {
        None
    };

    let mut by_slice: HashMap<u64, Vec<(Ipv4Addr, Ipv4Addr)>> = HashMap::new();
    let mut distinct_pairs = 0;
    for host in &spec.hosts {
        let picks = index::sample(&mut rng, spec.bip_universe as usize, host.cardinality as usize);
        for idx in picks.iter() {
            let bip = Ipv4Addr::from(u32::from(BIP_BASE) + idx as u32);
            let packets = 1 + extra.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
            for _ in 0..packets {
                let slice = host.start_slice + rng.random_range(0..host.span_slices);
                by_slice.entry(slice).or_default().push((host.aip, bip));
            }
            distinct_pairs += 1;
        }
    }

    let mut slices: Vec<u64> = by_slice.keys().copied().collect();
    slices.sort_unstable();
    let mut records = Vec::new();
    for slice in slices {
        let mut pairs = by_slice.remove(&slice).unwrap();
        pairs.shuffle(&mut rng);
        let base = spec.start_us + slice * spec.slice_us;
        let mut offsets: Vec<u64> = (0..pairs.len())
            .map(|_| rng.random_range(0..spec.slice_us))
            .collect();
        offsets.sort_unstable();
        records.extend(
            pairs
                .into_iter()
                .zip(offsets)
                .map(|((aip, bip), off)| IpPairRecord::new(base + off, aip, bip)),
        );
    }

    let ground_truth = ground_truth(&records, spec.slice_us, spec.k_prime);
    Ok(SyntheticTrace {
        records,
        ground_truth,
        distinct_pairs,
    })
}

/// Exact per-window cardinalities by interval coverage: a pair seen in slice
/// `s` counts for every window end in `s ..= s+k'-1`.
pub fn ground_truth(records: &[IpPairRecord], slice_us: u64, k_prime: u32) -> Vec<GroundTruthRow> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let t0 = slice_origin(first.timestamp_us, slice_us);
    let last_slice = slice_of(records[records.len() - 1].timestamp_us, t0, slice_us);
    let mut occurrences: HashMap<(Ipv4Addr, Ipv4Addr), BTreeSet<u64>> = HashMap::new();
    for r in records {
        occurrences
            .entry((r.aip, r.bip))
            .or_default()
            .insert(slice_of(r.timestamp_us, t0, slice_us));
    }
    let span = last_slice as usize + 2;
    let mut coverage: HashMap<Ipv4Addr, Vec<i64>> = HashMap::new();
    for ((aip, _), slices) in occurrences {
        let diff = coverage.entry(aip).or_insert_with(|| vec![0; span]);
        let mut covered_to = None::<u64>;
        for s in slices {
            let end = (s + u64::from(k_prime) - 1).min(last_slice);
            let begin = match covered_to {
                Some(c) if c >= s => c + 1,
                _ => s,
            };
            if begin <= end {
                diff[begin as usize] += 1;
                diff[end as usize + 1] -= 1;
            }
            covered_to = Some(covered_to.map_or(end, |c| c.max(end)));
        }
    }
    let mut rows = Vec::new();
    for (aip, diff) in coverage {
        let mut running = 0i64;
        for (t, d) in diff.iter().enumerate().take(last_slice as usize + 1) {
            running += d;
            if running > 0 {
                rows.push(GroundTruthRow {
                    aip,
                    window_end_slice: t as u64,
                    k_prime,
                    true_cardinality: running as u64,
                });
            }
        }
    }
    rows.sort_unstable_by_key(|r| (r.window_end_slice, r.aip));
    rows
}

pub const GROUND_TRUTH_HEADER: &str = "aip,window_end_slice,k_prime,true_cardinality";

pub fn write_ground_truth<W: Write>(out: W, rows: &[GroundTruthRow]) -> io::Result<()> {
    let mut out = io::BufWriter::new(out);
    writeln!(out, "{GROUND_TRUTH_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.aip, r.window_end_slice, r.k_prime, r.true_cardinality
        )?;
    }
    out.flush()
}

pub fn read_ground_truth<R: BufRead>(input: R) -> Result<Vec<GroundTruthRow>, SynthError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let line = n as u64 + 2;
        let row = row.map_err(|e| SynthError::Parse {
            line,
            message: e.to_string(),
        })?;
        let parse_err = |message: String| SynthError::Parse { line, message };
        if row.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", row.len())));
        }
        rows.push(GroundTruthRow {
            aip: row[0].parse().map_err(|e| parse_err(format!("aip: {e}")))?,
            window_end_slice: row[1].parse().map_err(|e| parse_err(format!("slice: {e}")))?,
            k_prime: row[2].parse().map_err(|e| parse_err(format!("k': {e}")))?,
            true_cardinality: row[3]
                .parse()
                .map_err(|e| parse_err(format!("cardinality: {e}")))?,
        });
    }
    Ok(rows)
}
