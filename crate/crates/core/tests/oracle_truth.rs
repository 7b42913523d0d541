use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use vate::synth::{generate, log_spaced_plan, pareto_plan, GroundTruthRow, HostPlan, SyntheticSpec};
use vate::trace::slice_stream;
use vate::SliceSetStore;

fn spec(hosts: Vec<HostPlan>, repetition: f64, k_prime: u32, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        hosts,
        repetition,
        bip_universe: 1 << 16,
        seed,
        slice_us: 1000,
        start_us: 5_000_000,
        k_prime,
    }
}

fn oracle_rows(s: &SyntheticSpec, k: u32) -> Vec<GroundTruthRow> {
    let trace = generate(s).unwrap();
    let mut oracle = SliceSetStore::new(k).unwrap();
    let mut rows = Vec::new();
    for batch in slice_stream(trace.records.iter().map(|r| Ok(*r)), s.slice_us) {
        let batch = batch.unwrap();
        oracle.advance_to(batch.slice).unwrap();
        for r in &batch.records {
            oracle.record(r.aip, r.bip, batch.slice).unwrap();
        }
        for aip in oracle.hosts_in_window(batch.slice, s.k_prime).unwrap() {
            rows.push(GroundTruthRow {
                aip,
                window_end_slice: batch.slice,
                k_prime: s.k_prime,
                true_cardinality: oracle.cardinality(aip, batch.slice, s.k_prime).unwrap(),
            });
        }
    }
    assert_eq!(rows.len(), trace.ground_truth.len());
    rows
}

#[test]
fn oracle_matches_generator_truth_log_plan() {
    let s = spec(log_spaced_plan(40, 5, 400, 12), 2.0, 8, 1);
    let trace = generate(&s).unwrap();
    assert_eq!(oracle_rows(&s, 10), trace.ground_truth);
}

#[test]
fn oracle_matches_generator_truth_staggered_pareto() {
    let mut hosts = pareto_plan(60, 1.1, 3, 300, 7, 4);
    for (i, h) in hosts.iter_mut().enumerate() {
        h.start_slice = (i as u64 * 3) % 25;
    }
    let s = spec(hosts, 1.7, 5, 2);
    let trace = generate(&s).unwrap();
    assert_eq!(oracle_rows(&s, 5), trace.ground_truth);
}

#[test]
fn full_span_window_sees_every_distinct_pair() {
    let hosts = log_spaced_plan(10, 50, 500, 6);
    let s = spec(hosts.clone(), 3.0, 6, 3);
    let trace = generate(&s).unwrap();
    let at_end: BTreeMap<Ipv4Addr, u64> = trace
        .ground_truth
        .iter()
        .filter(|r| r.window_end_slice == 5)
        .map(|r| (r.aip, r.true_cardinality))
        .collect();
    for h in &hosts {
        assert_eq!(at_end[&h.aip], u64::from(h.cardinality));
    }
    let total: u64 = hosts.iter().map(|h| u64::from(h.cardinality)).sum();
    assert_eq!(trace.distinct_pairs, total);
}

#[test]
fn generator_is_deterministic() {
    let s = spec(log_spaced_plan(20, 10, 200, 5), 1.5, 5, 9);
    let a = generate(&s).unwrap();
    let b = generate(&s).unwrap();
    assert_eq!(a.records, b.records);
    let c = generate(&SyntheticSpec { seed: 10, ..s }).unwrap();
    assert_ne!(a.records, c.records);
}
