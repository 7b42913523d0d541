use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use crate::estimator::{EstimateReport, VirtualEstimator};
use crate::oracle::SliceSetStore;
use crate::pipeline::process_slice;
use crate::pool::{AnyPool, AtPool, CounterKind, SlidingPool};
use crate::synth::{self, SyntheticSpec};
use crate::trace::{write_trace, TraceFormat};

use super::{open_output, CliError, GenArgs, PlanArg, RunConfig};

pub const ESTIMATE_HEADER: &str = "slice_end,aip,estimate,z_v,z_p,saturated";
pub const EXACT_HEADER: &str = "slice_end,aip,true_cardinality";
pub const BENCH_HEADER: &str = "slice,ST_us,ET_us,PT_us,cells_maintained,cells_cleared";
pub const COMPARE_HEADER: &str = "slice_end,aip,at_estimate,dr_estimate,ts_estimate,mismatch";

fn build_estimator(
    cfg: &RunConfig,
    kind: CounterKind,
) -> Result<VirtualEstimator<AnyPool>, CliError> {
    let mut est_cfg = cfg.estimator;
    est_cfg.counter_kind = kind;
    let Some(path) = cfg.resume.as_ref().filter(|_| kind == CounterKind::At) else {
        return VirtualEstimator::from_config(est_cfg).map_err(CliError::config);
    };
    let file = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let pool = AtPool::read_snapshot(BufReader::new(file))
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if pool.c() != est_cfg.c || pool.k() != est_cfg.k || pool.partition() != est_cfg.partition {
        return Err(CliError::Config(format!(
            "snapshot has c={}, k={}, partition={}; run wants c={}, k={}, partition={}",
            pool.c(),
            pool.k(),
            pool.partition(),
            est_cfg.c,
            est_cfg.k,
            est_cfg.partition
        )));
    }
    VirtualEstimator::new(est_cfg, AnyPool::At(pool)).map_err(CliError::config)
}

fn write_checkpoint(cfg: &RunConfig, est: &VirtualEstimator<AnyPool>) -> Result<(), CliError> {
    if let (Some(path), Some(pool)) = (&cfg.checkpoint, est.pool().as_at()) {
        pool.write_snapshot(BufWriter::new(File::create(path)?))
            .map_err(|e| CliError::Output(std::io::Error::other(e.to_string())))?;
    }
    Ok(())
}

fn write_estimate_row(out: &mut dyn Write, r: &EstimateReport) -> std::io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{}",
        r.slice_end, r.host, r.estimate, r.z_v, r.z_p, r.saturated
    )
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<(), CliError> {
    let mut est = build_estimator(cfg, cfg.estimator.counter_kind)?;
    let slices = cfg.slices()?;
    let mut out = cfg.output()?;
    writeln!(out, "{ESTIMATE_HEADER}")?;
    cfg.thread_pool()?.install(|| -> Result<(), CliError> {
        for batch in slices {
            let outcome = process_slice(&mut est, &batch?, cfg.k_prime).map_err(CliError::config)?;
            for r in outcome.reports.iter().filter(|r| r.estimate >= cfg.floor) {
                write_estimate_row(&mut out, r)?;
            }
        }
        Ok(())
    })?;
    out.flush()?;
    write_checkpoint(cfg, &est)
}

pub fn cmd_exact(cfg: &RunConfig) -> Result<(), CliError> {
    let mut oracle = SliceSetStore::new(cfg.window.k()).map_err(CliError::config)?;
    let slices = cfg.slices()?;
    let mut out = cfg.output()?;
    writeln!(out, "{EXACT_HEADER}")?;
    for batch in slices {
        let batch = batch?;
        oracle.advance_to(batch.slice).map_err(CliError::config)?;
        for r in &batch.records {
            oracle
                .record(r.aip, r.bip, batch.slice)
                .map_err(CliError::config)?;
        }
        for host in oracle
            .hosts_in_window(batch.slice, cfg.k_prime)
            .map_err(CliError::config)?
        {
            let n = oracle
                .cardinality(host, batch.slice, cfg.k_prime)
                .map_err(CliError::config)?;
            if n as f64 >= cfg.floor {
                writeln!(out, "{},{},{}", batch.slice, host, n)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<(), CliError> {
    let mut est = build_estimator(cfg, cfg.estimator.counter_kind)?;
    let slices = cfg.slices()?;
    let mut out = cfg.output()?;
    writeln!(out, "{BENCH_HEADER}")?;
    let us = |d: std::time::Duration| d.as_secs_f64() * 1e6;
    cfg.thread_pool()?.install(|| -> Result<(), CliError> {
        for batch in slices {
            let o = process_slice(&mut est, &batch?, cfg.k_prime).map_err(CliError::config)?;
            writeln!(
                out,
                "{},{:.3},{:.3},{:.3},{},{}",
                o.slice,
                us(o.scan_time),
                us(o.estimate_time),
                us(o.maintain_time),
                o.maintenance.cells_maintained,
                o.maintenance.cells_cleared
            )?;
        }
        Ok(())
    })?;
    out.flush()?;
    write_checkpoint(cfg, &est)
}

fn same_report(a: &EstimateReport, b: &EstimateReport) -> bool {
    a.host == b.host
        && a.estimate.to_bits() == b.estimate.to_bits()
        && a.z_v.to_bits() == b.z_v.to_bits()
        && a.z_p.to_bits() == b.z_p.to_bits()
        && a.saturated == b.saturated
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<(), CliError> {
    let mut estimators = CounterKind::ALL
        .iter()
        .map(|&kind| build_estimator(cfg, kind))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ops = [0u64; 3];
    let mut mismatches = 0u64;
    let slices = cfg.slices()?;
    let mut out = cfg.output()?;
    writeln!(out, "{COMPARE_HEADER}")?;
    cfg.thread_pool()?.install(|| -> Result<(), CliError> {
        for batch in slices {
            let batch = batch?;
            let mut outcomes = Vec::with_capacity(3);
            for (est, ops) in estimators.iter_mut().zip(ops.iter_mut()) {
                let o = process_slice(est, &batch, cfg.k_prime).map_err(CliError::config)?;
                *ops += o.maintenance.cells_maintained;
                outcomes.push(o.reports);
            }
            let [at, dr, ts] = &outcomes[..] else {
                unreachable!()
            };
            if at.len() != dr.len() || at.len() != ts.len() {
                mismatches += 1;
                writeln!(out, "{},*,,,,true", batch.slice)?;
                continue;
            }
            for ((a, d), t) in at.iter().zip(dr).zip(ts) {
                let mismatch = !same_report(a, d) || !same_report(a, t);
                mismatches += u64::from(mismatch);
                if mismatch || a.estimate.max(d.estimate).max(t.estimate) >= cfg.floor {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        a.slice_end, a.host, a.estimate, d.estimate, t.estimate, mismatch
                    )?;
                }
            }
        }
        Ok(())
    })?;
    let k = cfg.window.k();
    writeln!(
        out,
        "maintenance_ops,,{},{},{},{}",
        ops[0], ops[1], ops[2], mismatches
    )?;
    writeln!(
        out,
        "bits_per_counter,,{},{},{},",
        CounterKind::At.bits_per_counter(k),
        CounterKind::Dr.bits_per_counter(k),
        CounterKind::Ts.bits_per_counter(k)
    )?;
    out.flush()?;
    debug_assert!(estimators.iter().all(|e| e.pool().len() == 1 << cfg.estimator.c));
    Ok(())
}

pub fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    if args.hosts == 0 {
        return Err(CliError::Config("--hosts must be positive".into()));
    }
    if args.min_card == 0 || args.min_card > args.max_card {
        return Err(CliError::Config(format!(
            "cardinality range [{}, {}] is empty",
            args.min_card, args.max_card
        )));
    }
    if args.alpha.is_nan() || args.alpha <= 0.0 {
        return Err(CliError::Config("--alpha must be positive".into()));
    }
    let hosts = match args.plan {
        PlanArg::Log => synth::log_spaced_plan(args.hosts, args.min_card, args.max_card, args.span),
        PlanArg::Pareto => synth::pareto_plan(
            args.hosts,
            args.alpha,
            args.min_card,
            args.max_card,
            args.span,
            args.seed,
        ),
    };
    let spec = SyntheticSpec {
        hosts,
        repetition: args.repetition,
        bip_universe: args.universe,
        seed: args.seed,
        slice_us: args.slice_us,
        start_us: args.start_us,
        k_prime: args.k_prime,
    };
    let trace = synth::generate(&spec)?;
    let format: TraceFormat = args.format.into();
    write_trace(File::create(&args.out)?, format, &trace.records)?;
    synth::write_ground_truth(File::create(&args.truth)?, &trace.ground_truth)?;
    let mut out = open_output(None)?;
    writeln!(
        out,
        "hosts={} pairs={} distinct_pairs={} slices={}",
        spec.hosts.len(),
        trace.records.len(),
        trace.distinct_pairs,
        trace.slice_count()
    )?;
    out.flush()?;
    Ok(())
}
