use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn vate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = vate(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Generates a small trace and returns (trace, truth) paths.
fn small_trace(dir: &TempDir, extra: &[&str]) -> (PathBuf, PathBuf) {
    let trace = dir.path().join("trace.csv");
    let truth = dir.path().join("truth.csv");
    let mut args = vec![
        "gen", "--hosts", "30", "--min-card", "50", "--max-card", "800", "--span", "12",
        "--repetition", "1.5", "--k-prime", "10", "--slice-us", "1000", "--seed", "7",
        "--out", p(&trace), "--truth", p(&truth),
    ];
    args.extend_from_slice(extra);
    let summary = ok(&args);
    assert!(summary.starts_with("hosts=30 pairs="), "{summary}");
    (trace, truth)
}

#[test]
fn empty_trace_gives_header_only() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("empty.csv");
    fs::write(&trace, "# nothing here\n").unwrap();
    let out = ok(&["estimate", "--trace", p(&trace), "--c", "12", "--g", "64"]);
    assert_eq!(out, "slice_end,aip,estimate,z_v,z_p,saturated\n");
    let out = ok(&["exact", "--trace", p(&trace)]);
    assert_eq!(out, "slice_end,aip,true_cardinality\n");
}

#[test]
fn estimate_is_deterministic_across_workers() {
    let dir = TempDir::new().unwrap();
    let (trace, _) = small_trace(&dir, &[]);
    let base = ["estimate", "--trace", p(&trace), "--c", "16", "--g", "256", "--k", "10", "--slice-us", "1000", "--floor", "0"];
    let one = ok(&[&base[..], &["--workers", "1"]].concat());
    let four = ok(&[&base[..], &["--workers", "4"]].concat());
    let default = ok(&base);
    assert_eq!(one, four);
    assert_eq!(one, default);
    assert!(one.lines().count() > 30);
}

#[test]
fn exact_matches_generator_truth() {
    let dir = TempDir::new().unwrap();
    let (trace, truth) = small_trace(&dir, &[]);
    let out = ok(&["exact", "--trace", p(&trace), "--k", "10", "--slice-us", "1000", "--floor", "0"]);
    let exact: BTreeMap<(String, String), String> = out
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            ((f[0].to_string(), f[1].to_string()), f[2].to_string())
        })
        .collect();
    let truth_text = fs::read_to_string(&truth).unwrap();
    let expected: BTreeMap<(String, String), String> = truth_text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            ((f[1].to_string(), f[0].to_string()), f[3].to_string())
        })
        .collect();
    assert_eq!(exact, expected);
}

#[test]
fn binary_and_text_traces_agree() {
    let dir = TempDir::new().unwrap();
    let (text, _) = small_trace(&dir, &[]);
    let bin_dir = TempDir::new().unwrap();
    let (bin, _) = small_trace(&bin_dir, &["--format", "binary"]);
    let args = |t: &Path, f: &'static str| {
        ok(&["estimate", "--trace", p(t), "--format", f, "--c", "14", "--g", "128", "--k", "10", "--slice-us", "1000"])
    };
    assert_eq!(args(&text, "text"), args(&bin, "binary"));
}

#[test]
fn duplicate_heavy_trace_matches_deduplicated() {
    let dir = TempDir::new().unwrap();
    let mut once = String::new();
    let mut many = String::new();
    for i in 0..600u32 {
        let line = format!("{},10.0.0.1,192.168.{}.{}\n", 1_000 + u64::from(i), i / 256, i % 256);
        once.push_str(&line);
        for _ in 0..20 {
            many.push_str(&line);
        }
    }
    let a = dir.path().join("once.csv");
    let b = dir.path().join("many.csv");
    fs::write(&a, once).unwrap();
    fs::write(&b, many).unwrap();
    let run = |t: &Path| ok(&["estimate", "--trace", p(t), "--c", "16", "--g", "512", "--k", "4"]);
    let out = run(&a);
    assert_eq!(out, run(&b));
    let est: f64 = out.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((est / 600.0 - 1.0).abs() < 0.15, "{est}");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let (trace, _) = small_trace(&dir, &[]);
    let t = p(&trace);
    // invalid configuration
    for bad in [
        vec!["estimate", "--trace", t, "--k", "0"],
        vec!["estimate", "--trace", t, "--k", "30", "--k-prime", "31"],
        vec!["estimate", "--trace", t, "--c", "4", "--k", "30"],
        vec!["estimate", "--trace", t, "--c", "8", "--g", "512"],
        vec!["estimate", "--trace", t, "--workers", "0"],
        vec!["estimate", "--trace", t, "--k", "1", "--c", "10"],
        vec!["estimate", "--trace", t, "--counter", "dr", "--checkpoint", "x"],
    ] {
        assert_eq!(vate(&bad).status.code(), Some(2), "{bad:?}");
    }
    let missing = dir.path().join("missing.csv");
    assert_eq!(vate(&["estimate", "--trace", p(&missing)]).status.code(), Some(3));
    let unordered = dir.path().join("unordered.csv");
    fs::write(&unordered, "2000,10.0.0.1,10.0.0.2\n1000,10.0.0.1,10.0.0.3\n").unwrap();
    assert_eq!(vate(&["estimate", "--trace", p(&unordered)]).status.code(), Some(3));
    let garbage = dir.path().join("garbage.csv");
    fs::write(&garbage, "1000,10.0.0.1,not-an-ip\n").unwrap();
    let out = vate(&["exact", "--trace", p(&garbage)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    let truncated = dir.path().join("trunc.bin");
    fs::write(&truncated, [0u8; 20]).unwrap();
    assert_eq!(
        vate(&["estimate", "--trace", p(&truncated), "--format", "binary"]).status.code(),
        Some(3)
    );
    let gen_bad = vate(&[
        "gen", "--min-card", "500", "--max-card", "100",
        "--out", p(&dir.path().join("o")), "--truth", p(&dir.path().join("t")),
    ]);
    assert_eq!(gen_bad.status.code(), Some(2));
}

#[test]
fn checkpoint_then_resume_matches_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let lines: Vec<String> = (0..4000u32)
        .map(|i| {
            let slice = u64::from(i / 200);
            format!("{},10.0.0.{},172.20.{}.{}", slice * 1000 + u64::from(i % 200), i % 3, (i * 7) / 256 % 256, (i * 7) % 256)
        })
        .collect();
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    let whole = dir.path().join("whole.csv");
    // the cut falls on a slice boundary
    fs::write(&first, lines[..2000].join("\n") + "\n").unwrap();
    fs::write(&second, lines[2000..].join("\n") + "\n").unwrap();
    fs::write(&whole, lines.join("\n") + "\n").unwrap();
    let snap = dir.path().join("pool.snap");
    let common = ["--c", "14", "--g", "128", "--k", "6", "--slice-us", "1000", "--floor", "0"];
    ok(&[&["estimate", "--trace", p(&first), "--checkpoint", p(&snap)][..], &common].concat());
    let resumed = ok(&[&["estimate", "--trace", p(&second), "--resume", p(&snap)][..], &common].concat());
    let uninterrupted = ok(&[&["estimate", "--trace", p(&whole)][..], &common].concat());

    // compare the pool-level columns of the final slice
    let last = |s: &str| -> Vec<String> {
        let rows: Vec<&str> = s.lines().skip(1).collect();
        let end = rows.last().unwrap().split(',').next().unwrap().to_string();
        rows.iter()
            .filter(|r| r.starts_with(&format!("{end},")))
            .map(|r| r.split(',').skip(1).collect::<Vec<_>>().join(","))
            .collect()
    };
    let whole_last = last(&uninterrupted);
    let resumed_last = last(&resumed);
    assert_eq!(whole_last.len(), 3);
    // hosts from before the cut are not in the resumed run's registry, but
    // every host sends in the final slice so the set of rows matches
    assert_eq!(resumed_last, whole_last);

    let wrong = vate(&[&["estimate", "--trace", p(&second), "--resume", p(&snap)][..], &["--c", "15", "--g", "128", "--k", "6"]].concat());
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn compare_reports_no_mismatch_and_widths() {
    let dir = TempDir::new().unwrap();
    let (trace, _) = small_trace(&dir, &[]);
    let out = ok(&["compare", "--trace", p(&trace), "--c", "14", "--g", "128", "--k", "10", "--slice-us", "1000"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "slice_end,aip,at_estimate,dr_estimate,ts_estimate,mismatch");
    assert!(lines[1..lines.len() - 2].iter().all(|l| l.ends_with(",false")));
    let ops: Vec<&str> = lines[lines.len() - 2].split(',').collect();
    assert_eq!(ops[0], "maintenance_ops");
    assert_eq!(ops[5], "0");
    let slices = 12u64;
    assert_eq!(ops[3].parse::<u64>().unwrap(), slices * (1 << 14));
    assert_eq!(ops[4], "0");
    assert_eq!(lines[lines.len() - 1], "bits_per_counter,,5,4,64,");
}

#[test]
fn bench_reports_one_row_per_slice() {
    let dir = TempDir::new().unwrap();
    let (trace, _) = small_trace(&dir, &[]);
    let out = ok(&["bench", "--trace", p(&trace), "--c", "14", "--g", "128", "--k", "10", "--slice-us", "1000"]);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows[0], "slice,ST_us,ET_us,PT_us,cells_maintained,cells_cleared");
    assert_eq!(rows.len(), 13);
    for (i, r) in rows[1..].iter().enumerate() {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f[0], i.to_string());
        assert!(f[1].parse::<f64>().unwrap() >= 0.0);
    }
}

#[test]
fn single_host_estimates_track_exact() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("one.csv");
    let truth = dir.path().join("one_truth.csv");
    ok(&[
        "gen", "--hosts", "1", "--min-card", "100", "--max-card", "100", "--span", "10",
        "--k-prime", "10", "--seed", "3", "--out", p(&trace), "--truth", p(&truth),
    ]);
    let common = ["--trace", p(&trace), "--k", "10", "--floor", "0"];
    let est = ok(&[&["estimate", "--c", "20", "--g", "1024"][..], &common].concat());
    let exact = ok(&[&["exact"][..], &common].concat());
    let est: Vec<f64> = est.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    let exact: Vec<f64> = exact.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(est.len(), 10);
    assert_eq!(est.len(), exact.len());
    for (e, x) in est.iter().zip(&exact) {
        // linear counting at n <= 100, g = 1024 is within a few percent
        assert!((e - x).abs() <= 0.1 * x + 3.0, "estimate {e} vs exact {x}");
    }
    assert_eq!(*exact.last().unwrap(), 100.0);
}

#[test]
fn exact_with_unit_window_counts_each_slice() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("unit.csv");
    // slice 0: 3 distinct of 4 packets; slice 1: 1; slice 2: empty; slice 3: 2
    fs::write(
        &trace,
        "10,10.0.0.1,1.1.1.1\n20,10.0.0.1,1.1.1.2\n30,10.0.0.1,1.1.1.1\n40,10.0.0.1,1.1.1.3\n\
         1500,10.0.0.1,1.1.1.1\n3100,10.0.0.1,1.1.1.9\n3200,10.0.0.1,1.1.1.8\n",
    )
    .unwrap();
    let out = ok(&["exact", "--trace", p(&trace), "--k", "4", "--k-prime", "1", "--slice-us", "1000", "--floor", "0"]);
    assert_eq!(
        out,
        "slice_end,aip,true_cardinality\n0,10.0.0.1,3\n1,10.0.0.1,1\n3,10.0.0.1,2\n"
    );
    let out = ok(&["exact", "--trace", p(&trace), "--k", "4", "--slice-us", "1000", "--floor", "0"]);
    assert_eq!(
        out,
        "slice_end,aip,true_cardinality\n0,10.0.0.1,3\n1,10.0.0.1,3\n2,10.0.0.1,3\n3,10.0.0.1,5\n"
    );
}
