//! End-to-end runs of the `ffsim` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ffsim::cli::{read_manifest, verify};
use ffsim::timetag::decode_binary;

fn ffsim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ffsim"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("FFSIM_OUT_DIR")
        .env_remove("FFSIM_THREADS")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn matrix_reference_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let o = ffsim(dir.path(), &["matrix", "--transmission", "0.7", "--pixels", "4", "--crosstalk", "0.025"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("\n1,0.300,0.682,0.017,0.000,0.000\n"), "{table}");
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.command, "matrix");
    assert!(verify(dir.path(), &manifest).unwrap().is_empty());

    let bad = ffsim(dir.path(), &["matrix", "--transmission", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("transmission"), "{}", stderr(&bad));
}

#[test]
fn lossless_matrix_is_bare_povm() {
    let dir = tempfile::tempdir().unwrap();
    let o = ffsim(dir.path(), &["matrix", "--transmission", "1", "--crosstalk", "0", "--nmax", "2"]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    // Two photons on four pixels: a quarter share a pixel.
    assert!(table.contains("\n2,0.000,0.250,0.750,0.000,0.000\n"), "{table}");
}

#[test]
fn sweep_outputs_and_rejects_empty_selection() {
    let dir = tempfile::tempdir().unwrap();
    let o = ffsim(dir.path(), &["sweep", "--selection", "1", "--mu-min", "1e-6", "--mu-max", "1e-2", "--points", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("g2_sweep.csv")).unwrap();
    let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let g2: f64 = first[1].parse().unwrap();
    assert!(g2 < 1e-3, "{g2}");

    let bad = ffsim(dir.path(), &["sweep", "--selection", "!0-4"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible() {
    let base = tempfile::tempdir().unwrap();
    let (a, b, c) = (base.path().join("a"), base.path().join("b"), base.path().join("c"));
    let args = ["simulate", "--pulses", "3000000", "--seed", "42", "--mu", "0.05"];
    let mut one = args.to_vec();
    one.extend(["--threads", "1"]);
    let mut three = args.to_vec();
    three.extend(["--threads", "3"]);
    assert!(ffsim(&a, &one).status.success());
    assert!(ffsim(&b, &three).status.success());
    for file in ["tags.bin", "summary.toml", "config.toml"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    // The emitted config alone reproduces the run.
    let config = a.join("config.toml");
    assert!(ffsim(&c, &["--config", config.to_str().unwrap(), "simulate"]).status.success());
    assert_eq!(fs::read(a.join("tags.bin")).unwrap(), fs::read(c.join("tags.bin")).unwrap());

    let manifest = read_manifest(&a).unwrap();
    assert_eq!(manifest.seed, Some(42));
    assert_eq!(manifest.outputs.len(), 3);
    assert!(verify(&a, &manifest).unwrap().is_empty());
}

#[test]
fn empty_source_gives_empty_stream() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("dark.toml");
    fs::write(&config, "[source]\nmean_pairs_per_pulse = 0.0\n[signal]\ndark_rate = 0.0\n").unwrap();
    let out = dir.path().join("run");
    let o = ffsim(&out, &["--config", config.to_str().unwrap(), "simulate", "--pulses", "100000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(decode_binary(&fs::read(out.join("tags.bin")).unwrap()).unwrap().is_empty());
}

#[test]
fn analyze_simulated_csv_tags() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = ffsim(&sim, &["simulate", "--pulses", "20000000", "--format", "csv", "--mu", "0.02"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let an = dir.path().join("an");
    let config = sim.join("config.toml");
    let tags = sim.join("tags.csv");
    let o = ffsim(
        &an,
        &["--config", config.to_str().unwrap(), "analyze", "--tags", tags.to_str().unwrap(), "--bin", "250ps"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let hist = fs::read_to_string(an.join("histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_center_ps,count\n-100000,"));
    assert_eq!(hist.lines().count(), 802);
    let peaks = fs::read_to_string(an.join("peaks.csv")).unwrap();
    assert!(peaks.starts_with("peak_offset,counts,g2\n-7,"));
    let rates = fs::read_to_string(an.join("rates.toml")).unwrap();
    assert!(rates.contains("peak_ordering_ok = true"), "{rates}");
    assert!(verify(&an, &read_manifest(&an).unwrap()).unwrap().is_empty());

    let bad = ffsim(&an, &["analyze", "--tags", tags.to_str().unwrap(), "--bin", "300ps"]);
    assert_eq!(bad.status.code(), Some(2));
    let missing = ffsim(&an, &["analyze", "--tags", "/nonexistent/tags.bin"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn thresholds_surface() {
    let dir = tempfile::tempdir().unwrap();
    let o = ffsim(dir.path(), &["thresholds", "--step", "0.1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("plateaus along the low threshold (high = inf): 4"));
    let csv = fs::read_to_string(dir.path().join("thresholds.csv")).unwrap();
    assert!(csv.starts_with("low,high,rate_hz\n"));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ffsim"))
        .args(["matrix", "--nmax", "3"])
        .env("FFSIM_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("detection_matrix.csv").exists());
}
