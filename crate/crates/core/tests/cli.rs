use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use stoch_euler::experiments::Manifest;
use stoch_euler::flow::FlowState;
use stoch_euler::noise::BrownianDriver;
use stoch_euler::torus::{torus_dist, wrap};

const ZERO_VORTICITY: &str = r#"
seed = 21
[grid]
n = 8
[noise]
variant = "constant_pair"
c = 0.3
[xi0]
preset = "constant"
value = 0.0
[solver]
dt = 0.0625
horizon = 0.25
realizations = 2
[simulate]
occupancy_cells = 2
"#;

const SHEAR: &str = r#"
seed = 5
[grid]
n = 16
[noise]
variant = "trig_shells"
shells = [1]
amplitude = 0.1
[xi0]
preset = "shear"
amplitude = 1.0
[solver]
dt = 0.0625
horizon = 0.25
realizations = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stoch-euler"))
}

fn run(args: &[&str], config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn diagnostic(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("diagnostic.json")).unwrap()).unwrap()
}

#[test]
fn kernel_build_then_translation_flow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "zero.toml", ZERO_VORTICITY);
    let kdir = dir.path().join("kernel");
    let out = run(&["kernel-build"], &cfg, &kdir, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = kdir.join("kernel_table.bin");
    let sdir = dir.path().join("sim");
    let out = run(&["simulate"], &cfg, &sdir, &["--kernel-table", table.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let flow = FlowState::load(&sdir.join("flow.bin")).unwrap();
    let driver = BrownianDriver::new(21, 2, 0.0625).unwrap();
    for r in 0..flow.realizations() {
        for t in 0..flow.records() {
            let w = driver.path_value(r as u64, t as u64);
            let shift = [0.3f64.sqrt() * w[0], 0.3f64.sqrt() * w[1]];
            for (p, l) in flow.at(t, r).iter().zip(flow.labels()) {
                assert!(torus_dist(*p, wrap([l[0] + shift[0], l[1] + shift[1]])) < 1e-12);
            }
        }
    }
    let (a, b) = (manifest(&kdir), manifest(&sdir));
    assert_eq!(a.seed, b.seed);
}

#[test]
fn manifest_lists_every_file_with_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "shear.toml", SHEAR);
    let out_dir = dir.path().join("out");
    let out = run(&["simulate"], &cfg, &out_dir, &["--seed", "99", "--workers", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&out_dir);
    assert_eq!(m.seed, 99);
    assert_eq!(m.experiment, "simulate");
    assert!(m.config.contains("seed = 99"));
    assert_eq!(hex::encode(Sha256::digest(m.config.as_bytes())), m.config_sha256);
    let mut on_disk: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = m.files.iter().map(|f| f.path.clone()).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    for f in &m.files {
        let bytes = std::fs::read(out_dir.join(&f.path)).unwrap();
        assert_eq!(bytes.len(), f.bytes);
        assert_eq!(hex::encode(Sha256::digest(&bytes)), f.sha256);
    }
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("schema.json")).unwrap()).unwrap();
    for csv in ["diagnostics.csv", "picard.csv", "flow_summary.csv"] {
        assert!(schema.get(csv).is_some(), "{csv} undocumented");
    }
}

#[test]
fn same_config_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "shear.toml", SHEAR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert!(run(&["picard-trace"], &cfg, d, &[]).status.success());
    }
    for f in manifest(&a).files {
        assert_eq!(std::fs::read(a.join(&f.path)).unwrap(), std::fs::read(b.join(&f.path)).unwrap());
    }
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &SHEAR.replace("dt = 0.0625", "dt = 0.1"));
    let out_dir = dir.path().join("out");
    let out = run(&["simulate"], &bad, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    let d = diagnostic(&out_dir);
    assert_eq!(d["kind"], "config");
    assert_eq!(d["field"], "solver.dt");

    let typo = write_config(dir.path(), "typo.toml", &SHEAR.replace("amplitude = 0.1", "amplitud = 0.1"));
    let out = run(&["simulate"], &typo, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    // Inside the tagged noise table only the table is located.
    let d = diagnostic(&out_dir);
    assert_eq!(d["field"], "noise");
    assert!(d["message"].as_str().unwrap().contains("amplitud"));

    // Under-resolved mollifier for the commutator grid.
    let coarse = write_config(dir.path(), "coarse.toml", &format!("{SHEAR}[commutator]\nn = 16\n"));
    let out = run(&["commutator-scan"], &coarse, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(2));

    // Anisotropic explicit modes fail the a = C I check.
    let aniso = SHEAR.replace(
        "variant = \"trig_shells\"\nshells = [1]",
        "variant = \"trig_modes\"\nwavevectors = [[1, 0]]",
    );
    let aniso = write_config(dir.path(), "aniso.toml", &aniso);
    let out = run(&["simulate"], &aniso, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.join("flow.bin").exists());
}

#[test]
fn picard_failure_exits_4_with_trace() {
    let dir = tempfile::tempdir().unwrap();
    // A four-step window needs five maps to reach the fixed point.
    let text = SHEAR.to_string() + "[solver.picard]\nmax_iterations = 2\ntolerance = 1e-14\nwindow = 0.25\n";
    let cfg = write_config(dir.path(), "hard.toml", &text);
    let out_dir = dir.path().join("out");
    let out = run(&["simulate"], &cfg, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let d = diagnostic(&out_dir);
    assert_eq!(d["kind"], "no_convergence");
    assert!(d["trace"].as_array().is_some_and(|t| !t.is_empty()));
}

#[test]
fn lemma_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lemma.toml", &format!("{SHEAR}[lemma]\nsamples = 200\n"));
    let out_dir = dir.path().join("out");
    let out = run(&["lemma-suite"], &cfg, &out_dir, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("lemma_suite.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert!(rows.len() >= 7);
    assert!(rows.iter().all(|r| r.ends_with(",true")), "{table}");
}

fn sweep_rows(dir: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(dir.join("sweep.csv")).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn single_value_sweep_equals_plain_run() {
    let dir = tempfile::tempdir().unwrap();
    let plain = write_config(dir.path(), "plain.toml", SHEAR);
    let sweep = write_config(
        dir.path(),
        "sweep.toml",
        &format!("{SHEAR}[sweep]\nexperiment = \"doss-check\"\naxis = \"dt\"\nvalues = [0.0625]\n"),
    );
    let (a, b) = (dir.path().join("plain"), dir.path().join("sweep"));
    assert!(run(&["doss-check"], &plain, &a, &[]).status.success());
    let out = run(&["sweep"], &sweep, &b, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["doss.csv", "doss_profile.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join("run-000").join(f)).unwrap());
    }
    let rows = sweep_rows(&b);
    assert!(rows.iter().all(|r| &r[5] == "ok"));
    assert_eq!(manifest(&b).experiment, "sweep");
}

#[test]
fn eps_sweep_matches_stability_table_and_keeps_failures() {
    let dir = tempfile::tempdir().unwrap();
    let base = format!("{SHEAR}[stability]\neps = [0.25, 0.125]\nlog_lipschitz_pairs = 20\n");
    let table = write_config(dir.path(), "table.toml", &base);
    let t = dir.path().join("table");
    assert!(run(&["stability-sweep"], &table, &t, &[]).status.success());
    let sweep = write_config(
        dir.path(),
        "sweep.toml",
        &format!("{base}[sweep]\nexperiment = \"stability-sweep\"\naxis = \"eps\"\nvalues = [0.25, 0.125, 0.9]\n"),
    );
    let s = dir.path().join("sweep");
    let out = run(&["sweep"], &sweep, &s, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut full = csv::Reader::from_path(t.join("stability.csv")).unwrap();
    let full: Vec<csv::StringRecord> = full.records().map(|x| x.unwrap()).collect();
    for (i, row) in full.iter().enumerate() {
        let mut one = csv::Reader::from_path(s.join(format!("run-{i:03}")).join("stability.csv")).unwrap();
        let one: Vec<csv::StringRecord> = one.records().map(|x| x.unwrap()).collect();
        assert_eq!(one, vec![row.clone()]);
    }
    let rows = sweep_rows(&s);
    let failed: Vec<_> = rows.iter().filter(|r| &r[5] == "failed").collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(&failed[0][2], "0.9");
    assert!(!failed[0][8].is_empty());
}

#[test]
fn reproduce_flags_tampered_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "shear.toml", SHEAR);
    let a = dir.path().join("a");
    assert!(run(&["commutator-scan"], &cfg, &a, &[]).status.success());
    let ok = bin()
        .args(["reproduce", "--manifest"])
        .arg(a.join("manifest.json"))
        .arg("--out")
        .arg(dir.path().join("b"))
        .output()
        .unwrap();
    assert!(ok.status.success());

    let mut m = manifest(&a);
    m.files[0].sha256 = "0".repeat(64);
    std::fs::write(a.join("manifest.json"), serde_json::to_vec(&m).unwrap()).unwrap();
    let bad = bin()
        .args(["reproduce", "--manifest"])
        .arg(a.join("manifest.json"))
        .arg("--out")
        .arg(dir.path().join("c"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains(&m.files[0].path));
}
