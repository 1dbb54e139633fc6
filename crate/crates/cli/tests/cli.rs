use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sixtrace::pipeline::sha256_file;

const KEY: &str = "000102030405060708090a0b0c0d0e0f";

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn demo() -> PathBuf {
    repo().join("configs/demo.toml")
}

fn sixtrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sixtrace")).args(args).env_remove("SIXTRACE_KEY").output().expect("spawn")
}

fn sixtrace_with_key(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sixtrace")).args(args).env("SIXTRACE_KEY", KEY).output().expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small variant of the demo scenario, with the CPE pool concentrated
/// enough to stay detectable.
fn small_config(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(demo())
        .unwrap()
        .replace("households = 3000", "households = 300")
        .replace("prefixes = 8", "prefixes = 1");
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_and_usage_errors() {
    let o = sixtrace(&["--help"]);
    assert_eq!(code(&o), 0);
    for sub in ["simulate", "analyze", "report", "verify"] {
        assert!(stdout(&o).contains(sub));
    }
    assert_eq!(code(&sixtrace(&["--version"])), 0);
    assert_eq!(code(&sixtrace(&[])), 1);
    assert_eq!(code(&sixtrace(&["simulate", "--bogus"])), 1);
    assert_eq!(code(&sixtrace(&["analyze", "--flows", "x", "--out", "y", "--anonymize", "sideways"])), 1);
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sixtrace(&["simulate", "--config", p(&dir.path().join("nope.toml")), "--out", p(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn invalid_config_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "households = 0\np_eui64_household = 2.0\n").unwrap();
    let o = sixtrace(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for key in ["households:", "p_eui64_household:", "device_pools:"] {
        assert!(err.contains(key), "{err}");
    }
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let cfg = small_config(dir.path());
    let o = sixtrace(&["simulate", "--config", p(&cfg), "--out", p(&blocker.join("sub"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn demo_verify_passes_and_matches_pinned_digests() {
    let dir = tempfile::tempdir().unwrap();
    let o = sixtrace(&["verify", "--config", p(&demo()), "--seed", "1", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS linkage_recall"));
    assert!(!stdout(&o).contains("FAIL"));

    let pinned = fs::read_to_string(repo().join("configs/demo.seed1.sha256")).unwrap();
    let mut n = 0;
    for line in pinned.lines().filter(|l| !l.starts_with('#')) {
        let (digest, name) = line.split_once("  ").unwrap();
        assert_eq!(sha256_file(&dir.path().join(name)).unwrap(), digest, "{name}");
        n += 1;
    }
    assert!(n >= 15);

    let again = tempfile::tempdir().unwrap();
    let o = sixtrace(&[
        "verify",
        "--config",
        p(&demo()),
        "--out",
        p(again.path()),
        "--threads",
        "1",
        "--against",
        p(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS digests"));
}

#[test]
fn verify_against_a_different_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&sixtrace(&["verify", "--config", p(&cfg), "--out", p(&a)])), 0);
    let o = sixtrace(&["verify", "--config", p(&cfg), "--seed", "2", "--out", p(&b), "--against", p(&a)]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL digest sim/flows.csv"));
}

#[test]
fn duplicate_macs_fail_linkage_precision() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path()).to_string_lossy().into_owned();
    let text = fs::read_to_string(&cfg).unwrap().replace("inject_duplicate_macs = false", "inject_duplicate_macs = true");
    fs::write(&cfg, text).unwrap();
    let o = sixtrace(&["verify", "--config", &cfg, "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL linkage_precision"));
}

#[test]
fn report_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("o");
    assert_eq!(code(&sixtrace(&["verify", "--config", p(&cfg), "--out", p(&out)])), 0);
    let report = out.join("report");
    let o = sixtrace(&["report", "--dir", p(&report)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("key,value\n"));
    let o = sixtrace(&["report", "--dir", p(&report), "--table", "venn"]);
    assert!(stdout(&o).contains("end_user,/56-linked"));
    assert_eq!(code(&sixtrace(&["report", "--dir", p(&report), "--table", "nope"])), 1);

    fs::write(report.join("venn.csv"), "scope,level\n").unwrap();
    let o = sixtrace(&["report", "--dir", p(&report)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("digest mismatch: venn.csv"));
}

#[test]
fn analyze_key_handling_and_thread_independence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let sim = dir.path().join("sim");
    assert_eq!(code(&sixtrace(&["simulate", "--config", p(&cfg), "--out", p(&sim)])), 0);
    let args = |out: &Path, threads: &str| -> Vec<String> {
        [
            "analyze",
            "--flows",
            p(&sim.join("flows.csv")),
            "--oui-db",
            p(&sim.join("oui_db.csv")),
            "--taxonomy",
            p(&sim.join("taxonomy.csv")),
            "--providers",
            p(&sim.join("providers.csv")),
            "--signatures",
            p(&sim.join("signatures.csv")),
            "--out",
            p(out),
            "--threads",
            threads,
        ]
        .map(String::from)
        .to_vec()
    };

    let o = sixtrace(&refs(&args(&dir.path().join("nokey"), "1")));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("SIXTRACE_KEY"));

    let one = dir.path().join("r1");
    let four = dir.path().join("r4");
    assert_eq!(code(&sixtrace_with_key(&refs(&args(&one, "1")))), 0);
    assert_eq!(code(&sixtrace_with_key(&refs(&args(&four, "4")))), 0);
    let mut names: Vec<_> = fs::read_dir(&one).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 12);
    for n in &names {
        assert_eq!(fs::read(one.join(n)).unwrap(), fs::read(four.join(n)).unwrap(), "{n:?}");
    }
    let manifest = fs::read_to_string(one.join("manifest.json")).unwrap();
    assert!(manifest.contains("key_fingerprint"));
    assert!(!manifest.contains(KEY));

    let key_file = dir.path().join("key");
    fs::write(&key_file, format!("{KEY}\n")).unwrap();
    let via_file = dir.path().join("rf");
    let mut a = args(&via_file, "2");
    a.extend(["--key-file".to_string(), p(&key_file).to_string()]);
    assert_eq!(code(&sixtrace(&refs(&a))), 0);
    assert_eq!(fs::read(one.join("manifest.json")).unwrap(), fs::read(via_file.join("manifest.json")).unwrap());
}

#[test]
fn analyze_edge_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let v4 = dir.path().join("v4.csv");
    fs::write(&v4, "timestamp,src,dst,protocol,src_port,dst_port,bytes,packets,sampling_rate\n1,10.0.0.1,10.0.0.2,6,1,2,3,1,1\n").unwrap();
    let o = sixtrace_with_key(&["analyze", "--flows", p(&v4), "--out", p(&dir.path().join("a"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no IPv6 flows"));

    let v6 = dir.path().join("v6.csv");
    fs::write(&v6, "1,2001:db8:0:1:211:22ff:fe33:4455,2a00::1,6,40000,443,100,1,1\n").unwrap();
    let o = sixtrace(&["analyze", "--flows", p(&v6), "--anonymize", "none", "--out", p(&dir.path().join("b"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: no taxonomy given"));
    let shares = fs::read_to_string(dir.path().join("b/category_shares.csv")).unwrap();
    assert!(shares.contains("Unknown,1.000000,1.000000"), "{shares}");

    let o = sixtrace(&["analyze", "--flows", p(&dir.path().join("missing.csv")), "--anonymize", "none", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
}
