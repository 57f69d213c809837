use std::path::Path;
use std::process::{Command, Output};

fn proxy_ifm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxy-ifm"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PROXY_IFM_SEED")
        .env_remove("PROXY_IFM_OUT_DIR")
        .output()
        .unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn list_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let out = proxy_ifm(&["list-scenarios"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["fig2_open", "fig2_blocked", "fig3_blocked_l", "hom_pair", "fringe_sweep"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name}");
    }
}

#[test]
fn simulate_exact_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = proxy_ifm(&["simulate", "--scenario", "fig2_blocked", "--out", "r.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(&dir.path().join("r.csv")).starts_with("terminal,bin,re,im,mean_n,p_click\n"));
    let cond = read(&dir.path().join("r.conditionals.csv"));
    assert!(cond.lines().nth(1).unwrap().starts_with("D2,1,partner_pulses,exact,9.5122942450071"));
    assert!(dir.path().join("r.provenance.json").exists());
}

#[test]
fn simulate_mc_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["simulate", "--scenario", "fig2_blocked", "--mode", "mc", "--shots", "5000", "--seed", "4", "--format", "jsonl", "--out", out]
    };
    assert!(proxy_ifm(&args("a.jsonl"), dir.path()).status.success());
    assert!(proxy_ifm(&args("b.jsonl"), dir.path()).status.success());
    let a = read(&dir.path().join("a.jsonl"));
    assert_eq!(a, read(&dir.path().join("b.jsonl")));
    assert!(a.lines().next().unwrap().starts_with("{\"shot\":"));
}

#[test]
fn seed_and_output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_proxy-ifm"))
        .args(["simulate", "--scenario", "fig2_open", "--mode", "mc", "--shots", "100"])
        .current_dir(dir.path())
        .env("PROXY_IFM_SEED", "77")
        .env("PROXY_IFM_OUT_DIR", "results")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let prov = read(&dir.path().join("results/fig2_open.provenance.json"));
    assert!(prov.contains("\"seed\": 77"));
}

#[test]
fn sweep_emits_requested_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = proxy_ifm(
        &["sweep", "--scenario", "fringe_sweep", "--param", "delay_phase", "--from", "0", "--to", "2*pi", "--steps", "32", "--out", "s.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(&dir.path().join("s.csv"));
    assert_eq!(text.lines().count(), 33);
    assert_eq!(text.lines().next(), Some("phase,p_d1,p_d2"));
    assert!(text.lines().nth(1).unwrap().starts_with("0.0000000000000000e0,1.0000000000000000e0,"));
}

#[test]
fn oracle_emits_joint_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = proxy_ifm(&["oracle", "--scenario", "hom_pair", "--cutoff", "2", "--out", "o.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(&dir.path().join("o.csv"));
    assert_eq!(text.lines().next(), Some("outcome_vector,probability"));
    let total: f64 = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn decompose_writes_steps() {
    let dir = tempfile::tempdir().unwrap();
    let s = 0.5f64.sqrt();
    std::fs::write(dir.path().join("bs.csv"), format!("{s},{s}i\n{s}i,{s}\n")).unwrap();
    let out = proxy_ifm(&["decompose", "--unitary", "bs.csv", "--tol", "1e-10", "--out", "steps.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(&dir.path().join("steps.csv"));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "position,i,j,m00re,m00im,m01re,m01im,m10re,m10im,m11re,m11im");
    assert_eq!(lines.len(), 1 + 1 + 2);
    assert!(lines[2].starts_with("phase,0,0,"));
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.toml"), "").unwrap();
    let out = proxy_ifm(&["simulate", "--scenario", "empty.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing field `schema`"));

    let out = proxy_ifm(&["simulate", "--scenario", "fig2_open", "--engine", "singlephoton"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.csv"), "1,1\n1,1\n").unwrap();
    let out = proxy_ifm(&["decompose", "--unitary", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn engine_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = proxy_ifm(&["oracle", "--scenario", "fig2_open", "--cutoff", "1"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fig2_open"));
}
