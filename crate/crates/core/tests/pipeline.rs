use std::sync::Arc;
use std::time::{Duration, Instant};

use proxy_ifm::circuit;
use proxy_ifm::coherent::{self, CoherentTrain};
use proxy_ifm::fock::{self, FockBasis};
use proxy_ifm::linalg::C64;
use proxy_ifm::run::{self, Engine, Format, Mode, RunOptions};
use proxy_ifm::scenario::{self, fig2_spec, golden, golden_names, ScenarioError, SourceSpec};
use proxy_ifm::singlephoton;

#[test]
fn golden_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for name in golden_names() {
        let start = Instant::now();
        let s = golden(name).unwrap();
        let report = run::run(&s, &RunOptions::default()).unwrap();
        for format in [Format::Csv, Format::Jsonl] {
            let path = dir.path().join(format!("{name}.{}", format.extension()));
            let files = run::emit(&report, format, &path).unwrap();
            assert!(files.iter().all(|f| f.exists()), "{name}");
        }
        assert!(start.elapsed() < Duration::from_secs(10), "{name} took {:?}", start.elapsed());
    }
}

#[test]
fn output_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let s = golden("fig2_blocked").unwrap();
    let opts = RunOptions { mode: Some(Mode::Mc), shots: Some(20_000), seed: Some(11), ..Default::default() };
    let mut contents = Vec::new();
    for k in 0..2 {
        let report = run::run(&s, &opts).unwrap();
        let files = run::emit(&report, Format::Jsonl, &dir.path().join(format!("run{k}.jsonl"))).unwrap();
        contents.push(files.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>());
    }
    assert_eq!(contents[0], contents[1]);

    let other = run::run(&s, &RunOptions { seed: Some(12), ..opts }).unwrap();
    let first = run::run(&s, &opts).unwrap();
    assert_ne!(first.events, other.events);
}

#[test]
fn empty_event_log_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let s = golden("fig2_open").unwrap();
    let report = run::run(&s, &RunOptions { mode: Some(Mode::Mc), shots: Some(0), ..Default::default() }).unwrap();
    assert!(report.events.is_empty());
    let csv = dir.path().join("empty.csv");
    run::emit(&report, Format::Csv, &csv).unwrap();
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), "shot,terminal,bin\n");
    let jsonl = dir.path().join("empty.jsonl");
    run::emit(&report, Format::Jsonl, &jsonl).unwrap();
    assert_eq!(std::fs::read_to_string(&jsonl).unwrap(), "");
}

#[test]
fn exact_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let s = golden("fig2_open").unwrap();
    let report = run::run(&s, &RunOptions::default()).unwrap();
    let path = dir.path().join("open.csv");
    run::emit(&report, Format::Csv, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("terminal,bin,re,im,mean_n,p_click"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    // 17 significant digits.
    assert_eq!(row[2].split('e').next().unwrap().trim_start_matches('-').len(), 18);
}

#[test]
fn sweep_has_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let s = golden("fringe_sweep").unwrap();
    let phases = s.sweep.as_ref().unwrap().values();
    let report = run::run_sweep(&s, None, &phases).unwrap();
    let path = dir.path().join("sweep.csv");
    run::emit(&report, Format::Csv, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "phase,p_d1,p_d2");
    assert_eq!(lines.len(), 33);
    let sweepless = golden("fig3_open").unwrap();
    assert!(matches!(run::run_sweep(&sweepless, None, &phases), Err(run::RunError::NoSweep(_))));
}

#[test]
fn blocked_conditional_matches_closed_form() {
    let report = run::run(&golden("fig2_blocked").unwrap(), &RunOptions::default()).unwrap();
    let row = report.conditional("D2", "exact").unwrap();
    assert!((row.p_no_interaction - (-0.05f64).exp()).abs() < 1e-15);
    assert!((row.p_no_interaction - 0.9512).abs() < 1e-4);
}

#[test]
fn tensor_sum_outcome_table() {
    let report = run::run(&golden("fig2_tensor_sum_blocked").unwrap(), &RunOptions::default()).unwrap();
    assert!((report.outcome("o").unwrap() - 0.5).abs() < 1e-12);
    assert!((report.outcome("D1").unwrap() - 0.25).abs() < 1e-12);
    assert!((report.outcome("D2").unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn hom_pair_has_no_same_bin_coincidence() {
    let report = run::run(&golden("hom_pair").unwrap(), &RunOptions::default()).unwrap();
    assert!(report.coincidence("same_bin", "D1", "D2").unwrap().abs() < 1e-12);
    assert!(report.coincidence("bunched", "*", "*").unwrap() > 0.0);
    assert!(report.joint.iter().map(|r| r.probability).sum::<f64>() > 1.0 - 1e-12);
}

#[test]
fn oracle_keeps_the_dark_port_dark() {
    let spec = fig2_spec(3, false);
    let basis = Arc::new(FockBasis::new(fock::source_mode_count(&spec), 4).unwrap());
    let modes: Vec<usize> = (0..3).map(|j| fock::source_mode(&spec, "laser", j).unwrap()).collect();
    let input = fock::prepare_coherent_train(&basis, C64::new(0.1f64.sqrt(), 0.0), &modes).unwrap();
    let joint = fock::simulate_fock(&spec, &input).unwrap();
    let c = circuit::compile(&spec).unwrap();
    let d2 = c.terminal_index("D2").unwrap();
    let interior = c.topology.interior_bins(d2);
    let p = joint.probability(|k| {
        interior.iter().any(|&b| joint.cell_index("D2", b).is_some_and(|i| k[i] > 0))
    });
    assert!(p < 1e-6, "{p}");
}

#[test]
fn engine_compatibility() {
    let coherent = golden("fig2_open").unwrap();
    let opts = |engine| RunOptions { engine: Some(engine), ..Default::default() };
    assert!(matches!(
        run::run(&coherent, &opts(Engine::SinglePhoton)),
        Err(run::RunError::EngineSourceMismatch { .. })
    ));
    let fock_mc = RunOptions { engine: Some(Engine::Fock), mode: Some(Mode::Mc), ..Default::default() };
    assert!(matches!(run::run(&coherent, &fock_mc), Err(run::RunError::MonteCarloUnsupported(_))));
    let mut wide = coherent.clone();
    wide.run.max_deficit = 1e-12;
    let err = run::run(&wide, &opts(Engine::Fock)).unwrap_err();
    assert!(matches!(err, run::RunError::Engine { .. }));
    assert!(!err.is_validation());
}

fn within_3_sigma(count: u64, shots: u64, p: f64) -> bool {
    let expected = p * shots as f64;
    let sigma = (shots as f64 * p * (1.0 - p)).sqrt();
    (count as f64 - expected).abs() <= 3.0 * sigma
}

#[test]
fn click_frequencies_match_probabilities() {
    let shots = 1_000_000;
    for name in golden_names() {
        let s = golden(name).unwrap();
        let SourceSpec::Coherent { element, train } = &s.source else { continue };
        let c = circuit::compile(&s.circuit).unwrap();
        let field = coherent::propagate_coherent_from(&c, element, train).unwrap();
        let dist = coherent::click_distribution(&field);
        let log = coherent::sample_clicks(&dist, shots, s.run.seed);
        for t in 0..c.terminals().len() {
            for b in 0..c.n_bins() {
                let (n, p) = (log.count(t, b), dist.p(t, b));
                assert!(within_3_sigma(n, shots, p), "{name} terminal {t} bin {b}: {n} vs p = {p}");
            }
        }
    }
}

#[test]
fn blocked_d2_click_rate() {
    let s = golden("fig2_blocked").unwrap();
    let c = circuit::compile(&s.circuit).unwrap();
    let train = CoherentTrain::from_mean_photon_number(10, 0.1).unwrap();
    let dist = coherent::click_distribution(&coherent::propagate_coherent(&c, &train).unwrap());
    let d2 = c.terminal_index("D2").unwrap();
    let p = 1.0 - (-0.025f64).exp();
    assert!((dist.p(d2, 5) - p).abs() < 1e-15);
    let log = coherent::sample_clicks(&dist, 1_000_000, 3);
    assert!(within_3_sigma(log.count(d2, 5), 1_000_000, p));
}

#[test]
fn photon_outcome_frequencies() {
    let shots = 1_000_000;
    for name in ["fig2_tensor_sum_open", "fig2_tensor_sum_blocked"] {
        let s = golden(name).unwrap();
        let report = run::run(&s, &RunOptions { mode: Some(Mode::Mc), shots: Some(shots), ..Default::default() }).unwrap();
        let exact = run::run(&s, &RunOptions::default()).unwrap();
        for row in &exact.outcomes {
            let f = report.outcome(&row.terminal).unwrap();
            assert!(within_3_sigma((f * shots as f64).round() as u64, shots, row.p_outcome), "{name} {}", row.terminal);
        }
        assert_eq!(report.events.len() as u64, shots);
    }
    let psi = singlephoton::tensor_sum_state(4).unwrap();
    assert!((psi.norm_squared() - 1.0).abs() < 1e-15);
}

#[test]
fn scenario_files_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (_, text) = scenario::GOLDEN.iter().find(|(n, _)| *n == "fig2_blocked").unwrap();
    let path = dir.path().join("custom.toml");
    std::fs::write(&path, text).unwrap();
    let s = scenario::resolve(path.to_str().unwrap()).unwrap();
    assert_eq!(s, golden("fig2_blocked").unwrap());
    std::fs::write(&path, text.replace("proxy-ifm/1", "proxy-ifm/9")).unwrap();
    assert!(matches!(scenario::load_scenario(&path), Err(ScenarioError::UnknownSchemaVersion(_))));
    assert!(matches!(scenario::resolve("no_such_scenario"), Err(ScenarioError::NotFound(_))));
}
