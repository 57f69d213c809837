//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proxy_ifm::circuit::{self, CircuitSpec};
use proxy_ifm::coherent::{self, CoherentTrain};
use proxy_ifm::fock::{self, FockBasis};
use proxy_ifm::linalg::{self, C64, I};
use proxy_ifm::multiport;
use proxy_ifm::run::{self, Engine, Mode, RunOptions, RunReport};
use proxy_ifm::scenario::{fig2_spec, golden, Scenario, SourceSpec};
use proxy_ifm::singlephoton;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < budget, || format!("took {t:.2?}, budget {budget:.0?}"))?;
    Ok(t)
}

fn exact(s: &Scenario) -> RunReport {
    run::run(s, &RunOptions { mode: Some(Mode::Exact), ..Default::default() }).expect("exact run")
}

/// Interior-bin amplitudes of `label` from an exact coherent run.
fn interior(report: &RunReport, label: &str) -> Vec<C64> {
    report
        .amplitudes
        .iter()
        .filter(|r| r.terminal == label && !r.edge)
        .map(|r| C64::new(r.re, r.im))
        .collect()
}

fn max_dev(values: &[C64], target: C64) -> f64 {
    values.iter().map(|v| (v - target).norm()).fold(0.0, f64::max)
}

fn alpha_of(s: &Scenario) -> C64 {
    match &s.source {
        SourceSpec::Coherent { train, .. } => train.alpha,
        _ => panic!("coherent scenario expected"),
    }
}

fn c1_dark_port() -> Check {
    let start = Instant::now();
    let s = golden("fig2_open").map_err(|e| e.to_string())?;
    let alpha = alpha_of(&s);
    let r = exact(&s);
    let d1 = interior(&r, "D1");
    let d2 = interior(&r, "D2");
    ensure(d1.len() >= 9 && d2.len() >= 9, || "missing interior bins".into())?;
    let dark = d2.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let bright = max_dev(&d1, alpha);
    ensure(dark < 1e-12, || format!("max |D2| = {dark:.3e}"))?;
    ensure(bright < 1e-12, || format!("max |D1 − α| = {bright:.3e}"))?;
    let t = within_budget(start, Duration::from_secs(1))?;
    Ok(format!("max|D2|={dark:.1e} max|D1−α|={bright:.1e} over {} bins in {t:.2?}", d1.len()))
}

fn c2_blocked_amplitudes() -> Check {
    let s = golden("fig2_blocked").map_err(|e| e.to_string())?;
    let alpha = alpha_of(&s);
    let r = exact(&s);
    let e1 = max_dev(&interior(&r, "D1"), alpha / 2.0);
    let e2 = max_dev(&interior(&r, "D2"), I * alpha / 2.0);
    ensure(e1 < 1e-12 && e2 < 1e-12, || format!("|D1 − α/2| = {e1:.3e}, |D2 − iα/2| = {e2:.3e}"))?;
    Ok(format!("|D1−α/2|={e1:.1e} |D2−iα/2|={e2:.1e}"))
}

fn c3_counterfactuality() -> Check {
    let start = Instant::now();
    let s = golden("fig2_blocked").map_err(|e| e.to_string())?;
    let mu = alpha_of(&s).norm_sqr();
    let expected = (-mu / 2.0).exp();
    let r = run::run(&s, &RunOptions { mode: Some(Mode::Mc), shots: Some(1_000_000), ..Default::default() })
        .map_err(|e| e.to_string())?;
    let exact_rows: Vec<f64> = r
        .conditionals
        .iter()
        .filter(|c| c.trigger == "D2" && c.method == "exact")
        .map(|c| c.p_no_interaction)
        .collect();
    ensure(!exact_rows.is_empty(), || "no exact D2 rows".into())?;
    let worst = exact_rows.iter().map(|p| (p - expected).abs()).fold(0.0, f64::max);
    ensure(worst < 1e-12, || format!("exact P_∅ off e^(−|α|²/2) by {worst:.3e}"))?;
    let first_order = (exact_rows[0] - 0.95).abs();
    ensure(first_order <= mu * mu / 8.0, || format!("|P_∅ − 0.95| = {first_order:.3e} > |α|⁴/8"))?;
    let mc = r.conditional("D2", "mc").ok_or("no Monte-Carlo row")?;
    let z = (mc.p_no_interaction - expected).abs() / mc.sigma;
    ensure(z <= 3.0, || format!("MC {:.6} ± {:.2e} is {z:.2}σ from exact", mc.p_no_interaction, mc.sigma))?;
    let t = within_budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "exact={:.9} |−0.95|={first_order:.2e}≤{:.2e} mc={:.5}±{:.1e} ({z:.2}σ, {} triggers) in {t:.2?}",
        exact_rows[0],
        mu * mu / 8.0,
        mc.p_no_interaction,
        mc.sigma,
        mc.trials
    ))
}

fn photon_outcomes(n: usize, blocked: bool) -> Result<singlephoton::OutcomeDistribution, String> {
    let c = circuit::compile(&fig2_spec(n, blocked)).map_err(|e| e.to_string())?;
    let psi = singlephoton::tensor_sum_state(n).map_err(|e| e.to_string())?;
    singlephoton::propagate_photon(&c, &psi).map_err(|e| e.to_string())
}

fn c4_ideal_proxy() -> Check {
    let mut notes = Vec::new();
    for n in [2, 10, 50] {
        let d = photon_outcomes(n, false)?;
        let p = d.p("D2").unwrap_or(0.0);
        let expect = 1.0 / (2.0 * n as f64);
        ensure((p - expect).abs() < 1e-12, || format!("N={n}: P(D2)={p} vs {expect}"))?;
        notes.push(format!("N={n}:P(D2)={p:.4}"));
    }
    let d = photon_outcomes(10, true)?;
    let (po, p1, p2) = (d.p("o").unwrap_or(0.0), d.p("D1").unwrap_or(0.0), d.p("D2").unwrap_or(0.0));
    let err = (po - 0.5).abs().max((p1 - 0.25).abs()).max((p2 - 0.25).abs());
    ensure(err < 1e-12, || format!("blocked outcomes ({po}, {p1}, {p2})"))?;
    let shots = 100_000;
    let log = singlephoton::sample_outcomes(&d, shots, 7);
    let per_shot: Vec<usize> = log.by_shot().map(|(_, ev)| ev.len()).collect();
    ensure(per_shot.len() as u64 == shots && per_shot.iter().all(|&k| k == 1), || {
        "a shot without exactly one outcome".into()
    })?;
    Ok(format!("{} blocked=(O {po:.3}, D1 {p1:.3}, D2 {p2:.3}) exclusive on {shots} shots", notes.join(" ")))
}

fn c5_fringe() -> Check {
    let s = golden("fringe_sweep").map_err(|e| e.to_string())?;
    let phases = s.sweep.as_ref().ok_or("scenario has no sweep")?.values();
    ensure(phases.len() == 32, || format!("{} sweep points", phases.len()))?;
    let r = run::run_sweep(&s, None, &phases).map_err(|e| e.to_string())?;
    let worst = r
        .sweep
        .iter()
        .map(|p| (p.p_d1 - singlephoton::detection_probability_formula(p.phase)).abs())
        .fold(0.0, f64::max);
    ensure(worst < 1e-9, || format!("max deviation {worst:.3e}"))?;

    let element = &s.sweep.as_ref().unwrap().element;
    let mut spec = s.circuit.clone();
    spec.set_delay_phase(element, PI);
    let c = circuit::compile(&spec).map_err(|e| e.to_string())?;
    let f = coherent::propagate_coherent(&c, &CoherentTrain::new(10, C64::new(1.0, 0.0)).unwrap())
        .map_err(|e| e.to_string())?;
    let (d1, d2) = (c.terminal_index("D1").unwrap(), c.terminal_index("D2").unwrap());
    let bins: Vec<usize> = (0..c.n_bins()).filter(|&b| c.topology.is_interior(d1, 0, b)).collect();
    let leak = bins.iter().map(|&b| f.mean_photon_number(d1, b)).fold(0.0, f64::max);
    let to_d2 = bins.iter().all(|&b| f.mean_photon_number(d2, b) > 0.99);
    ensure(leak < 1e-24 && to_d2, || format!("at φ=π D1 keeps {leak:.3e}"))?;
    Ok(format!("32 points, max|p_D1 − ½(1+cos φ)|={worst:.1e}; φ=π: D1 ≤ {leak:.1e}"))
}

fn c6_tritter_cascade() -> Check {
    let u = multiport::tritter();
    let res = linalg::unitarity_residual(&u);
    ensure(res < 1e-15, || format!("tritter residual {res:.3e}"))?;
    let eq = multiport::verify_cascade_equivalence(&multiport::cascade_combiner_spec(), &u).map_err(|e| e.to_string())?;
    ensure(eq.distance < 1e-9, || format!("cascade distance {:.3e}", eq.distance))?;

    let open = golden("fig3_open").map_err(|e| e.to_string())?;
    let alpha = alpha_of(&open);
    let r = exact(&open);
    let d1 = max_dev(&interior(&r, "D1"), -alpha);
    let dark = interior(&r, "D2").into_iter().chain(interior(&r, "D3")).map(|a| a.norm()).fold(0.0, f64::max);
    ensure(d1 < 1e-12 && dark < 1e-12, || format!("open: |D1 + α| = {d1:.3e}, dark ports {dark:.3e}"))?;

    let blocked = golden("fig3_blocked_l").map_err(|e| e.to_string())?;
    let r = exact(&blocked);
    let ec = max_dev(&interior(&r, "D2"), I * alpha / 4.0);
    let ed = max_dev(&interior(&r, "D1"), -3.0 * alpha / 4.0);
    let eb = max_dev(&interior(&r, "D3"), -I * alpha * (FRAC_1_SQRT_2 / 2.0));
    ensure(ec.max(ed).max(eb) < 1e-12, || format!("blocked: c {ec:.3e}, d {ed:.3e}, b {eb:.3e}"))?;
    let mu = alpha.norm_sqr();
    let p: Vec<f64> = r.conditionals.iter().filter(|c| c.method == "exact").map(|c| c.p_no_interaction).collect();
    ensure(!p.is_empty(), || "no conditional rows".into())?;
    let gap = p.iter().map(|v| (v - (1.0 - mu)).abs()).fold(0.0, f64::max);
    ensure(gap <= mu * mu, || format!("|P_∅ − (1 − |α|²)| = {gap:.3e} > |α|⁴"))?;
    Ok(format!(
        "residual={res:.1e} cascade={:.1e} open D1 err={d1:.1e} blocked err={:.1e} P_∅={:.6} (gap {gap:.1e}≤{:.0e})",
        eq.distance,
        ec.max(ed).max(eb),
        p[0],
        mu * mu
    ))
}

fn with_source(base: &str, spec: CircuitSpec, source: SourceSpec, max_deficit: f64) -> Scenario {
    let mut s = golden(base).expect("golden scenario");
    s.circuit = spec;
    s.source = source;
    s.run.max_deficit = max_deficit;
    s.run.triggers.clear();
    s
}

fn by_cell<T>(rows: impl Iterator<Item = ((String, usize), T)>) -> BTreeMap<(String, usize), T> {
    rows.collect()
}

fn c7_oracle_equivalence() -> Check {
    let start = Instant::now();
    let cutoff = 5;
    let fock_opts = RunOptions { engine: Some(Engine::Fock), mode: Some(Mode::Exact), cutoff: Some(cutoff), ..Default::default() };
    let (mut coherent_err, mut raw_err, mut photon_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut cases = 0;
    for n in 1..=4 {
        for blocked in [false, true] {
            for mu in [0.1, 0.2] {
                let train = CoherentTrain::from_mean_photon_number(n, mu).unwrap();
                let total = train.total_mean_photon_number();
                let s = with_source(
                    "fig2_open",
                    fig2_spec(n, blocked),
                    SourceSpec::Coherent { element: "laser".into(), train },
                    1e-3,
                );
                let reference = exact(&s);
                let oracle = run::run(&s, &fock_opts).map_err(|e| e.to_string())?;
                let marg = by_cell(oracle.marginals.iter().map(|m| ((m.terminal.clone(), m.bin), m.p_click)));
                for row in &reference.amplitudes {
                    let p_oracle = marg.get(&(row.terminal.clone(), row.bin)).copied().unwrap_or(0.0);
                    // The oracle reports P(click ∧ total ≤ K); add back the part above the cutoff.
                    let above = fock::poisson_tail(total, cutoff)
                        - (-row.mean_n).exp() * fock::poisson_tail((total - row.mean_n).max(0.0), cutoff);
                    coherent_err = coherent_err.max((p_oracle + above - row.p_click).abs());
                    raw_err = raw_err.max((p_oracle - row.p_click).abs());
                }
                cases += 1;
            }
            let s = with_source(
                "fig2_tensor_sum_open",
                fig2_spec(n, blocked),
                SourceSpec::TensorSum { element: "laser".into(), n },
                0.0,
            );
            let reference = exact(&s);
            let oracle = run::run(&s, &fock_opts).map_err(|e| e.to_string())?;
            let marg = by_cell(oracle.marginals.iter().map(|m| ((m.terminal.clone(), m.bin), m.mean_n)));
            let refs = by_cell(reference.amplitudes.iter().map(|r| ((r.terminal.clone(), r.bin), r.mean_n)));
            for key in marg.keys().chain(refs.keys()) {
                let d = marg.get(key).copied().unwrap_or(0.0) - refs.get(key).copied().unwrap_or(0.0);
                photon_err = photon_err.max(d.abs());
            }
            cases += 1;
        }
    }
    println!("    criterion 7: raw oracle − coherent p_click max {raw_err:.3e} (cutoff {cutoff} truncation)");
    ensure(coherent_err < 1e-6, || format!("coherent mismatch {coherent_err:.3e}"))?;
    ensure(photon_err < 1e-10, || format!("single-photon mismatch {photon_err:.3e}"))?;
    let t = within_budget(start, Duration::from_secs(60))?;
    Ok(format!(
        "{cases} cases: coherent {coherent_err:.1e} (truncation-accounted; raw {raw_err:.1e}), single-photon {photon_err:.1e} in {t:.2?}"
    ))
}

fn c8_hom() -> Check {
    let s = golden("hom_pair").map_err(|e| e.to_string())?;
    let r = exact(&s);
    let same = r.coincidence("same_bin", "D1", "D2").ok_or("no coincidence row")?;
    let bunched = r.coincidence("bunched", "*", "*").unwrap_or(0.0);
    ensure(same.abs() < 1e-12, || format!("hom_pair same-bin coincidence {same:.3e}"))?;
    ensure(bunched > 0.0, || "no bunching".into())?;

    let mut c = CircuitSpec::new(2);
    c.source("a", 2)
        .source("b", 2)
        .beam_splitter("bs", ["a", "b"])
        .detector("d1", "D1", "bs:0")
        .detector("d2", "D2", "bs:1");
    let basis = Arc::new(FockBasis::new(fock::source_mode_count(&c), 2).unwrap());
    let mode = |id: &str, bin| fock::source_mode(&c, id, bin).unwrap();
    let joint = |modes: &[usize]| {
        let input = fock::prepare_single_photons(&basis, modes).unwrap();
        fock::simulate_fock(&c, &input).unwrap()
    };
    let together = joint(&[mode("a", 0), mode("b", 0)]).coincidence("D1", "D2");
    let apart = joint(&[mode("a", 0), mode("b", 1)]).coincidence("D1", "D2");
    ensure(together.abs() < 1e-12, || format!("indistinguishable coincidence {together:.3e}"))?;
    ensure((apart - 0.5).abs() < 1e-12, || format!("distinguishable coincidence {apart}"))?;
    Ok(format!(
        "hom_pair same-bin={:.1e} bunched={bunched:.3}; splitter coincidence {:.1e} vs {apart:.3} apart",
        same.abs(),
        together.abs()
    ))
}

fn c9_qn_reconstruction() -> Check {
    let (n, mu, j_max) = (2, 0.1f64, 4);
    let alpha = C64::new(mu.sqrt(), 0.0);
    // Cutoff j_max: the Q_N series stops at j_max photons, so a larger
    // basis would only add the train's own tail to the infidelity.
    let basis = Arc::new(FockBasis::new(n, j_max).unwrap());
    let modes: Vec<usize> = (0..n).collect();
    let target = fock::prepare_coherent_train_with_budget(&basis, alpha, &modes, 1.0).map_err(|e| e.to_string())?;
    let fixed = fock::reconstruct_from_qn(&basis, &modes, &singlephoton::expand_coherent_in_qn(alpha, n, j_max))
        .map_err(|e| e.to_string())?;
    let printed =
        fock::reconstruct_from_qn(&basis, &modes, &singlephoton::uncorrected_qn_coefficients(alpha, n, j_max))
            .map_err(|e| e.to_string())?;
    let good = 1.0 - target.fidelity(&fixed);
    let bad = 1.0 - target.fidelity(&printed);
    ensure(good < 1e-6, || format!("corrected infidelity {good:.3e}"))?;
    ensure(bad > 1e-6, || format!("printed coefficients unexpectedly reproduce the train ({bad:.3e})"))?;
    Ok(format!("infidelity corrected={good:.1e} printed={bad:.2e}"))
}

fn c10_overlap() -> Check {
    let mut worst = 0.0f64;
    for mu in [0.01f64, 0.1, 1.0] {
        let a = C64::new(mu.sqrt(), 0.0);
        let got = coherent::coherent_overlap(a, -a).norm();
        worst = worst.max((got - (-2.0 * mu).exp()).abs());
    }
    ensure(worst < 1e-12, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("max |⟨α|−α⟩ − e^(−2|α|²)| = {worst:.1e}"))
}

fn c11_reck() -> Check {
    let start = Instant::now();
    let (mut worst, mut count) = (0.0f64, 0);
    for n in 2..=8 {
        for seed in 0..100u64 {
            let u = multiport::haar_random_unitary(n, 1000 * n as u64 + seed);
            let d = multiport::reck_decompose(&u, 1e-10).map_err(|e| e.to_string())?;
            ensure(d.steps.len() <= n * (n - 1) / 2, || format!("N={n} seed {seed}: {} steps", d.steps.len()))?;
            worst = worst.max(linalg::frobenius_distance(&multiport::recompose(&d), &u));
            count += 1;
        }
    }
    ensure(worst < 1e-10, || format!("max recomposition error {worst:.3e}"))?;
    let t = within_budget(start, Duration::from_secs(10))?;
    Ok(format!("{count} unitaries, max error {worst:.1e} in {t:.2?}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("dark-port exactness", c1_dark_port),
        ("blocked amplitudes", c2_blocked_amplitudes),
        ("counterfactuality figure", c3_counterfactuality),
        ("ideal single-photon proxy", c4_ideal_proxy),
        ("fringe law", c5_fringe),
        ("tritter and cascade", c6_tritter_cascade),
        ("oracle equivalence", c7_oracle_equivalence),
        ("HOM contrast", c8_hom),
        ("Q_N reconstruction", c9_qn_reconstruction),
        ("coherent overlap", c10_overlap),
        ("Reck round trip", c11_reck),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
