//! Runs a scenario on one of the engines and writes the result tables.
//!
//! Output files are a pure function of the report: numbers are written with
//! 17 significant digits (`{:.16e}`) in CSV and as shortest round-trip
//! decimals in JSONL, and no wall-clock data is recorded.
//!
//! | table | CSV header |
//! |---|---|
//! | amplitudes | `terminal,bin,re,im,mean_n,p_click` |
//! | events | `shot,terminal,bin` |
//! | joint (Fock) | `outcome_vector,probability` |
//! | sweep | `phase,p_d1,p_d2` |
//! | conditionals | `trigger,bin,window,method,p_no_interaction,first_order,trials,sigma` |
//! | outcomes | `terminal,p_outcome` |
//! | marginals | `terminal,bin,mean_n,p_click` |
//! | coincidences | `kind,a,b,probability` |
//!
//! The first applicable of sweep, events, joint and amplitudes goes to the
//! requested path; the others are written next to it as
//! `<stem>.<table>.<ext>`, plus `<stem>.provenance.json`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::circuit::{self, CircuitError};
use crate::coherent::{self, CoherentError, FringePoint, Trigger, WindowPolicy};
use crate::fock::{self, FockBasis, FockError};
use crate::linalg::{CMatrix, C64};
use crate::multiport::{self, Decomposition, MultiportError};
use crate::scenario::{Scenario, SourceSpec};
use crate::singlephoton::{self, SinglePhotonError};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Coherent,
    SinglePhoton,
    Fock,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Coherent => "coherent",
            Engine::SinglePhoton => "singlephoton",
            Engine::Fock => "fock",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "coherent" => Ok(Engine::Coherent),
            "singlephoton" | "single_photon" => Ok(Engine::SinglePhoton),
            "fock" => Ok(Engine::Fock),
            _ => Err(format!("unknown engine `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Exact,
    Mc,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Mc => "mc",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(Mode::Exact),
            "mc" => Ok(Mode::Mc),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

/// Failures inside an engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Coherent(#[from] CoherentError),
    #[error(transparent)]
    SinglePhoton(#[from] SinglePhotonError),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Multiport(#[from] MultiportError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("engine `{engine}` cannot run a `{source_type}` source")]
    EngineSourceMismatch { engine: Engine, source_type: &'static str },
    #[error("engine `{0}` has no Monte-Carlo mode")]
    MonteCarloUnsupported(Engine),
    #[error("scenario `{0}` has no sweep and no delay element was given")]
    NoSweep(String),
    #[error("unitary CSV line {line}: {detail}")]
    UnitaryParse { line: usize, detail: String },
    #[error("cannot write `{path}`: {detail}")]
    Io { path: String, detail: String },
    #[error("scenario `{scenario}`: {source}")]
    Engine {
        scenario: String,
        #[source]
        source: EngineError,
    },
}

impl RunError {
    /// True for errors caused by the input rather than by an engine.
    pub fn is_validation(&self) -> bool {
        match self {
            RunError::EngineSourceMismatch { .. }
            | RunError::MonteCarloUnsupported(_)
            | RunError::NoSweep(_)
            | RunError::UnitaryParse { .. } => true,
            RunError::Engine { source, .. } => matches!(
                source,
                EngineError::Circuit(_) | EngineError::Multiport(MultiportError::NonUnitaryInput { .. })
            ),
            RunError::Io { .. } => false,
        }
    }
}

/// Overrides on top of the scenario's run defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub engine: Option<Engine>,
    pub mode: Option<Mode>,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub cutoff: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub scenario: String,
    pub engine: &'static str,
    pub mode: &'static str,
    pub seed: u64,
    pub shots: u64,
    pub cutoff: Option<usize>,
    pub window: &'static str,
    pub tool_version: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplitudeRow {
    pub terminal: String,
    pub bin: usize,
    pub re: f64,
    pub im: f64,
    pub mean_n: f64,
    pub p_click: f64,
    /// Bin where some partial wave has no partner pulse.
    pub edge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalRow {
    pub trigger: String,
    /// Trigger bin; `None` for a Monte-Carlo estimate pooled over interior bins.
    pub bin: Option<usize>,
    pub window: &'static str,
    pub method: &'static str,
    pub p_no_interaction: f64,
    /// `1 − μ` for the window mean photon number `μ`.
    pub first_order: f64,
    pub trials: u64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeRow {
    pub terminal: String,
    pub p_outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRow {
    pub shot: u64,
    pub terminal: String,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointRow {
    pub outcome_vector: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalRow {
    pub terminal: String,
    pub bin: usize,
    pub mean_n: f64,
    pub p_click: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoincidenceRow {
    /// `same_bin`, `any_bin` or `bunched`.
    pub kind: &'static str,
    pub a: String,
    pub b: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub phase: f64,
    pub p_d1: f64,
    pub p_d2: f64,
}

impl From<FringePoint> for SweepRow {
    fn from(p: FringePoint) -> Self {
        Self { phase: p.phase, p_d1: p.p_d1, p_d2: p.p_d2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub engine: Engine,
    pub mode: Mode,
    pub provenance: Provenance,
    pub amplitudes: Vec<AmplitudeRow>,
    pub conditionals: Vec<ConditionalRow>,
    pub outcomes: Vec<OutcomeRow>,
    pub events: Vec<EventRow>,
    pub joint: Vec<JointRow>,
    pub marginals: Vec<MarginalRow>,
    pub coincidences: Vec<CoincidenceRow>,
    pub sweep: Vec<SweepRow>,
}

impl RunReport {
    fn empty(scenario: &Scenario, engine: Engine, mode: Mode, provenance: Provenance) -> Self {
        Self {
            scenario: scenario.name.clone(),
            engine,
            mode,
            provenance,
            amplitudes: Vec::new(),
            conditionals: Vec::new(),
            outcomes: Vec::new(),
            events: Vec::new(),
            joint: Vec::new(),
            marginals: Vec::new(),
            coincidences: Vec::new(),
            sweep: Vec::new(),
        }
    }

    pub fn conditional(&self, trigger: &str, method: &str) -> Option<&ConditionalRow> {
        self.conditionals.iter().find(|r| r.trigger == trigger && r.method == method)
    }

    pub fn outcome(&self, terminal: &str) -> Option<f64> {
        self.outcomes.iter().find(|r| r.terminal == terminal).map(|r| r.p_outcome)
    }

    pub fn coincidence(&self, kind: &str, a: &str, b: &str) -> Option<f64> {
        self.coincidences.iter().find(|r| r.kind == kind && r.a == a && r.b == b).map(|r| r.probability)
    }
}

/// Runs `scenario` with its defaults overridden by `options`.
pub fn run(scenario: &Scenario, options: &RunOptions) -> Result<RunReport, RunError> {
    let engine = options.engine.unwrap_or(scenario.run.engine);
    let mode = options.mode.unwrap_or(scenario.run.mode);
    let seed = options.seed.unwrap_or(scenario.run.seed);
    let shots = options.shots.unwrap_or(scenario.run.shots);
    let cutoff = options.cutoff.unwrap_or(scenario.run.cutoff);
    let mismatch = || RunError::EngineSourceMismatch { engine, source_type: scenario.source.name() };
    match (engine, &scenario.source) {
        (Engine::Coherent, SourceSpec::Coherent { .. }) | (Engine::SinglePhoton, SourceSpec::TensorSum { .. }) => {}
        (Engine::Fock, _) => {
            if mode == Mode::Mc {
                return Err(RunError::MonteCarloUnsupported(engine));
            }
        }
        _ => return Err(mismatch()),
    }
    let provenance = Provenance {
        scenario: scenario.name.clone(),
        engine: engine.name(),
        mode: mode.name(),
        seed,
        shots: if mode == Mode::Mc { shots } else { 0 },
        cutoff: (engine == Engine::Fock).then_some(cutoff),
        window: scenario.run.window.name(),
        tool_version: TOOL_VERSION,
    };
    let mut report = RunReport::empty(scenario, engine, mode, provenance);
    let wrap = |source: EngineError| RunError::Engine { scenario: scenario.name.clone(), source };
    match engine {
        Engine::Coherent => run_coherent(scenario, mode, shots, seed, &mut report).map_err(wrap)?,
        Engine::SinglePhoton => run_singlephoton(scenario, mode, shots, seed, &mut report).map_err(wrap)?,
        Engine::Fock => run_fock(scenario, cutoff, &mut report).map_err(wrap)?,
    }
    Ok(report)
}

fn run_coherent(scenario: &Scenario, mode: Mode, shots: u64, seed: u64, report: &mut RunReport) -> Result<(), EngineError> {
    let SourceSpec::Coherent { element, train } = &scenario.source else { unreachable!("checked by run") };
    let circuit = circuit::compile(&scenario.circuit)?;
    let field = coherent::propagate_coherent_from(&circuit, element, train)?;
    let dist = coherent::click_distribution(&field);
    let topo = Arc::clone(&circuit.topology);
    let source = field.source;

    for (t, term) in topo.terminals.iter().enumerate() {
        for b in 0..topo.n_bins {
            let a = field.amplitude(t, b);
            report.amplitudes.push(AmplitudeRow {
                terminal: term.label.clone(),
                bin: b,
                re: a.re,
                im: a.im,
                mean_n: a.norm_sqr(),
                p_click: dist.p(t, b),
                edge: !topo.is_interior(t, source, b),
            });
        }
    }

    let policy = scenario.run.window;
    let log = (mode == Mode::Mc).then(|| coherent::sample_clicks(&dist, shots, seed));
    if !topo.probes.is_empty() {
        for name in &scenario.run.triggers {
            let t = topo.terminal_index(name).expect("triggers resolved at load");
            let label = topo.terminals[t].label.clone();
            let bins: Vec<usize> = (0..topo.n_bins).filter(|&b| topo.is_interior(t, source, b)).collect();
            for &b in &bins {
                let trigger = Trigger { terminal: t, bin: b };
                let p = coherent::conditional_no_interaction_with(&field, trigger, policy)?;
                report.conditionals.push(ConditionalRow {
                    trigger: label.clone(),
                    bin: Some(b),
                    window: policy.name(),
                    method: "exact",
                    p_no_interaction: p,
                    first_order: 1.0 + p.ln(),
                    trials: 0,
                    sigma: 0.0,
                });
            }
            if let Some(log) = &log {
                let triggers: Vec<Trigger> = bins.iter().map(|&b| Trigger { terminal: t, bin: b }).collect();
                match coherent::estimate_conditional_no_interaction(log, &triggers, source, policy) {
                    Ok(est) => report.conditionals.push(ConditionalRow {
                        trigger: label.clone(),
                        bin: None,
                        window: policy.name(),
                        method: "mc",
                        p_no_interaction: est.value,
                        first_order: f64::NAN,
                        trials: est.trials,
                        sigma: est.sigma,
                    }),
                    Err(CoherentError::WindowNotObservable { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    if let Some(log) = log {
        report.events = log
            .events
            .iter()
            .map(|e| EventRow { shot: e.shot, terminal: log.terminal_label(e.terminal).to_string(), bin: e.bin })
            .collect();
    }
    Ok(())
}

fn run_singlephoton(scenario: &Scenario, mode: Mode, shots: u64, seed: u64, report: &mut RunReport) -> Result<(), EngineError> {
    let SourceSpec::TensorSum { element, n } = &scenario.source else { unreachable!("checked by run") };
    let circuit = circuit::compile(&scenario.circuit)?;
    let topo = Arc::clone(&circuit.topology);
    let source = topo.source_index(element).expect("source resolved at load");
    let mut psi = singlephoton::tensor_sum_state(*n)?;
    // Modes before the driven source carry vacuum.
    let n_bins = psi.n_bins;
    let mut amplitudes = vec![C64::new(0.0, 0.0); (source + 1) * n_bins];
    amplitudes[source * n_bins..].copy_from_slice(&psi.amplitudes);
    psi.modes = (0..=source).map(|s| topo.sources[s].id.clone()).collect();
    psi.amplitudes = amplitudes;

    let evolved = singlephoton::evolve(&circuit, &psi)?;
    let dist = singlephoton::propagate_photon(&circuit, &psi)?;
    let mut detector_rows = evolved.amplitudes.chunks(topo.n_bins);
    let mut absorbed_rows = evolved.absorbed.iter();
    for (t, term) in topo.terminals.iter().enumerate() {
        let block = if term.is_detector() {
            detector_rows.next().expect("detector block")
        } else {
            absorbed_rows.next().expect("absorbed block").1.as_slice()
        };
        for (b, a) in block.iter().enumerate() {
            report.amplitudes.push(AmplitudeRow {
                terminal: term.label.clone(),
                bin: b,
                re: a.re,
                im: a.im,
                mean_n: a.norm_sqr(),
                p_click: a.norm_sqr(),
                edge: !topo.is_interior(t, source, b),
            });
        }
    }
    match mode {
        Mode::Exact => {
            report.outcomes =
                dist.outcomes.iter().map(|o| OutcomeRow { terminal: o.label.clone(), p_outcome: o.p }).collect();
        }
        Mode::Mc => {
            let log = singlephoton::sample_outcomes(&dist, shots, seed);
            let counts = log.cell_counts();
            report.outcomes = topo
                .terminals
                .iter()
                .enumerate()
                .map(|(t, term)| OutcomeRow {
                    terminal: term.label.clone(),
                    p_outcome: counts[t * topo.n_bins..(t + 1) * topo.n_bins].iter().sum::<u64>() as f64 / shots as f64,
                })
                .collect();
            report.events = log
                .events
                .iter()
                .map(|e| EventRow { shot: e.shot, terminal: log.terminal_label(e.terminal).to_string(), bin: e.bin })
                .collect();
        }
    }
    Ok(())
}

/// Prepares the oracle input state for `scenario` at the given cutoff.
pub fn fock_input(scenario: &Scenario, cutoff: usize) -> Result<fock::FockStateVector, EngineError> {
    let spec = &scenario.circuit;
    let basis = Arc::new(FockBasis::new(fock::source_mode_count(spec), cutoff)?);
    let mode = |id: &str, bin: usize| fock::source_mode(spec, id, bin).expect("source cells resolved at load");
    Ok(match &scenario.source {
        SourceSpec::Coherent { element, train } => {
            let modes: Vec<(usize, C64)> = (0..train.n_pulses).map(|j| (mode(element, j), train.amplitude(j))).collect();
            fock::prepare_product_coherent(&basis, &modes, scenario.run.max_deficit)?
        }
        SourceSpec::TensorSum { element, n } => {
            let modes: Vec<usize> = (0..*n).map(|j| mode(element, j)).collect();
            fock::prepare_tensor_sum(&basis, &modes)?
        }
        SourceSpec::Fock { photons } => {
            let modes: Vec<usize> = photons
                .iter()
                .flat_map(|p| std::iter::repeat_n(mode(&p.source, p.bin), p.count as usize))
                .collect();
            fock::prepare_single_photons(&basis, &modes)?
        }
    })
}

fn run_fock(scenario: &Scenario, cutoff: usize, report: &mut RunReport) -> Result<(), EngineError> {
    let input = fock_input(scenario, cutoff)?;
    let joint = fock::simulate_fock(&scenario.circuit, &input)?;
    report.joint = joint
        .outcomes
        .iter()
        .map(|(k, p)| JointRow { outcome_vector: joint.format_outcome(k), probability: *p })
        .collect();
    report.marginals = joint
        .cells
        .iter()
        .map(|c| MarginalRow {
            terminal: c.label.clone(),
            bin: c.bin,
            mean_n: joint.mean_count(&c.label, c.bin),
            p_click: joint.p_click(&c.label, c.bin),
        })
        .collect();
    let mut labels: Vec<(usize, String, bool)> = joint.cells.iter().map(|c| (c.terminal, c.label.clone(), c.loss)).collect();
    labels.dedup();
    report.outcomes =
        labels.iter().map(|(_, l, _)| OutcomeRow { terminal: l.clone(), p_outcome: joint.p_terminal(l) }).collect();
    let detectors: Vec<&String> = labels.iter().filter(|(_, _, loss)| !loss).map(|(_, l, _)| l).collect();
    for (i, a) in detectors.iter().enumerate() {
        for b in &detectors[i + 1..] {
            report.coincidences.push(CoincidenceRow {
                kind: "same_bin",
                a: (*a).clone(),
                b: (*b).clone(),
                probability: joint.same_bin_coincidence(a, b),
            });
            report.coincidences.push(CoincidenceRow {
                kind: "any_bin",
                a: (*a).clone(),
                b: (*b).clone(),
                probability: joint.coincidence(a, b),
            });
        }
    }
    report.coincidences.push(CoincidenceRow {
        kind: "bunched",
        a: "*".into(),
        b: "*".into(),
        probability: joint.p_bunched(),
    });
    Ok(())
}

/// Sweeps the propagation phase of `element` (or the scenario's sweep
/// element) over `phases`, reporting normalised interior-bin intensities.
pub fn run_sweep(scenario: &Scenario, element: Option<&str>, phases: &[f64]) -> Result<RunReport, RunError> {
    let element = element
        .map(str::to_string)
        .or_else(|| scenario.sweep.as_ref().map(|s| s.element.clone()))
        .ok_or_else(|| RunError::NoSweep(scenario.name.clone()))?;
    let points = coherent::fringe_sweep_on(&scenario.circuit, &element, phases)
        .map_err(|e| RunError::Engine { scenario: scenario.name.clone(), source: e.into() })?;
    let provenance = Provenance {
        scenario: scenario.name.clone(),
        engine: Engine::Coherent.name(),
        mode: Mode::Exact.name(),
        seed: scenario.run.seed,
        shots: 0,
        cutoff: None,
        window: WindowPolicy::default().name(),
        tool_version: TOOL_VERSION,
    };
    let mut report = RunReport::empty(scenario, Engine::Coherent, Mode::Exact, provenance);
    report.sweep = points.into_iter().map(SweepRow::from).collect();
    Ok(report)
}

fn io_err(path: &Path, e: impl fmt::Display) -> RunError {
    RunError::Io { path: path.display().to_string(), detail: e.to_string() }
}

fn num(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

fn sibling(path: &Path, table: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{table}.{ext}"))
}

trait CsvRow {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

impl CsvRow for AmplitudeRow {
    const HEADER: &'static [&'static str] = &["terminal", "bin", "re", "im", "mean_n", "p_click"];
    fn fields(&self) -> Vec<String> {
        vec![self.terminal.clone(), self.bin.to_string(), num(self.re), num(self.im), num(self.mean_n), num(self.p_click)]
    }
}

impl CsvRow for EventRow {
    const HEADER: &'static [&'static str] = &["shot", "terminal", "bin"];
    fn fields(&self) -> Vec<String> {
        vec![self.shot.to_string(), self.terminal.clone(), self.bin.to_string()]
    }
}

impl CsvRow for JointRow {
    const HEADER: &'static [&'static str] = &["outcome_vector", "probability"];
    fn fields(&self) -> Vec<String> {
        vec![self.outcome_vector.clone(), num(self.probability)]
    }
}

impl CsvRow for SweepRow {
    const HEADER: &'static [&'static str] = &["phase", "p_d1", "p_d2"];
    fn fields(&self) -> Vec<String> {
        vec![num(self.phase), num(self.p_d1), num(self.p_d2)]
    }
}

impl CsvRow for ConditionalRow {
    const HEADER: &'static [&'static str] =
        &["trigger", "bin", "window", "method", "p_no_interaction", "first_order", "trials", "sigma"];
    fn fields(&self) -> Vec<String> {
        vec![
            self.trigger.clone(),
            self.bin.map_or_else(|| "*".to_string(), |b| b.to_string()),
            self.window.to_string(),
            self.method.to_string(),
            num(self.p_no_interaction),
            num(self.first_order),
            self.trials.to_string(),
            num(self.sigma),
        ]
    }
}

impl CsvRow for OutcomeRow {
    const HEADER: &'static [&'static str] = &["terminal", "p_outcome"];
    fn fields(&self) -> Vec<String> {
        vec![self.terminal.clone(), num(self.p_outcome)]
    }
}

impl CsvRow for MarginalRow {
    const HEADER: &'static [&'static str] = &["terminal", "bin", "mean_n", "p_click"];
    fn fields(&self) -> Vec<String> {
        vec![self.terminal.clone(), self.bin.to_string(), num(self.mean_n), num(self.p_click)]
    }
}

impl CsvRow for CoincidenceRow {
    const HEADER: &'static [&'static str] = &["kind", "a", "b", "probability"];
    fn fields(&self) -> Vec<String> {
        vec![self.kind.to_string(), self.a.clone(), self.b.clone(), num(self.probability)]
    }
}

fn write_table<R: CsvRow + Serialize>(rows: &[R], format: Format, path: &Path) -> Result<(), RunError> {
    let mut bytes = Vec::new();
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut bytes);
            w.write_record(R::HEADER).map_err(|e| io_err(path, e))?;
            for r in rows {
                w.write_record(r.fields()).map_err(|e| io_err(path, e))?;
            }
            w.flush().map_err(|e| io_err(path, e))?;
        }
        Format::Jsonl => {
            for r in rows {
                serde_json::to_writer(&mut bytes, r).map_err(|e| io_err(path, e))?;
                bytes.push(b'\n');
            }
        }
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Writes `report` to `path` plus sibling tables; returns every file written.
pub fn emit(report: &RunReport, format: Format, path: &Path) -> Result<Vec<PathBuf>, RunError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let ext = format.extension();
    let mut written = vec![path.to_path_buf()];
    if !report.sweep.is_empty() {
        write_table(&report.sweep, format, path)?;
    } else if report.mode == Mode::Mc {
        write_table(&report.events, format, path)?;
    } else if report.engine == Engine::Fock {
        write_table(&report.joint, format, path)?;
    } else {
        write_table(&report.amplitudes, format, path)?;
    }
    let mut side = |table: &str, f: &dyn Fn(&Path) -> Result<(), RunError>| -> Result<(), RunError> {
        let p = sibling(path, table, ext);
        f(&p)?;
        written.push(p);
        Ok(())
    };
    if report.mode == Mode::Mc && !report.amplitudes.is_empty() {
        side("amplitudes", &|p| write_table(&report.amplitudes, format, p))?;
    }
    if !report.conditionals.is_empty() {
        side("conditionals", &|p| write_table(&report.conditionals, format, p))?;
    }
    if !report.outcomes.is_empty() {
        side("outcomes", &|p| write_table(&report.outcomes, format, p))?;
    }
    if !report.marginals.is_empty() {
        side("marginals", &|p| write_table(&report.marginals, format, p))?;
    }
    if !report.coincidences.is_empty() {
        side("coincidences", &|p| write_table(&report.coincidences, format, p))?;
    }
    let prov = sibling(path, "provenance", "json");
    let mut text = serde_json::to_string_pretty(&report.provenance).map_err(|e| io_err(&prov, e))?;
    text.push('\n');
    std::fs::write(&prov, text).map_err(|e| io_err(&prov, e))?;
    written.push(prov);
    Ok(written)
}

/// Reads a square complex matrix, one row per line, entries such as
/// `0.5`, `-0.5i` or `0.25+0.5i` separated by commas. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_unitary_csv(text: &str) -> Result<CMatrix, RunError> {
    let mut rows: Vec<Vec<C64>> = Vec::new();
    let mut first_line = 0;
    for (k, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if rows.is_empty() {
            first_line = k + 1;
        }
        let row = trimmed
            .split(',')
            .map(|cell| {
                let cell: String = cell.chars().filter(|c| !c.is_whitespace()).collect();
                C64::from_str(&cell)
                    .ok()
                    .filter(|z| z.re.is_finite() && z.im.is_finite())
                    .ok_or_else(|| RunError::UnitaryParse { line: k + 1, detail: format!("cannot read `{cell}`") })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(RunError::UnitaryParse { line: 1, detail: "no rows".into() });
    }
    if let Some(r) = rows.iter().position(|r| r.len() != n) {
        return Err(RunError::UnitaryParse {
            line: first_line + r,
            detail: format!("row has {} entries, expected {n}", rows[r].len()),
        });
    }
    Ok(CMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

/// Decomposes the matrix in `text` (see [`parse_unitary_csv`]).
pub fn decompose_unitary(text: &str, tol: f64) -> Result<Decomposition, RunError> {
    let u = parse_unitary_csv(text)?;
    multiport::reck_decompose(&u, tol).map_err(|e| RunError::Engine { scenario: "decompose".into(), source: e.into() })
}

/// Writes a decomposition as
/// `position,i,j,m00re,m00im,m01re,m01im,m10re,m10im,m11re,m11im`, one row
/// per two-mode step, then one row `phase,k,k,re,im,0,…` per output phase.
pub fn write_steps(d: &Decomposition, path: &Path) -> Result<(), RunError> {
    let mut bytes = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        let header = ["position", "i", "j", "m00re", "m00im", "m01re", "m01im", "m10re", "m10im", "m11re", "m11im"];
        w.write_record(header).map_err(|e| io_err(path, e))?;
        for s in &d.steps {
            let mut rec = vec![s.position.to_string(), s.modes.0.to_string(), s.modes.1.to_string()];
            for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                rec.push(num(s.matrix[(r, c)].re));
                rec.push(num(s.matrix[(r, c)].im));
            }
            w.write_record(rec).map_err(|e| io_err(path, e))?;
        }
        for (k, p) in d.output_phases.iter().enumerate() {
            let mut rec = vec!["phase".to_string(), k.to_string(), k.to_string(), num(p.re), num(p.im)];
            rec.extend(std::iter::repeat_n(num(0.0), 6));
            w.write_record(rec).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}
