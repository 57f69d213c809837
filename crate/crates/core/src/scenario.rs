//! Scenario files: one TOML schema (`proxy-ifm/1`) for every engine.
//!
//! ```toml
//! schema = "proxy-ifm/1"
//! name = "fig2_open"
//!
//! [pulses]
//! n = 10
//! alpha_squared = 0.1
//!
//! [source]
//! type = "coherent"        # or "tensor_sum", "fock"
//!
//! [circuit]
//! n_bins = 11
//!
//! [[circuit.elements]]
//! id = "laser"
//! kind = "source"
//! pulses = 10
//! # ... beam_splitter, multiport, delay, phase_shift, obstacle, detector, absorber
//!
//! [obstacles]
//! o = false                # element id -> inserted
//!
//! [detectors]
//! d1 = "D1"                # element id -> label
//!
//! [run]
//! mode = "exact"
//! seed = 1
//! triggers = ["D2"]
//! ```
//!
//! Angles may be numbers (radians) or strings such as `"pi"`, `"-pi/2"`,
//! `"0.25*pi"`. Splitter matrices are row-major lists of `[re, im]` pairs.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::path::Path;

use serde::Deserialize;

use crate::circuit::{CircuitSpec, Element, ElementKind, PortRef};
use crate::coherent::{CoherentTrain, WindowPolicy};
use crate::linalg::{CMatrix, C64};
use crate::run::{Engine, Mode};

pub const SCHEMA_VERSION: &str = "proxy-ifm/1";

/// Cap on `sources × terminals × n_bins²`, the size of the unrolled map.
pub const MAX_UNROLLED_ENTRIES: u128 = 1 << 24;

/// Shipped scenarios, by name.
pub const GOLDEN: &[(&str, &str)] = &[
    ("fig2_open", include_str!("../scenarios/fig2_open.toml")),
    ("fig2_blocked", include_str!("../scenarios/fig2_blocked.toml")),
    ("fig2_tensor_sum_open", include_str!("../scenarios/fig2_tensor_sum_open.toml")),
    ("fig2_tensor_sum_blocked", include_str!("../scenarios/fig2_tensor_sum_blocked.toml")),
    ("fig3_open", include_str!("../scenarios/fig3_open.toml")),
    ("fig3_blocked_l", include_str!("../scenarios/fig3_blocked_l.toml")),
    ("fig3_blocked_m", include_str!("../scenarios/fig3_blocked_m.toml")),
    ("fringe_sweep", include_str!("../scenarios/fringe_sweep.toml")),
    ("hom_pair", include_str!("../scenarios/hom_pair.toml")),
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError { line: usize, column: usize, message: String },
    #[error("unknown schema version `{0}` (expected `{SCHEMA_VERSION}`)")]
    UnknownSchemaVersion(String),
    #[error("`{key}` refers to unknown element `{id}`")]
    UnresolvedElementId { key: String, id: String },
    #[error("invalid value for `{key}`: {detail}")]
    InvalidValue { key: String, detail: String },
    #[error("cannot read `{path}`: {detail}")]
    Io { path: String, detail: String },
    #[error("no scenario file or shipped scenario named `{0}`")]
    NotFound(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotonSpec {
    pub source: String,
    pub bin: usize,
    pub count: u8,
}

/// What enters the circuit.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    /// A coherent pulse train on source element `element`.
    Coherent { element: String, train: CoherentTrain },
    /// One photon spread evenly over the first `n` bins of `element`.
    TensorSum { element: String, n: usize },
    /// A product of Fock states on `(source, bin)` cells.
    Fock { photons: Vec<PhotonSpec> },
}

impl SourceSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SourceSpec::Coherent { .. } => "coherent",
            SourceSpec::TensorSum { .. } => "tensor_sum",
            SourceSpec::Fock { .. } => "fock",
        }
    }

    /// Engine used when none is requested.
    pub fn default_engine(&self) -> Engine {
        match self {
            SourceSpec::Coherent { .. } => Engine::Coherent,
            SourceSpec::TensorSum { .. } => Engine::SinglePhoton,
            SourceSpec::Fock { .. } => Engine::Fock,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunDefaults {
    pub engine: Engine,
    pub mode: Mode,
    pub shots: u64,
    pub seed: u64,
    pub cutoff: usize,
    pub max_deficit: f64,
    pub window: WindowPolicy,
    /// Detector ids or labels used as conditioning clicks.
    pub triggers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Delay element whose propagation phase is swept.
    pub element: String,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

impl SweepSpec {
    /// `steps` evenly spaced values from `from` to `to`, both included.
    pub fn values(&self) -> Vec<f64> {
        linspace(self.from, self.to, self.steps)
    }
}

pub fn linspace(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..steps).map(|k| from + (to - from) * k as f64 / (steps - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub schema_version: String,
    pub name: String,
    pub description: String,
    pub source: SourceSpec,
    pub circuit: CircuitSpec,
    pub run: RunDefaults,
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema: String,
    name: Option<String>,
    description: Option<String>,
    pulses: Option<RawPulses>,
    source: RawSource,
    circuit: RawCircuit,
    #[serde(default)]
    obstacles: BTreeMap<String, bool>,
    #[serde(default)]
    detectors: BTreeMap<String, String>,
    #[serde(default)]
    run: RawRun,
    sweep: Option<RawSweep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPulses {
    n: usize,
    alpha_squared: Option<f64>,
    alpha_phase: Option<Angle>,
    phases: Option<Vec<Angle>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    #[serde(rename = "type")]
    kind: String,
    element: Option<String>,
    photons: Option<Vec<RawPhoton>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhoton {
    source: String,
    bin: usize,
    count: Option<u8>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCircuit {
    n_bins: usize,
    bin_spacing: Option<f64>,
    elements: Vec<RawElement>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawElement {
    id: String,
    kind: String,
    label: Option<String>,
    #[serde(default)]
    inputs: Vec<String>,
    pulses: Option<usize>,
    matrix: Option<Vec<Vec<[f64; 2]>>>,
    bins: Option<usize>,
    phase: Option<Angle>,
    angle: Option<Angle>,
    inserted: Option<bool>,
    gate: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    engine: Option<String>,
    mode: Option<String>,
    shots: Option<u64>,
    seed: Option<u64>,
    cutoff: Option<usize>,
    max_deficit: Option<f64>,
    window: Option<String>,
    triggers: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    param: String,
    element: String,
    from: Angle,
    to: Angle,
    steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Angle {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Angle {
    fn radians(&self, key: &str) -> Result<f64, ScenarioError> {
        match self {
            Angle::Int(v) => Ok(*v as f64),
            Angle::Float(v) if v.is_finite() => Ok(*v),
            Angle::Float(v) => Err(invalid(key, format!("{v} is not finite"))),
            Angle::Text(s) => parse_angle(s).ok_or_else(|| invalid(key, format!("cannot read angle `{s}`"))),
        }
    }
}

/// Reads `"pi"`, `"-pi/2"`, `"0.25*pi"`, `"3pi/4"` or a plain number.
pub fn parse_angle(text: &str) -> Option<f64> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().ok().filter(|d| *d != 0.0 && d.is_finite())?),
        None => (s.as_str(), 1.0),
    };
    let coef = num.strip_suffix("pi")?.trim_end_matches('*');
    let coef = match coef {
        "" | "+" => 1.0,
        "-" => -1.0,
        c => c.parse::<f64>().ok().filter(|c| c.is_finite())?,
    };
    Some(coef * PI / den)
}

fn invalid(key: &str, detail: impl Into<String>) -> ScenarioError {
    ScenarioError::InvalidValue { key: key.to_string(), detail: detail.into() }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text.as_bytes()[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let start = before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let column = String::from_utf8_lossy(&before[start..]).chars().count() + 1;
    (line, column)
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        ScenarioError::ParseError { line, column, message: e.message().to_string() }
    })?;
    if raw.schema != SCHEMA_VERSION {
        return Err(ScenarioError::UnknownSchemaVersion(raw.schema));
    }
    build(raw)
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), detail: e.to_string() })?;
    parse_scenario(&text)
}

/// A shipped scenario by name.
pub fn golden(name: &str) -> Result<Scenario, ScenarioError> {
    let (_, text) = GOLDEN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ScenarioError::NotFound(name.to_string()))?;
    parse_scenario(text)
}

pub fn golden_names() -> impl Iterator<Item = &'static str> {
    GOLDEN.iter().map(|(n, _)| *n)
}

/// Loads `arg` as a file if it exists, otherwise as a shipped scenario name.
pub fn resolve(arg: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(arg);
    if path.exists() {
        return load_scenario(path);
    }
    let stem = arg.strip_suffix(".toml").unwrap_or(arg);
    if GOLDEN.iter().any(|(n, _)| *n == stem) {
        return golden(stem);
    }
    Err(ScenarioError::NotFound(arg.to_string()))
}

fn build(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    let mut circuit = build_circuit(&raw.circuit)?;

    for (id, &inserted) in &raw.obstacles {
        if !circuit.set_obstacle(id, inserted) {
            return Err(ScenarioError::UnresolvedElementId { key: format!("obstacles.{id}"), id: id.clone() });
        }
    }
    for (id, label) in &raw.detectors {
        match circuit.element_mut(id) {
            Some(e) if e.kind == ElementKind::Detector => e.label = Some(label.clone()),
            _ => return Err(ScenarioError::UnresolvedElementId { key: format!("detectors.{id}"), id: id.clone() }),
        }
    }

    let first_source = circuit
        .elements
        .iter()
        .find(|e| matches!(e.kind, ElementKind::Source { .. }))
        .map(|e| e.id.clone())
        .ok_or_else(|| invalid("circuit.elements", "no source element"))?;
    let source_pulses = |id: &str, key: &str| -> Result<usize, ScenarioError> {
        match circuit.element(id).map(|e| &e.kind) {
            Some(ElementKind::Source { pulses }) => Ok(*pulses),
            _ => Err(ScenarioError::UnresolvedElementId { key: key.to_string(), id: id.to_string() }),
        }
    };

    let source = match raw.source.kind.as_str() {
        "coherent" | "tensor_sum" => {
            let element = raw.source.element.clone().unwrap_or(first_source);
            let capacity = source_pulses(&element, "source.element")?;
            let pulses = raw.pulses.as_ref().ok_or_else(|| invalid("pulses", "required for this source type"))?;
            if pulses.n == 0 {
                return Err(invalid("pulses.n", "must be at least 1"));
            }
            if pulses.n > capacity {
                return Err(invalid("pulses.n", format!("{} pulses exceed the {capacity} bins of `{element}`", pulses.n)));
            }
            if raw.source.kind == "tensor_sum" {
                SourceSpec::TensorSum { element, n: pulses.n }
            } else {
                let mu = pulses.alpha_squared.ok_or_else(|| invalid("pulses.alpha_squared", "required for coherent sources"))?;
                if !(mu >= 0.0 && mu.is_finite()) {
                    return Err(invalid("pulses.alpha_squared", "must be a finite non-negative number"));
                }
                let arg = pulses.alpha_phase.as_ref().map_or(Ok(0.0), |a| a.radians("pulses.alpha_phase"))?;
                let alpha = C64::from_polar(mu.sqrt(), arg);
                let phases = match &pulses.phases {
                    None => vec![0.0; pulses.n],
                    Some(p) if p.len() != pulses.n => {
                        return Err(invalid("pulses.phases", format!("expected {} entries, got {}", pulses.n, p.len())))
                    }
                    Some(p) => p.iter().map(|a| a.radians("pulses.phases")).collect::<Result<_, _>>()?,
                };
                let train = CoherentTrain::with_phases(alpha, phases).map_err(|e| invalid("pulses", e.to_string()))?;
                SourceSpec::Coherent { element, train }
            }
        }
        "fock" => {
            let photons = raw.source.photons.as_ref().ok_or_else(|| invalid("source.photons", "required for fock sources"))?;
            let mut out = Vec::with_capacity(photons.len());
            for (k, p) in photons.iter().enumerate() {
                let key = format!("source.photons[{k}]");
                let capacity = source_pulses(&p.source, &key)?;
                if p.bin >= capacity {
                    return Err(invalid(&key, format!("bin {} outside the {capacity} bins of `{}`", p.bin, p.source)));
                }
                out.push(PhotonSpec { source: p.source.clone(), bin: p.bin, count: p.count.unwrap_or(1) });
            }
            SourceSpec::Fock { photons: out }
        }
        other => return Err(invalid("source.type", format!("unknown source type `{other}`"))),
    };

    let run = build_run(&raw.run, &source, &circuit)?;
    let sweep = match &raw.sweep {
        None => None,
        Some(s) => {
            if s.param != "delay_phase" {
                return Err(invalid("sweep.param", format!("unknown parameter `{}`", s.param)));
            }
            match circuit.element(&s.element).map(|e| &e.kind) {
                Some(ElementKind::Delay { .. }) => {}
                _ => {
                    return Err(ScenarioError::UnresolvedElementId { key: "sweep.element".into(), id: s.element.clone() })
                }
            }
            Some(SweepSpec {
                element: s.element.clone(),
                from: s.from.radians("sweep.from")?,
                to: s.to.radians("sweep.to")?,
                steps: s.steps,
            })
        }
    };

    Ok(Scenario {
        schema_version: raw.schema,
        name: raw.name.unwrap_or_default(),
        description: raw.description.unwrap_or_default(),
        source,
        circuit,
        run,
        sweep,
    })
}

fn build_run(raw: &RawRun, source: &SourceSpec, circuit: &CircuitSpec) -> Result<RunDefaults, ScenarioError> {
    let engine = match raw.engine.as_deref() {
        None => source.default_engine(),
        Some(s) => s.parse().map_err(|_| invalid("run.engine", format!("unknown engine `{s}`")))?,
    };
    let mode = match raw.mode.as_deref() {
        None => Mode::Exact,
        Some(s) => s.parse().map_err(|_| invalid("run.mode", format!("unknown mode `{s}`")))?,
    };
    let window = match raw.window.as_deref() {
        None | Some("partner_pulses") => WindowPolicy::PartnerPulses,
        Some("blocked_slice") => WindowPolicy::BlockedSlice,
        Some(s) => return Err(invalid("run.window", format!("unknown window `{s}`"))),
    };
    let triggers = raw.triggers.clone().unwrap_or_default();
    for (k, t) in triggers.iter().enumerate() {
        let found = circuit
            .elements
            .iter()
            .any(|e| e.kind == ElementKind::Detector && (e.id == *t || e.label() == t));
        if !found {
            return Err(ScenarioError::UnresolvedElementId { key: format!("run.triggers[{k}]"), id: t.clone() });
        }
    }
    let max_deficit = raw.max_deficit.unwrap_or(crate::fock::DEFAULT_MAX_DEFICIT);
    if !(max_deficit >= 0.0) {
        return Err(invalid("run.max_deficit", "must be non-negative"));
    }
    Ok(RunDefaults {
        engine,
        mode,
        shots: raw.shots.unwrap_or(100_000),
        seed: raw.seed.unwrap_or(0),
        cutoff: raw.cutoff.unwrap_or(5),
        max_deficit,
        window,
        triggers,
    })
}

fn build_circuit(raw: &RawCircuit) -> Result<CircuitSpec, ScenarioError> {
    if raw.n_bins == 0 {
        return Err(invalid("circuit.n_bins", "must be positive"));
    }
    let mut spec = CircuitSpec::new(raw.n_bins);
    if let Some(d) = raw.bin_spacing {
        if !(d > 0.0 && d.is_finite()) {
            return Err(invalid("circuit.bin_spacing", "must be positive"));
        }
        spec.bin_spacing = d;
    }
    let ids: HashSet<&str> = raw.elements.iter().map(|e| e.id.as_str()).collect();
    for (k, e) in raw.elements.iter().enumerate() {
        let key = |field: &str| format!("circuit.elements[{k}].{field}");
        let need = |v: Option<usize>, field: &str| v.ok_or_else(|| invalid(&key(field), format!("required for `{}`", e.kind)));
        let mut inputs = Vec::with_capacity(e.inputs.len());
        for s in &e.inputs {
            let port = PortRef::parse(s).ok_or_else(|| invalid(&key("inputs"), format!("cannot read port `{s}`")))?;
            if !ids.contains(port.element.as_str()) {
                return Err(ScenarioError::UnresolvedElementId { key: key("inputs"), id: port.element });
            }
            inputs.push(port);
        }
        let kind = match e.kind.as_str() {
            "source" => ElementKind::Source { pulses: need(e.pulses, "pulses")? },
            "beam_splitter" => ElementKind::BeamSplitter {
                matrix: match &e.matrix {
                    Some(m) => read_matrix(m, &key("matrix"))?,
                    None => crate::circuit::default_beamsplitter(),
                },
            },
            "multiport" => ElementKind::Multiport {
                matrix: read_matrix(
                    e.matrix.as_ref().ok_or_else(|| invalid(&key("matrix"), "required for `multiport`"))?,
                    &key("matrix"),
                )?,
            },
            "delay" => ElementKind::Delay {
                bins: need(e.bins, "bins")?,
                phase: e.phase.as_ref().map_or(Ok(0.0), |a| a.radians(&key("phase")))?,
            },
            "phase_shift" => ElementKind::PhaseShift {
                angle: e
                    .angle
                    .as_ref()
                    .ok_or_else(|| invalid(&key("angle"), "required for `phase_shift`"))?
                    .radians(&key("angle"))?,
            },
            "obstacle" => ElementKind::Obstacle { inserted: e.inserted.unwrap_or(false), gate: e.gate.clone() },
            "detector" => ElementKind::Detector,
            "absorber" => ElementKind::Absorber,
            other => return Err(invalid(&key("kind"), format!("unknown element kind `{other}`"))),
        };
        spec.push(Element { id: e.id.clone(), label: e.label.clone(), kind, inputs });
    }
    let count = |kinds: &[&str]| raw.elements.iter().filter(|e| kinds.contains(&e.kind.as_str())).count() as u128;
    let entries = count(&["source"]) * count(&["detector", "absorber", "obstacle"]) * (raw.n_bins as u128).pow(2);
    if entries > MAX_UNROLLED_ENTRIES {
        return Err(invalid(
            "circuit.n_bins",
            format!("the unrolled map would hold {entries} entries (limit {MAX_UNROLLED_ENTRIES})"),
        ));
    }
    Ok(spec)
}

fn read_matrix(rows: &[Vec<[f64; 2]>], key: &str) -> Result<CMatrix, ScenarioError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(key, "matrix must be square and non-empty"));
    }
    if rows.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(key, "matrix entries must be finite"));
    }
    Ok(CMatrix::from_fn(n, n, |r, c| C64::new(rows[r][c][0], rows[r][c][1])))
}

/// The two-arm delay-line interferometer: a splitter feeding a short arm
/// `s` and a long arm `l` (obstacle `o`, one-bin delay `delay_l`, phase `π`),
/// recombined on a second splitter whose ports feed `D1` and `D2`.
pub fn fig2_spec(n: usize, blocked: bool) -> CircuitSpec {
    let mut c = CircuitSpec::new(n + 1);
    c.source("laser", n)
        .source("vac", n)
        .beam_splitter("bs1", ["laser", "vac"])
        .obstacle("o", blocked, "bs1:1")
        .delay("delay_l", 1, 0.0, "o")
        .phase_shift("phase_l", PI, "delay_l")
        .beam_splitter("bs2", ["bs1:0", "phase_l"])
        .detector("d1", "D1", "bs2:0")
        .detector("d2", "D2", "bs2:1");
    c
}

/// The three-arm cascade: arms `s` (no delay, quarter-wave phase),
/// `m` (one bin, obstacle `o_m`) and `l` (two bins, obstacle `o_l`).
/// `D1` sits on port `d`, `D2` on port `c` and `D3` on port `b`.
pub fn fig3_spec(n: usize, blocked_l: bool, blocked_m: bool) -> CircuitSpec {
    let mut c = CircuitSpec::new(n + 2);
    c.source("laser", n)
        .source("vac1", n)
        .source("vac2", n)
        .beam_splitter("bs1", ["laser", "vac1"])
        .beam_splitter("bs2", ["bs1:1", "vac2"])
        .phase_shift("phase_s", PI / 2.0, "bs1:0")
        .obstacle("o_m", blocked_m, "bs2:1")
        .delay("delay_m", 1, 0.0, "o_m")
        .obstacle("o_l", blocked_l, "bs2:0")
        .delay("delay_l", 2, 0.0, "o_l")
        .beam_splitter("bs3", ["delay_l", "delay_m"])
        .beam_splitter("bs4", ["phase_s", "bs3:1"])
        .detector("d1", "D1", "bs4:1")
        .detector("d2", "D2", "bs4:0")
        .detector("d3", "D3", "bs3:0");
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles() {
        assert_eq!(parse_angle("pi"), Some(PI));
        assert_eq!(parse_angle("-pi/2"), Some(-PI / 2.0));
        assert_eq!(parse_angle("0.25*pi"), Some(PI / 4.0));
        assert_eq!(parse_angle("3pi/4"), Some(3.0 * PI / 4.0));
        assert_eq!(parse_angle("1.5"), Some(1.5));
        assert_eq!(parse_angle("pi/0"), None);
        assert_eq!(parse_angle("tau"), None);
        assert_eq!(parse_angle("inf"), None);
    }

    #[test]
    fn golden_fig2_open() {
        let s = golden("fig2_open").unwrap();
        let SourceSpec::Coherent { train, .. } = &s.source else { panic!("coherent source expected") };
        assert_eq!(train.n_pulses, 10);
        assert!((train.mean_photon_number() - 0.1).abs() < 1e-15);
        assert_eq!(s.circuit, fig2_spec(10, false));
    }

    #[test]
    fn oversized_circuit_is_rejected() {
        let text = GOLDEN[0].1.replace("n_bins = 11", "n_bins = 100000");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::InvalidValue { .. })));
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(parse_scenario(""), Err(ScenarioError::ParseError { .. })));
    }

    #[test]
    fn parse_error_position() {
        let err = parse_scenario("schema = \"proxy-ifm/1\"\nbogus = [\n").unwrap_err();
        let ScenarioError::ParseError { line, .. } = err else { panic!("{err:?}") };
        assert!(line >= 2);
    }

    #[test]
    fn unknown_schema() {
        let text = GOLDEN[0].1.replace("proxy-ifm/1", "proxy-ifm/9");
        assert_eq!(parse_scenario(&text), Err(ScenarioError::UnknownSchemaVersion("proxy-ifm/9".into())));
    }

    #[test]
    fn missing_detector_id() {
        let text = format!("{}\n[detectors]\nd9 = \"D9\"\n", GOLDEN[0].1);
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::UnresolvedElementId { id, .. }) if id == "d9"
        ));
    }

    #[test]
    fn unresolved_input() {
        let text = GOLDEN[0].1.replace("inputs = [\"bs1:0\", \"phase_l\"]", "inputs = [\"bs1:0\", \"nowhere\"]");
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::UnresolvedElementId { id, .. }) if id == "nowhere"
        ));
    }

    #[test]
    fn every_golden_scenario_loads() {
        for name in golden_names() {
            let s = golden(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
            crate::circuit::compile(&s.circuit).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
