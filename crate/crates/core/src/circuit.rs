//! Interferometer data model and its time-unrolled linear form.
//!
//! A [`CircuitSpec`] is a list of elements wired output-port to input-port.
//! Every spatial wire carries one complex amplitude per time bin; compiling
//! the spec yields the matrix that maps `(source, pulse bin)` amplitudes onto
//! `(terminal, bin)` amplitudes, where terminals are detectors, explicit
//! absorbers and inserted obstacles.
//!
//! Port conventions:
//!
//! * a splitter with matrix `U` maps input amplitudes `a` to outputs `U·a`,
//!   i.e. `U[(k, j)]` is the amplitude sent from input `j` to output `k`;
//! * [`default_beamsplitter`] is `(1/√2)[[1, i], [i, 1]]`, so `(α, 0)` leaves
//!   as `(α/√2, iα/√2)`;
//! * a [`ElementKind::Delay`] of `k` bins moves bin `t` to bin `t + k` and
//!   multiplies by `e^{iφ}`, where `φ` is the free-propagation phase of the
//!   extra path (zero under the matched condition).

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::sync::Arc;

use crate::linalg::{self, CMatrix, C64, ONE, ZERO};

/// Tolerance on `‖U†U − I‖_F` for splitter matrices.
pub const UNITARITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CircuitError {
    #[error("duplicate element id `{0}`")]
    DuplicateId(String),
    #[error("dangling port at element `{element}`: {detail}")]
    DanglingPort { element: String, detail: String },
    #[error("cyclic wiring involving element `{element}`")]
    CyclicGraph { element: String },
    #[error("splitter `{element}` is not unitary (residual {residual:.3e})")]
    NonUnitaryBeamSplitter { element: String, residual: f64 },
    #[error("element `{element}` pushes amplitude into bin {bin}, past n_bins = {n_bins}")]
    BinOverflow { element: String, bin: usize, n_bins: usize },
    #[error("spatial map has {inputs} inputs but {outputs} outputs")]
    PortCountMismatch { inputs: usize, outputs: usize },
    #[error("invalid parameter on `{element}`: {detail}")]
    InvalidParameter { element: String, detail: String },
    #[error("circuit has no source")]
    NoSource,
}

/// Reference to output port `port` of element `element`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PortRef {
    pub element: String,
    pub port: usize,
}

impl PortRef {
    pub fn new(element: impl Into<String>, port: usize) -> Self {
        Self { element: element.into(), port }
    }

    /// Parses `"id"` (port 0) or `"id:port"`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.rsplit_once(':') {
            Some((id, port)) if !id.is_empty() => port.parse().ok().map(|p| Self::new(id, p)),
            Some(_) => None,
            None if !s.is_empty() => Some(Self::new(s, 0)),
            None => None,
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.element, self.port)
    }
}

impl From<&str> for PortRef {
    fn from(s: &str) -> Self {
        Self::parse(s).unwrap_or_else(|| Self::new(s, 0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElementKind {
    /// Emits one pulse per bin in `0..pulses` (or vacuum, depending on the input state).
    Source { pulses: usize },
    /// Two-port splitter.
    BeamSplitter { matrix: CMatrix },
    /// N-port splitter, e.g. a tritter.
    Multiport { matrix: CMatrix },
    /// Integer bin delay with its free-propagation phase.
    Delay { bins: usize, phase: f64 },
    PhaseShift { angle: f64 },
    /// Perfect absorber on the wire when inserted; identity when retracted.
    /// `gate` restricts blocking to the listed bins.
    Obstacle { inserted: bool, gate: Option<Vec<usize>> },
    Detector,
    /// Terminal that swallows light without being a detector.
    Absorber,
}

impl ElementKind {
    pub fn n_inputs(&self) -> usize {
        match self {
            ElementKind::Source { .. } => 0,
            ElementKind::BeamSplitter { .. } => 2,
            ElementKind::Multiport { matrix } => matrix.ncols(),
            _ => 1,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            ElementKind::Detector | ElementKind::Absorber => 0,
            ElementKind::BeamSplitter { .. } => 2,
            ElementKind::Multiport { matrix } => matrix.nrows(),
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ElementKind::Source { .. } => "source",
            ElementKind::BeamSplitter { .. } => "beam_splitter",
            ElementKind::Multiport { .. } => "multiport",
            ElementKind::Delay { .. } => "delay",
            ElementKind::PhaseShift { .. } => "phase_shift",
            ElementKind::Obstacle { .. } => "obstacle",
            ElementKind::Detector => "detector",
            ElementKind::Absorber => "absorber",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: String,
    pub label: Option<String>,
    pub kind: ElementKind,
    pub inputs: Vec<PortRef>,
}

impl Element {
    pub fn new(id: impl Into<String>, kind: ElementKind, inputs: Vec<PortRef>) -> Self {
        Self { id: id.into(), label: None, kind, inputs }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.id)
    }
}

/// Declarative interferometer description.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSpec {
    pub elements: Vec<Element>,
    pub n_bins: usize,
    /// Abstract delay unit δ; every delay is an integer multiple of it.
    pub bin_spacing: f64,
}

impl CircuitSpec {
    pub fn new(n_bins: usize) -> Self {
        Self { elements: Vec::new(), n_bins, bin_spacing: 1.0 }
    }

    pub fn push(&mut self, element: Element) -> &mut Self {
        self.elements.push(element);
        self
    }

    pub fn source(&mut self, id: &str, pulses: usize) -> &mut Self {
        self.push(Element::new(id, ElementKind::Source { pulses }, vec![]))
    }

    pub fn beam_splitter(&mut self, id: &str, inputs: [&str; 2]) -> &mut Self {
        self.splitter(id, default_beamsplitter(), inputs)
    }

    pub fn splitter(&mut self, id: &str, matrix: CMatrix, inputs: [&str; 2]) -> &mut Self {
        let inputs = inputs.iter().map(|s| PortRef::from(*s)).collect();
        self.push(Element::new(id, ElementKind::BeamSplitter { matrix }, inputs))
    }

    pub fn multiport(&mut self, id: &str, matrix: CMatrix, inputs: &[&str]) -> &mut Self {
        let inputs = inputs.iter().map(|s| PortRef::from(*s)).collect();
        self.push(Element::new(id, ElementKind::Multiport { matrix }, inputs))
    }

    pub fn delay(&mut self, id: &str, bins: usize, phase: f64, input: &str) -> &mut Self {
        self.push(Element::new(id, ElementKind::Delay { bins, phase }, vec![input.into()]))
    }

    pub fn phase_shift(&mut self, id: &str, angle: f64, input: &str) -> &mut Self {
        self.push(Element::new(id, ElementKind::PhaseShift { angle }, vec![input.into()]))
    }

    pub fn obstacle(&mut self, id: &str, inserted: bool, input: &str) -> &mut Self {
        self.push(Element::new(
            id,
            ElementKind::Obstacle { inserted, gate: None },
            vec![input.into()],
        ))
    }

    pub fn detector(&mut self, id: &str, label: &str, input: &str) -> &mut Self {
        let mut e = Element::new(id, ElementKind::Detector, vec![input.into()]);
        e.label = Some(label.to_string());
        self.push(e)
    }

    pub fn absorber(&mut self, id: &str, input: &str) -> &mut Self {
        self.push(Element::new(id, ElementKind::Absorber, vec![input.into()]))
    }

    pub fn element(&self, id: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn element_mut(&mut self, id: &str) -> Option<&mut Element> {
        self.elements.iter_mut().find(|e| e.id == id)
    }

    /// Inserts or retracts the obstacle `id`. Returns false when no such obstacle exists.
    pub fn set_obstacle(&mut self, id: &str, inserted: bool) -> bool {
        match self.element_mut(id).map(|e| &mut e.kind) {
            Some(ElementKind::Obstacle { inserted: flag, .. }) => {
                *flag = inserted;
                true
            }
            _ => false,
        }
    }

    /// Sets the propagation phase of delay `id`. Returns false when no such delay exists.
    pub fn set_delay_phase(&mut self, id: &str, value: f64) -> bool {
        match self.element_mut(id).map(|e| &mut e.kind) {
            Some(ElementKind::Delay { phase, .. }) => {
                *phase = value;
                true
            }
            _ => false,
        }
    }
}

/// The symmetric 50:50 splitter `(1/√2)[[1, i], [i, 1]]`.
pub fn default_beamsplitter() -> CMatrix {
    let r = C64::new(FRAC_1_SQRT_2, 0.0);
    let t = C64::new(0.0, FRAC_1_SQRT_2);
    linalg::from_rows(&[&[r, t], &[t, r]])
}

/// Element indices in a deterministic topological order plus the wiring table.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub order: Vec<usize>,
    /// For each element, the `(upstream element index, port)` feeding each input.
    pub feeds: Vec<Vec<(usize, usize)>>,
}

/// Checks wiring, parameters and splitter unitarity, and orders the elements.
pub(crate) fn validate(spec: &CircuitSpec) -> Result<Layout, CircuitError> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, e) in spec.elements.iter().enumerate() {
        if index.insert(e.id.as_str(), i).is_some() {
            return Err(CircuitError::DuplicateId(e.id.clone()));
        }
    }
    if !spec.elements.iter().any(|e| matches!(e.kind, ElementKind::Source { .. })) {
        return Err(CircuitError::NoSource);
    }

    for e in &spec.elements {
        check_parameters(e, spec.n_bins)?;
    }

    let n = spec.elements.len();
    let mut feeds = vec![Vec::new(); n];
    let mut consumed: HashMap<(usize, usize), &str> = HashMap::new();
    for (i, e) in spec.elements.iter().enumerate() {
        let expected = e.kind.n_inputs();
        if e.inputs.len() != expected {
            return Err(CircuitError::DanglingPort {
                element: e.id.clone(),
                detail: format!("expects {expected} input(s), wired {}", e.inputs.len()),
            });
        }
        for input in &e.inputs {
            let Some(&up) = index.get(input.element.as_str()) else {
                return Err(CircuitError::DanglingPort {
                    element: e.id.clone(),
                    detail: format!("input `{input}` refers to an unknown element"),
                });
            };
            if input.port >= spec.elements[up].kind.n_outputs() {
                return Err(CircuitError::DanglingPort {
                    element: e.id.clone(),
                    detail: format!("input `{input}` names a port that does not exist"),
                });
            }
            if let Some(other) = consumed.insert((up, input.port), e.id.as_str()) {
                return Err(CircuitError::DanglingPort {
                    element: e.id.clone(),
                    detail: format!("output `{input}` is already consumed by `{other}`"),
                });
            }
            feeds[i].push((up, input.port));
        }
    }
    for (i, e) in spec.elements.iter().enumerate() {
        for port in 0..e.kind.n_outputs() {
            if !consumed.contains_key(&(i, port)) {
                return Err(CircuitError::DanglingPort {
                    element: e.id.clone(),
                    detail: format!("output port {port} does not reach a terminal"),
                });
            }
        }
    }

    // Kahn's algorithm, always taking the lowest-indexed ready element.
    let mut indegree: Vec<usize> = feeds.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (i, f) in feeds.iter().enumerate() {
        for &(up, _) in f {
            children[up].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(CircuitError::CyclicGraph { element: spec.elements[stuck].id.clone() });
    }
    Ok(Layout { order, feeds })
}

fn check_parameters(e: &Element, n_bins: usize) -> Result<(), CircuitError> {
    let invalid = |detail: String| CircuitError::InvalidParameter { element: e.id.clone(), detail };
    match &e.kind {
        ElementKind::Source { pulses } => {
            if *pulses == 0 {
                return Err(invalid("source needs at least one pulse bin".into()));
            }
            if *pulses > n_bins {
                return Err(CircuitError::BinOverflow {
                    element: e.id.clone(),
                    bin: pulses - 1,
                    n_bins,
                });
            }
        }
        ElementKind::BeamSplitter { matrix } | ElementKind::Multiport { matrix } => {
            if matches!(e.kind, ElementKind::BeamSplitter { .. }) && matrix.shape() != (2, 2) {
                return Err(invalid(format!("beam splitter matrix is {:?}, not 2x2", matrix.shape())));
            }
            if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
                return Err(invalid(format!("splitter matrix is {:?}", matrix.shape())));
            }
            let residual = linalg::unitarity_residual(matrix);
            if !(residual < UNITARITY_TOLERANCE) {
                return Err(CircuitError::NonUnitaryBeamSplitter { element: e.id.clone(), residual });
            }
        }
        ElementKind::Delay { phase, .. } if !phase.is_finite() => {
            return Err(invalid("delay phase is not finite".into()));
        }
        ElementKind::PhaseShift { angle } if !angle.is_finite() => {
            return Err(invalid("phase is not finite".into()));
        }
        _ => {}
    }
    Ok(())
}

/// Where light on a wire may have come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    /// A source, by index into [`Topology::sources`].
    Source(usize),
    /// An obstacle position, by index into [`Topology::probes`].
    Probe(usize),
}

/// Structural reachability: light from `origin` at bin `b` may arrive at bin
/// `b + offset`; `via_probe` records whether the path crossed an obstacle position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reach {
    pub origin: Origin,
    pub offset: usize,
    pub via_probe: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalKind {
    Detector,
    Absorber,
    /// Loss terminal of the inserted obstacle `probe`.
    Loss { probe: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Terminal {
    pub id: String,
    pub label: String,
    pub kind: TerminalKind,
}

impl Terminal {
    pub fn is_detector(&self) -> bool {
        self.kind == TerminalKind::Detector
    }

    /// Absorbers and obstacles: terminals where light is lost rather than detected.
    pub fn is_loss(&self) -> bool {
        !self.is_detector()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePort {
    pub id: String,
    pub pulses: usize,
    pub column_offset: usize,
}

/// An obstacle position, inserted or not.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub id: String,
    pub label: String,
    pub inserted: bool,
    pub gate: Option<Vec<usize>>,
    pub terminal: Option<usize>,
}

/// Everything about a compiled circuit except the numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub n_bins: usize,
    pub sources: Vec<SourcePort>,
    pub terminals: Vec<Terminal>,
    pub probes: Vec<Probe>,
    pub terminal_reach: Vec<BTreeSet<Reach>>,
    /// `(source, offset)` pairs arriving at each obstacle position.
    pub probe_reach: Vec<BTreeSet<(usize, usize)>>,
}

impl Topology {
    pub fn n_columns(&self) -> usize {
        self.sources.iter().map(|s| s.pulses).sum()
    }

    pub fn terminal_index(&self, id_or_label: &str) -> Option<usize> {
        self.terminals
            .iter()
            .position(|t| t.id == id_or_label)
            .or_else(|| self.terminals.iter().position(|t| t.label == id_or_label))
    }

    pub fn source_index(&self, id: &str) -> Option<usize> {
        self.sources.iter().position(|s| s.id == id)
    }

    pub fn detectors(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.terminals.len()).filter(|&t| self.terminals[t].is_detector())
    }

    pub fn loss_terminals(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.terminals.len()).filter(|&t| self.terminals[t].is_loss())
    }

    pub fn row(&self, terminal: usize, bin: usize) -> usize {
        terminal * self.n_bins + bin
    }

    pub fn column(&self, source: usize, bin: usize) -> usize {
        self.sources[source].column_offset + bin
    }

    /// Delay offsets from `source` to `terminal`.
    pub fn offsets(&self, terminal: usize, source: usize) -> BTreeSet<usize> {
        self.terminal_reach[terminal]
            .iter()
            .filter(|r| r.origin == Origin::Source(source))
            .map(|r| r.offset)
            .collect()
    }

    /// True when every partial wave from `source` that can reach `terminal`
    /// has a pulse behind it at `bin`, i.e. the bin is not an edge of the train.
    pub fn is_interior(&self, terminal: usize, source: usize, bin: usize) -> bool {
        let offsets = self.offsets(terminal, source);
        let pulses = self.sources[source].pulses;
        !offsets.is_empty() && offsets.iter().all(|&d| bin >= d && bin - d < pulses)
    }

    /// Interior bins of `terminal` with respect to the first source.
    pub fn interior_bins(&self, terminal: usize) -> Vec<usize> {
        (0..self.n_bins).filter(|&b| self.is_interior(terminal, 0, b)).collect()
    }
}

/// Validated, time-unrolled linear form of a [`CircuitSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledCircuit {
    /// Rows `(terminal, bin)` in terminal-major order, columns `(source, pulse bin)`.
    pub unrolled_map: CMatrix,
    /// Amplitude incident on every obstacle position, rows `(probe, bin)`.
    pub probe_map: CMatrix,
    pub topology: Arc<Topology>,
}

impl CompiledCircuit {
    pub fn n_bins(&self) -> usize {
        self.topology.n_bins
    }

    pub fn terminals(&self) -> &[Terminal] {
        &self.topology.terminals
    }

    pub fn terminal_index(&self, id_or_label: &str) -> Option<usize> {
        self.topology.terminal_index(id_or_label)
    }

    pub fn loss_terminals(&self) -> Vec<usize> {
        self.topology.loss_terminals().collect()
    }

    /// Applies the unrolled map to a column vector of input amplitudes.
    pub fn apply(&self, input: &[C64]) -> Vec<C64> {
        mat_vec(&self.unrolled_map, input)
    }

    pub fn apply_probes(&self, input: &[C64]) -> Vec<C64> {
        mat_vec(&self.probe_map, input)
    }
}

fn mat_vec(m: &CMatrix, v: &[C64]) -> Vec<C64> {
    assert_eq!(m.ncols(), v.len(), "input length does not match the circuit columns");
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)] * v[c]).sum())
        .collect()
}

struct Wire {
    amp: CMatrix,
    reach: BTreeSet<Reach>,
}

/// Compiles `spec` into its unrolled map.
pub fn compile(spec: &CircuitSpec) -> Result<CompiledCircuit, CircuitError> {
    let layout = validate(spec)?;
    let n_bins = spec.n_bins;

    let mut sources = Vec::new();
    let mut source_of = HashMap::new();
    let mut offset = 0;
    let mut terminals = Vec::new();
    let mut terminal_of = HashMap::new();
    let mut probes = Vec::new();
    let mut probe_of = HashMap::new();
    for (i, e) in spec.elements.iter().enumerate() {
        match &e.kind {
            ElementKind::Source { pulses } => {
                source_of.insert(i, sources.len());
                sources.push(SourcePort { id: e.id.clone(), pulses: *pulses, column_offset: offset });
                offset += pulses;
            }
            ElementKind::Detector | ElementKind::Absorber => {
                terminal_of.insert(i, terminals.len());
                let kind = if e.kind == ElementKind::Detector {
                    TerminalKind::Detector
                } else {
                    TerminalKind::Absorber
                };
                terminals.push(Terminal { id: e.id.clone(), label: e.label().to_string(), kind });
            }
            ElementKind::Obstacle { inserted, gate } => {
                let probe = probes.len();
                probe_of.insert(i, probe);
                let terminal = inserted.then(|| {
                    terminal_of.insert(i, terminals.len());
                    terminals.push(Terminal {
                        id: e.id.clone(),
                        label: e.label().to_string(),
                        kind: TerminalKind::Loss { probe },
                    });
                    terminals.len() - 1
                });
                probes.push(Probe {
                    id: e.id.clone(),
                    label: e.label().to_string(),
                    inserted: *inserted,
                    gate: gate.clone(),
                    terminal,
                });
            }
            _ => {}
        }
    }
    let n_cols = offset;

    let mut unrolled = CMatrix::zeros(terminals.len() * n_bins, n_cols);
    let mut probe_map = CMatrix::zeros(probes.len() * n_bins, n_cols);
    let mut terminal_reach = vec![BTreeSet::new(); terminals.len()];
    let mut probe_reach = vec![BTreeSet::new(); probes.len()];
    let mut wires: HashMap<(usize, usize), Wire> = HashMap::new();

    for &i in &layout.order {
        let e = &spec.elements[i];
        let mut inputs: Vec<Wire> = layout.feeds[i]
            .iter()
            .map(|key| wires.remove(key).expect("wire consumed exactly once"))
            .collect();
        match &e.kind {
            ElementKind::Source { pulses } => {
                let s = source_of[&i];
                let mut amp = CMatrix::zeros(n_bins, n_cols);
                for b in 0..*pulses {
                    amp[(b, sources[s].column_offset + b)] = ONE;
                }
                let reach = BTreeSet::from([Reach { origin: Origin::Source(s), offset: 0, via_probe: false }]);
                wires.insert((i, 0), Wire { amp, reach });
            }
            ElementKind::BeamSplitter { matrix } | ElementKind::Multiport { matrix } => {
                for k in 0..matrix.nrows() {
                    let mut amp = CMatrix::zeros(n_bins, n_cols);
                    let mut reach = BTreeSet::new();
                    for (j, w) in inputs.iter().enumerate() {
                        let u = matrix[(k, j)];
                        if u != ZERO {
                            amp += &w.amp * u;
                            reach.extend(w.reach.iter().copied());
                        }
                    }
                    wires.insert((i, k), Wire { amp, reach });
                }
            }
            ElementKind::Delay { bins, phase } => {
                let w = inputs.pop().expect("one input");
                for r in &w.reach {
                    if let Origin::Source(s) = r.origin {
                        let last = sources[s].pulses - 1 + r.offset + bins;
                        if last >= n_bins {
                            return Err(CircuitError::BinOverflow { element: e.id.clone(), bin: last, n_bins });
                        }
                    }
                }
                let mut amp = CMatrix::zeros(n_bins, n_cols);
                for b in 0..n_bins - bins {
                    amp.row_mut(b + bins).copy_from(&w.amp.row(b));
                }
                if *phase != 0.0 {
                    amp *= linalg::phase(*phase);
                }
                let reach = w.reach.iter().map(|r| Reach { offset: r.offset + bins, ..*r }).collect();
                wires.insert((i, 0), Wire { amp, reach });
            }
            ElementKind::PhaseShift { angle } => {
                let mut w = inputs.pop().expect("one input");
                if *angle != 0.0 {
                    w.amp *= linalg::phase(*angle);
                }
                wires.insert((i, 0), w);
            }
            ElementKind::Obstacle { inserted, gate } => {
                let mut w = inputs.pop().expect("one input");
                let p = probe_of[&i];
                probe_map.rows_mut(p * n_bins, n_bins).copy_from(&w.amp);
                for r in &w.reach {
                    if let Origin::Source(s) = r.origin {
                        probe_reach[p].insert((s, r.offset));
                    }
                }
                let mut reach: BTreeSet<Reach> =
                    w.reach.iter().map(|r| Reach { via_probe: true, ..*r }).collect();
                reach.insert(Reach { origin: Origin::Probe(p), offset: 0, via_probe: true });
                if *inserted {
                    let t = terminal_of[&i];
                    for b in (0..n_bins).filter(|b| gate.as_ref().is_none_or(|g| g.contains(b))) {
                        unrolled.row_mut(t * n_bins + b).copy_from(&w.amp.row(b));
                        w.amp.row_mut(b).fill(ZERO);
                    }
                    terminal_reach[t] = reach.clone();
                }
                wires.insert((i, 0), Wire { amp: w.amp, reach });
            }
            ElementKind::Detector | ElementKind::Absorber => {
                let w = inputs.pop().expect("one input");
                let t = terminal_of[&i];
                unrolled.rows_mut(t * n_bins, n_bins).copy_from(&w.amp);
                terminal_reach[t] = w.reach;
            }
        }
    }
    debug_assert!(wires.is_empty());

    Ok(CompiledCircuit {
        unrolled_map: unrolled,
        probe_map,
        topology: Arc::new(Topology { n_bins, sources, terminals, probes, terminal_reach, probe_reach }),
    })
}

/// Collapses the circuit to its spatial (delay-free) multiport matrix.
///
/// Delays are treated as zero-length (their phase is kept), obstacles are
/// retracted and every source carries one bin. Rows follow terminal order and
/// columns follow source order.
pub fn circuit_spatial_unitary(spec: &CircuitSpec) -> Result<CMatrix, CircuitError> {
    let mut flat = spec.clone();
    flat.n_bins = 1;
    for e in &mut flat.elements {
        match &mut e.kind {
            ElementKind::Source { pulses } => *pulses = 1,
            ElementKind::Delay { bins, .. } => *bins = 0,
            ElementKind::Obstacle { inserted, .. } => *inserted = false,
            _ => {}
        }
    }
    let compiled = compile(&flat)?;
    let m = compiled.unrolled_map;
    if m.nrows() != m.ncols() {
        return Err(CircuitError::PortCountMismatch { inputs: m.ncols(), outputs: m.nrows() });
    }
    Ok(m)
}
