//! Coherent pulse trains through a compiled circuit.
//!
//! A product of coherent states stays a product of coherent states under any
//! passive linear map, so propagation is a matrix-vector product on the
//! amplitudes and every output `(terminal, bin)` cell is an independent
//! Poisson mode with mean `|amplitude|²`. Detectors are threshold detectors:
//! a cell clicks with probability `1 − e^{−μ}`.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use rayon::prelude::*;

use crate::circuit::{self, CircuitError, CircuitSpec, CompiledCircuit, ElementKind, Origin, Topology};
use crate::events::{ClickEvent, EventLog, ShotStream};
use crate::linalg::{self, C64, ZERO};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoherentError {
    #[error("{pulses} pulses do not fit source `{source_id}` with {capacity} pulse bins")]
    BinOverflow { source_id: String, pulses: usize, capacity: usize },
    #[error("expected {expected} pulse phases, got {got}")]
    PhaseCount { expected: usize, got: usize },
    #[error("a pulse train needs at least one pulse")]
    ZeroPulses,
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("terminal {0} is not a detector")]
    NotADetector(String),
    #[error("bin {bin} is outside 0..{n_bins}")]
    BinOutOfRange { bin: usize, n_bins: usize },
    #[error("circuit has no obstacle or loss terminal")]
    NoLossTerminal,
    #[error("window cell at `{probe}` bin {bin} is not observed by an inserted obstacle")]
    WindowNotObservable { probe: String, bin: usize },
    #[error("circuit has no delay element to sweep")]
    NoDelay,
    #[error("fringe sweep needs exactly two detectors, found {0}")]
    DetectorCount(usize),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

/// `⊗_j |α e^{iφ_j}⟩` over `n_pulses` consecutive bins.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentTrain {
    pub n_pulses: usize,
    pub alpha: C64,
    pub phases: Vec<f64>,
}

impl CoherentTrain {
    pub fn new(n_pulses: usize, alpha: C64) -> Result<Self, CoherentError> {
        Self::with_phases(alpha, vec![0.0; n_pulses])
    }

    /// Real, positive `α = √μ`.
    pub fn from_mean_photon_number(n_pulses: usize, mean_photon_number: f64) -> Result<Self, CoherentError> {
        Self::new(n_pulses, C64::new(mean_photon_number.sqrt(), 0.0))
    }

    pub fn with_phases(alpha: C64, phases: Vec<f64>) -> Result<Self, CoherentError> {
        if phases.is_empty() {
            return Err(CoherentError::ZeroPulses);
        }
        Ok(Self { n_pulses: phases.len(), alpha, phases })
    }

    pub fn set_phases(&mut self, phases: Vec<f64>) -> Result<(), CoherentError> {
        if phases.len() != self.n_pulses {
            return Err(CoherentError::PhaseCount { expected: self.n_pulses, got: phases.len() });
        }
        self.phases = phases;
        Ok(())
    }

    pub fn amplitude(&self, pulse: usize) -> C64 {
        self.alpha * linalg::phase(self.phases[pulse])
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    pub fn total_mean_photon_number(&self) -> f64 {
        self.n_pulses as f64 * self.alpha.norm_sqr()
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self { alpha: self.alpha * c, ..self.clone() }
    }
}

/// Coherent amplitudes at every `(terminal, bin)` and at every obstacle position.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfiguration {
    /// Terminal-major, `terminal * n_bins + bin`.
    pub amplitudes: Vec<C64>,
    /// Amplitude incident on each obstacle position, probe-major.
    pub probe_amplitudes: Vec<C64>,
    /// Total input mean photon number.
    pub source_energy: f64,
    /// Index of the driven source.
    pub source: usize,
    pub topology: Arc<Topology>,
}

impl FieldConfiguration {
    pub fn n_bins(&self) -> usize {
        self.topology.n_bins
    }

    pub fn amplitude(&self, terminal: usize, bin: usize) -> C64 {
        self.amplitudes[self.topology.row(terminal, bin)]
    }

    pub fn mean_photon_number(&self, terminal: usize, bin: usize) -> f64 {
        self.amplitude(terminal, bin).norm_sqr()
    }

    pub fn probe_amplitude(&self, probe: usize, bin: usize) -> C64 {
        self.probe_amplitudes[probe * self.n_bins() + bin]
    }

    /// Σ|amplitude|² over every terminal and bin, losses included.
    pub fn output_energy(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn terminal_index(&self, id_or_label: &str) -> Option<usize> {
        self.topology.terminal_index(id_or_label)
    }
}

/// Propagates `train` from the first source of `circuit`; other sources carry vacuum.
pub fn propagate_coherent(circuit: &CompiledCircuit, train: &CoherentTrain) -> Result<FieldConfiguration, CoherentError> {
    propagate_from(circuit, 0, train)
}

/// Propagates `train` injected at source `source_id`.
pub fn propagate_coherent_from(
    circuit: &CompiledCircuit,
    source_id: &str,
    train: &CoherentTrain,
) -> Result<FieldConfiguration, CoherentError> {
    let s = circuit
        .topology
        .source_index(source_id)
        .ok_or_else(|| CoherentError::UnknownSource(source_id.to_string()))?;
    propagate_from(circuit, s, train)
}

fn propagate_from(circuit: &CompiledCircuit, source: usize, train: &CoherentTrain) -> Result<FieldConfiguration, CoherentError> {
    let topo = &circuit.topology;
    let port = &topo.sources[source];
    if train.n_pulses > port.pulses {
        return Err(CoherentError::BinOverflow {
            source_id: port.id.clone(),
            pulses: train.n_pulses,
            capacity: port.pulses,
        });
    }
    let mut input = vec![ZERO; topo.n_columns()];
    for j in 0..train.n_pulses {
        input[topo.column(source, j)] = train.amplitude(j);
    }
    Ok(FieldConfiguration {
        amplitudes: circuit.apply(&input),
        probe_amplitudes: circuit.apply_probes(&input),
        source_energy: train.total_mean_photon_number(),
        source,
        topology: Arc::clone(topo),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorModel {
    /// Click/no-click on Poisson light: `p = 1 − e^{−μ}`.
    Threshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickDistribution {
    /// Terminal-major click probability per `(terminal, bin)`.
    pub p_click: Vec<f64>,
    pub model: DetectorModel,
    pub topology: Arc<Topology>,
}

impl ClickDistribution {
    pub fn p(&self, terminal: usize, bin: usize) -> f64 {
        self.p_click[self.topology.row(terminal, bin)]
    }
}

/// Threshold-click probability for a Poisson mode of mean `mu`.
pub fn threshold_click_probability(mu: f64) -> f64 {
    -(-mu).exp_m1()
}

pub fn click_distribution(field: &FieldConfiguration) -> ClickDistribution {
    ClickDistribution {
        p_click: field.amplitudes.iter().map(|a| threshold_click_probability(a.norm_sqr())).collect(),
        model: DetectorModel::Threshold,
        topology: Arc::clone(&field.topology),
    }
}

/// Samples `shots` independent shots; each cell clicks with its own probability.
pub fn sample_clicks(dist: &ClickDistribution, shots: u64, seed: u64) -> EventLog {
    let n_bins = dist.topology.n_bins;
    let active: Vec<(usize, f64)> = dist
        .p_click
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, p)| p > 0.0)
        .collect();
    let events: Vec<ClickEvent> = (0..shots)
        .into_par_iter()
        .flat_map_iter(|shot| {
            let mut stream = ShotStream::new(seed, shot);
            active.iter().filter_map(move |&(cell, p)| {
                (stream.draw(cell as u64) < p).then_some(ClickEvent {
                    shot,
                    terminal: cell / n_bins,
                    bin: cell % n_bins,
                })
            })
        })
        .collect();
    EventLog { shots, seed, events, topology: Arc::clone(&dist.topology) }
}

/// Which obstacle cells count as "an interaction" for a given trigger click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowPolicy {
    /// Every obstacle position (inserted or not) visited by the partner
    /// pulses, i.e. the pulses whose partial wave reached the trigger through
    /// an obstacle-bearing arm. For the two-arm interferometer this is the one
    /// blocked slice of pulse `j−1`; for the three-arm cascade it covers both
    /// probed arms of pulses `j−1` and `j−2`.
    #[default]
    PartnerPulses,
    /// Only inserted obstacle cells whose light would have reached the
    /// trigger cell had the obstacle been retracted.
    BlockedSlice,
}

impl WindowPolicy {
    pub fn name(self) -> &'static str {
        match self {
            WindowPolicy::PartnerPulses => "partner_pulses",
            WindowPolicy::BlockedSlice => "blocked_slice",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProbeCell {
    pub probe: usize,
    pub bin: usize,
}

/// A detector click used as the conditioning event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trigger {
    pub terminal: usize,
    pub bin: usize,
}

/// Obstacle cells in the interaction window of `trigger` for light from `source`.
pub fn interaction_window(
    topology: &Topology,
    trigger: Trigger,
    source: usize,
    policy: WindowPolicy,
) -> Result<Vec<ProbeCell>, CoherentError> {
    let n_bins = topology.n_bins;
    let Some(terminal) = topology.terminals.get(trigger.terminal) else {
        return Err(CoherentError::NotADetector(trigger.terminal.to_string()));
    };
    if !terminal.is_detector() {
        return Err(CoherentError::NotADetector(terminal.id.clone()));
    }
    if trigger.bin >= n_bins {
        return Err(CoherentError::BinOutOfRange { bin: trigger.bin, n_bins });
    }
    let reach = &topology.terminal_reach[trigger.terminal];
    let mut cells = BTreeSet::new();
    match policy {
        WindowPolicy::PartnerPulses => {
            let pulses = topology.sources[source].pulses;
            let partners: BTreeSet<usize> = reach
                .iter()
                .filter(|r| r.origin == Origin::Source(source) && r.via_probe && r.offset <= trigger.bin)
                .map(|r| trigger.bin - r.offset)
                .filter(|&p| p < pulses)
                .collect();
            for (probe, arrivals) in topology.probe_reach.iter().enumerate() {
                for &(s, offset) in arrivals.iter().filter(|(s, _)| *s == source) {
                    debug_assert_eq!(s, source);
                    for &p in &partners {
                        if p + offset < n_bins {
                            cells.insert(ProbeCell { probe, bin: p + offset });
                        }
                    }
                }
            }
        }
        WindowPolicy::BlockedSlice => {
            for r in reach {
                let Origin::Probe(probe) = r.origin else { continue };
                let info = &topology.probes[probe];
                if !info.inserted || r.offset > trigger.bin {
                    continue;
                }
                let bin = trigger.bin - r.offset;
                if info.gate.as_ref().is_none_or(|g| g.contains(&bin)) {
                    cells.insert(ProbeCell { probe, bin });
                }
            }
        }
    }
    Ok(cells.into_iter().collect())
}

/// `P(no photon at the obstacle window | click at trigger)` using [`WindowPolicy::default`].
pub fn conditional_no_interaction(field: &FieldConfiguration, trigger: Trigger) -> Result<f64, CoherentError> {
    conditional_no_interaction_with(field, trigger, WindowPolicy::default())
}

/// Closed form: cells are independent Poisson modes, so conditioning on the
/// trigger leaves `Π e^{−μ}` over the window.
pub fn conditional_no_interaction_with(
    field: &FieldConfiguration,
    trigger: Trigger,
    policy: WindowPolicy,
) -> Result<f64, CoherentError> {
    let topo = &field.topology;
    if topo.probes.is_empty() {
        return Err(CoherentError::NoLossTerminal);
    }
    let window = interaction_window(topo, trigger, field.source, policy)?;
    if !topo.probes.iter().any(|p| p.inserted) {
        // Nothing in the arms can absorb.
        return Ok(1.0);
    }
    let mu: f64 = window.iter().map(|c| field.probe_amplitude(c.probe, c.bin).norm_sqr()).sum();
    Ok((-mu).exp())
}

/// Monte-Carlo estimate of a conditional probability with its binomial error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub trials: u64,
    pub successes: u64,
    pub sigma: f64,
}

/// Pools every trigger cell: among shots where a trigger clicked, the fraction
/// with no click in that trigger's window. All window cells must be inserted
/// obstacles, otherwise the log cannot observe them.
pub fn estimate_conditional_no_interaction(
    log: &EventLog,
    triggers: &[Trigger],
    source: usize,
    policy: WindowPolicy,
) -> Result<McEstimate, CoherentError> {
    let topo = &log.topology;
    let n_bins = topo.n_bins;
    let mut windows = Vec::with_capacity(triggers.len());
    for &t in triggers {
        let mut cells = Vec::new();
        for c in interaction_window(topo, t, source, policy)? {
            let probe = &topo.probes[c.probe];
            let observed = probe.inserted && probe.gate.as_ref().is_none_or(|g| g.contains(&c.bin));
            match probe.terminal {
                Some(term) if observed => cells.push(term * n_bins + c.bin),
                _ => return Err(CoherentError::WindowNotObservable { probe: probe.id.clone(), bin: c.bin }),
            }
        }
        windows.push((t.terminal * n_bins + t.bin, cells));
    }
    let (mut trials, mut successes) = (0u64, 0u64);
    for (_, events) in log.by_shot() {
        let clicked: HashSet<usize> = events.iter().map(|e| e.terminal * n_bins + e.bin).collect();
        for (trigger, window) in &windows {
            if clicked.contains(trigger) {
                trials += 1;
                if !window.iter().any(|c| clicked.contains(c)) {
                    successes += 1;
                }
            }
        }
    }
    let value = if trials == 0 { f64::NAN } else { successes as f64 / trials as f64 };
    let sigma = if trials == 0 { f64::NAN } else { (value * (1.0 - value) / trials as f64).sqrt() };
    Ok(McEstimate { value, trials, successes, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringePoint {
    pub phase: f64,
    pub p_d1: f64,
    pub p_d2: f64,
}

/// Sweeps the propagation phase of the first delay element.
pub fn fringe_sweep(spec: &CircuitSpec, phase_values: &[f64]) -> Result<Vec<FringePoint>, CoherentError> {
    let delay = spec
        .elements
        .iter()
        .find(|e| matches!(e.kind, ElementKind::Delay { .. }))
        .ok_or(CoherentError::NoDelay)?;
    fringe_sweep_on(spec, &delay.id.clone(), phase_values)
}

/// Normalised intensity at the first two detectors on an interior bin, as
/// the propagation phase of delay `delay_id` is swept.
pub fn fringe_sweep_on(spec: &CircuitSpec, delay_id: &str, phase_values: &[f64]) -> Result<Vec<FringePoint>, CoherentError> {
    let mut spec = spec.clone();
    if !spec.set_delay_phase(delay_id, 0.0) {
        return Err(CoherentError::NoDelay);
    }
    let mut points = Vec::with_capacity(phase_values.len());
    for &phase in phase_values {
        spec.set_delay_phase(delay_id, phase);
        let circuit = circuit::compile(&spec)?;
        let detectors: Vec<usize> = circuit.topology.detectors().collect();
        let [d1, d2] = detectors[..] else {
            return Err(CoherentError::DetectorCount(detectors.len()));
        };
        let pulses = circuit.topology.sources[0].pulses;
        let field = propagate_coherent(&circuit, &CoherentTrain::new(pulses, C64::new(1.0, 0.0))?)?;
        let bin = central_interior_bin(&circuit.topology, &[d1, d2]).ok_or(CoherentError::BinOutOfRange {
            bin: 0,
            n_bins: circuit.n_bins(),
        })?;
        let i1 = field.mean_photon_number(d1, bin);
        let i2 = field.mean_photon_number(d2, bin);
        points.push(FringePoint { phase, p_d1: i1 / (i1 + i2), p_d2: i2 / (i1 + i2) });
    }
    Ok(points)
}

/// Middle bin that is interior for all of `terminals`.
pub fn central_interior_bin(topology: &Topology, terminals: &[usize]) -> Option<usize> {
    let bins: Vec<usize> = (0..topology.n_bins)
        .filter(|&b| terminals.iter().all(|&t| topology.is_interior(t, 0, b)))
        .collect();
    bins.get(bins.len() / 2).copied()
}

/// `⟨a|b⟩ = exp(−(|a|² + |b|²)/2 + a*·b)` for coherent states.
pub fn coherent_overlap(a: C64, b: C64) -> C64 {
    (C64::new(-(a.norm_sqr() + b.norm_sqr()) / 2.0, 0.0) + a.conj() * b).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::CircuitSpec;
    use std::f64::consts::PI;

    fn fig2(n: usize, blocked: bool) -> CompiledCircuit {
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
        circuit::compile(&c).unwrap()
    }

    #[test]
    fn vacuum_train_gives_zero_field() {
        let c = fig2(3, true);
        let f = propagate_coherent(&c, &CoherentTrain::new(3, ZERO).unwrap()).unwrap();
        assert!(f.amplitudes.iter().all(|a| *a == ZERO));
    }

    #[test]
    fn train_longer_than_source_overflows() {
        let c = fig2(3, false);
        let err = propagate_coherent(&c, &CoherentTrain::new(4, C64::new(1.0, 0.0)).unwrap());
        assert!(matches!(err, Err(CoherentError::BinOverflow { pulses: 4, capacity: 3, .. })));
    }

    #[test]
    fn phases_must_match_pulses() {
        let mut t = CoherentTrain::new(3, C64::new(1.0, 0.0)).unwrap();
        assert!(matches!(t.set_phases(vec![0.0; 2]), Err(CoherentError::PhaseCount { expected: 3, got: 2 })));
        assert!(matches!(CoherentTrain::new(0, ZERO), Err(CoherentError::ZeroPulses)));
    }

    #[test]
    fn click_probabilities() {
        assert_eq!(threshold_click_probability(0.0), 0.0);
        assert!((threshold_click_probability(0.1) - 0.095_162_581_964_040_43).abs() < 1e-15);
        assert_eq!(threshold_click_probability(1e6), 1.0);
    }

    #[test]
    fn sampling_edge_cases() {
        let c = fig2(2, false);
        let f = propagate_coherent(&c, &CoherentTrain::new(2, ZERO).unwrap()).unwrap();
        let log = sample_clicks(&click_distribution(&f), 100, 1);
        assert!(log.events.is_empty());

        let mut d = click_distribution(&f);
        d.p_click[4] = 1.0;
        let log = sample_clicks(&d, 10, 9);
        assert_eq!(log.events.len(), 10);
        assert!(log.events.iter().all(|e| e.terminal == 1 && e.bin == 1));
    }

    #[test]
    fn sampling_is_reproducible() {
        let c = fig2(4, true);
        let f = propagate_coherent(&c, &CoherentTrain::from_mean_photon_number(4, 0.5).unwrap()).unwrap();
        let d = click_distribution(&f);
        assert_eq!(sample_clicks(&d, 2000, 5), sample_clicks(&d, 2000, 5));
        assert_ne!(sample_clicks(&d, 2000, 5).events, sample_clicks(&d, 2000, 6).events);
    }

    #[test]
    fn blocked_window_is_previous_pulse() {
        let c = fig2(5, true);
        let d2 = c.terminal_index("D2").unwrap();
        for policy in [WindowPolicy::PartnerPulses, WindowPolicy::BlockedSlice] {
            let w = interaction_window(&c.topology, Trigger { terminal: d2, bin: 3 }, 0, policy).unwrap();
            assert_eq!(w, vec![ProbeCell { probe: 0, bin: 2 }]);
        }
        // Edge bin 0 has no partner pulse.
        let w = interaction_window(&c.topology, Trigger { terminal: d2, bin: 0 }, 0, WindowPolicy::PartnerPulses).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn conditional_errors_and_open_case() {
        let c = fig2(3, false);
        let f = propagate_coherent(&c, &CoherentTrain::from_mean_photon_number(3, 0.1).unwrap()).unwrap();
        assert_eq!(conditional_no_interaction(&f, Trigger { terminal: 1, bin: 1 }).unwrap(), 1.0);
        let o = c.topology.terminals.len();
        assert!(matches!(
            conditional_no_interaction(&f, Trigger { terminal: o, bin: 1 }),
            Err(CoherentError::NotADetector(_))
        ));

        let mut spec = CircuitSpec::new(2);
        spec.source("a", 2).detector("d", "D", "a");
        let c = circuit::compile(&spec).unwrap();
        let f = propagate_coherent(&c, &CoherentTrain::new(2, C64::new(1.0, 0.0)).unwrap()).unwrap();
        assert_eq!(
            conditional_no_interaction(&f, Trigger { terminal: 0, bin: 0 }),
            Err(CoherentError::NoLossTerminal)
        );
    }

    #[test]
    fn overlap_values() {
        let a = C64::new(0.1f64.sqrt(), 0.0);
        assert!((coherent_overlap(a, a) - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((coherent_overlap(a, -a).norm() - (-0.2f64).exp()).abs() < 1e-15);
        let b = C64::new(0.3, -0.4);
        assert!((coherent_overlap(ZERO, b) - C64::new((-0.125f64).exp(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn fringe_endpoints() {
        let mut spec = CircuitSpec::new(5);
        spec.source("laser", 4)
            .source("vac", 4)
            .beam_splitter("bs1", ["laser", "vac"])
            .delay("delay_l", 1, 0.0, "bs1:1")
            .phase_shift("phase_l", PI, "delay_l")
            .beam_splitter("bs2", ["bs1:0", "phase_l"])
            .detector("d1", "D1", "bs2:0")
            .detector("d2", "D2", "bs2:1");
        let pts = fringe_sweep(&spec, &[0.0, PI / 2.0, PI]).unwrap();
        assert!((pts[0].p_d1 - 1.0).abs() < 1e-12 && pts[0].p_d2.abs() < 1e-12);
        assert!((pts[1].p_d1 - 0.5).abs() < 1e-12);
        assert!(pts[2].p_d1.abs() < 1e-12 && (pts[2].p_d2 - 1.0).abs() < 1e-12);
    }
}
