//! One photon spread over many time bins.
//!
//! A single photon needs no second quantization: its state is a complex
//! amplitude per `(mode, bin)` and linear optics acts on that vector directly.
//! Light reaching an obstacle is moved into an absorbed ledger rather than
//! discarded, so detection and absorption stay mutually exclusive outcomes
//! of one and the same photon.

use std::sync::Arc;

use crate::circuit::{CompiledCircuit, TerminalKind, Topology};
use crate::events::{ClickEvent, EventLog, ShotStream};
use crate::linalg::{C64, ZERO};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SinglePhotonError {
    #[error("a tensor-sum state needs at least one pulse")]
    ZeroPulses,
    #[error("wavefunction mode {mode} spans {bins} bins but source `{source_id}` has {capacity}")]
    BinOverflow { mode: usize, source_id: String, bins: usize, capacity: usize },
    #[error("wavefunction has {modes} modes but the circuit has {sources} sources")]
    ModeCount { modes: usize, sources: usize },
    #[error("wavefunction is not normalised (norm² = {0})")]
    NotNormalised(f64),
}

/// Amplitudes per `(mode, bin)` plus the amplitude absorbed at each loss terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonWavefunction {
    pub modes: Vec<String>,
    pub n_bins: usize,
    /// Mode-major, `mode * n_bins + bin`.
    pub amplitudes: Vec<C64>,
    /// `(loss terminal label, amplitude per bin)`.
    pub absorbed: Vec<(String, Vec<C64>)>,
}

impl PhotonWavefunction {
    pub fn amplitude(&self, mode: usize, bin: usize) -> C64 {
        self.amplitudes[mode * self.n_bins + bin]
    }

    /// Σ|amplitudes|² + Σ|absorbed|².
    pub fn norm_squared(&self) -> f64 {
        let live: f64 = self.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        let lost: f64 = self.absorbed.iter().flat_map(|(_, v)| v).map(|a| a.norm_sqr()).sum();
        live + lost
    }
}

/// `(1/√n) Σ_j a†_j |vac⟩`: one photon equally spread over bins `0..n`.
pub fn tensor_sum_state(n: usize) -> Result<PhotonWavefunction, SinglePhotonError> {
    if n == 0 {
        return Err(SinglePhotonError::ZeroPulses);
    }
    let a = C64::new(1.0 / (n as f64).sqrt(), 0.0);
    Ok(PhotonWavefunction { modes: vec!["input".into()], n_bins: n, amplitudes: vec![a; n], absorbed: Vec::new() })
}

/// Propagates `psi` through `circuit`. Mode `k` of `psi` feeds source `k`;
/// any remaining sources carry vacuum. The result has one mode per detector
/// and an absorbed entry per loss terminal.
pub fn evolve(circuit: &CompiledCircuit, psi: &PhotonWavefunction) -> Result<PhotonWavefunction, SinglePhotonError> {
    let topo = &circuit.topology;
    if psi.modes.len() > topo.sources.len() {
        return Err(SinglePhotonError::ModeCount { modes: psi.modes.len(), sources: topo.sources.len() });
    }
    let mut input = vec![ZERO; topo.n_columns()];
    for (m, _) in psi.modes.iter().enumerate() {
        let port = &topo.sources[m];
        for b in 0..psi.n_bins {
            let a = psi.amplitude(m, b);
            if a == ZERO {
                continue;
            }
            if b >= port.pulses {
                return Err(SinglePhotonError::BinOverflow {
                    mode: m,
                    source_id: port.id.clone(),
                    bins: psi.n_bins,
                    capacity: port.pulses,
                });
            }
            input[topo.column(m, b)] = a;
        }
    }
    let out = circuit.apply(&input);
    let n_bins = topo.n_bins;
    let mut modes = Vec::new();
    let mut amplitudes = Vec::new();
    let mut absorbed = psi.absorbed.clone();
    for (t, term) in topo.terminals.iter().enumerate() {
        let block = &out[t * n_bins..(t + 1) * n_bins];
        if term.is_detector() {
            modes.push(term.label.clone());
            amplitudes.extend_from_slice(block);
        } else {
            absorbed.push((term.label.clone(), block.to_vec()));
        }
    }
    Ok(PhotonWavefunction { modes, n_bins, amplitudes, absorbed })
}

/// One outcome of a single-photon run: a detector or a loss terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub terminal: usize,
    pub label: String,
    pub kind: TerminalKind,
    pub p: f64,
    pub per_bin: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    pub outcomes: Vec<Outcome>,
    /// One photon, one outcome per shot.
    pub exclusive: bool,
    pub topology: Arc<Topology>,
}

impl OutcomeDistribution {
    pub fn p(&self, label: &str) -> Option<f64> {
        self.outcomes.iter().find(|o| o.label == label).map(|o| o.p)
    }

    pub fn total(&self) -> f64 {
        self.outcomes.iter().map(|o| o.p).sum()
    }
}

/// Exact outcome probabilities for one photon.
pub fn propagate_photon(circuit: &CompiledCircuit, psi: &PhotonWavefunction) -> Result<OutcomeDistribution, SinglePhotonError> {
    let norm = psi.norm_squared();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(SinglePhotonError::NotNormalised(norm));
    }
    let topo = &circuit.topology;
    if psi.modes.len() > topo.sources.len() {
        return Err(SinglePhotonError::ModeCount { modes: psi.modes.len(), sources: topo.sources.len() });
    }
    let evolved = evolve(circuit, &PhotonWavefunction { absorbed: Vec::new(), ..psi.clone() })?;
    let n_bins = topo.n_bins;
    let mut detector_rows = evolved.amplitudes.chunks(n_bins);
    let mut absorbed_rows = evolved.absorbed.iter();
    let outcomes = topo
        .terminals
        .iter()
        .enumerate()
        .map(|(t, term)| {
            let block = if term.is_detector() {
                detector_rows.next().expect("detector block")
            } else {
                absorbed_rows.next().expect("absorbed block").1.as_slice()
            };
            let per_bin: Vec<f64> = block.iter().map(|a| a.norm_sqr()).collect();
            Outcome {
                terminal: t,
                label: term.label.clone(),
                kind: term.kind,
                p: per_bin.iter().sum(),
                per_bin,
            }
        })
        .collect();
    Ok(OutcomeDistribution { outcomes, exclusive: true, topology: Arc::clone(topo) })
}

/// Draws exactly one `(terminal, bin)` outcome per shot.
pub fn sample_outcomes(dist: &OutcomeDistribution, shots: u64, seed: u64) -> EventLog {
    let cells: Vec<(usize, usize, f64)> = dist
        .outcomes
        .iter()
        .flat_map(|o| o.per_bin.iter().enumerate().map(move |(b, &p)| (o.terminal, b, p)))
        .filter(|c| c.2 > 0.0)
        .collect();
    let total: f64 = cells.iter().map(|c| c.2).sum();
    let mut cumulative = Vec::with_capacity(cells.len());
    let mut acc = 0.0;
    for c in &cells {
        acc += c.2 / total;
        cumulative.push(acc);
    }
    let events = (0..shots)
        .filter_map(|shot| {
            let u = ShotStream::new(seed, shot).draw(0);
            let k = cumulative.partition_point(|&c| c <= u).min(cells.len().checked_sub(1)?);
            Some(ClickEvent { shot, terminal: cells[k].0, bin: cells[k].1 })
        })
        .collect();
    EventLog { shots, seed, events, topology: Arc::clone(&dist.topology) }
}

/// `½(1 + cos φ)` for a phase mismatch `φ = kδ − ωΔt` between the two partial waves.
pub fn detection_probability_formula(phase_mismatch: f64) -> f64 {
    0.5 * (1.0 + phase_mismatch.cos())
}

/// Coefficients `c_j` with `⊗_n |α⟩_n = Σ_j c_j (Q_N)^j |vac⟩`, where
/// `Q_N = N^{-1/2} Σ_n a†_n`. Since `Q_N` creates a photon in one normalised
/// mode carrying the whole train, `c_j = e^{−N|α|²/2} (√N α)^j / j!`.
pub fn expand_coherent_in_qn(alpha: C64, n: usize, j_max: usize) -> Vec<C64> {
    let n = n as f64;
    let beta = alpha * n.sqrt();
    let mut coeffs = Vec::with_capacity(j_max + 1);
    let mut c = C64::new((-n * alpha.norm_sqr() / 2.0).exp(), 0.0);
    for j in 0..=j_max {
        if j > 0 {
            c = c * beta / j as f64;
        }
        coeffs.push(c);
    }
    coeffs
}

/// The unnormalised form `N^{j/2} |α|^j / √(j!)`, kept to show that it does
/// not reproduce the coherent train.
pub fn uncorrected_qn_coefficients(alpha: C64, n: usize, j_max: usize) -> Vec<C64> {
    let x = (n as f64).sqrt() * alpha.norm();
    let mut coeffs = Vec::with_capacity(j_max + 1);
    let mut c = 1.0;
    for j in 0..=j_max {
        if j > 0 {
            c *= x / (j as f64).sqrt();
        }
        coeffs.push(C64::new(c, 0.0));
    }
    coeffs
}
