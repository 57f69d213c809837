//! Brute-force truncated Fock-space oracle.
//!
//! States live on all occupation vectors of `n_modes` modes with total photon
//! number at most `cutoff`. Passive optics conserves the total, so every
//! operation here is exact on the truncated space; the only approximation is
//! the preparation of states with unbounded photon number (coherent trains),
//! whose missing weight is carried along as `deficit`.
//!
//! Basis order is graded lexicographic: by total photon number, then by
//! occupation vector in descending lexicographic order. For two modes and
//! cutoff 2 that is `(0,0) (1,0) (0,1) (2,0) (1,1) (0,2)`.
//!
//! [`simulate_fock`] walks a [`CircuitSpec`] element by element on
//! `(wire, bin)` modes. It does not use the unrolled map, which is what makes
//! it useful as a cross-check.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::circuit::{self, CircuitError, CircuitSpec, ElementKind};
use crate::linalg::{self, CMatrix, C64, ONE, ZERO};
use crate::multiport::{self, MultiportError};

/// Largest basis the oracle will allocate.
pub const MAX_BASIS_DIMENSION: usize = 400_000;

/// Largest deficit accepted by [`prepare_coherent_train`].
pub const DEFAULT_MAX_DEFICIT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FockError {
    #[error("cutoff {cutoff} leaves a truncation deficit of {deficit:.3e} (limit {limit:.1e})")]
    CutoffTooSmall { cutoff: usize, deficit: f64, limit: f64 },
    #[error("{n_modes} modes at cutoff {cutoff} need {dimension} basis states (limit {MAX_BASIS_DIMENSION})")]
    StateTooLarge { n_modes: usize, cutoff: usize, dimension: u128 },
    #[error("two-mode matrix is not unitary (residual {0:.3e})")]
    NonUnitary(f64),
    #[error("mode {mode} is outside 0..{n_modes}")]
    ModeOutOfRange { mode: usize, n_modes: usize },
    #[error("a two-mode operation needs two distinct modes, got ({0}, {0})")]
    SameMode(usize),
    #[error("input state has {got} modes but the circuit has {expected} source bins")]
    ModeCount { expected: usize, got: usize },
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Multiport(#[from] MultiportError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockBasis {
    pub n_modes: usize,
    pub cutoff: usize,
    states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
}

impl FockBasis {
    pub fn new(n_modes: usize, cutoff: usize) -> Result<Self, FockError> {
        let dimension = Self::dimension_for(n_modes, cutoff);
        if dimension > MAX_BASIS_DIMENSION as u128 || cutoff > u8::MAX as usize {
            return Err(FockError::StateTooLarge { n_modes, cutoff, dimension });
        }
        let mut states = Vec::with_capacity(dimension as usize);
        let mut prefix = Vec::with_capacity(n_modes);
        for total in 0..=cutoff {
            if n_modes == 0 {
                if total == 0 {
                    states.push(Vec::new());
                }
                continue;
            }
            compositions(total, n_modes, &mut prefix, &mut states);
        }
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self { n_modes, cutoff, states, index })
    }

    /// `C(n_modes + cutoff, cutoff)`.
    pub fn dimension_for(n_modes: usize, cutoff: usize) -> u128 {
        let mut d: u128 = 1;
        for k in 1..=cutoff as u128 {
            d = d * (n_modes as u128 + k) / k;
        }
        d
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn occupation(&self, index: usize) -> &[u8] {
        &self.states[index]
    }

    pub fn index_of(&self, occupation: &[u8]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    fn check_mode(&self, mode: usize) -> Result<(), FockError> {
        if mode >= self.n_modes {
            return Err(FockError::ModeOutOfRange { mode, n_modes: self.n_modes });
        }
        Ok(())
    }
}

fn compositions(total: usize, parts: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if parts == 1 {
        prefix.push(total as u8);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first as u8);
        compositions(total - first, parts - 1, prefix, out);
        prefix.pop();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockStateVector {
    pub basis: Arc<FockBasis>,
    pub amplitudes: Vec<C64>,
    /// Weight lost to truncation at preparation; `norm² = 1 − deficit`.
    pub deficit: f64,
}

impl FockStateVector {
    pub fn vacuum(basis: Arc<FockBasis>) -> Self {
        let mut amplitudes = vec![ZERO; basis.dim()];
        amplitudes[0] = ONE;
        Self { basis, amplitudes, deficit: 0.0 }
    }

    /// A single basis state.
    pub fn from_occupation(basis: Arc<FockBasis>, occupation: &[u8]) -> Option<Self> {
        let i = basis.index_of(occupation)?;
        let mut amplitudes = vec![ZERO; basis.dim()];
        amplitudes[i] = ONE;
        Some(Self { basis, amplitudes, deficit: 0.0 })
    }

    pub fn n_modes(&self) -> usize {
        self.basis.n_modes
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`; both states must share a basis shape.
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.basis.dim(), other.basis.dim());
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|⟨a|b⟩|² / (⟨a|a⟩⟨b|b⟩)`.
    pub fn fidelity(&self, other: &Self) -> f64 {
        self.inner(other).norm_sqr() / (self.norm_squared() * other.norm_squared())
    }

    pub fn mean_photon_number(&self, mode: usize) -> f64 {
        self.weights().map(|(occ, w)| w * occ[mode] as f64).sum()
    }

    pub fn total_mean_photon_number(&self) -> f64 {
        self.weights().map(|(occ, w)| w * occ.iter().map(|&n| n as f64).sum::<f64>()).sum()
    }

    /// `P(n photons in mode)` for `n = 0..=cutoff`.
    pub fn photon_number_distribution(&self, mode: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.basis.cutoff + 1];
        for (occ, w) in self.weights() {
            p[occ[mode] as usize] += w;
        }
        p
    }

    fn weights(&self) -> impl Iterator<Item = (&[u8], f64)> + '_ {
        self.amplitudes.iter().enumerate().map(|(i, a)| (self.basis.occupation(i), a.norm_sqr()))
    }

    fn zeros_like(&self) -> Vec<C64> {
        vec![ZERO; self.amplitudes.len()]
    }
}

/// `P(Poisson(mean) > cutoff)`, summed from the tail side.
pub fn poisson_tail(mean: f64, cutoff: usize) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    let mut term = (-mean).exp();
    for k in 1..=cutoff {
        term *= mean / k as f64;
    }
    let mut tail = 0.0;
    let mut k = cutoff + 1;
    loop {
        term *= mean / k as f64;
        tail += term;
        if term < tail * 1e-17 || term == 0.0 {
            break;
        }
        k += 1;
    }
    tail
}

/// `⊗ |α⟩` on `pulse_modes`, failing when the deficit exceeds [`DEFAULT_MAX_DEFICIT`].
pub fn prepare_coherent_train(
    basis: &Arc<FockBasis>,
    alpha: C64,
    pulse_modes: &[usize],
) -> Result<FockStateVector, FockError> {
    prepare_coherent_train_with_budget(basis, alpha, pulse_modes, DEFAULT_MAX_DEFICIT)
}

pub fn prepare_coherent_train_with_budget(
    basis: &Arc<FockBasis>,
    alpha: C64,
    pulse_modes: &[usize],
    max_deficit: f64,
) -> Result<FockStateVector, FockError> {
    let modes: Vec<(usize, C64)> = pulse_modes.iter().map(|&m| (m, alpha)).collect();
    prepare_product_coherent(basis, &modes, max_deficit)
}

/// `⊗_k |α_k⟩` on the listed modes, vacuum elsewhere.
pub fn prepare_product_coherent(
    basis: &Arc<FockBasis>,
    modes: &[(usize, C64)],
    max_deficit: f64,
) -> Result<FockStateVector, FockError> {
    let mut alphas = vec![None; basis.n_modes];
    for &(m, a) in modes {
        basis.check_mode(m)?;
        alphas[m] = Some(a);
    }
    let fact: Vec<f64> = factorials(basis.cutoff);
    let amplitudes = basis
        .states
        .iter()
        .map(|occ| {
            let mut amp = ONE;
            for (m, &n) in occ.iter().enumerate() {
                match alphas[m] {
                    Some(a) => amp *= (-a.norm_sqr() / 2.0).exp() * a.powu(n as u32) / fact[n as usize].sqrt(),
                    None if n > 0 => return ZERO,
                    None => {}
                }
            }
            amp
        })
        .collect();
    let mean: f64 = modes.iter().map(|(_, a)| a.norm_sqr()).sum();
    let deficit = poisson_tail(mean, basis.cutoff);
    if deficit > max_deficit {
        return Err(FockError::CutoffTooSmall { cutoff: basis.cutoff, deficit, limit: max_deficit });
    }
    Ok(FockStateVector { basis: Arc::clone(basis), amplitudes, deficit })
}

/// `⊗_m a†_m |vac⟩`: one photon in each listed mode.
pub fn prepare_single_photons(basis: &Arc<FockBasis>, modes: &[usize]) -> Result<FockStateVector, FockError> {
    let mut state = FockStateVector::vacuum(Arc::clone(basis));
    for &m in modes {
        state = apply_creation(&state, m)?;
    }
    let total = modes.len();
    if total > basis.cutoff {
        return Err(FockError::CutoffTooSmall { cutoff: basis.cutoff, deficit: 1.0, limit: 0.0 });
    }
    let norm = state.norm_squared().sqrt();
    state.amplitudes.iter_mut().for_each(|a| *a /= norm);
    Ok(state)
}

/// `N^{-1/2} Σ_m a†_m |vac⟩` over the listed modes.
pub fn prepare_tensor_sum(basis: &Arc<FockBasis>, modes: &[usize]) -> Result<FockStateVector, FockError> {
    let vac = FockStateVector::vacuum(Arc::clone(basis));
    apply_q(&vac, modes)
}

/// `Σ_j c_j (Q_N)^j |vac⟩` with `Q_N = N^{-1/2} Σ_m a†_m` over `modes`.
pub fn reconstruct_from_qn(
    basis: &Arc<FockBasis>,
    modes: &[usize],
    coefficients: &[C64],
) -> Result<FockStateVector, FockError> {
    let mut power = FockStateVector::vacuum(Arc::clone(basis));
    let mut out = power.zeros_like();
    for (j, &c) in coefficients.iter().enumerate() {
        if j > 0 {
            power = apply_q(&power, modes)?;
        }
        for (o, p) in out.iter_mut().zip(&power.amplitudes) {
            *o += c * p;
        }
    }
    Ok(FockStateVector { basis: Arc::clone(basis), amplitudes: out, deficit: 0.0 })
}

fn apply_q(state: &FockStateVector, modes: &[usize]) -> Result<FockStateVector, FockError> {
    let scale = 1.0 / (modes.len() as f64).sqrt();
    let mut out = state.zeros_like();
    for &m in modes {
        let raised = apply_creation(state, m)?;
        for (o, r) in out.iter_mut().zip(&raised.amplitudes) {
            *o += r * scale;
        }
    }
    Ok(FockStateVector { basis: Arc::clone(&state.basis), amplitudes: out, deficit: state.deficit })
}

/// `a†_mode`; components pushed past the cutoff are dropped.
pub fn apply_creation(state: &FockStateVector, mode: usize) -> Result<FockStateVector, FockError> {
    let basis = &state.basis;
    basis.check_mode(mode)?;
    let mut out = state.zeros_like();
    let mut occ = Vec::with_capacity(basis.n_modes);
    for (i, &a) in state.amplitudes.iter().enumerate() {
        if a == ZERO {
            continue;
        }
        occ.clear();
        occ.extend_from_slice(basis.occupation(i));
        let n = occ[mode];
        occ[mode] = n + 1;
        if let Some(j) = basis.index_of(&occ) {
            out[j] += a * ((n as f64) + 1.0).sqrt();
        }
    }
    Ok(FockStateVector { basis: Arc::clone(basis), amplitudes: out, deficit: state.deficit })
}

/// Applies the passive two-mode unitary `u` to `modes`; `u[(k, j)]` sends
/// input `j` to output `k`, with index 0 standing for `modes.0`.
pub fn apply_two_mode_unitary(
    state: &FockStateVector,
    modes: (usize, usize),
    u: &CMatrix,
) -> Result<FockStateVector, FockError> {
    let basis = &state.basis;
    let (i, j) = modes;
    basis.check_mode(i)?;
    basis.check_mode(j)?;
    if i == j {
        return Err(FockError::SameMode(i));
    }
    let residual = linalg::unitarity_residual(u);
    if u.shape() != (2, 2) || !(residual < 1e-10) {
        return Err(FockError::NonUnitary(residual));
    }
    let table = TransferTable::new(u, basis.cutoff);
    let mut out = state.zeros_like();
    let mut occ = Vec::with_capacity(basis.n_modes);
    for (s, &a) in state.amplitudes.iter().enumerate() {
        if a == ZERO {
            continue;
        }
        occ.clear();
        occ.extend_from_slice(basis.occupation(s));
        let (p, q) = (occ[i] as usize, occ[j] as usize);
        if p + q == 0 {
            out[s] += a;
            continue;
        }
        for (r, &c) in table.get(p, q).iter().enumerate() {
            if c == ZERO {
                continue;
            }
            occ[i] = r as u8;
            occ[j] = (p + q - r) as u8;
            out[basis.index_of(&occ).expect("photon number is conserved")] += a * c;
        }
    }
    Ok(FockStateVector { basis: Arc::clone(basis), amplitudes: out, deficit: state.deficit })
}

/// Amplitudes `⟨r, p+q−r| U |p, q⟩` for every `p + q ≤ cutoff`.
struct TransferTable {
    rows: HashMap<(usize, usize), Vec<C64>>,
}

impl TransferTable {
    fn new(u: &CMatrix, cutoff: usize) -> Self {
        let fact = factorials(cutoff);
        let binom = |n: usize, k: usize| fact[n] / (fact[k] * fact[n - k]);
        let (u00, u01, u10, u11) = (u[(0, 0)], u[(0, 1)], u[(1, 0)], u[(1, 1)]);
        let mut rows = HashMap::new();
        for t in 1..=cutoff {
            for p in 0..=t {
                let q = t - p;
                // (u00 a† + u10 b†)^p (u01 a† + u11 b†)^q / √(p! q!)
                let mut out = vec![ZERO; t + 1];
                for a in 0..=p {
                    for b in 0..=q {
                        let c = u00.powu(a as u32) * u10.powu((p - a) as u32) * u01.powu(b as u32)
                            * u11.powu((q - b) as u32)
                            * (binom(p, a) * binom(q, b));
                        out[a + b] += c;
                    }
                }
                for (r, o) in out.iter_mut().enumerate() {
                    *o *= (fact[r] * fact[t - r] / (fact[p] * fact[q])).sqrt();
                }
                rows.insert((p, q), out);
            }
        }
        Self { rows }
    }

    fn get(&self, p: usize, q: usize) -> &[C64] {
        &self.rows[&(p, q)]
    }
}

/// `e^{iθ n}` on `mode`.
pub fn apply_phase(state: &FockStateVector, mode: usize, theta: f64) -> Result<FockStateVector, FockError> {
    let basis = &state.basis;
    basis.check_mode(mode)?;
    let phases: Vec<C64> = (0..=basis.cutoff).map(|n| linalg::phase(theta * n as f64)).collect();
    let amplitudes = state
        .amplitudes
        .iter()
        .enumerate()
        .map(|(i, &a)| a * phases[basis.occupation(i)[mode] as usize])
        .collect();
    Ok(FockStateVector { basis: Arc::clone(basis), amplitudes, deficit: state.deficit })
}

/// One outcome of a photon-number measurement at an absorber.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorberBranch {
    pub absorbed: usize,
    /// Probability of this branch, normalised over the branches.
    pub weight: f64,
    /// Post-measurement state with the absorbed mode emptied, normalised.
    pub state: FockStateVector,
}

/// Measures the photon number in `mode` and removes those photons.
/// Branch 0 is the interaction-free one.
pub fn apply_absorber(state: &FockStateVector, mode: usize) -> Result<Vec<AbsorberBranch>, FockError> {
    let basis = &state.basis;
    basis.check_mode(mode)?;
    let total = state.norm_squared();
    let mut branches: BTreeMap<usize, Vec<C64>> = BTreeMap::new();
    let mut occ = Vec::with_capacity(basis.n_modes);
    for (i, &a) in state.amplitudes.iter().enumerate() {
        if a == ZERO {
            continue;
        }
        occ.clear();
        occ.extend_from_slice(basis.occupation(i));
        let n = occ[mode] as usize;
        occ[mode] = 0;
        let j = basis.index_of(&occ).expect("removing photons stays in the basis");
        branches.entry(n).or_insert_with(|| state.zeros_like())[j] += a;
    }
    if branches.is_empty() {
        branches.insert(0, state.zeros_like());
    }
    Ok(branches
        .into_iter()
        .map(|(absorbed, mut amplitudes)| {
            let w: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
            if w > 0.0 {
                let norm = w.sqrt();
                amplitudes.iter_mut().for_each(|a| *a /= norm);
            }
            AbsorberBranch {
                absorbed,
                weight: if total > 0.0 { w / total } else { 0.0 },
                state: FockStateVector { basis: Arc::clone(basis), amplitudes, deficit: 0.0 },
            }
        })
        .collect())
}

/// Embeds `state` into a basis with `extra` additional vacuum modes appended.
pub fn extend_modes(state: &FockStateVector, extra: usize) -> Result<FockStateVector, FockError> {
    let old = &state.basis;
    let basis = Arc::new(FockBasis::new(old.n_modes + extra, old.cutoff)?);
    let mut amplitudes = vec![ZERO; basis.dim()];
    let mut occ = Vec::with_capacity(basis.n_modes);
    for (i, &a) in state.amplitudes.iter().enumerate() {
        occ.clear();
        occ.extend_from_slice(old.occupation(i));
        occ.resize(basis.n_modes, 0);
        amplitudes[basis.index_of(&occ).expect("same total photon number")] = a;
    }
    Ok(FockStateVector { basis, amplitudes, deficit: state.deficit })
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for k in 1..=n {
        f[k] = f[k - 1] * k as f64;
    }
    f
}

/// A terminal `(label, bin)` cell of the joint distribution.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OutcomeCell {
    pub terminal: usize,
    pub label: String,
    pub bin: usize,
    /// True for obstacles and absorbers.
    pub loss: bool,
}

/// Exact joint distribution of photon counts over every terminal cell.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    pub cells: Vec<OutcomeCell>,
    /// Count vectors aligned with `cells`, sorted; zero-probability outcomes omitted.
    pub outcomes: Vec<(Vec<u8>, f64)>,
    /// Truncation deficit of the input state.
    pub deficit: f64,
}

impl JointDistribution {
    pub fn total_probability(&self) -> f64 {
        self.outcomes.iter().map(|(_, p)| p).sum()
    }

    pub fn cell_index(&self, label: &str, bin: usize) -> Option<usize> {
        self.cells.iter().position(|c| c.label == label && c.bin == bin)
    }

    /// `P(counts satisfy pred)`.
    pub fn probability(&self, pred: impl Fn(&[u8]) -> bool) -> f64 {
        self.outcomes.iter().filter(|(k, _)| pred(k)).map(|(_, p)| p).sum()
    }

    /// `P(at least one photon in (label, bin))`; zero for cells light never reaches.
    pub fn p_click(&self, label: &str, bin: usize) -> f64 {
        match self.cell_index(label, bin) {
            Some(c) => self.probability(|k| k[c] > 0),
            None => 0.0,
        }
    }

    /// `P(n photons in (label, bin))`.
    pub fn p_count(&self, label: &str, bin: usize, n: u8) -> f64 {
        match self.cell_index(label, bin) {
            Some(c) => self.probability(|k| k[c] == n),
            None if n == 0 => self.total_probability(),
            None => 0.0,
        }
    }

    pub fn mean_count(&self, label: &str, bin: usize) -> f64 {
        match self.cell_index(label, bin) {
            Some(c) => self.outcomes.iter().map(|(k, p)| p * k[c] as f64).sum(),
            None => 0.0,
        }
    }

    fn cells_of<'a>(&'a self, label: &'a str) -> impl Iterator<Item = usize> + 'a {
        (0..self.cells.len()).filter(move |&c| self.cells[c].label == label)
    }

    /// `P(terminal `label` receives at least one photon in any bin)`.
    pub fn p_terminal(&self, label: &str) -> f64 {
        let cells: Vec<usize> = self.cells_of(label).collect();
        self.probability(|k| cells.iter().any(|&c| k[c] > 0))
    }

    /// `P(both terminals click in the same bin)`.
    pub fn same_bin_coincidence(&self, a: &str, b: &str) -> f64 {
        let pairs: Vec<(usize, usize)> = self
            .cells_of(a)
            .filter_map(|ca| self.cell_index(b, self.cells[ca].bin).map(|cb| (ca, cb)))
            .collect();
        self.probability(|k| pairs.iter().any(|&(ca, cb)| k[ca] > 0 && k[cb] > 0))
    }

    /// `P(both terminals click, in any bins)`.
    pub fn coincidence(&self, a: &str, b: &str) -> f64 {
        let ca: Vec<usize> = self.cells_of(a).collect();
        let cb: Vec<usize> = self.cells_of(b).collect();
        self.probability(|k| ca.iter().any(|&c| k[c] > 0) && cb.iter().any(|&c| k[c] > 0))
    }

    /// `P(some single cell holds two or more photons)`.
    pub fn p_bunched(&self) -> f64 {
        self.probability(|k| k.iter().any(|&n| n >= 2))
    }

    /// `label@bin=count` for every non-empty cell, joined by `;`, or `vacuum`.
    pub fn format_outcome(&self, counts: &[u8]) -> String {
        let mut s = String::new();
        for (cell, &n) in self.cells.iter().zip(counts) {
            if n > 0 {
                if !s.is_empty() {
                    s.push(';');
                }
                let _ = write!(s, "{}@{}={}", cell.label, cell.bin, n);
            }
        }
        if s.is_empty() {
            s.push_str("vacuum");
        }
        s
    }
}

enum Op {
    TwoMode { modes: (usize, usize), matrix: CMatrix },
    Phase { mode: usize, theta: f64 },
}

struct Plan {
    n_modes: usize,
    ops: Vec<Op>,
    cells: Vec<(OutcomeCell, usize)>,
}

/// Number of input modes [`simulate_fock`] expects: one per `(source, pulse bin)`,
/// sources in declaration order.
pub fn source_mode_count(spec: &CircuitSpec) -> usize {
    spec.elements
        .iter()
        .map(|e| match e.kind {
            ElementKind::Source { pulses } => pulses,
            _ => 0,
        })
        .sum()
}

/// Mode index of `(source id, bin)` in the input ordering of [`simulate_fock`].
pub fn source_mode(spec: &CircuitSpec, source_id: &str, bin: usize) -> Option<usize> {
    let mut offset = 0;
    for e in &spec.elements {
        if let ElementKind::Source { pulses } = e.kind {
            if e.id == source_id {
                return (bin < pulses).then_some(offset + bin);
            }
            offset += pulses;
        }
    }
    None
}

fn plan(spec: &CircuitSpec) -> Result<Plan, FockError> {
    let layout = circuit::validate(spec)?;
    let n_bins = spec.n_bins;
    let mut next_mode = 0;
    let mut source_offsets = HashMap::new();
    let mut terminal_order = HashMap::new();
    for (i, e) in spec.elements.iter().enumerate() {
        match &e.kind {
            ElementKind::Source { pulses } => {
                source_offsets.insert(i, next_mode);
                next_mode += pulses;
            }
            ElementKind::Detector | ElementKind::Absorber | ElementKind::Obstacle { inserted: true, .. } => {
                let t = terminal_order.len();
                terminal_order.insert(i, t);
            }
            _ => {}
        }
    }

    type Wire = BTreeMap<usize, usize>;
    let mut wires: HashMap<(usize, usize), Wire> = HashMap::new();
    let mut ops = Vec::new();
    let mut cells = Vec::new();
    for &i in &layout.order {
        let e = &spec.elements[i];
        let mut inputs: Vec<Wire> = layout.feeds[i]
            .iter()
            .map(|key| wires.remove(key).expect("wire consumed once"))
            .collect();
        let terminal = |bin: usize, loss: bool| OutcomeCell {
            terminal: terminal_order[&i],
            label: e.label().to_string(),
            bin,
            loss,
        };
        match &e.kind {
            ElementKind::Source { pulses } => {
                let offset = source_offsets[&i];
                wires.insert((i, 0), (0..*pulses).map(|b| (b, offset + b)).collect());
            }
            ElementKind::BeamSplitter { matrix } | ElementKind::Multiport { matrix } => {
                let n = matrix.nrows();
                let steps = if n == 2 {
                    None
                } else {
                    Some(multiport::reck_decompose(matrix, circuit::UNITARITY_TOLERANCE)?)
                };
                let mut outputs = vec![Wire::new(); n];
                let bins: std::collections::BTreeSet<usize> = inputs.iter().flat_map(|w| w.keys().copied()).collect();
                for b in bins {
                    let modes: Vec<usize> = inputs
                        .iter_mut()
                        .map(|w| {
                            w.remove(&b).unwrap_or_else(|| {
                                next_mode += 1;
                                next_mode - 1
                            })
                        })
                        .collect();
                    match &steps {
                        None => ops.push(Op::TwoMode { modes: (modes[0], modes[1]), matrix: matrix.clone() }),
                        Some(d) => {
                            for s in &d.steps {
                                ops.push(Op::TwoMode { modes: (modes[s.modes.0], modes[s.modes.1]), matrix: s.matrix.clone() });
                            }
                            for (k, p) in d.output_phases.iter().enumerate() {
                                if p.arg() != 0.0 {
                                    ops.push(Op::Phase { mode: modes[k], theta: p.arg() });
                                }
                            }
                        }
                    }
                    for (k, m) in modes.into_iter().enumerate() {
                        outputs[k].insert(b, m);
                    }
                }
                for (k, w) in outputs.into_iter().enumerate() {
                    wires.insert((i, k), w);
                }
            }
            ElementKind::Delay { bins, phase } => {
                let w = inputs.pop().expect("one input");
                let mut out = Wire::new();
                for (b, m) in w {
                    if b + bins >= n_bins {
                        return Err(CircuitError::BinOverflow { element: e.id.clone(), bin: b + bins, n_bins }.into());
                    }
                    if *phase != 0.0 {
                        ops.push(Op::Phase { mode: m, theta: *phase });
                    }
                    out.insert(b + bins, m);
                }
                wires.insert((i, 0), out);
            }
            ElementKind::PhaseShift { angle } => {
                let w = inputs.pop().expect("one input");
                if *angle != 0.0 {
                    ops.extend(w.values().map(|&m| Op::Phase { mode: m, theta: *angle }));
                }
                wires.insert((i, 0), w);
            }
            ElementKind::Obstacle { inserted, gate } => {
                let mut w = inputs.pop().expect("one input");
                if *inserted {
                    let blocked: Vec<usize> =
                        w.keys().copied().filter(|b| gate.as_ref().is_none_or(|g| g.contains(b))).collect();
                    for b in blocked {
                        let m = w.remove(&b).expect("present");
                        cells.push((terminal(b, true), m));
                    }
                }
                wires.insert((i, 0), w);
            }
            ElementKind::Detector | ElementKind::Absorber => {
                let w = inputs.pop().expect("one input");
                let loss = e.kind == ElementKind::Absorber;
                cells.extend(w.into_iter().map(|(b, m)| (terminal(b, loss), m)));
            }
        }
    }
    cells.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(Plan { n_modes: next_mode, ops, cells })
}

/// Runs `input` through `spec` on the truncated Fock space.
///
/// `input` has one mode per `(source, pulse bin)`, sources in declaration
/// order (see [`source_mode`]). Vacuum modes are added wherever a splitter
/// sees light on only some of its inputs in a bin. Obstacles and absorbers
/// are read out together with the detectors at the end, which gives the same
/// joint statistics as measuring them when the light arrives.
pub fn simulate_fock(spec: &CircuitSpec, input: &FockStateVector) -> Result<JointDistribution, FockError> {
    let expected = source_mode_count(spec);
    if input.n_modes() != expected {
        return Err(FockError::ModeCount { expected, got: input.n_modes() });
    }
    let plan = plan(spec)?;
    let dimension = FockBasis::dimension_for(plan.n_modes, input.basis.cutoff);
    if dimension > MAX_BASIS_DIMENSION as u128 {
        return Err(FockError::StateTooLarge { n_modes: plan.n_modes, cutoff: input.basis.cutoff, dimension });
    }
    let mut state = extend_modes(input, plan.n_modes - input.n_modes())?;
    for op in &plan.ops {
        state = match op {
            Op::TwoMode { modes, matrix } => apply_two_mode_unitary(&state, *modes, matrix)?,
            Op::Phase { mode, theta } => apply_phase(&state, *mode, *theta)?,
        };
    }
    let mut outcomes: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
    for (i, a) in state.amplitudes.iter().enumerate() {
        let w = a.norm_sqr();
        if w == 0.0 {
            continue;
        }
        let occ = state.basis.occupation(i);
        let key: Vec<u8> = plan.cells.iter().map(|(_, m)| occ[*m]).collect();
        *outcomes.entry(key).or_insert(0.0) += w;
    }
    Ok(JointDistribution {
        cells: plan.cells.into_iter().map(|(c, _)| c).collect(),
        outcomes: outcomes.into_iter().collect(),
        deficit: input.deficit,
    })
}
