//! Multiport splitters: the tritter, triangular two-mode decompositions and
//! phase-insensitive comparison of circuits with target matrices.
//!
//! A [`Decomposition`] is read in cascade order: `steps[0]` acts on the light
//! first and the diagonal `output_phases` act last, so
//! `U = diag(output_phases) · S_K ⋯ S_1`.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::circuit::{circuit_spatial_unitary, CircuitError, CircuitSpec};
use crate::linalg::{self, CMatrix, C64, ONE, ZERO};

/// Largest matrix accepted by [`reck_decompose`].
pub const MAX_DIMENSION: usize = 12;

/// Entries below this magnitude are treated as already nulled.
const NULL_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MultiportError {
    #[error("matrix is not unitary (residual {residual:.3e} > {tol:.1e})")]
    NonUnitaryInput { residual: f64, tol: f64 },
    #[error("dimension {0} exceeds the supported maximum of {MAX_DIMENSION}")]
    DimensionTooLarge(usize),
    #[error("dimension {0} is below 2")]
    DimensionTooSmall(usize),
    #[error("circuit is {circuit}x{circuit} but the target is {rows}x{cols}")]
    DimensionMismatch { circuit: usize, rows: usize, cols: usize },
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

/// The three-way splitter
///
/// ```text
/// ⎡ 1/√2   i/2   −1/2 ⎤
/// ⎢ i/√2   1/2    i/2 ⎥
/// ⎣  0    i/√2   1/√2 ⎦
/// ```
pub fn tritter() -> CMatrix {
    let r = C64::new(FRAC_1_SQRT_2, 0.0);
    let ir = C64::new(0.0, FRAC_1_SQRT_2);
    let h = C64::new(0.5, 0.0);
    let ih = C64::new(0.0, 0.5);
    linalg::from_rows(&[&[r, ih, -h], &[ir, h, ih], &[ZERO, ir, r]])
}

/// A 2×2 unitary acting on modes `modes.0 < modes.1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeOp {
    pub modes: (usize, usize),
    /// Row/column 0 is `modes.0`.
    pub matrix: CMatrix,
    pub position: usize,
}

impl TwoModeOp {
    /// The op as an `n × n` matrix.
    pub fn embed(&self, n: usize) -> CMatrix {
        let mut m = CMatrix::identity(n, n);
        let (i, j) = self.modes;
        m[(i, i)] = self.matrix[(0, 0)];
        m[(i, j)] = self.matrix[(0, 1)];
        m[(j, i)] = self.matrix[(1, 0)];
        m[(j, j)] = self.matrix[(1, 1)];
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub n: usize,
    pub steps: Vec<TwoModeOp>,
    pub output_phases: Vec<C64>,
}

/// Factors `u` into at most `n(n−1)/2` nearest-neighbour two-mode ops and a
/// diagonal, nulling the strictly lower triangle row by row from the bottom.
pub fn reck_decompose(u: &CMatrix, tol: f64) -> Result<Decomposition, MultiportError> {
    let n = u.nrows();
    if u.ncols() != n {
        return Err(MultiportError::NonUnitaryInput { residual: f64::INFINITY, tol });
    }
    if n < 2 {
        return Err(MultiportError::DimensionTooSmall(n));
    }
    if n > MAX_DIMENSION {
        return Err(MultiportError::DimensionTooLarge(n));
    }
    let residual = linalg::unitarity_residual(u);
    if !(residual < tol) {
        return Err(MultiportError::NonUnitaryInput { residual, tol });
    }

    // Right-multiply by column rotations G until W = U·G_1⋯G_K is diagonal;
    // then U = W · G_K† ⋯ G_1† and G_1† is the first op the light meets.
    let mut w = u.clone();
    let mut rotations = Vec::new();
    for r in (1..n).rev() {
        for c in 0..r {
            let a = w[(r, c)];
            if a.norm() <= NULL_EPS {
                continue;
            }
            let b = w[(r, c + 1)];
            let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let g = linalg::from_rows(&[&[b / norm, a.conj() / norm], &[-a / norm, b.conj() / norm]]);
            let op = TwoModeOp { modes: (c, c + 1), matrix: g, position: 0 };
            w = &w * op.embed(n);
            w[(r, c)] = ZERO;
            rotations.push(op);
        }
    }
    let steps = rotations
        .into_iter()
        .enumerate()
        .map(|(position, op)| TwoModeOp { matrix: op.matrix.adjoint(), position, ..op })
        .collect();
    let output_phases = (0..n).map(|k| w[(k, k)]).collect();
    Ok(Decomposition { n, steps, output_phases })
}

/// `diag(output_phases) · S_K ⋯ S_1`.
pub fn recompose(d: &Decomposition) -> CMatrix {
    let mut m = CMatrix::identity(d.n, d.n);
    for step in &d.steps {
        m = step.embed(d.n) * m;
    }
    for (k, &p) in d.output_phases.iter().enumerate() {
        m.row_mut(k).iter_mut().for_each(|z| *z *= p);
    }
    m
}

/// Haar-distributed `n × n` unitary from a seeded stream.
pub fn haar_random_unitary(n: usize, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * FRAC_1_SQRT_2
    });
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for k in 0..n {
        let d = r[(k, k)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        q.column_mut(k).iter_mut().for_each(|z| *z *= ph);
    }
    q
}

/// Result of a phase-insensitive comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// `‖L·U·R − target‖_F` after phase fixing.
    pub distance: f64,
    pub left_phases: Vec<C64>,
    pub right_phases: Vec<C64>,
}

/// Compares the spatial unitary of `spec` with `target` up to diagonal
/// input and output phases.
pub fn verify_cascade_equivalence(spec: &CircuitSpec, target: &CMatrix) -> Result<EquivalenceReport, MultiportError> {
    let u = circuit_spatial_unitary(spec)?;
    if target.shape() != u.shape() {
        return Err(MultiportError::DimensionMismatch { circuit: u.nrows(), rows: target.nrows(), cols: target.ncols() });
    }
    Ok(fix_phases(&u, target))
}

/// Finds unit-modulus diagonals `L`, `R` bringing `u` close to `target`.
///
/// Phases are first fixed on the first entry of each row and column where
/// both matrices are non-negligible, walking outward from `L_0 = 1`; a few
/// alternating least-squares sweeps then settle any remaining freedom.
pub fn fix_phases(u: &CMatrix, target: &CMatrix) -> EquivalenceReport {
    let (n, m) = u.shape();
    let tol = 1e-12;
    let unit = |z: C64| if z.norm() > 0.0 { z / z.norm() } else { ONE };
    let mut left: Vec<Option<C64>> = vec![None; n];
    let mut right: Vec<Option<C64>> = vec![None; m];
    if n > 0 {
        left[0] = Some(ONE);
    }
    let mut changed = true;
    while changed {
        changed = false;
        for k in 0..n {
            for j in 0..m {
                if u[(k, j)].norm() <= tol || target[(k, j)].norm() <= tol {
                    continue;
                }
                let ratio = unit(target[(k, j)] / u[(k, j)]);
                match (left[k], right[j]) {
                    (Some(l), None) => {
                        right[j] = Some(ratio / l);
                        changed = true;
                    }
                    (None, Some(r)) => {
                        left[k] = Some(ratio / r);
                        changed = true;
                    }
                    _ => {}
                }
            }
        }
        if !changed {
            if let Some(k) = left.iter().position(Option::is_none) {
                left[k] = Some(ONE);
                changed = true;
            }
        }
    }
    let mut l: Vec<C64> = left.into_iter().map(|p| p.unwrap_or(ONE)).collect();
    let mut r: Vec<C64> = right.into_iter().map(|p| p.unwrap_or(ONE)).collect();
    let distance = |l: &[C64], r: &[C64]| -> f64 {
        let mut acc = 0.0;
        for k in 0..n {
            for j in 0..m {
                acc += (l[k] * u[(k, j)] * r[j] - target[(k, j)]).norm_sqr();
            }
        }
        acc.sqrt()
    };
    let mut best = distance(&l, &r);
    for _ in 0..20 {
        for (k, lk) in l.iter_mut().enumerate() {
            *lk = unit((0..m).map(|j| target[(k, j)] * (u[(k, j)] * r[j]).conj()).sum());
        }
        for (j, rj) in r.iter_mut().enumerate() {
            *rj = unit((0..n).map(|k| target[(k, j)] * (l[k] * u[(k, j)]).conj()).sum());
        }
        let d = distance(&l, &r);
        if d >= best - 1e-16 {
            best = best.min(d);
            break;
        }
        best = d;
    }
    EquivalenceReport { distance: distance(&l, &r).min(best), left_phases: l, right_phases: r }
}

/// The second half of the three-arm cascade as a stand-alone circuit:
/// inputs `(s, l, m)`, a quarter-wave phase on `s`, a splitter on `(l, m)`
/// giving `(b, e)` and a splitter on `(s, e)` giving `(c, d)`. Outputs are
/// declared in the order `c, d, b`.
pub fn cascade_combiner_spec() -> CircuitSpec {
    let mut c = CircuitSpec::new(1);
    c.source("s", 1)
        .source("l", 1)
        .source("m", 1)
        .phase_shift("phase_s", std::f64::consts::FRAC_PI_2, "s")
        .beam_splitter("bs3", ["l", "m"])
        .beam_splitter("bs4", ["phase_s", "bs3:1"])
        .detector("c", "c", "bs4:0")
        .detector("d", "d", "bs4:1")
        .detector("b", "b", "bs3:0");
    c
}

/// Single multiport element with matrix `u`, one source per input.
pub fn direct_multiport_spec(u: &CMatrix) -> CircuitSpec {
    let n = u.nrows();
    let mut c = CircuitSpec::new(1);
    let ids: Vec<String> = (0..n).map(|k| format!("in{k}")).collect();
    for id in &ids {
        c.source(id, 1);
    }
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    c.multiport("u", u.clone(), &refs);
    for k in 0..n {
        c.detector(&format!("out{k}"), &format!("out{k}"), &format!("u:{k}"));
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::I;

    #[test]
    fn tritter_entries_and_unitarity() {
        let u = tritter();
        assert!(linalg::unitarity_residual(&u) < 1e-15);
        assert_eq!(u[(0, 0)], C64::new(FRAC_1_SQRT_2, 0.0));
        assert_eq!(u[(1, 0)], C64::new(0.0, FRAC_1_SQRT_2));
        assert_eq!(u[(2, 0)], ZERO);
        let out = &u * nalgebra::DVector::from_vec(vec![C64::new(0.3, 0.1), ZERO, ZERO]);
        assert!((out[1] - I * C64::new(0.3, 0.1) * FRAC_1_SQRT_2).norm() < 1e-16);
    }

    #[test]
    fn identity_decomposes_to_nothing() {
        let d = reck_decompose(&CMatrix::identity(4, 4), 1e-10).unwrap();
        assert!(d.steps.is_empty());
        assert!(d.output_phases.iter().all(|&p| p == ONE));
        assert_eq!(recompose(&d), CMatrix::identity(4, 4));
    }

    #[test]
    fn tritter_round_trip() {
        let d = reck_decompose(&tritter(), 1e-10).unwrap();
        assert!(d.steps.len() <= 3);
        assert!(linalg::frobenius_distance(&recompose(&d), &tritter()) < 1e-12);
    }

    #[test]
    fn random_round_trip() {
        let u = haar_random_unitary(6, 11);
        assert!(linalg::unitarity_residual(&u) < 1e-12);
        let d = reck_decompose(&u, 1e-10).unwrap();
        assert!(d.steps.len() <= 15);
        assert!(linalg::frobenius_distance(&recompose(&d), &u) < 1e-10);
        assert!(d.steps.iter().all(|s| linalg::unitarity_residual(&s.matrix) < 1e-12));
    }

    #[test]
    fn decomposition_errors() {
        let bad = linalg::from_rows(&[&[ONE, ONE], &[ZERO, ONE]]);
        assert!(matches!(reck_decompose(&bad, 1e-10), Err(MultiportError::NonUnitaryInput { .. })));
        assert_eq!(reck_decompose(&CMatrix::identity(13, 13), 1e-10), Err(MultiportError::DimensionTooLarge(13)));
        assert_eq!(reck_decompose(&CMatrix::identity(1, 1), 1e-10), Err(MultiportError::DimensionTooSmall(1)));
    }

    #[test]
    fn single_step_embedding() {
        let d = Decomposition {
            n: 3,
            steps: vec![TwoModeOp { modes: (0, 1), matrix: crate::default_beamsplitter(), position: 0 }],
            output_phases: vec![ONE; 3],
        };
        let m = recompose(&d);
        assert_eq!(m.view((0, 0), (2, 2)), crate::default_beamsplitter());
        assert_eq!(m[(2, 2)], ONE);
        assert_eq!(m[(0, 2)], ZERO);
    }

    #[test]
    fn equivalence_checks() {
        let direct = verify_cascade_equivalence(&direct_multiport_spec(&tritter()), &tritter()).unwrap();
        assert!(direct.distance < 1e-15);
        let cascade = verify_cascade_equivalence(&cascade_combiner_spec(), &tritter()).unwrap();
        assert!(cascade.distance < 1e-9, "{}", cascade.distance);
        let unrelated = fix_phases(&haar_random_unitary(3, 1), &haar_random_unitary(3, 2));
        assert!(unrelated.distance > 0.1);
        assert!(matches!(
            verify_cascade_equivalence(&cascade_combiner_spec(), &CMatrix::identity(2, 2)),
            Err(MultiportError::DimensionMismatch { .. })
        ));
    }
}
