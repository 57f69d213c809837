//! Monte-Carlo event logs and the counter-addressed random stream behind them.
//!
//! Every random draw is addressed by `(seed, shot, cell)`: the shot selects a
//! ChaCha stream and the cell selects the word position inside it. Results do
//! not depend on the order in which shots or cells are visited, so sampling can
//! run on any number of threads and still reproduce bit-for-bit.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::circuit::Topology;

/// One click: detector or loss terminal `terminal` fired in `bin` on `shot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClickEvent {
    pub shot: u64,
    pub terminal: usize,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub shots: u64,
    pub seed: u64,
    /// Sorted by shot, then by terminal-major cell index.
    pub events: Vec<ClickEvent>,
    pub topology: Arc<Topology>,
}

impl EventLog {
    /// Number of shots in which cell `(terminal, bin)` clicked.
    pub fn count(&self, terminal: usize, bin: usize) -> u64 {
        self.events.iter().filter(|e| e.terminal == terminal && e.bin == bin).count() as u64
    }

    /// Click counts for every `(terminal, bin)` cell, terminal-major.
    pub fn cell_counts(&self) -> Vec<u64> {
        let n_bins = self.topology.n_bins;
        let mut counts = vec![0; self.topology.terminals.len() * n_bins];
        for e in &self.events {
            counts[e.terminal * n_bins + e.bin] += 1;
        }
        counts
    }

    /// Events grouped by shot; shots without clicks are skipped.
    pub fn by_shot(&self) -> impl Iterator<Item = (u64, &[ClickEvent])> {
        self.events
            .chunk_by(|a, b| a.shot == b.shot)
            .map(|chunk| (chunk[0].shot, chunk))
    }

    pub fn terminal_label(&self, terminal: usize) -> &str {
        &self.topology.terminals[terminal].label
    }
}

/// Uniform draw in `[0, 1)` addressed by `(seed, shot, cell)`.
pub fn uniform(seed: u64, shot: u64, cell: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot);
    rng.set_word_pos(u128::from(cell) * 2);
    to_unit(rng.next_u64())
}

/// Sequential reader over one shot's stream; cheaper than [`uniform`] when
/// cells are visited in increasing order.
pub struct ShotStream {
    rng: ChaCha8Rng,
    next_cell: u64,
}

impl ShotStream {
    pub fn new(seed: u64, shot: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(shot);
        Self { rng, next_cell: 0 }
    }

    /// The draw for `cell`; equals `uniform(seed, shot, cell)`.
    pub fn draw(&mut self, cell: u64) -> f64 {
        if cell != self.next_cell {
            self.rng.set_word_pos(u128::from(cell) * 2);
        }
        self.next_cell = cell + 1;
        to_unit(self.rng.next_u64())
    }
}

fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_matches_addressed_draws() {
        let mut s = ShotStream::new(7, 3);
        for cell in [0, 1, 2, 5, 6, 40] {
            assert_eq!(s.draw(cell), uniform(7, 3, cell));
        }
    }

    #[test]
    fn draws_are_in_unit_interval_and_vary() {
        let xs: Vec<f64> = (0..64).map(|c| uniform(1, 0, c)).collect();
        assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));
        assert!(xs.windows(2).any(|w| w[0] != w[1]));
        assert_ne!(uniform(1, 0, 0), uniform(1, 1, 0));
        assert_ne!(uniform(1, 0, 0), uniform(2, 0, 0));
    }
}
