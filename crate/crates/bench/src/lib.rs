//! Shared instances for the classification benchmarks.

use rlda_core::datamodel::simulate;
use rlda_core::{GroupedDataset, SimulationConfig};

/// Two equal groups from the equicorrelated design, shift 3 in five coordinates.
pub fn instance(n: usize, p: usize, seed: u64) -> GroupedDataset {
    simulate(&SimulationConfig::with_sparse_shift(n / 2, n - n / 2, p, 1.0, 0.4, 5.min(p), 3.0, seed))
        .expect("valid benchmark design")
}

/// `(n, p)` pairs covering the `n < p` regime.
pub const SIZES: [(usize, usize); 3] = [(100, 200), (100, 500), (100, 1000)];
