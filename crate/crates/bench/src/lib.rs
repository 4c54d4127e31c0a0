//! Fixtures shared by the benchmarks.

use attune_core::{DenseMatrix, SeededRng};

/// `rows x cols` matrix with standard normal entries.
pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = SeededRng::new(seed, 0);
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    DenseMatrix::new(rows, cols, data).expect("shape matches data")
}
