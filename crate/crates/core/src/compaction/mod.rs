//! Compaction: moving the distinguished cells of an array into a smaller
//! array, tightly (exactly the capacity) or loosely (a constant factor more).

mod logstar;
mod loose;
mod tight;

pub use logstar::{loose_logstar, logstar_output_blocks, tower, LogstarParams};
pub use loose::{loose, loose_output_blocks, LooseParams};
pub use tight::{tight_dense, tight_sparse, sparse_fits_cache, SparseParams};

use thiserror::Error;

use crate::model::Region;

/// Why a randomized compaction missed. Misses never change the access
/// sequence; they are only reported afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Failure {
    #[error("lookup table listing was incomplete")]
    DecodeFailure,
    #[error("{count} distinguished cells exceed capacity {capacity}")]
    CapacityExceeded { count: usize, capacity: usize },
    #[error("{regions} regions overflowed their kept half")]
    RegionOverflow { regions: usize },
    #[error("{blocks} residue blocks did not fit the residue area")]
    ResidueOverflow { blocks: usize },
    #[error("phase {phase} started with {remaining} blocks left, bound {bound}")]
    PhaseInvariant {
        phase: usize,
        remaining: usize,
        bound: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompactionResult {
    pub output: Region,
    /// Capacity parameter in cells.
    pub capacity: usize,
    pub tight: bool,
    pub order_preserving: bool,
    pub succeeded: bool,
    pub failure: Option<Failure>,
    /// Distinguished cells seen by the client.
    pub count: usize,
}

impl CompactionResult {
    fn new(output: Region, capacity: usize, tight: bool, order_preserving: bool, count: usize) -> Self {
        CompactionResult {
            output,
            capacity,
            tight,
            order_preserving,
            succeeded: true,
            failure: None,
            count,
        }
    }

    /// Records the first miss; later ones are dropped.
    fn fail(&mut self, f: Failure) {
        self.succeeded = false;
        self.failure.get_or_insert(f);
    }
}
