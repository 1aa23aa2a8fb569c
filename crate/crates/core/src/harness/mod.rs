//! Verification machinery: a runner over every algorithm, plain oracles,
//! trace comparison, failure-rate bounds and I/O scaling fits.

mod gen;
mod oracle;
mod report;

use std::fmt;
use std::str::FromStr;

pub use gen::{format_cells, generate, parse_input, Generator};
pub use oracle::{check, oracle_quantiles, oracle_select, oracle_sort, stable_filter};
pub use report::{
    binomial_ucb, failure_rate, fit_scaling, measure_scaling, verify_oblivious, FailureReport, Model,
    ObliviousnessReport, ScalingReport, REPORT_VERSION,
};

use crate::compaction::{
    logstar_output_blocks, loose, loose_logstar, loose_output_blocks, tight_dense, tight_sparse, LogstarParams,
    LooseParams, SparseParams,
};
use crate::error::{Error, Result};
use crate::model::{AccessTrace, Block, BlockStore, Cell, IoStats, Item, MemConfig, Region, Session};
use crate::obsort::{padded_sort, SortParams};
use crate::primitives::{
    butterfly_expand, butterfly_route, compute_distance_labels_by, consolidate, consolidate_multiway,
    multiway_output_blocks, sort_by_key, thinning_pass,
};
use crate::selection::{quantiles, select};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algo {
    Consolidate,
    ConsolidateMultiway,
    ThinningPass,
    DetSort,
    ButterflyRoute,
    /// Route followed by expansion back to the original slots.
    ButterflyExpand,
    TightSparse,
    TightDense,
    Loose,
    LooseLogstar,
    Select,
    Quantiles,
    PaddedSort,
    /// Plain quicksort touching blocks as it compares; not oblivious.
    QuicksortControl,
}

impl Algo {
    pub const ALL: [Algo; 14] = [
        Algo::Consolidate,
        Algo::ConsolidateMultiway,
        Algo::ThinningPass,
        Algo::DetSort,
        Algo::ButterflyRoute,
        Algo::ButterflyExpand,
        Algo::TightSparse,
        Algo::TightDense,
        Algo::Loose,
        Algo::LooseLogstar,
        Algo::Select,
        Algo::Quantiles,
        Algo::PaddedSort,
        Algo::QuicksortControl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Consolidate => "consolidate",
            Algo::ConsolidateMultiway => "consolidate-multiway",
            Algo::ThinningPass => "thinning-pass",
            Algo::DetSort => "det-sort",
            Algo::ButterflyRoute => "butterfly-route",
            Algo::ButterflyExpand => "butterfly-expand",
            Algo::TightSparse => "tight-sparse",
            Algo::TightDense => "tight-dense",
            Algo::Loose => "loose",
            Algo::LooseLogstar => "loose-logstar",
            Algo::Select => "select",
            Algo::Quantiles => "quantiles",
            Algo::PaddedSort => "padded-sort",
            Algo::QuicksortControl => "quicksort-control",
        }
    }

    pub fn is_oblivious(self) -> bool {
        self != Algo::QuicksortControl
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm `{s}`")))
    }
}

/// Public parameters of a run. `None` fields take a default derived from
/// the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunParams {
    /// Capacity `R` in cells; default `N/8`.
    pub capacity: Option<usize>,
    /// Rank for selection; default `ceil(N/2)`.
    pub k: Option<usize>,
    /// Quantile count, and colors minus one for multiway consolidation;
    /// default `floor((M/B)^(1/4))`.
    pub q: Option<usize>,
    pub sparse: SparseParams,
    pub loose: Option<LooseParams>,
    pub logstar: LogstarParams,
    pub sort: SortParams,
}

impl RunParams {
    pub fn capacity(&self, cfg: &MemConfig) -> usize {
        self.capacity.unwrap_or(cfg.n_cells() / 8)
    }

    pub fn k(&self, cfg: &MemConfig) -> usize {
        self.k.unwrap_or(cfg.n_cells().div_ceil(2).max(1))
    }

    pub fn q(&self, cfg: &MemConfig) -> usize {
        self.q
            .unwrap_or(((cfg.cache_blocks() as f64).powf(0.25) + 1e-9).floor() as usize)
            .max(1)
    }

    pub fn loose(&self, cfg: &MemConfig) -> LooseParams {
        self.loose.unwrap_or_else(|| LooseParams::for_config(cfg))
    }

    /// Distinguished cells the default generator marks: the capacity for
    /// compaction, a tenth of the input otherwise.
    pub fn marked(&self, algo: Algo, cfg: &MemConfig) -> usize {
        match algo {
            Algo::TightSparse | Algo::TightDense | Algo::Loose | Algo::LooseLogstar | Algo::ThinningPass => {
                self.capacity(cfg)
            }
            _ => cfg.n_cells() / 10,
        }
    }
}

/// Output length in blocks fixed by the public parameters, for algorithms
/// whose output is a compaction target.
pub fn expected_output_blocks(algo: Algo, cfg: &MemConfig, p: &RunParams) -> Option<usize> {
    let r = p.capacity(cfg);
    let rb = cfg.blocks_for(r);
    match algo {
        Algo::TightSparse => Some(rb),
        Algo::TightDense => Some(rb.min(cfg.blocks())),
        Algo::Loose => Some(loose_output_blocks(cfg, r)),
        Algo::LooseLogstar => Some(logstar_output_blocks(cfg, r)),
        Algo::ConsolidateMultiway => Some(multiway_output_blocks(cfg.blocks(), p.q(cfg) + 1)),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub algo: Algo,
    pub cfg: MemConfig,
    pub capacity: usize,
    pub seed: u64,
    pub succeeded: bool,
    pub stats: IoStats,
    pub peak_cache: usize,
    /// Cells of the output region, block by block.
    pub output: Vec<Cell>,
    pub output_blocks: usize,
    /// Selected items for selection and quantiles.
    pub values: Vec<Option<Item>>,
    pub trace: Option<AccessTrace>,
}

impl RunOutcome {
    pub const CSV_HEADER: &'static str = "algo,N,M,B,R,seed,succeeded,ios_read,ios_write,version";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.algo,
            self.cfg.n_cells(),
            self.cfg.cache(),
            self.cfg.block(),
            self.capacity,
            self.seed,
            self.succeeded,
            self.stats.reads,
            self.stats.writes,
            REPORT_VERSION
        )
    }
}

fn has_marked(blk: &Block) -> bool {
    blk.cells.iter().any(Cell::is_distinguished)
}

/// Runs `algo` on `cells` with session seed `seed`. Randomized misses are
/// reported through `succeeded`; model violations are errors.
pub fn run(algo: Algo, cfg: &MemConfig, seed: u64, cells: &[Cell], p: &RunParams, record: bool) -> Result<RunOutcome> {
    let cfg = cfg.resized(cells.len());
    let n = cfg.blocks();
    let mut store = BlockStore::new(&cfg, n);
    store.set_recording(record);
    let a = store.initial(n);
    let mut input = cells.to_vec();
    if algo == Algo::ConsolidateMultiway {
        let colors = p.q(&cfg) as u64 + 1;
        for it in input.iter_mut().filter_map(Cell::item_mut) {
            it.color = (it.key % colors) as u32;
        }
    }
    store.load(a, &input);
    let mut s = Session::new(cfg, seed);
    let capacity = p.capacity(&cfg);
    let mut succeeded = true;
    let mut values = Vec::new();

    let output: Region = match algo {
        Algo::Consolidate => {
            let dst = store.alloc(n);
            consolidate(&mut s, &mut store, a, dst)?;
            dst
        }
        Algo::ConsolidateMultiway => {
            let colors = p.q(&cfg) + 1;
            let dst = store.alloc(multiway_output_blocks(n, colors));
            consolidate_multiway(&mut s, &mut store, a, dst, colors)?;
            dst
        }
        Algo::ThinningPass => {
            let dst = store.alloc(4 * cfg.blocks_for(capacity));
            succeeded = thinning_pass(&mut s, &mut store, a, dst, "harness-thin")? == 0;
            dst
        }
        Algo::DetSort => {
            sort_by_key(&mut s, &mut store, a)?;
            a
        }
        Algo::ButterflyRoute => {
            compute_distance_labels_by(&mut s, &mut store, a, has_marked)?;
            butterfly_route(&mut s, &mut store, a)?;
            a
        }
        Algo::ButterflyExpand => {
            let active: Vec<usize> = (0..n).filter(|&i| has_marked(store.peek_block(a.addr(i)))).collect();
            let count = compute_distance_labels_by(&mut s, &mut store, a, has_marked)?;
            butterfly_route(&mut s, &mut store, a)?;
            for k in 0..n {
                let mut blk = s.read_block(&mut store, a.addr(k))?;
                blk.active = k < count;
                blk.label = if blk.active { (active[k] - k) as u64 } else { 0 };
                s.write_block(&mut store, a.addr(k), blk)?;
            }
            let back = store.alloc(n);
            butterfly_expand(&mut s, &mut store, a, back)?;
            back
        }
        Algo::TightSparse => {
            let res = tight_sparse(&mut s, &mut store, a, capacity, &p.sparse)?;
            succeeded = res.succeeded;
            res.output
        }
        Algo::TightDense => {
            let res = tight_dense(&mut s, &mut store, a, capacity)?;
            succeeded = res.succeeded;
            res.output
        }
        Algo::Loose => {
            let res = loose(&mut s, &mut store, a, capacity, &p.loose(&cfg))?;
            succeeded = res.succeeded;
            res.output
        }
        Algo::LooseLogstar => {
            let res = loose_logstar(&mut s, &mut store, a, capacity, &p.logstar)?;
            succeeded = res.succeeded;
            res.output
        }
        Algo::Select => {
            let res = select(&mut s, &mut store, a, p.k(&cfg), &p.sparse)?;
            succeeded = res.succeeded;
            values.push(res.value);
            Region { base: 0, len: 0 }
        }
        Algo::Quantiles => {
            let res = quantiles(&mut s, &mut store, a, cfg.n_cells(), p.q(&cfg), &p.sparse)?;
            succeeded = res.succeeded;
            values = res.values;
            Region { base: 0, len: 0 }
        }
        Algo::PaddedSort => match padded_sort(&mut s, &mut store, a, &p.sort) {
            Ok(res) => {
                succeeded = res.succeeded;
                res.output
            }
            Err(Error::SortFailure { .. }) => {
                succeeded = false;
                Region { base: 0, len: 0 }
            }
            Err(e) => return Err(e),
        },
        Algo::QuicksortControl => {
            quicksort_control(&mut s, &mut store, a)?;
            a
        }
    };

    Ok(RunOutcome {
        algo,
        cfg,
        capacity,
        seed,
        succeeded,
        stats: s.stats(),
        peak_cache: s.peak_cache(),
        output: store.peek_cells(output),
        output_blocks: output.len,
        values,
        trace: record.then(|| store.trace_snapshot()),
    })
}

fn read_cell(s: &mut Session, store: &mut BlockStore, a: Region, i: usize) -> Result<Cell> {
    let b = s.cfg().block();
    let blk = s.read_block(store, a.addr(i / b))?;
    let c = blk.cells[i % b];
    s.drop_block(blk);
    Ok(c)
}

fn swap_cells(s: &mut Session, store: &mut BlockStore, a: Region, i: usize, j: usize) -> Result<()> {
    let b = s.cfg().block();
    let (bi, bj) = (i / b, j / b);
    let mut x = s.read_block(store, a.addr(bi))?;
    if bi == bj {
        x.cells.swap(i % b, j % b);
        return s.write_block(store, a.addr(bi), x);
    }
    let mut y = s.read_block(store, a.addr(bj))?;
    std::mem::swap(&mut x.cells[i % b], &mut y.cells[j % b]);
    s.write_block(store, a.addr(bi), x)?;
    s.write_block(store, a.addr(bj), y)
}

/// Lomuto quicksort by `(key, origin)` with the last cell as pivot.
fn quicksort_control(s: &mut Session, store: &mut BlockStore, a: Region) -> Result<()> {
    let order = |c: &Cell| c.item().map_or((1, 0, 0), |it| (0, it.key, it.origin));
    let mut stack = vec![(0usize, a.len * s.cfg().block())];
    while let Some((lo, hi)) = stack.pop() {
        if hi - lo < 2 {
            continue;
        }
        let pivot = order(&read_cell(s, store, a, hi - 1)?);
        let mut mid = lo;
        for i in lo..hi - 1 {
            if order(&read_cell(s, store, a, i)?) < pivot {
                swap_cells(s, store, a, i, mid)?;
                mid += 1;
            }
        }
        swap_cells(s, store, a, mid, hi - 1)?;
        stack.push((lo, mid));
        stack.push((mid + 1, hi));
    }
    Ok(())
}
