//! Oblivious selection of the k-th smallest item and of q-quantiles.
//!
//! Ranks are over `(key, origin)`, so they are total even with duplicate
//! keys. Empty cells count as `+inf` elements: an array region of `n` cells
//! always has `n` ranks, and a rank that lands on an empty cell selects
//! nothing (`None`). Every cap and pad size is derived from the public
//! shape before any data is read.

use thiserror::Error;

use crate::compaction::{tight_sparse, Failure, SparseParams};
use crate::error::{require, Result};
use crate::model::{BlockStore, Item, Region, Session};
use crate::primitives::sort_by_key;

/// Below this many cells selection and quantiles sort directly.
pub const SMALL_INPUT: usize = 4096;

type RankKey = (u64, u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectFailure {
    #[error("sample of {count} items exceeds cap {cap}")]
    SampleOverflow { count: usize, cap: usize },
    #[error("{count} items fall in the pivot range, cap {cap}")]
    RangeOverflow { count: usize, cap: usize },
    #[error("target rank lies outside the pivot range")]
    RankOutside,
    #[error("pivot intervals {0} and {1} overlap")]
    IntervalOverlap(usize, usize),
    #[error("compaction failed: {0}")]
    Compaction(Failure),
}

/// Public parameters of one selection, fixed by `(n, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionPlan {
    pub n: usize,
    pub k: usize,
    pub sample_prob: f64,
    /// Cells reserved for the sample, `ceil(n^(1/2) + n^(3/8))`.
    pub sample_cap: usize,
    /// Cells reserved for the pivot range, `min(ceil(8 n^(7/8)), n)`.
    pub range_cap: usize,
}

impl SelectionPlan {
    pub fn new(n: usize, k: usize) -> Self {
        let nf = n as f64;
        SelectionPlan {
            n,
            k,
            sample_prob: 1.0 / nf.sqrt().max(1.0),
            sample_cap: (nf.sqrt() + nf.powf(0.375)).ceil() as usize,
            range_cap: ((8.0 * nf.powf(0.875)).ceil() as usize).min(n),
        }
    }

    /// Sample rank of the lower pivot, `ceil(k/n^(1/2) - n^(3/8))`.
    pub fn rank_lo(&self) -> i64 {
        let nf = self.n as f64;
        (self.k as f64 / nf.sqrt() - nf.powf(0.375)).ceil() as i64
    }

    /// Sample rank of the upper pivot for a sample of `c` items,
    /// `c - ceil((n-k)/n^(1/2) - 2 n^(3/8))`.
    pub fn rank_hi(&self, c: usize) -> i64 {
        let nf = self.n as f64;
        c as i64 - ((nf - self.k as f64) / nf.sqrt() - 2.0 * nf.powf(0.375)).ceil() as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// The selected item, `None` when the rank falls on an empty cell.
    pub value: Option<Item>,
    pub succeeded: bool,
    pub failure: Option<SelectFailure>,
}

impl Selection {
    fn fail(&mut self, f: SelectFailure) {
        self.succeeded = false;
        self.failure.get_or_insert(f);
    }
}

/// Copies `src` into `dst`, setting each occupied cell's distinguished flag
/// to `mark(item)`.
fn copy_marked(
    s: &mut Session,
    store: &mut BlockStore,
    src: Region,
    dst: Region,
    mut mark: impl FnMut(&Item) -> bool,
) -> Result<()> {
    for i in 0..src.len {
        let mut blk = s.read_block(store, src.addr(i))?;
        for c in blk.cells.iter_mut() {
            if let Some(it) = c.item_mut() {
                it.distinguished = mark(it);
            }
        }
        blk.clear_meta();
        s.write_block(store, dst.addr(i), blk)?;
    }
    Ok(())
}

/// Scans `region` in order and returns the cells at the given 1-based ranks
/// (`None` for empty cells or out-of-range ranks).
fn read_ranks(s: &mut Session, store: &mut BlockStore, region: Region, ranks: &[i64]) -> Result<Vec<Option<Item>>> {
    let b = s.cfg().block();
    let mut out = vec![None; ranks.len()];
    for i in 0..region.len {
        let blk = s.read_block(store, region.addr(i))?;
        for (off, c) in blk.cells.iter().enumerate() {
            let rank = (i * b + off + 1) as i64;
            for (slot, &want) in out.iter_mut().zip(ranks) {
                if want == rank {
                    *slot = c.item().copied();
                }
            }
        }
        s.drop_block(blk);
    }
    Ok(out)
}

fn sorted_copy(s: &mut Session, store: &mut BlockStore, a: Region) -> Result<Region> {
    let work = store.alloc(a.len);
    s.copy_region(store, a, work)?;
    sort_by_key(s, store, work)?;
    Ok(work)
}

/// Selects the item of rank `k` (1-based) in `a`.
///
/// Sample with probability `n^(-1/2)`, compact and sort the sample, take
/// pivots `x, y` around rank `k`, compact the items in `[x, y]`, sort them
/// and read rank `k - r(x) + 1`. Misses are reported in the result; the
/// access sequence depends only on `(n, k, M, B)` and the tape.
pub fn select(s: &mut Session, store: &mut BlockStore, a: Region, k: usize, sp: &SparseParams) -> Result<Selection> {
    let n = a.len * s.cfg().block();
    require(k >= 1 && k <= n, || format!("rank {k} outside 1..={n}"))?;
    let mut res = Selection {
        value: None,
        succeeded: true,
        failure: None,
    };
    if n < SMALL_INPUT {
        let sorted = sorted_copy(s, store, a)?;
        res.value = read_ranks(s, store, sorted, &[k as i64])?[0];
        return Ok(res);
    }
    let plan = SelectionPlan::new(n, k);

    // sample, tracking the extremes
    let mut coins = s.tape().substream("select-sample");
    let mut sampled = 0usize;
    let mut min: Option<RankKey> = None;
    let mut max: Option<RankKey> = None;
    let mut has_empty = false;
    let marked = store.alloc(a.len);
    for i in 0..a.len {
        let mut blk = s.read_block(store, a.addr(i))?;
        for c in blk.cells.iter_mut() {
            let coin = coins.bernoulli(plan.sample_prob);
            match c.item_mut() {
                Some(it) => {
                    let rk = it.rank_key();
                    min = Some(min.map_or(rk, |m| m.min(rk)));
                    max = Some(max.map_or(rk, |m| m.max(rk)));
                    it.distinguished = coin;
                    sampled += coin as usize;
                }
                None => has_empty = true,
            }
        }
        blk.clear_meta();
        s.write_block(store, marked.addr(i), blk)?;
    }
    if sampled > plan.sample_cap {
        res.fail(SelectFailure::SampleOverflow {
            count: sampled,
            cap: plan.sample_cap,
        });
    }
    let sample = tight_sparse(s, store, marked, plan.sample_cap, sp)?;
    if let Some(f) = sample.failure.clone() {
        res.fail(SelectFailure::Compaction(f));
    }
    sort_by_key(s, store, sample.output)?;
    let c = sampled.min(plan.sample_cap);
    let lo = plan.rank_lo();
    let hi = plan.rank_hi(c);
    let in_sample = |r: i64| r >= 1 && r <= c as i64;
    let picks = read_ranks(s, store, sample.output, &[lo, hi])?;
    let x1 = if in_sample(lo) { picks[0].map(|it| it.rank_key()) } else { None };
    let y1 = if in_sample(hi) { picks[1].map(|it| it.rank_key()) } else { None };
    // None is -inf for x and +inf for y.
    let x = match (x1, min) {
        (Some(p), Some(m)) => Some(p.max(m)),
        (p, m) => p.or(m),
    };
    let y = match (y1, max) {
        (Some(p), Some(m)) if !has_empty => Some(p.min(m)),
        (Some(p), _) => Some(p),
        (None, m) if !has_empty => m,
        (None, _) => None,
    };

    // range scan
    let mut below = 0usize;
    let mut inside = 0usize;
    let mut occupied = 0usize;
    let ranged = store.alloc(a.len);
    let in_range = |rk: RankKey| x.map_or(true, |x| rk >= x) && y.map_or(true, |y| rk <= y);
    copy_marked(s, store, a, ranged, |it| {
        let rk = it.rank_key();
        occupied += 1;
        if x.is_some_and(|x| rk < x) {
            below += 1;
        }
        let hit = in_range(rk);
        inside += hit as usize;
        hit
    })?;
    // empty cells rank above every item and are in range when y is +inf
    let empties_in = if y.is_none() { n - occupied } else { 0 };
    if inside > plan.range_cap {
        res.fail(SelectFailure::RangeOverflow {
            count: inside,
            cap: plan.range_cap,
        });
    }
    if k <= below || k > below + inside + empties_in {
        res.fail(SelectFailure::RankOutside);
    }
    let range = tight_sparse(s, store, ranged, plan.range_cap, sp)?;
    if let Some(f) = range.failure.clone() {
        res.fail(SelectFailure::Compaction(f));
    }
    sort_by_key(s, store, range.output)?;
    let target = k as i64 - below as i64;
    res.value = read_ranks(s, store, range.output, &[target])?[0];
    Ok(res)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantiles {
    /// Item at rank `ceil(i N / (q+1))` for `i = 1..=q`.
    pub values: Vec<Option<Item>>,
    pub succeeded: bool,
    pub failure: Option<SelectFailure>,
}

impl Quantiles {
    fn fail(&mut self, f: SelectFailure) {
        self.succeeded = false;
        self.failure.get_or_insert(f);
    }
}

/// Target ranks of the `q` quantiles of `n` elements.
pub fn quantile_ranks(n: usize, q: usize) -> Vec<usize> {
    (1..=q).map(|i| (i * n).div_ceil(q + 1)).collect()
}

/// Whether quantiles of an `n`-cell input are read off a full sort.
pub fn quantiles_by_sorting(s: &Session, n: usize) -> bool {
    let blocks = s.cfg().blocks_for(n) as f64;
    n < SMALL_INPUT || s.cfg().cache_blocks() as f64 > blocks.powf(0.25)
}

/// Selects the `q` quantiles of the first `n` cells of `a`,
/// `q <= (M/B)^(1/4)`. Padding past `n` must be empty.
///
/// With a large cache the input is sorted and the ranks are read off.
/// Otherwise a sample of rate `N^(-1/4)` brackets each quantile by an
/// interval `[x_i, y_i]`. One marking scan per interval counts the items
/// below it and compacts the items inside into a slice of
/// `ceil(8 N^(3/4))` cells; empty cells pad each slice as `+inf`. Each
/// quantile is then selected within its slice.
pub fn quantiles(
    s: &mut Session,
    store: &mut BlockStore,
    a: Region,
    n: usize,
    q: usize,
    sp: &SparseParams,
) -> Result<Quantiles> {
    let cfg = *s.cfg();
    require(n <= a.len * cfg.block(), || format!("{n} cells exceed the region"))?;
    require(q >= 1, || "need at least one quantile".into())?;
    require(q as f64 <= (cfg.cache_blocks() as f64).powf(0.25) + 1e-9, || {
        format!("q={q} exceeds (M/B)^(1/4) with M/B={}", cfg.cache_blocks())
    })?;
    require(2 * q + 1 <= cfg.cache(), || "interval counters must fit in the cache".into())?;
    let ranks = quantile_ranks(n, q);
    let mut res = Quantiles {
        values: vec![None; q],
        succeeded: true,
        failure: None,
    };
    if quantiles_by_sorting(s, n) {
        let sorted = sorted_copy(s, store, a)?;
        let want: Vec<i64> = ranks.iter().map(|&r| r as i64).collect();
        res.values = read_ranks(s, store, sorted, &want)?;
        return Ok(res);
    }

    let nf = n as f64;
    let root = nf.sqrt();
    let nhat = nf.powf(0.75);
    let sample_cap = (nhat + root).ceil() as usize;
    let slice_cells = cfg.blocks_for((8.0 * nhat).ceil() as usize) * cfg.block();

    let mut coins = s.tape().substream("quantile-sample");
    let prob = 1.0 / nf.powf(0.25);
    let mut sampled = 0usize;
    let mut min: Option<RankKey> = None;
    let mut max: Option<RankKey> = None;
    let mut has_empty = false;
    let marked = store.alloc(a.len);
    for i in 0..a.len {
        let mut blk = s.read_block(store, a.addr(i))?;
        for c in blk.cells.iter_mut() {
            let coin = coins.bernoulli(prob);
            match c.item_mut() {
                Some(it) => {
                    let rk = it.rank_key();
                    min = Some(min.map_or(rk, |m| m.min(rk)));
                    max = Some(max.map_or(rk, |m| m.max(rk)));
                    it.distinguished = coin;
                    sampled += coin as usize;
                }
                None => has_empty = true,
            }
        }
        blk.clear_meta();
        s.write_block(store, marked.addr(i), blk)?;
    }
    if sampled > sample_cap {
        res.fail(SelectFailure::SampleOverflow {
            count: sampled,
            cap: sample_cap,
        });
    }
    let sample = tight_sparse(s, store, marked, sample_cap, sp)?;
    if let Some(f) = sample.failure.clone() {
        res.fail(SelectFailure::Compaction(f));
    }
    sort_by_key(s, store, sample.output)?;
    let c = sampled.min(sample_cap);
    let mut want = Vec::with_capacity(2 * q);
    for i in 1..=q {
        let frac = nhat * i as f64 / (q + 1) as f64;
        want.push((frac - root).ceil() as i64);
        want.push((c as f64 - (nhat - frac - 2.0 * root)).ceil() as i64);
    }
    let picks = read_ranks(s, store, sample.output, &want)?;
    let in_sample = |r: i64| r >= 1 && r <= c as i64;
    let mut bounds: Vec<(Option<RankKey>, Option<RankKey>)> = Vec::with_capacity(q);
    for i in 0..q {
        let x = match picks[2 * i] {
            Some(it) if i > 0 && in_sample(want[2 * i]) => Some(it.rank_key()),
            _ => min,
        };
        let y = match picks[2 * i + 1] {
            Some(it) if i + 1 < q && in_sample(want[2 * i + 1]) => Some(it.rank_key()),
            _ if has_empty => None,
            _ => max,
        };
        bounds.push((x, y));
    }
    for i in 1..q {
        let prev_hi = bounds[i - 1].1;
        let next_lo = bounds[i].0;
        if prev_hi.is_none() || next_lo.is_some_and(|lo| prev_hi.is_some_and(|hi| hi >= lo)) {
            res.fail(SelectFailure::IntervalOverlap(i, i + 1));
        }
    }

    for (i, &(x, y)) in bounds.iter().enumerate() {
        let mut below = 0usize;
        let mut inside = 0usize;
        let mut occupied = 0usize;
        let scratch = store.alloc(a.len);
        copy_marked(s, store, a, scratch, |it| {
            let rk = it.rank_key();
            occupied += 1;
            let under = x.is_some_and(|x| rk < x);
            below += under as usize;
            let hit = !under && y.map_or(true, |y| rk <= y);
            inside += hit as usize;
            hit
        })?;
        if inside > slice_cells {
            res.fail(SelectFailure::RangeOverflow {
                count: inside,
                cap: slice_cells,
            });
        }
        let empties_in = if y.is_none() { n - occupied } else { 0 };
        let ki = ranks[i] as i64 - below as i64;
        if ki < 1 || ki as usize > inside + empties_in {
            res.fail(SelectFailure::RankOutside);
        }
        let slice = tight_sparse(s, store, scratch, slice_cells, sp)?;
        if let Some(f) = slice.failure.clone() {
            res.fail(SelectFailure::Compaction(f));
        }
        let ki = ki.clamp(1, slice_cells as i64) as usize;
        let sel = select(s, store, slice.output, ki, sp)?;
        if let Some(f) = sel.failure.clone() {
            res.fail(f);
        }
        res.values[i] = sel.value;
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cell, MemConfig};
    use rand::{seq::SliceRandom, SeedableRng};

    fn load(keys: &[Option<u64>], b: usize, m: usize, seed: u64) -> (Session, BlockStore, Region) {
        let cfg = MemConfig::new(keys.len(), b, m * b).unwrap();
        let n = cfg.blocks();
        let mut store = BlockStore::new(&cfg, n);
        let r = store.initial(n);
        let cells: Vec<Cell> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| match k {
                Some(k) => Cell::Occupied(Item::new(*k, k * 10, i as u64)),
                None => Cell::Empty,
            })
            .collect();
        store.load(r, &cells);
        (Session::new(cfg, seed), store, r)
    }

    fn permutation(n: u64, seed: u64) -> Vec<Option<u64>> {
        let mut v: Vec<u64> = (1..=n).collect();
        v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        v.into_iter().map(Some).collect()
    }

    fn key(x: &Option<Item>) -> Option<u64> {
        x.map(|it| it.key)
    }

    #[test]
    fn small_select_reads_sorted_rank() {
        let (mut s, mut st, a) = load(&[Some(5), Some(3), Some(9), Some(1)], 2, 4, 0);
        let sp = SparseParams::default();
        let r = select(&mut s, &mut st, a, 1, &sp).unwrap();
        assert!(r.succeeded);
        assert_eq!(key(&r.value), Some(1));
        assert_eq!(key(&select(&mut s, &mut st, a, 3, &sp).unwrap().value), Some(5));
    }

    #[test]
    fn empty_cells_rank_last() {
        let (mut s, mut st, a) = load(&[None, Some(4), None, Some(2)], 1, 4, 0);
        let sp = SparseParams::default();
        assert_eq!(key(&select(&mut s, &mut st, a, 2, &sp).unwrap().value), Some(4));
        assert_eq!(select(&mut s, &mut st, a, 3, &sp).unwrap().value, None);
    }

    #[test]
    fn rejects_rank_out_of_range() {
        let (mut s, mut st, a) = load(&[Some(1), Some(2)], 1, 4, 0);
        assert!(select(&mut s, &mut st, a, 0, &SparseParams::default()).is_err());
        assert!(select(&mut s, &mut st, a, 3, &SparseParams::default()).is_err());
    }

    #[test]
    fn sampled_select_finds_median_and_minimum() {
        let keys = permutation(1 << 14, 1);
        let sp = SparseParams::default();
        for (k, want) in [(8192, 8192), (1, 1), (1 << 14, 1 << 14)] {
            let (mut s, mut st, a) = load(&keys, 4, 64, k as u64);
            let r = select(&mut s, &mut st, a, k, &sp).unwrap();
            assert!(r.succeeded, "k={k}: {:?}", r.failure);
            assert_eq!(key(&r.value), Some(want));
        }
    }

    #[test]
    fn sampled_select_with_duplicates_and_empties() {
        let keys: Vec<Option<u64>> = (0..8192u64).map(|i| if i % 5 == 0 { None } else { Some(i % 7) }).collect();
        let mut sorted: Vec<u64> = keys.iter().flatten().copied().collect();
        sorted.sort();
        let (mut s, mut st, a) = load(&keys, 4, 64, 3);
        let r = select(&mut s, &mut st, a, 3000, &SparseParams::default()).unwrap();
        assert!(r.succeeded, "{:?}", r.failure);
        assert_eq!(key(&r.value), Some(sorted[2999]));
    }

    #[test]
    fn select_trace_independent_of_data_and_rank() {
        let sp = SparseParams::default();
        let (mut s1, mut st1, a1) = load(&permutation(8192, 1), 4, 64, 9);
        let (mut s2, mut st2, a2) = load(&vec![Some(7); 8192], 4, 64, 9);
        select(&mut s1, &mut st1, a1, 10, &sp).unwrap();
        select(&mut s2, &mut st2, a2, 5000, &sp).unwrap();
        assert_eq!(st1.trace(), st2.trace());
    }

    #[test]
    fn plan_depends_on_shape_only() {
        let p = SelectionPlan::new(1 << 16, 100);
        assert_eq!(p.sample_cap, 256 + 64);
        assert_eq!(p.range_cap, 1 << 16);
        assert_eq!(SelectionPlan::new(1 << 16, 9).sample_cap, p.sample_cap);
        assert_eq!(SelectionPlan::new(1 << 32, 1).range_cap, (8.0 * 2f64.powi(28)) as usize);
    }

    #[test]
    fn quantile_ranks_split_evenly() {
        assert_eq!(quantile_ranks(12, 3), vec![3, 6, 9]);
        assert_eq!(quantile_ranks(10, 1), vec![5]);
    }

    #[test]
    fn quantiles_by_sorting_branch() {
        let keys = permutation(1024, 4);
        let (mut s, mut st, a) = load(&keys, 4, 81, 0);
        assert!(quantiles_by_sorting(&s, 1024));
        let r = quantiles(&mut s, &mut st, a, 1024, 3, &SparseParams::default()).unwrap();
        assert!(r.succeeded);
        assert_eq!(r.values.iter().map(key).collect::<Vec<_>>(), vec![Some(256), Some(512), Some(768)]);
    }

    #[test]
    fn quantiles_ignore_block_padding() {
        let keys: Vec<Option<u64>> = (1..=10).rev().map(Some).chain([None, None]).collect();
        let (mut s, mut st, a) = load(&keys, 4, 16, 0);
        let r = quantiles(&mut s, &mut st, a, 10, 1, &SparseParams::default()).unwrap();
        assert_eq!(r.values.iter().map(key).collect::<Vec<_>>(), vec![Some(5)]);
    }

    #[test]
    fn rejects_too_many_quantiles() {
        let (mut s, mut st, a) = load(&permutation(64, 0), 1, 16, 0);
        assert!(quantiles(&mut s, &mut st, a, 64, 3, &SparseParams::default()).is_err());
    }

    #[test]
    fn sampled_quantiles() {
        let n = 1 << 16;
        let keys = permutation(n, 5);
        let (mut s, mut st, a) = load(&keys, 1, 16, 2);
        assert!(!quantiles_by_sorting(&s, n as usize));
        let r = quantiles(&mut s, &mut st, a, n as usize, 2, &SparseParams::default()).unwrap();
        assert!(r.succeeded, "{:?}", r.failure);
        let want: Vec<Option<u64>> = quantile_ranks(n as usize, 2).iter().map(|&k| Some(k as u64)).collect();
        assert_eq!(r.values.iter().map(key).collect::<Vec<_>>(), want);
    }

    #[test]
    fn quantiles_trace_fixed() {
        let n = 1 << 16;
        let (mut s1, mut st1, a1) = load(&permutation(n, 1), 1, 4, 3);
        let (mut s2, mut st2, a2) = load(&vec![Some(1); n as usize], 1, 4, 3);
        quantiles(&mut s1, &mut st1, a1, n as usize, 1, &SparseParams::default()).unwrap();
        quantiles(&mut s2, &mut st2, a2, n as usize, 1, &SparseParams::default()).unwrap();
        assert_eq!(st1.trace(), st2.trace());
    }
}
