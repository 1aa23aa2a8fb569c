//! Randomized oblivious sorting into a padded array.
//!
//! Each level computes `q` quantiles, colors every item by its bucket,
//! consolidates into monochromatic blocks, shuffles the blocks and deals
//! them to one array per color. Arrays are compacted and split again until
//! they reach about `sqrt(n)` blocks, then sorted deterministically. Leaves
//! whose level failed are repaired together by a failure sweep, and a final
//! tight compaction packs the result.

use std::cmp::Ordering;

use crate::compaction::{loose, tight_dense, LooseParams, SparseParams};
use crate::error::{require, Error, Result};
use crate::model::{Block, BlockStore, Cell, Item, MemConfig, Region, Session};
use crate::primitives::{
    butterfly_expand, butterfly_route, compute_distance_labels_by, consolidate_multiway, multiway_output_blocks,
    sort_by_key, sort_cells_by,
};
use crate::selection::quantiles;

/// Origin carried by padding items during the failure sweep.
const DUMMY_ORIGIN: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DealParams {
    /// Quantiles per level; `q + 1` colors.
    pub q: usize,
    /// Blocks read per deal window.
    pub window: usize,
    /// Blocks written to every color per window.
    pub per_color_out: usize,
    pub c: f64,
}

impl DealParams {
    /// `q = floor(m^(1/4))`, window `ceil(m^(3/4))` (at most `m - 1`) and
    /// `ceil(c sqrt(m))` blocks per color, capped at the window.
    pub fn for_config(cfg: &MemConfig, c: f64) -> Self {
        let m = cfg.cache_blocks() as f64;
        let q = ((m.powf(0.25) + 1e-9).floor() as usize).max(1);
        let window = (m.powf(0.75).ceil() as usize).min(cfg.cache_blocks() - 1).max(1);
        let per_color_out = ((c * m.sqrt()).ceil() as usize).clamp(1, window);
        DealParams {
            q,
            window,
            per_color_out,
            c,
        }
    }

    pub fn colors(&self) -> usize {
        self.q + 1
    }

    /// Blocks of each color array for an input of `n` blocks.
    pub fn out_blocks(&self, n: usize) -> usize {
        n.div_ceil(self.window) * self.per_color_out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SortParams {
    /// Deal constant.
    pub c: f64,
    /// Leaves hold at most `ceil(leaf_factor * sqrt(n))` blocks.
    pub leaf_factor: f64,
    /// Inputs of at most this many blocks are sorted directly.
    pub n0: usize,
    pub sparse: SparseParams,
}

impl Default for SortParams {
    fn default() -> Self {
        SortParams {
            c: 8.0,
            leaf_factor: 1.0,
            n0: 64,
            sparse: SparseParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaddedSortResult {
    /// Occupied cells in key order, then empty cells.
    pub output: Region,
    pub succeeded: bool,
    /// Leaves whose subproblem failed and went through the sweep.
    pub failed_subproblems: usize,
    /// Items dropped by an overflowing deal or compaction.
    pub lost: bool,
}

/// In-place Fisher-Yates shuffle of the blocks of `a`: block `i` is swapped
/// with a uniform block of `i..n`. Two reads and two writes per swap.
pub fn shuffle_blocks(s: &mut Session, store: &mut BlockStore, a: Region) -> Result<()> {
    let mut tape = s.tape().substream("shuffle");
    for i in 0..a.len {
        let j = i + tape.below(a.len - i);
        let x = s.read_block(store, a.addr(i))?;
        let y = s.read_block(store, a.addr(j))?;
        s.write_block(store, a.addr(i), y)?;
        s.write_block(store, a.addr(j), x)?;
    }
    Ok(())
}

fn block_color(blk: &Block) -> Option<usize> {
    blk.cells.iter().find_map(|c| c.item()).map(|it| it.color as usize)
}

/// Deals the monochromatic blocks of `a` to `q + 1` fresh arrays. Each
/// window of blocks writes exactly `per_color_out` blocks to every color,
/// padding with empty blocks. Returns the arrays and the number of blocks
/// dropped because a color overflowed its quota.
pub fn deal(s: &mut Session, store: &mut BlockStore, a: Region, p: &DealParams) -> Result<(Vec<Region>, usize)> {
    require(p.window < s.cfg().cache_blocks(), || {
        format!("deal window of {} blocks must leave room in the cache", p.window)
    })?;
    let outs: Vec<Region> = (0..p.colors()).map(|_| store.alloc(p.out_blocks(a.len))).collect();
    let mut dropped = 0;
    for (w, start) in (0..a.len).step_by(p.window).enumerate() {
        let len = p.window.min(a.len - start);
        let mut piles: Vec<Vec<Block>> = vec![Vec::new(); p.colors()];
        for i in 0..len {
            let blk = s.read_block(store, a.addr(start + i))?;
            match block_color(&blk) {
                Some(col) => piles[col.min(p.q)].push(blk),
                None => s.drop_block(blk),
            }
        }
        for (col, pile) in piles.into_iter().enumerate() {
            let mut pile = pile.into_iter();
            for j in 0..p.per_color_out {
                let blk = match pile.next() {
                    Some(mut src) => {
                        src.clear_meta();
                        src
                    }
                    None => s.new_block()?,
                };
                s.write_block(store, outs[col].addr(w * p.per_color_out + j), blk)?;
            }
            for extra in pile {
                dropped += 1;
                s.drop_block(extra);
            }
        }
    }
    Ok((outs, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ChildCompaction {
    Loose,
    Tight,
}

/// Shape of one recursion level: public, fixed by the node length.
#[derive(Debug, Clone, Copy)]
struct Level {
    /// Capacity in cells of each child.
    capacity: usize,
    compaction: ChildCompaction,
    child_blocks: usize,
}

fn plan_level(cfg: &MemConfig, deal: &DealParams, node_blocks: usize) -> Level {
    let b = cfg.block();
    let capacity = (node_blocks * b).div_ceil(deal.colors());
    let dealt_cells = deal.out_blocks(multiway_output_blocks(node_blocks, deal.colors())) * b;
    let loose_ok = deal.colors() > 10
        && 4 * capacity < dealt_cells
        && cfg.require_tall_cache("").is_ok()
        && cfg.require_wide_block("").is_ok();
    let (compaction, child_blocks) = if loose_ok {
        (ChildCompaction::Loose, 5 * cfg.blocks_for(capacity))
    } else {
        (ChildCompaction::Tight, cfg.blocks_for(capacity))
    };
    Level {
        capacity,
        compaction,
        child_blocks,
    }
}

struct Leaves {
    regions: Vec<Region>,
    failed: Vec<bool>,
    lost: bool,
}

fn mark_all(s: &mut Session, store: &mut BlockStore, src: Region, dst: Region, color: impl Fn(&Item) -> u32) -> Result<()> {
    for i in 0..src.len {
        let mut blk = s.read_block(store, src.addr(i))?;
        for it in blk.cells.iter_mut().filter_map(Cell::item_mut) {
            it.distinguished = true;
            it.color = color(it);
        }
        blk.clear_meta();
        s.write_block(store, dst.addr(i), blk)?;
    }
    Ok(())
}

fn split(
    s: &mut Session,
    store: &mut BlockStore,
    x: Region,
    leaf_blocks: usize,
    p: &SortParams,
    failed: bool,
    out: &mut Leaves,
) -> Result<()> {
    let cfg = *s.cfg();
    let dp = DealParams::for_config(&cfg, p.c);
    let level = plan_level(&cfg, &dp, x.len);
    if x.len <= leaf_blocks || level.child_blocks >= x.len {
        out.regions.push(x);
        out.failed.push(failed);
        return Ok(());
    }
    let qs = quantiles(s, store, x, x.len * cfg.block(), dp.q, &p.sparse)?;
    let mut failed = failed || !qs.succeeded;
    let bounds: Vec<Option<(u64, u64)>> = qs.values.iter().map(|v| v.map(|it| it.rank_key())).collect();

    let colored = store.alloc(x.len);
    mark_all(s, store, x, colored, |it| {
        let rk = it.rank_key();
        bounds.iter().filter(|b| b.is_some_and(|b| b < rk)).count() as u32
    })?;
    let mono = store.alloc(multiway_output_blocks(x.len, dp.colors()));
    consolidate_multiway(s, store, colored, mono, dp.colors())?;
    shuffle_blocks(s, store, mono)?;
    let (piles, dropped) = deal(s, store, mono, &dp)?;
    if dropped > 0 {
        failed = true;
        out.lost = true;
    }
    for pile in piles {
        let res = match level.compaction {
            ChildCompaction::Loose => loose(s, store, pile, level.capacity, &LooseParams::for_config(&cfg))?,
            ChildCompaction::Tight => tight_dense(s, store, pile, level.capacity)?,
        };
        if !res.succeeded {
            failed = true;
            out.lost = true;
        }
        let child = store.alloc(level.child_blocks);
        let k = res.output.len.min(child.len);
        mark_all(s, store, res.output.slice(0, k), child.slice(0, k), |_| 0)?;
        for j in k..child.len {
            let blk = s.new_block()?;
            s.write_block(store, child.addr(j), blk)?;
        }
        split(s, store, child, leaf_blocks, p, failed, out)?;
    }
    Ok(())
}

/// Tag for every cell of a failed leaf: the index of the first leaf in its
/// run of consecutive failed leaves.
fn run_tags(failed: &[bool]) -> Vec<u32> {
    let mut tags = vec![0u32; failed.len()];
    for i in 0..failed.len() {
        tags[i] = if i > 0 && failed[i] && failed[i - 1] { tags[i - 1] } else { i as u32 };
    }
    tags
}

fn sweep_order(a: &Cell, b: &Cell) -> Ordering {
    match (a.item(), b.item()) {
        (Some(x), Some(y)) => (x.color, x.origin == DUMMY_ORIGIN, x.key, x.origin).cmp(&(
            y.color,
            y.origin == DUMMY_ORIGIN,
            y.key,
            y.origin,
        )),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Re-sorts the failed leaves of `all` (the concatenation of equal-length
/// leaves) in place, so that every run of consecutive failed leaves holds
/// its items in order.
///
/// Blocks of failed leaves are routed into an array of `budget` leaves,
/// sorted there and expanded back to their slots. The access sequence
/// depends only on the shape; more than `budget` failures is an error.
pub fn failure_sweep(
    s: &mut Session,
    store: &mut BlockStore,
    all: Region,
    leaf_blocks: usize,
    failed: &[bool],
    budget: usize,
) -> Result<()> {
    require(leaf_blocks * failed.len() == all.len, || {
        format!("{} leaves of {leaf_blocks} blocks do not cover {} blocks", failed.len(), all.len)
    })?;
    let nfail = failed.iter().filter(|&&f| f).count();
    if nfail > budget {
        return Err(Error::SortFailure { failed: nfail, budget });
    }
    let tags = run_tags(failed);
    let leaf_of = |i: usize| i / leaf_blocks;

    let work = store.alloc(all.len);
    for i in 0..all.len {
        let mut blk = s.read_block(store, all.addr(i))?;
        let leaf = leaf_of(i);
        blk.clear_meta();
        blk.active = failed[leaf];
        if blk.active {
            for c in blk.cells.iter_mut() {
                match c.item_mut() {
                    Some(it) => it.color = tags[leaf],
                    None => {
                        let mut dummy = Item::new(u64::MAX, 0, DUMMY_ORIGIN);
                        dummy.color = tags[leaf];
                        *c = Cell::Occupied(dummy);
                    }
                }
            }
        }
        s.write_block(store, work.addr(i), blk)?;
    }
    compute_distance_labels_by(s, store, work, |b| b.active)?;
    butterfly_route(s, store, work)?;

    let d = work.slice(0, (budget * leaf_blocks).min(work.len));
    sort_cells_by(s, store, d, sweep_order)?;
    let failed_leaves: Vec<usize> = (0..failed.len()).filter(|&l| failed[l]).collect();
    for k in 0..d.len {
        let mut blk = s.read_block(store, d.addr(k))?;
        blk.active = k < nfail * leaf_blocks;
        blk.label = if blk.active {
            (failed_leaves[k / leaf_blocks] * leaf_blocks + k % leaf_blocks - k) as u64
        } else {
            0
        };
        s.write_block(store, d.addr(k), blk)?;
    }
    let back = store.alloc(all.len);
    butterfly_expand(s, store, d, back)?;

    for i in 0..all.len {
        let orig = s.read_block(store, all.addr(i))?;
        let swept = s.read_block(store, back.addr(i))?;
        let mut blk = if failed[leaf_of(i)] {
            s.drop_block(orig);
            swept
        } else {
            s.drop_block(swept);
            orig
        };
        blk.clear_meta();
        for c in blk.cells.iter_mut() {
            if c.item().is_some_and(|it| it.origin == DUMMY_ORIGIN) {
                *c = Cell::Empty;
            } else if let Some(it) = c.item_mut() {
                it.color = 0;
            }
        }
        s.write_block(store, all.addr(i), blk)?;
    }
    Ok(())
}

/// Blocks per leaf for a top-level input of `n` blocks.
pub fn leaf_blocks(n: usize, p: &SortParams) -> usize {
    ((p.leaf_factor * (n as f64).sqrt()).ceil() as usize).max(1)
}

/// Sweep budget in leaves, `ceil(n^(1/4))`.
pub fn sweep_budget(n: usize) -> usize {
    ((n as f64).powf(0.25).ceil() as usize).max(1)
}

/// Sorts the occupied cells of `a` into a fresh region of the same length:
/// items in key order (ties by origin) followed by empty cells.
pub fn padded_sort(s: &mut Session, store: &mut BlockStore, a: Region, p: &SortParams) -> Result<PaddedSortResult> {
    let cfg = *s.cfg();
    cfg.require_cache_blocks(4, "padded sort")?;
    require(p.c > 0.0 && p.leaf_factor > 0.0, || "deal constant and leaf factor must be positive".into())?;
    let n = a.len;
    let root = store.alloc(n);
    mark_all(s, store, a, root, |_| 0)?;
    let leaf = leaf_blocks(n, p);
    let mut leaves = Leaves {
        regions: Vec::new(),
        failed: Vec::new(),
        lost: false,
    };
    if n <= p.n0 {
        leaves.regions.push(root);
        leaves.failed.push(false);
    } else {
        split(s, store, root, leaf, p, false, &mut leaves)?;
    }

    let leaf_len = leaves.regions[0].len;
    let all = store.alloc(leaf_len * leaves.regions.len());
    for (j, r) in leaves.regions.iter().enumerate() {
        debug_assert_eq!(r.len, leaf_len);
        let dst = all.slice(j * leaf_len, leaf_len);
        s.copy_region(store, *r, dst)?;
        sort_by_key(s, store, dst)?;
    }
    let failed_subproblems = leaves.failed.iter().filter(|&&f| f).count();
    if leaves.regions.len() > 1 {
        failure_sweep(s, store, all, leaf_len, &leaves.failed, sweep_budget(n))?;
    }

    let packed = tight_dense(s, store, all, n * cfg.block())?;
    let output = store.alloc(n);
    let k = packed.output.len.min(n);
    s.copy_region(store, packed.output.slice(0, k), output.slice(0, k))?;
    for j in k..n {
        let blk = s.new_block()?;
        s.write_block(store, output.addr(j), blk)?;
    }
    Ok(PaddedSortResult {
        output,
        succeeded: !leaves.lost && packed.succeeded,
        failed_subproblems,
        lost: leaves.lost,
    })
}
