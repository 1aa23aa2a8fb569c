use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::{Block, BlockStore, Region, Session};

/// Labels every block of `a` for tight compaction: blocks accepted by
/// `active` get `label = j - rank`, where `rank` counts active blocks
/// before position `j`. One read and one write per block.
pub fn compute_distance_labels_by(
    s: &mut Session,
    store: &mut BlockStore,
    a: Region,
    active: impl Fn(&Block) -> bool,
) -> Result<usize> {
    let mut rank = 0usize;
    for j in 0..a.len {
        let mut blk = s.read_block(store, a.addr(j))?;
        blk.active = active(&blk);
        blk.label = if blk.active { (j - rank) as u64 } else { 0 };
        rank += blk.active as usize;
        s.write_block(store, a.addr(j), blk)?;
    }
    Ok(rank)
}

/// Marks occupied blocks active and labels them with their distance to the
/// left-packed position. Returns the number of active blocks.
pub fn compute_distance_labels(s: &mut Session, store: &mut BlockStore, a: Region) -> Result<usize> {
    compute_distance_labels_by(s, store, a, |b| !b.is_vacant())
}

/// Number of network levels for a region of `len` blocks.
pub fn levels_for(len: usize) -> u32 {
    if len < 2 {
        0
    } else {
        usize::BITS - (len - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RouteStats {
    /// Level-wise target clashes plus blocks routed off either end.
    pub collisions: usize,
    pub levels: u32,
    /// Passes over the whole region, one per level group.
    pub passes: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Compact,
    Expand,
}

/// Levels handled per pass: the sliding window of `2^g` blocks must fit in
/// the cache space left over.
fn group_width(s: &Session) -> u32 {
    let free = (s.cfg().cache() - s.cache_used()) / s.cfg().block();
    (usize::BITS - 1 - free.max(2).leading_zeros()).max(1)
}

fn groups(levels: u32, g: u32) -> Vec<(u32, u32)> {
    (0..levels)
        .step_by(g as usize)
        .map(|i0| (i0, g.min(levels - i0)))
        .collect()
}

/// One pass covering levels `i0 .. i0 + g`. Blocks only move within residue
/// classes modulo `2^i0`; each class is streamed with a window of `2^g`
/// blocks, so a block can be written as soon as every possible source for
/// its slot has been read.
fn route_pass(
    s: &mut Session,
    store: &mut BlockStore,
    region: Region,
    i0: u32,
    g: u32,
    dir: Direction,
) -> Result<usize> {
    let stride = 1usize << i0;
    let window = 1usize << g;
    let mask = (1u64 << g) - 1;
    let mut collisions = 0;
    for r in 0..stride.min(region.len) {
        let class_len = (region.len - r).div_ceil(stride);
        let addr = |t: usize| match dir {
            Direction::Compact => region.addr(r + t * stride),
            Direction::Expand => region.addr(r + (class_len - 1 - t) * stride),
        };
        let mut pending: BTreeMap<usize, Block> = BTreeMap::new();
        let mut visited: BTreeSet<(usize, u32)> = BTreeSet::new();
        let mut next_out = 0usize;
        for t in 0..class_len {
            let mut blk = s.read_block(store, addr(t))?;
            if blk.active {
                let lawful = match dir {
                    Direction::Compact => blk.label & ((1u64 << i0) - 1) == 0,
                    Direction::Expand => blk.label >> (i0 + g) == 0,
                };
                let x = ((blk.label >> i0) & mask) as usize;
                if !lawful || x > t {
                    collisions += 1;
                    s.drop_block(blk);
                } else {
                    for l in 0..g {
                        let off = match dir {
                            Direction::Compact => x & ((2usize << l) - 1),
                            Direction::Expand => x & !((1usize << (g - 1 - l)) - 1),
                        };
                        if !visited.insert((t - off, l)) {
                            collisions += 1;
                        }
                    }
                    blk.label -= (x as u64) << i0;
                    match pending.entry(t - x) {
                        std::collections::btree_map::Entry::Occupied(_) => {
                            collisions += 1;
                            s.drop_block(blk);
                        }
                        std::collections::btree_map::Entry::Vacant(e) => {
                            e.insert(blk);
                        }
                    }
                }
            } else {
                s.drop_block(blk);
            }
            if t + 1 >= window {
                emit(s, store, &mut pending, &mut visited, next_out, addr(next_out))?;
                next_out += 1;
            }
        }
        while next_out < class_len {
            emit(s, store, &mut pending, &mut visited, next_out, addr(next_out))?;
            next_out += 1;
        }
    }
    Ok(collisions)
}

fn emit(
    s: &mut Session,
    store: &mut BlockStore,
    pending: &mut BTreeMap<usize, Block>,
    visited: &mut BTreeSet<(usize, u32)>,
    u: usize,
    addr: usize,
) -> Result<()> {
    let blk = match pending.remove(&u) {
        Some(b) => b,
        None => s.new_block()?,
    };
    *visited = visited.split_off(&(u + 1, 0));
    s.write_block(store, addr, blk)
}

fn run_network(
    s: &mut Session,
    store: &mut BlockStore,
    region: Region,
    dir: Direction,
) -> Result<RouteStats> {
    let levels = levels_for(region.len);
    let mut plan = groups(levels, group_width(s));
    if dir == Direction::Expand {
        plan.reverse();
    }
    let mut stats = RouteStats {
        levels,
        ..RouteStats::default()
    };
    for (i0, g) in plan {
        stats.collisions += route_pass(s, store, region, i0, g, dir)?;
        stats.passes += 1;
    }
    Ok(stats)
}

/// Routes every active block of `a` left by its label, in place, counting
/// collisions instead of failing. Inactive blocks are overwritten by vacant
/// ones.
pub fn butterfly_route_counted(s: &mut Session, store: &mut BlockStore, a: Region) -> Result<RouteStats> {
    run_network(s, store, a, Direction::Compact)
}

/// Tight compaction network: after the call the active blocks of `a` sit at
/// positions `j - label`, with labels cleared. The access sequence is fixed
/// by `|a|` and the free cache; invalid labels are detected client-side and
/// reported after the full sequence has run.
pub fn butterfly_route(s: &mut Session, store: &mut BlockStore, a: Region) -> Result<RouteStats> {
    let stats = butterfly_route_counted(s, store, a)?;
    if stats.collisions > 0 {
        return Err(Error::InvalidLabels(format!(
            "{} collisions while routing {} blocks",
            stats.collisions, a.len
        )));
    }
    Ok(stats)
}

/// Reverse network: copies `d` into the front of `target` (blanking the
/// rest), then moves every active block right by its label.
pub fn butterfly_expand(
    s: &mut Session,
    store: &mut BlockStore,
    d: Region,
    target: Region,
) -> Result<RouteStats> {
    if target.len < d.len {
        return Err(Error::InvalidLabels(format!(
            "target of {} blocks smaller than source of {}",
            target.len, d.len
        )));
    }
    for i in 0..target.len {
        let blk = if i < d.len {
            s.read_block(store, d.addr(i))?
        } else {
            s.new_block()?
        };
        s.write_block(store, target.addr(i), blk)?;
    }
    let stats = run_network(s, store, target, Direction::Expand)?;
    if stats.collisions > 0 {
        return Err(Error::InvalidLabels(format!(
            "{} collisions while expanding into {} blocks",
            stats.collisions, target.len
        )));
    }
    Ok(stats)
}
