use crate::error::{require, Result};
use crate::model::{BlockStore, MemConfig, Region, Session};
use crate::primitives::{consolidate, sort_by_origin, thinning_pass};

use super::{tight_sparse, CompactionResult, Failure, SparseParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogstarParams {
    /// Below this many blocks the input is simply sorted.
    pub n0: usize,
    /// Initial thinning passes into the main area.
    pub c0: usize,
    /// First term of the tower sequence.
    pub t1: u32,
    pub sparse: SparseParams,
}

impl Default for LogstarParams {
    fn default() -> Self {
        LogstarParams {
            n0: 1024,
            c0: 8,
            t1: 4,
            sparse: SparseParams::default(),
        }
    }
}

/// Tower-of-twos sequence `t1, 2^t1, 2^2^t1, ...` up to (and including) the
/// first term of at least `limit`.
pub fn tower(t1: u32, limit: u64) -> Vec<u64> {
    let mut out = vec![t1 as u64];
    while *out.last().unwrap() < limit && *out.last().unwrap() < 63 {
        let t = *out.last().unwrap();
        out.push(1u64 << t);
    }
    out
}

/// Output length: a main area of `4r` blocks plus a reserve of `ceil(r/4)`.
pub fn logstar_output_blocks(cfg: &MemConfig, capacity: usize) -> usize {
    let rb = cfg.blocks_for(capacity);
    4 * rb + rb.div_ceil(4)
}

fn log2_sq(n: usize) -> f64 {
    let l = (n.max(2) as f64).log2();
    l * l
}

/// Copies `parts` one after another into a fresh region.
fn concat(s: &mut Session, store: &mut BlockStore, parts: &[Region]) -> Result<Region> {
    let total = parts.iter().map(|r| r.len).sum();
    let out = store.alloc(total);
    let mut at = 0;
    for p in parts {
        s.copy_region(store, *p, out.slice(at, p.len))?;
        at += p.len;
    }
    Ok(out)
}

/// Loose compaction into `4.25 * ceil(capacity/B)` blocks with
/// `O(n log* n)` I/Os and only `M >= 2B`.
///
/// Small inputs are sorted; sparse inputs go straight to tight sparse
/// compaction. Otherwise `c0` thinning passes fill the main area and
/// phases driven by the tower sequence shrink what is left: a thinning-out
/// step through an auxiliary array, then a region step that tightly
/// compacts each region of `2^(4t)` blocks and thins the result into the
/// main area. When few enough blocks can remain the rest is tightly
/// compacted into the reserve. The order of items is not preserved.
pub fn loose_logstar(
    s: &mut Session,
    store: &mut BlockStore,
    a: Region,
    capacity: usize,
    p: &LogstarParams,
) -> Result<CompactionResult> {
    let cfg = *s.cfg();
    let b = cfg.block();
    require(4 * capacity < a.len * b || capacity == 0, || {
        format!("loose compaction needs R < N/4 (R={capacity}, N={})", a.len * b)
    })?;
    require(p.t1 >= 2 && p.c0 >= 1, || "log-star compaction needs t1 >= 2 and c0 >= 1".into())?;
    let n = a.len;
    let rb = cfg.blocks_for(capacity);
    let out = store.alloc(logstar_output_blocks(&cfg, capacity));
    let work = store.alloc(n);
    let count = consolidate(s, store, a, work)?;
    let mut res = CompactionResult::new(out, capacity, false, false, count);
    if count > capacity {
        res.fail(Failure::CapacityExceeded { count, capacity });
    }

    if n < p.n0 {
        sort_by_origin(s, store, work)?;
        let k = rb.min(n);
        s.copy_region(store, work.slice(0, k), out.slice(0, k))?;
        return Ok(res);
    }
    if (rb as f64) < n as f64 / log2_sq(n) {
        let sub = tight_sparse(s, store, work, capacity, &p.sparse)?;
        s.copy_region(store, sub.output, out.slice(0, rb))?;
        if let Some(f) = sub.failure {
            res.fail(f);
        }
        return Ok(res);
    }

    let main = out.slice(0, 4 * rb);
    let reserve = out.slice(4 * rb, out.len - 4 * rb);
    let sparse_bound = n as f64 / log2_sq(n);
    let mut left = 0;
    for _ in 0..p.c0 {
        left = thinning_pass(s, store, work, main, "logstar-init")?;
    }
    let mut arr = work;
    let mut t = p.t1 as u64;
    let mut phase = 1;
    loop {
        let t4 = (t as f64).powi(4);
        let bound = rb as f64 / t4;
        if left as f64 > bound {
            res.fail(Failure::PhaseInvariant {
                phase,
                remaining: left,
                bound: bound.floor() as usize,
            });
        }
        if bound <= sparse_bound {
            let sub = tight_sparse(s, store, arr, reserve.len * b, &p.sparse)?;
            s.copy_region(store, sub.output, reserve)?;
            if let Some(f) = sub.failure {
                res.fail(f);
            }
            return Ok(res);
        }

        // thinning-out step
        let aux = store.alloc(rb.div_ceil(t as usize).max(1));
        for _ in 0..2 {
            thinning_pass(s, store, arr, aux, "logstar-aux")?;
        }
        for _ in 0..t {
            thinning_pass(s, store, aux, main, "logstar-aux-main")?;
        }
        arr = concat(s, store, &[arr, aux])?;

        // region-compaction step
        let span = 1usize << (4 * t).min(40);
        let crowd = (span / (t * t) as usize).max(1);
        let mut parts = Vec::new();
        left = 0;
        let mut start = 0;
        while start < arr.len {
            let len = span.min(arr.len - start);
            let cap_blocks = crowd.min(len);
            let sub = tight_sparse(s, store, arr.slice(start, len), cap_blocks * b, &p.sparse)?;
            if let Some(f) = sub.failure {
                res.fail(f);
            }
            let mut l = 0;
            for _ in 0..t * t {
                l = thinning_pass(s, store, sub.output, main, "logstar-region")?;
            }
            left += l;
            parts.push(sub.output);
            start += len;
        }
        arr = concat(s, store, &parts)?;
        t = if t >= 63 { u64::MAX } else { 1u64 << t };
        phase += 1;
    }
}
