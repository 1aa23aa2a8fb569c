use crate::error::Result;
use crate::iblt::{decode_cells, encode_cells, rows_for, IbltHasher, StoredIblt, CELL_WORDS, DEFAULT_K};
use crate::model::{BlockStore, Region, Session};
use crate::primitives::{butterfly_route, compute_distance_labels, consolidate};

use super::{CompactionResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseParams {
    /// Hash functions per key.
    pub k: usize,
    /// Table rows per capacity block.
    pub table_factor: f64,
}

impl Default for SparseParams {
    fn default() -> Self {
        SparseParams {
            k: DEFAULT_K,
            table_factor: 3.0,
        }
    }
}

fn table_rows(blocks: usize, p: &SparseParams) -> usize {
    rows_for(blocks, p.k, p.table_factor / p.k as f64)
}

/// Whether the lookup table for `capacity` cells, plus one row in transit,
/// fits in the cache space currently free.
pub fn sparse_fits_cache(s: &Session, capacity: usize, p: &SparseParams) -> bool {
    let rb = s.cfg().blocks_for(capacity);
    let free = (s.cfg().cache() - s.cache_used()) / s.cfg().block();
    table_rows(rb, p) + 1 <= free
}

/// Tight order-preserving compaction of the distinguished cells of `a` into
/// a fresh region of `ceil(capacity/B)` blocks.
///
/// After consolidation every block index is inserted into a lookup table
/// held on the server (a real insert for occupied blocks, a touch for the
/// rest). The table is then streamed through the cache and listed
/// privately. When the table cannot fit in the cache the blocks are routed
/// through the compaction network instead; the choice depends on the
/// capacity and cache size only.
pub fn tight_sparse(
    s: &mut Session,
    store: &mut BlockStore,
    a: Region,
    capacity: usize,
    p: &SparseParams,
) -> Result<CompactionResult> {
    let b = s.cfg().block();
    let rb = s.cfg().blocks_for(capacity);
    let work = store.alloc(a.len);
    let out = store.alloc(rb);
    let count = consolidate(s, store, a, work)?;
    let mut res = CompactionResult::new(out, capacity, true, true, count);
    if count > capacity {
        res.fail(Failure::CapacityExceeded { count, capacity });
    }

    if !sparse_fits_cache(s, capacity, p) {
        compute_distance_labels(s, store, work)?;
        butterfly_route(s, store, work)?;
        s.copy_region(store, work.slice(0, rb.min(work.len)), out)?;
        return Ok(res);
    }

    let hasher = IbltHasher::new(s.tape(), p.k, table_rows(rb, p))?;
    let table = StoredIblt::alloc(store, hasher, b * CELL_WORDS);
    for i in 0..work.len {
        let blk = s.read_block(store, work.addr(i))?;
        if blk.is_vacant() {
            table.touch(s, store, i as u64)?;
        } else {
            table.insert(s, store, i as u64, &encode_cells(&blk.cells))?;
        }
        s.drop_block(blk);
    }
    let mem = table.load(s, store)?;
    let listing = mem.list_entries();
    s.release(table.region().len * b);
    if !listing.complete {
        res.fail(Failure::DecodeFailure);
    }
    let mut pairs = listing.pairs;
    pairs.sort_by_key(|(key, _)| *key);
    let mut pairs = pairs.into_iter();
    for j in 0..rb {
        let mut blk = s.new_block()?;
        if let Some((_, words)) = pairs.next() {
            blk.fill(decode_cells(&words));
        }
        s.write_block(store, out.addr(j), blk)?;
    }
    Ok(res)
}

/// Deterministic tight order-preserving compaction: consolidate, label and
/// route. The output is the first `ceil(capacity/B)` blocks of the routed
/// working copy.
pub fn tight_dense(
    s: &mut Session,
    store: &mut BlockStore,
    a: Region,
    capacity: usize,
) -> Result<CompactionResult> {
    s.cfg().require_cache_blocks(3, "tight compaction")?;
    let work = store.alloc(a.len);
    let count = consolidate(s, store, a, work)?;
    compute_distance_labels(s, store, work)?;
    butterfly_route(s, store, work)?;
    let rb = s.cfg().blocks_for(capacity).min(work.len);
    let mut res = CompactionResult::new(work.slice(0, rb), capacity, true, true, count);
    if count > capacity {
        res.fail(Failure::CapacityExceeded { count, capacity });
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cell, Item, MemConfig};
    use proptest::prelude::*;

    fn load(marks: &[bool], b: usize, m: usize, seed: u64) -> (Session, BlockStore, Region) {
        let cfg = MemConfig::new(marks.len(), b, m * b).unwrap();
        let n = cfg.blocks();
        let mut store = BlockStore::new(&cfg, n);
        let r = store.initial(n);
        let cells: Vec<Cell> = marks
            .iter()
            .enumerate()
            .map(|(i, &d)| Cell::Occupied(Item::new(100 + i as u64, 0, i as u64).marked(d)))
            .collect();
        store.load(r, &cells);
        (Session::new(cfg, seed), store, r)
    }

    fn origins(st: &BlockStore, r: Region) -> Vec<u64> {
        st.peek_cells(r).iter().filter_map(|c| c.origin().ok()).collect()
    }

    #[test]
    fn sparse_small_example() {
        let marks: Vec<bool> = (0..16).map(|i| [2, 5, 11, 13].contains(&i)).collect();
        let (mut s, mut st, a) = load(&marks, 1, 32, 1);
        let res = tight_sparse(&mut s, &mut st, a, 4, &SparseParams::default()).unwrap();
        assert!(res.succeeded);
        assert_eq!(res.output.len, 4);
        assert_eq!(origins(&st, res.output), vec![2, 5, 11, 13]);
        assert_eq!(s.cache_used(), 0);
    }

    #[test]
    fn sparse_identity_when_all_marked() {
        let (mut s, mut st, a) = load(&[true; 12], 2, 40, 2);
        let res = tight_sparse(&mut s, &mut st, a, 12, &SparseParams::default()).unwrap();
        assert!(res.succeeded);
        assert_eq!(origins(&st, res.output), (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn sparse_falls_back_to_network() {
        let marks: Vec<bool> = (0..64).map(|i| i % 3 == 0).collect();
        let (mut s, mut st, a) = load(&marks, 2, 4, 3);
        assert!(!sparse_fits_cache(&s, 22, &SparseParams::default()));
        let res = tight_sparse(&mut s, &mut st, a, 22, &SparseParams::default()).unwrap();
        assert!(res.succeeded);
        let want: Vec<u64> = (0..64).filter(|i| i % 3 == 0).collect();
        assert_eq!(origins(&st, res.output), want);
    }

    #[test]
    fn sparse_over_capacity_is_reported() {
        let (mut s, mut st, a) = load(&[true; 10], 1, 64, 4);
        let res = tight_sparse(&mut s, &mut st, a, 4, &SparseParams::default()).unwrap();
        assert!(!res.succeeded);
        assert!(matches!(res.failure, Some(Failure::CapacityExceeded { count: 10, capacity: 4 })));
    }

    #[test]
    fn dense_empty_matches_full_trace() {
        let (mut s1, mut st1, a1) = load(&[false; 40], 4, 3, 0);
        let (mut s2, mut st2, a2) = load(&[true; 40], 4, 3, 0);
        let r1 = tight_dense(&mut s1, &mut st1, a1, 40).unwrap();
        tight_dense(&mut s2, &mut st2, a2, 40).unwrap();
        assert_eq!(st1.trace(), st2.trace());
        assert!(origins(&st1, r1.output).is_empty());
    }

    proptest! {
        #[test]
        fn dense_left_packs(marks in prop::collection::vec(any::<bool>(), 1..200), b in 1usize..5, m in 3usize..10) {
            let (mut s, mut st, a) = load(&marks, b, m, 0);
            let res = tight_dense(&mut s, &mut st, a, marks.len()).unwrap();
            let want: Vec<u64> = (0..marks.len() as u64).filter(|&i| marks[i as usize]).collect();
            prop_assert_eq!(origins(&st, res.output), want);
        }

        #[test]
        fn sparse_trace_fixed(
            a in prop::collection::vec(prop::bool::weighted(0.1), 96),
            b in prop::collection::vec(prop::bool::weighted(0.1), 96),
        ) {
            let (mut s1, mut st1, r1) = load(&a, 2, 64, 9);
            let (mut s2, mut st2, r2) = load(&b, 2, 64, 9);
            let p = SparseParams::default();
            let x = tight_sparse(&mut s1, &mut st1, r1, 24, &p).unwrap();
            tight_sparse(&mut s2, &mut st2, r2, 24, &p).unwrap();
            prop_assert_eq!(st1.trace(), st2.trace());
            if x.succeeded {
                let want: Vec<u64> = (0..96u64).filter(|&i| a[i as usize]).collect();
                prop_assert_eq!(origins(&st1, x.output), want);
            }
        }
    }
}
