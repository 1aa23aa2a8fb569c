use std::cmp::Ordering;

use crate::error::Result;
use crate::model::{Block, BlockStore, Cell, Item, Region, Session};

/// Comparator pairs of Knuth's merge-exchange network on `n` elements.
pub fn merge_exchange_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    if n < 2 {
        return pairs;
    }
    let t = usize::BITS - (n - 1).leading_zeros();
    let mut p = 1usize << (t - 1);
    while p > 0 {
        let mut q = 1usize << (t - 1);
        let mut r = 0;
        let mut d = p;
        loop {
            for i in 0..n - d {
                if i & p == r {
                    pairs.push((i, i + d));
                }
            }
            if q == p {
                break;
            }
            d = q - p;
            q >>= 1;
            r = p;
        }
        p >>= 1;
    }
    pairs
}

/// Order used throughout: occupied cells by `key_fn` then original
/// position, empty cells last.
pub fn cell_order_by<K: Ord>(key_fn: impl Fn(&Item) -> K) -> impl Fn(&Cell, &Cell) -> Ordering {
    move |a, b| match (a, b) {
        (Cell::Occupied(x), Cell::Occupied(y)) => {
            key_fn(x).cmp(&key_fn(y)).then(x.origin.cmp(&y.origin))
        }
        (Cell::Occupied(_), Cell::Empty) => Ordering::Less,
        (Cell::Empty, Cell::Occupied(_)) => Ordering::Greater,
        (Cell::Empty, Cell::Empty) => Ordering::Equal,
    }
}

/// Blocks per sorting chunk: two chunks must fit in the cache together.
fn chunk_blocks(s: &Session) -> usize {
    (s.cfg().cache_blocks() / 2).max(1)
}

fn read_run(s: &mut Session, store: &mut BlockStore, r: Region) -> Result<Vec<Block>> {
    (0..r.len).map(|i| s.read_block(store, r.addr(i))).collect()
}

fn write_run(
    s: &mut Session,
    store: &mut BlockStore,
    r: Region,
    blocks: Vec<Block>,
    cells: &mut impl Iterator<Item = Cell>,
) -> Result<()> {
    let b = s.cfg().block();
    for (i, mut blk) in blocks.into_iter().enumerate() {
        blk.clear_meta();
        blk.fill(cells.by_ref().take(b));
        s.write_block(store, r.addr(i), blk)?;
    }
    Ok(())
}

/// Deterministic data-oblivious sort of the cells of `region` under `cmp`.
///
/// Runs of `floor(m/2)` blocks are sorted in cache, then merged by a
/// merge-exchange network whose comparators are run-level merge-splits.
/// The access sequence depends only on the region length and `M/B`.
/// Block metadata is cleared.
pub fn sort_cells_by(
    s: &mut Session,
    store: &mut BlockStore,
    region: Region,
    cmp: impl Fn(&Cell, &Cell) -> Ordering,
) -> Result<()> {
    let w = chunk_blocks(s);
    let chunks = region.len.div_ceil(w);
    let chunk = |i: usize| {
        let start = i * w;
        region.slice(start, w.min(region.len - start))
    };
    for i in 0..chunks {
        let r = chunk(i);
        let blocks = read_run(s, store, r)?;
        let mut cells: Vec<Cell> = blocks.iter().flat_map(|b| b.cells.iter().copied()).collect();
        cells.sort_by(&cmp);
        write_run(s, store, r, blocks, &mut cells.into_iter())?;
    }
    for (lo, hi) in merge_exchange_pairs(chunks) {
        let (rl, rh) = (chunk(lo), chunk(hi));
        let bl = read_run(s, store, rl)?;
        let bh = read_run(s, store, rh)?;
        let mut cells: Vec<Cell> = bl
            .iter()
            .chain(bh.iter())
            .flat_map(|b| b.cells.iter().copied())
            .collect();
        cells.sort_by(&cmp);
        let mut it = cells.into_iter();
        write_run(s, store, rl, bl, &mut it)?;
        write_run(s, store, rh, bh, &mut it)?;
    }
    Ok(())
}

/// [`sort_cells_by`] with occupied cells ordered by `key_fn` then origin and
/// empty cells treated as +infinity.
pub fn det_oblivious_sort<K: Ord>(
    s: &mut Session,
    store: &mut BlockStore,
    region: Region,
    key_fn: impl Fn(&Item) -> K,
) -> Result<()> {
    sort_cells_by(s, store, region, cell_order_by(key_fn))
}

/// Sort by key.
pub fn sort_by_key(s: &mut Session, store: &mut BlockStore, region: Region) -> Result<()> {
    det_oblivious_sort(s, store, region, |it| it.key)
}

/// Sort by original position.
pub fn sort_by_origin(s: &mut Session, store: &mut BlockStore, region: Region) -> Result<()> {
    det_oblivious_sort(s, store, region, |it| it.origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MemConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn run(keys: &[Option<u64>], b: usize, m: usize) -> (BlockStore, Region) {
        let cfg = MemConfig::new(keys.len(), b, m * b).unwrap();
        let n = cfg.blocks();
        let mut store = BlockStore::new(&cfg, n);
        let r = store.initial(n);
        let cells: Vec<Cell> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| match k {
                Some(k) => Cell::Occupied(Item::new(*k, 0, i as u64)),
                None => Cell::Empty,
            })
            .collect();
        store.load(r, &cells);
        let mut s = Session::new(cfg, 0);
        sort_by_key(&mut s, &mut store, r).unwrap();
        assert_eq!(s.cache_used(), 0);
        (store, r)
    }

    fn out_keys(st: &BlockStore, r: Region) -> Vec<Option<u64>> {
        st.peek_cells(r).iter().map(|c| c.item().map(|it| it.key)).collect()
    }

    #[test]
    fn network_sorts_zero_one_inputs() {
        for n in 1..=12usize {
            let pairs = merge_exchange_pairs(n);
            for mask in 0u32..(1 << n) {
                let mut v: Vec<u32> = (0..n).map(|i| (mask >> i) & 1).collect();
                for &(i, j) in &pairs {
                    if v[i] > v[j] {
                        v.swap(i, j);
                    }
                }
                assert!(v.windows(2).all(|w| w[0] <= w[1]), "n={n} mask={mask}");
            }
        }
    }

    #[test]
    fn three_keys() {
        let (st, r) = run(&[Some(3), Some(1), Some(2)], 1, 2);
        assert_eq!(out_keys(&st, r), vec![Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn equal_keys_by_origin() {
        let (st, r) = run(&[Some(5); 9], 2, 2);
        let origins: Vec<u64> = st.peek_cells(r).iter().filter_map(|c| c.origin().ok()).collect();
        assert_eq!(origins, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn random_4096_matches_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let keys: Vec<Option<u64>> = (0..4096).map(|_| Some(rng.gen_range(0..1000))).collect();
        let (st, r) = run(&keys, 8, 8);
        let mut want = keys.clone();
        want.sort();
        assert_eq!(out_keys(&st, r), want);
    }

    #[test]
    fn trace_depends_on_shape_only() {
        let a: Vec<Option<u64>> = (0..100).map(Some).collect();
        let b: Vec<Option<u64>> = (0..100).rev().map(|k| (k % 3 != 0).then_some(k)).collect();
        let (s1, _) = run(&a, 4, 6);
        let (s2, _) = run(&b, 4, 6);
        assert_eq!(s1.trace(), s2.trace());
    }

    proptest! {
        #[test]
        fn sorted_permutation(
            keys in prop::collection::vec(prop::option::weighted(0.8, 0u64..50), 1..300),
            b in 1usize..6,
            m in 2usize..9,
        ) {
            let (st, r) = run(&keys, b, m);
            let mut want = keys.clone();
            want.sort_by(|x, y| match (x, y) {
                (None, None) => Ordering::Equal,
                (None, _) => Ordering::Greater,
                (_, None) => Ordering::Less,
                (Some(a), Some(b)) => a.cmp(b),
            });
            let mut got = out_keys(&st, r);
            got.truncate(keys.len());
            prop_assert_eq!(got, want);
        }
    }
}
