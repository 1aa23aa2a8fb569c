use std::collections::VecDeque;

use crate::error::{require, Result};
use crate::model::{BlockStore, Cell, Region, Session};

/// Scans `src` and packs the cells selected by `keep` into `dst` so that
/// every output block except the last is either full of selected cells or
/// empty. Order among selected cells is preserved. Unselected cells are
/// dropped.
///
/// Exactly `n` reads and `n` writes for `n = src.len`; `dst` needs `n`
/// blocks and may equal `src`. Returns the number of selected cells.
pub fn consolidate_by(
    s: &mut Session,
    store: &mut BlockStore,
    src: Region,
    dst: Region,
    keep: impl Fn(&Cell) -> bool,
) -> Result<usize> {
    let b = s.cfg().block();
    require(s.cfg().cache() >= 2 * b, || "consolidation requires M >= 2B".into())?;
    require(dst.len >= src.len, || {
        format!("output region of {} blocks, need {}", dst.len, src.len)
    })?;
    let mut buf: VecDeque<Cell> = VecDeque::new();
    let mut kept = 0;
    for i in 0..src.len {
        let mut y = s.read_block(store, src.addr(i))?;
        let before = buf.len();
        buf.extend(y.cells.iter().copied().filter(|c| !c.is_empty() && keep(c)));
        kept += buf.len() - before;
        if i == 0 {
            s.drop_block(y);
            s.hold(buf.len())?;
            continue;
        }
        y.clear_meta();
        s.release(before);
        if buf.len() >= b {
            y.fill(buf.drain(..b));
        } else {
            y.fill(std::iter::empty());
        }
        s.hold(buf.len())?;
        s.write_block(store, dst.addr(i - 1), y)?;
    }
    if src.len > 0 {
        s.release(buf.len());
        let mut x = s.new_block()?;
        x.fill(buf.drain(..));
        s.write_block(store, dst.addr(src.len - 1), x)?;
    }
    Ok(kept)
}

/// [`consolidate_by`] selecting distinguished cells.
pub fn consolidate(s: &mut Session, store: &mut BlockStore, src: Region, dst: Region) -> Result<usize> {
    consolidate_by(s, store, src, dst, Cell::is_distinguished)
}

/// Blocks written by [`consolidate_multiway`] for an input of `n` blocks.
pub fn multiway_output_blocks(n: usize, colors: usize) -> usize {
    n + 2 * colors - 1
}

/// Rearranges all occupied cells of `src` (colors `0..colors`) into
/// monochromatic blocks in `dst`. One block is written per block read, then
/// a fixed flush of `2*colors - 1` blocks: full blocks first, then one
/// partial block per color that still has cells, then empties. Only the
/// flush may contain partial blocks.
pub fn consolidate_multiway(
    s: &mut Session,
    store: &mut BlockStore,
    src: Region,
    dst: Region,
    colors: usize,
) -> Result<()> {
    let b = s.cfg().block();
    require(colors >= 1, || "need at least one color".into())?;
    s.cfg().require_cache_blocks(colors + 1, "multiway consolidation")?;
    let out_len = multiway_output_blocks(src.len, colors);
    require(dst.len >= out_len, || {
        format!("output region of {} blocks, need {out_len}", dst.len)
    })?;
    let mut groups: Vec<VecDeque<Cell>> = vec![VecDeque::new(); colors];
    let mut held = 0usize;
    for i in 0..src.len {
        let mut y = s.read_block(store, src.addr(i))?;
        for c in y.cells.iter().filter(|c| !c.is_empty()) {
            let color = c.item().map(|it| it.color as usize).unwrap_or(0);
            require(color < colors, || format!("cell color {color} outside 0..{colors}"))?;
            groups[color].push_back(*c);
        }
        s.release(held);
        y.clear_meta();
        match groups.iter_mut().find(|g| g.len() >= b) {
            Some(g) => y.fill(g.drain(..b)),
            None => y.fill(std::iter::empty()),
        }
        held = groups.iter().map(VecDeque::len).sum();
        s.hold(held)?;
        s.write_block(store, dst.addr(i), y)?;
    }
    s.release(held);
    let mut pending: Vec<Vec<Cell>> = Vec::new();
    for g in groups.iter_mut() {
        while g.len() >= b {
            pending.push(g.drain(..b).collect());
        }
    }
    for g in groups.iter_mut() {
        if !g.is_empty() {
            pending.push(g.drain(..).collect());
        }
    }
    debug_assert!(pending.len() <= 2 * colors - 1);
    let mut pending = pending.into_iter();
    for j in src.len..out_len {
        let mut x = s.new_block()?;
        if let Some(cells) = pending.next() {
            x.fill(cells);
        }
        s.write_block(store, dst.addr(j), x)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Item, MemConfig};
    use proptest::prelude::*;

    fn cell(key: u64, dist: bool) -> Cell {
        Cell::Occupied(Item::new(key, key, key).marked(dist))
    }

    fn setup(cells: &[Cell], b: usize, m: usize) -> (Session, BlockStore, Region) {
        let cfg = MemConfig::new(cells.len(), b, m * b).unwrap();
        let n = cfg.blocks();
        let mut store = BlockStore::new(&cfg, n);
        let r = store.initial(n);
        store.load(r, cells);
        (Session::new(cfg, 1), store, r)
    }

    fn keys(cells: &[Cell]) -> Vec<u64> {
        cells.iter().filter_map(|c| c.item().map(|it| it.key)).collect()
    }

    #[test]
    fn all_distinguished_is_identity() {
        let cells: Vec<Cell> = (0..8).map(|k| cell(k, true)).collect();
        let (mut s, mut st, r) = setup(&cells, 4, 2);
        consolidate(&mut s, &mut st, r, r).unwrap();
        assert_eq!(keys(&st.peek_cells(r)), (0..8).collect::<Vec<_>>());
        assert_eq!(st.peek_block(0).occupied(), 4);
        assert_eq!((st.reads(), st.writes()), (2, 2));
    }

    #[test]
    fn alternating_packs_first_block() {
        let cells: Vec<Cell> = (0..8).map(|k| cell(k, k % 2 == 0)).collect();
        let (mut s, mut st, r) = setup(&cells, 4, 2);
        consolidate(&mut s, &mut st, r, r).unwrap();
        assert_eq!(keys(&st.peek_cells(r.slice(0, 1))), vec![0, 2, 4, 6]);
        assert!(st.peek_block(1).is_vacant());
    }

    #[test]
    fn trace_independent_of_marks() {
        let none: Vec<Cell> = (0..40).map(|k| cell(k, false)).collect();
        let all: Vec<Cell> = (0..40).map(|k| cell(k, true)).collect();
        let (mut s1, mut st1, r1) = setup(&none, 4, 2);
        let (mut s2, mut st2, r2) = setup(&all, 4, 2);
        consolidate(&mut s1, &mut st1, r1, r1).unwrap();
        consolidate(&mut s2, &mut st2, r2, r2).unwrap();
        assert_eq!(st1.trace(), st2.trace());
        assert!(st1.peek_cells(r1).iter().all(Cell::is_empty));
    }

    fn colored(key: u64, color: u32) -> Cell {
        let mut it = Item::new(key, 0, key);
        it.color = color;
        Cell::Occupied(it)
    }

    fn multiway(cells: &[Cell], b: usize, colors: usize) -> (BlockStore, Region) {
        let (mut s, mut st, r) = setup(cells, b, colors + 2);
        let out = st.alloc(multiway_output_blocks(r.len, colors));
        consolidate_multiway(&mut s, &mut st, r, out, colors).unwrap();
        assert_eq!(s.cache_used(), 0);
        (st, out)
    }

    #[test]
    fn multiway_alternating_two_colors() {
        let cells: Vec<Cell> = (0..8).map(|k| colored(k, (k % 2) as u32)).collect();
        let (st, out) = multiway(&cells, 2, 2);
        let mut full = 0;
        for i in 0..out.len {
            let blk = st.peek_block(out.addr(i));
            let cs: Vec<u32> = blk.items().map(|it| it.color).collect();
            assert!(cs.windows(2).all(|w| w[0] == w[1]));
            full += (cs.len() == 2) as usize;
        }
        assert_eq!(full, 4);
    }

    #[test]
    fn multiway_trace_fixed() {
        let abab: Vec<Cell> = (0..48).map(|k| colored(k, (k % 3) as u32)).collect();
        let aabb: Vec<Cell> = (0..48).map(|k| colored(k, (k / 16) as u32)).collect();
        let (s1, _) = multiway(&abab, 4, 3);
        let (s2, _) = multiway(&aabb, 4, 3);
        assert_eq!(s1.trace(), s2.trace());
    }

    proptest! {
        #[test]
        fn consolidation_preserves_marked_order(
            marks in prop::collection::vec(any::<bool>(), 1..200),
            b in 1usize..9,
        ) {
            let cells: Vec<Cell> = marks.iter().enumerate().map(|(k, &d)| cell(k as u64, d)).collect();
            let (mut s, mut st, r) = setup(&cells, b, 2);
            consolidate(&mut s, &mut st, r, r).unwrap();
            let want: Vec<u64> = (0..marks.len() as u64).filter(|&k| marks[k as usize]).collect();
            prop_assert_eq!(keys(&st.peek_cells(r)), want.clone());
            for i in 0..r.len.saturating_sub(1) {
                let occ = st.peek_block(i).occupied();
                prop_assert!(occ == 0 || occ == b);
            }
            prop_assert_eq!((st.reads(), st.writes()), (r.len as u64, r.len as u64));
            prop_assert!(s.peak_cache() <= 2 * b);
        }

        #[test]
        fn multiway_blocks_monochromatic(
            colors_in in prop::collection::vec(0u32..4, 1..150),
            b in 1usize..6,
        ) {
            let cells: Vec<Cell> = colors_in.iter().enumerate().map(|(k, &c)| colored(k as u64, c)).collect();
            let (st, out) = multiway(&cells, b, 4);
            let n = cells.len().div_ceil(b);
            let mut seen = 0;
            for i in 0..out.len {
                let blk = st.peek_block(out.addr(i));
                let cs: Vec<u32> = blk.items().map(|it| it.color).collect();
                prop_assert!(cs.windows(2).all(|w| w[0] == w[1]));
                if i < n {
                    prop_assert!(cs.is_empty() || cs.len() == b);
                }
                seen += cs.len();
            }
            prop_assert_eq!(seen, cells.len());
        }
    }
}
