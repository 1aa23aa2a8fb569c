use std::collections::BTreeMap;

use crate::model::{Cell, Item};

use super::{Algo, RunOutcome, RunParams};

type Id = (u64, u64);

fn id(it: &Item) -> Id {
    (it.key, it.origin)
}

fn ids<'a>(cells: impl IntoIterator<Item = &'a Cell>) -> Vec<Id> {
    cells.into_iter().filter_map(Cell::item).map(id).collect()
}

/// Distinguished items in input order.
pub fn stable_filter(cells: &[Cell]) -> Vec<Item> {
    cells.iter().filter_map(Cell::item).filter(|it| it.distinguished).copied().collect()
}

/// Occupied items ordered by `(key, origin)`.
pub fn oracle_sort(cells: &[Cell]) -> Vec<Item> {
    let mut v: Vec<Item> = cells.iter().filter_map(Cell::item).copied().collect();
    v.sort_by_key(id);
    v
}

/// Item of rank `k` (1-based) among all cells, empty cells ranking last.
pub fn oracle_select(cells: &[Cell], k: usize) -> Option<Item> {
    oracle_sort(cells).get(k.checked_sub(1)?).copied()
}

/// Items at ranks `ceil(i n / (q+1))`, `i = 1..=q`.
pub fn oracle_quantiles(cells: &[Cell], q: usize) -> Vec<Option<Item>> {
    let n = cells.len();
    (1..=q).map(|i| oracle_select(cells, (i * n).div_ceil(q + 1))).collect()
}

fn multiset(v: Vec<Id>) -> BTreeMap<Id, usize> {
    let mut m = BTreeMap::new();
    for x in v {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// Compares a run against its plain oracle. `None` when the algorithm has
/// no single correct output (a lone thinning pass).
pub fn check(input: &[Cell], out: &RunOutcome, p: &RunParams) -> Option<bool> {
    let b = out.cfg.block();
    let blocks = |cells: &[Cell]| cells.chunks(b).map(<[Cell]>::to_vec).collect::<Vec<_>>();
    let marked_block = |blk: &[Cell]| blk.iter().any(Cell::is_distinguished);
    let same_items = |x: &[Cell], y: &[Cell]| ids(x) == ids(y);
    let ok = match out.algo {
        Algo::Consolidate => ids(&out.output) == stable_filter(input).iter().map(id).collect::<Vec<_>>(),
        Algo::ConsolidateMultiway => {
            let mono = blocks(&out.output).iter().all(|blk| {
                let mut colors = blk.iter().filter_map(Cell::item).map(|it| it.color);
                colors.next().map_or(true, |c0| colors.all(|c| c == c0))
            });
            mono && multiset(ids(&out.output)) == multiset(ids(input))
        }
        Algo::ThinningPass => return None,
        Algo::DetSort | Algo::PaddedSort | Algo::QuicksortControl => {
            ids(&out.output) == oracle_sort(input).iter().map(id).collect::<Vec<_>>()
        }
        Algo::ButterflyRoute => {
            let active: Vec<Vec<Cell>> = blocks(input).into_iter().filter(|blk| marked_block(blk)).collect();
            let got = blocks(&out.output);
            active.iter().zip(&got).all(|(x, y)| same_items(x, y))
                && got[active.len()..].iter().all(|blk| blk.iter().all(Cell::is_empty))
        }
        Algo::ButterflyExpand => blocks(input).iter().zip(blocks(&out.output)).all(|(x, y)| {
            if marked_block(x) {
                same_items(x, &y)
            } else {
                y.iter().all(Cell::is_empty)
            }
        }),
        Algo::TightSparse | Algo::TightDense => {
            ids(&out.output) == stable_filter(input).iter().map(id).collect::<Vec<_>>()
        }
        Algo::Loose | Algo::LooseLogstar => {
            multiset(ids(&out.output)) == multiset(stable_filter(input).iter().map(id).collect())
        }
        Algo::Select => {
            let k = p.k(&out.cfg);
            out.values.first().copied().flatten().map(|it| id(&it)) == oracle_select(input, k).map(|it| id(&it))
        }
        Algo::Quantiles => {
            let want = oracle_quantiles(input, p.q(&out.cfg));
            want.len() == out.values.len()
                && want.iter().zip(&out.values).all(|(w, g)| w.map(|it| id(&it)) == g.map(|it| id(&it)))
        }
    };
    Some(ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(keys: &[(u64, bool)]) -> Vec<Cell> {
        keys.iter()
            .enumerate()
            .map(|(i, &(k, d))| Cell::Occupied(Item::new(k, 0, i as u64).marked(d)))
            .collect()
    }

    #[test]
    fn filter_keeps_order() {
        let c = cells(&[(5, true), (1, false), (3, true)]);
        assert_eq!(stable_filter(&c).iter().map(|it| it.key).collect::<Vec<_>>(), vec![5, 3]);
    }

    #[test]
    fn select_ranks_empties_last() {
        let mut c = cells(&[(5, false), (1, false)]);
        c.push(Cell::Empty);
        assert_eq!(oracle_select(&c, 1).map(|it| it.key), Some(1));
        assert_eq!(oracle_select(&c, 3), None);
        assert_eq!(oracle_select(&c, 0), None);
    }

    #[test]
    fn quantiles_of_twelve() {
        let c = cells(&(0..12).rev().map(|k| (k, false)).collect::<Vec<_>>());
        let q: Vec<u64> = oracle_quantiles(&c, 3).iter().map(|v| v.unwrap().key).collect();
        assert_eq!(q, vec![2, 5, 8]);
    }
}
