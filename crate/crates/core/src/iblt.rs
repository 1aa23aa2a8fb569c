//! Invertible Bloom lookup tables.
//!
//! [`IbltTable`] is the in-cache table with `insert`, `delete`, `get` and the
//! peeling `list_entries` decoder. [`StoredIblt`] keeps the rows on the
//! server, one word record per row, and offers an insert path whose access
//! sequence depends only on the key: a real insert and a dummy `touch` read
//! and rewrite the same `k` rows.
//!
//! Values are fixed-width word vectors so a whole block can be stored as a
//! value. Sums wrap modulo 2^64.

use std::collections::VecDeque;

use crate::error::{require, Result};
use crate::model::{mix64, BlockStore, Cell, Item, Region, Session, Tape};

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_DELTA: f64 = 2.0;

/// Row count from the sizing rule `ceil(delta * k * n)`, rounded up to a
/// multiple of `k` so the row space splits into `k` equal segments.
pub fn rows_for(n: usize, k: usize, delta: f64) -> usize {
    let raw = (delta * k as f64 * n.max(1) as f64).ceil() as usize;
    raw.div_ceil(k) * k
}

/// The `k` hash functions. Function `i` maps into segment `i`, so the
/// positions of a key are always pairwise distinct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IbltHasher {
    seeds: Vec<u64>,
    segment: usize,
}

impl IbltHasher {
    pub fn new(tape: &mut Tape, k: usize, rows: usize) -> Result<Self> {
        require(k >= 2, || format!("need k >= 2 hash functions, got {k}"))?;
        require(rows >= k && rows % k == 0, || {
            format!("row count {rows} must be a positive multiple of k={k}")
        })?;
        let mut sub = tape.substream("iblt-hash");
        Ok(IbltHasher {
            seeds: (0..k).map(|_| sub.next_u64()).collect(),
            segment: rows / k,
        })
    }

    pub fn k(&self) -> usize {
        self.seeds.len()
    }

    pub fn rows(&self) -> usize {
        self.segment * self.seeds.len()
    }

    pub fn positions(&self, key: u64) -> impl Iterator<Item = usize> + '_ {
        let hk = mix64(key);
        self.seeds
            .iter()
            .enumerate()
            .map(move |(i, &s)| i * self.segment + (mix64(s ^ hk) % self.segment as u64) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub count: i64,
    pub key_sum: u64,
    pub value_sum: Vec<u64>,
}

impl Row {
    fn zero(width: usize) -> Self {
        Row {
            count: 0,
            key_sum: 0,
            value_sum: vec![0; width],
        }
    }

    fn is_zero(&self) -> bool {
        self.count == 0 && self.key_sum == 0 && self.value_sum.iter().all(|&v| v == 0)
    }

    fn add(&mut self, sign: i64, key: u64, value: &[u64]) {
        self.count += sign;
        if sign > 0 {
            self.key_sum = self.key_sum.wrapping_add(key);
            for (s, v) in self.value_sum.iter_mut().zip(value) {
                *s = s.wrapping_add(*v);
            }
        } else {
            self.key_sum = self.key_sum.wrapping_sub(key);
            for (s, v) in self.value_sum.iter_mut().zip(value) {
                *s = s.wrapping_sub(*v);
            }
        }
    }

    pub fn to_words(&self) -> Vec<u64> {
        let mut w = Vec::with_capacity(2 + self.value_sum.len());
        w.push(self.count as u64);
        w.push(self.key_sum);
        w.extend_from_slice(&self.value_sum);
        w
    }

    pub fn from_words(words: &[u64]) -> Self {
        Row {
            count: words[0] as i64,
            key_sum: words[1],
            value_sum: words[2..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Found(Vec<u64>),
    NotFound,
    Unknown,
}

/// Decoder output. `complete` is false when peeling got stuck before the
/// table emptied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Listing {
    pub pairs: Vec<(u64, Vec<u64>)>,
    pub complete: bool,
    /// Row visits made by the decoder.
    pub visits: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IbltTable {
    hasher: IbltHasher,
    rows: Vec<Row>,
}

impl IbltTable {
    pub fn new(hasher: IbltHasher, width: usize) -> Self {
        let rows = vec![Row::zero(width); hasher.rows()];
        IbltTable { hasher, rows }
    }

    /// A table sized for `n` entries with fresh hash functions from `tape`.
    pub fn with_capacity(tape: &mut Tape, n: usize, k: usize, delta: f64, width: usize) -> Result<Self> {
        require(delta >= 1.0, || format!("delta must be at least 1, got {delta}"))?;
        let hasher = IbltHasher::new(tape, k, rows_for(n, k, delta))?;
        Ok(Self::new(hasher, width))
    }

    pub fn hasher(&self) -> &IbltHasher {
        &self.hasher
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn total_count(&self) -> i64 {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn insert(&mut self, key: u64, value: &[u64]) {
        self.apply(1, key, value);
    }

    pub fn delete(&mut self, key: u64, value: &[u64]) {
        self.apply(-1, key, value);
    }

    fn apply(&mut self, sign: i64, key: u64, value: &[u64]) {
        let pos: Vec<usize> = self.hasher.positions(key).collect();
        for p in pos {
            self.rows[p].add(sign, key, value);
        }
    }

    pub fn get(&self, key: u64) -> Lookup {
        for p in self.hasher.positions(key) {
            let row = &self.rows[p];
            if row.count == 0 {
                return Lookup::NotFound;
            }
            if row.count == 1 && row.key_sum == key {
                return Lookup::Found(row.value_sum.clone());
            }
        }
        Lookup::Unknown
    }

    /// Peels pure rows from a scratch copy until none remain.
    pub fn list_entries(&self) -> Listing {
        let mut rows = self.rows.clone();
        let mut work: VecDeque<usize> = (0..rows.len()).filter(|&i| rows[i].count == 1).collect();
        let mut pairs = Vec::new();
        let mut visits = rows.len();
        while let Some(i) = work.pop_front() {
            visits += 1;
            if rows[i].count != 1 {
                continue;
            }
            let key = rows[i].key_sum;
            let value = rows[i].value_sum.clone();
            // A count-1 row whose key does not hash back to it is corrupt.
            if !self.hasher.positions(key).any(|p| p == i) {
                continue;
            }
            for p in self.hasher.positions(key) {
                rows[p].add(-1, key, &value);
                visits += 1;
                if rows[p].count == 1 {
                    work.push_back(p);
                }
            }
            pairs.push((key, value));
        }
        let complete = rows.iter().all(Row::is_zero);
        Listing {
            pairs,
            complete,
            visits,
        }
    }

    /// One `count,key_sum,value_sum...` line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,count,key_sum,value_sum\n");
        for (i, r) in self.rows.iter().enumerate() {
            let vals: Vec<String> = r.value_sum.iter().map(u64::to_string).collect();
            out.push_str(&format!("{i},{},{},{}\n", r.count, r.key_sum, vals.join(" ")));
        }
        out
    }
}

/// Words used to encode one cell inside a table value.
pub const CELL_WORDS: usize = 5;

pub fn encode_cell(c: &Cell, out: &mut Vec<u64>) {
    match c {
        Cell::Empty => out.extend_from_slice(&[0; CELL_WORDS]),
        Cell::Occupied(it) => out.extend_from_slice(&[
            1,
            it.key,
            it.value,
            ((it.color as u64) << 1) | it.distinguished as u64,
            it.origin,
        ]),
    }
}

pub fn decode_cell(w: &[u64]) -> Cell {
    if w[0] == 0 {
        Cell::Empty
    } else {
        Cell::Occupied(Item {
            key: w[1],
            value: w[2],
            distinguished: w[3] & 1 == 1,
            color: (w[3] >> 1) as u32,
            origin: w[4],
        })
    }
}

pub fn encode_cells(cells: &[Cell]) -> Vec<u64> {
    let mut out = Vec::with_capacity(cells.len() * CELL_WORDS);
    cells.iter().for_each(|c| encode_cell(c, &mut out));
    out
}

pub fn decode_cells(words: &[u64]) -> Vec<Cell> {
    words.chunks(CELL_WORDS).map(decode_cell).collect()
}

/// A table whose rows live in the block store, one row per slot.
#[derive(Debug, Clone)]
pub struct StoredIblt {
    hasher: IbltHasher,
    region: Region,
    width: usize,
}

impl StoredIblt {
    pub fn alloc(store: &mut BlockStore, hasher: IbltHasher, width: usize) -> Self {
        let region = store.alloc_words(hasher.rows(), 2 + width);
        StoredIblt {
            hasher,
            region,
            width,
        }
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn hasher(&self) -> &IbltHasher {
        &self.hasher
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn insert(&self, s: &mut Session, store: &mut BlockStore, key: u64, value: &[u64]) -> Result<()> {
        self.update(s, store, key, Some((1, value)))
    }

    pub fn delete(&self, s: &mut Session, store: &mut BlockStore, key: u64, value: &[u64]) -> Result<()> {
        self.update(s, store, key, Some((-1, value)))
    }

    /// Reads and rewrites the rows of `key` without changing them.
    pub fn touch(&self, s: &mut Session, store: &mut BlockStore, key: u64) -> Result<()> {
        self.update(s, store, key, None)
    }

    fn update(
        &self,
        s: &mut Session,
        store: &mut BlockStore,
        key: u64,
        change: Option<(i64, &[u64])>,
    ) -> Result<()> {
        let pos: Vec<usize> = self.hasher.positions(key).collect();
        for p in pos {
            let addr = self.region.addr(p);
            let words = s.read_words(store, addr)?;
            let words = match change {
                Some((sign, value)) => {
                    let mut row = Row::from_words(&words);
                    row.add(sign, key, value);
                    row.to_words()
                }
                None => words,
            };
            s.write_words(store, addr, words)?;
        }
        Ok(())
    }

    /// Scans every row into the cache, returning the in-cache table. The
    /// caller must have room for one row slot plus the table itself, which
    /// is charged as `rows` slots.
    pub fn load(&self, s: &mut Session, store: &mut BlockStore) -> Result<IbltTable> {
        let b = s.cfg().block();
        s.hold(self.hasher.rows() * b)?;
        let mut rows = Vec::with_capacity(self.hasher.rows());
        for i in 0..self.region.len {
            let words = s.read_words(store, self.region.addr(i))?;
            rows.push(Row::from_words(&words));
            s.drop_words(words);
        }
        Ok(IbltTable {
            hasher: self.hasher.clone(),
            rows,
        })
    }

    /// Untraced view of the stored rows.
    pub fn peek(&self, store: &BlockStore) -> IbltTable {
        let rows = (0..self.region.len)
            .map(|i| Row::from_words(store.peek_words(self.region.addr(i))))
            .collect();
        IbltTable {
            hasher: self.hasher.clone(),
            rows,
        }
    }
}
