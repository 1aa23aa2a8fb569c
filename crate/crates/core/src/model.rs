//! The two-party external-memory model.
//!
//! A [`BlockStore`] plays the server: it holds blocks and logs every access
//! as an `(op, address)` pair in an [`AccessTrace`]. A [`Session`] plays the
//! client: it owns the private cache (with hard capacity accounting in
//! cells) and the random [`Tape`]. Every algorithm in this crate touches the
//! store only through a session, so the trace is exactly what an
//! honest-but-curious server would observe.

use std::fmt;
use std::io::{self, Write};
use std::ops::Range;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Model parameters: `N` cells of input, blocks of `B` cells, a private cache
/// of `M` cells, the failure exponent `d` and the wide-block / tall-cache
/// exponent `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemConfig {
    n_cells: usize,
    block: usize,
    cache: usize,
    d: u32,
    epsilon: f64,
}

impl MemConfig {
    pub fn new(n_cells: usize, block: usize, cache: usize) -> Result<Self> {
        if block == 0 {
            return Err(Error::InvalidConfig("B must be at least 1".into()));
        }
        if cache < 2 * block {
            return Err(Error::InvalidConfig(format!(
                "requires M >= 2B (M={cache}, B={block})"
            )));
        }
        Ok(MemConfig {
            n_cells,
            block,
            cache,
            d: 1,
            epsilon: 0.5,
        })
    }

    pub fn with_d(mut self, d: u32) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("d must be positive".into()));
        }
        self.d = d;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in (0, 1], got {epsilon}"
            )));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    /// Same cache and block geometry, different input size.
    pub fn resized(&self, n_cells: usize) -> Self {
        MemConfig { n_cells, ..*self }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn cache(&self) -> usize {
        self.cache
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `n = ceil(N/B)`.
    pub fn blocks(&self) -> usize {
        self.n_cells.div_ceil(self.block)
    }

    /// `m = floor(M/B)`.
    pub fn cache_blocks(&self) -> usize {
        self.cache / self.block
    }

    pub fn blocks_for(&self, cells: usize) -> usize {
        cells.div_ceil(self.block)
    }

    pub fn require_cache_blocks(&self, k: usize, what: &str) -> Result<()> {
        crate::error::require(self.cache_blocks() >= k, || {
            format!("{what} requires M >= {k}B (M={}, B={})", self.cache, self.block)
        })
    }

    /// Tall cache: `M >= B^(1+epsilon)`.
    pub fn require_tall_cache(&self, what: &str) -> Result<()> {
        let need = (self.block as f64).powf(1.0 + self.epsilon);
        crate::error::require(self.cache as f64 + 1e-9 >= need, || {
            format!(
                "{what} requires M >= B^(1+eps) (M={}, B={}, eps={})",
                self.cache, self.block, self.epsilon
            )
        })
    }

    /// Wide block: `B >= log^epsilon(N/B)`.
    pub fn require_wide_block(&self, what: &str) -> Result<()> {
        let n = self.blocks().max(2) as f64;
        let need = n.log2().powf(self.epsilon);
        crate::error::require(self.block as f64 + 1e-9 >= need, || {
            format!(
                "{what} requires B >= log^eps(N/B) (B={}, N/B={}, eps={})",
                self.block,
                self.blocks(),
                self.epsilon
            )
        })
    }
}

/// An occupied cell's payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Item {
    pub key: u64,
    pub value: u64,
    pub distinguished: bool,
    /// 0 means uncolored.
    pub color: u32,
    /// Position in the original input array.
    pub origin: u64,
}

impl Item {
    pub fn new(key: u64, value: u64, origin: u64) -> Self {
        Item {
            key,
            value,
            distinguished: false,
            color: 0,
            origin,
        }
    }

    pub fn marked(mut self, distinguished: bool) -> Self {
        self.distinguished = distinguished;
        self
    }

    /// Total order used for ranks: key, then original position.
    pub fn rank_key(&self) -> (u64, u64) {
        (self.key, self.origin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Cell {
    #[default]
    Empty,
    Occupied(Item),
}

impl Cell {
    pub fn item(&self) -> Option<&Item> {
        match self {
            Cell::Occupied(it) => Some(it),
            Cell::Empty => None,
        }
    }

    pub fn item_mut(&mut self) -> Option<&mut Item> {
        match self {
            Cell::Occupied(it) => Some(it),
            Cell::Empty => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Cell::Empty)
    }

    pub fn is_distinguished(&self) -> bool {
        matches!(self, Cell::Occupied(it) if it.distinguished)
    }

    pub fn key(&self) -> Result<u64> {
        self.item().map(|it| it.key).ok_or(Error::EmptyCell)
    }

    pub fn value(&self) -> Result<u64> {
        self.item().map(|it| it.value).ok_or(Error::EmptyCell)
    }

    pub fn origin(&self) -> Result<u64> {
        self.item().map(|it| it.origin).ok_or(Error::EmptyCell)
    }
}

/// A block of exactly `B` cells plus routing metadata. The metadata is part
/// of the (conceptually encrypted) payload and never appears in the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub cells: Vec<Cell>,
    /// Distance or expansion label used by the butterfly network.
    pub label: u64,
    /// Whether the block takes part in routing.
    pub active: bool,
    /// Set once a thinning pass has moved this block's contents out.
    pub written: bool,
}

impl Block {
    pub fn empty(b: usize) -> Self {
        Block {
            cells: vec![Cell::Empty; b],
            label: 0,
            active: false,
            written: false,
        }
    }

    pub fn from_cells(b: usize, mut cells: Vec<Cell>) -> Self {
        debug_assert!(cells.len() <= b);
        cells.resize(b, Cell::Empty);
        Block {
            cells,
            label: 0,
            active: false,
            written: false,
        }
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_empty()).count()
    }

    /// True when no cell is occupied.
    pub fn is_vacant(&self) -> bool {
        self.cells.iter().all(Cell::is_empty)
    }

    pub fn items(&self) -> impl Iterator<Item = &Item> {
        self.cells.iter().filter_map(Cell::item)
    }

    /// Removes and returns all occupied cells, leaving the block vacant.
    pub fn take_items(&mut self) -> Vec<Cell> {
        let out: Vec<Cell> = self.cells.iter().copied().filter(|c| !c.is_empty()).collect();
        self.cells.iter_mut().for_each(|c| *c = Cell::Empty);
        out
    }

    /// Refills the block from `cells` (at most `B`), padding with empties.
    pub fn fill(&mut self, cells: impl IntoIterator<Item = Cell>) {
        let b = self.cells.len();
        self.cells.clear();
        self.cells.extend(cells.into_iter().take(b));
        self.cells.resize(b, Cell::Empty);
    }

    pub fn clear_meta(&mut self) {
        self.label = 0;
        self.active = false;
        self.written = false;
    }
}

/// A server slot: a data block or a fixed-width word record (used for
/// invertible Bloom lookup table rows).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    Block(Block),
    Words(Vec<u64>),
}

/// A contiguous range of server addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub base: usize,
    pub len: usize,
}

impl Region {
    pub fn addr(&self, i: usize) -> usize {
        assert!(i < self.len, "index {i} outside region of {} slots", self.len);
        self.base + i
    }

    pub fn slice(&self, start: usize, len: usize) -> Region {
        assert!(start + len <= self.len, "sub-region out of bounds");
        Region {
            base: self.base + start,
            len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Read,
    Write,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Read => "R",
            Op::Write => "W",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub op: Op,
    pub addr: usize,
}

/// What the server sees: operation kinds and addresses, never contents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessTrace {
    events: Vec<Event>,
    epochs: Vec<(String, usize)>,
}

impl AccessTrace {
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn epochs(&self) -> &[(String, usize)] {
        &self.epochs
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Event range covered by the first epoch carrying `label`.
    pub fn epoch_range(&self, label: &str) -> Option<Range<usize>> {
        let idx = self.epochs.iter().position(|(l, _)| l == label)?;
        let start = self.epochs[idx].1;
        let end = self
            .epochs
            .get(idx + 1)
            .map(|(_, off)| *off)
            .unwrap_or(self.events.len());
        Some(start..end)
    }

    /// Index of the first event where the two traces differ (including a
    /// length mismatch), or `None` when identical.
    pub fn first_divergence(&self, other: &AccessTrace) -> Option<usize> {
        let common = self.events.len().min(other.events.len());
        (0..common)
            .find(|&i| self.events[i] != other.events[i])
            .or_else(|| (self.events.len() != other.events.len()).then_some(common))
    }

    /// CSV dump with header `seq,op,addr,epoch`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "seq,op,addr,epoch")?;
        let mut next_epoch = 0;
        let mut current = "";
        for (seq, ev) in self.events.iter().enumerate() {
            while next_epoch < self.epochs.len() && self.epochs[next_epoch].1 <= seq {
                current = &self.epochs[next_epoch].0;
                next_epoch += 1;
            }
            writeln!(out, "{seq},{},{},{current}", ev.op, ev.addr)?;
        }
        Ok(())
    }

    fn push(&mut self, op: Op, addr: usize) {
        self.events.push(Event { op, addr });
    }
}

/// The server-side block store.
#[derive(Debug, Clone)]
pub struct BlockStore {
    block: usize,
    slots: Vec<Slot>,
    trace: AccessTrace,
    recording: bool,
    reads: u64,
    writes: u64,
}

impl BlockStore {
    /// A store of `blocks` empty blocks with an empty trace. The initial
    /// blocks form the region starting at address 0.
    pub fn new(cfg: &MemConfig, blocks: usize) -> Self {
        BlockStore {
            block: cfg.block(),
            slots: (0..blocks).map(|_| Slot::Block(Block::empty(cfg.block()))).collect(),
            trace: AccessTrace::default(),
            recording: true,
            reads: 0,
            writes: 0,
        }
    }

    /// Turns event logging on or off. Counters keep running either way; long
    /// Monte-Carlo sweeps switch logging off to save memory.
    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// The region made of the initial blocks.
    pub fn initial(&self, blocks: usize) -> Region {
        Region { base: 0, len: blocks }
    }

    /// Appends `blocks` fresh empty blocks. Allocation is public and makes
    /// no trace entries.
    pub fn alloc(&mut self, blocks: usize) -> Region {
        let base = self.slots.len();
        let b = self.block;
        self.slots.extend((0..blocks).map(|_| Slot::Block(Block::empty(b))));
        Region { base, len: blocks }
    }

    /// Appends `count` zeroed word records of `width` words each.
    pub fn alloc_words(&mut self, count: usize, width: usize) -> Region {
        let base = self.slots.len();
        self.slots.extend((0..count).map(|_| Slot::Words(vec![0; width])));
        Region { base, len: count }
    }

    pub fn trace_snapshot(&self) -> AccessTrace {
        self.trace.clone()
    }

    pub fn trace(&self) -> &AccessTrace {
        &self.trace
    }

    pub fn epoch_mark(&mut self, label: &str) {
        let off = self.trace.events.len();
        self.trace.epochs.push((label.to_string(), off));
    }

    pub fn reads(&self) -> u64 {
        self.reads
    }

    pub fn writes(&self) -> u64 {
        self.writes
    }

    pub fn ios(&self) -> u64 {
        self.reads + self.writes
    }

    /// Out-of-band input loading (harness setup, not part of any trace):
    /// writes `cells` into `region` block by block.
    pub fn load(&mut self, region: Region, cells: &[Cell]) {
        let b = self.block;
        assert!(cells.len() <= region.len * b, "input larger than region");
        for i in 0..region.len {
            let lo = (i * b).min(cells.len());
            let hi = ((i + 1) * b).min(cells.len());
            self.slots[region.addr(i)] = Slot::Block(Block::from_cells(b, cells[lo..hi].to_vec()));
        }
    }

    /// Out-of-band inspection of a region's cells, in address order.
    pub fn peek_cells(&self, region: Region) -> Vec<Cell> {
        (0..region.len)
            .flat_map(|i| self.peek_block(region.addr(i)).cells.clone())
            .collect()
    }

    pub fn peek_block(&self, addr: usize) -> &Block {
        match &self.slots[addr] {
            Slot::Block(b) => b,
            Slot::Words(_) => panic!("slot {addr} holds words, not a block"),
        }
    }

    /// Out-of-band overwrite of a block (test and harness setup only).
    pub fn poke_block(&mut self, addr: usize, blk: Block) {
        self.slots[addr] = Slot::Block(blk);
    }

    pub fn peek_words(&self, addr: usize) -> &[u64] {
        match &self.slots[addr] {
            Slot::Words(w) => w,
            Slot::Block(_) => panic!("slot {addr} holds a block, not words"),
        }
    }

    fn check(&self, addr: usize) -> Result<()> {
        if addr < self.slots.len() {
            Ok(())
        } else {
            Err(Error::AddressOutOfRange {
                addr,
                len: self.slots.len(),
            })
        }
    }

    fn log(&mut self, op: Op, addr: usize) {
        match op {
            Op::Read => self.reads += 1,
            Op::Write => self.writes += 1,
        }
        if self.recording {
            self.trace.push(op, addr);
        }
    }
}

/// Client-side I/O counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoStats {
    pub reads: u64,
    pub writes: u64,
}

impl IoStats {
    pub fn total(&self) -> u64 {
        self.reads + self.writes
    }
}

/// Deterministic pseudorandom tape. Sub-streams are derived from the seed by
/// label and a fork counter, so an identical sequence of requests replays the
/// same randomness exactly.
#[derive(Debug, Clone)]
pub struct Tape {
    seed: u64,
    forks: u64,
    rng: ChaCha8Rng,
}

impl Tape {
    pub fn new(seed: u64) -> Self {
        Tape {
            seed,
            forks: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh independent stream named `label`.
    pub fn substream(&mut self, label: &str) -> Tape {
        let mut h = mix64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        for byte in label.bytes() {
            h = mix64(h ^ byte as u64);
        }
        h = mix64(h ^ self.forks);
        self.forks += 1;
        Tape::new(h)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p.clamp(0.0, 1.0))
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The client: private cache accounting, random tape and I/O counters.
///
/// Blocks read from the store are charged `B` cells until they are written
/// back or dropped; loose cells held outside blocks are charged through
/// [`Session::hold`] / [`Session::release`]. Exceeding `M` is a model
/// violation reported as [`Error::CacheOverflow`].
#[derive(Debug, Clone)]
pub struct Session {
    cfg: MemConfig,
    tape: Tape,
    used: usize,
    peak: usize,
    stats: IoStats,
}

impl Session {
    pub fn new(cfg: MemConfig, seed: u64) -> Self {
        Session {
            cfg,
            tape: Tape::new(seed),
            used: 0,
            peak: 0,
            stats: IoStats::default(),
        }
    }

    pub fn cfg(&self) -> &MemConfig {
        &self.cfg
    }

    pub fn tape(&mut self) -> &mut Tape {
        &mut self.tape
    }

    pub fn stats(&self) -> IoStats {
        self.stats
    }

    pub fn cache_used(&self) -> usize {
        self.used
    }

    pub fn peak_cache(&self) -> usize {
        self.peak
    }

    /// Charges `cells` against the private cache.
    pub fn hold(&mut self, cells: usize) -> Result<()> {
        if self.used + cells > self.cfg.cache() {
            return Err(Error::CacheOverflow {
                needed: cells,
                used: self.used,
                capacity: self.cfg.cache(),
            });
        }
        self.used += cells;
        self.peak = self.peak.max(self.used);
        Ok(())
    }

    pub fn release(&mut self, cells: usize) {
        debug_assert!(cells <= self.used, "releasing more cache than held");
        self.used = self.used.saturating_sub(cells);
    }

    pub fn read_block(&mut self, store: &mut BlockStore, addr: usize) -> Result<Block> {
        store.check(addr)?;
        if !matches!(store.slots[addr], Slot::Block(_)) {
            return Err(Error::SlotKind {
                addr,
                expected: "block",
            });
        }
        self.hold(self.cfg.block())?;
        store.log(Op::Read, addr);
        self.stats.reads += 1;
        match &store.slots[addr] {
            Slot::Block(b) => Ok(b.clone()),
            Slot::Words(_) => unreachable!(),
        }
    }

    /// Writes `blk` to `addr`; the block leaves the cache.
    pub fn write_block(&mut self, store: &mut BlockStore, addr: usize, blk: Block) -> Result<()> {
        store.check(addr)?;
        debug_assert_eq!(blk.cells.len(), self.cfg.block());
        store.log(Op::Write, addr);
        self.stats.writes += 1;
        store.slots[addr] = Slot::Block(blk);
        self.release(self.cfg.block());
        Ok(())
    }

    /// A vacant block created in the cache.
    pub fn new_block(&mut self) -> Result<Block> {
        self.hold(self.cfg.block())?;
        Ok(Block::empty(self.cfg.block()))
    }

    /// Discards a cached block without writing it.
    pub fn drop_block(&mut self, blk: Block) {
        drop(blk);
        self.release(self.cfg.block());
    }

    /// Reads a word record. A record occupies one block-sized slot and is
    /// charged `B` cells.
    pub fn read_words(&mut self, store: &mut BlockStore, addr: usize) -> Result<Vec<u64>> {
        store.check(addr)?;
        if !matches!(store.slots[addr], Slot::Words(_)) {
            return Err(Error::SlotKind {
                addr,
                expected: "word record",
            });
        }
        self.hold(self.cfg.block())?;
        store.log(Op::Read, addr);
        self.stats.reads += 1;
        match &store.slots[addr] {
            Slot::Words(w) => Ok(w.clone()),
            Slot::Block(_) => unreachable!(),
        }
    }

    pub fn write_words(&mut self, store: &mut BlockStore, addr: usize, words: Vec<u64>) -> Result<()> {
        store.check(addr)?;
        store.log(Op::Write, addr);
        self.stats.writes += 1;
        store.slots[addr] = Slot::Words(words);
        self.release(self.cfg.block());
        Ok(())
    }

    pub fn drop_words(&mut self, words: Vec<u64>) {
        drop(words);
        self.release(self.cfg.block());
    }

    /// Reads every block of `src` and writes it unchanged to `dst`.
    pub fn copy_region(&mut self, store: &mut BlockStore, src: Region, dst: Region) -> Result<()> {
        assert!(dst.len >= src.len);
        for i in 0..src.len {
            let blk = self.read_block(store, src.addr(i))?;
            self.write_block(store, dst.addr(i), blk)?;
        }
        Ok(())
    }
}
