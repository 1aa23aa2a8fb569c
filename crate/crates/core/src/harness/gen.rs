use std::fmt;
use std::str::FromStr;

use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Cell, Item};

/// Seeded input families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Generator {
    Uniform,
    Sorted,
    Reverse,
    AllEqual,
    /// Distinguished items packed into one contiguous run.
    AdversarialDense,
}

impl Generator {
    pub const ALL: [Generator; 5] = [
        Generator::Uniform,
        Generator::Sorted,
        Generator::Reverse,
        Generator::AllEqual,
        Generator::AdversarialDense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Generator::Uniform => "uniform",
            Generator::Sorted => "sorted",
            Generator::Reverse => "reverse",
            Generator::AllEqual => "all-equal",
            Generator::AdversarialDense => "adversarial-dense",
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Generator::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown generator `{s}`")))
    }
}

/// `n` occupied cells with exactly `marked` distinguished ones. Origins are
/// the cell indices.
pub fn generate(gen: Generator, n: usize, marked: usize, seed: u64) -> Vec<Cell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let marked = marked.min(n);
    let keys: Vec<u64> = match gen {
        Generator::Uniform | Generator::AdversarialDense => (0..n).map(|_| rng.gen_range(0..1u64 << 32)).collect(),
        Generator::Sorted => (0..n as u64).collect(),
        Generator::Reverse => (0..n as u64).rev().collect(),
        Generator::AllEqual => vec![7; n],
    };
    let mut flags = vec![false; n];
    if gen == Generator::AdversarialDense {
        let start = rng.gen_range(0..=n - marked);
        flags[start..start + marked].iter_mut().for_each(|f| *f = true);
    } else {
        for i in index::sample(&mut rng, n, marked) {
            flags[i] = true;
        }
    }
    keys.into_iter()
        .zip(flags)
        .enumerate()
        .map(|(i, (k, d))| Cell::Occupied(Item::new(k, k.wrapping_mul(31), i as u64).marked(d)))
        .collect()
}

/// Parses newline-separated `key value distinguished` triples. Blank lines
/// and lines starting with `#` are skipped; `distinguished` is `0`/`1` or
/// `true`/`false`.
pub fn parse_input(text: &str) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::InvalidConfig(format!("line {}: {what}: `{line}`", no + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [k, v, d] = fields[..] else {
            return Err(bad("expected `key value distinguished`"));
        };
        let key = k.parse().map_err(|_| bad("bad key"))?;
        let value = v.parse().map_err(|_| bad("bad value"))?;
        let dist = match d {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad("bad distinguished flag")),
        };
        cells.push(Cell::Occupied(Item::new(key, value, cells.len() as u64).marked(dist)));
    }
    Ok(cells)
}

/// Writes occupied cells as `key value distinguished` lines.
pub fn format_cells(cells: &[Cell]) -> String {
    let mut out = String::new();
    for it in cells.iter().filter_map(Cell::item) {
        out.push_str(&format!("{} {} {}\n", it.key, it.value, it.distinguished as u8));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marks_exactly_requested() {
        for g in Generator::ALL {
            let cells = generate(g, 500, 37, 3);
            assert_eq!(cells.iter().filter(|c| c.is_distinguished()).count(), 37, "{g}");
            assert_eq!(generate(g, 500, 37, 3), cells);
        }
    }

    #[test]
    fn dense_marks_are_contiguous() {
        let cells = generate(Generator::AdversarialDense, 300, 50, 1);
        let first = cells.iter().position(|c| c.is_distinguished()).unwrap();
        assert!(cells[first..first + 50].iter().all(|c| c.is_distinguished()));
    }

    #[test]
    fn parse_round_trip() {
        let cells = parse_input("# header\n5 50 1\n\n3 30 0\n").unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[1].item().unwrap().origin, 1);
        assert_eq!(format_cells(&cells), "5 50 1\n3 30 0\n");
        assert!(parse_input("1 2").is_err());
        assert!(parse_input("1 2 maybe").is_err());
    }

    #[test]
    fn generator_names_parse() {
        for g in Generator::ALL {
            assert_eq!(g.name().parse::<Generator>().unwrap(), g);
        }
        assert!("zipf".parse::<Generator>().is_err());
    }
}
