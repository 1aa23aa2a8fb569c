use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::model::MemConfig;

use super::{check, expected_output_blocks, generate, run, Algo, Generator, RunParams};

/// Version column written into every report row.
pub const REPORT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct ObliviousnessReport {
    pub algo: Algo,
    pub cfg: MemConfig,
    pub seeds: usize,
    pub pairs: usize,
    pub all_equal: bool,
    /// First differing event of the first mismatching pair.
    pub first_divergence: Option<usize>,
    pub diverging_seed: Option<u64>,
    pub peak_cache: usize,
}

impl ObliviousnessReport {
    pub const CSV_HEADER: &'static str = "algo,N,M,B,seeds,pairs,all_equal,first_divergence,peak_cache,version";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.algo,
            self.cfg.n_cells(),
            self.cfg.cache(),
            self.cfg.block(),
            self.seeds,
            self.pairs,
            self.all_equal,
            self.first_divergence.map_or(String::new(), |d| d.to_string()),
            self.peak_cache,
            REPORT_VERSION
        )
    }
}

/// Runs `algo` on `inputs_per_seed` random inputs per seed and compares the
/// traces of each seed's runs against its first.
pub fn verify_oblivious(
    algo: Algo,
    cfg: &MemConfig,
    p: &RunParams,
    seeds: &[u64],
    inputs_per_seed: usize,
) -> Result<ObliviousnessReport> {
    let n = cfg.n_cells();
    let marked = p.marked(algo, cfg);
    let per_seed: Vec<(u64, usize, Option<usize>, usize)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut first = None;
            let mut pairs = 0;
            let mut divergence = None;
            let mut peak = 0;
            for i in 0..inputs_per_seed {
                let data_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1);
                let cells = generate(Generator::Uniform, n, marked, data_seed);
                let out = run(algo, cfg, seed, &cells, p, true)?;
                peak = peak.max(out.peak_cache);
                let trace = out.trace.expect("recorded");
                match &first {
                    None => first = Some(trace),
                    Some(t0) => {
                        pairs += 1;
                        if divergence.is_none() {
                            divergence = t0.first_divergence(&trace);
                        }
                    }
                }
            }
            Ok((seed, pairs, divergence, peak))
        })
        .collect::<Result<_>>()?;
    let bad = per_seed.iter().find(|r| r.2.is_some());
    Ok(ObliviousnessReport {
        algo,
        cfg: *cfg,
        seeds: seeds.len(),
        pairs: per_seed.iter().map(|r| r.1).sum(),
        all_equal: bad.is_none(),
        first_divergence: bad.and_then(|r| r.2),
        diverging_seed: bad.map(|r| r.0),
        peak_cache: per_seed.iter().map(|r| r.3).max().unwrap_or(0),
    })
}

/// One-sided Clopper-Pearson upper bound on a failure probability.
pub fn binomial_ucb(failures: usize, trials: usize, confidence: f64) -> f64 {
    if trials == 0 || failures >= trials {
        return 1.0;
    }
    let (a, b) = (failures as f64 + 1.0, (trials - failures) as f64);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < confidence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureReport {
    pub algo: Algo,
    pub cfg: MemConfig,
    pub generator: Generator,
    pub trials: usize,
    pub failures: usize,
    /// Successful runs whose output differs from the oracle.
    pub mismatches: usize,
    /// Runs whose output length differs from the public formula.
    pub size_violations: usize,
    pub peak_cache: usize,
    pub bound: f64,
}

impl FailureReport {
    pub const CSV_HEADER: &'static str =
        "algo,N,M,B,generator,trials,failures,rate,ucb95,bound,mismatches,size_violations,peak_cache,version";

    pub fn rate(&self) -> f64 {
        self.failures as f64 / self.trials.max(1) as f64
    }

    pub fn ucb(&self) -> f64 {
        binomial_ucb(self.failures, self.trials, 0.95)
    }

    pub fn rate_ok(&self) -> bool {
        self.rate() <= self.bound
    }

    pub fn ucb_ok(&self) -> bool {
        self.ucb() <= self.bound
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6e},{:.6e},{:.6e},{},{},{},{}",
            self.algo,
            self.cfg.n_cells(),
            self.cfg.cache(),
            self.cfg.block(),
            self.generator,
            self.trials,
            self.failures,
            self.rate(),
            self.ucb(),
            self.bound,
            self.mismatches,
            self.size_violations,
            self.peak_cache,
            REPORT_VERSION
        )
    }
}

/// Runs `trials` seeded instances and tallies misses, oracle mismatches
/// among successes, output-size violations and the peak cache use. The
/// bound is `1/(N/B)`.
pub fn failure_rate(
    algo: Algo,
    cfg: &MemConfig,
    p: &RunParams,
    gen: Generator,
    trials: usize,
    base_seed: u64,
) -> Result<FailureReport> {
    let n = cfg.n_cells();
    let marked = p.marked(algo, cfg);
    let want_blocks = expected_output_blocks(algo, cfg, p);
    let tallies: Vec<(bool, bool, bool, usize)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed = base_seed.wrapping_add(t);
            let cells = generate(gen, n, marked, seed ^ 0x5eed);
            let out = run(algo, cfg, seed, &cells, p, false)?;
            let mismatch = out.succeeded && check(&cells, &out, p) == Some(false);
            let size_bad = want_blocks.is_some_and(|w| w != out.output_blocks) && out.output_blocks > 0;
            Ok((out.succeeded, mismatch, size_bad, out.peak_cache))
        })
        .collect::<Result<_>>()?;
    Ok(FailureReport {
        algo,
        cfg: *cfg,
        generator: gen,
        trials,
        failures: tallies.iter().filter(|t| !t.0).count(),
        mismatches: tallies.iter().filter(|t| t.1).count(),
        size_violations: tallies.iter().filter(|t| t.2).count(),
        peak_cache: tallies.iter().map(|t| t.3).max().unwrap_or(0),
        bound: 1.0 / cfg.blocks() as f64,
    })
}

/// Cost model an I/O count is divided by; `n = N/B`, `m = M/B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Linear,
    /// `n log_m n`.
    NLogMN,
    /// `n log^2 n`.
    NLogSquared,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Linear => "linear",
            Model::NLogMN => "n-log_m-n",
            Model::NLogSquared => "n-log2-n",
        }
    }

    pub fn eval(self, n: usize, m: usize) -> f64 {
        let n = n.max(2) as f64;
        match self {
            Model::Linear => n,
            Model::NLogMN => n * (n.ln() / (m.max(2) as f64).ln()).max(1.0),
            Model::NLogSquared => n * n.log2() * n.log2(),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Model::Linear, Model::NLogMN, Model::NLogSquared]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown cost model `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub algo: Algo,
    pub model: Model,
    /// `(N, measured I/Os, I/Os / model)` per size.
    pub points: Vec<(usize, u64, f64)>,
    /// Largest measured ratio.
    pub constant: f64,
    /// Largest relative increase of the ratio between consecutive sizes.
    pub max_growth: f64,
    /// Peak cache use over the measured runs, when known.
    pub peak_cache: usize,
}

impl ScalingReport {
    pub const CSV_HEADER: &'static str = "algo,model,N,ios,ratio,max_growth,passes,version";
    pub const MAX_GROWTH: f64 = 0.15;

    pub fn passes(&self) -> bool {
        self.max_growth < Self::MAX_GROWTH
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|&(n, ios, ratio)| {
                format!(
                    "{},{},{},{},{:.4},{:.4},{},{}",
                    self.algo,
                    self.model,
                    n,
                    ios,
                    ratio,
                    self.max_growth,
                    self.passes(),
                    REPORT_VERSION
                )
            })
            .collect()
    }
}

/// Fits `(N, I/Os)` measurements taken at block size `b` and `m = M/B`
/// against `model`.
pub fn fit_scaling(algo: Algo, model: Model, b: usize, m: usize, series: &[(usize, u64)]) -> Result<ScalingReport> {
    if series.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "scaling fit needs at least 4 sizes, got {}",
            series.len()
        )));
    }
    let points: Vec<(usize, u64, f64)> = series
        .iter()
        .map(|&(n, ios)| (n, ios, ios as f64 / model.eval(n.div_ceil(b), m)))
        .collect();
    let max_growth = points
        .windows(2)
        .map(|w| w[1].2 / w[0].2 - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ScalingReport {
        algo,
        model,
        constant: points.iter().map(|p| p.2).fold(0.0, f64::max),
        points,
        max_growth,
        peak_cache: 0,
    })
}

/// Measures `algo` at every size of `sizes` with fixed `B` and `M` (one
/// seeded run each) and fits the result.
pub fn measure_scaling(
    algo: Algo,
    model: Model,
    block: usize,
    cache: usize,
    sizes: &[usize],
    p: &RunParams,
    seed: u64,
) -> Result<ScalingReport> {
    let runs: Vec<(usize, u64, usize)> = sizes
        .par_iter()
        .map(|&n| {
            let cfg = MemConfig::new(n, block, cache)?;
            let cells = generate(Generator::Uniform, n, p.marked(algo, &cfg), seed);
            let out = run(algo, &cfg, seed, &cells, p, false)?;
            Ok((n, out.stats.total(), out.peak_cache))
        })
        .collect::<Result<_>>()?;
    let series: Vec<(usize, u64)> = runs.iter().map(|r| (r.0, r.1)).collect();
    let mut report = fit_scaling(algo, model, block, cache / block, &series)?;
    report.peak_cache = runs.iter().map(|r| r.2).max().unwrap_or(0);
    Ok(report)
}
