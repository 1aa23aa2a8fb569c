use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oblivem::compaction::{LogstarParams, LooseParams, SparseParams};
use oblivem::harness::{
    format_cells, generate, measure_scaling, parse_input, run, verify_oblivious, Algo, Generator, Model,
    ObliviousnessReport, RunOutcome, RunParams, ScalingReport, REPORT_VERSION,
};
use oblivem::model::{Cell, MemConfig};
use oblivem::obsort::SortParams;
use oblivem::Error;

#[derive(Parser)]
#[command(name = "oblivem", version, about = "Data-oblivious external-memory algorithms on a simulated block store")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tight compaction through a lookup table.
    CompactTightSparse(RunArgs),
    /// Deterministic tight compaction through the block network.
    CompactTight(RunArgs),
    /// Linear-I/O loose compaction.
    CompactLoose(RunArgs),
    /// Loose compaction for small caches.
    CompactLogstar(RunArgs),
    /// k-th smallest item.
    Select(RunArgs),
    /// q-quantiles.
    Quantiles(RunArgs),
    /// Randomized padded sort.
    Sort(RunArgs),
    /// Compares traces of one algorithm across random inputs.
    Verify(VerifyArgs),
    /// Measures I/Os over a range of sizes and fits a cost model.
    Scale(ScaleArgs),
}

#[derive(Args, Clone)]
struct Shape {
    /// Input cells (ignored with --input).
    #[arg(long, default_value_t = 1 << 16)]
    n: usize,
    /// Block size in cells.
    #[arg(long, default_value_t = 16)]
    b: usize,
    /// Cache size in cells.
    #[arg(long, default_value_t = 256)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Failure exponent: target miss probability (N/B)^-d.
    #[arg(long, default_value_t = 1)]
    d: u32,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
}

#[derive(Args, Clone)]
struct Tuning {
    /// Compaction capacity R in cells [default: N/8].
    #[arg(long)]
    capacity: Option<usize>,
    /// Rank to select [default: ceil(N/2)].
    #[arg(long)]
    k: Option<usize>,
    /// Quantile count [default: floor((M/B)^(1/4))].
    #[arg(long)]
    q: Option<usize>,
    /// Thinning passes into the main area [default: 3 loose, 8 log-star].
    #[arg(long)]
    c0: Option<usize>,
    /// Loose region factor [default: d + 2].
    #[arg(long)]
    c1: Option<f64>,
    /// Hash functions of the lookup table.
    #[arg(long, default_value_t = 4)]
    k_iblt: usize,
    /// Table rows per key and hash function.
    #[arg(long, default_value_t = 0.75)]
    delta: f64,
    /// Deal constant of the sort.
    #[arg(long, default_value_t = 8.0)]
    c_deal: f64,
    /// Small-input cutoff in blocks [default: 1024 log-star, 64 sort].
    #[arg(long)]
    n0: Option<usize>,
    /// First tower term of log-star compaction.
    #[arg(long, default_value_t = 4)]
    t1: u32,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    shape: Shape,
    #[command(flatten)]
    tuning: Tuning,
    /// Input generator.
    #[arg(long, default_value = "uniform")]
    gen: Generator,
    /// Distinguished cells to generate [default: R for compaction, N/10 otherwise].
    #[arg(long)]
    marked: Option<usize>,
    /// Input file of `key value distinguished` lines.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file: occupied cells, or selected items as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stats CSV [default: stdout].
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Trace dump CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    algo: Algo,
    #[command(flatten)]
    shape: Shape,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Inputs compared per seed.
    #[arg(long, default_value_t = 5)]
    inputs: usize,
    /// Report CSV [default: stdout].
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long)]
    algo: Algo,
    /// Cost model: linear, n-log_m-n or n-log2-n.
    #[arg(long, default_value = "linear")]
    model: Model,
    #[command(flatten)]
    shape: Shape,
    #[command(flatten)]
    tuning: Tuning,
    /// Smallest size as a power of two.
    #[arg(long, default_value_t = 14)]
    from: u32,
    /// Largest size as a power of two.
    #[arg(long, default_value_t = 20)]
    to: u32,
    /// Report CSV [default: stdout].
    #[arg(long)]
    report: Option<PathBuf>,
}

fn config(shape: &Shape, n: usize) -> Result<MemConfig, Error> {
    MemConfig::new(n, shape.b, shape.m)?.with_d(shape.d)?.with_epsilon(shape.epsilon)
}

fn params(t: &Tuning, cfg: &MemConfig) -> RunParams {
    let sparse = SparseParams {
        k: t.k_iblt,
        table_factor: t.delta * t.k_iblt as f64,
    };
    let base_loose = LooseParams::for_config(cfg);
    let base_logstar = LogstarParams::default();
    let base_sort = SortParams::default();
    RunParams {
        capacity: t.capacity,
        k: t.k,
        q: t.q,
        sparse,
        loose: Some(LooseParams {
            c0: t.c0.unwrap_or(base_loose.c0),
            c1: t.c1.unwrap_or(base_loose.c1),
        }),
        logstar: LogstarParams {
            n0: t.n0.unwrap_or(base_logstar.n0),
            c0: t.c0.unwrap_or(base_logstar.c0),
            t1: t.t1,
            sparse,
        },
        sort: SortParams {
            c: t.c_deal,
            n0: t.n0.unwrap_or(base_sort.n0),
            sparse,
            ..base_sort
        },
    }
}

const PARAM_HEADER: &str = "generator,k,q,c0,c1,k_iblt,delta,c_deal,n0,t1,d,epsilon";

fn param_row(algo: Algo, gen: &str, p: &RunParams, t: &Tuning, cfg: &MemConfig) -> String {
    let loose = p.loose(cfg);
    let (c0, n0) = match algo {
        Algo::LooseLogstar => (p.logstar.c0, p.logstar.n0),
        Algo::PaddedSort => (loose.c0, p.sort.n0),
        _ => (loose.c0, p.logstar.n0),
    };
    format!(
        "{gen},{},{},{c0},{},{},{},{},{n0},{},{},{}",
        p.k(cfg),
        p.q(cfg),
        loose.c1,
        t.k_iblt,
        t.delta,
        t.c_deal,
        t.t1,
        cfg.d(),
        cfg.epsilon()
    )
}

fn emit(path: &Option<PathBuf>, text: &str) -> io::Result<()> {
    match path {
        Some(p) => fs::write(p, text),
        None => io::stdout().write_all(text.as_bytes()),
    }
}

enum Failure {
    Usage(String),
    Miss,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn values_csv(out: &RunOutcome) -> String {
    let mut s = String::from("index,key,value,origin,version\n");
    for (i, v) in out.values.iter().enumerate() {
        match v {
            Some(it) => s.push_str(&format!("{},{},{},{},{REPORT_VERSION}\n", i + 1, it.key, it.value, it.origin)),
            None => s.push_str(&format!("{},,,,{REPORT_VERSION}\n", i + 1)),
        }
    }
    s
}

fn run_algo(algo: Algo, args: &RunArgs) -> Result<(), Failure> {
    let (cells, gen): (Vec<Cell>, String) = match &args.input {
        Some(path) => (parse_input(&fs::read_to_string(path)?)?, format!("file:{}", path.display())),
        None => (Vec::new(), args.gen.to_string()),
    };
    let n = if args.input.is_some() { cells.len() } else { args.shape.n };
    let cfg = config(&args.shape, n)?;
    let p = params(&args.tuning, &cfg);
    let cells = if args.input.is_some() {
        cells
    } else {
        let marked = args.marked.unwrap_or_else(|| p.marked(algo, &cfg));
        generate(args.gen, n, marked, args.shape.seed)
    };
    let out = run(algo, &cfg, args.shape.seed, &cells, &p, args.trace.is_some())?;

    let stats = format!(
        "{},{PARAM_HEADER}\n{},{}\n",
        RunOutcome::CSV_HEADER,
        out.csv_row(),
        param_row(algo, &gen, &p, &args.tuning, &cfg)
    );
    emit(&args.stats, &stats)?;
    if let Some(path) = &args.out {
        let body = match algo {
            Algo::Select | Algo::Quantiles => values_csv(&out),
            _ => format_cells(&out.output),
        };
        fs::write(path, body)?;
    }
    if let (Some(path), Some(trace)) = (&args.trace, &out.trace) {
        trace.write_csv(fs::File::create(path)?)?;
    }
    if out.succeeded {
        Ok(())
    } else {
        Err(Failure::Miss)
    }
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let cfg = config(&args.shape, args.shape.n)?;
    let p = params(&args.tuning, &cfg);
    let seeds: Vec<u64> = (0..args.seeds).map(|i| args.shape.seed + i).collect();
    let report = verify_oblivious(args.algo, &cfg, &p, &seeds, args.inputs)?;
    emit(
        &args.report,
        &format!("{}\n{}\n", ObliviousnessReport::CSV_HEADER, report.csv_row()),
    )?;
    if report.all_equal {
        Ok(())
    } else {
        Err(Failure::Miss)
    }
}

fn scale(args: &ScaleArgs) -> Result<(), Failure> {
    if args.from > args.to || args.to >= 40 {
        return Err(Failure::Usage(format!("bad size range 2^{}..2^{}", args.from, args.to)));
    }
    let cfg = config(&args.shape, 1usize << args.from)?;
    let p = params(&args.tuning, &cfg);
    let sizes: Vec<usize> = (args.from..=args.to).map(|e| 1usize << e).collect();
    let report = measure_scaling(args.algo, args.model, args.shape.b, args.shape.m, &sizes, &p, args.shape.seed)?;
    let mut text = format!("{}\n", ScalingReport::CSV_HEADER);
    for row in report.csv_rows() {
        text.push_str(&row);
        text.push('\n');
    }
    emit(&args.report, &text)?;
    if report.passes() {
        Ok(())
    } else {
        Err(Failure::Miss)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::CompactTightSparse(a) => run_algo(Algo::TightSparse, a),
        Command::CompactTight(a) => run_algo(Algo::TightDense, a),
        Command::CompactLoose(a) => run_algo(Algo::Loose, a),
        Command::CompactLogstar(a) => run_algo(Algo::LooseLogstar, a),
        Command::Select(a) => run_algo(Algo::Select, a),
        Command::Quantiles(a) => run_algo(Algo::Quantiles, a),
        Command::Sort(a) => run_algo(Algo::PaddedSort, a),
        Command::Verify(a) => verify(a),
        Command::Scale(a) => scale(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Miss) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
