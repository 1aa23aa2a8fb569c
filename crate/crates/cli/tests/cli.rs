use std::fs;
use std::process::{Command, Output};

fn oblivem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oblivem")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn sort_writes_sorted_file_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sorted.txt");
    let args = ["sort", "--n", "65536", "--b", "16", "--m", "4096", "--seed", "7", "--gen", "uniform", "--out"];
    let o = oblivem(&[&args[..], &[out.to_str().unwrap()]].concat());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("algo,N,M,B,R,seed,succeeded,ios_read,ios_write,version"));
    assert!(text.lines().nth(1).unwrap().starts_with("padded-sort,65536,4096,16,"));
    let keys: Vec<u64> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| l.split(' ').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(keys.len(), 65536);
    assert!(keys.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn same_args_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = oblivem(&["compact-loose", "--n", "8192", "--b", "8", "--m", "512", "--seed", "3", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        (stdout(&o), fs::read(out).unwrap())
    };
    assert_eq!(run("a.txt"), run("b.txt"));
}

#[test]
fn verify_consolidate_is_equal() {
    let o = oblivem(&["verify", "--algo", "consolidate", "--n", "256", "--b", "4", "--m", "16", "--seeds", "10"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("consolidate,256,16,4,10,40,true,"));
}

#[test]
fn verify_control_diverges() {
    let o = oblivem(&["verify", "--algo", "quicksort-control", "--n", "256", "--b", "4", "--m", "16", "--seeds", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains(",false,"));
}

#[test]
fn select_rank_zero_is_usage_error() {
    let o = oblivem(&["select", "--k", "0", "--n", "1024", "--b", "4", "--m", "64"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rank 0"));
}

#[test]
fn cache_too_small_is_usage_error() {
    let o = oblivem(&["compact-tight", "--n", "64", "--b", "4", "--m", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("M >="));
}

#[test]
fn tight_compaction_of_input_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    let out = dir.path().join("out.txt");
    let lines: String = (0..64).map(|i| format!("{} {} {}\n", 100 - i, i, (i % 5 == 0) as u8)).collect();
    fs::write(&input, lines).unwrap();
    let o = oblivem(&[
        "compact-tight", "--b", "4", "--m", "16", "--capacity", "13",
        "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let want: String = (0..64).filter(|i| i % 5 == 0).map(|i| format!("{} {} 1\n", 100 - i, i)).collect();
    assert_eq!(fs::read_to_string(out).unwrap(), want);
}

#[test]
fn quantiles_write_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q.csv");
    let o = oblivem(&["quantiles", "--n", "4096", "--b", "4", "--m", "64", "--q", "2", "--gen", "reverse", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(out).unwrap();
    let keys: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(keys, vec!["1365", "2730"]);
}

#[test]
fn trace_dump_has_header() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let o = oblivem(&["compact-tight-sparse", "--n", "512", "--b", "4", "--m", "256", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(trace).unwrap();
    assert_eq!(text.lines().next(), Some("seq,op,addr,epoch"));
    assert!(text.lines().count() > 100);
}

#[test]
fn scale_consolidate_is_linear() {
    let o = oblivem(&["scale", "--algo", "consolidate", "--model", "linear", "--b", "16", "--m", "256", "--from", "10", "--to", "13"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 5);
}

#[test]
fn unknown_generator_rejected() {
    let o = oblivem(&["sort", "--gen", "zipf"]);
    assert_eq!(o.status.code(), Some(2));
}
