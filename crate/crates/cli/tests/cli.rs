use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tardos_core::codegen::load_codebook;
use tardos_core::gaussian::theorem2_plan;
use tardos_core::tracer::{trace, PirateCopy};

fn tardos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tardos"))
        .args(args)
        .env_remove("TARDOS_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 40-user, 64-column codebook under `dir`.
fn small_codebook(dir: &Path, seed: &str) -> PathBuf {
    let path = dir.join(format!("cb{seed}.trdc"));
    let o = tardos(&[
        "generate",
        "--n",
        "40",
        "--m",
        "64",
        "--z",
        "5",
        "--c0",
        "3",
        "--seed",
        seed,
        "-o",
        s(&path),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    path
}

#[test]
fn generate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_codebook(dir.path(), "4");
    let cb = load_codebook(&path).unwrap();
    assert_eq!((cb.n(), cb.m(), cb.seed()), (40, 64, 4));
    assert_eq!(cb.params().z(), 5.0);
    let again = small_codebook(dir.path(), "4");
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(again).unwrap());
}

#[test]
fn gaussian_plan_length() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.trdc");
    let o = tardos(&[
        "generate",
        "--n",
        "5",
        "--c0",
        "4",
        "--eps1",
        "0.01",
        "--eps2",
        "0.25",
        "--tau",
        "0.01",
        "--plan",
        "gaussian",
        "-o",
        s(&path),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cb = load_codebook(&path).unwrap();
    let plan = theorem2_plan(4, 0.01, 0.01, 0.25).unwrap();
    assert_eq!(cb.m() as u64, plan.m);
    assert_eq!(cb.params().z(), plan.z);
    assert!((cb.params().t() - 0.0025).abs() < 1e-15);
}

#[test]
fn io_errors_exit_four() {
    let o = tardos(&[
        "generate",
        "--n",
        "4",
        "--m",
        "8",
        "--z",
        "1",
        "--c0",
        "2",
        "-o",
        "/nonexistent/x/cb.trdc",
    ]);
    assert_eq!(code(&o), 4);
    let o = tardos(&[
        "trace",
        "--codebook",
        "/nonexistent/cb.trdc",
        "--pirate",
        "/nonexistent/y.txt",
    ]);
    assert_eq!(code(&o), 4);
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.trdc");
    std::fs::write(&junk, b"not a codebook at all").unwrap();
    let o = tardos(&["attack", "--codebook", s(&junk), "--users", "1"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn single_user_attack_reproduces_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_codebook(dir.path(), "9");
    let cb = load_codebook(&path).unwrap();
    for strategy in ["extremal", "coin", "majority"] {
        let o = tardos(&[
            "attack",
            "--codebook",
            s(&path),
            "--users",
            "7",
            "--strategy",
            strategy,
        ]);
        assert_eq!(code(&o), 0);
        let bits: String = (0..64)
            .map(|i| if cb.matrix().get(7, i) { '1' } else { '0' })
            .collect();
        assert_eq!(stdout(&o).trim(), bits, "{strategy}");
    }
}

#[test]
fn extremal_attack_is_column_or() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_codebook(dir.path(), "10");
    let cb = load_codebook(&path).unwrap();
    let o = tardos(&["attack", "--codebook", s(&path), "--users", "2,11,30"]);
    assert_eq!(code(&o), 0);
    let or: String = (0..64)
        .map(|i| {
            if [2, 11, 30].iter().any(|&u| cb.matrix().get(u, i)) {
                '1'
            } else {
                '0'
            }
        })
        .collect();
    assert_eq!(stdout(&o).trim(), or);
}

#[test]
fn attack_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_codebook(dir.path(), "11");
    let o = tardos(&[
        "attack",
        "--codebook",
        s(&path),
        "--users",
        "1,2",
        "--strategy",
        "sneaky",
    ]);
    assert_eq!(code(&o), 2);
    let o = tardos(&["attack", "--codebook", s(&path), "--users", "1,x"]);
    assert_eq!(code(&o), 2);
    let o = tardos(&["attack", "--codebook", s(&path), "--users", "1,400"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn trace_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_codebook(dir.path(), "12");
    let pirate = dir.path().join("y.txt");
    let o = tardos(&[
        "attack",
        "--codebook",
        s(&path),
        "--users",
        "0,5,6",
        "-o",
        s(&pirate),
    ]);
    assert_eq!(code(&o), 0);

    let cb = load_codebook(&path).unwrap();
    let y = PirateCopy::parse(&std::fs::read_to_string(&pirate).unwrap()).unwrap();
    let expect = trace(&cb, &y, 2.0).unwrap().to_csv();
    let o = tardos(&[
        "trace",
        "--codebook",
        s(&path),
        "--pirate",
        s(&pirate),
        "--z",
        "2",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), expect);

    let o = tardos(&[
        "trace",
        "--codebook",
        s(&path),
        "--pirate",
        s(&pirate),
        "--z",
        "inf",
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().skip(1).all(|l| l.ends_with(",0")));

    let o = tardos(&[
        "trace",
        "--codebook",
        s(&path),
        "--pirate",
        s(&pirate),
        "--format",
        "jsonl",
    ]);
    assert_eq!(code(&o), 0);
    let lines: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 40);
    let stored = trace(&cb, &y, cb.params().z()).unwrap();
    for (j, v) in lines.iter().enumerate() {
        assert_eq!(v["accused"], stored.accused.contains(&j));
    }
}

#[test]
fn trace_rejects_wrong_length() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_codebook(dir.path(), "13");
    let pirate = dir.path().join("short.txt");
    std::fs::write(&pirate, "0101\n").unwrap();
    let o = tardos(&[
        "trace",
        "--codebook",
        s(&path),
        "--pirate",
        s(&pirate),
        "--z",
        "1",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn search_is_deterministic() {
    let args = [
        "search",
        "--c0",
        "10",
        "--r",
        "0.02",
        "--iterations",
        "5000",
        "--seed",
        "3",
    ];
    let a = tardos(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a), stdout(&tardos(&args)));
    let row: Vec<String> = stdout(&a)
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(String::from)
        .collect();
    assert_eq!(row.last().unwrap(), "true");
    let threaded = tardos(&[
        "search",
        "--c0",
        "10",
        "--r",
        "0.02",
        "--iterations",
        "5000",
        "--seed",
        "3",
        "--threads",
        "4",
    ]);
    assert_eq!(stdout(&a), stdout(&threaded));
}

#[test]
fn search_usage_errors() {
    assert_eq!(
        code(&tardos(&[
            "search",
            "--c0",
            "10",
            "--r",
            "0.02",
            "--iterations",
            "0"
        ])),
        2
    );
    assert_eq!(code(&tardos(&["search", "--c0", "10"])), 2);
    assert_eq!(
        code(&tardos(&[
            "search", "--c0", "10", "--eps1", "1e-10", "--eps2", "2"
        ])),
        2
    );
    assert_eq!(code(&tardos(&["frobnicate"])), 2);
}

#[test]
fn table_cells_equal_single_searches() {
    let t = tardos(&[
        "table",
        "--c0-list",
        "10,20",
        "--r-list",
        "0.02",
        "--iterations",
        "3000",
        "--seed",
        "5",
        "--layout",
        "long",
    ]);
    assert_eq!(code(&t), 0);
    let table = stdout(&t);
    for c0 in ["10", "20"] {
        let one = tardos(&[
            "search",
            "--c0",
            c0,
            "--r",
            "0.02",
            "--iterations",
            "3000",
            "--seed",
            "5",
        ]);
        let a = stdout(&one)
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(2)
            .unwrap()
            .to_string();
        assert!(table.contains(&a), "A = {a} missing from\n{table}");
    }
    let wide = tardos(&[
        "table",
        "--c0-list",
        "10,20",
        "--r-list",
        "0.02",
        "--iterations",
        "3000",
        "--seed",
        "5",
    ]);
    assert_eq!(
        stdout(&wide),
        stdout(&tardos(&[
            "table",
            "--c0-list",
            "10,20",
            "--r-list",
            "0.02",
            "--iterations",
            "3000",
            "--seed",
            "5"
        ]))
    );
}

#[test]
fn predict_half_errors_give_zero_length() {
    let o = tardos(&[
        "predict", "--c0", "10", "--eps1", "0.5", "--eps2", "0.5", "--format", "csv",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "m_min").unwrap();
    assert_eq!(row[col].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn predict_reports_all_strategies() {
    let o = tardos(&[
        "predict",
        "--c0",
        "100",
        "--eps1",
        "1e-10",
        "--tau",
        "1e-9",
        "--strategy",
        "all",
        "--format",
        "jsonl",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 5);
    let cor = rows[0]["large_c"]["m"].as_f64().unwrap();
    assert!((cor / 1e4 - 436.4).abs() < 0.1, "{cor}");
    let ext = rows.iter().find(|r| r["strategy"] == "extremal").unwrap()["m_min"]
        .as_f64()
        .unwrap();
    assert!(rows.iter().all(|r| r["m_min"].as_f64().unwrap() <= ext));

    let text = tardos(&["predict", "--c0", "10"]);
    assert_eq!(code(&text), 0);
    assert!(stdout(&text).contains("mu~"));
}

#[test]
fn config_file_supplies_missing_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "c0 = 10\nr = 0.02\niterations = 4000\n").unwrap();
    let from_file = tardos(&["search", "--config", s(&conf), "--seed", "2"]);
    assert_eq!(
        code(&from_file),
        0,
        "{}",
        String::from_utf8_lossy(&from_file.stderr)
    );
    let direct = tardos(&[
        "search",
        "--c0",
        "10",
        "--r",
        "0.02",
        "--iterations",
        "4000",
        "--seed",
        "2",
    ]);
    assert_eq!(stdout(&from_file), stdout(&direct));
    // Flags on the command line win over the file.
    let over = tardos(&["search", "--config", s(&conf), "--c0", "20", "--seed", "2"]);
    assert!(stdout(&over).lines().nth(1).unwrap().starts_with("20,"));
    assert_eq!(
        code(&tardos(&["search", "--config", "/nonexistent.conf"])),
        4
    );
}

#[test]
fn seed_from_environment() {
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_tardos"));
        cmd.args([
            "search",
            "--c0",
            "10",
            "--r",
            "0.05",
            "--iterations",
            "2000",
        ])
        .args(extra);
        match env {
            Some(v) => cmd.env("TARDOS_SEED", v),
            None => cmd.env_remove("TARDOS_SEED"),
        };
        cmd.output().unwrap().stdout
    };
    assert_eq!(run(Some("17"), &[]), run(None, &["--seed", "17"]));
}

#[test]
fn simulate_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = |k: &str| dir.path().join(format!("run{k}"));
    let go = |k: &str, threads: &str| {
        tardos(&[
            "simulate",
            "--c0",
            "4",
            "--m",
            "300",
            "--z",
            "8",
            "--trials",
            "40",
            "--innocents",
            "30",
            "--strategy",
            "coin",
            "--seed",
            "21",
            "--threads",
            threads,
            "-o",
            s(&prefix(k)),
        ])
    };
    let a = go("a", "1");
    let b = go("b", "3");
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&b));
    for ext in [".jsonl", ".innocent_hist.csv", ".coalition_hist.csv"] {
        let read = |k: &str| {
            let mut p = prefix(k).into_os_string();
            p.push(ext);
            std::fs::read(p).unwrap()
        };
        assert_eq!(read("a"), read("b"), "{ext}");
    }
    let mut p = prefix("a").into_os_string();
    p.push(".jsonl");
    let lines = std::fs::read_to_string(p).unwrap();
    assert_eq!(lines.lines().count(), 41);
}

#[test]
fn simulate_rejects_oversized_coalition() {
    let o = tardos(&[
        "simulate", "--c0", "4", "--m", "100", "--z", "3", "--c", "9", "--trials", "5",
    ]);
    assert_eq!(code(&o), 2);
    let o = tardos(&[
        "simulate",
        "--c0",
        "4",
        "--m",
        "100000",
        "--z",
        "3",
        "--trials",
        "100000",
        "--innocents",
        "100000",
    ]);
    assert_eq!(code(&o), 3);
}
