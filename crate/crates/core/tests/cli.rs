use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const THREE_PROGRAM_CSV: &str = "program,workload,set_index,value
q0,w,0,3
q1,w,0,4
q2,w,0,2
q0,w,1,1
q1,w,1,4
q2,w,1,1
q0,w,2,5
q1,w,2,3
q2,w,2,4
q0,w,3,4
q1,w,3,5
q2,w,3,3
";

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("m.csv"), THREE_PROGRAM_CSV).unwrap();
        fs::write(dir.path().join("flags.txt"), "-fa\n-fb\n").unwrap();
        fs::write(
            dir.path().join("features.csv"),
            "program,workload,m0,m1\nq0,w,1,2\nq1,w,3,1\nq2,w,2,5\n",
        )
        .unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn dataset(&self) -> Vec<String> {
        vec![
            "--measurements".into(),
            self.s("m.csv"),
            "--sets".into(),
            self.s("flags.txt"),
            "--baseline".into(),
            "0".into(),
        ]
    }
}

fn flagrec(args: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flagrec"))
        .args(args)
        .output()
        .unwrap()
}

fn args(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn kb_inspect_reports_best_sets() {
    let f = Fixture::new();
    let mut a = args(&["kb", "inspect"]);
    a.extend(f.dataset());
    let o = flagrec(&a);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = stdout(&o);
    assert!(text.starts_with("3 targets\n"), "{text}");
    assert!(text.contains("q0/w: best set 1 speedup 3.0000"), "{text}");
    assert!(text.contains("q1/w: best set 2 speedup 1.3333"), "{text}");
    assert!(text.contains("q2/w: best set 1 speedup 2.0000"), "{text}");
}

#[test]
fn kb_inspect_empty() {
    let f = Fixture::new();
    fs::write(f.path("empty.csv"), "program,workload,set_index,value\n").unwrap();
    let o = flagrec(&args(&[
        "kb",
        "inspect",
        "--measurements",
        &f.s("empty.csv"),
        "--sets",
        &f.s("flags.txt"),
    ]));
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("0 targets\n"));
}

#[test]
fn kb_build_round_trips_through_inspect() {
    let f = Fixture::new();
    let mut a = args(&[
        "kb",
        "build",
        "--features",
        &f.s("features.csv"),
        "--out",
        &f.s("kb"),
    ]);
    a.extend(f.dataset());
    assert_eq!(flagrec(&a).status.code(), Some(0));
    let o = flagrec(&args(&["kb", "inspect", "--kb", &f.s("kb")]));
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("q1/w: best set 2"));
    assert!(f.path("kb").join("resolved_config.txt").exists());
}

fn simulate(f: &Fixture, out: &str, extra: &[&str]) -> Output {
    let mut a = args(&[
        "simulate",
        "--algo",
        "random,tp,cf",
        "--reps",
        "5",
        "--out",
        &f.s(out),
    ]);
    a.extend(f.dataset());
    a.extend(args(extra));
    flagrec(&a)
}

#[test]
fn simulate_writes_byte_stable_reports() {
    let f = Fixture::new();
    assert_eq!(simulate(&f, "a", &[]).status.code(), Some(0));
    assert_eq!(simulate(&f, "b", &["--jobs", "3"]).status.code(), Some(0));
    for file in ["gap_curves.csv", "summary.csv", "delays.csv"] {
        let a = fs::read(f.path("a").join(file)).unwrap();
        let b = fs::read(f.path("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let summary = fs::read_to_string(f.path("a").join("summary.csv")).unwrap();
    assert!(summary.starts_with("algorithm,iteration,harmonic_gap,q1,median,q3\n"));
    let resolved = fs::read_to_string(f.path("a").join("resolved_config.txt")).unwrap();
    assert!(resolved.starts_with("[simulate]\n"));
    assert!(resolved.contains("algo = random,tp,cf"));
}

#[test]
fn report_recomputes_delays() {
    let f = Fixture::new();
    assert_eq!(simulate(&f, "a", &[]).status.code(), Some(0));
    let o = flagrec(&args(&[
        "report",
        "--dir",
        &f.s("a"),
        "--reference",
        "tp",
        "--iterations",
        "1,2",
        "--out",
        &f.s("r"),
    ]));
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let delays = fs::read_to_string(f.path("r").join("delays.csv")).unwrap();
    assert!(delays.starts_with("algorithm,threshold_or_iteration,delay\n"));
    assert!(delays.contains("cf,iter=2,"));
}

#[test]
fn report_fails_when_reference_never_reaches_threshold() {
    let f = Fixture::new();
    fs::create_dir_all(f.path("r")).unwrap();
    fs::write(
        f.path("r").join("summary.csv"),
        "algorithm,iteration,harmonic_gap,q1,median,q3\ncf,1,1.00000,1.00000,1.00000,1.00000\ncf,2,0.600000,0.600000,0.600000,0.600000\n",
    )
    .unwrap();
    let o = flagrec(&args(&["report", "--dir", &f.s("r")]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_and_data_errors_use_distinct_exit_codes() {
    let f = Fixture::new();
    // cbf without features is a configuration error
    let mut a = args(&["simulate", "--algo", "cbf", "--out", &f.s("x")]);
    a.extend(f.dataset());
    assert_eq!(flagrec(&a).status.code(), Some(2));
    // unknown flag
    assert_eq!(
        flagrec(&args(&["simulate", "--bogus"])).status.code(),
        Some(2)
    );
    // unknown metric
    let mut a = args(&["simulate", "--metric", "hamming", "--out", &f.s("x")]);
    a.extend(f.dataset());
    assert_eq!(flagrec(&a).status.code(), Some(2));
    // malformed data
    fs::write(
        f.path("bad.csv"),
        "program,workload,set_index,value\nq0,w,0,-1\n",
    )
    .unwrap();
    let o = flagrec(&args(&[
        "kb",
        "inspect",
        "--measurements",
        &f.s("bad.csv"),
        "--sets",
        &f.s("flags.txt"),
    ]));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn config_file_supplies_defaults_and_rejects_unknown_keys() {
    let f = Fixture::new();
    fs::write(
        f.path("c.ini"),
        "[simulate]\nk = 2\nmetric = manhattan\nalgo = cf\n",
    )
    .unwrap();
    let mut a = args(&[
        "simulate",
        "--config",
        &f.s("c.ini"),
        "--metric",
        "chebyshev",
        "--out",
        &f.s("o"),
    ]);
    a.extend(f.dataset());
    let o = flagrec(&a);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let resolved = fs::read_to_string(f.path("o").join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("k = 2\n"), "{resolved}");
    assert!(resolved.contains("metric = chebyshev\n"), "{resolved}");

    fs::write(f.path("bad.ini"), "[simulate]\nneighbours = 2\n").unwrap();
    let mut a = args(&["simulate", "--config", &f.s("bad.ini"), "--out", &f.s("o")]);
    a.extend(f.dataset());
    assert_eq!(flagrec(&a).status.code(), Some(2));
}

fn fake_compiler(dir: &Path) -> String {
    // "compiles" a shell script whose runtime depends on the -fa flag
    let script = dir.join("cc.sh");
    fs::write(
        &script,
        "#!/bin/sh\nout=\"$1\"; shift\ncase \" $* \" in *\" -fa \"*) d=0 ;; *) d=0.05 ;; esac\nprintf '#!/bin/sh\\nsleep %s\\n' \"$d\" > \"$out\"\nchmod +x \"$out\"\n",
    )
    .unwrap();
    format!("sh {} {{output}} {{flags}}", script.display())
}

#[test]
fn tune_without_kb_uses_index_order() {
    let f = Fixture::new();
    let compile = fake_compiler(f.dir.path());
    let o = flagrec(&args(&[
        "tune",
        "--sets",
        &f.s("flags.txt"),
        "--baseline",
        "0",
        "--compile",
        &compile,
        "--run",
        "{binary}",
        "--runs",
        "1",
        "--workdir",
        &f.s(""),
        "--out",
        &f.s("t"),
    ]));
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let log = fs::read_to_string(f.path("t").join("session_log.csv")).unwrap();
    let sets: Vec<&str> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(sets, ["0", "1", "2", "3"]);
    let out = stdout(&o);
    assert!(
        out.contains("best set 1") || out.contains("best set 3"),
        "{out}"
    );
}

#[test]
fn tune_rejects_incomplete_templates() {
    let f = Fixture::new();
    let o = flagrec(&args(&[
        "tune",
        "--compile",
        "cc -o {output}",
        "--run",
        "{binary}",
        "--out",
        &f.s("t"),
    ]));
    assert_eq!(o.status.code(), Some(2));
}
