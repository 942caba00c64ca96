//! Dataset and report file formats.
//!
//! All tables are comma-separated UTF-8 with a mandatory header row:
//!
//! | file              | columns                                          |
//! |-------------------|--------------------------------------------------|
//! | measurements      | `program,workload,set_index,value`               |
//! | features          | `program,workload,m0,m1,...`                     |
//! | `gap_curves.csv`  | `algorithm,program,workload,iteration,gap`       |
//! | `summary.csv`     | `algorithm,iteration,harmonic_gap,q1,median,q3`  |
//! | `delays.csv`      | `algorithm,threshold_or_iteration,delay`         |
//!
//! A flag table is plain text with one flag per line. `set_index` is the
//! little-endian bitmask over the flag table. Report numbers are printed with
//! six significant digits in fixed notation so the files are byte-stable.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::{Checkpoint, DelayRow, EvaluationReport};
use crate::model::{
    build_knowledge_base, FlagTable, KnowledgeBase, Measurement, ModelError, Objective, TargetKey,
};
use crate::stats::median;

pub const MEASUREMENTS_HEADER: [&str; 4] = ["program", "workload", "set_index", "value"];
pub const GAP_CURVES_HEADER: [&str; 5] = ["algorithm", "program", "workload", "iteration", "gap"];
pub const SUMMARY_HEADER: [&str; 6] = [
    "algorithm",
    "iteration",
    "harmonic_gap",
    "q1",
    "median",
    "q3",
];
pub const DELAYS_HEADER: [&str; 3] = ["algorithm", "threshold_or_iteration", "delay"];

pub const GAP_CURVES_FILE: &str = "gap_curves.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const DELAYS_FILE: &str = "delays.csv";

pub const BUNDLE_FLAGS: &str = "flags.txt";
pub const BUNDLE_MEASUREMENTS: &str = "measurements.csv";
pub const BUNDLE_FEATURES: &str = "features.csv";
pub const BUNDLE_MANIFEST: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },
    #[error("line {line}: duplicate flag {flag:?}")]
    DuplicateFlag { line: u64, flag: String },
    #[error("flag table is empty")]
    EmptyFlagTable,
    #[error("line {line}: duplicate feature row for {target}")]
    DuplicateTarget { line: u64, target: TargetKey },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(line: u64, column: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn csv_err(e: csv::Error) -> IngestError {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(line, 0, e.to_string())
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Reads rows until the first one and checks it against `expected`.
fn check_header(
    records: &mut csv::StringRecordsIter<'_, impl Read>,
    expected: &[&str],
    prefix_only: bool,
) -> Result<Option<csv::StringRecord>, IngestError> {
    let Some(header) = records.next().transpose().map_err(csv_err)? else {
        return Ok(None);
    };
    let line = line_of(&header);
    let n = if prefix_only {
        expected.len()
    } else {
        header.len().max(expected.len())
    };
    for i in 0..n {
        let got = header.get(i).unwrap_or("");
        let want = expected.get(i).copied().unwrap_or("");
        if got != want {
            return Err(parse_err(
                line,
                i + 1,
                format!("header mismatch: expected {want:?}, found {got:?}"),
            ));
        }
    }
    Ok(Some(header))
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    column: usize,
    what: &str,
) -> Result<T, IngestError> {
    let raw = record.get(column).unwrap_or("");
    raw.parse().map_err(|_| {
        parse_err(
            line_of(record),
            column + 1,
            format!("invalid {what} {raw:?}"),
        )
    })
}

/// Parses a measurements table. Repeated `(target, set)` rows are collapsed
/// to their median. Output is sorted by target then set.
pub fn parse_measurements<R: Read>(
    input: R,
    catalogue: usize,
) -> Result<Vec<Measurement>, IngestError> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    if check_header(&mut records, &MEASUREMENTS_HEADER, false)?.is_none() {
        return Err(parse_err(1, 1, "missing header row"));
    }
    let mut raw: BTreeMap<(TargetKey, usize), Vec<f64>> = BTreeMap::new();
    for record in records {
        let record = record.map_err(csv_err)?;
        let line = line_of(&record);
        if record.len() != MEASUREMENTS_HEADER.len() {
            return Err(parse_err(
                line,
                record.len().min(MEASUREMENTS_HEADER.len()) + 1,
                format!(
                    "expected {} columns, found {}",
                    MEASUREMENTS_HEADER.len(),
                    record.len()
                ),
            ));
        }
        let set: usize = parse_field(&record, 2, "set index")?;
        if set >= catalogue {
            return Err(parse_err(
                line,
                3,
                format!("unknown set index {set} (catalogue has {catalogue} sets)"),
            ));
        }
        let value: f64 = parse_field(&record, 3, "value")?;
        if value <= 0.0 || !value.is_finite() {
            return Err(parse_err(
                line,
                4,
                format!("value {value} must be strictly positive"),
            ));
        }
        let target = TargetKey::new(&record[0], &record[1]);
        raw.entry((target, set)).or_default().push(value);
    }
    Ok(raw
        .into_iter()
        .map(|((target, set), values)| {
            Measurement::new(target, set, median(&values).expect("at least one value"))
        })
        .collect())
}

pub fn read_measurements(path: &Path, catalogue: usize) -> Result<Vec<Measurement>, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_measurements(io::BufReader::new(file), catalogue)
}

/// Parses a flag table: one flag per line, blank lines ignored.
pub fn parse_flag_table(text: &str) -> Result<FlagTable, IngestError> {
    let mut names: Vec<(u64, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let flag = line.trim();
        if flag.is_empty() {
            continue;
        }
        let line_no = i as u64 + 1;
        if names.iter().any(|(_, n)| *n == flag) {
            return Err(IngestError::DuplicateFlag {
                line: line_no,
                flag: flag.to_string(),
            });
        }
        names.push((line_no, flag));
    }
    if names.is_empty() {
        return Err(IngestError::EmptyFlagTable);
    }
    Ok(FlagTable::new(names.into_iter().map(|(_, n)| n))?)
}

pub fn read_flag_table(path: &Path) -> Result<FlagTable, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_flag_table(&text)
}

/// Parses a features table into one opaque vector per target.
pub fn parse_features<R: Read>(input: R) -> Result<BTreeMap<TargetKey, Vec<f64>>, IngestError> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    let header = check_header(&mut records, &["program", "workload"], true)?
        .ok_or_else(|| parse_err(1, 1, "missing header row"))?;
    let width = header.len();
    if width < 3 {
        return Err(parse_err(
            line_of(&header),
            3,
            "features table has no metric columns",
        ));
    }
    let mut out = BTreeMap::new();
    for record in records {
        let record = record.map_err(csv_err)?;
        let line = line_of(&record);
        if record.len() != width {
            return Err(parse_err(
                line,
                record.len().min(width) + 1,
                format!("expected {width} columns, found {}", record.len()),
            ));
        }
        let values = (2..width)
            .map(|c| {
                let v: f64 = parse_field(&record, c, "feature value")?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(line, c + 1, "feature value must be finite"))
                }
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let target = TargetKey::new(&record[0], &record[1]);
        if out.contains_key(&target) {
            return Err(IngestError::DuplicateTarget { line, target });
        }
        out.insert(target, values);
    }
    Ok(out)
}

pub fn read_features(path: &Path) -> Result<BTreeMap<TargetKey, Vec<f64>>, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_features(io::BufReader::new(file))
}

/// Formats `x` with six significant digits in fixed notation.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() {
            "0.00000".into()
        } else {
            x.to_string()
        };
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci
        .rsplit('e')
        .next()
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

fn write_file(path: &Path, contents: &str) -> Result<(), IngestError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(contents.as_bytes()).map_err(io_err(path))
}

/// Measurements table with full round-trip precision, sorted by target then set.
pub fn format_measurements(measurements: &[Measurement]) -> String {
    let mut rows: Vec<&Measurement> = measurements.iter().collect();
    rows.sort_by(|a, b| a.target.cmp(&b.target).then(a.set.cmp(&b.set)));
    let mut out = MEASUREMENTS_HEADER.join(",");
    out.push('\n');
    for m in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            m.target.program, m.target.workload, m.set, m.value
        ));
    }
    out
}

pub fn format_features(features: &BTreeMap<TargetKey, Vec<f64>>) -> String {
    let width = features.values().map(Vec::len).max().unwrap_or(0);
    let mut out = String::from("program,workload");
    for i in 0..width {
        out.push_str(&format!(",m{i}"));
    }
    out.push('\n');
    for (t, v) in features {
        out.push_str(&t.program);
        out.push(',');
        out.push_str(&t.workload);
        for x in v {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    out
}

pub fn format_flag_table(flags: &FlagTable) -> String {
    flags
        .flags()
        .iter()
        .map(|f| format!("{}\n", f.name))
        .collect()
}

/// Dataset manifest: baseline set, objective and suite name.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub baseline: usize,
    pub objective: Objective,
    pub suite: String,
}

impl Manifest {
    pub fn format(&self) -> String {
        format!(
            "baseline={}\nobjective={}\nsuite={}\n",
            self.baseline, self.objective, self.suite
        )
    }

    pub fn parse(text: &str) -> Result<Manifest, IngestError> {
        let mut baseline = None;
        let mut objective = Objective::Minimize;
        let mut suite = String::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i as u64 + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, 1, "expected key=value"))?;
            let value = value.trim();
            match key.trim() {
                "baseline" => {
                    baseline = Some(value.parse().map_err(|_| {
                        parse_err(
                            line_no,
                            key.len() + 2,
                            format!("invalid baseline {value:?}"),
                        )
                    })?)
                }
                "objective" => {
                    objective = value
                        .parse()
                        .map_err(|e: String| parse_err(line_no, key.len() + 2, e))?
                }
                "suite" => suite = value.to_string(),
                other => {
                    return Err(parse_err(
                        line_no,
                        1,
                        format!("unknown manifest key {other:?}"),
                    ))
                }
            }
        }
        Ok(Manifest {
            baseline: baseline.ok_or_else(|| parse_err(0, 0, "manifest lacks a baseline"))?,
            objective,
            suite,
        })
    }
}

/// A knowledge base persisted as a directory of dataset files.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub kb: KnowledgeBase,
    pub manifest: Manifest,
}

impl DatasetBundle {
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut written = Vec::new();
        let mut put = |name: &str, contents: String| -> Result<(), IngestError> {
            let path = dir.join(name);
            write_file(&path, &contents)?;
            written.push(path);
            Ok(())
        };
        put(BUNDLE_FLAGS, format_flag_table(self.kb.flags()))?;
        put(
            BUNDLE_MEASUREMENTS,
            format_measurements(&self.kb.measurements()),
        )?;
        if let Some(f) = self.kb.features() {
            put(BUNDLE_FEATURES, format_features(f))?;
        }
        put(BUNDLE_MANIFEST, self.manifest.format())?;
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<DatasetBundle, IngestError> {
        let manifest_path = dir.join(BUNDLE_MANIFEST);
        let manifest =
            Manifest::parse(&fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?)?;
        let flags = read_flag_table(&dir.join(BUNDLE_FLAGS))?;
        let ms = read_measurements(&dir.join(BUNDLE_MEASUREMENTS), flags.catalogue_size())?;
        let mut kb = build_knowledge_base(&ms, flags, manifest.baseline)?;
        let features_path = dir.join(BUNDLE_FEATURES);
        if features_path.exists() {
            kb = kb.with_features(read_features(&features_path)?);
        }
        Ok(DatasetBundle { kb, manifest })
    }
}

fn delay_cell(row: &DelayRow) -> String {
    match row.delay {
        Some(d) => d.to_string(),
        None => "undefined".into(),
    }
}

pub fn format_delays(rows: &[DelayRow]) -> String {
    let mut sorted: Vec<&DelayRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.algorithm
            .cmp(&b.algorithm)
            .then_with(|| checkpoint_key(&a.checkpoint).total_cmp(&checkpoint_key(&b.checkpoint)))
    });
    let mut out = DELAYS_HEADER.join(",");
    out.push('\n');
    for row in sorted {
        out.push_str(&format!(
            "{},{},{}\n",
            row.algorithm,
            row.checkpoint,
            delay_cell(row)
        ));
    }
    out
}

// gap thresholds sort before iteration checkpoints; gaps descending
fn checkpoint_key(cp: &Checkpoint) -> f64 {
    match cp {
        Checkpoint::Gap(g) => -g,
        Checkpoint::Iteration(i) => 1.0 + *i as f64,
    }
}

pub fn format_gap_curves(report: &EvaluationReport) -> String {
    let mut out = GAP_CURVES_HEADER.join(",");
    out.push('\n');
    for (name, alg) in &report.algorithms {
        for curve in &alg.curves {
            for (i, g) in curve.gaps.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    name,
                    curve.target.program,
                    curve.target.workload,
                    i + 1,
                    fmt6(*g)
                ));
            }
        }
    }
    out
}

/// Summary rows followed by one `# excluded,<algorithm>,<program>,<workload>`
/// comment line per excluded target.
pub fn format_summary(report: &EvaluationReport) -> String {
    let mut out = SUMMARY_HEADER.join(",");
    out.push('\n');
    for (name, alg) in &report.algorithms {
        for (i, (h, q)) in alg.harmonic.iter().zip(&alg.quartiles).enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                name,
                i + 1,
                fmt6(*h),
                fmt6(q.q1),
                fmt6(q.median),
                fmt6(q.q3)
            ));
        }
    }
    for (name, alg) in &report.algorithms {
        for t in &alg.excluded {
            out.push_str(&format!(
                "# excluded,{},{},{}\n",
                name, t.program, t.workload
            ));
        }
    }
    out
}

/// Writes `gap_curves.csv`, `summary.csv` and `delays.csv` into `out_dir`.
pub fn write_report(
    report: &EvaluationReport,
    delays: &[DelayRow],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, IngestError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let files = [
        (GAP_CURVES_FILE, format_gap_curves(report)),
        (SUMMARY_FILE, format_summary(report)),
        (DELAYS_FILE, format_delays(delays)),
    ];
    let mut written = Vec::new();
    for (name, contents) in files {
        let path = out_dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_delays(delays: &[DelayRow], out_dir: &Path) -> Result<PathBuf, IngestError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join(DELAYS_FILE);
    write_file(&path, &format_delays(delays))?;
    Ok(path)
}

/// Harmonic-gap curves per algorithm read back from a `summary.csv`.
pub fn parse_summary<R: Read>(input: R) -> Result<BTreeMap<String, Vec<f64>>, IngestError> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    if check_header(&mut records, &SUMMARY_HEADER, false)?.is_none() {
        return Err(parse_err(1, 1, "missing header row"));
    }
    let mut out: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for record in records {
        let record = record.map_err(csv_err)?;
        if record.len() != SUMMARY_HEADER.len() {
            return Err(parse_err(
                line_of(&record),
                record.len().min(SUMMARY_HEADER.len()) + 1,
                format!(
                    "expected {} columns, found {}",
                    SUMMARY_HEADER.len(),
                    record.len()
                ),
            ));
        }
        let iteration: usize = parse_field(&record, 1, "iteration")?;
        let h: f64 = parse_field(&record, 2, "harmonic gap")?;
        out.entry(record[0].to_string())
            .or_default()
            .push((iteration, h));
    }
    Ok(out
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|(i, _)| *i);
            (k, v.into_iter().map(|(_, h)| h).collect())
        })
        .collect())
}

pub fn read_summary(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_summary(io::BufReader::new(file))
}
