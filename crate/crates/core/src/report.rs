//! Report files.
//!
//! * `trials.csv`: `strategy,trial,stage,labeled_count,test_mse`, one row per
//!   stage of every trial.
//! * `summary.csv`: `strategy,stage,mean_mse,std_mse`, the across-trial mean
//!   and sample standard deviation, ready to plot as learning curves.
//! * `partial/<strategy>_trial<t>.csv`: the `trials.csv` rows of one run,
//!   appended as each stage finishes.
//!
//! Wall-clock times are not written, so identical configurations produce
//! byte-identical files.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::acquisition::Strategy;
use crate::al_loop::{summarize, Report, StageRecord, SummaryRow, TrialRecord};
use crate::error::{Error, Result};

pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PARTIAL_DIR: &str = "partial";
const TRIALS_HEADER: &str = "strategy,trial,stage,labeled_count,test_mse";
const SUMMARY_HEADER: &str = "strategy,stage,mean_mse,std_mse";

fn trial_row(out: &mut String, r: &TrialRecord) {
    writeln!(
        out,
        "{},{},{},{},{}",
        r.strategy, r.trial, r.record.stage, r.record.labeled_count, r.record.test_mse
    )
    .unwrap();
}

pub fn trials_to_string(records: &[TrialRecord]) -> String {
    let mut out = format!("{TRIALS_HEADER}\n");
    for r in records {
        trial_row(&mut out, r);
    }
    out
}

pub fn summary_to_string(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.strategy, r.stage, r.mean_mse, r.std_mse).unwrap();
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `trials.csv` and `summary.csv` into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(TRIALS_FILE), &trials_to_string(&report.records))?;
    write(&dir.join(SUMMARY_FILE), &summary_to_string(&report.summary))?;
    Ok(())
}

pub fn partial_path(dir: &Path, strategy: Strategy, trial: usize) -> PathBuf {
    dir.join(PARTIAL_DIR).join(format!("{strategy}_trial{trial}.csv"))
}

/// Appends one finished stage to its run's partial file, creating the file
/// with a header on the first stage.
pub fn append_partial(dir: &Path, strategy: Strategy, trial: usize, record: &StageRecord) -> Result<()> {
    let path = partial_path(dir, strategy, trial);
    let parent = path.parent().expect("partial path has a parent");
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let mut text = String::new();
    if record.stage == 0 {
        writeln!(text, "{TRIALS_HEADER}").unwrap();
    }
    trial_row(
        &mut text,
        &TrialRecord {
            strategy,
            trial,
            record: record.clone(),
        },
    );
    let mut f = OpenOptions::new()
        .create(true)
        .append(record.stage != 0)
        .write(true)
        .truncate(record.stage == 0)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    f.flush().map_err(|e| Error::io(&path, e))
}

pub fn parse_trials(text: &str, origin: &str) -> Result<Vec<TrialRecord>> {
    let err = |line: usize, reason: String| Error::Parse {
        path: origin.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRIALS_HEADER => {}
        _ => return Err(err(1, format!("expected header `{TRIALS_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (no, line) in lines {
        let line_no = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let [s, t, st, n, mse] = cells.as_slice() else {
            return Err(err(line_no, format!("expected 5 columns, found {}", cells.len())));
        };
        let bad = |what: &str, v: &str| err(line_no, format!("bad {what} `{v}`"));
        out.push(TrialRecord {
            strategy: s.parse().map_err(|e: String| err(line_no, e))?,
            trial: t.parse().map_err(|_| bad("trial", t))?,
            record: StageRecord {
                stage: st.parse().map_err(|_| bad("stage", st))?,
                labeled_count: n.parse().map_err(|_| bad("labeled_count", n))?,
                test_mse: mse.parse().map_err(|_| bad("test_mse", mse))?,
                train_loss_final: f64::NAN,
                wall_time: 0.0,
                pool_exhausted: false,
            },
        });
    }
    Ok(out)
}

/// Reads per-trial records from `dir`: `trials.csv` when present, otherwise
/// every file under `partial/`.
pub fn read_trials(dir: &Path) -> Result<Vec<TrialRecord>> {
    let main = dir.join(TRIALS_FILE);
    if main.exists() {
        let text = fs::read_to_string(&main).map_err(|e| Error::io(&main, e))?;
        return parse_trials(&text, &main.display().to_string());
    }
    let pdir = dir.join(PARTIAL_DIR);
    let mut files: Vec<PathBuf> = fs::read_dir(&pdir)
        .map_err(|e| Error::io(&pdir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        out.extend(parse_trials(&text, &f.display().to_string())?);
    }
    Ok(out)
}

/// Recomputes the summary of the records found in `dir` and writes
/// `summary.csv` next to them.
pub fn reaggregate(dir: &Path) -> Result<Vec<SummaryRow>> {
    let records = read_trials(dir)?;
    let strategies: Vec<Strategy> = Strategy::ALL
        .into_iter()
        .filter(|s| records.iter().any(|r| r.strategy == *s))
        .collect();
    let rows = summarize(&records, &strategies);
    write(&dir.join(SUMMARY_FILE), &summary_to_string(&rows))?;
    Ok(rows)
}
