//! Metrics rows and their CSV log.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 9] = [
    "step",
    "episode_return_mean",
    "episode_return_std",
    "surrogate_return_mean",
    "disc_expert_mean",
    "disc_policy_mean",
    "diff_loss_expert",
    "diff_loss_policy",
    "wallclock_s",
];

/// One evaluation point. Diffusion losses are NaN for the GAIL baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode_return_mean: f64,
    pub episode_return_std: f64,
    pub surrogate_return_mean: f64,
    pub disc_expert_mean: f64,
    pub disc_policy_mean: f64,
    pub diff_loss_expert: f64,
    pub diff_loss_policy: f64,
    pub wallclock_s: f64,
}

impl MetricsRow {
    pub fn values(&self) -> [f64; 8] {
        [
            self.episode_return_mean,
            self.episode_return_std,
            self.surrogate_return_mean,
            self.disc_expert_mean,
            self.disc_policy_mean,
            self.diff_loss_expert,
            self.diff_loss_policy,
            self.wallclock_s,
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.step.to_string();
        for v in self.values() {
            s.push(',');
            s.push_str(&format_f64(v));
        }
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != METRICS_COLUMNS.len() {
            return Err(Error::Config(format!(
                "metrics row has {} fields, expected {}",
                fields.len(),
                METRICS_COLUMNS.len()
            )));
        }
        let bad = |f: &str| Error::Config(format!("bad metrics value {f:?}"));
        let step = fields[0].parse().map_err(|_| bad(fields[0]))?;
        let mut v = [0.0; 8];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad(f))?;
        }
        Ok(MetricsRow {
            step,
            episode_return_mean: v[0],
            episode_return_std: v[1],
            surrogate_return_mean: v[2],
            disc_expert_mean: v[3],
            disc_policy_mean: v[4],
            diff_loss_expert: v[5],
            diff_loss_policy: v[6],
            wallclock_s: v[7],
        })
    }
}

/// Shortest representation that round-trips.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:?}")
    }
}

/// Append-only CSV writer; lines starting with `#` carry the run config.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: impl AsRef<Path>, preamble: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut log = MetricsLog {
            out: BufWriter::new(file),
            path,
        };
        let mut head = String::new();
        for (k, v) in preamble {
            head.push_str(&format!("# {k}={v}\n"));
        }
        head.push_str(&METRICS_COLUMNS.join(","));
        log.line(&head)?;
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.line(&row.to_csv())
    }
}

/// Reads a metrics CSV, skipping `#` lines; the header is mandatory.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line.trim() != METRICS_COLUMNS.join(",") {
                return Err(Error::Config(format!("{}: missing metrics header", path.display())));
            }
            saw_header = true;
            continue;
        }
        rows.push(MetricsRow::parse(&line)?);
    }
    if !saw_header {
        return Err(Error::Config(format!("{}: missing metrics header", path.display())));
    }
    Ok(rows)
}
