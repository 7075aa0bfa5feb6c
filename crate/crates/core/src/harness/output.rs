//! Result rows, summaries and CSV files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::config::ScenarioConfig;
use super::HarnessError;
use crate::detection::Verdict;
use crate::tdd::DetectorTrace;

pub const CSV_HEADER: [&str; 10] = [
    "scenario_id",
    "rep",
    "d_true_m",
    "d_set_m",
    "d_est_m",
    "dissimilarity",
    "verdict",
    "rss_dbm",
    "decision",
    "seed",
];

/// One repetition (or one RSS sweep step). Unused columns stay empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row {
    pub scenario_id: String,
    pub rep: usize,
    pub d_true_m: Option<f64>,
    pub d_set_m: Option<f64>,
    pub d_est_m: Option<f64>,
    pub dissimilarity: Option<f64>,
    pub verdict: Option<Verdict>,
    pub rss_dbm: Option<f64>,
    pub decision: Option<String>,
    pub seed: u64,
}

impl Row {
    /// The quantity summarised for this row's group.
    pub fn metric(&self) -> Option<(&'static str, f64)> {
        self.d_est_m
            .map(|v| ("d_est_m", v))
            .or(self.dissimilarity.map(|v| ("dissimilarity", v)))
            .or(self.rss_dbm.map(|v| ("rss_dbm", v)))
    }

    fn record(&self) -> [String; 10] {
        let num = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        [
            self.scenario_id.clone(),
            self.rep.to_string(),
            num(self.d_true_m),
            num(self.d_set_m),
            num(self.d_est_m),
            num(self.dissimilarity),
            self.verdict.map(|v| v.as_str().to_string()).unwrap_or_default(),
            num(self.rss_dbm),
            self.decision.clone().unwrap_or_default(),
            self.seed.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub scenario_id: String,
    pub metric: &'static str,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single row.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub rows: Vec<Row>,
    /// Experiment-level figures such as calibrated thresholds or KS statistics.
    pub stats: BTreeMap<String, f64>,
    /// Detector trace of `tdd-trace` runs.
    pub trace: Option<DetectorTrace>,
}

impl ScenarioResult {
    pub fn new(config: ScenarioConfig) -> Self {
        Self {
            config,
            rows: Vec::new(),
            stats: BTreeMap::new(),
            trace: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn rows_of<'a>(&'a self, scenario_id: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.scenario_id == scenario_id)
    }

    /// Per-group statistics, groups in order of first appearance.
    pub fn summary(&self) -> Vec<GroupSummary> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<&str, (&'static str, Vec<f64>)> = BTreeMap::new();
        for row in &self.rows {
            let Some((metric, v)) = row.metric() else { continue };
            let entry = groups.entry(&row.scenario_id).or_insert_with(|| {
                order.push(&row.scenario_id);
                (metric, Vec::new())
            });
            entry.1.push(v);
        }
        order
            .into_iter()
            .map(|id| {
                let (metric, values) = &groups[id];
                let n = values.len();
                let mean = values.iter().sum::<f64>() / n as f64;
                let sd = if n > 1 {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                GroupSummary {
                    scenario_id: id.to_string(),
                    metric,
                    count: n,
                    mean,
                    sd,
                    min: values.iter().copied().fold(f64::INFINITY, f64::min),
                    max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect()
    }

    pub fn group(&self, scenario_id: &str) -> Option<GroupSummary> {
        self.summary().into_iter().find(|g| g.scenario_id == scenario_id)
    }

    pub fn write_rows<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for row in &self.rows {
            out.write_record(row.record())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["scenario_id", "metric", "count", "mean", "sd", "min", "max"])?;
        for g in self.summary() {
            out.write_record([
                g.scenario_id,
                g.metric.to_string(),
                g.count.to_string(),
                format!("{:.6}", g.mean),
                format!("{:.6}", g.sd),
                format!("{:.6}", g.min),
                format!("{:.6}", g.max),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_stats<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["key", "value"])?;
        for (k, v) in &self.stats {
            out.write_record([k.clone(), format!("{v:.6}")])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `<stem>.csv`, `<stem>.summary.csv`, `<stem>.stats.csv`,
    /// `<stem>.config.toml` and, for trace runs, `<stem>.trace.csv` into `dir`.
    pub fn write_all(&self, dir: &Path, stem: &str) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        emit_csv(self, &dir.join(format!("{stem}.csv")))?;
        write_with(&dir.join(format!("{stem}.summary.csv")), |f| self.write_summary(f))?;
        write_with(&dir.join(format!("{stem}.stats.csv")), |f| self.write_stats(f))?;
        if let Some(trace) = &self.trace {
            write_with(&dir.join(format!("{stem}.trace.csv")), |f| trace.write_csv(f))?;
        }
        let path = dir.join(format!("{stem}.config.toml"));
        std::fs::write(&path, self.config.to_flat_toml()).map_err(|source| HarnessError::Io { path, source })
    }
}

fn write_with(path: &Path, f: impl FnOnce(File) -> csv::Result<()>) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f(file).map_err(|source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

/// Header plus one line per row.
pub fn emit_csv(result: &ScenarioResult, path: &Path) -> Result<(), HarnessError> {
    write_with(path, |f| result.write_rows(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentKind;

    fn result_with(values: &[f64]) -> ScenarioResult {
        let mut r = ScenarioResult::new(ScenarioConfig::builtin(ExperimentKind::Sweep));
        for (i, &v) in values.iter().enumerate() {
            r.rows.push(Row {
                scenario_id: "g".into(),
                rep: i,
                d_est_m: Some(v),
                seed: 1,
                ..Row::default()
            });
        }
        r
    }

    #[test]
    fn summary_statistics() {
        let g = result_with(&[1.0, 2.0, 3.0, 4.0]).summary().remove(0);
        assert_eq!(g.count, 4);
        assert_eq!(g.mean, 2.5);
        assert!((g.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!((g.min, g.max), (1.0, 4.0));
    }

    #[test]
    fn empty_columns_and_formatting() {
        let mut buf = Vec::new();
        result_with(&[1.0 / 3.0]).write_rows(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "g,0,,,0.333333,,,,,1");
    }

    #[test]
    fn io_error_names_path() {
        let r = result_with(&[1.0]);
        let err = emit_csv(&r, Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }
}
