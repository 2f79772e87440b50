//! Result rows, aggregation, and report files.
//!
//! Each (method, seed) run produces one [`SeedRow`]. Rows are persisted as
//! line-delimited JSON ([`write_rows`] / [`read_rows`]); aggregate tables are
//! delimiter-separated text with a fixed column order. The canonical report
//! form ([`canonical_report`]) excludes wall-clock time, so identical
//! (config, seed) runs produce byte-identical canonical reports even though
//! their timings differ.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracy of one network on one dataset. `top5` is populated only when the
/// task has at least six classes (below that it is degenerate or nearly so).
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub top1: f64,
    pub top3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top5: Option<f64>,
}

/// Whether a run finished, and if not, which stage aborted.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { stage: String, message: String },
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

/// Content digests of every network a run produced or depended on.
#[derive(Serialize, Deserialize, Clone, Debug, Default, PartialEq)]
pub struct NetDigests {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student: Option<String>,
}

/// One method evaluated under one seed.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SeedRow {
    pub config_digest: String,
    pub method: String,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_in_top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_out_top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(default)]
    pub digests: NetDigests,
}

impl SeedRow {
    /// Deterministic single-line JSON of everything except timing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("report rows contain only finite values")
    }
}

/// A [`SeedRow`] plus its measured wall-clock time, the on-disk record form.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TimedRow {
    #[serde(flatten)]
    pub row: SeedRow,
    pub wall_clock_s: f64,
}

/// Sample mean and (n-1)-normalized standard deviation. With fewer than two
/// values the deviation is undefined and reported absent.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::invalid("cannot aggregate zero values"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(Aggregate { n, mean, std })
}

/// Per-method aggregation over that method's successful seed rows.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub top1: Aggregate,
    pub top3: Aggregate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top5: Option<Aggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_in_top1: Option<Aggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_out_top1: Option<Aggregate>,
}

/// Group rows by method (sorted by name) and aggregate each metric over the
/// successful rows. Methods whose rows all failed are dropped; if nothing
/// succeeded at all, that is an error.
pub fn summarize(rows: &[SeedRow]) -> Result<Vec<MethodSummary>> {
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    let mut out = Vec::new();
    for method in methods {
        let ok: Vec<&SeedRow> = rows
            .iter()
            .filter(|r| r.method == method && r.status.is_ok() && r.metrics.is_some())
            .collect();
        if ok.is_empty() {
            continue;
        }
        let collect = |f: &dyn Fn(&SeedRow) -> Option<f64>| -> Vec<f64> {
            ok.iter().filter_map(|r| f(r)).collect()
        };
        let top1 = aggregate(&collect(&|r| r.metrics.map(|m| m.top1)))?;
        let top3 = aggregate(&collect(&|r| r.metrics.map(|m| m.top3)))?;
        let top5s = collect(&|r| r.metrics.and_then(|m| m.top5));
        let top5 = (top5s.len() == ok.len()).then(|| aggregate(&top5s)).transpose()?;
        let t_in = collect(&|r| r.teacher_in_top1);
        let teacher_in_top1 = (t_in.len() == ok.len()).then(|| aggregate(&t_in)).transpose()?;
        let t_out = collect(&|r| r.teacher_out_top1);
        let teacher_out_top1 = (t_out.len() == ok.len()).then(|| aggregate(&t_out)).transpose()?;
        out.push(MethodSummary {
            method: method.to_string(),
            top1,
            top3,
            top5,
            teacher_in_top1,
            teacher_out_top1,
        });
    }
    if out.is_empty() {
        return Err(Error::invalid("no successful rows to aggregate"));
    }
    Ok(out)
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Fixed-column aggregate table. The first line records the config digest;
/// absent values (undefined std, top-5 below six classes) are empty cells.
pub fn aggregate_csv(config_digest: &str, summaries: &[MethodSummary]) -> String {
    let mut out = format!("# config_digest = {config_digest}\n");
    out.push_str(
        "method,n,top1_mean,top1_std,top3_mean,top3_std,top5_mean,top5_std,\
         teacher_in_mean,teacher_in_std,teacher_out_mean,teacher_out_std\n",
    );
    for s in summaries {
        let cells = [
            s.method.clone(),
            s.top1.n.to_string(),
            csv_cell(Some(s.top1.mean)),
            csv_cell(s.top1.std),
            csv_cell(Some(s.top3.mean)),
            csv_cell(s.top3.std),
            csv_cell(s.top5.map(|a| a.mean)),
            csv_cell(s.top5.and_then(|a| a.std)),
            csv_cell(s.teacher_in_top1.map(|a| a.mean)),
            csv_cell(s.teacher_in_top1.and_then(|a| a.std)),
            csv_cell(s.teacher_out_top1.map(|a| a.mean)),
            csv_cell(s.teacher_out_top1.and_then(|a| a.std)),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// The determinism-checked report body: every row's canonical JSON, one per
/// line, with wall-clock excluded.
pub fn canonical_report(rows: &[SeedRow]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&row.canonical_json());
        out.push('\n');
    }
    out
}

/// Persist rows as line-delimited JSON records.
pub fn write_rows(path: &Path, rows: &[TimedRow]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("rows contain only finite values"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read rows written by [`write_rows`]. Parse failures report the byte offset
/// of the offending line.
pub fn read_rows(path: &Path) -> Result<Vec<TimedRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        if line.is_empty() {
            continue;
        }
        let row: TimedRow = serde_json::from_str(line).map_err(|e| Error::Format {
            offset: line_offset,
            detail: format!("bad report row: {e}"),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, seed: u64, top1: f64) -> SeedRow {
        SeedRow {
            config_digest: "cfg".into(),
            method: method.into(),
            seed,
            status: RunStatus::Ok,
            teacher_in_top1: Some(0.97),
            teacher_out_top1: Some(0.55),
            metrics: Some(Metrics {
                top1,
                top3: 0.9,
                top5: None,
            }),
            digests: NetDigests::default(),
        }
    }

    #[test]
    fn aggregate_matches_hand_numbers() {
        let a = aggregate(&[80.0, 90.0]).unwrap();
        assert_eq!(a.mean, 85.0);
        let std = a.std.unwrap();
        assert!((std - 7.0711).abs() < 1e-4);
        assert!((std - (2.0f64 * 25.0).sqrt()).abs() < 1e-12);
        let same = aggregate(&[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(same.std, Some(0.0));
        let single = aggregate(&[42.0]).unwrap();
        assert_eq!(single.mean, 42.0);
        assert_eq!(single.std, None);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn rows_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        let rows = vec![
            TimedRow {
                row: row("augkd", 1, 0.8),
                wall_clock_s: 1.25,
            },
            TimedRow {
                row: SeedRow {
                    status: RunStatus::Failed {
                        stage: "module2".into(),
                        message: "diverged".into(),
                    },
                    metrics: None,
                    ..row("wo_kd", 2, 0.0)
                },
                wall_clock_s: 0.5,
            },
        ];
        write_rows(&path, &rows).unwrap();
        let back = read_rows(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn corrupt_row_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        let good = serde_json::to_string(&TimedRow {
            row: row("augkd", 1, 0.8),
            wall_clock_s: 1.0,
        })
        .unwrap();
        std::fs::write(&path, format!("{good}\nnot json\n")).unwrap();
        match read_rows(&path).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, good.len() as u64 + 1),
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn canonical_report_ignores_wall_clock() {
        let fast = TimedRow {
            row: row("augkd", 1, 0.8),
            wall_clock_s: 0.1,
        };
        let slow = TimedRow {
            row: row("augkd", 1, 0.8),
            wall_clock_s: 99.0,
        };
        assert_ne!(
            serde_json::to_string(&fast).unwrap(),
            serde_json::to_string(&slow).unwrap()
        );
        assert_eq!(
            canonical_report(&[fast.row.clone()]),
            canonical_report(&[slow.row.clone()])
        );
    }

    #[test]
    fn summarize_recomputes_exactly_and_skips_failures() {
        let rows = vec![
            row("augkd", 1, 0.82),
            row("augkd", 2, 0.86),
            row("wo_kd", 1, 0.60),
            row("wo_kd", 2, 0.64),
            SeedRow {
                status: RunStatus::Failed {
                    stage: "module1".into(),
                    message: "x".into(),
                },
                metrics: None,
                ..row("dfkd_ft", 1, 0.0)
            },
        ];
        let summaries = summarize(&rows).unwrap();
        assert_eq!(summaries.len(), 2, "all-failed method dropped");
        assert_eq!(summaries[0].method, "augkd");
        assert_eq!(summaries[1].method, "wo_kd");
        let expect = aggregate(&[0.82, 0.86]).unwrap();
        assert!((summaries[0].top1.mean - expect.mean).abs() < 1e-12);
        assert!(
            (summaries[0].top1.std.unwrap() - expect.std.unwrap()).abs() < 1e-12
        );
        assert_eq!(summaries[0].teacher_in_top1.unwrap().mean, 0.97);

        let all_failed: Vec<SeedRow> = vec![SeedRow {
            status: RunStatus::Failed {
                stage: "teacher".into(),
                message: "x".into(),
            },
            metrics: None,
            ..row("augkd", 1, 0.0)
        }];
        assert!(summarize(&all_failed).is_err());
    }

    #[test]
    fn aggregate_csv_layout_is_fixed() {
        let summaries = summarize(&[row("augkd", 1, 0.8), row("augkd", 2, 0.9)]).unwrap();
        let csv = aggregate_csv("abc123", &summaries);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "# config_digest = abc123");
        let header = lines.next().unwrap();
        assert!(header.starts_with("method,n,top1_mean,top1_std"));
        let data = lines.next().unwrap();
        let cells: Vec<&str> = data.split(',').collect();
        assert_eq!(cells.len(), header.split(',').count());
        assert_eq!(cells[0], "augkd");
        assert_eq!(cells[1], "2");
        // top5 cells are empty at four classes.
        assert_eq!(cells[6], "");
        assert_eq!(cells[7], "");
    }
}
