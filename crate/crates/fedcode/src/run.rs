//! Running experiments to disk and comparing finished runs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fedcode_core::orchestrator::{self, ComparisonTable, LabeledRun};
use fedcode_core::{ExperimentConfig, RoundReport};

use crate::error::{io, json, Error, Result};
use crate::files::{read_json, write_checkpoint, write_json};

pub const REPORTS_JSONL: &str = "reports.jsonl";
pub const REPORTS_CSV: &str = "reports.csv";
pub const RUN_CONFIG: &str = "config.json";
pub const FINAL_CHECKPOINT: &str = "final.json";

/// Run `cfg` and write the effective config, the final model and the round
/// reports into `out_dir`.
pub fn simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RoundReport>> {
    let (params, reports) = orchestrator::run(cfg)?;
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    write_json(&out_dir.join(RUN_CONFIG), cfg)?;
    write_checkpoint(&out_dir.join(FINAL_CHECKPOINT), &cfg.model, &params)?;
    write_reports(out_dir, &reports)?;
    Ok(reports)
}

/// `reports.jsonl` (one report per line) and `reports.csv` (one row per
/// round, one column per metric and per client loss).
pub fn write_reports(out_dir: &Path, reports: &[RoundReport]) -> Result<()> {
    let jsonl_path = out_dir.join(REPORTS_JSONL);
    let mut jsonl = String::new();
    for r in reports {
        jsonl.push_str(&serde_json::to_string(r).map_err(json(&jsonl_path))?);
        jsonl.push('\n');
    }
    fs::write(&jsonl_path, jsonl).map_err(io(&jsonl_path))?;
    let csv_path = out_dir.join(REPORTS_CSV);
    fs::write(&csv_path, reports_csv(reports)).map_err(io(&csv_path))
}

pub fn reports_csv(reports: &[RoundReport]) -> String {
    let metrics: BTreeSet<&str> = reports.iter().flat_map(|r| r.global_metrics.keys().map(String::as_str)).collect();
    let clients: BTreeSet<usize> = reports.iter().flat_map(|r| r.per_client_loss.keys().copied()).collect();
    let mut out = String::from("round");
    for m in &metrics {
        write!(out, ",{m}").unwrap();
    }
    out.push_str(",participants");
    for c in &clients {
        write!(out, ",client_{c}_loss").unwrap();
    }
    out.push('\n');
    for r in reports {
        write!(out, "{}", r.round).unwrap();
        for m in &metrics {
            out.push(',');
            if let Some(v) = r.global_metrics.get(*m) {
                write!(out, "{v}").unwrap();
            }
        }
        write!(out, ",{}", r.participating_clients.len()).unwrap();
        for c in &clients {
            out.push(',');
            if let Some(v) = r.per_client_loss.get(c) {
                write!(out, "{v}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

pub fn read_reports(path: &Path) -> Result<Vec<RoundReport>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(json(path))).collect()
}

/// Load a finished run written by [`simulate`].
pub fn read_run(dir: &Path, label: &str) -> Result<LabeledRun> {
    let cfg: ExperimentConfig = read_json(&dir.join(RUN_CONFIG))?;
    let reports = read_reports(&dir.join(REPORTS_JSONL))?;
    if reports.is_empty() {
        return Err(Error::Usage(format!("{} holds no reports", dir.display())));
    }
    Ok(LabeledRun { label: label.to_string(), mode: cfg.mode, reports })
}

/// Fixed-width text rendering; deltas against the centralized run follow
/// each metric when present.
pub fn render_table(table: &ComparisonTable) -> String {
    let has_delta = table.rows.iter().any(|r| !r.delta_vs_centralized.is_empty());
    let mut header = vec!["run".to_string()];
    for m in &table.metric_names {
        header.push(m.clone());
        if has_delta {
            header.push(format!("Δ{m}"));
        }
    }
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|row| {
            let mut cells = vec![row.label.clone()];
            for m in &table.metric_names {
                cells.push(format!("{:.4}", row.metrics[m]));
                if has_delta {
                    cells.push(row.delta_vs_centralized.get(m).map_or(String::new(), |d| format!("{d:+.4}")));
                }
            }
            cells
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in std::iter::once(&header).chain(&rows) {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn report(round: usize, acc: f64) -> RoundReport {
        RoundReport {
            round,
            global_metrics: BTreeMap::from([("accuracy".to_string(), acc), ("loss".to_string(), 1.0 - acc)]),
            per_client_loss: BTreeMap::from([(0, 0.5), (2, 0.25)]),
            participating_clients: vec![0, 2],
        }
    }

    #[test]
    fn csv_has_one_row_per_round() {
        let csv = reports_csv(&[report(1, 0.5), report(2, 0.75)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "round,accuracy,loss,participants,client_0_loss,client_2_loss");
        assert_eq!(lines[2], "2,0.75,0.25,2,0.5,0.25");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn jsonl_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![report(1, 0.1 + 0.2), report(2, 0.9)];
        write_reports(dir.path(), &reports).unwrap();
        assert_eq!(read_reports(&dir.path().join(REPORTS_JSONL)).unwrap(), reports);
    }

    #[test]
    fn table_lists_every_run() {
        let runs = vec![
            LabeledRun {
                label: "central".into(),
                mode: fedcode_core::Mode::Centralized,
                reports: vec![report(1, 0.9)],
            },
            LabeledRun { label: "fedavg".into(), mode: fedcode_core::Mode::Federated, reports: vec![report(1, 0.85)] },
        ];
        let table = orchestrator::compare_runs(&runs).unwrap();
        let text = render_table(&table);
        assert!(text.contains("fedavg"));
        assert!(text.contains("-0.0500"));
        assert_eq!(text.lines().count(), 3);
    }
}
