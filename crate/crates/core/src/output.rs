//! Run artifacts: CSV tables, the run report and their readers.
//!
//! | file                   | columns                                                       |
//! |------------------------|---------------------------------------------------------------|
//! | `metrics.csv`          | round, global_c_index, stability, messages_sent, cumulative_messages, selected |
//! | `reputation.csv`       | round, observer, subject, score                               |
//! | `node_reputation.csv`  | round, node, cluster, adversarial, score                      |
//! | `assignment.csv`       | client, cluster                                               |
//!
//! `selected` joins client ids with `;`. Numbers use the shortest
//! representation that parses back to the same value.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::experiment::ExperimentConfig;
use crate::federation::{Federation, Method, PROXY_LABEL};
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPUTATION_FILE: &str = "reputation.csv";
pub const NODE_REPUTATION_FILE: &str = "node_reputation.csv";
pub const ASSIGNMENT_FILE: &str = "assignment.csv";
pub const REPORT_FILE: &str = "run_report.txt";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub global_c_index: f64,
    pub stability: f64,
    pub messages_sent: u64,
    pub cumulative_messages: u64,
    pub selected: String,
}

impl MetricsRow {
    pub fn selected_clients(&self) -> Result<Vec<usize>> {
        if self.selected.is_empty() {
            return Ok(Vec::new());
        }
        self.selected
            .split(';')
            .map(|s| s.parse().map_err(|_| Error::InvalidData(format!("bad client id `{s}`"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationRow {
    pub round: usize,
    pub observer: usize,
    pub subject: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub round: usize,
    pub node: usize,
    pub cluster: usize,
    pub adversarial: u8,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub client: usize,
    pub cluster: usize,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Header-only write when a table has no rows, so the schema is still on disk.
fn write_table<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        w.flush()?;
        return Ok(());
    }
    write_rows(path, rows)
}

pub fn metrics_rows(fed: &Federation) -> Vec<MetricsRow> {
    fed.metrics()
        .iter()
        .map(|m| MetricsRow {
            round: m.round,
            global_c_index: m.global_c_index,
            stability: m.stability,
            messages_sent: m.messages_sent,
            cumulative_messages: m.cumulative_messages,
            selected: m
                .selected_clients
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        })
        .collect()
}

pub fn reputation_rows(fed: &Federation) -> Vec<ReputationRow> {
    fed.reputation_log()
        .iter()
        .flat_map(|(round, rs)| {
            rs.entries().map(move |(observer, subject, score)| ReputationRow {
                round: *round,
                observer,
                subject,
                score,
            })
        })
        .collect()
}

pub fn node_rows(fed: &Federation) -> Vec<NodeRow> {
    let labels = &fed.assignment().labels;
    let adversarial = fed.adversarial();
    let adversarial = &adversarial;
    fed.metrics()
        .iter()
        .flat_map(|m| {
            m.node_scores.iter().enumerate().map(move |(node, &score)| NodeRow {
                round: m.round,
                node,
                cluster: labels[node],
                adversarial: u8::from(adversarial[node]),
                score,
            })
        })
        .collect()
}

/// Human-readable summary with the config echo.
pub fn run_report(fed: &Federation, cfg: &ExperimentConfig) -> Result<String> {
    let mut s = String::new();
    let method = fed.config().method;
    let last = fed.metrics().last().expect("round 0 is always logged");
    let _ = writeln!(s, "repfed run report");
    let _ = writeln!(s, "=================");
    let _ = writeln!(s, "method: {method}");
    if method == Method::TfflProxy {
        let _ = writeln!(s, "note: {PROXY_LABEL}");
    }
    let _ = writeln!(s, "seed: {}", cfg.seed());
    let _ = writeln!(s, "clients: {}", fed.n_clients());
    let _ = writeln!(s, "rounds: {}", last.round);
    let _ = writeln!(
        s,
        "peer privacy: {}",
        match cfg.dp.params() {
            Some(p) => format!("clip {} epsilon {} delta {}", p.clip_norm, p.epsilon, p.delta),
            None => "disabled".into(),
        }
    );
    let _ = writeln!(s, "final global C-index: {:.4}", last.global_c_index);
    let _ = writeln!(s, "final stability: {:.6}", last.stability);
    let _ = writeln!(s, "total peer messages: {}", last.cumulative_messages);
    let _ = writeln!(
        s,
        "global C-index: per-cluster models scored on the held-out cohort, averaged with weights equal to each cluster's total node score"
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "clusters:");
    for k in 0..fed.assignment().n_clusters() {
        let _ = writeln!(s, "  {k}: {:?}", fed.assignment().members(k));
    }
    let adversarial = fed.adversarial();
    let _ = writeln!(s, "adversarial clients: {:?}", (0..adversarial.len()).filter(|&i| adversarial[i]).collect::<Vec<_>>());
    let _ = writeln!(s, "final node scores:");
    for (i, v) in last.node_scores.iter().enumerate() {
        let tag = if adversarial[i] { " (adversarial)" } else { "" };
        let _ = writeln!(s, "  {i}: {v:.4}{tag}");
    }
    if !fed.warnings().is_empty() {
        let _ = writeln!(s, "warnings:");
        for w in fed.warnings() {
            let _ = writeln!(s, "  {w}");
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "configuration:");
    s.push_str(&cfg.to_toml()?);
    Ok(s)
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run(dir: &Path, fed: &Federation, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(&dir.join(METRICS_FILE), &metrics_rows(fed))?;
    write_table(
        &dir.join(REPUTATION_FILE),
        &reputation_rows(fed),
        &["round", "observer", "subject", "score"],
    )?;
    write_rows(&dir.join(NODE_REPUTATION_FILE), &node_rows(fed))?;
    let assignment: Vec<AssignmentRow> = fed
        .assignment()
        .labels
        .iter()
        .enumerate()
        .map(|(client, &cluster)| AssignmentRow { client, cluster })
        .collect();
    write_rows(&dir.join(ASSIGNMENT_FILE), &assignment)?;
    std::fs::write(dir.join(REPORT_FILE), run_report(fed, cfg)?)?;
    std::fs::write(dir.join(CONFIG_ECHO_FILE), cfg.to_toml()?)?;
    Ok(())
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            MetricsRow {
                round: 0,
                global_c_index: 0.5,
                stability: 0.0,
                messages_sent: 0,
                cumulative_messages: 0,
                selected: String::new(),
            },
            MetricsRow {
                round: 1,
                global_c_index: 0.612_345_678_901_234_5,
                stability: 1.25e-7,
                messages_sent: 90,
                cumulative_messages: 90,
                selected: "0;2;5".into(),
            },
        ];
        write_rows(&path, &rows).unwrap();
        let back: Vec<MetricsRow> = read_rows(&path).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[1].selected_clients().unwrap(), vec![0, 2, 5]);
        assert!(back[0].selected_clients().unwrap().is_empty());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
