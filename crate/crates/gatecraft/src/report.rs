//! CSV reports and the aligned summary table.

use std::io::Write;
use std::path::{Path, PathBuf};

use gatecraft_core::api::EpochRecord;
use gatecraft_core::epi::CalibrationRow;
use gatecraft_core::runtime::{EvaluationReport, SweepRow};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const COLUMNS: [&str; 11] = [
    "method",
    "env",
    "p_full_target",
    "l2_lambda",
    "realized_fraction_good",
    "mean_score",
    "score_stddev",
    "n_episodes",
    "avg_cost",
    "speedup",
    "seed_base",
];

/// CSV mirror of [`EvaluationReport`]; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    method: String,
    env: String,
    p_full_target: f64,
    l2_lambda: f64,
    realized_fraction_good: f64,
    mean_score: f64,
    score_stddev: f64,
    n_episodes: usize,
    avg_cost: f64,
    speedup: f64,
    seed_base: u64,
}

impl From<&EvaluationReport> for Row {
    fn from(r: &EvaluationReport) -> Self {
        Row {
            method: r.method.clone(),
            env: r.env.clone(),
            p_full_target: r.p_full_target,
            l2_lambda: r.l2_lambda,
            realized_fraction_good: r.realized_fraction_good,
            mean_score: r.mean_score,
            score_stddev: r.score_stddev,
            n_episodes: r.n_episodes,
            avg_cost: r.avg_cost,
            speedup: r.speedup,
            seed_base: r.seed_base,
        }
    }
}

impl From<Row> for EvaluationReport {
    fn from(r: Row) -> Self {
        EvaluationReport {
            method: r.method,
            env: r.env,
            p_full_target: r.p_full_target,
            l2_lambda: r.l2_lambda,
            realized_fraction_good: r.realized_fraction_good,
            mean_score: r.mean_score,
            score_stddev: r.score_stddev,
            n_episodes: r.n_episodes,
            avg_cost: r.avg_cost,
            speedup: r.speedup,
            seed_base: r.seed_base,
        }
    }
}

pub fn write_csv<W: Write>(rows: &[EvaluationReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for r in rows {
        w.serialize(Row::from(r))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn to_csv_string(rows: &[EvaluationReport]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn read_csv(path: &Path) -> Result<Vec<EvaluationReport>> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    parse_csv(file)
}

pub fn parse_csv<R: std::io::Read>(input: R) -> Result<Vec<EvaluationReport>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(HarnessError::Config(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize::<Row>().map(|row| Ok(row?.into())).collect()
}

/// Per (env, p_full_target) group, marks the row with the best mean score;
/// equal scores go to the cheaper row, then to the earlier one.
pub fn best_markers(rows: &[EvaluationReport]) -> Vec<bool> {
    let mut best: Vec<Option<usize>> = vec![None; rows.len()];
    let mut marks = vec![false; rows.len()];
    for (i, r) in rows.iter().enumerate() {
        let leader = (0..i).find(|&j| rows[j].env == r.env && rows[j].p_full_target.to_bits() == r.p_full_target.to_bits());
        let head = leader.unwrap_or(i);
        match best[head] {
            None => best[head] = Some(i),
            Some(b) => {
                let o = &rows[b];
                if r.mean_score > o.mean_score || (r.mean_score == o.mean_score && r.avg_cost < o.avg_cost) {
                    best[head] = Some(i);
                }
            }
        }
    }
    for b in best.into_iter().flatten() {
        marks[b] = true;
    }
    marks
}

/// Plain-text table with a `best` marker column.
pub fn summary_table(rows: &[EvaluationReport]) -> String {
    let marks = best_markers(rows);
    let header = ["method", "env", "p_full", "l2", "realized", "score", "stddev", "avg_cost", "speedup", "best"];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (r, m) in rows.iter().zip(&marks) {
        cells.push(vec![
            r.method.clone(),
            r.env.clone(),
            format!("{:.2}", r.p_full_target),
            format!("{:e}", r.l2_lambda),
            format!("{:.3}", r.realized_fraction_good),
            format!("{:.3}", r.mean_score),
            format!("{:.3}", r.score_stddev),
            format!("{:.2}", r.avg_cost),
            format!("{:.2}x", r.speedup),
            if *m { "*".into() } else { String::new() },
        ]);
    }
    let widths: Vec<usize> = (0..header.len()).map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))
}

/// Writes `<stem>.csv` and `<stem>.txt` into `dir`.
pub fn report(rows: &[EvaluationReport], dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    if rows.is_empty() {
        return Err(HarnessError::Config("no rows to report".into()));
    }
    let csv_path = dir.join(format!("{stem}.csv"));
    let txt_path = dir.join(format!("{stem}.txt"));
    write_csv(rows, create(&csv_path)?)?;
    std::fs::write(&txt_path, summary_table(rows)).map_err(|e| HarnessError::io(&txt_path, e))?;
    Ok((csv_path, txt_path))
}

/// Failed sweep cells as `method,p_full_target,l2_lambda,error`.
pub fn write_failures(rows: &[SweepRow], path: &Path) -> Result<usize> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["method", "p_full_target", "l2_lambda", "error"])?;
    let mut n = 0;
    for r in rows {
        if let Err(e) = &r.result {
            w.serialize((r.job.method.name(), r.job.p_full, r.job.l2, e))?;
            n += 1;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(n)
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["epoch", "loss", "mean_q", "beta"])?;
    for h in history {
        w.serialize((h.epoch, h.loss, h.mean_q, h.beta))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_calibration(rows: &[CalibrationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["t1", "t2", "routed_fraction", "mean_return"])?;
    for r in rows {
        w.serialize((r.t1, r.t2, r.routed_fraction, r.mean_return))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, p: f64, score: f64, cost: f64) -> EvaluationReport {
        EvaluationReport {
            method: method.into(),
            env: "grid_nav".into(),
            p_full_target: p,
            l2_lambda: 0.0,
            realized_fraction_good: p,
            mean_score: score,
            score_stddev: 0.1,
            n_episodes: 20,
            avg_cost: cost,
            speedup: 132.0 / cost,
            seed_base: 1000,
        }
    }

    #[test]
    fn single_row_gives_header_and_one_line() {
        let s = to_csv_string(&[row("api", 0.3, 0.9, 60.0)]).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], COLUMNS.join(","));
    }

    #[test]
    fn equal_scores_mark_the_cheaper_row() {
        let rows = [row("random", 0.3, 0.5, 60.0), row("api", 0.3, 0.5, 50.0), row("epi1", 0.1, 0.2, 30.0)];
        assert_eq!(best_markers(&rows), vec![false, true, true]);
    }

    #[test]
    fn summary_has_marker_column() {
        let t = summary_table(&[row("api", 0.3, 0.9, 60.0)]);
        assert!(t.lines().next().unwrap().ends_with("best"));
        assert!(t.lines().nth(1).unwrap().ends_with('*'));
    }
}
