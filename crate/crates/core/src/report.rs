//! Run artifacts: trajectory CSV, summary JSON and sweep CSV.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::SweepCell;
use crate::error::Result;
use crate::sim::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub settle_time: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub r_squared: Option<f64>,
    /// `‖x(T) − x*‖_∞`.
    pub final_residual: Option<f64>,
    pub diverged: bool,
    pub config_echo: serde_json::Value,
    pub gain_ordering_warnings: Vec<String>,
}

/// `t,x_1_1,…,x_N_m,err_norm,est_disagreement`, one row per record.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let (n, m) = (traj.layout.n_players, traj.layout.dim);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for i in 1..=n {
        for c in 1..=m {
            header.push(format!("x_{i}_{c}"));
        }
    }
    header.push("err_norm".into());
    header.push("est_disagreement".into());
    w.write_record(&header)?;
    for (k, t) in traj.times.iter().enumerate() {
        let mut row = Vec::with_capacity(header.len());
        row.push(t.to_string());
        row.extend(traj.decisions[k].iter().map(f64::to_string));
        row.push(traj.error_norms.as_ref().map(|e| e[k].to_string()).unwrap_or_default());
        row.push(traj.estimate_disagreement[k].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_file(traj: &Trajectory, path: &Path) -> Result<()> {
    write_trajectory_csv(traj, std::fs::File::create(path)?)
}

pub fn write_summary_file(summary: &RunSummary, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `value,settle_time,lambda_hat,observer_error,final_residual,status`;
/// missing numbers are empty fields.
pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["value", "settle_time", "lambda_hat", "observer_error", "final_residual", "status"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in cells {
        w.write_record([
            c.value.clone(),
            opt(c.settle_time),
            opt(c.lambda_hat),
            opt(c.observer_error),
            opt(c.final_residual),
            c.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
