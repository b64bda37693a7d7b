//! Run artifacts: the trajectory log, the summary and the figure data.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::{LogRow, RunLog};

pub const LOG_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.json";

const POSE: [&str; 6] = ["x", "y", "z", "roll", "pitch", "yaw"];
const TWIST: [&str; 6] = ["vx", "vy", "vz", "wx", "wy", "wz"];
const WRENCH: [&str; 6] = ["fx", "fy", "fz", "mx", "my", "mz"];

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Generalized coordinate names of an agent with `arm` joints.
pub fn coordinate_names(arm: usize) -> Vec<String> {
    POSE.iter().map(|s| s.to_string()).chain((1..=arm).map(|k| format!("j{k}"))).collect()
}

/// Column names of the trajectory log, in order.
pub fn log_columns(arm_dof: &[usize]) -> Vec<String> {
    let mut cols = vec!["time".to_string(), "waypoint".into()];
    cols.extend(POSE.iter().map(|s| format!("object_{s}")));
    cols.extend(TWIST.iter().map(|s| format!("object_{s}")));
    cols.extend(TWIST.iter().map(|s| format!("reference_{s}")));
    cols.push("clearance".into());
    for (i, &arm) in arm_dof.iter().enumerate() {
        let a = format!("a{}", i + 1);
        let names = coordinate_names(arm);
        cols.extend(names.iter().map(|s| format!("{a}_q_{s}")));
        cols.extend(names.iter().map(|s| format!("{a}_qd_{s}")));
        cols.extend(names.iter().map(|s| format!("{a}_tau_{s}")));
        cols.extend(WRENCH.iter().map(|s| format!("{a}_u_{s}")));
        cols.extend(WRENCH.iter().map(|s| format!("{a}_lambda_{s}")));
        for s in ["det_jjt", "bound_ratio", "grasp_residual", "cost", "iterations"] {
            cols.push(format!("{a}_{s}"));
        }
    }
    cols
}

fn row_values(r: &LogRow) -> Vec<String> {
    let f = |x: f64| format!("{x:e}");
    let mut out = vec![f(r.time), r.waypoint.to_string()];
    out.extend(r.object_pose.iter().map(|&x| f(x)));
    out.extend(r.object_twist.iter().map(|&x| f(x)));
    out.extend(r.reference_twist.iter().map(|&x| f(x)));
    out.push(f(r.clearance));
    for a in &r.agents {
        out.extend(a.q.iter().chain(&a.qdot).chain(&a.tau).map(|&x| f(x)));
        out.extend(a.u_hat.iter().chain(&a.lambda).map(|&x| f(x)));
        out.extend([f(a.det), f(a.bound_ratio), f(a.grasp_residual), f(a.cost)]);
        out.push(a.iterations.to_string());
    }
    out
}

pub fn write_log(log: &RunLog, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(log_columns(&log.arm_dof)).map_err(csv_err)?;
    for r in &log.rows {
        w.write_record(row_values(r)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(log: &RunLog, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&log.summary).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_table(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.iter().map(|x| format!("{x:e}"))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Downsampled data for the usual figures: path snapshots, object
/// coordinates, `det(J J^T)`, joint states and control inputs.
pub fn write_plots(log: &RunLog, dir: &Path, stride: usize) -> Result<Vec<PathBuf>> {
    let stride = stride.max(1);
    let mut rows: Vec<&LogRow> = log.rows.iter().step_by(stride).collect();
    if log.rows.len() > 1 && (log.rows.len() - 1) % stride != 0 {
        rows.extend(log.rows.last());
    }
    let n = log.arm_dof.len();
    let mut written = Vec::new();
    let mut emit = |name: &str, header: Vec<String>, data: Vec<Vec<f64>>| -> Result<()> {
        let p = dir.join(name);
        write_table(&p, header, data.into_iter())?;
        written.push(p);
        Ok(())
    };

    let mut header = vec!["time".to_string()];
    header.extend(POSE.iter().map(|s| format!("object_{s}")));
    header.push("clearance".into());
    let object: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| std::iter::once(r.time).chain(r.object_pose.iter().copied()).chain([r.clearance]).collect())
        .collect();
    emit("object.csv", header, object)?;

    // four evenly spaced instants with the vehicle positions
    let mut header = vec!["time".to_string(), "object_x".into(), "object_y".into(), "object_z".into()];
    for i in 1..=n {
        header.extend(["x", "y", "z"].iter().map(|s| format!("a{i}_vehicle_{s}")));
    }
    let last = log.rows.len().saturating_sub(1);
    let snaps: Vec<Vec<f64>> = (0..4)
        .filter_map(|k| log.rows.get(k * last / 3))
        .map(|r| {
            let mut v = vec![r.time, r.object_pose[0], r.object_pose[1], r.object_pose[2]];
            for a in &r.agents {
                v.extend_from_slice(&a.q.as_slice()[..3]);
            }
            v
        })
        .collect();
    emit("snapshots.csv", header, snaps)?;

    let mut header = vec!["time".to_string()];
    header.extend((1..=n).map(|i| format!("a{i}_det_jjt")));
    let det = rows
        .iter()
        .map(|r| std::iter::once(r.time).chain(r.agents.iter().map(|a| a.det)).collect())
        .collect();
    emit("singularity.csv", header, det)?;

    let mut header = vec!["time".to_string()];
    for (i, &arm) in log.arm_dof.iter().enumerate() {
        let names = coordinate_names(arm);
        header.extend(names.iter().map(|s| format!("a{}_q_{s}", i + 1)));
        header.extend(names.iter().map(|s| format!("a{}_qd_{s}", i + 1)));
    }
    let states = rows
        .iter()
        .map(|r| std::iter::once(r.time).chain(r.agents.iter().flat_map(|a| a.q.iter().chain(&a.qdot).copied())).collect())
        .collect();
    emit("joint_states.csv", header, states)?;

    let mut header = vec!["time".to_string()];
    for (i, &arm) in log.arm_dof.iter().enumerate() {
        header.extend(coordinate_names(arm).iter().map(|s| format!("a{}_tau_{s}", i + 1)));
    }
    let inputs = rows
        .iter()
        .map(|r| std::iter::once(r.time).chain(r.agents.iter().flat_map(|a| a.tau.iter().copied())).collect())
        .collect();
    emit("inputs.csv", header, inputs)?;
    Ok(written)
}

/// Writes the log, the summary and (optionally) the figure data into `dir`.
pub fn write_all(log: &RunLog, dir: &Path, plots: Option<usize>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = vec![dir.join(LOG_FILE), dir.join(SUMMARY_FILE)];
    write_log(log, &out[0])?;
    write_summary(log, &out[1])?;
    if let Some(stride) = plots {
        let plot_dir = dir.join("plots");
        fs::create_dir_all(&plot_dir)?;
        out.extend(write_plots(log, &plot_dir, stride)?);
    }
    Ok(out)
}
