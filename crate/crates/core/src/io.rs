//! Plain-text and binary dumps of trajectories.

use std::io::{self, Read, Write};

use serde::Serialize;

use crate::error::Result;
use crate::grid::{grad_lp_norm, NodalField};
use crate::model::ModelSpec;
use crate::scalar::Real;
use crate::scheme::TrajectoryRecord;

pub const TRAJECTORY_COLUMNS: [&str; 7] =
    ["step", "time", "l2_norm", "grad_lp_norm_p", "increment_l2", "newton_iters", "residual"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub time: f64,
    pub l2_norm: f64,
    pub grad_lp_norm_p: f64,
    pub increment_l2: f64,
    pub newton_iters: usize,
    pub residual: f64,
}

/// One row per time level `0 … N`; step 0 carries no solve.
pub fn trajectory_rows<T: Real>(traj: &TrajectoryRecord<T>, model: &ModelSpec<T>) -> Result<Vec<TrajectoryRow>> {
    let mesh = &model.mesh;
    let p = model.flux.p;
    traj.states
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let (increment, iters, residual) = if k == 0 {
                (T::zero(), 0, T::zero())
            } else {
                let s = &traj.stats[k - 1];
                (mesh.l2_norm(&u.sub(&traj.states[k - 1])), s.iterations, s.residual)
            };
            Ok(TrajectoryRow {
                step: k,
                time: (T::from_usize_lossy(k) * traj.kappa).as_f64(),
                l2_norm: mesh.l2_norm(u).as_f64(),
                grad_lp_norm_p: grad_lp_norm(mesh, u, p)?.as_f64(),
                increment_l2: increment.as_f64(),
                newton_iters: iters,
                residual: residual.as_f64(),
            })
        })
        .collect()
}

pub fn write_trajectory_csv<W: Write>(mut w: W, rows: &[TrajectoryRow]) -> io::Result<()> {
    writeln!(w, "{}", TRAJECTORY_COLUMNS.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{},{:e}",
            r.step, r.time, r.l2_norm, r.grad_lp_norm_p, r.increment_l2, r.newton_iters, r.residual
        )?;
    }
    Ok(())
}

/// States as consecutive little-endian `f64` rows.
pub fn write_states_le<T: Real, W: Write>(mut w: W, states: &[NodalField<T>]) -> io::Result<()> {
    for s in states {
        for v in s.iter() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_states_le<R: Read>(mut r: R, nodes: usize) -> io::Result<Vec<NodalField<f64>>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let row = nodes * 8;
    if nodes == 0 || bytes.len() % row != 0 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("{} bytes is not a whole number of {nodes}-node rows", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(row)
        .map(|c| NodalField(c.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect()))
        .collect())
}
