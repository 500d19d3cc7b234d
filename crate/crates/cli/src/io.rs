//! CSV files. Every writer has a reader that returns exactly what was
//! written; floats are printed in shortest round-trip form.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use gradflow_core::continuum::{EnsembleResult, Trajectory};
use gradflow_core::fe::{CoarseSnapshot, CoarseTrajectory, EvolutionSample, OperatorSample};
use gradflow_core::lattice::KmcTrajectory;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub realization: usize,
    pub time: f64,
    pub site: usize,
    pub eta: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedRow {
    pub realization: usize,
    pub time: f64,
    pub node: usize,
    pub rho: f64,
}

/// Hat-function moments `Σ_s ε·γ_i(x_s)·η_s`, stored next to the projected
/// densities because the fluctuation estimator needs them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HatRow {
    pub realization: usize,
    pub time: f64,
    pub node: usize,
    pub hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct K1Row {
    pub sample: usize,
    pub z_left: f64,
    pub z_mid: f64,
    pub z_right: f64,
    pub k0: f64,
    pub k1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FRow {
    pub sample: usize,
    pub node: usize,
    pub b_j: f64,
    pub k_row_m1: f64,
    pub k_row_0: f64,
    pub k_row_p1: f64,
    pub z_m1: f64,
    pub z_0: f64,
    pub z_p1: f64,
    pub upsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub node: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberRow {
    pub member: usize,
    pub time: f64,
    pub node: usize,
    pub rho: f64,
}

pub const RAW_HEADER: &str = "realization,time,site,eta";
pub const PROJECTED_HEADER: &str = "realization,time,node,rho";
pub const HAT_HEADER: &str = "realization,time,node,hat";
pub const K1_HEADER: &str = "sample,z_left,z_mid,z_right,k0,k1";
pub const F_HEADER: &str = "sample,node,b_j,k_row_m1,k_row_0,k_row_p1,z_m1,z_0,z_p1,upsilon";
pub const TRAJECTORY_HEADER: &str = "time,node,mean,std,ci_lo,ci_hi";
pub const MEMBER_HEADER: &str = "member,time,node,rho";

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads rows, insisting on the exact header `header`.
pub fn read_rows<T: DeserializeOwned>(path: &Path, header: &str) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let found = r
        .headers()
        .map_err(|e| CliError::format(path, e.to_string()))?;
    let found: Vec<&str> = found.iter().collect();
    if found.join(",") != header {
        return Err(CliError::format(
            path,
            format!("expected header `{header}`, found `{}`", found.join(",")),
        ));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| CliError::format(path, e.to_string())))
        .collect()
}

pub fn raw_rows(realization: usize, traj: &KmcTrajectory) -> impl Iterator<Item = RawRow> + '_ {
    traj.records.iter().flat_map(move |s| {
        s.occupation
            .iter()
            .enumerate()
            .map(move |(site, &eta)| RawRow {
                realization,
                time: s.time,
                site,
                eta,
            })
    })
}

/// Groups raw rows into per-realization snapshot lists, in file order.
pub fn group_raw(rows: &[RawRow]) -> Vec<Vec<(f64, Vec<u8>)>> {
    let mut out: Vec<Vec<(f64, Vec<u8>)>> = Vec::new();
    for row in rows {
        if out.len() <= row.realization {
            out.resize_with(row.realization + 1, Vec::new);
        }
        let snaps = &mut out[row.realization];
        if snaps.last().map_or(true, |(t, _)| *t != row.time) {
            snaps.push((row.time, Vec::new()));
        }
        snaps.last_mut().expect("pushed above").1.push(row.eta);
    }
    out
}

pub fn write_coarse(projected: &Path, hat: &Path, trajs: &[CoarseTrajectory]) -> Result<()> {
    let each = |f: fn(&CoarseSnapshot) -> &Vec<f64>| {
        trajs.iter().enumerate().flat_map(move |(r, t)| {
            t.snapshots.iter().flat_map(move |s| {
                f(s).iter()
                    .enumerate()
                    .map(move |(n, &v)| (r, s.time, n, v))
            })
        })
    };
    write_rows(
        projected,
        each(|s| &s.rho).map(|(realization, time, node, rho)| ProjectedRow {
            realization,
            time,
            node,
            rho,
        }),
    )?;
    write_rows(
        hat,
        each(|s| &s.hat).map(|(realization, time, node, hat)| HatRow {
            realization,
            time,
            node,
            hat,
        }),
    )
}

pub fn read_coarse(projected: &Path, hat: &Path) -> Result<Vec<CoarseTrajectory>> {
    let rho: Vec<ProjectedRow> = read_rows(projected, PROJECTED_HEADER)?;
    let hats: Vec<HatRow> = read_rows(hat, HAT_HEADER)?;
    if rho.len() != hats.len() {
        return Err(CliError::format(
            hat,
            "projected and hat-moment files differ in length",
        ));
    }
    let mut out: Vec<CoarseTrajectory> = Vec::new();
    for (p, h) in rho.iter().zip(&hats) {
        if (p.realization, p.time.to_bits(), p.node) != (h.realization, h.time.to_bits(), h.node) {
            return Err(CliError::format(
                hat,
                "projected and hat-moment rows are not aligned",
            ));
        }
        if out.len() <= p.realization {
            out.resize_with(p.realization + 1, || CoarseTrajectory {
                snapshots: Vec::new(),
            });
        }
        let snaps = &mut out[p.realization].snapshots;
        if snaps.last().map_or(true, |s| s.time != p.time) {
            snaps.push(CoarseSnapshot {
                time: p.time,
                rho: Vec::new(),
                hat: Vec::new(),
            });
        }
        let s = snaps.last_mut().expect("pushed above");
        s.rho.push(p.rho);
        s.hat.push(h.hat);
    }
    Ok(out)
}

pub fn write_k1_dataset(path: &Path, data: &[OperatorSample]) -> Result<()> {
    write_rows(
        path,
        data.iter().enumerate().map(|(sample, s)| K1Row {
            sample,
            z_left: s.z_left,
            z_mid: s.z_mid,
            z_right: s.z_right,
            k0: s.k0,
            k1: s.k1,
        }),
    )
}

pub fn read_k1_dataset(path: &Path) -> Result<Vec<OperatorSample>> {
    let rows: Vec<K1Row> = read_rows(path, K1_HEADER)?;
    Ok(rows
        .into_iter()
        .map(|r| OperatorSample {
            z_left: r.z_left,
            z_mid: r.z_mid,
            z_right: r.z_right,
            k0: r.k0,
            k1: r.k1,
        })
        .collect())
}

pub fn write_f_dataset(path: &Path, data: &[EvolutionSample]) -> Result<()> {
    write_rows(
        path,
        data.iter().enumerate().map(|(sample, s)| FRow {
            sample,
            node: s.node,
            b_j: s.b,
            k_row_m1: s.k_row[0],
            k_row_0: s.k_row[1],
            k_row_p1: s.k_row[2],
            z_m1: s.z[0],
            z_0: s.z[1],
            z_p1: s.z[2],
            upsilon: s.upsilon,
        }),
    )
}

pub fn read_f_dataset(path: &Path) -> Result<Vec<EvolutionSample>> {
    let rows: Vec<FRow> = read_rows(path, F_HEADER)?;
    Ok(rows
        .into_iter()
        .map(|r| EvolutionSample {
            node: r.node,
            b: r.b_j,
            k_row: [r.k_row_m1, r.k_row_0, r.k_row_p1],
            z: [r.z_m1, r.z_0, r.z_p1],
            upsilon: r.upsilon,
        })
        .collect())
}

pub fn write_ensemble(path: &Path, ens: &EnsembleResult) -> Result<()> {
    let rows = ens.times.iter().enumerate().flat_map(|(k, &time)| {
        (0..ens.mean[k].len()).map(move |node| TrajectoryRow {
            time,
            node,
            mean: ens.mean[k][node],
            std: ens.std[k][node],
            ci_lo: ens.ci_lo[k][node],
            ci_hi: ens.ci_hi[k][node],
        })
    });
    write_rows(path, rows)
}

/// Deterministic trajectory in the ensemble schema: zero spread and a
/// degenerate band.
pub fn write_deterministic(path: &Path, traj: &Trajectory) -> Result<()> {
    let rows = traj
        .times
        .iter()
        .zip(&traj.states)
        .flat_map(|(&time, state)| {
            state
                .iter()
                .enumerate()
                .map(move |(node, &v)| TrajectoryRow {
                    time,
                    node,
                    mean: v,
                    std: 0.0,
                    ci_lo: v,
                    ci_hi: v,
                })
        });
    write_rows(path, rows)
}

/// Reads a trajectory file back into ensemble statistics. Member fields
/// are not part of the file and come back empty.
pub fn read_ensemble(path: &Path) -> Result<EnsembleResult> {
    let rows: Vec<TrajectoryRow> = read_rows(path, TRAJECTORY_HEADER)?;
    let mut ens = EnsembleResult {
        times: Vec::new(),
        members: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
        ci_lo: Vec::new(),
        ci_hi: Vec::new(),
        excluded: 0,
    };
    for r in rows {
        if ens.times.last() != Some(&r.time) {
            ens.times.push(r.time);
            for f in [&mut ens.mean, &mut ens.std, &mut ens.ci_lo, &mut ens.ci_hi] {
                f.push(Vec::new());
            }
        }
        let k = ens.times.len() - 1;
        if r.node != ens.mean[k].len() {
            return Err(CliError::format(
                path,
                format!("node {} out of order at t = {}", r.node, r.time),
            ));
        }
        ens.mean[k].push(r.mean);
        ens.std[k].push(r.std);
        ens.ci_lo[k].push(r.ci_lo);
        ens.ci_hi[k].push(r.ci_hi);
    }
    Ok(ens)
}

pub fn write_members(path: &Path, ens: &EnsembleResult) -> Result<()> {
    let rows = ens.members.iter().enumerate().flat_map(|(member, m)| {
        ens.times.iter().zip(m).flat_map(move |(&time, field)| {
            field.iter().enumerate().map(move |(node, &rho)| MemberRow {
                member,
                time,
                node,
                rho,
            })
        })
    });
    write_rows(path, rows)
}

pub fn read_members(path: &Path) -> Result<Vec<Vec<Vec<f64>>>> {
    let rows: Vec<MemberRow> = read_rows(path, MEMBER_HEADER)?;
    let mut out: Vec<Vec<(f64, Vec<f64>)>> = Vec::new();
    for r in rows {
        if out.len() <= r.member {
            out.resize_with(r.member + 1, Vec::new);
        }
        let m = &mut out[r.member];
        if m.last().map_or(true, |(t, _)| *t != r.time) {
            m.push((r.time, Vec::new()));
        }
        m.last_mut().expect("pushed above").1.push(r.rho);
    }
    Ok(out
        .into_iter()
        .map(|m| m.into_iter().map(|(_, f)| f).collect())
        .collect())
}

/// `key = value` lines in the given order.
pub fn write_key_values(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let text: String = entries
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once(" = ")
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CliError::format(path, format!("malformed line `{l}`")))
        })
        .collect()
}
