//! Plain-text exports: ensemble and trajectory CSV, abstract trajectories,
//! JSON sidecars.
//!
//! Floats are written with Rust's shortest round-trip formatting so the same
//! data always produces the same bytes.

use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::ParticleEnsemble;
use crate::pushforward::{abstract_coordinates, GaussianPushforward};
use crate::transport::Trajectory;
use crate::verify::Manifest;

fn coordinate_header(dim: usize, prefix: &str) -> String {
    (1..=dim).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// `# seed=<seed>` followed by a `x1,..,xm` header and one row per particle.
pub fn write_ensemble_csv(mut w: impl Write, ens: &ParticleEnsemble) -> Result<()> {
    writeln!(w, "# seed={}", ens.seed())?;
    writeln!(w, "{}", coordinate_header(ens.dim(), "x"))?;
    for row in ens.rows() {
        writeln!(w, "{}", join(row))?;
    }
    Ok(())
}

pub fn read_ensemble_csv(r: impl BufRead) -> Result<ParticleEnsemble> {
    let mut seed = 0;
    let mut dim = None;
    let mut points = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("seed=") {
                seed = v
                    .parse()
                    .map_err(|_| Error::Contract(format!("line {}: bad seed {v:?}", lineno + 1)))?;
            }
            continue;
        }
        match dim {
            None => dim = Some(line.split(',').count()),
            Some(m) => {
                let row = line
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Contract(format!("line {}: {e}", lineno + 1)))?;
                if row.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        found: row.len(),
                    });
                }
                points.extend(row);
            }
        }
    }
    let dim = dim.ok_or_else(|| Error::Contract("ensemble CSV has no header".into()))?;
    ParticleEnsemble::new(dim, points, seed)
}

/// Long format: `time,particle_id,x1,..,xm`, one row per particle per time.
pub fn write_trajectory_csv(mut w: impl Write, traj: &Trajectory) -> Result<()> {
    let dim = traj.final_state().dim();
    writeln!(w, "time,particle_id,{}", coordinate_header(dim, "x"))?;
    for (t, state) in traj.times.iter().zip(&traj.states) {
        for (i, row) in state.rows().enumerate() {
            writeln!(w, "{t},{i},{}", join(row))?;
        }
    }
    Ok(())
}

/// Per-time diagnostics sidecar (particle states are not included).
pub fn write_diagnostics_json(w: impl Write, traj: &Trajectory) -> Result<()> {
    write_json(w, traj)
}

/// One row of an abstract `(σ1, .., σm)` trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbstractRow {
    pub time: f64,
    pub sigma: Vec<f64>,
    pub entropy: f64,
    pub source: String,
}

impl AbstractRow {
    pub fn from_pushforward(pf: &GaussianPushforward) -> Result<Self> {
        let point = abstract_coordinates(pf)?;
        Ok(Self {
            time: pf.t,
            sigma: point.sigma,
            entropy: pf.entropy(),
            source: pf.source.as_str().to_string(),
        })
    }
}

/// `time,sigma1,..,sigmam,entropy,source`.
pub fn write_abstract_csv(mut w: impl Write, rows: &[AbstractRow]) -> Result<()> {
    let dim = rows.first().map_or(2, |r| r.sigma.len());
    writeln!(w, "time,{},entropy,source", coordinate_header(dim, "sigma"))?;
    for r in rows {
        if r.sigma.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.sigma.len(),
            });
        }
        writeln!(w, "{},{},{},{}", r.time, join(&r.sigma), r.entropy, r.source)?;
    }
    Ok(())
}

pub fn write_manifest_json(w: impl Write, manifest: &Manifest) -> Result<()> {
    write_json(w, manifest)
}

pub fn write_json(mut w: impl Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}
