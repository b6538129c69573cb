//! The three subcommands. Each returns the process exit status.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use dae_transport_core::io::{
    write_abstract_csv, write_json, write_manifest_json, write_trajectory_csv,
    AbstractRow,
};
use dae_transport_core::pushforward::{push_composed, push_composed_until_singular, push_continuous, push_one_shot};
use dae_transport_core::transport::{compose_until_singular, continuous_flow_until_singular, lattice, one_shot_family};
use dae_transport_core::{
    run_suite, DaeMap, Error as CoreError, FlowSchedule, GaussianMixture, NoiseVariance,
    ParticleEnsemble, RetrainMode, Trajectory,
};
use serde::Serialize;

use crate::config::{Format, Mode, Panel, RunConfig, Schedule};
use crate::error::{exit, CliError, Result};
use crate::svg::{bounds, Plot};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];
const GRID_COLOR: &str = "#a0a0a0";

struct Sink {
    dir: PathBuf,
}

impl Sink {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.outputs.dir.clone();
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::Config(format!("output directory {} not writable: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    fn write(&self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn svg(&self, name: &str, plot: &Plot) -> Result<()> {
        self.write(name, |w| Ok(w.write_all(plot.render().as_bytes())?))
    }
}

fn is_multiple(t: f64, every: f64) -> bool {
    t > 0.0 && ((t / every).round() * every - t).abs() < 1e-9
}

/// `0`, then every quarter of `every` below `t`, then `t`.
fn one_shot_times(t: f64, every: f64) -> Vec<f64> {
    let step = every / 4.0;
    let mut times = vec![0.0];
    let mut k = 1u32;
    while f64::from(k) * step < t - 1e-12 {
        times.push(f64::from(k) * step);
        k += 1;
    }
    if t > 0.0 {
        times.push(t);
    }
    times
}

/// Grid points (if configured) followed by `particles.n` seeded samples.
fn start_points(cfg: &RunConfig, mix: &GaussianMixture) -> Result<(ParticleEnsemble, usize)> {
    let samples = mix.sample(cfg.particles.n, cfg.particles.seed)?;
    match &cfg.grid {
        Some(g) => {
            let grid = lattice(&g.lo, &g.hi, g.per_axis, cfg.particles.seed)?;
            let n_grid = grid.len();
            Ok((grid.concat(&samples)?, n_grid))
        }
        None => Ok((samples, 0)),
    }
}

fn run_panel(
    cfg: &RunConfig,
    mix: &GaussianMixture,
    panel: &Panel,
    start: &ParticleEnsemble,
) -> Result<(Trajectory, Option<CoreError>)> {
    match (&panel.mode, &panel.schedule) {
        (Mode::Continuous, Schedule::Uniform(u)) => {
            let out = continuous_flow_until_singular(mix, u.t_end, u.steps, start)?;
            Ok((out.trajectory, out.stopped))
        }
        (Mode::OneShot, Schedule::Single(s)) => {
            if !(s.t >= 0.0) {
                return Err(CliError::Config(format!("one_shot t must be >= 0, got {}", s.t)));
            }
            Ok((one_shot_family(mix, &one_shot_times(s.t, cfg.midpoint_every), start)?, None))
        }
        (Mode::Composed, schedule) => {
            let retrain = panel.retrain.or(cfg.retrain).unwrap_or(if mix.is_single_gaussian() {
                RetrainMode::Analytic
            } else {
                RetrainMode::Empirical
            });
            let out = compose_until_singular(mix, &schedule.flow()?, start, retrain)?;
            Ok((out.trajectory, out.stopped))
        }
        _ => Err(CliError::Config(format!("panel {:?}: mode and schedule disagree", panel.name))),
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    panel: &'a str,
    mode: Mode,
    seed: u64,
    grid_particles: usize,
    sample_particles: usize,
    /// Critical time when the run stopped at a singularity.
    singular_at: Option<f64>,
    stopped: Option<&'a str>,
    #[serde(flatten)]
    trajectory: &'a Trajectory,
}

fn orbit_plot(title: &str, traj: &Trajectory, n_grid: usize, every: f64) -> Option<Plot> {
    let dim = traj.final_state().dim();
    let n = traj.final_state().len();
    let path = |i: usize| -> Vec<(f64, f64)> {
        traj.times
            .iter()
            .zip(traj.orbit(i))
            .map(|(t, x)| if dim == 1 { (*t, x[0]) } else { (x[0], x[1]) })
            .collect()
    };
    let (x_label, y_label) = match dim {
        1 => ("t", "x"),
        2 => ("x1", "x2"),
        _ => return None,
    };
    let all: Vec<(f64, f64)> = (0..n).flat_map(path).collect();
    let (xr, yr) = bounds(&all);
    let mut plot = Plot::new(title, x_label, y_label, xr, yr);
    for i in 0..n {
        let (color, width) = if i < n_grid {
            (GRID_COLOR, 0.8)
        } else {
            (PALETTE[(i - n_grid) % PALETTE.len()], 1.2)
        };
        let pts = path(i);
        plot.polyline(&pts, color, width, false);
        plot.marker(pts[0], 1.5, color);
        for (t, p) in traj.times.iter().zip(&pts) {
            if is_multiple(*t, every) {
                plot.marker(*p, 2.5, color);
            }
        }
    }
    Some(plot)
}

pub fn trajectory(cfg: &RunConfig) -> Result<u8> {
    let mix = cfg.mixture()?;
    let panels = cfg.resolved_panels()?;
    let (start, n_grid) = start_points(cfg, &mix)?;
    let sink = Sink::new(cfg)?;
    let mut status = exit::SUCCESS;
    for panel in &panels {
        let (traj, stopped) = run_panel(cfg, &mix, panel, &start)?;
        let stopped_msg = stopped.as_ref().map(ToString::to_string);
        let singular_at = match stopped {
            Some(CoreError::Singularity { critical_time }) => Some(critical_time),
            Some(CoreError::WeightUnderflow { .. }) => traj.times.last().copied(),
            Some(e) => return Err(e.into()),
            None => None,
        };
        if let Some(msg) = &stopped_msg {
            eprintln!(
                "warning: panel {:?} stopped early ({msg}); output ends at t = {}",
                panel.name,
                traj.times.last().unwrap()
            );
            status = exit::SINGULARITY;
        }
        if cfg.wants(Format::Csv) {
            sink.write(&format!("{}_trajectory.csv", panel.name), |w| Ok(write_trajectory_csv(w, &traj)?))?;
        }
        if cfg.wants(Format::Json) {
            let side = Sidecar {
                panel: &panel.name,
                mode: panel.mode,
                seed: cfg.particles.seed,
                grid_particles: n_grid,
                sample_particles: start.len() - n_grid,
                singular_at,
                stopped: stopped_msg.as_deref(),
                trajectory: &traj,
            };
            sink.write(&format!("{}_diagnostics.json", panel.name), |w| Ok(write_json(w, &side)?))?;
        }
        if cfg.wants(Format::Svg) {
            let title = format!("{} ({})", panel.name, panel.mode.as_str());
            match orbit_plot(&title, &traj, n_grid, cfg.midpoint_every) {
                Some(plot) => sink.svg(&format!("{}_orbits.svg", panel.name), &plot)?,
                None => eprintln!("warning: no orbit plot for dimension {}", mix.dim()),
            }
        }
    }
    Ok(status)
}

#[derive(Serialize)]
struct Curve {
    time: f64,
    mean: f64,
    variance: f64,
    /// `closed_form` or `monte_carlo`.
    method: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    variance_std_error: Option<f64>,
    #[serde(skip)]
    density: Vec<f64>,
}

fn closed_curve(time: f64, mix: &GaussianMixture, xs: &[f64]) -> Result<Curve> {
    Ok(Curve {
        time,
        mean: mix.mean()[0],
        variance: mix.covariance()[0][0],
        method: "closed_form",
        variance_std_error: None,
        density: xs.iter().map(|x| mix.density(&[*x])).collect::<dae_transport_core::Result<_>>()?,
    })
}

/// One-shot pushforward of a 1-D mixture: particles pushed by the exact map
/// and smoothed with a Silverman-bandwidth Gaussian kernel.
fn mc_curve(time: f64, mix: &GaussianMixture, cfg: &RunConfig, xs: &[f64]) -> Result<Curve> {
    let start = mix.sample(cfg.particles.n.max(2), cfg.particles.seed)?;
    let pushed = DaeMap::mixture_exact(mix, NoiseVariance::new(time)?).apply_ensemble(&start)?;
    let v: Vec<f64> = pushed.as_flat().to_vec();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let h = 1.06 * var.sqrt() * n.powf(-0.2);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = xs
        .iter()
        .map(|x| norm * v.iter().map(|y| (-0.5 * ((x - y) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    Ok(Curve {
        time,
        mean,
        variance: var,
        method: "monte_carlo",
        variance_std_error: Some(((m4 - var * var) / n).sqrt()),
        density,
    })
}

fn densities_1d(cfg: &RunConfig, mix: &GaussianMixture, sink: &Sink) -> Result<u8> {
    let mode = cfg.mode.unwrap_or(Mode::OneShot);
    let sd = mix.covariance()[0][0].sqrt();
    let center = mix.mean()[0];
    let xs: Vec<f64> = (0..=400).map(|k| center - 4.0 * sd + 8.0 * sd * k as f64 / 400.0).collect();
    let mut times = match mode {
        Mode::Composed => {
            let schedule = cfg
                .schedule
                .as_ref()
                .ok_or_else(|| CliError::Config("composed pushforward needs a schedule".into()))?;
            schedule.flow()?.cumulative_times()
        }
        _ if cfg.times.is_empty() => vec![0.5, 1.0],
        _ => cfg.times.clone(),
    };
    if !times.contains(&0.0) {
        times.insert(0, 0.0);
    }
    let mut status = exit::SUCCESS;
    let mut curves = Vec::new();
    for &t in &times {
        let curve = match mode {
            _ if t == 0.0 => closed_curve(0.0, mix, &xs)?,
            Mode::Continuous => match mix.shift_covariance(-2.0 * t) {
                Ok(m) => closed_curve(t, &m, &xs)?,
                Err(_) => {
                    eprintln!("warning: continuous pushforward is singular at t = {t}; stopping");
                    status = exit::SINGULARITY;
                    break;
                }
            },
            Mode::OneShot => match mix.components() {
                [c] => closed_curve(t, &push_one_shot(c.mean(), c.cov(), t)?.to_mixture()?, &xs)?,
                _ => mc_curve(t, mix, cfg, &xs)?,
            },
            Mode::Composed => {
                let [c] = mix.components() else {
                    return Err(CliError::Config("composed pushforward needs a single Gaussian".into()));
                };
                let taus = cfg.schedule.as_ref().expect("checked above").flow()?;
                let pf = push_composed(c.mean(), c.cov(), taus.taus())?
                    .into_iter()
                    .find(|p| (p.t - t).abs() < 1e-12)
                    .expect("schedule time");
                closed_curve(t, &pf.to_mixture()?, &xs)?
            }
        };
        curves.push(curve);
    }
    if cfg.wants(Format::Csv) {
        sink.write("densities.csv", |w| {
            writeln!(w, "time,x,density")?;
            for c in &curves {
                for (x, d) in xs.iter().zip(&c.density) {
                    writeln!(w, "{},{x},{d}", c.time)?;
                }
            }
            Ok(())
        })?;
    }
    if cfg.wants(Format::Json) {
        #[derive(Serialize)]
        struct Moments<'a> {
            mode: Mode,
            curves: &'a [Curve],
        }
        sink.write("moments.json", |w| Ok(write_json(w, &Moments { mode, curves: &curves })?))?;
    }
    if cfg.wants(Format::Svg) {
        let pts: Vec<(f64, f64)> =
            curves.iter().flat_map(|c| xs.iter().copied().zip(c.density.iter().copied())).collect();
        let (xr, (_, y1)) = bounds(&pts);
        let mut plot = Plot::new(&format!("pushforward densities ({})", mode.as_str()), "x", "density", xr, (0.0, y1));
        for (k, c) in curves.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let line: Vec<(f64, f64)> = xs.iter().copied().zip(c.density.iter().copied()).collect();
            plot.polyline(&line, color, 1.5, false);
            let peak = line.iter().copied().fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            plot.text(peak, &format!("t = {}", c.time), color);
        }
        sink.svg("densities.svg", &plot)?;
    }
    Ok(status)
}

fn abstract_2d(cfg: &RunConfig, mix: &GaussianMixture, sink: &Sink) -> Result<u8> {
    let [c] = mix.components() else {
        return Err(CliError::Config("abstract trajectories need a single Gaussian".into()));
    };
    let cov = c.cov();
    if cov.matrix()[(0, 1)] != 0.0 || cov.matrix()[(1, 0)] != 0.0 {
        return Err(CoreError::Domain("abstract (sigma1, sigma2) chart needs a diagonal covariance".into()).into());
    }
    let times: Vec<f64> = if cfg.times.is_empty() {
        (0..10).map(|k| 0.05 * k as f64).collect()
    } else {
        cfg.times.clone()
    };
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let schedule = match &cfg.schedule {
        Some(s) => s.flow()?,
        None if t_max > 0.0 => FlowSchedule::uniform(t_max, (t_max / 0.05).round().max(1.0) as usize)?,
        None => FlowSchedule::new(vec![])?,
    };
    let mut status = exit::SUCCESS;
    let mut continuous = Vec::new();
    for &t in &times {
        match push_continuous(c.mean(), cov, t) {
            Ok(pf) => continuous.push(AbstractRow::from_pushforward(&pf)?),
            Err(CoreError::Singularity { critical_time }) => {
                eprintln!("warning: continuous curve stops at the singularity t = {critical_time}");
                status = exit::SINGULARITY;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let one_shot = times
        .iter()
        .map(|&t| AbstractRow::from_pushforward(&push_one_shot(c.mean(), cov, t)?))
        .collect::<dae_transport_core::Result<Vec<_>>>()?;
    let (composed, stopped) = push_composed_until_singular(c.mean(), cov, schedule.taus())?;
    if let Some(e) = stopped {
        eprintln!("warning: composed curve stops early: {e}");
        status = exit::SINGULARITY;
    }
    let composed = composed
        .iter()
        .map(AbstractRow::from_pushforward)
        .collect::<dae_transport_core::Result<Vec<_>>>()?;
    let rows: Vec<AbstractRow> = continuous.iter().chain(&one_shot).chain(&composed).cloned().collect();
    if cfg.wants(Format::Csv) {
        sink.write("abstract.csv", |w| Ok(write_abstract_csv(w, &rows)?))?;
    }
    if cfg.wants(Format::Json) {
        sink.write("abstract.json", |w| Ok(write_json(w, &rows)?))?;
    }
    if cfg.wants(Format::Svg) {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.sigma[0], r.sigma[1])).collect();
        let (xr, yr) = bounds(&pts);
        let mut plot = Plot::new("abstract trajectories", "sigma1", "sigma2", xr, yr);
        let levels: Vec<f64> = rows.iter().map(|r| r.sigma[0].ln() + r.sigma[1].ln()).filter(|v| v.is_finite()).collect();
        let (lo, hi) = levels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        if lo < hi {
            for k in 0..6 {
                let level = lo + (hi - lo) * k as f64 / 5.0;
                let contour: Vec<(f64, f64)> = (0..=200)
                    .map(|j| {
                        let s1 = xr.0 + (xr.1 - xr.0) * j as f64 / 200.0;
                        (s1, level.exp() / s1)
                    })
                    .collect();
                plot.polyline(&contour, "#c8c8c8", 0.8, false);
            }
        }
        let line = |rs: &[AbstractRow]| rs.iter().map(|r| (r.sigma[0], r.sigma[1])).collect::<Vec<_>>();
        plot.polyline(&line(&continuous), "#1f77b4", 2.0, false);
        plot.polyline(&line(&one_shot), "#2ca02c", 2.0, true);
        plot.polyline(&line(&composed), "#2ca02c", 1.5, false);
        for p in line(&composed) {
            plot.marker(p, 2.0, "#2ca02c");
        }
        if let Some(r) = continuous.last() {
            plot.text((r.sigma[0], r.sigma[1]), "continuous", "#1f77b4");
        }
        if let Some(r) = one_shot.last() {
            plot.text((r.sigma[0], r.sigma[1]), "one-shot", "#2ca02c");
        }
        sink.svg("abstract.svg", &plot)?;
    }
    Ok(status)
}

pub fn pushforward(cfg: &RunConfig) -> Result<u8> {
    let mix = cfg.mixture()?;
    let sink = Sink::new(cfg)?;
    match mix.dim() {
        1 => densities_1d(cfg, &mix, &sink),
        2 => abstract_2d(cfg, &mix, &sink),
        m => Err(CliError::Config(format!(
            "pushforward supports 1-D densities or 2-D abstract charts, got dimension {m}"
        ))),
    }
}

pub fn verify(cfg: &RunConfig) -> Result<u8> {
    let sink = Sink::new(cfg)?;
    let manifest = match run_suite(&cfg.verify) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: verification crashed: {e}");
            return Ok(exit::RUNTIME);
        }
    };
    for c in &manifest.checks {
        let verdict = if c.ok { "ok" } else { "FAILED" };
        let kind = if c.expect_pass { "" } else { " (negative control)" };
        println!(
            "{verdict:>6}  {}{kind}: max_abs = {:e}, tolerance = {:e}",
            c.report.name, c.report.max_abs, c.report.tolerance
        );
    }
    sink.write("manifest.json", |w| Ok(write_manifest_json(w, &manifest)?))?;
    Ok(if manifest.passed { exit::SUCCESS } else { exit::CHECK_FAILED })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_shot_times_end_exactly() {
        let t = one_shot_times(0.5, 0.2);
        assert_eq!(t.first(), Some(&0.0));
        assert_eq!(t.last(), Some(&0.5));
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(one_shot_times(0.0, 0.2), vec![0.0]);
    }

    #[test]
    fn midpoint_detection() {
        assert!(is_multiple(0.4, 0.2));
        assert!(is_multiple(0.05 * 8.0, 0.2));
        assert!(!is_multiple(0.0, 0.2));
        assert!(!is_multiple(0.25, 0.2));
    }
}
