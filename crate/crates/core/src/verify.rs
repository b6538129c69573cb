//! Residual checks for the identities satisfied by DAE transport.
//!
//! Every check returns one or more [`ResidualReport`]s whose `passed` flag is
//! `max_abs <= tolerance`. Default tolerances live in [`Tolerances`]; the
//! suite runner [`run_suite`] evaluates them all and aggregates a
//! [`Manifest`].
//!
//! | check | residual | default tolerance |
//! |-------|----------|-------------------|
//! | `stein` | `‖−t∇ν_t(ε) − εν_t(ε)‖` | 1e-10 |
//! | `score_fd` | relative gap to central differences of `log μ` | 1e-5 |
//! | `laplacian_fd` | relative gap to a 5-point Laplacian of `μ` | 1e-4 |
//! | `variational_regression` | sup gap of kernel regression to `Φ_t` | 0.05 |
//! | `variational_global_minimum` | `max(0, L[g*] − L[g* + h])` | 0 |
//! | `variational_decomposition` | z-score of `L[g*+h] − L[g*] − L̂[h]` | 4 |
//! | `continuity_t0` (Gaussian) | `∂_tμ_t + Δμ_0` at `t = 0` | 1e-3 |
//! | `continuity_t0` (mixture, KDE) | same, bandwidth-matched | 5e-3 |
//! | `backward_heat` | `∂_tμ_t + Δμ_t` | 1e-4 |
//! | `time_reversal` | heat-smoothed pushforward vs `μ0` | 1e-12 |
//! | `entropy_monotone` | entropy increase per step | 0 |
//! | `renyi_identity` | `∇·[μ∇(δH^α/δμ)] − Δμ^α` | 1e-4 |

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{norm_sq, quad_form, Spd};
use crate::measures::{stein_residual, GaussianMixture, McSettings, NoiseVariance, ParticleEnsemble};
use crate::pushforward::{one_shot_covariance, push_continuous};
use crate::rng::{domain, substream};
use crate::transport::{continuous_flow, lattice, DaeMap, RetrainMode, Trajectory};

/// Central-difference step in time.
pub const TIME_STEP: f64 = 1e-4;
/// Central-difference step in space, relative to the smallest standard deviation.
pub const SPACE_STEP_REL: f64 = 1e-3;
/// A negative control counts as failed only beyond this multiple of its tolerance.
pub const NEGATIVE_CONTROL_MARGIN: f64 = 10.0;
/// Number of random perturbations in the global-minimum test.
pub const PERTURBATION_TRIALS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub name: String,
    pub grid: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub max_abs: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seed: Option<u64>,
    /// Estimator settings recorded for auditability (bandwidths, sample sizes).
    pub details: BTreeMap<String, f64>,
}

impl ResidualReport {
    pub fn new(
        name: impl Into<String>,
        grid: Vec<Vec<f64>>,
        residuals: Vec<f64>,
        tolerance: f64,
        seed: Option<u64>,
    ) -> Self {
        // NaN counts as an unbounded residual
        let max_abs = residuals
            .iter()
            .map(|r| if r.is_nan() { f64::INFINITY } else { r.abs() })
            .fold(0.0, f64::max);
        Self {
            name: name.into(),
            grid,
            residuals,
            max_abs,
            tolerance,
            passed: max_abs <= tolerance,
            seed,
            details: BTreeMap::new(),
        }
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            name: self.name.clone(),
            tolerance: self.tolerance,
            max_abs: self.max_abs,
            passed: self.passed,
            grid_size: self.grid.len(),
            seed: self.seed,
            details: self.details.clone(),
        }
    }
}

/// JSON form of a report: `{name, tolerance, max_abs, passed, grid_size, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub name: String,
    pub tolerance: f64,
    pub max_abs: f64,
    pub passed: bool,
    pub grid_size: usize,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

/// Per-check tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub stein: f64,
    pub score_fd: f64,
    pub laplacian_fd: f64,
    pub variational_regression: f64,
    pub variational_global_minimum: f64,
    pub variational_decomposition: f64,
    pub continuity_gaussian: f64,
    pub continuity_mixture: f64,
    pub backward_heat: f64,
    pub time_reversal: f64,
    pub entropy_monotone: f64,
    pub renyi_identity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            stein: 1e-10,
            score_fd: 1e-5,
            laplacian_fd: 1e-4,
            variational_regression: 0.05,
            variational_global_minimum: 0.0,
            variational_decomposition: 4.0,
            continuity_gaussian: 1e-3,
            continuity_mixture: 5e-3,
            backward_heat: 1e-4,
            time_reversal: 1e-12,
            entropy_monotone: 0.0,
            renyi_identity: 1e-4,
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Stein's identity over `pairs` seeded draws of `t ∈ [0.05, 2]` and `ε ∼ N(0, tI₃)`.
pub fn check_stein(pairs: usize, seed: u64, tol: f64) -> Result<ResidualReport> {
    let mut grid = Vec::with_capacity(pairs);
    let mut residuals = Vec::with_capacity(pairs);
    for i in 0..pairs as u64 {
        let mut rng = substream(seed, domain::STEIN, i);
        let t = 0.05 + 1.95 * rng.gen::<f64>();
        let eps: Vec<f64> = (0..3)
            .map(|_| t.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let r = stein_residual(NoiseVariance::new(t)?, &eps)?;
        residuals.push(norm_sq(&r).sqrt());
        let mut row = vec![t];
        row.extend(eps);
        grid.push(row);
    }
    Ok(ResidualReport::new("stein", grid, residuals, tol, Some(seed)))
}

/// Analytic score against central differences of `log μ` at seeded points;
/// residuals are relative to `max(1, ‖score‖∞)`.
pub fn check_score_fd(mix: &GaussianMixture, points: usize, seed: u64, tol: f64) -> Result<ResidualReport> {
    let probes = mix.sample(points, seed)?;
    let h = 1e-2 * SPACE_STEP_REL * mix.min_eigenvalue().sqrt();
    let mut residuals = Vec::new();
    for x in probes.rows() {
        let an = mix.score(x)?;
        let scale = an.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[i] += h;
            q[i] -= h;
            let fd = (mix.log_density(&p)? - mix.log_density(&q)?) / (2.0 * h);
            worst = worst.max((an[i] - fd).abs() / scale);
        }
        residuals.push(worst);
    }
    let grid = probes.rows().map(<[f64]>::to_vec).collect();
    Ok(ResidualReport::new("score_fd", grid, residuals, tol, Some(seed)).with_detail("step", h))
}

/// Analytic Laplacian of the density against a fourth-order 5-point stencil;
/// residuals are relative to `max(|Δμ|, μ)`.
pub fn check_laplacian_fd(
    mix: &GaussianMixture,
    points: usize,
    seed: u64,
    tol: f64,
) -> Result<ResidualReport> {
    let probes = mix.sample(points, seed)?;
    let h = SPACE_STEP_REL * mix.min_eigenvalue().sqrt();
    let mut residuals = Vec::new();
    for x in probes.rows() {
        let an = mix.laplacian_density(x)?;
        let mut fd = 0.0;
        for i in 0..x.len() {
            let at = |k: f64| {
                let mut y = x.to_vec();
                y[i] += k * h;
                mix.density(&y)
            };
            fd += (-at(2.0)? + 16.0 * at(1.0)? - 30.0 * at(0.0)? + 16.0 * at(-1.0)? - at(-2.0)?)
                / (12.0 * h * h);
        }
        let scale = an.abs().max(mix.density(x)?);
        residuals.push((an - fd).abs() / scale);
    }
    let grid = probes.rows().map(<[f64]>::to_vec).collect();
    Ok(ResidualReport::new("laplacian_fd", grid, residuals, tol, Some(seed)).with_detail("step", h))
}

/// Smooth bounded perturbation `h(y) = Σ_k a_k exp(−|y − c_k|²/(2w_k²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    bumps: Vec<Bump>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Bump {
    amplitude: Vec<f64>,
    center: Vec<f64>,
    width: f64,
}

impl Perturbation {
    pub fn zero(dim: usize) -> Self {
        Self { bumps: vec![], dim }
    }

    /// Three bumps with amplitudes in `[−0.5, 0.5]^m`, widths in `[0.3, 1.0]`
    /// and centers drawn from `mix`.
    pub fn random(mix: &GaussianMixture, seed: u64, index: u64) -> Result<Self> {
        let mut rng = substream(seed, domain::PERTURBATION, index);
        let centers = mix.sample(3, rng.gen())?;
        let bumps = centers
            .rows()
            .map(|c| Bump {
                amplitude: (0..mix.dim()).map(|_| rng.gen_range(-0.5..=0.5)).collect(),
                center: c.to_vec(),
                width: rng.gen_range(0.3..=1.0),
            })
            .collect();
        Ok(Self {
            bumps,
            dim: mix.dim(),
        })
    }

    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for b in &self.bumps {
            let d2: f64 = y.iter().zip(&b.center).map(|(a, c)| (a - c) * (a - c)).sum();
            let k = (-d2 / (2.0 * b.width * b.width)).exp();
            for (o, a) in out.iter_mut().zip(&b.amplitude) {
                *o += a * k;
            }
        }
        out
    }
}

/// Clean/corrupted training pairs `(x, x + ε)` with `ε ∼ N(0, tI)`.
#[derive(Debug, Clone)]
pub struct DenoisingPairs {
    pub clean: ParticleEnsemble,
    pub noisy: ParticleEnsemble,
}

impl DenoisingPairs {
    pub fn draw(mix: &GaussianMixture, t: NoiseVariance, n: usize, seed: u64) -> Result<Self> {
        let clean = mix.sample(n, seed)?;
        let sd = t.get().sqrt();
        let rows: Vec<&[f64]> = clean.rows().collect();
        let noisy: Vec<f64> = rows
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, x)| {
                let mut rng = substream(seed, domain::NOISE, i as u64);
                x.iter()
                    .map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(Self {
            noisy: ParticleEnsemble::new(clean.dim(), noisy, seed)?,
            clean,
        })
    }

    /// Empirical denoising objective `mean |g(x̃) − x|²`.
    pub fn loss(&self, g: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync) -> Result<f64> {
        let rows: Vec<(&[f64], &[f64])> = self.noisy.rows().zip(self.clean.rows()).collect();
        let terms = rows
            .par_iter()
            .map(|(y, x)| Ok(g(y)?.iter().zip(*x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(terms.iter().sum::<f64>() / terms.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationTrial {
    /// `L[g* + h]`.
    pub loss: f64,
    /// `L[g* + h] − L[g*]`.
    pub excess: f64,
    /// `L̂[h] = mean |h(x̃)|²`.
    pub h_energy: f64,
    /// Standard error of the cross term `2⟨h, g* − x⟩`.
    pub cross_std_error: f64,
}

#[derive(Debug, Clone)]
pub struct VariationalCheck {
    pub regression: ResidualReport,
    pub global_minimum: ResidualReport,
    pub decomposition: ResidualReport,
    pub base_loss: f64,
    pub trials: Vec<PerturbationTrial>,
}

impl VariationalCheck {
    pub fn reports(&self) -> [&ResidualReport; 3] {
        [&self.regression, &self.global_minimum, &self.decomposition]
    }
}

/// Default regression probes: 41 points per axis in 1-D, 9 per axis otherwise,
/// spanning `mean ± 2 sd`.
pub fn regression_probes(mix: &GaussianMixture) -> Result<ParticleEnsemble> {
    let mean = mix.mean();
    let cov = mix.covariance();
    let lo: Vec<f64> = (0..mix.dim()).map(|i| mean[i] - 2.0 * cov[i][i].sqrt()).collect();
    let hi: Vec<f64> = (0..mix.dim()).map(|i| mean[i] + 2.0 * cov[i][i].sqrt()).collect();
    lattice(&lo, &hi, if mix.dim() == 1 { 41 } else { 9 }, 0)
}

/// The exact DAE is the global minimizer of the denoising objective.
///
/// Fits `E[x | x̃]` by kernel-weighted averaging of `n` clean samples and
/// compares it to the exact map on `probes`; then perturbs the exact map by
/// [`PERTURBATION_TRIALS`] random bumps and checks the objective never
/// decreases and that its increase is `L̂[h]` up to Monte Carlo error.
pub fn check_variational_minimizer(
    mix0: &GaussianMixture,
    t: NoiseVariance,
    n: usize,
    seed: u64,
    probes: &ParticleEnsemble,
    tol: &Tolerances,
) -> Result<VariationalCheck> {
    if t.get() <= 0.0 {
        return Err(Error::Domain("variational check needs t > 0".into()));
    }
    if n < 1_000 {
        return Err(Error::Contract(format!("variational check needs n >= 1000, got {n}")));
    }
    check_dim(mix0.dim(), probes.dim())?;
    let pairs = DenoisingPairs::draw(mix0, t, n, seed)?;
    let exact = DaeMap::mixture_exact(mix0, t);
    let fitted = DaeMap::empirical_kernel(pairs.clean.clone(), t)?;

    let mut grid = Vec::new();
    let mut dev = Vec::new();
    for x in probes.rows() {
        let a = fitted.apply(x)?;
        let b = exact.apply(x)?;
        dev.push(max_abs_diff(&a, &b));
        grid.push(x.to_vec());
    }
    let regression = ResidualReport::new("variational_regression", grid, dev, tol.variational_regression, Some(seed))
        .with_detail("samples", n as f64)
        .with_detail("t", t.get());

    let rows: Vec<(&[f64], &[f64])> = pairs.noisy.rows().zip(pairs.clean.rows()).collect();
    let fitted_at_noisy = rows
        .par_iter()
        .map(|(y, _)| exact.apply(y))
        .collect::<Result<Vec<_>>>()?;
    let base_loss = pairs.loss(|y| exact.apply(y))?;

    let mut trials = Vec::with_capacity(PERTURBATION_TRIALS);
    for k in 0..PERTURBATION_TRIALS as u64 {
        let h = Perturbation::random(mix0, seed, k)?;
        let loss = pairs.loss(|y| {
            let g = exact.apply(y)?;
            Ok(g.iter().zip(h.eval(y)).map(|(a, b)| a + b).collect())
        })?;
        let (energy, cross): (Vec<f64>, Vec<f64>) = rows
            .par_iter()
            .zip(&fitted_at_noisy)
            .map(|((y, x), g)| {
                let hv = h.eval(y);
                let cross: f64 = hv.iter().zip(g).zip(*x).map(|((h, g), x)| 2.0 * h * (g - x)).sum();
                (norm_sq(&hv), cross)
            })
            .unzip();
        let nn = n as f64;
        let h_energy = energy.iter().sum::<f64>() / nn;
        let cross_mean = cross.iter().sum::<f64>() / nn;
        let cross_var = cross.iter().map(|c| (c - cross_mean).powi(2)).sum::<f64>() / (nn - 1.0);
        trials.push(PerturbationTrial {
            loss,
            excess: loss - base_loss,
            h_energy,
            cross_std_error: (cross_var / nn).sqrt(),
        });
    }
    let trial_grid: Vec<Vec<f64>> = (0..trials.len()).map(|k| vec![k as f64]).collect();
    let global_minimum = ResidualReport::new(
        "variational_global_minimum",
        trial_grid.clone(),
        trials.iter().map(|tr| (-tr.excess).max(0.0)).collect(),
        tol.variational_global_minimum,
        Some(seed),
    );
    let decomposition = ResidualReport::new(
        "variational_decomposition",
        trial_grid,
        trials
            .iter()
            .map(|tr| (tr.excess - tr.h_energy) / tr.cross_std_error.max(f64::MIN_POSITIVE))
            .collect(),
        tol.variational_decomposition,
        Some(seed),
    );
    Ok(VariationalCheck {
        regression,
        global_minimum,
        decomposition,
        base_loss,
        trials,
    })
}

/// Bandwidth matrix for kernel estimates of density time derivatives:
/// the normal-reference factor `(4/((m + 4) n))^{2/(m + 8)}` times the
/// sample covariance.
pub fn derivative_bandwidth(ens: &ParticleEnsemble) -> Result<Spd> {
    let (_, cov) = crate::pushforward::empirical_moments(ens)?;
    let m = ens.dim() as f64;
    let factor = (4.0 / ((m + 4.0) * ens.len() as f64)).powf(2.0 / (m + 8.0));
    let scaled: Vec<Vec<f64>> = cov.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect();
    Spd::from_rows(&scaled)
}

/// `∂_tμ_t = −Δμ_0` at `t = 0` for the one-shot DAE pushforward.
///
/// Single Gaussians use central differences of the closed-form pushforward
/// density. Mixtures push `mc.samples` particles through `Φ_{±dt}` and
/// differentiate their kernel density estimate; the target is then the
/// Laplacian of `μ0` convolved with the same kernel, so the residual carries
/// Monte Carlo noise but no smoothing bias.
pub fn check_continuity_t0(
    mix0: &GaussianMixture,
    dt: f64,
    probes: &ParticleEnsemble,
    mc: McSettings,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt must be > 0, got {dt}")));
    }
    if dt > 1e-3 {
        return Err(Error::Domain(format!(
            "dt = {dt} too large: O(dt²) truncation would not resolve below tolerance (max 1e-3)"
        )));
    }
    check_dim(mix0.dim(), probes.dim())?;
    if dt >= mix0.min_eigenvalue() {
        return Err(Error::Domain("dt must be below the smallest covariance eigenvalue".into()));
    }
    let grid: Vec<Vec<f64>> = probes.rows().map(<[f64]>::to_vec).collect();

    if let [c] = mix0.components() {
        let at = |s: f64| -> Result<GaussianMixture> {
            GaussianMixture::gaussian(c.mean().to_vec(), one_shot_covariance(c.cov(), s)?)
        };
        let (plus, minus) = (at(dt)?, at(-dt)?);
        let residuals = grid
            .iter()
            .map(|x| Ok((plus.density(x)? - minus.density(x)?) / (2.0 * dt) + mix0.laplacian_density(x)?))
            .collect::<Result<Vec<_>>>()?;
        return Ok(ResidualReport::new("continuity_t0", grid, residuals, tol.continuity_gaussian, None)
            .with_detail("dt", dt));
    }

    let particles = mix0.sample(mc.samples, mc.seed)?;
    let forward = DaeMap::mixture_exact(mix0, NoiseVariance::new(dt)?);
    let sharpened = mix0.shift_covariance(-dt)?;
    let rows: Vec<&[f64]> = particles.rows().collect();
    let pushed = rows
        .par_iter()
        .map(|x| {
            let plus = forward.apply(x)?;
            let s = sharpened.score(x)?;
            let minus: Vec<f64> = x.iter().zip(s).map(|(a, b)| a - dt * b).collect();
            Ok((plus, minus))
        })
        .collect::<Result<Vec<_>>>()?;
    let bandwidth = derivative_bandwidth(&particles)?;
    let prec = bandwidth.inverse().clone();
    let m = mix0.dim() as f64;
    let norm = (-0.5 * (m * (2.0 * std::f64::consts::PI).ln() + bandwidth.log_det())).exp();
    let target = mix0.convolve(&bandwidth)?;
    let n = particles.len() as f64;
    let residuals = grid
        .par_iter()
        .map(|x| {
            let kernel = |y: &[f64]| {
                let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                (-0.5 * quad_form(&prec, &d)).exp()
            };
            let diff: f64 = pushed.iter().map(|(p, q)| kernel(p) - kernel(q)).sum();
            let rate = norm * diff / (n * 2.0 * dt);
            Ok(rate + target.laplacian_density(x)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ResidualReport::new("continuity_t0", grid, residuals, tol.continuity_mixture, Some(mc.seed))
        .with_detail("dt", dt)
        .with_detail("samples", n);
    for i in 0..bandwidth.dim() {
        for j in 0..bandwidth.dim() {
            report = report.with_detail(&format!("bandwidth_{i}{j}"), bandwidth.matrix()[(i, j)]);
        }
    }
    Ok(report)
}

fn heat_residuals(
    name: &str,
    family: impl Fn(f64) -> Result<GaussianMixture>,
    t_grid: &[f64],
    probes: &ParticleEnsemble,
    tol: f64,
) -> Result<ResidualReport> {
    let mut grid = Vec::new();
    let mut residuals = Vec::new();
    for &t in t_grid {
        let (now, plus, minus) = (family(t)?, family(t + TIME_STEP)?, family(t - TIME_STEP)?);
        for x in probes.rows() {
            let rate = (plus.density(x)? - minus.density(x)?) / (2.0 * TIME_STEP);
            residuals.push(rate + now.laplacian_density(x)?);
            let mut row = vec![t];
            row.extend_from_slice(x);
            grid.push(row);
        }
    }
    Ok(ResidualReport::new(name, grid, residuals, tol, None).with_detail("dt", TIME_STEP))
}

fn validate_times(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::Contract("time grid is empty".into()));
    }
    if let Some(t) = t_grid.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
        return Err(Error::Domain(format!("grid times must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// `∂_tμ_t + Δμ_t = 0` along the continuous-DAE pushforward, whose
/// components have covariances `Σ_i − 2tI`.
pub fn check_backward_heat(
    mix0: &GaussianMixture,
    t_grid: &[f64],
    probes: &ParticleEnsemble,
    tol: f64,
) -> Result<ResidualReport> {
    validate_times(t_grid)?;
    check_dim(mix0.dim(), probes.dim())?;
    let lmin = mix0.min_eigenvalue();
    let t_max = t_grid.iter().copied().fold(0.0, f64::max);
    if 2.0 * (t_max + TIME_STEP) >= lmin {
        return Err(Error::Singularity {
            critical_time: lmin / 2.0,
        });
    }
    heat_residuals(
        "backward_heat",
        |t| mix0.shift_covariance(-2.0 * t),
        t_grid,
        probes,
        tol,
    )
}

/// The same residual along the one-shot pushforward `Φ_t♯μ0`; expected to
/// fail for `t > 0`.
pub fn check_backward_heat_one_shot(
    mix0: &GaussianMixture,
    t_grid: &[f64],
    probes: &ParticleEnsemble,
    tol: f64,
) -> Result<ResidualReport> {
    validate_times(t_grid)?;
    check_dim(mix0.dim(), probes.dim())?;
    let [c] = mix0.components() else {
        return Err(Error::Domain("one-shot pushforward is closed-form only for a single Gaussian".into()));
    };
    heat_residuals(
        "backward_heat_one_shot",
        |t| GaussianMixture::gaussian(c.mean().to_vec(), one_shot_covariance(c.cov(), t)?),
        t_grid,
        probes,
        tol,
    )
}

/// Heat smoothing for time `2t` undoes the continuous DAE run for time `t`.
pub fn check_time_reversal(
    mean: &[f64],
    cov: &Spd,
    t: f64,
    probes: &ParticleEnsemble,
    tol: f64,
) -> Result<ResidualReport> {
    check_dim(cov.dim(), probes.dim())?;
    let pf = push_continuous(mean, cov, t)?;
    let original = GaussianMixture::gaussian(mean.to_vec(), cov.clone())?;
    let mut grid = Vec::new();
    let mut residuals = Vec::new();
    let m = cov.dim();
    match pf.to_mixture() {
        Ok(pushed) => {
            let restored = pushed.smooth(NoiseVariance::new(2.0 * t)?);
            let rc = restored.components()[0].cov().matrix();
            for i in 0..m {
                for j in 0..m {
                    residuals.push(rc[(i, j)] - cov.matrix()[(i, j)]);
                    grid.push(vec![i as f64, j as f64]);
                }
            }
            for x in probes.rows() {
                residuals.push(restored.density(x)? - original.density(x)?);
                grid.push(x.to_vec());
            }
        }
        // at the critical time only the covariance identity is defined
        Err(_) => {
            for i in 0..m {
                for j in 0..m {
                    let back = pf.covariance[(i, j)] + if i == j { 2.0 * t } else { 0.0 };
                    residuals.push(back - cov.matrix()[(i, j)]);
                    grid.push(vec![i as f64, j as f64]);
                }
            }
        }
    }
    Ok(ResidualReport::new(format!("time_reversal_t{t}"), grid, residuals, tol, None))
}

/// Entropy along a trajectory never increases.
///
/// Closed-form diagnostics must decrease strictly (a flat step counts as a
/// violation); Monte Carlo diagnostics may rise by at most three standard
/// errors of the step difference.
pub fn check_entropy_monotone(traj: &Trajectory, tol: f64) -> Result<ResidualReport> {
    if traj.times.len() < 3 {
        return Err(Error::Contract(format!(
            "entropy check needs >= 3 recorded times, got {}",
            traj.times.len()
        )));
    }
    if traj.diagnostics.len() != traj.times.len() {
        return Err(Error::MissingDiagnostics(format!(
            "{} diagnostics for {} times",
            traj.diagnostics.len(),
            traj.times.len()
        )));
    }
    if traj.diagnostics.iter().any(|d| d.entropy.value.is_nan()) {
        return Err(Error::MissingDiagnostics("entropy is NaN".into()));
    }
    let exact = traj.diagnostics.iter().all(|d| d.entropy.is_exact());
    let mut grid = Vec::new();
    let mut residuals = Vec::new();
    for w in traj.diagnostics.windows(2) {
        let (a, b) = (&w[0].entropy, &w[1].entropy);
        let change = b.value - a.value;
        let r = if exact {
            if change < 0.0 {
                0.0
            } else {
                change.max(f64::MIN_POSITIVE)
            }
        } else {
            let allowance = 3.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
            (change - allowance).max(0.0)
        };
        residuals.push(r);
        grid.push(vec![w[1].time]);
    }
    let first = traj.diagnostics[0].entropy.value;
    let last = traj.diagnostics.last().unwrap().entropy.value;
    Ok(ResidualReport::new("entropy_monotone", grid, residuals, tol, None)
        .with_detail("total_change", last - first)
        .with_detail("strict", if exact { 1.0 } else { 0.0 }))
}

/// `∇·[μ∇(δH^α/δμ)] = Δμ^α`: the flux `αμ^{α−1}∇μ` is differenced numerically
/// and compared with `αμ^{α−1}Δμ + α(α−1)μ^α|∇log μ|²`.
pub fn check_renyi_identity(
    mix: &GaussianMixture,
    alpha: f64,
    probes: &ParticleEnsemble,
    tol: f64,
) -> Result<ResidualReport> {
    if !(alpha > 0.0) || alpha == 1.0 {
        return Err(Error::Domain(format!("renyi order must be positive and != 1, got {alpha}")));
    }
    check_dim(mix.dim(), probes.dim())?;
    let h = SPACE_STEP_REL * mix.min_eigenvalue().sqrt();
    let flux = |y: &[f64], i: usize| -> Result<f64> {
        let p = mix.density(y)?;
        Ok(alpha * p.powf(alpha - 1.0) * mix.density_gradient(y)?[i])
    };
    let mut residuals = Vec::new();
    for x in probes.rows() {
        let mut div = 0.0;
        for i in 0..x.len() {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[i] += h;
            q[i] -= h;
            div += (flux(&p, i)? - flux(&q, i)?) / (2.0 * h);
        }
        let mu = mix.density(x)?;
        let s2 = norm_sq(&mix.score(x)?);
        let analytic = alpha * mu.powf(alpha - 1.0) * mix.laplacian_density(x)?
            + alpha * (alpha - 1.0) * mu.powf(alpha) * s2;
        residuals.push(div - analytic);
    }
    let grid = probes.rows().map(<[f64]>::to_vec).collect();
    Ok(ResidualReport::new("renyi_identity", grid, residuals, tol, None)
        .with_detail("alpha", alpha)
        .with_detail("step", h))
}

/// Inputs of the default verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    pub mc_samples: usize,
    pub tolerances: Tolerances,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mc_samples: crate::measures::DEFAULT_MC_SAMPLES,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub report: ReportSummary,
    /// False for negative controls, which must fail by a clear margin.
    pub expect_pass: bool,
    /// Whether the entry met its expectation.
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_reports(seed: u64, reports: Vec<(ResidualReport, bool)>) -> Self {
        let checks: Vec<ManifestEntry> = reports
            .into_iter()
            .map(|(r, expect_pass)| {
                let ok = if expect_pass {
                    r.passed
                } else {
                    !r.passed && r.max_abs > NEGATIVE_CONTROL_MARGIN * r.tolerance
                };
                ManifestEntry {
                    report: r.summary(),
                    expect_pass,
                    ok,
                }
            })
            .collect();
        Self {
            seed,
            passed: checks.iter().all(|c| c.ok),
            checks,
        }
    }
}

/// Data measure used by the PDE checks: `N([0, 0], diag[2, 1])`.
pub fn reference_gaussian() -> GaussianMixture {
    GaussianMixture::diagonal(vec![0.0, 0.0], &[2.0, 1.0]).expect("valid reference Gaussian")
}

/// Equal mixture of `N(−1, 1)` and `N(1, 1)`.
pub fn reference_bimodal() -> GaussianMixture {
    let one = Spd::identity(1);
    GaussianMixture::new(vec![
        crate::measures::Component::new(0.5, vec![-1.0], one.clone()).expect("valid"),
        crate::measures::Component::new(0.5, vec![1.0], one).expect("valid"),
    ])
    .expect("valid reference mixture")
}

/// Lattice on `[−3, 3]²` with step 0.5.
pub fn heat_probes() -> ParticleEnsemble {
    lattice(&[-3.0, -3.0], &[3.0, 3.0], 13, 0).expect("valid lattice")
}

/// Runs every check with its default inputs.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Manifest> {
    let tol = &cfg.tolerances;
    let seed = cfg.seed;
    let gauss2 = reference_gaussian();
    let std1 = GaussianMixture::diagonal(vec![0.0], &[1.0])?;
    let bimodal = reference_bimodal();
    let skewed = GaussianMixture::new(vec![
        crate::measures::Component::new(
            0.3,
            vec![-1.0, 0.5],
            Spd::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.5]])?,
        )?,
        crate::measures::Component::new(0.7, vec![1.5, -0.5], Spd::diagonal(&[0.6, 1.4])?)?,
    ])?;
    let line = lattice(&[-2.0], &[2.0], 17, 0)?;
    let probes = heat_probes();

    let mut reports: Vec<(ResidualReport, bool)> = vec![
        (check_stein(100, seed, tol.stein)?, true),
        (check_score_fd(&skewed, 200, seed, tol.score_fd)?, true),
        (check_laplacian_fd(&skewed, 200, seed, tol.laplacian_fd)?, true),
    ];

    let variational = check_variational_minimizer(
        &std1,
        NoiseVariance::new(0.5)?,
        cfg.mc_samples.max(1_000),
        seed,
        &regression_probes(&std1)?,
        tol,
    )?;
    reports.extend(variational.reports().into_iter().map(|r| (r.clone(), true)));

    let mut cont = check_continuity_t0(&std1, TIME_STEP, &line, McSettings::default(), tol)?;
    cont.name = "continuity_t0_gaussian".into();
    reports.push((cont, true));
    let mut cont = check_continuity_t0(
        &bimodal,
        TIME_STEP,
        &line,
        McSettings {
            samples: cfg.mc_samples.max(2),
            seed,
        },
        tol,
    )?;
    cont.name = "continuity_t0_mixture".into();
    reports.push((cont, true));

    reports.push((check_backward_heat(&gauss2, &[0.0, 0.1, 0.2, 0.3], &probes, tol.backward_heat)?, true));
    reports.push((check_backward_heat_one_shot(&gauss2, &[0.3], &probes, tol.backward_heat)?, false));

    let cov = Spd::diagonal(&[2.0, 1.0])?;
    let reversal_probes = lattice(&[-3.0, -3.0], &[3.0, 3.0], 10, 0)?;
    for t in [0.1, 0.2, 0.4] {
        reports.push((check_time_reversal(&[0.0, 0.0], &cov, t, &reversal_probes, tol.time_reversal)?, true));
    }

    let flow = continuous_flow(&gauss2, 0.4, 40, &heat_probes())?;
    debug_assert_eq!(flow.retrain, RetrainMode::Analytic);
    reports.push((check_entropy_monotone(&flow, tol.entropy_monotone)?, true));
    reports.push((check_renyi_identity(&gauss2, 2.0, &probes, tol.renyi_identity)?, true));

    Ok(Manifest::from_reports(seed, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{compose, FlowSchedule};

    fn nv(t: f64) -> NoiseVariance {
        NoiseVariance::new(t).unwrap()
    }

    #[test]
    fn report_invariants() {
        let r = ResidualReport::new("x", vec![vec![0.0]; 3], vec![0.1, -0.3, 0.2], 0.3, None);
        assert_eq!(r.max_abs, 0.3);
        assert!(r.passed);
        let r = ResidualReport::new("x", vec![vec![0.0]; 2], vec![0.1, f64::NAN], 1.0, None);
        assert!(!r.passed);
        let s = serde_json::to_value(r.summary()).unwrap();
        for key in ["name", "tolerance", "max_abs", "passed", "grid_size", "seed"] {
            assert!(s.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn stein_check_passes() {
        let r = check_stein(100, 3, 1e-10).unwrap();
        assert!(r.passed, "{}", r.max_abs);
        assert_eq!(r.grid.len(), 100);
    }

    #[test]
    fn zero_perturbation_leaves_loss_unchanged() {
        let mix = GaussianMixture::diagonal(vec![0.0], &[1.0]).unwrap();
        let pairs = DenoisingPairs::draw(&mix, nv(0.5), 2000, 1).unwrap();
        let exact = DaeMap::mixture_exact(&mix, nv(0.5));
        let zero = Perturbation::zero(1);
        let a = pairs.loss(|y| exact.apply(y)).unwrap();
        let b = pairs
            .loss(|y| Ok(exact.apply(y)?.iter().zip(zero.eval(y)).map(|(g, h)| g + h).collect()))
            .unwrap();
        assert_eq!(a, b);
        // the minimum value is the posterior variance σ²t/(σ² + t)
        assert!((a - 0.5 / 1.5).abs() < 0.02);
    }

    #[test]
    fn perturbations_are_bounded_and_seeded() {
        let mix = GaussianMixture::diagonal(vec![0.0, 0.0], &[1.0, 1.0]).unwrap();
        let h = Perturbation::random(&mix, 4, 2).unwrap();
        assert_eq!(h, Perturbation::random(&mix, 4, 2).unwrap());
        assert_ne!(h, Perturbation::random(&mix, 4, 3).unwrap());
        for b in &h.bumps {
            assert!(b.width >= 0.3 && b.width <= 1.0);
            assert!(b.amplitude.iter().all(|a| a.abs() <= 0.5));
        }
        let v = h.eval(&[0.1, 0.2]);
        assert!(v.iter().all(|x| x.abs() <= 1.5));
    }

    #[test]
    fn variational_point_mass_fits_constant() {
        let mix = GaussianMixture::gaussian(vec![0.7], Spd::diagonal(&[1e-12]).unwrap()).unwrap();
        let probes = lattice(&[-1.0], &[2.0], 7, 0).unwrap();
        let check =
            check_variational_minimizer(&mix, nv(0.5), 2_000, 5, &probes, &Tolerances::default()).unwrap();
        assert!(check.regression.passed);
        assert!(check.regression.max_abs < 1e-5, "{}", check.regression.max_abs);
    }

    #[test]
    fn variational_standard_normal() {
        let mix = GaussianMixture::diagonal(vec![0.0], &[1.0]).unwrap();
        let probes = regression_probes(&mix).unwrap();
        assert_eq!(probes.point(0), &[-2.0]);
        let check =
            check_variational_minimizer(&mix, nv(0.5), 100_000, 9, &probes, &Tolerances::default()).unwrap();
        for r in check.reports() {
            assert!(r.passed, "{} {}", r.name, r.max_abs);
        }
        assert!(check.trials.iter().all(|t| t.excess >= 0.0 && t.h_energy > 0.0));
    }

    #[test]
    fn variational_rejects_bad_inputs() {
        let mix = GaussianMixture::diagonal(vec![0.0], &[1.0]).unwrap();
        let probes = regression_probes(&mix).unwrap();
        let tol = Tolerances::default();
        assert!(check_variational_minimizer(&mix, NoiseVariance::zero(), 5000, 0, &probes, &tol).is_err());
        assert!(check_variational_minimizer(&mix, nv(0.5), 999, 0, &probes, &tol).is_err());
    }

    #[test]
    fn continuity_gaussian_and_inflection_points() {
        let mix = GaussianMixture::diagonal(vec![0.0], &[1.0]).unwrap();
        let grid = lattice(&[-2.0], &[2.0], 17, 0).unwrap();
        let r = check_continuity_t0(&mix, 1e-4, &grid, McSettings::default(), &Tolerances::default()).unwrap();
        assert!(r.passed, "{}", r.max_abs);
        // x = ±1 are grid points 4 and 12 where Δμ0 = 0, so ∂_tμ vanishes there too
        for i in [4, 12] {
            assert!(r.residuals[i].abs() < 1e-6);
        }
        assert!(check_continuity_t0(&mix, 1e-2, &grid, McSettings::default(), &Tolerances::default()).is_err());
        assert!(check_continuity_t0(&mix, 0.0, &grid, McSettings::default(), &Tolerances::default()).is_err());
    }

    #[test]
    fn continuity_mixture_with_kde() {
        let grid = lattice(&[-2.0], &[2.0], 17, 0).unwrap();
        let r = check_continuity_t0(
            &reference_bimodal(),
            1e-4,
            &grid,
            McSettings { samples: 100_000, seed: 1 },
            &Tolerances::default(),
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_abs);
        assert!(r.details.contains_key("bandwidth_00"));
    }

    #[test]
    fn backward_heat_positive_and_negative() {
        let mix = reference_gaussian();
        let probes = heat_probes();
        let r = check_backward_heat(&mix, &[0.0, 0.1, 0.2, 0.3], &probes, 1e-4).unwrap();
        assert!(r.passed, "{}", r.max_abs);
        let neg = check_backward_heat_one_shot(&mix, &[0.3], &probes, 1e-4).unwrap();
        assert!(!neg.passed);
        assert!(neg.max_abs > 10.0 * 1e-4);
        assert!(matches!(
            check_backward_heat(&mix, &[0.5], &probes, 1e-4),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn backward_heat_at_zero_matches_continuity() {
        let mix = GaussianMixture::diagonal(vec![0.0], &[1.0]).unwrap();
        let grid = lattice(&[-2.0], &[2.0], 17, 0).unwrap();
        let heat = check_backward_heat(&mix, &[0.0], &grid, 1e-4).unwrap();
        let cont = check_continuity_t0(&mix, 1e-4, &grid, McSettings::default(), &Tolerances::default()).unwrap();
        assert!(max_abs_diff(&heat.residuals, &cont.residuals) < 1e-4);
    }

    #[test]
    fn backward_heat_holds_for_mixtures() {
        let probes = lattice(&[-3.0], &[3.0], 25, 0).unwrap();
        let r = check_backward_heat(&reference_bimodal(), &[0.0, 0.2, 0.4], &probes, 1e-4).unwrap();
        assert!(r.passed, "{}", r.max_abs);
    }

    #[test]
    fn time_reversal_examples() {
        let cov = Spd::diagonal(&[2.0, 1.0]).unwrap();
        let probes = lattice(&[-3.0, -3.0], &[3.0, 3.0], 10, 0).unwrap();
        for t in [0.0, 0.1, 0.2, 0.4] {
            let r = check_time_reversal(&[0.0, 0.0], &cov, t, &probes, 1e-12).unwrap();
            assert!(r.passed, "t={t}: {}", r.max_abs);
            assert_eq!(r.grid.len(), 104);
        }
        let edge = check_time_reversal(&[0.0, 0.0], &cov, 0.5, &probes, 1e-12).unwrap();
        assert!(edge.passed);
        assert!(matches!(
            check_time_reversal(&[0.0, 0.0], &cov, 0.6, &probes, 1e-12),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn entropy_drop_along_continuous_flow() {
        let mix = reference_gaussian();
        let traj = continuous_flow(&mix, 0.4, 400, &heat_probes()).unwrap();
        let r = check_entropy_monotone(&traj, 0.0).unwrap();
        assert!(r.passed);
        // exact law N(0, Σ0 − 0.8I): ½ log(1.2 · 0.2 / 2)
        let expected = 0.5 * (1.2f64 * 0.2 / 2.0).ln();
        assert!((expected + 1.0601).abs() < 1e-4);
        assert!((r.details["total_change"] - expected).abs() < 5e-3, "{}", r.details["total_change"]);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn entropy_drop_of_one_shot_map() {
        let mix = GaussianMixture::diagonal(vec![0.0], &[1.0]).unwrap();
        let probes = lattice(&[-1.0], &[1.0], 3, 0).unwrap();
        let traj = compose(&mix, &FlowSchedule::new(vec![1.0]).unwrap(), &probes, RetrainMode::Analytic).unwrap();
        let change = traj.diagnostics[1].entropy.value - traj.diagnostics[0].entropy.value;
        assert!((change - 0.5 * 0.25f64.ln()).abs() < 1e-14);
        assert!((change + 0.6931).abs() < 1e-4);
    }

    #[test]
    fn flat_exact_trajectory_is_not_strictly_decreasing() {
        let mix = GaussianMixture::diagonal(vec![0.0], &[1.0]).unwrap();
        let probes = lattice(&[-1.0], &[1.0], 3, 0).unwrap();
        let mut traj =
            compose(&mix, &FlowSchedule::uniform(0.2, 2).unwrap(), &probes, RetrainMode::Analytic).unwrap();
        let first = traj.diagnostics[0].clone();
        for (k, d) in traj.diagnostics.iter_mut().enumerate() {
            *d = Diagnostics { time: k as f64, ..first.clone() };
        }
        let r = check_entropy_monotone(&traj, 0.0).unwrap();
        assert_eq!(r.details["total_change"], 0.0);
        assert!(!r.passed);
        traj.diagnostics.pop();
        assert!(matches!(check_entropy_monotone(&traj, 0.0), Err(Error::MissingDiagnostics(_))));
    }

    #[test]
    fn entropy_monotone_on_empirical_flow() {
        let mix = reference_bimodal();
        let data = mix.sample(400, 3).unwrap();
        let traj = continuous_flow(&mix, 0.3, 6, &data).unwrap();
        assert_eq!(traj.retrain, RetrainMode::Empirical);
        let r = check_entropy_monotone(&traj, 0.0).unwrap();
        assert!(r.passed, "{:?}", r.residuals);
        assert!(r.details["total_change"] < 0.0);
    }

    #[test]
    fn renyi_identity_holds() {
        let r = check_renyi_identity(&reference_gaussian(), 2.0, &heat_probes(), 1e-4).unwrap();
        assert!(r.passed, "{}", r.max_abs);
        let r = check_renyi_identity(&reference_bimodal(), 1.5, &lattice(&[-3.0], &[3.0], 31, 0).unwrap(), 1e-4)
            .unwrap();
        assert!(r.passed, "{}", r.max_abs);
        assert!(check_renyi_identity(&reference_gaussian(), 1.0, &heat_probes(), 1e-4).is_err());
    }

    #[test]
    fn fd_checks_pass() {
        let mix = reference_bimodal();
        assert!(check_score_fd(&mix, 200, 2, 1e-5).unwrap().passed);
        assert!(check_laplacian_fd(&mix, 200, 2, 1e-4).unwrap().passed);
    }

    use crate::transport::Diagnostics;
}
