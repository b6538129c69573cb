//! One-shot DAE transport maps, their compositions, and the continuous DAE.
//!
//! A one-shot map moves `x` to the posterior mean `E_t[x₀ | x]` of the clean
//! point given the corrupted one. Three backends evaluate it:
//!
//! * exact for a Gaussian mixture, `x + t ∇log[N(0, tI) * μ0](x)`;
//! * the affine closed form for a single Gaussian, `(I + tΣ⁻¹)⁻¹(x − μ) + μ`;
//! * the kernel-weighted mean over a sample, which is the same posterior mean
//!   with `μ0` replaced by the empirical measure.
//!
//! A composition retrains a map on the current pushforward at every layer;
//! the continuous DAE integrates `dx/dt = ∇log μ_t(x)` with explicit Euler.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{mat_vec, Spd};
use crate::measures::{Estimate, GaussianMixture, NoiseVariance, ParticleEnsemble};
use crate::pushforward::{empirical_moments, one_shot_covariance};

/// `ln(1e-300)`: kernel density values below this are treated as underflow.
pub const LOG_WEIGHT_FLOOR: f64 = -690.775_527_898_213_7;
/// Smallest covariance eigenvalue the continuous flow may propagate.
pub const COVARIANCE_FLOOR: f64 = 1e-10;
/// Minimum particle count for retraining from particles.
pub const MIN_EMPIRICAL_PARTICLES: usize = 10;

#[derive(Debug, Clone)]
enum Backend {
    MixtureExact {
        source: GaussianMixture,
        smoothed: GaussianMixture,
    },
    AnalyticGaussian {
        mean: Vec<f64>,
        cov: Spd,
        gain: DMatrix<f64>,
    },
    EmpiricalKernel {
        data: ParticleEnsemble,
    },
}

/// The optimal denoising autoencoder `Φ_t` for a given data measure.
#[derive(Debug, Clone)]
pub struct DaeMap {
    backend: Backend,
    t: NoiseVariance,
}

impl DaeMap {
    pub fn mixture_exact(mix: &GaussianMixture, t: NoiseVariance) -> Self {
        Self {
            backend: Backend::MixtureExact {
                source: mix.clone(),
                smoothed: mix.smooth(t),
            },
            t,
        }
    }

    pub fn analytic_gaussian(mean: Vec<f64>, cov: Spd, t: NoiseVariance) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        // (I + tΣ⁻¹)⁻¹ has eigenvalues λ/(λ + t)
        let tv = t.get();
        let gain = cov.spectral_map(|l| l / (l + tv));
        Ok(Self {
            backend: Backend::AnalyticGaussian { mean, cov, gain },
            t,
        })
    }

    /// Kernel posterior mean over `data`; needs `t > 0`.
    pub fn empirical_kernel(data: ParticleEnsemble, t: NoiseVariance) -> Result<Self> {
        if t.get() <= 0.0 {
            return Err(Error::Domain(
                "empirical kernel map needs t > 0 (kernel weights degenerate at t = 0)".into(),
            ));
        }
        Ok(Self {
            backend: Backend::EmpiricalKernel { data },
            t,
        })
    }

    pub fn t(&self) -> NoiseVariance {
        self.t
    }

    pub fn dim(&self) -> usize {
        match &self.backend {
            Backend::MixtureExact { source, .. } => source.dim(),
            Backend::AnalyticGaussian { mean, .. } => mean.len(),
            Backend::EmpiricalKernel { data } => data.dim(),
        }
    }

    pub fn backend_name(&self) -> &'static str {
        match &self.backend {
            Backend::MixtureExact { .. } => "mixture_exact",
            Backend::AnalyticGaussian { .. } => "analytic_gaussian",
            Backend::EmpiricalKernel { .. } => "empirical_kernel",
        }
    }

    /// The data measure the map was built for, when it is a Gaussian mixture.
    pub fn source_measure(&self) -> Option<GaussianMixture> {
        match &self.backend {
            Backend::MixtureExact { source, .. } => Some(source.clone()),
            Backend::AnalyticGaussian { mean, cov, .. } => {
                GaussianMixture::gaussian(mean.clone(), cov.clone()).ok()
            }
            Backend::EmpiricalKernel { .. } => None,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let t = self.t.get();
        match &self.backend {
            Backend::MixtureExact { smoothed, .. } => {
                if t == 0.0 {
                    return Ok(x.to_vec());
                }
                let s = smoothed.score(x)?;
                Ok(x.iter().zip(s).map(|(xi, si)| xi + t * si).collect())
            }
            Backend::AnalyticGaussian { mean, gain, .. } => {
                if t == 0.0 {
                    return Ok(x.to_vec());
                }
                let d: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
                let g = mat_vec(gain, &d);
                Ok(g.into_iter().zip(mean).map(|(a, b)| a + b).collect())
            }
            Backend::EmpiricalKernel { data } => kernel_posterior_mean(data, t, x),
        }
    }

    /// `−E_t[ε | x] = Φ_t(x) − x`.
    pub fn denoising_shift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.apply(x)?;
        Ok(y.iter().zip(x).map(|(a, b)| a - b).collect())
    }

    /// Applies the map to every particle; the result keeps the input seed.
    pub fn apply_ensemble(&self, ens: &ParticleEnsemble) -> Result<ParticleEnsemble> {
        check_dim(self.dim(), ens.dim())?;
        let rows: Vec<&[f64]> = ens.rows().collect();
        let mapped = rows
            .par_iter()
            .map(|x| self.apply(x))
            .collect::<Result<Vec<_>>>()?;
        ParticleEnsemble::new(ens.dim(), mapped.concat(), ens.seed())
    }
}

/// `Σ_i x_i N(x; x_i, tI) / Σ_i N(x; x_i, tI)` with max-shifted weights.
fn kernel_posterior_mean(data: &ParticleEnsemble, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(data.dim(), x.len())?;
    let log_w: Vec<f64> = data
        .rows()
        .map(|p| {
            let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            -d2 / (2.0 * t)
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut acc = vec![0.0; x.len()];
    for (lw, p) in log_w.iter().zip(data.rows()) {
        let w = (lw - max).exp();
        sum += w;
        for (a, v) in acc.iter_mut().zip(p) {
            *a += w * v;
        }
    }
    let m = x.len() as f64;
    let log_density = max + sum.ln() - (data.len() as f64).ln() - 0.5 * m * (2.0 * PI * t).ln();
    if log_density < LOG_WEIGHT_FLOOR {
        return Err(Error::WeightUnderflow { log_sum: log_density });
    }
    Ok(acc.into_iter().map(|a| a / sum).collect())
}

/// Continuous DAE for `N(μ0, Σ0)`: `√(I − 2tΣ0⁻¹)(x − μ0) + μ0`.
///
/// Fails with the critical time `λ_min/2` once `2t ≥ λ_min`.
pub fn analytic_continuous_map(mean: &[f64], cov: &Spd, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(cov.dim(), mean.len())?;
    check_dim(cov.dim(), x.len())?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    let lmin = cov.min_eigenvalue();
    if 2.0 * t >= lmin {
        return Err(Error::Singularity {
            critical_time: lmin / 2.0,
        });
    }
    if t == 0.0 {
        return Ok(x.to_vec());
    }
    let root = cov.spectral_map(|l| (1.0 - 2.0 * t / l).sqrt());
    let d: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    Ok(mat_vec(&root, &d)
        .into_iter()
        .zip(mean)
        .map(|(a, b)| a + b)
        .collect())
}

/// Layer noise variances `τ_0..τ_L`; cumulative times end at the total time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSchedule {
    taus: Vec<f64>,
}

impl FlowSchedule {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::Contract("schedule needs at least one layer".into()));
        }
        if let Some(bad) = taus.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(Error::Domain(format!("layer variance must be finite and > 0, got {bad}")));
        }
        Ok(Self { taus })
    }

    /// `steps` equal layers of variance `t_end / steps`.
    pub fn uniform(t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Contract("schedule needs at least one step".into()));
        }
        Self::new(vec![t_end / steps as f64; steps])
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// `t_ℓ = τ_0 + ... + τ_ℓ`.
    pub fn cumulative_times(&self) -> Vec<f64> {
        self.taus
            .iter()
            .scan(0.0, |acc, t| {
                *acc += t;
                Some(*acc)
            })
            .collect()
    }

    pub fn total_time(&self) -> f64 {
        self.cumulative_times().last().copied().unwrap_or(0.0)
    }
}

/// How each layer is retrained on the current pushforward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainMode {
    /// Exact Gaussian moments are propagated; needs a single-Gaussian `μ0`.
    Analytic,
    /// A kernel map with bandwidth variance `τ_ℓ` is fitted to the particles.
    Empirical,
}

/// Per-time summary of the transported measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub time: f64,
    pub entropy: Estimate,
    pub renyi2: Estimate,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Covariance of the propagated Gaussian in analytic mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub states: Vec<ParticleEnsemble>,
    pub diagnostics: Vec<Diagnostics>,
    pub retrain: RetrainMode,
}

impl Trajectory {
    fn start(retrain: RetrainMode, state: ParticleEnsemble, diag: Diagnostics) -> Self {
        Self {
            times: vec![diag.time],
            states: vec![state],
            diagnostics: vec![diag],
            retrain,
        }
    }

    fn push(&mut self, state: ParticleEnsemble, diag: Diagnostics) {
        debug_assert!(diag.time > *self.times.last().unwrap());
        debug_assert_eq!(state.len(), self.states[0].len());
        self.times.push(diag.time);
        self.states.push(state);
        self.diagnostics.push(diag);
    }

    pub fn final_state(&self) -> &ParticleEnsemble {
        self.states.last().expect("trajectory has an initial state")
    }

    /// Orbit of one particle across all recorded times.
    pub fn orbit(&self, particle: usize) -> Vec<&[f64]> {
        self.states.iter().map(|s| s.point(particle)).collect()
    }
}

fn particle_moments(ens: &ParticleEnsemble) -> (Vec<f64>, Vec<Vec<f64>>) {
    empirical_moments(ens)
        .unwrap_or_else(|_| (ens.point(0).to_vec(), vec![vec![0.0; ens.dim()]; ens.dim()]))
}

fn analytic_diagnostics(time: f64, mean: &[f64], cov: &Spd, ens: &ParticleEnsemble) -> Result<Diagnostics> {
    let model = GaussianMixture::gaussian(mean.to_vec(), cov.clone())?;
    let (pm, pc) = particle_moments(ens);
    Ok(Diagnostics {
        time,
        entropy: model.entropy(),
        renyi2: model.renyi_entropy(2.0)?,
        mean: pm,
        covariance: pc,
        model_covariance: Some(cov.to_rows()),
    })
}

fn empirical_diagnostics(time: f64, ens: &ParticleEnsemble) -> Diagnostics {
    let (pm, pc) = particle_moments(ens);
    let (entropy, renyi2) = kde_entropies(ens, &pc);
    Diagnostics {
        time,
        entropy,
        renyi2,
        mean: pm,
        covariance: pc,
        model_covariance: None,
    }
}

/// Leave-one-out Gaussian KDE estimates of the entropy and of the order-2
/// Renyi functional. The bandwidth matrix is the Silverman factor
/// `(4 / ((m + 2) n))^{2/(m + 4)}` times the sample covariance.
pub fn kde_entropies(ens: &ParticleEnsemble, sample_cov: &[Vec<f64>]) -> (Estimate, Estimate) {
    let n = ens.len();
    let m = ens.dim();
    let degenerate = (
        Estimate::exact(f64::NEG_INFINITY),
        Estimate::exact(f64::INFINITY),
    );
    if n < 3 {
        return degenerate;
    }
    let factor = (4.0 / ((m as f64 + 2.0) * n as f64)).powf(2.0 / (m as f64 + 4.0));
    let scaled: Vec<Vec<f64>> = sample_cov
        .iter()
        .map(|r| r.iter().map(|v| v * factor).collect())
        .collect();
    let Ok(bandwidth) = Spd::from_rows(&scaled) else {
        return degenerate;
    };
    let log_norm = -0.5 * (m as f64 * (2.0 * PI).ln() + bandwidth.log_det()) - ((n - 1) as f64).ln();
    let prec = bandwidth.inverse();
    let rows: Vec<&[f64]> = ens.rows().collect();
    let log_p: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = rows[i];
            let terms: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: Vec<f64> = xi.iter().zip(rows[j]).map(|(a, b)| a - b).collect();
                    -0.5 * crate::linalg::quad_form(prec, &d)
                })
                .collect();
            let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + log_norm
        })
        .collect();
    let summarize = |vals: Vec<f64>, offset: f64| {
        let nn = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / nn;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nn - 1.0);
        Estimate {
            value: mean + offset,
            std_error: (var / nn).sqrt(),
        }
    };
    let entropy = summarize(log_p.iter().map(|v| -v).collect(), 0.0);
    let renyi2 = summarize(log_p.iter().map(|v| v.exp()).collect(), -1.0);
    (entropy, renyi2)
}

fn single_gaussian(mix: &GaussianMixture) -> Result<(Vec<f64>, Spd)> {
    match mix.components() {
        [c] => Ok((c.mean().to_vec(), c.cov().clone())),
        _ => Err(Error::Domain(
            "analytic retraining needs a single-Gaussian data measure".into(),
        )),
    }
}

fn require_particles(ens: &ParticleEnsemble) -> Result<()> {
    if ens.len() < MIN_EMPIRICAL_PARTICLES {
        return Err(Error::Contract(format!(
            "empirical retraining needs at least {MIN_EMPIRICAL_PARTICLES} particles, got {}",
            ens.len()
        )));
    }
    Ok(())
}

/// Composition `Φ_L ∘ ... ∘ Φ_0`, each layer trained on the current measure.
pub fn compose(
    mix0: &GaussianMixture,
    schedule: &FlowSchedule,
    ensemble: &ParticleEnsemble,
    retrain: RetrainMode,
) -> Result<Trajectory> {
    let outcome = compose_until_singular(mix0, schedule, ensemble, retrain)?;
    match outcome.stopped {
        Some(e) => Err(e),
        None => Ok(outcome.trajectory),
    }
}

/// Like [`compose`] but returns the layers computed before the propagated
/// covariance (analytic mode) or the kernel weights (empirical mode)
/// degenerate.
pub fn compose_until_singular(
    mix0: &GaussianMixture,
    schedule: &FlowSchedule,
    ensemble: &ParticleEnsemble,
    retrain: RetrainMode,
) -> Result<FlowOutcome> {
    check_dim(mix0.dim(), ensemble.dim())?;
    let times = schedule.cumulative_times();
    match retrain {
        RetrainMode::Analytic => {
            let (mean, mut cov) = single_gaussian(mix0)?;
            let mut state = ensemble.clone();
            let mut traj = Trajectory::start(
                retrain,
                state.clone(),
                analytic_diagnostics(0.0, &mean, &cov, &state)?,
            );
            for (&tau, &t) in schedule.taus().iter().zip(&times) {
                let next_cov = match one_shot_covariance(&cov, tau) {
                    Ok(c) => c,
                    Err(Error::NotSpd(_)) => {
                        return Ok(FlowOutcome {
                            trajectory: traj,
                            stopped: Some(Error::Singularity { critical_time: t }),
                        })
                    }
                    Err(e) => return Err(e),
                };
                let layer = DaeMap::analytic_gaussian(mean.clone(), cov.clone(), NoiseVariance::new(tau)?)?;
                state = layer.apply_ensemble(&state)?;
                cov = next_cov;
                let diag = analytic_diagnostics(t, &mean, &cov, &state)?;
                traj.push(state.clone(), diag);
            }
            Ok(FlowOutcome {
                trajectory: traj,
                stopped: None,
            })
        }
        RetrainMode::Empirical => {
            require_particles(ensemble)?;
            let mut state = ensemble.clone();
            let mut traj = Trajectory::start(retrain, state.clone(), empirical_diagnostics(0.0, &state));
            for (&tau, &t) in schedule.taus().iter().zip(&times) {
                state = match empirical_step(&state, tau) {
                    Ok(s) => s,
                    Err(e @ Error::WeightUnderflow { .. }) => {
                        return Ok(FlowOutcome {
                            trajectory: traj,
                            stopped: Some(e),
                        })
                    }
                    Err(e) => return Err(e),
                };
                traj.push(state.clone(), empirical_diagnostics(t, &state));
            }
            Ok(FlowOutcome {
                trajectory: traj,
                stopped: None,
            })
        }
    }
}

/// One kernel-retrained layer. The Euler step `x + τ ∇log p̂_τ(x)` with the
/// bandwidth-`τ` kernel density `p̂_τ` of the particles is the same map.
fn empirical_step(state: &ParticleEnsemble, tau: f64) -> Result<ParticleEnsemble> {
    DaeMap::empirical_kernel(state.clone(), NoiseVariance::new(tau)?)?.apply_ensemble(state)
}

/// Outcome of a continuous flow that may stop at a singularity.
#[derive(Debug)]
pub struct FlowOutcome {
    pub trajectory: Trajectory,
    /// Set when the flow stopped early.
    pub stopped: Option<Error>,
}

/// Continuous DAE by explicit Euler with `steps` equal steps up to `t_end`.
///
/// Single Gaussians propagate their exact Euler-pushforward covariance and
/// use the closed-form score; mixtures use the kernel score of the current
/// particles with bandwidth variance equal to the step.
pub fn continuous_flow(
    mix0: &GaussianMixture,
    t_end: f64,
    steps: usize,
    ensemble: &ParticleEnsemble,
) -> Result<Trajectory> {
    if mix0.is_single_gaussian() {
        let lmin = mix0.min_eigenvalue();
        if !(t_end < lmin / 2.0) {
            return Err(Error::Singularity {
                critical_time: lmin / 2.0,
            });
        }
    }
    let outcome = continuous_flow_until_singular(mix0, t_end, steps, ensemble)?;
    match outcome.stopped {
        Some(e) => Err(e),
        None => Ok(outcome.trajectory),
    }
}

/// Like [`continuous_flow`] but returns the trajectory computed before a
/// singularity instead of failing.
pub fn continuous_flow_until_singular(
    mix0: &GaussianMixture,
    t_end: f64,
    steps: usize,
    ensemble: &ParticleEnsemble,
) -> Result<FlowOutcome> {
    check_dim(mix0.dim(), ensemble.dim())?;
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::Domain(format!("t_end must be finite and > 0, got {t_end}")));
    }
    let schedule = FlowSchedule::uniform(t_end, steps)?;
    let tau = schedule.taus()[0];
    let times = schedule.cumulative_times();
    if !mix0.is_single_gaussian() {
        require_particles(ensemble)?;
        let mut state = ensemble.clone();
        let mut traj =
            Trajectory::start(RetrainMode::Empirical, state.clone(), empirical_diagnostics(0.0, &state));
        for &t in &times {
            state = match empirical_step(&state, tau) {
                Ok(s) => s,
                Err(e) => {
                    return Ok(FlowOutcome {
                        trajectory: traj,
                        stopped: Some(e),
                    })
                }
            };
            traj.push(state.clone(), empirical_diagnostics(t, &state));
        }
        return Ok(FlowOutcome {
            trajectory: traj,
            stopped: None,
        });
    }

    let (mean, cov0) = single_gaussian(mix0)?;
    let critical_time = cov0.min_eigenvalue() / 2.0;
    let mut cov = cov0;
    let mut state = ensemble.clone();
    let mut traj = Trajectory::start(
        RetrainMode::Analytic,
        state.clone(),
        analytic_diagnostics(0.0, &mean, &cov, &state)?,
    );
    for &t in &times {
        // x ← x + τ∇log μ_t(x) is affine with gain I − τΣ⁻¹, so the
        // pushforward covariance has eigenvalues (λ − τ)²/λ.
        // the exact flow degenerates at λ_min/2 even where the Euler covariance has not
        if t >= critical_time - 1e-12 || cov.min_eigenvalue() - tau <= 0.0 {
            return Ok(FlowOutcome {
                trajectory: traj,
                stopped: Some(Error::Singularity { critical_time }),
            });
        }
        let current = GaussianMixture::gaussian(mean.clone(), cov.clone())?;
        let rows: Vec<&[f64]> = state.rows().collect();
        let next = rows
            .par_iter()
            .map(|x| {
                let s = current.score(x)?;
                Ok(x.iter().zip(s).map(|(xi, si)| xi + tau * si).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        let next_cov = cov.map_spectrum(|l| (l - tau) * (l - tau) / l);
        let next_cov = match next_cov {
            Ok(c) if c.min_eigenvalue() >= COVARIANCE_FLOOR => c,
            _ => {
                return Ok(FlowOutcome {
                    trajectory: traj,
                    stopped: Some(Error::Singularity { critical_time }),
                })
            }
        };
        cov = next_cov;
        state = ParticleEnsemble::new(state.dim(), next, state.seed())?;
        let diag = analytic_diagnostics(t, &mean, &cov, &state)?;
        traj.push(state.clone(), diag);
    }
    Ok(FlowOutcome {
        trajectory: traj,
        stopped: None,
    })
}

/// The one-shot family `s ↦ Φ_s(x0)` at increasing times `s`, each map
/// trained on `μ0` itself. Diagnostics are closed-form for a single Gaussian
/// and kernel estimates otherwise; `retrain` records which.
pub fn one_shot_family(mix0: &GaussianMixture, times: &[f64], ensemble: &ParticleEnsemble) -> Result<Trajectory> {
    check_dim(mix0.dim(), ensemble.dim())?;
    if times.is_empty() {
        return Err(Error::Contract("one-shot family needs at least one time".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Contract("one-shot times must be strictly increasing".into()));
    }
    let single = single_gaussian(mix0).ok();
    let diagnostics = |s: f64, state: &ParticleEnsemble| match &single {
        Some((mean, cov)) => analytic_diagnostics(s, mean, &one_shot_covariance(cov, s)?, state),
        None => Ok(empirical_diagnostics(s, state)),
    };
    let retrain = if single.is_some() {
        RetrainMode::Analytic
    } else {
        RetrainMode::Empirical
    };
    let mut traj: Option<Trajectory> = None;
    for &s in times {
        let state = DaeMap::mixture_exact(mix0, NoiseVariance::new(s)?).apply_ensemble(ensemble)?;
        let diag = diagnostics(s, &state)?;
        match traj.as_mut() {
            None => traj = Some(Trajectory::start(retrain, state, diag)),
            Some(tr) => tr.push(state, diag),
        }
    }
    Ok(traj.expect("times is non-empty"))
}

/// Regular lattice with `per_axis` points per coordinate on `[lo_i, hi_i]`.
pub fn lattice(lo: &[f64], hi: &[f64], per_axis: usize, seed: u64) -> Result<ParticleEnsemble> {
    check_dim(lo.len(), hi.len())?;
    if per_axis == 0 {
        return Err(Error::Contract("lattice needs at least one point per axis".into()));
    }
    let m = lo.len();
    let coord = |i: usize, k: usize| {
        if per_axis == 1 {
            0.5 * (lo[i] + hi[i])
        } else {
            lo[i] + (hi[i] - lo[i]) * k as f64 / (per_axis - 1) as f64
        }
    };
    let total = per_axis.pow(m as u32);
    let mut points = Vec::with_capacity(total * m);
    for idx in 0..total {
        let mut rem = idx;
        let mut p = vec![0.0; m];
        // first axis varies slowest
        for i in (0..m).rev() {
            p[i] = coord(i, rem % per_axis);
            rem /= per_axis;
        }
        points.extend(p);
    }
    ParticleEnsemble::new(m, points, seed)
}

/// Lattice over `mean ± 3σ` per axis followed by `samples` seeded draws from `mix`.
pub fn default_probes(
    mix: &GaussianMixture,
    per_axis: usize,
    samples: usize,
    seed: u64,
) -> Result<ParticleEnsemble> {
    let mean = mix.mean();
    let cov = mix.covariance();
    let sd: Vec<f64> = (0..mix.dim()).map(|i| cov[i][i].sqrt()).collect();
    let lo: Vec<f64> = mean.iter().zip(&sd).map(|(m, s)| m - 3.0 * s).collect();
    let hi: Vec<f64> = mean.iter().zip(&sd).map(|(m, s)| m + 3.0 * s).collect();
    let grid = lattice(&lo, &hi, per_axis, seed)?;
    if samples == 0 {
        return Ok(grid);
    }
    grid.concat(&mix.sample(samples, seed)?)
}
