//! Gaussian-mixture measures with exact densities, scores and Laplacians,
//! heat smoothing, entropies and seeded sampling.

use std::f64::consts::{E, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{mat_vec, norm_sq, Spd};
use crate::rng::{domain, substream};

/// Tolerance on the total mixture weight.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Default sample count for Monte Carlo estimators.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

/// Noise variance `t ≥ 0`; the same number is the transport time.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct NoiseVariance(f64);

impl NoiseVariance {
    pub fn new(t: f64) -> Result<Self> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Domain(format!("noise variance must be finite and >= 0, got {t}")));
        }
        Ok(Self(t))
    }

    pub fn zero() -> Self {
        Self(0.0)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// A Monte Carlo or closed-form value with its standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: 0.0 }
    }

    pub fn is_exact(&self) -> bool {
        self.std_error == 0.0
    }

    fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            value: mean,
            std_error: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McSettings {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            samples: DEFAULT_MC_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Component {
    weight: f64,
    mean: Vec<f64>,
    cov: Spd,
    log_norm: f64,
}

impl Component {
    pub fn new(weight: f64, mean: Vec<f64>, cov: Spd) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMixture("non-finite mean".into()));
        }
        let log_norm = -0.5 * (mean.len() as f64 * (2.0 * PI).ln() + cov.log_det());
        Ok(Self {
            weight,
            mean,
            cov,
            log_norm,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Spd {
        &self.cov
    }

    fn offset(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).map(|(a, b)| a - b).collect()
    }

    /// log(w N(x; μ, Σ)) together with the whitened offset Σ⁻¹(x − μ).
    fn log_weighted_density(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.offset(x);
        let pd = mat_vec(self.cov.inverse(), &d);
        let q: f64 = d.iter().zip(&pd).map(|(a, b)| a * b).sum();
        (self.weight.ln() + self.log_norm - 0.5 * q, pd)
    }
}

/// Weighted mixture of full-rank Gaussians in `R^dim`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidMixture("at least one component required".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::InvalidMixture("dimension must be positive".into()));
        }
        for c in &components {
            check_dim(dim, c.mean.len())?;
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::InvalidMixture(format!("weight {} is not positive", c.weight)));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMixture(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { dim, components })
    }

    pub fn gaussian(mean: Vec<f64>, cov: Spd) -> Result<Self> {
        Self::new(vec![Component::new(1.0, mean, cov)?])
    }

    /// `N(mean, diag(variances))`.
    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        Self::gaussian(mean, Spd::diagonal(variances)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn is_single_gaussian(&self) -> bool {
        self.components.len() == 1
    }

    /// Mixture mean `Σ w_i μ_i`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            for (acc, v) in m.iter_mut().zip(&c.mean) {
                *acc += c.weight * v;
            }
        }
        m
    }

    /// Mixture covariance `Σ w_i (Σ_i + μ_i μ_iᵀ) − m mᵀ`.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let m = self.mean();
        let mut out = vec![vec![0.0; self.dim]; self.dim];
        for c in &self.components {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    out[i][j] += c.weight * (c.cov.matrix()[(i, j)] + c.mean[i] * c.mean[j]);
                }
            }
        }
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i][j] -= m[i] * m[j];
            }
        }
        out
    }

    /// Smallest covariance eigenvalue over all components.
    pub fn min_eigenvalue(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.cov.min_eigenvalue())
            .fold(f64::INFINITY, f64::min)
    }

    /// Per-component log terms and whitened offsets, with the log-sum-exp.
    fn log_terms(&self, x: &[f64]) -> (f64, Vec<(f64, Vec<f64>)>) {
        let terms: Vec<(f64, Vec<f64>)> =
            self.components.iter().map(|c| c.log_weighted_density(x)).collect();
        let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t.0 - max).exp()).sum();
        (max + sum.ln(), terms)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.log_terms(x).0)
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// `∇ log μ(x)` as the responsibility-weighted sum of `−Σ_i⁻¹(x − μ_i)`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let (lse, terms) = self.log_terms(x);
        let mut s = vec![0.0; self.dim];
        for (log_w, pd) in &terms {
            let r = (log_w - lse).exp();
            for (acc, v) in s.iter_mut().zip(pd) {
                *acc -= r * v;
            }
        }
        Ok(s)
    }

    /// `∇μ(x) = μ(x) ∇log μ(x)`.
    pub fn density_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.density(x)?;
        Ok(self.score(x)?.into_iter().map(|s| p * s).collect())
    }

    /// `Δμ(x) = Σ_i w_i N_i(x) (|Σ_i⁻¹(x − μ_i)|² − tr Σ_i⁻¹)`.
    pub fn laplacian_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let (lse, terms) = self.log_terms(x);
        let mut acc = 0.0;
        for (c, (log_w, pd)) in self.components.iter().zip(&terms) {
            let r = (log_w - lse).exp();
            acc += r * (norm_sq(pd) - c.cov.inverse().trace());
        }
        Ok(lse.exp() * acc)
    }

    /// Convolution with `N(0, tI)`: every covariance becomes `Σ_i + tI`.
    pub fn smooth(&self, t: NoiseVariance) -> GaussianMixture {
        if t.get() == 0.0 {
            return self.clone();
        }
        self.shift_covariance(t.get())
            .expect("adding a nonnegative multiple of I preserves SPD")
    }

    /// Adds `delta I` to every covariance. Positive `delta` is heat smoothing;
    /// negative `delta` gives the backward-heat solution and fails once a
    /// covariance loses positive definiteness.
    pub fn shift_covariance(&self, delta: f64) -> Result<GaussianMixture> {
        let components = self
            .components
            .iter()
            .map(|c| Component::new(c.weight, c.mean.clone(), c.cov.add_identity(delta)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianMixture {
            dim: self.dim,
            components,
        })
    }

    /// Convolution with `N(0, kernel)` for a general covariance.
    pub fn convolve(&self, kernel: &Spd) -> Result<GaussianMixture> {
        check_dim(self.dim, kernel.dim())?;
        let components = self
            .components
            .iter()
            .map(|c| {
                Component::new(
                    c.weight,
                    c.mean.clone(),
                    Spd::new(c.cov.matrix() + kernel.matrix())?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianMixture {
            dim: self.dim,
            components,
        })
    }

    /// Differential entropy `−∫μ log μ`: closed form for one component,
    /// Monte Carlo with the default settings otherwise.
    pub fn entropy(&self) -> Estimate {
        self.entropy_with(McSettings::default())
    }

    pub fn entropy_with(&self, mc: McSettings) -> Estimate {
        if let [c] = self.components.as_slice() {
            let m = self.dim as f64;
            return Estimate::exact(0.5 * m * (2.0 * PI * E).ln() + 0.5 * c.cov.log_det());
        }
        let values = self.mc_values(mc, |x| -self.log_terms(x).0);
        Estimate::from_samples(&values)
    }

    /// Renyi entropy functional `∫(μ^α − μ)/(α − 1)`.
    pub fn renyi_entropy(&self, alpha: f64) -> Result<Estimate> {
        self.renyi_entropy_with(alpha, McSettings::default())
    }

    pub fn renyi_entropy_with(&self, alpha: f64, mc: McSettings) -> Result<Estimate> {
        if !(alpha > 0.0) || alpha == 1.0 || !alpha.is_finite() {
            return Err(Error::Domain(format!(
                "renyi order must be positive and != 1 (got {alpha}); use entropy() for the alpha -> 1 limit"
            )));
        }
        if let [c] = self.components.as_slice() {
            // ∫N^α = α^{-m/2} (2π)^{m(1-α)/2} |Σ|^{(1-α)/2}
            let m = self.dim as f64;
            let log_integral = -0.5 * m * alpha.ln()
                + 0.5 * m * (1.0 - alpha) * (2.0 * PI).ln()
                + 0.5 * (1.0 - alpha) * c.cov.log_det();
            return Ok(Estimate::exact((log_integral.exp() - 1.0) / (alpha - 1.0)));
        }
        // ∫μ^α = E_μ[μ^{α−1}]
        let values = self.mc_values(mc, |x| {
            ((alpha - 1.0) * self.log_terms(x).0).exp() / (alpha - 1.0)
        });
        let est = Estimate::from_samples(&values);
        Ok(Estimate {
            value: est.value - 1.0 / (alpha - 1.0),
            std_error: est.std_error,
        })
    }

    fn mc_values(&self, mc: McSettings, f: impl Fn(&[f64]) -> f64 + Sync) -> Vec<f64> {
        let samples = self
            .sample(mc.samples.max(2), mc.seed)
            .expect("sample count is positive");
        samples.rows().collect::<Vec<_>>().par_iter().map(|x| f(x)).collect()
    }

    /// `n` independent draws; draw `i` uses its own random stream.
    pub fn sample(&self, n: usize, seed: u64) -> Result<ParticleEnsemble> {
        if n == 0 {
            return Err(Error::Contract("sample count must be at least 1".into()));
        }
        let factors: Vec<_> = self.components.iter().map(|c| c.cov.sqrt_factor()).collect();
        let cumulative: Vec<f64> = self
            .components
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight;
                Some(*acc)
            })
            .collect();
        let dim = self.dim;
        let points: Vec<f64> = (0..n as u64)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut rng = substream(seed, domain::SAMPLE, i);
                let u: f64 = rng.gen::<f64>() * cumulative[cumulative.len() - 1];
                let k = cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(cumulative.len() - 1);
                let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let c = &self.components[k];
                let lz = mat_vec(&factors[k], &z);
                c.mean.iter().zip(lz).map(|(m, v)| m + v).collect::<Vec<_>>()
            })
            .collect();
        ParticleEnsemble::new(dim, points, seed)
    }

    pub fn to_spec(&self) -> MixtureSpec {
        MixtureSpec {
            dim: self.dim,
            components: self
                .components
                .iter()
                .map(|c| ComponentSpec {
                    weight: c.weight,
                    mean: c.mean.clone(),
                    cov: c.cov.to_rows(),
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<MixtureSpec>(text)?.build()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_spec())?)
    }
}

/// JSON document form: `{"dim": m, "components": [{"weight", "mean", "cov"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub dim: usize,
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl MixtureSpec {
    pub fn build(&self) -> Result<GaussianMixture> {
        let components = self
            .components
            .iter()
            .map(|c| {
                check_dim(self.dim, c.mean.len())?;
                check_dim(self.dim, c.cov.len())?;
                Component::new(c.weight, c.mean.clone(), Spd::from_rows(&c.cov)?)
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(components)
    }
}

/// `n` points in `R^dim` stored row-major, with the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    points: Vec<f64>,
    seed: u64,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, points: Vec<f64>, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Contract("ensemble dimension must be positive".into()));
        }
        if points.is_empty() || points.len() % dim != 0 {
            return Err(Error::Contract(format!(
                "ensemble needs a positive multiple of {dim} coordinates, got {}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("ensemble contains non-finite coordinates".into()));
        }
        Ok(Self { dim, points, seed })
    }

    pub fn from_rows(rows: &[Vec<f64>], seed: u64) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        for r in rows {
            check_dim(dim, r.len())?;
        }
        Self::new(dim, rows.concat(), seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    /// Concatenates two ensembles of equal dimension, keeping this seed.
    pub fn concat(&self, other: &ParticleEnsemble) -> Result<ParticleEnsemble> {
        check_dim(self.dim, other.dim)?;
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        Self::new(self.dim, points, self.seed)
    }
}

/// `−t∇ν_t(ε) − ε ν_t(ε)` for `ν_t = N(0, tI)`, with `∇ν_t` evaluated analytically.
pub fn stein_residual(t: NoiseVariance, eps: &[f64]) -> Result<Vec<f64>> {
    let t = t.get();
    if t <= 0.0 {
        return Err(Error::Domain("Stein residual needs t > 0".into()));
    }
    let m = eps.len() as f64;
    let nu = (-norm_sq(eps) / (2.0 * t) - 0.5 * m * (2.0 * PI * t).ln()).exp();
    Ok(eps
        .iter()
        .map(|&e| {
            let grad = -(e / t) * nu;
            -t * grad - e * nu
        })
        .collect())
}
