//! Closed-form pushforwards of Gaussians under the continuous and one-shot
//! DAE, empirical moments, and the `(σ1, σ2, ...)` chart on diagonal
//! Gaussians in which W2 is Euclidean.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{matrix_rows, Spd};
use crate::measures::{GaussianMixture, ParticleEnsemble};

/// Off-diagonal tolerance for the diagonal chart.
pub const DIAGONAL_TOL: f64 = 1e-9;
/// Eigenvalues down to this negative value are reported as zero.
pub const PSD_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PushforwardSource {
    Continuous,
    OneShot,
    Composed,
}

impl PushforwardSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Continuous => "continuous",
            Self::OneShot => "one_shot",
            Self::Composed => "composed",
        }
    }
}

/// `N(mean, covariance)` reached at time `t`; the covariance may be singular
/// exactly at the critical time of the continuous flow.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPushforward {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub source: PushforwardSource,
    pub t: f64,
}

impl GaussianPushforward {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Ascending eigenvalues, with round-off negatives clipped to zero.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.covariance.clone());
        let mut v: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&l| if l < 0.0 && l >= -PSD_CLIP { 0.0 } else { l })
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Closed-form differential entropy; `-inf` on a singular covariance.
    pub fn entropy(&self) -> f64 {
        let m = self.dim() as f64;
        let log_det: f64 = self.eigenvalues().iter().map(|l| l.ln()).sum();
        0.5 * m * (2.0 * PI * E).ln() + 0.5 * log_det
    }

    pub fn covariance_rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.covariance)
    }

    pub fn to_mixture(&self) -> Result<GaussianMixture> {
        GaussianMixture::gaussian(self.mean.clone(), Spd::new(self.covariance.clone())?)
    }
}

/// Covariance of `Φ_t♯N(μ, Σ)`, i.e. `Σ(I + tΣ⁻¹)⁻²`, kept in spectral form.
pub fn one_shot_covariance(cov: &Spd, t: f64) -> Result<Spd> {
    if t == 0.0 {
        return Ok(cov.clone());
    }
    cov.map_spectrum(|l| {
        let g = 1.0 + t / l;
        l / (g * g)
    })
}

/// `φ_t♯N(μ0, Σ0) = N(μ0, Σ0 − 2tI)`.
///
/// Accepted up to and including the critical time `λ_min/2`, where the
/// covariance has a zero eigenvalue; later times are a singularity error.
pub fn push_continuous(mean: &[f64], cov: &Spd, t: f64) -> Result<GaussianPushforward> {
    check_dim(cov.dim(), mean.len())?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    let lmin = cov.min_eigenvalue();
    if 2.0 * t - lmin > PSD_CLIP * cov.max_eigenvalue().max(1.0) {
        return Err(Error::Singularity {
            critical_time: lmin / 2.0,
        });
    }
    let mut covariance = cov.matrix().clone();
    for i in 0..covariance.nrows() {
        covariance[(i, i)] -= 2.0 * t;
    }
    Ok(GaussianPushforward {
        mean: mean.to_vec(),
        covariance,
        source: PushforwardSource::Continuous,
        t,
    })
}

/// `Φ_t♯N(μ0, Σ0) = N(μ0, Σ0(I + tΣ0⁻¹)⁻²)`; positive definite for every finite `t`.
pub fn push_one_shot(mean: &[f64], cov: &Spd, t: f64) -> Result<GaussianPushforward> {
    check_dim(cov.dim(), mean.len())?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(GaussianPushforward {
        mean: mean.to_vec(),
        covariance: one_shot_covariance(cov, t)?.matrix().clone(),
        source: PushforwardSource::OneShot,
        t,
    })
}

/// Pushforwards of a composition of one-shot DAEs, each retrained on the
/// current Gaussian, recorded at `t = 0` and after every layer.
///
/// Retraining shrinks an eigenvalue `λ < τ` roughly like `λ³/τ²`, so long
/// schedules degenerate at working precision; that is reported as a
/// singularity at the layer where it happens.
pub fn push_composed(mean: &[f64], cov: &Spd, taus: &[f64]) -> Result<Vec<GaussianPushforward>> {
    let (out, stopped) = push_composed_until_singular(mean, cov, taus)?;
    match stopped {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Like [`push_composed`] but returns the layers computed before the
/// covariance degenerates, together with the singularity.
pub fn push_composed_until_singular(
    mean: &[f64],
    cov: &Spd,
    taus: &[f64],
) -> Result<(Vec<GaussianPushforward>, Option<Error>)> {
    check_dim(cov.dim(), mean.len())?;
    if let Some(tau) = taus.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(Error::Domain(format!("layer variance must be > 0, got {tau}")));
    }
    let mut current = cov.clone();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(taus.len() + 1);
    let record = |c: &Spd, t: f64| GaussianPushforward {
        mean: mean.to_vec(),
        covariance: c.matrix().clone(),
        source: PushforwardSource::Composed,
        t,
    };
    out.push(record(&current, t));
    for &tau in taus {
        match one_shot_covariance(&current, tau) {
            Ok(c) => current = c,
            Err(Error::NotSpd(_)) => {
                return Ok((out, Some(Error::Singularity { critical_time: t + tau })));
            }
            Err(e) => return Err(e),
        }
        t += tau;
        out.push(record(&current, t));
    }
    Ok((out, None))
}

/// Sample mean and unbiased sample covariance.
pub fn empirical_moments(ens: &ParticleEnsemble) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = ens.len();
    if n < 2 {
        return Err(Error::Contract(format!("moments need at least 2 particles, got {n}")));
    }
    let m = ens.dim();
    let mut mean = vec![0.0; m];
    for p in ens.rows() {
        for (acc, v) in mean.iter_mut().zip(p) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut cov = vec![vec![0.0; m]; m];
    for p in ens.rows() {
        for i in 0..m {
            let di = p[i] - mean[i];
            for j in i..m {
                cov[i][j] += di * (p[j] - mean[j]);
            }
        }
    }
    for i in 0..m {
        for j in i..m {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    Ok((mean, cov))
}

/// Per-axis standard deviations of a diagonal Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractPoint {
    pub sigma: Vec<f64>,
}

impl AbstractPoint {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Domain("sigma coordinates must be finite and >= 0".into()));
        }
        Ok(Self { sigma })
    }

    /// `Σ log σ_i`, the entropy up to an additive constant.
    pub fn log_volume(&self) -> f64 {
        self.sigma.iter().map(|s| s.ln()).sum()
    }
}

pub fn abstract_coordinates(pf: &GaussianPushforward) -> Result<AbstractPoint> {
    let c = &pf.covariance;
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            if i != j && c[(i, j)].abs() > DIAGONAL_TOL {
                return Err(Error::Domain(format!(
                    "abstract chart needs a diagonal covariance; entry ({i}, {j}) = {}",
                    c[(i, j)]
                )));
            }
        }
    }
    let sigma = (0..c.nrows())
        .map(|i| {
            let v = c[(i, i)];
            if v < 0.0 && v >= -PSD_CLIP {
                0.0
            } else {
                v.sqrt()
            }
        })
        .collect();
    AbstractPoint::new(sigma)
}

/// W2 between diagonal Gaussians with equal means: Euclidean in σ.
pub fn w2_distance(a: &AbstractPoint, b: &AbstractPoint) -> Result<f64> {
    check_dim(a.sigma.len(), b.sigma.len())?;
    Ok(a.sigma
        .iter()
        .zip(&b.sigma)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_composition_degenerates_as_singularity() {
        let cov = Spd::diagonal(&[2.0, 1.0]).unwrap();
        let taus = vec![0.05; 40];
        let (out, stopped) = push_composed_until_singular(&[0.0, 0.0], &cov, &taus).unwrap();
        let Some(Error::Singularity { critical_time }) = stopped else {
            panic!("expected a singularity");
        };
        // the small eigenvalue drops below working precision between t = 0.7 and 0.8
        assert!(critical_time > 0.7 && critical_time < 0.8, "{critical_time}");
        assert_eq!(out.len(), (critical_time / 0.05).round() as usize);
        assert!(matches!(push_composed(&[0.0, 0.0], &cov, &taus), Err(Error::Singularity { .. })));
    }
    use crate::rng::{domain, substream};
    use proptest::prelude::*;
    use rand::Rng;

    fn diag21() -> Spd {
        Spd::diagonal(&[2.0, 1.0]).unwrap()
    }

    fn diag_of(pf: &GaussianPushforward) -> Vec<f64> {
        (0..pf.dim()).map(|i| pf.covariance[(i, i)]).collect()
    }

    #[test]
    fn continuous_examples() {
        let pf = push_continuous(&[0.0, 0.0], &diag21(), 0.25).unwrap();
        assert_eq!(diag_of(&pf), vec![1.5, 0.5]);
        assert_eq!(pf.covariance[(0, 1)], 0.0);
        let pf0 = push_continuous(&[0.0, 0.0], &diag21(), 0.0).unwrap();
        assert_eq!(&pf0.covariance, diag21().matrix());
        let edge = push_continuous(&[0.0, 0.0], &diag21(), 0.5).unwrap();
        assert_eq!(diag_of(&edge), vec![1.0, 0.0]);
        assert_eq!(edge.eigenvalues()[0], 0.0);
        assert_eq!(edge.entropy(), f64::NEG_INFINITY);
        match push_continuous(&[0.0, 0.0], &diag21(), 0.5 + 1e-9) {
            Err(Error::Singularity { critical_time }) => assert_eq!(critical_time, 0.5),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn one_shot_examples() {
        let one = Spd::diagonal(&[1.0]).unwrap();
        let v1 = push_one_shot(&[0.0], &one, 1.0).unwrap().covariance[(0, 0)];
        assert!((v1 - 0.25).abs() < 1e-15);
        let v0 = push_one_shot(&[0.0], &one, 0.0).unwrap().covariance[(0, 0)];
        assert_eq!(v0, 1.0);
        let vh = push_one_shot(&[0.0], &one, 0.5).unwrap().covariance[(0, 0)];
        assert!((vh - 1.0 / 2.25).abs() < 1e-15);
        assert!((vh - 0.4444).abs() < 1e-4);
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let v = push_one_shot(&[0.0], &one, 0.05 * k as f64).unwrap().covariance[(0, 0)];
            assert!(v < prev && v > 0.0);
            prev = v;
        }
    }

    #[test]
    fn one_shot_never_singular() {
        let cov = Spd::from_rows(&[vec![2.0, 0.6], vec![0.6, 1.0]]).unwrap();
        for t in [1e-3, 1.0, 10.0, 100.0, 1e3] {
            let pf = push_one_shot(&[0.0, 0.0], &cov, t).unwrap();
            assert!(pf.eigenvalues()[0] > 0.0);
            assert!(pf.to_mixture().is_ok());
        }
    }

    #[test]
    fn first_order_agreement_near_zero() {
        let sigma2 = 1.3;
        let cov = Spd::diagonal(&[sigma2]).unwrap();
        for t in [1e-3f64, 1e-4] {
            let a = push_one_shot(&[0.0], &cov, t).unwrap().covariance[(0, 0)];
            let b = push_continuous(&[0.0], &cov, t).unwrap().covariance[(0, 0)];
            // both equal σ² − 2t + O(t²)
            assert!((a - b).abs() < 10.0 * t * t / sigma2, "t={t}: {a} vs {b}");
            assert!((a - (sigma2 - 2.0 * t)).abs() < 10.0 * t * t / sigma2);
        }
    }

    #[test]
    fn continuous_entropy_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let h = push_continuous(&[0.0, 0.0], &diag21(), 0.0099 * k as f64)
                .unwrap()
                .entropy();
            assert!(h < prev);
            prev = h;
        }
    }

    #[test]
    fn sigma_follows_entropy_gradient() {
        // σ_i(t) = √(σ_i(0)² − 2t) has dσ_i/dt = −1/σ_i
        let h = 1e-4;
        for t in [0.05, 0.1, 0.15, 0.3] {
            let at = |s: f64| {
                abstract_coordinates(&push_continuous(&[0.0, 0.0], &diag21(), s).unwrap()).unwrap()
            };
            let (p, q, c) = (at(t + h), at(t - h), at(t));
            for i in 0..2 {
                let d = (p.sigma[i] - q.sigma[i]) / (2.0 * h);
                let expected = -1.0 / c.sigma[i];
                assert!(((d - expected) / expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn moments_examples() {
        let e = ParticleEnsemble::from_rows(&[vec![0.0], vec![2.0]], 0).unwrap();
        let (m, c) = empirical_moments(&e).unwrap();
        assert_eq!(m, vec![1.0]);
        assert_eq!(c, vec![vec![2.0]]);
        let same = ParticleEnsemble::from_rows(&vec![vec![1.0, 2.0]; 5], 0).unwrap();
        let (_, c) = empirical_moments(&same).unwrap();
        assert_eq!(c, vec![vec![0.0; 2]; 2]);
        let single = ParticleEnsemble::from_rows(&[vec![1.0]], 0).unwrap();
        assert!(matches!(empirical_moments(&single), Err(Error::Contract(_))));
    }

    #[test]
    fn abstract_examples() {
        let pf = |cov: Spd, t: f64, cont: bool| {
            if cont {
                push_continuous(&[0.0, 0.0], &cov, t).unwrap()
            } else {
                push_one_shot(&[0.0, 0.0], &cov, t).unwrap()
            }
        };
        let a = abstract_coordinates(&pf(diag21(), 0.0, true)).unwrap();
        assert_eq!(a.sigma, vec![2f64.sqrt(), 1.0]);
        let b = abstract_coordinates(&pf(diag21(), 0.25, true)).unwrap();
        assert_eq!(b.sigma, vec![1.5f64.sqrt(), 0.5f64.sqrt()]);
        let c = abstract_coordinates(&pf(Spd::identity(2), 1.0, false)).unwrap();
        assert!((c.sigma[0] - 0.5).abs() < 1e-15 && (c.sigma[1] - 0.5).abs() < 1e-15);
        let tilted = Spd::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        assert!(matches!(
            abstract_coordinates(&pf(tilted, 0.0, true)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn w2_examples() {
        let p = |v: Vec<f64>| AbstractPoint::new(v).unwrap();
        assert_eq!(w2_distance(&p(vec![1.0, 1.0]), &p(vec![1.0, 1.0])).unwrap(), 0.0);
        let d = w2_distance(&p(vec![2f64.sqrt(), 1.0]), &p(vec![1.0, 1.0])).unwrap();
        assert!((d - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((d - 0.41421).abs() < 1e-5);
        assert!(w2_distance(&p(vec![1.0]), &p(vec![1.0, 1.0])).is_err());
        assert!(AbstractPoint::new(vec![-0.1]).is_err());
    }

    #[test]
    fn w2_triangle_inequality_on_seeded_triples() {
        for i in 0..100 {
            let mut rng = substream(23, domain::PROBE, i);
            let mut draw = || AbstractPoint::new((0..2).map(|_| rng.gen::<f64>() * 3.0).collect()).unwrap();
            let (a, b, c) = (draw(), draw(), draw());
            let ab = w2_distance(&a, &b).unwrap();
            let bc = w2_distance(&b, &c).unwrap();
            let ac = w2_distance(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-15);
        }
    }

    #[test]
    fn composed_single_layer_is_one_shot() {
        let c = push_composed(&[0.0, 0.0], &diag21(), &[0.3]).unwrap();
        let o = push_one_shot(&[0.0, 0.0], &diag21(), 0.3).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].covariance, o.covariance);
        assert!(push_composed(&[0.0, 0.0], &diag21(), &[0.1, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn one_shot_spectrum_positive_and_decreasing(s in 0.05f64..5.0, t in 0.0f64..50.0, dt in 1e-3f64..5.0) {
            let cov = Spd::diagonal(&[s, 2.0 * s]).unwrap();
            let a = push_one_shot(&[0.0, 0.0], &cov, t).unwrap().eigenvalues();
            let b = push_one_shot(&[0.0, 0.0], &cov, t + dt).unwrap().eigenvalues();
            prop_assert!(b[0] > 0.0);
            prop_assert!(b[0] < a[0] && b[1] < a[1]);
        }
    }
}
