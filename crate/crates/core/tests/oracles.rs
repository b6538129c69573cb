//! Cross-checks of closed forms against independent numerical oracles.

use dae_transport_core::transport::lattice;
use dae_transport_core::{
    compose, continuous_flow, empirical_moments, push_continuous, push_one_shot, Component, DaeMap,
    FlowSchedule, GaussianMixture, NoiseVariance, RetrainMode, Spd,
};

fn skewed() -> GaussianMixture {
    GaussianMixture::gaussian(vec![1.0, -0.5], Spd::from_rows(&[vec![1.5, 0.4], vec![0.4, 0.8]]).unwrap()).unwrap()
}

#[test]
fn one_shot_covariance_matches_particles() {
    let mix = skewed();
    let c = &mix.components()[0];
    let x0 = mix.sample(200_000, 1).unwrap();
    let pushed = DaeMap::mixture_exact(&mix, NoiseVariance::new(0.7).unwrap()).apply_ensemble(&x0).unwrap();
    let (mean, cov) = empirical_moments(&pushed).unwrap();
    let pf = push_one_shot(c.mean(), c.cov(), 0.7).unwrap();
    for i in 0..2 {
        assert!((mean[i] - c.mean()[i]).abs() < 1e-2);
        for j in 0..2 {
            assert!((cov[i][j] - pf.covariance[(i, j)]).abs() < 1e-2, "{i}{j}");
        }
    }
}

#[test]
fn dae_is_posterior_mean_by_quadrature() {
    // E[x | x + ε = y] for a 1-D two-component mixture by brute-force quadrature
    let one = Spd::identity(1);
    let mix = GaussianMixture::new(vec![
        Component::new(0.3, vec![-2.0], one.clone()).unwrap(),
        Component::new(0.7, vec![1.0], Spd::diagonal(&[0.5]).unwrap()).unwrap(),
    ])
    .unwrap();
    let t = 0.4;
    let map = DaeMap::mixture_exact(&mix, NoiseVariance::new(t).unwrap());
    for y in [-3.0, -1.0, 0.0, 0.5, 2.0] {
        let (mut num, mut den) = (0.0, 0.0);
        let h = 1e-3;
        for k in 0..20_000 {
            let x = -10.0 + h * k as f64;
            let w = mix.density(&[x]).unwrap() * (-(y - x) * (y - x) / (2.0 * t)).exp();
            num += x * w;
            den += w;
        }
        let g = map.apply(&[y]).unwrap()[0];
        assert!((g - num / den).abs() < 1e-8, "y={y}: {g} vs {}", num / den);
    }
}

#[test]
fn euler_flow_tracks_exact_continuous_pushforward() {
    let mix = GaussianMixture::diagonal(vec![0.0, 0.0], &[2.0, 1.0]).unwrap();
    let x0 = mix.sample(20_000, 3).unwrap();
    let traj = continuous_flow(&mix, 0.3, 300, &x0).unwrap();
    let (_, cov) = empirical_moments(traj.final_state()).unwrap();
    let exact = push_continuous(&[0.0, 0.0], &Spd::diagonal(&[2.0, 1.0]).unwrap(), 0.3).unwrap();
    for i in 0..2 {
        let rel = (cov[i][i] - exact.covariance[(i, i)]).abs() / exact.covariance[(i, i)];
        assert!(rel < 0.03, "axis {i}: {} vs {}", cov[i][i], exact.covariance[(i, i)]);
    }
}

#[test]
fn empirical_composition_concentrates_a_mixture() {
    let one = Spd::identity(1);
    let mix = GaussianMixture::new(vec![
        Component::new(0.5, vec![-2.0], one.clone()).unwrap(),
        Component::new(0.5, vec![2.0], one).unwrap(),
    ])
    .unwrap();
    let x0 = mix.sample(600, 5).unwrap();
    let traj = compose(&mix, &FlowSchedule::uniform(0.3, 6).unwrap(), &x0, RetrainMode::Empirical).unwrap();
    let spread = |k: usize| {
        let s = &traj.states[k];
        // mean distance to the nearer mode
        s.rows().map(|x| (x[0].abs() - 2.0).abs()).sum::<f64>() / s.len() as f64
    };
    assert!(spread(6) < spread(0));
    let h: Vec<f64> = traj.diagnostics.iter().map(|d| d.entropy.value).collect();
    assert!(h.last().unwrap() < &h[0]);
}

#[test]
fn lattice_layout() {
    let l = lattice(&[0.0, 10.0], &[1.0, 11.0], 2, 0).unwrap();
    let rows: Vec<&[f64]> = l.rows().collect();
    assert_eq!(rows, vec![&[0.0, 10.0][..], &[0.0, 11.0], &[1.0, 10.0], &[1.0, 11.0]]);
}
