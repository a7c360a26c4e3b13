//! Pilot observation statistics and channel estimators.
//!
//! All cells reuse the same `K` orthogonal pilots, so the despread observation
//! `z_lk` at BS `l` superimposes the channels of every user holding pilot `k`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{self, CMat, CVec, HermitianSolver, C64};
use crate::scenario::{ChannelRealization, ChannelStatistics, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "LMMSE")]
    Lmmse,
    #[serde(rename = "EW_LMMSE")]
    EwLmmse,
    #[serde(rename = "LS")]
    Ls,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Lmmse => "LMMSE",
            EstimatorKind::EwLmmse => "EW_LMMSE",
            EstimatorKind::Ls => "LS",
        })
    }
}

/// `Ψ_lk = τ_p η Σ_r R̄_rk^l + σ² I`: covariance of the observation of pilot
/// `k` at BS `l`.
pub fn psi_matrix(k: usize, l: usize, stats: &ChannelStatistics, config: &ScenarioConfig) -> CMat {
    let m = stats.antennas();
    let gain = config.tau_p as f64 * config.eta;
    let mut psi = CMat::from_diagonal_element(m, m, C64::new(config.sigma2, 0.0));
    for r in 0..stats.num_cells() {
        psi += stats.link(r, k, l).rbar.scale(gain);
    }
    psi
}

/// Per-(BS, pilot) observation statistics with cached factorizations.
#[derive(Debug, Clone)]
pub struct PilotStatistics {
    num_cells: usize,
    users_per_cell: usize,
    psi: Vec<CMat>,
    lambda: Vec<Vec<f64>>,
    dbar: Vec<Vec<f64>>,
    solvers: Vec<HermitianSolver>,
}

impl PilotStatistics {
    pub fn compute(stats: &ChannelStatistics, config: &ScenarioConfig) -> Result<Self> {
        let (nl, nk) = (stats.num_cells(), stats.users_per_cell());
        let mut psi = Vec::with_capacity(nl * nk);
        let mut lambda = Vec::with_capacity(nl * nk);
        let mut dbar = Vec::with_capacity(nl * nk);
        let mut solvers = Vec::with_capacity(nl * nk);
        for l in 0..nl {
            for k in 0..nk {
                let p = psi_matrix(k, l, stats, config);
                lambda.push(p.diagonal().iter().map(|x| x.re).collect());
                dbar.push(stats.link(l, k, l).rbar.diagonal().iter().map(|x| x.re).collect());
                solvers.push(HermitianSolver::new(&p)?);
                psi.push(p);
            }
        }
        Ok(Self {
            num_cells: nl,
            users_per_cell: nk,
            psi,
            lambda,
            dbar,
            solvers,
        })
    }

    fn idx(&self, l: usize, k: usize) -> usize {
        debug_assert!(l < self.num_cells && k < self.users_per_cell);
        l * self.users_per_cell + k
    }

    pub fn psi(&self, l: usize, k: usize) -> &CMat {
        &self.psi[self.idx(l, k)]
    }

    /// Diagonal of `Ψ_lk`.
    pub fn lambda(&self, l: usize, k: usize) -> &[f64] {
        &self.lambda[self.idx(l, k)]
    }

    /// Diagonal of `R̄_lk^l`.
    pub fn dbar(&self, l: usize, k: usize) -> &[f64] {
        &self.dbar[self.idx(l, k)]
    }

    pub fn solver(&self, l: usize, k: usize) -> &HermitianSolver {
        &self.solvers[self.idx(l, k)]
    }
}

/// Despread pilot observation `z_lk = sqrt(τ_p η) Σ_r g_rk^l + n`.
pub fn pilot_observation<R: Rng + ?Sized>(
    realization: &ChannelRealization,
    l: usize,
    k: usize,
    config: &ScenarioConfig,
    rng: &mut R,
) -> CVec {
    let scale = (config.tau_p as f64 * config.eta).sqrt();
    let mut z = linalg::complex_normal_vec(rng, config.antennas).scale(config.sigma2.sqrt());
    for r in 0..config.num_cells {
        z.axpy(C64::new(scale, 0.0), realization.g(r, k, l), C64::new(1.0, 0.0));
    }
    z
}

/// Linear map `W` with `ĝ = W z` for the chosen estimator at (BS l, pilot k).
pub fn estimator_matrix(
    kind: EstimatorKind,
    l: usize,
    k: usize,
    pilot: &PilotStatistics,
    stats: &ChannelStatistics,
    config: &ScenarioConfig,
) -> CMat {
    let m = stats.antennas();
    let scale = (config.tau_p as f64 * config.eta).sqrt();
    match kind {
        // sqrt(τη) R̄ Ψ^{-1} = sqrt(τη) (Ψ^{-1} R̄)^H
        EstimatorKind::Lmmse => {
            let rbar = &stats.link(l, k, l).rbar;
            pilot.solver(l, k).solve_mat(rbar).adjoint().scale(scale)
        }
        EstimatorKind::EwLmmse => {
            let d = pilot.dbar(l, k);
            let lam = pilot.lambda(l, k);
            CMat::from_fn(m, m, |i, j| {
                if i == j {
                    C64::new(scale * d[i] / lam[i], 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            })
        }
        EstimatorKind::Ls => CMat::identity(m, m),
    }
}

#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    pub kind: EstimatorKind,
    pub ghat: CVec,
    /// `E{ĝ ĝ^H}`.
    pub est_cov: CMat,
    /// `E{(g - ĝ)(g - ĝ)^H}`.
    pub err_cov: CMat,
}

/// Estimate the channel of user `k` in cell `l` at its own BS from `z_lk`.
///
/// LS returns `z` itself (the scaling is absorbed by the second precoding
/// layer).
pub fn channel_estimate(
    kind: EstimatorKind,
    z: &CVec,
    l: usize,
    k: usize,
    pilot: &PilotStatistics,
    stats: &ChannelStatistics,
    config: &ScenarioConfig,
) -> Result<ChannelEstimate> {
    let w = estimator_matrix(kind, l, k, pilot, stats, config);
    let ghat = &w * z;
    let rbar = &stats.link(l, k, l).rbar;
    let scale = (config.tau_p as f64 * config.eta).sqrt();
    let est_cov = &w * pilot.psi(l, k) * w.adjoint();
    let err_cov = match kind {
        // R̄ - τη R̄ Ψ^{-1} R̄
        EstimatorKind::Lmmse => rbar - &est_cov,
        _ => {
            let cross = (&w * rbar).scale(scale);
            rbar - &cross - cross.adjoint() + &est_cov
        }
    };
    Ok(ChannelEstimate {
        kind,
        ghat,
        est_cov: linalg::hermitian_part(&est_cov),
        err_cov: linalg::hermitian_part(&err_cov),
    })
}

/// Precomputed estimator matrices for every (BS, pilot), used when the same
/// statistics are applied to many realizations.
#[derive(Debug, Clone)]
pub struct EstimatorBank {
    users_per_cell: usize,
    matrices: Vec<Option<CMat>>,
}

impl EstimatorBank {
    pub fn new(
        kind: EstimatorKind,
        pilot: &PilotStatistics,
        stats: &ChannelStatistics,
        config: &ScenarioConfig,
    ) -> Self {
        let mut matrices = Vec::new();
        for l in 0..stats.num_cells() {
            for k in 0..stats.users_per_cell() {
                matrices.push(match kind {
                    EstimatorKind::Ls => None,
                    _ => Some(estimator_matrix(kind, l, k, pilot, stats, config)),
                });
            }
        }
        Self {
            users_per_cell: stats.users_per_cell(),
            matrices,
        }
    }

    pub fn apply(&self, l: usize, k: usize, z: &CVec) -> CVec {
        match &self.matrices[l * self.users_per_cell + k] {
            Some(w) => w * z,
            None => z.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::is_psd;
    use crate::scenario::{
        generate_network_seeded, local_scattering_covariance, sample_channels, steering_vector,
        LinkStats,
    };
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_stats(nl: usize, m: usize, gains: &[f64]) -> ChannelStatistics {
        // one user per cell, R = gain I, no LOS
        let mut links = Vec::new();
        for l in 0..nl {
            for _r in 0..nl {
                let g = gains[l];
                links.push(LinkStats::new(
                    CVec::zeros(m),
                    CMat::from_diagonal_element(m, m, C64::new(g, 0.0)),
                ));
            }
        }
        ChannelStatistics::from_links(nl, 1, m, links).unwrap()
    }

    fn cfg(nl: usize, k: usize, m: usize, sigma2: f64) -> ScenarioConfig {
        ScenarioConfig {
            num_cells: nl,
            users_per_cell: k,
            antennas: m,
            tau_p: k,
            sigma2,
            bs_positions: Some(vec![[0.0, 0.0]; nl]),
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn psi_single_cell_identity() {
        let c = cfg(1, 1, 3, 0.2);
        let stats = identity_stats(1, 3, &[1.0]);
        let psi = psi_matrix(0, 0, &stats, &c);
        let expect = CMat::from_diagonal_element(3, 3, C64::new(0.1 + 0.2, 0.0));
        assert!((psi - expect).norm() < 1e-15);
    }

    #[test]
    fn psi_scalar_sum() {
        let c = cfg(2, 1, 1, 0.5);
        let stats = identity_stats(2, 1, &[1.0, 3.0]);
        let psi = psi_matrix(0, 0, &stats, &c);
        assert!((psi[(0, 0)].re - (0.1 * 4.0 + 0.5)).abs() < 1e-15);
    }

    fn small_network() -> (ScenarioConfig, ChannelStatistics) {
        let c = ScenarioConfig {
            seed: 4,
            ..ScenarioConfig::small(2, 2, 4)
        };
        let s = generate_network_seeded(&c).unwrap();
        (c, s)
    }

    #[test]
    fn psi_minus_noise_is_psd() {
        let (c, s) = small_network();
        for l in 0..2 {
            for k in 0..2 {
                let p = psi_matrix(k, l, &s, &c);
                let d = &p - CMat::from_diagonal_element(4, 4, C64::new(c.sigma2, 0.0));
                assert!(is_psd(&d, 1e-10));
                let lam = PilotStatistics::compute(&s, &c).unwrap();
                assert!(lam.lambda(l, k).iter().all(|&x| x >= c.sigma2));
            }
        }
    }

    #[test]
    fn noiseless_single_cell_observation() {
        let c = cfg(1, 1, 4, 0.0);
        let gbar = steering_vector(4, 0.2, 0.0, 1.0);
        let link = LinkStats::new(gbar, local_scattering_covariance(4, 0.2, 0.1, 1.0));
        let s = ChannelStatistics::from_links(1, 1, 4, vec![link]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real = sample_channels(&s, &mut rng).unwrap();
        let z = pilot_observation(&real, 0, 0, &c, &mut rng);
        let expect = real.g(0, 0, 0).scale((0.1f64).sqrt());
        assert!((z - expect).norm() < 1e-15);
    }

    #[test]
    fn other_pilots_never_enter_observation() {
        let (mut c, s) = small_network();
        c.sigma2 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut real = sample_channels(&s, &mut rng).unwrap();
        let z0 = pilot_observation(&real, 0, 0, &c, &mut ChaCha8Rng::seed_from_u64(5));
        // perturb every pilot-1 channel
        for l in 0..2 {
            for r in 0..2 {
                let idx = (l * 2 + 1) * 2 + r;
                real.g[idx] = real.g[idx].scale(7.0);
            }
        }
        let z1 = pilot_observation(&real, 0, 0, &c, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(z0, z1);
    }

    #[test]
    fn noiseless_lmmse_inverts_scaling() {
        let m = 3;
        let gbar = steering_vector(m, 0.5, 0.0, 0.7);
        let r = local_scattering_covariance(m, 0.5, 0.4, 1.3);
        let s = ChannelStatistics::from_links(1, 1, m, vec![LinkStats::new(gbar, r)]).unwrap();
        let c = cfg(1, 1, m, 1e-13);
        let pilot = PilotStatistics::compute(&s, &c).unwrap();
        let z = CVec::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.1), C64::new(0.3, -1.0)]);
        let est = channel_estimate(EstimatorKind::Lmmse, &z, 0, 0, &pilot, &s, &c).unwrap();
        let expect = z.unscale((0.1f64).sqrt());
        assert!((est.ghat - &expect).norm() < 1e-9 * expect.norm());
    }

    #[test]
    fn diagonal_statistics_make_ew_lmmse_equal_lmmse() {
        let m = 4;
        let mut links = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..4 {
            let d = CVec::from_fn(m, |_, _| C64::new(rand::Rng::gen_range(&mut rng, 0.1..2.0), 0.0));
            links.push(LinkStats::new(CVec::zeros(m), CMat::from_diagonal(&d)));
        }
        let s = ChannelStatistics::from_links(2, 1, m, links).unwrap();
        let c = cfg(2, 1, m, 0.3);
        let pilot = PilotStatistics::compute(&s, &c).unwrap();
        let z = linalg::complex_normal_vec(&mut rng, m);
        for l in 0..2 {
            let a = channel_estimate(EstimatorKind::Lmmse, &z, l, 0, &pilot, &s, &c).unwrap();
            let b = channel_estimate(EstimatorKind::EwLmmse, &z, l, 0, &pilot, &s, &c).unwrap();
            assert!((a.ghat - b.ghat).norm() < 1e-10);
        }
    }

    #[test]
    fn lmmse_covariances_split_rbar() {
        let (c, s) = small_network();
        let pilot = PilotStatistics::compute(&s, &c).unwrap();
        let z = CVec::zeros(4);
        for l in 0..2 {
            for k in 0..2 {
                let est = channel_estimate(EstimatorKind::Lmmse, &z, l, k, &pilot, &s, &c).unwrap();
                let rbar = &s.link(l, k, l).rbar;
                assert!((&est.est_cov + &est.err_cov - rbar).norm() <= 1e-10 * rbar.norm());
                assert!(is_psd(&est.est_cov, 1e-10));
                assert!(is_psd(&est.err_cov, 1e-8));
            }
        }
        for kind in [EstimatorKind::EwLmmse, EstimatorKind::Ls] {
            let est = channel_estimate(kind, &z, 0, 0, &pilot, &s, &c).unwrap();
            assert!(is_psd(&est.est_cov, 1e-10));
            assert!(is_psd(&est.err_cov, 1e-8));
        }
    }

    proptest! {
        #[test]
        fn estimate_is_linear_in_observation(
            re in proptest::collection::vec(-3.0f64..3.0, 4),
            im in proptest::collection::vec(-3.0f64..3.0, 4),
            pow in -3i32..4,
            quarter in 0u8..4,
        ) {
            let (c, s) = small_network();
            let pilot = PilotStatistics::compute(&s, &c).unwrap();
            let z = CVec::from_fn(4, |i, _| C64::new(re[i], im[i]));
            let rot = [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)];
            let alpha = rot[quarter as usize] * 2f64.powi(pow);
            for kind in [EstimatorKind::Lmmse, EstimatorKind::EwLmmse, EstimatorKind::Ls] {
                let a = channel_estimate(kind, &z.scale(1.0).map(|x| x * alpha), 1, 0, &pilot, &s, &c).unwrap();
                let b = channel_estimate(kind, &z, 1, 0, &pilot, &s, &c).unwrap();
                prop_assert_eq!(a.ghat, b.ghat.map(|x| x * alpha));
            }
        }
    }

    /// Sample covariance of `x` draws against `target`, each entry within five
    /// standard errors.
    fn assert_cov_matches(draws: &[CVec], target: &CMat) {
        let n = draws.len() as f64;
        let m = target.nrows();
        for i in 0..m {
            for j in 0..m {
                let prods: Vec<C64> = draws.iter().map(|v| v[i] * v[j].conj()).collect();
                let avg: C64 = prods.iter().sum::<C64>() / n;
                let var: f64 = prods.iter().map(|p| (p - avg).norm_sqr()).sum::<f64>() / (n - 1.0);
                let se = (var / n).sqrt();
                assert!(
                    (avg - target[(i, j)]).norm() <= 5.0 * se,
                    "entry ({i},{j}): {avg} vs {}",
                    target[(i, j)]
                );
            }
        }
    }

    #[test]
    fn observation_and_lmmse_monte_carlo() {
        let c = ScenarioConfig {
            seed: 6,
            ..ScenarioConfig::small(2, 1, 3)
        };
        let s = generate_network_seeded(&c).unwrap();
        let pilot = PilotStatistics::compute(&s, &c).unwrap();
        let bank = EstimatorBank::new(EstimatorKind::Lmmse, &pilot, &s, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 100_000;
        let (l, k) = (0, 0);
        let mut zs = Vec::with_capacity(n);
        let mut gh = Vec::with_capacity(n);
        let mut cross = CMat::zeros(3, 3);
        let mut cross_sq = nalgebra::DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let real = sample_channels(&s, &mut rng).unwrap();
            let z = pilot_observation(&real, l, k, &c, &mut rng);
            let ghat = bank.apply(l, k, &z);
            let err = real.g(l, k, l) - &ghat;
            let xc = &ghat * err.adjoint();
            cross += &xc;
            cross_sq += xc.map(|x| x.norm_sqr());
            zs.push(z);
            gh.push(ghat);
        }
        assert_cov_matches(&zs, pilot.psi(l, k));
        let est = channel_estimate(EstimatorKind::Lmmse, &zs[0], l, k, &pilot, &s, &c).unwrap();
        assert_cov_matches(&gh, &est.est_cov);
        // orthogonality of estimate and error
        let nf = n as f64;
        for i in 0..3 {
            for j in 0..3 {
                let mean = cross[(i, j)] / nf;
                let se = ((cross_sq[(i, j)] / nf - mean.norm_sqr()) / nf).sqrt();
                assert!(mean.norm() <= 5.0 * se, "cross ({i},{j})");
            }
        }
    }
}
