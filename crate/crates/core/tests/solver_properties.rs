//! Solver invariants on randomized instances.

use lsfp_core::estimation::{EstimatorKind, PilotStatistics};
use lsfp_core::linalg::{complex_normal, complex_normal_vec, CMat, C64};
use lsfp_core::linkstats::{closed_form_linkstats, LinkStatistics};
use lsfp_core::optimizer::{
    admm_run, build_quadratic, objective_value, wmmse_solve, wmmse_solve_from, Objective, SolverOptions,
};
use lsfp_core::scenario::{generate_network_seeded, ScenarioConfig};
use lsfp_core::se_eval::{power_used, LsfpWeights};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn network(seed: u64, k: usize, m: usize, kind: EstimatorKind) -> (ScenarioConfig, LinkStatistics) {
    let config = ScenarioConfig {
        seed,
        ..ScenarioConfig::small(2, k, m)
    };
    let stats = generate_network_seeded(&config).unwrap();
    let pilot = PilotStatistics::compute(&stats, &config).unwrap();
    let ls = closed_form_linkstats(kind, &stats, &pilot, &config).unwrap();
    (config, ls)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// SLP is feasible for the full problem, so starting there cannot end lower.
    #[test]
    fn slp_warm_start_dominance(seed in 0u64..10_000, k in 2usize..4, pf in proptest::bool::ANY) {
        let objective = if pf { Objective::PropFair } else { Objective::SumSe };
        let (config, ls) = network(seed, k, 8, EstimatorKind::Lmmse);
        let opts = SolverOptions::with_objective(objective);
        let slp = wmmse_solve(&ls, &config, &opts, LsfpWeights::slp_mask(4, k)).unwrap();
        let start = LsfpWeights::from_vectors(4, k, slp.weights.vectors().to_vec(), LsfpWeights::full_mask(4, k)).unwrap();
        let full = wmmse_solve_from(&ls, &config, &opts, start).unwrap();
        let j_slp = objective_value(objective, &slp.weights, &ls, config.sigma2).unwrap();
        let j_full = objective_value(objective, &full.weights, &ls, config.sigma2).unwrap();
        prop_assert!(j_full >= j_slp - 1e-9, "{} < {}", j_full, j_slp);
    }

    /// Final weights of every support pattern stay within the per-BS budget.
    #[test]
    fn solutions_are_feasible(seed in 0u64..10_000, ls_est in proptest::bool::ANY) {
        let kind = if ls_est { EstimatorKind::Ls } else { EstimatorKind::Lmmse };
        let (config, ls) = network(seed, 2, 8, kind);
        for mask in [LsfpWeights::full_mask(4, 2), LsfpWeights::slp_mask(4, 2), LsfpWeights::partial_mask(4, 2, &[(1, 0), (3, 1)])] {
            let sol = wmmse_solve(&ls, &config, &SolverOptions::default(), mask).unwrap();
            for l in 0..4 {
                prop_assert!(power_used(l, &sol.weights, &ls) <= config.rho_d * (1.0 + 1e-6));
            }
        }
    }
}

/// On convex inner problems the consensus residual settles monotonically.
#[test]
fn admm_tail_residual_is_nonincreasing() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nl, nk) = (2 + seed as usize % 3, 2);
        let mut b = Vec::new();
        let mut c = Vec::new();
        for idx in 0..nl * nk {
            let bv = complex_normal_vec(&mut rng, nl);
            for kp in 0..nk {
                let g = CMat::from_fn(nl, nl, |_, _| complex_normal(&mut rng) * 0.4);
                let mut m = &g * g.adjoint();
                if kp == idx % nk {
                    m += &bv * bv.adjoint();
                }
                c.push(m);
            }
            b.push(bv);
        }
        let omega = (0..nl * nk).map(|_| rng.gen_range(0.5..2.0)).collect();
        let ls = LinkStatistics::from_parts(nl, nk, EstimatorKind::Lmmse, b, c, omega).unwrap();
        let u: Vec<C64> = (0..nl * nk).map(|_| complex_normal(&mut rng) * 2.0).collect();
        let d: Vec<f64> = (0..nl * nk).map(|_| rng.gen_range(1.0..4.0)).collect();
        let q = build_quadratic(&u, &d, &ls);
        let opts = SolverOptions {
            eps_admm: 1e-20,
            max_inner_iters: 4000,
            ..SolverOptions::default()
        };
        let out = admm_run(&q, 0.3, &opts, &LsfpWeights::full_mask(nl, nk), None, &mut rng).unwrap();
        let trace = &out.residual_trace;
        let tail = &trace[trace.len() - trace.len() / 10..];
        for w in tail.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "seed {seed}: {} after {}", w[1], w[0]);
        }
    }
}
