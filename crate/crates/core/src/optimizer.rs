//! LSFP weight design.
//!
//! Sum-SE and proportional-fairness objectives are handled by weighted-MMSE
//! block coordinate descent: closed-form receiver scalars `u`, MSE weights
//! `d`, and a convex QCQP in the weights solved by consensus ADMM. The QCQP is
//! posed in scaled coordinates `ã_lk = Ω_k a_lk`, `Ω_k = diag(sqrt ω_rk)`, in
//! which every per-BS power constraint is a plain Euclidean ball and the
//! projection is a rescaling.
//!
//! Also here: the single-layer LPA heuristic and the index selection rules for
//! partial LSFP.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complex_normal, quad_form, CMat, CVec, HermitianSolver, C64};
use crate::linkstats::LinkStatistics;
use crate::scenario::ScenarioConfig;
use crate::se_eval::{mse_value, received_power, sinr_breakdown, LsfpWeights};

/// Clamp window for MSE values before the `d` update.
pub const MSE_CLAMP: f64 = 1e-12;

/// Relative per-BS power excess tolerated before final re-projection.
pub const POWER_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "SumSE")]
    SumSe,
    #[serde(rename = "PropFair")]
    PropFair,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::SumSe => "SumSE",
            Objective::PropFair => "PropFair",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub objective: Objective,
    /// Relative consensus threshold of the inner ADMM.
    pub eps_admm: f64,
    /// Relative-improvement threshold of the outer loop.
    pub eps_wmmse: f64,
    pub rho_admm: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Carry the ADMM copy and dual variables across outer iterations instead
    /// of re-drawing the copy at random each time.
    pub warm_start_admm: bool,
    /// Re-draw the ADMM copy at every inner iteration that fails the
    /// consensus test (literal reading of the loop-back). Off by default; it
    /// generally prevents convergence.
    pub literal_restart: bool,
    /// Seed of the random ADMM initialization.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            objective: Objective::SumSe,
            eps_admm: 1e-5,
            eps_wmmse: 1e-5,
            rho_admm: 0.2,
            max_outer_iters: 500,
            max_inner_iters: 5000,
            warm_start_admm: true,
            literal_restart: false,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn with_objective(objective: Objective) -> Self {
        Self {
            objective,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_admm", self.eps_admm),
            ("eps_wmmse", self.eps_wmmse),
            ("rho_admm", self.rho_admm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.max_outer_iters == 0 {
            return Err(Error::config("max_outer_iters", "must be at least 1"));
        }
        if self.max_inner_iters == 0 {
            return Err(Error::config("max_inner_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// MMSE receiver scalar `u = a^H b / (Σ a^H C a + σ²)`.
pub fn optimal_receiver_u(
    l: usize,
    k: usize,
    weights: &LsfpWeights,
    ls: &LinkStatistics,
    sigma2: f64,
) -> C64 {
    let num = weights.a(l, k).dotc(ls.b(l, k));
    num / (received_power(l, k, weights, ls) + sigma2)
}

/// MSE weight from the derivative of the utility in `e`.
pub fn weight_update_d(objective: Objective, e: f64) -> f64 {
    let e = e.clamp(MSE_CLAMP, 1.0 - MSE_CLAMP);
    match objective {
        Objective::SumSe => 1.0 / e,
        Objective::PropFair => -1.0 / (e * e.ln()),
    }
}

/// Users whose average effective channel vanishes; they cannot be served.
pub fn degenerate_users(ls: &LinkStatistics) -> Vec<bool> {
    let (nl, nk) = (ls.num_cells(), ls.users_per_cell());
    (0..nl * nk)
        .map(|idx| ls.b(idx / nk, idx % nk).norm_squared() == 0.0)
        .collect()
}

/// `Σ log2(1 + SINR)` or `Σ ln log2(1 + SINR)` over the servable users. The
/// pre-log factor is left out.
pub fn objective_value(
    objective: Objective,
    weights: &LsfpWeights,
    ls: &LinkStatistics,
    sigma2: f64,
) -> Result<f64> {
    let degenerate = degenerate_users(ls);
    let nk = ls.users_per_cell();
    let mut total = 0.0;
    for (idx, &skip) in degenerate.iter().enumerate() {
        if skip {
            continue;
        }
        let sinr = sinr_breakdown(idx / nk, idx % nk, weights, ls, sigma2)?.sinr;
        let rate = sinr.ln_1p() / std::f64::consts::LN_2;
        total += match objective {
            Objective::SumSe => rate,
            Objective::PropFair => rate.ln(),
        };
    }
    Ok(total)
}

/// `sqrt(ω_rk)` for every r, per pilot k: the diagonal of `Ω_k`.
pub fn omega_scaling(ls: &LinkStatistics) -> Vec<Vec<f64>> {
    (0..ls.users_per_cell())
        .map(|k| (0..ls.num_cells()).map(|r| ls.omega(r, k).sqrt()).collect())
        .collect()
}

/// The convex inner problem `min Σ ã^H F_k ã − 2 Re{f_lk^H ã}` over all
/// users, subject to `Σ_{r,k} |ã_rk^l|² ≤ ρ_d` for every BS `l`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    num_cells: usize,
    users_per_cell: usize,
    /// `F_k`, one per pilot.
    pub big_f: Vec<CMat>,
    /// `f_lk`, ordered `[l][k]`.
    pub small_f: Vec<CVec>,
}

impl Quadratic {
    pub fn new(num_cells: usize, users_per_cell: usize, big_f: Vec<CMat>, small_f: Vec<CVec>) -> Result<Self> {
        if big_f.len() != users_per_cell
            || small_f.len() != num_cells * users_per_cell
            || big_f.iter().any(|m| m.nrows() != num_cells || m.ncols() != num_cells)
            || small_f.iter().any(|v| v.len() != num_cells)
        {
            return Err(Error::config("quadratic", "dimension mismatch"));
        }
        Ok(Self {
            num_cells,
            users_per_cell,
            big_f,
            small_f,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users_per_cell
    }

    pub fn objective(&self, a_tilde: &[CVec]) -> f64 {
        a_tilde
            .iter()
            .enumerate()
            .map(|(idx, x)| {
                let k = idx % self.users_per_cell;
                quad_form(x, &self.big_f[k], x).re - 2.0 * self.small_f[idx].dotc(x).re
            })
            .sum()
    }
}

/// `F_k` and `f_lk` from the current receivers and MSE weights (both ordered
/// `[l][k]`).
pub fn build_quadratic(u: &[C64], d: &[f64], ls: &LinkStatistics) -> Quadratic {
    let (nl, nk) = (ls.num_cells(), ls.users_per_cell());
    let scaling = omega_scaling(ls);
    let big_f = (0..nk)
        .map(|k| {
            let mut f = CMat::zeros(nl, nl);
            for r in 0..nl {
                for kp in 0..nk {
                    let w = d[r * nk + kp] * u[r * nk + kp].norm_sqr();
                    if w != 0.0 {
                        f += ls.c(r, kp, k).scale(w);
                    }
                }
            }
            let s = &scaling[k];
            let f = CMat::from_fn(nl, nl, |i, j| f[(i, j)] / (s[i] * s[j]));
            crate::linalg::hermitian_part(&f)
        })
        .collect();
    let small_f = (0..nl * nk)
        .map(|idx| {
            let (l, k) = (idx / nk, idx % nk);
            let coef = u[idx].conj() * d[idx];
            let b = ls.b(l, k);
            CVec::from_fn(nl, |r, _| b[r] * coef / scaling[k][r])
        })
        .collect();
    Quadratic {
        num_cells: nl,
        users_per_cell: nk,
        big_f,
        small_f,
    }
}

/// Rescale each BS's entries onto the ball of radius `sqrt(ρ_d)` if outside
/// by more than `slack` (relative).
pub fn project_power(a_tilde: &mut [CVec], num_cells: usize, rho_d: f64, slack: f64) {
    for l in 0..num_cells {
        let s: f64 = a_tilde.iter().map(|v| v[l].norm_sqr()).sum();
        if s > rho_d * (1.0 + slack) {
            let f = (rho_d / s).sqrt();
            for v in a_tilde.iter_mut() {
                v[l] *= f;
            }
        }
    }
}

fn support_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

/// `(F_k + ρI)` restricted to a support set, factored once.
struct MaskedSolver {
    idx: Vec<usize>,
    solver: Option<HermitianSolver>,
}

impl MaskedSolver {
    fn new(f: &CMat, rho: f64, idx: Vec<usize>) -> Result<Self> {
        if idx.is_empty() {
            return Ok(Self { idx, solver: None });
        }
        let n = idx.len();
        let sub = CMat::from_fn(n, n, |i, j| {
            f[(idx[i], idx[j])] + if i == j { C64::new(rho, 0.0) } else { C64::new(0.0, 0.0) }
        });
        Ok(Self {
            idx,
            solver: Some(HermitianSolver::new(&sub)?),
        })
    }

    fn solve(&self, rhs: &CVec, out: &mut CVec) {
        out.fill(C64::new(0.0, 0.0));
        if let Some(s) = &self.solver {
            let r = CVec::from_fn(self.idx.len(), |i, _| rhs[self.idx[i]]);
            let x = s.solve_vec(&r);
            for (i, &j) in self.idx.iter().enumerate() {
                out[j] = x[i];
            }
        }
    }
}

/// Result of one ADMM run.
#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub a_tilde: Vec<CVec>,
    pub a_bar: Vec<CVec>,
    pub a_hat: Vec<CVec>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Consensus residual `Σ||ā − ã||² / Σ||ã||²` after every iteration.
    pub residual_trace: Vec<f64>,
}

fn random_feasible<R: Rng + ?Sized>(
    rng: &mut R,
    masks: &[Vec<bool>],
    num_cells: usize,
    rho_d: f64,
) -> Vec<CVec> {
    let mut v: Vec<CVec> = masks
        .iter()
        .map(|m| {
            CVec::from_fn(num_cells, |r, _| {
                let z = complex_normal(rng);
                if m[r] {
                    z
                } else {
                    C64::new(0.0, 0.0)
                }
            })
        })
        .collect();
    project_power(&mut v, num_cells, rho_d, 0.0);
    v
}

/// Consensus ADMM on `quad` restricted to `masks`. `start` supplies `(ā, â)`;
/// without it `ā` is drawn at random and `â = 0`.
pub fn admm_run<R: Rng + ?Sized>(
    quad: &Quadratic,
    rho_d: f64,
    options: &SolverOptions,
    masks: &[Vec<bool>],
    start: Option<(Vec<CVec>, Vec<CVec>)>,
    rng: &mut R,
) -> Result<AdmmOutcome> {
    let (nl, nk) = (quad.num_cells, quad.users_per_cell);
    let users = nl * nk;
    if masks.len() != users || masks.iter().any(|m| m.len() != nl) {
        return Err(Error::config("support_mask", "dimension mismatch"));
    }
    let rho = options.rho_admm;

    let mut cache: HashMap<(usize, Vec<bool>), usize> = HashMap::new();
    let mut solvers: Vec<MaskedSolver> = Vec::new();
    let mut user_solver = Vec::with_capacity(users);
    for (idx, m) in masks.iter().enumerate() {
        let k = idx % nk;
        let key = (k, m.clone());
        let slot = match cache.get(&key) {
            Some(&s) => s,
            None => {
                solvers.push(MaskedSolver::new(&quad.big_f[k], rho, support_indices(m))?);
                cache.insert(key, solvers.len() - 1);
                solvers.len() - 1
            }
        };
        user_solver.push(slot);
    }

    let (mut a_bar, mut a_hat) = match start {
        Some((bar, hat)) => (bar, hat),
        None => (
            random_feasible(rng, masks, nl, rho_d),
            vec![CVec::zeros(nl); users],
        ),
    };
    let mut a_tilde = vec![CVec::zeros(nl); users];
    let mut residual_trace = Vec::new();
    let mut residual = f64::INFINITY;

    for it in 1..=options.max_inner_iters {
        for idx in 0..users {
            let rhs = &quad.small_f[idx] + (&a_bar[idx] + &a_hat[idx]).scale(rho);
            solvers[user_solver[idx]].solve(&rhs, &mut a_tilde[idx]);
        }
        let previous = a_bar.clone();
        for idx in 0..users {
            a_bar[idx] = &a_tilde[idx] - &a_hat[idx];
        }
        project_power(&mut a_bar, nl, rho_d, 0.0);
        let mut gap = 0.0;
        let mut size = 0.0;
        let mut drift = 0.0;
        for idx in 0..users {
            a_hat[idx] = &a_bar[idx] - &a_tilde[idx] + &a_hat[idx];
            gap += (&a_bar[idx] - &a_tilde[idx]).norm_squared();
            size += a_tilde[idx].norm_squared();
            drift += (&a_bar[idx] - &previous[idx]).norm_squared();
        }
        let ratio = |x: f64| if x == 0.0 { 0.0 } else { x / size };
        residual = ratio(gap);
        residual_trace.push(residual);
        // The consensus gap alone can vanish on the first step (zero dual,
        // inactive projection) far from the optimum; require the copy to have
        // settled as well.
        if residual <= options.eps_admm && ratio(drift) <= options.eps_admm {
            return Ok(AdmmOutcome {
                a_tilde,
                a_bar,
                a_hat,
                iterations: it,
                residual,
                converged: true,
                residual_trace,
            });
        }
        if options.literal_restart {
            a_bar = random_feasible(rng, masks, nl, rho_d);
        }
    }
    Ok(AdmmOutcome {
        a_tilde,
        a_bar,
        a_hat,
        iterations: options.max_inner_iters,
        residual,
        converged: false,
        residual_trace,
    })
}

/// Solve the inner QCQP from a seeded random start. The returned `ã` is
/// feasible (re-projected when the consensus gap leaves a violation).
pub fn admm_qcqp_solve(
    quad: &Quadratic,
    rho_d: f64,
    options: &SolverOptions,
    masks: &[Vec<bool>],
) -> Result<Vec<CVec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let out = admm_run(quad, rho_d, options, masks, None, &mut rng)?;
    if !out.converged {
        return Err(Error::NonConvergence {
            iterations: out.iterations,
            residual: out.residual,
        });
    }
    let mut a = out.a_tilde;
    project_power(&mut a, quad.num_cells, rho_d, POWER_SLACK);
    Ok(a)
}

/// Step-1 initialization: for every BS `l` all supported entries `a_rk^l`
/// equal one positive `v_l` chosen so the BS transmits exactly `ρ_d`.
pub fn initial_weights(
    ls: &LinkStatistics,
    config: &ScenarioConfig,
    masks: Vec<Vec<bool>>,
) -> Result<LsfpWeights> {
    let (nl, nk) = (ls.num_cells(), ls.users_per_cell());
    let mut w = LsfpWeights::zeros(nl, nk, masks)?;
    let mut values = vec![0.0; nl];
    for (l, value) in values.iter_mut().enumerate() {
        let load: f64 = (0..nk)
            .map(|k| {
                let count = (0..nl).filter(|&r| w.mask(r, k)[l]).count();
                ls.omega(l, k) * count as f64
            })
            .sum();
        if !(load > 0.0) {
            return Err(Error::config(
                "support_mask",
                format!("BS {l} has no supported weight entry"),
            ));
        }
        *value = (config.rho_d / load).sqrt();
    }
    for r in 0..nl {
        for k in 0..nk {
            let v = CVec::from_fn(nl, |l, _| C64::new(values[l], 0.0));
            w.set(r, k, &v);
        }
    }
    Ok(w)
}

/// Why the outer loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative change of `Σ log2 d` fell below the threshold.
    Tolerance,
    /// No step along the update direction improved the objective.
    NoAscent,
    IterationCap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WmmseDiagnostics {
    pub objective: Objective,
    /// Objective at the initial point and after every outer iteration.
    pub objective_trace: Vec<f64>,
    pub inner_iterations: Vec<usize>,
    pub inner_residuals: Vec<f64>,
    pub inner_converged: Vec<bool>,
    pub outer_iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Outer iterations whose raw update had to be shortened to keep ascent.
    pub damped_steps: usize,
    /// `(l, k)` of users with a vanishing average channel.
    pub degenerate_users: Vec<(usize, usize)>,
}

impl WmmseDiagnostics {
    pub fn all_inner_converged(&self) -> bool {
        self.inner_converged.iter().all(|&c| c)
    }
}

#[derive(Debug, Clone)]
pub struct WmmseSolution {
    pub weights: LsfpWeights,
    pub diagnostics: WmmseDiagnostics,
}

/// Receivers, MSEs and MSE weights at the given weights.
fn receiver_update(
    weights: &LsfpWeights,
    ls: &LinkStatistics,
    sigma2: f64,
    objective: Objective,
    degenerate: &[bool],
) -> (Vec<C64>, Vec<f64>) {
    let nk = ls.users_per_cell();
    let mut u = Vec::with_capacity(degenerate.len());
    let mut d = Vec::with_capacity(degenerate.len());
    for (idx, &skip) in degenerate.iter().enumerate() {
        let (l, k) = (idx / nk, idx % nk);
        if skip {
            u.push(C64::new(0.0, 0.0));
            d.push(1.0);
            continue;
        }
        let ui = optimal_receiver_u(l, k, weights, ls, sigma2);
        let e = mse_value(ui, l, k, weights, ls, sigma2);
        u.push(ui);
        d.push(weight_update_d(objective, e));
    }
    (u, d)
}

fn sum_log2(d: &[f64]) -> f64 {
    d.iter().map(|x| x.log2()).sum()
}

/// Weights in the scaled coordinates `ã_lk = Ω_k a_lk`.
pub fn to_scaled(weights: &LsfpWeights, scaling: &[Vec<f64>]) -> Vec<CVec> {
    let nk = weights.users_per_cell();
    weights
        .vectors()
        .iter()
        .enumerate()
        .map(|(idx, a)| {
            let s = &scaling[idx % nk];
            CVec::from_fn(a.len(), |r, _| a[r] * s[r])
        })
        .collect()
}

fn from_scaled(
    a_tilde: &[CVec],
    scaling: &[Vec<f64>],
    template: &LsfpWeights,
    degenerate: &[bool],
) -> LsfpWeights {
    let mut w = template.clone();
    let nk = template.users_per_cell();
    for (idx, x) in a_tilde.iter().enumerate() {
        let (l, k) = (idx / nk, idx % nk);
        let v = if degenerate[idx] {
            CVec::zeros(x.len())
        } else {
            CVec::from_fn(x.len(), |r, _| x[r] / scaling[k][r])
        };
        w.set(l, k, &v);
    }
    w
}

fn blend(a: &LsfpWeights, b: &LsfpWeights, t: f64) -> LsfpWeights {
    let mut out = a.clone();
    let nk = a.users_per_cell();
    for idx in 0..a.vectors().len() {
        let (l, k) = (idx / nk, idx % nk);
        let v = a.a(l, k).scale(1.0 - t) + b.a(l, k).scale(t);
        out.set(l, k, &v);
    }
    out
}

/// Maximum number of step halvings before declaring that no ascent is left.
const MAX_HALVINGS: usize = 40;

/// Weighted-MMSE block coordinate descent from the Step-1 initialization.
pub fn wmmse_solve(
    ls: &LinkStatistics,
    config: &ScenarioConfig,
    options: &SolverOptions,
    masks: Vec<Vec<bool>>,
) -> Result<WmmseSolution> {
    let init = initial_weights(ls, config, masks)?;
    wmmse_solve_from(ls, config, options, init)
}

/// Weighted-MMSE block coordinate descent from a given feasible point; the
/// support is taken from `init`.
pub fn wmmse_solve_from(
    ls: &LinkStatistics,
    config: &ScenarioConfig,
    options: &SolverOptions,
    init: LsfpWeights,
) -> Result<WmmseSolution> {
    options.validate()?;
    let (nl, nk) = (ls.num_cells(), ls.users_per_cell());
    if init.num_cells() != nl || init.users_per_cell() != nk {
        return Err(Error::config("weights", "dimensions differ from link statistics"));
    }
    if (0..nl * nk).any(|idx| !(ls.omega(idx / nk, idx % nk) > 0.0)) {
        return Err(Error::Statistics("precoder energies must be positive".into()));
    }
    let sigma2 = config.sigma2;
    let rho_d = config.rho_d;
    let objective = options.objective;
    let degenerate = degenerate_users(ls);
    let scaling = omega_scaling(ls);
    let masks = init.masks().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);

    let mut weights = init;
    let mut current = objective_value(objective, &weights, ls, sigma2)?;
    let mut diag = WmmseDiagnostics {
        objective,
        objective_trace: vec![current],
        inner_iterations: Vec::new(),
        inner_residuals: Vec::new(),
        inner_converged: Vec::new(),
        outer_iterations: 0,
        converged: false,
        stop_reason: StopReason::IterationCap,
        damped_steps: 0,
        degenerate_users: degenerate
            .iter()
            .enumerate()
            .filter(|(_, &d)| d)
            .map(|(i, _)| (i / nk, i % nk))
            .collect(),
    };

    let (mut u, mut d) = receiver_update(&weights, ls, sigma2, objective, &degenerate);
    let mut log_d = sum_log2(&d);
    let mut admm_state: Option<(Vec<CVec>, Vec<CVec>)> = None;

    for _ in 0..options.max_outer_iters {
        diag.outer_iterations += 1;
        let quad = build_quadratic(&u, &d, ls);
        let start = if options.warm_start_admm { admm_state.take() } else { None };
        let out = admm_run(&quad, rho_d, options, &masks, start, &mut rng)?;
        diag.inner_iterations.push(out.iterations);
        diag.inner_residuals.push(out.residual);
        diag.inner_converged.push(out.converged);
        let mut a_tilde = out.a_tilde;
        project_power(&mut a_tilde, nl, rho_d, POWER_SLACK);
        admm_state = Some((out.a_bar, out.a_hat));
        let raw = from_scaled(&a_tilde, &scaling, &weights, &degenerate);

        // Inexact inner solves (and the non-concave part of the fairness
        // utility) can make the raw update lose ground; shorten it then.
        let mut candidate = raw;
        let mut value = objective_value(objective, &candidate, ls, sigma2)?;
        if !(value >= current) {
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                t *= 0.5;
                let trial = blend(&weights, &candidate, t);
                let v = objective_value(objective, &trial, ls, sigma2)?;
                if v >= current {
                    candidate = trial;
                    value = v;
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                diag.converged = true;
                diag.stop_reason = StopReason::NoAscent;
                diag.objective_trace.push(current);
                break;
            }
            diag.damped_steps += 1;
        }
        weights = candidate;
        current = value;
        diag.objective_trace.push(current);

        let (nu, nd) = receiver_update(&weights, ls, sigma2, objective, &degenerate);
        let next_log_d = sum_log2(&nd);
        let change = (next_log_d - log_d).powi(2);
        let scale = log_d.powi(2);
        u = nu;
        d = nd;
        log_d = next_log_d;
        if change <= options.eps_wmmse * scale || (scale == 0.0 && change == 0.0) {
            diag.converged = true;
            diag.stop_reason = StopReason::Tolerance;
            break;
        }
    }

    Ok(WmmseSolution {
        weights,
        diagnostics: diag,
    })
}

/// Single-layer local power allocation: BS `l` splits `ρ_d` among its users
/// in proportion to `sqrt(ω_lk)`.
pub fn lpa_weights(ls: &LinkStatistics, config: &ScenarioConfig) -> Result<LsfpWeights> {
    let (nl, nk) = (ls.num_cells(), ls.users_per_cell());
    let mut w = LsfpWeights::zeros(nl, nk, LsfpWeights::slp_mask(nl, nk))?;
    for l in 0..nl {
        let total: f64 = (0..nk).map(|k| ls.omega(l, k).sqrt()).sum();
        for k in 0..nk {
            let om = ls.omega(l, k);
            if !(om > 0.0) {
                return Err(Error::Statistics("precoder energies must be positive".into()));
            }
            let p = config.rho_d * om.sqrt() / (om * total);
            let mut v = CVec::zeros(nl);
            v[l] = C64::new(p.sqrt(), 0.0);
            w.set(l, k, &v);
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectionMethod {
    /// Own-BS share of the desired signal.
    #[serde(rename = "DS")]
    Ds,
    /// Own-BS share of the interference-aware matched weights.
    #[serde(rename = "DS_Int")]
    DsInt,
}

/// Users granted full support under partial LSFP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialSelection {
    pub selected: Vec<(usize, usize)>,
    /// Metric of every user, ordered `[l][k]`.
    pub metrics: Vec<f64>,
}

impl PartialSelection {
    pub fn n_d(&self) -> usize {
        self.selected.len()
    }

    pub fn mask(&self, num_cells: usize, users_per_cell: usize) -> Vec<Vec<bool>> {
        LsfpWeights::partial_mask(num_cells, users_per_cell, &self.selected)
    }
}

fn own_share(v: &CVec, l: usize) -> f64 {
    let total = v.norm_squared();
    if total == 0.0 {
        1.0
    } else {
        v[l].norm_sqr() / total
    }
}

/// Pick the `n_d` users with the smallest own-BS share; ties go to the
/// lexicographically smaller `(l, k)`.
pub fn select_partial_indices(
    method: SelectionMethod,
    ls: &LinkStatistics,
    n_d: usize,
) -> Result<PartialSelection> {
    let (nl, nk) = (ls.num_cells(), ls.users_per_cell());
    if n_d > nl * nk {
        return Err(Error::config("N_D", format!("must not exceed L*K = {}", nl * nk)));
    }
    let metrics: Vec<f64> = match method {
        SelectionMethod::Ds => (0..nl * nk)
            .map(|idx| own_share(ls.b(idx / nk, idx % nk), idx / nk))
            .collect(),
        SelectionMethod::DsInt => {
            let solvers = (0..nk)
                .map(|k| {
                    let mut s = CMat::zeros(nl, nl);
                    for r in 0..nl {
                        for kp in 0..nk {
                            s += ls.c(r, kp, k);
                        }
                    }
                    HermitianSolver::new(&s).map_err(|_| {
                        Error::Numeric(format!("summed interference matrix of pilot {k} is singular"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (0..nl * nk)
                .map(|idx| {
                    let (l, k) = (idx / nk, idx % nk);
                    own_share(&solvers[k].solve_vec(ls.b(l, k)), l)
                })
                .collect()
        }
    };
    let mut order: Vec<usize> = (0..nl * nk).collect();
    // stable: equal metrics keep index order
    order.sort_by(|&i, &j| metrics[i].total_cmp(&metrics[j]));
    let mut selected: Vec<(usize, usize)> = order[..n_d].iter().map(|&i| (i / nk, i % nk)).collect();
    selected.sort_unstable();
    Ok(PartialSelection { selected, metrics })
}
