//! Long-term link statistics `b`, `C` and `ω` for MR local precoding.
//!
//! For local precoders `w_rk` (the LMMSE estimate or the raw observation
//! `z_rk`) these are
//!
//! ```text
//! b_lk^r      = E{ w_rk^H g_lk^r }
//! c_lkk'^{rn} = E{ w_rk'^H g_lk^r (g_lk^n)^H w_nk' }
//! ω_lk        = E{ ||w_lk||² }
//! ```
//!
//! and they determine every SINR. [`closed_form_linkstats`] evaluates them
//! exactly; [`mc_linkstats`] estimates them by sampling and serves as the
//! oracle for the closed forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{pilot_observation, EstimatorBank, EstimatorKind, PilotStatistics};
use crate::linalg::{self, trace, trace_product, CMat, CVec, C64};
use crate::scenario::{sample_channels, ChannelRealization, ChannelStatistics, ScenarioConfig};

/// `b`, `C`, `ω` for every user and pilot pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkStatistics {
    num_cells: usize,
    users_per_cell: usize,
    pub kind: EstimatorKind,
    b: Vec<CVec>,
    c: Vec<CMat>,
    omega: Vec<f64>,
}

impl LinkStatistics {
    /// Assemble from raw parts. `b` and `omega` are ordered `[l][k]`, `c` is
    /// ordered `[l][k][k']`.
    pub fn from_parts(
        num_cells: usize,
        users_per_cell: usize,
        kind: EstimatorKind,
        b: Vec<CVec>,
        c: Vec<CMat>,
        omega: Vec<f64>,
    ) -> Result<Self> {
        let users = num_cells * users_per_cell;
        if b.len() != users || omega.len() != users || c.len() != users * users_per_cell {
            return Err(Error::Statistics("link statistics size mismatch".into()));
        }
        if b.iter().any(|v| v.len() != num_cells)
            || c.iter().any(|m| m.nrows() != num_cells || m.ncols() != num_cells)
        {
            return Err(Error::Statistics("link statistics dimension mismatch".into()));
        }
        Ok(Self {
            num_cells,
            users_per_cell,
            kind,
            b,
            c,
            omega,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users_per_cell
    }

    pub fn b(&self, l: usize, k: usize) -> &CVec {
        &self.b[l * self.users_per_cell + k]
    }

    /// `C_lkk'`: interference statistics of user (l, k) from pilot group `kp`.
    pub fn c(&self, l: usize, k: usize, kp: usize) -> &CMat {
        &self.c[(l * self.users_per_cell + k) * self.users_per_cell + kp]
    }

    pub fn omega(&self, l: usize, k: usize) -> f64 {
        self.omega[l * self.users_per_cell + k]
    }

    pub fn dump(&self) -> LinkStatisticsDump {
        let to_vec = |v: &CVec| v.iter().copied().collect::<Vec<_>>();
        let to_rows = |m: &CMat| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect()
        };
        let (nl, nk) = (self.num_cells, self.users_per_cell);
        LinkStatisticsDump {
            estimator: self.kind,
            num_cells: nl,
            users_per_cell: nk,
            b: (0..nl)
                .map(|l| (0..nk).map(|k| to_vec(self.b(l, k))).collect())
                .collect(),
            c: (0..nl)
                .map(|l| {
                    (0..nk)
                        .map(|k| (0..nk).map(|kp| to_rows(self.c(l, k, kp))).collect())
                        .collect()
                })
                .collect(),
            omega: (0..nl)
                .map(|l| (0..nk).map(|k| self.omega(l, k)).collect())
                .collect(),
        }
    }
}

/// JSON debug form; complex numbers serialize as `[re, im]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkStatisticsDump {
    pub estimator: EstimatorKind,
    pub num_cells: usize,
    pub users_per_cell: usize,
    pub b: Vec<Vec<Vec<C64>>>,
    pub c: Vec<Vec<Vec<Vec<Vec<C64>>>>>,
    pub omega: Vec<Vec<f64>>,
}

/// `E{|u^H B u|²}` for `u ~ CN(0, A)`: `|tr(AB)|² + tr(A B A B^H)`.
pub fn quadratic_moment(a: &CMat, b: &CMat) -> f64 {
    let ab = a * b;
    let t = trace(&ab);
    let second = trace_product(&ab, &(a * b.adjoint())).re;
    t.norm_sqr() + second
}

/// First and second moments of `y^H x` where `x = e^{jθ} x̄ + x̃`,
/// `x̃ ~ CN(0, A)`, `y = B x + z` with zero-mean `z` independent of `x`, and
/// `C_y` the covariance of `y`.
pub fn rician_moments(a: &CMat, xbar: &CVec, b: &CMat, cy: &CMat) -> (C64, f64) {
    let full = a + linalg::outer(xbar, xbar);
    let first = trace_product(&b.adjoint(), &full);
    let tr_ab = trace_product(a, b);
    let tr_bh_a = trace_product(&b.adjoint(), a);
    let xbx = linalg::quad_form(xbar, b, xbar);
    let second = tr_ab.norm_sqr() + 2.0 * (xbx * tr_bh_a).re + trace_product(cy, &full).re;
    (first, second)
}

/// Exact `b`, `C`, `ω` for LMMSE- or LS-based MR precoding.
pub fn closed_form_linkstats(
    kind: EstimatorKind,
    stats: &ChannelStatistics,
    pilot: &PilotStatistics,
    config: &ScenarioConfig,
) -> Result<LinkStatistics> {
    let (nl, nk) = (stats.num_cells(), stats.users_per_cell());
    let tp = config.tau_p as f64 * config.eta;

    // Per (BS r, pilot k): R̄_rk^r Ψ_rk^{-1} and R̄ Ψ^{-1} R̄ for LMMSE.
    struct LmmseFactors {
        p: CMat,
        e: CMat,
    }
    let factors: Vec<Option<LmmseFactors>> = match kind {
        EstimatorKind::Lmmse => (0..nl * nk)
            .into_par_iter()
            .map(|idx| {
                let (r, k) = (idx / nk, idx % nk);
                let rbar = &stats.link(r, k, r).rbar;
                let p = pilot.solver(r, k).solve_mat(rbar).adjoint();
                let e = linalg::hermitian_part(&(&p * rbar));
                Some(LmmseFactors { p, e })
            })
            .collect(),
        EstimatorKind::Ls => (0..nl * nk).map(|_| None).collect(),
        EstimatorKind::EwLmmse => {
            return Err(Error::config(
                "estimator",
                "closed forms exist only for LMMSE and LS precoding",
            ))
        }
    };
    let fac = |r: usize, k: usize| factors[r * nk + k].as_ref().expect("LMMSE factors");

    let omega: Vec<f64> = (0..nl * nk)
        .map(|idx| {
            let (l, k) = (idx / nk, idx % nk);
            match kind {
                EstimatorKind::Lmmse => tp * trace(&fac(l, k).e).re,
                _ => trace(pilot.psi(l, k)).re,
            }
        })
        .collect();

    let per_user: Vec<(CVec, Vec<CMat>)> = (0..nl * nk)
        .into_par_iter()
        .map(|idx| {
            let (l, k) = (idx / nk, idx % nk);
            let mut b = CVec::zeros(nl);
            // diagonal entries of C_lkk' for every k'
            let mut diag = vec![vec![0.0; nl]; nk];
            for r in 0..nl {
                let link = stats.link(l, k, r);
                match kind {
                    EstimatorKind::Lmmse => {
                        let own = fac(r, k);
                        // tr(Ψ^{-1} R̄_rk R̄_lk) = tr(P^H R̄_lk)
                        let ph = own.p.adjoint();
                        b[r] = trace_product(&ph, &link.rbar) * tp;
                        let t1 = trace_product(&link.r, &own.p);
                        let t2 = trace_product(&ph, &link.r);
                        let q = linalg::quad_form(&link.gbar, &own.p, &link.gbar);
                        for (kp, d) in diag.iter_mut().enumerate() {
                            let coherent = tp * trace_product(&fac(r, kp).e, &link.rbar).re;
                            d[r] = if kp == k {
                                tp * tp * t1.norm_sqr() + 2.0 * tp * tp * (q * t2).re + coherent
                            } else {
                                coherent
                            };
                        }
                    }
                    _ => {
                        let tr_r = trace(&link.r).re;
                        let los = link.gbar.norm_squared();
                        b[r] = C64::new(tp.sqrt() * trace(&link.rbar).re, 0.0);
                        for (kp, d) in diag.iter_mut().enumerate() {
                            let noise_like = trace_product(pilot.psi(r, kp), &link.rbar).re;
                            d[r] = if kp == k {
                                tp * tr_r * tr_r + 2.0 * tp * los * tr_r + noise_like
                            } else {
                                noise_like
                            };
                        }
                    }
                }
            }
            let mats = diag
                .into_iter()
                .enumerate()
                .map(|(kp, d)| {
                    let mut m = CMat::zeros(nl, nl);
                    for r in 0..nl {
                        m[(r, r)] = C64::new(d[r], 0.0);
                        if kp == k {
                            for n in (r + 1)..nl {
                                let v = b[r] * b[n].conj();
                                m[(r, n)] = v;
                                m[(n, r)] = v.conj();
                            }
                        }
                    }
                    m
                })
                .collect();
            (b, mats)
        })
        .collect();

    let mut b = Vec::with_capacity(nl * nk);
    let mut c = Vec::with_capacity(nl * nk * nk);
    for (bv, mats) in per_user {
        b.push(bv);
        c.extend(mats);
    }
    LinkStatistics::from_parts(nl, nk, kind, b, c, omega)
}

/// Monte-Carlo options.
#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    /// Average every draw over independent sign flips of each link channel
    /// `g_lk^r` and each pilot-noise vector.
    ///
    /// Every such flip leaves the joint distribution unchanged (zero-mean
    /// circular NLOS part, uniform LOS phase, independent links), so the
    /// flip-averaged draw is a conditional expectation of the plain one:
    /// unbiased, never noisier, and exactly zero on entries that the symmetry
    /// forces to zero. The average is taken in closed form per draw by
    /// keeping only the sign-even products of the precoder components.
    pub symmetrize: bool,
    /// Draws per parallel batch (each batch owns a seeded RNG stream).
    pub batch: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            symmetrize: false,
            batch: 2048,
        }
    }
}

/// Sample means plus their standard errors.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub mean: LinkStatistics,
    /// Standard error of each `b` entry, `[l][k]` then r.
    pub b_std_error: Vec<Vec<f64>>,
    /// Standard error of each `C` entry, `[l][k][k']` then (r, n) row-major.
    pub c_std_error: Vec<Vec<f64>>,
    pub omega_std_error: Vec<f64>,
    pub samples: usize,
}

/// Brute-force estimate of `b`, `C`, `ω` from `n_samples` channel draws.
pub fn mc_linkstats<R: Rng + ?Sized>(
    kind: EstimatorKind,
    stats: &ChannelStatistics,
    pilot: &PilotStatistics,
    config: &ScenarioConfig,
    n_samples: usize,
    rng: &mut R,
) -> Result<LinkStatistics> {
    mc_linkstats_detailed(kind, stats, pilot, config, n_samples, McOptions::default(), rng)
        .map(|e| e.mean)
}

#[derive(Clone)]
struct Accum {
    b: Vec<C64>,
    b_sq: Vec<f64>,
    c: Vec<C64>,
    c_sq: Vec<f64>,
    omega: Vec<f64>,
    omega_sq: Vec<f64>,
}

impl Accum {
    fn new(nl: usize, nk: usize) -> Self {
        let users = nl * nk;
        Self {
            b: vec![C64::new(0.0, 0.0); users * nl],
            b_sq: vec![0.0; users * nl],
            c: vec![C64::new(0.0, 0.0); users * nk * nl * nl],
            c_sq: vec![0.0; users * nk * nl * nl],
            omega: vec![0.0; users],
            omega_sq: vec![0.0; users],
        }
    }

    fn merge(&mut self, other: &Accum) {
        fn add<T: Copy + std::ops::AddAssign>(a: &mut [T], b: &[T]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
        add(&mut self.b, &other.b);
        add(&mut self.b_sq, &other.b_sq);
        add(&mut self.c, &other.c);
        add(&mut self.c_sq, &other.c_sq);
        add(&mut self.omega, &other.omega);
        add(&mut self.omega_sq, &other.omega_sq);
    }
}

/// One draw averaged over the sign flips of every link and noise vector.
///
/// `w_rk'` splits into components `A_rk' z_c` (one per user on pilot `k'`
/// plus noise), so `w_rk'^H g_lk^r = Σ_c q_c`. Flipping `z_c` flips `q_c`
/// unless `z_c` is `g_lk^r` itself; after averaging only `q_own` survives in
/// `b`, `Σ_c |q_c|²` on the diagonal of `C`, `q_own^r (q_own^n)^*` off it, and
/// `Σ_c ||A z_c||²` in `ω`.
fn flip_averaged_draw<R: Rng + ?Sized>(
    real: &ChannelRealization,
    bank: &EstimatorBank,
    config: &ScenarioConfig,
    rng: &mut R,
    acc: &mut Accum,
) {
    let (nl, nk) = (config.num_cells, config.users_per_cell);
    let scale = C64::new((config.tau_p as f64 * config.eta).sqrt(), 0.0);
    let parts = nl + 1;
    // comps[(r*nk + k')*parts + c]: c < nl is the pilot of user (c, k'), c = nl the noise
    let mut comps: Vec<CVec> = Vec::with_capacity(nl * nk * parts);
    for r in 0..nl {
        for kp in 0..nk {
            for c in 0..nl {
                comps.push(bank.apply(r, kp, &(real.g(c, kp, r) * scale)));
            }
            let noise = linalg::complex_normal_vec(rng, config.antennas).scale(config.sigma2.sqrt());
            comps.push(bank.apply(r, kp, &noise));
        }
    }
    let zero = C64::new(0.0, 0.0);
    let mut own = vec![zero; nl];
    let mut diag = vec![0.0; nl];
    for l in 0..nl {
        for k in 0..nk {
            let u = l * nk + k;
            let nw: f64 = comps[u * parts..(u + 1) * parts].iter().map(|v| v.norm_squared()).sum();
            acc.omega[u] += nw;
            acc.omega_sq[u] += nw * nw;
            for kp in 0..nk {
                for r in 0..nl {
                    let g = real.g(l, k, r);
                    let base = (r * nk + kp) * parts;
                    diag[r] = 0.0;
                    own[r] = zero;
                    for c in 0..parts {
                        let q = comps[base + c].dotc(g);
                        diag[r] += q.norm_sqr();
                        if kp == k && c == l {
                            own[r] = q;
                        }
                    }
                    if kp == k {
                        acc.b[u * nl + r] += own[r];
                        acc.b_sq[u * nl + r] += own[r].norm_sqr();
                    }
                }
                let base = ((u * nk + kp) * nl) * nl;
                for r in 0..nl {
                    for n in 0..nl {
                        let v = if r == n {
                            C64::new(diag[r], 0.0)
                        } else {
                            own[r] * own[n].conj()
                        };
                        acc.c[base + r * nl + n] += v;
                        acc.c_sq[base + r * nl + n] += v.norm_sqr();
                    }
                }
            }
        }
    }
}

/// [`mc_linkstats`] with options and standard errors.
pub fn mc_linkstats_detailed<R: Rng + ?Sized>(
    kind: EstimatorKind,
    stats: &ChannelStatistics,
    pilot: &PilotStatistics,
    config: &ScenarioConfig,
    n_samples: usize,
    options: McOptions,
    rng: &mut R,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::config("n_samples", "must be at least 1"));
    }
    let (nl, nk) = (stats.num_cells(), stats.users_per_cell());
    stats.nlos_sqrt()?;
    let bank = EstimatorBank::new(kind, pilot, stats, config);

    let batch = options.batch.max(1);
    let n_batches = n_samples.div_ceil(batch);
    let seeds: Vec<u64> = (0..n_batches).map(|_| rng.gen()).collect();

    let partials: Vec<Result<Accum>> = seeds
        .par_iter()
        .enumerate()
        .map(|(bi, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let count = batch.min(n_samples - bi * batch);
            let mut acc = Accum::new(nl, nk);
            // x[((l*nk + k)*nk + kp)*nl + r] = w_rk'^H g_lk^r
            let mut x = vec![C64::new(0.0, 0.0); nl * nk * nk * nl];
            for _ in 0..count {
                let real = sample_channels(stats, &mut rng)?;
                if options.symmetrize {
                    flip_averaged_draw(&real, &bank, config, &mut rng, &mut acc);
                    continue;
                }
                let mut w: Vec<CVec> = Vec::with_capacity(nl * nk);
                for r in 0..nl {
                    for k in 0..nk {
                        let z = pilot_observation(&real, r, k, config, &mut rng);
                        w.push(bank.apply(r, k, &z));
                    }
                }
                for l in 0..nl {
                    for k in 0..nk {
                        let u = l * nk + k;
                        let nw = w[u].norm_squared();
                        acc.omega[u] += nw;
                        acc.omega_sq[u] += nw * nw;
                        for kp in 0..nk {
                            for r in 0..nl {
                                x[(u * nk + kp) * nl + r] = w[r * nk + kp].dotc(real.g(l, k, r));
                            }
                        }
                        for r in 0..nl {
                            let v = x[(u * nk + k) * nl + r];
                            acc.b[u * nl + r] += v;
                            acc.b_sq[u * nl + r] += v.norm_sqr();
                        }
                        for kp in 0..nk {
                            let base = (u * nk + kp) * nl;
                            for r in 0..nl {
                                for n in 0..nl {
                                    let v = x[base + r] * x[base + n].conj();
                                    acc.c[base * nl + r * nl + n] += v;
                                    acc.c_sq[base * nl + r * nl + n] += v.norm_sqr();
                                }
                            }
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect();

    let mut total = Accum::new(nl, nk);
    for p in partials {
        total.merge(&p?);
    }

    let n = n_samples as f64;
    let se = |sum: C64, sq: f64| {
        if n_samples < 2 {
            return 0.0;
        }
        let mean = sum / n;
        ((sq / n - mean.norm_sqr()).max(0.0) / (n - 1.0)).sqrt()
    };
    let users = nl * nk;
    let mut b = Vec::with_capacity(users);
    let mut b_se = Vec::with_capacity(users);
    for u in 0..users {
        let range = u * nl..(u + 1) * nl;
        b.push(CVec::from_iterator(nl, total.b[range.clone()].iter().map(|v| v / n)));
        b_se.push(range.map(|i| se(total.b[i], total.b_sq[i])).collect());
    }
    let mut c = Vec::with_capacity(users * nk);
    let mut c_se = Vec::with_capacity(users * nk);
    for g in 0..users * nk {
        let base = g * nl * nl;
        c.push(CMat::from_fn(nl, nl, |r, s| total.c[base + r * nl + s] / n));
        c_se.push(
            (0..nl * nl)
                .map(|i| se(total.c[base + i], total.c_sq[base + i]))
                .collect(),
        );
    }
    let omega: Vec<f64> = total.omega.iter().map(|v| v / n).collect();
    let omega_se = (0..users)
        .map(|u| se(C64::new(total.omega[u], 0.0), total.omega_sq[u]))
        .collect();
    Ok(McEstimate {
        mean: LinkStatistics::from_parts(nl, nk, kind, b, c, omega)?,
        b_std_error: b_se,
        c_std_error: c_se,
        omega_std_error: omega_se,
        samples: n_samples,
    })
}

/// `true` for the entries of `C_lkk'` that vanish for every channel model:
/// cross-BS terms between different pilot groups.
pub fn structurally_zero(k: usize, kp: usize, r: usize, n: usize) -> bool {
    kp != k && r != n
}

/// Worst-case agreement between exact and sampled statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsComparison {
    pub max_rel_b: f64,
    pub max_rel_omega: f64,
    /// Over the entries that are not structurally zero.
    pub max_rel_c: f64,
    /// Largest sampled structurally-zero entry over the largest exact entry.
    pub max_zero_c_ratio: f64,
    /// Whether the exact structurally-zero entries are exactly 0.
    pub exact_zeros: bool,
}

fn rel(a: C64, b: C64) -> f64 {
    let d = (a - b).norm();
    if d == 0.0 {
        0.0
    } else {
        d / b.norm()
    }
}

/// Compare `sampled` against `exact` entrywise.
pub fn compare_linkstats(exact: &LinkStatistics, sampled: &LinkStatistics) -> Result<StatsComparison> {
    let (nl, nk) = (exact.num_cells(), exact.users_per_cell());
    if sampled.num_cells() != nl || sampled.users_per_cell() != nk {
        return Err(Error::Statistics("compared statistics differ in size".into()));
    }
    let mut out = StatsComparison {
        max_rel_b: 0.0,
        max_rel_omega: 0.0,
        max_rel_c: 0.0,
        max_zero_c_ratio: 0.0,
        exact_zeros: true,
    };
    let mut c_max = 0.0f64;
    for l in 0..nl {
        for k in 0..nk {
            for kp in 0..nk {
                c_max = c_max.max(exact.c(l, k, kp).iter().map(|x| x.norm()).fold(0.0, f64::max));
            }
        }
    }
    for l in 0..nl {
        for k in 0..nk {
            for r in 0..nl {
                out.max_rel_b = out.max_rel_b.max(rel(sampled.b(l, k)[r], exact.b(l, k)[r]));
            }
            let w = rel(
                C64::new(sampled.omega(l, k), 0.0),
                C64::new(exact.omega(l, k), 0.0),
            );
            out.max_rel_omega = out.max_rel_omega.max(w);
            for kp in 0..nk {
                let (ce, cs) = (exact.c(l, k, kp), sampled.c(l, k, kp));
                for r in 0..nl {
                    for n in 0..nl {
                        if structurally_zero(k, kp, r, n) {
                            out.exact_zeros &= ce[(r, n)] == C64::new(0.0, 0.0);
                            let ratio = if c_max > 0.0 { cs[(r, n)].norm() / c_max } else { 0.0 };
                            out.max_zero_c_ratio = out.max_zero_c_ratio.max(ratio);
                        } else {
                            out.max_rel_c = out.max_rel_c.max(rel(cs[(r, n)], ce[(r, n)]));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{is_psd, min_eigenvalue};
    use crate::scenario::{generate_network_seeded, steering_vector, LinkStats};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn quadratic_moment_identity() {
        let i = CMat::identity(5, 5);
        assert!((quadratic_moment(&i, &i) - 30.0).abs() < 1e-12);
        assert_eq!(quadratic_moment(&i, &CMat::zeros(5, 5)), 0.0);
    }

    #[test]
    fn rician_moments_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = CMat::from_fn(4, 4, |_, _| linalg::complex_normal(&mut rng));
        let a = &g * g.adjoint();
        let zero = CVec::zeros(4);
        let (first, _) = rician_moments(&a, &zero, &CMat::identity(4, 4), &a);
        assert!((first - trace(&a)).norm() < 1e-12);

        let b = CMat::from_fn(4, 4, |_, _| linalg::complex_normal(&mut rng));
        let cy = &b * &a * b.adjoint();
        let (_, second) = rician_moments(&a, &zero, &b, &cy);
        let reference = quadratic_moment(&a, &b);
        assert!((second - reference).abs() < 1e-10 * reference);
    }

    fn scenario(seed: u64, side: usize, k: usize, m: usize) -> (ScenarioConfig, ChannelStatistics, PilotStatistics) {
        let cfg = ScenarioConfig {
            seed,
            ..ScenarioConfig::small(side, k, m)
        };
        let stats = generate_network_seeded(&cfg).unwrap();
        let pilot = PilotStatistics::compute(&stats, &cfg).unwrap();
        (cfg, stats, pilot)
    }

    #[test]
    fn ls_identity_covariance_gives_trace() {
        let m = 4;
        let link = LinkStats::new(CVec::zeros(m), CMat::identity(m, m));
        let stats = ChannelStatistics::from_links(1, 1, m, vec![link]).unwrap();
        let cfg = ScenarioConfig {
            num_cells: 1,
            users_per_cell: 1,
            tau_p: 1,
            antennas: m,
            ..ScenarioConfig::default()
        };
        let pilot = PilotStatistics::compute(&stats, &cfg).unwrap();
        let ls = closed_form_linkstats(EstimatorKind::Ls, &stats, &pilot, &cfg).unwrap();
        let expect = (cfg.tau_p as f64 * cfg.eta).sqrt() * m as f64;
        assert!((ls.b(0, 0)[0] - c(expect, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn structural_zeros_and_rank_one_offdiagonal() {
        let (cfg, stats, pilot) = scenario(2, 2, 3, 6);
        for kind in [EstimatorKind::Lmmse, EstimatorKind::Ls] {
            let ls = closed_form_linkstats(kind, &stats, &pilot, &cfg).unwrap();
            for l in 0..4 {
                for k in 0..3 {
                    let b = ls.b(l, k);
                    for kp in 0..3 {
                        let m = ls.c(l, k, kp);
                        for r in 0..4 {
                            assert_eq!(m[(r, r)].im, 0.0);
                            assert!(m[(r, r)].re >= 0.0);
                            for n in 0..4 {
                                if r == n {
                                    continue;
                                }
                                if kp == k {
                                    assert_eq!(m[(r, n)], b[r] * b[n].conj());
                                } else {
                                    assert_eq!(m[(r, n)], c(0.0, 0.0));
                                }
                            }
                        }
                    }
                    let own = ls.c(l, k, k);
                    let tr = trace(own).re;
                    assert!(min_eigenvalue(own) >= -1e-8 * tr);
                    for r in 0..4 {
                        assert!(own[(r, r)].re >= b[r].norm_sqr() - 1e-10 * own[(r, r)].re.max(1e-300));
                    }
                    assert!(ls.omega(l, k) > 0.0);
                }
            }
        }
    }

    #[test]
    fn ls_b_is_real_positive_and_homogeneous() {
        let (cfg, stats, pilot) = scenario(9, 2, 2, 5);
        let ls = closed_form_linkstats(EstimatorKind::Ls, &stats, &pilot, &cfg).unwrap();
        // scale every channel power by alpha
        let alpha: f64 = 3.5;
        let scaled_links: Vec<LinkStats> = stats
            .links()
            .iter()
            .map(|l| LinkStats::new(l.gbar.scale(alpha.sqrt()), l.r.scale(alpha)))
            .collect();
        let scaled = ChannelStatistics::from_links(4, 2, 5, scaled_links).unwrap();
        let pilot2 = PilotStatistics::compute(&scaled, &cfg).unwrap();
        let ls2 = closed_form_linkstats(EstimatorKind::Ls, &scaled, &pilot2, &cfg).unwrap();
        for l in 0..4 {
            for k in 0..2 {
                for r in 0..4 {
                    let v = ls.b(l, k)[r];
                    assert_eq!(v.im, 0.0);
                    assert!(v.re > 0.0);
                    let w = ls2.b(l, k)[r];
                    assert!((w - v * alpha).norm() <= 1e-12 * w.norm());
                }
            }
        }
    }

    #[test]
    fn estimator_without_closed_form_is_rejected() {
        let (cfg, stats, pilot) = scenario(1, 1, 1, 2);
        assert!(matches!(
            closed_form_linkstats(EstimatorKind::EwLmmse, &stats, &pilot, &cfg),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn single_noiseless_los_sample_is_exact() {
        let m = 4;
        let gbar = steering_vector(m, 0.3, 0.0, 2.0);
        let link = LinkStats::new(gbar.clone(), CMat::zeros(m, m));
        let stats = ChannelStatistics::from_links(1, 1, m, vec![link]).unwrap();
        let cfg = ScenarioConfig {
            num_cells: 1,
            users_per_cell: 1,
            tau_p: 1,
            antennas: m,
            sigma2: 1e-300,
            ..ScenarioConfig::default()
        };
        let pilot = PilotStatistics::compute(&stats, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mc = mc_linkstats(EstimatorKind::Ls, &stats, &pilot, &cfg, 1, &mut rng).unwrap();
        // z^H g = sqrt(τη) ||gbar||² for any phase
        let expect = (cfg.tau_p as f64 * cfg.eta).sqrt() * gbar.norm_squared();
        assert!((mc.b(0, 0)[0] - c(expect, 0.0)).norm() < 1e-12 * expect);
        let cf = closed_form_linkstats(EstimatorKind::Ls, &stats, &pilot, &cfg).unwrap();
        assert!((cf.b(0, 0)[0] - mc.b(0, 0)[0]).norm() < 1e-12 * expect);
    }

    #[test]
    fn flip_average_agrees_with_plain_sampling() {
        let (cfg, stats, pilot) = scenario(7, 2, 2, 3);
        for kind in [EstimatorKind::Lmmse, EstimatorKind::Ls] {
            let run = |symmetrize: bool, seed: u64| {
                let opts = McOptions { symmetrize, ..McOptions::default() };
                mc_linkstats_detailed(kind, &stats, &pilot, &cfg, 20_000, opts, &mut ChaCha8Rng::seed_from_u64(seed))
                    .unwrap()
            };
            let (plain, sym) = (run(false, 1), run(true, 2));
            for u in 0..8 {
                for r in 0..4 {
                    let se = plain.b_std_error[u][r].hypot(sym.b_std_error[u][r]);
                    let diff = (plain.mean.b(u / 2, u % 2)[r] - sym.mean.b(u / 2, u % 2)[r]).norm();
                    assert!(diff <= 6.0 * se, "b {u} {r}: {diff} vs se {se}");
                    // never noisier
                    assert!(sym.b_std_error[u][r] <= plain.b_std_error[u][r] * 1.05);
                }
                for kp in 0..2 {
                    let g = u * 2 + kp;
                    let (cp, cs) = (plain.mean.c(u / 2, u % 2, kp), sym.mean.c(u / 2, u % 2, kp));
                    for i in 0..16 {
                        let (r, n) = (i / 4, i % 4);
                        let se = plain.c_std_error[g][i].hypot(sym.c_std_error[g][i]);
                        assert!((cp[(r, n)] - cs[(r, n)]).norm() <= 6.0 * se + 1e-300);
                        if structurally_zero(u % 2, kp, r, n) {
                            assert_eq!(cs[(r, n)], C64::new(0.0, 0.0));
                        }
                    }
                }
                let se = plain.omega_std_error[u].hypot(sym.omega_std_error[u]);
                assert!((plain.mean.omega(u / 2, u % 2) - sym.mean.omega(u / 2, u % 2)).abs() <= 6.0 * se);
            }
        }
    }

    #[test]
    fn mc_is_deterministic_given_seed() {
        let (cfg, stats, pilot) = scenario(5, 1, 2, 3);
        let a = mc_linkstats(EstimatorKind::Lmmse, &stats, &pilot, &cfg, 3000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = mc_linkstats(EstimatorKind::Lmmse, &stats, &pilot, &cfg, 3000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn closed_form_c_is_psd() {
        let (cfg, stats, pilot) = scenario(12, 2, 2, 8);
        let ls = closed_form_linkstats(EstimatorKind::Lmmse, &stats, &pilot, &cfg).unwrap();
        for l in 0..4 {
            for k in 0..2 {
                assert!(is_psd(ls.c(l, k, k), 1e-8));
            }
        }
    }
}
