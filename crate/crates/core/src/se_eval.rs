//! SINR, spectral efficiency, MSE and transmit power for given LSFP weights.
//!
//! User (l, k) receives `Σ_r a_rk^H w_rk` style combinations of the local MR
//! precoders; with the link statistics of [`crate::linkstats`] every quantity
//! below is a quadratic form in the weight vectors `a_lk ∈ C^L`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{quad_form, CVec, C64};
use crate::linkstats::LinkStatistics;

/// Round-off window for the beamforming-uncertainty power, relative to the
/// larger of `a^H C a` and the desired-signal power.
pub const BU_CLIP: f64 = 1e-10;

/// Second-layer weights `a_lk` (one complex L-vector per user) and their
/// support.
#[derive(Debug, Clone, PartialEq)]
pub struct LsfpWeights {
    num_cells: usize,
    users_per_cell: usize,
    a: Vec<CVec>,
    mask: Vec<Vec<bool>>,
}

impl LsfpWeights {
    /// All-zero weights with the given support.
    pub fn zeros(num_cells: usize, users_per_cell: usize, mask: Vec<Vec<bool>>) -> Result<Self> {
        if mask.len() != num_cells * users_per_cell || mask.iter().any(|m| m.len() != num_cells) {
            return Err(Error::config("support_mask", "dimension mismatch"));
        }
        Ok(Self {
            num_cells,
            users_per_cell,
            a: vec![CVec::zeros(num_cells); num_cells * users_per_cell],
            mask,
        })
    }

    /// Every entry supported (full LSFP).
    pub fn full_mask(num_cells: usize, users_per_cell: usize) -> Vec<Vec<bool>> {
        vec![vec![true; num_cells]; num_cells * users_per_cell]
    }

    /// Only the serving BS (single-layer precoding).
    pub fn slp_mask(num_cells: usize, users_per_cell: usize) -> Vec<Vec<bool>> {
        (0..num_cells * users_per_cell)
            .map(|idx| {
                let l = idx / users_per_cell;
                (0..num_cells).map(|r| r == l).collect()
            })
            .collect()
    }

    /// Full support for the users in `selected`, serving BS only otherwise.
    pub fn partial_mask(
        num_cells: usize,
        users_per_cell: usize,
        selected: &[(usize, usize)],
    ) -> Vec<Vec<bool>> {
        let mut mask = Self::slp_mask(num_cells, users_per_cell);
        for &(l, k) in selected {
            mask[l * users_per_cell + k] = vec![true; num_cells];
        }
        mask
    }

    /// Build from explicit vectors; entries outside the mask must be zero.
    pub fn from_vectors(
        num_cells: usize,
        users_per_cell: usize,
        a: Vec<CVec>,
        mask: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let mut w = Self::zeros(num_cells, users_per_cell, mask)?;
        if a.len() != num_cells * users_per_cell || a.iter().any(|v| v.len() != num_cells) {
            return Err(Error::config("weights", "dimension mismatch"));
        }
        for (idx, v) in a.into_iter().enumerate() {
            for (r, x) in v.iter().enumerate() {
                if !w.mask[idx][r] && *x != C64::new(0.0, 0.0) {
                    return Err(Error::InvariantViolation(format!(
                        "weight of user {idx} is nonzero at unsupported BS {r}"
                    )));
                }
            }
            w.a[idx] = v;
        }
        Ok(w)
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users_per_cell
    }

    pub fn a(&self, l: usize, k: usize) -> &CVec {
        &self.a[l * self.users_per_cell + k]
    }

    /// Overwrite `a_lk`; unsupported entries are forced to zero.
    pub fn set(&mut self, l: usize, k: usize, v: &CVec) {
        let idx = l * self.users_per_cell + k;
        for r in 0..self.num_cells {
            self.a[idx][r] = if self.mask[idx][r] { v[r] } else { C64::new(0.0, 0.0) };
        }
    }

    pub fn mask(&self, l: usize, k: usize) -> &[bool] {
        &self.mask[l * self.users_per_cell + k]
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.mask
    }

    pub fn vectors(&self) -> &[CVec] {
        &self.a
    }

    /// Multiply `a_lk` by a scalar (used by property tests and line search).
    pub fn scale_user(&mut self, l: usize, k: usize, s: C64) {
        let idx = l * self.users_per_cell + k;
        self.a[idx] *= s;
    }

    pub fn dump(&self) -> WeightsDump {
        let (nl, nk) = (self.num_cells, self.users_per_cell);
        WeightsDump {
            num_cells: nl,
            users_per_cell: nk,
            a: (0..nl)
                .map(|l| (0..nk).map(|k| self.a(l, k).iter().copied().collect()).collect())
                .collect(),
            support_mask: (0..nl)
                .map(|l| (0..nk).map(|k| self.mask(l, k).to_vec()).collect())
                .collect(),
        }
    }
}

/// JSON debug form of [`LsfpWeights`], indexed `[l][k][r]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsDump {
    pub num_cells: usize,
    pub users_per_cell: usize,
    pub a: Vec<Vec<Vec<C64>>>,
    pub support_mask: Vec<Vec<Vec<bool>>>,
}

/// Received-signal term powers of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinrBreakdown {
    /// Desired signal over the average effective channel.
    pub ds_power: f64,
    /// Beamforming gain uncertainty.
    pub bu_power: f64,
    /// Interference from users sharing the pilot.
    pub pc_power: f64,
    /// Interference from the other pilot groups.
    pub ni_power: f64,
    pub sinr: f64,
}

fn check_dims(weights: &LinkStatistics, w: &LsfpWeights) -> Result<()> {
    if weights.num_cells() != w.num_cells() || weights.users_per_cell() != w.users_per_cell() {
        return Err(Error::config("weights", "dimensions differ from link statistics"));
    }
    Ok(())
}

/// `Σ_r a_rk'^H C_lkk' a_rk'` for one pilot group `kp`.
fn group_interference(l: usize, k: usize, kp: usize, w: &LsfpWeights, ls: &LinkStatistics) -> f64 {
    let c = ls.c(l, k, kp);
    (0..ls.num_cells())
        .map(|r| quad_form(w.a(r, kp), c, w.a(r, kp)).re)
        .sum()
}

/// `Σ_{r,k'} a_rk'^H C_lkk' a_rk'`: total received power of user (l, k).
pub fn received_power(l: usize, k: usize, w: &LsfpWeights, ls: &LinkStatistics) -> f64 {
    (0..ls.users_per_cell())
        .map(|kp| group_interference(l, k, kp, w, ls))
        .sum()
}

pub fn sinr_breakdown(
    l: usize,
    k: usize,
    weights: &LsfpWeights,
    ls: &LinkStatistics,
    sigma2: f64,
) -> Result<SinrBreakdown> {
    check_dims(ls, weights)?;
    let a = weights.a(l, k);
    let ds_power = a.dotc(ls.b(l, k)).norm_sqr();
    let own = quad_form(a, ls.c(l, k, k), a).re;
    let mut bu_power = own - ds_power;
    if bu_power < 0.0 {
        let scale = own.abs().max(ds_power).max(f64::MIN_POSITIVE);
        if bu_power < -BU_CLIP * scale {
            return Err(Error::InvariantViolation(format!(
                "beamforming uncertainty power {bu_power:.3e} of user ({l},{k}) is negative"
            )));
        }
        bu_power = 0.0;
    }
    let pc_power: f64 = (0..ls.num_cells())
        .filter(|&r| r != l)
        .map(|r| quad_form(weights.a(r, k), ls.c(l, k, k), weights.a(r, k)).re)
        .sum::<f64>()
        .max(0.0);
    let ni_power: f64 = (0..ls.users_per_cell())
        .filter(|&kp| kp != k)
        .map(|kp| group_interference(l, k, kp, weights, ls))
        .sum::<f64>()
        .max(0.0);
    let sinr = ds_power / (bu_power + pc_power + ni_power + sigma2);
    Ok(SinrBreakdown {
        ds_power,
        bu_power,
        pc_power,
        ni_power,
        sinr,
    })
}

/// SINR of every user, ordered `[l][k]`.
pub fn all_sinrs(weights: &LsfpWeights, ls: &LinkStatistics, sigma2: f64) -> Result<Vec<f64>> {
    let (nl, nk) = (ls.num_cells(), ls.users_per_cell());
    (0..nl * nk)
        .map(|idx| sinr_breakdown(idx / nk, idx % nk, weights, ls, sigma2).map(|s| s.sinr))
        .collect()
}

/// `((τ_c − τ_p)/τ_c) log2(1 + SINR)`.
pub fn spectral_efficiency(sinr: f64, tau_c: usize, tau_p: usize) -> f64 {
    (tau_c - tau_p) as f64 / tau_c as f64 * sinr.max(0.0).ln_1p() / std::f64::consts::LN_2
}

/// MSE of detecting the symbol of user (l, k) with receiver scalar `u`.
pub fn mse_value(
    u: C64,
    l: usize,
    k: usize,
    weights: &LsfpWeights,
    ls: &LinkStatistics,
    sigma2: f64,
) -> f64 {
    let total = received_power(l, k, weights, ls) + sigma2;
    let cross = (u.conj() * weights.a(l, k).dotc(ls.b(l, k))).re;
    let e = u.norm_sqr() * total - 2.0 * cross + 1.0;
    if e < 0.0 && e >= -1e-12 {
        0.0
    } else {
        e
    }
}

/// Long-term transmit power of BS `l`: `Σ_k ω_lk Σ_r |a_rk^l|²`.
pub fn power_used(l: usize, weights: &LsfpWeights, ls: &LinkStatistics) -> f64 {
    (0..ls.users_per_cell())
        .map(|k| {
            let s: f64 = (0..ls.num_cells()).map(|r| weights.a(r, k)[l].norm_sqr()).sum();
            ls.omega(l, k) * s
        })
        .sum()
}
