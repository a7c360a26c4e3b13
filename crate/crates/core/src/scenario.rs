//! Network geometry and long-term channel statistics.
//!
//! A network is `L` square cells on a grid, one `M`-antenna half-wavelength
//! ULA base station per cell and `K` single-antenna users dropped uniformly in
//! each cell. Every (user, BS) link carries a LOS mean `gbar` (with a random
//! phase per coherence block) and a NLOS local-scattering covariance `R`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingKind {
    RicianCorrelated,
    RayleighUncorrelated,
}

/// Scenario parameters. JSON field names match the documented schema; angles
/// are given in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "L")]
    pub num_cells: usize,
    #[serde(rename = "K")]
    pub users_per_cell: usize,
    #[serde(rename = "M")]
    pub antennas: usize,
    pub tau_c: usize,
    pub tau_p: usize,
    pub eta: f64,
    pub rho_d: f64,
    pub sigma2: f64,
    pub cell_side: f64,
    pub min_bs_distance: f64,
    pub asd_deg: f64,
    pub pathloss_exponent_db_per_decade: f64,
    pub pathloss_intercept_db: f64,
    pub rician_k_intercept_db: f64,
    pub rician_k_slope_db_per_m: f64,
    pub height_diff_m: f64,
    pub fading_kind: FadingKind,
    pub seed: u64,
    /// Log-normal shadow fading standard deviation; `None` disables it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadow_fading_std_db: Option<f64>,
    /// Explicit BS coordinates (meters). Required when `L` is not a perfect square.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bs_positions: Option<Vec<[f64; 2]>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_cells: 16,
            users_per_cell: 8,
            antennas: 200,
            tau_c: 200,
            tau_p: 8,
            eta: 0.1,
            rho_d: 10.0,
            sigma2: dbm_to_watt(-96.0),
            cell_side: 250.0,
            min_bs_distance: 20.0,
            asd_deg: 10.0,
            pathloss_exponent_db_per_decade: 36.7,
            pathloss_intercept_db: 30.5,
            rician_k_intercept_db: 13.0,
            rician_k_slope_db_per_m: 0.03,
            height_diff_m: 11.0,
            fading_kind: FadingKind::RicianCorrelated,
            seed: 0,
            shadow_fading_std_db: None,
            bs_positions: None,
        }
    }
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl ScenarioConfig {
    /// Reduced-size network: `side`×`side` grid, `K` users, `M` antennas.
    pub fn small(side: usize, users_per_cell: usize, antennas: usize) -> Self {
        Self {
            num_cells: side * side,
            users_per_cell,
            antennas,
            tau_p: users_per_cell,
            ..Self::default()
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive and finite, got {v}")))
            }
        };
        if self.num_cells == 0 {
            return Err(Error::config("L", "must be at least 1"));
        }
        if self.users_per_cell == 0 {
            return Err(Error::config("K", "must be at least 1"));
        }
        if self.antennas == 0 {
            return Err(Error::config("M", "must be at least 1"));
        }
        if self.tau_p != self.users_per_cell {
            return Err(Error::config("tau_p", "must equal K"));
        }
        if self.tau_p >= self.tau_c {
            return Err(Error::config("tau_c", "must exceed tau_p"));
        }
        positive("eta", self.eta)?;
        positive("rho_d", self.rho_d)?;
        positive("sigma2", self.sigma2)?;
        positive("min_bs_distance", self.min_bs_distance)?;
        positive("cell_side", self.cell_side)?;
        if !(self.asd_deg >= 0.0) {
            return Err(Error::config("asd_deg", "must be nonnegative"));
        }
        if !(self.height_diff_m >= 0.0) {
            return Err(Error::config("height_diff_m", "must be nonnegative"));
        }
        // A user must fit at min_bs_distance inside its square cell.
        if self.min_bs_distance >= self.cell_side / 2.0 {
            return Err(Error::config(
                "min_bs_distance",
                "must be smaller than half the cell side",
            ));
        }
        if let Some(std) = self.shadow_fading_std_db {
            if !(std >= 0.0) {
                return Err(Error::config("shadow_fading_std_db", "must be nonnegative"));
            }
        }
        match &self.bs_positions {
            Some(pos) if pos.len() != self.num_cells => {
                return Err(Error::config("bs_positions", "length must equal L"))
            }
            None if grid_side(self.num_cells).is_none() => {
                return Err(Error::config(
                    "L",
                    "must be a perfect square unless bs_positions is given",
                ))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn pre_log(&self) -> f64 {
        (self.tau_c - self.tau_p) as f64 / self.tau_c as f64
    }

    /// BS coordinates, either explicit or cell centers of the square grid.
    pub fn base_stations(&self) -> Vec<[f64; 2]> {
        if let Some(pos) = &self.bs_positions {
            return pos.clone();
        }
        let side = grid_side(self.num_cells).unwrap_or(1);
        (0..self.num_cells)
            .map(|l| {
                let (row, col) = (l / side, l % side);
                [
                    (col as f64 + 0.5) * self.cell_side,
                    (row as f64 + 0.5) * self.cell_side,
                ]
            })
            .collect()
    }
}

fn grid_side(l: usize) -> Option<usize> {
    let s = (l as f64).sqrt().round() as usize;
    (s * s == l).then_some(s)
}

/// Half-wavelength ULA steering vector scaled to `los_gain` power per antenna.
pub fn steering_vector(m: usize, azimuth: f64, elevation: f64, los_gain: f64) -> CVec {
    let amp = los_gain.sqrt();
    let phase_step = PI * azimuth.sin() * elevation.cos();
    CVec::from_fn(m, |i, _| C64::from_polar(amp, phase_step * i as f64))
}

/// Gaussian local-scattering covariance around the effective azimuth.
///
/// Entry `(m, n)` is `gain * e^{jπ(m-n) sin φ} * e^{-(asd²/2)(π(m-n) cos φ)²}`,
/// so a zero spread gives exactly `a a^H` with `a` the unit-gain steering vector.
pub fn local_scattering_covariance(m: usize, azimuth: f64, asd: f64, nlos_gain: f64) -> CMat {
    let (s, c) = azimuth.sin_cos();
    CMat::from_fn(m, m, |i, j| {
        let d = i as f64 - j as f64;
        let spread = (-0.5 * asd * asd * (PI * d * c).powi(2)).exp();
        C64::from_polar(nlos_gain * spread, PI * d * s)
    })
}

/// Long-term description of one (user, BS) link.
#[derive(Debug, Clone)]
pub struct LinkStats {
    /// LOS mean (includes the LOS gain).
    pub gbar: CVec,
    /// NLOS covariance.
    pub r: CMat,
    /// `R + gbar gbar^H`.
    pub rbar: CMat,
    pub azimuth: f64,
    pub elevation: f64,
    pub distance_2d: f64,
    /// Total path gain (linear).
    pub gain: f64,
}

impl LinkStats {
    pub fn new(gbar: CVec, r: CMat) -> Self {
        let rbar = &r + linalg::outer(&gbar, &gbar);
        Self {
            gbar,
            r,
            rbar,
            azimuth: 0.0,
            elevation: 0.0,
            distance_2d: 0.0,
            gain: 0.0,
        }
    }
}

/// Long-term channel state for every (cell l, user k, BS r) triple.
#[derive(Debug)]
pub struct ChannelStatistics {
    num_cells: usize,
    users_per_cell: usize,
    antennas: usize,
    links: Vec<LinkStats>,
    pub user_positions: Vec<[f64; 2]>,
    pub bs_positions: Vec<[f64; 2]>,
    nlos_sqrt: OnceLock<Result<Vec<CMat>>>,
}

impl Clone for ChannelStatistics {
    fn clone(&self) -> Self {
        Self {
            num_cells: self.num_cells,
            users_per_cell: self.users_per_cell,
            antennas: self.antennas,
            links: self.links.clone(),
            user_positions: self.user_positions.clone(),
            bs_positions: self.bs_positions.clone(),
            nlos_sqrt: OnceLock::new(),
        }
    }
}

impl ChannelStatistics {
    /// Build from links ordered `[l][k][r]` (r fastest).
    pub fn from_links(
        num_cells: usize,
        users_per_cell: usize,
        antennas: usize,
        links: Vec<LinkStats>,
    ) -> Result<Self> {
        if links.len() != num_cells * users_per_cell * num_cells {
            return Err(Error::Statistics(format!(
                "expected {} links, got {}",
                num_cells * users_per_cell * num_cells,
                links.len()
            )));
        }
        for link in &links {
            if link.gbar.len() != antennas || link.r.nrows() != antennas || link.r.ncols() != antennas
            {
                return Err(Error::Statistics("link dimension mismatch".into()));
            }
        }
        Ok(Self {
            num_cells,
            users_per_cell,
            antennas,
            links,
            user_positions: Vec::new(),
            bs_positions: Vec::new(),
            nlos_sqrt: OnceLock::new(),
        })
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users_per_cell
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    fn index(&self, l: usize, k: usize, r: usize) -> usize {
        (l * self.users_per_cell + k) * self.num_cells + r
    }

    /// Link between user `k` of cell `l` and BS `r`.
    pub fn link(&self, l: usize, k: usize, r: usize) -> &LinkStats {
        &self.links[self.index(l, k, r)]
    }

    pub fn links(&self) -> &[LinkStats] {
        &self.links
    }

    /// Square-root factors of every NLOS covariance, computed on first use.
    pub fn nlos_sqrt(&self) -> Result<&[CMat]> {
        let cached = self.nlos_sqrt.get_or_init(|| {
            self.links
                .iter()
                .map(|link| linalg::hermitian_sqrt(&link.r))
                .collect()
        });
        match cached {
            Ok(v) => Ok(v),
            Err(e) => Err(Error::Statistics(e.to_string())),
        }
    }
}

/// One coherence block worth of channel vectors.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    num_cells: usize,
    users_per_cell: usize,
    pub g: Vec<CVec>,
    pub theta: Vec<f64>,
}

impl ChannelRealization {
    pub fn g(&self, l: usize, k: usize, r: usize) -> &CVec {
        &self.g[(l * self.users_per_cell + k) * self.num_cells + r]
    }

    pub fn theta(&self, l: usize, k: usize, r: usize) -> f64 {
        self.theta[(l * self.users_per_cell + k) * self.num_cells + r]
    }
}

/// Drop users and compute every link's LOS vector and NLOS covariance.
pub fn generate_network<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<ChannelStatistics> {
    config.validate()?;
    let l_cells = config.num_cells;
    let k_users = config.users_per_cell;
    let m = config.antennas;
    let bs = config.base_stations();
    let half = config.cell_side / 2.0;
    let asd = config.asd_deg.to_radians();

    let mut users = Vec::with_capacity(l_cells * k_users);
    for center in &bs {
        for _ in 0..k_users {
            loop {
                let x = center[0] + rng.gen_range(-half..half);
                let y = center[1] + rng.gen_range(-half..half);
                if (x - center[0]).hypot(y - center[1]) >= config.min_bs_distance {
                    users.push([x, y]);
                    break;
                }
            }
        }
    }

    let mut links = Vec::with_capacity(l_cells * k_users * l_cells);
    for user in &users {
        for site in &bs {
            let dx = user[0] - site[0];
            let dy = user[1] - site[1];
            let d2 = dx.hypot(dy);
            let d3 = d2.hypot(config.height_diff_m);
            let mut gain_db = -(config.pathloss_intercept_db
                + config.pathloss_exponent_db_per_decade * d3.log10());
            if let Some(std) = config.shadow_fading_std_db {
                let z: f64 = rng.sample(StandardNormal);
                gain_db += std * z;
            }
            let gain = db_to_linear(gain_db);
            let azimuth = dy.atan2(dx);
            // Users sit below the BS array.
            let elevation = -(config.height_diff_m.atan2(d2));

            let (gbar, r) = match config.fading_kind {
                FadingKind::RayleighUncorrelated => (
                    CVec::zeros(m),
                    CMat::from_diagonal_element(m, m, C64::new(gain, 0.0)),
                ),
                FadingKind::RicianCorrelated => {
                    let kappa = db_to_linear(
                        config.rician_k_intercept_db - config.rician_k_slope_db_per_m * d2,
                    );
                    let los_fraction = (kappa / (1.0 + kappa)).clamp(0.0, 1.0);
                    let effective = (azimuth.sin() * elevation.cos()).clamp(-1.0, 1.0).asin();
                    (
                        steering_vector(m, azimuth, elevation, gain * los_fraction),
                        local_scattering_covariance(m, effective, asd, gain * (1.0 - los_fraction)),
                    )
                }
            };
            let mut link = LinkStats::new(gbar, r);
            link.azimuth = azimuth;
            link.elevation = elevation;
            link.distance_2d = d2;
            link.gain = gain;
            links.push(link);
        }
    }

    let mut stats = ChannelStatistics::from_links(l_cells, k_users, m, links)?;
    stats.user_positions = users;
    stats.bs_positions = bs;
    Ok(stats)
}

/// Convenience: generate with an RNG seeded from `config.seed`.
pub fn generate_network_seeded(config: &ScenarioConfig) -> Result<ChannelStatistics> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    generate_network(config, &mut rng)
}

/// Draw `g = e^{jθ} gbar + g̃` for every link.
pub fn sample_channels<R: Rng + ?Sized>(
    stats: &ChannelStatistics,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let sqrt = stats.nlos_sqrt()?;
    let m = stats.antennas();
    let mut g = Vec::with_capacity(stats.links.len());
    let mut theta = Vec::with_capacity(stats.links.len());
    for (link, s) in stats.links.iter().zip(sqrt) {
        let phase = rng.gen_range(0.0..2.0 * PI);
        let white = linalg::complex_normal_vec(rng, m);
        let mut v = s * white;
        v.axpy(C64::from_polar(1.0, phase), &link.gbar, C64::new(1.0, 0.0));
        g.push(v);
        theta.push(phase);
    }
    Ok(ChannelRealization {
        num_cells: stats.num_cells,
        users_per_cell: stats.users_per_cell,
        g,
        theta,
    })
}
