//! Experiment runner: many random setups, several precoding schemes, per-user
//! SE, CDFs and percentile summaries written as CSV/JSON.
//!
//! Every setup draws from its own ChaCha stream (`seed`, stream = setup
//! index), setups run in parallel, and results are reduced in setup order, so
//! outputs are byte-identical for a fixed seed regardless of thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{EstimatorKind, PilotStatistics};
use crate::linkstats::{
    closed_form_linkstats, compare_linkstats, mc_linkstats_detailed, LinkStatistics, McOptions,
    StatsComparison,
};
use crate::optimizer::{
    lpa_weights, select_partial_indices, wmmse_solve, Objective, SelectionMethod, SolverOptions,
    WmmseDiagnostics,
};
use crate::scenario::{generate_network, ScenarioConfig};
use crate::se_eval::{power_used, sinr_breakdown, spectral_efficiency, LsfpWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Precoding {
    #[serde(rename = "LSFP")]
    Lsfp,
    #[serde(rename = "SLP")]
    Slp,
    #[serde(rename = "LPA")]
    Lpa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialSpec {
    pub method: SelectionMethod,
    /// `None` means `L*K/2`.
    pub n_d: Option<usize>,
}

/// One precoding scheme.
///
/// Textual form: `BASE[:N_D][@ESTIMATOR]` with `BASE` one of `LSFP-SumSE`,
/// `LSFP-PropFair`, `SLP-SumSE`, `SLP-PropFair`, `P-DS-LSFP-SumSE`,
/// `P-DS+Int-LSFP-SumSE` (and the `PropFair` variants of both), `LPA`;
/// `ESTIMATOR` is `LMMSE` (default) or `LS`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub name: String,
    pub estimator: EstimatorKind,
    pub precoding: Precoding,
    pub objective: Option<Objective>,
    pub partial: Option<PartialSpec>,
}

impl SchemeSpec {
    pub fn validate(&self) -> Result<()> {
        match (self.precoding, self.objective, self.partial) {
            (Precoding::Lpa, Some(_), _) => Err(Error::config("schemes", "LPA takes no objective")),
            (Precoding::Lpa | Precoding::Slp, _, Some(_)) => {
                Err(Error::config("schemes", "partial selection requires LSFP"))
            }
            (Precoding::Lsfp | Precoding::Slp, None, _) => {
                Err(Error::config("schemes", format!("{} needs an objective", self.name)))
            }
            _ if self.estimator == EstimatorKind::EwLmmse => Err(Error::config(
                "schemes",
                "only LMMSE and LS estimators are supported",
            )),
            _ => Ok(()),
        }
    }

    /// Number of selected users with full support.
    pub fn n_d(&self, config: &ScenarioConfig) -> usize {
        let lk = config.num_cells * config.users_per_cell;
        match (self.precoding, self.partial) {
            (Precoding::Lsfp, Some(p)) => p.n_d.unwrap_or(lk / 2),
            (Precoding::Lsfp, None) => lk,
            _ => 0,
        }
    }

    /// Downlink symbols shared over the fronthaul per coherence block.
    pub fn fronthaul_symbols(&self, config: &ScenarioConfig) -> usize {
        (config.tau_c - config.tau_p) * self.n_d(config)
    }

    /// Parse a comma-separated list.
    pub fn parse_list(list: &str) -> Result<Vec<Self>> {
        let schemes: Vec<Self> = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if schemes.is_empty() {
            return Err(Error::config("schemes", "at least one scheme is required"));
        }
        Ok(schemes)
    }
}

impl FromStr for SchemeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let name = s.trim().to_string();
        let (rest, estimator) = match name.rsplit_once('@') {
            Some((head, "LMMSE")) => (head, EstimatorKind::Lmmse),
            Some((head, "LS")) => (head, EstimatorKind::Ls),
            Some((_, other)) => {
                return Err(Error::config("schemes", format!("unknown estimator `{other}`")))
            }
            None => (name.as_str(), EstimatorKind::Lmmse),
        };
        let (base, n_d) = match rest.rsplit_once(':') {
            Some((head, n)) => {
                let n = n
                    .parse::<usize>()
                    .map_err(|_| Error::config("schemes", format!("bad N_D in `{name}`")))?;
                (head, Some(n))
            }
            None => (rest, None),
        };
        let objective_of = |tail: &str| match tail {
            "SumSE" => Ok(Objective::SumSe),
            "PropFair" => Ok(Objective::PropFair),
            _ => Err(Error::config("schemes", format!("unknown scheme `{name}`"))),
        };
        let (precoding, objective, method) = if base == "LPA" {
            (Precoding::Lpa, None, None)
        } else if let Some(t) = base.strip_prefix("P-DS+Int-LSFP-") {
            (Precoding::Lsfp, Some(objective_of(t)?), Some(SelectionMethod::DsInt))
        } else if let Some(t) = base.strip_prefix("P-DS-LSFP-") {
            (Precoding::Lsfp, Some(objective_of(t)?), Some(SelectionMethod::Ds))
        } else if let Some(t) = base.strip_prefix("LSFP-") {
            (Precoding::Lsfp, Some(objective_of(t)?), None)
        } else if let Some(t) = base.strip_prefix("SLP-") {
            (Precoding::Slp, Some(objective_of(t)?), None)
        } else {
            return Err(Error::config("schemes", format!("unknown scheme `{name}`")));
        };
        if n_d.is_some() && method.is_none() {
            return Err(Error::config("schemes", format!("N_D given for non-partial `{name}`")));
        }
        let spec = SchemeSpec {
            name,
            estimator,
            precoding,
            objective,
            partial: method.map(|method| PartialSpec { method, n_d }),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub n_setups: usize,
    pub seed: u64,
    /// Objective is overridden per scheme.
    pub solver: SolverOptions,
    /// Compare closed forms against this many channel draws per setup.
    pub mc_validate: Option<usize>,
    /// Keep link statistics and weights for debug dumps.
    pub keep_debug: bool,
}

impl ExperimentOptions {
    pub fn new(n_setups: usize, seed: u64) -> Self {
        Self {
            n_setups,
            seed,
            solver: SolverOptions::default(),
            mc_validate: None,
            keep_debug: false,
        }
    }
}

/// Result of one scheme on one setup.
#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    /// Per-user SE (bits/s/Hz, pre-log included), ordered `[l][k]`.
    pub se: Vec<f64>,
    /// `max_l power_used(l) / ρ_d`.
    pub max_power_ratio: f64,
    pub diagnostics: Option<WmmseDiagnostics>,
    pub weights: Option<LsfpWeights>,
}

impl SchemeOutcome {
    pub fn converged(&self) -> bool {
        self.diagnostics
            .as_ref()
            .map_or(true, |d| d.converged && d.all_inner_converged())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McCheck {
    pub estimator: EstimatorKind,
    pub samples: usize,
    pub comparison: StatsComparison,
}

#[derive(Debug, Clone)]
pub struct SetupRecord {
    pub setup: usize,
    /// One per scheme, in scheme order.
    pub outcomes: Vec<SchemeOutcome>,
    pub mc_checks: Vec<McCheck>,
    pub linkstats: Vec<LinkStatistics>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ScenarioConfig,
    pub schemes: Vec<SchemeSpec>,
    pub seed: u64,
    pub setups: Vec<SetupRecord>,
}

fn run_scheme(
    scheme: &SchemeSpec,
    ls: &LinkStatistics,
    config: &ScenarioConfig,
    base: &SolverOptions,
    keep: bool,
) -> Result<SchemeOutcome> {
    let (nl, nk) = (config.num_cells, config.users_per_cell);
    let (weights, diagnostics) = match scheme.precoding {
        Precoding::Lpa => (lpa_weights(ls, config)?, None),
        Precoding::Slp | Precoding::Lsfp => {
            let options = SolverOptions {
                objective: scheme.objective.expect("validated scheme"),
                ..base.clone()
            };
            let mask = match (scheme.precoding, scheme.partial) {
                (Precoding::Slp, _) => LsfpWeights::slp_mask(nl, nk),
                (_, Some(p)) => {
                    select_partial_indices(p.method, ls, scheme.n_d(config))?.mask(nl, nk)
                }
                _ => LsfpWeights::full_mask(nl, nk),
            };
            let sol = wmmse_solve(ls, config, &options, mask)?;
            (sol.weights, Some(sol.diagnostics))
        }
    };
    let se = (0..nl * nk)
        .map(|idx| {
            sinr_breakdown(idx / nk, idx % nk, &weights, ls, config.sigma2)
                .map(|s| spectral_efficiency(s.sinr, config.tau_c, config.tau_p))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_power_ratio = (0..nl)
        .map(|l| power_used(l, &weights, ls) / config.rho_d)
        .fold(0.0, f64::max);
    Ok(SchemeOutcome {
        se,
        max_power_ratio,
        diagnostics,
        weights: keep.then_some(weights),
    })
}

fn estimators_used(schemes: &[SchemeSpec]) -> Vec<EstimatorKind> {
    let mut out: Vec<EstimatorKind> = Vec::new();
    for s in schemes {
        if !out.contains(&s.estimator) {
            out.push(s.estimator);
        }
    }
    out
}

fn run_setup(
    idx: usize,
    config: &ScenarioConfig,
    schemes: &[SchemeSpec],
    options: &ExperimentOptions,
) -> Result<SetupRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(idx as u64);
    let stats = generate_network(config, &mut rng)?;
    let pilot = PilotStatistics::compute(&stats, config)?;
    let kinds = estimators_used(schemes);
    let linkstats = kinds
        .iter()
        .map(|&kind| closed_form_linkstats(kind, &stats, &pilot, config))
        .collect::<Result<Vec<_>>>()?;
    let mut mc_checks = Vec::new();
    if let Some(samples) = options.mc_validate {
        for (kind, exact) in kinds.iter().zip(&linkstats) {
            let est = mc_linkstats_detailed(
                *kind,
                &stats,
                &pilot,
                config,
                samples,
                McOptions {
                    symmetrize: true,
                    ..McOptions::default()
                },
                &mut rng,
            )?;
            mc_checks.push(McCheck {
                estimator: *kind,
                samples,
                comparison: compare_linkstats(exact, &est.mean)?,
            });
        }
    }
    let mut solver = options.solver.clone();
    solver.seed = options.solver.seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let outcomes = schemes
        .iter()
        .map(|scheme| {
            let ls = &linkstats[kinds.iter().position(|&k| k == scheme.estimator).unwrap()];
            run_scheme(scheme, ls, config, &solver, options.keep_debug)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SetupRecord {
        setup: idx,
        outcomes,
        mc_checks,
        linkstats: if options.keep_debug { linkstats } else { Vec::new() },
    })
}

/// Run every scheme on `options.n_setups` random setups.
pub fn run_experiment(
    config: &ScenarioConfig,
    schemes: &[SchemeSpec],
    options: &ExperimentOptions,
) -> Result<ExperimentResult> {
    config.validate()?;
    options.solver.validate()?;
    if options.n_setups == 0 {
        return Err(Error::config("setups", "must be at least 1"));
    }
    if schemes.is_empty() {
        return Err(Error::config("schemes", "at least one scheme is required"));
    }
    for s in schemes {
        s.validate()?;
        let lk = config.num_cells * config.users_per_cell;
        if s.n_d(config) > lk {
            return Err(Error::config("schemes", format!("N_D of `{}` exceeds L*K", s.name)));
        }
    }
    let setups = (0..options.n_setups)
        .into_par_iter()
        .map(|idx| run_setup(idx, config, schemes, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        config: config.clone(),
        schemes: schemes.to_vec(),
        seed: options.seed,
        setups,
    })
}

/// Lower empirical quantile: the value at index `ceil(p n) − 1`, clamped.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput("percentile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config("p", "must lie in [0, 1]"));
    }
    let n = sorted.len();
    let idx = ((p * n as f64).ceil() as isize - 1).clamp(0, n as isize - 1) as usize;
    Ok(sorted[idx])
}

/// Round to 12 significant digits.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub runs: usize,
    pub converged: usize,
    pub not_converged: usize,
    /// Runs in which some inner ADMM solve hit its iteration cap.
    pub inner_not_converged: usize,
    pub stopped_without_ascent: usize,
    pub mean_outer_iterations: f64,
    pub max_outer_iterations: usize,
    pub damped_steps: usize,
    /// Setup indices of runs that did not converge.
    pub failed_setups: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub estimator: EstimatorKind,
    pub samples: usize,
    pub median_se: f64,
    /// 90% likely SE.
    pub p10_se: f64,
    pub p05_se: f64,
    pub mean_se: f64,
    /// Sum over all users and setups.
    pub sum_se: f64,
    pub mean_sum_se_per_setup: f64,
    pub n_d: usize,
    pub fronthaul_symbols_per_block: usize,
    pub max_power_ratio: f64,
    pub convergence: Option<ConvergenceStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub n_setups: usize,
    pub config: ScenarioConfig,
    pub schemes: Vec<SchemeSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub mc_validation: Vec<BTreeMap<String, f64>>,
}

impl ExperimentResult {
    /// All SE values of scheme `s`, in setup/user order.
    pub fn scheme_se(&self, s: usize) -> Vec<f64> {
        self.setups
            .iter()
            .flat_map(|r| r.outcomes[s].se.iter().copied())
            .collect()
    }

    /// Per-setup sum SE of scheme `s`.
    pub fn setup_sum_se(&self, s: usize) -> Vec<f64> {
        self.setups.iter().map(|r| r.outcomes[s].se.iter().sum()).collect()
    }

    pub fn any_not_converged(&self) -> bool {
        self.setups
            .iter()
            .any(|r| r.outcomes.iter().any(|o| !o.converged()))
    }

    pub fn summary(&self) -> Result<Summary> {
        let mut schemes = Vec::new();
        for (s, spec) in self.schemes.iter().enumerate() {
            let mut se = self.scheme_se(s);
            se.sort_by(f64::total_cmp);
            let n = se.len();
            let total: f64 = se.iter().sum();
            let convergence = if spec.precoding == Precoding::Lpa {
                None
            } else {
                let diags: Vec<(usize, &WmmseDiagnostics)> = self
                    .setups
                    .iter()
                    .filter_map(|r| r.outcomes[s].diagnostics.as_ref().map(|d| (r.setup, d)))
                    .collect();
                let runs = diags.len();
                let failed: Vec<usize> = diags
                    .iter()
                    .filter(|(_, d)| !(d.converged && d.all_inner_converged()))
                    .map(|(i, _)| *i)
                    .collect();
                Some(ConvergenceStats {
                    runs,
                    converged: diags.iter().filter(|(_, d)| d.converged).count(),
                    not_converged: diags.iter().filter(|(_, d)| !d.converged).count(),
                    inner_not_converged: diags.iter().filter(|(_, d)| !d.all_inner_converged()).count(),
                    stopped_without_ascent: diags
                        .iter()
                        .filter(|(_, d)| d.stop_reason == crate::optimizer::StopReason::NoAscent)
                        .count(),
                    mean_outer_iterations: sig12(
                        diags.iter().map(|(_, d)| d.outer_iterations as f64).sum::<f64>()
                            / runs.max(1) as f64,
                    ),
                    max_outer_iterations: diags.iter().map(|(_, d)| d.outer_iterations).max().unwrap_or(0),
                    damped_steps: diags.iter().map(|(_, d)| d.damped_steps).sum(),
                    failed_setups: failed,
                })
            };
            schemes.push(SchemeSummary {
                scheme: spec.name.clone(),
                estimator: spec.estimator,
                samples: n,
                median_se: sig12(percentile(&se, 0.5)?),
                p10_se: sig12(percentile(&se, 0.1)?),
                p05_se: sig12(percentile(&se, 0.05)?),
                mean_se: sig12(total / n as f64),
                sum_se: sig12(total),
                mean_sum_se_per_setup: sig12(total / self.setups.len() as f64),
                n_d: spec.n_d(&self.config),
                fronthaul_symbols_per_block: spec.fronthaul_symbols(&self.config),
                max_power_ratio: sig12(
                    self.setups
                        .iter()
                        .map(|r| r.outcomes[s].max_power_ratio)
                        .fold(0.0, f64::max),
                ),
                convergence,
            });
        }
        let mc_validation = self
            .setups
            .iter()
            .flat_map(|r| {
                r.mc_checks.iter().map(move |c| {
                    let mut m = BTreeMap::new();
                    m.insert("setup".to_string(), r.setup as f64);
                    m.insert("samples".to_string(), c.samples as f64);
                    m.insert(format!("max_rel_b_{}", c.estimator), sig12(c.comparison.max_rel_b));
                    m.insert(format!("max_rel_omega_{}", c.estimator), sig12(c.comparison.max_rel_omega));
                    m.insert(format!("max_rel_c_{}", c.estimator), sig12(c.comparison.max_rel_c));
                    m.insert(
                        format!("max_zero_c_ratio_{}", c.estimator),
                        sig12(c.comparison.max_zero_c_ratio),
                    );
                    m
                })
            })
            .collect();
        Ok(Summary {
            seed: self.seed,
            n_setups: self.setups.len(),
            config: self.config.clone(),
            schemes,
            mc_validation,
        })
    }
}

/// Options for [`emit_outputs`].
#[derive(Debug, Clone, Copy, Default)]
pub struct EmitOptions {
    pub svg: bool,
    pub debug_dump: bool,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Write `per_user_se.csv`, `cdf.csv`, `summary.json` (and optionally
/// `cdf.svg` and a `debug/` directory) into `out_dir`. Returns the paths
/// written.
pub fn emit_outputs(result: &ExperimentResult, out_dir: &Path, options: EmitOptions) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let nk = result.config.users_per_cell;
    let mut written = Vec::new();

    let mut table = String::from("setup,scheme,cell,user,se_bps_hz\n");
    for rec in &result.setups {
        for (s, spec) in result.schemes.iter().enumerate() {
            for (idx, v) in rec.outcomes[s].se.iter().enumerate() {
                let _ = writeln!(table, "{},{},{},{},{}", rec.setup, spec.name, idx / nk, idx % nk, sig12(*v));
            }
        }
    }
    let path = out_dir.join("per_user_se.csv");
    write_file(&path, &table)?;
    written.push(path);

    let mut cdf = String::from("scheme,se_bps_hz,cdf\n");
    let mut curves = Vec::new();
    for (s, spec) in result.schemes.iter().enumerate() {
        let mut se = result.scheme_se(s);
        se.sort_by(f64::total_cmp);
        let n = se.len();
        for (i, v) in se.iter().enumerate() {
            let _ = writeln!(cdf, "{},{},{}", spec.name, sig12(*v), sig12((i + 1) as f64 / n as f64));
        }
        curves.push((spec.name.clone(), se));
    }
    let path = out_dir.join("cdf.csv");
    write_file(&path, &cdf)?;
    written.push(path);

    let path = out_dir.join("summary.json");
    let mut text = to_json(&path, &result.summary()?)?;
    text.push('\n');
    write_file(&path, &text)?;
    written.push(path);

    if options.svg {
        let path = out_dir.join("cdf.svg");
        write_file(&path, &render_svg(&curves))?;
        written.push(path);
    }

    if options.debug_dump {
        let dir = out_dir.join("debug");
        std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        for rec in &result.setups {
            for ls in &rec.linkstats {
                let path = dir.join(format!("setup{}_linkstats_{}.json", rec.setup, ls.kind));
                let text = to_json(&path, &ls.dump())?;
                write_file(&path, &text)?;
                written.push(path);
            }
            for (s, spec) in result.schemes.iter().enumerate() {
                let out = &rec.outcomes[s];
                let stem = format!("setup{}_{}", rec.setup, file_safe(&spec.name));
                if let Some(w) = &out.weights {
                    let path = dir.join(format!("{stem}_weights.json"));
                    let text = to_json(&path, &w.dump())?;
                    write_file(&path, &text)?;
                    written.push(path);
                }
                if let Some(d) = &out.diagnostics {
                    let path = dir.join(format!("{stem}_diagnostics.json"));
                    let text = to_json(&path, d)?;
                    write_file(&path, &text)?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Minimal SVG rendering of the empirical CDFs.
fn render_svg(curves: &[(String, Vec<f64>)]) -> String {
    let (w, h, pad) = (640.0, 420.0, 50.0);
    let x_max = curves
        .iter()
        .flat_map(|(_, v)| v.last().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let sx = |x: f64| pad + (w - 2.0 * pad) * x / x_max;
    let sy = |y: f64| h - pad - (h - 2.0 * pad) * y;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{} {} L{} {} L{} {}" stroke="black" fill="none"/>"#,
        pad, pad, pad, h - pad, w - pad, h - pad
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">SE per user [bit/s/Hz]</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#, w - pad, h - pad + 15.0, x_max);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">1</text>"#, pad - 5.0, pad + 4.0);
    for (i, (name, se)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let n = se.len() as f64;
        let mut d = format!("M{:.2} {:.2}", sx(se.first().copied().unwrap_or(0.0)), sy(0.0));
        for (j, v) in se.iter().enumerate() {
            let _ = write!(d, " L{:.2} {:.2} L{:.2} {:.2}", sx(*v), sy(j as f64 / n), sx(*v), sy((j + 1) as f64 / n));
        }
        let _ = writeln!(svg, r#"<path d="{d}" stroke="{color}" fill="none" stroke-width="1.5"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            pad + 10.0,
            pad + 15.0 * (i + 1) as f64,
            name.replace('&', "&amp;").replace('<', "&lt;")
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// One row of the closed-form versus Monte-Carlo check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationRow {
    pub check: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Closed forms versus sampled statistics on one network drawn from `config`
/// (seed `config.seed`), for both estimators with closed forms.
pub fn validation_suite(config: &ScenarioConfig, samples: usize) -> Result<Vec<ValidationRow>> {
    config.validate()?;
    if samples == 0 {
        return Err(Error::config("samples", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let stats = generate_network(config, &mut rng)?;
    let pilot = PilotStatistics::compute(&stats, config)?;
    let mut rows = Vec::new();
    for kind in [EstimatorKind::Lmmse, EstimatorKind::Ls] {
        let exact = closed_form_linkstats(kind, &stats, &pilot, config)?;
        let options = McOptions {
            symmetrize: true,
            ..McOptions::default()
        };
        let est = mc_linkstats_detailed(kind, &stats, &pilot, config, samples, options, &mut rng)?;
        let cmp = compare_linkstats(&exact, &est.mean)?;
        let mut row = |check: &str, value: f64, tolerance: f64| {
            rows.push(ValidationRow {
                check: format!("{kind} {check}"),
                value,
                tolerance,
                passed: value <= tolerance,
            })
        };
        row("b max relative error", cmp.max_rel_b, 0.02);
        row("omega max relative error", cmp.max_rel_omega, 0.02);
        row("C max relative error", cmp.max_rel_c, 0.03);
        row("C structural zeros (sampled / max)", cmp.max_zero_c_ratio, 1e-6);
        row("C structural zeros exact", if cmp.exact_zeros { 0.0 } else { 1.0 }, 0.0);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 0.5).unwrap(), 2.0);
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(percentile(&[5.0], p).unwrap(), 5.0);
        }
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.1).unwrap(), 10.0);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 1.0).unwrap(), 100.0);
        assert!(matches!(percentile(&[], 0.5), Err(Error::EmptyInput(_))));
        assert!(percentile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn scheme_names_parse() {
        let s: SchemeSpec = "LSFP-SumSE".parse().unwrap();
        assert_eq!((s.precoding, s.objective, s.estimator), (Precoding::Lsfp, Some(Objective::SumSe), EstimatorKind::Lmmse));
        let s: SchemeSpec = "P-DS+Int-LSFP-SumSE:6@LS".parse().unwrap();
        assert_eq!(s.partial, Some(PartialSpec { method: SelectionMethod::DsInt, n_d: Some(6) }));
        assert_eq!(s.estimator, EstimatorKind::Ls);
        let s: SchemeSpec = "P-DS-LSFP-PropFair".parse().unwrap();
        assert_eq!(s.partial.unwrap().method, SelectionMethod::Ds);
        let s: SchemeSpec = "LPA@LS".parse().unwrap();
        assert_eq!((s.precoding, s.objective), (Precoding::Lpa, None));
        let s: SchemeSpec = "SLP-PropFair".parse().unwrap();
        assert_eq!(s.precoding, Precoding::Slp);
        for bad in ["LSFP", "LSFP-MaxMin", "LPA:3", "SLP-SumSE:2", "LSFP-SumSE@EW_LMMSE", "P-DS-LSFP-SumSE:x"] {
            assert!(bad.parse::<SchemeSpec>().is_err(), "{bad}");
        }
        assert_eq!(SchemeSpec::parse_list("LPA, SLP-SumSE").unwrap().len(), 2);
        assert!(SchemeSpec::parse_list(" , ").is_err());
    }

    #[test]
    fn fronthaul_counts() {
        let config = ScenarioConfig::small(2, 4, 8);
        let full: SchemeSpec = "LSFP-SumSE".parse().unwrap();
        let part: SchemeSpec = "P-DS-LSFP-SumSE".parse().unwrap();
        let slp: SchemeSpec = "SLP-SumSE".parse().unwrap();
        let lpa: SchemeSpec = "LPA".parse().unwrap();
        let per = config.tau_c - config.tau_p;
        assert_eq!(full.fronthaul_symbols(&config), per * 16);
        assert_eq!(part.fronthaul_symbols(&config) * 2, full.fronthaul_symbols(&config));
        assert_eq!(slp.fronthaul_symbols(&config), 0);
        assert_eq!(lpa.fronthaul_symbols(&config), 0);
    }

    #[test]
    fn sig12_rounds() {
        assert_eq!(sig12(0.1 + 0.2), 0.3);
        assert_eq!(sig12(1.0 / 3.0).to_string(), "0.333333333333");
        assert_eq!(sig12(0.0), 0.0);
    }

    #[test]
    fn zero_setups_rejected() {
        let config = ScenarioConfig::small(1, 1, 4);
        let schemes = SchemeSpec::parse_list("LPA").unwrap();
        assert!(matches!(
            run_experiment(&config, &schemes, &ExperimentOptions::new(0, 1)),
            Err(Error::Config { .. })
        ));
    }
}
