//! Command-line front end: configuration files, reports and CSV output.
//!
//! Every command is computed in memory first ([`execute`]) and written by
//! [`write_outputs`], so outputs depend only on the configuration and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::detqm::{detqm_evolve, GridSpec, GridState, HamiltonianSpec};
use crate::error::{Error, Result};
use crate::evolution::{apply_slit, concentration, dispersion_qm, dispersion_subqm, propagate_regime, reduced_amplitude, ConcentrationReport, GaussianState, SlitSpec};
use crate::experiments::{
    exp1_concentration, exp2_detectors, exp3_fluctuation, exp4_pulse_centers, exp5_pulse_counts, exp6_halfplane, kappa0_estimate, regime_check, BeamConfig, CenterIndicator,
    ConcentrationIndicator, CountIndicator, DetectorIndicator, DetectorSpec, ExperimentReport, FluctuationIndicator, Geometry, Indicator, Model, Preset, RegimeEntry, SPEED_OF_LIGHT,
};
use crate::kernels::{relaxation_decay, Dof, Regime};
use crate::quadratics::QuadForm;

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Reduced Planck constant used when an SI configuration does not set `hbar`.
pub const HBAR_SI: f64 = 1.054_571_817e-34;

/// Report file written by every command.
pub const REPORT_FILE: &str = "report.json";

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "SUBQM_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Si,
    Natural,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Report plus CSV data files.
    Csv,
    /// Report only.
    Json,
}

#[derive(Parser, Debug)]
#[command(name = "subqm", version, about = "Phase-space Gaussian simulations of subquantum relaxation models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    /// Overrides the configured units mode.
    #[arg(long, global = true, value_enum)]
    pub units: Option<Units>,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
pub enum Command {
    /// Time slices of one Gaussian state.
    Evolve,
    /// Two slits and an optional screen.
    Slits,
    /// One of the six detector experiments.
    Experiment {
        /// Model to run; repeat to pair models.
        #[arg(long = "model")]
        models: Vec<String>,
    },
    /// Decay of the derivative norm under relaxation.
    Relax,
    /// Regime ledger of a beam.
    Regime,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Slits => "slits",
            Command::Experiment { .. } => "experiment",
            Command::Relax => "relax",
            Command::Regime => "regime",
        }
    }
}

/// Mass, `ħ` and relaxation rate of the single-particle commands.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelRegime {
    #[default]
    Exact,
    ShortTime,
    LongTime,
}

impl From<KernelRegime> for Regime {
    fn from(r: KernelRegime) -> Self {
        match r {
            KernelRegime::Exact => Regime::Exact,
            KernelRegime::ShortTime => Regime::ShortTime,
            KernelRegime::LongTime => Regime::LongTime,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolveModel {
    Subqm,
    Detqm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    #[default]
    Free,
    Harmonic,
}

fn default_slices() -> usize {
    5
}

fn default_grid() -> usize {
    128
}

fn default_points() -> usize {
    401
}

/// `[evolve]`: a product Gaussian `exp{−(x−x₀)²/2Δx² − (p−p₀)²/2Δp²}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    pub model: EvolveModel,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub p0: f64,
    pub dx: f64,
    pub dp: f64,
    /// Final time; slices are equally spaced on `(0, t]`.
    pub t: f64,
    #[serde(default = "default_slices")]
    pub slices: usize,
    #[serde(default)]
    pub regime: KernelRegime,
    #[serde(default)]
    pub potential: PotentialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// Nodes per axis of the phase-space grid.
    #[serde(default = "default_grid")]
    pub grid: usize,
}

/// `[slits]`: `ψ ≡ 1 → first → K_t → second → K_{t_sc}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlitsConfig {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_sc: Option<f64>,
    pub first: SlitSpec,
    pub second: SlitSpec,
    #[serde(default)]
    pub regime: KernelRegime,
    /// Points of the density table.
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_beta_t() -> Vec<f64> {
    (0..=10).map(f64::from).collect()
}

fn one() -> f64 {
    1.0
}

/// `[relax]`: a Gaussian `ψ(q; 0)` of width `width` relaxing for times `βt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxConfig {
    #[serde(default)]
    pub q0: f64,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default = "default_beta_t")]
    pub beta_t: Vec<f64>,
}

/// `[experiment]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment number, 1 to 6.
    pub exp: u8,
    /// Models to run; `--model` flags take precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<String>>,
}

/// `[beam]`: a preset with overrides, or a complete beam.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Model>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulses: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_per_pulse: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_sc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_jitter: Option<f64>,
    /// Photon angular frequency; sets `V = c` and `m = ħω/c²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon_omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slits: Option<Vec<SlitSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detectors: Option<Vec<DetectorSpec>>,
}

/// Contents of a configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Units>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physics: Option<Physics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolve: Option<EvolveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slits: Option<SlitsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relax: Option<RelaxConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam: Option<BeamSection>,
}

impl RunConfig {
    /// Parses TOML; syntax errors and unknown keys carry line and key.
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string().trim_end().to_string()))?;
        if config == RunConfig::default() {
            return Err(Error::ConfigInvalid("empty configuration: no sections or keys".into()));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::ConfigInvalid(msg) => Error::ConfigInvalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Widths, concentration and norm at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub t: f64,
    pub x0: f64,
    pub p0: f64,
    /// Amplitude-convention widths: `|ψ|²` has variance `Δ²/2`.
    pub dx_sq: f64,
    pub dp_sq: f64,
    pub kappa: f64,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveSummary {
    pub model: EvolveModel,
    pub initial: Slice,
    pub slices: Vec<Slice>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenSummary {
    pub t_sc: f64,
    /// `Δx₂²` from the screen amplitude.
    pub dx2_sq: f64,
    pub dx2_sq_subqm: f64,
    pub dx2_sq_qm: f64,
    /// `Δx₂² / Δx₂²(QM)`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlitsSummary {
    pub after_second: ConcentrationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen: Option<ScreenSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub beta_t: f64,
    pub norm_sq: f64,
    pub grad_norm_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxSummary {
    pub beta: f64,
    pub rows: Vec<DecayRow>,
    /// Least-squares slope of `ln ‖Dψ‖²` against `t`.
    pub slope: f64,
    /// `slope / (−2β)`.
    pub slope_ratio: f64,
    pub max_norm_drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentDetail {
    Concentration(ConcentrationIndicator),
    Detectors(DetectorIndicator),
    Fluctuation(FluctuationIndicator),
    Centers(CenterIndicator),
    Counts(CountIndicator),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub model: String,
    pub indicators: Vec<Indicator>,
    pub detail: ExperimentDetail,
    /// The model run, followed by its QM pair where the experiment has one.
    pub reports: Vec<ExperimentReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub exp: u8,
    pub runs: Vec<ExperimentRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Results {
    Evolve(EvolveSummary),
    Slits(SlitsSummary),
    Relax(RelaxSummary),
    Experiment(ExperimentSummary),
    Regime { beam: BeamConfig },
}

/// Everything a command reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvelope {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub units: Units,
    pub seed: u64,
    pub config: RunConfig,
    /// Copied from `SOURCE_DATE_EPOCH` when set; absent otherwise, so that
    /// reruns are byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub results: Results,
    pub regime: Vec<RegimeEntry>,
}

impl ReportEnvelope {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(format!("report: {e}")))
    }
}

/// Result of a command before anything touches the disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub envelope: ReportEnvelope,
    /// CSV files as `(name, contents)`.
    pub files: Vec<(String, String)>,
    /// Text for standard output.
    pub stdout: String,
}

/// Comma-separated table with a header row and 17 significant digits.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Mass, `ħ` and `β` in the requested units.
struct Constants {
    m: f64,
    hbar: f64,
    beta: Option<f64>,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::ConfigInvalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn constants(physics: Option<&Physics>, units: Units, need_beta: bool) -> Result<Constants> {
    match units {
        Units::Natural => {
            if physics.is_some_and(|p| *p != Physics::default()) {
                return Err(Error::ConfigInvalid("[physics] keys conflict with natural units, where ħ = m = β = 1".into()));
            }
            Ok(Constants { m: 1.0, hbar: 1.0, beta: Some(1.0) })
        }
        Units::Si => {
            let p = physics.ok_or_else(|| Error::ConfigInvalid("SI units need a [physics] section".into()))?;
            let m = positive("physics.m", p.m.ok_or_else(|| Error::ConfigInvalid("missing key physics.m".into()))?)?;
            let hbar = positive("physics.hbar", p.hbar.unwrap_or(HBAR_SI))?;
            let beta = match (p.beta, p.tau) {
                (Some(_), Some(_)) => return Err(Error::ConfigInvalid("give physics.beta or physics.tau, not both".into())),
                (Some(b), None) => Some(positive("physics.beta", b)?),
                (None, Some(t)) => Some(1.0 / positive("physics.tau", t)?),
                (None, None) if need_beta => return Err(Error::ConfigInvalid("missing key physics.beta or physics.tau".into())),
                (None, None) => None,
            };
            Ok(Constants { m, hbar, beta })
        }
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref().ok_or_else(|| Error::ConfigInvalid(format!("missing [{name}] section")))
}

/// Builds the beam, slits and detectors of `[beam]`.
pub fn resolve_beam(b: &BeamSection, units: Units, seed: u64) -> Result<(BeamConfig, Vec<crate::evolution::SlitSpec>, Vec<DetectorSpec>)> {
    let model = b.model.ok_or_else(|| Error::ConfigInvalid("missing key beam.model".into()))?;
    let missing = |k: &str| Error::ConfigInvalid(format!("missing key beam.{k}"));
    let mut c = match (b.preset, units) {
        (Some(_), Units::Natural) => return Err(Error::ConfigInvalid("beam.preset is in SI units and conflicts with natural units".into())),
        (Some(p), Units::Si) => BeamConfig::preset(p, model, seed),
        (None, _) => {
            let l = b.l.ok_or_else(|| missing("l"))?;
            BeamConfig {
                v: b.v.or(b.photon_omega.map(|_| SPEED_OF_LIGHT)).ok_or_else(|| missing("v"))?,
                t0: b.t0.ok_or_else(|| missing("t0"))?,
                pulses: 100,
                n_per_pulse: 1000,
                geometry: Geometry { l, l_sc: l, delta: b.delta.ok_or_else(|| missing("delta"))? },
                m: 1.0,
                hbar: if units == Units::Si { HBAR_SI } else { 1.0 },
                model,
                seed,
                dims: 1,
                beta_jitter: None,
                photon: false,
            }
        }
    };
    if units == Units::Natural && (b.m.is_some() || b.hbar.is_some()) {
        return Err(Error::ConfigInvalid("beam.m and beam.hbar conflict with natural units, where ħ = m = 1".into()));
    }
    if b.preset.is_none() && units == Units::Si && b.m.is_none() && b.photon_omega.is_none() {
        return Err(missing("m"));
    }
    macro_rules! set {
        ($field:ident => $target:expr) => {
            if let Some(v) = b.$field {
                $target = v;
            }
        };
    }
    set!(v => c.v);
    set!(t0 => c.t0);
    set!(pulses => c.pulses);
    set!(n_per_pulse => c.n_per_pulse);
    set!(l => c.geometry.l);
    set!(l_sc => c.geometry.l_sc);
    set!(delta => c.geometry.delta);
    set!(m => c.m);
    set!(hbar => c.hbar);
    set!(dims => c.dims);
    c.beta_jitter = b.beta_jitter;
    if let Some(omega) = b.photon_omega {
        if b.m.is_some() || b.v.is_some() {
            return Err(Error::ConfigInvalid("beam.photon_omega fixes beam.m and beam.v".into()));
        }
        let omega = positive("beam.photon_omega", omega)?;
        c.v = SPEED_OF_LIGHT;
        c.m = c.hbar * omega / (SPEED_OF_LIGHT * SPEED_OF_LIGHT);
        c.photon = true;
    }
    c.validate()?;
    let slits = match &b.slits {
        Some(s) => s.clone(),
        None => c.default_slits(),
    };
    let detectors = b.detectors.clone().unwrap_or_default();
    for d in &detectors {
        d.validate(c.dims)?;
    }
    Ok((c, slits, detectors))
}

/// Slice of a Gaussian state from the amplitude covariance.
fn gaussian_slice(psi: &GaussianState) -> Result<Slice> {
    let r = concentration(psi, 0)?;
    Ok(Slice { t: psi.t, x0: r.x0, p0: r.p0, dx_sq: r.dx * r.dx, dp_sq: r.dp * r.dp, kappa: r.kappa, norm: psi.form.l2_norm()? })
}

/// Slice of a grid state from the `|ψ|²` moments on the nodes.
fn grid_slice(s: &GridState) -> Slice {
    let g = &s.grid;
    let (mut w, mut mx, mut mp, mut xx, mut pp) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for j in 0..g.np {
        for i in 0..g.nx {
            let r = s.value(i, j).norm_sqr();
            let (x, p) = (g.x(i), g.p(j));
            w += r;
            mx += r * x;
            mp += r * p;
            xx += r * x * x;
            pp += r * p * p;
        }
    }
    let (mx, mp) = (mx / w, mp / w);
    let dx_sq = 2.0 * (xx / w - mx * mx);
    let dp_sq = 2.0 * (pp / w - mp * mp);
    Slice { t: s.t, x0: mx, p0: mp, dx_sq, dp_sq, kappa: 2.0 * (dx_sq * dp_sq).sqrt() / s.hbar, norm: (w * g.cell_area()).sqrt() }
}

fn grid_csv(s: &GridState) -> String {
    let g = s.grid;
    csv_table(
        &["x", "p", "re", "im"],
        (0..g.len()).map(|k| {
            let (i, j) = (k % g.nx, k / g.nx);
            let z = s.values[k];
            vec![g.x(i), g.p(j), z.re, z.im]
        }),
    )
}

fn evolve(cfg: &EvolveConfig, physics: Option<&Physics>, units: Units) -> Result<(EvolveSummary, Vec<(String, String)>)> {
    positive("evolve.dx", cfg.dx)?;
    positive("evolve.dp", cfg.dp)?;
    positive("evolve.t", cfg.t)?;
    if cfg.slices == 0 || cfg.grid < 8 {
        return Err(Error::ConfigInvalid("evolve.slices must be at least 1 and evolve.grid at least 8".into()));
    }
    let times: Vec<f64> = (1..=cfg.slices).map(|k| cfg.t * k as f64 / cfg.slices as f64).collect();
    let name = |k: usize| format!("snapshot_{k}.csv");
    let mut files = Vec::new();
    match cfg.model {
        EvolveModel::Subqm => {
            if cfg.potential != PotentialKind::Free || cfg.omega.is_some() {
                return Err(Error::ConfigInvalid("the subqm model has no potential".into()));
            }
            let k = constants(physics, units, true)?;
            let dof = Dof::new(k.m, k.beta.unwrap_or(1.0))?;
            let psi0 = GaussianState::product(vec![dof], k.hbar, &[(cfg.p0, cfg.x0)], &[(cfg.dp, cfg.dx)])?;
            let initial = gaussian_slice(&psi0)?;
            let mut slices = Vec::new();
            for (idx, &t) in times.iter().enumerate() {
                let psi = propagate_regime(&psi0, t, cfg.regime.into())?;
                let slice = gaussian_slice(&psi)?;
                let mo = psi.form.moments()?;
                let sigma = (mo.cov[(1, 1)].sqrt(), mo.cov[(0, 0)].sqrt());
                let grid = GridSpec::fit((mo.mean[1], mo.mean[0]), sigma, cfg.grid)?;
                let snap = GridState::from_fn(grid, t, k.hbar, |x, p| psi.form.eval(&[p, x]));
                files.push((name(idx + 1), grid_csv(&snap)));
                slices.push(slice);
            }
            Ok((EvolveSummary { model: cfg.model, initial, slices }, files))
        }
        EvolveModel::Detqm => {
            if cfg.regime != KernelRegime::Exact {
                return Err(Error::ConfigInvalid("evolve.regime applies to the subqm model only".into()));
            }
            let k = constants(physics, units, false)?;
            let (h, reach) = match (cfg.potential, cfg.omega) {
                (PotentialKind::Free, None) => {
                    let spread = cfg.dp * cfg.t / k.m;
                    (HamiltonianSpec::free(k.m)?, ((cfg.dx * cfg.dx + spread * spread).sqrt() + (cfg.p0 * cfg.t / k.m).abs(), cfg.dp))
                }
                (PotentialKind::Harmonic, Some(omega)) => {
                    let mw = k.m * positive("evolve.omega", omega)?;
                    let r = (cfg.x0 * cfg.x0 + (cfg.p0 / mw).powi(2)).sqrt();
                    (HamiltonianSpec::harmonic(k.m, omega)?, (cfg.dx.max(cfg.dp / mw) + r, cfg.dp.max(mw * cfg.dx) + mw * r))
                }
                (PotentialKind::Free, Some(_)) => return Err(Error::ConfigInvalid("evolve.omega needs potential = \"harmonic\"".into())),
                (PotentialKind::Harmonic, None) => return Err(Error::ConfigInvalid("missing key evolve.omega".into())),
            };
            let grid = GridSpec::fit((0.0, 0.0), (1.5 * reach.0 + cfg.x0.abs(), 1.5 * reach.1 + cfg.p0.abs()), cfg.grid)?;
            let ln_norm = -0.5 * (std::f64::consts::PI * cfg.dx * cfg.dp).ln();
            let psi0 = GridState::from_fn(grid, 0.0, k.hbar, |x, p| {
                C64::new(ln_norm - (x - cfg.x0).powi(2) / (2.0 * cfg.dx * cfg.dx) - (p - cfg.p0).powi(2) / (2.0 * cfg.dp * cfg.dp), 0.0).exp()
            });
            let initial = grid_slice(&psi0);
            let mut slices = Vec::new();
            for (idx, &t) in times.iter().enumerate() {
                let s = detqm_evolve(&psi0, 0.0, t, &h)?;
                files.push((name(idx + 1), grid_csv(&s)));
                slices.push(grid_slice(&s));
            }
            Ok((EvolveSummary { model: cfg.model, initial, slices }, files))
        }
    }
}

/// `|φ|²` of a one-variable amplitude on `mean ± 6σ`.
fn density_csv(phi: &QuadForm, points: usize) -> Result<String> {
    let mo = phi.moments()?;
    let (mu, sd) = (mo.mean[0], mo.cov[(0, 0)].sqrt());
    let n = points.max(2);
    Ok(csv_table(
        &["x", "rho"],
        (0..n).map(|k| {
            let x = mu - 6.0 * sd + 12.0 * sd * k as f64 / (n - 1) as f64;
            vec![x, (2.0 * phi.exponent(&[x]).re).exp()]
        }),
    ))
}

fn slits(cfg: &SlitsConfig, physics: Option<&Physics>, units: Units) -> Result<(SlitsSummary, Vec<RegimeEntry>, Vec<(String, String)>)> {
    let k = constants(physics, units, true)?;
    let beta = k.beta.unwrap_or(1.0);
    let dof = Dof::new(k.m, beta)?;
    positive("slits.t", cfg.t)?;
    let first = SlitSpec::new(cfg.first.center, cfg.first.half_width)?;
    let second = SlitSpec::new(cfg.second.center, cfg.second.half_width)?;
    let regime: Regime = cfg.regime.into();
    let unit = GaussianState::unit(vec![dof], k.hbar);
    let psi = apply_slit(&propagate_regime(&apply_slit(&unit, 0, &first)?, cfg.t, regime)?, 0, &second)?;
    let after_second = concentration(&psi, 0)?;
    let delta = first.half_width;
    let mut ledger = vec![
        RegimeEntry::much_less("9.2", "δ² ≪ Tħ/3m", delta * delta / (cfg.t * k.hbar / (3.0 * k.m))),
        RegimeEntry::much_less("9.4", "κ₀ ≪ 1", kappa0_estimate(k.m, delta, cfg.t, k.hbar, beta)),
    ];
    let (screen, phi) = match cfg.t_sc {
        Some(t_sc) => {
            positive("slits.t_sc", t_sc)?;
            ledger.push(RegimeEntry::much_less("9.3", "β T_sc ≪ 1", beta * t_sc));
            let phi = reduced_amplitude(&propagate_regime(&psi, t_sc, regime)?)?;
            let dx2_sq = 2.0 * phi.moments()?.cov[(0, 0)];
            let dx1_sq = after_second.dx * after_second.dx;
            let qm = dispersion_qm(dx1_sq, t_sc, k.m, k.hbar)?;
            let summary = ScreenSummary {
                t_sc,
                dx2_sq,
                dx2_sq_subqm: dispersion_subqm(dx1_sq, after_second.dp * after_second.dp, t_sc, &dof, k.hbar)?,
                dx2_sq_qm: qm,
                ratio: dx2_sq / qm,
            };
            (Some(summary), phi)
        }
        None => (None, reduced_amplitude(&psi)?),
    };
    let files = vec![("density.csv".to_string(), density_csv(&phi, cfg.points)?)];
    Ok((SlitsSummary { after_second, screen }, ledger, files))
}

fn relax(cfg: &RelaxConfig, physics: Option<&Physics>, units: Units) -> Result<(RelaxSummary, Vec<(String, String)>)> {
    let k = constants(physics, units, true)?;
    let beta = k.beta.unwrap_or(1.0);
    let dof = Dof::new(k.m, beta)?;
    positive("relax.width", cfg.width)?;
    positive("relax.c0", cfg.c0)?;
    if cfg.beta_t.len() < 2 || cfg.beta_t.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::ConfigInvalid("relax.beta_t needs at least two non-negative values".into()));
    }
    let psi0 = QuadForm::gaussian(&[cfg.q0], &[cfg.width], k.hbar)?;
    let mut rows = Vec::new();
    for &s in &cfg.beta_t {
        let d = relaxation_decay(&psi0, s / beta, &dof, k.hbar, cfg.c0)?;
        rows.push(DecayRow { beta_t: s, norm_sq: d.norm * d.norm, grad_norm_sq: d.grad_norm * d.grad_norm });
    }
    // Least squares of ln ‖Dψ‖² on t.
    let ts: Vec<f64> = rows.iter().map(|r| r.beta_t / beta).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.grad_norm_sq.ln()).collect();
    let n = ts.len() as f64;
    let (mt, my) = (ts.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    let slope = sxy / sxx;
    let n0 = rows[0].norm_sq;
    let max_norm_drift = rows.iter().map(|r| (r.norm_sq.sqrt() - n0.sqrt()).abs() / n0.sqrt()).fold(0.0, f64::max);
    let csv = csv_table(&["beta_t", "norm_sq", "grad_norm_sq"], rows.iter().map(|r| vec![r.beta_t, r.norm_sq, r.grad_norm_sq]));
    Ok((RelaxSummary { beta, rows, slope, slope_ratio: slope / (-2.0 * beta), max_norm_drift }, vec![("decay.csv".to_string(), csv)]))
}

fn model_named(name: &str, configured: Model) -> Result<Model> {
    match name {
        "qm" => Ok(Model::Qm),
        "detqm" => Ok(Model::Detqm),
        n if n == configured.name() => Ok(configured),
        n => Err(Error::ConfigInvalid(format!("model {n} needs its parameters in beam.model (configured: {})", configured.name()))),
    }
}

fn detectors_n<const N: usize>(d: &[DetectorSpec], exp: u8) -> Result<[DetectorSpec; N]> {
    d.try_into().map_err(|_| Error::ConfigInvalid(format!("experiment {exp} needs exactly {N} entries in beam.detectors, got {}", d.len())))
}

fn experiment(exp: u8, config: &BeamConfig, slits: &[SlitSpec], detectors: &[DetectorSpec]) -> Result<ExperimentRun> {
    if matches!(exp, 1 | 4 | 6) && !detectors.is_empty() {
        return Err(Error::ConfigInvalid(format!("experiment {exp} places its own detectors; remove beam.detectors")));
    }
    let (detail, reports, indicators) = match exp {
        1 => {
            let (ind, a, b) = exp1_concentration(config, slits)?;
            (ExperimentDetail::Concentration(ind.clone()), vec![a, b], vec![ind.indicator()])
        }
        2 => {
            let (ind, a, b) = exp2_detectors(config, slits, &detectors_n::<3>(detectors, exp)?)?;
            (ExperimentDetail::Detectors(ind.clone()), vec![a, b], ind.indicators())
        }
        3 => {
            let (ind, a) = exp3_fluctuation(config, slits, &detectors_n::<3>(detectors, exp)?)?;
            (ExperimentDetail::Fluctuation(ind.clone()), vec![a], vec![ind.indicator()])
        }
        4 => {
            let (ind, a) = exp4_pulse_centers(config, slits)?;
            (ExperimentDetail::Centers(ind.clone()), vec![a], vec![ind.indicator()])
        }
        5 => {
            let [plus, minus] = detectors_n::<2>(detectors, exp)?;
            let (ind, a) = exp5_pulse_counts(config, slits, plus, minus)?;
            (ExperimentDetail::Counts(ind.clone()), vec![a], ind.indicators(false))
        }
        6 => {
            let (ind, a) = exp6_halfplane(config, slits)?;
            (ExperimentDetail::Counts(ind.clone()), vec![a], ind.indicators(true))
        }
        n => return Err(Error::ConfigInvalid(format!("experiment.exp must be 1 to 6, got {n}"))),
    };
    Ok(ExperimentRun { model: config.model.name().to_string(), indicators, detail, reports })
}

/// Regime ledger as an aligned text table.
pub fn regime_table(entries: &[RegimeEntry]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6} {:<24} {:>12} {:>10}  result", "name", "inequality", "ratio", "threshold");
    for e in entries {
        let _ = writeln!(s, "{:<6} {:<24} {:>12.4e} {:>10} {}", e.name, e.inequality, e.ratio, e.threshold, if e.pass { "PASS" } else { "FAIL" });
    }
    s
}

/// Runs `command` with a parsed configuration.
pub fn execute(command: &Command, config: &RunConfig, seed: Option<u64>, units: Option<Units>, format: Format) -> Result<Outcome> {
    let units = units.or(config.units).unwrap_or(Units::Si);
    let seed = seed.or(config.seed).unwrap_or(0);
    let physics = config.physics.as_ref();
    let mut stdout = String::new();
    let (results, regime, mut files) = match command {
        Command::Evolve => {
            let (s, f) = evolve(section(&config.evolve, "evolve")?, physics, units)?;
            (Results::Evolve(s), Vec::new(), f)
        }
        Command::Slits => {
            let (s, ledger, f) = slits(section(&config.slits, "slits")?, physics, units)?;
            (Results::Slits(s), ledger, f)
        }
        Command::Relax => {
            let (s, f) = relax(section(&config.relax, "relax")?, physics, units)?;
            let _ = writeln!(stdout, "slope {:.6e}, slope/(-2 beta) {:.6}", s.slope, s.slope_ratio);
            (Results::Relax(s), Vec::new(), f)
        }
        Command::Experiment { models } => {
            let ecfg = section(&config.experiment, "experiment")?;
            let (beam, slits, detectors) = resolve_beam(section(&config.beam, "beam")?, units, seed)?;
            let names: Vec<String> = if !models.is_empty() {
                models.clone()
            } else {
                ecfg.models.clone().unwrap_or_else(|| vec![beam.model.name().to_string()])
            };
            let mut runs = Vec::new();
            let mut files = Vec::new();
            for name in &names {
                let model = model_named(name, beam.model)?;
                let run = experiment(ecfg.exp, &BeamConfig { model, ..beam.clone() }, &slits, &detectors)?;
                for ind in &run.indicators {
                    let _ = writeln!(stdout, "{:<10} ({}) {:.6e} vs {:.6e}: {}", run.model, ind.name, ind.value, ind.threshold, if ind.pass { "PASS" } else { "FAIL" });
                }
                let d = &run.reports[0].density;
                files.push((format!("density_{}.csv", run.model), csv_table(&["x", "rho"], d.x.iter().zip(&d.total).map(|(x, r)| vec![*x, *r]))));
                runs.push(run);
            }
            (Results::Experiment(ExperimentSummary { exp: ecfg.exp, runs }), regime_check(&beam, &detectors), files)
        }
        Command::Regime => {
            let (beam, _, detectors) = resolve_beam(section(&config.beam, "beam")?, units, seed)?;
            let ledger = regime_check(&beam, &detectors);
            stdout.push_str(&regime_table(&ledger));
            (Results::Regime { beam }, ledger, Vec::new())
        }
    };
    if format == Format::Json {
        files.clear();
    }
    let envelope = ReportEnvelope {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.name().to_string(),
        units,
        seed,
        config: config.clone(),
        timestamp: std::env::var("SOURCE_DATE_EPOCH").ok(),
        results,
        regime,
    };
    Ok(Outcome { envelope, files, stdout })
}

/// Writes the report and CSV files into `dir`; returns the written paths.
pub fn write_outputs(outcome: &Outcome, dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |p: &Path, e: std::io::Error| Error::Io(format!("{}: {e}", p.display()));
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    let report = dir.join(REPORT_FILE);
    fs::write(&report, outcome.envelope.to_json()?).map_err(|e| io(&report, e))?;
    written.push(report);
    for (name, contents) in &outcome.files {
        let p = dir.join(name);
        fs::write(&p, contents).map_err(|e| io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// Caps the rayon pool at `SUBQM_THREADS` workers when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::ConfigInvalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::ConfigInvalid(format!("{THREADS_ENV}: {e}")))
}

/// Parses arguments, runs the command and writes its outputs.
pub fn run(cli: &Cli) -> Result<String> {
    configure_threads()?;
    let path = cli.config.as_ref().ok_or_else(|| Error::ConfigInvalid("--config PATH is required".into()))?;
    let config = RunConfig::load(path)?;
    let outcome = execute(&cli.command, &config, cli.seed, cli.units, cli.format)?;
    let mut stdout = outcome.stdout.clone();
    let write = cli.out.is_some() || cli.command != Command::Regime;
    if write {
        let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
        for p in write_outputs(&outcome, &dir)? {
            let _ = writeln!(stdout, "wrote {}", p.display());
        }
    }
    Ok(stdout)
}
