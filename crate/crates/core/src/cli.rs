//! Command-line front end: strict TOML configuration, dispatch to the
//! modules, CSV + sidecar emission and exit-code discipline.
//!
//! Exit codes: `0` every check passed, `2` the computation ran but a property
//! check failed, `1` runtime or configuration error.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commutator::{neumann_f_check, refinement_slope, sample_points, verify_representation, SnapshotPair};
use crate::conformal::{annulus_map, verify_map};
use crate::divcurl::{anchor_points, inequality_ensemble, Anchor};
use crate::geometry::{build_grid, Circle, CircularDomain, Domain, Grid};
use crate::greens::{ladder, loglog_slope, NeumannGreen};
use crate::io::{config_hash, unix_time, Cell, Column, GridDump, Sidecar, Table, TableMeta};
use crate::laplace::{find_critical_points, period_matrix, DirichletSolver};
use crate::simulator::{
    build_scheme, fit_decay, initial_state, linear_fit, run_from, InitialData, PhysParams, SlipSpec,
};
use crate::stationary::{classify, residual, Case, StationaryState};
use crate::{Error, Result, C64};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_PROPERTY: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "mcflow", version, about = "Potential theory and compressible flow on multiply-connected domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// TOML configuration file (unknown keys are rejected).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Domain file; overrides the config's `domain`.
    #[arg(long, global = true)]
    pub domain: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "MCFLOW_THREADS")]
    pub threads: Option<usize>,
    /// Accept a viscosity exponent `beta <= 4/3`.
    #[arg(long, global = true)]
    pub allow_small_beta: bool,
    /// Treat blow-up (simulate) or an unbounded constant (divcurl-bench) as the
    /// expected outcome.
    #[arg(long, global = true)]
    pub expect_blowup: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Harmonic measures, partition of unity and the period matrix.
    Measure,
    /// Critical points of a harmonic function with constant boundary values.
    Critpoints,
    /// Green-function singularity ladders and cancellation slopes.
    GreenCheck,
    /// Conformal map of a doubly-connected domain onto an annulus.
    Conformal,
    /// Empirical constants of the div-curl estimate.
    DivcurlBench,
    /// Classification and residual convergence of steady states.
    Steady,
    /// Time integration with conservation and decay diagnostics.
    Simulate,
    /// Three-way check of the effective-flux representation.
    CommutatorCheck,
    /// Runs the whole battery on built-in domains.
    Suite,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Measure => "measure",
            Command::Critpoints => "critpoints",
            Command::GreenCheck => "green-check",
            Command::Conformal => "conformal",
            Command::DivcurlBench => "divcurl-bench",
            Command::Steady => "steady",
            Command::Simulate => "simulate",
            Command::CommutatorCheck => "commutator-check",
            Command::Suite => "suite",
        }
    }
}

/// Thresholds of the property checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub measure_exact: f64,
    pub partition: f64,
    pub period_symmetry: f64,
    pub period_value: f64,
    pub slope_band: f64,
    pub remainder_growth: f64,
    pub ensemble_stability: f64,
    pub witness_ratio: f64,
    pub steady_slope: f64,
    pub steady_slope_band: f64,
    pub mass_drift: f64,
    pub decay_r2: f64,
    pub commutator: f64,
    pub conformal_modulus: f64,
    pub conformal_pullback: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            measure_exact: 1e-8,
            partition: 1e-8,
            period_symmetry: 1e-8,
            period_value: 1e-6,
            slope_band: 0.15,
            remainder_growth: 2.0,
            ensemble_stability: 0.9,
            witness_ratio: 1e3,
            steady_slope: 2.0,
            steady_slope_band: 0.2,
            mass_drift: 1e-12,
            decay_r2: 0.99,
            commutator: 0.05,
            conformal_modulus: 1e-8,
            conformal_pullback: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    pub mu: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Friction coefficient per boundary component (constant or sampled);
    /// zero everywhere when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub friction: Option<SlipSpec>,
}

impl Default for Physics {
    fn default() -> Self {
        Self { mu: 1.0, beta: 2.0, gamma: 2.0, friction: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureCfg {
    pub modes: usize,
    pub samples: usize,
}

impl Default for MeasureCfg {
    fn default() -> Self {
        Self { modes: 24, samples: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CritCfg {
    pub modes: usize,
    /// Boundary value on each component; `[0, 1, 1, ...]` when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
}

impl Default for CritCfg {
    fn default() -> Self {
        Self { modes: 24, levels: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreenCfg {
    pub modes: usize,
    /// Boundary angle the source ladder approaches.
    pub theta: f64,
}

impl Default for GreenCfg {
    fn default() -> Self {
        Self { modes: 32, theta: 0.7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalCfg {
    pub nodes: usize,
    pub samples: usize,
}

impl Default for ConformalCfg {
    fn default() -> Self {
        Self { nodes: 256, samples: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivcurlCfg {
    pub p: f64,
    pub fields: usize,
    /// Keep the point-value terms on the right-hand side.
    pub point_terms: bool,
}

impl Default for DivcurlCfg {
    fn default() -> Self {
        Self { p: 4.0, fields: 200, point_terms: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyCfg {
    pub c1: f64,
    pub c2: f64,
    pub resolutions: Vec<usize>,
}

impl Default for SteadyCfg {
    fn default() -> Self {
        Self { c1: 1.0, c2: 3.0, resolutions: vec![32, 64, 128] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateCfg {
    pub t_end: f64,
    pub cadence: f64,
    pub resolution: usize,
    pub muscl: bool,
    /// Initial data; a seeded perturbation of the rest state when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialData>,
    /// Fit an exponential decay of `A²` and require it.
    pub check_decay: bool,
    /// Fit window; the second half of the run when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_window: Option<[f64; 2]>,
    /// Write the final state as a binary grid dump.
    pub dump: bool,
}

impl Default for SimulateCfg {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            cadence: 0.05,
            resolution: 64,
            muscl: false,
            initial: None,
            check_decay: false,
            decay_window: None,
            dump: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommutatorState {
    /// Rotating steady state: only the acceleration form is compared.
    Steady,
    /// Time-dependent manufactured flow: all three forms are compared.
    Manufactured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommutatorCfg {
    pub state: CommutatorState,
    pub resolution: usize,
    pub green_modes: usize,
    pub c1: f64,
    pub c2: f64,
    pub t_mid: f64,
    pub dt: f64,
}

impl Default for CommutatorCfg {
    fn default() -> Self {
        Self { state: CommutatorState::Steady, resolution: 64, green_modes: 32, c1: 1.0, c2: 3.0, t_mid: 0.5, dt: 0.01 }
    }
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Domain file, relative to the config file; the annulus `0.5 < |z| < 1`
    /// when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<PathBuf>,
    pub seed: u64,
    pub output: PathBuf,
    pub allow_small_beta: bool,
    pub tolerances: Tolerances,
    pub physics: Physics,
    pub measure: MeasureCfg,
    pub critpoints: CritCfg,
    pub green: GreenCfg,
    pub conformal: ConformalCfg,
    pub divcurl: DivcurlCfg,
    pub steady: SteadyCfg,
    pub simulate: SimulateCfg,
    pub commutator: CommutatorCfg,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: None,
            seed: 1,
            output: PathBuf::from("mcflow-out"),
            allow_small_beta: false,
            tolerances: Tolerances::default(),
            physics: Physics::default(),
            measure: MeasureCfg::default(),
            critpoints: CritCfg::default(),
            green: GreenCfg::default(),
            conformal: ConformalCfg::default(),
            divcurl: DivcurlCfg::default(),
            steady: SteadyCfg::default(),
            simulate: SimulateCfg::default(),
            commutator: CommutatorCfg::default(),
        }
    }
}

/// Radius of the default annulus.
pub const DEFAULT_ANNULUS: f64 = 0.5;

/// Parses config text strictly: unknown keys and duplicate keys are errors.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Reads the config file (if any), applies command-line overrides and
/// resolves relative paths.
pub fn parse_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let mut c = parse_config_str(&text)?;
            let base = p.parent().unwrap_or(Path::new(""));
            if let Some(d) = &c.domain {
                c.domain = Some(base.join(d));
            }
            c
        }
        None => RunConfig::default(),
    };
    if let Some(d) = &global.domain {
        cfg.domain = Some(d.clone());
    }
    if let Some(o) = &global.out {
        cfg.output = o.clone();
    }
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    cfg.allow_small_beta |= global.allow_small_beta;
    Ok(cfg)
}

impl RunConfig {
    pub fn load_domain(&self) -> Result<Domain> {
        match &self.domain {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::Config(format!("domain file {} does not exist", p.display())));
                }
                Domain::load(p)
            }
            None => Ok(Domain::Circular(CircularDomain::annulus(DEFAULT_ANNULUS)?)),
        }
    }

    pub fn params(&self) -> Result<PhysParams> {
        let p = &self.physics;
        if self.allow_small_beta {
            PhysParams::unchecked(p.mu, p.beta, p.gamma)
        } else {
            PhysParams::new(p.mu, p.beta, p.gamma)
        }
    }

    /// Friction law for a `k`-component boundary, zero when unspecified.
    pub fn slip(&self, k: usize) -> Result<SlipSpec> {
        let s = self.physics.friction.clone().unwrap_or_else(|| SlipSpec::uniform(0.0, k));
        s.validate(k)?;
        Ok(s)
    }

    /// Fills every defaulted optional field from the domain.
    pub fn resolve(&mut self, domain: &Domain) -> Result<()> {
        let k = domain.k();
        self.physics.friction = Some(self.slip(k)?);
        if self.critpoints.levels.is_none() {
            self.critpoints.levels = Some((0..k).map(|j| if j == 0 { 0.0 } else { 1.0 }).collect());
        }
        if self.simulate.initial.is_none() {
            self.simulate.initial = Some(InitialData::Perturbed { amplitude: 0.1, velocity: 0.1, seed: self.seed });
        }
        if self.simulate.decay_window.is_none() {
            self.simulate.decay_window = Some([0.5 * self.simulate.t_end, self.simulate.t_end]);
        }
        Ok(())
    }

    /// Checks every precondition of `cmd` before any computation starts.
    pub fn validate(&self, cmd: Command, domain: &Domain) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let circular = || match domain {
            Domain::Circular(d) => Ok(d.clone()),
            Domain::Smooth(_) => Err(Error::Unsupported(format!("{} needs a circular domain", cmd.name()))),
        };
        match cmd {
            Command::Measure => {
                circular()?;
                if self.measure.modes == 0 || self.measure.samples == 0 {
                    return bad("measure: modes and samples must be positive".into());
                }
            }
            Command::Critpoints => {
                let d = circular()?;
                let levels = self.critpoints.levels.as_deref().unwrap_or(&[]);
                if levels.len() != d.k() {
                    return bad(format!("critpoints: {} levels for {} components", levels.len(), d.k()));
                }
            }
            Command::GreenCheck => {
                circular()?;
                if self.green.modes == 0 {
                    return bad("green: modes must be positive".into());
                }
            }
            Command::Conformal => {
                if domain.k() != 2 {
                    return Err(Error::Unsupported(format!("conformal: k = {} (doubly-connected only)", domain.k())));
                }
            }
            Command::DivcurlBench => {
                circular()?;
                if !(self.divcurl.p >= 1.0) || self.divcurl.fields < 2 {
                    return bad("divcurl: need p >= 1 and at least 2 fields".into());
                }
            }
            Command::Steady => {
                self.params()?;
                if self.steady.resolutions.len() < 2 || self.steady.resolutions.iter().any(|&n| n < 8) {
                    return bad("steady: need at least two resolutions, each >= 8".into());
                }
            }
            Command::Simulate => {
                let d = circular()?;
                self.params()?;
                let s = &self.simulate;
                if !(s.t_end > 0.0) || !(s.cadence > 0.0) {
                    return bad("simulate: t_end and cadence must be positive".into());
                }
                build_grid(&d, s.resolution)?;
            }
            Command::CommutatorCheck => {
                let d = circular()?;
                self.params()?;
                if d.concentric_radius().is_none() {
                    return Err(Error::Unsupported("commutator-check needs a concentric annulus".into()));
                }
                if !(self.commutator.dt > 0.0) {
                    return bad("commutator: dt must be positive".into());
                }
            }
            Command::Suite => {}
        }
        Ok(())
    }
}

/// Result of one command: tables, summary, verdict.
#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<(String, Table)>,
    pub summary: serde_json::Value,
    pub passed: bool,
    pub dump: Option<GridDump>,
}

fn circular(domain: &Domain) -> Result<&CircularDomain> {
    match domain {
        Domain::Circular(d) => Ok(d),
        Domain::Smooth(_) => Err(Error::Unsupported("circular domain required".into())),
    }
}

/// Uniform random interior points at least `margin` from the boundary.
fn random_interior(domain: &CircularDomain, n: usize, seed: u64, margin: f64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if domain.contains(z) && domain.nearest_component(z).0 > margin {
            pts.push(z);
        }
    }
    pts
}

fn run_measure(cfg: &RunConfig, domain: &Domain) -> Result<Outcome> {
    let d = circular(domain)?;
    let tol = &cfg.tolerances;
    let start = Instant::now();
    let solver = DirichletSolver::new(d, cfg.measure.modes)?;
    let measures = solver.harmonic_measures();
    let pts = random_interior(d, cfg.measure.samples, cfg.seed, 1e-3);
    let mut table = Table::new(vec![
        Column::new("point", "-", "sample index"),
        Column::new("x", "length", "first coordinate"),
        Column::new("y", "length", "second coordinate"),
        Column::new("component", "-", "boundary component j (0 = outer)"),
        Column::new("omega", "-", "harmonic measure of component j at the point"),
    ]);
    let (mut partition, mut exact) = (0.0f64, 0.0f64);
    let radius = d.concentric_radius();
    for (i, &z) in pts.iter().enumerate() {
        let mut sum = 0.0;
        for (j, w) in measures.iter().enumerate() {
            let v = w.value(z);
            sum += v;
            table.push(vec![i.into(), z.re.into(), z.im.into(), j.into(), v.into()]);
        }
        partition = partition.max((sum - 1.0).abs());
        if let (Some(r), Some(w)) = (radius, measures.get(1)) {
            exact = exact.max((w.value(z) - z.norm().ln() / r.ln()).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let mut passed = partition <= tol.partition;
    let mut summary = json!({
        "partition_defect": partition,
        "elapsed_seconds": elapsed,
    });
    if radius.is_some() {
        summary["exact_defect"] = json!(exact);
        passed &= exact <= tol.measure_exact;
    }
    if d.k() >= 2 {
        let a = period_matrix(&solver)?;
        let sym = (0..a.nrows())
            .flat_map(|i| (0..a.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| (a[(i, j)] - a[(j, i)]).abs())
            .fold(0.0, f64::max);
        summary["period_matrix"] =
            json!(a.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>());
        summary["period_symmetry_defect"] = json!(sym);
        passed &= sym <= tol.period_symmetry;
        if let Some(r) = radius {
            let oracle = 2.0 * PI / r.ln();
            let rel = (a[(0, 0)].abs() - oracle.abs()).abs() / oracle.abs();
            summary["period_a11_oracle"] = json!(oracle);
            summary["period_a11_relative_error"] = json!(rel);
            passed &= rel <= tol.period_value;
        }
    }
    Ok(Outcome { tables: vec![("measures".into(), table)], summary, passed, dump: None })
}

fn crit_table() -> Table {
    Table::new(vec![
        Column::new("x", "length", "first coordinate"),
        Column::new("y", "length", "second coordinate"),
        Column::new("multiplicity", "-", "order of vanishing of the gradient"),
        Column::new("component", "-", "boundary component for boundary points, -1 inside"),
        Column::new("weight", "-", "multiplicity, halved on the boundary"),
    ])
}

fn run_critpoints(cfg: &RunConfig, domain: &Domain) -> Result<Outcome> {
    let d = circular(domain)?;
    let levels = cfg.critpoints.levels.clone().unwrap_or_default();
    let solver = DirichletSolver::new(d, cfg.critpoints.modes)?;
    let (h, resid) = solver.solve(|j, _, _| levels[j]);
    let expected = d.k() as f64 - 2.0;
    let (points, passed) = match find_critical_points(d, &h) {
        Ok(p) => (p, true),
        Err(Error::IndexSumMismatch { points, .. }) => (points, false),
        Err(e) => return Err(e),
    };
    let mut table = crit_table();
    for p in &points {
        let comp = p.component.map_or(-1, |c| c as i32);
        table.push(vec![
            p.location[0].into(),
            p.location[1].into(),
            p.multiplicity.into(),
            comp.into(),
            p.weight().into(),
        ]);
    }
    let found: f64 = points.iter().map(|p| p.weight()).sum();
    let summary = json!({
        "levels": levels,
        "boundary_residual": resid,
        "expected_index_sum": expected,
        "weighted_index_sum": found,
        "points": points.len(),
    });
    Ok(Outcome { tables: vec![("critical_points".into(), table)], summary, passed, dump: None })
}

fn run_green(cfg: &RunConfig, domain: &Domain) -> Result<Outcome> {
    let d = circular(domain)?;
    let tol = &cfg.tolerances;
    let green = NeumannGreen::new(d, cfg.green.modes)?;
    let mut table = Table::new(vec![
        Column::new("component", "-", "boundary component approached"),
        Column::new("delta", "length", "source distance to the boundary"),
        Column::new("grad_h", "1/length", "sup over the boundary of |grad H|"),
        Column::new("hess_h", "1/length^2", "sup of |second derivatives of H|"),
        Column::new("combo_first", "1/length", "sup of the first-order tangential cancellation combination"),
        Column::new("combo_second", "1/length^2", "sup of the second-order tangential cancellation combination"),
        Column::new(
            "grad_remainder",
            "1/length",
            "sup of |grad R_j|, the regular part after removing the principal part",
        ),
    ]);
    let mut comps = Vec::new();
    let mut passed = true;
    for j in 0..d.k() {
        let rows = ladder(&green, j, cfg.green.theta)?;
        for r in &rows {
            table.push(vec![j.into(), r[0].into(), r[1].into(), r[2].into(), r[3].into(), r[4].into(), r[5].into()]);
        }
        let col = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
        let delta = col(0);
        let slopes: Vec<f64> = (1..5).map(|c| loglog_slope(&delta, &col(c))).collect();
        let growth = col(5).iter().copied().fold(0.0, f64::max) / rows[0][5];
        let targets = [-1.0, -2.0, 0.0, -1.0];
        let ok: Vec<bool> = slopes.iter().zip(targets).map(|(s, t)| (s - t).abs() <= tol.slope_band).collect();
        let flat = growth <= tol.remainder_growth;
        passed &= ok.iter().all(|&b| b) && flat;
        comps.push(json!({
            "component": j,
            "slope_grad_h": slopes[0],
            "slope_hess_h": slopes[1],
            "slope_combo_first": slopes[2],
            "slope_combo_second": slopes[3],
            "slopes_in_band": ok,
            "remainder_growth": growth,
            "remainder_flat": flat,
        }));
    }
    let probe = random_interior(d, 4, cfg.seed, 0.05);
    let neumann = probe.iter().map(|&w| green.neumann_residual(w)).collect::<Result<Vec<_>>>()?;
    let summary = json!({
        "theta": cfg.green.theta,
        "components": comps,
        "neumann_residual_max": neumann.iter().copied().fold(0.0, f64::max),
    });
    Ok(Outcome { tables: vec![("green_ladder".into(), table)], summary, passed, dump: None })
}

fn run_conformal(cfg: &RunConfig, domain: &Domain) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let map = annulus_map(domain, cfg.conformal.nodes)?;
    let rep = verify_map(&map);
    let mut table = Table::new(vec![
        Column::new("x", "length", "first coordinate"),
        Column::new("y", "length", "second coordinate"),
        Column::new("phi_re", "-", "real part of the map to the annulus"),
        Column::new("phi_im", "-", "imaginary part of the map"),
        Column::new("omega", "-", "pulled-back harmonic measure log|phi| / log(modulus)"),
    ]);
    let samples = map.interior_samples(0.02);
    let stride = (samples.len() / cfg.conformal.samples.max(1)).max(1);
    let lr = map.modulus.ln();
    for &z in samples.iter().step_by(stride) {
        let w = map.phi(z);
        table.push(vec![z.re.into(), z.im.into(), w.re.into(), w.im.into(), (w.norm().ln() / lr).into()]);
    }
    let mut passed = rep.boundary_residual.is_finite() && rep.cauchy_riemann_residual.is_finite();
    let mut summary = json!({ "report": rep });
    if let Domain::Circular(d) = domain {
        let hole: Circle = d.holes()[0];
        let (c, rho) = (hole.center.norm(), hole.radius);
        let b = 1.0 + c * c - rho * rho;
        let oracle = if c < 1e-14 {
            rho
        } else {
            let a = (b - (b * b - 4.0 * c * c).sqrt()) / (2.0 * c);
            ((c + rho - a) / (1.0 - a * (c + rho))).abs()
        };
        let modulus_err = (map.modulus - oracle).abs();
        let omega = crate::laplace::harmonic_measure(d, 1)?;
        let mut pull = 0.0f64;
        for &z in samples.iter().step_by(stride) {
            let v = map.pull_back(|w| w.norm().ln() / lr, z)?;
            pull = pull.max((v - omega.value(z)).abs());
        }
        summary["mobius_modulus"] = json!(oracle);
        summary["modulus_error"] = json!(modulus_err);
        summary["pullback_error"] = json!(pull);
        passed &= modulus_err <= tol.conformal_modulus && pull <= tol.conformal_pullback;
    } else {
        passed &= rep.boundary_residual <= tol.conformal_pullback;
    }
    Ok(Outcome { tables: vec![("conformal_samples".into(), table)], summary, passed, dump: None })
}

fn run_divcurl(cfg: &RunConfig, domain: &Domain, expect_blowup: bool) -> Result<Outcome> {
    let d = circular(domain)?;
    let tol = &cfg.tolerances;
    let c = &cfg.divcurl;
    let anchor = Anchor::Points(anchor_points(d));
    let rep = inequality_ensemble(d, c.p, c.fields, cfg.seed, &anchor)?;
    let mut ratios = Table::new(vec![
        Column::new("field", "-", "ensemble index"),
        Column::new("ratio", "-", "|grad u|_p / (|div u|_p + |curl u|_p + sum of point values)"),
    ]);
    for (i, r) in rep.ratios.iter().enumerate() {
        ratios.push(vec![i.into(), (*r).into()]);
    }
    let mut witness = Table::new(vec![
        Column::new("epsilon", "-", "perturbation size around the harmonic null field"),
        Column::new("ratio", "-", "|grad u|_p / (|div u|_p + |curl u|_p), point terms deleted"),
    ]);
    for (e, r) in &rep.witness {
        witness.push(vec![(*e).into(), (*r).into()]);
    }
    let blowup = rep.witness_ratio() > tol.witness_ratio;
    let passed = if c.point_terms {
        rep.second_half_max >= tol.ensemble_stability * rep.max && blowup
    } else {
        blowup == expect_blowup
    };
    let summary = json!({
        "p": rep.p,
        "max": rep.max,
        "second_half_max": rep.second_half_max,
        "stable": rep.stable,
        "witness_ratio": rep.witness_ratio(),
        "point_terms": c.point_terms,
        "unbounded_without_point_terms": blowup,
    });
    Ok(Outcome {
        tables: vec![("divcurl_ratios".into(), ratios), ("divcurl_witness".into(), witness)],
        summary,
        passed,
        dump: None,
    })
}

fn run_steady(cfg: &RunConfig, domain: &Domain) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let slip = cfg.slip(domain.k())?;
    let class = classify(domain, &slip)?;
    let mut summary = json!({ "classification": class });
    let mut tables = Vec::new();
    let mut passed = true;
    let radius = match domain {
        Domain::Circular(d) => d.concentric_radius(),
        Domain::Smooth(_) => None,
    };
    if let Some(r) = radius {
        let params = cfg.params()?;
        let s = &cfg.steady;
        let member = if class.case == Case::B { (s.c1, s.c2) } else { (0.0, s.c2) };
        let state = StationaryState::annulus_family(member.0, member.1, params.gamma, r)?;
        let mut table = Table::new(vec![
            Column::new("resolution", "-", "radial cells n (2n angular)"),
            Column::new("mass_l2", "density/time", "L2 norm of the discrete continuity residual"),
            Column::new("mass_sup", "density/time", "max of the continuity residual"),
            Column::new("momentum_l2", "momentum/time", "L2 norm of the discrete momentum residual"),
            Column::new("momentum_sup", "momentum/time", "max of the momentum residual"),
            Column::new("slip_sup", "velocity", "max |u.n| on the walls"),
            Column::new("curl_boundary_sup", "1/time", "max |curl u - K u.n_perp| on the walls"),
        ]);
        let mut errs = Vec::new();
        for &n in &s.resolutions {
            let rep = residual(&state, &params, &slip, n)?;
            errs.push(rep.momentum_l2);
            table.push(vec![
                n.into(),
                rep.mass_l2.into(),
                rep.mass_sup.into(),
                rep.momentum_l2.into(),
                rep.momentum_sup.into(),
                rep.slip_sup.into(),
                rep.curl_boundary_sup.into(),
            ]);
        }
        let trivial = StationaryState::annulus_family(0.0, s.c2, params.gamma, r)?;
        let t = residual(&trivial, &params, &slip, s.resolutions[0])?;
        let trivial_max = t.mass_sup.max(t.momentum_sup).max(t.curl_boundary_sup);
        passed &= trivial_max == 0.0;
        summary["state"] = json!({ "c1": member.0, "c2": member.1, "gamma": params.gamma, "r": r });
        summary["trivial_residual"] = json!(trivial_max);
        if member.0 != 0.0 {
            let h: Vec<f64> = s.resolutions.iter().map(|&n| 1.0 / n as f64).collect();
            let slope = refinement_slope(&h, &errs);
            summary["momentum_slope"] = json!(slope);
            passed &= (slope - tol.steady_slope).abs() <= tol.steady_slope_band;
        }
        tables.push(("steady_residual".into(), table));
    }
    Ok(Outcome { tables, summary, passed, dump: None })
}

fn diagnostics_table() -> Table {
    Table::new(vec![
        Column::new("t", "time", "physical time"),
        Column::new("mass", "density*area", "integral of rho"),
        Column::new("a2", "energy", "A^2: lambda(div u)^2 + |grad u|^2 + pressure deviation + wall friction"),
        Column::new("b2", "energy/time^2", "B^2: integral of rho |material derivative of u|^2"),
        Column::new("sup_rho", "density", "max of rho over the grid"),
        Column::new("r_t", "density", "1 + running max of sup rho"),
        Column::new("rho_dev_l2", "density*length", "L2 norm of rho minus its mean"),
        Column::new("grad_u_l2", "1/time*length", "L2 norm of grad u"),
        Column::new("energy", "energy", "kinetic energy plus relative pressure potential"),
        Column::new("dissipation", "energy/time", "viscous and wall-friction dissipation rate"),
    ])
}

fn run_simulate(cfg: &RunConfig, domain: &Domain, expect_blowup: bool) -> Result<Outcome> {
    let d = circular(domain)?;
    let tol = &cfg.tolerances;
    let s = &cfg.simulate;
    let params = cfg.params()?;
    let slip = cfg.slip(d.k())?;
    let init = s.initial.clone().unwrap_or(InitialData::Perturbed { amplitude: 0.1, velocity: 0.1, seed: cfg.seed });
    let mut scheme = build_scheme(d, params, &slip, s.resolution, s.muscl)?;
    let state = initial_state(scheme.as_mut(), d, &init)?;
    let mut table = diagnostics_table();
    let result = run_from(scheme.as_ref(), state, s.t_end, s.cadence, &mut |r, _| {
        table.push(vec![
            r.t.into(),
            r.mass.into(),
            r.a2.into(),
            r.b2.into(),
            r.sup_rho.into(),
            r.r_t.into(),
            r.rho_dev_l2.into(),
            r.grad_u_l2.into(),
            r.energy.into(),
            r.dissipation.into(),
        ]);
    });
    let rep = match result {
        Ok(rep) => rep,
        Err(Error::BlowUp { t, sup_rho }) => {
            let summary = json!({ "blow_up": true, "t": t, "sup_rho": sup_rho });
            return Ok(Outcome {
                tables: vec![("diagnostics".into(), table)],
                summary,
                passed: expect_blowup,
                dump: None,
            });
        }
        Err(e) => return Err(e),
    };
    let mut passed = !expect_blowup && rep.max_mass_drift <= tol.mass_drift && rep.budget_violations == 0;
    let mut summary = json!({
        "blow_up": false,
        "steps": rep.steps,
        "max_mass_drift": rep.max_mass_drift,
        "budget_violations": rep.budget_violations,
        "worst_budget_excess": rep.worst_budget_excess,
        "floor_events": rep.floor_events,
    });
    let half: Vec<(f64, f64)> = rep.rows.iter().filter(|r| r.t >= 0.5 * s.t_end).map(|r| (r.t, r.sup_rho)).collect();
    if half.len() >= 3 {
        let (slope, _) = linear_fit(&half);
        summary["sup_rho_trend_second_half"] = json!(slope);
    }
    let window = s.decay_window.unwrap_or([0.5 * s.t_end, s.t_end]);
    let series: Vec<(f64, f64)> = rep.rows.iter().map(|r| (r.t, r.a2)).collect();
    match fit_decay(&series, (window[0], window[1])) {
        Ok((alpha, r2)) => {
            summary["decay_alpha"] = json!(alpha);
            summary["decay_r2"] = json!(r2);
            if s.check_decay {
                let trend = summary["sup_rho_trend_second_half"].as_f64().unwrap_or(0.0);
                passed &= alpha > 0.0 && r2 >= tol.decay_r2 && trend <= 0.0;
            }
        }
        Err(e) => {
            summary["decay_fit_error"] = json!(e.to_string());
            passed &= !s.check_decay;
        }
    }
    let dump = if s.dump {
        let f = &rep.final_state;
        let (n1, n2) = match build_grid(d, s.resolution)? {
            Grid::Polar(g) => (g.nr, g.nt),
            Grid::Masked(g) => (g.n, g.n),
        };
        Some(GridDump {
            n1: n1 as u32,
            n2: n2 as u32,
            t: f.t,
            fields: vec![f.rho.clone(), f.u[0].clone(), f.u[1].clone()],
        })
    } else {
        None
    };
    Ok(Outcome { tables: vec![("diagnostics".into(), table)], summary, passed, dump })
}

fn run_commutator(cfg: &RunConfig, domain: &Domain) -> Result<Outcome> {
    let d = circular(domain)?;
    let c = &cfg.commutator;
    let r = d.concentric_radius().ok_or_else(|| Error::Unsupported("concentric annulus required".into()))?;
    let params = cfg.params()?;
    let green = NeumannGreen::new(d, c.green_modes)?;
    let (pair, full) = match c.state {
        CommutatorState::Steady => (SnapshotPair::steady(r, params, c.c1, c.c2, c.resolution)?, false),
        CommutatorState::Manufactured => (SnapshotPair::manufactured(r, params, c.resolution, c.t_mid, c.dt)?, true),
    };
    let pts = sample_points(d);
    let rep = verify_representation(&green, &pair, &pts, full)?;
    let nc = neumann_f_check(&pair)?;
    let mut table = Table::new(vec![
        Column::new("x", "length", "first coordinate"),
        Column::new("y", "length", "second coordinate"),
        Column::new("band", "-", "boundary component of a near-wall point, -1 inside"),
        Column::new("f_direct", "pressure", "effective viscous flux from the grid fields"),
        Column::new("f_acceleration", "pressure", "flux from the rho*acceleration dipole integral plus boundary terms"),
        Column::new("f_commutator", "pressure", "flux from time derivative, transport, commutator and boundary terms"),
        Column::new("dt_v", "pressure", "time derivative of the inverse Laplacian of div(rho u)"),
        Column::new("advect_v", "pressure", "u . grad of the same potential"),
        Column::new("commutator", "pressure", "inner commutator integral"),
        Column::new("boundary", "pressure", "boundary commutator integral"),
        Column::new("remainder", "pressure", "mean boundary flux plus wall-vorticity term"),
        Column::new("body", "pressure", "manufactured forcing contribution"),
    ]);
    for p in &rep.points {
        let band = p.band.map_or(-1, |b| b as i32);
        table.push(vec![
            p.x[0].into(),
            p.x[1].into(),
            band.into(),
            p.f_direct.into(),
            p.f_c512.into(),
            p.f_qp11.into(),
            p.dt_v.into(),
            p.advect_v.into(),
            p.commutator.into(),
            p.boundary.into(),
            p.remainder.into(),
            p.body.into(),
        ]);
    }
    let rel_acc = rep.relative(rep.max_direct_c512);
    let mut passed = rel_acc <= cfg.tolerances.commutator;
    let mut summary = json!({
        "state": c.state,
        "resolution": c.resolution,
        "flux_sup": rep.flux_sup,
        "relative_direct_vs_acceleration": rel_acc,
        "neumann_interior": nc.interior,
        "neumann_boundary": nc.boundary,
        "neumann_scale": nc.scale,
    });
    if full {
        let rel = rep.relative(rep.max_direct_qp11);
        summary["relative_direct_vs_commutator"] = json!(rel);
        summary["relative_acceleration_vs_commutator"] = json!(rep.relative(rep.max_c512_qp11));
        passed &= rel <= cfg.tolerances.commutator;
    }
    Ok(Outcome { tables: vec![("commutator_points".into(), table)], summary, passed, dump: None })
}

/// Runs one command and returns its outcome (no files written).
pub fn execute(cmd: Command, cfg: &RunConfig, domain: &Domain, expect_blowup: bool) -> Result<Outcome> {
    match cmd {
        Command::Measure => run_measure(cfg, domain),
        Command::Critpoints => run_critpoints(cfg, domain),
        Command::GreenCheck => run_green(cfg, domain),
        Command::Conformal => run_conformal(cfg, domain),
        Command::DivcurlBench => run_divcurl(cfg, domain, expect_blowup),
        Command::Steady => run_steady(cfg, domain),
        Command::Simulate => run_simulate(cfg, domain, expect_blowup),
        Command::CommutatorCheck => run_commutator(cfg, domain),
        Command::Suite => Err(Error::Unsupported("suite is dispatched separately".into())),
    }
}

/// Writes tables, the optional dump, the resolved config and the sidecar.
pub fn write_outputs(cmd: Command, cfg: &RunConfig, out: &Outcome, threads: usize) -> Result<()> {
    let dir = &cfg.output;
    fs::create_dir_all(dir)?;
    let mut metas = Vec::new();
    for (name, table) in &out.tables {
        let file = format!("{name}.csv");
        table.write(&dir.join(&file))?;
        metas.push(TableMeta { file, columns: table.columns.clone() });
    }
    if let Some(d) = &out.dump {
        d.write(&dir.join("final_state.bin"))?;
    }
    let resolved = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("config.resolved.toml"), resolved)?;
    let sidecar = Sidecar {
        command: cmd.name().into(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        threads,
        config_sha256: config_hash(cfg),
        timestamp: unix_time(),
        config: serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?,
        tables: metas,
        summary: out.summary.clone(),
        passed: out.passed,
    };
    sidecar.write(&dir.join(format!("{}.meta.json", cmd.name())))
}

fn report_error(cmd: Command, e: &Error) -> i32 {
    eprintln!("{}: error[{}]: {e}", cmd.name(), e.code());
    EXIT_RUNTIME
}

fn verdict(cmd: Command, out: &Outcome) -> i32 {
    // a closed stdout (e.g. piped into `head`) must not turn a verdict into a panic
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{}: {}", cmd.name(), if out.passed { "PASS" } else { "FAIL" });
    let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&out.summary).unwrap_or_default());
    if out.passed {
        EXIT_OK
    } else {
        EXIT_PROPERTY
    }
}

/// Built-in battery: each entry is a command, a domain and config tweaks.
fn suite_cases(base: &RunConfig) -> Result<Vec<(Command, &'static str, RunConfig, Domain)>> {
    let annulus = Domain::Circular(CircularDomain::annulus(DEFAULT_ANNULUS)?);
    let three = Domain::Circular(CircularDomain::new(vec![Circle::new(-0.4, 0.0, 0.15), Circle::new(0.4, 0.0, 0.15)])?);
    let eccentric = Domain::Circular(CircularDomain::new(vec![Circle::new(0.2, 0.0, 0.3)])?);
    let at = |name: &str| {
        let mut c = base.clone();
        c.output = base.output.join(name);
        c
    };
    let mut sim = at("simulate");
    sim.simulate.t_end = 2.0;
    sim.simulate.resolution = 32;
    sim.physics.friction = Some(SlipSpec::uniform(0.5, 2));
    let mut steady_fric = at("steady-friction");
    steady_fric.physics.friction = Some(SlipSpec::Constant(vec![0.3, 0.0]));
    Ok(vec![
        (Command::Measure, "measure", at("measure"), annulus.clone()),
        (Command::Measure, "measure-3", at("measure-3"), three.clone()),
        (Command::Critpoints, "critpoints", at("critpoints"), three),
        (Command::GreenCheck, "green-check", at("green-check"), annulus.clone()),
        (Command::Conformal, "conformal", at("conformal"), eccentric.clone()),
        (Command::DivcurlBench, "divcurl-bench", at("divcurl-bench"), annulus.clone()),
        (Command::Steady, "steady", at("steady"), annulus.clone()),
        (Command::Steady, "steady-friction", steady_fric, annulus.clone()),
        (Command::Steady, "steady-eccentric", at("steady-eccentric"), eccentric),
        (Command::Simulate, "simulate", sim, annulus.clone()),
        (Command::CommutatorCheck, "commutator-check", at("commutator-check"), annulus),
    ])
}

fn run_suite(base: &RunConfig, threads: usize) -> i32 {
    let cases = match suite_cases(base) {
        Ok(c) => c,
        Err(e) => return report_error(Command::Suite, &e),
    };
    let mut code = EXIT_OK;
    let mut table = Table::new(vec![
        Column::new("case", "-", "suite entry"),
        Column::new("status", "-", "PASS, FAIL (property) or ERROR (runtime)"),
        Column::new("seconds", "time", "wall-clock duration"),
    ]);
    for (cmd, name, mut cfg, domain) in cases {
        let start = Instant::now();
        let res = cfg
            .resolve(&domain)
            .and_then(|_| cfg.validate(cmd, &domain))
            .and_then(|_| execute(cmd, &cfg, &domain, false))
            .and_then(|o| write_outputs(cmd, &cfg, &o, threads).map(|_| o));
        let secs = start.elapsed().as_secs_f64();
        let status = match res {
            Ok(o) if o.passed => "PASS",
            Ok(_) => {
                code = code.max(EXIT_PROPERTY);
                "FAIL"
            }
            Err(e) => {
                eprintln!("{name}: error[{}]: {e}", e.code());
                code = EXIT_PROPERTY.max(code).max(EXIT_RUNTIME);
                "ERROR"
            }
        };
        let _ = writeln!(std::io::stdout(), "{name:<20} {status} ({secs:.1} s)");
        table.push(vec![name.into(), status.into(), Cell::Num(secs)]);
    }
    if let Err(e) =
        fs::create_dir_all(&base.output).map_err(Error::from).and_then(|_| table.write(&base.output.join("suite.csv")))
    {
        return report_error(Command::Suite, &e);
    }
    code
}

fn set_threads(n: Option<usize>) -> usize {
    let n = n.unwrap_or(1).max(1);
    // a second initialization in the same process is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    n
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn dispatch(cli: Cli) -> i32 {
    let cmd = cli.command;
    let threads = set_threads(cli.global.threads);
    let mut cfg = match parse_config(&cli.global) {
        Ok(c) => c,
        Err(e) => return report_error(cmd, &e),
    };
    if cmd == Command::Suite {
        return run_suite(&cfg, threads);
    }
    let domain = match cfg.load_domain() {
        Ok(d) => d,
        Err(e) => return report_error(cmd, &e),
    };
    if let Err(e) = cfg.resolve(&domain).and_then(|_| cfg.validate(cmd, &domain)) {
        return report_error(cmd, &e);
    }
    match execute(cmd, &cfg, &domain, cli.global.expect_blowup) {
        Ok(out) => match write_outputs(cmd, &cfg, &out, threads) {
            Ok(()) => verdict(cmd, &out),
            Err(e) => report_error(cmd, &e),
        },
        Err(e) => report_error(cmd, &e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let mut c = parse_config_str("[simulate]\nt_end = 1.0\n").unwrap();
        let d = Domain::Circular(CircularDomain::annulus(0.5).unwrap());
        c.resolve(&d).unwrap();
        assert_eq!(c.simulate.t_end, 1.0);
        assert_eq!(c.simulate.cadence, SimulateCfg::default().cadence);
        assert_eq!(c.physics.friction, Some(SlipSpec::uniform(0.0, 2)));
        assert_eq!(c.simulate.decay_window, Some([0.5, 1.0]));
        let echoed = toml::to_string(&c).unwrap();
        assert_eq!(parse_config_str(&echoed).unwrap(), c);
    }

    #[test]
    fn strict_parsing() {
        assert!(parse_config_str("seed = 1\nseed = 2\n").is_err());
        assert!(parse_config_str("sed = 1\n").is_err());
        assert!(parse_config_str("[physics]\nmu = 1.0\nnu = 2.0\n").is_err());
    }

    #[test]
    fn small_beta_needs_override() {
        let mut c = parse_config_str("[physics]\nbeta = 1.0\n").unwrap();
        let d = Domain::Circular(CircularDomain::annulus(0.5).unwrap());
        c.resolve(&d).unwrap();
        let e = c.validate(Command::Simulate, &d).unwrap_err();
        assert!(e.to_string().contains("4/3"), "{e}");
        c.allow_small_beta = true;
        c.validate(Command::Simulate, &d).unwrap();
    }

    #[test]
    fn missing_domain_file_is_an_error() {
        let c = RunConfig { domain: Some("/nonexistent/domain.toml".into()), ..Default::default() };
        assert!(c.load_domain().is_err());
    }
}
