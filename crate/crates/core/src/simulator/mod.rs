//! Compressible Navier-Stokes on circular domains with Navier-slip walls.
//!
//! Unknowns are cell-centred: density `ρ` and a velocity pair whose meaning
//! depends on the grid (`(u_R, u_θ)` on the polar grid of a concentric annulus,
//! `(u_1, u_2)` on the masked Cartesian grid). Both schemes share the momentum
//! form `ρ u̇ = ∇((2μ + λ(ρ)) div u - P) + μ ∇⊥ω` and a conservative upwind mass
//! flux.

mod masked;
mod polar;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{build_grid, CircularDomain, Grid};
use crate::stationary::StationaryState;
use crate::{Error, Result, C64};

pub use masked::MaskedSolver;
pub use polar::{PolarFields, PolarRhs, PolarSolver};

pub const CFL_SAFETY: f64 = 0.4;
pub const BLOW_UP: f64 = 1e6;
/// Largest fraction of the energy the viscous terms may remove in one step.
pub const ENERGY_STEP: f64 = 0.02;
/// Density floor relative to the mean density.
pub const FLOOR: f64 = 1e-8;

/// Viscosity and pressure laws: `λ(ρ) = ρ^β`, `P(ρ) = ρ^γ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysParams {
    pub mu: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl PhysParams {
    /// Validated parameters: `μ > 0`, `β > 4/3`, `γ > 1`.
    pub fn new(mu: f64, beta: f64, gamma: f64) -> Result<Self> {
        let p = Self::unchecked(mu, beta, gamma)?;
        if beta <= 4.0 / 3.0 {
            return Err(Error::InvalidParameter(format!(
                "beta = {beta} must exceed 4/3 (the bulk viscosity law requires beta > 4/3, gamma > 1)"
            )));
        }
        Ok(p)
    }

    /// Skips the `β > 4/3` requirement; `μ > 0` and `γ > 1` are still enforced
    /// because the scheme needs them.
    pub fn unchecked(mu: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu = {mu} must be positive")));
        }
        if !(gamma > 1.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma = {gamma} must exceed 1")));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::InvalidParameter(format!("beta = {beta} must be finite and non-negative")));
        }
        Ok(Self { mu, beta, gamma })
    }

    pub fn lambda(&self, rho: f64) -> f64 {
        rho.powf(self.beta)
    }

    pub fn pressure(&self, rho: f64) -> f64 {
        rho.powf(self.gamma)
    }

    pub fn sound_speed(&self, rho: f64) -> f64 {
        (self.gamma * rho.powf(self.gamma - 1.0)).sqrt()
    }

    /// Relative entropy density `(ρ^γ - ρ̂^γ - γ ρ̂^{γ-1}(ρ - ρ̂)) / (γ - 1)`.
    pub fn potential(&self, rho: f64, rho_hat: f64) -> f64 {
        let g = self.gamma;
        (rho.powf(g) - rho_hat.powf(g) - g * rho_hat.powf(g - 1.0) * (rho - rho_hat)) / (g - 1.0)
    }
}

/// Friction coefficient `K ≥ 0` per boundary component: a constant or
/// equispaced angular samples (sample `i` at angle `2πi/m` about the circle's
/// centre), interpolated linearly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlipSpec {
    Constant(Vec<f64>),
    Sampled(Vec<Vec<f64>>),
}

impl SlipSpec {
    pub fn uniform(k: f64, components: usize) -> Self {
        SlipSpec::Constant(vec![k; components])
    }

    pub fn validate(&self, components: usize) -> Result<()> {
        let (n, all): (usize, Vec<f64>) = match self {
            SlipSpec::Constant(v) => (v.len(), v.clone()),
            SlipSpec::Sampled(v) => {
                if v.iter().any(|s| s.is_empty()) {
                    return Err(Error::InvalidParameter("empty K sample list".into()));
                }
                (v.len(), v.iter().flatten().copied().collect())
            }
        };
        if n != components {
            return Err(Error::InvalidParameter(format!("K given for {n} components, domain has {components}")));
        }
        if all.iter().any(|&k| !(k >= 0.0) || !k.is_finite()) {
            return Err(Error::InvalidParameter("K must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn at(&self, j: usize, theta: f64) -> f64 {
        match self {
            SlipSpec::Constant(v) => v[j],
            SlipSpec::Sampled(v) => {
                let s = &v[j];
                let m = s.len();
                let x = theta.rem_euclid(2.0 * PI) / (2.0 * PI) * m as f64;
                let i = (x.floor() as usize) % m;
                let f = x - x.floor();
                s[i] * (1.0 - f) + s[(i + 1) % m] * f
            }
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            SlipSpec::Constant(v) => v.iter().copied().fold(0.0, f64::max),
            SlipSpec::Sampled(v) => v.iter().flatten().copied().fold(0.0, f64::max),
        }
    }
}

/// Cell-centred density and velocity pair at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidState {
    pub t: f64,
    pub rho: Vec<f64>,
    pub u: [Vec<f64>; 2],
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StepInfo {
    pub floor_events: usize,
}

/// Interface shared by the polar and masked discretizations.
pub trait Scheme: Send + Sync {
    fn len(&self) -> usize;
    fn node(&self, k: usize) -> C64;
    /// Quadrature weight (fluid area) of cell `k`; zero for inactive cells.
    fn weight(&self, k: usize) -> f64;
    fn h(&self) -> f64;
    fn rho_hat(&self) -> f64;
    fn set_rho_hat(&mut self, rho_hat: f64);
    fn params(&self) -> &PhysParams;
    /// Cartesian velocity of cell `k`.
    fn velocity(&self, s: &FluidState, k: usize) -> [f64; 2];
    /// State sampled from closed-form density and Cartesian velocity.
    fn sample(&self, rho: &dyn Fn(C64) -> f64, u: &dyn Fn(C64) -> [f64; 2]) -> FluidState;
    fn max_dt(&self, s: &FluidState) -> f64;
    fn step(&self, s: &FluidState, dt: f64) -> Result<(FluidState, StepInfo)>;
    /// `∫ ½ρ|u|² + G(ρ)` with the relative entropy `G`.
    fn energy(&self, s: &FluidState) -> f64;
    /// `∫ (2μ+λ)(div u)² + μ∫ω² + μ∮K|u|²`.
    fn dissipation(&self, s: &FluidState) -> f64;
    /// `∫ λ(div u)² + |∇u|² + (ρ+1)^{γ-1}(ρ-ρ̂)² + μ∮K|u|²`.
    fn a2(&self, s: &FluidState) -> f64;
    /// `∫ ρ|u̇|²` from two consecutive states.
    fn b2(&self, prev: &FluidState, next: &FluidState) -> f64;
    fn grad_u_l2(&self, s: &FluidState) -> f64;
    /// `∫ ρ|∂_t u|²` of the semi-discrete right-hand side.
    fn accel_sq(&self, s: &FluidState) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn mass(&self, s: &FluidState) -> f64 {
        (0..self.len()).map(|k| self.weight(k) * s.rho[k]).sum()
    }

    fn area(&self) -> f64 {
        (0..self.len()).map(|k| self.weight(k)).sum()
    }

    fn sup_rho(&self, s: &FluidState) -> f64 {
        (0..self.len()).filter(|&k| self.weight(k) > 0.0).map(|k| s.rho[k]).fold(0.0, f64::max)
    }

    fn sup_u(&self, s: &FluidState) -> f64 {
        (0..self.len()).filter(|&k| self.weight(k) > 0.0).map(|k| s.u[0][k].hypot(s.u[1][k])).fold(0.0, f64::max)
    }

    fn rho_dev_l2(&self, s: &FluidState) -> f64 {
        let rh = self.rho_hat();
        (0..self.len()).map(|k| self.weight(k) * (s.rho[k] - rh).powi(2)).sum::<f64>().sqrt()
    }
}

/// Named initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum InitialData {
    /// Constant density, fluid at rest.
    Rest {
        #[serde(default = "one")]
        rho: f64,
    },
    /// Member of the rotating annulus family (concentric annuli only).
    SteadyFamily { c1: f64, c2: f64 },
    /// Steady family member plus a random slip velocity of the given size.
    PerturbedSteady { c1: f64, c2: f64, amplitude: f64, seed: u64 },
    /// `ρ₀ = 1 + a cos θ · bump`, `u₀` a random slip field of size `velocity`.
    Perturbed {
        #[serde(default = "tenth")]
        amplitude: f64,
        #[serde(default = "tenth")]
        velocity: f64,
        seed: u64,
    },
    /// Unit density and a random slip field.
    RandomSlip { amplitude: f64, seed: u64 },
}

fn one() -> f64 {
    1.0
}

fn tenth() -> f64 {
    0.1
}

/// Weight vanishing to second order on every boundary circle.
fn wall_weight(domain: &CircularDomain, z: C64) -> f64 {
    domain.circles().map(|c| ((z - c.center).norm_sqr() - c.radius * c.radius).powi(2)).product()
}

/// Random stream function `ψ = W(z) Σ Re(c_m z^m)`; `∇⊥ψ` is tangent to the walls.
pub fn random_stream(domain: &CircularDomain, seed: u64, modes: usize) -> impl Fn(C64) -> f64 + '_ {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coefs: Vec<C64> = (0..modes)
        .map(|m| {
            let s = 1.0 / (1.0 + m as f64);
            C64::new(rng.gen_range(-1.0..1.0) * s, rng.gen_range(-1.0..1.0) * s)
        })
        .collect();
    move |z: C64| {
        let mut p = C64::new(0.0, 0.0);
        for c in coefs.iter().rev() {
            p = p * z + c;
        }
        wall_weight(domain, z) * p.re
    }
}

/// `∇⊥ψ = (-∂₂ψ, ∂₁ψ)` by fourth-order central differences.
pub fn perp_grad(psi: &dyn Fn(C64) -> f64, z: C64) -> [f64; 2] {
    let e = 1e-4;
    let d = |dir: C64| {
        (-psi(z + 2.0 * e * dir) + 8.0 * psi(z + e * dir) - 8.0 * psi(z - e * dir) + psi(z - 2.0 * e * dir))
            / (12.0 * e)
    };
    let (dx, dy) = (d(C64::new(1.0, 0.0)), d(C64::i()));
    [-dy, dx]
}

/// Smooth bump vanishing on the walls: `sin²` across a concentric annulus,
/// the normalized wall weight otherwise.
fn bump(domain: &CircularDomain, z: C64) -> f64 {
    if let Some(r) = domain.concentric_radius() {
        (PI * (z.norm() - r) / (1.0 - r)).sin().powi(2)
    } else {
        let w = wall_weight(domain, z).sqrt();
        (w / (1.0 + w)).min(1.0)
    }
}

/// Builds the scheme for a domain: polar for concentric annuli, masked otherwise.
pub fn build_scheme(
    domain: &CircularDomain,
    params: PhysParams,
    slip: &SlipSpec,
    resolution: usize,
    muscl: bool,
) -> Result<Box<dyn Scheme>> {
    slip.validate(domain.k())?;
    Ok(match build_grid(domain, resolution)? {
        Grid::Polar(g) => Box::new(PolarSolver::new(g, params, slip, muscl)?),
        Grid::Masked(g) => Box::new(MaskedSolver::new(g, params, slip)?),
    })
}

/// Samples the initial data and fixes the reference density `ρ̂` from it.
pub fn initial_state(scheme: &mut dyn Scheme, domain: &CircularDomain, init: &InitialData) -> Result<FluidState> {
    let gamma = scheme.params().gamma;
    let s = match init {
        InitialData::Rest { rho } => {
            if !(*rho > 0.0) {
                return Err(Error::InvalidParameter(format!("rest density {rho} must be positive")));
            }
            let r = *rho;
            scheme.sample(&|_| r, &|_| [0.0, 0.0])
        }
        InitialData::SteadyFamily { c1, c2 } | InitialData::PerturbedSteady { c1, c2, .. } => {
            let r = domain
                .concentric_radius()
                .ok_or_else(|| Error::Unsupported("steady family needs a concentric annulus".into()))?;
            let st = StationaryState::annulus_family(*c1, *c2, gamma, r)?;
            let (amp, seed) = match init {
                InitialData::PerturbedSteady { amplitude, seed, .. } => (*amplitude, *seed),
                _ => (0.0, 0),
            };
            let noise = scaled_slip_field(scheme, domain, seed, amp);
            scheme.sample(&|z| st.rho(z), &|z| {
                let (a, b) = (st.velocity(z), noise(z));
                [a[0] + b[0], a[1] + b[1]]
            })
        }
        InitialData::Perturbed { amplitude, velocity, seed } => {
            let noise = scaled_slip_field(scheme, domain, *seed, *velocity);
            let a = *amplitude;
            scheme.sample(&|z| 1.0 + a * z.arg().cos() * bump(domain, z), &noise)
        }
        InitialData::RandomSlip { amplitude, seed } => {
            let noise = scaled_slip_field(scheme, domain, *seed, *amplitude);
            scheme.sample(&|_| 1.0, &noise)
        }
    };
    if s.rho.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidParameter("initial density must be positive".into()));
    }
    let rh = scheme.mass(&s) / scheme.area();
    scheme.set_rho_hat(rh);
    Ok(s)
}

/// Random slip field scaled so its maximum over the cells equals `amplitude`.
fn scaled_slip_field<'a>(
    scheme: &dyn Scheme,
    domain: &'a CircularDomain,
    seed: u64,
    amplitude: f64,
) -> impl Fn(C64) -> [f64; 2] + 'a {
    let psi = random_stream(domain, seed, 6);
    let peak = (0..scheme.len())
        .filter(|&k| scheme.weight(k) > 0.0)
        .map(|k| {
            let v = perp_grad(&psi, scheme.node(k));
            v[0].hypot(v[1])
        })
        .fold(0.0, f64::max);
    let s = if peak > 0.0 { amplitude / peak } else { 0.0 };
    move |z| {
        let v = perp_grad(&psi, z);
        [s * v[0], s * v[1]]
    }
}

/// Full run description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub domain: CircularDomain,
    pub params: PhysParams,
    pub slip: SlipSpec,
    pub initial: InitialData,
    pub t_end: f64,
    pub cadence: f64,
    pub resolution: usize,
    pub muscl: bool,
}

/// One diagnostics sample.
#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub mass: f64,
    pub a2: f64,
    pub b2: f64,
    pub sup_rho: f64,
    pub r_t: f64,
    pub rho_dev_l2: f64,
    pub grad_u_l2: f64,
    pub energy: f64,
    pub dissipation: f64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub rows: Vec<DiagnosticsRow>,
    pub steps: usize,
    /// Largest per-step relative change of the total mass.
    pub max_mass_drift: f64,
    /// Steps whose energy-budget residual exceeded the tracked band.
    pub budget_violations: usize,
    /// Largest `(residual - band) / band` seen (negative when always inside).
    pub worst_budget_excess: f64,
    pub floor_events: usize,
    pub final_state: FluidState,
}

/// Advances the configured run, calling `observe` at each cadence sample.
pub fn run(cfg: &RunConfig, mut observe: impl FnMut(&DiagnosticsRow, &FluidState)) -> Result<RunReport> {
    if !(cfg.t_end > 0.0) || !(cfg.cadence > 0.0) {
        return Err(Error::InvalidParameter("t_end and cadence must be positive".into()));
    }
    let mut scheme = build_scheme(&cfg.domain, cfg.params, &cfg.slip, cfg.resolution, cfg.muscl)?;
    let s = initial_state(scheme.as_mut(), &cfg.domain, &cfg.initial)?;
    run_from(scheme.as_ref(), s, cfg.t_end, cfg.cadence, &mut observe)
}

/// Runs an existing scheme from a given state.
pub fn run_from(
    scheme: &dyn Scheme,
    mut s: FluidState,
    t_end: f64,
    cadence: f64,
    observe: &mut dyn FnMut(&DiagnosticsRow, &FluidState),
) -> Result<RunReport> {
    let h = scheme.h();
    let mut r_t = 1.0 + scheme.sup_rho(&s);
    let mut rows = Vec::new();
    let row = |s: &FluidState, b2: f64, r_t: f64| DiagnosticsRow {
        t: s.t,
        mass: scheme.mass(s),
        a2: scheme.a2(s),
        b2,
        sup_rho: scheme.sup_rho(s),
        r_t,
        rho_dev_l2: scheme.rho_dev_l2(s),
        grad_u_l2: scheme.grad_u_l2(s),
        energy: scheme.energy(s),
        dissipation: scheme.dissipation(s),
    };
    let first = row(&s, 0.0, r_t);
    observe(&first, &s);
    rows.push(first);
    let (mut e0, mut d0, mut m0) = (scheme.energy(&s), scheme.dissipation(&s), scheme.mass(&s));
    let mut g0 = scheme.accel_sq(&s);
    let mut next_sample = s.t + cadence;
    let (mut steps, mut floor_events, mut violations) = (0, 0, 0);
    let (mut drift, mut worst) = (0.0f64, f64::NEG_INFINITY);
    while s.t < t_end - 1e-12 {
        let dt_energy = if d0 > 0.0 { ENERGY_STEP * e0 / d0 } else { f64::INFINITY };
        let dt = scheme.max_dt(&s).min(dt_energy).min(next_sample - s.t).min(t_end - s.t);
        let (next, info) = scheme.step(&s, dt)?;
        steps += 1;
        floor_events += info.floor_events;
        let sup = scheme.sup_rho(&next);
        if !sup.is_finite() || sup > BLOW_UP || !(scheme.sup_u(&next) < BLOW_UP) {
            return Err(Error::BlowUp { t: next.t, sup_rho: sup });
        }
        r_t = r_t.max(1.0 + sup);
        let (e1, d1, m1) = (scheme.energy(&next), scheme.dissipation(&next), scheme.mass(&next));
        let g1 = scheme.accel_sq(&next);
        drift = drift.max((m1 - m0).abs() / m0);
        let residual = (e1 - e0) / dt + 0.5 * (d0 + d1);
        let band = budget_band(h, dt, e0 + d0 + g0.max(g1), d1 - d0);
        worst = worst.max((residual - band) / band);
        if residual > band {
            violations += 1;
        }
        if next.t >= next_sample - 1e-12 || next.t >= t_end - 1e-12 {
            let b2 = scheme.b2(&s, &next);
            let r = row(&next, b2, r_t);
            observe(&r, &next);
            rows.push(r);
            next_sample += cadence;
        }
        (e0, d0, m0, g0) = (e1, d1, m1, g1);
        s = next;
    }
    Ok(RunReport {
        rows,
        steps,
        max_mass_drift: drift,
        budget_violations: violations,
        worst_budget_excess: worst,
        floor_events,
        final_state: s,
    })
}

/// Tolerance for the per-step energy-budget residual
/// `(E₁-E₀)/dt + ½(D₀+D₁)`: first order in `h²` and `dt` relative to the
/// energy, dissipation and acceleration scales, plus the trapezoid error of the
/// dissipation integral.
pub fn budget_band(h: f64, dt: f64, scale: f64, dissipation_change: f64) -> f64 {
    10.0 * (h * h + dt) * scale + 0.5 * dissipation_change.abs() + 1e-13
}

/// Least-squares fit of `log A` against `t` on a window: returns `(α, R²)`
/// with `log A ≈ c - α t`.
pub fn fit_decay(series: &[(f64, f64)], window: (f64, f64)) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|&(t, _)| t >= window.0 && t <= window.1).collect();
    if pts.len() < 20 {
        return Err(Error::InvalidParameter(format!("{} samples in window, need 20", pts.len())));
    }
    if pts.iter().any(|&(_, a)| !(a > 0.0)) {
        return Err(Error::InvalidParameter("non-positive value in decay window".into()));
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(t, a)| (t, a.ln())).collect();
    let (slope, r2) = linear_fit(&logs);
    Ok((-slope, r2))
}

/// Slope and coefficient of determination of a least-squares line.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let ss_res: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let r2 = if syy <= 1e-24 * n * (1.0 + my * my) { 1.0 } else { 1.0 - ss_res / syy };
    (slope, r2)
}
