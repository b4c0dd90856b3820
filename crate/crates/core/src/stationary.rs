//! Steady states of the barotropic system with Navier-slip walls.
//!
//! Besides the rest state, a concentric annulus carries the rotating family
//! `ρ^{γ-1} = ((γ-1)/γ)(C₂ - C₁²/(2|x|²))`, `u₁ - i u₂ = i C₁ / z`, i.e.
//! `u = C₁ (y, -x)/|x|²`. This module evaluates those states, measures how well
//! the discrete operator keeps them, sorts domains into the three cases
//! (friction, concentric annulus, anything else) and traces level curves of
//! harmonic functions.

use serde::Serialize;

use crate::geometry::{CircularDomain, Domain, PolarGrid, SmoothCurve};
use crate::quad::gauss_on;
use crate::series::SeriesHarmonic;
use crate::simulator::{PhysParams, PolarSolver, Scheme, SlipSpec};
use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    Trivial,
    AnnulusRotating,
}

/// Closed-form stationary state on the annulus `r < |x| < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StationaryState {
    pub kind: StateKind,
    pub c1: f64,
    pub c2: f64,
    pub gamma: f64,
    pub r: f64,
}

impl StationaryState {
    /// Member of the rotating family; `C₁ = 0` gives the rest state.
    pub fn annulus_family(c1: f64, c2: f64, gamma: f64, r: f64) -> Result<Self> {
        if !(gamma > 1.0) {
            return Err(Error::InvalidParameter(format!("gamma = {gamma} must exceed 1")));
        }
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidParameter(format!("inner radius {r} outside (0, 1)")));
        }
        let s =
            Self { kind: if c1 == 0.0 { StateKind::Trivial } else { StateKind::AnnulusRotating }, c1, c2, gamma, r };
        // the bracket grows with R, so positivity is decided at R = r
        if !(s.bracket(r) > 0.0) {
            return Err(Error::Vacuum { radius: r });
        }
        Ok(s)
    }

    fn bracket(&self, radius: f64) -> f64 {
        (self.gamma - 1.0) / self.gamma * (self.c2 - self.c1 * self.c1 / (2.0 * radius * radius))
    }

    pub fn rho_radial(&self, radius: f64) -> f64 {
        self.bracket(radius).powf(1.0 / (self.gamma - 1.0))
    }

    pub fn rho(&self, z: C64) -> f64 {
        self.rho_radial(z.norm())
    }

    /// Cartesian velocity `C₁ (y, -x) / |x|²`.
    pub fn velocity(&self, z: C64) -> [f64; 2] {
        let r2 = z.norm_sqr();
        [self.c1 * z.im / r2, -self.c1 * z.re / r2]
    }

    /// Azimuthal velocity `u_θ = -C₁/R`.
    pub fn u_theta(&self, radius: f64) -> f64 {
        -self.c1 / radius
    }

    pub fn mass(&self) -> f64 {
        2.0 * std::f64::consts::PI
            * gauss_on(48, self.r, 1.0).iter().map(|&(x, w)| w * x * self.rho_radial(x)).sum::<f64>()
    }
}

/// Bisection on `C₂` for the family member with the given mass.
pub fn match_mass(c1: f64, gamma: f64, r: f64, target: f64) -> Result<StationaryState> {
    if !(target > 0.0) {
        return Err(Error::InvalidParameter(format!("target mass {target} must be positive")));
    }
    let floor = c1 * c1 / (2.0 * r * r);
    let mass = |c2: f64| StationaryState::annulus_family(c1, c2, gamma, r).map(|s| s.mass());
    let mut lo = floor * (1.0 + 1e-12) + 1e-300;
    if mass(lo).is_ok_and(|m| m > target) {
        return Err(Error::NoBracket(format!("target mass {target} below the vacuum limit")));
    }
    let mut hi = (floor + 1.0).max(1.0);
    while mass(hi)? < target {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NoBracket(format!("no C2 reaches mass {target}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    StationaryState::annulus_family(c1, 0.5 * (lo + hi), gamma, r)
}

/// Residual norms of a stationary state under the discrete operator.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub resolution: usize,
    pub mass_l2: f64,
    pub mass_sup: f64,
    pub momentum_l2: f64,
    pub momentum_sup: f64,
    /// `sup |u·n|` on the walls.
    pub slip_sup: f64,
    /// `sup |ω - K u·n⊥|` on the walls, closed-form fields.
    pub curl_boundary_sup: f64,
}

/// Applies the polar scheme's spatial operator to the sampled state.
pub fn residual(state: &StationaryState, params: &PhysParams, slip: &SlipSpec, n: usize) -> Result<ResidualReport> {
    if (params.gamma - state.gamma).abs() > 1e-14 {
        return Err(Error::InvalidParameter("pressure exponent differs from the state's".into()));
    }
    let grid = PolarGrid::new(state.r, n, 2 * n);
    let mut solver = PolarSolver::new(grid.clone(), *params, slip, false)?;
    let s = solver.sample(&|z| state.rho(z), &|z| state.velocity(z));
    solver.set_rho_hat(state.mass() / (std::f64::consts::PI * (1.0 - state.r * state.r)));
    let rhs = solver.rhs(&s);
    let norms = |f: &dyn Fn(usize) -> f64| {
        let l2 = (0..grid.len()).map(|k| solver.weight(k) * f(k).powi(2)).sum::<f64>().sqrt();
        let sup = (0..grid.len()).map(|k| f(k).abs()).fold(0.0, f64::max);
        (l2, sup)
    };
    let (mass_l2, mass_sup) = norms(&|k| rhs.drho[k]);
    let (momentum_l2, momentum_sup) = norms(&|k| rhs.force[0][k].hypot(rhs.force[1][k]));
    let mut slip_sup = 0.0f64;
    let mut curl_sup = 0.0f64;
    for j in 0..64 {
        let th = 2.0 * std::f64::consts::PI * j as f64 / 64.0;
        for (comp, radius) in [(0usize, 1.0), (1, state.r)] {
            let z = C64::from_polar(radius, th);
            let normal = if comp == 0 { z / radius } else { -z / radius };
            let u = state.velocity(z);
            slip_sup = slip_sup.max((u[0] * normal.re + u[1] * normal.im).abs());
            let un_perp = u[0] * normal.im - u[1] * normal.re;
            let omega = vorticity(&|w| state.velocity(w), z);
            curl_sup = curl_sup.max((omega - slip.at(comp, th) * un_perp).abs());
        }
    }
    Ok(ResidualReport {
        resolution: n,
        mass_l2,
        mass_sup,
        momentum_l2,
        momentum_sup,
        slip_sup,
        curl_boundary_sup: curl_sup,
    })
}

/// `∂₁u₂ - ∂₂u₁` by fourth-order central differences.
fn vorticity(u: &dyn Fn(C64) -> [f64; 2], z: C64) -> f64 {
    let e = 1e-4;
    let d = |dir: C64, c: usize| {
        (-u(z + 2.0 * e * dir)[c] + 8.0 * u(z + e * dir)[c] - 8.0 * u(z - e * dir)[c] + u(z - 2.0 * e * dir)[c])
            / (12.0 * e)
    };
    d(C64::new(1.0, 0.0), 1) - d(C64::i(), 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Case {
    /// Friction somewhere on the boundary: only the rest state.
    A,
    /// Frictionless concentric annulus: the two-parameter rotating family.
    B,
    /// Frictionless, not a concentric annulus: only the rest state.
    C,
}

#[derive(Clone, Debug, Serialize)]
pub struct Classification {
    pub case: Case,
    pub description: String,
}

/// Tolerance on centre coincidence and roundness.
pub const CONCENTRIC_TOL: f64 = 1e-8;

/// Algebraic least-squares circle through points: `(centre, radius, max deviation)`.
pub fn fit_circle(points: &[C64]) -> (C64, f64, f64) {
    use nalgebra::{DMatrix, DVector};
    let n = points.len();
    let mean = points.iter().sum::<C64>() / n as f64;
    let a = DMatrix::from_fn(n, 3, |i, j| {
        let p = points[i] - mean;
        [p.re, p.im, 1.0][j]
    });
    let b = DVector::from_fn(n, |i, _| (points[i] - mean).norm_sqr());
    let sol = a.clone().svd(true, true).solve(&b, 1e-14).unwrap_or_else(|_| DVector::zeros(3));
    let c = C64::new(sol[0] / 2.0, sol[1] / 2.0);
    let radius = (sol[2] + c.norm_sqr()).max(0.0).sqrt();
    let dev = points.iter().map(|p| ((p - mean - c).norm() - radius).abs()).fold(0.0, f64::max);
    (c + mean, radius, dev)
}

fn concentric(curves: &[Vec<C64>]) -> bool {
    if curves.len() != 2 {
        return false;
    }
    let fits: Vec<_> = curves.iter().map(|c| fit_circle(c)).collect();
    let scale = fits[0].1;
    fits.iter().all(|f| f.2 <= CONCENTRIC_TOL * scale) && (fits[0].0 - fits[1].0).norm() <= CONCENTRIC_TOL * scale
}

/// Sorts a domain and friction law into the three cases.
pub fn classify(domain: &Domain, slip: &SlipSpec) -> Result<Classification> {
    slip.validate(domain.k())?;
    let k = domain.k();
    if slip.max() > 0.0 {
        return Ok(Classification {
            case: Case::A,
            description: format!("K > 0 somewhere (max {}): the rest state is the only steady state", slip.max()),
        });
    }
    let curves: Vec<Vec<C64>> = match domain {
        Domain::Circular(d) => {
            d.circles().map(|c| (0..256).map(|i| c.point(i as f64 * std::f64::consts::TAU / 256.0)).collect()).collect()
        }
        Domain::Smooth(d) => (0..d.k()).map(|j| d.curve(j).samples(256)).collect(),
    };
    if concentric(&curves) {
        Ok(Classification {
            case: Case::B,
            description: "K = 0 on a concentric annulus: rotating family u = C1 (y, -x)/|x|^2 with \
                          rho^(gamma-1) = (gamma-1)/gamma (C2 - C1^2/(2|x|^2))"
                .into(),
        })
    } else {
        Ok(Classification {
            case: Case::C,
            description: format!("K = 0 on a {k}-connected domain that is not a concentric annulus: rest state only"),
        })
    }
}

/// One traced level curve.
#[derive(Clone, Debug, Serialize)]
pub struct TracedCurve {
    pub start: [f64; 2],
    pub level: f64,
    pub closed: bool,
    /// Why tracing stopped early, if it did.
    pub terminated: Option<String>,
    pub length: f64,
    pub min_grad: f64,
    pub max_grad: f64,
    /// `max |∇ω| - min |∇ω|` along the curve.
    pub variation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSetReport {
    /// Set when the function is constant and has no level curves.
    pub degenerate: bool,
    pub curves: Vec<TracedCurve>,
}

/// Traces level curves of `ω` through each start point with RK4 steps of
/// length `step` along `∇⊥ω/|∇ω|`, followed by a Newton correction back onto
/// the level, and records how much `|∇ω|` varies along each curve.
pub fn level_set_speed_check(
    omega: &SeriesHarmonic,
    domain: &CircularDomain,
    starts: &[C64],
    step: f64,
) -> Result<LevelSetReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    let probe = domain
        .circles()
        .flat_map(|c| (0..64).map(move |i| c.point(i as f64 * std::f64::consts::TAU / 64.0)))
        .chain(starts.iter().copied());
    let scale = probe.map(|z| omega.fprime(z).norm()).fold(0.0, f64::max);
    if scale < 1e-12 {
        return Ok(LevelSetReport { degenerate: true, curves: Vec::new() });
    }
    let dir = |z: C64| {
        let g = omega.fprime(z).conj();
        C64::i() * g / g.norm()
    };
    let mut curves = Vec::new();
    for &z0 in starts {
        if !domain.contains(z0) {
            return Err(Error::OutsideDomain([z0.re, z0.im]));
        }
        let level = omega.value(z0);
        let g0 = omega.fprime(z0).norm();
        let (mut z, mut length) = (z0, 0.0);
        let (mut lo, mut hi) = (g0, g0);
        let mut closed = false;
        let mut terminated = None;
        let max_steps = (200.0 / step) as usize;
        for it in 0..max_steps {
            let k1 = dir(z);
            let k2 = dir(z + 0.5 * step * k1);
            let k3 = dir(z + 0.5 * step * k2);
            let k4 = dir(z + step * k3);
            let mut zn = z + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            for _ in 0..3 {
                let g = omega.fprime(zn).conj();
                zn -= (omega.value(zn) - level) * g / g.norm_sqr();
            }
            length += (zn - z).norm();
            z = zn;
            if !domain.contains(z) {
                terminated = Some("left the domain".into());
                break;
            }
            let g = omega.fprime(z).norm();
            if g < 1e-3 * g0 || !g.is_finite() {
                terminated = Some("entered a critical-point neighbourhood".into());
                break;
            }
            lo = lo.min(g);
            hi = hi.max(g);
            if it > 8 && (z - z0).norm() < 0.75 * step {
                closed = true;
                break;
            }
        }
        if !closed && terminated.is_none() {
            terminated = Some("step limit reached".into());
        }
        curves.push(TracedCurve {
            start: [z0.re, z0.im],
            level,
            closed,
            terminated,
            length,
            min_grad: lo,
            max_grad: hi,
            variation: hi - lo,
        });
    }
    Ok(LevelSetReport { degenerate: false, curves })
}

/// A point at distance `radius` from `centre` on the level set of `ω(centre)`.
pub fn level_start_near(omega: &SeriesHarmonic, centre: C64, radius: f64) -> Option<C64> {
    let c = omega.value(centre);
    let f = |t: f64| omega.value(centre + C64::from_polar(radius, t)) - c;
    let n = 360;
    let ts: Vec<f64> = (0..=n).map(|i| i as f64 * std::f64::consts::TAU / n as f64).collect();
    for w in ts.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        if f(a) * f(b) <= 0.0 {
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                if f(a) * f(m) <= 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            return Some(centre + C64::from_polar(radius, 0.5 * (a + b)));
        }
    }
    None
}

/// Smooth curve samples are circles to within the concentric tolerance.
pub fn is_circle(curve: &SmoothCurve) -> bool {
    let pts = curve.samples(256);
    let (_, r, dev) = fit_circle(&pts);
    dev <= CONCENTRIC_TOL * r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Circle;
    use crate::laplace::DirichletSolver;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_values_of_the_family() {
        let s = StationaryState::annulus_family(1.0, 3.0, 2.0, 0.5).unwrap();
        assert_abs_diff_eq!(s.rho_radial(0.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.rho_radial(1.0), 1.25, epsilon = 1e-15);
        let u = s.velocity(C64::new(0.0, 0.8));
        assert_abs_diff_eq!(u[0].hypot(u[1]), 1.0 / 0.8, epsilon = 1e-15);
        assert!(matches!(StationaryState::annulus_family(1.0, 2.0, 2.0, 0.5), Err(Error::Vacuum { .. })));
        let t = StationaryState::annulus_family(0.0, 3.0, 2.0, 0.5).unwrap();
        assert_eq!(t.kind, StateKind::Trivial);
        assert_abs_diff_eq!(t.rho_radial(0.7), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn radial_balance_holds() {
        // ∂_R P = ρ u_θ² / R for the closed form, checked by differences
        let s = StationaryState::annulus_family(0.8, 2.5, 1.7, 0.4).unwrap();
        for x in [0.45, 0.6, 0.93] {
            let e = 1e-5;
            let dp = (s.rho_radial(x + e).powf(1.7) - s.rho_radial(x - e).powf(1.7)) / (2.0 * e);
            assert_abs_diff_eq!(dp, s.rho_radial(x) * s.u_theta(x).powi(2) / x, epsilon = 1e-8);
        }
    }

    #[test]
    fn mass_matching_inverts_mass() {
        let s = StationaryState::annulus_family(1.0, 3.0, 2.0, 0.5).unwrap();
        let m = match_mass(1.0, 2.0, 0.5, s.mass()).unwrap();
        assert_abs_diff_eq!(m.c2, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn trivial_residual_vanishes() {
        let s = StationaryState::annulus_family(0.0, 3.0, 2.0, 0.5).unwrap();
        let p = PhysParams::new(1.0, 2.0, 2.0).unwrap();
        let r = residual(&s, &p, &SlipSpec::uniform(1.0, 2), 16).unwrap();
        assert_eq!(r.mass_sup, 0.0);
        assert_eq!(r.momentum_sup, 0.0);
        assert_eq!(r.curl_boundary_sup, 0.0);
    }

    #[test]
    fn friction_breaks_the_family() {
        let s = StationaryState::annulus_family(1.0, 3.0, 2.0, 0.5).unwrap();
        let p = PhysParams::new(1.0, 2.0, 2.0).unwrap();
        let r = residual(&s, &p, &SlipSpec::uniform(1.0, 2), 16).unwrap();
        assert_abs_diff_eq!(r.curl_boundary_sup, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn three_cases() {
        let ann = Domain::Circular(CircularDomain::annulus(0.5).unwrap());
        let ecc = Domain::Circular(CircularDomain::new(vec![Circle::new(0.2, 0.0, 0.3)]).unwrap());
        assert_eq!(classify(&ann, &SlipSpec::Constant(vec![0.3, 0.0])).unwrap().case, Case::A);
        assert_eq!(classify(&ann, &SlipSpec::uniform(0.0, 2)).unwrap().case, Case::B);
        assert_eq!(classify(&ecc, &SlipSpec::uniform(0.0, 2)).unwrap().case, Case::C);
    }

    #[test]
    fn annulus_level_curves_have_constant_speed() {
        let d = CircularDomain::annulus(0.5).unwrap();
        let w = DirichletSolver::new(&d, 24).unwrap().harmonic_measure(1).unwrap();
        let rep = level_set_speed_check(&w, &d, &[C64::new(0.7, 0.0)], 0.01).unwrap();
        let c = &rep.curves[0];
        assert!(c.closed, "{c:?}");
        assert!(c.variation <= 1e-8, "{c:?}");
    }
}
