//! Effective-viscous-flux representation integrals on circular domains.
//!
//! With the Neumann function `N = Γ + H` the flux `F = (2μ+λ)div u - (P - P̄)`
//! satisfies
//!
//! ```text
//! F(x) = -∫ ∂_{y_j}N(x,y) ρu̇_j(y) dy + R(x)
//!      = D_t V(x) - C(x) + B(x) + R(x)
//! ```
//!
//! where `V = -∫ ∂_{y_j}N ρu_j`, `D_t = ∂_t + u·∇`,
//! `C = -∫ ∂_{x_i}∂_{y_j}N (u_i(x) - u_i(y)) ρu_j`,
//! `B = ∫ (∂_{x_i}∂_{y_j} + ∂_{y_i}∂_{y_j})N ρu_iu_j` and
//! `R = l⁻¹∮F + μ∮N(x,·) n⊥·∇ω_b`.
//!
//! Integrals over the fluid use [`SingularQuadrature`]: a smooth cutoff splits
//! the integrand into a part vanishing near `x`, summed with the grid's
//! midpoint rule, and a disk patch integrated in polar coordinates around `x`,
//! where the `|x - y|⁻¹` singularity is absorbed by the Jacobian.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::geometry::{CircularDomain, Grid, PolarGrid};
use crate::greens::{gamma, loglog_slope, sup_samples, GreenSource, NeumannGreen};
use crate::quad::gauss_on;
use crate::simulator::{FluidState, PhysParams, PolarSolver, Scheme, SlipSpec};
use crate::stationary::StationaryState;
use crate::{Error, Result, C64};

/// Largest patch size in grid cells.
pub const PATCH_CELLS: f64 = 12.0;
/// Smallest admissible patch size in grid cells.
pub const PATCH_MIN_CELLS: f64 = 2.0;
/// Patch radius relative to the distance from the wall.
const PATCH_FILL: f64 = 0.9;
/// Step of the centred difference for `∇V`.
const GRAD_STEP: f64 = 0.02;
const INV_2PI: f64 = 0.5 / PI;

/// Smooth cutoff on `[0, 1]`: flat to all orders at both ends.
fn cutoff(s: f64) -> f64 {
    if s <= 0.0 {
        return 1.0;
    }
    if s >= 1.0 {
        return 0.0;
    }
    let (a, b) = ((-1.0 / (1.0 - s)).exp(), (-1.0 / s).exp());
    a / (a + b)
}

/// Quadrature point: a grid node (data exact) or a free point (data
/// interpolated).
#[derive(Clone, Copy, Debug)]
pub enum Pt {
    Node(usize, C64),
    Free(C64),
}

impl Pt {
    pub fn z(self) -> C64 {
        match self {
            Pt::Node(_, z) | Pt::Free(z) => z,
        }
    }
}

/// Cell arrays on a grid, exact at nodes and bilinear in between.
#[derive(Clone, Copy)]
pub struct GridField<'a, const N: usize> {
    pub grid: &'a Grid,
    pub data: [&'a [f64]; N],
}

impl<const N: usize> GridField<'_, N> {
    pub fn at(&self, p: Pt) -> [f64; N] {
        match p {
            Pt::Node(k, _) => self.data.map(|d| d[k]),
            Pt::Free(z) => self.data.map(|d| self.grid.interpolate(d, z)),
        }
    }
}

/// Density and Cartesian velocity on a grid.
pub type Flow<'a> = GridField<'a, 3>;

/// Disk patch around a singular point.
#[derive(Clone, Copy, Debug)]
pub struct Patch {
    pub centre: C64,
    pub radius: f64,
}

impl Patch {
    /// Same radius, moved to `centre`.
    pub fn moved(&self, centre: C64) -> Self {
        Self { centre, ..*self }
    }
}

/// Quadrature on an isotropic lattice covering the fluid plus a polar patch
/// around one singular point. The integrand is split by a smooth cutoff
/// resolved by at least [`PATCH_MIN_CELLS`] lattice cells: the far part is
/// summed with the midpoint rule, the near part is integrated in polar
/// coordinates about `x`, where `r dr dφ` absorbs an `|x - y|⁻¹` singularity.
///
/// On a polar data grid the lattice keeps the radial cells and refines the
/// angle until the outer arc length matches the radial spacing; data are
/// then interpolated at the lattice nodes.
#[derive(Clone, Debug)]
pub struct SingularQuadrature {
    domain: CircularDomain,
    grid: Grid,
    h: f64,
    /// `(data index when the lattice is the data grid, node, weight)`.
    nodes: Vec<(Option<usize>, C64, f64)>,
}

impl SingularQuadrature {
    pub fn new(domain: &CircularDomain, grid: Grid) -> Self {
        let (nodes, h) = match &grid {
            Grid::Polar(g) => {
                let nt = (2.0 * PI / g.hr()).ceil() as usize;
                let lat = PolarGrid::new(g.r_in, g.nr, nt.max(g.nt));
                let nodes = (0..lat.nr)
                    .flat_map(|i| (0..lat.nt).map(move |j| (i, j)))
                    .map(|(i, j)| (None, lat.node(i, j), lat.cell_area(i)))
                    .collect();
                (nodes, g.hr())
            }
            Grid::Masked(g) => {
                let nodes = (0..grid.len())
                    .filter(|&k| grid.is_active(k) && grid.weight(k) > 0.0)
                    .map(|k| (Some(k), grid.node(k), grid.weight(k)))
                    .collect();
                (nodes, g.h())
            }
        };
        Self { domain: domain.clone(), grid, h, nodes }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn domain(&self) -> &CircularDomain {
        &self.domain
    }

    /// Lattice spacing.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of lattice nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Patch at `x`: [`PATCH_CELLS`] lattice cells, shrunk to keep clear of
    /// the walls, and refused below [`PATCH_MIN_CELLS`].
    pub fn patch(&self, x: C64) -> Result<Patch> {
        if !self.domain.contains(x) {
            return Err(Error::OutsideDomain([x.re, x.im]));
        }
        let radius = (PATCH_FILL * self.domain.nearest_component(x).0).min(PATCH_CELLS * self.h);
        let min = PATCH_MIN_CELLS * self.h;
        if radius < min {
            return Err(Error::QuadraturePatch { point: [x.re, x.im], radius, min });
        }
        Ok(Patch { centre: x, radius })
    }

    fn pt(&self, k: Option<usize>, z: C64) -> Pt {
        match k {
            Some(k) => Pt::Node(k, z),
            None => Pt::Free(z),
        }
    }

    /// Midpoint rule for an integrand without singularity.
    pub fn integrate_regular(&self, f: impl Fn(Pt) -> f64) -> f64 {
        self.nodes.iter().map(|&(k, z, w)| w * f(self.pt(k, z))).sum()
    }

    /// `∫ f` for an integrand that is smooth away from `x` and at worst
    /// `O(|x - y|⁻¹)` at `x`.
    pub fn integrate(&self, x: C64, f: impl Fn(Pt) -> f64) -> Result<f64> {
        let patch = self.patch(x)?;
        Ok(self.integrate_with(&patch, f))
    }

    /// [`Self::integrate`] with a caller-supplied patch inside the fluid.
    pub fn integrate_with(&self, patch: &Patch, f: impl Fn(Pt) -> f64) -> f64 {
        let (x, rho) = (patch.centre, patch.radius);
        let outer: f64 = self
            .nodes
            .iter()
            .filter_map(|&(k, z, w)| {
                let c = 1.0 - cutoff((z - x).norm() / rho);
                (c > 0.0).then(|| w * c * f(self.pt(k, z)))
            })
            .sum();
        let cells = rho / self.h;
        let nr = (2.0 * cells).ceil() as usize + 8;
        let nphi = 2 * ((2.0 * PI * cells).ceil() as usize + 8);
        let mut inner = 0.0;
        for (r, wr) in gauss_on(nr, 0.0, rho) {
            let c = cutoff(r / rho);
            if c == 0.0 {
                continue;
            }
            let mut ring = 0.0;
            for i in 0..nphi {
                let phi = 2.0 * PI * (i as f64 + 0.5) / nphi as f64;
                ring += f(Pt::Free(x + C64::from_polar(r, phi)));
            }
            inner += wr * r * c * ring * 2.0 * PI / nphi as f64;
        }
        outer + inner
    }
}

/// Closed-form `∫∫ log|x - y| dy` over the rectangle `[lo.re, hi.re] × [lo.im, hi.im]`.
pub fn log_cell_integral(x: C64, lo: C64, hi: C64) -> f64 {
    // ∂_X∂_Y G = ½ log(X² + Y²)
    let g = |a: f64, b: f64| {
        let r2 = a * a + b * b;
        if r2 == 0.0 {
            return 0.0;
        }
        let mut v = a * b * (r2.ln() - 3.0);
        if a != 0.0 {
            v += a * a * (b / a).atan();
        }
        if b != 0.0 {
            v += b * b * (a / b).atan();
        }
        0.5 * v
    };
    let (x0, x1) = (lo.re - x.re, hi.re - x.re);
    let (y0, y1) = (lo.im - x.im, hi.im - x.im);
    g(x1, y1) - g(x0, y1) - g(x1, y0) + g(x0, y0)
}

/// The same integral by the local polar rule: the rectangle is written as a
/// signed sum of rectangles with a corner at `x`, each split into two
/// triangles integrated exactly in the radius and by Gauss in the angle.
pub fn log_cell_polar(x: C64, lo: C64, hi: C64) -> f64 {
    // ∫_0^{a/cos φ} r log r dr, then Gauss over φ ∈ [0, atan(b/a)]
    let triangle = |a: f64, b: f64| -> f64 {
        if a <= 0.0 || b <= 0.0 {
            return 0.0;
        }
        gauss_on(40, 0.0, (b / a).atan())
            .into_iter()
            .map(|(phi, w)| {
                let rr = a / phi.cos();
                w * (0.5 * rr * rr * rr.ln() - 0.25 * rr * rr)
            })
            .sum()
    };
    let corner = |a: f64, b: f64| -> f64 {
        let s = a.signum() * b.signum();
        let (a, b) = (a.abs(), b.abs());
        s * (triangle(a, b) + triangle(b, a))
    };
    let (x0, x1) = (lo.re - x.re, hi.re - x.re);
    let (y0, y1) = (lo.im - x.im, hi.im - x.im);
    corner(x1, y1) - corner(x0, y1) - corner(x1, y0) + corner(x0, y0)
}

/// Kernels of `N(x, ·)` for a fixed first argument `x`.
pub struct Kernel {
    src: Arc<GreenSource>,
    x: C64,
}

fn hess_from(d2: C64) -> [[f64; 2]; 2] {
    [[d2.re, -d2.im], [-d2.im, -d2.re]]
}

impl Kernel {
    pub fn new(green: &NeumannGreen, x: C64) -> Result<Self> {
        Ok(Self { src: green.source(x)?, x })
    }

    pub fn n(&self, y: C64) -> f64 {
        gamma(y, self.x) + self.src.h.value(y)
    }

    /// `∂_{y_j} N(x, y)`.
    pub fn dy(&self, y: C64) -> [f64; 2] {
        let d = INV_2PI / (y - self.x) + self.src.h.fprime(y);
        [d.re, -d.im]
    }

    /// `∂_{x_i}∂_{y_j} H` and `∂_{y_i}∂_{y_j} H` (indexed `[i][j]`).
    pub fn h_second(&self, y: C64) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
        let mixed = [self.src.dh[0].gradient(y), self.src.dh[1].gradient(y)];
        (mixed, hess_from(self.src.h.eval(y).2))
    }

    /// `∂_{x_i}∂_{y_j} N(x, y)`; the `Γ` part is `-∂_{y_i}∂_{y_j}Γ`.
    pub fn dxdy(&self, y: C64) -> [[f64; 2]; 2] {
        let g = hess_from(-INV_2PI / ((y - self.x) * (y - self.x)));
        let mixed = [self.src.dh[0].gradient(y), self.src.dh[1].gradient(y)];
        [0, 1].map(|i| [0, 1].map(|j| mixed[i][j] - g[i][j]))
    }
}

/// `-∫ ∂_{y_j}N(x,y) v_j(y) dy`.
pub fn dipole_potential(
    q: &SingularQuadrature,
    green: &NeumannGreen,
    x: C64,
    v: impl Fn(Pt) -> [f64; 2],
) -> Result<f64> {
    dipole_potential_with(q, green, &q.patch(x)?, v)
}

fn dipole_potential_with(
    q: &SingularQuadrature,
    green: &NeumannGreen,
    patch: &Patch,
    v: impl Fn(Pt) -> [f64; 2],
) -> Result<f64> {
    let kern = Kernel::new(green, patch.centre)?;
    Ok(q.integrate_with(patch, |p| {
        let d = kern.dy(p.z());
        let a = v(p);
        -(d[0] * a[0] + d[1] * a[1])
    }))
}

/// `∇V(x)` by centred differences with one patch radius for the whole
/// stencil, so the quadrature moves rigidly with the point.
pub fn inv_laplace_div_gradient(q: &SingularQuadrature, green: &NeumannGreen, flow: &Flow, x: C64) -> Result<[f64; 2]> {
    let dist = q.domain().nearest_component(x).0;
    let eps = GRAD_STEP.min(0.25 * dist);
    let steps = [C64::new(eps, 0.0), C64::new(0.0, eps)];
    let mut patch = q.patch(x)?;
    for e in steps {
        for z in [x + e, x - e] {
            patch.radius = patch.radius.min(q.patch(z)?.radius);
        }
    }
    let v = |z: C64| {
        dipole_potential_with(q, green, &patch.moved(z), |p| {
            let [r, u1, u2] = flow.at(p);
            [r * u1, r * u2]
        })
    };
    let mut g = [0.0; 2];
    for (i, e) in steps.into_iter().enumerate() {
        g[i] = (v(x + e)? - v(x - e)?) / (2.0 * eps);
    }
    Ok(g)
}

/// `V(x) = -∫ ∂_{y_j}N(x,y) ρu_j(y) dy`.
pub fn inv_laplace_div(q: &SingularQuadrature, green: &NeumannGreen, flow: &Flow, x: C64) -> Result<f64> {
    dipole_potential(q, green, x, |p| {
        let [r, u1, u2] = flow.at(p);
        [r * u1, r * u2]
    })
}

/// `C(x) = -∫ ∂_{x_i}∂_{y_j}N(x,y) (u_i(x) - u_i(y)) ρu_j(y) dy`. Kernel and
/// difference are multiplied before summation, leaving an `O(|x-y|⁻¹)`
/// integrand.
pub fn inner_commutator(q: &SingularQuadrature, green: &NeumannGreen, flow: &Flow, x: C64) -> Result<f64> {
    let kern = Kernel::new(green, x)?;
    let [_, ux1, ux2] = flow.at(Pt::Free(x));
    let ux = [ux1, ux2];
    q.integrate(x, |p| {
        let [r, u1, u2] = flow.at(p);
        let u = [u1, u2];
        let k = kern.dxdy(p.z());
        let mut s = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                s += k[i][j] * (ux[i] - u[i]) * r * u[j];
            }
        }
        -s
    })
}

/// `∫ |u(y) - u(x)| / |y - x|² ρ|u|(y) dy`, the majorant of the inner
/// commutator.
pub fn commutator_majorant(q: &SingularQuadrature, flow: &Flow, x: C64) -> Result<f64> {
    let [_, ux1, ux2] = flow.at(Pt::Free(x));
    q.integrate(x, |p| {
        let [r, u1, u2] = flow.at(p);
        let d2 = (p.z() - x).norm_sqr();
        if d2 == 0.0 {
            return 0.0;
        }
        (u1 - ux1).hypot(u2 - ux2) / d2 * r * u1.hypot(u2)
    })
}

/// Boundary term with its size diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct BoundaryTerm {
    pub value: f64,
    /// Component whose `d/4` band contains `x`, if any.
    pub near: Option<usize>,
    /// Near band: the part carried by the tangential value `u(x_j)`.
    pub tangential: f64,
    /// `∫ ρ|u|²`.
    pub energy: f64,
    /// Far band: `∫ρ|u|²`. Near band:
    /// `∫ |u(y) - u(x_j)| / |y - x_j|² ρ|u| dy + ∫ρ|u|²`.
    pub majorant: f64,
}

impl BoundaryTerm {
    pub fn ratio(&self) -> f64 {
        if self.majorant > 0.0 {
            self.value.abs() / self.majorant
        } else {
            0.0
        }
    }
}

/// `B(x) = ∫ (∂_{x_i}∂_{y_j} + ∂_{y_i}∂_{y_j})N ρu_iu_j`. The `Γ` parts cancel,
/// so the integrand is regular. Inside the `d/4` band of `Γ_j` the sum is
/// split around the tangential wall velocity `u(x_j)` at the projection `x_j`.
pub fn boundary_term_b(q: &SingularQuadrature, green: &NeumannGreen, flow: &Flow, x: C64) -> Result<BoundaryTerm> {
    let domain = q.domain();
    if !domain.contains(x) {
        return Err(Error::OutsideDomain([x.re, x.im]));
    }
    let kern = Kernel::new(green, x)?;
    let (dist, j) = domain.nearest_component(x);
    let band = if domain.k() > 1 { domain.gap() / 4.0 } else { 0.25 };
    let energy = q.integrate_regular(|p| {
        let [r, u1, u2] = flow.at(p);
        r * (u1 * u1 + u2 * u2)
    });
    let kernel = |p: Pt| {
        let (m, h) = kern.h_second(p.z());
        [0, 1].map(|i| [0, 1].map(|jj| m[i][jj] + h[i][jj]))
    };
    if dist > band {
        let value = q.integrate_regular(|p| {
            let k = kernel(p);
            let [r, u1, u2] = flow.at(p);
            let u = [u1, u2];
            (0..2).map(|i| (0..2).map(|jj| k[i][jj] * r * u[i] * u[jj]).sum::<f64>()).sum()
        });
        return Ok(BoundaryTerm { value, near: None, tangential: 0.0, energy, majorant: energy });
    }
    let xj = domain.project(j, x)?;
    let tau = domain.boundary_frame(j, domain.angle_on(j, xj)).normal_perp;
    let [_, w1, w2] = flow.at(Pt::Free(xj));
    let a = w1 * tau.re + w2 * tau.im;
    let ut = [a * tau.re, a * tau.im];
    let split = |p: Pt| {
        let k = kernel(p);
        let [r, u1, u2] = flow.at(p);
        let u = [u1, u2];
        let mut rest = 0.0;
        let mut tang = 0.0;
        for i in 0..2 {
            for jj in 0..2 {
                rest += k[i][jj] * r * (u[i] - ut[i]) * u[jj];
                tang += k[i][jj] * r * ut[i] * u[jj];
            }
        }
        (rest, tang)
    };
    let rest = q.integrate_regular(|p| split(p).0);
    let tangential = q.integrate_regular(|p| split(p).1);
    let near_majorant = q.integrate_regular(|p| {
        let [r, u1, u2] = flow.at(p);
        let d2 = (p.z() - xj).norm_sqr();
        (u1 - ut[0]).hypot(u2 - ut[1]) / d2 * r * u1.hypot(u2)
    });
    Ok(BoundaryTerm { value: rest + tangential, near: Some(j), tangential, energy, majorant: near_majorant + energy })
}

/// Sup over boundary samples of the near-band `B` integrand before and after
/// subtracting `u(x_j)`, along the ladder `δ = d/4 … d/64` at angle `theta`
/// on component `j`. Returns `(δ, raw, subtracted)` rungs and the two log-log
/// slopes.
pub fn b_integrand_order(
    green: &NeumannGreen,
    u: impl Fn(C64) -> [f64; 2],
    j: usize,
    theta: f64,
) -> Result<(Vec<[f64; 3]>, f64, f64)> {
    let domain = green.domain();
    let frame = domain.boundary_frame(j, theta);
    let w = u(frame.point);
    let a = w[0] * frame.normal_perp.re + w[1] * frame.normal_perp.im;
    let ut = [a * frame.normal_perp.re, a * frame.normal_perp.im];
    let mut rungs = Vec::new();
    for (delta, x) in crate::greens::ladder_sources(domain, j, theta) {
        let kern = Kernel::new(green, x)?;
        let (mut raw, mut sub) = (0.0f64, 0.0f64);
        for y in sup_samples(domain, x) {
            let (m, h) = kern.h_second(y);
            let v = u(y);
            let (mut s0, mut s1) = (0.0, 0.0);
            for i in 0..2 {
                for jj in 0..2 {
                    let k = m[i][jj] + h[i][jj];
                    s0 += k * v[i] * v[jj];
                    s1 += k * (v[i] - ut[i]) * v[jj];
                }
            }
            raw = raw.max(s0.abs());
            sub = sub.max(s1.abs());
        }
        rungs.push([delta, raw, sub]);
    }
    let d: Vec<f64> = rungs.iter().map(|r| r[0]).collect();
    let raw: Vec<f64> = rungs.iter().map(|r| r[1]).collect();
    let sub: Vec<f64> = rungs.iter().map(|r| r[2]).collect();
    let (s_raw, s_sub) = (loglog_slope(&d, &raw), loglog_slope(&d, &sub));
    Ok((rungs, s_raw, s_sub))
}

/// Boundary samples of `F` and the wall vorticity on one component.
#[derive(Clone, Debug)]
pub struct ComponentTrace {
    pub component: usize,
    pub theta: Vec<f64>,
    pub flux: Vec<f64>,
    pub omega: Vec<f64>,
}

/// Traces on every component, `m` equispaced samples each.
#[derive(Clone, Debug)]
pub struct BoundaryTraces {
    pub comps: Vec<ComponentTrace>,
}

/// Spectral derivative of periodic samples on `[0, 2π)`.
fn spectral_derivative(v: &[f64]) -> Vec<f64> {
    let m = v.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<rustfft::num_complex::Complex64> =
        v.iter().map(|&x| rustfft::num_complex::Complex64::new(x, 0.0)).collect();
    planner.plan_fft_forward(m).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = if 2 * k < m {
            k as f64
        } else if 2 * k == m {
            0.0
        } else {
            k as f64 - m as f64
        };
        *c *= rustfft::num_complex::Complex64::new(0.0, f / m as f64);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

impl BoundaryTraces {
    /// Traces from closed forms `(F, ω_b)` at boundary point `z` of component `j`.
    pub fn from_fn(domain: &CircularDomain, m: usize, f: impl Fn(usize, C64) -> (f64, f64)) -> Self {
        let comps = (0..domain.k())
            .map(|j| {
                let c = domain.circle(j);
                let theta: Vec<f64> = crate::quad::angles(m).collect();
                let (flux, omega) = theta.iter().map(|&t| f(j, c.point(t))).unzip();
                ComponentTrace { component: j, theta, flux, omega }
            })
            .collect();
        Self { comps }
    }

    /// Traces from grid data: `F` and `u` extrapolated to the wall, and the
    /// slip-law vorticity `ω_b = K u·n⊥`.
    pub fn from_grid(
        domain: &CircularDomain,
        grid: &Grid,
        flux: &[f64],
        u: [&[f64]; 2],
        slip: &SlipSpec,
        m: usize,
    ) -> Self {
        Self::from_fn(domain, m, |j, z| {
            let t = domain.angle_on(j, z);
            let np = domain.boundary_frame(j, t).normal_perp;
            let v = [grid.interpolate(u[0], z), grid.interpolate(u[1], z)];
            (grid.interpolate(flux, z), slip.at(j, t) * (v[0] * np.re + v[1] * np.im))
        })
    }

    /// `∮ F dS`.
    pub fn flux_integral(&self, domain: &CircularDomain) -> f64 {
        self.comps
            .iter()
            .map(|c| {
                let ds = 2.0 * PI * domain.circle(c.component).radius / c.theta.len() as f64;
                c.flux.iter().sum::<f64>() * ds
            })
            .sum()
    }

    /// `n⊥·∇ω_b` on each component.
    pub fn tangential_vorticity_gradient(&self, domain: &CircularDomain) -> Vec<Vec<f64>> {
        self.comps
            .iter()
            .map(|c| {
                let r = domain.circle(c.component).radius;
                let d = spectral_derivative(&c.omega);
                // n⊥ = ±e_θ; d/dθ = r e_θ·∇
                let sign = if c.component == 0 { -1.0 } else { 1.0 };
                d.iter().map(|v| sign * v / r).collect()
            })
            .collect()
    }
}

/// `R(x) = l⁻¹∮F dS + μ∮N(x,·) n⊥·∇ω_b dS`.
pub fn remainder_r(green: &NeumannGreen, traces: &BoundaryTraces, mu: f64, x: C64) -> Result<f64> {
    let domain = green.domain();
    let mean = traces.flux_integral(domain) / green.l();
    let grads = traces.tangential_vorticity_gradient(domain);
    if grads.iter().flatten().all(|g| *g == 0.0) {
        return Ok(mean);
    }
    let kern = Kernel::new(green, x)?;
    let mut s = 0.0;
    for (c, g) in traces.comps.iter().zip(&grads) {
        let circle = domain.circle(c.component);
        let ds = 2.0 * PI * circle.radius / c.theta.len() as f64;
        s += c.theta.iter().zip(g).map(|(&t, gv)| kern.n(circle.point(t)) * gv).sum::<f64>() * ds;
    }
    Ok(mean + mu * s)
}

/// Density and Cartesian velocity arrays at one time.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub rho: Vec<f64>,
    pub u: [Vec<f64>; 2],
}

impl Snapshot {
    pub fn flow<'a>(&'a self, grid: &'a Grid) -> Flow<'a> {
        GridField { grid, data: [&self.rho, &self.u[0], &self.u[1]] }
    }

    fn midpoint(a: &Snapshot, b: &Snapshot) -> Snapshot {
        let avg = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| 0.5 * (p + q)).collect();
        Snapshot { t: 0.5 * (a.t + b.t), rho: avg(&a.rho, &b.rho), u: [avg(&a.u[0], &b.u[0]), avg(&a.u[1], &b.u[1])] }
    }

    fn from_state(scheme: &dyn Scheme, s: &FluidState) -> Self {
        let n = scheme.len();
        let mut u = [vec![0.0; n], vec![0.0; n]];
        for k in 0..n {
            let v = scheme.velocity(s, k);
            u[0][k] = v[0];
            u[1][k] = v[1];
        }
        Self { t: s.t, rho: s.rho.clone(), u }
    }
}

/// Two snapshots with the mid-time data entering the representation.
#[derive(Clone, Debug)]
pub struct SnapshotPair {
    pub domain: CircularDomain,
    pub grid: Grid,
    pub mu: f64,
    pub prev: Snapshot,
    pub next: Snapshot,
    pub mid: Snapshot,
    /// `F` at the mid time.
    pub flux: Vec<f64>,
    /// `ρu̇` at the mid time (Cartesian).
    pub rho_udot: [Vec<f64>; 2],
    /// Momentum residual `ρu̇ - ∇F - μ∇⊥ω` of manufactured states.
    pub body: Option<[Vec<f64>; 2]>,
    pub traces: BoundaryTraces,
}

fn polar_to_cartesian(grid: &PolarGrid, v: &[Vec<f64>; 2]) -> [Vec<f64>; 2] {
    let n = grid.len();
    let mut out = [vec![0.0; n], vec![0.0; n]];
    for k in 0..n {
        let th = grid.angle(k % grid.nt);
        let (c, s) = (th.cos(), th.sin());
        out[0][k] = v[0][k] * c - v[1][k] * s;
        out[1][k] = v[0][k] * s + v[1][k] * c;
    }
    out
}

impl SnapshotPair {
    /// Two consecutive states of the polar solver.
    pub fn from_polar(
        domain: &CircularDomain,
        solver: &PolarSolver,
        slip: &SlipSpec,
        prev: &FluidState,
        next: &FluidState,
    ) -> Result<Self> {
        if (next.t - prev.t).abs() < 1e-300 {
            return Err(Error::InvalidParameter("snapshots at identical times".into()));
        }
        let grid = Grid::Polar(solver.grid.clone());
        let md = solver.material_derivative(prev, next)?;
        let mid_state = FluidState {
            t: 0.5 * (prev.t + next.t),
            rho: prev.rho.iter().zip(&next.rho).map(|(a, b)| 0.5 * (a + b)).collect(),
            u: [0, 1].map(|c| prev.u[c].iter().zip(&next.u[c]).map(|(a, b)| 0.5 * (a + b)).collect()),
        };
        let (flux, _) = solver.effective_flux(&mid_state);
        let rho_udot = polar_to_cartesian(&solver.grid, &md);
        let (p, n) = (Snapshot::from_state(solver, prev), Snapshot::from_state(solver, next));
        let mid = Snapshot::midpoint(&p, &n);
        let traces = BoundaryTraces::from_grid(domain, &grid, &flux, [&mid.u[0], &mid.u[1]], slip, solver.grid.nt);
        Ok(Self {
            domain: domain.clone(),
            grid,
            mu: solver.params().mu,
            prev: p,
            next: n,
            mid,
            flux,
            rho_udot,
            body: None,
            traces,
        })
    }

    /// The steady rotating state `(C₁, C₂)` on the annulus `r < |x| < 1`,
    /// sampled at resolution `n` at two times `dt` apart.
    pub fn steady(r: f64, params: PhysParams, c1: f64, c2: f64, n: usize) -> Result<Self> {
        let domain = CircularDomain::annulus(r)?;
        let slip = SlipSpec::uniform(0.0, 2);
        let mut solver = PolarSolver::new(PolarGrid::new(r, n, 2 * n), params, &slip, false)?;
        let st = StationaryState::annulus_family(c1, c2, params.gamma, r)?;
        let s0 = solver.sample(&|z| st.rho(z), &|z| st.velocity(z));
        let rh = solver.mass(&s0) / solver.area();
        solver.set_rho_hat(rh);
        let s1 = FluidState { t: 1e-3, ..s0.clone() };
        Self::from_polar(&domain, &solver, &slip, &s0, &s1)
    }

    /// Manufactured time-dependent state on the annulus `r < |x| < 1`:
    /// differential rotation `u = (1 + t) U(R) e_θ` with
    /// `U = 0.5R + 0.2/R + 0.1R³`, and a non-radial density transported
    /// exactly, `ρ(t, R, θ) = ρ₀(R, θ - (t + t²/2) U(R)/R)`. The snapshots sit
    /// at `t_mid ∓ dt/2`.
    pub fn manufactured(r: f64, params: PhysParams, n: usize, t_mid: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("snapshots at identical times".into()));
        }
        let domain = CircularDomain::annulus(r)?;
        let grid = Grid::Polar(PolarGrid::new(r, n, 2 * n));
        let m = Manufactured;
        let sample = |t: f64| {
            let len = grid.len();
            let mut s = Snapshot { t, rho: vec![0.0; len], u: [vec![0.0; len], vec![0.0; len]] };
            for k in 0..len {
                let z = grid.node(k);
                s.rho[k] = m.rho(t, z);
                let v = m.velocity(t, z);
                s.u[0][k] = v[0];
                s.u[1][k] = v[1];
            }
            s
        };
        let prev = sample(t_mid - 0.5 * dt);
        let next = sample(t_mid + 0.5 * dt);
        let mid = Snapshot::midpoint(&prev, &next);
        let len = grid.len();
        let pbar = (0..len).map(|k| grid.weight(k) * params.pressure(m.rho(t_mid, grid.node(k)))).sum::<f64>()
            / grid.integrate(&vec![1.0; len]);
        let flux_at = |z: C64| -(params.pressure(m.rho(t_mid, z)) - pbar);
        let mut flux = vec![0.0; len];
        let mut rho_udot = [vec![0.0; len], vec![0.0; len]];
        let mut body = [vec![0.0; len], vec![0.0; len]];
        for k in 0..len {
            let z = grid.node(k);
            flux[k] = flux_at(z);
            let rho = m.rho(t_mid, z);
            let a = m.acceleration(t_mid, z);
            let gf = fd_gradient(&flux_at, z);
            let gw = m.vorticity_gradient(t_mid, z);
            for c in 0..2 {
                rho_udot[c][k] = rho * a[c];
            }
            // ∇⊥ω = (-∂₂ω, ∂₁ω)
            body[0][k] = rho * a[0] - gf[0] - params.mu * (-gw[1]);
            body[1][k] = rho * a[1] - gf[1] - params.mu * gw[0];
        }
        let traces = BoundaryTraces::from_fn(&domain, 2 * n, |_, z| (flux_at(z), m.vorticity(t_mid, z)));
        Ok(Self { domain, grid, mu: params.mu, prev, next, mid, flux, rho_udot, body: Some(body), traces })
    }

    pub fn dt(&self) -> f64 {
        self.next.t - self.prev.t
    }
}

/// Fourth-order central-difference gradient of a closed form.
fn fd_gradient(f: &dyn Fn(C64) -> f64, z: C64) -> [f64; 2] {
    let e = 1e-4;
    let d = |dir: C64| {
        (-f(z + 2.0 * e * dir) + 8.0 * f(z + e * dir) - 8.0 * f(z - e * dir) + f(z - 2.0 * e * dir)) / (12.0 * e)
    };
    [d(C64::new(1.0, 0.0)), d(C64::i())]
}

/// The manufactured flow used by [`SnapshotPair::manufactured`].
#[derive(Clone, Copy, Debug)]
struct Manufactured;

impl Manufactured {
    fn profile(radius: f64) -> (f64, f64) {
        // U and U'
        (0.5 * radius + 0.2 / radius + 0.1 * radius.powi(3), 0.5 - 0.2 / (radius * radius) + 0.3 * radius * radius)
    }

    fn rho(&self, t: f64, z: C64) -> f64 {
        let radius = z.norm();
        let (u, _) = Self::profile(radius);
        let th = z.arg() - (t + 0.5 * t * t) * u / radius;
        1.0 + 0.2 * radius * th.cos() + 0.1 * radius * radius * (2.0 * th).sin()
    }

    fn velocity(&self, t: f64, z: C64) -> [f64; 2] {
        let radius = z.norm();
        let e = z / radius;
        let v = (1.0 + t) * Self::profile(radius).0;
        [-v * e.im, v * e.re]
    }

    /// `u̇ = U e_θ - (1+t)² U²/R e_R`.
    fn acceleration(&self, t: f64, z: C64) -> [f64; 2] {
        let radius = z.norm();
        let e = z / radius;
        let (u, _) = Self::profile(radius);
        let ar = -(1.0 + t).powi(2) * u * u / radius;
        [ar * e.re - u * e.im, ar * e.im + u * e.re]
    }

    /// `ω = (1 + t)(U' + U/R)`.
    fn vorticity(&self, t: f64, z: C64) -> f64 {
        let radius = z.norm();
        let (u, du) = Self::profile(radius);
        (1.0 + t) * (du + u / radius)
    }

    fn vorticity_gradient(&self, t: f64, z: C64) -> [f64; 2] {
        fd_gradient(&|w| self.vorticity(t, w), z)
    }
}

/// Verification points: 16 interior points stratified by distance to the
/// boundary components, then 8 points in the `d/8` band of each component.
/// The flag marks band points with their component.
pub fn sample_points(domain: &CircularDomain) -> Vec<(C64, Option<usize>)> {
    let k = domain.k();
    let d = if k > 1 { domain.gap() } else { 1.0 };
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut pts = Vec::new();
    let mut p = 0usize;
    while pts.len() < 16 && p < 1000 {
        let j = p % k;
        let frac = 0.3 + 0.2 * ((p / k) % 4) as f64 / 3.0;
        let f = domain.boundary_frame(j, golden * p as f64);
        let z = f.point - frac * d * f.normal;
        p += 1;
        if domain.contains(z) && domain.nearest_component(z).0 > 0.25 * d {
            pts.push((z, None));
        }
    }
    for j in 0..k {
        let mut placed = 0;
        let mut i = 0;
        while placed < 8 && i < 64 {
            let f = domain.boundary_frame(j, 2.0 * PI * (i as f64 + 0.5) / 8.0 + 0.1 * (i / 8) as f64);
            let z = f.point - d / 8.0 * f.normal;
            i += 1;
            if domain.contains(z) && (domain.nearest_component(z).1 == j) {
                pts.push((z, Some(j)));
                placed += 1;
            }
        }
    }
    pts
}

/// Per-point values of the three flux evaluations and the pieces of the
/// commutator form.
#[derive(Clone, Debug, Serialize)]
pub struct SamplePoint {
    pub x: [f64; 2],
    pub band: Option<usize>,
    pub f_direct: f64,
    pub f_c512: f64,
    pub f_qp11: f64,
    pub dt_v: f64,
    pub advect_v: f64,
    pub commutator: f64,
    pub boundary: f64,
    pub remainder: f64,
    pub body: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RepresentationReport {
    pub points: Vec<SamplePoint>,
    /// `max |F|` over the grid.
    pub flux_sup: f64,
    /// Max pairwise discrepancies `(i)-(ii)`, `(i)-(iii)`, `(ii)-(iii)`.
    pub max_direct_c512: f64,
    pub max_direct_qp11: f64,
    pub max_c512_qp11: f64,
}

impl RepresentationReport {
    pub fn relative(&self, abs: f64) -> f64 {
        abs / self.flux_sup.max(1e-300)
    }
}

fn pointwise(
    q: &SingularQuadrature,
    green: &NeumannGreen,
    pair: &SnapshotPair,
    x: C64,
    band: Option<usize>,
    full: bool,
) -> Result<SamplePoint> {
    let grid = &pair.grid;
    let f_direct = grid.interpolate(&pair.flux, x);
    let remainder = remainder_r(green, &pair.traces, pair.mu, x)?;
    let body = match &pair.body {
        Some(b) => {
            let f = GridField { grid, data: [&b[0], &b[1]] };
            -dipole_potential(q, green, x, |p| f.at(p))?
        }
        None => 0.0,
    };
    let acc = GridField { grid, data: [&pair.rho_udot[0], &pair.rho_udot[1]] };
    let f_c512 = dipole_potential(q, green, x, |p| acc.at(p))? + remainder + body;
    let mut s = SamplePoint {
        x: [x.re, x.im],
        band,
        f_direct,
        f_c512,
        f_qp11: f64::NAN,
        dt_v: 0.0,
        advect_v: 0.0,
        commutator: 0.0,
        boundary: 0.0,
        remainder,
        body,
    };
    if !full {
        return Ok(s);
    }
    let (fp, fnx, fm) = (pair.prev.flow(grid), pair.next.flow(grid), pair.mid.flow(grid));
    s.dt_v = (inv_laplace_div(q, green, &fnx, x)? - inv_laplace_div(q, green, &fp, x)?) / pair.dt();
    let [_, u1, u2] = fm.at(Pt::Free(x));
    let grad = inv_laplace_div_gradient(q, green, &fm, x)?;
    s.advect_v = u1 * grad[0] + u2 * grad[1];
    s.commutator = inner_commutator(q, green, &fm, x)?;
    s.boundary = boundary_term_b(q, green, &fm, x)?.value;
    s.f_qp11 = s.dt_v + s.advect_v - s.commutator + s.boundary + s.remainder + s.body;
    Ok(s)
}

/// Three-way check of the flux representation at the given points: direct
/// `F`, the `ρu̇` form, and the commutator form (computed only when `full`).
pub fn verify_representation(
    green: &NeumannGreen,
    pair: &SnapshotPair,
    points: &[(C64, Option<usize>)],
    full: bool,
) -> Result<RepresentationReport> {
    if pair.dt().abs() < 1e-300 {
        return Err(Error::InvalidParameter("snapshots at identical times".into()));
    }
    let q = SingularQuadrature::new(&pair.domain, pair.grid.clone());
    let pts: Vec<SamplePoint> =
        points.par_iter().map(|&(x, b)| pointwise(&q, green, pair, x, b, full)).collect::<Result<_>>()?;
    let flux_sup =
        (0..pair.grid.len()).filter(|&k| pair.grid.is_active(k)).map(|k| pair.flux[k].abs()).fold(0.0, f64::max);
    let max_of = |f: &dyn Fn(&SamplePoint) -> f64| pts.iter().map(f).fold(0.0, f64::max);
    let max_direct_c512 = max_of(&|p| (p.f_direct - p.f_c512).abs());
    let (max_direct_qp11, max_c512_qp11) = if full {
        (max_of(&|p| (p.f_direct - p.f_qp11).abs()), max_of(&|p| (p.f_c512 - p.f_qp11).abs()))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(RepresentationReport { points: pts, flux_sup, max_direct_c512, max_direct_qp11, max_c512_qp11 })
}

/// Interior and wall residuals of `ΔF = div(ρu̇)`, `∂_nF = ρu̇·n + μ n⊥·∇ω_b`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NeumannCheck {
    /// `L²` norm of `ΔF - div(ρu̇)` over cells off the walls.
    pub interior: f64,
    /// RMS of the wall flux mismatch.
    pub boundary: f64,
    /// `L²` norm of `ΔF` for scale.
    pub scale: f64,
}

/// Finite-difference check of the Neumann problem for `F` (polar grids).
pub fn neumann_f_check(pair: &SnapshotPair) -> Result<NeumannCheck> {
    let Grid::Polar(g) = &pair.grid else {
        return Err(Error::Unsupported("the Neumann flux check needs a polar grid".into()));
    };
    let (nr, nt, hr, ht) = (g.nr, g.nt, g.hr(), g.ht());
    if nr < 4 {
        return Err(Error::InvalidParameter("at least four radial cells are needed".into()));
    }
    // polar components of ρu̇
    let mut vr = vec![0.0; g.len()];
    let mut vt = vec![0.0; g.len()];
    for k in 0..g.len() {
        let th = g.angle(k % nt);
        let (c, s) = (th.cos(), th.sin());
        vr[k] = pair.rho_udot[0][k] * c + pair.rho_udot[1][k] * s;
        vt[k] = -pair.rho_udot[0][k] * s + pair.rho_udot[1][k] * c;
    }
    let f = &pair.flux;
    let idx = |i: usize, j: usize| g.idx(i, j % nt);
    let (mut res, mut scale) = (0.0, 0.0);
    for i in 1..nr - 1 {
        let r = g.radius(i);
        let (rp, rm) = (r + 0.5 * hr, r - 0.5 * hr);
        for j in 0..nt {
            let (jp, jm) = (j + 1, j + nt - 1);
            let lap = (rp * (f[idx(i + 1, j)] - f[idx(i, j)]) - rm * (f[idx(i, j)] - f[idx(i - 1, j)])) / (r * hr * hr)
                + (f[idx(i, jp)] - 2.0 * f[idx(i, j)] + f[idx(i, jm)]) / (r * r * ht * ht);
            let div = ((r + hr) * vr[idx(i + 1, j)] - (r - hr) * vr[idx(i - 1, j)]) / (2.0 * r * hr)
                + (vt[idx(i, jp)] - vt[idx(i, jm)]) / (2.0 * r * ht);
            let w = g.cell_area(i);
            res += w * (lap - div).powi(2);
            scale += w * lap * lap;
        }
    }
    let grads = pair.traces.tangential_vorticity_gradient(&pair.domain);
    let mut wall = 0.0;
    let mut count = 0usize;
    for (c, gw) in pair.traces.comps.iter().zip(&grads) {
        if c.theta.len() != nt {
            return Err(Error::InvalidParameter("wall traces must match the angular grid".into()));
        }
        let cells: [usize; 3] = if c.component == 0 { [nr - 1, nr - 2, nr - 3] } else { [0, 1, 2] };
        // outward normal: +e_R outside, -e_R on the hole
        let sgn = if c.component == 0 { 1.0 } else { -1.0 };
        for j in 0..nt {
            let v = |a: &[f64]| cells.map(|i| a[idx(i, j)]);
            let fv = v(f);
            let dn = (2.0 * fv[0] - 3.0 * fv[1] + fv[2]) / hr;
            let a = v(&vr);
            let an = sgn * (1.875 * a[0] - 1.25 * a[1] + 0.375 * a[2]);
            wall += (dn - an - pair.mu * gw[j]).powi(2);
            count += 1;
        }
    }
    Ok(NeumannCheck { interior: res.sqrt(), boundary: (wall / count.max(1) as f64).sqrt(), scale: scale.sqrt() })
}

/// Max deviation between the analytic `∂_{x_i}∂_{y_j}N` and nested
/// fourth-order differences of `N`.
pub fn kernel_fd_check(green: &NeumannGreen, x: C64, y: C64, step: f64) -> Result<f64> {
    let analytic = Kernel::new(green, x)?.dxdy(y);
    let e = [C64::new(1.0, 0.0), C64::i()];
    let st = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];
    let mut worst = 0.0f64;
    for i in 0..2 {
        let kerns: Vec<(f64, Kernel)> =
            st.iter().map(|&(o, c)| Ok((c, Kernel::new(green, x + o * step * e[i])?))).collect::<Result<_>>()?;
        for j in 0..2 {
            let mut s = 0.0;
            for (ci, k) in &kerns {
                for &(o, cj) in &st {
                    s += ci * cj * k.n(y + o * step * e[j]);
                }
            }
            let fd = s / (144.0 * step * step);
            worst = worst.max((fd - analytic[i][j]).abs());
        }
    }
    Ok(worst)
}

/// Least-squares slope of `log err` against `log h`.
pub fn refinement_slope(h: &[f64], err: &[f64]) -> f64 {
    loglog_slope(h, err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;

    fn annulus() -> CircularDomain {
        CircularDomain::annulus(0.5).unwrap()
    }

    #[test]
    fn cutoff_is_a_partition() {
        assert_eq!(cutoff(0.0), 1.0);
        assert_eq!(cutoff(1.0), 0.0);
        assert!((cutoff(0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_cell_closed_form_matches_polar_rule() {
        let cases = [
            (C64::new(0.3, 0.4), C64::new(0.0, 0.0), C64::new(1.0, 1.0)),
            (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.1, 0.05)),
            (C64::new(2.0, -1.0), C64::new(0.0, 0.0), C64::new(0.5, 0.25)),
            (C64::new(0.25, 0.0), C64::new(0.0, -0.1), C64::new(0.5, 0.1)),
        ];
        for (x, lo, hi) in cases {
            let a = log_cell_integral(x, lo, hi);
            let b = log_cell_polar(x, lo, hi);
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn log_cell_matches_tensor_gauss_away_from_cell() {
        let (x, lo, hi) = (C64::new(1.5, 1.2), C64::new(0.0, 0.0), C64::new(0.4, 0.3));
        let mut s = 0.0;
        for (a, wa) in gauss_on(20, lo.re, hi.re) {
            for (b, wb) in gauss_on(20, lo.im, hi.im) {
                s += wa * wb * (C64::new(a, b) - x).norm().ln();
            }
        }
        assert!((s - log_cell_integral(x, lo, hi)).abs() < 1e-12);
    }

    #[test]
    fn kernel_matches_nested_differences() {
        let g = NeumannGreen::new(&annulus(), 24).unwrap();
        for (x, y) in [(C64::new(0.7, 0.1), C64::new(-0.6, 0.3)), (C64::new(0.1, -0.8), C64::new(0.55, 0.4))] {
            let e = kernel_fd_check(&g, x, y, 2e-3).unwrap();
            assert!(e < 1e-5, "{e}");
        }
    }

    #[test]
    fn zero_velocity_gives_zero_integrals() {
        let d = annulus();
        let g = NeumannGreen::new(&d, 16).unwrap();
        let grid = build_grid(&d, 16).unwrap();
        let n = grid.len();
        let (rho, z) = (vec![1.0; n], vec![0.0; n]);
        let flow = GridField { grid: &grid, data: [&rho[..], &z[..], &z[..]] };
        let q = SingularQuadrature::new(&d, grid.clone());
        let x = C64::new(0.0, 0.75);
        assert_eq!(inv_laplace_div(&q, &g, &flow, x).unwrap(), 0.0);
        assert_eq!(inner_commutator(&q, &g, &flow, x).unwrap(), 0.0);
        assert_eq!(boundary_term_b(&q, &g, &flow, x).unwrap().value, 0.0);
    }

    #[test]
    fn patch_too_close_to_wall_is_refused() {
        let d = annulus();
        let q = SingularQuadrature::new(&d, build_grid(&d, 16).unwrap());
        assert!(matches!(q.patch(C64::new(0.0, 0.99)), Err(Error::QuadraturePatch { .. })));
    }

    #[test]
    fn remainder_without_friction_is_the_boundary_mean() {
        let d = annulus();
        let g = NeumannGreen::new(&d, 16).unwrap();
        let tr = BoundaryTraces::from_fn(&d, 64, |j, _| (if j == 0 { 2.0 } else { -1.0 }, 0.0));
        let expect = (2.0 * 2.0 * PI - 1.0 * PI) / g.l();
        for x in [C64::new(0.7, 0.0), C64::new(-0.2, 0.6)] {
            assert!((remainder_r(&g, &tr, 1.0, x).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_derivative_of_trig() {
        let m = 32;
        let v: Vec<f64> = crate::quad::angles(m).map(|t| (3.0 * t).sin()).collect();
        let d = spectral_derivative(&v);
        for (i, t) in crate::quad::angles(m).enumerate() {
            assert!((d[i] - 3.0 * (3.0 * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_points_cover_interior_and_bands() {
        let d = annulus();
        let pts = sample_points(&d);
        assert_eq!(pts.iter().filter(|p| p.1.is_none()).count(), 16);
        for j in 0..2 {
            let band: Vec<_> = pts.iter().filter(|p| p.1 == Some(j)).collect();
            assert_eq!(band.len(), 8);
            for p in band {
                assert!((d.dist_to(j, p.0) - d.gap() / 8.0).abs() < 1e-12);
            }
        }
    }
}
