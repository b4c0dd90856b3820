//! Div-curl systems with slip boundary conditions on circular domains.
//!
//! Vector fields are stored in conjugate form `U = u₁ - i u₂`, for which
//! `2 ∂_z̄ U = div u - i curl u`. A field is a sum of closed-form pieces:
//! derivatives of harmonic series (holomorphic, so divergence and curl free),
//! poles `(z - b)^{-m}` and mixed monomials `z̄^a z^b`. Div-curl problems are
//! solved by least squares over that span.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{build_grid, CircularDomain};
use crate::laplace::{DirichletSolver, DEFAULT_MODES};
use crate::quad::gauss_on;
use crate::series::{LeastSquares, SeriesHarmonic};
use crate::{Error, Result, C64};

/// Weight of constraint rows in the least-squares system.
pub const CONSTRAINT_WEIGHT: f64 = 1e6;

/// A vector field given in closed form.
#[derive(Clone, Debug, Default)]
pub struct VectorField {
    /// `U += c · F'` for a harmonic series `F`.
    series: Vec<(C64, SeriesHarmonic)>,
    /// `U += c · z̄^a z^b`, stored as `(a, b, c)`.
    mixed: Vec<(u32, u32, C64)>,
    /// `U += c · (z - centre)^{-m}`, stored as `(centre, m, c)`.
    poles: Vec<(C64, u32, C64)>,
    /// Whether `u·n = 0` holds by construction.
    pub slip: bool,
}

impl VectorField {
    pub fn zero() -> Self {
        Self { slip: true, ..Default::default() }
    }

    /// `∇⊥F = (-∂₂F, ∂₁F)` of a harmonic series.
    pub fn perp_gradient(f: &SeriesHarmonic) -> Self {
        Self { series: vec![(-C64::i(), f.clone())], ..Default::default() }
    }

    /// `∇F` of a harmonic series.
    pub fn gradient(f: &SeriesHarmonic) -> Self {
        Self { series: vec![(C64::new(1.0, 0.0), f.clone())], ..Default::default() }
    }

    /// Field whose conjugate form is the polynomial `Σ c z̄^a z^b`.
    pub fn from_conjugate_poly(p: &Poly2) -> Self {
        Self { mixed: p.terms().collect(), ..Default::default() }
    }

    pub fn scale(&mut self, a: f64) {
        self.series.iter_mut().for_each(|t| t.0 *= a);
        self.mixed.iter_mut().for_each(|t| t.2 *= a);
        self.poles.iter_mut().for_each(|t| t.2 *= a);
    }

    /// `self + a · other`.
    pub fn add_scaled(mut self, a: f64, other: &VectorField) -> Self {
        let mut o = other.clone();
        o.scale(a);
        self.series.extend(o.series);
        self.mixed.extend(o.mixed);
        self.poles.extend(o.poles);
        self.slip &= other.slip;
        self
    }

    /// `(U, ∂_z U, ∂_z̄ U)`.
    pub fn conjugate(&self, z: C64) -> (C64, C64, C64) {
        let zero = C64::new(0.0, 0.0);
        let (mut u, mut uz, mut uzb) = (zero, zero, zero);
        for (c, f) in &self.series {
            let (_, d1, d2) = f.eval(z);
            u += c * d1;
            uz += c * d2;
        }
        let zb = z.conj();
        for &(a, b, c) in &self.mixed {
            let (pa, pb) = (zb.powu(a), z.powu(b));
            u += c * pa * pb;
            if b > 0 {
                uz += c * b as f64 * pa * z.powu(b - 1);
            }
            if a > 0 {
                uzb += c * a as f64 * zb.powu(a - 1) * pb;
            }
        }
        for &(b, m, c) in &self.poles {
            let inv = 1.0 / (z - b);
            let p = inv.powu(m);
            u += c * p;
            uz -= c * m as f64 * p * inv;
        }
        (u, uz, uzb)
    }

    pub fn eval(&self, z: C64) -> [f64; 2] {
        let u = self.conjugate(z).0;
        [u.re, -u.im]
    }

    /// `g[i][j] = ∂_i u_j`.
    pub fn jacobian(&self, z: C64) -> [[f64; 2]; 2] {
        let (_, uz, uzb) = self.conjugate(z);
        let d1 = uz + uzb;
        let d2 = C64::i() * (uz - uzb);
        [[d1.re, -d1.im], [d2.re, -d2.im]]
    }

    /// `(div u, curl u)`.
    pub fn div_curl(&self, z: C64) -> (f64, f64) {
        let w = 2.0 * self.conjugate(z).2;
        (w.re, -w.im)
    }

    /// `(div u, curl u)` by second-order central differences with step `h`.
    pub fn div_curl_fd(&self, z: C64, h: f64) -> (f64, f64) {
        let d = |e: C64| {
            let (p, m) = (self.eval(z + h * e), self.eval(z - h * e));
            [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)]
        };
        let (dx, dy) = (d(C64::new(1.0, 0.0)), d(C64::i()));
        (dx[0] + dy[1], dx[1] - dy[0])
    }

    /// `u·n` with `n` the outward normal of the fluid region.
    pub fn normal_trace(&self, domain: &CircularDomain, j: usize, theta: f64) -> f64 {
        let c = domain.circle(j);
        (domain.normal(j, theta) * self.conjugate(c.point(theta)).0).re
    }

    /// `∮ u·dl` around boundary circle `j`, counter-clockwise.
    pub fn circulation(&self, domain: &CircularDomain, j: usize) -> f64 {
        const N: usize = 512;
        let c = domain.circle(j);
        let s: f64 = (0..N)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / N as f64;
                let tangent = C64::new(-t.sin(), t.cos());
                (tangent * self.conjugate(c.point(t)).0).re
            })
            .sum();
        s * c.perimeter() / N as f64
    }
}

/// Polynomial `Σ c z̄^a z^b` keyed by `(a, b)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly2(BTreeMap<(u32, u32), C64>);

impl Poly2 {
    pub fn constant(c: f64) -> Self {
        let mut p = Self::default();
        p.add(0, 0, C64::new(c, 0.0));
        p
    }

    pub fn add(&mut self, a: u32, b: u32, c: C64) {
        *self.0.entry((a, b)).or_insert(C64::new(0.0, 0.0)) += c;
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, u32, C64)> + '_ {
        self.0.iter().map(|(&(a, b), &c)| (a, b, c))
    }

    pub fn mul(&self, o: &Poly2) -> Poly2 {
        let mut r = Poly2::default();
        for (a, b, c) in self.terms() {
            for (a2, b2, c2) in o.terms() {
                r.add(a + a2, b + b2, c * c2);
            }
        }
        r
    }

    pub fn scaled(&self, s: C64) -> Poly2 {
        Poly2(self.0.iter().map(|(&k, &c)| (k, c * s)).collect())
    }

    pub fn plus(&self, o: &Poly2) -> Poly2 {
        let mut r = self.clone();
        for (a, b, c) in o.terms() {
            r.add(a, b, c);
        }
        r
    }

    /// `∂_z`.
    pub fn dz(&self) -> Poly2 {
        let mut r = Poly2::default();
        for (a, b, c) in self.terms().filter(|t| t.1 > 0) {
            r.add(a, b - 1, c * b as f64);
        }
        r
    }

    pub fn eval(&self, z: C64) -> C64 {
        self.terms().map(|(a, b, c)| c * z.conj().powu(a) * z.powu(b)).sum()
    }

    /// `(|z - c|² - r²)²` for every boundary circle.
    pub fn wall_weight(domain: &CircularDomain) -> Poly2 {
        domain.circles().fold(Poly2::constant(1.0), |acc, c| {
            let b = c.center;
            let mut f = Poly2::default();
            f.add(1, 1, C64::new(1.0, 0.0));
            f.add(0, 1, -b.conj());
            f.add(1, 0, -b);
            f.add(0, 0, C64::new(b.norm_sqr() - c.radius * c.radius, 0.0));
            acc.mul(&f).mul(&f)
        })
    }
}

/// `∇⊥ω_l` for `l = 1..k-1`, from the harmonic measures of the holes.
pub fn cr_nullspace(domain: &CircularDomain) -> Result<Vec<VectorField>> {
    if domain.k() < 2 {
        return Ok(Vec::new());
    }
    let solver = DirichletSolver::new(domain, DEFAULT_MODES)?;
    (1..domain.k())
        .map(|l| {
            let mut f = VectorField::perp_gradient(&solver.harmonic_measure(l)?);
            f.slip = true;
            Ok(f)
        })
        .collect()
}

/// Midpoint quadrature over the fluid region, on the simulator's grid.
#[derive(Clone, Debug)]
pub struct AreaQuadrature {
    pub nodes: Vec<C64>,
    pub weights: Vec<f64>,
}

impl AreaQuadrature {
    pub fn new(domain: &CircularDomain, n: usize) -> Result<Self> {
        let g = build_grid(domain, n)?;
        let (nodes, weights) = (0..g.len()).filter(|&k| g.weight(k) > 0.0).map(|k| (g.node(k), g.weight(k))).unzip();
        Ok(Self { nodes, weights })
    }

    pub fn integrate(&self, f: impl Fn(C64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }

    /// `(∫|f|^p)^{1/p}`.
    pub fn lp(&self, p: f64, f: impl Fn(C64) -> f64) -> f64 {
        self.integrate(|z| f(z).abs().powf(p)).powf(1.0 / p)
    }
}

/// Discrete `L²` Gram matrix of a family of fields.
pub fn gram_matrix(fields: &[VectorField], quad: &AreaQuadrature) -> DMatrix<f64> {
    let vals: Vec<Vec<[f64; 2]>> = fields.iter().map(|f| quad.nodes.iter().map(|&z| f.eval(z)).collect()).collect();
    DMatrix::from_fn(fields.len(), fields.len(), |i, j| {
        quad.weights
            .iter()
            .enumerate()
            .map(|(q, w)| w * (vals[i][q][0] * vals[j][q][0] + vals[i][q][1] * vals[j][q][1]))
            .sum()
    })
}

/// Ratio of extreme eigenvalues of a symmetric positive matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let e = m.clone().symmetric_eigen().eigenvalues;
    e.max() / e.min()
}

/// A boundary arc `{angle ∈ [t0, t1]}` of circle `component`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundaryArc {
    pub component: usize,
    pub t0: f64,
    pub t1: f64,
}

/// Side conditions that pin down the null-space component.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraints {
    /// No side conditions; the solution is fixed only modulo the null space.
    None,
    /// `u(ξ_j) = v_j`.
    Points(Vec<(C64, [f64; 2])>),
    /// `∫_{I_j} u·n⊥ dS = c_j` over disjoint arcs.
    Arcs(Vec<(BoundaryArc, f64)>),
}

impl Constraints {
    fn len(&self) -> usize {
        match self {
            Constraints::None => 0,
            Constraints::Points(p) => p.len(),
            Constraints::Arcs(a) => a.len(),
        }
    }
}

/// Number of side conditions needed for uniqueness on a `k`-connected domain.
pub fn required_constraints(k: usize) -> usize {
    (2 * k).saturating_sub(3)
}

/// Truncation orders of the least-squares div-curl solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DivCurlOptions {
    /// Holomorphic modes per circle.
    pub modes: u32,
    /// Total degree of the mixed monomials `z̄^a z^b`, `a ≥ 1`.
    pub degree: u32,
    /// Interior collocation lattice: points per unit length.
    pub density: usize,
}

impl Default for DivCurlOptions {
    fn default() -> Self {
        Self { modes: 16, degree: 16, density: 24 }
    }
}

#[derive(Clone, Debug)]
pub struct DivCurlSolution {
    pub field: VectorField,
    /// Largest `|div u - f|` at points between the collocation nodes.
    pub div_residual: f64,
    pub curl_residual: f64,
    /// Largest `|u·n|` between boundary nodes.
    pub normal_residual: f64,
    pub constraint_residual: f64,
    /// Set when no side conditions were given: the field is the
    /// representative with zero circulation around every hole.
    pub modulo_nullspace: bool,
}

#[derive(Clone, Copy, Debug)]
enum Column {
    Mixed(u32, u32, C64),
    Pole(C64, u32, C64),
}

impl Column {
    fn eval(&self, z: C64) -> (C64, C64) {
        match *self {
            Column::Mixed(a, b, c) => {
                let zb = z.conj();
                let dzb = if a > 0 { c * a as f64 * zb.powu(a - 1) * z.powu(b) } else { C64::new(0.0, 0.0) };
                (c * zb.powu(a) * z.powu(b), dzb)
            }
            Column::Pole(b, m, c) => (c * (z - b).powu(m).inv(), C64::new(0.0, 0.0)),
        }
    }
}

fn columns(domain: &CircularDomain, opts: &DivCurlOptions) -> Vec<Column> {
    let units = [C64::new(1.0, 0.0), C64::i()];
    let mut cols = Vec::new();
    for c in units {
        for m in 0..=opts.modes {
            cols.push(Column::Mixed(0, m, c));
        }
        for h in domain.holes() {
            for m in 1..=opts.modes {
                // scaled so the column is O(1) on the hole
                cols.push(Column::Pole(h.center, m, c * h.radius.powi(m as i32)));
            }
        }
        for a in 1..=opts.degree {
            for b in 0..=opts.degree - a {
                cols.push(Column::Mixed(a, b, c));
            }
        }
    }
    cols
}

fn lattice(domain: &CircularDomain, density: usize, offset: f64) -> Vec<C64> {
    let n = 2 * density;
    let h = 2.0 / n as f64;
    (0..n * n)
        .map(|k| C64::new(-1.0 + (k % n) as f64 * h + offset * h, -1.0 + (k / n) as f64 * h + offset * h))
        .filter(|&z| domain.contains(z))
        .collect()
}

/// Solves `div u = f`, `curl u = g`, `u·n = 0` with the given side conditions.
pub fn solve_divcurl(
    domain: &CircularDomain,
    f: &(dyn Fn(C64) -> f64 + Sync),
    g: &(dyn Fn(C64) -> f64 + Sync),
    constraints: &Constraints,
    opts: &DivCurlOptions,
) -> Result<DivCurlSolution> {
    let k = domain.k();
    let need = required_constraints(k);
    let free = matches!(constraints, Constraints::None);
    if !free && constraints.len() != need {
        return Err(Error::ConstraintCount { expected: need, got: constraints.len() });
    }
    if free && k == 1 {
        // the disc has no null space; nothing to pin down
    }
    let cols = columns(domain, opts);
    let interior = lattice(domain, opts.density, 0.5);
    let h_int = 1.0 / opts.density as f64;
    let per = 8 * opts.modes as usize;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut push = |row: Vec<f64>, b: f64, w: f64| {
        rows.push(row.into_iter().map(|x| x * w).collect());
        rhs.push(b * w);
    };
    for &z in &interior {
        let d: Vec<C64> = cols.iter().map(|c| 2.0 * c.eval(z).1).collect();
        push(d.iter().map(|x| x.re).collect(), f(z), h_int);
        push(d.iter().map(|x| -x.im).collect(), g(z), h_int);
    }
    for j in 0..k {
        let c = domain.circle(j);
        let w = (c.perimeter() / per as f64).sqrt();
        for i in 0..per {
            let t = 2.0 * PI * i as f64 / per as f64;
            let (z, n) = (c.point(t), domain.normal(j, t));
            push(cols.iter().map(|col| (n * col.eval(z).0).re).collect(), 0.0, w);
        }
    }
    let arc_row = |arc: &BoundaryArc| -> Vec<f64> {
        let c = domain.circle(arc.component);
        let mut row = vec![0.0; cols.len()];
        for (t, wq) in gauss_on(32, arc.t0, arc.t1) {
            let (z, n) = (c.point(t), domain.normal(arc.component, t));
            for (r, col) in row.iter_mut().zip(&cols) {
                *r += wq * c.radius * (n * col.eval(z).0).im;
            }
        }
        row
    };
    match constraints {
        Constraints::Points(pts) => {
            for &(z, v) in pts {
                let u: Vec<C64> = cols.iter().map(|c| c.eval(z).0).collect();
                push(u.iter().map(|x| x.re).collect(), v[0], CONSTRAINT_WEIGHT);
                push(u.iter().map(|x| -x.im).collect(), v[1], CONSTRAINT_WEIGHT);
            }
        }
        Constraints::Arcs(arcs) => {
            for (arc, v) in arcs {
                if arc.component >= k || !(arc.t1 > arc.t0) {
                    return Err(Error::InvalidParameter(format!("bad boundary arc {arc:?}")));
                }
                push(arc_row(arc), *v, CONSTRAINT_WEIGHT);
            }
        }
        Constraints::None => {
            for j in 1..k {
                let full = BoundaryArc { component: j, t0: 0.0, t1: 2.0 * PI };
                push(arc_row(&full), 0.0, CONSTRAINT_WEIGHT);
            }
        }
    }
    let a = DMatrix::from_fn(rows.len(), cols.len(), |i, j| rows[i][j]);
    let coef = LeastSquares::new(a)?.solve(&rhs);
    let mut field = VectorField::zero();
    for (c, x) in cols.iter().zip(coef) {
        match *c {
            Column::Mixed(a, b, u) => field.mixed.push((a, b, u * x)),
            Column::Pole(b, m, u) => field.poles.push((b, m, u * x)),
        }
    }
    field.slip = false;
    let (mut div_residual, mut curl_residual) = (0.0f64, 0.0f64);
    for z in lattice(domain, opts.density, 0.0) {
        let (d, c) = field.div_curl(z);
        div_residual = div_residual.max((d - f(z)).abs());
        curl_residual = curl_residual.max((c - g(z)).abs());
    }
    let mut normal_residual = 0.0f64;
    for j in 0..k {
        for i in 0..per {
            let t = 2.0 * PI * (i as f64 + 0.5) / per as f64;
            normal_residual = normal_residual.max(field.normal_trace(domain, j, t).abs());
        }
    }
    let constraint_residual = match constraints {
        Constraints::Points(pts) => pts
            .iter()
            .map(|&(z, v)| {
                let u = field.eval(z);
                (u[0] - v[0]).hypot(u[1] - v[1])
            })
            .fold(0.0, f64::max),
        Constraints::Arcs(arcs) => {
            arcs.iter().map(|(arc, v)| (arc_integral(&field, domain, arc) - v).abs()).fold(0.0, f64::max)
        }
        Constraints::None => (1..k).map(|j| field.circulation(domain, j).abs()).fold(0.0, f64::max),
    };
    Ok(DivCurlSolution {
        field,
        div_residual,
        curl_residual,
        normal_residual,
        constraint_residual,
        modulo_nullspace: free,
    })
}

/// `∫_I u·n⊥ dS`.
pub fn arc_integral(u: &VectorField, domain: &CircularDomain, arc: &BoundaryArc) -> f64 {
    let c = domain.circle(arc.component);
    gauss_on(32, arc.t0, arc.t1)
        .into_iter()
        .map(|(t, w)| w * c.radius * (domain.normal(arc.component, t) * u.conjugate(c.point(t)).0).im)
        .sum()
}

/// `2k - 3` well-separated interior points, deterministic for a domain.
pub fn anchor_points(domain: &CircularDomain) -> Vec<C64> {
    let need = required_constraints(domain.k());
    let mut out: Vec<C64> = Vec::new();
    let margin = 0.25 * domain.gap().min(0.2);
    'radii: for &r in &[0.8, 0.6, 0.9, 0.4, 0.95, 0.2] {
        for i in 0..need.max(1) * 4 {
            let z = C64::from_polar(r, 0.7 + 2.0 * PI * i as f64 / (need.max(1) * 4) as f64);
            if out.len() == need {
                break 'radii;
            }
            if domain.nearest_component(z).0 > margin && out.iter().all(|p| (p - z).norm() > margin) {
                out.push(z);
            }
        }
    }
    out
}

/// A random slip field `∇⊥ψ + ∇χ + Σ c_l ∇⊥ω_l` with `ψ, χ` vanishing to
/// second order on every circle, so `u·n = 0` exactly.
pub fn random_slip_field(domain: &CircularDomain, nullspace: &[VectorField], rng: &mut ChaCha8Rng) -> VectorField {
    const DEG: u32 = 3;
    let w = Poly2::wall_weight(domain);
    let mut real_poly = || {
        let mut p = Poly2::default();
        for a in 0..=DEG {
            for b in 0..=DEG - a {
                let c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                p.add(a, b, 0.5 * c);
                p.add(b, a, 0.5 * c.conj());
            }
        }
        w.mul(&p)
    };
    let (psi, chi) = (real_poly(), real_poly());
    // U = 2 ∂_z (χ - iψ)
    let conj = chi.plus(&psi.scaled(-C64::i())).dz().scaled(C64::new(2.0, 0.0));
    let mut u = VectorField::from_conjugate_poly(&conj);
    let scale = conj.terms().map(|t| t.2.norm()).fold(0.0, f64::max);
    for n in nullspace {
        u = u.add_scaled(scale * rng.gen_range(-1.0..1.0), n);
    }
    u.slip = true;
    u
}

/// Which term anchors the right-hand side of the estimate.
#[derive(Clone, Debug)]
pub enum Anchor {
    /// `Σ |u(ξ_j)|` over `2k - 3` points.
    Points(Vec<C64>),
    /// `(∮ K|u|² dS)^{1/2}`.
    Friction(Vec<f64>),
    /// `‖ρ^{1/2} u‖_{L²}`.
    Density(fn(C64) -> f64),
}

/// Pieces of `‖∇u‖_p / (‖div u‖_p + ‖curl u‖_p + anchor)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RatioParts {
    pub grad: f64,
    pub div: f64,
    pub curl: f64,
    pub anchor: f64,
}

impl RatioParts {
    /// The ratio, with `0/0 = 0` and `x/0 = ∞`.
    pub fn ratio(&self, with_anchor: bool) -> f64 {
        let den = self.div + self.curl + if with_anchor { self.anchor } else { 0.0 };
        if self.grad == 0.0 {
            0.0
        } else if den == 0.0 {
            f64::INFINITY
        } else {
            self.grad / den
        }
    }
}

pub fn ratio_parts(
    u: &VectorField,
    domain: &CircularDomain,
    quad: &AreaQuadrature,
    p: f64,
    anchor: &Anchor,
) -> RatioParts {
    let mut acc = [0.0; 3];
    for (&z, &w) in quad.nodes.iter().zip(&quad.weights) {
        let g = u.jacobian(z);
        let (d, c) = u.div_curl(z);
        let gn = (g[0][0].powi(2) + g[0][1].powi(2) + g[1][0].powi(2) + g[1][1].powi(2)).sqrt();
        acc[0] += w * gn.powf(p);
        acc[1] += w * d.abs().powf(p);
        acc[2] += w * c.abs().powf(p);
    }
    let anchor = match anchor {
        Anchor::Points(pts) => pts
            .iter()
            .map(|&z| {
                let v = u.eval(z);
                v[0].hypot(v[1])
            })
            .sum(),
        Anchor::Friction(k) => {
            const N: usize = 256;
            let mut s = 0.0;
            for (j, c) in domain.circles().enumerate() {
                for i in 0..N {
                    let t = 2.0 * PI * i as f64 / N as f64;
                    let v = u.eval(c.point(t));
                    s += k[j] * (v[0] * v[0] + v[1] * v[1]) * c.perimeter() / N as f64;
                }
            }
            s.sqrt()
        }
        Anchor::Density(rho) => quad
            .integrate(|z| {
                let v = u.eval(z);
                rho(z) * (v[0] * v[0] + v[1] * v[1])
            })
            .sqrt(),
    };
    RatioParts { grad: acc[0].powf(1.0 / p), div: acc[1].powf(1.0 / p), curl: acc[2].powf(1.0 / p), anchor }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleReport {
    pub p: f64,
    pub ratios: Vec<f64>,
    pub max: f64,
    pub second_half_max: f64,
    /// `second_half_max ≥ 0.9 · max`.
    pub stable: bool,
    /// `(ε, ratio without anchor)` for `u = ∇⊥ω₁ + ε·noise`.
    pub witness: Vec<(f64, f64)>,
}

impl EnsembleReport {
    /// Ratio at the smallest perturbation, infinite when there is no hole.
    pub fn witness_ratio(&self) -> f64 {
        self.witness.last().map_or(f64::INFINITY, |w| w.1)
    }
}

/// Grid resolution used for ensemble quadrature.
pub const ENSEMBLE_GRID: usize = 64;

/// Empirical constants of the div-curl estimate over `n` random slip fields.
pub fn inequality_ensemble(
    domain: &CircularDomain,
    p: f64,
    n: usize,
    seed: u64,
    anchor: &Anchor,
) -> Result<EnsembleReport> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("exponent p = {p} must be at least 1")));
    }
    if let Anchor::Points(pts) = anchor {
        if pts.len() != required_constraints(domain.k()) {
            return Err(Error::ConstraintCount { expected: required_constraints(domain.k()), got: pts.len() });
        }
    }
    let quad = AreaQuadrature::new(domain, ENSEMBLE_GRID)?;
    let null = cr_nullspace(domain)?;
    let ratios: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let u = random_slip_field(domain, &null, &mut rng);
            ratio_parts(&u, domain, &quad, p, anchor).ratio(true)
        })
        .collect();
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let second_half_max = ratios[n / 2..].iter().copied().fold(0.0, f64::max);
    let mut witness = Vec::new();
    if let Some(w1) = null.first() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let noise = random_slip_field(domain, &[], &mut rng);
        let base = ratio_parts(w1, domain, &quad, p, anchor).grad;
        let nn = ratio_parts(&noise, domain, &quad, p, anchor).grad;
        for e in 1..=6 {
            let eps = 10f64.powi(-e);
            let u = w1.clone().add_scaled(eps * base / nn, &noise);
            witness.push((eps, ratio_parts(&u, domain, &quad, p, anchor).ratio(false)));
        }
    }
    Ok(EnsembleReport { p, ratios, max, second_half_max, stable: second_half_max >= 0.9 * max, witness })
}

/// Both sides of the weighted estimate
/// `∫|u|^ν|∇u|² ≤ C(∫|u|^ν((div u)² + (curl u)²) + ∫ρ|u|^{2+ν})`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct WeightedReport {
    pub nu: f64,
    pub lhs: f64,
    pub div_curl_term: f64,
    pub density_term: f64,
    pub ratio: f64,
}

pub fn weighted_divcurl_check(
    domain: &CircularDomain,
    u: &VectorField,
    nu: f64,
    rho: &dyn Fn(C64) -> f64,
    n: usize,
) -> Result<WeightedReport> {
    if !(nu > 0.0 && nu <= 0.2) {
        return Err(Error::InvalidParameter(format!("weight exponent {nu} outside (0, 0.2]")));
    }
    let quad = AreaQuadrature::new(domain, n)?;
    let (mut lhs, mut dc, mut dens) = (0.0, 0.0, 0.0);
    for (&z, &w) in quad.nodes.iter().zip(&quad.weights) {
        let v = u.eval(z);
        let m = v[0].hypot(v[1]);
        let g = u.jacobian(z);
        let (d, c) = u.div_curl(z);
        let wn = m.powf(nu);
        lhs += w * wn * (g[0][0].powi(2) + g[0][1].powi(2) + g[1][0].powi(2) + g[1][1].powi(2));
        dc += w * wn * (d * d + c * c);
        dens += w * rho(z) * m.powf(2.0 + nu);
    }
    let den = dc + dens;
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / den };
    Ok(WeightedReport { nu, lhs, div_curl_term: dc, density_term: dens, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Circle;
    use approx::assert_abs_diff_eq;

    fn annulus() -> CircularDomain {
        CircularDomain::annulus(0.5).unwrap()
    }

    #[test]
    fn annulus_nullspace_is_rotation() {
        let d = annulus();
        let n = cr_nullspace(&d).unwrap();
        assert_eq!(n.len(), 1);
        for z in [C64::new(0.7, 0.1), C64::new(-0.3, 0.6)] {
            let v = n[0].eval(z);
            let r = z.norm();
            assert_abs_diff_eq!(v[0].hypot(v[1]), 1.0 / (r * 0.5f64.ln().abs()), epsilon = 1e-9);
            assert_abs_diff_eq!(v[0] * z.re + v[1] * z.im, 0.0, epsilon = 1e-9);
        }
        assert!(cr_nullspace(&CircularDomain::disc()).unwrap().is_empty());
    }

    #[test]
    fn conjugate_form_gives_div_and_curl() {
        // u = (x + 2y, 3x - y): div 0, curl 1
        let mut p = Poly2::default();
        // U = u1 - i u2 = (x + 2y) - i(3x - y)
        let x = |c: C64| {
            let mut q = Poly2::default();
            q.add(0, 1, 0.5 * c);
            q.add(1, 0, 0.5 * c);
            q
        };
        let y = |c: C64| {
            let mut q = Poly2::default();
            q.add(0, 1, -0.5 * C64::i() * c);
            q.add(1, 0, 0.5 * C64::i() * c);
            q
        };
        p = p.plus(&x(C64::new(1.0, -3.0))).plus(&y(C64::new(2.0, 1.0)));
        let u = VectorField::from_conjugate_poly(&p);
        let z = C64::new(0.3, -0.2);
        let v = u.eval(z);
        assert_abs_diff_eq!(v[0], 0.3 - 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.9 + 0.2, epsilon = 1e-15);
        let (d, c) = u.div_curl(z);
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-15);
        let g = u.jacobian(z);
        assert_abs_diff_eq!(g[1][0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn random_fields_are_tangent() {
        let d = CircularDomain::new(vec![Circle::new(-0.4, 0.0, 0.2), Circle::new(0.4, 0.1, 0.25)]).unwrap();
        let null = cr_nullspace(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_slip_field(&d, &null, &mut rng);
        for j in 0..3 {
            for i in 0..16 {
                let c = d.circle(j).point(i as f64 * 0.4);
                let v = u.eval(c);
                assert!(
                    u.normal_trace(&d, j, i as f64 * 0.4).abs() < 1e-8 * v[0].hypot(v[1]).max(1.0),
                    "{} {:?}",
                    u.normal_trace(&d, j, i as f64 * 0.4),
                    v
                );
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let d = annulus();
        let c = Constraints::Points(vec![(C64::new(0.7, 0.0), [0.0, 0.0])]);
        let s = solve_divcurl(&d, &|_| 0.0, &|_| 0.0, &c, &DivCurlOptions::default()).unwrap();
        for z in [C64::new(0.6, 0.3), C64::new(-0.8, 0.1)] {
            let v = s.field.eval(z);
            assert!(v[0].hypot(v[1]) < 1e-10);
        }
    }

    #[test]
    fn point_constraint_recovers_nullspace_field() {
        let d = annulus();
        let w = &cr_nullspace(&d).unwrap()[0];
        let xi = C64::new(0.1, 0.7);
        let c = Constraints::Points(vec![(xi, w.eval(xi))]);
        let s = solve_divcurl(&d, &|_| 0.0, &|_| 0.0, &c, &DivCurlOptions::default()).unwrap();
        for z in [C64::new(0.6, 0.3), C64::new(-0.8, 0.1), C64::new(0.0, -0.55)] {
            let (a, b) = (s.field.eval(z), w.eval(z));
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 1e-8, "{a:?} {b:?}");
        }
    }

    #[test]
    fn wrong_constraint_count_rejected() {
        let d = annulus();
        let c = Constraints::Points(vec![(C64::new(0.7, 0.0), [0.0; 2]), (C64::new(-0.7, 0.0), [0.0; 2])]);
        let r = solve_divcurl(&d, &|_| 0.0, &|_| 0.0, &c, &DivCurlOptions::default());
        assert!(matches!(r, Err(Error::ConstraintCount { expected: 1, got: 2 })));
    }

    #[test]
    fn weighted_check_rejects_large_exponent() {
        let u = VectorField::zero();
        assert!(weighted_divcurl_check(&annulus(), &u, 0.5, &|_| 1.0, 32).is_err());
        let r = weighted_divcurl_check(&annulus(), &u, 0.1, &|_| 1.0, 32).unwrap();
        assert_eq!((r.lhs, r.ratio), (0.0, 0.0));
    }

    #[test]
    fn zero_field_ratio_is_zero() {
        let d = annulus();
        let q = AreaQuadrature::new(&d, 16).unwrap();
        let r = ratio_parts(&VectorField::zero(), &d, &q, 4.0, &Anchor::Points(anchor_points(&d)));
        assert_eq!(r.ratio(true), 0.0);
    }
}
