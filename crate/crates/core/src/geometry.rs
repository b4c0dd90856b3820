//! Domains bounded by circles or smooth closed curves, boundary frames,
//! nearest-point projections and computational grids.
//!
//! A [`CircularDomain`] is the unit disc with disjoint closed discs removed.
//! Boundary component 0 is the unit circle; component `j >= 1` is hole `j`.
//! The outer normal `n` points out of the fluid region, so on a hole it points
//! toward the hole centre. The rotated normal is `n⊥ = (n2, -n1)`, which as a
//! complex number is `-i n`.

use std::f64::consts::PI;
use std::path::Path;

use serde::Deserialize;

use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circle {
    pub center: C64,
    pub radius: f64,
}

impl Circle {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Self {
        Self { center: C64::new(cx, cy), radius }
    }

    pub fn point(&self, theta: f64) -> C64 {
        self.center + C64::from_polar(self.radius, theta)
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * PI * self.radius
    }
}

/// Local frame at a boundary point.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryFrame {
    pub point: C64,
    pub normal: C64,
    pub normal_perp: C64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircularDomain {
    holes: Vec<Circle>,
}

impl CircularDomain {
    pub fn new(holes: Vec<Circle>) -> Result<Self> {
        for (j, h) in holes.iter().enumerate() {
            if !(h.radius.is_finite() && h.radius > 0.0) {
                return Err(Error::InvalidDomain(format!("hole {} has radius {}", j + 1, h.radius)));
            }
            if h.center.norm() + h.radius >= 1.0 {
                return Err(Error::InvalidDomain(format!("hole {} touches the unit circle", j + 1)));
            }
            for (l, g) in holes.iter().enumerate().skip(j + 1) {
                if (h.center - g.center).norm() <= h.radius + g.radius {
                    return Err(Error::InvalidDomain(format!("holes {} and {} overlap", j + 1, l + 1)));
                }
            }
        }
        Ok(Self { holes })
    }

    pub fn disc() -> Self {
        Self { holes: Vec::new() }
    }

    pub fn annulus(r: f64) -> Result<Self> {
        Self::new(vec![Circle::new(0.0, 0.0, r)])
    }

    /// Number of boundary components.
    pub fn k(&self) -> usize {
        self.holes.len() + 1
    }

    pub fn holes(&self) -> &[Circle] {
        &self.holes
    }

    /// Boundary circle `j` (0 is the unit circle).
    pub fn circle(&self, j: usize) -> Circle {
        if j == 0 {
            Circle::new(0.0, 0.0, 1.0)
        } else {
            self.holes[j - 1]
        }
    }

    pub fn circles(&self) -> impl Iterator<Item = Circle> + '_ {
        (0..self.k()).map(move |j| self.circle(j))
    }

    /// Total boundary length `2π(1 + Σ r_j)`.
    pub fn boundary_length(&self) -> f64 {
        2.0 * PI * (1.0 + self.holes.iter().map(|h| h.radius).sum::<f64>())
    }

    pub fn area(&self) -> f64 {
        PI * (1.0 - self.holes.iter().map(|h| h.radius * h.radius).sum::<f64>())
    }

    /// Minimum distance between distinct boundary components.
    pub fn gap(&self) -> f64 {
        let mut d = f64::INFINITY;
        for (j, h) in self.holes.iter().enumerate() {
            d = d.min(1.0 - h.center.norm() - h.radius);
            for g in &self.holes[j + 1..] {
                d = d.min((h.center - g.center).norm() - h.radius - g.radius);
            }
        }
        d
    }

    /// Radius of the hole if this is an annulus centred at the origin.
    pub fn concentric_radius(&self) -> Option<f64> {
        match self.holes.as_slice() {
            [h] if h.center.norm() < 1e-12 => Some(h.radius),
            _ => None,
        }
    }

    pub fn contains(&self, z: C64) -> bool {
        z.norm() < 1.0 && self.holes.iter().all(|h| (z - h.center).norm() > h.radius)
    }

    /// Signed distance to component `j`, positive inside the fluid region.
    pub fn dist_to(&self, j: usize, z: C64) -> f64 {
        let c = self.circle(j);
        let d = (z - c.center).norm() - c.radius;
        if j == 0 {
            -d
        } else {
            d
        }
    }

    /// Distance to the boundary and the nearest component.
    pub fn nearest_component(&self, z: C64) -> (f64, usize) {
        (0..self.k()).map(|j| (self.dist_to(j, z), j)).fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
    }

    /// Outer normal at angle `theta` on component `j`.
    pub fn normal(&self, j: usize, theta: f64) -> C64 {
        let e = C64::from_polar(1.0, theta);
        if j == 0 {
            e
        } else {
            -e
        }
    }

    pub fn boundary_frame(&self, j: usize, theta: f64) -> BoundaryFrame {
        let normal = self.normal(j, theta);
        BoundaryFrame { point: self.circle(j).point(theta), normal, normal_perp: -C64::i() * normal }
    }

    /// Nearest point of component `j` to `z`.
    pub fn project(&self, j: usize, z: C64) -> Result<C64> {
        let c = self.circle(j);
        let d = z - c.center;
        if d.norm() < 1e-300 {
            return Err(Error::InvalidParameter("projection from the circle centre is not unique".into()));
        }
        Ok(c.center + d * (c.radius / d.norm()))
    }

    /// Angle of `z` as seen from the centre of component `j`.
    pub fn angle_on(&self, j: usize, z: C64) -> f64 {
        (z - self.circle(j).center).arg()
    }
}

/// Closed curve given by a trigonometric interpolant of its samples.
#[derive(Clone, Debug)]
pub struct SmoothCurve {
    coeffs: Vec<(i64, C64)>,
    polygon: Vec<C64>,
}

impl SmoothCurve {
    pub const MIN_SAMPLES: usize = 64;
    const POLYGON: usize = 1024;

    /// Builds the interpolant, reorienting the samples counter-clockwise.
    pub fn from_samples(samples: &[C64]) -> Result<Self> {
        let n = samples.len();
        if n < Self::MIN_SAMPLES {
            return Err(Error::InvalidDomain(format!(
                "curve has {n} samples, at least {} required",
                Self::MIN_SAMPLES
            )));
        }
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidDomain("non-finite curve sample".into()));
        }
        let area: f64 = (0..n)
            .map(|i| {
                let (a, b) = (samples[i], samples[(i + 1) % n]);
                a.re * b.im - a.im * b.re
            })
            .sum();
        if area.abs() < 1e-14 {
            return Err(Error::InvalidDomain("degenerate curve".into()));
        }
        let pts: Vec<C64> = if area > 0.0 { samples.to_vec() } else { samples.iter().rev().copied().collect() };
        let half = (n / 2) as i64;
        let coeffs = (-half..=half)
            .map(|k| {
                let mut c = C64::new(0.0, 0.0);
                for (i, z) in pts.iter().enumerate() {
                    c += z * C64::from_polar(1.0, -(k as f64) * 2.0 * PI * i as f64 / n as f64);
                }
                c /= n as f64;
                if n.is_multiple_of(2) && k.abs() == half {
                    // split the Nyquist mode symmetrically
                    c *= 0.5;
                }
                (k, c)
            })
            .collect::<Vec<_>>();
        let scale = coeffs.iter().map(|c| c.1.norm()).fold(0.0, f64::max);
        let coeffs: Vec<_> = coeffs.into_iter().filter(|c| c.1.norm() > 1e-15 * scale).collect();
        let mut curve = Self { coeffs, polygon: Vec::new() };
        curve.polygon = curve.samples(Self::POLYGON);
        Ok(curve)
    }

    pub fn circle(c: Circle, n: usize) -> Result<Self> {
        let pts: Vec<C64> = (0..n).map(|i| c.point(2.0 * PI * i as f64 / n as f64)).collect();
        Self::from_samples(&pts)
    }

    /// `(z, z', z'')` at parameter `t ∈ [0, 2π)`.
    pub fn eval(&self, t: f64) -> (C64, C64, C64) {
        let mut z = C64::new(0.0, 0.0);
        let mut dz = z;
        let mut ddz = z;
        for &(k, c) in &self.coeffs {
            let e = c * C64::from_polar(1.0, k as f64 * t);
            let ik = C64::new(0.0, k as f64);
            z += e;
            dz += ik * e;
            ddz += ik * ik * e;
        }
        (z, dz, ddz)
    }

    pub fn point(&self, t: f64) -> C64 {
        self.eval(t).0
    }

    pub fn samples(&self, n: usize) -> Vec<C64> {
        (0..n).map(|i| self.point(2.0 * PI * i as f64 / n as f64)).collect()
    }

    /// Winding number of the sampled polygon around `z`.
    pub fn winding(&self, z: C64) -> i64 {
        let pts = &self.polygon;
        let n = pts.len();
        let total: f64 = (0..n).map(|i| ((pts[(i + 1) % n] - z) / (pts[i] - z)).arg()).sum();
        (total / (2.0 * PI)).round() as i64
    }
}

/// Domain bounded by smooth closed curves; component 0 is the outer curve.
#[derive(Clone, Debug)]
pub struct SmoothDomain {
    pub outer: SmoothCurve,
    pub holes: Vec<SmoothCurve>,
}

impl SmoothDomain {
    pub fn new(outer: SmoothCurve, holes: Vec<SmoothCurve>) -> Result<Self> {
        let dom = Self { outer, holes };
        for (j, h) in dom.holes.iter().enumerate() {
            let p = h.samples(256);
            if p.iter().any(|&z| dom.outer.winding(z) != 1) {
                return Err(Error::InvalidDomain(format!("hole {} leaves the outer curve", j + 1)));
            }
            for (l, g) in dom.holes.iter().enumerate() {
                if l != j && p.iter().any(|&z| g.winding(z) != 0) {
                    return Err(Error::InvalidDomain(format!("holes {} and {} intersect", j + 1, l + 1)));
                }
            }
        }
        Ok(dom)
    }

    pub fn k(&self) -> usize {
        self.holes.len() + 1
    }

    pub fn curve(&self, j: usize) -> &SmoothCurve {
        if j == 0 {
            &self.outer
        } else {
            &self.holes[j - 1]
        }
    }

    pub fn from_circular(d: &CircularDomain, n: usize) -> Result<Self> {
        let holes = d.holes().iter().map(|&c| SmoothCurve::circle(c, n)).collect::<Result<_>>()?;
        Self::new(SmoothCurve::circle(d.circle(0), n)?, holes)
    }

    pub fn contains(&self, z: C64) -> bool {
        self.outer.winding(z) == 1 && self.holes.iter().all(|h| h.winding(z) == 0)
    }

    /// Minimum distance between sampled boundary components.
    pub fn gap(&self) -> f64 {
        let s: Vec<Vec<C64>> = (0..self.k()).map(|j| self.curve(j).samples(512)).collect();
        let mut d = f64::INFINITY;
        for a in 0..s.len() {
            for b in a + 1..s.len() {
                for p in &s[a] {
                    for q in &s[b] {
                        d = d.min((p - q).norm());
                    }
                }
            }
        }
        d
    }
}

/// Either kind of domain, as read from a domain file.
#[derive(Clone, Debug)]
pub enum Domain {
    Circular(CircularDomain),
    Smooth(SmoothDomain),
}

impl Domain {
    pub fn k(&self) -> usize {
        match self {
            Domain::Circular(d) => d.k(),
            Domain::Smooth(d) => d.k(),
        }
    }

    pub fn to_smooth(&self, n: usize) -> Result<SmoothDomain> {
        match self {
            Domain::Circular(d) => SmoothDomain::from_circular(d, n),
            Domain::Smooth(d) => Ok(d.clone()),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CircleSpec {
    center: [f64; 2],
    radius: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PointsSpec {
    points: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CurveSpec {
    Circle(CircleSpec),
    Points(PointsSpec),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainFile {
    outer: Option<CurveSpec>,
    #[serde(default)]
    holes: Vec<CurveSpec>,
    curves: Option<Vec<Vec<[f64; 2]>>>,
}

impl Domain {
    /// Parses the TOML domain description (see `docs/domain-format.md`).
    pub fn parse(text: &str) -> Result<Self> {
        let f: DomainFile = toml::from_str(text).map_err(|e| Error::InvalidDomain(e.to_string()))?;
        let mut specs = Vec::new();
        if let Some(curves) = f.curves {
            if f.outer.is_some() || !f.holes.is_empty() {
                return Err(Error::InvalidDomain("`curves` cannot be combined with `outer`/`holes`".into()));
            }
            specs.extend(curves.into_iter().map(|points| CurveSpec::Points(PointsSpec { points })));
        } else {
            specs.push(f.outer.unwrap_or(CurveSpec::Circle(CircleSpec { center: [0.0, 0.0], radius: 1.0 })));
            specs.extend(f.holes);
        }
        if specs.is_empty() {
            return Err(Error::InvalidDomain("no curves".into()));
        }
        let all_circles = specs.iter().all(|s| matches!(s, CurveSpec::Circle(_)));
        if all_circles {
            let circles: Vec<Circle> = specs
                .iter()
                .map(|s| match s {
                    CurveSpec::Circle(c) => Circle::new(c.center[0], c.center[1], c.radius),
                    CurveSpec::Points(_) => unreachable!(),
                })
                .collect();
            let o = circles[0];
            if !(o.radius > 0.0) {
                return Err(Error::InvalidDomain("outer radius must be positive".into()));
            }
            // rescale so the outer circle is the unit circle
            let holes = circles[1..]
                .iter()
                .map(|c| Circle { center: (c.center - o.center) / o.radius, radius: c.radius / o.radius })
                .collect();
            return Ok(Domain::Circular(CircularDomain::new(holes)?));
        }
        let curves: Vec<SmoothCurve> = specs
            .iter()
            .map(|s| match s {
                CurveSpec::Circle(c) => SmoothCurve::circle(Circle::new(c.center[0], c.center[1], c.radius), 256),
                CurveSpec::Points(p) => {
                    let pts: Vec<C64> = p.points.iter().map(|p| C64::new(p[0], p[1])).collect();
                    SmoothCurve::from_samples(&pts)
                }
            })
            .collect::<Result<_>>()?;
        let mut it = curves.into_iter();
        let outer = it.next().unwrap();
        Ok(Domain::Smooth(SmoothDomain::new(outer, it.collect())?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Exact polar grid on a concentric annulus (or a disc when `r_in = 0`).
/// Cell `(i, j)` has centre radius `r_in + (i + ½) h_R` and angle `j h_θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarGrid {
    pub r_in: f64,
    pub nr: usize,
    pub nt: usize,
}

impl PolarGrid {
    pub fn new(r_in: f64, nr: usize, nt: usize) -> Self {
        Self { r_in, nr, nt }
    }

    pub fn hr(&self) -> f64 {
        (1.0 - self.r_in) / self.nr as f64
    }

    pub fn ht(&self) -> f64 {
        2.0 * PI / self.nt as f64
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.r_in + (i as f64 + 0.5) * self.hr()
    }

    pub fn angle(&self, j: usize) -> f64 {
        j as f64 * self.ht()
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nt + j
    }

    pub fn len(&self) -> usize {
        self.nr * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, i: usize, j: usize) -> C64 {
        C64::from_polar(self.radius(i), self.angle(j))
    }

    pub fn cell_area(&self, i: usize) -> f64 {
        self.radius(i) * self.hr() * self.ht()
    }

    /// Smallest physical spacing.
    pub fn h_min(&self) -> f64 {
        self.hr().min(self.radius(0) * self.ht())
    }

    /// Bilinear interpolation in `(R, θ)`, linear extrapolation radially.
    pub fn interpolate(&self, field: &[f64], z: C64) -> f64 {
        let (r, mut th) = (z.norm(), z.arg());
        if th < 0.0 {
            th += 2.0 * PI;
        }
        let s = ((r - self.r_in) / self.hr() - 0.5).clamp(-1.0, self.nr as f64);
        let i0 = (s.floor() as i64).clamp(0, self.nr as i64 - 2) as usize;
        let a = s - i0 as f64;
        let t = th / self.ht();
        let j0 = t.floor() as usize % self.nt;
        let b = t - t.floor();
        let j1 = (j0 + 1) % self.nt;
        let v0 = field[self.idx(i0, j0)] * (1.0 - b) + field[self.idx(i0, j1)] * b;
        let v1 = field[self.idx(i0 + 1, j0)] * (1.0 - b) + field[self.idx(i0 + 1, j1)] * b;
        v0 * (1.0 - a) + v1 * a
    }
}

/// Masked Cartesian grid on `[-1, 1]²` with `n × n` cells of width `h = 2/n`.
#[derive(Clone, Debug)]
pub struct MaskedGrid {
    pub n: usize,
    pub domain: CircularDomain,
    /// Quadrature area of each cell in units of `h²` (0 for inactive cells).
    pub frac: Vec<f64>,
    /// Whether the cell centre lies in the fluid.
    pub active: Vec<bool>,
}

impl MaskedGrid {
    pub fn new(domain: &CircularDomain, n: usize) -> Self {
        let h = 2.0 / n as f64;
        let mut frac = vec![0.0; n * n];
        let mut active = vec![false; n * n];
        const SUB: usize = 8;
        for iy in 0..n {
            for ix in 0..n {
                let c = Self::center_of(n, ix, iy);
                let k = iy * n + ix;
                active[k] = domain.contains(c);
                let (d, _) = domain.nearest_component(c);
                frac[k] = if d.abs() > h {
                    if active[k] {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    let mut inside = 0;
                    for a in 0..SUB {
                        for b in 0..SUB {
                            let p = c + C64::new(
                                ((a as f64 + 0.5) / SUB as f64 - 0.5) * h,
                                ((b as f64 + 0.5) / SUB as f64 - 0.5) * h,
                            );
                            inside += domain.contains(p) as usize;
                        }
                    }
                    inside as f64 / (SUB * SUB) as f64
                };
            }
        }
        // move the fluid area of cut cells whose centre is outside onto the
        // nearest active neighbour
        let raw = frac.clone();
        for iy in 0..n {
            for ix in 0..n {
                let k = iy * n + ix;
                if active[k] || raw[k] == 0.0 {
                    continue;
                }
                frac[k] = 0.0;
                let c = Self::center_of(n, ix, iy);
                let mut best: Option<(f64, usize)> = None;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                        if jx < 0 || jy < 0 || jx >= n as i64 || jy >= n as i64 {
                            continue;
                        }
                        let m = jy as usize * n + jx as usize;
                        if active[m] {
                            let d = (Self::center_of(n, jx as usize, jy as usize) - c).norm();
                            if best.is_none_or(|b| d < b.0) {
                                best = Some((d, m));
                            }
                        }
                    }
                }
                if let Some((_, m)) = best {
                    frac[m] += raw[k];
                }
            }
        }
        Self { n, domain: domain.clone(), frac, active }
    }

    fn center_of(n: usize, ix: usize, iy: usize) -> C64 {
        let h = 2.0 / n as f64;
        C64::new(-1.0 + (ix as f64 + 0.5) * h, -1.0 + (iy as f64 + 0.5) * h)
    }

    pub fn h(&self) -> f64 {
        2.0 / self.n as f64
    }

    pub fn center(&self, ix: usize, iy: usize) -> C64 {
        Self::center_of(self.n, ix, iy)
    }

    /// Bilinear interpolation over active neighbours, nearest active as fallback.
    pub fn interpolate(&self, field: &[f64], z: C64) -> f64 {
        let h = self.h();
        let sx = (z.re + 1.0) / h - 0.5;
        let sy = (z.im + 1.0) / h - 0.5;
        let ix = (sx.floor() as i64).clamp(0, self.n as i64 - 2) as usize;
        let iy = (sy.floor() as i64).clamp(0, self.n as i64 - 2) as usize;
        let (a, b) = (sx - ix as f64, sy - iy as f64);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (dx, dy, w) in [(0, 0, (1.0 - a) * (1.0 - b)), (1, 0, a * (1.0 - b)), (0, 1, (1.0 - a) * b), (1, 1, a * b)]
        {
            let k = (iy + dy) * self.n + ix + dx;
            if self.active[k] {
                acc += w * field[k];
                wsum += w;
            }
        }
        if wsum > 1e-12 {
            return acc / wsum;
        }
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..self.n * self.n {
            if self.active[k] {
                let d = (self.center(k % self.n, k / self.n) - z).norm();
                if d < best.0 {
                    best = (d, field[k]);
                }
            }
        }
        best.1
    }
}

#[derive(Clone, Debug)]
pub enum Grid {
    Polar(PolarGrid),
    Masked(MaskedGrid),
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::Polar(g) => g.len(),
            Grid::Masked(g) => g.n * g.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, k: usize) -> C64 {
        match self {
            Grid::Polar(g) => g.node(k / g.nt, k % g.nt),
            Grid::Masked(g) => g.center(k % g.n, k / g.n),
        }
    }

    /// Quadrature weight of cell `k` (midpoint rule, fluid area only).
    pub fn weight(&self, k: usize) -> f64 {
        match self {
            Grid::Polar(g) => g.cell_area(k / g.nt),
            Grid::Masked(g) => g.frac[k] * g.h() * g.h(),
        }
    }

    pub fn is_active(&self, k: usize) -> bool {
        match self {
            Grid::Polar(_) => true,
            Grid::Masked(g) => g.active[k],
        }
    }

    pub fn h(&self) -> f64 {
        match self {
            Grid::Polar(g) => g.hr(),
            Grid::Masked(g) => g.h(),
        }
    }

    pub fn interpolate(&self, field: &[f64], z: C64) -> f64 {
        match self {
            Grid::Polar(g) => g.interpolate(field, z),
            Grid::Masked(g) => g.interpolate(field, z),
        }
    }

    /// Midpoint-rule integral of a nodal field.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        (0..self.len()).map(|k| self.weight(k) * field[k]).sum()
    }
}

/// Builds the computational grid. Concentric annuli get an exact polar grid
/// with `n` radial and `2n` angular cells; other circular domains get a masked
/// Cartesian grid with `n` cells across the unit disc's diameter.
pub fn build_grid(domain: &CircularDomain, n: usize) -> Result<Grid> {
    if n < 8 {
        return Err(Error::InvalidParameter(format!("resolution {n} < 8")));
    }
    if let Some(r) = domain.concentric_radius() {
        return Ok(Grid::Polar(PolarGrid::new(r, n, 2 * n)));
    }
    let h = 2.0 / n as f64;
    let gap = domain.gap();
    if gap < 4.0 * h {
        return Err(Error::ResolutionTooCoarse { gap, four_h: 4.0 * h });
    }
    Ok(Grid::Masked(MaskedGrid::new(domain, n)))
}
