//! Closed-form harmonic functions on circular domains and the least-squares
//! collocation machinery that produces them.
//!
//! Every term is the real part of a function `f` holomorphic in the fluid
//! region, so the gradient is read off `f' = u_x - i u_y` and the Hessian off
//! `f''` (`u_xx = Re f''`, `u_xy = -Im f''`).

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::geometry::{Circle, CircularDomain};
use crate::{Error, Result, C64};

/// `coef · log|z - center|`.
#[derive(Clone, Copy, Debug)]
pub struct LogTerm {
    pub center: C64,
    pub coef: f64,
}

/// `Re(coef · (z - center)^(-order))`.
#[derive(Clone, Copy, Debug)]
pub struct PoleTerm {
    pub center: C64,
    pub order: i32,
    pub coef: C64,
}

/// `Re Σ_m coefs[m-1] · (r / (z - b))^m` for a hole circle `(b, r)`.
#[derive(Clone, Debug)]
pub struct LaurentTerm {
    pub circle: Circle,
    pub coefs: Vec<C64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageSide {
    /// `ξ = (z - c)/ρ`, regular inside the circle.
    Interior,
    /// `ξ = ρ/(z - c)`, regular outside the circle.
    Exterior,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageKind {
    /// `Re(coef · log(1 - ξ s))`, `coef` real.
    Log,
    /// `Re(coef · ξ / (1 - ξ s))`.
    Dlog,
}

/// Reflection-type term attached to a boundary circle, `|s| < 1`.
#[derive(Clone, Copy, Debug)]
pub struct ImageTerm {
    pub circle: Circle,
    pub side: ImageSide,
    pub kind: ImageKind,
    pub s: C64,
    pub coef: C64,
}

impl ImageTerm {
    fn xi(&self, z: C64) -> (C64, C64, C64) {
        let (c, r) = (self.circle.center, self.circle.radius);
        match self.side {
            ImageSide::Interior => ((z - c) / r, C64::new(1.0 / r, 0.0), C64::new(0.0, 0.0)),
            ImageSide::Exterior => {
                let d = 1.0 / (z - c);
                (r * d, -r * d * d, 2.0 * r * d * d * d)
            }
        }
    }

    /// `(g, g_ξ, g_ξξ)` as functions of `ξ`.
    fn g(&self, xi: C64) -> (C64, C64, C64) {
        let s = self.s;
        let den = 1.0 / (1.0 - xi * s);
        match self.kind {
            ImageKind::Log => {
                let a = self.coef;
                let v = C64::new((1.0 - xi * s).norm().ln(), 0.0) * a.re;
                (v, -a * s * den, -a * s * s * den * den)
            }
            ImageKind::Dlog => {
                let a = self.coef;
                (a * xi * den, a * den * den, 2.0 * a * s * den * den * den)
            }
        }
    }

    fn eval(&self, z: C64) -> (f64, C64, C64) {
        let (xi, d1, d2) = self.xi(z);
        let (g, g1, g2) = self.g(xi);
        (g.re, g1 * d1, g2 * d1 * d1 + g1 * d2)
    }

    fn circle_integral(&self, c: Circle) -> f64 {
        let (c0, r0) = (self.circle.center, self.circle.radius);
        let l = c.perimeter();
        match self.side {
            ImageSide::Interior => {
                // singular point where ξ s = 1
                if self.s.norm() < 1e-300 {
                    return l * self.g(self.xi(c.center).0).0.re;
                }
                let p = c0 + r0 / self.s;
                if (p - c.center).norm() > c.radius {
                    l * self.g(self.xi(c.center).0).0.re
                } else {
                    match self.kind {
                        ImageKind::Log => l * self.coef.re * ((self.s.norm() / r0).ln() + c.radius.ln()),
                        ImageKind::Dlog => l * (-self.coef / self.s).re,
                    }
                }
            }
            ImageSide::Exterior => {
                let q = c0 + r0 * self.s;
                let lm = |p: C64| ((p - c.center).norm()).max(c.radius).ln();
                match self.kind {
                    ImageKind::Log => l * self.coef.re * (lm(q) - lm(c0)),
                    ImageKind::Dlog => {
                        if (q - c.center).norm() < c.radius {
                            0.0
                        } else {
                            l * (self.coef * r0 / (c.center - q)).re
                        }
                    }
                }
            }
        }
    }
}

/// A harmonic function assembled from closed-form terms.
#[derive(Clone, Debug, Default)]
pub struct SeriesHarmonic {
    pub constant: f64,
    pub logs: Vec<LogTerm>,
    pub poles: Vec<PoleTerm>,
    /// `Re Σ_m outer[m-1] z^m`.
    pub outer: Vec<C64>,
    pub laurent: Vec<LaurentTerm>,
    pub images: Vec<ImageTerm>,
}

/// Evaluates `(P, P', P'')` for `P(q) = Σ_{m≥1} c_m q^m` by Horner's rule.
fn poly3(coefs: &[C64], q: C64) -> (C64, C64, C64) {
    let zero = C64::new(0.0, 0.0);
    let (mut p, mut dp, mut ddp) = (zero, zero, zero);
    for c in coefs.iter().rev() {
        ddp = ddp * q + 2.0 * dp;
        dp = dp * q + p;
        p = p * q + c;
    }
    // the loop built Σ c_m q^(m-1); shift by one power of q
    (p * q, p + dp * q, 2.0 * dp + ddp * q)
}

impl SeriesHarmonic {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, ..Default::default() }
    }

    /// Value, `f'` and `f''` at `z`.
    pub fn eval(&self, z: C64) -> (f64, C64, C64) {
        let mut v = self.constant;
        let mut d1 = C64::new(0.0, 0.0);
        let mut d2 = d1;
        for t in &self.logs {
            let w = z - t.center;
            let inv = 1.0 / w;
            v += t.coef * 0.5 * w.norm_sqr().ln();
            d1 += t.coef * inv;
            d2 -= t.coef * inv * inv;
        }
        for t in &self.poles {
            let inv = 1.0 / (z - t.center);
            let p = inv.powi(t.order);
            let m = t.order as f64;
            v += (t.coef * p).re;
            d1 += -m * t.coef * p * inv;
            d2 += m * (m + 1.0) * t.coef * p * inv * inv;
        }
        if !self.outer.is_empty() {
            let (p, dp, ddp) = poly3(&self.outer, z);
            v += p.re;
            d1 += dp;
            d2 += ddp;
        }
        for t in &self.laurent {
            let inv = 1.0 / (z - t.circle.center);
            let q = t.circle.radius * inv;
            let (p, dp, ddp) = poly3(&t.coefs, q);
            let q1 = -q * inv;
            let q2 = 2.0 * q * inv * inv;
            v += p.re;
            d1 += dp * q1;
            d2 += ddp * q1 * q1 + dp * q2;
        }
        for t in &self.images {
            let (a, b, c) = t.eval(z);
            v += a;
            d1 += b;
            d2 += c;
        }
        (v, d1, d2)
    }

    pub fn value(&self, z: C64) -> f64 {
        self.eval(z).0
    }

    /// `f' = u_x - i u_y`.
    pub fn fprime(&self, z: C64) -> C64 {
        self.eval(z).1
    }

    pub fn gradient(&self, z: C64) -> [f64; 2] {
        let d = self.fprime(z);
        [d.re, -d.im]
    }

    pub fn hessian(&self, z: C64) -> [[f64; 2]; 2] {
        let d2 = self.eval(z).2;
        [[d2.re, -d2.im], [-d2.im, -d2.re]]
    }

    /// Directional derivative along the unit vector `n` (as a complex number).
    pub fn directional(&self, z: C64, n: C64) -> f64 {
        (n * self.fprime(z)).re
    }

    /// `∮ u dS` over a circle, in closed form.
    pub fn circle_integral(&self, c: Circle) -> f64 {
        let l = c.perimeter();
        let mut s = self.constant * l;
        for t in &self.logs {
            s += l * t.coef * (t.center - c.center).norm().max(c.radius).ln();
        }
        for t in &self.poles {
            if (t.center - c.center).norm() > c.radius {
                s += l * (t.coef * (c.center - t.center).powi(-t.order)).re;
            }
        }
        if !self.outer.is_empty() {
            s += l * poly3(&self.outer, c.center).0.re;
        }
        for t in &self.laurent {
            if (t.circle.center - c.center).norm() > c.radius {
                s += l * poly3(&t.coefs, t.circle.radius / (c.center - t.circle.center)).0.re;
            }
        }
        for t in &self.images {
            s += t.circle_integral(c);
        }
        s
    }

    /// `∮_{∂Ω} u dS`.
    pub fn boundary_integral(&self, domain: &CircularDomain) -> f64 {
        domain.circles().map(|c| self.circle_integral(c)).sum()
    }

    pub fn scale(&mut self, a: f64) {
        self.constant *= a;
        self.logs.iter_mut().for_each(|t| t.coef *= a);
        self.poles.iter_mut().for_each(|t| t.coef *= a);
        self.outer.iter_mut().for_each(|c| *c *= a);
        for t in &mut self.laurent {
            t.coefs.iter_mut().for_each(|c| *c *= a);
        }
        for t in &mut self.images {
            t.coef *= a;
        }
    }

    /// `self += a · other`.
    pub fn add_scaled(&mut self, a: f64, other: &SeriesHarmonic) {
        let mut o = other.clone();
        o.scale(a);
        self.constant += o.constant;
        self.logs.extend(o.logs);
        self.poles.extend(o.poles);
        if self.outer.len() < o.outer.len() {
            self.outer.resize(o.outer.len(), C64::new(0.0, 0.0));
        }
        for (c, d) in self.outer.iter_mut().zip(&o.outer) {
            *c += d;
        }
        for t in o.laurent {
            match self.laurent.iter_mut().find(|s| s.circle == t.circle) {
                Some(s) => {
                    if s.coefs.len() < t.coefs.len() {
                        s.coefs.resize(t.coefs.len(), C64::new(0.0, 0.0));
                    }
                    for (c, d) in s.coefs.iter_mut().zip(&t.coefs) {
                        *c += d;
                    }
                }
                None => self.laurent.push(t),
            }
        }
        self.images.extend(o.images);
    }
}

/// Column layout of the collocation basis on a circular domain.
#[derive(Clone, Debug)]
pub struct Basis {
    domain: CircularDomain,
    pub modes: usize,
    pub with_constant: bool,
}

impl Basis {
    pub fn new(domain: &CircularDomain, modes: usize, with_constant: bool) -> Self {
        Self { domain: domain.clone(), modes, with_constant }
    }

    pub fn len(&self) -> usize {
        let k = self.domain.k();
        self.with_constant as usize + (k - 1) + 2 * self.modes * k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `f` and `f'` of every column at `z`, in column order.
    pub fn columns(&self, z: C64, f: &mut Vec<C64>, df: &mut Vec<C64>) {
        f.clear();
        df.clear();
        let i = C64::i();
        if self.with_constant {
            f.push(C64::new(1.0, 0.0));
            df.push(C64::new(0.0, 0.0));
        }
        for h in self.domain.holes() {
            let w = z - h.center;
            f.push(C64::new(w.norm().ln(), 0.0));
            df.push(1.0 / w);
        }
        let m = self.modes;
        let mut zp = C64::new(1.0, 0.0);
        let start = f.len();
        for k in 1..=m {
            let d = k as f64 * zp;
            zp *= z;
            f.push(zp);
            df.push(d);
        }
        for k in 0..m {
            f.push(-i * f[start + k]);
            df.push(-i * df[start + k]);
        }
        for h in self.domain.holes() {
            let inv = 1.0 / (z - h.center);
            let q = h.radius * inv;
            let mut qp = C64::new(1.0, 0.0);
            let start = f.len();
            for k in 1..=m {
                let d = -(k as f64) * qp * q * inv;
                qp *= q;
                f.push(qp);
                df.push(d);
            }
            for k in 0..m {
                f.push(-i * f[start + k]);
                df.push(-i * df[start + k]);
            }
        }
    }

    /// Converts a coefficient vector into a series.
    pub fn to_series(&self, c: &[f64]) -> SeriesHarmonic {
        let mut s = SeriesHarmonic::default();
        let mut it = c.iter().copied();
        if self.with_constant {
            s.constant = it.next().unwrap();
        }
        for h in self.domain.holes() {
            s.logs.push(LogTerm { center: h.center, coef: it.next().unwrap() });
        }
        let m = self.modes;
        let re: Vec<f64> = it.by_ref().take(m).collect();
        let im: Vec<f64> = it.by_ref().take(m).collect();
        s.outer = re.iter().zip(&im).map(|(&a, &b)| C64::new(a, -b)).collect();
        for h in self.domain.holes() {
            let re: Vec<f64> = it.by_ref().take(m).collect();
            let im: Vec<f64> = it.by_ref().take(m).collect();
            s.laurent
                .push(LaurentTerm { circle: *h, coefs: re.iter().zip(&im).map(|(&a, &b)| C64::new(a, -b)).collect() });
        }
        s
    }
}

/// Column-scaled QR pseudo-inverse of a tall matrix.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pinv: DMatrix<f64>,
    pub condition: f64,
}

impl LeastSquares {
    pub const MAX_CONDITION: f64 = 1e13;

    pub fn new(mut a: DMatrix<f64>) -> Result<Self> {
        let scales: Vec<f64> = a
            .column_iter()
            .map(|c| {
                let n = c.norm();
                if n > 0.0 {
                    1.0 / n
                } else {
                    1.0
                }
            })
            .collect();
        for (j, s) in scales.iter().enumerate() {
            a.column_mut(j).scale_mut(*s);
        }
        // singular values only feed the conditioning diagnostic; the solve
        // itself uses Householder QR, which stays backward stable where the
        // iterative SVD can stall at a visible residual
        let sv = a.singular_values();
        let condition = sv.max() / sv.min();
        if !condition.is_finite() || condition > Self::MAX_CONDITION {
            return Err(Error::IllConditioned(format!("collocation condition number {condition:.3e}")));
        }
        let qr = a.qr();
        let mut pinv = qr
            .r()
            .solve_upper_triangular(&qr.q().transpose())
            .ok_or_else(|| Error::IllConditioned("singular triangular factor".into()))?;
        for (j, s) in scales.iter().enumerate() {
            pinv.row_mut(j).scale_mut(*s);
        }
        Ok(Self { pinv, condition })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.pinv.nrows()];
        for (j, bj) in b.iter().enumerate() {
            if *bj != 0.0 {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi += self.pinv[(i, j)] * bj;
                }
            }
        }
        x
    }
}

/// What the collocation rows impose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Value,
    NormalDerivative,
}

/// A factorised collocation problem: `8M` points per boundary circle.
#[derive(Clone, Debug)]
pub struct Collocation {
    pub basis: Basis,
    pub kind: RowKind,
    /// `(component, angle, point)` of every row.
    pub points: Vec<(usize, f64, C64)>,
    ls: LeastSquares,
    domain: CircularDomain,
}

impl Collocation {
    pub fn new(domain: &CircularDomain, modes: usize, kind: RowKind) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidParameter("series order must be positive".into()));
        }
        let basis = Basis::new(domain, modes, kind == RowKind::Value);
        let per = 8 * modes;
        let points: Vec<(usize, f64, C64)> = (0..domain.k())
            .flat_map(|j| {
                let c = domain.circle(j);
                (0..per).map(move |i| {
                    let t = 2.0 * PI * i as f64 / per as f64;
                    (j, t, c.point(t))
                })
            })
            .collect();
        let mut a = DMatrix::zeros(points.len(), basis.len());
        let (mut f, mut df) = (Vec::new(), Vec::new());
        for (row, &(j, t, z)) in points.iter().enumerate() {
            basis.columns(z, &mut f, &mut df);
            let n = domain.normal(j, t);
            for col in 0..basis.len() {
                a[(row, col)] = match kind {
                    RowKind::Value => f[col].re,
                    RowKind::NormalDerivative => (n * df[col]).re,
                };
            }
        }
        let ls = LeastSquares::new(a)?;
        Ok(Self { basis, kind, points, ls, domain: domain.clone() })
    }

    pub fn domain(&self) -> &CircularDomain {
        &self.domain
    }

    pub fn solve_rows(&self, rhs: &[f64]) -> SeriesHarmonic {
        self.basis.to_series(&self.ls.solve(rhs))
    }

    /// Fits boundary data `g(component, angle, point)`.
    pub fn solve(&self, g: impl Fn(usize, f64, C64) -> f64) -> SeriesHarmonic {
        let rhs: Vec<f64> = self.points.iter().map(|&(j, t, z)| g(j, t, z)).collect();
        self.solve_rows(&rhs)
    }

    pub fn condition(&self) -> f64 {
        self.ls.condition
    }

    /// Maximum misfit at points midway between collocation points.
    pub fn holdout_residual(&self, s: &SeriesHarmonic, g: impl Fn(usize, f64, C64) -> f64) -> f64 {
        let per = 8 * self.basis.modes;
        let mut worst = 0.0f64;
        for j in 0..self.domain.k() {
            let c = self.domain.circle(j);
            for i in 0..per {
                let t = 2.0 * PI * (i as f64 + 0.5) / per as f64;
                let z = c.point(t);
                let v = match self.kind {
                    RowKind::Value => s.value(z),
                    RowKind::NormalDerivative => s.directional(z, self.domain.normal(j, t)),
                };
                worst = worst.max((v - g(j, t, z)).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fd_check(s: &SeriesHarmonic, z: C64) {
        let h = 1e-5;
        let (_, d1, d2) = s.eval(z);
        let ux = (s.value(z + h) - s.value(z - h)) / (2.0 * h);
        let uy = (s.value(z + C64::i() * h) - s.value(z - C64::i() * h)) / (2.0 * h);
        assert!((d1.re - ux).abs() < 1e-7 * (1.0 + ux.abs()));
        assert!((-d1.im - uy).abs() < 1e-7 * (1.0 + uy.abs()));
        let fx = (s.fprime(z + h) - s.fprime(z - h)) / (2.0 * h);
        assert!((fx - d2).norm() < 1e-6 * (1.0 + d2.norm()));
    }

    #[test]
    fn derivatives_of_every_term_kind() {
        let hole = Circle::new(0.2, -0.1, 0.25);
        let s = SeriesHarmonic {
            constant: 0.3,
            logs: vec![LogTerm { center: C64::new(0.2, -0.1), coef: 0.7 }],
            poles: vec![PoleTerm { center: C64::new(1.5, 0.4), order: 2, coef: C64::new(0.3, -0.2) }],
            outer: vec![C64::new(0.1, 0.2), C64::new(-0.3, 0.05), C64::new(0.02, 0.0)],
            laurent: vec![LaurentTerm { circle: hole, coefs: vec![C64::new(0.4, 0.1), C64::new(-0.2, 0.3)] }],
            images: vec![
                ImageTerm {
                    circle: hole,
                    side: ImageSide::Exterior,
                    kind: ImageKind::Log,
                    s: C64::new(0.3, 0.4),
                    coef: C64::new(0.2, 0.0),
                },
                ImageTerm {
                    circle: Circle::new(0.0, 0.0, 1.0),
                    side: ImageSide::Interior,
                    kind: ImageKind::Dlog,
                    s: C64::new(0.5, -0.2),
                    coef: C64::new(0.1, 0.3),
                },
            ],
        };
        fd_check(&s, C64::new(-0.4, 0.35));
        fd_check(&s, C64::new(0.6, 0.1));
    }

    fn trapezoid(s: &SeriesHarmonic, c: Circle) -> f64 {
        let n = 4096;
        (0..n).map(|i| s.value(c.point(2.0 * PI * i as f64 / n as f64))).sum::<f64>() * c.perimeter() / n as f64
    }

    #[test]
    fn closed_form_circle_integrals() {
        let hole = Circle::new(0.3, 0.0, 0.2);
        let other = Circle::new(-0.4, 0.1, 0.15);
        let unit = Circle::new(0.0, 0.0, 1.0);
        let terms = [
            ImageTerm {
                circle: hole,
                side: ImageSide::Exterior,
                kind: ImageKind::Log,
                s: C64::new(0.5, 0.2),
                coef: C64::new(1.0, 0.0),
            },
            ImageTerm {
                circle: hole,
                side: ImageSide::Exterior,
                kind: ImageKind::Dlog,
                s: C64::new(0.5, 0.2),
                coef: C64::new(0.3, 0.7),
            },
            ImageTerm {
                circle: unit,
                side: ImageSide::Interior,
                kind: ImageKind::Log,
                s: C64::new(0.6, 0.3),
                coef: C64::new(1.0, 0.0),
            },
            ImageTerm {
                circle: unit,
                side: ImageSide::Interior,
                kind: ImageKind::Dlog,
                s: C64::new(0.6, 0.3),
                coef: C64::new(0.3, 0.7),
            },
        ];
        for t in terms {
            let s = SeriesHarmonic { images: vec![t], ..Default::default() };
            for c in [hole, other, unit] {
                assert_abs_diff_eq!(s.circle_integral(c), trapezoid(&s, c), epsilon = 1e-9);
            }
        }
        let s = SeriesHarmonic {
            logs: vec![LogTerm { center: hole.center, coef: 0.4 }],
            poles: vec![PoleTerm { center: C64::new(0.31, 0.02), order: 3, coef: C64::new(0.01, 0.0) }],
            outer: vec![C64::new(0.2, 0.1); 4],
            laurent: vec![LaurentTerm { circle: hole, coefs: vec![C64::new(0.3, -0.1); 5] }],
            ..Default::default()
        };
        for c in [hole, other, unit] {
            assert_abs_diff_eq!(s.circle_integral(c), trapezoid(&s, c), epsilon = 1e-9);
        }
    }

    #[test]
    fn dirichlet_fit_of_harmonic_data() {
        let d = CircularDomain::new(vec![Circle::new(0.3, 0.1, 0.2)]).unwrap();
        let c = Collocation::new(&d, 24, RowKind::Value).unwrap();
        let exact = |z: C64| (z * z).re + (z - C64::new(0.3, 0.1)).norm().ln() * 0.5;
        let s = c.solve(|_, _, z| exact(z));
        let z = C64::new(-0.2, -0.5);
        assert_abs_diff_eq!(s.value(z), exact(z), epsilon = 1e-10);
    }
}
