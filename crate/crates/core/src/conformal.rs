//! Conformal maps from smooth doubly-connected domains onto annuli.
//!
//! The harmonic measure `ω` of the inner curve is found with a Nyström
//! double-layer solve augmented by `A log|z - z1|`, `z1` inside the hole. The
//! double layer is the real part of the Cauchy-type sum
//! `C(z) = -(1/2π) Σ w_l μ_l n_l / (y_l - z)`, so `ω + iω̃ = C(z) + A log(z - z1)`
//! is analytic by construction. With `r = exp(1/A)` the map
//! `φ(z) = e^{iα} (z - z1) exp(log r · C(z))` is single valued and
//! `|φ| = r^ω`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::FftPlanner;
use serde::Serialize;

use crate::geometry::{Domain, SmoothCurve, SmoothDomain};
use crate::{Error, Result, C64};

pub const DEFAULT_NODES: usize = 256;
const UPSAMPLE: usize = 4;

/// Fine boundary nodes with the boundary values of `C` and `C'`.
#[derive(Clone, Debug)]
struct Node {
    y: C64,
    /// Oriented `dy` (outer counter-clockwise, hole clockwise).
    dy: C64,
    c: C64,
    dc: C64,
}

/// Map of a doubly-connected domain onto `{r < |ζ| < 1}`.
#[derive(Clone, Debug)]
pub struct AnnulusMap {
    nodes: Vec<Node>,
    pub a: f64,
    pub z1: C64,
    pub modulus: f64,
    rotation: C64,
    domain: SmoothDomain,
    table: Vec<(C64, C64)>,
}

fn resample(values: &[f64], factor: usize) -> (Vec<f64>, Vec<f64>) {
    let n = values.len();
    let m = n * factor;
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let mut big = vec![C64::new(0.0, 0.0); m];
    let mut dbig = vec![C64::new(0.0, 0.0); m];
    let half = n / 2;
    for (k, &c) in buf.iter().enumerate() {
        let kk = if k <= half { k as i64 } else { k as i64 - n as i64 };
        let c = if n.is_multiple_of(2) && k == half { 0.5 * c } else { c };
        let idx = if kk >= 0 { kk as usize } else { (m as i64 + kk) as usize };
        big[idx] += c;
        dbig[idx] += c * C64::new(0.0, kk as f64);
        if n.is_multiple_of(2) && k == half {
            let idx2 = m - half;
            big[idx2] += c;
            dbig[idx2] += c * C64::new(0.0, -(half as f64));
        }
    }
    let inv = planner.plan_fft_inverse(m);
    inv.process(&mut big);
    inv.process(&mut dbig);
    let s = 1.0 / n as f64;
    (big.iter().map(|c| c.re * s).collect(), dbig.iter().map(|c| c.re * s).collect())
}

fn panel_geometry(curve: &SmoothCurve, n: usize, outer: bool) -> Vec<(C64, C64, C64, f64)> {
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            let (z, dz, ddz) = curve.eval(t);
            let tangent = dz / dz.norm();
            // ccw curves: outer normal is -iT on the outer curve, iT on holes
            let normal = if outer { -C64::i() * tangent } else { C64::i() * tangent };
            let kappa = (ddz.re * normal.re + ddz.im * normal.im) / dz.norm_sqr();
            (z, dz, normal, kappa)
        })
        .collect()
}

impl AnnulusMap {
    /// Builds the map with `n` Nyström nodes per curve.
    pub fn new(domain: &SmoothDomain, n: usize) -> Result<Self> {
        if domain.k() != 2 {
            return Err(Error::Unsupported(format!(
                "conformal map needs a doubly-connected domain, got k = {}",
                domain.k()
            )));
        }
        let hole = &domain.holes[0];
        let hs = hole.samples(512);
        let z1 = hs.iter().sum::<C64>() / hs.len() as f64;
        if hole.winding(z1) != 1 {
            return Err(Error::Unsupported("hole centroid lies outside the hole".into()));
        }
        let geo = [panel_geometry(&domain.outer, n, true), panel_geometry(hole, n, false)];
        let dt = 2.0 * PI / n as f64;
        let total = 2 * n;
        let mut mat = DMatrix::zeros(total + 1, total + 1);
        let mut rhs = DVector::zeros(total + 1);
        let pts: Vec<(usize, C64)> = (0..2).flat_map(|c| geo[c].iter().map(move |g| (c, g.0))).collect();
        let wts: Vec<(f64, C64, f64)> =
            (0..2).flat_map(|c| geo[c].iter().map(move |g| (g.1.norm() * dt, g.2, g.3))).collect();
        for (i, &(ci, x)) in pts.iter().enumerate() {
            for (l, &(_, y)) in pts.iter().enumerate() {
                let (w, nrm, kappa) = wts[l];
                let k = if i == l { kappa / (4.0 * PI) } else { -(nrm / (y - x)).re / (2.0 * PI) };
                mat[(i, l)] = w * k;
            }
            mat[(i, i)] -= 0.5;
            mat[(i, total)] = (x - z1).norm().ln();
            rhs[i] = if ci == 1 { 1.0 } else { 0.0 };
        }
        for l in n..total {
            mat[(total, l)] = wts[l].0;
        }
        let sol = mat.lu().solve(&rhs).ok_or_else(|| Error::IllConditioned("singular Nyström system".into()))?;
        let a = sol[total];
        if !(a < 0.0) {
            return Err(Error::IllConditioned(format!("log coefficient {a} has the wrong sign")));
        }
        let nf = n * UPSAMPLE;
        let dtf = 2.0 * PI / nf as f64;
        let mut fine = Vec::new();
        for c in 0..2 {
            let mu: Vec<f64> = (0..n).map(|i| sol[c * n + i]).collect();
            let (mu_f, dmu_f) = resample(&mu, UPSAMPLE);
            let curve = if c == 0 { &domain.outer } else { hole };
            fine.push((panel_geometry(curve, nf, c == 0), mu_f, dmu_f));
        }
        // interior limit of C at every fine node; the own curve is handled
        // with subtraction of the local density, its closed integral being
        // 2π on the outer curve and 0 on the hole
        let mut nodes = Vec::with_capacity(2 * nf);
        for c in 0..2 {
            let (g, mu, dmu) = &fine[c];
            let mut vals = Vec::with_capacity(nf);
            for i in 0..nf {
                let x = g[i].0;
                let mut s = C64::new(0.0, 0.0);
                for (o, (go, muo, _)) in fine.iter().enumerate() {
                    for l in 0..nf {
                        let wn = go[l].1.norm() * dtf * go[l].2;
                        if o == c {
                            if l == i {
                                s += wn / go[l].1 * dmu[i];
                            } else {
                                s += wn * (muo[l] - mu[i]) / (go[l].0 - x);
                            }
                        } else {
                            s += wn * muo[l] / (go[l].0 - x);
                        }
                    }
                }
                if c == 0 {
                    s += 2.0 * PI * mu[i];
                }
                vals.push(-s / (2.0 * PI));
            }
            let dre = resample(&vals.iter().map(|v| v.re).collect::<Vec<_>>(), 1).1;
            let dim = resample(&vals.iter().map(|v| v.im).collect::<Vec<_>>(), 1).1;
            let sign = if c == 0 { 1.0 } else { -1.0 };
            for i in 0..nf {
                let dz = g[i].1;
                nodes.push(Node { y: g[i].0, dy: sign * dz * dtf, c: vals[i], dc: C64::new(dre[i], dim[i]) / dz });
            }
        }
        let modulus = (1.0 / a).exp();
        let mut map =
            Self { nodes, a, z1, modulus, rotation: C64::new(1.0, 0.0), domain: domain.clone(), table: Vec::new() };
        let p0 = map.phi(domain.outer.point(0.0));
        map.rotation = p0.conj() / p0.norm();
        map.table = map.build_table();
        Ok(map)
    }

    /// `C(z)` and `C'(z)` by the barycentric Cauchy formula.
    fn cauchy(&self, z: C64) -> (C64, C64) {
        let zero = C64::new(0.0, 0.0);
        let (mut num, mut dnum, mut den) = (zero, zero, zero);
        for nd in &self.nodes {
            let d = nd.y - z;
            if d.norm() < 1e-14 {
                return (nd.c, nd.dc);
            }
            let w = nd.dy / d;
            num += w * nd.c;
            dnum += w * nd.dc;
            den += w;
        }
        (num / den, dnum / den)
    }

    /// Harmonic measure of the inner curve.
    pub fn omega(&self, z: C64) -> f64 {
        self.cauchy(z).0.re + self.a * (z - self.z1).norm().ln()
    }

    pub fn phi(&self, z: C64) -> C64 {
        let lr = self.modulus.ln();
        self.rotation * (z - self.z1) * (lr * self.cauchy(z).0).exp()
    }

    /// `φ'(z)`.
    pub fn dphi(&self, z: C64) -> C64 {
        let lr = self.modulus.ln();
        let (c, dc) = self.cauchy(z);
        let p = self.rotation * (z - self.z1) * (lr * c).exp();
        p * (1.0 / (z - self.z1) + lr * dc)
    }

    /// Flux `∮_{inner} ∂ν ω dS = 2πA`.
    pub fn period(&self) -> f64 {
        2.0 * PI * self.a
    }

    fn build_table(&self) -> Vec<(C64, C64)> {
        let samples_out = self.domain.outer.samples(128);
        let samples_in = self.domain.holes[0].samples(128);
        let lo = samples_out
            .iter()
            .fold(C64::new(f64::INFINITY, f64::INFINITY), |a, b| C64::new(a.re.min(b.re), a.im.min(b.im)));
        let hi = samples_out
            .iter()
            .fold(C64::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |a, b| C64::new(a.re.max(b.re), a.im.max(b.im)));
        let _ = samples_in;
        let m = 48;
        let mut t = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let z = C64::new(
                    lo.re + (i as f64 + 0.5) / m as f64 * (hi.re - lo.re),
                    lo.im + (j as f64 + 0.5) / m as f64 * (hi.im - lo.im),
                );
                if self.domain.contains(z) {
                    t.push((z, self.phi(z)));
                }
            }
        }
        t
    }

    /// Inverse map by Newton iteration from the nearest tabulated point.
    pub fn inverse(&self, zeta: C64) -> Result<C64> {
        let start = self
            .table
            .iter()
            .min_by(|a, b| (a.1 - zeta).norm().partial_cmp(&(b.1 - zeta).norm()).unwrap())
            .ok_or_else(|| Error::InvalidParameter("empty inverse table".into()))?
            .0;
        let mut z = start;
        for _ in 0..60 {
            let step = (self.phi(z) - zeta) / self.dphi(z);
            let mut lam = 1.0;
            while lam > 1e-3 && !self.domain.contains(z - lam * step) {
                lam *= 0.5;
            }
            z -= lam * step;
            if step.norm() < 1e-15 {
                break;
            }
        }
        if (self.phi(z) - zeta).norm() > 1e-9 {
            return Err(Error::IllConditioned(format!("inverse map did not converge at {zeta}")));
        }
        Ok(z)
    }

    /// `φ(z)`, refusing points that land outside the closed annulus.
    pub fn push_forward(&self, z: C64) -> Result<C64> {
        let zeta = self.phi(z);
        let m = zeta.norm();
        if m > 1.0 + 1e-6 || m < self.modulus - 1e-6 {
            return Err(Error::OutsideDomain([z.re, z.im]));
        }
        Ok(zeta)
    }

    /// Pulls a function on the annulus back to the domain: `f(φ(z))`.
    pub fn pull_back(&self, f: impl Fn(C64) -> f64, z: C64) -> Result<f64> {
        Ok(f(self.push_forward(z)?))
    }

    /// Complex derivative of a pulled-back analytic function: `φ'(z) f'(φ(z))`.
    pub fn pull_back_derivative(&self, fprime: impl Fn(C64) -> C64, z: C64) -> Result<C64> {
        Ok(self.dphi(z) * fprime(self.push_forward(z)?))
    }

    /// Interior sample points, at least `margin` away from the boundary.
    pub fn interior_samples(&self, margin: f64) -> Vec<C64> {
        self.table.iter().map(|p| p.0).filter(|&z| self.nodes.iter().all(|nd| (nd.y - z).norm() > margin)).collect()
    }
}

/// Quality report of a map.
#[derive(Clone, Debug, Serialize)]
pub struct MapReport {
    pub modulus: f64,
    pub cauchy_riemann_residual: f64,
    pub min_abs_dphi: f64,
    pub max_abs_dphi: f64,
    pub bilipschitz: f64,
    pub boundary_residual: f64,
    pub angle_error: f64,
}

/// Checks analyticity, distortion, boundary correspondence and angles.
pub fn verify_map(map: &AnnulusMap) -> MapReport {
    let pts = map.interior_samples(0.02);
    let h = 1e-3;
    let stencil = |f: &dyn Fn(C64) -> C64, z: C64, e: C64| {
        (-f(z + 2.0 * h * e) + 8.0 * f(z + h * e) - 8.0 * f(z - h * e) + f(z - 2.0 * h * e)) / (12.0 * h)
    };
    let phi = |z: C64| map.phi(z);
    let mut cr = 0.0f64;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut angle = 0.0f64;
    for &z in &pts {
        let fx = stencil(&phi, z, C64::new(1.0, 0.0));
        let fy = stencil(&phi, z, C64::i());
        let d = map.dphi(z);
        cr = cr.max((fx + C64::i() * fy).norm() / (2.0 * d.norm()));
        lo = lo.min(d.norm());
        hi = hi.max(d.norm());
        // images of two directions 1 rad apart
        let (e1, e2) = (C64::from_polar(1.0, 0.3), C64::from_polar(1.0, 1.3));
        let (a1, a2) = (stencil(&phi, z, e1), stencil(&phi, z, e2));
        angle = angle.max(((a2 / a1).arg() - 1.0).abs());
    }
    let mut bl = 1.0f64;
    let images: Vec<C64> = pts.iter().map(|&z| map.phi(z)).collect();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let (dz, dw) = ((pts[i] - pts[j]).norm(), (images[i] - images[j]).norm());
            bl = bl.max(dw / dz).max(dz / dw);
        }
    }
    let mut bres = 0.0f64;
    for (c, target) in [(&map.domain.outer, 1.0), (&map.domain.holes[0], map.modulus)] {
        for z in c.samples(200) {
            bres = bres.max((map.phi(z).norm() - target).abs());
        }
    }
    MapReport {
        modulus: map.modulus,
        cauchy_riemann_residual: cr,
        min_abs_dphi: lo,
        max_abs_dphi: hi,
        bilipschitz: bl,
        boundary_residual: bres,
        angle_error: angle,
    }
}

/// Map for any domain: smooth doubly-connected domains go through Nyström;
/// circular inputs with `k = 2` are converted to curves first.
pub fn annulus_map(domain: &Domain, n: usize) -> Result<AnnulusMap> {
    if domain.k() != 2 {
        return Err(Error::Unsupported(format!("k = {} (only doubly-connected domains)", domain.k())));
    }
    AnnulusMap::new(&domain.to_smooth(512)?, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Circle, CircularDomain};
    use approx::assert_abs_diff_eq;

    #[test]
    fn concentric_annulus_is_identity() {
        let d = Domain::Circular(CircularDomain::annulus(0.5).unwrap());
        let m = annulus_map(&d, 128).unwrap();
        assert_abs_diff_eq!(m.modulus, 0.5, epsilon = 1e-10);
        let z = C64::new(0.3, 0.6);
        assert!((m.phi(z) - z).norm() < 1e-10);
    }

    #[test]
    fn eccentric_annulus_matches_mobius() {
        let (c, rho) = (0.2, 0.3);
        let d = Domain::Circular(CircularDomain::new(vec![Circle::new(c, 0.0, rho)]).unwrap());
        let m = annulus_map(&d, 256).unwrap();
        let b = 1.0 + c * c - rho * rho;
        let a = (b - (b * b - 4.0 * c * c).sqrt()) / (2.0 * c);
        let t = |z: C64| (z - a) / (1.0 - a * z);
        assert_abs_diff_eq!(m.modulus, t(C64::new(c + rho, 0.0)).norm(), epsilon = 1e-10);
        for z in [C64::new(0.7, 0.1), C64::new(-0.5, -0.5), C64::new(0.2, 0.9), C64::new(0.2, 0.301)] {
            assert_abs_diff_eq!(m.phi(z).norm(), t(z).norm(), epsilon = 1e-10);
        }
    }

    #[test]
    fn confocal_ellipses() {
        let (xi1, xi2) = (0.4, 1.1);
        let ellipse = |xi: f64| {
            let pts: Vec<C64> = (0..256).map(|i| C64::new(xi, 2.0 * PI * i as f64 / 256.0).cosh()).collect();
            SmoothCurve::from_samples(&pts).unwrap()
        };
        let dom = SmoothDomain::new(ellipse(xi2), vec![ellipse(xi1)]).unwrap();
        let m = AnnulusMap::new(&dom, 256).unwrap();
        assert_abs_diff_eq!(m.modulus, (xi1 - xi2).exp(), epsilon = 1e-10);
        for (xi, eta) in [(0.5, 0.3), (0.8, 2.0), (1.05, 4.0)] {
            let z = C64::new(xi, eta).cosh();
            assert_abs_diff_eq!(m.omega(z), (xi2 - xi) / (xi2 - xi1), epsilon = 1e-10);
        }
        let rep = verify_map(&m);
        assert!(rep.cauchy_riemann_residual < 1e-8, "{rep:?}");
        assert!(rep.boundary_residual < 1e-10, "{rep:?}");
        assert!(rep.angle_error < 1e-6, "{rep:?}");
        let lr = m.modulus.ln();
        let z0 = C64::new(0.7, 2.5).cosh();
        let pulled = m.pull_back(|w| w.norm().ln() / lr, z0).unwrap();
        assert_abs_diff_eq!(pulled, (xi2 - 0.7) / (xi2 - xi1), epsilon = 1e-10);
        let z = m.inverse(m.phi(C64::new(0.9, 1.0).cosh())).unwrap();
        assert!((z - C64::new(0.9, 1.0).cosh()).norm() < 1e-9);
    }

    #[test]
    fn three_components_unsupported() {
        let d = Domain::Circular(
            CircularDomain::new(vec![Circle::new(-0.4, 0.0, 0.1), Circle::new(0.4, 0.0, 0.1)]).unwrap(),
        );
        assert!(matches!(annulus_map(&d, 64), Err(Error::Unsupported(_))));
    }

    #[test]
    fn resample_is_spectral() {
        let v: Vec<f64> = (0..32).map(|i| (2.0 * PI * i as f64 / 32.0 * 3.0).sin()).collect();
        let (f, df) = resample(&v, 4);
        for (i, (a, b)) in f.iter().zip(&df).enumerate() {
            let t = 2.0 * PI * i as f64 / 128.0;
            assert_abs_diff_eq!(*a, (3.0 * t).sin(), epsilon = 1e-12);
            assert_abs_diff_eq!(*b, 3.0 * (3.0 * t).cos(), epsilon = 1e-11);
        }
    }
}
