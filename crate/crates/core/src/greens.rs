//! Neumann function `N(z, w) = Γ(z - w) + H(z, w)` on circular domains.
//!
//! `Γ = (1/2π) log|z - w|` and `H` solves `∂n H = -∂n Γ + 1/l` on `∂Ω` with
//! `l = 2π(1 + Σ r_j)`, normalised by `∮ N(·, w) dS = 0` so that `N` is
//! symmetric.
//!
//! For every source the closed-form reflections
//! `H_0 = (1/2π) Re log(1 - z w̄)` and
//! `H_j = (1/2π) Re log(1 - r_j² / ((z - b_j)(w̄ - b̄_j)))` are subtracted, so
//! the collocated remainder only sees smooth data even when `w` is close to a
//! boundary circle. Derivatives with respect to the source reuse the same
//! factorisation with differentiated data.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use crate::geometry::CircularDomain;
use crate::series::{Collocation, ImageKind, ImageSide, ImageTerm, RowKind, SeriesHarmonic};
use crate::{Error, Result, C64};

pub const DEFAULT_MODES: usize = 32;
const CACHE_CAPACITY: usize = 512;
const INV_2PI: f64 = 0.5 / PI;

/// `H(·, w)` and its source derivatives `∂_{w1} H`, `∂_{w2} H`.
#[derive(Clone, Debug)]
pub struct GreenSource {
    pub w: C64,
    pub h: SeriesHarmonic,
    pub dh: [SeriesHarmonic; 2],
}

/// Fundamental solution `Γ(z - w) = (1/2π) log|z - w|`.
pub fn gamma(z: C64, w: C64) -> f64 {
    INV_2PI * (z - w).norm().ln()
}

/// `∇_z Γ` as `f' = Γ_x - i Γ_y`.
pub fn gamma_fprime(z: C64, w: C64) -> C64 {
    INV_2PI / (z - w)
}

struct Cache {
    map: HashMap<(i64, i64), (Arc<GreenSource>, u64)>,
    tick: u64,
}

pub struct NeumannGreen {
    domain: CircularDomain,
    coll: Collocation,
    l: f64,
    cache: Mutex<Cache>,
}

/// Unit vectors `e_1 = 1`, `e_2 = i` as complex numbers.
const E: [C64; 2] = [C64 { re: 1.0, im: 0.0 }, C64 { re: 0.0, im: 1.0 }];

impl NeumannGreen {
    pub fn new(domain: &CircularDomain, modes: usize) -> Result<Self> {
        Ok(Self {
            domain: domain.clone(),
            coll: Collocation::new(domain, modes, RowKind::NormalDerivative)?,
            l: domain.boundary_length(),
            cache: Mutex::new(Cache { map: HashMap::new(), tick: 0 }),
        })
    }

    pub fn domain(&self) -> &CircularDomain {
        &self.domain
    }

    /// The Neumann constant `l = 2π(1 + Σ r_j)`.
    pub fn l(&self) -> f64 {
        self.l
    }

    /// Reflection of the source in component `j` and its source derivatives.
    pub fn image(&self, j: usize, w: C64) -> (ImageTerm, [ImageTerm; 2]) {
        let c = self.domain.circle(j);
        let (side, s, ds_dwbar) = if j == 0 {
            (ImageSide::Interior, w.conj(), C64::new(1.0, 0.0))
        } else {
            let d = w.conj() - c.center.conj();
            (ImageSide::Exterior, c.radius / d, -c.radius / (d * d))
        };
        let base = ImageTerm { circle: c, side, kind: ImageKind::Log, s, coef: C64::new(INV_2PI, 0.0) };
        // ∂s/∂w1 = ∂s/∂w̄, ∂s/∂w2 = -i ∂s/∂w̄; d/ds log(1 - ξ s) = -ξ/(1 - ξ s)
        let d = |e: C64| ImageTerm { kind: ImageKind::Dlog, coef: -INV_2PI * ds_dwbar * e.conj(), ..base };
        (base, [d(E[0]), d(E[1])])
    }

    fn check_source(&self, w: C64) -> Result<()> {
        if !self.domain.contains(w) {
            return Err(Error::OutsideDomain([w.re, w.im]));
        }
        if self.domain.nearest_component(w).0 < 1e-6 {
            return Err(Error::SourceOnBoundary([w.re, w.im]));
        }
        Ok(())
    }

    /// Solves for `H(·, w)` and its source derivatives (uncached).
    pub fn solve_source(&self, w: C64) -> Result<GreenSource> {
        self.check_source(w)?;
        let k = self.domain.k();
        let mut s = SeriesHarmonic::default();
        let mut ds = [SeriesHarmonic::default(), SeriesHarmonic::default()];
        for j in 0..k {
            let (t, dt) = self.image(j, w);
            s.images.push(t);
            ds[0].images.push(dt[0]);
            ds[1].images.push(dt[1]);
        }
        let inv_l = 1.0 / self.l;
        let n_rows = self.coll.points.len();
        let mut rhs = vec![0.0; n_rows];
        let mut rhs_d = [vec![0.0; n_rows], vec![0.0; n_rows]];
        for (row, &(j, t, z)) in self.coll.points.iter().enumerate() {
            let n = self.domain.normal(j, t);
            let dz = 1.0 / (z - w);
            rhs[row] = -(n * (INV_2PI * dz + s.fprime(z))).re + inv_l;
            for i in 0..2 {
                rhs_d[i][row] = -(n * (INV_2PI * E[i] * dz * dz + ds[i].fprime(z))).re;
            }
        }
        let total_len = self.l;
        let gamma_mean: f64 = self.domain.holes().iter().map(|h| h.radius * (w - h.center).norm().ln()).sum();
        let mut h = s;
        h.add_scaled(1.0, &self.coll.solve_rows(&rhs));
        h.constant -= (gamma_mean + h.boundary_integral(&self.domain)) / total_len;
        let dh = [0, 1].map(|i| {
            let mut d = ds[i].clone();
            d.add_scaled(1.0, &self.coll.solve_rows(&rhs_d[i]));
            let dgamma: f64 = self.domain.holes().iter().map(|hh| hh.radius * (E[i] / (w - hh.center)).re).sum();
            d.constant -= (dgamma + d.boundary_integral(&self.domain)) / total_len;
            d
        });
        Ok(GreenSource { w, h, dh })
    }

    /// Cached source solve, keyed by `w` quantised to `1e-9`.
    pub fn source(&self, w: C64) -> Result<Arc<GreenSource>> {
        let key = ((w.re * 1e9).round() as i64, (w.im * 1e9).round() as i64);
        {
            let mut c = self.cache.lock().unwrap();
            c.tick += 1;
            let tick = c.tick;
            if let Some(e) = c.map.get_mut(&key) {
                e.1 = tick;
                return Ok(e.0.clone());
            }
        }
        let src = Arc::new(self.solve_source(w)?);
        let mut c = self.cache.lock().unwrap();
        if c.map.len() >= CACHE_CAPACITY {
            if let Some(old) = c.map.iter().min_by_key(|e| e.1 .1).map(|e| *e.0) {
                c.map.remove(&old);
            }
        }
        let tick = c.tick;
        c.map.insert(key, (src.clone(), tick));
        Ok(src)
    }

    /// `N(z, w)`.
    pub fn eval_n(&self, z: C64, w: C64) -> Result<f64> {
        Ok(gamma(z, w) + self.source(w)?.h.value(z))
    }

    /// `∇_z N(z, w)`.
    pub fn eval_grad_n(&self, z: C64, w: C64) -> Result<[f64; 2]> {
        let d = gamma_fprime(z, w) + self.source(w)?.h.fprime(z);
        Ok([d.re, -d.im])
    }

    /// `∇_z² N(z, w)`.
    pub fn eval_hess_n(&self, z: C64, w: C64) -> Result<[[f64; 2]; 2]> {
        let g2 = -INV_2PI / ((z - w) * (z - w));
        let d2 = g2 + self.source(w)?.h.eval(z).2;
        Ok([[d2.re, -d2.im], [-d2.im, -d2.re]])
    }

    /// Hold-out misfit of `∂n H = -∂n Γ + 1/l` for one source.
    pub fn neumann_residual(&self, w: C64) -> Result<f64> {
        let src = self.source(w)?;
        let per = 8 * self.coll.basis.modes;
        let mut worst = 0.0f64;
        for j in 0..self.domain.k() {
            let c = self.domain.circle(j);
            for i in 0..per {
                let t = 2.0 * PI * (i as f64 + 0.5) / per as f64;
                let z = c.point(t);
                let n = self.domain.normal(j, t);
                let r = (n * (gamma_fprime(z, w) + src.h.fprime(z))).re - 1.0 / self.l;
                worst = worst.max(r.abs());
            }
        }
        Ok(worst)
    }

    /// Principal part `N_j = Γ + H_j` near component `j`.
    pub fn principal(&self, j: usize, z: C64, w: C64) -> f64 {
        let t = SeriesHarmonic { images: vec![self.image(j, w).0], ..Default::default() };
        gamma(z, w) + t.value(z)
    }

    /// Gradient in `z` of the remainder `R_j = N - N_j`.
    pub fn remainder_grad(&self, j: usize, z: C64, w: C64) -> Result<[f64; 2]> {
        let t = SeriesHarmonic { images: vec![self.image(j, w).0], ..Default::default() };
        let d = self.source(w)?.h.fprime(z) - t.fprime(z);
        Ok([d.re, -d.im])
    }

    /// Tangential generator `τ = i w` (outer) or `i (w - b_j)` (hole `j`).
    pub fn tau(&self, j: usize, w: C64) -> C64 {
        C64::i() * (w - self.domain.circle(j).center)
    }

    /// `τ ∂_z H + τ̄ ∂_w̄ H`.
    pub fn cancellation_first(&self, j: usize, z: C64, w: C64) -> Result<C64> {
        let src = self.source(w)?;
        let tau = self.tau(j, w);
        let dz = 0.5 * src.h.fprime(z);
        let dwbar = 0.5 * (C64::new(src.dh[0].value(z), 0.0) + C64::i() * src.dh[1].value(z));
        Ok(tau * dz + tau.conj() * dwbar)
    }

    /// `(τ ∂_z + τ̄ ∂_w̄) ∂_z H`.
    pub fn cancellation_second(&self, j: usize, z: C64, w: C64) -> Result<C64> {
        let src = self.source(w)?;
        let tau = self.tau(j, w);
        let dzz = 0.5 * src.h.eval(z).2;
        let dwbar_dz = 0.25 * (src.dh[0].fprime(z) + C64::i() * src.dh[1].fprime(z));
        Ok(tau * dzz + tau.conj() * dwbar_dz)
    }

    /// `|Σ_s (τ_s ∂_{x_s} + τ_s ∂_{y_s}) ∂_{y_p} N(x, y)|` with `τ` the unit
    /// tangent `n⊥` at the projection of the source `x` onto component `j`.
    /// `Γ` drops out exactly, so only `H` is differentiated.
    pub fn cancellation_second_order(&self, j: usize, x: C64, y: C64, p: usize) -> Result<f64> {
        if self.domain.nearest_component(x).0 > self.domain.gap() / 4.0 + 1e-12 && self.domain.k() > 1 {
            return Err(Error::InvalidParameter("source is outside the d/4 band".into()));
        }
        let xj = self.domain.project(j, x)?;
        let theta = self.domain.angle_on(j, xj);
        let tau = self.domain.boundary_frame(j, theta).normal_perp;
        let src = self.source(x)?;
        let hess = src.h.hessian(y);
        let mixed = [src.dh[0].gradient(y), src.dh[1].gradient(y)];
        let t = [tau.re, tau.im];
        let v: f64 = (0..2).map(|s| t[s] * (mixed[s][p] + hess[s][p])).sum();
        Ok(v.abs())
    }
}

/// Near-boundary ladder `δ_i = d/4, d/8, …, d/64` along the inward normal
/// at angle `theta` on component `j`.
pub fn ladder_sources(domain: &CircularDomain, j: usize, theta: f64) -> Vec<(f64, C64)> {
    let d = if domain.k() > 1 { domain.gap() } else { 1.0 };
    let f = domain.boundary_frame(j, theta);
    (2..=6)
        .map(|e| {
            let delta = d / 2f64.powi(e);
            (delta, f.point - delta * f.normal)
        })
        .collect()
}

/// Boundary sample points refined around the projection of `w`, over which
/// sup-norms in `z` are taken (subharmonic quantities peak on `∂Ω`).
pub fn sup_samples(domain: &CircularDomain, w: C64) -> Vec<C64> {
    let mut pts = Vec::new();
    for j in 0..domain.k() {
        let c = domain.circle(j);
        for i in 0..1024 {
            pts.push(c.point(2.0 * PI * i as f64 / 1024.0));
        }
        let dist = domain.dist_to(j, w).max(1e-9);
        let t0 = domain.angle_on(j, w);
        for i in -200i32..=200 {
            pts.push(c.point(t0 + i as f64 * 0.05 * dist / c.radius));
        }
    }
    pts
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Sup-norm ladders near component `j`: returns `(δ, sup|∇H|, sup|∇²H|,
/// sup|combo1|, sup|combo2|, sup|∇R_j|)` per rung.
pub fn ladder(green: &NeumannGreen, j: usize, theta: f64) -> Result<Vec<[f64; 6]>> {
    let d = green.domain();
    let mut out = Vec::new();
    for (delta, w) in ladder_sources(d, j, theta) {
        let src = green.source(w)?;
        let mut m = [delta, 0.0, 0.0, 0.0, 0.0, 0.0];
        for z in sup_samples(d, w) {
            let (_, d1, d2) = src.h.eval(z);
            m[1] = m[1].max(d1.norm());
            m[2] = m[2].max(d2.norm());
            m[3] = m[3].max(green.cancellation_first(j, z, w)?.norm());
            m[4] = m[4].max(green.cancellation_second(j, z, w)?.norm());
            let r = green.remainder_grad(j, z, w)?;
            m[5] = m[5].max(r[0].hypot(r[1]));
        }
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Circle;
    use approx::assert_abs_diff_eq;

    #[test]
    fn disc_reduces_to_reflection() {
        let g = NeumannGreen::new(&CircularDomain::disc(), 16).unwrap();
        let v = g.eval_n(C64::new(0.5, 0.0), C64::new(-0.5, 0.0)).unwrap();
        assert_abs_diff_eq!(v, INV_2PI * 1.25f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn symmetric_on_three_holes() {
        let d = CircularDomain::new(vec![Circle::new(-0.4, 0.0, 0.15), Circle::new(0.4, 0.1, 0.12)]).unwrap();
        let g = NeumannGreen::new(&d, 32).unwrap();
        let (a, b) = (C64::new(0.05, 0.5), C64::new(-0.3, -0.4));
        assert_abs_diff_eq!(g.eval_n(a, b).unwrap(), g.eval_n(b, a).unwrap(), epsilon = 1e-8);
    }

    #[test]
    fn source_derivative_matches_difference() {
        let d = CircularDomain::annulus(0.4).unwrap();
        let g = NeumannGreen::new(&d, 32).unwrap();
        let (z, w) = (C64::new(0.1, 0.7), C64::new(0.5, -0.2));
        let s = g.solve_source(w).unwrap();
        let eps = 1e-5;
        for i in 0..2 {
            let hp = g.solve_source(w + eps * E[i]).unwrap().h.value(z);
            let hm = g.solve_source(w - eps * E[i]).unwrap().h.value(z);
            assert_abs_diff_eq!(s.dh[i].value(z), (hp - hm) / (2.0 * eps), epsilon = 1e-7);
        }
    }

    #[test]
    fn boundary_source_refused() {
        let g = NeumannGreen::new(&CircularDomain::annulus(0.5).unwrap(), 16).unwrap();
        assert!(matches!(g.source(C64::new(1.0 - 1e-8, 0.0)), Err(Error::SourceOnBoundary(_))));
        assert!(matches!(g.source(C64::new(0.2, 0.0)), Err(Error::OutsideDomain(_))));
    }
}
