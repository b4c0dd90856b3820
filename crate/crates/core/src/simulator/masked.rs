//! Masked Cartesian scheme for circular domains with several holes.
//!
//! Active cells carry `(ρ, u_1, u_2)`. A neighbour outside the fluid is a wall
//! ghost: the normal velocity is mirrored and the tangential velocity scaled by
//! `(1 - Kh/2)/(1 + Kh/2)`, the staircase version of `ω = K u·n⊥`. Mass fluxes
//! only cross faces between active cells, so the total mass is conserved to
//! rounding. Time stepping is explicit RK2 under the full viscous bound.

use super::{FluidState, PhysParams, Scheme, SlipSpec, StepInfo, CFL_SAFETY, FLOOR};
use crate::geometry::MaskedGrid;
use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug)]
enum Nb {
    Cell(usize),
    Wall { normal: C64, k: f64, aperture: f64 },
}

/// Directions `+x, -x, +y, -y`.
const DIRS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

pub struct MaskedSolver {
    pub grid: MaskedGrid,
    params: PhysParams,
    rho_hat: f64,
    cells: Vec<usize>,
    nbs: Vec<[Nb; 4]>,
}

struct Cartesian {
    div: Vec<f64>,
    omega: Vec<f64>,
    friction: f64,
}

impl MaskedSolver {
    pub fn new(grid: MaskedGrid, params: PhysParams, slip: &SlipSpec) -> Result<Self> {
        let n = grid.n;
        let dom = &grid.domain;
        slip.validate(dom.k())?;
        let cells: Vec<usize> = (0..n * n).filter(|&k| grid.active[k]).collect();
        let mut nbs = vec![[Nb::Cell(0); 4]; n * n];
        for &k in &cells {
            let (ix, iy) = ((k % n) as i64, (k / n) as i64);
            let c = grid.center(ix as usize, iy as usize);
            for (d, &(dx, dy)) in DIRS.iter().enumerate() {
                let (jx, jy) = (ix + dx, iy + dy);
                let inside = jx >= 0 && jy >= 0 && jx < n as i64 && jy < n as i64;
                let m = if inside { Some(jy as usize * n + jx as usize) } else { None };
                nbs[k][d] = match m {
                    Some(m) if grid.active[m] => Nb::Cell(m),
                    _ => {
                        let mid = c + 0.5 * grid.h() * C64::new(dx as f64, dy as f64);
                        let (_, j) = dom.nearest_component(mid);
                        let th = dom.angle_on(j, mid);
                        let normal = dom.normal(j, th);
                        let aperture = (normal.re * dx as f64 + normal.im * dy as f64).abs();
                        Nb::Wall { normal, k: slip.at(j, th), aperture }
                    }
                };
            }
        }
        if cells.is_empty() {
            return Err(Error::InvalidParameter("masked grid has no active cells".into()));
        }
        Ok(Self { grid, params, rho_hat: 1.0, cells, nbs })
    }

    fn h2(&self) -> f64 {
        self.grid.h() * self.grid.h()
    }

    fn ghost(&self, u: [f64; 2], normal: C64, k: f64) -> [f64; 2] {
        let h = self.grid.h();
        let tau = C64::new(normal.im, -normal.re);
        let un = u[0] * normal.re + u[1] * normal.im;
        let ut = u[0] * tau.re + u[1] * tau.im;
        let f = (1.0 - 0.5 * k * h) / (1.0 + 0.5 * k * h);
        let g = -un * normal + f * ut * tau;
        [g.re, g.im]
    }

    fn vel(s: &FluidState, k: usize) -> [f64; 2] {
        [s.u[0][k], s.u[1][k]]
    }

    /// Velocity of neighbour `d` of cell `k` (ghost on walls).
    fn nb_vel(&self, s: &FluidState, k: usize, d: usize) -> [f64; 2] {
        match self.nbs[k][d] {
            Nb::Cell(m) => Self::vel(s, m),
            Nb::Wall { normal, k: kk, .. } => self.ghost(Self::vel(s, k), normal, kk),
        }
    }

    /// Central derivatives `[[∂x u1, ∂x u2], [∂y u1, ∂y u2]]`.
    fn grad(&self, s: &FluidState, k: usize) -> [[f64; 2]; 2] {
        let h = self.grid.h();
        let (xp, xm, yp, ym) = (self.nb_vel(s, k, 0), self.nb_vel(s, k, 1), self.nb_vel(s, k, 2), self.nb_vel(s, k, 3));
        [
            [(xp[0] - xm[0]) / (2.0 * h), (xp[1] - xm[1]) / (2.0 * h)],
            [(yp[0] - ym[0]) / (2.0 * h), (yp[1] - ym[1]) / (2.0 * h)],
        ]
    }

    fn cartesian(&self, s: &FluidState) -> Cartesian {
        let nn = self.grid.n * self.grid.n;
        let mut div = vec![0.0; nn];
        let mut omega = vec![0.0; nn];
        let mut friction = 0.0;
        let h = self.grid.h();
        for &k in &self.cells {
            let g = self.grad(s, k);
            div[k] = g[0][0] + g[1][1];
            omega[k] = g[0][1] - g[1][0];
            for d in 0..4 {
                if let Nb::Wall { normal, k: kk, aperture } = self.nbs[k][d] {
                    let (u, gh) = (Self::vel(s, k), self.nb_vel(s, k, d));
                    let f = [0.5 * (u[0] + gh[0]), 0.5 * (u[1] + gh[1])];
                    friction += kk * (f[0] * f[0] + f[1] * f[1]) * h * aperture;
                    let _ = normal;
                }
            }
        }
        Cartesian { div, omega, friction }
    }

    /// Semi-discrete right-hand side `(∂_t ρ, ∂_t u_1, ∂_t u_2)`.
    pub fn rhs(&self, s: &FluidState) -> (Vec<f64>, [Vec<f64>; 2]) {
        let nn = self.grid.n * self.grid.n;
        let h = self.grid.h();
        let p = &self.params;
        let cf = self.cartesian(s);
        let mut q = vec![0.0; nn];
        for &k in &self.cells {
            q[k] = (2.0 * p.mu + p.lambda(s.rho[k])) * cf.div[k] - p.pressure(s.rho[k]);
        }
        // neighbour value of a cell field with the wall closure of each kind
        let nb_scalar = |f: &[f64], k: usize, d: usize, wall: &dyn Fn(C64, f64) -> f64| -> f64 {
            match self.nbs[k][d] {
                Nb::Cell(m) => f[m],
                Nb::Wall { normal, k: kk, .. } => wall(normal, kk),
            }
        };
        let mut acc = [vec![0.0; nn], vec![0.0; nn]];
        for &k in &self.cells {
            let u = Self::vel(s, k);
            let q_nb = |d: usize| {
                nb_scalar(&q, k, d, &|_, _| match self.nbs[k][d ^ 1] {
                    Nb::Cell(m) => 2.0 * q[k] - q[m],
                    Nb::Wall { .. } => q[k],
                })
            };
            let w_nb = |d: usize| {
                nb_scalar(&cf.omega, k, d, &|normal, kk| {
                    let g = self.ghost(u, normal, kk);
                    let tau = C64::new(normal.im, -normal.re);
                    let wb = kk * (0.5 * (u[0] + g[0]) * tau.re + 0.5 * (u[1] + g[1]) * tau.im);
                    2.0 * wb - cf.omega[k]
                })
            };
            let dqx = (q_nb(0) - q_nb(1)) / (2.0 * h);
            let dqy = (q_nb(2) - q_nb(3)) / (2.0 * h);
            let dwx = (w_nb(0) - w_nb(1)) / (2.0 * h);
            let dwy = (w_nb(2) - w_nb(3)) / (2.0 * h);
            let g = self.grad(s, k);
            let adv = [u[0] * g[0][0] + u[1] * g[1][0], u[0] * g[0][1] + u[1] * g[1][1]];
            let nu = 2.0 * p.mu + p.lambda(s.rho[k]);
            let mut d4 = [0.0; 2];
            for (a, b) in [(0usize, 1usize), (2, 3)] {
                if let (Nb::Cell(m1), Nb::Cell(m2)) = (self.nbs[k][a], self.nbs[k][b]) {
                    if let (Nb::Cell(m3), Nb::Cell(m4)) = (self.nbs[m1][a], self.nbs[m2][b]) {
                        for c in 0..2 {
                            let v = &s.u[c];
                            d4[c] += (v[m3] - 4.0 * v[m1] + 6.0 * v[k] - 4.0 * v[m2] + v[m4]) / (4.0 * h * h);
                        }
                    }
                }
            }
            let rho = s.rho[k];
            acc[0][k] = -adv[0] + (dqx - p.mu * dwy - nu * d4[0]) / rho;
            acc[1][k] = -adv[1] + (dqy + p.mu * dwx - nu * d4[1]) / rho;
        }
        let mut drho = vec![0.0; nn];
        for &k in &self.cells {
            for d in [0usize, 2] {
                if let Nb::Cell(m) = self.nbs[k][d] {
                    let c = d / 2;
                    let v = 0.5 * (s.u[c][k] + s.u[c][m]);
                    let up = if v > 0.0 { s.rho[k] } else { s.rho[m] };
                    let flux = h * v * up;
                    drho[k] -= flux;
                    drho[m] += flux;
                }
            }
        }
        let h2 = self.h2();
        for &k in &self.cells {
            drho[k] /= self.grid.frac[k] * h2;
        }
        (drho, acc)
    }

    fn grad_sq(&self, s: &FluidState) -> Vec<f64> {
        let mut out = vec![0.0; s.rho.len()];
        for &k in &self.cells {
            let g = self.grad(s, k);
            out[k] = g.iter().flatten().map(|x| x * x).sum();
        }
        out
    }
}

impl Scheme for MaskedSolver {
    fn len(&self) -> usize {
        self.grid.n * self.grid.n
    }

    fn node(&self, k: usize) -> C64 {
        self.grid.center(k % self.grid.n, k / self.grid.n)
    }

    fn weight(&self, k: usize) -> f64 {
        if self.grid.active[k] {
            self.grid.frac[k] * self.h2()
        } else {
            0.0
        }
    }

    fn h(&self) -> f64 {
        self.grid.h()
    }

    fn rho_hat(&self) -> f64 {
        self.rho_hat
    }

    fn set_rho_hat(&mut self, rho_hat: f64) {
        self.rho_hat = rho_hat;
    }

    fn params(&self) -> &PhysParams {
        &self.params
    }

    fn velocity(&self, s: &FluidState, k: usize) -> [f64; 2] {
        Self::vel(s, k)
    }

    fn sample(&self, rho: &dyn Fn(C64) -> f64, u: &dyn Fn(C64) -> [f64; 2]) -> FluidState {
        let n = self.len();
        let mut s = FluidState { t: 0.0, rho: vec![1.0; n], u: [vec![0.0; n], vec![0.0; n]] };
        for &k in &self.cells {
            let z = self.node(k);
            let v = u(z);
            s.rho[k] = rho(z);
            s.u[0][k] = v[0];
            s.u[1][k] = v[1];
        }
        s
    }

    fn max_dt(&self, s: &FluidState) -> f64 {
        let h = self.grid.h();
        let p = &self.params;
        let (mut umax, mut cmax, mut lmax, mut rmin) = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
        for &k in &self.cells {
            umax = umax.max(s.u[0][k].hypot(s.u[1][k]));
            cmax = cmax.max(p.sound_speed(s.rho[k]));
            lmax = lmax.max(p.lambda(s.rho[k]));
            rmin = rmin.min(s.rho[k]);
        }
        let fmin = self.cells.iter().map(|&k| self.grid.frac[k]).fold(1.0, f64::min);
        CFL_SAFETY * (h * fmin / (umax + cmax)).min(h * h * rmin / (2.0 * (2.0 * p.mu + lmax)))
    }

    fn step(&self, s: &FluidState, dt: f64) -> Result<(FluidState, StepInfo)> {
        let limit = self.max_dt(s);
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-9) {
            return Err(Error::InvalidParameter(format!("dt = {dt:e} violates the CFL bound {limit:e}")));
        }
        let euler = |st: &FluidState| {
            let (dr, a) = self.rhs(st);
            let mut out = st.clone();
            out.t += dt;
            for &k in &self.cells {
                out.rho[k] += dt * dr[k];
                out.u[0][k] += dt * a[0][k];
                out.u[1][k] += dt * a[1][k];
            }
            out
        };
        let s1 = euler(s);
        let s2 = euler(&s1);
        let mut out = s.clone();
        out.t = s.t + dt;
        let mut info = StepInfo::default();
        let floor = FLOOR * self.rho_hat;
        for &k in &self.cells {
            out.rho[k] = 0.5 * (s.rho[k] + s2.rho[k]);
            if out.rho[k] < floor {
                out.rho[k] = floor;
                info.floor_events += 1;
            }
            out.u[0][k] = 0.5 * (s.u[0][k] + s2.u[0][k]);
            out.u[1][k] = 0.5 * (s.u[1][k] + s2.u[1][k]);
        }
        Ok((out, info))
    }

    fn energy(&self, s: &FluidState) -> f64 {
        let p = &self.params;
        self.cells
            .iter()
            .map(|&k| {
                let v2 = s.u[0][k].powi(2) + s.u[1][k].powi(2);
                self.weight(k) * (0.5 * s.rho[k] * v2 + p.potential(s.rho[k], self.rho_hat))
            })
            .sum()
    }

    fn dissipation(&self, s: &FluidState) -> f64 {
        let cf = self.cartesian(s);
        let p = &self.params;
        let vol: f64 = self
            .cells
            .iter()
            .map(|&k| {
                self.weight(k) * ((2.0 * p.mu + p.lambda(s.rho[k])) * cf.div[k].powi(2) + p.mu * cf.omega[k].powi(2))
            })
            .sum();
        vol + p.mu * cf.friction
    }

    fn a2(&self, s: &FluidState) -> f64 {
        let cf = self.cartesian(s);
        let g = self.grad_sq(s);
        let p = &self.params;
        let vol: f64 = self
            .cells
            .iter()
            .map(|&k| {
                let r = s.rho[k];
                self.weight(k)
                    * (p.lambda(r) * cf.div[k].powi(2)
                        + g[k]
                        + (r + 1.0).powf(p.gamma - 1.0) * (r - self.rho_hat).powi(2))
            })
            .sum();
        vol + p.mu * cf.friction
    }

    fn b2(&self, prev: &FluidState, next: &FluidState) -> f64 {
        let dt = next.t - prev.t;
        if dt.abs() < 1e-300 {
            return 0.0;
        }
        let mid = FluidState {
            t: 0.5 * (prev.t + next.t),
            rho: prev.rho.iter().zip(&next.rho).map(|(a, b)| 0.5 * (a + b)).collect(),
            u: [0, 1].map(|c| prev.u[c].iter().zip(&next.u[c]).map(|(a, b)| 0.5 * (a + b)).collect()),
        };
        self.cells
            .iter()
            .map(|&k| {
                let g = self.grad(&mid, k);
                let u = Self::vel(&mid, k);
                let a1 = (next.u[0][k] - prev.u[0][k]) / dt + u[0] * g[0][0] + u[1] * g[1][0];
                let a2 = (next.u[1][k] - prev.u[1][k]) / dt + u[0] * g[0][1] + u[1] * g[1][1];
                self.weight(k) * mid.rho[k] * (a1 * a1 + a2 * a2)
            })
            .sum()
    }

    fn grad_u_l2(&self, s: &FluidState) -> f64 {
        let g = self.grad_sq(s);
        self.cells.iter().map(|&k| self.weight(k) * g[k]).sum::<f64>().sqrt()
    }

    fn accel_sq(&self, s: &FluidState) -> f64 {
        let (_, acc) = self.rhs(s);
        self.cells.iter().map(|&k| self.weight(k) * s.rho[k] * (acc[0][k].powi(2) + acc[1][k].powi(2))).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Circle, CircularDomain};

    fn solver() -> MaskedSolver {
        let d = CircularDomain::new(vec![Circle::new(-0.4, 0.0, 0.2), Circle::new(0.4, 0.0, 0.2)]).unwrap();
        let g = MaskedGrid::new(&d, 32);
        MaskedSolver::new(g, PhysParams::new(1.0, 2.0, 2.0).unwrap(), &SlipSpec::uniform(0.5, 3)).unwrap()
    }

    #[test]
    fn rest_is_fixed_and_mass_conserved() {
        let s = solver();
        let st = s.sample(&|_| 1.0, &|_| [0.0, 0.0]);
        let (next, _) = s.step(&st, s.max_dt(&st)).unwrap();
        assert_eq!(next, FluidState { t: next.t, ..st.clone() });
        let moving = s.sample(&|z| 1.0 + 0.2 * z.re, &|z| [0.2 * z.im, -0.1 * z.re]);
        let m0 = s.mass(&moving);
        let (n2, _) = s.step(&moving, s.max_dt(&moving)).unwrap();
        assert!((s.mass(&n2) - m0).abs() / m0 < 1e-14);
    }
}
