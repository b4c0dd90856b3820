//! Polar finite-volume scheme on a concentric annulus `r < R < 1`.
//!
//! Ghost rows close the walls: `u_R` is odd across each wall, and the `u_θ`
//! ghost makes the face vorticity satisfy `ω = K u·n⊥` (`u·n⊥ = u_θ` on the
//! inner circle, `-u_θ` on the outer one). Time stepping is SSP-RK2 whose
//! velocity increments pass through `(I - Δt c Δ_h)⁻¹`, solved with an
//! angular FFT and a radial tridiagonal sweep.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use super::{FluidState, PhysParams, Scheme, SlipSpec, StepInfo, CFL_SAFETY, FLOOR};
use crate::geometry::PolarGrid;
use crate::{Error, Result, C64};

/// Cell divergence, vorticity and the wall data derived from the ghosts.
#[derive(Clone, Debug)]
pub struct PolarFields {
    pub div: Vec<f64>,
    pub omega: Vec<f64>,
    /// `u_θ` at the inner and outer walls.
    pub ut_in: Vec<f64>,
    pub ut_out: Vec<f64>,
    /// Wall vorticity imposed by the slip law.
    pub omega_in: Vec<f64>,
    pub omega_out: Vec<f64>,
}

/// Right-hand side of the semi-discrete system.
#[derive(Clone, Debug)]
pub struct PolarRhs {
    pub drho: Vec<f64>,
    /// Accelerations `∂_t u_R`, `∂_t u_θ`.
    pub acc: [Vec<f64>; 2],
    /// Force density `ρ ∂_t u` (momentum residual of a stationary state).
    pub force: [Vec<f64>; 2],
    pub fields: PolarFields,
}

pub struct PolarSolver {
    pub grid: PolarGrid,
    params: PhysParams,
    k_in: Vec<f64>,
    k_out: Vec<f64>,
    rho_hat: f64,
    pub muscl: bool,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

impl PolarSolver {
    pub fn new(grid: PolarGrid, params: PhysParams, slip: &SlipSpec, muscl: bool) -> Result<Self> {
        if grid.nr < 4 || grid.nt < 8 {
            return Err(Error::InvalidParameter("polar grid needs nr >= 4 and nt >= 8".into()));
        }
        slip.validate(2)?;
        let k_in = (0..grid.nt).map(|j| slip.at(1, grid.angle(j))).collect();
        let k_out = (0..grid.nt).map(|j| slip.at(0, grid.angle(j))).collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            fwd: planner.plan_fft_forward(grid.nt),
            inv: planner.plan_fft_inverse(grid.nt),
            grid,
            params,
            k_in,
            k_out,
            rho_hat: 1.0,
            muscl,
        })
    }

    fn rad(&self, i: isize) -> f64 {
        self.grid.r_in + (i as f64 + 0.5) * self.grid.hr()
    }

    /// Velocity with one ghost row on each side, row `i` stored at `i + 1`.
    fn extend(&self, s: &FluidState) -> [Vec<f64>; 2] {
        let (nr, nt, hr) = (self.grid.nr, self.grid.nt, self.grid.hr());
        let mut ur = vec![0.0; (nr + 2) * nt];
        let mut ut = vec![0.0; (nr + 2) * nt];
        ur[nt..(nr + 1) * nt].copy_from_slice(&s.u[0]);
        ut[nt..(nr + 1) * nt].copy_from_slice(&s.u[1]);
        let (r0, rg0) = (self.rad(0), self.rad(-1));
        let (rn, rgn) = (self.rad(nr as isize - 1), self.rad(nr as isize));
        let rin = self.grid.r_in;
        for j in 0..nt {
            ur[j] = -s.u[0][j];
            ur[(nr + 1) * nt + j] = -s.u[0][(nr - 1) * nt + j];
            let (ki, ko) = (self.k_in[j], self.k_out[j]);
            ut[j] = s.u[1][j] * (r0 - 0.5 * ki * rin * hr) / (rg0 + 0.5 * ki * rin * hr);
            ut[(nr + 1) * nt + j] = s.u[1][(nr - 1) * nt + j] * (rn - 0.5 * ko * hr) / (rgn + 0.5 * ko * hr);
        }
        [ur, ut]
    }

    fn fields_ext(&self, ext: &[Vec<f64>; 2]) -> PolarFields {
        let (nr, nt, hr, ht) = (self.grid.nr, self.grid.nt, self.grid.hr(), self.grid.ht());
        let e = |i: isize, j: usize| ((i + 1) as usize) * nt + j;
        let [ur, ut] = ext;
        let mut div = vec![0.0; nr * nt];
        let mut omega = vec![0.0; nr * nt];
        for i in 0..nr as isize {
            let (r, rp, rm) = (self.rad(i), self.rad(i + 1), self.rad(i - 1));
            for j in 0..nt {
                let (jp, jm) = ((j + 1) % nt, (j + nt - 1) % nt);
                let k = i as usize * nt + j;
                div[k] = (rp * ur[e(i + 1, j)] - rm * ur[e(i - 1, j)]) / (2.0 * hr * r)
                    + (ut[e(i, jp)] - ut[e(i, jm)]) / (2.0 * ht * r);
                omega[k] = (rp * ut[e(i + 1, j)] - rm * ut[e(i - 1, j)]) / (2.0 * hr * r)
                    - (ur[e(i, jp)] - ur[e(i, jm)]) / (2.0 * ht * r);
            }
        }
        let ut_in: Vec<f64> = (0..nt).map(|j| 0.5 * (ut[e(-1, j)] + ut[e(0, j)])).collect();
        let ut_out: Vec<f64> = (0..nt).map(|j| 0.5 * (ut[e(nr as isize, j)] + ut[e(nr as isize - 1, j)])).collect();
        let omega_in = (0..nt).map(|j| self.k_in[j] * ut_in[j]).collect();
        let omega_out = (0..nt).map(|j| -self.k_out[j] * ut_out[j]).collect();
        PolarFields { div, omega, ut_in, ut_out, omega_in, omega_out }
    }

    pub fn fields(&self, s: &FluidState) -> PolarFields {
        self.fields_ext(&self.extend(s))
    }

    /// Semi-discrete right-hand side.
    pub fn rhs(&self, s: &FluidState) -> PolarRhs {
        let (nr, nt, hr, ht) = (self.grid.nr, self.grid.nt, self.grid.hr(), self.grid.ht());
        let ext = self.extend(s);
        let f = self.fields_ext(&ext);
        let e = |i: isize, j: usize| ((i + 1) as usize) * nt + j;
        let p = &self.params;
        let q: Vec<f64> =
            (0..nr * nt).map(|k| (2.0 * p.mu + p.lambda(s.rho[k])) * f.div[k] - p.pressure(s.rho[k])).collect();
        let nu: Vec<f64> = s.rho.iter().map(|&r| 2.0 * p.mu + p.lambda(r)).collect();
        let [ur, ut] = &ext;
        let mut out = vec![[0.0f64; 4]; nr * nt];
        out.par_chunks_mut(nt).enumerate().for_each(|(iu, row)| {
            let i = iu as isize;
            let r = self.rad(i);
            for (j, o) in row.iter_mut().enumerate() {
                let (jp, jm) = ((j + 1) % nt, (j + nt - 1) % nt);
                let k = iu * nt + j;
                let at = |i: usize, j: usize| i * nt + j;
                let dq_r = if iu == 0 {
                    (-3.0 * q[at(0, j)] + 4.0 * q[at(1, j)] - q[at(2, j)]) / (2.0 * hr)
                } else if iu == nr - 1 {
                    (3.0 * q[at(nr - 1, j)] - 4.0 * q[at(nr - 2, j)] + q[at(nr - 3, j)]) / (2.0 * hr)
                } else {
                    (q[at(iu + 1, j)] - q[at(iu - 1, j)]) / (2.0 * hr)
                };
                let dq_t = (q[at(iu, jp)] - q[at(iu, jm)]) / (2.0 * ht * r);
                let w = &f.omega;
                let dw_r = if iu == 0 {
                    (-4.0 / 3.0 * f.omega_in[j] + w[at(0, j)] + w[at(1, j)] / 3.0) / hr
                } else if iu == nr - 1 {
                    (4.0 / 3.0 * f.omega_out[j] - w[at(nr - 1, j)] - w[at(nr - 2, j)] / 3.0) / hr
                } else {
                    (w[at(iu + 1, j)] - w[at(iu - 1, j)]) / (2.0 * hr)
                };
                let dw_t = (w[at(iu, jp)] - w[at(iu, jm)]) / (2.0 * ht * r);
                let (vr, vt) = (ur[e(i, j)], ut[e(i, j)]);
                let adv_r = vr * (ur[e(i + 1, j)] - ur[e(i - 1, j)]) / (2.0 * hr)
                    + vt / r * (ur[e(i, jp)] - ur[e(i, jm)]) / (2.0 * ht)
                    - vt * vt / r;
                let adv_t = vr * (ut[e(i + 1, j)] - ut[e(i - 1, j)]) / (2.0 * hr)
                    + vt / r * (ut[e(i, jp)] - ut[e(i, jm)]) / (2.0 * ht)
                    + vr * vt / r;
                // fourth-difference damping of odd-even modes, O(h²) consistent
                let d4 = |v: &[f64]| {
                    let ang = (v[e(i, (j + 2) % nt)] - 4.0 * v[e(i, jp)] + 6.0 * v[e(i, j)] - 4.0 * v[e(i, jm)]
                        + v[e(i, (j + nt - 2) % nt)])
                        / (4.0 * r * r * ht * ht);
                    let rad = if iu >= 1 && iu + 2 <= nr {
                        (v[e(i + 2, j)] - 4.0 * v[e(i + 1, j)] + 6.0 * v[e(i, j)] - 4.0 * v[e(i - 1, j)]
                            + v[e(i - 2, j)])
                            / (4.0 * hr * hr)
                    } else {
                        0.0
                    };
                    ang + rad
                };
                let rho = s.rho[k];
                let fr = dq_r - p.mu * dw_t - nu[k] * d4(ur);
                let ft = dq_t + p.mu * dw_r - nu[k] * d4(ut);
                o[0] = fr - rho * adv_r;
                o[1] = ft - rho * adv_t;
                o[2] = o[0] / rho;
                o[3] = o[1] / rho;
            }
        });
        let drho = self.continuity(s);
        let force = [out.iter().map(|o| o[0]).collect(), out.iter().map(|o| o[1]).collect()];
        let acc = [out.iter().map(|o| o[2]).collect(), out.iter().map(|o| o[3]).collect()];
        PolarRhs { drho, acc, force, fields: f }
    }

    /// `-div(ρu)` by conservative upwind fluxes; no flux through the walls.
    pub fn continuity(&self, s: &FluidState) -> Vec<f64> {
        let (nr, nt, hr, ht) = (self.grid.nr, self.grid.nt, self.grid.hr(), self.grid.ht());
        let at = |i: usize, j: usize| i * nt + j;
        let rho = &s.rho;
        let slope_r = |i: usize, j: usize| {
            if !self.muscl || i == 0 || i == nr - 1 {
                0.0
            } else {
                minmod(rho[at(i, j)] - rho[at(i - 1, j)], rho[at(i + 1, j)] - rho[at(i, j)])
            }
        };
        let slope_t = |i: usize, j: usize| {
            if !self.muscl {
                0.0
            } else {
                minmod(rho[at(i, j)] - rho[at(i, (j + nt - 1) % nt)], rho[at(i, (j + 1) % nt)] - rho[at(i, j)])
            }
        };
        let mut net = vec![0.0; nr * nt];
        for i in 0..nr - 1 {
            let rf = self.grid.r_in + (i + 1) as f64 * hr;
            for j in 0..nt {
                let v = 0.5 * (s.u[0][at(i, j)] + s.u[0][at(i + 1, j)]);
                let up = if v > 0.0 {
                    rho[at(i, j)] + 0.5 * slope_r(i, j)
                } else {
                    rho[at(i + 1, j)] - 0.5 * slope_r(i + 1, j)
                };
                let flux = rf * ht * v * up;
                net[at(i, j)] -= flux;
                net[at(i + 1, j)] += flux;
            }
        }
        for i in 0..nr {
            for j in 0..nt {
                let jp = (j + 1) % nt;
                let v = 0.5 * (s.u[1][at(i, j)] + s.u[1][at(i, jp)]);
                let up =
                    if v > 0.0 { rho[at(i, j)] + 0.5 * slope_t(i, j) } else { rho[at(i, jp)] - 0.5 * slope_t(i, jp) };
                let flux = hr * v * up;
                net[at(i, j)] -= flux;
                net[at(i, jp)] += flux;
            }
        }
        for i in 0..nr {
            let a = self.grid.cell_area(i);
            for j in 0..nt {
                net[at(i, j)] /= a;
            }
        }
        net
    }

    /// Solves `(I - a Δ_h) x = b` in place; `odd` selects an odd (Dirichlet)
    /// wall reflection, otherwise even (Neumann).
    fn smooth(&self, b: &mut [f64], a: f64, odd: bool) {
        let (nr, nt, hr, ht) = (self.grid.nr, self.grid.nt, self.grid.hr(), self.grid.ht());
        let mut modes: Vec<Vec<C64>> = b
            .chunks(nt)
            .map(|row| {
                let mut v: Vec<C64> = row.iter().map(|&x| C64::new(x, 0.0)).collect();
                self.fwd.process(&mut v);
                v
            })
            .collect();
        let s = if odd { -1.0 } else { 1.0 };
        let mut lower = vec![0.0; nr];
        let mut diag = vec![0.0; nr];
        let mut upper = vec![0.0; nr];
        let mut cp = vec![0.0; nr];
        let mut dp = vec![C64::new(0.0, 0.0); nr];
        for m in 0..nt {
            let lam = 4.0 / (ht * ht) * (std::f64::consts::PI * m as f64 / nt as f64).sin().powi(2);
            for i in 0..nr {
                let r = self.rad(i as isize);
                let (rp, rm) = (r + 0.5 * hr, r - 0.5 * hr);
                let cl = a * rm / (r * hr * hr);
                let cu = a * rp / (r * hr * hr);
                lower[i] = -cl;
                upper[i] = -cu;
                diag[i] = 1.0 + cl + cu + a * lam / (r * r);
                if i == 0 {
                    diag[i] -= cl * s;
                    lower[i] = 0.0;
                }
                if i == nr - 1 {
                    diag[i] -= cu * s;
                    upper[i] = 0.0;
                }
            }
            // Thomas sweep
            cp[0] = upper[0] / diag[0];
            dp[0] = modes[0][m] / diag[0];
            for i in 1..nr {
                let den = diag[i] - lower[i] * cp[i - 1];
                cp[i] = upper[i] / den;
                dp[i] = (modes[i][m] - lower[i] * dp[i - 1]) / den;
            }
            modes[nr - 1][m] = dp[nr - 1];
            for i in (0..nr - 1).rev() {
                modes[i][m] = dp[i] - cp[i] * modes[i + 1][m];
            }
        }
        let scale = 1.0 / nt as f64;
        for (row, v) in b.chunks_mut(nt).zip(modes.iter_mut()) {
            self.inv.process(v);
            for (x, c) in row.iter_mut().zip(v.iter()) {
                *x = c.re * scale;
            }
        }
    }

    fn stage(&self, s: &FluidState, dt: f64, a: f64) -> FluidState {
        let r = self.rhs(s);
        let mut du: [Vec<f64>; 2] =
            [r.acc[0].iter().map(|x| x * dt).collect(), r.acc[1].iter().map(|x| x * dt).collect()];
        self.smooth(&mut du[0], a, true);
        self.smooth(&mut du[1], a, false);
        FluidState {
            t: s.t + dt,
            rho: s.rho.iter().zip(&r.drho).map(|(x, d)| x + dt * d).collect(),
            u: [
                s.u[0].iter().zip(&du[0]).map(|(x, d)| x + d).collect(),
                s.u[1].iter().zip(&du[1]).map(|(x, d)| x + d).collect(),
            ],
        }
    }

    /// Boundary integral `∮ K |u|² dS`.
    fn wall_friction(&self, f: &PolarFields) -> f64 {
        let ht = self.grid.ht();
        (0..self.grid.nt)
            .map(|j| self.k_in[j] * f.ut_in[j].powi(2) * self.grid.r_in * ht + self.k_out[j] * f.ut_out[j].powi(2) * ht)
            .sum()
    }

    /// Squared velocity-gradient density per cell.
    fn grad_sq(&self, s: &FluidState) -> Vec<f64> {
        let (nr, nt, hr, ht) = (self.grid.nr, self.grid.nt, self.grid.hr(), self.grid.ht());
        let [ur, ut] = self.extend(s);
        let e = |i: isize, j: usize| ((i + 1) as usize) * nt + j;
        let mut g = vec![0.0; nr * nt];
        for i in 0..nr as isize {
            let r = self.rad(i);
            for j in 0..nt {
                let (jp, jm) = ((j + 1) % nt, (j + nt - 1) % nt);
                let (vr, vt) = (ur[e(i, j)], ut[e(i, j)]);
                let a = (ur[e(i + 1, j)] - ur[e(i - 1, j)]) / (2.0 * hr);
                let b = (ur[e(i, jp)] - ur[e(i, jm)]) / (2.0 * ht * r) - vt / r;
                let c = (ut[e(i + 1, j)] - ut[e(i - 1, j)]) / (2.0 * hr);
                let d = (ut[e(i, jp)] - ut[e(i, jm)]) / (2.0 * ht * r) + vr / r;
                g[i as usize * nt + j] = a * a + b * b + c * c + d * d;
            }
        }
        g
    }

    /// `ρ u̇` (polar components) from two snapshots: time difference plus
    /// second-order upwind advection at the midpoint state.
    pub fn material_derivative(&self, prev: &FluidState, next: &FluidState) -> Result<[Vec<f64>; 2]> {
        if prev.rho.len() != self.grid.len() || next.rho.len() != self.grid.len() {
            return Err(Error::InvalidParameter("snapshot does not match the grid".into()));
        }
        let dt = next.t - prev.t;
        if dt.abs() < 1e-300 {
            return Err(Error::InvalidParameter("snapshots at identical times".into()));
        }
        let (nr, nt, hr, ht) = (self.grid.nr, self.grid.nt, self.grid.hr(), self.grid.ht());
        let mid = FluidState {
            t: 0.5 * (prev.t + next.t),
            rho: prev.rho.iter().zip(&next.rho).map(|(a, b)| 0.5 * (a + b)).collect(),
            u: [0, 1].map(|c| prev.u[c].iter().zip(&next.u[c]).map(|(a, b)| 0.5 * (a + b)).collect()),
        };
        let ext = self.extend(&mid);
        let e = |i: isize, j: usize| ((i + 1) as usize) * nt + j;
        let [ur, ut] = &ext;
        let mut out = [vec![0.0; nr * nt], vec![0.0; nr * nt]];
        for i in 0..nr as isize {
            let r = self.rad(i);
            for j in 0..nt {
                let k = i as usize * nt + j;
                let (vr, vt) = (ur[e(i, j)], ut[e(i, j)]);
                let drad = |f: &[f64]| {
                    if vr > 0.0 && i >= 1 {
                        (3.0 * f[e(i, j)] - 4.0 * f[e(i - 1, j)] + f[e(i - 2, j)]) / (2.0 * hr)
                    } else if vr < 0.0 && i + 2 <= nr as isize {
                        (-3.0 * f[e(i, j)] + 4.0 * f[e(i + 1, j)] - f[e(i + 2, j)]) / (2.0 * hr)
                    } else {
                        (f[e(i + 1, j)] - f[e(i - 1, j)]) / (2.0 * hr)
                    }
                };
                let dang = |f: &[f64]| {
                    let (j1, j2) =
                        if vt > 0.0 { ((j + nt - 1) % nt, (j + nt - 2) % nt) } else { ((j + 1) % nt, (j + 2) % nt) };
                    let sgn = if vt > 0.0 { 1.0 } else { -1.0 };
                    sgn * (3.0 * f[e(i, j)] - 4.0 * f[e(i, j1)] + f[e(i, j2)]) / (2.0 * ht)
                };
                let adv_r = vr * drad(ur) + vt / r * dang(ur) - vt * vt / r;
                let adv_t = vr * drad(ut) + vt / r * dang(ut) + vr * vt / r;
                out[0][k] = mid.rho[k] * ((next.u[0][k] - prev.u[0][k]) / dt + adv_r);
                out[1][k] = mid.rho[k] * ((next.u[1][k] - prev.u[1][k]) / dt + adv_t);
            }
        }
        Ok(out)
    }

    /// Effective viscous flux `(2μ+λ)div u - (P - P̄)` and vorticity.
    pub fn effective_flux(&self, s: &FluidState) -> (Vec<f64>, Vec<f64>) {
        let f = self.fields(s);
        let p = &self.params;
        let pbar = (0..self.grid.len()).map(|k| self.weight(k) * p.pressure(s.rho[k])).sum::<f64>() / self.area();
        let flux = (0..self.grid.len())
            .map(|k| (2.0 * p.mu + p.lambda(s.rho[k])) * f.div[k] - (p.pressure(s.rho[k]) - pbar))
            .collect();
        (flux, f.omega)
    }

    pub fn k_walls(&self) -> (&[f64], &[f64]) {
        (&self.k_in, &self.k_out)
    }
}

impl Scheme for PolarSolver {
    fn len(&self) -> usize {
        self.grid.len()
    }

    fn node(&self, k: usize) -> C64 {
        self.grid.node(k / self.grid.nt, k % self.grid.nt)
    }

    fn weight(&self, k: usize) -> f64 {
        self.grid.cell_area(k / self.grid.nt)
    }

    fn h(&self) -> f64 {
        self.grid.hr()
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
        let th = self.grid.angle(k % self.grid.nt);
        let (c, sn) = (th.cos(), th.sin());
        [s.u[0][k] * c - s.u[1][k] * sn, s.u[0][k] * sn + s.u[1][k] * c]
    }

    fn sample(&self, rho: &dyn Fn(C64) -> f64, u: &dyn Fn(C64) -> [f64; 2]) -> FluidState {
        let n = self.grid.len();
        let mut s = FluidState { t: 0.0, rho: vec![0.0; n], u: [vec![0.0; n], vec![0.0; n]] };
        for k in 0..n {
            let z = self.node(k);
            let th = self.grid.angle(k % self.grid.nt);
            let v = u(z);
            s.rho[k] = rho(z);
            s.u[0][k] = v[0] * th.cos() + v[1] * th.sin();
            s.u[1][k] = -v[0] * th.sin() + v[1] * th.cos();
        }
        s
    }

    fn max_dt(&self, s: &FluidState) -> f64 {
        let umax = self.sup_u(s);
        let cmax = s.rho.iter().map(|&r| self.params.sound_speed(r)).fold(0.0, f64::max);
        CFL_SAFETY * self.grid.h_min() / (umax + cmax)
    }

    fn step(&self, s: &FluidState, dt: f64) -> Result<(FluidState, StepInfo)> {
        let limit = self.max_dt(s);
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-9) {
            return Err(Error::InvalidParameter(format!("dt = {dt:e} violates the CFL bound {limit:e}")));
        }
        let p = &self.params;
        let lmax = s.rho.iter().map(|&r| p.lambda(r)).fold(0.0, f64::max);
        let rmin = s.rho.iter().copied().fold(f64::INFINITY, f64::min);
        let a = dt * (2.0 * p.mu + lmax) / rmin;
        let s1 = self.stage(s, dt, a);
        let s2 = self.stage(&s1, dt, a);
        let floor = FLOOR * self.rho_hat;
        let mut info = StepInfo::default();
        let rho = s
            .rho
            .iter()
            .zip(&s2.rho)
            .map(|(x, y)| {
                let v = 0.5 * (x + y);
                if v < floor {
                    info.floor_events += 1;
                    floor
                } else {
                    v
                }
            })
            .collect();
        let u = [0, 1].map(|c| s.u[c].iter().zip(&s2.u[c]).map(|(x, y)| 0.5 * (x + y)).collect());
        Ok((FluidState { t: s.t + dt, rho, u }, info))
    }

    fn energy(&self, s: &FluidState) -> f64 {
        let p = &self.params;
        (0..self.len())
            .map(|k| {
                let v2 = s.u[0][k].powi(2) + s.u[1][k].powi(2);
                self.weight(k) * (0.5 * s.rho[k] * v2 + p.potential(s.rho[k], self.rho_hat))
            })
            .sum()
    }

    fn dissipation(&self, s: &FluidState) -> f64 {
        let f = self.fields(s);
        let p = &self.params;
        let bulk: f64 = (0..self.len())
            .map(|k| {
                self.weight(k) * ((2.0 * p.mu + p.lambda(s.rho[k])) * f.div[k].powi(2) + p.mu * f.omega[k].powi(2))
            })
            .sum();
        bulk + p.mu * self.wall_friction(&f)
    }

    fn a2(&self, s: &FluidState) -> f64 {
        let f = self.fields(s);
        let g = self.grad_sq(s);
        let p = &self.params;
        let vol: f64 = (0..self.len())
            .map(|k| {
                let r = s.rho[k];
                self.weight(k)
                    * (p.lambda(r) * f.div[k].powi(2)
                        + g[k]
                        + (r + 1.0).powf(p.gamma - 1.0) * (r - self.rho_hat).powi(2))
            })
            .sum();
        vol + p.mu * self.wall_friction(&f)
    }

    fn b2(&self, prev: &FluidState, next: &FluidState) -> f64 {
        match self.material_derivative(prev, next) {
            Ok(m) => (0..self.len())
                .map(|k| {
                    let r = 0.5 * (prev.rho[k] + next.rho[k]);
                    self.weight(k) * (m[0][k].powi(2) + m[1][k].powi(2)) / r
                })
                .sum(),
            Err(_) => 0.0,
        }
    }

    fn grad_u_l2(&self, s: &FluidState) -> f64 {
        let g = self.grad_sq(s);
        (0..self.len()).map(|k| self.weight(k) * g[k]).sum::<f64>().sqrt()
    }

    fn accel_sq(&self, s: &FluidState) -> f64 {
        let f = self.rhs(s).force;
        (0..self.len()).map(|k| self.weight(k) * (f[0][k].powi(2) + f[1][k].powi(2)) / s.rho[k]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solver(n: usize, k: f64) -> PolarSolver {
        let g = PolarGrid::new(0.5, n, 2 * n);
        let mut s =
            PolarSolver::new(g, PhysParams::new(1.0, 2.0, 2.0).unwrap(), &SlipSpec::uniform(k, 2), false).unwrap();
        s.set_rho_hat(1.0);
        s
    }

    #[test]
    fn rest_state_is_fixed() {
        let s = solver(16, 0.7);
        let st = s.sample(&|_| 1.0, &|_| [0.0, 0.0]);
        let dt = s.max_dt(&st);
        let (next, _) = s.step(&st, dt).unwrap();
        assert_eq!(next.rho, st.rho);
        assert!(next.u[0].iter().chain(&next.u[1]).all(|&v| v == 0.0));
    }

    #[test]
    fn cfl_violation_refused() {
        let s = solver(16, 0.0);
        let st = s.sample(&|_| 1.0, &|_| [0.0, 0.0]);
        assert!(s.step(&st, 2.0 * s.max_dt(&st)).is_err());
    }

    #[test]
    fn smoother_inverts_operator() {
        let s = solver(12, 0.0);
        let (nr, nt) = (s.grid.nr, s.grid.nt);
        for odd in [true, false] {
            let x: Vec<f64> = (0..nr * nt).map(|k| ((k * 37 % 11) as f64 - 5.0) / 7.0).collect();
            let a = 0.01;
            // apply (I - aΔ) with the same reflection
            let sgn = if odd { -1.0 } else { 1.0 };
            let (hr, ht) = (s.grid.hr(), s.grid.ht());
            let mut b = vec![0.0; nr * nt];
            for i in 0..nr {
                let r = s.rad(i as isize);
                for j in 0..nt {
                    let c = x[i * nt + j];
                    let lo = if i == 0 { sgn * c } else { x[(i - 1) * nt + j] };
                    let hi = if i == nr - 1 { sgn * c } else { x[(i + 1) * nt + j] };
                    let lap = ((r + 0.5 * hr) * (hi - c) - (r - 0.5 * hr) * (c - lo)) / (r * hr * hr)
                        + (x[i * nt + (j + 1) % nt] - 2.0 * c + x[i * nt + (j + nt - 1) % nt]) / (r * r * ht * ht);
                    b[i * nt + j] = c - a * lap;
                }
            }
            s.smooth(&mut b, a, odd);
            for (u, v) in b.iter().zip(&x) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mass_is_conserved() {
        let s = solver(16, 0.5);
        let st = s.sample(&|z| 1.0 + 0.1 * z.re, &|z| [-z.im * 0.3, z.re * 0.3 + 0.05]);
        let m0 = s.mass(&st);
        let (next, _) = s.step(&st, s.max_dt(&st)).unwrap();
        assert!((s.mass(&next) - m0).abs() / m0 < 1e-14);
    }
}
