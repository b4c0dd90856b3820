use std::f64::consts::PI;

use mcflow::commutator::*;
use mcflow::geometry::{build_grid, CircularDomain, Grid};
use mcflow::greens::NeumannGreen;
use mcflow::quad::gauss_on;
use mcflow::simulator::PhysParams;
use mcflow::stationary::StationaryState;
use mcflow::C64;
use proptest::prelude::*;

const R_IN: f64 = 0.5;

fn annulus() -> CircularDomain {
    CircularDomain::annulus(R_IN).unwrap()
}

/// Samples closed-form `(ρ, u)` on the grid.
fn sample(grid: &Grid, f: impl Fn(C64) -> [f64; 3]) -> [Vec<f64>; 3] {
    let mut out = [vec![0.0; grid.len()], vec![0.0; grid.len()], vec![0.0; grid.len()]];
    for k in 0..grid.len() {
        let v = f(grid.node(k));
        for c in 0..3 {
            out[c][k] = v[c];
        }
    }
    out
}

fn flow<'a>(grid: &'a Grid, d: &'a [Vec<f64>; 3]) -> Flow<'a> {
    GridField { grid, data: [&d[0], &d[1], &d[2]] }
}

/// Wall weight `(R - r)²(R - 1)²` and its radial derivative.
fn wall(radius: f64) -> (f64, f64) {
    let (a, b) = (radius - R_IN, radius - 1.0);
    (a * a * b * b, 2.0 * a * b * (a + b))
}

/// `ψ = (R - r)²(R - 1)²(1 + ½ cos θ)`, `u = ∇⊥ψ = (-∂₂ψ, ∂₁ψ)`.
fn psi_velocity(z: C64) -> [f64; 2] {
    let e = 1e-5;
    let psi = |w: C64| wall(w.norm()).0 * (1.0 + 0.5 * w.arg().cos());
    let dx = (psi(z + e) - psi(z - e)) / (2.0 * e);
    let dy = (psi(z + C64::i() * e) - psi(z - C64::i() * e)) / (2.0 * e);
    [-dy, dx]
}

fn density(z: C64) -> f64 {
    1.0 + 0.3 * z.re * z.im + 0.1 * z.norm_sqr()
}

#[test]
fn singular_quadrature_of_inverse_distance_is_second_order() {
    // ∫_Ω |x - y|⁻¹ dy = ∫ (length of the ray from x inside Ω) dφ
    let d = annulus();
    let x = C64::from_polar(0.8, 1.1);
    let ray = |phi: f64| {
        let dir = C64::from_polar(1.0, phi);
        let b = (x * dir.conj()).re;
        let s_out = -b + (b * b - (x.norm_sqr() - 1.0)).sqrt();
        let disc = b * b - (x.norm_sqr() - R_IN * R_IN);
        if disc > 0.0 && -b - disc.sqrt() > 0.0 {
            s_out - 2.0 * disc.sqrt()
        } else {
            s_out
        }
    };
    // split at the two tangent directions to the hole so each piece is smooth
    let t0 = x.arg() + PI;
    let half = (R_IN / x.norm()).asin();
    let cuts = [t0 - half, t0 + half, t0 - half + 2.0 * PI];
    let exact: f64 =
        cuts.windows(2).map(|w| gauss_on(400, w[0], w[1]).into_iter().map(|(p, wt)| wt * ray(p)).sum::<f64>()).sum();
    let errs: Vec<f64> = [16usize, 32, 64]
        .iter()
        .map(|&n| {
            let q = SingularQuadrature::new(&d, build_grid(&d, n).unwrap());
            (q.integrate(x, |p| 1.0 / (p.z() - x).norm()).unwrap() - exact).abs()
        })
        .collect();
    let slope = refinement_slope(&[4.0, 2.0, 1.0], &errs);
    assert!(slope > 1.7, "errors {errs:?}, slope {slope}");
    assert!(errs[2] < 1e-3 * exact);
}

#[test]
fn inverse_laplacian_of_a_gradient_returns_the_potential() {
    // ρu = ∇φ with φ = cos θ (R - r)²(R - 1)²: ∂_nφ = 0 and ∮φ = 0, so V = φ.
    let d = annulus();
    let green = NeumannGreen::new(&d, 32).unwrap();
    let phi = |z: C64| wall(z.norm()).0 * z.arg().cos();
    let grad = |z: C64| {
        let (radius, th) = (z.norm(), z.arg());
        let (w, dw) = wall(radius);
        // ∇φ = (dw cos θ) e_R - (w sin θ / R) e_θ
        let (er, et) = (z / radius, C64::i() * z / radius);
        let v = er * dw * th.cos() - et * (w * th.sin() / radius);
        [v.re, v.im]
    };
    let pts = [C64::new(0.75, 0.0), C64::from_polar(0.62, 2.0), C64::from_polar(0.86, -0.7)];
    let scale = 1.0 / 256.0;
    let mut errs = Vec::new();
    for n in [32usize, 64] {
        let grid = build_grid(&d, n).unwrap();
        let data = sample(&grid, |z| {
            let g = grad(z);
            [1.0, g[0], g[1]]
        });
        let q = SingularQuadrature::new(&d, grid.clone());
        let f = flow(&grid, &data);
        let e = pts.iter().map(|&x| (inv_laplace_div(&q, &green, &f, x).unwrap() - phi(x)).abs()).fold(0.0, f64::max);
        assert!(e < 0.02 * scale, "n = {n}: error {e:e}");
        errs.push(e);
    }
    assert!(errs[1] < 0.3 * errs[0], "{errs:?}");
}

#[test]
fn inner_commutator_matches_dense_quadrature() {
    let d = annulus();
    let green = NeumannGreen::new(&d, 32).unwrap();
    let x = C64::from_polar(0.72, 0.4);
    let eval = |n: usize| {
        let grid = build_grid(&d, n).unwrap();
        let data = sample(&grid, |z| {
            let u = psi_velocity(z);
            [density(z), u[0], u[1]]
        });
        let q = SingularQuadrature::new(&d, grid.clone());
        let f = flow(&grid, &data);
        (inner_commutator(&q, &green, &f, x).unwrap(), commutator_majorant(&q, &f, x).unwrap())
    };
    let (coarse, majorant) = eval(32);
    let (dense, _) = eval(128);
    assert!((coarse - dense).abs() <= 0.03 * dense.abs(), "{coarse} vs {dense}");
    // |C(x)| ≤ C ∫ |u(y) - u(x)| / |y - x|² ρ|u| dy with a modest constant
    assert!(coarse.abs() <= majorant, "{coarse} vs majorant {majorant}");
}

#[test]
fn boundary_term_far_and_near_band() {
    let d = annulus();
    let green = NeumannGreen::new(&d, 32).unwrap();
    let field = |z: C64| {
        // rigid rotation plus the ψ-field: nonzero wall velocity
        let u = psi_velocity(z);
        [density(z), u[0] - 0.3 * z.im, u[1] + 0.3 * z.re]
    };
    let far = C64::from_polar(0.75, 1.0);
    let near = C64::from_polar(1.0 - d.gap() / 8.0, 2.5);
    let eval = |n: usize, x: C64| {
        let grid = build_grid(&d, n).unwrap();
        let data = sample(&grid, field);
        let q = SingularQuadrature::new(&d, grid.clone());
        boundary_term_b(&q, &green, &flow(&grid, &data), x).unwrap()
    };
    let ratios: Vec<f64> = [32usize, 64].iter().map(|&n| eval(n, far).ratio()).collect();
    assert!(eval(32, far).near.is_none());
    assert!((ratios[0] - ratios[1]).abs() < 0.05 * ratios[1], "{ratios:?}");
    let (coarse, dense) = (eval(32, near), eval(128, near));
    assert_eq!(coarse.near, Some(0));
    assert!((coarse.value - dense.value).abs() <= 0.05 * dense.value.abs(), "{} vs {}", coarse.value, dense.value);
}

#[test]
fn subtracting_the_wall_velocity_lowers_the_singularity_by_one_order() {
    let d = annulus();
    let green = NeumannGreen::new(&d, 32).unwrap();
    // impermeable walls: rotation plus a field vanishing on both circles
    let u = |z: C64| {
        let v = psi_velocity(z);
        [v[0] - z.im, v[1] + z.re]
    };
    for (j, theta) in [(0usize, 0.3), (1, 2.0)] {
        let (rungs, _, sub) = b_integrand_order(&green, u, j, theta).unwrap();
        assert!((sub + 1.0).abs() <= 0.2, "component {j}: subtracted slope {sub}");
        assert!(rungs.iter().all(|r| r[2].is_finite() && r[2] > 0.0));
    }
}

#[test]
fn remainder_of_the_steady_family_without_friction() {
    let (c1, c2, gamma) = (1.0, 3.0, 2.0);
    let st = StationaryState::annulus_family(c1, c2, gamma, R_IN).unwrap();
    let p = |radius: f64| st.rho_radial(radius).powf(gamma);
    let area = PI * (1.0 - R_IN * R_IN);
    let pbar = gauss_on(40, R_IN, 1.0).into_iter().map(|(s, w)| w * 2.0 * PI * s * p(s)).sum::<f64>() / area;
    let d = annulus();
    let green = NeumannGreen::new(&d, 32).unwrap();
    let traces = BoundaryTraces::from_fn(&d, 64, |_, z| (-(p(z.norm()) - pbar), 0.0));
    let closed = (2.0 * PI * -(p(1.0) - pbar) + 2.0 * PI * R_IN * -(p(R_IN) - pbar)) / green.l();
    for x in [C64::new(0.7, 0.1), C64::from_polar(0.9, 3.0)] {
        let r = remainder_r(&green, &traces, 1.0, x).unwrap();
        assert!((r - closed).abs() <= 1e-6, "{r} vs {closed}");
    }
}

#[test]
fn steady_state_representation_converges() {
    let d = annulus();
    let green = NeumannGreen::new(&d, 32).unwrap();
    let params = PhysParams::new(1.0, 2.0, 2.0).unwrap();
    let pts = sample_points(&d);
    let mut rel = Vec::new();
    for n in [32usize, 64] {
        let pair = SnapshotPair::steady(R_IN, params, 1.0, 3.0, n).unwrap();
        let rep = verify_representation(&green, &pair, &pts, false).unwrap();
        rel.push(rep.relative(rep.max_direct_c512));
        let nc = neumann_f_check(&pair).unwrap();
        assert!(nc.interior < 0.05 * nc.scale && nc.boundary.is_finite());
    }
    assert!(rel[1] < 0.05 && rel[1] < 0.5 * rel[0], "{rel:?}");
}

#[test]
fn rest_state_gives_zero_everywhere() {
    let d = annulus();
    let green = NeumannGreen::new(&d, 16).unwrap();
    let params = PhysParams::new(1.0, 2.0, 2.0).unwrap();
    let pair = SnapshotPair::steady(R_IN, params, 0.0, 3.0, 32).unwrap();
    let pts: Vec<_> = sample_points(&d).into_iter().filter(|p| p.1.is_none()).take(4).collect();
    let rep = verify_representation(&green, &pair, &pts, true).unwrap();
    for p in &rep.points {
        for v in [p.f_direct, p.f_c512, p.f_qp11] {
            assert!(v.abs() < 1e-12, "{p:?}");
        }
    }
}

#[test]
fn identical_snapshot_times_are_rejected() {
    let params = PhysParams::new(1.0, 2.0, 2.0).unwrap();
    assert!(SnapshotPair::manufactured(R_IN, params, 16, 0.5, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn integral_operators_are_linear_in_the_density(a in -2.0f64..2.0, b in -2.0f64..2.0, th in 0.0f64..std::f64::consts::TAU) {
        let d = annulus();
        let green = NeumannGreen::new(&d, 16).unwrap();
        let grid = build_grid(&d, 16).unwrap();
        let q = SingularQuadrature::new(&d, grid.clone());
        let x = C64::from_polar(0.75, th);
        let base = |s: f64, t: f64| sample(&grid, |z| {
            let u = psi_velocity(z);
            [s * density(z) + t * (1.0 + z.re), u[0], u[1]]
        });
        let (d1, d2, d12) = (base(1.0, 0.0), base(0.0, 1.0), base(a, b));
        let ops = |data: &[Vec<f64>; 3]| {
            let f = flow(&grid, data);
            [
                inv_laplace_div(&q, &green, &f, x).unwrap(),
                inner_commutator(&q, &green, &f, x).unwrap(),
                boundary_term_b(&q, &green, &f, x).unwrap().value,
            ]
        };
        let (o1, o2, o12) = (ops(&d1), ops(&d2), ops(&d12));
        for i in 0..3 {
            let lin = a * o1[i] + b * o2[i];
            prop_assert!((o12[i] - lin).abs() <= 1e-10 * (1.0 + lin.abs()), "op {}: {} vs {}", i, o12[i], lin);
        }
    }
}
