//! Property tests of invariants that hold for every admissible input.

use std::f64::consts::PI;

use mcflow::conformal::annulus_map;
use mcflow::divcurl::{anchor_points, solve_divcurl, Constraints, DivCurlOptions};
use mcflow::geometry::{Circle, CircularDomain, Domain};
use mcflow::greens::NeumannGreen;
use mcflow::laplace::DirichletSolver;
use mcflow::simulator::SlipSpec;
use mcflow::stationary::classify;
use mcflow::C64;
use proptest::prelude::*;

/// One hole well inside the unit disc.
fn one_hole() -> impl Strategy<Value = CircularDomain> {
    (0.0..0.35f64, 0.0..2.0 * PI, 0.1..0.35f64).prop_filter_map("hole must fit", |(d, a, r)| {
        if d + r > 0.85 {
            return None;
        }
        let c = C64::from_polar(d, a);
        CircularDomain::new(vec![Circle::new(c.re, c.im, r)]).ok()
    })
}

/// Two separated holes.
fn two_holes() -> impl Strategy<Value = CircularDomain> {
    (0.3..0.5f64, 0.0..PI, 0.08..0.2f64, 0.08..0.2f64).prop_filter_map("holes must fit", |(d, a, r1, r2)| {
        let c = C64::from_polar(d, a);
        let dom = CircularDomain::new(vec![Circle::new(c.re, c.im, r1), Circle::new(-c.re, -c.im, r2)]).ok()?;
        (dom.gap() > 0.1).then_some(dom)
    })
}

/// Interior point at least `margin` from every wall, from unit-square coordinates.
fn interior(d: &CircularDomain, s: (f64, f64), margin: f64) -> Option<C64> {
    let z = C64::new(2.0 * s.0 - 1.0, 2.0 * s.1 - 1.0);
    (d.contains(z) && d.nearest_component(z).0 > margin).then_some(z)
}

fn unit() -> impl Strategy<Value = (f64, f64)> {
    (0.0..1.0f64, 0.0..1.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_idempotent(d in two_holes(), s in unit()) {
        let z = C64::new(2.0 * s.0 - 1.0, 2.0 * s.1 - 1.0) * 0.99;
        for j in 0..d.k() {
            if let Ok(p) = d.project(j, z) {
                prop_assert!((d.project(j, p).unwrap() - p).norm() <= 1e-12);
                prop_assert!(d.dist_to(j, p) <= 1e-12);
            }
        }
    }

    #[test]
    fn dirichlet_solutions_obey_the_maximum_principle(
        d in two_holes(),
        levels in proptest::collection::vec(-2.0..2.0f64, 3),
        pts in proptest::collection::vec(unit(), 64),
    ) {
        let solver = DirichletSolver::new(&d, 24).unwrap();
        let (h, _) = solver.solve(|j, _, _| levels[j]);
        let (lo, hi) = levels.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        for z in pts.into_iter().filter_map(|s| interior(&d, s, 1e-3)) {
            let v = h.value(z);
            prop_assert!(v >= lo - 1e-8 && v <= hi + 1e-8, "{v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn measures_sum_to_one_and_gradients_match_differences(
        d in one_hole(),
        pts in proptest::collection::vec(unit(), 32),
    ) {
        let ws = DirichletSolver::new(&d, 24).unwrap().harmonic_measures();
        let e = 1e-5;
        for z in pts.into_iter().filter_map(|s| interior(&d, s, 0.02)) {
            let sum: f64 = ws.iter().map(|w| w.value(z)).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-8);
            let w = &ws[1];
            let g = w.gradient(z);
            let fd = [
                (w.value(z + e) - w.value(z - e)) / (2.0 * e),
                (w.value(z + C64::i() * e) - w.value(z - C64::i() * e)) / (2.0 * e),
            ];
            let scale = g[0].hypot(g[1]).max(1e-3);
            prop_assert!((g[0] - fd[0]).hypot(g[1] - fd[1]) <= 1e-6 * scale);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn neumann_function_is_symmetric(d in one_hole(), a in unit(), b in unit()) {
        let (Some(z), Some(w)) = (interior(&d, a, 0.05), interior(&d, b, 0.05)) else {
            return Ok(());
        };
        prop_assume!((z - w).norm() > 1e-3);
        let g = NeumannGreen::new(&d, 24).unwrap();
        let (nzw, nwz) = (g.eval_n(z, w).unwrap(), g.eval_n(w, z).unwrap());
        prop_assert!((nzw - nwz).abs() <= 1e-6, "{nzw} vs {nwz}");
    }

    #[test]
    fn classification_ignores_rigid_motions_and_friction_scale(
        shift in (-2.0..2.0f64, -2.0..2.0f64),
        scale in 0.5..3.0f64,
        angle in 0.0..2.0 * PI,
        k in proptest::collection::vec(0.0..1.0f64, 2),
        factor in 0.1..10.0f64,
    ) {
        let base = Domain::Circular(CircularDomain::new(vec![Circle::new(0.2, 0.0, 0.3)]).unwrap());
        let c = C64::new(shift.0, shift.1);
        let hole = c + C64::from_polar(0.2 * scale, angle);
        let moved = Domain::parse(&format!(
            "outer = {{ center = [{}, {}], radius = {scale} }}\n[[holes]]\ncenter = [{}, {}]\nradius = {}\n",
            c.re, c.im, hole.re, hole.im, 0.3 * scale
        ))
        .unwrap();
        let slip = SlipSpec::Constant(k.clone());
        let scaled = SlipSpec::Constant(k.iter().map(|v| v * factor).collect());
        let case = classify(&base, &slip).unwrap().case;
        prop_assert_eq!(classify(&moved, &slip).unwrap().case, case);
        prop_assert_eq!(classify(&base, &scaled).unwrap().case, case);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn solve_divcurl_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, p in (0.0..1.0f64, 0.0..1.0f64)) {
        let d = CircularDomain::annulus(0.5).unwrap();
        let zero = Constraints::Points(anchor_points(&d).into_iter().map(|z| (z, [0.0, 0.0])).collect());
        let opts = DivCurlOptions::default();
        let f1 = |z: C64| z.re * z.im;
        let g1 = |z: C64| 1.0 + z.re;
        let f2 = |z: C64| z.norm_sqr() - 0.75;
        let g2 = |z: C64| z.im * z.im;
        let s1 = solve_divcurl(&d, &f1, &g1, &zero, &opts).unwrap().field;
        let s2 = solve_divcurl(&d, &f2, &g2, &zero, &opts).unwrap().field;
        let f = move |z: C64| a * f1(z) + b * f2(z);
        let g = move |z: C64| a * g1(z) + b * g2(z);
        let s = solve_divcurl(&d, &f, &g, &zero, &opts).unwrap().field;
        let z = C64::from_polar(0.55 + 0.4 * p.0, 2.0 * PI * p.1);
        let (u, u1, u2) = (s.eval(z), s1.eval(z), s2.eval(z));
        for c in 0..2 {
            prop_assert!((u[c] - a * u1[c] - b * u2[c]).abs() <= 1e-10, "{:?} vs {:?} {:?}", u, u1, u2);
        }
    }

    #[test]
    fn modulus_is_invariant_and_maps_round_trip(
        shift in (-1.0..1.0f64, -1.0..1.0f64),
        angle in 0.0..2.0 * PI,
        s in (0.0..1.0f64, 0.0..1.0f64),
    ) {
        let motion = |z: C64| C64::from_polar(1.0, angle) * z + C64::new(shift.0, shift.1);
        let curves = |m: &dyn Fn(C64) -> C64| {
            let curve = |f: &dyn Fn(f64) -> C64| {
                (0..128)
                    .map(|i| m(f(2.0 * PI * i as f64 / 128.0)))
                    .map(|z| format!("[{:.17e}, {:.17e}]", z.re, z.im))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            let outer = curve(&|t| C64::new(t.cos() + 0.1 * (2.0 * t).cos(), 0.8 * t.sin()));
            let hole = curve(&|t| C64::new(0.1, 0.0) + C64::from_polar(0.25, t));
            Domain::parse(&format!("curves = [[{outer}], [{hole}]]\n")).unwrap()
        };
        let base = annulus_map(&curves(&|z| z), 256).unwrap();
        let moved = annulus_map(&curves(&motion), 256).unwrap();
        prop_assert!((base.modulus - moved.modulus).abs() < 1e-10, "{} vs {}", base.modulus, moved.modulus);
        let z = C64::new(-0.7 + 0.3 * s.0, 0.6 * s.1 - 0.3);
        let back = base.inverse(base.push_forward(z).unwrap()).unwrap();
        prop_assert!((back - z).norm() <= 1e-8);
    }
}
