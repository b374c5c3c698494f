use conc::ansatz::*;
use conc::k_ops::find_stationary_radius;
use conc::potential::PotentialModel;
use proptest::prelude::*;
use std::sync::OnceLock;

fn rstar() -> f64 {
    find_stationary_radius(&PotentialModel::gaussian(0.1), 1.5, (0.3, 1.0)).unwrap()
}

fn ctx() -> &'static AnsatzContext {
    static C: OnceLock<AnsatzContext> = OnceLock::new();
    C.get_or_init(|| AnsatzContext::circle(&PotentialModel::gaussian(0.1), 3.0, rstar()).unwrap())
}

fn slope(eps: &[f64], vals: &[f64]) -> f64 {
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn cutoff_shape() {
    assert_eq!(cutoff(0.0), 1.0);
    assert_eq!(cutoff(1.0), 1.0);
    assert_eq!(cutoff(2.0), 0.0);
    assert_eq!(cutoff(-3.0), 0.0);
    assert!((cutoff(1.5) - 0.5).abs() < 1e-15);
    // η(t) + η(3 − t) = 1 on [1, 2]
    for t in [1.1, 1.37, 1.8] {
        assert!((cutoff(t) + cutoff(3.0 - t) - 1.0).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn cutoff_is_monotone_in_unit_interval(a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(cutoff(lo) >= cutoff(hi));
        prop_assert!((0.0..=1.0).contains(&cutoff(a)));
    }

    #[test]
    fn weighted_holder_scales_linearly(c in 0.1f64..10.0) {
        let xi: Vec<f64> = (0..400).map(|i| -10.0 + 0.05 * i as f64).collect();
        let f: Vec<f64> = xi.iter().map(|x| (-x.abs()).exp() * x.sin()).collect();
        let g: Vec<f64> = f.iter().map(|v| c * v).collect();
        let a = weighted_holder(&f, &xi, 0.5, 0.5);
        prop_assert!((weighted_holder(&g, &xi, 0.5, 0.5) - c * a).abs() <= 1e-12 * c * a);
    }
}

#[test]
fn line_with_constant_potential_has_trivial_order_one() {
    let line = AnsatzContext::line(1.0, 3.0).unwrap();
    assert_eq!(line.order1_defect(), 0.0);
    let w1 = line.build_order1().unwrap();
    assert_eq!(w1.v.sup(), 0.0);
    let b = line.build(4, 0.0, 0.0).unwrap();
    assert!(b.ws.iter().all(|w| w.v.sup() == 0.0));
    assert!(b.phis.iter().all(|p| *p == 0.0));
}

#[test]
fn order_one_at_stationary_radius() {
    let c = ctx();
    assert!(c.stationary_residual.abs() < 1e-8);
    let w1 = c.build_order1().unwrap();
    assert!(w1.v.sup() > 1e-3);
    // decays like ξ̄ e^{−ξ̄}
    let h = c.step();
    let a = w1.v.at(h, 10.0).abs();
    let b = w1.v.at(h, 14.0).abs();
    assert!(b < a && (b / a).ln() / 4.0 < -0.8, "{a} {b}");
}

#[test]
fn order_one_defect_tracks_stationary_residual() {
    let pot = PotentialModel::gaussian(0.1);
    for r in [0.6, 0.8, 1.0, 1.2] {
        let c = AnsatzContext::circle(&pot, 3.0, r).unwrap();
        assert!(matches!(c.build_order1(), Err(conc::Error::FredholmViolation { .. })));
        // ∫F₁∂w₀ = −c₀μ⁻³(σ∂V + VH) after dividing the equation by V
        let q = c.order1_defect() * c.mu.powi(3) / c.stationary_residual;
        assert!((q + 4.0 / 3.0).abs() < 1e-6, "r={r}: {q}");
    }
}

#[test]
fn zero_parameter_gives_zero_leading_offset() {
    let c = ctx();
    let b = c.build(3, 0.0, 0.0).unwrap();
    assert!(b.phis[0].abs() < 1e-12, "{:?}", b.phis);
    let b1 = c.build(3, 1.0, 0.0).unwrap();
    assert!(b1.phis[0].abs() > 1e-3);
    assert!(b1.final_defects.iter().all(|d| d.abs() < 1e-9), "{:?}", b1.final_defects);
}

#[test]
fn solvability_coefficient_matches_overlap_constant() {
    let c = ctx();
    let coef = c.e_solvability_coefficient().unwrap() / (c.gamma / c.mu);
    // independent quadrature of c_G
    assert!((coef - 0.812).abs() < 1e-3, "{coef}");
}

#[test]
fn offsets_are_lipschitz_in_parameter() {
    let c = ctx();
    let base = c.build(4, 0.0, 0.0).unwrap();
    let mut ks = Vec::new();
    for de in [0.1, 0.2, 0.4] {
        let b = c.build(4, de, 0.0).unwrap();
        let d = b.phis.iter().zip(&base.phis).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ks.push(d / de);
    }
    let spread = ks.iter().fold(0.0_f64, |m, k| m.max((k - ks[0]).abs()));
    assert!(spread < 0.2 * ks[0], "{ks:?}");
}

#[test]
fn corrections_decay() {
    let c = ctx();
    let b = c.build(3, 0.0, 0.0).unwrap();
    let h = c.step();
    // w_ℓ carries a polynomial factor of degree ≤ ℓ + 1 in front of e^{−ξ̄}
    for (l, w) in b.ws.iter().enumerate() {
        let tau = envelope_rate(&w.v, h, 12.0, 24.0);
        assert!(tau < 1.05 && tau > 1.0 - (l as f64 + 2.0) / 12.0, "w{}: {tau}", l + 1);
    }
    // V falls off outward, so the outer side decays at √V(r + εs)/μ < 1
    let t = b.decay_rate(c, 0.05, 12.0, 24.0);
    assert!(t > 0.0 && t < 1.0, "{t}");
    let t = b.decay_rate(c, 0.01, 12.0, 24.0);
    assert!(t >= 0.9, "{t}");
}

#[test]
fn interior_residual_orders() {
    let c = ctx();
    let eps = [0.08, 0.04, 0.02];
    let rows = residual_scan(c, &[1, 3], &eps, 0.0, 20.0).unwrap();
    for (k, order) in [1usize, 3].into_iter().enumerate() {
        let v: Vec<f64> = rows[3 * k..3 * k + 3].iter().map(|r| r.e_term_removed_residual).collect();
        let s = slope(&eps, &v);
        assert!(s >= order as f64 + 1.0 - 0.2, "I={order} slope {s}");
    }
    let at = |o: usize| c.build(o, 0.0, 0.0).unwrap().residual_interior(c, 0.05, 20.0).raw_residual;
    assert!(at(3) < at(1));
}

#[test]
fn residual_removes_e_term() {
    let c = ctx();
    let b = c.build(3, 0.5, 0.0).unwrap();
    let r = b.residual_interior(c, 0.02, 20.0);
    assert!(r.e_term_removed_residual < r.raw_residual);
}

#[test]
fn residual_csv() {
    let dir = tempfile::tempdir().unwrap();
    let rows = residual_scan(&AnsatzContext::line(1.0, 3.0).unwrap(), &[2], &[0.1], 0.0, 10.0).unwrap();
    write_residual_csv(&rows, &dir.path().join("r.csv")).unwrap();
    let t = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(t.starts_with("epsilon,I,raw_residual,e_term_removed_residual\n"));
}

fn inner_solver(eps: f64) -> (NormalGrid, InnerSolver) {
    let c = ctx();
    let g = NormalGrid::new(c, eps, 2e-3, 30.0);
    let s = InnerSolver::new(c, &g, 0.0, 20.0);
    (g, s)
}

#[test]
fn inner_solve_round_trip() {
    let (_, s) = inner_solver(0.05);
    let w0p: Vec<f64> = s.xi.iter().map(|x| (2f64.sqrt() / x.cosh()).powi(3)).collect();
    let rhs = s.project_perp(&w0p);
    let phi = s.solve(&rhs).unwrap();
    let back = s.project_perp(&s.apply(&phi));
    let res = back.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(res < 1e-8, "{res:e}");
    let (p1, p2) = s.projections(&phi);
    assert!(p1.abs() < 1e-10 && p2.abs() < 1e-10);
}

#[test]
fn unprojected_rhs_is_rejected() {
    let (_, s) = inner_solver(0.05);
    let k = s.kernel.clone();
    assert!(matches!(s.solve(&k), Err(conc::Error::ProjectionDefect(_))));
}

#[test]
fn injectivity_is_uniform_in_epsilon() {
    let vals: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|e| inner_solver(*e).1.min_singular_value()).collect();
    for v in &vals {
        assert!(*v > 0.1, "{vals:?}");
    }
    let spread = vals.iter().fold(0.0_f64, |m, v| m.max((v - vals[0]).abs()));
    assert!(spread < 0.05 * vals[0], "{vals:?}");
}

#[test]
fn outer_solve_max_principle() {
    let c = AnsatzContext::line(1.0, 3.0).unwrap();
    let g = NormalGrid::new(&c, 0.1, 1e-2, 40.0);
    assert_eq!(g.solve_outer(&vec![0.0; g.len()]), vec![0.0; g.len()]);
    // a bump away from K
    let f: Vec<f64> = g.x.iter().map(|x| -(-(x - 20.0).powi(2)).exp()).collect();
    let phi = g.solve_outer(&f);
    let fmax = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(phi.iter().all(|v| *v >= 0.0));
    assert!(phi.iter().fold(0.0_f64, |m, v| m.max(*v)) <= fmax);
    let near = phi[g.x.iter().position(|x| *x >= 5.0).unwrap()];
    let at = phi[g.x.iter().position(|x| *x >= 20.0).unwrap()];
    assert!(near < 1e-5 * at);
}

#[test]
fn global_approximation_support() {
    let c = ctx();
    let eps = 0.05;
    let b = c.build(3, 0.0, 0.0).unwrap();
    let opts = GridOptions::default();
    let delta = default_delta(c, eps, &opts);
    let g = assemble_global(c, &b, eps, delta, &opts).unwrap();
    for i in 0..g.w.len() {
        let d = g.grid.dist(i);
        if d >= 6.0 * delta {
            assert_eq!(g.w[i], 0.0);
        }
        if d <= 3.0 * delta && g.v[i] > 0.0 {
            assert!(g.w[i] > 0.0);
        }
    }
}

#[test]
fn flat_variant_converges_at_once() {
    let s = solve_flat_variant(1.0, 3.0, 4, 0.05).unwrap();
    assert!(s.converged);
    assert_eq!(s.iterations, 1);
    assert!(s.final_residual < 1e-10);
    assert!(s.min_u > 0.0);
}

#[test]
fn order_outside_range_rejected() {
    assert!(ctx().build(0, 0.0, 0.0).is_err());
    assert!(ctx().build(MAX_ORDER + 1, 0.0, 0.0).is_err());
}
