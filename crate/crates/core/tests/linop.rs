use conc::linop::LinearizedOperator;
use conc::profile::{solve_ground_state, LimitProblem};

fn op(n: usize, p: f64) -> LinearizedOperator {
    let prof = solve_ground_state(LimitProblem::new(n, p).unwrap(), 20.0, 1e-12).unwrap();
    LinearizedOperator::assemble(&prof).unwrap()
}

// Pöschl–Teller oracle: ground state of −∂² − ℓ(ℓ+1)a² sech²(ax) is
// sech^ℓ(ax) with energy −ℓ²a².
fn cosine(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let ab: f64 = (0..a.len()).map(|i| w[i] * a[i] * b[i]).sum();
    let aa: f64 = (0..a.len()).map(|i| w[i] * a[i] * a[i]).sum();
    let bb: f64 = (0..a.len()).map(|i| w[i] * b[i] * b[i]).sum();
    ab / (aa * bb).sqrt()
}

#[test]
fn negative_eigenpair_cubic_line() {
    let l = op(1, 3.0);
    let (lam, z) = l.negative_eigenpair().unwrap();
    assert!((lam + 3.0).abs() < 1e-6, "lambda0 = {lam}");
    let oracle: Vec<f64> = l.profile.r.iter().map(|r| 1.0 / r.cosh().powi(2)).collect();
    let c = cosine(&z, &oracle, l.quadrature());
    assert!(c > 1.0 - 1e-8, "cos = {c}");
    assert!(z.iter().all(|v| *v > 0.0));
    let norm: f64 = l.inner(&z, &z);
    assert!((norm - 1.0).abs() < 1e-12);
}

#[test]
fn negative_eigenpair_quadratic_line() {
    let l = op(1, 2.0);
    let (lam, z) = l.negative_eigenpair().unwrap();
    assert!((lam + 1.25).abs() < 1e-6, "lambda0 = {lam}");
    let oracle: Vec<f64> = l.profile.r.iter().map(|r| 1.0 / (r / 2.0).cosh().powi(3)).collect();
    assert!(cosine(&z, &oracle, l.quadrature()) > 1.0 - 1e-8);
}

#[test]
fn kernel_and_ground_state_images() {
    let l = op(1, 3.0);
    let k = l.apply_l0(&l.profile.wp, 1).unwrap();
    let res = k.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(res < 1e-6, "kernel residual {res:e}");
    let lw = l.apply_l0(&l.profile.w, 0).unwrap();
    for i in 1..l.len() - 1 {
        let expect = -(3.0 - 1.0) * l.profile.w[i].powi(3);
        assert!((lw[i] - expect).abs() < 1e-6);
    }
    assert!(l.kernel_eigenvalue.abs() < 1e-5);
}

#[test]
fn u0_matches_closed_form() {
    for (n, p) in [(1, 3.0), (2, 3.0), (1, 2.0)] {
        let l = op(n, p);
        let sp = l.special_solutions().unwrap();
        let exact = l.u0_closed_form();
        let err = sp.u0.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "N={n} p={p} err={err:e}");
    }
}

#[test]
fn a_term_identity() {
    for (n, p, tol) in [(1, 3.0, 1e-5), (1, 2.0, 1e-5), (2, 3.0, 1e-4)] {
        let l = op(n, p);
        let sp = l.special_solutions().unwrap();
        let rep = l.a_term_identity_check(&sp);
        assert!(rep.rel_error < tol, "N={n} p={p} {rep:?}");
    }
}

#[test]
fn moment_identities() {
    let l = op(1, 3.0);
    let reps = l.moment_identity_checks();
    assert!((reps[0].lhs - 4.0 / 3.0).abs() < 1e-9);
    assert!((reps[1].lhs + 2.0 / 3.0).abs() < 1e-9, "{:?}", reps[1]);
    let l2 = op(2, 3.0);
    let reps = l2.moment_identity_checks();
    assert!((reps[1].lhs / l2.c0 + 1.0).abs() < 1e-6);
}

#[test]
fn fredholm_and_orthogonality() {
    let l = op(1, 3.0);
    assert!(matches!(
        l.solve_orthogonal(&l.profile.wp, 1),
        Err(conc::Error::FredholmViolation { .. })
    ));
    let sp = l.special_solutions().unwrap();
    assert!(l.inner(&sp.uj, &l.profile.wp).abs() < 1e-12);
    // ⟨U₀, ∂_i w₀⟩ vanishes by parity; U_j round trip
    let sigma = l.profile.problem.sigma();
    let f: Vec<f64> = (0..l.len()).map(|i| l.profile.wp[i] + l.profile.r[i] * l.profile.w[i] / sigma).collect();
    let back = l.apply_l0(&sp.uj, 1).unwrap();
    let err = (1..l.len() - 1).map(|i| (back[i] - f[i]).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "round trip {err:e}");
}

#[test]
fn coercivity_constant() {
    let l = op(1, 3.0);
    let g = l.coercivity_estimate().unwrap();
    assert!(g > 0.9 && g <= 1.0, "gamma0 = {g}");
    assert!(op(1, 2.0).coercivity_estimate().unwrap() > 0.0);
    assert!(op(2, 3.0).coercivity_estimate().unwrap() > 0.0);
}

#[test]
fn projections() {
    let l = op(1, 3.0);
    let zero = vec![0.0; l.len()];
    let pi = l.project_pi(&zero, &[l.profile.wp.clone()]);
    assert!((pi[0] - 1.0).abs() < 1e-12 && pi[1].abs() < 1e-15);
    let pi = l.project_pi(&l.z, &[zero.clone()]);
    assert!(pi[0].abs() < 1e-15 && (pi[1] - 1.0).abs() < 1e-12);
    let mono: Vec<f64> = l.profile.w.iter().map(|w| w * w).collect();
    let dip: Vec<f64> = l.profile.r.iter().map(|r| r * (-r * r).exp()).collect();
    let (m, d) = l.project_perp(&mono, &[dip]);
    let pi = l.project_pi(&m, &d);
    assert!(pi.iter().all(|v| v.abs() < 1e-12), "{pi:?}");
}
