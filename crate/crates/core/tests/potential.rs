use conc::geom::{AmbientSpace, FermiChart, Submanifold};
use conc::numeric::loglog_slope;
use conc::potential::PotentialModel;
use proptest::prelude::*;

fn circle(r: f64) -> FermiChart {
    FermiChart::build(AmbientSpace::flat(2), Submanifold::Circle { radius: r }, 256).unwrap()
}

#[test]
fn constant_restriction() {
    let rs = PotentialModel::constant(1.0).restrict_to_chart(&circle(1.0), 3.0).unwrap();
    assert!(rs.grad_n.iter().all(|g| g[0] == 0.0));
    assert!(rs.mu.iter().chain(&rs.h).all(|v| *v == 1.0));
}

#[test]
fn gaussian_on_circle() {
    let r = 0.8;
    let rs = PotentialModel::gaussian(0.0).restrict_to_chart(&circle(r), 3.0).unwrap();
    let e = (-r * r / 2.0f64).exp();
    for i in 0..rs.len() {
        assert!((rs.v[i] - e).abs() < 1e-15);
        assert!((rs.grad_n[i][0] + r * e).abs() < 1e-15);
        assert!((rs.hess_n[i][(0, 0)] - (r * r - 1.0) * e).abs() < 1e-14);
        assert!(rs.dv_tangent[i].abs() < 1e-15);
    }
}

#[test]
fn polynomial_derived_fields() {
    for p in [2.0, 3.0, 5.0] {
        let rs = PotentialModel::Polynomial.restrict_to_chart(&circle(1.0), p).unwrap();
        for i in 0..rs.len() {
            assert!((rs.mu[i] - 2f64.sqrt()).abs() < 1e-15);
            assert!((rs.h[i] - 2f64.powf(1.0 / (p - 1.0))).abs() < 1e-15);
            assert!((rs.mu[i] * rs.mu[i] - rs.v[i]).abs() < 1e-15);
            assert!((rs.h[i].powf(p - 1.0) - rs.v[i]).abs() < 1e-14);
        }
    }
}

#[test]
fn nonpositive_floor_rejected() {
    let err = PotentialModel::gaussian(0.0).restrict_to_chart(&circle(1.0), 3.0);
    assert!(err.is_ok(), "unfloored oracle is accepted on compact K");
    let err = PotentialModel::gaussian(-0.5).restrict_to_chart(&circle(1.0), 3.0);
    assert!(matches!(err, Err(conc::Error::BoundViolation { .. })));
}

#[test]
fn radial_derivatives_match_differences() {
    let v = PotentialModel::gaussian(0.1);
    let rho = 0.7;
    let d = v.radial_derivatives(rho, 5).unwrap();
    let h = 1e-3;
    for k in 0..4 {
        let f = |x: f64| v.radial_derivatives(x, 5).unwrap()[k];
        let fd = (f(rho - 2.0 * h) - f(rho + 2.0 * h) + 8.0 * (f(rho + h) - f(rho - h))) / (12.0 * h);
        assert!((fd - d[k + 1]).abs() < 1e-9, "k={k}");
    }
    assert!((d[0] - v.value(&[rho, 0.0])).abs() < 1e-15);
}

#[test]
fn taylor_remainder_is_cubic() {
    for (chart, model) in [
        (circle(1.0), PotentialModel::gaussian(0.1)),
        (FermiChart::build(AmbientSpace::flat(3), Submanifold::Circle { radius: 1.2 }, 32).unwrap(), PotentialModel::Gaussian { floor: 0.1, center: vec![0.2, 0.0, 0.3] }),
        (FermiChart::build(AmbientSpace::sphere(2), Submanifold::GreatCircle, 32).unwrap(), PotentialModel::Gaussian { floor: 0.1, center: vec![0.3, 0.1, 0.5] }),
    ] {
        let rs = model.restrict_to_chart(&chart, 3.0).unwrap();
        let nn = chart.codim();
        let eps = [0.1, 0.05, 0.025];
        let xi: Vec<f64> = (0..nn).map(|j| 0.7 - 0.3 * j as f64).collect();
        let err: Vec<f64> = eps
            .iter()
            .map(|e| {
                let x: Vec<f64> = xi.iter().map(|v| e * v).collect();
                (model.at_chart_point(&chart, rs.ybar[3], &x) - rs.taylor(3, &x)).abs()
            })
            .collect();
        let q = loglog_slope(&eps, &err);
        assert!(q >= 2.9, "{:?} q={q}", chart.submanifold);
    }
}

#[test]
fn csv_export() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.csv");
    PotentialModel::Polynomial.restrict_to_chart(&circle(1.0), 3.0).unwrap().write_csv(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("ybar,V,dV_t,dV_1,d2V_11,mu,h\n"));
    assert_eq!(text.lines().count(), 257);
}

proptest! {
    #[test]
    fn floored_gaussian_within_bounds(x in -5.0f64..5.0, y in -5.0f64..5.0, c in 0.01f64..1.0) {
        let v = PotentialModel::gaussian(c);
        let (lo, hi) = v.bounds(10.0);
        let val = v.value(&[x, y]);
        prop_assert!(val >= lo && val <= hi);
    }
}
