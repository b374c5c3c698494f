use conc::geom::*;
use nalgebra::DMatrix;

fn circle(n: usize) -> FermiChart {
    FermiChart::build(AmbientSpace::flat(n), Submanifold::Circle { radius: 1.0 }, 256).unwrap()
}

fn great(n: usize) -> FermiChart {
    FermiChart::build(AmbientSpace::sphere(n), Submanifold::GreatCircle, 256).unwrap()
}

#[test]
fn circle_metric_and_logdet_at_unit_scale() {
    let c = circle(2);
    let exp = c.metric_expansion_at(&[0.1], &SectionJet::zero(1));
    let g = exp.metric_at(1.0);
    assert!((g[(0, 0)] - 1.21).abs() < 1e-14);
    let exact = c.exact_bar_metric(0.0, &[0.1]).unwrap();
    assert!((exact[(0, 0)] - 1.21).abs() < 1e-14);
    // log det through second order: 2·0.1 − 0.01 = 0.19 against 2 log 1.1
    assert!((exp.logdet_at(1.0) - 0.19).abs() < 1e-14);
    assert!((exact.determinant().ln() - 2.0 * 1.1f64.ln()).abs() < 1e-14);
    assert!((2.0 * 1.1f64.ln() - 0.19062).abs() < 1e-5);
}

#[test]
fn straight_line_is_exact() {
    let c = FermiChart::build(AmbientSpace::flat(3), Submanifold::Line { length: 5.0 }, 64).unwrap();
    let sec = TrigSection { amp: vec![0.2, -0.1], freq: 2.0 * std::f64::consts::PI / 5.0, phase: 0.3 };
    for eps in [0.3, 0.1] {
        let jet = sec.jet(eps * 0.7);
        let exp = c.metric_expansion_at(&[0.4, 0.2], &jet);
        let g = c.exact_metric(0.7, &[0.4, 0.2], &sec, eps).unwrap();
        assert!((&g - exp.metric_at(eps)).abs().max() < 1e-14);
    }
    assert!(c.is_minimal());
}

#[test]
fn frames_and_curvature() {
    let s = great(2);
    assert!((s.riemann(0, 1, 0, 1) - 1.0).abs() < 1e-15);
    assert!(s.is_minimal());
    assert!(s.frames.iter().all(|f| f.mean_curvature[0] == 0.0));
    let c = circle(3);
    assert_eq!(c.frames.len(), 256);
    for f in &c.frames {
        assert!((f.mean_curvature[0] - 1.0).abs() < 1e-15 && f.mean_curvature[1] == 0.0);
        let dot: f64 = f.tangent.iter().zip(&f.normals[0]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-15);
    }
    // F maps into the sphere
    let z = s.embed(0.4, &[0.3]);
    assert!((z.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
    assert!(matches!(s.exact_bar_metric(0.0, &[2.0]), Err(conc::Error::OutsideChart { .. })));
    assert!(FermiChart::build(AmbientSpace::flat(2), Submanifold::GreatCircle, 8).is_err());
}

#[test]
fn neumann_series_matches_inverse_coefficients() {
    let sec = TrigSection { amp: vec![0.3, 0.2], freq: 2.0, phase: 0.1 };
    for c in [circle(3), great(3)] {
        let jet = sec.jet(0.4);
        let e = c.metric_expansion_at(&[0.5, -0.3], &jet);
        let neu = e.neumann_inverse();
        for k in 0..3 {
            assert!((&neu[k] - &e.inverse[k]).abs().max() < 1e-14, "order {k}");
        }
        let tr = e.trace_logdet();
        for k in 0..3 {
            assert!((tr[k] - e.logdet[k]).abs() < 1e-14, "logdet order {k}");
        }
    }
}

#[test]
fn exact_laplacian_matches_polar_form() {
    let c = circle(2);
    let sec = ConstantSection(vec![0.0]);
    let (eps, y, xi) = (0.2, 0.4, 0.6);
    let (_, u) = bump_jet(y, &[xi], &[0.1], 0.3);
    let a = 1.0 + eps * xi;
    let polar = u.d2u[(1, 1)] + eps / a * u.du[1] + u.d2u[(0, 0)] / (a * a);
    let lap = c.exact_laplacian(y, &[xi], &sec, eps, &u).unwrap();
    assert!((lap - polar).abs() < 1e-9, "{lap} vs {polar}");
}

#[test]
fn laplacian_expansion_is_third_order() {
    let eps = [0.1, 0.05, 0.025];
    let zero1 = ConstantSection(vec![0.0]);
    let rep = error_class_bound_check(&circle(2), &zero1, 0.3, &[0.7], &eps, ExpansionForm::Consistent).unwrap();
    assert!(rep.order_laplacian >= 2.9, "{rep:?}");
    assert!(rep.min_order() >= 2.9);
    let sec2 = TrigSection { amp: vec![0.3, 0.2], freq: 1.0, phase: 0.2 };
    for chart in [circle(3), great(2), great(3)] {
        let sec: Box<dyn NormalSection> = if chart.codim() == 1 {
            Box::new(TrigSection { amp: vec![0.3], freq: 1.0, phase: 0.2 })
        } else {
            Box::new(sec2.clone())
        };
        // ∇Φ-dependent ε⁴ terms are still visible at ε = 0.1
        let fine = [0.05, 0.025, 0.0125];
        let rep = error_class_bound_check(&chart, sec.as_ref(), 0.3, &vec![0.5; chart.codim()], &fine, ExpansionForm::Consistent).unwrap();
        assert!(rep.min_order() >= 2.9, "{:?} {rep:?}", chart.submanifold);
    }
}

#[test]
fn printed_gradient_couplings_lose_an_order() {
    let eps = [0.1, 0.05, 0.025];
    let sec = TrigSection { amp: vec![0.3], freq: 1.0, phase: 0.2 };
    let rep = error_class_bound_check(&circle(2), &sec, 0.3, &[0.5], &eps, ExpansionForm::AsPrinted).unwrap();
    assert!(rep.order_laplacian < 2.5 && rep.order_inverse < 2.5, "{rep:?}");
}

#[test]
fn lipschitz_in_section() {
    let c = circle(2);
    let eps = 0.05;
    let (_, u) = bump_jet(0.3, &[0.6], &[0.2], 0.3);
    let disc = |a: f64| {
        let s = TrigSection { amp: vec![a], freq: 2.0, phase: 0.0 };
        let jet = s.jet(eps * 0.3);
        c.expand_laplacian(&[0.6], &jet, eps, &u) - c.exact_laplacian(0.3, &[0.6], &s, eps, &u).unwrap()
    };
    let base = disc(0.2);
    let d1 = (disc(0.21) - base).abs();
    let d2 = (disc(0.22) - base).abs();
    assert!(d2 <= 2.5 * d1 + 1e-12, "{d1:e} {d2:e}");
    let _ = DMatrix::<f64>::zeros(1, 1);
}

#[test]
fn chart_json_dump() {
    let v = circle(2).to_json();
    assert_eq!(v["frames"].as_array().unwrap().len(), 256);
    assert_eq!(v["submanifold"]["kind"], "circle");
}
