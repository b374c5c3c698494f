//! Fermi charts around one-dimensional submanifolds `K` of model ambient
//! spaces, the metric / inverse-metric / log-determinant expansions in the
//! scaled coordinates `(y, ξ)` with `x = ξ + Φ(εy)`, and the expansion of
//! the Laplace–Beltrami operator, each paired with the exact metric of the
//! instance.
//!
//! Index convention for coordinate vectors and matrices: slot `0` is the
//! tangential coordinate `y` (arclength on `K`), slots `1..n` are the normal
//! coordinates `ξ_1 … ξ_N`. The frames used are orthonormal on `K`, so
//! `g̃ = 1` and the curvature tensor is read off in an orthonormal basis.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::loglog_slope;

/// Ambient model: flat `ℝⁿ` (`κ = 0`) or a space of constant sectional
/// curvature `κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmbientSpace {
    pub dim: usize,
    pub kappa: f64,
}

impl AmbientSpace {
    pub fn flat(dim: usize) -> Self {
        AmbientSpace { dim, kappa: 0.0 }
    }

    /// Unit round sphere `Sⁿ`.
    pub fn sphere(dim: usize) -> Self {
        AmbientSpace { dim, kappa: 1.0 }
    }

    /// `R_{αβγδ} = κ(g_{αγ}g_{βδ} − g_{αδ}g_{βγ})` in an orthonormal frame.
    pub fn riemann(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        if self.kappa == 0.0 {
            return 0.0;
        }
        let dl = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        self.kappa * (dl(a, c) * dl(b, d) - dl(a, d) * dl(b, c))
    }
}

/// Supported one-dimensional submanifolds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Submanifold {
    /// Straight line in flat `ℝⁿ`, periodically identified with the given
    /// length (a closed geodesic of a flat torus).
    Line { length: f64 },
    /// Round circle of the given radius in the `(z₁, z₂)` plane of `ℝⁿ`.
    Circle { radius: f64 },
    /// Great circle of the unit sphere `Sⁿ`.
    GreatCircle,
}

/// Jet of a normal section `Φ` at a point of `K`, derivatives in `ȳ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionJet {
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub d2phi: Vec<f64>,
}

impl SectionJet {
    pub fn zero(n: usize) -> Self {
        SectionJet { phi: vec![0.0; n], dphi: vec![0.0; n], d2phi: vec![0.0; n] }
    }
}

/// A normal vector field along `K` given in closed form.
pub trait NormalSection {
    fn jet(&self, ybar: f64) -> SectionJet;
}

/// `Φ(ȳ) = c`.
#[derive(Debug, Clone)]
pub struct ConstantSection(pub Vec<f64>);

impl NormalSection for ConstantSection {
    fn jet(&self, _ybar: f64) -> SectionJet {
        let n = self.0.len();
        SectionJet { phi: self.0.clone(), dphi: vec![0.0; n], d2phi: vec![0.0; n] }
    }
}

/// `Φ^j(ȳ) = a_j sin(ω ȳ + θ)`.
#[derive(Debug, Clone)]
pub struct TrigSection {
    pub amp: Vec<f64>,
    pub freq: f64,
    pub phase: f64,
}

impl NormalSection for TrigSection {
    fn jet(&self, ybar: f64) -> SectionJet {
        let s = (self.freq * ybar + self.phase).sin();
        let c = (self.freq * ybar + self.phase).cos();
        SectionJet {
            phi: self.amp.iter().map(|a| a * s).collect(),
            dphi: self.amp.iter().map(|a| a * self.freq * c).collect(),
            d2phi: self.amp.iter().map(|a| -a * self.freq * self.freq * s).collect(),
        }
    }
}

/// First and second derivatives of a test function in the scaled
/// coordinates `(y, ξ)`, supplied analytically by the caller.
#[derive(Debug, Clone)]
pub struct FunctionJet {
    pub du: Vec<f64>,
    pub d2u: DMatrix<f64>,
}

/// Which form of the `Δ_g` expansion to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpansionForm {
    /// Terms consistent with the exact metric (signs of the `∇Φ`-coupling
    /// terms fixed, the two cancelling `∂_a u` terms dropped).
    Consistent,
    /// The literal term list including the `∇Φ` couplings as printed.
    AsPrinted,
}

/// Ambient frame at a node of `K`.
#[derive(Debug, Clone, Serialize)]
pub struct Frame {
    pub ybar: f64,
    pub point: Vec<f64>,
    pub tangent: Vec<f64>,
    pub normals: Vec<Vec<f64>>,
    /// `Γ^1_{1i}`.
    pub gamma: Vec<f64>,
    /// `H_i = −Γ^a_{ai}`.
    pub mean_curvature: Vec<f64>,
}

/// Fermi chart of a supported instance, sampled on a uniform `ȳ` grid.
#[derive(Debug, Clone, Serialize)]
pub struct FermiChart {
    pub ambient: AmbientSpace,
    pub submanifold: Submanifold,
    pub frames: Vec<Frame>,
}

/// Order-0/1/2 coefficients of the metric, its inverse and `log det g` in
/// powers of `ε`, at a fixed `(y, ξ, Φ)`.
#[derive(Debug, Clone)]
pub struct MetricExpansion {
    pub metric: [DMatrix<f64>; 3],
    pub inverse: [DMatrix<f64>; 3],
    pub logdet: [f64; 3],
}

impl MetricExpansion {
    fn sum(c: &[DMatrix<f64>; 3], eps: f64) -> DMatrix<f64> {
        &c[0] + &c[1] * eps + &c[2] * (eps * eps)
    }

    pub fn metric_at(&self, eps: f64) -> DMatrix<f64> {
        Self::sum(&self.metric, eps)
    }

    pub fn inverse_at(&self, eps: f64) -> DMatrix<f64> {
        Self::sum(&self.inverse, eps)
    }

    pub fn logdet_at(&self, eps: f64) -> f64 {
        self.logdet[0] + self.logdet[1] * eps + self.logdet[2] * eps * eps
    }

    /// Inverse coefficients from the order-two Neumann series
    /// `(I + εA + ε²B)⁻¹ = I − εA − ε²B + ε²A²` of the metric coefficients.
    pub fn neumann_inverse(&self) -> [DMatrix<f64>; 3] {
        let a = &self.metric[1];
        let b = &self.metric[2];
        [self.metric[0].clone(), -a, a * a - b]
    }

    /// `log det` coefficients from `tr(A)` and `tr(B) − ½ tr(A²)`.
    pub fn trace_logdet(&self) -> [f64; 3] {
        let a = &self.metric[1];
        let b = &self.metric[2];
        [0.0, a.trace(), b.trace() - 0.5 * (a * a).trace()]
    }
}

impl FermiChart {
    /// Builds the chart with `nodes` samples along `K`.
    pub fn build(ambient: AmbientSpace, submanifold: Submanifold, nodes: usize) -> Result<Self> {
        let n = ambient.dim;
        if n < 2 {
            return Err(Error::UnsupportedManifold(format!("ambient dimension {n} < 2")));
        }
        match submanifold {
            Submanifold::Line { length } if ambient.kappa == 0.0 && length > 0.0 => {}
            Submanifold::Circle { radius } if ambient.kappa == 0.0 && radius > 0.0 => {}
            Submanifold::GreatCircle if ambient.kappa > 0.0 => {}
            other => {
                return Err(Error::UnsupportedManifold(format!(
                    "{other:?} in ambient with curvature {}",
                    ambient.kappa
                )))
            }
        }
        let mut chart = FermiChart { ambient, submanifold, frames: Vec::with_capacity(nodes) };
        let len = chart.length();
        for i in 0..nodes {
            let ybar = len * i as f64 / nodes as f64;
            chart.frames.push(chart.frame(ybar));
        }
        Ok(chart)
    }

    pub fn n(&self) -> usize {
        self.ambient.dim
    }

    /// Codimension `N = n − 1`.
    pub fn codim(&self) -> usize {
        self.ambient.dim - 1
    }

    pub fn length(&self) -> f64 {
        match self.submanifold {
            Submanifold::Line { length } => length,
            Submanifold::Circle { radius } => 2.0 * PI * radius,
            Submanifold::GreatCircle => 2.0 * PI / self.ambient.kappa.sqrt(),
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.ybar).collect()
    }

    /// Largest normal distance for which the chart is a diffeomorphism.
    pub fn chart_radius(&self) -> f64 {
        match self.submanifold {
            Submanifold::Line { .. } => f64::INFINITY,
            Submanifold::Circle { radius } => radius,
            Submanifold::GreatCircle => 0.5 * PI / self.ambient.kappa.sqrt(),
        }
    }

    /// `Γ^1_{1i}`; the instances are homogeneous along `K`.
    pub fn gamma_at(&self, _ybar: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.codim()];
        if let Submanifold::Circle { radius } = self.submanifold {
            g[0] = -1.0 / radius;
        }
        g
    }

    /// `H_i = −Γ^a_{ai}`.
    pub fn mean_curvature_at(&self, ybar: f64) -> Vec<f64> {
        self.gamma_at(ybar).into_iter().map(|g| -g).collect()
    }

    /// `Σ_a Γ^a_a(E_i) = 0` for every `i`.
    pub fn is_minimal(&self) -> bool {
        self.frames.iter().all(|f| f.gamma.iter().all(|g| g.abs() < 1e-14))
    }

    /// Curvature tensor at `K` in the orthonormal Fermi frame.
    pub fn riemann(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.ambient.riemann(a, b, c, d)
    }

    fn frame(&self, ybar: f64) -> Frame {
        let n = self.n();
        let nn = self.codim();
        let gamma = self.gamma_at(ybar);
        let mean_curvature = gamma.iter().map(|g| -g).collect();
        let e = |k: usize, dim: usize| -> Vec<f64> {
            let mut v = vec![0.0; dim];
            v[k] = 1.0;
            v
        };
        match self.submanifold {
            Submanifold::Line { .. } => Frame {
                ybar,
                point: { let mut p = vec![0.0; n]; p[0] = ybar; p },
                tangent: e(0, n),
                normals: (1..n).map(|k| e(k, n)).collect(),
                gamma,
                mean_curvature,
            },
            Submanifold::Circle { radius } => {
                let t = ybar / radius;
                let mut point = vec![0.0; n];
                point[0] = radius * t.cos();
                point[1] = radius * t.sin();
                let mut tangent = vec![0.0; n];
                tangent[0] = -t.sin();
                tangent[1] = t.cos();
                let mut normals = Vec::with_capacity(nn);
                let mut radial = vec![0.0; n];
                radial[0] = t.cos();
                radial[1] = t.sin();
                normals.push(radial);
                normals.extend((2..n).map(|k| e(k, n)));
                Frame { ybar, point, tangent, normals, gamma, mean_curvature }
            }
            Submanifold::GreatCircle => {
                let m = n + 1;
                let mut point = vec![0.0; m];
                point[0] = ybar.cos();
                point[1] = ybar.sin();
                let mut tangent = vec![0.0; m];
                tangent[0] = -ybar.sin();
                tangent[1] = ybar.cos();
                Frame { ybar, point, tangent, normals: (2..m).map(|k| e(k, m)).collect(), gamma, mean_curvature }
            }
        }
    }

    /// `F(ȳ, x̄)` in the ambient embedding coordinates (`ℝⁿ`, or `ℝⁿ⁺¹` for
    /// the sphere).
    pub fn embed(&self, ybar: f64, xbar: &[f64]) -> Vec<f64> {
        let f = self.frame(ybar);
        match self.submanifold {
            Submanifold::GreatCircle => {
                let rho = xbar.iter().map(|x| x * x).sum::<f64>().sqrt();
                let (c, s) = (rho.cos(), if rho > 0.0 { rho.sin() / rho } else { 1.0 });
                let mut z: Vec<f64> = f.point.iter().map(|p| c * p).collect();
                for (i, nv) in f.normals.iter().enumerate() {
                    for (zk, nk) in z.iter_mut().zip(nv) {
                        *zk += s * xbar[i] * nk;
                    }
                }
                z
            }
            _ => {
                let mut z = f.point.clone();
                for (i, nv) in f.normals.iter().enumerate() {
                    for (zk, nk) in z.iter_mut().zip(nv) {
                        *zk += xbar[i] * nk;
                    }
                }
                z
            }
        }
    }

    fn check_inside(&self, xbar: &[f64]) -> Result<()> {
        let d = match self.submanifold {
            Submanifold::Circle { radius } => {
                // the chart degenerates where 1 + x₁/r vanishes
                if xbar[0] <= -radius {
                    return Err(Error::OutsideChart { distance: -xbar[0], radius });
                }
                return Ok(());
            }
            _ => xbar.iter().map(|x| x * x).sum::<f64>().sqrt(),
        };
        if d >= self.chart_radius() {
            return Err(Error::OutsideChart { distance: d, radius: self.chart_radius() });
        }
        Ok(())
    }

    /// Exact metric `ḡ(ȳ, x̄)` in Fermi coordinates.
    pub fn exact_bar_metric(&self, _ybar: f64, xbar: &[f64]) -> Result<DMatrix<f64>> {
        self.check_inside(xbar)?;
        let n = self.n();
        let mut g = DMatrix::identity(n, n);
        match self.submanifold {
            Submanifold::Line { .. } => {}
            Submanifold::Circle { radius } => {
                let a = 1.0 + xbar[0] / radius;
                g[(0, 0)] = a * a;
            }
            Submanifold::GreatCircle => {
                let k = self.ambient.kappa.sqrt();
                let rho = xbar.iter().map(|x| x * x).sum::<f64>().sqrt();
                g[(0, 0)] = (k * rho).cos().powi(2);
                if rho > 0.0 {
                    let ratio = ((k * rho).sin() / (k * rho)).powi(2);
                    for i in 0..n - 1 {
                        for j in 0..n - 1 {
                            let rr = xbar[i] * xbar[j] / (rho * rho);
                            let dl = if i == j { 1.0 } else { 0.0 };
                            g[(i + 1, j + 1)] = rr + ratio * (dl - rr);
                        }
                    }
                }
            }
        }
        Ok(g)
    }

    /// Exact metric in the scaled coordinates `(y, ξ)`, `x = ξ + Φ(εy)`.
    pub fn exact_metric(&self, y: f64, xi: &[f64], section: &dyn NormalSection, eps: f64) -> Result<DMatrix<f64>> {
        let n = self.n();
        let ybar = eps * y;
        let jet = section.jet(ybar);
        let xbar: Vec<f64> = xi.iter().zip(&jet.phi).map(|(x, p)| eps * (x + p)).collect();
        let gbar = self.exact_bar_metric(ybar, &xbar)?;
        // Jacobian ∂(y, x)/∂(y, ξ)
        let mut jac = DMatrix::identity(n, n);
        for j in 0..n - 1 {
            jac[(j + 1, 0)] = eps * jet.dphi[j];
        }
        Ok(jac.transpose() * gbar * jac)
    }

    /// Metric, inverse and log-determinant coefficients at `(y, ξ)` for a
    /// section jet evaluated at `ȳ = εy`.
    pub fn metric_expansion_at(&self, xi: &[f64], jet: &SectionJet) -> MetricExpansion {
        self.metric_expansion_with(xi, jet, ExpansionForm::Consistent)
    }

    pub fn metric_expansion_with(&self, xi: &[f64], jet: &SectionJet, form: ExpansionForm) -> MetricExpansion {
        let n = self.n();
        let nn = self.codim();
        let gam = self.gamma_at(0.0);
        let r = |a: usize, b: usize, c: usize, d: usize| self.riemann(a, b, c, d);
        let big: Vec<f64> = xi.iter().zip(&jet.phi).map(|(x, p)| x + p).collect();
        let dp = &jet.dphi;
        let zero = || DMatrix::zeros(n, n);
        let (mut g0, mut g1, mut g2) = (DMatrix::identity(n, n), zero(), zero());
        let (mut h0, mut h1, mut h2) = (DMatrix::identity(n, n), zero(), zero());
        g0[(0, 0)] = 1.0;
        h0[(0, 0)] = 1.0;
        // tangential block (k = 1, g̃ = 1, Γ^1_{1i} = gam[i])
        let gx: f64 = (0..nn).map(|i| gam[i] * big[i]).sum();
        g1[(0, 0)] = -2.0 * gx;
        h1[(0, 0)] = 2.0 * gx;
        let mut rtt = 0.0;
        for k in 0..nn {
            for l in 0..nn {
                rtt += r(k + 1, 0, 0, l + 1) * big[k] * big[l];
            }
        }
        let dp2: f64 = dp.iter().map(|d| d * d).sum();
        g2[(0, 0)] = rtt + gx * gx + dp2;
        h2[(0, 0)] = -rtt + 3.0 * gx * gx;
        let coupling_sign = match form {
            ExpansionForm::Consistent => -1.0,
            ExpansionForm::AsPrinted => 1.0,
        };
        for j in 0..nn {
            let mut rtn = 0.0;
            for k in 0..nn {
                for l in 0..nn {
                    rtn += r(k + 1, 0, j + 1, l + 1) * big[k] * big[l];
                }
            }
            g1[(0, j + 1)] = dp[j];
            g1[(j + 1, 0)] = dp[j];
            g2[(0, j + 1)] = 2.0 / 3.0 * rtn;
            g2[(j + 1, 0)] = 2.0 / 3.0 * rtn;
            h1[(0, j + 1)] = -dp[j];
            h1[(j + 1, 0)] = -dp[j];
            let v = -2.0 / 3.0 * rtn + coupling_sign * dp[j] * 2.0 * gx;
            h2[(0, j + 1)] = v;
            h2[(j + 1, 0)] = v;
            for i in 0..nn {
                let mut rnn = 0.0;
                for k in 0..nn {
                    for l in 0..nn {
                        rnn += r(k + 1, i + 1, j + 1, l + 1) * big[k] * big[l];
                    }
                }
                g2[(i + 1, j + 1)] = rnn / 3.0;
                h2[(i + 1, j + 1)] = -rnn / 3.0 + dp[i] * dp[j];
            }
        }
        // log det g
        let mut ld2 = 0.0;
        for m in 0..nn {
            for l in 0..nn {
                let mut rs = 0.0;
                for s in 0..nn {
                    rs += r(m + 1, s + 1, s + 1, l + 1);
                }
                ld2 += (rs / 3.0 + r(m + 1, 0, 0, l + 1) - gam[m] * gam[l]) * big[m] * big[l];
            }
        }
        MetricExpansion { metric: [g0, g1, g2], inverse: [h0, h1, h2], logdet: [0.0, -2.0 * gx, ld2] }
    }

    /// Expansion of `Δ_g u` through `ε²` (plus the displayed `ε³` term).
    pub fn expand_laplacian(&self, xi: &[f64], jet: &SectionJet, eps: f64, u: &FunctionJet) -> f64 {
        self.expand_laplacian_with(xi, jet, eps, u, ExpansionForm::Consistent)
    }

    pub fn expand_laplacian_with(
        &self,
        xi: &[f64],
        jet: &SectionJet,
        eps: f64,
        u: &FunctionJet,
        form: ExpansionForm,
    ) -> f64 {
        let nn = self.codim();
        let gam = self.gamma_at(0.0);
        let r = |a: usize, b: usize, c: usize, d: usize| self.riemann(a, b, c, d);
        let big: Vec<f64> = xi.iter().zip(&jet.phi).map(|(x, p)| x + p).collect();
        let (dp, d2p) = (&jet.dphi, &jet.d2phi);
        let du = |k: usize| u.du[k];
        let d2 = |a: usize, b: usize| u.d2u[(a, b)];
        let e2 = eps * eps;
        let gx: f64 = (0..nn).map(|i| gam[i] * big[i]).sum();
        let trace_gamma: f64 = gam.iter().sum::<f64>();
        let _ = trace_gamma;

        // ∂_ii u + Δ_{K_ε} u
        let mut s: f64 = (0..nn).map(|i| d2(i + 1, i + 1)).sum::<f64>() + d2(0, 0);
        // −ε Γ^b_{bj} ∂_j u
        s -= eps * (0..nn).map(|j| gam[j] * du(j + 1)).sum::<f64>();
        // −2ε ∂_b̄Φ^j ∂²_{aj} u
        s -= 2.0 * eps * (0..nn).map(|j| dp[j] * d2(0, j + 1)).sum::<f64>();
        // +2ε Γ^a_{cs} Ξ^s ∂²_{ab} u
        s += 2.0 * eps * gx * d2(0, 0);
        // ε² ∇Φ^i·∇Φ^j ∂²_{ij} u − ⅓ε² R_{kijl}ΞΞ ∂²_{ij} u
        for i in 0..nn {
            for j in 0..nn {
                let mut rq = 0.0;
                for k in 0..nn {
                    for l in 0..nn {
                        rq += r(k + 1, i + 1, j + 1, l + 1) * big[k] * big[l];
                    }
                }
                s += e2 * (dp[i] * dp[j] - rq / 3.0) * d2(i + 1, j + 1);
            }
        }
        // −(4/3)ε² R_{kajl}ΞΞ ∂²_{aj} u and the ∇Φ–Γ coupling on ∂²_{aj} u
        let coupling = match form {
            ExpansionForm::Consistent => -1.0,
            ExpansionForm::AsPrinted => 1.0,
        };
        for j in 0..nn {
            let mut rq = 0.0;
            for k in 0..nn {
                for l in 0..nn {
                    rq += r(k + 1, 0, j + 1, l + 1) * big[k] * big[l];
                }
            }
            s -= 4.0 / 3.0 * e2 * rq * d2(0, j + 1);
            s += coupling * 2.0 * e2 * dp[j] * 2.0 * gx * d2(0, j + 1);
        }
        // ε²{−R_{kcdl} + 3ΓΓ}ΞΞ ∂²_{ab} u
        let mut rtt = 0.0;
        for k in 0..nn {
            for l in 0..nn {
                rtt += r(k + 1, 0, 0, l + 1) * big[k] * big[l];
            }
        }
        s += e2 * (-rtt + 3.0 * gx * gx) * d2(0, 0);
        // ε²(R_{kabj} + ⅔R_{kiij} − ΓΓ)Ξ^k ∂_j u − ε²Δ_KΦ^j ∂_j u
        for j in 0..nn {
            let mut c = 0.0;
            for k in 0..nn {
                let mut rii = 0.0;
                for i in 0..nn {
                    rii += r(k + 1, i + 1, i + 1, j + 1);
                }
                c += (r(k + 1, 0, 0, j + 1) + 2.0 / 3.0 * rii - gam[k] * gam[j]) * big[k];
            }
            s += e2 * c * du(j + 1);
            s -= e2 * d2p[j] * du(j + 1);
            // displayed ε³ term 2ε³ ∂²Φ^j Γ^b_{ak} Ξ^k ∂_j u
            s += coupling * 2.0 * eps * e2 * d2p[j] * gx * du(j + 1);
        }
        // −⅔ε² R_{jajk}Ξ^k ∂_a u
        let mut c = 0.0;
        for j in 0..nn {
            for k in 0..nn {
                c += r(j + 1, 0, j + 1, k + 1) * big[k];
            }
        }
        s -= 2.0 / 3.0 * e2 * c * du(0);
        if form == ExpansionForm::AsPrinted {
            // −ε²Γ^d_{dk}∂_b̄Φ^k ∂_a u + 2ε²{Γ + Γ}∂_b̄Φ^i ∂_a u
            let gp: f64 = (0..nn).map(|k| gam[k] * dp[k]).sum();
            s += e2 * (-gp + 4.0 * gp) * du(0);
        }
        s
    }

    /// `Δ_g u` from the exact metric through
    /// `g^{αβ}∂²u + (∂_α g^{αβ})∂_β u + ½ g^{αβ}∂_α(log det g)∂_β u`, with the
    /// metric derivatives taken by fourth order differences of the closed
    /// form.
    pub fn exact_laplacian(
        &self,
        y: f64,
        xi: &[f64],
        section: &dyn NormalSection,
        eps: f64,
        u: &FunctionJet,
    ) -> Result<f64> {
        let n = self.n();
        let coords = |k: usize, h: f64| -> (f64, Vec<f64>) {
            let mut yy = y;
            let mut xx = xi.to_vec();
            if k == 0 {
                yy += h;
            } else {
                xx[k - 1] += h;
            }
            (yy, xx)
        };
        let inv_logdet = |k: usize, h: f64| -> Result<(DMatrix<f64>, f64)> {
            let (yy, xx) = coords(k, h);
            let g = self.exact_metric(yy, &xx, section, eps)?;
            let det = g.determinant();
            Ok((g.try_inverse().expect("metric is positive definite"), det.ln()))
        };
        let (ginv, _) = inv_logdet(0, 0.0)?;
        let step = 1e-3;
        let mut div = vec![0.0; n];
        let mut dlog = vec![0.0; n];
        for a in 0..n {
            let (p1, l1) = inv_logdet(a, step)?;
            let (m1, lm1) = inv_logdet(a, -step)?;
            let (p2, l2) = inv_logdet(a, 2.0 * step)?;
            let (m2, lm2) = inv_logdet(a, -2.0 * step)?;
            let d = (&m2 - &p2 + (&p1 - &m1) * 8.0) / (12.0 * step);
            for b in 0..n {
                div[b] += d[(a, b)];
            }
            dlog[a] = (lm2 - l2 + 8.0 * (l1 - lm1)) / (12.0 * step);
        }
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += ginv[(a, b)] * u.d2u[(a, b)] + 0.5 * ginv[(a, b)] * dlog[a] * u.du[b];
            }
            s += div[a] * u.du[a];
        }
        Ok(s)
    }

    /// JSON dump of frames, `Γ` and `H` on the `ȳ` grid.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("chart serializes")
    }
}

/// One row of the `epsilon,term,expansion,exact,abs_err` report.
#[derive(Debug, Clone, Serialize)]
pub struct ExpansionRow {
    pub epsilon: f64,
    pub term: String,
    pub expansion: f64,
    pub exact: f64,
    pub abs_err: f64,
}

/// Fitted discrepancy orders of the metric, inverse, log det and Laplacian
/// expansions.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorClassReport {
    pub rows: Vec<ExpansionRow>,
    pub order_metric: f64,
    pub order_inverse: f64,
    pub order_logdet: f64,
    pub order_laplacian: f64,
}

impl ErrorClassReport {
    pub fn min_order(&self) -> f64 {
        self.order_metric.min(self.order_inverse).min(self.order_logdet).min(self.order_laplacian)
    }
}

/// Gaussian bump test function `u = e^{−|ξ−c|²/2}(1 + a sin y)` with its jet.
pub fn bump_jet(y: f64, xi: &[f64], center: &[f64], amp: f64) -> (f64, FunctionJet) {
    let n = xi.len() + 1;
    let d: Vec<f64> = xi.iter().zip(center).map(|(x, c)| x - c).collect();
    let g = (-0.5 * d.iter().map(|v| v * v).sum::<f64>()).exp();
    let t = 1.0 + amp * y.sin();
    let dt = amp * y.cos();
    let d2t = -amp * y.sin();
    let mut du = vec![0.0; n];
    let mut d2u = DMatrix::zeros(n, n);
    du[0] = g * dt;
    d2u[(0, 0)] = g * d2t;
    for i in 0..n - 1 {
        du[i + 1] = -d[i] * g * t;
        d2u[(0, i + 1)] = -d[i] * g * dt;
        d2u[(i + 1, 0)] = d2u[(0, i + 1)];
        for j in 0..n - 1 {
            let dl = if i == j { 1.0 } else { 0.0 };
            d2u[(i + 1, j + 1)] = (d[i] * d[j] - dl) * g * t;
        }
    }
    (g * t, FunctionJet { du, d2u })
}

/// Measures expansion-minus-exact discrepancies over an `ε` sequence and
/// fits their orders. The point is held fixed on `K` (`ȳ`, so `y = ȳ/ε`) and
/// in `ξ`; the test function is a bump translated along `y` with the point.
pub fn error_class_bound_check(
    chart: &FermiChart,
    section: &dyn NormalSection,
    ybar: f64,
    xi: &[f64],
    epsilons: &[f64],
    form: ExpansionForm,
) -> Result<ErrorClassReport> {
    let mut rows = Vec::new();
    let (mut em, mut ei, mut el, mut eu) = (vec![], vec![], vec![], vec![]);
    let center: Vec<f64> = xi.iter().map(|x| 0.5 * x).collect();
    for &eps in epsilons {
        let y = ybar / eps;
        let jet = section.jet(ybar);
        let exp = chart.metric_expansion_with(xi, &jet, form);
        let g = chart.exact_metric(y, xi, section, eps)?;
        let gi = g.clone().try_inverse().expect("positive definite");
        let gm = exp.metric_at(eps);
        let hm = exp.inverse_at(eps);
        let dm = (&g - &gm).abs().max();
        let di = (&gi - &hm).abs().max();
        let ld_exact = g.determinant().ln();
        let ld = exp.logdet_at(eps);
        let (_, ujet) = bump_jet(0.3, xi, &center, 0.3);
        let lap_exact = chart.exact_laplacian(y, xi, section, eps, &ujet)?;
        let lap = chart.expand_laplacian_with(xi, &jet, eps, &ujet, form);
        rows.push(ExpansionRow { epsilon: eps, term: "metric".into(), expansion: gm[(0, 0)], exact: g[(0, 0)], abs_err: dm });
        rows.push(ExpansionRow { epsilon: eps, term: "inverse".into(), expansion: hm[(0, 0)], exact: gi[(0, 0)], abs_err: di });
        rows.push(ExpansionRow { epsilon: eps, term: "logdet".into(), expansion: ld, exact: ld_exact, abs_err: (ld - ld_exact).abs() });
        rows.push(ExpansionRow { epsilon: eps, term: "laplacian".into(), expansion: lap, exact: lap_exact, abs_err: (lap - lap_exact).abs() });
        em.push(dm);
        ei.push(di);
        el.push((ld - ld_exact).abs());
        eu.push((lap - lap_exact).abs());
    }
    let fit = |e: &[f64]| -> f64 {
        if e.iter().all(|v| *v < 1e-13) {
            f64::INFINITY
        } else {
            loglog_slope(epsilons, &e.iter().map(|v| v.max(1e-300)).collect::<Vec<_>>())
        }
    };
    Ok(ErrorClassReport {
        order_metric: fit(&em),
        order_inverse: fit(&ei),
        order_logdet: fit(&el),
        order_laplacian: fit(&eu),
        rows,
    })
}
