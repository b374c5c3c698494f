//! Order-by-order construction of the approximate solution around a
//! rotation-invariant concentration curve in the plane, the global gluing,
//! and the reduced fixed-point solve.
//!
//! The construction runs for one normal direction (`N = 1`) and data that do
//! not depend on the arclength: a circle centred at the centre of a radial
//! potential, or a straight line with constant potential. In that setting
//! every correction `w_ℓ` and every section `Φ_j` is independent of `ȳ`, and
//! the scaled operator reduces to an exact one-dimensional operator in the
//! normal variable.

mod reduced;

pub use reduced::*;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{AmbientSpace, FermiChart, Submanifold};
use crate::k_ops::JacobiOperator;
use crate::linop::{fd_derivatives, interpolate_uniform, LinearizedOperator};
use crate::numeric::linear_slope;
use crate::potential::PotentialModel;
use crate::profile::{solve_ground_state_with, LimitProblem, ProfileOptions};

/// Highest order supported by the expansion engine.
pub const MAX_ORDER: usize = 6;

/// Relative Fredholm defect accepted once the free section is fixed.
const TOL_SOLVABLE: f64 = 1e-7;

/// Weight exponent of the interior residual norm.
pub const RHO: f64 = crate::norms::RHO;

/// A function on the line sampled on the half grid `0, h, 2h, …` as its
/// even and odd parts: `f(ξ̄) = even(|ξ̄|) + sgn(ξ̄)·odd(|ξ̄|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sym {
    pub even: Vec<f64>,
    pub odd: Vec<f64>,
}

impl Sym {
    pub fn zeros(m: usize) -> Self {
        Sym { even: vec![0.0; m], odd: vec![0.0; m] }
    }

    pub fn from_even(v: Vec<f64>) -> Self {
        let m = v.len();
        Sym { even: v, odd: vec![0.0; m] }
    }

    pub fn from_odd(v: Vec<f64>) -> Self {
        let m = v.len();
        Sym { even: vec![0.0; m], odd: v }
    }

    pub fn constant(m: usize, c: f64) -> Self {
        Sym::from_even(vec![c; m])
    }

    pub fn len(&self) -> usize {
        self.even.len()
    }

    pub fn is_empty(&self) -> bool {
        self.even.is_empty()
    }

    pub fn axpy(&mut self, a: f64, x: &Sym) {
        self.even.iter_mut().zip(&x.even).for_each(|(s, v)| *s += a * v);
        self.odd.iter_mut().zip(&x.odd).for_each(|(s, v)| *s += a * v);
    }

    pub fn scaled(&self, a: f64) -> Sym {
        Sym { even: self.even.iter().map(|v| a * v).collect(), odd: self.odd.iter().map(|v| a * v).collect() }
    }

    pub fn mul(&self, o: &Sym) -> Sym {
        let m = self.len();
        let mut out = Sym::zeros(m);
        for i in 0..m {
            out.even[i] = self.even[i] * o.even[i] + self.odd[i] * o.odd[i];
            out.odd[i] = self.even[i] * o.odd[i] + self.odd[i] * o.even[i];
        }
        out
    }

    /// Division by an even positive function.
    pub fn div_even(&self, d: &[f64]) -> Sym {
        Sym {
            even: self.even.iter().zip(d).map(|(v, d)| v / d).collect(),
            odd: self.odd.iter().zip(d).map(|(v, d)| v / d).collect(),
        }
    }

    /// First and second derivative in `ξ̄`, fourth order.
    pub fn derivatives(&self, h: f64) -> (Sym, Sym) {
        let (de1, de2) = fd_derivatives(&self.even, h, true);
        let (do1, do2) = fd_derivatives(&self.odd, h, false);
        (Sym { even: do1, odd: de1 }, Sym { even: de2, odd: do2 })
    }

    /// Value at `ξ̄` by cubic interpolation; zero beyond the grid.
    pub fn at(&self, h: f64, xi: f64) -> f64 {
        let edge = (self.even.len() - 1) as f64 * h;
        let mut a = xi.abs();
        // past the table the tail continues at the unit decay rate
        let mut tail = 1.0;
        if a > edge {
            tail = (edge - a).exp();
            a = edge;
        }
        let e = tail * interpolate_uniform(&self.even, h, a);
        let o = tail * interpolate_uniform(&self.odd, h, a);
        if xi < 0.0 {
            e - o
        } else {
            e + o
        }
    }

    /// Value at node `j` of the full line `ξ̄ = j·h`, `|j| < len`.
    pub fn node(&self, j: isize) -> f64 {
        let i = j.unsigned_abs();
        if j < 0 {
            self.even[i] - self.odd[i]
        } else {
            self.even[i] + self.odd[i]
        }
    }

    pub fn sup(&self) -> f64 {
        self.even.iter().zip(&self.odd).fold(0.0_f64, |m, (e, o)| m.max((e + o).abs()).max((e - o).abs()))
    }
}

/// Truncated power series in `ε` with grid-function coefficients.
type Series = Vec<Sym>;

fn series_zero(m: usize, k: usize) -> Series {
    vec![Sym::zeros(m); k + 1]
}

fn series_mul(a: &Series, b: &Series) -> Series {
    let k = a.len().min(b.len()) - 1;
    let m = a[0].len();
    let mut out = series_zero(m, k);
    for i in 0..=k {
        for j in 0..=(k - i) {
            if is_zero(&a[i]) || is_zero(&b[j]) {
                continue;
            }
            out[i + j].axpy(1.0, &a[i].mul(&b[j]));
        }
    }
    out
}

fn is_zero(s: &Sym) -> bool {
    s.even.iter().all(|v| *v == 0.0) && s.odd.iter().all(|v| *v == 0.0)
}

/// `Σ_j c_j x^j` for a series `x` without constant term.
fn series_compose(c: &[f64], x: &Series) -> Series {
    let k = x.len() - 1;
    let m = x[0].len();
    let mut out = series_zero(m, k);
    out[0] = Sym::constant(m, c[0]);
    let mut pow = series_zero(m, k);
    pow[0] = Sym::constant(m, 1.0);
    for cj in c.iter().skip(1).take(k) {
        pow = series_mul(&pow, x);
        for (o, p) in out.iter_mut().zip(&pow) {
            o.axpy(*cj, p);
        }
    }
    out
}

fn binomial(p: f64, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (p - i as f64) / (i as f64 + 1.0))
}

/// Normal geometry of the concentration curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalModel {
    /// Circle of the given radius about the centre of a radial potential.
    Circle { radius: f64 },
    /// Straight line with constant potential.
    Line,
}

/// Everything the expansion needs that does not depend on the order.
#[derive(Debug, Clone)]
pub struct AnsatzContext {
    pub linop: LinearizedOperator,
    pub model: NormalModel,
    pub potential: PotentialModel,
    pub p: f64,
    pub sigma: f64,
    /// `V` and its normal derivatives on `K`.
    pub vder: Vec<f64>,
    pub mu: f64,
    pub h: f64,
    /// `Γ¹₁₁`; the mean curvature is `−Γ`.
    pub gamma: f64,
    /// `σ∂_ν V + V·H` on `K`.
    pub stationary_residual: f64,
    pub w0: Sym,
    pub w0d: Sym,
    pub w0dd: Sym,
    pub z: Sym,
    pub zd: Sym,
    pub zdd: Sym,
}

impl AnsatzContext {
    /// Circle of radius `radius` in the plane with a radial potential.
    pub fn circle(potential: &PotentialModel, p: f64, radius: f64) -> Result<Self> {
        if !potential.is_radial() {
            return Err(Error::UnsupportedManifold("the expansion needs a radial potential".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidProblem(format!("radius {radius} must be positive")));
        }
        let vder = potential.radial_derivatives(radius, MAX_ORDER + 2)?;
        Self::assemble(NormalModel::Circle { radius }, potential.clone(), p, vder, -1.0 / radius)
    }

    /// Straight line in the plane with `V ≡ value`.
    pub fn line(value: f64, p: f64) -> Result<Self> {
        let mut vder = vec![0.0; MAX_ORDER + 3];
        vder[0] = value;
        Self::assemble(NormalModel::Line, PotentialModel::constant(value), p, vder, 0.0)
    }

    fn assemble(model: NormalModel, potential: PotentialModel, p: f64, vder: Vec<f64>, gamma: f64) -> Result<Self> {
        if vder[0] <= 0.0 {
            return Err(Error::BoundViolation { value: vder[0], lo: 0.0, hi: f64::INFINITY });
        }
        let problem = LimitProblem::new(1, p)?;
        let sigma = problem.sigma();
        let profile = solve_ground_state_with(problem, ProfileOptions { r_max: 80.0, ..ProfileOptions::default() })?;
        let linop = LinearizedOperator::assemble(&profile)?;
        let hs = profile.step;
        let mu = vder[0].sqrt();
        let h = vder[0].powf(1.0 / (p - 1.0));
        let w0 = Sym::from_even(profile.w.clone());
        let w0d = Sym::from_odd(profile.wp.clone());
        let w0dd = Sym::from_even((0..profile.len()).map(|i| profile.second_derivative_at(i)).collect());
        let z = Sym::from_even(linop.z.clone());
        let (zd, zdd) = z.derivatives(hs);
        let stationary_residual = sigma * vder[1] - vder[0] * gamma;
        Ok(AnsatzContext {
            linop,
            model,
            potential,
            p,
            sigma,
            vder,
            mu,
            h,
            gamma,
            stationary_residual,
            w0,
            w0d,
            w0dd,
            z,
            zd,
            zdd,
        })
    }

    pub fn step(&self) -> f64 {
        self.linop.profile.step
    }

    pub fn len(&self) -> usize {
        self.linop.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linop.is_empty()
    }

    pub fn lambda0(&self) -> f64 {
        self.linop.lambda0
    }

    pub fn mean_curvature(&self) -> f64 {
        -self.gamma
    }

    /// Radius of `K` for the circle, `∞` for the line.
    pub fn radius(&self) -> f64 {
        match self.model {
            NormalModel::Circle { radius } => radius,
            NormalModel::Line => f64::INFINITY,
        }
    }

    /// Length of `K` in original units; the line is taken with period `2π`.
    pub fn length(&self) -> f64 {
        match self.model {
            NormalModel::Circle { radius } => 2.0 * std::f64::consts::PI * radius,
            NormalModel::Line => 2.0 * std::f64::consts::PI,
        }
    }

    /// `V` at signed distance `d` from `K` along the normal.
    pub fn potential_at(&self, d: f64) -> f64 {
        match self.model {
            NormalModel::Circle { radius } => {
                self.potential.radial_derivatives((radius + d).abs(), 0).map(|v| v[0]).unwrap_or(f64::NAN)
            }
            NormalModel::Line => self.vder[0],
        }
    }

    /// Coefficient of `∂_x` in the Laplacian at signed distance `d`.
    pub fn drift_at(&self, d: f64) -> f64 {
        match self.model {
            NormalModel::Circle { radius } => 1.0 / (radius + d),
            NormalModel::Line => 0.0,
        }
    }

    /// Jacobi operator of the circle on a chart with `nodes` points; the
    /// line has the translations in its kernel.
    pub fn jacobi(&self, nodes: usize) -> Result<JacobiOperator> {
        match self.model {
            NormalModel::Circle { radius } => {
                let chart = FermiChart::build(AmbientSpace::flat(2), Submanifold::Circle { radius }, nodes)?;
                let rs = self.potential.restrict_to_chart(&chart, self.p)?;
                JacobiOperator::assemble(&chart, &rs)
            }
            NormalModel::Line => Err(Error::DegenerateOperator(0.0)),
        }
    }

    /// `∫F₂∂w₀` per unit `e` with `Φ₀ = 0`: the coefficient `c_G·μ⁻¹Γ` of the
    /// `e`-dependent part of the order-two solvability condition.
    pub fn e_solvability_coefficient(&self) -> Result<f64> {
        let a = self.build(2, 1.0, 0.0)?;
        let b = self.build(2, 0.0, 0.0)?;
        // at Φ₀ = 0 the defect is −slope·Φ₀(solved)
        Ok(-(a.solvability_slopes[0] * a.phis[0] - b.solvability_slopes[0] * b.phis[0]))
    }

    /// `∫ f ∂w₀` over the line for the odd part of `f`.
    pub fn kernel_overlap(&self, f: &Sym) -> f64 {
        self.linop.inner(&f.odd, &self.linop.profile.wp)
    }

    /// `∫ f Z` over the line for the even part of `f`.
    pub fn z_overlap(&self, f: &Sym) -> f64 {
        self.linop.inner(&f.even, &self.linop.z)
    }

    /// Coefficients of `S̃_ε(v)` in `ε` up to order `k`, where
    /// `v = w₀ + εeZ + Σ ε^ℓ w_ℓ` and the normal offset is `Φ(ε) = Σ ε^j Φ_j`.
    fn residual_series(&self, ws: &[Correction], phis: &[f64], e: f64, k: usize) -> Series {
        let m = self.len();
        let hs = self.step();
        let mut v = series_zero(m, k);
        let mut dv = series_zero(m, k);
        let mut ddv = series_zero(m, k);
        v[0] = self.w0.clone();
        dv[0] = self.w0d.clone();
        ddv[0] = self.w0dd.clone();
        if k >= 1 && e != 0.0 {
            v[1].axpy(e, &self.z);
            dv[1].axpy(e, &self.zd);
            ddv[1].axpy(e, &self.zdd);
        }
        for (l, w) in ws.iter().enumerate() {
            if l < k {
                v[l + 1].axpy(1.0, &w.v);
                dv[l + 1].axpy(1.0, &w.d1);
                ddv[l + 1].axpy(1.0, &w.d2);
            }
        }
        let xi: Vec<f64> = (0..m).map(|i| i as f64 * hs).collect();
        // εs with s = ξ̄/μ + Φ(ε)
        let mut es = series_zero(m, k);
        for j in 1..=k {
            let phi = phis.get(j - 1).copied().unwrap_or(0.0);
            es[j] = Sym::constant(m, phi);
            if j == 1 {
                es[1].odd = xi.iter().map(|x| x / self.mu).collect();
            }
        }
        let v0 = self.vder[0];
        let mut fact = 1.0;
        let qc: Vec<f64> = (0..=k)
            .map(|j| {
                if j > 0 {
                    fact *= j as f64;
                }
                self.vder[j] / (fact * v0)
            })
            .collect();
        let q = series_compose(&qc, &es);
        let mut out = series_mul(&q, &v);
        for (o, d) in out.iter_mut().zip(&ddv) {
            o.axpy(-1.0, d);
        }
        if let NormalModel::Circle { radius } = self.model {
            // ε/(μρ) = ε/(μr) · Σ (−εs/r)^j
            let gc: Vec<f64> = (0..=k).map(|j| (-1.0 / radius).powi(j as i32)).collect();
            let g = series_compose(&gc, &es);
            let mut c = series_zero(m, k);
            for j in 1..=k {
                c[j] = g[j - 1].scaled(1.0 / (self.mu * radius));
            }
            let cd = series_mul(&c, &dv);
            for (o, d) in out.iter_mut().zip(&cd) {
                o.axpy(-1.0, d);
            }
        }
        // v^p = w₀^p (1 + δ)^p with δ = (v − w₀)/w₀
        let w0 = &self.w0.even;
        let mut delta = series_zero(m, k);
        for j in 1..=k {
            delta[j] = v[j].div_even(w0);
        }
        let bc: Vec<f64> = (0..=k).map(|j| binomial(self.p, j)).collect();
        let pw = series_compose(&bc, &delta);
        let w0p: Vec<f64> = w0.iter().map(|w| w.powf(self.p)).collect();
        for (o, t) in out.iter_mut().zip(&pw) {
            let t = Sym { even: t.even.iter().zip(&w0p).map(|(a, b)| a * b).collect(), odd: t.odd.iter().zip(&w0p).map(|(a, b)| a * b).collect() };
            o.axpy(-1.0, &t);
        }
        out
    }

    /// The order-`j` right-hand side `F_j` (with `w_j = 0`), the `λ₀eZ` term
    /// of order one removed.
    fn forcing(&self, ws: &[Correction], phis: &[f64], e: f64, j: usize) -> Sym {
        let mut trial = ws.to_vec();
        if j <= trial.len() {
            trial[j - 1] = Correction::zero(self.len());
        }
        let mut f = self.residual_series(&trial, phis, e, j).swap_remove(j);
        if j == 1 {
            f.axpy(-self.lambda0() * e, &self.z);
        }
        f
    }

    /// Solves `L₀w = −F` sector by sector; the odd part must be orthogonal
    /// to the kernel.
    fn solve_correction(&self, f: &Sym) -> Result<Correction> {
        let rhs_even: Vec<f64> = f.even.iter().map(|v| -v).collect();
        let rhs_odd: Vec<f64> = f.odd.iter().map(|v| -v).collect();
        let defect = self.linop.fredholm_defect(&rhs_odd);
        if defect > TOL_SOLVABLE {
            return Err(Error::FredholmViolation { defect });
        }
        let even = self.linop.solve_orthogonal(&rhs_even, 0)?;
        let odd = self.linop.solve_odd_unchecked(&rhs_odd);
        Ok(Correction::new(Sym { even, odd }, self.step()))
    }

    /// `∫F₁∂w₀`: the order-one Fredholm defect, independent of `Φ` and `e`.
    pub fn order1_defect(&self) -> f64 {
        let f = self.forcing(&[], &[], 0.0, 1);
        self.kernel_overlap(&f)
    }

    /// The order-one correction `w₁,₁` (the part not driven by `Φ₀`).
    pub fn build_order1(&self) -> Result<Correction> {
        let f = self.forcing(&[], &[0.0], 0.0, 1);
        self.solve_correction(&f)
    }

    /// Builds `w₁ … w_I` and `Φ₀ … Φ_{I−2}`; `Φ_{I−1}` is set to `phi_free`.
    pub fn build(&self, order: usize, e: f64, phi_free: f64) -> Result<AnsatzExpansion> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::InvalidProblem(format!("order {order} outside 1..={MAX_ORDER}")));
        }
        let m = self.len();
        let mut ws = vec![Correction::zero(m); order];
        let mut phis = vec![0.0; order];
        let mut slopes = Vec::new();
        let mut defects = Vec::new();
        for j in 1..=order {
            if j < order {
                // Φ_{j−1} from the solvability condition at order j+1, which is affine in it
                let eval = |t: f64, ws: &mut Vec<Correction>, phis: &mut Vec<f64>| -> Result<f64> {
                    phis[j - 1] = t;
                    ws[j - 1] = self.solve_correction(&self.forcing(ws, phis, e, j))?;
                    Ok(self.kernel_overlap(&self.forcing(ws, phis, e, j + 1)))
                };
                let d0 = eval(0.0, &mut ws, &mut phis)?;
                let d1 = eval(1.0, &mut ws, &mut phis)?;
                let slope = d1 - d0;
                let scale = self.linop.c0;
                let t = if slope.abs() > 1e-9 * scale {
                    -d0 / slope
                } else if d0.abs() <= 1e-9 * scale {
                    0.0
                } else {
                    return Err(Error::DegenerateOperator(slope));
                };
                let d = eval(t, &mut ws, &mut phis)?;
                slopes.push(slope);
                defects.push(d);
            } else {
                phis[j - 1] = phi_free;
                ws[j - 1] = self.solve_correction(&self.forcing(&ws, &phis, e, j))?;
            }
        }
        Ok(AnsatzExpansion { order, e, phis, ws, solvability_slopes: slopes, final_defects: defects })
    }

    /// Evaluates `S̃_ε(v)` exactly on the full line `|ξ̄| ≤ window` with the
    /// normal offset `Φ(ε)`; nodes where the normal coordinate leaves the
    /// chart are skipped. Returns `(ξ̄, value)` pairs.
    pub fn exact_residual(&self, v: &Sym, phi: f64, eps: f64, window: f64) -> Vec<(f64, f64)> {
        let hs = self.step();
        let (d1, d2) = v.derivatives(hs);
        let mlast = self.len() as isize - 3;
        let jmax = ((window / hs).floor() as isize).min(mlast);
        let rad = self.radius();
        (-jmax..=jmax)
            .filter_map(|j| {
                let xi = j as f64 * hs;
                let d = eps * (xi / self.mu + phi);
                if rad.is_finite() && rad + d <= 0.05 * rad {
                    return None;
                }
                let vv = v.node(j);
                let s = -d2.node(j) - eps * self.drift_at(d) / self.mu * d1.node(j) + self.potential_at(d) / self.vder[0] * vv
                    - vv.abs().powf(self.p - 1.0) * vv;
                Some((xi, s))
            })
            .collect()
    }
}

/// One correction `w_ℓ` with its first two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub v: Sym,
    pub d1: Sym,
    pub d2: Sym,
}

impl Correction {
    pub fn zero(m: usize) -> Self {
        Correction { v: Sym::zeros(m), d1: Sym::zeros(m), d2: Sym::zeros(m) }
    }

    pub fn new(v: Sym, h: f64) -> Self {
        let (d1, d2) = v.derivatives(h);
        Correction { v, d1, d2 }
    }
}

/// The expansion `v_I = w₀ + εeZ + Σ_{ℓ≤I} ε^ℓ w_ℓ` with
/// `Φ = Σ_{j<I} ε^j Φ_j`, for constant `e`.
#[derive(Debug, Clone)]
pub struct AnsatzExpansion {
    pub order: usize,
    pub e: f64,
    /// `Φ_0 … Φ_{I−1}`; the last entry is the free parameter.
    pub phis: Vec<f64>,
    /// `w_1 … w_I`.
    pub ws: Vec<Correction>,
    /// `∂/∂Φ_{j−2}` of `∫F_j∂w₀` for `j = 2..=I`.
    pub solvability_slopes: Vec<f64>,
    /// `∫F_j∂w₀` after `Φ_{j−2}` is fixed.
    pub final_defects: Vec<f64>,
}

/// Interior residual of one expansion at one `ε`.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualRow {
    pub epsilon: f64,
    #[serde(rename = "I")]
    pub order: usize,
    pub raw_residual: f64,
    pub e_term_removed_residual: f64,
}

impl AnsatzExpansion {
    pub fn phi_at(&self, eps: f64) -> f64 {
        self.phis.iter().rev().fold(0.0, |acc, p| acc * eps + p)
    }

    /// `v_I` at the given `ε`.
    pub fn profile_at(&self, ctx: &AnsatzContext, eps: f64) -> Sym {
        let mut v = ctx.w0.clone();
        v.axpy(eps * self.e, &ctx.z);
        let mut pw = 1.0;
        for w in &self.ws {
            pw *= eps;
            v.axpy(pw, &w.v);
        }
        v
    }

    /// `e^{ρ|ξ̄|}`-weighted sup norms of `S̃_ε(v_I)` and of
    /// `S̃_ε(v_I) − ελ₀eZ` over `|ξ̄| ≤ window`.
    pub fn residual_interior(&self, ctx: &AnsatzContext, eps: f64, window: f64) -> ResidualRow {
        let v = self.profile_at(ctx, eps);
        let vals = ctx.exact_residual(&v, self.phi_at(eps), eps, window);
        let hs = ctx.step();
        let le = eps * ctx.lambda0() * self.e;
        let (mut raw, mut rem) = (0.0_f64, 0.0_f64);
        for (xi, s) in vals {
            let wgt = (RHO * xi.abs()).exp();
            raw = raw.max(wgt * s.abs());
            rem = rem.max(wgt * (s - le * ctx.z.at(hs, xi)).abs());
        }
        ResidualRow { epsilon: eps, order: self.order, raw_residual: raw, e_term_removed_residual: rem }
    }

    /// Exponential decay rate of `|v_I|` fitted on `|ξ̄| ∈ [a, b]`.
    pub fn decay_rate(&self, ctx: &AnsatzContext, eps: f64, a: f64, b: f64) -> f64 {
        envelope_rate(&self.profile_at(ctx, eps), ctx.step(), a, b)
    }
}

/// `−d/dt log max_{|ξ̄| ≥ t}|f|` fitted on `[a, b]`.
pub fn envelope_rate(f: &Sym, h: f64, a: f64, b: f64) -> f64 {
    let m = f.len();
    let mut env = vec![0.0_f64; m];
    let mut run = 0.0_f64;
    for i in (0..m).rev() {
        run = run.max((f.even[i] + f.odd[i]).abs()).max((f.even[i] - f.odd[i]).abs());
        env[i] = run;
    }
    let (ia, ib) = ((a / h).round() as usize, ((b / h).round() as usize).min(m - 1));
    let idx: Vec<usize> = (ia..=ib).step_by(50).collect();
    let x: Vec<f64> = idx.iter().map(|i| *i as f64 * h).collect();
    let y: Vec<f64> = idx.iter().map(|i| env[*i].ln()).collect();
    -linear_slope(&x, &y)
}

/// Builds the expansion at each order in `orders` and evaluates the interior
/// residual at each `ε`; runs the grid points in parallel.
pub fn residual_scan(ctx: &AnsatzContext, orders: &[usize], epsilons: &[f64], e: f64, window: f64) -> Result<Vec<ResidualRow>> {
    use rayon::prelude::*;
    let expansions: Vec<AnsatzExpansion> = orders.iter().map(|&i| ctx.build(i, e, 0.0)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, f64)> = (0..orders.len()).flat_map(|k| epsilons.iter().map(move |e| (k, *e))).collect();
    Ok(jobs.par_iter().map(|(k, eps)| expansions[*k].residual_interior(ctx, *eps, window)).collect())
}

pub fn write_residual_csv(rows: &[ResidualRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epsilon", "I", "raw_residual", "e_term_removed_residual"])?;
    for r in rows {
        w.write_record([
            format!("{:e}", r.epsilon),
            r.order.to_string(),
            format!("{:e}", r.raw_residual),
            format!("{:e}", r.e_term_removed_residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}
