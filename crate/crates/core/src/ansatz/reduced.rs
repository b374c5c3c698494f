//! Global gluing `W = η_{3δ}·h·v_I`, the inner/outer splitting of the
//! correction and the fixed-point solve of the reduced system.
//!
//! Everything lives on one grid in the scaled normal coordinate `x` (the
//! signed distance to `K` divided by `ε`). For the circle the grid starts at
//! the centre of the disc, where the radial Laplacian uses reflection; the
//! far end carries a Robin condition matched to the local decay rate. The
//! inner variable is `ξ̄ = μ(x − Φ)` on a sub-range of the same nodes, so the
//! cutoff identities hold exactly for the discrete operators.

use std::path::Path;

use serde::Serialize;

use super::{AnsatzContext, AnsatzExpansion, NormalModel};
use crate::error::{Error, Result};
use crate::k_ops::{GapOperator, JacobiOperator};
use crate::linop::fd_derivatives;
use crate::numeric::{linear_slope, sup_norm, Tridiagonal};

/// Smooth cutoff with `η = 1` on `[0, 1]` and `η = 0` on `[2, ∞)`:
/// `η(t) = f(2−t)/(f(2−t) + f(t−1))`, `f(s) = e^{−1/s}` for `s > 0`.
pub fn cutoff(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        return 1.0;
    }
    if t >= 2.0 {
        return 0.0;
    }
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let a = f(2.0 - t);
    a / (a + f(t - 1.0))
}

/// Grid in the scaled normal coordinate with the radial Laplacian.
#[derive(Debug, Clone)]
pub struct NormalGrid {
    pub eps: f64,
    pub hx: f64,
    pub x: Vec<f64>,
    /// Coefficient of `∂_x` in the scaled Laplacian.
    pub drift: Vec<f64>,
    /// `V(εz)` at the nodes.
    pub v: Vec<f64>,
    /// The first node is the centre of the disc.
    pub centre: bool,
    lap: Tridiagonal,
}

impl NormalGrid {
    /// `far` is the scaled extent beyond `K` on the open side(s).
    pub fn new(ctx: &AnsatzContext, eps: f64, step: f64, far: f64) -> Self {
        let (x, centre): (Vec<f64>, bool) = match ctx.model {
            NormalModel::Circle { radius } => {
                let inner = radius / eps;
                let n0 = (inner / step).round().max(1.0) as usize;
                let hx = inner / n0 as f64;
                let total = n0 + (far / hx).round() as usize;
                ((0..=total).map(|i| i as f64 * hx - inner).collect(), true)
            }
            NormalModel::Line => {
                let n = (far / step).round() as isize;
                ((-n..=n).map(|i| i as f64 * step).collect(), false)
            }
        };
        let hx = x[1] - x[0];
        let drift: Vec<f64> = x.iter().map(|xi| eps * ctx.drift_at(eps * xi)).collect();
        let v: Vec<f64> = x.iter().map(|xi| ctx.potential_at(eps * xi)).collect();
        let lap = Self::assemble(&drift, &v, hx, centre);
        NormalGrid { eps, hx, x, drift, v, centre, lap }
    }

    fn assemble(drift: &[f64], v: &[f64], h: f64, centre: bool) -> Tridiagonal {
        let n = drift.len();
        let mut lower = vec![0.0; n - 1];
        let mut diag = vec![-2.0 / (h * h); n];
        let mut upper = vec![0.0; n - 1];
        for i in 0..n {
            let lo = 1.0 / (h * h) - drift[i] / (2.0 * h);
            let up = 1.0 / (h * h) + drift[i] / (2.0 * h);
            if i == 0 {
                if centre {
                    // Δu(0) = 2u″(0) in the plane
                    diag[0] = -4.0 / (h * h);
                    upper[0] = 4.0 / (h * h);
                } else {
                    let k = v[0].sqrt();
                    upper[0] = up + lo;
                    diag[0] -= 2.0 * h * k * lo;
                }
            } else if i == n - 1 {
                let k = v[n - 1].sqrt();
                lower[n - 2] = lo + up;
                diag[n - 1] -= 2.0 * h * k * up;
            } else {
                lower[i - 1] = lo;
                upper[i] = up;
            }
        }
        Tridiagonal { lower, diag, upper }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Second-order Laplacian used by the solver.
    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        self.lap.apply(u)
    }

    /// Fourth-order Laplacian, independent of the solver stencil; the last
    /// two nodes (and the first two on the line) are left at zero.
    pub fn laplacian_fourth_order(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        let h = self.hx;
        let mut out = vec![0.0; n];
        if self.centre {
            let (d1, d2) = fd_derivatives(u, h, true);
            for i in 0..n - 2 {
                out[i] = if i == 0 { 2.0 * d2[0] } else { d2[i] + self.drift[i] * d1[i] };
            }
        } else {
            for i in 2..n - 2 {
                out[i] = (-u[i + 2] + 16.0 * u[i + 1] - 30.0 * u[i] + 16.0 * u[i - 1] - u[i - 2]) / (12.0 * h * h);
            }
        }
        out
    }

    /// Solves `(Δ − V)φ = f`.
    pub fn solve_outer(&self, f: &[f64]) -> Vec<f64> {
        let mut m = self.lap.clone();
        m.diag.iter_mut().zip(&self.v).for_each(|(d, v)| *d -= v);
        m.solve_pivoted(f)
    }

    /// Distance to `K` in original units.
    pub fn dist(&self, i: usize) -> f64 {
        self.eps * self.x[i].abs()
    }
}

/// `W` and its error `E = −ΔW + VW − W^p` on the normal grid.
#[derive(Debug, Clone)]
pub struct GlobalApproximation {
    pub grid: NormalGrid,
    pub eps: f64,
    pub delta: f64,
    pub order: usize,
    /// `Φ(ε)`.
    pub phi: f64,
    /// `ξ̄ = μ(x − Φ)`.
    pub xi: Vec<f64>,
    pub eta3: Vec<f64>,
    pub eta6: Vec<f64>,
    pub eta1: Vec<f64>,
    pub eta_half: Vec<f64>,
    pub eta_quarter: Vec<f64>,
    /// `v_I(ξ̄)`.
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub error: Vec<f64>,
}

/// Grid settings of the global problem.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridOptions {
    pub step: f64,
    pub far: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { step: 1e-3, far: 60.0 }
    }
}

/// Default cutoff radius: the `6δ` support stays inside the chart.
pub fn default_delta(ctx: &AnsatzContext, eps: f64, grid: &GridOptions) -> f64 {
    match ctx.model {
        NormalModel::Circle { radius } => 0.12 * radius,
        // beyond the computational domain: η ≡ 1
        NormalModel::Line => grid.far * eps,
    }
}

pub fn assemble_global(
    ctx: &AnsatzContext,
    expansion: &AnsatzExpansion,
    eps: f64,
    delta: f64,
    opts: &GridOptions,
) -> Result<GlobalApproximation> {
    let limit = ctx.radius();
    if !(delta > 0.0) || 6.0 * delta >= limit {
        return Err(Error::ChartRadiusExceeded { needed: 6.0 * delta, limit });
    }
    let grid = NormalGrid::new(ctx, eps, opts.step, opts.far);
    let eta = |l: f64| -> Vec<f64> { grid.x.iter().map(|x| cutoff(eps * x / (l * delta))).collect() };
    let mut g = GlobalApproximation {
        eta3: eta(3.0),
        eta6: eta(6.0),
        eta1: eta(1.0),
        eta_half: eta(0.5),
        eta_quarter: eta(0.25),
        grid,
        eps,
        delta,
        order: expansion.order,
        phi: 0.0,
        xi: Vec::new(),
        v: Vec::new(),
        w: Vec::new(),
        error: Vec::new(),
    };
    g.refresh(ctx, expansion);
    Ok(g)
}

impl GlobalApproximation {
    /// Re-evaluates `W` and `E` for a rebuilt expansion.
    pub fn refresh(&mut self, ctx: &AnsatzContext, expansion: &AnsatzExpansion) {
        self.sample(ctx, expansion);
        let lap = self.grid.laplacian(&self.w);
        self.set_error(ctx, &lap);
    }

    fn sample(&mut self, ctx: &AnsatzContext, expansion: &AnsatzExpansion) {
        self.order = expansion.order;
        self.phi = expansion.phi_at(self.eps);
        let prof = expansion.profile_at(ctx, self.eps);
        let hs = ctx.step();
        self.xi = self.grid.x.iter().map(|x| ctx.mu * (x - self.phi)).collect();
        self.v = self.xi.iter().zip(&self.eta3).map(|(xi, e)| if *e > 0.0 { prof.at(hs, *xi) } else { 0.0 }).collect();
        self.w = self.v.iter().zip(&self.eta3).map(|(v, e)| e * ctx.h * v).collect();
    }

    fn set_error(&mut self, ctx: &AnsatzContext, lap: &[f64]) {
        let p = ctx.p;
        self.error = (0..self.w.len())
            .map(|i| {
                let w = self.w[i];
                -lap[i] + self.grid.v[i] * w - w.abs().powf(p - 1.0) * w
            })
            .collect();
    }

    /// Fits `d log|f| / d dist` on each side over `dist ∈ [a, b]` and returns
    /// the least steep side normalized by `μ_min/ε`.
    pub fn decay_fit(&self, f: &[f64], a: f64, b: f64) -> DecayFit {
        let g = &self.grid;
        let mut worst = f64::NEG_INFINITY;
        let mut mu_min = f64::INFINITY;
        let mut raw = 0.0;
        for side in [-1.0, 1.0] {
            let idx: Vec<usize> = (0..g.len())
                .filter(|&i| g.x[i] * side > 0.0 && (a..=b).contains(&g.dist(i)) && f[i].abs() > 0.0)
                .collect();
            if idx.len() < 3 {
                continue;
            }
            let d: Vec<f64> = idx.iter().map(|&i| g.dist(i)).collect();
            let y: Vec<f64> = idx.iter().map(|&i| f[i].abs().ln()).collect();
            let slope = linear_slope(&d, &y);
            let mu = idx.iter().map(|&i| g.v[i].sqrt()).fold(f64::INFINITY, f64::min);
            mu_min = mu_min.min(mu);
            let norm = slope * self.eps / mu;
            if norm > worst {
                worst = norm;
                raw = slope;
            }
        }
        DecayFit { slope: raw, mu_min, normalized: worst }
    }
}

/// Shell fit of exponential decay in original units.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayFit {
    /// `d log|f| / d dist` on the less steep side.
    pub slope: f64,
    pub mu_min: f64,
    /// `slope·ε/μ_min`; the decay estimate holds when this is `≤ −0.9`.
    pub normalized: f64,
}

/// `sup e^{ρ|ξ̄|}(|f| + [f]_{α})` with the Hölder quotient taken over node
/// pairs at distance `≤ 1` (a fixed set of offsets).
pub fn weighted_holder(f: &[f64], xi: &[f64], alpha: f64, rho: f64) -> f64 {
    let n = f.len();
    if n < 2 {
        return f.first().map(|v| v.abs()).unwrap_or(0.0);
    }
    let h = (xi[1] - xi[0]).abs();
    let reach = ((1.0 / h).floor() as usize).clamp(1, n - 1);
    let mut offsets: Vec<usize> = (1..=32).map(|k| (reach * k / 32).max(1)).collect();
    offsets.dedup();
    let mut best = 0.0_f64;
    for i in 0..n {
        let mut q = 0.0_f64;
        for &d in &offsets {
            let dist = (d as f64 * h).powf(alpha);
            if i + d < n {
                q = q.max((f[i + d] - f[i]).abs() / dist);
            }
            if i >= d {
                q = q.max((f[i] - f[i - d]).abs() / dist);
            }
        }
        best = best.max((rho * xi[i].abs()).exp() * (f[i].abs() + q));
    }
    best
}

/// The model operator `L*_ε = Δ_ξ̄ − 1 + p w₀^{p−1}` on a sub-range of the
/// normal grid, with Dirichlet ends, and the projections onto
/// `span{∂w₀, Z}`.
#[derive(Debug, Clone)]
pub struct InnerSolver {
    /// Inclusive node range.
    pub first: usize,
    pub last: usize,
    pub xi: Vec<f64>,
    pub kernel: Vec<f64>,
    pub z: Vec<f64>,
    pub c0: f64,
    /// `p·w₀^{p−1}(ξ̄)`.
    pub potential: Vec<f64>,
    weights: Vec<f64>,
    matrix: Tridiagonal,
    basis_solves: [Vec<f64>; 2],
    gram: [[f64; 2]; 2],
}

/// Relative overlap above which a right-hand side counts as unprojected.
const TOL_PROJ: f64 = 1e-8;

impl InnerSolver {
    /// Uses the nodes with `|x| ≤ x_in` (and off the centre of the disc).
    pub fn new(ctx: &AnsatzContext, grid: &NormalGrid, phi: f64, x_in: f64) -> Self {
        let idx: Vec<usize> = (0..grid.len()).filter(|&i| grid.x[i].abs() <= x_in && i >= 2 && i + 2 < grid.len()).collect();
        let (first, last) = (idx[0], *idx.last().unwrap());
        let mu = ctx.mu;
        let hxi = mu * grid.hx;
        let prof = &ctx.linop.profile;
        let xi: Vec<f64> = (first..=last).map(|i| mu * (grid.x[i] - phi)).collect();
        let kernel: Vec<f64> = xi.iter().map(|x| ctx.w0d.at(prof.step, *x)).collect();
        let z: Vec<f64> = xi.iter().map(|x| ctx.z.at(prof.step, *x)).collect();
        let n = xi.len();
        let p = ctx.p;
        let potential: Vec<f64> = xi.iter().map(|x| p * prof.value(*x).powf(p - 1.0)).collect();
        let diag: Vec<f64> = potential.iter().map(|q| -2.0 / (hxi * hxi) - 1.0 + q).collect();
        let matrix = Tridiagonal { lower: vec![1.0 / (hxi * hxi); n - 1], diag, upper: vec![1.0 / (hxi * hxi); n - 1] };
        let mut weights = vec![hxi; n];
        weights[0] *= 0.5;
        weights[n - 1] *= 0.5;
        let basis_solves = [matrix.solve_pivoted(&kernel), matrix.solve_pivoted(&z)];
        let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(&weights).map(|((a, b), w)| a * b * w).sum() };
        let gram = [[dot(&kernel, &kernel), dot(&kernel, &z)], [dot(&z, &kernel), dot(&z, &z)]];
        InnerSolver { first, last, xi, kernel, z, c0: ctx.linop.c0, potential, weights, matrix, basis_solves, gram }
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((a, b), w)| a * b * w).sum()
    }

    /// `L*_ε φ` with `φ = 0` outside the range.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        self.matrix.apply(phi)
    }

    /// `(Π_1, Π_2) = ((1/c₀)∫f∂w₀, ∫fZ)`.
    pub fn projections(&self, f: &[f64]) -> (f64, f64) {
        (self.dot(f, &self.kernel) / self.c0, self.dot(f, &self.z))
    }

    fn gram_coefficients(&self, f: &[f64]) -> [f64; 2] {
        let b = [self.dot(f, &self.kernel), self.dot(f, &self.z)];
        let g = &self.gram;
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        [(b[0] * g[1][1] - b[1] * g[0][1]) / det, (g[0][0] * b[1] - g[1][0] * b[0]) / det]
    }

    /// `Π^⊥ f`, exact for the discrete inner product.
    pub fn project_perp(&self, f: &[f64]) -> Vec<f64> {
        let a = self.gram_coefficients(f);
        f.iter().zip(&self.kernel).zip(&self.z).map(|((f, k), z)| f - a[0] * k - a[1] * z).collect()
    }

    /// Largest relative overlap of `f` with `∂w₀` and `Z`.
    pub fn projection_defect(&self, f: &[f64]) -> f64 {
        let ff = self.dot(f, f).sqrt();
        if ff == 0.0 {
            return 0.0;
        }
        let a = self.dot(f, &self.kernel).abs() / (ff * self.gram[0][0].sqrt());
        let b = self.dot(f, &self.z).abs() / (ff * self.gram[1][1].sqrt());
        a.max(b)
    }

    /// Solves `L*_ε φ = f` with `Π[φ] = 0`; `f` must satisfy `Π[f] = 0`. The
    /// discrete system is bordered by the two constraints.
    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        let defect = self.projection_defect(f);
        if defect > TOL_PROJ {
            return Err(Error::ProjectionDefect(defect));
        }
        Ok(self.solve_bordered(f))
    }

    fn solve_bordered(&self, f: &[f64]) -> Vec<f64> {
        let u0 = self.matrix.solve_pivoted(f);
        let [s1, s2] = &self.basis_solves;
        // ⟨u0 − a₁s₁ − a₂s₂, b_j⟩ = 0
        let m = [
            [self.dot(s1, &self.kernel), self.dot(s2, &self.kernel)],
            [self.dot(s1, &self.z), self.dot(s2, &self.z)],
        ];
        let r = [self.dot(&u0, &self.kernel), self.dot(&u0, &self.z)];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let a1 = (r[0] * m[1][1] - r[1] * m[0][1]) / det;
        let a2 = (m[0][0] * r[1] - m[1][0] * r[0]) / det;
        u0.iter().zip(s1).zip(s2).map(|((u, s1), s2)| u - a1 * s1 - a2 * s2).collect()
    }

    /// Smallest `|eigenvalue|` of `L*_ε` on the `Π`-orthogonal subspace, by
    /// power iteration on the constrained inverse.
    pub fn min_singular_value(&self) -> f64 {
        let n = self.len();
        let mut u: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        u = self.project_perp(&u);
        let mut est = 0.0;
        for _ in 0..60 {
            let nrm = self.dot(&u, &u).sqrt();
            u.iter_mut().for_each(|v| *v /= nrm);
            let next = self.solve_bordered(&self.project_perp(&u));
            est = self.dot(&next, &next).sqrt();
            u = next;
        }
        1.0 / est
    }

    /// Scatters a range vector onto the full grid.
    pub fn to_grid(&self, f: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        out[self.first..=self.last].copy_from_slice(f);
        out
    }

    pub fn from_grid(&self, f: &[f64]) -> Vec<f64> {
        f[self.first..=self.last].to_vec()
    }
}

/// Fixed-point settings.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReducedOptions {
    pub lambda: f64,
    pub tol_fp: f64,
    pub tol_final: f64,
    pub max_iter: usize,
    /// Admissibility constant: `dist(0, spec 𝒦_ε) ≥ c·ε`.
    pub gap_c: f64,
    pub delta: Option<f64>,
    pub grid: GridOptions,
    pub alpha: f64,
    pub rho: f64,
    /// Take `E` from the expansion's exact one-dimensional operator instead
    /// of the grid Laplacian; valid where `η_{3δ} ≡ 1`.
    pub analytic_error: bool,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        ReducedOptions {
            lambda: 10.0,
            tol_fp: 1e-10,
            tol_final: 1e-6,
            max_iter: 200,
            gap_c: 0.05,
            delta: None,
            grid: GridOptions::default(),
            alpha: crate::norms::ALPHA,
            rho: crate::norms::RHO,
            analytic_error: false,
        }
    }
}

/// `(φ♭, φ*, Φ_{I−1}, e)`; `φ*` is stored on the full normal grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub phib: Vec<f64>,
    pub phistar: Vec<f64>,
    pub phi_free: f64,
    pub e: f64,
}

/// Row of `fixedpoint_trace.csv`; norms are divided by their `ℬ_λ` scales.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub norm_phib: f64,
    pub norm_phistar: f64,
    #[serde(rename = "norm_Phi")]
    pub norm_phi: f64,
    pub norm_e: f64,
    pub ratio: f64,
    /// Scaled update per component.
    #[serde(skip)]
    pub update: [f64; 4],
}

/// The four error components of the reduced system at one state.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorComponents {
    pub epsilon: f64,
    /// `‖𝒩_ε‖_∞`.
    pub outer: f64,
    /// `‖Π^⊥𝔐_ε‖_{ε,α,ρ}`.
    pub inner_perp: f64,
    /// `|𝔐_{ε,1}|` after removing the leading `ε^{I+1}𝔥_{I+1}` term.
    pub m1: f64,
    /// `|𝔐_{ε,2}|`.
    pub m2: f64,
}

/// `W`, `v_I`, `Φ(ε)` and `ΔW` at a reference `(Φ_{I−1}, e)` together with
/// their first differences in both parameters. Evaluating `W` through this
/// family keeps its rounding fixed while the parameters move, so `𝔐_{ε,1}`
/// (and with it `Φ`) depends smoothly on the iterate.
struct LinearFamily {
    phi_free: f64,
    e: f64,
    w: [Vec<f64>; 3],
    /// `E` at the reference and its derivatives along the family.
    error: [Vec<f64>; 3],
    v: [Vec<f64>; 3],
    phi: [f64; 3],
}

/// `f(w+d) − f(w) − f′(w)d` for `f(u) = |u|^{p−1}u`.
fn power_increment(p: f64, w: f64, d: f64) -> f64 {
    let f = |u: f64| u.abs().powf(p - 1.0) * u;
    if d.abs() < 0.1 * w.abs() {
        f(w) * power_remainder(p, d / w)
    } else {
        f(w + d) - f(w) - p * w.abs().powf(p - 1.0) * d
    }
}

/// `(1+t)^p − 1 − pt` without cancellation for small `t`.
fn power_remainder(p: f64, t: f64) -> f64 {
    if t.abs() < 0.1 {
        let (mut c, mut tk, mut sum) = (p * (p - 1.0) / 2.0, t * t, 0.0);
        for k in 2..40 {
            let term = c * tk;
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            c *= (p - k as f64) / (k as f64 + 1.0);
            tk *= t;
        }
        sum
    } else {
        (1.0 + t).abs().powf(p - 1.0) * (1.0 + t) - 1.0 - p * t
    }
}

/// Re-linearizations of `W` in the fixed-point solve.
const MAX_PASSES: usize = 2;

/// Difference steps in `Φ_{I−1}` and `e`.
const FAMILY_STEP: (f64, f64) = (1.0, 1e-4);

/// Evaluation of the right-hand sides at one state.
struct Evaluation {
    outer_rhs: Vec<f64>,
    inner_rhs: Vec<f64>,
    m1: f64,
    m2: f64,
    inner: InnerSolver,
}

/// The reduced system at fixed `ε` and order.
pub struct ReducedSystem<'a> {
    pub ctx: &'a AnsatzContext,
    pub order: usize,
    pub eps: f64,
    pub opts: ReducedOptions,
    pub global: GlobalApproximation,
    pub jacobi: Option<JacobiOperator>,
    pub gap: GapOperator,
    x_in: f64,
    family: Option<LinearFamily>,
}

impl<'a> ReducedSystem<'a> {
    pub fn new(ctx: &'a AnsatzContext, order: usize, eps: f64, opts: ReducedOptions) -> Result<Self> {
        let delta = opts.delta.unwrap_or_else(|| default_delta(ctx, eps, &opts.grid));
        let expansion = ctx.build(order, 0.0, 0.0)?;
        let global = assemble_global(ctx, &expansion, eps, delta, &opts.grid)?;
        let mu2 = vec![ctx.mu * ctx.mu; 64];
        let nodes = GapOperator::nodes_for(ctx.mu * ctx.mu, ctx.length(), ctx.lambda0(), eps);
        let gap = GapOperator::assemble(&mu2, ctx.length(), ctx.lambda0(), eps, nodes);
        let dist = gap.dist_to_spectrum();
        if dist < opts.gap_c * eps {
            return Err(Error::ResonantEpsilon { epsilon: eps, dist });
        }
        let jacobi = match ctx.model {
            NormalModel::Circle { .. } => Some(ctx.jacobi(64)?),
            NormalModel::Line => None,
        };
        let x_in = (6.0 * delta / eps + 2.0).min(opts.grid.far - 1.0);
        Ok(ReducedSystem { ctx, order, eps, opts, global, jacobi, gap, x_in, family: None })
    }

    pub fn zero_state(&self) -> ReducedState {
        let n = self.global.grid.len();
        ReducedState { phib: vec![0.0; n], phistar: vec![0.0; n], phi_free: 0.0, e: 0.0 }
    }

    /// Rebuilds the linear family of `W` about `(Φ_{I−1}, e)`.
    fn linearize(&mut self, phi_free: f64, e: f64) -> Result<()> {
        let (dp, de) = FAMILY_STEP;
        let mut snap = |pf: f64, ee: f64| -> Result<(Vec<f64>, Vec<f64>, f64)> {
            let exp = self.ctx.build(self.order, ee, pf)?;
            self.global.sample(self.ctx, &exp);
            Ok((self.global.w.clone(), self.global.v.clone(), self.global.phi))
        };
        let (w0, v0, p0) = snap(phi_free, e)?;
        let (w1, v1, p1) = snap(phi_free + dp, e)?;
        let (w2, v2, p2) = snap(phi_free, e + de)?;
        let diff = |a: &[f64], b: &[f64], d: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| (a - b) / d).collect() };
        let w = [w0.clone(), diff(&w1, &w0, dp), diff(&w2, &w0, de)];
        let v = [v0.clone(), diff(&v1, &v0, dp), diff(&v2, &v0, de)];
        let g = &mut self.global;
        let p = self.ctx.p;
        let lap0 = g.grid.laplacian(&w[0]);
        g.w = w[0].clone();
        g.set_error(self.ctx, &lap0);
        if self.opts.analytic_error {
            let exp = self.ctx.build(self.order, e, phi_free)?;
            let prof = exp.profile_at(self.ctx, self.eps);
            let hs = self.ctx.step();
            let table = self.ctx.exact_residual(&prof, p0, self.eps, f64::INFINITY);
            let (lo, hi) = (table[0].0, table[table.len() - 1].0);
            let vals: Vec<f64> = table.iter().map(|t| t.1).collect();
            let hp = self.ctx.h.powf(p);
            for i in 0..g.w.len() {
                let xi = g.xi[i];
                if xi > lo && xi < hi && g.eta3[i] == 1.0 {
                    g.error[i] = hp * crate::linop::interpolate_uniform(&vals, hs, xi - lo);
                }
            }
        }
        let e0 = g.error.clone();
        let tangent = |dw: &[f64]| -> Vec<f64> {
            let lap = g.grid.laplacian(dw);
            (0..dw.len()).map(|i| -lap[i] + g.grid.v[i] * dw[i] - p * w0[i].abs().powf(p - 1.0) * dw[i]).collect()
        };
        let error = [e0, tangent(&w[1]), tangent(&w[2])];
        self.family = Some(LinearFamily { phi_free, e, w, error, v, phi: [p0, (p1 - p0) / dp, (p2 - p0) / de] });
        Ok(())
    }

    /// Sets `W`, `E` for the iterate's parameters from the linear family.
    fn refresh(&mut self, s: &ReducedState) -> Result<()> {
        if self.family.is_none() {
            self.linearize(s.phi_free, s.e)?;
        }
        let f = self.family.as_ref().unwrap();
        let (a, b) = (s.phi_free - f.phi_free, s.e - f.e);
        let comb = |x: &[Vec<f64>; 3]| -> Vec<f64> { (0..x[0].len()).map(|i| x[0][i] + a * x[1][i] + b * x[2][i]).collect() };
        let g = &mut self.global;
        let p = self.ctx.p;
        let n = f.w[0].len();
        let dw: Vec<f64> = (0..n).map(|i| a * f.w[1][i] + b * f.w[2][i]).collect();
        g.w = (0..n).map(|i| f.w[0][i] + dw[i]).collect();
        g.v = comb(&f.v);
        // E(W₀ + ΔW) = E₀ + E′ΔW − [(W₀+ΔW)^p − W₀^p − pW₀^{p−1}ΔW]
        g.error = (0..n)
            .map(|i| {
                let w0 = f.w[0][i];
                let lin = f.error[0][i] + a * f.error[1][i] + b * f.error[2][i];
                lin - power_increment(p, w0, dw[i])
            })
            .collect();
        g.phi = f.phi[0] + a * f.phi[1] + b * f.phi[2];
        g.xi = g.grid.x.iter().map(|x| self.ctx.mu * (x - g.phi)).collect();
        Ok(())
    }

    /// The full correction `η_{3δ}hφ* + φ♭`.
    fn correction(&self, s: &ReducedState) -> Vec<f64> {
        let g = &self.global;
        (0..g.w.len()).map(|i| g.eta3[i] * self.ctx.h * s.phistar[i] + s.phib[i]).collect()
    }

    fn evaluate(&self, s: &ReducedState) -> Evaluation {
        let ctx = self.ctx;
        let g = &self.global;
        let grid = &g.grid;
        let n = grid.len();
        let p = ctx.p;
        let hh = ctx.h;
        let psi: Vec<f64> = s.phistar.iter().map(|v| hh * v).collect();
        let phi = self.correction(s);
        // Δ(η₃ψ) − η₃Δψ from the stencil, exactly zero where η₃ is flat
        let gl = grid.lap.commutator(&g.eta3, &psi);
        let mut common = vec![0.0; n];
        let mut outer_rhs = vec![0.0; n];
        for i in 0..n {
            let w = g.w[i];
            let dfw = p * w.abs().powf(p - 1.0);
            let nl = -power_increment(p, w, phi[i]);
            common[i] = g.error[i] + nl - dfw * s.phib[i];
            outer_rhs[i] = (1.0 - g.eta1[i]) * (-gl[i] + (1.0 - g.eta_half[i]) * common[i]);
        }
        let inner = InnerSolver::new(ctx, grid, g.phi, self.x_in);
        let ps = &s.phistar;
        let mu2 = ctx.mu * ctx.mu;
        let hp = hh.powf(-p);
        let hx = grid.hx;
        // 𝕃 − L*: the second differences cancel, only drift and potential remain
        let m: Vec<f64> = (inner.first..=inner.last)
            .zip(0..)
            .map(|(i, k)| {
                let d1 = (ps[i + 1] - ps[i - 1]) / (2.0 * hx);
                let diff = grid.drift[i] * d1 / mu2 - (grid.v[i] / mu2 - 1.0) * ps[i]
                    + (p * (g.eta3[i] * g.v[i]).abs().powf(p - 1.0) - inner.potential[k]) * ps[i];
                g.eta1[i] * hp * common[i] - g.eta6[i] * diff
            })
            .collect();
        let (m1, m2) = inner.projections(&m);
        let inner_rhs = inner.project_perp(&m);
        Evaluation { outer_rhs, inner_rhs, m1, m2, inner }
    }

    /// `‖φ♭‖_{ε,∞} = ‖(1−η_{δ/4})φ‖_∞ + ε⁻¹‖η_{δ/4}φ‖_∞`.
    pub fn outer_norm(&self, f: &[f64]) -> f64 {
        let g = &self.global;
        let (mut a, mut b) = (0.0_f64, 0.0_f64);
        for i in 0..f.len() {
            a = a.max(((1.0 - g.eta_quarter[i]) * f[i]).abs());
            b = b.max((g.eta_quarter[i] * f[i]).abs());
        }
        a + b / self.eps
    }

    pub fn inner_norm(&self, f: &[f64]) -> f64 {
        let g = &self.global;
        let lo = (0..f.len()).find(|&i| f[i] != 0.0).unwrap_or(0);
        let hi = (0..f.len()).rev().find(|&i| f[i] != 0.0).unwrap_or(0);
        if hi <= lo {
            return 0.0;
        }
        weighted_holder(&f[lo..=hi], &g.xi[lo..=hi], self.opts.alpha, self.opts.rho)
    }

    /// `ℬ_λ`-scaled norms `(φ♭, φ*, Φ, e)`.
    pub fn scaled_norms(&self, s: &ReducedState) -> [f64; 4] {
        let i = self.order as i32;
        let eps = self.eps;
        [
            self.outer_norm(&s.phib) / eps.powi(i + 1),
            self.inner_norm(&s.phistar) / eps.powi(i + 1),
            s.phi_free.abs() / eps,
            s.e.abs() / eps.powi(i - 3),
        ]
    }

    fn scaled_difference(&self, a: &ReducedState, b: &ReducedState) -> [f64; 4] {
        let d = ReducedState {
            phib: a.phib.iter().zip(&b.phib).map(|(x, y)| x - y).collect(),
            phistar: a.phistar.iter().zip(&b.phistar).map(|(x, y)| x - y).collect(),
            phi_free: a.phi_free - b.phi_free,
            e: a.e - b.e,
        };
        self.scaled_norms(&d)
    }

    /// The four error components at `s`.
    pub fn error_components(&mut self, s: &ReducedState) -> Result<ErrorComponents> {
        self.refresh(s)?;
        let ev = self.evaluate(s);
        let g = &self.global;
        let outer: Vec<f64> = ev.outer_rhs.clone();
        let perp = ev.inner.to_grid(&ev.inner_rhs, g.grid.len());
        // leading solvability term ε^{I+1}∫F_{I+1}∂w₀ of the expansion
        let lead = self.ctx.build(self.order + 1, s.e, 0.0)?;
        let d_next = self.next_order_defect(&lead, s.phi_free);
        let m1 = self.ctx.mu * (ev.m1 - self.eps.powi(self.order as i32 + 1) * d_next / self.ctx.linop.c0);
        Ok(ErrorComponents { epsilon: self.eps, outer: sup_norm(&outer), inner_perp: self.inner_norm(&perp), m1: m1.abs(), m2: ev.m2.abs() })
    }

    /// `∫F_{I+1}∂w₀` for the order-`I` expansion with the given `Φ_{I−1}`.
    fn next_order_defect(&self, lead: &AnsatzExpansion, phi_free: f64) -> f64 {
        let i = self.order;
        // slope·Φ_{I−1} + defect(0) vanishes at lead.phis[I−1]
        let slope = lead.solvability_slopes[i - 1];
        slope * (phi_free - lead.phis[i - 1])
    }

    /// One Picard step.
    fn step(&mut self, s: &ReducedState) -> Result<ReducedState> {
        self.refresh(s)?;
        let ctx = self.ctx;
        let ev = self.evaluate(s);
        let phib = self.global.grid.solve_outer(&ev.outer_rhs);
        let ps = ev.inner.solve(&ev.inner_rhs)?;
        let phistar = ev.inner.to_grid(&ps, phib.len());
        let mut phi_free = s.phi_free;
        if let Some(j) = &self.jacobi {
            let scale = ctx.mu * self.eps.powi(-(self.order as i32 + 1)) * ev.m1;
            let sol = j.invert(&[vec![scale; j.nodes]])?;
            phi_free -= sol.phi[0].iter().sum::<f64>() / j.nodes as f64;
        }
        // on the line the translations (constant kernel of 𝒥) are quotiented out
        let m = self.gap.mu2.len();
        let de = self.gap.solve(&vec![ctx.mu * ctx.mu * ev.m2 / self.eps; m])?;
        let e = s.e - de.iter().sum::<f64>() / m as f64;
        Ok(ReducedState { phib, phistar, phi_free, e })
    }

    /// Runs the fixed point from zero. `W` is evaluated on a family linear in
    /// `(Φ_{I−1}, e)`; after a pass settles, the family is rebuilt about the
    /// current parameters until they stop moving. A pass ends when the scaled
    /// update drops below `tol_fp` or stops decreasing.
    pub fn solve(&mut self) -> Result<ReducedSolution> {
        let mut state = self.zero_state();
        let mut trace: Vec<TraceRow> = Vec::new();
        let mut damping = 1.0;
        let mut converged = false;
        let mut lambda_needed = 0.0_f64;
        let mut iter = 0;
        for _pass in 0..MAX_PASSES {
            self.linearize(state.phi_free, state.e)?;
            let (p0, e0) = (state.phi_free, state.e);
            let mut bad = 0;
            let mut best = f64::INFINITY;
            let mut best_iter = iter;
            converged = false;
            while iter < self.opts.max_iter {
                iter += 1;
                let next = self.step(&state)?;
                let diff = self.scaled_difference(&next, &state);
                let update = diff.iter().fold(0.0_f64, |m, v| m.max(*v));
                state = if damping == 1.0 {
                    next
                } else {
                    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + damping * (b - a)).collect() };
                    ReducedState {
                        phib: mix(&state.phib, &next.phib),
                        phistar: mix(&state.phistar, &next.phistar),
                        phi_free: state.phi_free + damping * (next.phi_free - state.phi_free),
                        e: state.e + damping * (next.e - state.e),
                    }
                };
                let prev = trace.last().map(|r| r.update.iter().fold(0.0_f64, |m, v| m.max(*v)));
                let ratio = prev.map_or(f64::NAN, |p| update / p);
                let norms = self.scaled_norms(&state);
                lambda_needed = norms.iter().fold(lambda_needed, |m, v| m.max(*v));
                trace.push(TraceRow { iter, norm_phib: norms[0], norm_phistar: norms[1], norm_phi: norms[2], norm_e: norms[3], ratio, update: diff });
                if update < self.opts.tol_fp {
                    converged = true;
                    break;
                }
                if update < 0.5 * best {
                    best = update;
                    best_iter = iter;
                } else if iter >= best_iter + 15 {
                    break;
                }
                bad = if ratio >= 1.0 { bad + 1 } else { 0 };
                if bad >= 3 {
                    if damping < 1.0 {
                        let k = (0..4).fold(0, |b, k| if diff[k] > diff[b] { k } else { b });
                        let component = ["phi_flat", "phi_star", "Phi", "e"][k].to_string();
                        return Err(Error::NotContracting { component, ratio });
                    }
                    damping = 0.5;
                    bad = 0;
                }
            }
            // the family is exact at its reference point; stop once the
            // parameters no longer leave it
            let moved = (state.phi_free - p0).abs() / self.eps.powi(1) + (state.e - e0).abs() / self.eps.powi(self.order as i32 - 3);
            if !converged || moved < self.opts.tol_fp.sqrt() || iter >= self.opts.max_iter {
                break;
            }
        }
        self.refresh(&state)?;
        Ok(self.finish(state, trace, converged, lambda_needed))
    }

    fn finish(&self, state: ReducedState, trace: Vec<TraceRow>, converged: bool, lambda_needed: f64) -> ReducedSolution {
        let updates: Vec<f64> = trace.iter().map(|r| r.update.iter().fold(0.0_f64, |m, v| m.max(*v))).collect();
        let floor = updates.iter().copied().fold(f64::INFINITY, f64::min);
        // ratios are only meaningful well above the floor
        let live: Vec<f64> = updates.iter().copied().take_while(|u| *u > 10.0 * floor).collect();
        let max_ratio = live.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        let mean_ratio = if live.len() >= 2 { (live[live.len() - 1] / live[0]).powf(1.0 / (live.len() - 1) as f64) } else { f64::NAN };
        // the sweep that confirms convergence is not counted
        let iterations = updates.iter().filter(|u| **u >= self.opts.tol_fp).count();
        let ctx = self.ctx;
        let g = &self.global;
        let grid = &g.grid;
        let corr = self.correction(&state);
        let u: Vec<f64> = g.w.iter().zip(&corr).map(|(w, c)| w + c).collect();
        let p = ctx.p;
        let res = |lap: Vec<f64>| -> Vec<f64> {
            (0..u.len()).map(|i| lap[i] - grid.v[i] * u[i] + u[i].abs().powf(p - 1.0) * u[i]).collect()
        };
        // Δu − Vu + f(u) = −E + Δφ − Vφ + f(W+φ) − f(W)
        let lap_c = grid.laplacian(&corr);
        let r2: Vec<f64> = (0..u.len())
            .map(|i| {
                let (w, c) = (g.w[i], corr[i]);
                -g.error[i] + lap_c[i] - grid.v[i] * c + p * w.abs().powf(p - 1.0) * c + power_increment(p, w, c)
            })
            .collect();
        let mut r4 = res(grid.laplacian_fourth_order(&u));
        let n = u.len();
        r4[n - 2] = 0.0;
        r4[n - 1] = 0.0;
        if !grid.centre {
            r4[0] = 0.0;
            r4[1] = 0.0;
        }
        let hs = ctx.linop.profile.step;
        let profile_match = (0..n)
            .filter(|&i| g.eta3[i] == 1.0)
            .map(|i| (u[i] - ctx.h * ctx.w0.at(hs, ctx.mu * grid.x[i])).abs())
            .fold(0.0, f64::max);
        let decay = g.decay_fit(&u, g.delta, 2.0 * g.delta);
        ReducedSolution {
            epsilon: self.eps,
            order: self.order,
            delta: g.delta,
            lambda: self.opts.lambda,
            converged,
            iterations,
            update_floor: floor,
            max_ratio,
            mean_ratio,
            lambda_needed,
            in_ball: lambda_needed <= self.opts.lambda,
            final_residual: sup_norm(&r2),
            final_residual_fourth_order: sup_norm(&r4),
            min_u: u.iter().copied().fold(f64::INFINITY, f64::min),
            profile_match,
            decay,
            phi_free: state.phi_free,
            e: state.e,
            x: grid.x.clone(),
            u,
            w: g.w.clone(),
            state,
            trace,
        }
    }
}

/// Result of the reduced fixed point.
#[derive(Debug, Clone, Serialize)]
pub struct ReducedSolution {
    pub epsilon: f64,
    #[serde(rename = "I")]
    pub order: usize,
    pub delta: f64,
    pub lambda: f64,
    pub converged: bool,
    /// Sweeps whose scaled update was at least `tol_fp`.
    pub iterations: usize,
    /// Smallest scaled update reached.
    pub update_floor: f64,
    /// Largest successive update ratio while the update exceeds ten times
    /// the floor.
    pub max_ratio: f64,
    /// Geometric mean of the same ratios.
    pub mean_ratio: f64,
    /// Largest `ℬ_λ`-scaled norm over all iterates.
    pub lambda_needed: f64,
    pub in_ball: bool,
    /// `‖Δu − Vu + u^p‖_∞` with the solver stencil.
    pub final_residual: f64,
    /// The same with fourth-order differences.
    pub final_residual_fourth_order: f64,
    pub min_u: f64,
    /// `sup |u − h w₀(μx)|` on the `3δ/ε` tube.
    pub profile_match: f64,
    pub decay: DecayFit,
    pub phi_free: f64,
    pub e: f64,
    #[serde(skip)]
    pub x: Vec<f64>,
    #[serde(skip)]
    pub u: Vec<f64>,
    #[serde(skip)]
    pub w: Vec<f64>,
    #[serde(skip)]
    pub state: ReducedState,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// Manifest written next to the solution slices.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub epsilon: f64,
    #[serde(rename = "I")]
    pub order: usize,
    pub delta: f64,
    pub converged: bool,
    pub final_residual: f64,
}

impl ReducedSolution {
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iter", "norm_phib", "norm_phistar", "norm_Phi", "norm_e", "ratio"])?;
        for r in &self.trace {
            w.write_record([
                r.iter.to_string(),
                format!("{:e}", r.norm_phib),
                format!("{:e}", r.norm_phistar),
                format!("{:e}", r.norm_phi),
                format!("{:e}", r.norm_e),
                format!("{:e}", r.ratio),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `x,dist,u,W,phi_flat,phi_star` along one normal line.
    pub fn write_slice_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "dist", "u", "W", "phi_flat", "phi_star"])?;
        for i in 0..self.x.len() {
            w.write_record([
                format!("{:e}", self.x[i]),
                format!("{:e}", self.epsilon * self.x[i]),
                format!("{:e}", self.u[i]),
                format!("{:e}", self.w[i]),
                format!("{:e}", self.state.phib[i]),
                format!("{:e}", self.state.phistar[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn manifest(&self, scenario: &str) -> Manifest {
        Manifest {
            scenario: scenario.to_string(),
            epsilon: self.epsilon,
            order: self.order,
            delta: self.delta,
            converged: self.converged,
            final_residual: self.final_residual,
        }
    }
}

/// The straight line with `V ≡ value`: the expansion stops at `w₀`, `W` is
/// the exact product solution and the loop must return zero corrections.
pub fn solve_flat_variant(value: f64, p: f64, order: usize, eps: f64) -> Result<ReducedSolution> {
    let ctx = AnsatzContext::line(value, p)?;
    let far = 25.0 / value.sqrt();
    let grid = GridOptions { step: ctx.step() / value.sqrt(), far };
    let opts = ReducedOptions { delta: Some(far * eps), grid, analytic_error: true, gap_c: 0.0, ..ReducedOptions::default() };
    ReducedSystem::new(&ctx, order, eps, opts)?.solve()
}

/// Error components at the zero state for each `ε`.
pub fn error_scan(ctx: &AnsatzContext, order: usize, epsilons: &[f64], opts: ReducedOptions) -> Result<Vec<ErrorComponents>> {
    use rayon::prelude::*;
    epsilons
        .par_iter()
        .map(|&eps| {
            // the grid must hold the whole 6δ tube
            let delta = opts.delta.unwrap_or_else(|| default_delta(ctx, eps, &opts.grid));
            let grid = GridOptions { far: opts.grid.far.max(6.0 * delta / eps + 10.0), ..opts.grid };
            let o = ReducedOptions { gap_c: 0.0, analytic_error: true, delta: Some(delta), grid, ..opts };
            let mut sys = ReducedSystem::new(ctx, order, eps, o)?;
            let z = sys.zero_state();
            sys.error_components(&z)
        })
        .collect()
}

pub fn write_error_csv(rows: &[ErrorComponents], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epsilon", "outer", "inner_perp", "m1", "m2"])?;
    for r in rows {
        w.write_record([
            format!("{:e}", r.epsilon),
            format!("{:e}", r.outer),
            format!("{:e}", r.inner_perp),
            format!("{:e}", r.m1),
            format!("{:e}", r.m2),
        ])?;
    }
    w.flush()?;
    Ok(())
}
