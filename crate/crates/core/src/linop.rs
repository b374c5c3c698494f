//! The linearized operator `L₀ = −Δ + 1 − p w₀^{p−1}` split into angular
//! sectors, with its negative eigenpair, kernel, constrained solves,
//! projections and the integral identities used by the ansatz.
//!
//! Sector `ℓ` acts on radial parts `u(r)` of functions `u(r)·Y_ℓ(θ)`:
//!
//! ```text
//! −u″ − (N−1)/r u′ + ℓ(ℓ+N−2)/r² u + (1 − p w₀^{p−1}) u
//! ```
//!
//! discretized by a conservative finite-volume stencil on the profile grid,
//! with zero flux at `R_max`. In `N = 1` the sectors are the even (`ℓ = 0`)
//! and odd (`ℓ = 1`) functions on the line.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{SymTridiagonal, Tridiagonal};
use crate::profile::{GroundStateProfile, IdentityReport};

/// Fredholm tolerance relative to `‖f‖·‖∂_j w₀‖`.
pub const TOL_ORTH: f64 = 1e-8;

/// One angular sector on a (possibly subsampled) radial grid.
#[derive(Debug, Clone)]
pub struct RadialSector {
    pub ell: usize,
    /// first node carrying an unknown (1 when the sector vanishes at r = 0)
    pub first: usize,
    pub nodes: usize,
    volumes: Vec<f64>,
    op: Tridiagonal,
    sym: SymTridiagonal,
}

impl RadialSector {
    fn assemble(n: usize, p: f64, ell: usize, r: &[f64], w: &[f64], h: f64) -> Self {
        let m = r.len();
        let first = if ell == 0 { 0 } else { 1 };
        let nf = n as f64;
        let half = |i: usize| -> f64 { (r[i] + 0.5 * h).min(r[m - 1]) };
        let vol = |i: usize| -> f64 {
            let lo = if i == 0 { 0.0 } else { r[i] - 0.5 * h };
            (half(i).powi(n as i32) - lo.powi(n as i32)) / nf
        };
        let flux = |i: usize| -> f64 { (r[i] + 0.5 * h).powi(n as i32 - 1) / h };
        let cent = (ell * (ell + n).saturating_sub(2)) as f64;
        let unknowns = m - first;
        let mut volumes = vec![0.0; unknowns];
        let mut diag = vec![0.0; unknowns];
        let mut lower = vec![0.0; unknowns.saturating_sub(1)];
        let mut upper = vec![0.0; unknowns.saturating_sub(1)];
        for k in 0..unknowns {
            let i = k + first;
            let v = vol(i);
            volumes[k] = v;
            let mut d = 0.0;
            if i + 1 < m {
                d += flux(i);
                upper[k] = -flux(i) / v;
            }
            if i > 0 {
                d += flux(i - 1);
                if k > 0 {
                    lower[k - 1] = -flux(i - 1) / v;
                }
            }
            let q = if cent > 0.0 { cent / (r[i] * r[i]) } else { 0.0 } + 1.0 - p * w[i].powf(p - 1.0);
            diag[k] = d / v + q;
        }
        let sym_b: Vec<f64> = (0..unknowns.saturating_sub(1))
            .map(|k| upper[k] * volumes[k] / (volumes[k] * volumes[k + 1]).sqrt())
            .collect();
        let sym = SymTridiagonal { a: diag.clone(), b: sym_b };
        RadialSector { ell, first, nodes: m, volumes, op: Tridiagonal { lower, diag, upper }, sym }
    }

    /// `k`-th eigenvalue (0-based) of the sector.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.sym.eigenvalue(k)
    }

    /// Eigenfunction on the full node set (zero at r = 0 when `first = 1`).
    pub fn eigenfunction(&self, lambda: f64) -> Vec<f64> {
        let y = self.sym.eigenvector(lambda);
        let mut u = vec![0.0; self.nodes];
        for (k, v) in y.iter().enumerate() {
            u[k + self.first] = v / self.volumes[k].sqrt();
        }
        u
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let y = self.op.apply(&u[self.first..]);
        let mut out = vec![0.0; self.nodes];
        out[self.first..].copy_from_slice(&y);
        out
    }

    fn solve(&self, f: &[f64]) -> Vec<f64> {
        let y = self.op.solve(&f[self.first..]);
        let mut out = vec![0.0; self.nodes];
        out[self.first..].copy_from_slice(&y);
        out
    }

    fn vdot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.volumes.iter().enumerate().map(|(k, v)| v * a[k + self.first] * b[k + self.first]).sum()
    }
}

/// `L₀` on a ground-state profile with its spectral data.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub profile: GroundStateProfile,
    pub sectors: [RadialSector; 2],
    /// Richardson-extrapolated negative eigenvalue.
    pub lambda0: f64,
    /// Radial `Z`, positive, `∫_{ℝᴺ} Z² = 1`.
    pub z: Vec<f64>,
    /// `∫|∂₁w₀|²`.
    pub c0: f64,
    /// Bottom of the `ℓ = 1` sector (zero up to discretization).
    pub kernel_eigenvalue: f64,
    kernel_discrete: Vec<f64>,
    coarse: Option<Coarse>,
    quad: Vec<f64>,
}

/// The same sectors on every other node, for Richardson extrapolation.
#[derive(Debug, Clone)]
struct Coarse {
    sectors: [RadialSector; 2],
    kernel_discrete: Vec<f64>,
}

fn normalized_kernel(s1: &RadialSector) -> Vec<f64> {
    let mut kd = s1.eigenfunction(s1.eigenvalue(0));
    let kn = s1.vdot(&kd, &kd).sqrt();
    kd.iter_mut().for_each(|v| *v /= kn);
    kd
}

/// Odd-sector solve with the discrete near-kernel removed before and after.
fn solve_deflated(s1: &RadialSector, kd: &[f64], f: &[f64]) -> Vec<f64> {
    let mut g = f.to_vec();
    let a = s1.vdot(&g, kd);
    g.iter_mut().zip(kd).for_each(|(g, k)| *g -= a * k);
    let mut u = s1.solve(&g);
    let b = s1.vdot(&u, kd);
    u.iter_mut().zip(kd).for_each(|(u, k)| *u -= b * k);
    u
}

/// Special solutions `U₀` and the radial part `u` of `U_j = u(r) ξ_j / r`.
#[derive(Debug, Clone)]
pub struct SpecialSolutions {
    pub u0: Vec<f64>,
    pub uj: Vec<f64>,
    pub gamma0: f64,
}

fn subsample(v: &[f64]) -> Vec<f64> {
    v.iter().step_by(2).copied().collect()
}

impl LinearizedOperator {
    pub fn assemble(profile: &GroundStateProfile) -> Result<Self> {
        let n = profile.problem.n;
        let p = profile.problem.p;
        let h = profile.step;
        let s0 = RadialSector::assemble(n, p, 0, &profile.r, &profile.w, h);
        let s1 = RadialSector::assemble(n, p, 1, &profile.r, &profile.w, h);
        let lam_h = s0.eigenvalue(0);
        if lam_h >= 0.0 {
            return Err(Error::SpectrumOrderViolation(lam_h));
        }
        // second order stencil: one Richardson step against the 2h grid
        let coarse = (profile.len() % 2 == 1).then(|| {
            let (r2, w2) = (subsample(&profile.r), subsample(&profile.w));
            let c0 = RadialSector::assemble(n, p, 0, &r2, &w2, 2.0 * h);
            let c1 = RadialSector::assemble(n, p, 1, &r2, &w2, 2.0 * h);
            let kd = normalized_kernel(&c1);
            Coarse { sectors: [c0, c1], kernel_discrete: kd }
        });
        let lambda0 = match &coarse {
            Some(c) => (4.0 * lam_h - c.sectors[0].eigenvalue(0)) / 3.0,
            None => lam_h,
        };
        let quad = profile.radial_weights();
        let mut z = s0.eigenfunction(lam_h);
        let norm = crate::numeric::wdot(&quad, &z, &z).sqrt();
        z.iter_mut().for_each(|v| *v /= norm);
        if z.iter().sum::<f64>() < 0.0 {
            z.iter_mut().for_each(|v| *v = -*v);
        }
        let kernel_eigenvalue = s1.eigenvalue(0);
        let kd = normalized_kernel(&s1);
        let c0 = profile.c0();
        Ok(LinearizedOperator {
            profile: profile.clone(),
            sectors: [s0, s1],
            lambda0,
            z,
            c0,
            kernel_eigenvalue,
            kernel_discrete: kd,
            coarse,
            quad,
        })
    }

    pub fn n(&self) -> usize {
        self.profile.problem.n
    }

    pub fn len(&self) -> usize {
        self.profile.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profile.is_empty()
    }

    /// Quadrature weights for `∫_{ℝᴺ} f(|ξ|) dξ` on the grid.
    pub fn quadrature(&self) -> &[f64] {
        &self.quad
    }

    /// Angular factor of `∫ (ξ_j/r)² dθ / ω`, i.e. `1/N`, for products of two
    /// `ℓ = 1` functions with the same index.
    pub fn dipole_factor(&self) -> f64 {
        1.0 / self.n() as f64
    }

    /// `(λ₀, Z)`; fails if the sector bottom is not negative.
    pub fn negative_eigenpair(&self) -> Result<(f64, Vec<f64>)> {
        if self.lambda0 >= 0.0 {
            return Err(Error::SpectrumOrderViolation(self.lambda0));
        }
        Ok((self.lambda0, self.z.clone()))
    }

    /// Applies the sector operator to a radial part sampled on the grid,
    /// using fourth order differences (independent of the solver stencil).
    pub fn apply_l0(&self, phi: &[f64], ell: usize) -> Result<Vec<f64>> {
        self.check_len(phi)?;
        let prof = &self.profile;
        let n = self.n() as f64;
        let p = prof.problem.p;
        let (d1, d2) = fd_derivatives(phi, prof.step, ell % 2 == 0);
        let cent = (ell as f64) * (ell as f64 + n - 2.0);
        Ok((0..self.len())
            .map(|i| {
                let r = prof.r[i];
                let pot = 1.0 - p * prof.w[i].powf(p - 1.0);
                if r == 0.0 {
                    if ell == 0 {
                        -n * d2[i] + pot * phi[i]
                    } else {
                        0.0
                    }
                } else {
                    -d2[i] - (n - 1.0) / r * d1[i] + cent / (r * r) * phi[i] + pot * phi[i]
                }
            })
            .collect())
    }

    /// Applies the finite-volume solver stencil of sector `ell`.
    pub fn apply_stencil(&self, phi: &[f64], ell: usize) -> Result<Vec<f64>> {
        self.check_len(phi)?;
        Ok(self.sectors[ell.min(1)].apply(phi))
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::GridMismatch { expected: self.len(), got: v.len() });
        }
        Ok(())
    }

    /// Relative overlap of an `ℓ = 1` radial part with the kernel `w₀′`.
    pub fn fredholm_defect(&self, f: &[f64]) -> f64 {
        let k = &self.profile.wp;
        let fk = crate::numeric::wdot(&self.quad, f, k);
        let ff = crate::numeric::wdot(&self.quad, f, f);
        let kk = crate::numeric::wdot(&self.quad, k, k);
        if ff == 0.0 {
            return 0.0;
        }
        fk.abs() / (ff * kk).sqrt()
    }

    /// Removes the `w₀′` component of an `ℓ = 1` radial part.
    pub fn project_out_kernel(&self, u: &mut [f64]) {
        let k = &self.profile.wp;
        let a = crate::numeric::wdot(&self.quad, u, k) / crate::numeric::wdot(&self.quad, k, k);
        u.iter_mut().zip(k).for_each(|(u, k)| *u -= a * k);
    }

    /// Solves `L₀U = f` in sector `ell`. In `ℓ = 1` the right-hand side must
    /// be orthogonal to `∂_j w₀`; the solution is returned orthogonal to it.
    pub fn solve_orthogonal(&self, f: &[f64], ell: usize) -> Result<Vec<f64>> {
        self.check_len(f)?;
        if ell == 0 {
            return Ok(self.richardson(f, |s, _, g| s[0].solve(g)));
        }
        let defect = self.fredholm_defect(f);
        if defect > TOL_ORTH {
            return Err(Error::FredholmViolation { defect });
        }
        Ok(self.solve_odd_unchecked(f))
    }

    /// `ℓ = 1` solve without the Fredholm gate: the discrete kernel
    /// component of `f` is dropped.
    pub fn solve_odd_unchecked(&self, f: &[f64]) -> Vec<f64> {
        let mut u = self.richardson(f, |s, kd, g| solve_deflated(&s[1], kd, g));
        self.project_out_kernel(&mut u);
        u
    }

    /// Runs a sector solve on the fine and the coarse grid and combines them
    /// as `(4u_h − u_{2h})/3`; the correction is interpolated to odd nodes.
    fn richardson<F>(&self, f: &[f64], solve: F) -> Vec<f64>
    where
        F: Fn(&[RadialSector; 2], &[f64], &[f64]) -> Vec<f64>,
    {
        let fine = solve(&self.sectors, &self.kernel_discrete, f);
        let Some(c) = &self.coarse else { return fine };
        let coarse = solve(&c.sectors, &c.kernel_discrete, &subsample(f));
        let corr: Vec<f64> = coarse.iter().enumerate().map(|(k, v)| (fine[2 * k] - v) / 3.0).collect();
        let h2 = 2.0 * self.profile.step;
        fine.iter()
            .enumerate()
            .map(|(i, u)| {
                let c = if i % 2 == 0 { corr[i / 2] } else { interpolate_uniform(&corr, h2, i as f64 * self.profile.step) };
                u + c
            })
            .collect()
    }

    /// `U₀`, `U_j` and `γ₀`.
    pub fn special_solutions(&self) -> Result<SpecialSolutions> {
        let prof = &self.profile;
        let sigma = prof.problem.sigma();
        let u0 = self.solve_orthogonal(&prof.w, 0)?;
        let f: Vec<f64> = prof.r.iter().zip(&prof.w).zip(&prof.wp).map(|((r, w), d)| d + r * w / sigma).collect();
        let uj = self.solve_orthogonal(&f, 1)?;
        Ok(SpecialSolutions { u0, uj, gamma0: self.coercivity_estimate()? })
    }

    /// `−w₀/(p−1) − (r/2) w₀′`.
    pub fn u0_closed_form(&self) -> Vec<f64> {
        let p = self.profile.problem.p;
        self.profile.r.iter().zip(&self.profile.w).zip(&self.profile.wp)
            .map(|((r, w), d)| -w / (p - 1.0) - 0.5 * r * d)
            .collect()
    }

    /// Smallest eigenvalue of `L₀` on the complement of `span{∂_j w₀, Z}`.
    pub fn coercivity_estimate(&self) -> Result<f64> {
        let prof = &self.profile;
        let mut g = self.sectors[0].eigenvalue(1).min(self.sectors[1].eigenvalue(1));
        if self.n() >= 2 {
            let s2 = RadialSector::assemble(self.n(), prof.problem.p, 2, &prof.r, &prof.w, prof.step);
            g = g.min(s2.eigenvalue(0));
        }
        if g <= 0.0 {
            return Err(Error::NonPositiveCoercivity(g));
        }
        Ok(g)
    }

    /// Radial integral `∫_{ℝᴺ} a(|ξ|) b(|ξ|) dξ`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        crate::numeric::wdot(&self.quad, a, b)
    }

    /// Projection coefficients of `ψ = a(r) + Σ_j b_j(r) ξ_j/r + (other
    /// sectors)`: `Π_j = (1/c₀)∫ψ∂_j w₀` and `Π_{N+1} = ∫ψZ`. Only the
    /// monopole and dipole radial parts enter.
    pub fn project_pi(&self, monopole: &[f64], dipoles: &[Vec<f64>]) -> Vec<f64> {
        let mut out: Vec<f64> = dipoles
            .iter()
            .map(|b| self.dipole_factor() * self.inner(b, &self.profile.wp) / self.c0)
            .collect();
        out.push(self.inner(monopole, &self.z));
        out
    }

    /// `Π^⊥` on the same representation.
    pub fn project_perp(&self, monopole: &[f64], dipoles: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let pi = self.project_pi(monopole, dipoles);
        let zc = pi[dipoles.len()];
        let mono = monopole.iter().zip(&self.z).map(|(a, z)| a - zc * z).collect();
        let dips = dipoles
            .iter()
            .enumerate()
            .map(|(j, b)| b.iter().zip(&self.profile.wp).map(|(b, k)| b - pi[j] * k).collect())
            .collect();
        (mono, dips)
    }

    /// `∫{∂_jU₀ + U_j + σ⁻¹ξ^jU₀ + p(p−1)w₀^{p−2}U_jU₀}∂_jw₀` against `−c₀`.
    pub fn a_term_identity_check(&self, sp: &SpecialSolutions) -> IdentityReport {
        let prof = &self.profile;
        let p = prof.problem.p;
        let sigma = prof.problem.sigma();
        let (du0, _) = fd_derivatives(&sp.u0, prof.step, true);
        let integrand: Vec<f64> = (0..self.len())
            .map(|i| {
                let r = prof.r[i];
                du0[i] + sp.uj[i] + r * sp.u0[i] / sigma + p * (p - 1.0) * prof.w[i].powf(p - 2.0) * sp.uj[i] * sp.u0[i]
            })
            .collect();
        let lhs = self.dipole_factor() * self.inner(&integrand, &prof.wp);
        IdentityReport::new("a_term", lhs, -self.c0)
    }

    /// `∫∂_jw₀∂_sw₀ = δ_{js}c₀` and `∫∂²_{kj}w₀ ξ^k ∂_sw₀ = −(N/2)δ_{js}c₀`.
    pub fn moment_identity_checks(&self) -> Vec<IdentityReport> {
        let prof = &self.profile;
        let n = self.n() as f64;
        let d1 = self.dipole_factor() * self.inner(&prof.wp, &prof.wp);
        let wpp_r: Vec<f64> = (0..self.len()).map(|i| prof.second_derivative_at(i) * prof.r[i]).collect();
        let moment = self.dipole_factor() * self.inner(&wpp_r, &prof.wp);
        vec![
            IdentityReport::new("gradient_gram", d1, self.c0),
            IdentityReport::new("moment", moment, -0.5 * n * self.c0),
        ]
    }

    /// Linear interpolation-free lookup of a radial grid function at any
    /// `r ≥ 0` by local cubic Lagrange interpolation; zero beyond the grid.
    pub fn interpolate(&self, f: &[f64], r: f64) -> f64 {
        interpolate_uniform(f, self.profile.step, r)
    }
}

/// Fourth-order first and second derivatives of a grid function on
/// `0, h, 2h, …`. `even` selects the reflection used at the origin; the last
/// two nodes use one-sided stencils.
pub fn fd_derivatives(f: &[f64], h: f64, even: bool) -> (Vec<f64>, Vec<f64>) {
    let m = f.len();
    let sgn = if even { 1.0 } else { -1.0 };
    let at = |i: isize| -> f64 {
        if i < 0 {
            sgn * f[(-i) as usize]
        } else {
            f[i as usize]
        }
    };
    let mut d1 = vec![0.0; m];
    let mut d2 = vec![0.0; m];
    for i in 0..m.saturating_sub(2) as isize {
        d1[i as usize] = (-at(i + 2) + 8.0 * at(i + 1) - 8.0 * at(i - 1) + at(i - 2)) / (12.0 * h);
        d2[i as usize] =
            (-at(i + 2) + 16.0 * at(i + 1) - 30.0 * at(i) + 16.0 * at(i - 1) - at(i - 2)) / (12.0 * h * h);
    }
    if m >= 6 {
        let k = |j: usize| f[m - 1 - j];
        d1[m - 1] = (25.0 * k(0) - 48.0 * k(1) + 36.0 * k(2) - 16.0 * k(3) + 3.0 * k(4)) / (12.0 * h);
        d2[m - 1] =
            (45.0 * k(0) - 154.0 * k(1) + 214.0 * k(2) - 156.0 * k(3) + 61.0 * k(4) - 10.0 * k(5)) / (12.0 * h * h);
        d1[m - 2] = (3.0 * k(0) + 10.0 * k(1) - 18.0 * k(2) + 6.0 * k(3) - k(4)) / (12.0 * h);
        d2[m - 2] =
            (10.0 * k(0) - 15.0 * k(1) - 4.0 * k(2) + 14.0 * k(3) - 6.0 * k(4) + k(5)) / (12.0 * h * h);
    }
    (d1, d2)
}

/// Cubic Lagrange interpolation on the uniform grid `0, h, 2h, …`.
pub fn interpolate_uniform(f: &[f64], h: f64, r: f64) -> f64 {
    let m = f.len();
    if r < 0.0 || r > (m - 1) as f64 * h {
        return 0.0;
    }
    let i = ((r / h).floor() as usize).clamp(1, m.saturating_sub(3));
    let t = r / h - i as f64;
    let (a, b, c, d) = (f[i - 1], f[i], f[i + 1], f[i + 2]);
    let l0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
    let l1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    let l2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
    let l3 = (t + 1.0) * t * (t - 1.0) / 6.0;
    a * l0 + b * l1 + c * l2 + d * l3
}

/// Row of the eigen/special-solution CSV export.
#[derive(Debug, Serialize)]
struct RadialRow {
    r: f64,
    value: f64,
}

/// Writes `r,value` rows.
pub fn write_radial_csv<P: AsRef<Path>>(path: P, r: &[f64], v: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    for (r, v) in r.iter().zip(v) {
        out.serialize(RadialRow { r: *r, value: *v })?;
    }
    out.flush()?;
    Ok(())
}
