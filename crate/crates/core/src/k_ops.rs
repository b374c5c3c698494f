//! Operators and functionals on `K`: the weighted energy, the stationary
//! residual, the Jacobi operator and its non-degeneracy form, and the gap
//! operator `−ε²Δ_K + λ₀μ²`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::FermiChart;
use crate::norms::{c0_alpha_periodic, c2_alpha_periodic, fourier_resample, spectral_derivative, spectral_matrices, ALPHA};
use crate::numeric::{brent, loglog_slope};
use crate::potential::{PotentialModel, Restriction};

/// Threshold below which `min |spec J|` counts as degenerate.
pub const TOL_ND: f64 = 1e-6;

/// `σ = (p+1)/(p−1) − N/2`.
pub fn sigma(p: f64, codim: usize) -> f64 {
    (p + 1.0) / (p - 1.0) - codim as f64 / 2.0
}

fn node_weight(chart: &FermiChart) -> f64 {
    chart.length() / chart.frames.len() as f64
}

/// `∫_K V^σ` by the periodic trapezoid rule.
pub fn weighted_energy(chart: &FermiChart, rs: &Restriction) -> f64 {
    let s = sigma(rs.p, chart.codim());
    node_weight(chart) * rs.v.iter().map(|v| v.powf(s)).sum::<f64>()
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryReport {
    /// `σ∇^N V + V·H` per node and normal component.
    pub residual: Vec<Vec<f64>>,
    pub sup_norm: f64,
    pub tol: f64,
    pub stationary: bool,
}

pub fn stationary_residual(chart: &FermiChart, rs: &Restriction) -> StationaryReport {
    let s = sigma(rs.p, chart.codim());
    let residual: Vec<Vec<f64>> = chart
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            rs.grad_n[i].iter().zip(&f.mean_curvature).map(|(g, h)| s * g + rs.v[i] * h).collect()
        })
        .collect();
    let sup_norm = residual.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-8 * rs.bounds.1;
    StationaryReport { residual, sup_norm, tol, stationary: sup_norm < tol }
}

/// `ℰ(r) = 2πr V(r)^σ` for a circle of radius `r` in a plane through the
/// centre of a radial potential.
pub fn circle_energy(pot: &PotentialModel, sigma: f64, r: f64) -> Result<f64> {
    let v = pot.radial_derivatives(r, 0)?[0];
    Ok(2.0 * PI * r * v.powf(sigma))
}

/// `dℰ/dr = 2πV^{σ−1}(V + σ r V′)`.
pub fn circle_energy_slope(pot: &PotentialModel, sigma: f64, r: f64) -> Result<f64> {
    let d = pot.radial_derivatives(r, 1)?;
    Ok(2.0 * PI * d[0].powf(sigma - 1.0) * (d[0] + sigma * r * d[1]))
}

/// Critical radius of `ℰ(r)` inside `bracket`.
pub fn find_stationary_radius(pot: &PotentialModel, sigma: f64, bracket: (f64, f64)) -> Result<f64> {
    let g = |r: f64| {
        let d = pot.radial_derivatives(r, 1).expect("radial");
        d[0] + sigma * r * d[1]
    };
    pot.radial_derivatives(1.0, 1)?;
    let (lo, hi) = bracket;
    if g(lo) * g(hi) > 0.0 {
        return Err(Error::NoSignChange { lo, hi });
    }
    brent(g, lo, hi, 1e-15).ok_or(Error::NoSignChange { lo, hi })
}

/// Discretized Jacobi operator on normal sections, component-major layout
/// (`index = s·m + node`).
#[derive(Debug, Clone)]
pub struct JacobiOperator {
    pub codim: usize,
    pub nodes: usize,
    pub length: f64,
    pub sigma: f64,
    pub matrix: DMatrix<f64>,
    /// `V^σ` trapezoid weights per node.
    pub weights: Vec<f64>,
    /// Eigenvalues, descending.
    pub spectrum: Vec<f64>,
    pub stationary: bool,
    pub mean_curvature: Vec<Vec<f64>>,
    pub c0_holder_alpha: f64,
}

/// Pointwise zeroth-order block of the Jacobi operator at node `i`.
fn potential_block(chart: &FermiChart, rs: &Restriction, i: usize, sigma: f64) -> DMatrix<f64> {
    let nn = chart.codim();
    let gam = &chart.frames[i].gamma;
    DMatrix::from_fn(nn, nn, |s, k| {
        -chart.riemann(k + 1, 0, 0, s + 1) + gam[k] * gam[s] - sigma / rs.v[i] * rs.hess_n[i][(s, k)]
            + gam[k] * gam[s] / sigma
    })
}

impl JacobiOperator {
    pub fn assemble(chart: &FermiChart, rs: &Restriction) -> Result<Self> {
        let nn = chart.codim();
        let m = chart.frames.len();
        if m % 2 != 0 || rs.len() != m {
            return Err(Error::GridMismatch { expected: m, got: rs.len() });
        }
        let sigma = sigma(rs.p, nn);
        let length = chart.length();
        // Δ_K + σV⁻¹∇V·∇ = V^{−σ/2}(Δ_K − q)V^{σ/2}, q = Δ_K(V^{σ/2})/V^{σ/2}
        let (_, d2) = spectral_matrices(m, length);
        let root: Vec<f64> = rs.v.iter().map(|v| v.powf(0.5 * sigma)).collect();
        let droot = spectral_derivative(&root, length, 2);
        let mut a = DMatrix::zeros(nn * m, nn * m);
        for s in 0..nn {
            for i in 0..m {
                for j in 0..m {
                    a[(s * m + i, s * m + j)] = d2[(i, j)] * root[j] / root[i];
                }
                a[(s * m + i, s * m + i)] -= droot[i] / root[i];
            }
        }
        for i in 0..m {
            let b = potential_block(chart, rs, i, sigma);
            for s in 0..nn {
                for k in 0..nn {
                    a[(s * m + i, k * m + i)] += b[(s, k)];
                }
            }
        }
        let dw = length / m as f64;
        let weights: Vec<f64> = rs.v.iter().map(|v| v.powf(sigma) * dw).collect();
        let stationary = stationary_residual(chart, rs).stationary;
        let mut op = JacobiOperator {
            codim: nn,
            nodes: m,
            length,
            sigma,
            matrix: a,
            weights,
            spectrum: Vec::new(),
            stationary,
            mean_curvature: chart.frames.iter().map(|f| f.mean_curvature.clone()).collect(),
            c0_holder_alpha: ALPHA,
        };
        op.spectrum = op.compute_spectrum();
        Ok(op)
    }

    fn weight(&self, idx: usize) -> f64 {
        self.weights[idx % self.nodes]
    }

    fn compute_spectrum(&self) -> Vec<f64> {
        let n = self.matrix.nrows();
        let s = DMatrix::from_fn(n, n, |i, j| {
            self.matrix[(i, j)] * (self.weight(i) / self.weight(j)).sqrt()
        });
        let sym = (&s + s.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    /// `max |WJ − (WJ)ᵀ| / max |WJ|` with `W = diag(V^σ)`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.matrix.nrows();
        let wj = DMatrix::from_fn(n, n, |i, j| self.weight(i) * self.matrix[(i, j)]);
        (&wj - wj.transpose()).abs().max() / wj.abs().max()
    }

    /// `min |λ|` over the spectrum.
    pub fn nondegeneracy(&self) -> f64 {
        self.spectrum.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn is_nondegenerate(&self) -> bool {
        self.nondegeneracy() > TOL_ND
    }

    fn flatten(&self, phi: &[Vec<f64>]) -> DVector<f64> {
        DVector::from_iterator(self.codim * self.nodes, phi.iter().flatten().copied())
    }

    fn unflatten(&self, v: &DVector<f64>) -> Vec<Vec<f64>> {
        (0..self.codim).map(|s| v.rows(s * self.nodes, self.nodes).iter().copied().collect()).collect()
    }

    pub fn apply(&self, phi: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.unflatten(&(&self.matrix * self.flatten(phi)))
    }

    /// `⟨a, b⟩_{V^σ}`.
    pub fn inner(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut s = 0.0;
        for (ac, bc) in a.iter().zip(b) {
            for i in 0..self.nodes {
                s += self.weights[i] * ac[i] * bc[i];
            }
        }
        s
    }

    /// Solves `J Φ = Ψ`.
    pub fn invert(&self, psi: &[Vec<f64>]) -> Result<JacobiSolve> {
        if !self.is_nondegenerate() {
            return Err(Error::DegenerateOperator(self.nondegeneracy()));
        }
        let b = self.flatten(psi);
        let x = self.matrix.clone().lu().solve(&b).ok_or(Error::DegenerateOperator(0.0))?;
        let phi = self.unflatten(&x);
        let r = &self.matrix * &x - &b;
        let residual = r.amax() / b.amax().max(1e-300);
        let h = self.length / self.nodes as f64;
        let num: f64 = phi.iter().map(|c| c2_alpha_periodic(c, self.length, ALPHA)).fold(0.0, f64::max);
        let den: f64 = psi.iter().map(|c| c0_alpha_periodic(c, h, ALPHA)).fold(0.0, f64::max);
        Ok(JacobiSolve { phi, residual, bound_constant: if den > 0.0 { num / den } else { 0.0 } })
    }

    /// Right-hand side `c₀·H·e` for the first normal correction.
    pub fn phi0_rhs(&self, c0: f64, e: &[f64]) -> Vec<Vec<f64>> {
        (0..self.codim).map(|s| (0..self.nodes).map(|i| c0 * self.mean_curvature[i][s] * e[i]).collect()).collect()
    }

    /// Writes `mode,eigenvalue`.
    pub fn write_spectrum_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["mode", "eigenvalue"])?;
        for (i, v) in self.spectrum.iter().enumerate() {
            w.write_record([i.to_string(), format!("{v:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct JacobiSolve {
    pub phi: Vec<Vec<f64>>,
    /// Relative max-norm residual of the linear solve.
    pub residual: f64,
    /// Measured `‖Φ‖_{2,α} / ‖Ψ‖_{0,α}`.
    pub bound_constant: f64,
}

/// The non-degeneracy quadratic form, normalized as the second variation of
/// `ℰ`: `∫_K { |∇_KΦ|² − σ⁻¹H(Φ)² + σV⁻¹(∇^N)²V[Φ,Φ] + Ric(Φ,Φ) − Γ(Φ)Γ(Φ) } V^σ`,
/// with `Ric_{ks} = Σ_α R_{αksα}` and tangential derivatives by FFT.
pub fn nondegeneracy_form(chart: &FermiChart, rs: &Restriction, phi: &[Vec<f64>]) -> f64 {
    let nn = chart.codim();
    let n = chart.n();
    let m = chart.frames.len();
    let sigma = sigma(rs.p, nn);
    let dw = chart.length() / m as f64;
    let dphi: Vec<Vec<f64>> = phi.iter().map(|c| spectral_derivative(c, chart.length(), 1)).collect();
    let ric = DMatrix::from_fn(nn, nn, |k, s| (0..n).map(|a| chart.riemann(a, k + 1, s + 1, a)).sum::<f64>());
    let mut total = 0.0;
    for i in 0..m {
        let f = &chart.frames[i];
        let ph = DVector::from_iterator(nn, (0..nn).map(|s| phi[s][i]));
        let grad2: f64 = (0..nn).map(|s| dphi[s][i] * dphi[s][i]).sum();
        let hphi: f64 = (0..nn).map(|s| f.mean_curvature[s] * ph[s]).sum();
        let gphi: f64 = (0..nn).map(|s| f.gamma[s] * ph[s]).sum();
        let hess = (ph.transpose() * &rs.hess_n[i] * &ph)[(0, 0)];
        let rq = (ph.transpose() * &ric * &ph)[(0, 0)];
        let integrand = grad2 - hphi * hphi / sigma + sigma / rs.v[i] * hess + rq - gphi * gphi;
        total += dw * rs.v[i].powf(sigma) * integrand;
    }
    total
}

/// `−ε²Δ_K + λ₀μ²` on scalar functions of a closed curve of length `L`.
#[derive(Debug, Clone)]
pub struct GapOperator {
    pub epsilon: f64,
    pub lambda0: f64,
    pub length: f64,
    pub mu2: Vec<f64>,
    pub matrix: DMatrix<f64>,
    /// Eigenvalues, ascending.
    pub spectrum: Vec<f64>,
}

impl GapOperator {
    /// Assembles on `nodes` points, resampling `μ²` from its chart samples.
    pub fn assemble(mu2_samples: &[f64], length: f64, lambda0: f64, epsilon: f64, nodes: usize) -> Self {
        let mu2 = fourier_resample(mu2_samples, nodes);
        let (_, d2) = spectral_matrices(nodes, length);
        let mut a = d2 * (-epsilon * epsilon);
        for i in 0..nodes {
            a[(i, i)] += lambda0 * mu2[i];
        }
        let mut spectrum: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
        spectrum.sort_by(|a, b| a.partial_cmp(b).unwrap());
        GapOperator { epsilon, lambda0, length, mu2, matrix: a, spectrum }
    }

    /// Node count resolving every negative eigenvalue with margin.
    pub fn nodes_for(mu2_max: f64, length: f64, lambda0: f64, epsilon: f64) -> usize {
        let lmax = (lambda0.abs() * mu2_max).sqrt() * length / (2.0 * PI * epsilon);
        ((4.0 * lmax).max(256.0).ceil() as usize).next_power_of_two()
    }

    pub fn dist_to_spectrum(&self) -> f64 {
        self.spectrum.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// `‖𝒦_ε⁻¹‖₂` from the smallest singular value.
    pub fn inverse_norm(&self) -> f64 {
        let sv = self.matrix.clone().singular_values();
        1.0 / sv.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    pub fn negative_count(&self) -> usize {
        self.spectrum.iter().filter(|v| **v < 0.0).count()
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let x = self
            .matrix
            .clone()
            .lu()
            .solve(&DVector::from_column_slice(rhs))
            .ok_or(Error::ResonantEpsilon { epsilon: self.epsilon, dist: 0.0 })?;
        Ok(x.iter().copied().collect())
    }
}

/// Resonance level `μ₀ = −λ₀μ²(L/2π)²` for constant `μ`.
pub fn resonance_level(lambda0: f64, mu2: f64, length: f64) -> f64 {
    -lambda0 * mu2 * (length / (2.0 * PI)).powi(2)
}

/// `ε` values where `ε²(2πℓ/L)² + λ₀μ² = 0`, `ℓ = 1..=count`.
pub fn resonances(lambda0: f64, mu2: f64, length: f64, count: usize) -> Vec<f64> {
    let mu0 = resonance_level(lambda0, mu2, length);
    (1..=count).map(|l| mu0.sqrt() / l as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub epsilon: f64,
    pub dist_to_spectrum: f64,
    pub admissible: bool,
    pub inv_norm: f64,
}

/// Scans `ε` values in parallel; `ε` is admissible iff `dist ≥ c ε`.
pub fn gap_scan(mu2_samples: &[f64], length: f64, lambda0: f64, epsilons: &[f64], c: f64) -> Vec<GapRow> {
    let mu2_max = mu2_samples.iter().fold(0.0_f64, |m, v| m.max(*v));
    epsilons
        .par_iter()
        .map(|&eps| {
            let nodes = GapOperator::nodes_for(mu2_max, length, lambda0, eps);
            let k = GapOperator::assemble(mu2_samples, length, lambda0, eps, nodes);
            let dist = k.dist_to_spectrum();
            GapRow { epsilon: eps, dist_to_spectrum: dist, admissible: dist >= c * eps, inv_norm: 1.0 / dist }
        })
        .collect()
}

pub fn write_gap_csv(rows: &[GapRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epsilon", "dist_to_spectrum", "admissible", "inv_norm"])?;
    for r in rows {
        w.write_record([
            format!("{:e}", r.epsilon),
            format!("{:e}", r.dist_to_spectrum),
            r.admissible.to_string(),
            format!("{:e}", r.inv_norm),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct WeylReport {
    pub epsilons: Vec<f64>,
    pub counts: Vec<usize>,
    pub predicted: Vec<usize>,
    pub exponent: f64,
}

/// Counts negative eigenvalues of `𝒦_ε` and fits `count ~ C ε^q`. The
/// prediction is the constant-`μ` lattice count
/// `#{ℓ ∈ ℤ : ε²(2πℓ/L)² < −λ₀μ²}`.
pub fn weyl_count_check(mu2_samples: &[f64], length: f64, lambda0: f64, epsilons: &[f64]) -> WeylReport {
    let mu2_max = mu2_samples.iter().fold(0.0_f64, |m, v| m.max(*v));
    let mu2_mean = mu2_samples.iter().sum::<f64>() / mu2_samples.len() as f64;
    let counts: Vec<usize> = epsilons
        .par_iter()
        .map(|&eps| {
            let nodes = GapOperator::nodes_for(mu2_max, length, lambda0, eps);
            GapOperator::assemble(mu2_samples, length, lambda0, eps, nodes).negative_count()
        })
        .collect();
    let predicted = epsilons
        .iter()
        .map(|eps| {
            let lmax = resonance_level(lambda0, mu2_mean, length).sqrt() / eps;
            let floor = if lmax.fract() == 0.0 { lmax - 1.0 } else { lmax.floor() };
            2 * floor as usize + 1
        })
        .collect();
    let exponent = loglog_slope(epsilons, &counts.iter().map(|c| *c as f64).collect::<Vec<_>>());
    WeylReport { epsilons: epsilons.to_vec(), counts, predicted, exponent }
}
