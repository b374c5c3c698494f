//! Closed-form potentials `V` on the ambient space and their normal Taylor
//! data along `K`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{FermiChart, Submanifold};

/// Analytic potential models with exact derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PotentialModel {
    /// `V ≡ value`.
    Constant { value: f64 },
    /// `V = floor + e^{−|z−c|²/2}`.
    Gaussian { floor: f64, center: Vec<f64> },
    /// `V = 1 + |z|²`.
    Polynomial,
}

impl PotentialModel {
    pub fn constant(value: f64) -> Self {
        PotentialModel::Constant { value }
    }

    /// Gaussian bump centred at the origin with the given floor.
    pub fn gaussian(floor: f64) -> Self {
        PotentialModel::Gaussian { floor, center: Vec::new() }
    }

    fn shift(&self, z: &[f64]) -> Vec<f64> {
        match self {
            PotentialModel::Gaussian { center, .. } => {
                z.iter().enumerate().map(|(i, v)| v - center.get(i).copied().unwrap_or(0.0)).collect()
            }
            _ => z.to_vec(),
        }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            PotentialModel::Constant { value } => *value,
            PotentialModel::Gaussian { floor, .. } => {
                let d = self.shift(z);
                floor + (-0.5 * d.iter().map(|x| x * x).sum::<f64>()).exp()
            }
            PotentialModel::Polynomial => 1.0 + z.iter().map(|x| x * x).sum::<f64>(),
        }
    }

    pub fn gradient(&self, z: &[f64]) -> DVector<f64> {
        let m = z.len();
        match self {
            PotentialModel::Constant { .. } => DVector::zeros(m),
            PotentialModel::Gaussian { floor, .. } => {
                let d = self.shift(z);
                let g = self.value(z) - floor;
                DVector::from_iterator(m, d.iter().map(|x| -x * g))
            }
            PotentialModel::Polynomial => DVector::from_iterator(m, z.iter().map(|x| 2.0 * x)),
        }
    }

    pub fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let m = z.len();
        match self {
            PotentialModel::Constant { .. } => DMatrix::zeros(m, m),
            PotentialModel::Gaussian { floor, .. } => {
                let d = self.shift(z);
                let g = self.value(z) - floor;
                DMatrix::from_fn(m, m, |i, j| (d[i] * d[j] - if i == j { 1.0 } else { 0.0 }) * g)
            }
            PotentialModel::Polynomial => DMatrix::identity(m, m) * 2.0,
        }
    }

    /// Global bounds `(V₁, V₂)` on a ball of the given radius about the origin.
    pub fn bounds(&self, radius: f64) -> (f64, f64) {
        match self {
            PotentialModel::Constant { value } => (*value, *value),
            PotentialModel::Gaussian { floor, center } => {
                let c = center.iter().map(|x| x * x).sum::<f64>().sqrt();
                (floor + (-0.5 * (radius + c).powi(2)).exp(), floor + 1.0)
            }
            PotentialModel::Polynomial => (1.0, 1.0 + radius * radius),
        }
    }

    /// Whether `V` depends on `|z|` only.
    pub fn is_radial(&self) -> bool {
        match self {
            PotentialModel::Gaussian { center, .. } => center.iter().all(|c| *c == 0.0),
            _ => true,
        }
    }

    /// `dᵏV/dρᵏ` for `k = 0..=order` of a radial model at `ρ = |z|`.
    pub fn radial_derivatives(&self, rho: f64, order: usize) -> Result<Vec<f64>> {
        if !self.is_radial() {
            return Err(Error::InvalidProblem("potential is not radial".into()));
        }
        let mut d = vec![0.0; order + 1];
        match self {
            PotentialModel::Constant { value } => d[0] = *value,
            PotentialModel::Gaussian { floor, .. } => {
                // dᵏ e^{−ρ²/2} = (−1)ᵏ Heₖ(ρ) e^{−ρ²/2}
                let g = (-0.5 * rho * rho).exp();
                let (mut hm, mut h) = (0.0, 1.0);
                for (k, dk) in d.iter_mut().enumerate() {
                    *dk = if k % 2 == 0 { h * g } else { -h * g };
                    let next = rho * h - k as f64 * hm;
                    hm = h;
                    h = next;
                }
                d[0] += floor;
            }
            PotentialModel::Polynomial => {
                d[0] = 1.0 + rho * rho;
                if order >= 1 {
                    d[1] = 2.0 * rho;
                }
                if order >= 2 {
                    d[2] = 2.0;
                }
            }
        }
        Ok(d)
    }

    /// Evaluates `V` at the Fermi point `(ȳ, x̄)` of the chart.
    pub fn at_chart_point(&self, chart: &FermiChart, ybar: f64, xbar: &[f64]) -> f64 {
        self.value(&chart.embed(ybar, xbar))
    }

    /// Samples the normal Taylor data along `K` on the chart grid.
    pub fn restrict_to_chart(&self, chart: &FermiChart, p: f64) -> Result<Restriction> {
        let nn = chart.codim();
        let region = chart
            .frames
            .iter()
            .map(|f| f.point.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let (lo, hi) = self.bounds(region + 1.0);
        if lo <= 0.0 {
            return Err(Error::BoundViolation { value: lo, lo: 0.0, hi });
        }
        let mut out = Restriction {
            ybar: Vec::new(),
            v: Vec::new(),
            dv_tangent: Vec::new(),
            grad_n: Vec::new(),
            hess_n: Vec::new(),
            mu: Vec::new(),
            h: Vec::new(),
            bounds: (lo, hi),
            p,
        };
        for f in &chart.frames {
            let z = &f.point;
            let v = self.value(z);
            if v < lo * (1.0 - 1e-12) || v > hi * (1.0 + 1e-12) {
                return Err(Error::BoundViolation { value: v, lo, hi });
            }
            let g = self.gradient(z);
            let hs = self.hessian(z);
            let nu: Vec<DVector<f64>> = f.normals.iter().map(|n| DVector::from_column_slice(n)).collect();
            let t = DVector::from_column_slice(&f.tangent);
            let grad_n: Vec<f64> = nu.iter().map(|n| g.dot(n)).collect();
            let mut hn = DMatrix::from_fn(nn, nn, |i, j| (nu[i].transpose() * &hs * &nu[j])[(0, 0)]);
            if let Submanifold::GreatCircle = chart.submanifold {
                // ∂²F/∂x̄ᵢ∂x̄ⱼ = −δᵢⱼ F on the unit sphere
                let gp = g.dot(&DVector::from_column_slice(z));
                for i in 0..nn {
                    hn[(i, i)] -= gp;
                }
            }
            out.ybar.push(f.ybar);
            out.v.push(v);
            out.dv_tangent.push(g.dot(&t));
            out.grad_n.push(grad_n);
            out.hess_n.push(hn);
            out.mu.push(v.sqrt());
            out.h.push(v.powf(1.0 / (p - 1.0)));
        }
        Ok(out)
    }
}

/// Normal Taylor data of `V` along `K` on the chart's `ȳ` grid.
#[derive(Debug, Clone)]
pub struct Restriction {
    pub ybar: Vec<f64>,
    pub v: Vec<f64>,
    /// `∂_ȳ V(ȳ, 0)`.
    pub dv_tangent: Vec<f64>,
    /// `∇^N V(ȳ, 0)` in the normal frame.
    pub grad_n: Vec<Vec<f64>>,
    /// `(∇^N)² V(ȳ, 0)`.
    pub hess_n: Vec<DMatrix<f64>>,
    pub mu: Vec<f64>,
    pub h: Vec<f64>,
    pub bounds: (f64, f64),
    pub p: f64,
}

impl Restriction {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Second-order normal Taylor polynomial at node `i`.
    pub fn taylor(&self, i: usize, xbar: &[f64]) -> f64 {
        let g: f64 = self.grad_n[i].iter().zip(xbar).map(|(a, b)| a * b).sum();
        let x = DVector::from_column_slice(xbar);
        self.v[i] + g + 0.5 * (x.transpose() * &self.hess_n[i] * &x)[(0, 0)]
    }

    /// Writes `ybar,V,dV_t,dV_1..dV_N,d2V_11..,mu,h`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let nn = self.grad_n.first().map_or(0, |g| g.len());
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["ybar".to_string(), "V".into(), "dV_t".into()];
        header.extend((1..=nn).map(|j| format!("dV_{j}")));
        for i in 1..=nn {
            for j in 1..=nn {
                header.push(format!("d2V_{i}{j}"));
            }
        }
        header.extend(["mu".to_string(), "h".into()]);
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.ybar[k], self.v[k], self.dv_tangent[k]];
            row.extend(&self.grad_n[k]);
            for i in 0..nn {
                for j in 0..nn {
                    row.push(self.hess_n[k][(i, j)]);
                }
            }
            row.extend([self.mu[k], self.h[k]]);
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}
