//! Small numerical kernels shared by the operator modules: uniform-grid
//! quadrature, tridiagonal solves, Sturm-sequence eigenvalues and slope fits.

/// Composite Simpson weights for `n` equally spaced nodes with step `h`.
///
/// An odd number of intervals is handled by closing with the 3/8 rule on the
/// last three intervals, so the rule stays fourth order for every `n >= 4`.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    match n {
        0 | 1 => return w,
        2 => {
            w[0] = h / 2.0;
            w[1] = h / 2.0;
            return w;
        }
        3 => {
            w[0] = h / 3.0;
            w[1] = 4.0 * h / 3.0;
            w[2] = h / 3.0;
            return w;
        }
        _ => {}
    }
    let intervals = n - 1;
    let simpson_end = if intervals % 2 == 0 { n - 1 } else { n - 4 };
    for i in (0..simpson_end).step_by(2) {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
    }
    if simpson_end != n - 1 {
        let s = simpson_end;
        w[s] += 3.0 * h / 8.0;
        w[s + 1] += 9.0 * h / 8.0;
        w[s + 2] += 9.0 * h / 8.0;
        w[s + 3] += 3.0 * h / 8.0;
    }
    w
}

/// Weighted dot product `Σ w_i a_i b_i`.
pub fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Sup norm of a slice.
pub fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// A general tridiagonal matrix stored by diagonals. `lower[i]` couples row
/// `i + 1` to column `i`, `upper[i]` couples row `i` to column `i + 1`.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    /// Solves `(A - shift·I) x = b` by the Thomas algorithm with partial
    /// pivoting disabled; callers only pass diagonally dominant or shifted
    /// symmetric systems.
    pub fn solve_shifted(&self, shift: f64, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0] - shift;
        c[0] = if n > 1 { self.upper[0] / denom } else { 0.0 };
        d[0] = b[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - shift - self.lower[i - 1] * c[i - 1];
            if i + 1 < n {
                c[i] = self.upper[i] / denom;
            }
            d[i] = (b[i] - self.lower[i - 1] * d[i - 1]) / denom;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_shifted(0.0, b)
    }
}

/// Symmetric tridiagonal matrix with diagonal `a` and off-diagonal `b`.
#[derive(Debug, Clone)]
pub struct SymTridiagonal {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SymTridiagonal {
    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    pub fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = self.a[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.a.len() {
            let prev = if q == 0.0 { f64::EPSILON * (self.b[i - 1].abs() + 1.0) } else { q };
            q = self.a[i] - x - self.b[i - 1] * self.b[i - 1] / prev;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn bounds(&self) -> (f64, f64) {
        let n = self.a.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.b[i - 1].abs();
            }
            if i + 1 < n {
                r += self.b[i].abs();
            }
            lo = lo.min(self.a[i] - r);
            hi = hi.max(self.a[i] + r);
        }
        (lo, hi)
    }

    /// The `k`-th smallest eigenvalue (0-based) by bisection on the Sturm count.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.bounds();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn as_general(&self) -> Tridiagonal {
        Tridiagonal { lower: self.b.clone(), diag: self.a.clone(), upper: self.b.clone() }
    }

    /// Eigenvector for an accurately known eigenvalue by inverse iteration.
    /// Returned with unit Euclidean norm and a positive largest component.
    pub fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let n = self.a.len();
        let t = self.as_general();
        let scale = self.bounds().1.abs().max(self.bounds().0.abs()).max(1.0);
        let shift = lambda + scale * 1e-13;
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * ((i * 7919) % 13) as f64).collect();
        for _ in 0..4 {
            let y = t.solve_shifted(shift, &x);
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            x = y.into_iter().map(|v| v / norm).collect();
        }
        let imax = x
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if x[imax] < 0.0 {
            x.iter_mut().for_each(|v| *v = -*v);
        }
        x
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_slope(&lx, &ly)
}

/// Least-squares slope of `y` against `x`.
pub fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Root of `f` on `[lo, hi]` by Brent's method. Returns `None` when the
/// endpoints do not bracket a sign change.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Option<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Some(b)
}

impl Tridiagonal {
    /// LU solve with partial pivoting (the `gttrf`/`gtts2` scheme); safe for
    /// indefinite systems.
    /// `A(ηψ) − η·Aψ`, summed as `Σ_j A_ij (η_j − η_i) ψ_j` to avoid cancellation.
    pub fn commutator(&self, eta: &[f64], psi: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                if i > 0 {
                    s += self.lower[i - 1] * (eta[i - 1] - eta[i]) * psi[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * (eta[i + 1] - eta[i]) * psi[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn solve_pivoted(&self, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut x = b.to_vec();
        if n == 1 {
            x[0] /= self.diag[0];
            return x;
        }
        let mut dl = self.lower.clone();
        let mut d = self.diag.clone();
        let mut du = self.upper.clone();
        let mut du2 = vec![0.0; n];
        let mut swap = vec![false; n];
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i] != 0.0 {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] -= fact * du[i];
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swap[i] = true;
            }
        }
        for i in 0..n - 1 {
            if swap[i] {
                let temp = x[i];
                x[i] = x[i + 1];
                x[i + 1] = temp - dl[i] * x[i];
            } else {
                x[i + 1] -= dl[i] * x[i];
            }
        }
        x[n - 1] /= d[n - 1];
        x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_cubics_exactly() {
        for n in [4usize, 5, 8, 11] {
            let h = 2.0 / (n - 1) as f64;
            let w = simpson_weights(n, h);
            let s: f64 = (0..n).map(|i| {
                let x = i as f64 * h;
                w[i] * (x * x * x - x + 1.0)
            }).sum();
            assert!((s - (4.0 - 2.0 + 2.0)).abs() < 1e-12, "n={n} s={s}");
        }
    }

    #[test]
    fn sturm_count_matches_known_spectrum() {
        // second difference matrix: eigenvalues 2 - 2cos(kπ/(n+1))
        let n = 20;
        let t = SymTridiagonal { a: vec![2.0; n], b: vec![-1.0; n - 1] };
        for k in 0..n {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((t.eigenvalue(k) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn brent_finds_sqrt2() {
        let r = brent(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        assert!(brent(|x| x * x + 1.0, 0.0, 2.0, 1e-14).is_none());
    }

    #[test]
    fn pivoted_solve_handles_zero_pivots() {
        // leading diagonal entry zero: plain Thomas would divide by zero
        let t = Tridiagonal { lower: vec![1.0, 2.0, -1.0], diag: vec![0.0, -3.0, 0.5, 4.0], upper: vec![2.0, 1.0, 3.0] };
        let x = [1.0, -2.0, 0.5, 3.0];
        let b = t.apply(&x);
        let y = t.solve_pivoted(&b);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
