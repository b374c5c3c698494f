//! Discrete Hölder-type surrogate norms and periodic spectral derivatives.
//!
//! The `C^{0,α}` surrogate is `sup|f| + max |f(a) − f(b)|/|a − b|^α` over
//! node pairs with `0 < |a − b| ≤ 1`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Default Hölder exponent.
pub const ALPHA: f64 = 0.5;
/// Default exponential weight rate.
pub const RHO: f64 = 0.5;

pub fn sup(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Hölder seminorm on a uniform periodic grid of spacing `h`.
pub fn holder_seminorm_periodic(f: &[f64], h: f64, alpha: f64) -> f64 {
    let m = f.len();
    let reach = ((1.0 / h).floor() as usize).clamp(1, m / 2);
    let mut best = 0.0_f64;
    for d in 1..=reach {
        let scale = (d as f64 * h).powf(alpha);
        for i in 0..m {
            best = best.max((f[(i + d) % m] - f[i]).abs() / scale);
        }
    }
    best
}

/// Hölder seminorm on a uniform open grid of spacing `h`.
pub fn holder_seminorm(f: &[f64], h: f64, alpha: f64) -> f64 {
    let m = f.len();
    let reach = ((1.0 / h).floor() as usize).clamp(1, m.saturating_sub(1).max(1));
    let mut best = 0.0_f64;
    for d in 1..=reach.min(m.saturating_sub(1)) {
        let scale = (d as f64 * h).powf(alpha);
        for i in 0..m - d {
            best = best.max((f[i + d] - f[i]).abs() / scale);
        }
    }
    best
}

pub fn c0_alpha_periodic(f: &[f64], h: f64, alpha: f64) -> f64 {
    sup(f) + holder_seminorm_periodic(f, h, alpha)
}

/// `sup|f| + sup|f′| + ‖f″‖_{C^{0,α}}` with spectral derivatives.
pub fn c2_alpha_periodic(f: &[f64], length: f64, alpha: f64) -> f64 {
    let h = length / f.len() as f64;
    let d1 = spectral_derivative(f, length, 1);
    let d2 = spectral_derivative(f, length, 2);
    sup(f) + sup(&d1) + c0_alpha_periodic(&d2, h, alpha)
}

/// `order`-th derivative of a periodic sample vector by FFT. The Nyquist
/// coefficient is dropped for odd orders.
pub fn spectral_derivative(f: &[f64], length: f64, order: u32) -> Vec<f64> {
    let m = f.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut buf: Vec<Complex<f64>> = f.iter().map(|v| Complex::new(*v, 0.0)).collect();
    fwd.process(&mut buf);
    let base = 2.0 * std::f64::consts::PI / length;
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = if k <= m / 2 { k as i64 } else { k as i64 - m as i64 };
        if m % 2 == 0 && k == m / 2 && order % 2 == 1 {
            *c = Complex::new(0.0, 0.0);
            continue;
        }
        let ik = Complex::new(0.0, base * kk as f64);
        *c *= ik.powu(order);
    }
    inv.process(&mut buf);
    buf.iter().map(|c| c.re / m as f64).collect()
}

/// Trigonometric interpolation of periodic samples onto `m` nodes.
pub fn fourier_resample(f: &[f64], m: usize) -> Vec<f64> {
    let n = f.len();
    if n == m {
        return f.to_vec();
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = f.iter().map(|v| Complex::new(*v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let mut out = vec![Complex::new(0.0, 0.0); m];
    let half = n.min(m) / 2;
    for k in 0..n {
        let kk = if k <= n / 2 { k as i64 } else { k as i64 - n as i64 };
        if kk.unsigned_abs() as usize > half || (kk.unsigned_abs() as usize == half && n.min(m) % 2 == 0) {
            continue;
        }
        let idx = if kk >= 0 { kk as usize } else { (m as i64 + kk) as usize };
        out[idx] = buf[k];
    }
    planner.plan_fft_inverse(m).process(&mut out);
    out.iter().map(|c| c.re / n as f64).collect()
}

/// Periodic spectral differentiation matrices `(D₁, D₂)` on `m` (even)
/// uniform nodes of a circle of length `length`.
pub fn spectral_matrices(m: usize, length: f64) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
    use std::f64::consts::PI;
    let h = 2.0 * PI / m as f64;
    let s = 2.0 * PI / length;
    let mut d1 = nalgebra::DMatrix::zeros(m, m);
    let mut d2 = nalgebra::DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if i == j {
                d2[(i, j)] = (-PI * PI / (3.0 * h * h) - 1.0 / 6.0) * s * s;
            } else {
                let k = i as i64 - j as i64;
                let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                let x = k as f64 * h / 2.0;
                d1[(i, j)] = 0.5 * sign / x.tan() * s;
                d2[(i, j)] = -0.5 * sign / (x.sin() * x.sin()) * s * s;
            }
        }
    }
    (d1, d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_derivative_of_trig() {
        let m = 64;
        let l = 3.0;
        let w = 2.0 * std::f64::consts::PI / l;
        let x: Vec<f64> = (0..m).map(|i| l * i as f64 / m as f64).collect();
        let f: Vec<f64> = x.iter().map(|x| (3.0 * w * x).sin()).collect();
        let d = spectral_derivative(&f, l, 2);
        for i in 0..m {
            assert!((d[i] + 9.0 * w * w * f[i]).abs() < 1e-10);
        }
        let (d1, d2) = spectral_matrices(m, l);
        let fv = nalgebra::DVector::from_column_slice(&f);
        let a = &d2 * &fv;
        let b = &d1 * &fv;
        for i in 0..m {
            assert!((a[i] - d[i]).abs() < 1e-9);
            assert!((b[i] - 3.0 * w * (3.0 * w * x[i]).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn resample_roundtrip() {
        let f: Vec<f64> = (0..16).map(|i| (2.0 * std::f64::consts::PI * i as f64 / 16.0).cos() + 0.5).collect();
        let g = fourier_resample(&f, 64);
        for i in 0..16 {
            assert!((g[4 * i] - f[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn holder_of_linear() {
        let f: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        let s = holder_seminorm(&f, 0.01, 0.5);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
