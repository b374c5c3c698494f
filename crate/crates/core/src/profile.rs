//! Radial ground state of `−Δv + v − vᵖ = 0` in `ℝᴺ`.
//!
//! The profile is found by shooting on `w(0)`: bisection separates
//! trajectories that cross zero from those that turn back up, then a
//! two-sided match against the decaying tail removes the `eʳ` error growth
//! that limits plain forward shooting at large radii.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::simpson_weights;

/// Codimension `N` and exponent `p` of the limit equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitProblem {
    pub n: usize,
    pub p: f64,
}

impl LimitProblem {
    pub fn new(n: usize, p: f64) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(Error::InvalidProblem(format!("N = {n} outside the supported range 1..=3")));
        }
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::InvalidProblem(format!("p = {p} must be a finite number > 1")));
        }
        if let Some(pc) = critical_exponent(n) {
            if p >= pc {
                return Err(Error::InvalidProblem(format!(
                    "p = {p} is not subcritical for N = {n} (needs p < {pc})"
                )));
            }
        }
        Ok(LimitProblem { n, p })
    }

    /// `σ = (p+1)/(p−1) − N/2`.
    pub fn sigma(&self) -> f64 {
        (self.p + 1.0) / (self.p - 1.0) - self.n as f64 / 2.0
    }

    /// Area of the unit sphere `S^{N−1}` (2 points when `N = 1`).
    pub fn sphere_area(&self) -> f64 {
        sphere_area(self.n)
    }
}

/// `(N+2)/(N−2)` for `N ≥ 3`, `None` when every `p > 1` is subcritical.
pub fn critical_exponent(n: usize) -> Option<f64> {
    if n >= 3 {
        Some((n as f64 + 2.0) / (n as f64 - 2.0))
    } else {
        None
    }
}

pub fn sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => {
            // 2π^{N/2}/Γ(N/2) via the recursion ω_{N+1} = 2π ω_{N−1}/N
            let mut w = if n % 2 == 0 { 2.0 * PI } else { 4.0 * PI };
            let mut m = if n % 2 == 0 { 2 } else { 3 };
            while m < n {
                w *= 2.0 * PI / m as f64;
                m += 2;
            }
            w
        }
    }
}

/// Closed form of the one-dimensional ground state,
/// `((p+1)/2)^{1/(p−1)} sech^{2/(p−1)}((p−1)x/2)`.
pub fn sech_profile(p: f64, x: f64) -> f64 {
    let a = ((p + 1.0) / 2.0).powf(1.0 / (p - 1.0));
    a * (1.0 / ((p - 1.0) * x / 2.0).cosh()).powf(2.0 / (p - 1.0))
}

/// Grid and tolerance settings for [`solve_ground_state_with`].
#[derive(Debug, Clone, Copy)]
pub struct ProfileOptions {
    pub r_max: f64,
    pub step: f64,
    pub tol: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions { r_max: 20.0, step: 1e-3, tol: 1e-12 }
    }
}

/// Sampled ground state with its matched exponential tail.
#[derive(Debug, Clone)]
pub struct GroundStateProfile {
    pub problem: LimitProblem,
    pub step: f64,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    pub wp: Vec<f64>,
    /// `c_{N,p}`: limit of `r^{(N−1)/2} eʳ w(r)`.
    pub tail_constant: f64,
    /// `−w′/w` at the last node.
    pub decay_rate: f64,
}

/// Decaying solution of the linearized far-field equation
/// `T″ + (N−1)/r T′ − T = 0`, normalized so `r^{(N−1)/2} eʳ T → 1`.
/// Returns `(T, T′)`.
pub fn tail_shape(n: usize, r: f64) -> (f64, f64) {
    let nu = (n as f64 - 2.0) / 2.0;
    let m = (n as f64 - 1.0) / 2.0;
    let mut s = 1.0;
    let mut ds = 0.0;
    let mut a = 1.0;
    for k in 1..12 {
        let j = (2 * k - 1) as f64;
        a *= (4.0 * nu * nu - j * j) / (k as f64 * 8.0);
        if a == 0.0 {
            break;
        }
        let term = a / r.powi(k);
        s += term;
        ds -= k as f64 * term / r;
        if term.abs() < 1e-17 {
            break;
        }
    }
    let base = r.powf(-m) * (-r).exp();
    (base * s, base * ((-m / r - 1.0) * s + ds))
}

fn rhs(n: usize, p: f64, r: f64, w: f64, wp: f64) -> f64 {
    let nonlin = w.abs().powf(p - 1.0) * w;
    if r.abs() < 1e-300 {
        (w - nonlin) / n as f64
    } else {
        -(n as f64 - 1.0) / r * wp + w - nonlin
    }
}

/// Taylor coefficients of `w` in powers of `r²` at the origin, from the
/// radial equation and the power-series recurrence for `wᵖ`.
fn origin_series(n: usize, p: f64, a: f64, terms: usize) -> Vec<f64> {
    let mut c = vec![0.0; terms];
    let mut pw = vec![0.0; terms];
    c[0] = a;
    pw[0] = a.powf(p);
    for k in 0..terms - 1 {
        if k > 0 {
            let mut s = 0.0;
            for j in 1..=k {
                s += (p * j as f64 - (k - j) as f64) * c[j] * pw[k - j];
            }
            pw[k] = s / (k as f64 * a);
        }
        c[k + 1] = (c[k] - pw[k]) / ((2 * k + 2) as f64 * (2 * k + n) as f64);
    }
    c
}

/// Number of grid steps covered by the origin series.
fn series_steps(p: f64, a: f64, h: f64) -> usize {
    let radius = 0.5_f64.min(0.25 * a.powf(-(p - 1.0) / 2.0));
    ((radius / h).floor() as usize).max(1)
}

fn series_eval(c: &[f64], r: f64) -> (f64, f64) {
    let x = r * r;
    let mut w = 0.0;
    let mut d = 0.0;
    for k in (0..c.len()).rev() {
        w = w * x + c[k];
        if k > 0 {
            d = d * x + 2.0 * k as f64 * c[k];
        }
    }
    // d holds Σ 2k c_k x^{k-1}; multiply by r for w'
    (w, d * r)
}

/// Exact-to-rounding start of the outward integration: nodes `0..=m`.
fn start_nodes(problem: &LimitProblem, a: f64, h: f64) -> Vec<(f64, f64)> {
    let c = origin_series(problem.n, problem.p, a, 40);
    let m = series_steps(problem.p, a, h);
    (0..=m).map(|i| series_eval(&c, i as f64 * h)).collect()
}

fn rk4_step(n: usize, p: f64, r: f64, h: f64, w: f64, wp: f64) -> (f64, f64) {
    let k1w = wp;
    let k1p = rhs(n, p, r, w, wp);
    let k2w = wp + 0.5 * h * k1p;
    let k2p = rhs(n, p, r + 0.5 * h, w + 0.5 * h * k1w, k2w);
    let k3w = wp + 0.5 * h * k2p;
    let k3p = rhs(n, p, r + 0.5 * h, w + 0.5 * h * k2w, k3w);
    let k4w = wp + h * k3p;
    let k4p = rhs(n, p, r + h, w + h * k3w, k4w);
    (
        w + h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w),
        wp + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shot {
    /// crossed zero: `w(0)` too large
    Over,
    /// turned back up while positive: `w(0)` too small
    Under,
    Undecided,
}

fn classify(problem: &LimitProblem, a: f64, h: f64, steps: usize) -> Shot {
    let start = start_nodes(problem, a, h);
    let m0 = start.len() - 1;
    let (mut w, mut wp) = start[m0];
    for i in m0..steps {
        let r = i as f64 * h;
        let next = rk4_step(problem.n, problem.p, r, h, w, wp);
        w = next.0;
        wp = next.1;
        if w <= 0.0 {
            return Shot::Over;
        }
        if wp > 0.0 {
            return Shot::Under;
        }
    }
    Shot::Undecided
}

fn integrate_out(problem: &LimitProblem, a: f64, h: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let start = start_nodes(problem, a, h);
    let m0 = (start.len() - 1).min(steps);
    let mut w: Vec<f64> = start[..=m0].iter().map(|s| s.0).collect();
    let mut wp: Vec<f64> = start[..=m0].iter().map(|s| s.1).collect();
    for i in m0..steps {
        let (nw, np) = rk4_step(problem.n, problem.p, i as f64 * h, h, w[i], wp[i]);
        w.push(nw);
        wp.push(np);
    }
    (w, wp)
}

/// Integrates inward from `r_end` down `steps` nodes; output ordered by
/// increasing radius.
fn integrate_in(problem: &LimitProblem, c: f64, r_end: f64, h: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let (t, tp) = tail_shape(problem.n, r_end);
    let mut w = vec![0.0; steps + 1];
    let mut wp = vec![0.0; steps + 1];
    w[steps] = c * t;
    wp[steps] = c * tp;
    for k in (0..steps).rev() {
        let r = r_end - (steps - k - 1) as f64 * h;
        let (nw, np) = rk4_step(problem.n, problem.p, r, -h, w[k + 1], wp[k + 1]);
        w[k] = nw;
        wp[k] = np;
    }
    (w, wp)
}

/// Ground state on the default grid (step `10⁻³`).
pub fn solve_ground_state(problem: LimitProblem, r_max: f64, tol: f64) -> Result<GroundStateProfile> {
    solve_ground_state_with(problem, ProfileOptions { r_max, tol, ..ProfileOptions::default() })
}

pub fn solve_ground_state_with(problem: LimitProblem, opts: ProfileOptions) -> Result<GroundStateProfile> {
    let LimitProblem { n, p } = problem;
    if opts.r_max < 10.0 {
        return Err(Error::InvalidProblem(format!("R_max = {} must be at least 10", opts.r_max)));
    }
    if !(opts.tol > 0.0) || !(opts.step > 0.0) {
        return Err(Error::InvalidProblem("tolerance and step must be positive".into()));
    }
    let h = opts.step;
    let steps = (opts.r_max / h).round() as usize;
    let r_max = steps as f64 * h;

    // bracket: a ≤ 1 always turns back up; grow the upper end until it crosses zero
    let mut lo = 1.0 + 1e-9;
    if classify(&problem, lo, h, steps) != Shot::Under {
        return Err(Error::NoBracket(format!("w(0) = {lo} does not undershoot")));
    }
    let mut hi = 2.0;
    let mut grown = 0;
    while classify(&problem, hi, h, steps) != Shot::Over {
        lo = hi;
        hi *= 2.0;
        grown += 1;
        if grown > 60 {
            return Err(Error::NoBracket(format!("no overshoot up to w(0) = {hi}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || (hi - lo) <= opts.tol * lo {
            break;
        }
        match classify(&problem, mid, h, steps) {
            Shot::Over => hi = mid,
            Shot::Under => lo = mid,
            Shot::Undecided => {
                lo = mid;
                hi = mid;
                break;
            }
        }
    }
    let a0 = 0.5 * (lo + hi);

    // two-sided match at an interior radius
    let m = ((6.0_f64.min(r_max / 2.0)) / h).round() as usize;
    let r_m = m as f64 * h;
    let inner_steps = steps - m;
    let shoot = |a: f64| {
        let start = start_nodes(&problem, a, h);
        let m0 = (start.len() - 1).min(m);
        let (mut w, mut wp) = start[m0];
        for i in m0..m {
            let nx = rk4_step(n, p, i as f64 * h, h, w, wp);
            w = nx.0;
            wp = nx.1;
        }
        (w, wp)
    };
    let shoot_in = |c: f64| {
        let (t, tp) = tail_shape(n, r_max);
        let mut w = c * t;
        let mut wp = c * tp;
        for k in 0..inner_steps {
            let r = r_max - k as f64 * h;
            let nx = rk4_step(n, p, r, -h, w, wp);
            w = nx.0;
            wp = nx.1;
        }
        (w, wp)
    };
    let (wm, _) = shoot(a0);
    let (tm, _) = tail_shape(n, r_m);
    let mut a = a0;
    let mut c = wm / tm;
    let residual = |a: f64, c: f64| {
        let o = shoot(a);
        let i = shoot_in(c);
        [o.0 - i.0, o.1 - i.1]
    };
    let mut f = residual(a, c);
    let scale = wm.abs().max(1e-300);
    for _ in 0..30 {
        if f[0].abs().max(f[1].abs()) <= 1e-15 * scale {
            break;
        }
        let da = 1e-7 * a;
        let dc = 1e-7 * c.abs().max(1e-300);
        let fa = residual(a + da, c);
        let fc = residual(a, c + dc);
        let j = [
            [(fa[0] - f[0]) / da, (fc[0] - f[0]) / dc],
            [(fa[1] - f[1]) / da, (fc[1] - f[1]) / dc],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let step_a = (j[1][1] * f[0] - j[0][1] * f[1]) / det;
        let step_c = (-j[1][0] * f[0] + j[0][0] * f[1]) / det;
        let fnew = residual(a - step_a, c - step_c);
        if fnew[0].abs().max(fnew[1].abs()) >= f[0].abs().max(f[1].abs()) {
            break;
        }
        a -= step_a;
        c -= step_c;
        f = fnew;
    }
    let mismatch = f[0].abs().max(f[1].abs()) / scale;
    if mismatch > opts.tol.max(1e-10) {
        return Err(Error::ToleranceNotMet { achieved: mismatch, requested: opts.tol });
    }

    let (wo, po) = integrate_out(&problem, a, h, m);
    let (mut wi, mut pi) = integrate_in(&problem, c, r_max, h, inner_steps);
    // carry the leftover value jump along the decaying mode so that second
    // differences across the join stay smooth
    let jump = wo[m] - wi[0];
    let (tm, _) = tail_shape(n, r_m);
    for k in 0..wi.len() {
        let (t, tp) = tail_shape(n, r_m + k as f64 * h);
        wi[k] += jump * t / tm;
        pi[k] += jump * tp / tm;
    }
    let mut w = wo;
    let mut wp = po;
    w.extend_from_slice(&wi[1..]);
    wp.extend_from_slice(&pi[1..]);
    wp[0] = 0.0;
    let r: Vec<f64> = (0..=steps).map(|i| i as f64 * h).collect();
    if let Some(i) = w.iter().position(|v| *v <= 0.0) {
        return Err(Error::ToleranceNotMet { achieved: w[i], requested: opts.tol });
    }
    let decay_rate = -wp[steps] / w[steps];
    Ok(GroundStateProfile { problem, step: h, r, w, wp, tail_constant: c, decay_rate })
}

impl GroundStateProfile {
    pub fn r_max(&self) -> f64 {
        *self.r.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// `w″` at a node from the equation itself.
    pub fn second_derivative_at(&self, i: usize) -> f64 {
        rhs(self.problem.n, self.problem.p, self.r[i], self.w[i], self.wp[i])
    }

    /// Value, first and second derivative at radius `r`.
    ///
    /// Inside the grid this is quintic Hermite interpolation of
    /// `(w, w′, w″)`, which is sixth order in the step; beyond `R_max` it is
    /// the matched tail `c·T(r)`.
    pub fn evaluate(&self, r: f64) -> Result<(f64, f64, f64)> {
        if r < 0.0 {
            return Err(Error::NegativeRadius(r));
        }
        let LimitProblem { n, p } = self.problem;
        if r >= self.r_max() {
            let (t, tp) = tail_shape(n, r);
            let w = self.tail_constant * t;
            let wp = self.tail_constant * tp;
            return Ok((w, wp, rhs(n, p, r, w, wp)));
        }
        let h = self.step;
        let i = ((r / h).floor() as usize).min(self.len() - 2);
        let s = (r - self.r[i]) / h;
        let (y0, y1) = (self.w[i], self.w[i + 1]);
        let (d0, d1) = (self.wp[i] * h, self.wp[i + 1] * h);
        let (s0, s1) = (self.second_derivative_at(i) * h * h, self.second_derivative_at(i + 1) * h * h);
        let (w, dw) = quintic_hermite(s, [y0, d0, s0], [y1, d1, s1]);
        let wp = if r == 0.0 { 0.0 } else { dw / h };
        Ok((w, wp, rhs(n, p, r, w, wp)))
    }

    /// Value only; convenience for quadrature callers.
    pub fn value(&self, r: f64) -> f64 {
        self.evaluate(r.abs()).map(|v| v.0).unwrap_or(0.0)
    }

    /// Quadrature weights for `∫_{ℝᴺ} f(|ξ|) dξ` on the profile grid.
    pub fn radial_weights(&self) -> Vec<f64> {
        let n = self.problem.n;
        let omega = self.problem.sphere_area();
        simpson_weights(self.len(), self.step)
            .into_iter()
            .zip(&self.r)
            .map(|(w, r)| w * omega * r.powi(n as i32 - 1))
            .collect()
    }

    /// `∫|∂₁w₀|² = (1/N)∫|∇w₀|²`.
    pub fn c0(&self) -> f64 {
        let q = self.radial_weights();
        q.iter().zip(&self.wp).map(|(q, d)| q * d * d).sum::<f64>() / self.problem.n as f64
    }

    /// `½∫w₀²` against `σ∫|∂₁w₀|²`.
    pub fn sigma_identity_check(&self) -> IdentityReport {
        let q = self.radial_weights();
        let lhs = 0.5 * q.iter().zip(&self.w).map(|(q, w)| q * w * w).sum::<f64>();
        let rhs = self.problem.sigma() * self.c0();
        IdentityReport::new("sigma", lhs, rhs)
    }

    /// Sup over interior nodes of the residual of the radial ODE, with `w″`
    /// obtained by a fourth order central difference of the stored `w′`.
    pub fn ode_residual(&self) -> f64 {
        let h = self.step;
        let mut worst = 0.0_f64;
        for i in 2..self.len() - 2 {
            let d2 = (-self.wp[i + 2] + 8.0 * self.wp[i + 1] - 8.0 * self.wp[i - 1] + self.wp[i - 2]) / (12.0 * h);
            worst = worst.max((d2 - self.second_derivative_at(i)).abs());
        }
        worst
    }

    /// Writes `r,w,wp` rows in round-trip precision.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(["r", "w", "wp"])?;
        for i in 0..self.len() {
            out.write_record([self.r[i].to_string(), self.w[i].to_string(), self.wp[i].to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a profile written by [`write_csv`](Self::write_csv). The grid
    /// must be uniform and start at 0.
    pub fn read_csv<P: AsRef<Path>>(problem: LimitProblem, path: P) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let (mut r, mut w, mut wp) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rd.records() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidProblem(format!("bad profile row {:?}", rec)))
            };
            r.push(field(0)?);
            w.push(field(1)?);
            wp.push(field(2)?);
        }
        if r.len() < 4 || r[0] != 0.0 {
            return Err(Error::InvalidProblem("profile CSV must start at r = 0 with at least 4 rows".into()));
        }
        let step = r[1] - r[0];
        let last = r.len() - 1;
        let (t, _) = tail_shape(problem.n, r[last]);
        let tail_constant = w[last] / t;
        let decay_rate = -wp[last] / w[last];
        Ok(GroundStateProfile { problem, step, r, w, wp, tail_constant, decay_rate })
    }
}

/// Values and `s`-derivative of the quintic Hermite interpolant on `[0, 1]`
/// with end data `(y, y′, y″)` already scaled to unit step.
fn quintic_hermite(s: f64, a: [f64; 3], b: [f64; 3]) -> (f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h2 = 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5);
    let h3 = 0.5 * (s3 - 2.0 * s4 + s5);
    let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    let d0 = -30.0 * s2 + 60.0 * s3 - 30.0 * s4;
    let d1 = 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4;
    let d2 = 0.5 * (2.0 * s - 9.0 * s2 + 12.0 * s3 - 5.0 * s4);
    let d3 = 0.5 * (3.0 * s2 - 8.0 * s3 + 5.0 * s4);
    let d4 = -12.0 * s2 + 28.0 * s3 - 15.0 * s4;
    let d5 = 30.0 * s2 - 60.0 * s3 + 30.0 * s4;
    (
        h0 * a[0] + h1 * a[1] + h2 * a[2] + h3 * b[2] + h4 * b[1] + h5 * b[0],
        d0 * a[0] + d1 * a[1] + d2 * a[2] + d3 * b[2] + d4 * b[1] + d5 * b[0],
    )
}

/// Outcome of a quadrature identity check, serialized as
/// `{identity, lhs, rhs, rel_error}`.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub identity: String,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_error: f64,
}

impl IdentityReport {
    pub fn new(identity: &str, lhs: f64, rhs: f64) -> Self {
        let denom = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        IdentityReport { identity: identity.to_string(), lhs, rhs, rel_error: (lhs - rhs).abs() / denom }
    }
}
