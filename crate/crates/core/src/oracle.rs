//! Independent references: the spatially homogeneous ODE reduction and the
//! closed-form Riccati solution.

use std::io::{self, Write};

use crate::error::{domain, Error, Result};
use crate::grid::fmt_num;
use crate::model::ModelParams;

/// Values above this count as divergence.
pub const DIVERGENCE_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeTermination {
    Completed,
    Diverged { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<[f64; 2]>,
    pub termination: OdeTermination,
}

impl OdeTrajectory {
    /// Rows `t,u1,u2` with a header.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "t,u1,u2")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(out, "{},{},{}", fmt_num(*t), fmt_num(v[0]), fmt_num(v[1]))?;
        }
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Result of [`integrate`]: accepted step times and states.
#[derive(Debug, Clone, PartialEq)]
pub struct Integration<const N: usize> {
    pub times: Vec<f64>,
    pub values: Vec<[f64; N]>,
    pub diverged_at: Option<f64>,
}

/// Adaptive Dormand-Prince integration of `y' = f(t, y)` on `[0, t_end]`.
///
/// Error per step is measured against `rtol·max(|y|, |y_new|) + atol` with
/// `atol = rtol·1e-3`. Every time in `outputs` (sorted, within the interval)
/// is hit exactly and recorded; when `outputs` is empty every accepted step is.
pub fn integrate<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    y0: [f64; N],
    t_end: f64,
    rtol: f64,
    outputs: &[f64],
) -> Result<Integration<N>> {
    let atol = rtol * 1e-3;
    let mut t = 0.0;
    let mut y = y0;
    let mut times = vec![0.0];
    let mut values = vec![y0];
    let mut h = (t_end * 1e-3).max(1e-12).min(t_end);
    let mut next_out = outputs.iter().copied().filter(|&s| s > 0.0 && s <= t_end).peekable();
    let mut k = [[0.0; N]; 7];
    k[0] = f(t, &y);

    while t < t_end {
        let target = next_out.peek().copied().unwrap_or(t_end);
        let hit = t + h >= target;
        let step = if hit { target - t } else { h };
        if step <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::Numerical { message: format!("step size underflow at t = {t}"), residual: step });
        }
        for s in 1..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                for n in 0..N {
                    ys[n] += step * A[s][j] * kj[n];
                }
            }
            k[s] = f(t + C[s] * step, &ys);
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for n in 0..N {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += B5[s] * k[s][n];
                d4 += B4[s] * k[s][n];
            }
            y5[n] = y[n] + step * d5;
            let sc = atol + rtol * y[n].abs().max(y5[n].abs());
            err = err.max((step * (d5 - d4)).abs() / sc);
        }
        if !err.is_finite() {
            h = 0.2 * step;
            continue;
        }
        if err <= 1.0 {
            t = if hit { target } else { t + step };
            y = y5;
            // first-same-as-last
            k[0] = k[6];
            if hit {
                next_out.next();
            }
            if hit || outputs.is_empty() {
                times.push(t);
                values.push(y);
            }
            if y.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_CAP) {
                if !(hit || outputs.is_empty()) {
                    times.push(t);
                    values.push(y);
                }
                return Ok(Integration { times, values, diverged_at: Some(t) });
            }
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if err <= 1.0 || !hit {
            h = step * fac;
        } else {
            h = step * fac.min(1.0);
        }
    }
    Ok(Integration { times, values, diverged_at: None })
}

fn check_rtol(rtol: f64) -> Result<()> {
    if !(1e-12..=1e-3).contains(&rtol) {
        return Err(domain(format!("rtol = {rtol} must lie in [1e-12, 1e-3]")));
    }
    Ok(())
}

fn check_u0(u0: (f64, f64), t_end: f64) -> Result<()> {
    for v in [u0.0, u0.1] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(domain(format!("initial value {v} must be finite and >= 0")));
        }
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(domain(format!("t_end = {t_end} must be finite and > 0")));
    }
    Ok(())
}

/// Solves `u1' = f1(u1, u2)`, `u2' = f2(u1, u2)`, recording every accepted step.
pub fn ode_reduce(params: &ModelParams, u0: (f64, f64), t_end: f64, rtol: f64) -> Result<OdeTrajectory> {
    ode_reduce_at(params, u0, t_end, rtol, &[])
}

/// As [`ode_reduce`] but records exactly the given output times.
pub fn ode_reduce_at(
    params: &ModelParams,
    u0: (f64, f64),
    t_end: f64,
    rtol: f64,
    outputs: &[f64],
) -> Result<OdeTrajectory> {
    check_rtol(rtol)?;
    check_u0(u0, t_end)?;
    if outputs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(domain("output times must be strictly increasing"));
    }
    let p = *params;
    let r = integrate(|_, y: &[f64; 2]| [p.f1(y[0], y[1]), p.f2(y[0], y[1])], [u0.0, u0.1], t_end, rtol, outputs)?;
    Ok(OdeTrajectory {
        times: r.times,
        values: r.values,
        termination: r.diverged_at.map_or(OdeTermination::Completed, |t| OdeTermination::Diverged { t }),
    })
}

/// Exact solution of `p' + τp = ψp²`, `p(0) = p0`, written as
/// `τ p0 / (ψ p0 + (τ - ψ p0) e^{τt})`.
pub fn riccati_closed_form(tau: f64, psi: f64, p0: f64, t: f64) -> Result<f64> {
    if tau == 0.0 || psi == 0.0 || !(tau.is_finite() && psi.is_finite() && p0.is_finite()) {
        return Err(domain(format!("need finite nonzero tau, psi (tau = {tau}, psi = {psi})")));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(domain(format!("t = {t} must be finite and >= 0")));
    }
    let den = psi * p0 + (tau - psi * p0) * (tau * t).exp();
    let v = tau * p0 / den;
    if p0 != 0.0 && !(den * tau * p0 > 0.0 && v.is_finite()) {
        return Err(domain(format!("Riccati solution is singular at t = {t}")));
    }
    Ok(v)
}
