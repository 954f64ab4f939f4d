//! Weighted averages along a simulation, the Riccati comparison bound and
//! overflow-based blow-up detection.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::grid::{fmt_num, weighted_integral, EigenPair};
use crate::iteration::{Simulation, SystemState, Termination};
use crate::regimes::{t0_estimate, BlowupCertificate};

/// Relative slack allowed below the Riccati bound.
pub const BOUND_REL_TOL: f64 = 0.02;
/// Slack on `T0` when judging a detected blow-up time.
pub const T0_SLACK: f64 = 0.10;

/// `p̂_i = |Ω|⁻¹ ∫ Φ0 u_i`, `p̂ = μ1 p̂1 + μ2 p̂2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedAverage {
    pub t: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub p_hat1: f64,
    pub p_hat2: f64,
}

impl WeightedAverage {
    pub fn p_hat(&self) -> f64 {
        self.mu1 * self.p_hat1 + self.mu2 * self.p_hat2
    }
}

pub fn weighted_average(eig: &EigenPair, mu1: f64, mu2: f64, state: &SystemState) -> Result<WeightedAverage> {
    let grid = *state.grid();
    let m = grid.measure();
    Ok(WeightedAverage {
        t: state.t,
        mu1,
        mu2,
        p_hat1: weighted_integral(&grid, &eig.phi0, state.u1())? / m,
        p_hat2: weighted_integral(&grid, &eig.phi0, state.u2())? / m,
    })
}

/// `e^{-τ̄t} / (1/p̂0 - (ψ̲/τ̄)(1 - e^{-τ̄t}))` for `0 <= t < T0`.
pub fn riccati_bound(cert: &BlowupCertificate, p_hat0: f64, t: f64) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(domain(format!("t = {t} must be finite and >= 0")));
    }
    let t0 = t0_estimate(cert, p_hat0)?;
    if t >= t0 {
        return Err(domain(format!("t = {t} is not below T0 = {t0}")));
    }
    let (tau, psi) = (cert.tau_bar, cert.psi_under);
    let one_minus = -(-tau * t).exp_m1();
    let den = 1.0 / p_hat0 - psi / tau * one_minus;
    if !(den > 0.0) {
        return Err(domain(format!("Riccati denominator {den} not positive at t = {t}")));
    }
    Ok((-tau * t).exp() / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub p_hat: f64,
    pub riccati_bound: Option<f64>,
    pub max_u1_plus_u2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupReport {
    /// Certificate re-evaluated at the `p̂0` of the actual initial data.
    pub certificate: BlowupCertificate,
    pub p_hat0: f64,
    pub t0: Option<f64>,
    pub samples: Vec<TrajectorySample>,
    pub detected_blowup_time: Option<f64>,
    pub bound_violations: usize,
    pub within_t0_slack: Option<bool>,
}

/// Samples `p̂` at every snapshot, compares with the Riccati bound where the
/// certificate applies and reads the overflow time off the termination.
///
/// A sample violates the bound when `p̂ < (1 - 2%) · bound`.
pub fn analyze(sim: &Simulation, cert: &BlowupCertificate, eig: &EigenPair) -> Result<BlowupReport> {
    let first = sim
        .snapshots
        .first()
        .ok_or_else(|| Error::Precondition("simulation has no snapshots".into()))?;
    let p_hat0 = weighted_average(eig, cert.mu1, cert.mu2, first)?.p_hat();
    let certificate = cert.with_p_hat0(p_hat0);
    let t0 = if certificate.is_certified() { Some(t0_estimate(&certificate, p_hat0)?) } else { None };

    let mut samples = Vec::with_capacity(sim.snapshots.len());
    let mut bound_violations = 0;
    for s in &sim.snapshots {
        let p_hat = weighted_average(eig, cert.mu1, cert.mu2, s)?.p_hat();
        let bound = match t0 {
            Some(t0) if s.t < t0 => riccati_bound(&certificate, p_hat0, s.t).ok(),
            _ => None,
        };
        if bound.is_some_and(|b| p_hat < (1.0 - BOUND_REL_TOL) * b) {
            bound_violations += 1;
        }
        samples.push(TrajectorySample { t: s.t, p_hat, riccati_bound: bound, max_u1_plus_u2: s.max_sum() });
    }
    let detected_blowup_time = match sim.termination {
        Termination::Overflowed { t } => Some(t),
        _ => None,
    };
    let within_t0_slack = detected_blowup_time.zip(t0).map(|(d, t0)| d <= (1.0 + T0_SLACK) * t0);
    Ok(BlowupReport {
        certificate,
        p_hat0,
        t0,
        samples,
        detected_blowup_time,
        bound_violations,
        within_t0_slack,
    })
}

/// Rows `t,p_hat,riccati_bound,max_u1_plus_u2`; an absent bound is an empty cell.
pub fn write_trajectory_csv<W: Write>(out: &mut W, report: &BlowupReport) -> io::Result<()> {
    writeln!(out, "t,p_hat,riccati_bound,max_u1_plus_u2")?;
    for s in &report.samples {
        writeln!(
            out,
            "{},{},{},{}",
            fmt_num(s.t),
            fmt_num(s.p_hat),
            s.riccati_bound.map(fmt_num).unwrap_or_default(),
            fmt_num(s.max_u1_plus_u2)
        )?;
    }
    Ok(())
}
