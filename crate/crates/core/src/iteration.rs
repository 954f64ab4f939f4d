//! Monotone upper/lower iteration for one backward-Euler step of the
//! transformed system
//!
//! ```text
//! (d_i + 2α_i u_i)⁻¹ (h_i - h_i^n)/dt - Δh_i = f_i(u1, u2),   u_i = q_i(h_i)
//! ```
//!
//! Each inner step solves the linear M-matrix problem
//! `(σ_i - Δ_h) H = σ_i h^(k-1) - [c_i(u^(k-1)) (h^(k-1) - h^n)/dt - f_i]`
//! for the upper and the lower iterate. The reaction terms are cross-paired
//! (upper `u1` with lower `u2` in `f1` and vice versa), which is what the
//! quasimonotone decreasing structure needs. `σ_i` is frozen over the step and
//! chosen large enough that the right-hand side is nondecreasing in `h_i`
//! on the bracket, so the upper sequence decreases and the lower one increases.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::grid::{EigenPair, Grid, ScalarField};
use crate::model::{Diffusion, ModelParams};
use crate::regimes::{GlobalVerdict, RegimeReport};

/// Ordering tolerance relative to the bracket scale.
pub const ORDER_TOL: f64 = 1e-10;
/// Largest `dt · (growth rate)` accepted before the step is halved.
pub const GROWTH_STEP_LIMIT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    u: [ScalarField; 2],
    h: [ScalarField; 2],
}

impl SystemState {
    /// Builds a state from densities; rejects negative values and mismatched grids.
    pub fn from_u(params: &ModelParams, t: f64, u1: ScalarField, u2: ScalarField) -> Result<Self> {
        u1.same_grid(&u2)?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(domain(format!("time {t} must be finite and >= 0")));
        }
        for (name, u) in [("u1", &u1), ("u2", &u2)] {
            if let Some(v) = u.values().iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(domain(format!("{name} has invalid value {v}; densities must be >= 0")));
            }
        }
        Ok(Self::from_u_unchecked(params, t, [u1, u2]))
    }

    fn from_u_unchecked(params: &ModelParams, t: f64, u: [ScalarField; 2]) -> Self {
        let h = [0, 1].map(|i| {
            let diff = params.diffusion(i);
            u[i].map(|v| diff.forward(v))
        });
        Self { t, u, h }
    }

    pub fn zeros(grid: Grid, t: f64) -> Self {
        let z = ScalarField::zeros(grid);
        Self { t, u: [z.clone(), z.clone()], h: [z.clone(), z] }
    }

    pub fn grid(&self) -> &Grid {
        self.u[0].grid()
    }

    pub fn u1(&self) -> &ScalarField {
        &self.u[0]
    }

    pub fn u2(&self) -> &ScalarField {
        &self.u[1]
    }

    pub fn h1(&self) -> &ScalarField {
        &self.h[0]
    }

    pub fn h2(&self) -> &ScalarField {
        &self.h[1]
    }

    pub fn u(&self, species: usize) -> &ScalarField {
        &self.u[species]
    }

    pub fn h(&self, species: usize) -> &ScalarField {
        &self.h[species]
    }

    /// `max_x (u1 + u2)`
    pub fn max_sum(&self) -> f64 {
        self.u[0]
            .values()
            .iter()
            .zip(self.u[1].values())
            .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a + b))
    }

    fn scale(&self) -> f64 {
        1f64.max(self.u[0].sup_norm()).max(self.u[1].sup_norm())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub dt: f64,
    /// Lower bound for the per-step shift `φ_i`; the shift actually used is
    /// `max(phi_i, sup |∂f_i/∂u_i| · c_i + 1)` over the bracket.
    pub phi1: f64,
    pub phi2: f64,
    /// Inner iteration stops when `sup |w - v| <= inner_tol · scale`, with
    /// `scale = max(1, sup of the upper bracket)`.
    pub inner_tol: f64,
    pub max_inner_iters: usize,
    pub overflow_cap: f64,
    /// Keep every n-th step as a snapshot (the first and last are always kept).
    pub snapshot_every: usize,
    pub max_dt_halvings: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            phi1: 1.0,
            phi2: 1.0,
            inner_tol: 1e-10,
            max_inner_iters: 500,
            overflow_cap: 1e8,
            snapshot_every: 1,
            max_dt_halvings: 20,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("phi1", self.phi1),
            ("phi2", self.phi2),
            ("inner_tol", self.inner_tol),
            ("overflow_cap", self.overflow_cap),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(domain(format!("solver {name} = {v} must be finite and > 0")));
            }
        }
        if self.max_inner_iters == 0 {
            return Err(domain("solver max_inner_iters must be >= 1"));
        }
        if self.snapshot_every == 0 {
            return Err(domain("solver snapshot_every must be >= 1"));
        }
        Ok(())
    }
}

/// Ordered pair of states `lower <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bracket {
    pub lower: SystemState,
    pub upper: SystemState,
}

/// One recorded inner iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerIterate {
    pub lower_u: [ScalarField; 2],
    pub upper_u: [ScalarField; 2],
    pub lower_h: [ScalarField; 2],
    pub upper_h: [ScalarField; 2],
    /// `max_i sup |w_i - v_i|`
    pub gap: f64,
    /// Worst signed violation of `v^(k-1) <= v^(k) <= w^(k) <= w^(k-1)`; `<= 0` when ordered.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub dt: f64,
    pub phi: [f64; 2],
    pub scale: f64,
    pub iterates: Vec<InnerIterate>,
    /// Worst violation of `v <= u* <= w` for the returned state.
    pub sandwich_violation: f64,
}

impl IterationTrace {
    pub fn final_gap(&self) -> f64 {
        self.iterates.last().map_or(0.0, |it| it.gap)
    }

    pub fn worst_violation(&self) -> f64 {
        self.iterates.iter().map(|it| it.violation).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: SystemState,
    pub trace: IterationTrace,
    /// `max (u1 + u2)` of the new state exceeds the overflow cap.
    pub overflowed: bool,
}

/// Bracket from the global-existence window: constants `N_i` above and
/// `ρ_i Φ0` below.
///
/// `N_i` is the window midpoint, raised to `max u0_i` when needed and
/// allowed. `ρ_i = min(1e-3, ½ min{u0_i/Φ0 : Φ0 > 0})`, or 0 when `u0_i`
/// vanishes somewhere `Φ0 > 0`. Negative parts of a sign-changing `Φ0` are
/// clipped to zero.
pub fn initial_bracket(
    params: &ModelParams,
    eig: &EigenPair,
    u0: (&ScalarField, &ScalarField),
    regime: &RegimeReport,
) -> Result<Bracket> {
    let u0 = [u0.0, u0.1];
    u0[0].same_grid(u0[1])?;
    u0[0].same_grid(&eig.phi0)?;
    if regime.verdict != GlobalVerdict::CertifiedGlobal {
        let why = regime.first_failure().map_or("window empty".to_owned(), |i| i.name.clone());
        return Err(Error::Bracket(format!("global regime not certified: {why}")));
    }
    let window = regime.window.expect("certified report has a window");
    let intervals = [window.n1, window.n2];
    let grid = *u0[0].grid();
    let mut lower = Vec::with_capacity(2);
    let mut upper = Vec::with_capacity(2);
    for i in 0..2 {
        if u0[i].values().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(domain(format!("u0_{} must be finite and >= 0", i + 1)));
        }
        let iv = intervals[i];
        let umax = u0[i].max();
        let mid = iv.midpoint();
        let n = if umax <= mid {
            mid
        } else if umax <= iv.hi {
            umax
        } else {
            let ineq = if i == 0 {
                "N1 <= (a1*c2 + a2*c1)/(c2*b1 - c1*b2)"
            } else {
                "N2 <= (a1*b2 + a2*b1)/(c2*b1 - c1*b2)"
            };
            return Err(Error::Bracket(format!(
                "max u0_{} = {umax} exceeds every admissible N{}: {ineq} = {}",
                i + 1,
                i + 1,
                iv.hi
            )));
        };
        let mut ratio = f64::INFINITY;
        for (&u, &p) in u0[i].values().iter().zip(eig.phi0.values()) {
            if p > 0.0 {
                ratio = ratio.min(u / p);
            }
        }
        let rho = if ratio.is_finite() { 1e-3f64.min(0.5 * ratio) } else { 1e-3 };
        lower.push(eig.phi0.map(|p| (rho * p).max(0.0)));
        upper.push(ScalarField::constant(grid, n));
    }
    let [l1, l2]: [ScalarField; 2] = lower.try_into().expect("two species");
    let [w1, w2]: [ScalarField; 2] = upper.try_into().expect("two species");
    Ok(Bracket {
        lower: SystemState::from_u_unchecked(params, 0.0, [l1, l2]),
        upper: SystemState::from_u_unchecked(params, 0.0, [w1, w2]),
    })
}

/// Smallest constant `M >= u_max` that is an upper solution of one
/// backward-Euler step for `u' = u(-a + g u)` in the transformed variable:
/// `P(M) - P(u_max) >= dt P'(M) M (g M - a)`.
fn constant_supersolution(diff: Diffusion, a: f64, g: f64, umax: f64, dt: f64) -> Option<f64> {
    let (d, al) = (diff.d, diff.alpha);
    let hmax = diff.forward(umax);
    let c3 = -2.0 * al * g * dt;
    let c2 = al - dt * (d * g - 2.0 * al * a);
    let c1 = d * (1.0 + dt * a);
    let gfun = |m: f64| ((c3 * m + c2) * m + c1) * m - hmax;
    if gfun(umax) >= 0.0 {
        return Some(umax);
    }
    // the cubic has negative leading behaviour; its maximiser on (0, ∞)
    let peak = if c3 < 0.0 {
        let disc = 4.0 * c2 * c2 - 12.0 * c3 * c1;
        (-2.0 * c2 - disc.sqrt()) / (6.0 * c3)
    } else if c2 < 0.0 {
        -c1 / (2.0 * c2)
    } else {
        return None;
    };
    if !(peak > umax) || gfun(peak) < 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (umax, peak);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gfun(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Some(hi)
}

/// Discrete bracket for one step of size `dt` from `state`: zero below and
/// the constant upper solutions of the decoupled logistic-type equations
/// `u_i' = u_i(-a_i + g_i u_i)` above (`g = b1, c2`). Fails when `dt` is too
/// large for such a constant to exist.
pub fn step_bracket(params: &ModelParams, state: &SystemState, dt: f64) -> Result<Bracket> {
    let grid = *state.grid();
    let coeffs = [(params.a1, params.b1), (params.a2, params.c2)];
    let mut caps = [0.0; 2];
    for i in 0..2 {
        let (a, g) = coeffs[i];
        let umax = state.u[i].max().max(0.0);
        caps[i] = constant_supersolution(params.diffusion(i), a, g, umax, dt).ok_or_else(|| {
            Error::Bracket(format!(
                "no constant upper solution for species {} at dt = {dt} (max u = {umax})",
                i + 1
            ))
        })?;
    }
    let upper = [ScalarField::constant(grid, caps[0]), ScalarField::constant(grid, caps[1])];
    Ok(Bracket {
        lower: SystemState::zeros(grid, state.t),
        upper: SystemState::from_u_unchecked(params, state.t, upper),
    })
}

fn sup_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Worst value of `a - b` (positive where `a <= b` fails).
fn worst_excess(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(f64::NEG_INFINITY, |m, (x, y)| m.max(x - y))
}

/// Advances one step of size `cfg.dt`.
pub fn step_monotone(
    state: &SystemState,
    cfg: &SolverConfig,
    params: &ModelParams,
    bracket: &Bracket,
) -> Result<StepOutcome> {
    cfg.validate()?;
    step_with_dt(params, state, cfg.dt, cfg, bracket)
}

fn step_with_dt(
    params: &ModelParams,
    state: &SystemState,
    dt: f64,
    cfg: &SolverConfig,
    bracket: &Bracket,
) -> Result<StepOutcome> {
    let grid = *state.grid();
    for side in [&bracket.lower, &bracket.upper] {
        if *side.grid() != grid {
            return Err(domain("bracket and state live on different grids"));
        }
    }
    let scale = bracket.upper.scale();
    let order_tol = ORDER_TOL * scale;
    for i in 0..2 {
        let below = worst_excess(bracket.lower.u[i].values(), state.u[i].values());
        let above = worst_excess(state.u[i].values(), bracket.upper.u[i].values());
        if below > order_tol || above > order_tol || bracket.lower.u[i].min() < -order_tol {
            return Err(Error::Bracket(format!(
                "species {} not bracketed: lower exceeds state by {below:e}, state exceeds upper by {above:e}",
                i + 1
            )));
        }
    }
    let diff = [params.diffusion(0), params.diffusion(1)];
    let n = grid.len();
    let t_new = state.t + dt;

    let gap0 = (0..2)
        .map(|i| sup_diff(&bracket.upper.u[i], &bracket.lower.u[i]))
        .fold(0.0, f64::max);
    if gap0 <= cfg.inner_tol * scale {
        let u = [0, 1].map(|i| {
            let v = bracket.lower.u[i].values().iter().zip(bracket.upper.u[i].values());
            ScalarField::from_vec_unchecked(grid, v.map(|(a, b)| 0.5 * (a + b)).collect())
        });
        let new = SystemState::from_u_unchecked(params, t_new, u);
        let trace = IterationTrace {
            dt,
            phi: [0.0; 2],
            scale,
            iterates: vec![InnerIterate {
                lower_u: bracket.lower.u.clone(),
                upper_u: bracket.upper.u.clone(),
                lower_h: bracket.lower.h.clone(),
                upper_h: bracket.upper.h.clone(),
                gap: gap0,
                violation: 0.0,
            }],
            sandwich_violation: 0.0,
        };
        let overflowed = new.max_sum() > cfg.overflow_cap;
        return Ok(StepOutcome { state: new, trace, overflowed });
    }

    // shift: φ_i from the reaction slope over the bracket box, plus the
    // time-derivative part so that the right-hand side is monotone in h_i
    let vmin = [bracket.lower.u[0].min(), bracket.lower.u[1].min()];
    let wmax = [bracket.upper.u[0].max(), bracket.upper.u[1].max()];
    let mut phi = [0.0; 2];
    let mut shift = [vec![0.0; n], vec![0.0; n]];
    for i in 0..2 {
        let mut slope = 0.0f64;
        for u1 in [vmin[0], wmax[0]] {
            for u2 in [vmin[1], wmax[1]] {
                slope = slope.max(params.df_own(i, u1, u2).abs());
            }
        }
        let cfg_phi = if i == 0 { cfg.phi1 } else { cfg.phi2 };
        phi[i] = cfg_phi.max(slope * diff[i].time_coefficient(vmin[i]) + 1.0);
        let (lo_u, lo_h, hn) = (&bracket.lower.u[i], &bracket.lower.h[i], &state.h[i]);
        for x in 0..n {
            let c = diff[i].time_coefficient(lo_u.values()[x]);
            let drop = (hn.values()[x] - lo_h.values()[x]).max(0.0);
            shift[i][x] = (c + 2.0 * diff[i].alpha * c * c * c * drop) / dt + phi[i];
        }
    }
    let lus = [grid.factor_shifted(&shift[0])?, grid.factor_shifted(&shift[1])?];

    let mut w = bracket.upper.u.clone();
    let mut v = bracket.lower.u.clone();
    let mut wh = bracket.upper.h.clone();
    let mut vh = bracket.lower.h.clone();
    let mut iterates = Vec::new();

    for k in 1..=cfg.max_inner_iters {
        let mut new_wh = Vec::with_capacity(2);
        let mut new_vh = Vec::with_capacity(2);
        for i in 0..2 {
            // cross pairing: upper of species i meets lower of the other species
            let rhs = |own: &ScalarField, own_h: &ScalarField, other: &ScalarField| -> Vec<f64> {
                (0..n)
                    .map(|x| {
                        let ui = own.values()[x];
                        let uo = other.values()[x];
                        let (u1, u2) = if i == 0 { (ui, uo) } else { (uo, ui) };
                        let c = diff[i].time_coefficient(ui);
                        let hi = own_h.values()[x];
                        params.f(i, u1, u2) - c * (hi - state.h[i].values()[x]) / dt + shift[i][x] * hi
                    })
                    .collect()
            };
            let other = 1 - i;
            let hw = lus[i].solve(&rhs(&w[i], &wh[i], &v[other]));
            let hv = lus[i].solve(&rhs(&v[i], &vh[i], &w[other]));
            new_wh.push(hw);
            new_vh.push(hv);
        }
        let mut violation = f64::NEG_INFINITY;
        let mut next_w = Vec::with_capacity(2);
        let mut next_v = Vec::with_capacity(2);
        let mut next_wh = Vec::with_capacity(2);
        let mut next_vh = Vec::with_capacity(2);
        for (i, (hw, hv)) in new_wh.into_iter().zip(new_vh).enumerate() {
            if let Some(bad) = hw.iter().chain(&hv).find(|h| !h.is_finite()) {
                return Err(Error::Numerical {
                    message: format!("non-finite value in inner iterate {k} of species {}", i + 1),
                    residual: *bad,
                });
            }
            let clip = |h: Vec<f64>| -> Vec<f64> { h.into_iter().map(|x| x.max(0.0)).collect() };
            let (hw, hv) = (clip(hw), clip(hv));
            let uw: Vec<f64> = hw.iter().map(|&h| diff[i].inverse(h)).collect();
            let uv: Vec<f64> = hv.iter().map(|&h| diff[i].inverse(h)).collect();
            violation = violation
                .max(worst_excess(v[i].values(), &uv))
                .max(worst_excess(&uv, &uw))
                .max(worst_excess(&uw, w[i].values()));
            next_w.push(ScalarField::from_vec_unchecked(grid, uw));
            next_v.push(ScalarField::from_vec_unchecked(grid, uv));
            next_wh.push(ScalarField::from_vec_unchecked(grid, hw));
            next_vh.push(ScalarField::from_vec_unchecked(grid, hv));
        }
        w = next_w.try_into().expect("two species");
        v = next_v.try_into().expect("two species");
        wh = next_wh.try_into().expect("two species");
        vh = next_vh.try_into().expect("two species");
        let gap = (0..2).map(|i| sup_diff(&w[i], &v[i])).fold(0.0, f64::max);
        iterates.push(InnerIterate {
            lower_u: v.clone(),
            upper_u: w.clone(),
            lower_h: vh.clone(),
            upper_h: wh.clone(),
            gap,
            violation,
        });
        if violation > order_tol {
            return Err(Error::Ordering { iterate: k, violation });
        }
        if gap <= cfg.inner_tol * scale {
            let u = [0, 1].map(|i| {
                let pts = v[i].values().iter().zip(w[i].values());
                ScalarField::from_vec_unchecked(grid, pts.map(|(a, b)| 0.5 * (a + b)).collect())
            });
            let mut sandwich = f64::NEG_INFINITY;
            for i in 0..2 {
                sandwich = sandwich
                    .max(worst_excess(v[i].values(), u[i].values()))
                    .max(worst_excess(u[i].values(), w[i].values()));
            }
            let new = SystemState::from_u_unchecked(params, t_new, u);
            let overflowed = !(new.max_sum() <= cfg.overflow_cap);
            let trace = IterationTrace { dt, phi, scale, iterates, sandwich_violation: sandwich };
            return Ok(StepOutcome { state: new, trace, overflowed });
        }
    }
    let gap = iterates.last().map_or(f64::NAN, |it| it.gap);
    Err(Error::Convergence { iterations: cfg.max_inner_iters, gap })
}

/// Per-step record kept by [`simulate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSummary {
    pub t: f64,
    pub dt: f64,
    pub halvings: u32,
    pub inner_iterations: usize,
    pub final_gap: f64,
    pub worst_violation: f64,
    pub sandwich_violation: f64,
    pub phi: [f64; 2],
    pub upper_caps: [f64; 2],
    pub max_u1_plus_u2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// `max (u1 + u2)` first exceeded the overflow cap at time `t`.
    Overflowed { t: f64 },
    Failed { t: f64, kind: FailureKind, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Bracket,
    Convergence,
    Ordering,
    Numerical,
}

impl FailureKind {
    fn of(e: &Error) -> Self {
        match e {
            Error::Bracket(_) => Self::Bracket,
            Error::Convergence { .. } => Self::Convergence,
            Error::Ordering { .. } => Self::Ordering,
            _ => Self::Numerical,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// Snapshot states in time order; the first is the initial state. On
    /// overflow the last snapshot is the last state below the cap.
    pub snapshots: Vec<SystemState>,
    pub steps: Vec<StepSummary>,
    pub termination: Termination,
}

impl Simulation {
    pub fn worst_violation(&self) -> f64 {
        self.steps.iter().map(|s| s.worst_violation).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_final_gap(&self) -> f64 {
        self.steps.iter().map(|s| s.final_gap).fold(0.0, f64::max)
    }
}

/// Number of halvings of `dt` needed for `dt · 2 max(b1 max u1, c2 max u2) <= GROWTH_STEP_LIMIT`.
fn growth_halvings(params: &ModelParams, state: &SystemState, dt: f64) -> u32 {
    let rate = 2.0 * (params.b1 * state.u[0].max()).max(params.c2 * state.u[1].max());
    let mut k = 0;
    while dt / 2f64.powi(k as i32) * rate > GROWTH_STEP_LIMIT && k < 64 {
        k += 1;
    }
    k
}

/// Time-steps from `u0` to `t_end` or until the overflow cap is crossed.
///
/// Each step uses the discrete bracket of [`step_bracket`]. `dt` is halved
/// when the solution grows fast or when a step fails; a step that still fails
/// after `max_dt_halvings` halvings ends the run as `Failed`. Growth that would
/// need more than `max_dt_halvings` halvings is reported as an overflow at the
/// current time, like crossing `overflow_cap`.
pub fn simulate(
    params: &ModelParams,
    u0: (ScalarField, ScalarField),
    cfg: &SolverConfig,
    t_end: f64,
) -> Result<Simulation> {
    cfg.validate()?;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(domain(format!("t_end = {t_end} must be finite and > 0")));
    }
    let mut state = SystemState::from_u(params, 0.0, u0.0, u0.1)?;
    let mut snapshots = vec![state.clone()];
    let mut steps = Vec::new();
    let mut step_index = 0usize;

    let termination = loop {
        if state.t >= t_end {
            break Termination::Completed;
        }
        let mut k = growth_halvings(params, &state, cfg.dt);
        if k > cfg.max_dt_halvings {
            if snapshots.last().is_none_or(|s| s.t != state.t) {
                snapshots.push(state.clone());
            }
            break Termination::Overflowed { t: state.t };
        }
        let mut last_err = None;
        let mut outcome = None;
        while k <= cfg.max_dt_halvings {
            let mut dt = cfg.dt / 2f64.powi(k as i32);
            if state.t + dt * (1.0 + 1e-9) >= t_end {
                dt = t_end - state.t;
            }
            let attempt = step_bracket(params, &state, dt)
                .and_then(|b| step_with_dt(params, &state, dt, cfg, &b).map(|o| (o, b)));
            match attempt {
                Ok(r) => {
                    outcome = Some((r, k, dt));
                    break;
                }
                Err(e) => last_err = Some(e),
            }
            k += 1;
        }
        let Some(((out, bracket), halvings, dt)) = outcome else {
            let e = last_err.expect("at least one attempt");
            let reason = format!("{e} (after {} dt halvings)", cfg.max_dt_halvings);
            break Termination::Failed { t: state.t, kind: FailureKind::of(&e), reason };
        };
        let mut new_state = out.state;
        if state.t + dt >= t_end {
            new_state.t = t_end;
        }
        step_index += 1;
        steps.push(StepSummary {
            t: new_state.t,
            dt,
            halvings,
            inner_iterations: out.trace.iterates.len(),
            final_gap: out.trace.final_gap(),
            worst_violation: out.trace.worst_violation(),
            sandwich_violation: out.trace.sandwich_violation,
            phi: out.trace.phi,
            upper_caps: [bracket.upper.u[0].max(), bracket.upper.u[1].max()],
            max_u1_plus_u2: new_state.max_sum(),
        });
        if out.overflowed {
            if snapshots.last().is_none_or(|s| s.t != state.t) {
                snapshots.push(state.clone());
            }
            break Termination::Overflowed { t: new_state.t };
        }
        state = new_state;
        if step_index.is_multiple_of(cfg.snapshot_every) || state.t >= t_end {
            snapshots.push(state.clone());
        }
    };
    Ok(Simulation { snapshots, steps, termination })
}

/// Writes snapshot rows `t, x(, y), u1, u2, h1, h2` with one header row.
pub fn write_snapshots_csv<W: Write>(out: &mut W, snapshots: &[SystemState]) -> io::Result<()> {
    for (k, s) in snapshots.iter().enumerate() {
        crate::grid::write_fields_csv(
            out,
            &[("t", s.t)],
            &[("u1", &s.u[0]), ("u2", &s.u[1]), ("h1", &s.h[0]), ("h2", &s.h[1])],
            k == 0,
        )?;
    }
    Ok(())
}

