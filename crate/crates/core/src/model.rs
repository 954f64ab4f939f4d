//! Model parameters, reaction terms and the self-diffusion transform.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Names of the ten model constants, in canonical order.
pub const PARAM_KEYS: [&str; 10] = [
    "d1", "d2", "alpha1", "alpha2", "a1", "a2", "b1", "b2", "c1", "c2",
];

/// Positive constants of the self-diffusion system.
///
/// `alpha1`/`alpha2` may be zero, which recovers the semilinear
/// Lotka-Volterra-type case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d1: f64,
    pub d2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl ModelParams {
    /// Checks the sign and finiteness constraints and returns `self` unchanged.
    pub fn validated(self) -> Result<Self> {
        for key in PARAM_KEYS {
            let v = self.get(key).expect("canonical key");
            if !v.is_finite() {
                return Err(domain(format!("model parameter {key} is not finite")));
            }
            let alpha = key.starts_with("alpha");
            if alpha && v < 0.0 {
                return Err(domain(format!("model parameter {key} = {v} must be >= 0")));
            }
            if !alpha && v <= 0.0 {
                return Err(domain(format!("model parameter {key} = {v} must be > 0")));
            }
        }
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        Some(match key {
            "d1" => self.d1,
            "d2" => self.d2,
            "alpha1" => self.alpha1,
            "alpha2" => self.alpha2,
            "a1" => self.a1,
            "a2" => self.a2,
            "b1" => self.b1,
            "b2" => self.b2,
            "c1" => self.c1,
            "c2" => self.c2,
            _ => return None,
        })
    }

    /// Sets a parameter by name. Does not validate; call [`validated`](Self::validated).
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "d1" => &mut self.d1,
            "d2" => &mut self.d2,
            "alpha1" => &mut self.alpha1,
            "alpha2" => &mut self.alpha2,
            "a1" => &mut self.a1,
            "a2" => &mut self.a2,
            "b1" => &mut self.b1,
            "b2" => &mut self.b2,
            "c1" => &mut self.c1,
            "c2" => &mut self.c2,
            _ => return Err(domain(format!("unknown model parameter {key}"))),
        };
        *slot = value;
        Ok(())
    }

    /// `(d_i, α_i)` for species `i ∈ {0, 1}`.
    pub fn diffusion(&self, species: usize) -> Diffusion {
        match species {
            0 => Diffusion { d: self.d1, alpha: self.alpha1 },
            _ => Diffusion { d: self.d2, alpha: self.alpha2 },
        }
    }

    #[inline]
    pub(crate) fn f1(&self, u1: f64, u2: f64) -> f64 {
        u1 * (-self.a1 + self.b1 * u1 - self.c1 * u2)
    }

    #[inline]
    pub(crate) fn f2(&self, u1: f64, u2: f64) -> f64 {
        u2 * (-self.a2 - self.b2 * u1 + self.c2 * u2)
    }

    /// Reaction term of species `i` evaluated at `(u1, u2)`.
    #[inline]
    pub(crate) fn f(&self, species: usize, u1: f64, u2: f64) -> f64 {
        if species == 0 {
            self.f1(u1, u2)
        } else {
            self.f2(u1, u2)
        }
    }

    /// `∂f_i/∂u_i` at `(u1, u2)`.
    #[inline]
    pub(crate) fn df_own(&self, species: usize, u1: f64, u2: f64) -> f64 {
        if species == 0 {
            -self.a1 + 2.0 * self.b1 * u1 - self.c1 * u2
        } else {
            -self.a2 - self.b2 * u1 + 2.0 * self.c2 * u2
        }
    }
}

/// Diffusion pair `(d, α)` of a single species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diffusion {
    pub d: f64,
    pub alpha: f64,
}

impl Diffusion {
    /// `P(u) = (d + αu)u`, no checks.
    #[inline]
    pub fn forward(self, u: f64) -> f64 {
        (self.d + self.alpha * u) * u
    }

    /// Nonnegative root of `P(u) = h`, no checks.
    ///
    /// Written as `2h / (d + sqrt(d² + 4αh))`, which equals
    /// `(-d + sqrt(d² + 4αh)) / 2α` without the cancellation for small `αh`
    /// and reduces to `h/d` when `α = 0`.
    #[inline]
    pub fn inverse(self, h: f64) -> f64 {
        let disc = (self.d * self.d + 4.0 * self.alpha * h).max(0.0);
        2.0 * h / (self.d + disc.sqrt())
    }

    /// `(d + 2αu)⁻¹`, the coefficient of `h_t` in the transformed equation.
    #[inline]
    pub fn time_coefficient(self, u: f64) -> f64 {
        1.0 / (self.d + 2.0 * self.alpha * u)
    }
}

fn check_nonneg_finite(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(domain(format!("{name} = {v} is not finite")));
    }
    if v < 0.0 {
        return Err(domain(format!("{name} = {v} is negative")));
    }
    Ok(())
}

fn check_diffusion(d: f64, alpha: f64) -> Result<Diffusion> {
    if !(d.is_finite() && d > 0.0) {
        return Err(domain(format!("d = {d} must be finite and > 0")));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(domain(format!("alpha = {alpha} must be finite and >= 0")));
    }
    Ok(Diffusion { d, alpha })
}

/// Reaction pair `(f1, f2)` at a nonnegative point.
pub fn reaction(params: &ModelParams, u1: f64, u2: f64) -> Result<(f64, f64)> {
    check_nonneg_finite("u1", u1)?;
    check_nonneg_finite("u2", u2)?;
    Ok((params.f1(u1, u2), params.f2(u1, u2)))
}

/// `h = (d + αu)u`.
pub fn transform_forward(d: f64, alpha: f64, u: f64) -> Result<f64> {
    let diff = check_diffusion(d, alpha)?;
    check_nonneg_finite("u", u)?;
    Ok(diff.forward(u))
}

/// The nonnegative `u` with `(d + αu)u = h`; `h/d` when `α = 0`.
pub fn transform_inverse(d: f64, alpha: f64, h: f64) -> Result<f64> {
    let diff = check_diffusion(d, alpha)?;
    check_nonneg_finite("h", h)?;
    Ok(diff.inverse(h))
}

/// Constants of the quadratic growth condition for a multiplier pair `(μ1, μ2)`.
///
/// All derived values are computed once from the inputs; there are no setters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthConstants {
    mu1: f64,
    mu2: f64,
    psi1: f64,
    psi2: f64,
    c: f64,
    psi: f64,
    valid: bool,
}

impl GrowthConstants {
    pub fn mu1(&self) -> f64 {
        self.mu1
    }
    pub fn mu2(&self) -> f64 {
        self.mu2
    }
    /// `min{μ1 b1, μ2 c2}`
    pub fn psi1(&self) -> f64 {
        self.psi1
    }
    /// `(μ1 c1 + μ2 b2) / 2`
    pub fn psi2(&self) -> f64 {
        self.psi2
    }
    /// `max{μ1 a1, μ2 a2}`
    pub fn c(&self) -> f64 {
        self.c
    }
    /// `(ψ1 - ψ2) / 2`
    pub fn psi(&self) -> f64 {
        self.psi
    }
    /// `ψ1 > ψ2 > 0`
    pub fn valid(&self) -> bool {
        self.valid
    }
}

pub fn growth_constants(params: &ModelParams, mu1: f64, mu2: f64) -> Result<GrowthConstants> {
    if !(mu1.is_finite() && mu1 > 0.0 && mu2.is_finite() && mu2 > 0.0) {
        return Err(domain(format!(
            "multipliers must be finite and positive, got mu1 = {mu1}, mu2 = {mu2}"
        )));
    }
    let psi1 = (mu1 * params.b1).min(mu2 * params.c2);
    let psi2 = (mu1 * params.c1 + mu2 * params.b2) / 2.0;
    let c = (mu1 * params.a1).max(mu2 * params.a2);
    let psi = (psi1 - psi2) / 2.0;
    Ok(GrowthConstants {
        mu1,
        mu2,
        psi1,
        psi2,
        c,
        psi,
        valid: psi1 > psi2 && psi2 > 0.0,
    })
}

/// `ψ(u1 + u2)² - c(u1 + u2)`, the lower bound for `μ1 f1 + μ2 f2`.
pub fn growth_lower_bound(gc: &GrowthConstants, u1: f64, u2: f64) -> Result<f64> {
    if !gc.valid {
        return Err(Error::Precondition(format!(
            "growth constants invalid: psi1 = {}, psi2 = {}",
            gc.psi1, gc.psi2
        )));
    }
    check_nonneg_finite("u1", u1)?;
    check_nonneg_finite("u2", u2)?;
    let s = u1 + u2;
    Ok(gc.psi * s * s - gc.c * s)
}

#[cfg(test)]
pub(crate) fn example_params() -> ModelParams {
    ModelParams {
        d1: 1.0,
        d2: 1.0,
        alpha1: 0.0,
        alpha2: 0.0,
        a1: 1.0,
        a2: 1.0,
        b1: 2.0,
        b2: 0.5,
        c1: 0.5,
        c2: 2.0,
    }
}
