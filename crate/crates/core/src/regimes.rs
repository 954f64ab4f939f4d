//! Closed-form parameter conditions: the global-existence certificate built
//! from constant upper solutions, and the sufficient conditions for blow-up.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::grid::EigenMode;
use crate::model::{growth_constants, GrowthConstants, ModelParams};

/// One evaluated inequality `lhs (op) rhs`.
///
/// `lhs`/`rhs` are `None` when the expression was not evaluated because a
/// prerequisite (a positive denominator) failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub holds: bool,
}

impl Inequality {
    fn new(name: &str, lhs: f64, rhs: f64, holds: bool) -> Self {
        Self { name: name.to_owned(), lhs: Some(lhs), rhs: Some(rhs), holds }
    }

    fn skipped(name: &str) -> Self {
        Self { name: name.to_owned(), lhs: None, rhs: None, holds: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn is_empty(&self) -> bool {
        !(self.lo <= self.hi)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Admissible constant upper solutions `N1 ∈ n1`, `N2 ∈ n2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NWindow {
    pub n1: Interval,
    pub n2: Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalVerdict {
    CertifiedGlobal,
    NotCertified,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub lambda0: f64,
    pub lambda0_mode: Option<EigenMode>,
    /// `(2α2λ0 - c2)(2α1λ0 - b1) - b2c1`
    pub det: f64,
    pub inequalities: Vec<Inequality>,
    pub window: Option<NWindow>,
    pub verdict: GlobalVerdict,
}

impl RegimeReport {
    pub fn first_failure(&self) -> Option<&Inequality> {
        self.inequalities.iter().find(|i| !i.holds)
    }
}

pub const INEQ_SELF_DIFFUSION_1: &str = "2*alpha1*lambda0 <= b1";
pub const INEQ_SELF_DIFFUSION_2: &str = "2*alpha2*lambda0 <= c2";
pub const INEQ_DET: &str = "(2*alpha2*lambda0 - c2)*(2*alpha1*lambda0 - b1) - b2*c1 > 0";
pub const INEQ_CROSS: &str = "c2*b1 > c1*b2";
pub const INEQ_N1: &str = "N1 lower bound <= N1 upper bound";
pub const INEQ_N2: &str = "N2 lower bound <= N2 upper bound";

fn check_lambda0(lambda0: f64) -> Result<()> {
    if !(lambda0.is_finite() && lambda0 >= 0.0) {
        return Err(domain(format!("lambda0 = {lambda0} must be finite and >= 0")));
    }
    Ok(())
}

/// Evaluates the global-existence certificate for eigenvalue `lambda0`.
///
/// The window's lower endpoints solve the two linear constraints on
/// `(N1, N2)` coming from the lower-solution inequalities; the upper
/// endpoints come from the upper-solution inequalities.
pub fn classify_global(params: &ModelParams, lambda0: f64) -> Result<RegimeReport> {
    check_lambda0(lambda0)?;
    let p = params;
    let s1 = 2.0 * p.alpha1 * lambda0 - p.b1;
    let s2 = 2.0 * p.alpha2 * lambda0 - p.c2;
    let det = s2 * s1 - p.b2 * p.c1;
    let cross_l = p.c2 * p.b1;
    let cross_r = p.c1 * p.b2;

    let mut ineq = vec![
        Inequality::new(INEQ_SELF_DIFFUSION_1, 2.0 * p.alpha1 * lambda0, p.b1, 2.0 * p.alpha1 * lambda0 <= p.b1),
        Inequality::new(INEQ_SELF_DIFFUSION_2, 2.0 * p.alpha2 * lambda0, p.c2, 2.0 * p.alpha2 * lambda0 <= p.c2),
        Inequality::new(INEQ_DET, det, 0.0, det > 0.0),
        Inequality::new(INEQ_CROSS, cross_l, cross_r, cross_l > cross_r),
    ];

    let window = if det > 0.0 && cross_l > cross_r {
        let cross = cross_l - cross_r;
        let n1 = Interval {
            lo: (-p.a1 * s2 + p.a2 * p.c1) / det,
            hi: (p.a1 * p.c2 + p.a2 * p.c1) / cross,
        };
        let n2 = Interval {
            lo: (-p.a2 * s1 + p.a1 * p.b2) / det,
            hi: (p.a1 * p.b2 + p.a2 * p.b1) / cross,
        };
        ineq.push(Inequality::new(INEQ_N1, n1.lo, n1.hi, n1.lo <= n1.hi));
        ineq.push(Inequality::new(INEQ_N2, n2.lo, n2.hi, n2.lo <= n2.hi));
        Some(NWindow { n1, n2 })
    } else {
        ineq.push(Inequality::skipped(INEQ_N1));
        ineq.push(Inequality::skipped(INEQ_N2));
        None
    };

    let nonempty = window.is_some_and(|w| !w.n1.is_empty() && !w.n2.is_empty());
    let verdict = if nonempty && ineq.iter().all(|i| i.holds) {
        GlobalVerdict::CertifiedGlobal
    } else {
        GlobalVerdict::NotCertified
    };
    Ok(RegimeReport { lambda0, lambda0_mode: None, det, inequalities: ineq, window, verdict })
}

/// Which ordering of the multipliers the certificate relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// requires `c1 + b2 < 2 b1`
    Mu1LtMu2,
    /// requires `c1 + b2 < 2 c2`
    Mu1GtMu2,
    /// requires both
    Mu1EqMu2,
}

impl Branch {
    pub fn of(mu1: f64, mu2: f64) -> Self {
        if mu1 < mu2 {
            Self::Mu1LtMu2
        } else if mu1 > mu2 {
            Self::Mu1GtMu2
        } else {
            Self::Mu1EqMu2
        }
    }

    pub fn holds(self, p: &ModelParams) -> bool {
        let s = p.c1 + p.b2;
        match self {
            Self::Mu1LtMu2 => s < 2.0 * p.b1,
            Self::Mu1GtMu2 => s < 2.0 * p.c2,
            Self::Mu1EqMu2 => s < 2.0 * p.b1 && s < 2.0 * p.c2,
        }
    }

    fn describe(self) -> &'static str {
        match self {
            Self::Mu1LtMu2 => "c1 + b2 < 2*b1",
            Self::Mu1GtMu2 => "c1 + b2 < 2*c2",
            Self::Mu1EqMu2 => "c1 + b2 < 2*min(b1, c2)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupVerdict {
    CertifiedBlowupIf,
    NotCertified,
}

/// Sufficient condition for finite-time blow-up with multipliers `(μ1, μ2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupCertificate {
    pub lambda0: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub growth: GrowthConstants,
    pub branch: Branch,
    pub branch_holds: bool,
    /// `α1 + α2`
    pub alpha_sum: f64,
    /// `max{d1, d2}`
    pub d_bar: f64,
    /// `max{μ1, μ2}`
    pub mu_bar: f64,
    /// `min{μ1, μ2}`
    pub mu_under: f64,
    /// `λ0 d̄ + c / μ̲`
    pub tau_bar: f64,
    /// `ψ / μ̄² - λ0 α / μ̄`
    pub psi_under: f64,
    /// `τ̄ / ψ̲`, present when `ψ̲ > 0`
    pub threshold: Option<f64>,
    pub p_hat0: f64,
    pub verdict: BlowupVerdict,
    pub failed_condition: Option<String>,
}

impl BlowupCertificate {
    /// Everything except the initial-data threshold holds.
    pub fn conditions_hold(&self) -> bool {
        self.growth.valid() && self.branch_holds && self.psi_under > 0.0
    }

    pub fn is_certified(&self) -> bool {
        self.verdict == BlowupVerdict::CertifiedBlowupIf
    }

    /// `ψ̲ p̂0 - τ̄`
    pub fn margin(&self) -> f64 {
        self.psi_under * self.p_hat0 - self.tau_bar
    }

    /// Re-evaluates the verdict for a different `p̂0`.
    pub fn with_p_hat0(&self, p_hat0: f64) -> Self {
        let mut out = self.clone();
        out.p_hat0 = p_hat0;
        out.refresh_verdict();
        out
    }

    fn refresh_verdict(&mut self) {
        let failed = if !self.growth.valid() {
            Some(format!(
                "psi1 > psi2 > 0 (psi1 = {}, psi2 = {})",
                self.growth.psi1(),
                self.growth.psi2()
            ))
        } else if !self.branch_holds {
            Some(format!("branch {}", self.branch.describe()))
        } else if !(self.psi_under > 0.0) {
            Some(format!("psi_under > 0 (psi_under = {})", self.psi_under))
        } else {
            let thr = self.threshold.expect("threshold exists when psi_under > 0");
            (!(self.p_hat0 > thr)).then(|| format!("p_hat0 > threshold ({} <= {thr})", self.p_hat0))
        };
        self.verdict = if failed.is_none() {
            BlowupVerdict::CertifiedBlowupIf
        } else {
            BlowupVerdict::NotCertified
        };
        self.failed_condition = failed;
    }
}

pub fn classify_blowup(
    params: &ModelParams,
    lambda0: f64,
    mu1: f64,
    mu2: f64,
    p_hat0: f64,
) -> Result<BlowupCertificate> {
    check_lambda0(lambda0)?;
    if !(p_hat0.is_finite() && p_hat0 >= 0.0) {
        return Err(domain(format!("p_hat0 = {p_hat0} must be finite and >= 0")));
    }
    let growth = growth_constants(params, mu1, mu2)?;
    let branch = Branch::of(mu1, mu2);
    let alpha_sum = params.alpha1 + params.alpha2;
    let d_bar = params.d1.max(params.d2);
    let mu_bar = mu1.max(mu2);
    let mu_under = mu1.min(mu2);
    let tau_bar = lambda0 * d_bar + growth.c() / mu_under;
    let psi_under = growth.psi() / (mu_bar * mu_bar) - lambda0 * alpha_sum / mu_bar;
    let threshold = (psi_under > 0.0).then(|| tau_bar / psi_under);
    let mut cert = BlowupCertificate {
        lambda0,
        mu1,
        mu2,
        growth,
        branch,
        branch_holds: branch.holds(params),
        alpha_sum,
        d_bar,
        mu_bar,
        mu_under,
        tau_bar,
        psi_under,
        threshold,
        p_hat0,
        verdict: BlowupVerdict::NotCertified,
        failed_condition: None,
    };
    cert.refresh_verdict();
    Ok(cert)
}

/// Multiplier pairs scanned by [`search_multipliers`]: ratios `μ1/μ2` at
/// `10^(-3 + 3j/resolution)`, `j = 0..=2·resolution`, with `min(μ1, μ2) = 1`.
///
/// Doubling `resolution` yields a superset, and ratio 1 is always included.
pub fn multiplier_grid(resolution: usize) -> Vec<(f64, f64)> {
    (0..=2 * resolution)
        .map(|j| {
            let ratio = if j == resolution {
                1.0
            } else {
                10f64.powf(-3.0 + 3.0 * j as f64 / resolution as f64)
            };
            if ratio >= 1.0 {
                (ratio, 1.0)
            } else {
                (1.0, 1.0 / ratio)
            }
        })
        .collect()
}

/// Scans multiplier ratios for the certificate with the largest margin
/// `ψ̲ p̂0 - τ̄`, with `p̂0 = μ1 p̂1 + μ2 p̂2` recomputed per candidate.
///
/// Returns the `μ1 = μ2 = 1` certificate (not certified) when nothing passes.
pub fn search_multipliers(
    params: &ModelParams,
    lambda0: f64,
    p_hat_components: (f64, f64),
    resolution: usize,
) -> Result<BlowupCertificate> {
    if resolution < 2 {
        return Err(domain(format!("search resolution must be >= 2, got {resolution}")));
    }
    let (p1, p2) = p_hat_components;
    let candidates = multiplier_grid(resolution)
        .into_par_iter()
        .map(|(mu1, mu2)| classify_blowup(params, lambda0, mu1, mu2, mu1 * p1 + mu2 * p2))
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<&BlowupCertificate> = None;
    for c in candidates.iter().filter(|c| c.is_certified()) {
        if best.map_or(true, |b| c.margin() > b.margin()) {
            best = Some(c);
        }
    }
    match best {
        Some(c) => Ok(c.clone()),
        None => Ok(candidates[resolution].clone()),
    }
}

/// `T0 = (1/τ) ln[ψ p0 / (ψ p0 - τ)]` for `p0 > τ/ψ`.
pub fn t0_from_constants(tau: f64, psi: f64, p0: f64) -> Result<f64> {
    if !(tau > 0.0 && psi > 0.0 && tau.is_finite() && psi.is_finite()) {
        return Err(Error::Precondition(format!(
            "T0 needs tau > 0 and psi > 0 (tau = {tau}, psi = {psi})"
        )));
    }
    if !(p0 > tau / psi) {
        return Err(Error::Precondition(format!(
            "p_hat0 = {p0} does not exceed tau/psi = {}",
            tau / psi
        )));
    }
    let t0 = -(-tau / (psi * p0)).ln_1p() / tau;
    if !(t0.is_finite() && t0 > 0.0) {
        return Err(Error::Precondition(format!("T0 = {t0} is not finite and positive")));
    }
    Ok(t0)
}

/// Upper bound on the blow-up time for initial weighted average `p_hat0`.
pub fn t0_estimate(cert: &BlowupCertificate, p_hat0: f64) -> Result<f64> {
    if !cert.conditions_hold() {
        return Err(Error::Precondition(format!(
            "certificate conditions fail: {}",
            cert.with_p_hat0(p_hat0).failed_condition.unwrap_or_default()
        )));
    }
    t0_from_constants(cert.tau_bar, cert.psi_under, p_hat0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::example_params;
    use approx::assert_relative_eq;

    #[test]
    fn global_certified_at_zero_eigenvalue() {
        let p = example_params();
        let r = classify_global(&p, 0.0).unwrap();
        assert_eq!(r.verdict, GlobalVerdict::CertifiedGlobal);
        assert_relative_eq!(r.det, 3.75);
        let w = r.window.unwrap();
        // the window collapses to the interior equilibrium (2/3, 2/3)
        assert_eq!(w.n1.lo, w.n1.hi);
        assert_eq!(w.n2.lo, w.n2.hi);
        assert_relative_eq!(w.n1.hi, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.n2.hi, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn global_not_certified_with_positive_eigenvalue() {
        let p = ModelParams { alpha1: 0.1, alpha2: 0.1, ..example_params() };
        let r = classify_global(&p, 1.0).unwrap();
        assert_eq!(r.verdict, GlobalVerdict::NotCertified);
        let n1 = r.inequalities.iter().find(|i| i.name == INEQ_N1).unwrap();
        assert_relative_eq!(n1.lhs.unwrap(), 2.3 / 2.99, epsilon = 1e-14);
        assert_relative_eq!(n1.rhs.unwrap(), 2.5 / 3.75, epsilon = 1e-14);
        assert!(!n1.holds);
    }

    #[test]
    fn degenerate_cross_determinant() {
        let p = ModelParams { b1: 1.0, c1: 1.0, b2: 1.0, c2: 1.0, ..example_params() };
        let r = classify_global(&p, 0.0).unwrap();
        assert_eq!(r.verdict, GlobalVerdict::NotCertified);
        assert!(r.window.is_none());
        assert!(r.inequalities.iter().any(|i| i.name == INEQ_CROSS && !i.holds));
        assert!(r.inequalities.iter().filter(|i| i.lhs.is_none()).count() == 2);
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        assert!(classify_global(&example_params(), -1.0).is_err());
        assert!(classify_blowup(&example_params(), -0.5, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_eigenvalue_reduces_to_equalities() {
        // any params with c2 b1 > c1 b2: the two window inequalities hold with equality
        for (b1, c1, b2, c2, a1, a2) in [(2.0, 0.5, 0.5, 2.0, 1.0, 1.0), (3.0, 1.0, 0.2, 1.5, 0.3, 2.0)] {
            let p = ModelParams { b1, c1, b2, c2, a1, a2, ..example_params() };
            let r = classify_global(&p, 0.0).unwrap();
            for name in [INEQ_N1, INEQ_N2] {
                let i = r.inequalities.iter().find(|i| i.name == name).unwrap();
                assert_eq!(i.lhs, i.rhs);
            }
            assert_eq!(r.verdict, GlobalVerdict::CertifiedGlobal);
        }
    }

    #[test]
    fn blowup_examples() {
        let p = example_params();
        let c = classify_blowup(&p, 0.0, 1.0, 1.0, 2.0).unwrap();
        assert_eq!(c.tau_bar, 1.0);
        assert_eq!(c.psi_under, 0.75);
        assert_relative_eq!(c.threshold.unwrap(), 4.0 / 3.0);
        assert!(c.is_certified());

        let c = classify_blowup(&p, 0.0, 1.0, 1.0, 1.0).unwrap();
        assert!(!c.is_certified());
        assert!(c.failed_condition.unwrap().contains("threshold"));

        let q = ModelParams { c1: 2.0, b2: 2.0, b1: 1.0, ..p };
        let c = classify_blowup(&q, 0.0, 0.5, 1.0, 100.0).unwrap();
        assert_eq!(c.branch, Branch::Mu1LtMu2);
        assert!(!c.branch_holds);
        assert!(!c.is_certified());
    }

    #[test]
    fn blowup_scaling_invariance() {
        let p = ModelParams { alpha1: 0.05, alpha2: 0.02, ..example_params() };
        let (p1, p2) = (1.2, 0.9);
        for s in [0.1, 3.0, 17.0] {
            let base = classify_blowup(&p, 0.3, 1.0, 1.5, p1 + 1.5 * p2).unwrap();
            let scaled = classify_blowup(&p, 0.3, s, 1.5 * s, s * p1 + 1.5 * s * p2).unwrap();
            assert_eq!(base.branch, scaled.branch);
            assert_eq!(base.verdict, scaled.verdict);
            assert_relative_eq!(scaled.growth.psi1(), s * base.growth.psi1(), max_relative = 1e-14);
            assert_relative_eq!(scaled.threshold.unwrap(), s * base.threshold.unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn search_includes_unit_ratio() {
        let p = example_params();
        let unit = classify_blowup(&p, 0.0, 1.0, 1.0, 2.0).unwrap();
        let best = search_multipliers(&p, 0.0, (1.0, 1.0), 8).unwrap();
        assert!(best.is_certified());
        assert!(best.margin() >= unit.margin());
        let finer = search_multipliers(&p, 0.0, (1.0, 1.0), 16).unwrap();
        assert!(finer.margin() >= best.margin());
    }

    #[test]
    fn search_fails_when_growth_never_valid() {
        let p = ModelParams { c1: 10.0, b2: 10.0, b1: 1.0, c2: 1.0, ..example_params() };
        // independent sweep of the growth constants over the same ratios
        for (mu1, mu2) in multiplier_grid(10) {
            let psi1 = (mu1 * 1.0f64).min(mu2 * 1.0);
            let psi2 = (mu1 * 10.0 + mu2 * 10.0) / 2.0;
            assert!(psi2 >= psi1);
        }
        let best = search_multipliers(&p, 0.0, (5.0, 5.0), 10).unwrap();
        assert!(!best.is_certified());
        assert!(search_multipliers(&p, 0.0, (1.0, 1.0), 1).is_err());
    }

    #[test]
    fn multiplier_grid_nests() {
        let coarse = multiplier_grid(4);
        let fine = multiplier_grid(8);
        for c in &coarse {
            assert!(fine.iter().any(|f| (f.0 - c.0).abs() <= 1e-12 * c.0 && (f.1 - c.1).abs() <= 1e-12 * c.1));
        }
        assert!(coarse.contains(&(1.0, 1.0)));
    }

    #[test]
    fn t0_examples() {
        let t0 = t0_from_constants(1.0, 1.0, 2.0).unwrap();
        assert!((t0 - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(t0_from_constants(1.0, 1.0, 1.0).is_err());
        let mut prev = f64::INFINITY;
        for p0 in [1.01, 1.5, 3.0, 10.0, 1e3, 1e6] {
            let t = t0_from_constants(1.0, 1.0, p0).unwrap();
            assert!(t > 0.0 && t < prev);
            prev = t;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn t0_from_certificate() {
        // b1 = c2 = 2.5, c1 = b2 = 0.5 gives psi = 1 and c = 1 at unit multipliers
        let p = ModelParams { b1: 2.5, c2: 2.5, ..example_params() };
        let c = classify_blowup(&p, 0.0, 1.0, 1.0, 2.0).unwrap();
        assert_eq!((c.tau_bar, c.psi_under), (1.0, 1.0));
        assert!((t0_estimate(&c, 2.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(t0_estimate(&c, 1.0), Err(Error::Precondition(_))));
    }
}
