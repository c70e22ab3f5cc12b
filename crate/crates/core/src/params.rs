//! Absolute and per-generation scale parameters, plus the inequality ledger.
//!
//! All per-generation quantities are powers of `lambda_q = ceil(lambda0^(b^q))`.
//! The ledger can be evaluated for arbitrarily large `lambda0` because every
//! scale comparison is done on logarithms of the real (un-ceiled) values; the
//! ceiled integers are used whenever they fit the exact-integer range of f64.

use crate::error::{CoreError, Result};
use serde::Serialize;

pub const F64_EXACT_INT_MAX: f64 = 9007199254740992.0; // 2^53

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    Strict,
    Desk,
}

/// Parameters fixed once per experiment, independent of the generation `q`.
#[derive(Debug, Clone, Serialize)]
pub struct AbsoluteParams {
    pub beta: f64,
    pub b: f64,
    pub alpha0: f64,
    pub alpha_prime: f64,
    pub s: f64,
    pub gamma_i: f64,
    pub gamma_r: f64,
    pub gamma_s: f64,
    pub gamma: f64,
    /// Exponent `e` in `mu_q = lambda_q^e`.
    pub time_exp_e: f64,
    pub lambda0: u64,
    pub n_star: u32,
    pub n_cap: u64,
    pub q_cap: u64,
    pub mode: Mode,
}

impl AbsoluteParams {
    /// Derived exponent `theta` with `kappa_q = lambda_q^{-theta}`.
    pub fn theta(&self) -> f64 {
        2.0 * self.b * (1.0 + self.beta) / (self.b + 1.0)
    }

    /// Derived Hoelder exponent `alpha` from `2 alpha + beta = 1 + 2 b gamma_I - 2 b^2 gamma`.
    pub fn alpha(&self) -> f64 {
        (1.0 + 2.0 * self.b * self.gamma_i - 2.0 * self.b * self.b * self.gamma - self.beta) / 2.0
    }

    /// Workstation-scale preset; the strict ledger is reported, not enforced.
    pub fn desk() -> Self {
        let beta = 0.3;
        let b = 1.25;
        let gamma_i = 0.01;
        let gamma_s = 0.08;
        AbsoluteParams {
            beta,
            b,
            alpha0: 0.3,
            alpha_prime: 0.65,
            s: 1.0,
            gamma_i,
            gamma_r: 0.01,
            gamma_s,
            gamma: 0.002,
            time_exp_e: derived_time_exp(beta, b, gamma_i, gamma_s),
            lambda0: 16,
            n_star: 2,
            n_cap: 16,
            q_cap: 2,
            mode: Mode::Desk,
        }
    }

    pub fn validate_basic(&self) -> Result<()> {
        if self.lambda0 < 2 {
            return Err(CoreError::InvalidParam("lambda0 must be >= 2".into()));
        }
        if !(self.b > 1.0) {
            return Err(CoreError::InvalidParam("b must be > 1".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(CoreError::InvalidParam("beta must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// Midpoint of the admissible band for the exponent `e` (in `be` units the
/// band is the intersection of the technical band around
/// `1 - b beta + (1+beta)(b-1)/(2(1+b))` of half-width `b gamma_S / 2` with the
/// essential-chain band `(1 - beta + 2 b gamma_I, b(2 - theta))`). When the
/// intersection is empty (true for the desk preset) the technical band's
/// midpoint is used and the ledger flags the chain.
pub fn derived_time_exp(beta: f64, b: f64, gamma_i: f64, gamma_s: f64) -> f64 {
    let base = 1.0 - b * beta + (1.0 + beta) * (b - 1.0) / (2.0 * (1.0 + b));
    let half = b * gamma_s / 2.0;
    let (t_lo, t_hi) = (base - half, base + half);
    let theta = 2.0 * b * (1.0 + beta) / (b + 1.0);
    let c_lo = 1.0 - beta + 2.0 * b * gamma_i;
    let c_hi = b * (2.0 - theta);
    let lo = t_lo.max(c_lo);
    let hi = t_hi.min(c_hi);
    let be = if lo < hi { 0.5 * (lo + hi) } else { base };
    be / b
}

/// Scales attached to one generation `q`. All fields are derived from the
/// ceiled integer `lambda_q`, matching the definition order of the schedule.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationParams {
    pub q: u32,
    pub lambda_q: u64,
    /// Real `lambda0^(b^q)` before ceiling.
    pub lambda_real: f64,
    pub mu_q: f64,
    pub delta_q: f64,
    pub kappa_q: f64,
    pub ring_lambda_q: f64,
    pub ring_mu_q: f64,
    /// `eps_q = delta_q^{1/2} lambda_q^{1+2 b gamma_R} / mu_{q+1}`.
    pub eps_q: f64,
    pub theta: f64,
    pub alpha: f64,
}

/// Real `lambda0^(b^q)`, snapping to the nearest integer when the true value
/// is an exact integer hit by floating noise (e.g. 16^1.25 = 32).
fn lambda_real(lambda0: u64, b: f64, q: u32) -> f64 {
    let v = (lambda0 as f64).powf(b.powi(q as i32));
    let nearest = v.round();
    if (v - nearest).abs() <= 1e-9 * v.max(1.0) {
        nearest
    } else {
        v
    }
}

fn lambda_int(lambda0: u64, b: f64, q: u32) -> Result<u64> {
    let v = lambda_real(lambda0, b, q);
    if v > F64_EXACT_INT_MAX {
        return Err(CoreError::ScaleOverflow { q });
    }
    Ok(v.ceil() as u64)
}

/// Populate all scales of generation `q` by the closed-form schedule.
pub fn derive_generation(abs: &AbsoluteParams, q: u32) -> Result<GenerationParams> {
    abs.validate_basic()?;
    let lam_int = lambda_int(abs.lambda0, abs.b, q)?;
    let lam = lam_int as f64;
    let theta = abs.theta();
    let delta = lam.powf(-2.0 * abs.beta);
    let kappa = lam.powf(-theta);
    let mu = lam.powf(abs.time_exp_e);
    let ratio = delta.sqrt() / (kappa * lam); // = lam^{(1+beta)(b-1)/(b+1)}
    let ring_lambda = lam.powf(1.0 + abs.b * abs.gamma_i) * ratio.sqrt();
    let ring_mu = delta.sqrt() * lam.powf(1.0 + 2.0 * abs.b * abs.gamma_i);
    // mu_{q+1}: ceiled next-generation lambda when representable, else real.
    let lam_next = match lambda_int(abs.lambda0, abs.b, q + 1) {
        Ok(v) => v as f64,
        Err(_) => lambda_real(abs.lambda0, abs.b, q + 1),
    };
    let mu_next = lam_next.powf(abs.time_exp_e);
    let eps = delta.sqrt() * lam.powf(1.0 + 2.0 * abs.b * abs.gamma_r) / mu_next;
    Ok(GenerationParams {
        q,
        lambda_q: lam_int,
        lambda_real: lambda_real(abs.lambda0, abs.b, q),
        mu_q: mu,
        delta_q: delta,
        kappa_q: kappa,
        ring_lambda_q: ring_lambda,
        ring_mu_q: ring_mu,
        eps_q: eps,
        theta,
        alpha: abs.alpha(),
    })
}

/// One evaluated ledger inequality `lhs (cmp) rhs`.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintEntry {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// When true, `lhs`/`rhs` are natural logarithms of the compared scales
    /// (used for generation entries so huge lambda0 never overflows).
    pub log_scale: bool,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintReport {
    pub mode: Mode,
    pub entries: Vec<ConstraintEntry>,
    pub overall: bool,
}

impl ConstraintReport {
    pub fn entry(&self, name: &str) -> Option<&ConstraintEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConstraintEntry> {
        self.entries.iter().filter(|e| !e.satisfied)
    }
}

/// Logs of the generation-`q` scales computed from the ceiled integer
/// `lambda_q` when representable, otherwise from the real value.
struct LnScales {
    ln_lambda: f64,
    ln_mu: f64,
    ln_delta_half_lambda: f64,
    ln_kappa_lambda2: f64,
    ln_ring_lambda: f64,
    ln_ring_mu: f64,
    ln_eps: f64,
}

fn ln_scales(abs: &AbsoluteParams, q: u32) -> LnScales {
    let ln_lambda = match lambda_int(abs.lambda0, abs.b, q) {
        Ok(v) => (v as f64).ln(),
        Err(_) => abs.b.powi(q as i32) * (abs.lambda0 as f64).ln(),
    };
    let theta = abs.theta();
    let ln_next = match lambda_int(abs.lambda0, abs.b, q + 1) {
        Ok(v) => (v as f64).ln(),
        Err(_) => abs.b.powi(q as i32 + 1) * (abs.lambda0 as f64).ln(),
    };
    let ratio_exp = (1.0 + abs.beta) * (abs.b - 1.0) / (abs.b + 1.0);
    LnScales {
        ln_lambda,
        ln_mu: abs.time_exp_e * ln_lambda,
        ln_delta_half_lambda: (1.0 - abs.beta) * ln_lambda,
        ln_kappa_lambda2: (2.0 - theta) * ln_lambda,
        ln_ring_lambda: (1.0 + abs.b * abs.gamma_i + 0.5 * ratio_exp) * ln_lambda,
        ln_ring_mu: (1.0 - abs.beta + 2.0 * abs.b * abs.gamma_i) * ln_lambda,
        ln_eps: (1.0 - abs.beta + 2.0 * abs.b * abs.gamma_r) * ln_lambda
            - abs.time_exp_e * ln_next,
    }
}

/// Evaluate every ledger inequality for all generations up to `qmax`.
/// Failures are report entries, never errors.
pub fn validate_constraints(abs: &AbsoluteParams, qmax: u32) -> ConstraintReport {
    let mut entries = Vec::new();
    let mut push = |name: &str, lhs: f64, rhs: f64, log_scale: bool, le: bool| {
        let satisfied = if le { lhs <= rhs } else { lhs < rhs };
        entries.push(ConstraintEntry {
            name: name.to_string(),
            lhs,
            rhs,
            log_scale,
            satisfied,
        });
    };

    let b = abs.b;
    let beta = abs.beta;
    push("beta < 1/3", beta, 1.0 / 3.0, false, false);
    push("2*alpha0 + beta < 1", 2.0 * abs.alpha0 + beta, 1.0, false, false);
    push("alpha_prime > alpha0", abs.alpha0, abs.alpha_prime, false, false);
    push("s > (1+beta)/2", (1.0 + beta) / 2.0, abs.s, false, false);
    push("b > 1", 1.0, b, false, false);
    push("b < 11/10", b, 1.1, false, false);
    push(
        "alpha_prime >= b(alpha0+1)-1",
        b * (abs.alpha0 + 1.0) - 1.0,
        abs.alpha_prime,
        false,
        true,
    );
    push(
        "s >= b(1+beta)/((b+1)(2-b))",
        b * (1.0 + beta) / ((b + 1.0) * (2.0 - b)),
        abs.s,
        false,
        true,
    );
    push(
        "2*alpha0 + beta + (1+beta)(b-1)alpha0/(b+1) <= 1",
        2.0 * abs.alpha0 + beta + (1.0 + beta) * (b - 1.0) * abs.alpha0 / (b + 1.0),
        1.0,
        false,
        true,
    );
    push(
        "4(gamma_I + gamma_R) <= gamma_S",
        4.0 * (abs.gamma_i + abs.gamma_r),
        abs.gamma_s,
        false,
        true,
    );
    push(
        "gamma_S <= (b-1)/(b+1)",
        abs.gamma_s,
        (b - 1.0) / (b + 1.0),
        false,
        true,
    );
    push(
        "3b*gamma <= min(gamma_I, gamma_R)",
        3.0 * b * abs.gamma,
        abs.gamma_i.min(abs.gamma_r),
        false,
        true,
    );
    push(
        "3b*gamma_S <= (1-(2b+1)beta)/(2(b+1))",
        3.0 * b * abs.gamma_s,
        (1.0 - (2.0 * b + 1.0) * beta) / (2.0 * (b + 1.0)),
        false,
        true,
    );
    let be_base = 1.0 - b * beta + (1.0 + beta) * (b - 1.0) / (2.0 * (1.0 + b));
    let be = b * abs.time_exp_e;
    push(
        "be >= e-band lower",
        be_base - b * abs.gamma_s / 2.0,
        be,
        false,
        true,
    );
    push(
        "be <= e-band upper",
        be,
        be_base + b * abs.gamma_s / 2.0,
        false,
        true,
    );
    push(
        "Nstar*gamma >= 3",
        3.0,
        abs.n_star as f64 * abs.gamma,
        false,
        true,
    );
    push("Q >= N", abs.n_cap as f64, abs.q_cap as f64, false, true);
    push(
        "N >= Nstar^4",
        (abs.n_star as f64).powi(4),
        abs.n_cap as f64,
        false,
        true,
    );
    let alpha = abs.alpha();
    push("alpha in (0,1): alpha > 0", 0.0, alpha, false, false);
    push("alpha in (0,1): alpha < 1", alpha, 1.0, false, false);

    for q in 0..qmax {
        let cur = ln_scales(abs, q);
        let next = ln_scales(abs, q + 1);
        let tag = |s: &str| format!("{s} (q={q})");
        // Essential scale chain of Remark 2.2 between generations q and q+1.
        push(
            &tag("chain: ring_mu_{q+1} > delta_{q+1}^{1/2} lambda_{q+1}"),
            next.ln_delta_half_lambda,
            next.ln_ring_mu,
            true,
            false,
        );
        push(
            &tag("chain: delta_{q+1}^{1/2} lambda_{q+1} > kappa_{q+1} lambda_{q+1}^2"),
            next.ln_kappa_lambda2,
            next.ln_delta_half_lambda,
            true,
            false,
        );
        push(
            &tag("chain: kappa_{q+1} lambda_{q+1}^2 > mu_{q+1}"),
            next.ln_mu,
            next.ln_kappa_lambda2,
            true,
            false,
        );
        push(
            &tag("chain: mu_{q+1} > ring_mu_q"),
            cur.ln_ring_mu,
            next.ln_mu,
            true,
            false,
        );
        push(
            &tag("chain: ring_mu_q > delta_q^{1/2} lambda_q"),
            cur.ln_delta_half_lambda,
            cur.ln_ring_mu,
            true,
            false,
        );
        // Auxiliary-scale controls.
        push(
            &tag("aux: delta_{q+1}^{1/2} ring_lambda_q lambda_{q+1}^{2 gamma_S} <= kappa_{q+1} lambda_{q+1}^2"),
            -beta * next.ln_lambda + cur.ln_ring_lambda + 2.0 * abs.gamma_s * next.ln_lambda,
            next.ln_kappa_lambda2,
            true,
            true,
        );
        let gs = abs.gamma_s * next.ln_lambda;
        let dl_ring = -beta * next.ln_lambda + cur.ln_ring_lambda;
        push(
            &tag("aux: mu_{q+1} / (delta_{q+1}^{1/2} ring_lambda_q) <= lambda_{q+1}^{gamma_S}"),
            next.ln_mu - dl_ring,
            gs,
            true,
            true,
        );
        push(
            &tag("aux: eps_q kappa_{q+1} lambda_{q+1}^2 / (delta_{q+1}^{1/2} ring_lambda_q) <= lambda_{q+1}^{gamma_S}"),
            cur.ln_eps + next.ln_kappa_lambda2 - dl_ring,
            gs,
            true,
            true,
        );
        push(
            &tag("aux: ring_mu_q / (eps_q delta_{q+1}^{1/2} ring_lambda_q) <= lambda_{q+1}^{gamma_S}"),
            cur.ln_ring_mu - cur.ln_eps - dl_ring,
            gs,
            true,
            true,
        );
        push(
            &tag("aux: kappa_{q+1} lambda_{q+1}^2 / (eps_q delta_{q+1}^{1/2} lambda_{q+1}) <= lambda_{q+1}^{gamma_S}"),
            next.ln_kappa_lambda2 - cur.ln_eps - (-beta + 1.0) * next.ln_lambda,
            gs,
            true,
            true,
        );
        push(&tag("aux: eps_q < 1"), cur.ln_eps, 0.0, true, false);
    }

    let overall = entries.iter().all(|e| e.satisfied);
    ConstraintReport {
        mode: abs.mode,
        entries,
        overall,
    }
}
