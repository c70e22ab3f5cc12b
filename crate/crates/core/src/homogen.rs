//! First-order homogenization of one oscillatory shear generation: the eddy
//! diffusivity, the explicit spatial and temporal correctors, homogenized
//! solves, and the two-scale / dissipation comparison experiments.
//!
//! Conventions (physical-space coefficients, the renormalized-scale factors
//! cancel): with a one-step cell of dials (lambda, mu, delta^{1/2}) over a
//! base field u_q and diffusivity kappa,
//!   kappa_bar = kappa (1 + delta/(kappa^2 lambda^2)),
//!   rho_hat_1 = (delta^{1/2}/(kappa lambda)) [ eta1(mu t) chi1(lambda Phi_1) d2 rho_bar
//!                                            - eta2(mu t) chi2(lambda Phi_2) d1 rho_bar ],
//!   rho_check_1 = (delta/(2 mu kappa lambda)) [ P2(mu t) d11 rho_bar + P1(mu t) d22 rho_bar ],
//! where chi_i(s) = cos(2 pi s)/(2 pi), P_i is the zero-mean antiderivative
//! of eta_i^2 - <eta_i^2>, and Phi is the glued exact flow of u_q.
//! The first-order approximation is rho_bar + (rho_hat_1 + rho_check_1)/lambda.

use crate::cutoffs::{ChiAxis, CutoffFamily};
use crate::error::{CoreError, Result};
use crate::fields::{Branch, LevelDials, VelocityHierarchy};
use crate::grid::{GridField2D, SpectralGrid};
use crate::solver::{HierarchyVelocity, MultiStepper, SolveTrace, SolverConfig};
use crate::util::{cumulative_periodic_integral, CubicTable};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// kappa_bar = kappa (1 + delta/(kappa^2 lambda^2)).
pub fn eddy_diffusivity(kappa: f64, delta_next: f64, lambda_next: f64) -> f64 {
    kappa * (1.0 + delta_next / (kappa * kappa * lambda_next * lambda_next))
}

/// The explicit first-order correctors of one cell generation.
pub struct CorrectorSet {
    pub dials: LevelDials,
    pub kappa: f64,
    pub kappa_bar: f64,
    /// delta^{1/2}/(kappa lambda): coefficient of the spatial corrector.
    pub h_spatial: f64,
    /// delta/(2 mu kappa lambda): coefficient of the temporal corrector.
    pub h_temporal: f64,
    /// Quadrature of <Pi_i d_xi chi_i> (must be -1/2).
    pub pairing_1: f64,
    pub pairing_2: f64,
    /// Quadrature of <eta_i^2> <Pi_i' chi_i> (the kappa_bar channel weights,
    /// must be exactly 1 by the cutoff normalization).
    pub channel_weight_1: f64,
    pub channel_weight_2: f64,
    /// Zero-mean antiderivatives P_i of eta_i^2 - <eta_i^2>.
    p1: CubicTable,
    p2: CubicTable,
    pub p1_mean: f64,
    pub p2_mean: f64,
}

impl CorrectorSet {
    /// Spatial cell profile: zero-mean antiderivative convention,
    /// chi(s) = cos(2 pi s)/(2 pi).
    #[inline]
    pub fn chi_hat(s: f64) -> f64 {
        (TWO_PI * s).cos() / TWO_PI
    }

    /// Temporal profiles eta_check^{(22,1)} = -P1, eta_check^{(11,1)} = -P2.
    pub fn eta_check_22(&self, tau: f64) -> f64 {
        -self.p1.eval(tau.rem_euclid(1.0))
    }

    pub fn eta_check_11(&self, tau: f64) -> f64 {
        -self.p2.eval(tau.rem_euclid(1.0))
    }

    fn p1_at(&self, tau: f64) -> f64 {
        self.p1.eval(tau.rem_euclid(1.0))
    }

    fn p2_at(&self, tau: f64) -> f64 {
        self.p2.eval(tau.rem_euclid(1.0))
    }
}

/// Build the corrector set for a cell with the given dials over diffusivity
/// kappa. Spatial profiles are analytic antiderivatives; temporal profiles
/// come from the spectral antiderivative of the mean-free squared cutoffs.
pub fn first_order_correctors(
    family: &CutoffFamily,
    dials: LevelDials,
    kappa: f64,
) -> CorrectorSet {
    let delta = dials.delta_half * dials.delta_half;
    let kappa_bar = eddy_diffusivity(kappa, delta, dials.lambda);
    let m = 8192;
    let sq = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        (0..m)
            .map(|k| {
                let v = f(k as f64 / m as f64);
                v * v
            })
            .collect()
    };
    let e1sq = sq(&|t| family.eta1_at(t));
    let e2sq = sq(&|t| family.eta2_at(t));
    let (m1, p1v) = cumulative_periodic_integral(&e1sq, 1.0);
    let (m2, p2v) = cumulative_periodic_integral(&e2sq, 1.0);
    // remove the mean of the periodic part so <P_i> = 0
    let center = |v: Vec<f64>| -> Vec<f64> {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.into_iter().map(|x| x - mean).collect()
    };
    let p1 = CubicTable::new(0.0, 1.0, center(p1v), true);
    let p2 = CubicTable::new(0.0, 1.0, center(p2v), true);

    // quadrature pairings over the cell coordinate
    let kq = 4096;
    let mut pair = 0.0;
    let mut chan = 0.0;
    for k in 0..kq {
        let s = k as f64 / kq as f64;
        let pi_i = (TWO_PI * s).sin();
        let dchi = -(TWO_PI * s).sin();
        let pi_prime = TWO_PI * (TWO_PI * s).cos();
        pair += pi_i * dchi;
        chan += pi_prime * CorrectorSet::chi_hat(s);
    }
    pair /= kq as f64;
    chan /= kq as f64;

    CorrectorSet {
        dials,
        kappa,
        kappa_bar,
        h_spatial: dials.delta_half / (kappa * dials.lambda),
        h_temporal: delta / (2.0 * dials.mu * kappa * dials.lambda),
        pairing_1: pair,
        pairing_2: pair,
        channel_weight_1: m1 * chan,
        channel_weight_2: m2 * chan,
        p1,
        p2,
        p1_mean: 0.0,
        p2_mean: 0.0,
    }
}

/// The cell profiles paired with their time cutoffs satisfy the shear
/// condition: chi^{(2,1)} depends on xi_1 only and rides eta_1.
pub fn corrector_shear_pairs_ok(family: &CutoffFamily) -> bool {
    family.check_shear_pair(ChiAxis::Xi1Only, &family.eta1)
        && family.check_shear_pair(ChiAxis::Xi2Only, &family.eta2)
}

/// Homogenized solve: drift u_q with diffusivity kappa_bar.
pub fn homogenized_solve(
    sg: &SpectralGrid,
    rho_in: &GridField2D,
    hier: &VelocityHierarchy,
    q: u32,
    kappa_bar: f64,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<(GridField2D, SolveTrace)> {
    let vel = HierarchyVelocity {
        hier,
        q,
        branch: Branch::U,
    };
    crate::solver::solve(sg, rho_in, &vel, kappa_bar, t_end, cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoScaleRow {
    pub lambda: f64,
    pub mu: f64,
    pub delta_half: f64,
    pub kappa: f64,
    pub kappa_bar: f64,
    /// max over sampled t of |rho - rho_bar|_{L^2}
    pub e0: f64,
    /// max over sampled t of |rho - (rho_bar + corrector)|_{L^2}
    pub e1: f64,
    pub d_full: f64,
    pub d_hom: f64,
    pub gap_rel: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<TwoScaleRow>,
    /// Fitted order p in e ~ lambda^{-p}.
    pub order_e0: f64,
    pub order_e1: f64,
    /// Smallest lambda from which e1 < e0 holds onward, if any.
    pub e1_below_e0_from: Option<f64>,
}

impl ComparisonReport {
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(
            w,
            "lambda,mu,delta_half,kappa,kappa_bar,e0,e1,d_full,d_hom,gap_rel,steps"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:.8e},{:.8e},{:.8e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{}",
                r.lambda,
                r.mu,
                r.delta_half,
                r.kappa,
                r.kappa_bar,
                r.e0,
                r.e1,
                r.d_full,
                r.d_hom,
                r.gap_rel,
                r.steps
            )?;
        }
        Ok(())
    }
}

/// Knobs of the one-step two-scale experiment. The cell dials are free:
/// mu = lambda^mu_exponent and delta^{1/2} = lambda^{-beta} by default, with
/// kappa balanced at delta^{1/2}/lambda unless overridden.
#[derive(Debug, Clone)]
pub struct TwoScaleConfig {
    pub solver: SolverConfig,
    pub t_end: f64,
    pub compare_stride: u64,
    pub beta: f64,
    pub mu_exponent: f64,
    pub kappa_override: Option<f64>,
}

impl TwoScaleConfig {
    pub fn new(n: usize, t_end: f64) -> Self {
        TwoScaleConfig {
            solver: SolverConfig::new(n),
            t_end,
            compare_stride: 8,
            beta: 0.3,
            mu_exponent: 0.557,
            kappa_override: None,
        }
    }
}

/// Run full vs homogenized solves across the lambda list and assemble the
/// comparison report with fitted convergence orders.
pub fn two_scale_compare(
    sg: &SpectralGrid,
    base: &VelocityHierarchy,
    q: u32,
    rho_in: &GridField2D,
    lambdas: &[f64],
    cfg: &TwoScaleConfig,
) -> Result<ComparisonReport> {
    let mut rows = Vec::new();
    for &lambda in lambdas {
        if (sg.n as f64) < 8.0 * lambda {
            return Err(CoreError::Resolution {
                what: format!("two-scale cell lambda={lambda}"),
                needed: (8.0 * lambda) as usize,
                have: sg.n,
            });
        }
        let delta_half = lambda.powf(-cfg.beta);
        let dials = LevelDials {
            lambda,
            mu: lambda.powf(cfg.mu_exponent),
            delta_half,
        };
        let kappa = cfg.kappa_override.unwrap_or(delta_half / lambda);
        rows.push(two_scale_single(sg, base, q, rho_in, dials, kappa, cfg)?);
    }
    // log-log fits of e0, e1 against lambda
    let fit = |sel: &dyn Fn(&TwoScaleRow) -> f64| -> f64 {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| sel(r) > 0.0)
            .map(|r| (r.lambda.ln(), sel(r).ln()))
            .collect();
        if pts.len() < 2 {
            return f64::NAN;
        }
        let n = pts.len() as f64;
        let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let num: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - xm) * (p.0 - xm)).sum();
        -num / den
    };
    let order_e0 = fit(&|r| r.e0);
    let order_e1 = fit(&|r| r.e1);
    let mut from = None;
    for r in rows.iter().rev() {
        if r.e1 < r.e0 {
            from = Some(r.lambda);
        } else {
            break;
        }
    }
    Ok(ComparisonReport {
        rows,
        order_e0,
        order_e1,
        e1_below_e0_from: from,
    })
}

fn two_scale_single(
    sg: &SpectralGrid,
    base: &VelocityHierarchy,
    q: u32,
    rho_in: &GridField2D,
    dials: LevelDials,
    kappa: f64,
    cfg: &TwoScaleConfig,
) -> Result<TwoScaleRow> {
    let correct = first_order_correctors(&base.family, dials, kappa);
    let mut ext = base.with_extra_level(dials);
    ext.min_ppw = base.min_ppw;
    let full_vel = HierarchyVelocity {
        hier: &ext,
        q: q + 1,
        branch: Branch::U,
    };
    let hom_vel = HierarchyVelocity {
        hier: base,
        q,
        branch: Branch::U,
    };
    let mut full = MultiStepper::new(sg, &full_vel, cfg.solver.clone(), rho_in, &[kappa])?;
    let mut hom = MultiStepper::new(
        sg,
        &hom_vel,
        cfg.solver.clone(),
        rho_in,
        &[correct.kappa_bar],
    )?;
    let mut e0 = 0.0_f64;
    let mut e1 = 0.0_f64;
    let mut sample = |full: &MultiStepper, hom: &MultiStepper, t: f64| -> Result<()> {
        let rho = sg.to_field(&full.states[0].spec);
        let bar_spec = &hom.states[0].spec;
        let rho_bar = sg.to_field(bar_spec);
        let (g1, g2) = sg.grad_fields(bar_spec);
        let dxx = sg.dx(&sg.dx(bar_spec));
        let dyy = sg.dy(&sg.dy(bar_spec));
        let (h11, h22) = sg.to_field_pair(&dxx, &dyy);
        // glued exact flow of the base field for the corrector composition
        let flow = base.glued_exact_flow_of(sg, q, &ext, t)?;
        let tau = dials.mu * t;
        let eta1 = base.family.eta1_at(tau);
        let eta2 = base.family.eta2_at(tau);
        let p1 = correct.p1_at(tau);
        let p2 = correct.p2_at(tau);
        let hs = correct.h_spatial / dials.lambda;
        let htmp = correct.kappa * 0.0
            + (dials.delta_half * dials.delta_half)
                / (2.0 * dials.mu * kappa * dials.lambda * dials.lambda);
        let n = sg.n;
        let lam = dials.lambda;
        let (de0, de1): (f64, f64) = (0..n)
            .into_par_iter()
            .map(|i| {
                let y = i as f64 / n as f64;
                let mut s0 = 0.0;
                let mut s1 = 0.0;
                for j in 0..n {
                    let x = j as f64 / n as f64;
                    let idx = i * n + j;
                    let d0 = rho.data[idx] - rho_bar.data[idx];
                    let px = x + flow.disp_x.data[idx];
                    let py = y + flow.disp_y.data[idx];
                    let hat = hs
                        * (eta1 * CorrectorSet::chi_hat(lam * px) * g2.data[idx]
                            - eta2 * CorrectorSet::chi_hat(lam * py) * g1.data[idx]);
                    let chk = htmp * (p2 * h11.data[idx] + p1 * h22.data[idx]);
                    let d1 = d0 - hat - chk;
                    s0 += d0 * d0;
                    s1 += d1 * d1;
                }
                (s0, s1)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let scale = 1.0 / (n * n) as f64;
        e0 = e0.max((de0 * scale).sqrt());
        e1 = e1.max((de1 * scale).sqrt());
        Ok(())
    };
    sample(&full, &hom, 0.0)?;
    let mut k = 0u64;
    while full.t < cfg.t_end - 1e-15 {
        let dt = full.propose_dt(cfg.t_end).min(hom.propose_dt(cfg.t_end));
        if dt <= 0.0 {
            break;
        }
        full.step(dt)?;
        hom.step(dt)?;
        k += 1;
        if k % cfg.compare_stride.max(1) == 0 {
            sample(&full, &hom, full.t)?;
        }
    }
    sample(&full, &hom, full.t)?;
    let d_full = full.states[0].trace.dissipation();
    let d_hom = hom.states[0].trace.dissipation();
    Ok(TwoScaleRow {
        lambda: dials.lambda,
        mu: dials.mu,
        delta_half: dials.delta_half,
        kappa,
        kappa_bar: correct.kappa_bar,
        e0,
        e1,
        d_full,
        d_hom,
        gap_rel: if d_full != 0.0 {
            ((d_full - d_hom) / d_full).abs()
        } else {
            0.0
        },
        steps: k,
    })
}

/// Relative dissipation change between solves with u_{q_low} and u_{q_high}
/// at the same diffusivity (the dissipative-range stability probe).
pub fn stability_compare(
    sg: &SpectralGrid,
    hier: &VelocityHierarchy,
    q_low: u32,
    q_high: u32,
    kappa: f64,
    rho_in: &GridField2D,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    if q_low == q_high {
        return Ok(0.0);
    }
    let lo = HierarchyVelocity {
        hier,
        q: q_low,
        branch: Branch::U,
    };
    let hi = HierarchyVelocity {
        hier,
        q: q_high,
        branch: Branch::U,
    };
    let (_, tr_lo) = crate::solver::solve(sg, rho_in, &lo, kappa, t_end, cfg)?;
    let (_, tr_hi) = crate::solver::solve(sg, rho_in, &hi, kappa, t_end, cfg)?;
    let d_lo = tr_lo.dissipation();
    let d_hi = tr_hi.dissipation();
    Ok(((d_hi - d_lo) / d_lo).abs())
}

impl VelocityHierarchy {
    /// Glued exact flow of level q; shares the extended hierarchy's window
    /// structure when the extra level exists (the flow itself only depends
    /// on levels <= q).
    pub fn glued_exact_flow_of(
        &self,
        sg: &SpectralGrid,
        q: u32,
        ext: &VelocityHierarchy,
        t: f64,
    ) -> Result<crate::fields::FlowMap> {
        if q == 0 {
            return Ok(crate::fields::FlowMap::identity(sg.n, t, None));
        }
        let _ = self;
        ext.glued_exact_flow(sg.n, q, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoffs::build_cutoffs;
    use crate::solver::energy_identity_residual;

    #[test]
    fn eddy_diffusivity_examples() {
        // kappa=0.01, delta=1e-4, lambda=10: enhancement delta/(kappa^2 lambda^2) = 1e-2
        let k = eddy_diffusivity(0.01, 1e-4, 10.0);
        assert!((k - 0.0101).abs() < 1e-15);
        // balance kappa = delta^{1/2}/lambda doubles the diffusivity
        let kappa = 0.25_f64 / 8.0;
        let k2 = eddy_diffusivity(kappa, 0.25 * 0.25, 8.0);
        assert!((k2 - 2.0 * kappa).abs() < 1e-15);
        // delta -> 0 leaves kappa
        assert_eq!(eddy_diffusivity(0.3, 0.0, 5.0), 0.3);
    }

    fn test_correctors() -> CorrectorSet {
        let family = build_cutoffs(1024, 1.0 / 64.0).unwrap();
        let dials = LevelDials {
            lambda: 16.0,
            mu: 4.0,
            delta_half: 16.0_f64.powf(-0.3),
        };
        let kappa = dials.delta_half / dials.lambda;
        first_order_correctors(&family, dials, kappa)
    }

    #[test]
    fn corrector_profiles_and_pairings() {
        let c = test_correctors();
        // chi_hat(0) = 1/(2 pi)
        assert!((CorrectorSet::chi_hat(0.0) - 1.0 / TWO_PI).abs() < 1e-15);
        assert!((CorrectorSet::chi_hat(0.0) - 0.159_154_9).abs() < 1e-7);
        // <Pi d chi> = -1/2
        assert!((c.pairing_1 + 0.5).abs() < 1e-12);
        // channel weights <eta^2><Pi' chi> reproduce the kappa_bar
        // enhancement coefficient exactly (the normalization cancellation)
        assert!((c.channel_weight_1 - 1.0).abs() < 1e-8);
        assert!((c.channel_weight_2 - 1.0).abs() < 1e-8);
        // temporal profiles are mean-zero
        let m = 2048;
        let mean1: f64 = (0..m).map(|k| c.eta_check_22(k as f64 / m as f64)).sum::<f64>() / m as f64;
        let mean2: f64 = (0..m).map(|k| c.eta_check_11(k as f64 / m as f64)).sum::<f64>() / m as f64;
        assert!(mean1.abs() < 1e-12);
        assert!(mean2.abs() < 1e-12);
        // kappa_bar closed form, balanced case
        assert!((c.kappa_bar - 2.0 * c.kappa).abs() < 1e-15);
    }

    #[test]
    fn eta_check_is_antiderivative_of_mean_free_square() {
        let family = build_cutoffs(1024, 1.0 / 64.0).unwrap();
        let c = test_correctors();
        let mean_sq = family.eta_sq_mean(1);
        for &tau in &[0.14, 0.2, 0.26, 0.31, 0.5] {
            let h = 1e-5;
            let fd = (c.eta_check_22(tau + h) - c.eta_check_22(tau - h)) / (2.0 * h);
            let expect = -(family.eta1_at(tau).powi(2) - mean_sq);
            assert!((fd - expect).abs() < 1e-5, "tau={tau}: {fd} vs {expect}");
        }
    }

    #[test]
    fn corrector_pairs_satisfy_shear_condition() {
        let family = build_cutoffs(1024, 1.0 / 64.0).unwrap();
        assert!(corrector_shear_pairs_ok(&family));
    }

    #[test]
    fn homogenized_solve_is_heat_at_q0() {
        let family = build_cutoffs(1024, 1.0 / 64.0).unwrap();
        let hier = VelocityHierarchy::from_levels(family, vec![]);
        let sg = SpectralGrid::new(64).unwrap();
        let rho = crate::datum::sine_datum(64);
        let kb = 0.02;
        let mut cfg = SolverConfig::new(64);
        cfg.dt_cap = 2e-4; // trapezoid error on the trace scales with dt^2
        let (out, trace) = homogenized_solve(&sg, &rho, &hier, 0, kb, 0.5, &cfg).unwrap();
        let factor = (-4.0 * PI * PI * kb * 0.5).exp();
        let expect = GridField2D::from_fn(64, |x, _| factor * (TWO_PI * x).sin());
        assert!(out.max_abs_diff(&expect) < 1e-10);
        assert!(energy_identity_residual(&trace) < 1e-8);
    }

    #[test]
    fn stability_compare_same_level_is_zero() {
        let family = build_cutoffs(1024, 1.0 / 64.0).unwrap();
        let hier = VelocityHierarchy::from_levels(family, vec![]);
        let sg = SpectralGrid::new(32).unwrap();
        let rho = crate::datum::sine_datum(32);
        let cfg = SolverConfig::new(32);
        let d = stability_compare(&sg, &hier, 0, 0, 0.01, &rho, 0.1, &cfg).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn two_scale_delta_zero_reduces_to_plain_solve() {
        // with delta = 0 the cell velocity vanishes and kappa_bar = kappa,
        // so e0 collapses to solver-level noise
        let family = build_cutoffs(1024, 1.0 / 64.0).unwrap();
        let base = VelocityHierarchy::from_levels(family, vec![]);
        let sg = SpectralGrid::new(64).unwrap();
        let rho = crate::datum::sine_datum(64);
        let mut cfg = TwoScaleConfig::new(64, 0.05);
        cfg.kappa_override = Some(0.02);
        cfg.solver.dt_cap = 2e-4;
        let dials = LevelDials {
            lambda: 4.0,
            mu: 2.0,
            delta_half: 0.0,
        };
        let row = super::two_scale_single(&sg, &base, 0, &rho, dials, 0.02, &cfg).unwrap();
        assert!(row.e0 < 1e-10, "e0 = {}", row.e0);
        assert!(row.gap_rel < 1e-8);
    }
}
