//! Dealiased pseudo-spectral solver for the advection-diffusion equation on
//! the unit torus, with exact integrating-factor diffusion inside a SSP-RK3
//! stepper and per-step energy/dissipation tracking.
//!
//! The scalar state lives in the two-thirds spectral band; velocities are
//! sampled from their stream functions and curl'd spectrally (exactly
//! divergence-free), so the advection term is L2-neutral to rounding and the
//! energy-identity residual is pure time-discretization error.
//!
//! Several scalars with different diffusivities may advance in lockstep
//! against one shared velocity (`MultiStepper` with multiple states), which
//! is how the dissipation sweeps share the expensive flow-map sampling.

use crate::error::{CoreError, Result};
use crate::fields::{Branch, VelocityHierarchy};
use crate::grid::{GridField2D, SpectralGrid, Spectrum2D};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Time-stepping configuration. `dt` each step is
/// `min(cfl*h/speed_bound, 1/(16 mu_active), dt_cap)`, quantized on a
/// geometric ladder so integrating-factor tables are reused.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub n: usize,
    pub cfl: f64,
    pub dt_cap: f64,
    /// Observer callback stride in steps (0 disables intermediate calls).
    pub snapshot_stride: u64,
}

impl SolverConfig {
    pub fn new(n: usize) -> Self {
        SolverConfig {
            n,
            cfl: 0.4,
            dt_cap: 5e-4,
            snapshot_stride: 0,
        }
    }
}

/// Energy bookkeeping per step: `|rho|_2^2`, instantaneous `kappa |grad rho|^2`
/// and its running trapezoid integral.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveTrace {
    pub t: Vec<f64>,
    pub l2_sq: Vec<f64>,
    pub inst_diss: Vec<f64>,
    pub cum_diss: Vec<f64>,
}

impl SolveTrace {
    fn push(&mut self, t: f64, l2_sq: f64, inst: f64) {
        let cum = match self.t.last() {
            Some(&tp) => {
                self.cum_diss.last().unwrap() + 0.5 * (t - tp) * (self.inst_diss.last().unwrap() + inst)
            }
            None => 0.0,
        };
        self.t.push(t);
        self.l2_sq.push(l2_sq);
        self.inst_diss.push(inst);
        self.cum_diss.push(cum);
    }

    /// Cumulative dissipation at the final recorded time.
    pub fn dissipation(&self) -> f64 {
        self.cum_diss.last().copied().unwrap_or(0.0)
    }

    pub fn initial_l2_sq(&self) -> f64 {
        self.l2_sq.first().copied().unwrap_or(0.0)
    }

    pub fn final_l2_sq(&self) -> f64 {
        self.l2_sq.last().copied().unwrap_or(0.0)
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "t,l2sq,inst_diss,cum_diss")?;
        for i in 0..self.t.len() {
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e},{:.12e}",
                self.t[i], self.l2_sq[i], self.inst_diss[i], self.cum_diss[i]
            )?;
        }
        Ok(())
    }
}

/// Relative defect of (1/2)|rho(T)|^2 + D(T) = (1/2)|rho_in|^2.
pub fn energy_identity_residual(trace: &SolveTrace) -> f64 {
    let e0 = 0.5 * trace.initial_l2_sq();
    let et = 0.5 * trace.final_l2_sq();
    ((et + trace.dissipation() - e0) / e0).abs()
}

/// A drift field the solver can sample at arbitrary times.
pub trait VelocitySource: Sync {
    /// Physical velocity on the grid, dealiased and exactly divergence-free.
    fn velocity(&self, sg: &SpectralGrid, t: f64) -> Result<(GridField2D, GridField2D)>;
    /// Upper bound for sup |u| over [t0, t1].
    fn speed_bound(&self, t0: f64, t1: f64) -> f64;
    /// Fastest active cutoff frequency (0 for steady fields).
    fn mu_active(&self) -> f64;
    fn is_zero(&self) -> bool {
        false
    }
}

pub struct ZeroVelocity;

impl VelocitySource for ZeroVelocity {
    fn velocity(&self, sg: &SpectralGrid, _t: f64) -> Result<(GridField2D, GridField2D)> {
        Ok((GridField2D::zeros(sg.n), GridField2D::zeros(sg.n)))
    }
    fn speed_bound(&self, _t0: f64, _t1: f64) -> f64 {
        0.0
    }
    fn mu_active(&self) -> f64 {
        0.0
    }
    fn is_zero(&self) -> bool {
        true
    }
}

pub struct UniformVelocity {
    pub ux: f64,
    pub uy: f64,
}

impl VelocitySource for UniformVelocity {
    fn velocity(&self, sg: &SpectralGrid, _t: f64) -> Result<(GridField2D, GridField2D)> {
        let mut u = GridField2D::zeros(sg.n);
        let mut v = GridField2D::zeros(sg.n);
        u.data.iter_mut().for_each(|x| *x = self.ux);
        v.data.iter_mut().for_each(|x| *x = self.uy);
        Ok((u, v))
    }
    fn speed_bound(&self, _t0: f64, _t1: f64) -> f64 {
        (self.ux * self.ux + self.uy * self.uy).sqrt()
    }
    fn mu_active(&self) -> f64 {
        0.0
    }
}

/// u_q (or v_q) of a velocity hierarchy.
pub struct HierarchyVelocity<'a> {
    pub hier: &'a VelocityHierarchy,
    pub q: u32,
    pub branch: Branch,
}

impl VelocitySource for HierarchyVelocity<'_> {
    fn velocity(&self, sg: &SpectralGrid, t: f64) -> Result<(GridField2D, GridField2D)> {
        let psi = self.hier.stream_sum_field(sg, self.q, self.branch, t)?;
        let mut spec = sg.to_spectrum(&psi);
        sg.dealias(&mut spec);
        Ok(sg.grad_perp_fields(&spec))
    }
    fn speed_bound(&self, t0: f64, t1: f64) -> f64 {
        self.hier.speed_bound(self.q, t0, t1)
    }
    fn mu_active(&self) -> f64 {
        (1..=self.q.min(self.hier.level_count()))
            .map(|j| self.hier.levels[(j - 1) as usize].mu)
            .fold(0.0, f64::max)
    }
    fn is_zero(&self) -> bool {
        self.q == 0
    }
}

/// Integrating-factor tables for one (kappa, dt).
struct ExpTables {
    dt: f64,
    full: Vec<f64>,
    half: Vec<f64>,
    half_inv: Vec<f64>,
}

fn exp_tables(sg: &SpectralGrid, kappa: f64, dt: f64) -> ExpTables {
    let n = sg.n;
    let mut full = vec![0.0; n * n];
    let mut half = vec![0.0; n * n];
    let mut half_inv = vec![0.0; n * n];
    full.par_chunks_mut(n)
        .zip(half.par_chunks_mut(n).zip(half_inv.par_chunks_mut(n)))
        .enumerate()
        .for_each(|(jx, (f, (h, hi)))| {
            let kx = sg.freqs[jx];
            for iy in 0..n {
                let ky = sg.freqs[iy];
                let a = kappa * 4.0 * PI * PI * (kx * kx + ky * ky);
                f[iy] = (-a * dt).exp();
                h[iy] = (-a * dt * 0.5).exp();
                hi[iy] = (a * dt * 0.5).exp();
            }
        });
    ExpTables {
        dt,
        full,
        half,
        half_inv,
    }
}

/// One scalar advancing against the shared velocity.
pub struct ScalarState {
    pub kappa: f64,
    pub spec: Spectrum2D,
    pub trace: SolveTrace,
    tables: Option<ExpTables>,
}

pub type Observer<'o> = dyn FnMut(usize, f64, &Spectrum2D) + 'o;

pub struct MultiStepper<'a> {
    pub sg: &'a SpectralGrid,
    vel: &'a dyn VelocitySource,
    pub cfg: SolverConfig,
    pub t: f64,
    pub states: Vec<ScalarState>,
    pub steps_taken: u64,
}

impl<'a> MultiStepper<'a> {
    pub fn new(
        sg: &'a SpectralGrid,
        vel: &'a dyn VelocitySource,
        cfg: SolverConfig,
        rho_in: &GridField2D,
        kappas: &[f64],
    ) -> Result<Self> {
        if cfg.n != sg.n {
            return Err(CoreError::BadGrid(cfg.n));
        }
        let mut spec0 = sg.to_spectrum(rho_in);
        sg.dealias(&mut spec0);
        let states = kappas
            .iter()
            .map(|&kappa| {
                let spec = spec0.clone();
                let mut trace = SolveTrace::default();
                trace.push(0.0, spec.l2_norm_sq(), kappa * sg.grad_norm_sq(&spec));
                ScalarState {
                    kappa,
                    spec,
                    trace,
                    tables: None,
                }
            })
            .collect();
        Ok(MultiStepper {
            sg,
            vel,
            cfg,
            t: 0.0,
            states,
            steps_taken: 0,
        })
    }

    /// Stability-safe step size from the config caps and the velocity's
    /// forward-looking speed bound, quantized on a geometric ladder.
    pub fn propose_dt(&self, t_end: f64) -> f64 {
        let mu = self.vel.mu_active();
        let mut ceiling = self.cfg.dt_cap;
        if mu > 0.0 {
            ceiling = ceiling.min(1.0 / (16.0 * mu));
        }
        let mut dt = ceiling;
        let bound = self.vel.speed_bound(self.t, self.t + ceiling);
        if bound > 0.0 {
            dt = dt.min(self.cfg.cfl * self.sg.h() / bound);
        }
        const LADDER: f64 = 1.189_207_115_002_721; // 2^{1/4}
        if dt < ceiling {
            let k = ((ceiling / dt).ln() / LADDER.ln()).ceil().max(0.0);
            dt = ceiling / LADDER.powf(k);
        }
        dt.min((t_end - self.t).max(0.0))
    }

    /// Advance every state by one IF-SSP-RK3 step of size dt.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let sg = self.sg;
        let t = self.t;
        // refresh integrating-factor tables on dt change
        for st in &mut self.states {
            let stale = match &st.tables {
                Some(tb) => tb.dt != dt,
                None => true,
            };
            if stale {
                st.tables = Some(exp_tables(sg, st.kappa, dt));
            }
        }

        // stage velocities
        let (u0, v0) = self.vel.velocity(sg, t)?;
        let (u1, v1) = self.vel.velocity(sg, t + dt)?;
        let (u2, v2) = self.vel.velocity(sg, t + 0.5 * dt)?;

        for st in &mut self.states {
            let tb = st.tables.as_ref().unwrap();
            // stage 1: rho1 = Ef (rho + dt N(rho, t))
            let n0 = tendency(sg, &st.spec, &u0, &v0);
            let mut rho1 = Spectrum2D::zeros(sg.n);
            combine2(&mut rho1, &st.spec, 1.0, &n0, dt);
            apply_table(&mut rho1, &tb.full);
            // stage 2: rho2 = 3/4 Eh rho + 1/4 Eh^{-1} (rho1 + dt N(rho1, t+dt))
            let n1 = tendency(sg, &rho1, &u1, &v1);
            let mut rho2 = Spectrum2D::zeros(sg.n);
            combine2(&mut rho2, &rho1, 1.0, &n1, dt);
            apply_table(&mut rho2, &tb.half_inv);
            axpy_table(&mut rho2, 0.25, &st.spec, 0.75, &tb.half);
            // stage 3: rho_new = 1/3 Ef rho + 2/3 Eh (rho2 + dt N(rho2, t+dt/2))
            let n2 = tendency(sg, &rho2, &u2, &v2);
            let mut rho_new = Spectrum2D::zeros(sg.n);
            combine2(&mut rho_new, &rho2, 1.0, &n2, dt);
            apply_table(&mut rho_new, &tb.half);
            rho_new.data.par_chunks_mut(4096).for_each(|c| {
                for z in c {
                    *z *= 2.0 / 3.0;
                }
            });
            axpy_table(&mut rho_new, 1.0, &st.spec, 1.0 / 3.0, &tb.full);
            st.spec = rho_new;
            let l2 = st.spec.l2_norm_sq();
            if !l2.is_finite() {
                return Err(CoreError::BlowUp {
                    t: t + dt,
                    step: self.steps_taken,
                });
            }
            st.trace
                .push(t + dt, l2, st.kappa * sg.grad_norm_sq(&st.spec));
        }
        self.t = t + dt;
        self.steps_taken += 1;
        Ok(())
    }

    /// Run to t_end with adaptive steps, invoking the observer on the
    /// configured stride and at both endpoints.
    pub fn run(&mut self, t_end: f64, mut observer: Option<&mut Observer>) -> Result<()> {
        if let Some(obs) = observer.as_deref_mut() {
            for (i, st) in self.states.iter().enumerate() {
                obs(i, self.t, &st.spec);
            }
        }
        while self.t < t_end - 1e-15 {
            let dt = self.propose_dt(t_end);
            if dt <= 0.0 {
                break;
            }
            self.step(dt)?;
            if let Some(obs) = observer.as_deref_mut() {
                let stride = self.cfg.snapshot_stride;
                if stride > 0 && self.steps_taken % stride == 0 && self.t < t_end - 1e-15 {
                    for (i, st) in self.states.iter().enumerate() {
                        obs(i, self.t, &st.spec);
                    }
                }
            }
        }
        if let Some(obs) = observer.as_deref_mut() {
            for (i, st) in self.states.iter().enumerate() {
                obs(i, self.t, &st.spec);
            }
        }
        Ok(())
    }

    pub fn into_results(self) -> Vec<(GridField2D, SolveTrace)> {
        let sg = self.sg;
        self.states
            .into_iter()
            .map(|st| (sg.to_field(&st.spec), st.trace))
            .collect()
    }
}

/// -dealias(FFT(u . grad rho)) with the zero mode pinned to zero.
fn tendency(sg: &SpectralGrid, rho: &Spectrum2D, u: &GridField2D, v: &GridField2D) -> Spectrum2D {
    let (gx, gy) = sg.grad_fields(rho);
    let n = sg.n;
    let mut prod = GridField2D::zeros(n);
    prod.data
        .par_chunks_mut(4096)
        .enumerate()
        .for_each(|(ci, chunk)| {
            let base = ci * 4096;
            for (k, w) in chunk.iter_mut().enumerate() {
                let i = base + k;
                *w = -(u.data[i] * gx.data[i] + v.data[i] * gy.data[i]);
            }
        });
    let mut out = sg.to_spectrum(&prod);
    sg.dealias(&mut out);
    out.data[0] = Complex64::new(0.0, 0.0);
    out
}

/// dst = a * sa + b * sb (elementwise).
fn combine2(dst: &mut Spectrum2D, sa: &Spectrum2D, a: f64, sb: &Spectrum2D, b: f64) {
    dst.data
        .par_chunks_mut(4096)
        .zip(sa.data.par_chunks(4096).zip(sb.data.par_chunks(4096)))
        .for_each(|(d, (x, y))| {
            for ((dz, xz), yz) in d.iter_mut().zip(x.iter()).zip(y.iter()) {
                *dz = a * xz + b * yz;
            }
        });
}

/// dst *= table (elementwise).
fn apply_table(dst: &mut Spectrum2D, table: &[f64]) {
    dst.data
        .par_chunks_mut(4096)
        .zip(table.par_chunks(4096))
        .for_each(|(d, t)| {
            for (z, f) in d.iter_mut().zip(t.iter()) {
                *z *= *f;
            }
        });
}

/// dst = scale_dst * dst + scale_src * table * src (elementwise).
fn axpy_table(dst: &mut Spectrum2D, scale_dst: f64, src: &Spectrum2D, scale_src: f64, table: &[f64]) {
    dst.data
        .par_chunks_mut(4096)
        .zip(src.data.par_chunks(4096).zip(table.par_chunks(4096)))
        .for_each(|(d, (s, t))| {
            for ((dz, sz), f) in d.iter_mut().zip(s.iter()).zip(t.iter()) {
                *dz = scale_dst * *dz + scale_src * f * sz;
            }
        });
}

/// Single step of the scheme on one state with an explicit dt.
pub fn advance(
    sg: &SpectralGrid,
    rho: &GridField2D,
    vel: &dyn VelocitySource,
    kappa: f64,
    dt: f64,
    t: f64,
) -> Result<GridField2D> {
    let mut cfg = SolverConfig::new(sg.n);
    cfg.dt_cap = dt;
    let mut ms = MultiStepper::new(sg, vel, cfg, rho, &[kappa])?;
    ms.t = t;
    ms.step(dt)?;
    Ok(sg.to_field(&ms.states[0].spec))
}

/// Solve to t_end; returns the final field and the per-step trace.
pub fn solve(
    sg: &SpectralGrid,
    rho_in: &GridField2D,
    vel: &dyn VelocitySource,
    kappa: f64,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<(GridField2D, SolveTrace)> {
    let mut ms = MultiStepper::new(sg, vel, cfg.clone(), rho_in, &[kappa])?;
    ms.run(t_end, None)?;
    Ok(ms.into_results().pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_PI: f64 = 2.0 * PI;

    #[test]
    fn pure_diffusion_single_mode_is_exact_per_step() {
        let sg = SpectralGrid::new(32).unwrap();
        let rho = GridField2D::from_fn(32, |x, _| (TWO_PI * x).sin());
        let kappa = 0.01;
        let dt = 1e-3;
        let out = advance(&sg, &rho, &ZeroVelocity, kappa, dt, 0.0).unwrap();
        let factor = (-kappa * 4.0 * PI * PI * dt).exp();
        let expect = GridField2D::from_fn(32, |x, _| factor * (TWO_PI * x).sin());
        assert!(out.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn mean_is_preserved_exactly() {
        let sg = SpectralGrid::new(32).unwrap();
        let rho = GridField2D::from_fn(32, |x, y| {
            0.37 + (TWO_PI * x).sin() * (TWO_PI * y).cos()
        });
        let vel = UniformVelocity { ux: 1.0, uy: -0.5 };
        let mut cfg = SolverConfig::new(32);
        cfg.dt_cap = 1e-3;
        let (out, _) = solve(&sg, &rho, &vel, 0.003, 0.05, &cfg).unwrap();
        assert!((out.mean() - 0.37).abs() < 1e-14);
    }

    #[test]
    fn heat_oracle_single_mode() {
        // u = 0, rho_in = sin(2 pi x): rho(T) = e^{-4 pi^2 kappa T} sin(2 pi x),
        // D(T) = (1 - e^{-8 pi^2 kappa T})/4.
        let sg = SpectralGrid::new(64).unwrap();
        let rho = GridField2D::from_fn(64, |x, _| (TWO_PI * x).sin());
        let kappa = 1e-2;
        let t_end = 1.0;
        let cfg = SolverConfig::new(64);
        let (out, trace) = solve(&sg, &rho, &ZeroVelocity, kappa, t_end, &cfg).unwrap();
        let factor = (-4.0 * PI * PI * kappa * t_end).exp();
        let expect = GridField2D::from_fn(64, |x, _| factor * (TWO_PI * x).sin());
        assert!(out.max_abs_diff(&expect) < 1e-10, "field error");
        let d_expect = 0.25 * (1.0 - (-8.0 * PI * PI * kappa * t_end).exp());
        assert!(
            (trace.dissipation() - d_expect).abs() < 1e-8,
            "dissipation {} vs {}",
            trace.dissipation(),
            d_expect
        );
        assert!(energy_identity_residual(&trace) < 1e-8);
    }

    #[test]
    fn translation_oracle_constant_velocity() {
        // u = (1,0), kappa = 0: exact translation of a single mode; phase
        // error <= 1e-8 per unit time at N=128 with a modest dt.
        let sg = SpectralGrid::new(128).unwrap();
        let rho = GridField2D::from_fn(128, |x, _| (TWO_PI * x).sin());
        let vel = UniformVelocity { ux: 1.0, uy: 0.0 };
        let mut cfg = SolverConfig::new(128);
        cfg.dt_cap = 2.0e-4;
        let t_end = 1.0;
        let (out, trace) = solve(&sg, &rho, &vel, 0.0, t_end, &cfg).unwrap();
        let expect = GridField2D::from_fn(128, |x, _| (TWO_PI * (x - t_end)).sin());
        assert!(out.max_abs_diff(&expect) < 1e-8, "phase error too large");
        // transport conserves the L2 norm up to the RK3 skew damping
        assert!(
            (trace.final_l2_sq() - trace.initial_l2_sq()).abs() / trace.initial_l2_sq() < 1e-8
        );
        assert_eq!(trace.dissipation(), 0.0);
    }

    #[test]
    fn l2_monotone_and_dissipation_nonnegative() {
        let sg = SpectralGrid::new(64).unwrap();
        let rho = GridField2D::from_fn(64, |x, y| {
            (TWO_PI * x).sin() + 0.5 * (TWO_PI * 3.0 * (x + y)).cos()
        });
        let vel = UniformVelocity { ux: 0.3, uy: 0.7 };
        let mut cfg = SolverConfig::new(64);
        cfg.dt_cap = 2e-4;
        let (_, trace) = solve(&sg, &rho, &vel, 1e-3, 0.2, &cfg).unwrap();
        for w in trace.l2_sq.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        for w in trace.cum_diss.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(trace.final_l2_sq() <= trace.initial_l2_sq());
    }

    #[test]
    fn refinement_order_of_energy_identity() {
        // kappa > 0 with a rough multi-mode field; halving dt should shrink
        // the residual at third order or better (trapezoid on the trace is
        // second order, but the trace integrand is smooth here).
        let sg = SpectralGrid::new(64).unwrap();
        let rho = GridField2D::from_fn(64, |x, y| {
            (TWO_PI * x).sin() + (TWO_PI * 2.0 * y).cos() * (TWO_PI * x).sin()
        });
        let vel = UniformVelocity { ux: 0.9, uy: 0.4 };
        let mut res = Vec::new();
        for dt in [4e-3, 2e-3] {
            let mut cfg = SolverConfig::new(64);
            cfg.dt_cap = dt;
            cfg.cfl = 10.0; // force the cap to bind
            let (_, trace) = solve(&sg, &rho, &vel, 0.05, 0.5, &cfg).unwrap();
            res.push(energy_identity_residual(&trace));
        }
        let order = (res[0] / res[1]).log2();
        assert!(order >= 1.9, "measured order {order}, residuals {res:?}");
    }
}
