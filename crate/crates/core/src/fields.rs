//! Velocity hierarchy on the torus: local flow maps (exact characteristics
//! and Taylor-in-time surrogates), time-cutoff glued global flows, stream
//! functions, and the inductive u/v velocity branches.
//!
//! Level j carries the dials (lambda_j, mu_j, delta_j^{1/2}) and feeds on the
//! flows of u_{j-1}. Level 1 rides the identity flow, so its velocity is an
//! alternating pure shear (eta1 and eta2 never overlap); flows through u_1
//! therefore have a closed form as a composition of shear maps, used as the
//! fast path for level-2 streams. The generic path integrates characteristics
//! with fixed-step RK4.

use crate::cutoffs::CutoffFamily;
use crate::error::{CoreError, Result};
use crate::grid::{GridField2D, SpectralGrid, Spectrum2D};
use crate::params::{derive_generation, AbsoluteParams, GenerationParams};
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Which flow construction feeds the top stream: exact flows (u-branch) or
/// Taylor flows with the determinant factor (v-branch).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    U,
    V,
}

/// Strategy for evaluating exact flows below a stream level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStrategy {
    /// Closed-form shear composition where valid (flows through the level-1
    /// shear), RK4 characteristics elsewhere.
    Auto,
    /// Fixed-step RK4 characteristics everywhere.
    Rk4,
}

impl FlowStrategy {
    pub fn by_name(name: &str) -> Option<FlowStrategy> {
        match name {
            "auto" | "analytic" => Some(FlowStrategy::Auto),
            "rk4" => Some(FlowStrategy::Rk4),
            _ => None,
        }
    }
}

/// Per-level scale dials.
#[derive(Debug, Clone, Copy)]
pub struct LevelDials {
    pub lambda: f64,
    pub mu: f64,
    pub delta_half: f64,
}

impl LevelDials {
    pub fn from_generation(g: &GenerationParams) -> Self {
        LevelDials {
            lambda: g.lambda_q as f64,
            mu: g.mu_q,
            delta_half: g.delta_q.sqrt(),
        }
    }
}

/// Flow map snapshot on the grid: displacement (Phi - x) stored as periodic
/// fields, with optional spectral gradient and determinant caches.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub t: f64,
    pub anchor: Option<f64>,
    pub disp_x: GridField2D,
    pub disp_y: GridField2D,
    /// Rows of grad Phi: [d Phi_x/dx, d Phi_x/dy, d Phi_y/dx, d Phi_y/dy].
    pub grad: Option<[GridField2D; 4]>,
    pub det: Option<GridField2D>,
}

impl FlowMap {
    pub fn identity(n: usize, t: f64, anchor: Option<f64>) -> Self {
        FlowMap {
            t,
            anchor,
            disp_x: GridField2D::zeros(n),
            disp_y: GridField2D::zeros(n),
            grad: None,
            det: None,
        }
    }

    pub fn n(&self) -> usize {
        self.disp_x.n
    }

    /// Fill gradient and determinant caches by spectral differentiation of
    /// the periodic displacement.
    pub fn compute_gradient(&mut self, sg: &SpectralGrid) {
        let sx = sg.to_spectrum(&self.disp_x);
        let sy = sg.to_spectrum(&self.disp_y);
        let (dxx, dxy) = sg.grad_fields(&sx);
        let (dyx, dyy) = sg.grad_fields(&sy);
        let n = self.n();
        let mut det = GridField2D::zeros(n);
        det.data
            .par_chunks_mut(4096)
            .enumerate()
            .for_each(|(ci, chunk)| {
                let base = ci * 4096;
                for (k, v) in chunk.iter_mut().enumerate() {
                    let i = base + k;
                    let a = 1.0 + dxx.data[i];
                    let b = dxy.data[i];
                    let c = dyx.data[i];
                    let d = 1.0 + dyy.data[i];
                    *v = a * d - b * c;
                }
            });
        let mut gxx = dxx;
        let mut gyy = dyy;
        gxx.data.par_chunks_mut(4096).for_each(|c| {
            for v in c {
                *v += 1.0;
            }
        });
        gyy.data.par_chunks_mut(4096).for_each(|c| {
            for v in c {
                *v += 1.0;
            }
        });
        self.grad = Some([gxx, dxy, dyx, gyy]);
        self.det = Some(det);
    }

    /// Sup norm of grad Phi - Id (requires the gradient cache).
    pub fn grad_deviation_sup(&self) -> f64 {
        let g = self.grad.as_ref().expect("gradient cache not built");
        let mut sup: f64 = 0.0;
        for (idx, f) in g.iter().enumerate() {
            let shift = if idx == 0 || idx == 3 { 1.0 } else { 0.0 };
            sup = sup.max(
                f.data
                    .iter()
                    .fold(0.0_f64, |m, &v| m.max((v - shift).abs())),
            );
        }
        sup
    }

    pub fn max_displacement(&self) -> f64 {
        self.disp_x.max_abs().max(self.disp_y.max_abs())
    }
}

/// One shear segment of the closed-form level-1 flow: the accumulated
/// profile integral between two cutoff-window boundaries.
#[derive(Debug, Clone, Copy)]
struct ShearSeg {
    /// 1: eta1 window (vertical shear, depends on x1);
    /// 2: eta2 window (horizontal shear, depends on x2).
    band: u8,
    /// (2 pi delta_half / mu1) * (E_i(tau_end) - E_i(tau_start)), signed.
    amp: f64,
}

/// Precomputed shear composition from time t to an anchor.
#[derive(Debug, Clone, Default)]
struct ShearPath {
    segs: Vec<ShearSeg>,
    lambda1: f64,
}

impl ShearPath {
    /// Apply to a point, accumulating the Jacobian (rows of dX/dx).
    #[inline]
    fn apply(&self, x: [f64; 2], jac: bool) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut p = x;
        let mut j = [[1.0, 0.0], [0.0, 1.0]];
        let w = TWO_PI * self.lambda1;
        for seg in &self.segs {
            if seg.band == 1 {
                let (s, c) = (w * p[0]).sin_cos();
                p[1] -= seg.amp * c;
                if jac {
                    let a = seg.amp * w * s;
                    j[1][0] += a * j[0][0];
                    j[1][1] += a * j[0][1];
                }
            } else {
                let (s, c) = (w * p[1]).sin_cos();
                p[0] += seg.amp * c;
                if jac {
                    let b = -seg.amp * w * s;
                    j[0][0] += b * j[1][0];
                    j[0][1] += b * j[1][1];
                }
            }
        }
        (p, j)
    }
}

/// Glued flow evaluation data for one time: active windows and their paths.
#[derive(Debug, Clone, Default)]
struct ShearGlue {
    parts: Vec<(f64, ShearPath)>,
}

impl ShearGlue {
    #[inline]
    fn apply(&self, x: [f64; 2], want_jac: bool) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut disp = [0.0, 0.0];
        let mut jac = [[0.0, 0.0], [0.0, 0.0]];
        for (w, path) in &self.parts {
            let (p, pj) = path.apply(x, want_jac);
            disp[0] += w * (p[0] - x[0]);
            disp[1] += w * (p[1] - x[1]);
            if want_jac {
                for r in 0..2 {
                    for c in 0..2 {
                        jac[r][c] += w * pj[r][c];
                    }
                }
            }
        }
        ([x[0] + disp[0], x[1] + disp[1]], jac)
    }
}

/// Immutable velocity hierarchy; levels are built once and shared.
pub struct VelocityHierarchy {
    pub family: CutoffFamily,
    pub abs: Option<AbsoluteParams>,
    pub gens: Vec<GenerationParams>,
    pub levels: Vec<LevelDials>,
    pub strategy: FlowStrategy,
    /// RK4 characteristic steps per 1/mu_{q+1} time unit.
    pub char_steps_per_mu: f64,
    /// Resolution threshold (grid points per stream wavelength).
    pub min_ppw: f64,
    pub n_star: u32,
    /// Centered-difference half-width for material derivatives is
    /// 1/(fd_ht_factor * mu_{q+1}).
    pub fd_ht_factor: f64,
    /// Measured sup of |grad Phi - Id| of the glued exact flow feeding each
    /// level, sampled at stream-active times (index 0 = level 1, always 0).
    pub distortion: Vec<f64>,
}

impl VelocityHierarchy {
    /// Hierarchy on the parameter schedule up to generation `qmax`.
    pub fn from_schedule(
        abs: &AbsoluteParams,
        qmax: u32,
        family: CutoffFamily,
    ) -> Result<VelocityHierarchy> {
        let mut gens = Vec::new();
        for q in 0..=qmax {
            gens.push(derive_generation(abs, q)?);
        }
        let levels: Vec<LevelDials> = gens[1..]
            .iter()
            .map(LevelDials::from_generation)
            .collect();
        let mut h = VelocityHierarchy {
            family,
            abs: Some(abs.clone()),
            gens,
            levels,
            strategy: FlowStrategy::Auto,
            char_steps_per_mu: 32.0,
            min_ppw: 6.0,
            n_star: abs.n_star.max(1),
            fd_ht_factor: 64.0,
            distortion: Vec::new(),
        };
        h.measure_distortion();
        Ok(h)
    }

    /// Free-dial hierarchy (used by the one-step two-scale experiments).
    pub fn from_levels(family: CutoffFamily, levels: Vec<LevelDials>) -> VelocityHierarchy {
        let mut h = VelocityHierarchy {
            family,
            abs: None,
            gens: Vec::new(),
            levels,
            strategy: FlowStrategy::Auto,
            char_steps_per_mu: 32.0,
            min_ppw: 6.0,
            n_star: 4,
            fd_ht_factor: 64.0,
            distortion: Vec::new(),
        };
        h.measure_distortion();
        h
    }

    /// Copy of this hierarchy with one extra level of free dials on top.
    pub fn with_extra_level(&self, dials: LevelDials) -> VelocityHierarchy {
        let mut levels = self.levels.clone();
        levels.push(dials);
        let mut h = VelocityHierarchy {
            family: self.family.clone(),
            abs: self.abs.clone(),
            gens: self.gens.clone(),
            levels,
            strategy: self.strategy,
            char_steps_per_mu: self.char_steps_per_mu,
            min_ppw: self.min_ppw,
            n_star: self.n_star,
            fd_ht_factor: self.fd_ht_factor,
            distortion: Vec::new(),
        };
        h.measure_distortion();
        h
    }

    pub fn set_min_ppw(&mut self, ppw: f64) {
        self.min_ppw = ppw.max(2.0);
    }

    pub fn level_count(&self) -> u32 {
        self.levels.len() as u32
    }

    fn dials(&self, level: u32) -> &LevelDials {
        &self.levels[(level - 1) as usize]
    }

    /// Anchor time t_{q,iota} = iota / mu_{q+1} of the flows through u_q.
    pub fn anchor_time(&self, q: u32, iota: i64) -> Result<f64> {
        self.require_level(q + 1)?;
        Ok(iota as f64 / self.dials(q + 1).mu)
    }

    fn require_level(&self, level: u32) -> Result<()> {
        if level == 0 || level > self.level_count() {
            return Err(CoreError::InvalidParam(format!(
                "level {level} not built (hierarchy has {} levels)",
                self.level_count()
            )));
        }
        Ok(())
    }

    /// Active window indices and weights at time t for flows through u_q.
    pub fn active_windows(&self, q: u32, t: f64) -> Result<Vec<(i64, f64)>> {
        self.require_level(q + 1)?;
        let tau = self.dials(q + 1).mu * t;
        let base = tau.round() as i64;
        let mut out = Vec::new();
        for di in -1..=1_i64 {
            let iota = base + di;
            let w = self.family.eta_tilde_at(tau - iota as f64);
            if w != 0.0 {
                out.push((iota, w));
            }
        }
        Ok(out)
    }

    // ---- closed-form shear path (flows through the level-1 velocity) ----

    fn shear_path(&self, t: f64, anchor: f64) -> ShearPath {
        let l1 = self.dials(1);
        let mu1 = l1.mu;
        let coeff = TWO_PI * l1.delta_half / mu1;
        let (ta, tb) = (mu1 * t, mu1 * anchor);
        let mut segs = Vec::new();
        // window boundaries between ta and tb, walked from ta toward tb
        let mut bounds: Vec<f64> = Vec::new();
        let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        let k0 = lo.floor() as i64 - 1;
        let k1 = hi.ceil() as i64 + 1;
        for k in k0..=k1 {
            for c in [0.125, 0.375, 0.625, 0.875] {
                let b = k as f64 + c;
                if b > lo && b < hi {
                    bounds.push(b);
                }
            }
        }
        bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if ta > tb {
            bounds.reverse();
        }
        let mut prev = ta;
        for b in bounds.into_iter().chain(std::iter::once(tb)) {
            let mid = 0.5 * (prev + b);
            let frac = mid - mid.floor();
            let band = if frac > 0.125 && frac < 0.375 {
                1
            } else if frac > 0.625 && frac < 0.875 {
                2
            } else {
                0
            };
            if band == 1 {
                let amp = coeff * (self.family.eta1_int(b) - self.family.eta1_int(prev));
                if amp != 0.0 {
                    segs.push(ShearSeg { band, amp });
                }
            } else if band == 2 {
                let amp = coeff * (self.family.eta2_int(b) - self.family.eta2_int(prev));
                if amp != 0.0 {
                    segs.push(ShearSeg { band, amp });
                }
            }
            prev = b;
        }
        ShearPath {
            segs,
            lambda1: l1.lambda,
        }
    }

    fn shear_glue(&self, t: f64) -> Result<ShearGlue> {
        let mut parts = Vec::new();
        for (iota, w) in self.active_windows(1, t)? {
            let anchor = self.anchor_time(1, iota)?;
            parts.push((w, self.shear_path(t, anchor)));
        }
        Ok(ShearGlue { parts })
    }

    // ---- point evaluation ----

    /// Glued exact flow through u_q at a single point, with Jacobian.
    pub fn flow_point(&self, q: u32, x: [f64; 2], t: f64) -> Result<([f64; 2], [[f64; 2]; 2])> {
        if q == 0 {
            return Ok((x, [[1.0, 0.0], [0.0, 1.0]]));
        }
        if q == 1 && self.strategy == FlowStrategy::Auto {
            return Ok(self.shear_glue(t)?.apply(x, true));
        }
        let mut disp = [0.0, 0.0];
        let mut jac = [[0.0, 0.0], [0.0, 0.0]];
        for (iota, w) in self.active_windows(q, t)? {
            let anchor = self.anchor_time(q, iota)?;
            let p = self.rk4_point(q, x, t, anchor, iota)?;
            let j = self.rk4_point_jacobian(q, x, t, anchor, iota)?;
            disp[0] += w * (p[0] - x[0]);
            disp[1] += w * (p[1] - x[1]);
            for r in 0..2 {
                for c in 0..2 {
                    jac[r][c] += w * j[r][c];
                }
            }
        }
        Ok(([x[0] + disp[0], x[1] + disp[1]], jac))
    }

    /// Velocity u_q at a single point.
    pub fn velocity_point(&self, q: u32, x: [f64; 2], t: f64) -> Result<[f64; 2]> {
        let mut u = [0.0, 0.0];
        for j in 1..=q {
            let lv = self.dials(j);
            let tau = lv.mu * t;
            let e1 = self.family.eta1_at(tau);
            let e2 = self.family.eta2_at(tau);
            if e1 == 0.0 && e2 == 0.0 {
                continue;
            }
            let (phi, jac) = self.flow_point(j - 1, x, t)?;
            let g1 = TWO_PI * lv.delta_half * e1 * (TWO_PI * lv.lambda * phi[0]).cos();
            let g2 = TWO_PI * lv.delta_half * e2 * (TWO_PI * lv.lambda * phi[1]).cos();
            // grad psi = (grad Phi)^T g; u += (grad psi)_perp
            let gx = jac[0][0] * g1 + jac[1][0] * g2;
            let gy = jac[0][1] * g1 + jac[1][1] * g2;
            u[0] += gy;
            u[1] -= gx;
        }
        Ok(u)
    }

    /// Fixed-step RK4 characteristic integration from (x, t) to the anchor.
    fn rk4_point(&self, q: u32, x: [f64; 2], t: f64, anchor: f64, iota: i64) -> Result<[f64; 2]> {
        let mu_next = self.dials(q + 1).mu;
        let span = anchor - t;
        if span == 0.0 {
            return Ok(x);
        }
        let steps = (span.abs() * self.char_steps_per_mu * mu_next).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        if h.abs() < 1e-12 {
            return Err(CoreError::Stiffness { q, iota, t });
        }
        let mut p = x;
        let mut s = t;
        for _ in 0..steps {
            let k1 = self.velocity_point(q, p, s)?;
            let k2 = self.velocity_point(
                q,
                [p[0] + 0.5 * h * k1[0], p[1] + 0.5 * h * k1[1]],
                s + 0.5 * h,
            )?;
            let k3 = self.velocity_point(
                q,
                [p[0] + 0.5 * h * k2[0], p[1] + 0.5 * h * k2[1]],
                s + 0.5 * h,
            )?;
            let k4 = self.velocity_point(q, [p[0] + h * k3[0], p[1] + h * k3[1]], s + h)?;
            p[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
            p[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
            s += h;
        }
        Ok(p)
    }

    fn rk4_point_jacobian(
        &self,
        q: u32,
        x: [f64; 2],
        t: f64,
        anchor: f64,
        iota: i64,
    ) -> Result<[[f64; 2]; 2]> {
        let hfd = 1e-6;
        let mut jac = [[0.0, 0.0], [0.0, 0.0]];
        for c in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += hfd;
            xm[c] -= hfd;
            let pp = self.rk4_point(q, xp, t, anchor, iota)?;
            let pm = self.rk4_point(q, xm, t, anchor, iota)?;
            jac[0][c] = (pp[0] - pm[0]) / (2.0 * hfd);
            jac[1][c] = (pp[1] - pm[1]) / (2.0 * hfd);
        }
        Ok(jac)
    }

    // ---- grid operations ----

    fn check_resolution(&self, n: usize, lambda: f64, what: &str) -> Result<()> {
        let needed = (self.min_ppw * lambda).ceil() as usize;
        if n < needed {
            return Err(CoreError::Resolution {
                what: what.to_string(),
                needed,
                have: n,
            });
        }
        Ok(())
    }

    /// Local exact flow map on the grid by RK4 characteristics (the `rk4`
    /// strategy regardless of the hierarchy default; the op contract).
    pub fn exact_flow(&self, n: usize, q: u32, iota: i64, t: f64) -> Result<FlowMap> {
        let anchor = self.anchor_time(q, iota)?;
        let mu_next = self.dials(q + 1).mu;
        if (t - anchor).abs() > 0.625 / mu_next + 1e-12 {
            return Err(CoreError::InvalidParam(format!(
                "t={t} outside the window of iota={iota} (anchor {anchor})"
            )));
        }
        let mut fm = FlowMap::identity(n, t, Some(anchor));
        let rows: Vec<(usize, Vec<(f64, f64)>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let y = i as f64 / n as f64;
                let row: Vec<(f64, f64)> = (0..n)
                    .map(|j| {
                        let x = j as f64 / n as f64;
                        let p = self
                            .rk4_point(q, [x, y], t, anchor, iota)
                            .expect("rk4 point");
                        (p[0] - x, p[1] - y)
                    })
                    .collect();
                (i, row)
            })
            .collect();
        for (i, row) in rows {
            for (j, (dx, dy)) in row.into_iter().enumerate() {
                fm.disp_x.data[i * n + j] = dx;
                fm.disp_y.data[i * n + j] = dy;
            }
        }
        Ok(fm)
    }

    /// Closed-form shear flow map (only valid for q = 1); used as the fast
    /// path and as an independent cross-check of `exact_flow`.
    pub fn shear_flow(&self, n: usize, iota: i64, t: f64) -> Result<FlowMap> {
        let anchor = self.anchor_time(1, iota)?;
        let path = self.shear_path(t, anchor);
        let mut fm = FlowMap::identity(n, t, Some(anchor));
        fm.disp_x
            .data
            .par_chunks_mut(n)
            .zip(fm.disp_y.data.par_chunks_mut(n))
            .enumerate()
            .for_each(|(i, (dx, dy))| {
                let y = i as f64 / n as f64;
                for j in 0..n {
                    let x = j as f64 / n as f64;
                    let (p, _) = path.apply([x, y], false);
                    dx[j] = p[0] - x;
                    dy[j] = p[1] - y;
                }
            });
        Ok(fm)
    }

    /// Taylor-in-time local flow: Phi = x + sum_{m=1..n_star}
    /// (t_anchor - t)^m / m! D_q^{m-1} u_q evaluated at (x, t).
    pub fn taylor_flow(
        &self,
        sg: &SpectralGrid,
        q: u32,
        iota: i64,
        t: f64,
        n_star: u32,
    ) -> Result<FlowMap> {
        let anchor = self.anchor_time(q, iota)?;
        let dt = anchor - t;
        let n = sg.n;
        let mut fm = FlowMap::identity(n, t, Some(anchor));
        if n_star == 0 || q == 0 || dt == 0.0 {
            return Ok(fm);
        }
        let mu_next = self.dials(q + 1).mu;
        let ht = 1.0 / (self.fd_ht_factor * mu_next);
        let mut cache = VelocityCache::default();
        let mut factorial = 1.0;
        for m in 1..=n_star {
            factorial *= m as f64;
            let coeff = dt.powi(m as i32) / factorial;
            let (du, dv) = self.material_derivative_uv(sg, q, m - 1, t, ht, &mut cache)?;
            fm.disp_x.add_scaled(&du, coeff);
            fm.disp_y.add_scaled(&dv, coeff);
        }
        Ok(fm)
    }

    /// Blend local flow maps with the partition-of-unity weights at t.
    pub fn glue_flow(&self, locals: &[(i64, f64, FlowMap)], t: f64) -> Result<FlowMap> {
        if locals.is_empty() {
            return Err(CoreError::MissingLocalFlow { iota: 0, t });
        }
        let n = locals[0].2.n();
        let mut fm = FlowMap::identity(n, t, None);
        for (_, w, lf) in locals {
            fm.disp_x.add_scaled(&lf.disp_x, *w);
            fm.disp_y.add_scaled(&lf.disp_y, *w);
        }
        Ok(fm)
    }

    /// Glued exact flow on the grid through u_q at time t (strategy aware).
    pub fn glued_exact_flow(&self, n: usize, q: u32, t: f64) -> Result<FlowMap> {
        let windows = self.active_windows(q, t)?;
        let mut locals = Vec::new();
        for (iota, w) in windows {
            let lf = if q == 1 && self.strategy == FlowStrategy::Auto {
                self.shear_flow(n, iota, t)?
            } else if q == 0 {
                FlowMap::identity(n, t, None)
            } else {
                self.exact_flow(n, q, iota, t)?
            };
            locals.push((iota, w, lf));
        }
        self.glue_flow(&locals, t)
    }

    /// Glued Taylor flow on the grid through u_q at time t.
    pub fn glued_taylor_flow(
        &self,
        sg: &SpectralGrid,
        q: u32,
        t: f64,
        n_star: u32,
    ) -> Result<FlowMap> {
        let windows = self.active_windows(q, t)?;
        let mut locals = Vec::new();
        for (iota, w) in windows {
            locals.push((iota, w, self.taylor_flow(sg, q, iota, t, n_star)?));
        }
        self.glue_flow(&locals, t)
    }

    /// Stream function field of one level at time t (mean not corrected).
    /// A dormant level (both cutoffs zero) is exactly zero and skips the
    /// resolution guard.
    pub fn stream_level_field(&self, sg: &SpectralGrid, level: u32, t: f64) -> Result<GridField2D> {
        self.require_level(level)?;
        let lv = self.dials(level);
        let n = sg.n;
        let tau = lv.mu * t;
        let e1 = self.family.eta1_at(tau);
        let e2 = self.family.eta2_at(tau);
        if e1 == 0.0 && e2 == 0.0 {
            return Ok(GridField2D::zeros(n));
        }
        self.check_resolution(sg.n, lv.lambda, &format!("stream level {level}"))?;
        let amp = lv.delta_half / lv.lambda;
        let w = TWO_PI * lv.lambda;
        let mut out = GridField2D::zeros(n);
        if level == 1 {
            out.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                let y = i as f64 / n as f64;
                let sy = amp * e2 * (w * y).sin();
                for (j, v) in row.iter_mut().enumerate() {
                    let x = j as f64 / n as f64;
                    *v = amp * e1 * (w * x).sin() + sy;
                }
            });
            return Ok(out);
        }
        let base_q = level - 1;
        if base_q == 1 && self.strategy == FlowStrategy::Auto {
            let glue = self.shear_glue(t)?;
            out.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                let y = i as f64 / n as f64;
                for (j, v) in row.iter_mut().enumerate() {
                    let x = j as f64 / n as f64;
                    let (p, _) = glue.apply([x, y], false);
                    *v = amp * (e1 * (w * p[0]).sin() + e2 * (w * p[1]).sin());
                }
            });
            return Ok(out);
        }
        // generic path: glued exact flow on the grid, then compose
        let fm = self.glued_exact_flow(n, base_q, t)?;
        out.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let y = i as f64 / n as f64;
            for (j, v) in row.iter_mut().enumerate() {
                let x = j as f64 / n as f64;
                let px = x + fm.disp_x.data[i * n + j];
                let py = y + fm.disp_y.data[i * n + j];
                *v = amp * (e1 * (w * px).sin() + e2 * (w * py).sin());
            }
        });
        Ok(out)
    }

    /// Cumulative stream field for a branch: u-branch sums bar-psi_j, j <= q;
    /// v-branch sums j <= q-1 plus the Taylor-flow psi_q.
    pub fn stream_sum_field(
        &self,
        sg: &SpectralGrid,
        q: u32,
        branch: Branch,
        t: f64,
    ) -> Result<GridField2D> {
        let mut total = GridField2D::zeros(sg.n);
        if q == 0 {
            return Ok(total);
        }
        let top_exact = match branch {
            Branch::U => q,
            Branch::V => q - 1,
        };
        for j in 1..=top_exact {
            let f = self.stream_level_field(sg, j, t)?;
            total.add_scaled(&f, 1.0);
        }
        if branch == Branch::V {
            let f = self.v_stream_field(sg, q, t)?;
            total.add_scaled(&f, 1.0);
        }
        Ok(total)
    }

    /// psi_q of the v-branch: det(grad Phi_{q-1}) H(lambda Phi_{q-1}, mu t)
    /// with the glued Taylor flow.
    fn v_stream_field(&self, sg: &SpectralGrid, level: u32, t: f64) -> Result<GridField2D> {
        self.require_level(level)?;
        let lv = self.dials(level);
        let n = sg.n;
        let tau = lv.mu * t;
        let e1 = self.family.eta1_at(tau);
        let e2 = self.family.eta2_at(tau);
        if e1 == 0.0 && e2 == 0.0 {
            return Ok(GridField2D::zeros(n));
        }
        self.check_resolution(sg.n, lv.lambda, &format!("v-stream level {level}"))?;
        let mut fm = self.glued_taylor_flow(sg, level - 1, t, self.n_star)?;
        fm.compute_gradient(sg);
        let det = fm.det.as_ref().unwrap();
        let amp = lv.delta_half / lv.lambda;
        let w = TWO_PI * lv.lambda;
        let mut out = GridField2D::zeros(n);
        out.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let y = i as f64 / n as f64;
            for (j, v) in row.iter_mut().enumerate() {
                let x = j as f64 / n as f64;
                let px = x + fm.disp_x.data[i * n + j];
                let py = y + fm.disp_y.data[i * n + j];
                *v = amp
                    * det.data[i * n + j]
                    * (e1 * (w * px).sin() + e2 * (w * py).sin());
            }
        });
        Ok(out)
    }

    /// The two next-generation stream functions (bar-psi_{q+1}, psi_{q+1}),
    /// both mean-corrected to zero.
    pub fn stream_next(
        &self,
        sg: &SpectralGrid,
        q: u32,
        t: f64,
    ) -> Result<(GridField2D, GridField2D)> {
        let mut psi_bar = self.stream_level_field(sg, q + 1, t)?;
        let mb = psi_bar.mean();
        psi_bar.data.par_chunks_mut(4096).for_each(|c| {
            for v in c {
                *v -= mb;
            }
        });
        let mut psi = self.v_stream_field(sg, q + 1, t)?;
        let mp = psi.mean();
        psi.data.par_chunks_mut(4096).for_each(|c| {
            for v in c {
                *v -= mp;
            }
        });
        Ok((psi_bar, psi))
    }

    /// Velocity fields on the grid via the spectral perpendicular gradient
    /// of the sampled cumulative stream (exactly divergence-free).
    pub fn velocity_grid(
        &self,
        sg: &SpectralGrid,
        q: u32,
        branch: Branch,
        t: f64,
    ) -> Result<(GridField2D, GridField2D)> {
        let psi = self.stream_sum_field(sg, q, branch, t)?;
        let spec = sg.to_spectrum(&psi);
        Ok(sg.grad_perp_fields(&spec))
    }

    /// m-fold material derivative (D = d_t + u_q . grad) of a scalar
    /// time-dependent field, with centered time differences of half-width ht.
    pub fn material_derivative(
        &self,
        sg: &SpectralGrid,
        q: u32,
        f: &(dyn Fn(f64) -> GridField2D + Sync),
        m: u32,
        t: f64,
        ht: f64,
    ) -> Result<GridField2D> {
        self.check_ht(q, ht)?;
        let mut cache = VelocityCache::default();
        self.mat_der_rec(sg, q, f, m, t, ht, &mut cache)
    }

    fn check_ht(&self, q: u32, ht: f64) -> Result<()> {
        let cap = if (q + 1) as usize <= self.levels.len() {
            1.0 / (4.0 * self.dials(q + 1).mu)
        } else {
            f64::INFINITY
        };
        if !(ht >= 1e-10 && ht <= cap) {
            return Err(CoreError::StepSize { ht, max: cap });
        }
        Ok(())
    }

    fn mat_der_rec(
        &self,
        sg: &SpectralGrid,
        q: u32,
        f: &(dyn Fn(f64) -> GridField2D + Sync),
        m: u32,
        t: f64,
        ht: f64,
        cache: &mut VelocityCache,
    ) -> Result<GridField2D> {
        if m == 0 {
            return Ok(f(t));
        }
        let gp = self.mat_der_rec(sg, q, f, m - 1, t + ht, ht, cache)?;
        let gm = self.mat_der_rec(sg, q, f, m - 1, t - ht, ht, cache)?;
        let gt = self.mat_der_rec(sg, q, f, m - 1, t, ht, cache)?;
        let (u, v) = self.velocity_cached(sg, q, t, cache)?;
        let spec = sg.to_spectrum(&gt);
        let (gx, gy) = sg.grad_fields(&spec);
        let n = sg.n;
        let mut out = GridField2D::zeros(n);
        let inv2ht = 1.0 / (2.0 * ht);
        out.data
            .par_chunks_mut(4096)
            .enumerate()
            .for_each(|(ci, chunk)| {
                let base = ci * 4096;
                for (k, v_out) in chunk.iter_mut().enumerate() {
                    let i = base + k;
                    *v_out = (gp.data[i] - gm.data[i]) * inv2ht
                        + u.data[i] * gx.data[i]
                        + v.data[i] * gy.data[i];
                }
            });
        Ok(out)
    }

    /// Material derivatives of the velocity components (vector field).
    fn material_derivative_uv(
        &self,
        sg: &SpectralGrid,
        q: u32,
        m: u32,
        t: f64,
        ht: f64,
        cache: &mut VelocityCache,
    ) -> Result<(GridField2D, GridField2D)> {
        if m == 0 {
            return self.velocity_cached(sg, q, t, cache);
        }
        let (up, vp) = self.material_derivative_uv(sg, q, m - 1, t + ht, ht, cache)?;
        let (um, vm) = self.material_derivative_uv(sg, q, m - 1, t - ht, ht, cache)?;
        let (ut, vt) = self.material_derivative_uv(sg, q, m - 1, t, ht, cache)?;
        let (u, v) = self.velocity_cached(sg, q, t, cache)?;
        let su = sg.to_spectrum(&ut);
        let sv = sg.to_spectrum(&vt);
        let (uxx, uxy) = sg.grad_fields(&su);
        let (vxx, vxy) = sg.grad_fields(&sv);
        let n = sg.n;
        let inv2ht = 1.0 / (2.0 * ht);
        let mut du = GridField2D::zeros(n);
        let mut dv = GridField2D::zeros(n);
        du.data
            .par_chunks_mut(4096)
            .zip(dv.data.par_chunks_mut(4096))
            .enumerate()
            .for_each(|(ci, (cu, cv))| {
                let base = ci * 4096;
                for k in 0..cu.len() {
                    let i = base + k;
                    cu[k] = (up.data[i] - um.data[i]) * inv2ht
                        + u.data[i] * uxx.data[i]
                        + v.data[i] * uxy.data[i];
                    cv[k] = (vp.data[i] - vm.data[i]) * inv2ht
                        + u.data[i] * vxx.data[i]
                        + v.data[i] * vxy.data[i];
                }
            });
        Ok((du, dv))
    }

    fn velocity_cached(
        &self,
        sg: &SpectralGrid,
        q: u32,
        t: f64,
        cache: &mut VelocityCache,
    ) -> Result<(GridField2D, GridField2D)> {
        if let Some(pair) = cache.map.get(&t.to_bits()) {
            return Ok(pair.clone());
        }
        let pair = self.velocity_grid(sg, q, Branch::U, t)?;
        cache.map.insert(t.to_bits(), pair.clone());
        Ok(pair)
    }

    /// Sup-norm deviation of the glued Taylor flow from the identity,
    /// normalized by eps_q (the Lemma-scale unit); O(1) when the expansion
    /// behaves.
    pub fn check_grad_phi_identity(&self, sg: &SpectralGrid, q: u32, t: f64) -> Result<f64> {
        if q == 0 {
            return Ok(0.0);
        }
        let abs = self
            .abs
            .as_ref()
            .ok_or_else(|| CoreError::InvalidParam("free-dial hierarchy has no eps_q".into()))?;
        let eps = derive_generation(abs, q)?.eps_q;
        let mut fm = self.glued_taylor_flow(sg, q, t, self.n_star)?;
        fm.compute_gradient(sg);
        Ok(fm.grad_deviation_sup() / eps)
    }

    /// Upper bound for sup |u_q| over the time window [t0, t1].
    pub fn speed_bound(&self, q: u32, t0: f64, t1: f64) -> f64 {
        let mut b = 0.0;
        for j in 1..=q.min(self.level_count()) {
            let lv = self.dials(j);
            let env = self.family.eta_window_max(lv.mu * t0, lv.mu * t1);
            let dist = 1.0 + self.distortion.get((j - 1) as usize).copied().unwrap_or(0.0);
            b += TWO_PI * lv.delta_half * env * dist;
        }
        b
    }

    /// Sample the sup of |grad Phi - Id| of the exact flow feeding each level
    /// at stream-active times; used to keep the CFL speed bound honest.
    fn measure_distortion(&mut self) {
        let n_probe = 64;
        let mut out = vec![0.0_f64; self.levels.len()];
        for lidx in 1..self.levels.len() {
            let level = (lidx + 1) as u32;
            let mu = self.dials(level).mu;
            let mut sup = 0.0_f64;
            for c in [0.25_f64, 0.75] {
                let t = (1.0 + c) / mu;
                let dev = (0..n_probe * n_probe)
                    .into_par_iter()
                    .map(|idx| {
                        let x = [
                            (idx % n_probe) as f64 / n_probe as f64,
                            (idx / n_probe) as f64 / n_probe as f64,
                        ];
                        match self.flow_point(level - 1, x, t) {
                            Ok((_, j)) => {
                                let mut d = 0.0_f64;
                                for r in 0..2 {
                                    for cc in 0..2 {
                                        let id = if r == cc { 1.0 } else { 0.0 };
                                        d = d.max((j[r][cc] - id).abs());
                                    }
                                }
                                d
                            }
                            Err(_) => 0.0,
                        }
                    })
                    .reduce(|| 0.0, f64::max);
                sup = sup.max(dev);
            }
            out[lidx] = sup * 1.3;
        }
        self.distortion = out;
    }
}

#[derive(Default)]
struct VelocityCache {
    map: HashMap<u64, (GridField2D, GridField2D)>,
}

/// Divergence of a velocity pair, relative spectral sup (diagnostic).
pub fn divergence_check(sg: &SpectralGrid, u: &GridField2D, v: &GridField2D) -> f64 {
    let (su, sv): (Spectrum2D, Spectrum2D) = sg.to_spectrum_pair(u, v);
    sg.divergence_rel(&su, &sv)
}
