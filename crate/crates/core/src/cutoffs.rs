//! Periodic cutoff family: the two disjoint time bumps eta1, eta2 normalized
//! against the unit-frequency shear cell, and the partition-of-unity window
//! eta_tilde (a trapezoid mollified by the standard compactly supported bump).
//!
//! eta1/eta2 are evaluated from the analytic bump formula, so they vanish
//! identically outside their declared supports. eta_tilde's transition is the
//! closed-form convolution of the linear ramp with the bump, expressed through
//! tabulated incomplete integrals mirrored so that shifted copies sum to one
//! at machine precision.

use crate::error::{CoreError, Result};
use crate::util::{
    cumulative_periodic_integral, spectral_derivative, spectral_roundtrip_error, CubicTable,
};
use std::sync::Arc;

const DENSE: usize = 16384;

/// The standard compactly supported mollifier profile on (-1, 1), unnormalized.
#[inline]
pub fn bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (1.0 / (s * s - 1.0)).exp()
    } else {
        0.0
    }
}

/// Uniformly sampled profile over one period with declared support.
#[derive(Debug, Clone)]
pub struct PeriodicProfile {
    /// Samples at `origin + k*period/M`.
    pub samples: Vec<f64>,
    pub period: f64,
    pub origin: f64,
    /// Support intervals in profile coordinates (within one period).
    pub support: Vec<(f64, f64)>,
}

impl PeriodicProfile {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    /// Trapezoid quadrature over one period (exact mean times period for
    /// periodic sampling).
    pub fn integral(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64 * self.period
    }

    pub fn integral_sq(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.len() as f64 * self.period
    }

    /// Max-norm of the p-th spectral derivative.
    pub fn derivative_max(&self, p: u32) -> f64 {
        spectral_derivative(&self.samples, self.period, p)
            .iter()
            .fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    pub fn roundtrip_error(&self) -> f64 {
        spectral_roundtrip_error(&self.samples)
    }

    pub fn csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 24);
        out.push_str("tau,value\n");
        for (k, v) in self.samples.iter().enumerate() {
            let tau = self.origin + k as f64 * self.period / self.len() as f64;
            out.push_str(&format!("{tau:.12},{v:.15e}\n"));
        }
        out
    }
}

/// Dependence pattern of a cell profile `chi(xi)` for shear-condition checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChiAxis {
    /// Depends on xi_1 only (d_{xi_2} chi = 0).
    Xi1Only,
    /// Depends on xi_2 only (d_{xi_1} chi = 0).
    Xi2Only,
    Constant,
}

struct Tables {
    /// Integral of the normalized bump from 0 to y, y in [0,1].
    bt: CubicTable,
    /// Integral of s * normalized bump from 0 to y, y in [0,1].
    mt: CubicTable,
    /// mt at 1.
    j_half: f64,
    /// Cumulative integrals of eta1/eta2: value = mean * tau + periodic part.
    e1_mean: f64,
    e1_per: CubicTable,
    e2_mean: f64,
    e2_per: CubicTable,
    /// Coarse running max of max(|eta1|,|eta2|) for speed bounds.
    env_max: Vec<f64>,
    env_pad: f64,
}

/// The cutoff family of the construction; immutable and cheaply cloneable.
#[derive(Clone)]
pub struct CutoffFamily {
    pub m: usize,
    pub eps0: f64,
    pub eta1: PeriodicProfile,
    pub eta2: PeriodicProfile,
    pub eta_tilde: PeriodicProfile,
    /// Normalization constants applied to the raw bumps.
    pub c1: f64,
    pub c2: f64,
    tables: Arc<Tables>,
}

impl std::fmt::Debug for CutoffFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CutoffFamily")
            .field("m", &self.m)
            .field("eps0", &self.eps0)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .finish()
    }
}

const ETA1_CENTER: f64 = 0.25;
const ETA2_CENTER: f64 = 0.75;
const ETA_HALF_WIDTH: f64 = 0.125;

fn raw_eta(tau: f64, center: f64) -> f64 {
    let t = tau - tau.floor();
    bump((t - center) / ETA_HALF_WIDTH)
}

/// Construct the family. `m` is the stored sample count per profile; `eps0`
/// the mollification half-width of the eta_tilde transition.
pub fn build_cutoffs(m: usize, eps0: f64) -> Result<CutoffFamily> {
    if !m.is_power_of_two() || m < 256 {
        return Err(CoreError::InvalidParam(format!(
            "cutoff sample count {m} must be a power of two >= 256"
        )));
    }
    if !(eps0 > 0.0 && eps0 < 1.0 / 32.0) {
        return Err(CoreError::InvalidParam(format!(
            "eps0 = {eps0} outside (0, 1/32)"
        )));
    }
    // The eta_tilde profile lives on a period of 5/4; require >= 8 samples
    // across the mollification width 2*eps0.
    if (m as f64) * 2.0 * eps0 / 1.25 < 8.0 {
        return Err(CoreError::CutoffResolution { m, eps0 });
    }

    // Normalization: int eta_i^2 dtau * int sin^2(2 pi s) ds = 1, and the
    // sine integral is exactly 1/2, so int eta_i^2 = 2.
    let dense_sq: f64 = (0..DENSE)
        .map(|k| {
            let s = -1.0 + 2.0 * k as f64 / DENSE as f64;
            let v = bump(s);
            v * v
        })
        .sum::<f64>()
        * (2.0 / DENSE as f64);
    let c = (2.0 / (ETA_HALF_WIDTH * dense_sq)).sqrt();

    let sample_profile = |center: f64| -> PeriodicProfile {
        let samples: Vec<f64> = (0..m)
            .map(|k| c * raw_eta(k as f64 / m as f64, center))
            .collect();
        PeriodicProfile {
            samples,
            period: 1.0,
            origin: 0.0,
            support: vec![(center - ETA_HALF_WIDTH, center + ETA_HALF_WIDTH)],
        }
    };
    let eta1 = sample_profile(ETA1_CENTER);
    let eta2 = sample_profile(ETA2_CENTER);

    // Incomplete integrals of the normalized bump for the transition shape.
    let i1: f64 = (0..DENSE)
        .map(|k| bump(-1.0 + 2.0 * k as f64 / DENSE as f64))
        .sum::<f64>()
        * (2.0 / DENSE as f64);
    let phi_samples: Vec<f64> = (0..DENSE)
        .map(|k| bump(-1.0 + 2.0 * k as f64 / DENSE as f64) / i1)
        .collect();
    let sphi_samples: Vec<f64> = (0..DENSE)
        .map(|k| {
            let s = -1.0 + 2.0 * k as f64 / DENSE as f64;
            s * bump(s) / i1
        })
        .collect();
    // Cumulative from -1; keep the [0, 1] half for mirrored evaluation.
    let (pm, pp) = cumulative_periodic_integral(&phi_samples, 2.0);
    let (mm, mp) = cumulative_periodic_integral(&sphi_samples, 2.0);
    let half = DENSE / 2;
    let cum_at = |mean: f64, per: &[f64], idx: usize| -> f64 {
        let x = -1.0 + 2.0 * idx as f64 / DENSE as f64;
        mean * (x + 1.0) + per[idx] - per[0]
    };
    let mut bt_vals = Vec::with_capacity(half + 1);
    let mut mt_vals = Vec::with_capacity(half + 1);
    let base_b = cum_at(pm, &pp, half);
    let base_m = cum_at(mm, &mp, half);
    for k in 0..half {
        bt_vals.push(cum_at(pm, &pp, half + k) - base_b);
        mt_vals.push(cum_at(mm, &mp, half + k) - base_m);
    }
    bt_vals.push(pm * 2.0 - base_b);
    mt_vals.push(mm * 2.0 - base_m);
    let j_half = mt_vals[half];
    let bt = CubicTable::new(0.0, 1.0 + 2.0 / DENSE as f64, bt_vals, false);
    let mt = CubicTable::new(0.0, 1.0 + 2.0 / DENSE as f64, mt_vals, false);

    // Cumulative integrals of eta1/eta2 on dense grids (exact shear updates).
    let e1_dense: Vec<f64> = (0..DENSE)
        .map(|k| c * raw_eta(k as f64 / DENSE as f64, ETA1_CENTER))
        .collect();
    let e2_dense: Vec<f64> = (0..DENSE)
        .map(|k| c * raw_eta(k as f64 / DENSE as f64, ETA2_CENTER))
        .collect();
    let (e1_mean, e1p) = cumulative_periodic_integral(&e1_dense, 1.0);
    let (e2_mean, e2p) = cumulative_periodic_integral(&e2_dense, 1.0);
    let e1_per = CubicTable::new(0.0, 1.0, e1p, true);
    let e2_per = CubicTable::new(0.0, 1.0, e2p, true);

    // Envelope for CFL speed bounds.
    let env: Vec<f64> = (0..DENSE)
        .map(|k| {
            let t = k as f64 / DENSE as f64;
            (c * raw_eta(t, ETA1_CENTER)).abs().max((c * raw_eta(t, ETA2_CENTER)).abs())
        })
        .collect();
    let d1max = {
        let p1 = spectral_derivative(&e1_dense, 1.0, 1);
        let p2 = spectral_derivative(&e2_dense, 1.0, 1);
        p1.iter()
            .chain(p2.iter())
            .fold(0.0_f64, |m, &v| m.max(v.abs()))
    };
    let env_pad = d1max / DENSE as f64;

    let tables = Tables {
        bt,
        mt,
        j_half,
        e1_mean,
        e1_per,
        e2_mean,
        e2_per,
        env_max: env,
        env_pad,
    };

    let mut family = CutoffFamily {
        m,
        eps0,
        eta1,
        eta2,
        eta_tilde: PeriodicProfile {
            samples: Vec::new(),
            period: 1.25,
            origin: -0.625,
            support: vec![(-0.625, 0.625)],
        },
        c1: c,
        c2: c,
        tables: Arc::new(tables),
    };
    let tilde_samples: Vec<f64> = (0..m)
        .map(|k| family.eta_tilde_at(-0.625 + 1.25 * k as f64 / m as f64))
        .collect();
    family.eta_tilde.samples = tilde_samples;
    Ok(family)
}

impl CutoffFamily {
    /// eta1 at arbitrary tau (analytic; exactly zero outside the support).
    #[inline]
    pub fn eta1_at(&self, tau: f64) -> f64 {
        self.c1 * raw_eta(tau, ETA1_CENTER)
    }

    #[inline]
    pub fn eta2_at(&self, tau: f64) -> f64 {
        self.c2 * raw_eta(tau, ETA2_CENTER)
    }

    fn btilde(&self, y: f64) -> f64 {
        if y >= 0.0 {
            0.5 + self.tables.bt.eval(y.min(1.0))
        } else {
            0.5 - self.tables.bt.eval((-y).min(1.0))
        }
    }

    fn mtilde(&self, y: f64) -> f64 {
        self.tables.mt.eval(y.abs().min(1.0)) - self.tables.j_half
    }

    /// eta_tilde at arbitrary tau: 1 on (-3/8, 3/8), supported in
    /// [-5/8, 5/8], with exact complementary transitions.
    pub fn eta_tilde_at(&self, tau: f64) -> f64 {
        let y = tau.abs();
        if y <= 0.375 {
            return 1.0;
        }
        if y >= 0.625 {
            return 0.0;
        }
        let x = y - 0.5;
        let l = 0.25 - 2.0 * self.eps0;
        let s0 = (x - l / 2.0) / self.eps0;
        let s1 = (x + l / 2.0) / self.eps0;
        let a = s0.clamp(-1.0, 1.0);
        let b = s1.clamp(-1.0, 1.0);
        (0.5 - x / l) * (self.btilde(b) - self.btilde(a))
            + (self.eps0 / l) * (self.mtilde(b) - self.mtilde(a))
            + (1.0 - self.btilde(b))
    }

    /// Sum of the shifted copies; equals 1 for every tau.
    pub fn partition_sum(&self, tau: f64) -> f64 {
        let base = tau.round();
        (-1..=1)
            .map(|k| self.eta_tilde_at(tau - base - k as f64))
            .sum()
    }

    /// Cumulative integral of eta1 from 0 to tau.
    #[inline]
    pub fn eta1_int(&self, tau: f64) -> f64 {
        self.tables.e1_mean * tau + self.tables.e1_per.eval(tau)
    }

    #[inline]
    pub fn eta2_int(&self, tau: f64) -> f64 {
        self.tables.e2_mean * tau + self.tables.e2_per.eval(tau)
    }

    /// Mean of eta_i^2 over a period (equals 2 by the normalization).
    pub fn eta_sq_mean(&self, which: usize) -> f64 {
        match which {
            1 => self.eta1.integral_sq(),
            2 => self.eta2.integral_sq(),
            _ => panic!("which must be 1 or 2"),
        }
    }

    /// Peak of max(|eta1|, |eta2|).
    pub fn eta_max(&self) -> f64 {
        self.eta1.max_abs().max(self.eta2.max_abs())
    }

    /// Upper bound for max(|eta1|,|eta2|) over the tau-interval [t0, t1].
    pub fn eta_window_max(&self, t0: f64, t1: f64) -> f64 {
        let env = &self.tables.env_max;
        let n = env.len() as f64;
        if t1 - t0 >= 1.0 {
            return self.eta_max();
        }
        let i0 = (t0.rem_euclid(1.0) * n).floor() as usize;
        let steps = ((t1 - t0) * n).ceil() as usize + 2;
        let mut m = 0.0_f64;
        for k in 0..steps {
            m = m.max(env[(i0 + k) % env.len()]);
        }
        m + self.tables.env_pad
    }

    /// Shear-condition check: a pair (chi, eta) passes when chi depends only
    /// on the coordinate complementary to the band eta sits in, or chi is
    /// constant (generalized condition).
    pub fn check_shear_pair(&self, chi: ChiAxis, eta: &PeriodicProfile) -> bool {
        match chi {
            ChiAxis::Constant => true,
            ChiAxis::Xi1Only => support_subset(&eta.support, &self.eta1.support),
            ChiAxis::Xi2Only => support_subset(&eta.support, &self.eta2.support),
        }
    }
}

/// True when every `inner` interval is contained (mod 1) in some `outer` one.
fn support_subset(inner: &[(f64, f64)], outer: &[(f64, f64)]) -> bool {
    inner.iter().all(|&(a, b)| {
        outer.iter().any(|&(oa, ob)| {
            let shift = (a - oa).floor();
            let (a, b) = (a - shift, b - shift);
            a >= oa - 1e-12 && b <= ob + 1e-12
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn family() -> CutoffFamily {
        build_cutoffs(1024, 1.0 / 64.0).unwrap()
    }

    #[test]
    fn eta1_vanishes_at_half() {
        let f = family();
        assert_eq!(f.eta1_at(0.5), 0.0);
        assert_eq!(f.eta1_at(0.0), 0.0);
        assert_eq!(f.eta2_at(0.5), 0.0);
        assert!(f.eta1_at(0.25) > 0.0);
        assert!(f.eta2_at(0.75) > 0.0);
    }

    #[test]
    fn normalization_quadrature() {
        let f = family();
        // <eta_i^2> = 2 so that the product with int sin^2 = 1/2 is 1.
        assert!((f.eta_sq_mean(1) - 2.0).abs() < 1e-8);
        assert!((f.eta_sq_mean(2) - 2.0).abs() < 1e-8);
        let sin_sq = 0.5;
        assert!((f.eta1.integral_sq() * sin_sq - 1.0).abs() < 1e-8);
        assert!((f.eta2.integral_sq() * sin_sq - 1.0).abs() < 1e-8);
    }

    #[test]
    fn partition_of_unity_random_points() {
        let f = family();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let tau: f64 = rng.gen_range(-3.0..3.0);
            assert!((f.partition_sum(tau) - 1.0).abs() < 1e-12, "tau={tau}");
        }
        assert!((f.eta_tilde_at(0.0) - 1.0).abs() == 0.0);
        assert_eq!(f.eta_tilde_at(0.7), 0.0);
    }

    #[test]
    fn disjoint_supports() {
        let f = family();
        for k in 0..4096 {
            let t = k as f64 / 4096.0;
            assert_eq!(f.eta1_at(t) * f.eta2_at(t), 0.0);
        }
    }

    #[test]
    fn spectral_roundtrip_and_derivative_stability() {
        // Resolution independence of the first six derivatives needs the
        // bump's Fourier tail (decay ~ exp(-c sqrt(n))) well under way.
        let fa = build_cutoffs(32768, 1.0 / 64.0).unwrap();
        let fb = build_cutoffs(65536, 1.0 / 64.0).unwrap();
        assert!(fa.eta1.roundtrip_error() < 1e-12);
        assert!(fa.eta_tilde.roundtrip_error() < 1e-12);
        for p in 1..=6 {
            for (pa, pb) in [
                (&fa.eta1, &fb.eta1),
                (&fa.eta2, &fb.eta2),
                (&fa.eta_tilde, &fb.eta_tilde),
            ] {
                let da = pa.derivative_max(p);
                let db = pb.derivative_max(p);
                assert!(da.is_finite() && db.is_finite());
                assert!(
                    (da - db).abs() <= 0.01 * db.abs(),
                    "p={p} da={da} db={db}"
                );
            }
        }
    }

    #[test]
    fn shear_pair_examples() {
        let f = family();
        let eta_in_band1 = PeriodicProfile {
            samples: vec![0.0; 256],
            period: 1.0,
            origin: 0.0,
            support: vec![(0.15, 0.35)],
        };
        assert!(f.check_shear_pair(ChiAxis::Xi1Only, &eta_in_band1));
        assert!(f.check_shear_pair(ChiAxis::Constant, &eta_in_band1));
        assert!(!f.check_shear_pair(ChiAxis::Xi2Only, &eta_in_band1));
    }

    #[test]
    fn resolution_error() {
        match build_cutoffs(256, 1.0 / 64.0) {
            Err(CoreError::CutoffResolution { m, .. }) => assert_eq!(m, 256),
            other => panic!("expected resolution error, got {other:?}"),
        }
        assert!(build_cutoffs(256, 1.0 / 40.0).is_ok());
    }

    #[test]
    fn cumulative_integrals_match_quadrature() {
        let f = family();
        // E1(1) - E1(0) = int eta1 over a period
        let total = f.eta1.integral();
        assert!((f.eta1_int(1.0) - total).abs() < 1e-10);
        // derivative of E1 is eta1 (finite differences)
        for &tau in &[0.2, 0.26, 0.3, 0.33] {
            let h = 1e-6;
            let fd = (f.eta1_int(tau + h) - f.eta1_int(tau - h)) / (2.0 * h);
            assert!((fd - f.eta1_at(tau)).abs() < 1e-6, "tau={tau}");
        }
    }

    #[test]
    fn window_max_bounds_peak() {
        let f = family();
        assert!(f.eta_window_max(0.2, 0.3) >= f.eta1_at(0.25));
        assert!(f.eta_window_max(0.4, 0.6) <= 1e-12 + f.tables.env_pad);
        assert!(f.eta_window_max(-0.1, 1.05) >= f.eta_max());
    }
}
