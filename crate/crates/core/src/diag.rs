//! Scalar diagnostics: sharp Littlewood-Paley shells on integer frequencies,
//! Hoelder-norm estimates from shell sup-norms, deep-smoothing mollifiers
//! applied spectrally, and the per-generation shell split of an initial datum.

use crate::cutoffs::bump;
use crate::error::{CoreError, Result};
use crate::grid::{GridField2D, SpectralGrid, Spectrum2D};
use crate::params::GenerationParams;
use crate::solver::SolveTrace;
use serde::Serialize;

/// Dyadic shell index of an integer-frequency modulus: shell 0 holds |n|=1,
/// shell j holds |n| in (2^{j-1}, 2^j]. The zero mode belongs to no shell.
pub fn shell_of(k2: f64) -> Option<u32> {
    if k2 <= 0.0 {
        return None;
    }
    let kn = k2.sqrt();
    if kn <= 1.0 {
        return Some(0);
    }
    Some(kn.log2().ceil() as u32)
}

/// Highest shell index present on an N x N grid.
pub fn max_shell(n: usize) -> u32 {
    let kmax = (2.0_f64).sqrt() * n as f64 / 2.0;
    kmax.log2().ceil() as u32
}

#[derive(Debug, Clone)]
pub struct ShellDecomposition {
    pub shells: Vec<GridField2D>,
    pub sup_norms: Vec<f64>,
    pub l2_norms: Vec<f64>,
    pub mean: f64,
}

impl ShellDecomposition {
    /// Sum of all shells (equals the field minus its mean).
    pub fn reconstruct(&self) -> GridField2D {
        let n = self.shells[0].n;
        let mut out = GridField2D::zeros(n);
        for s in &self.shells {
            out.add_scaled(s, 1.0);
        }
        out
    }
}

/// Project a spectrum onto one shell.
pub fn shell_project(sg: &SpectralGrid, spec: &Spectrum2D, j: u32) -> Spectrum2D {
    let n = sg.n;
    let mut out = Spectrum2D::zeros(n);
    for jx in 0..n {
        let kx = sg.freqs[jx];
        for iy in 0..n {
            let ky = sg.freqs[iy];
            if shell_of(kx * kx + ky * ky) == Some(j) {
                out.data[jx * n + iy] = spec.data[jx * n + iy];
            }
        }
    }
    out
}

/// Sharp annular Fourier decomposition of a field.
pub fn lp_decompose(sg: &SpectralGrid, field: &GridField2D) -> ShellDecomposition {
    let spec = sg.to_spectrum(field);
    lp_decompose_spec(sg, &spec)
}

pub fn lp_decompose_spec(sg: &SpectralGrid, spec: &Spectrum2D) -> ShellDecomposition {
    let jmax = max_shell(sg.n);
    let mut shells = Vec::new();
    let mut sup_norms = Vec::new();
    let mut l2_norms = Vec::new();
    for j in 0..=jmax {
        let proj = shell_project(sg, spec, j);
        let l2 = proj.l2_norm_sq().sqrt();
        let f = sg.to_field(&proj);
        sup_norms.push(f.max_abs());
        l2_norms.push(l2);
        shells.push(f);
    }
    ShellDecomposition {
        shells,
        sup_norms,
        l2_norms,
        mean: spec.mean(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderEstimate {
    pub alpha: f64,
    pub value: f64,
    /// (shell index, sup norm, weighted contribution 2^{j alpha} sup).
    pub per_shell: Vec<(u32, f64, f64)>,
}

/// Equivalent-norm Hoelder estimate max_j 2^{j alpha} |Delta_j rho|_inf,
/// truncated at the grid Nyquist (an under-estimate for unresolved scales).
pub fn holder_norm(sg: &SpectralGrid, field: &GridField2D, alpha: f64) -> HolderEstimate {
    let spec = sg.to_spectrum(field);
    holder_norm_spec(sg, &spec, alpha)
}

pub fn holder_norm_spec(sg: &SpectralGrid, spec: &Spectrum2D, alpha: f64) -> HolderEstimate {
    let jmax = max_shell(sg.n);
    let mut per_shell = Vec::new();
    let mut value = 0.0_f64;
    for j in 0..=jmax {
        let proj = shell_project(sg, spec, j);
        if proj.l2_norm_sq() == 0.0 {
            per_shell.push((j, 0.0, 0.0));
            continue;
        }
        let sup = sg.to_field(&proj).max_abs();
        let weighted = (2.0_f64).powi(j as i32).powf(alpha) * sup;
        value = value.max(weighted);
        per_shell.push((j, sup, weighted));
    }
    HolderEstimate {
        alpha,
        value,
        per_shell,
    }
}

/// kappa int_0^T |grad rho|^2 dt by the trace's trapezoid rule.
pub fn dissipation(trace: &SolveTrace) -> f64 {
    trace.dissipation()
}

/// 1D transform of the normalized bump kernel at reduced frequency s,
/// by midpoint quadrature (the kernel is smooth and compactly supported).
fn kernel_transform(s: f64) -> f64 {
    const K: usize = 2048;
    let mut mass = 0.0;
    let mut val = 0.0;
    for i in 0..K {
        let x = -1.0 + 2.0 * (i as f64 + 0.5) / K as f64;
        let m = bump(x);
        mass += m;
        val += m * (2.0 * std::f64::consts::PI * s * x).cos();
    }
    val / mass
}

/// Mollify by a compactly supported kernel of the given smoothing depth
/// (vanishing moments up to `depth`), applied as a spectral multiplier.
/// The kernel is the separable even bump for depth 1; depth 2 and 3 use the
/// two-scale combination (4/3) m_{l/2} - (1/3) m_l whose second moments
/// cancel (third moments vanish by symmetry).
pub fn mollify(sg: &SpectralGrid, field: &GridField2D, ell: f64, depth: u32) -> Result<GridField2D> {
    if !(ell > 0.0 && ell < 0.25) {
        return Err(CoreError::InvalidParam(format!(
            "mollification scale {ell} outside (0, 1/4)"
        )));
    }
    if !(1..=3).contains(&depth) {
        return Err(CoreError::InvalidParam(format!(
            "mollifier depth {depth} outside 1..=3"
        )));
    }
    let n = sg.n;
    // 1D multipliers per frequency index
    let mut m_full = vec![0.0; n];
    let mut m_half = vec![0.0; n];
    for idx in 0..n {
        let k = sg.freqs[idx];
        m_full[idx] = kernel_transform(ell * k);
        if depth >= 2 {
            m_half[idx] = kernel_transform(0.5 * ell * k);
        }
    }
    let mut spec = sg.to_spectrum(field);
    for jx in 0..n {
        for iy in 0..n {
            let mult = if depth == 1 {
                m_full[jx] * m_full[iy]
            } else {
                (4.0 / 3.0) * m_half[jx] * m_half[iy] - (1.0 / 3.0) * m_full[jx] * m_full[iy]
            };
            spec.data[jx * n + iy] *= mult;
        }
    }
    Ok(sg.to_field(&spec))
}

/// Generation shell split of a datum: bucket k >= 1 collects dyadic shells
/// with lambda_{k-1} < 2^j <= lambda_k; bucket 0 collects 2^j <= lambda_0.
/// The buckets sum to the datum minus its mean when lambda_kmax covers the
/// grid (see `covering_kmax`).
pub fn datum_shells(
    sg: &SpectralGrid,
    rho_in: &GridField2D,
    gens: &[GenerationParams],
    kmax: u32,
) -> Result<Vec<GridField2D>> {
    if (kmax as usize) >= gens.len() {
        return Err(CoreError::InvalidParam(format!(
            "kmax={kmax} exceeds available generations {}",
            gens.len()
        )));
    }
    let spec = sg.to_spectrum(rho_in);
    let dec = lp_decompose_spec(sg, &spec);
    let mut out = Vec::new();
    for k in 0..=kmax {
        let lam_hi = gens[k as usize].lambda_q as f64;
        let lam_lo = if k == 0 {
            0.0
        } else {
            gens[(k - 1) as usize].lambda_q as f64
        };
        let mut bucket = GridField2D::zeros(sg.n);
        for (j, shell) in dec.shells.iter().enumerate() {
            let two_j = (2.0_f64).powi(j as i32);
            if two_j > lam_lo && two_j <= lam_hi {
                bucket.add_scaled(shell, 1.0);
            }
        }
        out.push(bucket);
    }
    Ok(out)
}

/// Smallest kmax whose lambda covers every dyadic shell on the grid.
pub fn covering_kmax(sg: &SpectralGrid, gens: &[GenerationParams]) -> Option<u32> {
    let need = (2.0_f64).powi(max_shell(sg.n) as i32);
    gens.iter()
        .position(|g| g.lambda_q as f64 >= need)
        .map(|k| k as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const TWO_PI: f64 = 2.0 * PI;

    #[test]
    fn shell_convention() {
        assert_eq!(shell_of(1.0), Some(0));
        assert_eq!(shell_of(4.0), Some(1));
        assert_eq!(shell_of(25.0), Some(3)); // |n| = 5 in (4, 8]
        assert_eq!(shell_of(0.0), None);
    }

    #[test]
    fn single_modes_land_in_their_shells() {
        let sg = SpectralGrid::new(64).unwrap();
        let f = GridField2D::from_fn(64, |x, _| (TWO_PI * x).sin());
        let dec = lp_decompose(&sg, &f);
        assert!((dec.sup_norms[0] - 1.0).abs() < 1e-12);
        for j in 1..dec.sup_norms.len() {
            assert!(dec.sup_norms[j] < 1e-13, "shell {j}");
        }
        let g = GridField2D::from_fn(64, |x, _| (TWO_PI * 5.0 * x).sin());
        let dec2 = lp_decompose(&sg, &g);
        assert!((dec2.sup_norms[3] - 1.0).abs() < 1e-12);
        assert!(dec2.sup_norms[2] < 1e-13);
    }

    #[test]
    fn reconstruction_and_idempotency() {
        let sg = SpectralGrid::new(64).unwrap();
        let f = GridField2D::from_fn(64, |x, y| {
            0.4 + (TWO_PI * x).sin() + 0.3 * (TWO_PI * (5.0 * x + 7.0 * y)).cos()
                - 0.2 * (TWO_PI * 11.0 * y).sin()
        });
        let dec = lp_decompose(&sg, &f);
        let rec = dec.reconstruct();
        let mut centered = f.clone();
        let m = f.mean();
        centered.data.iter_mut().for_each(|v| *v -= m);
        assert!(rec.max_abs_diff(&centered) < 1e-12);
        // projections are idempotent
        let spec = sg.to_spectrum(&f);
        for j in [0, 3, 4] {
            let once = shell_project(&sg, &spec, j);
            let twice = shell_project(&sg, &once, j);
            let diff: f64 = once
                .data
                .iter()
                .zip(twice.data.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-13);
        }
    }

    #[test]
    fn holder_examples() {
        let sg = SpectralGrid::new(64).unwrap();
        let f = GridField2D::from_fn(64, |x, _| (TWO_PI * x).sin());
        let h = holder_norm(&sg, &f, 0.3);
        assert!((h.value - 1.0).abs() < 1e-12);
        assert!(h.value >= h.per_shell[0].1);
        // homogeneity
        let mut g = f.clone();
        g.scale(-2.5);
        let h2 = holder_norm(&sg, &g, 0.3);
        assert!(((h2.value - 2.5 * h.value) / h.value).abs() < 1e-12);
        // shell shift: rho(2^m x) scales the estimate by 2^{m alpha}
        let shifted = GridField2D::from_fn(64, |x, _| (TWO_PI * 4.0 * x).sin());
        let h3 = holder_norm(&sg, &shifted, 0.3);
        let expect = (2.0_f64).powf(2.0 * 0.3);
        assert!(((h3.value - expect) / expect).abs() < 1e-12);
    }

    #[test]
    fn holder_monotone_in_alpha_on_high_shell() {
        let sg = SpectralGrid::new(64).unwrap();
        let f = GridField2D::from_fn(64, |x, y| (TWO_PI * (5.0 * x + 3.0 * y)).sin());
        let mut prev = 0.0;
        for alpha in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let h = holder_norm(&sg, &f, alpha);
            assert!(h.value >= prev);
            prev = h.value;
        }
    }

    #[test]
    fn mollifier_preserves_constants_and_damps_modes() {
        let sg = SpectralGrid::new(64).unwrap();
        let c = GridField2D::from_fn(64, |_, _| 2.3);
        for depth in 1..=3 {
            let out = mollify(&sg, &c, 0.1, depth).unwrap();
            assert!(out.max_abs_diff(&c) < 1e-12, "depth {depth}");
        }
        let f = GridField2D::from_fn(64, |x, _| (TWO_PI * x).sin());
        let out = mollify(&sg, &f, 0.1, 1).unwrap();
        let ratio = out.max_abs() / f.max_abs();
        assert!(ratio < 1.0 && ratio > 0.5);
    }

    #[test]
    fn mollifier_depth_improves_approximation_order() {
        // |f - f*m_l|_2 <= C l^s |f|_{H^s}; with depth >= 2 the kernel kills
        // second moments, so the error on a smooth mode drops at l^4 rather
        // than l^2.
        let sg = SpectralGrid::new(64).unwrap();
        let f = GridField2D::from_fn(64, |x, y| (TWO_PI * x).sin() + (TWO_PI * y).cos());
        for (depth, expect_order) in [(1, 2.0), (2, 4.0)] {
            let mut errs = Vec::new();
            for ell in [0.02, 0.01] {
                let out = mollify(&sg, &f, ell, depth).unwrap();
                let mut diff = out.clone();
                diff.add_scaled(&f, -1.0);
                errs.push(diff.l2_norm());
            }
            let order = (errs[0] / errs[1]).log2();
            assert!(
                (order - expect_order).abs() < 0.35,
                "depth {depth}: order {order}, errs {errs:?}"
            );
        }
    }

    #[test]
    fn mollify_commutes_with_grid_shift() {
        let sg = SpectralGrid::new(32).unwrap();
        let f = GridField2D::from_fn(32, |x, y| (TWO_PI * (x + 2.0 * y)).sin() + 0.5);
        let shift = 5usize;
        let shifted = GridField2D::from_fn(32, |x, y| {
            let xs = x + shift as f64 / 32.0;
            (TWO_PI * (xs + 2.0 * y)).sin() + 0.5
        });
        let a = mollify(&sg, &shifted, 0.07, 2).unwrap();
        let b = mollify(&sg, &f, 0.07, 2).unwrap();
        // shift b by the same grid offset and compare exactly
        let b_shifted = GridField2D::from_fn(32, |x, y| {
            let j = ((x * 32.0).round() as usize + shift) % 32;
            let i = (y * 32.0).round() as usize;
            b.data[i * 32 + j]
        });
        assert!(a.max_abs_diff(&b_shifted) < 1e-12);
    }

    #[test]
    fn datum_shell_split() {
        use crate::params::{derive_generation, AbsoluteParams};
        let sg = SpectralGrid::new(128).unwrap();
        let abs = AbsoluteParams::desk();
        let gens: Vec<_> = (0..6).map(|q| derive_generation(&abs, q).unwrap()).collect();
        // band-limited below lambda_0 = 16: all mass in bucket 0
        let f = GridField2D::from_fn(128, |x, y| {
            (TWO_PI * 3.0 * x).sin() + (TWO_PI * (5.0 * y + x)).cos()
        });
        let kmax = covering_kmax(&sg, &gens).unwrap();
        let shells = datum_shells(&sg, &f, &gens, kmax).unwrap();
        assert!(shells[0].l2_norm() > 0.9 * f.l2_norm());
        for s in shells.iter().skip(1) {
            assert!(s.l2_norm() < 1e-12);
        }
        // reconstruction for a broad-band field
        let g = GridField2D::from_fn(128, |x, y| {
            (TWO_PI * 3.0 * x).sin() + 0.2 * (TWO_PI * 40.0 * y).cos() + 0.05 * (TWO_PI * 60.0 * x).sin()
        });
        let shells2 = datum_shells(&sg, &g, &gens, kmax).unwrap();
        let mut rec = GridField2D::zeros(128);
        for s in &shells2 {
            rec.add_scaled(s, 1.0);
        }
        let mut centered = g.clone();
        let m = g.mean();
        centered.data.iter_mut().for_each(|v| *v -= m);
        assert!(rec.max_abs_diff(&centered) < 1e-12);
    }
}
