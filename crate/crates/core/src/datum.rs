//! Deterministic initial data: the unit sine mode and seeded rough data with
//! a prescribed spectral decay (counter-based ChaCha stream, so the same
//! seed gives the same field on every platform).

use crate::grid::{GridField2D, SpectralGrid, Spectrum2D};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub fn sine_datum(n: usize) -> GridField2D {
    GridField2D::from_fn(n, |x, _| (2.0 * PI * x).sin())
}

/// Zero-mean field with coefficient decay |n|^{-(2+alpha')} and uniform
/// random phases on modes 1 <= |n| <= kmax, normalized to unit L2 norm.
/// Shell L2 norms then decay like 2^{-j(1+alpha')}, the H^{1+alpha'} edge.
pub fn random_rough_datum(
    sg: &SpectralGrid,
    alpha_prime: f64,
    kmax: f64,
    seed: u64,
) -> GridField2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = Spectrum2D::zeros(sg.n);
    let kc = kmax.min(sg.dealias_kmax());
    let ki = kc.floor() as i64;
    // fixed iteration order for reproducibility; half-plane + conjugates
    for kx in -ki..=ki {
        for ky in 0..=ki {
            if ky == 0 && kx <= 0 {
                continue;
            }
            let k2 = (kx * kx + ky * ky) as f64;
            if k2 == 0.0 || k2.sqrt() > kc {
                continue;
            }
            let amp = k2.sqrt().powf(-(2.0 + alpha_prime));
            let phase: f64 = rng.gen_range(0.0..(2.0 * PI));
            let c = Complex64::from_polar(0.5 * amp, phase);
            spec.set_mode(kx, ky, c);
            spec.set_mode(-kx, -ky, c.conj());
        }
    }
    let norm = spec.l2_norm_sq().sqrt();
    let mut field = sg.to_field(&spec);
    field.scale(1.0 / norm);
    field
}
