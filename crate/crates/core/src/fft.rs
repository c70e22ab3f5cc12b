//! 2D complex FFT on square grids, tuned for the solver hot loop: row passes
//! with rayon, a single blocked transpose per direction (spectra live in
//! transposed layout), optional scaling folded into the transpose, and a
//! small buffer pool to avoid reallocation.
//!
//! Layout contract: physical data is row-major `[y][x]`; spectral data is
//! `[kx][ky]` (transposed). `forward` maps the first to the second,
//! `inverse` maps back. `inverse` is an unnormalized synthesis, which is
//! exact when the coefficients carry the 1/n^2 normalization.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::{Arc, Mutex};

pub struct Fft2 {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    pool: Mutex<Vec<Vec<Complex64>>>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            pool: Mutex::new(Vec::new()),
        }
    }

    pub fn take_buf(&self) -> Vec<Complex64> {
        self.pool
            .lock()
            .unwrap()
            .pop()
            .unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); self.n * self.n])
    }

    pub fn give_buf(&self, buf: Vec<Complex64>) {
        if buf.len() == self.n * self.n {
            let mut pool = self.pool.lock().unwrap();
            if pool.len() < 8 {
                pool.push(buf);
            }
        }
    }

    fn row_pass(&self, plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        let n = self.n;
        let threads = rayon::current_num_threads().max(1);
        let rows_per_chunk = ((n + threads * 2 - 1) / (threads * 2)).max(1);
        data.par_chunks_mut(n * rows_per_chunk).for_each(|chunk| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            plan.process_with_scratch(chunk, &mut scratch);
        });
    }

    /// Physical [y][x] -> spectral [kx][ky], scaled by `scale`.
    pub fn forward(&self, data: &mut Vec<Complex64>, scale: f64) {
        self.row_pass(&self.fwd, data);
        let mut tmp = self.take_buf();
        transpose_scaled(self.n, data, &mut tmp, scale);
        self.row_pass(&self.fwd, &mut tmp);
        std::mem::swap(data, &mut tmp);
        self.give_buf(tmp);
    }

    /// Spectral [kx][ky] -> physical [y][x]; unnormalized synthesis.
    pub fn inverse(&self, data: &mut Vec<Complex64>) {
        self.row_pass(&self.inv, data);
        let mut tmp = self.take_buf();
        transpose_scaled(self.n, data, &mut tmp, 1.0);
        self.row_pass(&self.inv, &mut tmp);
        std::mem::swap(data, &mut tmp);
        self.give_buf(tmp);
    }
}

/// Blocked out-of-place transpose of an n x n matrix with scaling.
pub fn transpose_scaled(n: usize, src: &[Complex64], dst: &mut [Complex64], scale: f64) {
    const B: usize = 32;
    let blocks = (n + B - 1) / B;
    dst.par_chunks_mut(n * B).enumerate().for_each(|(bi, out)| {
        let i0 = bi * B;
        let imax = (i0 + B).min(n);
        for bj in 0..blocks {
            let j0 = bj * B;
            let jmax = (j0 + B).min(n);
            for i in i0..imax {
                for j in j0..jmax {
                    out[(i - i0) * n + j] = src[j * n + i] * scale;
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn roundtrip_and_single_mode() {
        let n = 64;
        let fft = Fft2::new(n);
        let mut data: Vec<Complex64> = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                let x = j as f64 / n as f64;
                let y = i as f64 / n as f64;
                Complex64::new((2.0 * PI * (3.0 * x + 5.0 * y)).cos(), 0.0)
            })
            .collect();
        let orig = data.clone();
        fft.forward(&mut data, 1.0 / (n * n) as f64);
        // cos -> half weight at (kx, ky) = (3, 5) and (-3, -5); layout [kx][ky]
        let at = |kx: usize, ky: usize| data[kx * n + ky];
        assert!((at(3, 5).re - 0.5).abs() < 1e-12);
        assert!((at(n - 3, n - 5).re - 0.5).abs() < 1e-12);
        fft.inverse(&mut data);
        for (a, b) in data.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
