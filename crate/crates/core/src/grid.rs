//! Periodic N x N grid fields on the unit torus with physical and spectral
//! views. Coefficients follow the integer-frequency convention
//! `rho(x) = sum_k c_k exp(2 pi i k.x)`: the zero mode is the mean and
//! Parseval reads `int |rho|^2 = sum_k |c_k|^2`.
//!
//! Physical fields are row-major `[y][x]`; spectra are stored transposed,
//! `[kx][ky]` (see `fft`), which saves one transpose per direction.

use crate::error::{CoreError, Result};
use crate::fft::Fft2;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::io::Write;

/// Real samples at x = (j/n, i/n), row-major with row index i = y.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField2D {
    pub n: usize,
    pub data: Vec<f64>,
}

impl GridField2D {
    pub fn zeros(n: usize) -> Self {
        GridField2D {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Sample a function of (x, y) on the grid.
    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let y = i as f64 / n as f64;
            for (j, v) in row.iter_mut().enumerate() {
                *v = f(j as f64 / n as f64, y);
            }
        });
        GridField2D { n, data }
    }

    pub fn mean(&self) -> f64 {
        self.data.chunks(4096).map(|c| c.iter().sum::<f64>()).sum::<f64>()
            / (self.n * self.n) as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .chunks(4096)
            .map(|c| c.iter().fold(0.0_f64, |m, &v| m.max(v.abs())))
            .fold(0.0_f64, f64::max)
    }

    pub fn max_abs_diff(&self, other: &GridField2D) -> f64 {
        assert_eq!(self.n, other.n, "grid size mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0_f64, |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Discrete L2 norm over the unit torus.
    pub fn l2_norm(&self) -> f64 {
        (self
            .data
            .chunks(4096)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / (self.n * self.n) as f64)
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.par_chunks_mut(4096).for_each(|c| {
            for v in c {
                *v *= s;
            }
        });
    }

    pub fn add_scaled(&mut self, other: &GridField2D, s: f64) {
        self.data
            .par_chunks_mut(4096)
            .zip(other.data.par_chunks(4096))
            .for_each(|(a, b)| {
                for (x, y) in a.iter_mut().zip(b.iter()) {
                    *x += s * y;
                }
            });
    }

    /// Row-major flat binary snapshot: u64 n, f64 t, u64 tag_len, tag bytes,
    /// then n*n little-endian f64 samples.
    pub fn write_binary(&self, w: &mut impl Write, t: f64, tag: &str) -> std::io::Result<()> {
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&t.to_le_bytes())?;
        w.write_all(&(tag.len() as u64).to_le_bytes())?;
        w.write_all(tag.as_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "x,y,value")?;
        for i in 0..self.n {
            for j in 0..self.n {
                writeln!(
                    w,
                    "{},{},{:.15e}",
                    j as f64 / self.n as f64,
                    i as f64 / self.n as f64,
                    self.data[i * self.n + j]
                )?;
            }
        }
        Ok(())
    }
}

/// Fourier coefficients in transposed layout: index `kx_idx * n + ky_idx`.
#[derive(Debug, Clone)]
pub struct Spectrum2D {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum2D {
    pub fn zeros(n: usize) -> Self {
        Spectrum2D {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    #[inline]
    pub fn idx(&self, kx: i64, ky: i64) -> usize {
        let n = self.n as i64;
        (kx.rem_euclid(n) * n + ky.rem_euclid(n)) as usize
    }

    pub fn mode(&self, kx: i64, ky: i64) -> Complex64 {
        self.data[self.idx(kx, ky)]
    }

    pub fn set_mode(&mut self, kx: i64, ky: i64, v: Complex64) {
        let i = self.idx(kx, ky);
        self.data[i] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data[0].re
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.data
            .chunks(4096)
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }
}

/// Spectral context for one grid size: FFT plans, frequency tables, dealias
/// mask. Construct once per N and share (all methods take &self).
pub struct SpectralGrid {
    pub n: usize,
    fft: Fft2,
    /// Signed integer frequency for each index.
    pub freqs: Vec<f64>,
    /// Two-thirds-rule keep mask per flattened spectral index.
    keep: Vec<bool>,
}

impl SpectralGrid {
    pub fn new(n: usize) -> Result<Self> {
        if !n.is_power_of_two() || n < 8 {
            return Err(CoreError::BadGrid(n));
        }
        let freqs: Vec<f64> = (0..n)
            .map(|k| {
                if k <= n / 2 {
                    k as f64
                } else {
                    k as f64 - n as f64
                }
            })
            .collect();
        let kmax = (n as f64) / 3.0;
        let mut keep = vec![false; n * n];
        for jx in 0..n {
            for iy in 0..n {
                let kx = freqs[jx].abs();
                let ky = freqs[iy].abs();
                keep[jx * n + iy] = kx <= kmax && ky <= kmax && jx != n / 2 && iy != n / 2;
            }
        }
        Ok(SpectralGrid {
            n,
            fft: Fft2::new(n),
            freqs,
            keep,
        })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Largest integer frequency kept by the dealias rule.
    pub fn dealias_kmax(&self) -> f64 {
        (self.n as f64) / 3.0
    }

    pub fn to_spectrum(&self, field: &GridField2D) -> Spectrum2D {
        assert_eq!(field.n, self.n);
        let mut data = self.fft.take_buf();
        data.par_chunks_mut(4096)
            .zip(field.data.par_chunks(4096))
            .for_each(|(dst, src)| {
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d = Complex64::new(*s, 0.0);
                }
            });
        self.fft.forward(&mut data, 1.0 / (self.n * self.n) as f64);
        Spectrum2D { n: self.n, data }
    }

    pub fn to_field(&self, spec: &Spectrum2D) -> GridField2D {
        let mut data = self.fft.take_buf();
        data.copy_from_slice(&spec.data);
        self.fft.inverse(&mut data);
        let mut out = vec![0.0; self.n * self.n];
        out.par_chunks_mut(4096)
            .zip(data.par_chunks(4096))
            .for_each(|(dst, src)| {
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d = s.re;
                }
            });
        self.fft.give_buf(data);
        GridField2D { n: self.n, data: out }
    }

    /// Two real fields from two Hermitian spectra with one complex transform.
    pub fn to_field_pair(&self, a: &Spectrum2D, b: &Spectrum2D) -> (GridField2D, GridField2D) {
        let mut data = self.fft.take_buf();
        data.par_chunks_mut(4096)
            .zip(a.data.par_chunks(4096).zip(b.data.par_chunks(4096)))
            .for_each(|(dst, (ca, cb))| {
                for ((d, za), zb) in dst.iter_mut().zip(ca.iter()).zip(cb.iter()) {
                    *d = za + Complex64::new(-zb.im, zb.re);
                }
            });
        self.fft.inverse(&mut data);
        let mut fa = vec![0.0; self.n * self.n];
        let mut fb = vec![0.0; self.n * self.n];
        fa.par_chunks_mut(4096)
            .zip(fb.par_chunks_mut(4096))
            .zip(data.par_chunks(4096))
            .for_each(|((da, db), src)| {
                for ((x, y), z) in da.iter_mut().zip(db.iter_mut()).zip(src.iter()) {
                    *x = z.re;
                    *y = z.im;
                }
            });
        self.fft.give_buf(data);
        (
            GridField2D { n: self.n, data: fa },
            GridField2D { n: self.n, data: fb },
        )
    }

    /// Two spectra from two real fields with one complex transform.
    pub fn to_spectrum_pair(&self, a: &GridField2D, b: &GridField2D) -> (Spectrum2D, Spectrum2D) {
        let n = self.n;
        let mut data = self.fft.take_buf();
        data.par_chunks_mut(4096)
            .zip(a.data.par_chunks(4096).zip(b.data.par_chunks(4096)))
            .for_each(|(dst, (ra, rb))| {
                for ((d, x), y) in dst.iter_mut().zip(ra.iter()).zip(rb.iter()) {
                    *d = Complex64::new(*x, *y);
                }
            });
        self.fft.forward(&mut data, 1.0 / (n * n) as f64);
        // c_a(k) = (z(k) + conj z(-k))/2, c_b(k) = (z(k) - conj z(-k))/(2i)
        let mut sa = Spectrum2D::zeros(n);
        let mut sb = Spectrum2D::zeros(n);
        sa.data
            .par_chunks_mut(n)
            .zip(sb.data.par_chunks_mut(n))
            .enumerate()
            .for_each(|(jx, (ra, rb))| {
                let jm = (n - jx) % n;
                for iy in 0..n {
                    let im = (n - iy) % n;
                    let z = data[jx * n + iy];
                    let zm = data[jm * n + im].conj();
                    ra[iy] = (z + zm) * 0.5;
                    let d = z - zm;
                    rb[iy] = Complex64::new(d.im, -d.re) * 0.5;
                }
            });
        self.fft.give_buf(data);
        (sa, sb)
    }

    /// Zero every mode outside the two-thirds band (and the Nyquist line).
    pub fn dealias(&self, spec: &mut Spectrum2D) {
        spec.data
            .par_chunks_mut(4096)
            .zip(self.keep.par_chunks(4096))
            .for_each(|(c, k)| {
                for (v, keep) in c.iter_mut().zip(k.iter()) {
                    if !*keep {
                        *v = Complex64::new(0.0, 0.0);
                    }
                }
            });
    }

    /// d/dx spectrum (multiply by 2 pi i kx; row-constant in this layout).
    pub fn dx(&self, spec: &Spectrum2D) -> Spectrum2D {
        let n = self.n;
        let data: Vec<Complex64> = spec
            .data
            .par_chunks(n)
            .enumerate()
            .flat_map_iter(|(jx, row)| {
                let f = Complex64::new(0.0, 2.0 * PI * self.freqs[jx]);
                row.iter().map(move |s| f * s)
            })
            .collect();
        Spectrum2D { n, data }
    }

    /// d/dy spectrum (multiply by 2 pi i ky).
    pub fn dy(&self, spec: &Spectrum2D) -> Spectrum2D {
        let n = self.n;
        let data: Vec<Complex64> = spec
            .data
            .par_chunks(n)
            .flat_map_iter(|row| {
                row.iter().enumerate().map(|(iy, s)| {
                    Complex64::new(0.0, 2.0 * PI * self.freqs[iy]) * s
                })
            })
            .collect();
        Spectrum2D { n, data }
    }

    /// Physical gradient fields of a spectrum in one packed inverse transform.
    pub fn grad_fields(&self, spec: &Spectrum2D) -> (GridField2D, GridField2D) {
        let gx = self.dx(spec);
        let gy = self.dy(spec);
        self.to_field_pair(&gx, &gy)
    }

    /// Perpendicular gradient (stream function to velocity): u = d/dy psi,
    /// v = -d/dx psi, exactly divergence-free in spectral space.
    pub fn grad_perp_fields(&self, psi: &Spectrum2D) -> (GridField2D, GridField2D) {
        let u = self.dy(psi);
        let mut v = self.dx(psi);
        v.data.par_chunks_mut(4096).for_each(|c| {
            for z in c {
                *z = -*z;
            }
        });
        self.to_field_pair(&u, &v)
    }

    /// int |grad rho|^2 over the torus, by Parseval.
    pub fn grad_norm_sq(&self, spec: &Spectrum2D) -> f64 {
        let n = self.n;
        spec.data
            .chunks(n)
            .enumerate()
            .map(|(jx, row)| {
                let kx = self.freqs[jx];
                row.iter()
                    .enumerate()
                    .map(|(iy, z)| {
                        let ky = self.freqs[iy];
                        (2.0 * PI).powi(2) * (kx * kx + ky * ky) * z.norm_sqr()
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// Fractional Sobolev seminorm squared: sum (2 pi |k|)^{2s} |c_k|^2.
    pub fn hs_seminorm_sq(&self, spec: &Spectrum2D, s: f64) -> f64 {
        let n = self.n;
        spec.data
            .chunks(n)
            .enumerate()
            .map(|(jx, row)| {
                let kx = self.freqs[jx];
                row.iter()
                    .enumerate()
                    .map(|(iy, z)| {
                        let ky = self.freqs[iy];
                        let k2 = kx * kx + ky * ky;
                        if k2 == 0.0 {
                            0.0
                        } else {
                            (2.0 * PI * k2.sqrt()).powf(2.0 * s) * z.norm_sqr()
                        }
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// max_k |k . u_k| relative to ||u||_2: zero for curl-built velocities.
    pub fn divergence_rel(&self, u: &Spectrum2D, v: &Spectrum2D) -> f64 {
        let n = self.n;
        let mut sup = 0.0_f64;
        for jx in 0..n {
            let kx = self.freqs[jx];
            for iy in 0..n {
                let ky = self.freqs[iy];
                let d = kx * u.data[jx * n + iy] + ky * v.data[jx * n + iy];
                sup = sup.max(d.norm());
            }
        }
        let norm = (u.l2_norm_sq() + v.l2_norm_sq()).sqrt();
        if norm == 0.0 {
            sup
        } else {
            sup / norm
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_roundtrip_and_mean() {
        let sg = SpectralGrid::new(64).unwrap();
        let f = GridField2D::from_fn(64, |x, y| {
            0.7 + (2.0 * PI * x).sin() * (2.0 * PI * 3.0 * y).cos()
        });
        let spec = sg.to_spectrum(&f);
        assert!((spec.mean() - 0.7).abs() < 1e-13);
        assert!((spec.mean() - f.mean()).abs() < 1e-13);
        let back = sg.to_field(&spec);
        assert!(f.max_abs_diff(&back) < 1e-12);
    }

    #[test]
    fn mode_layout_matches_convention() {
        let sg = SpectralGrid::new(32).unwrap();
        // rho = exp-form: cos(2 pi (3x + 5y)) has c_(3,5) = c_(-3,-5) = 1/2
        let f = GridField2D::from_fn(32, |x, y| (2.0 * PI * (3.0 * x + 5.0 * y)).cos());
        let spec = sg.to_spectrum(&f);
        assert!((spec.mode(3, 5).re - 0.5).abs() < 1e-12);
        assert!((spec.mode(-3, -5).re - 0.5).abs() < 1e-12);
        assert!(spec.mode(5, 3).norm() < 1e-12);
    }

    #[test]
    fn derivative_of_plane_wave() {
        let sg = SpectralGrid::new(64).unwrap();
        let f = GridField2D::from_fn(64, |x, _| (2.0 * PI * 5.0 * x).sin());
        let spec = sg.to_spectrum(&f);
        let fx = sg.to_field(&sg.dx(&spec));
        let expect = GridField2D::from_fn(64, |x, _| 2.0 * PI * 5.0 * (2.0 * PI * 5.0 * x).cos());
        assert!(fx.max_abs_diff(&expect) < 1e-10);
        let fy = sg.to_field(&sg.dy(&spec));
        assert!(fy.max_abs() < 1e-12);
        let g = GridField2D::from_fn(64, |_, y| (2.0 * PI * 4.0 * y).sin());
        let gy = sg.to_field(&sg.dy(&sg.to_spectrum(&g)));
        let gexpect = GridField2D::from_fn(64, |_, y| 2.0 * PI * 4.0 * (2.0 * PI * 4.0 * y).cos());
        assert!(gy.max_abs_diff(&gexpect) < 1e-10);
    }

    #[test]
    fn packed_pair_transforms() {
        let sg = SpectralGrid::new(32).unwrap();
        let a = GridField2D::from_fn(32, |x, y| (2.0 * PI * (x + 2.0 * y)).cos() + 0.3);
        let b = GridField2D::from_fn(32, |x, y| (2.0 * PI * (3.0 * x - y)).sin() - 1.1);
        let (sa, sb) = sg.to_spectrum_pair(&a, &b);
        let ra = sg.to_spectrum(&a);
        let rb = sg.to_spectrum(&b);
        for k in 0..sa.data.len() {
            assert!((sa.data[k] - ra.data[k]).norm() < 1e-12);
            assert!((sb.data[k] - rb.data[k]).norm() < 1e-12);
        }
        let (fa, fb) = sg.to_field_pair(&sa, &sb);
        assert!(fa.max_abs_diff(&a) < 1e-12);
        assert!(fb.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn parseval_and_grad_norm() {
        let sg = SpectralGrid::new(64).unwrap();
        let f = GridField2D::from_fn(64, |x, _| (2.0 * PI * x).sin());
        let spec = sg.to_spectrum(&f);
        assert!((spec.l2_norm_sq() - 0.5).abs() < 1e-12);
        assert!((sg.grad_norm_sq(&spec) - 0.5 * 4.0 * PI * PI).abs() < 1e-9);
    }

    #[test]
    fn grad_perp_is_divergence_free() {
        let sg = SpectralGrid::new(64).unwrap();
        let psi = GridField2D::from_fn(64, |x, y| {
            (2.0 * PI * (3.0 * x + y)).sin() + (2.0 * PI * (x - 4.0 * y)).cos()
        });
        let spec = sg.to_spectrum(&psi);
        let (u, v) = sg.grad_perp_fields(&spec);
        let (su, sv) = sg.to_spectrum_pair(&u, &v);
        assert!(sg.divergence_rel(&su, &sv) < 1e-12);
    }

    #[test]
    fn dealias_kills_high_modes() {
        let sg = SpectralGrid::new(32).unwrap();
        let f = GridField2D::from_fn(32, |x, _| (2.0 * PI * 13.0 * x).cos());
        let mut spec = sg.to_spectrum(&f);
        sg.dealias(&mut spec);
        assert!(spec.l2_norm_sq() < 1e-25);
        let g = GridField2D::from_fn(32, |x, _| (2.0 * PI * 5.0 * x).cos());
        let mut spec2 = sg.to_spectrum(&g);
        sg.dealias(&mut spec2);
        assert!((spec2.l2_norm_sq() - 0.5).abs() < 1e-12);
    }
}
