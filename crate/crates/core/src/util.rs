//! Small shared numerics: 1D spectral helpers for periodic sample sequences
//! and uniform-grid cubic interpolation.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Forward DFT of a real sequence (length preserved, unnormalized).
pub fn dft(samples: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(samples.len()).process(&mut buf);
    buf
}

pub fn idft_real(coeffs: &[Complex64]) -> Vec<f64> {
    let mut buf = coeffs.to_vec();
    FftPlanner::new().plan_fft_inverse(coeffs.len()).process(&mut buf);
    let n = coeffs.len() as f64;
    buf.iter().map(|z| z.re / n).collect()
}

/// Signed integer frequency for bin `k` of an `m`-point DFT.
pub fn freq(k: usize, m: usize) -> i64 {
    if k <= m / 2 {
        k as i64
    } else {
        k as i64 - m as i64
    }
}

/// p-th spectral derivative of a periodic sample sequence with given period.
/// Coefficients below the f64 noise floor are dropped before the (ik)^p
/// multiply; without this, rounding noise times n^p dominates high orders.
pub fn spectral_derivative(samples: &[f64], period: f64, p: u32) -> Vec<f64> {
    let m = samples.len();
    let mut c = dft(samples);
    let floor = 1e-13 * c.iter().fold(0.0_f64, |mx, z| mx.max(z.norm()));
    for (k, v) in c.iter_mut().enumerate() {
        let n = freq(k, m) as f64;
        if v.norm() < floor {
            *v = Complex64::new(0.0, 0.0);
            continue;
        }
        // Nyquist mode differentiates to zero for odd derivative orders.
        let factor = Complex64::new(0.0, 2.0 * std::f64::consts::PI * n / period).powu(p);
        *v *= factor;
        if m % 2 == 0 && k == m / 2 && p % 2 == 1 {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    idft_real(&c)
}

/// Mean-free periodic antiderivative sampled on the same grid. The input's
/// mean is ignored (treated as zero); output has zero mean.
pub fn periodic_antiderivative(samples: &[f64], period: f64) -> Vec<f64> {
    let m = samples.len();
    let mut c = dft(samples);
    c[0] = Complex64::new(0.0, 0.0);
    for (k, v) in c.iter_mut().enumerate() {
        let n = freq(k, m) as f64;
        if n != 0.0 {
            *v /= Complex64::new(0.0, 2.0 * std::f64::consts::PI * n / period);
        }
    }
    idft_real(&c)
}

/// Relative max error of the trig-interpolation round trip of `samples`.
pub fn spectral_roundtrip_error(samples: &[f64]) -> f64 {
    let back = idft_real(&dft(samples));
    let mut max_err = 0.0_f64;
    let mut max_val = 0.0_f64;
    for (a, b) in samples.iter().zip(back.iter()) {
        max_err = max_err.max((a - b).abs());
        max_val = max_val.max(a.abs());
    }
    if max_val == 0.0 {
        max_err
    } else {
        max_err / max_val
    }
}

/// Uniform-grid table over [x0, x0 + span) with optional periodic wrap,
/// evaluated by 4-point Lagrange cubic interpolation.
#[derive(Debug, Clone)]
pub struct CubicTable {
    pub x0: f64,
    pub span: f64,
    pub values: Vec<f64>,
    pub periodic: bool,
}

impl CubicTable {
    pub fn new(x0: f64, span: f64, values: Vec<f64>, periodic: bool) -> Self {
        assert!(values.len() >= 4);
        CubicTable {
            x0,
            span,
            values,
            periodic,
        }
    }

    #[inline]
    fn at_index(&self, i: i64) -> f64 {
        let m = self.values.len() as i64;
        if self.periodic {
            self.values[(i.rem_euclid(m)) as usize]
        } else {
            self.values[i.clamp(0, m - 1) as usize]
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let m = self.values.len() as f64;
        let mut s = (x - self.x0) / self.span * m;
        if self.periodic {
            s = s.rem_euclid(m);
        } else {
            s = s.clamp(0.0, m - 1.0);
        }
        let i = s.floor() as i64;
        let t = s - i as f64;
        let ym1 = self.at_index(i - 1);
        let y0 = self.at_index(i);
        let y1 = self.at_index(i + 1);
        let y2 = self.at_index(i + 2);
        let wm1 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let w0 = (t * t - 1.0) * (t - 2.0) / 2.0;
        let w1 = -t * (t + 1.0) * (t - 2.0) / 2.0;
        let w2 = t * (t * t - 1.0) / 6.0;
        wm1 * ym1 + w0 * y0 + w1 * y1 + w2 * y2
    }
}

/// Cumulative integral of uniformly sampled periodic data by spectral
/// integration: returns (mean, table of the periodic part P with P(0)=0),
/// so that the cumulative integral is `mean * x + P(x)`.
pub fn cumulative_periodic_integral(samples: &[f64], period: f64) -> (f64, Vec<f64>) {
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let mut p = periodic_antiderivative(samples, period);
    let p0 = p[0];
    for v in p.iter_mut() {
        *v -= p0;
    }
    (mean, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn derivative_of_sine() {
        let m = 256;
        let s: Vec<f64> = (0..m).map(|k| (2.0 * PI * k as f64 / m as f64).sin()).collect();
        let d = spectral_derivative(&s, 1.0, 1);
        for (k, v) in d.iter().enumerate() {
            let expect = 2.0 * PI * (2.0 * PI * k as f64 / m as f64).cos();
            assert!((v - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn antiderivative_inverts_derivative() {
        let m = 512;
        let s: Vec<f64> = (0..m)
            .map(|k| {
                let x = k as f64 / m as f64;
                (2.0 * PI * x).sin() + 0.3 * (6.0 * PI * x).cos()
            })
            .collect();
        let d = spectral_derivative(&s, 1.0, 1);
        let a = periodic_antiderivative(&d, 1.0);
        let mean = s.iter().sum::<f64>() / m as f64;
        for (orig, rec) in s.iter().zip(a.iter()) {
            assert!((orig - mean - rec).abs() < 1e-10);
        }
    }

    #[test]
    fn cubic_table_reproduces_cubics() {
        let vals: Vec<f64> = (0..64)
            .map(|k| {
                let x = k as f64 / 64.0;
                1.0 + x + 2.0 * x * x - 0.5 * x * x * x
            })
            .collect();
        let t = CubicTable::new(0.0, 1.0, vals, false);
        for j in 0..40 {
            let x = 0.05 + 0.02 * j as f64;
            let expect = 1.0 + x + 2.0 * x * x - 0.5 * x * x * x;
            assert!((t.eval(x) - expect).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn cumulative_integral_of_cosine() {
        let m = 1024;
        let s: Vec<f64> = (0..m).map(|k| (4.0 * PI * k as f64 / m as f64).cos() + 2.0).collect();
        let (mean, p) = cumulative_periodic_integral(&s, 1.0);
        assert!((mean - 2.0).abs() < 1e-12);
        for (k, v) in p.iter().enumerate().step_by(37) {
            let x = k as f64 / m as f64;
            let expect = (4.0 * PI * x).sin() / (4.0 * PI);
            assert!((v - expect).abs() < 1e-10);
        }
    }
}
