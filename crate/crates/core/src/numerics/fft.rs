//! Discrete Fourier transform for arbitrary lengths.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley-Tukey FFT; every
//! other length falls back to the direct O(n²) sum. Forward transform has
//! no scaling, the inverse divides by `n`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Spectrum of a length-`n` signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    values: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn new(values: Vec<Complex64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("spectrum must be non-empty".into()));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Elementwise product, the frequency-domain form of circular convolution.
    pub fn mul(&self, other: &ComplexSpectrum) -> Result<ComplexSpectrum> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "spectrum length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(ComplexSpectrum {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }
}

pub fn dft(signal: &[f64]) -> Result<ComplexSpectrum> {
    if signal.is_empty() {
        return Err(Error::Shape("cannot transform an empty signal".into()));
    }
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    transform(&mut buf, false);
    Ok(ComplexSpectrum { values: buf })
}

/// Inverse transform, returning the real part.
pub fn idft(spectrum: &ComplexSpectrum) -> Result<Vec<f64>> {
    if spectrum.is_empty() {
        return Err(Error::Shape("cannot invert an empty spectrum".into()));
    }
    let mut buf = spectrum.values.clone();
    transform(&mut buf, true);
    let n = buf.len() as f64;
    Ok(buf.into_iter().map(|z| z.re / n).collect())
}

fn transform(buf: &mut Vec<Complex64>, inverse: bool) {
    if buf.len().is_power_of_two() {
        radix2(buf, inverse);
    } else {
        *buf = direct(buf, inverse);
    }
}

/// `exp(sign * 2πi k / n)` for `k in 0..n`.
fn twiddles(n: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / n as f64))
        .collect()
}

fn direct(input: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = input.len();
    let w = twiddles(n, inverse);
    (0..n)
        .map(|k| input.iter().enumerate().map(|(j, x)| x * w[(j * k) % n]).sum())
        .collect()
}

fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let w = twiddles(n, inverse);
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let t = buf[start + k + half] * w[k * stride];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
            }
        }
        len <<= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn naive(signal: &[f64]) -> Vec<Complex64> {
        let n = signal.len();
        (0..n)
            .map(|k| {
                signal
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| {
                        let a = -2.0 * PI * (j * k) as f64 / n as f64;
                        Complex64::new(x * a.cos(), x * a.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn delta_transforms_to_ones() {
        let s = dft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        for z in s.values() {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_has_only_dc() {
        for n in [8, 12] {
            let s = dft(&vec![2.5; n]).unwrap();
            assert!((s.values()[0].re - 2.5 * n as f64).abs() < 1e-12);
            for z in &s.values()[1..] {
                assert!(z.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_input_is_shape_error() {
        assert!(matches!(dft(&[]), Err(Error::Shape(_))));
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = Rng::new(7);
        for n in [1usize, 2, 8, 64, 360, 361, 512] {
            let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let spec = dft(&x).unwrap();
            let back = idft(&spec).unwrap();
            let err = x
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n} round-trip err {err}");

            let time: f64 = x.iter().map(|v| v * v).sum();
            let freq: f64 = spec.values().iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
            assert!((time - freq).abs() <= 1e-8 * time.max(1e-300), "n={n} parseval");
        }
    }

    #[test]
    fn fast_path_matches_naive_sum() {
        let mut rng = Rng::new(3);
        for n in [2usize, 16, 256, 7, 45] {
            let x: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let fast = dft(&x).unwrap();
            for (a, b) in fast.values().iter().zip(naive(&x)) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }
}
