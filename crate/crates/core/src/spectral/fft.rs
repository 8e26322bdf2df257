//! Complex FFT of arbitrary length: iterative radix-2 Cooley–Tukey for
//! powers of two, Bluestein's chirp-z reduction to a power of two otherwise.

use num_complex::Complex;

use crate::scalar::Scalar;

#[derive(Clone, Debug)]
enum Algorithm<T> {
    /// n ≤ 1
    Trivial,
    Radix2 {
        /// `exp(-2πi·j/n)` for j in 0..n/2
        twiddles: Vec<Complex<T>>,
        bitrev: Vec<usize>,
    },
    Bluestein {
        /// `exp(-πi·t²/n)` for t in 0..n
        chirp: Vec<Complex<T>>,
        /// Forward transform of the zero-padded conjugate chirp.
        kernel: Vec<Complex<T>>,
        inner: Box<FftPlan<T>>,
    },
}

/// Precomputed plan for transforms of one length.
#[derive(Clone, Debug)]
pub struct FftPlan<T> {
    len: usize,
    algo: Algorithm<T>,
}

impl<T: Scalar> FftPlan<T> {
    pub fn new(len: usize) -> Self {
        let algo = if len <= 1 {
            Algorithm::Trivial
        } else if len.is_power_of_two() {
            let twiddles = (0..len / 2)
                .map(|j| unit::<T>(-(j as f64) / len as f64))
                .collect();
            let bits = len.trailing_zeros();
            let bitrev = (0..len)
                .map(|i| i.reverse_bits() >> (usize::BITS - bits))
                .collect();
            Algorithm::Radix2 { twiddles, bitrev }
        } else {
            let m = (2 * len - 1).next_power_of_two();
            // t² mod 2n keeps the chirp angle small and exact for large t
            let chirp: Vec<Complex<T>> = (0..len)
                .map(|t| unit::<T>(-(((t * t) % (2 * len)) as f64) / (2 * len) as f64))
                .collect();
            let inner = FftPlan::new(m);
            let mut kernel = vec![Complex::new(T::zero(), T::zero()); m];
            kernel[0] = chirp[0].conj();
            for t in 1..len {
                kernel[t] = chirp[t].conj();
                kernel[m - t] = chirp[t].conj();
            }
            inner.forward(&mut kernel);
            Algorithm::Bluestein {
                chirp,
                kernel,
                inner: Box::new(inner),
            }
        };
        FftPlan { len, algo }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place `X[k] = Σ_t x[t]·exp(−2πi·k·t/n)`.
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        match &self.algo {
            Algorithm::Trivial => {}
            Algorithm::Radix2 { twiddles, bitrev } => radix2(buf, twiddles, bitrev),
            Algorithm::Bluestein {
                chirp,
                kernel,
                inner,
            } => {
                let m = inner.len();
                let mut work = vec![Complex::new(T::zero(), T::zero()); m];
                for t in 0..self.len {
                    work[t] = buf[t] * chirp[t];
                }
                inner.forward(&mut work);
                for (w, &k) in work.iter_mut().zip(kernel) {
                    *w *= k;
                }
                inner.inverse(&mut work);
                for k in 0..self.len {
                    buf[k] = work[k] * chirp[k];
                }
            }
        }
    }

    /// In-place inverse, normalized by 1/n.
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf);
        let scale = T::one() / T::of(self.len.max(1) as f64);
        for v in buf.iter_mut() {
            *v = v.conj() * scale;
        }
    }
}

fn unit<T: Scalar>(turns: f64) -> Complex<T> {
    let a = 2.0 * std::f64::consts::PI * turns;
    Complex::new(T::of(a.cos()), T::of(a.sin()))
}

fn radix2<T: Scalar>(buf: &mut [Complex<T>], twiddles: &[Complex<T>], bitrev: &[usize]) {
    let n = buf.len();
    for (i, &j) in bitrev.iter().enumerate() {
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let stride = n / size;
        for start in (0..n).step_by(size) {
            for j in 0..half {
                let w = twiddles[j * stride];
                let a = buf[start + j];
                let b = buf[start + j + half] * w;
                buf[start + j] = a + b;
                buf[start + j + half] = a - b;
            }
        }
        size *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_dft(x: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                        v * Complex::new(a.cos(), a.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_direct_dft_for_many_lengths() {
        for n in 1..=40 {
            let x: Vec<Complex<f64>> = (0..n)
                .map(|t| Complex::new((t as f64 * 1.3).sin(), (t as f64 * 0.7).cos()))
                .collect();
            let want = direct_dft(&x);
            let mut got = x.clone();
            FftPlan::new(n).forward(&mut got);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).norm() < 1e-10, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        for n in [1, 2, 3, 7, 16, 50, 64, 100] {
            let x: Vec<Complex<f64>> = (0..n)
                .map(|t| Complex::new(t as f64, -(t as f64) / 3.0))
                .collect();
            let plan = FftPlan::new(n);
            let mut y = x.clone();
            plan.forward(&mut y);
            plan.inverse(&mut y);
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }
}
