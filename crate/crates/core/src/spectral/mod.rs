//! Real DFT along the sequence axis and the low/high frequency split used
//! by the BSARec inductive-bias branch.
//!
//! Signals are `[L, d]` tensors (one column per embedding dimension); the
//! transform runs down each column. A spectrum holds `⌊L/2⌋ + 1` bins.

mod fft;

pub use fft::FftPlan;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the low band is extracted inside an encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FilterMode {
    /// Output row t only depends on rows ≤ t: each row is the last row of
    /// the window filter applied to the zero-padded prefix ending at t. The
    /// final row of a window is identical to [`FilterMode::Window`].
    #[default]
    Causal,
    /// Whole-window rFFT, zero the high bins, inverse rFFT.
    Window,
}

impl FilterMode {
    pub fn name(self) -> &'static str {
        match self {
            FilterMode::Causal => "causal",
            FilterMode::Window => "window",
        }
    }
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(FilterMode::Causal),
            "window" => Ok(FilterMode::Window),
            other => Err(Error::Config(format!("unknown filter mode `{other}`"))),
        }
    }
}

/// Cutoff and β settings for one model's frequency re-scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralConfig {
    /// Number of lowest rFFT bins (DC included) assigned to the low band.
    pub cutoff: usize,
    /// Initial value of the learnable β.
    pub beta_init: f64,
    /// One β per embedding dimension instead of a single scalar.
    pub per_dim_beta: bool,
    pub mode: FilterMode,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            cutoff: 1,
            beta_init: 0.7,
            per_dim_beta: false,
            mode: FilterMode::Causal,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self, len: usize) -> Result<()> {
        let bins = bin_count(len);
        if self.cutoff < 1 || self.cutoff > bins {
            return Err(Error::Config(format!(
                "cutoff {} outside 1..={bins} for sequence length {len}",
                self.cutoff
            )));
        }
        if !self.beta_init.is_finite() {
            return Err(Error::Config("beta_init must be finite".into()));
        }
        Ok(())
    }
}

/// Number of rFFT bins for a length-`len` signal.
pub fn bin_count(len: usize) -> usize {
    len / 2 + 1
}

/// Half spectrum of a real `[L, d]` signal, stored `[bins, d]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    bins: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn new(bins: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != bins * cols {
            return Err(Error::shape("spectrum", &[bins, cols], &[data.len()]));
        }
        Ok(Spectrum { bins, cols, data })
    }

    pub fn zeros(bins: usize, cols: usize) -> Self {
        Spectrum {
            bins,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); bins * cols],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, bin: usize, col: usize) -> Complex<T> {
        self.data[bin * self.cols + col]
    }

    pub fn set(&mut self, bin: usize, col: usize, v: Complex<T>) {
        self.data[bin * self.cols + col] = v;
    }

    /// Σ|X_k|² over the full (mirrored) spectrum for one column.
    pub fn full_energy(&self, col: usize, len: usize) -> T {
        (0..self.bins)
            .map(|k| {
                let e = self.get(k, col).norm_sqr();
                let mirrored = k != 0 && !(len.is_multiple_of(2) && k == len / 2);
                if mirrored {
                    e + e
                } else {
                    e
                }
            })
            .sum()
    }
}

/// Forward real DFT down each column of `x[L, d]`.
pub fn rfft_seq<T: Scalar>(x: &Tensor<T>) -> Result<Spectrum<T>> {
    let (len, d) = x.as_matrix("rfft_seq")?;
    if len == 0 {
        return Err(Error::shape("rfft_seq", x.shape(), &[1, d]));
    }
    Ok(rfft_columns(&FftPlan::new(len), x.data(), d))
}

/// Inverse of [`rfft_seq`] for a length-`len` signal.
pub fn irfft_seq<T: Scalar>(spec: &Spectrum<T>, len: usize) -> Result<Tensor<T>> {
    if len == 0 || spec.bins != bin_count(len) {
        return Err(Error::shape(
            "irfft_seq",
            &[spec.bins, spec.cols],
            &[bin_count(len), len],
        ));
    }
    let data = irfft_columns(&FftPlan::new(len), spec);
    Tensor::new(&[len, spec.cols], data)
}

fn rfft_columns<T: Scalar>(plan: &FftPlan<T>, x: &[T], d: usize) -> Spectrum<T> {
    let len = plan.len();
    let bins = bin_count(len);
    let mut out = Spectrum::zeros(bins, d);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); len];
    for j in 0..d {
        for (t, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(x[t * d + j], T::zero());
        }
        plan.forward(&mut buf);
        for k in 0..bins {
            out.set(k, j, buf[k]);
        }
    }
    out
}

fn irfft_columns<T: Scalar>(plan: &FftPlan<T>, spec: &Spectrum<T>) -> Vec<T> {
    let len = plan.len();
    let d = spec.cols;
    let mut out = vec![T::zero(); len * d];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); len];
    for j in 0..d {
        for k in 0..spec.bins {
            buf[k] = spec.get(k, j);
        }
        for k in spec.bins..len {
            buf[k] = spec.get(len - k, j).conj();
        }
        // DC and Nyquist bins are treated as real
        buf[0].im = T::zero();
        if len.is_multiple_of(2) {
            buf[len / 2].im = T::zero();
        }
        plan.inverse(&mut buf);
        for t in 0..len {
            out[t * d + j] = buf[t].re;
        }
    }
    out
}

/// Low-band extractor for sequences of a fixed length.
///
/// Operates on `[sequences·len, d]` buffers, one sequence after another.
#[derive(Clone, Debug)]
pub struct FrequencyFilter<T> {
    len: usize,
    cutoff: usize,
    mode: FilterMode,
    plan: FftPlan<T>,
    /// Causal mode: impulse response of the window low-pass.
    taps: Vec<T>,
}

impl<T: Scalar> FrequencyFilter<T> {
    pub fn new(len: usize, cutoff: usize, mode: FilterMode) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        let bins = bin_count(len);
        if cutoff < 1 || cutoff > bins {
            return Err(Error::Config(format!(
                "cutoff {cutoff} outside 1..={bins} for sequence length {len}"
            )));
        }
        match mode {
            FilterMode::Window => Ok(FrequencyFilter {
                len,
                cutoff,
                mode,
                plan: FftPlan::new(len),
                taps: Vec::new(),
            }),
            FilterMode::Causal => Ok(FrequencyFilter {
                len,
                cutoff,
                mode,
                plan: FftPlan::new(len),
                taps: low_pass_kernel(len, cutoff),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn mode(&self) -> FilterMode {
        self.mode
    }

    /// Low band of every sequence in `x` (`[S·len, d]`).
    pub fn low_pass(&self, x: &[T], d: usize) -> Vec<T> {
        self.apply(x, d, false)
    }

    /// Adjoint of [`FrequencyFilter::low_pass`], used for gradients.
    pub fn low_pass_transpose(&self, g: &[T], d: usize) -> Vec<T> {
        self.apply(g, d, true)
    }

    fn apply(&self, x: &[T], d: usize, transpose: bool) -> Vec<T> {
        let block = self.len * d;
        let mut out = Vec::with_capacity(x.len());
        for seq in x.chunks(block) {
            match self.mode {
                // the window projection is symmetric
                FilterMode::Window => out.extend(self.window_low(seq, d)),
                FilterMode::Causal if transpose => {
                    let rev = reverse_rows(seq, d);
                    out.extend(reverse_rows(&self.causal_low(&rev, d), d));
                }
                FilterMode::Causal => out.extend(self.causal_low(seq, d)),
            }
        }
        out
    }

    fn window_low(&self, seq: &[T], d: usize) -> Vec<T> {
        let mut spec = rfft_columns(&self.plan, seq, d);
        for k in self.cutoff..spec.bins {
            for j in 0..d {
                spec.set(k, j, Complex::new(T::zero(), T::zero()));
            }
        }
        irfft_columns(&self.plan, &spec)
    }

    /// `y[t] = Σ_{s ≤ t} k[t − s]·x[s]`, evaluated directly so that row t
    /// depends on rows `≤ t` only, exactly.
    fn causal_low(&self, seq: &[T], d: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.len * d];
        for t in 0..self.len {
            let row = &mut out[t * d..(t + 1) * d];
            for s in 0..=t {
                let k = self.taps[t - s];
                for (o, &x) in row.iter_mut().zip(&seq[s * d..(s + 1) * d]) {
                    *o += k * x;
                }
            }
        }
        out
    }
}

/// Impulse response of the window low-pass for bins `[0, cutoff)`.
fn low_pass_kernel<T: Scalar>(len: usize, cutoff: usize) -> Vec<T> {
    let mut spec = Spectrum::zeros(bin_count(len), 1);
    for k in 0..cutoff {
        spec.set(k, 0, Complex::new(T::one(), T::zero()));
    }
    irfft_columns(&FftPlan::new(len), &spec)
}

fn reverse_rows<T: Scalar>(x: &[T], d: usize) -> Vec<T> {
    x.chunks(d).rev().flatten().copied().collect()
}

/// `x_low + β·x_high` over a whole `[L, d]` window, where `x_low` keeps
/// bins `[0, c)` and `x_high` keeps the rest.
pub fn frequency_rescale<T: Scalar>(
    x: &Tensor<T>,
    cfg: &SpectralConfig,
    beta: T,
) -> Result<Tensor<T>> {
    let (len, d) = x.as_matrix("frequency_rescale")?;
    cfg.validate(len)?;
    let filter = FrequencyFilter::new(len, cfg.cutoff, FilterMode::Window)?;
    let low = filter.low_pass(x.data(), d);
    let data = x
        .data()
        .iter()
        .zip(&low)
        .map(|(&v, &l)| l + beta * (v - l))
        .collect();
    Tensor::new(x.shape(), data)
}
