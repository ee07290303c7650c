//! Discrete Fourier transforms along one axis of a dense tensor.
//!
//! Conventions: the forward transform is unnormalized,
//! `z_k = Σ_n x_n e^{-2πi kn/N}`, and the inverse carries the `1/N` factor.
//! The real-input transform keeps bins `0..=N/2`; its inverse discards the
//! imaginary parts of the DC bin and (for even `N`) the Nyquist bin, which
//! must vanish for a conjugate-symmetric spectrum.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::tensor::{TensorC, TensorF};
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Number of half-spectrum bins kept for a real signal of length `n`.
pub fn half_len(n: usize) -> usize {
    n / 2 + 1
}

/// Transform `lines` contiguous length-`n` sequences stored back to back.
/// `inverse` applies the conjugate kernel and the `1/n` factor.
pub(crate) fn fft_lines(buf: &mut [Complex64], n: usize, inverse: bool) {
    if n <= 1 || buf.is_empty() {
        return;
    }
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    plan.process(buf);
    if inverse {
        let s = 1.0 / n as f64;
        for z in buf.iter_mut() {
            *z *= s;
        }
    }
}

/// Split a shape around `axis` into (outer, n, inner).
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::AxisOutOfRange {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Gather every line along the axis into a contiguous buffer
/// (line-major), apply `f`, and scatter back with a possibly different
/// output line length.
fn map_lines(
    input: &[Complex64],
    outer: usize,
    n_in: usize,
    inner: usize,
    n_out: usize,
    f: impl Fn(&mut Vec<Complex64>),
) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); outer * n_out * inner];
    let mut line = Vec::with_capacity(n_in.max(n_out));
    for o in 0..outer {
        for i in 0..inner {
            line.clear();
            line.extend((0..n_in).map(|k| input[(o * n_in + k) * inner + i]));
            f(&mut line);
            for k in 0..n_out {
                out[(o * n_out + k) * inner + i] = line[k];
            }
        }
    }
    out
}

fn transform(x: &TensorC, axis: usize, inverse: bool) -> Result<TensorC> {
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    if n == 0 {
        return Err(Error::Shape("transform axis has zero extent".into()));
    }
    let data = if inner == 1 {
        let mut d = x.data().to_vec();
        fft_lines(&mut d, n, inverse);
        d
    } else {
        map_lines(x.data(), outer, n, inner, n, |line| {
            fft_lines(line, n, inverse)
        })
    };
    TensorC::new(x.shape().to_vec(), data)
}

/// Forward DFT along `axis`.
pub fn dft(x: &TensorC, axis: usize) -> Result<TensorC> {
    transform(x, axis, false)
}

/// Inverse DFT along `axis`, including the `1/N` factor.
pub fn idft(z: &TensorC, axis: usize) -> Result<TensorC> {
    transform(z, axis, true)
}

/// Real-input DFT along `axis`; returns the first `N/2 + 1` bins.
pub fn rdft(x: &TensorF, axis: usize) -> Result<TensorC> {
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    if n == 0 {
        return Err(Error::Shape("transform axis has zero extent".into()));
    }
    let nf = half_len(n);
    let xc = x.to_complex();
    let data = map_lines(xc.data(), outer, n, inner, nf, |line| {
        fft_lines(line, n, false)
    });
    let mut shape = x.shape().to_vec();
    shape[axis] = nf;
    TensorC::new(shape, data)
}

/// Rebuild the full conjugate-symmetric spectrum of length `n` from its
/// first `n/2 + 1` bins.
pub(crate) fn conj_extend(line: &mut Vec<Complex64>, n: usize) {
    let nf = half_len(n);
    debug_assert_eq!(line.len(), nf);
    line[0].im = 0.0;
    if n % 2 == 0 {
        line[nf - 1].im = 0.0;
    }
    for k in nf..n {
        let mirrored = line[n - k].conj();
        line.push(mirrored);
    }
}

/// Inverse of [`rdft`] producing `n_out` real samples along `axis`.
pub fn irdft(z: &TensorC, axis: usize, n_out: usize) -> Result<TensorF> {
    let (outer, nf, inner) = split_axis(z.shape(), axis)?;
    if n_out == 0 || nf != half_len(n_out) {
        return Err(Error::Shape(format!(
            "half spectrum has {nf} bins but n_out = {n_out} needs {}",
            half_len(n_out)
        )));
    }
    let data = map_lines(z.data(), outer, nf, inner, n_out, |line| {
        conj_extend(line, n_out);
        fft_lines(line, n_out, true);
    });
    let mut shape = z.shape().to_vec();
    shape[axis] = n_out;
    TensorF::new(shape, data.into_iter().map(|c| c.re).collect())
}

/// Column-wise half spectrum of a row-major `[n x d]` real matrix.
/// Returns `(re, im)` planes of shape `[n/2+1 x d]`.
pub(crate) fn rdft_rows(x: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = half_len(n);
    let mut buf: Vec<Complex64> = Vec::with_capacity(n * d);
    for j in 0..d {
        buf.extend((0..n).map(|i| Complex64::new(x[i * d + j], 0.0)));
    }
    fft_lines(&mut buf, n, false);
    let mut re = vec![0.0; nf * d];
    let mut im = vec![0.0; nf * d];
    for j in 0..d {
        for k in 0..nf {
            let z = buf[j * n + k];
            re[k * d + j] = z.re;
            im[k * d + j] = z.im;
        }
    }
    (re, im)
}

/// Column-wise inverse of [`rdft_rows`] back to an `[n x d]` real matrix.
pub(crate) fn irdft_rows(re: &[f64], im: &[f64], n: usize, d: usize) -> Vec<f64> {
    let nf = half_len(n);
    let mut buf: Vec<Complex64> = Vec::with_capacity(n * d);
    let mut line = Vec::with_capacity(n);
    for j in 0..d {
        line.clear();
        line.extend((0..nf).map(|k| Complex64::new(re[k * d + j], im[k * d + j])));
        conj_extend(&mut line, n);
        buf.extend_from_slice(&line);
    }
    fft_lines(&mut buf, n, true);
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        for i in 0..n {
            out[i * d + j] = buf[j * n + i].re;
        }
    }
    out
}

/// Column-wise complex DFT (or inverse) of `[n x d]` planes.
pub(crate) fn dft_rows(
    re: &[f64],
    im: &[f64],
    n: usize,
    d: usize,
    inverse: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut buf: Vec<Complex64> = Vec::with_capacity(n * d);
    for j in 0..d {
        buf.extend((0..n).map(|i| Complex64::new(re[i * d + j], im[i * d + j])));
    }
    fft_lines(&mut buf, n, inverse);
    let mut ore = vec![0.0; n * d];
    let mut oim = vec![0.0; n * d];
    for j in 0..d {
        for i in 0..n {
            let z = buf[j * n + i];
            ore[i * d + j] = z.re;
            oim[i * d + j] = z.im;
        }
    }
    (ore, oim)
}
