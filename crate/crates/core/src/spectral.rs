//! Real-input 2D DFT along any pair of axes of a `[C,H,W]` tensor.
//!
//! Convention: forward is unnormalized, the inverse carries `1/(n1*n2)`.
//! The half-spectrum along the pair's second axis (`floor(n2/2)+1` bins) is
//! stored; the redundant Hermitian half is reconstructed on inversion, so the
//! inverse is real by construction. Transforms over non-adjacent axes are done
//! by permuting the pair to the last two axes and permuting back.
//!
//! The FFT is a recursive mixed-radix Cooley-Tukey: arbitrary lengths are
//! supported (prime factors fall back to an O(p^2) combine), which the
//! channel-axis transforms need since `C/4` is not always a power of two.

use crate::tensor::{ComplexTensor, Tensor};
use num_complex::Complex64;
use std::f64::consts::PI;

/// One of the three transform axis pairs of a `[C,H,W]` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisPair {
    pub first: usize,
    pub second: usize,
}

impl AxisPair {
    /// Height-Width axes.
    pub const HW: AxisPair = AxisPair { first: 1, second: 2 };
    /// Channel-Width axes.
    pub const CW: AxisPair = AxisPair { first: 0, second: 2 };
    /// Channel-Height axes.
    pub const CH: AxisPair = AxisPair { first: 0, second: 1 };

    pub const ALL: [AxisPair; 3] = [Self::HW, Self::CW, Self::CH];

    pub fn new(first: usize, second: usize) -> Self {
        assert!(first < 3 && second < 3 && first != second, "invalid axis pair");
        Self { first, second }
    }

    /// The axis carried through untransformed.
    pub fn untransformed(&self) -> usize {
        3 - self.first - self.second
    }

    /// Permutation putting the untransformed axis first, then the pair.
    pub fn to_last(&self) -> [usize; 3] {
        [self.untransformed(), self.first, self.second]
    }

    fn from_last(&self) -> [usize; 3] {
        let p = self.to_last();
        let mut inv = [0usize; 3];
        for (i, &a) in p.iter().enumerate() {
            inv[a] = i;
        }
        inv
    }

    /// Number of stored half-spectrum bins for a full extent `n2`.
    pub fn half_len(n2: usize) -> usize {
        n2 / 2 + 1
    }
}

fn smallest_prime_factor(n: usize) -> usize {
    if n % 2 == 0 {
        return 2;
    }
    let mut p = 3;
    while p * p <= n {
        if n % p == 0 {
            return p;
        }
        p += 2;
    }
    n
}

/// Unnormalized DFT with kernel exp(sign * 2*pi*i * jk / n).
/// sign = -1 is the forward direction, sign = +1 the inverse direction.
fn fft(x: &[Complex64], sign: f64) -> Vec<Complex64> {
    let mut out = x.to_vec();
    if x.len().is_power_of_two() {
        fft_pow2_in_place(&mut out, sign);
    } else {
        out = fft_general(x, sign);
    }
    out
}

/// Iterative radix-2 Cooley-Tukey; hot path, since every extent the model
/// transforms (channel splits and spatial dims) is a power of two.
fn fft_pow2_in_place(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let wlen = Complex64::from_polar(1.0, sign * 2.0 * PI / len as f64);
        let half = len / 2;
        let mut i = 0;
        while i < n {
            let mut w = Complex64::new(1.0, 0.0);
            for k in i..i + half {
                let u = buf[k];
                let v = buf[k + half] * w;
                buf[k] = u + v;
                buf[k + half] = u - v;
                w *= wlen;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Recursive mixed-radix fallback for arbitrary lengths.
fn fft_general(x: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = x.len();
    if n == 1 {
        return x.to_vec();
    }
    let p = smallest_prime_factor(n);
    let m = n / p;
    let subs: Vec<Vec<Complex64>> = (0..p)
        .map(|r| {
            let seq: Vec<Complex64> = (0..m).map(|t| x[p * t + r]).collect();
            fft(&seq, sign)
        })
        .collect();
    let tw: Vec<Complex64> = (0..n)
        .map(|j| Complex64::from_polar(1.0, sign * 2.0 * PI * j as f64 / n as f64))
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (r, sub) in subs.iter().enumerate() {
            acc += tw[(r * k) % n] * sub[k % m];
        }
        *o = acc;
    }
    out
}

/// In-place 2D transform of a row-major [n1][n2] buffer.
fn fft2(buf: &mut Vec<Complex64>, n1: usize, n2: usize, sign: f64) {
    let rows_pow2 = n2.is_power_of_two();
    for i in 0..n1 {
        let row = &mut buf[i * n2..(i + 1) * n2];
        if rows_pow2 {
            fft_pow2_in_place(row, sign);
        } else {
            let t = fft_general(row, sign);
            row.copy_from_slice(&t);
        }
    }
    let cols_pow2 = n1.is_power_of_two();
    let mut col = vec![Complex64::new(0.0, 0.0); n1];
    for j in 0..n2 {
        for i in 0..n1 {
            col[i] = buf[i * n2 + j];
        }
        if cols_pow2 {
            fft_pow2_in_place(&mut col, sign);
        } else {
            col = fft_general(&col, sign);
        }
        for i in 0..n1 {
            buf[i * n2 + j] = col[i];
        }
    }
}

/// Forward real-input 2D DFT over `axes`, half-spectrum along `axes.second`.
pub fn rdft2(x: &Tensor, axes: AxisPair) -> ComplexTensor {
    assert_eq!(x.shape().len(), 3, "rdft2 needs rank 3");
    let xp = x.permute3(axes.to_last());
    let (u, n1, n2) = (xp.shape()[0], xp.shape()[1], xp.shape()[2]);
    let h2 = AxisPair::half_len(n2);
    let mut out = ComplexTensor::zeros(&[u, n1, h2]);
    let mut buf = vec![Complex64::new(0.0, 0.0); n1 * n2];
    for s in 0..u {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(xp.data()[s * n1 * n2 + i], 0.0);
        }
        fft2(&mut buf, n1, n2, -1.0);
        for k1 in 0..n1 {
            for k2 in 0..h2 {
                let idx = out.at3(s, k1, k2);
                out.data_mut()[idx] = buf[k1 * n2 + k2];
            }
        }
    }
    out.permute3(axes.from_last())
}

fn check_spectrum_dims(s: &ComplexTensor, axes: AxisPair, original_dims: [usize; 3]) {
    let mut expect = original_dims;
    expect[axes.second] = AxisPair::half_len(original_dims[axes.second]);
    assert_eq!(
        s.shape(),
        &expect,
        "spectrum shape inconsistent with original dims {original_dims:?}"
    );
}

/// Inverse of [`rdft2`]; `original_dims` disambiguates even/odd extents.
pub fn irdft2(s: &ComplexTensor, axes: AxisPair, original_dims: [usize; 3]) -> Tensor {
    check_spectrum_dims(s, axes, original_dims);
    let sp = s.permute3(axes.to_last());
    let (u, n1, h2) = (sp.shape()[0], sp.shape()[1], sp.shape()[2]);
    let n2 = original_dims[axes.second];
    let norm = 1.0 / (n1 * n2) as f64;
    let mut outp = Tensor::zeros(&[u, n1, n2]);
    let mut buf = vec![Complex64::new(0.0, 0.0); n1 * n2];
    for slab in 0..u {
        // Hermitian extension: S[k1,k2] = conj(S[(n1-k1)%n1, n2-k2]) for k2 >= h2.
        for k1 in 0..n1 {
            for k2 in 0..n2 {
                buf[k1 * n2 + k2] = if k2 < h2 {
                    sp.data()[sp.at3(slab, k1, k2)]
                } else {
                    sp.data()[sp.at3(slab, (n1 - k1) % n1, n2 - k2)].conj()
                };
            }
        }
        fft2(&mut buf, n1, n2, 1.0);
        for i in 0..n1 * n2 {
            outp.data_mut()[slab * n1 * n2 + i] = buf[i].re * norm;
        }
    }
    outp.permute3(axes.from_last())
}

/// Adjoint of [`rdft2`] as a real-linear map: upstream half-spectrum gradient
/// to input-tensor gradient. The adjoint of the unnormalized forward DFT is
/// the unnormalized inverse-direction DFT; the adjoint of the half-spectrum
/// slice is zero-padding.
pub fn rdft2_backward(g: &ComplexTensor, axes: AxisPair, original_dims: [usize; 3]) -> Tensor {
    check_spectrum_dims(g, axes, original_dims);
    let gp = g.permute3(axes.to_last());
    let (u, n1, h2) = (gp.shape()[0], gp.shape()[1], gp.shape()[2]);
    let n2 = original_dims[axes.second];
    let mut outp = Tensor::zeros(&[u, n1, n2]);
    let mut buf = vec![Complex64::new(0.0, 0.0); n1 * n2];
    for slab in 0..u {
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for k1 in 0..n1 {
            for k2 in 0..h2 {
                buf[k1 * n2 + k2] = gp.data()[gp.at3(slab, k1, k2)];
            }
        }
        fft2(&mut buf, n1, n2, 1.0);
        for i in 0..n1 * n2 {
            outp.data_mut()[slab * n1 * n2 + i] = buf[i].re;
        }
    }
    outp.permute3(axes.from_last())
}

/// Adjoint of [`irdft2`]: real gradient to half-spectrum gradient. The
/// Hermitian-extension adjoint folds the mirrored bins back (conjugated);
/// the `1/(n1*n2)` normalization of the inverse carries over.
pub fn irdft2_backward(g: &Tensor, axes: AxisPair) -> ComplexTensor {
    assert_eq!(g.shape().len(), 3, "irdft2_backward needs rank 3");
    let gp = g.permute3(axes.to_last());
    let (u, n1, n2) = (gp.shape()[0], gp.shape()[1], gp.shape()[2]);
    let h2 = AxisPair::half_len(n2);
    let norm = 1.0 / (n1 * n2) as f64;
    let mut outp = ComplexTensor::zeros(&[u, n1, h2]);
    let mut buf = vec![Complex64::new(0.0, 0.0); n1 * n2];
    for slab in 0..u {
        for i in 0..n1 * n2 {
            buf[i] = Complex64::new(gp.data()[slab * n1 * n2 + i], 0.0);
        }
        fft2(&mut buf, n1, n2, -1.0);
        for k1 in 0..n1 {
            for k2 in 0..h2 {
                let mut acc = buf[k1 * n2 + k2];
                // bins whose conjugate mirror was materialized at n2-k2 >= h2
                if k2 >= 1 && n2 - k2 >= h2 {
                    acc += buf[((n1 - k1) % n1) * n2 + (n2 - k2)].conj();
                }
                let idx = outp.at3(slab, k1, k2);
                outp.data_mut()[idx] = acc * norm;
            }
        }
    }
    outp.permute3(axes.from_last())
}

/// Pointwise complex product.
pub fn spectral_mul(s: &ComplexTensor, w: &ComplexTensor) -> ComplexTensor {
    assert_eq!(s.shape(), w.shape(), "spectral_mul shape mismatch");
    let data = s.data().iter().zip(w.data()).map(|(a, b)| a * b).collect();
    ComplexTensor::new(s.shape().to_vec(), data)
}

/// Real-linear adjoints of the complex product `y = s * w`:
/// `ds = conj(w) * g`, `dw = conj(s) * g`.
pub fn spectral_mul_backward(
    s: &ComplexTensor,
    w: &ComplexTensor,
    g: &ComplexTensor,
) -> (ComplexTensor, ComplexTensor) {
    assert_eq!(s.shape(), g.shape(), "spectral_mul_backward shape mismatch");
    let ds = s
        .data()
        .iter()
        .zip(w.data().iter().zip(g.data()))
        .map(|(_, (wv, gv))| wv.conj() * gv)
        .collect();
    let dw = s
        .data()
        .iter()
        .zip(g.data())
        .map(|(sv, gv)| sv.conj() * gv)
        .collect();
    (
        ComplexTensor::new(s.shape().to_vec(), ds),
        ComplexTensor::new(s.shape().to_vec(), dw),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveMode {
    /// Height-Width spectrum only.
    Single,
    /// All three axis-pair spectra joined into one curve.
    Multi,
}

/// Sorted-magnitude frequency strength curve of a `[C,H,W]` patch.
///
/// Sorts DFT bin magnitudes (averaged over the untransformed axis) in
/// descending order. `Multi` concatenates the three axis pairs' magnitudes
/// before sorting.
pub fn signal_strength_curve(patch: &Tensor, mode: CurveMode) -> Vec<f64> {
    let pairs: &[AxisPair] = match mode {
        CurveMode::Single => &[AxisPair::HW],
        CurveMode::Multi => &AxisPair::ALL,
    };
    let mut mags = Vec::new();
    for &pair in pairs {
        let s = rdft2(patch, pair).permute3(pair.to_last());
        let (u, n1, h2) = (s.shape()[0], s.shape()[1], s.shape()[2]);
        for k1 in 0..n1 {
            for k2 in 0..h2 {
                let mut acc = 0.0;
                for slab in 0..u {
                    acc += s.data()[s.at3(slab, k1, k2)].norm();
                }
                mags.push(acc / u as f64);
            }
        }
    }
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    mags
}

/// Count strict sign changes of `a[i] - b[i]`, treating differences within
/// `threshold` as ties (noise floor). A crossing is an adjacent pair of
/// significant differences with opposite sign, tie indices skipped.
pub fn count_crossings(a: &[f64], b: &[f64], threshold: f64) -> usize {
    assert_eq!(a.len(), b.len(), "curves must have equal length");
    let mut last = 0i32;
    let mut crossings = 0;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        let s = if d > threshold {
            1
        } else if d < -threshold {
            -1
        } else {
            0
        };
        if s != 0 {
            if last != 0 && s != last {
                crossings += 1;
            }
            last = s;
        }
    }
    crossings
}
