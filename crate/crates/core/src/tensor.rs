//! Dense row-major `f64` tensors and complex tensors.
//!
//! No implicit broadcasting: every shape adaptation is an explicit reshape,
//! repeat or permute, so axis bugs in the multi-axis DFT code surface as hard
//! shape errors. Whole-tensor reductions use a pairwise tree so results do not
//! depend on the machine; inner-loop accumulations are plain left-to-right.

use crate::rng::Rng;
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) {
    assert!(!shape.is_empty(), "tensor shape must be nonempty");
    assert!(
        shape.iter().all(|&d| d >= 1),
        "tensor dims must be >= 1, got {shape:?}"
    );
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Fixed-order pairwise tree sum.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        check_shape(&shape);
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        let t = Self { shape, data };
        t.debug_check_finite();
        t
    }

    pub fn zeros(shape: &[usize]) -> Self {
        check_shape(shape);
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        check_shape(shape);
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    /// i.i.d. Gaussian entries with the given mean/std.
    pub fn randn(shape: &[usize], rng: &mut Rng, mean: f64, std: f64) -> Self {
        check_shape(shape);
        assert!(std > 0.0, "randn std must be > 0, got {std}");
        let data = (0..numel(shape)).map(|_| mean + std * rng.normal()).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // dims are >= 1 by construction
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn debug_check_finite(&self) {
        debug_assert!(
            self.data.iter().all(|x| x.is_finite()),
            "tensor contains non-finite values"
        );
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row-major flat offset of a rank-3 index.
    #[inline]
    pub fn at3(&self, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (c * self.shape[1] + h) * self.shape[2] + w
    }

    #[inline]
    pub fn get3(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.at3(c, h, w)]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, h: usize, w: usize, v: f64) {
        let i = self.at3(c, h, w);
        self.data[i] = v;
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        check_shape(shape);
        assert_eq!(numel(shape), self.data.len(), "reshape must preserve numel");
        Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let t = Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        };
        t.debug_check_finite();
        t
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(
            self.shape, other.shape,
            "shape mismatch: {:?} vs {:?}",
            self.shape, other.shape
        );
        let t = Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        };
        t.debug_check_finite();
        t
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| x * s)
    }

    /// In-place accumulation, used for gradient buffers.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "shape mismatch in add_assign");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> f64 {
        pairwise_sum(&self.data)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in dot");
        let prods: Vec<f64> = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        pairwise_sum(&prods)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    /// Permute the axes of a rank-3 tensor; `order[i]` is the source axis for
    /// destination axis `i`.
    pub fn permute3(&self, order: [usize; 3]) -> Self {
        assert_eq!(self.shape.len(), 3, "permute3 needs rank 3");
        let mut seen = [false; 3];
        for &o in &order {
            assert!(o < 3 && !seen[o], "invalid permutation {order:?}");
            seen[o] = true;
        }
        let s = &self.shape;
        let ns = [s[order[0]], s[order[1]], s[order[2]]];
        let mut out = Self::zeros(&ns);
        let mut src = [0usize; 3];
        for i in 0..ns[0] {
            for j in 0..ns[1] {
                for k in 0..ns[2] {
                    let dst = [i, j, k];
                    for a in 0..3 {
                        src[order[a]] = dst[a];
                    }
                    let v = self.data[(src[0] * s[1] + src[1]) * s[2] + src[2]];
                    out.data[(i * ns[1] + j) * ns[2] + k] = v;
                }
            }
        }
        out
    }

    /// Split a `[C,H,W]` tensor into `parts` contiguous channel blocks.
    pub fn split_channels(&self, parts: usize) -> Vec<Tensor> {
        assert_eq!(self.shape.len(), 3, "split_channels needs rank 3");
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        assert!(parts >= 1 && c % parts == 0, "channels {c} not divisible by {parts}");
        let block = c / parts;
        let chunk = block * h * w;
        (0..parts)
            .map(|p| Tensor {
                shape: vec![block, h, w],
                data: self.data[p * chunk..(p + 1) * chunk].to_vec(),
            })
            .collect()
    }

    /// Concatenate rank-3 tensors along the channel axis.
    pub fn concat_channels(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_channels needs at least one part");
        let (h, w) = (parts[0].shape[1], parts[0].shape[2]);
        let mut data = Vec::new();
        let mut c = 0;
        for p in parts {
            assert_eq!(p.shape.len(), 3, "concat_channels needs rank 3");
            assert_eq!(
                (p.shape[1], p.shape[2]),
                (h, w),
                "concat_channels spatial mismatch"
            );
            c += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Tensor {
            shape: vec![c, h, w],
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

impl ComplexTensor {
    pub fn new(shape: Vec<usize>, data: Vec<Complex64>) -> Self {
        check_shape(&shape);
        assert_eq!(numel(&shape), data.len(), "complex shape/data mismatch");
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        check_shape(shape);
        Self {
            shape: shape.to_vec(),
            data: vec![Complex64::new(0.0, 0.0); numel(shape)],
        }
    }

    pub fn full(shape: &[usize], v: Complex64) -> Self {
        check_shape(shape);
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn at3(&self, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (c * self.shape[1] + h) * self.shape[2] + w
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()))
    }

    pub fn permute3(&self, order: [usize; 3]) -> Self {
        assert_eq!(self.shape.len(), 3, "permute3 needs rank 3");
        let s = &self.shape;
        let ns = [s[order[0]], s[order[1]], s[order[2]]];
        let mut out = Self::zeros(&ns);
        let mut src = [0usize; 3];
        for i in 0..ns[0] {
            for j in 0..ns[1] {
                for k in 0..ns[2] {
                    let dst = [i, j, k];
                    for a in 0..3 {
                        src[order[a]] = dst[a];
                    }
                    out.data[(i * ns[1] + j) * ns[2] + k] =
                        self.data[(src[0] * s[1] + src[1]) * s[2] + src[2]];
                }
            }
        }
        out
    }

    /// Two real planes `[2, a, b]` -> complex `[a, b]`.
    pub fn from_planes(planes: &Tensor) -> Self {
        let s = planes.shape();
        assert!(s.len() == 3 && s[0] == 2, "expected [2,a,b] planes, got {s:?}");
        let n = s[1] * s[2];
        let d = planes.data();
        let data = (0..n).map(|i| Complex64::new(d[i], d[n + i])).collect();
        Self {
            shape: vec![s[1], s[2]],
            data,
        }
    }

    /// Complex `[a, b]` -> two real planes `[2, a, b]`.
    pub fn to_planes(&self) -> Tensor {
        assert_eq!(self.shape.len(), 2, "to_planes needs rank 2");
        let n = self.data.len();
        let mut d = vec![0.0; 2 * n];
        for (i, z) in self.data.iter().enumerate() {
            d[i] = z.re;
            d[n + i] = z.im;
        }
        Tensor::new(vec![2, self.shape[0], self.shape[1]], d)
    }
}
