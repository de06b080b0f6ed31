use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense `P×Q×P×Q` tensor indexed by `(i, j, i', j')`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernelTensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ConvKernelTensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; (rows * cols) * (rows * cols)] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = (rows * cols) * (rows * cols);
        if data.len() != expected {
            return Err(Error::Shape { expected, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                for i2 in 0..rows {
                    for j2 in 0..cols {
                        let k = t.index(i, j, i2, j2);
                        t.data[k] = f(i, j, i2, j2);
                    }
                }
            }
        }
        t
    }

    /// `(P, Q)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, i2: usize, j2: usize) -> usize {
        ((i * self.cols + j) * self.rows + i2) * self.cols + j2
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, i2: usize, j2: usize) -> f64 {
        self.data[self.index(i, j, i2, j2)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, i2: usize, j2: usize, value: f64) {
        let k = self.index(i, j, i2, j2);
        self.data[k] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `Tr(T) = Σ_ij T_{ij,ij}`.
    pub fn trace(&self) -> f64 {
        (0..self.rows).flat_map(|i| (0..self.cols).map(move |j| (i, j))).map(|(i, j)| self.get(i, j, i, j)).sum()
    }

    /// `max |self - other|`; shapes must agree.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `α self + β other`.
    pub fn axpby(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| alpha * a + beta * b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }
}

/// Patch-trace operator: `[ℒ(M)]_{ij,i'j'} = Σ_{a,b} M_{i+a, j+b, i'+a, j'+b}` over
/// offsets `|a|, |b| ≤ (q-1)/2`, with out-of-range terms treated as zero.
pub fn patch_trace(m: &ConvKernelTensor, q: usize) -> ConvKernelTensor {
    let mut out = ConvKernelTensor::zeros(m.rows, m.cols);
    patch_trace_into(m, q, &mut out);
    out
}

/// [`patch_trace`] writing into a second buffer; `m` is only read.
pub fn patch_trace_into(m: &ConvKernelTensor, q: usize, out: &mut ConvKernelTensor) {
    debug_assert_eq!(m.dims(), out.dims());
    let (p, w) = m.dims();
    let r = (q / 2) as isize;
    let (pi, wi) = (p as isize, w as isize);
    for i in 0..pi {
        for j in 0..wi {
            for i2 in 0..pi {
                for j2 in 0..wi {
                    let mut acc = 0.0;
                    for a in -r..=r {
                        let (x, x2) = (i + a, i2 + a);
                        if x < 0 || x >= pi || x2 < 0 || x2 >= pi {
                            continue;
                        }
                        for b in -r..=r {
                            let (y, y2) = (j + b, j2 + b);
                            if y < 0 || y >= wi || y2 < 0 || y2 >= wi {
                                continue;
                            }
                            acc += m.get(x as usize, y as usize, x2 as usize, y2 as usize);
                        }
                    }
                    out.set(i as usize, j as usize, i2 as usize, j2 as usize, acc);
                }
            }
        }
    }
}
