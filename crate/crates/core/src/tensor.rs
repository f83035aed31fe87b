//! Dense row-major `f64` tensors of rank 0, 1 or 2 and the kernels shared by
//! plain forward passes and the autodiff tape.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::Shape { op, detail }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        if shape.len() > 2 {
            return Err(shape_err("tensor", format!("rank {} is not supported", shape.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: Vec::new(), data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(shape_err("from_rows", format!("ragged row of width {}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![v; n] }
    }

    /// Rows of `eye(n)` selected by `labels`.
    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(shape_err("one_hot", format!("label {} out of range for {} classes", l, classes)));
            }
            data[i * classes + l] = 1.0;
        }
        Self::matrix(labels.len(), classes, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of rows of a matrix (1 for vectors and scalars).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Number of columns of a matrix (length for vectors).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// The single value of a scalar (or any one-element) tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::matrix(c, r, out)
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(shape_err(op, format!("expected a matrix, got shape {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    fn dims1(&self, op: &'static str) -> Result<usize> {
        if self.shape.len() != 1 {
            return Err(shape_err(op, format!("expected a vector, got shape {:?}", self.shape)));
        }
        Ok(self.shape[0])
    }

    /// `op(a) · op(b)` where `op` optionally transposes its argument.
    pub fn matmul(a: &Self, b: &Self, ta: bool, tb: bool) -> Result<Self> {
        let (ar, ac) = a.dims2("matmul")?;
        let (br, bc) = b.dims2("matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("{:?}{} x {:?}{}", a.shape, if ta { "^T" } else { "" }, b.shape, if tb { "^T" } else { "" }),
            ));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (&a.data, &b.data);
        match (ta, tb) {
            (false, false) => {
                for i in 0..m {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = ad[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let brow = &bd[p * n..(p + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
            (false, true) => {
                for i in 0..m {
                    let arow = &ad[i * k..(i + 1) * k];
                    for j in 0..n {
                        let brow = &bd[j * k..(j + 1) * k];
                        out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
            }
            (true, false) => {
                // a is [k, m], b is [k, n]
                for p in 0..k {
                    let brow = &bd[p * n..(p + 1) * n];
                    for i in 0..m {
                        let av = ad[p * m + i];
                        if av == 0.0 {
                            continue;
                        }
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
            (true, true) => {
                let at = a.transpose()?;
                let bt = b.transpose()?;
                return Self::matmul(&at, &bt, false, false);
            }
        }
        Self::matrix(m, n, out)
    }

    /// Adds a `[n]` vector to every row of an `[m, n]` matrix.
    pub fn add_row_vector(&self, v: &Self) -> Result<Self> {
        let (m, n) = self.dims2("add_row_vector")?;
        if v.dims1("add_row_vector")? != n {
            return Err(shape_err("add_row_vector", format!("{:?} + {:?}", self.shape, v.shape)));
        }
        let mut out = self.data.clone();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(&v.data) {
                *o += b;
            }
        }
        Self::matrix(m, n, out)
    }

    /// Column sums: `[m, n] -> [n]`.
    pub fn sum_rows(&self) -> Result<Self> {
        let (m, n) = self.dims2("sum_rows")?;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        Ok(Self::vector(out))
    }

    /// Row sums: `[m, n] -> [m]`.
    pub fn row_sums(&self) -> Result<Self> {
        let (m, n) = self.dims2("row_sums")?;
        Ok(Self::vector((0..m).map(|i| self.data[i * n..(i + 1) * n].iter().sum()).collect()))
    }

    /// Repeats a `[n]` vector as `m` rows.
    pub fn broadcast_rows(&self, m: usize) -> Result<Self> {
        let n = self.dims1("broadcast_rows")?;
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&self.data);
        }
        Self::matrix(m, n, out)
    }

    /// Repeats a `[m]` vector as `n` columns.
    pub fn broadcast_cols(&self, n: usize) -> Result<Self> {
        let m = self.dims1("broadcast_cols")?;
        let mut out = Vec::with_capacity(m * n);
        for &v in &self.data {
            out.extend(core::iter::repeat_n(v, n));
        }
        Self::matrix(m, n, out)
    }

    pub fn concat_cols(a: &Self, b: &Self) -> Result<Self> {
        let (am, an) = a.dims2("concat_cols")?;
        let (bm, bn) = b.dims2("concat_cols")?;
        if am != bm {
            return Err(shape_err("concat_cols", format!("{:?} | {:?}", a.shape, b.shape)));
        }
        let mut out = Vec::with_capacity(am * (an + bn));
        for i in 0..am {
            out.extend_from_slice(&a.data[i * an..(i + 1) * an]);
            out.extend_from_slice(&b.data[i * bn..(i + 1) * bn]);
        }
        Self::matrix(am, an + bn, out)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        let (m, n) = self.dims2("slice_cols")?;
        if start > end || end > n {
            return Err(shape_err("slice_cols", format!("{}..{} of {} columns", start, end, n)));
        }
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&self.data[i * n + start..i * n + end]);
        }
        Self::matrix(m, end - start, out)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let (m, n) = self.dims2("select_rows")?;
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(shape_err("select_rows", format!("row {} of {}", i, m)));
            }
            out.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        Self::matrix(idx.len(), n, out)
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let n = match parts.first() {
            Some(p) => p.dims2("vstack")?.1,
            None => return Self::matrix(0, 0, Vec::new()),
        };
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let (m, c) = p.dims2("vstack")?;
            if c != n {
                return Err(shape_err("vstack", format!("{} vs {} columns", c, n)));
            }
            rows += m;
            out.extend_from_slice(&p.data);
        }
        Self::matrix(rows, n, out)
    }

    /// Row-wise `x - logsumexp(x)` with max subtraction.
    pub fn log_softmax_rows(&self) -> Result<Self> {
        let (m, n) = self.dims2("log_softmax")?;
        let mut out = self.data.clone();
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + math::ln(row.iter().map(|v| math::exp(v - mx)).sum::<f64>());
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Self::matrix(m, n, out)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (m, n) = self.dims2("softmax")?;
        let mut out = self.data.clone();
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = math::exp(*v - mx);
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Self::matrix(m, n, out)
    }

    /// Index of the largest entry in each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let n = self.cols();
        (0..self.rows())
            .map(|i| {
                let row = &self.data[i * n..(i + 1) * n];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn max_rows(&self) -> Vec<f64> {
        let n = self.cols();
        (0..self.rows())
            .map(|i| self.data[i * n..(i + 1) * n].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}
