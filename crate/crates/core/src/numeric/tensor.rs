use crate::error::{Error, Result};

use super::Real;

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dims("tensor data length", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<F>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn from_rows(rows: &[&[F]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dims("ragged rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| F::lit(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Size of one slab along the leading axis.
    fn slab(&self) -> usize {
        self.shape[1..].iter().product()
    }

    /// Contiguous slab `i` along the leading axis (e.g. timestep `i` of a
    /// `[T x batch x n]` tensor).
    pub fn outer(&self, i: usize) -> &[F] {
        let s = self.slab();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn outer_mut(&mut self, i: usize) -> &mut [F] {
        let s = self.slab();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn at(&self, index: &[usize]) -> F {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: F) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for dim {d}");
                acc * d + i
            })
    }

    pub fn map_inplace(&mut self, f: impl Fn(F) -> F) {
        self.data.iter_mut().for_each(|x| *x = f(*x));
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip_with(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        self.check_same_shape(other, "elementwise")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dims(context, &self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|x| G::lit(x.as_f64())).collect(),
        )
    }
}

fn expect_2d<F: Real>(t: &Tensor<F>, context: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::dims(context, t.shape(), &[0, 0])),
    }
}

/// `a[m x k] * b[k x n]`, summing over `k` in ascending order.
pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = expect_2d(a, "matmul lhs")?;
    let (k2, n) = expect_2d(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::dims("matmul inner dimension", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = F::zero();
            for p in 0..k {
                acc = acc + ad[i * k + p] * bd[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a[m x k] * b[n x k]^T`. Used for `x W^T` with row-major weights.
pub fn matmul_nt<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = expect_2d(a, "matmul_nt lhs")?;
    let (n, k2) = expect_2d(b, "matmul_nt rhs")?;
    if k != k2 {
        return Err(Error::dims("matmul_nt inner dimension", a.shape(), b.shape()));
    }
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let row = &a.data()[i * k..(i + 1) * k];
        for j in 0..n {
            let col = &b.data()[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for p in 0..k {
                acc = acc + row[p] * col[p];
            }
            out[i * n + j] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a[k x m]^T * b[k x n]`, summing over `k` in ascending order.
pub fn matmul_tn<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (k, m) = expect_2d(a, "matmul_tn lhs")?;
    let (k2, n) = expect_2d(b, "matmul_tn rhs")?;
    if k != k2 {
        return Err(Error::dims("matmul_tn inner dimension", a.shape(), b.shape()));
    }
    let mut out = vec![F::zero(); m * n];
    for p in 0..k {
        let arow = &a.data()[p * m..(p + 1) * m];
        let brow = &b.data()[p * n..(p + 1) * n];
        for i in 0..m {
            let ai = arow[i];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + ai * brow[j];
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Row-wise softmax of `x / temperature`, with max subtraction.
pub fn softmax_rows<F: Real>(x: &Tensor<F>, temperature: F) -> Result<Tensor<F>> {
    if !(temperature > F::zero()) {
        return Err(Error::param(
            "temperature",
            format!("must be positive, got {temperature}"),
        ));
    }
    let (n, c) = expect_2d(x, "softmax_rows")?;
    let mut out = Vec::with_capacity(n * c);
    for r in 0..n {
        softmax_into(&x.data()[r * c..(r + 1) * c], temperature, &mut out);
    }
    Ok(Tensor::from_parts(vec![n, c], out))
}

/// Appends `softmax(row / temperature)` to `out`.
pub(crate) fn softmax_into<F: Real>(row: &[F], temperature: F, out: &mut Vec<F>) {
    let max = row
        .iter()
        .fold(F::neg_infinity(), |m, &v| if v > m { v } else { m });
    let start = out.len();
    let mut sum = F::zero();
    for &v in row {
        let e = ((v - max) / temperature).exp();
        sum = sum + e;
        out.push(e);
    }
    for e in &mut out[start..] {
        *e = *e / sum;
    }
}
