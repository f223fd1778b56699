//! Dense row-major tensors and the reverse-mode tape used to train the risk
//! model.

mod params;
mod tape;

pub use params::{sgd_step, ModelParams};
pub use tape::{Activation, Gradients, Tape, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense tensor with row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!("shape {shape:?} needs {expected} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Self { shape: vec![rows.len(), cols], data })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension(format!("expected a 2-D tensor, got shape {other:?}"))),
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub fn column(&self, col: usize) -> Result<Vec<T>> {
        let (rows, cols) = self.dims2()?;
        if col >= cols {
            return Err(Error::Dimension(format!("column {col} of {cols}")));
        }
        Ok((0..rows).map(|r| self.data[r * cols + col]).collect())
    }
}

/// `x · w + b` for `x: [B×I]`, `w: [I×O]`, `b: [O]`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, inner) = x.dims2()?;
    let (w_in, out) = w.dims2()?;
    if inner != w_in {
        return Err(Error::Dimension(format!("linear: input width {inner} vs weight rows {w_in}")));
    }
    if b.len() != out {
        return Err(Error::Dimension(format!("linear: bias length {} vs {out} outputs", b.len())));
    }
    let mut data = Vec::with_capacity(rows * out);
    for r in 0..rows {
        data.extend_from_slice(&b.data);
        let acc = &mut data[r * out..(r + 1) * out];
        let xr = &x.data[r * inner..(r + 1) * inner];
        for (k, &xv) in xr.iter().enumerate() {
            let wk = &w.data[k * out..(k + 1) * out];
            for (a, &wv) in acc.iter_mut().zip(wk) {
                *a = *a + xv * wv;
            }
        }
    }
    Ok(Tensor { shape: vec![rows, out], data })
}

/// Selects rows of `table` by index.
pub fn embedding_lookup<T: Scalar>(table: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let (vocab, dim) = table.dims2()?;
    let mut data = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        if i >= vocab {
            return Err(Error::Index { index: i, size: vocab });
        }
        data.extend_from_slice(&table.data[i * dim..(i + 1) * dim]);
    }
    Ok(Tensor { shape: vec![indices.len(), dim], data })
}

/// Column-wise concatenation of 2-D tensors with equal row counts.
pub fn concat_cols<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
    let (rows, _) = first.dims2()?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = p.dims2()?;
        if r != rows {
            return Err(Error::Dimension(format!("concat: {r} rows vs {rows}")));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data[r * w..(r + 1) * w]);
        }
    }
    Ok(Tensor { shape: vec![rows, total], data })
}

#[inline]
pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Logistic function, kept strictly inside the open unit interval.
#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    let one = T::one();
    let s = if v >= T::zero() {
        one / (one + (-v).exp())
    } else {
        let e = v.exp();
        e / (one + e)
    };
    let hi = one - T::epsilon() / T::lit(2.0);
    s.max(T::min_positive_value()).min(hi)
}

/// Probability clamp applied before taking logs in the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy over all elements.
pub fn bce_loss<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
    if p.shape != y.shape {
        return Err(Error::Dimension(format!("bce: {:?} vs {:?}", p.shape, y.shape)));
    }
    if p.is_empty() {
        return Err(Error::Dimension("bce over an empty tensor".into()));
    }
    let n = T::lit(p.len() as f64);
    let total: T = p.data.iter().zip(&y.data).map(|(&pv, &yv)| bce_term(pv, yv)).sum();
    Ok(total / n)
}

#[inline]
pub(crate) fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::lit(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

#[inline]
pub(crate) fn bce_term<T: Scalar>(p: T, y: T) -> T {
    let pc = clamp_prob(p);
    -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_identity_and_bias() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let out = linear_forward(&x, &Tensor::identity(2), &Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);

        let zero = Tensor::zeros(&[1, 2]);
        let w = Tensor::from_rows(&[vec![5.0, -2.0], vec![0.3, 9.0]]).unwrap();
        let out = linear_forward(&zero, &w, &Tensor::vector(vec![3.0, -1.0])).unwrap();
        assert_eq!(out.data(), &[3.0, -1.0]);
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, &[3, 4]);
        let w = random(&mut rng, &[4, 2]);
        let b = random(&mut rng, &[2]);
        let out = linear_forward(&x, &w, &b).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += x.get2(r, k) * w.get2(k, c);
                }
                s += b.data()[c];
                assert!((out.get2(r, c) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_shape_mismatch() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let w = Tensor::zeros(&[4, 2]);
        assert!(matches!(linear_forward(&x, &w, &Tensor::zeros(&[2])), Err(Error::Dimension(_))));
        let w = Tensor::zeros(&[3, 2]);
        assert!(linear_forward(&x, &w, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0_f64), 0.5);
        assert_eq!(relu(-2.0_f64), 0.0);
        assert!((sigmoid(3.0_f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(800.0_f64) < 1.0);
        assert!(sigmoid(-800.0_f64) > 0.0);
    }

    #[test]
    fn embedding_rows_and_bounds() {
        let table = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = embedding_lookup(&table, &[1, 0]).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0, 1.0, 2.0]);
        assert!(matches!(embedding_lookup(&table, &[2]), Err(Error::Index { index: 2, size: 2 })));
    }

    #[test]
    fn bce_values() {
        let p = Tensor::scalar(0.5);
        let y = Tensor::scalar(1.0);
        assert!((bce_loss(&p, &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let p = Tensor::scalar(1.0 - BCE_EPS);
        assert!(bce_loss(&p, &y).unwrap() < 1e-6);
    }

    #[test]
    fn bce_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 37;
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let mut reference = 0.0;
        for i in 0..n {
            reference -= y[i] * p[i].ln() + (1.0 - y[i]) * (1.0 - p[i]).ln();
        }
        reference /= n as f64;
        let got = bce_loss(&Tensor::vector(p), &Tensor::vector(y)).unwrap();
        assert!((got - reference).abs() < 1e-12);
    }
}
