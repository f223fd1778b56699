use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered collection of named tensors: the unit trained, checkpointed and
/// exchanged by the federation.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Layout(format!("duplicate parameter name `{name}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].1
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn expect(&self, name: &str) -> &Tensor<T> {
        self.get(name).unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    /// Errors unless both sets have the same names and shapes in the same order.
    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Layout(format!("{} vs {} tensors", self.entries.len(), other.entries.len())));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::Layout(format!("`{na}` {:?} vs `{nb}` {:?}", ta.shape(), tb.shape())));
            }
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.check_layout(other).is_ok()
    }

    pub fn zeros_like(&self) -> Self {
        Self { entries: self.entries.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect() }
    }

    /// Concatenation of every tensor's data in layout order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuilds a parameter set with this layout from flat values.
    pub fn unflatten(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Layout(format!("{} values for {} parameters", flat.len(), self.num_scalars())));
        }
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.entries.len());
        for (n, t) in &self.entries {
            let len = t.len();
            entries.push((n.clone(), Tensor::new(t.shape().to_vec(), flat[offset..offset + len].to_vec())?));
            offset += len;
        }
        Ok(Self { entries })
    }

    /// Elementwise combination of two identically laid-out sets.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_layout(other)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|((n, a), (_, b))| {
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                (n.clone(), Tensor { shape: a.shape().to_vec(), data })
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.map(&f))).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Rounds every value through `f32`.
    pub fn quantize(&self) -> Self {
        self.map(Scalar::quantize)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }

    /// SHA-256 over names, shapes and the exact bits of every value.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_layout(other)?;
        Ok(self
            .tensors()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()))
            .fold(T::zero(), T::max))
    }
}

/// Plain gradient step `w ← w − lr·g` over every tensor.
pub fn sgd_step<T: Scalar>(params: &ModelParams<T>, grads: &ModelParams<T>, lr: T) -> Result<ModelParams<T>> {
    params.check_layout(grads).map_err(|e| Error::Contract(format!("gradient keys do not match parameters: {e}")))?;
    params.zip_with(grads, |w, g| w - lr * g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(w: f64) -> ModelParams<f64> {
        ModelParams::new(vec![("w".into(), Tensor::scalar(w))]).unwrap()
    }

    #[test]
    fn sgd_basics() {
        let p = single(1.0);
        let g = single(2.0);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
        assert!((sgd_step(&p, &g, 0.1).unwrap().expect("w").data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_on_quadratic_matches_closed_form() {
        // f(w) = ½w², ∇f = w, so k steps give w₀(1−lr)^k.
        let (w0, lr, k) = (3.0, 0.1, 25);
        let mut p = single(w0);
        for _ in 0..k {
            let g = p.clone();
            p = sgd_step(&p, &g, lr).unwrap();
        }
        let expect = w0 * (1.0 - lr).powi(k);
        assert!((p.expect("w").data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn sgd_key_mismatch() {
        let p = single(1.0);
        let g = ModelParams::new(vec![("v".into(), Tensor::scalar(1.0))]).unwrap();
        assert!(matches!(sgd_step(&p, &g, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = Tensor::<f64>::scalar(1.0);
        assert!(ModelParams::new(vec![("a".into(), t.clone()), ("a".into(), t)]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_identity(values in proptest::collection::vec(-1e3f64..1e3, 10)) {
            let p = ModelParams::new(vec![
                ("a".into(), Tensor::new(vec![2, 3], values[..6].to_vec()).unwrap()),
                ("b".into(), Tensor::new(vec![4], values[6..].to_vec()).unwrap()),
            ]).unwrap();
            prop_assert_eq!(p.unflatten(&p.flatten()).unwrap(), p);
        }
    }
}
