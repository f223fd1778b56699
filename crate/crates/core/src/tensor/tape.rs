use std::collections::BTreeMap;

use super::{bce_term, clamp_prob, concat_cols, embedding_lookup, linear_forward, relu, sigmoid, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Embedding { table: Var, indices: Vec<usize> },
    Activate { x: Var, kind: Activation },
    Concat(Vec<Var>),
    Column { x: Var, col: usize },
    Bce { p: Var, target: Tensor<T>, weights: Option<Tensor<T>> },
    WeightedSum(Vec<(Var, T)>),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
    trainable: bool,
}

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so
/// parents always precede children.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of the loss with respect to every trainable leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    by_leaf: BTreeMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.by_leaf.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.by_leaf.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value recorded on tape");
        self.nodes.push(Node { op, value, needs_grad, trainable: false });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a trainable leaf; `backward` reports a gradient for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(Op::Leaf, value, true);
        self.nodes[v.0].trainable = true;
        v
    }

    /// Records a constant leaf (data, frozen weights).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = linear_forward(self.value(x), self.value(w), self.value(b))?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Linear { x, w, b }, out, needs))
    }

    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let out = embedding_lookup(self.value(table), indices)?;
        let needs = self.needs(table);
        Ok(self.push(Op::Embedding { table, indices: indices.to_vec() }, out, needs))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = match kind {
            Activation::Relu => self.value(x).map(relu),
            Activation::Sigmoid => self.value(x).map(sigmoid),
        };
        let needs = self.needs(x);
        self.push(Op::Activate { x, kind }, out, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = concat_cols(&tensors)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::Concat(parts.to_vec()), out, needs))
    }

    /// Extracts one column of a 2-D node as a `[B×1]` node.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        let src = self.value(x);
        let (rows, _) = src.dims2()?;
        let out = Tensor::new(vec![rows, 1], src.column(col)?)?;
        let needs = self.needs(x);
        Ok(self.push(Op::Column { x, col }, out, needs))
    }

    /// Mean binary cross-entropy of probabilities `p` against constant targets.
    pub fn bce(&mut self, p: Var, target: Tensor<T>) -> Result<Var> {
        self.weighted_bce(p, target, None)
    }

    /// Cross-entropy with optional per-element weights: `Σ wᵢ·ℓᵢ / n`.
    pub fn weighted_bce(&mut self, p: Var, target: Tensor<T>, weights: Option<Tensor<T>>) -> Result<Var> {
        let pv = self.value(p);
        let loss = match &weights {
            None => super::bce_loss(pv, &target)?,
            Some(w) => {
                if w.shape() != pv.shape() || target.shape() != pv.shape() {
                    return Err(Error::Dimension("weighted bce shapes differ".into()));
                }
                let n = T::lit(pv.len() as f64);
                let total: T = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .zip(w.data())
                    .map(|((&pi, &yi), &wi)| wi * bce_term(pi, yi))
                    .sum();
                total / n
            }
        };
        let needs = self.needs(p);
        Ok(self.push(Op::Bce { p, target, weights }, Tensor::scalar(loss), needs))
    }

    /// `Σ weight·term` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut acc = T::zero();
        for &(v, w) in terms {
            let t = self.value(v);
            if !t.is_scalar() {
                return Err(Error::Dimension(format!("weighted_sum term of shape {:?}", t.shape())));
            }
            acc = acc + w * t.data()[0];
        }
        let needs = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(Op::WeightedSum(terms.to_vec()), Tensor::scalar(acc), needs))
    }

    /// Back-propagates from a scalar node, returning gradients for every
    /// trainable leaf that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![T::one()])?);
        let mut by_leaf = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if node.trainable {
                        by_leaf.insert(Var(idx), upstream);
                    }
                }
                Op::Linear { x, w, b } => self.back_linear(&upstream, *x, *w, *b, &mut grads),
                Op::Embedding { table, indices } => {
                    let t = self.value(*table);
                    let dim = t.shape()[1];
                    let mut g = Tensor::zeros(t.shape());
                    for (r, &i) in indices.iter().enumerate() {
                        let dst = &mut g.data_mut()[i * dim..(i + 1) * dim];
                        for (d, &u) in dst.iter_mut().zip(&upstream.data()[r * dim..(r + 1) * dim]) {
                            *d = *d + u;
                        }
                    }
                    accumulate(&mut grads, *table, g);
                }
                Op::Activate { x, kind } => {
                    let out = &node.value;
                    let g = match kind {
                        Activation::Relu => zip_map(&upstream, out, |u, o| if o > T::zero() { u } else { T::zero() }),
                        Activation::Sigmoid => zip_map(&upstream, out, |u, o| u * o * (T::one() - o)),
                    };
                    accumulate(&mut grads, *x, g);
                }
                Op::Concat(parts) => {
                    let (rows, total) = node.value.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).shape()[1];
                        if self.needs(p) {
                            let mut g = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                g.extend_from_slice(&upstream.data()[r * total + offset..r * total + offset + w]);
                            }
                            accumulate(&mut grads, p, Tensor::new(vec![rows, w], g)?);
                        }
                        offset += w;
                    }
                }
                Op::Column { x, col } => {
                    let src = self.value(*x);
                    let (rows, cols) = src.dims2()?;
                    let mut g = Tensor::zeros(&[rows, cols]);
                    for r in 0..rows {
                        g.data_mut()[r * cols + col] = upstream.data()[r];
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Bce { p, target, weights } => {
                    let pv = self.value(*p);
                    let n = T::lit(pv.len() as f64);
                    let u = upstream.data()[0];
                    // Straight-through at the clamp: derivative evaluated at the clamped probability.
                    let mut g = zip_map(pv, target, |pi, yi| {
                        let pc = clamp_prob(pi);
                        u * (pc - yi) / (pc * (T::one() - pc)) / n
                    });
                    if let Some(w) = weights {
                        for (gi, &wi) in g.data_mut().iter_mut().zip(w.data()) {
                            *gi = *gi * wi;
                        }
                    }
                    accumulate(&mut grads, *p, g);
                }
                Op::WeightedSum(terms) => {
                    let u = upstream.data()[0];
                    for &(v, w) in terms {
                        if self.needs(v) {
                            let shape = self.value(v).shape().to_vec();
                            accumulate(&mut grads, v, Tensor::new(shape, vec![u * w])?);
                        }
                    }
                }
            }
        }
        Ok(Gradients { by_leaf })
    }

    fn back_linear(&self, upstream: &Tensor<T>, x: Var, w: Var, b: Var, grads: &mut [Option<Tensor<T>>]) {
        let xv = self.value(x);
        let wv = self.value(w);
        let (rows, inner) = (xv.shape()[0], xv.shape()[1]);
        let out = wv.shape()[1];
        let up = upstream.data();
        if self.needs(w) {
            let mut gw = Tensor::zeros(&[inner, out]);
            let gd = gw.data_mut();
            for r in 0..rows {
                let ur = &up[r * out..(r + 1) * out];
                for (k, &xk) in xv.data()[r * inner..(r + 1) * inner].iter().enumerate() {
                    if xk == T::zero() {
                        continue;
                    }
                    for (g, &u) in gd[k * out..(k + 1) * out].iter_mut().zip(ur) {
                        *g = *g + xk * u;
                    }
                }
            }
            accumulate(grads, w, gw);
        }
        if self.needs(b) {
            let mut gb = Tensor::zeros(&[out]);
            for r in 0..rows {
                for (g, &u) in gb.data_mut().iter_mut().zip(&up[r * out..(r + 1) * out]) {
                    *g = *g + u;
                }
            }
            accumulate(grads, b, gb);
        }
        if self.needs(x) {
            let mut gx = Tensor::zeros(&[rows, inner]);
            let gd = gx.data_mut();
            for r in 0..rows {
                let ur = &up[r * out..(r + 1) * out];
                for k in 0..inner {
                    let wk = &wv.data()[k * out..(k + 1) * out];
                    gd[r * inner + k] = ur.iter().zip(wk).fold(T::zero(), |s, (&u, &wv)| s + u * wv);
                }
            }
            accumulate(grads, x, gx);
        }
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor { shape: a.shape().to_vec(), data }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(g.data()) {
                *e = *e + *d;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(0.0));
        let s = tape.sigmoid(x);
        let loss = tape.weighted_sum(&[(s, 1.0)]).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!((g.get(x).unwrap().data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let p = tape.param(Tensor::scalar(3.0));
        let loss = tape.weighted_sum(&[(c, 1.0), (p, 2.0)]).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[2.0]);
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn embedding_backward_scatter_adds() {
        let mut tape = Tape::<f64>::new();
        let table = tape.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let e = tape.embedding(table, &[0, 0]).unwrap();
        // Loss = Σ_r Σ_d coeff[r,d]·e[r,d] through a linear layer to a scalar.
        let w = tape.constant(Tensor::from_rows(&[vec![0.1], vec![0.2]]).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.0]));
        let y = tape.linear(e, w, b).unwrap();
        let c0 = tape.column(y, 0).unwrap();
        let p = tape.sigmoid(c0);
        let loss = tape.bce(p, Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap()).unwrap();
        let g = tape.backward(loss).unwrap();
        let gt = g.get(table).unwrap();
        // Row 1 was never selected.
        assert_eq!(&gt.data()[2..], &[0.0, 0.0]);
        // Row 0 gradient = sum over both selections of (p - y)/2 · w.
        let pv = tape.value(p).data().to_vec();
        let d = [(pv[0] - 1.0) / 2.0, pv[1] / 2.0];
        let expect = [(d[0] + d[1]) * 0.1, (d[0] + d[1]) * 0.2];
        assert!((gt.data()[0] - expect[0]).abs() < 1e-12);
        assert!((gt.data()[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn concat_routes_gradients() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let b = tape.param(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let c = tape.concat(&[a, b]).unwrap();
        let col = tape.column(c, 2).unwrap();
        let w = tape.constant(Tensor::from_rows(&[vec![1.0]]).unwrap());
        let bias = tape.constant(Tensor::vector(vec![0.0]));
        let l = tape.linear(col, w, bias).unwrap();
        let p = tape.sigmoid(l);
        let loss = tape.bce(p, Tensor::new(vec![2, 1], vec![0.0, 0.0]).unwrap()).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 0.0]);
        let gb = g.get(b).unwrap().data().to_vec();
        assert_eq!(gb[0], 0.0);
        assert_eq!(gb[2], 0.0);
        assert!(gb[1] > 0.0 && gb[3] > 0.0);
    }
}
