//! Tape-based reverse-mode differentiation over whole tensors.
//!
//! Every op appends a node whose inputs already live on the tape, so the
//! node list is a valid topological order and `backward` is a single reverse
//! sweep.

use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        padding: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Concat(Var, Var),
    Nearest {
        x: Var,
        factor: usize,
    },
    Bilinear {
        x: Var,
        factor: usize,
    },
    GlobalAvgPool(Var),
    ChannelStatPool(Var),
    ScaleChannels {
        x: Var,
        scale: Var,
    },
    ScalePixels {
        x: Var,
        map: Var,
    },
    L1Loss {
        pred: Var,
        target: Var,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let padding = (self.shape(w).h.saturating_sub(1)) / 2;
        let out = ops::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            1,
            padding,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, padding }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = ops::leaky_relu(self.value(x), slope);
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat(a, b), &[a, b]))
    }

    pub fn resize_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = ops::resize_nearest(self.value(x), factor)?;
        Ok(self.push(out, Op::Nearest { x, factor }, &[x]))
    }

    pub fn resize_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = ops::resize_bilinear(self.value(x), factor)?;
        Ok(self.push(out, Op::Bilinear { x, factor }, &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let out = ops::global_avg_pool(self.value(x));
        self.push(out, Op::GlobalAvgPool(x), &[x])
    }

    pub fn channel_stat_pool(&mut self, x: Var) -> Var {
        let out = ops::channel_stat_pool(self.value(x));
        self.push(out, Op::ChannelStatPool(x), &[x])
    }

    pub fn scale_channels(&mut self, x: Var, scale: Var) -> Result<Var> {
        let out = ops::scale_channels(self.value(x), self.value(scale))?;
        Ok(self.push(out, Op::ScaleChannels { x, scale }, &[x, scale]))
    }

    pub fn scale_pixels(&mut self, x: Var, map: Var) -> Result<Var> {
        let out = ops::scale_pixels(self.value(x), self.value(map))?;
        Ok(self.push(out, Op::ScalePixels { x, map }, &[x, map]))
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let out = ops::l1_loss(self.value(pred), self.value(target))?;
        Ok(self.push(out, Op::L1Loss { pred, target }, &[pred, target]))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// Which linear piece every non-smooth op is on: the sign of each
    /// (leaky) ReLU input and L1 residual, and the argmax of each channel max
    /// pool. Two evaluations with equal patterns lie in one region where the
    /// recorded function is smooth.
    pub fn branch_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::LeakyRelu { x, .. } => {
                    out.extend(self.value(x).data().iter().map(|v| (*v > T::zero()) as u32));
                }
                Op::L1Loss { pred, target } => {
                    let (p, t) = (self.value(pred).data(), self.value(target).data());
                    out.extend(
                        p.iter()
                            .zip(t)
                            .map(|(a, b)| if a > b { 2 } else { (a == b) as u32 }),
                    );
                }
                Op::ChannelStatPool(x) => {
                    let v = self.value(x);
                    let s = v.shape();
                    for n in 0..s.n {
                        for i in 0..s.plane() {
                            let mut best = 0;
                            for c in 1..s.c {
                                if v.plane(n, c)[i] > v.plane(n, best)[i] {
                                    best = c;
                                }
                            }
                            out.push(best as u32);
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Propagates `d loss / d node` back to every leaf that requires a
    /// gradient. The tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Backward(
                "tape already consumed; record a new forward pass".into(),
            ));
        }
        if self.nodes.is_empty() {
            return Err(Error::Backward("empty tape".into()));
        }
        if self.shape(loss) != Shape::scalar() {
            return Err(Error::Backward(format!(
                "loss must have shape {}, got {}",
                Shape::scalar(),
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, contrib) in self.input_grads(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(contrib.data())
                        .for_each(|(a, c)| *a += *c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| match n.op {
                Op::Leaf if n.requires_grad => {
                    Some(g.unwrap_or_else(|| Tensor::zeros(n.value.shape())))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn input_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, w, b, padding } => {
                let cg = ops::conv2d_backward(val(*x), val(*w), b.is_some(), *padding, g)?;
                let mut out = vec![(*x, cg.input), (*w, cg.weight)];
                if let (Some(b), Some(gb)) = (b, cg.bias) {
                    out.push((*b, gb));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => vec![(*a, ops::mul(g, val(*b))?), (*b, ops::mul(g, val(*a))?)],
            Op::Sigmoid(x) => vec![(*x, ops::sigmoid_backward(&node.value, g))],
            Op::LeakyRelu { x, slope } => vec![(*x, ops::leaky_relu_backward(val(*x), *slope, g))],
            Op::Concat(a, b) => {
                let ca = self.shape(*a).c;
                let cb = self.shape(*b).c;
                vec![
                    (*a, g.slice_channels(0, ca)?),
                    (*b, g.slice_channels(ca, cb)?),
                ]
            }
            Op::Nearest { x, factor } => {
                vec![(*x, ops::resize_nearest_backward(self.shape(*x), *factor, g))]
            }
            Op::Bilinear { x, factor } => {
                vec![(
                    *x,
                    ops::resize_bilinear_backward(self.shape(*x), *factor, g),
                )]
            }
            Op::GlobalAvgPool(x) => vec![(*x, ops::global_avg_pool_backward(self.shape(*x), g))],
            Op::ChannelStatPool(x) => vec![(*x, ops::channel_stat_pool_backward(val(*x), g))],
            Op::ScaleChannels { x, scale } => {
                let (gx, gs) = ops::scale_channels_backward(val(*x), val(*scale), g);
                vec![(*x, gx), (*scale, gs)]
            }
            Op::ScalePixels { x, map } => {
                let (gx, gm) = ops::scale_pixels_backward(val(*x), val(*map), g);
                vec![(*x, gx), (*map, gm)]
            }
            Op::L1Loss { pred, target } => {
                let gp = ops::l1_loss_backward(val(*pred), val(*target), g.data()[0]);
                let gt = gp.map(|v| -v);
                vec![(*pred, gp), (*target, gt)]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(self.shape(*x), g.data()[0]))],
        };
        Ok(out)
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a leaf that requires one.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grad_of_weighted_sum_is_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::uniform(Shape::new(1, 2, 3, 3), -1.0, 1.0, &mut rng);
        let w = Tensor::<f32>::uniform(Shape::new(1, 2, 3, 3), -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let wv = tape.leaf(w, true);
        let p = tape.mul(wv, xv).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(wv).unwrap(), &x);
        assert!(grads.get(xv).is_none());
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)), true);
        assert!(matches!(tape.backward(a), Err(Error::Backward(_))));
        let s = tape.sum(a);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Backward(_))));

        let mut empty = Tape::<f32>::new();
        assert!(empty.backward(Var(0)).is_err());
    }

    #[test]
    fn repeated_use_accumulates() {
        // loss = sum(x * x) -> grad 2x
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, -2.0, 0.5]).unwrap();
        let xv = tape.leaf(x.clone(), true);
        let sq = tape.mul(xv, xv).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(xv).unwrap().data(), &[2.0, -4.0, 1.0]);
    }
}
