//! Small dense ReLU networks with hand-written backpropagation and Adam.
//!
//! Generic over the float type: training runs in `f32`, gradient checks in `f64`.

use ndarray::{Array1, Array2, Axis, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;

pub trait Real:
    ndarray::LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + Debug
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Fully connected layer `y = x W + b`, with `W` shaped `(inputs, outputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// He-style uniform init, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || {
            T::lit(rng.random_range(-limit..limit))
        });
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            weight: self.weight.mapv(|v| U::lit(v.f64())),
            bias: self.bias.mapv(|v| U::lit(v.f64())),
        }
    }
}

/// Stack of dense layers, ReLU between them, identity on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Parameter-shaped gradient container.
pub type Grads<T> = Vec<Dense<T>>;

/// Activations kept from a forward pass: the input, every hidden output (post-ReLU),
/// and the final linear output.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    acts: Vec<Array2<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Array2<T> {
        self.acts.last().expect("trace holds at least the input")
    }
}

impl<T: Real> Mlp<T> {
    /// `sizes` lists every layer width including input and output.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| Dense::he_uniform(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weight.ncols()));
        s
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut h = x.dot(&self.layers[0].weight) + &self.layers[0].bias;
        for layer in &self.layers[1..] {
            h.mapv_inplace(relu);
            h = h.dot(&layer.weight) + &layer.bias;
        }
        h
    }

    pub fn forward_trace(&self, x: Array2<T>) -> Trace<T> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = acts[i].dot(&layer.weight) + &layer.bias;
            if i < last {
                h.mapv_inplace(relu);
            }
            acts.push(h);
        }
        Trace { acts }
    }

    /// Backpropagates `grad_out` (dLoss/dOutput, batch x outputs) through a trace.
    pub fn backward(&self, trace: &Trace<T>, grad_out: Array2<T>) -> Grads<T> {
        let mut grads: Vec<Dense<T>> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out;
        for i in (0..self.layers.len()).rev() {
            let input = &trace.acts[i];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Dense { weight: gw, bias: gb });
            if i > 0 {
                let mut next = delta.dot(&self.layers[i].weight.t());
                Zip::from(&mut next).and(input).for_each(|d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
                delta = next;
            }
        }
        grads.reverse();
        grads
    }

    /// dLoss/dInput for the batch in `trace`.
    pub fn input_gradient(&self, trace: &Trace<T>, grad_out: Array2<T>) -> Array2<T> {
        let mut delta = grad_out;
        for i in (0..self.layers.len()).rev() {
            let mut next = delta.dot(&self.layers[i].weight.t());
            if i > 0 {
                Zip::from(&mut next).and(&trace.acts[i]).for_each(|d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
            }
            delta = next;
        }
        delta
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (li, layer) in self.layers.iter().enumerate() {
            let nw = layer.weight.len();
            if index < nw {
                let cols = layer.weight.ncols();
                return (li, Some((index / cols, index % cols)), 0);
            }
            index -= nw;
            if index < layer.bias.len() {
                return (li, None, index);
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter access in layer order, weights (row-major) before biases.
    pub fn param(&self, index: usize) -> T {
        match self.locate(index) {
            (li, Some(rc), _) => self.layers[li].weight[rc],
            (li, None, b) => self.layers[li].bias[b],
        }
    }

    pub fn set_param(&mut self, index: usize, v: T) {
        match self.locate(index) {
            (li, Some(rc), _) => self.layers[li].weight[rc] = v,
            (li, None, b) => self.layers[li].bias[b] = v,
        }
    }

    pub fn grad_at(grads: &Grads<T>, index: usize, shape_of: &Self) -> T {
        match shape_of.locate(index) {
            (li, Some(rc), _) => grads[li].weight[rc],
            (li, None, b) => grads[li].bias[b],
        }
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn polyak_update(&mut self, online: &Self, tau: T) {
        let keep = T::one() - tau;
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.weight)
                .and(&o.weight)
                .for_each(|t, &o| *t = tau * o + keep * *t);
            Zip::from(&mut t.bias)
                .and(&o.bias)
                .for_each(|t, &o| *t = tau * o + keep * *t);
        }
    }

    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weight.fill(T::zero());
        last.bias.fill(T::zero());
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(Dense::cast).collect(),
        }
    }

    /// Little-endian bytes of every parameter, for hashing.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.num_params() * 8);
        for l in &self.layers {
            for v in l.weight.iter().chain(l.bias.iter()) {
                out.extend_from_slice(&v.f64().to_le_bytes());
            }
        }
        out
    }
}

#[inline]
fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Dense<T>>,
    v: Vec<Dense<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(net: &Mlp<T>, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Dense<T>> = net
            .layers
            .iter()
            .map(|l| Dense::zeros(l.weight.nrows(), l.weight.ncols()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp<T>, grads: &Grads<T>) {
        self.t += 1;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let c1 = T::one() - b1;
        let c2 = T::one() - b2;
        let bias1 = 1.0 - self.beta1.powi(self.t);
        let bias2 = 1.0 - self.beta2.powi(self.t);
        let step = T::lit(self.lr * bias2.sqrt() / bias1);
        let eps = T::lit(self.eps * bias2.sqrt());
        let wd = T::lit(self.weight_decay);
        let decay = self.weight_decay != 0.0;
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let update = |p: &mut T, &g: &T, m: &mut T, v: &mut T| {
                let g = if decay { g + wd * *p } else { g };
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                *p = *p - step * *m / (v.sqrt() + eps);
            };
            Zip::from(&mut layer.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
    }
}
