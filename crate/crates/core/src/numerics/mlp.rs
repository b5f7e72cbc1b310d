//! Fully connected network stored as one flat parameter vector.
//!
//! Layer `l` occupies `out_l * in_l` weights (row-major, shape `(out, in)`)
//! followed by `out_l` biases. The batched entry points (`forward`,
//! `forward_cached`, `backward`, `jvp`) treat shape misuse as a programming
//! error and panic; `apply` and `backward_single` validate and return
//! [`Result`].

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grad::{GradientBundle, ParamShape};
use crate::error::{check_dim, check_finite, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn slope(self, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Per-layer activations from a batched forward pass; `activations[0]` is the
/// input batch and the last entry is the network output.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }

    /// Input, each hidden layer's post-activation output, then the output.
    pub fn activations(&self) -> &[Array2<f64>] {
        &self.activations
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.activations[0]
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must list at least two positive sizes, got {sizes:?}"
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Fan-in scaled uniform initialization, zero biases.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        for layer in 0..net.num_layers() {
            let fan_in = net.sizes[layer] as f64;
            let gain = match net.activation(layer) {
                Activation::Relu => 6.0,
                Activation::Tanh | Activation::Identity => 3.0,
            };
            let limit = (gain / fan_in).sqrt();
            let (off, len) = net.weight_range(layer);
            for w in &mut net.params[off..off + len] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim("Mlp::set_params", self.params.len(), params.len())?;
        check_finite("Mlp parameters", params)?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    fn weight_range(&self, layer: usize) -> (usize, usize) {
        (
            self.layer_offset(layer),
            self.sizes[layer] * self.sizes[layer + 1],
        )
    }

    fn bias_range(&self, layer: usize) -> (usize, usize) {
        let (off, len) = self.weight_range(layer);
        (off + len, self.sizes[layer + 1])
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (off, len) = self.weight_range(layer);
        ArrayView2::from_shape(
            (self.sizes[layer + 1], self.sizes[layer]),
            &self.params[off..off + len],
        )
        .unwrap()
    }

    pub fn weight_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, f64> {
        let (off, len) = self.weight_range(layer);
        let shape = (self.sizes[layer + 1], self.sizes[layer]);
        ArrayViewMut2::from_shape(shape, &mut self.params[off..off + len]).unwrap()
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (off, len) = self.bias_range(layer);
        ArrayView1::from(&self.params[off..off + len])
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let (off, len) = self.bias_range(layer);
        &mut self.params[off..off + len]
    }

    /// Multiplies the weights and biases of one layer by `factor`.
    pub fn scale_layer(&mut self, layer: usize, factor: f64) {
        let off = self.layer_offset(layer);
        let len = self.sizes[layer] * self.sizes[layer + 1] + self.sizes[layer + 1];
        for p in &mut self.params[off..off + len] {
            *p *= factor;
        }
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let mut shapes = Vec::with_capacity(2 * self.num_layers());
        for layer in 0..self.num_layers() {
            let (woff, _) = self.weight_range(layer);
            let (boff, _) = self.bias_range(layer);
            shapes.push(ParamShape::new(
                format!("layer{layer}.weight"),
                vec![self.sizes[layer + 1], self.sizes[layer]],
                woff,
            ));
            shapes.push(ParamShape::new(
                format!("layer{layer}.bias"),
                vec![self.sizes[layer + 1]],
                boff,
            ));
        }
        shapes
    }

    fn affine(&self, layer: usize, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight(layer).t());
        z += &self.bias(layer);
        z
    }

    /// Batched forward pass, one sample per row.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.input_dim(), "Mlp::forward input width");
        let mut h = x.to_owned();
        for layer in 0..self.num_layers() {
            let act = self.activation(layer);
            h = self.affine(layer, &h.view());
            if act != Activation::Identity {
                h.mapv_inplace(|z| act.apply(z));
            }
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> ForwardCache {
        assert_eq!(x.ncols(), self.input_dim(), "Mlp::forward_cached input width");
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(x.to_owned());
        for layer in 0..self.num_layers() {
            let act = self.activation(layer);
            let mut h = self.affine(layer, &activations[layer].view());
            if act != Activation::Identity {
                h.mapv_inplace(|z| act.apply(z));
            }
            activations.push(h);
        }
        ForwardCache { activations }
    }

    /// Reverse pass for `sum(upstream ⊙ output)`: returns the flat parameter
    /// gradient and the gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
    ) -> (Vec<f64>, Array2<f64>) {
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.backward_accumulate(cache, upstream, &mut grads, true);
        (grads, dx.expect("input gradient requested"))
    }

    /// Input gradient only; skips the parameter-gradient products.
    pub fn backward_input(&self, cache: &ForwardCache, upstream: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut delta = upstream.to_owned();
        for layer in (0..self.num_layers()).rev() {
            self.apply_slope(layer, cache, &mut delta);
            delta = delta.dot(&self.weight(layer));
        }
        delta
    }

    /// Adds the parameter gradient into `grads`; returns the input gradient
    /// when `want_input` is set.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
        grads: &mut [f64],
        want_input: bool,
    ) -> Option<Array2<f64>> {
        assert_eq!(upstream.ncols(), self.output_dim(), "Mlp::backward upstream width");
        assert_eq!(upstream.nrows(), cache.input().nrows(), "Mlp::backward batch size");
        assert_eq!(grads.len(), self.params.len(), "Mlp::backward gradient length");
        let mut delta = upstream.to_owned();
        for layer in (0..self.num_layers()).rev() {
            self.apply_slope(layer, cache, &mut delta);
            let prev = &cache.activations[layer];
            let (woff, wlen) = self.weight_range(layer);
            let mut gw = ArrayViewMut2::from_shape(
                (self.sizes[layer + 1], self.sizes[layer]),
                &mut grads[woff..woff + wlen],
            )
            .unwrap();
            gw += &delta.t().dot(prev);
            let (boff, blen) = self.bias_range(layer);
            let db = delta.sum_axis(Axis(0));
            for (g, d) in grads[boff..boff + blen].iter_mut().zip(db.iter()) {
                *g += d;
            }
            if layer > 0 || want_input {
                delta = delta.dot(&self.weight(layer));
            }
        }
        want_input.then_some(delta)
    }

    fn apply_slope(&self, layer: usize, cache: &ForwardCache, delta: &mut Array2<f64>) {
        let act = self.activation(layer);
        if act != Activation::Identity {
            let out = &cache.activations[layer + 1];
            delta.zip_mut_with(out, |d, &y| *d *= act.slope(y));
        }
    }

    /// Forward-mode derivative of the batch output along a parameter tangent
    /// (input held fixed).
    pub fn jvp(&self, cache: &ForwardCache, tangent: &[f64]) -> Array2<f64> {
        assert_eq!(tangent.len(), self.params.len(), "Mlp::jvp tangent length");
        let batch = cache.input().nrows();
        let mut dh = Array2::<f64>::zeros((batch, self.input_dim()));
        for layer in 0..self.num_layers() {
            let (woff, wlen) = self.weight_range(layer);
            let dw = ArrayView2::from_shape(
                (self.sizes[layer + 1], self.sizes[layer]),
                &tangent[woff..woff + wlen],
            )
            .unwrap();
            let (boff, blen) = self.bias_range(layer);
            let db = ArrayView1::from(&tangent[boff..boff + blen]);
            let mut dz = if layer == 0 {
                cache.activations[0].dot(&dw.t())
            } else {
                dh.dot(&self.weight(layer).t()) + cache.activations[layer].dot(&dw.t())
            };
            dz += &db;
            self.apply_slope(layer, cache, &mut dz);
            dh = dz;
        }
        dh
    }

    /// Single-sample forward pass.
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("Mlp::apply input", self.input_dim(), input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let out = self.forward(x).into_raw_vec_and_offset().0;
        check_finite("Mlp::apply output", &out)?;
        Ok(out)
    }

    /// Gradient of `upstream · net(input)` with respect to parameters and
    /// input.
    pub fn backward_single(&self, input: &[f64], upstream: &[f64]) -> Result<(GradientBundle, Vec<f64>)> {
        check_dim("Mlp::backward input", self.input_dim(), input.len())?;
        check_dim("Mlp::backward upstream", self.output_dim(), upstream.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).unwrap();
        let cache = self.forward_cached(x);
        let (grads, dx) = self.backward(&cache, up);
        Ok((
            GradientBundle::new(grads, self.param_shapes()),
            dx.into_raw_vec_and_offset().0,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff::{central_gradient, max_relative_error};
    use crate::numerics::rng::seeded;

    /// Straight-line forward pass used as an oracle.
    fn loop_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        let sizes = net.layer_sizes();
        let p = net.params();
        let mut off = 0;
        for layer in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[layer], sizes[layer + 1]);
            let mut next = vec![0.0; n_out];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut acc = p[off + n_in * n_out + o];
                for i in 0..n_in {
                    acc += p[off + o * n_in + i] * h[i];
                }
                let last = layer + 2 == sizes.len();
                let act = if last { net.output_activation() } else { net.hidden_activation() };
                *slot = match act {
                    Activation::Identity => acc,
                    Activation::Relu => acc.max(0.0),
                    Activation::Tanh => acc.tanh(),
                };
            }
            off += n_in * n_out + n_out;
            h = next;
        }
        h
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2], Activation::Tanh, Activation::Identity).unwrap();
        assert_eq!(net.apply(&[1.0, -4.0, 2.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[2, 2], Activation::Relu, Activation::Identity).unwrap();
        net.weight_mut(0)[[0, 0]] = 1.0;
        net.weight_mut(0)[[1, 1]] = 1.0;
        assert_eq!(net.apply(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn forward_matches_loop_oracle() {
        for seed in 0..20 {
            let mut rng = seeded(seed);
            let net = Mlp::new(&[4, 7, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
            let x: Vec<f64> = (0..4).map(|i| (i as f64 * 0.37 - 0.5) * (seed as f64 + 1.0) / 5.0).collect();
            let got = net.apply(&x).unwrap();
            let want = loop_forward(&net, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn apply_rejects_wrong_width() {
        let net = Mlp::zeros(&[3, 2], Activation::Tanh, Activation::Identity).unwrap();
        assert!(matches!(net.apply(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(net.backward_single(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Mlp::new(&[2, 4, 2], Activation::Tanh, Activation::Identity, &mut seeded(1)).unwrap();
        let (g, dx) = net.backward_single(&[0.3, -0.2], &[0.0, 0.0]).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_linear_chain_rule() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu, Activation::Identity).unwrap();
        net.weight_mut(0)[[0, 0]] = 3.0;
        let (g, dx) = net.backward_single(&[2.0], &[1.0]).unwrap();
        assert_eq!(g.view(0), &[2.0]);
        assert_eq!(g.view(1), &[1.0]);
        assert_eq!(dx, vec![3.0]);
    }

    #[test]
    fn gradients_match_central_differences() {
        for seed in 0..10 {
            let mut rng = seeded(100 + seed);
            let net = Mlp::new(&[3, 6, 5, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
            let x = [0.4, -0.9, 0.2];
            let up = [0.7, -1.3];
            let (g, dx) = net.backward_single(&x, &up).unwrap();
            let objective = |p: &[f64]| {
                let mut n = net.clone();
                n.params_mut().copy_from_slice(p);
                let y = n.apply(&x).unwrap();
                y[0] * up[0] + y[1] * up[1]
            };
            let fd = central_gradient(objective, net.params(), 1e-5);
            assert!(max_relative_error(g.flat(), &fd) < 1e-6);
            let fdx = central_gradient(
                |xi: &[f64]| {
                    let y = net.apply(xi).unwrap();
                    y[0] * up[0] + y[1] * up[1]
                },
                &x,
                1e-5,
            );
            assert!(max_relative_error(&dx, &fdx) < 1e-6);
        }
    }

    #[test]
    fn jvp_matches_directional_difference() {
        let mut rng = seeded(5);
        let net = Mlp::new(&[2, 8, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let x = Array2::from_shape_vec((2, 2), vec![0.1, 0.5, -0.7, 0.3]).unwrap();
        let v: Vec<f64> = (0..net.num_params()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let cache = net.forward_cached(x.view());
        let jv = net.jvp(&cache, &v);
        let h = 1e-6;
        let shifted = |sign: f64| {
            let mut n = net.clone();
            for (p, d) in n.params_mut().iter_mut().zip(&v) {
                *p += sign * h * d;
            }
            n.forward(x.view())
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
        for (a, b) in jv.iter().zip(fd.iter()) {
            assert!((a - b).abs() < 1e-7 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn forward_and_backward_are_bitwise_pure() {
        let net = Mlp::new(&[3, 16, 2], Activation::Relu, Activation::Identity, &mut seeded(9)).unwrap();
        let x = [0.25, -1.5, 0.75];
        let a = net.apply(&x).unwrap();
        let b = net.apply(&x).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let (g1, d1) = net.backward_single(&x, &[1.0, 2.0]).unwrap();
        let (g2, d2) = net.backward_single(&x, &[1.0, 2.0]).unwrap();
        assert_eq!(g1.flat(), g2.flat());
        assert_eq!(d1, d2);
    }

    #[test]
    fn param_shapes_chain_with_layer_sizes() {
        let net = Mlp::zeros(&[4, 3, 2], Activation::Relu, Activation::Identity).unwrap();
        let shapes = net.param_shapes();
        assert_eq!(shapes.len(), 4);
        assert_eq!(shapes[0].shape, vec![3, 4]);
        assert_eq!(shapes[3].shape, vec![2]);
        let total: usize = shapes.iter().map(|s| s.len()).sum();
        assert_eq!(total, net.num_params());
    }
}
