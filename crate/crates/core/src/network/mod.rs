//! Feed-forward networks with point and zonotope evaluation.

mod checkpoint;
mod enclosure;
mod set;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{check_dim, Error, Result};

pub use enclosure::{enclose_activation, ActivationCache, Regime, POINT_WIDTH};
pub use set::{BackwardMode, GradientZonotope, LayerTrace, SetTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative, with the ReLU subgradient at 0 taken as 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear { weight: Array2<f64>, bias: Array1<f64> },
    Relu,
    Tanh,
}

impl Layer {
    pub fn linear(weight: Array2<f64>, bias: Array1<f64>) -> Result<Layer> {
        check_dim("linear bias", weight.nrows(), bias.len())?;
        Ok(Layer::Linear { weight, bias })
    }

    pub fn activation(&self) -> Option<Activation> {
        match self {
            Layer::Linear { .. } => None,
            Layer::Relu => Some(Activation::Relu),
            Layer::Tanh => Some(Activation::Tanh),
        }
    }

    fn output_dim(&self, input: usize) -> usize {
        match self {
            Layer::Linear { weight, .. } => weight.nrows(),
            _ => input,
        }
    }
}

impl From<Activation> for Layer {
    fn from(a: Activation) -> Layer {
        match a {
            Activation::Relu => Layer::Relu,
            Activation::Tanh => Layer::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Network> {
        let mut width = input_dim;
        for layer in &layers {
            if let Layer::Linear { weight, bias } = layer {
                check_dim("linear layer input", width, weight.ncols())?;
                check_dim("linear bias", weight.nrows(), bias.len())?;
            }
            width = layer.output_dim(width);
        }
        Ok(Network { input_dim, layers })
    }

    /// Fully connected network with ReLU hidden layers and
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn mlp<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        output_activation: Option<Activation>,
        rng: &mut R,
    ) -> Network {
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &width in hidden.iter().chain(std::iter::once(&output_dim)) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((width, fan_in), || rng.random_range(-bound..bound));
            let bias = Array1::from_shape_simple_fn(width, || rng.random_range(-bound..bound));
            layers.push(Layer::Linear { weight, bias });
            layers.push(Layer::Relu);
            fan_in = width;
        }
        layers.pop();
        if let Some(act) = output_activation {
            layers.push(act.into());
        }
        Network { input_dim, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.iter().fold(self.input_dim, |w, l| l.output_dim(w))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Evaluate without keeping a cache.
    pub fn eval(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        check_dim("network input", self.input_dim, x.len())?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = apply_point(layer, &h);
        }
        Ok(h)
    }

    pub fn forward_point(&self, x: &Array1<f64>) -> Result<(Array1<f64>, PointCache)> {
        check_dim("network input", self.input_dim, x.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let next = apply_point(layer, &h);
            inputs.push(h);
            h = next;
        }
        Ok((h, PointCache { inputs }))
    }

    /// Backpropagate `d_out` (gradient of a scalar w.r.t. the output).
    pub fn backward_point(&self, cache: &PointCache, d_out: &Array1<f64>) -> Result<(Gradients, Array1<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleTrace("point cache length differs from layer count"));
        }
        check_dim("output gradient", self.output_dim(), d_out.len())?;
        let mut grads = Gradients::zeros_like(self);
        let mut delta = d_out.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[k];
            match layer {
                Layer::Linear { weight, .. } => {
                    if input.len() != weight.ncols() {
                        return Err(Error::StaleTrace("point cache input width"));
                    }
                    if let Some((dw, db)) = grads.layers[k].as_mut() {
                        *dw += &outer(&delta, input);
                        *db += &delta;
                    }
                    delta = weight.t().dot(&delta);
                }
                other => {
                    let act = other.activation().expect("activation layer");
                    delta.zip_mut_with(input, |d, &x| *d *= act.derivative(x));
                }
            }
        }
        Ok((grads, delta))
    }

    /// Forward pass over a batch laid out one sample per row.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<(Array2<f64>, BatchCache)> {
        check_dim("network batch input", self.input_dim, x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let next = match layer {
                Layer::Linear { weight, bias } => h.dot(&weight.t()) + bias,
                other => {
                    let act = other.activation().expect("activation layer");
                    h.mapv(|v| act.apply(v))
                }
            };
            inputs.push(h);
            h = next;
        }
        Ok((h, BatchCache { inputs }))
    }

    /// Backpropagates per-row output gradients; parameter gradients are summed over rows.
    pub fn backward_batch(&self, cache: &BatchCache, d_out: &Array2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleTrace("batch cache length differs from layer count"));
        }
        check_dim("batch output gradient", self.output_dim(), d_out.ncols())?;
        let mut grads = Gradients::zeros_like(self);
        let mut delta = d_out.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[k];
            if input.nrows() != delta.nrows() {
                return Err(Error::StaleTrace("batch size differs from cache"));
            }
            match layer {
                Layer::Linear { weight, .. } => {
                    if input.ncols() != weight.ncols() {
                        return Err(Error::StaleTrace("batch cache input width"));
                    }
                    if let Some((dw, db)) = grads.layers[k].as_mut() {
                        *dw += &delta.t().dot(input);
                        *db += &delta.sum_axis(ndarray::Axis(0));
                    }
                    delta = delta.dot(weight);
                }
                other => {
                    let act = other.activation().expect("activation layer");
                    delta.zip_mut_with(input, |d, &x| *d *= act.derivative(x));
                }
            }
        }
        Ok((grads, delta))
    }

    /// `sum of squared weights` over linear layers (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Linear { weight, .. } => Some(weight.iter().map(|w| w * w).sum::<f64>()),
                _ => None,
            })
            .sum()
    }

    /// Polyak update `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update(&mut self, source: &Network, tau: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            if let (Layer::Linear { weight: wd, bias: bd }, Layer::Linear { weight: ws, bias: bs }) = (dst, src) {
                wd.zip_mut_with(ws, |d, &s| *d = tau * s + (1.0 - tau) * *d);
                bd.zip_mut_with(bs, |d, &s| *d = tau * s + (1.0 - tau) * *d);
            }
        }
    }

    /// First layer index holding a non-finite parameter.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers.iter().position(|l| match l {
            Layer::Linear { weight, bias } => {
                weight.iter().any(|v| !v.is_finite()) || bias.iter().any(|v| !v.is_finite())
            }
            _ => false,
        })
    }
}

fn apply_point(layer: &Layer, h: &Array1<f64>) -> Array1<f64> {
    match layer {
        Layer::Linear { weight, bias } => weight.dot(h) + bias,
        other => {
            let act = other.activation().expect("activation layer");
            h.mapv(|x| act.apply(x))
        }
    }
}

pub(crate) fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Layer inputs recorded by [`Network::forward_point`].
#[derive(Debug, Clone)]
pub struct PointCache {
    inputs: Vec<Array1<f64>>,
}

/// Layer inputs recorded by [`Network::forward_batch`].
#[derive(Debug, Clone)]
pub struct BatchCache {
    inputs: Vec<Array2<f64>>,
}

/// Parameter gradients, aligned with the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Option<(Array2<f64>, Array1<f64>)>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Gradients {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Linear { weight, bias } => {
                        Some((Array2::zeros(weight.raw_dim()), Array1::zeros(bias.len())))
                    }
                    _ => None,
                })
                .collect(),
        }
    }

    pub fn layer(&self, k: usize) -> Option<(&Array2<f64>, &Array1<f64>)> {
        self.layers.get(k).and_then(|l| l.as_ref().map(|(w, b)| (w, b)))
    }

    pub fn layers(&self) -> &[Option<(Array2<f64>, Array1<f64>)>] {
        &self.layers
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some((wa, ba)), Some((wb, bb))) = (a, b) {
                *wa += wb;
                *ba += bb;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in self.layers.iter_mut().flatten() {
            *w *= s;
            *b *= s;
        }
    }

    /// Adds the gradient of `lambda/2 * ||W||^2` (weights only).
    pub fn add_weight_decay(&mut self, net: &Network, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for (g, layer) in self.layers.iter_mut().zip(&net.layers) {
            if let (Some((dw, _)), Layer::Linear { weight, .. }) = (g, layer) {
                dw.scaled_add(lambda, weight);
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .map(|(w, b)| w.iter().chain(b.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn layer_mut(&mut self, k: usize) -> Option<&mut (Array2<f64>, Array1<f64>)> {
        self.layers.get_mut(k).and_then(|l| l.as_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_linear() {
        let net = Network::new(2, vec![Layer::linear(Array2::eye(2), Array1::zeros(2)).unwrap()]).unwrap();
        assert_eq!(net.eval(&array![1.5, -2.0]).unwrap(), array![1.5, -2.0]);
    }

    #[test]
    fn relu_layer() {
        let net = Network::new(2, vec![Layer::Relu]).unwrap();
        assert_eq!(net.eval(&array![-1.0, 2.0]).unwrap(), array![0.0, 2.0]);
    }

    #[test]
    fn rejects_mismatched_layers() {
        let w = Array2::zeros((3, 2));
        assert!(Network::new(4, vec![Layer::linear(w, Array1::zeros(3)).unwrap()]).is_err());
        let net = Network::mlp(2, &[4], 1, None, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(net.eval(&array![1.0]).is_err());
    }

    #[test]
    fn mlp_shape_and_init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::mlp(3, &[64, 32], 2, Some(Activation::Tanh), &mut rng);
        assert_eq!(net.output_dim(), 2);
        assert_eq!(net.layers().len(), 6);
        assert_eq!(net.layers().last(), Some(&Layer::Tanh));
        if let Layer::Linear { weight, .. } = &net.layers()[2] {
            let bound = 1.0 / 64f64.sqrt();
            assert!(weight.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn linear_backward_is_outer_product() {
        let w = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let net = Network::new(2, vec![Layer::linear(w.clone(), array![0.0, 0.0, 0.0]).unwrap()]).unwrap();
        let x = array![0.5, -1.0];
        let (_, cache) = net.forward_point(&x).unwrap();
        let d_out = array![1.0, -1.0, 2.0];
        let (g, d_in) = net.backward_point(&cache, &d_out).unwrap();
        let (dw, db) = g.layer(0).unwrap();
        assert_eq!(dw, &outer(&d_out, &x));
        assert_eq!(db, &d_out);
        assert_eq!(d_in, w.t().dot(&d_out));
    }

    #[test]
    fn zero_output_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::mlp(3, &[5, 4], 2, Some(Activation::Tanh), &mut rng);
        let (_, cache) = net.forward_point(&array![0.1, 0.2, 0.3]).unwrap();
        let (g, d_in) = net.backward_point(&cache, &Array1::zeros(2)).unwrap();
        assert_eq!(g.norm(), 0.0);
        assert!(d_in.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_point_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::mlp(3, &[6], 2, Some(Activation::Tanh), &mut rng);
        let x = array![0.3, -0.8, 0.5];
        let probe = array![0.7, -1.3];
        let loss = |n: &Network| n.eval(&x).unwrap().dot(&probe);
        let (_, cache) = net.forward_point(&x).unwrap();
        let (g, _) = net.backward_point(&cache, &probe).unwrap();
        let h = 1e-6;
        for k in [0, 2] {
            let (dw, db) = g.layer(k).map(|(w, b)| (w.clone(), b.clone())).unwrap();
            let shape = dw.dim();
            for i in 0..shape.0 {
                for j in 0..shape.1 {
                    let orig = weight_at(&net, k, i, j);
                    set_weight(&mut net, k, i, j, orig + h);
                    let fp = loss(&net);
                    set_weight(&mut net, k, i, j, orig - h);
                    let fm = loss(&net);
                    set_weight(&mut net, k, i, j, orig);
                    let fd = (fp - fm) / (2.0 * h);
                    let rel = (fd - dw[[i, j]]).abs() / dw[[i, j]].abs().max(1e-3);
                    assert!(rel < 1e-5, "layer {k} w[{i},{j}]: fd {fd} vs {}", dw[[i, j]]);
                }
                let _ = db[i];
            }
        }
    }

    #[test]
    fn batch_matches_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Network::mlp(3, &[8, 5], 2, Some(Activation::Tanh), &mut rng);
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 * 0.37 - j as f64 * 0.81).sin());
        let d = Array2::from_shape_fn((6, 2), |(i, j)| (i + 2 * j) as f64 * 0.1 - 0.3);
        let (out, cache) = net.forward_batch(&x).unwrap();
        let (g, d_in) = net.backward_batch(&cache, &d).unwrap();
        let mut g_ref = Gradients::zeros_like(&net);
        for i in 0..6 {
            let xi = x.row(i).to_owned();
            let (yi, ci) = net.forward_point(&xi).unwrap();
            assert!((&out.row(i) - &yi).iter().all(|v| v.abs() < 1e-14));
            let (gi, di) = net.backward_point(&ci, &d.row(i).to_owned()).unwrap();
            assert!((&d_in.row(i) - &di).iter().all(|v| v.abs() < 1e-14));
            g_ref.add_assign(&gi);
        }
        for (a, b) in g.layers().iter().flatten().zip(g_ref.layers().iter().flatten()) {
            assert!((&a.0 - &b.0).iter().chain((&a.1 - &b.1).iter()).all(|v| v.abs() < 1e-13));
        }
    }

    fn weight_at(net: &Network, k: usize, i: usize, j: usize) -> f64 {
        match &net.layers()[k] {
            Layer::Linear { weight, .. } => weight[[i, j]],
            _ => unreachable!(),
        }
    }

    fn set_weight(net: &mut Network, k: usize, i: usize, j: usize, v: f64) {
        if let Layer::Linear { weight, .. } = &mut net.layers_mut()[k] {
            weight[[i, j]] = v;
        }
    }

    #[test]
    fn soft_update_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Network::mlp(2, &[3], 1, None, &mut rng);
        let mut b = Network::mlp(2, &[3], 1, None, &mut rng);
        let b0 = b.clone();
        b.soft_update(&a, 0.25);
        if let (Layer::Linear { weight: wa, .. }, Layer::Linear { weight: wb, .. }, Layer::Linear { weight: w0, .. }) =
            (&a.layers()[0], &b.layers()[0], &b0.layers()[0])
        {
            let expect = wa * 0.25 + w0 * 0.75;
            assert!((wb - &expect).iter().all(|d| d.abs() < 1e-15));
        }
        b.soft_update(&a, 1.0);
        assert_eq!(a, b);
    }
}
