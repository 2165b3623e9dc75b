use ndarray::{Array1, Array2};

use super::enclosure::{backward_activation, enclose_activation, ActivationCache};
use super::{Gradients, Layer, Network};
use crate::error::{check_dim, Error, Result};
use crate::zonotope::Zonotope;

/// How gradients pass through activation enclosures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackwardMode {
    /// Slopes, offsets and error radii are constants of the backward pass.
    #[default]
    Frozen,
    /// Also differentiates slopes, offsets and radii through the hull bounds.
    Exact,
}

/// Gradient with respect to a zonotope, split into center and generator parts.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientZonotope {
    pub d_center: Array1<f64>,
    pub d_generators: Array2<f64>,
}

impl GradientZonotope {
    pub fn new(d_center: Array1<f64>, d_generators: Array2<f64>) -> Result<Self> {
        check_dim("gradient generator rows", d_center.len(), d_generators.nrows())?;
        Ok(Self { d_center, d_generators })
    }

    pub fn zeros_like(z: &Zonotope) -> Self {
        Self {
            d_center: Array1::zeros(z.dim()),
            d_generators: Array2::zeros(z.generators().raw_dim()),
        }
    }

    /// Center gradient only.
    pub fn center_only(d_center: Array1<f64>, num_generators: usize) -> Self {
        let n = d_center.len();
        Self {
            d_center,
            d_generators: Array2::zeros((n, num_generators)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum LayerTrace {
    Linear,
    Activation(ActivationCache),
}

/// Per-layer input sets and enclosure data recorded by [`Network::forward_set`].
#[derive(Debug, Clone)]
pub struct SetTrace {
    inputs: Vec<Zonotope>,
    layers: Vec<LayerTrace>,
    output_generators: usize,
}

impl SetTrace {
    pub fn inputs(&self) -> &[Zonotope] {
        &self.inputs
    }

    pub fn layers(&self) -> &[LayerTrace] {
        &self.layers
    }

    pub fn activation_caches(&self) -> impl Iterator<Item = &ActivationCache> {
        self.layers.iter().filter_map(|l| match l {
            LayerTrace::Activation(c) => Some(c),
            LayerTrace::Linear => None,
        })
    }
}

impl Network {
    /// Encloses the image of `input` by alternating affine maps and activation enclosures.
    pub fn forward_set(&self, input: &Zonotope) -> Result<(Zonotope, SetTrace)> {
        check_dim("network input set", self.input_dim(), input.dim())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        for layer in &self.layers {
            let (next, trace) = match layer {
                Layer::Linear { weight, bias } => (h.affine_map(weight, bias)?, LayerTrace::Linear),
                other => {
                    let act = other.activation().expect("activation layer");
                    let (out, cache) = enclose_activation(act, &h);
                    (out, LayerTrace::Activation(cache))
                }
            };
            inputs.push(h);
            traces.push(trace);
            h = next;
        }
        let output_generators = h.num_generators();
        Ok((
            h,
            SetTrace {
                inputs,
                layers: traces,
                output_generators,
            },
        ))
    }

    /// Backpropagates a zonotope gradient through a recorded set pass.
    ///
    /// Error generators created at an activation layer receive their gradient
    /// there and are not propagated further back.
    pub fn backward_set(
        &self,
        trace: &SetTrace,
        d_out: &GradientZonotope,
        mode: BackwardMode,
    ) -> Result<(Gradients, GradientZonotope)> {
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::StaleTrace("set trace length differs from layer count"));
        }
        check_dim("output gradient", self.output_dim(), d_out.d_center.len())?;
        check_dim(
            "output gradient generators",
            trace.output_generators,
            d_out.d_generators.ncols(),
        )?;
        let mut grads = Gradients::zeros_like(self);
        let mut dc = d_out.d_center.clone();
        let mut dg = d_out.d_generators.clone();
        for (k, (layer, layer_trace)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            let input = &trace.inputs[k];
            match (layer, layer_trace) {
                (Layer::Linear { weight, .. }, LayerTrace::Linear) => {
                    if weight.ncols() != input.dim() || dg.ncols() != input.num_generators() {
                        return Err(Error::StaleTrace("linear layer shapes differ from trace"));
                    }
                    if let Some((dw, db)) = grads.layer_mut(k) {
                        *dw += &super::outer(&dc, input.center());
                        *dw += &dg.dot(&input.generators().t());
                        *db += &dc;
                    }
                    let wt = weight.t();
                    dc = wt.dot(&dc);
                    dg = wt.dot(&dg);
                }
                (_, LayerTrace::Activation(cache)) => {
                    if cache.slope.len() != input.dim() {
                        return Err(Error::StaleTrace("activation cache width"));
                    }
                    let (c, g) = backward_activation(cache, input, &dc, dg.view(), mode);
                    dc = c;
                    dg = g;
                }
                _ => return Err(Error::StaleTrace("layer kind differs from trace")),
            }
        }
        Ok((grads, GradientZonotope { d_center: dc, d_generators: dg }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Regime};
    use crate::zonotope::{ln_dia, ln_dia_grad};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_zono<R: Rng>(n: usize, q: usize, scale: f64, rng: &mut R) -> Zonotope {
        let c = Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0));
        let g = Array2::from_shape_simple_fn((n, q), || rng.random_range(-scale..scale));
        Zonotope::new(c, g).unwrap()
    }

    #[test]
    fn linear_only_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = Network::mlp(3, &[], 2, None, &mut rng);
        let z = random_zono(3, 4, 0.5, &mut rng);
        let (out, _) = net.forward_set(&z).unwrap();
        let (w, b) = match &net.layers()[0] {
            Layer::Linear { weight, bias } => (weight, bias),
            _ => unreachable!(),
        };
        assert_eq!(out, z.affine_map(w, b).unwrap());
    }

    #[test]
    fn point_input_matches_point_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::mlp(4, &[16, 8], 2, Some(Activation::Tanh), &mut rng);
        for _ in 0..20 {
            let x = Array1::from_shape_simple_fn(4, || rng.random_range(-2.0..2.0));
            let (out, _) = net.forward_set(&Zonotope::point(x.clone())).unwrap();
            assert_eq!(out.center(), &net.eval(&x).unwrap());
            assert_eq!(out.num_generators(), 0);
        }
    }

    #[test]
    fn samples_stay_in_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let net = Network::mlp(3, &[12, 8], 2, Some(Activation::Tanh), &mut rng);
            let z = random_zono(3, 3, 0.4, &mut rng);
            let (out, _) = net.forward_set(&z).unwrap();
            let hull = out.interval_hull();
            for x in z.sample(2000, &mut rng) {
                assert!(hull.contains(&net.eval(&x).unwrap(), 1e-9));
            }
        }
    }

    #[test]
    fn identity_network_passes_gradient() {
        let net = Network::new(2, vec![Layer::linear(Array2::eye(2), Array1::zeros(2)).unwrap()]).unwrap();
        let z = Zonotope::new(array![0.1, 0.2], array![[1.0, 0.0], [0.5, 2.0]]).unwrap();
        let (_, trace) = net.forward_set(&z).unwrap();
        let d = GradientZonotope::new(array![1.0, -2.0], array![[0.3, 0.4], [-0.1, 0.0]]).unwrap();
        let (_, d_in) = net.backward_set(&trace, &d, BackwardMode::Frozen).unwrap();
        assert_eq!(d_in, d);
    }

    #[test]
    fn center_only_gradient_reduces_to_point_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = Network::mlp(3, &[8, 6], 2, Some(Activation::Tanh), &mut rng);
        let x = array![0.2, -0.4, 0.9];
        let (_, trace) = net.forward_set(&Zonotope::point(x.clone())).unwrap();
        let (_, cache) = net.forward_point(&x).unwrap();
        let d = array![0.7, -0.2];
        let (gs, ds) = net
            .backward_set(&trace, &GradientZonotope::center_only(d.clone(), 0), BackwardMode::Frozen)
            .unwrap();
        let (gp, dp) = net.backward_point(&cache, &d).unwrap();
        assert_eq!(ds.d_center, dp);
        assert_eq!(gs, gp);
    }

    #[test]
    fn stale_trace_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = Network::mlp(2, &[4], 1, None, &mut rng);
        let b = Network::mlp(2, &[4, 4], 1, None, &mut rng);
        let (out, trace) = a.forward_set(&Zonotope::linf_ball(array![0.0, 0.0], 0.1)).unwrap();
        assert!(b
            .backward_set(&trace, &GradientZonotope::zeros_like(&out), BackwardMode::Frozen)
            .is_err());
    }

    fn weight_mut(net: &mut Network, k: usize) -> &mut Array2<f64> {
        match &mut net.layers_mut()[k] {
            Layer::Linear { weight, .. } => weight,
            _ => unreachable!(),
        }
    }

    /// Smooth probe of the output set: a linear functional of the center
    /// plus the total log-diameter.
    fn probe_loss(out: &Zonotope, w: &Array1<f64>) -> f64 {
        out.center().dot(w) + ln_dia(out.generators()).sum()
    }

    fn probe_grad(out: &Zonotope, w: &Array1<f64>) -> GradientZonotope {
        GradientZonotope::new(w.clone(), ln_dia_grad(out.generators())).unwrap()
    }

    #[test]
    fn ln_dia_of_linear_net_matches_differences() {
        let mut net = Network::new(2, vec![Layer::linear(array![[0.8, -0.3], [0.4, 1.1]], array![0.1, -0.2]).unwrap()]).unwrap();
        let z = Zonotope::new(array![0.5, -0.5], array![[0.3, -0.2], [0.1, 0.4]]).unwrap();
        let w = array![0.0, 0.0];
        let (out, trace) = net.forward_set(&z).unwrap();
        let (g, _) = net.backward_set(&trace, &probe_grad(&out, &w), BackwardMode::Frozen).unwrap();
        let dw = g.layer(0).unwrap().0.clone();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..2 {
                weight_mut(&mut net, 0)[[i, j]] += h;
                let fp = probe_loss(&net.forward_set(&z).unwrap().0, &w);
                weight_mut(&mut net, 0)[[i, j]] -= 2.0 * h;
                let fm = probe_loss(&net.forward_set(&z).unwrap().0, &w);
                weight_mut(&mut net, 0)[[i, j]] += h;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - dw[[i, j]]).abs() / dw[[i, j]].abs().max(1e-3) < 1e-5);
            }
        }
    }

    #[test]
    fn exact_mode_matches_differences_on_crossing_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut checked = 0;
        while checked < 5 {
            let mut net = Network::mlp(2, &[5], 2, Some(Activation::Tanh), &mut rng);
            let z = random_zono(2, 2, 0.6, &mut rng);
            let (out, trace) = net.forward_set(&z).unwrap();
            let margin_ok = trace.activation_caches().all(|c| {
                c.regime.iter().zip(c.lower.iter().zip(c.upper.iter())).all(|(r, (l, u))| match (c.kind, r) {
                    (Activation::Relu, Regime::Crossing) => -l > 1e-2 && *u > 1e-2,
                    (Activation::Relu, _) => l.abs() > 1e-2 && u.abs() > 1e-2,
                    (Activation::Tanh, r) => *r == Regime::Crossing,
                })
            });
            if !margin_ok {
                continue;
            }
            let w = array![0.7, -0.4];
            let (g, _) = net.backward_set(&trace, &probe_grad(&out, &w), BackwardMode::Exact).unwrap();
            let h = 1e-6;
            for k in [0, 2] {
                let dw = g.layer(k).unwrap().0.clone();
                for ((i, j), &analytic) in dw.indexed_iter() {
                    weight_mut(&mut net, k)[[i, j]] += h;
                    let fp = probe_loss(&net.forward_set(&z).unwrap().0, &w);
                    weight_mut(&mut net, k)[[i, j]] -= 2.0 * h;
                    let fm = probe_loss(&net.forward_set(&z).unwrap().0, &w);
                    weight_mut(&mut net, k)[[i, j]] += h;
                    let fd = (fp - fm) / (2.0 * h);
                    let rel = (fd - analytic).abs() / analytic.abs().max(1e-2);
                    assert!(rel < 1e-4, "layer {k} [{i},{j}] fd {fd} analytic {analytic}");
                }
            }
            checked += 1;
        }
    }
}
