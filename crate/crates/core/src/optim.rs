//! Adam with bias correction, keyed to a network's linear layers.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Gradients, Layer, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

type Moments = Vec<Option<(Array2<f64>, Array1<f64>)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub config: AdamConfig,
    step: u64,
    m: Moments,
    v: Moments,
}

fn zero_moments(net: &Network) -> Moments {
    Gradients::zeros_like(net).layers().to_vec()
}

impl Adam {
    pub fn new(net: &Network, lr: f64, config: AdamConfig) -> Adam {
        Adam {
            lr,
            config,
            step: 0,
            m: zero_moments(net),
            v: zero_moments(net),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.layers().len() != net.layers().len() || self.m.len() != net.layers().len() {
            return Err(Error::StaleTrace("optimizer state does not match network"));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let lr = self.lr;
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (k, layer) in net.layers_mut().iter_mut().enumerate() {
            let (Layer::Linear { weight, bias }, Some((gw, gb)), Some((mw, mb)), Some((vw, vb))) =
                (layer, grads.layer(k), self.m[k].as_mut(), self.v[k].as_mut())
            else {
                continue;
            };
            Zip::from(weight).and(gw).and(mw).and(vw).for_each(update);
            Zip::from(bias).and(gb).and(mb).and(vb).for_each(update);
        }
        Ok(())
    }

    /// Text dump of the step counter and moments, values in `{:e}`.
    pub fn to_text(&self) -> String {
        let mut out = format!("setrl-adam 1\nstep {}\nlr {:e}\n", self.step, self.lr);
        for (k, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            if let (Some((mw, mb)), Some((vw, vb))) = (m, v) {
                writeln!(out, "layer {k}").unwrap();
                let rows: [Box<dyn Iterator<Item = &f64>>; 4] =
                    [Box::new(mw.iter()), Box::new(mb.iter()), Box::new(vw.iter()), Box::new(vb.iter())];
                for arr in rows {
                    let row: Vec<String> = arr.map(|x| format!("{x:e}")).collect();
                    out.push_str(&row.join(" "));
                    out.push('\n');
                }
            }
        }
        out
    }

    /// Restore moments written by [`Adam::to_text`] for a network of the same shape.
    pub fn from_text(net: &Network, config: AdamConfig, text: &str) -> Result<Adam> {
        let bad = |line: usize, reason: &str| Error::Checkpoint {
            line,
            reason: reason.into(),
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first().map(|l| l.trim()) != Some("setrl-adam 1") {
            return Err(bad(1, "missing setrl-adam header"));
        }
        let field = |i: usize, key: &str| {
            lines
                .get(i)
                .and_then(|l| l.strip_prefix(key))
                .map(str::trim)
                .ok_or_else(|| bad(i + 1, "missing field"))
        };
        let step = field(1, "step ")?.parse().map_err(|_| bad(2, "bad step"))?;
        let lr = field(2, "lr ")?.parse().map_err(|_| bad(3, "bad lr"))?;
        let mut adam = Adam::new(net, lr, config);
        adam.step = step;
        let mut i = 3;
        for k in 0..adam.m.len() {
            let (Some((mw, mb)), Some((vw, vb))) = (adam.m[k].as_mut(), adam.v[k].as_mut()) else {
                continue;
            };
            if lines.get(i).map(|l| l.trim()) != Some(format!("layer {k}").as_str()) {
                return Err(bad(i + 1, "expected layer tag"));
            }
            i += 1;
            let targets: [Box<dyn Iterator<Item = &mut f64>>; 4] = [
                Box::new(mw.iter_mut()),
                Box::new(mb.iter_mut()),
                Box::new(vw.iter_mut()),
                Box::new(vb.iter_mut()),
            ];
            for target in targets {
                let line = lines.get(i).ok_or_else(|| bad(i + 1, "truncated"))?;
                let values: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| bad(i + 1, "bad value")))
                    .collect::<Result<_>>()?;
                let slots: Vec<&mut f64> = target.collect();
                if slots.len() != values.len() {
                    return Err(bad(i + 1, "wrong value count"));
                }
                for (slot, v) in slots.into_iter().zip(values) {
                    *slot = v;
                }
                i += 1;
            }
        }
        Ok(adam)
    }
}
