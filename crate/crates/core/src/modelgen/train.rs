//! Minibatch SGD with softmax cross-entropy, optionally on PGD examples.
//!
//! Training runs in double precision; parameters are rounded to single
//! once at the end. Initial parameters are drawn as singles, so a run with
//! zero epochs returns them unchanged.

use serde::{Deserialize, Serialize};

use super::dataset::ToyDataset;
use crate::error::{Error, Result};
use crate::io::LayerSpec;
use crate::network::{Layer, Network};
use crate::rng::{seeded, shuffle, unit_f32, Rng};
use crate::tensor::Shape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// Conv 3×3×4 → ReLU → conv 3×3×4 → ReLU → flatten → dense, on 8×8×1.
    pub fn demo(classes: usize) -> ArchSpec {
        let conv = |in_ch| LayerSpec::Conv2d { out_ch: 4, in_ch, kh: 3, kw: 3, padding: 0 };
        ArchSpec {
            input_shape: [8, 8, 1],
            layers: vec![
                conv(1),
                LayerSpec::Relu,
                conv(4),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { rows: classes, cols: 64 },
            ],
        }
    }

    pub fn input_shape(&self) -> Shape {
        let [h, w, c] = self.input_shape;
        Shape::new(h, w, c)
    }

    /// Network with He-uniform weights (drawn in single precision) and zero biases.
    pub fn init(&self, rng: &mut Rng) -> Result<Network> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for spec in &self.layers {
            let (nw, nb) = spec.parameter_counts();
            let fan_in = match *spec {
                LayerSpec::Conv2d { in_ch, kh, kw, .. } => in_ch * kh * kw,
                LayerSpec::Dense { cols, .. } => cols,
                _ => 1,
            };
            let a = (6.0 / fan_in as f64).sqrt() as f32;
            let weights = (0..nw).map(|_| a * (2.0 * unit_f32(rng) - 1.0)).collect();
            layers.push(spec.build(weights, vec![0.0; nb]));
        }
        Network::new(self.input_shape(), layers)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgdConfig {
    pub enabled: bool,
    pub eps: f64,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig { enabled: false, eps: 0.0, steps: 0, step_size: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub pgd: PgdConfig,
}

/// Double-precision copy of a network's parameters.
#[derive(Clone, Debug)]
pub(crate) struct Params {
    pub(crate) net: Network,
    pub(crate) w: Vec<Vec<f64>>,
    pub(crate) b: Vec<Vec<f64>>,
}

impl Params {
    pub(crate) fn of(net: &Network) -> Params {
        let (w, b) = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => (widen(&c.weights), widen(&c.bias)),
                Layer::Dense(d) => (widen(&d.weights), widen(&d.bias)),
                _ => (Vec::new(), Vec::new()),
            })
            .unzip();
        Params { net: net.clone(), w, b }
    }

    fn to_network(&self) -> Result<Network> {
        let layers = self
            .net
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| LayerSpec::of(l).build(narrow(&self.w[i]), narrow(&self.b[i])))
            .collect();
        self.net.with_layers(layers)
    }

    /// Activations: entry 0 is the input, entry `i + 1` the output of layer `i`.
    pub(crate) fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for (i, (layer, &shape)) in self.net.layers().iter().zip(self.net.shapes()).enumerate() {
            let a = acts.last().unwrap();
            let out = match layer {
                Layer::Conv2d(c) => {
                    let os = c.output_shape(shape).expect("validated");
                    let mut out = vec![0.0; os.len()];
                    for oy in 0..os.height {
                        for ox in 0..os.width {
                            for o in 0..c.out_ch {
                                let mut s = self.b[i][o];
                                for_taps(c, shape, oy, ox, |ic, ky, kx, idx| {
                                    s += self.w[i][widx(c, o, ic, ky, kx)] * a[idx];
                                });
                                out[os.index(oy, ox, o)] = s;
                            }
                        }
                    }
                    out
                }
                Layer::Dense(d) => (0..d.rows)
                    .map(|r| self.b[i][r] + (0..d.cols).map(|c| self.w[i][r * d.cols + c] * a[c]).sum::<f64>())
                    .collect(),
                Layer::Relu => a.iter().map(|&v| v.max(0.0)).collect(),
                Layer::Flatten => a.clone(),
            };
            acts.push(out);
        }
        acts
    }

    /// Loss and its gradient with respect to the parameters (accumulated into
    /// `gw`, `gb`) and to the input (returned).
    pub(crate) fn backward(
        &self,
        x: &[f64],
        label: usize,
        gw: &mut [Vec<f64>],
        gb: &mut [Vec<f64>],
    ) -> (f64, Vec<f64>) {
        let acts = self.forward(x);
        let logits = acts.last().unwrap();
        let (loss, mut g) = softmax_xent(logits, label);
        for (i, (layer, &shape)) in self.net.layers().iter().zip(self.net.shapes()).enumerate().rev() {
            let a = &acts[i];
            g = match layer {
                Layer::Conv2d(c) => {
                    let os = c.output_shape(shape).expect("validated");
                    let mut gin = vec![0.0; a.len()];
                    for oy in 0..os.height {
                        for ox in 0..os.width {
                            for o in 0..c.out_ch {
                                let go = g[os.index(oy, ox, o)];
                                gb[i][o] += go;
                                for_taps(c, shape, oy, ox, |ic, ky, kx, idx| {
                                    let k = widx(c, o, ic, ky, kx);
                                    gw[i][k] += go * a[idx];
                                    gin[idx] += self.w[i][k] * go;
                                });
                            }
                        }
                    }
                    gin
                }
                Layer::Dense(d) => {
                    let mut gin = vec![0.0; d.cols];
                    for r in 0..d.rows {
                        gb[i][r] += g[r];
                        for c in 0..d.cols {
                            gw[i][r * d.cols + c] += g[r] * a[c];
                            gin[c] += self.w[i][r * d.cols + c] * g[r];
                        }
                    }
                    gin
                }
                Layer::Relu => g.iter().zip(a).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect(),
                Layer::Flatten => g,
            };
        }
        (loss, g)
    }

    fn zero_grads(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (self.w.iter().map(|v| vec![0.0; v.len()]).collect(), self.b.iter().map(|v| vec![0.0; v.len()]).collect())
    }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn widx(c: &crate::network::Conv2d, o: usize, ic: usize, ky: usize, kx: usize) -> usize {
    ((o * c.in_ch + ic) * c.kh + ky) * c.kw + kx
}

fn for_taps(c: &crate::network::Conv2d, shape: Shape, oy: usize, ox: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    for ky in 0..c.kh {
        for kx in 0..c.kw {
            let (Some(y), Some(x)) = ((oy + ky).checked_sub(c.padding), (ox + kx).checked_sub(c.padding)) else {
                continue;
            };
            if y >= shape.height || x >= shape.width {
                continue;
            }
            for ic in 0..c.in_ch {
                f(ic, ky, kx, shape.index(y, x, ic));
            }
        }
    }
}

/// Cross-entropy of softmax(logits) against `label`, and its gradient.
fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let loss = z.ln() - (logits[label] - m);
    let mut g: Vec<f64> = e.iter().map(|v| v / z).collect();
    g[label] -= 1.0;
    (loss, g)
}

fn pgd_example(p: &Params, x: &[f64], label: usize, cfg: &PgdConfig) -> Vec<f64> {
    let (mut gw, mut gb) = p.zero_grads();
    let mut adv = x.to_vec();
    for _ in 0..cfg.steps {
        let (_, gx) = p.backward(&adv, label, &mut gw, &mut gb);
        for ((a, &x0), g) in adv.iter_mut().zip(x).zip(gx) {
            let step = if g > 0.0 {
                cfg.step_size
            } else if g < 0.0 {
                -cfg.step_size
            } else {
                0.0
            };
            *a = (*a + step).clamp(x0 - cfg.eps, x0 + cfg.eps).clamp(0.0, 1.0);
        }
    }
    adv
}

/// Train a network of architecture `arch` on the training split of `data`.
pub fn train(arch: &ArchSpec, data: &ToyDataset, cfg: &TrainConfig) -> Result<Network> {
    let mut rng = seeded(cfg.seed);
    let init = arch.init(&mut rng)?;
    if init.num_classes() != data.classes {
        return Err(Error::InvalidNetwork(format!(
            "architecture has {} outputs but the dataset has {} classes",
            init.num_classes(),
            data.classes
        )));
    }
    if let Some(img) = data.images.first() {
        init.check_input_shape(img.shape())?;
    }
    if cfg.epochs == 0 {
        return Ok(init);
    }
    if cfg.batch_size == 0 || !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::OutOfRange("batch_size must be positive and lr positive and finite".into()));
    }
    let mut p = Params::of(&init);
    let mut order: Vec<usize> = data.train_indices().collect();
    for epoch in 0..cfg.epochs {
        shuffle(&mut rng, &mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (mut gw, mut gb) = p.zero_grads();
            for &i in batch {
                let x: Vec<f64> = data.images[i].data().iter().map(|&v| v as f64).collect();
                let x = if cfg.pgd.enabled { pgd_example(&p, &x, data.labels[i], &cfg.pgd) } else { x };
                epoch_loss += p.backward(&x, data.labels[i], &mut gw, &mut gb).0;
            }
            let scale = cfg.lr / batch.len() as f64;
            for (w, g) in p.w.iter_mut().chain(p.b.iter_mut()).zip(gw.iter().chain(gb.iter())) {
                for (w, g) in w.iter_mut().zip(g) {
                    *w -= scale * g;
                }
            }
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged(format!("loss became {epoch_loss} in epoch {epoch}")));
        }
    }
    p.to_network().map_err(|e| match e {
        Error::NonFinite(m) => Error::Diverged(m),
        other => other,
    })
}

/// Fraction of the given images whose double-precision argmax equals the label.
pub fn accuracy(net: &Network, data: &ToyDataset, indices: impl Iterator<Item = usize>) -> f64 {
    let p = Params::of(net);
    let (mut hit, mut n) = (0usize, 0usize);
    for i in indices {
        let x: Vec<f64> = data.images[i].data().iter().map(|&v| v as f64).collect();
        let y = p.forward(&x).pop().unwrap();
        let best = (0..y.len()).fold(0, |b, j| if y[j] > y[b] { j } else { b });
        hit += (best == data.labels[i]) as usize;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelgen::dataset::gen_dataset;

    fn small_arch() -> ArchSpec {
        ArchSpec {
            input_shape: [4, 4, 1],
            layers: vec![
                LayerSpec::Conv2d { out_ch: 2, in_ch: 1, kh: 3, kw: 3, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { rows: 3, cols: 32 },
            ],
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded(11);
        let net = small_arch().init(&mut rng).unwrap();
        let mut p = Params::of(&net);
        for b in p.b.iter_mut().flatten() {
            *b = 0.1 * (2.0 * unit_f32(&mut rng) as f64 - 1.0);
        }
        let x: Vec<f64> = (0..16).map(|_| unit_f32(&mut rng) as f64).collect();
        let (mut gw, mut gb) = p.zero_grads();
        let (_, gx) = p.backward(&x, 1, &mut gw, &mut gb);
        let loss = |p: &Params, x: &[f64]| softmax_xent(p.forward(x).last().unwrap(), 1).0;
        let h = 1e-6;
        let close = |a: f64, n: f64| (a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1e-3);
        for layer in [0, 3] {
            for k in 0..p.w[layer].len() {
                let mut q = p.clone();
                q.w[layer][k] += h;
                let up = loss(&q, &x);
                q.w[layer][k] -= 2.0 * h;
                let num = (up - loss(&q, &x)) / (2.0 * h);
                assert!(close(gw[layer][k], num), "w[{layer}][{k}]: {} vs {num}", gw[layer][k]);
            }
            for k in 0..p.b[layer].len() {
                let mut q = p.clone();
                q.b[layer][k] += h;
                let up = loss(&q, &x);
                q.b[layer][k] -= 2.0 * h;
                let num = (up - loss(&q, &x)) / (2.0 * h);
                assert!(close(gb[layer][k], num), "b[{layer}][{k}]");
            }
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let up = loss(&p, &xp);
            xp[k] -= 2.0 * h;
            let num = (up - loss(&p, &xp)) / (2.0 * h);
            assert!(close(gx[k], num), "x[{k}]");
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let data = gen_dataset(1, 10, 3).unwrap();
        let cfg = TrainConfig { seed: 5, epochs: 0, lr: 0.1, batch_size: 4, pgd: PgdConfig::default() };
        let arch = ArchSpec::demo(3);
        let net = train(&arch, &data, &cfg).unwrap();
        assert_eq!(net, arch.init(&mut seeded(5)).unwrap());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let data = gen_dataset(1, 40, 3).unwrap();
        let cfg = TrainConfig { seed: 5, epochs: 3, lr: 1e300, batch_size: 4, pgd: PgdConfig::default() };
        assert!(matches!(train(&ArchSpec::demo(3), &data, &cfg), Err(Error::Diverged(_))));
    }

    #[test]
    fn mismatched_classes_are_rejected() {
        let data = gen_dataset(1, 10, 2).unwrap();
        let cfg = TrainConfig { seed: 5, epochs: 1, lr: 0.1, batch_size: 4, pgd: PgdConfig::default() };
        assert!(train(&ArchSpec::demo(3), &data, &cfg).is_err());
    }
}
