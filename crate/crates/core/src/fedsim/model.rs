//! Small classifiers on a flat parameter vector with hand-written backprop.

use rand::Rng;

use crate::datasets::Dataset;
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSpec {
    /// Multinomial logistic regression.
    Logistic,
    /// One tanh hidden layer of the given width.
    Mlp { hidden: usize },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Logistic
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Model {
    pub spec: ModelSpec,
    pub input_dim: usize,
    pub num_classes: usize,
}

/// Numerically stable log-softmax cross-entropy; writes softmax into `probs`.
fn softmax_xent(logits: &[f64], label: usize, probs: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (p, &l) in probs.iter_mut().zip(logits) {
        *p = (l - max).exp();
        z += *p;
    }
    for p in probs.iter_mut() {
        *p /= z;
    }
    z.ln() + max - logits[label]
}

impl Model {
    pub fn new(spec: ModelSpec, input_dim: usize, num_classes: usize) -> Self {
        Self {
            spec,
            input_dim,
            num_classes,
        }
    }

    pub fn num_params(&self) -> usize {
        let (d, c) = (self.input_dim, self.num_classes);
        match self.spec {
            ModelSpec::Logistic => c * d + c,
            ModelSpec::Mlp { hidden: h } => h * d + h + c * h + c,
        }
    }

    /// Weights uniform in ±1/√fan-in, biases zero.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from(seed, &[0x1A17]);
        let mut w = vec![0.0; self.num_params()];
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in slice {
                *v = rng.random_range(-s..s);
            }
        };
        let (d, c) = (self.input_dim, self.num_classes);
        match self.spec {
            ModelSpec::Logistic => fill(&mut w[..c * d], d),
            ModelSpec::Mlp { hidden: h } => {
                fill(&mut w[..h * d], d);
                let off = h * d + h;
                fill(&mut w[off..off + c * h], h);
            }
        }
        w
    }

    pub fn logits(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let (d, c) = (self.input_dim, self.num_classes);
        match self.spec {
            ModelSpec::Logistic => {
                let (wm, b) = w.split_at(c * d);
                for k in 0..c {
                    out[k] = b[k] + dot(&wm[k * d..(k + 1) * d], x);
                }
            }
            ModelSpec::Mlp { hidden: h } => {
                let mut hid = vec![0.0; h];
                self.hidden(w, x, &mut hid);
                let off = h * d + h;
                let (w2, b2) = w[off..].split_at(c * h);
                for k in 0..c {
                    out[k] = b2[k] + dot(&w2[k * h..(k + 1) * h], &hid);
                }
            }
        }
    }

    fn hidden(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.input_dim;
        let h = out.len();
        let (w1, rest) = w.split_at(h * d);
        for j in 0..h {
            out[j] = (rest[j] + dot(&w1[j * d..(j + 1) * d], x)).tanh();
        }
    }

    /// Mean cross-entropy over `indices` and its gradient. Samples are
    /// accumulated in index order.
    pub fn loss_grad(&self, w: &[f64], data: &Dataset, indices: &[usize]) -> (f64, Vec<f64>) {
        let (d, c) = (self.input_dim, self.num_classes);
        let mut grad = vec![0.0; w.len()];
        let mut loss = 0.0;
        let mut logits = vec![0.0; c];
        let mut probs = vec![0.0; c];
        match self.spec {
            ModelSpec::Logistic => {
                for &i in indices {
                    let x = data.row(i);
                    let y = data.label(i);
                    self.logits(w, x, &mut logits);
                    loss += softmax_xent(&logits, y, &mut probs);
                    probs[y] -= 1.0;
                    let (gw, gb) = grad.split_at_mut(c * d);
                    for k in 0..c {
                        let delta = probs[k];
                        gb[k] += delta;
                        for (g, &xv) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                            *g += delta * xv;
                        }
                    }
                }
            }
            ModelSpec::Mlp { hidden: h } => {
                let mut hid = vec![0.0; h];
                let mut back = vec![0.0; h];
                let off = h * d + h;
                for &i in indices {
                    let x = data.row(i);
                    let y = data.label(i);
                    self.hidden(w, x, &mut hid);
                    let (w2, b2) = w[off..].split_at(c * h);
                    for k in 0..c {
                        logits[k] = b2[k] + dot(&w2[k * h..(k + 1) * h], &hid);
                    }
                    loss += softmax_xent(&logits, y, &mut probs);
                    probs[y] -= 1.0;
                    back.iter_mut().for_each(|v| *v = 0.0);
                    {
                        let (gw2, gb2) = grad[off..].split_at_mut(c * h);
                        for k in 0..c {
                            let delta = probs[k];
                            gb2[k] += delta;
                            for j in 0..h {
                                gw2[k * h + j] += delta * hid[j];
                                back[j] += delta * w2[k * h + j];
                            }
                        }
                    }
                    let (gw1, gb1) = grad[..off].split_at_mut(h * d);
                    for j in 0..h {
                        let dz = back[j] * (1.0 - hid[j] * hid[j]);
                        gb1[j] += dz;
                        for (g, &xv) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                            *g += dz * xv;
                        }
                    }
                }
            }
        }
        let n = indices.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    /// Mean loss and top-1 accuracy (ties resolve to the lowest class).
    pub fn loss_accuracy(&self, w: &[f64], data: &Dataset, indices: &[usize]) -> (f64, f64) {
        let c = self.num_classes;
        let mut logits = vec![0.0; c];
        let mut probs = vec![0.0; c];
        let mut loss = 0.0;
        let mut correct = 0usize;
        for &i in indices {
            self.logits(w, data.row(i), &mut logits);
            let y = data.label(i);
            loss += softmax_xent(&logits, y, &mut probs);
            let pred = (0..c).fold(0, |best, k| if logits[k] > logits[best] { k } else { best });
            correct += usize::from(pred == y);
        }
        let n = indices.len().max(1) as f64;
        (loss / n, correct as f64 / n)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
