//! Dense tanh networks over a flat parameter slice.
//!
//! Layer `l` maps `sizes[l]` inputs to `sizes[l+1]` outputs and stores its
//! weight matrix row-major (`out x in`) followed by its bias. Every layer but
//! the last applies `tanh`; the last layer is affine.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

/// Forward-pass record needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input fed to each layer (after dropout for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// `tanh` outputs of hidden layers, before dropout.
    hidden: Vec<Vec<f64>>,
    /// Per hidden layer, the inverted-dropout multiplier of each unit.
    masks: Vec<Option<Vec<f64>>>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut off = 0;
        for w in sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        offsets.push(off);
        Self { sizes, offsets }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Offsets of the weight matrix and bias vector of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let w = self.offsets[l];
        (w, w + self.sizes[l] * self.sizes[l + 1])
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.param_count()];
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let r = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let (w, b) = self.layer_offsets(l);
            for v in &mut p[w..b] {
                *v = rng.random_range(-r..=r);
            }
        }
        p
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Trace {
        self.forward_impl::<rand_chacha::ChaCha8Rng>(params, x, None)
    }

    /// Forward pass with inverted dropout of rate `p` on hidden activations.
    pub fn forward_dropout<R: Rng + ?Sized>(&self, params: &[f64], x: &[f64], p: f64, rng: &mut R) -> Trace {
        if p > 0.0 {
            self.forward_impl(params, x, Some((p, rng)))
        } else {
            self.forward(params, x)
        }
    }

    fn forward_impl<R: Rng + ?Sized>(&self, params: &[f64], x: &[f64], mut dropout: Option<(f64, &mut R)>) -> Trace {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(x.len(), self.sizes[0]);
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut hidden = Vec::with_capacity(layers - 1);
        let mut masks = Vec::with_capacity(layers - 1);
        let mut a = x.to_vec();
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let mut z = params[b..b + n_out].to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &params[w + o * n_in..w + (o + 1) * n_in];
                *zo += row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            inputs.push(a);
            if l + 1 == layers {
                return Trace {
                    inputs,
                    hidden,
                    masks,
                    output: z,
                };
            }
            let h: Vec<f64> = z.iter().map(|v| libm::tanh(*v)).collect();
            let mask = dropout.as_mut().map(|(p, rng)| {
                let keep = 1.0 / (1.0 - *p);
                (0..n_out)
                    .map(|_| if rng.random::<f64>() < *p { 0.0 } else { keep })
                    .collect::<Vec<f64>>()
            });
            a = match &mask {
                Some(m) => h.iter().zip(m).map(|(v, k)| v * k).collect(),
                None => h.clone(),
            };
            hidden.push(h);
            masks.push(mask);
        }
        unreachable!("loop returns at the output layer")
    }

    /// Accumulates `d(output)/d(params)^T grad_out` into `grad`.
    pub fn backward(&self, params: &[f64], trace: &Trace, grad_out: &[f64], grad: &mut [f64]) {
        let mut delta = grad_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let input = &trace.inputs[l];
            for o in 0..n_out {
                let d = delta[o];
                grad[b + o] += d;
                if d != 0.0 {
                    for (g, ai) in grad[w + o * n_in..w + (o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * ai;
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Back through the hidden layer feeding layer l.
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&params[w + o * n_in..w + (o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            let h = &trace.hidden[l - 1];
            if let Some(m) = &trace.masks[l - 1] {
                for (p, k) in prev.iter_mut().zip(m) {
                    *p *= k;
                }
            }
            for (p, hv) in prev.iter_mut().zip(h) {
                *p *= 1.0 - hv * hv;
            }
            delta = prev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn param_count_and_offsets() {
        let m = Mlp::new(vec![4, 8, 2]);
        assert_eq!(m.param_count(), 4 * 8 + 8 + 8 * 2 + 2);
        assert_eq!(m.layer_offsets(0), (0, 32));
        assert_eq!(m.layer_offsets(1), (40, 56));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = Mlp::new(vec![3, 5, 4, 2]);
        let mut rng = rng_for(1, "mlp", &[]);
        let p = m.init(&mut rng);
        let x = [0.3, -1.2, 0.8];
        let c = [0.7, -0.4];
        let f = |p: &[f64]| {
            let t = m.forward(p, &x);
            t.output.iter().zip(&c).map(|(o, c)| o * c).sum::<f64>()
        };
        let mut g = vec![0.0; p.len()];
        m.backward(&p, &m.forward(&p, &x), &c, &mut g);
        let eps = 1e-6;
        for i in 0..p.len() {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[i] += eps;
            lo[i] -= eps;
            let fd = (f(&hi) - f(&lo)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-8, "param {i}: {fd} vs {}", g[i]);
        }
    }
}
