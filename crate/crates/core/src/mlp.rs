//! Fully connected network with ReLU hidden layers and hand-written
//! reverse-mode gradients. Parameters live in one flat vector so the
//! optimizer can treat them as a single group.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths, input first and output last.
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_cached`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// Input of every layer; entry 0 is the network input.
    inputs: Vec<Vec<f64>>,
}

impl Mlp {
    /// `depth` hidden layers of `width` units between `input` and `output`.
    ///
    /// Hidden layers use He-uniform weights. The output layer draws from
    /// `U(-s, s) / sqrt(fan_in)` with `s = last_layer_scale`, so a small scale
    /// keeps the initial output close to zero. Biases start at zero.
    pub fn new(input: usize, width: usize, depth: usize, output: usize, last_layer_scale: f64, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(width, depth));
        sizes.push(output);
        let layers = sizes.len() - 1;
        let mut params = Vec::with_capacity(param_count(&sizes));
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = if l + 1 == layers {
                last_layer_scale / (fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-bound..=bound));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp { sizes, params }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weights of the output layer.
    pub fn last_layer_weights(&self) -> &[f64] {
        let l = self.sizes.len() - 2;
        let off = layer_offset(&self.sizes, l);
        &self.params[off..off + self.sizes[l] * self.sizes[l + 1]]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        assert_eq!(x.len(), self.sizes[0], "mlp input width");
        let layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut next: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            if l + 1 < layers {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(cur);
            cur = next;
            off += n_in * n_out + n_out;
        }
        (cur, MlpCache { inputs })
    }

    /// Adds `∂L/∂θ` into `grads` given `∂L/∂output`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = layer_offset(&self.sizes, l);
            let input = &cache.inputs[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grads[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in gw.iter_mut().zip(input) {
                    *g += d * x;
                }
                grads[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, a) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * a;
                }
            }
            // input of layer l is relu(pre); its derivative is 1 where positive
            for (p, x) in prev.iter_mut().zip(input) {
                if *x <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn layer_offset(sizes: &[usize], layer: usize) -> usize {
    sizes[..=layer].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_count_matches_architecture() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::new(8, 256, 4, 3, 1e-2, &mut rng);
        let expected = 8 * 256 + 256 + 3 * (256 * 256 + 256) + 256 * 3 + 3;
        assert_eq!(m.param_count(), expected);
        assert_eq!(m.sizes(), &[8, 256, 256, 256, 256, 3]);
        let bound = 1e-2 / 16.0;
        assert!(m.last_layer_weights().iter().all(|w| w.abs() <= bound));
        assert_eq!(m.last_layer_weights().len(), 256 * 3);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = Mlp::new(4, 8, 2, 3, 1.0, &mut rng);
        let x = [0.3, -0.7, 0.5, 0.9];
        let w_out = [0.4, -1.3, 0.8];
        let f = |m: &Mlp| m.forward(&x).iter().zip(&w_out).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = m.forward_cached(&x);
        let mut grads = vec![0.0; m.param_count()];
        m.backward(&cache, &w_out, &mut grads);
        let h = 1e-5;
        for (i, &g) in grads.iter().enumerate() {
            let orig = m.params()[i];
            m.params_mut()[i] = orig + h;
            let fp = f(&m);
            m.params_mut()[i] = orig - h;
            let fm = f(&m);
            m.params_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let err = (g - fd).abs() / fd.abs().max(1e-6);
            assert!(err < 1e-4 || (g - fd).abs() < 1e-9, "param {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Mlp::new(3, 5, 2, 2, 1.0, &mut rng);
        let (_, cache) = m.forward_cached(&[0.1, 0.2, 0.3]);
        let mut grads = vec![0.0; m.param_count()];
        m.backward(&cache, &[0.0, 0.0], &mut grads);
        assert!(grads.iter().all(|g| *g == 0.0));
    }
}
