use rand::Rng;

use crate::error::{Error, Result};

/// Fully connected ReLU network with a linear output layer.
///
/// Parameters live in one flat vector. Layer `l` maps `sizes[l]` inputs to
/// `sizes[l + 1]` outputs and stores its weights row-major (one row per
/// output unit) followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations kept from a forward pass for backpropagation.
#[derive(Debug, Default, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l]` the post-ReLU output
    /// of hidden layer `l`; the last entry holds the raw Q-values.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map_or(&[], |v| v.as_slice())
    }
}

pub(crate) fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl QNetwork {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::domain(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Fan-in scaled uniform initialization, `U(−1/√fan_in, 1/√fan_in)` for
    /// weights and biases alike.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = fan_in * fan_out + fan_out;
            for p in &mut net.params[offset..offset + n] {
                *p = rng.random_range(-bound..bound);
            }
            offset += n;
        }
        Ok(net)
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let expected = Self::zeros(&sizes)?.params.len();
        if params.len() != expected {
            return Err(Error::Shape {
                expected: vec![expected],
                found: vec![params.len()],
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("network parameters must be finite"));
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Offset and (inputs, outputs) of layer `l` inside the flat vector.
    pub fn layer_range(&self, l: usize) -> (usize, usize, usize) {
        let offset = param_count(&self.sizes[..=l]);
        (offset, self.sizes[l], self.sizes[l + 1])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        Ok(cache.activations.pop().unwrap_or_default())
    }

    pub fn forward_cached(&self, input: &[f64], cache: &mut ForwardCache) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: vec![self.input_dim()],
                found: vec![input.len()],
            });
        }
        let layers = self.num_layers();
        cache.activations.resize_with(layers + 1, Vec::new);
        cache.activations[0].clear();
        cache.activations[0].extend_from_slice(input);
        for l in 0..layers {
            let (offset, n_in, n_out) = self.layer_range(l);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let (done, rest) = cache.activations.split_at_mut(l + 1);
            let x = &done[l];
            let out = &mut rest[0];
            out.clear();
            out.extend(weights.chunks_exact(n_in).zip(bias).map(|(row, b)| {
                let z = dot(row, x) + b;
                if l + 1 < layers {
                    z.max(0.0)
                } else {
                    z
                }
            }));
        }
        Ok(())
    }

    /// Adds `∂(Σ_k out_grad[k]·Q_k)/∂θ` into `grad` using a cache from
    /// [`Self::forward_cached`]. ReLU derivative is taken as 0 at 0.
    pub fn backward(&self, cache: &ForwardCache, out_grad: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = out_grad.to_vec();
        let mut next_delta = Vec::new();
        for l in (0..self.num_layers()).rev() {
            let (offset, n_in, n_out) = self.layer_range(l);
            let x = &cache.activations[l];
            let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[offset..offset + n_in * n_out];
            next_delta.clear();
            next_delta.resize(n_in, 0.0);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (nd, w) in next_delta
                    .iter_mut()
                    .zip(&weights[o * n_in..(o + 1) * n_in])
                {
                    *nd += d * w;
                }
            }
            // x is the post-ReLU activation of layer l - 1
            for (nd, xi) in next_delta.iter_mut().zip(x) {
                if *xi <= 0.0 {
                    *nd = 0.0;
                }
            }
            std::mem::swap(&mut delta, &mut next_delta);
        }
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
