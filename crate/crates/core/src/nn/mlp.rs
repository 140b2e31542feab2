use rand::Rng;
use smallvec::SmallVec;

use super::loss::{sigmoid, softplus};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::rng::uniform;

/// Fully connected network: softplus between layers, identity on the output.
///
/// All parameters live in one flat vector. Layer `l` maps `dims[l]` inputs to
/// `dims[l + 1]` outputs and occupies a row-major `dims[l+1] x dims[l]` weight
/// block followed by `dims[l+1]` biases. The output is split in half into a
/// mean and a log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights<T> {
    dims: Vec<usize>,
    params: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a, T> {
    pub rows: usize,
    pub cols: usize,
    pub weights: &'a [T],
    pub biases: &'a [T],
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    /// Pre-activation of every layer.
    pre: Vec<Vec<T>>,
    /// `post[0]` is the input, `post[l + 1]` the output of layer `l`.
    post: Vec<Vec<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// `(mu, log_var)` halves of the output.
    pub fn split_output(&self) -> (&[T], &[T]) {
        let out = self.output();
        out.split_at(out.len() / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// Same layout as [`MlpWeights::params`].
    pub params: Vec<T>,
    pub input: Vec<T>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl<T: Real> MlpWeights<T> {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("invalid layer dimensions {dims:?}")));
        }
        if dims[dims.len() - 1] % 2 != 0 {
            return Err(Error::Config(format!(
                "output dimension {} must be even (mean and log-variance)",
                dims[dims.len() - 1]
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![T::zero(); param_count(dims)],
        })
    }

    /// Network for `input -> [width; depth] -> 2 * out_dim`.
    pub fn shape(input: usize, depth: usize, width: usize, out_dim: usize) -> Vec<usize> {
        std::iter::once(input)
            .chain(std::iter::repeat_n(width, depth))
            .chain(std::iter::once(2 * out_dim))
            .collect()
    }

    /// Uniform Glorot initialization; zero biases except the log-variance half
    /// of the output layer, which is set to `log_var_bias`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], log_var_bias: T, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let mut off = 0;
        for l in 0..net.n_layers() {
            let (rows, cols) = (dims[l + 1], dims[l]);
            let limit = (T::lit(6.0) / T::from_usize(rows + cols).unwrap()).sqrt();
            for w in &mut net.params[off..off + rows * cols] {
                *w = limit * (T::lit(2.0) * uniform::<T, _>(rng) - T::one());
            }
            off += rows * cols + rows;
        }
        let last = net.n_layers() - 1;
        let (b_off, rows) = (net.bias_offset(last), net.dims[last + 1]);
        for b in &mut net.params[b_off + rows / 2..b_off + rows] {
            *b = log_var_bias;
        }
        Ok(net)
    }

    /// Builds a network from `(weights row-major, biases)` per layer.
    pub fn from_layers(layers: Vec<(usize, usize, Vec<T>, Vec<T>)>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::Config("network needs at least one layer".into()));
        };
        let mut dims = vec![first.1];
        let mut params = Vec::new();
        for (rows, cols, w, b) in layers {
            if cols != *dims.last().unwrap() {
                return Err(Error::Shape { what: "layer input", expected: *dims.last().unwrap(), got: cols });
            }
            if w.len() != rows * cols {
                return Err(Error::Shape { what: "weight matrix", expected: rows * cols, got: w.len() });
            }
            if b.len() != rows {
                return Err(Error::Shape { what: "bias vector", expected: rows, got: b.len() });
            }
            dims.push(rows);
            params.extend(w);
            params.extend(b);
        }
        let mut net = Self::zeros(&dims)?;
        net.params = params;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.dims.len() - 2
    }

    /// Widest hidden layer, 0 for a purely affine network.
    pub fn width(&self) -> usize {
        self.dims[1..self.dims.len() - 1].iter().copied().max().unwrap_or(0)
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn weight_offset(&self, l: usize) -> usize {
        param_count(&self.dims[..=l])
    }

    fn bias_offset(&self, l: usize) -> usize {
        self.weight_offset(l) + self.dims[l + 1] * self.dims[l]
    }

    pub fn layer(&self, l: usize) -> LayerView<'_, T> {
        let (rows, cols) = (self.dims[l + 1], self.dims[l]);
        let w = self.weight_offset(l);
        LayerView {
            rows,
            cols,
            weights: &self.params[w..w + rows * cols],
            biases: &self.params[w + rows * cols..w + rows * cols + rows],
        }
    }

    pub fn cast<U: Real>(&self) -> MlpWeights<U> {
        MlpWeights {
            dims: self.dims.clone(),
            params: self.params.iter().map(|&p| U::lit(p.as_f64())).collect(),
        }
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape { what: "network input", expected: self.input_dim(), got: input.len() });
        }
        Ok(())
    }

    /// `(mu, log_var)` for one input vector.
    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let mut out = vec![T::zero(); self.output_dim()];
        self.eval_into(input, &mut out)?;
        let lv = out.split_off(out.len() / 2);
        Ok((out, lv))
    }

    /// Allocation-free evaluation for small networks; writes the full output
    /// (mean then log-variance) into `out`.
    pub fn eval_into(&self, input: &[T], out: &mut [T]) -> Result<()> {
        self.check_input(input)?;
        if out.len() != self.output_dim() {
            return Err(Error::Shape { what: "network output", expected: self.output_dim(), got: out.len() });
        }
        let mut cur: SmallVec<[T; 32]> = SmallVec::from_slice(input);
        let mut next: SmallVec<[T; 32]> = SmallVec::new();
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let layer = self.layer(l);
            next.clear();
            for r in 0..layer.rows {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                let mut acc = layer.biases[r];
                for (w, x) in row.iter().zip(&cur) {
                    acc += *w * *x;
                }
                next.push(if l == last { acc } else { softplus(acc) });
            }
            std::mem::swap(&mut cur, &mut next);
        }
        out.copy_from_slice(&cur);
        Ok(())
    }

    pub fn forward_cached(&self, input: &[T], cache: &mut ForwardCache<T>) -> Result<()> {
        self.check_input(input)?;
        let n = self.n_layers();
        cache.pre.resize_with(n, Vec::new);
        cache.post.resize_with(n + 1, Vec::new);
        cache.post[0].clear();
        cache.post[0].extend_from_slice(input);
        for l in 0..n {
            let layer = self.layer(l);
            let (head, tail) = cache.post.split_at_mut(l + 1);
            let x = &head[l];
            let pre = &mut cache.pre[l];
            pre.clear();
            for r in 0..layer.rows {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                let mut acc = layer.biases[r];
                for (w, xi) in row.iter().zip(x) {
                    acc += *w * *xi;
                }
                pre.push(acc);
            }
            let post = &mut tail[0];
            post.clear();
            if l + 1 == n {
                post.extend_from_slice(pre);
            } else {
                post.extend(pre.iter().map(|&v| softplus(v)));
            }
        }
        Ok(())
    }

    /// Reverse pass for the activations in `cache`. Parameter gradients are
    /// accumulated into `grad_params`; the input gradient overwrites
    /// `grad_input`.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache<T>,
        upstream: &[T],
        grad_params: &mut [T],
        grad_input: &mut Vec<T>,
    ) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape { what: "upstream gradient", expected: self.output_dim(), got: upstream.len() });
        }
        if grad_params.len() != self.params.len() {
            return Err(Error::Shape { what: "parameter gradient", expected: self.params.len(), got: grad_params.len() });
        }
        let n = self.n_layers();
        let mut delta: SmallVec<[T; 32]> = SmallVec::from_slice(upstream);
        let mut prev: SmallVec<[T; 32]> = SmallVec::new();
        for l in (0..n).rev() {
            if l + 1 < n {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= sigmoid(z);
                }
            }
            let layer = self.layer(l);
            let w_off = self.weight_offset(l);
            let b_off = w_off + layer.rows * layer.cols;
            let x = &cache.post[l];
            prev.clear();
            prev.resize(layer.cols, T::zero());
            for r in 0..layer.rows {
                let d = delta[r];
                grad_params[b_off + r] += d;
                let g_row = &mut grad_params[w_off + r * layer.cols..w_off + (r + 1) * layer.cols];
                let w_row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for c in 0..layer.cols {
                    g_row[c] += d * x[c];
                    prev[c] += w_row[c] * d;
                }
            }
            std::mem::swap(&mut delta, &mut prev);
        }
        grad_input.clear();
        grad_input.extend_from_slice(&delta);
        Ok(())
    }

    /// Gradients of `upstream . output(input)` with respect to all parameters
    /// and the input.
    pub fn backward(&self, input: &[T], upstream: &[T]) -> Result<Gradients<T>> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        let mut params = vec![T::zero(); self.params.len()];
        let mut grad_input = Vec::new();
        self.backward_cached(&cache, upstream, &mut params, &mut grad_input)?;
        Ok(Gradients { params, input: grad_input })
    }
}
