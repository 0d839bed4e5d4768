//! Small dense tanh network with hand-written backprop.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Fully connected network: tanh on hidden layers, linear output.
///
/// Parameters live in one flat vector, layer by layer, each layer as its
/// row-major `out x in` weight matrix followed by the `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
}

/// Activations saved by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache<T> {
    /// `acts[0]` is the input, `acts[l]` the output of layer `l - 1`.
    acts: Vec<Vec<T>>,
}

fn count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Orthogonal `rows x cols` matrix scaled by `gain` (QR of a Gaussian
/// matrix with the sign of `diag(R)` folded in).
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (r, c) = if rows < cols { (cols, rows) } else { (rows, cols) };
    let a = DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let rm = qr.r();
    for j in 0..c {
        if rm[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows < cols { q.transpose() } else { q };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * q[(i, j)]);
        }
    }
    out
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "bad layer sizes {sizes:?}");
        Self {
            sizes: sizes.to_vec(),
            params: vec![T::zero(); count(sizes)],
        }
    }

    /// Orthogonal weights (hidden layers scaled by `hidden_gain`, output
    /// layer by `output_gain`), zero biases.
    pub fn orthogonal<R: Rng + ?Sized>(sizes: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut off = 0;
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == layers { output_gain } else { hidden_gain };
            for (p, w) in net.params[off..off + n_in * n_out].iter_mut().zip(orthogonal(n_out, n_in, gain, rng)) {
                *p = T::lit(w);
            }
            off += n_in * n_out + n_out;
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut cur = x.to_vec();
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            cur = self.layer(l, off, &cur, l + 1 < layers);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        cur
    }

    pub fn forward_cached(&self, x: &[T], cache: &mut MlpCache<T>) -> Vec<T> {
        cache.acts.clear();
        cache.acts.push(x.to_vec());
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let next = self.layer(l, off, &cache.acts[l], l + 1 < layers);
            cache.acts.push(next);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        cache.acts[layers].clone()
    }

    fn layer(&self, l: usize, off: usize, x: &[T], hidden: bool) -> Vec<T> {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        debug_assert_eq!(x.len(), n_in);
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = row.iter().zip(x).fold(b[o], |acc, (&wi, &xi)| acc + wi * xi);
                if hidden {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect()
    }

    /// Adds `d(loss)/d(params)` to `grad` given `d(loss)/d(output)`.
    pub fn backward(&self, cache: &MlpCache<T>, d_out: &[T], grad: &mut [T]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            if l + 1 < layers {
                // through tanh: d/dz = 1 - a^2
                for (d, &a) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= T::one() - a * a;
                }
            }
            let x = &cache.acts[l];
            let w = &self.params[off..off + n_in * n_out];
            let mut d_in = vec![T::zero(); n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == T::zero() {
                    continue;
                }
                let g = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for i in 0..n_in {
                    g[i] += d * x[i];
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    d_in[i] += d * row[i];
                }
                grad[off + n_in * n_out + o] += d;
            }
            delta = d_in;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_columns_and_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tall = orthogonal(64, 7, 1.0, &mut rng);
        for a in 0..7 {
            for b in 0..7 {
                let dot: f64 = (0..64).map(|i| tall[i * 7 + a] * tall[i * 7 + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
        let wide = orthogonal(2, 64, 2f64.sqrt(), &mut rng);
        let dot: f64 = (0..64).map(|j| wide[j] * wide[64 + j]).sum();
        let norm: f64 = (0..64).map(|j| wide[j] * wide[j]).sum();
        assert!(dot.abs() < 1e-12);
        assert!((norm - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::<f64>::zeros(&[5, 4, 3]);
        assert_eq!(net.num_params(), 5 * 4 + 4 + 4 * 3 + 3);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 0.1]), vec![0.0; 3]);
    }

    #[test]
    fn cached_forward_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::<f64>::orthogonal(&[4, 8, 8, 2], 2f64.sqrt(), 1.0, &mut rng);
        let x = [0.3, -0.1, 0.9, 0.5];
        let mut cache = MlpCache::default();
        assert_eq!(net.forward(&x), net.forward_cached(&x, &mut cache));
    }
}
