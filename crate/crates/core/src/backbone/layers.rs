//! Transformer building blocks: affine maps, layer normalization, attention,
//! and MLPs, each with an explicit forward cache and a hand-rolled backward
//! pass that accumulates parameter gradients into a mirror structure.

use ndarray::{s, Array1, Array2, Axis};

/// Affine map `y = x W^T + b` with `weight` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// Weight matrix, `(out_dim, in_dim)`.
    pub weight: Array2<f64>,
    /// Bias vector, `(out_dim,)`.
    pub bias: Array1<f64>,
}

impl Linear {
    /// All-zero map of the given shape.
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weight: Array2::zeros((out_dim, in_dim)), bias: Array1::zeros(out_dim) }
    }

    /// Applies the map to a `(rows, in_dim)` batch.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients for the batch `x` and returns the
    /// gradient with respect to `x`.
    pub fn backward(&self, x: &Array2<f64>, grad_out: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &grad_out.t().dot(x);
        grad.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight)
    }
}

/// Per-row layer normalization with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    /// Per-feature gain.
    pub weight: Array1<f64>,
    /// Per-feature bias.
    pub bias: Array1<f64>,
    /// Variance floor.
    pub eps: f64,
}

/// Forward cache for [`LayerNorm`]: standardized rows and their scales.
#[derive(Debug, Clone)]
pub struct NormCache {
    /// `(x - mean) * inv_std`, per row.
    pub x_hat: Array2<f64>,
    /// `1 / sqrt(var + eps)`, per row.
    pub inv_std: Array1<f64>,
}

impl LayerNorm {
    /// Identity normalization (unit gain, zero bias).
    pub fn identity(dim: usize) -> Self {
        Self { weight: Array1::ones(dim), bias: Array1::zeros(dim), eps: 1e-6 }
    }

    /// All-zero parameters; used for gradient accumulators.
    pub fn zeros(dim: usize) -> Self {
        Self { weight: Array1::zeros(dim), bias: Array1::zeros(dim), eps: 1e-6 }
    }

    /// Normalizes every row to zero mean and unit variance, then rescales.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, NormCache) {
        let (rows, dim) = x.dim();
        let mut x_hat = Array2::zeros((rows, dim));
        let mut inv_std = Array1::zeros(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.mean().expect("non-empty row");
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[r] = inv;
            for d in 0..dim {
                x_hat[[r, d]] = (row[d] - mean) * inv;
            }
        }
        let y = &x_hat * &self.weight + &self.bias;
        (y, NormCache { x_hat, inv_std })
    }

    /// Accumulates gain/bias gradients and returns the input gradient.
    pub fn backward(
        &self,
        cache: &NormCache,
        grad_out: &Array2<f64>,
        grad: &mut LayerNorm,
    ) -> Array2<f64> {
        let (rows, dim) = grad_out.dim();
        grad.weight += &(grad_out * &cache.x_hat).sum_axis(Axis(0));
        grad.bias += &grad_out.sum_axis(Axis(0));
        let d_x_hat = grad_out * &self.weight;
        let mut grad_in = Array2::zeros((rows, dim));
        for r in 0..rows {
            let dxh = d_x_hat.row(r);
            let xh = cache.x_hat.row(r);
            let sum_dxh: f64 = dxh.sum();
            let sum_dxh_xh: f64 = dxh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
            let scale = cache.inv_std[r] / dim as f64;
            for d in 0..dim {
                grad_in[[r, d]] = scale * (dim as f64 * dxh[d] - sum_dxh - xh[d] * sum_dxh_xh);
            }
        }
        grad_in
    }
}

/// Smooth GELU activation, tanh form.
pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

/// Exact derivative of [`gelu`].
pub fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + 0.044715 * x.powi(3));
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Multi-head self-attention over one token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    /// Fused query/key/value projection, `(3*dim, dim)`.
    pub qkv: Linear,
    /// Output projection, `(dim, dim)`.
    pub proj: Linear,
    /// Head count; must divide `dim`.
    pub heads: usize,
}

/// Forward cache for [`Attention`].
#[derive(Debug, Clone)]
pub struct AttnCache {
    /// Input sequence, `(seq, dim)`.
    pub x: Array2<f64>,
    /// Per-head queries, keys, values, `(seq, head_dim)` each.
    pub q: Vec<Array2<f64>>,
    /// See `q`.
    pub k: Vec<Array2<f64>>,
    /// See `q`.
    pub v: Vec<Array2<f64>>,
    /// Per-head softmax attention rows, `(seq, seq)`.
    pub probs: Vec<Array2<f64>>,
    /// Concatenated head outputs fed to `proj`, `(seq, dim)`.
    pub ctx: Array2<f64>,
}

impl Attention {
    /// All-zero attention of the given width.
    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self { qkv: Linear::zeros(3 * dim, dim), proj: Linear::zeros(dim, dim), heads }
    }

    /// Scaled dot-product attention with softmax rows.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, AttnCache) {
        let (seq, dim) = x.dim();
        let hd = dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let qkv = self.qkv.forward(x);
        let mut cache = AttnCache {
            x: x.clone(),
            q: Vec::with_capacity(self.heads),
            k: Vec::with_capacity(self.heads),
            v: Vec::with_capacity(self.heads),
            probs: Vec::with_capacity(self.heads),
            ctx: Array2::zeros((seq, dim)),
        };
        for h in 0..self.heads {
            let c0 = h * hd;
            let q = qkv.slice(s![.., c0..c0 + hd]).to_owned();
            let k = qkv.slice(s![.., dim + c0..dim + c0 + hd]).to_owned();
            let v = qkv.slice(s![.., 2 * dim + c0..2 * dim + c0 + hd]).to_owned();
            let mut scores = q.dot(&k.t());
            scores.mapv_inplace(|sc| sc * scale);
            // Row softmax, max-shifted for stability.
            for mut row in scores.rows_mut() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|sc| (sc - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|e| e / sum);
            }
            cache.ctx.slice_mut(s![.., c0..c0 + hd]).assign(&scores.dot(&v));
            cache.q.push(q);
            cache.k.push(k);
            cache.v.push(v);
            cache.probs.push(scores);
        }
        let out = self.proj.forward(&cache.ctx);
        (out, cache)
    }

    /// Accumulates qkv/proj gradients and returns the input gradient.
    pub fn backward(
        &self,
        cache: &AttnCache,
        grad_out: &Array2<f64>,
        grad: &mut Attention,
    ) -> Array2<f64> {
        let (seq, dim) = cache.x.dim();
        let hd = dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let d_ctx = self.proj.backward(&cache.ctx, grad_out, &mut grad.proj);
        let mut d_qkv = Array2::zeros((seq, 3 * dim));
        for h in 0..self.heads {
            let c0 = h * hd;
            let d_ctx_h = d_ctx.slice(s![.., c0..c0 + hd]);
            let p = &cache.probs[h];
            let d_p = d_ctx_h.dot(&cache.v[h].t());
            let d_v = p.t().dot(&d_ctx_h);
            // Softmax backward: dS = P .* (dP - rowsum(dP .* P)).
            let row_dot = (&d_p * p).sum_axis(Axis(1));
            let mut d_s = Array2::zeros((seq, seq));
            for r in 0..seq {
                for c in 0..seq {
                    d_s[[r, c]] = p[[r, c]] * (d_p[[r, c]] - row_dot[r]);
                }
            }
            let d_q = d_s.dot(&cache.k[h]).mapv(|g| g * scale);
            let d_k = d_s.t().dot(&cache.q[h]).mapv(|g| g * scale);
            d_qkv.slice_mut(s![.., c0..c0 + hd]).assign(&d_q);
            d_qkv.slice_mut(s![.., dim + c0..dim + c0 + hd]).assign(&d_k);
            d_qkv.slice_mut(s![.., 2 * dim + c0..2 * dim + c0 + hd]).assign(&d_v);
        }
        self.qkv.backward(&cache.x, &d_qkv, &mut grad.qkv)
    }
}

/// Two-layer feed-forward network with GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// Expansion map, `(hidden, dim)`.
    pub fc1: Linear,
    /// Contraction map, `(dim, hidden)`.
    pub fc2: Linear,
}

/// Forward cache for [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input, `(seq, dim)`.
    pub x: Array2<f64>,
    /// Pre-activation `fc1` output.
    pub pre: Array2<f64>,
    /// Activated hidden state fed to `fc2`.
    pub act: Array2<f64>,
}

impl Mlp {
    /// All-zero MLP of the given widths.
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self { fc1: Linear::zeros(hidden, dim), fc2: Linear::zeros(dim, hidden) }
    }

    /// `fc2(gelu(fc1(x)))`.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let pre = self.fc1.forward(x);
        let act = pre.mapv(gelu);
        let out = self.fc2.forward(&act);
        (out, MlpCache { x: x.clone(), pre, act })
    }

    /// Accumulates fc1/fc2 gradients and returns the input gradient.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let d_act = self.fc2.backward(&cache.act, grad_out, &mut grad.fc2);
        let d_pre = &d_act * &cache.pre.mapv(gelu_grad);
        self.fc1.backward(&cache.x, &d_pre, &mut grad.fc1)
    }
}

/// Pre-norm transformer block: `x + attn(norm1(x))`, then `+ mlp(norm2(·))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Normalization before attention.
    pub norm1: LayerNorm,
    /// Self-attention.
    pub attn: Attention,
    /// Normalization before the MLP.
    pub norm2: LayerNorm,
    /// Feed-forward network.
    pub mlp: Mlp,
}

/// Forward cache for [`Block`].
#[derive(Debug, Clone)]
pub struct BlockCache {
    /// norm1 cache.
    pub n1: NormCache,
    /// Attention cache.
    pub attn: AttnCache,
    /// norm2 cache.
    pub n2: NormCache,
    /// MLP cache.
    pub mlp: MlpCache,
}

impl Block {
    /// Identity-normalized, zero-weight block.
    pub fn zeros(dim: usize, heads: usize, hidden: usize) -> Self {
        Self {
            norm1: LayerNorm::zeros(dim),
            attn: Attention::zeros(dim, heads),
            norm2: LayerNorm::zeros(dim),
            mlp: Mlp::zeros(dim, hidden),
        }
    }

    /// Residual pre-norm forward pass.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, BlockCache) {
        let (n1_out, n1) = self.norm1.forward(x);
        let (a_out, attn) = self.attn.forward(&n1_out);
        let mid = x + &a_out;
        let (n2_out, n2) = self.norm2.forward(&mid);
        let (m_out, mlp) = self.mlp.forward(&n2_out);
        let out = &mid + &m_out;
        (out, BlockCache { n1, attn, n2, mlp })
    }

    /// Accumulates all block gradients and returns the input gradient.
    pub fn backward(&self, cache: &BlockCache, grad_out: &Array2<f64>, grad: &mut Block) -> Array2<f64> {
        let d_n2_out = self.mlp.backward(&cache.mlp, grad_out, &mut grad.mlp);
        let d_mid = grad_out + &self.norm2.backward(&cache.n2, &d_n2_out, &mut grad.norm2);
        let d_n1_out = self.attn.backward(&cache.attn, &d_mid, &mut grad.attn);
        &d_mid + &self.norm1.backward(&cache.n1, &d_n1_out, &mut grad.norm1)
    }
}
