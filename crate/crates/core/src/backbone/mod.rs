//! Masked-autoencoder vision transformer with parallel per-quantile
//! reconstruction heads: visible patches in, one reconstructed canvas per
//! head out, with hand-rolled backward passes for training.

pub mod checkpoint;
pub mod layers;
pub mod posenc;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use layers::{Block, BlockCache, LayerNorm, Linear, NormCache};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Canvas side in pixels.
    pub w: usize,
    /// Patch side in pixels.
    pub s: usize,
    /// Encoder embedding width.
    pub enc_dim: usize,
    /// Encoder block count.
    pub enc_depth: usize,
    /// Encoder attention heads.
    pub enc_heads: usize,
    /// Decoder embedding width.
    pub dec_dim: usize,
    /// Decoder block count.
    pub dec_depth: usize,
    /// Decoder attention heads.
    pub dec_heads: usize,
    /// MLP expansion ratio.
    pub mlp_ratio: f64,
    /// Reconstruction head count; odd so a median head exists.
    pub h: usize,
    /// Seed for random initialization.
    pub seed: u64,
}

impl ModelConfig {
    /// Small preset sized for CPU runs.
    pub fn desk() -> Self {
        Self {
            w: 32,
            s: 8,
            enc_dim: 64,
            enc_depth: 2,
            enc_heads: 4,
            dec_dim: 32,
            dec_depth: 1,
            dec_heads: 4,
            mlp_ratio: 4.0,
            h: 9,
            seed: 0,
        }
    }

    /// Full-size preset matching the published base backbone.
    pub fn full_size() -> Self {
        Self {
            w: 224,
            s: 16,
            enc_dim: 768,
            enc_depth: 12,
            enc_heads: 12,
            dec_dim: 512,
            dec_depth: 8,
            dec_heads: 16,
            mlp_ratio: 4.0,
            h: 9,
            seed: 0,
        }
    }

    /// Miniature preset for gradient checks.
    pub fn tiny() -> Self {
        Self {
            w: 16,
            s: 8,
            enc_dim: 16,
            enc_depth: 1,
            enc_heads: 2,
            dec_dim: 8,
            dec_depth: 1,
            dec_heads: 2,
            mlp_ratio: 4.0,
            h: 3,
            seed: 0,
        }
    }

    /// Checks divisibility and head-count constraints.
    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        let div = |name: &str, dim: usize, heads: usize| {
            if heads == 0 || !dim.is_multiple_of(heads) {
                return Err(Error::config(format!(
                    "{name} width {dim} is not divisible by {heads} heads"
                )));
            }
            Ok(())
        };
        div("encoder", self.enc_dim, self.enc_heads)?;
        div("decoder", self.dec_dim, self.dec_heads)?;
        if !self.enc_dim.is_multiple_of(4) || !self.dec_dim.is_multiple_of(4) {
            return Err(Error::config(
                "embedding widths must be divisible by 4 for the positional tables",
            ));
        }
        if self.enc_depth == 0 || self.dec_depth == 0 {
            return Err(Error::config("encoder and decoder need at least one block"));
        }
        if self.h == 0 || self.h.is_multiple_of(2) {
            return Err(Error::config(format!(
                "head count must be odd so a median head exists, got {}",
                self.h
            )));
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(Error::config("mlp_ratio must be positive"));
        }
        Ok(())
    }

    /// Canvas geometry for this architecture.
    pub fn geometry(&self) -> Result<crate::domain::ImageGeometry> {
        crate::domain::ImageGeometry::new(self.w, self.s)
    }

    /// Patches per side.
    pub fn n(&self) -> usize {
        self.w / self.s
    }

    /// Flattened pixels per patch.
    pub fn patch_dim(&self) -> usize {
        self.s * self.s * 3
    }

    fn hidden(&self, dim: usize) -> usize {
        (dim as f64 * self.mlp_ratio).round() as usize
    }

    /// Learnable scalar count, computed without materializing tensors.
    pub fn param_count(&self) -> usize {
        let q = self.patch_dim();
        let block = |dim: usize, hidden: usize| {
            2 * (2 * dim)                    // two layer norms
                + (3 * dim * dim + 3 * dim)  // qkv
                + (dim * dim + dim)          // proj
                + (hidden * dim + hidden)    // fc1
                + (dim * hidden + dim)       // fc2
        };
        (q * self.enc_dim + self.enc_dim)
            + self.enc_depth * block(self.enc_dim, self.hidden(self.enc_dim))
            + 2 * self.enc_dim
            + (self.dec_dim * self.enc_dim + self.dec_dim)
            + self.dec_dim
            + self.dec_depth * block(self.dec_dim, self.hidden(self.dec_dim))
            + 2 * self.dec_dim
            + self.h * (q * self.dec_dim + q)
    }
}

/// What a tensor is, driving initialization and weight-decay policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// Linear-map weight: truncated-normal init, weight decay applies.
    Weight,
    /// Bias vector: zero init, no decay.
    Bias,
    /// Normalization gain: ones init, no decay.
    NormGain,
    /// Learned token: truncated-normal init, no decay.
    Token,
}

/// Read-only view of one named parameter tensor.
pub struct TensorSlot<'a> {
    /// Canonical dotted name, e.g. `enc.0.attn.qkv.weight`.
    pub name: String,
    /// Tensor shape.
    pub shape: Vec<usize>,
    /// Flat row-major values.
    pub data: &'a [f64],
    /// Role of the tensor.
    pub kind: TensorKind,
}

/// Mutable view of one named parameter tensor.
pub struct TensorSlotMut<'a> {
    /// See [`TensorSlot`].
    pub name: String,
    /// Tensor shape.
    pub shape: Vec<usize>,
    /// Flat row-major values.
    pub data: &'a mut [f64],
    /// Role of the tensor.
    pub kind: TensorKind,
}

/// All learnable tensors plus the fixed positional tables.
#[derive(Debug, Clone)]
pub struct Parameters {
    /// Patch pixels to encoder width.
    pub patch_embed: Linear,
    /// Encoder blocks.
    pub enc: Vec<Block>,
    /// Final encoder normalization.
    pub enc_norm: LayerNorm,
    /// Encoder width to decoder width.
    pub dec_embed: Linear,
    /// Stand-in token for patches the encoder never saw.
    pub mask_token: Array1<f64>,
    /// Decoder blocks.
    pub dec: Vec<Block>,
    /// Final decoder normalization.
    pub dec_norm: LayerNorm,
    /// One output projection per quantile head.
    pub heads: Vec<Linear>,
    /// Fixed encoder positional table, `(n^2, enc_dim)`.
    pub pos_enc: Array2<f64>,
    /// Fixed decoder positional table, `(n^2, dec_dim)`.
    pub pos_dec: Array2<f64>,
}

impl Parameters {
    /// All-zero parameters with computed positional tables.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (e, d, q, n) = (cfg.enc_dim, cfg.dec_dim, cfg.patch_dim(), cfg.n());
        Ok(Self {
            patch_embed: Linear::zeros(e, q),
            enc: (0..cfg.enc_depth)
                .map(|_| Block::zeros(e, cfg.enc_heads, cfg.hidden(e)))
                .collect(),
            enc_norm: LayerNorm::zeros(e),
            dec_embed: Linear::zeros(d, e),
            mask_token: Array1::zeros(d),
            dec: (0..cfg.dec_depth)
                .map(|_| Block::zeros(d, cfg.dec_heads, cfg.hidden(d)))
                .collect(),
            dec_norm: LayerNorm::zeros(d),
            heads: (0..cfg.h).map(|_| Linear::zeros(q, d)).collect(),
            pos_enc: posenc::sincos_2d(n, e)?,
            pos_dec: posenc::sincos_2d(n, d)?,
        })
    }

    /// Same architecture with every learnable value set to zero; used as a
    /// gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for slot in g.tensors_mut() {
            slot.data.fill(0.0);
        }
        g
    }

    /// Read-only named tensors in canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<TensorSlot<'_>> {
        let mut out = Vec::new();
        push_linear(&mut out, "patch_embed", &self.patch_embed);
        for (i, b) in self.enc.iter().enumerate() {
            push_block(&mut out, &format!("enc.{i}"), b);
        }
        push_norm(&mut out, "enc_norm", &self.enc_norm);
        push_linear(&mut out, "dec_embed", &self.dec_embed);
        out.push(TensorSlot {
            name: "mask_token".into(),
            shape: vec![self.mask_token.len()],
            data: self.mask_token.as_slice().expect("contiguous"),
            kind: TensorKind::Token,
        });
        for (i, b) in self.dec.iter().enumerate() {
            push_block(&mut out, &format!("dec.{i}"), b);
        }
        push_norm(&mut out, "dec_norm", &self.dec_norm);
        for (i, h) in self.heads.iter().enumerate() {
            push_linear(&mut out, &format!("head.{i}"), h);
        }
        out
    }

    /// Mutable named tensors; order matches [`Parameters::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<TensorSlotMut<'_>> {
        let mut out = Vec::new();
        push_linear_mut(&mut out, "patch_embed", &mut self.patch_embed);
        for (i, b) in self.enc.iter_mut().enumerate() {
            push_block_mut(&mut out, &format!("enc.{i}"), b);
        }
        push_norm_mut(&mut out, "enc_norm", &mut self.enc_norm);
        push_linear_mut(&mut out, "dec_embed", &mut self.dec_embed);
        out.push(TensorSlotMut {
            name: "mask_token".into(),
            shape: vec![self.mask_token.len()],
            data: self.mask_token.as_slice_mut().expect("contiguous"),
            kind: TensorKind::Token,
        });
        for (i, b) in self.dec.iter_mut().enumerate() {
            push_block_mut(&mut out, &format!("dec.{i}"), b);
        }
        push_norm_mut(&mut out, "dec_norm", &mut self.dec_norm);
        for (i, h) in self.heads.iter_mut().enumerate() {
            push_linear_mut(&mut out, &format!("head.{i}"), h);
        }
        out
    }
}

fn push_linear<'a>(out: &mut Vec<TensorSlot<'a>>, prefix: &str, l: &'a Linear) {
    out.push(TensorSlot {
        name: format!("{prefix}.weight"),
        shape: l.weight.shape().to_vec(),
        data: l.weight.as_slice().expect("contiguous"),
        kind: TensorKind::Weight,
    });
    out.push(TensorSlot {
        name: format!("{prefix}.bias"),
        shape: vec![l.bias.len()],
        data: l.bias.as_slice().expect("contiguous"),
        kind: TensorKind::Bias,
    });
}

fn push_linear_mut<'a>(out: &mut Vec<TensorSlotMut<'a>>, prefix: &str, l: &'a mut Linear) {
    out.push(TensorSlotMut {
        name: format!("{prefix}.weight"),
        shape: l.weight.shape().to_vec(),
        data: l.weight.as_slice_mut().expect("contiguous"),
        kind: TensorKind::Weight,
    });
    out.push(TensorSlotMut {
        name: format!("{prefix}.bias"),
        shape: vec![l.bias.len()],
        data: l.bias.as_slice_mut().expect("contiguous"),
        kind: TensorKind::Bias,
    });
}

fn push_norm<'a>(out: &mut Vec<TensorSlot<'a>>, prefix: &str, n: &'a LayerNorm) {
    out.push(TensorSlot {
        name: format!("{prefix}.weight"),
        shape: vec![n.weight.len()],
        data: n.weight.as_slice().expect("contiguous"),
        kind: TensorKind::NormGain,
    });
    out.push(TensorSlot {
        name: format!("{prefix}.bias"),
        shape: vec![n.bias.len()],
        data: n.bias.as_slice().expect("contiguous"),
        kind: TensorKind::Bias,
    });
}

fn push_norm_mut<'a>(out: &mut Vec<TensorSlotMut<'a>>, prefix: &str, n: &'a mut LayerNorm) {
    out.push(TensorSlotMut {
        name: format!("{prefix}.weight"),
        shape: vec![n.weight.len()],
        data: n.weight.as_slice_mut().expect("contiguous"),
        kind: TensorKind::NormGain,
    });
    out.push(TensorSlotMut {
        name: format!("{prefix}.bias"),
        shape: vec![n.bias.len()],
        data: n.bias.as_slice_mut().expect("contiguous"),
        kind: TensorKind::Bias,
    });
}

fn push_block<'a>(out: &mut Vec<TensorSlot<'a>>, prefix: &str, b: &'a Block) {
    push_norm(out, &format!("{prefix}.norm1"), &b.norm1);
    push_linear(out, &format!("{prefix}.attn.qkv"), &b.attn.qkv);
    push_linear(out, &format!("{prefix}.attn.proj"), &b.attn.proj);
    push_norm(out, &format!("{prefix}.norm2"), &b.norm2);
    push_linear(out, &format!("{prefix}.mlp.fc1"), &b.mlp.fc1);
    push_linear(out, &format!("{prefix}.mlp.fc2"), &b.mlp.fc2);
}

fn push_block_mut<'a>(out: &mut Vec<TensorSlotMut<'a>>, prefix: &str, b: &'a mut Block) {
    push_norm_mut(out, &format!("{prefix}.norm1"), &mut b.norm1);
    push_linear_mut(out, &format!("{prefix}.attn.qkv"), &mut b.attn.qkv);
    push_linear_mut(out, &format!("{prefix}.attn.proj"), &mut b.attn.proj);
    push_norm_mut(out, &format!("{prefix}.norm2"), &mut b.norm2);
    push_linear_mut(out, &format!("{prefix}.mlp.fc1"), &mut b.mlp.fc1);
    push_linear_mut(out, &format!("{prefix}.mlp.fc2"), &mut b.mlp.fc2);
}

/// One sample from a normal with std `std`, re-drawn until within two
/// standard deviations.
fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        // Box-Muller; 1-u keeps the log argument in (0, 1].
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Flattens a `(W, W, 3)` image into `(N^2, S*S*3)` patch rows: patches in
/// row-major grid order, pixels within a patch row-major then channel.
///
/// # Errors
/// Fails when the image side is not a multiple of `s`.
pub fn patchify(image: &Array3<f64>, s: usize) -> Result<Array2<f64>> {
    let (h, w, c) = image.dim();
    if h != w || c != 3 || s == 0 || w % s != 0 {
        return Err(Error::data(format!(
            "cannot patchify a {h}x{w}x{c} image with {s} px patches"
        )));
    }
    let n = w / s;
    let mut patches = Array2::zeros((n * n, s * s * 3));
    for pr in 0..n {
        for pc in 0..n {
            let row = pr * n + pc;
            for i in 0..s {
                for j in 0..s {
                    for ch in 0..3 {
                        patches[[row, (i * s + j) * 3 + ch]] = image[[pr * s + i, pc * s + j, ch]];
                    }
                }
            }
        }
    }
    Ok(patches)
}

/// Inverse of [`patchify`].
///
/// # Errors
/// Fails when the patch grid does not tile a `w`-pixel square.
pub fn unpatchify(patches: &Array2<f64>, w: usize, s: usize) -> Result<Array3<f64>> {
    if s == 0 || !w.is_multiple_of(s) {
        return Err(Error::data(format!("bad unpatchify geometry w={w} s={s}")));
    }
    let n = w / s;
    if patches.dim() != (n * n, s * s * 3) {
        return Err(Error::data(format!(
            "patch matrix has shape {:?}, expected ({}, {})",
            patches.dim(),
            n * n,
            s * s * 3
        )));
    }
    let mut image = Array3::zeros((w, w, 3));
    for pr in 0..n {
        for pc in 0..n {
            let row = pr * n + pc;
            for i in 0..s {
                for j in 0..s {
                    for ch in 0..3 {
                        image[[pr * s + i, pc * s + j, ch]] = patches[[row, (i * s + j) * 3 + ch]];
                    }
                }
            }
        }
    }
    Ok(image)
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    /// Input patch rows, `(n^2, S*S*3)`.
    pub patches: Array2<f64>,
    /// Flat indices of visible patches, ascending.
    pub vis_idx: Vec<usize>,
    /// Flat indices of masked patches, ascending.
    pub mask_idx: Vec<usize>,
    /// Visible patch rows fed to the patch embedding.
    pub xv: Array2<f64>,
    /// Encoder block caches.
    pub enc_caches: Vec<BlockCache>,
    /// Final encoder norm cache.
    pub enc_norm_cache: NormCache,
    /// Encoder output after the final norm; input to the decoder embedding.
    pub enc_norm_out: Array2<f64>,
    /// Decoder block caches.
    pub dec_caches: Vec<BlockCache>,
    /// Final decoder norm cache.
    pub dec_norm_cache: NormCache,
    /// Decoder tokens fed to every head, `(n^2, dec_dim)`.
    pub tokens: Array2<f64>,
}

/// Architecture plus parameters, the unit the pipeline passes around.
#[derive(Debug, Clone)]
pub struct Model {
    /// Architecture.
    pub cfg: ModelConfig,
    /// Parameters.
    pub params: Parameters,
}

impl Model {
    /// Seeded random initialization: truncated-normal weights (std 0.02),
    /// zero biases, unit gains, computed positional tables.
    pub fn init_random(cfg: ModelConfig) -> Result<Self> {
        let mut params = Parameters::zeros(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for slot in params.tensors_mut() {
            match slot.kind {
                TensorKind::Weight | TensorKind::Token => {
                    for v in slot.data.iter_mut() {
                        *v = trunc_normal(&mut rng, 0.02);
                    }
                }
                TensorKind::Bias => slot.data.fill(0.0),
                TensorKind::NormGain => slot.data.fill(1.0),
            }
        }
        Ok(Self { cfg, params })
    }

    /// Runs the masked autoencoder and returns one canvas per head: head
    /// pixels at masked patches, input pixels copied through at visible ones.
    ///
    /// # Errors
    /// Fails on image/mask shape mismatches.
    pub fn forward(&self, image: &Array3<f64>, mask: &Array2<bool>) -> Result<Vec<Array3<f64>>> {
        Ok(self.forward_with_cache(image, mask)?.0)
    }

    /// [`Model::forward`] plus the cache needed for [`Model::backward`].
    pub fn forward_with_cache(
        &self,
        image: &Array3<f64>,
        mask: &Array2<bool>,
    ) -> Result<(Vec<Array3<f64>>, ForwardCache)> {
        let cfg = &self.cfg;
        let n = cfg.n();
        if image.dim() != (cfg.w, cfg.w, 3) {
            return Err(Error::data(format!(
                "image has shape {:?}, model expects ({}, {}, 3)",
                image.dim(),
                cfg.w,
                cfg.w
            )));
        }
        if mask.dim() != (n, n) {
            return Err(Error::data(format!(
                "mask has shape {:?}, model expects ({n}, {n})",
                mask.dim()
            )));
        }
        let patches = patchify(image, cfg.s)?;
        let mut vis_idx = Vec::new();
        let mut mask_idx = Vec::new();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                mask_idx.push(i);
            } else {
                vis_idx.push(i);
            }
        }
        if vis_idx.is_empty() {
            return Err(Error::data("mask leaves no visible patches to encode"));
        }
        let p = &self.params;

        // Encoder: visible patches only, with their positional rows.
        let mut xv = Array2::zeros((vis_idx.len(), cfg.patch_dim()));
        for (r, &t) in vis_idx.iter().enumerate() {
            xv.row_mut(r).assign(&patches.row(t));
        }
        let mut hseq = p.patch_embed.forward(&xv);
        for (r, &t) in vis_idx.iter().enumerate() {
            let mut row = hseq.row_mut(r);
            row += &p.pos_enc.row(t);
        }
        let mut enc_caches = Vec::with_capacity(p.enc.len());
        for block in &p.enc {
            let (next, cache) = block.forward(&hseq);
            hseq = next;
            enc_caches.push(cache);
        }
        let (enc_norm_out, enc_norm_cache) = p.enc_norm.forward(&hseq);

        // Decoder: embedded visible tokens, mask tokens elsewhere, positions
        // added across the full grid.
        let z_vis = p.dec_embed.forward(&enc_norm_out);
        let mut zseq = Array2::zeros((n * n, cfg.dec_dim));
        for (r, &t) in vis_idx.iter().enumerate() {
            zseq.row_mut(t).assign(&z_vis.row(r));
        }
        for &t in &mask_idx {
            zseq.row_mut(t).assign(&p.mask_token);
        }
        zseq += &p.pos_dec;
        let mut dec_caches = Vec::with_capacity(p.dec.len());
        for block in &p.dec {
            let (next, cache) = block.forward(&zseq);
            zseq = next;
            dec_caches.push(cache);
        }
        let (tokens, dec_norm_cache) = p.dec_norm.forward(&zseq);

        // Heads: masked slots take head pixels, visible slots copy the input.
        let mut outputs = Vec::with_capacity(p.heads.len());
        for head in &p.heads {
            let y = head.forward(&tokens);
            let mut out_patches = patches.clone();
            for &t in &mask_idx {
                out_patches.row_mut(t).assign(&y.row(t));
            }
            outputs.push(unpatchify(&out_patches, cfg.w, cfg.s)?);
        }
        let cache = ForwardCache {
            patches,
            vis_idx,
            mask_idx,
            xv,
            enc_caches,
            enc_norm_cache,
            enc_norm_out,
            dec_caches,
            dec_norm_cache,
            tokens,
        };
        Ok((outputs, cache))
    }

    /// Accumulates parameter gradients for per-head canvas gradients.
    /// Gradient on visible slots is dropped: those pixels are input copies,
    /// not functions of the parameters.
    ///
    /// # Errors
    /// Fails when the gradient bank does not match the head count or shape.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_images: &[Array3<f64>],
        grads: &mut Parameters,
    ) -> Result<()> {
        let cfg = &self.cfg;
        let p = &self.params;
        if grad_images.len() != p.heads.len() {
            return Err(Error::data(format!(
                "{} canvas gradients for {} heads",
                grad_images.len(),
                p.heads.len()
            )));
        }
        let n = cfg.n();
        let mut d_tokens = Array2::zeros((n * n, cfg.dec_dim));
        for (i, g_img) in grad_images.iter().enumerate() {
            let mut g_patches = patchify(g_img, cfg.s)?;
            for &t in &cache.vis_idx {
                g_patches.row_mut(t).fill(0.0);
            }
            d_tokens += &p.heads[i].backward(&cache.tokens, &g_patches, &mut grads.heads[i]);
        }

        let mut d_z = p.dec_norm.backward(&cache.dec_norm_cache, &d_tokens, &mut grads.dec_norm);
        for i in (0..p.dec.len()).rev() {
            d_z = p.dec[i].backward(&cache.dec_caches[i], &d_z, &mut grads.dec[i]);
        }
        // Positional addition is identity in the gradient; split by slot.
        for &t in &cache.mask_idx {
            grads.mask_token += &d_z.row(t);
        }
        let mut d_z_vis = Array2::zeros((cache.vis_idx.len(), cfg.dec_dim));
        for (r, &t) in cache.vis_idx.iter().enumerate() {
            d_z_vis.row_mut(r).assign(&d_z.row(t));
        }
        let d_enc_out = p.dec_embed.backward(&cache.enc_norm_out, &d_z_vis, &mut grads.dec_embed);
        let mut d_h = p.enc_norm.backward(&cache.enc_norm_cache, &d_enc_out, &mut grads.enc_norm);
        for i in (0..p.enc.len()).rev() {
            d_h = p.enc[i].backward(&cache.enc_caches[i], &d_h, &mut grads.enc[i]);
        }
        p.patch_embed.backward(&cache.xv, &d_h, &mut grads.patch_embed);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn half_mask(n: usize) -> Array2<bool> {
        Array2::from_shape_fn((n, n), |(_, c)| c >= n / 2)
    }

    fn random_image(w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((w, w, 3), |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn patchify_shapes_match_the_grid_arithmetic() {
        let img = Array3::zeros((224, 224, 3));
        assert_eq!(patchify(&img, 16).unwrap().dim(), (196, 768));
        let img = Array3::zeros((32, 32, 3));
        assert_eq!(patchify(&img, 8).unwrap().dim(), (16, 192));
        assert!(patchify(&Array3::zeros((30, 30, 3)), 8).is_err());
    }

    #[test]
    fn patchify_layout_is_row_major_then_channel() {
        // 4x4 image, 2x2 patches: value encodes (row, col, channel).
        let img = Array3::from_shape_fn((4, 4, 3), |(r, c, ch)| {
            r as f64 * 100.0 + c as f64 * 10.0 + ch as f64
        });
        let p = patchify(&img, 2).unwrap();
        // Patch 1 covers rows 0..2, cols 2..4; its pixel (1,0) channel 2 sits
        // at inner index (1*2+0)*3+2 = 8 and holds value 120 + 2.
        assert_eq!(p[[1, 8]], 122.0);
        // Patch 2 opens grid row 1: pixel (0,0,0) is image (2,0,0).
        assert_eq!(p[[2, 0]], 200.0);
    }

    #[test]
    fn unpatchify_inverts_patchify_bit_exactly() {
        let img = random_image(32, 3);
        let p = patchify(&img, 8).unwrap();
        assert_eq!(unpatchify(&p, 32, 8).unwrap(), img);
        assert!(unpatchify(&p, 32, 16).is_err());
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        for cfg in [ModelConfig::desk(), ModelConfig::full_size(), ModelConfig::tiny()] {
            cfg.validate().unwrap();
        }
        let mut bad = ModelConfig::desk();
        bad.h = 4;
        assert!(bad.validate().is_err(), "even head count");
        let mut bad = ModelConfig::desk();
        bad.enc_heads = 5;
        assert!(bad.validate().is_err(), "indivisible heads");
        let mut bad = ModelConfig::desk();
        bad.w = 33;
        assert!(bad.validate().is_err(), "indivisible canvas");
    }

    #[test]
    fn param_count_matches_materialized_tensors() {
        for cfg in [ModelConfig::desk(), ModelConfig::tiny()] {
            let params = Parameters::zeros(&cfg).unwrap();
            let total: usize = params.tensors().iter().map(|t| t.data.len()).sum();
            assert_eq!(total, cfg.param_count());
        }
    }

    #[test]
    fn full_size_parameter_count_is_near_112_million() {
        let mut cfg = ModelConfig::full_size();
        cfg.h = 1;
        assert_eq!(cfg.param_count(), 111_654_912);
        cfg.h = 9;
        assert_eq!(cfg.param_count(), 114_806_784);
        for count in [111_654_912usize, 114_806_784] {
            let dev = (count as f64 - 112_000_000.0).abs() / 112_000_000.0;
            assert!(dev < 0.05, "count {count} deviates {dev:.3} from 112M");
        }
    }

    #[test]
    fn tensor_listings_agree_and_use_canonical_names() {
        let mut params = Parameters::zeros(&ModelConfig::desk()).unwrap();
        let names: Vec<String> = params.tensors().iter().map(|t| t.name.clone()).collect();
        let shapes: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape.clone()).collect();
        let mut_names: Vec<String> = params.tensors_mut().iter().map(|t| t.name.clone()).collect();
        assert_eq!(names, mut_names);
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len(), "duplicate tensor names");
        assert_eq!(names[0], "patch_embed.weight");
        assert!(names.contains(&"enc.1.attn.qkv.weight".to_string()));
        assert!(names.contains(&"mask_token".to_string()));
        assert_eq!(names.last().unwrap(), "head.8.bias");
        // Shapes stay in sync between listings.
        for (slot, shape) in params.tensors_mut().iter().zip(shapes.iter()) {
            assert_eq!(&slot.shape, shape);
            assert_eq!(slot.data.len(), shape.iter().product::<usize>());
        }
    }

    #[test]
    fn init_is_seed_deterministic_and_seed_sensitive() {
        let a = Model::init_random(ModelConfig::tiny()).unwrap();
        let b = Model::init_random(ModelConfig::tiny()).unwrap();
        let eq = a
            .params
            .tensors()
            .iter()
            .zip(b.params.tensors().iter())
            .all(|(x, y)| x.data == y.data);
        assert!(eq, "same seed must give identical parameters");
        let mut cfg = ModelConfig::tiny();
        cfg.seed = 1;
        let c = Model::init_random(cfg).unwrap();
        let differs = a
            .params
            .tensors()
            .iter()
            .zip(c.params.tensors().iter())
            .any(|(x, y)| x.data != y.data);
        assert!(differs, "different seeds must differ");
    }

    #[test]
    fn init_respects_tensor_roles() {
        let model = Model::init_random(ModelConfig::desk()).unwrap();
        for slot in model.params.tensors() {
            match slot.kind {
                TensorKind::Weight | TensorKind::Token => {
                    assert!(slot.data.iter().any(|&v| v != 0.0), "{} all zero", slot.name);
                    assert!(
                        slot.data.iter().all(|&v| v.abs() <= 0.04 + 1e-12),
                        "{} exceeds two standard deviations",
                        slot.name
                    );
                }
                TensorKind::Bias => {
                    assert!(slot.data.iter().all(|&v| v == 0.0), "{} not zero", slot.name)
                }
                TensorKind::NormGain => {
                    assert!(slot.data.iter().all(|&v| v == 1.0), "{} not one", slot.name)
                }
            }
        }
    }

    #[test]
    fn forward_returns_h_images_of_input_shape() {
        let model = Model::init_random(ModelConfig::desk()).unwrap();
        let img = random_image(32, 7);
        let outs = model.forward(&img, &half_mask(4)).unwrap();
        assert_eq!(outs.len(), 9);
        for o in &outs {
            assert_eq!(o.dim(), (32, 32, 3));
        }
    }

    #[test]
    fn visible_pixels_are_copied_through() {
        let model = Model::init_random(ModelConfig::desk()).unwrap();
        let img = random_image(32, 11);
        let outs = model.forward(&img, &half_mask(4)).unwrap();
        for o in &outs {
            // Left half visible: columns 0..16 must match the input exactly.
            assert_eq!(
                o.slice(ndarray::s![.., ..16, ..]),
                img.slice(ndarray::s![.., ..16, ..])
            );
        }
    }

    #[test]
    fn masked_patch_pixels_never_influence_outputs() {
        let model = Model::init_random(ModelConfig::desk()).unwrap();
        let img = random_image(32, 13);
        let outs = model.forward(&img, &half_mask(4)).unwrap();
        let mut scribbled = img.clone();
        // Perturb pixels inside masked patches (right half of the canvas).
        scribbled
            .slice_mut(ndarray::s![.., 16.., ..])
            .mapv_inplace(|v| v * -3.0 + 1.0);
        let outs2 = model.forward(&scribbled, &half_mask(4)).unwrap();
        for (a, b) in outs.iter().zip(outs2.iter()) {
            // Masked-slot outputs are bit-identical; visible slots copy the
            // (unchanged) left half.
            assert_eq!(a, b);
        }
    }

    #[test]
    fn equal_head_weights_give_identical_outputs() {
        let mut model = Model::init_random(ModelConfig::desk()).unwrap();
        let head0 = model.params.heads[0].clone();
        for h in model.params.heads.iter_mut() {
            *h = head0.clone();
        }
        let outs = model.forward(&random_image(32, 17), &half_mask(4)).unwrap();
        for o in &outs[1..] {
            assert_eq!(o, &outs[0]);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Model::init_random(ModelConfig::desk()).unwrap();
        let img = random_image(32, 19);
        assert_eq!(
            model.forward(&img, &half_mask(4)).unwrap(),
            model.forward(&img, &half_mask(4)).unwrap()
        );
    }

    #[test]
    fn forward_rejects_shape_mismatches() {
        let model = Model::init_random(ModelConfig::desk()).unwrap();
        let img = random_image(32, 23);
        assert!(model.forward(&img, &Array2::from_elem((3, 3), false)).is_err());
        assert!(model.forward(&random_image(16, 23), &half_mask(4)).is_err());
        let all_masked = Array2::from_elem((4, 4), true);
        assert!(model.forward(&img, &all_masked).is_err());
    }

    /// Full-model gradient check: analytic backward against central finite
    /// differences of a random linear readout of the output canvases.
    #[test]
    fn backward_matches_finite_differences_on_every_tensor() {
        let mut cfg = ModelConfig::tiny();
        cfg.h = 1;
        let model = Model::init_random(cfg.clone()).unwrap();
        let img = random_image(16, 29);
        let mask = half_mask(2);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let readout: Vec<Array3<f64>> = (0..cfg.h)
            .map(|_| Array3::from_shape_fn((16, 16, 3), |_| rng.random::<f64>() - 0.5))
            .collect();
        let loss = |m: &Model| -> f64 {
            m.forward(&img, &mask)
                .unwrap()
                .iter()
                .zip(readout.iter())
                .map(|(o, g)| (o * g).sum())
                .sum()
        };

        let (_, cache) = model.forward_with_cache(&img, &mask).unwrap();
        let mut grads = model.params.zeros_like();
        model.backward(&cache, &readout, &mut grads).unwrap();

        let n_tensors = model.params.tensors().len();
        let step = 1e-5;
        for ti in 0..n_tensors {
            let len = model.params.tensors()[ti].data.len();
            // A handful of spread-out slots per tensor.
            let picks: Vec<usize> =
                (0..len.min(3)).map(|k| k * (len / 3).max(1)).filter(|&i| i < len).collect();
            for i in picks {
                let mut m2 = model.clone();
                m2.params.tensors_mut()[ti].data[i] += step;
                let hi = loss(&m2);
                m2.params.tensors_mut()[ti].data[i] -= 2.0 * step;
                let lo = loss(&m2);
                let numeric = (hi - lo) / (2.0 * step);
                let analytic = grads.tensors()[ti].data[i];
                assert_relative_eq!(analytic, numeric, epsilon = 1e-7, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn backward_rejects_wrong_gradient_bank() {
        let model = Model::init_random(ModelConfig::tiny()).unwrap();
        let img = random_image(16, 37);
        let (_, cache) = model.forward_with_cache(&img, &half_mask(2)).unwrap();
        let mut grads = model.params.zeros_like();
        let wrong = vec![Array3::zeros((16, 16, 3)); 2];
        assert!(model.backward(&cache, &wrong, &mut grads).is_err());
    }
}
