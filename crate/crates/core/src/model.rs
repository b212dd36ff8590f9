//! Dual-stream segmentation model.
//!
//! Both the original and the augmented image pass through a shared-weight
//! encoder (3×3 conv → BN → 1×1 depthwise → BN), a residual projection
//! block, and patch embedding with L2 token normalization. The two token
//! sequences then exchange information through a shared linear
//! cross-attention block (queries/keys from one stream, values from the
//! other, roles swapped between streams), and each stream is decoded back
//! to pixel resolution and fused by summation into a per-pixel cluster
//! distribution.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{Graph, NumericsError, Scalar, Tensor, ValueId};

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;
/// Weight of the upsampled token-context features relative to the pixel
/// features in the decoding head. Token cells are coarse; at full weight
/// they override pixel evidence near region boundaries and the prediction
/// snaps to the token grid.
pub const TOKEN_CONTEXT_SCALE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("model config: {0}")]
    InvalidConfig(String),

    #[error("input shape {got:?} does not match configured [{h}, {w}, {c}]")]
    InputShape {
        got: Vec<usize>,
        h: usize,
        w: usize,
        c: usize,
    },
}

/// Architecture hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Encoder feature width `D`.
    pub feat_channels: usize,
    /// Side length of the square token patches.
    pub patch_size: usize,
    /// Token embedding width.
    pub token_dim: usize,
    /// Number of output clusters `K`.
    pub num_clusters: usize,
    /// Scale applied to the image-side tokens entering cross-attention.
    pub alpha: f64,
    pub image_h: usize,
    pub image_w: usize,
}

impl ModelConfig {
    /// Defaults for a square input: 64 feature channels, 64-d tokens,
    /// 16 clusters, α = 3, and a patch size of `side/8` (an 8×8 token grid).
    pub fn for_image(in_channels: usize, side: usize) -> Self {
        Self {
            in_channels,
            feat_channels: 64,
            patch_size: (side / 8).max(1),
            token_dim: 64,
            num_clusters: 16,
            alpha: 3.0,
            image_h: side,
            image_w: side,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patch_size == 0
            || self.image_h % self.patch_size != 0
            || self.image_w % self.patch_size != 0
        {
            return Err(ModelError::InvalidConfig(format!(
                "image {}x{} is not divisible by patch size {}",
                self.image_h, self.image_w, self.patch_size
            )));
        }
        if self.num_clusters < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "need at least 2 clusters, got {}",
                self.num_clusters
            )));
        }
        if self.alpha <= 0.0 {
            return Err(ModelError::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.in_channels == 0 || self.feat_channels == 0 || self.token_dim == 0 {
            return Err(ModelError::InvalidConfig("zero-width layer".into()));
        }
        Ok(())
    }

    pub fn grid_h(&self) -> usize {
        self.image_h / self.patch_size
    }

    pub fn grid_w(&self) -> usize {
        self.image_w / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.grid_h() * self.grid_w()
    }
}

/// Hard cluster assignment per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    h: usize,
    w: usize,
    labels: Vec<u32>,
}

impl SegmentationMap {
    pub fn new(h: usize, w: usize, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), h * w);
        Self { h, w, labels }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.w + x]
    }

    /// Number of distinct cluster ids present.
    pub fn distinct_clusters(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Nearest-neighbor resize, for mapping label maps back to the
    /// original image resolution.
    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> SegmentationMap {
        if out_h == self.h && out_w == self.w {
            return self.clone();
        }
        let mut labels = Vec::with_capacity(out_h * out_w);
        for oy in 0..out_h {
            let sy = ((oy as f64 + 0.5) * self.h as f64 / out_h as f64) as usize;
            let sy = sy.min(self.h - 1);
            for ox in 0..out_w {
                let sx = ((ox as f64 + 0.5) * self.w as f64 / out_w as f64) as usize;
                let sx = sx.min(self.w - 1);
                labels.push(self.labels[sy * self.w + sx]);
            }
        }
        SegmentationMap::new(out_h, out_w, labels)
    }
}

/// ArgMax over the cluster axis of an `[h,w,k]` soft prediction map,
/// breaking ties toward the lowest cluster index.
pub fn predict_segmentation<T: Scalar>(p: &Tensor<T>) -> SegmentationMap {
    let (h, w, k) = (p.shape()[0], p.shape()[1], p.shape()[2]);
    let mut labels = Vec::with_capacity(h * w);
    for row in p.data().chunks_exact(k) {
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        labels.push(best as u32);
    }
    SegmentationMap::new(h, w, labels)
}

// ── parameters ───────────────────────────────────────────────────────

/// All trainable weights, in a fixed order shared by initialization, the
/// optimizer, and gradient collection. Both streams read the same storage.
///
/// Affine parameters that a following per-image batch norm would cancel
/// exactly (conv bias, pre-norm affines) are not trainable: they would have
/// identically zero gradient, so the norms run without them.
#[derive(Debug, Clone)]
pub struct ParameterSet<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParameterSet<T> {
    /// Seeded initialization: weights uniform in ±√(6/fan_in), biases zero,
    /// norm scales one, norm offsets zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.feat_channels;
        let t = cfg.token_dim;
        let t2 = 2 * t;
        let hidden = 4 * t2;
        let patch_in = cfg.patch_size * cfg.patch_size * d;
        let mut entries: Vec<(String, Tensor<T>)> = Vec::new();

        let weight = |entries: &mut Vec<(String, Tensor<T>)>,
                          rng: &mut ChaCha8Rng,
                          name: &str,
                          shape: &[usize],
                          fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let tensor = Tensor::from_fn(shape, |_| {
                T::from_f64(rng.random_range(-bound..bound))
            });
            entries.push((name.to_string(), tensor));
        };
        let zeros = |entries: &mut Vec<(String, Tensor<T>)>, name: &str, len: usize| {
            entries.push((name.to_string(), Tensor::zeros(&[len])));
        };
        let ones = |entries: &mut Vec<(String, Tensor<T>)>, name: &str, len: usize| {
            entries.push((name.to_string(), Tensor::filled(&[len], T::one())));
        };

        weight(&mut entries, &mut rng, "enc_conv_w", &[3, 3, cfg.in_channels, d], 9 * cfg.in_channels);
        weight(&mut entries, &mut rng, "enc_pw_w", &[1, 1, d, d], d);
        ones(&mut entries, "enc_bn2_gamma", d);
        zeros(&mut entries, "enc_bn2_beta", d);

        weight(&mut entries, &mut rng, "proj_lin1_w", &[d, d], d);
        zeros(&mut entries, "proj_lin1_b", d);
        weight(&mut entries, &mut rng, "proj_lin2_w", &[d, d], d);
        zeros(&mut entries, "proj_lin2_b", d);
        ones(&mut entries, "proj_bn_gamma", d);
        zeros(&mut entries, "proj_bn_beta", d);

        weight(&mut entries, &mut rng, "patch_w", &[patch_in, t], patch_in);
        zeros(&mut entries, "patch_b", t);

        ones(&mut entries, "attn_ln_in_gamma", t);
        zeros(&mut entries, "attn_ln_in_beta", t);
        weight(&mut entries, &mut rng, "attn_qk_w", &[t, t], t);
        zeros(&mut entries, "attn_qk_b", t);
        weight(&mut entries, &mut rng, "attn_v_w", &[t, t], t);
        zeros(&mut entries, "attn_v_b", t);
        weight(&mut entries, &mut rng, "attn_out_w", &[t, t2], t);
        zeros(&mut entries, "attn_out_b", t2);
        ones(&mut entries, "attn_ln_e_gamma", t2);
        zeros(&mut entries, "attn_ln_e_beta", t2);
        ones(&mut entries, "attn_ln_t_gamma", t2);
        zeros(&mut entries, "attn_ln_t_beta", t2);

        weight(&mut entries, &mut rng, "ffn_lin1_w", &[t2, hidden], t2);
        zeros(&mut entries, "ffn_lin1_b", hidden);
        weight(&mut entries, &mut rng, "ffn_dw_w", &[3, 3, hidden], 9);
        zeros(&mut entries, "ffn_dw_b", hidden);
        weight(&mut entries, &mut rng, "ffn_lin2_w", &[hidden, t2], hidden);
        zeros(&mut entries, "ffn_lin2_b", t2);

        // the pixel half of the head starts random, the token half at
        // zero: the upsampled token features vary smoothly with position
        // and would otherwise seed one cluster per token neighborhood,
        // which the self-labelling loss then freezes. Starting from the
        // pixel features makes the initial assignment appearance-driven;
        // the token context grows in during training.
        let head_bound = (6.0 / (t2 + d) as f64).sqrt();
        let head_w = Tensor::from_fn(&[t2 + d, cfg.num_clusters], |i| {
            if i / cfg.num_clusters < t2 {
                T::zero()
            } else {
                T::from_f64(rng.random_range(-head_bound..head_bound))
            }
        });
        entries.push(("head_w".to_string(), head_w));
        zeros(&mut entries, "head_b", cfg.num_clusters);

        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        Self { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        let i = self.index[name];
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let i = self.index[name];
        &mut self.entries[i].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Registers every parameter as a differentiable graph leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        let ids = self
            .entries
            .iter()
            .map(|(_, t)| g.leaf(t.clone()))
            .collect();
        BoundParams {
            ids,
            index: self.index.clone(),
        }
    }

    /// Binds every parameter as a constant except `probe_name`, which is
    /// bound to an externally created leaf. Lets the gradient checker
    /// differentiate one parameter tensor at a time.
    pub fn bind_with_probe(
        &self,
        g: &mut Graph<T>,
        probe_name: &str,
        probe: ValueId,
    ) -> BoundParams {
        let ids = self
            .entries
            .iter()
            .map(|(name, t)| {
                if name == probe_name {
                    probe
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        BoundParams {
            ids,
            index: self.index.clone(),
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Graph leaf ids for one bound [`ParameterSet`], in parameter order.
pub struct BoundParams {
    ids: Vec<ValueId>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> ValueId {
        self.ids[self.index[name]]
    }

    pub fn ids(&self) -> &[ValueId] {
        &self.ids
    }
}

// ── forward pieces ───────────────────────────────────────────────────

/// Shared-weight encoder: conv3×3 → BN → pointwise 1×1 conv → BN.
///
/// The convolutions are bias-free and the first norm affine-free: a
/// per-channel shift or scale right before a per-image batch norm is
/// cancelled exactly, so such parameters would never train. For the same
/// reason the 1×1 stage mixes channels (a per-channel 1×1 scale between
/// two norms would be a no-op up to sign).
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    params: &BoundParams,
    img: ValueId,
) -> Result<ValueId, ModelError> {
    let eps = T::from_f64(BN_EPS);
    let d = g.value(params.id("enc_bn2_gamma")).numel();
    let no_bias = g.constant(Tensor::zeros(&[d]));
    let unit_gamma = g.constant(Tensor::filled(&[d], T::one()));
    let zero_beta = g.constant(Tensor::zeros(&[d]));

    let c1 = g.conv2d(img, params.id("enc_conv_w"), no_bias)?;
    let b1 = g.batch_norm(c1, unit_gamma, zero_beta, eps)?;
    let pw = g.conv2d(b1, params.id("enc_pw_w"), no_bias)?;
    let b2 = g.batch_norm(pw, params.id("enc_bn2_gamma"), params.id("enc_bn2_beta"), eps)?;
    Ok(b2)
}

/// Residual projection block on token rows:
/// `LN(Linear₂(GELU(Linear₁(x))) + x)`.
///
/// The LayerNorm is affine-free: the post-projection batch norm right after
/// this block would cancel a per-feature affine exactly.
pub fn project<T: Scalar>(
    g: &mut Graph<T>,
    params: &BoundParams,
    rows: ValueId,
) -> Result<ValueId, ModelError> {
    let h1 = g.linear(rows, params.id("proj_lin1_w"), params.id("proj_lin1_b"))?;
    let h1 = g.gelu(h1);
    let h2 = g.linear(h1, params.id("proj_lin2_w"), params.id("proj_lin2_b"))?;
    let res = g.add(h2, rows)?;
    let d = g.value(rows).shape()[1];
    let unit_gamma = g.constant(Tensor::filled(&[d], T::one()));
    let zero_beta = g.constant(Tensor::zeros(&[d]));
    let out = g.layer_norm(res, unit_gamma, zero_beta, T::from_f64(LN_EPS))?;
    Ok(out)
}

/// Encoder features → projection block → post-projection batch norm,
/// producing the per-stream pixel feature map `[h,w,d]`.
pub fn pixel_features<T: Scalar>(
    g: &mut Graph<T>,
    params: &BoundParams,
    img: ValueId,
    cfg: &ModelConfig,
) -> Result<ValueId, ModelError> {
    let feat = encode(g, params, img)?;
    let (h, w, d) = (cfg.image_h, cfg.image_w, cfg.feat_channels);
    let rows = g.reshape(feat, &[h * w, d])?;
    let proj = project(g, params, rows)?;
    let grid = g.reshape(proj, &[h, w, d])?;
    let out = g.batch_norm(
        grid,
        params.id("proj_bn_gamma"),
        params.id("proj_bn_beta"),
        T::from_f64(BN_EPS),
    )?;
    Ok(out)
}

/// Non-overlapping patches, linearly projected and divided by their L2
/// norms: `[h,w,d] → [n, token_dim]` with unit-norm rows.
pub fn patch_embed_normalize<T: Scalar>(
    g: &mut Graph<T>,
    params: &BoundParams,
    feat: ValueId,
    cfg: &ModelConfig,
) -> Result<ValueId, ModelError> {
    let patches = g.extract_patches(feat, cfg.patch_size)?;
    let proj = g.linear(patches, params.id("patch_w"), params.id("patch_b"))?;
    let tokens = g.l2_normalize_rows(proj)?;
    Ok(tokens)
}

/// MixFFN: expand ×4 → depthwise 3×3 over the token grid → GELU → contract.
pub fn mix_ffn<T: Scalar>(
    g: &mut Graph<T>,
    params: &BoundParams,
    tokens: ValueId,
    cfg: &ModelConfig,
) -> Result<ValueId, ModelError> {
    let n = g.value(tokens).shape()[0];
    let (gh, gw) = (cfg.grid_h(), cfg.grid_w());
    if gh * gw != n {
        return Err(ModelError::InvalidConfig(format!(
            "{n} tokens do not form a {gh}x{gw} grid"
        )));
    }
    let hidden = g.value(params.id("ffn_lin1_w")).shape()[1];
    let h1 = g.linear(tokens, params.id("ffn_lin1_w"), params.id("ffn_lin1_b"))?;
    let grid = g.reshape(h1, &[gh, gw, hidden])?;
    let dw = g.depthwise_conv2d(grid, params.id("ffn_dw_w"), params.id("ffn_dw_b"))?;
    let flat = g.reshape(dw, &[n, hidden])?;
    let act = g.gelu(flat);
    let out = g.linear(act, params.id("ffn_lin2_w"), params.id("ffn_lin2_b"))?;
    Ok(out)
}

/// Shared linear cross-attention block.
///
/// Queries/keys come from `x1`, values from `x2`; the query softmax runs
/// over the feature axis and the key softmax over the token axis, so the
/// attention contracts to `[d,d]` instead of `[n,n]`. The widened residual
/// `X = [LN(x1) ‖ LN(x2)]` is reconciled with the attention output by a
/// 1×1 projection from `d` to `2d`.
pub fn cross_attention<T: Scalar>(
    g: &mut Graph<T>,
    params: &BoundParams,
    x1: ValueId,
    x2: ValueId,
    cfg: &ModelConfig,
) -> Result<ValueId, ModelError> {
    if g.value(x1).shape() != g.value(x2).shape() {
        return Err(ModelError::Numerics(NumericsError::Invalid {
            op: "cross_attention",
            msg: format!(
                "stream shapes differ: {:?} vs {:?}",
                g.value(x1).shape(),
                g.value(x2).shape()
            ),
        }));
    }
    let eps = T::from_f64(LN_EPS);
    let ln1 = g.layer_norm(x1, params.id("attn_ln_in_gamma"), params.id("attn_ln_in_beta"), eps)?;
    let ln2 = g.layer_norm(x2, params.id("attn_ln_in_gamma"), params.id("attn_ln_in_beta"), eps)?;
    let qk = g.linear(ln1, params.id("attn_qk_w"), params.id("attn_qk_b"))?;
    let v = g.linear(ln2, params.id("attn_v_w"), params.id("attn_v_b"))?;

    let rho_q = g.softmax(qk, 1)?; // over features
    let rho_k = g.softmax(qk, 0)?; // over tokens
    let kt = g.transpose2d(rho_k)?;
    let kv = g.matmul(kt, v)?;
    let e = g.matmul(rho_q, kv)?;

    let x = g.concat_last(ln1, ln2)?;
    let eo = g.linear(e, params.id("attn_out_w"), params.id("attn_out_b"))?;
    let eln = g.layer_norm(eo, params.id("attn_ln_e_gamma"), params.id("attn_ln_e_beta"), eps)?;
    let t = g.add(x, eln)?;

    let tln = g.layer_norm(t, params.id("attn_ln_t_gamma"), params.id("attn_ln_t_beta"), eps)?;
    let ffn = mix_ffn(g, params, tln, cfg)?;
    let out = g.add(t, ffn)?;
    Ok(out)
}

fn decode_stream<T: Scalar>(
    g: &mut Graph<T>,
    params: &BoundParams,
    stream: ValueId,
    pixel_feats: ValueId,
    cfg: &ModelConfig,
) -> Result<ValueId, ModelError> {
    let (h, w) = (cfg.image_h, cfg.image_w);
    let width = g.value(stream).shape()[1];
    let grid = g.reshape(stream, &[cfg.grid_h(), cfg.grid_w(), width])?;
    let up = g.resize_bilinear(grid, h, w)?;
    let up = g.scale(up, T::from_f64(TOKEN_CONTEXT_SCALE));
    let cat = g.concat_last(up, pixel_feats)?;
    let cat_width = g.value(cat).shape()[2];
    let rows = g.reshape(cat, &[h * w, cat_width])?;
    let logits = g.linear(rows, params.id("head_w"), params.id("head_b"))?;
    let out = g.reshape(logits, &[h, w, cfg.num_clusters])?;
    Ok(out)
}

/// Everything downstream code needs from one forward pass.
pub struct ForwardPass {
    /// Soft prediction map `[h,w,k]`; rows sum to 1.
    pub p: ValueId,
    /// L2-normalized tokens of the original image.
    pub image_tokens: ValueId,
    /// L2-normalized tokens of the augmented view.
    pub aug_tokens: ValueId,
    /// Per-stream logit maps before fusion (diagnostics).
    pub stream_logits: (ValueId, ValueId),
}

/// Runs both streams with shared weights and fuses their logit maps by
/// summation into the soft prediction map.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    params: &BoundParams,
    img: &Tensor<T>,
    aug: &Tensor<T>,
    cfg: &ModelConfig,
) -> Result<ForwardPass, ModelError> {
    cfg.validate()?;
    for t in [img, aug] {
        let expect = [cfg.image_h, cfg.image_w, cfg.in_channels];
        if t.shape() != expect {
            return Err(ModelError::InputShape {
                got: t.shape().to_vec(),
                h: cfg.image_h,
                w: cfg.image_w,
                c: cfg.in_channels,
            });
        }
    }
    let img_id = g.constant(img.clone());
    let aug_id = g.constant(aug.clone());

    let feats_img = pixel_features(g, params, img_id, cfg)?;
    let feats_aug = pixel_features(g, params, aug_id, cfg)?;
    let image_tokens = patch_embed_normalize(g, params, feats_img, cfg)?;
    let aug_tokens = patch_embed_normalize(g, params, feats_aug, cfg)?;

    let alpha = T::from_f64(cfg.alpha);
    let i_scaled = g.scale(image_tokens, alpha);
    let a_scaled = g.scale(aug_tokens, alpha);
    let stream_img = cross_attention(g, params, i_scaled, aug_tokens, cfg)?;
    let stream_aug = cross_attention(g, params, a_scaled, image_tokens, cfg)?;

    let logits_img = decode_stream(g, params, stream_img, feats_img, cfg)?;
    let logits_aug = decode_stream(g, params, stream_aug, feats_aug, cfg)?;
    let fused = g.add(logits_img, logits_aug)?;
    // center each cluster channel over the image before the softmax:
    // a channel with zero spatial mean cannot win everywhere, so the
    // self-labelling loss cannot collapse the map to one cluster, while
    // weak channels can still die out and clusters merge
    let normed = if std::env::var("HEAD_NONE").is_ok() {
        fused
    } else {
        g.center_channels(fused)?
    };
    let p = g.softmax(normed, 2)?;

    Ok(ForwardPass {
        p,
        image_tokens,
        aug_tokens,
        stream_logits: (logits_img, logits_aug),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            in_channels: 3,
            feat_channels: 8,
            patch_size: 4,
            token_dim: 8,
            num_clusters: 4,
            alpha: 3.0,
            image_h: 16,
            image_w: 16,
        }
    }

    fn rand_image(cfg: &ModelConfig, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[cfg.image_h, cfg.image_w, cfg.in_channels], |_| {
            rng.random_range(0.0..1.0)
        })
    }

    #[test]
    fn forward_shapes_and_distribution() {
        let cfg = small_cfg();
        let params = ParameterSet::<f64>::init(&cfg, 0);
        let img = rand_image(&cfg, 1);
        let aug = rand_image(&cfg, 2);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fwd = forward(&mut g, &bound, &img, &aug, &cfg).unwrap();

        let p = g.value(fwd.p);
        assert_eq!(p.shape(), &[16, 16, 4]);
        for row in p.data().chunks_exact(4) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        let toks = g.value(fwd.image_tokens);
        assert_eq!(toks.shape(), &[16, 8]); // (16/4)^2 tokens
        for row in toks.data().chunks_exact(8) {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_view_with_unit_alpha_makes_streams_identical() {
        let mut cfg = small_cfg();
        cfg.alpha = 1.0;
        let params = ParameterSet::<f64>::init(&cfg, 3);
        let img = rand_image(&cfg, 4);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fwd = forward(&mut g, &bound, &img, &img, &cfg).unwrap();
        let (l1, l2) = fwd.stream_logits;
        assert!(g.value(l1).max_abs_diff(g.value(l2)) < 1e-10);
    }

    #[test]
    fn encode_is_shared_between_streams() {
        let cfg = small_cfg();
        let params = ParameterSet::<f64>::init(&cfg, 5);
        let img = rand_image(&cfg, 6);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let a = g.constant(img.clone());
        let b = g.constant(img.clone());
        let ea = encode(&mut g, &bound, a).unwrap();
        let eb = encode(&mut g, &bound, b).unwrap();
        assert_eq!(g.value(ea).shape(), &[16, 16, 8]);
        assert!(g.value(ea).max_abs_diff(g.value(eb)) < 1e-15);
    }

    #[test]
    fn project_with_zero_second_linear_is_layer_norm_of_input() {
        let cfg = small_cfg();
        let mut params = ParameterSet::<f64>::init(&cfg, 7);
        *params.get_mut("proj_lin2_w") = Tensor::zeros(&[8, 8]);
        *params.get_mut("proj_lin2_b") = Tensor::zeros(&[8]);
        let rows = Tensor::from_fn(&[5, 8], |i| (i as f64 * 0.37).sin());
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let x = g.constant(rows.clone());
        let y = project(&mut g, &bound, x).unwrap();
        let gamma = g.constant(Tensor::filled(&[8], 1.0));
        let beta = g.constant(Tensor::zeros(&[8]));
        let xc = g.constant(rows);
        let ln = g.layer_norm(xc, gamma, beta, LN_EPS).unwrap();
        assert!(g.value(y).max_abs_diff(g.value(ln)) < 1e-12);
    }

    #[test]
    fn token_normalization_ignores_feature_scale() {
        // with a zero patch bias the linear map is positively homogeneous,
        // so scaling the features cannot change the normalized tokens
        let cfg = small_cfg();
        let params = ParameterSet::<f64>::init(&cfg, 8);
        assert!(params.get("patch_b").data().iter().all(|&v| v == 0.0));
        let feat = Tensor::from_fn(&[16, 16, 8], |i| (i as f64 * 0.11).cos());
        let scaled = feat.map(|v| v * 10.0);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let f1 = g.constant(feat);
        let f2 = g.constant(scaled);
        let t1 = patch_embed_normalize(&mut g, &bound, f1, &cfg).unwrap();
        let t2 = patch_embed_normalize(&mut g, &bound, f2, &cfg).unwrap();
        assert!(g.value(t1).max_abs_diff(g.value(t2)) < 1e-9);
    }

    #[test]
    fn cross_attention_is_asymmetric_in_its_arguments() {
        let cfg = small_cfg();
        let params = ParameterSet::<f64>::init(&cfg, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mk = |rng: &mut ChaCha8Rng| {
            let raw = Tensor::from_fn(&[16, 8], |_| rng.random_range(-1.0..1.0));
            crate::numerics::kernels::l2_normalize_rows(&raw, 1e-12)
        };
        let x1 = mk(&mut rng);
        let x2 = mk(&mut rng);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let a = g.constant(x1.clone());
        let b = g.constant(x2.clone());
        let fwd_ab = cross_attention(&mut g, &bound, a, b, &cfg).unwrap();
        let fwd_ba = cross_attention(&mut g, &bound, b, a, &cfg).unwrap();
        assert_eq!(g.value(fwd_ab).shape(), &[16, 16]);
        assert!(g.value(fwd_ab).max_abs_diff(g.value(fwd_ba)) > 1e-6);
    }

    #[test]
    fn linear_attention_matches_three_loop_oracle() {
        let cfg = small_cfg();
        let params = ParameterSet::<f64>::init(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x1 = Tensor::from_fn(&[16, 8], |_| rng.random_range(-1.0..1.0));
        let x2 = Tensor::from_fn(&[16, 8], |_| rng.random_range(-1.0..1.0));

        // rebuild E = softmax_rows(Q) · (softmax_cols(K)ᵀ · V) by hand
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let eps = LN_EPS;
        let a = g.constant(x1);
        let b = g.constant(x2);
        let ln1 = g
            .layer_norm(a, bound.id("attn_ln_in_gamma"), bound.id("attn_ln_in_beta"), eps)
            .unwrap();
        let ln2 = g
            .layer_norm(b, bound.id("attn_ln_in_gamma"), bound.id("attn_ln_in_beta"), eps)
            .unwrap();
        let qk = g.linear(ln1, bound.id("attn_qk_w"), bound.id("attn_qk_b")).unwrap();
        let v = g.linear(ln2, bound.id("attn_v_w"), bound.id("attn_v_b")).unwrap();
        let rho_q = g.softmax(qk, 1).unwrap();
        let rho_k = g.softmax(qk, 0).unwrap();
        let kt = g.transpose2d(rho_k).unwrap();
        let kv = g.matmul(kt, v).unwrap();
        let e = g.matmul(rho_q, kv).unwrap();

        let (n, d) = (16usize, 8usize);
        let sq = g.value(rho_q).clone();
        let sk = g.value(rho_k).clone();
        let vv = g.value(v).clone();
        let mut expect = Tensor::<f64>::zeros(&[n, d]);
        for i in 0..n {
            for j in 0..d {
                let mut acc = 0.0;
                for f in 0..d {
                    // (softmax_cols(K)ᵀ V)[f][j]
                    let mut inner = 0.0;
                    for t in 0..n {
                        inner += sk.at2(t, f) * vv.at2(t, j);
                    }
                    acc += sq.at2(i, f) * inner;
                }
                expect.data_mut()[i * d + j] = acc;
            }
        }
        assert!(g.value(e).max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn mix_ffn_zero_weights_give_zero_output() {
        let cfg = small_cfg();
        let mut params = ParameterSet::<f64>::init(&cfg, 13);
        *params.get_mut("ffn_lin2_w") = Tensor::zeros(&[64, 16]);
        *params.get_mut("ffn_lin2_b") = Tensor::zeros(&[16]);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let x = g.constant(Tensor::from_fn(&[16, 16], |i| (i as f64).sin()));
        let y = mix_ffn(&mut g, &bound, x, &cfg).unwrap();
        assert_eq!(g.value(y).shape(), &[16, 16]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_examples() {
        let p = Tensor::new(vec![1, 1, 3], vec![0.1, 0.7, 0.2]).unwrap();
        assert_eq!(predict_segmentation(&p).label(0, 0), 1);
        let tie = Tensor::new(vec![1, 1, 2], vec![0.5, 0.5]).unwrap();
        assert_eq!(predict_segmentation(&tie).label(0, 0), 0);
        let hot = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let seg = predict_segmentation(&hot);
        assert_eq!(seg.label(0, 0), 1);
        assert_eq!(seg.label(0, 1), 0);
    }

    #[test]
    fn argmax_invariant_under_positive_logit_scaling() {
        let cfg = small_cfg();
        let params = ParameterSet::<f64>::init(&cfg, 14);
        let img = rand_image(&cfg, 15);
        let aug = rand_image(&cfg, 16);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fwd = forward(&mut g, &bound, &img, &aug, &cfg).unwrap();
        let (l1, l2) = fwd.stream_logits;
        let fused = g.add(l1, l2).unwrap();
        let scaled = g.scale(fused, 3.7);
        let p1 = g.softmax(fused, 2).unwrap();
        let p2 = g.softmax(scaled, 2).unwrap();
        assert_eq!(
            predict_segmentation(g.value(p1)).labels(),
            predict_segmentation(g.value(p2)).labels()
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg();
        cfg.patch_size = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.num_clusters = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        assert!(small_cfg().validate().is_ok());
        let def = ModelConfig::for_image(3, 256);
        assert_eq!(def.patch_size, 32);
        assert_eq!(def.num_tokens(), 64);
    }

    #[test]
    fn input_shape_mismatch_is_reported() {
        let cfg = small_cfg();
        let params = ParameterSet::<f64>::init(&cfg, 17);
        let img = rand_image(&cfg, 18);
        let bad = Tensor::<f64>::zeros(&[8, 16, 3]);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        assert!(matches!(
            forward(&mut g, &bound, &img, &bad, &cfg),
            Err(ModelError::InputShape { .. })
        ));
    }
}
