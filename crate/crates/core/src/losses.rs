//! Training objectives: clustering cross-entropy, cross-modal contrastive
//! alignment, edge refinement, and their weighted combination.

use thiserror::Error;

use crate::numerics::{kernels, Graph, NumericsError, Scalar, Tensor, ValueId, LOG_GUARD};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("clip loss expects L2-normalized rows: row {row} of {which} has norm {norm}")]
    NonNormalizedRows {
        which: &'static str,
        row: usize,
        norm: f64,
    },

    #[error("loss weights: {0}")]
    InvalidWeights(String),

    #[error("boundary loss needs beta <= min(h, w): beta={beta}, map is {h}x{w}")]
    BadBeta { beta: usize, h: usize, w: usize },
}

/// Weights of the joint objective plus the knobs of its individual terms.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    /// Weight of the clustering cross-entropy term.
    pub lambda_ce: f64,
    /// Weight of the cross-modal contrastive term.
    pub lambda_clip: f64,
    /// Weight of the edge refinement term.
    pub lambda_boundary: f64,
    /// Contrastive temperature.
    pub temperature: f64,
    /// Downsampling factor of the edge refinement term.
    pub beta: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ce: 2.5,
            lambda_clip: 0.5,
            lambda_boundary: 0.5,
            temperature: 0.5,
            beta: 16,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let ls = [self.lambda_ce, self.lambda_clip, self.lambda_boundary];
        if ls.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return Err(LossError::InvalidWeights(format!(
                "lambdas must be nonnegative and finite, got {ls:?}"
            )));
        }
        if ls.iter().all(|&l| l == 0.0) {
            return Err(LossError::InvalidWeights(
                "at least one lambda must be positive".into(),
            ));
        }
        if self.temperature <= 0.0 {
            return Err(LossError::InvalidWeights(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.beta == 0 {
            return Err(LossError::InvalidWeights("beta must be >= 1".into()));
        }
        Ok(())
    }
}

/// Weighted per-term contributions of one joint-loss evaluation.
/// Deactivated terms (zero lambda) are not evaluated and report exactly 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub clip: f64,
    pub boundary: f64,
}

// ── clustering cross-entropy ─────────────────────────────────────────

/// Self-labelling cross-entropy against the one-hot argmax of `p` itself.
///
/// The target is a gradient barrier (hard assignments do not backpropagate),
/// so this equals the mean over pixels of `−log(max_k p + guard)` while the
/// gradient flows only through the prediction inside the log.
pub fn clustering_ce<T: Scalar>(g: &mut Graph<T>, p: ValueId) -> Result<ValueId, LossError> {
    let target = g.hard_one_hot(p)?;
    clustering_ce_against(g, p, target)
}

/// As [`clustering_ce`] but with an externally supplied (frozen) one-hot
/// target, used by the gradient checker to keep the target constant while
/// probing.
pub fn clustering_ce_with_target<T: Scalar>(
    g: &mut Graph<T>,
    p: ValueId,
    target: &Tensor<T>,
) -> Result<ValueId, LossError> {
    let t = g.constant(target.clone());
    clustering_ce_against(g, p, t)
}

fn clustering_ce_against<T: Scalar>(
    g: &mut Graph<T>,
    p: ValueId,
    target: ValueId,
) -> Result<ValueId, LossError> {
    let shape = g.value(p).shape().to_vec();
    let pixels: usize = shape[..shape.len() - 1].iter().product();
    let guarded = g.add_scalar(p, T::from_f64(LOG_GUARD));
    let logs = g.log(guarded);
    let masked = g.mul(target, logs)?;
    let sum = g.sum_all(masked);
    Ok(g.scale(sum, T::from_f64(-1.0 / pixels as f64)))
}

// ── cross-modal contrastive loss ─────────────────────────────────────

/// Symmetric contrastive alignment of the two token sequences.
///
/// `Logit = I·Aᵀ/T`; the soft target is the row-softmax of the averaged
/// self-similarities `(I·Iᵀ + A·Aᵀ)/2T`, treated as a constant. The loss
/// averages the row-wise and column-wise cross-entropies.
pub fn clip_loss<T: Scalar>(
    g: &mut Graph<T>,
    tokens_image: ValueId,
    tokens_aug: ValueId,
    temperature: f64,
) -> Result<ValueId, LossError> {
    check_normalized(g.value(tokens_image), "image tokens")?;
    check_normalized(g.value(tokens_aug), "augmented tokens")?;
    let target = clip_target(g.value(tokens_image), g.value(tokens_aug), temperature);
    clip_loss_with_target(g, tokens_image, tokens_aug, &target, temperature)
}

/// The constant target matrix of [`clip_loss`], computed from token values.
pub fn clip_target<T: Scalar>(i: &Tensor<T>, a: &Tensor<T>, temperature: f64) -> Tensor<T> {
    let gram_i = kernels::matmul_nt(i, i);
    let gram_a = kernels::matmul_nt(a, a);
    let half_t = T::from_f64(0.5 / temperature);
    let avg = kernels::zip(&gram_i, &gram_a, |x, y| (x + y) * half_t);
    kernels::softmax(&avg, 1)
}

/// As [`clip_loss`] with an externally supplied (frozen) target.
pub fn clip_loss_with_target<T: Scalar>(
    g: &mut Graph<T>,
    tokens_image: ValueId,
    tokens_aug: ValueId,
    target: &Tensor<T>,
    temperature: f64,
) -> Result<ValueId, LossError> {
    let at = g.transpose2d(tokens_aug)?;
    let sim = g.matmul(tokens_image, at)?;
    let logit = g.scale(sim, T::from_f64(1.0 / temperature));
    let logit_t = g.transpose2d(logit)?;
    let target_id = g.constant(target.clone());
    let target_t = g.constant(kernels::transpose2d(target));

    let ce_rows = soft_cross_entropy(g, logit, target_id)?;
    let ce_cols = soft_cross_entropy(g, logit_t, target_t)?;
    let sum = g.add(ce_rows, ce_cols)?;
    Ok(g.scale(sum, T::from_f64(0.5)))
}

/// Mean over rows of `−Σ_j target·log softmax(logits)`.
fn soft_cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    logits: ValueId,
    target: ValueId,
) -> Result<ValueId, LossError> {
    let rows = g.value(logits).shape()[0];
    let sm = g.softmax(logits, 1)?;
    let guarded = g.add_scalar(sm, T::from_f64(LOG_GUARD));
    let logs = g.log(guarded);
    let masked = g.mul(target, logs)?;
    let sum = g.sum_all(masked);
    Ok(g.scale(sum, T::from_f64(-1.0 / rows as f64)))
}

fn check_normalized<T: Scalar>(tokens: &Tensor<T>, which: &'static str) -> Result<(), LossError> {
    let d = tokens.shape()[1];
    for (row, chunk) in tokens.data().chunks_exact(d).enumerate() {
        let norm = chunk
            .iter()
            .map(|&v| (v * v).into_f64())
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(LossError::NonNormalizedRows { which, row, norm });
        }
    }
    Ok(())
}

// ── edge refinement loss ─────────────────────────────────────────────

/// Mean absolute discrepancy between the soft map and its
/// downsample-then-upsample counterpart.
///
/// The formula is applied to the soft prediction channel-wise (the hard map
/// has zero gradient almost everywhere); it coincides with the hard-map
/// version whenever the prediction is near one-hot. The raw absolute sum is
/// normalized by `h·w·k` so the weight is resolution-independent.
pub fn boundary_loss<T: Scalar>(
    g: &mut Graph<T>,
    p: ValueId,
    beta: usize,
) -> Result<ValueId, LossError> {
    let shape = g.value(p).shape().to_vec();
    let (h, w, k) = (shape[0], shape[1], shape[2]);
    if beta == 0 || beta > h || beta > w {
        return Err(LossError::BadBeta { beta, h, w });
    }
    let down = g.resize_bilinear(p, (h / beta).max(1), (w / beta).max(1))?;
    let up = g.resize_bilinear(down, h, w)?;
    let diff = g.sub(up, p)?;
    let abs = g.abs(diff);
    let sum = g.sum_all(abs);
    Ok(g.scale(sum, T::from_f64(1.0 / (h * w * k) as f64)))
}

/// The edge map of a hard segmentation: pixels where the
/// downsample-then-upsample reconstruction of the label image differs from
/// the original. Flat regions reproduce exactly, so "nonzero" is an exact
/// test.
pub fn boundary_edge_map(labels: &crate::model::SegmentationMap, beta: usize) -> Vec<bool> {
    let (h, w) = (labels.height(), labels.width());
    let as_f64 = Tensor::<f64>::from_fn(&[h, w, 1], |i| labels.labels()[i] as f64);
    let down = kernels::resize_bilinear(&as_f64, (h / beta).max(1), (w / beta).max(1));
    let up = kernels::resize_bilinear(&down, h, w);
    up.data()
        .iter()
        .zip(as_f64.data())
        .map(|(&a, &b)| a != b)
        .collect()
}

// ── joint objective ──────────────────────────────────────────────────

/// `λ₁·ce + λ₂·clip + λ₃·boundary`, with the per-term weighted values
/// reported for logging. Terms with zero weight are skipped entirely.
pub fn joint_loss<T: Scalar>(
    g: &mut Graph<T>,
    p: ValueId,
    tokens_image: ValueId,
    tokens_aug: ValueId,
    weights: &LossWeights,
) -> Result<(ValueId, LossBreakdown), LossError> {
    joint_loss_inner(g, p, tokens_image, tokens_aug, weights, None)
}

/// Frozen targets for gradient checking the joint objective: both
/// self-generated labels are held at their base-point values so finite
/// differences see a smooth function.
pub struct FrozenTargets<T> {
    pub ce_one_hot: Tensor<T>,
    pub clip_target: Tensor<T>,
}

impl<T: Scalar> FrozenTargets<T> {
    pub fn from_values(p: &Tensor<T>, i: &Tensor<T>, a: &Tensor<T>, temperature: f64) -> Self {
        let k = *p.shape().last().unwrap();
        let mut one_hot = vec![T::zero(); p.numel()];
        for (row_in, row_out) in p
            .data()
            .chunks_exact(k)
            .zip(one_hot.chunks_exact_mut(k))
        {
            let mut best = 0;
            for (j, &v) in row_in.iter().enumerate() {
                if v > row_in[best] {
                    best = j;
                }
            }
            row_out[best] = T::one();
        }
        Self {
            ce_one_hot: Tensor::new(p.shape().to_vec(), one_hot).expect("one-hot shape"),
            clip_target: clip_target(i, a, temperature),
        }
    }
}

/// As [`joint_loss`] with externally frozen targets.
pub fn joint_loss_with_frozen_targets<T: Scalar>(
    g: &mut Graph<T>,
    p: ValueId,
    tokens_image: ValueId,
    tokens_aug: ValueId,
    weights: &LossWeights,
    frozen: &FrozenTargets<T>,
) -> Result<(ValueId, LossBreakdown), LossError> {
    joint_loss_inner(g, p, tokens_image, tokens_aug, weights, Some(frozen))
}

fn joint_loss_inner<T: Scalar>(
    g: &mut Graph<T>,
    p: ValueId,
    tokens_image: ValueId,
    tokens_aug: ValueId,
    weights: &LossWeights,
    frozen: Option<&FrozenTargets<T>>,
) -> Result<(ValueId, LossBreakdown), LossError> {
    weights.validate()?;
    let mut total: Option<ValueId> = None;
    let mut breakdown = LossBreakdown {
        total: 0.0,
        ce: 0.0,
        clip: 0.0,
        boundary: 0.0,
    };
    let accumulate = |g: &mut Graph<T>,
                          total: &mut Option<ValueId>,
                          term: ValueId,
                          lambda: f64|
     -> Result<f64, LossError> {
        let weighted = g.scale(term, T::from_f64(lambda));
        *total = Some(match *total {
            None => weighted,
            Some(acc) => g.add(acc, weighted)?,
        });
        Ok(g.value(weighted).item().into_f64())
    };

    if weights.lambda_ce > 0.0 {
        let term = match frozen {
            Some(f) => clustering_ce_with_target(g, p, &f.ce_one_hot)?,
            None => clustering_ce(g, p)?,
        };
        breakdown.ce = accumulate(g, &mut total, term, weights.lambda_ce)?;
    }
    if weights.lambda_clip > 0.0 {
        let term = match frozen {
            Some(f) => clip_loss_with_target(
                g,
                tokens_image,
                tokens_aug,
                &f.clip_target,
                weights.temperature,
            )?,
            None => clip_loss(g, tokens_image, tokens_aug, weights.temperature)?,
        };
        breakdown.clip = accumulate(g, &mut total, term, weights.lambda_clip)?;
    }
    if weights.lambda_boundary > 0.0 {
        let term = boundary_loss(g, p, weights.beta)?;
        breakdown.boundary = accumulate(g, &mut total, term, weights.lambda_boundary)?;
    }
    let total = total.expect("at least one active term");
    breakdown.total = g.value(total).item().into_f64();
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Random valid distribution map.
    fn random_p(h: usize, w: usize, k: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Tensor::from_fn(&[h, w, k], |_| rng.random_range(-2.0..2.0));
        kernels::softmax(&raw, 2)
    }

    fn unit_rows(n: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Tensor::from_fn(&[n, d], |_| rng.random_range(-1.0..1.0));
        kernels::l2_normalize_rows(&raw, 0.0)
    }

    #[test]
    fn ce_is_zero_for_one_hot_maps() {
        let mut p = Tensor::<f64>::zeros(&[4, 4, 3]);
        for px in 0..16 {
            p.data_mut()[px * 3 + px % 3] = 1.0;
        }
        let mut g = Graph::new();
        let pid = g.leaf(p);
        let loss = clustering_ce(&mut g, pid).unwrap();
        assert!(g.value(loss).item().abs() < 1e-9);
    }

    #[test]
    fn ce_of_uniform_map_is_log_k() {
        let k = 5;
        let p = Tensor::<f64>::filled(&[3, 3, k], 1.0 / k as f64);
        let mut g = Graph::new();
        let pid = g.leaf(p);
        let loss = clustering_ce(&mut g, pid).unwrap();
        assert!((g.value(loss).item() - (k as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn ce_equals_mean_neg_log_rowmax() {
        for seed in 0..20 {
            let p = random_p(6, 5, 4, seed);
            let mut g = Graph::new();
            let pid = g.leaf(p.clone());
            let loss = clustering_ce(&mut g, pid).unwrap();

            let mut acc = 0.0;
            for row in p.data().chunks_exact(4) {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                acc += -(mx + LOG_GUARD).ln();
            }
            let expect = acc / 30.0;
            assert!((g.value(loss).item() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_gradient_does_not_flow_through_target() {
        let p = random_p(3, 3, 3, 9);
        let mut g = Graph::new();
        let pid = g.leaf(p);
        let loss = clustering_ce(&mut g, pid).unwrap();
        assert_eq!(g.barrier_ops_on_path(loss), vec!["hard_one_hot"]);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(pid).unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn clip_orthonormal_identity_matches_gram_oracle() {
        // I = A = 4 orthonormal rows => Gram = Id, so the loss is the mean
        // row entropy of softmax(Id/T)
        let n = 4;
        let temperature = 0.5;
        let eye = Tensor::<f64>::from_fn(&[n, n], |i| if i % (n + 1) == 0 { 1.0 } else { 0.0 });
        let mut g = Graph::new();
        let i = g.leaf(eye.clone());
        let a = g.leaf(eye.clone());
        let loss = clip_loss(&mut g, i, a, temperature).unwrap();

        let sm = kernels::softmax(&eye.map(|v| v / temperature), 1);
        let entropy: f64 = sm
            .data()
            .chunks_exact(n)
            .map(|row| -row.iter().map(|&s| s * s.ln()).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        assert!((g.value(loss).item() - entropy).abs() < 1e-9);
    }

    #[test]
    fn clip_invariant_under_simultaneous_row_permutation() {
        let i = unit_rows(6, 4, 20);
        let a = unit_rows(6, 4, 21);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permute = |t: &Tensor<f64>| {
            Tensor::<f64>::from_fn(&[6, 4], |idx| {
                let (r, c) = (idx / 4, idx % 4);
                t.at2(perm[r], c)
            })
        };
        let mut g = Graph::new();
        let (i1, a1) = (g.leaf(i.clone()), g.leaf(a.clone()));
        let l1 = clip_loss(&mut g, i1, a1, 0.5).unwrap();
        let (i2, a2) = (g.leaf(permute(&i)), g.leaf(permute(&a)));
        let l2 = clip_loss(&mut g, i2, a2, 0.5).unwrap();
        assert!((g.value(l1).item() - g.value(l2).item()).abs() < 1e-9);
    }

    #[test]
    fn clip_single_token_is_zero() {
        let one = Tensor::<f64>::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let (i, a) = (g.leaf(one.clone()), g.leaf(one));
        let loss = clip_loss(&mut g, i, a, 0.5).unwrap();
        assert!(g.value(loss).item().abs() < 1e-9);
    }

    #[test]
    fn clip_rejects_unnormalized_rows() {
        let bad = Tensor::<f64>::filled(&[3, 4], 0.9);
        let good = unit_rows(3, 4, 22);
        let mut g = Graph::new();
        let (i, a) = (g.leaf(bad), g.leaf(good));
        let err = clip_loss(&mut g, i, a, 0.5).unwrap_err();
        assert!(matches!(err, LossError::NonNormalizedRows { .. }));
    }

    #[test]
    fn boundary_zero_for_constant_maps() {
        let p = Tensor::<f64>::filled(&[32, 32, 3], 1.0 / 3.0);
        let mut g = Graph::new();
        let pid = g.leaf(p);
        let loss = boundary_loss(&mut g, pid, 16).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn boundary_nonnegative_on_random_maps() {
        for seed in 0..10 {
            let p = random_p(16, 16, 3, 100 + seed);
            let mut g = Graph::new();
            let pid = g.leaf(p);
            let loss = boundary_loss(&mut g, pid, 4).unwrap();
            assert!(g.value(loss).item() >= 0.0);
        }
    }

    #[test]
    fn boundary_vertical_edge_matches_loop_oracle_and_stays_local() {
        // two-cluster map with a sharp vertical edge at column 8
        let (h, w, k, beta) = (16usize, 16usize, 2usize, 4usize);
        let p = Tensor::<f64>::from_fn(&[h, w, k], |idx| {
            let x = (idx / k) % w;
            let c = idx % k;
            if (x < 8) == (c == 0) {
                1.0
            } else {
                0.0
            }
        });
        let mut g = Graph::new();
        let pid = g.leaf(p.clone());
        let loss = boundary_loss(&mut g, pid, beta).unwrap();

        // independent scalar-loop oracle of the same down/up formula
        let bil = |src: &Tensor<f64>, oh: usize, ow: usize| -> Tensor<f64> {
            let (sh, sw, sc) = (src.shape()[0], src.shape()[1], src.shape()[2]);
            Tensor::<f64>::from_fn(&[oh, ow, sc], |idx| {
                let c = idx % sc;
                let ox = (idx / sc) % ow;
                let oy = idx / (sc * ow);
                let fy = ((oy as f64 + 0.5) * sh as f64 / oh as f64 - 0.5)
                    .clamp(0.0, (sh - 1) as f64);
                let fx = ((ox as f64 + 0.5) * sw as f64 / ow as f64 - 0.5)
                    .clamp(0.0, (sw - 1) as f64);
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(sh - 1), (x0 + 1).min(sw - 1));
                let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                let top = src.at3(y0, x0, c) + tx * (src.at3(y0, x1, c) - src.at3(y0, x0, c));
                let bot = src.at3(y1, x0, c) + tx * (src.at3(y1, x1, c) - src.at3(y1, x0, c));
                top + ty * (bot - top)
            })
        };
        let up = bil(&bil(&p, h / beta, w / beta), h, w);
        let mut acc = 0.0;
        let mut far_from_edge_hits = 0;
        for y in 0..h {
            for x in 0..w {
                for c in 0..k {
                    let d = (up.at3(y, x, c) - p.at3(y, x, c)).abs();
                    acc += d;
                    if d != 0.0 && (x as isize - 8).unsigned_abs() > beta {
                        far_from_edge_hits += 1;
                    }
                }
            }
        }
        let expect = acc / (h * w * k) as f64;
        let got = g.value(loss).item();
        assert!(got > 0.0);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        assert_eq!(far_from_edge_hits, 0, "discrepancy leaked beyond beta");
    }

    #[test]
    fn joint_with_only_ce_weight_equals_ce() {
        let p = random_p(5, 5, 3, 200);
        let i = unit_rows(4, 4, 201);
        let a = unit_rows(4, 4, 202);
        let mut g = Graph::new();
        let (pid, iid, aid) = (g.leaf(p), g.leaf(i), g.leaf(a));
        let w = LossWeights {
            lambda_ce: 1.0,
            lambda_clip: 0.0,
            lambda_boundary: 0.0,
            ..LossWeights::default()
        };
        let (total, bd) = joint_loss(&mut g, pid, iid, aid, &w).unwrap();
        let ce = clustering_ce(&mut g, pid).unwrap();
        assert_eq!(g.value(total).item(), g.value(ce).item());
        assert_eq!(bd.clip, 0.0);
        assert_eq!(bd.boundary, 0.0);
    }

    #[test]
    fn joint_matches_weighted_sum_of_separate_terms() {
        let p = random_p(8, 8, 3, 210);
        let i = unit_rows(4, 6, 211);
        let a = unit_rows(4, 6, 212);
        let w = LossWeights {
            beta: 4,
            ..LossWeights::default()
        };
        let mut g = Graph::new();
        let (pid, iid, aid) = (g.leaf(p), g.leaf(i), g.leaf(a));
        let (total, bd) = joint_loss(&mut g, pid, iid, aid, &w).unwrap();

        let ce = clustering_ce(&mut g, pid).unwrap();
        let cl = clip_loss(&mut g, iid, aid, w.temperature).unwrap();
        let bl = boundary_loss(&mut g, pid, w.beta).unwrap();
        let expect = 2.5 * g.value(ce).item() + 0.5 * g.value(cl).item() + 0.5 * g.value(bl).item();
        assert!((g.value(total).item() - expect).abs() < 1e-12);
        assert!((bd.total - expect).abs() < 1e-12);
    }

    #[test]
    fn joint_is_linear_in_lambdas() {
        let p = random_p(8, 8, 3, 220);
        let i = unit_rows(4, 6, 221);
        let a = unit_rows(4, 6, 222);
        let w1 = LossWeights {
            beta: 4,
            ..LossWeights::default()
        };
        let w2 = LossWeights {
            lambda_ce: 5.0,
            lambda_clip: 1.0,
            lambda_boundary: 1.0,
            ..w1
        };
        let mut g = Graph::new();
        let (pid, iid, aid) = (g.leaf(p), g.leaf(i), g.leaf(a));
        let (t1, _) = joint_loss(&mut g, pid, iid, aid, &w1).unwrap();
        let (t2, _) = joint_loss(&mut g, pid, iid, aid, &w2).unwrap();
        assert!((2.0 * g.value(t1).item() - g.value(t2).item()).abs() < 1e-12);
    }

    #[test]
    fn all_zero_weights_rejected() {
        let w = LossWeights {
            lambda_ce: 0.0,
            lambda_clip: 0.0,
            lambda_boundary: 0.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
