//! Per-image self-supervised training loop.
//!
//! Each image gets its own freshly initialized model. One iteration is
//! forward → joint loss → backward → optimizer step; the loop early-stops
//! if the prediction collapses below a minimum number of distinct clusters
//! and keeps the last non-degenerate segmentation.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{make_augmented_view_with_rng, AugmentConfig, AugmentError};
use crate::imageio::ImageIoError;
use crate::losses::{boundary_edge_map, joint_loss, LossBreakdown, LossError, LossWeights};
use crate::metrics::BinaryMask;
use crate::model::{
    forward, predict_segmentation, ModelConfig, ModelError, ParameterSet, SegmentationMap,
};
use crate::numerics::{Graph, NumericsError, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Loss(#[from] LossError),

    #[error(transparent)]
    Augment(#[from] AugmentError),

    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("artifact write failed: {0}")]
    Artifact(#[from] ImageIoError),

    #[error("non-finite {term} loss at iteration {iteration}")]
    NonFinite {
        term: &'static str,
        iteration: usize,
    },

    #[error("train config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Adam with fixed β₁=0.9, β₂=0.999, ε=1e-8.
    Adam,
    /// Plain gradient descent.
    Sgd,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Everything one training session needs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Seeds parameter initialization.
    pub seed: u64,
    /// Early-stop floor on distinct clusters in the prediction.
    pub min_clusters: usize,
    /// Emit per-iteration artifacts every N iterations (0 = never).
    pub emit_every: usize,
    /// Where iteration artifacts go; required when `emit_every > 0`.
    pub artifact_dir: Option<PathBuf>,
    pub weights: LossWeights,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
}

impl TrainConfig {
    /// Defaults: 60 Adam iterations at lr 5e-3 with the standard loss
    /// weights, for a square image of the given side length.
    pub fn for_image(in_channels: usize, side: usize) -> Self {
        Self {
            iterations: 60,
            learning_rate: 5e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            min_clusters: 2,
            emit_every: 0,
            artifact_dir: None,
            weights: LossWeights::default(),
            model: ModelConfig::for_image(in_channels, side),
            augment: AugmentConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations == 0 {
            return Err(TrainError::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.min_clusters < 2 {
            return Err(TrainError::InvalidConfig(
                "min_clusters must be >= 2".into(),
            ));
        }
        if self.emit_every > 0 && self.artifact_dir.is_none() {
            return Err(TrainError::InvalidConfig(
                "emit_every > 0 requires an artifact directory".into(),
            ));
        }
        self.model.validate()?;
        self.augment.validate()?;
        self.weights.validate()?;
        Ok(())
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub joint: f64,
    pub ce: f64,
    pub clip: f64,
    pub boundary: f64,
    pub clusters: usize,
}

/// Per-iteration loss and cluster-count trace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    records: Vec<IterationRecord>,
}

impl TrainHistory {
    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line, in iteration order.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub params: ParameterSet<T>,
    pub history: TrainHistory,
    pub segmentation: SegmentationMap,
}

/// Trains a fresh model on one image and returns the final parameters,
/// the loss trace, and the resulting segmentation.
pub fn train_on_image<T: Scalar>(
    img: &Tensor<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    let mut params = ParameterSet::init(&cfg.model, cfg.seed);
    let mut opt = OptimizerState::new(&params);

    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.augment.seed);
    let mut aug = make_augmented_view_with_rng(img, &cfg.augment, &mut aug_rng);

    let mut history = TrainHistory::default();
    let mut last_good: Option<SegmentationMap> = None;
    let mut collapsed = false;

    for iteration in 1..=cfg.iterations {
        if cfg.augment.resample_each_iteration && iteration > 1 {
            aug = make_augmented_view_with_rng(img, &cfg.augment, &mut aug_rng);
        }
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fwd = forward(&mut g, &bound, img, &aug, &cfg.model)?;
        let (loss, breakdown) =
            joint_loss(&mut g, fwd.p, fwd.image_tokens, fwd.aug_tokens, &cfg.weights)?;
        check_finite(&breakdown, iteration)?;

        let seg = predict_segmentation(g.value(fwd.p));
        let clusters = seg.distinct_clusters();
        history.records.push(IterationRecord {
            iteration,
            joint: breakdown.total,
            ce: breakdown.ce,
            clip: breakdown.clip,
            boundary: breakdown.boundary,
            clusters,
        });

        if cfg.emit_every > 0 && iteration % cfg.emit_every == 0 {
            let dir = cfg.artifact_dir.as_ref().expect("validated");
            emit_iteration_artifacts(&seg, iteration, dir, cfg.weights.beta)?;
        }

        if clusters < cfg.min_clusters {
            collapsed = true;
            if last_good.is_none() {
                // collapse on the very first iteration: nothing earlier to keep
                last_good = Some(seg);
            }
            break;
        }
        last_good = Some(seg);

        let grads = g.backward(loss)?;
        opt.step(
            &mut params,
            bound.ids().iter().map(|&id| grads.get(id).expect("param grad")),
            cfg,
        );
    }

    let segmentation = if collapsed {
        last_good.expect("at least one iteration ran")
    } else {
        // fresh forward so the returned map reflects the post-update weights
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fwd = forward(&mut g, &bound, img, &aug, &cfg.model)?;
        predict_segmentation(g.value(fwd.p))
    };

    Ok(TrainOutcome {
        params,
        history,
        segmentation,
    })
}

/// Inference: one forward pass with the image itself as the second view.
pub fn segment<T: Scalar>(
    img: &Tensor<T>,
    params: &ParameterSet<T>,
    model: &ModelConfig,
) -> Result<SegmentationMap, TrainError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let fwd = forward(&mut g, &bound, img, img, model)?;
    Ok(predict_segmentation(g.value(fwd.p)))
}

/// Writes `iter_{n}_clusters.png` (indexed colors) and `iter_{n}_edges.png`
/// (white where the down/up reconstruction of the label map differs).
pub fn emit_iteration_artifacts(
    seg: &SegmentationMap,
    iteration: usize,
    out_dir: &Path,
    beta: usize,
) -> Result<(), ImageIoError> {
    let clusters_path = out_dir.join(format!("iter_{iteration}_clusters.png"));
    crate::imageio::save_indexed_png(seg, &clusters_path)?;

    let edges = boundary_edge_map(seg, beta);
    let mask = BinaryMask::new(seg.height(), seg.width(), edges);
    let edges_path = out_dir.join(format!("iter_{iteration}_edges.png"));
    crate::imageio::save_binary_png(&mask, &edges_path)?;
    Ok(())
}

fn check_finite(bd: &LossBreakdown, iteration: usize) -> Result<(), TrainError> {
    for (term, v) in [
        ("ce", bd.ce),
        ("clip", bd.clip),
        ("boundary", bd.boundary),
        ("joint", bd.total),
    ] {
        if !v.is_finite() {
            return Err(TrainError::NonFinite { term, iteration });
        }
    }
    Ok(())
}

/// Adam first/second moment buffers (unused for plain SGD).
struct OptimizerState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u32,
}

impl<T: Scalar> OptimizerState<T> {
    fn new(params: &ParameterSet<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step<'a>(
        &mut self,
        params: &mut ParameterSet<T>,
        grads: impl Iterator<Item = &'a Tensor<T>>,
        cfg: &TrainConfig,
    ) where
        T: 'a,
    {
        let lr = T::from_f64(cfg.learning_rate);
        match cfg.optimizer {
            Optimizer::Sgd => {
                for ((_, p), g) in params.iter_mut().zip(grads) {
                    for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv = *pv - lr * gv;
                    }
                }
            }
            Optimizer::Adam => {
                self.t += 1;
                let b1 = T::from_f64(ADAM_BETA1);
                let b2 = T::from_f64(ADAM_BETA2);
                let eps = T::from_f64(ADAM_EPS);
                let c1 = T::one() - T::from_f64(ADAM_BETA1.powi(self.t as i32));
                let c2 = T::one() - T::from_f64(ADAM_BETA2.powi(self.t as i32));
                for (((_, p), g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for (((pv, &gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut())
                    {
                        *mv = b1 * *mv + (T::one() - b1) * gv;
                        *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                        let mhat = *mv / c1;
                        let vhat = *vv / c2;
                        *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::for_image(3, 16);
        cfg.model.feat_channels = 8;
        cfg.model.token_dim = 8;
        cfg.model.num_clusters = 4;
        cfg.model.patch_size = 4;
        cfg.iterations = 3;
        cfg.weights.beta = 4;
        cfg.augment.blur_kernel_size = 3;
        cfg
    }

    fn tiny_image(seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[16, 16, 3], |i| {
            // two vertical halves plus noise, so clustering has signal
            let x = (i / 3) % 16;
            let base = if x < 8 { 0.2 } else { 0.8 };
            (base + rng.random_range(-0.05..0.05f64)).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn training_is_deterministic_under_fixed_seed() {
        let cfg = tiny_config();
        let img = tiny_image(1);
        let a = train_on_image(&img, &cfg).unwrap();
        let b = train_on_image(&img, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.segmentation, b.segmentation);
        for ((_, pa), (_, pb)) in a.params.iter().zip(b.params.iter()) {
            assert!(pa
                .data()
                .iter()
                .zip(pb.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn history_has_one_record_per_iteration() {
        let cfg = tiny_config();
        let img = tiny_image(2);
        let out = train_on_image(&img, &cfg).unwrap();
        assert_eq!(out.history.len(), cfg.iterations);
        for (i, rec) in out.history.records().iter().enumerate() {
            assert_eq!(rec.iteration, i + 1);
            assert!(rec.joint.is_finite());
            assert!(rec.clusters <= cfg.model.num_clusters);
        }
    }

    #[test]
    fn collapse_guard_stops_early() {
        let mut cfg = tiny_config();
        // an impossible floor forces the guard on the first iteration
        cfg.min_clusters = cfg.model.num_clusters + 1;
        let img = tiny_image(3);
        let out = train_on_image(&img, &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert!(out.history.records()[0].clusters < cfg.min_clusters);
    }

    #[test]
    fn segment_matches_training_result_under_identity_view() {
        let mut cfg = tiny_config();
        cfg.augment = AugmentConfig::identity(9);
        let img = tiny_image(4);
        let out = train_on_image(&img, &cfg).unwrap();
        let seg = segment(&img, &out.params, &cfg.model).unwrap();
        assert_eq!(seg, out.segmentation);
        // and inference is idempotent
        let seg2 = segment(&img, &out.params, &cfg.model).unwrap();
        assert_eq!(seg, seg2);
    }

    #[test]
    fn non_finite_input_aborts_with_term_and_iteration() {
        let cfg = tiny_config();
        let mut img = tiny_image(5);
        img.data_mut()[0] = f64::NAN;
        let err = train_on_image(&img, &cfg).unwrap_err();
        match err {
            TrainError::NonFinite { iteration, .. } => assert_eq!(iteration, 1),
            other => panic!("expected NonFinite, got {other}"),
        }
    }

    #[test]
    fn sgd_also_makes_progress() {
        let mut cfg = tiny_config();
        cfg.optimizer = Optimizer::Sgd;
        cfg.learning_rate = 0.1;
        cfg.iterations = 5;
        let img = tiny_image(6);
        let out = train_on_image(&img, &cfg).unwrap();
        let first = out.history.records().first().unwrap().joint;
        let last = out.history.records().last().unwrap().joint;
        assert!(last <= first);
    }

    #[test]
    fn history_roundtrips_through_jsonl() {
        let cfg = tiny_config();
        let img = tiny_image(7);
        let out = train_on_image(&img, &cfg).unwrap();
        let mut buf = Vec::new();
        out.history.write_jsonl(&mut buf).unwrap();
        let parsed: Vec<IterationRecord> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed, out.history.records());
    }
}
