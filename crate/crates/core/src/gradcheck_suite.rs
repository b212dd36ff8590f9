//! Finite-difference verification of every differentiable primitive and of
//! the end-to-end joint objective.
//!
//! The suite backs the `gradcheck` command: each primitive is probed at
//! five random points for each of its differentiable inputs, and the joint
//! loss is differentiated against every model parameter on a small
//! configuration with frozen self-labelling targets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::losses::{joint_loss_with_frozen_targets, FrozenTargets, LossWeights};
use crate::model::{forward, ModelConfig, ParameterSet};
use crate::numerics::{Graph, NumericsError, Tensor, ValueId};
use crate::trainer::TrainError;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

/// Names of all differentiable primitives, in report order.
pub const PRIMITIVE_OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "abs",
    "log",
    "gelu",
    "matmul",
    "transpose2d",
    "linear",
    "conv2d",
    "depthwise_conv2d",
    "batch_norm",
    "center_channels",
    "layer_norm",
    "softmax",
    "resize_bilinear",
    "l2_normalize_rows",
    "concat_last",
    "reshape",
    "extract_patches",
    "sum_all",
];

/// Name of the end-to-end objective check.
pub const JOINT_CHECK: &str = "joint_loss";

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    /// Side length of the end-to-end test image.
    pub size: usize,
    pub seed: u64,
    /// Fault-injection hook: corrupt the analytic gradient of this check so
    /// the harness provably detects a broken backward rule.
    pub corrupt: Option<String>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            size: 16,
            seed: 0,
            corrupt: None,
        }
    }
}

/// Runs every primitive check plus the end-to-end joint-loss check.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<OpCheck>, TrainError> {
    let mut checks = Vec::with_capacity(PRIMITIVE_OPS.len() + 1);
    for &name in PRIMITIVE_OPS {
        checks.push(check_primitive(name, cfg)?);
    }
    checks.push(check_joint(cfg)?);
    Ok(checks)
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Weights the op output with a random constant tensor before reducing, so
/// a backward bug cannot hide under a uniform upstream gradient.
fn weighted_sum(
    g: &mut Graph<f64>,
    out: ValueId,
    rng: &mut ChaCha8Rng,
) -> Result<ValueId, NumericsError> {
    let w = g.constant(rand_tensor(g.value(out).shape(), rng, -1.0, 1.0));
    let prod = g.mul(out, w)?;
    Ok(g.sum_all(prod))
}

type Probe = (
    Tensor<f64>,
    Box<dyn Fn(&mut Graph<f64>, ValueId) -> Result<ValueId, NumericsError>>,
);

/// All finite-difference probes for one primitive at one random point: one
/// probe per differentiable input slot.
fn probes_for(name: &str, rng: &mut ChaCha8Rng) -> Vec<Probe> {
    let mut rigged: Vec<Probe> = Vec::new();
    let mut push = |x: Tensor<f64>,
                    f: Box<dyn Fn(&mut Graph<f64>, ValueId) -> Result<ValueId, NumericsError>>| {
        rigged.push((x, f));
    };
    match name {
        "add" | "sub" | "mul" => {
            let x = rand_tensor(&[3, 4], rng, -1.0, 1.0);
            let other = rand_tensor(&[3, 4], rng, -1.0, 1.0);
            let seed = rng.random();
            let op = name.to_string();
            push(
                x,
                Box::new(move |g, xid| {
                    let o = g.constant(other.clone());
                    let y = match op.as_str() {
                        "add" => g.add(xid, o)?,
                        "sub" => g.sub(xid, o)?,
                        _ => g.mul(xid, o)?,
                    };
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "scale" => {
            let x = rand_tensor(&[4, 3], rng, -1.0, 1.0);
            let seed = rng.random();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.scale(xid, -1.7);
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "add_scalar" => {
            let x = rand_tensor(&[4, 3], rng, -1.0, 1.0);
            let seed = rng.random();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.add_scalar(xid, 0.37);
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "abs" => {
            // keep probe points away from the kink at 0
            let x = rand_tensor(&[4, 3], rng, 0.2, 1.0).map(|v| {
                if (v * 1e6) as u64 % 2 == 0 {
                    v
                } else {
                    -v
                }
            });
            let seed = rng.random();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.abs(xid);
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "log" => {
            let x = rand_tensor(&[4, 3], rng, 0.2, 2.0);
            let seed = rng.random();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.log(xid);
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "gelu" => {
            let x = rand_tensor(&[4, 3], rng, -2.0, 2.0);
            let seed = rng.random();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.gelu(xid);
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "matmul" => {
            let a = rand_tensor(&[3, 4], rng, -1.0, 1.0);
            let b = rand_tensor(&[4, 2], rng, -1.0, 1.0);
            let seed = rng.random();
            let (a2, b2) = (a.clone(), b.clone());
            push(
                a,
                Box::new(move |g, xid| {
                    let o = g.constant(b2.clone());
                    let y = g.matmul(xid, o)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                b,
                Box::new(move |g, xid| {
                    let o = g.constant(a2.clone());
                    let y = g.matmul(o, xid)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "transpose2d" => {
            let x = rand_tensor(&[3, 5], rng, -1.0, 1.0);
            let seed = rng.random();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.transpose2d(xid)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "linear" => {
            let x = rand_tensor(&[4, 3], rng, -1.0, 1.0);
            let w = rand_tensor(&[3, 5], rng, -1.0, 1.0);
            let b = rand_tensor(&[5], rng, -1.0, 1.0);
            let seed = rng.random();
            let (x2, w2, b2) = (x.clone(), w.clone(), b.clone());
            let (x3, w3, b3) = (x.clone(), w.clone(), b.clone());
            push(
                x,
                Box::new(move |g, xid| {
                    let wi = g.constant(w2.clone());
                    let bi = g.constant(b2.clone());
                    let y = g.linear(xid, wi, bi)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                w,
                Box::new(move |g, xid| {
                    let xi = g.constant(x2.clone());
                    let bi = g.constant(b3.clone());
                    let y = g.linear(xi, xid, bi)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                b,
                Box::new(move |g, xid| {
                    let xi = g.constant(x3.clone());
                    let wi = g.constant(w3.clone());
                    let y = g.linear(xi, wi, xid)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "conv2d" => {
            let x = rand_tensor(&[5, 6, 2], rng, -1.0, 1.0);
            let k = rand_tensor(&[3, 3, 2, 3], rng, -1.0, 1.0);
            let b = rand_tensor(&[3], rng, -1.0, 1.0);
            let seed = rng.random();
            let (x2, k2, b2) = (x.clone(), k.clone(), b.clone());
            let (x3, k3, b3) = (x.clone(), k.clone(), b.clone());
            push(
                x,
                Box::new(move |g, xid| {
                    let ki = g.constant(k2.clone());
                    let bi = g.constant(b2.clone());
                    let y = g.conv2d(xid, ki, bi)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                k,
                Box::new(move |g, xid| {
                    let xi = g.constant(x2.clone());
                    let bi = g.constant(b3.clone());
                    let y = g.conv2d(xi, xid, bi)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                b,
                Box::new(move |g, xid| {
                    let xi = g.constant(x3.clone());
                    let ki = g.constant(k3.clone());
                    let y = g.conv2d(xi, ki, xid)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "depthwise_conv2d" => {
            let x = rand_tensor(&[5, 4, 3], rng, -1.0, 1.0);
            let k = rand_tensor(&[3, 3, 3], rng, -1.0, 1.0);
            let b = rand_tensor(&[3], rng, -1.0, 1.0);
            let seed = rng.random();
            let (x2, k2, b2) = (x.clone(), k.clone(), b.clone());
            let (x3, k3, b3) = (x.clone(), k.clone(), b.clone());
            push(
                x,
                Box::new(move |g, xid| {
                    let ki = g.constant(k2.clone());
                    let bi = g.constant(b2.clone());
                    let y = g.depthwise_conv2d(xid, ki, bi)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                k,
                Box::new(move |g, xid| {
                    let xi = g.constant(x2.clone());
                    let bi = g.constant(b3.clone());
                    let y = g.depthwise_conv2d(xi, xid, bi)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                b,
                Box::new(move |g, xid| {
                    let xi = g.constant(x3.clone());
                    let ki = g.constant(k3.clone());
                    let y = g.depthwise_conv2d(xi, ki, xid)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "batch_norm" | "layer_norm" => {
            let is_bn = name == "batch_norm";
            let (xshape, c): (&[usize], usize) = if is_bn { (&[4, 5, 3], 3) } else { (&[6, 5], 5) };
            let x = rand_tensor(xshape, rng, -1.0, 1.0);
            let gamma = rand_tensor(&[c], rng, 0.5, 1.5);
            let beta = rand_tensor(&[c], rng, -0.5, 0.5);
            let seed = rng.random();
            let norm = move |g: &mut Graph<f64>,
                             x: ValueId,
                             gm: ValueId,
                             bt: ValueId|
                  -> Result<ValueId, NumericsError> {
                if is_bn {
                    g.batch_norm(x, gm, bt, 1e-5)
                } else {
                    g.layer_norm(x, gm, bt, 1e-5)
                }
            };
            let (x2, gm2, bt2) = (x.clone(), gamma.clone(), beta.clone());
            let (x3, gm3, bt3) = (x.clone(), gamma.clone(), beta.clone());
            push(
                x,
                Box::new(move |g, xid| {
                    let gm = g.constant(gm2.clone());
                    let bt = g.constant(bt2.clone());
                    let y = norm(g, xid, gm, bt)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                gamma,
                Box::new(move |g, xid| {
                    let xi = g.constant(x2.clone());
                    let bt = g.constant(bt3.clone());
                    let y = norm(g, xi, xid, bt)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                beta,
                Box::new(move |g, xid| {
                    let xi = g.constant(x3.clone());
                    let gm = g.constant(gm3.clone());
                    let y = norm(g, xi, gm, xid)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "softmax" => {
            let x = rand_tensor(&[4, 5], rng, -2.0, 2.0);
            let seed = rng.random();
            let x2 = x.clone();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.softmax(xid, 1)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                x2,
                Box::new(move |g, xid| {
                    let y = g.softmax(xid, 0)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "resize_bilinear" => {
            let x = rand_tensor(&[5, 7, 2], rng, -1.0, 1.0);
            let seed = rng.random();
            let x2 = x.clone();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.resize_bilinear(xid, 9, 4)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                x2,
                Box::new(move |g, xid| {
                    let y = g.resize_bilinear(xid, 2, 3)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "center_channels" => {
            let x = rand_tensor(&[5, 4, 3], rng, -1.0, 1.0);
            let seed = rng.random();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.center_channels(xid)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "l2_normalize_rows" => {
            let x = rand_tensor(&[4, 6], rng, 0.3, 1.0);
            let seed = rng.random();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.l2_normalize_rows(xid)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "concat_last" => {
            let a = rand_tensor(&[3, 2], rng, -1.0, 1.0);
            let b = rand_tensor(&[3, 4], rng, -1.0, 1.0);
            let seed = rng.random();
            let (a2, b2) = (a.clone(), b.clone());
            push(
                a,
                Box::new(move |g, xid| {
                    let o = g.constant(b2.clone());
                    let y = g.concat_last(xid, o)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
            push(
                b,
                Box::new(move |g, xid| {
                    let o = g.constant(a2.clone());
                    let y = g.concat_last(o, xid)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "reshape" => {
            let x = rand_tensor(&[4, 6], rng, -1.0, 1.0);
            let seed = rng.random();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.reshape(xid, &[3, 8])?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "extract_patches" => {
            let x = rand_tensor(&[6, 6, 2], rng, -1.0, 1.0);
            let seed = rng.random();
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.extract_patches(xid, 3)?;
                    weighted_sum(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
                }),
            );
        }
        "sum_all" => {
            let x = rand_tensor(&[4, 5], rng, -1.0, 1.0);
            push(
                x,
                Box::new(move |g, xid| {
                    let y = g.sum_all(xid);
                    Ok(g.scale(y, 0.7))
                }),
            );
        }
        other => unreachable!("unlisted primitive {other}"),
    }
    rigged
}

fn check_primitive(name: &str, cfg: &SuiteConfig) -> Result<OpCheck, TrainError> {
    let corrupt_this = cfg.corrupt.as_deref() == Some(name);
    let mut max_rel_error = 0.0f64;
    // five random points per input slot
    for point in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37 + point * 1315423911));
        for (slot, (x, build)) in probes_for(name, &mut rng).into_iter().enumerate() {
            let tamper = (corrupt_this && point == 0 && slot == 0).then_some(0.25);
            let report = crate::numerics::gradcheck_tampered(build, &x, DEFAULT_EPS, tamper)?;
            max_rel_error = max_rel_error.max(report.max_rel_error);
        }
    }
    Ok(OpCheck {
        name: name.to_string(),
        max_rel_error,
        threshold: DEFAULT_THRESHOLD,
    })
}

/// End-to-end: the joint loss differentiated against every parameter of a
/// small model, with the self-labelling targets frozen at the base point.
fn check_joint(cfg: &SuiteConfig) -> Result<OpCheck, TrainError> {
    let size = cfg.size;
    let model = ModelConfig {
        in_channels: 3,
        feat_channels: 8,
        patch_size: (size / 8).max(1),
        token_dim: 8,
        num_clusters: 3,
        alpha: 3.0,
        image_h: size,
        image_w: size,
    };
    let weights = LossWeights {
        beta: 16.min(size),
        ..LossWeights::default()
    };
    let params = ParameterSet::<f64>::init(&model, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xabcd);
    let img = rand_tensor(&[size, size, 3], &mut rng, 0.0, 1.0);
    let aug = rand_tensor(&[size, size, 3], &mut rng, 0.0, 1.0);

    // freeze the self-generated targets at the base point
    let frozen = {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fwd = forward(&mut g, &bound, &img, &aug, &model)?;
        FrozenTargets::from_values(
            g.value(fwd.p),
            g.value(fwd.image_tokens),
            g.value(fwd.aug_tokens),
            weights.temperature,
        )
    };

    let corrupt_this = cfg.corrupt.as_deref() == Some(JOINT_CHECK);
    let mut max_rel_error = 0.0f64;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for (i, name) in names.iter().enumerate() {
        let build = |g: &mut Graph<f64>, xid: ValueId| -> Result<ValueId, TrainError> {
            let bound = params.bind_with_probe(g, name, xid);
            let fwd = forward(g, &bound, &img, &aug, &model)?;
            let (loss, _) = joint_loss_with_frozen_targets(
                g,
                fwd.p,
                fwd.image_tokens,
                fwd.aug_tokens,
                &weights,
                &frozen,
            )?;
            Ok(loss)
        };
        let tamper = (corrupt_this && i == 0).then_some(0.25);
        let report =
            crate::numerics::gradcheck_tampered(build, params.get(name), DEFAULT_EPS, tamper)?;
        max_rel_error = max_rel_error.max(report.max_rel_error);
    }
    Ok(OpCheck {
        name: JOINT_CHECK.to_string(),
        max_rel_error,
        threshold: DEFAULT_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_has_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &name in PRIMITIVE_OPS {
            assert!(!probes_for(name, &mut rng).is_empty(), "{name}");
        }
    }

    #[test]
    fn suite_reports_each_check_once() {
        // cheap subset: primitives only, one seed
        let cfg = SuiteConfig::default();
        let mut names: Vec<String> = PRIMITIVE_OPS.iter().map(|s| s.to_string()).collect();
        names.push(JOINT_CHECK.to_string());
        let mut run: Vec<String> = run_suite(&cfg).unwrap().into_iter().map(|c| c.name).collect();
        names.sort();
        run.sort();
        assert_eq!(run, names);
    }

    #[test]
    fn corruption_hook_fails_named_op_only() {
        let cfg = SuiteConfig {
            corrupt: Some("gelu".to_string()),
            ..SuiteConfig::default()
        };
        let checks = run_suite(&cfg).unwrap();
        for check in checks {
            if check.name == "gelu" {
                assert!(!check.passed(), "corrupted op must fail");
            } else {
                assert!(check.passed(), "{} unexpectedly failed", check.name);
            }
        }
    }
}
