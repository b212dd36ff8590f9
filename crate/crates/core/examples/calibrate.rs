// Scratch calibration harness: fixture DSC per variant, with timings.
use std::time::Instant;

use fusenet_core::fixtures;
use fusenet_core::losses::LossWeights;
use fusenet_core::metrics::evaluate_single;
use fusenet_core::trainer::{train_on_image, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("two");
    let n: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5e-3);

    let variants: [(&str, LossWeights); 4] = [
        (
            "ce",
            LossWeights {
                lambda_clip: 0.0,
                lambda_boundary: 0.0,
                ..LossWeights::default()
            },
        ),
        (
            "ce+B",
            LossWeights {
                lambda_clip: 0.0,
                ..LossWeights::default()
            },
        ),
        (
            "ce+CLIP",
            LossWeights {
                lambda_boundary: 0.0,
                ..LossWeights::default()
            },
        ),
        ("joint", LossWeights::default()),
    ];

    for (name, weights) in variants {
        let mut dscs = Vec::new();
        let start = Instant::now();
        for seed in 0..n {
            let fixture = if which == "two" {
                fixtures::two_region(64, seed)
            } else {
                fixtures::four_region(64, seed)
            };
            let mut cfg = TrainConfig::for_image(3, 64);
            cfg.seed = seed;
            cfg.augment.seed = seed;
            cfg.weights = weights;
            cfg.learning_rate = lr;
            cfg.optimizer = fusenet_core::trainer::Optimizer::Sgd;
            if std::env::var("IDENTITY_AUG").is_ok() {
                cfg.augment = fusenet_core::augment::AugmentConfig::identity(seed);
            }
            if let Ok(v) = std::env::var("NUM_CLUSTERS") {
                cfg.model.num_clusters = v.parse().unwrap();
            }
            if let Ok(v) = std::env::var("JITTER") {
                let j: f64 = v.parse().unwrap();
                cfg.augment.brightness = j;
                cfg.augment.contrast = j;
                cfg.augment.saturation = j;
            }
            let out = train_on_image(&fixture.image, &cfg).unwrap();
            let m = evaluate_single("fx", &out.segmentation, &fixture.gt).unwrap();
            let last = out.history.records().last().unwrap();
            dscs.push(m.dsc);
            println!(
                "  {name} seed={seed} dsc={:.2} hm={:.1} xor={:.1} clusters={} iters={}",
                m.dsc,
                m.hm,
                m.xor,
                out.segmentation.distinct_clusters(),
                last.iteration,
            );
        }
        let mean = dscs.iter().sum::<f64>() / dscs.len() as f64;
        let min = dscs.iter().cloned().fold(f64::INFINITY, f64::min);
        println!(
            "{name}: mean={mean:.2} min={min:.2}  ({:.1}s total)",
            start.elapsed().as_secs_f64()
        );
    }
}
