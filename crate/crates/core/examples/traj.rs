// Scratch: per-iteration DSC trajectory under different optimizer settings.
use fusenet_core::fixtures;
use fusenet_core::losses::joint_loss;
use fusenet_core::metrics::evaluate_single;
use fusenet_core::model::{forward, predict_segmentation, ParameterSet};
use fusenet_core::numerics::Graph;
use fusenet_core::trainer::{Optimizer, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let opt = match args.get(1).map(String::as_str).unwrap_or("adam") {
        "sgd" => Optimizer::Sgd,
        _ => Optimizer::Adam,
    };
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let fixture = fixtures::two_region(64, seed);
    let mut cfg = TrainConfig::for_image(3, 64);
    cfg.learning_rate = lr;
    cfg.optimizer = opt;
    cfg.seed = seed;
    cfg.augment.seed = seed;

    // hand-rolled copy of the training loop with DSC tracing
    let mut params = ParameterSet::<f64>::init(&cfg.model, cfg.seed);
    let aug = fusenet_core::augment::make_augmented_view(&fixture.image, &cfg.augment);
    let mut opt_m: Vec<fusenet_core::Tensor64> =
        params.iter().map(|(_, t)| fusenet_core::Tensor64::zeros(t.shape())).collect();
    let mut opt_v = opt_m.clone();
    for it in 1..=cfg.iterations {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fwd = forward(&mut g, &bound, &fixture.image, &aug, &cfg.model).unwrap();
        let (loss, bd) = joint_loss(&mut g, fwd.p, fwd.image_tokens, fwd.aug_tokens, &cfg.weights).unwrap();
        let seg = predict_segmentation(g.value(fwd.p));
        let m = evaluate_single("f", &seg, &fixture.gt).unwrap();
        if it % 5 == 0 || it == 1 {
            println!(
                "iter {it:3} dsc={:6.2} clusters={:2} joint={:.4} ce={:.4}",
                m.dsc,
                seg.distinct_clusters(),
                bd.total,
                bd.ce
            );
        }
        let grads = g.backward(loss).unwrap();
        let t = it as i32;
        for (((_, p), id), (m1, v1)) in params.iter_mut().zip(bound.ids()).zip(opt_m.iter_mut().zip(opt_v.iter_mut())) {
            let gr = grads.get(*id).unwrap();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (pv, &gv) in p.data_mut().iter_mut().zip(gr.data()) {
                        *pv -= lr * gv;
                    }
                }
                Optimizer::Adam => {
                    let c1 = 1.0 - 0.9f64.powi(t);
                    let c2 = 1.0 - 0.999f64.powi(t);
                    for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(gr.data()).zip(m1.data_mut()).zip(v1.data_mut()) {
                        *mv = 0.9 * *mv + 0.1 * gv;
                        *vv = 0.999 * *vv + 0.001 * gv * gv;
                        *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + 1e-8);
                    }
                }
            }
        }
    }
}
