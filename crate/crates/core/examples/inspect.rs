// Scratch probe: where do the clusters land relative to the gt region?
use fusenet_core::fixtures;
use fusenet_core::trainer::{train_on_image, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let fseed: u64 = std::env::var("FSEED").ok().and_then(|v| v.parse().ok()).unwrap_or(0);
    let fixture = fixtures::two_region(64, fseed);
    let mut cfg = TrainConfig::for_image(3, 64);
    cfg.learning_rate = lr;
    cfg.iterations = iters;
    cfg.optimizer = fusenet_core::trainer::Optimizer::Sgd;
    cfg.seed = fseed;
    cfg.augment.seed = fseed;
    if std::env::var("IDENTITY_AUG").is_ok() {
        cfg.augment = fusenet_core::augment::AugmentConfig::identity(0);
    }
    if let Ok(s) = std::env::var("BLUR_HI") {
        cfg.augment.blur_sigma = (0.1, s.parse().unwrap());
    }
    let out = train_on_image(&fixture.image, &cfg).unwrap();
    // ascii map: gt boundary as '#', clusters as hex digits
    for y in (0..64).step_by(2) {
        let mut line = String::new();
        for x in (0..64).step_by(1) {
            let l = out.segmentation.label(y, x);
            let c = std::char::from_digit(l, 16).unwrap_or('?');
            if fixture.gt.get(y, x) {
                line.push(c.to_ascii_uppercase());
            } else {
                line.push(c);
            }
        }
        println!("{line}");
    }

    let mut inside = [0usize; 16];
    let mut outside = [0usize; 16];
    for (label, &fg) in out.segmentation.labels().iter().zip(fixture.gt.data()) {
        if fg {
            inside[*label as usize] += 1;
        } else {
            outside[*label as usize] += 1;
        }
    }
    println!("gt area = {}", fixture.gt.count_ones());
    for c in 0..16 {
        if inside[c] + outside[c] > 0 {
            println!("cluster {c:2}: inside={:5} outside={:5}", inside[c], outside[c]);
        }
    }
    for r in out.history.records().iter().step_by(10) {
        println!(
            "iter {:3} joint={:.4} ce={:.4} clusters={}",
            r.iteration, r.joint, r.ce, r.clusters
        );
    }
}
