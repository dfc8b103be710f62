//! Small LCE training run: per-epoch held-out error for one loss.
use std::time::Instant;

use subspacenet::dataio::{Dataset, Split};
use subspacenet::geometry::{generate_scene, sequential_fit, SceneSpec, StructureKind};
use subspacenet::losses::LossKind;
use subspacenet::metrics;
use subspacenet::network::NetworkConfig;
use subspacenet::training::{evaluate_instance, TrainConfig, Trainer};

fn make(count: usize, seed: u64, split: Split) -> Dataset {
    let instances = (0..count)
        .map(|i| {
            let mut inst = generate_scene(&SceneSpec::lce(100, 0.05, seed * 100_000 + i as u64)).unwrap().instance;
            inst.name = format!("{}{i}", split.as_str());
            inst
        })
        .collect();
    Dataset::new(instances, split).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let loss: LossKind = args.get(1).map_or("mimi", |s| s.as_str()).parse().unwrap();
    let n_train: usize = args.get(2).map_or(100, |s| s.parse().unwrap());
    let epochs: usize = args.get(3).map_or(10, |s| s.parse().unwrap());
    let train = make(n_train, 1, Split::Train);
    let test = make(50, 2, Split::Test);
    let net = NetworkConfig::new(2, 32, 12, 5).with_seed(3);
    let mut cfg = TrainConfig::new(loss);
    cfg.epochs = epochs;
    if let Some(lr) = args.get(4) {
        cfg.learning_rate = lr.parse().unwrap();
    }
    let mut t = Trainer::new(&train, None, net.clone(), cfg).unwrap();
    let start = Instant::now();
    while !t.is_done() {
        let loss = t.run_epoch().unwrap().train_loss;
        let reports: Vec<_> = test.instances.iter().map(|i| evaluate_instance(t.params(), &net, i, 10, 0).unwrap()).collect();
        let s = metrics::summarize(&reports);
        let fit: Vec<_> = train.instances.iter().take(50).map(|i| evaluate_instance(t.params(), &net, i, 10, 0).unwrap()).collect();
        let f = metrics::summarize(&fit);
        println!(
            "epoch {} loss {loss:.4} test err {:.4} nmi {:.4} train err {:.4} ({:.0}s)",
            t.epoch(),
            s.mean.error_rate,
            s.mean.nmi,
            f.mean.error_rate,
            start.elapsed().as_secs_f64()
        );
    }
    let schedule = [(StructureKind::Line, 1), (StructureKind::Circle, 1), (StructureKind::Ellipse, 2)];
    let start = Instant::now();
    let base: Vec<_> = test
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let (pred, _) = sequential_fit(inst, &schedule, 0.125, 1000, i as u64).unwrap_or_else(|_| (vec![0; inst.len()], vec![]));
            metrics::evaluate(&pred, &inst.labels).unwrap()
        })
        .collect();
    let s = metrics::summarize(&base);
    println!("baseline err {:.4} nmi {:.4} ({:.0}s)", s.mean.error_rate, s.mean.nmi, start.elapsed().as_secs_f64());
}
