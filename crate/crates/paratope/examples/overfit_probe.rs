//! Scratch probe for the desk-scale overfit run: watches AAR/AUROC progress.

use paratope::losses::LossWeights;
use paratope::metrics::auroc;
use paratope::model::{Model, ModelConfig};
use paratope::structure::synth::{generate_dataset, SynthParams};
use paratope::trainer::{prepare_dataset, train_epoch, TrainConfig, TrainItem};

fn train_stats(model: &Model<f32>, items: &[TrainItem]) -> (f64, Option<f64>) {
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for item in items {
        let pass = model.forward_prepared(&item.prep, false, 0).unwrap();
        let seq = pass.decode();
        for (a, b) in seq.iter().zip(&item.true_seq) {
            total += 1;
            if a == b {
                hits += 1;
            }
        }
        for (p, &l) in pass.contact_values().iter().zip(&item.labels) {
            scores.push(*p as f64);
            labels.push(l);
        }
    }
    (hits as f64 / total as f64, auroc(&scores, &labels))
}

fn main() {
    let t0 = std::time::Instant::now();
    let params = SynthParams {
        cdr_len: 10,
        antigen_len: 30,
        planted_contact_fraction: 0.5,
        noise: 0.3,
    };
    let complexes: Vec<_> = generate_dataset(100, 4, &params)
        .unwrap()
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    let mut model: Model<f32> = Model::new(ModelConfig::standard(), 0);
    println!("params: {}", model.param_count());
    let items = prepare_dataset(&model, &complexes).unwrap();
    let weights = LossWeights::default();
    let cfg = TrainConfig::default();
    let mut state = paratope::diff::optim::AdamState::new();
    println!("setup {:.1}s", t0.elapsed().as_secs_f64());
    let t1 = std::time::Instant::now();
    for epoch in 0..300 {
        let breakdown = train_epoch(&mut model, &items, &weights, &cfg, &mut state, epoch).unwrap();
        if epoch % 10 == 0 || epoch < 5 {
            let (aar, au) = train_stats(&model, &items);
            println!(
                "epoch {epoch:3} total {:8.4} seq {:7.4} ct {:7.4} coord {:7.4} dock {:7.4} | aar {aar:.3} auroc {:?} | {:.1}s",
                breakdown.total, breakdown.seq, breakdown.contact, breakdown.coord, breakdown.dock,
                au.map(|v| (v * 1000.0).round() / 1000.0),
                t1.elapsed().as_secs_f64()
            );
            if aar > 0.97 && au.map(|v| v > 0.995).unwrap_or(false) {
                println!("targets reached at epoch {epoch}");
                break;
            }
        }
    }
    println!("total {:.1}s", t1.elapsed().as_secs_f64());
}
