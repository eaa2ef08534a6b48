//! Prints the per-epoch selection criterion next to the true top-1
//! accuracy for an adversarial run on a synthetic rotation task.
//!
//! cargo run --release -p apialign --example adversarial_trace -- [seed] [hidden] [iters] [epochs] [lr] [random-init] [beta] [momentum]

use apialign::adversarial::{train_adversarial_observed, AdvConfig};
use apialign::eval::topk_accuracy;
use apialign::pipeline::{initial_mapping, Stages};
use apialign::query::TargetIndex;
use apialign::seeding::{MappingMatrix, Stage};
use apialign::synthetic::{SyntheticConfig, SyntheticTask};
use apialign::batch_query;

fn main() -> apialign::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seed = arg(1, 0.0) as u64;
    let cfg = AdvConfig {
        hidden: vec![arg(2, 64.0) as usize],
        iterations_per_epoch: arg(3, 200.0) as usize,
        epochs: arg(4, 10.0) as usize,
        learning_rate: arg(5, 0.1),
        orthogonalize: arg(7, 0.001),
        momentum: arg(8, 0.9),
        rng_seed: seed,
        ..AdvConfig::default()
    };
    let stages = if arg(6, 0.0) > 0.0 { Stages::A } else { Stages::SA };

    let task = SyntheticTask::generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })?;
    let (seeds, truth) = task.split(30, 200, seed + 1000);
    let init = initial_mapping(stages, Some(&seeds), &task.src, &task.tgt, seed)?;
    let idx = TargetIndex::new(&task.tgt);
    let sources = truth.sources();
    let all = apialign::eval::GroundTruth::from_pairs(task.aligned.clone());
    let all_sources = all.sources();
    let out = train_adversarial_observed(&init, &task.src, &task.tgt, &cfg, |r, w| {
        let m = MappingMatrix::new(w.clone(), Stage::Adversarial).unwrap();
        let res = batch_query(&sources, &m, &task.src, &idx, 1, None).unwrap();
        let acc = topk_accuracy(&res, &truth, 1).unwrap();
        let res_all = batch_query(&all_sources, &m, &task.src, &idx, 1, None).unwrap();
        let acc_all = topk_accuracy(&res_all, &all, 1).unwrap();
        let ortho = apialign::linalg::orthogonality_error(w);
        println!(
            "epoch {:>2} L_D {:.4} L_W {:.4} dacc {:.3} crit {:.4} top1 {:.3} all {:.4} ortho {:.3}",
            r.epoch, r.disc_loss, r.map_loss, r.disc_accuracy, r.criterion, acc, acc_all, ortho
        );
    })?;
    println!("best epoch {}", out.best_epoch);
    Ok(())
}
