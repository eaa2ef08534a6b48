//! Runs the stage ablation on a synthetic rotation task and prints top-1
//! accuracy per configuration.
//!
//! cargo run --release -p apialign --example synthetic_ablation -- [seed] [hidden] [iters] [epochs]

use std::time::Instant;

use apialign::adversarial::AdvConfig;
use apialign::eval::run_ablation;
use apialign::pipeline::{PipelineConfig, Stages};
use apialign::query::TargetIndex;
use apialign::seeding::MappingMatrix;
use apialign::synthetic::{SyntheticConfig, SyntheticTask};
use apialign::{batch_query, eval::topk_accuracy};

fn main() -> apialign::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seed = arg(1, 0) as u64;
    let hidden = arg(2, 64);
    let iters = arg(3, 200);
    let epochs = arg(4, 5);

    let task = SyntheticTask::generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })?;
    let (seeds, truth) = task.split(30, 200, seed + 1000);
    let oracle = MappingMatrix::new(task.rotation.clone(), apialign::Stage::Initial)?;
    let idx = TargetIndex::new(&task.tgt);
    let res = batch_query(&truth.sources(), &oracle, &task.src, &idx, 1, None)?;
    println!("oracle top-1 {:.3}", topk_accuracy(&res, &truth, 1)?);

    let base = PipelineConfig {
        adversarial: AdvConfig {
            hidden: vec![hidden],
            iterations_per_epoch: iters,
            epochs,
            rng_seed: seed,
            ..AdvConfig::default()
        },
        rng_seed: seed,
        ..PipelineConfig::default()
    };
    let t = Instant::now();
    let rows = run_ablation(&task.src, &task.tgt, &seeds, &truth, &Stages::ALL, &base, &[1, 5, 10])?;
    for r in rows {
        println!("{:>6} {:?}", r.stages.to_string(), r.accuracy);
    }
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
