use rayon::prelude::*;

use super::{topk_accuracy, GroundTruth};
use crate::embedding::EmbeddingSpace;
use crate::error::Result;
use crate::pipeline::{run_pipeline, PipelineConfig, Stages};
use crate::query::{batch_query, TargetIndex};
use crate::seeding::{MappingMatrix, SeedDictionary};

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub stages: Stages,
    /// `(k, top-k accuracy)` pairs.
    pub accuracy: Vec<(usize, f64)>,
    pub mapping: MappingMatrix,
}

impl AblationRow {
    pub fn top(&self, k: usize) -> Option<f64> {
        self.accuracy.iter().find(|(kk, _)| *kk == k).map(|(_, a)| *a)
    }
}

/// Runs each stage combination of `grid` from scratch and reports top-k
/// accuracy on `truth`. Combinations run in parallel; each uses the
/// configured RNG seeds, so results do not depend on scheduling.
pub fn run_ablation(
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    seeds: &SeedDictionary,
    truth: &GroundTruth,
    grid: &[Stages],
    base: &PipelineConfig,
    ks: &[usize],
) -> Result<Vec<AblationRow>> {
    let tgt_index = TargetIndex::new(tgt);
    let sources = truth.sources();
    let k_max = ks.iter().copied().max().unwrap_or(1).max(1);
    grid.par_iter()
        .map(|&stages| {
            let cfg = PipelineConfig {
                stages,
                ..base.clone()
            };
            let out = run_pipeline(src, tgt, Some(seeds), &cfg)?;
            let results = batch_query(&sources, &out.mapping, src, &tgt_index, k_max, None)?;
            let accuracy = ks
                .iter()
                .map(|&k| topk_accuracy(&results, truth, k).map(|a| (k, a)))
                .collect::<Result<Vec<_>>>()?;
            log::info!("ablation {stages}: {accuracy:?}");
            Ok(AblationRow {
                stages,
                accuracy,
                mapping: out.mapping,
            })
        })
        .collect()
}
