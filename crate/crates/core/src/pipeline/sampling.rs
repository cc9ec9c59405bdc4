use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PipelineError;
use crate::prompts::TaskKind;
use crate::text::proportional_count;

/// `⌈p·n⌉` distinct indices below `n`, ascending, drawn with a seeded RNG.
pub fn sample_indices(n: usize, proportion: f64, seed: u64) -> Result<Vec<usize>, PipelineError> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(PipelineError::InvalidOption(format!("proportion {proportion} is outside (0, 1]")));
    }
    if n == 0 {
        return Err(PipelineError::EmptyDataset);
    }
    let k = proportional_count(proportion, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Uniform sample without replacement; kept items stay in input order and
/// are returned unchanged.
pub fn sample_dataset<T: Clone>(items: &[T], proportion: f64, seed: u64) -> Result<Vec<T>, PipelineError> {
    Ok(sample_indices(items.len(), proportion, seed)?
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

/// The first `k` tasks in inclusion order.
pub fn task_subset(k: usize) -> Result<Vec<TaskKind>, PipelineError> {
    if !(1..=TaskKind::ALL.len()).contains(&k) {
        return Err(PipelineError::OutOfRange { k });
    }
    Ok(TaskKind::ALL[..k].to_vec())
}
