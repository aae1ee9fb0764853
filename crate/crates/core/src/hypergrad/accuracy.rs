use crate::ad::{cosine_similarity, l2_distance, FlatVector};
use crate::bilevel::BilevelProblem;
use crate::error::Result;
use crate::hypergrad::{hypergradient, InverseStrategy};

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub strategy: &'static str,
    pub steps: usize,
    pub cosine_similarity: f64,
    pub l2_distance: f64,
}

/// Compares each strategy, at each budget in `step_grid`, against the
/// exact-dense hypergradient at `(λ, w)`. Strategies without a budget get a
/// single row.
pub fn hypergrad_accuracy(
    problem: &BilevelProblem,
    lambda: &FlatVector,
    weights: &FlatVector,
    strategies: &[InverseStrategy],
    step_grid: &[usize],
    seed: u64,
) -> Result<Vec<AccuracyRow>> {
    let exact = hypergradient(problem, lambda, weights, &InverseStrategy::ExactDense, seed)?.total;
    let mut rows = Vec::new();
    for s in strategies {
        let variants: Vec<InverseStrategy> = match s {
            InverseStrategy::Identity | InverseStrategy::ExactDense => vec![*s],
            _ => step_grid.iter().map(|&n| s.with_steps(n)).collect(),
        };
        for v in variants {
            let approx = hypergradient(problem, lambda, weights, &v, seed)?.total;
            rows.push(AccuracyRow {
                strategy: v.name(),
                steps: v.steps(),
                cosine_similarity: cosine_similarity(approx.as_slice(), exact.as_slice()),
                l2_distance: l2_distance(approx.as_slice(), exact.as_slice()),
            });
        }
    }
    Ok(rows)
}
