use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::vector_store::l2_squared;
use crate::VectorId;

/// Exact top-`k` ids of `corpus` for each query by Euclidean distance,
/// ties broken by smaller id.
pub fn ground_truth(
    queries: &[Vec<f32>],
    corpus: &[(VectorId, Vec<f32>)],
    k: usize,
) -> Result<Vec<Vec<VectorId>>> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if k == 0 || k > corpus.len() {
        return Err(Error::invalid(format!(
            "k={k} with {} corpus vectors",
            corpus.len()
        )));
    }
    queries
        .iter()
        .map(|q| {
            let mut d: Vec<(f32, VectorId)> = corpus
                .iter()
                .map(|(id, x)| (l2_squared(q, x), *id))
                .collect();
            let cmp =
                |a: &(f32, VectorId), b: &(f32, VectorId)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < d.len() {
                d.select_nth_unstable_by(k - 1, cmp);
                d.truncate(k);
            }
            d.sort_unstable_by(cmp);
            Ok(d.into_iter().map(|(_, id)| id).collect())
        })
        .collect()
}

/// `|retrieved ∩ truth| / k`; `truth` must hold exactly `k` ids.
pub fn recall_at_k(retrieved: &[VectorId], truth: &[VectorId], k: usize) -> Result<f64> {
    if truth.len() != k || k == 0 {
        return Err(Error::invalid(format!(
            "truth has {} ids, expected k={k}",
            truth.len()
        )));
    }
    let t: HashSet<&VectorId> = truth.iter().collect();
    let hit = retrieved
        .iter()
        .take(k)
        .collect::<HashSet<_>>()
        .into_iter()
        .filter(|id| t.contains(id))
        .count();
    Ok(hit as f64 / k as f64)
}
