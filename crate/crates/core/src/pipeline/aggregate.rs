use crate::error::{Error, Result};

/// Channel-wise max of a set of embeddings with the contributing point per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature {
    pub a: Vec<f64>,
    pub argmax_ids: Vec<usize>,
}

/// Max over the `n` rows of an `n × k` buffer; ties go to the lowest row.
pub fn aggregate_max(embeddings: &[f64], k: usize) -> Result<GlobalFeature> {
    if k == 0 || embeddings.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if embeddings.len() % k != 0 {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: embeddings.len() % k,
            context: "embedding rows",
        });
    }
    let mut a = embeddings[..k].to_vec();
    let mut argmax_ids = vec![0; k];
    for (i, row) in embeddings.chunks_exact(k).enumerate().skip(1) {
        for c in 0..k {
            if row[c] > a[c] {
                a[c] = row[c];
                argmax_ids[c] = i;
            }
        }
    }
    Ok(GlobalFeature { a, argmax_ids })
}

/// Number of distinct points that realize at least one channel maximum.
pub fn active_point_count(embeddings: &[f64], k: usize) -> Result<usize> {
    let g = aggregate_max(embeddings, k)?;
    let mut ids = g.argmax_ids;
    ids.sort_unstable();
    ids.dedup();
    Ok(ids.len())
}
