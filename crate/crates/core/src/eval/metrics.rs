use super::EvalError;

fn check(rank: usize, k: usize) -> Result<(), EvalError> {
    if k < 1 {
        return Err(EvalError::InvalidK(k));
    }
    if rank < 1 {
        return Err(EvalError::InvalidRank(rank));
    }
    Ok(())
}

/// 1 when the single relevant item sits within the top `k`.
pub fn hit_at_k(rank: usize, k: usize) -> Result<f64, EvalError> {
    check(rank, k)?;
    Ok(if rank <= k { 1.0 } else { 0.0 })
}

/// `1 / log2(rank + 1)` within the cutoff, else 0. With one relevant item
/// the ideal DCG is 1.
pub fn ndcg_at_k(rank: usize, k: usize) -> Result<f64, EvalError> {
    check(rank, k)?;
    Ok(if rank <= k { 1.0 / ((rank + 1) as f64).log2() } else { 0.0 })
}
