use nalgebra::DVector;

use super::BenchError;

/// Dynamic time warping distance with Euclidean point cost and the
/// match / insert / delete step pattern, no window.
pub fn dtw(a: &[DVector<f64>], b: &[DVector<f64>]) -> Result<f64, BenchError> {
    if a.is_empty() || b.is_empty() {
        return Err(BenchError::EmptySequence);
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for x in a {
        cur[0] = f64::INFINITY;
        for (j, y) in b.iter().enumerate() {
            let cost = (x - y).norm();
            cur[j + 1] = cost + prev[j].min(prev[j + 1]).min(cur[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}
