use crate::error::{Error, Result};

/// Classic dynamic time warping with absolute-difference cost and
/// steps `(i−1, j)`, `(i, j−1)`, `(i−1, j−1)`.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("DTW of an empty sequence".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![0.0; m];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            let cost = (x - y).abs();
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[j],
                _ => prev[j].min(cur[j - 1]).min(prev[j - 1]),
            };
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}
