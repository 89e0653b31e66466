use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Symmetric normalization with self-loops: `D̃^{-1/2} (W + I) D̃^{-1/2}`.
pub fn normalize_adjacency(w: &Tensor) -> Result<Tensor> {
    let s = w.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::shape(format!("adjacency must be square, got {s:?}")));
    }
    let n = s[0];
    for i in 0..n {
        for j in 0..n {
            let v = w.at(i, j);
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "adjacency entry ({i}, {j}) = {v} must be non-negative"
                )));
            }
            if v != w.at(j, i) {
                return Err(Error::invalid(format!(
                    "adjacency asymmetric at ({i}, {j})"
                )));
            }
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let degree: f64 = w.row(i).iter().sum::<f64>() + 1.0;
            1.0 / degree.sqrt()
        })
        .collect();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let loop_term = if i == j { 1.0 } else { 0.0 };
            let v = inv_sqrt[i] * (w.at(i, j) + loop_term) * inv_sqrt[j];
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Dominant eigenvalue magnitude of a symmetric matrix by power iteration.
    fn spectral_radius(a: &Tensor) -> f64 {
        let n = a.rows();
        let mut v =
            Tensor::new(vec![n, 1], (0..n).map(|i| 1.0 + 0.1 * i as f64).collect()).unwrap();
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let next = a.matmul(&v).unwrap();
            let norm = next.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm / v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            v = next.scale(1.0 / norm);
        }
        lambda
    }

    #[test]
    fn empty_graph_gives_identity() {
        assert_eq!(
            normalize_adjacency(&Tensor::zeros(&[2, 2])).unwrap(),
            Tensor::identity(2)
        );
    }

    #[test]
    fn two_node_edge() {
        let w = Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        // W + I is all ones and every degree is 2, so each entry is 1 / (√2·√2).
        let a = normalize_adjacency(&w).unwrap();
        for v in a.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(normalize_adjacency(&Tensor::zeros(&[2, 3])).is_err());
        let neg = Tensor::matrix(2, 2, vec![0.0, -0.5, -0.5, 0.0]).unwrap();
        assert!(normalize_adjacency(&neg).is_err());
        let asym = Tensor::matrix(2, 2, vec![0.0, 0.5, 0.4, 0.0]).unwrap();
        assert!(normalize_adjacency(&asym).is_err());
    }

    fn symmetric(max_n: usize) -> impl Strategy<Value = Tensor> {
        (1..=max_n).prop_flat_map(|n| {
            prop::collection::vec(0.0f64..1.0, n * n).prop_map(move |raw| {
                Tensor::from_fn(n, n, |r, c| {
                    if r == c {
                        0.0
                    } else {
                        let (a, b) = (r.min(c), r.max(c));
                        raw[a * n + b]
                    }
                })
            })
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_contracting(w in symmetric(30)) {
            let a = normalize_adjacency(&w).unwrap();
            prop_assert_eq!(a.transpose().unwrap(), a.clone());
            prop_assert!(spectral_radius(&a) <= 1.0 + 1e-9);
        }
    }
}
