use std::collections::VecDeque;

use crate::numcore::Tensor;

use super::RoadNetwork;

/// Pairwise hop counts; `None` marks unreachable pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopMatrix {
    n: usize,
    hops: Vec<Option<u32>>,
}

impl HopMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<u32> {
        self.hops[i * self.n + j]
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn all_reachable(&self) -> bool {
        self.hops.iter().all(Option::is_some)
    }
}

/// Breadth-first search from every road.
pub fn shortest_hop_matrix(net: &RoadNetwork) -> HopMatrix {
    let n = net.road_count();
    let adj = net.neighbors();
    let mut hops = vec![None; n * n];
    let mut queue = VecDeque::new();
    for src in 0..n {
        let row = &mut hops[src * n..(src + 1) * n];
        row[src] = Some(0);
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = row[u].expect("queued nodes are reached");
            for &v in &adj[u] {
                if row[v].is_none() {
                    row[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
    }
    HopMatrix { n, hops }
}

/// `1 / hops(i, j)` off the diagonal, 0 for unreachable pairs.
pub fn build_topological(net: &RoadNetwork) -> Tensor {
    let hops = shortest_hop_matrix(net);
    let n = net.road_count();
    Tensor::from_fn(n, n, |i, j| match hops.get(i, j) {
        Some(h) if h > 0 => 1.0 / h as f64,
        _ => 0.0,
    })
}

/// Minimum total road length over paths from `src`, counting both endpoints.
fn path_lengths_from(src: usize, lengths: &[f64], adj: &[Vec<usize>]) -> Vec<f64> {
    let n = lengths.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[src] = lengths[src];
    for _ in 0..n {
        let mut u = None;
        for v in 0..n {
            if !done[v] && dist[v].is_finite() && u.is_none_or(|u: usize| dist[v] < dist[u]) {
                u = Some(v);
            }
        }
        let Some(u) = u else { break };
        done[u] = true;
        for &v in &adj[u] {
            let candidate = dist[u] + lengths[v];
            if candidate < dist[v] {
                dist[v] = candidate;
            }
        }
    }
    dist
}

/// `(len_i + len_j) / Σ len over the shortest path`, endpoints included.
///
/// The path minimizes total road length. Adjacent roads get exactly 1 and
/// unreachable pairs get 0.
pub fn build_weighted_topological(net: &RoadNetwork) -> Tensor {
    let n = net.road_count();
    let adj = net.neighbors();
    let lengths = net.lengths();
    let mut w = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let dist = path_lengths_from(i, lengths, &adj);
        for j in i + 1..n {
            if dist[j].is_finite() {
                let v = ((lengths[i] + lengths[j]) / dist[j]).min(1.0);
                w.set(i, j, v);
                w.set(j, i, v);
            }
        }
    }
    w
}
