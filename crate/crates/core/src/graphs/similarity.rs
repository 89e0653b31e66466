//! Traffic-pattern and attribute similarity graphs.
//!
//! Both graphs are defined per time slice (hourly anchors for the pattern
//! graph, days for the attribute graph) and averaged over the window into
//! one static matrix.

use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, TrafficSeries};
use crate::error::{Error, Result};
use crate::exec::{map_range, Parallelism};
use crate::numcore::Tensor;

use super::{dtw_distance, RoadNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    pub alpha_speed: f64,
    pub alpha_flow: f64,
    /// Length of each historical pattern in hours.
    pub history_len: usize,
}

impl Default for PatternParams {
    fn default() -> Self {
        PatternParams {
            alpha_speed: 1e-2,
            alpha_flow: 1e-4,
            history_len: 24,
        }
    }
}

/// Mean of the per-channel kernels `exp(−α_c · dist_c)`.
pub fn pattern_weight(dist_speed: f64, dist_flow: f64, params: &PatternParams) -> f64 {
    0.5 * ((-params.alpha_speed * dist_speed).exp() + (-params.alpha_flow * dist_flow).exp())
}

fn pair_index(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

/// DTW-similarity graph of raw speed/flow histories, averaged over every
/// hourly anchor in `window` that has `history_len` hours of history inside it.
pub fn build_pattern_graph(
    history: &TrafficSeries,
    params: &PatternParams,
    window: std::ops::Range<usize>,
    mode: Parallelism,
) -> Result<Tensor> {
    if !(params.alpha_speed > 0.0 && params.alpha_flow > 0.0) {
        return Err(Error::invalid("DTW attenuation rates must be positive"));
    }
    let len = params.history_len;
    if len == 0 || window.end > history.hours() || window.len() < len {
        return Err(Error::InsufficientHistory(format!(
            "pattern window {window:?} shorter than history length {len}"
        )));
    }
    let n = history.road_count();
    let roads: Vec<[Vec<f64>; 2]> = (0..n)
        .map(|r| {
            [
                history.channel_slice(r, Channel::Speed, window.clone()),
                history.channel_slice(r, Channel::Flow, window.clone()),
            ]
        })
        .collect();
    let anchors = window.len() - len + 1;
    let pairs = pair_index(n);
    let weights: Vec<Result<f64>> = map_range(pairs.len(), mode, |k| {
        let (i, j) = pairs[k];
        let mut total = 0.0;
        for a in 0..anchors {
            let span = a..a + len;
            let ds = dtw_distance(&roads[i][0][span.clone()], &roads[j][0][span.clone()])?;
            let df = dtw_distance(&roads[i][1][span.clone()], &roads[j][1][span])?;
            total += pattern_weight(ds, df, params);
        }
        Ok(total / anchors as f64)
    });
    let mut w = Tensor::zeros(&[n, n]);
    for (&(i, j), v) in pairs.iter().zip(weights) {
        let v = v?;
        w.set(i, j, v);
        w.set(j, i, v);
    }
    Ok(w)
}

/// `exp(−Σ (a_k − b_k)²)` over `[max flow, max speed, length]`.
pub fn attribute_weight(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
    (-dist).exp()
}

fn normalize_across_roads(v: &mut [f64]) {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    for x in v {
        *x = if range > 0.0 { (*x - min) / range } else { 0.0 };
    }
}

/// Attribute-similarity graph averaged over the complete days in `window`.
///
/// Per day, each road's maximum flow and maximum speed are min-max
/// normalized across roads (all zero when every road ties); road length
/// enters unscaled.
pub fn build_attribute_graph(
    history: &TrafficSeries,
    net: &RoadNetwork,
    window: std::ops::Range<usize>,
) -> Result<Tensor> {
    let n = history.road_count();
    if net.road_count() != n {
        return Err(Error::shape("network and series disagree on road count"));
    }
    let days = history.day_starts(window.clone());
    if days.is_empty() {
        return Err(Error::InsufficientHistory(format!(
            "window {window:?} holds no complete day"
        )));
    }
    let mut w = Tensor::zeros(&[n, n]);
    for &start in &days {
        let day = start..start + 24;
        let mut max_flow: Vec<f64> = (0..n)
            .map(|r| {
                day.clone()
                    .map(|t| history.value(r, t, Channel::Flow))
                    .fold(f64::MIN, f64::max)
            })
            .collect();
        let mut max_speed: Vec<f64> = (0..n)
            .map(|r| {
                day.clone()
                    .map(|t| history.value(r, t, Channel::Speed))
                    .fold(f64::MIN, f64::max)
            })
            .collect();
        normalize_across_roads(&mut max_flow);
        normalize_across_roads(&mut max_speed);
        for i in 0..n {
            for j in i + 1..n {
                let a = [max_flow[i], max_speed[i], net.lengths()[i]];
                let b = [max_flow[j], max_speed[j], net.lengths()[j]];
                let v = w.at(i, j) + attribute_weight(a, b);
                w.set(i, j, v);
            }
        }
    }
    let scale = 1.0 / days.len() as f64;
    for i in 0..n {
        for j in i + 1..n {
            let v = w.at(i, j) * scale;
            w.set(i, j, v);
            w.set(j, i, v);
        }
    }
    Ok(w)
}
