//! Road graphs, graph-convolution normalization and Moran's I.

mod dtw;
mod moran;
mod normalize;
mod similarity;
mod topology;

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::TrafficSeries;
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::numcore::Tensor;

pub use dtw::dtw_distance;
pub use moran::{global_morans_i, local_morans_i, ConnectivityWeights};
pub use normalize::normalize_adjacency;
pub use similarity::{
    attribute_weight, build_attribute_graph, build_pattern_graph, pattern_weight, PatternParams,
};
pub use topology::{build_topological, build_weighted_topological, shortest_hop_matrix, HopMatrix};

/// Undirected road network; nodes are roads with positive lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    ids: Vec<String>,
    lengths: Vec<f64>,
    edges: Vec<(usize, usize)>,
}

impl RoadNetwork {
    /// Validates and stores the network; duplicate edges are merged and each
    /// edge is stored as `(min, max)`.
    pub fn new(ids: Vec<String>, lengths: Vec<f64>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::Empty("road network without roads".into()));
        }
        if lengths.len() != n {
            return Err(Error::shape(format!(
                "{} lengths for {n} roads",
                lengths.len()
            )));
        }
        if let Some(l) = lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!("road length {l} must be positive")));
        }
        let mut seen = BTreeSet::new();
        let mut clean = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a}, {b}) outside 0..{n}")));
            }
            if a == b {
                return Err(Error::invalid(format!("self-edge on road {a}")));
            }
            let e = (a.min(b), a.max(b));
            if seen.insert(e) {
                clean.push(e);
            }
        }
        Ok(RoadNetwork {
            ids,
            lengths,
            edges: clean,
        })
    }

    pub fn road_count(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.road_count()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

/// The four graph types, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphKind {
    Topological,
    WeightedTopological,
    Pattern,
    Attribute,
}

impl GraphKind {
    pub const ALL: [GraphKind; 4] = [
        GraphKind::Topological,
        GraphKind::WeightedTopological,
        GraphKind::Pattern,
        GraphKind::Attribute,
    ];

    pub fn letter(self) -> char {
        match self {
            GraphKind::Topological => 'r',
            GraphKind::WeightedTopological => 'w',
            GraphKind::Pattern => 'p',
            GraphKind::Attribute => 's',
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            GraphKind::Topological => "W_r",
            GraphKind::WeightedTopological => "W_w",
            GraphKind::Pattern => "W_p",
            GraphKind::Attribute => "W_s",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Raw adjacency matrices and their graph-convolution normalizations.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSet {
    raw: [Tensor; 4],
    normalized: [Tensor; 4],
}

/// Checks that `w` is square and symmetric with a zero diagonal and entries in `[0, 1]`.
pub fn check_adjacency(w: &Tensor) -> Result<()> {
    let s = w.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::shape(format!("adjacency must be square, got {s:?}")));
    }
    let n = s[0];
    for i in 0..n {
        if w.at(i, i) != 0.0 {
            return Err(Error::invalid(format!("nonzero diagonal at {i}")));
        }
        for j in 0..n {
            let v = w.at(i, j);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "entry ({i}, {j}) = {v} outside [0, 1]"
                )));
            }
            if v != w.at(j, i) {
                return Err(Error::invalid(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

impl GraphSet {
    /// Takes raw matrices in [`GraphKind::ALL`] order.
    pub fn from_raw(raw: [Tensor; 4]) -> Result<Self> {
        let n = raw[0].rows();
        for w in &raw {
            check_adjacency(w)?;
            if w.rows() != n {
                return Err(Error::shape("graphs disagree on road count"));
            }
        }
        let normalized = [
            normalize_adjacency(&raw[0])?,
            normalize_adjacency(&raw[1])?,
            normalize_adjacency(&raw[2])?,
            normalize_adjacency(&raw[3])?,
        ];
        Ok(GraphSet { raw, normalized })
    }

    /// Builds all four graphs; the similarity graphs are averaged over `window`.
    pub fn build(
        net: &RoadNetwork,
        history: &TrafficSeries,
        window: std::ops::Range<usize>,
        params: &PatternParams,
        mode: Parallelism,
    ) -> Result<Self> {
        GraphSet::from_raw([
            build_topological(net),
            build_weighted_topological(net),
            build_pattern_graph(history, params, window.clone(), mode)?,
            build_attribute_graph(history, net, window)?,
        ])
    }

    pub fn road_count(&self) -> usize {
        self.raw[0].rows()
    }

    pub fn raw(&self, kind: GraphKind) -> &Tensor {
        &self.raw[kind.index()]
    }

    pub fn normalized(&self, kind: GraphKind) -> &Tensor {
        &self.normalized[kind.index()]
    }

    /// Replaces one normalized operator directly (used for perturbation studies).
    pub fn with_normalized(&self, kind: GraphKind, operator: Tensor) -> Result<GraphSet> {
        if operator.shape() != self.normalized[kind.index()].shape() {
            return Err(Error::shape("replacement operator has the wrong shape"));
        }
        let mut out = self.clone();
        out.normalized[kind.index()] = operator;
        Ok(out)
    }
}

/// Writes an `N × N` matrix as CSV with a header row of road ids.
pub fn write_matrix_csv(w: &Tensor, ids: &[String], mut out: impl Write) -> Result<()> {
    if w.shape() != [ids.len(), ids.len()] {
        return Err(Error::shape("matrix does not match road ids"));
    }
    writeln!(out, "{}", ids.join(","))?;
    for r in 0..w.rows() {
        let row: Vec<String> = w.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`]; returns the ids and matrix.
pub fn read_matrix_csv(reader: impl Read, source: &str) -> Result<(Vec<String>, Tensor)> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(source, 1, "empty file"))??;
    let ids: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let n = ids.len();
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(source, lineno, e.to_string()))?;
        if row.len() != n {
            return Err(Error::parse(source, lineno, format!("expected {n} values")));
        }
        data.extend(row);
        rows += 1;
    }
    if rows != n {
        return Err(Error::parse(
            source,
            rows + 1,
            format!("expected {n} rows, found {rows}"),
        ));
    }
    Ok((ids, Tensor::matrix(n, n, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_validation() {
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(RoadNetwork::new(ids.clone(), vec![1.0, 0.0], vec![]).is_err());
        assert!(RoadNetwork::new(ids.clone(), vec![1.0, 1.0], vec![(0, 0)]).is_err());
        assert!(RoadNetwork::new(ids.clone(), vec![1.0, 1.0], vec![(0, 2)]).is_err());
        let net = RoadNetwork::new(ids, vec![1.0, 1.0], vec![(1, 0), (0, 1)]).unwrap();
        assert_eq!(net.edges(), &[(0, 1)]);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let ids: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let w = Tensor::from_fn(3, 3, |r, c| if r == c { 0.0 } else { 1.0 / (r + c) as f64 });
        let mut buf = Vec::new();
        write_matrix_csv(&w, &ids, &mut buf).unwrap();
        let (ids2, w2) = read_matrix_csv(buf.as_slice(), "w.csv").unwrap();
        assert_eq!(ids, ids2);
        assert_eq!(w, w2);
    }

    #[test]
    fn adjacency_checks() {
        let bad = Tensor::matrix(2, 2, vec![0.0, 0.5, 0.4, 0.0]).unwrap();
        assert!(check_adjacency(&bad).is_err());
        let bad = Tensor::matrix(2, 2, vec![0.1, 0.5, 0.5, 0.0]).unwrap();
        assert!(check_adjacency(&bad).is_err());
        let ok = Tensor::matrix(2, 2, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        assert!(check_adjacency(&ok).is_ok());
    }
}
