//! Congestion grading with a self-organizing map.
//!
//! Observations are `[speed, flow]` pairs scaled to `[0, 1]`. The map is a
//! strip of `class_count` nodes; after training, nodes are relabelled by
//! descending mean speed so grade 1 is free flow and grade `class_count`
//! is the most congested.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_timestamp, parse_timestamp, Channel, GradeSeries, TrafficSeries};
use crate::error::{Error, Result};
use crate::exec::{map_range, Parallelism};
use crate::numcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SomParams {
    pub class_count: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Initial learning rate.
    pub learn0: f64,
    /// Initial neighbourhood radius; must exceed 1.
    pub neighbor0: f64,
    pub max_iter: usize,
}

impl Default for SomParams {
    fn default() -> Self {
        SomParams::strip(5)
    }
}

impl SomParams {
    /// A `1 × class_count` grid with the default schedules.
    pub fn strip(class_count: usize) -> Self {
        SomParams {
            class_count,
            grid_rows: 1,
            grid_cols: class_count,
            learn0: 0.1,
            neighbor0: 3.0,
            max_iter: 200,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.grid_rows * self.grid_cols != self.class_count {
            return Err(Error::invalid(format!(
                "grid {}x{} does not hold {} classes",
                self.grid_rows, self.grid_cols, self.class_count
            )));
        }
        if !(self.learn0 > 0.0 && self.neighbor0 > 1.0) || self.max_iter < 2 {
            return Err(Error::invalid(
                "SOM schedules need learn0 > 0, neighbor0 > 1, max_iter >= 2",
            ));
        }
        Ok(())
    }

    /// Neighbourhood radius at iteration `iter` (1-based).
    pub fn radius(&self, iter: usize) -> f64 {
        let decay = self.max_iter as f64 / self.neighbor0.ln();
        self.neighbor0 * (-((iter - 1) as f64) / decay).exp()
    }

    /// Learning rate at iteration `iter` (1-based).
    pub fn learning_rate(&self, iter: usize) -> f64 {
        self.learn0 * (-((iter - 1) as f64) / self.max_iter as f64).exp()
    }
}

/// Trained map: one weight vector per grid node, row-major over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomNetwork {
    params: SomParams,
    weights: Tensor,
}

impl SomNetwork {
    pub fn from_weights(params: SomParams, weights: Tensor) -> Result<Self> {
        params.validate()?;
        if weights.shape().len() != 2 || weights.rows() != params.class_count {
            return Err(Error::shape("one weight row per node is required"));
        }
        Ok(SomNetwork { params, weights })
    }

    pub fn params(&self) -> &SomParams {
        &self.params
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn node_count(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    fn grid_distance(&self, a: usize, b: usize) -> f64 {
        let cols = self.params.grid_cols;
        let (ra, ca) = (a / cols, a % cols);
        let (rb, cb) = (b / cols, b % cols);
        ra.abs_diff(rb).max(ca.abs_diff(cb)) as f64
    }

    /// Nearest node by Euclidean distance, lowest index on ties.
    pub fn winner(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..self.node_count() {
            let d: f64 = self
                .weights
                .row(j)
                .iter()
                .zip(x)
                .map(|(w, v)| (w - v).powi(2))
                .sum();
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        best
    }

    /// Copy with nodes reordered so that new node `g` is old node `order[g]`.
    pub fn reordered(&self, order: &[usize]) -> Result<SomNetwork> {
        if !is_permutation(order, self.node_count()) {
            return Err(Error::invalid("node order is not a permutation"));
        }
        let rows: Vec<Tensor> = order
            .iter()
            .map(|&j| self.weights.slice_rows(j, j + 1))
            .collect::<Result<_>>()?;
        SomNetwork::from_weights(self.params, Tensor::concat_rows(&rows)?)
    }
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    p.len() == n
        && p.iter()
            .all(|&j| j < n && !std::mem::replace(&mut seen[j], true))
}

fn check_samples(samples: &Tensor) -> Result<()> {
    if samples.shape().len() != 2 {
        return Err(Error::shape(
            "samples must be a matrix with one row per observation",
        ));
    }
    if samples.rows() == 0 {
        return Err(Error::Empty("no SOM samples".into()));
    }
    if !samples.is_finite() {
        return Err(Error::NonFinite("SOM samples".into()));
    }
    Ok(())
}

/// Trains the map on `samples` (one observation per row), visiting samples
/// in order each iteration.
///
/// Nodes closer to the winner than the current radius `r` move towards the
/// sample by `rate · exp(−d² / 2σ²)` with `σ = r / neighbor0`, so the
/// coupling between adjacent nodes fades as the radius shrinks; the winner
/// always moves by `rate`.
pub fn som_train(samples: &Tensor, params: &SomParams, seed: u64) -> Result<SomNetwork> {
    params.validate()?;
    check_samples(samples)?;
    let dim = samples.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<f64> = (0..params.class_count * dim)
        .map(|_| rng.random::<f64>())
        .collect();
    let mut som =
        SomNetwork::from_weights(*params, Tensor::matrix(params.class_count, dim, init)?)?;
    for iter in 1..params.max_iter {
        let rate = params.learning_rate(iter);
        let radius = params.radius(iter);
        for s in 0..samples.rows() {
            let x = samples.row(s);
            let win = som.winner(x);
            for j in 0..som.node_count() {
                let d = som.grid_distance(win, j);
                if j != win && d >= radius {
                    continue;
                }
                let width = radius / params.neighbor0;
                let step = rate * (-d * d / (2.0 * width * width)).exp();
                let row = &mut som.weights.data_mut()[j * dim..(j + 1) * dim];
                for (w, v) in row.iter_mut().zip(x) {
                    *w += step * (v - *w);
                }
            }
        }
    }
    Ok(som)
}

/// Winning node index (0-based) for every sample row.
pub fn som_assign(som: &SomNetwork, samples: &Tensor, mode: Parallelism) -> Result<Vec<usize>> {
    check_samples(samples)?;
    if samples.cols() != som.dim() {
        return Err(Error::shape(format!(
            "sample dimension {} but node dimension {}",
            samples.cols(),
            som.dim()
        )));
    }
    Ok(map_range(samples.rows(), mode, |s| {
        som.winner(samples.row(s))
    }))
}

/// Node order by descending mean speed of assigned samples: entry `g` is
/// the node that becomes grade `g + 1`.
///
/// `speed_column` selects the speed feature. Nodes without samples are
/// ranked by the speed component of their weight; ties keep node order.
pub fn ordinalize(
    som: &SomNetwork,
    samples: &Tensor,
    assignment: &[usize],
    speed_column: usize,
) -> Result<Vec<usize>> {
    if assignment.is_empty() || assignment.len() != samples.rows() {
        return Err(Error::Empty(
            "ordinalize needs one assignment per sample".into(),
        ));
    }
    if speed_column >= som.dim() || samples.cols() != som.dim() {
        return Err(Error::shape("speed column outside the feature vector"));
    }
    let k = som.node_count();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (s, &node) in assignment.iter().enumerate() {
        if node >= k {
            return Err(Error::invalid(format!("node {node} outside 0..{k}")));
        }
        sums[node] += samples.at(s, speed_column);
        counts[node] += 1;
    }
    let key: Vec<f64> = (0..k)
        .map(|j| {
            if counts[j] > 0 {
                sums[j] / counts[j] as f64
            } else {
                som.weights.at(j, speed_column)
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| key[b].total_cmp(&key[a]));
    Ok(order)
}

/// A map whose node `g` is grade `g + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grader {
    som: SomNetwork,
}

impl Grader {
    pub fn som(&self) -> &SomNetwork {
        &self.som
    }

    pub fn class_count(&self) -> usize {
        self.som.node_count()
    }

    /// Trains on every observation of a `[0, 1]`-scaled series and orders grades by speed.
    pub fn fit(
        series: &TrafficSeries,
        params: &SomParams,
        seed: u64,
        mode: Parallelism,
    ) -> Result<Grader> {
        let samples = observations(series)?;
        let som = som_train(&samples, params, seed)?;
        let assignment = som_assign(&som, &samples, mode)?;
        let order = ordinalize(&som, &samples, &assignment, Channel::Speed as usize)?;
        Ok(Grader {
            som: som.reordered(&order)?,
        })
    }

    pub fn grade(&self, series: &TrafficSeries, mode: Parallelism) -> Result<GradeSeries> {
        let samples = observations(series)?;
        let nodes = som_assign(&self.som, &samples, mode)?;
        GradeSeries::new(
            self.class_count(),
            series.hours(),
            nodes.into_iter().map(|n| n + 1).collect(),
        )
    }
}

/// `[speed, flow]` rows in road-major order.
pub fn observations(series: &TrafficSeries) -> Result<Tensor> {
    series
        .values()
        .reshape(&[series.road_count() * series.hours(), Channel::ALL.len()])
}

/// Writes `road_id,timestamp,grade` rows.
pub fn write_grades(
    series: &TrafficSeries,
    grades: &GradeSeries,
    mut out: impl Write,
) -> Result<()> {
    if grades.road_count() != series.road_count() || grades.hours() != series.hours() {
        return Err(Error::shape("grades do not match the series"));
    }
    writeln!(out, "road_id,timestamp,grade")?;
    for (r, id) in series.road_ids().iter().enumerate() {
        for t in 0..series.hours() {
            writeln!(
                out,
                "{id},{},{}",
                format_timestamp(series.timestamp(t)),
                grades.grade(r, t)
            )?;
        }
    }
    Ok(())
}

/// Reads grades written by [`write_grades`]; every (road, hour) of `series` must appear once.
pub fn read_grades(
    reader: impl Read,
    source: &str,
    series: &TrafficSeries,
    class_count: usize,
) -> Result<GradeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source, 1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["road_id", "timestamp", "grade"] {
        return Err(Error::parse(
            source,
            1,
            "expected header road_id,timestamp,grade",
        ));
    }
    let roads: HashMap<&str, usize> = series
        .road_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let hours = series.hours();
    let mut grades = vec![0usize; series.road_count() * hours];
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(source, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(Error::parse(source, line, "expected 3 fields"));
        }
        let road = *roads
            .get(&record[0])
            .ok_or_else(|| Error::parse(source, line, format!("unknown road '{}'", &record[0])))?;
        let ts = parse_timestamp(&record[1])
            .ok_or_else(|| Error::parse(source, line, format!("bad timestamp '{}'", &record[1])))?;
        let offset = (ts - series.start()).num_hours();
        if offset < 0 || offset as usize >= hours || series.timestamp(offset as usize) != ts {
            return Err(Error::parse(
                source,
                line,
                format!("timestamp {} outside the series", &record[1]),
            ));
        }
        let grade: usize = record[2].parse().map_err(|_| {
            Error::parse(
                source,
                line,
                format!("grade '{}' is not an integer", &record[2]),
            )
        })?;
        if grade == 0 || grade > class_count {
            return Err(Error::parse(
                source,
                line,
                format!("grade {grade} outside 1..={class_count}"),
            ));
        }
        let cell = &mut grades[road * hours + offset as usize];
        if *cell != 0 {
            return Err(Error::parse(source, line, "duplicate road and hour"));
        }
        *cell = grade;
    }
    if let Some(missing) = grades.iter().position(|&g| g == 0) {
        return Err(Error::parse(
            source,
            0,
            format!(
                "no grade for road {} at {}",
                series.road_ids()[missing / hours],
                format_timestamp(series.timestamp(missing % hours))
            ),
        ));
    }
    GradeSeries::new(class_count, hours, grades)
}
