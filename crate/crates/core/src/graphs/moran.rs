use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::RoadNetwork;

/// Binary road-connectivity matrix and its connection count.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityWeights {
    weights: Tensor,
    connections: usize,
}

impl ConnectivityWeights {
    pub fn from_network(net: &RoadNetwork) -> Self {
        let n = net.road_count();
        let mut weights = Tensor::zeros(&[n, n]);
        for &(a, b) in net.edges() {
            weights.set(a, b, 1.0);
            weights.set(b, a, 1.0);
        }
        ConnectivityWeights {
            weights,
            connections: 2 * net.edges().len(),
        }
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    /// Count of nonzero entries (each undirected edge counts twice).
    pub fn connections(&self) -> usize {
        self.connections
    }

    pub fn road_count(&self) -> usize {
        self.weights.rows()
    }
}

/// Deviations from the mean and their sum of squares, after validation.
fn deviations(x: &[f64], conn: &ConnectivityWeights) -> Result<(Vec<f64>, f64)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("Moran's I needs at least two roads"));
    }
    if conn.road_count() != n {
        return Err(Error::shape(format!(
            "{n} values for {} roads",
            conn.road_count()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Moran's I input".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ss: f64 = dev.iter().map(|d| d * d).sum();
    if !(ss > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok((dev, ss))
}

pub fn global_morans_i(x: &[f64], conn: &ConnectivityWeights) -> Result<f64> {
    let (dev, ss) = deviations(x, conn)?;
    if conn.connections() == 0 {
        return Err(Error::NoConnections);
    }
    let n = x.len();
    let w = conn.weights();
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            cross += w.at(i, j) * dev[i] * dev[j];
        }
    }
    Ok(n as f64 / conn.connections() as f64 * cross / ss)
}

/// Local index per road; the denominator is the squared mean squared deviation.
pub fn local_morans_i(x: &[f64], conn: &ConnectivityWeights) -> Result<Vec<f64>> {
    let (dev, ss) = deviations(x, conn)?;
    if conn.connections() == 0 {
        return Err(Error::NoConnections);
    }
    let n = x.len();
    let denom = (ss / n as f64).powi(2);
    let w = conn.weights();
    Ok((0..n)
        .map(|i| {
            let lag: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| w.at(i, j) * dev[j])
                .sum();
            dev[i] * lag / denom
        })
        .collect())
}
