//! Classification metrics over ordinal grades (`1..=class_count`).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEGENERATE_TOL: f64 = 1e-12;

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("no grades to score".into()));
    }
    Ok(())
}

/// Counts of (true grade, predicted grade).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_count: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_grades(pred: &[usize], truth: &[usize], class_count: usize) -> Result<Self> {
        check_pair(pred, truth)?;
        if class_count == 0 {
            return Err(Error::invalid("class count must be positive"));
        }
        let mut counts = vec![0u64; class_count * class_count];
        for (&p, &t) in pred.iter().zip(truth) {
            for g in [p, t] {
                if g == 0 || g > class_count {
                    return Err(Error::invalid(format!(
                        "grade {g} outside 1..={class_count}"
                    )));
                }
            }
            counts[(t - 1) * class_count + (p - 1)] += 1;
        }
        Ok(ConfusionMatrix {
            class_count,
            counts,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Count for true grade `t` and predicted grade `p` (both 1-based).
    pub fn count(&self, t: usize, p: usize) -> u64 {
        self.counts[(t - 1) * self.class_count + (p - 1)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Row-major proportions summing to one.
    pub fn proportions(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (1..=self.class_count).map(|g| self.count(g, g)).sum();
        diag as f64 / self.total() as f64
    }

    pub fn quadratic_weighted_kappa(&self) -> Result<f64> {
        kappa_from_proportions(&self.proportions(), self.class_count)
    }
}

/// Agreement weight `1 − ((i − j)/(C − 1))²` for 1-based grades.
pub fn kappa_weight(i: usize, j: usize, class_count: usize) -> f64 {
    if class_count < 2 {
        return 1.0;
    }
    let d = (i as f64 - j as f64) / (class_count - 1) as f64;
    1.0 - d * d
}

/// Quadratic weighted kappa of a row-major proportion matrix (true × predicted).
pub fn kappa_from_proportions(p: &[f64], class_count: usize) -> Result<f64> {
    let c = class_count;
    if c == 0 || p.len() != c * c {
        return Err(Error::shape(
            "proportion matrix must be class_count squared",
        ));
    }
    let row: Vec<f64> = (0..c).map(|i| p[i * c..(i + 1) * c].iter().sum()).collect();
    let col: Vec<f64> = (0..c).map(|j| (0..c).map(|i| p[i * c + j]).sum()).collect();
    let (mut observed, mut expected) = (0.0, 0.0);
    for i in 0..c {
        for j in 0..c {
            let w = kappa_weight(i + 1, j + 1, c);
            observed += w * p[i * c + j];
            expected += w * row[i] * col[j];
        }
    }
    if 1.0 - expected < DEGENERATE_TOL {
        if (1.0 - observed).abs() < DEGENERATE_TOL {
            return Ok(1.0);
        }
        return Err(Error::DegenerateMarginals { observed });
    }
    Ok((observed - expected) / (1.0 - expected))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn quadratic_weighted_kappa(
    pred: &[usize],
    truth: &[usize],
    class_count: usize,
) -> Result<f64> {
    ConfusionMatrix::from_grades(pred, truth, class_count)?.quadratic_weighted_kappa()
}

/// Mean absolute grade error per time point; inputs are road-major `N × T`.
pub fn grade_mae_series(pred: &[usize], truth: &[usize], hours: usize) -> Result<Vec<f64>> {
    check_pair(pred, truth)?;
    if hours == 0 || !pred.len().is_multiple_of(hours) {
        return Err(Error::shape(format!(
            "{} grades do not tile {hours} time points",
            pred.len()
        )));
    }
    let roads = pred.len() / hours;
    Ok((0..hours)
        .map(|t| {
            let total: usize = (0..roads)
                .map(|r| pred[r * hours + t].abs_diff(truth[r * hours + t]))
                .sum();
            total as f64 / roads as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon: usize,
    pub accuracy: f64,
    /// `None` when the marginals are degenerate.
    pub kappa: Option<f64>,
    pub mae_series: Vec<f64>,
}

impl MetricsReport {
    /// Scores road-major `N × T` grade grids.
    pub fn compute(
        pred: &[usize],
        truth: &[usize],
        hours: usize,
        class_count: usize,
        horizon: usize,
    ) -> Result<Self> {
        let confusion = ConfusionMatrix::from_grades(pred, truth, class_count)?;
        let kappa = match confusion.quadratic_weighted_kappa() {
            Ok(k) => Some(k),
            Err(Error::DegenerateMarginals { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            horizon,
            accuracy: confusion.accuracy(),
            kappa,
            mae_series: grade_mae_series(pred, truth, hours)?,
        })
    }

    pub fn write_mae_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "time_index,grade_mae")?;
        for (t, v) in self.mae_series.iter().enumerate() {
            writeln!(out, "{t},{v}")?;
        }
        Ok(())
    }
}
