//! Importance of the spatial-temporal combinations, read off the fusion
//! layer's attention.
//!
//! The attention tensor `[heads, T, T, d]` is summed over heads and
//! features into a `T × T` matrix, softmaxed over all cells into a
//! heatmap, summed per column (or per row) and softmaxed again into one
//! importance per combination. Importances are then grouped by
//! resolution and by graph.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Resolution;
use crate::error::{Error, Result};
use crate::graphs::GraphKind;
use crate::model::{Combination, ForwardTrace};
use crate::numcore::{softmax, Tensor};

const NORMALIZATION_TOL: f64 = 1e-9;

/// Which heatmap axis is summed into a combination's importance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SumAxis {
    /// Attention received by the combination (the attended-to axis).
    #[default]
    Columns,
    /// Attention paid by the combination.
    Rows,
}

impl FromStr for SumAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "columns" | "column" | "col" => Ok(SumAxis::Columns),
            "rows" | "row" => Ok(SumAxis::Rows),
            other => Err(Error::invalid(format!("unknown sum axis '{other}'"))),
        }
    }
}

/// Grouping used by [`decouple`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoupleAxis {
    Resolution,
    Graph,
}

impl FromStr for DecoupleAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resolution" => Ok(DecoupleAxis::Resolution),
            "graph" => Ok(DecoupleAxis::Graph),
            other => Err(Error::invalid(format!("unknown decoupling axis '{other}'"))),
        }
    }
}

/// Fusion-layer attention together with the combination labels of its axes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    attention: Tensor,
    combinations: Vec<Combination>,
}

impl AttentionRecord {
    /// Checks the `[heads, T, T, d]` shape, that `T` matches the labels and
    /// that every attention row is a distribution over its third axis.
    pub fn new(attention: Tensor, combinations: Vec<Combination>) -> Result<Self> {
        let shape = attention.shape();
        if shape.len() != 4 || shape[1] != shape[2] {
            return Err(Error::shape(format!(
                "attention must be [h, T, T, d], got {shape:?}"
            )));
        }
        if shape[1] != combinations.len() {
            return Err(Error::shape(format!(
                "{} combinations for attention over {}",
                combinations.len(),
                shape[1]
            )));
        }
        if shape.contains(&0) {
            return Err(Error::Empty("attention tensor".into()));
        }
        if !attention.is_finite() {
            return Err(Error::NonFinite("attention tensor".into()));
        }
        let (h, t, d) = (shape[0], shape[1], shape[3]);
        let data = attention.data();
        for i in 0..h {
            for q in 0..t {
                for k in 0..d {
                    let total: f64 = (0..t).map(|p| data[((i * t + q) * t + p) * d + k]).sum();
                    if (total - 1.0).abs() > NORMALIZATION_TOL {
                        return Err(Error::invalid(format!(
                            "attention of head {i}, combination {q}, feature {k} sums to {total}"
                        )));
                    }
                }
            }
        }
        Ok(AttentionRecord {
            attention,
            combinations,
        })
    }

    pub fn from_trace(trace: &ForwardTrace, combinations: Vec<Combination>) -> Result<Self> {
        Self::new(trace.attention.clone(), combinations)
    }

    /// Elementwise mean of several records over the same combinations.
    pub fn mean(records: &[AttentionRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Empty("no attention records".into()))?;
        let mut total = Tensor::zeros(first.attention.shape());
        for r in records {
            if r.combinations != first.combinations {
                return Err(Error::invalid("records cover different combinations"));
            }
            total.add_assign(&r.attention)?;
        }
        Self::new(
            total.scale(1.0 / records.len() as f64),
            first.combinations.clone(),
        )
    }

    pub fn attention(&self) -> &Tensor {
        &self.attention
    }

    pub fn combinations(&self) -> &[Combination] {
        &self.combinations
    }
}

/// `A'[t, t'] = Σ_heads Σ_features A[head, t, t', feature]`.
pub fn aggregate_attention(attention: &Tensor) -> Result<Tensor> {
    let shape = attention.shape();
    if shape.len() != 4 || shape[1] != shape[2] {
        return Err(Error::shape(format!(
            "attention must be [h, T, T, d], got {shape:?}"
        )));
    }
    let (h, t, d) = (shape[0], shape[1], shape[3]);
    let data = attention.data();
    let mut out = vec![0.0; t * t];
    for i in 0..h {
        for cell in 0..t * t {
            let base = (i * t * t + cell) * d;
            out[cell] += data[base..base + d].iter().sum::<f64>();
        }
    }
    Tensor::matrix(t, t, out)
}

/// Softmax over every cell of the matrix, so the whole heatmap sums to one.
pub fn normalize_heatmap(aggregated: &Tensor) -> Result<Tensor> {
    if aggregated.shape().len() != 2 {
        return Err(Error::shape("heatmap input must be a matrix"));
    }
    let cells = softmax(aggregated.data())?;
    Tensor::new(aggregated.shape().to_vec(), cells)
}

/// Heatmap sums along `axis`, one per combination, before the softmax.
pub fn combination_totals(heatmap: &Tensor, axis: SumAxis) -> Result<Vec<f64>> {
    if heatmap.shape().len() != 2 || heatmap.rows() != heatmap.cols() {
        return Err(Error::shape("heatmap must be square"));
    }
    let t = heatmap.rows();
    Ok((0..t)
        .map(|j| match axis {
            SumAxis::Columns => (0..t).map(|i| heatmap.at(i, j)).sum(),
            SumAxis::Rows => heatmap.row(j).iter().sum(),
        })
        .collect())
}

/// Softmax of the per-combination heatmap totals.
pub fn combination_importance(heatmap: &Tensor, axis: SumAxis) -> Result<Vec<f64>> {
    softmax(&combination_totals(heatmap, axis)?)
}

/// Group labels present among `combinations`, in canonical order.
pub fn group_labels(combinations: &[Combination], axis: DecoupleAxis) -> Vec<char> {
    let all: Vec<char> = match axis {
        DecoupleAxis::Resolution => Resolution::ALL.iter().map(|r| r.letter()).collect(),
        DecoupleAxis::Graph => GraphKind::ALL.iter().map(|g| g.letter()).collect(),
    };
    all.into_iter()
        .filter(|&l| combinations.iter().any(|c| group_of(c, axis) == l))
        .collect()
}

fn group_of(c: &Combination, axis: DecoupleAxis) -> char {
    match axis {
        DecoupleAxis::Resolution => c.resolution.letter(),
        DecoupleAxis::Graph => c.graph.letter(),
    }
}

/// Sum of the importances of each group's members, in [`group_labels`] order.
pub fn group_sums(
    importance: &[f64],
    combinations: &[Combination],
    axis: DecoupleAxis,
) -> Result<Vec<f64>> {
    if importance.len() != combinations.len() {
        return Err(Error::shape(format!(
            "{} importances for {} combinations",
            importance.len(),
            combinations.len()
        )));
    }
    Ok(group_labels(combinations, axis)
        .into_iter()
        .map(|label| {
            combinations
                .iter()
                .zip(importance)
                .filter(|(c, _)| group_of(c, axis) == label)
                .map(|(_, v)| v)
                .sum()
        })
        .collect())
}

/// Group sums renormalized with a softmax.
pub fn decouple(
    importance: &[f64],
    combinations: &[Combination],
    axis: DecoupleAxis,
) -> Result<Vec<f64>> {
    softmax(&group_sums(importance, combinations, axis)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledValue {
    pub label: String,
    pub value: f64,
}

fn labeled(labels: impl IntoIterator<Item = String>, values: &[f64]) -> Vec<LabeledValue> {
    labels
        .into_iter()
        .zip(values)
        .map(|(label, &value)| LabeledValue { label, value })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub prediction_length: usize,
    pub sum_axis: SumAxis,
    /// Head- and feature-summed attention, row-major `T × T`.
    pub aggregated: Vec<Vec<f64>>,
    pub heatmap: Vec<Vec<f64>>,
    pub combination_importance: Vec<LabeledValue>,
    pub resolution_importance: Vec<LabeledValue>,
    pub graph_importance: Vec<LabeledValue>,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

impl ImportanceReport {
    pub fn from_record(
        record: &AttentionRecord,
        prediction_length: usize,
        axis: SumAxis,
    ) -> Result<Self> {
        let combos = record.combinations();
        let aggregated = aggregate_attention(record.attention())?;
        let heatmap = normalize_heatmap(&aggregated)?;
        let importance = combination_importance(&heatmap, axis)?;
        let by_res = decouple(&importance, combos, DecoupleAxis::Resolution)?;
        let by_graph = decouple(&importance, combos, DecoupleAxis::Graph)?;
        let letters = |a| group_labels(combos, a).into_iter().map(String::from);
        Ok(ImportanceReport {
            prediction_length,
            sum_axis: axis,
            aggregated: rows_of(&aggregated),
            heatmap: rows_of(&heatmap),
            combination_importance: labeled(combos.iter().map(Combination::label), &importance),
            resolution_importance: labeled(letters(DecoupleAxis::Resolution), &by_res),
            graph_importance: labeled(letters(DecoupleAxis::Graph), &by_graph),
        })
    }

    /// Labels in descending importance; ties keep canonical order.
    pub fn resolution_ranking(&self) -> Vec<String> {
        ranking(&self.resolution_importance)
    }

    pub fn graph_ranking(&self) -> Vec<String> {
        ranking(&self.graph_importance)
    }

    pub fn write_json(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Long-format heatmap: one `row,col,value` line per cell, labeled by combination.
    pub fn write_heatmap_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "col", "value"]).map_err(csv_err)?;
        for (i, row) in self.heatmap.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let r = &self.combination_importance[i].label;
                let c = &self.combination_importance[j].label;
                w.write_record([r.as_str(), c.as_str(), &v.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn ranking(values: &[LabeledValue]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].value.total_cmp(&values[a].value).then(a.cmp(&b)));
    idx.into_iter().map(|i| values[i].label.clone()).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
