use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Channel, TrafficSeries};

/// Per-channel min/max fitted on a training range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScaling {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl ChannelScaling {
    pub fn fit(series: &TrafficSeries, fit_range: std::ops::Range<usize>) -> Result<Self> {
        if fit_range.is_empty() || fit_range.end > series.hours() {
            return Err(Error::invalid(format!(
                "fit range {fit_range:?} invalid for {} hours",
                series.hours()
            )));
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for road in 0..series.road_count() {
            for t in fit_range.clone() {
                for c in Channel::ALL {
                    let v = series.value(road, t, c);
                    min[c as usize] = min[c as usize].min(v);
                    max[c as usize] = max[c as usize].max(v);
                }
            }
        }
        for c in Channel::ALL {
            if max[c as usize] <= min[c as usize] {
                return Err(Error::DegenerateVariance);
            }
        }
        Ok(ChannelScaling { min, max })
    }

    /// Maps a raw value into `[0, 1]`, clamping values outside the fitted range.
    pub fn apply(&self, channel: Channel, v: f64) -> f64 {
        let c = channel as usize;
        ((v - self.min[c]) / (self.max[c] - self.min[c])).clamp(0.0, 1.0)
    }

    pub fn invert(&self, channel: Channel, v: f64) -> f64 {
        let c = channel as usize;
        self.min[c] + v * (self.max[c] - self.min[c])
    }
}

/// Min-max normalizes both channels with statistics from `fit_range` only.
pub fn minmax_normalize(
    series: &TrafficSeries,
    fit_range: std::ops::Range<usize>,
) -> Result<TrafficSeries> {
    let scaling = ChannelScaling::fit(series, fit_range)?;
    Ok(normalize_with(series, scaling))
}

pub(crate) fn normalize_with(series: &TrafficSeries, scaling: ChannelScaling) -> TrafficSeries {
    let values = series.values().map(|v| v);
    let mut out = series.with_scaling(values, scaling);
    for road in 0..series.road_count() {
        for t in 0..series.hours() {
            for c in Channel::ALL {
                out.set_value(road, t, c, scaling.apply(c, series.value(road, t, c)));
            }
        }
    }
    out
}

impl TrafficSeries {
    /// Undoes [`minmax_normalize`]; values that were clamped stay clamped.
    pub fn denormalize(&self) -> Result<TrafficSeries> {
        let scaling = self
            .scaling()
            .copied()
            .ok_or_else(|| Error::invalid("series is not normalized"))?;
        let mut out = TrafficSeries::new(
            self.road_ids().to_vec(),
            self.start(),
            self.values().clone(),
        )?;
        for road in 0..self.road_count() {
            for t in 0..self.hours() {
                for c in Channel::ALL {
                    out.set_value(road, t, c, scaling.invert(c, self.value(road, t, c)));
                }
            }
        }
        Ok(out)
    }
}
