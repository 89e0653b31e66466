//! Road-level traffic measurements, normalization and the
//! three-resolution sample slicing consumed by the model.

mod io;
mod normalize;
mod sample;
mod synthetic;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub use io::{
    format_timestamp, parse_timestamp, read_measurements, read_network, write_measurements,
    write_network,
};
pub use normalize::{minmax_normalize, ChannelScaling};
pub use sample::{
    build_samples, first_anchor, slice_sample, split, Resolution, ResolutionInput,
    ResolutionSample, ResolutionWindows, SplitSizes,
};
pub use synthetic::{generate_synthetic, generate_with, SignalPattern, Synthetic, SyntheticConfig};

/// One of the two measurement channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Speed = 0,
    Flow = 1,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Speed, Channel::Flow];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Speed => "speed",
            Channel::Flow => "flow",
        }
    }
}

/// Per-road, per-hour speed and flow, stored as an `N × T × 2` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSeries {
    road_ids: Vec<String>,
    start: NaiveDateTime,
    values: Tensor,
    scaling: Option<ChannelScaling>,
}

impl TrafficSeries {
    /// Raw measurements; every value must be non-negative.
    pub fn new(road_ids: Vec<String>, start: NaiveDateTime, values: Tensor) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 3 || shape[2] != 2 {
            return Err(Error::shape(format!("series must be N×T×2, got {shape:?}")));
        }
        if shape[0] != road_ids.len() {
            return Err(Error::shape(format!(
                "{} road ids for {} roads",
                road_ids.len(),
                shape[0]
            )));
        }
        if let Some(v) = values.data().iter().find(|v| **v < 0.0) {
            return Err(Error::invalid(format!("negative measurement {v}")));
        }
        Ok(TrafficSeries {
            road_ids,
            start,
            values,
            scaling: None,
        })
    }

    pub(crate) fn with_scaling(&self, values: Tensor, scaling: ChannelScaling) -> Self {
        TrafficSeries {
            road_ids: self.road_ids.clone(),
            start: self.start,
            values,
            scaling: Some(scaling),
        }
    }

    pub fn road_count(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn hours(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn road_ids(&self) -> &[String] {
        &self.road_ids
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Scaling used to produce these values, if they are normalized.
    pub fn scaling(&self) -> Option<&ChannelScaling> {
        self.scaling.as_ref()
    }

    #[inline]
    pub fn value(&self, road: usize, hour: usize, channel: Channel) -> f64 {
        self.values.data()[(road * self.hours() + hour) * 2 + channel as usize]
    }

    pub fn set_value(&mut self, road: usize, hour: usize, channel: Channel, v: f64) {
        let t = self.hours();
        self.values.data_mut()[(road * t + hour) * 2 + channel as usize] = v;
    }

    /// One road's channel over `hours`.
    pub fn channel_slice(
        &self,
        road: usize,
        channel: Channel,
        hours: std::ops::Range<usize>,
    ) -> Vec<f64> {
        hours.map(|t| self.value(road, t, channel)).collect()
    }

    pub fn timestamp(&self, hour: usize) -> NaiveDateTime {
        self.start + chrono::Duration::hours(hour as i64)
    }

    pub fn hour_of_day(&self, hour: usize) -> usize {
        (self.start.hour() as usize + hour) % 24
    }

    /// Start indices of the complete calendar days inside `window`.
    pub fn day_starts(&self, window: std::ops::Range<usize>) -> Vec<usize> {
        let first_midnight = (24 - self.start.hour() as usize) % 24;
        (first_midnight..self.hours())
            .step_by(24)
            .filter(|&s| s >= window.start && s + 24 <= window.end)
            .collect()
    }
}

/// Per-road, per-hour congestion grade in `1..=class_count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeSeries {
    class_count: usize,
    hours: usize,
    grades: Vec<usize>,
}

impl GradeSeries {
    /// `grades` is road-major: `grades[road * hours + hour]`.
    pub fn new(class_count: usize, hours: usize, grades: Vec<usize>) -> Result<Self> {
        if hours == 0 || !grades.len().is_multiple_of(hours) {
            return Err(Error::shape(format!(
                "{} grades do not tile {hours} hours",
                grades.len()
            )));
        }
        if let Some(g) = grades.iter().find(|&&g| g == 0 || g > class_count) {
            return Err(Error::invalid(format!(
                "grade {g} outside 1..={class_count}"
            )));
        }
        Ok(GradeSeries {
            class_count,
            hours,
            grades,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn hours(&self) -> usize {
        self.hours
    }

    pub fn road_count(&self) -> usize {
        self.grades.len() / self.hours
    }

    #[inline]
    pub fn grade(&self, road: usize, hour: usize) -> usize {
        self.grades[road * self.hours + hour]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.grades
    }
}
