use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::{Channel, GradeSeries, TrafficSeries};

/// Temporal resolution of one model input channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    Hourly,
    Daily,
    Weekly,
}

impl Resolution {
    pub const ALL: [Resolution; 3] = [Resolution::Hourly, Resolution::Daily, Resolution::Weekly];

    /// Spacing between consecutive points, in hours.
    pub fn period(self) -> usize {
        match self {
            Resolution::Hourly => 1,
            Resolution::Daily => 24,
            Resolution::Weekly => 168,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Resolution::Hourly => 'h',
            Resolution::Daily => 'd',
            Resolution::Weekly => 'w',
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Number of points taken at each resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionWindows {
    pub hourly: usize,
    pub daily: usize,
    pub weekly: usize,
}

impl Default for ResolutionWindows {
    fn default() -> Self {
        ResolutionWindows {
            hourly: 24,
            daily: 7,
            weekly: 3,
        }
    }
}

impl ResolutionWindows {
    pub fn len(&self, res: Resolution) -> usize {
        match res {
            Resolution::Hourly => self.hourly,
            Resolution::Daily => self.daily,
            Resolution::Weekly => self.weekly,
        }
    }

    /// Hour indices sampled for `res` at anchor `tau` and horizon `t_p`.
    ///
    /// Hourly takes the `Δh` hours ending at `tau`. Daily takes one point per
    /// day at the target's time of day, ending at `tau + t_p − 24`; weekly
    /// does the same per week, ending at `tau + t_p − 168`.
    pub fn hours(&self, res: Resolution, tau: usize, t_p: usize) -> Result<Vec<usize>> {
        let count = self.len(res);
        if count == 0 {
            return Err(Error::invalid(format!("{res:?} window is empty")));
        }
        let (end, step) = match res {
            Resolution::Hourly => (Some(tau), 1),
            Resolution::Daily | Resolution::Weekly => {
                let p = res.period();
                ((tau + t_p).checked_sub(p), p)
            }
        };
        let span = (count - 1) * step;
        match end {
            Some(end) if end >= span => Ok((0..count).rev().map(|k| end - k * step).collect()),
            _ => Err(Error::InsufficientHistory(format!(
                "{res:?} needs {count} points spaced {step}h before anchor {tau} (+{t_p})"
            ))),
        }
    }
}

/// One resolution's input: speed and flow matrices of shape `N × Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionInput {
    pub speed: Tensor,
    pub flow: Tensor,
}

impl ResolutionInput {
    /// `[N, Δ, 2]`
    pub fn shape(&self) -> [usize; 3] {
        [self.speed.rows(), self.speed.cols(), 2]
    }

    pub fn zeros_like(&self) -> ResolutionInput {
        ResolutionInput {
            speed: Tensor::zeros(self.speed.shape()),
            flow: Tensor::zeros(self.flow.shape()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionSample {
    pub hourly: ResolutionInput,
    pub daily: ResolutionInput,
    pub weekly: ResolutionInput,
    /// Grades at `anchor + horizon`, one per road, in `1..=Class`.
    pub target: Vec<usize>,
    pub anchor: usize,
    pub horizon: usize,
}

impl ResolutionSample {
    pub fn input(&self, res: Resolution) -> &ResolutionInput {
        match res {
            Resolution::Hourly => &self.hourly,
            Resolution::Daily => &self.daily,
            Resolution::Weekly => &self.weekly,
        }
    }

    pub fn input_mut(&mut self, res: Resolution) -> &mut ResolutionInput {
        match res {
            Resolution::Hourly => &mut self.hourly,
            Resolution::Daily => &mut self.daily,
            Resolution::Weekly => &mut self.weekly,
        }
    }

    pub fn target_hour(&self) -> usize {
        self.anchor + self.horizon
    }
}

fn gather(series: &TrafficSeries, hours: &[usize]) -> ResolutionInput {
    let n = series.road_count();
    let pick =
        |c: Channel| Tensor::from_fn(n, hours.len(), |road, k| series.value(road, hours[k], c));
    ResolutionInput {
        speed: pick(Channel::Speed),
        flow: pick(Channel::Flow),
    }
}

/// Slices the three resolution inputs at anchor `tau` for horizon `t_p`.
pub fn slice_sample(
    series: &TrafficSeries,
    grades: &GradeSeries,
    tau: usize,
    t_p: usize,
    windows: &ResolutionWindows,
) -> Result<ResolutionSample> {
    if t_p == 0 {
        return Err(Error::invalid("horizon must be at least one hour"));
    }
    if tau + t_p >= series.hours() || tau + t_p >= grades.hours() {
        return Err(Error::invalid(format!(
            "target hour {} beyond series end {}",
            tau + t_p,
            series.hours()
        )));
    }
    if grades.road_count() != series.road_count() {
        return Err(Error::shape("grades and series disagree on road count"));
    }
    let hourly = gather(series, &windows.hours(Resolution::Hourly, tau, t_p)?);
    let daily = gather(series, &windows.hours(Resolution::Daily, tau, t_p)?);
    let weekly = gather(series, &windows.hours(Resolution::Weekly, tau, t_p)?);
    let target = (0..series.road_count())
        .map(|road| grades.grade(road, tau + t_p))
        .collect();
    Ok(ResolutionSample {
        hourly,
        daily,
        weekly,
        target,
        anchor: tau,
        horizon: t_p,
    })
}

/// Earliest anchor with full history at every resolution.
pub fn first_anchor(windows: &ResolutionWindows, t_p: usize) -> usize {
    let hourly = windows.hourly.saturating_sub(1);
    let daily = (24 * windows.daily).saturating_sub(t_p);
    let weekly = (168 * windows.weekly).saturating_sub(t_p);
    hourly.max(daily).max(weekly)
}

/// Every valid sample in chronological order.
pub fn build_samples(
    series: &TrafficSeries,
    grades: &GradeSeries,
    t_p: usize,
    windows: &ResolutionWindows,
) -> Result<Vec<ResolutionSample>> {
    let first = first_anchor(windows, t_p);
    let last_exclusive = series.hours().saturating_sub(t_p);
    if first >= last_exclusive {
        return Err(Error::InsufficientHistory(format!(
            "{} hours cannot hold one sample at horizon {t_p}",
            series.hours()
        )));
    }
    (first..last_exclusive)
        .map(|tau| slice_sample(series, grades, tau, t_p, windows))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 240,
            val: 80,
            test: 80,
        }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Splits `count` samples by fractions of train and validation; test gets the rest.
    pub fn proportional(count: usize, train: f64, val: f64) -> SplitSizes {
        let train_n = (count as f64 * train).round() as usize;
        let val_n = (count as f64 * val).round() as usize;
        SplitSizes {
            train: train_n,
            val: val_n,
            test: count.saturating_sub(train_n + val_n),
        }
    }
}

/// Chronological split: earliest samples train, then validation, then test.
pub fn split<T>(samples: Vec<T>, sizes: SplitSizes) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if sizes.total() > samples.len() {
        return Err(Error::InsufficientHistory(format!(
            "split needs {} samples, have {}",
            sizes.total(),
            samples.len()
        )));
    }
    let mut it = samples.into_iter();
    let train = it.by_ref().take(sizes.train).collect();
    let val = it.by_ref().take(sizes.val).collect();
    let test = it.take(sizes.test).collect();
    Ok((train, val, test))
}
