//! Run configuration, read from TOML. Every field has a default, so an
//! empty file (or no file) is a complete configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trafficgrade::dataset::{ResolutionWindows, SignalPattern, SplitSizes};
use trafficgrade::explain::SumAxis;
use trafficgrade::grading::SomParams;
use trafficgrade::graphs::PatternParams;
use trafficgrade::model::TrainConfig;
use trafficgrade::numcore::AdamConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Attention heads; must divide the road count.
    pub heads: usize,
    /// Prediction horizons in hours.
    pub horizons: Vec<usize>,
    pub grades: usize,
    pub paths: Paths,
    pub windows: Windows,
    pub model: ModelSection,
    pub training: Training,
    pub graphs: GraphSection,
    pub split: Split,
    pub som: SomSection,
    pub synth: Synth,
    pub explain: ExplainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            heads: 3,
            horizons: vec![1, 3, 6, 12, 24],
            grades: 5,
            paths: Paths::default(),
            windows: Windows::default(),
            model: ModelSection::default(),
            training: Training::default(),
            graphs: GraphSection::default(),
            split: Split::default(),
            som: SomSection::default(),
            synth: Synth::default(),
            explain: ExplainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Defaults to `<out_dir>/network.csv`.
    pub network: Option<PathBuf>,
    /// Defaults to `<out_dir>/measurements.csv`.
    pub measurements: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            network: None,
            measurements: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Windows {
    pub hourly: usize,
    pub daily: usize,
    pub weekly: usize,
}

impl Default for Windows {
    fn default() -> Self {
        let w = ResolutionWindows::default();
        Windows {
            hourly: w.hourly,
            daily: w.daily,
            weekly: w.weekly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: [usize; 2],
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { hidden: [32, 32] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a better validation score.
    pub patience: Option<usize>,
}

impl Default for Training {
    fn default() -> Self {
        Training {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 500,
            patience: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub alpha_speed: f64,
    pub alpha_flow: f64,
    /// Length of each compared traffic history, in hours.
    pub pattern_hours: usize,
}

impl Default for GraphSection {
    fn default() -> Self {
        let p = PatternParams::default();
        GraphSection {
            alpha_speed: p.alpha_speed,
            alpha_flow: p.alpha_flow,
            pattern_hours: p.history_len,
        }
    }
}

/// Chronological split, either in sample counts or in fractions (test takes the rest).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Split {
    Counts {
        train: usize,
        val: usize,
        test: usize,
    },
    Fractions {
        train_fraction: f64,
        val_fraction: f64,
    },
}

impl Default for Split {
    fn default() -> Self {
        let s = SplitSizes::default();
        Split::Counts {
            train: s.train,
            val: s.val,
            test: s.test,
        }
    }
}

impl Split {
    pub fn sizes(&self, available: usize) -> SplitSizes {
        match *self {
            Split::Counts { train, val, test } => SplitSizes { train, val, test },
            Split::Fractions {
                train_fraction,
                val_fraction,
            } => SplitSizes::proportional(available, train_fraction, val_fraction),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SomSection {
    pub learn0: f64,
    pub neighbor0: f64,
    pub max_iter: usize,
}

impl Default for SomSection {
    fn default() -> Self {
        let p = SomParams::default();
        SomSection {
            learn0: p.learn0,
            neighbor0: p.neighbor0,
            max_iter: p.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthPattern {
    Periodic,
    HourlyOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Synth {
    pub roads: usize,
    pub weeks: usize,
    pub pattern: SynthPattern,
}

impl Default for Synth {
    fn default() -> Self {
        Synth {
            roads: 12,
            weeks: 6,
            pattern: SynthPattern::Periodic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub sum_axis: SumAxis,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        if self.heads == 0 {
            return bad("heads must be positive");
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons must be a non-empty list of positive hours");
        }
        let mut sorted = self.horizons.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.horizons.len() {
            return bad("horizons must be distinct");
        }
        if self.grades < 2 {
            return bad("grades must be at least 2");
        }
        if self.windows.hourly == 0 || self.windows.daily == 0 || self.windows.weekly == 0 {
            return bad("every resolution window must be positive");
        }
        if self.model.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        let t = &self.training;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite())
            || t.batch_size == 0
            || t.epochs == 0
        {
            return bad("training needs a positive learning rate, batch size and epoch count");
        }
        if t.patience == Some(0) {
            return bad("patience must be positive when set");
        }
        let g = &self.graphs;
        if !(g.alpha_speed > 0.0 && g.alpha_flow > 0.0) || g.pattern_hours == 0 {
            return bad("graph kernels need positive alphas and pattern length");
        }
        match self.split {
            Split::Counts { train, .. } if train == 0 => return bad("the training split is empty"),
            Split::Fractions {
                train_fraction,
                val_fraction,
            } if !(train_fraction > 0.0
                && val_fraction >= 0.0
                && train_fraction + val_fraction < 1.0) =>
            {
                return bad("split fractions must satisfy 0 < train, 0 <= val, train + val < 1")
            }
            _ => {}
        }
        if !(self.som.learn0 > 0.0 && self.som.neighbor0 > 1.0) || self.som.max_iter < 2 {
            return bad("SOM needs learn0 > 0, neighbor0 > 1 and max_iter >= 2");
        }
        if self.synth.roads < 4 || self.synth.weeks < 4 {
            return bad("synthetic data needs at least 4 roads and 4 weeks");
        }
        Ok(())
    }

    pub fn network_path(&self) -> PathBuf {
        self.paths
            .network
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("network.csv"))
    }

    pub fn measurements_path(&self) -> PathBuf {
        self.paths
            .measurements
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("measurements.csv"))
    }

    pub fn resolution_windows(&self) -> ResolutionWindows {
        ResolutionWindows {
            hourly: self.windows.hourly,
            daily: self.windows.daily,
            weekly: self.windows.weekly,
        }
    }

    pub fn pattern_params(&self) -> PatternParams {
        PatternParams {
            alpha_speed: self.graphs.alpha_speed,
            alpha_flow: self.graphs.alpha_flow,
            history_len: self.graphs.pattern_hours,
        }
    }

    pub fn som_params(&self) -> SomParams {
        SomParams {
            learn0: self.som.learn0,
            neighbor0: self.som.neighbor0,
            max_iter: self.som.max_iter,
            ..SomParams::strip(self.grades)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.training.learning_rate,
                ..AdamConfig::default()
            },
            batch_size: self.training.batch_size,
            epochs: self.training.epochs,
            seed: self.seed,
            patience: self.training.patience,
            ..TrainConfig::default()
        }
    }

    pub fn signal_pattern(&self) -> SignalPattern {
        match self.synth.pattern {
            SynthPattern::Periodic => SignalPattern::Periodic,
            SynthPattern::HourlyOnly => SignalPattern::HourlyOnly,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.training.epochs, 500);
        assert_eq!(cfg.training.batch_size, 16);
        assert_eq!(cfg.training.learning_rate, 1e-3);
        assert_eq!(cfg.model.hidden, [32, 32]);
        assert_eq!(
            (cfg.windows.hourly, cfg.windows.daily, cfg.windows.weekly),
            (24, 7, 3)
        );
        assert_eq!(
            (cfg.graphs.alpha_speed, cfg.graphs.alpha_flow),
            (1e-2, 1e-4)
        );
        assert_eq!(
            cfg.split,
            Split::Counts {
                train: 240,
                val: 80,
                test: 80
            }
        );
        assert_eq!(cfg.horizons, vec![1, 3, 6, 12, 24]);
        assert_eq!(cfg.grades, 5);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.split = Split::Fractions {
            train_fraction: 0.6,
            val_fraction: 0.2,
        };
        cfg.training.patience = Some(30);
        cfg.synth.pattern = SynthPattern::HourlyOnly;
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn fractional_split() {
        let cfg = RunConfig::parse("[split]\ntrain_fraction = 0.5\nval_fraction = 0.25\n").unwrap();
        assert_eq!(
            cfg.split.sizes(100),
            SplitSizes {
                train: 50,
                val: 25,
                test: 25
            }
        );
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "heads = 0",
            "horizons = []",
            "horizons = [1, 1]",
            "grades = 1",
            "[training]\nepochs = 0",
            "[split]\ntrain_fraction = 0.9\nval_fraction = 0.2",
            "[som]\nneighbor0 = 1.0",
            "unknown_key = 3",
            "[synth]\npattern = \"weekly\"",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
    }
}
