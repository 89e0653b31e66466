//! Orchestration of the pipeline stages and their on-disk artifacts.
//!
//! Layout under the output directory:
//!
//! ```text
//! network.csv, measurements.csv     synth
//! graphs/W_{r,w,p,s}.csv, moran.json graphs
//! grades.csv, som.json              label
//! tp<h>/model.json, train_log.csv   train
//! tp<h>/predictions.csv, attention.json   predict
//! tp<h>/metrics.json, mae.csv       evaluate
//! tp<h>/importance.json, heatmap.csv      explain
//! ablation.csv, ablation.json       ablate
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Serialize;
use trafficgrade::dataset::{
    build_samples, first_anchor, generate_with, minmax_normalize, read_measurements, read_network,
    split, write_measurements, write_network, Channel, GradeSeries, Resolution, ResolutionSample,
    SyntheticConfig, TrafficSeries,
};
use trafficgrade::explain::{AttentionRecord, ImportanceReport};
use trafficgrade::grading::{read_grades, write_grades, Grader};
use trafficgrade::graphs::{
    global_morans_i, local_morans_i, write_matrix_csv, ConnectivityWeights, GraphKind, GraphSet,
    RoadNetwork,
};
use trafficgrade::metrics::MetricsReport;
use trafficgrade::model::{train, Model, ModelConfig, TrainLog};
use trafficgrade::{Error, Parallelism};

use crate::config::RunConfig;
use crate::error::{CliError, Context};

pub type CliResult<T> = Result<T, CliError>;

/// What a command wrote and a short human-readable summary.
#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub summary: Vec<String>,
}

impl Outcome {
    fn merge(&mut self, other: Outcome) {
        self.artifacts.extend(other.artifacts);
        self.summary.extend(other.summary);
    }
}

/// Raw inputs with measurement roads ordered like the network.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub network: RoadNetwork,
    pub raw: TrafficSeries,
}

/// Everything needed to train and score at one horizon.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub horizon: usize,
    pub road_ids: Vec<String>,
    pub normalized: TrafficSeries,
    pub grades: GradeSeries,
    pub graphs: GraphSet,
    pub train: Vec<ResolutionSample>,
    pub val: Vec<ResolutionSample>,
    pub test: Vec<ResolutionSample>,
}

/// Test-set predictions of one model.
#[derive(Debug, Clone)]
pub struct Scored {
    pub metrics: MetricsReport,
    /// Predicted grades per test sample, one per road.
    pub predicted: Vec<Vec<usize>>,
    pub attention: AttentionRecord,
}

#[derive(Debug, Clone, Serialize)]
struct ChannelMoran {
    channel: &'static str,
    /// `None` when every road has the same value.
    global: Option<f64>,
    local: Option<Vec<f64>>,
    degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
struct MoranReport {
    road_ids: Vec<String>,
    window_hours: usize,
    channels: Vec<ChannelMoran>,
}

#[derive(Debug, Clone, Serialize)]
struct AblationRow {
    model: String,
    horizon: usize,
    accuracy: f64,
    kappa: Option<f64>,
    best_epoch: usize,
}

#[derive(Debug, Clone, Serialize)]
struct AttentionExport {
    horizon: usize,
    samples: usize,
    combinations: Vec<String>,
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub struct Pipeline {
    cfg: RunConfig,
    mode: Parallelism,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> CliResult<Self> {
        cfg.validate()?;
        Ok(Pipeline {
            cfg,
            mode: Parallelism::Parallel,
        })
    }

    pub fn with_parallelism(mut self, mode: Parallelism) -> Self {
        self.mode = mode;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn out(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.cfg.paths.out_dir.join(rel)
    }

    fn horizon_dir(&self, horizon: usize) -> PathBuf {
        self.out(format!("tp{horizon}"))
    }

    pub fn checkpoint_path(&self, horizon: usize) -> PathBuf {
        self.horizon_dir(horizon).join("model.json")
    }

    pub fn synth(&self) -> CliResult<Outcome> {
        let s = generate_with(SyntheticConfig {
            n_roads: self.cfg.synth.roads,
            weeks: self.cfg.synth.weeks,
            seed: self.cfg.seed,
            pattern: self.cfg.signal_pattern(),
        })
        .context("generating synthetic data")?;
        let net_path = self.cfg.network_path();
        let meas_path = self.cfg.measurements_path();
        write_artifact(&net_path, |w| write_network(&s.network, w))?;
        write_artifact(&meas_path, |w| write_measurements(&s.series, w))?;
        Ok(Outcome {
            summary: vec![format!(
                "{} roads, {} hours of synthetic traffic",
                s.network.road_count(),
                s.series.hours()
            )],
            artifacts: vec![net_path, meas_path],
        })
    }

    pub fn load_inputs(&self) -> CliResult<Inputs> {
        let net_path = require(self.cfg.network_path(), "synth")?;
        let meas_path = require(self.cfg.measurements_path(), "synth")?;
        let network = read_network(open(&net_path)?, &net_path.display().to_string())
            .context("reading the road network")?;
        let raw = read_measurements(open(&meas_path)?, &meas_path.display().to_string())
            .context("reading measurements")?
            .select_roads(network.ids())
            .context("matching measurements to the network")?;
        if network.road_count() % self.cfg.heads != 0 {
            return Err(CliError::Config(format!(
                "{} heads do not divide {} roads",
                self.cfg.heads,
                network.road_count()
            )));
        }
        Ok(Inputs { network, raw })
    }

    /// Hours up to the last training target over every configured horizon.
    /// Scaling and the similarity graphs are fit on this range only.
    pub fn fit_range(&self, hours: usize) -> CliResult<Range<usize>> {
        let windows = self.cfg.resolution_windows();
        let mut end = 0;
        for &tp in &self.cfg.horizons {
            let first = first_anchor(&windows, tp);
            let available = hours.saturating_sub(tp).saturating_sub(first);
            let sizes = self.cfg.split.sizes(available);
            if sizes.total() > available || sizes.train == 0 {
                return Err(CliError::Core {
                    context: format!("splitting samples at horizon {tp}"),
                    source: Error::InsufficientHistory(format!(
                        "{hours} hours give {available} samples, the split needs {}",
                        sizes.total()
                    )),
                });
            }
            end = end.max(first + sizes.train + tp);
        }
        Ok(0..end.min(hours))
    }

    fn normalized(&self, inputs: &Inputs) -> CliResult<(TrafficSeries, Range<usize>)> {
        let range = self.fit_range(inputs.raw.hours())?;
        let norm = minmax_normalize(&inputs.raw, range.clone()).context("min-max scaling")?;
        Ok((norm, range))
    }

    fn build_graphs(&self, inputs: &Inputs, range: Range<usize>) -> CliResult<GraphSet> {
        GraphSet::build(
            &inputs.network,
            &inputs.raw,
            range,
            &self.cfg.pattern_params(),
            self.mode,
        )
        .context("building graphs")
    }

    pub fn graphs(&self) -> CliResult<Outcome> {
        let inputs = self.load_inputs()?;
        let range = self.fit_range(inputs.raw.hours())?;
        let graphs = self.build_graphs(&inputs, range.clone())?;
        let ids = inputs.network.ids();
        let mut out = Outcome::default();
        for kind in GraphKind::ALL {
            let path = self.out(format!("graphs/{}.csv", kind.file_stem()));
            write_artifact(&path, |w| write_matrix_csv(graphs.raw(kind), ids, w))?;
            out.artifacts.push(path);
        }

        let conn = ConnectivityWeights::from_network(&inputs.network);
        let mut channels = Vec::new();
        for channel in Channel::ALL {
            let means: Vec<f64> = (0..inputs.raw.road_count())
                .map(|r| {
                    let v = inputs.raw.channel_slice(r, channel, range.clone());
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .collect();
            let entry = match (
                global_morans_i(&means, &conn),
                local_morans_i(&means, &conn),
            ) {
                (Ok(g), Ok(l)) => ChannelMoran {
                    channel: channel.name(),
                    global: Some(g),
                    local: Some(l),
                    degenerate: false,
                },
                (Err(Error::DegenerateVariance), _) => ChannelMoran {
                    channel: channel.name(),
                    global: None,
                    local: None,
                    degenerate: true,
                },
                (Err(e), _) | (_, Err(e)) => return Err(e).context("Moran's I"),
            };
            if let Some(g) = entry.global {
                out.summary
                    .push(format!("global Moran's I ({}) = {g:.4}", channel.name()));
            } else {
                out.summary.push(format!(
                    "global Moran's I ({}) is degenerate",
                    channel.name()
                ));
            }
            channels.push(entry);
        }
        let report = MoranReport {
            road_ids: ids.to_vec(),
            window_hours: range.len(),
            channels,
        };
        let path = self.out("moran.json");
        write_json(&path, &report)?;
        out.artifacts.push(path);
        Ok(out)
    }

    pub fn label(&self) -> CliResult<Outcome> {
        let inputs = self.load_inputs()?;
        let (norm, _) = self.normalized(&inputs)?;
        let grader = Grader::fit(&norm, &self.cfg.som_params(), self.cfg.seed, self.mode)
            .context("training the SOM")?;
        let grades = grader.grade(&norm, self.mode).context("grading")?;
        let grades_path = self.out("grades.csv");
        write_artifact(&grades_path, |w| write_grades(&norm, &grades, w))?;
        let som_path = self.out("som.json");
        write_json(&som_path, grader.som())?;
        let mut counts = vec![0usize; grades.class_count()];
        for &g in grades.as_slice() {
            counts[g - 1] += 1;
        }
        Ok(Outcome {
            artifacts: vec![grades_path, som_path],
            summary: vec![format!("grade counts {counts:?}")],
        })
    }

    /// Loads inputs and grades, builds graphs and splits the samples at `horizon`.
    pub fn prepare(&self, horizon: usize) -> CliResult<Prepared> {
        let inputs = self.load_inputs()?;
        let (norm, range) = self.normalized(&inputs)?;
        let grades_path = require(self.out("grades.csv"), "label")?;
        let grades = read_grades(
            open(&grades_path)?,
            &grades_path.display().to_string(),
            &norm,
            self.cfg.grades,
        )
        .context("reading grades")?;
        let graphs = self.build_graphs(&inputs, range)?;
        let windows = self.cfg.resolution_windows();
        let samples =
            build_samples(&norm, &grades, horizon, &windows).context("slicing samples")?;
        let sizes = self.cfg.split.sizes(samples.len());
        let (train, val, test) = split(samples, sizes).context("splitting samples")?;
        Ok(Prepared {
            horizon,
            road_ids: inputs.network.ids().to_vec(),
            normalized: norm,
            grades,
            graphs,
            train,
            val,
            test,
        })
    }

    pub fn model_config(&self, roads: usize, resolutions: &[Resolution]) -> ModelConfig {
        ModelConfig {
            hidden: self.cfg.model.hidden,
            windows: self.cfg.resolution_windows(),
            resolutions: resolutions.to_vec(),
            ..ModelConfig::new(roads, self.cfg.grades, self.cfg.heads)
        }
    }

    /// Trains a fresh model on the prepared split.
    pub fn train_variant(
        &self,
        p: &Prepared,
        resolutions: &[Resolution],
    ) -> CliResult<(Model, TrainLog)> {
        let mut model = Model::new(
            self.model_config(p.road_ids.len(), resolutions),
            self.cfg.seed,
        )
        .context("building the model")?;
        let mut tc = self.cfg.train_config();
        tc.mode = self.mode;
        let log = train(&mut model, &p.train, &p.val, &p.graphs, &tc)
            .context(format!("training at horizon {}", p.horizon))?;
        Ok((model, log))
    }

    /// Predicts every test sample and scores the predictions.
    pub fn score(&self, model: &Model, p: &Prepared) -> CliResult<Scored> {
        if p.test.is_empty() {
            return Err(CliError::Config("the test split is empty".into()));
        }
        let combos = model.config().combinations();
        let mut predicted = Vec::with_capacity(p.test.len());
        let mut records = Vec::with_capacity(p.test.len());
        for s in &p.test {
            let (grades, trace) = model.predict(s, &p.graphs).context("predicting")?;
            predicted.push(grades);
            records.push(
                AttentionRecord::from_trace(&trace, combos.clone()).context("reading attention")?,
            );
        }
        let t = p.test.len();
        let roads = p.road_ids.len();
        let grid = |f: &dyn Fn(usize, usize) -> usize| -> Vec<usize> {
            (0..roads)
                .flat_map(|r| (0..t).map(move |k| (r, k)))
                .map(|(r, k)| f(r, k))
                .collect()
        };
        let pred = grid(&|r, k| predicted[k][r]);
        let truth = grid(&|r, k| p.test[k].target[r]);
        let metrics = MetricsReport::compute(&pred, &truth, t, self.cfg.grades, p.horizon)
            .context("scoring")?;
        let attention = AttentionRecord::mean(&records).context("averaging attention")?;
        Ok(Scored {
            metrics,
            predicted,
            attention,
        })
    }

    fn load_model(&self, p: &Prepared) -> CliResult<Model> {
        let path = require(self.checkpoint_path(p.horizon), "train")?;
        let expected = self.model_config(p.road_ids.len(), &Resolution::ALL);
        let (model, _) =
            Model::load(&path, Some(&expected)).context(format!("loading {}", path.display()))?;
        Ok(model)
    }

    fn for_each_horizon(
        &self,
        mut f: impl FnMut(&Prepared) -> CliResult<Outcome>,
    ) -> CliResult<Outcome> {
        let mut out = Outcome::default();
        for &h in &self.cfg.horizons {
            let p = self.prepare(h)?;
            out.merge(f(&p)?);
        }
        Ok(out)
    }

    pub fn train(&self) -> CliResult<Outcome> {
        self.for_each_horizon(|p| {
            let (model, log) = self.train_variant(p, &Resolution::ALL)?;
            let dir = self.horizon_dir(p.horizon);
            let ckpt = dir.join("model.json");
            std::fs::create_dir_all(&dir).context(format!("creating {}", dir.display()))?;
            model
                .save(&ckpt, self.cfg.seed)
                .context("writing the checkpoint")?;
            let log_path = dir.join("train_log.csv");
            write_artifact(&log_path, |w| write_train_log(&log, w))?;
            let best = &log.epochs[log.best_epoch - 1];
            Ok(Outcome {
                artifacts: vec![ckpt, log_path],
                summary: vec![format!(
                    "t_p={}: kept epoch {} of {}, validation accuracy {}",
                    p.horizon,
                    log.best_epoch,
                    log.epochs.len(),
                    best.val_accuracy
                        .map_or("n/a".into(), |a| format!("{a:.4}"))
                )],
            })
        })
    }

    pub fn predict(&self) -> CliResult<Outcome> {
        self.for_each_horizon(|p| {
            let model = self.load_model(p)?;
            let scored = self.score(&model, p)?;
            let dir = self.horizon_dir(p.horizon);
            let pred_path = dir.join("predictions.csv");
            write_artifact(&pred_path, |w| {
                writeln!(w, "road_id,timestamp,predicted,actual")?;
                for (r, id) in p.road_ids.iter().enumerate() {
                    for (k, s) in p.test.iter().enumerate() {
                        let ts = trafficgrade::dataset::format_timestamp(
                            p.normalized.timestamp(s.target_hour()),
                        );
                        writeln!(w, "{id},{ts},{},{}", scored.predicted[k][r], s.target[r])?;
                    }
                }
                Ok(())
            })?;
            let att_path = dir.join("attention.json");
            let att = &scored.attention;
            write_json(
                &att_path,
                &AttentionExport {
                    horizon: p.horizon,
                    samples: p.test.len(),
                    combinations: att.combinations().iter().map(|c| c.label()).collect(),
                    shape: att.attention().shape().to_vec(),
                    data: att.attention().data().to_vec(),
                },
            )?;
            Ok(Outcome {
                artifacts: vec![pred_path, att_path],
                summary: vec![format!(
                    "t_p={}: {} test samples predicted",
                    p.horizon,
                    p.test.len()
                )],
            })
        })
    }

    pub fn evaluate(&self) -> CliResult<Outcome> {
        self.for_each_horizon(|p| {
            let model = self.load_model(p)?;
            let m = self.score(&model, p)?.metrics;
            let dir = self.horizon_dir(p.horizon);
            let json = dir.join("metrics.json");
            write_json(&json, &m)?;
            let csv = dir.join("mae.csv");
            write_artifact(&csv, |w| m.write_mae_csv(w))?;
            Ok(Outcome {
                artifacts: vec![json, csv],
                summary: vec![format!(
                    "t_p={}: accuracy {:.4}, kappa {}",
                    p.horizon,
                    m.accuracy,
                    m.kappa.map_or("degenerate".into(), |k| format!("{k:.4}"))
                )],
            })
        })
    }

    pub fn explain(&self) -> CliResult<Outcome> {
        self.for_each_horizon(|p| {
            let model = self.load_model(p)?;
            let scored = self.score(&model, p)?;
            let report = ImportanceReport::from_record(
                &scored.attention,
                p.horizon,
                self.cfg.explain.sum_axis,
            )
            .context("computing importance")?;
            let dir = self.horizon_dir(p.horizon);
            let json = dir.join("importance.json");
            write_artifact(&json, |w| report.write_json(w))?;
            let csv = dir.join("heatmap.csv");
            write_artifact(&csv, |w| report.write_heatmap_csv(w))?;
            Ok(Outcome {
                artifacts: vec![json, csv],
                summary: vec![format!(
                    "t_p={}: resolutions by importance {}, graphs by importance {}",
                    p.horizon,
                    report.resolution_ranking().join(" > "),
                    report.graph_ranking().join(" > ")
                )],
            })
        })
    }

    pub fn ablate(&self) -> CliResult<Outcome> {
        let variants: [(&str, Vec<Resolution>); 4] = [
            ("full", Resolution::ALL.to_vec()),
            ("hourly", vec![Resolution::Hourly]),
            ("daily", vec![Resolution::Daily]),
            ("weekly", vec![Resolution::Weekly]),
        ];
        let mut rows = Vec::new();
        for &h in &self.cfg.horizons {
            let p = self.prepare(h)?;
            for (name, res) in &variants {
                let (model, log) = self.train_variant(&p, res)?;
                let m = self.score(&model, &p)?.metrics;
                rows.push(AblationRow {
                    model: name.to_string(),
                    horizon: h,
                    accuracy: m.accuracy,
                    kappa: m.kappa,
                    best_epoch: log.best_epoch,
                });
            }
        }
        let csv = self.out("ablation.csv");
        let horizons = &self.cfg.horizons;
        write_artifact(&csv, |w| {
            let header: Vec<String> = horizons
                .iter()
                .flat_map(|h| [format!("accuracy_{h}h"), format!("kappa_{h}h")])
                .collect();
            writeln!(w, "model,{}", header.join(","))?;
            for (name, _) in &variants {
                let cells: Vec<String> = rows
                    .iter()
                    .filter(|r| r.model == *name)
                    .flat_map(|r| {
                        [
                            r.accuracy.to_string(),
                            r.kappa.map_or(String::new(), |k| k.to_string()),
                        ]
                    })
                    .collect();
                writeln!(w, "{name},{}", cells.join(","))?;
            }
            Ok(())
        })?;
        let json = self.out("ablation.json");
        write_json(&json, &rows)?;
        let summary = rows
            .iter()
            .map(|r| format!("t_p={} {}: accuracy {:.4}", r.horizon, r.model, r.accuracy))
            .collect();
        Ok(Outcome {
            artifacts: vec![csv, json],
            summary,
        })
    }
}

fn require(path: PathBuf, producer: &'static str) -> CliResult<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact { path, producer })
    }
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).context(format!("opening {}", path.display()))
}

fn write_artifact(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> trafficgrade::Result<()>,
) -> CliResult<()> {
    let what = || format!("writing {}", path.display());
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).context(what())?;
    }
    let mut w = BufWriter::new(File::create(path).context(what())?);
    f(&mut w).context(what())?;
    w.flush().context(what())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_artifact(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn write_train_log(log: &TrainLog, mut w: impl Write) -> trafficgrade::Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    writeln!(w, "epoch,train_loss,val_loss,val_accuracy")?;
    for e in &log.epochs {
        writeln!(
            w,
            "{},{},{},{}",
            e.epoch,
            e.train_loss,
            opt(e.val_loss),
            opt(e.val_accuracy)
        )?;
    }
    Ok(())
}
