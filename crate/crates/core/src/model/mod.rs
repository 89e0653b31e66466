//! The multi-resolution, multi-graph grade classifier.
//!
//! For every active resolution and every graph a two-layer graph
//! convolution with weights shared between the speed and flow channels
//! produces two embeddings, which are fused elementwise and passed
//! through self-attention across feature columns. The resulting
//! combination embeddings are mixed by a multi-head attention layer whose
//! weights carry a feature axis, flattened per road and classified.

mod layers;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Resolution, ResolutionSample, ResolutionWindows};
use crate::error::{Error, Result};
use crate::graphs::{GraphKind, GraphSet};
use crate::numcore::{glorot_uniform, ParamSet, Tensor};

pub use layers::{
    channel_fuse, fc_head, fc_head_backward, flatten_roads, gcn_layer, gcn_layer_backward,
    highdim_attention, highdim_attention_backward, nll_loss, shared_gcn_layer, temporal_attention,
    temporal_attention_backward, AttentionGrads, AttentionWeights, FcCache, GcnCache, HighDimCache,
};
pub use train::{evaluate_loss, train, EpochRecord, TrainConfig, TrainLog};

const CHECKPOINT_VERSION: u32 = 1;

/// Positive so every logit starts above the head ReLU.
const HEAD_BIAS_INIT: f64 = 1.0;

/// Value and output projections start near the identity so each road
/// initially reads its own embedding.
const NEAR_IDENTITY_NOISE: f64 = 0.1;

/// One (resolution, graph) feature stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Combination {
    pub resolution: Resolution,
    pub graph: GraphKind,
}

impl Combination {
    /// Graph letter and resolution letter, e.g. `r_h` or `s_w`.
    pub fn label(&self) -> String {
        format!("{}_{}", self.graph.letter(), self.resolution.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub roads: usize,
    pub classes: usize,
    /// Output widths of the two graph-convolution layers.
    pub hidden: [usize; 2],
    pub heads: usize,
    pub windows: ResolutionWindows,
    /// Active resolutions in canonical order; all three for the full model.
    pub resolutions: Vec<Resolution>,
}

impl ModelConfig {
    pub fn new(roads: usize, classes: usize, heads: usize) -> Self {
        ModelConfig {
            roads,
            classes,
            hidden: [32, 32],
            heads,
            windows: ResolutionWindows::default(),
            resolutions: Resolution::ALL.to_vec(),
        }
    }

    /// Same configuration restricted to one resolution.
    pub fn single_resolution(&self, res: Resolution) -> Self {
        ModelConfig {
            resolutions: vec![res],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.roads == 0 || self.classes < 2 {
            return Err(Error::invalid("need at least one road and two classes"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.heads == 0 || !self.roads.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "head count {} must divide road count {}",
                self.heads, self.roads
            )));
        }
        if self.resolutions.is_empty() {
            return Err(Error::invalid("at least one resolution is required"));
        }
        let mut sorted = self.resolutions.clone();
        sorted.sort_by_key(|r| r.index());
        sorted.dedup();
        if sorted != self.resolutions {
            return Err(Error::invalid(
                "resolutions must be distinct and in hourly, daily, weekly order",
            ));
        }
        for r in &self.resolutions {
            if self.windows.len(*r) == 0 {
                return Err(Error::invalid(format!("empty {} window", r.letter())));
            }
        }
        Ok(())
    }

    /// Combinations in canonical order: resolution-major, graphs `r, w, p, s`.
    pub fn combinations(&self) -> Vec<Combination> {
        self.resolutions
            .iter()
            .flat_map(|&resolution| {
                GraphKind::ALL
                    .iter()
                    .map(move |&graph| Combination { resolution, graph })
            })
            .collect()
    }

    pub fn combination_count(&self) -> usize {
        4 * self.resolutions.len()
    }

    /// Width `d` of every combination embedding.
    pub fn feature_width(&self) -> usize {
        self.hidden[1]
    }
}

// Parameter layout: four tensors per combination, then the fusion and head tensors.
const PER_COMBINATION: usize = 4;
const GCN1: usize = 0;
const GCN2: usize = 1;
const FUSE_SPEED: usize = 2;
const FUSE_FLOW: usize = 3;
const QUERY: usize = 0;
const KEY: usize = 1;
const VALUE: usize = 2;
const OUTPUT: usize = 3;
const FC_W: usize = 4;
const FC_B: usize = 5;

/// Everything the forward pass computed for one sample.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Combination embeddings in canonical order, each `N × d`.
    pub combinations: Vec<Tensor>,
    /// Attention of the fusion layer, `[heads, T, T, d]`.
    pub attention: Tensor,
    /// Fusion-layer output per combination.
    pub fused: Vec<Tensor>,
    /// `N × Class`.
    pub logits: Tensor,
    caches: Vec<CombinationCache>,
    highdim: HighDimCache,
    fc: FcCache,
}

impl ForwardTrace {
    /// Row-stochastic temporal attention of each combination, `d × d`.
    pub fn temporal_attention(&self) -> Vec<&Tensor> {
        self.caches.iter().map(|c| &c.temporal).collect()
    }
}

#[derive(Debug, Clone)]
struct ChannelCache {
    layer1: GcnCache,

    layer2: GcnCache,
    hidden2: Tensor,
}

#[derive(Debug, Clone)]
struct CombinationCache {
    speed: ChannelCache,
    flow: ChannelCache,
    fused: Tensor,
    temporal: Tensor,
}

/// Model parameters (with optimizer state) and their configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    seed: u64,
    model: Model,
}

impl Model {
    /// Glorot-initialized weights, except: fusion weights start at one half,
    /// value and output projections near the identity and the head bias at
    /// a positive constant.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.roads;
        let [h1, h2] = config.hidden;
        let mut params = ParamSet::new();
        for c in config.combinations() {
            let label = c.label();
            let width = config.windows.len(c.resolution);
            params.push(format!("gcn1.{label}"), glorot_uniform(width, h1, &mut rng));
            params.push(format!("gcn2.{label}"), glorot_uniform(h1, h2, &mut rng));
            params.push(format!("fuse_speed.{label}"), Tensor::full(&[n, h2], 0.5));
            params.push(format!("fuse_flow.{label}"), Tensor::full(&[n, h2], 0.5));
        }
        params.push("attention.query", glorot_uniform(n, n, &mut rng));
        params.push("attention.key", glorot_uniform(n, n, &mut rng));
        for name in ["attention.value", "attention.output"] {
            let noise = glorot_uniform(n, n, &mut rng).scale(NEAR_IDENTITY_NOISE);
            params.push(name, Tensor::identity(n).add(&noise)?);
        }
        let flat = config.combination_count() * h2;
        params.push(
            "head.weight",
            glorot_uniform(flat, config.classes, &mut rng),
        );
        params.push(
            "head.bias",
            Tensor::full(&[n, config.classes], HEAD_BIAS_INIT),
        );
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn comb(&self, c: usize, which: usize) -> &Tensor {
        self.params.get(c * PER_COMBINATION + which)
    }

    fn shared_index(&self, which: usize) -> usize {
        self.config.combination_count() * PER_COMBINATION + which
    }

    fn shared(&self, which: usize) -> &Tensor {
        self.params.get(self.shared_index(which))
    }

    fn attention_weights(&self) -> AttentionWeights<'_> {
        AttentionWeights {
            query: self.shared(QUERY),
            key: self.shared(KEY),
            value: self.shared(VALUE),
            output: self.shared(OUTPUT),
        }
    }

    fn check_inputs(&self, sample: &ResolutionSample, graphs: &GraphSet) -> Result<()> {
        let n = self.config.roads;
        if graphs.road_count() != n {
            return Err(Error::shape(format!(
                "graphs cover {} roads, model {n}",
                graphs.road_count()
            )));
        }
        for &r in &self.config.resolutions {
            let want = [n, self.config.windows.len(r), 2];
            if sample.input(r).shape() != want {
                return Err(Error::shape(format!(
                    "{} input is {:?}, expected {want:?}",
                    r.letter(),
                    sample.input(r).shape()
                )));
            }
        }
        Ok(())
    }

    fn channel_forward(&self, x: &Tensor, a: &Tensor, c: usize) -> Result<ChannelCache> {
        let (hidden1, layer1) = gcn_layer(x, a, self.comb(c, GCN1))?;
        let (hidden2, layer2) = gcn_layer(&hidden1, a, self.comb(c, GCN2))?;
        Ok(ChannelCache {
            layer1,
            layer2,
            hidden2,
        })
    }

    /// Combination embeddings only (graph convolutions, fusion, temporal attention).
    pub fn combination_embeddings(
        &self,
        sample: &ResolutionSample,
        graphs: &GraphSet,
    ) -> Result<Vec<Tensor>> {
        self.check_inputs(sample, graphs)?;
        Ok(self
            .combination_forward(sample, graphs)?
            .into_iter()
            .map(|(e, _)| e)
            .collect())
    }

    /// Both graph-convolution layers for one combination, before fusion.
    pub fn gcn_stack(&self, combination: usize, x: &Tensor, a_norm: &Tensor) -> Result<Tensor> {
        Ok(self.channel_forward(x, a_norm, combination)?.hidden2)
    }

    fn combination_forward(
        &self,
        sample: &ResolutionSample,
        graphs: &GraphSet,
    ) -> Result<Vec<(Tensor, CombinationCache)>> {
        self.config
            .combinations()
            .iter()
            .enumerate()
            .map(|(c, comb)| {
                let input = sample.input(comb.resolution);
                let a = graphs.normalized(comb.graph);
                let speed = self.channel_forward(&input.speed, a, c)?;
                let flow = self.channel_forward(&input.flow, a, c)?;
                let fused = channel_fuse(
                    &speed.hidden2,
                    &flow.hidden2,
                    self.comb(c, FUSE_SPEED),
                    self.comb(c, FUSE_FLOW),
                )?;
                let (embedding, temporal) = temporal_attention(&fused)?;
                Ok((
                    embedding,
                    CombinationCache {
                        speed,
                        flow,
                        fused,
                        temporal,
                    },
                ))
            })
            .collect()
    }

    /// Full forward pass.
    pub fn forward(&self, sample: &ResolutionSample, graphs: &GraphSet) -> Result<ForwardTrace> {
        self.check_inputs(sample, graphs)?;
        let (combinations, caches): (Vec<Tensor>, Vec<CombinationCache>) = self
            .combination_forward(sample, graphs)?
            .into_iter()
            .unzip();
        let (fused, highdim) =
            highdim_attention(&combinations, self.attention_weights(), self.config.heads)?;
        let (logits, fc) = fc_head(&fused, self.shared(FC_W), self.shared(FC_B))?;
        if !logits.is_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(ForwardTrace {
            combinations,
            attention: highdim.attention.clone(),
            fused,
            logits,
            caches,
            highdim,
            fc,
        })
    }

    /// Predicted grades (`1..=Class`, lowest grade on ties) and the trace.
    pub fn predict(
        &self,
        sample: &ResolutionSample,
        graphs: &GraphSet,
    ) -> Result<(Vec<usize>, ForwardTrace)> {
        let trace = self.forward(sample, graphs)?;
        Ok((argmax_grades(&trace.logits), trace))
    }

    pub fn loss(&self, sample: &ResolutionSample, graphs: &GraphSet) -> Result<f64> {
        let trace = self.forward(sample, graphs)?;
        Ok(nll_loss(&trace.logits, &sample.target)?.0)
    }

    /// Loss and its gradient w.r.t. every parameter, in parameter order.
    pub fn loss_and_grads(
        &self,
        sample: &ResolutionSample,
        graphs: &GraphSet,
    ) -> Result<(f64, Vec<Tensor>)> {
        let trace = self.forward(sample, graphs)?;
        let (loss, d_logits) = nll_loss(&trace.logits, &sample.target)?;
        let mut grads = self.params.zero_grads();
        let t_count = self.config.combination_count();

        let (mut dw, mut db) = (
            std::mem::replace(&mut grads[self.shared_index(FC_W)], Tensor::zeros(&[1])),
            std::mem::replace(&mut grads[self.shared_index(FC_B)], Tensor::zeros(&[1])),
        );
        let d_fused = fc_head_backward(
            &trace.fc,
            self.shared(FC_W),
            &d_logits,
            t_count,
            &mut dw,
            &mut db,
        )?;
        grads[self.shared_index(FC_W)] = dw;
        grads[self.shared_index(FC_B)] = db;

        let mut att = AttentionGrads::zeros(self.config.roads);
        let d_comb = highdim_attention_backward(
            &trace.combinations,
            self.attention_weights(),
            &trace.highdim,
            &d_fused,
            &mut att,
        )?;
        grads[self.shared_index(QUERY)] = att.query;
        grads[self.shared_index(KEY)] = att.key;
        grads[self.shared_index(VALUE)] = att.value;
        grads[self.shared_index(OUTPUT)] = att.output;

        for (c, comb) in self.config.combinations().iter().enumerate() {
            let cache = &trace.caches[c];
            let a = graphs.normalized(comb.graph);
            let d_fusion = temporal_attention_backward(&cache.fused, &cache.temporal, &d_comb[c])?;
            let base = c * PER_COMBINATION;
            grads[base + FUSE_SPEED] = d_fusion.hadamard(&cache.speed.hidden2)?;
            grads[base + FUSE_FLOW] = d_fusion.hadamard(&cache.flow.hidden2)?;
            let mut d_w1 = Tensor::zeros(self.comb(c, GCN1).shape());
            let mut d_w2 = Tensor::zeros(self.comb(c, GCN2).shape());
            for (channel, fuse) in [(&cache.speed, FUSE_SPEED), (&cache.flow, FUSE_FLOW)] {
                let d_h2 = d_fusion.hadamard(self.comb(c, fuse))?;
                let d_h1 =
                    gcn_layer_backward(&channel.layer2, a, self.comb(c, GCN2), &d_h2, &mut d_w2)?;
                gcn_layer_backward(&channel.layer1, a, self.comb(c, GCN1), &d_h1, &mut d_w1)?;
            }
            grads[base + GCN1] = d_w1;
            grads[base + GCN2] = d_w2;
        }
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("loss or gradient".into()));
        }
        Ok((loss, grads))
    }

    /// Writes a JSON checkpoint holding the configuration, parameters,
    /// optimizer state and seed.
    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            seed,
            model: self.clone(),
        };
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &ckpt)?;
        Ok(())
    }

    /// Loads a checkpoint, rejecting one whose configuration differs from
    /// `expected` (when given). Returns the model and the stored seed.
    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<(Model, u64)> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: Checkpoint = serde_json::from_reader(file)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint version {}",
                ckpt.version
            )));
        }
        if let Some(cfg) = expected {
            if cfg != &ckpt.model.config {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint was trained with {:?}, expected {:?}",
                    ckpt.model.config, cfg
                )));
            }
        }
        ckpt.model.config.validate()?;
        let reference = Model::new(ckpt.model.config.clone(), 0)?;
        let shapes_match = reference.params.len() == ckpt.model.params.len()
            && reference
                .params
                .values()
                .iter()
                .zip(ckpt.model.params.values())
                .all(|(a, b)| a.shape() == b.shape());
        if !shapes_match {
            return Err(Error::ConfigMismatch(
                "parameter shapes do not match the configuration".into(),
            ));
        }
        Ok((ckpt.model, ckpt.seed))
    }
}

/// Row-wise argmax as 1-based grades; the lowest grade wins ties.
pub fn argmax_grades(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best + 1
        })
        .collect()
}

#[cfg(test)]
mod tests;
