//! Second-stage edge classifier: node/edge encoders, message passing that
//! alternates edge and node updates, a per-level adapter added to the
//! initial edge embeddings, and a sigmoid edge classifier.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, focal_loss, AdamConfig, AdamState, ParamSet, Tape, Tensor, Var};
use crate::tgraph::{TrackletGraph, EDGE_FEATURE_DIM};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpnnConfig {
    /// Message-passing iterations.
    pub message_steps: usize,
    /// Number of hierarchy levels, one adapter each.
    pub levels: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub node_encoder_hidden: usize,
    pub edge_encoder_hidden: usize,
    pub edge_update_hidden: usize,
    pub node_update_hidden: usize,
    pub classifier_hidden: usize,
    /// Build node messages from the neighbor's feature instead of the
    /// receiving node's own.
    pub message_uses_neighbor: bool,
    /// Logits are clamped to `[-logit_clamp, logit_clamp]` before the sigmoid.
    pub logit_clamp: f64,
    pub aggregation: Aggregation,
}

/// How incoming messages are combined at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    /// Sum divided by the node degree.
    Mean,
}

impl Default for MpnnConfig {
    fn default() -> Self {
        MpnnConfig {
            message_steps: 12,
            levels: 3,
            node_dim: 32,
            edge_dim: 16,
            node_encoder_hidden: 64,
            edge_encoder_hidden: 32,
            edge_update_hidden: 32,
            node_update_hidden: 64,
            classifier_hidden: 8,
            message_uses_neighbor: false,
            logit_clamp: 30.0,
            aggregation: Aggregation::Mean,
        }
    }
}

impl MpnnConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.node_dim,
            self.edge_dim,
            self.node_encoder_hidden,
            self.edge_encoder_hidden,
            self.edge_update_hidden,
            self.node_update_hidden,
            self.classifier_hidden,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.message_steps == 0 || self.levels == 0 {
            return Err(Error::Config(format!(
                "model.message_steps and model.levels must be at least 1, got {} and {}",
                self.message_steps, self.levels
            )));
        }
        if !(self.logit_clamp > 0.0) {
            return Err(Error::Config("model.logit_clamp must be positive".into()));
        }
        Ok(())
    }
}

/// The five two-layer perceptrons, in parameter order.
const MLPS: [&str; 5] = ["node_encoder", "edge_encoder", "edge_update", "node_update", "classifier"];
const NODE_ENC: usize = 0;
const EDGE_ENC: usize = 1;
const EDGE_UPD: usize = 2;
const NODE_UPD: usize = 3;
const CLASSIFIER: usize = 4;
/// Index of the adapter table in the parameter list.
const ADAPTERS: usize = 20;

/// Learnable parameters plus the architecture they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: MpnnConfig,
    pub appearance_dim: usize,
    pub params: ParamSet,
}

impl ModelParams {
    fn layer_dims(config: &MpnnConfig, appearance_dim: usize) -> [(usize, usize, usize); 5] {
        let c = config;
        [
            (appearance_dim, c.node_encoder_hidden, c.node_dim),
            (EDGE_FEATURE_DIM, c.edge_encoder_hidden, c.edge_dim),
            (2 * c.node_dim + c.edge_dim, c.edge_update_hidden, c.edge_dim),
            (c.node_dim + c.edge_dim, c.node_update_hidden, c.node_dim),
            (c.edge_dim, c.classifier_hidden, 1),
        ]
    }

    /// Glorot-uniform weights, zero biases and zero adapters.
    pub fn new(config: MpnnConfig, appearance_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if appearance_dim == 0 {
            return Err(Error::Config("appearance dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, (i, h, o)) in MLPS.iter().zip(Self::layer_dims(&config, appearance_dim)) {
            for (layer, (fan_in, fan_out)) in [(i, h), (h, o)].into_iter().enumerate() {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
                params.insert(format!("{name}.w{}", layer + 1), Tensor::new(fan_in, fan_out, w)?);
                params.insert(format!("{name}.b{}", layer + 1), Tensor::zeros(1, fan_out));
            }
        }
        params.insert("adapters", Tensor::zeros(config.levels, config.edge_dim));
        Ok(ModelParams {
            config,
            appearance_dim,
            params,
        })
    }

    /// Rebuilds a model from a parameter set, checking every shape.
    pub fn from_params(config: MpnnConfig, appearance_dim: usize, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config.clone(), appearance_dim, 0)?;
        if params.names() != reference.params.names() {
            return Err(Error::Checkpoint(format!(
                "parameter names {:?} do not match the model layout {:?}",
                params.names(),
                reference.params.names()
            )));
        }
        for ((name, a), b) in reference.params.iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {}x{}, expected {}x{}",
                    b.rows(),
                    b.cols(),
                    a.rows(),
                    a.cols()
                )));
            }
        }
        Ok(ModelParams {
            config,
            appearance_dim,
            params,
        })
    }

    pub fn adapter(&self, level: usize) -> &[f64] {
        self.params.tensors()[ADAPTERS].row(level)
    }

    pub fn adapters_mut(&mut self) -> &mut Tensor {
        &mut self.params.tensors_mut()[ADAPTERS]
    }

    /// Records the parameters on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameter handles on a tape, in [`ParamSet`] order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    fn mlp(&self, tape: &mut Tape, which: usize, x: Var) -> Result<Var> {
        let p = &self.vars[4 * which..4 * which + 4];
        let h = tape.matmul(x, p[0])?;
        let h = tape.add_row(h, p[1])?;
        let h = tape.relu(h)?;
        let o = tape.matmul(h, p[2])?;
        tape.add_row(o, p[3])
    }
}

/// Graph inputs shared by every forward pass over one graph.
#[derive(Debug, Clone)]
pub struct GraphTensors {
    nodes: usize,
    node_inputs: Tensor,
    edge_inputs: Tensor,
    src: Rc<Vec<usize>>,
    dst: Rc<Vec<usize>>,
    /// Receiving node of each of the two messages per edge.
    recv: Rc<Vec<usize>>,
    /// Sending node of each message.
    send: Rc<Vec<usize>>,
    /// Edge of each message.
    msg_edge: Rc<Vec<usize>>,
    isolated: Option<Tensor>,
    /// Per-message scale for mean aggregation.
    msg_scale: Option<Tensor>,
    labels: Option<Tensor>,
}

impl GraphTensors {
    pub fn new(graph: &TrackletGraph, model: &ModelParams) -> Result<Self> {
        let n = graph.node_count();
        let e = graph.edge_count();
        if n > 0 && graph.appearance_dim() != model.appearance_dim {
            return Err(Error::DimensionMismatch {
                expected: model.appearance_dim,
                got: graph.appearance_dim(),
                context: "node inputs vs model".into(),
            });
        }
        let node_inputs = Tensor::from_rows(&graph.node_inputs, model.appearance_dim)?;
        let edge_inputs = Tensor::from_rows(&graph.raw_edge_features, EDGE_FEATURE_DIM)?;
        let src: Vec<usize> = graph.edges.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = graph.edges.iter().map(|e| e.1).collect();
        let recv: Vec<usize> = src.iter().chain(&dst).copied().collect();
        let send: Vec<usize> = dst.iter().chain(&src).copied().collect();
        let msg_edge: Vec<usize> = (0..e).chain(0..e).collect();
        let mut degree = vec![0usize; n];
        for &r in &recv {
            degree[r] += 1;
        }
        let isolated = degree.contains(&0).then(|| {
            let d = model.config.node_dim;
            let mut m = Tensor::zeros(n, d);
            for (i, &deg) in degree.iter().enumerate() {
                if deg == 0 {
                    m.data_mut()[i * d..(i + 1) * d].fill(1.0);
                }
            }
            m
        });
        let msg_scale = (model.config.aggregation == Aggregation::Mean && e > 0).then(|| {
            let d = model.config.node_dim;
            let mut m = Tensor::zeros(2 * e, d);
            for (k, &r) in recv.iter().enumerate() {
                m.data_mut()[k * d..(k + 1) * d].fill(1.0 / degree[r] as f64);
            }
            m
        });
        let labels = graph
            .labels
            .as_ref()
            .map(|l| Tensor::new(l.len(), 1, l.clone()))
            .transpose()?;
        Ok(GraphTensors {
            nodes: n,
            node_inputs,
            edge_inputs,
            src: Rc::new(src),
            dst: Rc::new(dst),
            recv: Rc::new(recv),
            send: Rc::new(send),
            msg_edge: Rc::new(msg_edge),
            isolated,
            msg_scale,
            labels,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }
}

/// Encodes node and edge inputs; the level's adapter is added to every
/// initial edge embedding.
pub fn init_features(
    tape: &mut Tape,
    g: &GraphTensors,
    model: &ModelParams,
    bound: &Bound,
    level: usize,
) -> Result<(Var, Var)> {
    if level >= model.config.levels {
        return Err(Error::InvalidLevel {
            level,
            levels: model.config.levels,
        });
    }
    let x = tape.constant(g.node_inputs.clone());
    let nodes = bound.mlp(tape, NODE_ENC, x)?;
    let r = tape.constant(g.edge_inputs.clone());
    let edges = bound.mlp(tape, EDGE_ENC, r)?;
    let adapter = tape.gather(bound.vars[ADAPTERS], Rc::new(vec![level]))?;
    let edges = tape.add_row(edges, adapter)?;
    Ok((nodes, edges))
}

/// Runs `steps` rounds of edge update followed by aggregated node messages.
/// Nodes without edges keep their previous feature.
pub fn message_pass(
    tape: &mut Tape,
    g: &GraphTensors,
    model: &ModelParams,
    bound: &Bound,
    mut nodes: Var,
    mut edges: Var,
    steps: usize,
) -> Result<(Var, Var)> {
    if g.edge_count() == 0 {
        return Ok((nodes, edges));
    }
    let mask = g.isolated.clone().map(|m| tape.constant(m));
    let scale = g.msg_scale.clone().map(|m| tape.constant(m));
    let message_source = if model.config.message_uses_neighbor {
        g.send.clone()
    } else {
        g.recv.clone()
    };
    for _ in 0..steps {
        let fi = tape.gather(nodes, g.src.clone())?;
        let fj = tape.gather(nodes, g.dst.clone())?;
        let x = tape.concat(&[fi, fj, edges])?;
        edges = bound.mlp(tape, EDGE_UPD, x)?;
        let fm = tape.gather(nodes, message_source.clone())?;
        let em = tape.gather(edges, g.msg_edge.clone())?;
        let x = tape.concat(&[fm, em])?;
        let mut msgs = bound.mlp(tape, NODE_UPD, x)?;
        if let Some(w) = scale {
            msgs = tape.mul(msgs, w)?;
        }
        let agg = tape.segment_sum(msgs, g.recv.clone(), g.nodes)?;
        nodes = match mask {
            Some(m) => {
                let keep = tape.mul(m, nodes)?;
                tape.add(agg, keep)?
            }
            None => agg,
        };
    }
    Ok((nodes, edges))
}

/// Edge probabilities (`|E| x 1`) from final edge features.
pub fn classify_edges(tape: &mut Tape, model: &ModelParams, bound: &Bound, edges: Var) -> Result<Var> {
    let logits = bound.mlp(tape, CLASSIFIER, edges)?;
    let c = model.config.logit_clamp;
    let logits = tape.clamp(logits, -c, c)?;
    tape.sigmoid(logits)
}

/// Full forward pass; returns the edge-score variable.
pub fn forward(tape: &mut Tape, g: &GraphTensors, model: &ModelParams, bound: &Bound, level: usize) -> Result<Var> {
    let (n, e) = init_features(tape, g, model, bound, level)?;
    let (_, e) = message_pass(tape, g, model, bound, n, e, model.config.message_steps)?;
    classify_edges(tape, model, bound, e)
}

/// Edge scores of `graph` at hierarchy `level`.
pub fn score_edges(model: &ModelParams, graph: &TrackletGraph, level: usize) -> Result<Vec<f64>> {
    let g = GraphTensors::new(graph, model)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let s = forward(&mut tape, &g, model, &bound, level)?;
    Ok(tape.value(s).data().to_vec())
}

/// Summed focal loss over the levels of one sample. Levels without edges
/// contribute nothing; `None` when no level has an edge.
pub fn sample_loss(
    tape: &mut Tape,
    levels: &[GraphTensors],
    model: &ModelParams,
    bound: &Bound,
    gamma: f64,
) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for (level, g) in levels.iter().enumerate() {
        if g.edge_count() == 0 {
            continue;
        }
        let labels = g.labels.as_ref().ok_or(Error::Unlabeled)?;
        let s = forward(tape, g, model, bound, level)?;
        let l = focal_loss(tape, s, labels, gamma)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many epochs without the mean loss improving by `min_delta`.
    pub patience: usize,
    pub min_delta: f64,
    /// Hard cap on optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub gamma: f64,
    pub adam: AdamConfig,
    /// IoU gate used to attribute detections to ground truth for labels.
    pub iou_gate: f64,
    /// Probability that a ground-truth merge at one level is applied when
    /// building the next level's training graph.
    pub teacher_merge_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            patience: 20,
            min_delta: 1e-4,
            max_steps: 0,
            gamma: 1.0,
            adam: AdamConfig::default(),
            iou_gate: 0.5,
            teacher_merge_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Trains on samples given as labeled graphs per level, one optimizer step
/// per sample, visiting samples in a seeded shuffled order each epoch.
pub fn train(model: &mut ModelParams, samples: &[Vec<TrackletGraph>], cfg: &TrainConfig, seed: u64) -> Result<TrainReport> {
    let mut prepared = Vec::with_capacity(samples.len());
    for levels in samples {
        if levels.len() > model.config.levels {
            return Err(Error::InvalidLevel {
                level: levels.len() - 1,
                levels: model.config.levels,
            });
        }
        let mut ts = Vec::with_capacity(levels.len());
        for g in levels {
            if g.labels.is_none() {
                return Err(Error::Unlabeled);
            }
            ts.push(GraphTensors::new(g, model)?);
        }
        if ts.iter().any(|g| g.edge_count() > 0) {
            prepared.push(ts);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AdamState::new(&model.params, cfg.adam);
    let mut report = TrainReport {
        loss_history: Vec::new(),
        steps: 0,
        stopped_early: false,
    };
    if prepared.is_empty() {
        return Ok(report);
    }
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    'epochs: for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for &i in &order {
            if cfg.max_steps > 0 && report.steps >= cfg.max_steps {
                if count > 0 {
                    report.loss_history.push(sum / count as f64);
                }
                break 'epochs;
            }
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let Some(loss) = sample_loss(&mut tape, &prepared[i], model, &bound, cfg.gamma)? else {
                continue;
            };
            sum += tape.value(loss).data()[0];
            count += 1;
            let mut grads = tape.backward(loss)?;
            let g: Vec<Option<Tensor>> = bound.vars.iter().map(|v| grads.take(*v)).collect();
            adam_step(&mut model.params, &g, &mut state)?;
            report.steps += 1;
        }
        let mean = sum / count.max(1) as f64;
        report.loss_history.push(mean);
        log::debug!("epoch {epoch}: loss {mean:.6}");
        if mean < best - cfg.min_delta {
            best = mean;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok(report)
}
