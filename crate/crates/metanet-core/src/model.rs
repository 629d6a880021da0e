//! The meta network: a base learner `b` and embedding learner `u` carrying
//! slow weights, two generators that map loss gradients to fast weights,
//! and an external memory of example-level fast weights indexed by task
//! embeddings and read with cosine-similarity attention.
//!
//! One episode runs in three phases. Per-example embedding-loss gradients
//! feed an LSTM generator that emits task-level fast weights for `u`.
//! Per-support-example task-loss gradients feed a coordinate-wise MLP
//! generator whose outputs are stored as memory rows alongside the support
//! embeddings. Each query then reads a convex mix of memory rows through
//! attention and classifies with the augmented base learner.
//!
//! Gradients extracted as meta information are constants on the episode
//! tape (first-order truncation); the outer loss differentiates through the
//! generators' own parameters instead.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::episodes::{sample_support_pairs, sample_support_subset, Episode, Example};
use crate::error::{Error, Result};
use crate::net::{self, AugLayout, FastPaths, NetOutput, NetSpec};
use crate::ops::Op;
use crate::preprocess::{preprocess_gradient, GradPreprocConfig};
use crate::rng::Rng;
use crate::tape::{Node, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// No task-level fast weights for the embedding network.
    Minus,
    Standard,
    /// Additional task-level fast weights for the base learner.
    Plus,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Minus => "minus",
            Variant::Standard => "standard",
            Variant::Plus => "plus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseInput {
    /// The base learner sees raw pixels.
    Raw,
    /// The base learner sees the task-specific representation `r`.
    Repr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub way: usize,
    pub shots: usize,
    /// How many support examples (or pairs, in multi-shot mode) feed the
    /// task-level generator.
    pub t_count: usize,
    pub b_spec: NetSpec,
    pub u_spec: NetSpec,
    pub variant: Variant,
    pub base_input: BaseInput,
    pub preproc: GradPreprocConfig,
    /// Hidden width of the coordinate-wise example-level generator.
    pub gen_hidden: usize,
    /// Hidden width of the task-level LSTM generator.
    pub lstm_hidden: usize,
    /// Meta-information gradients are constants on the episode tape. Only
    /// first-order training is implemented; the flag records the choice.
    pub stop_meta_grad: bool,
    pub contrastive_margin: f64,
    /// Diagnostic mode: force every fast weight to zero (the model runs on
    /// slow weights alone).
    pub zero_fast_mode: bool,
}

impl ModelConfig {
    /// MLP stacks for both learners: `depth` hidden layers of width
    /// `hidden`, the last three layers augmented. The embedding network's
    /// final hidden layer is linear and serves as the representation.
    pub fn mlp(
        input_dim: usize,
        hidden: usize,
        depth: usize,
        way: usize,
        variant: Variant,
        base_input: BaseInput,
    ) -> Self {
        let hiddens = vec![hidden; depth];
        let mut u_spec = net::mlp_spec(input_dim, &hiddens, way, true);
        u_spec.augment_last(3);
        let b_input = match base_input {
            BaseInput::Raw => input_dim,
            BaseInput::Repr => hidden,
        };
        let mut b_spec = net::mlp_spec(b_input, &hiddens, way, false);
        b_spec.augment_last(3);
        ModelConfig {
            way,
            shots: 1,
            t_count: way,
            b_spec,
            u_spec,
            variant,
            base_input,
            preproc: GradPreprocConfig::default(),
            gen_hidden: 20,
            lstm_hidden: 20,
            stop_meta_grad: true,
            contrastive_margin: 1.0,
            zero_fast_mode: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.way < 2 {
            return Err(Error::Config(format!("way must be >= 2, got {}", self.way)));
        }
        if self.shots < 1 || self.t_count < 1 {
            return Err(Error::Config("shots and T must be >= 1".into()));
        }
        self.b_spec.validate()?;
        self.u_spec.validate()?;
        if self.b_spec.out_dim() != self.way || self.u_spec.out_dim() != self.way {
            return Err(Error::Config(format!(
                "output layers must be {}-way (base {}, embedding {})",
                self.way,
                self.b_spec.out_dim(),
                self.u_spec.out_dim()
            )));
        }
        if self.gen_hidden < 1 || self.lstm_hidden < 1 {
            return Err(Error::Config("generator widths must be >= 1".into()));
        }
        if !self.stop_meta_grad {
            return Err(Error::Config(
                "second-order meta-gradients are not supported; stop_meta_grad must stay on"
                    .into(),
            ));
        }
        if self.contrastive_margin <= 0.0 {
            return Err(Error::Config("contrastive margin must be positive".into()));
        }
        if AugLayout::of(&self.b_spec).total == 0 {
            return Err(Error::Config(
                "base learner needs at least one augmented layer".into(),
            ));
        }
        if self.variant != Variant::Minus && AugLayout::of(&self.u_spec).total == 0 {
            return Err(Error::Config(
                "embedding network needs an augmented layer unless variant is minus".into(),
            ));
        }
        if self.base_input == BaseInput::Repr {
            let need = self.u_spec.pre_out_dim();
            let got: usize = self.b_spec.input_shape.iter().product();
            if need != got {
                return Err(Error::Config(format!(
                    "repr mode: base learner input dim {got} must match representation dim {need}"
                )));
            }
        }
        Ok(())
    }
}

/// Parameters of the coordinate-wise three-layer MLP generator `m`.
/// Weights are shared across gradient coordinates; biases are folded.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGenParams {
    pub l1: Tensor,
    pub l2: Tensor,
    pub l3: Tensor,
}

/// Parameters of the coordinate-wise LSTM generator `d`: input/recurrent
/// gate weights, gate bias, and the hidden-to-scalar projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGenParams {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
    pub proj: Tensor,
}

/// The trainable parameter set: base-learner weights, embedding weights,
/// and the two generator parameter groups. Nothing else is trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowWeights {
    pub w: Vec<Tensor>,
    pub q: Vec<Tensor>,
    pub z: MlpGenParams,
    pub g_u: Option<LstmGenParams>,
    pub g_b: Option<LstmGenParams>,
}

fn init_lstm_gen(hidden: usize, rng: &mut Rng) -> LstmGenParams {
    let mut p = LstmGenParams {
        wx: Tensor::uniform(&[2, 4 * hidden], -0.1, 0.1, rng),
        wh: Tensor::uniform(&[hidden, 4 * hidden], -0.1, 0.1, rng),
        b: Tensor::uniform(&[4 * hidden], -0.1, 0.1, rng),
        proj: Tensor::uniform(&[hidden + 1, 1], -0.1, 0.1, rng),
    };
    // Forget gate opens near 1 at the start.
    for v in &mut p.b.data_mut()[hidden..2 * hidden] {
        *v += 1.0;
    }
    p
}

impl SlowWeights {
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let w = net::init_params(&cfg.b_spec, rng);
        let q = net::init_params(&cfg.u_spec, rng);
        let h = cfg.gen_hidden;
        let z = MlpGenParams {
            l1: Tensor::uniform(&[3, h], -0.1, 0.1, rng),
            l2: Tensor::uniform(&[h + 1, h], -0.1, 0.1, rng),
            l3: Tensor::uniform(&[h + 1, 1], -0.1, 0.1, rng),
        };
        let g_u = (cfg.variant != Variant::Minus).then(|| init_lstm_gen(cfg.lstm_hidden, rng));
        let g_b = (cfg.variant == Variant::Plus).then(|| init_lstm_gen(cfg.lstm_hidden, rng));
        SlowWeights { w, q, z, g_u, g_b }
    }

    /// Stable (name, tensor) listing; checkpoint and optimizer order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, t) in self.w.iter().enumerate() {
            out.push((format!("w.{i}"), t));
        }
        for (i, t) in self.q.iter().enumerate() {
            out.push((format!("q.{i}"), t));
        }
        out.push(("z.l1".into(), &self.z.l1));
        out.push(("z.l2".into(), &self.z.l2));
        out.push(("z.l3".into(), &self.z.l3));
        for (prefix, g) in [("g_u", &self.g_u), ("g_b", &self.g_b)] {
            if let Some(g) = g {
                out.push((format!("{prefix}.wx"), &g.wx));
                out.push((format!("{prefix}.wh"), &g.wh));
                out.push((format!("{prefix}.b"), &g.b));
                out.push((format!("{prefix}.proj"), &g.proj));
            }
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (i, t) in self.w.iter_mut().enumerate() {
            out.push((format!("w.{i}"), t));
        }
        for (i, t) in self.q.iter_mut().enumerate() {
            out.push((format!("q.{i}"), t));
        }
        out.push(("z.l1".into(), &mut self.z.l1));
        out.push(("z.l2".into(), &mut self.z.l2));
        out.push(("z.l3".into(), &mut self.z.l3));
        for (prefix, g) in [("g_u", &mut self.g_u), ("g_b", &mut self.g_b)] {
            if let Some(g) = g {
                out.push((format!("{prefix}.wx"), &mut g.wx));
                out.push((format!("{prefix}.wh"), &mut g.wh));
                out.push((format!("{prefix}.b"), &mut g.b));
                out.push((format!("{prefix}.proj"), &mut g.proj));
            }
        }
        out
    }
}

/// Slow weights registered as leaves on an episode tape.
pub struct ThetaNodes {
    pub w: Vec<Node>,
    pub q: Vec<Node>,
    pub z: [Node; 3],
    pub g_u: Option<[Node; 4]>,
    pub g_b: Option<[Node; 4]>,
}

impl ThetaNodes {
    /// Node listing aligned with [`SlowWeights::named`].
    pub fn named(&self) -> Vec<(String, Node)> {
        let mut out = Vec::new();
        for (i, n) in self.w.iter().enumerate() {
            out.push((format!("w.{i}"), *n));
        }
        for (i, n) in self.q.iter().enumerate() {
            out.push((format!("q.{i}"), *n));
        }
        out.push(("z.l1".into(), self.z[0]));
        out.push(("z.l2".into(), self.z[1]));
        out.push(("z.l3".into(), self.z[2]));
        for (prefix, g) in [("g_u", &self.g_u), ("g_b", &self.g_b)] {
            if let Some(g) = g {
                out.push((format!("{prefix}.wx"), g[0]));
                out.push((format!("{prefix}.wh"), g[1]));
                out.push((format!("{prefix}.b"), g[2]));
                out.push((format!("{prefix}.proj"), g[3]));
            }
        }
        out
    }
}

/// Per-episode generated state: task-level fast weights, the fast-weight
/// memory (one flattened row per support example), and its embedding index.
pub struct FastWeightSet {
    /// Per embedding-network layer.
    pub q_star: Vec<Option<Node>>,
    /// Task-level fast weights for the base learner (plus variant only).
    pub b_task: Vec<Option<Node>>,
    /// `[rows, C]`, row i generated from support example i's gradient.
    pub memory: Node,
    /// `[rows, repr_dim]`, row i the task embedding of support example i.
    pub index: Node,
    /// Layout of the flattened `C` over the base learner's augmented layers.
    pub layout: AugLayout,
}

/// Result of a soft attention read.
pub struct AttendRead {
    /// Flattened fast weights `[C]` for one query.
    pub read: Node,
    /// The attention distribution over memory rows.
    pub weights: Node,
}

/// Input to the embedding loss.
pub enum EmbInput {
    Single { logits: Node, label: usize },
    Pair { a: Node, b: Node, same: bool },
}

/// Support examples (or pairs) feeding the task-level generator.
pub enum TaskSample<'a> {
    Singles(Vec<&'a Example>),
    Pairs(Vec<(&'a Example, &'a Example, bool)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub loss: f64,
    pub predicted: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub loss_sum: f64,
    pub mean_query_loss: f64,
    pub correct: usize,
    pub total: usize,
    pub per_query: Vec<QueryOutcome>,
}

impl EpisodeStats {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// A fully built episode: the tape, registered parameters, and the summed
/// query loss ready for a backward pass.
pub struct EpisodeGraph {
    pub tape: Tape,
    pub theta: ThetaNodes,
    pub loss: Node,
    pub stats: EpisodeStats,
}

/// Parameter/coordinate counts for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub w: usize,
    pub q: usize,
    pub z: usize,
    pub g_u: usize,
    pub g_b: usize,
    pub w_star_coords: usize,
    pub q_star_coords: usize,
    pub b_task_coords: usize,
}

impl ParamCounts {
    pub fn theta_total(&self) -> usize {
        self.w + self.q + self.z + self.g_u + self.g_b
    }
}

pub struct MetaNet {
    pub cfg: ModelConfig,
    pub weights: SlowWeights,
}

fn argmax(data: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in data.iter().enumerate() {
        if v > data[best] {
            best = i;
        }
    }
    best
}

impl MetaNet {
    pub fn init(cfg: ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let weights = SlowWeights::init(&cfg, rng);
        Ok(MetaNet { cfg, weights })
    }

    pub fn from_weights(cfg: ModelConfig, weights: SlowWeights) -> Result<Self> {
        cfg.validate()?;
        for (spec, params, what) in [
            (&cfg.b_spec, &weights.w, "base"),
            (&cfg.u_spec, &weights.q, "embedding"),
        ] {
            if spec.layers.len() != params.len() {
                return Err(Error::Config(format!(
                    "{what} learner has {} layers but {} parameter tensors",
                    spec.layers.len(),
                    params.len()
                )));
            }
            for (l, t) in spec.layers.iter().zip(params) {
                if l.param_shape() != t.shape() {
                    return Err(Error::Config(format!(
                        "{what} learner parameter shape {:?} does not match layer {:?}",
                        t.shape(),
                        l.param_shape()
                    )));
                }
            }
        }
        if (weights.g_u.is_some()) != (cfg.variant != Variant::Minus)
            || (weights.g_b.is_some()) != (cfg.variant == Variant::Plus)
        {
            return Err(Error::Config(
                "generator parameter groups do not match the variant".into(),
            ));
        }
        Ok(MetaNet { cfg, weights })
    }

    pub fn param_counts(&self) -> ParamCounts {
        let lstm = |g: &Option<LstmGenParams>| {
            g.as_ref()
                .map(|g| g.wx.len() + g.wh.len() + g.b.len() + g.proj.len())
                .unwrap_or(0)
        };
        ParamCounts {
            w: self.weights.w.iter().map(Tensor::len).sum(),
            q: self.weights.q.iter().map(Tensor::len).sum(),
            z: self.weights.z.l1.len() + self.weights.z.l2.len() + self.weights.z.l3.len(),
            g_u: lstm(&self.weights.g_u),
            g_b: lstm(&self.weights.g_b),
            w_star_coords: AugLayout::of(&self.cfg.b_spec).total,
            q_star_coords: if self.cfg.variant == Variant::Minus {
                0
            } else {
                AugLayout::of(&self.cfg.u_spec).total
            },
            b_task_coords: if self.cfg.variant == Variant::Plus {
                AugLayout::of(&self.cfg.b_spec).total
            } else {
                0
            },
        }
    }

    pub fn register_theta(&self, tape: &mut Tape) -> ThetaNodes {
        let w = self.weights.w.iter().map(|t| tape.leaf(t.clone())).collect();
        let q = self.weights.q.iter().map(|t| tape.leaf(t.clone())).collect();
        let z = [
            tape.leaf(self.weights.z.l1.clone()),
            tape.leaf(self.weights.z.l2.clone()),
            tape.leaf(self.weights.z.l3.clone()),
        ];
        let reg_lstm = |tape: &mut Tape, g: &LstmGenParams| {
            [
                tape.leaf(g.wx.clone()),
                tape.leaf(g.wh.clone()),
                tape.leaf(g.b.clone()),
                tape.leaf(g.proj.clone()),
            ]
        };
        let g_u = self.weights.g_u.as_ref().map(|g| reg_lstm(tape, g));
        let g_b = self.weights.g_b.as_ref().map(|g| reg_lstm(tape, g));
        ThetaNodes { w, q, z, g_u, g_b }
    }

    fn input_node(&self, tape: &mut Tape, pixels: &Tensor, spec: &NetSpec) -> Result<Node> {
        let need: usize = spec.input_shape.iter().product();
        if pixels.len() != need {
            return Err(Error::Config(format!(
                "input holds {} values, network expects {need}",
                pixels.len()
            )));
        }
        Ok(tape.leaf(pixels.reshaped(&spec.input_shape)?))
    }

    // ── Embedding loss ────────────────────────────────────────────────

    /// The representation-learning loss. One-shot mode: cross-entropy of
    /// the embedding network's auxiliary softmax head. Multi-shot mode:
    /// contrastive loss over an embedding pair
    /// (`l*dist^2 + (1-l)*max(0, margin - dist)^2`).
    pub fn loss_emb(&self, tape: &mut Tape, input: EmbInput) -> Result<Node> {
        match input {
            EmbInput::Single { .. } if self.cfg.shots != 1 => Err(Error::Config(
                "multi-shot embedding loss takes a pair, not a single example".into(),
            )),
            EmbInput::Pair { .. } if self.cfg.shots == 1 => Err(Error::Config(
                "one-shot embedding loss takes a single example, not a pair".into(),
            )),
            EmbInput::Single { logits, label } => {
                tape.apply(Op::CrossEntropyLogits { label }, &[logits])
            }
            EmbInput::Pair { a, b, same } => self.contrastive(tape, a, b, same),
        }
    }

    fn contrastive(&self, tape: &mut Tape, a: Node, b: Node, same: bool) -> Result<Node> {
        let dist = tape.apply(Op::L2Distance, &[a, b])?;
        if same {
            tape.apply(Op::Mul, &[dist, dist])
        } else {
            let gap = tape.apply(
                Op::AffineConst {
                    mul: -1.0,
                    add: self.cfg.contrastive_margin,
                },
                &[dist],
            )?;
            let gap = tape.apply(Op::Relu, &[gap])?;
            tape.apply(Op::Mul, &[gap, gap])
        }
    }

    // ── Inner gradient passes (meta information) ─────────────────────

    /// Preprocessed per-coordinate gradients of the embedding loss w.r.t.
    /// the embedding network's augmented layers, for one support example.
    fn u_aug_grads_single(&self, pixels: &Tensor, label: usize) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let q: Vec<Node> = self
            .weights
            .q
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let xin = self.input_node(&mut tape, pixels, &self.cfg.u_spec)?;
        let out = net::forward(&mut tape, &self.cfg.u_spec, &q, FastPaths::none(), xin)?;
        let loss = tape.apply(Op::CrossEntropyLogits { label }, &[out.logits])?;
        let grads = tape.backward(loss)?;
        self.collect_aug_grads(&tape, &grads, &q, &self.cfg.u_spec)
    }

    fn u_aug_grads_pair(&self, a: &Example, b: &Example, same: bool) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let q: Vec<Node> = self
            .weights
            .q
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let xa = self.input_node(&mut tape, &a.pixels, &self.cfg.u_spec)?;
        let xb = self.input_node(&mut tape, &b.pixels, &self.cfg.u_spec)?;
        let ea = net::forward(&mut tape, &self.cfg.u_spec, &q, FastPaths::none(), xa)?;
        let eb = net::forward(&mut tape, &self.cfg.u_spec, &q, FastPaths::none(), xb)?;
        let loss = self.contrastive(&mut tape, ea.pre_final, eb.pre_final, same)?;
        let grads = tape.backward(loss)?;
        self.collect_aug_grads(&tape, &grads, &q, &self.cfg.u_spec)
    }

    /// Preprocessed task-loss gradients w.r.t. the base learner's augmented
    /// layers, for one support example, slow weights only.
    fn b_aug_grads(&self, input: &Tensor, label: usize) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let w: Vec<Node> = self
            .weights
            .w
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let xin = self.input_node(&mut tape, input, &self.cfg.b_spec)?;
        let out = net::forward(&mut tape, &self.cfg.b_spec, &w, FastPaths::none(), xin)?;
        let loss = tape.apply(Op::CrossEntropyLogits { label }, &[out.logits])?;
        let grads = tape.backward(loss)?;
        self.collect_aug_grads(&tape, &grads, &w, &self.cfg.b_spec)
    }

    fn collect_aug_grads(
        &self,
        tape: &Tape,
        grads: &crate::tape::GradMap,
        nodes: &[Node],
        spec: &NetSpec,
    ) -> Result<Vec<Tensor>> {
        AugLayout::of(spec)
            .entries
            .iter()
            .map(|e| {
                let g = grads.get(tape, nodes[e.layer_idx]);
                preprocess_gradient(&g, self.cfg.preproc)?.reshaped(&[e.len, 2])
            })
            .collect()
    }

    // ── Generators ────────────────────────────────────────────────────

    /// Coordinate-wise MLP generator: `[C,2]` preprocessed gradients to
    /// `[C,1]` fast-weight values, parameters shared across rows.
    fn mlp_gen_apply(&self, tape: &mut Tape, z: [Node; 3], grad_rows: &Tensor) -> Result<Node> {
        let c = grad_rows.shape()[0];
        let x = tape.leaf(grad_rows.clone());
        let ones = tape.leaf(Tensor::new(vec![c, 1], vec![1.0; c])?);
        let x1 = tape.apply(Op::Concat { axis: 1 }, &[x, ones])?;
        let h1 = tape.apply(Op::Matmul, &[x1, z[0]])?;
        let h1 = tape.apply(Op::Relu, &[h1])?;
        let h1c = tape.apply(Op::Concat { axis: 1 }, &[h1, ones])?;
        let h2 = tape.apply(Op::Matmul, &[h1c, z[1]])?;
        let h2 = tape.apply(Op::Relu, &[h2])?;
        let h2c = tape.apply(Op::Concat { axis: 1 }, &[h2, ones])?;
        tape.apply(Op::Matmul, &[h2c, z[2]])
    }

    /// Coordinate-wise LSTM generator: a sequence of `[C,2]` gradient codes
    /// summarized into `[C,1]` fast-weight values.
    fn lstm_gen_apply(&self, tape: &mut Tape, g: [Node; 4], seq: &[Tensor]) -> Result<Node> {
        let c = seq[0].shape()[0];
        let hd = self.cfg.lstm_hidden;
        let mut h = tape.leaf(Tensor::zeros(&[c, hd]));
        let mut cell = tape.leaf(Tensor::zeros(&[c, hd]));
        for step in seq {
            let x = tape.leaf(step.clone());
            let (nh, nc) = tape.lstm_cell(x, h, cell, g[0], g[1], g[2])?;
            h = nh;
            cell = nc;
        }
        let ones = tape.leaf(Tensor::new(vec![c, 1], vec![1.0; c])?);
        let hc = tape.apply(Op::Concat { axis: 1 }, &[h, ones])?;
        tape.apply(Op::Matmul, &[hc, g[3]])
    }

    // ── Spec operations ───────────────────────────────────────────────

    /// Task-level fast weights for the embedding network from a sample of
    /// support examples (one-shot) or pairs (multi-shot). Returns one node
    /// per embedding layer, `None` where the layer is not augmented.
    pub fn gen_task_fast_weights(
        &self,
        tape: &mut Tape,
        theta: &ThetaNodes,
        sample: &TaskSample<'_>,
    ) -> Result<Vec<Option<Node>>> {
        let Some(g) = theta.g_u else {
            return Err(Error::Config(
                "this variant has no task-level fast weights".into(),
            ));
        };
        let per_example: Vec<Vec<Tensor>> = match sample {
            TaskSample::Singles(list) => {
                if list.is_empty() {
                    return Err(Error::Sampling("task sample is empty".into()));
                }
                if self.cfg.shots != 1 {
                    return Err(Error::Config(
                        "multi-shot embedding loss takes a pair, not a single example".into(),
                    ));
                }
                list.iter()
                    .map(|e| self.u_aug_grads_single(&e.pixels, e.label))
                    .collect::<Result<_>>()?
            }
            TaskSample::Pairs(list) => {
                if list.is_empty() {
                    return Err(Error::Sampling("task sample is empty".into()));
                }
                if self.cfg.shots == 1 {
                    return Err(Error::Config(
                        "one-shot embedding loss takes a single example, not a pair".into(),
                    ));
                }
                list.iter()
                    .map(|(a, b, same)| self.u_aug_grads_pair(a, b, *same))
                    .collect::<Result<_>>()?
            }
        };
        self.task_weights_from_grads(tape, g, &per_example, &self.cfg.u_spec)
    }

    fn task_weights_from_grads(
        &self,
        tape: &mut Tape,
        g: [Node; 4],
        per_example: &[Vec<Tensor>],
        spec: &NetSpec,
    ) -> Result<Vec<Option<Node>>> {
        let layout = AugLayout::of(spec);
        let mut out = vec![None; spec.layers.len()];
        for (li, entry) in layout.entries.iter().enumerate() {
            let seq: Vec<Tensor> = per_example.iter().map(|s| s[li].clone()).collect();
            let col = self.lstm_gen_apply(tape, g, &seq)?;
            let shaped = tape.apply(
                Op::Reshape {
                    shape: entry.shape.clone(),
                },
                &[col],
            )?;
            out[entry.layer_idx] = Some(shaped);
        }
        Ok(out)
    }

    /// Example-level fast weights for one support example, flattened to a
    /// `[1, C]` memory row.
    pub fn gen_example_fast_weights(
        &self,
        tape: &mut Tape,
        theta: &ThetaNodes,
        input: &Tensor,
        label: usize,
    ) -> Result<Node> {
        let grads = self.b_aug_grads(input, label)?;
        self.m_row_from_grads(tape, theta, &grads)
    }

    fn m_row_from_grads(
        &self,
        tape: &mut Tape,
        theta: &ThetaNodes,
        grads: &[Tensor],
    ) -> Result<Node> {
        let layout = AugLayout::of(&self.cfg.b_spec);
        let mut pieces = Vec::with_capacity(layout.entries.len());
        for (li, entry) in layout.entries.iter().enumerate() {
            let col = self.mlp_gen_apply(tape, theta.z, &grads[li])?;
            pieces.push(tape.apply(
                Op::Reshape {
                    shape: vec![1, entry.len],
                },
                &[col],
            )?);
        }
        if pieces.len() == 1 {
            Ok(pieces[0])
        } else {
            tape.apply(Op::Concat { axis: 1 }, &pieces)
        }
    }

    /// The base-learner input for a support/query example: raw pixels or
    /// the task representation, per configuration.
    fn base_input_value(&self, tape: &Tape, ex: &Example, r: Node) -> Tensor {
        match self.cfg.base_input {
            BaseInput::Raw => ex.pixels.clone(),
            BaseInput::Repr => tape.value(r).clone(),
        }
    }

    /// Build the fast-weight memory and its embedding index over the whole
    /// support set. Task-level fast weights must already be generated for
    /// the standard and plus variants.
    pub fn build_memory(
        &self,
        tape: &mut Tape,
        theta: &ThetaNodes,
        support: &[Example],
        q_star: &[Option<Node>],
    ) -> Result<FastWeightSet> {
        let parts = self.memory_parts(tape, theta, support, q_star)?;
        let b_task = vec![None; self.cfg.b_spec.layers.len()];
        self.assemble_memory(tape, theta, q_star, b_task, parts)
    }

    fn memory_parts(
        &self,
        tape: &mut Tape,
        theta: &ThetaNodes,
        support: &[Example],
        q_star: &[Option<Node>],
    ) -> Result<MemoryParts> {
        if support.is_empty() {
            return Err(Error::Sampling("support set is empty".into()));
        }
        let mut r_nodes = Vec::with_capacity(support.len());
        for ex in support {
            let xin = self.input_node(tape, &ex.pixels, &self.cfg.u_spec)?;
            let out = net::forward(
                tape,
                &self.cfg.u_spec,
                &theta.q,
                FastPaths::single(q_star),
                xin,
            )?;
            r_nodes.push(out.pre_final);
        }
        let mut grads = Vec::with_capacity(support.len());
        for (i, ex) in support.iter().enumerate() {
            let input = self.base_input_value(tape, ex, r_nodes[i]);
            grads.push(self.b_aug_grads(&input, ex.label)?);
        }
        Ok(MemoryParts { r_nodes, grads })
    }

    fn assemble_memory(
        &self,
        tape: &mut Tape,
        theta: &ThetaNodes,
        q_star: &[Option<Node>],
        b_task: Vec<Option<Node>>,
        parts: MemoryParts,
    ) -> Result<FastWeightSet> {
        let mut m_rows = Vec::with_capacity(parts.grads.len());
        for g in &parts.grads {
            m_rows.push(self.m_row_from_grads(tape, theta, g)?);
        }
        let memory = if m_rows.len() == 1 {
            m_rows[0]
        } else {
            tape.apply(Op::Concat { axis: 0 }, &m_rows)?
        };
        let dr = self.cfg.u_spec.pre_out_dim();
        let mut r_rows = Vec::with_capacity(parts.r_nodes.len());
        for r in &parts.r_nodes {
            r_rows.push(tape.apply(
                Op::Reshape {
                    shape: vec![1, dr],
                },
                &[*r],
            )?);
        }
        let index = if r_rows.len() == 1 {
            r_rows[0]
        } else {
            tape.apply(Op::Concat { axis: 0 }, &r_rows)?
        };
        Ok(FastWeightSet {
            q_star: q_star.to_vec(),
            b_task,
            memory,
            index,
            layout: AugLayout::of(&self.cfg.b_spec),
        })
    }

    /// Soft attention over the memory: cosine similarity of the query
    /// embedding against every index row, normalized with softmax, then a
    /// convex combination of memory rows.
    pub fn attend_read(
        &self,
        tape: &mut Tape,
        fws: &FastWeightSet,
        query: Node,
    ) -> Result<AttendRead> {
        let scores = tape.apply(Op::CosineSimRows, &[fws.index, query])?;
        let weights = tape.apply(Op::Softmax, &[scores])?;
        let rows = tape.value(fws.memory).shape()[0];
        let wrow = tape.apply(
            Op::Reshape {
                shape: vec![1, rows],
            },
            &[weights],
        )?;
        let read = tape.apply(Op::Matmul, &[wrow, fws.memory])?;
        let read = tape.apply(
            Op::Reshape {
                shape: vec![fws.layout.total],
            },
            &[read],
        )?;
        Ok(AttendRead { read, weights })
    }

    /// Slice a flattened fast-weight vector into per-layer bindings.
    fn bind_example_fast(
        &self,
        tape: &mut Tape,
        layout: &AugLayout,
        read: Node,
    ) -> Result<Vec<Option<Node>>> {
        let mut out = vec![None; self.cfg.b_spec.layers.len()];
        for entry in &layout.entries {
            let piece = tape.apply(
                Op::SliceFlat {
                    offset: entry.offset,
                    len: entry.len,
                },
                &[read],
            )?;
            out[entry.layer_idx] = Some(tape.apply(
                Op::Reshape {
                    shape: entry.shape.clone(),
                },
                &[piece],
            )?);
        }
        Ok(out)
    }

    fn base_forward(
        &self,
        tape: &mut Tape,
        theta: &ThetaNodes,
        fast: &[Option<Node>],
        b_task: &[Option<Node>],
        input: Node,
    ) -> Result<NetOutput> {
        net::forward(
            tape,
            &self.cfg.b_spec,
            &theta.w,
            FastPaths {
                primary: Some(fast),
                secondary: Some(b_task),
            },
            input,
        )
    }

    /// Class distribution over the episode's classes for one query, given
    /// its attention-read fast weights.
    pub fn predict(
        &self,
        tape: &mut Tape,
        theta: &ThetaNodes,
        fws: &FastWeightSet,
        read: Node,
        input: Node,
    ) -> Result<Node> {
        let expected = AugLayout::of(&self.cfg.b_spec);
        if fws.layout != expected || tape.value(read).len() != expected.total {
            return Err(Error::Config(format!(
                "fast weights ({} coords) do not match the base learner's augmented layers ({})",
                tape.value(read).len(),
                expected.total
            )));
        }
        let fast = self.bind_example_fast(tape, &fws.layout, read)?;
        let out = self.base_forward(tape, theta, &fast, &fws.b_task, input)?;
        tape.apply(Op::Softmax, &[out.logits])
    }

    // ── Full episode ──────────────────────────────────────────────────

    /// Run one full episode on a fresh tape: task fast weights, memory
    /// build, and the query loop accumulating the summed task loss.
    pub fn episode_graph(&self, episode: &Episode, rng: &mut Rng) -> Result<EpisodeGraph> {
        if episode.way() != self.cfg.way {
            return Err(Error::Config(format!(
                "episode is {}-way but the model is {}-way",
                episode.way(),
                self.cfg.way
            )));
        }
        if episode.support.is_empty() || episode.query.is_empty() {
            return Err(Error::Sampling("episode has empty support or query".into()));
        }
        let mut tape = Tape::new();
        let theta = self.register_theta(&mut tape);

        if self.cfg.zero_fast_mode {
            return self.episode_graph_zero_fast(tape, theta, episode);
        }

        // One T-sample of support indices serves both task-level
        // generators.
        let needs_singles = self.cfg.variant == Variant::Plus
            || (self.cfg.variant == Variant::Standard && self.cfg.shots == 1);
        let t_singles = if needs_singles {
            sample_support_subset(episode.support.len(), self.cfg.t_count, rng)
        } else {
            Vec::new()
        };

        let q_star: Vec<Option<Node>> = if self.cfg.variant == Variant::Minus {
            vec![None; self.cfg.u_spec.layers.len()]
        } else if self.cfg.shots == 1 {
            let sample =
                TaskSample::Singles(t_singles.iter().map(|&i| &episode.support[i]).collect());
            self.gen_task_fast_weights(&mut tape, &theta, &sample)?
        } else {
            let pairs = sample_support_pairs(&episode.support, self.cfg.t_count, rng);
            let sample = TaskSample::Pairs(
                pairs
                    .iter()
                    .map(|&(i, j, same)| (&episode.support[i], &episode.support[j], same))
                    .collect(),
            );
            self.gen_task_fast_weights(&mut tape, &theta, &sample)?
        };

        let parts = self.memory_parts(&mut tape, &theta, &episode.support, &q_star)?;

        // Plus variant: task-level fast weights for the base learner from
        // the same T-sample's task-loss gradients.
        let b_task = if let Some(g_b) = theta.g_b {
            let subset: Vec<Vec<Tensor>> =
                t_singles.iter().map(|&i| parts.grads[i].clone()).collect();
            self.task_weights_from_grads(&mut tape, g_b, &subset, &self.cfg.b_spec)?
        } else {
            vec![None; self.cfg.b_spec.layers.len()]
        };

        let fws = self.assemble_memory(&mut tape, &theta, &q_star, b_task, parts)?;

        // Query loop.
        let mut per_query = Vec::with_capacity(episode.query.len());
        let mut correct = 0;
        let mut loss_acc: Option<Node> = None;
        for ex in &episode.query {
            let xin_u = self.input_node(&mut tape, &ex.pixels, &self.cfg.u_spec)?;
            let uout = net::forward(
                &mut tape,
                &self.cfg.u_spec,
                &theta.q,
                FastPaths::single(&fws.q_star),
                xin_u,
            )?;
            let r = uout.pre_final;
            let read = self.attend_read(&mut tape, &fws, r)?;
            let fast = self.bind_example_fast(&mut tape, &fws.layout, read.read)?;
            let input = match self.cfg.base_input {
                BaseInput::Raw => self.input_node(&mut tape, &ex.pixels, &self.cfg.b_spec)?,
                BaseInput::Repr => r,
            };
            let bout = self.base_forward(&mut tape, &theta, &fast, &fws.b_task, input)?;
            let qloss = tape.apply(Op::CrossEntropyLogits { label: ex.label }, &[bout.logits])?;

            let predicted = argmax(tape.value(bout.logits).data());
            if predicted == ex.label {
                correct += 1;
            }
            per_query.push(QueryOutcome {
                loss: tape.value(qloss).scalar_value(),
                predicted,
                label: ex.label,
            });
            loss_acc = Some(match loss_acc {
                None => qloss,
                Some(acc) => tape.apply(Op::Add, &[acc, qloss])?,
            });
        }
        let loss = loss_acc.unwrap();
        let loss_sum = tape.value(loss).scalar_value();
        let total = episode.query.len();
        Ok(EpisodeGraph {
            tape,
            theta,
            loss,
            stats: EpisodeStats {
                loss_sum,
                mean_query_loss: loss_sum / total as f64,
                correct,
                total,
                per_query,
            },
        })
    }

    /// Diagnostic path: every fast weight forced to zero, so both learners
    /// run on slow weights alone.
    fn episode_graph_zero_fast(
        &self,
        mut tape: Tape,
        theta: ThetaNodes,
        episode: &Episode,
    ) -> Result<EpisodeGraph> {
        let mut per_query = Vec::with_capacity(episode.query.len());
        let mut correct = 0;
        let mut loss_acc: Option<Node> = None;
        for ex in &episode.query {
            let input = match self.cfg.base_input {
                BaseInput::Raw => self.input_node(&mut tape, &ex.pixels, &self.cfg.b_spec)?,
                BaseInput::Repr => {
                    let xin_u = self.input_node(&mut tape, &ex.pixels, &self.cfg.u_spec)?;
                    net::forward(
                        &mut tape,
                        &self.cfg.u_spec,
                        &theta.q,
                        FastPaths::none(),
                        xin_u,
                    )?
                    .pre_final
                }
            };
            let bout = net::forward(
                &mut tape,
                &self.cfg.b_spec,
                &theta.w,
                FastPaths::none(),
                input,
            )?;
            let qloss = tape.apply(Op::CrossEntropyLogits { label: ex.label }, &[bout.logits])?;
            let predicted = argmax(tape.value(bout.logits).data());
            if predicted == ex.label {
                correct += 1;
            }
            per_query.push(QueryOutcome {
                loss: tape.value(qloss).scalar_value(),
                predicted,
                label: ex.label,
            });
            loss_acc = Some(match loss_acc {
                None => qloss,
                Some(acc) => tape.apply(Op::Add, &[acc, qloss])?,
            });
        }
        let loss = loss_acc.unwrap();
        let loss_sum = tape.value(loss).scalar_value();
        let total = episode.query.len();
        Ok(EpisodeGraph {
            tape,
            theta,
            loss,
            stats: EpisodeStats {
                loss_sum,
                mean_query_loss: loss_sum / total as f64,
                correct,
                total,
                per_query,
            },
        })
    }
}

struct MemoryParts {
    r_nodes: Vec<Node>,
    grads: Vec<Vec<Tensor>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, stream_rng};
    use alloc::vec::Vec;
    use rand::Rng as _;

    fn tiny_cfg(variant: Variant) -> ModelConfig {
        ModelConfig::mlp(16, 8, 2, 3, variant, BaseInput::Raw)
    }

    fn tiny_model(variant: Variant, seed: u64) -> MetaNet {
        let mut rng = stream_rng(seed, stream::INIT);
        MetaNet::init(tiny_cfg(variant), &mut rng).unwrap()
    }

    fn tiny_episode(way: usize, queries: usize, input_dim: usize, seed: u64) -> Episode {
        let mut rng = stream_rng(seed, stream::TRAIN);
        let mut rand_pixels = || {
            let data: Vec<f64> = (0..input_dim).map(|_| rng.random_range(0.0..1.0)).collect();
            Tensor::from_vec(data)
        };
        let support = (0..way)
            .map(|label| Example {
                pixels: rand_pixels(),
                label,
            })
            .collect();
        let query = (0..queries)
            .map(|i| Example {
                pixels: rand_pixels(),
                label: i % way,
            })
            .collect();
        Episode {
            support,
            query,
            class_map: (0..way).collect(),
        }
    }

    fn manual_fws(tape: &mut Tape, memory: Tensor, index: Tensor) -> FastWeightSet {
        let total = memory.shape()[1];
        FastWeightSet {
            q_star: Vec::new(),
            b_task: Vec::new(),
            memory: tape.leaf(memory),
            index: tape.leaf(index),
            layout: AugLayout {
                entries: Vec::new(),
                total,
            },
        }
    }

    #[test]
    fn attention_singleton_memory() {
        let model = tiny_model(Variant::Standard, 1);
        let mut tape = Tape::new();
        let fws = manual_fws(
            &mut tape,
            Tensor::new(alloc::vec![1, 3], alloc::vec![1.0, 2.0, 3.0]).unwrap(),
            Tensor::new(alloc::vec![1, 2], alloc::vec![0.3, -0.7]).unwrap(),
        );
        let q = tape.leaf(Tensor::from_vec(alloc::vec![1.0, 1.0]));
        let read = model.attend_read(&mut tape, &fws, q).unwrap();
        assert_eq!(tape.value(read.weights).data(), &[1.0]);
        assert_eq!(tape.value(read.read).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn attention_two_slot_closed_form() {
        // Query equals key 0; key 1 orthogonal: softmax([1,0]).
        let model = tiny_model(Variant::Standard, 1);
        let mut tape = Tape::new();
        let fws = manual_fws(
            &mut tape,
            Tensor::new(alloc::vec![2, 2], alloc::vec![10.0, 0.0, 0.0, 10.0]).unwrap(),
            Tensor::new(alloc::vec![2, 2], alloc::vec![2.0, 0.0, 0.0, 5.0]).unwrap(),
        );
        let q = tape.leaf(Tensor::from_vec(alloc::vec![1.0, 0.0]));
        let read = model.attend_read(&mut tape, &fws, q).unwrap();
        let e = core::f64::consts::E;
        let w0 = e / (e + 1.0);
        let w1 = 1.0 / (e + 1.0);
        let got = tape.value(read.weights).data();
        assert!((got[0] - w0).abs() < 1e-9, "w0 = {}", got[0]);
        assert!((got[1] - w1).abs() < 1e-9, "w1 = {}", got[1]);
        let r = tape.value(read.read).data();
        assert!((r[0] - 10.0 * w0).abs() < 1e-9);
        assert!((r[1] - 10.0 * w1).abs() < 1e-9);
    }

    #[test]
    fn attention_identical_keys_split_evenly() {
        let model = tiny_model(Variant::Standard, 1);
        let mut tape = Tape::new();
        let fws = manual_fws(
            &mut tape,
            Tensor::new(alloc::vec![2, 1], alloc::vec![4.0, -2.0]).unwrap(),
            Tensor::new(alloc::vec![2, 2], alloc::vec![1.0, 2.0, 1.0, 2.0]).unwrap(),
        );
        let q = tape.leaf(Tensor::from_vec(alloc::vec![-0.4, 0.9]));
        let read = model.attend_read(&mut tape, &fws, q).unwrap();
        let got = tape.value(read.weights).data();
        assert!((got[0] - 0.5).abs() < 1e-12);
        assert!((got[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_generator_parameters_give_zero_fast_weights() {
        // m with all-zero parameters maps any gradient to exactly zero.
        let mut model = tiny_model(Variant::Standard, 2);
        model.weights.z.l1 = Tensor::zeros(model.weights.z.l1.shape());
        model.weights.z.l2 = Tensor::zeros(model.weights.z.l2.shape());
        model.weights.z.l3 = Tensor::zeros(model.weights.z.l3.shape());
        let mut tape = Tape::new();
        let theta = model.register_theta(&mut tape);
        let ep = tiny_episode(3, 3, 16, 5);
        let row = model
            .gen_example_fast_weights(&mut tape, &theta, &ep.support[0].pixels, 0)
            .unwrap();
        let total = AugLayout::of(&model.cfg.b_spec).total;
        assert_eq!(tape.value(row).shape(), &[1, total]);
        assert!(tape.value(row).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_lstm_generator_gives_zero_task_weights() {
        let mut model = tiny_model(Variant::Standard, 3);
        let g = model.weights.g_u.as_mut().unwrap();
        g.wx = Tensor::zeros(g.wx.shape());
        g.wh = Tensor::zeros(g.wh.shape());
        g.b = Tensor::zeros(g.b.shape());
        g.proj = Tensor::zeros(g.proj.shape());
        let ep = tiny_episode(3, 3, 16, 6);
        let mut tape = Tape::new();
        let theta = model.register_theta(&mut tape);
        let sample = TaskSample::Singles(ep.support.iter().collect());
        let q_star = model
            .gen_task_fast_weights(&mut tape, &theta, &sample)
            .unwrap();
        let mut seen = 0;
        for q in q_star.iter().flatten() {
            assert!(tape.value(*q).data().iter().all(|&v| v == 0.0));
            seen += 1;
        }
        assert_eq!(seen, model.cfg.u_spec.augmented_indices().len());
    }

    #[test]
    fn identical_support_examples_give_identical_rows() {
        let model = tiny_model(Variant::Standard, 4);
        let ep = tiny_episode(3, 3, 16, 7);
        let mut tape = Tape::new();
        let theta = model.register_theta(&mut tape);
        let a = model
            .gen_example_fast_weights(&mut tape, &theta, &ep.support[1].pixels, 1)
            .unwrap();
        let b = model
            .gen_example_fast_weights(&mut tape, &theta, &ep.support[1].pixels, 1)
            .unwrap();
        assert_eq!(tape.value(a).data(), tape.value(b).data());
    }

    #[test]
    fn task_weights_are_bitwise_reproducible_and_label_sensitive() {
        let model = tiny_model(Variant::Standard, 8);
        let ep = tiny_episode(3, 3, 16, 9);
        let run = |ep: &Episode| -> Vec<Vec<f64>> {
            let mut tape = Tape::new();
            let theta = model.register_theta(&mut tape);
            let sample = TaskSample::Singles(ep.support.iter().collect());
            let q_star = model
                .gen_task_fast_weights(&mut tape, &theta, &sample)
                .unwrap();
            q_star
                .iter()
                .flatten()
                .map(|q| tape.value(*q).data().to_vec())
                .collect()
        };
        let a = run(&ep);
        let b = run(&ep);
        assert_eq!(a, b);

        let mut perturbed = ep.clone();
        perturbed.support[0].label = 1;
        let c = run(&perturbed);
        let differs = a
            .iter()
            .zip(&c)
            .any(|(x, y)| x.iter().zip(y).any(|(u, v)| u != v));
        assert!(differs, "task fast weights ignored a support label change");
    }

    #[test]
    fn memory_rows_permute_with_support_order() {
        let model = tiny_model(Variant::Minus, 10);
        let ep = tiny_episode(3, 3, 16, 11);
        let build = |support: &[Example]| -> (Vec<f64>, Vec<f64>, usize) {
            let mut tape = Tape::new();
            let theta = model.register_theta(&mut tape);
            let none = alloc::vec![None; model.cfg.u_spec.layers.len()];
            let fws = model
                .build_memory(&mut tape, &theta, support, &none)
                .unwrap();
            let m = tape.value(fws.memory);
            (
                m.data().to_vec(),
                tape.value(fws.index).data().to_vec(),
                m.shape()[1],
            )
        };
        let (m0, r0, c) = build(&ep.support);
        let mut swapped = ep.support.clone();
        swapped.swap(0, 2);
        let (m1, r1, _) = build(&swapped);
        assert_eq!(&m1[..c], &m0[2 * c..3 * c]);
        assert_eq!(&m1[2 * c..3 * c], &m0[..c]);
        assert_eq!(&m1[c..2 * c], &m0[c..2 * c]);
        let dr = model.cfg.u_spec.pre_out_dim();
        assert_eq!(&r1[..dr], &r0[2 * dr..3 * dr]);
    }

    #[test]
    fn support_permutation_leaves_predictions_unchanged() {
        // Full-pipeline equivariance holds for the variant without
        // task-level fast weights (the memory read is order-independent).
        let model = tiny_model(Variant::Minus, 12);
        let ep = tiny_episode(3, 4, 16, 13);
        let mut rng = stream_rng(1, stream::EVAL_BASE);
        let g1 = model.episode_graph(&ep, &mut rng).unwrap();
        let mut permuted = ep.clone();
        permuted.support.reverse();
        let mut rng = stream_rng(1, stream::EVAL_BASE);
        let g2 = model.episode_graph(&permuted, &mut rng).unwrap();
        for (a, b) in g1.stats.per_query.iter().zip(&g2.stats.per_query) {
            assert_eq!(a.predicted, b.predicted);
            assert!((a.loss - b.loss).abs() < 1e-9);
        }
    }

    #[test]
    fn predict_is_a_distribution_and_collapses_at_zero() {
        let model = tiny_model(Variant::Standard, 14);
        let ep = tiny_episode(3, 3, 16, 15);
        let mut tape = Tape::new();
        let theta = model.register_theta(&mut tape);
        let sample = TaskSample::Singles(ep.support.iter().collect());
        let q_star = model
            .gen_task_fast_weights(&mut tape, &theta, &sample)
            .unwrap();
        let fws = model
            .build_memory(&mut tape, &theta, &ep.support, &q_star)
            .unwrap();

        let mut rng = stream_rng(99, stream::TRAIN);
        let mut entropy_ok = 0;
        for _ in 0..50 {
            let pix: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
            let x = tape.leaf(Tensor::from_vec(pix.clone()));
            let xq = tape.leaf(Tensor::from_vec(pix));
            let uout = net::forward(
                &mut tape,
                &model.cfg.u_spec,
                &theta.q,
                FastPaths::single(&fws.q_star),
                xq,
            )
            .unwrap();
            let read = model.attend_read(&mut tape, &fws, uout.pre_final).unwrap();
            let probs = model.predict(&mut tape, &theta, &fws, read.read, x).unwrap();
            let p = tape.value(probs).data();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // Small random weights keep the distribution near uniform.
            let entropy: f64 = -p.iter().map(|&v| v * v.ln()).sum::<f64>();
            if (entropy - (3.0f64).ln()).abs() < 0.1 * (3.0f64).ln() {
                entropy_ok += 1;
            }
        }
        assert!(entropy_ok >= 45, "only {entropy_ok}/50 near-uniform");

        // Zero read vector: prediction equals the slow-only network's.
        let zero_read = tape.leaf(Tensor::zeros(&[fws.layout.total]));
        let pix: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let x1 = tape.leaf(Tensor::from_vec(pix.clone()));
        let probs = model
            .predict(&mut tape, &theta, &fws, zero_read, x1)
            .unwrap();
        let x2 = tape.leaf(Tensor::from_vec(pix));
        let plain = net::forward(
            &mut tape,
            &model.cfg.b_spec,
            &theta.w,
            FastPaths::none(),
            x2,
        )
        .unwrap();
        let plain_probs = tape.apply(Op::Softmax, &[plain.logits]).unwrap();
        for (a, b) in tape
            .value(probs)
            .data()
            .iter()
            .zip(tape.value(plain_probs).data())
        {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn contrastive_loss_arithmetic() {
        let mut cfg = tiny_cfg(Variant::Standard);
        cfg.shots = 2;
        let mut rng = stream_rng(20, stream::INIT);
        let model = MetaNet::init(cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let e = tape.leaf(Tensor::from_vec(alloc::vec![0.4, -1.0]));
        let same_zero = model
            .loss_emb(
                &mut tape,
                EmbInput::Pair {
                    a: e,
                    b: e,
                    same: true,
                },
            )
            .unwrap();
        assert_eq!(tape.value(same_zero).scalar_value(), 0.0);

        let a = tape.leaf(Tensor::from_vec(alloc::vec![0.0, 0.0]));
        let far = tape.leaf(Tensor::from_vec(alloc::vec![3.0, 4.0]));
        let beyond = model
            .loss_emb(
                &mut tape,
                EmbInput::Pair {
                    a,
                    b: far,
                    same: false,
                },
            )
            .unwrap();
        assert_eq!(tape.value(beyond).scalar_value(), 0.0);

        let half = tape.leaf(Tensor::from_vec(alloc::vec![0.5, 0.0]));
        let quarter = model
            .loss_emb(
                &mut tape,
                EmbInput::Pair {
                    a,
                    b: half,
                    same: false,
                },
            )
            .unwrap();
        assert!((tape.value(quarter).scalar_value() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn loss_emb_rejects_the_wrong_form() {
        let model = tiny_model(Variant::Standard, 21);
        let mut tape = Tape::new();
        let e = tape.leaf(Tensor::from_vec(alloc::vec![0.1, 0.2]));
        assert!(matches!(
            model.loss_emb(
                &mut tape,
                EmbInput::Pair {
                    a: e,
                    b: e,
                    same: true
                }
            ),
            Err(Error::Config(_))
        ));

        let mut cfg = tiny_cfg(Variant::Standard);
        cfg.shots = 2;
        let mut rng = stream_rng(22, stream::INIT);
        let multi = MetaNet::init(cfg, &mut rng).unwrap();
        let logits = tape.leaf(Tensor::from_vec(alloc::vec![0.1, 0.2, 0.3]));
        assert!(matches!(
            multi.loss_emb(&mut tape, EmbInput::Single { logits, label: 0 }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn variant_contracts() {
        let minus = tiny_model(Variant::Minus, 23);
        assert!(minus.weights.g_u.is_none());
        assert_eq!(minus.param_counts().q_star_coords, 0);
        assert_eq!(minus.param_counts().g_u, 0);
        let mut tape = Tape::new();
        let theta = minus.register_theta(&mut tape);
        let ep = tiny_episode(3, 3, 16, 24);
        let sample = TaskSample::Singles(ep.support.iter().collect());
        assert!(matches!(
            minus.gen_task_fast_weights(&mut tape, &theta, &sample),
            Err(Error::Config(_))
        ));

        let plus = tiny_model(Variant::Plus, 25);
        assert!(plus.weights.g_b.is_some());
        assert!(plus.param_counts().b_task_coords > 0);
        // Plus episodes run end to end.
        let mut rng = stream_rng(1, stream::TRAIN);
        plus.episode_graph(&ep, &mut rng).unwrap();
    }

    #[test]
    fn episode_rejects_way_mismatch() {
        let model = tiny_model(Variant::Standard, 26);
        let ep = tiny_episode(4, 4, 16, 27);
        let mut rng = stream_rng(1, stream::TRAIN);
        assert!(matches!(
            model.episode_graph(&ep, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn repr_mode_runs_end_to_end() {
        let cfg = ModelConfig::mlp(16, 8, 2, 3, Variant::Standard, BaseInput::Repr);
        let mut rng = stream_rng(30, stream::INIT);
        let model = MetaNet::init(cfg, &mut rng).unwrap();
        let ep = tiny_episode(3, 3, 16, 31);
        let mut rng = stream_rng(2, stream::TRAIN);
        let g = model.episode_graph(&ep, &mut rng).unwrap();
        assert!(g.stats.loss_sum.is_finite());
        assert_eq!(g.stats.total, 3);
    }

    #[test]
    fn memory_row_counts_match_support() {
        let model = tiny_model(Variant::Standard, 32);
        let ep = tiny_episode(3, 3, 16, 33);
        let mut tape = Tape::new();
        let theta = model.register_theta(&mut tape);
        let sample = TaskSample::Singles(ep.support.iter().collect());
        let q_star = model
            .gen_task_fast_weights(&mut tape, &theta, &sample)
            .unwrap();
        let fws = model
            .build_memory(&mut tape, &theta, &ep.support, &q_star)
            .unwrap();
        assert_eq!(tape.value(fws.memory).shape()[0], 3);
        assert_eq!(tape.value(fws.index).shape()[0], 3);
        assert_eq!(
            tape.value(fws.index).shape()[1],
            model.cfg.u_spec.pre_out_dim()
        );
    }
}
