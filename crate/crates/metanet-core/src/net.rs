//! Layer-augmented feed-forward networks.
//!
//! A network is a stack of layers, each parameterized by one slow-weight
//! tensor. Layers marked `augmented` accept fast-weight twins of identical
//! shape; the slow and fast paths are combined per layer kind:
//!
//! - ReLU hidden layers: `relu(W x) + relu(W* x)` (activations summed),
//! - linear layers:      `W x + W* x`,
//! - softmax output:     transformed inputs summed before normalization,
//!   so the layer produces `W x + W* x` as logits.
//!
//! Dense layers fold their bias into the weight matrix as a trailing
//! column against a constant 1 input. Convolutions carry no bias.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::Op;
use crate::tape::{Node, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        in_dim: usize,
        out_dim: usize,
        act: Activation,
    },
    /// Valid 3x3 convolution + ReLU, optionally followed by 2x2 max pooling.
    Conv3x3 {
        in_ch: usize,
        out_ch: usize,
        pool: bool,
    },
    /// Final classification layer; produces logits for a softmax.
    SoftmaxOut {
        in_dim: usize,
        out_dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Whether the layer carries a fast-weight twin.
    pub augmented: bool,
}

impl LayerSpec {
    /// Shape of the layer's slow-weight tensor (fast twins are identical).
    pub fn param_shape(&self) -> Vec<usize> {
        match &self.kind {
            LayerKind::Dense { in_dim, out_dim, .. }
            | LayerKind::SoftmaxOut { in_dim, out_dim } => vec![*out_dim, in_dim + 1],
            LayerKind::Conv3x3 { in_ch, out_ch, .. } => vec![*out_ch, *in_ch, 3, 3],
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shape().iter().product()
    }
}

/// A network's architecture: input shape plus its layer stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// Check that layer shapes chain from the input and that the stack ends
    /// in exactly one softmax output layer.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            match &layer.kind {
                LayerKind::Dense { in_dim, out_dim, .. }
                | LayerKind::SoftmaxOut { in_dim, out_dim } => {
                    let flat: usize = shape.iter().product();
                    if flat != *in_dim {
                        return Err(Error::Config(format!(
                            "layer {i}: expects input dim {in_dim}, gets {flat}"
                        )));
                    }
                    if matches!(layer.kind, LayerKind::SoftmaxOut { .. }) != last {
                        return Err(Error::Config(format!(
                            "layer {i}: softmax output must be the final layer and nothing else"
                        )));
                    }
                    shape = vec![*out_dim];
                }
                LayerKind::Conv3x3 { in_ch, out_ch, pool } => {
                    if shape.len() != 3 || shape[0] != *in_ch || shape[1] < 3 || shape[2] < 3 {
                        return Err(Error::Config(format!(
                            "layer {i}: conv expects [{in_ch},h>=3,w>=3], gets {shape:?}"
                        )));
                    }
                    let (mut h, mut w) = (shape[1] - 2, shape[2] - 2);
                    if *pool {
                        if h < 2 || w < 2 {
                            return Err(Error::Config(format!(
                                "layer {i}: pooling needs at least 2x2, gets {h}x{w}"
                            )));
                        }
                        h /= 2;
                        w /= 2;
                    }
                    shape = vec![*out_ch, h, w];
                }
            }
        }
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        match self.layers.last().map(|l| &l.kind) {
            Some(LayerKind::SoftmaxOut { out_dim, .. }) => *out_dim,
            _ => 0,
        }
    }

    /// Input dimension of the final layer (the representation the stack
    /// feeds into its classifier).
    pub fn pre_out_dim(&self) -> usize {
        match self.layers.last().map(|l| &l.kind) {
            Some(LayerKind::SoftmaxOut { in_dim, .. }) => *in_dim,
            _ => 0,
        }
    }

    /// Mark the last `k` layers augmented, all others not.
    pub fn augment_last(&mut self, k: usize) {
        let n = self.layers.len();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.augmented = i + k >= n;
        }
    }

    pub fn augmented_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.augmented)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}

/// Offsets of each augmented layer inside a flattened fast-weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugLayout {
    pub entries: Vec<AugEntry>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugEntry {
    pub layer_idx: usize,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

impl AugLayout {
    pub fn of(spec: &NetSpec) -> Self {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (i, layer) in spec.layers.iter().enumerate() {
            if !layer.augmented {
                continue;
            }
            let shape = layer.param_shape();
            let len = shape.iter().product();
            entries.push(AugEntry {
                layer_idx: i,
                offset,
                len,
                shape,
            });
            offset += len;
        }
        AugLayout {
            entries,
            total: offset,
        }
    }
}

/// Draw one tensor per layer, every coordinate uniform in `[-0.1, 0.1)`.
pub fn init_params<R: Rng>(spec: &NetSpec, rng: &mut R) -> Vec<Tensor> {
    spec.layers
        .iter()
        .map(|l| Tensor::uniform(&l.param_shape(), -0.1, 0.1, rng))
        .collect()
}

/// Fast-weight bindings for a forward pass: each slot, when present, is a
/// per-layer node vector aligned with `spec.layers` (None for unaugmented
/// layers).
#[derive(Default, Clone, Copy)]
pub struct FastPaths<'a> {
    pub primary: Option<&'a [Option<Node>]>,
    pub secondary: Option<&'a [Option<Node>]>,
}

impl<'a> FastPaths<'a> {
    pub fn none() -> Self {
        FastPaths::default()
    }

    pub fn single(fast: &'a [Option<Node>]) -> Self {
        FastPaths {
            primary: Some(fast),
            secondary: None,
        }
    }
}

pub struct NetOutput {
    /// Pre-softmax output of the final layer.
    pub logits: Node,
    /// Input fed to the final layer (the representation `r` for the
    /// embedding network).
    pub pre_final: Node,
}

fn dense_apply(tape: &mut Tape, w: Node, xh_col: Node, out_dim: usize) -> Result<Node> {
    let z = tape.apply(Op::Matmul, &[w, xh_col])?;
    tape.apply(
        Op::Reshape {
            shape: vec![out_dim],
        },
        &[z],
    )
}

/// Append the constant-1 bias input and reshape to a column vector.
fn homogeneous_col(tape: &mut Tape, x: Node) -> Result<Node> {
    let n = tape.value(x).len();
    let flat = tape.apply(Op::Reshape { shape: vec![n] }, &[x])?;
    let one = tape.leaf(Tensor::from_vec(vec![1.0]));
    let xh = tape.apply(Op::Concat { axis: 0 }, &[flat, one])?;
    tape.apply(
        Op::Reshape {
            shape: vec![n + 1, 1],
        },
        &[xh],
    )
}

fn gather_paths(
    layer_idx: usize,
    augmented: bool,
    slow: Node,
    fast: &FastPaths<'_>,
) -> Vec<(Node, bool)> {
    // (weight node, is_fast)
    let mut paths = vec![(slow, false)];
    if augmented {
        for set in [fast.primary, fast.secondary].into_iter().flatten() {
            if let Some(node) = set[layer_idx] {
                paths.push((node, true));
            }
        }
    }
    paths
}

/// Run the stack. `params` hold the slow weights, one node per layer.
pub fn forward(
    tape: &mut Tape,
    spec: &NetSpec,
    params: &[Node],
    fast: FastPaths<'_>,
    x: Node,
) -> Result<NetOutput> {
    debug_assert_eq!(params.len(), spec.layers.len());
    let mut cur = x;
    let mut pre_final = x;
    for (i, layer) in spec.layers.iter().enumerate() {
        let paths = gather_paths(i, layer.augmented, params[i], &fast);
        match &layer.kind {
            LayerKind::Dense { out_dim, act, .. } => {
                let xh = homogeneous_col(tape, cur)?;
                let mut acc: Option<Node> = None;
                for (w, _) in &paths {
                    let mut z = dense_apply(tape, *w, xh, *out_dim)?;
                    if matches!(act, Activation::Relu) {
                        z = tape.apply(Op::Relu, &[z])?;
                    }
                    acc = Some(match acc {
                        None => z,
                        Some(a) => tape.apply(Op::Add, &[a, z])?,
                    });
                }
                cur = acc.unwrap();
            }
            LayerKind::Conv3x3 { pool, .. } => {
                let mut acc: Option<Node> = None;
                for (k, _) in &paths {
                    let z = tape.apply(Op::Conv3x3, &[cur, *k])?;
                    let a = tape.apply(Op::Relu, &[z])?;
                    acc = Some(match acc {
                        None => a,
                        Some(prev) => tape.apply(Op::Add, &[prev, a])?,
                    });
                }
                let mut out = acc.unwrap();
                if *pool {
                    out = tape.apply(Op::MaxPool2x2, &[out])?;
                }
                cur = out;
            }
            LayerKind::SoftmaxOut { out_dim, .. } => {
                pre_final = cur;
                let xh = homogeneous_col(tape, cur)?;
                let mut acc: Option<Node> = None;
                // Transformed inputs are aggregated first; normalization is
                // left to the consumer (softmax for probabilities, fused
                // cross-entropy for losses).
                for (w, _) in &paths {
                    let z = dense_apply(tape, *w, xh, *out_dim)?;
                    acc = Some(match acc {
                        None => z,
                        Some(a) => tape.apply(Op::Add, &[a, z])?,
                    });
                }
                cur = acc.unwrap();
            }
        }
    }
    Ok(NetOutput {
        logits: cur,
        pre_final,
    })
}

/// Builder for the MLP stacks used throughout: `depth` hidden widths, an
/// output head, and for embedding networks a linear representation layer
/// before the head.
pub fn mlp_spec(
    input_dim: usize,
    hidden: &[usize],
    out_dim: usize,
    linear_repr: bool,
) -> NetSpec {
    let mut layers = Vec::new();
    let mut cur = input_dim;
    for (i, &h) in hidden.iter().enumerate() {
        let last_hidden = i + 1 == hidden.len();
        let act = if linear_repr && last_hidden {
            Activation::Linear
        } else {
            Activation::Relu
        };
        layers.push(LayerSpec {
            kind: LayerKind::Dense {
                in_dim: cur,
                out_dim: h,
                act,
            },
            augmented: false,
        });
        cur = h;
    }
    layers.push(LayerSpec {
        kind: LayerKind::SoftmaxOut {
            in_dim: cur,
            out_dim,
        },
        augmented: false,
    });
    NetSpec {
        input_shape: vec![input_dim],
        layers,
    }
}

/// Stable tensor names for a parameter stack ("w.0", "w.1", ...).
pub fn layer_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}.{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> NetSpec {
        let mut s = mlp_spec(6, &[4, 4], 3, false);
        s.augment_last(3);
        s
    }

    #[test]
    fn spec_validates_and_counts() {
        let s = tiny_spec();
        s.validate().unwrap();
        assert_eq!(s.out_dim(), 3);
        // 4*(6+1) + 4*(4+1) + 3*(4+1)
        assert_eq!(s.param_count(), 28 + 20 + 15);
        let layout = AugLayout::of(&s);
        assert_eq!(layout.total, 63);
        assert_eq!(layout.entries.len(), 3);
        assert_eq!(layout.entries[1].offset, 28);
    }

    #[test]
    fn layout_matches_the_shape_contract() {
        // Augmented layers of 20 and 5*21 coordinates flatten to 125.
        let s = NetSpec {
            input_shape: vec![4],
            layers: vec![
                LayerSpec {
                    kind: LayerKind::Dense {
                        in_dim: 4,
                        out_dim: 4,
                        act: Activation::Relu,
                    },
                    augmented: true,
                },
                LayerSpec {
                    kind: LayerKind::SoftmaxOut {
                        in_dim: 4,
                        out_dim: 25,
                    },
                    augmented: true,
                },
            ],
        };
        s.validate().unwrap();
        // 4*5 = 20 and 25*5 = 125 total coordinates
        assert_eq!(AugLayout::of(&s).total, 20 + 125);
    }

    #[test]
    fn zero_fast_weights_collapse_to_slow_only() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = init_params(&spec, &mut rng);
        let x = Tensor::uniform(&[6], 0.0, 1.0, &mut rng);

        let mut tape = Tape::new();
        let pnodes: Vec<Node> = params.iter().map(|t| tape.leaf(t.clone())).collect();
        let xin = tape.leaf(x.clone());
        let plain = forward(&mut tape, &spec, &pnodes, FastPaths::none(), xin).unwrap();

        let zeros: Vec<Option<Node>> = spec
            .layers
            .iter()
            .map(|l| {
                if l.augmented {
                    Some(tape.leaf(Tensor::zeros(&l.param_shape())))
                } else {
                    None
                }
            })
            .collect();
        let xin2 = tape.leaf(x);
        let aug = forward(&mut tape, &spec, &pnodes, FastPaths::single(&zeros), xin2).unwrap();

        let a = tape.value(plain.logits).data().to_vec();
        let b = tape.value(aug.logits).data().to_vec();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn relu_paths_sum_after_activation() {
        // slow pre-activation [2,-3], fast pre-activation [-1,5]:
        // relu each then sum -> [2,5].
        let spec = NetSpec {
            input_shape: vec![1],
            layers: vec![
                LayerSpec {
                    kind: LayerKind::Dense {
                        in_dim: 1,
                        out_dim: 2,
                        act: Activation::Relu,
                    },
                    augmented: true,
                },
                LayerSpec {
                    kind: LayerKind::SoftmaxOut {
                        in_dim: 2,
                        out_dim: 2,
                    },
                    augmented: false,
                },
            ],
        };
        let mut tape = Tape::new();
        // x = [1]; bias column zero, first column = desired pre-activation.
        let w_slow = tape.leaf(Tensor::new(vec![2, 2], vec![2.0, 0.0, -3.0, 0.0]).unwrap());
        let w_out = tape.leaf(Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
        let fast = tape.leaf(Tensor::new(vec![2, 2], vec![-1.0, 0.0, 5.0, 0.0]).unwrap());
        let fasts = vec![Some(fast), None];
        let x = tape.leaf(Tensor::from_vec(vec![1.0]));
        let out = forward(
            &mut tape,
            &spec,
            &[w_slow, w_out],
            FastPaths::single(&fasts),
            x,
        )
        .unwrap();
        // The identity-ish output head passes the hidden vector through.
        assert_eq!(tape.value(out.pre_final).data(), &[2.0, 5.0]);
    }

    #[test]
    fn conv_stack_shapes_flow() {
        let spec = NetSpec {
            input_shape: vec![1, 12, 12],
            layers: vec![
                LayerSpec {
                    kind: LayerKind::Conv3x3 {
                        in_ch: 1,
                        out_ch: 2,
                        pool: true,
                    },
                    augmented: false,
                },
                LayerSpec {
                    kind: LayerKind::Conv3x3 {
                        in_ch: 2,
                        out_ch: 2,
                        pool: false,
                    },
                    augmented: true,
                },
                LayerSpec {
                    kind: LayerKind::SoftmaxOut {
                        in_dim: 2 * 3 * 3,
                        out_dim: 4,
                    },
                    augmented: true,
                },
            ],
        };
        spec.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = init_params(&spec, &mut rng);
        let mut tape = Tape::new();
        let pnodes: Vec<Node> = params.iter().map(|t| tape.leaf(t.clone())).collect();
        let x = tape.leaf(Tensor::uniform(&[1, 12, 12], 0.0, 1.0, &mut rng));
        let out = forward(&mut tape, &spec, &pnodes, FastPaths::none(), x).unwrap();
        assert_eq!(tape.value(out.logits).shape(), &[4]);
    }
}
