//! Finite-difference verification of analytic gradients.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Node, Tape};
use crate::tensor::Tensor;

/// Relative error between an analytic and a numeric derivative:
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = (analytic.abs() + numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Max relative error over all coordinates between a supplied analytic
/// gradient and central finite differences of `f` at `at`.
///
/// `f` must be a deterministic scalar-valued function; two evaluations at
/// the base point are compared and a mismatch is an error.
pub fn max_rel_error_vs_numeric<F>(f: F, at: &Tensor, h: f64, analytic: &Tensor) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let base_a = f(at)?;
    let base_b = f(at)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::NonDeterministic {
            a: base_a,
            b: base_b,
        });
    }
    let mut worst = 0.0f64;
    let mut probe = at.clone();
    for i in 0..at.len() {
        let orig = at.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Check a tape-built scalar function: builds the graph once for the analytic
/// gradient, then compares against central finite differences coordinate by
/// coordinate. Returns the max relative error.
pub fn finite_diff_check<F>(f: F, at: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Node) -> Result<Node>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(at.clone());
    let y = f(&mut tape, x)?;
    if !tape.value(y).is_scalar() {
        return Err(Error::LossNotScalar {
            shape: tape.value(y).shape().to_vec(),
        });
    }
    let grads = tape.backward(y)?;
    let analytic = grads.get(&tape, x);

    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone());
        let y = f(&mut tape, x)?;
        Ok(tape.value(y).scalar_value())
    };
    max_rel_error_vs_numeric(eval, at, h, &analytic)
}

/// Multi-input variant: checks the gradient w.r.t. every listed input of a
/// scalar built from all of them. Returns the max relative error across
/// inputs and coordinates.
pub fn finite_diff_check_multi<F>(f: F, at: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Node]) -> Result<Node>,
{
    let mut tape = Tape::new();
    let nodes: Vec<Node> = at.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = f(&mut tape, &nodes)?;
    if !tape.value(y).is_scalar() {
        return Err(Error::LossNotScalar {
            shape: tape.value(y).shape().to_vec(),
        });
    }
    let grads = tape.backward(y)?;

    let mut worst = 0.0f64;
    for (which, node) in nodes.iter().enumerate() {
        let analytic = grads.get(&tape, *node);
        let eval = |t: &Tensor| -> Result<f64> {
            let mut tape = Tape::new();
            let nodes: Vec<Node> = at
                .iter()
                .enumerate()
                .map(|(i, orig)| tape.leaf(if i == which { t.clone() } else { orig.clone() }))
                .collect();
            let y = f(&mut tape, &nodes)?;
            Ok(tape.value(y).scalar_value())
        };
        worst = worst.max(max_rel_error_vs_numeric(
            eval,
            &at[which],
            h,
            &analytic,
        )?);
    }
    Ok(worst)
}

/// Result of a per-op gradient sweep.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

/// Finite-difference-check every operator kind on random conforming
/// instances. Inputs are sampled away from the non-smooth points of the
/// piecewise ops (ReLU kinks, pooling ties, coincident distance points),
/// where a two-sided difference would measure the wrong branch.
pub fn check_all_ops(instances_per_op: usize, h: f64, seed: u64) -> Result<Vec<OpCheck>> {
    use crate::ops::Op;
    use rand::Rng as _;

    let mut rng = crate::rng::stream_rng(seed, crate::rng::stream::INIT + 77);

    // Uniform values with magnitudes bounded away from zero.
    fn vals<R: rand::Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let mag = rng.random_range(0.1..2.0);
                let sign = if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 };
                mag * sign
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    let mut results = Vec::new();
    let mut run = |name: &'static str,
                   mut gen: alloc::boxed::Box<dyn FnMut(&mut crate::rng::Rng) -> (Op, Vec<Tensor>)>|
     -> Result<()> {
        let mut worst = 0.0f64;
        for _ in 0..instances_per_op {
            let (op, inputs) = gen(&mut rng);
            // The scalarizer is a fixed random weighting of the outputs; a
            // plain sum degenerates for normalizing ops like softmax, whose
            // outputs sum to a constant.
            let out_shapes: Vec<Vec<usize>> = {
                let mut tape = Tape::new();
                let nodes: Vec<Node> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
                tape.apply_multi(op.clone(), &nodes)?
                    .iter()
                    .map(|o| tape.value(*o).shape().to_vec())
                    .collect()
            };
            let weights: Vec<Tensor> = out_shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    let data = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
                    Tensor::new(s.clone(), data).unwrap()
                })
                .collect();
            let err = finite_diff_check_multi(
                |tape, nodes| {
                    let outs = tape.apply_multi(op.clone(), nodes)?;
                    let mut acc: Option<Node> = None;
                    for (o, w) in outs.iter().zip(&weights) {
                        let wn = tape.leaf(w.clone());
                        let prod = tape.apply(Op::Mul, &[*o, wn])?;
                        let s = tape.apply(Op::SumReduce, &[prod])?;
                        acc = Some(match acc {
                            None => s,
                            Some(a) => tape.apply(Op::Add, &[a, s])?,
                        });
                    }
                    Ok(acc.unwrap())
                },
                &inputs,
                h,
            )?;
            worst = worst.max(err);
        }
        results.push(OpCheck {
            name,
            instances: instances_per_op,
            max_rel_err: worst,
        });
        Ok(())
    };

    run(
        "matmul",
        alloc::boxed::Box::new(|rng| {
            let (m, k, n) = (
                rng.random_range(1..5),
                rng.random_range(1..5),
                rng.random_range(1..5),
            );
            (Op::Matmul, alloc::vec![vals(rng, &[m, k]), vals(rng, &[k, n])])
        }),
    )?;
    run(
        "conv3x3-valid",
        alloc::boxed::Box::new(|rng| {
            let (ci, co) = (rng.random_range(1..3), rng.random_range(1..3));
            let (h, w) = (rng.random_range(3..7), rng.random_range(3..7));
            (
                Op::Conv3x3,
                alloc::vec![vals(rng, &[ci, h, w]), vals(rng, &[co, ci, 3, 3])],
            )
        }),
    )?;
    run(
        "maxpool2x2",
        alloc::boxed::Box::new(|rng| {
            let c = rng.random_range(1..3);
            let (h, w) = (rng.random_range(2..7), rng.random_range(2..7));
            // Regenerate until every pooling window is tie-free by a wide
            // margin, so the argmax cannot flip inside the probe step.
            let t = loop {
                let t = vals(rng, &[c, h, w]);
                let mut ok = true;
                for ch in 0..c {
                    for py in 0..h / 2 {
                        for px in 0..w / 2 {
                            let mut window = alloc::vec::Vec::new();
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    window.push(
                                        t.data()[(ch * h + 2 * py + dy) * w + 2 * px + dx],
                                    );
                                }
                            }
                            window.sort_by(|a, b| a.partial_cmp(b).unwrap());
                            if window.windows(2).any(|p| p[1] - p[0] < 1e-3) {
                                ok = false;
                            }
                        }
                    }
                }
                if ok {
                    break t;
                }
            };
            (Op::MaxPool2x2, alloc::vec![t])
        }),
    )?;
    run(
        "relu",
        alloc::boxed::Box::new(|rng| {
            let n = rng.random_range(1..9);
            (Op::Relu, alloc::vec![vals(rng, &[n])])
        }),
    )?;
    run(
        "add",
        alloc::boxed::Box::new(|rng| {
            let n = rng.random_range(1..9);
            (Op::Add, alloc::vec![vals(rng, &[n]), vals(rng, &[n])])
        }),
    )?;
    run(
        "elementwise-mul",
        alloc::boxed::Box::new(|rng| {
            let n = rng.random_range(1..9);
            (Op::Mul, alloc::vec![vals(rng, &[n]), vals(rng, &[n])])
        }),
    )?;
    run(
        "concat",
        alloc::boxed::Box::new(|rng| {
            let axis = rng.random_range(0..2);
            let other = rng.random_range(1..4);
            let (mut sa, mut sb) = (alloc::vec![other, other], alloc::vec![other, other]);
            sa[axis] = rng.random_range(1..4);
            sb[axis] = rng.random_range(1..4);
            (Op::Concat { axis }, alloc::vec![vals(rng, &sa), vals(rng, &sb)])
        }),
    )?;
    run(
        "reshape",
        alloc::boxed::Box::new(|rng| {
            let (a, b) = (rng.random_range(1..5), rng.random_range(1..5));
            (
                Op::Reshape {
                    shape: alloc::vec![b, a],
                },
                alloc::vec![vals(rng, &[a, b])],
            )
        }),
    )?;
    run(
        "sum-reduce",
        alloc::boxed::Box::new(|rng| {
            let n = rng.random_range(1..9);
            (Op::SumReduce, alloc::vec![vals(rng, &[n])])
        }),
    )?;
    run(
        "mean-reduce",
        alloc::boxed::Box::new(|rng| {
            let n = rng.random_range(1..9);
            (Op::MeanReduce, alloc::vec![vals(rng, &[n])])
        }),
    )?;
    run(
        "softmax",
        alloc::boxed::Box::new(|rng| {
            let (r, c) = (rng.random_range(1..4), rng.random_range(2..6));
            (Op::Softmax, alloc::vec![vals(rng, &[r, c])])
        }),
    )?;
    run(
        "cross-entropy-with-logits",
        alloc::boxed::Box::new(|rng| {
            let k = rng.random_range(2..7);
            let label = rng.random_range(0..k);
            (Op::CrossEntropyLogits { label }, alloc::vec![vals(rng, &[k])])
        }),
    )?;
    run(
        "cosine-similarity",
        alloc::boxed::Box::new(|rng| {
            let (n, d) = (rng.random_range(1..5), rng.random_range(2..6));
            (Op::CosineSimRows, alloc::vec![vals(rng, &[n, d]), vals(rng, &[d])])
        }),
    )?;
    run(
        "lstm-cell",
        alloc::boxed::Box::new(|rng| {
            let (c, i, hd) = (
                rng.random_range(1..3),
                rng.random_range(1..3),
                rng.random_range(1..4),
            );
            (
                Op::LstmCell,
                alloc::vec![
                    vals(rng, &[c, i]),
                    vals(rng, &[c, hd]),
                    vals(rng, &[c, hd]),
                    vals(rng, &[i, 4 * hd]),
                    vals(rng, &[hd, 4 * hd]),
                    vals(rng, &[4 * hd]),
                ],
            )
        }),
    )?;
    run(
        "l2-distance",
        alloc::boxed::Box::new(|rng| {
            let d = rng.random_range(1..6);
            // Keep the two points well apart; the distance is not
            // differentiable where they coincide.
            let (a, b) = loop {
                let a = vals(rng, &[d]);
                let b = vals(rng, &[d]);
                let dist: f64 = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                if dist > 0.09 {
                    break (a, b);
                }
            };
            (Op::L2Distance, alloc::vec![a, b])
        }),
    )?;
    run(
        "affine-const",
        alloc::boxed::Box::new(|rng| {
            let n = rng.random_range(1..9);
            let mul = rng.random_range(-2.0..2.0);
            let add = rng.random_range(-2.0..2.0);
            (Op::AffineConst { mul, add }, alloc::vec![vals(rng, &[n])])
        }),
    )?;
    run(
        "slice",
        alloc::boxed::Box::new(|rng| {
            let n = rng.random_range(2..9);
            let offset = rng.random_range(0..n - 1);
            let len = rng.random_range(1..=n - offset);
            (Op::SliceFlat { offset, len }, alloc::vec![vals(rng, &[n])])
        }),
    )?;
    Ok(results)
}
