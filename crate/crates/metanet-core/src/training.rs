//! Outer-loop optimization of the slow weights, evaluation, and the
//! generalization / continual-learning protocols.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::adam::{clip_global_norm, AdamState};
use crate::datasets::LabeledImageSet;
use crate::episodes::{make_trials, sample_episode, Episode, TrialPlan};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{EpisodeStats, MetaNet, ModelConfig, SlowWeights};
use crate::rng::{stream, stream_rng, Rng};
use crate::tensor::Tensor;

/// Default clip threshold for the global gradient norm; fast-weight
/// generators occasionally spike early in training.
pub const DEFAULT_CLIP_NORM: f64 = 10.0;

/// Per-trial record emitted by every evaluation protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    pub trial: usize,
    /// Fraction of correctly classified queries, in `[0,1]`.
    pub accuracy: f64,
    pub mean_loss: f64,
    pub protocol: String,
}

/// Aggregate of an evaluation run: mean accuracy with a normal-
/// approximation 95% interval (`1.96 * stddev / sqrt(trials)`).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: String,
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub mean_loss: f64,
    pub per_trial: Vec<TrialMetrics>,
}

impl EvalReport {
    /// Percent form used in summaries, e.g. `"49.21 ± 0.96"`.
    pub fn display_pct(&self) -> String {
        format!(
            "{:.2} ± {:.2}",
            100.0 * self.mean_accuracy,
            100.0 * self.ci95
        )
    }
}

pub fn aggregate(per_trial: Vec<TrialMetrics>, protocol: &str) -> Result<EvalReport> {
    if per_trial.is_empty() {
        return Err(Error::Config("cannot aggregate zero trials".into()));
    }
    let n = per_trial.len() as f64;
    let mean = per_trial.iter().map(|t| t.accuracy).sum::<f64>() / n;
    let var = if per_trial.len() < 2 {
        0.0
    } else {
        per_trial
            .iter()
            .map(|t| (t.accuracy - mean) * (t.accuracy - mean))
            .sum::<f64>()
            / (n - 1.0)
    };
    let ci95 = 1.96 * math::sqrt(var) / math::sqrt(n);
    let mean_loss = per_trial.iter().map(|t| t.mean_loss).sum::<f64>() / n;
    Ok(EvalReport {
        protocol: protocol.into(),
        mean_accuracy: mean,
        ci95,
        mean_loss,
        per_trial,
    })
}

// ── Training ────────────────────────────────────────────────────────────

/// One episode: run Algorithm phases in order, then a single joint ADAM
/// update of all slow weights from the summed query loss.
pub fn train_step(
    model: &mut MetaNet,
    episode: &Episode,
    adam: &mut AdamState,
    rng: &mut Rng,
    clip_norm: f64,
) -> Result<EpisodeStats> {
    let graph = model.episode_graph(episode, rng)?;
    let grads_map = graph.tape.backward(graph.loss)?;
    let mut grads: Vec<Tensor> = graph
        .theta
        .named()
        .iter()
        .map(|(_, n)| grads_map.get(&graph.tape, *n))
        .collect();
    clip_global_norm(&mut grads, clip_norm);
    let mut params = model.weights.named_mut();
    adam.update(&mut params, &grads)?;
    Ok(graph.stats)
}

/// Sequentially sampled episodic training. `on_step` sees every episode's
/// statistics; the callback's episode index starts at `start_episode`.
#[allow(clippy::too_many_arguments)]
pub fn train_loop(
    model: &mut MetaNet,
    adam: &mut AdamState,
    set: &LabeledImageSet,
    plan: &TrialPlan,
    episodes: u64,
    start_episode: u64,
    rng: &mut Rng,
    clip_norm: f64,
    mut on_step: impl FnMut(u64, &EpisodeStats),
) -> Result<()> {
    let mut history: Vec<f64> = Vec::new();
    for k in 0..episodes {
        let episode_idx = start_episode + k;
        let episode = sample_episode(set, plan, rng)?;
        match train_step(model, &episode, adam, rng, clip_norm) {
            Ok(stats) => {
                history.push(stats.loss_sum);
                if history.len() > 10 {
                    history.remove(0);
                }
                on_step(episode_idx, &stats);
            }
            Err(Error::NonFinite { .. }) => {
                return Err(Error::NonFiniteLoss {
                    episode: episode_idx,
                    history,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

// ── Evaluation ──────────────────────────────────────────────────────────

/// Evaluate one frozen-model trial. Any sampling inside the episode run
/// (the T-subset) draws from a per-trial stream, so trials are independent
/// of each other and of training state.
pub fn evaluate_trial(
    model: &MetaNet,
    episode: &Episode,
    trial: usize,
    eval_seed: u64,
    protocol: &str,
) -> Result<TrialMetrics> {
    let mut rng = stream_rng(eval_seed, stream::EVAL_BASE + trial as u64);
    let graph = model.episode_graph(episode, &mut rng)?;
    Ok(TrialMetrics {
        trial,
        accuracy: graph.stats.accuracy(),
        mean_loss: graph.stats.mean_query_loss,
        protocol: protocol.into(),
    })
}

/// Evaluate a frozen model over a trial sequence.
pub fn evaluate(
    model: &MetaNet,
    trials: &[Episode],
    eval_seed: u64,
    protocol: &str,
) -> Result<EvalReport> {
    let per_trial: Vec<TrialMetrics> = trials
        .iter()
        .enumerate()
        .map(|(i, ep)| evaluate_trial(model, ep, i, eval_seed, protocol))
        .collect::<Result<_>>()?;
    aggregate(per_trial, protocol)
}

/// Pixel-space 1-nearest-neighbor oracle over the same trials: each query
/// takes the label of the closest support example. `mean_loss` reports the
/// 0-1 error.
pub fn knn_baseline(trials: &[Episode]) -> Result<EvalReport> {
    let per_trial: Vec<TrialMetrics> = trials
        .iter()
        .enumerate()
        .map(|(i, ep)| {
            let mut correct = 0;
            for q in &ep.query {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (si, s) in ep.support.iter().enumerate() {
                    let d: f64 = q
                        .pixels
                        .data()
                        .iter()
                        .zip(s.pixels.data())
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum();
                    if d < best_d {
                        best_d = d;
                        best = si;
                    }
                }
                if ep.support[best].label == q.label {
                    correct += 1;
                }
            }
            let accuracy = correct as f64 / ep.query.len() as f64;
            TrialMetrics {
                trial: i,
                accuracy,
                mean_loss: 1.0 - accuracy,
                protocol: "knn".into(),
            }
        })
        .collect();
    aggregate(per_trial, "knn")
}

// ── N-way train / K-way test ────────────────────────────────────────────

/// Replace both output layers (the base learner's softmax layer and the
/// embedding network's auxiliary head) with freshly initialized `k`-way
/// layers. The new slow weights receive no training; fast weights for them
/// are generated per episode as usual.
pub fn swap_output_layers(model: &MetaNet, k: usize, rng: &mut Rng) -> Result<MetaNet> {
    if k < 2 {
        return Err(Error::Config(format!("test way must be >= 2, got {k}")));
    }
    let mut cfg = model.cfg.clone();
    cfg.way = k;
    let mut weights = model.weights.clone();
    for (spec, params) in [
        (&mut cfg.b_spec, &mut weights.w),
        (&mut cfg.u_spec, &mut weights.q),
    ] {
        let last = spec.layers.len() - 1;
        let crate::net::LayerKind::SoftmaxOut { in_dim, out_dim } = &mut spec.layers[last].kind
        else {
            return Err(Error::Config("network does not end in a softmax layer".into()));
        };
        *out_dim = k;
        params[last] = Tensor::uniform(&[k, *in_dim + 1], -0.1, 0.1, rng);
    }
    MetaNet::from_weights(cfg, weights)
}

/// Evaluate an N-way-trained model on K-way trials through a frozen
/// inserted softmax layer.
pub fn protocol_xway(
    model: &MetaNet,
    k: usize,
    test_set: &LabeledImageSet,
    trial_count: usize,
    queries: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut rng = stream_rng(seed, stream::PROTOCOL);
    let swapped = swap_output_layers(model, k, &mut rng)?;
    let plan = TrialPlan {
        trial_count,
        way: k,
        shots: model.cfg.shots,
        queries,
    };
    let mut trial_rng = stream_rng(seed, stream::EVAL_SAMPLE);
    let trials = make_trials(test_set, &plan, &mut trial_rng)?;
    evaluate(&swapped, &trials, seed, "xway")
}

// ── Fixed-weight base-learner replacement ───────────────────────────────

/// Replace the entire base learner with a fresh, never-trained MLP of the
/// given hidden width (same depth and augmentation pattern); the trained
/// meta learner parameterizes it per episode.
pub fn with_fresh_base(model: &MetaNet, hidden: usize, rng: &mut Rng) -> Result<MetaNet> {
    let old = &model.cfg.b_spec;
    let n_hidden = old.layers.len() - 1;
    let aug_count = old.augmented_indices().len();
    let input_dim: usize = old.input_shape.iter().product();
    let hiddens = alloc::vec![hidden; n_hidden];
    let mut b_spec = crate::net::mlp_spec(input_dim, &hiddens, model.cfg.way, false);
    b_spec.augment_last(aug_count);
    let mut cfg = model.cfg.clone();
    cfg.b_spec = b_spec;
    let mut weights = model.weights.clone();
    weights.w = crate::net::init_params(&cfg.b_spec, rng);
    MetaNet::from_weights(cfg, weights)
}

#[derive(Debug, Clone)]
pub struct SwapBaseReport {
    /// Meta-training iterations behind the evaluated checkpoint.
    pub episode_counter: u64,
    pub trained: EvalReport,
    /// (hidden width, report) per fixed-weight replacement.
    pub fresh: Vec<(usize, EvalReport)>,
}

/// Evaluate the trained base learner against fixed-weight replacements on
/// one shared trial sequence.
pub fn protocol_swap_base(
    model: &MetaNet,
    episode_counter: u64,
    hidden_sizes: &[usize],
    test_set: &LabeledImageSet,
    trial_count: usize,
    queries: usize,
    seed: u64,
) -> Result<SwapBaseReport> {
    let plan = TrialPlan {
        trial_count,
        way: model.cfg.way,
        shots: model.cfg.shots,
        queries,
    };
    let mut trial_rng = stream_rng(seed, stream::EVAL_SAMPLE);
    let trials = make_trials(test_set, &plan, &mut trial_rng)?;
    let trained = evaluate(model, &trials, seed, "swap-base/trained")?;
    let mut fresh = Vec::new();
    let mut rng = stream_rng(seed, stream::PROTOCOL);
    for &h in hidden_sizes {
        let swapped = with_fresh_base(model, h, &mut rng)?;
        let report = evaluate(
            &swapped,
            &trials,
            seed,
            &format!("swap-base/fixed-{h}"),
        )?;
        fresh.push((h, report));
    }
    Ok(SwapBaseReport {
        episode_counter,
        trained,
        fresh,
    })
}

// ── Meta-level continual learning ───────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinualRep {
    pub rep: usize,
    pub acc_before: f64,
    pub acc_after: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinualPoint {
    pub b_trials: usize,
    pub reps: Vec<ContinualRep>,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinualReport {
    pub points: Vec<ContinualPoint>,
}

/// Progress events surfaced to the caller during a continual run.
pub enum ContinualEvent<'a> {
    AEpisode {
        point: usize,
        rep: usize,
        episode: u64,
        stats: &'a EpisodeStats,
    },
    BEpisode {
        point: usize,
        rep: usize,
        episode: u64,
        stats: &'a EpisodeStats,
    },
    Rep {
        point: usize,
        result: ContinualRep,
    },
}

pub struct ContinualSetup<'a> {
    pub a_train: &'a LabeledImageSet,
    pub a_test: &'a LabeledImageSet,
    pub b_train: &'a LabeledImageSet,
    pub template: &'a ModelConfig,
    pub a_episodes: u64,
    pub train_queries: usize,
    pub eval_trials: usize,
    pub eval_queries: usize,
    pub lr: f64,
    pub clip_norm: f64,
    /// B-training trial counts; each run trains on problem B for that many
    /// episodes before re-evaluating problem A.
    pub schedule: &'a [usize],
    pub repetitions: usize,
    pub seed: u64,
}

/// For each schedule point and repetition: train fresh on problem A,
/// measure A-test accuracy, switch to problem B with freshly allocated
/// task-specific weights (only the generator weights carry over), train
/// for the scheduled number of trials, then re-measure A-test accuracy
/// with the original task weights and the updated meta weights.
pub fn protocol_continual(
    setup: &ContinualSetup<'_>,
    mut on_event: impl FnMut(ContinualEvent<'_>),
) -> Result<ContinualReport> {
    if setup.schedule.is_empty() {
        return Err(Error::Config("continual schedule is empty".into()));
    }
    if setup.repetitions == 0 {
        return Err(Error::Config("continual repetitions must be >= 1".into()));
    }
    let template = setup.template;
    template.validate()?;
    let train_plan = TrialPlan {
        trial_count: 1,
        way: template.way,
        shots: template.shots,
        queries: setup.train_queries,
    };
    let eval_plan = TrialPlan {
        trial_count: setup.eval_trials,
        way: template.way,
        shots: template.shots,
        queries: setup.eval_queries,
    };

    let mut points = Vec::with_capacity(setup.schedule.len());
    for (pi, &b_trials) in setup.schedule.iter().enumerate() {
        let mut reps = Vec::with_capacity(setup.repetitions);
        for rep in 0..setup.repetitions {
            // Full reinitialization per run: fresh network and optimizer.
            let run_seed = setup
                .seed
                .wrapping_add(1_000_003 * rep as u64)
                .wrapping_add(7_919 * pi as u64);
            let mut init_rng = stream_rng(run_seed, stream::INIT);
            let mut model = MetaNet::init(template.clone(), &mut init_rng)?;
            let mut adam = AdamState::new(&model.weights.named(), setup.lr);
            let mut train_rng = stream_rng(run_seed, stream::TRAIN);
            train_loop(
                &mut model,
                &mut adam,
                setup.a_train,
                &train_plan,
                setup.a_episodes,
                0,
                &mut train_rng,
                setup.clip_norm,
                |ep, stats| {
                    on_event(ContinualEvent::AEpisode {
                        point: pi,
                        rep,
                        episode: ep,
                        stats,
                    })
                },
            )?;

            // One fixed A-test trial sequence per run, reused for both
            // measurements so a zero-trial point is exactly zero delta.
            let mut trial_rng = stream_rng(run_seed, stream::EVAL_SAMPLE);
            let a_trials = make_trials(setup.a_test, &eval_plan, &mut trial_rng)?;
            let before = evaluate(&model, &a_trials, run_seed, "continual/a-before")?;

            // Problem switch: problem B gets its own task-specific weights;
            // only the meta weights continue training.
            let a_task_w = model.weights.w.clone();
            let a_task_q = model.weights.q.clone();
            let mut switch_rng = stream_rng(run_seed, stream::PROTOCOL);
            model.weights.w = crate::net::init_params(&model.cfg.b_spec, &mut switch_rng);
            model.weights.q = crate::net::init_params(&model.cfg.u_spec, &mut switch_rng);
            let mut adam_b = AdamState::new(&model.weights.named(), setup.lr);
            let mut b_rng = stream_rng(run_seed, stream::TRAIN + 10);
            train_loop(
                &mut model,
                &mut adam_b,
                setup.b_train,
                &train_plan,
                b_trials as u64,
                0,
                &mut b_rng,
                setup.clip_norm,
                |ep, stats| {
                    on_event(ContinualEvent::BEpisode {
                        point: pi,
                        rep,
                        episode: ep,
                        stats,
                    })
                },
            )?;

            // Re-evaluate problem A: original task weights, updated meta
            // weights.
            model.weights.w = a_task_w;
            model.weights.q = a_task_q;
            let after = evaluate(&model, &a_trials, run_seed, "continual/a-after")?;

            let result = ContinualRep {
                rep,
                acc_before: before.mean_accuracy,
                acc_after: after.mean_accuracy,
                delta: after.mean_accuracy - before.mean_accuracy,
            };
            on_event(ContinualEvent::Rep { point: pi, result });
            reps.push(result);
        }
        let mean_delta = reps.iter().map(|r| r.delta).sum::<f64>() / reps.len() as f64;
        points.push(ContinualPoint {
            b_trials,
            reps,
            mean_delta,
        });
    }
    Ok(ContinualReport { points })
}

/// Bitwise digest of the full weight set, for mutation checks.
pub fn weights_digest(weights: &SlowWeights) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for (name, t) in weights.named() {
        for b in name.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        for v in t.data() {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::Example;
    use crate::model::{BaseInput, Variant};
    use alloc::vec::Vec;
    use rand::Rng as _;

    fn tiny_model(variant: Variant, seed: u64) -> MetaNet {
        let cfg = ModelConfig::mlp(16, 8, 2, 5, variant, BaseInput::Raw);
        let mut rng = stream_rng(seed, stream::INIT);
        MetaNet::init(cfg, &mut rng).unwrap()
    }

    fn noise_episode(way: usize, queries: usize, rng: &mut Rng) -> Episode {
        let mut pix = |rng: &mut Rng| {
            Tensor::from_vec((0..16).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f64>>())
        };
        Episode {
            support: (0..way)
                .map(|label| Example {
                    pixels: pix(rng),
                    label,
                })
                .collect(),
            query: (0..queries)
                .map(|i| Example {
                    pixels: pix(rng),
                    label: i % way,
                })
                .collect(),
            class_map: (0..way).collect(),
        }
    }

    #[test]
    fn overfitting_one_episode_decreases_the_loss() {
        let mut model = tiny_model(Variant::Standard, 1);
        let mut adam = AdamState::new(&model.weights.named(), 1e-3);
        let mut rng = stream_rng(2, stream::TRAIN);
        let episode = noise_episode(5, 5, &mut rng);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let stats = train_step(&mut model, &episode, &mut adam, &mut rng, 10.0).unwrap();
            losses.push(stats.loss_sum);
        }
        // 20-step block means strictly decrease.
        let blocks: Vec<f64> = losses
            .chunks(20)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        for pair in blocks.windows(2) {
            assert!(
                pair[1] < pair[0],
                "loss plateaued: blocks = {blocks:?}"
            );
        }
    }

    #[test]
    fn zero_learning_rate_leaves_weights_bitwise_identical() {
        let mut model = tiny_model(Variant::Standard, 3);
        let before = weights_digest(&model.weights);
        let mut adam = AdamState::new(&model.weights.named(), 0.0);
        let mut rng = stream_rng(4, stream::TRAIN);
        let episode = noise_episode(5, 5, &mut rng);
        let stats = train_step(&mut model, &episode, &mut adam, &mut rng, 10.0).unwrap();
        assert!(stats.loss_sum.is_finite());
        assert_eq!(weights_digest(&model.weights), before);
    }

    #[test]
    fn evaluation_never_mutates_the_model() {
        let mut model = tiny_model(Variant::Standard, 5);
        let mut rng = stream_rng(6, stream::TRAIN);
        let trials: Vec<Episode> = (0..5).map(|_| noise_episode(5, 5, &mut rng)).collect();
        let before = weights_digest(&model.weights);
        let adam = AdamState::new(&model.weights.named(), 1e-3);
        let adam_before = adam.clone();
        evaluate(&model, &trials, 7, "eval").unwrap();
        assert_eq!(weights_digest(&model.weights), before);
        assert_eq!(adam, adam_before);
        // The training stream is untouched by evaluation: the next draw
        // matches a fresh stream advanced by the same prefix.
        let mut fresh = stream_rng(6, stream::TRAIN);
        for _ in 0..trials.len() {
            let _ = noise_episode(5, 5, &mut fresh);
        }
        assert_eq!(
            rng.random_range(0..u64::MAX),
            fresh.random_range(0..u64::MAX)
        );
        let _ = &mut model;
    }

    #[test]
    fn untrained_model_scores_at_chance() {
        let model = tiny_model(Variant::Standard, 8);
        let mut rng = stream_rng(9, stream::TRAIN);
        let trials: Vec<Episode> = (0..400).map(|_| noise_episode(5, 5, &mut rng)).collect();
        let report = evaluate(&model, &trials, 10, "eval").unwrap();
        assert!(
            (0.12..=0.28).contains(&report.mean_accuracy),
            "accuracy {} outside the binomial band around 0.2",
            report.mean_accuracy
        );
    }

    #[test]
    fn aggregate_formats_and_degenerate_cases() {
        let perfect: Vec<TrialMetrics> = (0..10)
            .map(|i| TrialMetrics {
                trial: i,
                accuracy: 1.0,
                mean_loss: 0.0,
                protocol: "eval".into(),
            })
            .collect();
        let report = aggregate(perfect, "eval").unwrap();
        assert_eq!(report.mean_accuracy, 1.0);
        assert_eq!(report.ci95, 0.0);
        assert_eq!(report.display_pct(), "100.00 ± 0.00");
        assert!(matches!(
            aggregate(Vec::new(), "eval"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn knn_baseline_is_perfect_when_queries_equal_support() {
        let mut rng = stream_rng(11, stream::TRAIN);
        let mut ep = noise_episode(5, 5, &mut rng);
        ep.query = ep
            .support
            .iter()
            .map(|s| Example {
                pixels: s.pixels.clone(),
                label: s.label,
            })
            .collect();
        let report = knn_baseline(&[ep]).unwrap();
        assert_eq!(report.mean_accuracy, 1.0);
    }

    #[test]
    fn output_layer_swap_is_mechanically_valid() {
        let model = tiny_model(Variant::Standard, 12);
        let mut rng = stream_rng(13, stream::PROTOCOL);
        assert!(matches!(
            swap_output_layers(&model, 1, &mut rng),
            Err(Error::Config(_))
        ));
        for k in [2usize, 17, 30] {
            let swapped = swap_output_layers(&model, k, &mut rng).unwrap();
            assert_eq!(swapped.cfg.way, k);
            let mut erng = stream_rng(14, stream::TRAIN);
            let ep = noise_episode(k, k, &mut erng);
            let graph = swapped.episode_graph(&ep, &mut erng).unwrap();
            assert_eq!(graph.stats.per_query.len(), k);
            // Distribution dimension is k.
            assert!(graph.stats.per_query.iter().all(|q| q.predicted < k));
        }
        // Slow weights other than the heads are untouched.
        let swapped = swap_output_layers(&model, 9, &mut rng).unwrap();
        assert_eq!(
            swapped.weights.w[0].data(),
            model.weights.w[0].data()
        );
        assert_ne!(
            swapped.weights.w.last().unwrap().shape(),
            model.weights.w.last().unwrap().shape()
        );
    }

    #[test]
    fn fresh_base_with_zero_meta_scores_at_chance() {
        let model = tiny_model(Variant::Standard, 15);
        let mut rng = stream_rng(16, stream::PROTOCOL);
        let mut fresh = with_fresh_base(&model, 12, &mut rng).unwrap();
        fresh.cfg.zero_fast_mode = true;
        let mut erng = stream_rng(17, stream::TRAIN);
        let trials: Vec<Episode> = (0..300).map(|_| noise_episode(5, 5, &mut erng)).collect();
        let report = evaluate(&fresh, &trials, 18, "swap-base/zero-meta").unwrap();
        assert!(
            (0.10..=0.30).contains(&report.mean_accuracy),
            "zero-information path scored {}",
            report.mean_accuracy
        );
    }

    #[test]
    fn continual_zero_trials_gives_exactly_zero_delta() {
        let a = crate::datasets::gen_synthetic_glyphs(6, 4, 21).unwrap();
        let b = crate::datasets::gen_synthetic_glyphs(6, 4, 22).unwrap();
        let mut template = ModelConfig::mlp(784, 8, 2, 3, Variant::Standard, BaseInput::Raw);
        template.b_spec.augment_last(2);
        template.u_spec.augment_last(2);
        let setup = ContinualSetup {
            a_train: &a,
            a_test: &a,
            b_train: &b,
            template: &template,
            a_episodes: 3,
            train_queries: 3,
            eval_trials: 6,
            eval_queries: 3,
            lr: 1e-3,
            clip_norm: 10.0,
            schedule: &[0],
            repetitions: 2,
            seed: 23,
        };
        let report = protocol_continual(&setup, |_| {}).unwrap();
        assert_eq!(report.points.len(), 1);
        for rep in &report.points[0].reps {
            assert_eq!(rep.delta, 0.0);
            assert_eq!(rep.acc_before, rep.acc_after);
        }
        assert_eq!(report.points[0].mean_delta, 0.0);
    }
}
