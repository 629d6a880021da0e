//! Shared trained-model fixture for the desk-scale learning criteria.
//!
//! Training the three variants once and sharing the results keeps the
//! suite inside its time budgets; `fixture()` is lazily initialized and
//! thread-safe, so criteria may run in any order.

#![allow(dead_code)]

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use metanet_core::adam::AdamState;
use metanet_core::datasets::{gen_synthetic_glyphs, split_classes, LabeledImageSet};
use metanet_core::episodes::TrialPlan;
use metanet_core::model::{BaseInput, MetaNet, ModelConfig, Variant};
use metanet_core::rng::{stream, stream_rng};
use metanet_core::training::{self, EvalReport};

pub const WAY: usize = 5;
pub const SEED: u64 = 1;
pub const TRAIN_EPISODES: u64 = 6000;
pub const EVAL_TRIALS: usize = 400;
/// 15 queries per class mirrors the evaluation protocol shape.
pub const EVAL_QUERIES: usize = 15 * WAY;

pub struct Trained {
    pub model: MetaNet,
    pub variant: Variant,
    pub train_time: Duration,
    pub episodes: u64,
}

pub struct Fixture {
    pub train_set: LabeledImageSet,
    pub test_set: LabeledImageSet,
    pub standard: Trained,
    pub minus: Trained,
    pub plus: Trained,
}

pub fn desk_config(variant: Variant) -> ModelConfig {
    // 4-layer MLPs; the default last-three augmentation leaves the wide
    // input layer slow-only.
    ModelConfig::mlp(784, 32, 3, WAY, variant, BaseInput::Raw)
}

pub fn train_variant(
    variant: Variant,
    train_set: &LabeledImageSet,
    episodes: u64,
    seed: u64,
) -> Trained {
    let started = Instant::now();
    let cfg = desk_config(variant);
    let mut rng = stream_rng(seed, stream::INIT);
    let mut model = MetaNet::init(cfg, &mut rng).expect("model init");
    let mut adam = AdamState::new(&model.weights.named(), 1e-3);
    let plan = TrialPlan {
        trial_count: 1,
        way: WAY,
        shots: 1,
        queries: 2 * WAY,
    };
    let mut trng = stream_rng(seed, stream::TRAIN);
    training::train_loop(
        &mut model,
        &mut adam,
        train_set,
        &plan,
        episodes,
        0,
        &mut trng,
        training::DEFAULT_CLIP_NORM,
        |_, _| {},
    )
    .expect("training failed");
    Trained {
        model,
        variant,
        train_time: started.elapsed(),
        episodes,
    }
}

pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let full = gen_synthetic_glyphs(120, 20, 7).expect("glyphs");
        let (train_set, test_set) = split_classes(&full, 100, 20).expect("split");
        metanet_core::episodes::assert_class_disjoint(&train_set, &test_set).expect("disjoint");
        let standard = train_variant(Variant::Standard, &train_set, TRAIN_EPISODES, SEED);
        let minus = train_variant(Variant::Minus, &train_set, TRAIN_EPISODES, SEED);
        let plus = train_variant(Variant::Plus, &train_set, TRAIN_EPISODES, SEED);
        Fixture {
            train_set,
            test_set,
            standard,
            minus,
            plus,
        }
    })
}

pub fn eval_on_test(model: &MetaNet, fx: &Fixture, protocol: &str) -> EvalReport {
    let plan = TrialPlan {
        trial_count: EVAL_TRIALS,
        way: WAY,
        shots: 1,
        queries: EVAL_QUERIES,
    };
    let mut rng = stream_rng(SEED, stream::EVAL_SAMPLE);
    let trials = metanet_core::episodes::make_trials(&fx.test_set, &plan, &mut rng).unwrap();
    training::evaluate(model, &trials, SEED, protocol).unwrap()
}
