//! Episodic task formulation: N-way K-shot support/query sampling with
//! episode-local labels.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::datasets::LabeledImageSet;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One labeled example inside an episode. `label` is episode-local
/// (`0..N`); pixels are flattened to 1-D.
#[derive(Debug, Clone)]
pub struct Example {
    pub pixels: Tensor,
    pub label: usize,
}

/// One task: a support set defining the episode's concepts and a query
/// (training) set sharing the same episode-local label space.
#[derive(Debug, Clone)]
pub struct Episode {
    pub support: Vec<Example>,
    pub query: Vec<Example>,
    /// episode-local label -> class id in the source set.
    pub class_map: Vec<usize>,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.class_map.len()
    }
}

/// Parameters of an evaluation (or training) trial sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPlan {
    pub trial_count: usize,
    pub way: usize,
    pub shots: usize,
    /// Total query examples per episode, spread as evenly as possible over
    /// the episode's classes.
    pub queries: usize,
}

impl TrialPlan {
    pub fn validate(&self) -> Result<()> {
        if self.trial_count < 1 {
            return Err(Error::Config("trial count must be at least 1".into()));
        }
        if self.way < 2 {
            return Err(Error::Config(format!("way must be >= 2, got {}", self.way)));
        }
        if self.shots < 1 {
            return Err(Error::Config("shots must be >= 1".into()));
        }
        if self.queries < self.way {
            // Support and query label sets must coincide, so every class
            // needs at least one query example.
            return Err(Error::Config(format!(
                "queries ({}) must be >= way ({})",
                self.queries, self.way
            )));
        }
        Ok(())
    }
}

/// Draw one episode from a class pool.
///
/// Classes are drawn by shuffling the pool, which makes the episode-local
/// label assignment a fresh uniform permutation each call. Support and
/// query indices are disjoint.
pub fn sample_episode(set: &LabeledImageSet, plan: &TrialPlan, rng: &mut Rng) -> Result<Episode> {
    plan.validate()?;
    let n_classes = set.class_count();
    if n_classes < plan.way {
        return Err(Error::Sampling(format!(
            "pool has {n_classes} classes, plan needs {}",
            plan.way
        )));
    }
    let mut class_ids: Vec<usize> = (0..n_classes).collect();
    class_ids.shuffle(rng);
    let class_map: Vec<usize> = class_ids[..plan.way].to_vec();

    // Per-class query quota: as even as possible, every class >= 1.
    let base = plan.queries / plan.way;
    let extra = plan.queries % plan.way;

    let mut support = Vec::with_capacity(plan.way * plan.shots);
    let mut query = Vec::new();
    for (local, &cls) in class_map.iter().enumerate() {
        let quota = base + usize::from(local < extra);
        let pool = set.class_examples(cls);
        let needed = plan.shots + quota;
        if pool.len() < needed {
            return Err(Error::Sampling(format!(
                "class {cls} has {} examples, episode needs {needed}",
                pool.len()
            )));
        }
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(rng);
        for &i in &idx[..plan.shots] {
            support.push(Example {
                pixels: set.image_tensor(pool[i]),
                label: local,
            });
        }
        for &i in &idx[plan.shots..needed] {
            query.push(Example {
                pixels: set.image_tensor(pool[i]),
                label: local,
            });
        }
    }
    query.shuffle(rng);
    Ok(Episode {
        support,
        query,
        class_map,
    })
}

/// Sample `plan.trial_count` independent episodes from one pool.
pub fn make_trials(set: &LabeledImageSet, plan: &TrialPlan, rng: &mut Rng) -> Result<Vec<Episode>> {
    (0..plan.trial_count)
        .map(|_| sample_episode(set, plan, rng))
        .collect()
}

/// Verify that two partitions share no class, comparing class content
/// digests (class ids are file-local, so ids alone cannot be compared).
pub fn assert_class_disjoint(a: &LabeledImageSet, b: &LabeledImageSet) -> Result<()> {
    let da = a.class_digests();
    let db = b.class_digests();
    for (ca, ha) in da.iter().enumerate() {
        if let Some(cb) = db.iter().position(|hb| hb == ha) {
            return Err(Error::Dataset(format!(
                "partitions are not class-disjoint: class {ca} of one also appears as class {cb} of the other"
            )));
        }
    }
    Ok(())
}

/// Convenience for tests/protocols that need the T-subset of support
/// indices in stable index order.
pub fn sample_support_subset(support_len: usize, t: usize, rng: &mut Rng) -> Vec<usize> {
    if t >= support_len {
        return (0..support_len).collect();
    }
    let mut idx: Vec<usize> = (0..support_len).collect();
    idx.shuffle(rng);
    let mut chosen = idx[..t].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Random pairs of distinct support indices for the contrastive embedding
/// loss, with their same-class auxiliary labels.
pub fn sample_support_pairs(
    support: &[Example],
    t: usize,
    rng: &mut Rng,
) -> Vec<(usize, usize, bool)> {
    let n = support.len();
    (0..t)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j, support[i].label == support[j].label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets;
    use crate::rng::{stream_rng, stream};

    fn pool(classes: usize, per_class: usize, seed: u64) -> LabeledImageSet {
        datasets::gen_synthetic_glyphs(classes, per_class, seed).unwrap()
    }

    #[test]
    fn counting_contract() {
        let set = pool(10, 15, 1);
        let plan = TrialPlan {
            trial_count: 1,
            way: 5,
            shots: 1,
            queries: 10,
        };
        let mut rng = stream_rng(1, stream::TRAIN);
        let ep = sample_episode(&set, &plan, &mut rng).unwrap();
        assert_eq!(ep.support.len(), 5);
        assert_eq!(ep.query.len(), 10);
        let mut support_labels: Vec<usize> = ep.support.iter().map(|e| e.label).collect();
        support_labels.sort_unstable();
        assert_eq!(support_labels, [0, 1, 2, 3, 4]);
        let mut qlabels: Vec<usize> = ep.query.iter().map(|e| e.label).collect();
        qlabels.sort_unstable();
        qlabels.dedup();
        assert_eq!(qlabels, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn same_seed_same_episode() {
        let set = pool(10, 15, 1);
        let plan = TrialPlan {
            trial_count: 1,
            way: 5,
            shots: 1,
            queries: 10,
        };
        let sample = |seed| {
            let mut rng = stream_rng(seed, stream::TRAIN);
            sample_episode(&set, &plan, &mut rng).unwrap()
        };
        let (a, b) = (sample(7), sample(7));
        assert_eq!(a.class_map, b.class_map);
        for (ea, eb) in a.query.iter().zip(&b.query) {
            assert_eq!(ea.label, eb.label);
            assert_eq!(ea.pixels.data(), eb.pixels.data());
        }
    }

    #[test]
    fn oversized_way_is_rejected() {
        let set = pool(4, 10, 1);
        let plan = TrialPlan {
            trial_count: 1,
            way: 5,
            shots: 1,
            queries: 10,
        };
        let mut rng = stream_rng(1, stream::TRAIN);
        assert!(matches!(
            sample_episode(&set, &plan, &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn support_query_disjoint_within_class() {
        // With per-class == shots + quota, disjointness is forced: verify no
        // query image equals a support image of the same class.
        let set = pool(6, 3, 9);
        let plan = TrialPlan {
            trial_count: 1,
            way: 3,
            shots: 1,
            queries: 6,
        };
        let mut rng = stream_rng(3, stream::TRAIN);
        let ep = sample_episode(&set, &plan, &mut rng).unwrap();
        for q in &ep.query {
            for s in &ep.support {
                if q.label == s.label {
                    assert_ne!(q.pixels.data(), s.pixels.data());
                }
            }
        }
    }

    #[test]
    fn trials_count_and_seed_divergence() {
        let set = pool(10, 15, 1);
        let plan = TrialPlan {
            trial_count: 3,
            way: 5,
            shots: 1,
            queries: 10,
        };
        let mut rng = stream_rng(1, stream::TRAIN);
        let trials = make_trials(&set, &plan, &mut rng).unwrap();
        assert_eq!(trials.len(), 3);

        // Two different seeds differ in the first episode for ~every seed.
        let mut differing = 0;
        for seed in 0..20u64 {
            let mut ra = stream_rng(seed, stream::TRAIN);
            let mut rb = stream_rng(seed + 1000, stream::TRAIN);
            let ea = sample_episode(&set, &plan, &mut ra).unwrap();
            let eb = sample_episode(&set, &plan, &mut rb).unwrap();
            if ea.class_map != eb.class_map
                || ea
                    .query
                    .iter()
                    .zip(&eb.query)
                    .any(|(x, y)| x.pixels.data() != y.pixels.data())
            {
                differing += 1;
            }
        }
        assert!(differing >= 19, "only {differing}/20 seed pairs diverged");
    }

    #[test]
    fn local_label_permutation_is_uniform() {
        // N = 3: each of the 3! orderings of the chosen classes should show
        // up at ~1/6 frequency over 10_000 episodes (within 5 sigma).
        let set = pool(3, 8, 2);
        let plan = TrialPlan {
            trial_count: 1,
            way: 3,
            shots: 1,
            queries: 3,
        };
        let mut rng = stream_rng(123, stream::TRAIN);
        let mut counts = [0usize; 6];
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let n = 10_000;
        for _ in 0..n {
            let ep = sample_episode(&set, &plan, &mut rng).unwrap();
            let key: Vec<usize> = ep.class_map.clone();
            let slot = perms.iter().position(|p| p == key.as_slice()).unwrap();
            counts[slot] += 1;
        }
        let expect = n as f64 / 6.0;
        let sigma = (n as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() < 5.0 * sigma,
                "perm {i}: count {c} vs expected {expect:.1} (sigma {sigma:.1})"
            );
        }
    }

    #[test]
    fn class_disjointness_check() {
        let a = pool(5, 4, 1);
        let b = pool(5, 4, 2);
        assert!(assert_class_disjoint(&a, &b).is_ok());
        assert!(matches!(
            assert_class_disjoint(&a, &a),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn subset_sampling_is_sorted_and_bounded() {
        let mut rng = stream_rng(5, stream::TRAIN);
        let s = sample_support_subset(10, 4, &mut rng);
        assert_eq!(s.len(), 4);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        let all = sample_support_subset(5, 9, &mut rng);
        assert_eq!(all, [0, 1, 2, 3, 4]);
    }
}
