//! Episodic memory of real samples for the rehearsal baselines.
//!
//! The memory holds full `Sample` values only — generated replay never
//! enters it. Each task contributes a preference-ordered selection fixed
//! when the task is stored (a seeded shuffle for random selection, a
//! cluster-representative ordering for k-means); rebalancing after every
//! new task trims each stored task to an even share of the budget by
//! truncating that order, so an evicted sample never returns and what
//! remains is always a uniform (or centroid-nearest) subset.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cl_engine::MemoryBudget;
use crate::error::{Error, Result};
use crate::rng;
use crate::sgcodec::Vocab;
use crate::srm::plan_shares;
use crate::univqa::{bundle_from_sample, StrategyHooks, TrainItem, UniVqaModel};
use crate::worldgen::{Sample, TaskDataset};

/// How a task's representatives are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPolicy {
    /// Uniform without replacement.
    Rnd,
    /// k-means over learned sample embeddings, one pick per cluster.
    Kmeans,
}

struct StoredTask {
    tag: String,
    /// Live samples in preference order; rebalancing truncates the tail.
    samples: Vec<Sample>,
    /// Serialized byte size per sample, cached at selection time.
    sizes: Vec<usize>,
}

/// Budgeted store of real samples, shared evenly across stored tasks.
pub struct EpisodicMemory {
    policy: MemoryPolicy,
    budget: MemoryBudget,
    tasks: Vec<StoredTask>,
}

impl EpisodicMemory {
    pub fn new(policy: MemoryPolicy, budget: MemoryBudget) -> Result<EpisodicMemory> {
        if !budget.is_positive() {
            return Err(Error::config("memory budget must be positive"));
        }
        Ok(EpisodicMemory { policy, budget, tasks: Vec::new() })
    }

    pub fn policy(&self) -> MemoryPolicy {
        self.policy
    }

    pub fn budget(&self) -> MemoryBudget {
        self.budget
    }

    /// Stored samples in task order.
    pub fn stored_samples(&self) -> impl Iterator<Item = &Sample> {
        self.tasks.iter().flat_map(|t| t.samples.iter())
    }

    pub fn len(&self) -> usize {
        self.tasks.iter().map(|t| t.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact serialized size of everything currently held.
    pub fn byte_size(&self) -> u64 {
        self.tasks
            .iter()
            .map(|t| t.sizes.iter().sum::<usize>() as u64)
            .sum()
    }

    pub fn per_task_counts(&self) -> BTreeMap<String, usize> {
        self.tasks.iter().map(|t| (t.tag.clone(), t.samples.len())).collect()
    }

    /// Adds the finished task's selection and rebalances every stored task
    /// to an even share of the budget.
    pub fn refresh(
        &mut self,
        task: &TaskDataset,
        model: &UniVqaModel,
        vocab: &Vocab,
        seed: u64,
    ) -> Result<()> {
        if task.train.is_empty() {
            return Err(Error::data(format!("task '{}' has no samples to store", task.task_tag)));
        }
        if self.tasks.iter().any(|t| t.tag == task.task_tag) {
            return Err(Error::config(format!("task '{}' is already stored", task.task_tag)));
        }
        let insert_index = self.tasks.len() as u64;
        let n_after = self.tasks.len() + 1;

        let sizes: Vec<usize> = task.train.iter().map(sample_bytes).collect();
        let quota = match self.budget {
            MemoryBudget::Samples(s) => plan_shares(s, n_after)[n_after - 1],
            MemoryBudget::Bytes(b) => {
                let share = plan_shares(b as usize, n_after)[n_after - 1];
                let mut sorted = sizes.clone();
                sorted.sort_unstable();
                let mut total = 0usize;
                sorted.iter().take_while(|s| {
                    total += **s;
                    total <= share
                }).count()
            }
        };
        if quota == 0 {
            return Err(Error::config(format!(
                "budget {:?} cannot hold one sample of task '{}'",
                self.budget, task.task_tag
            )));
        }

        let order: Vec<usize> = if quota >= task.train.len() {
            (0..task.train.len()).collect()
        } else {
            match self.policy {
                MemoryPolicy::Rnd => {
                    use rand::seq::SliceRandom;
                    let mut idx: Vec<usize> = (0..task.train.len()).collect();
                    idx.shuffle(&mut rng::stream(seed, "memory-rnd", insert_index));
                    idx.truncate(quota);
                    idx
                }
                MemoryPolicy::Kmeans => {
                    let points = embed_task(model, task, vocab)?;
                    let mut r = rng::stream(seed, "memory-kmeans", insert_index);
                    kmeans_select(&points, quota, &mut r)
                }
            }
        };

        self.tasks.push(StoredTask {
            tag: task.task_tag.clone(),
            samples: order.iter().map(|&i| task.train[i].clone()).collect(),
            sizes: order.iter().map(|&i| sizes[i]).collect(),
        });
        self.rebalance()
    }

    /// Trims each stored task to an even share of the budget. Shares only
    /// shrink as tasks accumulate, so evicted tails are dropped for good.
    fn rebalance(&mut self) -> Result<()> {
        let n = self.tasks.len();
        match self.budget {
            MemoryBudget::Samples(s) => {
                let shares = plan_shares(s, n);
                for (t, share) in self.tasks.iter_mut().zip(shares) {
                    t.samples.truncate(share);
                    t.sizes.truncate(share);
                }
            }
            MemoryBudget::Bytes(b) => {
                let shares = plan_shares(b as usize, n);
                for (t, share) in self.tasks.iter_mut().zip(shares) {
                    let mut total = 0usize;
                    let keep = t
                        .sizes
                        .iter()
                        .take_while(|s| {
                            total += **s;
                            total <= share
                        })
                        .count();
                    t.samples.truncate(keep);
                    t.sizes.truncate(keep);
                }
            }
        }
        if let Some(starved) = self.tasks.iter().find(|t| t.samples.is_empty()) {
            return Err(Error::config(format!(
                "budget {:?} split over {n} tasks cannot hold one sample of '{}'",
                self.budget, starved.tag
            )));
        }
        if let MemoryBudget::Bytes(b) = self.budget {
            debug_assert!(self.byte_size() <= b, "byte accounting exceeded the budget");
        }
        Ok(())
    }
}

/// Serialized size of one sample, the unit of byte accounting.
pub(crate) fn sample_bytes(s: &Sample) -> usize {
    serde_json::to_vec(s).expect("samples serialize").len()
}

fn embed_task(model: &UniVqaModel, task: &TaskDataset, vocab: &Vocab) -> Result<Vec<Vec<f64>>> {
    task.train
        .par_iter()
        .map(|s| model.sample_representation(&bundle_from_sample(s, vocab)?))
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding over raw points; returns one
/// nearest-to-centroid representative per cluster (ties to the lowest
/// index), ordered by descending cluster size so truncating the result
/// keeps the dominant clusters covered.
pub fn kmeans_select(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    if k >= points.len() {
        return (0..points.len()).collect();
    }

    // Seeding: first centroid uniform, the rest proportional to squared
    // distance from the nearest centroid so far.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    let mut best_d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = best_d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in best_d2.iter().enumerate() {
                t -= w;
                if t <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All points coincide with a centroid; duplicates make any
            // choice geometrically equivalent.
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            best_d2[i] = best_d2[i].min(dist2(p, centroids.last().expect("just pushed")));
        }
    }

    let dim = points[0].len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cent) in centroids.iter().enumerate() {
                let d = dist2(p, cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed a dead cluster at the point farthest from its
                // current centroid (first such point on ties).
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centroids[assign[a]])
                            .total_cmp(&dist2(&points[b], &centroids[assign[b]]))
                    })
                    .expect("points is non-empty");
                centroids[c] = points[far].clone();
            } else {
                for (j, s) in sums[c].iter().enumerate() {
                    centroids[c][j] = s / counts[c] as f64;
                }
            }
        }
    }

    // One representative per cluster: the member nearest its centroid.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assign.iter().enumerate() {
        members[c].push(i);
    }
    let mut clusters: Vec<usize> = (0..k).filter(|&c| !members[c].is_empty()).collect();
    clusters.sort_by_key(|&c| (std::cmp::Reverse(members[c].len()), c));
    let mut picks: Vec<usize> = clusters
        .into_iter()
        .map(|c| {
            *members[c]
                .iter()
                .min_by(|&&a, &&b| {
                    dist2(&points[a], &centroids[c]).total_cmp(&dist2(&points[b], &centroids[c]))
                })
                .expect("cluster is non-empty")
        })
        .collect();
    // Degenerate duplicate-heavy inputs can leave clusters empty; keep the
    // contract of k picks by backfilling in index order.
    let mut i = 0;
    while picks.len() < k && i < points.len() {
        if !picks.contains(&i) {
            picks.push(i);
        }
        i += 1;
    }
    picks
}

/// Rehearsal batches served from the store: a fixed seeded order, cycled so
/// every batch sees `min(batch_size, stored)` items and the whole memory is
/// visited evenly.
pub(crate) struct MemoryHooks {
    items: Vec<TrainItem>,
    take: usize,
}

impl MemoryHooks {
    pub(crate) fn new(
        memory: &EpisodicMemory,
        vocab: &Vocab,
        batch_size: usize,
        seed: u64,
    ) -> Result<MemoryHooks> {
        let mut items: Vec<TrainItem> = memory
            .stored_samples()
            .map(|s| TrainItem::from_sample(s, vocab))
            .collect::<Result<_>>()?;
        use rand::seq::SliceRandom;
        items.shuffle(&mut rng::stream(seed, "memory-order", 0));
        let take = batch_size.min(items.len());
        Ok(MemoryHooks { items, take })
    }
}

impl StrategyHooks for MemoryHooks {
    fn memory_batch(&mut self, batch_index: usize) -> Vec<TrainItem> {
        if self.items.is_empty() {
            return Vec::new();
        }
        let start = (batch_index * self.take) % self.items.len();
        (0..self.take)
            .map(|o| self.items[(start + o) % self.items.len()].clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cl_engine::testkit::{task_a, task_o, toy_model, toy_task_pair};

    #[test]
    fn tight_pairs_yield_one_representative_each() {
        let pairs = vec![
            vec![0.0, 0.0],
            vec![0.2, 0.0],
            vec![10.0, 10.0],
            vec![10.2, 10.0],
        ];
        for seed in 0..5 {
            let mut r = rng::stream(seed, "kmeans-test", 0);
            let picks = kmeans_select(&pairs, 2, &mut r);
            assert_eq!(picks.len(), 2);
            let low = picks.iter().filter(|&&i| i < 2).count();
            let high = picks.iter().filter(|&&i| i >= 2).count();
            assert_eq!((low, high), (1, 1), "seed {seed}: picks {picks:?}");
        }

        // A strict interior point: the three-point cluster's centroid is
        // nearest to index 2, and the bigger cluster leads the order.
        let uneven = vec![
            vec![0.0, 0.0],
            vec![0.8, 0.0],
            vec![0.4, 0.1],
            vec![9.0, 9.0],
            vec![9.4, 9.0],
        ];
        for seed in 0..5 {
            let mut r = rng::stream(seed, "kmeans-test", 1);
            let picks = kmeans_select(&uneven, 2, &mut r);
            assert_eq!(picks[0], 2, "seed {seed}: picks {picks:?}");
            assert!(picks[1] == 3 || picks[1] == 4);
        }

        // Quota at or above the point count keeps everything.
        let mut r = rng::stream(0, "kmeans-test", 2);
        assert_eq!(kmeans_select(&pairs, 4, &mut r), vec![0, 1, 2, 3]);
        assert_eq!(kmeans_select(&pairs, 9, &mut r), vec![0, 1, 2, 3]);
    }

    #[test]
    fn quota_covering_the_task_stores_it_whole() {
        let (vocab, tasks) = toy_task_pair();
        let model = toy_model(&vocab, 16, 2, 11);
        for policy in [MemoryPolicy::Rnd, MemoryPolicy::Kmeans] {
            let mut m = EpisodicMemory::new(policy, MemoryBudget::Samples(50)).unwrap();
            m.refresh(&tasks[0], &model, &vocab, 5).unwrap();
            assert_eq!(m.len(), tasks[0].train.len());
            let ids: Vec<&str> = m.stored_samples().map(|s| s.id.as_str()).collect();
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), ids.len(), "no duplicates stored");
        }
    }

    #[test]
    fn rebalancing_evicts_by_truncating_each_preference_order() {
        let (vocab, _) = toy_task_pair();
        let model = toy_model(&vocab, 16, 2, 11);
        let mut m = EpisodicMemory::new(MemoryPolicy::Rnd, MemoryBudget::Samples(3)).unwrap();

        m.refresh(&task_o(), &model, &vocab, 5).unwrap();
        assert_eq!(m.len(), 3, "first task takes the whole budget");
        let first: Vec<String> = m.stored_samples().map(|s| s.id.clone()).collect();

        m.refresh(&task_a(), &model, &vocab, 5).unwrap();
        let counts = m.per_task_counts();
        assert_eq!(counts["o"], 2, "earlier task keeps the remainder");
        assert_eq!(counts["a"], 1);
        assert_eq!(m.len(), 3);
        let now: Vec<String> = m
            .stored_samples()
            .filter(|s| s.task_tag == "o")
            .map(|s| s.id.clone())
            .collect();
        assert_eq!(now, first[..2].to_vec(), "eviction trims the tail only");

        // A task may not be stored twice.
        assert!(m.refresh(&task_a(), &model, &vocab, 5).is_err());
    }

    #[test]
    fn byte_budgets_are_exact_and_never_overrun() {
        let (vocab, tasks) = toy_task_pair();
        let model = toy_model(&vocab, 16, 2, 11);
        let two_samples: u64 = tasks[0].train[..2].iter().map(|s| sample_bytes(s) as u64).sum();

        let mut m = EpisodicMemory::new(MemoryPolicy::Rnd, MemoryBudget::Bytes(two_samples * 2)).unwrap();
        m.refresh(&tasks[0], &model, &vocab, 5).unwrap();
        assert!(m.byte_size() <= two_samples * 2);
        assert!(m.len() >= 2, "roughly four samples' worth of budget");

        m.refresh(&tasks[1], &model, &vocab, 5).unwrap();
        assert!(m.byte_size() <= two_samples * 2, "still within budget after rebalance");
        assert!(m.per_task_counts().values().all(|&c| c > 0));

        // Independent re-serialization agrees with the accounting.
        let resum: u64 = m.stored_samples().map(|s| sample_bytes(s) as u64).sum();
        assert_eq!(m.byte_size(), resum);

        // A budget below one sample is refused.
        let mut tiny = EpisodicMemory::new(MemoryPolicy::Kmeans, MemoryBudget::Bytes(10)).unwrap();
        let err = tiny.refresh(&tasks[0], &model, &vocab, 5).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(EpisodicMemory::new(MemoryPolicy::Rnd, MemoryBudget::Samples(0)).is_err());
    }

    #[test]
    fn rehearsal_batches_cycle_the_whole_store_deterministically() {
        let (vocab, tasks) = toy_task_pair();
        let model = toy_model(&vocab, 16, 2, 11);
        let mut m = EpisodicMemory::new(MemoryPolicy::Rnd, MemoryBudget::Samples(3)).unwrap();
        m.refresh(&tasks[0], &model, &vocab, 5).unwrap();

        let mut a = MemoryHooks::new(&m, &vocab, 2, 9).unwrap();
        let mut b = MemoryHooks::new(&m, &vocab, 2, 9).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for batch in 0..3 {
            let ba = a.memory_batch(batch);
            let bb = b.memory_batch(batch);
            assert_eq!(ba.len(), 2);
            let ids_a: Vec<&str> = ba.iter().map(|i| i.bundle.sample_id.as_str()).collect();
            let ids_b: Vec<&str> = bb.iter().map(|i| i.bundle.sample_id.as_str()).collect();
            assert_eq!(ids_a, ids_b, "same seed, same cycle");
            seen.extend(ids_a.into_iter().map(String::from));
        }
        assert_eq!(seen.len(), 3, "three batches of two cover all three items");

        let empty = EpisodicMemory::new(MemoryPolicy::Rnd, MemoryBudget::Samples(3)).unwrap();
        let mut hooks = MemoryHooks::new(&empty, &vocab, 4, 9).unwrap();
        assert!(hooks.memory_batch(0).is_empty());
    }
}
