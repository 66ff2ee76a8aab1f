//! Mini-batch construction: uniform random (UR), class-uniform random (CUR)
//! and superclass-uniform random (SUR) sampling.
//!
//! CUR draws `b/k` distinct classes per batch and `k` examples from each, so
//! every batch carries both intra-class and inter-class pairs. SUR applies
//! the same mechanics to k-means clusters of teacher embeddings.

mod kmeans;

pub use kmeans::{kmeans, SuperclassAssignment};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::MlpModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ur,
    Cur,
    Sur,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ur" => Ok(Strategy::Ur),
            "cur" => Ok(Strategy::Cur),
            "sur" => Ok(Strategy::Sur),
            _ => Err(Error::param(format!("unknown sampler strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    pub batch_size: usize,
    /// Examples per (super)class in a batch (`k`).
    pub per_class: usize,
    /// Number of k-means clusters for SUR (`K`).
    pub num_superclasses: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Cur,
            batch_size: 40,
            per_class: 4,
            num_superclasses: 10,
            kmeans_iters: 50,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if matches!(self.strategy, Strategy::Cur | Strategy::Sur)
            && (self.per_class == 0 || !self.batch_size.is_multiple_of(self.per_class))
        {
            return Err(Error::config(format!(
                "per_class k = {} must be >= 1 and divide batch size {}",
                self.per_class, self.batch_size
            )));
        }
        if self.strategy == Strategy::Sur && self.num_superclasses < 2 {
            return Err(Error::config("SUR needs at least 2 superclasses"));
        }
        Ok(())
    }

    /// Distinct (super)classes per batch, `b/k`.
    pub fn classes_per_batch(&self) -> usize {
        self.batch_size / self.per_class.max(1)
    }
}

/// The generator used for every seeded sampling stream.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    <SeededRng as rand::SeedableRng>::seed_from_u64(seed)
}

/// Ordered mini-batches of example indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerPlan {
    pub batches: Vec<Vec<usize>>,
}

impl SamplerPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Verifies that every batch holds exactly `b/k` distinct groups with
    /// exactly `k` members each.
    pub fn check_group_balance(
        &self,
        groups: &[usize],
        batch_size: usize,
        per_class: usize,
    ) -> Result<()> {
        for (bi, batch) in self.batches.iter().enumerate() {
            if batch.len() != batch_size {
                return Err(Error::input(format!(
                    "batch {bi} has {} indices, expected {batch_size}",
                    batch.len()
                )));
            }
            let mut counts = std::collections::BTreeMap::new();
            for &i in batch {
                let g = *groups
                    .get(i)
                    .ok_or_else(|| Error::input(format!("batch {bi} index {i} out of range")))?;
                *counts.entry(g).or_insert(0usize) += 1;
            }
            if counts.len() != batch_size / per_class || counts.values().any(|&c| c != per_class) {
                return Err(Error::input(format!(
                    "batch {bi} group counts {counts:?} violate k = {per_class}"
                )));
            }
        }
        Ok(())
    }
}

/// One epoch of uniform sampling: a seeded shuffle chunked into `⌊n/b⌋` full
/// batches; the remainder is dropped.
pub fn ur_sample<R: Rng + ?Sized>(
    dataset_size: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SamplerPlan> {
    cfg.validate()?;
    let b = cfg.batch_size;
    if dataset_size < b {
        return Err(Error::input(format!(
            "dataset of {dataset_size} is smaller than batch size {b}"
        )));
    }
    let mut order: Vec<usize> = (0..dataset_size).collect();
    order.shuffle(rng);
    Ok(SamplerPlan {
        batches: order.chunks_exact(b).map(<[usize]>::to_vec).collect(),
    })
}

/// Per-group queues driving class-uniform sampling across one epoch.
struct GroupPools {
    members: Vec<Vec<usize>>,
    queues: Vec<Vec<usize>>,
    group_queue: Vec<usize>,
    active: Vec<usize>,
}

impl GroupPools {
    fn new(groups: &[usize]) -> Self {
        let count = groups.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); count];
        for (i, &g) in groups.iter().enumerate() {
            members[g].push(i);
        }
        let active = (0..count).filter(|&g| !members[g].is_empty()).collect();
        Self {
            queues: vec![Vec::new(); count],
            members,
            group_queue: Vec::new(),
            active,
        }
    }

    /// `m` distinct groups; groups cycle in shuffled order so each appears
    /// once before any repeats.
    fn next_groups<R: Rng + ?Sized>(&mut self, m: usize, rng: &mut R) -> Vec<usize> {
        let mut chosen = Vec::with_capacity(m);
        let mut deferred = Vec::new();
        while chosen.len() < m {
            if self.group_queue.is_empty() {
                self.group_queue = self.active.clone();
                self.group_queue.shuffle(rng);
            }
            let g = self.group_queue.pop().expect("refilled above");
            if chosen.contains(&g) {
                deferred.push(g);
            } else {
                chosen.push(g);
            }
        }
        self.group_queue.extend(deferred.into_iter().rev());
        chosen
    }

    /// `k` examples of group `g`: without replacement while the group has at
    /// least `k` members, with replacement otherwise.
    fn take<R: Rng + ?Sized>(&mut self, g: usize, k: usize, rng: &mut R, out: &mut Vec<usize>) {
        let members = &self.members[g];
        if members.len() < k {
            out.extend((0..k).map(|_| members[rng.random_range(0..members.len())]));
            return;
        }
        let queue = &mut self.queues[g];
        if queue.len() < k {
            let leftover = std::mem::take(queue);
            let mut fresh: Vec<usize> = members
                .iter()
                .copied()
                .filter(|i| !leftover.contains(i))
                .collect();
            fresh.shuffle(rng);
            // leftover examples are used first; they go to the back of the
            // stack because pop() reads from the end
            fresh.extend(leftover);
            *queue = fresh;
        }
        for _ in 0..k {
            out.push(queue.pop().expect("queue holds at least k members"));
        }
    }
}

/// One epoch (`⌊n/b⌋` batches) of class-uniform sampling over `groups`.
pub fn cur_sample<R: Rng + ?Sized>(
    groups: &[usize],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SamplerPlan> {
    cfg.validate()?;
    let b = cfg.batch_size;
    let k = cfg.per_class;
    let m = cfg.classes_per_batch();
    if groups.len() < b {
        return Err(Error::input(format!(
            "dataset of {} is smaller than batch size {b}",
            groups.len()
        )));
    }
    let mut pools = GroupPools::new(groups);
    if pools.active.len() < m {
        return Err(Error::config(format!(
            "batch of {b} with k = {k} needs {m} distinct classes, only {} present",
            pools.active.len()
        )));
    }
    let batches = (0..groups.len() / b)
        .map(|_| {
            let mut batch = Vec::with_capacity(b);
            for g in pools.next_groups(m, rng) {
                pools.take(g, k, rng, &mut batch);
            }
            batch
        })
        .collect();
    Ok(SamplerPlan { batches })
}

/// Clusters teacher embeddings of `inputs` into `cfg.num_superclasses` groups.
pub fn superclasses(
    teacher: &MlpModel,
    inputs: &Matrix,
    cfg: &SamplerConfig,
) -> Result<SuperclassAssignment> {
    let embeddings = teacher.forward(inputs)?.embeddings().clone();
    kmeans(
        &embeddings,
        cfg.num_superclasses,
        cfg.kmeans_iters,
        cfg.seed,
    )
}

/// Superclass-uniform sampling: k-means over teacher embeddings, then CUR
/// over the cluster labels.
pub fn sur_sample<R: Rng + ?Sized>(
    teacher: &MlpModel,
    inputs: &Matrix,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(SamplerPlan, SuperclassAssignment)> {
    cfg.validate()?;
    let assignment = superclasses(teacher, inputs, cfg)?;
    let plan = cur_sample(&assignment.assignments, cfg, rng)?;
    Ok((plan, assignment))
}
