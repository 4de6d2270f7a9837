//! N-way K-shot episodes drawn without reuse inside an epoch.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;

use crate::data::EmbeddingSet;
use crate::error::{Error, Result};
use crate::numeric::RngState;
use crate::ClassId;

/// A support set and a disjoint query set over the same `way_classes`,
/// `k_shot` samples per class on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub way_classes: Vec<ClassId>,
    pub support: EmbeddingSet,
    pub query: EmbeddingSet,
}

/// Stateful draw over the unused samples of one epoch.
#[derive(Debug, Clone)]
pub struct EpisodeSampler<'a> {
    data: &'a EmbeddingSet,
    n_way: usize,
    k_shot: usize,
    pools: BTreeMap<ClassId, Vec<usize>>,
    drawn: BTreeSet<ClassId>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(data: &'a EmbeddingSet, n_way: usize, k_shot: usize) -> Result<Self> {
        if n_way == 0 || k_shot == 0 {
            return Err(Error::InvalidArgument(format!(
                "n_way and k_shot must be >= 1, got {n_way} and {k_shot}"
            )));
        }
        Ok(Self {
            data,
            n_way,
            k_shot,
            pools: data.indices_by_class(),
            drawn: BTreeSet::new(),
        })
    }

    /// `Ok(None)` once fewer than `n_way` classes have `2·k_shot` unused samples.
    ///
    /// Classes are drawn uniformly without replacement, first among eligible
    /// classes not yet drawn this epoch, then among the rest, so every class
    /// with enough samples appears at least once per epoch.
    pub fn next_episode(&mut self, rng: &mut RngState) -> Result<Option<Episode>> {
        let need = 2 * self.k_shot;
        let (fresh, seen): (Vec<ClassId>, Vec<ClassId>) = self
            .pools
            .iter()
            .filter(|(_, pool)| pool.len() >= need)
            .map(|(c, _)| *c)
            .partition(|c| !self.drawn.contains(c));
        if fresh.len() + seen.len() < self.n_way {
            return Ok(None);
        }
        let from_fresh = fresh.len().min(self.n_way);
        let mut way_classes: Vec<ClassId> = index::sample(rng, fresh.len(), from_fresh)
            .into_iter()
            .map(|i| fresh[i])
            .collect();
        let rest = self.n_way - from_fresh;
        if rest > 0 {
            way_classes.extend(index::sample(rng, seen.len(), rest).into_iter().map(|i| seen[i]));
        }
        self.drawn.extend(way_classes.iter().copied());
        let mut support = Vec::with_capacity(self.n_way * self.k_shot);
        let mut query = Vec::with_capacity(self.n_way * self.k_shot);
        for c in &way_classes {
            let pool = self.pools.get_mut(c).expect("eligible class has a pool");
            let picked = index::sample(rng, pool.len(), need).into_vec();
            let chosen: Vec<usize> = picked.iter().map(|&p| pool[p]).collect();
            support.extend_from_slice(&chosen[..self.k_shot]);
            query.extend_from_slice(&chosen[self.k_shot..]);
            let mut drop = picked;
            drop.sort_unstable();
            for p in drop.into_iter().rev() {
                pool.remove(p);
            }
        }
        Ok(Some(Episode {
            way_classes,
            support: self.data.select(&support)?,
            query: self.data.select(&query)?,
        }))
    }

    pub fn unused_samples(&self) -> usize {
        self.pools.values().map(Vec::len).sum()
    }
}

/// One draw from a fresh pool.
pub fn sample_episode(
    data: &EmbeddingSet,
    n_way: usize,
    k_shot: usize,
    rng: &mut RngState,
) -> Result<Option<Episode>> {
    EpisodeSampler::new(data, n_way, k_shot)?.next_episode(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochEpisodes {
    pub episodes: Vec<Episode>,
    /// Samples left over because no further full episode could be formed.
    pub unused_samples: usize,
}

/// Episodes until the unused samples can no longer form one.
pub fn epoch_episodes(
    data: &EmbeddingSet,
    n_way: usize,
    k_shot: usize,
    rng: &mut RngState,
) -> Result<EpochEpisodes> {
    let mut sampler = EpisodeSampler::new(data, n_way, k_shot)?;
    let mut episodes = Vec::new();
    while let Some(ep) = sampler.next_episode(rng)? {
        episodes.push(ep);
    }
    let unused_samples = sampler.unused_samples();
    if unused_samples > 0 {
        log::debug!(
            "epoch: {} episodes, {unused_samples} of {} samples unused",
            episodes.len(),
            data.len()
        );
    }
    Ok(EpochEpisodes {
        episodes,
        unused_samples,
    })
}
