//! Weak geolocation for records without coordinates.
//!
//! A non-geotagged record borrows regions from geotagged records in the
//! buffer whose users sit close to its own user in embedding space. Each
//! candidate region keeps the best user similarity seen for it; the
//! normalized weights are then sampled with a Vose alias table.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::Serialize;

use crate::discretize::RegionId;
use crate::embed::{cosine, Embeddings};
use crate::error::{Error, Result};
use crate::ingest::Record;
use crate::unit::{UnitId, UserId};

/// Walker/Vose alias table over outcomes `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// Build from non-negative weights (normalized internally).
    pub fn new(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        if n == 0 || !total.is_finite() || total <= 0.0 {
            return Err(Error::EmptyDistribution);
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config(
                "alias weights must be finite and non-negative".into(),
            ));
        }
        let scale = n as f64 / total;
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let mut prob = vec![0.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);

        while let (Some(&l), Some(&g)) = (small.last(), large.last()) {
            small.pop();
            prob[l] = scaled[l];
            alias[l] = g as u32;
            scaled[g] = (scaled[g] + scaled[l]) - 1.0;
            if scaled[g] < 1.0 {
                large.pop();
                small.push(g);
            }
        }
        // Whatever is left is 1 up to rounding.
        for i in large.into_iter().chain(small) {
            prob[i] = 1.0;
        }
        Ok(AliasTable { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    /// One uniform column plus one biased coin.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }

    /// The distribution the table encodes.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.prob.len() as f64;
        let mut p: Vec<f64> = self.prob.iter().map(|x| x / n).collect();
        for (i, &a) in self.alias.iter().enumerate() {
            p[a as usize] += (1.0 - self.prob[i]) / n;
        }
        p
    }
}

/// Unnormalized region weights for one record, keyed by region.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RegionDistribution {
    weights: BTreeMap<RegionId, f64>,
}

impl RegionDistribution {
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, r: RegionId) -> f64 {
        self.weights.get(&r).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> impl Iterator<Item = (RegionId, f64)> + '_ {
        self.weights.iter().map(|(&r, &w)| (r, w))
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    /// Keep the larger of the current weight and `w`. Zero weights are not stored.
    pub fn offer(&mut self, region: RegionId, w: f64) {
        if w > 0.0 {
            let slot = self.weights.entry(region).or_insert(0.0);
            *slot = slot.max(w);
        }
    }

    pub fn normalized(&self) -> Vec<(RegionId, f64)> {
        let total = self.total();
        self.weights().map(|(r, w)| (r, w / total)).collect()
    }
}

/// Sampler over the support of a [`RegionDistribution`].
#[derive(Clone, Debug)]
pub struct RegionSampler {
    regions: Vec<RegionId>,
    table: AliasTable,
}

impl RegionSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RegionId {
        self.regions[self.table.sample(rng)]
    }

    pub fn table(&self) -> &AliasTable {
        &self.table
    }

    pub fn regions(&self) -> &[RegionId] {
        &self.regions
    }
}

pub fn build_alias(dist: &RegionDistribution) -> Result<RegionSampler> {
    let (regions, weights): (Vec<RegionId>, Vec<f64>) = dist.weights().unzip();
    Ok(RegionSampler {
        table: AliasTable::new(&weights)?,
        regions,
    })
}

/// Gaussian kernel on cosine distance, cut off beyond `c_u`.
pub fn similarity_from_distance(d: f64, c_u: f64) -> f64 {
    if d <= c_u {
        (-(d * d) / (2.0 * c_u * c_u)).exp()
    } else {
        0.0
    }
}

pub fn user_similarity(a: UserId, b: UserId, emb: &Embeddings, c_u: f64) -> f64 {
    let d = 1.0 - cosine(emb.vector(UnitId::from(a)), emb.vector(UnitId::from(b)));
    similarity_from_distance(d, c_u)
}

/// Region weights for `record` from every geotagged record in `buffer`.
pub fn region_distribution(
    record: &Record,
    buffer: &[Record],
    emb: &Embeddings,
    c_u: f64,
) -> RegionDistribution {
    let mut dist = RegionDistribution::default();
    let mut sims: HashMap<UserId, f64> = HashMap::new();
    for other in buffer {
        let Some(region) = other.region else { continue };
        let w = *sims
            .entry(other.user)
            .or_insert_with(|| user_similarity(record.user, other.user, emb, c_u));
        dist.offer(region, w);
    }
    dist
}

pub fn infer<R: Rng + ?Sized>(
    record: &Record,
    buffer: &[Record],
    emb: &Embeddings,
    c_u: f64,
    rng: &mut R,
) -> Option<RegionId> {
    let dist = region_distribution(record, buffer, emb, c_u);
    build_alias(&dist).ok().map(|s| s.sample(rng))
}

/// The distinct (user, region) pairs of the geotagged records in a buffer.
/// Gives the same distribution as [`region_distribution`] with one
/// similarity per distinct user instead of one per record.
#[derive(Clone, Debug, Default)]
pub struct GeotaggedIndex {
    users: Vec<UserId>,
    regions: Vec<Vec<RegionId>>,
}

impl GeotaggedIndex {
    pub fn build(buffer: &[Record]) -> Self {
        let mut by_user: BTreeMap<UserId, Vec<RegionId>> = BTreeMap::new();
        for r in buffer {
            if let Some(region) = r.region {
                let regions = by_user.entry(r.user).or_default();
                if !regions.contains(&region) {
                    regions.push(region);
                }
            }
        }
        let (users, regions) = by_user.into_iter().unzip();
        GeotaggedIndex { users, regions }
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn distribution(&self, user: UserId, emb: &Embeddings, c_u: f64) -> RegionDistribution {
        let mut dist = RegionDistribution::default();
        for (other, regions) in self.users.iter().zip(&self.regions) {
            let w = user_similarity(user, *other, emb, c_u);
            if w > 0.0 {
                for &region in regions {
                    dist.offer(region, w);
                }
            }
        }
        dist
    }

    pub fn infer<R: Rng + ?Sized>(
        &self,
        user: UserId,
        emb: &Embeddings,
        c_u: f64,
        rng: &mut R,
    ) -> Option<RegionId> {
        build_alias(&self.distribution(user, emb, c_u))
            .ok()
            .map(|s| s.sample(rng))
    }
}
