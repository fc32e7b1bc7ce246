//! Corpus-level homophily studies and the region drift statistic.
//!
//! Study 1 asks whether users with similar content visit similar places;
//! study 2 asks whether records posted close in time are close in space.
//! Both are one-tailed Welch tests on sampled pairs. Results do not depend
//! on record order: users are handled in order of their names and sampling
//! seeds derive from names, not from interned ids.

use std::collections::HashMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::embed::Snapshot;
use crate::error::{Error, Result};
use crate::ingest::Record;
use crate::stats::{welch_t_one_tailed, Tail};
use crate::unit::{UnitId, UserId};

/// Minimum records for a user to take part in study 1.
pub const MIN_USER_RECORDS: usize = 5;

const EARTH_RADIUS_M: f64 = 6_371_008.8;

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Sparse unit-length vector, sorted by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVec(Vec<(u32, f64)>);

impl SparseVec {
    fn from_counts(counts: &HashMap<u32, u64>, idf: impl Fn(u32) -> f64) -> Self {
        let total: u64 = counts.values().sum();
        let mut v: Vec<(u32, f64)> = counts
            .iter()
            .map(|(&i, &c)| (i, c as f64 / total as f64 * idf(i)))
            .filter(|(_, w)| *w != 0.0)
            .collect();
        v.sort_unstable_by_key(|(i, _)| *i);
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut v {
                *w /= norm;
            }
        }
        SparseVec(v)
    }

    /// Cosine similarity; zero vectors give 0.
    pub fn cosine(&self, other: &SparseVec) -> f64 {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut dot) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        dot
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserProfile {
    pub key: String,
    pub content: SparseVec,
    pub visits: SparseVec,
    pub records: usize,
}

fn idf_table(docs: &[HashMap<u32, u64>]) -> HashMap<u32, f64> {
    let mut df: HashMap<u32, u64> = HashMap::new();
    for d in docs {
        for &i in d.keys() {
            *df.entry(i).or_insert(0) += 1;
        }
    }
    let n = docs.len() as f64;
    df.into_iter()
        .map(|(i, d)| (i, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
        .collect()
}

type Counts = HashMap<u32, u64>;

/// Keyword and region tf-idf profiles of users with at least `min_records`
/// records, sorted by key.
pub fn user_profiles(
    records: &[Record],
    key: impl Fn(UserId) -> String,
    min_records: usize,
) -> Vec<UserProfile> {
    let mut by_user: HashMap<UserId, (Counts, Counts, usize)> = HashMap::new();
    for r in records {
        let e = by_user.entry(r.user).or_default();
        for w in &r.keywords {
            *e.0.entry(w.0).or_insert(0) += 1;
        }
        if let Some(l) = r.region {
            *e.1.entry(l.0).or_insert(0) += 1;
        }
        e.2 += 1;
    }
    let mut users: Vec<(String, Counts, Counts, usize)> = by_user
        .into_iter()
        .filter(|(_, (_, _, n))| *n >= min_records)
        .map(|(u, (w, l, n))| (key(u), w, l, n))
        .collect();
    users.sort_by(|a, b| a.0.cmp(&b.0));
    let content: Vec<HashMap<u32, u64>> = users.iter().map(|u| u.1.clone()).collect();
    let visits: Vec<HashMap<u32, u64>> = users.iter().map(|u| u.2.clone()).collect();
    let idf_w = idf_table(&content);
    let idf_l = idf_table(&visits);
    users
        .into_iter()
        .map(|(key, w, l, n)| UserProfile {
            key,
            content: SparseVec::from_counts(&w, |i| idf_w[&i]),
            visits: SparseVec::from_counts(&l, |i| idf_l[&i]),
            records: n,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyReport {
    pub samples: usize,
    pub mean_nb: f64,
    pub mean_nnb: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContentStudyConfig {
    /// Neighbors and non-neighbors per user.
    pub n: usize,
    /// Users to sample.
    pub users: usize,
    pub seed: u64,
}

impl Default for ContentStudyConfig {
    fn default() -> Self {
        ContentStudyConfig {
            n: 10,
            users: 5_000,
            seed: 0,
        }
    }
}

/// Do content neighbors share visit profiles more than random users do?
/// Tests H0: mean P_nb <= mean P_nnb.
pub fn study_content_vs_visits(
    records: &[Record],
    key: impl Fn(UserId) -> String,
    cfg: &ContentStudyConfig,
) -> Result<StudyReport> {
    let profiles = user_profiles(records, key, MIN_USER_RECORDS);
    if profiles.len() < 2 * cfg.n + 1 {
        return Err(Error::InsufficientData(format!(
            "{} users with at least {MIN_USER_RECORDS} records; need {}",
            profiles.len(),
            2 * cfg.n + 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picked: Vec<usize> = (0..profiles.len()).collect();
    if profiles.len() < cfg.users {
        warn!("only {} eligible users; using all of them", profiles.len());
    } else {
        picked.shuffle(&mut rng);
        picked.truncate(cfg.users);
        picked.sort_unstable();
    }

    let pairs: Vec<(f64, f64)> = picked
        .par_iter()
        .map(|&u| {
            let me = &profiles[u];
            let mut others: Vec<(usize, f64)> = (0..profiles.len())
                .filter(|&v| v != u)
                .map(|v| (v, me.content.cosine(&profiles[v].content)))
                .collect();
            others.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let (nb, rest) = others.split_at(cfg.n);
            let mut urng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a(&me.key));
            let nnb = rand::seq::index::sample(&mut urng, rest.len(), cfg.n);
            let visit = |v: usize| me.visits.cosine(&profiles[v].visits);
            let p_nb = nb.iter().map(|&(v, _)| visit(v)).sum::<f64>() / cfg.n as f64;
            let p_nnb = nnb.iter().map(|i| visit(rest[i].0)).sum::<f64>() / cfg.n as f64;
            (p_nb, p_nnb)
        })
        .collect();
    let (nb, nnb): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    report(&nb, &nnb, Tail::Greater)
}

fn report(nb: &[f64], nnb: &[f64], tail: Tail) -> Result<StudyReport> {
    let w = welch_t_one_tailed(nb, nnb, tail)
        .ok_or_else(|| Error::InsufficientData("fewer than two samples".into()))?;
    Ok(StudyReport {
        samples: nb.len(),
        mean_nb: w.mean_a,
        mean_nnb: w.mean_b,
        t: w.t,
        df: w.df,
        p: w.p,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceUnit {
    /// Euclidean distance on raw (lat, lon) degrees.
    Degrees,
    /// Great-circle distance in meters.
    Meters,
}

pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1, la2, lo2) = (
        a.0.to_radians(),
        a.1.to_radians(),
        b.0.to_radians(),
        b.1.to_radians(),
    );
    let h = ((la2 - la1) / 2.0).sin().powi(2)
        + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

fn distance(a: (f64, f64), b: (f64, f64), unit: DistanceUnit) -> f64 {
    match unit {
        DistanceUnit::Degrees => ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
        DistanceUnit::Meters => haversine_m(a, b),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeStudyConfig {
    pub bin_secs: i64,
    pub pairs: usize,
    pub unit: DistanceUnit,
    pub seed: u64,
}

impl Default for TimeStudyConfig {
    fn default() -> Self {
        TimeStudyConfig {
            bin_secs: 3600,
            pairs: 100_000,
            unit: DistanceUnit::Degrees,
            seed: 0,
        }
    }
}

/// Are records in the same time bin closer than records in different bins?
/// Tests H0: mean D_nb >= mean D_nnb.
pub fn study_time_vs_space(records: &[Record], cfg: &TimeStudyConfig) -> Result<StudyReport> {
    if cfg.bin_secs <= 0 {
        return Err(Error::Config("bin length must be positive".into()));
    }
    let mut pts: Vec<(i64, f64, f64)> = records
        .iter()
        .filter_map(|r| r.coords.map(|(lat, lon)| (r.timestamp, lat, lon)))
        .collect();
    pts.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });

    // Contiguous runs of equal bins.
    let mut bins: Vec<(usize, usize)> = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        let b = p.0.div_euclid(cfg.bin_secs);
        match bins.last_mut() {
            Some((s, e)) if pts[*s].0.div_euclid(cfg.bin_secs) == b => *e = i + 1,
            _ => bins.push((i, i + 1)),
        }
    }
    let bin_of: Vec<usize> = bins
        .iter()
        .enumerate()
        .flat_map(|(k, (s, e))| std::iter::repeat_n(k, e - s))
        .collect();
    let shared: Vec<usize> = (0..pts.len())
        .filter(|&i| bins[bin_of[i]].1 - bins[bin_of[i]].0 >= 2)
        .collect();
    if shared.is_empty() || bins.len() < 2 {
        return Err(Error::InsufficientData(
            "need two time bins and a bin with two geotagged records".into(),
        ));
    }

    let loc = |i: usize| (pts[i].1, pts[i].2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut d_nb = Vec::with_capacity(cfg.pairs);
    let mut d_nnb = Vec::with_capacity(cfg.pairs);
    for _ in 0..cfg.pairs {
        let i = shared[rng.random_range(0..shared.len())];
        let (s, e) = bins[bin_of[i]];
        let mut j = rng.random_range(s..e - 1);
        if j >= i {
            j += 1;
        }
        d_nb.push(distance(loc(i), loc(j), cfg.unit));

        let i = rng.random_range(0..pts.len());
        let j = loop {
            let j = rng.random_range(0..pts.len());
            if bin_of[j] != bin_of[i] {
                break j;
            }
        };
        d_nnb.push(distance(loc(i), loc(j), cfg.unit));
    }
    report(&d_nb, &d_nnb, Tail::Less)
}

/// Reassign users to records by a seeded permutation.
pub fn shuffle_users(records: &[Record], seed: u64) -> Vec<Record> {
    let mut users: Vec<UserId> = records.iter().map(|r| r.user).collect();
    users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    records
        .iter()
        .zip(users)
        .map(|(r, u)| Record {
            user: u,
            ..r.clone()
        })
        .collect()
}

/// Reassign locations among geotagged records by a seeded permutation.
pub fn shuffle_locations(records: &[Record], seed: u64) -> Vec<Record> {
    let mut locs: Vec<_> = records
        .iter()
        .filter(|r| r.is_geotagged())
        .map(|r| (r.region, r.coords))
        .collect();
    locs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut it = locs.into_iter();
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.is_geotagged() {
                (r.region, r.coords) = it.next().expect("one location per geotagged record");
            }
            r
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftSeries {
    pub window: usize,
    /// `(step, delta)` for every step with a full window behind it.
    pub points: Vec<(i64, f64)>,
}

/// Distance between each vector and the mean of the `window` vectors before it.
pub fn drift_series(trajectory: &[(i64, Vec<f32>)], window: usize) -> Result<DriftSeries> {
    if window == 0 {
        return Err(Error::Config("drift window must be at least 1".into()));
    }
    if trajectory.len() < window + 1 {
        return Err(Error::InsufficientData(format!(
            "{} snapshots; need at least {}",
            trajectory.len(),
            window + 1
        )));
    }
    let dim = trajectory[0].1.len();
    let mut points = Vec::with_capacity(trajectory.len() - window);
    for t in window..trajectory.len() {
        let mut mean = vec![0.0f64; dim];
        for (_, v) in &trajectory[t - window..t] {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += *x as f64 / window as f64;
            }
        }
        let delta = trajectory[t]
            .1
            .iter()
            .zip(&mean)
            .map(|(x, m)| (*x as f64 - m).powi(2))
            .sum::<f64>()
            .sqrt();
        points.push((trajectory[t].0, delta));
    }
    Ok(DriftSeries { window, points })
}

/// One unit's vector across a sequence of snapshots, keyed by step index.
pub fn trajectory(snapshots: &[Snapshot], unit: UnitId) -> Result<Vec<(i64, Vec<f32>)>> {
    snapshots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if !s.embeddings.has(unit) {
                return Err(Error::InsufficientData(format!(
                    "snapshot {i} has no row for {unit}"
                )));
            }
            Ok((i as i64, s.embeddings.vector(unit).to_vec()))
        })
        .collect()
}
