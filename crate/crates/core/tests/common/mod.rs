#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ustar_core::discretize::{HourId, RegionId};
use ustar_core::embed::Embeddings;
use ustar_core::ingest::Record;
use ustar_core::train::{context_terms, plan_gradients, LocationSlot, StepPlan};
use ustar_core::unit::{KeywordId, Modality, UnitId, UserId};

pub const SIZES: [usize; 4] = [12, 24, 40, 15];

pub fn random_embeddings(dim: usize, rng: &mut ChaCha8Rng) -> Embeddings {
    let mut emb = Embeddings::new(dim);
    let normal = Normal::new(0.0f32, 0.4).unwrap();
    for (m, n) in Modality::ALL.into_iter().zip(SIZES) {
        emb.ensure_len(m, n, rng);
        for i in 0..n {
            for x in emb.vector_mut(UnitId::new(m, i as u32)) {
                *x = normal.sample(rng);
            }
        }
    }
    emb
}

pub fn random_record(rng: &mut ChaCha8Rng) -> Record {
    let n_kw = rng.random_range(1..=5);
    let keywords = rand::seq::index::sample(rng, SIZES[2], n_kw)
        .into_iter()
        .map(|k| KeywordId(k as u32))
        .collect();
    Record {
        arrival_index: 0,
        timestamp: 0,
        hour: HourId(rng.random_range(0..SIZES[1] as u16)),
        region: Some(RegionId(rng.random_range(0..SIZES[0] as u32))),
        coords: None,
        keywords,
        user: UserId(rng.random_range(0..SIZES[3] as u32)),
    }
}

/// Context vector in f64, written out term by term.
fn oracle_h(v: &HashMap<UnitId, Vec<f64>>, r: &Record, target: UnitId, dim: usize) -> Vec<f64> {
    let region = UnitId::from(r.region.unwrap());
    let hour = UnitId::from(r.hour);
    let user = UnitId::from(r.user);
    let kws: Vec<UnitId> = r
        .keywords
        .iter()
        .map(|&k| UnitId::from(k))
        .filter(|&k| k != target)
        .collect();
    let mut kw_mean = vec![0.0; dim];
    for k in &kws {
        for (m, x) in kw_mean.iter_mut().zip(&v[k]) {
            *m += x / kws.len() as f64;
        }
    }
    let (parts, denom): (Vec<&[f64]>, f64) = match target.modality {
        Modality::Keyword => (vec![&v[&region], &v[&hour], &v[&user], &kw_mean], 4.0),
        Modality::Region => (vec![&v[&hour], &v[&user], &kw_mean], 3.0),
        Modality::Hour => (vec![&v[&region], &v[&user], &kw_mean], 3.0),
        Modality::User => (vec![&v[&region], &v[&hour], &kw_mean], 3.0),
    };
    (0..dim)
        .map(|i| parts.iter().map(|p| p[i]).sum::<f64>() / denom)
        .collect()
}

fn oracle_loss(
    v: &HashMap<UnitId, Vec<f64>>,
    r: &Record,
    target: UnitId,
    negatives: &[UnitId],
    dim: usize,
) -> f64 {
    let h = oracle_h(v, r, target, dim);
    let dot = |u: &UnitId| v[u].iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
    let nls = |x: f64| (1.0 + (-x).exp()).ln();
    nls(dot(&target)) + negatives.iter().map(|k| nls(-dot(k))).sum::<f64>()
}

/// Largest relative error between analytic gradients and central finite
/// differences of the f64 oracle, for one random (record, target, 5 negatives).
pub fn gradient_relative_error(seed: u64) -> f64 {
    let dim = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = random_embeddings(dim, &mut rng);
    let r = random_record(&mut rng);
    let units: Vec<UnitId> = r.units().collect();
    let target = units[rng.random_range(0..units.len())];
    let mut negatives = Vec::new();
    while negatives.len() < 5 {
        let k = UnitId::new(
            target.modality,
            rng.random_range(0..SIZES[target.modality.index()] as u32),
        );
        if k != target {
            negatives.push(k);
        }
    }
    let plan = StepPlan {
        target,
        negatives: negatives.clone(),
        context: context_terms(&r, target, LocationSlot::Region(r.region.unwrap())).unwrap(),
    };
    let (_, analytic) = plan_gradients(&emb, &plan);

    let mut v: HashMap<UnitId, Vec<f64>> = HashMap::new();
    for &u in units.iter().chain(&negatives) {
        v.insert(u, emb.vector(u).iter().map(|&x| x as f64).collect());
    }
    let step = 1e-4;
    let mut worst: f64 = 0.0;
    for (u, g) in &analytic {
        let mut num = vec![0.0; dim];
        for (i, n) in num.iter_mut().enumerate() {
            let orig = v[u][i];
            v.get_mut(u).unwrap()[i] = orig + step;
            let plus = oracle_loss(&v, &r, target, &negatives, dim);
            v.get_mut(u).unwrap()[i] = orig - step;
            let minus = oracle_loss(&v, &r, target, &negatives, dim);
            v.get_mut(u).unwrap()[i] = orig;
            *n = (plus - minus) / (2.0 * step);
        }
        let diff = num
            .iter()
            .zip(g)
            .map(|(a, &b)| (a - b as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-3);
        worst = worst.max(diff / norm);
    }
    // Every unit that influences the loss must receive a gradient.
    assert_eq!(analytic.len(), v.len());
    worst
}

/// Users whose keywords name their home region; records sit at home 80% of
/// the time and elsewhere uniformly otherwise.
pub fn planted_homophily(users: u32, per_user: usize, regions: u32, seed: u64) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filler = 200;
    let mut out = Vec::new();
    for u in 0..users {
        let home = rng.random_range(0..regions);
        for _ in 0..per_user {
            let region = if rng.random::<f64>() < 0.8 {
                home
            } else {
                rng.random_range(0..regions)
            };
            let mut keywords = vec![KeywordId(filler + home)];
            keywords.extend((0..2).map(|_| KeywordId(rng.random_range(0..filler))));
            keywords.dedup();
            out.push(Record {
                arrival_index: 0,
                timestamp: 1_500_000_000 + rng.random_range(0..86_400 * 30),
                hour: HourId(0),
                region: Some(RegionId(region)),
                coords: None,
                keywords,
                user: UserId(u),
            });
        }
    }
    out.sort_by_key(|r| r.timestamp);
    for (i, r) in out.iter_mut().enumerate() {
        r.arrival_index = i as u64;
    }
    out
}

/// Geotagged records over one square degree. With `roaming`, all records of
/// an hour cluster around that hour's hotspot.
pub fn hotspot_stream(hours: i64, per_hour: usize, roaming: bool, seed: u64) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = Normal::new(0.0, 0.02).unwrap();
    let mut out = Vec::new();
    for h in 0..hours {
        let spot: (f64, f64) = (rng.random(), rng.random());
        for _ in 0..per_hour {
            let coords = if roaming {
                (
                    spot.0 + spread.sample(&mut rng),
                    spot.1 + spread.sample(&mut rng),
                )
            } else {
                (rng.random(), rng.random())
            };
            out.push(Record {
                arrival_index: out.len() as u64,
                timestamp: 1_500_000_000 + h * 3600 + rng.random_range(0..3600),
                hour: HourId(0),
                region: Some(RegionId(0)),
                coords: Some(coords),
                keywords: vec![KeywordId(0)],
                user: UserId(0),
            });
        }
    }
    out
}
