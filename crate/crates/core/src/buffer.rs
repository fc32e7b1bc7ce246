//! The retained record buffer and its informativeness-weighted downsampling.
//!
//! Before each batch is merged, every buffered record survives with
//! probability `exp(-tau * z)`, where `z` is the mean pairwise sigmoid
//! agreement of the record's unit embeddings. Well-learned records (high `z`)
//! leave the buffer sooner; older records face more trials.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::Embeddings;
use crate::error::{Error, Result};
use crate::ingest::Record;
use crate::unit::UnitId;
use crate::vecmath::dot;

/// Pair term used for every pair that involves a record's missing location.
pub const ABSENT_LOCATION_AGREEMENT: f64 = 1.0;

fn sigmoid64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean of `sigmoid(v_i . v_j)` over unordered pairs of `units`. When
/// `absent_location` is set, the record is treated as having one more unit
/// whose pairs all score [`ABSENT_LOCATION_AGREEMENT`].
pub fn intra_agreement_of(
    units: &[UnitId],
    absent_location: bool,
    emb: &Embeddings,
) -> Result<f64> {
    let n = units.len() + absent_location as usize;
    if n < 2 {
        return Err(Error::TooFewUnits(n));
    }
    let mut total = 0.0;
    for (i, &a) in units.iter().enumerate() {
        let va = emb.vector(a);
        for &b in &units[i + 1..] {
            total += sigmoid64(dot(va, emb.vector(b)) as f64);
        }
    }
    if absent_location {
        total += units.len() as f64 * ABSENT_LOCATION_AGREEMENT;
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

pub fn intra_agreement(r: &Record, emb: &Embeddings) -> Result<f64> {
    let units: Vec<UnitId> = r.units().collect();
    intra_agreement_of(&units, !r.is_geotagged(), emb)
}

pub fn retention_probability(z: f64, tau: f64) -> f64 {
    (-tau * z).exp()
}

#[derive(Clone, Debug)]
pub struct Buffer {
    records: Vec<Record>,
    tau: f64,
    rng: ChaCha8Rng,
    z_cache: Option<HashMap<u64, f64>>,
}

impl Buffer {
    pub fn new(tau: f64, seed: u64) -> Self {
        assert!(tau > 0.0, "tau must be positive");
        Buffer {
            records: Vec::new(),
            tau,
            rng: ChaCha8Rng::seed_from_u64(seed),
            z_cache: None,
        }
    }

    /// Reuse the first `z` computed for each record instead of recomputing
    /// against the current embeddings on every sweep.
    pub fn with_cached_z(mut self) -> Self {
        self.z_cache = Some(HashMap::new());
        self
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn get(&self, i: usize) -> &Record {
        &self.records[i]
    }

    /// One retention sweep with `z` supplied by the caller.
    pub fn downsample_by(&mut self, mut z_of: impl FnMut(&Record) -> f64) -> usize {
        let before = self.records.len();
        let tau = self.tau;
        let rng = &mut self.rng;
        self.records.retain(|r| {
            let p = retention_probability(z_of(r), tau);
            rng.random::<f64>() < p
        });
        before - self.records.len()
    }

    /// One retention sweep against the current embeddings. Returns the number
    /// of records removed.
    pub fn downsample(&mut self, emb: &Embeddings) -> Result<usize> {
        let mut zs = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let cached = self
                .z_cache
                .as_ref()
                .and_then(|c| c.get(&r.arrival_index))
                .copied();
            let z = match cached {
                Some(z) => z,
                None => intra_agreement(r, emb)?,
            };
            if let Some(c) = self.z_cache.as_mut() {
                c.entry(r.arrival_index).or_insert(z);
            }
            zs.push(z);
        }
        let mut it = zs.into_iter();
        let removed = self.downsample_by(|_| it.next().expect("one z per record"));
        if let Some(c) = self.z_cache.as_mut() {
            let live: std::collections::HashSet<u64> =
                self.records.iter().map(|r| r.arrival_index).collect();
            c.retain(|k, _| live.contains(k));
        }
        Ok(removed)
    }

    /// Append a batch, preserving arrival order.
    pub fn merge(&mut self, batch: impl IntoIterator<Item = Record>) {
        self.records.extend(batch);
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.records.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok(rng.random_range(0..self.records.len()))
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&Record> {
        self.sample_index(rng).map(|i| &self.records[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{HourId, RegionId};
    use crate::unit::{KeywordId, Modality, UserId};

    /// Embeddings where unit `(m, i)` is basis vector `e_{slot}`; all dots are 0.
    fn orthogonal_embeddings() -> Embeddings {
        let dim = 8;
        let mut e = Embeddings::new(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for m in Modality::ALL {
            e.ensure_len(m, 2, &mut rng);
        }
        for (slot, m) in Modality::ALL.iter().enumerate() {
            for i in 0..2 {
                let v = e.vector_mut(UnitId::new(*m, i));
                v.fill(0.0);
                v[slot * 2 + i as usize] = 1.0;
            }
        }
        e
    }

    fn record(region: Option<u32>, keywords: &[u32]) -> Record {
        Record {
            arrival_index: 0,
            timestamp: 1,
            hour: HourId(0),
            region: region.map(RegionId),
            coords: None,
            keywords: keywords.iter().map(|&k| KeywordId(k)).collect(),
            user: UserId(0),
        }
    }

    #[test]
    fn orthogonal_units_give_one_half() {
        let e = orthogonal_embeddings();
        let z = intra_agreement(&record(Some(0), &[0, 1]), &e).unwrap();
        assert!((z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn large_dot_pair_tends_to_two_thirds() {
        let mut e = orthogonal_embeddings();
        let units = [
            UnitId::new(Modality::Hour, 0),
            UnitId::new(Modality::User, 0),
            UnitId::new(Modality::Keyword, 0),
        ];
        let big = e.vector(units[1]).to_vec();
        for (d, s) in e.vector_mut(units[2]).iter_mut().zip(&big) {
            *d = 40.0 * s;
        }
        let z = intra_agreement_of(&units, false, &e).unwrap();
        assert!((z - 2.0 / 3.0).abs() < 1e-9, "{z}");
    }

    #[test]
    fn ngtsm_twin_has_inflated_agreement() {
        let e = orthogonal_embeddings();
        let gtsm = intra_agreement(&record(Some(1), &[0]), &e).unwrap();
        let ngtsm = intra_agreement(&record(None, &[0]), &e).unwrap();
        assert!((gtsm - 0.5).abs() < 1e-12);
        // Pairs of {l,t,u,w}: three involve l (1.0 each), three are sigma(0).
        assert!((ngtsm - (3.0 * 1.0 + 3.0 * 0.5) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn single_unit_is_an_error() {
        let e = orthogonal_embeddings();
        let r = intra_agreement_of(&[UnitId::new(Modality::Hour, 0)], false, &e);
        assert!(matches!(r, Err(Error::TooFewUnits(1))));
    }

    #[test]
    fn retention_closed_forms() {
        assert_eq!(retention_probability(0.0, 1.0), 1.0);
        assert!((retention_probability(1.0, 1.0) - 0.367_879_441).abs() < 1e-9);
        let ps: Vec<f64> = [0.1, 0.3, 0.5, 0.9]
            .iter()
            .map(|&z| retention_probability(z, 1.0))
            .collect();
        assert!(ps.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn bernoulli_fraction() {
        let mut b = Buffer::new(1.0, 42);
        b.merge((0..10_000).map(|i| Record {
            arrival_index: i,
            ..record(Some(0), &[0])
        }));
        b.downsample_by(|_| 0.5);
        let frac = b.len() as f64 / 10_000.0;
        assert!((frac - (-0.5f64).exp()).abs() < 0.02, "{frac}");
    }

    #[test]
    fn merge_preserves_order_and_sampling() {
        let mut b = Buffer::new(1.0, 1);
        assert!(matches!(
            b.sample_uniform(&mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::EmptyBuffer)
        ));
        b.merge([Record {
            arrival_index: 7,
            ..record(None, &[1])
        }]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(b.sample_uniform(&mut rng).unwrap().arrival_index, 7);
        b.merge((8..10).map(|i| Record {
            arrival_index: i,
            ..record(None, &[1])
        }));
        let order: Vec<u64> = b.records().iter().map(|r| r.arrival_index).collect();
        assert_eq!(order, [7, 8, 9]);
    }

    #[test]
    fn uniform_sampling_chi_square() {
        let mut b = Buffer::new(1.0, 1);
        b.merge((0..10).map(|i| Record {
            arrival_index: i,
            ..record(None, &[1])
        }));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0u32; 10];
        let draws = 100_000;
        for _ in 0..draws {
            counts[b.sample_index(&mut rng).unwrap()] += 1;
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square critical value, 9 degrees of freedom, alpha = 0.01.
        assert!(chi2 < 21.666, "{chi2}");
    }

    #[test]
    fn cached_z_is_reused() {
        let e = orthogonal_embeddings();
        let mut b = Buffer::new(1e-9, 3).with_cached_z();
        b.merge([record(Some(0), &[0])]);
        b.downsample(&e).unwrap();
        assert_eq!(b.z_cache.as_ref().unwrap().len(), 1);
        assert!((b.z_cache.as_ref().unwrap()[&0] - 0.5).abs() < 1e-12);
    }
}
