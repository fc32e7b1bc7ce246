//! The online learner: one call per stream step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::buffer::Buffer;
use crate::discretize::GridSpec;
use crate::embed::{Embeddings, Snapshot};
use crate::error::Result;
use crate::geo::GeotaggedIndex;
use crate::ingest::Record;
use crate::train::{
    train_step, NegativeSampler, SeenUnits, TrainConfig, TrainContext, TrainTrace, Variant,
};
use crate::unit::{Modality, UnitId};

/// Split a time-ordered stream into consecutive steps of `step_secs`.
/// Returns `(step key, records)` with key `floor(ts / step_secs)`.
pub fn group_by_step(
    records: impl IntoIterator<Item = Record>,
    step_secs: i64,
) -> Vec<(i64, Vec<Record>)> {
    assert!(step_secs > 0, "step length must be positive");
    let mut out: Vec<(i64, Vec<Record>)> = Vec::new();
    for r in records {
        let key = r.timestamp.div_euclid(step_secs);
        match out.last_mut() {
            Some((k, batch)) if *k == key => batch.push(r),
            _ => out.push((key, vec![r])),
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub arrived: usize,
    pub merged: usize,
    pub removed: usize,
    pub buffer_len: usize,
    pub trace: TrainTrace,
}

pub struct Engine {
    cfg: TrainConfig,
    emb: Embeddings,
    buffer: Buffer,
    seen: SeenUnits,
    rng: ChaCha8Rng,
    steps: usize,
}

impl Engine {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut buffer = Buffer::new(cfg.tau, cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        if cfg.cache_z {
            buffer = buffer.with_cached_z();
        }
        Ok(Engine {
            emb: Embeddings::new(cfg.dim),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            buffer,
            seen: SeenUnits::default(),
            steps: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn embeddings(&self) -> &Embeddings {
        &self.emb
    }

    pub fn buffer(&self) -> &Buffer {
        &self.buffer
    }

    pub fn seen(&self) -> &SeenUnits {
        &self.seen
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Downsample the buffer, merge the batch, and train on it.
    pub fn process_batch(&mut self, batch: Vec<Record>) -> Result<StepReport> {
        let arrived = batch.len();
        let batch: Vec<Record> = match self.cfg.variant {
            Variant::Base => batch.into_iter().filter(Record::is_geotagged).collect(),
            _ => batch,
        };

        let removed = self.buffer.downsample(&self.emb)?;

        for r in &batch {
            for u in r.units() {
                self.emb.ensure_len(u.modality, u.row() + 1, &mut self.rng);
            }
            self.seen.observe_record(r);
        }
        let merged = batch.len();
        self.buffer.merge(batch);

        let trace = if merged > 0 {
            let sampler = NegativeSampler::new(&self.seen, self.cfg.neg_dist);
            let geo = GeotaggedIndex::build(self.buffer.records());
            let ctx = TrainContext {
                cfg: &self.cfg,
                sampler: &sampler,
                geo: &geo,
            };
            let trace = train_step(&self.buffer, merged, &mut self.emb, &ctx, &mut self.rng)?;
            self.emb.check_finite()?;
            trace
        } else {
            TrainTrace::default()
        };

        self.steps += 1;
        Ok(StepReport {
            step: self.steps - 1,
            arrived,
            merged,
            removed,
            buffer_len: self.buffer.len(),
            trace,
        })
    }

    /// A persistable copy of the current state. The copy's region table is
    /// padded to cover the whole grid from its own RNG, so taking snapshots
    /// never changes the training run.
    pub fn snapshot(
        &self,
        grid: &GridSpec,
        tz_offset_min: i32,
        timestamp: i64,
    ) -> Result<Snapshot> {
        let mut embeddings = self.emb.clone();
        let mut pad_rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xd1b5_4a32_d192_ed03);
        embeddings.ensure_len(Modality::Region, grid.n_regions(), &mut pad_rng);
        let snap = Snapshot {
            timestamp,
            embeddings,
            grid: *grid,
            tz_offset_min,
        };
        snap.validate()?;
        Ok(snap)
    }

    pub fn has_unit(&self, u: UnitId) -> bool {
        self.seen.contains(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{HourId, RegionId};
    use crate::unit::{KeywordId, UserId};

    fn rec(i: u64, ts: i64, region: Option<u32>) -> Record {
        Record {
            arrival_index: i,
            timestamp: ts,
            hour: HourId((ts / 3600 % 24) as u16),
            region: region.map(RegionId),
            coords: None,
            keywords: vec![KeywordId(i as u32 % 3), KeywordId(3 + i as u32 % 2)],
            user: UserId(i as u32 % 4),
        }
    }

    #[test]
    fn grouping_by_step() {
        let rs = vec![
            rec(0, 0, None),
            rec(1, 3599, None),
            rec(2, 3600, None),
            rec(3, 9000, None),
        ];
        let g = group_by_step(rs, 3600);
        let shape: Vec<(i64, usize)> = g.iter().map(|(k, b)| (*k, b.len())).collect();
        assert_eq!(shape, [(0, 2), (1, 1), (2, 1)]);
    }

    #[test]
    fn base_variant_drops_ngtsm() {
        let cfg = TrainConfig {
            dim: 8,
            epochs: 2,
            variant: Variant::Base,
            ..TrainConfig::default()
        };
        let mut e = Engine::new(cfg).unwrap();
        let rep = e
            .process_batch(
                (0..10)
                    .map(|i| rec(i, 0, (i % 2 == 0).then_some(1)))
                    .collect(),
            )
            .unwrap();
        assert_eq!(rep.arrived, 10);
        assert_eq!(rep.merged, 5);
        assert!(e.buffer().records().iter().all(Record::is_geotagged));
    }

    #[test]
    fn full_variant_labels_ngtsm_from_same_user() {
        let cfg = TrainConfig {
            dim: 8,
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut e = Engine::new(cfg).unwrap();
        let rep = e
            .process_batch((0..20).map(|i| rec(i, 0, (i < 8).then_some(1))).collect())
            .unwrap();
        assert!(rep.trace.weak_labels > 0);
        assert_eq!(rep.buffer_len, 20);
    }

    #[test]
    fn same_seed_same_embeddings() {
        let run = || {
            let cfg = TrainConfig {
                dim: 8,
                epochs: 2,
                ..TrainConfig::default()
            };
            let mut e = Engine::new(cfg).unwrap();
            for s in 0..3 {
                e.process_batch(
                    (0..15)
                        .map(|i| {
                            rec(
                                s * 15 + i,
                                s as i64 * 3600,
                                (i % 3 != 0).then_some(i as u32 % 5),
                            )
                        })
                        .collect(),
                )
                .unwrap();
            }
            e.embeddings().clone()
        };
        assert_eq!(run(), run());
    }
}
