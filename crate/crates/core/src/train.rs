//! Attribute-recovery training with negative sampling.
//!
//! For a record `r` and one of its units `i`, the context `h_i` averages the
//! record's other modalities (keywords are first averaged among themselves):
//!
//! | target  | context                       |
//! |---------|-------------------------------|
//! | keyword | `(v_l + v_t + v_w' + v_u) / 4` |
//! | region  | `(v_t + v_w + v_u) / 3`        |
//! | hour    | `(v_l + v_w + v_u) / 3`        |
//! | user    | `(v_l + v_w + v_t) / 3`        |
//!
//! and the loss is `-ln σ(v_i·h) - Σ_k ln σ(-v_k·h)` over `K` negatives of
//! the target's modality. Every embedding plays both roles; there are no
//! separate input/output tables.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::Buffer;
use crate::discretize::RegionId;
use crate::embed::Embeddings;
use crate::error::{Error, Result};
use crate::geo::{AliasTable, GeotaggedIndex};
use crate::ingest::Record;
use crate::unit::{Modality, UnitId};
use crate::vecmath::{axpy, dot, neg_log_sigmoid, sigmoid};

/// Which learning variant to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Geotagged records plus weakly geolocated non-geotagged records.
    Full,
    /// Geotagged records only.
    Base,
    /// All records; non-geotagged ones train only their observed attributes.
    Semi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeDist {
    Uniform,
    /// Unigram counts raised to 0.75.
    Unigram75,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeoCache {
    /// Infer again every time a record is drawn.
    None,
    /// One inference per record per stream step.
    PerStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub eta: f32,
    pub epochs: usize,
    pub negatives: usize,
    pub tau: f64,
    pub c_u: f64,
    pub seed: u64,
    pub variant: Variant,
    pub neg_dist: NegativeDist,
    pub geo_cache: GeoCache,
    pub cache_z: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 300,
            eta: 0.05,
            epochs: 50,
            negatives: 5,
            tau: 1.0,
            c_u: 0.1,
            seed: 0,
            variant: Variant::Full,
            neg_dist: NegativeDist::Uniform,
            geo_cache: GeoCache::None,
            cache_z: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be positive")));
        if self.dim == 0 {
            return bad("k");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta");
        }
        if self.epochs == 0 {
            return bad("epochs");
        }
        if self.negatives == 0 {
            return bad("neg_k");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau");
        }
        if !(self.c_u > 0.0 && self.c_u.is_finite()) {
            return bad("c_u");
        }
        Ok(())
    }
}

/// What stands in for `v_l` when building a context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocationSlot {
    /// The record's own region or a weak label for it.
    Region(RegionId),
    /// No region available; `v_l` contributes the zero vector.
    Zero,
}

/// Weighted context units whose sum is `h` for `target`.
pub fn context_terms(
    record: &Record,
    target: UnitId,
    location: LocationSlot,
) -> Result<Vec<(UnitId, f32)>> {
    let in_record = match target.modality {
        Modality::Region => location == LocationSlot::Region(RegionId(target.index)),
        Modality::Hour => target == UnitId::from(record.hour),
        Modality::User => target == UnitId::from(record.user),
        Modality::Keyword => record.keywords.iter().any(|&w| UnitId::from(w) == target),
    };
    if !in_record {
        return Err(Error::TargetNotInRecord);
    }

    let denom = if target.modality == Modality::Keyword {
        4.0
    } else {
        3.0
    };
    let mut terms = Vec::with_capacity(3 + record.keywords.len());
    let mut push = |u: UnitId, w: f32| terms.push((u, w / denom));

    if target.modality != Modality::Region {
        if let LocationSlot::Region(r) = location {
            push(r.into(), 1.0);
        }
    }
    if target.modality != Modality::Hour {
        push(record.hour.into(), 1.0);
    }
    if target.modality != Modality::User {
        push(record.user.into(), 1.0);
    }
    let others = record
        .keywords
        .iter()
        .filter(|&&w| UnitId::from(w) != target)
        .count();
    if others > 0 {
        let share = 1.0 / others as f32;
        for &w in &record.keywords {
            if UnitId::from(w) != target {
                push(w.into(), share);
            }
        }
    }
    Ok(terms)
}

/// `h` for `target` using the record's own region.
pub fn context_vector(record: &Record, target: UnitId, emb: &Embeddings) -> Result<Vec<f32>> {
    let location = match record.region {
        Some(r) => LocationSlot::Region(r),
        None if target.modality == Modality::Region => return Err(Error::TargetNotInRecord),
        None => return Err(Error::MissingRegion),
    };
    let mut h = vec![0.0; emb.dim()];
    for (u, w) in context_terms(record, target, location)? {
        axpy(w, emb.vector(u), &mut h);
    }
    Ok(h)
}

/// One positive/negative prediction problem.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub target: UnitId,
    pub negatives: Vec<UnitId>,
    pub context: Vec<(UnitId, f32)>,
}

/// Loss of a plan under the current embeddings.
pub fn plan_loss(emb: &Embeddings, plan: &StepPlan) -> f32 {
    let mut h = vec![0.0; emb.dim()];
    for &(u, w) in &plan.context {
        axpy(w, emb.vector(u), &mut h);
    }
    let mut loss = neg_log_sigmoid(dot(emb.vector(plan.target), &h));
    for &k in &plan.negatives {
        loss += neg_log_sigmoid(-dot(emb.vector(k), &h));
    }
    loss
}

/// Reusable buffers for [`apply_plan`].
#[derive(Clone, Debug, Default)]
pub struct Scratch {
    h: Vec<f32>,
    grad_h: Vec<f32>,
    neg_coef: Vec<f32>,
}

/// Loss and per-row gradients `(unit, dL/dv)`, rows merged when a unit
/// plays more than one role.
pub fn plan_gradients(emb: &Embeddings, plan: &StepPlan) -> (f32, Vec<(UnitId, Vec<f32>)>) {
    let mut s = Scratch::default();
    let (loss, pos_coef) = forward(emb, plan, &mut s);
    let mut rows: Vec<(UnitId, Vec<f32>)> = Vec::new();
    let mut add = |u: UnitId, alpha: f32, x: &[f32]| {
        let idx = match rows.iter().position(|(v, _)| *v == u) {
            Some(i) => i,
            None => {
                rows.push((u, vec![0.0; x.len()]));
                rows.len() - 1
            }
        };
        axpy(alpha, x, &mut rows[idx].1);
    };
    add(plan.target, pos_coef, &s.h);
    for (&k, &c) in plan.negatives.iter().zip(&s.neg_coef) {
        add(k, c, &s.h);
    }
    for &(u, w) in &plan.context {
        add(u, w, &s.grad_h);
    }
    (loss, rows)
}

/// Fills `h`, `grad_h` and negative coefficients from the current
/// embeddings. Returns the loss and the target's gradient coefficient.
fn forward(emb: &Embeddings, plan: &StepPlan, s: &mut Scratch) -> (f32, f32) {
    let dim = emb.dim();
    s.h.clear();
    s.h.resize(dim, 0.0);
    for &(u, w) in &plan.context {
        axpy(w, emb.vector(u), &mut s.h);
    }
    s.grad_h.clear();
    s.grad_h.resize(dim, 0.0);
    s.neg_coef.clear();

    let target = emb.vector(plan.target);
    let score = dot(target, &s.h);
    let mut loss = neg_log_sigmoid(score);
    let pos_coef = sigmoid(score) - 1.0;
    axpy(pos_coef, target, &mut s.grad_h);
    for &k in &plan.negatives {
        let vk = emb.vector(k);
        let score = dot(vk, &s.h);
        loss += neg_log_sigmoid(-score);
        let c = sigmoid(score);
        s.neg_coef.push(c);
        axpy(c, vk, &mut s.grad_h);
    }
    (loss, pos_coef)
}

/// One SGD step on `plan` with rate `eta`. All gradients are taken at the
/// pre-update point. Returns the pre-update loss.
pub fn apply_plan(emb: &mut Embeddings, plan: &StepPlan, eta: f32, s: &mut Scratch) -> f32 {
    let (loss, pos_coef) = forward(emb, plan, s);
    axpy(-eta * pos_coef, &s.h, emb.vector_mut(plan.target));
    for (&k, &c) in plan.negatives.iter().zip(&s.neg_coef) {
        axpy(-eta * c, &s.h, emb.vector_mut(k));
    }
    for &(u, w) in &plan.context {
        axpy(-eta * w, &s.grad_h, emb.vector_mut(u));
    }
    loss
}

/// Units the trainer has observed, per modality. Negatives are drawn from here.
#[derive(Clone, Debug, Default)]
pub struct SeenUnits {
    lists: [Vec<u32>; 4],
    counts: [Vec<u64>; 4],
}

impl SeenUnits {
    pub fn observe(&mut self, u: UnitId) {
        let m = u.modality.index();
        let i = u.row();
        if self.counts[m].len() <= i {
            self.counts[m].resize(i + 1, 0);
        }
        if self.counts[m][i] == 0 {
            self.lists[m].push(u.index);
        }
        self.counts[m][i] += 1;
    }

    pub fn observe_record(&mut self, r: &Record) {
        for u in r.units() {
            self.observe(u);
        }
    }

    pub fn list(&self, m: Modality) -> &[u32] {
        &self.lists[m.index()]
    }

    pub fn count(&self, u: UnitId) -> u64 {
        self.counts[u.modality.index()]
            .get(u.row())
            .copied()
            .unwrap_or(0)
    }

    pub fn contains(&self, u: UnitId) -> bool {
        self.count(u) > 0
    }
}

/// Draws negatives for each modality from the seen units.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    pools: [Vec<u32>; 4],
    tables: [Option<AliasTable>; 4],
}

impl NegativeSampler {
    pub fn new(seen: &SeenUnits, dist: NegativeDist) -> Self {
        let pools = Modality::ALL.map(|m| seen.list(m).to_vec());
        let tables = Modality::ALL.map(|m| match dist {
            NegativeDist::Uniform => None,
            NegativeDist::Unigram75 => {
                let ws: Vec<f64> = seen
                    .list(m)
                    .iter()
                    .map(|&i| (seen.count(UnitId::new(m, i)) as f64).powf(0.75))
                    .collect();
                AliasTable::new(&ws).ok()
            }
        });
        NegativeSampler { pools, tables }
    }

    pub fn pool(&self, m: Modality) -> &[u32] {
        &self.pools[m.index()]
    }

    /// Up to `k` negatives of `target`'s modality, never the target itself.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        target: UnitId,
        k: usize,
        rng: &mut R,
        out: &mut Vec<UnitId>,
    ) {
        out.clear();
        let m = target.modality.index();
        let pool = &self.pools[m];
        let others = pool.len() - pool.contains(&target.index) as usize;
        let k = if others < k {
            warn_small_vocab(target.modality, pool.len(), k);
            others
        } else {
            k
        };
        while out.len() < k {
            let idx = match &self.tables[m] {
                Some(t) => t.sample(rng),
                None => rng.random_range(0..pool.len()),
            };
            let cand = pool[idx];
            if cand != target.index {
                out.push(UnitId::new(target.modality, cand));
            }
        }
    }
}

fn warn_small_vocab(m: Modality, size: usize, k: usize) {
    use std::sync::atomic::{AtomicBool, Ordering};
    static WARNED: [AtomicBool; 4] = [const { AtomicBool::new(false) }; 4];
    if !WARNED[m.index()].swap(true, Ordering::Relaxed) {
        warn!("{m} vocabulary has {size} unit(s); drawing fewer than {k} negatives");
    }
}

/// Units that take a turn as target for a record with the given location.
pub fn targets(record: &Record, location: LocationSlot) -> impl Iterator<Item = UnitId> + '_ {
    let region = match location {
        LocationSlot::Region(r) => Some(UnitId::from(r)),
        LocationSlot::Zero => None,
    };
    region
        .into_iter()
        .chain([UnitId::from(record.hour), UnitId::from(record.user)])
        .chain(record.keywords.iter().map(|&w| UnitId::from(w)))
}

/// Draw negatives for `target` and take one SGD step. Returns the pre-update loss.
#[allow(clippy::too_many_arguments)]
pub fn sgd_step<R: Rng + ?Sized>(
    record: &Record,
    target: UnitId,
    location: LocationSlot,
    emb: &mut Embeddings,
    sampler: &NegativeSampler,
    cfg: &TrainConfig,
    rng: &mut R,
    scratch: &mut Scratch,
) -> Result<f32> {
    let mut negatives = Vec::with_capacity(cfg.negatives);
    sampler.draw(target, cfg.negatives, rng, &mut negatives);
    let plan = StepPlan {
        target,
        negatives,
        context: context_terms(record, target, location)?,
    };
    Ok(apply_plan(emb, &plan, cfg.eta, scratch))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    /// Mean loss per SGD step, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    pub sgd_steps: usize,
    pub weak_labels: usize,
    pub unlabeled: usize,
}

/// Everything a training pass needs besides the buffer and embeddings.
pub struct TrainContext<'a> {
    pub cfg: &'a TrainConfig,
    pub sampler: &'a NegativeSampler,
    pub geo: &'a GeotaggedIndex,
}

/// Run `cfg.epochs` epochs, each drawing `draws` records uniformly from the
/// buffer and recovering every unit of each.
pub fn train_step<R: Rng + ?Sized>(
    buffer: &Buffer,
    draws: usize,
    emb: &mut Embeddings,
    ctx: &TrainContext<'_>,
    rng: &mut R,
) -> Result<TrainTrace> {
    let cfg = ctx.cfg;
    let mut trace = TrainTrace::default();
    let mut scratch = Scratch::default();
    let mut cache: std::collections::HashMap<u64, Option<RegionId>> = Default::default();

    for _ in 0..cfg.epochs {
        let mut total = 0.0f64;
        let mut steps = 0usize;
        for _ in 0..draws {
            let record = buffer.sample_uniform(rng)?;
            let location = match record.region {
                Some(r) => LocationSlot::Region(r),
                None => {
                    let weak = match cfg.variant {
                        Variant::Semi => None,
                        _ if cfg.geo_cache == GeoCache::PerStep => *cache
                            .entry(record.arrival_index)
                            .or_insert_with(|| ctx.geo.infer(record.user, emb, cfg.c_u, rng)),
                        _ => ctx.geo.infer(record.user, emb, cfg.c_u, rng),
                    };
                    match weak {
                        Some(r) => {
                            trace.weak_labels += 1;
                            LocationSlot::Region(r)
                        }
                        None => {
                            trace.unlabeled += 1;
                            LocationSlot::Zero
                        }
                    }
                }
            };
            let units: Vec<UnitId> = targets(record, location).collect();
            for target in units {
                total += sgd_step(
                    record,
                    target,
                    location,
                    emb,
                    ctx.sampler,
                    cfg,
                    rng,
                    &mut scratch,
                )? as f64;
                steps += 1;
            }
        }
        let mean = if steps == 0 {
            0.0
        } else {
            total / steps as f64
        };
        if !mean.is_finite() {
            return Err(Error::NonFinite {
                modality: "loss",
                row: trace.epoch_losses.len(),
            });
        }
        trace.epoch_losses.push(mean);
        trace.sgd_steps += steps;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::HourId;
    use crate::unit::{KeywordId, UserId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn emb_with(dim: usize, seed: u64) -> Embeddings {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = Embeddings::new(dim);
        for m in Modality::ALL {
            e.ensure_len(m, 24, &mut rng);
        }
        e
    }

    fn rec(region: Option<u32>, keywords: &[u32]) -> Record {
        Record {
            arrival_index: 0,
            timestamp: 1,
            hour: HourId(3),
            region: region.map(RegionId),
            coords: None,
            keywords: keywords.iter().map(|&k| KeywordId(k)).collect(),
            user: UserId(2),
        }
    }

    #[test]
    fn single_keyword_region_context() {
        let e = emb_with(5, 1);
        let r = rec(Some(4), &[7]);
        let h = context_vector(&r, RegionId(4).into(), &e).unwrap();
        assert_eq!(h.len(), 5);
        for (d, got) in h.iter().enumerate() {
            let want = (e.vector(HourId(3).into())[d]
                + e.vector(KeywordId(7).into())[d]
                + e.vector(UserId(2).into())[d])
                / 3.0;
            assert!((got - want).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_context_gives_zero_h() {
        let mut e = emb_with(4, 1);
        for m in Modality::ALL {
            let n = e.len(m);
            for i in 0..n {
                e.vector_mut(UnitId::new(m, i as u32)).fill(0.0);
            }
        }
        let h = context_vector(&rec(Some(1), &[1, 2]), KeywordId(1).into(), &e).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn other_keyword_mean_excludes_target() {
        let r = rec(Some(1), &[5, 6]);
        let terms =
            context_terms(&r, KeywordId(5).into(), LocationSlot::Region(RegionId(1))).unwrap();
        assert!(terms.contains(&(KeywordId(6).into(), 0.25)));
        assert!(!terms.iter().any(|(u, _)| *u == UnitId::from(KeywordId(5))));
        // Sole keyword: its own slot is the zero vector, denominator stays 4.
        let solo = rec(Some(1), &[5]);
        let terms = context_terms(
            &solo,
            KeywordId(5).into(),
            LocationSlot::Region(RegionId(1)),
        )
        .unwrap();
        assert_eq!(terms.len(), 3);
        assert!(terms.iter().all(|(_, w)| *w == 0.25));
    }

    #[test]
    fn missing_region_errors() {
        let e = emb_with(4, 1);
        let r = rec(None, &[1]);
        assert!(matches!(
            context_vector(&r, HourId(3).into(), &e),
            Err(Error::MissingRegion)
        ));
        assert!(matches!(
            context_vector(&rec(Some(1), &[1]), KeywordId(9).into(), &e),
            Err(Error::TargetNotInRecord)
        ));
        // The zero slot drops v_l.
        let terms = context_terms(&r, HourId(3).into(), LocationSlot::Zero).unwrap();
        assert!(terms.iter().all(|(u, _)| u.modality != Modality::Region));
    }

    #[test]
    fn loss_at_zero_scores() {
        let mut e = emb_with(4, 1);
        let plan = StepPlan {
            target: UnitId::new(Modality::User, 2),
            negatives: (3..8).map(|i| UnitId::new(Modality::User, i)).collect(),
            context: vec![(UnitId::new(Modality::Hour, 0), 1.0)],
        };
        e.vector_mut(UnitId::new(Modality::Hour, 0)).fill(0.0);
        assert!((plan_loss(&e, &plan) - 4.158_883).abs() < 1e-5);
    }

    #[test]
    fn apply_matches_gradient_step_and_is_local() {
        let mut e = emb_with(6, 9);
        let r = rec(Some(1), &[1, 2, 3]);
        let plan = StepPlan {
            target: KeywordId(1).into(),
            // Keyword 2 is both a negative and a context unit.
            negatives: vec![
                KeywordId(2).into(),
                KeywordId(9).into(),
                KeywordId(9).into(),
            ],
            context: context_terms(&r, KeywordId(1).into(), LocationSlot::Region(RegionId(1)))
                .unwrap(),
        };
        let before = e.clone();
        let (loss, grads) = plan_gradients(&e, &plan);
        let eta = 0.05;
        let got = apply_plan(&mut e, &plan, eta, &mut Scratch::default());
        assert_eq!(loss, got);
        for (u, g) in &grads {
            for (d, gd) in g.iter().enumerate() {
                let want = before.vector(*u)[d] - eta * gd;
                assert!((e.vector(*u)[d] - want).abs() < 1e-6);
            }
        }
        for m in Modality::ALL {
            for i in 0..e.len(m) {
                let u = UnitId::new(m, i as u32);
                if !grads.iter().any(|(v, _)| *v == u) {
                    assert_eq!(e.vector(u), before.vector(u), "{u} changed");
                }
            }
        }
    }

    #[test]
    fn negatives_exclude_target_and_shrink_for_tiny_vocab() {
        let mut seen = SeenUnits::default();
        for i in 0..3 {
            seen.observe(UnitId::new(Modality::Region, i));
        }
        let s = NegativeSampler::new(&seen, NegativeDist::Uniform);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::new();
        s.draw(RegionId(1).into(), 5, &mut rng, &mut out);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|u| u.index != 1));
        let s = NegativeSampler::new(&seen, NegativeDist::Unigram75);
        s.draw(RegionId(0).into(), 1, &mut rng, &mut out);
        assert_eq!(out.len(), 1);
        assert_ne!(out[0].index, 0);
    }

    #[test]
    fn one_record_one_keyword_takes_four_steps() {
        let mut e = emb_with(8, 2);
        let r = rec(Some(4), &[7]);
        let mut seen = SeenUnits::default();
        seen.observe_record(&r);
        let mut buf = Buffer::new(1.0, 0);
        buf.merge([r]);
        let cfg = TrainConfig {
            dim: 8,
            epochs: 1,
            ..TrainConfig::default()
        };
        let sampler = NegativeSampler::new(&seen, cfg.neg_dist);
        let geo = GeotaggedIndex::build(buf.records());
        let ctx = TrainContext {
            cfg: &cfg,
            sampler: &sampler,
            geo: &geo,
        };
        let trace = train_step(&buf, 1, &mut e, &ctx, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(trace.sgd_steps, 4);
    }

    #[test]
    fn uninferable_ngtsm_skips_region_target() {
        let mut e = emb_with(8, 2);
        let r = rec(None, &[7, 8]);
        let mut seen = SeenUnits::default();
        seen.observe_record(&r);
        let mut buf = Buffer::new(1.0, 0);
        buf.merge([r]);
        let cfg = TrainConfig {
            dim: 8,
            epochs: 3,
            ..TrainConfig::default()
        };
        let sampler = NegativeSampler::new(&seen, cfg.neg_dist);
        let geo = GeotaggedIndex::build(buf.records());
        let ctx = TrainContext {
            cfg: &cfg,
            sampler: &sampler,
            geo: &geo,
        };
        let trace = train_step(&buf, 2, &mut e, &ctx, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // hour, user and two keywords per draw; never the region.
        assert_eq!(trace.sgd_steps, 3 * 2 * 4);
        assert_eq!(trace.unlabeled, 6);
        assert_eq!(trace.weak_labels, 0);
    }

    #[test]
    fn repeated_steps_raise_positive_score() {
        let mut e = emb_with(16, 4);
        let r = rec(Some(4), &[7, 8]);
        let location = LocationSlot::Region(RegionId(4));
        let target: UnitId = KeywordId(7).into();
        let plan = StepPlan {
            target,
            negatives: vec![KeywordId(1).into(), KeywordId(2).into()],
            context: context_terms(&r, target, location).unwrap(),
        };
        let score = |e: &Embeddings| {
            let mut h = vec![0.0; 16];
            for &(u, w) in &plan.context {
                axpy(w, e.vector(u), &mut h);
            }
            sigmoid(dot(e.vector(target), &h))
        };
        let mut s = Scratch::default();
        let start = score(&e);
        let mut trail = Vec::new();
        for _ in 0..400 {
            apply_plan(&mut e, &plan, 0.5, &mut s);
            trail.push(score(&e));
        }
        assert!(
            trail.last().unwrap() > &0.95,
            "{start} -> {:?}",
            trail.last()
        );
        assert!(trail.windows(50).all(|w| w[49] >= w[0]));
    }
}
