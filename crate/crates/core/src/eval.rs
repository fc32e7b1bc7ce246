//! Region and keyword retrieval by mean reciprocal rank.
//!
//! A query hides one unit of a record (its region, or one of its keywords)
//! and asks a method to rank the hidden unit among `M` random units of the
//! same modality, given the rest of the record. Queries come from windows in
//! the second half of the stream; each window is evaluated before any method
//! has seen it, and nothing after the last window is ever read.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::embed::{cosine, Embeddings};
use crate::engine::{group_by_step, Engine, StepReport};
use crate::error::{Error, Result};
use crate::ingest::Record;
use crate::tfidf::TfIdf;
use crate::train::{SeenUnits, TrainConfig, Variant};
use crate::unit::UnitId;

/// Expected MRR of a random ranking over `n` candidates, `H(n) / n`.
pub fn random_mrr(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum::<f64>() / n as f64
}

/// Thresholds for the region-frequency breakdown: `10^1, 10^1.5, ..., 10^4`.
pub const FREQUENCY_THRESHOLDS: [f64; 7] = [
    10.0,
    31.622_776_601_683_79,
    100.0,
    316.227_766_016_837_9,
    1_000.0,
    3_162.277_660_168_379,
    10_000.0,
];

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowSpec {
    /// This many distinct steps drawn from the second half of the stream.
    Random(usize),
    /// Explicit step keys (`floor(ts / step_secs)`).
    Steps(Vec<i64>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalConfig {
    pub m: usize,
    pub windows: WindowSpec,
    pub g: f64,
    pub seed: u64,
    pub step_secs: i64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            m: 10,
            windows: WindowSpec::Random(20),
            g: 0.5,
            seed: 0,
            step_secs: 3600,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        if !(self.g > 0.0 && self.g <= 1.0) {
            return Err(Error::Config(format!(
                "g must lie in (0, 1], got {}",
                self.g
            )));
        }
        if self.step_secs <= 0 {
            return Err(Error::Config("step must be positive".into()));
        }
        Ok(())
    }
}

/// Keep the location of exactly `floor(g * n)` uniformly chosen geotagged
/// records and strip it from the rest.
pub fn simulate_ngtsm(records: &[Record], g: f64, seed: u64) -> Vec<Record> {
    let geotagged: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_geotagged())
        .map(|(i, _)| i)
        .collect();
    let keep = ((g.clamp(0.0, 1.0) * geotagged.len() as f64) + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![false; records.len()];
    for j in sample(&mut rng, geotagged.len(), keep.min(geotagged.len())) {
        kept[geotagged[j]] = true;
    }
    records
        .iter()
        .zip(kept)
        .map(|(r, k)| {
            let mut r = r.clone();
            if !k {
                r.region = None;
                r.coords = None;
            }
            r
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Region,
    Keyword,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub task: Task,
    pub truth: UnitId,
    pub observed: Vec<UnitId>,
    pub pool: Vec<UnitId>,
    /// Times the truth unit was seen before the window.
    pub truth_count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QueryResult {
    pub task: Task,
    pub truth: UnitId,
    pub rank: usize,
    pub reciprocal: f64,
}

impl QueryResult {
    pub fn new(task: Task, truth: UnitId, rank: usize) -> Self {
        assert!(rank >= 1);
        QueryResult {
            task,
            truth,
            rank,
            reciprocal: 1.0 / rank as f64,
        }
    }
}

/// Pool scores sorted by descending score, ties by ascending unit id.
pub fn rank_candidate_pool(
    pool: &[UnitId],
    mut score: impl FnMut(UnitId) -> f64,
) -> Vec<(UnitId, f64)> {
    let mut scored: Vec<(UnitId, f64)> = pool.iter().map(|&c| (c, score(c))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

pub fn rank_of(ranked: &[(UnitId, f64)], truth: UnitId) -> usize {
    1 + ranked
        .iter()
        .position(|(u, _)| *u == truth)
        .expect("truth is in the pool")
}

pub fn mrr(results: &[QueryResult]) -> Option<f64> {
    if results.is_empty() {
        return None;
    }
    Some(results.iter().map(|r| r.reciprocal).sum::<f64>() / results.len() as f64)
}

/// Mean cosine between a candidate and the observed units. Units without a
/// row count as zero vectors.
pub fn mean_cosine(emb: &Embeddings, candidate: UnitId, observed: &[UnitId]) -> f64 {
    if observed.is_empty() || !emb.has(candidate) {
        return 0.0;
    }
    let c = emb.vector(candidate);
    let total: f64 = observed
        .iter()
        .filter(|o| emb.has(**o))
        .map(|&o| cosine(c, emb.vector(o)))
        .sum();
    total / observed.len() as f64
}

/// Something that learns from the stream and scores candidates.
pub trait Method {
    fn name(&self) -> String;
    fn observe(&mut self, batch: &[Record]) -> Result<()>;
    fn score(&self, candidate: UnitId, observed: &[UnitId]) -> f64;
}

pub struct UstarMethod {
    engine: Engine,
    reports: Vec<StepReport>,
}

impl UstarMethod {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        Ok(UstarMethod {
            engine: Engine::new(cfg)?,
            reports: Vec::new(),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn reports(&self) -> &[StepReport] {
        &self.reports
    }
}

impl Method for UstarMethod {
    fn name(&self) -> String {
        match self.engine.config().variant {
            Variant::Full => "ustar".into(),
            Variant::Base => "ustar-base".into(),
            Variant::Semi => "ustar-semi".into(),
        }
    }

    fn observe(&mut self, batch: &[Record]) -> Result<()> {
        let rep = self.engine.process_batch(batch.to_vec())?;
        self.reports.push(rep);
        Ok(())
    }

    fn score(&self, candidate: UnitId, observed: &[UnitId]) -> f64 {
        mean_cosine(self.engine.embeddings(), candidate, observed)
    }
}

impl Method for TfIdf {
    fn name(&self) -> String {
        if self.with_users() {
            "tfidf-user".into()
        } else {
            "tfidf".into()
        }
    }

    fn observe(&mut self, batch: &[Record]) -> Result<()> {
        for r in batch {
            TfIdf::observe(self, r);
        }
        Ok(())
    }

    fn score(&self, candidate: UnitId, observed: &[UnitId]) -> f64 {
        TfIdf::score(self, candidate, observed)
    }
}

/// Build the queries for one window from the units seen so far. The RNG
/// depends only on the seed and the step key, never on the methods.
pub fn build_queries(
    window: &[Record],
    seen: &SeenUnits,
    m: usize,
    seed: u64,
    step_key: i64,
) -> Vec<Query> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (step_key as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut out = Vec::new();
    for r in window {
        let Some(region) = r.region else { continue };
        let truth = UnitId::from(region);
        let mut observed = vec![UnitId::from(r.hour), UnitId::from(r.user)];
        observed.extend(r.keywords.iter().map(|&w| UnitId::from(w)));
        if let Some(q) = make_query(Task::Region, truth, observed, seen, m, &mut rng) {
            out.push(q);
        }

        if r.keywords.is_empty() {
            continue;
        }
        let pick = rng.random_range(0..r.keywords.len());
        let truth = UnitId::from(r.keywords[pick]);
        let mut observed = vec![
            UnitId::from(region),
            UnitId::from(r.hour),
            UnitId::from(r.user),
        ];
        observed.extend(
            r.keywords
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != pick)
                .map(|(_, &w)| UnitId::from(w)),
        );
        if let Some(q) = make_query(Task::Keyword, truth, observed, seen, m, &mut rng) {
            out.push(q);
        }
    }
    out
}

fn make_query(
    task: Task,
    truth: UnitId,
    observed: Vec<UnitId>,
    seen: &SeenUnits,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Query> {
    let universe = seen.list(truth.modality);
    if !seen.contains(truth) || universe.len() < m + 1 {
        return None;
    }
    let mut pool = vec![truth];
    while pool.len() < m + 1 {
        let c = UnitId::new(
            truth.modality,
            universe[rng.random_range(0..universe.len())],
        );
        if !pool.contains(&c) {
            pool.push(c);
        }
    }
    Some(Query {
        task,
        truth,
        observed,
        pool,
        truth_count: seen.count(truth),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowReport {
    pub step: i64,
    pub region_mrr: Option<f64>,
    pub keyword_mrr: Option<f64>,
    pub region_queries: usize,
    pub keyword_queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrequencyBucket {
    /// Region queries whose truth appeared fewer than this many times.
    pub threshold: f64,
    pub mrr: Option<f64>,
    pub queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodReport {
    pub name: String,
    pub region_mrr: Option<f64>,
    pub keyword_mrr: Option<f64>,
    pub windows: Vec<WindowReport>,
    pub frequency_buckets: Vec<FrequencyBucket>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub m: usize,
    pub g: f64,
    pub seed: u64,
    pub random_mrr: f64,
    pub windows: Vec<i64>,
    pub region_queries: usize,
    pub keyword_queries: usize,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }
}

/// Choose evaluation windows among the stream's step keys.
pub fn choose_windows(step_keys: &[i64], spec: &WindowSpec, seed: u64) -> Vec<i64> {
    match spec {
        WindowSpec::Steps(s) => {
            let mut s = s.clone();
            s.sort_unstable();
            s.dedup();
            s
        }
        WindowSpec::Random(n) => {
            let second = &step_keys[step_keys.len() / 2..];
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
            let mut keys: Vec<i64> = sample(&mut rng, second.len(), (*n).min(second.len()))
                .into_iter()
                .map(|i| second[i])
                .collect();
            keys.sort_unstable();
            keys
        }
    }
}

/// Evaluate `methods` on `truth` while they learn from `observed`, the same
/// records with some locations removed. Both must be in arrival order.
pub fn run_eval(
    truth: &[Record],
    observed: &[Record],
    cfg: &EvalConfig,
    methods: &mut [Box<dyn Method>],
) -> Result<EvalReport> {
    cfg.validate()?;
    if truth.len() != observed.len() {
        return Err(Error::Config(
            "truth and observed streams differ in length".into(),
        ));
    }
    let truth_steps = group_by_step(truth.iter().cloned(), cfg.step_secs);
    let observed_steps = group_by_step(observed.iter().cloned(), cfg.step_secs);
    let keys: Vec<i64> = truth_steps.iter().map(|(k, _)| *k).collect();
    let windows = choose_windows(&keys, &cfg.windows, cfg.seed);
    if windows.is_empty() {
        return Err(Error::InsufficientData("no evaluation windows".into()));
    }
    let last = *windows.last().expect("non-empty");

    let mut seen = SeenUnits::default();
    let mut results: Vec<Vec<(usize, Query, QueryResult)>> = vec![Vec::new(); methods.len()];
    let mut n_region = 0;
    let mut n_keyword = 0;

    for ((key, truth_batch), (_, observed_batch)) in truth_steps.iter().zip(&observed_steps) {
        if *key > last {
            break;
        }
        if let Ok(w) = windows.binary_search(key) {
            let queries = build_queries(truth_batch, &seen, cfg.m, cfg.seed, *key);
            for q in &queries {
                match q.task {
                    Task::Region => n_region += 1,
                    Task::Keyword => n_keyword += 1,
                }
            }
            for (method, out) in methods.iter().zip(results.iter_mut()) {
                for q in &queries {
                    let ranked = rank_candidate_pool(&q.pool, |c| method.score(c, &q.observed));
                    let rank = rank_of(&ranked, q.truth);
                    out.push((w, q.clone(), QueryResult::new(q.task, q.truth, rank)));
                }
            }
        }
        for r in observed_batch {
            seen.observe_record(r);
        }
        for method in methods.iter_mut() {
            method.observe(observed_batch)?;
        }
    }

    let method_reports = methods
        .iter()
        .zip(&results)
        .map(|(method, res)| summarize(method.name(), &windows, res))
        .collect();
    Ok(EvalReport {
        m: cfg.m,
        g: cfg.g,
        seed: cfg.seed,
        random_mrr: random_mrr(cfg.m + 1),
        windows,
        region_queries: n_region,
        keyword_queries: n_keyword,
        methods: method_reports,
    })
}

/// Mask locations with `cfg.g` and run [`run_eval`].
pub fn evaluate(
    records: &[Record],
    cfg: &EvalConfig,
    methods: &mut [Box<dyn Method>],
) -> Result<EvalReport> {
    let observed = simulate_ngtsm(records, cfg.g, cfg.seed);
    run_eval(records, &observed, cfg, methods)
}

fn summarize(name: String, windows: &[i64], res: &[(usize, Query, QueryResult)]) -> MethodReport {
    let of_task = |task: Task, filter: &dyn Fn(usize, &Query) -> bool| -> (Option<f64>, usize) {
        let rs: Vec<QueryResult> = res
            .iter()
            .filter(|(w, q, r)| r.task == task && filter(*w, q))
            .map(|(_, _, r)| *r)
            .collect();
        (mrr(&rs), rs.len())
    };
    let per_window = windows
        .iter()
        .enumerate()
        .map(|(i, &step)| {
            let (region_mrr, region_queries) = of_task(Task::Region, &|w, _| w == i);
            let (keyword_mrr, keyword_queries) = of_task(Task::Keyword, &|w, _| w == i);
            WindowReport {
                step,
                region_mrr,
                keyword_mrr,
                region_queries,
                keyword_queries,
            }
        })
        .collect();
    let frequency_buckets = FREQUENCY_THRESHOLDS
        .iter()
        .map(|&threshold| {
            let (mrr, queries) = of_task(Task::Region, &|_, q| (q.truth_count as f64) < threshold);
            FrequencyBucket {
                threshold,
                mrr,
                queries,
            }
        })
        .collect();
    MethodReport {
        name,
        region_mrr: of_task(Task::Region, &|_, _| true).0,
        keyword_mrr: of_task(Task::Keyword, &|_, _| true).0,
        windows: per_window,
        frequency_buckets,
    }
}

/// Convenience constructor for the baseline names accepted on the command line.
pub fn baseline(name: &str) -> Option<Box<dyn Method>> {
    match name {
        "tfidf" => Some(Box::new(TfIdf::new(false))),
        "tfidf-user" => Some(Box::new(TfIdf::new(true))),
        _ => None,
    }
}
