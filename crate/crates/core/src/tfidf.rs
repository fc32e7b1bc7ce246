//! Co-occurrence TF-IDF retrieval baseline.
//!
//! For every ordered pair of modalities `(A, B)` the baseline keeps a count
//! matrix whose rows (units of `A`) are documents and whose columns (units of
//! `B`) are words. Weights use row-normalized term frequency and a smoothed
//! inverse document frequency, `ln((1 + N) / (1 + df)) + 1`, so a pair that
//! co-occurs in every row still carries weight.

use std::collections::HashMap;

use crate::ingest::Record;
use crate::unit::{Modality, UnitId};

#[derive(Clone, Debug, Default)]
struct PairMatrix {
    counts: HashMap<(u32, u32), u64>,
    row_totals: HashMap<u32, u64>,
    df: HashMap<u32, u64>,
}

impl PairMatrix {
    fn add(&mut self, a: u32, b: u32) {
        let c = self.counts.entry((a, b)).or_insert(0);
        if *c == 0 {
            *self.df.entry(b).or_insert(0) += 1;
        }
        *c += 1;
        *self.row_totals.entry(a).or_insert(0) += 1;
    }

    fn weight(&self, a: u32, b: u32) -> f64 {
        let Some(&c) = self.counts.get(&(a, b)) else {
            return 0.0;
        };
        let tf = c as f64 / self.row_totals[&a] as f64;
        let n = self.row_totals.len() as f64;
        let df = self.df[&b] as f64;
        tf * (((1.0 + n) / (1.0 + df)).ln() + 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct TfIdf {
    with_users: bool,
    pairs: HashMap<(Modality, Modality), PairMatrix>,
}

impl TfIdf {
    pub fn new(with_users: bool) -> Self {
        TfIdf {
            with_users,
            pairs: HashMap::new(),
        }
    }

    pub fn with_users(&self) -> bool {
        self.with_users
    }

    fn uses(&self, m: Modality) -> bool {
        self.with_users || m != Modality::User
    }

    pub fn observe(&mut self, r: &Record) {
        let units: Vec<UnitId> = r.units().filter(|u| self.uses(u.modality)).collect();
        for (i, a) in units.iter().enumerate() {
            for (j, b) in units.iter().enumerate() {
                if i != j {
                    self.pairs
                        .entry((a.modality, b.modality))
                        .or_default()
                        .add(a.index, b.index);
                }
            }
        }
    }

    /// Weight of word `b` in document `a`.
    pub fn weight(&self, a: UnitId, b: UnitId) -> f64 {
        self.pairs
            .get(&(a.modality, b.modality))
            .map_or(0.0, |m| m.weight(a.index, b.index))
    }

    /// Mean weight between `candidate` and each usable observed unit.
    pub fn score(&self, candidate: UnitId, observed: &[UnitId]) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for &o in observed.iter().filter(|o| self.uses(o.modality)) {
            total += self.weight(candidate, o);
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }
}
