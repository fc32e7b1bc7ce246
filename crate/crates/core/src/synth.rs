//! Seeded synthetic streams with planted cluster structure.
//!
//! Each cluster owns a rectangular block of grid cells, a keyword set, a peak
//! hour and a set of users. A record's cluster is drawn from the hour of its
//! timestamp; its user, region and keywords then come from that cluster
//! unless the record is noise, in which case region and keywords are uniform
//! over the whole grid and vocabulary.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretize::{make_grid, BoundingBox, GridSpec, RegionId};
use crate::error::{Error, Result};
use crate::ingest::{Content, RawRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_clusters: usize,
    pub users_per_cluster: usize,
    pub keywords_per_cluster: usize,
    pub records: usize,
    pub noise_rate: f64,
    /// Peak hour of each cluster; spread evenly over the day when empty.
    pub hour_profile: Vec<u16>,
    /// Height of a cluster's hour bump over the flat floor.
    pub hour_peak: f64,
    pub grid: GridSpec,
    /// Rows and columns of each cluster's block of cells.
    pub block: (u32, u32),
    /// Keywords each user favors, drawn from the cluster set.
    pub personal_keywords: usize,
    /// Chance that a keyword comes from the user's favorites.
    pub personal_rate: f64,
    /// Chance that a clean record sits in its user's home cell.
    pub home_rate: f64,
    pub min_keywords: usize,
    pub max_keywords: usize,
    /// Positions per day that each cluster's active keyword window slides
    /// through a longer cluster vocabulary.
    pub topic_drift: f64,
    /// Expected home moves per user per day; a move picks another cell of
    /// the user's block.
    pub relocation_rate: f64,
    pub start_ts: i64,
    pub span_secs: i64,
    /// Fraction of records that carry coordinates.
    pub g: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_clusters: 5,
            users_per_cluster: 40,
            keywords_per_cluster: 30,
            records: 50_000,
            noise_rate: 0.1,
            hour_profile: Vec::new(),
            hour_peak: 6.0,
            grid: default_grid(),
            block: (2, 10),
            personal_keywords: 5,
            personal_rate: 0.5,
            home_rate: 0.8,
            min_keywords: 2,
            max_keywords: 4,
            topic_drift: 2.0,
            relocation_rate: 0.5,
            start_ts: 1_483_228_800,
            span_secs: 7 * 24 * 3600,
            g: 1.0,
            seed: 7,
        }
    }
}

/// A 10 x 10 grid of 1 km cells on the equator.
pub fn default_grid() -> GridSpec {
    let side = 10.0 * 1000.0 / crate::discretize::METERS_PER_DEGREE;
    make_grid(BoundingBox::new(0.0, side, 0.0, side), 1000.0).expect("valid default grid")
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clusters", self.n_clusters),
            ("users per cluster", self.users_per_cluster),
            ("keywords per cluster", self.keywords_per_cluster),
            ("records", self.records),
            ("block rows", self.block.0 as usize),
            ("block columns", self.block.1 as usize),
            ("min keywords", self.min_keywords),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "noise rate must lie in [0, 0.5), got {}",
                self.noise_rate
            )));
        }
        if self.max_keywords < self.min_keywords || self.max_keywords > self.keywords_per_cluster {
            return Err(Error::Config(
                "keywords per record must fit in the cluster keyword set".into(),
            ));
        }
        if self.personal_keywords == 0 || self.personal_keywords > self.keywords_per_cluster {
            return Err(Error::Config(
                "personal keywords must be a non-empty subset of the cluster set".into(),
            ));
        }
        if !self.hour_profile.is_empty() && self.hour_profile.len() != self.n_clusters {
            return Err(Error::Config(
                "hour profile needs one peak per cluster".into(),
            ));
        }
        if !(self.topic_drift >= 0.0 && self.topic_drift.is_finite()) {
            return Err(Error::Config("topic drift must be non-negative".into()));
        }
        if !(self.relocation_rate >= 0.0 && self.relocation_rate.is_finite()) {
            return Err(Error::Config("relocation rate must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.g) {
            return Err(Error::Config(format!(
                "g must lie in [0, 1], got {}",
                self.g
            )));
        }
        if self.span_secs <= 0 {
            return Err(Error::Config("span must be positive".into()));
        }
        if self.block_origins().is_none() {
            return Err(Error::Config(format!(
                "{} blocks of {}x{} cells do not fit in a {}x{} grid",
                self.n_clusters, self.block.0, self.block.1, self.grid.n_rows, self.grid.n_cols
            )));
        }
        Ok(())
    }

    fn peaks(&self) -> Vec<f64> {
        if self.hour_profile.is_empty() {
            (0..self.n_clusters)
                .map(|c| c as f64 * 24.0 / self.n_clusters as f64)
                .collect()
        } else {
            self.hour_profile.iter().map(|&h| h as f64).collect()
        }
    }

    /// Top-left cell of each cluster's block, spread over the block tiling.
    fn block_origins(&self) -> Option<Vec<(u32, u32)>> {
        let (br, bc) = self.block;
        let tiles_r = self.grid.n_rows / br;
        let tiles_c = self.grid.n_cols / bc;
        let tiles = (tiles_r * tiles_c) as usize;
        if tiles < self.n_clusters {
            return None;
        }
        Some(
            (0..self.n_clusters)
                .map(|c| {
                    let t = (c * tiles / self.n_clusters) as u32;
                    ((t / tiles_c) * br, (t % tiles_c) * bc)
                })
                .collect(),
        )
    }

    fn drift_offset(&self, ts: i64) -> usize {
        ((ts - self.start_ts) as f64 / 86_400.0 * self.topic_drift).floor() as usize
    }

    /// Keywords each cluster uses over the whole span.
    pub fn cluster_vocabulary(&self) -> usize {
        self.keywords_per_cluster + self.drift_offset(self.start_ts + self.span_secs - 1)
    }

    pub fn cluster_regions(&self, cluster: usize) -> Vec<RegionId> {
        let (r0, c0) = self.block_origins().expect("validated")[cluster];
        let mut out = Vec::new();
        for r in r0..r0 + self.block.0 {
            for c in c0..c0 + self.block.1 {
                out.push(self.grid.region_of(r, c));
            }
        }
        out
    }
}

pub fn keyword_name(cluster: usize, i: usize) -> String {
    format!("c{cluster}w{i}")
}

pub fn user_name(cluster: usize, i: usize) -> String {
    format!("c{cluster}u{i}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordTruth {
    pub cluster: usize,
    pub region: RegionId,
    pub noise: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub name: String,
    pub cluster: usize,
    /// Home at the start of the stream.
    pub home: RegionId,
    /// `(timestamp, new home)` for every relocation.
    pub moves: Vec<(i64, RegionId)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub records: Vec<RecordTruth>,
    pub users: Vec<UserTruth>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub records: Vec<RawRecord>,
    pub truth: GroundTruth,
}

fn hour_weights(peaks: &[f64], hour: f64, height: f64) -> Vec<f64> {
    peaks
        .iter()
        .map(|&p| {
            let d = (hour - p).rem_euclid(24.0);
            let d = d.min(24.0 - d);
            1.0 + height * (-d * d / 8.0).exp()
        })
        .collect()
}

fn pick_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn point_in<R: Rng + ?Sized>(grid: &GridSpec, region: RegionId, rng: &mut R) -> (f64, f64) {
    let (lat0, lat1, lon0, lon1) = grid.cell_bounds(region);
    let inset = |a: f64, b: f64, u: f64| a + (b - a) * (0.05 + 0.9 * u);
    (
        inset(lat0, lat1, rng.random()),
        inset(lon0, lon1, rng.random()),
    )
}

pub fn generate(cfg: &SynthConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let grid = &cfg.grid;
    let n_regions = grid.n_regions();
    let peaks = cfg.peaks();
    let blocks: Vec<Vec<RegionId>> = (0..cfg.n_clusters)
        .map(|c| cfg.cluster_regions(c))
        .collect();

    struct User {
        cluster: usize,
        home: RegionId,
        favorites: Vec<usize>,
        last_seen: i64,
    }
    let mut users = Vec::new();
    let mut user_truth = Vec::new();
    for (c, block) in blocks.iter().enumerate() {
        for i in 0..cfg.users_per_cluster {
            let home = block[rng.random_range(0..block.len())];
            let favorites =
                sample(&mut rng, cfg.keywords_per_cluster, cfg.personal_keywords).into_vec();
            users.push(User {
                cluster: c,
                home,
                favorites,
                last_seen: cfg.start_ts,
            });
            user_truth.push(UserTruth {
                name: user_name(c, i),
                cluster: c,
                home,
                moves: Vec::new(),
            });
        }
    }

    let mut times: Vec<i64> = (0..cfg.records)
        .map(|_| cfg.start_ts + rng.random_range(0..cfg.span_secs))
        .collect();
    times.sort_unstable();

    let mut records = Vec::with_capacity(cfg.records);
    let mut record_truth = Vec::with_capacity(cfg.records);
    for ts in times {
        let hour = (ts.rem_euclid(86_400)) as f64 / 3600.0;
        let cluster = pick_weighted(&hour_weights(&peaks, hour, cfg.hour_peak), &mut rng);
        let ui = cluster * cfg.users_per_cluster + rng.random_range(0..cfg.users_per_cluster);
        let user = &mut users[ui];
        let days = (ts - user.last_seen) as f64 / 86_400.0;
        user.last_seen = ts;
        if cfg.relocation_rate > 0.0
            && rng.random::<f64>() < 1.0 - (-cfg.relocation_rate * days).exp()
        {
            let block = &blocks[user.cluster];
            if block.len() > 1 {
                let mut next = user.home;
                while next == user.home {
                    next = block[rng.random_range(0..block.len())];
                }
                user.home = next;
                user_truth[ui].moves.push((ts, next));
            }
        }
        let user = &users[ui];
        let noise = rng.random::<f64>() < cfg.noise_rate;
        let n_kw = rng.random_range(cfg.min_keywords..=cfg.max_keywords);
        let offset = cfg.drift_offset(ts);

        let (region, keywords) = if noise {
            let region = RegionId(rng.random_range(0..n_regions as u32));
            let total = cfg.n_clusters * cfg.keywords_per_cluster;
            let kws = sample(&mut rng, total, n_kw)
                .into_iter()
                .map(|k| {
                    keyword_name(
                        k / cfg.keywords_per_cluster,
                        offset + k % cfg.keywords_per_cluster,
                    )
                })
                .collect();
            (region, kws)
        } else {
            let block = &blocks[cluster];
            let region = if rng.random::<f64>() < cfg.home_rate {
                user.home
            } else {
                block[rng.random_range(0..block.len())]
            };
            let mut picked: Vec<usize> = Vec::with_capacity(n_kw);
            while picked.len() < n_kw {
                let k = if rng.random::<f64>() < cfg.personal_rate {
                    user.favorites[rng.random_range(0..user.favorites.len())]
                } else {
                    rng.random_range(0..cfg.keywords_per_cluster)
                };
                if !picked.contains(&k) {
                    picked.push(k);
                }
            }
            (
                region,
                picked
                    .into_iter()
                    .map(|k| keyword_name(cluster, offset + k))
                    .collect(),
            )
        };

        let location = (rng.random::<f64>() < cfg.g).then(|| point_in(grid, region, &mut rng));
        records.push(RawRecord {
            ts,
            location,
            user: user_truth[ui].name.clone(),
            content: Content::Keywords(keywords),
        });
        record_truth.push(RecordTruth {
            cluster: user.cluster,
            region,
            noise,
        });
    }

    Ok(Synthetic {
        records,
        truth: GroundTruth {
            records: record_truth,
            users: user_truth,
        },
    })
}

/// Replace the keywords of every record located in `region` with
/// `event_keywords` during `[start, start + len)`. Returns how many records
/// changed.
pub fn plant_event(
    records: &mut [RawRecord],
    grid: &GridSpec,
    region: RegionId,
    start: i64,
    len: i64,
    event_keywords: &[String],
) -> usize {
    let mut changed = 0;
    for r in records.iter_mut() {
        if r.ts < start || r.ts >= start + len {
            continue;
        }
        let Some((lat, lon)) = r.location else {
            continue;
        };
        if grid.locate(lat, lon) == Ok(region) {
            r.content = Content::Keywords(event_keywords.to_vec());
            changed += 1;
        }
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            records: 5_000,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_grid_is_ten_by_ten() {
        let g = default_grid();
        assert_eq!((g.n_rows, g.n_cols), (10, 10));
    }

    #[test]
    fn blocks_are_disjoint() {
        let cfg = SynthConfig::default();
        let mut all: Vec<RegionId> = (0..cfg.n_clusters)
            .flat_map(|c| cfg.cluster_regions(c))
            .collect();
        assert_eq!(all.len(), 100);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn cluster_marginal_follows_hour_profile() {
        let cfg = SynthConfig {
            n_clusters: 3,
            hour_profile: vec![2, 5, 18],
            records: 60_000,
            ..SynthConfig::default()
        };
        let s = generate(&cfg).unwrap();
        // Integrate the bump mixture over the day on a fine grid.
        let steps = 24 * 600;
        let mut expected = [0.0f64; 3];
        for i in 0..steps {
            let h = i as f64 * 24.0 / steps as f64;
            let w: Vec<f64> = [2.0f64, 5.0, 18.0]
                .iter()
                .map(|p| {
                    let d = (h - p).abs().min(24.0 - (h - p).abs());
                    1.0 + cfg.hour_peak * (-d * d / 8.0).exp()
                })
                .collect();
            let total: f64 = w.iter().sum();
            for c in 0..3 {
                expected[c] += w[c] / total / steps as f64;
            }
        }
        for (c, e) in expected.iter().enumerate() {
            let got = s.truth.records.iter().filter(|t| t.cluster == c).count() as f64 / 60_000.0;
            assert!((got - e).abs() < 0.02, "cluster {c}: {got} vs {e}");
        }
    }

    #[test]
    fn noiseless_records_are_pure() {
        let cfg = SynthConfig {
            n_clusters: 2,
            noise_rate: 0.0,
            ..small()
        };
        let s = generate(&cfg).unwrap();
        for (r, t) in s.records.iter().zip(&s.truth.records) {
            let (lat, lon) = r.location.unwrap();
            let region = cfg.grid.locate(lat, lon).unwrap();
            assert_eq!(region, t.region);
            assert!(cfg.cluster_regions(t.cluster).contains(&region));
            assert!(r.user.starts_with(&format!("c{}u", t.cluster)));
            let Content::Keywords(k) = &r.content else {
                panic!()
            };
            assert!(k.iter().all(|w| w.starts_with(&format!("c{}w", t.cluster))));
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthConfig { seed: 8, ..small() };
        assert_ne!(
            generate(&small()).unwrap().records,
            generate(&other).unwrap().records
        );
    }

    #[test]
    fn purity_tracks_noise_rate() {
        let s = generate(&SynthConfig {
            records: 50_000,
            ..SynthConfig::default()
        })
        .unwrap();
        let clean = s.truth.records.iter().filter(|t| !t.noise).count() as f64 / 50_000.0;
        assert!((clean - 0.9).abs() < 0.01, "{clean}");
    }

    #[test]
    fn partial_geotagging() {
        let s = generate(&SynthConfig { g: 0.3, ..small() }).unwrap();
        let frac = s.records.iter().filter(|r| r.location.is_some()).count() as f64 / 5_000.0;
        assert!((frac - 0.3).abs() < 0.03);
    }

    #[test]
    fn event_rewrites_only_its_region_and_window() {
        let cfg = small();
        let mut s = generate(&cfg).unwrap();
        let before = s.records.clone();
        let region = cfg.cluster_regions(0)[0];
        let start = cfg.start_ts + 3600 * 24;
        let ev = vec!["festival".to_string()];
        let n = plant_event(&mut s.records, &cfg.grid, region, start, 3600 * 10, &ev);
        assert!(n > 0);
        let mut changed = 0;
        for (a, b) in before.iter().zip(&s.records) {
            if a != b {
                changed += 1;
                assert!(b.ts >= start && b.ts < start + 36_000);
                assert_eq!(b.content, Content::Keywords(ev.clone()));
            }
        }
        assert!(changed <= n);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig {
            noise_rate: 0.5,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            n_clusters: 30,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            max_keywords: 40,
            ..small()
        })
        .is_err());
    }
}
