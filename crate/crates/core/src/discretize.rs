//! Regular lat/lon grids and hour-of-day binning.
//!
//! Grids use an equirectangular approximation: one degree of latitude is
//! [`METERS_PER_DEGREE`] meters and one degree of longitude shrinks by the
//! cosine of the bounding box's mid-latitude.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METERS_PER_DEGREE: f64 = 111_320.0;

const SECONDS_PER_HOUR: i64 = 3_600;
const SECONDS_PER_DAY: i64 = 86_400;

// Extents that are an exact multiple of the cell size still pick up a few ulps
// of error through the degree conversion.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HourId(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Self {
        BoundingBox {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    pub fn mid_lat(&self) -> f64 {
        0.5 * (self.lat_min + self.lat_max)
    }

    /// Tightest box around `points`, padded by `pad_frac` of each extent.
    pub fn from_points(
        points: impl IntoIterator<Item = (f64, f64)>,
        pad_frac: f64,
    ) -> Option<Self> {
        let mut it = points.into_iter();
        let (lat, lon) = it.next()?;
        let mut b = BoundingBox::new(lat, lat, lon, lon);
        for (lat, lon) in it {
            b.lat_min = b.lat_min.min(lat);
            b.lat_max = b.lat_max.max(lat);
            b.lon_min = b.lon_min.min(lon);
            b.lon_max = b.lon_max.max(lon);
        }
        // A single point (or a line) still needs a non-degenerate box.
        let pad_lat = ((b.lat_max - b.lat_min) * pad_frac).max(1e-4);
        let pad_lon = ((b.lon_max - b.lon_min) * pad_frac).max(1e-4);
        b.lat_min = (b.lat_min - pad_lat).max(-90.0);
        b.lat_max = (b.lat_max + pad_lat).min(90.0);
        b.lon_min = (b.lon_min - pad_lon).max(-180.0);
        b.lon_max = (b.lon_max + pad_lon).min(180.0);
        Some(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BoundingBox,
    pub cell_m: f64,
    pub n_rows: u32,
    pub n_cols: u32,
}

/// Result of [`GridSpec::locate`] for points outside the bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutOfBounds;

pub fn make_grid(bbox: BoundingBox, cell_m: f64) -> Result<GridSpec> {
    let BoundingBox {
        lat_min,
        lat_max,
        lon_min,
        lon_max,
    } = bbox;
    let finite = [lat_min, lat_max, lon_min, lon_max, cell_m]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::Grid("non-finite bounds or cell size".into()));
    }
    if cell_m <= 0.0 {
        return Err(Error::Grid(format!(
            "cell size must be positive, got {cell_m}"
        )));
    }
    if lat_min >= lat_max || lon_min >= lon_max {
        return Err(Error::Grid(format!(
            "degenerate bbox [{lat_min}, {lat_max}] x [{lon_min}, {lon_max}]"
        )));
    }
    if lat_min < -90.0 || lat_max > 90.0 || lon_min < -180.0 || lon_max > 180.0 {
        return Err(Error::Grid("bbox outside valid coordinate range".into()));
    }

    let ns_m = (lat_max - lat_min) * METERS_PER_DEGREE;
    let ew_m = (lon_max - lon_min) * meters_per_degree_lon(bbox.mid_lat());
    let n_rows = cells_along(ns_m, cell_m);
    let n_cols = cells_along(ew_m, cell_m);
    if (n_rows as u64) * (n_cols as u64) > u32::MAX as u64 {
        return Err(Error::Grid(format!(
            "{n_rows}x{n_cols} cells overflow region ids"
        )));
    }
    Ok(GridSpec {
        bbox,
        cell_m,
        n_rows,
        n_cols,
    })
}

fn meters_per_degree_lon(mid_lat: f64) -> f64 {
    METERS_PER_DEGREE * mid_lat.to_radians().cos()
}

fn cells_along(extent_m: f64, cell_m: f64) -> u32 {
    ((extent_m / cell_m - CEIL_SLACK).ceil().max(1.0)) as u32
}

impl GridSpec {
    pub fn n_regions(&self) -> usize {
        self.n_rows as usize * self.n_cols as usize
    }

    fn lat_step(&self) -> f64 {
        self.cell_m / METERS_PER_DEGREE
    }

    fn lon_step(&self) -> f64 {
        self.cell_m / meters_per_degree_lon(self.bbox.mid_lat())
    }

    pub fn region_of(&self, row: u32, col: u32) -> RegionId {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        RegionId(row * self.n_cols + col)
    }

    pub fn row_col(&self, region: RegionId) -> (u32, u32) {
        (region.0 / self.n_cols, region.0 % self.n_cols)
    }

    pub fn locate(&self, lat: f64, lon: f64) -> Result<RegionId, OutOfBounds> {
        if !self.bbox.contains(lat, lon) {
            return Err(OutOfBounds);
        }
        let row = ((lat - self.bbox.lat_min) / self.lat_step()).floor() as u32;
        let col = ((lon - self.bbox.lon_min) / self.lon_step()).floor() as u32;
        Ok(self.region_of(row.min(self.n_rows - 1), col.min(self.n_cols - 1)))
    }

    /// Cell bounds `(lat_lo, lat_hi, lon_lo, lon_hi)`, clipped to the bbox
    /// (the last row/column may be partial).
    pub fn cell_bounds(&self, region: RegionId) -> (f64, f64, f64, f64) {
        let (row, col) = self.row_col(region);
        let b = &self.bbox;
        let lat_lo = b.lat_min + row as f64 * self.lat_step();
        let lon_lo = b.lon_min + col as f64 * self.lon_step();
        let lat_hi = (lat_lo + self.lat_step()).min(b.lat_max);
        let lon_hi = (lon_lo + self.lon_step()).min(b.lon_max);
        (lat_lo, lat_hi, lon_lo, lon_hi)
    }

    pub fn centroid(&self, region: RegionId) -> (f64, f64) {
        let (lat_lo, lat_hi, lon_lo, lon_hi) = self.cell_bounds(region);
        (0.5 * (lat_lo + lat_hi), 0.5 * (lon_lo + lon_hi))
    }
}

/// Hour-of-day (0..24) of a UTC epoch timestamp shifted by `tz_offset_min`.
pub fn hour_of(timestamp: i64, tz_offset_min: i32) -> HourId {
    let local = timestamp + tz_offset_min as i64 * 60;
    HourId((local.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_HOUR) as u16)
}

/// Time-bin vocabulary: plain hour-of-day (24) or day-of-week × hour (168).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBins(u16);

impl TimeBins {
    pub const HOUR_OF_DAY: TimeBins = TimeBins(24);
    pub const HOUR_OF_WEEK: TimeBins = TimeBins(168);

    pub fn new(bins: u16) -> Result<Self> {
        match bins {
            24 => Ok(Self::HOUR_OF_DAY),
            168 => Ok(Self::HOUR_OF_WEEK),
            other => Err(Error::Config(format!(
                "time_bins must be 24 or 168, got {other}"
            ))),
        }
    }

    pub fn count(self) -> usize {
        self.0 as usize
    }

    pub fn bin(self, timestamp: i64, tz_offset_min: i32) -> HourId {
        let hour = hour_of(timestamp, tz_offset_min);
        if self.0 == 24 {
            return hour;
        }
        let local = timestamp + tz_offset_min as i64 * 60;
        // 1970-01-01 was a Thursday; shift so Monday is day 0.
        let weekday = (local.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7);
        HourId(weekday as u16 * 24 + hour.0)
    }
}

impl Default for TimeBins {
    fn default() -> Self {
        Self::HOUR_OF_DAY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square_box(ns_m: f64, ew_m: f64) -> BoundingBox {
        let lat_min = -37.9;
        let dlat = ns_m / METERS_PER_DEGREE;
        // Iterate once so the mid-latitude used for longitude matches.
        let mid = lat_min + dlat / 2.0;
        let dlon = ew_m / meters_per_degree_lon(mid);
        BoundingBox::new(lat_min, lat_min + dlat, 144.9, 144.9 + dlon)
    }

    fn melbourne() -> GridSpec {
        make_grid(BoundingBox::new(-38.0, -37.6, 144.7, 145.2), 300.0).unwrap()
    }

    #[test]
    fn exact_division() {
        let g = make_grid(square_box(3000.0, 3000.0), 300.0).unwrap();
        assert_eq!((g.n_rows, g.n_cols), (10, 10));
        assert_eq!(g.n_regions(), 100);
    }

    #[test]
    fn ceil_on_partial_cell() {
        let g = make_grid(square_box(3001.0, 300.0), 300.0).unwrap();
        assert_eq!((g.n_rows, g.n_cols), (11, 1));
    }

    #[test]
    fn melbourne_rows() {
        // ceil(0.4 * 111320 / 300) = ceil(148.43)
        assert_eq!(melbourne().n_rows, 149);
        // ceil(0.5 * 111320 * cos(37.8deg) / 300)
        let expect = (0.5 * 111_320.0 * (37.8f64).to_radians().cos() / 300.0).ceil() as u32;
        assert_eq!(melbourne().n_cols, expect);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(make_grid(BoundingBox::new(1.0, 1.0, 0.0, 1.0), 300.0).is_err());
        assert!(make_grid(BoundingBox::new(0.0, 1.0, 2.0, 1.0), 300.0).is_err());
        assert!(make_grid(BoundingBox::new(0.0, 1.0, 0.0, 1.0), 0.0).is_err());
        assert!(make_grid(BoundingBox::new(0.0, f64::NAN, 0.0, 1.0), 300.0).is_err());
    }

    #[test]
    fn origin_and_max_corner() {
        let g = melbourne();
        assert_eq!(g.locate(-38.0, 144.7), Ok(RegionId(0)));
        assert_eq!(
            g.locate(-37.6, 145.2),
            Ok(RegionId((g.n_regions() - 1) as u32))
        );
        assert_eq!(g.locate(-38.01, 144.8), Err(OutOfBounds));
        assert_eq!(g.locate(-37.7, 145.3), Err(OutOfBounds));
    }

    #[test]
    fn table_one_location() {
        let g = melbourne();
        let r = g.locate(-37.8219, 144.9785).unwrap();
        let (row, col) = g.row_col(r);
        // floor(0.1781 * 111320 / 300) = floor(66.088...)
        assert_eq!(row, 66);
        // Independent route: walk east along the mid-latitude with a
        // haversine distance and count whole cells.
        let east_m = haversine_m(-37.8, 144.7, -37.8, 144.9785);
        // Haversine along a parallel and the equirectangular width agree to
        // far better than one cell at this scale.
        let approx_col = (east_m / 300.0).floor() as u32;
        assert!(
            (col as i64 - approx_col as i64).abs() <= 1,
            "{col} vs {approx_col}"
        );
        let north_m = haversine_m(-38.0, 144.9785, -37.8219, 144.9785);
        assert!((row as i64 - (north_m / 300.0).floor() as i64).abs() <= 1);
    }

    fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
        // Sphere whose meridian degree is 111,320 m.
        let radius = METERS_PER_DEGREE * 180.0 / std::f64::consts::PI;
        let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
        let dp = p2 - p1;
        let dl = (lon2 - lon1).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * radius * a.sqrt().asin()
    }

    #[test]
    fn hours() {
        // Table 1: Jan 16, 2017, 15:28:07 in Melbourne (UTC+11).
        let ts = 1_484_540_887;
        assert_eq!(hour_of(ts, 11 * 60), HourId(15));
        assert_eq!(hour_of(1_484_524_800, 0), HourId(0));
        assert_eq!(hour_of(1_484_524_800 + 86_399, 0), HourId(23));
        assert_eq!(hour_of(-1, 0), HourId(23));
    }

    #[test]
    fn week_bins() {
        // 2017-01-16 was a Monday.
        let monday_midnight = 1_484_524_800;
        assert_eq!(TimeBins::HOUR_OF_WEEK.bin(monday_midnight, 0), HourId(0));
        assert_eq!(
            TimeBins::HOUR_OF_WEEK.bin(monday_midnight + 6 * 86_400 + 23 * 3_600, 0),
            HourId(167)
        );
        assert!(TimeBins::new(25).is_err());
    }

    proptest! {
        #[test]
        fn hour_is_periodic(t in -10_000_000_000i64..10_000_000_000, tz in -720i32..840) {
            prop_assert_eq!(hour_of(t, tz), hour_of(t + 86_400, tz));
            prop_assert!(hour_of(t, tz).0 < 24);
        }

        #[test]
        fn locate_is_total_on_bbox(u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
            let g = melbourne();
            let b = g.bbox;
            let lat = b.lat_min + u * (b.lat_max - b.lat_min);
            let lon = b.lon_min + v * (b.lon_max - b.lon_min);
            let r = g.locate(lat, lon).unwrap();
            prop_assert!((r.0 as usize) < g.n_regions());
        }

        #[test]
        fn centroid_locates_back(idx in 0u32..22_499) {
            let g = melbourne();
            let r = RegionId(idx % g.n_regions() as u32);
            let (lat, lon) = g.centroid(r);
            prop_assert_eq!(g.locate(lat, lon), Ok(r));
        }
    }
}
