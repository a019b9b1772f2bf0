//! Latitude/longitude grid over discs and points.
//!
//! An entry is registered in every cell its bounding box touches, so a point
//! lookup only needs the probe's own cell. Every candidate is confirmed with
//! the exact haversine distance before it is returned, which makes the answers
//! identical to a full scan.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;
use std::ops::RangeInclusive;

use thiserror::Error;

use crate::geo::{haversine_distance_m, BoundingBox, GeoPoint, EARTH_RADIUS_M};

pub const DEFAULT_CELL_SIZE_DEG: f64 = 0.001;

/// Entries covering more cells than this are kept in a side list that every
/// query scans.
const MAX_CELLS_PER_ENTRY: u64 = 4096;

/// Relative and absolute slack added to bounding boxes so rounding can never
/// drop a cell.
const BOX_SLACK_REL: f64 = 1e-9;
const BOX_SLACK_DEG: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("entry {0} is already indexed")]
    DuplicateId(String),
    #[error("entry {0} is not indexed")]
    UnknownId(String),
    #[error("radius must be finite and non-negative")]
    InvalidRadius,
    #[error("cell size must be in (0, 1] degrees")]
    InvalidCellSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub lat_cell: i64,
    pub lon_cell: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    point: GeoPoint,
    radius_m: f64,
}

/// Cells touched by a region: one latitude band range crossed with up to two
/// longitude ranges (two when the region wraps the antimeridian).
#[derive(Debug, Clone)]
struct Cover {
    lat: RangeInclusive<i64>,
    lon: Vec<RangeInclusive<i64>>,
}

impl Cover {
    fn cell_count(&self) -> u64 {
        let span = |r: &RangeInclusive<i64>| (r.end() - r.start() + 1).max(0) as u64;
        span(&self.lat) * self.lon.iter().map(span).sum::<u64>()
    }

    fn cells(&self) -> impl Iterator<Item = CellKey> + '_ {
        self.lat.clone().flat_map(move |lat_cell| {
            self.lon
                .iter()
                .flat_map(|r| r.clone())
                .map(move |lon_cell| CellKey { lat_cell, lon_cell })
        })
    }
}

#[derive(Debug, Clone)]
pub struct GridIndex<Id> {
    cell_size_deg: f64,
    cells: HashMap<CellKey, HashSet<Id>>,
    entries: HashMap<Id, Entry>,
    oversized: HashSet<Id>,
}

impl<Id> Default for GridIndex<Id>
where
    Id: Copy + Eq + Hash + Ord + std::fmt::Display,
{
    fn default() -> Self {
        Self::new(DEFAULT_CELL_SIZE_DEG).expect("default cell size is valid")
    }
}

impl<Id> GridIndex<Id>
where
    Id: Copy + Eq + Hash + Ord + std::fmt::Display,
{
    pub fn new(cell_size_deg: f64) -> Result<Self, IndexError> {
        if !(cell_size_deg.is_finite() && cell_size_deg > 0.0 && cell_size_deg <= 1.0) {
            return Err(IndexError::InvalidCellSize);
        }
        Ok(Self {
            cell_size_deg,
            cells: HashMap::new(),
            entries: HashMap::new(),
            oversized: HashSet::new(),
        })
    }

    pub fn cell_size_deg(&self) -> f64 {
        self.cell_size_deg
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: Id) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn get(&self, id: Id) -> Option<(GeoPoint, f64)> {
        self.entries.get(&id).map(|e| (e.point, e.radius_m))
    }

    pub fn ids(&self) -> impl Iterator<Item = Id> + '_ {
        self.entries.keys().copied()
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_of(&self, p: GeoPoint) -> CellKey {
        CellKey {
            lat_cell: self.lat_cell(p.latitude()),
            lon_cell: self.lon_cell(p.longitude()),
        }
    }

    pub fn insert(&mut self, id: Id, point: GeoPoint, radius_m: f64) -> Result<(), IndexError> {
        if !(radius_m.is_finite() && radius_m >= 0.0) {
            return Err(IndexError::InvalidRadius);
        }
        if self.entries.contains_key(&id) {
            return Err(IndexError::DuplicateId(id.to_string()));
        }
        let cover = self.disc_cover(point, radius_m);
        if cover.cell_count() > MAX_CELLS_PER_ENTRY {
            self.oversized.insert(id);
        } else {
            for key in cover.cells() {
                self.cells.entry(key).or_default().insert(id);
            }
        }
        self.entries.insert(id, Entry { point, radius_m });
        Ok(())
    }

    pub fn remove(&mut self, id: Id) -> Result<(), IndexError> {
        let entry = self
            .entries
            .remove(&id)
            .ok_or_else(|| IndexError::UnknownId(id.to_string()))?;
        if self.oversized.remove(&id) {
            return Ok(());
        }
        for key in self.disc_cover(entry.point, entry.radius_m).cells() {
            if let Some(set) = self.cells.get_mut(&key) {
                set.remove(&id);
                if set.is_empty() {
                    self.cells.remove(&key);
                }
            }
        }
        Ok(())
    }

    /// Ids of entries whose disc contains `p` (boundary inclusive), sorted.
    pub fn query_point(&self, p: GeoPoint) -> Vec<Id> {
        self.query_point_with_distance(p).into_iter().map(|(id, _)| id).collect()
    }

    /// Like [`GridIndex::query_point`], paired with the distance to each center.
    pub fn query_point_with_distance(&self, p: GeoPoint) -> Vec<(Id, f64)> {
        let key = self.cell_of(p);
        let in_cell = self.cells.get(&key).into_iter().flatten();
        let mut hits: Vec<(Id, f64)> = in_cell
            .chain(self.oversized.iter())
            .filter_map(|id| {
                let e = &self.entries[id];
                let d = haversine_distance_m(p, e.point);
                (d <= e.radius_m).then_some((*id, d))
            })
            .collect();
        hits.sort_by_key(|h| h.0);
        hits
    }

    /// Ids of entries whose stored point lies within `radius_m` of `center`
    /// (inclusive), sorted.
    pub fn query_disc(&self, center: GeoPoint, radius_m: f64) -> Vec<Id> {
        self.query_disc_with_distance(center, radius_m)
            .into_iter()
            .map(|(id, _)| id)
            .collect()
    }

    pub fn query_disc_with_distance(&self, center: GeoPoint, radius_m: f64) -> Vec<(Id, f64)> {
        if radius_m.is_nan() || radius_m < 0.0 {
            return Vec::new();
        }
        let cover = self.disc_cover(center, radius_m);
        let mut hits: Vec<(Id, f64)> = self
            .candidates(&cover)
            .into_iter()
            .filter_map(|id| {
                let d = haversine_distance_m(center, self.entries[&id].point);
                (d <= radius_m).then_some((id, d))
            })
            .collect();
        hits.sort_by_key(|h| h.0);
        hits
    }

    /// Entries whose bounding box touches `bbox`. Unconfirmed: callers apply
    /// their own exact test.
    pub fn candidates_in_box(&self, bbox: &BoundingBox) -> Vec<Id> {
        let lat = self.lat_cell(bbox.south)..=self.lat_cell(bbox.north);
        let lon = if bbox.crosses_antimeridian() {
            vec![
                self.lon_cell(bbox.west)..=self.max_lon_cell(),
                self.min_lon_cell()..=self.lon_cell(bbox.east),
            ]
        } else if bbox.east >= 180.0 {
            vec![self.lon_cell(bbox.west)..=self.max_lon_cell()]
        } else {
            vec![self.lon_cell(bbox.west)..=self.lon_cell(bbox.east)]
        };
        let mut ids = self.candidates(&Cover { lat, lon });
        ids.sort();
        ids
    }

    /// Nearest stored point to `p` among entries accepted by `keep`; ties go to
    /// the lowest id.
    pub fn nearest_where<F>(&self, p: GeoPoint, keep: F) -> Option<(Id, f64)>
    where
        F: Fn(Id) -> bool,
    {
        if self.entries.is_empty() {
            return None;
        }
        let max_m = std::f64::consts::PI * EARTH_RADIUS_M;
        let mut radius = (self.cell_size_deg.to_radians() * EARTH_RADIUS_M).min(max_m);
        loop {
            // every entry within `radius` is found, so the best of them is the global best
            let best = self
                .query_disc_with_distance(p, radius)
                .into_iter()
                .filter(|(id, _)| keep(*id))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            if best.is_some() || radius >= max_m {
                return best;
            }
            radius = (radius * 4.0).min(max_m);
        }
    }

    fn candidates(&self, cover: &Cover) -> Vec<Id> {
        if cover.cell_count() > self.entries.len() as u64 {
            return self.entries.keys().copied().collect();
        }
        let mut seen: HashSet<Id> = self.oversized.clone();
        for key in cover.cells() {
            if let Some(set) = self.cells.get(&key) {
                seen.extend(set.iter().copied());
            }
        }
        seen.into_iter().collect()
    }

    fn lat_cell(&self, lat: f64) -> i64 {
        (lat / self.cell_size_deg).floor() as i64
    }

    fn lon_cell(&self, lon: f64) -> i64 {
        let lon = crate::geo::normalize_longitude(lon);
        (lon / self.cell_size_deg).floor() as i64
    }

    fn min_lon_cell(&self) -> i64 {
        self.lon_cell(-180.0)
    }

    fn max_lon_cell(&self) -> i64 {
        (180.0f64.next_down() / self.cell_size_deg).floor() as i64
    }

    fn disc_cover(&self, center: GeoPoint, radius_m: f64) -> Cover {
        let angular = radius_m / EARTH_RADIUS_M;
        let dlat = angular.to_degrees() * (1.0 + BOX_SLACK_REL) + BOX_SLACK_DEG;
        let lat_lo = (center.latitude() - dlat).max(-90.0);
        let lat_hi = (center.latitude() + dlat).min(90.0);
        let lat = self.lat_cell(lat_lo)..=self.lat_cell(lat_hi);

        let phi = center.latitude().to_radians();
        let full = || vec![self.min_lon_cell()..=self.max_lon_cell()];
        let reaches_pole = angular >= std::f64::consts::FRAC_PI_2 - phi.abs() || lat_lo <= -90.0 || lat_hi >= 90.0;
        if reaches_pole {
            return Cover { lat, lon: full() };
        }
        // widest longitude offset of a spherical cap
        let dlon = (angular.sin() / phi.cos()).clamp(-1.0, 1.0).asin().to_degrees() * (1.0 + BOX_SLACK_REL)
            + BOX_SLACK_DEG;
        if dlon >= 180.0 {
            return Cover { lat, lon: full() };
        }
        let lo = center.longitude() - dlon;
        let hi = center.longitude() + dlon;
        let lon = if lo < -180.0 {
            vec![
                self.lon_cell(lo + 360.0)..=self.max_lon_cell(),
                self.min_lon_cell()..=self.lon_cell(hi),
            ]
        } else if hi >= 180.0 {
            vec![
                self.lon_cell(lo)..=self.max_lon_cell(),
                self.min_lon_cell()..=self.lon_cell(hi - 360.0),
            ]
        } else {
            vec![self.lon_cell(lo)..=self.lon_cell(hi)]
        };
        Cover { lat, lon }
    }
}
