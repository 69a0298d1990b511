//! Spatial aggregation of validated hazards: equirectangular grid binning,
//! kernel smoothing, hotspot site extraction and GeoJSON export.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::domain::{GeoPoint, Timestamp};
use crate::scalar::Scalar;

/// Mean Earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("degenerate region: {0}")]
    DegenerateRegion(&'static str),
}

/// Great-circle distance in metres.
pub fn haversine<T: Scalar>(a: &GeoPoint<T>, b: &GeoPoint<T>) -> T {
    let to_rad = T::lit(std::f64::consts::PI / 180.0);
    let (lat1, lat2) = (a.lat() * to_rad, b.lat() * to_rad);
    let dlat = lat2 - lat1;
    let dlon = (b.lon() - a.lon()) * to_rad;
    let half = T::lit(0.5);
    let h = (dlat * half).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon * half).sin().powi(2);
    let h = h.clamp_to(T::zero(), T::one());
    T::lit(2.0 * EARTH_RADIUS_M) * h.sqrt().asin()
}

/// Latitude/longitude rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Region<T = f64> {
    pub lat_min: T,
    pub lat_max: T,
    pub lon_min: T,
    pub lon_max: T,
}

impl Region {
    /// Bounding box of Mallorca.
    pub fn mallorca() -> Self {
        Region {
            lat_min: 39.25,
            lat_max: 39.97,
            lon_min: 2.30,
            lon_max: 3.48,
        }
    }
}

impl<T: Scalar> Region<T> {
    pub fn validate(&self) -> Result<(), GeoError> {
        let all = [self.lat_min, self.lat_max, self.lon_min, self.lon_max];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(GeoError::DegenerateRegion("non-finite bound"));
        }
        if self.lat_min >= self.lat_max || self.lon_min >= self.lon_max {
            return Err(GeoError::DegenerateRegion("empty extent"));
        }
        if self.lat_min < T::lit(-90.0) || self.lat_max > T::lit(90.0) {
            return Err(GeoError::DegenerateRegion("latitude out of range"));
        }
        Ok(())
    }

    pub fn contains(&self, p: &GeoPoint<T>) -> bool {
        p.lat() >= self.lat_min
            && p.lat() <= self.lat_max
            && p.lon() >= self.lon_min
            && p.lon() <= self.lon_max
    }

    pub fn center_lat(&self) -> T {
        (self.lat_min + self.lat_max) * T::lit(0.5)
    }
}

/// Row/column of a grid cell; row 0 is the southern edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GridCell<T = f64> {
    pub cell_id: CellId,
    pub bounds: Region<T>,
    pub count: u64,
    pub smoothed: T,
}

impl<T: Scalar> GridCell<T> {
    pub fn center(&self) -> (T, T) {
        let h = T::lit(0.5);
        (
            (self.bounds.lat_min + self.bounds.lat_max) * h,
            (self.bounds.lon_min + self.bounds.lon_max) * h,
        )
    }
}

/// Equirectangular tiling of a region at a fixed metric resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GridSpec<T = f64> {
    pub region: Region<T>,
    pub resolution_m: T,
    pub rows: u32,
    pub cols: u32,
    pub dlat: T,
    pub dlon: T,
}

impl<T: Scalar> GridSpec<T> {
    pub fn new(region: Region<T>, resolution_m: T) -> Result<Self, GeoError> {
        region.validate()?;
        if !(resolution_m > T::zero()) || !resolution_m.is_finite() {
            return Err(GeoError::DegenerateRegion("resolution must be positive"));
        }
        let m_per_deg_lat = T::lit(EARTH_RADIUS_M * std::f64::consts::PI / 180.0);
        let cos_c = region.center_lat().to_radians().cos();
        if cos_c <= T::lit(1e-9) {
            return Err(GeoError::DegenerateRegion("region centred on a pole"));
        }
        let dlat = resolution_m / m_per_deg_lat;
        let dlon = resolution_m / (m_per_deg_lat * cos_c);
        let count = |span: T, step: T| -> u32 {
            let n = (span / step).ceil().to_u64().unwrap_or(u64::MAX).max(1);
            n.min(u32::MAX as u64) as u32
        };
        Ok(GridSpec {
            region,
            resolution_m,
            rows: count(region.lat_max - region.lat_min, dlat),
            cols: count(region.lon_max - region.lon_min, dlon),
            dlat,
            dlon,
        })
    }

    /// Cell containing `p`, or `None` when outside the region.
    pub fn locate(&self, p: &GeoPoint<T>) -> Option<CellId> {
        if !self.region.contains(p) {
            return None;
        }
        let idx = |v: T, lo: T, step: T, n: u32| -> u32 {
            let i = ((v - lo) / step).floor().to_u64().unwrap_or(0);
            (i.min(n as u64 - 1)) as u32
        };
        Some(CellId {
            row: idx(p.lat(), self.region.lat_min, self.dlat, self.rows),
            col: idx(p.lon(), self.region.lon_min, self.dlon, self.cols),
        })
    }

    pub fn bounds(&self, id: CellId) -> Region<T> {
        let lat_min = self.region.lat_min + self.dlat * T::from_count(id.row as usize);
        let lon_min = self.region.lon_min + self.dlon * T::from_count(id.col as usize);
        Region {
            lat_min,
            lat_max: lat_min + self.dlat,
            lon_min,
            lon_max: lon_min + self.dlon,
        }
    }

    fn cell(&self, id: CellId, count: u64) -> GridCell<T> {
        GridCell {
            cell_id: id,
            bounds: self.bounds(id),
            count,
            smoothed: T::from_count(count as usize),
        }
    }
}

/// Sparse binned grid: only cells with non-zero count or smoothed mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BinnedGrid<T = f64> {
    pub spec: GridSpec<T>,
    pub cells: Vec<GridCell<T>>,
    /// Points that fell outside the region.
    pub overflow: u64,
}

impl<T: Scalar> BinnedGrid<T> {
    pub fn total_count(&self) -> u64 {
        self.cells.iter().map(|c| c.count).sum::<u64>() + self.overflow
    }
}

pub fn bin<T: Scalar>(
    points: &[GeoPoint<T>],
    region: Region<T>,
    resolution_m: T,
) -> Result<BinnedGrid<T>, GeoError> {
    let spec = GridSpec::new(region, resolution_m)?;
    let mut counts: BTreeMap<CellId, u64> = BTreeMap::new();
    let mut overflow = 0;
    for p in points {
        match spec.locate(p) {
            Some(id) => *counts.entry(id).or_default() += 1,
            None => overflow += 1,
        }
    }
    Ok(BinnedGrid {
        spec,
        cells: counts.into_iter().map(|(id, n)| spec.cell(id, n)).collect(),
        overflow,
    })
}

/// `smoothed(c) = sum over c' within Chebyshev radius of count(c') / (1 + d^2)`
/// with `d` the Euclidean distance in cell units.
pub fn smooth<T: Scalar>(grid: &BinnedGrid<T>, radius: u32) -> BinnedGrid<T> {
    let spec = grid.spec;
    let r = radius as i64;
    let mut mass: BTreeMap<CellId, T> = BTreeMap::new();
    let mut counts: BTreeMap<CellId, u64> = BTreeMap::new();
    for c in &grid.cells {
        counts.insert(c.cell_id, c.count);
        if c.count == 0 {
            continue;
        }
        let n = T::from_count(c.count as usize);
        for dr in -r..=r {
            for dc in -r..=r {
                let row = c.cell_id.row as i64 + dr;
                let col = c.cell_id.col as i64 + dc;
                if row < 0 || col < 0 || row >= spec.rows as i64 || col >= spec.cols as i64 {
                    continue;
                }
                let id = CellId {
                    row: row as u32,
                    col: col as u32,
                };
                let w = T::one() / (T::one() + T::from_count((dr * dr + dc * dc) as usize));
                let m = mass.entry(id).or_insert_with(T::zero);
                *m = *m + n * w;
            }
        }
    }
    let cells = mass
        .into_iter()
        .map(|(id, smoothed)| GridCell {
            smoothed,
            ..spec.cell(id, counts.get(&id).copied().unwrap_or(0))
        })
        .collect();
    BinnedGrid {
        spec,
        cells,
        overflow: grid.overflow,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct HotspotSite<T = f64> {
    pub id: String,
    pub member_cells: Vec<GridCell<T>>,
    pub centroid: GeoPoint<T>,
    pub total_count: u64,
    pub discovered_at: Timestamp,
}

/// Groups cells with `smoothed >= threshold` into 4-connected sites.
///
/// Components whose raw count total falls below the threshold are dropped.
pub fn extract_sites<T: Scalar>(
    grid: &BinnedGrid<T>,
    threshold: T,
    discovered_at: Timestamp,
) -> Vec<HotspotSite<T>> {
    let hot: BTreeMap<CellId, &GridCell<T>> = grid
        .cells
        .iter()
        .filter(|c| c.smoothed >= threshold)
        .map(|c| (c.cell_id, c))
        .collect();
    let mut seen: BTreeSet<CellId> = BTreeSet::new();
    let mut sites = Vec::new();
    for &start in hot.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut members = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(id) = queue.pop_front() {
            let neighbours = [
                (id.row.wrapping_sub(1), id.col),
                (id.row + 1, id.col),
                (id.row, id.col.wrapping_sub(1)),
                (id.row, id.col + 1),
            ];
            for (row, col) in neighbours {
                let n = CellId { row, col };
                if hot.contains_key(&n) && seen.insert(n) {
                    members.push(n);
                    queue.push_back(n);
                }
            }
        }
        members.sort();
        let cells: Vec<GridCell<T>> = members.iter().map(|id| *hot[id]).collect();
        let total: u64 = cells.iter().map(|c| c.count).sum();
        if T::from_count(total as usize) < threshold {
            continue;
        }
        let (mut lat, mut lon, mut w_sum) = (T::zero(), T::zero(), T::zero());
        let weighted = total > 0;
        for c in &cells {
            let w = if weighted {
                T::from_count(c.count as usize)
            } else {
                T::one()
            };
            let (clat, clon) = c.center();
            lat = lat + clat * w;
            lon = lon + clon * w;
            w_sum = w_sum + w;
        }
        let centroid = GeoPoint::new(lat / w_sum, lon / w_sum)
            .expect("weighted mean of in-range cell centres is in range");
        sites.push(HotspotSite {
            id: format!("site-{}-{}", members[0].row, members[0].col),
            member_cells: cells,
            centroid,
            total_count: total,
            discovered_at,
        });
    }
    sites
}

fn ring<T: Scalar>(b: &Region<T>) -> Value {
    let p = |lon: T, lat: T| json!([lon.to_f64_lossy(), lat.to_f64_lossy()]);
    json!([[
        p(b.lon_min, b.lat_min),
        p(b.lon_max, b.lat_min),
        p(b.lon_max, b.lat_max),
        p(b.lon_min, b.lat_max),
        p(b.lon_min, b.lat_min),
    ]])
}

/// RFC 7946 FeatureCollection of cells (Polygons) and sites (Points).
pub fn export_geojson<T: Scalar>(cells: &[GridCell<T>], sites: &[HotspotSite<T>]) -> Value {
    let mut features: Vec<Value> = cells
        .iter()
        .map(|c| {
            json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": ring(&c.bounds) },
                "properties": {
                    "row": c.cell_id.row,
                    "col": c.cell_id.col,
                    "count": c.count,
                    "smoothed": c.smoothed.to_f64_lossy(),
                },
            })
        })
        .collect();
    features.extend(sites.iter().map(|s| {
        json!({
            "type": "Feature",
            "geometry": {
                "type": "Point",
                "coordinates": [s.centroid.lon().to_f64_lossy(), s.centroid.lat().to_f64_lossy()],
            },
            "properties": {
                "site_id": s.id,
                "total_count": s.total_count,
                "cells": s.member_cells.len(),
            },
        })
    }));
    json!({ "type": "FeatureCollection", "features": features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gp(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn small_region() -> Region {
        Region {
            lat_min: 39.50,
            lat_max: 39.60,
            lon_min: 2.60,
            lon_max: 2.70,
        }
    }

    #[test]
    fn haversine_examples() {
        assert_eq!(haversine(&gp(39.5, 2.6), &gp(39.5, 2.6)), 0.0);
        // 2*pi*R/360
        let expected = 2.0 * std::f64::consts::PI * EARTH_RADIUS_M / 360.0;
        assert_abs_diff_eq!(expected, 111_195.08, epsilon = 0.01);
        assert_abs_diff_eq!(haversine(&gp(0.0, 0.0), &gp(0.0, 1.0)), expected, epsilon = 1.0);
        let a32 = GeoPoint::<f32>::new(0.0, 0.0).unwrap();
        let b32 = GeoPoint::<f32>::new(0.0, 1.0).unwrap();
        assert!((haversine(&a32, &b32) - 111_195.08f32).abs() < 20.0);
    }

    #[test]
    fn bin_examples() {
        let g = bin(&[gp(39.55, 2.65)], small_region(), 250.0).unwrap();
        assert_eq!(g.cells.len(), 1);
        assert_eq!(g.cells[0].count, 1);
        let pts = vec![gp(39.55, 2.65); 10];
        let g = bin(&pts, small_region(), 250.0).unwrap();
        assert_eq!((g.cells.len(), g.cells[0].count), (1, 10));
        let g = bin(&[gp(10.0, 10.0)], small_region(), 250.0).unwrap();
        assert_eq!((g.cells.len(), g.overflow), (0, 1));
        // corner of the region stays inside the grid
        let g = bin(&[gp(39.60, 2.70)], small_region(), 250.0).unwrap();
        assert_eq!(g.cells.len(), 1);
    }

    #[test]
    fn degenerate_region() {
        let r = Region {
            lat_min: 1.0,
            lat_max: 1.0,
            lon_min: 0.0,
            lon_max: 1.0,
        };
        assert!(bin(&[], r, 250.0).is_err());
        assert!(bin(&[], small_region(), 0.0).is_err());
    }

    #[test]
    fn cell_edge_is_close_to_resolution() {
        let spec = GridSpec::new(small_region(), 250.0).unwrap();
        let b = spec.bounds(CellId { row: 5, col: 5 });
        let ns = haversine(&gp(b.lat_min, b.lon_min), &gp(b.lat_max, b.lon_min));
        let ew = haversine(&gp(b.lat_min, b.lon_min), &gp(b.lat_min, b.lon_max));
        assert_abs_diff_eq!(ns, 250.0, epsilon = 0.5);
        assert_abs_diff_eq!(ew, 250.0, epsilon = 1.0);
    }

    #[test]
    fn smooth_examples() {
        let g = bin(&[gp(39.55, 2.65)], small_region(), 250.0).unwrap();
        let s0 = smooth(&g, 0);
        assert_eq!(s0.cells, g.cells);
        let s1 = smooth(&g, 1);
        assert_eq!(s1.cells.len(), 9);
        let center = g.cells[0].cell_id;
        for c in &s1.cells {
            let dr = c.cell_id.row as i64 - center.row as i64;
            let dc = c.cell_id.col as i64 - center.col as i64;
            let expected = match dr * dr + dc * dc {
                0 => 1.0,
                1 => 0.5,
                _ => 1.0 / 3.0,
            };
            assert_abs_diff_eq!(c.smoothed, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn sites_examples() {
        let g = smooth(&bin(&[gp(39.55, 2.65)], small_region(), 250.0).unwrap(), 1);
        assert!(extract_sites(&g, 3.0, Timestamp::EPOCH).is_empty());

        let pts = vec![gp(39.55, 2.65); 4];
        let g = smooth(&bin(&pts, small_region(), 250.0).unwrap(), 0);
        let sites = extract_sites(&g, 3.0, Timestamp::EPOCH);
        assert_eq!(sites.len(), 1);
        let (clat, clon) = g.cells[0].center();
        assert_abs_diff_eq!(sites[0].centroid.lat(), clat, epsilon = 1e-12);
        assert_abs_diff_eq!(sites[0].centroid.lon(), clon, epsilon = 1e-12);
        assert_eq!(sites[0].total_count, 4);
    }

    #[test]
    fn geojson_shapes() {
        let empty = export_geojson::<f64>(&[], &[]);
        assert_eq!(empty["type"], "FeatureCollection");
        assert_eq!(empty["features"].as_array().unwrap().len(), 0);

        let g = bin(&[gp(39.55, 2.65)], small_region(), 250.0).unwrap();
        let doc = export_geojson(&g.cells, &[]);
        let ring = &doc["features"][0]["geometry"]["coordinates"][0];
        let ring = ring.as_array().unwrap();
        assert_eq!(ring.len(), 5);
        assert_eq!(ring[0], ring[4]);
        assert_eq!(doc["features"][0]["properties"]["count"], 1);
    }
}
