//! Great-circle distances on a spherical Earth.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GeoPoint {
    /// Builds a point, rejecting non-finite or out-of-range coordinates.
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        let p = GeoPoint { lat_deg, lon_deg };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lat_deg.is_finite() || !(-90.0..=90.0).contains(&self.lat_deg) {
            return Err(Error::invalid(format!(
                "latitude {} outside [-90, 90]",
                self.lat_deg
            )));
        }
        if !self.lon_deg.is_finite() || !(-180.0..=180.0).contains(&self.lon_deg) {
            return Err(Error::invalid(format!(
                "longitude {} outside [-180, 180]",
                self.lon_deg
            )));
        }
        Ok(())
    }

    pub fn lat_rad(&self) -> f64 {
        self.lat_deg.to_radians()
    }

    pub fn lon_rad(&self) -> f64 {
        self.lon_deg.to_radians()
    }
}

/// Haversine distance in meters between two validated points.
pub fn haversine(a: GeoPoint, b: GeoPoint) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(haversine_unchecked(a, b))
}

/// Haversine distance for points already known to be valid.
#[inline]
pub(crate) fn haversine_unchecked(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat_rad(), b.lat_rad());
    let dphi = phi2 - phi1;
    let dlambda = b.lon_rad() - a.lon_rad();
    let s_phi = (dphi * 0.5).sin();
    let s_lambda = (dlambda * 0.5).sin();
    let h = s_phi * s_phi + phi1.cos() * phi2.cos() * s_lambda * s_lambda;
    // rounding can push h a hair outside [0, 1]
    let h = h.clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

/// Symmetric matrix of pairwise geodesic distances in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: Array2<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Pairwise distance matrix. Each unordered pair is evaluated once and
/// mirrored, so the result is exactly symmetric with a zero diagonal.
pub fn distance_matrix(points: &[GeoPoint]) -> Result<DistanceMatrix> {
    if points.is_empty() {
        return Err(Error::invalid("distance matrix of an empty point list"));
    }
    for p in points {
        p.validate()?;
    }
    let n = points.len();
    let upper: Vec<Vec<f64>> = par::map_range(n, |i| {
        (i + 1..n)
            .map(|j| haversine_unchecked(points[i], points[j]))
            .collect()
    });
    let mut values = Array2::<f64>::zeros((n, n));
    for (i, row) in upper.into_iter().enumerate() {
        for (k, d) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            values[[i, j]] = d;
            values[[j, i]] = d;
        }
    }
    Ok(DistanceMatrix { values })
}

/// Distances from one point to every point in `points`.
pub fn distances_from(origin: GeoPoint, points: &[GeoPoint]) -> Result<Vec<f64>> {
    origin.validate()?;
    points.iter().map(|&p| haversine(origin, p)).collect()
}

/// Offsets `origin` by `east_m`/`north_m` meters on a local tangent plane.
/// Only accurate for offsets much smaller than the Earth radius.
pub fn offset_m(origin: GeoPoint, east_m: f64, north_m: f64) -> GeoPoint {
    let dlat = (north_m / EARTH_RADIUS_M).to_degrees();
    let dlon = (east_m / (EARTH_RADIUS_M * origin.lat_rad().cos())).to_degrees();
    GeoPoint {
        lat_deg: origin.lat_deg + dlat,
        lon_deg: origin.lon_deg + dlon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn identical_points_are_zero() {
        assert_eq!(haversine(p(0.0, 0.0), p(0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn quarter_and_half_circle() {
        let q = haversine(p(0.0, 0.0), p(0.0, 90.0)).unwrap();
        assert!((q - 10_007_543.4).abs() < 1.0, "{q}");
        let h = haversine(p(0.0, 0.0), p(0.0, 180.0)).unwrap();
        assert!((h - 20_015_086.8).abs() < 1.0, "{h}");
        assert!((h - PI * EARTH_RADIUS_M).abs() < 1e-6);
    }

    #[test]
    fn glasgow_to_london_matches_law_of_cosines() {
        // 50-digit spherical law of cosines: 555150.65957450891...
        let d = haversine(p(55.8642, -4.2518), p(51.5074, -0.1278)).unwrap();
        assert!((d - 555_150.659_574_5).abs() < 1.0, "{d}");
    }

    #[test]
    fn millidegree_at_equator() {
        let d = haversine(p(0.0, 0.0), p(0.001, 0.0)).unwrap();
        assert!((d - 111.195).abs() < 0.01, "{d}");
    }

    #[test]
    fn rejects_bad_coordinates() {
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        let bad = GeoPoint {
            lat_deg: 0.0,
            lon_deg: f64::INFINITY,
        };
        assert!(haversine(bad, p(0.0, 0.0)).is_err());
        assert!(distance_matrix(&[p(1.0, 1.0), bad]).is_err());
    }

    #[test]
    fn matrix_edge_cases() {
        assert!(distance_matrix(&[]).is_err());
        let one = distance_matrix(&[p(10.0, 20.0)]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.get(0, 0), 0.0);
        let dup = distance_matrix(&[p(10.0, 20.0), p(10.0, 20.0)]).unwrap();
        assert!(dup.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matrix_matches_pairwise_calls() {
        let pts = [p(55.86, -4.25), p(51.5, -0.12), p(-33.9, 151.2)];
        let m = distance_matrix(&pts).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let brute = haversine(pts[i], pts[j]).unwrap();
                assert!((m.get(i, j) - brute).abs() <= 1e-9 * brute.max(1.0));
            }
        }
    }

    fn arb_point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(a, b)| GeoPoint {
            lat_deg: a,
            lon_deg: b,
        })
    }

    proptest! {
        #[test]
        fn matrix_is_symmetric_and_bounded(pts in prop::collection::vec(arb_point(), 1..12)) {
            let m = distance_matrix(&pts).unwrap();
            for i in 0..pts.len() {
                prop_assert_eq!(m.get(i, i), 0.0);
                for j in 0..pts.len() {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                    prop_assert!(m.get(i, j) >= 0.0 && m.get(i, j) <= PI * EARTH_RADIUS_M);
                }
            }
        }

        #[test]
        fn local_triangle_inequality(
            base in arb_point().prop_filter("away from poles", |p| p.lat_deg.abs() < 80.0),
            offs in prop::collection::vec((-3500.0f64..3500.0, -3500.0f64..3500.0), 3),
        ) {
            let pts: Vec<GeoPoint> = offs
                .iter()
                .map(|&(e, n)| offset_m(base, e, n))
                .filter(|q| q.validate().is_ok())
                .collect();
            prop_assume!(pts.len() == 3);
            let d = distance_matrix(&pts).unwrap();
            prop_assert!(d.get(0, 2) <= d.get(0, 1) + d.get(1, 2) + 1e-6);
        }
    }
}
