use std::f64::consts::PI;

use geosafe::geo::{destination_point, haversine_distance_m, GeoPoint, EARTH_RADIUS_M, MAX_ZONE_LATITUDE_DEG};
use proptest::prelude::*;

const CASES: u32 = 10_000;

fn point() -> impl Strategy<Value = GeoPoint> {
    (-90.0f64..=90.0, -180.0f64..180.0).prop_map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap())
}

fn origin() -> impl Strategy<Value = GeoPoint> {
    (-MAX_ZONE_LATITUDE_DEG..=MAX_ZONE_LATITUDE_DEG, -180.0f64..180.0)
        .prop_map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn identity(p in point()) {
        prop_assert_eq!(haversine_distance_m(p, p), 0.0);
    }

    #[test]
    fn symmetry_is_exact(a in point(), b in point()) {
        prop_assert_eq!(haversine_distance_m(a, b).to_bits(), haversine_distance_m(b, a).to_bits());
    }

    #[test]
    fn range(a in point(), b in point()) {
        let d = haversine_distance_m(a, b);
        prop_assert!((0.0..=PI * EARTH_RADIUS_M).contains(&d), "{d}");
    }

    #[test]
    fn triangle_inequality(a in point(), b in point(), c in point()) {
        let ac = haversine_distance_m(a, c);
        let via = haversine_distance_m(a, b) + haversine_distance_m(b, c);
        prop_assert!(ac <= via + 1e-6, "{ac} > {via}");
    }

    #[test]
    fn destination_round_trip(
        p in origin(),
        bearing in 0.0f64..360.0,
        distance in 0.5f64..1.9e7,
    ) {
        let q = destination_point(p, bearing, distance).unwrap();
        let back = haversine_distance_m(p, q);
        prop_assert!(((back - distance) / distance).abs() <= 1e-6, "{distance} -> {back}");
    }

    #[test]
    fn short_hops_round_trip(p in origin(), bearing in 0.0f64..360.0, distance in 0.01f64..500.0) {
        let q = destination_point(p, bearing, distance).unwrap();
        let back = haversine_distance_m(p, q);
        prop_assert!(((back - distance) / distance).abs() <= 1e-6, "{distance} -> {back}");
    }
}

#[test]
fn antipodes_are_half_the_circumference() {
    let cases = [
        ((0.0, 0.0), (0.0, -180.0)),
        ((0.0, 90.0), (0.0, -90.0)),
        ((90.0, 0.0), (-90.0, 0.0)),
        ((23.734135, 90.416088), (-23.734135, -89.583912)),
    ];
    for ((la, lo), (lb, lob)) in cases {
        let d = haversine_distance_m(GeoPoint::new(la, lo).unwrap(), GeoPoint::new(lb, lob).unwrap());
        let expected = PI * EARTH_RADIUS_M;
        assert!((d - expected).abs() <= 1e-6, "{d} vs {expected}");
    }
    let exact = haversine_distance_m(GeoPoint::new(0.0, 0.0).unwrap(), GeoPoint::new(0.0, 180.0).unwrap());
    assert_eq!(exact, PI * 6_371_000.0);
}
