//! Spherical geodesy on a fixed-radius Earth and unsafe-zone construction.
//!
//! Every function here is a pure function of its arguments. Angles are taken
//! in degrees at the API boundary and converted to radians internally;
//! distances are meters unless a name says otherwise.

use std::f64::consts::PI;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{PatientId, ZoneId};

/// Mean Earth radius of the spherical model, kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Mean Earth radius of the spherical model, meters.
pub const EARTH_RADIUS_M: f64 = EARTH_RADIUS_KM * 1000.0;
/// The four-digit constant used by the printed unsafe-area procedure.
///
/// Only [`algorithm1_verbatim`] uses it; all other geometry uses `std::f64::consts::PI`.
#[allow(clippy::approx_constant)]
pub const PRINTED_PI: f64 = 3.1416;
/// Offsets and zones are refused beyond this absolute latitude.
pub const MAX_ZONE_LATITUDE_DEG: f64 = 89.9;

pub const DEFAULT_SAFE_DISTANCE_M: f64 = 1.8;
pub const DEFAULT_NOISE_M: f64 = 0.2;
pub const DEFAULT_NOTIFY_BUFFER_M: f64 = 100.0;
pub const DEFAULT_ZONE_TTL_DAYS: i64 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {0} is outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} is not a finite number")]
    InvalidLongitude(f64),
    #[error("latitude {0} is too close to a pole (limit is 89.9 degrees)")]
    PolarLatitude(f64),
    #[error("distance {0} must be finite and non-negative")]
    InvalidDistance(f64),
    #[error("bearing {0} is not a finite number")]
    InvalidBearing(f64),
    #[error("invalid zone parameters: {0}")]
    InvalidParameters(&'static str),
    #[error("haversine term a = {0} left [0, 1] in the verbatim procedure")]
    VerbatimDomain(f64),
}

/// A latitude/longitude pair in decimal degrees.
///
/// Longitude is normalized into `[-180, 180)` on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    latitude_deg: f64,
    longitude_deg: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint {
            lat: p.latitude_deg,
            lon: p.longitude_deg,
        }
    }
}

impl GeoPoint {
    pub fn new(latitude_deg: f64, longitude_deg: f64) -> Result<Self, GeoError> {
        if !latitude_deg.is_finite() || !(-90.0..=90.0).contains(&latitude_deg) {
            return Err(GeoError::InvalidLatitude(latitude_deg));
        }
        if !longitude_deg.is_finite() {
            return Err(GeoError::InvalidLongitude(longitude_deg));
        }
        Ok(Self {
            latitude_deg,
            longitude_deg: normalize_longitude(longitude_deg),
        })
    }

    /// Like [`GeoPoint::new`] but also rejects longitudes outside `[-180, 180]`
    /// instead of wrapping them. Used for externally supplied coordinates.
    pub fn new_strict(latitude_deg: f64, longitude_deg: f64) -> Result<Self, GeoError> {
        if longitude_deg.is_finite() && !(-180.0..=180.0).contains(&longitude_deg) {
            return Err(GeoError::InvalidLongitude(longitude_deg));
        }
        Self::new(latitude_deg, longitude_deg)
    }

    pub fn latitude(&self) -> f64 {
        self.latitude_deg
    }

    pub fn longitude(&self) -> f64 {
        self.longitude_deg
    }

    fn reject_polar(&self) -> Result<(), GeoError> {
        if self.latitude_deg.abs() > MAX_ZONE_LATITUDE_DEG {
            Err(GeoError::PolarLatitude(self.latitude_deg))
        } else {
            Ok(())
        }
    }
}

/// Wraps any finite longitude into `[-180, 180)`.
pub fn normalize_longitude(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Fixed constants of the spherical model, exposed for callers that want to
/// report them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoConstants {
    pub earth_radius_km: f64,
    pub printed_pi: f64,
}

impl GeoConstants {
    pub const MODEL: GeoConstants = GeoConstants {
        earth_radius_km: EARTH_RADIUS_KM,
        printed_pi: PRINTED_PI,
    };
}

/// Sizing of an unsafe zone and of the notification ring around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneParameters {
    pub safe_distance_m: f64,
    pub noise_m: f64,
    pub notify_buffer_m: f64,
    /// Lifetime of a zone that is never explicitly deactivated.
    #[serde(with = "duration_secs")]
    pub zone_ttl: Duration,
}

impl Default for ZoneParameters {
    fn default() -> Self {
        Self {
            safe_distance_m: DEFAULT_SAFE_DISTANCE_M,
            noise_m: DEFAULT_NOISE_M,
            notify_buffer_m: DEFAULT_NOTIFY_BUFFER_M,
            zone_ttl: Duration::days(DEFAULT_ZONE_TTL_DAYS),
        }
    }
}

impl ZoneParameters {
    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.safe_distance_m.is_finite() && self.safe_distance_m > 0.0) {
            return Err(GeoError::InvalidParameters("safe_distance_m must be > 0"));
        }
        if !(self.noise_m.is_finite() && self.noise_m >= 0.0) {
            return Err(GeoError::InvalidParameters("noise_m must be >= 0"));
        }
        if !(self.notify_buffer_m.is_finite() && self.notify_buffer_m >= 0.0) {
            return Err(GeoError::InvalidParameters("notify_buffer_m must be >= 0"));
        }
        if self.zone_ttl <= Duration::zero() {
            return Err(GeoError::InvalidParameters("zone_ttl must be positive"));
        }
        Ok(())
    }

    /// `safe_distance_m + noise_m`.
    pub fn zone_radius_m(&self) -> f64 {
        self.safe_distance_m + self.noise_m
    }

    /// Radius within which users are notified about a new zone.
    pub fn notify_radius_m(&self) -> f64 {
        self.zone_radius_m() + self.notify_buffer_m
    }
}

mod duration_secs {
    use chrono::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(d.num_seconds())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::seconds(i64::deserialize(d)?))
    }
}

/// Intermediate quantities of the haversine evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HaversineTerms {
    /// radians
    pub dlat: f64,
    /// radians
    pub dlon: f64,
    pub a: f64,
    /// central angle, radians
    pub c: f64,
    /// kilometers
    pub d: f64,
}

/// Haversine terms between two points on the R = 6371 km sphere.
pub fn haversine_terms(a: GeoPoint, b: GeoPoint) -> HaversineTerms {
    let lat1 = a.latitude_deg.to_radians();
    let lat2 = b.latitude_deg.to_radians();
    let dlat = (b.latitude_deg - a.latitude_deg).to_radians();
    let dlon = (b.longitude_deg - a.longitude_deg).to_radians();

    let sin_lat = (dlat / 2.0).sin();
    let sin_lon = (dlon / 2.0).sin();
    // rounding can land a few ulps outside [0, 1]
    let h = (sin_lat * sin_lat + lat1.cos() * lat2.cos() * sin_lon * sin_lon).clamp(0.0, 1.0);
    let c = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());

    HaversineTerms {
        dlat,
        dlon,
        a: h,
        c,
        d: EARTH_RADIUS_KM * c,
    }
}

/// Great-circle distance in meters.
///
/// Symmetric bit-for-bit: the argument pair is put in a canonical order
/// before evaluation.
pub fn haversine_distance_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (first, second) = if canonical_lt(b, a) { (b, a) } else { (a, b) };
    EARTH_RADIUS_M * haversine_terms(first, second).c
}

fn canonical_lt(x: GeoPoint, y: GeoPoint) -> bool {
    (x.latitude_deg, x.longitude_deg) < (y.latitude_deg, y.longitude_deg)
}

/// Point reached by travelling `distance_m` from `origin` along the great
/// circle with the given initial bearing (degrees clockwise from north).
pub fn destination_point(
    origin: GeoPoint,
    bearing_deg: f64,
    distance_m: f64,
) -> Result<GeoPoint, GeoError> {
    origin.reject_polar()?;
    if !bearing_deg.is_finite() {
        return Err(GeoError::InvalidBearing(bearing_deg));
    }
    if !(distance_m.is_finite() && distance_m >= 0.0) {
        return Err(GeoError::InvalidDistance(distance_m));
    }
    if distance_m == 0.0 {
        return Ok(origin);
    }

    let delta = distance_m / EARTH_RADIUS_M;
    let theta = bearing_deg.rem_euclid(360.0).to_radians();
    let phi1 = origin.latitude_deg.to_radians();
    let lambda1 = origin.longitude_deg.to_radians();

    let sin_phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).clamp(-1.0, 1.0);
    let phi2 = sin_phi2.asin();
    let lambda2 = lambda1
        + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * sin_phi2);

    GeoPoint::new(phi2.to_degrees().clamp(-90.0, 90.0), lambda2.to_degrees())
}

/// A circular exposure area around a reported patient position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsafeZone {
    pub zone_id: ZoneId,
    pub center: GeoPoint,
    pub radius_m: f64,
    pub area_m2: f64,
    /// Internal only: user-facing payloads carry a `ZoneGeometry` view instead.
    pub patient_ref: PatientId,
    pub created_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub active: bool,
}

impl UnsafeZone {
    /// Active and not yet expired at `now`.
    pub fn is_live(&self, now: DateTime<Utc>) -> bool {
        self.active && now < self.expires_at
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        haversine_distance_m(p, self.center) <= self.radius_m
    }
}

/// Builds the unsafe zone around `center`.
///
/// The radius is `safe_distance_m + noise_m` and the area is the disc area
/// with full-precision π.
pub fn find_unsafe_area(
    zone_id: ZoneId,
    center: GeoPoint,
    params: &ZoneParameters,
    patient_ref: PatientId,
    now: DateTime<Utc>,
) -> Result<UnsafeZone, GeoError> {
    center.reject_polar()?;
    params.validate()?;
    let radius_m = params.zone_radius_m();
    Ok(UnsafeZone {
        zone_id,
        center,
        radius_m,
        area_m2: PI * radius_m * radius_m,
        patient_ref,
        created_at: now,
        expires_at: now + params.zone_ttl,
        active: true,
    })
}

/// Output of [`algorithm1_verbatim`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerbatimOutput {
    pub terms: HaversineTerms,
    pub rad: f64,
    pub area: f64,
}

/// Literal transcription of the printed ten-line "Find Unsafe Area" procedure.
///
/// Kept for comparison with [`find_unsafe_area`]; never used by the service.
/// The printed text mixes units: the cosine arguments in the `a` term are the
/// raw degree values (plus the literal 1.6) read as radians, `d` is in
/// kilometers, and `noise` is added to it with no unit conversion. All of that
/// is reproduced as written, including `PI = 3.1416`.
pub fn algorithm1_verbatim(plat_deg: f64, plon_deg: f64, noise: f64) -> Result<VerbatimOutput, GeoError> {
    GeoPoint::new_strict(plat_deg, plon_deg)?;
    let r = EARTH_RADIUS_KM; // line 1
    let pi = PRINTED_PI; // line 2
    let dlat = plat_deg * (pi / 180.0); // line 3
    let dlon = plon_deg * (pi / 180.0); // line 4
    let a = (dlat / 2.0).sin().powi(2) + (plat_deg + 1.6).cos() * plat_deg.cos() * (dlon / 2.0).sin().powi(2); // line 5
    if !(0.0..=1.0).contains(&a) {
        return Err(GeoError::VerbatimDomain(a));
    }
    let c = 2.0 * a.sqrt().atan2((1.0 - a).sqrt()); // line 6
    let d = r * c; // line 7
    let rad = d + noise; // line 8
    let area = pi * (rad * rad); // line 9
    Ok(VerbatimOutput {
        terms: HaversineTerms { dlat, dlon, a, c, d },
        rad,
        area,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafetyStatus {
    Safe,
    Unsafe,
}

impl SafetyStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SafetyStatus::Safe => "safe",
            SafetyStatus::Unsafe => "unsafe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SafetyVerdict {
    pub status: SafetyStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_zone_id: Option<ZoneId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_to_nearest_zone_center_m: Option<f64>,
}

impl SafetyVerdict {
    /// Builds a verdict from the nearest containing zone (if any) and the
    /// nearest zone center overall (if any zones exist).
    pub fn from_parts(containing: Option<ZoneId>, nearest_m: Option<f64>) -> Self {
        SafetyVerdict {
            status: if containing.is_some() {
                SafetyStatus::Unsafe
            } else {
                SafetyStatus::Safe
            },
            matched_zone_id: containing,
            distance_to_nearest_zone_center_m: nearest_m,
        }
    }

    /// One line in the report format, e.g.
    /// `The user in location (23.750336, 90.448566) is in safe area`.
    pub fn report_line(&self, p: GeoPoint) -> String {
        format!(
            "The user in location ({:.6}, {:.6}) is in {} area",
            p.latitude(),
            p.longitude(),
            self.status.as_str()
        )
    }
}

/// Classifies `p` against every active zone by exhaustive scan.
///
/// Boundary points (distance equal to the radius) are unsafe. When several
/// zones contain `p` the nearest center wins, ties broken by lowest id.
pub fn classify_point<'a, I>(p: GeoPoint, zones: I) -> SafetyVerdict
where
    I: IntoIterator<Item = &'a UnsafeZone>,
{
    let mut nearest: Option<f64> = None;
    let mut matched: Option<(f64, ZoneId)> = None;
    for zone in zones.into_iter().filter(|z| z.active) {
        let d = haversine_distance_m(p, zone.center);
        nearest = Some(nearest.map_or(d, |n| n.min(d)));
        if d <= zone.radius_m && matched.is_none_or(|best| (d, zone.zone_id) < best) {
            matched = Some((d, zone.zone_id));
        }
    }
    SafetyVerdict::from_parts(matched.map(|(_, id)| id), nearest)
}

/// Latitude/longitude rectangle. `west > east` denotes a box that crosses the
/// antimeridian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl BoundingBox {
    pub fn new(south: f64, west: f64, north: f64, east: f64) -> Result<Self, GeoError> {
        for lat in [south, north] {
            if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
                return Err(GeoError::InvalidLatitude(lat));
            }
        }
        for lon in [west, east] {
            if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
                return Err(GeoError::InvalidLongitude(lon));
            }
        }
        if south > north {
            return Err(GeoError::InvalidParameters("south must not exceed north"));
        }
        Ok(Self { south, west, north, east })
    }

    pub fn crosses_antimeridian(&self) -> bool {
        self.west > self.east
    }

    fn lon_in_range(&self, lon: f64) -> bool {
        if self.crosses_antimeridian() {
            lon >= self.west || lon <= self.east
        } else {
            (self.west..=self.east).contains(&lon)
                // a box ending at +180 also covers the normalized -180
                || (self.east == 180.0 && lon == -180.0)
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.south..=self.north).contains(&p.latitude()) && self.lon_in_range(p.longitude())
    }

    /// Great-circle distance from `p` to the closest point of the box, zero
    /// when `p` is inside.
    pub fn distance_to_m(&self, p: GeoPoint) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        let mut consider = |lat: f64, lon: f64| {
            if let Ok(q) = GeoPoint::new(lat, lon) {
                best = best.min(haversine_distance_m(p, q));
            }
        };
        // along a parallel the closest point shares p's longitude
        if self.lon_in_range(p.longitude()) {
            consider(self.south, p.longitude());
            consider(self.north, p.longitude());
        }
        // along a meridian the distance is a sinusoid in latitude, so the
        // minimum is at its crest (if inside the edge) or at an edge end
        let phi = p.latitude().to_radians();
        for edge_lon in [self.west, self.east] {
            let dlon = (p.longitude() - edge_lon).to_radians();
            let crest = phi.sin().atan2(phi.cos() * dlon.cos()).to_degrees();
            if (self.south..=self.north).contains(&crest) {
                consider(crest, edge_lon);
            }
            consider(self.south, edge_lon);
            consider(self.north, edge_lon);
        }
        best
    }

    pub fn intersects_disc(&self, center: GeoPoint, radius_m: f64) -> bool {
        self.distance_to_m(center) <= radius_m
    }
}
