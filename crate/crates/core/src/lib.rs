//! Crowdsourced contact tracing: unsafe zones around reported patient
//! positions, a grid index for proximity lookups, a durable registry, and a
//! role-gated HTTP service that alerts nearby users.

pub mod bench;
pub mod config;
pub mod geo;
pub mod http;
pub mod ids;
pub mod index;
pub mod service;
pub mod store;

pub use config::ServiceConfig;
pub use geo::{
    algorithm1_verbatim, classify_point, destination_point, find_unsafe_area, haversine_distance_m, BoundingBox,
    GeoError, GeoPoint, SafetyStatus, SafetyVerdict, UnsafeZone, ZoneParameters,
};
pub use index::GridIndex;
pub use service::{Clock, ManualClock, SystemClock, TracingService};
pub use store::{Registry, Role};
