//! Python bindings: geodesic primitives, zone construction and
//! classification, the grid index, and the benchmark experiments.

use chrono::{DateTime, Utc};
use geosafe::bench::{self, BenchError, DEFAULT_SIZES};
use geosafe::geo::{self, BoundingBox, GeoError, SafetyStatus};
use geosafe::ids::{PatientId, ZoneId};
use geosafe::index::{IndexError, DEFAULT_CELL_SIZE_DEG};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn geo_err(e: GeoError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn bench_err(e: BenchError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn index_err(e: IndexError) -> PyErr {
    match e {
        IndexError::UnknownId(_) => PyKeyError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Latitude/longitude in degrees; longitude is normalized to [-180, 180).
#[pyclass(frozen, eq, skip_from_py_object, name = "GeoPoint")]
#[derive(Clone, Copy, PartialEq)]
struct PyGeoPoint(geo::GeoPoint);

#[pymethods]
impl PyGeoPoint {
    #[new]
    fn new(latitude: f64, longitude: f64) -> PyResult<Self> {
        geo::GeoPoint::new(latitude, longitude).map(Self).map_err(geo_err)
    }

    #[getter]
    fn latitude(&self) -> f64 {
        self.0.latitude()
    }

    #[getter]
    fn longitude(&self) -> f64 {
        self.0.longitude()
    }

    fn distance_to(&self, other: &PyGeoPoint) -> f64 {
        geo::haversine_distance_m(self.0, other.0)
    }

    fn __repr__(&self) -> String {
        format!("GeoPoint({}, {})", self.0.latitude(), self.0.longitude())
    }
}

#[pyclass(frozen, skip_from_py_object, name = "ZoneParameters")]
#[derive(Clone)]
struct PyZoneParameters(geo::ZoneParameters);

#[pymethods]
impl PyZoneParameters {
    #[new]
    #[pyo3(signature = (safe_distance_m = geo::DEFAULT_SAFE_DISTANCE_M, noise_m = geo::DEFAULT_NOISE_M, notify_buffer_m = geo::DEFAULT_NOTIFY_BUFFER_M, zone_ttl_days = geo::DEFAULT_ZONE_TTL_DAYS))]
    fn new(safe_distance_m: f64, noise_m: f64, notify_buffer_m: f64, zone_ttl_days: i64) -> PyResult<Self> {
        let params = geo::ZoneParameters {
            safe_distance_m,
            noise_m,
            notify_buffer_m,
            zone_ttl: chrono::Duration::days(zone_ttl_days),
        };
        params.validate().map_err(geo_err)?;
        Ok(Self(params))
    }

    #[getter]
    fn safe_distance_m(&self) -> f64 {
        self.0.safe_distance_m
    }

    #[getter]
    fn noise_m(&self) -> f64 {
        self.0.noise_m
    }

    #[getter]
    fn notify_buffer_m(&self) -> f64 {
        self.0.notify_buffer_m
    }

    #[getter]
    fn zone_ttl_days(&self) -> i64 {
        self.0.zone_ttl.num_days()
    }

    fn zone_radius_m(&self) -> f64 {
        self.0.zone_radius_m()
    }

    fn notify_radius_m(&self) -> f64 {
        self.0.notify_radius_m()
    }

    fn __repr__(&self) -> String {
        format!(
            "ZoneParameters(safe_distance_m={}, noise_m={}, notify_buffer_m={}, zone_ttl_days={})",
            self.0.safe_distance_m,
            self.0.noise_m,
            self.0.notify_buffer_m,
            self.0.zone_ttl.num_days()
        )
    }
}

#[pyclass(skip_from_py_object, name = "UnsafeZone")]
#[derive(Clone)]
struct PyUnsafeZone(geo::UnsafeZone);

#[pymethods]
impl PyUnsafeZone {
    #[getter]
    fn zone_id(&self) -> u64 {
        self.0.zone_id.0
    }

    #[getter]
    fn center(&self) -> PyGeoPoint {
        PyGeoPoint(self.0.center)
    }

    #[getter]
    fn radius_m(&self) -> f64 {
        self.0.radius_m
    }

    #[getter]
    fn area_m2(&self) -> f64 {
        self.0.area_m2
    }

    #[getter]
    fn patient_ref(&self) -> u64 {
        self.0.patient_ref.0
    }

    /// Creation time as Unix seconds.
    #[getter]
    fn created_at(&self) -> i64 {
        self.0.created_at.timestamp()
    }

    #[getter]
    fn expires_at(&self) -> i64 {
        self.0.expires_at.timestamp()
    }

    #[getter]
    fn get_active(&self) -> bool {
        self.0.active
    }

    #[setter]
    fn set_active(&mut self, active: bool) {
        self.0.active = active;
    }

    fn contains(&self, p: &PyGeoPoint) -> bool {
        self.0.contains(p.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "UnsafeZone(zone_id={}, center=({}, {}), radius_m={}, active={})",
            self.0.zone_id.0,
            self.0.center.latitude(),
            self.0.center.longitude(),
            self.0.radius_m,
            self.0.active
        )
    }
}

#[pyclass(frozen, name = "SafetyVerdict")]
struct PySafetyVerdict(geo::SafetyVerdict);

#[pymethods]
impl PySafetyVerdict {
    /// `"Safe"` or `"Unsafe"`.
    #[getter]
    fn status(&self) -> &'static str {
        match self.0.status {
            SafetyStatus::Safe => "Safe",
            SafetyStatus::Unsafe => "Unsafe",
        }
    }

    #[getter]
    fn is_unsafe(&self) -> bool {
        self.0.status == SafetyStatus::Unsafe
    }

    #[getter]
    fn matched_zone_id(&self) -> Option<u64> {
        self.0.matched_zone_id.map(|z| z.0)
    }

    #[getter]
    fn distance_to_nearest_zone_center_m(&self) -> Option<f64> {
        self.0.distance_to_nearest_zone_center_m
    }

    fn report_line(&self, p: &PyGeoPoint) -> String {
        self.0.report_line(p.0)
    }

    fn __repr__(&self) -> String {
        format!("SafetyVerdict({}, matched_zone_id={:?})", self.status(), self.matched_zone_id())
    }
}

/// Spatial index over integer ids, each a disc of `radius_m` around a point.
#[pyclass(name = "GridIndex")]
struct PyGridIndex(geosafe::GridIndex<u64>);

#[pymethods]
impl PyGridIndex {
    #[new]
    #[pyo3(signature = (cell_size_deg = DEFAULT_CELL_SIZE_DEG))]
    fn new(cell_size_deg: f64) -> PyResult<Self> {
        geosafe::GridIndex::new(cell_size_deg).map(Self).map_err(index_err)
    }

    #[pyo3(signature = (id, point, radius_m = 0.0))]
    fn insert(&mut self, id: u64, point: &PyGeoPoint, radius_m: f64) -> PyResult<()> {
        self.0.insert(id, point.0, radius_m).map_err(index_err)
    }

    fn remove(&mut self, id: u64) -> PyResult<()> {
        self.0.remove(id).map_err(index_err)
    }

    /// Ids whose disc contains `p`.
    fn query_point(&self, p: &PyGeoPoint) -> Vec<u64> {
        self.0.query_point(p.0)
    }

    /// Ids whose center lies within `radius_m` of `center`.
    fn query_disc(&self, center: &PyGeoPoint, radius_m: f64) -> Vec<u64> {
        self.0.query_disc(center.0, radius_m)
    }

    /// `(id, distance_m)` of the nearest center, or None when empty.
    fn nearest(&self, p: &PyGeoPoint) -> Option<(u64, f64)> {
        self.0.nearest_where(p.0, |_| true)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __contains__(&self, id: u64) -> bool {
        self.0.contains(id)
    }
}

#[pyfunction]
fn haversine_distance_m(a: &PyGeoPoint, b: &PyGeoPoint) -> f64 {
    geo::haversine_distance_m(a.0, b.0)
}

#[pyfunction]
fn destination_point(origin: &PyGeoPoint, bearing_deg: f64, distance_m: f64) -> PyResult<PyGeoPoint> {
    geo::destination_point(origin.0, bearing_deg, distance_m)
        .map(PyGeoPoint)
        .map_err(geo_err)
}

/// Builds the zone around `center`. `created_at` is Unix seconds.
#[pyfunction]
#[pyo3(name = "find_unsafe_area", signature = (zone_id, center, params = None, patient_ref = 0, created_at = 0))]
fn make_zone(
    zone_id: u64,
    center: &PyGeoPoint,
    params: Option<&PyZoneParameters>,
    patient_ref: u64,
    created_at: i64,
) -> PyResult<PyUnsafeZone> {
    let params = params.map(|p| p.0).unwrap_or_default();
    let now: DateTime<Utc> =
        DateTime::from_timestamp(created_at, 0).ok_or_else(|| PyValueError::new_err("created_at out of range"))?;
    geo::find_unsafe_area(ZoneId(zone_id), center.0, &params, PatientId(patient_ref), now)
        .map(PyUnsafeZone)
        .map_err(geo_err)
}

/// The printed procedure reproduced literally, as a dict of its intermediate values.
#[pyfunction]
fn algorithm1_verbatim<'py>(py: Python<'py>, lat: f64, lon: f64, noise: f64) -> PyResult<Bound<'py, PyDict>> {
    let out = geo::algorithm1_verbatim(lat, lon, noise).map_err(geo_err)?;
    let d = PyDict::new(py);
    d.set_item("dlat", out.terms.dlat)?;
    d.set_item("dlon", out.terms.dlon)?;
    d.set_item("a", out.terms.a)?;
    d.set_item("c", out.terms.c)?;
    d.set_item("d", out.terms.d)?;
    d.set_item("rad", out.rad)?;
    d.set_item("area", out.area)?;
    Ok(d)
}

/// Exhaustive classification of `p` against `zones`.
#[pyfunction]
fn classify_point(p: &PyGeoPoint, zones: Vec<PyRef<'_, PyUnsafeZone>>) -> PySafetyVerdict {
    PySafetyVerdict(geo::classify_point(p.0, zones.iter().map(|z| &z.0)))
}

/// `n` uniform points in `bbox` = (south, west, north, east); central Dhaka by default.
#[pyfunction]
#[pyo3(signature = (n, bbox = None, seed = 1))]
fn generate_dataset(n: usize, bbox: Option<(f64, f64, f64, f64)>, seed: u64) -> PyResult<Vec<PyGeoPoint>> {
    let bbox = match bbox {
        Some((s, w, n, e)) => BoundingBox::new(s, w, n, e).map_err(geo_err)?,
        None => bench::dhaka_box(),
    };
    let points = bench::generate_dataset(n, &bbox, seed).map_err(bench_err)?;
    Ok(points.into_iter().map(PyGeoPoint).collect())
}

/// Times zone construction per size. Returns rows, the linear fit, and the CSV.
#[pyfunction]
#[pyo3(signature = (sizes = None, seed = 2021))]
fn run_benchmark<'py>(py: Python<'py>, sizes: Option<Vec<usize>>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let sizes = sizes.unwrap_or_else(|| DEFAULT_SIZES.to_vec());
    let report = py.detach(|| bench::run_benchmark(&sizes, seed)).map_err(bench_err)?;
    let rows: Vec<(usize, f64)> = report.rows.iter().map(|r| (r.data_size, r.runtime_ms)).collect();
    let d = PyDict::new(py);
    d.set_item("rows", rows)?;
    d.set_item("slope", report.fit.slope)?;
    d.set_item("intercept", report.fit.intercept)?;
    d.set_item("r_squared", report.fit.r_squared)?;
    d.set_item("csv", report.to_csv())?;
    Ok(d)
}

/// Index verdicts against a linear scan over random probes.
#[pyfunction]
#[pyo3(signature = (n_zones = 10_000, n_probes = 1_000, seed = 1))]
fn run_correctness<'py>(py: Python<'py>, n_zones: usize, n_probes: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let report = py
        .detach(|| bench::run_correctness(n_zones, n_probes, seed))
        .map_err(bench_err)?;
    let d = PyDict::new(py);
    d.set_item("probes", report.probes)?;
    d.set_item("agreements", report.agreements)?;
    d.set_item("disagreements", report.disagreements.len())?;
    d.set_item("unsafe", report.unsafe_count())?;
    d.set_item("csv", report.to_csv())?;
    d.set_item("report_lines", report.report_lines())?;
    Ok(d)
}

#[pymodule]
fn geosafe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGeoPoint>()?;
    m.add_class::<PyZoneParameters>()?;
    m.add_class::<PyUnsafeZone>()?;
    m.add_class::<PySafetyVerdict>()?;
    m.add_class::<PyGridIndex>()?;
    m.add_function(wrap_pyfunction!(haversine_distance_m, m)?)?;
    m.add_function(wrap_pyfunction!(destination_point, m)?)?;
    m.add_function(wrap_pyfunction!(make_zone, m)?)?;
    m.add_function(wrap_pyfunction!(algorithm1_verbatim, m)?)?;
    m.add_function(wrap_pyfunction!(classify_point, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(run_correctness, m)?)?;
    m.add("EARTH_RADIUS_M", geo::EARTH_RADIUS_M)?;
    Ok(())
}
