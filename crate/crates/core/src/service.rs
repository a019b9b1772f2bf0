//! Contact-tracing workflow: authenticated roles, zone creation from location
//! reports, proximity fan-out and safety queries.
//!
//! The registry and both grid indexes live behind a single lock. Writers hold
//! it exclusively for the whole operation, so readers observe either the state
//! before or after a mutation and never a half-applied event.

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::broadcast;

use crate::config::ServiceConfig;
use crate::geo::{find_unsafe_area, BoundingBox, GeoError, GeoPoint, SafetyVerdict, UnsafeZone, ZoneParameters};
use crate::ids::{PatientId, ReportId, UserId, ZoneId};
use crate::index::{GridIndex, IndexError};
use crate::store::{
    Credential, LocationReport, Notification, PatientRecord, Principal, Registration, Registry, RegistryState,
    StoreError, SubjectIdentity, TestResult, TrackingRequest, UserProfile, ZoneGeometry, ZoneRecord,
    NOTIFICATION_MESSAGE,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("missing or unknown bearer token")]
    Unauthenticated,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("index failure: {0}")]
    Index(#[from] IndexError),
    #[error("unknown report {0}")]
    UnknownReport(ReportId),
}

pub type ServiceResult<T> = Result<T, ServiceError>;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.0.lock() = t;
    }

    pub fn advance(&self, by: chrono::Duration) {
        *self.0.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

/// A bearer token with the credential it resolves to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiCredential {
    pub token: String,
    pub credential: Credential,
}

/// Outcome of turning a location report into a zone.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneEvent {
    pub zone: UnsafeZone,
    pub report_id: ReportId,
    pub notify_radius_m: f64,
    pub notified_user_ids: BTreeSet<UserId>,
    /// False when the report had already been processed.
    pub created: bool,
}

/// What a telecom client is told about the event it triggered.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneEventSummary {
    pub zone: ZoneGeometry,
    pub report_id: ReportId,
    pub notify_radius_m: f64,
    pub notified_users: usize,
    pub created: bool,
}

impl From<&ZoneEvent> for ZoneEventSummary {
    fn from(e: &ZoneEvent) -> Self {
        ZoneEventSummary {
            zone: ZoneGeometry::from(&e.zone),
            report_id: e.report_id,
            notify_radius_m: e.notify_radius_m,
            notified_users: e.notified_user_ids.len(),
            created: e.created,
        }
    }
}

struct Inner {
    registry: Registry,
    zones: GridIndex<ZoneId>,
    users: GridIndex<UserId>,
}

impl Inner {
    fn live(&self, id: ZoneId, now: DateTime<Utc>) -> bool {
        self.registry
            .state()
            .zones
            .get(&id)
            .is_some_and(|z| z.zone.is_live(now))
    }

    /// Drops zones whose lifetime ran out.
    fn sweep_expired(&mut self, now: DateTime<Utc>) -> ServiceResult<()> {
        let expired: Vec<ZoneId> = self
            .zones
            .ids()
            .filter(|id| !self.live(*id, now))
            .collect();
        if expired.is_empty() {
            return Ok(());
        }
        self.registry.deactivate_zones(&expired, now)?;
        for id in expired {
            self.zones.remove(id)?;
        }
        Ok(())
    }

    fn event_for(&self, report_id: ReportId) -> Option<ZoneEvent> {
        let state = self.registry.state();
        let rec = state.zone_for_report(report_id)?;
        let notified = state
            .notifications
            .values()
            .filter(|n| n.zone_id == rec.zone.zone_id)
            .map(|n| n.user_id)
            .collect();
        Some(ZoneEvent {
            zone: rec.zone.clone(),
            report_id,
            notify_radius_m: rec.notify_radius_m,
            notified_user_ids: notified,
            created: false,
        })
    }

    fn process_report(
        &mut self,
        report: &LocationReport,
        params: &ZoneParameters,
        now: DateTime<Utc>,
    ) -> ServiceResult<(ZoneEvent, Vec<Notification>)> {
        if let Some(existing) = self.event_for(report.report_id) {
            return Ok((existing, Vec::new()));
        }
        let zone = find_unsafe_area(
            self.registry.next_zone_id(),
            report.position,
            params,
            report.patient_id,
            now,
        )?;
        let notify_radius_m = params.notify_radius_m();
        let notifications: Vec<Notification> = self
            .users
            .query_disc_with_distance(zone.center, notify_radius_m)
            .into_iter()
            .enumerate()
            .map(|(i, (user_id, distance_m))| Notification {
                notification_id: self.registry.next_notification_id(i as u64),
                user_id,
                zone_id: zone.zone_id,
                zone_center: zone.center,
                zone_radius_m: zone.radius_m,
                distance_m,
                issued_at: now,
                message: NOTIFICATION_MESSAGE.to_string(),
                delivered: false,
            })
            .collect();

        self.zones.insert(zone.zone_id, zone.center, zone.radius_m)?;
        let record = ZoneRecord {
            zone: zone.clone(),
            report_id: report.report_id,
            notify_radius_m,
        };
        if let Err(e) = self.registry.commit_zone_event(record, notifications.clone()) {
            let _ = self.zones.remove(zone.zone_id);
            return Err(e.into());
        }
        let event = ZoneEvent {
            zone,
            report_id: report.report_id,
            notify_radius_m,
            notified_user_ids: notifications.iter().map(|n| n.user_id).collect(),
            created: true,
        };
        Ok((event, notifications))
    }
}

pub struct TracingService {
    inner: RwLock<Inner>,
    params: ZoneParameters,
    clock: Arc<dyn Clock>,
    events: broadcast::Sender<Notification>,
}

impl TracingService {
    /// Opens the registry (or an in-memory one when `db_path` is unset),
    /// rebuilds both indexes, creates configured operator accounts, and
    /// finishes any location report that never produced a zone.
    pub fn open(config: &ServiceConfig, clock: Arc<dyn Clock>) -> ServiceResult<Self> {
        config.params.validate()?;
        let registry = match &config.db_path {
            Some(dir) => Registry::open(dir, config.store)?,
            None => Registry::in_memory(),
        };
        let mut inner = Inner {
            zones: GridIndex::new(config.cell_size_deg)?,
            users: GridIndex::new(config.cell_size_deg)?,
            registry,
        };
        let now = clock.now();
        {
            let state = inner.registry.state();
            for rec in state.live_zones(now) {
                inner.zones.insert(rec.zone.zone_id, rec.zone.center, rec.zone.radius_m)?;
            }
            for user in state.users.values() {
                if let Some(loc) = user.last_location {
                    inner.users.insert(user.user_id, loc.position, 0.0)?;
                }
            }
        }
        for op in &config.operators {
            if !inner.registry.state().logins.contains_key(&op.name) {
                inner.registry.create_operator(&op.name, op.role, &op.password, now)?;
            }
        }
        let pending: Vec<LocationReport> = inner.registry.state().pending_reports().cloned().collect();
        for report in pending {
            tracing::info!(report = %report.report_id, "resuming unprocessed location report");
            inner.process_report(&report, &config.params, now)?;
        }
        inner.sweep_expired(now)?;

        let (events, _) = broadcast::channel(1024);
        Ok(Self {
            inner: RwLock::new(inner),
            params: config.params,
            clock,
            events,
        })
    }

    pub fn params(&self) -> &ZoneParameters {
        &self.params
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Notification> {
        self.events.subscribe()
    }

    pub fn authenticate(&self, token: &str) -> ServiceResult<ApiCredential> {
        let credential = self
            .inner
            .read()
            .registry
            .authenticate(token)
            .ok_or(ServiceError::Unauthenticated)?;
        Ok(ApiCredential {
            token: token.to_string(),
            credential,
        })
    }

    pub fn register_user(&self, reg: &Registration) -> ServiceResult<UserProfile> {
        let now = self.now();
        let user = self.inner.write().registry.register_user(reg, now)?;
        Ok(UserProfile::from(&user))
    }

    pub fn login(&self, username: &str, password: &str) -> ServiceResult<ApiCredential> {
        let now = self.now();
        let (token, credential) = self.inner.write().registry.login(username, password, now)?;
        Ok(ApiCredential { token, credential })
    }

    pub fn submit_test_report(
        &self,
        cred: &Credential,
        subject: &SubjectIdentity,
        result: TestResult,
    ) -> ServiceResult<Option<PatientRecord>> {
        let now = self.now();
        Ok(self.inner.write().registry.submit_test_report(cred, subject, result, now)?)
    }

    pub fn submit_citizen_report(&self, cred: &Credential, subject: &SubjectIdentity) -> ServiceResult<PatientRecord> {
        let now = self.now();
        Ok(self.inner.write().registry.submit_citizen_report(cred, subject, now)?)
    }

    pub fn confirm_patient(&self, cred: &Credential, patient: PatientId) -> ServiceResult<PatientRecord> {
        let now = self.now();
        Ok(self.inner.write().registry.confirm_patient(cred, patient, now)?)
    }

    pub fn tracking_requests(&self, cred: &Credential) -> ServiceResult<Vec<TrackingRequest>> {
        Ok(self.inner.read().registry.tracking_requests(cred)?)
    }

    /// Stores the report and immediately turns it into a zone, under one lock.
    pub fn submit_patient_location(
        &self,
        cred: &Credential,
        patient: PatientId,
        position: GeoPoint,
        observed_at: DateTime<Utc>,
    ) -> ServiceResult<(LocationReport, ZoneEvent)> {
        let now = self.now();
        let (report, event, sent) = {
            let mut inner = self.inner.write();
            inner.sweep_expired(now)?;
            let report = inner
                .registry
                .submit_patient_location(cred, patient, position, observed_at)?;
            let (event, sent) = inner.process_report(&report, &self.params, now)?;
            (report, event, sent)
        };
        self.publish(sent);
        Ok((report, event))
    }

    /// Builds the zone for a stored report and notifies nearby users.
    /// Re-delivering the same report returns the original event unchanged.
    pub fn on_location_report(&self, report_id: ReportId) -> ServiceResult<ZoneEvent> {
        let now = self.now();
        let (event, sent) = {
            let mut inner = self.inner.write();
            let report = inner
                .registry
                .state()
                .reports
                .get(&report_id)
                .cloned()
                .ok_or(ServiceError::UnknownReport(report_id))?;
            inner.sweep_expired(now)?;
            inner.process_report(&report, &self.params, now)?
        };
        self.publish(sent);
        Ok(event)
    }

    fn publish(&self, sent: Vec<Notification>) {
        for n in sent {
            // no subscribers is fine
            let _ = self.events.send(n);
        }
    }

    pub fn mark_recovered(&self, cred: &Credential, patient: PatientId) -> ServiceResult<PatientRecord> {
        let now = self.now();
        let mut inner = self.inner.write();
        let (record, zones) = inner.registry.mark_recovered(cred, patient, now)?;
        for id in zones {
            if inner.zones.contains(id) {
                inner.zones.remove(id)?;
            }
        }
        Ok(record)
    }

    pub fn record_user_location(
        &self,
        cred: &Credential,
        position: GeoPoint,
        observed_at: DateTime<Utc>,
    ) -> ServiceResult<UserProfile> {
        let mut inner = self.inner.write();
        let user = inner.registry.record_user_location(cred, position, observed_at)?;
        if inner.users.contains(user.user_id) {
            inner.users.remove(user.user_id)?;
        }
        inner.users.insert(user.user_id, position, 0.0)?;
        Ok(UserProfile::from(&user))
    }

    pub fn user_profile(&self, cred: &Credential) -> ServiceResult<UserProfile> {
        Ok(self.inner.read().registry.user_profile(cred)?)
    }

    pub fn fetch_notifications(
        &self,
        cred: &Credential,
        since: Option<DateTime<Utc>>,
    ) -> ServiceResult<Vec<Notification>> {
        Ok(self.inner.write().registry.fetch_notifications(cred, since)?)
    }

    /// Safe/unsafe verdict for `p` against all live zones, via the zone index.
    pub fn safety_query(&self, p: GeoPoint) -> SafetyVerdict {
        let now = self.now();
        let inner = self.inner.read();
        let containing = inner
            .zones
            .query_point_with_distance(p)
            .into_iter()
            .filter(|(id, _)| inner.live(*id, now))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(id, _)| id);
        let nearest = inner.zones.nearest_where(p, |id| inner.live(id, now)).map(|(_, d)| d);
        SafetyVerdict::from_parts(containing, nearest)
    }

    /// Live zones whose disc touches `bbox`, without patient references.
    pub fn list_zones(&self, bbox: &BoundingBox) -> Vec<ZoneGeometry> {
        let now = self.now();
        let inner = self.inner.read();
        let state = inner.registry.state();
        inner
            .zones
            .candidates_in_box(bbox)
            .into_iter()
            .filter_map(|id| state.zones.get(&id))
            .filter(|z| z.zone.is_live(now) && bbox.intersects_disc(z.zone.center, z.zone.radius_m))
            .map(|z| ZoneGeometry::from(&z.zone))
            .collect()
    }

    /// All live zones, for exhaustive cross-checks.
    pub fn live_zones(&self) -> Vec<UnsafeZone> {
        let now = self.now();
        self.inner
            .read()
            .registry
            .state()
            .live_zones(now)
            .map(|z| z.zone.clone())
            .collect()
    }

    /// Runs `f` against a consistent view of the registry.
    pub fn with_state<R>(&self, f: impl FnOnce(&RegistryState) -> R) -> R {
        f(self.inner.read().registry.state())
    }

    pub fn snapshot(&self) -> ServiceResult<()> {
        Ok(self.inner.write().registry.snapshot()?)
    }

    pub fn user_of(cred: &Credential) -> Option<UserId> {
        match cred.principal {
            Principal::User(id) => Some(id),
            Principal::Operator(_) => None,
        }
    }
}
