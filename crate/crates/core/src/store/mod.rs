//! Durable registry of participants, patients, reports, zones and alerts.
//!
//! Every mutating operation validates against the current state, appends one
//! committed transaction to the log, and only then applies the records in
//! memory. Replaying the log (on top of the latest snapshot) goes through the
//! same `apply` path, so a restart rebuilds exactly the committed state.

mod log;
mod model;
mod record;
mod secret;
mod state;

use std::path::Path;

use chrono::{DateTime, Utc};
use thiserror::Error;

pub use self::log::{
    decode_line, encode_line, parse_log, LogError, LOG_FILE, SNAPSHOT_FILE, SNAPSHOT_HEADER,
};
pub use self::model::{
    BloodGroup, Credential, LocationReport, Notification, OperatorAccount, PatientRecord, PatientStatus,
    Principal, Registration, Role, SubjectIdentity, TestAudit, TestResult, TimedLocation, TokenGrant,
    TrackingRequest, UserAccount, UserProfile, ZoneGeometry, ZoneRecord,
};
pub use self::record::Record;
pub use self::secret::{token_digest, valid_nid};
pub use self::state::{IntegrityError, RegistryState};

use self::log::LogFile;
use self::record::{Delivered, PatientRecovered, PatientVerified, UserLocated, ZoneDeactivated};
use crate::geo::{GeoError, GeoPoint, MAX_ZONE_LATITUDE_DEG};
use crate::ids::{NotificationId, PatientId, ReportId, TestId, UserId, ZoneId};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("role {actual} may not perform this operation (requires {required})")]
    Forbidden { required: Role, actual: Role },
    #[error("invalid username or password")]
    InvalidLogin,
    #[error("username {0:?} is already registered")]
    DuplicateUsername(String),
    #[error("NID must be 10, 13 or 17 digits")]
    MalformedNid,
    #[error("unknown blood group {0:?}")]
    InvalidBloodGroup(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("patient {0} has recovered")]
    PatientRecovered(PatientId),
    #[error("patient {0} awaits government confirmation")]
    PatientUnverified(PatientId),
    #[error("patient {0} is already confirmed")]
    AlreadyVerified(PatientId),
    #[error("timestamp {got} is older than the latest recorded {latest}")]
    StaleTimestamp { got: DateTime<Utc>, latest: DateTime<Utc> },
    #[error("report {0} already produced a zone")]
    ReportAlreadyProcessed(ReportId),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Log(LogError::Io(e))
    }
}

pub type StoreResult<T> = Result<T, StoreError>;

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// fsync after every transaction.
    pub sync: bool,
    /// Write a snapshot and reset the log after this many transactions.
    pub snapshot_every: Option<u64>,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            sync: true,
            snapshot_every: Some(1000),
        }
    }
}

#[derive(Debug)]
pub struct Registry {
    state: RegistryState,
    log: Option<LogFile>,
    log_len: u64,
    opts: StoreOptions,
    since_snapshot: u64,
}

fn require(cred: &Credential, role: Role) -> StoreResult<()> {
    if cred.role == role {
        Ok(())
    } else {
        Err(StoreError::Forbidden {
            required: role,
            actual: cred.role,
        })
    }
}

fn non_empty(field: &str, value: &str) -> StoreResult<String> {
    let v = value.trim();
    if v.is_empty() {
        Err(StoreError::Invalid(format!("{field} must not be empty")))
    } else {
        Ok(v.to_string())
    }
}

pub const NOTIFICATION_MESSAGE: &str = "You are near an unsafe area. Move outside the marked circle and keep at least 1.8 m (6 ft) from others.";

impl Registry {
    /// A registry without a backing log.
    pub fn in_memory() -> Self {
        Self {
            state: RegistryState::default(),
            log: None,
            log_len: 0,
            opts: StoreOptions::default(),
            since_snapshot: 0,
        }
    }

    /// Opens the registry stored in `dir`: loads the snapshot if present, then
    /// replays committed log transactions newer than it.
    pub fn open(dir: &Path, opts: StoreOptions) -> StoreResult<Self> {
        let mut state = match log::read_snapshot(dir)? {
            Some((seq, records)) => RegistryState::from_records(seq, records)?,
            None => RegistryState::default(),
        };
        let (log, recovered) = LogFile::open(dir, opts.sync)?;
        let mut replayed = 0u64;
        for (seq, records) in recovered.transactions {
            if seq <= state.seq {
                continue;
            }
            for r in records {
                state.apply(r)?;
            }
            state.seq = seq;
            replayed += 1;
        }
        tracing::info!(seq = state.seq, replayed, "registry opened");
        Ok(Self {
            state,
            log: Some(log),
            log_len: recovered.valid_len,
            opts,
            since_snapshot: replayed,
        })
    }

    pub fn state(&self) -> &RegistryState {
        &self.state
    }

    fn commit(&mut self, records: Vec<Record>) -> StoreResult<()> {
        let seq = self.state.seq + 1;
        if let Some(log) = self.log.as_mut() {
            let chunk = log::encode_transaction(seq, &records);
            if let Err(e) = log.append(&chunk) {
                // drop whatever part of the transaction reached the file
                let _ = log.truncate_to(self.log_len);
                return Err(e.into());
            }
            self.log_len += chunk.len() as u64;
        }
        for r in records {
            self.state.apply(r)?;
        }
        self.state.seq = seq;
        self.since_snapshot += 1;
        if self.opts.snapshot_every.is_some_and(|n| self.since_snapshot >= n) {
            if let Err(e) = self.snapshot() {
                tracing::error!(error = %e, "snapshot failed");
            }
        }
        Ok(())
    }

    /// Writes a full snapshot and resets the log.
    pub fn snapshot(&mut self) -> StoreResult<()> {
        let Some(log) = self.log.as_mut() else {
            return Ok(());
        };
        log::write_snapshot(log.dir(), self.state.seq, &self.state.to_records())?;
        log.truncate()?;
        self.log_len = 0;
        self.since_snapshot = 0;
        Ok(())
    }

    pub fn create_operator(
        &mut self,
        name: &str,
        role: Role,
        password: &str,
        now: DateTime<Utc>,
    ) -> StoreResult<OperatorAccount> {
        if role == Role::User {
            return Err(StoreError::Invalid("operators cannot hold the User role".into()));
        }
        let name = non_empty("name", name)?;
        if password.is_empty() {
            return Err(StoreError::Invalid("password must not be empty".into()));
        }
        if self.state.logins.contains_key(&name) {
            return Err(StoreError::DuplicateUsername(name));
        }
        let op = OperatorAccount {
            principal_id: crate::ids::PrincipalId(self.state.counters.operator + 1),
            name,
            role,
            password_digest: secret::hash_password(password),
            created_at: now,
        };
        self.commit(vec![Record::Operator(op.clone())])?;
        Ok(op)
    }

    pub fn register_user(&mut self, reg: &Registration, now: DateTime<Utc>) -> StoreResult<UserAccount> {
        let full_name = non_empty("full_name", &reg.full_name)?;
        let username = non_empty("username", &reg.username)?;
        if reg.password.is_empty() {
            return Err(StoreError::Invalid("password must not be empty".into()));
        }
        if self.state.logins.contains_key(&username) {
            return Err(StoreError::DuplicateUsername(username));
        }
        let nid = reg.nid.trim();
        if !valid_nid(nid) {
            return Err(StoreError::MalformedNid);
        }
        let blood_group = reg
            .blood_group
            .parse::<BloodGroup>()
            .map_err(|_| StoreError::InvalidBloodGroup(reg.blood_group.clone()))?;
        let user = UserAccount {
            user_id: UserId(self.state.counters.user + 1),
            full_name,
            username,
            password_digest: secret::hash_password(&reg.password),
            nid_digest: secret::digest_identity(nid),
            blood_group,
            infection_date: reg.infection_date,
            registered_at: now,
            last_location: None,
        };
        self.commit(vec![Record::User(user.clone())])?;
        Ok(user)
    }

    /// Verifies a username/password and issues a fresh bearer token.
    pub fn login(&mut self, username: &str, password: &str, now: DateTime<Utc>) -> StoreResult<(String, Credential)> {
        let credential = match self.state.logins.get(username.trim()) {
            Some(Principal::User(id)) => {
                let u = &self.state.users[id];
                secret::verify_password(password, &u.password_digest).then_some(Credential {
                    role: Role::User,
                    principal: Principal::User(*id),
                })
            }
            Some(Principal::Operator(id)) => {
                let op = &self.state.operators[id];
                secret::verify_password(password, &op.password_digest).then_some(Credential {
                    role: op.role,
                    principal: Principal::Operator(*id),
                })
            }
            None => None,
        }
        .ok_or(StoreError::InvalidLogin)?;
        let token = secret::new_token();
        self.commit(vec![Record::Token(TokenGrant {
            token_digest: token_digest(&token),
            credential,
            issued_at: now,
        })])?;
        Ok((token, credential))
    }

    pub fn authenticate(&self, token: &str) -> Option<Credential> {
        self.state.credential_for_token(&token_digest(token))
    }

    fn validate_subject(&self, subject: &SubjectIdentity) -> StoreResult<Option<UserId>> {
        non_empty("full_name", &subject.full_name)?;
        if !valid_nid(subject.nid.trim()) {
            return Err(StoreError::MalformedNid);
        }
        match subject.username.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
            Some(name) => self
                .state
                .user_by_username(name)
                .map(|u| Some(u.user_id))
                .ok_or_else(|| StoreError::UnknownUser(name.to_string())),
            None => Ok(None),
        }
    }

    fn active_patient_for_user(&self, user: UserId) -> Option<&PatientRecord> {
        self.state
            .patients
            .values()
            .find(|p| p.user_id == Some(user) && p.status == PatientStatus::Active)
    }

    /// Records a test result from a health provider. A positive result creates
    /// an active patient and asks telecom providers to track them; a negative
    /// one leaves only an audit entry.
    pub fn submit_test_report(
        &mut self,
        cred: &Credential,
        subject: &SubjectIdentity,
        result: TestResult,
        now: DateTime<Utc>,
    ) -> StoreResult<Option<PatientRecord>> {
        require(cred, Role::HealthServiceProvider)?;
        let Principal::Operator(reporter) = cred.principal else {
            return Err(StoreError::Invalid("health provider credential without operator id".into()));
        };
        let user_id = self.validate_subject(subject)?;
        let mut audit = TestAudit {
            test_id: TestId(self.state.counters.test + 1),
            reported_by: reporter,
            subject_digest: secret::digest_identity(subject.nid.trim()),
            result,
            patient_id: None,
            at: now,
        };
        if result == TestResult::Negative {
            self.commit(vec![Record::Test(audit)])?;
            return Ok(None);
        }
        if let Some(existing) = user_id.and_then(|u| self.active_patient_for_user(u)).cloned() {
            audit.patient_id = Some(existing.patient_id);
            self.commit(vec![Record::Test(audit)])?;
            return Ok(Some(existing));
        }
        let patient = PatientRecord {
            patient_id: PatientId(self.state.counters.patient + 1),
            user_id,
            reported_by: cred.principal,
            status: PatientStatus::Active,
            confirmed_at: now,
            verified: true,
            last_observed_at: None,
        };
        audit.patient_id = Some(patient.patient_id);
        self.commit(vec![
            Record::Test(audit),
            Record::Patient(patient.clone()),
            Record::Tracking(TrackingRequest {
                patient_id: patient.patient_id,
                requested_at: now,
            }),
        ])?;
        Ok(Some(patient))
    }

    /// A citizen reporting an infected person. The record stays unverified
    /// (and untracked) until a government office confirms it.
    pub fn submit_citizen_report(
        &mut self,
        cred: &Credential,
        subject: &SubjectIdentity,
        now: DateTime<Utc>,
    ) -> StoreResult<PatientRecord> {
        require(cred, Role::User)?;
        let user_id = self.validate_subject(subject)?;
        let patient = PatientRecord {
            patient_id: PatientId(self.state.counters.patient + 1),
            user_id,
            reported_by: cred.principal,
            status: PatientStatus::Active,
            confirmed_at: now,
            verified: false,
            last_observed_at: None,
        };
        self.commit(vec![Record::Patient(patient.clone())])?;
        Ok(patient)
    }

    pub fn confirm_patient(
        &mut self,
        cred: &Credential,
        patient_id: PatientId,
        now: DateTime<Utc>,
    ) -> StoreResult<PatientRecord> {
        require(cred, Role::Government)?;
        let p = self.patient(patient_id)?;
        if p.status == PatientStatus::Recovered {
            return Err(StoreError::PatientRecovered(patient_id));
        }
        if p.verified {
            return Err(StoreError::AlreadyVerified(patient_id));
        }
        self.commit(vec![
            Record::PatientVerified(PatientVerified { patient_id, at: now }),
            Record::Tracking(TrackingRequest {
                patient_id,
                requested_at: now,
            }),
        ])?;
        Ok(self.state.patients[&patient_id].clone())
    }

    fn patient(&self, id: PatientId) -> StoreResult<&PatientRecord> {
        self.state.patients.get(&id).ok_or(StoreError::UnknownPatient(id))
    }

    /// Stores a telecom-supplied patient position. The caller turns the
    /// returned report into a zone.
    pub fn submit_patient_location(
        &mut self,
        cred: &Credential,
        patient_id: PatientId,
        position: GeoPoint,
        observed_at: DateTime<Utc>,
    ) -> StoreResult<LocationReport> {
        require(cred, Role::TelecomServiceProvider)?;
        let Principal::Operator(source) = cred.principal else {
            return Err(StoreError::Invalid("telecom credential without operator id".into()));
        };
        let p = self.patient(patient_id)?;
        if p.status == PatientStatus::Recovered {
            return Err(StoreError::PatientRecovered(patient_id));
        }
        if !p.verified {
            return Err(StoreError::PatientUnverified(patient_id));
        }
        if position.latitude().abs() > MAX_ZONE_LATITUDE_DEG {
            return Err(GeoError::PolarLatitude(position.latitude()).into());
        }
        if let Some(latest) = p.last_observed_at.filter(|t| observed_at < *t) {
            return Err(StoreError::StaleTimestamp {
                got: observed_at,
                latest,
            });
        }
        let report = LocationReport {
            report_id: ReportId(self.state.counters.report + 1),
            patient_id,
            position,
            observed_at,
            source,
        };
        self.commit(vec![Record::Location(report.clone())])?;
        Ok(report)
    }

    /// Marks an active patient recovered and deactivates their zones. Returns
    /// the ids of the zones that were switched off.
    pub fn mark_recovered(
        &mut self,
        cred: &Credential,
        patient_id: PatientId,
        now: DateTime<Utc>,
    ) -> StoreResult<(PatientRecord, Vec<ZoneId>)> {
        require(cred, Role::Government)?;
        if self.patient(patient_id)?.status == PatientStatus::Recovered {
            return Err(StoreError::PatientRecovered(patient_id));
        }
        let zones: Vec<ZoneId> = self
            .state
            .zones
            .values()
            .filter(|z| z.zone.patient_ref == patient_id && z.zone.active)
            .map(|z| z.zone.zone_id)
            .collect();
        let mut records = vec![Record::PatientRecovered(PatientRecovered { patient_id, at: now })];
        records.extend(
            zones
                .iter()
                .map(|&zone_id| Record::ZoneDeactivated(ZoneDeactivated { zone_id, at: now })),
        );
        self.commit(records)?;
        Ok((self.state.patients[&patient_id].clone(), zones))
    }

    fn user_of(&self, cred: &Credential) -> StoreResult<UserId> {
        require(cred, Role::User)?;
        match cred.principal {
            Principal::User(id) if self.state.users.contains_key(&id) => Ok(id),
            other => Err(StoreError::UnknownUser(other.to_string())),
        }
    }

    pub fn user_profile(&self, cred: &Credential) -> StoreResult<UserProfile> {
        let id = self.user_of(cred)?;
        Ok(UserProfile::from(&self.state.users[&id]))
    }

    pub fn record_user_location(
        &mut self,
        cred: &Credential,
        position: GeoPoint,
        observed_at: DateTime<Utc>,
    ) -> StoreResult<UserAccount> {
        let user_id = self.user_of(cred)?;
        if let Some(prev) = self.state.users[&user_id].last_location {
            if observed_at < prev.observed_at {
                return Err(StoreError::StaleTimestamp {
                    got: observed_at,
                    latest: prev.observed_at,
                });
            }
        }
        self.commit(vec![Record::UserLocated(UserLocated {
            user_id,
            location: TimedLocation { position, observed_at },
        })])?;
        Ok(self.state.users[&user_id].clone())
    }

    /// This user's notifications issued after `since`, newest first. All
    /// returned notifications are marked delivered.
    pub fn fetch_notifications(
        &mut self,
        cred: &Credential,
        since: Option<DateTime<Utc>>,
    ) -> StoreResult<Vec<Notification>> {
        let user_id = self.user_of(cred)?;
        let mut picked: Vec<&Notification> = self
            .state
            .notifications
            .values()
            .filter(|n| n.user_id == user_id && since.is_none_or(|s| n.issued_at > s))
            .collect();
        picked.sort_by(|a, b| {
            b.issued_at
                .cmp(&a.issued_at)
                .then(b.notification_id.cmp(&a.notification_id))
        });
        let ids: Vec<NotificationId> = picked.iter().map(|n| n.notification_id).collect();
        let undelivered: Vec<Record> = picked
            .iter()
            .filter(|n| !n.delivered)
            .map(|n| {
                Record::Delivered(Delivered {
                    notification_id: n.notification_id,
                })
            })
            .collect();
        if !undelivered.is_empty() {
            self.commit(undelivered)?;
        }
        Ok(ids
            .into_iter()
            .map(|id| self.state.notifications[&id].clone())
            .collect())
    }

    /// Open tracking requests (patients the government wants followed).
    pub fn tracking_requests(&self, cred: &Credential) -> StoreResult<Vec<TrackingRequest>> {
        require(cred, Role::TelecomServiceProvider)?;
        Ok(self.state.tracking.values().cloned().collect())
    }

    pub fn next_zone_id(&self) -> ZoneId {
        ZoneId(self.state.counters.zone + 1)
    }

    pub fn next_notification_id(&self, offset: u64) -> NotificationId {
        NotificationId(self.state.counters.notification + 1 + offset)
    }

    /// Persists a zone and its notifications as one transaction.
    pub fn commit_zone_event(&mut self, zone: ZoneRecord, notifications: Vec<Notification>) -> StoreResult<()> {
        if self.state.zone_by_report.contains_key(&zone.report_id) {
            return Err(StoreError::ReportAlreadyProcessed(zone.report_id));
        }
        let mut records = vec![Record::Zone(zone)];
        records.extend(notifications.into_iter().map(Record::Notification));
        self.commit(records)
    }

    /// Switches off zones (expiry sweep). Unknown or inactive ids are skipped.
    pub fn deactivate_zones(&mut self, ids: &[ZoneId], now: DateTime<Utc>) -> StoreResult<()> {
        let records: Vec<Record> = ids
            .iter()
            .filter(|id| self.state.zones.get(id).is_some_and(|z| z.zone.active))
            .map(|&zone_id| Record::ZoneDeactivated(ZoneDeactivated { zone_id, at: now }))
            .collect();
        if records.is_empty() {
            return Ok(());
        }
        self.commit(records)
    }
}

#[cfg(test)]
mod tests;
