//! In-memory registry state and the record application rules.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Utc};

use super::model::{
    Credential, LocationReport, Notification, OperatorAccount, PatientRecord, PatientStatus, Principal, TestAudit,
    TokenGrant, TrackingRequest, UserAccount, ZoneRecord,
};
use super::record::{Delivered, PatientRecovered, PatientVerified, Record, UserLocated, ZoneDeactivated};
use crate::ids::{NotificationId, PatientId, PrincipalId, ReportId, TestId, UserId, ZoneId};

/// Highest id handed out so far for each kind.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub user: u64,
    pub operator: u64,
    pub patient: u64,
    pub report: u64,
    pub zone: u64,
    pub notification: u64,
    pub test: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegistryState {
    pub seq: u64,
    pub counters: Counters,
    pub operators: BTreeMap<PrincipalId, OperatorAccount>,
    pub users: BTreeMap<UserId, UserAccount>,
    pub logins: HashMap<String, Principal>,
    pub tokens: BTreeMap<String, TokenGrant>,
    pub tests: BTreeMap<TestId, TestAudit>,
    pub patients: BTreeMap<PatientId, PatientRecord>,
    pub tracking: BTreeMap<PatientId, TrackingRequest>,
    pub reports: BTreeMap<ReportId, LocationReport>,
    pub zones: BTreeMap<ZoneId, ZoneRecord>,
    pub zone_by_report: HashMap<ReportId, ZoneId>,
    pub notifications: BTreeMap<NotificationId, Notification>,
    pub notified: BTreeSet<(UserId, ZoneId)>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("record {tag} violates registry integrity: {reason}")]
pub struct IntegrityError {
    pub tag: &'static str,
    pub reason: String,
}

impl RegistryState {
    pub fn credential_for_token(&self, digest: &str) -> Option<Credential> {
        self.tokens.get(digest).map(|g| g.credential)
    }

    pub fn user_by_username(&self, username: &str) -> Option<&UserAccount> {
        match self.logins.get(username) {
            Some(Principal::User(id)) => self.users.get(id),
            _ => None,
        }
    }

    pub fn zone_for_report(&self, report: ReportId) -> Option<&ZoneRecord> {
        self.zone_by_report.get(&report).and_then(|z| self.zones.get(z))
    }

    pub fn live_zones(&self, now: DateTime<Utc>) -> impl Iterator<Item = &ZoneRecord> + '_ {
        self.zones.values().filter(move |z| z.zone.is_live(now))
    }

    /// Location reports that have not yet produced a zone.
    pub fn pending_reports(&self) -> impl Iterator<Item = &LocationReport> + '_ {
        self.reports
            .values()
            .filter(|r| !self.zone_by_report.contains_key(&r.report_id))
    }

    /// Applies one record. Replay and live commits go through the same path.
    pub fn apply(&mut self, record: Record) -> Result<(), IntegrityError> {
        let tag = record.tag();
        let fail = |reason: String| Err(IntegrityError { tag, reason });
        match record {
            Record::Commit(_) | Record::Meta(_) | Record::End(_) => {}
            Record::Operator(op) => {
                if self.logins.contains_key(&op.name) {
                    return fail(format!("login {} already taken", op.name));
                }
                self.counters.operator = self.counters.operator.max(op.principal_id.0);
                self.logins.insert(op.name.clone(), Principal::Operator(op.principal_id));
                self.operators.insert(op.principal_id, op);
            }
            Record::User(user) => {
                if self.logins.contains_key(&user.username) {
                    return fail(format!("login {} already taken", user.username));
                }
                self.counters.user = self.counters.user.max(user.user_id.0);
                self.logins.insert(user.username.clone(), Principal::User(user.user_id));
                self.users.insert(user.user_id, user);
            }
            Record::Token(grant) => {
                if !self.principal_exists(grant.credential.principal) {
                    return fail(format!("unknown principal {}", grant.credential.principal));
                }
                self.tokens.insert(grant.token_digest.clone(), grant);
            }
            Record::Test(audit) => {
                self.counters.test = self.counters.test.max(audit.test_id.0);
                self.tests.insert(audit.test_id, audit);
            }
            Record::Patient(p) => {
                if let Some(u) = p.user_id {
                    if !self.users.contains_key(&u) {
                        return fail(format!("unknown user {u}"));
                    }
                }
                self.counters.patient = self.counters.patient.max(p.patient_id.0);
                self.patients.insert(p.patient_id, p);
            }
            Record::PatientVerified(PatientVerified { patient_id, .. }) => match self.patients.get_mut(&patient_id) {
                Some(p) => p.verified = true,
                None => return fail(format!("unknown patient {patient_id}")),
            },
            Record::PatientRecovered(PatientRecovered { patient_id, .. }) => match self.patients.get_mut(&patient_id) {
                Some(p) if p.status == PatientStatus::Active => {
                    p.status = PatientStatus::Recovered;
                    self.tracking.remove(&patient_id);
                }
                Some(_) => return fail(format!("patient {patient_id} already recovered")),
                None => return fail(format!("unknown patient {patient_id}")),
            },
            Record::Tracking(t) => {
                if !self.patients.contains_key(&t.patient_id) {
                    return fail(format!("unknown patient {}", t.patient_id));
                }
                self.tracking.insert(t.patient_id, t);
            }
            Record::Location(r) => {
                let Some(p) = self.patients.get_mut(&r.patient_id) else {
                    return fail(format!("unknown patient {}", r.patient_id));
                };
                p.last_observed_at = Some(p.last_observed_at.map_or(r.observed_at, |t| t.max(r.observed_at)));
                self.counters.report = self.counters.report.max(r.report_id.0);
                self.reports.insert(r.report_id, r);
            }
            Record::Zone(z) => {
                if !self.reports.contains_key(&z.report_id) {
                    return fail(format!("unknown report {}", z.report_id));
                }
                if !self.patients.contains_key(&z.zone.patient_ref) {
                    return fail(format!("unknown patient {}", z.zone.patient_ref));
                }
                if self.zone_by_report.contains_key(&z.report_id) {
                    return fail(format!("report {} already has a zone", z.report_id));
                }
                self.counters.zone = self.counters.zone.max(z.zone.zone_id.0);
                self.zone_by_report.insert(z.report_id, z.zone.zone_id);
                self.zones.insert(z.zone.zone_id, z);
            }
            Record::ZoneDeactivated(ZoneDeactivated { zone_id, .. }) => match self.zones.get_mut(&zone_id) {
                Some(z) => z.zone.active = false,
                None => return fail(format!("unknown zone {zone_id}")),
            },
            Record::Notification(n) => {
                if !self.users.contains_key(&n.user_id) {
                    return fail(format!("unknown user {}", n.user_id));
                }
                if !self.zones.contains_key(&n.zone_id) {
                    return fail(format!("unknown zone {}", n.zone_id));
                }
                if !self.notified.insert((n.user_id, n.zone_id)) {
                    return fail(format!("{} already notified about {}", n.user_id, n.zone_id));
                }
                self.counters.notification = self.counters.notification.max(n.notification_id.0);
                self.notifications.insert(n.notification_id, n);
            }
            Record::Delivered(Delivered { notification_id }) => match self.notifications.get_mut(&notification_id) {
                Some(n) => n.delivered = true,
                None => return fail(format!("unknown notification {notification_id}")),
            },
            Record::UserLocated(UserLocated { user_id, location }) => match self.users.get_mut(&user_id) {
                Some(u) => u.last_location = Some(location),
                None => return fail(format!("unknown user {user_id}")),
            },
        }
        Ok(())
    }

    fn principal_exists(&self, p: Principal) -> bool {
        match p {
            Principal::User(id) => self.users.contains_key(&id),
            Principal::Operator(id) => self.operators.contains_key(&id),
        }
    }

    /// Full state as records in a canonical order; applying them to an empty
    /// state reproduces this one.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::new();
        out.extend(self.operators.values().cloned().map(Record::Operator));
        out.extend(self.users.values().cloned().map(Record::User));
        out.extend(self.tokens.values().cloned().map(Record::Token));
        out.extend(self.tests.values().cloned().map(Record::Test));
        out.extend(self.patients.values().cloned().map(Record::Patient));
        out.extend(self.tracking.values().cloned().map(Record::Tracking));
        out.extend(self.reports.values().cloned().map(Record::Location));
        out.extend(self.zones.values().cloned().map(Record::Zone));
        out.extend(self.notifications.values().cloned().map(Record::Notification));
        out
    }

    /// Canonical text rendering of the whole state, for equality checks.
    pub fn canonical_dump(&self) -> String {
        super::log::encode_snapshot(self.seq, &self.to_records())
    }

    pub fn from_records(seq: u64, records: Vec<Record>) -> Result<Self, IntegrityError> {
        let mut state = RegistryState::default();
        for r in records {
            state.apply(r)?;
        }
        state.seq = seq;
        Ok(state)
    }
}
