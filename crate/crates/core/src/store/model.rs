use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::geo::{GeoPoint, UnsafeZone};
use crate::ids::{NotificationId, PatientId, PrincipalId, ReportId, TestId, UserId, ZoneId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    User,
    HealthServiceProvider,
    TelecomServiceProvider,
    Government,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::User,
        Role::HealthServiceProvider,
        Role::TelecomServiceProvider,
        Role::Government,
    ];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::User => "User",
            Role::HealthServiceProvider => "HealthServiceProvider",
            Role::TelecomServiceProvider => "TelecomServiceProvider",
            Role::Government => "Government",
        };
        f.write_str(s)
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "User" | "user" => Ok(Role::User),
            "HealthServiceProvider" | "hsp" | "HSP" => Ok(Role::HealthServiceProvider),
            "TelecomServiceProvider" | "tsp" | "TSP" => Ok(Role::TelecomServiceProvider),
            "Government" | "gov" | "government" => Ok(Role::Government),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// Who a credential belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id")]
pub enum Principal {
    User(UserId),
    Operator(PrincipalId),
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Principal::User(id) => id.fmt(f),
            Principal::Operator(id) => id.fmt(f),
        }
    }
}

/// An authenticated caller: exactly one role per credential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub role: Role,
    pub principal: Principal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BloodGroup {
    #[serde(rename = "A+")]
    APos,
    #[serde(rename = "A-")]
    ANeg,
    #[serde(rename = "B+")]
    BPos,
    #[serde(rename = "B-")]
    BNeg,
    #[serde(rename = "AB+")]
    AbPos,
    #[serde(rename = "AB-")]
    AbNeg,
    #[serde(rename = "O+")]
    OPos,
    #[serde(rename = "O-")]
    ONeg,
}

impl FromStr for BloodGroup {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // accept the typographic minus sign as well
        let s = s.trim().replace('\u{2212}', "-").to_ascii_uppercase();
        Ok(match s.as_str() {
            "A+" => BloodGroup::APos,
            "A-" => BloodGroup::ANeg,
            "B+" => BloodGroup::BPos,
            "B-" => BloodGroup::BNeg,
            "AB+" => BloodGroup::AbPos,
            "AB-" => BloodGroup::AbNeg,
            "O+" => BloodGroup::OPos,
            "O-" => BloodGroup::ONeg,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedLocation {
    pub position: GeoPoint,
    pub observed_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAccount {
    pub user_id: UserId,
    pub full_name: String,
    pub username: String,
    pub password_digest: String,
    pub nid_digest: String,
    pub blood_group: BloodGroup,
    pub infection_date: Option<NaiveDate>,
    pub registered_at: DateTime<Utc>,
    pub last_location: Option<TimedLocation>,
}

/// Public view of an account: no digests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub full_name: String,
    pub username: String,
    pub blood_group: BloodGroup,
    pub infection_date: Option<NaiveDate>,
    pub registered_at: DateTime<Utc>,
    pub last_location: Option<TimedLocation>,
}

impl From<&UserAccount> for UserProfile {
    fn from(u: &UserAccount) -> Self {
        UserProfile {
            user_id: u.user_id,
            full_name: u.full_name.clone(),
            username: u.username.clone(),
            blood_group: u.blood_group,
            infection_date: u.infection_date,
            registered_at: u.registered_at,
            last_location: u.last_location,
        }
    }
}

/// Health-provider, telecom or government login.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorAccount {
    pub principal_id: PrincipalId,
    pub name: String,
    pub role: Role,
    pub password_digest: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatientStatus {
    Active,
    Recovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: PatientId,
    pub user_id: Option<UserId>,
    pub reported_by: Principal,
    pub status: PatientStatus,
    pub confirmed_at: DateTime<Utc>,
    /// False for citizen-submitted reports until a government office confirms.
    pub verified: bool,
    pub last_observed_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestResult {
    Positive,
    Negative,
}

/// Audit trail entry for every submitted test; the subject is kept only as a
/// salted digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestAudit {
    pub test_id: TestId,
    pub reported_by: PrincipalId,
    pub subject_digest: String,
    pub result: TestResult,
    pub patient_id: Option<PatientId>,
    pub at: DateTime<Utc>,
}

/// Government request asking telecom providers to follow a patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingRequest {
    pub patient_id: PatientId,
    pub requested_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationReport {
    pub report_id: ReportId,
    pub patient_id: PatientId,
    pub position: GeoPoint,
    pub observed_at: DateTime<Utc>,
    pub source: PrincipalId,
}

/// A zone together with the event that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneRecord {
    pub zone: UnsafeZone,
    pub report_id: ReportId,
    /// Radius used for the notification fan-out (zone radius plus buffer).
    pub notify_radius_m: f64,
}

/// Zone geometry as shown to any caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneGeometry {
    pub zone_id: ZoneId,
    pub center: GeoPoint,
    pub radius_m: f64,
    pub created_at: DateTime<Utc>,
}

impl From<&UnsafeZone> for ZoneGeometry {
    fn from(z: &UnsafeZone) -> Self {
        ZoneGeometry {
            zone_id: z.zone_id,
            center: z.center,
            radius_m: z.radius_m,
            created_at: z.created_at,
        }
    }
}

/// Proximity alert. Carries zone geometry only, nothing about the patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub notification_id: NotificationId,
    pub user_id: UserId,
    pub zone_id: ZoneId,
    pub zone_center: GeoPoint,
    pub zone_radius_m: f64,
    pub distance_m: f64,
    pub issued_at: DateTime<Utc>,
    pub message: String,
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrant {
    /// SHA-256 of the bearer token; the token itself is never stored.
    pub token_digest: String,
    pub credential: Credential,
    pub issued_at: DateTime<Utc>,
}

/// Identity fields of a tested person, as submitted by a health provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectIdentity {
    pub full_name: String,
    pub nid: String,
    /// Links the patient to a registered account when given.
    #[serde(default)]
    pub username: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub full_name: String,
    pub username: String,
    pub password: String,
    pub nid: String,
    pub blood_group: String,
    #[serde(default)]
    pub infection_date: Option<NaiveDate>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blood_groups_parse() {
        assert_eq!("AB+".parse::<BloodGroup>(), Ok(BloodGroup::AbPos));
        assert_eq!("o\u{2212}".parse::<BloodGroup>(), Ok(BloodGroup::ONeg));
        assert!("C+".parse::<BloodGroup>().is_err());
        assert_eq!(serde_json::to_string(&BloodGroup::BNeg).unwrap(), "\"B-\"");
    }

    #[test]
    fn roles_parse() {
        for r in Role::ALL {
            assert_eq!(r.to_string().parse::<Role>(), Ok(r));
        }
        assert_eq!("tsp".parse::<Role>(), Ok(Role::TelecomServiceProvider));
    }
}
