//! Log records. Each variant has a short tag and a JSON body.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::log::{encode_line, LineError};
use super::model::{
    LocationReport, Notification, OperatorAccount, PatientRecord, TestAudit, TimedLocation, TokenGrant,
    TrackingRequest, UserAccount, ZoneRecord,
};
use crate::ids::{NotificationId, PatientId, UserId, ZoneId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commit {
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct End {
    pub records: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientVerified {
    pub patient_id: PatientId,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecovered {
    pub patient_id: PatientId,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneDeactivated {
    pub zone_id: ZoneId,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivered {
    pub notification_id: NotificationId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLocated {
    pub user_id: UserId,
    pub location: TimedLocation,
}

macro_rules! records {
    ($($variant:ident($payload:ty) = $tag:literal,)+) => {
        #[derive(Debug, Clone, PartialEq)]
        pub enum Record {
            $($variant($payload),)+
        }

        impl Record {
            pub fn tag(&self) -> &'static str {
                match self {
                    $(Record::$variant(_) => $tag,)+
                }
            }

            fn body(&self) -> String {
                match self {
                    $(Record::$variant(p) => serde_json::to_string(p),)+
                }
                .expect("record bodies always serialize")
            }

            pub fn decode(tag: &str, body: &str) -> Result<Record, LineError> {
                match tag {
                    $($tag => serde_json::from_str(body)
                        .map(Record::$variant)
                        .map_err(|e| LineError::Body(e.to_string())),)+
                    other => Err(LineError::UnknownTag(other.to_string())),
                }
            }
        }
    };
}

records! {
    Commit(Commit) = "commit",
    Meta(Meta) = "meta",
    End(End) = "end",
    Operator(OperatorAccount) = "operator",
    User(UserAccount) = "user",
    Token(TokenGrant) = "token",
    Test(TestAudit) = "test",
    Patient(PatientRecord) = "patient",
    PatientVerified(PatientVerified) = "verified",
    PatientRecovered(PatientRecovered) = "recovered",
    Tracking(TrackingRequest) = "track",
    Location(LocationReport) = "loc",
    Zone(ZoneRecord) = "zone",
    ZoneDeactivated(ZoneDeactivated) = "zoneoff",
    Notification(Notification) = "notif",
    Delivered(Delivered) = "delivered",
    UserLocated(UserLocated) = "userloc",
}

impl Record {
    pub fn encode(&self) -> String {
        encode_line(self.tag(), &self.body())
    }
}
