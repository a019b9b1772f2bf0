use chrono::{Duration, TimeZone};

use super::*;
use crate::geo::{find_unsafe_area, ZoneParameters};

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 5, 1, 8, 0, 0).unwrap()
}

fn registration(username: &str) -> Registration {
    Registration {
        full_name: "Nabila Rahman".into(),
        username: username.into(),
        password: "s3cret-pass".into(),
        nid: "1990123456789".into(),
        blood_group: "O+".into(),
        infection_date: None,
    }
}

fn subject() -> SubjectIdentity {
    SubjectIdentity {
        full_name: "Karim Uddin".into(),
        nid: "1234567890".into(),
        username: None,
    }
}

struct Fixture {
    reg: Registry,
    hsp: Credential,
    tsp: Credential,
    gov: Credential,
    user: Credential,
}

fn operator(reg: &mut Registry, name: &str, role: Role) -> Credential {
    reg.create_operator(name, role, "pw", t0()).unwrap();
    reg.login(name, "pw", t0()).unwrap().1
}

fn fixture() -> Fixture {
    let mut reg = Registry::in_memory();
    let hsp = operator(&mut reg, "dmch-lab", Role::HealthServiceProvider);
    let tsp = operator(&mut reg, "gp-telecom", Role::TelecomServiceProvider);
    let gov = operator(&mut reg, "dghs", Role::Government);
    reg.register_user(&registration("nabila"), t0()).unwrap();
    let user = reg.login("nabila", "s3cret-pass", t0()).unwrap().1;
    Fixture {
        reg,
        hsp,
        tsp,
        gov,
        user,
    }
}

fn pt(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}

#[test]
fn register_user_nominal() {
    let mut reg = Registry::in_memory();
    let mut r = registration("nabila");
    r.infection_date = chrono::NaiveDate::from_ymd_opt(2021, 4, 2);
    let u = reg.register_user(&r, t0()).unwrap();
    assert_eq!(reg.state().user_by_username("nabila").unwrap().user_id, u.user_id);
    assert_eq!(u.blood_group, BloodGroup::OPos);
    assert!(!u.password_digest.contains("s3cret-pass"));
    assert!(!u.nid_digest.contains("1990123456789"));
    let dump = reg.state().canonical_dump();
    assert!(!dump.contains("1990123456789"));
    assert!(!dump.contains("s3cret-pass"));
}

#[test]
fn register_user_errors_are_distinct() {
    let mut reg = Registry::in_memory();
    reg.register_user(&registration("nabila"), t0()).unwrap();
    assert!(matches!(
        reg.register_user(&registration("nabila"), t0()),
        Err(StoreError::DuplicateUsername(_))
    ));
    let mut bad = registration("other");
    bad.nid = "12345".into();
    assert!(matches!(reg.register_user(&bad, t0()), Err(StoreError::MalformedNid)));
    let mut bad = registration("other");
    bad.blood_group = "Z".into();
    assert!(matches!(reg.register_user(&bad, t0()), Err(StoreError::InvalidBloodGroup(_))));
}

#[test]
fn login_rejects_bad_password_and_issues_distinct_tokens() {
    let mut reg = Registry::in_memory();
    reg.register_user(&registration("nabila"), t0()).unwrap();
    assert!(matches!(reg.login("nabila", "nope", t0()), Err(StoreError::InvalidLogin)));
    assert!(matches!(reg.login("ghost", "x", t0()), Err(StoreError::InvalidLogin)));
    let (a, cred) = reg.login("nabila", "s3cret-pass", t0()).unwrap();
    let (b, _) = reg.login("nabila", "s3cret-pass", t0()).unwrap();
    assert_ne!(a, b);
    assert_eq!(reg.authenticate(&a), Some(cred));
    assert_eq!(cred.role, Role::User);
    assert!(reg.authenticate("forged").is_none());
    assert!(!reg.state().canonical_dump().contains(&a));
}

#[test]
fn test_reports() {
    let mut f = fixture();
    let p = f
        .reg
        .submit_test_report(&f.hsp, &subject(), TestResult::Positive, t0())
        .unwrap()
        .unwrap();
    assert_eq!(p.status, PatientStatus::Active);
    assert!(p.verified);
    assert_eq!(f.reg.tracking_requests(&f.tsp).unwrap().len(), 1);

    let before = f.reg.state().patients.len();
    assert!(f
        .reg
        .submit_test_report(&f.hsp, &subject(), TestResult::Negative, t0())
        .unwrap()
        .is_none());
    assert_eq!(f.reg.state().patients.len(), before);
    assert_eq!(f.reg.state().tests.len(), 2);

    assert!(matches!(
        f.reg.submit_test_report(&f.user, &subject(), TestResult::Positive, t0()),
        Err(StoreError::Forbidden { .. })
    ));
}

#[test]
fn positive_test_links_registered_user_once() {
    let mut f = fixture();
    let mut s = subject();
    s.username = Some("nabila".into());
    let a = f.reg.submit_test_report(&f.hsp, &s, TestResult::Positive, t0()).unwrap().unwrap();
    let b = f.reg.submit_test_report(&f.hsp, &s, TestResult::Positive, t0()).unwrap().unwrap();
    assert_eq!(a.patient_id, b.patient_id);
    assert!(a.user_id.is_some());
    s.username = Some("ghost".into());
    assert!(matches!(
        f.reg.submit_test_report(&f.hsp, &s, TestResult::Positive, t0()),
        Err(StoreError::UnknownUser(_))
    ));
}

#[test]
fn patient_locations() {
    let mut f = fixture();
    let p = f
        .reg
        .submit_test_report(&f.hsp, &subject(), TestResult::Positive, t0())
        .unwrap()
        .unwrap();
    let r = f
        .reg
        .submit_patient_location(&f.tsp, p.patient_id, pt(23.73, 90.41), t0())
        .unwrap();
    assert_eq!(f.reg.state().pending_reports().next().unwrap().report_id, r.report_id);

    assert!(GeoPoint::new(95.0, 0.0).is_err());
    assert!(matches!(
        f.reg.submit_patient_location(&f.tsp, p.patient_id, pt(89.95, 0.0), t0()),
        Err(StoreError::Geo(_))
    ));
    assert!(matches!(
        f.reg
            .submit_patient_location(&f.tsp, p.patient_id, pt(23.73, 90.41), t0() - Duration::seconds(1)),
        Err(StoreError::StaleTimestamp { .. })
    ));
    assert!(matches!(
        f.reg.submit_patient_location(&f.hsp, p.patient_id, pt(23.73, 90.41), t0()),
        Err(StoreError::Forbidden { .. })
    ));
    assert!(matches!(
        f.reg.submit_patient_location(&f.tsp, PatientId(99), pt(23.73, 90.41), t0()),
        Err(StoreError::UnknownPatient(_))
    ));

    f.reg.mark_recovered(&f.gov, p.patient_id, t0()).unwrap();
    assert!(matches!(
        f.reg.submit_patient_location(&f.tsp, p.patient_id, pt(23.73, 90.41), t0()),
        Err(StoreError::PatientRecovered(_))
    ));
}

#[test]
fn recovery_deactivates_zones() {
    let mut f = fixture();
    let p = f
        .reg
        .submit_test_report(&f.hsp, &subject(), TestResult::Positive, t0())
        .unwrap()
        .unwrap();
    let r = f
        .reg
        .submit_patient_location(&f.tsp, p.patient_id, pt(23.73, 90.41), t0())
        .unwrap();
    let zone = find_unsafe_area(
        f.reg.next_zone_id(),
        r.position,
        &ZoneParameters::default(),
        p.patient_id,
        t0(),
    )
    .unwrap();
    let zone_id = zone.zone_id;
    f.reg
        .commit_zone_event(
            ZoneRecord {
                zone,
                report_id: r.report_id,
                notify_radius_m: 102.0,
            },
            vec![],
        )
        .unwrap();
    let (rec, off) = f.reg.mark_recovered(&f.gov, p.patient_id, t0()).unwrap();
    assert_eq!(rec.status, PatientStatus::Recovered);
    assert_eq!(off, vec![zone_id]);
    assert!(!f.reg.state().zones[&zone_id].zone.active);
    assert!(f.reg.state().tracking.is_empty());
    assert!(matches!(
        f.reg.mark_recovered(&f.gov, p.patient_id, t0()),
        Err(StoreError::PatientRecovered(_))
    ));
    assert!(matches!(
        f.reg.mark_recovered(&f.tsp, p.patient_id, t0()),
        Err(StoreError::Forbidden { .. })
    ));
    assert!(matches!(
        f.reg.mark_recovered(&f.gov, PatientId(42), t0()),
        Err(StoreError::UnknownPatient(_))
    ));
}

#[test]
fn citizen_reports_need_confirmation() {
    let mut f = fixture();
    let p = f.reg.submit_citizen_report(&f.user, &subject(), t0()).unwrap();
    assert!(!p.verified);
    assert!(f.reg.tracking_requests(&f.tsp).unwrap().is_empty());
    assert!(matches!(
        f.reg.submit_patient_location(&f.tsp, p.patient_id, pt(23.73, 90.41), t0()),
        Err(StoreError::PatientUnverified(_))
    ));
    assert!(matches!(
        f.reg.confirm_patient(&f.hsp, p.patient_id, t0()),
        Err(StoreError::Forbidden { .. })
    ));
    let p = f.reg.confirm_patient(&f.gov, p.patient_id, t0()).unwrap();
    assert!(p.verified);
    assert!(matches!(
        f.reg.confirm_patient(&f.gov, p.patient_id, t0()),
        Err(StoreError::AlreadyVerified(_))
    ));
    f.reg
        .submit_patient_location(&f.tsp, p.patient_id, pt(23.73, 90.41), t0())
        .unwrap();
}

#[test]
fn user_locations() {
    let mut f = fixture();
    let u = f.reg.record_user_location(&f.user, pt(23.7, 90.4), t0()).unwrap();
    assert_eq!(u.last_location.unwrap().position, pt(23.7, 90.4));
    assert!(matches!(
        f.reg
            .record_user_location(&f.user, pt(23.7, 90.4), t0() - Duration::minutes(1)),
        Err(StoreError::StaleTimestamp { .. })
    ));
    assert!(matches!(
        f.reg.record_user_location(&f.gov, pt(23.7, 90.4), t0()),
        Err(StoreError::Forbidden { .. })
    ));
}

#[test]
fn notifications_empty_and_role_gated() {
    let mut f = fixture();
    assert!(f.reg.fetch_notifications(&f.user, None).unwrap().is_empty());
    assert!(matches!(
        f.reg.fetch_notifications(&f.hsp, None),
        Err(StoreError::Forbidden { .. })
    ));
}

#[test]
fn open_replays_and_drops_torn_tail() {
    let dir = tempfile::tempdir().unwrap();
    let opts = StoreOptions {
        sync: false,
        snapshot_every: None,
    };
    let dump = {
        let mut reg = Registry::open(dir.path(), opts).unwrap();
        reg.create_operator("lab", Role::HealthServiceProvider, "pw", t0()).unwrap();
        reg.register_user(&registration("nabila"), t0()).unwrap();
        reg.state().canonical_dump()
    };
    // simulate a crash mid-write of a third transaction
    let path = dir.path().join(LOG_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    let good_len = bytes.len();
    bytes.extend_from_slice(b"4:user {\"user_id\":\"usr-2\"");
    std::fs::write(&path, &bytes).unwrap();

    let reg = Registry::open(dir.path(), opts).unwrap();
    assert_eq!(reg.state().canonical_dump(), dump);
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, good_len);
}

#[test]
fn snapshot_then_log_replay() {
    let dir = tempfile::tempdir().unwrap();
    let opts = StoreOptions {
        sync: false,
        snapshot_every: Some(3),
    };
    let dump = {
        let mut reg = Registry::open(dir.path(), opts).unwrap();
        for i in 0..7 {
            reg.register_user(&registration(&format!("user{i}")), t0()).unwrap();
        }
        reg.state().canonical_dump()
    };
    assert!(dir.path().join(SNAPSHOT_FILE).exists());
    let snap = std::fs::read_to_string(dir.path().join(SNAPSHOT_FILE)).unwrap();
    assert!(snap.starts_with("GSNAP v1\n"));
    let reg = Registry::open(dir.path(), opts).unwrap();
    assert_eq!(reg.state().canonical_dump(), dump);
    assert_eq!(reg.state().users.len(), 7);
}

#[test]
fn stale_log_entries_behind_snapshot_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let opts = StoreOptions {
        sync: false,
        snapshot_every: None,
    };
    let (dump, log_bytes) = {
        let mut reg = Registry::open(dir.path(), opts).unwrap();
        reg.register_user(&registration("a"), t0()).unwrap();
        reg.register_user(&registration("b"), t0()).unwrap();
        let log_bytes = std::fs::read(dir.path().join(LOG_FILE)).unwrap();
        reg.snapshot().unwrap();
        (reg.state().canonical_dump(), log_bytes)
    };
    // crash after the snapshot rename but before the log reset
    std::fs::write(dir.path().join(LOG_FILE), log_bytes).unwrap();
    let reg = Registry::open(dir.path(), opts).unwrap();
    assert_eq!(reg.state().canonical_dump(), dump);
}
