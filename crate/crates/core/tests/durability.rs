mod common;

use common::*;
use geosafe::store::{LOG_FILE, SNAPSHOT_FILE, SNAPSHOT_HEADER};

#[tokio::test]
async fn torn_final_line_loses_nothing_committed() {
    let dir = tempfile::tempdir().unwrap();
    let r = crash_and_restart(dir.path()).await;
    assert_eq!(r.zones_before, 3);
    // every resident is within the alert radius of all three zones
    assert_eq!(r.notifications_before, 4 * 3);
    assert_eq!((r.zones_after, r.notifications_after), (r.zones_before, r.notifications_before));
    assert!(r.identical_after_restart);
    assert!(r.identical_after_second_restart);
    assert!(r.safety_unchanged);
}

#[tokio::test]
async fn snapshot_then_log_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let p = report_point();
    let expected = {
        let h = Harness::on_disk(dir.path());
        h.user("alice", Some(offset(p, 0.0, 3.0))).await;
        let patient = h.positive_patient().await;
        h.locate(&patient, p).await;
        h.service.snapshot().unwrap();
        assert_eq!(std::fs::metadata(dir.path().join(LOG_FILE)).unwrap().len(), 0);
        h.clock.advance(chrono::Duration::minutes(1));
        h.locate(&patient, offset(p, 90.0, 500.0)).await;
        dump(&h.service)
    };
    let text = std::fs::read_to_string(dir.path().join(SNAPSHOT_FILE)).unwrap();
    assert!(text.starts_with(SNAPSHOT_HEADER));
    let a = dump(&reopen(dir.path()));
    let b = dump(&reopen(dir.path()));
    assert_eq!(a, expected);
    assert_eq!(a, b);
}

#[tokio::test]
async fn damage_before_the_tail_refuses_to_open() {
    let dir = tempfile::tempdir().unwrap();
    {
        let h = Harness::on_disk(dir.path());
        h.user("alice", None).await;
        h.user("bob", None).await;
    }
    let log = dir.path().join(LOG_FILE);
    let mut bytes = std::fs::read(&log).unwrap();
    let first_nl = bytes.iter().position(|b| *b == b'\n').unwrap();
    bytes[first_nl - 12] ^= 0x01;
    std::fs::write(&log, &bytes).unwrap();
    let err = geosafe::service::TracingService::open(
        &config(Some(dir.path())),
        std::sync::Arc::new(geosafe::service::ManualClock::new(t0())),
    );
    assert!(err.is_err());
}

#[tokio::test]
async fn pending_report_is_finished_on_restart() {
    use geosafe::store::{Registry, StoreOptions, SubjectIdentity, TestResult};

    let dir = tempfile::tempdir().unwrap();
    let opts = StoreOptions {
        sync: false,
        snapshot_every: None,
    };
    // write a report straight into the registry, as if the process died
    // between storing it and building its zone
    {
        let mut reg = Registry::open(dir.path(), opts).unwrap();
        reg.create_operator(LAB.0, geosafe::store::Role::HealthServiceProvider, LAB.1, t0()).unwrap();
        reg.create_operator(TELCO.0, geosafe::store::Role::TelecomServiceProvider, TELCO.1, t0()).unwrap();
        let hsp = reg.login(LAB.0, LAB.1, t0()).unwrap().1;
        let tsp = reg.login(TELCO.0, TELCO.1, t0()).unwrap().1;
        let subject = SubjectIdentity {
            full_name: PATIENT_NAME.into(),
            nid: PATIENT_NID.into(),
            username: None,
        };
        let patient = reg.submit_test_report(&hsp, &subject, TestResult::Positive, t0()).unwrap().unwrap();
        reg.submit_patient_location(&tsp, patient.patient_id, report_point(), t0()).unwrap();
        assert_eq!(reg.state().pending_reports().count(), 1);
    }
    let svc = reopen(dir.path());
    assert_eq!(svc.with_state(|s| s.pending_reports().count()), 0);
    assert_eq!(svc.safety_query(report_point()).status, geosafe::geo::SafetyStatus::Unsafe);
    let again = dump(&svc);
    drop(svc);
    assert_eq!(dump(&reopen(dir.path())), again);
}
