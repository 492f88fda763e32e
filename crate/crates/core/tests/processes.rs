//! Scenarios whose roles run as separate `wrapify role` processes.

use std::time::{Duration, Instant};

use wrapify::codec::NativeValue;
use wrapify::schemes::{run_channel_scenario, run_forward_scenario, run_mirror_scenario, ScenarioOptions};
use wrapify::{Carrier, Topic};

fn opts() -> ScenarioOptions {
    ScenarioOptions {
        exe: Some(env!("CARGO_BIN_EXE_wrapify").into()),
        timeout: Duration::from_secs(20),
        ..Default::default()
    }
}

#[test]
fn mirror_with_listener_processes() {
    let payload = NativeValue::map([("msg", NativeValue::from("hi"))]);
    for n in [1, 3] {
        let r = run_mirror_scenario(n, &Carrier::Tcp, &payload, &opts()).unwrap();
        assert!(r.passed, "{}", r.to_json());
        let published = r.digests_of("publisher");
        for i in 1..=n {
            assert_eq!(r.digests_of(&format!("listener-{i}")), published);
        }
    }
}

#[test]
fn forward_through_an_inproc_middle_hop() {
    let hops = vec![
        (Topic::new("/example/native_yarp_msg").unwrap(), Carrier::Tcp),
        (Topic::new("/example/native_mid_msg").unwrap(), Carrier::Inproc),
        (Topic::new("/example/native_zmq_msg").unwrap(), Carrier::Tcp),
    ];
    let payload = NativeValue::map([("msg", NativeValue::from("chained")), ("k", NativeValue::from(1.25f64))]);
    let r = run_forward_scenario(&hops, &payload, &opts()).unwrap();
    assert!(r.passed, "{}", r.to_json());
    assert_eq!(r.digests_of("sink"), r.digests_of("source"));
}

#[test]
fn channel_with_each_slot_disabled_in_turn() {
    for slot in 0..3 {
        let r = run_channel_scenario(&[slot], &Carrier::Tcp, &opts()).unwrap();
        assert!(r.passed, "{}", r.to_json());
        let got = r.digests_of("listener");
        assert_eq!(got[slot], None);
        assert_eq!(got.iter().filter(|d| d.is_some()).count(), 2);
    }
}

#[test]
fn process_and_thread_runs_agree_on_digests() {
    let threads = ScenarioOptions { exe: None, ..opts() };
    let a = run_channel_scenario(&[], &Carrier::Tcp, &opts()).unwrap();
    let b = run_channel_scenario(&[], &Carrier::Tcp, &threads).unwrap();
    assert_eq!(a.digests_of("listener"), b.digests_of("listener"));
}

#[test]
fn scenarios_finish_well_inside_the_budget() {
    let start = Instant::now();
    let payload = NativeValue::from("t");
    run_mirror_scenario(2, &Carrier::Tcp, &payload, &opts()).unwrap();
    run_channel_scenario(&[], &Carrier::Tcp, &opts()).unwrap();
    assert!(start.elapsed() < Duration::from_secs(30));
}
