//! Scenario planning, role spawning and report assembly.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use crossbeam_channel::{RecvTimeoutError, Sender};

use super::methods::{CHANNEL_SLOTS, MIRROR_TOPIC};
use super::roles::{bytes_digest, run_group, GroupSpec, RoleEvent, RoleSpec, RoleTask};
use super::{RoleInfo, ScenarioOptions, ScenarioReport, SchemeError, TranscriptEntry};
use crate::codec::{Codec, NativeValue};
use crate::topic::{Carrier, Topic};
use crate::transport::{Broker, BrokerHandle};

struct PlannedRole {
    spec: RoleSpec,
    transport: String,
    /// Endpoints the role touches, as (topic, carrier name).
    touches: Vec<(String, String)>,
}

struct Plan {
    scenario: &'static str,
    roles: Vec<PlannedRole>,
    slots: Vec<(String, String)>,
}

impl Plan {
    fn uses_tcp(&self) -> bool {
        self.roles.iter().any(|r| r.touches.iter().any(|(_, c)| c == "tcp"))
    }

    /// Partitions roles so that any two sharing an inproc endpoint end up in
    /// the same group.
    fn groups(&self) -> Vec<Vec<usize>> {
        let n = self.roles.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for a in 0..n {
            for b in a + 1..n {
                let shared = self.roles[a].touches.iter().any(|(t, c)| {
                    c == "inproc" && self.roles[b].touches.iter().any(|(t2, c2)| t2 == t && c2 == c)
                });
                if shared {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    parent[rb] = ra;
                }
            }
        }
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            match groups.iter_mut().find(|(r, _)| *r == root) {
                Some((_, g)) => g.push(i),
                None => groups.push((root, vec![i])),
            }
        }
        groups.into_iter().map(|(_, g)| g).collect()
    }
}

/// Per-role outcome collected from `result` events.
struct Outcome {
    positions: Vec<Option<String>>,
    fwd_hops: Option<u64>,
}

struct Execution {
    transcript: Vec<TranscriptEntry>,
    pids: Vec<Option<u32>>,
    outcomes: Vec<Outcome>,
}

enum Msg {
    Event(RoleEvent),
    /// A group's process closed its output.
    Exited(usize),
}

static SCENARIO_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Owns whatever a scenario spawned and tears it down on drop.
#[derive(Default)]
struct Harness {
    broker: Option<BrokerHandle>,
    registry_path: Option<PathBuf>,
    children: Vec<Child>,
    go_senders: Vec<Sender<()>>,
    threads: Vec<JoinHandle<()>>,
}

impl Drop for Harness {
    fn drop(&mut self) {
        for child in &mut self.children {
            let _ = child.kill();
            let _ = child.wait();
        }
        self.go_senders.clear();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        if let Some(mut b) = self.broker.take() {
            b.stop();
        }
        if let Some(p) = &self.registry_path {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn verb(mode: &str) -> &'static str {
    match mode {
        "publish" => "publish",
        "listen" => "receive",
        _ => "forward",
    }
}

fn execute(plan: &Plan, opts: &ScenarioOptions) -> Result<Execution, SchemeError> {
    let deadline = Instant::now() + opts.timeout;
    let mut harness = Harness::default();
    let (broker, registry_path) = if plan.uses_tcp() {
        let handle = Broker::bind_ephemeral()?.spawn();
        let addrs = handle.addrs().clone();
        harness.broker = Some(handle);
        let path = std::env::temp_dir().join(format!(
            "wrapify-scenario-{}-{}.json",
            std::process::id(),
            SCENARIO_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        harness.registry_path = Some(path.clone());
        (Some(addrs), Some(path))
    } else {
        (None, None)
    };

    let groups = plan.groups();
    let (tx, rx) = crossbeam_channel::unbounded::<Msg>();
    let use_processes = opts.exe.is_some() && plan.uses_tcp();
    for (gi, members) in groups.iter().enumerate() {
        let spec = GroupSpec {
            roles: members.iter().map(|&i| plan.roles[i].spec.clone()).collect(),
            broker: broker.clone(),
            registry_path: registry_path.clone(),
            slots: plan.slots.clone(),
            timeout_ms: opts.timeout.as_millis() as u64,
        };
        if use_processes {
            let exe = opts.exe.as_ref().expect("checked above");
            spawn_process(&mut harness, exe, &spec, gi, tx.clone())?;
        } else {
            let (go_tx, go_rx) = crossbeam_channel::bounded::<()>(1);
            harness.go_senders.push(go_tx);
            let tx = tx.clone();
            harness.threads.push(thread::spawn(move || {
                run_group(&spec, |ev| drop(tx.send(Msg::Event(ev))), || go_rx.recv().is_ok());
            }));
        }
    }
    drop(tx);

    let index_of = |name: &str| plan.roles.iter().position(|r| r.spec.name == name);
    let mut transcript = Vec::new();
    let mut outcomes: Vec<Option<Outcome>> = plan.roles.iter().map(|_| None).collect();
    let mut ready = BTreeSet::new();
    let mut pids = vec![None; plan.roles.len()];
    let mut go_sent = false;

    while outcomes.iter().any(Option::is_none) {
        let left = deadline.saturating_duration_since(Instant::now());
        let msg = match rx.recv_timeout(left) {
            Ok(m) => m,
            Err(RecvTimeoutError::Timeout) => return Err(SchemeError::ScenarioTimeout),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(SchemeError::Protocol("all roles exited before reporting".into()))
            }
        };
        match msg {
            Msg::Event(RoleEvent::Ready { role, pid }) => {
                let i = index_of(&role).ok_or_else(|| SchemeError::Protocol(format!("unknown role {role}")))?;
                transcript.push(TranscriptEntry {
                    role,
                    event: "ready".into(),
                    digest: None,
                });
                ready.insert(i);
                pids[i] = Some(pid);
            }
            Msg::Event(RoleEvent::Result {
                role,
                positions,
                fwd_hops,
            }) => {
                let i = index_of(&role).ok_or_else(|| SchemeError::Protocol(format!("unknown role {role}")))?;
                let v = verb(plan.roles[i].spec.task.mode());
                if positions.is_empty() {
                    transcript.push(TranscriptEntry {
                        role: role.clone(),
                        event: v.into(),
                        digest: None,
                    });
                }
                for (k, d) in positions.iter().enumerate() {
                    transcript.push(TranscriptEntry {
                        role: role.clone(),
                        event: format!("{v}[{k}]"),
                        digest: d.clone(),
                    });
                }
                outcomes[i] = Some(Outcome { positions, fwd_hops });
            }
            Msg::Event(RoleEvent::Error { role, message }) => return Err(SchemeError::RoleFailed { role, message }),
            Msg::Exited(g) => {
                if let Some(&i) = groups[g].iter().find(|&&i| outcomes[i].is_none()) {
                    return Err(SchemeError::RoleFailed {
                        role: plan.roles[i].spec.name.clone(),
                        message: "process exited without reporting".into(),
                    });
                }
            }
        }
        if !go_sent && ready.len() == plan.roles.len() {
            go_sent = true;
            for s in &harness.go_senders {
                let _ = s.send(());
            }
            for child in &mut harness.children {
                if let Some(stdin) = child.stdin.as_mut() {
                    stdin.write_all(b"go\n")?;
                    stdin.flush()?;
                }
            }
        }
    }
    for child in &mut harness.children {
        child.wait()?;
    }
    Ok(Execution {
        transcript,
        pids,
        outcomes: outcomes.into_iter().map(|o| o.expect("loop ends when all reported")).collect(),
    })
}

fn spawn_process(
    harness: &mut Harness,
    exe: &PathBuf,
    spec: &GroupSpec,
    group: usize,
    tx: Sender<Msg>,
) -> Result<(), SchemeError> {
    let json = serde_json::to_string(spec).map_err(|e| SchemeError::Protocol(e.to_string()))?;
    let mut child = Command::new(exe)
        .arg("role")
        .arg("--spec")
        .arg(json)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()?;
    let stdout = child.stdout.take().expect("stdout is piped");
    harness.children.push(child);
    thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str::<RoleEvent>(&line).unwrap_or_else(|e| RoleEvent::Error {
                role: format!("group-{group}"),
                message: format!("unreadable event {line:?}: {e}"),
            });
            if tx.send(Msg::Event(ev)).is_err() {
                return;
            }
        }
        let _ = tx.send(Msg::Exited(group));
    });
    Ok(())
}

/// Entry point of the `role` subcommand: runs the group described by
/// `spec_json`, writing events as JSON lines to stdout and waiting for a
/// `go` line on stdin. Returns the process exit code.
pub fn role_main(spec_json: &str) -> i32 {
    let spec: GroupSpec = match serde_json::from_str(spec_json) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("invalid role spec: {e}");
            return 2;
        }
    };
    let failed = std::sync::atomic::AtomicBool::new(false);
    let emit = |ev: RoleEvent| {
        if matches!(ev, RoleEvent::Error { .. }) {
            failed.store(true, Ordering::SeqCst);
        }
        let line = serde_json::to_string(&ev).expect("event serializes");
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    };
    let go = || {
        let mut line = String::new();
        std::io::stdin().lock().read_line(&mut line).is_ok() && line.trim() == "go"
    };
    run_group(&spec, emit, go);
    if failed.load(Ordering::SeqCst) {
        1
    } else {
        0
    }
}

fn native_json(codec: &Codec, value: &NativeValue) -> Result<String, SchemeError> {
    let bytes = codec.encode_native(value)?;
    String::from_utf8(bytes).map_err(|e| SchemeError::Protocol(e.to_string()))
}

fn report(plan: &Plan, exec: Execution, failure: Option<String>) -> ScenarioReport {
    ScenarioReport {
        scenario: plan.scenario.to_string(),
        roles: plan
            .roles
            .iter()
            .zip(&exec.pids)
            .map(|(r, pid)| RoleInfo {
                name: r.spec.name.clone(),
                mode: r.spec.task.mode().to_string(),
                transport: r.transport.clone(),
                pid: *pid,
            })
            .collect(),
        transcript: exec.transcript,
        passed: failure.is_none(),
        detail: failure,
    }
}

/// One publisher and `n_listeners` listeners invoke the mirror method over
/// `carrier`. Passes when every listener's return equals the publisher's.
pub fn run_mirror_scenario(
    n_listeners: usize,
    carrier: &Carrier,
    payload: &NativeValue,
    opts: &ScenarioOptions,
) -> Result<ScenarioReport, SchemeError> {
    if n_listeners == 0 {
        return Err(SchemeError::InvalidArgument("at least one listener is required".into()));
    }
    let codec = Codec::new();
    let mw = carrier.name().to_string();
    let touch = vec![(MIRROR_TOPIC.to_string(), mw.clone())];
    let mut roles = vec![PlannedRole {
        spec: RoleSpec {
            name: "publisher".into(),
            task: RoleTask::MirrorPublish {
                middleware: mw.clone(),
                msg: String::new(),
                input: native_json(&codec, payload)?,
            },
            disabled: vec![],
        },
        transport: mw.clone(),
        touches: touch.clone(),
    }];
    for i in 1..=n_listeners {
        roles.push(PlannedRole {
            spec: RoleSpec {
                name: format!("listener-{i}"),
                task: RoleTask::MirrorListen { middleware: mw.clone() },
                disabled: vec![],
            },
            transport: mw.clone(),
            touches: touch.clone(),
        });
    }
    let plan = Plan {
        scenario: "mirror",
        roles,
        slots: vec![],
    };
    let exec = execute(&plan, opts)?;
    let expected = &exec.outcomes[0].positions;
    let failure = if expected.iter().any(Option::is_none) {
        Some("publisher produced no return".to_string())
    } else {
        (1..plan.roles.len())
            .find(|&i| exec.outcomes[i].positions != *expected)
            .map(|i| format!("{} received a different return", plan.roles[i].spec.name))
    };
    Ok(report(&plan, exec, failure))
}

/// Publishes `payload` on the first hop and relays it through one bridge
/// per further hop. Passes when the last hop delivers the original bytes
/// with a forwarding count of `hops.len() - 1`.
pub fn run_forward_scenario(
    hops: &[(Topic, Carrier)],
    payload: &NativeValue,
    opts: &ScenarioOptions,
) -> Result<ScenarioReport, SchemeError> {
    if hops.len() < 2 {
        return Err(SchemeError::InvalidArgument("forwarding needs at least two hops".into()));
    }
    let codec = Codec::new();
    let expected = bytes_digest(&codec.encode_native(payload)?);
    let hop = |i: usize| (hops[i].0.as_str().to_string(), hops[i].1.name().to_string());
    let last = hops.len() - 1;
    let mut roles = vec![PlannedRole {
        spec: RoleSpec {
            name: "source".into(),
            task: RoleTask::ForwardSource {
                topic: hop(0).0,
                middleware: hop(0).1,
                payload: native_json(&codec, payload)?,
            },
            disabled: vec![],
        },
        transport: hop(0).1,
        touches: vec![hop(0)],
    }];
    for i in 0..last {
        let (from, to) = (hop(i), hop(i + 1));
        roles.push(PlannedRole {
            spec: RoleSpec {
                name: format!("bridge-{}", i + 1),
                task: RoleTask::ForwardBridge {
                    from_topic: from.0.clone(),
                    from_middleware: from.1.clone(),
                    to_topic: to.0.clone(),
                    to_middleware: to.1.clone(),
                },
                disabled: vec![],
            },
            transport: format!("{}->{}", from.1, to.1),
            touches: vec![from, to],
        });
    }
    roles.push(PlannedRole {
        spec: RoleSpec {
            name: "sink".into(),
            task: RoleTask::ForwardSink {
                topic: hop(last).0,
                middleware: hop(last).1,
            },
            disabled: vec![],
        },
        transport: hop(last).1,
        touches: vec![hop(last)],
    });
    let plan = Plan {
        scenario: "forward",
        roles,
        slots: vec![],
    };
    let exec = execute(&plan, opts)?;
    let source = &exec.outcomes[0];
    let sink = exec.outcomes.last().expect("sink role exists");
    let want_hops = last as u64;
    let failure = if source.positions.first().cloned().flatten().as_deref() != Some(expected.as_str()) {
        Some("source published a different payload".to_string())
    } else if sink.positions.first().cloned().flatten().as_deref() != Some(expected.as_str()) {
        Some("sink received a different payload".to_string())
    } else if sink.fwd_hops != Some(want_hops) {
        Some(format!("sink saw {:?} forwarding hops, expected {want_hops}", sink.fwd_hops))
    } else {
        None
    };
    Ok(report(&plan, exec, failure))
}

/// Runs the three-slot channel method with every slot backed by `carrier`.
/// Slots listed in `disabled` are unavailable to the listener. Passes when
/// those positions come back empty and the rest match the publisher.
pub fn run_channel_scenario(
    disabled: &[usize],
    carrier: &Carrier,
    opts: &ScenarioOptions,
) -> Result<ScenarioReport, SchemeError> {
    if let Some(bad) = disabled.iter().find(|&&i| i >= CHANNEL_SLOTS.len()) {
        return Err(SchemeError::InvalidArgument(format!(
            "slot {bad} out of range; the channel method has {} slots",
            CHANNEL_SLOTS.len()
        )));
    }
    let mw = carrier.name().to_string();
    let touches: Vec<(String, String)> = super::methods::CHANNEL_TOPICS
        .iter()
        .map(|t| (t.to_string(), mw.clone()))
        .collect();
    let off: Vec<String> = disabled.iter().map(|&i| CHANNEL_SLOTS[i].to_string()).collect();
    let roles = vec![
        PlannedRole {
            spec: RoleSpec {
                name: "publisher".into(),
                task: RoleTask::ChannelPublish { seed: opts.seed },
                disabled: vec![],
            },
            transport: mw.clone(),
            touches: touches.clone(),
        },
        PlannedRole {
            spec: RoleSpec {
                name: "listener".into(),
                task: RoleTask::ChannelListen { seed: opts.seed },
                disabled: off,
            },
            transport: mw.clone(),
            touches,
        },
    ];
    let plan = Plan {
        scenario: "channel",
        roles,
        slots: CHANNEL_SLOTS.iter().map(|s| (s.to_string(), mw.clone())).collect(),
    };
    let exec = execute(&plan, opts)?;
    let (sent, got) = (&exec.outcomes[0].positions, &exec.outcomes[1].positions);
    let failure = (0..CHANNEL_SLOTS.len()).find_map(|i| {
        let off = disabled.contains(&i);
        match (sent.get(i).cloned().flatten(), got.get(i).cloned().flatten()) {
            (_, Some(_)) if off => Some(format!("slot {i} was disabled but delivered")),
            (_, None) if off => None,
            (Some(a), Some(b)) if a == b => None,
            (None, _) => Some(format!("publisher produced nothing in slot {i}")),
            _ => Some(format!("slot {i} differs or is missing")),
        }
    });
    Ok(report(&plan, exec, failure))
}
