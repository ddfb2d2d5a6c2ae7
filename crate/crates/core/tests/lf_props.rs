use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use hpn_core::exec::{EventKind, ExecOptions, Policy};
use hpn_core::line_follower::{
    default_spec, forward_kinematics, functions, integrate, inverse_kinematics, simulate_hpn, tf_control, LfConfig,
    Pose, SimOptions, Track,
};
use proptest::prelude::*;

/// Steering table written out by hand: sensor bits to (linear, angular)
/// as multiples of the configured speed and turn rate.
type Row = ((bool, bool, bool), (f64, f64));

const TABLE: [Row; 8] = [
    ((true, true, true), (1.0, 0.0)),
    ((true, true, false), (1.0, -1.0 / 15.0)),
    ((true, false, false), (1.0, -1.0)),
    ((false, true, true), (1.0, 1.0 / 15.0)),
    ((false, false, true), (1.0, 1.0)),
    ((false, false, false), (-1.0, -0.5)),
    ((false, true, false), (-1.0, -0.5)),
    ((true, false, true), (-1.0, -0.5)),
];

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn kinematics_round_trip(v in -2.0f64..2.0, w in -10.0f64..10.0, r in 0.005f64..0.2, b in 0.02f64..0.5) {
        let (wl, wr) = inverse_kinematics(v, w, r, b);
        let (v2, w2) = forward_kinematics(wl, wr, r, b);
        prop_assert!(close(v, v2), "{} vs {}", v, v2);
        prop_assert!(close(w, w2), "{} vs {}", w, w2);
    }

    #[test]
    fn control_table_is_a_pure_function(v in 0.01f64..1.0, omega in 0.1f64..5.0, bits in 0usize..8) {
        let ((l, m, r), (kv, kw)) = TABLE[bits];
        let first = tf_control(l, m, r, v, omega);
        prop_assert_eq!(first, tf_control(l, m, r, v, omega));
        prop_assert!(close(first.0, kv * v));
        prop_assert!(close(first.1, kw * omega));
    }

    #[test]
    fn integration_moves_at_the_commanded_speed(v in -1.0f64..1.0, w in -5.0f64..5.0, dt in 0.001f64..0.1, theta in -3.0f64..3.0) {
        let start = Pose { x: 0.3, y: -0.2, theta };
        let end = integrate(start, v, w, dt);
        prop_assert!(close(end.theta, theta + w * dt));
        let chord = ((end.x - start.x).powi(2) + (end.y - start.y).powi(2)).sqrt();
        let arc = (v * dt).abs();
        prop_assert!(chord <= arc + 1e-12);
        // Chord of a circular arc of angle w*dt.
        let half = (w * dt / 2.0).abs();
        let expected = if half < 1e-9 { arc } else { arc * half.sin() / half };
        prop_assert!((chord - expected).abs() <= 1e-9);
    }
}

#[test]
fn table_covers_every_sensor_combination() {
    let mut seen = std::collections::HashSet::new();
    for ((l, m, r), _) in TABLE {
        assert!(seen.insert((l, m, r)));
    }
    assert_eq!(seen.len(), 8);
}

/// (steps before the call, subsystem time) per control invocation.
type ControlLog = Arc<Mutex<Vec<(u64, u64)>>>;

fn short_run(seed: Option<u64>, duration: f64, record: Option<ControlLog>) -> hpn_core::line_follower::SimResult {
    let mut cfg = LfConfig::default_config();
    cfg.world.duration = duration;
    let cfg = Arc::new(cfg);
    let mut user = functions(&cfg);
    if let Some(log) = record {
        let inner = user.get_tf("lf.control").unwrap().clone();
        user.tf("lf.control", move |m| {
            let before = m.memory.scalar("steps") as u64;
            inner(m);
            log.lock().unwrap().push((before, m.time));
        });
    }
    let track = Track::from_config(&cfg.track);
    let options = SimOptions {
        exec: ExecOptions {
            policy: seed.map_or(Policy::Deterministic, Policy::Seeded),
            workers: 1,
            ..ExecOptions::default()
        },
        ..SimOptions::default()
    };
    simulate_hpn(
        &hpn_core::builder::assemble(&default_spec()).unwrap().hpn,
        Some(&default_spec()),
        &user,
        cfg,
        track,
        options,
    )
    .unwrap()
}

#[test]
fn channel_reads_never_go_back_in_time() {
    for seed in [None, Some(1), Some(2), Some(99)] {
        let run = short_run(seed, 0.5, None);
        let mut written: HashMap<&str, u64> = HashMap::new();
        let mut last_read: HashMap<&str, u64> = HashMap::new();
        let mut reads = 0;
        for e in &run.trace.events {
            let seq = e
                .detail
                .split_whitespace()
                .find_map(|f| f.strip_prefix("seq="))
                .map(|s| s.parse::<u64>().unwrap());
            match e.kind {
                EventKind::BufferWrite => {
                    let n = written.entry(&e.subject).or_default();
                    *n += 1;
                    assert_eq!(seq, Some(*n));
                }
                EventKind::BufferRead => {
                    reads += 1;
                    let seq = seq.unwrap();
                    let prev = last_read.entry(&e.subject).or_default();
                    assert!(seq >= *prev, "{}: read {seq} after {prev}", e.subject);
                    assert!(seq <= written.get(e.subject.as_str()).copied().unwrap_or(0));
                    if e.detail.ends_with("fresh=1") {
                        assert!(seq > *prev);
                    }
                    *prev = seq;
                }
                _ => {}
            }
        }
        assert!(reads > 50, "{reads}");
    }
}

#[test]
fn control_sees_its_own_memory_in_order() {
    let log = Arc::new(Mutex::new(Vec::new()));
    let run = short_run(Some(5), 0.3, Some(log.clone()));
    let log = log.lock().unwrap();
    let completed = run
        .trace
        .of_kind(EventKind::OpDone)
        .filter(|e| e.detail.starts_with("tf.") && e.detail.ends_with(".lf.control"))
        .count();
    assert_eq!(log.len(), completed);
    // The init behaviour ticks the clock once before the main loop starts.
    let offset = log[0].1;
    assert_eq!(offset, 1);
    for (i, &(steps, time)) in log.iter().enumerate() {
        assert_eq!(steps, i as u64);
        assert_eq!(time, offset + i as u64);
    }
}

#[test]
fn simulation_is_reproducible() {
    let a = short_run(Some(3), 0.5, None);
    let b = short_run(Some(3), 0.5, None);
    assert_eq!(a.trace.render(), b.trace.render());
    assert_eq!(a.world().pose(), b.world().pose());
    let c = short_run(None, 0.5, None);
    assert!(c.world().steps() > 0);
}
