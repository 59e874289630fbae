mod common;

use std::thread;
use std::time::{Duration, Instant};

use common::{scripted_session, small_bundle, start, Client};
use modqn::service::{ClientCommand, ServerMessage, StateMessage};
use tungstenite::Message;

fn next_state(c: &mut Client) -> StateMessage {
    loop {
        if let ServerMessage::State(s) = c.recv() {
            return s;
        }
    }
}

#[test]
fn scripted_commands_keep_ordering_and_atomicity() {
    let r = scripted_session(2000, 3, 200.0);
    assert!(r.violations.is_empty(), "{:#?}", r.violations);
    assert_eq!(r.acks + r.errors, r.commands);
    assert!(r.errors > 0 && r.states > 0);
}

#[test]
fn two_clients_see_the_same_stream() {
    let server = start(small_bundle(1), 50.0);
    let mut a = Client::connect(&server);
    let mut b = Client::connect(&server);
    let first_a = next_state(&mut a);
    let mut first_b = next_state(&mut b);
    // Align on the first step both have seen.
    let mut later = first_a.clone();
    while (later.episode, later.step) < (first_b.episode, first_b.step) {
        later = next_state(&mut a);
    }
    while (first_b.episode, first_b.step) < (later.episode, later.step) {
        first_b = next_state(&mut b);
    }
    assert_eq!(later, first_b);
    for _ in 0..20 {
        assert_eq!(next_state(&mut a), next_state(&mut b));
    }
    server.shutdown();
}

#[test]
fn pacing_follows_the_requested_speed() {
    let server = start(small_bundle(2), 20.0);
    let mut c = Client::connect(&server);
    let rate = |c: &mut Client, n: usize| {
        next_state(c);
        let t = Instant::now();
        for _ in 0..n {
            next_state(c);
        }
        n as f64 / t.elapsed().as_secs_f64()
    };
    let r = rate(&mut c, 30);
    assert!((r - 20.0).abs() <= 4.0, "{r} steps/s at 20");
    c.send(&ClientCommand::Speed { sps: 50.0 });
    let r = rate(&mut c, 60);
    assert!((r - 50.0).abs() <= 10.0, "{r} steps/s at 50");
    server.shutdown();
}

#[test]
fn late_client_gets_a_state_within_a_step() {
    let server = start(small_bundle(4), 10.0);
    thread::sleep(Duration::from_millis(350));
    let t = Instant::now();
    let mut c = Client::connect(&server);
    let s = next_state(&mut c);
    assert!(t.elapsed() < Duration::from_millis(100 + 60), "{:?}", t.elapsed());
    assert!(s.step >= 3);
    server.shutdown();
}

#[test]
fn malformed_input_is_answered_and_harmless() {
    let server = start(small_bundle(5), 50.0);
    let mut c = Client::connect(&server);
    c.send_raw("{not json");
    c.send_raw(r#"{"type":"set_priorities","p":[1,1]}"#);
    c.send_raw(r#"{"type":"warp","to":3}"#);
    let mut errors = 0;
    while errors < 3 {
        if let ServerMessage::Error { .. } = c.recv() {
            errors += 1;
        }
    }
    let s = next_state(&mut c);
    assert_eq!(s.priorities, vec![1.0; 3]);
    server.shutdown();
}

#[test]
fn pause_stops_and_resume_restarts_stepping() {
    let server = start(small_bundle(6), 50.0);
    let mut c = Client::connect(&server);
    next_state(&mut c);
    c.send(&ClientCommand::Pause);
    loop {
        if let ServerMessage::Ack { settings, .. } = c.recv() {
            assert!(settings.paused);
            break;
        }
    }
    let paused_at = server.steps();
    thread::sleep(Duration::from_millis(300));
    assert_eq!(server.steps(), paused_at);
    c.send(&ClientCommand::Resume);
    assert!(matches!(c.recv(), ServerMessage::Ack { .. }));
    let s = next_state(&mut c);
    assert!(s.step > 0 || s.episode > 0);
    assert!(server.steps() > paused_at);
    server.shutdown();
}

#[test]
fn websocket_clients_get_the_same_protocol() {
    let server = start(small_bundle(7), 50.0);
    let (mut ws, _) = tungstenite::connect(format!("ws://{}/", server.local_addr())).unwrap();
    let read = |ws: &mut tungstenite::WebSocket<_>| loop {
        if let Message::Text(t) = ws.read().unwrap() {
            return serde_json::from_str::<ServerMessage>(t.as_str()).unwrap();
        }
    };
    assert!(matches!(read(&mut ws), ServerMessage::State(_)));
    ws.send(Message::text(r#"{"type":"toggle_dv","enabled":false}"#)).unwrap();
    loop {
        match read(&mut ws) {
            ServerMessage::Ack { cmd, settings } => {
                assert_eq!(cmd, "toggle_dv");
                assert!(!settings.dv);
                break;
            }
            ServerMessage::State(s) => assert!(s.dv),
            ServerMessage::Error { msg } => panic!("{msg}"),
        }
    }
    match read(&mut ws) {
        ServerMessage::State(s) => assert!(!s.dv),
        other => panic!("expected a state, got {other:?}"),
    }
    ws.close(None).unwrap();
    server.shutdown();
}
