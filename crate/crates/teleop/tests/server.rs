use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use gsplat_cbf::filter::CBFConfig;
use gsplat_cbf::scene::{Ellipsoid, GaussianScene, PreparedScene};
use gsplat_cbf::Vector3;
use gsplat_cbf_teleop::wire::{Body, Role};
use gsplat_cbf_teleop::{spawn, SessionConfig, TeleopSession, WireMessage};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// A wall of spheres in the plane `x = 1`, plus many small far-away
/// spheres so that the scene transfer needs decimating.
fn scene() -> Arc<PreparedScene> {
    let mut e = Vec::new();
    for j in -6..=6 {
        for k in -6..=6 {
            e.push(Ellipsoid::sphere(e.len(), [1.0, j as f64 * 0.2, k as f64 * 0.2], 0.15));
        }
    }
    for i in 0..21_000 {
        e.push(Ellipsoid::sphere(e.len(), [50.0 + (i % 100) as f64, (i / 100) as f64, 0.0], 0.01));
    }
    Arc::new(PreparedScene::new(GaussianScene::new("wall", 1.0, e).unwrap(), None))
}

async fn recv(c: &mut Client) -> WireMessage {
    loop {
        let m = tokio::time::timeout(Duration::from_secs(10), c.next()).await.expect("timed out").unwrap().unwrap();
        if let Message::Text(t) = m {
            return WireMessage::parse(t.as_str()).unwrap();
        }
    }
}

async fn send(c: &mut Client, text: String) {
    c.send(Message::Text(text.into())).await.unwrap();
}

/// Reads frames until `pred` accepts one, checking tick order on the way.
async fn until(c: &mut Client, last_tick: &mut u64, mut pred: impl FnMut(&WireMessage) -> bool) -> WireMessage {
    loop {
        let m = recv(c).await;
        assert!(m.tick >= *last_tick, "tick went back from {} to {}", last_tick, m.tick);
        *last_tick = m.tick;
        if pred(&m) {
            return m;
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pilot_session_over_websocket() {
    let session = TeleopSession::new(scene(), CBFConfig::default(), SessionConfig::default()).unwrap();
    let server = spawn(session, "127.0.0.1:0".parse().unwrap()).await.unwrap();
    let url = format!("ws://{}/session", server.addr);

    let (mut pilot, _) = connect_async(&url).await.unwrap();
    let hello = recv(&mut pilot).await;
    let Body::Hello(h) = &hello.body else { panic!("{hello:?}") };
    assert_eq!(h.role, Role::Pilot);
    assert_eq!((h.scene.total, h.scene.transmitted, h.scene.chunks), (21_169, 20_000, 20));
    assert_eq!(hello.session, server.session_id);
    let mut last = hello.tick;
    let mut instances = 0;
    for k in 0..20 {
        let m = until(&mut pilot, &mut last, |_| true).await;
        let Body::SceneChunk(c) = m.body else { panic!() };
        assert_eq!((c.index, c.of), (k, 20));
        instances += c.ellipsoids.len();
    }
    assert_eq!(instances, 20_000);

    // No input: the drone hovers.
    let first = until(&mut pilot, &mut last, |m| matches!(m.body, Body::State(_))).await;
    let Body::State(s) = first.body else { unreachable!() };
    assert_eq!((s.p, s.v), (Vector3::zeros(), Vector3::zeros()));

    // A second connection is a read-only observer.
    let (mut observer, _) = connect_async(&url).await.unwrap();
    let m = recv(&mut observer).await;
    let Body::Hello(h) = m.body else { panic!() };
    assert_eq!(h.role, Role::Observer);
    let mut obs_last = m.tick;
    send(&mut observer, r#"{"type":"input","session":"x","tick":1,"accel":[8,0,0]}"#.into()).await;
    let err = until(&mut observer, &mut obs_last, |m| matches!(m.body, Body::Error { .. })).await;
    assert!(matches!(err.body, Body::Error { ref message } if message.contains("read-only")));

    // Malformed frames are answered, and the session carries on.
    send(&mut pilot, "{nonsense".into()).await;
    until(&mut pilot, &mut last, |m| matches!(m.body, Body::Error { .. })).await;
    send(&mut pilot, WireMessage::new(&server.session_id, 1, Body::Ping { nonce: 42 }).to_json()).await;
    until(&mut pilot, &mut last, |m| m.body == Body::Pong { nonce: 42 }).await;

    // Ram the wall at full stick for two seconds.
    let mut min_h = f64::INFINITY;
    let mut diverged = false;
    for k in 0..60u64 {
        send(&mut pilot, format!(r#"{{"type":"input","session":"{}","tick":{},"axes":[1,0,0]}}"#, server.session_id, k + 2)).await;
        tokio::time::sleep(Duration::from_millis(33)).await;
        while let Ok(Some(Ok(Message::Text(t)))) = tokio::time::timeout(Duration::from_millis(1), pilot.next()).await {
            let m = WireMessage::parse(t.as_str()).unwrap();
            assert!(m.tick >= last);
            last = m.tick;
            if let Body::State(s) = m.body {
                min_h = min_h.min(s.h_min.unwrap_or(f64::INFINITY));
                diverged |= s.was_modified && (s.u - s.u_des).norm() > 1.0;
                assert!(s.u_des.norm() <= 8.0 + 1e-9);
            }
        }
    }
    assert!(diverged);
    assert!(min_h >= 0.0, "{min_h}");

    // Config updates are validated and acknowledged to everyone.
    send(&mut pilot, format!(r#"{{"type":"config_update","session":"s","tick":100,"alpha":-1}}"#)).await;
    until(&mut pilot, &mut last, |m| matches!(m.body, Body::Error { .. })).await;
    send(&mut pilot, format!(r#"{{"type":"config_update","session":"s","tick":101,"alpha":3}}"#)).await;
    let ack = until(&mut observer, &mut obs_last, |m| matches!(m.body, Body::Config { .. })).await;
    let Body::Config { config } = ack.body else { unreachable!() };
    assert_eq!(config.alpha, 3.0);

    // The pilot leaves; within the stale-input window the command fades out.
    drop(pilot);
    let gone = last;
    let s = until(&mut observer, &mut obs_last, |m| matches!(m.body, Body::State(_)) && m.tick >= gone + 60).await;
    let Body::State(s) = s.body else { unreachable!() };
    assert_eq!(s.u_des, Vector3::zeros());

    // The pilot seat is free again.
    let (mut next, _) = connect_async(&url).await.unwrap();
    let Body::Hello(h) = recv(&mut next).await.body else { panic!() };
    assert_eq!(h.role, Role::Pilot);

    let session = server.shutdown().await;
    assert!(session.tick() > 200);
    assert_eq!(session.cbf().alpha, 3.0);
}
