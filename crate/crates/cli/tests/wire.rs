use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use myoloop_cli::server::{self, Engine};
use myoloop::awac::AwacConfig;
use myoloop::experiment::MotionTestSpec;
use myoloop::game::{build_chart, EPISODE_TICKS};
use myoloop::live::{LiveSession, TickSnapshot};
use myoloop::policy::{PolicyNet, Standardizer};
use myoloop::subject::{ChordMap, HumanAdapter, SubjectParams, SubjectProfile};
use serde_json::Value;
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

fn live() -> LiveSession {
    let profile = SubjectProfile::synthetic(SubjectParams::calibrated(3)).unwrap();
    let st = Standardizer::fit(&profile.prototypes).unwrap();
    let awac = AwacConfig {
        grad_steps: 8,
        batch_size: 32,
        eval_interval: 4,
        ..Default::default()
    };
    LiveSession::new(
        build_chart(0).unwrap(),
        HumanAdapter::new(profile, ChordMap::default(), 3),
        PolicyNet::new(st, 3),
        awac,
        MotionTestSpec::default(),
        3,
    )
}

async fn start() -> (String, Engine) {
    let engine = Engine::spawn(live());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("ws://{}/ws", listener.local_addr().unwrap());
    tokio::spawn(server::serve(listener, engine.state.clone()));
    (url, engine)
}

async fn connect(url: &str) -> Ws {
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

async fn next_line(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("server stalled")
            .expect("stream ended")
            .unwrap();
        if let Message::Text(t) = msg {
            assert!(t.ends_with('\n'), "line not newline-terminated: {t:?}");
            assert_eq!(t.matches('\n').count(), 1);
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn send(ws: &mut Ws, line: &str) {
    ws.send(Message::Text(line.into())).await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn snapshots_follow_the_wire_schema() {
    let (url, _engine) = start().await;
    let mut ws = connect(&url).await;
    send(&mut ws, r#"{"type":"chord","keys":["q"]}"#).await;
    send(&mut ws, r#"{"type":"control","cmd":"start"}"#).await;
    let mut prev: Option<TickSnapshot> = None;
    for _ in 0..20 {
        let v = next_line(&mut ws).await;
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["ideal", "phase", "predicted", "reward", "score", "t"]);
        let snap: TickSnapshot = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(v["phase"], "play");
        assert!(snap.ideal.iter().chain(&snap.predicted).all(|&b| b <= 1));
        assert!((-1..=1).contains(&snap.reward));
        if let Some(p) = &prev {
            assert_eq!(snap.t, p.t + 1);
            assert_eq!(snap.score, p.score + u32::from(snap.reward > 0));
        } else {
            assert_eq!(snap.t, 0);
        }
        prev = Some(snap);
    }
    assert!(prev.unwrap().t < EPISODE_TICKS);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn late_client_gets_latest_snapshot_first() {
    let (url, _engine) = start().await;
    let mut a = connect(&url).await;
    send(&mut a, r#"{"type":"control","cmd":"start"}"#).await;
    for _ in 0..5 {
        next_line(&mut a).await;
    }
    send(&mut a, r#"{"type":"control","cmd":"stop"}"#).await;
    tokio::time::sleep(Duration::from_millis(300)).await;
    while let Ok(Some(_)) = tokio::time::timeout(Duration::from_millis(100), a.next()).await {}

    let mut b = connect(&url).await;
    let first = next_line(&mut b).await;
    assert_eq!(first["phase"], "play");
    assert!(first["t"].as_u64().unwrap() >= 4);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_messages_are_reported() {
    let (url, _engine) = start().await;
    let mut ws = connect(&url).await;
    send(&mut ws, r#"{"type":"chord"}"#).await;
    let v = next_line(&mut ws).await;
    assert!(v["error"].is_string());
    send(&mut ws, r#"{"type":"control","cmd":"reboot"}"#).await;
    assert!(next_line(&mut ws).await["error"].is_string());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn motion_test_and_finetune_controls() {
    let (url, _engine) = start().await;
    let mut ws = connect(&url).await;
    send(&mut ws, r#"{"type":"control","cmd":"finetune"}"#).await;
    // no episode yet: the engine reports the error instead of training
    assert!(next_line(&mut ws).await["error"].as_str().unwrap().contains("episode"));
    send(&mut ws, r#"{"type":"control","cmd":"motion_test"}"#).await;
    let v = next_line(&mut ws).await;
    assert_eq!(v["phase"], "motion_test");
    let ideal: Vec<u8> = serde_json::from_value(v["ideal"].clone()).unwrap();
    assert_eq!(ideal[6], 0, "rest is never prompted");
}
