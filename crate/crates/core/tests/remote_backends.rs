//! Remote planner and verifier driven through fake model servers and record/replay cassettes.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};
use trajverify::planner::{PlannerBackend, RemotePlanner, TrajectoryCandidate};
use trajverify::render::render_sketch;
use trajverify::scene::{bbox_center, SceneBundle};
use trajverify::search::{run_pipeline, SearchConfig};
use trajverify::synthetic::{make_synthetic, SyntheticSceneSpec};
use trajverify::transport::{Cassette, CassetteTransport, EndpointConfig, ModelClient, Transport};
use trajverify::verify::{Law, RemoteVerifier, Verifier, VerifierWeights, VerifyInput};
use trajverify::Error;

/// Serves queued replies in order, then repeats `fallback`.
struct FakeModel {
    replies: VecDeque<String>,
    fallback: Option<String>,
    calls: Arc<AtomicUsize>,
}

impl FakeModel {
    fn new(replies: Vec<String>, fallback: Option<&str>) -> (Self, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let model = Self {
            replies: replies.into(),
            fallback: fallback.map(str::to_string),
            calls: calls.clone(),
        };
        (model, calls)
    }
}

impl Transport for FakeModel {
    fn post_json(&mut self, _url: &str, _key: Option<&str>, _body: &Value) -> trajverify::Result<Value> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.replies.pop_front().or_else(|| self.fallback.clone()) {
            Some(text) => Ok(json!({ "text": text })),
            None => Err(Error::Transport("fake model has nothing left to say".into())),
        }
    }
}

fn planner_ep() -> EndpointConfig {
    EndpointConfig::new("http://planner.test/v1", "plan-model").with_key("k")
}

fn verifier_ep() -> EndpointConfig {
    EndpointConfig::new("http://verifier.test/v1", "judge-model").with_key("k")
}

fn scene() -> SceneBundle {
    make_synthetic(&SyntheticSceneSpec::with_seed(2)).unwrap()
}

fn plan_reply(scene: &SceneBundle) -> String {
    scene.plan.as_ref().unwrap().to_string()
}

/// Five straight paths to the goal, each lifted 0.06 higher than the previous.
fn trajectory_reply(scene: &SceneBundle) -> String {
    let obj = &scene.objects[0];
    let from = bbox_center(&obj.initial_box);
    let plan = scene.plan.as_ref().unwrap();
    let region = &plan["phases"][0]["goal"]["region"];
    let to_x = (region[0].as_f64().unwrap() + region[2].as_f64().unwrap()) / 2.0;
    let (w, h) = (obj.initial_box.width(), obj.initial_box.height());
    let candidates: Vec<Value> = (0..5)
        .map(|j| {
            let lift = 0.06 * j as f64;
            let frames: Vec<Value> = (0..41)
                .map(|t| {
                    let x = from.x + (to_x - from.x) * t as f64 / 40.0;
                    let y = from.y - lift;
                    json!([[obj.id, [x - w / 2.0, y - h / 2.0, x + w / 2.0, y + h / 2.0]]])
                })
                .collect();
            Value::Array(frames)
        })
        .collect();
    Value::Array(candidates).to_string()
}

#[test]
fn malformed_plan_is_resampled_once() {
    let scene = scene();
    let (fake, calls) = FakeModel::new(vec!["sure, here you go: {not json".into(), plan_reply(&scene)], None);
    let mut planner = RemotePlanner::new(ModelClient::new(planner_ep(), Box::new(fake)));
    let plan = planner.propose_plan("slide it", &scene).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 2);
    assert_eq!(plan.sub_instructions.len(), 1);
    assert_eq!(plan.sub_instructions[0].frame_budget, 41);
}

#[test]
fn persistent_schema_errors_surface_after_retries() {
    let scene = scene();
    let (fake, calls) = FakeModel::new(vec![], Some(r#"{"phases": []}"#));
    let mut planner = RemotePlanner::new(ModelClient::new(planner_ep(), Box::new(fake)));
    assert!(matches!(planner.propose_plan("x", &scene), Err(Error::Schema(_))));
    assert_eq!(calls.load(Ordering::SeqCst), 4);
}

fn verify_with(reply: &str) -> trajverify::Result<trajverify::verify::VerificationReport> {
    let scene = scene();
    let plan = trajverify::planner::plan_from_manifest(scene.plan.as_ref().unwrap(), 41).unwrap();
    let sub = &plan.sub_instructions[0];
    let frames = (0..sub.frame_budget as usize).map(|_| scene.initial_boxes()).collect();
    let cand = TrajectoryCandidate::new(0, frames);
    let sketch = render_sketch(&cand, &scene);
    let (fake, _) = FakeModel::new(vec![], Some(reply));
    let mut verifier = RemoteVerifier::new(ModelClient::new(verifier_ep(), Box::new(fake)));
    verifier.verify(&VerifyInput {
        sketch: &sketch,
        candidate: &cand,
        sub,
        scene: &scene,
        held: &Default::default(),
        weights: &VerifierWeights::default(),
    })
}

#[test]
fn uniform_numeric_replies_combine_to_that_score() {
    let report = verify_with(r#"{"score": 0.85, "explanation": "fine"}"#).unwrap();
    assert!((report.combined - 0.85).abs() < 1e-12);
    assert!((report.semantic.score - 0.85).abs() < 1e-12);
    for law in Law::ALL {
        assert!((report.law(law).unwrap().score - 0.85).abs() < 1e-12);
    }
}

#[test]
fn descriptive_replies_use_the_verbal_map() {
    for (text, want) in [
        ("very consistent", 1.0),
        ("consistent", 0.9),
        ("somewhat consistent", 0.8),
        ("somewhat inconsistent", 0.7),
        ("inconsistent", 0.4),
        ("very inconsistent", 0.1),
    ] {
        let report = verify_with(&format!("The motion is {text} with the laws.")).unwrap();
        assert!((report.combined - want).abs() < 1e-12, "{text}: {}", report.combined);
    }
}

#[test]
fn unparseable_verifier_reply_is_a_parse_error() {
    assert!(matches!(verify_with("no idea"), Err(Error::Parse(_))));
}

fn pipeline_with(planner_t: Box<dyn Transport>, verifier_t: Box<dyn Transport>) -> Value {
    let scene = scene();
    let mut planner = RemotePlanner::new(ModelClient::new(planner_ep(), planner_t));
    let mut verifier = RemoteVerifier::new(ModelClient::new(verifier_ep(), verifier_t));
    let out = run_pipeline("slide it", &scene, &mut planner, &mut verifier, &SearchConfig::default(), &mut ()).unwrap();
    serde_json::to_value(out.trace("slide it")).unwrap()
}

#[test]
fn recorded_session_replays_identically() {
    let scene = scene();
    let dir = tempfile::tempdir().unwrap();
    let (p_path, v_path) = (dir.path().join("planner.json"), dir.path().join("verifier.json"));

    let (p_fake, _) = FakeModel::new(vec![plan_reply(&scene), trajectory_reply(&scene)], None);
    let (v_fake, v_calls) = FakeModel::new(vec![], Some("0.9"));
    let recorded = pipeline_with(
        Box::new(CassetteTransport::record(&p_path, Box::new(p_fake))),
        Box::new(CassetteTransport::record(&v_path, Box::new(v_fake))),
    );
    // one alignment plus four physics queries per candidate
    assert_eq!(v_calls.load(Ordering::SeqCst), 5 * 5);
    assert_eq!(Cassette::load(&p_path).unwrap().interactions.len(), 2);

    let replayed = pipeline_with(
        Box::new(CassetteTransport::replay_file(&p_path).unwrap()),
        Box::new(CassetteTransport::replay_file(&v_path).unwrap()),
    );
    assert_eq!(recorded, replayed);
    assert_eq!(recorded["phases"][0]["rounds"][0]["candidates"].as_array().unwrap().len(), 5);
}

#[test]
fn replay_without_recording_fails_as_transport() {
    let scene = scene();
    let mut planner = RemotePlanner::new(ModelClient::new(
        planner_ep(),
        Box::new(CassetteTransport::replay(Cassette::default())),
    ));
    assert!(matches!(planner.propose_plan("x", &scene), Err(Error::Transport(_))));
}

#[test]
fn missing_credentials_are_auth_errors() {
    let none = EndpointConfig::from_lookup("PLANNER", |_| None);
    assert!(matches!(none, Err(Error::Auth(_))));
    let url_only = EndpointConfig::from_lookup("VERIFIER", |k| (k == "VERIFIER_API_URL").then(|| "http://x".into()));
    assert!(matches!(url_only, Err(Error::Auth(_))));
    let key_only = EndpointConfig::from_lookup("VERIFIER", |k| (k == "VERIFIER_API_KEY").then(|| "s".into()));
    assert!(matches!(key_only, Err(Error::Transport(_))));
}

#[test]
fn closed_local_port_is_a_transport_error() {
    let ep = EndpointConfig::new("http://127.0.0.1:9/v1", "m").with_key("k");
    let mut planner = RemotePlanner::new(ModelClient::http(ep));
    assert!(matches!(planner.propose_plan("x", &scene()), Err(Error::Transport(_))));
}
