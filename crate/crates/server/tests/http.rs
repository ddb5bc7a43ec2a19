use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use reviewad_core::survey::{demo_config, SurveyConfig, SurveyStore};
use reviewad_server::RunningServer;
use serde_json::{json, Value};

struct Client {
    base: String,
    agent: ureq::Agent,
}

impl Client {
    fn new(server: &RunningServer) -> Self {
        Client {
            base: server.base_url(),
            agent: ureq::Agent::config_builder()
                .http_status_as_error(false)
                .build()
                .into(),
        }
    }

    fn get(&self, path: &str) -> (u16, Value) {
        let mut r = self
            .agent
            .get(format!("{}{path}", self.base))
            .call()
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let mut r = self
            .agent
            .post(format!("{}{path}", self.base))
            .send_json(body)
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    fn post_raw(&self, path: &str, body: &str) -> (u16, Value) {
        let mut r = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    fn create(&self, technique: Option<&str>) -> String {
        let mut body = json!({"participant": {"knowledge_area": "Natural Sciences"}});
        if let Some(t) = technique {
            body["technique"] = json!(t);
        }
        let (status, v) = self.post("/sessions", &body);
        assert_eq!(status, 201, "{v}");
        v["session_id"].as_str().unwrap().to_string()
    }
}

fn serve(config: SurveyConfig) -> RunningServer {
    let store = Arc::new(SurveyStore::in_memory(config).unwrap());
    RunningServer::spawn(store, &[], "127.0.0.1:0").unwrap()
}

fn item_ids(step: &Value) -> Vec<String> {
    step["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["review_id"].as_str().unwrap().to_string())
        .collect()
}

fn answers(ids: &[String], label: &str) -> Value {
    json!({"answers": ids.iter().map(|id| json!({"review_id": id, "label": label})).collect::<Vec<_>>()})
}

fn assert_error(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()), "{v}");
    assert!(v["details"].is_object(), "{v}");
}

/// Prediction-phase payloads carry neither labels nor explanation content.
fn assert_no_leak(step: &Value, config: &SurveyConfig) {
    let text = step.to_string();
    for key in ["model_label", "explanation", "explanations", "label"] {
        assert!(
            !text.contains(&format!("\"{key}\"")),
            "{key} leaked: {text}"
        );
    }
    for item in &config.learning_items {
        assert!(
            !text.contains(&item.text),
            "learning text leaked: {}",
            item.text
        );
        for e in item.explanations.values() {
            assert!(!text.contains(&serde_json::to_string(&e.evidence).unwrap()));
        }
    }
}

#[test]
fn full_session_over_http() {
    let config = demo_config(11);
    let server = serve(config.clone());
    let c = Client::new(&server);
    let id = c.create(Some("occlusion"));

    let (status, step) = c.get(&format!("/sessions/{id}/step"));
    assert_eq!(status, 200);
    assert_eq!(step["phase"], "learning");
    assert_eq!(step["technique"], "occlusion");
    assert_eq!(step["items"].as_array().unwrap().len(), 20);
    assert!(!step.to_string().contains("\"explanation\""));

    let (_, pre) = c.post(
        &format!("/sessions/{id}/advance"),
        &json!({"from": "learning"}),
    );
    assert_eq!(pre["phase"], "pre");
    assert_no_leak(&pre, &config);
    let pre_ids = item_ids(&pre);
    assert_eq!(pre_ids.len(), 10);

    let (status, ack) = c.post(
        &format!("/sessions/{id}/predictions"),
        &answers(&pre_ids, "normal"),
    );
    assert_eq!(status, 200, "{ack}");
    assert_eq!(ack["phase"], "learning_explained");

    let (_, explained) = c.get(&format!("/sessions/{id}/step"));
    let items = explained["items"].as_array().unwrap();
    assert_eq!(items.len(), 20);
    assert!(items
        .iter()
        .all(|i| i["explanation"]["method"] == "occlusion"));

    let (_, post) = c.post_raw(&format!("/sessions/{id}/advance"), "");
    assert_eq!(post["phase"], "post");
    assert_no_leak(&post, &config);
    let post_ids = item_ids(&post);
    assert_eq!(
        pre_ids.iter().collect::<HashSet<_>>(),
        post_ids.iter().collect::<HashSet<_>>()
    );
    let (_, ack) = c.post(
        &format!("/sessions/{id}/predictions"),
        &answers(&post_ids, "anomalous"),
    );
    assert_eq!(ack["phase"], "utility");

    for n in 0..8 {
        let (_, u) = c.get(&format!("/sessions/{id}/step"));
        assert_eq!(u["phase"], "utility");
        assert_eq!(u["completed"], n);
        assert_eq!(u["item"]["explanations"].as_array().unwrap().len(), 3);
        let rid = u["item"]["review_id"].as_str().unwrap();
        let ranks = json!({"frequent_terms": 1, "occlusion": 2, "llm": 1});
        let (status, ack) = c.post(
            &format!("/sessions/{id}/utility"),
            &json!({"review_id": rid, "ranks": ranks}),
        );
        assert_eq!(status, 200, "{ack}");
        assert_eq!(ack["utility_completed"], n + 1);
    }
    let (_, done) = c.get(&format!("/sessions/{id}/step"));
    assert_eq!(done["phase"], "done");

    let (status, export) = c.get("/export");
    assert_eq!(status, 200);
    let sessions = export["sessions"].as_array().unwrap();
    assert_eq!(sessions.len(), 1);
    assert_eq!(
        sessions[0]["forward"]["pre_answers"]
            .as_array()
            .unwrap()
            .len(),
        10
    );
    assert_eq!(sessions[0]["utility"].as_array().unwrap().len(), 8);
}

#[test]
fn error_bodies_are_structured() {
    let config = demo_config(3);
    let server = serve(config);
    let c = Client::new(&server);

    let (status, v) = c.get("/sessions/nope/step");
    assert_eq!(status, 404);
    assert_error(&v, "not_found");
    assert_eq!(v["details"]["module"], "survey");

    let (status, v) = c.post(
        "/sessions",
        &json!({"participant": {"knowledge_area": "Astrology"}}),
    );
    assert_eq!(status, 422);
    assert_error(&v, "validation");
    assert_eq!(v["details"]["knowledge_areas"].as_array().unwrap().len(), 6);
    assert!(v["message"]
        .as_str()
        .unwrap()
        .contains("Engineering and Architecture"));

    let (status, v) = c.post_raw("/sessions", "{not json");
    assert_eq!(status, 400);
    assert_error(&v, "bad_request");

    let id = c.create(None);
    let (status, v) = c.post(
        &format!("/sessions/{id}/predictions"),
        &json!({"answers": []}),
    );
    assert_eq!(status, 409);
    assert_error(&v, "protocol_violation");

    let (_, pre) = c.post(&format!("/sessions/{id}/advance"), &json!({}));
    let ids = item_ids(&pre);
    let (status, v) = c.post(
        &format!("/sessions/{id}/predictions"),
        &answers(&ids[..7], "normal"),
    );
    assert_eq!(status, 422);
    assert_error(&v, "incomplete_answers");
    let missing: HashSet<&str> = v["details"]["missing"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m.as_str().unwrap())
        .collect();
    assert_eq!(missing, ids[7..].iter().map(String::as_str).collect());

    let mut dup = answers(&ids, "normal");
    dup["answers"].as_array_mut().unwrap()[1]["review_id"] = json!(ids[0]);
    let (status, v) = c.post(&format!("/sessions/{id}/predictions"), &dup);
    assert_eq!(status, 422);
    assert_error(&v, "validation");

    let mut full = answers(&ids, "normal");
    full["phase"] = json!("pre");
    assert_eq!(c.post(&format!("/sessions/{id}/predictions"), &full).0, 200);
    let (status, v) = c.post(&format!("/sessions/{id}/predictions"), &full);
    assert_eq!(status, 409);
    assert_error(&v, "conflict");

    let (status, v) = c.post(
        &format!("/sessions/{id}/advance"),
        &json!({"from": "learning"}),
    );
    assert_eq!(status, 409);
    assert_eq!(v["code"], "conflict");
}

#[test]
fn utility_validation_over_http() {
    let server = serve(demo_config(5));
    let c = Client::new(&server);
    let id = c.create(Some("llm"));
    c.post(&format!("/sessions/{id}/advance"), &json!({}));
    let (_, pre) = c.get(&format!("/sessions/{id}/step"));
    c.post(
        &format!("/sessions/{id}/predictions"),
        &answers(&item_ids(&pre), "normal"),
    );
    c.post(&format!("/sessions/{id}/advance"), &json!({}));
    let (_, post) = c.get(&format!("/sessions/{id}/step"));
    c.post(
        &format!("/sessions/{id}/predictions"),
        &answers(&item_ids(&post), "normal"),
    );

    let (_, u) = c.get(&format!("/sessions/{id}/step"));
    let rid = u["item"]["review_id"].as_str().unwrap();
    let (status, v) = c.post(
        &format!("/sessions/{id}/utility"),
        &json!({"review_id": rid, "ranks": {"frequent_terms": 1, "occlusion": 2}}),
    );
    assert_eq!(status, 422);
    assert_error(&v, "validation");
    let (status, _) = c.post(
        &format!("/sessions/{id}/utility"),
        &json!({"review_id": rid, "ranks": {"frequent_terms": 1, "occlusion": 4, "llm": 2}}),
    );
    assert_eq!(status, 422);
    let (status, v) = c.post(
        &format!("/sessions/{id}/utility"),
        &json!({"review_id": "unknown", "ranks": {"frequent_terms": 1, "occlusion": 2, "llm": 3}}),
    );
    assert_eq!(status, 422, "{v}");
    let ok = json!({"review_id": rid, "ranks": {"frequent_terms": 3, "occlusion": 2, "llm": 1}});
    assert_eq!(c.post(&format!("/sessions/{id}/utility"), &ok).0, 200);
    assert_eq!(c.post(&format!("/sessions/{id}/utility"), &ok).0, 409);
}

#[test]
fn round_robin_and_export_exclude_unfinished() {
    let server = serve(demo_config(9));
    let c = Client::new(&server);
    let (status, export) = c.get("/export");
    assert_eq!(status, 200);
    assert_eq!(export["sessions"], json!([]));

    let mut techniques = Vec::new();
    for _ in 0..6 {
        let id = c.create(None);
        techniques.push(c.get(&format!("/sessions/{id}/step")).1["technique"].clone());
    }
    assert_eq!(
        techniques,
        [
            "frequent_terms",
            "occlusion",
            "llm",
            "frequent_terms",
            "occlusion",
            "llm"
        ]
        .map(|t| json!(t))
    );
    assert_eq!(c.get("/export").1["sessions"], json!([]));
}

#[test]
fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let config = demo_config(2);

    let store = Arc::new(SurveyStore::open(config.clone(), &log).unwrap());
    let server = RunningServer::spawn(store, &[], "127.0.0.1:0").unwrap();
    let c = Client::new(&server);
    let id = c.create(Some("frequent_terms"));
    let (_, pre) = c.post(&format!("/sessions/{id}/advance"), &json!({}));
    let pre_ids = item_ids(&pre);
    server.stop().unwrap();

    let store = Arc::new(SurveyStore::open(config, &log).unwrap());
    let server = RunningServer::spawn(store, &[], "127.0.0.1:0").unwrap();
    let c = Client::new(&server);
    let (status, step) = c.get(&format!("/sessions/{id}/step"));
    assert_eq!(status, 200);
    assert_eq!(step["phase"], "pre");
    assert_eq!(item_ids(&step), pre_ids);
}

#[test]
fn cors_allows_configured_origin() {
    let store = Arc::new(SurveyStore::in_memory(demo_config(1)).unwrap());
    let origins = vec!["http://localhost:5173".to_string()];
    let server = RunningServer::spawn(store, &origins, "127.0.0.1:0").unwrap();
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    let preflight = |origin: &str| {
        agent
            .options(format!("{}/sessions", server.base_url()))
            .header("origin", origin)
            .header("access-control-request-method", "POST")
            .call()
            .unwrap()
    };
    let allowed = preflight("http://localhost:5173");
    assert_eq!(
        allowed
            .headers()
            .get("access-control-allow-origin")
            .unwrap(),
        "http://localhost:5173"
    );
    let denied = preflight("http://evil.example");
    assert!(denied
        .headers()
        .get("access-control-allow-origin")
        .is_none());

    let bad = RunningServer::spawn(
        Arc::new(SurveyStore::in_memory(demo_config(1)).unwrap()),
        &["bad\norigin".to_string()],
        "127.0.0.1:0",
    );
    assert!(bad.is_err());
}

#[test]
fn concurrent_sessions_stay_consistent() {
    let server = serve(demo_config(4));
    let base = server.base_url();
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let base = base.clone();
            std::thread::spawn(move || {
                let c = Client {
                    base,
                    agent: ureq::Agent::config_builder()
                        .http_status_as_error(false)
                        .build()
                        .into(),
                };
                let id = c.create(None);
                let (_, pre) = c.post(&format!("/sessions/{id}/advance"), &json!({}));
                let (status, _) = c.post(
                    &format!("/sessions/{id}/predictions"),
                    &answers(&item_ids(&pre), "normal"),
                );
                assert_eq!(status, 200);
                c.get(&format!("/sessions/{id}/step")).1["technique"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
        })
        .collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for h in handles {
        *counts.entry(h.join().unwrap()).or_default() += 1;
    }
    // Round-robin over 8 creations: 3 + 3 + 2 regardless of interleaving.
    let mut sizes: Vec<usize> = counts.values().copied().collect();
    sizes.sort();
    assert_eq!(sizes, vec![2, 3, 3]);
}
