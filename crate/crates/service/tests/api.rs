use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use weaklab::campaign::{Campaign, CampaignConfig};
use weaklab::stats::cohen_kappa;
use weaklab::{Dataset, Example, Kappa, LabelMatrix, LabelSpace, LfKind};
use weaklab_service::{router, AppState, Project, ProjectStore, SharedState};

fn space() -> LabelSpace {
    LabelSpace::new("tri", ["a", "b", "c"]).unwrap()
}

fn corpus(n: usize) -> Dataset {
    let examples = (0..n).map(|i| Example::new(format!("x{i:03}"), format!("utterance number {i}")).with_gold(i % 3));
    Dataset::from_examples(space(), examples).unwrap()
}

fn project(dataset: Dataset, matrix: LabelMatrix, batch_size: usize, annotators: &[&str]) -> Project {
    let config = CampaignConfig {
        batch_size,
        seed: 5,
        ..CampaignConfig::default()
    };
    let mut campaign = Campaign::start(dataset, matrix, config).unwrap();
    for a in annotators {
        campaign.register_annotator(a).unwrap();
    }
    Project::in_memory(campaign)
}

fn app_for(project: Project) -> (SharedState, Router) {
    let state = AppState::new(project);
    let app = router(state.clone(), None);
    (state, app)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn queue(app: &Router, annotator: &str, limit: usize) -> (StatusCode, Value) {
    call(app, "GET", &format!("/api/queue?annotator={annotator}&limit={limit}"), None).await
}

fn submission(example: &str, annotator: &str, label: &str, accepted: bool, latency: f64) -> Value {
    json!({
        "example_id": example,
        "annotator": annotator,
        "label": label,
        "accepted_suggestion": accepted,
        "latency_seconds": latency,
    })
}

async fn submit(app: &Router, body: Value) -> (StatusCode, Value) {
    call(app, "POST", "/api/labels", Some(body)).await
}

fn ids(items: &Value) -> Vec<String> {
    items
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["example_id"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn queue_keeps_batch_order_and_skips_labeled_items() {
    let (state, app) = app_for(project(corpus(30), LabelMatrix::new(30, 3), 10, &["ann_a"]));
    let (status, items) = queue(&app, "ann_a", 50).await;
    assert_eq!(status, StatusCode::OK);
    let batch = ids(&items);
    assert_eq!(batch.len(), 10);
    {
        let project = state.project().await;
        let campaign = project.campaign();
        let issued: Vec<&str> = campaign.batch().iter().map(|b| b.example_id.as_str()).collect();
        assert_eq!(batch, issued);
        for item in items.as_array().unwrap() {
            let i = campaign.dataset().index_of(item["example_id"].as_str().unwrap()).unwrap();
            let expected = &campaign.dataset().label_space().classes()[campaign.snapshot().hard_label(i)];
            assert_eq!(item["suggested_label"], json!(expected));
        }
    }

    for &k in &[0, 2, 5, 7] {
        let (status, _) = submit(&app, submission(&batch[k], "ann_a", "b", false, 3.0)).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, rest) = queue(&app, "ann_a", 50).await;
    let expected: Vec<String> = batch
        .iter()
        .enumerate()
        .filter(|(k, _)| ![0, 2, 5, 7].contains(k))
        .map(|(_, id)| id.clone())
        .collect();
    assert_eq!(ids(&rest), expected);

    let (_, limited) = queue(&app, "ann_a", 2).await;
    assert_eq!(ids(&limited), expected[..2].to_vec());
    let (_, none) = queue(&app, "ann_a", 0).await;
    assert_eq!(none, json!([]));

    for id in &expected {
        submit(&app, submission(id, "ann_a", "a", true, 1.0)).await;
    }
    let (status, done) = queue(&app, "ann_a", 50).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(done, json!([]));
}

#[tokio::test]
async fn error_statuses() {
    let (_, app) = app_for(project(corpus(30), LabelMatrix::new(30, 3), 10, &["ann_a"]));
    let (status, body) = queue(&app, "nobody", 5).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nobody"));

    let (_, items) = queue(&app, "ann_a", 50).await;
    let issued = ids(&items);
    let unissued = (0..30).map(|i| format!("x{i:03}")).find(|id| !issued.contains(id)).unwrap();

    let (status, _) = submit(&app, submission(&unissued, "ann_a", "a", true, 1.0)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = submit(&app, submission(&issued[0], "ghost", "a", true, 1.0)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = submit(&app, submission(&issued[0], "ann_a", "zebra", true, 1.0)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("zebra"));

    let (status, body) = call(&app, "POST", "/api/rounds/advance", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].is_string());
    let (status, _) = call(&app, "POST", "/api/rounds/advance?force=true", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn resubmission_overwrites_and_is_flagged() {
    let (state, app) = app_for(project(corpus(30), LabelMatrix::new(30, 3), 10, &["ann_a"]));
    let (_, items) = queue(&app, "ann_a", 1).await;
    let id = ids(&items)[0].clone();
    let (_, first) = submit(&app, submission(&id, "ann_a", "a", true, 2.0)).await;
    assert_eq!(first["overwrote"], json!(false));
    let (_, second) = submit(&app, submission(&id, "ann_a", "c", false, 2.0)).await;
    assert_eq!(second["overwrote"], json!(true));

    let project = state.project().await;
    let matrix = project.campaign().matrix();
    assert_eq!(matrix.num_votes(), 1);
    let lf = matrix.lf_idx("ann_a").unwrap();
    let i = project.campaign().dataset().index_of(&id).unwrap();
    assert_eq!(matrix.vote(i, lf), Some(2));
}

#[tokio::test]
async fn identical_labels_give_perfect_kappa() {
    let (_, app) = app_for(project(corpus(30), LabelMatrix::new(30, 3), 10, &["ann_a", "ann_b"]));
    let (_, items) = queue(&app, "ann_a", 50).await;
    let batch = ids(&items);
    let labels = ["a", "b", "c"];
    for (k, id) in batch.iter().enumerate() {
        submit(&app, submission(id, "ann_a", labels[k % 3], true, 1.0)).await;
    }
    let mut last = Value::Null;
    for (k, id) in batch.iter().enumerate() {
        last = submit(&app, submission(id, "ann_b", labels[k % 3], true, 1.0)).await.1;
    }
    assert_eq!(last["annotator"], json!("ann_b"));
    let kappas = last["kappas"].as_array().unwrap();
    assert_eq!(kappas.len(), 1);
    assert_eq!(kappas[0]["lf_b"], json!("ann_a"));
    assert_eq!(kappas[0]["kappa"]["value"], json!(1.0));
    assert_eq!(last["coverage"], json!(10.0 / 30.0));
}

#[tokio::test]
async fn forced_advances_without_labels_repeat_the_batch() {
    let (state, app) = app_for(project(corpus(40), LabelMatrix::new(40, 3), 8, &["ann_a"]));
    let (status, first) = call(&app, "POST", "/api/rounds/advance?force=true", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first["round"], json!(1));
    assert_eq!(first["batch_size"], json!(8));
    let (_, second) = call(&app, "POST", "/api/rounds/advance?force=true", None).await;
    assert_eq!(second["round"], json!(2));

    let project = state.project().await;
    let campaign = project.campaign();
    let history = campaign.history();
    assert_eq!(history.len(), 2);
    assert!(history.iter().all(|r| r.forced));
    assert_eq!(history[0].batch, history[1].batch);
    assert_eq!(history[1].batch, campaign.batch());
}

#[tokio::test]
async fn exhausted_pool_gives_empty_batch_then_no_active_round() {
    let (_, app) = app_for(project(corpus(3), LabelMatrix::new(3, 3), 10, &["ann_a"]));
    let (_, items) = queue(&app, "ann_a", 50).await;
    for id in ids(&items) {
        submit(&app, submission(&id, "ann_a", "a", true, 1.0)).await;
    }
    let (status, summary) = call(&app, "POST", "/api/rounds/advance", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["batch_size"], json!(0));
    let (status, body) = queue(&app, "ann_a", 5).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("no active round"));
}

#[tokio::test]
async fn inaccurate_rule_is_discarded_on_advance() {
    let dataset = corpus(30);
    let mut matrix = LabelMatrix::for_dataset(&dataset);
    let good = matrix.register_lf("rule:good", LfKind::Rule).unwrap();
    let bad = matrix.register_lf("rule:bad", LfKind::Rule).unwrap();
    for i in 0..30 {
        let gold = i % 3;
        matrix.set_vote(i, good, gold).unwrap();
        if i % 2 == 0 {
            matrix.set_vote(i, bad, (gold + 1) % 3).unwrap();
        }
    }
    let (_, app) = app_for(project(dataset, matrix, 5, &["ann_a"]));
    let (status, summary) = call(&app, "POST", "/api/rounds/advance?force=true", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["discarded"], json!([["rule:bad", "accuracy"]]));

    let (_, stats) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(stats["history"][0]["discarded"], json!([["rule:bad", "accuracy"]]));
    let listed: Vec<&str> = stats["lf_stats"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["lf_id"].as_str().unwrap())
        .collect();
    assert_eq!(listed, ["rule:good"]);
}

#[tokio::test]
async fn empty_project_stats_are_zeroed() {
    let dataset = Dataset::new(space());
    let matrix = LabelMatrix::for_dataset(&dataset);
    let (_, app) = app_for(project(dataset, matrix, 10, &[]));
    let (status, stats) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        stats,
        json!({
            "round": 0,
            "lf_stats": [],
            "pairwise_kappa": [],
            "fleiss_kappa": null,
            "class_distribution": [],
            "annotators": [],
            "history": [],
        })
    );
}

#[tokio::test]
async fn dashboard_reports_median_latency_and_accept_rate() {
    let (_, app) = app_for(project(corpus(30), LabelMatrix::new(30, 3), 10, &["ann_a", "ann_b"]));
    let (_, items) = queue(&app, "ann_a", 50).await;
    let batch = ids(&items);
    let script_a = [(12.0, true), (30.0, false), (7.0, true), (95.0, true), (21.0, false)];
    for (id, (latency, accepted)) in batch.iter().zip(script_a) {
        submit(&app, submission(id, "ann_a", "a", accepted, latency)).await;
    }
    let script_b = [(4.0, false), (10.0, true)];
    for (id, (latency, accepted)) in batch.iter().zip(script_b) {
        submit(&app, submission(id, "ann_b", "a", accepted, latency)).await;
    }
    let (_, stats) = call(&app, "GET", "/api/stats", None).await;
    let annotators = stats["annotators"].as_array().unwrap();
    assert_eq!(annotators.len(), 2);
    assert_eq!(annotators[0]["annotator"], json!("ann_a"));
    assert_eq!(annotators[0]["submissions"], json!(5));
    assert_eq!(annotators[0]["accepted"], json!(3));
    assert_eq!(annotators[0]["accept_rate"], json!(0.6));
    assert_eq!(annotators[0]["median_latency_seconds"], json!(21.0));
    assert_eq!(annotators[1]["median_latency_seconds"], json!(7.0));
    assert_eq!(annotators[1]["accept_rate"], json!(0.5));
}

#[tokio::test]
async fn stats_are_served_from_the_snapshot_while_writer_is_busy() {
    let (state, app) = app_for(project(corpus(30), LabelMatrix::new(30, 3), 10, &["ann_a"]));
    let (_, before) = call(&app, "GET", "/api/stats", None).await;
    let guard = state.lock_exclusive().await;

    let advancing = tokio::spawn({
        let app = app.clone();
        async move { call(&app, "POST", "/api/rounds/advance?force=true", None).await }
    });
    let (status, during) = tokio::time::timeout(Duration::from_secs(5), call(&app, "GET", "/api/stats", None))
        .await
        .expect("stats must not wait for the writer");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(during, before);
    assert!(!advancing.is_finished());

    drop(guard);
    let (status, summary) = advancing.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["round"], json!(1));
    let (_, after) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(after["round"], json!(1));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writers_lose_no_votes() {
    let dir = tempfile::tempdir().unwrap();
    let store = ProjectStore {
        rounds_log: dir.path().join("rounds.jsonl"),
        state_dir: dir.path().join("state"),
    };
    let writers = ["w0", "w1", "w2", "w3"];
    let dataset = corpus(100);
    let matrix = LabelMatrix::for_dataset(&dataset);
    let config = CampaignConfig {
        batch_size: 100,
        seed: 1,
        ..CampaignConfig::default()
    };
    let annotators: Vec<String> = writers.iter().map(|w| w.to_string()).collect();
    let project = Project::open(dataset, matrix, config, &annotators, store.clone()).unwrap();
    let (state, app) = app_for(project);
    let batch: Vec<String> = state.project().await.campaign().batch().iter().map(|b| b.example_id.clone()).collect();
    assert_eq!(batch.len(), 100);

    let mut tasks = Vec::new();
    for (w, writer) in writers.iter().enumerate() {
        let app = app.clone();
        let batch = batch.clone();
        let writer = writer.to_string();
        tasks.push(tokio::spawn(async move {
            for (k, id) in batch.iter().enumerate() {
                let label = ["a", "b", "c"][(k + w) % 3];
                let (status, _) = submit(&app, submission(id, &writer, label, false, 1.0)).await;
                assert_eq!(status, StatusCode::OK);
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let project = state.project().await;
    assert_eq!(project.campaign().matrix().num_votes(), 400);
    let on_disk = std::fs::read_to_string(store.matrix_path()).unwrap();
    assert_eq!(on_disk.lines().count(), 400);
    let pending = std::fs::read_to_string(store.pending_path()).unwrap();
    assert_eq!(pending.lines().count(), 400);
}

#[tokio::test]
async fn reopening_a_store_restores_rounds_and_pending_labels() {
    let dir = tempfile::tempdir().unwrap();
    let store = ProjectStore {
        rounds_log: dir.path().join("rounds.jsonl"),
        state_dir: dir.path().join("state"),
    };
    let config = CampaignConfig {
        batch_size: 6,
        seed: 3,
        ..CampaignConfig::default()
    };
    let annotators = vec!["ann_a".to_string()];
    let open = || {
        let dataset = corpus(30);
        let matrix = LabelMatrix::for_dataset(&dataset);
        Project::open(dataset, matrix, config.clone(), &annotators, store.clone()).unwrap()
    };

    let (state, app) = app_for(open());
    let (_, items) = queue(&app, "ann_a", 50).await;
    for (k, id) in ids(&items).iter().enumerate() {
        submit(&app, submission(id, "ann_a", ["a", "b", "c"][k % 3], true, 4.0)).await;
    }
    call(&app, "POST", "/api/rounds/advance", None).await;
    let (_, items) = queue(&app, "ann_a", 3).await;
    for id in ids(&items) {
        submit(&app, submission(&id, "ann_a", "b", false, 9.0)).await;
    }
    let (_, stats_before) = call(&app, "GET", "/api/stats", None).await;
    let matrix_before = std::fs::read_to_string(store.matrix_path()).unwrap();
    let (batch_before, pending_before) = {
        let project = state.project().await;
        (project.campaign().batch().to_vec(), project.campaign().pending_submissions().to_vec())
    };
    drop(app);
    drop(state);

    let reopened = open();
    let campaign = reopened.campaign();
    assert_eq!(campaign.round(), 1);
    assert_eq!(campaign.batch(), batch_before.as_slice());
    assert_eq!(campaign.pending_submissions(), pending_before.as_slice());
    assert_eq!(std::fs::read_to_string(store.matrix_path()).unwrap(), matrix_before);
    let (_, app) = app_for(reopened);
    let (_, stats_after) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(stats_after, stats_before);
}

#[tokio::test]
async fn scripted_labeling_session_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let store = ProjectStore {
        rounds_log: dir.path().join("rounds.jsonl"),
        state_dir: dir.path().join("state"),
    };
    let dataset = corpus(40);
    let matrix = LabelMatrix::for_dataset(&dataset);
    let config = CampaignConfig {
        batch_size: 10,
        seed: 21,
        ..CampaignConfig::default()
    };
    let annotators = vec!["ann_a".to_string(), "ann_b".to_string()];
    let project = Project::open(dataset.clone(), matrix, config, &annotators, store.clone()).unwrap();
    let (_, app) = app_for(project);

    let (_, items) = queue(&app, "ann_a", 10).await;
    let items = items.as_array().unwrap().clone();
    assert_eq!(items.len(), 10);
    // Accept the suggestion on even positions, override with the next class otherwise.
    let classes = ["a", "b", "c"];
    let mut script = Vec::new();
    for (k, item) in items.iter().enumerate() {
        let suggested = item["suggested_label"].as_str().unwrap();
        let accept = k % 2 == 0;
        let label = if accept {
            suggested.to_string()
        } else {
            let s = classes.iter().position(|c| *c == suggested).unwrap();
            classes[(s + 1) % 3].to_string()
        };
        let id = item["example_id"].as_str().unwrap().to_string();
        let (status, _) = submit(&app, submission(&id, "ann_a", &label, accept, 2.0 + k as f64)).await;
        assert_eq!(status, StatusCode::OK);
        script.push((id, label, accept));
    }

    let saved = LabelMatrix::read_jsonl(store.matrix_path(), &dataset).unwrap();
    assert_eq!(saved.num_votes(), 10);
    let lf = saved.lf_idx("ann_a").unwrap();
    for (id, label, _) in &script {
        let i = dataset.index_of(id).unwrap();
        assert_eq!(saved.vote(i, lf), Some(dataset.label_space().index_of(label).unwrap()));
    }
    let logged: Vec<weaklab::campaign::LabelSubmission> = weaklab::campaign::read_jsonl_log(store.pending_path()).unwrap();
    let flags: Vec<bool> = logged.iter().map(|s| s.accepted_suggestion).collect();
    assert_eq!(flags, script.iter().map(|s| s.2).collect::<Vec<_>>());

    // Second annotator disagrees on two items.
    for (k, (id, label, _)) in script.iter().enumerate() {
        let label = if k < 2 {
            let s = classes.iter().position(|c| c == label).unwrap();
            classes[(s + 2) % 3].to_string()
        } else {
            label.clone()
        };
        submit(&app, submission(id, "ann_b", &label, false, 1.0)).await;
    }
    let (_, stats) = call(&app, "GET", "/api/stats", None).await;
    let saved = LabelMatrix::read_jsonl(store.matrix_path(), &dataset).unwrap();
    let offline = cohen_kappa(&saved, "ann_a", "ann_b").unwrap();
    let served: Kappa = serde_json::from_value(stats["pairwise_kappa"][0]["kappa"].clone()).unwrap();
    assert_eq!(served, offline);
    assert_eq!(stats["pairwise_kappa"][0]["lf_a"], json!("ann_a"));

    let shown = Kappa {
        value: 0.794,
        degenerate: false,
        items: 10,
    };
    assert_eq!(shown.percent(), "79.4");
}

#[tokio::test]
async fn serves_over_tcp_with_cors() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    let state = AppState::new(project(corpus(10), LabelMatrix::new(10, 3), 5, &["ann_a"]));
    let origin = "http://localhost:5173";
    let app = router(state, Some(origin.parse().unwrap()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let exchange = |request: String| async move {
        let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
        stream.write_all(request.as_bytes()).await.unwrap();
        let mut response = String::new();
        stream.read_to_string(&mut response).await.unwrap();
        response
    };

    let get = exchange(format!(
        "GET /api/queue?annotator=ann_a&limit=2 HTTP/1.1\r\nHost: {addr}\r\nOrigin: {origin}\r\nConnection: close\r\n\r\n"
    ))
    .await;
    assert!(get.starts_with("HTTP/1.1 200"), "{get}");
    assert!(get.to_ascii_lowercase().contains(&format!("access-control-allow-origin: {origin}")));
    assert!(get.contains("\"suggested_label\""));

    let preflight = exchange(format!(
        "OPTIONS /api/labels HTTP/1.1\r\nHost: {addr}\r\nOrigin: {origin}\r\nAccess-Control-Request-Method: POST\r\nAccess-Control-Request-Headers: content-type\r\nConnection: close\r\n\r\n"
    ))
    .await;
    assert!(preflight.starts_with("HTTP/1.1 200"), "{preflight}");
    let lower = preflight.to_ascii_lowercase();
    assert!(lower.contains("access-control-allow-methods"));
    assert!(lower.contains("post"));
}
