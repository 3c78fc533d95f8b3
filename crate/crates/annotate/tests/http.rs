use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use argrel::acquire::{AcquisitionScore, PropRef, Strategy};
use argrel::alloop::{resume_al, run_al, AlConfig, AlOutcome};
use argrel::corpus::{
    generate_synthetic, rules, validate, Corpus, Document, Profile, PropType, Proposition, Relation, RelationLabel,
    Split, SynthConfig,
};
use argrel::encoder::EncoderConfig;
use argrel::relhead::TrainConfig;
use argrel::windowing::{WindowConfig, WindowMode};
use argrel_annotate::{
    AnnotationTask, Decision, ExternalOracle, RunInfo, Service, ServiceConfig, TailDecision,
};
use reqwest::StatusCode;
use serde_json::{json, Value};

fn doc(id: &str, types: &[PropType]) -> Document {
    Document {
        doc_id: id.into(),
        propositions: types
            .iter()
            .enumerate()
            .map(|(i, &t)| Proposition { id: i, text: format!("claim number {i} here"), ptype: t })
            .collect(),
        relations: Vec::new(),
    }
}

fn window(l: usize) -> WindowConfig {
    WindowConfig { window: l, max_tokens: 512, mode: WindowMode::EndToEnd }
}

fn info(l: usize, budget: usize) -> RunInfo {
    RunInfo { run_id: "r1".into(), strategy: Strategy::RandomProp, iterations: 1, budget, window: window(l) }
}

fn picks(props: &[(usize, usize)]) -> Vec<AcquisitionScore> {
    // earlier entries score lower, so the queue order reverses them
    props.iter().enumerate().map(|(i, &(d, p))| AcquisitionScore { prop: PropRef::new(d, p), score: i as f64 }).collect()
}

async fn spawn(service: Arc<Service>) -> String {
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(argrel_annotate::serve(
        service,
        "127.0.0.1:0".parse().unwrap(),
        move |addr| {
            let _ = tx.send(addr);
        },
        std::future::pending(),
    ));
    format!("http://{}/api/v1", rx.await.unwrap())
}

async fn get(client: &reqwest::Client, url: String, who: Option<&str>) -> (StatusCode, Value) {
    let mut req = client.get(url);
    if let Some(w) = who {
        req = req.header("x-annotator-id", w);
    }
    let resp = req.send().await.unwrap();
    (resp.status(), resp.json().await.unwrap())
}

async fn post(client: &reqwest::Client, base: &str, body: Value) -> (StatusCode, Value) {
    let resp = client.post(format!("{base}/labels")).json(&body).send().await.unwrap();
    (resp.status(), resp.json().await.unwrap())
}

fn tasks(v: &Value) -> Vec<AnnotationTask> {
    serde_json::from_value(v["tasks"].clone()).unwrap()
}

fn all(task: &AnnotationTask, d: &str) -> Value {
    json!(task.candidates.iter().map(|t| json!({"tail": t, "decision": d})).collect::<Vec<_>>())
}

#[tokio::test]
async fn queue_without_run_conflicts() {
    let service = Service::new(ServiceConfig::default()).unwrap();
    let base = spawn(service).await;
    let client = reqwest::Client::new();
    let (status, body) = get(&client, format!("{base}/queue?limit=3"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "no_active_run");
    assert!(body["message"].as_str().is_some());
    let (status, body) = get(&client, format!("{base}/run"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["active"], false);
}

#[tokio::test]
async fn queue_is_score_ordered_and_limited() {
    let service = Service::new(ServiceConfig::default()).unwrap();
    let docs: Vec<Document> = (0..5).map(|i| doc(&format!("d{i}"), &[PropType::Evaluation; 4])).collect();
    service.start_run(info(2, 10), Arc::new(docs));
    let sel: Vec<(usize, usize)> = (0..10).map(|i| (i / 2, i % 2)).collect();
    service.publish(1, &picks(&sel));
    let base = spawn(service).await;
    let client = reqwest::Client::new();

    let (status, body) = get(&client, format!("{base}/progress"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["pending"], 10);
    assert_eq!(body["labeled"], 0);

    let (_, body) = get(&client, format!("{base}/queue?limit=3"), None).await;
    let got = tasks(&body);
    assert_eq!(got.len(), 3);
    let scores: Vec<f64> = got.iter().map(|t| t.score).collect();
    assert_eq!(scores, vec![9.0, 8.0, 7.0]);
    for t in &got {
        assert!(t.candidates.iter().all(|&c| c.abs_diff(t.head) <= 2 && c != t.head));
        let ids: Vec<usize> = t.window.iter().map(|w| w.id).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }
    let (_, body) = get(&client, format!("{base}/queue?limit=0"), None).await;
    assert!(tasks(&body).is_empty());

    let (status, body) = get(&client, format!("{base}/doc/d1"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["propositions"].as_array().unwrap().len(), 4);
    let (status, body) = get(&client, format!("{base}/doc/nope"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_doc");
}

#[tokio::test]
async fn submissions_are_validated() {
    let service = Service::new(ServiceConfig::default()).unwrap();
    let docs = vec![
        doc("a", &[PropType::Evaluation, PropType::Evaluation, PropType::Evaluation]),
        doc("b", &[PropType::Fact, PropType::Evaluation]),
    ];
    service.start_run(info(1, 4), Arc::new(docs));
    // heads 0 and 2 of "a" share candidate 1
    service.publish(1, &picks(&[(0, 0), (0, 2), (1, 0), (0, 1)]));
    let base = spawn(service.clone()).await;
    let client = reqwest::Client::new();
    let (_, body) = get(&client, format!("{base}/queue?limit=10"), None).await;
    let all_tasks = tasks(&body);
    let find = |doc: &str, head: usize| all_tasks.iter().find(|t| t.doc_id == doc && t.head == head).unwrap().clone();
    let (h0, h2, fact, h1) = (find("a", 0), find("a", 2), find("b", 0), find("a", 1));

    // partial coverage
    let (status, body) = post(&client, &base, json!({"task_id": h1.task_id, "annotator": "x", "decisions": [{"tail": 0, "decision": "none"}]})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["rule"], "coverage");

    let (status, _) = post(&client, &base, json!({"task_id": h0.task_id, "annotator": "x", "decisions": all(&h0, "support")})).await;
    assert_eq!(status, StatusCode::OK);
    // 1 → 0 exists; 1 → 2 would be a second outgoing link
    let (status, body) = post(&client, &base, json!({"task_id": h2.task_id, "annotator": "x", "decisions": all(&h2, "attack")})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "constraint_violation");
    assert_eq!(body["rule"], rules::SINGLE_OUTGOING);

    let (status, body) = post(&client, &base, json!({"task_id": fact.task_id, "annotator": "x", "decisions": all(&fact, "support")})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["rule"], rules::FACTUAL_HEAD);

    let (status, body) = post(&client, &base, json!({"task_id": h2.task_id, "annotator": "x", "decisions": all(&h2, "none")})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "labeled");
    let (status, body) = post(&client, &base, json!({"task_id": h2.task_id, "annotator": "y", "decisions": all(&h2, "none")})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "duplicate_submission");

    let (status, body) = post(&client, &base, json!({"task_id": "r1-i9-0", "annotator": "x", "decisions": []})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_task");
    let resp = client.post(format!("{base}/labels")).body("{not json").header("content-type", "application/json").send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let (status, _) = post(&client, &base, json!({"task_id": fact.task_id, "annotator": "x", "skip": true})).await;
    assert_eq!(status, StatusCode::OK);
    let (_, body) = post(&client, &base, json!({"task_id": h1.task_id, "annotator": "x", "decisions": all(&h1, "none")})).await;
    assert_eq!(body["batch_complete"], true);

    let (_, body) = get(&client, format!("{base}/progress"), None).await;
    assert_eq!(body["pending"], 0);
    assert_eq!(body["labeled"], 4);
    assert_eq!(body["per_annotator"]["x"], 4);

    // a new batch retires the old task ids
    service.publish(2, &picks(&[(1, 1)]));
    let (status, body) = post(&client, &base, json!({"task_id": h0.task_id, "annotator": "x", "decisions": all(&h0, "none")})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "stale_task");
    let (_, body) = get(&client, format!("{base}/doc/a"), None).await;
    assert_eq!(body["labeled"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn leases_keep_annotators_apart() {
    let service = Service::new(ServiceConfig::default()).unwrap();
    service.start_run(info(1, 2), Arc::new(vec![doc("a", &[PropType::Evaluation; 4])]));
    service.publish(1, &picks(&[(0, 0), (0, 3)]));
    let base = spawn(service).await;
    let client = reqwest::Client::new();
    let (_, body) = get(&client, format!("{base}/queue?limit=1"), Some("ann")).await;
    let mine = tasks(&body).remove(0);
    let (_, body) = get(&client, format!("{base}/queue?limit=5"), Some("bob")).await;
    let theirs = tasks(&body);
    assert_eq!(theirs.len(), 1);
    assert_ne!(theirs[0].task_id, mine.task_id);
    let (status, body) = post(&client, &base, json!({"task_id": mine.task_id, "annotator": "bob", "decisions": all(&mine, "none")})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "leased");
    let (status, _) = post(&client, &base, json!({"task_id": mine.task_id, "annotator": "ann", "decisions": all(&mine, "none")})).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn overlapping_unanimous_annotators_agree_perfectly() {
    let service = Service::new(ServiceConfig { overlap: true, ..Default::default() }).unwrap();
    service.start_run(info(1, 2), Arc::new(vec![doc("a", &[PropType::Evaluation; 5])]));
    service.publish(1, &picks(&[(0, 1), (0, 3)]));
    let base = spawn(service).await;
    let client = reqwest::Client::new();
    for who in ["ann", "bob"] {
        let (_, body) = get(&client, format!("{base}/queue?limit=5"), Some(who)).await;
        let ts = tasks(&body);
        assert_eq!(ts.len(), 2, "overlap shows every task to {who}");
        for t in &ts {
            let decisions: Vec<Value> = t
                .candidates
                .iter()
                .map(|&c| json!({"tail": c, "decision": if c + 1 == t.head { "support" } else { "none" }}))
                .collect();
            let (status, _) = post(&client, &base, json!({"task_id": t.task_id, "annotator": who, "decisions": decisions})).await;
            assert_eq!(status, StatusCode::OK);
        }
        let (_, body) = get(&client, format!("{base}/queue?limit=5"), Some(who)).await;
        assert!(tasks(&body).is_empty());
    }
    let (_, body) = get(&client, format!("{base}/progress"), None).await;
    assert_eq!(body["pending"], 0);
    assert_eq!(body["kappa"].as_f64(), Some(1.0));
}

#[tokio::test]
async fn accepted_labels_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { data_dir: Some(dir.path().to_path_buf()), snapshot_every: 2, ..Default::default() };
    let docs = Arc::new(vec![doc("a", &[PropType::Evaluation; 6])]);
    let before = {
        let service = Service::new(cfg.clone()).unwrap();
        service.start_run(info(1, 3), docs.clone());
        service.publish(1, &picks(&[(0, 0), (0, 2), (0, 4)]));
        let base = spawn(service.clone()).await;
        let client = reqwest::Client::new();
        let (_, body) = get(&client, format!("{base}/queue?limit=5"), None).await;
        for (i, t) in tasks(&body).iter().enumerate() {
            let d = if i == 0 { "attack" } else { "none" };
            let (status, _) = post(&client, &base, json!({"task_id": t.task_id, "annotator": "x", "decisions": all(t, d)})).await;
            assert_eq!(status, StatusCode::OK);
        }
        service.store()
    };
    assert_eq!(before.len(), 5);
    let service = Service::new(cfg).unwrap();
    assert_eq!(service.store(), before);
}

/// Random submissions from several annotators; whatever is accepted must
/// leave a store that validates cleanly.
#[tokio::test]
async fn accepted_store_always_validates() {
    let corpus = generate_synthetic(&SynthConfig { n_docs: 12, props_per_doc: 7, seed: 5, ..Default::default() }).unwrap();
    let docs: Vec<Document> = corpus.documents.iter().map(|d| Document { relations: Vec::new(), ..d.clone() }).collect();
    let service = Service::new(ServiceConfig::default()).unwrap();
    service.start_run(info(3, 84), Arc::new(docs.clone()));
    let sel: Vec<(usize, usize)> = (0..docs.len()).flat_map(|d| (0..7).map(move |p| (d, p))).collect();
    service.publish(1, &picks(&sel));
    let base = spawn(service.clone()).await;
    let client = reqwest::Client::new();
    let mut state = 12345u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut rejected = BTreeSet::new();
    for round in 0..3 {
        let (_, body) = get(&client, format!("{base}/queue?limit=100"), None).await;
        for t in tasks(&body) {
            let decisions: Vec<Value> = t
                .candidates
                .iter()
                .map(|&c| {
                    let d = ["support", "attack", "none", "none"][(next() % 4) as usize];
                    json!({"tail": c, "decision": d})
                })
                .collect();
            let (status, body) = post(&client, &base, json!({"task_id": t.task_id, "annotator": format!("a{round}"), "decisions": decisions})).await;
            if status != StatusCode::OK {
                assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
                rejected.insert(body["rule"].as_str().unwrap().to_string());
            }
        }
    }
    assert!(rejected.contains(rules::SINGLE_OUTGOING));
    let store = service.store();
    let labeled: Vec<Document> = docs
        .iter()
        .map(|d| Document {
            relations: store
                .document_pairs(&d.doc_id)
                .into_iter()
                .filter_map(|(head, tail, dec)| match dec {
                    Decision::Support => Some(Relation { head, tail, label: RelationLabel::Support }),
                    Decision::Attack => Some(Relation { head, tail, label: RelationLabel::Attack }),
                    Decision::None => None,
                })
                .collect(),
            ..d.clone()
        })
        .collect();
    assert!(labeled.iter().any(|d| !d.relations.is_empty()));
    let report = validate(&Corpus::new(labeled, Split::Train), Profile::Ampere);
    assert!(report.errors.is_empty(), "{:?}", report.errors);
}

fn al_setup() -> (Vec<Document>, Vec<Document>, Corpus, AlConfig) {
    let gold = generate_synthetic(&SynthConfig { n_docs: 6, props_per_doc: 5, seed: 8, ..Default::default() }).unwrap();
    let pool: Vec<Document> = gold.documents.iter().map(|d| Document { relations: Vec::new(), ..d.clone() }).collect();
    let mut test = generate_synthetic(&SynthConfig { n_docs: 4, props_per_doc: 5, seed: 9, doc_prefix: "t".into(), ..Default::default() }).unwrap();
    test.split = Split::Test;
    let cfg = AlConfig {
        iterations: 2,
        budget: Some(5),
        window: WindowConfig { max_tokens: 64, ..window(2) },
        train: TrainConfig { epochs: 1, batch_size: 4, warmup_steps: 0, ..Default::default() },
        encoder: EncoderConfig { dim: 8, layers: 1, heads: 1, ffn_mult: 2, dropout_p: 0.0, max_positions: 64, seed: 0 },
        ..Default::default()
    };
    (gold.documents, pool, test, cfg)
}

/// Label every pending task from the gold relations, as a stand-in annotator.
async fn label_from_gold(client: &reqwest::Client, base: &str, gold: &[Document]) -> usize {
    let (status, body) = get(client, format!("{base}/queue?limit=100"), Some("bot")).await;
    if status != StatusCode::OK {
        return 0;
    }
    let ts = tasks(&body);
    for t in &ts {
        let d = gold.iter().find(|d| d.doc_id == t.doc_id).unwrap();
        let decisions: Vec<TailDecision> = t
            .candidates
            .iter()
            .map(|&c| TailDecision {
                tail: c,
                decision: match d.gold_label(t.head, c) {
                    Some(RelationLabel::Support) => Decision::Support,
                    Some(RelationLabel::Attack) => Decision::Attack,
                    None => Decision::None,
                },
            })
            .collect();
        let (status, body) = post(client, base, json!({"task_id": t.task_id, "annotator": "bot", "decisions": decisions})).await;
        assert_eq!(status, StatusCode::OK, "{body}");
    }
    ts.len()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn external_oracle_drives_an_al_run() {
    let (gold, pool, test, cfg) = al_setup();
    let service = Service::new(ServiceConfig::default()).unwrap();
    service.start_run(info(2, 5), Arc::new(pool.clone()));
    let base = spawn(service.clone()).await;
    let client = reqwest::Client::new();

    let svc = service.clone();
    let (p, t, c) = (pool.clone(), test.clone(), cfg.clone());
    let runner = std::thread::spawn(move || {
        let mut oracle = ExternalOracle { service: svc, timeout: Duration::from_secs(60) };
        run_al(&p, &t, &c, None, &mut oracle).unwrap()
    });
    let mut labeled = 0;
    while !runner.is_finished() {
        labeled += label_from_gold(&client, &base, &gold).await;
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let outcome = runner.join().unwrap();
    let AlOutcome::Completed(trace) = outcome else { panic!("suspended") };
    assert_eq!(trace.records.len(), 2);
    assert_eq!(trace.records[1].labeled, 10);
    assert_eq!(labeled, 10);
    let (_, body) = get(&client, format!("{base}/progress"), None).await;
    assert_eq!(body["labeled"], 10);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn oracle_timeout_suspends_and_resumes() {
    let (gold, pool, test, cfg) = al_setup();
    let service = Service::new(ServiceConfig::default()).unwrap();
    service.start_run(info(2, 5), Arc::new(pool.clone()));
    let base = spawn(service.clone()).await;
    let client = reqwest::Client::new();

    let svc = service.clone();
    let (p, t, c) = (pool.clone(), test.clone(), cfg.clone());
    let outcome = tokio::task::spawn_blocking(move || {
        let mut oracle = ExternalOracle { service: svc, timeout: Duration::from_millis(200) };
        run_al(&p, &t, &c, None, &mut oracle).unwrap()
    })
    .await
    .unwrap();
    let AlOutcome::Suspended(state) = outcome else { panic!("expected suspension") };
    assert_eq!(state.iteration, 1);
    let (_, body) = get(&client, format!("{base}/run"), None).await;
    assert_eq!(body["status"], "suspended");

    // the same tasks are still open; label them, then resume
    let svc = service.clone();
    let runner = std::thread::spawn(move || {
        let mut oracle = ExternalOracle { service: svc, timeout: Duration::from_secs(60) };
        resume_al(state, &pool, &test, &cfg, None, &mut oracle).unwrap()
    });
    while !runner.is_finished() {
        label_from_gold(&client, &base, &gold).await;
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let AlOutcome::Completed(trace) = runner.join().unwrap() else { panic!("suspended again") };
    assert_eq!(trace.records.len(), 2);
}
