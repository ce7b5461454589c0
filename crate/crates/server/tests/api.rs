//! The HTTP API driven in-process over the Michael Jordan graph.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use kgdebate::fixtures::{figure_one, Fixture};
use kgdebate::kg::{Action, DatasetSplit, Snapshot, SELF_LOOP_NAME};
use kgdebate::model::Model;
use kgdebate::rng::seeded;
use kgdebate::trainer::{checkpoint_metadata, TrainConfig};
use kgdebate_server::api::{router, ErrorBody};
use kgdebate_server::service::{LoadedModel, Neighbor, ScoreReport, Service};
use kgdebate_server::sessions::{Session, SessionStore};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower::ServiceExt;

fn config() -> TrainConfig {
    TrainConfig::parse(
        "seed = 5\nrounds = 2\nhorizon = 3\nentity_dim = 4\nrelation_dim = 4\nhidden_dim = 6\n\
         judge_hidden1 = 6\njudge_hidden2 = 4\neval_seed = 11\n",
    )
    .unwrap()
}

fn snapshot(fx: &Fixture) -> Snapshot {
    Snapshot {
        vocab: fx.vocab.clone(),
        split: DatasetSplit {
            train: Vec::new(),
            test: Vec::new(),
            graph_facts: fx.facts.clone(),
        },
    }
}

/// A fresh model. Its judge output layer starts at zero, so it scores every
/// debate 0.5 unless `informative` fills the judge with fixed non-zero values.
fn write_checkpoint(dir: &Path, informative: bool) -> PathBuf {
    let fx = figure_one();
    let config = config();
    let mut model = Model::new(&fx.vocab, config.dims, config.debate.hops(), &mut seeded(3)).unwrap();
    if informative {
        let judge = model.judge.clone();
        for (k, id) in [judge.entities, judge.relations, judge.w1, judge.b1, judge.w2, judge.b2, judge.out_w, judge.out_b]
            .into_iter()
            .enumerate()
        {
            for (i, v) in model.store.get_mut(id).values_mut().iter_mut().enumerate() {
                *v = 0.6 * (1.3 * i as f64 + 0.7 * k as f64).sin() + 0.1;
            }
        }
    }
    let path = dir.join(if informative { "informative.ckpt" } else { "zero.ckpt" });
    model.save(&path, &checkpoint_metadata(&config, 0)).unwrap();
    path
}

fn service(checkpoint: Option<&Path>, sessions: SessionStore) -> Arc<Service> {
    let fx = figure_one();
    let model = checkpoint.map(|p| LoadedModel::load(p, &fx.vocab).unwrap());
    Arc::new(Service::new(snapshot(&fx), model, 11, sessions).unwrap())
}

struct Api {
    app: Router,
    _dir: tempfile::TempDir,
}

impl Api {
    fn new(informative: bool) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = write_checkpoint(dir.path(), informative);
        Self {
            app: router(service(Some(&ckpt), SessionStore::in_memory())),
            _dir: dir,
        }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        call(&self.app, method, uri, body).await
    }

    async fn debate(&self, s: &str, p: &str, o: &str) -> Session {
        let (status, body) = self
            .call(Method::POST, "/debate", Some(json!({"subject": s, "predicate": p, "object": o})))
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        serde_json::from_value(body).unwrap()
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

fn error(body: Value) -> ErrorBody {
    serde_json::from_value(body).expect("error bodies are {error}")
}

const MJ: (&str, &str, &str) = ("Michael Jordan", "has_nationality", "USA");

#[tokio::test]
async fn neighbors_are_named_edges_without_the_self_loop() {
    let api = Api::new(false);
    let (status, body) = api.call(Method::GET, "/graph/neighbors/NBA", None).await;
    assert_eq!(status, StatusCode::OK);
    let neighbors: Vec<Neighbor> = serde_json::from_value(body).unwrap();
    let expected = ["Chicago Bulls", "Washington Wizzards"].map(|t| Neighbor {
        relation: "_team_of".into(),
        target: t.into(),
        inverse: true,
    });
    assert_eq!(neighbors, expected);

    let (_, body) = api.call(Method::GET, "/graph/neighbors/Michael%20Jordan", None).await;
    let neighbors: Vec<Neighbor> = serde_json::from_value(body).unwrap();
    assert_eq!(neighbors.len(), 7);
    assert!(neighbors.iter().all(|n| !n.inverse && n.relation != SELF_LOOP_NAME));

    let (status, body) = api.call(Method::GET, "/graph/neighbors/Nobody", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(error(body).error.contains("Nobody"));
}

#[tokio::test]
async fn debates_have_the_configured_shape_and_are_reproducible() {
    let api = Api::new(true);
    let a = api.debate(MJ.0, MJ.1, MJ.2).await;
    assert_eq!(a.transcript.arguments.len(), 4);
    for (i, arg) in a.transcript.arguments.iter().enumerate() {
        assert_eq!(arg.hops.len(), 2);
        assert_eq!(arg.round, 1 + i / 2);
    }
    assert_eq!(a.query.subject, MJ.0);
    assert_eq!(a.judge_score, a.transcript.judge_score);
    assert_eq!(a.score_history, [a.judge_score.unwrap()]);
    assert_eq!(a.rollout_scores, [a.judge_score.unwrap()]);
    let score = a.judge_score.unwrap();
    assert!(score > 0.0 && score < 1.0 && score != 0.5, "{score}");

    let b = api.debate(MJ.0, MJ.1, MJ.2).await;
    assert_ne!(a.id, b.id);
    assert_eq!(a.transcript, b.transcript, "same eval seed, same debate");

    let (status, body) = api
        .call(Method::POST, "/debate", Some(json!({"subject": MJ.0, "predicate": MJ.1, "object": MJ.2, "rollouts": 3})))
        .await;
    assert_eq!(status, StatusCode::OK);
    let c: Session = serde_json::from_value(body).unwrap();
    assert_eq!(c.rollout_scores.len(), 3);
    assert_eq!(c.rollout_scores[0], score);
    assert_eq!(c.transcript, a.transcript);
}

#[tokio::test]
async fn bad_debate_requests_are_rejected() {
    let api = Api::new(false);
    for (body, status, needle) in [
        (json!({"subject": "Nobody", "predicate": MJ.1, "object": MJ.2}), StatusCode::NOT_FOUND, "Nobody"),
        (json!({"subject": MJ.0, "predicate": "likes", "object": MJ.2}), StatusCode::NOT_FOUND, "likes"),
        (json!({"subject": MJ.0, "predicate": MJ.1, "object": MJ.2, "rollouts": 0}), StatusCode::BAD_REQUEST, "rollouts"),
    ] {
        let (got, resp) = api.call(Method::POST, "/debate", Some(body)).await;
        assert_eq!(got, status);
        assert!(error(resp).error.contains(needle));
    }
    let (status, _) = api
        .call(Method::POST, "/debate", Some(json!({"subject": MJ.0, "predicate": MJ.1, "object": MJ.2, "extra": 1})))
        .await;
    assert!(status.is_client_error());

    let no_model = router(service(None, SessionStore::in_memory()));
    let body = json!({"subject": MJ.0, "predicate": MJ.1, "object": MJ.2});
    let (status, resp) = call(&no_model, Method::POST, "/debate", Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(error(resp).error.contains("checkpoint"));
    let (status, _) = call(&no_model, Method::GET, "/graph/neighbors/NBA", None).await;
    assert_eq!(status, StatusCode::OK, "browsing works without a model");
}

#[tokio::test]
async fn human_arguments_are_validated_padded_and_rescored() {
    let api = Api::new(true);
    let s = api.debate(MJ.0, MJ.1, MJ.2).await;
    let uri = format!("/session/{}/argument", s.id);

    let broken = json!({"hops": [
        {"relation": "plays_for", "entity": "Chicago Bulls"},
        {"relation": "team_of", "entity": "MLB"},
    ]});
    let (status, body) = api.call(Method::POST, &uri, Some(broken)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let err = error(body);
    assert_eq!(err.hop, Some(1));
    assert!(err.error.contains("MLB"));

    let unknown = json!({"hops": [{"relation": "plays_for", "entity": "Nowhere"}]});
    let (status, body) = api.call(Method::POST, &uri, Some(unknown)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error(body).hop, Some(0));

    let hop = json!({"relation": "plays_for", "entity": "Chicago Bulls"});
    let (status, body) = api.call(Method::POST, &uri, Some(json!({"hops": [hop, hop, hop]}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    let (status, body) = api
        .call(Method::POST, &uri, Some(json!({"hops": [{"relation": "plays_for", "entity": "Chicago Bulls"}]})))
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let after: Session = serde_json::from_value(body).unwrap();
    let human = &after.human_arguments[0];
    assert_eq!(human.hops.len(), 2);
    assert_eq!(human.hops[1].relation, SELF_LOOP_NAME);
    assert_eq!(human.hops[1].entity, "Chicago Bulls");
    assert_eq!(after.score_history.len(), 2);
    assert_eq!(after.score_history[0], s.judge_score.unwrap());
    assert_eq!(after.transcript.judge_score, s.transcript.judge_score, "the agents' debate keeps its score");

    // The new score is the judge over all five arguments, built here from ids.
    let fx = figure_one();
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = Model::load(write_checkpoint(dir.path(), true)).unwrap();
    let q = fx.triple(MJ.0, MJ.1, MJ.2);
    let mut args: Vec<Vec<Action>> = s
        .transcript
        .arguments
        .iter()
        .map(|a| a.hops.iter().map(|h| Action::new(fx.relation(&h.relation), fx.entity(&h.entity))).collect())
        .collect();
    let bulls = fx.entity("Chicago Bulls");
    args.push(vec![Action::new(fx.relation("plays_for"), bulls), Action::self_loop(bulls)]);
    let expected = model.judge().score_debate(&q, &args).unwrap();
    assert_eq!(after.judge_score, Some(expected));
    assert_ne!(expected, s.judge_score.unwrap());

    let (status, body) = api.call(Method::GET, &format!("/session/{}/score", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let report: ScoreReport = serde_json::from_value(body).unwrap();
    assert_eq!(report.judge_score, expected);
    assert_eq!(report.score_history, after.score_history);

    let (status, _) = api.call(Method::POST, "/session/missing/argument", Some(json!({"hops": []}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn zero_judge_stays_undecided_after_a_self_loop_argument() {
    let api = Api::new(false);
    let s = api.debate(MJ.0, MJ.1, MJ.2).await;
    assert_eq!(s.judge_score, Some(0.5));
    let stay = json!({"relation": SELF_LOOP_NAME, "entity": MJ.0});
    let (status, body) = api
        .call(Method::POST, &format!("/session/{}/argument", s.id), Some(json!({"hops": [stay, stay]})))
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let s: Session = serde_json::from_value(body).unwrap();
    assert_eq!(s.score_history, [0.5, 0.5]);
}

#[tokio::test]
async fn blind_views_hide_scores_until_the_verdict() {
    let api = Api::new(true);
    let (status, body) = api
        .call(Method::POST, "/debate?blind=true", Some(json!({"subject": MJ.0, "predicate": MJ.1, "object": MJ.2})))
        .await;
    assert_eq!(status, StatusCode::OK);
    let blind: Session = serde_json::from_value(body).unwrap();
    assert_eq!(blind.judge_score, None);
    assert_eq!(blind.transcript.judge_score, None);
    assert!(blind.rollout_scores.is_empty() && blind.score_history.is_empty());
    assert_eq!(blind.transcript.arguments.len(), 4);

    let uri = format!("/session/{}", blind.id);
    let (_, body) = api.call(Method::GET, &format!("{uri}?blind=true"), None).await;
    assert_eq!(body["judge_score"], Value::Null);
    let (_, body) = api.call(Method::GET, &uri, None).await;
    assert!(body["judge_score"].is_f64());

    let (status, _) = api.call(Method::POST, &format!("{uri}/verdict"), Some(json!({"verdict": "true"}))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, body) = api.call(Method::GET, &format!("{uri}?blind=true"), None).await;
    assert!(body["judge_score"].is_f64(), "scores are revealed once the person has decided");
}

#[tokio::test]
async fn verdicts_overwrite_and_sessions_are_listed_in_order() {
    let api = Api::new(false);
    let a = api.debate(MJ.0, MJ.1, MJ.2).await;
    let b = api.debate("Michael Jordan", "plays_for", "NBA").await;
    let uri = format!("/session/{}/verdict", a.id);
    for verdict in ["true", "abstain", "false"] {
        let (status, body) = api.call(Method::POST, &uri, Some(json!({ "verdict": verdict }))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["human_verdict"], verdict);
        assert_eq!(body["transcript"]["human_verdict"], verdict);
    }
    let (status, _) = api.call(Method::POST, &uri, Some(json!({"verdict": "maybe"}))).await;
    assert!(status.is_client_error());
    let (status, _) = api.call(Method::POST, "/session/missing/verdict", Some(json!({"verdict": "true"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = api.call(Method::GET, "/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    let all: Vec<Session> = serde_json::from_value(body).unwrap();
    assert_eq!(all.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), [a.id.as_str(), b.id.as_str()]);
    assert_eq!(all[0].human_verdict, Some(kgdebate::env::Verdict::False));
    let (_, body) = api.call(Method::GET, "/sessions?blind=true", None).await;
    assert!(body[0]["judge_score"].is_f64() && body[1]["judge_score"].is_null());
}

#[tokio::test]
async fn sessions_survive_a_restart_and_the_checkpoint_is_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path(), true);
    let digest = || Sha256::digest(std::fs::read(&ckpt).unwrap());
    let before = digest();
    let log = dir.path().join("sessions.jsonl");

    let app = router(service(Some(&ckpt), SessionStore::open(&log).unwrap()));
    let (_, body) = call(&app, Method::POST, "/debate", Some(json!({"subject": MJ.0, "predicate": MJ.1, "object": MJ.2}))).await;
    let id = body["id"].as_str().unwrap().to_owned();
    let hops = json!({"hops": [{"relation": "plays_for", "entity": "Chicago Bulls"}, {"relation": "team_of", "entity": "NBA"}]});
    let (status, _) = call(&app, Method::POST, &format!("/session/{id}/argument"), Some(hops)).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, Method::POST, &format!("/session/{id}/verdict"), Some(json!({"verdict": "true"}))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, live) = call(&app, Method::GET, &format!("/session/{id}"), None).await;
    drop(app);

    let restarted = router(service(Some(&ckpt), SessionStore::open(&log).unwrap()));
    let (status, reloaded) = call(&restarted, Method::GET, &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reloaded, live);
    let (_, all) = call(&restarted, Method::GET, "/sessions", None).await;
    assert_eq!(all.as_array().unwrap().len(), 1);
    assert_eq!(digest(), before, "serving never writes the checkpoint");
}

#[tokio::test]
async fn cross_origin_requests_are_allowed() {
    let api = Api::new(false);
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/debate")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = api.app.clone().oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert!(resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}
