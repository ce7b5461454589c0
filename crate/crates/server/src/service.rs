//! Everything the HTTP layer does, without the HTTP.

use std::sync::Mutex;

use anyhow::Context;
use kgdebate::env::{render_argument, DebateConfig, HopRecord, Verdict};
use kgdebate::kg::{Action, GraphIndex, Snapshot, Triple, Vocab, SELF_LOOP};
use kgdebate::model::Model;
use kgdebate::trainer::{debate_query, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::sessions::{HumanArgument, Session, SessionStore};

#[derive(Debug)]
pub enum ServiceError {
    /// Unknown entity, relation or session.
    NotFound(String),
    /// The request needs a model and none is loaded.
    NoModel,
    /// A submitted path is not walkable.
    InvalidPath { hop: usize, message: String },
    BadRequest(String),
    Internal(anyhow::Error),
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NotFound(what) => write!(f, "not found: {what}"),
            Self::NoModel => f.write_str("no checkpoint loaded"),
            Self::InvalidPath { hop, message } => write!(f, "hop {hop}: {message}"),
            Self::BadRequest(m) => f.write_str(m),
            Self::Internal(e) => write!(f, "internal error: {e:#}"),
        }
    }
}

impl From<kgdebate::Error> for ServiceError {
    fn from(e: kgdebate::Error) -> Self {
        Self::Internal(e.into())
    }
}

impl From<anyhow::Error> for ServiceError {
    fn from(e: anyhow::Error) -> Self {
        Self::Internal(e)
    }
}

pub type ServiceResult<T> = Result<T, ServiceError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Neighbor {
    pub relation: String,
    pub target: String,
    pub inverse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebateRequest {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    #[serde(default)]
    pub rollouts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreReport {
    pub judge_score: f64,
    pub score_history: Vec<f64>,
}

/// A trained model and the debate settings it was trained with.
pub struct LoadedModel {
    pub model: Model,
    pub debate: DebateConfig,
    pub config: TrainConfig,
}

impl LoadedModel {
    pub fn load(path: &std::path::Path, vocab: &Vocab) -> anyhow::Result<Self> {
        let (model, metadata) = Model::load(path).with_context(|| format!("loading {}", path.display()))?;
        let config = metadata
            .get("config")
            .map(|text| TrainConfig::parse(text))
            .transpose()?
            .unwrap_or_default();
        let rows = model.store.get(model.judge.entities).rows();
        anyhow::ensure!(
            rows == vocab.num_entities(),
            "checkpoint has {rows} entities but the graph has {}",
            vocab.num_entities()
        );
        anyhow::ensure!(
            model.hops() == config.debate.hops(),
            "checkpoint scores {}-hop arguments but its config asks for {}",
            model.hops(),
            config.debate.hops()
        );
        Ok(Self {
            model,
            debate: config.debate,
            config,
        })
    }
}

pub struct Service {
    pub vocab: Vocab,
    pub index: GraphIndex,
    pub model: Option<LoadedModel>,
    pub eval_seed: u64,
    sessions: Mutex<SessionStore>,
}

const MAX_ROLLOUTS: usize = 64;

impl Service {
    pub fn new(snapshot: Snapshot, model: Option<LoadedModel>, eval_seed: u64, sessions: SessionStore) -> anyhow::Result<Self> {
        let index = snapshot.index()?;
        Ok(Self {
            vocab: snapshot.vocab,
            index,
            model,
            eval_seed,
            sessions: Mutex::new(sessions),
        })
    }

    fn store(&self) -> std::sync::MutexGuard<'_, SessionStore> {
        // A panic while holding the lock cannot leave a half-written
        // session in memory, so a poisoned lock is still usable.
        self.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn entity(&self, name: &str) -> ServiceResult<usize> {
        self.vocab
            .entity_id(name)
            .ok_or_else(|| ServiceError::NotFound(format!("entity {name:?}")))
    }

    fn relation(&self, name: &str) -> ServiceResult<usize> {
        self.vocab
            .relation_id(name)
            .ok_or_else(|| ServiceError::NotFound(format!("relation {name:?}")))
    }

    fn loaded(&self) -> ServiceResult<&LoadedModel> {
        self.model.as_ref().ok_or(ServiceError::NoModel)
    }

    pub fn neighbors(&self, entity: &str) -> ServiceResult<Vec<Neighbor>> {
        let e = self.entity(entity)?;
        Ok(self
            .index
            .actions(e)
            .iter()
            .filter(|a| a.relation != SELF_LOOP)
            .map(|a| Neighbor {
                relation: self.vocab.relation_name(a.relation).to_owned(),
                target: self.vocab.entity_name(a.target).to_owned(),
                inverse: self.vocab.is_inverse(a.relation),
            })
            .collect())
    }

    /// Resolves a named path from the query subject, padding it with self
    /// loops to `hops` steps.
    pub fn resolve_path(&self, start: usize, path: &[HopRecord], hops: usize) -> ServiceResult<Vec<Action>> {
        if path.len() > hops {
            return Err(ServiceError::InvalidPath {
                hop: hops,
                message: format!("arguments have at most {hops} hops, got {}", path.len()),
            });
        }
        let mut current = start;
        let mut steps = Vec::with_capacity(hops);
        for (i, hop) in path.iter().enumerate() {
            let invalid = |message: String| ServiceError::InvalidPath { hop: i, message };
            let relation = self
                .vocab
                .relation_id(&hop.relation)
                .ok_or_else(|| invalid(format!("unknown relation {:?}", hop.relation)))?;
            let target = self
                .vocab
                .entity_id(&hop.entity)
                .ok_or_else(|| invalid(format!("unknown entity {:?}", hop.entity)))?;
            let action = Action::new(relation, target);
            if !self.index.has_action(current, action) {
                return Err(invalid(format!(
                    "{} has no edge {} to {}",
                    self.vocab.entity_name(current),
                    hop.relation,
                    hop.entity
                )));
            }
            steps.push(action);
            current = target;
        }
        steps.resize(hops, Action::self_loop(current));
        Ok(steps)
    }

    fn query_triple(&self, subject: &str, predicate: &str, object: &str) -> ServiceResult<Triple> {
        Ok(Triple::new(self.entity(subject)?, self.relation(predicate)?, self.entity(object)?))
    }

    /// Every argument of a session, agents' first, as id paths.
    fn session_arguments(&self, session: &Session, hops: usize) -> ServiceResult<(Triple, Vec<Vec<Action>>)> {
        let q = &session.query;
        let triple = self.query_triple(&q.subject, &q.predicate, &q.object)?;
        let mut args = Vec::new();
        for a in &session.transcript.arguments {
            args.push(self.resolve_path(triple.s, &a.hops, hops)?);
        }
        for a in &session.human_arguments {
            args.push(self.resolve_path(triple.s, &a.hops, hops)?);
        }
        Ok((triple, args))
    }

    pub fn debate(&self, request: &DebateRequest) -> ServiceResult<Session> {
        let triple = self.query_triple(&request.subject, &request.predicate, &request.object)?;
        let loaded = self.loaded()?;
        let rollouts = request.rollouts.unwrap_or(1);
        if !(1..=MAX_ROLLOUTS).contains(&rollouts) {
            return Err(ServiceError::BadRequest(format!("rollouts must lie in 1..={MAX_ROLLOUTS}")));
        }
        let mut transcripts = Vec::with_capacity(rollouts);
        for k in 0..rollouts {
            transcripts.push(debate_query(&loaded.model, &self.index, &loaded.debate, self.eval_seed, triple, k as u64)?);
        }
        let rollout_scores: Vec<f64> = transcripts.iter().filter_map(|t| t.judge_score).collect();
        let record = transcripts.swap_remove(0).to_record(&self.vocab);
        let score = rollout_scores[0];
        let session = Session {
            id: uuid::Uuid::new_v4().to_string(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            query: record.query.clone(),
            transcript: record,
            rollout_scores,
            judge_score: Some(score),
            score_history: vec![score],
            human_verdict: None,
            human_arguments: Vec::new(),
        };
        self.store().put(session.clone())?;
        Ok(session)
    }

    pub fn session(&self, id: &str) -> ServiceResult<Session> {
        self.store()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id:?}")))
    }

    pub fn sessions(&self) -> Vec<Session> {
        self.store().all().cloned().collect()
    }

    pub fn score(&self, id: &str) -> ServiceResult<ScoreReport> {
        let s = self.session(id)?;
        let judge_score = s
            .judge_score
            .ok_or_else(|| ServiceError::Internal(anyhow::anyhow!("session {id} has no score")))?;
        Ok(ScoreReport {
            judge_score,
            score_history: s.score_history,
        })
    }

    pub fn add_argument(&self, id: &str, path: &[HopRecord]) -> ServiceResult<Session> {
        let loaded = self.loaded()?;
        let hops = loaded.debate.hops();
        let mut store = self.store();
        let mut session = store
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id:?}")))?;
        let (triple, mut args) = self.session_arguments(&session, hops)?;
        let steps = self.resolve_path(triple.s, path, hops)?;
        let score = loaded.model.judge().score_debate(&triple, &{
            args.push(steps.clone());
            args
        })?;
        session.human_arguments.push(HumanArgument {
            hops: HopRecord::from_steps(&self.vocab, &steps),
            rendered: render_argument(&self.vocab, triple.s, &steps),
        });
        session.judge_score = Some(score);
        session.score_history.push(score);
        store.put(session.clone())?;
        Ok(session)
    }

    pub fn set_verdict(&self, id: &str, verdict: Verdict) -> ServiceResult<Session> {
        let mut store = self.store();
        let mut session = store
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id:?}")))?;
        session.human_verdict = Some(verdict);
        session.transcript.human_verdict = Some(verdict);
        store.put(session.clone())?;
        Ok(session)
    }
}
