//! Debate sessions and their append-only JSON-lines store.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kgdebate::env::{HopRecord, QueryRecord, TranscriptRecord, Verdict};
use serde::{Deserialize, Serialize};

/// A path added by a person rather than an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanArgument {
    pub hops: Vec<HopRecord>,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    pub id: String,
    pub created_at: String,
    pub query: QueryRecord,
    /// The debate the agents produced, scored on its own.
    pub transcript: TranscriptRecord,
    /// Scores of every debate run for the request, the shown one first.
    pub rollout_scores: Vec<f64>,
    /// Current score over agent and human arguments together.
    pub judge_score: Option<f64>,
    /// `judge_score` after creation and after each added argument.
    pub score_history: Vec<f64>,
    pub human_verdict: Option<Verdict>,
    pub human_arguments: Vec<HumanArgument>,
}

impl Session {
    /// Copy with every machine score removed, for clients judging blind.
    pub fn blinded(&self) -> Session {
        let mut s = self.clone();
        s.transcript.judge_score = None;
        s.rollout_scores.clear();
        s.judge_score = None;
        s.score_history.clear();
        s
    }

    /// Blinds the session if requested and no verdict has been given yet.
    pub fn view(&self, blind: bool) -> Session {
        if blind && self.human_verdict.is_none() {
            self.blinded()
        } else {
            self.clone()
        }
    }
}

/// Sessions in creation order, backed by a JSON-lines file where the last
/// record for an id wins.
#[derive(Debug)]
pub struct SessionStore {
    path: Option<PathBuf>,
    order: Vec<String>,
    sessions: HashMap<String, Session>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            order: Vec::new(),
            sessions: HashMap::new(),
        }
    }

    /// Opens (or creates on first write) the store at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self {
            path: Some(path.clone()),
            ..Self::in_memory()
        };
        if !path.exists() {
            return Ok(store);
        }
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let session: Session = serde_json::from_str(&line)
                .with_context(|| format!("{}:{}: bad session record", path.display(), i + 1))?;
            store.remember(session);
        }
        Ok(store)
    }

    fn remember(&mut self, session: Session) {
        if !self.sessions.contains_key(&session.id) {
            self.order.push(session.id.clone());
        }
        self.sessions.insert(session.id.clone(), session);
    }

    pub fn get(&self, id: &str) -> Option<&Session> {
        self.sessions.get(id)
    }

    pub fn all(&self) -> impl Iterator<Item = &Session> {
        self.order.iter().map(|id| &self.sessions[id])
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Appends the session to the file, then makes it visible.
    pub fn put(&mut self, session: Session) -> Result<()> {
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            let mut line = serde_json::to_string(&session)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.remember(session);
        Ok(())
    }
}
